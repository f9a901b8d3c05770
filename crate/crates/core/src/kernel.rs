//! Dense transition-kernel matrices and their structural checks.
//!
//! Rows are target divisible cells, columns are `(source state, profile)`
//! pairs. A coarser kernel has identical rows inside each coarse cell; a
//! kernel decomposed with `J` components has every coarse row-block of rank
//! at most `J`.

use std::fmt::Write as _;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::game::StochasticGameSpec;
use crate::measure::{Cell, GridSpace};

pub const COARSER_TOL: f64 = 1e-10;
pub const DEFAULT_RANK_THRESHOLD: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct KernelMatrix {
    /// Cell index (into `space`) of every row.
    pub row_cells: Vec<usize>,
    /// `(state, profile)` of every column.
    pub columns: Vec<(usize, usize)>,
    /// Row-major entries.
    pub data: Vec<f64>,
    pub space: GridSpace,
}

impl KernelMatrix {
    pub fn new(row_cells: Vec<usize>, columns: Vec<(usize, usize)>, data: Vec<f64>, space: GridSpace) -> Result<Self> {
        if data.len() != row_cells.len() * columns.len() {
            return Err(Error::invalid("kernel matrix data does not match its dimensions"));
        }
        if row_cells.iter().any(|&k| k >= space.n_cells()) {
            return Err(Error::invalid("kernel row refers to a cell outside the grid"));
        }
        if data.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid("kernel entries must be finite and nonnegative"));
        }
        Ok(KernelMatrix {
            row_cells,
            columns,
            data,
            space,
        })
    }

    /// Densities of the decomposed kernel on the divisible cells, over every
    /// state and profile.
    pub fn from_spec(spec: &StochasticGameSpec) -> Self {
        Self::from_spec_columns(spec, |_, _| true)
    }

    /// As [`KernelMatrix::from_spec`], keeping only the columns accepted by
    /// `keep(state, profile)`.
    pub fn from_spec_columns(spec: &StochasticGameSpec, keep: impl Fn(usize, usize) -> bool) -> Self {
        let row_cells = spec.space.divisible_cells();
        let columns: Vec<(usize, usize)> = (0..spec.n_states())
            .flat_map(|s| (0..spec.profiles(s).count()).map(move |x| (s, x)))
            .filter(|&(s, x)| keep(s, x))
            .collect();
        let mut data = Vec::with_capacity(row_cells.len() * columns.len());
        for &k in &row_cells {
            for &(s, x) in &columns {
                data.push(spec.density(s, x, k));
            }
        }
        KernelMatrix {
            row_cells,
            columns,
            data,
            space: spec.space.clone(),
        }
    }

    pub fn n_rows(&self) -> usize {
        self.row_cells.len()
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let n = self.n_cols();
        &self.data[r * n..(r + 1) * n]
    }

    /// Row indices grouped by coarse cell, in coarse-cell order.
    pub fn blocks(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.space.n_coarse()];
        for (r, &k) in self.row_cells.iter().enumerate() {
            out[self.space.coarse_of(k)].push(r);
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let n = self.space.n_cells();
        let _ = writeln!(out, "{} {}", n, self.n_cols());
        let join = |it: &mut dyn Iterator<Item = String>| it.collect::<Vec<_>>().join(" ");
        let _ = writeln!(
            out,
            "{}",
            join(&mut self.space.coarse_map().iter().map(|e| e.to_string()))
        );
        let _ = writeln!(
            out,
            "{}",
            join(&mut (0..n).map(|k| if self.space.is_divisible(k) { "1" } else { "0" }.to_string()))
        );
        let _ = writeln!(
            out,
            "{}",
            join(&mut (0..n).map(|k| format!("{:.17e}", self.space.mass(k))))
        );
        let _ = writeln!(out, "{}", join(&mut self.row_cells.iter().map(|k| k.to_string())));
        for r in 0..self.n_rows() {
            let _ = writeln!(out, "{}", join(&mut self.row(r).iter().map(|v| format!("{v:.17e}"))));
        }
        out
    }

    /// Parses the text format written by [`KernelMatrix::to_text`]:
    /// `cells cols`, the coarse map, divisibility flags, cell masses, the row
    /// cells, then one line per row. Columns are numbered `(0, c)`.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'));
        let mut next = |what: &str| {
            lines
                .next()
                .ok_or_else(|| Error::invalid(format!("kernel file ends before the {what} line")))
        };
        fn nums<T: std::str::FromStr>(line: usize, s: &str) -> Result<Vec<T>> {
            s.split_whitespace()
                .map(|t| {
                    t.parse::<T>()
                        .map_err(|_| Error::invalid(format!("line {}: cannot parse {t:?}", line + 1)))
                })
                .collect()
        }
        let (ln, header) = next("header")?;
        let dims: Vec<usize> = nums(ln, header)?;
        let [n, cols] = dims[..] else {
            return Err(Error::invalid(format!("line {}: expected `cells columns`", ln + 1)));
        };
        let (ln, l) = next("coarse map")?;
        let coarse: Vec<usize> = nums(ln, l)?;
        let (ln, l) = next("divisibility")?;
        let flags: Vec<u8> = nums(ln, l)?;
        let (ln, l) = next("mass")?;
        let masses: Vec<f64> = nums(ln, l)?;
        if coarse.len() != n || flags.len() != n || masses.len() != n {
            return Err(Error::invalid(format!("grid lines must have {n} entries")));
        }
        let cells = masses
            .iter()
            .zip(&flags)
            .map(|(&m, &f)| if f == 1 { Cell::divisible(m) } else { Cell::atomic(m) })
            .collect();
        let space = GridSpace::new(cells, coarse)?;
        let (ln, l) = next("row cells")?;
        let row_cells: Vec<usize> = nums(ln, l)?;
        let mut data = Vec::with_capacity(row_cells.len() * cols);
        for _ in 0..row_cells.len() {
            let (ln, l) = next("matrix row")?;
            let row: Vec<f64> = nums(ln, l)?;
            if row.len() != cols {
                return Err(Error::invalid(format!("line {}: expected {cols} entries", ln + 1)));
            }
            data.extend(row);
        }
        KernelMatrix::new(row_cells, (0..cols).map(|c| (0, c)).collect(), data, space)
    }
}

/// True when rows agree inside every coarse cell (to [`COARSER_TOL`]) and
/// every row cell is divisible.
pub fn check_coarser(m: &KernelMatrix) -> bool {
    if m.row_cells.iter().any(|&k| !m.space.is_divisible(k)) {
        return false;
    }
    m.blocks().iter().all(|block| {
        let Some(&first) = block.first() else {
            return true;
        };
        let base = m.row(first);
        block[1..]
            .iter()
            .all(|&r| m.row(r).iter().zip(base).all(|(a, b)| (a - b).abs() <= COARSER_TOL))
    })
}

/// Numerical rank of every coarse row-block: singular values above
/// `threshold` count. Coarse cells without rows report 0.
pub fn block_rank_profile(m: &KernelMatrix, threshold: f64) -> Result<Vec<usize>> {
    if !(threshold > 0.0) {
        return Err(Error::invalid("rank threshold must be positive"));
    }
    Ok(m.blocks()
        .iter()
        .map(|block| {
            if block.is_empty() || m.n_cols() == 0 {
                return 0;
            }
            let sub = DMatrix::from_fn(block.len(), m.n_cols(), |r, c| m.row(block[r])[c]);
            sub.singular_values().iter().filter(|&&s| s > threshold).count()
        })
        .collect())
}
