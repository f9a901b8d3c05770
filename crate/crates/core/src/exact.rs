//! Exact rational counterparts of the grid operations, used where rounding
//! must not blur a yes/no answer.

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};

use crate::error::{Error, Result};

pub type Q = BigRational;

pub fn q(num: i64, den: i64) -> Q {
    BigRational::new(BigInt::from(num), BigInt::from(den))
}

pub fn to_f64(x: &Q) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

#[derive(Clone, Debug)]
pub struct ExactGrid {
    pub masses: Vec<Q>,
    pub divisible: Vec<bool>,
    pub coarse_map: Vec<usize>,
}

impl ExactGrid {
    pub fn new(masses: Vec<Q>, divisible: Vec<bool>, coarse_map: Vec<usize>) -> Result<Self> {
        if masses.len() != divisible.len() || masses.len() != coarse_map.len() {
            return Err(Error::invalid("exact grid fields have different lengths"));
        }
        if masses.iter().any(|m| m < &Q::zero()) {
            return Err(Error::invalid("negative mass"));
        }
        Ok(ExactGrid {
            masses,
            divisible,
            coarse_map,
        })
    }

    pub fn n_coarse(&self) -> usize {
        self.coarse_map.iter().max().map_or(0, |m| m + 1)
    }

    pub fn conditional_expectation(&self, f: &[Q]) -> Result<Vec<Q>> {
        if f.len() != self.masses.len() {
            return Err(Error::invalid("function length differs from the grid"));
        }
        let n_coarse = self.n_coarse();
        let mut num = vec![Q::zero(); n_coarse];
        let mut den = vec![Q::zero(); n_coarse];
        for (k, v) in f.iter().enumerate() {
            let e = self.coarse_map[k];
            num[e] += &self.masses[k] * v;
            den[e] += &self.masses[k];
        }
        let avg: Vec<Q> = num
            .into_iter()
            .zip(den)
            .map(|(n, d)| if d.is_zero() { Q::zero() } else { n / d })
            .collect();
        Ok(self.coarse_map.iter().map(|&e| avg[e].clone()).collect())
    }

    /// Per-cell fraction of each cell placed in `D0`, for `D` given by retained
    /// masses. Mirrors [`crate::measure::half_split`].
    pub fn half_split(&self, retained: &[Q]) -> Result<Vec<Q>> {
        if retained.len() != self.masses.len() {
            return Err(Error::invalid("retained masses do not match the grid"));
        }
        let two = q(2, 1);
        retained
            .iter()
            .enumerate()
            .map(|(k, r)| {
                if r.is_zero() {
                    Ok(Q::zero())
                } else if !self.divisible[k] {
                    Err(Error::AtomicMass { cell: k })
                } else {
                    Ok(r / (&two * &self.masses[k]))
                }
            })
            .collect()
    }

    /// Mass of a selection of per-cell fractions, summed per coarse cell.
    pub fn coarse_masses(&self, fractions: &[Q]) -> Vec<Q> {
        let mut out = vec![Q::zero(); self.n_coarse()];
        for (k, f) in fractions.iter().enumerate() {
            out[self.coarse_map[k]] += &self.masses[k] * f;
        }
        out
    }
}

/// Result of an exhaustive search over sign patterns.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PatternSearch {
    pub matching: Option<Vec<i8>>,
    pub patterns: u64,
}

/// Searches all `±1` assignments `g` over `n` equally weighted cells for one
/// with `Σ_k g_k ρ_j,k = target_j` for every moment row, in exact arithmetic.
pub fn sign_pattern_search(moments: &[Vec<Q>], target: &[Q]) -> Result<PatternSearch> {
    let n = moments.first().map_or(0, Vec::len);
    if n > 30 {
        return Err(Error::invalid("sign pattern search is limited to 30 cells"));
    }
    if moments.len() != target.len() || moments.iter().any(|m| m.len() != n) {
        return Err(Error::invalid("moment rows have inconsistent lengths"));
    }
    // exact: each row and its target scaled to integers by a common denominator
    let rows: Vec<(Vec<BigInt>, BigInt)> = moments
        .iter()
        .zip(target)
        .map(|(row, t)| {
            let lcm = row
                .iter()
                .chain(std::iter::once(t))
                .fold(BigInt::one(), |acc, v| acc.lcm(v.denom()));
            let scale = |v: &Q| (v * Q::from_integer(lcm.clone())).to_integer();
            (row.iter().map(scale).collect(), scale(t))
        })
        .collect();
    let small: Option<Vec<(Vec<i64>, i128)>> = rows
        .iter()
        .map(|(r, t)| {
            let r: Option<Vec<i64>> = r.iter().map(|v| v.to_i64()).collect();
            Some((r?, t.to_i64()? as i128))
        })
        .collect();
    let total = 1u64 << n;
    for mask in 0..total {
        let ok = match &small {
            Some(rows) => rows.iter().all(|(row, t)| {
                let s: i128 = row
                    .iter()
                    .enumerate()
                    .map(|(k, &r)| if mask >> k & 1 == 1 { r as i128 } else { -(r as i128) })
                    .sum();
                s == *t
            }),
            None => rows.iter().all(|(row, t)| {
                let mut s = BigInt::zero();
                for (k, r) in row.iter().enumerate() {
                    if mask >> k & 1 == 1 {
                        s += r;
                    } else {
                        s -= r;
                    }
                }
                &s == t
            }),
        };
        if ok {
            let g = (0..n).map(|k| if mask >> k & 1 == 1 { 1 } else { -1 }).collect();
            return Ok(PatternSearch {
                matching: Some(g),
                patterns: mask + 1,
            });
        }
    }
    Ok(PatternSearch {
        matching: None,
        patterns: total,
    })
}

/// The `2^k` Walsh functions on `2^k` cells, as `±1` rows; row 0 is constant.
pub fn walsh_system(k: u32) -> Vec<Vec<i8>> {
    let n = 1usize << k;
    (0..n)
        .map(|row| {
            (0..n)
                .map(|col| if (row & col).count_ones() % 2 == 0 { 1 } else { -1 })
                .collect()
        })
        .collect()
}

/// Walsh moments as used against a `±1` selection: row 0 is `ρ_0 ≡ 1`, the
/// other rows are shifted to `ρ_n = ϱ_n + 1 ≥ 0`.
pub fn shifted_walsh_moments(k: u32) -> Vec<Vec<Q>> {
    walsh_system(k)
        .into_iter()
        .enumerate()
        .map(|(i, row)| {
            row.into_iter()
                .map(|w| if i == 0 { Q::one() } else { q(w as i64 + 1, 1) })
                .collect()
        })
        .collect()
}
