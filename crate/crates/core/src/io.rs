//! Game-spec files (JSON), result and certificate files, and the spec hash
//! that ties a result to the game it was computed from.
//!
//! Result files write every real number as a decimal string with 17
//! significant digits, which reads back to the same `f64`.

use std::fmt;
use std::path::Path;

use serde::de::{self, Deserializer};
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::game::{validate_game, KernelDecomposition, StochasticGameSpec, ValidationReport, Violation};
use crate::measure::{Cell, GridSpace};
use crate::solver::{Diagnostics, EquilibriumResult, StrategyPiece};
use crate::verify::{Certificate, SimulationReport};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GameSpecFile {
    pub version: u32,
    pub players: usize,
    pub discounts: Vec<f64>,
    pub payoff_bound: f64,
    pub grid: GridFile,
    pub actions: Vec<Vec<String>>,
    /// `feasible[s][i]`: action indices of player `i` at state `s`.
    pub feasible: Vec<Vec<Vec<usize>>>,
    /// `payoffs[s][x][i]`.
    pub payoffs: Vec<Vec<Vec<f64>>>,
    pub kernel: KernelFile,
    pub atoms: AtomsFile,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridFile {
    pub cells: Vec<CellFile>,
    pub coarse: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellFile {
    pub mass: f64,
    pub divisible: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelFile {
    #[serde(rename = "J")]
    pub j: usize,
    pub rho: Vec<Vec<f64>>,
    /// `q[s][x][j][e]`.
    pub q: Vec<Vec<Vec<Vec<f64>>>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtomsFile {
    /// Masses of the atomic cells, in cell order.
    pub masses: Vec<f64>,
    /// `kernel[s][x][a]`.
    pub kernel: Vec<Vec<Vec<f64>>>,
}

impl From<&StochasticGameSpec> for GameSpecFile {
    fn from(spec: &StochasticGameSpec) -> Self {
        GameSpecFile {
            version: FORMAT_VERSION,
            players: spec.players,
            discounts: spec.discounts.clone(),
            payoff_bound: spec.payoff_bound,
            grid: GridFile {
                cells: spec
                    .space
                    .cells()
                    .iter()
                    .map(|c| CellFile {
                        mass: c.mass,
                        divisible: c.divisible,
                    })
                    .collect(),
                coarse: spec.space.coarse_map().to_vec(),
            },
            actions: spec.actions.clone(),
            feasible: spec.feasible.clone(),
            payoffs: spec.payoffs.clone(),
            kernel: KernelFile {
                j: spec.kernel.n_components(),
                rho: spec.kernel.rho.clone(),
                q: spec.kernel.q.clone(),
            },
            atoms: AtomsFile {
                masses: spec.atoms().iter().map(|&k| spec.space.mass(k)).collect(),
                kernel: spec.atom_kernel.clone(),
            },
        }
    }
}

fn negative_mass(k: usize, value: f64) -> Error {
    Error::Validation(ValidationReport {
        violations: vec![Violation::NegativeKernelComponent {
            what: format!("mass of cell {k}"),
            value,
        }],
        no_g_atom: false,
    })
}

impl GameSpecFile {
    /// Builds the spec without running [`validate_game`].
    pub fn into_spec(self) -> Result<StochasticGameSpec> {
        if self.version != FORMAT_VERSION {
            return Err(Error::invalid(format!("unsupported format version {}", self.version)));
        }
        for (k, c) in self.grid.cells.iter().enumerate() {
            if c.mass < 0.0 {
                return Err(negative_mass(k, c.mass));
            }
        }
        let cells: Vec<Cell> = self
            .grid
            .cells
            .iter()
            .map(|c| {
                if c.divisible {
                    Cell::divisible(c.mass)
                } else {
                    Cell::atomic(c.mass)
                }
            })
            .collect();
        let space = GridSpace::new(cells, self.grid.coarse)?;
        let atom_masses: Vec<f64> = space.atoms().iter().map(|&k| space.mass(k)).collect();
        if atom_masses != self.atoms.masses {
            return Err(Error::invalid(
                "atoms.masses must list the masses of the atomic cells in order",
            ));
        }
        if self.kernel.j != self.kernel.rho.len() {
            return Err(Error::invalid(format!(
                "kernel.J = {} but rho has {} rows",
                self.kernel.j,
                self.kernel.rho.len()
            )));
        }
        let spec = StochasticGameSpec {
            players: self.players,
            discounts: self.discounts,
            actions: self.actions,
            feasible: self.feasible,
            payoffs: self.payoffs,
            payoff_bound: self.payoff_bound,
            space,
            kernel: KernelDecomposition {
                rho: self.kernel.rho,
                q: self.kernel.q,
            },
            atom_kernel: self.atoms.kernel,
        };
        Ok(spec)
    }
}

fn parse_json<T: for<'de> Deserialize<'de>>(text: &str, path: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let value = serde_path_to_error::deserialize(de).map_err(|e| {
        let key = e.path().to_string();
        let inner = e.into_inner();
        Error::Parse {
            path: path.to_string(),
            line: inner.line(),
            column: inner.column(),
            message: if key.is_empty() || key == "." {
                inner.to_string()
            } else {
                format!("at `{key}`: {inner}")
            },
        }
    })?;
    Ok(value)
}

/// Parses and validates a game spec from JSON text. `path` labels errors.
pub fn parse_game_spec_str(text: &str, path: &str) -> Result<StochasticGameSpec> {
    let file: GameSpecFile = parse_json(text, path)?;
    let spec = file.into_spec()?;
    let report = validate_game(&spec);
    if !report.is_pass() {
        return Err(Error::Validation(report));
    }
    Ok(spec)
}

pub fn parse_game_spec(path: impl AsRef<Path>) -> Result<StochasticGameSpec> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    parse_game_spec_str(&text, &path.display().to_string())
}

pub fn game_spec_to_json(spec: &StochasticGameSpec) -> String {
    let mut s = serde_json::to_string_pretty(&GameSpecFile::from(spec)).expect("spec files always serialize");
    s.push('\n');
    s
}

/// SHA-256 of the compact JSON form, hex encoded.
pub fn spec_hash(spec: &StochasticGameSpec) -> String {
    let compact = serde_json::to_vec(&GameSpecFile::from(spec)).expect("spec files always serialize");
    hex::encode(Sha256::digest(compact))
}

/// A real number written as a 17-significant-digit decimal string.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dec(pub f64);

impl fmt::Display for Dec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.16e}", self.0)
    }
}

impl Serialize for Dec {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Dec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse::<f64>()
            .map(Dec)
            .map_err(|_| de::Error::custom(format!("not a decimal number: {s:?}")))
    }
}

fn dec(v: &[f64]) -> Vec<Dec> {
    v.iter().copied().map(Dec).collect()
}

fn undec(v: &[Dec]) -> Vec<f64> {
    v.iter().map(|d| d.0).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PieceFile {
    pub fraction: Dec,
    pub strategy: Vec<Vec<Dec>>,
    pub value: Vec<Dec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertificateFile {
    pub epsilon: Dec,
    pub bellman_residual: Dec,
    pub recursion_residual: Dec,
    pub gains: Vec<Vec<Vec<Dec>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulation: Option<SimulationFile>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationFile {
    pub initial_cell: usize,
    pub initial_piece: usize,
    pub mean: Vec<Dec>,
    pub std_error: Vec<Dec>,
    pub paths: usize,
    pub horizon: usize,
    pub seed: u64,
    pub occupancy: Vec<Dec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsFile {
    pub iterations: usize,
    pub restarts: usize,
    pub converged: bool,
    pub residual_history: Vec<Dec>,
    pub count_mismatch_cells: Vec<usize>,
    pub equilibria_per_cell: Vec<usize>,
    pub solver_epsilon: Dec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResultFile {
    pub version: u32,
    pub spec_hash: String,
    pub epsilon: Dec,
    pub cells: Vec<Vec<PieceFile>>,
    pub certificate: CertificateFile,
    pub diagnostics: DiagnosticsFile,
}

impl From<&SimulationReport> for SimulationFile {
    fn from(r: &SimulationReport) -> Self {
        SimulationFile {
            initial_cell: r.initial_cell,
            initial_piece: r.initial_piece,
            mean: dec(&r.mean),
            std_error: dec(&r.std_error),
            paths: r.paths,
            horizon: r.horizon,
            seed: r.seed,
            occupancy: dec(&r.occupancy),
        }
    }
}

impl From<&SimulationFile> for SimulationReport {
    fn from(r: &SimulationFile) -> Self {
        SimulationReport {
            initial_cell: r.initial_cell,
            initial_piece: r.initial_piece,
            mean: undec(&r.mean),
            std_error: undec(&r.std_error),
            paths: r.paths,
            horizon: r.horizon,
            seed: r.seed,
            occupancy: undec(&r.occupancy),
        }
    }
}

impl From<&Certificate> for CertificateFile {
    fn from(c: &Certificate) -> Self {
        CertificateFile {
            epsilon: Dec(c.epsilon),
            bellman_residual: Dec(c.bellman_residual),
            recursion_residual: Dec(c.recursion_residual),
            gains: c.gains.iter().map(|g| g.iter().map(|p| dec(p)).collect()).collect(),
            simulation: c.simulation.as_ref().map(SimulationFile::from),
        }
    }
}

impl From<&CertificateFile> for Certificate {
    fn from(c: &CertificateFile) -> Self {
        Certificate {
            gains: c.gains.iter().map(|g| g.iter().map(|p| undec(p)).collect()).collect(),
            epsilon: c.epsilon.0,
            bellman_residual: c.bellman_residual.0,
            recursion_residual: c.recursion_residual.0,
            simulation: c.simulation.as_ref().map(SimulationReport::from),
        }
    }
}

impl ResultFile {
    pub fn new(spec: &StochasticGameSpec, r: &EquilibriumResult) -> Self {
        let d = &r.diagnostics;
        ResultFile {
            version: FORMAT_VERSION,
            spec_hash: spec_hash(spec),
            epsilon: Dec(r.epsilon),
            cells: r
                .cells
                .iter()
                .map(|pieces| {
                    pieces
                        .iter()
                        .map(|p| PieceFile {
                            fraction: Dec(p.fraction),
                            strategy: p.strategy.iter().map(|s| dec(s)).collect(),
                            value: dec(&p.value),
                        })
                        .collect()
                })
                .collect(),
            certificate: CertificateFile::from(&r.certificate),
            diagnostics: DiagnosticsFile {
                iterations: d.iterations,
                restarts: d.restarts,
                converged: d.converged,
                residual_history: dec(&d.residual_history),
                count_mismatch_cells: d.count_mismatch_cells.clone(),
                equilibria_per_cell: d.equilibria_per_cell.clone(),
                solver_epsilon: Dec(d.solver_epsilon),
            },
        }
    }

    pub fn into_result(self) -> EquilibriumResult {
        let d = self.diagnostics;
        EquilibriumResult {
            cells: self
                .cells
                .iter()
                .map(|pieces| {
                    pieces
                        .iter()
                        .map(|p| StrategyPiece {
                            fraction: p.fraction.0,
                            strategy: p.strategy.iter().map(|s| undec(s)).collect(),
                            value: undec(&p.value),
                        })
                        .collect()
                })
                .collect(),
            epsilon: self.epsilon.0,
            certificate: Certificate::from(&self.certificate),
            diagnostics: Diagnostics {
                iterations: d.iterations,
                restarts: d.restarts,
                converged: d.converged,
                residual_history: undec(&d.residual_history),
                count_mismatch_cells: d.count_mismatch_cells,
                equilibria_per_cell: d.equilibria_per_cell,
                solver_epsilon: d.solver_epsilon.0,
            },
        }
    }
}

pub fn result_to_json(spec: &StochasticGameSpec, r: &EquilibriumResult) -> String {
    let mut s = serde_json::to_string_pretty(&ResultFile::new(spec, r)).expect("result files always serialize");
    s.push('\n');
    s
}

/// Reads a result and checks that it was computed from `spec`.
pub fn parse_result_str(text: &str, path: &str, spec: &StochasticGameSpec) -> Result<EquilibriumResult> {
    let file: ResultFile = parse_json(text, path)?;
    if file.version != FORMAT_VERSION {
        return Err(Error::invalid(format!("unsupported result version {}", file.version)));
    }
    let expected = spec_hash(spec);
    if file.spec_hash != expected {
        return Err(Error::invalid(format!(
            "result {path} was computed from spec {} but the game hashes to {expected}",
            file.spec_hash
        )));
    }
    Ok(file.into_result())
}

pub fn read_result(path: impl AsRef<Path>, spec: &StochasticGameSpec) -> Result<EquilibriumResult> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    parse_result_str(&text, &path.display().to_string(), spec)
}

/// Certificate with the hash of the spec it refers to.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertificateRecord {
    pub version: u32,
    pub spec_hash: String,
    pub certificate: CertificateFile,
}

pub fn certificate_to_json(spec: &StochasticGameSpec, c: &Certificate) -> String {
    let rec = CertificateRecord {
        version: FORMAT_VERSION,
        spec_hash: spec_hash(spec),
        certificate: CertificateFile::from(c),
    };
    let mut s = serde_json::to_string_pretty(&rec).expect("certificates always serialize");
    s.push('\n');
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::fixtures::constant_kernel_game;
    use crate::solver::{solve, SolverOptions};

    #[test]
    fn spec_roundtrip_is_exact() {
        let spec = constant_kernel_game();
        let back = parse_game_spec_str(&game_spec_to_json(&spec), "mem").unwrap();
        assert_eq!(back, spec);
        assert_eq!(spec_hash(&back), spec_hash(&spec));
    }

    #[test]
    fn truncated_file_reports_position() {
        let text = game_spec_to_json(&constant_kernel_game());
        let err = parse_game_spec_str(&text[..text.len() / 2], "half.json").unwrap_err();
        match err {
            Error::Parse { path, line, .. } => {
                assert_eq!(path, "half.json");
                assert!(line > 1);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn wrong_type_names_the_key() {
        let text =
            game_spec_to_json(&constant_kernel_game()).replace("\"payoff_bound\": 4.0", "\"payoff_bound\": \"x\"");
        let err = parse_game_spec_str(&text, "f").unwrap_err();
        assert!(err.to_string().contains("payoff_bound"), "{err}");
    }

    #[test]
    fn negative_mass_is_a_validation_error() {
        let mut file = GameSpecFile::from(&constant_kernel_game());
        file.grid.cells[0].mass = -0.5;
        let text = serde_json::to_string(&file).unwrap();
        let err = parse_game_spec_str(&text, "f").unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
        assert!(err.to_string().contains("negative kernel component"), "{err}");
    }

    #[test]
    fn decimal_strings_roundtrip() {
        for x in [0.1, 1.0 / 3.0, 2.0f64.sqrt(), 1e-300, -7.25e10, 0.0] {
            let s = serde_json::to_string(&Dec(x)).unwrap();
            let back: Dec = serde_json::from_str(&s).unwrap();
            assert_eq!(back.0, x);
        }
    }

    #[test]
    fn result_roundtrip_and_hash_check() {
        let spec = constant_kernel_game();
        let r = solve(&spec, &SolverOptions::default()).unwrap();
        let text = result_to_json(&spec, &r);
        let back = parse_result_str(&text, "r", &spec).unwrap();
        assert_eq!(back, r);
        let mut other = spec.clone();
        other.discounts[0] = 0.4;
        assert!(parse_result_str(&text, "r", &other).is_err());
    }
}
