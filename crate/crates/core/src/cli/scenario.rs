//! TOML scenario schema and its conversion into library objects.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use super::CliError;
use crate::operator::{c, remove_diagonal_blocks, thermal_state, BipartiteSystem, CMatrix, DensityMatrix, HermitianOperator, C64};
use crate::perturbative::Broadening;
use crate::qhe::{Environment, LevelSet, QheSpec};
use crate::random::random_hermitian;

#[derive(Clone, Copy, Debug, Deserialize, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    Simulate,
    Flows,
    Fcs,
    KmsCheck,
    Qhe,
    Correspond,
    Patterns,
}

impl Kind {
    pub fn name(self) -> &'static str {
        match self {
            Kind::Simulate => "simulate",
            Kind::Flows => "flows",
            Kind::Fcs => "fcs",
            Kind::KmsCheck => "kms-check",
            Kind::Qhe => "qhe",
            Kind::Correspond => "correspond",
            Kind::Patterns => "patterns",
        }
    }
}

#[derive(Clone, Copy, Debug, Deserialize, PartialEq, Eq)]
pub enum MethodName {
    #[serde(rename = "oracle")]
    Oracle,
    #[serde(rename = "2nd")]
    Second,
    #[serde(rename = "4th")]
    Fourth,
    #[serde(rename = "d0")]
    D0,
}

#[derive(Clone, Copy, Debug, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum PauliKind {
    I,
    X,
    Y,
    Z,
}

#[derive(Clone, Copy, Debug, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum BosonOp {
    /// `a†a`
    #[default]
    Number,
    /// `a + a†`
    Position,
    /// `i(a† - a)`
    Momentum,
}

fn one() -> f64 {
    1.0
}

/// A Hermitian matrix, inline or from a named generator.
#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "generator", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MatrixSpec {
    /// Row-major `[re, im]` pairs.
    Inline { rows: Vec<Vec<[f64; 2]>> },
    Diagonal { values: Vec<f64> },
    RandomHermitian {
        dim: usize,
        /// Defaults to the scenario seed.
        seed: Option<u64>,
        #[serde(default = "one")]
        scale: f64,
    },
    Pauli {
        which: PauliKind,
        #[serde(default = "one")]
        scale: f64,
    },
    /// Operator on the lowest `n + 1` oscillator levels.
    BosonicTruncated {
        n: usize,
        #[serde(default)]
        op: BosonOp,
        #[serde(default = "one")]
        scale: f64,
    },
}

fn schema(key: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Schema(format!("{key}: {msg}"))
}

fn inline_matrix(rows: &[Vec<[f64; 2]>], key: &str) -> Result<CMatrix, CliError> {
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(schema(key, "inline matrix must be square and nonempty"));
    }
    if rows.iter().flatten().flatten().any(|x| !x.is_finite()) {
        return Err(schema(key, "inline matrix has non-finite entries"));
    }
    Ok(CMatrix::from_fn(n, n, |i, j| C64::new(rows[i][j][0], rows[i][j][1])))
}

impl MatrixSpec {
    pub fn build(&self, default_seed: u64, key: &str) -> Result<HermitianOperator, CliError> {
        let m = match self {
            MatrixSpec::Inline { rows } => inline_matrix(rows, key)?,
            MatrixSpec::Diagonal { values } => {
                if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
                    return Err(schema(key, "diagonal needs finite values"));
                }
                HermitianOperator::diagonal(values).into_matrix()
            }
            MatrixSpec::RandomHermitian { dim, seed, scale } => {
                if *dim == 0 {
                    return Err(schema(key, "dim must be positive"));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(seed.unwrap_or(default_seed));
                random_hermitian(*dim, &mut rng).into_matrix() * c(*scale)
            }
            MatrixSpec::Pauli { which, scale } => {
                let (a, b, d) = match which {
                    PauliKind::I => (c(0.0), c(1.0), c(1.0)),
                    PauliKind::X => (c(1.0), c(0.0), c(0.0)),
                    PauliKind::Y => (C64::new(0.0, -1.0), c(0.0), c(0.0)),
                    PauliKind::Z => (c(0.0), c(1.0), c(-1.0)),
                };
                CMatrix::from_row_slice(2, 2, &[b, a, a.conj(), d]) * c(*scale)
            }
            MatrixSpec::BosonicTruncated { n, op, scale } => {
                if *n == 0 {
                    return Err(schema(key, "n must be at least 1"));
                }
                let d = n + 1;
                let lower = CMatrix::from_fn(d, d, |i, j| if j == i + 1 { c((j as f64).sqrt()) } else { c(0.0) });
                let m = match op {
                    BosonOp::Number => lower.adjoint() * &lower,
                    BosonOp::Position => &lower + lower.adjoint(),
                    BosonOp::Momentum => (lower.adjoint() - &lower) * C64::i(),
                };
                m * c(*scale)
            }
        };
        HermitianOperator::new(m).map_err(|e| schema(key, e))
    }
}

/// State of one subsystem: thermal, diagonal in the energy basis, or explicit.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateSpec {
    pub beta: Option<f64>,
    /// Populations in the eigenbasis of the subsystem Hamiltonian (ascending energy).
    pub populations: Option<Vec<f64>>,
    /// Explicit density matrix in the computational basis.
    pub rows: Option<Vec<Vec<[f64; 2]>>>,
}

impl StateSpec {
    pub fn build(&self, h: &HermitianOperator, key: &str) -> Result<DensityMatrix, CliError> {
        let given = [self.beta.is_some(), self.populations.is_some(), self.rows.is_some()];
        if given.iter().filter(|&&g| g).count() != 1 {
            return Err(schema(key, "give exactly one of beta, populations, rows"));
        }
        if let Some(beta) = self.beta {
            if !(beta > 0.0 && beta.is_finite()) {
                return Err(schema(key, "beta must be positive and finite"));
            }
            return thermal_state(h, beta).map_err(|e| schema(key, e));
        }
        if let Some(p) = &self.populations {
            if p.len() != h.dim() {
                return Err(schema(key, format!("{} populations for dimension {}", p.len(), h.dim())));
            }
            let d = CMatrix::from_diagonal(&DVector::from_iterator(p.len(), p.iter().map(|&x| c(x))));
            return DensityMatrix::new(h.spectrum().from_eigenbasis(&d)).map_err(|e| schema(key, e));
        }
        let m = inline_matrix(self.rows.as_ref().expect("checked"), key)?;
        if m.nrows() != h.dim() {
            return Err(schema(key, "state dimension does not match the Hamiltonian"));
        }
        DensityMatrix::new(m).map_err(|e| schema(key, e))
    }

    /// Populations in the energy eigenbasis; fails for states with coherences.
    pub fn populations_of(&self, h: &HermitianOperator, key: &str) -> Result<Vec<f64>, CliError> {
        let rho = self.build(h, key)?;
        let spec = h.spectrum();
        let r = spec.to_eigenbasis(rho.matrix());
        let off = (0..r.nrows())
            .flat_map(|i| (0..r.ncols()).map(move |j| (i, j)))
            .filter(|(i, j)| i != j)
            .map(|(i, j)| r[(i, j)].norm())
            .fold(0.0, f64::max);
        if off > 1e-10 {
            return Err(schema(key, "state must be diagonal in the energy eigenbasis for this kind"));
        }
        Ok((0..r.nrows()).map(|i| r[(i, i)].re).collect())
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingSpec {
    pub a: MatrixSpec,
    pub b: MatrixSpec,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    pub h_a: MatrixSpec,
    pub h_b: MatrixSpec,
    pub coupling: Vec<CouplingSpec>,
    #[serde(default)]
    pub lambda: f64,
    /// Remove coupling elements inside degenerate eigenspaces (default on).
    #[serde(default = "yes")]
    pub strip_diagonal: bool,
    pub state_a: Option<StateSpec>,
    pub state_b: Option<StateSpec>,
}

fn yes() -> bool {
    true
}

impl SystemSpec {
    pub fn build(&self, seed: u64, lambda: f64) -> Result<BipartiteSystem, CliError> {
        let h_a = self.h_a.build(seed, "system.h_a")?;
        let h_b = self.h_b.build(seed.wrapping_add(1), "system.h_b")?;
        if self.coupling.is_empty() {
            return Err(schema("system.coupling", "at least one coupling term is required"));
        }
        let mut terms = Vec::new();
        for (i, t) in self.coupling.iter().enumerate() {
            let salt = 2 * i as u64 + 2;
            let mut a = t.a.build(seed.wrapping_add(salt), &format!("system.coupling[{i}].a"))?;
            let mut b = t.b.build(seed.wrapping_add(salt + 1), &format!("system.coupling[{i}].b"))?;
            if self.strip_diagonal {
                a = HermitianOperator::new(remove_diagonal_blocks(a.matrix(), &h_a)).map_err(|e| schema("system.coupling", e))?;
                b = HermitianOperator::new(remove_diagonal_blocks(b.matrix(), &h_b)).map_err(|e| schema("system.coupling", e))?;
            }
            terms.push((a, b));
        }
        if self.strip_diagonal {
            BipartiteSystem::new(h_a, h_b, terms, lambda).map_err(|e| schema("system", e))
        } else {
            BipartiteSystem::with_mean_fields(h_a, h_b, terms, lambda).map_err(|e| schema("system", e))
        }
    }

    pub fn state(&self, which: char) -> Result<(&StateSpec, String), CliError> {
        let (s, key) = match which {
            'a' => (self.state_a.as_ref(), "system.state_a"),
            _ => (self.state_b.as_ref(), "system.state_b"),
        };
        let s = s.ok_or_else(|| schema(key, "missing"))?;
        Ok((s, key.to_string()))
    }
}

/// Sweep axes. Absent axes fall back to a single default value; present
/// axes must be nonempty and finite.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub lambda: Option<Vec<f64>>,
    pub m: Option<Vec<f64>>,
    pub beta: Option<Vec<f64>>,
    pub chi: Option<Vec<f64>>,
    pub eta: Option<Vec<f64>>,
}

impl Sweep {
    pub fn validate(&self) -> Result<(), CliError> {
        for (name, axis) in [
            ("lambda", &self.lambda),
            ("m", &self.m),
            ("beta", &self.beta),
            ("chi", &self.chi),
            ("eta", &self.eta),
        ] {
            if let Some(v) = axis {
                if v.is_empty() {
                    return Err(schema(&format!("sweep.{name}"), "sweep axis is empty"));
                }
                if let Some(k) = v.iter().position(|x| !x.is_finite()) {
                    return Err(schema(&format!("sweep.{name}[{k}]"), "value is not finite"));
                }
            }
        }
        if let Some(ms) = &self.m {
            if let Some(k) = ms.iter().position(|&m| m < 1.0) {
                return Err(schema(&format!("sweep.m[{k}]"), "Renyi order must be >= 1"));
            }
        }
        Ok(())
    }

    pub fn axis(&self, name: &str, default: f64) -> Vec<f64> {
        let v = match name {
            "lambda" => &self.lambda,
            "m" => &self.m,
            "beta" => &self.beta,
            "chi" => &self.chi,
            _ => &self.eta,
        };
        v.clone().unwrap_or_else(|| vec![default])
    }

    /// Integer orders, for kinds that need whole numbers of worlds.
    pub fn integer_m(&self, default: u32) -> Result<Vec<u32>, CliError> {
        self.axis("m", default as f64)
            .iter()
            .enumerate()
            .map(|(k, &m)| {
                if m.fract() == 0.0 {
                    Ok(m as u32)
                } else {
                    Err(schema(&format!("sweep.m[{k}]"), "this kind needs integer orders"))
                }
            })
            .collect()
    }
}

#[derive(Clone, Debug, Deserialize, serde::Serialize)]
#[serde(deny_unknown_fields)]
pub struct Numerics {
    #[serde(default = "default_dt")]
    pub dt: f64,
    /// Broadening width; also the switching rate of oracle runs.
    pub eta: Option<f64>,
    #[serde(default = "default_broadening")]
    pub broadening: Broadening,
    /// Ramp length in units of `1/eta`.
    #[serde(default = "default_ramp")]
    pub ramp_lengths: f64,
    /// Pinning rate of the D₀ route, in units of the coupling-rate scale.
    #[serde(default = "default_pinning")]
    pub pinning_factor: f64,
}

fn default_dt() -> f64 {
    0.05
}
fn default_broadening() -> Broadening {
    Broadening::Lorentzian
}
fn default_ramp() -> f64 {
    25.0
}
fn default_pinning() -> f64 {
    1e3
}

impl Default for Numerics {
    fn default() -> Self {
        Self { dt: default_dt(), eta: None, broadening: default_broadening(), ramp_lengths: default_ramp(), pinning_factor: default_pinning() }
    }
}

impl Numerics {
    pub fn validate(&self) -> Result<(), CliError> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(schema("numerics.dt", "must be positive"));
        }
        if let Some(e) = self.eta {
            if !(e > 0.0 && e.is_finite()) {
                return Err(schema("numerics.eta", "must be positive"));
            }
        }
        if !(self.ramp_lengths > 0.0) {
            return Err(schema("numerics.ramp_lengths", "must be positive"));
        }
        if !(self.pinning_factor > 0.0) {
            return Err(schema("numerics.pinning_factor", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub t_end: f64,
    #[serde(default = "default_samples")]
    pub samples: usize,
}

fn default_samples() -> usize {
    20
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FcsConfig {
    pub window: f64,
    /// Intrinsic relaxation of A towards `state_a`, absolute rate.
    pub relax_a: Option<f64>,
    /// Intrinsic relaxation of B towards `state_b`, absolute rate.
    pub relax_b: Option<f64>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KmsConfig {
    pub h: MatrixSpec,
    pub ops: Vec<MatrixSpec>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriveTerm {
    pub up: usize,
    pub down: usize,
    pub re: f64,
    #[serde(default)]
    pub im: f64,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentSpec {
    pub temperature: f64,
    /// Emission kernel over the lowering pairs (bosonic bath).
    pub channels: Option<Vec<Vec<[f64; 2]>>>,
    /// Full susceptibility tensor over ordered level pairs.
    pub chi_tilde: Option<Vec<Vec<[f64; 2]>>>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QheConfig {
    pub sets: Vec<LevelSet>,
    pub e_up: f64,
    pub e_down: f64,
    pub splittings: Option<Vec<f64>>,
    pub omega: f64,
    #[serde(default)]
    pub drive: Vec<DriveTerm>,
    pub environments: Vec<EnvironmentSpec>,
    pub probe: usize,
}

impl QheConfig {
    pub fn build(&self) -> Result<QheSpec, CliError> {
        let n = self.sets.len();
        let mut envs = Vec::new();
        for (a, e) in self.environments.iter().enumerate() {
            let key = format!("qhe.environments[{a}]");
            let env = match (&e.channels, &e.chi_tilde) {
                (Some(g), None) => {
                    let pairs = crate::qhe::lowering_pairs(&self.sets).len();
                    let g = inline_matrix(g, &key)?;
                    if g.nrows() != pairs {
                        return Err(schema(&key, format!("channels must be {pairs}x{pairs}")));
                    }
                    Environment::from_channels(e.temperature, &self.sets, &g).map_err(|x| schema(&key, x))?
                }
                (None, Some(t)) => {
                    let t = inline_matrix(t, &key)?;
                    if t.nrows() != n * n {
                        return Err(schema(&key, format!("chi_tilde must be {0}x{0}", n * n)));
                    }
                    Environment { temperature: e.temperature, chi_tilde: t }
                }
                _ => return Err(schema(&key, "give exactly one of channels, chi_tilde")),
            };
            envs.push(env);
        }
        let spec = QheSpec {
            sets: self.sets.clone(),
            e_up: self.e_up,
            e_down: self.e_down,
            splittings: self.splittings.clone().unwrap_or_else(|| vec![0.0; n]),
            drive: self.drive.iter().map(|d| (d.up, d.down, C64::new(d.re, d.im))).collect(),
            omega: self.omega,
            environments: envs,
            probe: self.probe,
        };
        spec.validate().map_err(|e| schema("qhe", e))?;
        Ok(spec)
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorrespondConfig {
    /// Inverse temperature of A.
    pub beta: f64,
    #[serde(default = "default_correspond_pinning")]
    pub pinning: f64,
}

fn default_correspond_pinning() -> f64 {
    20.0
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatternSpec {
    /// `renyi-a`, `renyi-b` or `k`; otherwise give both permutations.
    pub name: Option<String>,
    pub worlds: Option<usize>,
    pub perm_a: Option<Vec<usize>>,
    pub perm_b: Option<Vec<usize>>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Base name of the result table (default: the kind).
    pub name: Option<String>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub kind: Kind,
    #[serde(default)]
    pub seed: u64,
    pub system: Option<SystemSpec>,
    #[serde(default)]
    pub methods: Vec<MethodName>,
    #[serde(default)]
    pub sweep: Sweep,
    #[serde(default)]
    pub numerics: Numerics,
    pub simulate: Option<SimulateConfig>,
    pub fcs: Option<FcsConfig>,
    pub kms: Option<KmsConfig>,
    pub qhe: Option<QheConfig>,
    pub correspond: Option<CorrespondConfig>,
    #[serde(default)]
    pub patterns: Vec<PatternSpec>,
    #[serde(default)]
    pub output: OutputConfig,
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let s: Scenario = toml::from_str(text).map_err(|e| CliError::Schema(e.to_string()))?;
        s.sweep.validate()?;
        s.numerics.validate()?;
        let need = |present: bool, key: &str| if present { Ok(()) } else { Err(schema(key, format!("required for kind {}", s.kind.name()))) };
        match s.kind {
            Kind::Simulate => {
                need(s.system.is_some(), "system")?;
                need(s.simulate.is_some(), "simulate")?;
            }
            Kind::Flows | Kind::Patterns => need(s.system.is_some(), "system")?,
            Kind::Fcs => {
                need(s.system.is_some(), "system")?;
                need(s.fcs.is_some(), "fcs")?;
            }
            Kind::KmsCheck => need(s.kms.is_some(), "kms")?,
            Kind::Qhe => need(s.qhe.is_some(), "qhe")?,
            Kind::Correspond => {
                need(s.system.is_some(), "system")?;
                need(s.correspond.is_some(), "correspond")?;
            }
        }
        if let Some(sys) = &s.system {
            let exact_only = match s.kind {
                Kind::Simulate | Kind::Patterns => true,
                Kind::Flows => s.methods.iter().all(|m| *m == MethodName::Oracle),
                _ => false,
            };
            if !sys.strip_diagonal && !exact_only {
                return Err(schema(
                    "system.strip_diagonal",
                    "diagonal coupling blocks are only supported by exact evolution (simulate, patterns, oracle flows)",
                ));
            }
        }
        if s.kind == Kind::Patterns && s.patterns.is_empty() {
            return Err(schema("patterns", "at least one pattern is required"));
        }
        Ok(s)
    }

    pub fn system(&self) -> &SystemSpec {
        self.system.as_ref().expect("validated")
    }
}
