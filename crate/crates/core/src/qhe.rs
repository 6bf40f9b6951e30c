//! Driven multilevel heat engine coupled to thermal environments, and the
//! split of the Rényi flow into a weak probe environment into incoherent and
//! coherent parts.
//!
//! Levels fall into an upper set `u` and a lower set `d`. Everything is done
//! in the frame rotating at the drive frequency `ω`, so the drive is static
//! and every environment acts through the cross-set lowering operators
//! `|p⟩⟨m|` (`p ∈ d`, `m ∈ u`) and their adjoints. An environment is
//! described by its dissipative susceptibility `χ̃_{mn,pq}(ω)`, a tensor over
//! ordered level pairs. For lowering pairs `k = (p, m)` the emission kernel
//! is `G_kl = χ̃_{k, l†}` and the absorption kernel is `χ̃_{l, k†}`.
//!
//! Sign convention: `F_M` here is the Rényi flow *into* the probe,
//! `-d ln S_M/dt` of the probe, so that it tends to `(M - 1)` times the
//! Shannon entropy flow as `M → 1`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::kms::bose;
use crate::master::{bloch_steady_state, BlochGenerator};
use crate::operator::{c, eigh, max_abs, CMatrix, DensityMatrix, C64};
use crate::report::{FlowReport, Method};

/// Probe-to-engine rate ratio above which the weak-probe assumption is flagged.
pub const PROBE_RATIO_WARNING: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LevelSet {
    #[serde(alias = "u")]
    Up,
    #[serde(alias = "d")]
    Down,
}

/// `η_nm = +1` for `n ∈ u, m ∈ d`, `-1` for the reverse, `0` otherwise.
pub fn eta_matrix(sets: &[LevelSet]) -> DMatrix<i8> {
    DMatrix::from_fn(sets.len(), sets.len(), |n, m| match (sets[n], sets[m]) {
        (LevelSet::Up, LevelSet::Down) => 1,
        (LevelSet::Down, LevelSet::Up) => -1,
        _ => 0,
    })
}

/// Cross-set lowering pairs `(p, m)`, `p ∈ d`, `m ∈ u`, in a fixed order.
pub fn lowering_pairs(sets: &[LevelSet]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for (p, sp) in sets.iter().enumerate() {
        for (m, sm) in sets.iter().enumerate() {
            if *sp == LevelSet::Down && *sm == LevelSet::Up {
                out.push((p, m));
            }
        }
    }
    out
}

fn ket_bra(n: usize, a: usize, b: usize) -> CMatrix {
    let mut x = CMatrix::zeros(n, n);
    x[(a, b)] = c(1.0);
    x
}

/// A thermal environment characterized at the drive frequency.
#[derive(Clone, Debug)]
pub struct Environment {
    pub temperature: f64,
    /// `χ̃_{mn,pq}(ω)` at row `m·n_levels + n`, column `p·n_levels + q`.
    pub chi_tilde: CMatrix,
}

impl Environment {
    /// Environment whose emission kernel over `lowering_pairs(sets)` is `g`;
    /// the absorption kernel is then `gᵀ`, as for a bosonic bath.
    pub fn from_channels(temperature: f64, sets: &[LevelSet], g: &CMatrix) -> Result<Self> {
        let pairs = lowering_pairs(sets);
        if g.shape() != (pairs.len(), pairs.len()) {
            return Err(Error::Dimension(format!("channel matrix must be {0}x{0}", pairs.len())));
        }
        let n = sets.len();
        let mut chi = CMatrix::zeros(n * n, n * n);
        for (k, &(pk, mk)) in pairs.iter().enumerate() {
            for (l, &(pl, ml)) in pairs.iter().enumerate() {
                chi[(pk * n + mk, ml * n + pl)] = g[(k, l)];
            }
        }
        Ok(Self { temperature, chi_tilde: chi })
    }

    fn n_b(&self, omega: f64) -> f64 {
        bose(omega / self.temperature)
    }

    /// Emission kernel `G_kl = χ̃_{k, l†}`.
    pub fn emission_kernel(&self, sets: &[LevelSet]) -> CMatrix {
        let n = sets.len();
        let pairs = lowering_pairs(sets);
        CMatrix::from_fn(pairs.len(), pairs.len(), |k, l| {
            self.chi_tilde[(pairs[k].0 * n + pairs[k].1, pairs[l].1 * n + pairs[l].0)]
        })
    }

    /// Absorption kernel `χ̃_{l, k†}`, acting on the raising operators.
    pub fn absorption_kernel(&self, sets: &[LevelSet]) -> CMatrix {
        let n = sets.len();
        let pairs = lowering_pairs(sets);
        CMatrix::from_fn(pairs.len(), pairs.len(), |k, l| {
            self.chi_tilde[(pairs[l].0 * n + pairs[l].1, pairs[k].1 * n + pairs[k].0)]
        })
    }
}

/// Heat-engine specification, all energies in the laboratory frame.
#[derive(Clone, Debug)]
pub struct QheSpec {
    pub sets: Vec<LevelSet>,
    pub e_up: f64,
    pub e_down: f64,
    /// Intra-set splittings `ε_n`.
    pub splittings: Vec<f64>,
    /// Drive amplitudes `Ω_mn` for `m ∈ u`, `n ∈ d`.
    pub drive: Vec<(usize, usize, C64)>,
    pub omega: f64,
    pub environments: Vec<Environment>,
    /// Index of the probe environment.
    pub probe: usize,
}

fn check_psd(x: &CMatrix, what: &str) -> Result<()> {
    if x.is_empty() {
        return Ok(());
    }
    let scale = max_abs(x).max(1e-300);
    let herm = max_abs(&(x - x.adjoint()));
    if herm > 1e-10 * scale {
        return Err(Error::NotHermitian(herm));
    }
    let low = eigh(x).energies[0];
    if low < -1e-10 * scale {
        return Err(Error::InvalidArgument(format!("{what} kernel is not positive semidefinite (eigenvalue {low:.3e})")));
    }
    Ok(())
}

impl QheSpec {
    pub fn levels(&self) -> usize {
        self.sets.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.levels();
        if !self.sets.contains(&LevelSet::Up) || !self.sets.contains(&LevelSet::Down) {
            return Err(Error::InvalidArgument("both level sets must be nonempty".into()));
        }
        if self.splittings.len() != n {
            return Err(Error::Dimension(format!("{} splittings for {n} levels", self.splittings.len())));
        }
        let gap = self.e_up - self.e_down;
        if !(gap > 0.0) {
            return Err(Error::InvalidArgument("E_u - E_d must be positive".into()));
        }
        if !(self.omega > 0.0) {
            return Err(Error::InvalidArgument("drive frequency must be positive".into()));
        }
        if self.splittings.iter().any(|e| e.abs() > 0.1 * gap) {
            log::warn!("intra-set splittings are not small against E_u - E_d = {gap}");
        }
        for &(m, k, _) in &self.drive {
            if m >= n || k >= n || self.sets[m] != LevelSet::Up || self.sets[k] != LevelSet::Down {
                return Err(Error::InvalidArgument(format!("drive term ({m}, {k}) must map a lower level to an upper one")));
            }
        }
        if self.probe >= self.environments.len() {
            return Err(Error::InvalidArgument("probe environment index out of range".into()));
        }
        for (a, env) in self.environments.iter().enumerate() {
            if env.chi_tilde.shape() != (n * n, n * n) {
                return Err(Error::Dimension(format!("environment {a}: susceptibility must be {0}x{0}", n * n)));
            }
            if !(env.temperature > 0.0) {
                return Err(Error::InvalidArgument(format!("environment {a}: temperature must be positive")));
            }
            check_psd(&env.emission_kernel(&self.sets), "emission")?;
            check_psd(&env.absorption_kernel(&self.sets), "absorption")?;
        }
        let ratio = self.probe_rate_ratio();
        if ratio >= PROBE_RATIO_WARNING {
            log::warn!("probe rates are not small: ratio {ratio:.3} to the other environments");
        }
        Ok(())
    }

    pub fn with_probe_temperature(&self, temperature: f64) -> Self {
        let mut out = self.clone();
        out.environments[self.probe].temperature = temperature;
        out
    }

    fn rate_scale(&self, env: &Environment) -> f64 {
        let n = env.n_b(self.omega);
        let down = eigh(&env.emission_kernel(&self.sets)).energies;
        let up = eigh(&env.absorption_kernel(&self.sets)).energies;
        ((1.0 + n) * down.last().copied().unwrap_or(0.0)).max(n * up.last().copied().unwrap_or(0.0))
    }

    /// Largest probe rate over the largest rate of all other environments.
    pub fn probe_rate_ratio(&self) -> f64 {
        let probe = self.rate_scale(&self.environments[self.probe]);
        let other = self
            .environments
            .iter()
            .enumerate()
            .filter(|(a, _)| *a != self.probe)
            .map(|(_, e)| self.rate_scale(e))
            .fold(0.0, f64::max);
        if other > 0.0 { probe / other } else { f64::INFINITY }
    }

    /// Rotating-frame Hamiltonian: `E_n - ω` on the upper set plus the static drive.
    pub fn rotating_hamiltonian(&self) -> CMatrix {
        let n = self.levels();
        let mut h = CMatrix::zeros(n, n);
        for k in 0..n {
            let base = match self.sets[k] {
                LevelSet::Up => self.e_up - self.omega,
                LevelSet::Down => self.e_down,
            };
            h[(k, k)] = c(base + self.splittings[k]);
        }
        for &(m, k, w) in &self.drive {
            h[(m, k)] += w;
            h[(k, m)] += w.conj();
        }
        h
    }

    /// Lindblad jumps `(rate, L)` of one environment.
    pub fn jumps(&self, env: &Environment) -> Vec<(f64, CMatrix)> {
        let n = self.levels();
        let pairs = lowering_pairs(&self.sets);
        let lower: Vec<CMatrix> = pairs.iter().map(|&(p, m)| ket_bra(n, p, m)).collect();
        let nb = env.n_b(self.omega);
        let mut out = Vec::new();
        for (weight, kernel, raising) in [
            (1.0 + nb, env.emission_kernel(&self.sets), false),
            (nb, env.absorption_kernel(&self.sets), true),
        ] {
            // γ = U diag(g) U†  =>  J_j = Σ_k U_kj L_k
            let spec = eigh(&kernel);
            for (j, &g) in spec.energies.iter().enumerate() {
                if g * weight <= 0.0 {
                    continue;
                }
                let mut jump = CMatrix::zeros(n, n);
                for (k, l) in lower.iter().enumerate() {
                    let op = if raising { l.adjoint() } else { l.clone() };
                    jump += op * spec.vectors[(k, j)];
                }
                out.push((g * weight, jump));
            }
        }
        out
    }

    /// Bloch generator with all environments except the probe.
    pub fn bloch_generator(&self) -> Result<BlochGenerator> {
        let jumps: Vec<(f64, CMatrix)> = self
            .environments
            .iter()
            .enumerate()
            .filter(|(a, _)| *a != self.probe)
            .flat_map(|(_, e)| self.jumps(e))
            .collect();
        BlochGenerator::lindblad(self.rotating_hamiltonian(), &jumps)
    }
}

/// Rotating-frame steady state of the engine without the probe.
pub fn steady_state(spec: &QheSpec) -> Result<DensityMatrix> {
    spec.validate()?;
    bloch_steady_state(&spec.bloch_generator()?)
}

fn check_rho(spec: &QheSpec, rho: &DensityMatrix) -> Result<()> {
    if rho.dim() != spec.levels() {
        return Err(Error::Dimension("engine state has the wrong size".into()));
    }
    Ok(())
}

/// Energy flow into the probe, `Q_i`: emission from upper-level populations
/// and coherences, minus absorption by the lower set.
pub fn q_incoherent(spec: &QheSpec, rho: &DensityMatrix) -> Result<f64> {
    check_rho(spec, rho)?;
    let env = &spec.environments[spec.probe];
    let nb = env.n_b(spec.omega);
    let n = spec.levels();
    let r = rho.matrix();
    let chi = |a: usize, b: usize, p: usize, q: usize| env.chi_tilde[(a * n + b, p * n + q)];
    let up: Vec<usize> = (0..n).filter(|&k| spec.sets[k] == LevelSet::Up).collect();
    let down: Vec<usize> = (0..n).filter(|&k| spec.sets[k] == LevelSet::Down).collect();
    let mut q = c(0.0);
    for &p in &down {
        for &m in &up {
            for &k in &up {
                q += r[(m, k)] * chi(p, m, k, p) * (1.0 + nb);
            }
        }
    }
    for &p in &up {
        for &m in &down {
            for &k in &down {
                q -= r[(m, k)] * chi(k, p, p, m) * nb;
            }
        }
    }
    Ok(spec.omega * q.re)
}

/// Dissipation of the classical forces `⟨|m⟩⟨n|⟩` into the probe, `Q_c`.
pub fn q_coherent(spec: &QheSpec, rho: &DensityMatrix) -> Result<f64> {
    check_rho(spec, rho)?;
    let env = &spec.environments[spec.probe];
    let n = spec.levels();
    let eta = eta_matrix(&spec.sets);
    let r = rho.matrix();
    let mut q = c(0.0);
    for m in 0..n {
        for k in 0..n {
            for p in 0..n {
                for l in 0..n {
                    if eta[(p, l)] == 1 {
                        q += r[(k, m)] * r[(l, p)] * env.chi_tilde[(m * n + k, p * n + l)];
                    }
                }
            }
        }
    }
    Ok(spec.omega * q.re)
}

/// Energy absorbed by the probe from classical forces `f_k` multiplying the
/// lowering operators, via emission minus absorption rates.
pub fn classical_force_dissipation(spec: &QheSpec, forces: &[C64]) -> Result<f64> {
    let env = &spec.environments[spec.probe];
    let g_down = env.emission_kernel(&spec.sets);
    let g_up = env.absorption_kernel(&spec.sets);
    if forces.len() != g_down.nrows() {
        return Err(Error::Dimension("one force per lowering pair".into()));
    }
    let nb = env.n_b(spec.omega);
    let mut emitted = c(0.0);
    let mut absorbed = c(0.0);
    for k in 0..forces.len() {
        for l in 0..forces.len() {
            emitted += g_down[(k, l)] * forces[k] * forces[l].conj();
            absorbed += g_up[(k, l)] * forces[k].conj() * forces[l];
        }
    }
    Ok(spec.omega * ((1.0 + nb) * emitted - nb * absorbed).re)
}

fn ln_expm1(y: f64) -> f64 {
    if y > 30.0 { y + (-(-y).exp()).ln_1p() } else { y.exp_m1().ln() }
}

/// `M n_B(Mω/T) / (n_B((M-1)ω/T) n_B(ω/T) ω)`, evaluated in log form; zero at `M = 1`.
pub fn flow_prefactor(m: f64, omega: f64, temperature: f64) -> f64 {
    if m == 1.0 {
        return 0.0;
    }
    let x = omega / temperature;
    (m.ln() - omega.ln() + ln_expm1((m - 1.0) * x) + ln_expm1(x) - ln_expm1(m * x)).exp()
}

/// `F_M = P(M)(Q_i - Q_c)`, the Shannon flow `(Q_i - Q_c)/T` and the
/// low-temperature form `M(Q_i - Q_c)/ω`, with the probe at `beta_probe`.
pub fn qhe_flows(spec: &QheSpec, rho: &DensityMatrix, m: f64, beta_probe: f64) -> Result<FlowReport> {
    if !(m >= 1.0) {
        return Err(Error::InvalidArgument("Renyi order must be >= 1".into()));
    }
    if !(beta_probe > 0.0) {
        return Err(Error::InvalidArgument("probe inverse temperature must be positive".into()));
    }
    let t = 1.0 / beta_probe;
    let spec = spec.with_probe_temperature(t);
    let qi = q_incoherent(&spec, rho)?;
    let qc = q_coherent(&spec, rho)?;
    let prefactor = flow_prefactor(m, spec.omega, t);
    let net = qi - qc;
    Ok(FlowReport::new(m, prefactor * net, Method::Qhe)
        .with("q_i", qi)
        .with("q_c", qc)
        .with("prefactor", prefactor)
        .with("f_s", net / t)
        .with("per_m_minus_1_limit", net / t)
        .with("low_t", m * net / spec.omega)
        .with("d_ln_s_dt", -prefactor * net))
}
