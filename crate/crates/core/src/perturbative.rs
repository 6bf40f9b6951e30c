//! Second- and fourth-order perturbation theory for Rényi and Shannon flows.
//!
//! Two routes are provided for the second order. The time-domain route
//! samples bath correlators `C_ij(τ)` and multi-world correlators
//! `K^{N,M}_ij(τ)`, assembles the block `W(τ)` and integrates it with a
//! convergence factor. The rate route uses Golden-rule rates between
//! product eigenstates and diagonal ensembles. Both agree when the rates are
//! broadened with the same kernel that damps the time integral.

use std::f64::consts::PI;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::operator::{
    c, max_abs, BipartiteSystem, CMatrix, DensityMatrix, HermitianOperator, Spectrum, C64,
};
use crate::report::{FlowReport, Method};

/// Regularization of energy-conserving delta functions. Each kernel doubles
/// as the damping of one-sided time integrals: `Re ∫₀^∞ e^{iΩτ} d(τ) dτ = π δ_η(Ω)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Broadening {
    /// Normalized Gaussian of standard deviation `η`; damping `exp(-η²τ²/2)`.
    Gaussian,
    /// Lorentzian of half-width `η`; damping `exp(-ητ)`.
    Lorentzian,
}

impl Broadening {
    pub fn delta(self, x: f64, eta: f64) -> f64 {
        match self {
            Broadening::Gaussian => {
                (-(x * x) / (2.0 * eta * eta)).exp() / ((2.0 * PI).sqrt() * eta)
            }
            Broadening::Lorentzian => eta / (PI * (x * x + eta * eta)),
        }
    }

    pub fn damping(self, tau: f64, eta: f64) -> f64 {
        match self {
            Broadening::Gaussian => (-0.5 * eta * eta * tau * tau).exp(),
            Broadening::Lorentzian => (-eta * tau).exp(),
        }
    }

    /// Time after which the damping at `eta` drops below `e^{-35}`.
    fn horizon(self, eta: f64) -> f64 {
        match self {
            Broadening::Gaussian => 70f64.sqrt() / eta,
            Broadening::Lorentzian => 35.0 / eta,
        }
    }

    /// Leading power of the bias in `η` for smooth spectra.
    fn order(self) -> i32 {
        match self {
            Broadening::Gaussian => 2,
            Broadening::Lorentzian => 1,
        }
    }
}

/// Three times the mean level spacing of `H_A + H_B`.
pub fn default_eta(system: &BipartiteSystem) -> f64 {
    let mut e: Vec<f64> = Vec::with_capacity(system.dim());
    for ea in system.h_a().spectrum().energies {
        for eb in system.h_b().spectrum().energies.iter() {
            e.push(ea + eb);
        }
    }
    let (lo, hi) = e.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &x| (l.min(x), h.max(x)));
    let spacing = if e.len() > 1 { (hi - lo) / (e.len() - 1) as f64 } else { 1.0 };
    3.0 * spacing.max(f64::MIN_POSITIVE)
}

/// Uniform grid `τ_k = k·step`, `k = 0..len`, with an odd number of points.
#[derive(Clone, Debug, PartialEq)]
pub struct TauGrid {
    pub step: f64,
    pub len: usize,
}

impl TauGrid {
    pub fn new(step: f64, len: usize) -> Result<Self> {
        if !(step > 0.0) || len < 3 {
            return Err(Error::InvalidArgument("tau grid needs step > 0 and >= 3 points".into()));
        }
        Ok(Self { step, len: len | 1 })
    }

    /// Grid long enough for the damping at `eta / 2` and fine enough for
    /// oscillations up to `max_frequency`.
    pub fn covering(broadening: Broadening, eta: f64, max_frequency: f64) -> Result<Self> {
        if !(eta > 0.0) {
            return Err(Error::InvalidArgument("eta must be positive".into()));
        }
        let end = broadening.horizon(eta / 2.0);
        let mut step = end / 400.0;
        if max_frequency > 0.0 {
            step = step.min(0.05 / max_frequency);
        }
        Self::new(step, (end / step).ceil() as usize + 1)
    }

    pub fn tau(&self, k: usize) -> f64 {
        k as f64 * self.step
    }

    pub fn end(&self) -> f64 {
        self.tau(self.len - 1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CorrelatorKind {
    /// `C_ij(τ) = Tr[B_i(τ) B_j R_B]`.
    Bath,
    /// `K^{N,M}_ij(τ) = Tr[A_i(τ) R_A^N A_j R_A^{M-N}] / S_M`.
    MultiWorld { n: u32, m: u32 },
}

/// Two-point correlator sampled on `τ ≥ 0`. Negative times follow from
/// `X_ij(-τ) = conj(X_ji(τ))`, valid for Hermitian operators and stationary states.
#[derive(Clone, Debug)]
pub struct Correlator {
    pub kind: CorrelatorKind,
    pub grid: TauGrid,
    count: usize,
    values: Vec<C64>,
}

impl Correlator {
    pub fn count(&self) -> usize {
        self.count
    }

    pub fn at(&self, i: usize, j: usize, k: usize) -> C64 {
        self.values[(i * self.count + j) * self.grid.len + k]
    }

    pub fn at_negative(&self, i: usize, j: usize, k: usize) -> C64 {
        self.at(j, i, k).conj()
    }
}

fn check_stationary(state: &DensityMatrix, h: &HermitianOperator) -> Result<()> {
    if state.dim() != h.dim() {
        return Err(Error::Dimension("state and Hamiltonian differ in size".into()));
    }
    let comm = state.matrix() * h.matrix() - h.matrix() * state.matrix();
    let dev = max_abs(&comm);
    if dev > 1e-10 {
        return Err(Error::NonStationary(dev));
    }
    Ok(())
}

fn int_power(x: &CMatrix, n: u32) -> CMatrix {
    let mut out = CMatrix::identity(x.nrows(), x.ncols());
    for _ in 0..n {
        out = &out * x;
    }
    out
}

/// `Tr[X_i(τ) P X_j Q] / norm` on the grid, via the eigenbasis of `h`.
fn two_point(
    ops: &[HermitianOperator],
    spec: &Spectrum,
    p: &CMatrix,
    q: &CMatrix,
    norm: f64,
    grid: &TauGrid,
    kind: CorrelatorKind,
) -> Result<Correlator> {
    let d = spec.dim();
    for op in ops {
        if op.dim() != d {
            return Err(Error::Dimension("correlator operator has wrong size".into()));
        }
    }
    let x: Vec<CMatrix> = ops.iter().map(|o| spec.to_eigenbasis(o.matrix())).collect();
    let pe = spec.to_eigenbasis(p);
    let qe = spec.to_eigenbasis(q);
    let count = ops.len();
    let mut values = vec![c(0.0); count * count * grid.len];
    for i in 0..count {
        for j in 0..count {
            let y = &pe * &x[j] * &qe;
            // weights w_kl = X_i,kl Y_lk at Bohr frequency E_k - E_l
            let mut lines: Vec<(f64, C64)> = Vec::new();
            for k in 0..d {
                for l in 0..d {
                    let w = x[i][(k, l)] * y[(l, k)];
                    if w.norm() > 0.0 {
                        lines.push((spec.energies[k] - spec.energies[l], w / norm));
                    }
                }
            }
            let base = (i * count + j) * grid.len;
            for k in 0..grid.len {
                let t = grid.tau(k);
                values[base + k] = lines.iter().map(|&(w, a)| a * C64::from_polar(1.0, w * t)).sum();
            }
        }
    }
    Ok(Correlator { kind, grid: grid.clone(), count, values })
}

/// Bath correlator `C_ij(τ) = Tr_B[B_i(τ) B_j R_B]`.
pub fn bath_correlator(
    state: &DensityMatrix,
    ops: &[HermitianOperator],
    h: &HermitianOperator,
    grid: &TauGrid,
) -> Result<Correlator> {
    check_stationary(state, h)?;
    let id = CMatrix::identity(h.dim(), h.dim());
    two_point(ops, &h.spectrum(), &id, state.matrix(), 1.0, grid, CorrelatorKind::Bath)
}

/// Two-time bath correlator `G_ij(t, t-τ) = Tr[B_i(t) B_j(t-τ) R_B]` for a
/// state `R_B` given at time zero that need not commute with `h`. With
/// `connected`, the product of means `⟨B_i(t)⟩⟨B_j(t-τ)⟩` is subtracted.
/// The negative-`τ` branch `G_ij(t-τ, t)` is the Hermitian conjugate, so the
/// result plugs into [`w_block`] as the bath correlator at observation time `t`.
pub fn two_time_bath_correlator(
    initial: &DensityMatrix,
    ops: &[HermitianOperator],
    h: &HermitianOperator,
    t: f64,
    grid: &TauGrid,
    connected: bool,
) -> Result<Correlator> {
    let spec = h.spectrum();
    let d = spec.dim();
    if initial.dim() != d || ops.iter().any(|o| o.dim() != d) {
        return Err(Error::Dimension("bath operators and state differ in size".into()));
    }
    let e = &spec.energies;
    let x: Vec<CMatrix> = ops.iter().map(|o| spec.to_eigenbasis(o.matrix())).collect();
    let r0 = spec.to_eigenbasis(initial.matrix());
    let at_time = |s: f64| {
        CMatrix::from_fn(d, d, |m, k| r0[(m, k)] * C64::from_polar(1.0, -(e[m] - e[k]) * s))
    };
    let mean = |op: &CMatrix, r: &CMatrix| (op * r).trace();
    let count = ops.len();
    let mut values = vec![c(0.0); count * count * grid.len];
    for k in 0..grid.len {
        let tau = grid.tau(k);
        let r_early = at_time(t - tau);
        let r_now = at_time(t);
        // B_i(τ) in the eigenbasis
        let phases = CMatrix::from_fn(d, d, |a, b| C64::from_polar(1.0, (e[a] - e[b]) * tau));
        for i in 0..count {
            let xi = x[i].component_mul(&phases);
            for j in 0..count {
                let mut g = (&xi * &x[j] * &r_early).trace();
                if connected {
                    g -= mean(&x[i], &r_now) * mean(&x[j], &r_early);
                }
                values[(i * count + j) * grid.len + k] = g;
            }
        }
    }
    Ok(Correlator { kind: CorrelatorKind::Bath, grid: grid.clone(), count, values })
}

/// Multi-world correlator `K^{N,M}_ij(τ) = Tr_A[A_i(τ) R_A^N A_j R_A^{M-N}] / S_M`.
pub fn multiworld_correlator(
    state: &DensityMatrix,
    ops: &[HermitianOperator],
    h: &HermitianOperator,
    n: u32,
    m: u32,
    grid: &TauGrid,
) -> Result<Correlator> {
    if n > m || m == 0 {
        return Err(Error::InvalidArgument(format!("need 0 <= N <= M, M >= 1 (got N={n}, M={m})")));
    }
    check_stationary(state, h)?;
    let r = state.matrix();
    let s_m = crate::operator::power_trace(r, m).re;
    let p = int_power(r, n);
    let q = int_power(r, m - n);
    two_point(ops, &h.spectrum(), &p, &q, s_m, grid, CorrelatorKind::MultiWorld { n, m })
}

/// The block `W(τ)` for `t₁ - t₂ = τ ≥ 0`, including `λ²`.
#[derive(Clone, Debug)]
pub struct WBlock {
    pub m: u32,
    pub grid: TauGrid,
    pub values: Vec<f64>,
}

/// Assembles `W = -C_ij K⁰_ij(τ) - C_ij K⁰_ij(-τ) + C_ji(-τ) K¹_ij(τ) + C_ij(τ) K¹_ji(-τ)`
/// summed over coupling terms, from a bath correlator and the `N = 0, 1`
/// multi-world correlators of the same order `M`.
pub fn w_block(c: &Correlator, k0: &Correlator, k1: &Correlator, lambda: f64) -> Result<WBlock> {
    let m = match (c.kind, k0.kind, k1.kind) {
        (
            CorrelatorKind::Bath,
            CorrelatorKind::MultiWorld { n: 0, m },
            CorrelatorKind::MultiWorld { n: 1, m: m1 },
        ) if m == m1 => m,
        _ => return Err(Error::InvalidArgument("w_block needs C, K^{0,M} and K^{1,M}".into())),
    };
    if c.grid != k0.grid || c.grid != k1.grid {
        return Err(Error::InvalidArgument("correlators sampled on different grids".into()));
    }
    if c.count() != k0.count() || c.count() != k1.count() {
        return Err(Error::Dimension("correlators have different numbers of operators".into()));
    }
    let n = c.count();
    let l2 = lambda * lambda;
    let values = (0..c.grid.len)
        .map(|k| {
            let mut w = C64::new(0.0, 0.0);
            for i in 0..n {
                for j in 0..n {
                    w -= c.at(i, j, k) * k0.at(i, j, k);
                    w -= c.at_negative(j, i, k) * k0.at_negative(j, i, k);
                    w += c.at_negative(j, i, k) * k1.at(i, j, k);
                    w += c.at(i, j, k) * k1.at_negative(j, i, k);
                }
            }
            l2 * w.re
        })
        .collect();
    Ok(WBlock { m, grid: c.grid.clone(), values })
}

fn simpson(grid: &TauGrid, f: impl Fn(usize) -> f64) -> f64 {
    let n = grid.len;
    let mut s = f(0) + f(n - 1);
    for k in 1..n - 1 {
        s += if k % 2 == 1 { 4.0 * f(k) } else { 2.0 * f(k) };
    }
    s * grid.step / 3.0
}

impl WBlock {
    /// `M ∫₀^∞ W(τ) d(τ) dτ` with the damping of `broadening` at `eta`.
    pub fn damped_integral(&self, broadening: Broadening, eta: f64) -> Result<f64> {
        if !(eta > 0.0) {
            return Err(Error::InvalidArgument("eta must be positive".into()));
        }
        if broadening.damping(self.grid.end(), eta) > 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "tau grid ends at {} before the damping at eta = {eta} has decayed",
                self.grid.end()
            )));
        }
        let integral = simpson(&self.grid, |k| self.values[k] * broadening.damping(self.grid.tau(k), eta));
        Ok(self.m as f64 * integral)
    }

    fn magnitude(&self, broadening: Broadening, eta: f64) -> f64 {
        self.m as f64 * simpson(&self.grid, |k| self.values[k].abs() * broadening.damping(self.grid.tau(k), eta))
    }
}

/// Second-order flow `F_M = M ∫₀^∞ W(τ) dτ`, evaluated at `eta` and `eta/2`
/// and extrapolated to `η → 0`. Fails if the two evaluations disagree by
/// more than 5% of the extrapolated value.
pub fn flow_second_order(w: &WBlock, broadening: Broadening, eta: f64) -> Result<FlowReport> {
    let f1 = w.damped_integral(broadening, eta)?;
    let f2 = w.damped_integral(broadening, eta / 2.0)?;
    let k = 2f64.powi(broadening.order());
    let extrapolated = (k * f2 - f1) / (k - 1.0);
    let floor = 1e-9 * w.magnitude(broadening, eta / 2.0);
    let spread = (f1 - f2).abs() / extrapolated.abs().max(floor).max(f64::MIN_POSITIVE);
    if spread > 0.05 {
        return Err(Error::NonConvergent(spread));
    }
    Ok(FlowReport::new(w.m as f64, extrapolated, Method::SecondOrder)
        .with("eta", eta)
        .with("flow_eta", f1)
        .with("flow_half_eta", f2)
        .with("spread", spread))
}

/// Second-order flow at a single, finite `eta` (no extrapolation). Suitable
/// for discrete spectra, where `η` plays the role of the switching rate.
pub fn flow_second_order_fixed(w: &WBlock, broadening: Broadening, eta: f64) -> Result<FlowReport> {
    let f = w.damped_integral(broadening, eta)?;
    Ok(FlowReport::new(w.m as f64, f, Method::SecondOrder).with("eta", eta))
}

/// Correlators, block and fixed-`η` flow for a product of stationary states.
pub fn second_order_from_states(
    system: &BipartiteSystem,
    state_a: &DensityMatrix,
    state_b: &DensityMatrix,
    m: u32,
    broadening: Broadening,
    eta: f64,
) -> Result<WBlock> {
    let a_ops: Vec<HermitianOperator> = system.couplings().iter().map(|(a, _)| a.clone()).collect();
    let b_ops: Vec<HermitianOperator> = system.couplings().iter().map(|(_, b)| b.clone()).collect();
    let bandwidth = |h: &HermitianOperator| {
        let e = h.spectrum().energies;
        e[e.len() - 1] - e[0]
    };
    let grid = TauGrid::covering(broadening, eta, bandwidth(system.h_a()) + bandwidth(system.h_b()))?;
    let cb = bath_correlator(state_b, &b_ops, system.h_b(), &grid)?;
    let k0 = multiworld_correlator(state_a, &a_ops, system.h_a(), 0, m, &grid)?;
    let k1 = multiworld_correlator(state_a, &a_ops, system.h_a(), 1.min(m), m, &grid)?;
    w_block(&cb, &k0, &k1, system.lambda())
}

/// Golden-rule rates `Γ[aα → bβ] = 2π |H^{AB}_{aα,bβ}|² δ_η(E_a + E_α - E_b - E_β)`
/// between product eigenstates (composite index `a·dim_B + α`).
#[derive(Clone, Debug)]
pub struct RateTable {
    pub dims: (usize, usize),
    pub energies_a: Vec<f64>,
    pub energies_b: Vec<f64>,
    pub rates: DMatrix<f64>,
    pub broadening: Broadening,
    pub eta: f64,
}

impl RateTable {
    pub fn rate(&self, a: usize, alpha: usize, b: usize, beta: usize) -> f64 {
        let db = self.dims.1;
        self.rates[(a * db + alpha, b * db + beta)]
    }

    /// `Γ_{a→b} = Σ_{αβ} Γ[aα → bβ] p_α`.
    pub fn a_transitions(&self, p_b: &[f64]) -> DMatrix<f64> {
        let (da, db) = self.dims;
        DMatrix::from_fn(da, da, |a, b| {
            let mut s = 0.0;
            for alpha in 0..db {
                for beta in 0..db {
                    s += self.rate(a, alpha, b, beta) * p_b[alpha];
                }
            }
            s
        })
    }

    /// Largest rate in the table.
    pub fn scale(&self) -> f64 {
        self.rates.iter().fold(0.0, |m: f64, &x| m.max(x))
    }
}

pub fn golden_rule_rates(system: &BipartiteSystem, broadening: Broadening, eta: f64) -> Result<RateTable> {
    if !(eta > 0.0) {
        return Err(Error::InvalidArgument("eta must be positive".into()));
    }
    let (v, ea, eb) = system.coupling_in_eigenbasis();
    let (da, db) = system.dims();
    let d = da * db;
    let rates = DMatrix::from_fn(d, d, |x, y| {
        let (a, alpha) = (x / db, x % db);
        let (b, beta) = (y / db, y % db);
        if a == b || alpha == beta {
            return 0.0;
        }
        let de = ea[a] + eb[alpha] - ea[b] - eb[beta];
        2.0 * PI * v[(x, y)].norm_sqr() * broadening.delta(de, eta)
    });
    Ok(RateTable { dims: (da, db), energies_a: ea, energies_b: eb, rates, broadening, eta })
}

fn check_probabilities(p: &[f64], n: usize, side: &str) -> Result<()> {
    if p.len() != n {
        return Err(Error::Dimension(format!("{side} probabilities have length {}, expected {n}", p.len())));
    }
    let total: f64 = p.iter().sum();
    if p.iter().any(|&x| !(x >= 0.0)) || (total - 1.0).abs() > 1e-10 {
        return Err(Error::InvalidState(format!("{side} probabilities are not normalized")));
    }
    Ok(())
}

/// Second-order Rényi flow of A for diagonal ensembles `p_A ⊗ p_B`:
/// `S_M F_M = M Σ_{ab} Γ_{a→b} p_a (p_b^{M-1} - p_a^{M-1})`.
/// The breakdown carries the ungrouped sum (`form1`) for comparison and `S_M`.
pub fn flow_2nd_states(rates: &RateTable, p_a: &[f64], p_b: &[f64], m: f64) -> Result<FlowReport> {
    let (da, db) = rates.dims;
    check_probabilities(p_a, da, "A")?;
    check_probabilities(p_b, db, "B")?;
    if !(m > 0.0) {
        return Err(Error::InvalidArgument("M must be positive".into()));
    }
    let pw = |p: f64| if p == 0.0 { 0.0 } else { p.powf(m - 1.0) };
    let s_m: f64 = p_a.iter().map(|&p| if p == 0.0 { 0.0 } else { p.powf(m) }).sum();

    let g = rates.a_transitions(p_b);
    let mut form2 = 0.0;
    for a in 0..da {
        for b in 0..da {
            form2 += g[(a, b)] * p_a[a] * (pw(p_a[b]) - pw(p_a[a]));
        }
    }
    form2 *= m;

    let mut form1 = 0.0;
    for a in 0..da {
        for alpha in 0..db {
            for b in 0..da {
                for beta in 0..db {
                    let r = rates.rate(a, alpha, b, beta);
                    form1 += r * (p_a[b] * p_b[beta] - p_a[a] * p_b[alpha]) * pw(p_a[a]);
                }
            }
        }
    }
    form1 *= m;

    Ok(FlowReport::new(m, form2 / s_m, Method::SecondOrder)
        .with("s_m", s_m)
        .with("form1", form1 / s_m)
        .with("form2", form2 / s_m))
}

/// Zero-temperature limit: `-M Γ₀` with `Γ₀` the total escape rate of the A ground state.
pub fn zero_temperature_flow(rates: &RateTable, p_b: &[f64], m: f64) -> FlowReport {
    let g = rates.a_transitions(p_b);
    let gamma0: f64 = (1..rates.dims.0).map(|b| g[(0, b)]).sum();
    FlowReport::new(m, -m * gamma0, Method::SecondOrder).with("gamma0", gamma0)
}

/// Second-order Shannon flow of A, `dS/dt = -Σ ln(p_b/p_a) Γ_{a→b} p_a`,
/// together with the energy flow into A, `dE/dt = Σ Γ_{a→b}(E_b - E_a) p_a`
/// (breakdown entry `energy_flow`).
pub fn flow_2nd_shannon(rates: &RateTable, p_a: &[f64], p_b: &[f64]) -> Result<FlowReport> {
    let (da, db) = rates.dims;
    check_probabilities(p_a, da, "A")?;
    check_probabilities(p_b, db, "B")?;
    let g = rates.a_transitions(p_b);
    let mut ds = 0.0;
    let mut de = 0.0;
    for a in 0..da {
        for b in 0..da {
            let current = g[(a, b)] * p_a[a];
            if current == 0.0 {
                continue;
            }
            if p_a[b] == 0.0 {
                return Err(Error::ZeroProbability(b));
            }
            ds -= (p_a[b] / p_a[a]).ln() * current;
            de += (rates.energies_a[b] - rates.energies_a[a]) * current;
        }
    }
    Ok(FlowReport::new(1.0, ds, Method::SecondOrder).with("energy_flow", de))
}

/// Fourth-order amplitudes `A_ab` (zero on the diagonal) with Gaussian
/// energy conservation and a Lorentzian-regularized principal value.
pub fn amplitudes_4th(system: &BipartiteSystem, p_a: &[f64], p_b: &[f64], eta: f64) -> Result<CMatrix> {
    let (da, db) = system.dims();
    check_probabilities(p_a, da, "A")?;
    check_probabilities(p_b, db, "B")?;
    if !(eta > 0.0) {
        return Err(Error::InvalidArgument("eta must be positive".into()));
    }
    let (v, ea, eb) = system.coupling_in_eigenbasis();
    let idx = |a: usize, alpha: usize| a * db + alpha;
    let mut amp = CMatrix::zeros(da, da);
    for a in 0..da {
        for b in 0..da {
            if a == b {
                continue;
            }
            let mut s = c(0.0);
            for cc in 0..da {
                for alpha in 0..db {
                    for beta in 0..db {
                        let h = v[(idx(a, alpha), idx(cc, beta))] * v[(idx(cc, beta), idx(b, alpha))];
                        if h.norm() == 0.0 {
                            continue;
                        }
                        let x = ea[a] + eb[alpha] - ea[cc] - eb[beta];
                        let on_shell = PI
                            * ((p_a[a] + p_a[b]) * p_b[alpha] - 2.0 * p_a[cc] * p_b[beta])
                            * Broadening::Gaussian.delta(x, eta);
                        let principal = (p_a[a] - p_a[b]) * x / (x * x + eta * eta);
                        s += h * C64::new(on_shell, -principal);
                    }
                }
            }
            amp[(a, b)] = s;
        }
    }
    Ok(amp)
}

fn divided_power(pa: f64, pb: f64, m: f64) -> f64 {
    if (pa - pb).abs() < 1e-12 {
        let p = 0.5 * (pa + pb);
        (m - 1.0) * p.powf(m - 2.0)
    } else {
        (pa.powf(m - 1.0) - pb.powf(m - 1.0)) / (pa - pb)
    }
}

fn divided_log(pa: f64, pb: f64) -> f64 {
    if (pa - pb).abs() < 1e-12 {
        2.0 / (pa + pb)
    } else {
        (pa.ln() - pb.ln()) / (pa - pb)
    }
}

/// Fourth-order two-world contribution to the Rényi flow of A:
/// `dS_M/dt = π Σ_{a≠b} |A_ab|² δ_η(E_a - E_b) (p_a^{M-1} - p_b^{M-1})/(p_a - p_b)`.
/// The report holds `F_M = (dS_M/dt)/S_M`; breakdown has `ds_dt` and `s_m`.
pub fn flow_4th_order(
    system: &BipartiteSystem,
    p_a: &[f64],
    p_b: &[f64],
    m: f64,
    eta: f64,
) -> Result<FlowReport> {
    let amp = amplitudes_4th(system, p_a, p_b, eta)?;
    let ea = system.h_a().spectrum().energies;
    let mut ds = 0.0;
    for a in 0..ea.len() {
        for b in 0..ea.len() {
            if a != b {
                let weight = amp[(a, b)].norm_sqr() * Broadening::Gaussian.delta(ea[a] - ea[b], eta);
                if weight > 0.0 {
                    ds += PI * weight * divided_power(p_a[a], p_a[b], m);
                }
            }
        }
    }
    let s_m: f64 = p_a.iter().map(|&p| if p == 0.0 { 0.0 } else { p.powf(m) }).sum();
    Ok(FlowReport::new(m, ds / s_m, Method::FourthOrder).with("ds_dt", ds).with("s_m", s_m))
}

/// Fourth-order Shannon flow, the `M → 1` derivative of [`flow_4th_order`]:
/// `dS/dt = -π Σ_{a≠b} |A_ab|² δ_η(E_a - E_b) (ln p_a - ln p_b)/(p_a - p_b)`.
pub fn shannon_flow_4th_order(system: &BipartiteSystem, p_a: &[f64], p_b: &[f64], eta: f64) -> Result<FlowReport> {
    let amp = amplitudes_4th(system, p_a, p_b, eta)?;
    let ea = system.h_a().spectrum().energies;
    let mut ds = 0.0;
    for a in 0..ea.len() {
        for b in 0..ea.len() {
            if a == b {
                continue;
            }
            let weight = amp[(a, b)].norm_sqr() * Broadening::Gaussian.delta(ea[a] - ea[b], eta);
            if weight == 0.0 {
                continue;
            }
            if p_a[a] == 0.0 || p_a[b] == 0.0 {
                return Err(Error::ZeroProbability(if p_a[a] == 0.0 { a } else { b }));
            }
            ds -= PI * weight * divided_log(p_a[a], p_a[b]);
        }
    }
    Ok(FlowReport::new(1.0, ds, Method::FourthOrder))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::{gibbs_weights, remove_diagonal_blocks, thermal_state};
    use crate::random::{random_hermitian, random_probabilities};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sx() -> HermitianOperator {
        HermitianOperator::new(CMatrix::from_row_slice(2, 2, &[c(0.0), c(1.0), c(1.0), c(0.0)])).unwrap()
    }

    fn random_system(da: usize, db: usize, lambda: f64, seed: u64) -> BipartiteSystem {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ha = random_hermitian(da, &mut rng);
        let hb = random_hermitian(db, &mut rng);
        let a = remove_diagonal_blocks(random_hermitian(da, &mut rng).matrix(), &ha);
        let b = remove_diagonal_blocks(random_hermitian(db, &mut rng).matrix(), &hb);
        BipartiteSystem::new(
            ha,
            hb,
            vec![(HermitianOperator::new(a).unwrap(), HermitianOperator::new(b).unwrap())],
            lambda,
        )
        .unwrap()
    }

    fn diag_state(h: &HermitianOperator, p: &[f64]) -> DensityMatrix {
        let spec = h.spectrum();
        let d = CMatrix::from_diagonal(&nalgebra::DVector::from_iterator(p.len(), p.iter().map(|&x| c(x))));
        DensityMatrix::new(spec.from_eigenbasis(&d)).unwrap()
    }

    #[test]
    fn thermal_qubit_bath_correlator_at_zero() {
        let h = HermitianOperator::diagonal(&[0.0, 1.0]);
        let rho = thermal_state(&h, 0.8).unwrap();
        let grid = TauGrid::new(0.1, 5).unwrap();
        let cb = bath_correlator(&rho, &[sx()], &h, &grid).unwrap();
        assert!((cb.at(0, 0, 0) - c(1.0)).norm() < 1e-14);
    }

    #[test]
    fn infinite_temperature_correlator() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h = random_hermitian(3, &mut rng);
        let b = random_hermitian(3, &mut rng);
        let rho = DensityMatrix::maximally_mixed(3);
        let grid = TauGrid::new(0.3, 7).unwrap();
        let cb = bath_correlator(&rho, &[b.clone()], &h, &grid).unwrap();
        for k in 0..grid.len {
            let u = h.spectrum().apply(|e| C64::from_polar(1.0, -e * grid.tau(k)));
            let bt = u.adjoint() * b.matrix() * &u;
            let expect = crate::operator::trace(&(bt * b.matrix())) / 3.0;
            assert!((cb.at(0, 0, k) - expect).norm() < 1e-12);
        }
    }

    #[test]
    fn two_time_correlator_reduces_to_stationary_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let h = random_hermitian(3, &mut rng);
        let b = random_hermitian(3, &mut rng);
        let rho = thermal_state(&h, 0.7).unwrap();
        let grid = TauGrid::new(0.25, 9).unwrap();
        let stationary = bath_correlator(&rho, &[b.clone()], &h, &grid).unwrap();
        let two_time = two_time_bath_correlator(&rho, &[b], &h, 3.7, &grid, false).unwrap();
        for k in 0..grid.len {
            assert!((stationary.at(0, 0, k) - two_time.at(0, 0, k)).norm() < 1e-12);
        }
    }

    #[test]
    fn connected_correlator_vanishes_for_numbers() {
        // operators proportional to the identity act like classical numbers
        let h = HermitianOperator::diagonal(&[0.0, 1.3]);
        let b = HermitianOperator::identity(2).scale(0.6);
        let psi = nalgebra::DVector::from_vec(vec![c(0.6), C64::new(0.0, 0.8)]);
        let rho = DensityMatrix::pure(&psi).unwrap();
        let grid = TauGrid::new(0.2, 11).unwrap();
        let g = two_time_bath_correlator(&rho, &[b], &h, 0.4, &grid, true).unwrap();
        assert!((0..grid.len).all(|k| g.at(0, 0, k).norm() < 1e-14));
    }

    #[test]
    fn nonstationary_state_is_rejected() {
        let h = HermitianOperator::diagonal(&[0.0, 1.0]);
        let rho = DensityMatrix::new(CMatrix::from_element(2, 2, c(0.5))).unwrap();
        let grid = TauGrid::new(0.1, 3).unwrap();
        assert!(matches!(bath_correlator(&rho, &[sx()], &h, &grid), Err(Error::NonStationary(_))));
    }

    #[test]
    fn equal_time_multiworld_correlator() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let h = random_hermitian(4, &mut rng);
        let ops = [random_hermitian(4, &mut rng), random_hermitian(4, &mut rng)];
        let rho = thermal_state(&h, 0.6).unwrap();
        let grid = TauGrid::new(0.1, 3).unwrap();
        let k = multiworld_correlator(&rho, &ops, &h, 0, 3, &grid).unwrap();
        let r3 = rho.matrix() * rho.matrix() * rho.matrix();
        let s3 = crate::operator::trace(&r3).re;
        for i in 0..2 {
            for j in 0..2 {
                let expect = crate::operator::trace(&(ops[i].matrix() * ops[j].matrix() * &r3)) / s3;
                assert!((k.at(i, j, 0) - expect).norm() < 1e-12);
            }
        }
        // N = 0, M = 1 coincides with the bath form
        let k01 = multiworld_correlator(&rho, &ops, &h, 0, 1, &grid).unwrap();
        let cb = bath_correlator(&rho, &ops, &h, &grid).unwrap();
        for k in 0..grid.len {
            assert!((k01.at(0, 1, k) - cb.at(0, 1, k)).norm() < 1e-12);
        }
    }

    #[test]
    fn single_world_block_integrates_to_zero() {
        let sys = random_system(3, 3, 0.3, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let ra = diag_state(sys.h_a(), &random_probabilities(3, &mut rng));
        let rb = diag_state(sys.h_b(), &random_probabilities(3, &mut rng));
        let w = second_order_from_states(&sys, &ra, &rb, 1, Broadening::Lorentzian, 0.1).unwrap();
        assert!(w.values.iter().all(|x| x.abs() < 1e-14));
    }

    #[test]
    fn block_matches_rate_route_with_matching_kernel() {
        let sys = random_system(3, 4, 0.2, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let pa = random_probabilities(3, &mut rng);
        let pb = random_probabilities(4, &mut rng);
        let ra = diag_state(sys.h_a(), &pa);
        let rb = diag_state(sys.h_b(), &pb);
        for broadening in [Broadening::Lorentzian, Broadening::Gaussian] {
            let eta = 0.15;
            let rates = golden_rule_rates(&sys, broadening, eta).unwrap();
            for m in [2u32, 3] {
                let w = second_order_from_states(&sys, &ra, &rb, m, broadening, eta).unwrap();
                let time = flow_second_order_fixed(&w, broadening, eta).unwrap().flow;
                let rate = flow_2nd_states(&rates, &pa, &pb, m as f64).unwrap().flow;
                assert!((time - rate).abs() < 1e-6 * rate.abs(), "{broadening:?} M={m}: {time} vs {rate}");
            }
        }
    }

    #[test]
    fn printed_fourth_term_misses_half_the_flow() {
        // With `+C_ij(τ)K⁰_ij(τ)` as the fourth term, the block loses half of its real part.
        let sys = random_system(2, 3, 0.3, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let pa = random_probabilities(2, &mut rng);
        let pb = random_probabilities(3, &mut rng);
        let ra = diag_state(sys.h_a(), &pa);
        let rb = diag_state(sys.h_b(), &pb);
        let a_ops = vec![sys.couplings()[0].0.clone()];
        let b_ops = vec![sys.couplings()[0].1.clone()];
        let eta = 0.1;
        let grid = TauGrid::covering(Broadening::Lorentzian, eta, 10.0).unwrap();
        let cb = bath_correlator(&rb, &b_ops, sys.h_b(), &grid).unwrap();
        let k0 = multiworld_correlator(&ra, &a_ops, sys.h_a(), 0, 2, &grid).unwrap();
        let k1 = multiworld_correlator(&ra, &a_ops, sys.h_a(), 1, 2, &grid).unwrap();
        let printed: Vec<f64> = (0..grid.len)
            .map(|k| {
                let w = -cb.at(0, 0, k) * k0.at(0, 0, k) - cb.at_negative(0, 0, k) * k0.at_negative(0, 0, k)
                    + cb.at_negative(0, 0, k) * k1.at(0, 0, k)
                    + cb.at(0, 0, k) * k0.at(0, 0, k);
                0.09 * w.re
            })
            .collect();
        let wp = WBlock { m: 2, grid: grid.clone(), values: printed };
        let corrected = w_block(&cb, &k0, &k1, 0.3).unwrap();
        let fp = wp.damped_integral(Broadening::Lorentzian, eta).unwrap();
        let fc = corrected.damped_integral(Broadening::Lorentzian, eta).unwrap();
        let rates = golden_rule_rates(&sys, Broadening::Lorentzian, eta).unwrap();
        let reference = flow_2nd_states(&rates, &pa, &pb, 2.0).unwrap().flow;
        assert!((fc - reference).abs() < 1e-6 * reference.abs());
        assert!((fp / reference - 0.5).abs() < 1e-6, "{fp} vs {reference}");
    }

    #[test]
    fn unitarity_sum_rule() {
        // Out-scattering part of the single-world block for a pure product state.
        let sys = random_system(3, 3, 0.4, 9);
        let eta = 0.2;
        let rates = golden_rule_rates(&sys, Broadening::Lorentzian, eta).unwrap();
        let a_ops = vec![sys.couplings()[0].0.clone()];
        let b_ops = vec![sys.couplings()[0].1.clone()];
        let grid = TauGrid::covering(Broadening::Lorentzian, eta, 10.0).unwrap();
        for (a, alpha) in [(0, 0), (1, 2), (2, 1)] {
            let mut pa = vec![0.0; 3];
            pa[a] = 1.0;
            let mut pb = vec![0.0; 3];
            pb[alpha] = 1.0;
            let ra = diag_state(sys.h_a(), &pa);
            let rb = diag_state(sys.h_b(), &pb);
            let cb = bath_correlator(&rb, &b_ops, sys.h_b(), &grid).unwrap();
            let k0 = multiworld_correlator(&ra, &a_ops, sys.h_a(), 0, 1, &grid).unwrap();
            let out = WBlock {
                m: 1,
                grid: grid.clone(),
                values: (0..grid.len).map(|k| -0.32 * (cb.at(0, 0, k) * k0.at(0, 0, k)).re).collect(),
            };
            let integral = out.damped_integral(Broadening::Lorentzian, eta).unwrap();
            let total: f64 = (0..3).flat_map(|b| (0..3).map(move |beta| (b, beta))).map(|(b, beta)| rates.rate(a, alpha, b, beta)).sum();
            assert!((integral + total).abs() < 1e-6 * total, "{integral} vs {total}");
        }
    }

    #[test]
    fn richardson_rejects_discrete_spectrum_at_large_eta() {
        let sys = random_system(2, 2, 0.3, 10);
        let ra = diag_state(sys.h_a(), &[0.8, 0.2]);
        let rb = diag_state(sys.h_b(), &[0.3, 0.7]);
        let w = second_order_from_states(&sys, &ra, &rb, 2, Broadening::Lorentzian, 0.05).unwrap();
        assert!(matches!(flow_second_order(&w, Broadening::Lorentzian, 0.05), Err(Error::NonConvergent(_))));
    }

    #[test]
    fn zero_coupling_gives_zero_rates() {
        let sys = random_system(2, 3, 0.0, 11);
        let r = golden_rule_rates(&sys, Broadening::Gaussian, 0.1).unwrap();
        assert_eq!(r.scale(), 0.0);
    }

    #[test]
    fn rates_are_symmetric() {
        let sys = random_system(3, 3, 0.5, 12);
        let r = golden_rule_rates(&sys, Broadening::Gaussian, 0.3).unwrap();
        assert!((&r.rates - r.rates.transpose()).abs().max() < 1e-14 * r.scale());
        for a in 0..3 {
            for x in 0..3 {
                for y in 0..3 {
                    assert_eq!(r.rate(a, x, a, y), 0.0);
                    assert_eq!(r.rate(x, a, y, a), 0.0);
                }
            }
        }
    }

    #[test]
    fn resonant_exchange_rate_closed_form() {
        let sp = CMatrix::from_row_slice(2, 2, &[c(0.0), c(0.0), c(1.0), c(0.0)]);
        let sm = sp.adjoint();
        let x = HermitianOperator::new(&sp + &sm).unwrap();
        let y = HermitianOperator::new((&sm - &sp) * C64::i()).unwrap();
        let h = HermitianOperator::diagonal(&[0.0, 1.0]);
        let sys = BipartiteSystem::new(h.clone(), h, vec![(x.clone(), x), (y.clone(), y)], 0.1).unwrap();
        let eta = 0.2;
        let r = golden_rule_rates(&sys, Broadening::Gaussian, eta).unwrap();
        // ⟨01|σxσx + σyσy|10⟩ = 2
        let expect = 2.0 * PI * 0.01 * 4.0 * (-0.0f64).exp() / ((2.0 * PI).sqrt() * eta);
        assert!((r.rate(0, 1, 1, 0) - expect).abs() < 1e-12 * expect);
    }

    #[test]
    fn equal_temperature_flow_vanishes() {
        let h = HermitianOperator::diagonal(&[0.0, 1.0, 2.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let a = remove_diagonal_blocks(random_hermitian(3, &mut rng).matrix(), &h);
        let b = remove_diagonal_blocks(random_hermitian(3, &mut rng).matrix(), &h);
        let sys = BipartiteSystem::new(
            h.clone(),
            h.clone(),
            vec![(HermitianOperator::new(a).unwrap(), HermitianOperator::new(b).unwrap())],
            0.2,
        )
        .unwrap();
        let r = golden_rule_rates(&sys, Broadening::Gaussian, 0.05).unwrap();
        let p = gibbs_weights(&[0.0, 1.0, 2.0], 1.3);
        for m in [2.0, 3.0, 4.0] {
            let f = flow_2nd_states(&r, &p, &p, m).unwrap().flow;
            assert!(f.abs() < 1e-12 * r.scale(), "{f}");
        }
    }

    #[test]
    fn zero_temperature_limit() {
        let sys = random_system(3, 4, 0.3, 14);
        let r = golden_rule_rates(&sys, Broadening::Gaussian, 0.2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let pb = random_probabilities(4, &mut rng);
        let pa = [1.0, 0.0, 0.0];
        for m in [2.0, 3.0] {
            let f = flow_2nd_states(&r, &pa, &pb, m).unwrap().flow;
            let z = zero_temperature_flow(&r, &pb, m).flow;
            assert!((f - z).abs() < 1e-12 * z.abs());
        }
    }

    #[test]
    fn both_forms_agree() {
        let sys = random_system(4, 3, 0.3, 16);
        let r = golden_rule_rates(&sys, Broadening::Lorentzian, 0.3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let pa = random_probabilities(4, &mut rng);
        let pb = random_probabilities(3, &mut rng);
        for m in [1.5, 2.0, 3.0, 5.0] {
            let rep = flow_2nd_states(&r, &pa, &pb, m).unwrap();
            let (f1, f2) = (rep.part("form1").unwrap(), rep.part("form2").unwrap());
            assert!((f1 - f2).abs() < 1e-12 * f2.abs().max(r.scale()));
        }
    }

    #[test]
    fn textbook_relation_for_thermal_a() {
        let sys = random_system(4, 3, 0.3, 18);
        let r = golden_rule_rates(&sys, Broadening::Gaussian, 0.4).unwrap();
        let beta = 0.9;
        let pa = gibbs_weights(&r.energies_a, beta);
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let pb = random_probabilities(3, &mut rng);
        let rep = flow_2nd_shannon(&r, &pa, &pb).unwrap();
        let de = rep.part("energy_flow").unwrap();
        assert!((rep.flow - beta * de).abs() < 1e-12 * de.abs());
    }

    #[test]
    fn shannon_is_derivative_of_renyi_family() {
        let sys = random_system(3, 3, 0.3, 20);
        let r = golden_rule_rates(&sys, Broadening::Gaussian, 0.3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let pa = random_probabilities(3, &mut rng);
        let pb = random_probabilities(3, &mut rng);
        let h = 1e-4;
        let fp = flow_2nd_states(&r, &pa, &pb, 1.0 + h).unwrap().flow;
        let fm = flow_2nd_states(&r, &pa, &pb, 1.0 - h).unwrap().flow;
        let ds = flow_2nd_shannon(&r, &pa, &pb).unwrap().flow;
        assert!((-(fp - fm) / (2.0 * h) - ds).abs() < 1e-4 * ds.abs().max(1e-3));
    }

    #[test]
    fn detailed_balance_saturation_gives_zero_shannon_flow() {
        // A-only rates with p_b Γ_{b→a} = p_a Γ_{a→b}
        let p = [0.5, 0.3, 0.2];
        let mut rates = DMatrix::zeros(3, 3);
        let k = [[0.0, 1.0, 2.0], [1.0, 0.0, 0.5], [2.0, 0.5, 0.0]];
        for a in 0..3 {
            for b in 0..3 {
                rates[(a, b)] = k[a][b] / p[a];
            }
        }
        let table = RateTable {
            dims: (3, 1),
            energies_a: vec![0.0, 1.0, 2.0],
            energies_b: vec![0.0],
            rates,
            broadening: Broadening::Gaussian,
            eta: 1.0,
        };
        let rep = flow_2nd_shannon(&table, &p, &[1.0]).unwrap();
        assert!(rep.flow.abs() < 1e-14);
    }

    #[test]
    fn zero_probability_target_is_an_error() {
        let sys = random_system(2, 2, 0.5, 22);
        let r = golden_rule_rates(&sys, Broadening::Lorentzian, 1.0).unwrap();
        assert!(matches!(flow_2nd_shannon(&r, &[1.0, 0.0], &[0.5, 0.5]), Err(Error::ZeroProbability(1))));
    }

    fn degenerate_pair(lambda: f64) -> BipartiteSystem {
        // A: ground state plus a degenerate excited pair, B: three-level ladder
        let ha = HermitianOperator::diagonal(&[0.0, 1.0, 1.0]);
        let hb = HermitianOperator::diagonal(&[0.0, 1.0, 2.0]);
        let a = CMatrix::from_row_slice(
            3,
            3,
            &[c(0.0), c(1.0), C64::new(0.0, 0.7), c(1.0), c(0.0), c(0.0), C64::new(0.0, -0.7), c(0.0), c(0.0)],
        );
        let b = CMatrix::from_row_slice(3, 3, &[c(0.0), c(1.0), c(0.3), c(1.0), c(0.0), c(0.8), c(0.3), c(0.8), c(0.0)]);
        BipartiteSystem::new(ha, hb, vec![(HermitianOperator::new(a).unwrap(), HermitianOperator::new(b).unwrap())], lambda)
            .unwrap()
    }

    #[test]
    fn fourth_order_amplitudes_vanish_in_equilibrium() {
        let sys = degenerate_pair(0.2);
        let beta = 1.2;
        let pa = gibbs_weights(&[0.0, 1.0, 1.0], beta);
        let pb = gibbs_weights(&[0.0, 1.0, 2.0], beta);
        // only the degenerate pair enters the flow
        let amp = amplitudes_4th(&sys, &pa, &pb, 0.02).unwrap();
        let driven = amplitudes_4th(&sys, &pa, &[0.2, 0.3, 0.5], 0.02).unwrap();
        assert!(driven[(1, 2)].norm() > 1e-3);
        assert!(amp[(1, 2)].norm().max(amp[(2, 1)].norm()) < 1e-12 * driven[(1, 2)].norm());
    }

    #[test]
    fn fourth_order_divided_difference_limit() {
        let sys = degenerate_pair(0.2);
        let pa = gibbs_weights(&[0.0, 1.0, 1.0], 2.0);
        let pb = [0.2, 0.3, 0.5];
        let f2 = flow_4th_order(&sys, &pa, &pb, 2.0, 0.02).unwrap();
        let amp = amplitudes_4th(&sys, &pa, &pb, 0.02).unwrap();
        let expect = 2.0 * PI * amp[(1, 2)].norm_sqr() * Broadening::Gaussian.delta(0.0, 0.02);
        assert!((f2.part("ds_dt").unwrap() - expect).abs() < 1e-12 * expect);
        let shannon = shannon_flow_4th_order(&sys, &pa, &pb, 0.02).unwrap().flow;
        assert!((shannon + expect / pa[1]).abs() < 1e-12 * expect / pa[1]);
        let h = 1e-4;
        let fp = flow_4th_order(&sys, &pa, &pb, 1.0 + h, 0.02).unwrap().flow;
        let fm = flow_4th_order(&sys, &pa, &pb, 1.0 - h, 0.02).unwrap().flow;
        assert!((-(fp - fm) / (2.0 * h) - shannon).abs() < 1e-6 * shannon.abs());
    }
}
