//! Exact time evolution of bipartite density matrices.
//!
//! The integrator is a fixed-step exponential propagator sampled at the step
//! midpoint, `U = exp(-i H(τ + dt/2) dt)`, built from the Hermitian
//! eigen-decomposition of `H` so that every step is unitary to round-off.
//! These routines are the brute-force reference against which the
//! perturbative formulas are checked.

use crate::error::{Error, Result};
use crate::operator::{
    c, max_abs, partial_trace, trace, BipartiteSystem, CMatrix, DensityMatrix, HermitianOperator,
    PseudoDensityMatrix, Subsystem, C64,
};
use crate::report::{FlowReport, Method};

/// Envelope multiplying the coupling `H_AB`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SwitchingProfile {
    /// Coupling fully on at all times.
    None,
    /// `g(τ) = exp(rate (τ - t_end))` for `τ ≤ t_end`, `g = 1` afterwards.
    Exponential { rate: f64 },
}

impl SwitchingProfile {
    pub fn envelope(&self, tau: f64, t_end: f64) -> f64 {
        match *self {
            SwitchingProfile::None => 1.0,
            SwitchingProfile::Exponential { rate } => {
                if tau >= t_end {
                    1.0
                } else {
                    (rate * (tau - t_end)).exp()
                }
            }
        }
    }
}

/// Default switching rate: 5% of the smallest nonzero Bohr frequency of `H_A + H_B`.
pub fn default_switching_rate(system: &BipartiteSystem) -> f64 {
    let free = HermitianOperator::new(system.free_hamiltonian()).expect("Hermitian");
    let w = free.spectrum().min_bohr_frequency(1e-9).unwrap_or(1.0);
    0.05 * w
}

#[derive(Clone, Debug)]
pub struct EvolutionJob {
    pub system: BipartiteSystem,
    pub initial: DensityMatrix,
    pub t_start: f64,
    pub t_end: f64,
    pub dt: f64,
    pub switching: SwitchingProfile,
}

impl EvolutionJob {
    /// Adiabatically switched job that ramps the coupling over `ramp_lengths / rate`.
    pub fn switched(
        system: BipartiteSystem,
        initial: DensityMatrix,
        rate: f64,
        ramp_lengths: f64,
        dt: f64,
    ) -> Self {
        Self {
            system,
            initial,
            t_start: -ramp_lengths / rate,
            t_end: 0.0,
            dt,
            switching: SwitchingProfile::Exponential { rate },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::InvalidArgument(format!("time step {}", self.dt)));
        }
        if !(self.t_end >= self.t_start) {
            return Err(Error::InvalidArgument("t_end precedes t_start".into()));
        }
        if self.initial.dim() != self.system.dim() {
            return Err(Error::Dimension("initial state does not match the system".into()));
        }
        if let SwitchingProfile::Exponential { rate } = self.switching {
            if !(rate > 0.0) {
                return Err(Error::InvalidArgument("switching rate must be positive".into()));
            }
        }
        let guard = self.dt * max_abs(&self.system.hamiltonian());
        if guard > 0.1 {
            return Err(Error::StabilityGuard(guard));
        }
        Ok(())
    }

    pub fn hamiltonian_at(&self, tau: f64) -> CMatrix {
        let g = self.switching.envelope(tau, self.t_end);
        self.system.free_hamiltonian() + self.system.coupling().scale(g)
    }
}

/// Counted observable and counting field for two-sided evolution.
#[derive(Clone, Debug)]
pub struct CountingConfig {
    /// Observable on A whose transfer is counted (typically `H_A`).
    pub o_a: HermitianOperator,
    /// Counting field; complex values are allowed.
    pub chi: C64,
    /// The field is active for step midpoints inside `[t0, t1]`.
    pub window: (f64, f64),
}

impl CountingConfig {
    fn validate(&self, system: &BipartiteSystem) -> Result<()> {
        if self.o_a.dim() != system.dim_a() {
            return Err(Error::Dimension("counted observable must act on A".into()));
        }
        if !(self.window.0 <= self.window.1) {
            return Err(Error::InvalidArgument("counting window is not ordered".into()));
        }
        if !self.chi.re.is_finite() || !self.chi.im.is_finite() {
            return Err(Error::InvalidArgument("counting field must be finite".into()));
        }
        Ok(())
    }
}

fn step_unitary(h: &CMatrix, dt: f64) -> CMatrix {
    let spec = crate::operator::eigh(h);
    spec.apply(|e| C64::from_polar(1.0, -e * dt))
}

/// Propagates `r` from `from` to `to` (either direction) with the job's schedule.
fn propagate(job: &EvolutionJob, r: CMatrix, from: f64, to: f64) -> CMatrix {
    let span = to - from;
    if span == 0.0 {
        return r;
    }
    let n = (span.abs() / job.dt).ceil().max(1.0) as usize;
    let h = span / n as f64;
    let mut r = r;
    for k in 0..n {
        let mid = from + (k as f64 + 0.5) * h;
        let u = step_unitary(&job.hamiltonian_at(mid), h);
        r = &u * r * u.adjoint();
    }
    r
}

/// Full propagator `U(t_end, t_start)`.
pub fn propagator(job: &EvolutionJob) -> Result<CMatrix> {
    job.validate()?;
    let d = job.system.dim();
    let span = job.t_end - job.t_start;
    let n = (span / job.dt).ceil().max(1.0) as usize;
    let h = span / n as f64;
    let mut u = CMatrix::identity(d, d);
    for k in 0..n {
        let mid = job.t_start + (k as f64 + 0.5) * h;
        u = step_unitary(&job.hamiltonian_at(mid), h) * u;
    }
    Ok(u)
}

/// Unitary evolution `R(t_end) = U R(t_start) U†`.
pub fn evolve_unitary(job: &EvolutionJob) -> Result<DensityMatrix> {
    job.validate()?;
    let r = propagate(job, job.initial.matrix().clone(), job.t_start, job.t_end);
    DensityMatrix::new(r)
}

/// Density matrix at each of the (sorted) requested times.
pub fn trajectory(job: &EvolutionJob, times: &[f64]) -> Result<Vec<CMatrix>> {
    job.validate()?;
    let mut out = Vec::with_capacity(times.len());
    let mut r = job.initial.matrix().clone();
    let mut now = job.t_start;
    for &t in times {
        if t < now {
            return Err(Error::InvalidArgument("trajectory times must be sorted".into()));
        }
        r = propagate(job, r, now, t);
        now = t;
        out.push(r.clone());
    }
    Ok(out)
}

/// `exp(i x O_A) ⊗ 1` for complex `x`.
fn gauge(o_a: &HermitianOperator, dim_b: usize, x: C64) -> CMatrix {
    let spec = o_a.spectrum();
    let ua = spec.apply(|o| (C64::i() * x * o).exp());
    ua.kronecker(&CMatrix::identity(dim_b, dim_b))
}

/// Two-sided evolution with `H± = U_A(±χ/2) H U_A(∓χ/2)` on the ket and bra
/// sides, so that `Tr R(t) = ⟨exp(iχ ΔO_A)⟩` for initial states commuting
/// with `O_A`. Returns the unnormalized pseudo-density matrix.
pub fn evolve_extended(job: &EvolutionJob, counting: &CountingConfig) -> Result<PseudoDensityMatrix> {
    job.validate()?;
    counting.validate(&job.system)?;
    let db = job.system.dim_b();
    let half = counting.chi * 0.5;
    let active = counting.chi != c(0.0);
    let (gp, gm) = if active {
        (gauge(&counting.o_a, db, half), gauge(&counting.o_a, db, -half))
    } else {
        (CMatrix::zeros(0, 0), CMatrix::zeros(0, 0))
    };
    let span = job.t_end - job.t_start;
    let n = (span / job.dt).ceil().max(1.0) as usize;
    let h = span / n as f64;
    let mut r = job.initial.matrix().clone();
    for k in 0..n {
        let mid = job.t_start + (k as f64 + 0.5) * h;
        let u = step_unitary(&job.hamiltonian_at(mid), h);
        let in_window = mid >= counting.window.0 && mid <= counting.window.1;
        if active && in_window {
            // ket: U(χ/2) U U(-χ/2); bra: U(-χ/2) U† U(χ/2)
            let fwd = &gp * &u * &gm;
            let bwd = &gm * u.adjoint() * &gp;
            r = fwd * r * bwd;
        } else {
            r = &u * r * u.adjoint();
        }
    }
    Ok(PseudoDensityMatrix(r))
}

/// A scalar functional of the density matrix whose logarithmic time
/// derivative is measured by [`functional_flow`].
pub trait StateFunctional {
    fn value(&self, r: &CMatrix) -> C64;
    /// Directional derivative at `r` along `dr`.
    fn derivative(&self, r: &CMatrix, dr: &CMatrix) -> C64;
}

/// `Tr_A[(Tr_B R)^M]`, or the mirror image for subsystem B.
#[derive(Clone, Copy, Debug)]
pub struct ReducedRenyi {
    pub dims: (usize, usize),
    pub m: u32,
    pub keep: Subsystem,
}

impl StateFunctional for ReducedRenyi {
    fn value(&self, r: &CMatrix) -> C64 {
        let red = partial_trace(r, self.dims, self.keep).expect("dims checked");
        crate::operator::power_trace(&red, self.m)
    }

    fn derivative(&self, r: &CMatrix, dr: &CMatrix) -> C64 {
        let red = partial_trace(r, self.dims, self.keep).expect("dims checked");
        let dred = partial_trace(dr, self.dims, self.keep).expect("dims checked");
        if self.m == 1 {
            return trace(&dred);
        }
        let mut pow = red.clone();
        for _ in 2..self.m {
            pow = &pow * &red;
        }
        trace(&(pow * dred)) * self.m as f64
    }
}

/// Options for the probe-time flow measurement.
#[derive(Clone, Copy, Debug)]
pub struct ProbeOptions {
    /// Stencil step of the five-point central difference.
    pub stencil_step: f64,
}

impl ProbeOptions {
    /// Stencil spanning at most 2% of the relaxation-time scale (the inverse
    /// switching rate, or the inverse coupling scale without switching) and
    /// short against the fastest oscillation of `H`.
    pub fn for_job(job: &EvolutionJob) -> Self {
        let tau = match job.switching {
            SwitchingProfile::Exponential { rate } => 1.0 / rate,
            SwitchingProfile::None => {
                let v = max_abs(&job.system.coupling());
                if v > 0.0 { 1.0 / v } else { 1.0 }
            }
        };
        let e = crate::operator::eigh(&job.system.hamiltonian()).energies;
        let width = e[e.len() - 1] - e[0];
        let mut step = 0.02 * tau / 4.0;
        if width > 0.0 {
            step = step.min(0.05 / width);
        }
        Self { stencil_step: step.max(job.dt) }
    }
}

/// Logarithmic derivative of a functional at each probe time.
///
/// The flow is evaluated exactly from `dR/dt = -i[H(t), R]`; a five-point
/// central difference of `ln F` serves as a stationarity check, and an error
/// is returned if the two disagree by more than 10% of the slope.
/// Each probe contributes `flow@t` and `residual@t` to the breakdown; the
/// reported flow is their mean.
pub fn functional_flow(
    job: &EvolutionJob,
    functional: &dyn StateFunctional,
    probe_times: &[f64],
    options: ProbeOptions,
    m: f64,
) -> Result<(FlowReport, Vec<C64>)> {
    if probe_times.is_empty() {
        return Err(Error::InvalidArgument("no probe times".into()));
    }
    for &t in probe_times {
        if t < job.t_start || t > job.t_end {
            return Err(Error::InvalidArgument(format!("probe time {t} outside the job window")));
        }
        if job.switching.envelope(t, job.t_end) < 1.0 - 1e-6 {
            return Err(Error::InvalidArgument(format!(
                "probe time {t} lies inside the switching ramp"
            )));
        }
    }
    let states = trajectory(job, probe_times)?;
    let h = options.stencil_step;
    let mut report = FlowReport::new(m, 0.0, Method::Oracle);
    let mut complex_flows = Vec::with_capacity(states.len());
    let mut sum = 0.0;
    for (&t, r) in probe_times.iter().zip(&states) {
        let ham = job.hamiltonian_at(t);
        let dr = (&ham * r - r * &ham) * C64::new(0.0, -1.0);
        let value = functional.value(r);
        let exact = functional.derivative(r, &dr) / value;

        let ln_at = |s: f64| functional.value(&propagate(job, r.clone(), t, t + s)).ln();
        let fd = (ln_at(-2.0 * h) - ln_at(2.0 * h) * 1.0 + (ln_at(h) - ln_at(-h)) * 8.0) / (12.0 * h);
        let residual = (fd - exact).norm();
        if residual > 0.1 * exact.norm() + 1e-10 {
            return Err(Error::FlowResidual { slope: exact.re, residual });
        }
        sum += exact.re;
        complex_flows.push(exact);
        report = report.with(format!("flow@{t}"), exact.re).with(format!("residual@{t}"), residual);
    }
    report.flow = sum / probe_times.len() as f64;
    Ok((report, complex_flows))
}

/// Rényi flow `d/dt ln Tr_A[(Tr_B R)^M]` from exact evolution.
pub fn oracle_renyi_flow(job: &EvolutionJob, m: u32, probe_times: &[f64]) -> Result<FlowReport> {
    if m == 0 {
        return Err(Error::InvalidArgument("Renyi order must be >= 1".into()));
    }
    let f = ReducedRenyi { dims: job.system.dims(), m, keep: Subsystem::A };
    functional_flow(job, &f, probe_times, ProbeOptions::for_job(job), m as f64).map(|(r, _)| r)
}
