//! Rényi flow into a thermal system versus the counting statistics of energy
//! transfer into the same system held at the rescaled temperature.
//!
//! System A is the thermal side, kept at its Gibbs state by a fast intrinsic
//! relaxation (`pinning`). System B is arbitrary; its state is given at time
//! zero and precesses freely under `H_B`, so coherences make the mean forces
//! `⟨B_n⟩(t)` oscillate.
//!
//! The flow side integrates the second-order block built from the *connected*
//! two-time correlator of B, averaged over one precession period. The counting
//! side takes the dominant eigenvalue of the counting-field tilted rate
//! generator of A alone. Incoherent rates come from the period-averaged
//! populations of B, coherent rates from the Fourier lines of the mean forces.

use std::f64::consts::PI;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::master::{dominant_eigenvalue, relaxation_rates, RateGenerator};
use crate::operator::{c, gibbs_weights, BipartiteSystem, CMatrix, DensityMatrix, HermitianOperator, C64};
use crate::perturbative::{multiworld_correlator, two_time_bath_correlator, w_block, Broadening, TauGrid};
use crate::report::{FlowReport, Method};

/// Points of the uniform rule used for period averages.
pub const PERIOD_SAMPLES: usize = 64;

#[derive(Clone, Debug)]
pub struct CorrespondenceModel {
    pub system: BipartiteSystem,
    /// State of B at time zero.
    pub state_b: DensityMatrix,
    /// Inverse temperature of A.
    pub beta: f64,
    pub broadening: Broadening,
    pub eta: f64,
    /// Intrinsic relaxation rate of A towards its Gibbs state.
    pub pinning: f64,
}

impl CorrespondenceModel {
    pub fn new(
        system: BipartiteSystem,
        state_b: DensityMatrix,
        beta: f64,
        broadening: Broadening,
        eta: f64,
        pinning: f64,
    ) -> Result<Self> {
        if state_b.dim() != system.dim_b() {
            return Err(Error::Dimension("state of B has the wrong size".into()));
        }
        if !(beta > 0.0 && eta > 0.0 && pinning > 0.0) {
            return Err(Error::InvalidArgument("beta, eta and pinning must be positive".into()));
        }
        Ok(Self { system, state_b, beta, broadening, eta, pinning })
    }

    pub fn with_lambda(&self, lambda: f64) -> Self {
        Self { system: self.system.with_lambda(lambda), ..self.clone() }
    }

    /// Precession period of B, `2π / ω_min`; `None` when B is stationary.
    pub fn period(&self) -> Option<f64> {
        let spec = self.system.h_b().spectrum();
        let r = spec.to_eigenbasis(self.state_b.matrix());
        let d = spec.dim();
        let mut w_min = f64::INFINITY;
        for k in 0..d {
            for l in 0..d {
                let w = (spec.energies[k] - spec.energies[l]).abs();
                if r[(k, l)].norm() > 1e-14 && w > 1e-9 {
                    w_min = w_min.min(w);
                }
            }
        }
        w_min.is_finite().then(|| 2.0 * PI / w_min)
    }
}

/// `ξ* = iβ(M - 1)`.
pub fn xi_star(beta: f64, m: u32) -> C64 {
    C64::new(0.0, beta * (m as f64 - 1.0))
}

fn a_operators(system: &BipartiteSystem) -> Vec<HermitianOperator> {
    system.couplings().iter().map(|(a, _)| a.clone()).collect()
}

fn b_operators(system: &BipartiteSystem) -> Vec<HermitianOperator> {
    system.couplings().iter().map(|(_, b)| b.clone()).collect()
}

/// Golden-rule rates `a → b` of A driven by the quantum fluctuations of B,
/// with B frozen at its period-averaged populations.
pub fn incoherent_rates(model: &CorrespondenceModel) -> DMatrix<f64> {
    let (v, ea, eb) = model.system.coupling_in_eigenbasis();
    let q = model.system.h_b().spectrum().to_eigenbasis(model.state_b.matrix());
    let (da, db) = model.system.dims();
    let mut rates = DMatrix::zeros(da, da);
    for a in 0..da {
        for b in 0..da {
            let mut g = 0.0;
            for k in 0..db {
                for l in 0..db {
                    let amp = v[(b * db + l, a * db + k)].norm_sqr();
                    let detuning = ea[a] + eb[k] - ea[b] - eb[l];
                    g += q[(k, k)].re * 2.0 * PI * amp * model.broadening.delta(detuning, model.eta);
                }
            }
            rates[(a, b)] = g;
        }
    }
    rates
}

/// Fourier lines of the mean forces: `⟨B_n⟩(t) = Σ_ν F_n(ν) e^{-iνt}`.
pub fn force_lines(model: &CorrespondenceModel) -> Vec<(f64, Vec<C64>)> {
    let spec = model.system.h_b().spectrum();
    let r = spec.to_eigenbasis(model.state_b.matrix());
    let ops: Vec<CMatrix> = b_operators(&model.system).iter().map(|b| spec.to_eigenbasis(b.matrix())).collect();
    let d = spec.dim();
    let mut lines: Vec<(f64, Vec<C64>)> = Vec::new();
    for k in 0..d {
        for l in 0..d {
            let nu = spec.energies[l] - spec.energies[k];
            let amps: Vec<C64> = ops.iter().map(|b| b[(k, l)] * r[(l, k)]).collect();
            match lines.iter_mut().find(|(w, _)| (w - nu).abs() < 1e-9) {
                Some((_, acc)) => acc.iter_mut().zip(&amps).for_each(|(x, y)| *x += y),
                None => lines.push((nu, amps)),
            }
        }
    }
    lines.sort_by(|x, y| x.0.total_cmp(&y.0));
    lines
}

/// Golden-rule rates `a → b` of A driven by the classical forces `⟨B_n⟩(t)`.
pub fn coherent_rates(model: &CorrespondenceModel) -> DMatrix<f64> {
    let spec_a = model.system.h_a().spectrum();
    let ops: Vec<CMatrix> = a_operators(&model.system).iter().map(|a| spec_a.to_eigenbasis(a.matrix())).collect();
    let ea = &spec_a.energies;
    let da = spec_a.dim();
    let lambda = model.system.lambda();
    let lines = force_lines(model);
    let mut rates = DMatrix::zeros(da, da);
    for a in 0..da {
        for b in 0..da {
            rates[(a, b)] = lines
                .iter()
                .map(|(nu, f)| {
                    let amp: C64 = ops.iter().zip(f).map(|(op, fn_)| op[(b, a)] * fn_).sum();
                    2.0 * PI * (lambda * amp.norm()).powi(2) * model.broadening.delta(ea[b] - ea[a] - nu, model.eta)
                })
                .sum();
        }
    }
    rates
}

/// Tilted generator of A: counted rates `a → b` carry `e^{iξ(E_b - E_a)}`,
/// the `pinning` rates are not counted.
pub fn tilted_generator(counted: &DMatrix<f64>, pinning: &DMatrix<f64>, energies: &[f64], xi: C64) -> Result<RateGenerator> {
    let n = energies.len();
    if counted.shape() != (n, n) || pinning.shape() != (n, n) {
        return Err(Error::Dimension("rate tables do not match the spectrum".into()));
    }
    let mut l = CMatrix::zeros(n, n);
    for a in 0..n {
        for b in 0..n {
            if a == b {
                continue;
            }
            let out = counted[(a, b)] + pinning[(a, b)];
            l[(b, a)] += counted[(a, b)] * (C64::i() * xi * (energies[b] - energies[a])).exp() + pinning[(a, b)];
            l[(a, a)] -= c(out);
        }
    }
    RateGenerator::new(l, 1)
}

fn scaled_rate(model: &CorrespondenceModel, counted: &DMatrix<f64>, beta_a: f64, xi: C64) -> Result<C64> {
    let ea = model.system.h_a().spectrum().energies;
    let pin = relaxation_rates(&gibbs_weights(&ea, beta_a), model.pinning);
    let f = -dominant_eigenvalue(&tilted_generator(counted, &pin, &ea, xi)?)?;
    if xi.re == 0.0 && f.im.abs() > 1e-9 * f.re.abs().max(1e-12) {
        log::warn!("scaled rate f({xi}) = {f} is not real on the imaginary axis");
    }
    Ok(f)
}

/// Long-time rate `f_i(ξ) = lim ln⟨e^{iξQ}⟩/T` of the energy `Q` absorbed by A
/// at inverse temperature `beta_a` from the quantum fluctuations of B.
pub fn incoherent_fcs(model: &CorrespondenceModel, beta_a: f64, xi: C64) -> Result<C64> {
    scaled_rate(model, &incoherent_rates(model), beta_a, xi)
}

/// Same as [`incoherent_fcs`] with B replaced by its mean forces.
pub fn coherent_fcs(model: &CorrespondenceModel, beta_a: f64, xi: C64) -> Result<C64> {
    scaled_rate(model, &coherent_rates(model), beta_a, xi)
}

/// Incoherent and coherent scaled rates on a grid of counting fields.
#[derive(Clone, Debug)]
pub struct FcsPair {
    pub beta: f64,
    pub xi: Vec<C64>,
    pub f_i: Vec<C64>,
    pub f_c: Vec<C64>,
}

pub fn fcs_pair(model: &CorrespondenceModel, beta_a: f64, xi: &[C64]) -> Result<FcsPair> {
    let run = |rates: DMatrix<f64>| xi.iter().map(|&x| scaled_rate(model, &rates, beta_a, x)).collect::<Result<Vec<_>>>();
    let (f_i, f_c) = rayon::join(|| run(incoherent_rates(model)), || run(coherent_rates(model)));
    Ok(FcsPair { beta: beta_a, xi: xi.to_vec(), f_i: f_i?, f_c: f_c? })
}

/// Second-order Rényi flow of A at time `t`, from the connected correlator of B.
pub fn instantaneous_flow(model: &CorrespondenceModel, m: u32, t: f64) -> Result<f64> {
    let system = &model.system;
    let bandwidth = |h: &HermitianOperator| {
        let e = h.spectrum().energies;
        e[e.len() - 1] - e[0]
    };
    let grid = TauGrid::covering(model.broadening, model.eta, bandwidth(system.h_a()) + bandwidth(system.h_b()))?;
    let state_a = crate::operator::thermal_state(system.h_a(), model.beta)?;
    let a_ops = a_operators(system);
    let cb = two_time_bath_correlator(&model.state_b, &b_operators(system), system.h_b(), t, &grid, true)?;
    let k0 = multiworld_correlator(&state_a, &a_ops, system.h_a(), 0, m, &grid)?;
    let k1 = multiworld_correlator(&state_a, &a_ops, system.h_a(), 1.min(m), m, &grid)?;
    w_block(&cb, &k0, &k1, system.lambda())?.damped_integral(model.broadening, model.eta)
}

/// Period-averaged second-order Rényi flow of A.
pub fn averaged_flow(model: &CorrespondenceModel, m: u32) -> Result<FlowReport> {
    use rayon::prelude::*;
    let (period, samples) = match model.period() {
        Some(p) => (p, PERIOD_SAMPLES),
        None => (0.0, 1),
    };
    let flows = (0..samples)
        .into_par_iter()
        .map(|k| instantaneous_flow(model, m, period * k as f64 / samples as f64))
        .collect::<Result<Vec<f64>>>()?;
    let mean = flows.iter().sum::<f64>() / samples as f64;
    let (lo, hi) = flows.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    Ok(FlowReport::new(m as f64, mean, Method::SecondOrder)
        .with("period", period)
        .with("min_instant", lo)
        .with("max_instant", hi))
}

#[derive(Clone, Debug)]
pub struct CorrespondenceReport {
    pub m: u32,
    /// `F_M / M` at `β`.
    pub flow_per_world: f64,
    /// `f_i(ξ*) - f_c(ξ*)` at `Mβ`.
    pub fcs_difference: f64,
    pub f_i: C64,
    pub f_c: C64,
    pub residual: f64,
    /// Residual relative to `|F_M / M|`.
    pub relative: f64,
}

impl CorrespondenceReport {
    pub fn to_flow_report(&self) -> FlowReport {
        FlowReport::new(self.m as f64, self.m as f64 * self.fcs_difference, Method::Correspondence)
            .with("flow_per_world", self.flow_per_world)
            .with("f_i", self.f_i.re)
            .with("f_c", self.f_c.re)
            .with("residual", self.residual)
            .with("relative", self.relative)
    }
}

/// Compares `F_M/M` at `β` with `f_i(ξ*) - f_c(ξ*)` at `Mβ`.
pub fn check_correspondence(model: &CorrespondenceModel, m: u32) -> Result<CorrespondenceReport> {
    if m == 0 {
        return Err(Error::InvalidArgument("Renyi order must be >= 1".into()));
    }
    let xi = xi_star(model.beta, m);
    let beta_m = model.beta * m as f64;
    let ((lhs, f_i), f_c) = rayon::join(
        || rayon::join(|| averaged_flow(model, m), || incoherent_fcs(model, beta_m, xi)),
        || coherent_fcs(model, beta_m, xi),
    );
    let (f_i, f_c) = (f_i?, f_c?);
    let flow_per_world = lhs?.flow / m as f64;
    let fcs_difference = (f_i - f_c).re;
    let residual = (flow_per_world - fcs_difference).abs();
    let relative = if flow_per_world != 0.0 { residual / flow_per_world.abs() } else { residual };
    Ok(CorrespondenceReport { m, flow_per_world, fcs_difference, f_i, f_c, residual, relative })
}

/// Relative residual at the model's coupling and at half of it, and their ratio.
pub fn residual_scaling(model: &CorrespondenceModel, m: u32) -> Result<(f64, f64, f64)> {
    let full = check_correspondence(model, m)?.relative;
    let half = check_correspondence(&model.with_lambda(model.system.lambda() / 2.0), m)?.relative;
    Ok((full, half, full / half))
}
