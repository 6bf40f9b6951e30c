//! Energy-basis spectral representations and the (multi-world) KMS relations.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::operator::{c, gibbs_weights, power_trace, thermal_state, HermitianOperator, C64};
use crate::perturbative::Broadening;

/// Bose factor `1/(e^x - 1)`.
pub fn bose(x: f64) -> f64 {
    1.0 / x.exp_m1()
}

/// `ln Z(β)` for the given spectrum, computed with the ground energy shifted out.
pub fn log_partition(energies: &[f64], beta: f64) -> f64 {
    let e0 = energies.iter().copied().fold(f64::INFINITY, f64::min);
    -beta * e0 + energies.iter().map(|e| (-beta * (e - e0)).exp()).sum::<f64>().ln()
}

/// Free energy `F(β) = -ln Z(β)/β`.
pub fn free_energy(energies: &[f64], beta: f64) -> f64 {
    -log_partition(energies, beta) / beta
}

/// Matrix-valued function of frequency, `values[(i·count + j)·len + k]`.
#[derive(Clone, Debug)]
pub struct FrequencyCorrelator {
    pub omegas: Vec<f64>,
    count: usize,
    values: Vec<C64>,
}

impl FrequencyCorrelator {
    pub fn count(&self) -> usize {
        self.count
    }

    pub fn at(&self, i: usize, j: usize, k: usize) -> C64 {
        self.values[(i * self.count + j) * self.omegas.len() + k]
    }

    /// `(i, j)` matrix at grid point `k`.
    pub fn matrix_at(&self, k: usize) -> crate::operator::CMatrix {
        crate::operator::CMatrix::from_fn(self.count, self.count, |i, j| self.at(i, j, k))
    }

    fn max_norm(&self) -> f64 {
        self.values.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }
}

/// Sum over eigenpairs `Σ_{nm} 2π δ_η(E_m - E_n + ω) A_i,nm A_j,mn w(n, m)`.
fn line_sum(
    h: &HermitianOperator,
    ops: &[HermitianOperator],
    omegas: &[f64],
    eta: f64,
    weight: impl Fn(usize, usize) -> f64,
) -> Result<FrequencyCorrelator> {
    if !(eta > 0.0) {
        return Err(Error::InvalidArgument("eta must be positive".into()));
    }
    let spec = h.spectrum();
    let d = spec.dim();
    for op in ops {
        if op.dim() != d {
            return Err(Error::Dimension("operator does not match the Hamiltonian".into()));
        }
    }
    let a: Vec<_> = ops.iter().map(|o| spec.to_eigenbasis(o.matrix())).collect();
    let e = &spec.energies;
    let count = ops.len();
    let len = omegas.len();
    let mut values = vec![c(0.0); count * count * len];
    for i in 0..count {
        for j in 0..count {
            for n in 0..d {
                for m in 0..d {
                    let amp = a[i][(n, m)] * a[j][(m, n)];
                    if amp.norm() == 0.0 {
                        continue;
                    }
                    let w = weight(n, m);
                    for (k, &om) in omegas.iter().enumerate() {
                        let delta = Broadening::Gaussian.delta(e[m] - e[n] + om, eta);
                        if delta != 0.0 {
                            values[(i * count + j) * len + k] += amp * (2.0 * PI * delta * w);
                        }
                    }
                }
            }
        }
    }
    Ok(FrequencyCorrelator { omegas: omegas.to_vec(), count, values })
}

/// Multi-world correlator of a thermal A in the energy basis,
/// `K^{N,M}_ij(ω) = Σ_{nm} 2π δ(E_m - E_n + ω) A_i,nm A_j,mn e^{-βM E_n} e^{βNω} / Z(βM)`.
pub fn energy_basis_correlator(
    h: &HermitianOperator,
    ops: &[HermitianOperator],
    beta: f64,
    n: u32,
    m: u32,
    omegas: &[f64],
    eta: f64,
) -> Result<FrequencyCorrelator> {
    if n > m || m == 0 {
        return Err(Error::InvalidArgument(format!("need 0 <= N <= M, M >= 1 (got N={n}, M={m})")));
    }
    let e = h.spectrum().energies;
    let p = gibbs_weights(&e, beta * m as f64);
    let mut corr = line_sum(h, ops, omegas, eta, |nn, _| p[nn])?;
    let len = omegas.len();
    for (idx, v) in corr.values.iter_mut().enumerate() {
        *v *= (beta * n as f64 * omegas[idx % len]).exp();
    }
    Ok(corr)
}

/// Dissipative susceptibility and thermodynamic data of a thermal A at `beta`.
#[derive(Clone, Debug)]
pub struct SpectralData {
    pub beta: f64,
    /// `χ̃_ij(ω) = Σ_{nm} 2π δ(E_m - E_n + ω) A_i,nm A_j,mn (p_m - p_n)`.
    pub chi_tilde: FrequencyCorrelator,
    /// `n_B(βω)` on the grid.
    pub bose: Vec<f64>,
    pub log_partition: f64,
    pub free_energy: f64,
}

pub fn spectral_data(
    h: &HermitianOperator,
    ops: &[HermitianOperator],
    beta: f64,
    omegas: &[f64],
    eta: f64,
) -> Result<SpectralData> {
    let e = h.spectrum().energies;
    let p = gibbs_weights(&e, beta);
    let chi_tilde = line_sum(h, ops, omegas, eta, |n, m| p[m] - p[n])?;
    Ok(SpectralData {
        beta,
        chi_tilde,
        bose: omegas.iter().map(|&w| bose(beta * w)).collect(),
        log_partition: log_partition(&e, beta),
        free_energy: free_energy(&e, beta),
    })
}

/// Residual of `K^{N,M}(ω) = n_B(Mβω) e^{βNω} χ̃(ω, Mβ)` relative to the peak of
/// `|K|`, for `spec` computed at `β* = Mβ` on the same grid as `corr`.
/// Grid points at `ω = 0` are skipped.
pub fn check_kms_multi(spec: &SpectralData, corr: &FrequencyCorrelator, n: u32, m: u32) -> Result<f64> {
    if spec.chi_tilde.omegas != corr.omegas || spec.chi_tilde.count() != corr.count() {
        return Err(Error::InvalidArgument("spectral data and correlator use different grids".into()));
    }
    if m == 0 || n > m {
        return Err(Error::InvalidArgument("need 0 <= N <= M".into()));
    }
    let beta = spec.beta / m as f64;
    let peak = corr.max_norm().max(f64::MIN_POSITIVE);
    let mut worst: f64 = 0.0;
    for (k, &w) in corr.omegas.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let factor = spec.bose[k] * (beta * n as f64 * w).exp();
        for i in 0..corr.count() {
            for j in 0..corr.count() {
                let diff = corr.at(i, j, k) - spec.chi_tilde.at(i, j, k) * factor;
                worst = worst.max(diff.norm());
            }
        }
    }
    Ok(worst / peak)
}

/// Bohr frequencies `E_n - E_m` (both signs, nonzero, deduplicated within `tol`)
/// at which the operators have nonzero matrix elements.
pub fn line_frequencies(h: &HermitianOperator, ops: &[HermitianOperator], tol: f64) -> Vec<f64> {
    let spec = h.spectrum();
    let mut lines = Vec::new();
    for op in ops {
        let a = spec.to_eigenbasis(op.matrix());
        for n in 0..spec.dim() {
            for m in 0..spec.dim() {
                let w = spec.energies[n] - spec.energies[m];
                if a[(n, m)].norm() > 0.0 && w.abs() > tol {
                    lines.push(w);
                }
            }
        }
    }
    lines.sort_by(f64::total_cmp);
    lines.dedup_by(|x, y| (*x - *y).abs() <= tol);
    lines
}

/// `|ln Tr[ρ_β^M] - Mβ(F(β) - F(Mβ))|` for the thermal state of `h`.
pub fn renyi_free_energy_identity(h: &HermitianOperator, beta: f64, m: u32) -> Result<f64> {
    if !(beta > 0.0) || m == 0 {
        return Err(Error::InvalidArgument("need beta > 0 and M >= 1".into()));
    }
    let rho = thermal_state(h, beta)?;
    let lhs = power_trace(rho.matrix(), m).re.ln();
    let e = h.spectrum().energies;
    let mb = m as f64 * beta;
    let rhs = mb * (free_energy(&e, beta) - free_energy(&e, mb));
    Ok((lhs - rhs).abs())
}
