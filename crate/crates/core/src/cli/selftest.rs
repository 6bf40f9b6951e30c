//! Built-in checks run by `mwk --self-test`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::run::{FREE_ENERGY_TOLERANCE, KMS_TOLERANCE};
use crate::kms::{check_kms_multi, energy_basis_correlator, line_frequencies, renyi_free_energy_identity, spectral_data};
use crate::master::{build_generator, d0_sign_cross_check, dominant_eigenvalue, relaxation_rates, RateModel};
use crate::operator::{c, BipartiteSystem, HermitianOperator};
use crate::perturbative::{golden_rule_rates, Broadening};
use crate::random::random_hermitian;
use crate::Result;

#[derive(Clone, Debug)]
pub struct CheckLine {
    pub name: &'static str,
    pub value: f64,
    pub tolerance: f64,
    pub passed: bool,
}

fn kms_random_four_level() -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let h = random_hermitian(4, &mut rng);
    let ops = vec![random_hermitian(4, &mut rng), random_hermitian(4, &mut rng)];
    let om = line_frequencies(&h, &ops, 1e-9);
    let mut worst: f64 = 0.0;
    for m in [2u32, 3] {
        let spec = spectral_data(&h, &ops, 1.3 * m as f64, &om, 1e-10)?;
        for n in 0..=m {
            let corr = energy_basis_correlator(&h, &ops, 1.3, n, m, &om, 1e-10)?;
            worst = worst.max(check_kms_multi(&spec, &corr, n, m)?);
        }
    }
    Ok(worst)
}

fn free_energy_identity() -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let h = random_hermitian(5, &mut rng);
    let mut worst: f64 = 0.0;
    for beta in [0.1, 1.0, 10.0] {
        for m in [2u32, 3, 5] {
            worst = worst.max(renyi_free_energy_identity(&h, beta, m)?);
        }
    }
    Ok(worst)
}

fn d0_at_zero_field() -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let h_a = HermitianOperator::diagonal(&[0.0, 0.7, 1.5]);
    let h_b = HermitianOperator::diagonal(&[0.0, 0.8]);
    let a = crate::operator::remove_diagonal_blocks(random_hermitian(3, &mut rng).matrix(), &h_a);
    let b = crate::operator::remove_diagonal_blocks(random_hermitian(2, &mut rng).matrix(), &h_b);
    let system =
        BipartiteSystem::new(h_a, h_b, vec![(HermitianOperator::new(a)?, HermitianOperator::new(b)?)], 0.05)?;
    let rates = golden_rule_rates(&system, Broadening::Lorentzian, 0.2)?;
    let g = rates.scale();
    let model = RateModel::new(rates)
        .with_intrinsic_a(relaxation_rates(&[0.5, 0.3, 0.2], g))
        .with_intrinsic_b(relaxation_rates(&[0.6, 0.4], g));
    let weights = system.h_a().spectrum().energies;
    Ok(dominant_eigenvalue(&build_generator(&model, c(0.0), &weights)?)?.norm())
}

/// Runs every check; errors inside a check count as failures with value NaN.
pub fn run_self_test() -> Vec<CheckLine> {
    let line = |name, r: Result<f64>, tolerance| {
        let value = r.unwrap_or(f64::NAN);
        CheckLine { name, value, tolerance, passed: value <= tolerance }
    };
    let sign = |m| d0_sign_cross_check(m, 0.05).map(|r| r.relative);
    vec![
        line("d0-sign-cross-check-m2", sign(2), 0.05),
        line("d0-sign-cross-check-m3", sign(3), 0.05),
        line("kms-random-4-level", kms_random_four_level(), KMS_TOLERANCE),
        line("renyi-free-energy-identity", free_energy_identity(), FREE_ENERGY_TOLERANCE),
        line("d0-vanishes-at-zero-field", d0_at_zero_field(), 1e-12),
    ]
}
