//! Seeded generators for random operators and states.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::operator::{c, CMatrix, DensityMatrix, HermitianOperator, C64};

fn ginibre<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> CMatrix {
    CMatrix::from_fn(rows, cols, |_, _| {
        C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
    })
}

/// GUE-like random Hermitian matrix with entries of order one.
pub fn random_hermitian<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> HermitianOperator {
    let g = ginibre(dim, dim, rng);
    HermitianOperator::new((&g + g.adjoint()).scale(0.5)).expect("Hermitian by construction")
}

/// Haar-distributed unitary from the QR decomposition of a Ginibre matrix.
pub fn random_unitary<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> CMatrix {
    let qr = ginibre(dim, dim, rng).qr();
    let (q, r) = (qr.q(), qr.r());
    let phases = DVector::from_iterator(
        dim,
        (0..dim).map(|i| {
            let d = r[(i, i)];
            if d.norm() > 0.0 { d / d.norm() } else { c(1.0) }
        }),
    );
    q * CMatrix::from_diagonal(&phases)
}

/// Full-rank random mixed state `G G† / Tr`.
pub fn random_density<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> DensityMatrix {
    let g = ginibre(dim, dim, rng);
    let m = &g * g.adjoint();
    let tr = crate::operator::trace(&m).re;
    DensityMatrix::new(m.unscale(tr)).expect("positive by construction")
}

/// Random probability vector with entries bounded away from zero.
pub fn random_probabilities<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| 0.1 + rng.random::<f64>()).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / s).collect()
}

/// Sorted random energies in `[0, width)`.
pub fn random_energies<R: Rng + ?Sized>(n: usize, width: f64, rng: &mut R) -> Vec<f64> {
    let mut e: Vec<f64> = (0..n).map(|_| width * rng.random::<f64>()).collect();
    e.sort_by(f64::total_cmp);
    e
}
