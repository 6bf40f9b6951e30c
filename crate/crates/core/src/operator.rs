//! Dense complex matrices, Hermitian operators and density matrices on a
//! bipartite Hilbert space `A ⊗ B`.
//!
//! Composite indices are A-major: the basis state `|a⟩ ⊗ |α⟩` has index
//! `a * dim_b + α`. Every partial trace and index contraction in the crate
//! relies on this convention.
//!
//! Units: `ħ = k_B = 1`, so energies are frequencies and `β = 1/T`.

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};

pub type C64 = Complex<f64>;
pub type CMatrix = DMatrix<C64>;

/// Relative tolerance for Hermiticity of operators.
pub const HERMITIAN_TOL: f64 = 1e-12;
/// Tolerance on trace normalization and positivity of density matrices.
pub const PSD_TOL: f64 = 1e-10;
/// Eigenvalues below this are treated as exact zeros in [`matrix_power`].
pub const ZERO_EIGENVALUE: f64 = 1e-14;

pub(crate) fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

/// Largest entry modulus.
pub fn max_abs(m: &CMatrix) -> f64 {
    m.iter().fold(0.0, |acc, z| acc.max(z.norm()))
}

fn hermitian_deviation(m: &CMatrix) -> f64 {
    max_abs(&(m - m.adjoint()))
}

/// Trace of a square complex matrix.
pub fn trace(m: &CMatrix) -> C64 {
    m.diagonal().iter().sum()
}

/// Ascending eigen-decomposition of a Hermitian matrix.
#[derive(Clone, Debug)]
pub struct Spectrum {
    pub energies: Vec<f64>,
    /// Eigenvectors as columns, in the order of `energies`.
    pub vectors: CMatrix,
}

impl Spectrum {
    pub fn dim(&self) -> usize {
        self.energies.len()
    }

    /// Matrix elements `⟨n|op|m⟩` in the eigenbasis.
    pub fn to_eigenbasis(&self, op: &CMatrix) -> CMatrix {
        self.vectors.adjoint() * op * &self.vectors
    }

    /// Inverse of [`Spectrum::to_eigenbasis`].
    pub fn from_eigenbasis(&self, op: &CMatrix) -> CMatrix {
        &self.vectors * op * self.vectors.adjoint()
    }

    /// `V f(E) V†`.
    pub fn apply(&self, f: impl Fn(f64) -> C64) -> CMatrix {
        let d = self.dim();
        let diag = CMatrix::from_diagonal(&DVector::from_iterator(
            d,
            self.energies.iter().map(|&e| f(e)),
        ));
        self.from_eigenbasis(&diag)
    }

    /// Smallest nonzero gap between distinct eigenvalues.
    pub fn min_bohr_frequency(&self, tol: f64) -> Option<f64> {
        let mut best: Option<f64> = None;
        for (i, &ei) in self.energies.iter().enumerate() {
            for &ej in &self.energies[i + 1..] {
                let w = (ej - ei).abs();
                if w > tol {
                    best = Some(best.map_or(w, |b: f64| b.min(w)));
                }
            }
        }
        best
    }
}

/// Hermitian eigen-decomposition of an arbitrary square matrix's Hermitian part.
pub fn eigh(m: &CMatrix) -> Spectrum {
    let sym = (m + m.adjoint()).scale(0.5);
    let eig = sym.symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let d = order.len();
    let mut vectors = CMatrix::zeros(d, d);
    for (col, &k) in order.iter().enumerate() {
        vectors.set_column(col, &eig.eigenvectors.column(k));
    }
    Spectrum {
        energies: order.iter().map(|&k| eig.eigenvalues[k]).collect(),
        vectors,
    }
}

/// A Hermitian operator (Hamiltonian, coupling factor or counted observable).
#[derive(Clone, Debug, PartialEq)]
pub struct HermitianOperator(CMatrix);

impl HermitianOperator {
    pub fn new(m: CMatrix) -> Result<Self> {
        if !m.is_square() || m.nrows() == 0 {
            return Err(Error::Dimension(format!(
                "Hermitian operator must be square and nonempty, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::InvalidArgument("non-finite matrix entry".into()));
        }
        let dev = hermitian_deviation(&m);
        if dev > HERMITIAN_TOL * max_abs(&m).max(f64::MIN_POSITIVE) && dev > 0.0 {
            return Err(Error::NotHermitian(dev));
        }
        // store the exactly Hermitian part
        let h = (&m + m.adjoint()).scale(0.5);
        Ok(Self(h))
    }

    pub fn diagonal(values: &[f64]) -> Self {
        Self(CMatrix::from_diagonal(&DVector::from_iterator(
            values.len(),
            values.iter().map(|&v| c(v)),
        )))
    }

    pub fn zero(dim: usize) -> Self {
        Self(CMatrix::zeros(dim, dim))
    }

    pub fn identity(dim: usize) -> Self {
        Self(CMatrix::identity(dim, dim))
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> CMatrix {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn spectrum(&self) -> Spectrum {
        eigh(&self.0)
    }

    pub fn scale(&self, s: f64) -> Self {
        Self(self.0.scale(s))
    }
}

/// A valid quantum state: Hermitian, unit trace, positive semidefinite.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix(CMatrix);

impl DensityMatrix {
    /// Validates the matrix. Inputs failing the PSD tolerance are rejected, never clipped.
    pub fn new(m: CMatrix) -> Result<Self> {
        if !m.is_square() || m.nrows() == 0 {
            return Err(Error::Dimension("density matrix must be square".into()));
        }
        let dev = hermitian_deviation(&m);
        if dev > PSD_TOL {
            return Err(Error::InvalidState(format!("not Hermitian (deviation {dev:.3e})")));
        }
        let tr = trace(&m);
        if (tr.re - 1.0).abs() > PSD_TOL || tr.im.abs() > PSD_TOL {
            return Err(Error::InvalidState(format!("trace {tr} differs from 1")));
        }
        let h = (&m + m.adjoint()).scale(0.5);
        let min = eigh(&h).energies.first().copied().unwrap_or(0.0);
        if min < -PSD_TOL {
            return Err(Error::InvalidState(format!("negative eigenvalue {min:.3e}")));
        }
        Ok(Self(h))
    }

    /// Diagonal ensemble `Σ p_k |k⟩⟨k|`.
    pub fn from_probabilities(p: &[f64]) -> Result<Self> {
        Self::new(CMatrix::from_diagonal(&DVector::from_iterator(
            p.len(),
            p.iter().map(|&x| c(x)),
        )))
    }

    pub fn maximally_mixed(dim: usize) -> Self {
        Self(CMatrix::identity(dim, dim).scale(1.0 / dim as f64))
    }

    /// `|ψ⟩⟨ψ|` for a normalized copy of `psi`.
    pub fn pure(psi: &DVector<C64>) -> Result<Self> {
        let n = psi.norm();
        if n == 0.0 {
            return Err(Error::InvalidArgument("zero state vector".into()));
        }
        let v = psi.unscale(n);
        Self::new(&v * v.adjoint())
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> CMatrix {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        eigh(&self.0).energies
    }

    /// Diagonal entries (populations) in the computational basis.
    pub fn populations(&self) -> Vec<f64> {
        self.0.diagonal().iter().map(|z| z.re).collect()
    }

    /// Conjugation `U ρ U†` by a unitary.
    pub fn conjugate(&self, u: &CMatrix) -> Result<Self> {
        Self::new(u * &self.0 * u.adjoint())
    }
}

/// The unnormalized result of two-sided evolution with different forward and
/// backward Hamiltonians. Its trace carries counting statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct PseudoDensityMatrix(pub CMatrix);

impl PseudoDensityMatrix {
    pub fn matrix(&self) -> &CMatrix {
        &self.0
    }

    pub fn trace(&self) -> C64 {
        trace(&self.0)
    }
}

/// Which factor of `A ⊗ B` survives a partial trace.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Subsystem {
    A,
    B,
}

/// Kronecker product, A-major.
pub fn tensor_product(x: &CMatrix, y: &CMatrix) -> CMatrix {
    x.kronecker(y)
}

/// `Tr_B` (keep = A) or `Tr_A` (keep = B) of a matrix on `A ⊗ B`.
pub fn partial_trace(r: &CMatrix, dims: (usize, usize), keep: Subsystem) -> Result<CMatrix> {
    let (da, db) = dims;
    if !r.is_square() || r.nrows() != da * db {
        return Err(Error::Dimension(format!(
            "partial trace of {}x{} matrix with dims ({da}, {db})",
            r.nrows(),
            r.ncols()
        )));
    }
    Ok(match keep {
        Subsystem::A => CMatrix::from_fn(da, da, |a, b| {
            (0..db).map(|al| r[(a * db + al, b * db + al)]).sum()
        }),
        Subsystem::B => CMatrix::from_fn(db, db, |al, be| {
            (0..da).map(|a| r[(a * db + al, a * db + be)]).sum()
        }),
    })
}

/// Gibbs state `exp(-βH)/Z`. `beta = f64::INFINITY` gives the normalized
/// projector onto the ground space.
pub fn thermal_state(h: &HermitianOperator, beta: f64) -> Result<DensityMatrix> {
    if beta.is_nan() || beta < 0.0 {
        return Err(Error::InvalidArgument(format!("inverse temperature {beta}")));
    }
    let spec = h.spectrum();
    let weights = gibbs_weights(&spec.energies, beta);
    DensityMatrix::new(spec.apply_indexed(|k| c(weights[k])))
}

/// Normalized Boltzmann weights of a list of energies (ground-space projector at β = ∞).
pub fn gibbs_weights(energies: &[f64], beta: f64) -> Vec<f64> {
    let e_min = energies.iter().copied().fold(f64::INFINITY, f64::min);
    let scale = energies.iter().fold(1.0f64, |a, e| a.max(e.abs()));
    let raw: Vec<f64> = if beta.is_infinite() {
        energies
            .iter()
            .map(|&e| if e - e_min <= 1e-10 * scale { 1.0 } else { 0.0 })
            .collect()
    } else {
        // shifting by E_min keeps the largest weight at exactly 1
        energies.iter().map(|&e| (-beta * (e - e_min)).exp()).collect()
    };
    let z: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / z).collect()
}

impl Spectrum {
    fn apply_indexed(&self, f: impl Fn(usize) -> C64) -> CMatrix {
        let d = self.dim();
        let diag = CMatrix::from_diagonal(&DVector::from_iterator(d, (0..d).map(f)));
        self.from_eigenbasis(&diag)
    }
}

/// Rényi moment `S_M = Tr[R^M]`.
pub fn renyi_entropy(r: &DensityMatrix, m: u32) -> Result<f64> {
    if m == 0 {
        return Err(Error::InvalidArgument("Renyi order must be >= 1".into()));
    }
    Ok(power_trace(r.matrix(), m).re)
}

/// `Tr[X^M]` by repeated multiplication, for any square matrix.
pub fn power_trace(x: &CMatrix, m: u32) -> C64 {
    let mut acc = x.clone();
    for _ in 1..m {
        acc = &acc * x;
    }
    trace(&acc)
}

/// Von Neumann entropy `-Σ p ln p` with `0 ln 0 = 0`.
pub fn shannon_entropy(r: &DensityMatrix) -> f64 {
    r.eigenvalues()
        .into_iter()
        .filter(|&p| p > 0.0)
        .map(|p| -p * p.ln())
        .sum()
}

/// The six-index invariant `K = Σ R_{aα,bγ} R_{bβ,cα} R_{cγ,aβ}`.
///
/// `K` is conserved by any evolution of the form `U_A ⊗ U_B` and is not a
/// function of the Rényi moments of `R`, `R_A` or `R_B`.
pub fn conserved_measure_k(r: &CMatrix, dims: (usize, usize)) -> Result<C64> {
    let (da, db) = dims;
    if !r.is_square() || r.nrows() != da * db {
        return Err(Error::Dimension(format!(
            "K measure of {}x{} matrix with dims ({da}, {db})",
            r.nrows(),
            r.ncols()
        )));
    }
    let idx = |a: usize, al: usize| a * db + al;
    let mut k = C64::new(0.0, 0.0);
    for a in 0..da {
        for b in 0..da {
            for cc in 0..da {
                for al in 0..db {
                    for be in 0..db {
                        for ga in 0..db {
                            k += r[(idx(a, al), idx(b, ga))]
                                * r[(idx(b, be), idx(cc, al))]
                                * r[(idx(cc, ga), idx(a, be))];
                        }
                    }
                }
            }
        }
    }
    Ok(k)
}

/// Real power `R^m` via the eigen-decomposition, restricted to the support.
pub fn matrix_power(r: &DensityMatrix, m: f64) -> Result<CMatrix> {
    if !(m > 0.0) || !m.is_finite() {
        return Err(Error::InvalidArgument(format!("matrix power {m}")));
    }
    let spec = eigh(r.matrix());
    let integer = m.fract() == 0.0;
    if !integer {
        if let Some(&min) = spec.energies.first() {
            if min < -PSD_TOL {
                return Err(Error::InvalidState(format!(
                    "non-integer power of matrix with eigenvalue {min:.3e}"
                )));
            }
        }
    }
    Ok(spec.apply(|p| {
        if p.abs() < ZERO_EIGENVALUE || (!integer && p < 0.0) {
            c(0.0)
        } else {
            c(p.powf(m))
        }
    }))
}

/// Strips the matrix elements of `op` inside each degenerate eigenspace of `h`,
/// returning an operator with zero diagonal in the `h` eigenbasis.
pub fn remove_diagonal_blocks(op: &CMatrix, h: &HermitianOperator) -> CMatrix {
    let spec = h.spectrum();
    let mut inner = spec.to_eigenbasis(op);
    let tol = 1e-9 * spec.energies.iter().fold(1.0f64, |a, e| a.max(e.abs()));
    for i in 0..spec.dim() {
        for j in 0..spec.dim() {
            if (spec.energies[i] - spec.energies[j]).abs() <= tol {
                inner[(i, j)] = c(0.0);
            }
        }
    }
    spec.from_eigenbasis(&inner)
}

/// A bipartite system with Hamiltonian
/// `H = H_A ⊗ 1 + 1 ⊗ H_B + λ Σ_i A_i ⊗ B_i`.
///
/// Every `A_i` (`B_i`) must vanish inside each degenerate eigenspace of `H_A`
/// (`H_B`), so that the coupling has no diagonal matrix elements.
#[derive(Clone, Debug)]
pub struct BipartiteSystem {
    h_a: HermitianOperator,
    h_b: HermitianOperator,
    couplings: Vec<(HermitianOperator, HermitianOperator)>,
    lambda: f64,
}

impl BipartiteSystem {
    pub fn new(
        h_a: HermitianOperator,
        h_b: HermitianOperator,
        couplings: Vec<(HermitianOperator, HermitianOperator)>,
        lambda: f64,
    ) -> Result<Self> {
        if !lambda.is_finite() {
            return Err(Error::InvalidArgument("coupling strength must be finite".into()));
        }
        for (i, (a, b)) in couplings.iter().enumerate() {
            if a.dim() != h_a.dim() || b.dim() != h_b.dim() {
                return Err(Error::Dimension(format!("coupling term {i} has wrong dimensions")));
            }
            check_offdiagonal(a, &h_a, "A", i)?;
            check_offdiagonal(b, &h_b, "B", i)?;
        }
        Ok(Self { h_a, h_b, couplings, lambda })
    }

    /// Like [`BipartiteSystem::new`] but keeps diagonal coupling elements.
    /// Only for callers that handle the resulting mean fields themselves.
    pub fn with_mean_fields(
        h_a: HermitianOperator,
        h_b: HermitianOperator,
        couplings: Vec<(HermitianOperator, HermitianOperator)>,
        lambda: f64,
    ) -> Result<Self> {
        if !lambda.is_finite() {
            return Err(Error::InvalidArgument("coupling strength must be finite".into()));
        }
        if couplings.iter().any(|(a, b)| a.dim() != h_a.dim() || b.dim() != h_b.dim()) {
            return Err(Error::Dimension("coupling term has wrong dimensions".into()));
        }
        Ok(Self { h_a, h_b, couplings, lambda })
    }

    pub fn dim_a(&self) -> usize {
        self.h_a.dim()
    }

    pub fn dim_b(&self) -> usize {
        self.h_b.dim()
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.dim_a(), self.dim_b())
    }

    pub fn dim(&self) -> usize {
        self.dim_a() * self.dim_b()
    }

    pub fn h_a(&self) -> &HermitianOperator {
        &self.h_a
    }

    pub fn h_b(&self) -> &HermitianOperator {
        &self.h_b
    }

    pub fn couplings(&self) -> &[(HermitianOperator, HermitianOperator)] {
        &self.couplings
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn with_lambda(&self, lambda: f64) -> Self {
        Self { lambda, ..self.clone() }
    }

    /// `H_A ⊗ 1 + 1 ⊗ H_B`.
    pub fn free_hamiltonian(&self) -> CMatrix {
        let ia = CMatrix::identity(self.dim_a(), self.dim_a());
        let ib = CMatrix::identity(self.dim_b(), self.dim_b());
        tensor_product(self.h_a.matrix(), &ib) + tensor_product(&ia, self.h_b.matrix())
    }

    /// `Σ_i A_i ⊗ B_i` without the coupling strength.
    pub fn coupling_shape(&self) -> CMatrix {
        let mut v = CMatrix::zeros(self.dim(), self.dim());
        for (a, b) in &self.couplings {
            v += tensor_product(a.matrix(), b.matrix());
        }
        v
    }

    /// `H_AB = λ Σ_i A_i ⊗ B_i`.
    pub fn coupling(&self) -> CMatrix {
        self.coupling_shape().scale(self.lambda)
    }

    pub fn hamiltonian(&self) -> CMatrix {
        self.free_hamiltonian() + self.coupling()
    }

    /// Coupling matrix elements `H^{AB}_{aα,bβ}` in the product eigenbasis of
    /// `H_A` and `H_B`, with the eigen-energies of both factors.
    pub fn coupling_in_eigenbasis(&self) -> (CMatrix, Vec<f64>, Vec<f64>) {
        let sa = self.h_a.spectrum();
        let sb = self.h_b.spectrum();
        let u = tensor_product(&sa.vectors, &sb.vectors);
        let v = u.adjoint() * self.coupling() * &u;
        (v, sa.energies, sb.energies)
    }
}

fn check_offdiagonal(
    op: &HermitianOperator,
    h: &HermitianOperator,
    side: &str,
    index: usize,
) -> Result<()> {
    let stripped = remove_diagonal_blocks(op.matrix(), h);
    let dev = max_abs(&(op.matrix() - stripped));
    if dev > 1e-10 * max_abs(op.matrix()).max(1.0) {
        return Err(Error::InvalidArgument(format!(
            "coupling factor {side}_{index} has diagonal elements in the {side} eigenbasis (max {dev:.3e})"
        )));
    }
    Ok(())
}
