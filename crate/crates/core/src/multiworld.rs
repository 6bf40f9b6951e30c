//! Reconnection patterns: trace contractions of `M` replicas of a bipartite
//! density matrix in which the bra indices of each subsystem are wired to
//! the ket indices of some (possibly different) world.

use crate::dynamics::{functional_flow, EvolutionJob, ProbeOptions, StateFunctional};
use crate::error::{Error, Result};
use crate::operator::{c, CMatrix, DensityMatrix, C64};
use crate::report::FlowReport;

/// Largest number of terms [`evaluate_pattern`] will sum.
pub const MAX_PATTERN_TERMS: f64 = 1e8;

/// World `m`'s bra A-index contracts with the ket A-index of world
/// `perm_a[m]`, and likewise for B with `perm_b`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReconnectionPattern {
    perm_a: Vec<usize>,
    perm_b: Vec<usize>,
}

fn is_permutation(p: &[usize]) -> bool {
    let mut seen = vec![false; p.len()];
    for &x in p {
        if x >= p.len() || seen[x] {
            return false;
        }
        seen[x] = true;
    }
    true
}

fn cycle(m: usize) -> Vec<usize> {
    (0..m).map(|k| (k + 1) % m).collect()
}

impl ReconnectionPattern {
    pub fn custom(perm_a: Vec<usize>, perm_b: Vec<usize>) -> Result<Self> {
        if perm_a.is_empty() || perm_a.len() != perm_b.len() {
            return Err(Error::InvalidPattern("both permutations need the same nonzero length".into()));
        }
        if !is_permutation(&perm_a) || !is_permutation(&perm_b) {
            return Err(Error::InvalidPattern("every index must be contracted exactly once".into()));
        }
        Ok(Self { perm_a, perm_b })
    }

    /// A contours joined in one loop through all worlds, B closed per world.
    pub fn renyi_a(m: usize) -> Result<Self> {
        Self::custom(cycle(m), (0..m).collect())
    }

    pub fn renyi_b(m: usize) -> Result<Self> {
        Self::custom((0..m).collect(), cycle(m))
    }

    /// Three worlds with the A loop running 1→2→3 and the B loop 1→3→2:
    /// `K = Σ R_{aα,bγ} R_{bβ,cα} R_{cγ,aβ}`.
    pub fn k_measure() -> Self {
        Self { perm_a: vec![1, 2, 0], perm_b: vec![2, 0, 1] }
    }

    pub fn worlds(&self) -> usize {
        self.perm_a.len()
    }

    pub fn perm_a(&self) -> &[usize] {
        &self.perm_a
    }

    pub fn perm_b(&self) -> &[usize] {
        &self.perm_b
    }

    /// The same contraction with world `m` renamed to `σ(m)`.
    pub fn relabeled(&self, sigma: &[usize]) -> Result<Self> {
        if sigma.len() != self.worlds() || !is_permutation(sigma) {
            return Err(Error::InvalidPattern("relabeling must be a permutation of the worlds".into()));
        }
        let mut inv = vec![0; sigma.len()];
        for (m, &s) in sigma.iter().enumerate() {
            inv[s] = m;
        }
        let map = |p: &[usize]| (0..p.len()).map(|k| sigma[p[inv[k]]]).collect();
        Self::custom(map(&self.perm_a), map(&self.perm_b))
    }
}

/// `M` replicas of a bipartite density matrix.
#[derive(Clone, Debug)]
pub struct WorldEnsemble {
    pub dims: (usize, usize),
    pub replicas: Vec<CMatrix>,
}

impl WorldEnsemble {
    pub fn new(dims: (usize, usize), replicas: Vec<DensityMatrix>) -> Result<Self> {
        let d = dims.0 * dims.1;
        if replicas.iter().any(|r| r.dim() != d) {
            return Err(Error::Dimension("replica does not match the dimensions".into()));
        }
        Ok(Self { dims, replicas: replicas.into_iter().map(DensityMatrix::into_matrix).collect() })
    }

    pub fn identical(dims: (usize, usize), r: &DensityMatrix, m: usize) -> Result<Self> {
        Self::new(dims, vec![r.clone(); m])
    }

    fn from_matrices(dims: (usize, usize), replicas: Vec<CMatrix>) -> Self {
        Self { dims, replicas }
    }
}

/// Brute-force contraction `Σ Π_m R_m[(a_m, α_m), (a_{π_A(m)}, α_{π_B(m)})]`.
pub fn evaluate_pattern(ens: &WorldEnsemble, pat: &ReconnectionPattern) -> Result<C64> {
    let m = pat.worlds();
    if ens.replicas.len() != m {
        return Err(Error::InvalidPattern(format!(
            "pattern has {m} worlds, ensemble has {}",
            ens.replicas.len()
        )));
    }
    let (da, db) = ens.dims;
    let d = da * db;
    if (d as f64).powi(m as i32) > MAX_PATTERN_TERMS {
        return Err(Error::InvalidArgument(format!("{d}^{m} terms exceed the contraction limit")));
    }
    let mut ket = vec![0usize; m];
    let mut total = c(0.0);
    loop {
        let mut term = c(1.0);
        for w in 0..m {
            let a_bra = ket[pat.perm_a[w]] / db;
            let b_bra = ket[pat.perm_b[w]] % db;
            term *= ens.replicas[w][(ket[w], a_bra * db + b_bra)];
            if term == c(0.0) {
                break;
            }
        }
        total += term;
        // odometer over all ket indices
        let mut k = 0;
        loop {
            if k == m {
                return Ok(total);
            }
            ket[k] += 1;
            if ket[k] < d {
                break;
            }
            ket[k] = 0;
            k += 1;
        }
    }
}

/// A reconnection pattern evaluated on `M` identical copies of the state.
#[derive(Clone, Debug)]
pub struct PatternFunctional {
    pub dims: (usize, usize),
    pub pattern: ReconnectionPattern,
}

impl StateFunctional for PatternFunctional {
    fn value(&self, r: &CMatrix) -> C64 {
        let ens = WorldEnsemble::from_matrices(self.dims, vec![r.clone(); self.pattern.worlds()]);
        evaluate_pattern(&ens, &self.pattern).unwrap_or(C64::new(f64::NAN, f64::NAN))
    }

    fn derivative(&self, r: &CMatrix, dr: &CMatrix) -> C64 {
        let m = self.pattern.worlds();
        (0..m)
            .map(|w| {
                let mut reps = vec![r.clone(); m];
                reps[w] = dr.clone();
                evaluate_pattern(&WorldEnsemble::from_matrices(self.dims, reps), &self.pattern)
                    .unwrap_or(C64::new(f64::NAN, f64::NAN))
            })
            .sum()
    }
}

/// `d/dt ln P(R(t), …, R(t))` for a pattern `P` along exact evolution.
pub fn pattern_flow(job: &EvolutionJob, pat: &ReconnectionPattern, probe_times: &[f64]) -> Result<FlowReport> {
    let (da, db) = job.system.dims();
    if ((da * db) as f64).powi(pat.worlds() as i32) > MAX_PATTERN_TERMS {
        return Err(Error::InvalidArgument("pattern too large for brute-force contraction".into()));
    }
    let f = PatternFunctional { dims: (da, db), pattern: pat.clone() };
    functional_flow(job, &f, probe_times, ProbeOptions::for_job(job), pat.worlds() as f64).map(|(r, _)| r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{oracle_renyi_flow, SwitchingProfile};
    use crate::operator::{
        conserved_measure_k, partial_trace, power_trace, remove_diagonal_blocks, tensor_product, BipartiteSystem,
        HermitianOperator, Subsystem,
    };
    use crate::random::{random_density, random_hermitian, random_unitary};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn invalid_patterns() {
        assert!(ReconnectionPattern::custom(vec![0, 0], vec![0, 1]).is_err());
        assert!(ReconnectionPattern::custom(vec![0, 1], vec![0]).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ens = WorldEnsemble::identical((2, 2), &random_density(4, &mut rng), 2).unwrap();
        assert!(matches!(evaluate_pattern(&ens, &ReconnectionPattern::k_measure()), Err(Error::InvalidPattern(_))));
    }

    #[test]
    fn renyi_patterns_match_reduced_traces() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = random_density(6, &mut rng);
        for m in 1..=4 {
            let ens = WorldEnsemble::identical((2, 3), &r, m).unwrap();
            let ra = partial_trace(r.matrix(), (2, 3), Subsystem::A).unwrap();
            let rb = partial_trace(r.matrix(), (2, 3), Subsystem::B).unwrap();
            let va = evaluate_pattern(&ens, &ReconnectionPattern::renyi_a(m).unwrap()).unwrap();
            let vb = evaluate_pattern(&ens, &ReconnectionPattern::renyi_b(m).unwrap()).unwrap();
            assert!((va - power_trace(&ra, m as u32)).norm() < 1e-12);
            assert!((vb - power_trace(&rb, m as u32)).norm() < 1e-12);
            if m == 1 {
                assert!((va - c(1.0)).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn k_pattern() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let r = random_density(4, &mut rng);
        let ens = WorldEnsemble::identical((2, 2), &r, 3).unwrap();
        let k = evaluate_pattern(&ens, &ReconnectionPattern::k_measure()).unwrap();
        assert!((k - conserved_measure_k(r.matrix(), (2, 2)).unwrap()).norm() < 1e-14);
        // product states: independent contraction oracle
        let ra = random_density(2, &mut rng);
        let rb = random_density(3, &mut rng);
        let prod = DensityMatrix::new(tensor_product(ra.matrix(), rb.matrix())).unwrap();
        let ens = WorldEnsemble::identical((2, 3), &prod, 3).unwrap();
        let k = evaluate_pattern(&ens, &ReconnectionPattern::k_measure()).unwrap();
        let expect = power_trace(ra.matrix(), 3) * power_trace(rb.matrix(), 3);
        assert!((k - expect).norm() < 1e-14);
    }

    #[test]
    fn cyclic_relabeling_and_local_unitaries() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let reps: Vec<DensityMatrix> = (0..3).map(|_| random_density(4, &mut rng)).collect();
        let ens = WorldEnsemble::new((2, 2), reps.clone()).unwrap();
        let ua = random_unitary(2, &mut rng);
        let ub = random_unitary(2, &mut rng);
        let u = tensor_product(&ua, &ub);
        let rotated = WorldEnsemble::new((2, 2), reps.iter().map(|r| r.conjugate(&u).unwrap()).collect()).unwrap();
        for pat in [ReconnectionPattern::k_measure(), ReconnectionPattern::renyi_a(3).unwrap(), ReconnectionPattern::renyi_b(3).unwrap()] {
            let v = evaluate_pattern(&ens, &pat).unwrap();
            assert!((evaluate_pattern(&rotated, &pat).unwrap() - v).norm() < 1e-12);
            // moving replica w to slot σ(w) together with the wiring leaves the value unchanged
            let sigma = [1, 2, 0];
            let mut shuffled = vec![CMatrix::zeros(4, 4); 3];
            for w in 0..3 {
                shuffled[sigma[w]] = ens.replicas[w].clone();
            }
            let moved = WorldEnsemble { dims: (2, 2), replicas: shuffled };
            let v2 = evaluate_pattern(&moved, &pat.relabeled(&sigma).unwrap()).unwrap();
            assert!((v2 - v).norm() < 1e-12);
        }
        // identical replicas: cyclic relabeling maps the K pattern to itself
        assert_eq!(ReconnectionPattern::k_measure().relabeled(&[1, 2, 0]).unwrap(), ReconnectionPattern::k_measure());
    }

    fn coupled(lambda: f64, seed: u64) -> BipartiteSystem {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ha = random_hermitian(2, &mut rng);
        let hb = random_hermitian(2, &mut rng);
        let a = remove_diagonal_blocks(random_hermitian(2, &mut rng).matrix(), &ha);
        let b = remove_diagonal_blocks(random_hermitian(2, &mut rng).matrix(), &hb);
        BipartiteSystem::new(ha, hb, vec![(HermitianOperator::new(a).unwrap(), HermitianOperator::new(b).unwrap())], lambda)
            .unwrap()
    }

    fn job(system: BipartiteSystem, seed: u64) -> EvolutionJob {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        EvolutionJob {
            system,
            initial: random_density(4, &mut rng),
            t_start: 0.0,
            t_end: 2.0,
            dt: 0.005,
            switching: SwitchingProfile::None,
        }
    }

    #[test]
    fn decoupled_flows_vanish() {
        let j = job(coupled(0.0, 4), 5);
        for pat in [ReconnectionPattern::k_measure(), ReconnectionPattern::renyi_b(2).unwrap()] {
            assert!(pattern_flow(&j, &pat, &[1.0, 2.0]).unwrap().flow.abs() < 1e-10);
        }
    }

    #[test]
    fn coupled_flows() {
        let j = job(coupled(0.6, 6), 7);
        let fa = pattern_flow(&j, &ReconnectionPattern::renyi_a(2).unwrap(), &[1.0]).unwrap().flow;
        let fb = pattern_flow(&j, &ReconnectionPattern::renyi_b(2).unwrap(), &[1.0]).unwrap().flow;
        let direct = oracle_renyi_flow(&j, 2, &[1.0]).unwrap().flow;
        assert!((fa - direct).abs() < 1e-10);
        assert!((fa + fb).abs() > 1e-4, "{fa} {fb}");
        let fk = pattern_flow(&j, &ReconnectionPattern::k_measure(), &[1.0]).unwrap().flow;
        assert!(fk.abs() > 1e-4);
    }
}
