//! Per-kind execution of a parsed scenario.

use std::collections::BTreeMap;

use rayon::prelude::*;

use super::scenario::{Kind, MethodName, PatternSpec, Scenario};
use super::{Cell, CliError, RunOutput, Table};
use crate::correspondence::{check_correspondence, CorrespondenceModel};
use crate::dynamics::{default_switching_rate, oracle_renyi_flow, trajectory, EvolutionJob, SwitchingProfile};
use crate::kms::{check_kms_multi, energy_basis_correlator, line_frequencies, renyi_free_energy_identity, spectral_data};
use crate::master::{
    build_generator, build_multiworld_generator, dominant_eigenvalue, keldysh_action, multiworld_flow_via_d0,
    relaxation_rates, RateModel,
};
use crate::multiworld::{pattern_flow, ReconnectionPattern};
use crate::operator::{
    c, conserved_measure_k, partial_trace, power_trace, tensor_product, BipartiteSystem, DensityMatrix, Subsystem,
};
use crate::perturbative::{default_eta, flow_2nd_states, flow_4th_order, golden_rule_rates};
use crate::qhe::{qhe_flows, steady_state};

type Rows = Result<Vec<Vec<Cell>>, CliError>;

fn tolerances(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

/// Cartesian product of two axes, in order.
fn grid<A: Copy + Send + Sync, B: Copy + Send + Sync>(a: &[A], b: &[B]) -> Vec<(A, B)> {
    a.iter().flat_map(|&x| b.iter().map(move |&y| (x, y))).collect()
}

fn collect(rows: Vec<Rows>) -> Rows {
    let mut out = Vec::new();
    for r in rows {
        out.extend(r?);
    }
    Ok(out)
}

pub fn run_scenario(s: &Scenario) -> Result<RunOutput, CliError> {
    let (table, tol) = match s.kind {
        Kind::Simulate => simulate(s)?,
        Kind::Flows => flows(s)?,
        Kind::Fcs => fcs(s)?,
        Kind::KmsCheck => kms_check(s)?,
        Kind::Qhe => qhe(s)?,
        Kind::Correspond => correspond(s)?,
        Kind::Patterns => patterns(s)?,
    };
    let name = s.output.name.clone().unwrap_or_else(|| s.kind.name().to_string());
    if name.is_empty() || name.contains(['/', '\\']) {
        return Err(CliError::Schema("output.name: must be a plain file stem".into()));
    }
    Ok(RunOutput { name, table, tolerances: tol })
}

/// System, initial product state and A/B states at coupling `lambda`.
struct Prepared {
    system: BipartiteSystem,
    rho_a: DensityMatrix,
    rho_b: DensityMatrix,
}

impl Prepared {
    fn new(s: &Scenario, lambda: f64) -> Result<Self, CliError> {
        let spec = s.system();
        let system = spec.build(s.seed, lambda)?;
        let (sa, ka) = spec.state('a')?;
        let (sb, kb) = spec.state('b')?;
        Ok(Self { rho_a: sa.build(system.h_a(), &ka)?, rho_b: sb.build(system.h_b(), &kb)?, system })
    }

    fn initial(&self) -> Result<DensityMatrix, CliError> {
        Ok(DensityMatrix::new(tensor_product(self.rho_a.matrix(), self.rho_b.matrix()))?)
    }

    fn populations(&self, s: &Scenario) -> Result<(Vec<f64>, Vec<f64>), CliError> {
        let spec = s.system();
        let (sa, ka) = spec.state('a')?;
        let (sb, kb) = spec.state('b')?;
        Ok((sa.populations_of(self.system.h_a(), &ka)?, sb.populations_of(self.system.h_b(), &kb)?))
    }
}

fn lambda_axis(s: &Scenario) -> Vec<f64> {
    s.sweep.axis("lambda", s.system().lambda)
}

/// Broadening width at one sweep point: the `eta` axis, then `numerics.eta`,
/// then the model's default.
fn eta_axis(s: &Scenario) -> Vec<Option<f64>> {
    match (&s.sweep.eta, s.numerics.eta) {
        (Some(v), _) => v.iter().map(|&e| Some(e)).collect(),
        (None, Some(e)) => vec![Some(e)],
        (None, None) => vec![None],
    }
}

fn check_eta(eta: f64) -> Result<f64, CliError> {
    if eta > 0.0 && eta.is_finite() {
        Ok(eta)
    } else {
        Err(CliError::Schema(format!("sweep.eta: width {eta} must be positive")))
    }
}

fn simulate(s: &Scenario) -> Result<(Table, BTreeMap<String, f64>), CliError> {
    let cfg = s.simulate.as_ref().expect("validated");
    if !(cfg.t_end > 0.0) || cfg.samples == 0 {
        return Err(CliError::Schema("simulate: need t_end > 0 and samples >= 1".into()));
    }
    let ms = s.sweep.integer_m(2)?;
    let dt = s.numerics.dt;
    let times: Vec<f64> = (0..=cfg.samples).map(|k| cfg.t_end * k as f64 / cfg.samples as f64).collect();
    let rows: Vec<Rows> = lambda_axis(s)
        .par_iter()
        .map(|&lambda| {
            let p = Prepared::new(s, lambda)?;
            let dims = p.system.dims();
            let job = EvolutionJob {
                system: p.system.clone(),
                initial: p.initial()?,
                t_start: 0.0,
                t_end: cfg.t_end,
                dt,
                switching: SwitchingProfile::None,
            };
            let states = trajectory(&job, &times)?;
            let mut rows = Vec::new();
            for &m in &ms {
                for (&t, r) in times.iter().zip(&states) {
                    let ra = partial_trace(r, dims, Subsystem::A)?;
                    let rb = partial_trace(r, dims, Subsystem::B)?;
                    let k = conserved_measure_k(r, dims)?;
                    rows.push(vec![
                        lambda.into(),
                        (m as f64).into(),
                        t.into(),
                        power_trace(&ra, m).re.ln().into(),
                        power_trace(&rb, m).re.ln().into(),
                        k.re.into(),
                        k.im.into(),
                        Cell::Empty,
                        dt.into(),
                    ]);
                }
            }
            Ok(rows)
        })
        .collect();
    let mut table = Table::new(&["lambda", "M", "t", "ln_s_a", "ln_s_b", "k_re", "k_im", "eta", "dt"], 3);
    table.rows = collect(rows)?;
    Ok((table, tolerances(&[("stability_dt_times_norm", 0.1)])))
}

fn method_column(m: MethodName) -> &'static str {
    match m {
        MethodName::Oracle => "flow_oracle",
        MethodName::Second => "flow_2nd",
        MethodName::Fourth => "flow_4th",
        MethodName::D0 => "flow_d0",
    }
}

fn flows(s: &Scenario) -> Result<(Table, BTreeMap<String, f64>), CliError> {
    let mut methods = s.methods.clone();
    if methods.is_empty() {
        return Err(CliError::Schema("methods: at least one method is required".into()));
    }
    let mut seen = Vec::new();
    methods.retain(|m| if seen.contains(m) { false } else { seen.push(*m); true });
    let needs_integer = methods.iter().any(|m| matches!(m, MethodName::Oracle | MethodName::D0));
    let ms: Vec<f64> =
        if needs_integer { s.sweep.integer_m(2)?.into_iter().map(f64::from).collect() } else { s.sweep.axis("m", 2.0) };
    let points: Vec<((f64, Option<f64>), f64)> = grid(&grid(&lambda_axis(s), &eta_axis(s)), &ms);
    let dt = s.numerics.dt;
    let rows: Vec<Rows> = points
        .par_iter()
        .map(|&((lambda, eta), m)| {
            let p = Prepared::new(s, lambda)?;
            let eta = check_eta(eta.unwrap_or_else(|| default_switching_rate(&p.system)))?;
            let mut values = Vec::new();
            for &method in &methods {
                let v = match method {
                    MethodName::Oracle => {
                        let job = EvolutionJob::switched(p.system.clone(), p.initial()?, eta, s.numerics.ramp_lengths, dt);
                        oracle_renyi_flow(&job, m as u32, &[0.0])?.flow
                    }
                    MethodName::Second => {
                        let (pa, pb) = p.populations(s)?;
                        let rates = golden_rule_rates(&p.system, s.numerics.broadening, eta)?;
                        flow_2nd_states(&rates, &pa, &pb, m)?.flow
                    }
                    MethodName::Fourth => {
                        let (pa, pb) = p.populations(s)?;
                        flow_4th_order(&p.system, &pa, &pb, m, eta)?.flow
                    }
                    MethodName::D0 => {
                        let (pa, pb) = p.populations(s)?;
                        let rates = golden_rule_rates(&p.system, s.numerics.broadening, eta)?;
                        let pin = s.numerics.pinning_factor * rates.scale();
                        let model = RateModel::new(rates).with_intrinsic_b(relaxation_rates(&pb, pin));
                        multiworld_flow_via_d0(&build_multiworld_generator(&model, &pa, m as u32)?)?.flow
                    }
                };
                values.push(v);
            }
            let err = match (methods.iter().position(|&x| x == MethodName::Oracle), values.len()) {
                (_, 1) => None,
                (Some(o), _) => {
                    let other = if o == 0 { 1 } else { 0 };
                    Some((values[other] - values[o]).abs())
                }
                (None, _) => Some((values[1] - values[0]).abs()),
            };
            let mut row: Vec<Cell> = vec![lambda.into(), m.into()];
            row.extend(values.into_iter().map(Cell::from));
            row.extend([err.into(), eta.into(), dt.into()]);
            Ok(vec![row])
        })
        .collect();
    let mut cols = vec!["lambda", "M"];
    cols.extend(methods.iter().map(|&m| method_column(m)));
    cols.extend(["abs_err", "eta", "dt"]);
    let n = cols.len();
    let mut table = Table::new(&cols, 2);
    table.rows = collect(rows)?;
    // Equal (lambda, m) keys under an eta sweep: break ties on eta.
    let eta_col = n - 2;
    table.rows.sort_by(|x, y| x[eta_col].cmp_key(&y[eta_col]));
    Ok((table, tolerances(&[("stationarity_residual", 0.1), ("stability_dt_times_norm", 0.1)])))
}

fn fcs(s: &Scenario) -> Result<(Table, BTreeMap<String, f64>), CliError> {
    let cfg = s.fcs.as_ref().expect("validated");
    if !(cfg.window > 0.0) {
        return Err(CliError::Schema("fcs.window: must be positive".into()));
    }
    let chis = s.sweep.axis("chi", 0.0);
    let points = grid(&lambda_axis(s), &eta_axis(s));
    let window = cfg.window;
    let rows: Vec<Rows> = points
        .par_iter()
        .map(|&(lambda, eta)| {
            let p = Prepared::new(s, lambda)?;
            let eta = check_eta(eta.unwrap_or_else(|| default_switching_rate(&p.system)))?;
            let (pa, pb) = p.populations(s)?;
            let rates = golden_rule_rates(&p.system, s.numerics.broadening, eta)?;
            let mut model = RateModel::new(rates);
            if let Some(g) = cfg.relax_a {
                model = model.with_intrinsic_a(relaxation_rates(&pa, g));
            }
            if let Some(g) = cfg.relax_b {
                model = model.with_intrinsic_b(relaxation_rates(&pb, g));
            }
            let weights = p.system.h_a().spectrum().energies;
            let family = |chi: crate::operator::C64| build_generator(&model, chi, &weights);
            let zs: Vec<_> = chis.iter().map(|&x| c(x)).collect();
            let act = keldysh_action(&family, &zs, window)?;
            let mut rows = Vec::new();
            for (k, &chi) in chis.iter().enumerate() {
                let d0 = dominant_eigenvalue(&family(zs[k])?)?;
                let a = act.values[k];
                rows.push(vec![
                    lambda.into(),
                    chi.into(),
                    d0.re.into(),
                    d0.im.into(),
                    a.re.into(),
                    a.im.into(),
                    window.into(),
                    eta.into(),
                ]);
            }
            Ok(rows)
        })
        .collect();
    let mut table = Table::new(&["lambda", "chi", "d0_re", "d0_im", "action_re", "action_im", "window", "eta"], 2);
    table.rows = collect(rows)?;
    let eta_col = 7;
    table.rows.sort_by(|x, y| x[eta_col].cmp_key(&y[eta_col]));
    table.sort();
    Ok((table, tolerances(&[("min_window_gaps", crate::master::MIN_WINDOW_GAPS)])))
}

/// Width used for the sharp-line KMS comparison.
const KMS_LINE_ETA: f64 = 1e-10;
pub const KMS_TOLERANCE: f64 = 1e-8;
pub const FREE_ENERGY_TOLERANCE: f64 = 1e-12;

fn kms_check(s: &Scenario) -> Result<(Table, BTreeMap<String, f64>), CliError> {
    let cfg = s.kms.as_ref().expect("validated");
    let h = cfg.h.build(s.seed, "kms.h")?;
    if cfg.ops.is_empty() {
        return Err(CliError::Schema("kms.ops: at least one operator is required".into()));
    }
    let ops = cfg
        .ops
        .iter()
        .enumerate()
        .map(|(i, o)| {
            let op = o.build(s.seed.wrapping_add(1 + i as u64), &format!("kms.ops[{i}]"))?;
            if op.dim() != h.dim() {
                return Err(CliError::Schema(format!("kms.ops[{i}]: dimension differs from kms.h")));
            }
            Ok(op)
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let betas = s.sweep.axis("beta", 1.0);
    if let Some(k) = betas.iter().position(|&b| !(b > 0.0)) {
        return Err(CliError::Schema(format!("sweep.beta[{k}]: must be positive")));
    }
    let ms = s.sweep.integer_m(2)?;
    let omegas = line_frequencies(&h, &ops, 1e-9);
    if omegas.is_empty() {
        return Err(CliError::Numerical("operators connect no distinct energy levels".into()));
    }
    let rows: Vec<Rows> = grid(&betas, &ms)
        .par_iter()
        .map(|&(beta, m)| {
            let spec = spectral_data(&h, &ops, beta * m as f64, &omegas, KMS_LINE_ETA)?;
            let fe = renyi_free_energy_identity(&h, beta, m)?;
            (0..=m)
                .map(|n| {
                    let corr = energy_basis_correlator(&h, &ops, beta, n, m, &omegas, KMS_LINE_ETA)?;
                    let r = check_kms_multi(&spec, &corr, n, m)?;
                    Ok(vec![beta.into(), (m as f64).into(), (n as f64).into(), r.into(), fe.into(), KMS_LINE_ETA.into()])
                })
                .collect()
        })
        .collect();
    let mut table = Table::new(&["beta", "M", "N", "residual", "free_energy_residual", "eta"], 3);
    table.rows = collect(rows)?;
    Ok((table, tolerances(&[("kms_residual", KMS_TOLERANCE), ("free_energy_residual", FREE_ENERGY_TOLERANCE)])))
}

fn qhe(s: &Scenario) -> Result<(Table, BTreeMap<String, f64>), CliError> {
    let spec = s.qhe.as_ref().expect("validated").build()?;
    let betas = s.sweep.axis("beta", 1.0 / spec.environments[spec.probe].temperature);
    if let Some(k) = betas.iter().position(|&b| !(b > 0.0)) {
        return Err(CliError::Schema(format!("sweep.beta[{k}]: must be positive")));
    }
    let ms = s.sweep.axis("m", 2.0);
    let rows: Vec<Rows> = betas
        .par_iter()
        .map(|&beta| {
            let at = spec.with_probe_temperature(1.0 / beta);
            let rho = steady_state(&at)?;
            let ratio = at.probe_rate_ratio();
            ms.iter()
                .map(|&m| {
                    let r = qhe_flows(&at, &rho, m, beta)?;
                    let part = |k: &str| r.part(k).expect("qhe breakdown");
                    Ok(vec![
                        beta.into(),
                        m.into(),
                        part("q_i").into(),
                        part("q_c").into(),
                        r.flow.into(),
                        part("f_s").into(),
                        part("low_t").into(),
                        part("prefactor").into(),
                        ratio.into(),
                        Cell::Empty,
                        Cell::Empty,
                    ])
                })
                .collect()
        })
        .collect();
    let mut table = Table::new(
        &["beta_probe", "M", "q_i", "q_c", "flow", "f_s", "low_t", "prefactor", "probe_ratio", "eta", "dt"],
        2,
    );
    table.rows = collect(rows)?;
    Ok((table, tolerances(&[("probe_ratio_warning", crate::qhe::PROBE_RATIO_WARNING)])))
}

fn correspond(s: &Scenario) -> Result<(Table, BTreeMap<String, f64>), CliError> {
    let cfg = s.correspond.as_ref().expect("validated");
    let ms = s.sweep.integer_m(2)?;
    let points = grid(&grid(&lambda_axis(s), &eta_axis(s)), &ms);
    let rows: Vec<Rows> = points
        .par_iter()
        .map(|&((lambda, eta), m)| {
            let spec = s.system();
            let system = spec.build(s.seed, lambda)?;
            let (sb, kb) = spec.state('b')?;
            let rho_b = sb.build(system.h_b(), &kb)?;
            let eta = check_eta(eta.unwrap_or_else(|| default_eta(&system)))?;
            let model = CorrespondenceModel::new(system, rho_b, cfg.beta, s.numerics.broadening, eta, cfg.pinning)?;
            let r = check_correspondence(&model, m)?;
            Ok(vec![vec![
                lambda.into(),
                (m as f64).into(),
                r.flow_per_world.into(),
                r.fcs_difference.into(),
                r.f_i.re.into(),
                r.f_c.re.into(),
                r.residual.into(),
                r.relative.into(),
                eta.into(),
                Cell::Empty,
            ]])
        })
        .collect();
    let mut table = Table::new(
        &["lambda", "M", "flow_per_world", "fcs_difference", "f_i", "f_c", "residual", "relative", "eta", "dt"],
        2,
    );
    table.rows = collect(rows)?;
    table.rows.sort_by(|x, y| x[8].cmp_key(&y[8]));
    Ok((table, tolerances(&[("relative_residual", 0.05)])))
}

fn build_pattern(p: &PatternSpec, k: usize) -> Result<(String, ReconnectionPattern), CliError> {
    let key = format!("patterns[{k}]");
    let bad = |msg: &str| CliError::Schema(format!("{key}: {msg}"));
    match (&p.name, &p.perm_a, &p.perm_b) {
        (Some(name), None, None) => {
            let worlds = p.worlds.unwrap_or(2);
            let pat = match name.as_str() {
                "renyi-a" => ReconnectionPattern::renyi_a(worlds)?,
                "renyi-b" => ReconnectionPattern::renyi_b(worlds)?,
                "k" => ReconnectionPattern::k_measure(),
                _ => return Err(bad("name must be renyi-a, renyi-b or k")),
            };
            Ok((format!("{name}-{}", pat.worlds()), pat))
        }
        (None, Some(a), Some(b)) => {
            let pat = ReconnectionPattern::custom(a.clone(), b.clone())?;
            let fmt = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(" ");
            Ok((format!("a[{}] b[{}]", fmt(a), fmt(b)), pat))
        }
        _ => Err(bad("give either name or both perm_a and perm_b")),
    }
}

fn patterns(s: &Scenario) -> Result<(Table, BTreeMap<String, f64>), CliError> {
    let pats = s.patterns.iter().enumerate().map(|(k, p)| build_pattern(p, k)).collect::<Result<Vec<_>, _>>()?;
    let dt = s.numerics.dt;
    let points = grid(&lambda_axis(s), &eta_axis(s));
    let rows: Vec<Rows> = points
        .par_iter()
        .map(|&(lambda, eta)| {
            let p = Prepared::new(s, lambda)?;
            let eta = check_eta(eta.unwrap_or_else(|| default_switching_rate(&p.system)))?;
            let job = EvolutionJob::switched(p.system.clone(), p.initial()?, eta, s.numerics.ramp_lengths, dt);
            pats.iter()
                .map(|(label, pat)| {
                    let f = pattern_flow(&job, pat, &[0.0])?;
                    Ok(vec![
                        Cell::Text(label.clone()),
                        lambda.into(),
                        (pat.worlds() as f64).into(),
                        f.flow.into(),
                        eta.into(),
                        dt.into(),
                    ])
                })
                .collect()
        })
        .collect();
    let mut table = Table::new(&["label", "lambda", "worlds", "flow", "eta", "dt"], 2);
    table.rows = collect(rows)?;
    table.rows.sort_by(|x, y| x[4].cmp_key(&y[4]));
    Ok((table, tolerances(&[("stationarity_residual", 0.1), ("stability_dt_times_norm", 0.1)])))
}
