//! The four subcommands.

use qsmooth::channels::{compose, petz_recover};
use qsmooth::classical::{smooth_record, ClassicalState, ConditionalKernel};
use qsmooth::dynamics::{
    build_step_operators, simulate, unconditional_series, ModelParams, OperatorForm, Outcome, Unraveling,
};
use qsmooth::ensemble::{enumerate_future_average, run_ensemble, EnsembleSpec, Outputs};
use qsmooth::qmath::{bloch_vector, min_eigenvalue, purity};
use qsmooth::rng::StreamSeed;
use qsmooth::smoothing::{
    gw_smooth_with_effects, petz_fuchs_recursive, retrofilter_trajectory, smooth, smooth_with_effects, swv_state,
    GwConfig,
};
use qsmooth::{CMatrix, Error};
use rand::Rng;
use serde_json::{json, Value};

use crate::config::{Format, RunConfig, Smoother};
use crate::output::{csv, emit, json_document, json_f64, Column};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("{}", numerical_message(.0))]
    Numerical(Error),
    #[error("output error: {0}")]
    Io(#[from] std::io::Error),
}

fn numerical_message(e: &Error) -> String {
    match e.step() {
        Some(k) => format!("numerical failure at time index {k}: {e}"),
        None => format!("numerical failure: {e}"),
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Config(_) | CliError::Io(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidParams(msg) => CliError::Config(msg),
            e => CliError::Numerical(e),
        }
    }
}

fn bloch_columns(prefix: char, states: &[CMatrix]) -> [Column; 3] {
    let b: Vec<[f64; 3]> = states.iter().map(bloch_vector).collect();
    ["x", "y", "z"].map(|axis| {
        let i = match axis {
            "x" => 0,
            "y" => 1,
            _ => 2,
        };
        Column::new(format!("{prefix}{axis}"), b.iter().map(|r| r[i]).collect())
    })
}

fn purities(states: &[CMatrix]) -> Result<Vec<f64>, CliError> {
    states
        .iter()
        .enumerate()
        .map(|(k, s)| {
            purity(s).map_err(|e| {
                CliError::Numerical(Error::AtStep {
                    step: k,
                    source: Box::new(e),
                })
            })
        })
        .collect()
}

fn outcome_column(outcomes: &[Outcome]) -> Column {
    let mut v: Vec<Option<f64>> = outcomes.iter().map(|o| Some(o.value())).collect();
    v.push(None);
    Column::sparse("outcome", v)
}

fn gw_seed(cfg: &RunConfig) -> u64 {
    StreamSeed::new(cfg.seed, 0).child(1).master
}

pub fn cmd_simulate(cfg: &RunConfig) -> Result<(), CliError> {
    let p = cfg.params().map_err(CliError::Config)?;
    let traj = simulate(&p)?;
    let (maps, effects) = retrofilter_trajectory(&traj, &p)?;
    let res = smooth_with_effects(&traj, effects.clone())?;
    let unc = unconditional_series(&p)?;

    let [fx, fy, fz] = bloch_columns('f', &res.filtered);
    let [sx, sy, sz] = bloch_columns('s', &res.smoothed);
    let [ux, uy, uz] = bloch_columns('u', &unc);
    let mut columns = vec![
        Column::new("t", res.times.clone()),
        outcome_column(&traj.record.outcomes),
        fx,
        fy,
        fz,
        sx,
        sy,
        sz,
        ux,
        uy,
        uz,
        Column::new("p_filt", res.purity_filtered.clone()),
        Column::new("p_smooth", res.purity_smoothed.clone()),
    ];
    let mut checks = serde_json::Map::new();
    checks.insert("n_detections".into(), json!(traj.record.n_detections()));
    checks.insert("log_likelihood".into(), json_f64(res.log_likelihood));
    checks.insert(
        "min_eigenvalue_smoothed".into(),
        json_f64(res.smoothed.iter().map(min_eigenvalue).fold(f64::INFINITY, f64::min)),
    );

    if cfg.has_smoother(Smoother::Swv) {
        let mut p_swv = Vec::with_capacity(res.filtered.len());
        let mut eig = Vec::with_capacity(res.filtered.len());
        for (k, (f, e)) in res.filtered.iter().zip(&effects.effects).enumerate() {
            let s = swv_state(f, e).map_err(|e| {
                CliError::Numerical(Error::AtStep {
                    step: k,
                    source: Box::new(e),
                })
            })?;
            p_swv.push(s.trace_product(&s).re);
            eig.push(min_eigenvalue(&s));
        }
        checks.insert(
            "max_purity_swv".into(),
            json_f64(p_swv.iter().cloned().fold(f64::MIN, f64::max)),
        );
        columns.push(Column::new("p_swv", p_swv));
        columns.push(Column::new("swv_min_eig", eig));
    }
    if cfg.has_smoother(Smoother::Recursive) {
        let rec = petz_fuchs_recursive(&traj, &maps)?;
        let dev = rec
            .iter()
            .zip(&res.smoothed)
            .map(|(a, b)| a.max_abs_diff(b))
            .fold(0.0, f64::max);
        checks.insert("recursive_vs_closed_form".into(), json_f64(dev));
        let [rx, ry, rz] = bloch_columns('r', &rec);
        columns.extend([rx, ry, rz, Column::new("p_rec", purities(&rec)?)]);
    }
    if cfg.has_smoother(Smoother::Gw) {
        let gcfg = GwConfig {
            bob: cfg.bob,
            n_bob: cfg.n_bob,
            seed: gw_seed(cfg),
        };
        let gw = gw_smooth_with_effects(&traj, &effects, &p, &gcfg)?;
        checks.insert(
            "min_ess".into(),
            json_f64(gw.ess.iter().cloned().fold(f64::INFINITY, f64::min)),
        );
        let [gx, gy, gz] = bloch_columns('g', &gw.gw);
        columns.extend([
            gx,
            gy,
            gz,
            Column::new("p_gw", purities(&gw.gw)?),
            Column::new("p_pf_gw", purities(&gw.pf_gw)?),
        ]);
        columns.push(Column::new("ess", gw.ess));
    }

    let text = match cfg.format {
        Format::Csv => {
            let notes: Vec<(String, String)> = checks.iter().map(|(k, v)| (k.clone(), v.to_string())).collect();
            csv("simulate", cfg, &notes, &columns)
        }
        Format::Json => json_document("simulate", cfg, &columns, Value::Object(checks)),
    };
    emit(cfg, &text)?;
    Ok(())
}

pub fn cmd_ensemble(cfg: &RunConfig) -> Result<(), CliError> {
    let p = cfg.params().map_err(CliError::Config)?;
    if cfg.n_traj == 0 {
        return Err(CliError::Config("n_traj must be positive".into()));
    }
    let spec = EnsembleSpec {
        params: p,
        n_traj: cfg.n_traj,
        master_seed: cfg.seed,
        outputs: Outputs::ALL,
        window: (cfg.window_start, cfg.window_end),
    };
    let res = run_ensemble(&spec)?;
    let pf = res.purity_filtered.expect("requested");
    let ps = res.purity_smoothed.expect("requested");
    let columns = vec![
        Column::new("t", res.times.clone()),
        Column::new("p_filt", pf.mean),
        Column::new("se_filt", pf.se),
        Column::new("p_smooth", ps.mean),
        Column::new("se_smooth", ps.se),
        Column::new("p_uncond", res.unconditional_purity.expect("requested")),
    ];
    let mut checks = serde_json::Map::new();
    checks.insert("n_traj".into(), json!(res.n_traj));
    if let Some(w) = &res.window {
        checks.insert(
            "window".into(),
            json!({
                "start": json_f64(cfg.window_start),
                "end": json_f64(cfg.window_end),
                "n_points": w.n_points,
                "mean_filtered": json_f64(w.mean_filtered),
                "mean_smoothed": json_f64(w.mean_smoothed),
                "improvement": json_f64(w.improvement),
                "improvement_se": json_f64(w.improvement_se),
                "relative_improvement": json_f64(w.relative_improvement),
            }),
        );
    }
    if let Some(ph) = &res.physicality {
        checks.insert(
            "physicality".into(),
            json!({
                "min_eigenvalue": json_f64(ph.min_eigenvalue),
                "max_trace_error": json_f64(ph.max_trace_error),
            }),
        );
    }
    let text = match cfg.format {
        Format::Csv => {
            let mut notes = Vec::new();
            if let Some(w) = &res.window {
                notes.push((
                    "window".to_string(),
                    format!(
                        "[{}, {}] filtered {} smoothed {} improvement {} se {} relative {}",
                        cfg.window_start,
                        cfg.window_end,
                        w.mean_filtered,
                        w.mean_smoothed,
                        w.improvement,
                        w.improvement_se,
                        w.relative_improvement
                    ),
                ));
            }
            if let Some(ph) = &res.physicality {
                notes.push((
                    "physicality".to_string(),
                    format!(
                        "min eigenvalue {} max trace error {}",
                        ph.min_eigenvalue, ph.max_trace_error
                    ),
                ));
            }
            csv("ensemble", cfg, &notes, &columns)
        }
        Format::Json => json_document("ensemble", cfg, &columns, Value::Object(checks)),
    };
    emit(cfg, &text)?;
    Ok(())
}

struct Check {
    name: &'static str,
    value: Result<f64, String>,
    tolerance: f64,
}

impl Check {
    fn passed(&self) -> bool {
        matches!(self.value, Ok(v) if v.is_finite() && v <= self.tolerance)
    }

    fn json(&self) -> Value {
        let mut v = json!({
            "name": self.name,
            "tolerance": json_f64(self.tolerance),
            "pass": self.passed(),
        });
        match &self.value {
            Ok(x) => v["value"] = json_f64(*x),
            Err(e) => {
                v["value"] = Value::Null;
                v["error"] = Value::String(e.clone());
            }
        }
        v
    }
}

/// Short records keep the suite fast at any step size.
fn short(p: &ModelParams, steps: usize) -> ModelParams {
    ModelParams {
        t_final: p.t_final.min(steps as f64 * p.dt),
        ..p.clone()
    }
}

fn check_enumeration(p: &ModelParams) -> Result<f64, Error> {
    let q = ModelParams {
        rho0: p.rho0.clone(),
        ..p.clone()
    }
    .with_unraveling(Unraveling::Jump);
    enumerate_future_average(&q, 5, 6, 1.0)
}

fn check_recursion(p: &ModelParams) -> Result<f64, Error> {
    let mut worst: f64 = 0.0;
    for (i, u) in Unraveling::ALL.into_iter().enumerate() {
        let q = ModelParams {
            seed: p.seed.wrapping_add(i as u64),
            ..short(p, 200)
        }
        .with_unraveling(u);
        let traj = simulate(&q)?;
        let (maps, eff) = retrofilter_trajectory(&traj, &q)?;
        let closed = smooth_with_effects(&traj, eff)?;
        let rec = petz_fuchs_recursive(&traj, &maps)?;
        for (a, b) in closed.smoothed.iter().zip(&rec) {
            worst = worst.max(a.max_abs_diff(b));
        }
    }
    Ok(worst)
}

fn check_composability(p: &ModelParams) -> Result<f64, Error> {
    let q = short(p, 100);
    let traj = simulate(&q)?;
    let (maps, _) = retrofilter_trajectory(&traj, &q)?;
    let res = smooth(&traj, &q)?;
    let mut worst: f64 = 0.0;
    for k in 0..maps.len().saturating_sub(1) {
        let gamma = &traj.states[k];
        let x = &res.smoothed[k + 2];
        let mid = maps[k].apply(gamma)?;
        let stepwise = petz_recover(&maps[k], gamma, &petz_recover(&maps[k + 1], &mid, x, None)?, None)?;
        let direct = petz_recover(&compose(&maps[k + 1], &maps[k])?, gamma, x, None)?;
        worst = worst.max(stepwise.max_abs_diff(&direct));
    }
    Ok(worst)
}

fn check_classical_reduction(p: &ModelParams) -> Result<f64, Error> {
    let prior = [0.3, 0.7];
    let q = ModelParams {
        omega: 0.0,
        rho0: CMatrix::diag(&prior),
        ..short(p, 200)
    }
    .with_unraveling(Unraveling::Jump);
    let traj = simulate(&q)?;
    let res = smooth(&traj, &q)?;
    let ops = build_step_operators(&q)?;
    let kernels = traj
        .record
        .outcomes
        .iter()
        .map(|o| ops.population_kernel(o))
        .collect::<Result<Vec<_>, _>>()?;
    let refs: Vec<&ConditionalKernel> = kernels.iter().collect();
    let ys: Vec<usize> = traj.record.outcomes.iter().map(|o| o.value() as usize).collect();
    let cl = smooth_record(&refs, &ys, &ClassicalState(prior.to_vec()))?;
    let mut worst: f64 = 0.0;
    for (s, c) in res.smoothed.iter().zip(&cl.smoothed_bayes) {
        for x in 0..2 {
            worst = worst.max((s[(x, x)].re - c[x]).abs());
        }
        worst = worst.max(s[(0, 1)].norm());
    }
    Ok(worst)
}

fn check_completeness(p: &ModelParams) -> Result<f64, Error> {
    Ok(build_step_operators(p)?.unconditional_map()?.completeness_residual())
}

/// Outcome-averaged `sum_y P(y) M_y^dagger M_y - 1` of the sampled measurement
/// operators: the ostensible jump pair at the maximally mixed state, or the
/// homodyne operator averaged over `dW ~ N(0, dt)` by three-point
/// Gauss-Hermite quadrature (exact for this quadratic integrand).
fn check_measurement_completeness(p: &ModelParams) -> Result<f64, Error> {
    let ops = build_step_operators(p)?;
    let id = CMatrix::identity(2);
    let mut total = CMatrix::zeros(2);
    if p.unraveling.is_homodyne() {
        let nodes = [
            (-(3.0f64.sqrt()), 1.0 / 6.0),
            (0.0, 2.0 / 3.0),
            (3.0f64.sqrt(), 1.0 / 6.0),
        ];
        for (z, w) in nodes {
            let noise = z * p.dt.sqrt();
            let m = ops.measurement_operator(&Outcome::Homodyne {
                current: noise / p.dt,
                noise,
            })?;
            total += &m.sandwich_adjoint(&id).scale(w);
        }
    } else {
        let q = ops.jump_probability(&id.scale(0.5))?;
        for (detected, w) in [(false, 1.0 - q), (true, q)] {
            let m = ops.measurement_operator(&Outcome::Jump {
                detected,
                p_ost: Some(q),
            })?;
            total += &m.sandwich_adjoint(&id).scale(w);
        }
    }
    Ok(total.max_abs_diff(&id))
}

/// Allowed completeness defect: round-off for exact operators, otherwise ten
/// times the squared step rate, covering the leading `O(dt^2)` term.
fn completeness_tolerance(p: &ModelParams, exact_possible: bool) -> f64 {
    if exact_possible && p.form == OperatorForm::Exact {
        return 1e-12;
    }
    let rate = p.gamma * (2.0 * p.nbar + 1.0);
    (10.0 * (rate * p.dt).powi(2)).max(1e-14)
}

pub fn cmd_validate(cfg: &RunConfig) -> Result<(), CliError> {
    let p = cfg.params().map_err(CliError::Config)?;
    let show = |r: Result<f64, Error>| r.map_err(|e| numerical_message(&e));
    let checks = vec![
        Check {
            name: "future_average_enumeration",
            value: show(check_enumeration(&p)),
            tolerance: 1e-10,
        },
        Check {
            name: "closed_form_vs_recursion",
            value: show(check_recursion(&p)),
            tolerance: 1e-8,
        },
        Check {
            name: "petz_composability",
            value: show(check_composability(&p)),
            tolerance: 1e-9,
        },
        Check {
            name: "classical_reduction",
            value: show(check_classical_reduction(&p)),
            tolerance: 1e-10,
        },
        Check {
            name: "completeness_residual",
            value: show(check_completeness(&p)),
            tolerance: completeness_tolerance(&p, true),
        },
        Check {
            name: "measurement_completeness_residual",
            value: show(check_measurement_completeness(&p)),
            tolerance: completeness_tolerance(&p, !p.unraveling.is_homodyne()),
        },
    ];
    let all = checks.iter().all(Check::passed);
    let doc = json_document(
        "validate",
        cfg,
        &[],
        json!({ "all_pass": all, "results": checks.iter().map(Check::json).collect::<Vec<_>>() }),
    );
    emit(cfg, &doc)?;
    if all {
        Ok(())
    } else {
        let failed: Vec<&str> = checks.iter().filter(|c| !c.passed()).map(|c| c.name).collect();
        Err(CliError::Validation(failed.join(", ")))
    }
}

/// Two-state telegraph process: flips 0 -> 1 with probability 0.1 and
/// 1 -> 0 with probability 0.2 per step; the outcome reports the current
/// state correctly with probability 0.8 (or 0.5 with `uniform`).
pub fn telegraph_kernel(uniform: bool) -> ConditionalKernel {
    let phi = vec![vec![0.9, 0.2], vec![0.1, 0.8]];
    let hit = if uniform { 0.5 } else { 0.8 };
    let lik = vec![vec![hit, 1.0 - hit], vec![1.0 - hit, hit]];
    ConditionalKernel::from_backaction(&[phi.clone(), phi], &lik).expect("valid telegraph kernel")
}

pub fn cmd_classical_demo(cfg: &RunConfig) -> Result<(), CliError> {
    if cfg.steps == 0 {
        return Err(CliError::Config("steps must be positive".into()));
    }
    let kernel = telegraph_kernel(cfg.uniform);
    let prior = ClassicalState(vec![0.5, 0.5]);
    let mut rng = StreamSeed::new(cfg.seed, 0).rng();
    let hit = if cfg.uniform { 0.5 } else { 0.8 };
    let mut x = usize::from(rng.random::<f64>() >= prior.0[0]);
    let mut hidden = vec![x];
    let mut ys = Vec::with_capacity(cfg.steps);
    for _ in 0..cfg.steps {
        let y = if rng.random::<f64>() < hit { x } else { 1 - x };
        ys.push(y);
        let flip = if x == 0 { 0.1 } else { 0.2 };
        if rng.random::<f64>() < flip {
            x = 1 - x;
        }
        hidden.push(x);
    }
    let kernels = vec![&kernel; cfg.steps];
    let res = smooth_record(&kernels, &ys, &prior)?;
    let filtered: Vec<Vec<f64>> = res.filtered.iter().map(ClassicalState::normalized).collect();
    let route_gap = res
        .smoothed_bayes
        .iter()
        .zip(&res.smoothed_retro)
        .flat_map(|(a, b)| a.iter().zip(b).map(|(u, v)| (u - v).abs()))
        .fold(0.0, f64::max);
    let smooth_vs_filter = res
        .smoothed_bayes
        .iter()
        .zip(&filtered)
        .flat_map(|(a, b)| a.iter().zip(b).map(|(u, v)| (u - v).abs()))
        .fold(0.0, f64::max);

    let pick = |rows: &[Vec<f64>], i: usize| rows.iter().map(|r| r[i]).collect::<Vec<f64>>();
    let mut y_col: Vec<Option<f64>> = ys.iter().map(|&y| Some(y as f64)).collect();
    y_col.push(None);
    let columns = vec![
        Column::new("t", (0..=cfg.steps).map(|k| k as f64).collect()),
        Column::new("x", hidden.iter().map(|&v| v as f64).collect()),
        Column::sparse("y", y_col),
        Column::new("pf0", pick(&filtered, 0)),
        Column::new("pf1", pick(&filtered, 1)),
        Column::new("ps_bayes0", pick(&res.smoothed_bayes, 0)),
        Column::new("ps_bayes1", pick(&res.smoothed_bayes, 1)),
        Column::new("ps_retro0", pick(&res.smoothed_retro, 0)),
        Column::new("ps_retro1", pick(&res.smoothed_retro, 1)),
    ];
    let text = match cfg.format {
        Format::Csv => csv(
            "classical-demo",
            cfg,
            &[
                ("route_gap".to_string(), route_gap.to_string()),
                ("smoothed_vs_filtered".to_string(), smooth_vs_filter.to_string()),
            ],
            &columns,
        ),
        Format::Json => json_document(
            "classical-demo",
            cfg,
            &columns,
            json!({
                "route_gap": json_f64(route_gap),
                "routes_agree": route_gap < 1e-10,
                "smoothed_vs_filtered": json_f64(smooth_vs_filter),
            }),
        ),
    };
    emit(cfg, &text)?;
    Ok(())
}
