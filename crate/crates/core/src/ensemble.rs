//! Seeded Monte-Carlo ensembles over records, and exact enumeration of
//! future jump records.
//!
//! Trajectory `i` of an ensemble draws from stream `i` of the master seed,
//! so stream 0 reproduces [`dynamics::simulate`] with `seed = master_seed`.
//! Per-trajectory statistics are reduced in fixed-size chunks whose partial
//! sums are combined in index order, so results do not depend on the number
//! of worker threads.

use rayon::prelude::*;

use crate::dynamics::{self, build_step_operators, filter_trajectory, ModelParams, OperatorForm, Outcome};
use crate::qmath::{self, bloch_vector, CMatrix};
use crate::rng::StreamSeed;
use crate::smoothing::{self, petz_fuchs};
use crate::{Error, Result};

const CHUNK: usize = 32;

/// Which per-time statistics to accumulate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Outputs {
    pub avg_purity_filtered: bool,
    pub avg_purity_smoothed: bool,
    pub mean_bloch_filtered: bool,
    pub mean_bloch_smoothed: bool,
    pub unconditional_baseline: bool,
}

impl Outputs {
    pub const ALL: Outputs = Outputs {
        avg_purity_filtered: true,
        avg_purity_smoothed: true,
        mean_bloch_filtered: true,
        mean_bloch_smoothed: true,
        unconditional_baseline: true,
    };

    fn needs_smoothing(&self) -> bool {
        self.avg_purity_smoothed || self.mean_bloch_smoothed
    }
}

impl Default for Outputs {
    fn default() -> Self {
        Outputs::ALL
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleSpec {
    pub params: ModelParams,
    pub n_traj: usize,
    pub master_seed: u64,
    pub outputs: Outputs,
    /// Time window for the purity-improvement summary.
    pub window: (f64, f64),
}

impl EnsembleSpec {
    pub fn new(params: ModelParams, n_traj: usize, master_seed: u64) -> Self {
        EnsembleSpec {
            params,
            n_traj,
            master_seed,
            outputs: Outputs::ALL,
            window: (4.0, 7.5),
        }
    }
}

/// Mean and standard error of a per-time quantity; `se` is NaN for a single trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct SeriesStat {
    pub mean: Vec<f64>,
    pub se: Vec<f64>,
}

/// Window-averaged purities and their paired difference.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WindowSummary {
    pub mean_filtered: f64,
    pub mean_smoothed: f64,
    /// Mean over trajectories of the window-averaged `P_S - P_F`.
    pub improvement: f64,
    /// Standard error of `improvement` across trajectories.
    pub improvement_se: f64,
    /// `improvement / mean_filtered`.
    pub relative_improvement: f64,
    pub n_points: usize,
}

/// Worst physicality defects seen among smoothed states.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Physicality {
    pub min_eigenvalue: f64,
    pub max_trace_error: f64,
}

#[derive(Clone, Debug)]
pub struct EnsembleResult {
    pub times: Vec<f64>,
    pub n_traj: usize,
    pub purity_filtered: Option<SeriesStat>,
    pub purity_smoothed: Option<SeriesStat>,
    pub bloch_filtered: Option<[SeriesStat; 3]>,
    pub bloch_smoothed: Option<[SeriesStat; 3]>,
    pub unconditional_purity: Option<Vec<f64>>,
    pub unconditional_bloch: Option<Vec<[f64; 3]>>,
    pub window: Option<WindowSummary>,
    pub physicality: Option<Physicality>,
}

// Column layout of the accumulators.
const PF: usize = 0;
const PS: usize = 1;
const BF: usize = 2;
const BS: usize = 5;
const COLS: usize = 8;

#[derive(Clone)]
struct Acc {
    sum: Vec<f64>,
    sumsq: Vec<f64>,
    diff_sum: f64,
    diff_sumsq: f64,
    wf_sum: f64,
    ws_sum: f64,
    min_eig: f64,
    max_tr_err: f64,
}

impl Acc {
    fn new(points: usize) -> Self {
        Acc {
            sum: vec![0.0; points * COLS],
            sumsq: vec![0.0; points * COLS],
            diff_sum: 0.0,
            diff_sumsq: 0.0,
            wf_sum: 0.0,
            ws_sum: 0.0,
            min_eig: f64::INFINITY,
            max_tr_err: 0.0,
        }
    }

    fn merge(&mut self, other: &Acc) {
        for (a, b) in self.sum.iter_mut().zip(&other.sum) {
            *a += b;
        }
        for (a, b) in self.sumsq.iter_mut().zip(&other.sumsq) {
            *a += b;
        }
        self.diff_sum += other.diff_sum;
        self.diff_sumsq += other.diff_sumsq;
        self.wf_sum += other.wf_sum;
        self.ws_sum += other.ws_sum;
        self.min_eig = self.min_eig.min(other.min_eig);
        self.max_tr_err = self.max_tr_err.max(other.max_tr_err);
    }
}

/// Per-trajectory values on the grid.
struct TrajStats {
    values: Vec<f64>,
    window_filtered: f64,
    window_smoothed: f64,
    min_eig: f64,
    max_tr_err: f64,
}

fn trajectory_stats(spec: &EnsembleSpec, index: usize, window: &[usize]) -> Result<TrajStats> {
    let p = &spec.params;
    let traj = filter_trajectory(p, StreamSeed::new(spec.master_seed, index as u64))?;
    let points = traj.states.len();
    let mut values = vec![0.0; points * COLS];
    let mut min_eig = f64::INFINITY;
    let mut max_tr_err: f64 = 0.0;
    let smoothed = if spec.outputs.needs_smoothing() {
        let (_, eff) = smoothing::retrofilter_trajectory(&traj, p)?;
        let s = traj
            .states
            .iter()
            .zip(&eff.effects)
            .enumerate()
            .map(|(k, (f, e))| petz_fuchs(f, e).map_err(|err| err.at(k)))
            .collect::<Result<Vec<_>>>()?;
        for st in &s {
            min_eig = min_eig.min(qmath::min_eigenvalue(st));
            max_tr_err = max_tr_err.max((st.trace_re() - 1.0).abs());
        }
        Some(s)
    } else {
        None
    };
    for k in 0..points {
        let row = &mut values[k * COLS..(k + 1) * COLS];
        let f = &traj.states[k];
        row[PF] = qmath::purity(f)?;
        let b = bloch_vector(f);
        row[BF..BF + 3].copy_from_slice(&b);
        if let Some(s) = &smoothed {
            row[PS] = qmath::purity(&s[k])?;
            row[BS..BS + 3].copy_from_slice(&bloch_vector(&s[k]));
        }
    }
    let avg = |col: usize| {
        if window.is_empty() {
            f64::NAN
        } else {
            window.iter().map(|&k| values[k * COLS + col]).sum::<f64>() / window.len() as f64
        }
    };
    Ok(TrajStats {
        window_filtered: avg(PF),
        window_smoothed: avg(PS),
        values,
        min_eig,
        max_tr_err,
    })
}

fn stat(acc: &Acc, n: usize, points: usize, col: usize) -> SeriesStat {
    let nf = n as f64;
    let mut mean = Vec::with_capacity(points);
    let mut se = Vec::with_capacity(points);
    for k in 0..points {
        let s = acc.sum[k * COLS + col];
        let q = acc.sumsq[k * COLS + col];
        let m = s / nf;
        mean.push(m);
        se.push(standard_error(m, q, n));
    }
    SeriesStat { mean, se }
}

fn standard_error(mean: f64, sumsq: f64, n: usize) -> f64 {
    if n < 2 {
        return f64::NAN;
    }
    let nf = n as f64;
    let var = ((sumsq - nf * mean * mean) / (nf - 1.0)).max(0.0);
    (var / nf).sqrt()
}

/// Runs the ensemble on the current rayon pool.
pub fn run_ensemble(spec: &EnsembleSpec) -> Result<EnsembleResult> {
    if spec.n_traj == 0 {
        return Err(Error::InvalidParams("n_traj must be at least 1".into()));
    }
    let p = &spec.params;
    p.validate()?;
    let times = p.times();
    let points = times.len();
    let eps = 1e-9 * p.dt;
    let window: Vec<usize> = times
        .iter()
        .enumerate()
        .filter(|(_, &t)| t >= spec.window.0 - eps && t <= spec.window.1 + eps)
        .map(|(k, _)| k)
        .collect();

    let n_chunks = spec.n_traj.div_ceil(CHUNK);
    let partials: Vec<Acc> = (0..n_chunks)
        .into_par_iter()
        .map(|c| -> Result<Acc> {
            let mut acc = Acc::new(points);
            for i in (c * CHUNK)..((c + 1) * CHUNK).min(spec.n_traj) {
                let t = trajectory_stats(spec, i, &window)?;
                for (j, v) in t.values.iter().enumerate() {
                    acc.sum[j] += v;
                    acc.sumsq[j] += v * v;
                }
                let d = t.window_smoothed - t.window_filtered;
                acc.diff_sum += d;
                acc.diff_sumsq += d * d;
                acc.wf_sum += t.window_filtered;
                acc.ws_sum += t.window_smoothed;
                acc.min_eig = acc.min_eig.min(t.min_eig);
                acc.max_tr_err = acc.max_tr_err.max(t.max_tr_err);
            }
            Ok(acc)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut acc = Acc::new(points);
    for part in &partials {
        acc.merge(part);
    }

    let n = spec.n_traj;
    let o = spec.outputs;
    let smoothing = o.needs_smoothing();
    let bloch = |base: usize| {
        [
            stat(&acc, n, points, base),
            stat(&acc, n, points, base + 1),
            stat(&acc, n, points, base + 2),
        ]
    };
    let (unconditional_purity, unconditional_bloch) = if o.unconditional_baseline {
        let series = dynamics::unconditional_series(p)?;
        (
            Some(series.iter().map(qmath::purity).collect::<Result<Vec<_>>>()?),
            Some(series.iter().map(bloch_vector).collect()),
        )
    } else {
        (None, None)
    };
    let window_summary = if smoothing && !window.is_empty() {
        let nf = n as f64;
        let improvement = acc.diff_sum / nf;
        let mean_filtered = acc.wf_sum / nf;
        Some(WindowSummary {
            mean_filtered,
            mean_smoothed: acc.ws_sum / nf,
            improvement,
            improvement_se: standard_error(improvement, acc.diff_sumsq, n),
            relative_improvement: improvement / mean_filtered,
            n_points: window.len(),
        })
    } else {
        None
    };
    Ok(EnsembleResult {
        times,
        n_traj: n,
        purity_filtered: o.avg_purity_filtered.then(|| stat(&acc, n, points, PF)),
        purity_smoothed: o.avg_purity_smoothed.then(|| stat(&acc, n, points, PS)),
        bloch_filtered: o.mean_bloch_filtered.then(|| bloch(BF)),
        bloch_smoothed: o.mean_bloch_smoothed.then(|| bloch(BS)),
        unconditional_purity,
        unconditional_bloch,
        window: window_summary,
        physicality: smoothing.then_some(Physicality {
            min_eigenvalue: acc.min_eig,
            max_trace_error: acc.max_tr_err,
        }),
    })
}

/// Averages Petz-Fuchs smoothed states over all `2^future_steps` jump
/// futures of a sampled `past_steps`-step record, each weighted by its
/// probability given the past, and returns the largest entrywise distance
/// from the filtered state at the end of the past.
///
/// Uses the physical step maps with exact square-root operators so that
/// the future probabilities and effects are complete to round-off. The
/// final effect is `final_effect_scale * 1`.
pub fn enumerate_future_average(
    p: &ModelParams,
    past_steps: usize,
    future_steps: usize,
    final_effect_scale: f64,
) -> Result<f64> {
    if p.unraveling.is_homodyne() {
        return Err(Error::InvalidParams("enumeration needs the jump unraveling".into()));
    }
    if future_steps > 16 {
        return Err(Error::InvalidParams("at most 16 future steps can be enumerated".into()));
    }
    if !(final_effect_scale > 0.0) {
        return Err(Error::InvalidParams("final effect scale must be positive".into()));
    }
    let q = ModelParams {
        form: OperatorForm::Exact,
        t_final: past_steps.max(1) as f64 * p.dt,
        ..p.clone()
    };
    let ops = build_step_operators(&q)?;
    let past: Vec<Outcome> = if past_steps == 0 {
        Vec::new()
    } else {
        filter_trajectory(&q, StreamSeed::new(q.seed, 0))?
            .record
            .outcomes
            .iter()
            .map(|o| o.physical())
            .collect()
    };
    let filtered = dynamics::filter_given_outcomes(&q, &past)?;
    let rho_f = filtered.states.last().expect("nonempty").clone();
    if future_steps == 0 {
        return Ok(0.0);
    }
    let maps = [
        ops.conditional_map(&Outcome::Jump {
            detected: false,
            p_ost: None,
        })?,
        ops.conditional_map(&Outcome::Jump {
            detected: true,
            p_ost: None,
        })?,
    ];
    let dim = rho_f.dim();
    let mut total = CMatrix::zeros(dim);
    for bits in 0..(1usize << future_steps) {
        let seq: Vec<usize> = (0..future_steps).map(|j| (bits >> j) & 1).collect();
        let mut rho = rho_f.clone();
        for &b in &seq {
            rho = maps[b].apply(&rho)?;
        }
        let prob = rho.trace_re();
        if prob <= 0.0 {
            continue;
        }
        let mut effect = CMatrix::identity(dim).scale(final_effect_scale);
        for &b in seq.iter().rev() {
            effect = maps[b].adjoint_apply(&effect)?;
        }
        total += &petz_fuchs(&rho_f, &effect)?.scale(prob);
    }
    Ok(total.max_abs_diff(&rho_f))
}
