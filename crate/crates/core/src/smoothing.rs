//! Retrofiltered effects and the smoothers built on them.
//!
//! - [`petz_fuchs`]: `sqrt(rho_F) E sqrt(rho_F)`, normalised.
//! - [`petz_fuchs_recursive`]: the same state built backwards by Petz
//!   recovery of each step map with the filtered state as reference prior.
//! - [`swv_state`] and [`symmetrized_product`]: the weak-valued family,
//!   Hermitian but not necessarily positive.
//! - [`gw_smooth`]: the two-observer estimators, averaging true states over
//!   importance-sampled records of the unobserved channel.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::channels::{self, CpMap};
use crate::dynamics::{
    self, build_step_operators, jump_operator, quadrature_mean, ModelParams, OperatorForm, Trajectory, Unraveling,
};
use crate::qmath::{self, CMatrix, DensityMatrix, Effect, MIN_TRACE};
use crate::rng::StreamSeed;
use crate::{Error, Result};

/// Retrofiltered effects along a record.
///
/// `effects[k]` has trace equal to the dimension; the unnormalised effect
/// is `exp(log_scale[k]) * effects[k]`, with `effects[N]` the identity.
#[derive(Clone, Debug)]
pub struct EffectSeries {
    pub effects: Vec<Effect>,
    pub log_scale: Vec<f64>,
}

/// Backward pass `E(t) = F_t^dagger[E(t + dt)]` from `E(T) = 1`.
pub fn retrofilter(maps: &[CpMap]) -> Result<EffectSeries> {
    let dim = maps.first().map(|m| m.dim()).unwrap_or(2);
    let n = maps.len();
    let mut effects = vec![CMatrix::identity(dim); n + 1];
    let mut log_scale = vec![0.0; n + 1];
    for k in (0..n).rev() {
        let raw = maps[k].adjoint_apply(&effects[k + 1]).map_err(|e| e.at(k))?;
        let s = raw.trace_re() / dim as f64;
        if !(s > MIN_TRACE) || !s.is_finite() {
            return Err(Error::ZeroTrace(s).at(k));
        }
        effects[k] = raw.scale(1.0 / s);
        log_scale[k] = log_scale[k + 1] + s.ln();
    }
    Ok(EffectSeries { effects, log_scale })
}

/// Rebuilds the step maps of `traj` under `p` and retrofilters them.
pub fn retrofilter_trajectory(traj: &Trajectory, p: &ModelParams) -> Result<(Vec<CpMap>, EffectSeries)> {
    let ops = build_step_operators(p)?;
    let maps = dynamics::record_maps(&ops, &traj.record)?;
    let effects = retrofilter(&maps)?;
    Ok((maps, effects))
}

/// Normalised `sqrt(rho) E sqrt(rho)`.
pub fn petz_fuchs(filtered: &DensityMatrix, effect: &Effect) -> Result<DensityMatrix> {
    let s = qmath::hermitian_sqrt(filtered)?;
    let out = s.sandwich(effect);
    let tr = out.trace_re();
    if !(tr > MIN_TRACE) {
        return Err(Error::ZeroTrace(tr));
    }
    Ok(out.hermitian_part().scale(1.0 / tr))
}

/// Backward recursion `rho_S(t) = R_t[rho_S(t + dt)]`, where `R_t` is the
/// Petz recovery of the step map with prior `rho_F(t)` and the stored
/// `rho_F(t + dt)` as its image. Returns normalised states.
pub fn petz_fuchs_recursive(traj: &Trajectory, maps: &[CpMap]) -> Result<Vec<DensityMatrix>> {
    let n = maps.len();
    if traj.states.len() != n + 1 {
        return Err(Error::DimMismatch(traj.states.len(), n + 1));
    }
    let mut out = vec![CMatrix::zeros(traj.states[0].dim()); n + 1];
    out[n] = traj.states[n].clone();
    for k in (0..n).rev() {
        let rec = channels::petz_recover_with_image(&maps[k], &traj.states[k], &traj.states[k + 1], &out[k + 1], None)
            .and_then(|r| qmath::normalize(&r))
            .map_err(|e| e.at(k))?;
        out[k] = rec;
    }
    Ok(out)
}

fn pairing(filtered: &CMatrix, effect: &CMatrix) -> Result<f64> {
    let tr = filtered.trace_product(effect).re;
    if !(tr > MIN_TRACE) {
        return Err(Error::ZeroTrace(tr));
    }
    Ok(tr)
}

/// `(rho E + E rho) / (2 Tr[rho E])`; Hermitian, not necessarily positive.
pub fn swv_state(filtered: &DensityMatrix, effect: &Effect) -> Result<CMatrix> {
    let tr = pairing(filtered, effect)?;
    Ok(filtered.anticommutator(effect).hermitian_part().scale(0.5 / tr))
}

/// `[[E, sqrt(rho)], sqrt(rho)] / (2 Tr[rho E])`, the amount by which
/// [`swv_state`] exceeds [`petz_fuchs`].
pub fn swv_excess(filtered: &DensityMatrix, effect: &Effect) -> Result<CMatrix> {
    let tr = pairing(filtered, effect)?;
    let s = qmath::hermitian_sqrt(filtered)?;
    Ok(effect.commutator(&s).commutator(&s).hermitian_part().scale(0.5 / tr))
}

/// `(rho^a E rho^{1-a} + rho^{1-a} E rho^a) / (2 Tr[rho E])` for `a` in `[1/2, 1]`.
///
/// Powers are taken on the support of `rho`; `rho^0` is the identity.
pub fn symmetrized_product(filtered: &DensityMatrix, effect: &Effect, alpha: f64) -> Result<CMatrix> {
    if !(0.5..=1.0).contains(&alpha) {
        return Err(Error::InvalidParams(format!("alpha must lie in [1/2, 1], got {alpha}")));
    }
    let tr = pairing(filtered, effect)?;
    let power = |a: f64| -> Result<CMatrix> {
        if a == 0.0 {
            Ok(CMatrix::identity(filtered.dim()))
        } else {
            qmath::support_power(filtered, a, None)
        }
    };
    let ra = power(alpha)?;
    let rb = power(1.0 - alpha)?;
    let left = &(&ra * effect) * &rb;
    let right = &(&rb * effect) * &ra;
    Ok((&left + &right).hermitian_part().scale(0.5 / tr))
}

/// Filtered and Petz-Fuchs smoothed series of one record.
#[derive(Clone, Debug)]
pub struct SmoothingResult {
    pub times: Vec<f64>,
    pub filtered: Vec<DensityMatrix>,
    pub effects: EffectSeries,
    pub smoothed: Vec<DensityMatrix>,
    pub purity_filtered: Vec<f64>,
    pub purity_smoothed: Vec<f64>,
    /// `ln Tr[E(t) rho_F(t)]` for the unnormalised pair, relative to the
    /// sampling measure of the record.
    pub log_likelihood: f64,
}

/// Closed-form Petz-Fuchs smoothing of `traj`.
pub fn smooth(traj: &Trajectory, p: &ModelParams) -> Result<SmoothingResult> {
    let (_, effects) = retrofilter_trajectory(traj, p)?;
    smooth_with_effects(traj, effects)
}

pub fn smooth_with_effects(traj: &Trajectory, effects: EffectSeries) -> Result<SmoothingResult> {
    let n = traj.states.len();
    if effects.effects.len() != n {
        return Err(Error::DimMismatch(effects.effects.len(), n));
    }
    let smoothed = traj
        .states
        .iter()
        .zip(&effects.effects)
        .enumerate()
        .map(|(k, (f, e))| petz_fuchs(f, e).map_err(|err| err.at(k)))
        .collect::<Result<Vec<_>>>()?;
    let purity_filtered = traj.states.iter().map(qmath::purity).collect::<Result<Vec<_>>>()?;
    let purity_smoothed = smoothed.iter().map(qmath::purity).collect::<Result<Vec<_>>>()?;
    let log_likelihood = traj.log_trace[0] + effects.log_scale[0] + pairing(&traj.states[0], &effects.effects[0])?.ln();
    Ok(SmoothingResult {
        times: traj.record.times(),
        filtered: traj.states.clone(),
        effects,
        smoothed,
        purity_filtered,
        purity_smoothed,
        log_likelihood,
    })
}

/// Two-observer smoothing output.
#[derive(Clone, Debug)]
pub struct GwResult {
    /// Weighted average of true states.
    pub gw: Vec<DensityMatrix>,
    /// Weighted average of Petz-Fuchs-smoothed true states.
    pub pf_gw: Vec<DensityMatrix>,
    /// Effective sample size `sum w / max w` at each grid point.
    pub ess: Vec<f64>,
}

/// GW estimator configuration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GwConfig {
    /// How the second observer monitors the absorption channel.
    pub bob: Unraveling,
    pub n_bob: usize,
    pub seed: u64,
}

struct BobOps {
    /// `U M_y` is applied per step; these are the pieces acting before it.
    a: CMatrix,
    adag_a: CMatrix,
    rest: CpMap,
    dt: f64,
    bob: Unraveling,
    phi_b: f64,
}

impl BobOps {
    fn new(p: &ModelParams, bob: Unraveling) -> Result<Self> {
        let a = p.absorption_operator();
        let rest = if p.eta < 1.0 {
            CpMap::new(dynamics::dissipation_kraus(&[p.undetected_operator()], p.dt, p.form)?)?
        } else {
            CpMap::identity(2)
        };
        Ok(BobOps {
            adag_a: a.sandwich_adjoint(&CMatrix::identity(2)),
            a,
            rest,
            dt: p.dt,
            bob,
            phi_b: bob.phase().unwrap_or(0.0),
        })
    }

    /// Samples Bob's operator for the next step; returns it and the log of
    /// the importance correction not captured by its trace.
    fn sample(&self, pre: &CMatrix, form: OperatorForm, rng: &mut ChaCha8Rng) -> Result<(CMatrix, f64)> {
        match self.bob {
            Unraveling::Jump => {
                let q = (self.dt * self.adag_a.trace_product(pre).re / pre.trace_re()).clamp(0.0, 1.0);
                let u: f64 = rng.random();
                let detected = q > 0.0 && u < q;
                Ok((jump_operator(&self.a, self.dt, detected, Some(q), form)?, 0.0))
            }
            _ => {
                let m = quadrature_mean(&self.a, self.phi_b, pre);
                let z: f64 = StandardNormal.sample(rng);
                let inc = m * self.dt + z * self.dt.sqrt();
                let op = dynamics::homodyne_operator(&self.a, self.phi_b, inc, self.dt);
                Ok((op, -m * inc + 0.5 * m * m * self.dt))
            }
        }
    }
}

struct Particle {
    rho: DensityMatrix,
    log_w: f64,
    rng: ChaCha8Rng,
}

/// Two-observer smoothing of Alice's record in `traj`.
///
/// Bob's records are drawn with their conditional probabilities given the
/// true state (ostensibly for jumps, mean-shifted for homodyne), so each
/// trajectory's log-weight accumulates Alice's likelihood ratio plus the
/// homodyne shift correction. At grid point `k` the weight is
/// `exp(log_w) Tr[E(k) rho_T(k)]`.
pub fn gw_smooth(traj: &Trajectory, p: &ModelParams, cfg: &GwConfig) -> Result<GwResult> {
    let (_, effects) = retrofilter_trajectory(traj, p)?;
    gw_smooth_with_effects(traj, &effects, p, cfg)
}

pub fn gw_smooth_with_effects(
    traj: &Trajectory,
    effects: &EffectSeries,
    p: &ModelParams,
    cfg: &GwConfig,
) -> Result<GwResult> {
    if cfg.n_bob == 0 {
        return Err(Error::InvalidParams("n_bob must be positive".into()));
    }
    let ops = build_step_operators(p)?;
    let bob = BobOps::new(p, cfg.bob)?;
    let n = traj.record.n_steps();
    let rho0 = qmath::normalize(&p.rho0)?;
    let mut particles: Vec<Particle> = (0..cfg.n_bob)
        .map(|i| Particle {
            rho: rho0.clone(),
            log_w: 0.0,
            rng: StreamSeed::new(cfg.seed, i as u64).rng(),
        })
        .collect();

    let mut gw = Vec::with_capacity(n + 1);
    let mut pf_gw = Vec::with_capacity(n + 1);
    let mut ess = Vec::with_capacity(n + 1);
    for k in 0..=n {
        let effect = &effects.effects[k];
        let (g, pf, e) = weighted_averages(&particles, effect).map_err(|err| err.at(k))?;
        if e < 2.0 && cfg.n_bob >= 2 {
            return Err(Error::DegenerateWeights { step: k, ess: e });
        }
        gw.push(g);
        pf_gw.push(pf);
        ess.push(e);
        if k == n {
            break;
        }
        let um = &ops.u
            * &ops
                .measurement_operator(&traj.record.outcomes[k])
                .map_err(|e| e.at(k))?;
        particles
            .par_iter_mut()
            .try_for_each(|part| -> Result<()> {
                let pre = bob.rest.apply(&part.rho)?;
                let (b, log_corr) = bob.sample(&pre, p.form, &mut part.rng)?;
                let step = &um * &b;
                let next = step.sandwich(&pre).hermitian_part();
                let tr = next.trace_re();
                if !(tr > MIN_TRACE) || !tr.is_finite() {
                    return Err(Error::ZeroTrace(tr));
                }
                part.rho = next.scale(1.0 / tr);
                part.log_w += tr.ln() + log_corr;
                Ok(())
            })
            .map_err(|e| e.at(k))?;
    }
    Ok(GwResult { gw, pf_gw, ess })
}

fn weighted_averages(particles: &[Particle], effect: &Effect) -> Result<(DensityMatrix, DensityMatrix, f64)> {
    let max_log = particles.iter().map(|p| p.log_w).fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = particles
        .iter()
        .map(|p| (p.log_w - max_log).exp() * p.rho.trace_product(effect).re.max(0.0))
        .collect();
    let pf_states = particles
        .par_iter()
        .zip(weights.par_iter())
        .map(|(p, &w)| {
            if w > 0.0 {
                petz_fuchs(&p.rho, effect)
            } else {
                Ok(p.rho.clone())
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let dim = effect.dim();
    let mut total = 0.0;
    let mut w_max: f64 = 0.0;
    let mut gw = CMatrix::zeros(dim);
    let mut pf = CMatrix::zeros(dim);
    for ((part, &w), s) in particles.iter().zip(&weights).zip(&pf_states) {
        total += w;
        w_max = w_max.max(w);
        gw += &part.rho.scale(w);
        pf += &s.scale(w);
    }
    if !(total > 0.0) {
        return Err(Error::DegenerateWeights { step: 0, ess: 0.0 });
    }
    Ok((gw.scale(1.0 / total), pf.scale(1.0 / total), total / w_max))
}
