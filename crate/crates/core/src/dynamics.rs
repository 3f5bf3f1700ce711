//! The resonantly driven qubit in a thermal bath, discretised into
//! per-step operators, with record generation and forward filtering.
//!
//! One step of the filter is
//!
//! ```text
//! rho(t + dt) = U M_y [ sum_l K_l rho K_l^dagger ] M_y^dagger U^dagger
//! ```
//!
//! with `U = exp(-i H dt)`, `H = Omega sigma_y / 2`, the measurement operator
//! `M_y` on the detected emission channel `c = sqrt(eta gamma (nbar + 1)) sigma_-`,
//! and the Kraus list `K_l` of the unmeasured channels (absorption
//! `a = sqrt(gamma nbar) sigma_+`, plus the undetected share of emission when
//! `eta < 1`).

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::channels::CpMap;
use crate::qmath::{self, sigma_minus, sigma_plus, sigma_y, CMatrix, DensityMatrix, C64, MIN_TRACE};
use crate::rng::StreamSeed;
use crate::{Error, Result};

/// How the emitted light is monitored.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Unraveling {
    Jump,
    HomodyneX,
    HomodyneY,
}

impl Unraveling {
    pub const ALL: [Unraveling; 3] = [Unraveling::Jump, Unraveling::HomodyneX, Unraveling::HomodyneY];

    /// Homodyne phase, `None` for photon counting.
    pub fn phase(self) -> Option<f64> {
        match self {
            Unraveling::Jump => None,
            Unraveling::HomodyneX => Some(0.0),
            Unraveling::HomodyneY => Some(std::f64::consts::FRAC_PI_2),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Unraveling::Jump => "jump",
            Unraveling::HomodyneX => "homodyne-x",
            Unraveling::HomodyneY => "homodyne-y",
        }
    }

    pub fn is_homodyne(self) -> bool {
        !matches!(self, Unraveling::Jump)
    }
}

impl std::fmt::Display for Unraveling {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Unraveling {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "jump" | "counting" => Ok(Unraveling::Jump),
            "homodyne-x" | "homodynex" | "x" => Ok(Unraveling::HomodyneX),
            "homodyne-y" | "homodyney" | "y" => Ok(Unraveling::HomodyneY),
            other => Err(Error::InvalidParams(format!("unknown unraveling '{other}'"))),
        }
    }
}

/// Square-root operators in the step maps.
///
/// `SecondOrder` keeps the expansions to `O(dt^2)`; `Exact` takes matrix
/// square roots, so the jump and dissipation Kraus sets are complete to
/// round-off. Homodyne operators are always the second-order expansion.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum OperatorForm {
    #[default]
    SecondOrder,
    Exact,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub omega: f64,
    pub gamma: f64,
    pub nbar: f64,
    pub unraveling: Unraveling,
    /// Homodyne phase in radians; ignored for photon counting.
    pub phi: f64,
    pub dt: f64,
    pub t_final: f64,
    pub rho0: DensityMatrix,
    pub eta: f64,
    pub seed: u64,
    pub form: OperatorForm,
}

impl Default for ModelParams {
    fn default() -> Self {
        ModelParams {
            omega: 5.0,
            gamma: 1.0,
            nbar: 0.5,
            unraveling: Unraveling::Jump,
            phi: 0.0,
            dt: 1e-3,
            t_final: 7.5,
            rho0: qmath::ground_state(),
            eta: 1.0,
            seed: 0,
            form: OperatorForm::SecondOrder,
        }
    }
}

impl ModelParams {
    /// Sets the unraveling together with its canonical homodyne phase.
    pub fn with_unraveling(mut self, u: Unraveling) -> Self {
        self.unraveling = u;
        self.phi = u.phase().unwrap_or(0.0);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParams(msg));
        for (name, v) in [
            ("omega", self.omega),
            ("gamma", self.gamma),
            ("nbar", self.nbar),
            ("phi", self.phi),
            ("dt", self.dt),
            ("t_final", self.t_final),
            ("eta", self.eta),
        ] {
            if !v.is_finite() {
                return bad(format!("{name} must be finite"));
            }
        }
        if self.dt <= 0.0 {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if self.t_final < self.dt {
            return bad(format!("t_final ({}) must be at least dt ({})", self.t_final, self.dt));
        }
        if self.gamma < 0.0 {
            return bad("gamma must be nonnegative".into());
        }
        if self.nbar < 0.0 {
            return bad("nbar must be nonnegative".into());
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return bad(format!("eta must lie in [0, 1], got {}", self.eta));
        }
        if self.rho0.dim() != 2 {
            return Err(Error::DimMismatch(2, self.rho0.dim()));
        }
        qmath::validate_density(&self.rho0, 1e-10)?;
        let rate = self.gamma * (self.nbar + 1.0) + self.gamma * self.nbar;
        if self.form == OperatorForm::Exact && rate * self.dt >= 1.0 {
            return bad("exact operators need dt * gamma * (2 nbar + 1) < 1".into());
        }
        Ok(())
    }

    /// Number of steps on the grid `t_k = k dt`, `k = 0..=n_steps`.
    pub fn n_steps(&self) -> usize {
        ((self.t_final / self.dt).round() as usize).max(1)
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.n_steps()).map(|k| k as f64 * self.dt).collect()
    }

    pub fn hamiltonian(&self) -> CMatrix {
        sigma_y().scale(0.5 * self.omega)
    }

    /// Full emission operator `sqrt(gamma (nbar + 1)) sigma_-`.
    pub fn emission_operator(&self) -> CMatrix {
        sigma_minus().scale((self.gamma * (self.nbar + 1.0)).sqrt())
    }

    /// Absorption operator `sqrt(gamma nbar) sigma_+`.
    pub fn absorption_operator(&self) -> CMatrix {
        sigma_plus().scale((self.gamma * self.nbar).sqrt())
    }

    pub fn detected_operator(&self) -> CMatrix {
        self.emission_operator().scale(self.eta.sqrt())
    }

    pub fn undetected_operator(&self) -> CMatrix {
        self.emission_operator().scale((1.0 - self.eta).sqrt())
    }
}

/// Kraus list reproducing `sum_j D[R_j]` over one step:
/// `K_0 = 1 - Y dt / 2 - (Y dt)^2 / 8` (or `sqrt(1 - Y dt)`), `K_j = sqrt(dt) R_j`,
/// with `Y = sum_j R_j^dagger R_j`.
pub fn dissipation_kraus(ops: &[CMatrix], dt: f64, form: OperatorForm) -> Result<Vec<CMatrix>> {
    let n = match ops.first() {
        Some(r) => r.dim(),
        None => return Ok(vec![CMatrix::identity(2)]),
    };
    let mut y = CMatrix::zeros(n);
    for r in ops {
        y += &r.sandwich_adjoint(&CMatrix::identity(n));
    }
    let yd = y.scale(dt);
    let id = CMatrix::identity(n);
    let k0 = match form {
        OperatorForm::SecondOrder => &(&id - &yd.scale(0.5)) - &(&yd * &yd).scale(0.125),
        OperatorForm::Exact => qmath::hermitian_sqrt(&(&id - &yd))?,
    };
    let mut kraus = vec![k0];
    kraus.extend(ops.iter().map(|r| r.scale(dt.sqrt())));
    Ok(kraus)
}

/// Jump-unraveling measurement operator for detector bit `detected`.
///
/// With `p_ost = Some(p)` the operators are adjusted for sampling the bit
/// from the ostensible distribution `P(1) = p`; with `None` they are the
/// physical operators whose traces give actual outcome probabilities.
pub fn jump_operator(c: &CMatrix, dt: f64, detected: bool, p_ost: Option<f64>, form: OperatorForm) -> Result<CMatrix> {
    if let Some(p) = p_ost {
        if !(0.0..1.0).contains(&p) || (detected && p <= 0.0) {
            return Err(Error::InvalidParams(format!(
                "ostensible jump probability {p} cannot be used"
            )));
        }
    }
    let p = p_ost.unwrap_or(0.0);
    if detected {
        let scale = match p_ost {
            Some(p) => (dt / p).sqrt(),
            None => dt.sqrt(),
        };
        return Ok(c.scale(scale));
    }
    let n = c.dim();
    let id = CMatrix::identity(n);
    let x = c.sandwich_adjoint(&id).scale(dt);
    match form {
        OperatorForm::SecondOrder => {
            let shifted = &x - &id.scale(p);
            Ok(&(&id - &shifted.scale(0.5)) - &(&shifted * &shifted).scale(0.125))
        }
        OperatorForm::Exact => qmath::hermitian_sqrt(&(&id - &x).scale(1.0 / (1.0 - p))),
    }
}

/// Homodyne measurement operator for the current increment `increment = y dt`:
/// `1 + c e^{i phi} y dt - c^dagger c dt / 2 + (c^dagger c dt)^2 / 8`.
pub fn homodyne_operator(c: &CMatrix, phi: f64, increment: f64, dt: f64) -> CMatrix {
    let n = c.dim();
    let id = CMatrix::identity(n);
    let x = c.sandwich_adjoint(&id).scale(dt);
    let drive = c.scale_c(C64::from_polar(increment, phi));
    &(&(&id + &drive) - &x.scale(0.5)) + &(&x * &x).scale(0.125)
}

/// `<c e^{i phi} + c^dagger e^{-i phi}>` in the (possibly unnormalised) state `rho`.
pub fn quadrature_mean(c: &CMatrix, phi: f64, rho: &CMatrix) -> f64 {
    let ce = c.scale_c(C64::from_polar(1.0, phi));
    let q = &ce + &ce.adjoint();
    q.trace_product(rho).re / rho.trace_re()
}

/// One step's outcome on a record.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Outcome {
    /// Detector bit, and the ostensible probability of a click it was
    /// sampled with (`None` for physical operators).
    Jump { detected: bool, p_ost: Option<f64> },
    /// Homodyne current `y_t` and the ostensible noise `dW` it was built from.
    Homodyne { current: f64, noise: f64 },
}

impl Outcome {
    /// Short label used in record dumps: `0`/`1` for jumps, the current for homodyne.
    pub fn value(&self) -> f64 {
        match *self {
            Outcome::Jump { detected, .. } => f64::from(u8::from(detected)),
            Outcome::Homodyne { current, .. } => current,
        }
    }

    /// Same detector bit with physical (unscaled) operators.
    pub fn physical(self) -> Outcome {
        match self {
            Outcome::Jump { detected, .. } => Outcome::Jump { detected, p_ost: None },
            h => h,
        }
    }
}

/// Everything needed to rebuild the conditional maps of a run.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementRecord {
    pub unraveling: Unraveling,
    pub dt: f64,
    pub outcomes: Vec<Outcome>,
}

impl MeasurementRecord {
    pub fn n_steps(&self) -> usize {
        self.outcomes.len()
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.outcomes.len()).map(|k| k as f64 * self.dt).collect()
    }

    pub fn n_detections(&self) -> usize {
        self.outcomes
            .iter()
            .filter(|o| matches!(o, Outcome::Jump { detected: true, .. }))
            .count()
    }
}

/// Filtered states along a record.
///
/// `states[k]` is normalised; the unnormalised filtered state is
/// `exp(log_trace[k]) * states[k]`.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub record: MeasurementRecord,
    pub states: Vec<DensityMatrix>,
    pub log_trace: Vec<f64>,
}

/// Discretised operators for one parameter set.
#[derive(Clone, Debug)]
pub struct StepOperators {
    pub u: CMatrix,
    /// Detected emission operator.
    pub c: CMatrix,
    /// Absorption operator.
    pub a: CMatrix,
    /// Kraus list of all unmeasured channels.
    pub k: Vec<CMatrix>,
    pub dt: f64,
    pub phi: f64,
    pub unraveling: Unraveling,
    pub form: OperatorForm,
    dissipation: CpMap,
}

pub fn build_step_operators(p: &ModelParams) -> Result<StepOperators> {
    p.validate()?;
    let u = qmath::unitary_propagator(&p.hamiltonian(), p.dt);
    let a = p.absorption_operator();
    let mut unmeasured = vec![a.clone()];
    if p.eta < 1.0 {
        unmeasured.push(p.undetected_operator());
    }
    let k = dissipation_kraus(&unmeasured, p.dt, p.form)?;
    let dissipation = CpMap::new(k.clone())?;
    Ok(StepOperators {
        u,
        c: p.detected_operator(),
        a,
        k,
        dt: p.dt,
        phi: p.phi,
        unraveling: p.unraveling,
        form: p.form,
        dissipation,
    })
}

impl StepOperators {
    /// The unmeasured-dissipation image `sum_l K_l rho K_l^dagger`.
    pub fn dissipate(&self, rho: &CMatrix) -> Result<CMatrix> {
        self.dissipation.apply(rho)
    }

    pub fn dissipation_map(&self) -> &CpMap {
        &self.dissipation
    }

    /// Probability of a click given `rho`: `dt Tr[c^dagger c K(rho)] / Tr[K(rho)]`.
    pub fn jump_probability(&self, rho: &CMatrix) -> Result<f64> {
        let k = self.dissipate(rho)?;
        Ok(self.jump_probability_of_dissipated(&k))
    }

    fn jump_probability_of_dissipated(&self, k: &CMatrix) -> f64 {
        let cdc = self.c.sandwich_adjoint(&CMatrix::identity(self.c.dim()));
        (self.dt * cdc.trace_product(k).re / k.trace_re()).clamp(0.0, 1.0)
    }

    pub fn measurement_operator(&self, outcome: &Outcome) -> Result<CMatrix> {
        match (*outcome, self.unraveling.is_homodyne()) {
            (Outcome::Jump { detected, p_ost }, false) => jump_operator(&self.c, self.dt, detected, p_ost, self.form),
            (Outcome::Homodyne { current, .. }, true) => {
                if !current.is_finite() {
                    return Err(Error::InvalidParams("homodyne current must be finite".into()));
                }
                Ok(homodyne_operator(&self.c, self.phi, current * self.dt, self.dt))
            }
            _ => Err(Error::InvalidParams(format!(
                "outcome {outcome:?} does not match the {} unraveling",
                self.unraveling
            ))),
        }
    }

    /// `F_y(rho) = sum_l U M_y K_l rho K_l^dagger M_y^dagger U^dagger`.
    pub fn conditional_map(&self, outcome: &Outcome) -> Result<CpMap> {
        let um = &self.u * &self.measurement_operator(outcome)?;
        CpMap::new(self.k.iter().map(|k| &um * k).collect())
    }

    /// Classical kernel seen by basis-state populations under photon
    /// counting: `F_y(x'|x) = <x'| F_y(|x><x|) |x'>`, outcome 0 = no click.
    ///
    /// It is the exact reduction of the quantum step when `Omega = 0` and the
    /// state is diagonal. Both branches use the ostensible probability in
    /// `outcome`, so the kernel inherits the same scaling as the record.
    pub fn population_kernel(&self, outcome: &Outcome) -> Result<crate::classical::ConditionalKernel> {
        let Outcome::Jump { p_ost, .. } = *outcome else {
            return Err(Error::InvalidParams(
                "population kernels need photon-counting outcomes".into(),
            ));
        };
        let n = self.u.dim();
        let mut per_outcome = Vec::with_capacity(2);
        for detected in [false, true] {
            let map = self.conditional_map(&Outcome::Jump { detected, p_ost })?;
            let mut m = vec![vec![0.0; n]; n];
            for x in 0..n {
                let mut basis = CMatrix::zeros(n);
                basis[(x, x)] = C64::new(1.0, 0.0);
                for (xp, v) in map.apply(&basis)?.diagonal_re().into_iter().enumerate() {
                    m[xp][x] = v;
                }
            }
            per_outcome.push(m);
        }
        crate::classical::ConditionalKernel::new(per_outcome)
    }

    /// Outcome-summed channel, with the measured channel taken as its
    /// physical jump pair (unraveling-independent to the order kept).
    pub fn unconditional_map(&self) -> Result<CpMap> {
        let mut kraus = Vec::with_capacity(2 * self.k.len());
        for detected in [false, true] {
            let um = &self.u * &jump_operator(&self.c, self.dt, detected, None, self.form)?;
            kraus.extend(self.k.iter().map(|k| &um * k));
        }
        CpMap::new(kraus)
    }

    /// Draws the next outcome for a normalised filtered state.
    pub fn sample(&self, rho: &CMatrix, rng: &mut ChaCha8Rng) -> Result<Outcome> {
        let k = self.dissipate(rho)?;
        if self.unraveling.is_homodyne() {
            let mean = quadrature_mean(&self.c, self.phi, &k);
            let z: f64 = StandardNormal.sample(rng);
            let noise = z * self.dt.sqrt();
            Ok(Outcome::Homodyne {
                current: mean + noise / self.dt,
                noise,
            })
        } else {
            let p = self.jump_probability_of_dissipated(&k);
            let u: f64 = rng.random();
            Ok(Outcome::Jump {
                detected: u < p,
                p_ost: Some(p),
            })
        }
    }

    /// Applies the conditional map for `outcome`; returns the normalised
    /// state and the log of the trace factor.
    pub fn advance(&self, rho: &CMatrix, outcome: &Outcome) -> Result<(DensityMatrix, f64)> {
        let next = self.conditional_map(outcome)?.apply(rho)?;
        let tr = next.trace_re();
        if !(tr > MIN_TRACE) || !tr.is_finite() {
            return Err(Error::ZeroTrace(tr));
        }
        Ok((next.scale(1.0 / tr), tr.ln()))
    }
}

/// Samples the outcome of the upcoming step; see [`StepOperators::sample`].
pub fn sample_step(ops: &StepOperators, rho_norm: &DensityMatrix, rng: &mut ChaCha8Rng) -> Result<Outcome> {
    ops.sample(rho_norm, rng)
}

/// One step of the unconditional channel.
pub fn unconditional_step(ops: &StepOperators, rho: &DensityMatrix) -> Result<DensityMatrix> {
    ops.unconditional_map()?.apply(rho)
}

/// Unconditional evolution of `rho0` on the full grid, renormalised each step.
pub fn unconditional_series(p: &ModelParams) -> Result<Vec<DensityMatrix>> {
    let ops = build_step_operators(p)?;
    let map = ops.unconditional_map()?;
    let mut out = Vec::with_capacity(p.n_steps() + 1);
    out.push(p.rho0.clone());
    for k in 0..p.n_steps() {
        let next = map
            .apply(&out[k])
            .and_then(|r| qmath::normalize(&r))
            .map_err(|e| e.at(k))?;
        out.push(next);
    }
    Ok(out)
}

/// Generates a record and its filtered trajectory from the given stream.
pub fn filter_trajectory(p: &ModelParams, seed: StreamSeed) -> Result<Trajectory> {
    let ops = build_step_operators(p)?;
    let mut rng = seed.rng();
    filter_with(&ops, p, |k, rho| ops.sample(rho, &mut rng).map_err(|e| e.at(k)))
}

/// [`filter_trajectory`] on stream 0 of `p.seed`.
pub fn simulate(p: &ModelParams) -> Result<Trajectory> {
    filter_trajectory(p, StreamSeed::new(p.seed, 0))
}

/// Filters a given sequence of outcomes.
pub fn filter_given_outcomes(p: &ModelParams, outcomes: &[Outcome]) -> Result<Trajectory> {
    let ops = build_step_operators(p)?;
    let mut it = outcomes.iter();
    let n = outcomes.len();
    let mut q = p.clone();
    q.t_final = n as f64 * p.dt;
    filter_steps(&ops, &q.rho0, n, |_, _| Ok(*it.next().expect("length checked")))
}

fn filter_with(
    ops: &StepOperators,
    p: &ModelParams,
    next_outcome: impl FnMut(usize, &DensityMatrix) -> Result<Outcome>,
) -> Result<Trajectory> {
    filter_steps(ops, &p.rho0, p.n_steps(), next_outcome)
}

fn filter_steps(
    ops: &StepOperators,
    rho0: &DensityMatrix,
    n: usize,
    mut next_outcome: impl FnMut(usize, &DensityMatrix) -> Result<Outcome>,
) -> Result<Trajectory> {
    let mut states = Vec::with_capacity(n + 1);
    let mut log_trace = Vec::with_capacity(n + 1);
    let mut outcomes = Vec::with_capacity(n);
    states.push(qmath::normalize(rho0)?);
    log_trace.push(0.0);
    for k in 0..n {
        let outcome = next_outcome(k, &states[k])?;
        let (next, ln_tr) = ops.advance(&states[k], &outcome).map_err(|e| e.at(k))?;
        states.push(next);
        log_trace.push(log_trace[k] + ln_tr);
        outcomes.push(outcome);
    }
    Ok(Trajectory {
        record: MeasurementRecord {
            unraveling: ops.unraveling,
            dt: ops.dt,
            outcomes,
        },
        states,
        log_trace,
    })
}

/// Conditional maps for every step of `record`.
pub fn record_maps(ops: &StepOperators, record: &MeasurementRecord) -> Result<Vec<CpMap>> {
    record
        .outcomes
        .iter()
        .enumerate()
        .map(|(k, o)| ops.conditional_map(o).map_err(|e| e.at(k)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qmath::{bloch_vector, excited_state, ground_state, min_eigenvalue};

    fn params() -> ModelParams {
        ModelParams {
            t_final: 0.5,
            ..ModelParams::default()
        }
    }

    #[test]
    fn zero_drive_gives_identity_propagator() {
        let p = ModelParams { omega: 0.0, ..params() };
        let ops = build_step_operators(&p).unwrap();
        assert!(ops.u.max_abs_diff(&CMatrix::identity(2)) < 1e-15);
    }

    #[test]
    fn no_absorption_without_thermal_photons() {
        let p = ModelParams { nbar: 0.0, ..params() };
        let ops = build_step_operators(&p).unwrap();
        assert!(ops.k[0].max_abs_diff(&CMatrix::identity(2)) < 1e-15);
        assert!(ops.k[1].max_abs() == 0.0);
    }

    #[test]
    fn propagator_is_unitary() {
        let ops = build_step_operators(&params()).unwrap();
        assert!((&ops.u.adjoint() * &ops.u).max_abs_diff(&CMatrix::identity(2)) < 1e-12);
    }

    fn jump_residual(c: &CMatrix, dt: f64, p: f64) -> f64 {
        let m1 = jump_operator(c, dt, true, Some(p), OperatorForm::SecondOrder).unwrap();
        let m0 = jump_operator(c, dt, false, Some(p), OperatorForm::SecondOrder).unwrap();
        let id = CMatrix::identity(2);
        let total = &m1.sandwich_adjoint(&id).scale(p) + &m0.sandwich_adjoint(&id).scale(1.0 - p);
        total.max_abs_diff(&id)
    }

    #[test]
    fn weighted_jump_completeness_is_second_order() {
        let p = ModelParams::default();
        let c = p.detected_operator();
        let norm = p.gamma * (p.nbar + 1.0);
        let r2 = jump_residual(&c, 1e-2, 0.5 * norm * 1e-2);
        let r3 = jump_residual(&c, 1e-3, 0.5 * norm * 1e-3);
        assert!(r2 <= 10.0 * 1e-4 * norm * norm);
        assert!(r3 <= 10.0 * 1e-6 * norm * norm);
        let order = (r2 / r3).log10();
        assert!((order - 2.0).abs() < 0.1, "order {order}");
    }

    #[test]
    fn dissipation_kraus_completeness_is_third_order() {
        let p = ModelParams::default();
        let resid = |dt: f64| {
            let k = dissipation_kraus(&[p.absorption_operator()], dt, OperatorForm::SecondOrder).unwrap();
            CpMap::new(k).unwrap().completeness_residual()
        };
        let order = (resid(1e-2) / resid(1e-3)).log10();
        assert!((order - 3.0).abs() < 0.1, "order {order}");
        let exact = dissipation_kraus(&[p.absorption_operator()], 1e-2, OperatorForm::Exact).unwrap();
        assert!(CpMap::new(exact).unwrap().completeness_residual() < 1e-15);
    }

    #[test]
    fn exact_jump_pair_is_complete() {
        let c = ModelParams::default().detected_operator();
        let id = CMatrix::identity(2);
        let m0 = jump_operator(&c, 1e-2, false, None, OperatorForm::Exact).unwrap();
        let m1 = jump_operator(&c, 1e-2, true, None, OperatorForm::Exact).unwrap();
        let total = &m0.sandwich_adjoint(&id) + &m1.sandwich_adjoint(&id);
        assert!(total.max_abs_diff(&id) < 1e-15);
    }

    #[test]
    fn homodyne_completeness_over_gaussian_is_second_order() {
        // three-point Gauss-Hermite rule is exact for the quartic polynomial in the increment
        let c = ModelParams::default().detected_operator();
        let resid = |dt: f64| {
            let s = (3.0 * dt).sqrt();
            let mut total = CMatrix::zeros(2);
            for (node, w) in [(0.0, 2.0 / 3.0), (s, 1.0 / 6.0), (-s, 1.0 / 6.0)] {
                let m = homodyne_operator(&c, 0.3, node, dt);
                total += &m.sandwich_adjoint(&CMatrix::identity(2)).scale(w);
            }
            total.max_abs_diff(&CMatrix::identity(2))
        };
        let order = (resid(1e-2) / resid(1e-3)).log10();
        assert!((order - 2.0).abs() < 0.1, "order {order}");
    }

    #[test]
    fn jump_probabilities() {
        let p = ModelParams { nbar: 0.0, ..params() };
        let ops = build_step_operators(&p).unwrap();
        assert_eq!(ops.jump_probability(&ground_state()).unwrap(), 0.0);
        let p = params();
        let ops = build_step_operators(&p).unwrap();
        let rate = p.gamma * (p.nbar + 1.0);
        let q = ops.jump_probability(&excited_state()).unwrap();
        // K leaves the excited population at 1 to first order
        assert!((q / (rate * p.dt) - 1.0).abs() < 10.0 * p.dt);
    }

    #[test]
    fn homodyne_x_mean_current() {
        let p = params().with_unraveling(Unraveling::HomodyneX);
        let ops = build_step_operators(&p).unwrap();
        let rho = qmath::from_bloch([0.6, 0.0, 0.2]);
        let mut rng = StreamSeed::new(7, 0).rng();
        let n = 100_000;
        let draws: Vec<f64> = (0..n)
            .map(|_| match ops.sample(&rho, &mut rng).unwrap() {
                Outcome::Homodyne { current, .. } => current,
                _ => unreachable!(),
            })
            .collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        let expected = (p.gamma * (p.nbar + 1.0)).sqrt() * 0.6;
        // K shifts <sigma_x> by O(dt)
        assert!(
            (mean - expected).abs() < 3.0 * se + 2e-3,
            "mean {mean} expected {expected} se {se}"
        );
    }

    #[test]
    fn dark_state_never_jumps() {
        let p = ModelParams {
            omega: 0.0,
            nbar: 0.0,
            ..params()
        };
        let traj = simulate(&p).unwrap();
        assert_eq!(traj.record.n_detections(), 0);
        for s in &traj.states {
            assert!(s.max_abs_diff(&ground_state()) < 1e-15);
        }
    }

    #[test]
    fn physical_trace_is_product_of_outcome_probabilities() {
        let p = ModelParams {
            t_final: 0.3,
            ..ModelParams::default()
        };
        let traj = simulate(&p).unwrap();
        let physical: Vec<Outcome> = traj.record.outcomes.iter().map(|o| o.physical()).collect();
        let phys = filter_given_outcomes(&p, &physical).unwrap();
        // accumulate probabilities separately, from unnormalised propagation
        let ops = build_step_operators(&p).unwrap();
        let mut rho = p.rho0.clone();
        let mut log_prob = 0.0;
        for o in &physical {
            let next = ops.conditional_map(o).unwrap().apply(&rho).unwrap();
            let prob = next.trace_re() / rho.trace_re();
            log_prob += prob.ln();
            rho = next;
        }
        let last = *phys.log_trace.last().unwrap();
        assert!((last.exp() - log_prob.exp()).abs() < 1e-10);
        assert!((last - rho.trace_re().ln()).abs() < 1e-10);
    }

    #[test]
    fn seeded_runs_are_reproducible() {
        for u in Unraveling::ALL {
            let p = params().with_unraveling(u);
            let a = simulate(&p).unwrap();
            let b = simulate(&p).unwrap();
            assert_eq!(a.record, b.record);
            assert_eq!(a.states, b.states);
            for s in &a.states {
                assert!(min_eigenvalue(s) >= -1e-10);
            }
        }
    }

    #[test]
    fn unconditional_step_preserves_trace_and_fixed_points() {
        let p = ModelParams {
            omega: 0.0,
            nbar: 0.0,
            ..params()
        };
        let ops = build_step_operators(&p).unwrap();
        let g = unconditional_step(&ops, &ground_state()).unwrap();
        assert!(g.max_abs_diff(&ground_state()) < 1e-15);
        let ops = build_step_operators(&ModelParams::default()).unwrap();
        let rho = qmath::from_bloch([0.3, 0.1, -0.2]);
        let out = unconditional_step(&ops, &rho).unwrap();
        assert!((out.trace_re() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn thermal_steady_state() {
        let p = ModelParams {
            omega: 0.0,
            t_final: 20.0,
            ..ModelParams::default()
        };
        let series = unconditional_series(&p).unwrap();
        let z = bloch_vector(series.last().unwrap())[2];
        let expected = -1.0 / (2.0 * p.nbar + 1.0);
        assert!((z - expected).abs() < 1e-3, "z {z}");
    }

    #[test]
    fn mismatched_outcome_is_rejected() {
        let ops = build_step_operators(&params()).unwrap();
        let err = ops.conditional_map(&Outcome::Homodyne {
            current: 0.0,
            noise: 0.0,
        });
        assert!(err.is_err());
    }

    #[test]
    fn population_kernel_of_undriven_counting() {
        let p = ModelParams {
            omega: 0.0,
            dt: 0.05,
            form: OperatorForm::Exact,
            ..params()
        };
        let ops = build_step_operators(&p).unwrap();
        let k = ops
            .population_kernel(&Outcome::Jump {
                detected: true,
                p_ost: None,
            })
            .unwrap();
        assert!(k.completeness_defect() < 1e-14);
        // a click takes |e> to |g> and is impossible from |g> without absorption first
        let click = k.matrix(1).unwrap();
        assert!(click[1][0] > 0.0 && click[0][0] < 1e-15);
        let homodyne = Outcome::Homodyne {
            current: 0.0,
            noise: 0.0,
        };
        assert!(ops.population_kernel(&homodyne).is_err());
    }

    #[test]
    fn invalid_params() {
        assert!(ModelParams { dt: 0.0, ..params() }.validate().is_err());
        assert!(ModelParams { eta: 1.5, ..params() }.validate().is_err());
        assert!(ModelParams { nbar: -0.1, ..params() }.validate().is_err());
        assert!(ModelParams {
            t_final: 1e-4,
            ..params()
        }
        .validate()
        .is_err());
        assert!(ModelParams {
            rho0: CMatrix::diag(&[0.7, 0.7]),
            ..params()
        }
        .validate()
        .is_err());
    }
}
