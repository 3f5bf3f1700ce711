//! Discrete-state classical filtering and smoothing.
//!
//! States and effects are kept unnormalised: the total weight of a filtered
//! state is the probability of the record seen so far, and
//! `sum_x E(x; t) P_F(x; t)` is the probability of the whole record at every
//! `t`. Normalisation happens only on read-out.
//!
//! Smoothing is available through two independent routes:
//! [`cl_smooth_bayes`] (entrywise product of filtered state and retrofiltered
//! effect) and [`cl_reverse_map`] + [`apply_reverse_map`] (backward
//! retrodiction with the filtered state as reference prior).

use crate::{Error, Result};

/// Unnormalised probability weights over a finite state set.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassicalState(pub Vec<f64>);

/// Likelihood of the future record given each state.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassicalEffect(pub Vec<f64>);

impl ClassicalState {
    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }

    /// Probabilities summing to one; an all-zero state stays all-zero.
    pub fn normalized(&self) -> Vec<f64> {
        let t = self.total();
        if t > 0.0 {
            self.0.iter().map(|p| p / t).collect()
        } else {
            vec![0.0; self.0.len()]
        }
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl ClassicalEffect {
    pub fn uniform(n: usize) -> Self {
        ClassicalEffect(vec![1.0; n])
    }
}

/// Outcome-resolved forward kernel: `per_outcome[y][x'][x] = F_y(x'|x)`,
/// the back-action transition times the outcome likelihood.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionalKernel {
    per_outcome: Vec<Vec<Vec<f64>>>,
    n: usize,
}

impl ConditionalKernel {
    pub fn new(per_outcome: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        let n = per_outcome
            .first()
            .map(|m| m.len())
            .ok_or_else(|| Error::InvalidParams("kernel needs at least one outcome".into()))?;
        for m in &per_outcome {
            if m.len() != n || m.iter().any(|row| row.len() != n) {
                return Err(Error::InvalidParams("kernel matrices must all be n x n".into()));
            }
            if m.iter().flatten().any(|v| !(*v >= 0.0) || !v.is_finite()) {
                return Err(Error::InvalidParams(
                    "kernel entries must be finite and nonnegative".into(),
                ));
            }
        }
        Ok(ConditionalKernel { per_outcome, n })
    }

    /// `F_y(x'|x) = phi_y(x'|x) * likelihood[y][x]`.
    pub fn from_backaction(transitions: &[Vec<Vec<f64>>], likelihood: &[Vec<f64>]) -> Result<Self> {
        if transitions.len() != likelihood.len() {
            return Err(Error::InvalidParams(
                "one transition matrix per outcome is required".into(),
            ));
        }
        let per_outcome = transitions
            .iter()
            .zip(likelihood)
            .map(|(phi, lik)| {
                phi.iter()
                    .map(|row| row.iter().zip(lik).map(|(p, l)| p * l).collect())
                    .collect()
            })
            .collect();
        Self::new(per_outcome)
    }

    pub fn n_states(&self) -> usize {
        self.n
    }

    pub fn n_outcomes(&self) -> usize {
        self.per_outcome.len()
    }

    pub fn matrix(&self, y: usize) -> Result<&[Vec<f64>]> {
        self.per_outcome
            .get(y)
            .map(|m| m.as_slice())
            .ok_or(Error::UnknownOutcome(y))
    }

    /// `max_x |sum_y sum_x' F_y(x'|x) - 1|`.
    pub fn completeness_defect(&self) -> f64 {
        (0..self.n)
            .map(|x| {
                let total: f64 = self
                    .per_outcome
                    .iter()
                    .map(|m| m.iter().map(|row| row[x]).sum::<f64>())
                    .sum();
                (total - 1.0).abs()
            })
            .fold(0.0, f64::max)
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.n {
            Err(Error::DimMismatch(self.n, len))
        } else {
            Ok(())
        }
    }
}

pub fn cl_filter_step(kernel: &ConditionalKernel, y: usize, state: &ClassicalState) -> Result<ClassicalState> {
    let f = kernel.matrix(y)?;
    kernel.check_len(state.len())?;
    Ok(ClassicalState(
        f.iter()
            .map(|row| row.iter().zip(&state.0).map(|(a, p)| a * p).sum())
            .collect(),
    ))
}

/// `E(x) = sum_x' F_y(x'|x) E'(x')`.
pub fn cl_retrofilter_step(kernel: &ConditionalKernel, y: usize, effect: &ClassicalEffect) -> Result<ClassicalEffect> {
    let f = kernel.matrix(y)?;
    kernel.check_len(effect.0.len())?;
    let n = kernel.n;
    Ok(ClassicalEffect(
        (0..n).map(|x| (0..n).map(|xp| f[xp][x] * effect.0[xp]).sum()).collect(),
    ))
}

/// Unnormalised smoothed state `E(x) P_F(x)`.
pub fn cl_smooth_bayes(state: &ClassicalState, effect: &ClassicalEffect) -> Result<ClassicalState> {
    if state.len() != effect.0.len() {
        return Err(Error::DimMismatch(state.len(), effect.0.len()));
    }
    Ok(ClassicalState(
        state.0.iter().zip(&effect.0).map(|(p, e)| p * e).collect(),
    ))
}

/// Retrodictive map `R(x|x')` for one step, with reference prior `prior`.
#[derive(Clone, Debug, PartialEq)]
pub struct ReverseMap {
    /// `r[x][x']`.
    pub r: Vec<Vec<f64>>,
    /// Whether `x'` has nonzero predicted weight (its column is defined).
    pub reachable: Vec<bool>,
}

pub fn cl_reverse_map(kernel: &ConditionalKernel, y: usize, prior: &ClassicalState) -> Result<ReverseMap> {
    let f = kernel.matrix(y)?;
    kernel.check_len(prior.len())?;
    let n = kernel.n;
    let mut r = vec![vec![0.0; n]; n];
    let mut reachable = vec![false; n];
    for xp in 0..n {
        let denom: f64 = (0..n).map(|x| f[xp][x] * prior.0[x]).sum();
        if denom > 0.0 {
            reachable[xp] = true;
            for x in 0..n {
                r[x][xp] = f[xp][x] * prior.0[x] / denom;
            }
        }
    }
    Ok(ReverseMap { r, reachable })
}

/// `P_S(x; t) = sum_x' R(x|x') P_S(x'; t + dt)`.
///
/// Weight on an unreachable `x'` means the record is inconsistent with the
/// prior and is reported as [`Error::UnreachableOutcome`].
pub fn apply_reverse_map(map: &ReverseMap, next: &ClassicalState) -> Result<ClassicalState> {
    let n = map.reachable.len();
    if next.len() != n {
        return Err(Error::DimMismatch(n, next.len()));
    }
    for (xp, ok) in map.reachable.iter().enumerate() {
        if !ok && next.0[xp] != 0.0 {
            return Err(Error::UnreachableOutcome(xp));
        }
    }
    Ok(ClassicalState(
        (0..n)
            .map(|x| {
                (0..n)
                    .filter(|&xp| map.reachable[xp])
                    .map(|xp| map.r[x][xp] * next.0[xp])
                    .sum()
            })
            .collect(),
    ))
}

/// Filtered, retrofiltered and smoothed series along a record.
#[derive(Clone, Debug)]
pub struct ClassicalSmoothing {
    /// Unnormalised filtered states at `t_0 .. t_N`.
    pub filtered: Vec<ClassicalState>,
    pub effects: Vec<ClassicalEffect>,
    /// Normalised smoothed distributions from the Bayes product.
    pub smoothed_bayes: Vec<Vec<f64>>,
    /// Normalised smoothed distributions from backward retrodiction.
    pub smoothed_retro: Vec<Vec<f64>>,
}

/// Runs both smoothing routes along `outcomes`, using `kernels[k]` for step `k`.
pub fn smooth_record(
    kernels: &[&ConditionalKernel],
    outcomes: &[usize],
    prior: &ClassicalState,
) -> Result<ClassicalSmoothing> {
    if kernels.len() != outcomes.len() {
        return Err(Error::InvalidParams("one kernel per step is required".into()));
    }
    let steps = outcomes.len();
    let mut filtered = Vec::with_capacity(steps + 1);
    filtered.push(prior.clone());
    for (k, &y) in outcomes.iter().enumerate() {
        let next = cl_filter_step(kernels[k], y, &filtered[k])?;
        filtered.push(next);
    }

    let mut effects = vec![ClassicalEffect::uniform(prior.len()); steps + 1];
    for k in (0..steps).rev() {
        effects[k] = cl_retrofilter_step(kernels[k], outcomes[k], &effects[k + 1])?;
    }

    let smoothed_bayes = filtered
        .iter()
        .zip(&effects)
        .map(|(f, e)| cl_smooth_bayes(f, e).map(|s| s.normalized()))
        .collect::<Result<Vec<_>>>()?;

    let mut retro = vec![ClassicalState(Vec::new()); steps + 1];
    retro[steps] = filtered[steps].clone();
    for k in (0..steps).rev() {
        let rev = cl_reverse_map(kernels[k], outcomes[k], &filtered[k])?;
        retro[k] = apply_reverse_map(&rev, &retro[k + 1])?;
    }
    let smoothed_retro = retro.iter().map(|s| s.normalized()).collect();

    Ok(ClassicalSmoothing {
        filtered,
        effects,
        smoothed_bayes,
        smoothed_retro,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_kernel() -> ConditionalKernel {
        // identity back-action, outcome 0 likelihoods (0.9, 0.2), outcome 1 the complement
        let id = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        ConditionalKernel::from_backaction(&[id.clone(), id], &[vec![0.9, 0.2], vec![0.1, 0.8]]).unwrap()
    }

    #[test]
    fn bayes_product_step() {
        let k = identity_kernel();
        assert!(k.completeness_defect() < 1e-15);
        let out = cl_filter_step(&k, 0, &ClassicalState(vec![0.5, 0.5])).unwrap();
        assert!((out.0[0] - 0.45).abs() < 1e-15 && (out.0[1] - 0.10).abs() < 1e-15);
    }

    #[test]
    fn markov_propagation_with_single_outcome() {
        let k = ConditionalKernel::new(vec![vec![vec![0.7, 0.4], vec![0.3, 0.6]]]).unwrap();
        let out = cl_filter_step(&k, 0, &ClassicalState(vec![1.0, 0.0])).unwrap();
        assert_eq!(out.0, vec![0.7, 0.3]);
        let e = cl_retrofilter_step(&k, 0, &ClassicalEffect::uniform(2)).unwrap();
        assert!(e.0.iter().all(|v| (v - 1.0).abs() < 1e-15));
    }

    #[test]
    fn retrofilter_pulls_back_through_likelihoods() {
        let k = identity_kernel();
        let e = cl_retrofilter_step(&k, 0, &ClassicalEffect(vec![1.0, 0.0])).unwrap();
        assert_eq!(e.0, vec![0.9, 0.0]);
        let e = cl_retrofilter_step(&k, 0, &ClassicalEffect(vec![1.0, 1.0])).unwrap();
        assert_eq!(e.0, vec![0.9, 0.2]);
    }

    #[test]
    fn unknown_outcome_and_mismatch() {
        let k = identity_kernel();
        assert_eq!(
            cl_filter_step(&k, 5, &ClassicalState(vec![0.5, 0.5])).unwrap_err(),
            Error::UnknownOutcome(5)
        );
        assert!(matches!(
            cl_filter_step(&k, 0, &ClassicalState(vec![1.0])),
            Err(Error::DimMismatch(2, 1))
        ));
    }

    #[test]
    fn smoothing_with_trivial_effects() {
        let f = ClassicalState(vec![0.2, 0.6]);
        let s = cl_smooth_bayes(&f, &ClassicalEffect::uniform(2)).unwrap();
        assert_eq!(s.normalized(), f.normalized());
        let s = cl_smooth_bayes(&f, &ClassicalEffect(vec![1.0, 0.0])).unwrap();
        assert_eq!(s.normalized(), vec![1.0, 0.0]);
    }

    #[test]
    fn reverse_of_permutation_is_inverse_permutation() {
        let swap = ConditionalKernel::new(vec![vec![
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
            vec![1.0, 0.0, 0.0],
        ]])
        .unwrap();
        let rev = cl_reverse_map(&swap, 0, &ClassicalState(vec![0.2, 0.3, 0.5])).unwrap();
        // forward maps x -> x' with F[x'][x] = 1; the reverse puts R[x][x'] = 1
        for xp in 0..3 {
            for x in 0..3 {
                let f = swap.matrix(0).unwrap()[xp][x];
                assert_eq!(rev.r[x][xp], f);
            }
        }
    }

    #[test]
    fn unreachable_weight_is_an_error() {
        let k = identity_kernel();
        let rev = cl_reverse_map(&k, 0, &ClassicalState(vec![1.0, 0.0])).unwrap();
        assert_eq!(rev.reachable, vec![true, false]);
        let err = apply_reverse_map(&rev, &ClassicalState(vec![0.5, 0.5])).unwrap_err();
        assert_eq!(err, Error::UnreachableOutcome(1));
        // zero-prior support gives zero smoothed weight, no 0/0
        let ok = apply_reverse_map(&rev, &ClassicalState(vec![0.5, 0.0])).unwrap();
        assert_eq!(ok.0, vec![0.5, 0.0]);
    }
}
