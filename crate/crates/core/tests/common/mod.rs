//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{Complex, Matrix2};
use proptest::prelude::*;
use qsmooth::channels::CpMap;
use qsmooth::classical::{ClassicalState, ConditionalKernel};
use qsmooth::dynamics::ModelParams;
use qsmooth::{CMatrix, C64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type M2 = Matrix2<Complex<f64>>;

pub fn to_na(m: &CMatrix) -> M2 {
    M2::from_fn(|i, j| m[(i, j)])
}

pub fn from_na(m: &M2) -> CMatrix {
    CMatrix::from_fn(2, |i, j| m[(i, j)])
}

/// Square root through nalgebra's Hermitian eigensolver.
pub fn na_sqrt(m: &CMatrix) -> CMatrix {
    let eig = to_na(m).symmetric_eigen();
    let d = M2::from_diagonal(&eig.eigenvalues.map(|l| Complex::new(l.max(0.0).sqrt(), 0.0)));
    let v = eig.eigenvectors;
    from_na(&(v * d * v.adjoint()))
}

pub fn na_eigenvalues(m: &CMatrix) -> [f64; 2] {
    let e = to_na(m).symmetric_eigen().eigenvalues;
    let (a, b) = (e[0], e[1]);
    if a <= b {
        [a, b]
    } else {
        [b, a]
    }
}

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> CMatrix {
    CMatrix::from_fn(n, |_, _| {
        c(rng.random_range(-1.0..1.0) * scale, rng.random_range(-1.0..1.0) * scale)
    })
}

/// Random full-rank density matrix `A A^dagger / Tr`, shifted off the boundary.
pub fn random_density(rng: &mut ChaCha8Rng, n: usize) -> CMatrix {
    let a = random_matrix(rng, n, 1.0);
    let mut rho = &(&a * &a.adjoint()) + &CMatrix::identity(n).scale(0.05);
    let tr = rho.trace_re();
    rho = rho.scale(1.0 / tr);
    rho
}

pub fn random_effect(rng: &mut ChaCha8Rng, n: usize) -> CMatrix {
    let a = random_matrix(rng, n, 1.0);
    &(&a * &a.adjoint()) + &CMatrix::identity(n).scale(0.01)
}

/// Random trace-preserving channel with `k` Kraus operators.
pub fn random_channel(rng: &mut ChaCha8Rng, n: usize, k: usize) -> CpMap {
    let raw: Vec<CMatrix> = (0..k).map(|_| random_matrix(rng, n, 1.0)).collect();
    let mut s = CMatrix::zeros(n);
    for m in &raw {
        s += &(&m.adjoint() * m);
    }
    let fix = qsmooth::qmath::pinv_sqrt_rel(&s).unwrap();
    CpMap::new(raw.iter().map(|m| m * &fix).collect()).unwrap()
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn hermitian_strategy(n: usize) -> impl Strategy<Value = CMatrix> {
    prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), n * n).prop_map(move |v| {
        let a = CMatrix::from_fn(n, |i, j| c(v[i * n + j].0, v[i * n + j].1));
        a.hermitian_part()
    })
}

pub fn psd_strategy(n: usize) -> impl Strategy<Value = CMatrix> {
    prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), n * n).prop_map(move |v| {
        let a = CMatrix::from_fn(n, |i, j| c(v[i * n + j].0, v[i * n + j].1));
        &a * &a.adjoint()
    })
}

pub fn density_strategy(n: usize) -> impl Strategy<Value = CMatrix> {
    psd_strategy(n).prop_map(move |m| {
        let m = &m + &CMatrix::identity(n).scale(1e-3);
        let tr = m.trace_re();
        m.scale(1.0 / tr)
    })
}

/// Fourth-order Runge-Kutta integration of the thermal-qubit master equation
/// `d rho / dt = -i [H, rho] + g (n + 1) D[s-] rho + g n D[s+] rho`, written
/// out in nalgebra independently of the library's operators.
pub fn lindblad_rk4(p: &ModelParams, h: f64, t: f64) -> M2 {
    let i = Complex::new(0.0, 1.0);
    let one = Complex::new(1.0, 0.0);
    let zero = Complex::new(0.0, 0.0);
    // basis (|e>, |g>)
    let sy = M2::new(zero, -i, i, zero);
    let sm = M2::new(zero, zero, one, zero);
    let sp = sm.adjoint();
    let ham = sy * Complex::new(0.5 * p.omega, 0.0);
    let ops = [
        sm * Complex::new((p.gamma * (p.nbar + 1.0)).sqrt(), 0.0),
        sp * Complex::new((p.gamma * p.nbar).sqrt(), 0.0),
    ];
    let rhs = |r: &M2| -> M2 {
        let mut out = (ham * r - r * ham) * (-i);
        for l in &ops {
            let ld = l.adjoint();
            out += l * r * ld - (ld * l * r + r * ld * l) * Complex::new(0.5, 0.0);
        }
        out
    };
    let mut rho = to_na(&p.rho0);
    let steps = (t / h).round() as usize;
    let half = Complex::new(0.5 * h, 0.0);
    let full = Complex::new(h, 0.0);
    let sixth = Complex::new(h / 6.0, 0.0);
    let two = Complex::new(2.0, 0.0);
    for _ in 0..steps {
        let k1 = rhs(&rho);
        let k2 = rhs(&(rho + k1 * half));
        let k3 = rhs(&(rho + k2 * half));
        let k4 = rhs(&(rho + k3 * full));
        rho += (k1 + k2 * two + k3 * two + k4) * sixth;
    }
    rho
}

pub fn bloch_na(rho: &M2) -> [f64; 3] {
    [
        2.0 * rho[(1, 0)].re,
        2.0 * rho[(1, 0)].im,
        rho[(0, 0)].re - rho[(1, 1)].re,
    ]
}

/// Classical path enumeration: probability of each hidden path `x_0..x_N`
/// jointly with the record, `P(x_0) prod_k F_{y_k}(x_{k+1} | x_k)`.
pub fn enumerate_paths(
    kernels: &[&ConditionalKernel],
    outcomes: &[usize],
    prior: &ClassicalState,
) -> Vec<(Vec<usize>, f64)> {
    let n = prior.len();
    let steps = outcomes.len();
    let mut out = Vec::new();
    let total = n.pow(steps as u32 + 1);
    for code in 0..total {
        let path: Vec<usize> = (0..=steps).map(|k| (code / n.pow(k as u32)) % n).collect();
        let mut w = prior.0[path[0]];
        for k in 0..steps {
            w *= kernels[k].matrix(outcomes[k]).unwrap()[path[k + 1]][path[k]];
        }
        out.push((path, w));
    }
    out
}

/// Joint `P(x_t = x, record)` at every `t`, normalised over `x`.
pub fn path_marginals(paths: &[(Vec<usize>, f64)], n: usize, steps: usize) -> Vec<Vec<f64>> {
    (0..=steps)
        .map(|k| {
            let mut m = vec![0.0; n];
            for (path, w) in paths {
                m[path[k]] += w;
            }
            let t: f64 = m.iter().sum();
            m.iter().map(|v| v / t).collect()
        })
        .collect()
}

/// Random nonnegative conditional kernel over `n` states and `ny` outcomes,
/// normalised so that `sum_y sum_x' F_y(x'|x) = 1`.
pub fn random_kernel(rng: &mut ChaCha8Rng, n: usize, ny: usize) -> ConditionalKernel {
    let mut m: Vec<Vec<Vec<f64>>> = (0..ny)
        .map(|_| {
            (0..n)
                .map(|_| (0..n).map(|_| rng.random_range(0.0..1.0)).collect())
                .collect()
        })
        .collect();
    for x in 0..n {
        let total: f64 = m.iter().map(|f| (0..n).map(|xp| f[xp][x]).sum::<f64>()).sum();
        for f in m.iter_mut() {
            for row in f.iter_mut() {
                row[x] /= total;
            }
        }
    }
    ConditionalKernel::new(m).unwrap()
}

/// Two-observer averages by enumeration of every past record of the second
/// observer for a jump/jump scenario with physical, exactly complete maps.
///
/// Returns, at each grid point, the weighted average of true states and of
/// Petz-Fuchs smoothed true states, plus the Alice filtered state obtained
/// by summing the unnormalised true states.
pub struct GwEnumeration {
    pub gw: Vec<CMatrix>,
    pub pf_gw: Vec<CMatrix>,
    pub summed_true: Vec<CMatrix>,
}

pub fn gw_enumerate(
    u: &CMatrix,
    alice_ops: &[CMatrix],
    bob_ops: [&CMatrix; 2],
    rho0: &CMatrix,
    effects: &[CMatrix],
) -> GwEnumeration {
    let steps = alice_ops.len();
    let mut gw = Vec::new();
    let mut pf_gw = Vec::new();
    let mut summed_true = Vec::new();
    // unnormalised true states for all Bob pasts of the current length
    let mut layer: Vec<CMatrix> = vec![rho0.clone()];
    for k in 0..=steps {
        let e = &effects[k];
        let mut tot = 0.0;
        let mut g = CMatrix::zeros(2);
        let mut pf = CMatrix::zeros(2);
        let mut sum = CMatrix::zeros(2);
        for rt in &layer {
            let tr = rt.trace_re();
            if tr <= 0.0 {
                continue;
            }
            sum += rt;
            let w = rt.trace_product(e).re;
            tot += w;
            g += &rt.scale(w / tr);
            let s = na_sqrt(rt);
            pf += &(&(&s * e) * &s);
        }
        gw.push(g.scale(1.0 / tot));
        pf_gw.push(pf.scale(1.0 / tot));
        summed_true.push(sum);
        if k == steps {
            break;
        }
        let mut next = Vec::with_capacity(layer.len() * 2);
        for rt in &layer {
            for b in bob_ops {
                let op = &(u * &alice_ops[k]) * b;
                next.push(&(&op * rt) * &op.adjoint());
            }
        }
        layer = next;
    }
    GwEnumeration { gw, pf_gw, summed_true }
}

/// Classical kernel given by the populations of the quantum step maps.
pub fn population_kernel(
    ops: &qsmooth::dynamics::StepOperators,
    outcome: &qsmooth::dynamics::Outcome,
) -> ConditionalKernel {
    let on = ops.conditional_map(outcome).unwrap();
    let off = match *outcome {
        qsmooth::dynamics::Outcome::Jump { detected, p_ost } => qsmooth::dynamics::Outcome::Jump {
            detected: !detected,
            p_ost,
        },
        h => h,
    };
    let other = ops.conditional_map(&off).unwrap();
    let column = |map: &qsmooth::channels::CpMap| -> Vec<Vec<f64>> {
        let images: Vec<Vec<f64>> = (0..2)
            .map(|x| {
                let mut basis = CMatrix::zeros(2);
                basis[(x, x)] = qsmooth::C64::new(1.0, 0.0);
                map.apply(&basis).unwrap().diagonal_re()
            })
            .collect();
        (0..2).map(|xp| (0..2).map(|x| images[x][xp]).collect()).collect()
    };
    let (m_on, m_off) = (column(&on), column(&other));
    let (zero, one) = match *outcome {
        qsmooth::dynamics::Outcome::Jump { detected: true, .. } => (m_off, m_on),
        _ => (m_on, m_off),
    };
    ConditionalKernel::new(vec![zero, one]).unwrap()
}
