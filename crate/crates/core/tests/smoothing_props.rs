mod common;

use common::*;
use proptest::prelude::*;
use qsmooth::classical::{smooth_record, ClassicalState, ConditionalKernel};
use qsmooth::dynamics::*;
use qsmooth::qmath::{self, min_eigenvalue, purity};
use qsmooth::rng::StreamSeed;
use qsmooth::smoothing::*;
use qsmooth::CMatrix;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn swv_excess_identity(rho in density_strategy(2), e in psd_strategy(2)) {
        let e = &e + &CMatrix::identity(2).scale(1e-2);
        let pf = petz_fuchs(&rho, &e).unwrap();
        let swv = swv_state(&rho, &e).unwrap();
        let s = na_sqrt(&rho);
        let dc = e.commutator(&s).commutator(&s);
        let tr = rho.trace_product(&e).re;
        let rebuilt = &swv - &dc.scale(0.5 / tr);
        prop_assert!(rebuilt.max_abs_diff(&pf) < 1e-10);
    }

    #[test]
    fn petz_fuchs_is_a_state(rho in density_strategy(2), e in psd_strategy(2)) {
        let e = &e + &CMatrix::identity(2).scale(1e-3);
        let pf = petz_fuchs(&rho, &e).unwrap();
        prop_assert!(min_eigenvalue(&pf) >= -1e-10);
        prop_assert!((pf.trace_re() - 1.0).abs() < 1e-12);
        prop_assert!(pf.hermiticity_defect() < 1e-14);
    }

    #[test]
    fn symmetrized_family_is_hermitian_with_unit_trace(rho in density_strategy(2), e in psd_strategy(2), alpha in 0.5f64..=1.0) {
        let e = &e + &CMatrix::identity(2).scale(1e-3);
        let s = symmetrized_product(&rho, &e, alpha).unwrap();
        prop_assert!(s.hermiticity_defect() < 1e-14);
        prop_assert!((s.trace_re() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn smoothing_is_invariant_to_effect_and_state_scale(rho in density_strategy(2), e in psd_strategy(2), a in 1e-6f64..1e6, b in 1e-6f64..1e6) {
        let e = &e + &CMatrix::identity(2).scale(1e-3);
        let x = petz_fuchs(&rho, &e).unwrap();
        let y = petz_fuchs(&rho.scale(a), &e.scale(b)).unwrap();
        prop_assert!(x.max_abs_diff(&y) < 1e-9);
    }
}

#[test]
fn diagonal_inputs_reduce_to_classical_product() {
    let mut rng = seeded(3);
    use rand::Rng;
    for _ in 0..100 {
        let f = [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)];
        let e = [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)];
        let pf = petz_fuchs(&CMatrix::diag(&f), &CMatrix::diag(&e)).unwrap();
        let cl = qsmooth::classical::cl_smooth_bayes(
            &ClassicalState(f.to_vec()),
            &qsmooth::classical::ClassicalEffect(e.to_vec()),
        )
        .unwrap()
        .normalized();
        for x in 0..2 {
            assert!((pf[(x, x)].re - cl[x]).abs() < 1e-12);
        }
        assert!(pf[(0, 1)].norm() < 1e-15);
    }
}

#[test]
fn undriven_diagonal_dynamics_match_classical_smoothing() {
    let p = ModelParams {
        omega: 0.0,
        dt: 1e-2,
        t_final: 2.0,
        rho0: CMatrix::diag(&[0.4, 0.6]),
        seed: 8,
        ..ModelParams::default()
    };
    let traj = simulate(&p).unwrap();
    let res = smooth(&traj, &p).unwrap();
    let ops = build_step_operators(&p).unwrap();
    let kernels: Vec<ConditionalKernel> = traj
        .record
        .outcomes
        .iter()
        .map(|o| population_kernel(&ops, o))
        .collect();
    let refs: Vec<&ConditionalKernel> = kernels.iter().collect();
    let ys: Vec<usize> = traj.record.outcomes.iter().map(|o| o.value() as usize).collect();
    let cl = smooth_record(&refs, &ys, &ClassicalState(vec![0.4, 0.6])).unwrap();
    for k in 0..traj.states.len() {
        for x in 0..2 {
            assert!((res.smoothed[k][(x, x)].re - cl.smoothed_bayes[k][x]).abs() < 1e-10);
        }
    }
}

#[test]
fn homodyne_futures_average_back_to_filtered() {
    for u in [Unraveling::HomodyneX, Unraveling::HomodyneY] {
        let base = ModelParams {
            dt: 1e-2,
            t_final: 1.0,
            seed: 31,
            ..ModelParams::default()
        }
        .with_unraveling(u);
        let past = simulate(&base).unwrap();
        let rho_f = past.states.last().unwrap().clone();
        let fut = ModelParams {
            rho0: rho_f.clone(),
            t_final: 0.5,
            ..base.clone()
        };
        let n = 2000;
        let mut avg = [0.0; 3];
        for i in 0..n {
            let traj = filter_trajectory(&fut, StreamSeed::new(77, i)).unwrap();
            let res = smooth(&traj, &fut).unwrap();
            let b = qmath::bloch_vector(&res.smoothed[0]);
            for k in 0..3 {
                avg[k] += b[k] / n as f64;
            }
        }
        let target = qmath::bloch_vector(&rho_f);
        for k in 0..3 {
            assert!(
                (avg[k] - target[k]).abs() < 4.0 / (n as f64).sqrt(),
                "{u} component {k}"
            );
        }
    }
}

#[test]
fn swv_purity_exceeds_one_somewhere_on_detection_records() {
    let p = ModelParams {
        t_final: 5.0,
        ..ModelParams::default()
    };
    let mut worst: f64 = 0.0;
    for i in 0..30 {
        let traj = filter_trajectory(&p, StreamSeed::new(5, i)).unwrap();
        if traj.record.n_detections() == 0 {
            continue;
        }
        let (_, eff) = retrofilter_trajectory(&traj, &p).unwrap();
        for (f, e) in traj.states.iter().zip(&eff.effects) {
            let s = swv_state(f, e).unwrap();
            worst = worst.max(s.trace_product(&s).re);
        }
    }
    assert!(worst > 1.0 + 1e-6, "{worst}");
}

fn gw_setup(seed: u64) -> (ModelParams, Trajectory, EffectSeries, GwEnumeration) {
    let p = ModelParams {
        dt: 5e-2,
        t_final: 0.5,
        seed,
        form: OperatorForm::Exact,
        ..ModelParams::default()
    };
    let traj = simulate(&p).unwrap();
    let (_, eff) = retrofilter_trajectory(&traj, &p).unwrap();
    let ops = build_step_operators(&p).unwrap();
    let alice: Vec<CMatrix> = traj
        .record
        .outcomes
        .iter()
        .map(|o| ops.measurement_operator(o).unwrap())
        .collect();
    let a = p.absorption_operator();
    let b0 = jump_operator(&a, p.dt, false, None, OperatorForm::Exact).unwrap();
    let b1 = jump_operator(&a, p.dt, true, None, OperatorForm::Exact).unwrap();
    let en = gw_enumerate(&ops.u, &alice, [&b0, &b1], &p.rho0, &eff.effects);
    (p, traj, eff, en)
}

#[test]
fn enumerated_gw_reproduces_alice_filter_and_pure_state_equivalence() {
    for seed in 0..5 {
        let (_, traj, _, en) = gw_setup(seed);
        for k in 0..traj.states.len() {
            let summed = qmath::normalize(&en.summed_true[k]).unwrap();
            assert!(summed.max_abs_diff(&traj.states[k]) < 1e-10);
            assert!(en.gw[k].max_abs_diff(&en.pf_gw[k]) < 1e-9);
        }
        let n = traj.states.len() - 1;
        assert!(en.gw[n].max_abs_diff(&traj.states[n]) < 1e-10);
    }
}

#[test]
fn monte_carlo_gw_approaches_enumeration() {
    let (p, traj, eff, en) = gw_setup(2);
    let res = gw_smooth_with_effects(
        &traj,
        &eff,
        &p,
        &GwConfig {
            bob: Unraveling::Jump,
            n_bob: 4000,
            seed: 3,
        },
    )
    .unwrap();
    for k in 0..traj.states.len() {
        assert!(res.gw[k].max_abs_diff(&en.gw[k]) < 0.02);
        assert!(res.pf_gw[k].max_abs_diff(&en.pf_gw[k]) < 0.02);
    }
}

#[test]
fn gw_states_are_physical_for_every_bob_unraveling() {
    let p = ModelParams {
        dt: 1e-2,
        t_final: 1.0,
        seed: 12,
        eta: 0.8,
        ..ModelParams::default()
    };
    let traj = simulate(&p).unwrap();
    for bob in Unraveling::ALL {
        let res = gw_smooth(
            &traj,
            &p,
            &GwConfig {
                bob,
                n_bob: 200,
                seed: 1,
            },
        )
        .unwrap();
        for (g, pf) in res.gw.iter().zip(&res.pf_gw) {
            assert!(min_eigenvalue(g) >= -1e-10 && min_eigenvalue(pf) >= -1e-10);
            assert!((g.trace_re() - 1.0).abs() < 1e-12);
            assert!(purity(pf).unwrap() <= 1.0 + 1e-10);
        }
        assert!(res.ess.iter().all(|&e| e >= 2.0 && e <= 200.0 + 1e-9));
    }
}
