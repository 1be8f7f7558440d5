mod common;

use std::sync::Arc;

use bounded_idapbc::bench::{make_ball_beam, BallBeamParams, VtolCoefficients, VtolParams};
use bounded_idapbc::controller::{ida_pbc_control, lambda_matrix, DampingMode};
use bounded_idapbc::linalg::{left_annihilator, Matrix};
use bounded_idapbc::matching::{closed_loop_vector_field, verify_matching, MatchingConfig};
use bounded_idapbc::Vector;

#[test]
fn both_benchmarks_pass_matching_verification() {
    let (sys, tgt) = common::ball_beam();
    let bb = verify_matching(&sys, &tgt, &MatchingConfig::default()).unwrap();
    assert!(bb.passed, "{bb:?}");
    assert!(bb.equilibrium_ok);
    assert!(bb.r2_min_eig > 0.0);
    assert!(bb.condition5_min_eig.unwrap() > 0.0);

    let d = common::vtol();
    let cfg = MatchingConfig {
        region: Some(d.confined_region()),
        ..MatchingConfig::default()
    };
    let vt = verify_matching(&d.system, &d.target, &cfg).unwrap();
    assert!(vt.passed, "{vt:?}");
    assert!(vt.equilibrium_ok);
    // no physical damping: R₂ = G K_v Gᵀ is singular on the unactuated direction
    assert!(vt.r2_min_eig.abs() < 1e-12);
}

#[test]
fn finite_difference_path_agrees_with_analytic_gradients() {
    let (sys, tgt) = common::ball_beam();
    let numeric_sys = bounded_idapbc::MechanicalSystem::new(
        2,
        1,
        Arc::new({
            let s = sys.clone();
            move |q: &Vector| s.mass(q)
        }),
        Arc::new({
            let s = sys.clone();
            move |q: &Vector| s.potential(q)
        }),
        Arc::new(|_: &Vector| Matrix::from_column_slice(2, 1, &[0.0, 1.0])),
        sys.workspace().clone(),
    )
    .unwrap();
    let report = verify_matching(
        &numeric_sys,
        &tgt,
        &MatchingConfig {
            samples: 200,
            ..MatchingConfig::default()
        },
    )
    .unwrap();
    assert!(report.passed, "{report:?}");
    assert!(report.kinetic_residual_max < 1e-3);
}

#[test]
fn numeric_annihilator_spans_the_closed_form_one() {
    let (sys, _) = common::ball_beam();
    let d = common::vtol();
    for th in [-1.2, -0.3, 0.0, 0.8] {
        let q = Vector::from_vec(vec![0.0, 0.0, th]);
        let closed = d.system.annihilator(&q);
        let numeric = left_annihilator(&d.system.input_coupling(&q));
        let cos = (closed.row(0).dot(&numeric.row(0))).abs()
            / (closed.row(0).norm() * numeric.row(0).norm());
        assert!((cos - 1.0).abs() < 1e-12);
    }
    let q = Vector::from_vec(vec![0.3, 0.1]);
    assert!((sys.annihilator_numeric(&q) * sys.input_coupling(&q)).norm() < 1e-12);
}

#[test]
fn law_reproduces_target_field_without_physical_damping() {
    let params = BallBeamParams {
        r: [0.0, 0.0],
        ..BallBeamParams::default()
    };
    let (sys, tgt) = make_ball_beam(&params).unwrap();
    for s in common::ball_beam_initial_states(50, 3) {
        let tau = ida_pbc_control(&sys, &tgt, &s, DampingMode::Linear).unwrap();
        let actual = sys.open_loop_vector_field(&s, &tau).unwrap();
        let target = closed_loop_vector_field(&sys, &tgt, &s).unwrap();
        assert!((actual - target).norm() < 1e-12);
    }
}

#[test]
fn physical_damping_gap_is_orthogonal_to_ptilde() {
    let (sys, tgt) = common::ball_beam();
    for s in common::ball_beam_initial_states(50, 4) {
        let (q, p) = (&s.q, &s.p);
        let tau = ida_pbc_control(&sys, &tgt, &s, DampingMode::Linear).unwrap();
        let actual = sys.open_loop_vector_field(&s, &tau).unwrap();
        let target = closed_loop_vector_field(&sys, &tgt, &s).unwrap();
        let gap = (actual - target).rows(2, 2).into_owned();

        let r = sys.damping(q);
        let m_inv = sys.mass(q).try_inverse().unwrap();
        let md_inv = tgt.mass_d(q).try_inverse().unwrap();
        let lam = lambda_matrix(&sys, &tgt, q).unwrap();
        let expected = (&lam * &r * &md_inv - &r * &m_inv) * p * 0.5;
        assert!((&gap - &expected).norm() < 1e-12, "{gap} vs {expected}");
        assert!(gap.dot(&tgt.ptilde(q, p).unwrap()).abs() < 1e-12);
    }
}

#[test]
fn vtol_epsilon_sweep_keeps_matching() {
    for epsilon in [0.1, 0.25, 0.5, 0.9] {
        for coefficients in [VtolCoefficients::Exact, VtolCoefficients::Rounded] {
            let d = bounded_idapbc::bench::make_vtol(&VtolParams {
                epsilon,
                coefficients,
                ..VtolParams::default()
            })
            .unwrap();
            let cfg = MatchingConfig {
                samples: 300,
                region: Some(d.confined_region()),
                ..MatchingConfig::default()
            };
            let report = verify_matching(&d.system, &d.target, &cfg).unwrap();
            match coefficients {
                VtolCoefficients::Exact => assert!(report.passed, "epsilon {epsilon}: {report:?}"),
                VtolCoefficients::Rounded => {
                    assert!(
                        report.potential_residual_max > 1e-6
                            && report.potential_residual_max < 1e-2,
                        "{report:?}"
                    )
                }
            }
        }
    }
}
