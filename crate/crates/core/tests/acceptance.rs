//! Acceptance suite: oracle equivalence, invariants, and fixture-scale
//! analogues of the published behavior. Each test prints one PASS line;
//! a failed assertion means the criterion failed.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use volmotion::config::{RunConfig, SynthSection};
use volmotion::correspondence::{
    fit_correspondence, nw_forward_warp, reconstruct_dvf, WarpParams,
};
use volmotion::eval::{
    confidence_interval, evaluate_prediction, jitter, mae, max_error, nrmse, rmse,
    ComparisonTable, PredictorConfigs,
};
use volmotion::optical_flow::{
    flow_grid_search, lk_register, registration_error, FlowGrid, FlowParams,
};
use volmotion::pipeline::run_pipeline;
use volmotion::predictors::rnn::{
    clip_joint_gradient, rnn_grid_search, rnn_init, rnn_run_online, rnn_step, JointGradient,
    RnnConfig, RnnGrid, RnnRtrlState,
};
use volmotion::predictors::{lms_run, no_prediction};
use volmotion::synthetic::{make_marker_series, DriftSpec, MarkerMotion};
use volmotion::tracking::{fit_norm, SplitSpec, TrajectorySet};
use volmotion::volume::{VectorField3, Volume3};

fn close(a: f64, b: f64, eps: f64) -> bool {
    (a - b).abs() <= eps
}

// ---------------------------------------------------------------- shared

fn frozen_state(q: usize, m1: usize, p: usize, seed: u64) -> RnnRtrlState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |rows: usize, cols: usize| {
        DMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-0.3..0.3))
    };
    let w_a = draw(q, q);
    let w_b = draw(q, m1);
    let w_c = draw(p, q);
    RnnRtrlState::from_matrices(
        w_a,
        w_b,
        w_c,
        DVector::zeros(q),
        vec![DMatrix::zeros(q, q + m1); q],
    )
    .unwrap()
}

/// Runs `steps` frozen iterations and returns the instantaneous loss on one
/// extra input/target pair (no update applied for that pair).
fn frozen_loss(
    mut state: RnnRtrlState,
    us: &[DVector<f64>],
    ds: &[DVector<f64>],
    steps: usize,
) -> f64 {
    for n in 0..steps {
        rnn_step(&mut state, &us[n], &ds[n], 0.0, 1e12).unwrap();
    }
    let y = state.w_c() * state.x();
    0.5 * (&ds[steps] - y).norm_squared()
}

// ---------------------------------------------------------- criterion 1

#[test]
fn acceptance_01_rtrl_gradient_matches_finite_differences() {
    let t0 = Instant::now();
    let steps = 10usize;
    for &q in &[1usize, 3, 5] {
        for &l in &[1usize, 2, 3] {
            for &r in &[1usize, 2] {
                let m1 = 3 * r * l + 1;
                let p = 3 * r;
                let seed = (q * 100 + l * 10 + r) as u64;
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let us: Vec<DVector<f64>> = (0..=steps)
                    .map(|_| DVector::from_fn(m1, |_, _| rng.gen_range(-1.0..1.0)))
                    .collect();
                let ds: Vec<DVector<f64>> = (0..=steps)
                    .map(|_| DVector::from_fn(p, |_, _| rng.gen_range(-1.0..1.0)))
                    .collect();
                let base = frozen_state(q, m1, p, seed);

                // sensitivity-based gradient after `steps` frozen iterations
                let mut state = base.clone();
                for n in 0..steps {
                    rnn_step(&mut state, &us[n], &ds[n], 0.0, 1e12).unwrap();
                }
                let e = &ds[steps] - state.w_c() * state.x();
                let wc_e = state.w_c().transpose() * &e;

                let h = 1e-5;
                for j in 0..q {
                    let ascent = state.lambda()[j].transpose() * &wc_e;
                    for k in 0..q + m1 {
                        let mut plus = base.clone();
                        let mut minus = base.clone();
                        {
                            let bump = |s: &mut RnnRtrlState, d: f64| {
                                let (mut wa, mut wb) = (s.w_a().clone(), s.w_b().clone());
                                if k < q {
                                    wa[(j, k)] += d;
                                } else {
                                    wb[(j, k - q)] += d;
                                }
                                *s = RnnRtrlState::from_matrices(
                                    wa,
                                    wb,
                                    s.w_c().clone(),
                                    DVector::zeros(q),
                                    vec![DMatrix::zeros(q, q + m1); q],
                                )
                                .unwrap();
                            };
                            bump(&mut plus, h);
                            bump(&mut minus, -h);
                        }
                        let fd = (frozen_loss(plus, &us, &ds, steps)
                            - frozen_loss(minus, &us, &ds, steps))
                            / (2.0 * h);
                        // the stored direction is ascent on -loss
                        let analytic = -ascent[k];
                        assert!(
                            close(analytic, fd, 1e-5 * fd.abs().max(1.0)),
                            "q={q} l={l} r={r} j={j} k={k}: analytic {analytic} vs fd {fd}"
                        );
                    }
                }
            }
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    assert!(secs < 10.0, "gradient oracle took {secs:.1} s");
    println!("ACCEPTANCE 1: PASS - sensitivity gradients match finite differences (1e-5 rel, {secs:.1} s)");
}

// ---------------------------------------------------------- criterion 2

#[test]
fn acceptance_02_scalar_step_matches_hand_computation() {
    let w_a = DMatrix::from_element(1, 1, 0.5);
    let w_b = DMatrix::from_row_slice(1, 2, &[0.1, 0.2]);
    let w_c = DMatrix::from_element(1, 1, 0.3);
    let x = DVector::from_element(1, 0.4);
    let lambda = vec![DMatrix::from_row_slice(1, 3, &[0.05, -0.02, 0.03])];
    let mut state = RnnRtrlState::from_matrices(w_a, w_b, w_c, x, lambda).unwrap();

    let u = DVector::from_vec(vec![1.0, 0.6]);
    let d = DVector::from_element(1, 1.0);
    let (eta, theta) = (0.1, 10.0);
    let y = rnn_step(&mut state, &u, &d, eta, theta).unwrap();

    // hand arithmetic
    let y_hand = 0.3 * 0.4; // 0.12
    let e = 1.0 - y_hand; // 0.88
    let wc_e = 0.3 * e; // 0.264
    let dw = [0.05 * wc_e, -0.02 * wc_e, 0.03 * wc_e];
    let dwc = e * 0.4; // 0.352
    let kappa = (dw.iter().map(|v| v * v).sum::<f64>() + dwc * dwc).sqrt();
    assert!(kappa < theta); // no clipping in this example
    let act: f64 = 0.5 * 0.4 + 0.1 * 1.0 + 0.2 * 0.6; // 0.42
    let x_next = act.tanh();
    let phi = 1.0 - act.tanh() * act.tanh();
    let lam_next = [
        phi * (0.5 * 0.05 + 0.4),
        phi * (0.5 * -0.02 + 1.0),
        phi * (0.5 * 0.03 + 0.6),
    ];

    assert!(close(y[0], y_hand, 1e-12));
    assert!(close(state.w_c()[(0, 0)], 0.3 + eta * dwc, 1e-12));
    assert!(close(state.w_a()[(0, 0)], 0.5 + eta * dw[0], 1e-12));
    assert!(close(state.w_b()[(0, 0)], 0.1 + eta * dw[1], 1e-12));
    assert!(close(state.w_b()[(0, 1)], 0.2 + eta * dw[2], 1e-12));
    assert!(close(state.x()[0], x_next, 1e-12));
    for k in 0..3 {
        assert!(close(state.lambda()[0][(0, k)], lam_next[k], 1e-12));
    }
    println!("ACCEPTANCE 2: PASS - scalar update transcription matches hand computation to 1e-12");
}

// ---------------------------------------------------------- criterion 3

#[test]
fn acceptance_03_clipping_invariant_over_randomized_steps() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let eta = 0.02;
    for _ in 0..10_000 {
        let q = rng.gen_range(1..5usize);
        let cols = rng.gen_range(1..8usize);
        let p = rng.gen_range(1..4usize);
        let scale = 10f64.powf(rng.gen_range(-3.0..3.0));
        let mut grad = JointGradient {
            w_rows: (0..q)
                .map(|_| DVector::from_fn(q + cols, |_, _| scale * rng.gen_range(-1.0..1.0)))
                .collect(),
            w_c: DMatrix::from_fn(p, q, |_, _| scale * rng.gen_range(-1.0..1.0)),
        };
        let theta = 10f64.powf(rng.gen_range(-2.0..2.0));
        let before = grad.joint_norm();
        clip_joint_gradient(&mut grad, theta);
        let after = grad.joint_norm();
        assert!(eta * after <= eta * theta + 1e-12, "applied norm exceeds eta*theta");
        if before > theta {
            assert!(close(after, theta, 1e-9 * theta), "clip missed the bound");
        } else {
            assert!(close(after, before, 0.0), "unclipped gradient changed");
        }
    }
    println!("ACCEPTANCE 3: PASS - joint clipping invariant holds on 10000 randomized steps");
}

// ---------------------------------------------------------- criterion 4

fn flow_phantom(dims: [usize; 3], shift: [f64; 3], fine_amp: f64) -> Volume3 {
    Volume3::from_fn(dims, [1.0; 3], |x, y, z| {
        let p = [x as f64 - shift[0], y as f64 - shift[1], z as f64 - shift[2]];
        (p[0] * 0.55).sin() + (p[1] * 0.62).cos() + (p[2] * 0.48).sin()
            + 0.6 * ((p[0] + p[1]) * 0.39).sin()
            + 0.5 * ((p[1] - p[2]) * 0.33).cos()
            + fine_amp * (p[2] * 2.0).sin()
            + fine_amp * 0.8 * (p[0] * 1.86).cos()
            + fine_amp * 0.8 * (p[1] * 2.14).sin()
    })
}

fn interior_rms(u: &VectorField3, truth: [f64; 3], dims: [usize; 3], margin: usize) -> f64 {
    let mut sq = 0.0;
    let mut n = 0usize;
    for z in margin..dims[2] - margin {
        for y in margin..dims[1] - margin {
            for x in margin..dims[0] - margin {
                let v = u.at(x, y, z);
                sq += (v[0] - truth[0]).powi(2)
                    + (v[1] - truth[1]).powi(2)
                    + (v[2] - truth[2]).powi(2);
                n += 1;
            }
        }
    }
    (sq / n as f64).sqrt()
}

#[test]
fn acceptance_04_flow_recovers_translations() {
    let t0 = Instant::now();

    // sub-voxel translation, single layer
    let dims = [16, 16, 16];
    let fixed = flow_phantom(dims, [0.0; 3], 0.0);
    let moving = flow_phantom(dims, [0.5, 0.0, 0.0], 0.0);
    let p1 = FlowParams {
        sigma_init: 0.5,
        sigma_sub: 0.8,
        sigma_lk: 2.0,
        n_layers: 1,
        n_iter: 3,
        lk_window_h: Some(3),
        tensor_epsilon: 1e-6,
    };
    let u = lk_register(&fixed, &moving, &p1).unwrap();
    let sub_rms = interior_rms(&u, [0.5, 0.0, 0.0], dims, 4);
    assert!(sub_rms < 0.1, "sub-voxel RMS {sub_rms}");

    // 2-voxel translation of a phantom with fine detail: the pyramid is
    // required, a single layer locks onto the wrong fine-texture match
    let dims = [32, 32, 32];
    let fixed = flow_phantom(dims, [0.0; 3], 1.5);
    let moving = flow_phantom(dims, [0.0, 0.0, 2.0], 1.5);
    let multi = FlowParams {
        sigma_init: 0.5,
        sigma_sub: 1.0,
        sigma_lk: 2.0,
        n_layers: 3,
        n_iter: 3,
        lk_window_h: Some(3),
        tensor_epsilon: 1e-6,
    };
    let single = FlowParams { n_layers: 1, ..multi.clone() };
    let u3 = lk_register(&fixed, &moving, &multi).unwrap();
    let u1 = lk_register(&fixed, &moving, &single).unwrap();
    let rms3 = interior_rms(&u3, [0.0, 0.0, 2.0], dims, 6);
    let rms1 = interior_rms(&u1, [0.0, 0.0, 2.0], dims, 6);
    assert!(rms3 < 0.3, "3-layer RMS {rms3}");
    assert!(rms1 > rms3, "single layer ({rms1}) not worse than pyramid ({rms3})");

    let secs = t0.elapsed().as_secs_f64();
    assert!(secs < 60.0, "flow recovery took {secs:.1} s");
    println!(
        "ACCEPTANCE 4: PASS - translations recovered (sub-voxel RMS {sub_rms:.3}, \
         2-voxel RMS {rms3:.3} vs single-layer {rms1:.3}, {secs:.1} s)"
    );
}

// ---------------------------------------------------------- criterion 5

#[test]
fn acceptance_05_registration_error_hand_case() {
    let f1 = Volume3::new([2, 2, 2], [1.0; 3], vec![1., 2., 3., 4., 5., 6., 7., 8.]).unwrap();
    let f2 = Volume3::new([2, 2, 2], [1.0; 3], vec![2., 2., 4., 4., 5., 5., 8., 8.]).unwrap();
    let dvfs = vec![VectorField3::zeros([2, 2, 2])];
    // residuals -1,0,-1,0,0,1,-1,0: sum of squares 4 over 8 voxels
    let expect = (4.0f64 / 8.0).sqrt();
    let got = registration_error(&[f1, f2], &dvfs, None).unwrap();
    assert!(close(got, expect, 1e-12), "{got} vs {expect}");
    println!("ACCEPTANCE 5: PASS - registration error matches hand computation to 1e-12");
}

// ---------------------------------------------------------- criterion 6

fn prediction_fixture() -> TrajectorySet {
    let drift = DriftSpec {
        amplitude_a: 1.0,
        period_t: 240.0,
        sample_dt: 0.4,
        n_frames: 2400,
    };
    let markers = vec![
        MarkerMotion {
            amplitude_mm: [1.0, 0.5, 5.0],
            period_s: [4.0; 3],
            phase: [0.0, 0.4, 0.0],
        },
        MarkerMotion {
            amplitude_mm: [0.8, 0.3, 4.0],
            period_s: [4.0; 3],
            phase: [0.7, 0.0, 0.2],
        },
        MarkerMotion {
            amplitude_mm: [0.5, 0.6, 3.0],
            period_s: [4.0; 3],
            phase: [0.1, 0.9, 0.5],
        },
    ];
    make_marker_series(2400, &markers, &drift, 0.05, 11).unwrap()
}

#[test]
fn acceptance_06_predictor_ordering_on_synthetic_fixture() {
    let t0 = Instant::now();
    let ts = prediction_fixture();
    let split = SplitSpec { n_train: 2000, n_val: 200, n_test: 200 };
    let stats = fit_norm(&ts, &split).unwrap();
    let range = split.test_range();

    let base = no_prediction(&ts);
    let base_rms = evaluate_prediction(&ts, &base, range.clone()).unwrap().e_rms;

    let lms = lms_run(&ts, &stats, 10, 0.01).unwrap();
    let lms_rms = evaluate_prediction(&ts, &lms, range.clone()).unwrap().e_rms;

    let mut acc = 0.0;
    for seed in 0..10u64 {
        let cfg = RnnConfig {
            l: 10,
            r: 3,
            q: 25,
            eta: 0.02,
            theta: 1.0,
            sigma_init_rnn: 0.02,
            seed,
        };
        let pred = rnn_run_online(&ts, &stats, &cfg).unwrap();
        acc += evaluate_prediction(&ts, &pred, range.clone()).unwrap().e_rms;
    }
    let rnn_rms = acc / 10.0;

    assert!(
        rnn_rms * 3.0 <= base_rms,
        "RNN RMSE {rnn_rms:.4} not 3x below baseline {base_rms:.4}"
    );
    assert!(
        lms_rms * 3.0 <= base_rms,
        "LMS RMSE {lms_rms:.4} not 3x below baseline {base_rms:.4}"
    );
    let secs = t0.elapsed().as_secs_f64();
    assert!(secs < 300.0, "fixture took {secs:.1} s");
    println!(
        "ACCEPTANCE 6: PASS - test RMSE rnn {rnn_rms:.3} / lms {lms_rms:.3} vs \
         no-prediction {base_rms:.3} ({secs:.1} s)"
    );
}

// ---------------------------------------------------------- criterion 7

#[test]
fn acceptance_07_grid_search_bookkeeping() {
    // flow side: recompute marginals from the raw rows
    let fixed = flow_phantom([8, 8, 8], [0.0; 3], 0.0);
    let moving = flow_phantom([8, 8, 8], [0.2, 0.0, 0.0], 0.0);
    let grid = FlowGrid {
        sigma_init: vec![0.4, 0.6],
        sigma_sub: vec![0.8],
        sigma_lk: vec![1.5],
        n_layers: vec![1],
        n_iter: vec![1, 2],
        lk_window_h: Some(2),
        tensor_epsilon: 1e-6,
    };
    let res = flow_grid_search(&[fixed, moving], &grid, None).unwrap();
    assert_eq!(res.rows.len(), 4);
    let best_direct = res
        .rows
        .iter()
        .enumerate()
        .min_by(|(_, a), (_, b)| a.e_dvf.partial_cmp(&b.e_dvf).unwrap())
        .unwrap()
        .0;
    assert_eq!(res.best, best_direct);
    for m in &res.marginals {
        let selected: Vec<f64> = res
            .rows
            .iter()
            .filter(|r| match m.param.as_str() {
                "sigma_init" => r.sigma_init == m.value,
                "sigma_sub" => r.sigma_sub == m.value,
                "sigma_lk" => r.sigma_lk == m.value,
                "n_layers" => r.n_layers as f64 == m.value,
                "n_iter" => r.n_iter as f64 == m.value,
                other => panic!("unknown marginal {other}"),
            })
            .map(|r| r.e_dvf)
            .collect();
        let mean = selected.iter().sum::<f64>() / selected.len() as f64;
        let min = selected.iter().fold(f64::INFINITY, |a, &b| a.min(b));
        assert_eq!(m.mean_error, mean, "mean marginal {}={}", m.param, m.value);
        assert_eq!(m.min_error, min, "min marginal {}={}", m.param, m.value);
    }

    // predictor side: failed runs are excluded from averages and argmin
    let drift = DriftSpec { amplitude_a: 0.0, period_t: 60.0, sample_dt: 0.4, n_frames: 60 };
    let motion = MarkerMotion {
        amplitude_mm: [1.0, 0.6, 2.0],
        period_s: [4.0; 3],
        phase: [0.0; 3],
    };
    let ts = make_marker_series(60, &[motion], &drift, 0.02, 5).unwrap();
    let split = SplitSpec { n_train: 36, n_val: 12, n_test: 12 };
    let grid = RnnGrid {
        theta: vec![1e300],
        eta: vec![0.05, 1e6],
        sigma_init_rnn: vec![0.02],
        l: vec![3],
        q: vec![4],
        n_runs: 3,
        seed: 0,
    };
    let res = rnn_grid_search(&ts, &split, &grid).unwrap();
    assert_eq!(res.rows.len(), 2);
    let stats = fit_norm(&ts, &split).unwrap();
    for row in &res.rows {
        // reproduce the per-run outcomes independently
        let mut maes = Vec::new();
        for run in 0..grid.n_runs {
            let cfg = RnnConfig {
                l: row.l,
                r: 1,
                q: row.q,
                eta: row.eta,
                theta: row.theta,
                sigma_init_rnn: row.sigma_init_rnn,
                seed: grid.seed + run as u64,
            };
            if let Ok(pred) = rnn_run_online(&ts, &stats, &cfg) {
                let truth: Vec<Vec<f64>> =
                    split.val_range().map(|f| ts.series()[f].clone()).collect();
                let rows: Vec<Vec<f64>> = split
                    .val_range()
                    .map(|f| pred.row_for_frame(f).unwrap().to_vec())
                    .collect();
                maes.push(mae(&truth, &rows).unwrap());
            }
        }
        assert_eq!(row.n_failed, grid.n_runs - maes.len(), "failure count");
        match row.mae_mm {
            Some(v) => {
                let mean = maes.iter().sum::<f64>() / maes.len() as f64;
                assert!(close(v, mean, 1e-12), "footnote accounting: {v} vs {mean}");
            }
            None => assert!(maes.is_empty()),
        }
    }
    // the stable tuple must win the argmin
    assert!(res.rows[1].n_failed >= 1, "divergent tuple did not fail");
    assert_eq!(res.rows[0].n_failed, 0);
    assert_eq!(res.best, Some(0));
    println!("ACCEPTANCE 7: PASS - grid marginals recompute exactly; failed runs excluded");
}

// ---------------------------------------------------------- criterion 8

fn dense_nw_oracle(src: &Volume3, dvf: &VectorField3, wp: &WarpParams) -> Volume3 {
    let dims = src.dims();
    let h = wp.h as f64;
    Volume3::from_fn(dims, src.spacing(), |x, y, z| {
        let mut num = 0.0;
        let mut den = 0.0;
        for pz in 0..dims[2] {
            for py in 0..dims[1] {
                for px in 0..dims[0] {
                    let u = dvf.at(px, py, pz);
                    let d2 = (x as f64 - (px as f64 + u[0])).powi(2)
                        + (y as f64 - (py as f64 + u[1])).powi(2)
                        + (z as f64 - (pz as f64 + u[2])).powi(2);
                    if d2 >= h * h {
                        continue;
                    }
                    let w = (-d2 / (2.0 * wp.sigma_w * wp.sigma_w)).exp();
                    num += src.at(px, py, pz) * w;
                    den += w;
                }
            }
        }
        if den > 0.0 {
            num / den
        } else {
            wp.fill_value
        }
    })
}

#[test]
fn acceptance_08_forward_warp_matches_dense_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let dims = [6, 6, 6];
    let n = 216;
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..100.0)).collect();
    let src = Volume3::new(dims, [1.0; 3], data).unwrap();
    let wp = WarpParams { sigma_w: 0.5, h: 3, fill_value: -5.0 };

    let zero = VectorField3::zeros(dims);
    let got = nw_forward_warp(&src, &zero, &wp).unwrap();
    let want = dense_nw_oracle(&src, &zero, &wp);
    for (a, b) in got.data().iter().zip(want.data()) {
        assert!(close(*a, *b, 1e-10), "{a} vs {b}");
    }

    // push every voxel far outside: all destinations keep the fill value
    let mut far = VectorField3::zeros(dims);
    for v in far.data_mut() {
        *v = [50.0, 50.0, 50.0];
    }
    let filled = nw_forward_warp(&src, &far, &wp).unwrap();
    assert!(filled.data().iter().all(|&v| v == -5.0));

    // random motion: intensities stay convex combinations of the source
    let mut dvf = VectorField3::zeros(dims);
    for v in dvf.data_mut() {
        *v = [
            rng.gen_range(-2.0..2.0),
            rng.gen_range(-2.0..2.0),
            rng.gen_range(-2.0..2.0),
        ];
    }
    let (lo, hi) = src.min_max();
    let out = nw_forward_warp(&src, &dvf, &wp).unwrap();
    for &v in out.data() {
        assert!((v >= lo - 1e-9 && v <= hi + 1e-9) || v == -5.0);
    }
    println!("ACCEPTANCE 8: PASS - forward warp matches dense oracle to 1e-10; fill and bounds hold");
}

// ---------------------------------------------------------- criterion 9

#[test]
fn acceptance_09_correspondence_exactness_and_linearity() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let dims = [3, 3, 2];
    let n_vox = 18;
    let coeff: Vec<[f64; 3]> = (0..n_vox)
        .map(|_| {
            [
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            ]
        })
        .collect();
    let rows: Vec<Vec<f64>> = (0..8)
        .map(|_| (0..9).map(|_| rng.gen_range(-2.0..2.0)).collect())
        .collect();
    let dvfs: Vec<VectorField3> = rows
        .iter()
        .map(|row| {
            let data = coeff
                .iter()
                .map(|c| {
                    let mut u = [0.0; 3];
                    for p in 0..3 {
                        for a in 0..3 {
                            u[a] += c[p] * row[3 * p + a];
                        }
                    }
                    u
                })
                .collect();
            VectorField3::new(dims, data).unwrap()
        })
        .collect();
    let model = fit_correspondence(&dvfs, &rows, [1.0; 3]).unwrap();

    // in-span motion is reproduced with zero residual
    for (row, dvf) in rows.iter().zip(&dvfs) {
        let rec = reconstruct_dvf(&model, row).unwrap();
        for (a, b) in rec.data().iter().zip(dvf.data()) {
            for c in 0..3 {
                assert!(close(a[c], b[c], 1e-8), "{} vs {}", a[c], b[c]);
            }
        }
    }

    // linearity of the reconstruction
    let a = reconstruct_dvf(&model, &rows[0]).unwrap();
    let b = reconstruct_dvf(&model, &rows[1]).unwrap();
    let sum_row: Vec<f64> = rows[0].iter().zip(&rows[1]).map(|(x, y)| 1.5 * x - 0.5 * y).collect();
    let s = reconstruct_dvf(&model, &sum_row).unwrap();
    for i in 0..s.data().len() {
        for c in 0..3 {
            let expect = 1.5 * a.data()[i][c] - 0.5 * b.data()[i][c];
            assert!(close(s.data()[i][c], expect, 1e-12));
        }
    }
    println!("ACCEPTANCE 9: PASS - in-span DVFs recovered (1e-8); reconstruction linear (1e-12)");
}

// --------------------------------------------------------- criterion 10

#[test]
fn acceptance_10_end_to_end_image_prediction() {
    let t0 = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        out_dir: dir.path().join("run"),
        seed: 0,
        threads: None,
        input_frames: None,
        synth: SynthSection {
            dims: [16, 16, 16],
            blob_sigma: [2.5, 2.5, 2.5],
            blob_amplitude: 1000.0,
            cycle_amplitude: 1.5,
            drift: DriftSpec {
                amplitude_a: 0.4,
                period_t: 20.0,
                sample_dt: 0.4,
                n_frames: 61,
            },
            noise: None,
        },
        flow: FlowParams {
            n_layers: 2,
            n_iter: 2,
            ..FlowParams::default()
        },
        markers: vec![[7.5, 7.5, 7.5], [7.5, 7.5, 9.5], [9.5, 7.5, 7.5]],
        split: SplitSpec { n_train: 36, n_val: 12, n_test: 12 },
        predictors: PredictorConfigs {
            rnn: RnnConfig { l: 5, r: 3, q: 10, ..RnnConfig::default() },
            l_lms: 5,
            eta_lms: 0.01,
            l_lin: 5,
        },
        n_rnn_runs: 2,
        warp: WarpParams::default(),
        flow_grid: None,
        rnn_grid: None,
    };
    let manifest = run_pipeline(&cfg).unwrap();
    assert_eq!(manifest.stages.len(), 6);

    let metrics =
        std::fs::read_to_string(cfg.out_dir.join("evaluate").join("metrics.json")).unwrap();
    let table: ComparisonTable = serde_json::from_str(&metrics).unwrap();
    let rnn = table.row("rnn").unwrap().report.as_ref().unwrap();
    let cc = rnn.cross_corr.expect("pipeline must report image cross-correlation");
    assert!(cc >= 0.9, "predicted-vs-true cross-correlation {cc:.3}");
    let secs = t0.elapsed().as_secs_f64();
    assert!(secs < 600.0, "pipeline took {secs:.1} s");
    println!("ACCEPTANCE 10: PASS - end-to-end cross-correlation {cc:.3} ({secs:.1} s)");
}

// --------------------------------------------------------- criterion 11

fn rnn_step_time(q: usize, l: usize, steps: usize, reps: usize) -> f64 {
    let cfg = RnnConfig {
        l,
        r: 1,
        q,
        eta: 0.01,
        theta: 1.0,
        sigma_init_rnn: 0.02,
        seed: 0,
    };
    let m1 = cfg.m() + 1;
    let p = cfg.p();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let us: Vec<DVector<f64>> = (0..steps + 3)
        .map(|_| DVector::from_fn(m1, |_, _| rng.gen_range(-1.0..1.0)))
        .collect();
    let ds: Vec<DVector<f64>> = (0..steps + 3)
        .map(|_| DVector::from_fn(p, |_, _| rng.gen_range(-1.0..1.0)))
        .collect();
    let mut best = f64::INFINITY;
    for _ in 0..reps {
        let mut state = rnn_init(&cfg).unwrap();
        for n in 0..3 {
            rnn_step(&mut state, &us[n], &ds[n], 0.01, 1.0).unwrap();
        }
        let t0 = Instant::now();
        for n in 3..steps + 3 {
            rnn_step(&mut state, &us[n], &ds[n], 0.01, 1.0).unwrap();
        }
        best = best.min(t0.elapsed().as_secs_f64() / steps as f64);
    }
    best
}

fn warp_time(d: usize, h: usize, reps: usize) -> f64 {
    let dims = [d, d, d];
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let data: Vec<f64> = (0..d * d * d).map(|_| rng.gen_range(0.0..1.0)).collect();
    let vol = Volume3::new(dims, [1.0; 3], data).unwrap();
    let mut dvf = VectorField3::zeros(dims);
    for v in dvf.data_mut() {
        *v = [
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        ];
    }
    let wp = WarpParams { sigma_w: 0.5, h, fill_value: 0.0 };
    let _ = nw_forward_warp(&vol, &dvf, &wp).unwrap(); // warmup
    let mut best = f64::INFINITY;
    for _ in 0..reps {
        let t0 = Instant::now();
        let _ = nw_forward_warp(&vol, &dvf, &wp).unwrap();
        best = best.min(t0.elapsed().as_secs_f64());
    }
    best
}

#[test]
fn acceptance_11_complexity_scaling() {
    // training step: doubling the hidden size lands in the cubic regime
    let t_small = rnn_step_time(40, 50, 20, 3);
    let t_big = rnn_step_time(80, 50, 10, 3);
    let rnn_ratio = t_big / t_small;
    assert!(
        (6.0..=10.0).contains(&rnn_ratio),
        "RTRL step-time ratio {rnn_ratio:.2} outside [6, 10]"
    );

    // forward warp: doubling the window radius scales with h^3
    let w_small = warp_time(56, 5, 3);
    let w_big = warp_time(56, 10, 2);
    let warp_ratio = w_big / w_small;
    assert!(
        (6.0..=10.0).contains(&warp_ratio),
        "warp time ratio {warp_ratio:.2} outside [6, 10]"
    );
    println!(
        "ACCEPTANCE 11: PASS - doubling q scales step time x{rnn_ratio:.1}, \
         doubling h scales warp time x{warp_ratio:.1}"
    );
}

// --------------------------------------------------------- criterion 12

#[test]
fn acceptance_12_metric_examples() {
    // 3-4-5 mean error
    let t = vec![vec![0.0, 0.0, 0.0]];
    let p = vec![vec![3.0, 4.0, 0.0]];
    assert!(close(mae(&t, &p).unwrap(), 5.0, 1e-15));
    assert!(close(max_error(&t, &p).unwrap(), 5.0, 1e-15));
    assert!(close(rmse(&t, &p).unwrap(), 5.0, 1e-15));

    // unit offset on every frame and marker
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let truth: Vec<Vec<f64>> = (0..6)
        .map(|_| (0..6).map(|_| rng.gen_range(-3.0..3.0)).collect())
        .collect();
    let off: Vec<Vec<f64>> = truth
        .iter()
        .map(|r| {
            r.iter()
                .enumerate()
                .map(|(c, v)| if c % 3 == 2 { v + 1.0 } else { *v })
                .collect()
        })
        .collect();
    assert!(close(max_error(&truth, &off).unwrap(), 1.0, 1e-12));
    assert!(close(rmse(&truth, &off).unwrap(), 1.0, 1e-12));

    // mean-position prediction pins the normalized error at 1
    let mut mu = vec![0.0; 6];
    for row in &truth {
        for (m, v) in mu.iter_mut().zip(row) {
            *m += v / truth.len() as f64;
        }
    }
    let mean_pred = vec![mu; truth.len()];
    assert!(close(nrmse(&truth, &mean_pred).unwrap(), 1.0, 1e-12));

    // alternating prediction jitter
    let alt: Vec<Vec<f64>> = (0..6)
        .map(|k| vec![0.0, 0.0, if k % 2 == 0 { 1.0 } else { -1.0 }])
        .collect();
    assert!(close(jitter(&alt).unwrap(), 2.0, 1e-15));

    // two-run confidence interval with sample standard deviation
    let ci = confidence_interval(&[0.0, 2.0]).unwrap();
    assert!(close(ci.lo, -0.96, 1e-12) && close(ci.hi, 2.96, 1e-12));
    assert!(confidence_interval(&[1.0]).is_err());

    println!("ACCEPTANCE 12: PASS - metric examples match their stated values");
}
