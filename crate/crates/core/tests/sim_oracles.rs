mod common;

use mixnash::config::{pair2_config, vehicles5_config};
use mixnash::controller::Variant;
use mixnash::sim::{fit_exponential_rate, run_scenario, Rk4, SCHEMA_VERSION};
use mixnash::Error;

#[test]
fn rk4_reproduces_exponential_decay() {
    let mut y = vec![1.0];
    let mut rk = Rk4::new(&y);
    for k in 0..100 {
        rk.step(
            |y: &Vec<f64>, _t, out: &mut [f64]| {
                out[0] = -y[0];
                Ok(())
            },
            &mut y,
            k as f64 * 0.01,
            0.01,
        )
        .unwrap();
    }
    assert!((y[0] - (-1.0f64).exp()).abs() < 1e-8);
}

#[test]
fn rk4_is_fourth_order_on_a_forced_system() {
    // ẏ = −y + sin t, y(0) = 0: y(t) = (sin t − cos t + e^{−t}) / 2.
    let exact = |t: f64| 0.5 * (t.sin() - t.cos() + (-t).exp());
    let err = |dt: f64| {
        let mut y = vec![0.0];
        let mut rk = Rk4::new(&y);
        let n = (2.0 / dt).round() as usize;
        for k in 0..n {
            rk.step(
                |y: &Vec<f64>, t, out: &mut [f64]| {
                    out[0] = -y[0] + t.sin();
                    Ok(())
                },
                &mut y,
                k as f64 * dt,
                dt,
            )
            .unwrap();
        }
        (y[0] - exact(2.0)).abs()
    };
    let ratio = err(0.1) / err(0.05);
    assert!((ratio - 16.0).abs() < 1.5, "error ratio {ratio}");
}

#[test]
fn estimator_subsystem_matches_matrix_exponential() {
    let sc = common::vehicles5(Variant::DisturbanceFree);
    let chk = common::estimator_against_expm(&sc, 0.5, 1e-4, 21);
    assert!(chk.max_err < 1e-7, "max error {:e}", chk.max_err);
    assert!(chk.rate >= 0.95 * chk.k3_lambda_min, "{} < 0.95·{}", chk.rate, chk.k3_lambda_min);
}

#[test]
fn expm_oracle_is_consistent() {
    use nalgebra::DMatrix;
    // Rotation generator: exp(θJ) is a rotation by θ.
    let j = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
    let r = common::expm(&(j * 0.7));
    assert!((r[(0, 0)] - 0.7f64.cos()).abs() < 1e-14);
    assert!((r[(1, 0)] - 0.7f64.sin()).abs() < 1e-14);
    let d = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![-40.0, 2.0]));
    let e = common::expm(&d);
    assert!((e[(0, 0)] - (-40.0f64).exp()).abs() < 1e-25);
    assert!((e[(1, 1)] / 2f64.exp() - 1.0).abs() < 1e-12);
}

#[test]
fn surrogate_is_nonnegative_and_zero_at_rest() {
    for variant in [Variant::Full, Variant::DisturbanceFree] {
        let sc = common::vehicles5(variant);
        let mut rng = common::rng(22);
        for _ in 0..200 {
            let s = common::random_state(sc.layout(), &mut rng, 10.0, 500.0);
            assert!(sc.lyapunov_surrogate(&s).unwrap() >= 0.0);
        }
        let rest = common::equilibrium_state(&sc);
        assert!(sc.lyapunov_surrogate(&rest).unwrap().abs() < 1e-24);
    }
}

#[test]
fn halving_the_step_leaves_the_final_state_unchanged() {
    let run = |variant: Variant, dt: f64, t_final: f64| {
        let mut cfg = vehicles5_config();
        cfg.variant = variant;
        cfg.integrator.dt = dt;
        cfg.integrator.t_final = t_final;
        cfg.integrator.stride = ((1e-2 / dt).round() as usize).max(1);
        let traj = cfg.build().unwrap().integrate().unwrap();
        traj.final_actions().to_vec()
    };
    let diff = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let a = run(Variant::DisturbanceFree, 1e-3, 50.0);
    let b = run(Variant::DisturbanceFree, 5e-4, 50.0);
    assert!(diff(&a, &b) < 1e-6, "disturbance-free: {:e}", diff(&a, &b));
    // With compensation the tanh layer needs the finer step to be resolved.
    let a = run(Variant::Full, 5e-4, 10.0);
    let b = run(Variant::Full, 2.5e-4, 10.0);
    assert!(diff(&a, &b) < 1e-6, "full: {:e}", diff(&a, &b));
}

#[test]
fn rate_fit_on_synthetic_series() {
    let times: Vec<f64> = (0..=2000).map(|k| k as f64 * 0.01).collect();
    let errs: Vec<f64> = times.iter().map(|t| 5.0 * (-2.0 * t).exp()).collect();
    let r = fit_exponential_rate(&times, &errs).unwrap();
    assert!((r - 2.0).abs() < 1e-3, "{r}");
    // Growing error gives a negative rate.
    let grow: Vec<f64> = times.iter().map(|t| (0.1 * t).exp()).collect();
    assert!(fit_exponential_rate(&times, &grow).unwrap() < 0.0);
    assert_eq!(fit_exponential_rate(&times, &vec![0.0; times.len()]), None);
}

#[test]
fn run_started_at_equilibrium_stays_there() {
    let mut cfg = vehicles5_config();
    cfg.variant = Variant::DisturbanceFree;
    cfg.initial.x = vec![-0.5; 10];
    cfg.initial.v = vec![0.0; 4];
    cfg.integrator.t_final = 1.0;
    let sc = cfg.build().unwrap();
    let (traj, summary) = run_scenario(&sc);
    let traj = traj.unwrap();
    assert_eq!(summary.final_err_2, Some(0.0));
    assert_eq!(summary.final_err_inf, Some(0.0));
    assert_eq!(summary.fitted_rate, None);
    assert!(traj.lyapunov.iter().all(|v| *v == 0.0));
}

#[test]
fn trajectory_records_stride_samples_and_final_step() {
    let mut cfg = pair2_config();
    cfg.integrator.dt = 1e-2;
    cfg.integrator.t_final = 1.05;
    cfg.integrator.stride = 10;
    let traj = cfg.build().unwrap().integrate().unwrap();
    assert_eq!(traj.times.len(), 1 + 10 + 1);
    assert!(traj.times.windows(2).all(|w| w[1] > w[0]));
    assert!((traj.times.last().unwrap() - 1.05).abs() < 1e-12);
    let mut csv = Vec::new();
    traj.write_csv(&mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), format!("# schema_version={SCHEMA_VERSION}"));
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(header.first(), Some(&"t"));
    assert_eq!(&header[header.len() - 3..], &["err_x", "err_v", "V"]);
    for line in lines.clone() {
        assert_eq!(line.split(',').count(), header.len());
    }
    assert_eq!(lines.count(), traj.times.len());
}

#[test]
fn oversized_step_is_reported_as_blow_up() {
    let mut cfg = vehicles5_config();
    cfg.integrator.dt = 0.05;
    cfg.integrator.t_final = 20.0;
    let sc = cfg.build().unwrap();
    assert!(sc.stiffness_warning().is_some());
    assert!(matches!(sc.integrate(), Err(Error::NonFiniteState { .. })));
    let (traj, summary) = run_scenario(&sc);
    assert!(traj.is_none());
    assert!(summary.blown_up);
    assert!(summary.blow_up_message.is_some());
}

#[test]
fn scenario_invariants_are_enforced() {
    let mut cfg = vehicles5_config();
    cfg.integrator.dt = 0.0;
    assert!(cfg.build().is_err());
    let mut cfg = vehicles5_config();
    cfg.integrator.t_final = 1e-4;
    assert!(cfg.build().is_err());
    let mut cfg = vehicles5_config();
    cfg.graph.n = 4;
    cfg.graph.edges = vec![[1, 2], [2, 3], [3, 4]];
    assert!(cfg.build().is_err());
    let mut cfg = vehicles5_config();
    cfg.graph.edges = vec![[1, 2], [3, 4]];
    let err = cfg.build().unwrap_err();
    assert!(matches!(&err, Error::Config { path, .. } if path == "graph.edges"), "{err}");
    let mut cfg = vehicles5_config();
    cfg.initial.x.pop();
    assert!(cfg.build().is_err());
}

#[test]
fn weight_cap_holds_along_a_full_run() {
    let mut cfg = vehicles5_config();
    cfg.integrator.t_final = 5.0;
    cfg.integrator.dt = 5e-4;
    cfg.integrator.stride = 1;
    let traj = cfg.build().unwrap().integrate().unwrap();
    let max = traj.weight_norms.iter().flatten().fold(0.0f64, |a, b| a.max(*b));
    assert!(max <= 500.0 + 1e-9, "{max}");
    assert!(traj.cap_clamps > 0, "the cap should be active on this run");
}
