#![allow(dead_code)]

use std::sync::Arc;

use mixnash::config::vehicles5_config;
use mixnash::controller::{SeekerState, StateLayout, Variant};
use mixnash::sim::Scenario;
use nalgebra::DMatrix;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

pub fn rng(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}

pub fn vehicles5(variant: Variant) -> Scenario {
    let mut cfg = vehicles5_config();
    cfg.variant = variant;
    cfg.build().unwrap()
}

/// Random state with actions and estimates in `[-scale, scale]` and weights
/// strictly inside the cap.
pub fn random_state(layout: &Arc<StateLayout>, rng: &mut StdRng, scale: f64, w_max: f64) -> SeekerState {
    let mut s = SeekerState::zeros(layout.clone());
    let w0 = layout.w_offset();
    for (k, v) in s.as_mut_slice().iter_mut().enumerate() {
        *v = if k < w0 {
            rng.random_range(-scale..scale)
        } else {
            rng.random_range(-1.0..1.0)
        };
    }
    for i in 0..layout.n_players {
        let w = s.weights_mut(i);
        let tr: f64 = w.iter().map(|x| x * x).sum();
        let target = rng.random_range(0.0..0.9) * w_max;
        if tr > 0.0 {
            let f = (target / tr).sqrt();
            w.iter_mut().for_each(|x| *x *= f);
        }
    }
    s
}

/// State sitting at the equilibrium: `x = z = x*`, `v = 0`, `y_i = x*`, `Ŵ = 0`.
pub fn equilibrium_state(sc: &Scenario) -> SeekerState {
    let layout = sc.layout().clone();
    let xs = sc.equilibrium().unwrap();
    let d = layout.action_dim;
    let mut s = SeekerState::zeros(layout.clone());
    for i in 0..layout.n_players {
        s.x_mut(i).copy_from_slice(&xs.as_slice()[i * d..(i + 1) * d]);
        s.y_mut(i).copy_from_slice(xs.as_slice());
    }
    for i in layout.first_order().collect::<Vec<_>>() {
        s.aux_mut(i).copy_from_slice(&xs.as_slice()[i * d..(i + 1) * d]);
    }
    s
}

/// Five-vehicle costs written out by hand:
/// `f_i = i‖x_i‖² + i(x_i1 + x_i2) + i + Σ_{j∈C_i} ‖x_i − x_j‖²`.
pub fn vehicles5_cost(i: usize, x: &[f64]) -> f64 {
    let couplings: [&[usize]; 5] = [&[1], &[2], &[1], &[1, 4], &[0]];
    let xi = &x[2 * i..2 * i + 2];
    let w = (i + 1) as f64;
    let mut f = w * (xi[0] * xi[0] + xi[1] * xi[1]) + w * (xi[0] + xi[1]) + w;
    for &j in couplings[i] {
        let xj = &x[2 * j..2 * j + 2];
        f += (xi[0] - xj[0]).powi(2) + (xi[1] - xj[1]).powi(2);
    }
    f
}

/// Matrix exponential by scaling and squaring with a degree-18 Taylor
/// polynomial; adequate for the small, well-scaled matrices in the tests.
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let norm = a.iter().map(|v| v.abs()).fold(0.0, f64::max) * n as f64;
    let mut s = 0;
    while norm / 2f64.powi(s) > 0.5 {
        s += 1;
    }
    let scaled = a / 2f64.powi(s);
    let mut term = DMatrix::identity(n, n);
    let mut sum = DMatrix::identity(n, n);
    for k in 1..=18 {
        term = &term * &scaled / k as f64;
        sum += &term;
    }
    for _ in 0..s {
        sum = &sum * &sum;
    }
    sum
}

/// Fixed point of `κ = e^{−(κ+1)}` by Newton's method on `κ − e^{−(κ+1)}`.
pub fn kappa_newton() -> f64 {
    let mut k = 0.3f64;
    for _ in 0..50 {
        let e = (-(k + 1.0)).exp();
        k -= (k - e) / (1.0 + e);
    }
    k
}

pub struct EstimatorCheck {
    /// Largest `|y_rk4(t) − y_expm(t)|` over the sampled times.
    pub max_err: f64,
    /// Least-squares decay rate of `log‖y − 𝟙⊗x̄‖` over the second half.
    pub rate: f64,
    pub k3_lambda_min: f64,
}

/// Integrates the estimator alone, with `x̄` frozen at the scenario's
/// initial value and estimates started from a perturbation, and compares it
/// with `1⊗x̄ + exp(−k₃M t)(y₀ − 1⊗x̄)`.
pub fn estimator_against_expm(sc: &Scenario, t_end: f64, dt: f64, seed: u64) -> EstimatorCheck {
    use mixnash::controller::xbar;
    use mixnash::graph::estimator_matrix;
    use mixnash::sim::Rk4;
    use nalgebra::DVector;

    let layout = sc.layout().clone();
    let p = layout.profile_dim();
    let ny = layout.y_len();
    let y0 = layout.y_offset();
    let ctrl = &sc.controller;
    let k3 = ctrl.gains.k3;
    let m = estimator_matrix(&ctrl.graph, layout.action_dim).unwrap();
    let mut rng = rng(seed);
    let mut state = sc.initial.clone();
    state.as_mut_slice()[y0..y0 + ny].iter_mut().for_each(|v| *v = rng.random_range(-10.0..10.0));
    let xb = xbar(&state);
    let target = DVector::from_iterator(ny, (0..ny).map(|k| xb[k % p]));
    let e0 = DVector::from_column_slice(&state.as_slice()[y0..y0 + ny]) - &target;

    let mut rk = Rk4::new(&state);
    let steps = (t_end / dt).round() as usize;
    let mut max_err = 0.0f64;
    let mut samples = Vec::new();
    for step in 0..steps {
        rk.step(
            |s, _t, out| {
                out.fill(0.0);
                for i in 0..layout.n_players {
                    let r = layout.y_range(i);
                    ctrl.estimator_derivative(i, s, &mut out[r]);
                }
                Ok(())
            },
            &mut state,
            step as f64 * dt,
            dt,
        )
        .unwrap();
        if (step + 1) % 10 == 0 {
            let t = (step + 1) as f64 * dt;
            let exact = &target + expm(&(m.matrix() * (-k3 * t))) * &e0;
            let y = &state.as_slice()[y0..y0 + ny];
            let err = y.iter().zip(exact.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            max_err = max_err.max(err);
            let dev: f64 = y.iter().zip(target.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            samples.push((t, dev));
        }
    }
    let half: Vec<(f64, f64)> = samples[samples.len() / 2..].iter().map(|(t, e)| (*t, e.ln())).collect();
    let n = half.len() as f64;
    let mt = half.iter().map(|p| p.0).sum::<f64>() / n;
    let ml = half.iter().map(|p| p.1).sum::<f64>() / n;
    let slope = half.iter().map(|p| (p.0 - mt) * (p.1 - ml)).sum::<f64>()
        / half.iter().map(|p| (p.0 - mt).powi(2)).sum::<f64>();
    EstimatorCheck {
        max_err,
        rate: -slope,
        k3_lambda_min: k3 * m.lambda_min(),
    }
}
