//! Closed-loop assembly, fixed-step RK4 integration, trajectories and
//! convergence metrics.

use std::io::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::controller::{xbar, Controller, SeekerState, StateLayout, Variant};
use crate::error::{Error, Result};
use crate::game::{nash_oracle, DisturbanceModel, PlayerOrder};
use crate::graph::{diagnostic_p, estimator_matrix};
use crate::rbfnn;

/// Version tag of the trajectory CSV and summary JSON formats.
pub const SCHEMA_VERSION: u32 = 1;

/// Any state component larger than this in magnitude counts as a blow-up.
pub const BLOWUP_LIMIT: f64 = 1e12;

/// Largest `dt · κδ²/ε` accepted without a stiffness warning.
pub const DAMPING_STEP_LIMIT: f64 = 2.0;

/// Samples with an error below this floor are excluded from the rate fit.
pub const RATE_FIT_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorSettings {
    pub dt: f64,
    pub t_final: f64,
    /// Record one sample every `stride` steps.
    pub stride: usize,
}

impl Default for IntegratorSettings {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            t_final: 50.0,
            stride: 10,
        }
    }
}

impl IntegratorSettings {
    pub fn n_steps(&self) -> usize {
        (self.t_final / self.dt).round() as usize
    }
}

/// How the estimates `y_i(0)` are initialised.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimateInit {
    /// Every player starts from the true `x̄(0)`.
    #[default]
    Seeded,
    Zero,
    /// Explicit stacked `y(0)` of length `N·N·d`.
    Explicit(Vec<f64>),
}

/// Initial actions, velocities and auxiliary states. Weights start at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialConditions {
    /// Stacked `x(0)`, length `N·d`.
    pub x: Vec<f64>,
    /// Stacked velocities of the second-order players, in player order.
    pub v: Vec<f64>,
    /// Stacked `z(0)` of the first-order players; defaults to their `x(0)`.
    pub z: Option<Vec<f64>>,
    pub y: EstimateInit,
}

impl InitialConditions {
    pub fn build(&self, layout: Arc<StateLayout>) -> Result<SeekerState> {
        let d = layout.action_dim;
        let n_f = layout.first_order().count();
        let n_s = layout.n_players - n_f;
        let check = |got: usize, expected: usize, context: &'static str| {
            if got == expected {
                Ok(())
            } else {
                Err(Error::DimensionMismatch {
                    expected,
                    got,
                    context,
                })
            }
        };
        check(self.x.len(), layout.profile_dim(), "initial actions x(0)")?;
        check(self.v.len(), n_s * d, "initial velocities v_s(0)")?;
        if let Some(z) = &self.z {
            check(z.len(), n_f * d, "initial auxiliary states z_f(0)")?;
        }
        let mut s = SeekerState::zeros(layout.clone());
        s.as_mut_slice()[..layout.profile_dim()].copy_from_slice(&self.x);
        let (mut fi, mut si) = (0, 0);
        for i in 0..layout.n_players {
            match layout.orders[i] {
                PlayerOrder::First => {
                    let z0: Vec<f64> = match &self.z {
                        Some(z) => z[fi * d..(fi + 1) * d].to_vec(),
                        None => s.x(i).to_vec(),
                    };
                    s.aux_mut(i).copy_from_slice(&z0);
                    fi += 1;
                }
                PlayerOrder::Second => {
                    s.aux_mut(i).copy_from_slice(&self.v[si * d..(si + 1) * d]);
                    si += 1;
                }
            }
        }
        match &self.y {
            EstimateInit::Seeded => {
                let xb = xbar(&s);
                for i in 0..layout.n_players {
                    s.y_mut(i).copy_from_slice(xb.as_slice());
                }
            }
            EstimateInit::Zero => {}
            EstimateInit::Explicit(y) => {
                check(y.len(), layout.y_len(), "initial estimates y(0)")?;
                let off = layout.y_offset();
                s.as_mut_slice()[off..off + y.len()].copy_from_slice(y);
            }
        }
        Ok(s)
    }
}

/// A complete experiment: controller, plant disturbances, initial state and
/// integration settings. Construction precomputes `x*` (quadratic games)
/// and the diagnostic Lyapunov matrix `P`.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub controller: Controller,
    pub disturbances: Option<DisturbanceModel>,
    pub initial: SeekerState,
    pub integrator: IntegratorSettings,
    equilibrium: Option<DVector<f64>>,
    lyapunov_p: DMatrix<f64>,
    estimator_lambda: (f64, f64),
}

impl Scenario {
    pub fn new(
        name: impl Into<String>,
        controller: Controller,
        disturbances: Option<DisturbanceModel>,
        initial: SeekerState,
        integrator: IntegratorSettings,
    ) -> Result<Self> {
        let game = &controller.game;
        let n = game.n_players();
        let d = game.action_dim();
        if controller.graph.n_players() != n {
            return Err(Error::InvalidScenario(format!(
                "graph has {} nodes but the game has {n} players",
                controller.graph.n_players()
            )));
        }
        if !(integrator.dt > 0.0) || !integrator.dt.is_finite() {
            return Err(Error::InvalidScenario(format!("dt must be positive, got {}", integrator.dt)));
        }
        if !(integrator.t_final >= integrator.dt) {
            return Err(Error::InvalidScenario(format!(
                "t_final ({}) must be at least dt ({})",
                integrator.t_final, integrator.dt
            )));
        }
        if integrator.stride == 0 {
            return Err(Error::InvalidScenario("stride must be at least 1".into()));
        }
        controller.gains.validate()?;
        controller.rbf.validate()?;
        let layout = initial.layout();
        if layout.orders != game.orders() || layout.action_dim != d {
            return Err(Error::InvalidScenario(
                "initial state layout does not match the game".into(),
            ));
        }
        if controller.variant == Variant::Full {
            let Some(model) = &disturbances else {
                return Err(Error::InvalidScenario(
                    "the full variant requires a disturbance model (use `zero` for none)".into(),
                ));
            };
            if model.players.len() != n || model.action_dim != d {
                return Err(Error::InvalidScenario(format!(
                    "disturbance model `{}` does not match the game dimensions",
                    model.name
                )));
            }
            if controller.basis.input_dim() != n * d {
                return Err(Error::DimensionMismatch {
                    expected: n * d,
                    got: controller.basis.input_dim(),
                    context: "RBF centers must live in the estimate space",
                });
            }
            if layout.n_neurons != controller.basis.n_neurons() {
                return Err(Error::InvalidScenario(
                    "state layout neuron count does not match the RBF basis".into(),
                ));
            }
            for i in 0..n {
                let tr = initial.weight_norm_sq(i);
                if tr > controller.rbf.w_max {
                    return Err(Error::CapViolated {
                        trace: tr,
                        w_max: controller.rbf.w_max,
                    });
                }
            }
        }
        if !initial.all_finite() {
            return Err(Error::InvalidScenario("initial state has non-finite entries".into()));
        }
        let m = estimator_matrix(&controller.graph, d)?;
        let ev = m.eigenvalues();
        let lyapunov_p = diagnostic_p(&m)?;
        let equilibrium = match game.as_quadratic() {
            Some(q) => Some(nash_oracle(q)?),
            None => None,
        };
        Ok(Self {
            name: name.into(),
            controller,
            disturbances,
            initial,
            integrator,
            equilibrium,
            lyapunov_p,
            estimator_lambda: (ev[0], *ev.last().unwrap()),
        })
    }

    pub fn layout(&self) -> &Arc<StateLayout> {
        self.initial.layout()
    }

    pub fn equilibrium(&self) -> Option<&DVector<f64>> {
        self.equilibrium.as_ref()
    }

    pub fn lyapunov_p(&self) -> &DMatrix<f64> {
        &self.lyapunov_p
    }

    /// `(λ_min, λ_max)` of the estimator matrix.
    pub fn estimator_spectrum(&self) -> (f64, f64) {
        self.estimator_lambda
    }

    pub fn variant(&self) -> Variant {
        self.controller.variant
    }

    /// Warns when `dt` exceeds `0.5 / max(k₁, k₃λ_max(M), k₄)`.
    pub fn stiffness_warning(&self) -> Option<String> {
        let g = &self.controller.gains;
        let dt = self.integrator.dt;
        let fastest = g.k1.max(g.k3 * self.estimator_lambda.1).max(g.k4);
        let limit = 0.5 / fastest;
        if dt > limit {
            return Some(format!(
                "dt = {dt} exceeds the stability guideline 0.5/max(k1, k3*lambda_max, k4) = {limit:.3e}"
            ));
        }
        // The tanh damping layer has slope κδ²/ε at the origin; RK4 loses
        // accuracy well before its real-axis stability bound of ~2.785.
        if self.controller.variant == Variant::Full {
            let p = &self.controller.rbf;
            let slope = self.controller.kappa.value() * p.delta * p.delta / p.epsilon;
            if dt * slope > DAMPING_STEP_LIMIT {
                return Some(format!(
                    "dt = {dt} under-resolves the damping layer (slope {slope:.3e}); use dt <= {:.3e}",
                    DAMPING_STEP_LIMIT / slope
                ));
            }
        }
        None
    }

    /// Time derivative of the full closed-loop state at time `t`.
    ///
    /// Unknown dynamics act on the true profile `x`, not on estimates.
    pub fn closed_loop_derivative(&self, state: &SeekerState, t: f64, out: &mut [f64]) -> Result<()> {
        let layout = state.layout();
        if out.len() != layout.len() {
            return Err(Error::DimensionMismatch {
                expected: layout.len(),
                got: out.len(),
                context: "state derivative buffer",
            });
        }
        let d = layout.action_dim;
        let ctrl = &self.controller;
        let mut plant = vec![0.0; d];
        for i in 0..layout.n_players {
            let sig = ctrl.signals(i, state)?;
            match (ctrl.variant, &self.disturbances) {
                (Variant::Full, Some(model)) => model.evaluate(i, state.actions(), t, &mut plant),
                _ => plant.fill(0.0),
            }
            let xr = layout.x_range(i);
            let ar = layout.aux_range(i);
            match layout.orders[i] {
                PlayerOrder::First => {
                    for c in 0..d {
                        out[xr.start + c] = sig.control[c] + plant[c];
                        out[ar.start + c] = -ctrl.gains.k2 * sig.gradient[c];
                    }
                }
                PlayerOrder::Second => {
                    let v = state.aux(i);
                    for c in 0..d {
                        out[xr.start + c] = v[c];
                        out[ar.start + c] = sig.control[c] + plant[c];
                    }
                }
            }
            ctrl.estimator_derivative(i, state, &mut out[layout.y_range(i)]);
            ctrl.weight_derivative(i, state, &sig, &mut out[layout.w_range(i)])?;
        }
        if let Some(component) = out.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteDerivative { component });
        }
        Ok(())
    }

    /// `V = ½‖x̄−x*‖² + ½‖v̄_s‖² + ½‖x_f−z_f‖² + (y−𝟙⊗x̄)ᵀP(y−𝟙⊗x̄)`,
    /// plus `(2β)⁻¹ Σ tr(Ŵ_iᵀŴ_i)` in the full variant.
    pub fn lyapunov_surrogate(&self, state: &SeekerState) -> Result<f64> {
        let x_star = self.equilibrium.as_ref().ok_or(Error::NoKnownEquilibrium)?;
        let layout = state.layout();
        let ctrl = &self.controller;
        let xb = xbar(state);
        let mut v = 0.5 * (&xb - x_star).norm_squared();
        for i in layout.second_order() {
            let vbar = ctrl.regulation_signal(i, state);
            v += 0.5 * vbar.iter().map(|e| e * e).sum::<f64>();
        }
        for i in layout.first_order() {
            v += 0.5 * state.x(i).iter().zip(state.aux(i)).map(|(x, z)| (x - z).powi(2)).sum::<f64>();
        }
        let p = layout.profile_dim();
        let e = DVector::from_iterator(
            layout.y_len(),
            state.y_all().iter().enumerate().map(|(k, y)| y - xb[k % p]),
        );
        v += e.dot(&(&self.lyapunov_p * &e));
        if ctrl.variant == Variant::Full {
            let w: f64 = (0..layout.n_players).map(|i| state.weight_norm_sq(i)).sum();
            v += w / (2.0 * ctrl.rbf.beta);
        }
        Ok(v)
    }

    /// Fixed-step classical RK4 over `[0, t_final]`.
    pub fn integrate(&self) -> Result<Trajectory> {
        let layout = self.layout().clone();
        let settings = self.integrator;
        let steps = settings.n_steps().max(1);
        let dt = settings.dt;
        let mut state = self.initial.clone();
        let mut rk = Rk4::new(&state);
        let mut traj = Trajectory::new(self, steps / settings.stride + 2);
        traj.record(self, 0.0, &state)?;
        for step in 0..steps {
            let t = step as f64 * dt;
            rk.step(|s, t, out| self.closed_loop_derivative(s, t, out), &mut state, t, dt)?;
            if self.controller.variant == Variant::Full {
                for i in 0..layout.n_players {
                    if rbfnn::clamp_to_cap(state.weights_mut(i), self.controller.rbf.w_max) {
                        traj.cap_clamps += 1;
                    }
                }
            }
            let t_next = (step + 1) as f64 * dt;
            if let Some((component, value)) = state
                .as_slice()
                .iter()
                .enumerate()
                .find(|(_, v)| !v.is_finite() || v.abs() > BLOWUP_LIMIT)
                .map(|(c, v)| (c, *v))
            {
                return Err(Error::NonFiniteState {
                    t: t_next,
                    component,
                    value,
                });
            }
            if (step + 1) % settings.stride == 0 || step + 1 == steps {
                traj.record(self, t_next, &state)?;
            }
        }
        Ok(traj)
    }
}

/// Workspace for classical fixed-step fourth-order Runge–Kutta on `ẏ = f(y, t)`.
///
/// ```
/// use mixnash::sim::Rk4;
/// let mut y = vec![1.0];
/// let mut rk = Rk4::new(&y);
/// for k in 0..100 {
///     rk.step(|y: &Vec<f64>, _t, out: &mut [f64]| { out[0] = -y[0]; Ok(()) }, &mut y, k as f64 * 0.01, 0.01)
///         .unwrap();
/// }
/// assert!((y[0] - (-1.0f64).exp()).abs() < 1e-8);
/// ```
#[derive(Debug, Clone)]
pub struct Rk4<S> {
    stage: S,
    k: [Vec<f64>; 4],
}

impl<S: AsRef<[f64]> + AsMut<[f64]> + Clone> Rk4<S> {
    pub fn new(template: &S) -> Self {
        let n = template.as_ref().len();
        Self {
            stage: template.clone(),
            k: [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]],
        }
    }

    /// Advance `state` from `t` to `t + dt`.
    pub fn step<F>(&mut self, mut f: F, state: &mut S, t: f64, dt: f64) -> Result<()>
    where
        F: FnMut(&S, f64, &mut [f64]) -> Result<()>,
    {
        let [k1, k2, k3, k4] = &mut self.k;
        let stage = &mut self.stage;
        let offset = |stage: &mut S, base: &S, h: f64, k: &[f64]| {
            for ((s, x), kv) in stage.as_mut().iter_mut().zip(base.as_ref()).zip(k) {
                *s = x + h * kv;
            }
        };
        f(state, t, k1)?;
        offset(stage, state, 0.5 * dt, k1);
        f(stage, t + 0.5 * dt, k2)?;
        offset(stage, state, 0.5 * dt, k2);
        f(stage, t + 0.5 * dt, k3)?;
        offset(stage, state, dt, k3);
        f(stage, t + dt, k4)?;
        for (idx, x) in state.as_mut().iter_mut().enumerate() {
            *x += dt / 6.0 * (k1[idx] + 2.0 * k2[idx] + 2.0 * k3[idx] + k4[idx]);
        }
        Ok(())
    }
}

/// Recorded time series of one run.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub layout: Arc<StateLayout>,
    pub times: Vec<f64>,
    /// Full flat state at each recorded time.
    pub states: Vec<Vec<f64>>,
    /// `trace(Ŵ_iᵀŴ_i)` per player per sample.
    pub weight_norms: Vec<Vec<f64>>,
    /// `‖x − x*‖₂` (NaN without a known equilibrium).
    pub err_x: Vec<f64>,
    /// `‖v_s‖₂`.
    pub err_v: Vec<f64>,
    /// Lyapunov surrogate (NaN without a known equilibrium).
    pub lyapunov: Vec<f64>,
    /// Number of post-step radial rescales of the weights.
    pub cap_clamps: usize,
    equilibrium: Option<DVector<f64>>,
}

impl Trajectory {
    fn new(scenario: &Scenario, capacity: usize) -> Self {
        Self {
            layout: scenario.layout().clone(),
            times: Vec::with_capacity(capacity),
            states: Vec::with_capacity(capacity),
            weight_norms: Vec::with_capacity(capacity),
            err_x: Vec::with_capacity(capacity),
            err_v: Vec::with_capacity(capacity),
            lyapunov: Vec::with_capacity(capacity),
            cap_clamps: 0,
            equilibrium: scenario.equilibrium.clone(),
        }
    }

    fn record(&mut self, scenario: &Scenario, t: f64, state: &SeekerState) -> Result<()> {
        let l = &self.layout;
        if let Some(t_prev) = self.times.last() {
            debug_assert!(t > *t_prev);
        }
        self.times.push(t);
        self.weight_norms
            .push((0..l.n_players).map(|i| state.weight_norm_sq(i)).collect());
        let err_x = match &self.equilibrium {
            Some(xs) => state
                .actions()
                .iter()
                .zip(xs.iter())
                .map(|(x, s)| (x - s).powi(2))
                .sum::<f64>()
                .sqrt(),
            None => f64::NAN,
        };
        self.err_x.push(err_x);
        let err_v = l
            .second_order()
            .flat_map(|i| state.aux(i).iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        self.err_v.push(err_v);
        let v = match scenario.lyapunov_surrogate(state) {
            Ok(v) => v,
            Err(Error::NoKnownEquilibrium) => f64::NAN,
            Err(e) => return Err(e),
        };
        self.lyapunov.push(v);
        self.states.push(state.as_slice().to_vec());
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_state(&self) -> SeekerState {
        SeekerState::from_vec(self.layout.clone(), self.states.last().expect("non-empty").clone())
            .expect("recorded state matches layout")
    }

    /// Final action profile `x(T)`.
    pub fn final_actions(&self) -> &[f64] {
        &self.states.last().expect("non-empty")[..self.layout.profile_dim()]
    }

    pub fn csv_header(&self) -> String {
        let l = &self.layout;
        let d = l.action_dim;
        let mut cols = vec!["t".to_string()];
        for i in 0..l.n_players {
            for c in 0..d {
                cols.push(format!("x_{}_{}", i + 1, c + 1));
            }
        }
        for i in l.second_order() {
            for c in 0..d {
                cols.push(format!("v_{}_{}", i + 1, c + 1));
            }
        }
        for i in l.first_order() {
            for c in 0..d {
                cols.push(format!("z_{}_{}", i + 1, c + 1));
            }
        }
        for i in 0..l.n_players {
            cols.push(format!("wnorm_{}", i + 1));
        }
        cols.extend(["err_x", "err_v", "V"].map(String::from));
        cols.join(",")
    }

    /// CSV export: a `# schema_version=N` comment line, the header, then one
    /// row per recorded sample.
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        let l = &self.layout;
        writeln!(w, "# schema_version={SCHEMA_VERSION}")?;
        writeln!(w, "{}", self.csv_header())?;
        let mut row = String::new();
        for (k, t) in self.times.iter().enumerate() {
            row.clear();
            let s = &self.states[k];
            let mut push = |v: f64| {
                row.push(',');
                row.push_str(&format_float(v));
            };
            for v in &s[..l.profile_dim()] {
                push(*v);
            }
            for i in l.second_order() {
                for v in &s[l.aux_range(i)] {
                    push(*v);
                }
            }
            for i in l.first_order() {
                for v in &s[l.aux_range(i)] {
                    push(*v);
                }
            }
            for v in &self.weight_norms[k] {
                push(*v);
            }
            push(self.err_x[k]);
            push(self.err_v[k]);
            push(self.lyapunov[k]);
            writeln!(w, "{}{}", format_float(*t), row)?;
        }
        Ok(())
    }
}

fn format_float(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else {
        format!("{v:e}")
    }
}

/// Least-squares slope of `−log(err)` against time.
///
/// The fit window is the last half of the informative horizon: the span up
/// to the last sample whose error is still above [`RATE_FIT_FLOOR`]. For
/// runs that never reach the floor this is the last half of the run.
/// `None` when fewer than three usable samples remain.
pub fn fit_exponential_rate(times: &[f64], errors: &[f64]) -> Option<f64> {
    let usable = |e: f64| e.is_finite() && e > RATE_FIT_FLOOR;
    let last = times.iter().zip(errors).rposition(|(_, e)| usable(*e))?;
    let t_end = times[last];
    let t_half = times[0] + 0.5 * (t_end - times[0]);
    let pts: Vec<(f64, f64)> = times[..=last]
        .iter()
        .zip(errors)
        .filter(|(t, e)| **t >= t_half && usable(**e))
        .map(|(t, e)| (*t, e.ln()))
        .collect();
    if pts.len() < 3 {
        return None;
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    if sxx <= 0.0 {
        return None;
    }
    Some(-sxy / sxx)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeToTolerance {
    pub tolerance: f64,
    /// Earliest recorded time after which `‖x − x*‖₂` stays below the
    /// tolerance; `None` if never.
    pub time: Option<f64>,
}

/// Run summary, exported as `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub schema_version: u32,
    pub scenario: String,
    pub variant: Variant,
    pub blown_up: bool,
    pub t_final: Option<f64>,
    pub final_err_2: Option<f64>,
    pub final_err_inf: Option<f64>,
    pub final_vnorm: Option<f64>,
    /// Mean `‖x − x*‖₂` over the last 10% of the run.
    pub final_window_mean_err: Option<f64>,
    pub fitted_rate: Option<f64>,
    pub max_wnorm: Option<f64>,
    pub time_to_tolerance: Vec<TimeToTolerance>,
    pub cap_clamps: usize,
    pub blow_up_message: Option<String>,
}

pub const DEFAULT_TOLERANCES: [f64; 3] = [1e-1, 1e-2, 1e-3];

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

/// Summary metrics of a completed run.
pub fn metrics(
    scenario_name: &str,
    variant: Variant,
    traj: &Trajectory,
    x_star: Option<&DVector<f64>>,
    tolerances: &[f64],
) -> Summary {
    assert!(!traj.is_empty(), "metrics need a non-empty trajectory");
    let last = traj.len() - 1;
    let t_end = traj.times[last];
    let errors: Vec<f64> = match x_star {
        Some(xs) => traj
            .states
            .iter()
            .map(|s| {
                s[..traj.layout.profile_dim()]
                    .iter()
                    .zip(xs.iter())
                    .map(|(x, y)| (x - y).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .collect(),
        None => vec![f64::NAN; traj.len()],
    };
    let final_err_inf = x_star.map(|xs| {
        traj.final_actions()
            .iter()
            .zip(xs.iter())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    });
    let window_start = traj.times[0] + 0.9 * (t_end - traj.times[0]);
    let window: Vec<f64> = traj
        .times
        .iter()
        .zip(&errors)
        .filter(|(t, _)| **t >= window_start)
        .map(|(_, e)| *e)
        .collect();
    let window_mean = window.iter().sum::<f64>() / window.len() as f64;
    let time_to_tolerance = tolerances
        .iter()
        .map(|&tol| {
            let time = match errors.iter().rposition(|e| !(*e <= tol)) {
                None => Some(traj.times[0]),
                Some(k) if k == last => None,
                Some(k) => Some(traj.times[k + 1]),
            };
            TimeToTolerance {
                tolerance: tol,
                time,
            }
        })
        .collect();
    let max_wnorm = traj
        .weight_norms
        .iter()
        .flat_map(|w| w.iter().copied())
        .fold(0.0, f64::max);
    Summary {
        schema_version: SCHEMA_VERSION,
        scenario: scenario_name.to_string(),
        variant,
        blown_up: false,
        t_final: Some(t_end),
        final_err_2: finite(errors[last]),
        final_err_inf: final_err_inf.and_then(finite),
        final_vnorm: finite(traj.err_v[last]),
        final_window_mean_err: finite(window_mean),
        fitted_rate: fit_exponential_rate(&traj.times, &errors),
        max_wnorm: Some(max_wnorm),
        time_to_tolerance,
        cap_clamps: traj.cap_clamps,
        blow_up_message: None,
    }
}

impl Summary {
    /// Summary of a run that diverged.
    pub fn blown_up(scenario_name: &str, variant: Variant, message: String) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            scenario: scenario_name.to_string(),
            variant,
            blown_up: true,
            t_final: None,
            final_err_2: None,
            final_err_inf: None,
            final_vnorm: None,
            final_window_mean_err: None,
            fitted_rate: None,
            max_wnorm: None,
            time_to_tolerance: Vec::new(),
            cap_clamps: 0,
            blow_up_message: Some(message),
        }
    }
}

/// Integrates and summarises a scenario; a blow-up becomes a summary with
/// `blown_up = true` and no trajectory.
pub fn run_scenario(scenario: &Scenario) -> (Option<Trajectory>, Summary) {
    match scenario.integrate() {
        Ok(traj) => {
            let summary = metrics(
                &scenario.name,
                scenario.variant(),
                &traj,
                scenario.equilibrium(),
                &DEFAULT_TOLERANCES,
            );
            (Some(traj), summary)
        }
        Err(e) => (None, Summary::blown_up(&scenario.name, scenario.variant(), e.to_string())),
    }
}
