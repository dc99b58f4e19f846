//! Nash-seeking control laws, the auxiliary gradient-play dynamics and the
//! distributed consensus estimator.
//!
//! Every quantity computed for player `i` depends only on player `i`'s own
//! state, the estimates `y_k` of its graph neighbours, and `x̄_j` for the
//! players `j` it is directly connected to.

use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{GameDefinition, PlayerOrder};
use crate::graph::CommGraph;
use crate::rbfnn::{self, RbfBasis, RbfParams, TanhConstant};

/// Positive feedback gains of the seeking laws.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Gains {
    /// Regulation of `x_i` towards `z_i` (first-order players).
    pub k1: f64,
    /// Gradient-play step.
    pub k2: f64,
    /// Consensus estimator gain.
    pub k3: f64,
    /// Velocity damping (second-order players).
    pub k4: f64,
}

impl Default for Gains {
    fn default() -> Self {
        Self {
            k1: 30.0,
            k2: 2.0,
            k3: 40.0,
            k4: 60.0,
        }
    }
}

impl Gains {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("k1", self.k1), ("k2", self.k2), ("k3", self.k3), ("k4", self.k4)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidScenario(format!("gain {name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            k1: self.k1 * s,
            k2: self.k2 * s,
            k3: self.k3 * s,
            k4: self.k4 * s,
        }
    }
}

/// Which closed loop to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Neural compensation and damping active; unknown dynamics and
    /// disturbances act on the players.
    Full,
    /// Neither disturbances nor compensation.
    DisturbanceFree,
}

impl std::str::FromStr for Variant {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "full" => Ok(Variant::Full),
            "disturbance_free" | "disturbance-free" => Ok(Variant::DisturbanceFree),
            other => Err(format!("unknown variant `{other}` (expected full or disturbance_free)")),
        }
    }
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::DisturbanceFree => "disturbance_free",
        }
    }
}

/// Offsets into the flat state vector.
///
/// Layout: `x_1..x_N` (each `d`), then one auxiliary block per player
/// (`z_i` for first-order, `v_i` for second-order, each `d`), then the
/// stacked estimates `y_1..y_N` (each `N·d`), then the weight estimates
/// `Ŵ_1..Ŵ_N` (each column-major `q × d`).
#[derive(Debug, Clone, PartialEq)]
pub struct StateLayout {
    pub n_players: usize,
    pub action_dim: usize,
    pub n_neurons: usize,
    pub orders: Vec<PlayerOrder>,
}

impl StateLayout {
    pub fn new(orders: Vec<PlayerOrder>, action_dim: usize, n_neurons: usize) -> Self {
        Self {
            n_players: orders.len(),
            action_dim,
            n_neurons,
            orders,
        }
    }

    pub fn profile_dim(&self) -> usize {
        self.n_players * self.action_dim
    }
    fn aux_offset(&self) -> usize {
        self.profile_dim()
    }
    pub fn y_offset(&self) -> usize {
        2 * self.profile_dim()
    }
    pub fn y_len(&self) -> usize {
        self.n_players * self.profile_dim()
    }
    pub fn w_offset(&self) -> usize {
        self.y_offset() + self.y_len()
    }
    pub fn w_len(&self) -> usize {
        self.n_neurons * self.action_dim
    }
    pub fn len(&self) -> usize {
        self.w_offset() + self.n_players * self.w_len()
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn x_range(&self, i: usize) -> std::ops::Range<usize> {
        let d = self.action_dim;
        i * d..(i + 1) * d
    }
    pub fn aux_range(&self, i: usize) -> std::ops::Range<usize> {
        let d = self.action_dim;
        self.aux_offset() + i * d..self.aux_offset() + (i + 1) * d
    }
    pub fn y_range(&self, i: usize) -> std::ops::Range<usize> {
        let p = self.profile_dim();
        self.y_offset() + i * p..self.y_offset() + (i + 1) * p
    }
    pub fn w_range(&self, i: usize) -> std::ops::Range<usize> {
        let w = self.w_len();
        self.w_offset() + i * w..self.w_offset() + (i + 1) * w
    }

    pub fn first_order(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_players).filter(|&i| self.orders[i] == PlayerOrder::First)
    }
    pub fn second_order(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_players).filter(|&i| self.orders[i] == PlayerOrder::Second)
    }
}

/// Full closed-loop state of all players, stored flat for the integrator.
#[derive(Debug, Clone, PartialEq)]
pub struct SeekerState {
    layout: Arc<StateLayout>,
    data: Vec<f64>,
}

impl AsRef<[f64]> for SeekerState {
    fn as_ref(&self) -> &[f64] {
        &self.data
    }
}

impl AsMut<[f64]> for SeekerState {
    fn as_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

impl SeekerState {
    pub fn zeros(layout: Arc<StateLayout>) -> Self {
        let data = vec![0.0; layout.len()];
        Self { layout, data }
    }

    pub fn from_vec(layout: Arc<StateLayout>, data: Vec<f64>) -> Result<Self> {
        if data.len() != layout.len() {
            return Err(Error::DimensionMismatch {
                expected: layout.len(),
                got: data.len(),
                context: "flat seeker state",
            });
        }
        Ok(Self { layout, data })
    }

    pub fn layout(&self) -> &Arc<StateLayout> {
        &self.layout
    }
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }
    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// The true action profile `x`.
    pub fn actions(&self) -> &[f64] {
        &self.data[..self.layout.profile_dim()]
    }
    pub fn x(&self, i: usize) -> &[f64] {
        &self.data[self.layout.x_range(i)]
    }
    pub fn x_mut(&mut self, i: usize) -> &mut [f64] {
        let r = self.layout.x_range(i);
        &mut self.data[r]
    }
    /// `z_i`, or `v_i` for a second-order player.
    pub fn aux(&self, i: usize) -> &[f64] {
        &self.data[self.layout.aux_range(i)]
    }
    pub fn aux_mut(&mut self, i: usize) -> &mut [f64] {
        let r = self.layout.aux_range(i);
        &mut self.data[r]
    }
    pub fn z(&self, i: usize) -> Option<&[f64]> {
        (self.layout.orders[i] == PlayerOrder::First).then(|| self.aux(i))
    }
    pub fn v(&self, i: usize) -> Option<&[f64]> {
        (self.layout.orders[i] == PlayerOrder::Second).then(|| self.aux(i))
    }
    /// Player `i`'s estimate of `x̄` (length `N·d`).
    pub fn y(&self, i: usize) -> &[f64] {
        &self.data[self.layout.y_range(i)]
    }
    pub fn y_mut(&mut self, i: usize) -> &mut [f64] {
        let r = self.layout.y_range(i);
        &mut self.data[r]
    }
    pub fn y_all(&self) -> &[f64] {
        let l = &self.layout;
        &self.data[l.y_offset()..l.y_offset() + l.y_len()]
    }
    /// Column-major `q × d` weight estimate of player `i`.
    pub fn weights(&self, i: usize) -> &[f64] {
        &self.data[self.layout.w_range(i)]
    }
    pub fn weights_mut(&mut self, i: usize) -> &mut [f64] {
        let r = self.layout.w_range(i);
        &mut self.data[r]
    }
    pub fn weight_norm_sq(&self, i: usize) -> f64 {
        self.weights(i).iter().map(|w| w * w).sum()
    }

    /// `x̄_j`: `z_j` for first-order players, `x_j` for second-order players.
    pub fn xbar_block(&self, j: usize) -> &[f64] {
        match self.layout.orders[j] {
            PlayerOrder::First => self.aux(j),
            PlayerOrder::Second => self.x(j),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Reference profile `x̄` tracked by the estimators.
pub fn xbar(state: &SeekerState) -> DVector<f64> {
    let l = state.layout();
    let mut out = DVector::zeros(l.profile_dim());
    for j in 0..l.n_players {
        out.as_mut_slice()[l.x_range(j)].copy_from_slice(state.xbar_block(j));
    }
    out
}

/// `ẏ_ij = −k₃ (Σ_k a_ik (y_ij − y_kj) + a_ij (y_ij − x̄_j))`, for all `j`.
pub fn estimator_derivative(i: usize, state: &SeekerState, graph: &CommGraph, k3: f64, out: &mut [f64]) {
    let l = state.layout();
    let d = l.action_dim;
    let yi = state.y(i);
    out.fill(0.0);
    for k in graph.neighbors(i) {
        let yk = state.y(k);
        for (o, (a, b)) in out.iter_mut().zip(yi.iter().zip(yk)) {
            *o += a - b;
        }
    }
    for j in graph.neighbors(i) {
        let xb = state.xbar_block(j);
        for c in 0..d {
            out[j * d + c] += yi[j * d + c] - xb[c];
        }
    }
    out.iter_mut().for_each(|o| *o *= -k3);
}

/// Everything player `i`'s controller computes at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct PlayerSignals {
    /// `∇_i f_i(y_i)`.
    pub gradient: Vec<f64>,
    /// Regulation signal: `x_i − z_i` or `v̄_i = k₂∇_i f_i(y_i) + v_i`.
    pub regulation: Vec<f64>,
    /// `S_i(y_i)` (empty in the disturbance-free variant).
    pub activation: Vec<f64>,
    /// `Ŵ_iᵀ S_i(y_i)`.
    pub compensation: Vec<f64>,
    /// `φ_i`.
    pub damping: Vec<f64>,
    /// Control input `u_i`.
    pub control: Vec<f64>,
}

/// Controller configuration shared by all players.
#[derive(Clone)]
pub struct Controller {
    pub game: Arc<dyn GameDefinition>,
    pub graph: CommGraph,
    pub gains: Gains,
    pub basis: RbfBasis,
    pub rbf: RbfParams,
    pub kappa: TanhConstant,
    pub variant: Variant,
}

impl std::fmt::Debug for Controller {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Controller")
            .field("graph", &self.graph)
            .field("gains", &self.gains)
            .field("rbf", &self.rbf)
            .field("variant", &self.variant)
            .finish_non_exhaustive()
    }
}

impl Controller {
    fn order_check(&self, i: usize, expected: PlayerOrder) -> Result<()> {
        if self.game.orders()[i] == expected {
            Ok(())
        } else {
            Err(Error::WrongOrder {
                player: i + 1,
                expected: expected.as_str(),
            })
        }
    }

    /// `∇_i f_i` evaluated at player `i`'s own estimate `y_i`.
    pub fn estimated_gradient(&self, i: usize, state: &SeekerState) -> Vec<f64> {
        let mut g = vec![0.0; state.layout().action_dim];
        self.game.own_gradient(i, state.y(i), &mut g);
        g
    }

    /// `x_i − z_i` for first-order players, `k₂∇_i f_i(y_i) + v_i` otherwise.
    pub fn regulation_signal(&self, i: usize, state: &SeekerState) -> Vec<f64> {
        let grad = self.estimated_gradient(i, state);
        self.regulation_from_gradient(i, state, &grad)
    }

    fn regulation_from_gradient(&self, i: usize, state: &SeekerState, grad: &[f64]) -> Vec<f64> {
        let x = state.x(i);
        let aux = state.aux(i);
        match self.game.orders()[i] {
            PlayerOrder::First => x.iter().zip(aux).map(|(x, z)| x - z).collect(),
            PlayerOrder::Second => aux
                .iter()
                .zip(grad)
                .map(|(v, g)| self.gains.k2 * g + v)
                .collect(),
        }
    }

    /// All of player `i`'s controller signals.
    pub fn signals(&self, i: usize, state: &SeekerState) -> Result<PlayerSignals> {
        let d = state.layout().action_dim;
        let gradient = self.estimated_gradient(i, state);
        let regulation = self.regulation_from_gradient(i, state, &gradient);
        let (activation, compensation, damping) = match self.variant {
            Variant::DisturbanceFree => (Vec::new(), vec![0.0; d], vec![0.0; d]),
            Variant::Full => {
                let q = self.basis.n_neurons();
                let mut s = vec![0.0; q];
                self.basis.activation_into(state.y(i), &mut s)?;
                let w = state.weights(i);
                let comp: Vec<f64> = (0..d)
                    .map(|c| (0..q).map(|k| w[c * q + k] * s[k]).sum())
                    .collect();
                let phi = rbfnn::damping_phi(&regulation, self.rbf.delta, self.rbf.epsilon, self.kappa);
                (s, comp, phi)
            }
        };
        let g = &self.gains;
        let control: Vec<f64> = match self.game.orders()[i] {
            PlayerOrder::First => (0..d)
                .map(|c| -g.k1 * regulation[c] - compensation[c] - damping[c])
                .collect(),
            PlayerOrder::Second => {
                let v = state.aux(i);
                (0..d)
                    .map(|c| -g.k2 * g.k4 * gradient[c] - g.k4 * v[c] - compensation[c] - damping[c])
                    .collect()
            }
        };
        Ok(PlayerSignals {
            gradient,
            regulation,
            activation,
            compensation,
            damping,
            control,
        })
    }

    /// `u_i = −k₁(x_i − z_i) − Ŵ_iᵀS_i(y_i) − φ_i`.
    pub fn control_first_order(&self, i: usize, state: &SeekerState) -> Result<Vec<f64>> {
        self.order_check(i, PlayerOrder::First)?;
        Ok(self.signals(i, state)?.control)
    }

    /// `u_i = −k₂k₄∇_i f_i(y_i) − k₄v_i − Ŵ_iᵀS_i(y_i) − φ_i`.
    pub fn control_second_order(&self, i: usize, state: &SeekerState) -> Result<Vec<f64>> {
        self.order_check(i, PlayerOrder::Second)?;
        Ok(self.signals(i, state)?.control)
    }

    /// `ż_i = −k₂∇_i f_i(y_i)`.
    pub fn z_derivative(&self, i: usize, state: &SeekerState) -> Result<Vec<f64>> {
        self.order_check(i, PlayerOrder::First)?;
        Ok(self
            .estimated_gradient(i, state)
            .into_iter()
            .map(|g| -self.gains.k2 * g)
            .collect())
    }

    pub fn estimator_derivative(&self, i: usize, state: &SeekerState, out: &mut [f64]) {
        estimator_derivative(i, state, &self.graph, self.gains.k3, out)
    }

    /// Projection-law weight derivative for player `i` given its signals.
    ///
    /// Tolerates Runge–Kutta stage states slightly beyond the cap; see
    /// [`rbfnn::stage_weight_derivative_into`].
    pub fn weight_derivative(
        &self,
        i: usize,
        state: &SeekerState,
        signals: &PlayerSignals,
        out: &mut [f64],
    ) -> Result<()> {
        match self.variant {
            Variant::DisturbanceFree => {
                out.fill(0.0);
                Ok(())
            }
            Variant::Full => rbfnn::stage_weight_derivative_into(
                state.weights(i),
                self.basis.n_neurons(),
                &signals.activation,
                &signals.regulation,
                self.rbf.beta,
                self.rbf.w_max,
                out,
            ),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{vehicles5_game, PlayerTerms, QuadraticGame};
    use crate::rbfnn::tanh_kappa;
    use nalgebra::{dmatrix, dvector};

    fn vehicles_controller(variant: Variant) -> Controller {
        let game = vehicles5_game();
        let centers: Vec<f64> = (0..11).map(|k| -2.5 + 0.5 * k as f64).collect();
        Controller {
            game: Arc::new(game),
            graph: CommGraph::ring(5),
            gains: Gains::default(),
            basis: RbfBasis::diagonal(&centers, 10, 5.0 * 2f64.sqrt()).unwrap(),
            rbf: RbfParams::default(),
            kappa: tanh_kappa(),
            variant,
        }
    }

    fn layout5() -> Arc<StateLayout> {
        Arc::new(StateLayout::new(vehicles5_game().orders().to_vec(), 2, 11))
    }

    #[test]
    fn layout_offsets() {
        let l = layout5();
        assert_eq!(l.len(), 10 + 10 + 50 + 5 * 22);
        assert_eq!(l.y_range(1), 30..40);
        assert_eq!(l.w_range(4), 70 + 88..70 + 110);
    }

    #[test]
    fn xbar_selects_z_for_first_and_x_for_second() {
        let mut s = SeekerState::zeros(layout5());
        for i in 0..5 {
            s.x_mut(i).fill((i + 1) as f64);
            s.aux_mut(i).fill(-((i + 1) as f64));
        }
        let xb = xbar(&s);
        assert_eq!(
            xb.as_slice(),
            &[-1.0, -1.0, -2.0, -2.0, -3.0, -3.0, 4.0, 4.0, 5.0, 5.0]
        );
        assert_eq!(s.z(0), Some(&[-1.0, -1.0][..]));
        assert_eq!(s.v(0), None);
        assert_eq!(s.v(3), Some(&[-4.0, -4.0][..]));
    }

    #[test]
    fn xbar_homogeneous_orders() {
        for order in [PlayerOrder::First, PlayerOrder::Second] {
            let l = Arc::new(StateLayout::new(vec![order; 3], 1, 1));
            let mut s = SeekerState::zeros(l);
            for i in 0..3 {
                s.x_mut(i)[0] = i as f64;
                s.aux_mut(i)[0] = 10.0 + i as f64;
            }
            let expected: Vec<f64> = match order {
                PlayerOrder::First => vec![10.0, 11.0, 12.0],
                PlayerOrder::Second => vec![0.0, 1.0, 2.0],
            };
            assert_eq!(xbar(&s).as_slice(), &expected[..]);
        }
    }

    #[test]
    fn estimator_fixed_point_and_hand_case() {
        // n = 2 complete graph, d = 1, both first-order so x̄ = z.
        let l = Arc::new(StateLayout::new(vec![PlayerOrder::First; 2], 1, 1));
        let g = CommGraph::complete(2);
        let mut s = SeekerState::zeros(l);
        s.aux_mut(0)[0] = 1.0;
        s.aux_mut(1)[0] = 1.0;
        s.y_mut(1).copy_from_slice(&[1.0, 1.0]);
        let mut out = [0.0; 2];
        estimator_derivative(0, &s, &g, 3.0, &mut out);
        // ẏ₁₁ = −k₃((0−1) + a₁₁(0−x̄₁)) with a₁₁ = 0 → k₃;
        // ẏ₁₂ = −k₃((0−1) + a₁₂(0−1)) = 2k₃.
        assert_eq!(out, [3.0, 6.0]);
        // All estimates correct → zero.
        s.y_mut(0).copy_from_slice(&[1.0, 1.0]);
        estimator_derivative(0, &s, &g, 3.0, &mut out);
        assert_eq!(out, [0.0, 0.0]);
    }

    #[test]
    fn control_laws_vanish_at_rest() {
        let ctrl = vehicles_controller(Variant::Full);
        let mut s = SeekerState::zeros(layout5());
        for i in 0..5 {
            s.y_mut(i).fill(-0.5);
        }
        for i in 0..3 {
            assert_eq!(ctrl.control_first_order(i, &s).unwrap(), vec![0.0, 0.0]);
            assert!(ctrl.z_derivative(i, &s).unwrap().iter().all(|v| v.abs() < 1e-15));
            assert_eq!(ctrl.regulation_signal(i, &s), vec![0.0, 0.0]);
        }
        for i in 3..5 {
            let u = ctrl.control_second_order(i, &s).unwrap();
            assert!(u.iter().all(|v| v.abs() < 1e-14));
            assert!(ctrl.regulation_signal(i, &s).iter().all(|v| v.abs() < 1e-15));
        }
    }

    #[test]
    fn wrong_order_is_rejected() {
        let ctrl = vehicles_controller(Variant::Full);
        let s = SeekerState::zeros(layout5());
        assert!(matches!(
            ctrl.control_first_order(3, &s),
            Err(Error::WrongOrder { player: 4, .. })
        ));
        assert!(matches!(ctrl.control_second_order(0, &s), Err(Error::WrongOrder { .. })));
        assert!(matches!(ctrl.z_derivative(4, &s), Err(Error::WrongOrder { .. })));
    }

    #[test]
    fn single_player_z_derivative() {
        let game = QuadraticGame::from_terms(
            1,
            &[PlayerTerms {
                order: PlayerOrder::First,
                own_quadratic: dmatrix![1.0],
                own_linear: dvector![0.0],
                constant: 0.0,
                couplings: vec![],
            }],
        )
        .unwrap();
        let ctrl = Controller {
            game: Arc::new(game),
            graph: CommGraph::complete(1),
            gains: Gains::default(),
            basis: RbfBasis::diagonal(&[0.0], 1, 1.0).unwrap(),
            rbf: RbfParams::default(),
            kappa: tanh_kappa(),
            variant: Variant::DisturbanceFree,
        };
        let l = Arc::new(StateLayout::new(vec![PlayerOrder::First], 1, 1));
        let mut s = SeekerState::zeros(l);
        s.y_mut(0)[0] = 3.0;
        assert_eq!(ctrl.z_derivative(0, &s).unwrap(), vec![-6.0 * 2.0]);
    }

    #[test]
    fn first_order_without_compensation_is_proportional() {
        let ctrl = vehicles_controller(Variant::DisturbanceFree);
        let mut s = SeekerState::zeros(layout5());
        s.x_mut(1).copy_from_slice(&[1.0, -2.0]);
        s.aux_mut(1).copy_from_slice(&[0.5, 0.5]);
        let u = ctrl.control_first_order(1, &s).unwrap();
        assert_eq!(u, vec![-30.0 * 0.5, -30.0 * -2.5]);
    }

    #[test]
    fn second_order_reduces_to_velocity_damping() {
        let ctrl = vehicles_controller(Variant::DisturbanceFree);
        let mut s = SeekerState::zeros(layout5());
        for i in 0..5 {
            s.y_mut(i).fill(-0.5);
        }
        s.aux_mut(4).copy_from_slice(&[0.2, -0.1]);
        let u = ctrl.control_second_order(4, &s).unwrap();
        assert!((u[0] + 60.0 * 0.2).abs() < 1e-12 && (u[1] - 60.0 * 0.1).abs() < 1e-12);
    }
}
