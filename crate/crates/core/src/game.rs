//! Games, pseudo-gradients and exact oracles for quadratic games.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Whether a player is a velocity-actuated (first-order) or
/// force-actuated (second-order) integrator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlayerOrder {
    First,
    Second,
}

impl PlayerOrder {
    pub fn as_str(self) -> &'static str {
        match self {
            PlayerOrder::First => "first-order",
            PlayerOrder::Second => "second-order",
        }
    }
}

/// Cost and gradient oracles of an `n`-player game with actions in `ℝ^d`.
///
/// Profiles are flat slices of length `n·d`; player `i` owns
/// `x[i*d..(i+1)*d]`.
pub trait GameDefinition: Send + Sync {
    fn n_players(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn orders(&self) -> &[PlayerOrder];

    fn cost(&self, player: usize, x: &[f64]) -> f64;

    /// Gradient of player `player`'s cost with respect to its own action,
    /// written into `out` (length `d`).
    fn own_gradient(&self, player: usize, x: &[f64], out: &mut [f64]);

    /// `∂²f_i / ∂x_i ∂x_j` as a `d×d` block. Defaults to central differences
    /// of [`GameDefinition::own_gradient`]; only diagnostics use it.
    fn cross_hessian(&self, player: usize, other: usize, x: &[f64]) -> DMatrix<f64> {
        let d = self.action_dim();
        let h = 1e-5;
        let mut out = DMatrix::zeros(d, d);
        let mut xp = x.to_vec();
        let mut gp = vec![0.0; d];
        let mut gm = vec![0.0; d];
        for c in 0..d {
            let k = other * d + c;
            xp[k] = x[k] + h;
            self.own_gradient(player, &xp, &mut gp);
            xp[k] = x[k] - h;
            self.own_gradient(player, &xp, &mut gm);
            xp[k] = x[k];
            for r in 0..d {
                out[(r, c)] = (gp[r] - gm[r]) / (2.0 * h);
            }
        }
        out
    }

    /// Exact quadratic representation, when the game has one.
    fn as_quadratic(&self) -> Option<&QuadraticGame> {
        None
    }

    fn dim(&self) -> usize {
        self.n_players() * self.action_dim()
    }
}

/// Stacked own-action gradients `[∇₁f₁(x); …; ∇_N f_N(x)]`.
pub fn pseudo_gradient(game: &dyn GameDefinition, x: &[f64]) -> Result<DVector<f64>> {
    let dim = game.dim();
    if x.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: x.len(),
            context: "action profile",
        });
    }
    let d = game.action_dim();
    let mut out = DVector::zeros(dim);
    for i in 0..game.n_players() {
        game.own_gradient(i, x, &mut out.as_mut_slice()[i * d..(i + 1) * d]);
    }
    Ok(out)
}

/// One player's quadratic cost `½ xᵀ H x + gᵀ x + c` over the full profile.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticCost {
    pub hessian: DMatrix<f64>,
    pub linear: DVector<f64>,
    pub constant: f64,
}

/// Game whose costs are quadratic, so the pseudo-gradient is affine:
/// `𝒫(x) = B x + c`.
#[derive(Debug, Clone)]
pub struct QuadraticGame {
    action_dim: usize,
    orders: Vec<PlayerOrder>,
    costs: Vec<QuadraticCost>,
    b: DMatrix<f64>,
    c: DVector<f64>,
}

impl QuadraticGame {
    pub fn new(action_dim: usize, orders: Vec<PlayerOrder>, costs: Vec<QuadraticCost>) -> Result<Self> {
        let n = orders.len();
        if n == 0 || action_dim == 0 {
            return Err(Error::InvalidScenario("game needs at least one player and d >= 1".into()));
        }
        if costs.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: costs.len(),
                context: "one cost per player",
            });
        }
        let dim = n * action_dim;
        for cost in &costs {
            if cost.hessian.shape() != (dim, dim) || cost.linear.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: cost.linear.len(),
                    context: "quadratic cost data",
                });
            }
        }
        let mut b = DMatrix::zeros(dim, dim);
        let mut c = DVector::zeros(dim);
        for (i, cost) in costs.iter().enumerate() {
            let rows = i * action_dim..(i + 1) * action_dim;
            // Row block of the symmetrised Hessian belonging to player i's own action.
            let sym = (&cost.hessian + cost.hessian.transpose()) * 0.5;
            for r in rows {
                b.row_mut(r).copy_from(&sym.row(r));
                c[r] = cost.linear[r];
            }
        }
        Ok(Self {
            action_dim,
            orders,
            costs,
            b,
            c,
        })
    }

    /// Connectivity-style game builder: each player has
    /// `x_iᵀ Q_i x_i + x_iᵀ m_i + c_i + Σ_j w_ij ‖x_i − x_j‖²`.
    pub fn from_terms(action_dim: usize, players: &[PlayerTerms]) -> Result<Self> {
        let n = players.len();
        let d = action_dim;
        let dim = n * d;
        let mut orders = Vec::with_capacity(n);
        let mut costs = Vec::with_capacity(n);
        for (i, p) in players.iter().enumerate() {
            if p.own_quadratic.shape() != (d, d) || p.own_linear.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: p.own_linear.len(),
                    context: "own quadratic/linear terms",
                });
            }
            let mut h = DMatrix::zeros(dim, dim);
            let mut lin = DVector::zeros(dim);
            let q = &p.own_quadratic + p.own_quadratic.transpose();
            h.view_mut((i * d, i * d), (d, d)).copy_from(&q);
            lin.rows_mut(i * d, d).copy_from(&p.own_linear);
            for &(j, w) in &p.couplings {
                if j >= n || j == i {
                    return Err(Error::InvalidScenario(format!(
                        "player {} couples to invalid player {}",
                        i + 1,
                        j + 1
                    )));
                }
                for c in 0..d {
                    let (a, b) = (i * d + c, j * d + c);
                    h[(a, a)] += 2.0 * w;
                    h[(b, b)] += 2.0 * w;
                    h[(a, b)] -= 2.0 * w;
                    h[(b, a)] -= 2.0 * w;
                }
            }
            orders.push(p.order);
            costs.push(QuadraticCost {
                hessian: h,
                linear: lin,
                constant: p.constant,
            });
        }
        Self::new(action_dim, orders, costs)
    }

    /// `B` in `𝒫(x) = B x + c`.
    pub fn jacobian(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn offset(&self) -> &DVector<f64> {
        &self.c
    }

    pub fn costs(&self) -> &[QuadraticCost] {
        &self.costs
    }
}

/// Per-player terms for [`QuadraticGame::from_terms`]. Couplings are
/// `(other player, weight)` pairs, 0-based.
#[derive(Debug, Clone)]
pub struct PlayerTerms {
    pub order: PlayerOrder,
    pub own_quadratic: DMatrix<f64>,
    pub own_linear: DVector<f64>,
    pub constant: f64,
    pub couplings: Vec<(usize, f64)>,
}

impl GameDefinition for QuadraticGame {
    fn n_players(&self) -> usize {
        self.orders.len()
    }

    fn action_dim(&self) -> usize {
        self.action_dim
    }

    fn orders(&self) -> &[PlayerOrder] {
        &self.orders
    }

    fn cost(&self, player: usize, x: &[f64]) -> f64 {
        let cost = &self.costs[player];
        let x = DVector::from_column_slice(x);
        0.5 * x.dot(&(&cost.hessian * &x)) + cost.linear.dot(&x) + cost.constant
    }

    fn own_gradient(&self, player: usize, x: &[f64], out: &mut [f64]) {
        let d = self.action_dim;
        for (r, o) in out.iter_mut().enumerate() {
            let row = player * d + r;
            *o = self.b.row(row).iter().zip(x).map(|(b, x)| b * x).sum::<f64>() + self.c[row];
        }
    }

    fn cross_hessian(&self, player: usize, other: usize, _x: &[f64]) -> DMatrix<f64> {
        let d = self.action_dim;
        self.b.view((player * d, other * d), (d, d)).into_owned()
    }

    fn as_quadratic(&self) -> Option<&QuadraticGame> {
        Some(self)
    }
}

/// Unique Nash equilibrium of a strongly monotone quadratic game, `B x* = −c`.
pub fn nash_oracle(game: &QuadraticGame) -> Result<DVector<f64>> {
    let b = game.jacobian();
    let sv = b.clone().singular_values();
    let smax = sv.max();
    let smin = sv.min();
    let cond = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !(cond <= 1e12) {
        return Err(Error::SingularSystem(cond));
    }
    let x = b
        .clone()
        .lu()
        .solve(&(-game.offset()))
        .ok_or(Error::SingularSystem(cond))?;
    Ok(x)
}

/// `m = λ_min((B + Bᵀ)/2)`; errors unless strictly positive.
pub fn monotonicity_constant(game: &QuadraticGame) -> Result<f64> {
    let b = game.jacobian();
    let sym = (b + b.transpose()) * 0.5;
    let m = SymmetricEigen::new(sym).eigenvalues.min();
    if m > 0.0 {
        Ok(m)
    } else {
        Err(Error::NotStronglyMonotone(m))
    }
}

/// Per-player Lipschitz constants of `∇_i f_i`: the spectral norm of the
/// player's row block of `B`.
pub fn lipschitz_constants(game: &QuadraticGame) -> Vec<f64> {
    let d = game.action_dim();
    (0..game.n_players())
        .map(|i| {
            game.jacobian()
                .rows(i * d, d)
                .into_owned()
                .singular_values()
                .max()
        })
        .collect()
}

/// Game assembled from user-supplied cost and gradient closures.
pub struct CallbackGame {
    action_dim: usize,
    orders: Vec<PlayerOrder>,
    cost: Arc<dyn Fn(usize, &[f64]) -> f64 + Send + Sync>,
    gradient: Arc<dyn Fn(usize, &[f64], &mut [f64]) + Send + Sync>,
}

impl CallbackGame {
    pub fn new(
        action_dim: usize,
        orders: Vec<PlayerOrder>,
        cost: impl Fn(usize, &[f64]) -> f64 + Send + Sync + 'static,
        gradient: impl Fn(usize, &[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        Self {
            action_dim,
            orders,
            cost: Arc::new(cost),
            gradient: Arc::new(gradient),
        }
    }
}

impl fmt::Debug for CallbackGame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CallbackGame")
            .field("action_dim", &self.action_dim)
            .field("orders", &self.orders)
            .finish_non_exhaustive()
    }
}

impl GameDefinition for CallbackGame {
    fn n_players(&self) -> usize {
        self.orders.len()
    }
    fn action_dim(&self) -> usize {
        self.action_dim
    }
    fn orders(&self) -> &[PlayerOrder] {
        &self.orders
    }
    fn cost(&self, player: usize, x: &[f64]) -> f64 {
        (self.cost)(player, x)
    }
    fn own_gradient(&self, player: usize, x: &[f64], out: &mut [f64]) {
        (self.gradient)(player, x, out)
    }
}

type StateFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;
type TimeFn = Arc<dyn Fn(f64, &mut [f64]) + Send + Sync>;

/// Unknown dynamics `g_i(x)` and disturbance `d_i(t)` of one player.
#[derive(Clone)]
pub struct PlayerDisturbance {
    pub dynamics: StateFn,
    pub disturbance: TimeFn,
    /// Declared Lipschitz constant of `g_i` (on the operating box).
    pub eta: f64,
    /// Declared bound on `|d_i(t)|`, component-wise.
    pub bound: f64,
}

impl PlayerDisturbance {
    pub fn new(
        eta: f64,
        bound: f64,
        dynamics: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
        disturbance: impl Fn(f64, &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        Self {
            dynamics: Arc::new(dynamics),
            disturbance: Arc::new(disturbance),
            eta,
            bound,
        }
    }
}

/// Per-player `g_i(x) + d_i(t)` terms entering the players' dynamics.
#[derive(Clone)]
pub struct DisturbanceModel {
    pub name: String,
    pub action_dim: usize,
    pub players: Vec<PlayerDisturbance>,
}

impl fmt::Debug for DisturbanceModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DisturbanceModel")
            .field("name", &self.name)
            .field("n_players", &self.players.len())
            .finish_non_exhaustive()
    }
}

impl DisturbanceModel {
    pub fn zero(n_players: usize, action_dim: usize) -> Self {
        let players = (0..n_players)
            .map(|_| {
                PlayerDisturbance::new(0.0, 0.0, |_, out| out.fill(0.0), |_, out| out.fill(0.0))
            })
            .collect();
        Self {
            name: "zero".into(),
            action_dim,
            players,
        }
    }

    /// Writes `g_i(x) + d_i(t)` into `out`.
    pub fn evaluate(&self, player: usize, x: &[f64], t: f64, out: &mut [f64]) {
        let p = &self.players[player];
        (p.dynamics)(x, out);
        let mut dist = [0.0; 8];
        let d = out.len();
        if d <= dist.len() {
            (p.disturbance)(t, &mut dist[..d]);
            out.iter_mut().zip(&dist[..d]).for_each(|(o, v)| *o += v);
        } else {
            let mut dist = vec![0.0; d];
            (p.disturbance)(t, &mut dist);
            out.iter_mut().zip(&dist).for_each(|(o, v)| *o += v);
        }
    }

    /// Largest observed `‖g_i(a) − g_i(b)‖ / ‖a − b‖ / η_i` over the given
    /// pairs, with the player attaining it. Values above 1 violate the
    /// declared constant.
    pub fn lipschitz_ratio<'a>(
        &self,
        pairs: impl IntoIterator<Item = (&'a [f64], &'a [f64])>,
    ) -> (usize, f64) {
        let d = self.action_dim;
        let mut worst = (0, 0.0f64);
        let mut ga = vec![0.0; d];
        let mut gb = vec![0.0; d];
        for (a, b) in pairs {
            let dx = a.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
            if dx == 0.0 {
                continue;
            }
            for (i, p) in self.players.iter().enumerate() {
                (p.dynamics)(a, &mut ga);
                (p.dynamics)(b, &mut gb);
                let dg = ga.iter().zip(&gb).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
                let ratio = if p.eta > 0.0 {
                    dg / dx / p.eta
                } else if dg > 0.0 {
                    f64::INFINITY
                } else {
                    0.0
                };
                if ratio > worst.1 {
                    worst = (i, ratio);
                }
            }
        }
        worst
    }
}

/// Half-width of the operating box on which the five-vehicle dynamics'
/// Lipschitz constants are declared.
pub const VEHICLES5_BOX: f64 = 10.0;

/// The five-vehicle connectivity game: vehicles 1–3 are first-order,
/// 4–5 second-order, actions in `ℝ²`, unique equilibrium at `−½` in every
/// coordinate.
pub fn vehicles5_game() -> QuadraticGame {
    let d = 2;
    let couplings: [&[usize]; 5] = [&[1], &[2], &[1], &[1, 4], &[0]];
    let players: Vec<PlayerTerms> = (0..5)
        .map(|i| {
            let w = (i + 1) as f64;
            PlayerTerms {
                order: if i < 3 { PlayerOrder::First } else { PlayerOrder::Second },
                own_quadratic: DMatrix::identity(d, d) * w,
                own_linear: DVector::from_element(d, w),
                constant: w,
                couplings: couplings[i].iter().map(|&j| (j, 1.0)).collect(),
            }
        })
        .collect();
    QuadraticGame::from_terms(d, &players).expect("five-vehicle game is well formed")
}

/// Unknown dynamics and disturbances of the five-vehicle example.
///
/// `g₂` contains `x₂₁²`, which is only Lipschitz on a bounded set; its
/// declared `η₂` holds on `[−10, 10]^{10}`.
pub fn vehicles5_disturbances() -> DisturbanceModel {
    // x_{jc} lives at index 2*(j-1) + (c-1).
    let players = vec![
        PlayerDisturbance::new(
            1.0,
            1.0,
            |x, out| {
                out[0] = x[2];
                out[1] = x[3];
            },
            |t, out| out.fill(t.sin()),
        ),
        PlayerDisturbance::new(
            (4.0 * VEHICLES5_BOX * VEHICLES5_BOX + 1.0).sqrt() + 1.0,
            2.0,
            |x, out| {
                out[0] = x[2] * x[2] + x[4];
                out[1] = x[3];
            },
            |t, out| out.fill(2.0 * (2.0 * t).sin()),
        ),
        PlayerDisturbance::new(
            3.0,
            3.0,
            |x, out| {
                out[0] = 3.0 * x[4];
                out[1] = 3.0 * x[5];
            },
            |t, out| out.fill(3.0 * (3.0 * t).sin()),
        ),
        PlayerDisturbance::new(
            4.0,
            4.0,
            |x, out| {
                out[0] = 4.0 * x[6];
                out[1] = 4.0 * x[7];
            },
            |t, out| out.fill(4.0 * (4.0 * t).sin()),
        ),
        PlayerDisturbance::new(
            5.0,
            5.0,
            |x, out| {
                out[0] = 5.0 * x[8];
                out[1] = 5.0 * x[9];
            },
            |t, out| out.fill(5.0 * (5.0 * t).sin()),
        ),
    ];
    DisturbanceModel {
        name: "vehicles5".into(),
        action_dim: 2,
        players,
    }
}
