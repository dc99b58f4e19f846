//! JSON scenario files and the compiled-in scenarios.
//!
//! A scenario file either stands alone or names a built-in `base` whose
//! fields it overrides (objects merge recursively, everything else is
//! replaced). Command-line overrides are applied last.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::controller::{Controller, Gains, StateLayout, Variant};
use crate::error::{Error, Result};
use crate::game::{
    vehicles5_disturbances, DisturbanceModel, GameDefinition, PlayerOrder, PlayerTerms,
    QuadraticGame,
};
use crate::graph::CommGraph;
use crate::rbfnn::{tanh_kappa, RbfBasis, RbfParams};
use crate::sim::{EstimateInit, InitialConditions, IntegratorSettings, Scenario, SCHEMA_VERSION};

fn default_schema() -> u32 {
    SCHEMA_VERSION
}

fn default_variant() -> Variant {
    Variant::Full
}

fn default_weight() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "default_schema")]
    pub schema_version: u32,
    pub name: String,
    pub game: GameConfig,
    pub graph: GraphConfig,
    #[serde(default)]
    pub disturbance: DisturbanceChoice,
    #[serde(default)]
    pub rbf: RbfConfig,
    #[serde(default)]
    pub gains: Gains,
    pub initial: InitialConfig,
    #[serde(default)]
    pub integrator: IntegratorSettings,
    #[serde(default = "default_variant")]
    pub variant: Variant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GameConfig {
    pub action_dim: usize,
    pub players: Vec<PlayerConfig>,
}

/// `x_iᵀ Q x_i + x_iᵀ m + c + Σ_j w_j ‖x_i − x_j‖²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlayerConfig {
    pub order: PlayerOrder,
    /// Either a scalar (times the identity) or a `d × d` matrix, row-major.
    pub own_quadratic: MatrixSpec,
    pub own_linear: Vec<f64>,
    #[serde(default)]
    pub constant: f64,
    #[serde(default)]
    pub couplings: Vec<CouplingConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixSpec {
    Scalar(f64),
    Rows(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingConfig {
    /// 1-based index of the other player.
    pub player: usize,
    #[serde(default = "default_weight")]
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphConfig {
    pub n: usize,
    /// 1-based undirected edges.
    pub edges: Vec<[usize; 2]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DisturbanceChoice {
    #[default]
    Zero,
    Vehicles5,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CentersSpec {
    List(Vec<f64>),
    Linspace { min: f64, max: f64, count: usize },
}

impl CentersSpec {
    pub fn values(&self) -> Vec<f64> {
        match self {
            CentersSpec::List(v) => v.clone(),
            CentersSpec::Linspace { min, max, count } => match count {
                0 => Vec::new(),
                1 => vec![*min],
                _ => (0..*count)
                    .map(|k| min + (max - min) * k as f64 / (*count - 1) as f64)
                    .collect(),
            },
        }
    }
}

/// RBF hyperparameters. Scalar centers are placed on the diagonal of the
/// estimate space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RbfConfig {
    /// Optional neuron count; must match the number of centers when given.
    pub q: Option<usize>,
    pub centers: CentersSpec,
    pub width: f64,
    pub w_max: f64,
    pub beta: f64,
    pub delta: f64,
    pub epsilon: f64,
}

impl Default for RbfConfig {
    fn default() -> Self {
        let p = RbfParams::default();
        Self {
            q: Some(11),
            centers: CentersSpec::Linspace {
                min: -2.5,
                max: 2.5,
                count: 11,
            },
            width: 5.0 * std::f64::consts::SQRT_2,
            w_max: p.w_max,
            beta: p.beta,
            delta: p.delta,
            epsilon: p.epsilon,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    pub x: Vec<f64>,
    #[serde(default)]
    pub v: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z: Option<Vec<f64>>,
    #[serde(default)]
    pub y: EstimateInit,
}

/// Command-line overrides; `None` leaves the file/built-in value alone.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub k1: Option<f64>,
    pub k2: Option<f64>,
    pub k3: Option<f64>,
    pub k4: Option<f64>,
    pub beta: Option<f64>,
    pub dt: Option<f64>,
    pub t_final: Option<f64>,
    pub stride: Option<usize>,
    pub variant: Option<Variant>,
    pub y_init: Option<EstimateInit>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ScenarioConfig) {
        let set = |slot: &mut f64, v: Option<f64>| {
            if let Some(v) = v {
                *slot = v;
            }
        };
        set(&mut cfg.gains.k1, self.k1);
        set(&mut cfg.gains.k2, self.k2);
        set(&mut cfg.gains.k3, self.k3);
        set(&mut cfg.gains.k4, self.k4);
        set(&mut cfg.rbf.beta, self.beta);
        set(&mut cfg.integrator.dt, self.dt);
        set(&mut cfg.integrator.t_final, self.t_final);
        if let Some(s) = self.stride {
            cfg.integrator.stride = s;
        }
        if let Some(v) = self.variant {
            cfg.variant = v;
        }
        if let Some(y) = &self.y_init {
            cfg.initial.y = y.clone();
        }
    }
}

/// Names of the compiled-in scenarios with a one-line description.
pub const BUILTIN_SCENARIOS: [(&str, &str); 2] = [
    (
        "vehicles5",
        "five-vehicle connectivity game, vehicles 1-3 first-order, 4-5 second-order, ring graph",
    ),
    (
        "pair2",
        "two-player scalar game, one first-order and one second-order player",
    ),
];

pub fn builtin(name: &str) -> Option<ScenarioConfig> {
    match name {
        "vehicles5" => Some(vehicles5_config()),
        "pair2" => Some(pair2_config()),
        _ => None,
    }
}

/// The five-vehicle example. The communication graph is the ring 1-2-3-4-5-1.
pub fn vehicles5_config() -> ScenarioConfig {
    let couplings: [&[usize]; 5] = [&[2], &[3], &[2], &[2, 5], &[1]];
    let players = (1..=5)
        .map(|i| PlayerConfig {
            order: if i <= 3 { PlayerOrder::First } else { PlayerOrder::Second },
            own_quadratic: MatrixSpec::Scalar(i as f64),
            own_linear: vec![i as f64; 2],
            constant: i as f64,
            couplings: couplings[i - 1]
                .iter()
                .map(|&j| CouplingConfig { player: j, weight: 1.0 })
                .collect(),
        })
        .collect();
    ScenarioConfig {
        schema_version: SCHEMA_VERSION,
        name: "vehicles5".into(),
        game: GameConfig {
            action_dim: 2,
            players,
        },
        graph: GraphConfig {
            n: 5,
            edges: vec![[1, 2], [2, 3], [3, 4], [4, 5], [5, 1]],
        },
        disturbance: DisturbanceChoice::Vehicles5,
        rbf: RbfConfig::default(),
        gains: Gains::default(),
        initial: InitialConfig {
            x: vec![-5.0, 8.0, -4.0, -6.0, 1.0, 8.0, 0.0, -8.0, -1.0, 10.0],
            v: vec![0.0; 4],
            z: None,
            y: EstimateInit::Seeded,
        },
        integrator: IntegratorSettings::default(),
        variant: Variant::Full,
    }
}

/// `f₁ = (x₁ − x₂)² + x₁²`, `f₂ = (x₂ − 1)²`; equilibrium `(½, 1)`.
pub fn pair2_config() -> ScenarioConfig {
    ScenarioConfig {
        schema_version: SCHEMA_VERSION,
        name: "pair2".into(),
        game: GameConfig {
            action_dim: 1,
            players: vec![
                PlayerConfig {
                    order: PlayerOrder::First,
                    own_quadratic: MatrixSpec::Scalar(1.0),
                    own_linear: vec![0.0],
                    constant: 0.0,
                    couplings: vec![CouplingConfig { player: 2, weight: 1.0 }],
                },
                PlayerConfig {
                    order: PlayerOrder::Second,
                    own_quadratic: MatrixSpec::Scalar(1.0),
                    own_linear: vec![-2.0],
                    constant: 1.0,
                    couplings: vec![],
                },
            ],
        },
        graph: GraphConfig {
            n: 2,
            edges: vec![[1, 2]],
        },
        disturbance: DisturbanceChoice::Zero,
        rbf: RbfConfig {
            q: Some(5),
            centers: CentersSpec::Linspace {
                min: -1.0,
                max: 2.0,
                count: 5,
            },
            width: 2.0,
            ..RbfConfig::default()
        },
        gains: Gains {
            k1: 10.0,
            k2: 1.0,
            k3: 10.0,
            k4: 10.0,
        },
        initial: InitialConfig {
            x: vec![3.0, -2.0],
            v: vec![0.0],
            z: None,
            y: EstimateInit::Seeded,
        },
        integrator: IntegratorSettings {
            dt: 1e-3,
            t_final: 20.0,
            stride: 10,
        },
        variant: Variant::DisturbanceFree,
    }
}

fn config_error(path: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Config {
        path: path.into(),
        message: message.into(),
    }
}

fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Parses scenario JSON text, resolving an optional `"base"` built-in.
pub fn parse_config(text: &str) -> Result<ScenarioConfig> {
    let value: Value = serde_json::from_str(text).map_err(|e| {
        config_error(format!("line {} column {}", e.line(), e.column()), e.to_string())
    })?;
    let base = match value.get("base") {
        None => None,
        Some(Value::String(name)) => Some(
            builtin(name).ok_or_else(|| config_error("base", format!("unknown built-in scenario `{name}`")))?,
        ),
        Some(_) => return Err(config_error("base", "expected a built-in scenario name")),
    };
    match base {
        None => {
            let de = &mut serde_json::Deserializer::from_str(text);
            serde_path_to_error::deserialize(de).map_err(|e| {
                let path = e.path().to_string();
                let inner = e.into_inner();
                config_error(
                    path,
                    format!("{inner} (line {} column {})", inner.line(), inner.column()),
                )
            })
        }
        Some(base) => {
            let mut merged = serde_json::to_value(base).expect("built-in config serialises");
            let mut patch = value;
            patch.as_object_mut().map(|o| o.remove("base"));
            merge(&mut merged, patch);
            serde_path_to_error::deserialize(merged)
                .map_err(|e| config_error(e.path().to_string(), e.into_inner().to_string()))
        }
    }
}

pub fn load_config(path: &std::path::Path) -> Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config(&text)
}

impl ScenarioConfig {
    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    pub fn build_game(&self) -> Result<QuadraticGame> {
        let d = self.game.action_dim;
        if d == 0 {
            return Err(config_error("game.action_dim", "must be at least 1"));
        }
        let n = self.game.players.len();
        let mut terms = Vec::with_capacity(n);
        for (i, p) in self.game.players.iter().enumerate() {
            let at = |field: &str| format!("game.players[{i}].{field}");
            let q = match &p.own_quadratic {
                MatrixSpec::Scalar(s) => DMatrix::identity(d, d) * *s,
                MatrixSpec::Rows(rows) => {
                    if rows.len() != d || rows.iter().any(|r| r.len() != d) {
                        return Err(config_error(at("own_quadratic"), format!("expected a {d}x{d} matrix")));
                    }
                    DMatrix::from_fn(d, d, |r, c| rows[r][c])
                }
            };
            if p.own_linear.len() != d {
                return Err(config_error(
                    at("own_linear"),
                    format!("expected {d} entries, got {}", p.own_linear.len()),
                ));
            }
            let mut couplings = Vec::with_capacity(p.couplings.len());
            for (k, c) in p.couplings.iter().enumerate() {
                if c.player == 0 || c.player > n || c.player == i + 1 {
                    return Err(config_error(
                        format!("game.players[{i}].couplings[{k}].player"),
                        format!("must name another player in 1..={n}"),
                    ));
                }
                couplings.push((c.player - 1, c.weight));
            }
            terms.push(PlayerTerms {
                order: p.order,
                own_quadratic: q,
                own_linear: DVector::from_vec(p.own_linear.clone()),
                constant: p.constant,
                couplings,
            });
        }
        QuadraticGame::from_terms(d, &terms).map_err(|e| config_error("game", e.to_string()))
    }

    /// Validates every field and assembles the runnable [`Scenario`].
    pub fn build(&self) -> Result<Scenario> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(config_error(
                "schema_version",
                format!("unsupported version {} (expected {SCHEMA_VERSION})", self.schema_version),
            ));
        }
        let game = self.build_game()?;
        let n = game.n_players();
        let d = game.action_dim();
        if self.graph.n != n {
            return Err(config_error(
                "graph.n",
                format!("graph has {} nodes but the game has {n} players", self.graph.n),
            ));
        }
        let graph = CommGraph::from_edges_one_based(self.graph.n, &self.graph.edges)
            .map_err(|e| config_error("graph.edges", e.to_string()))?;
        if !graph.is_connected() {
            return Err(config_error("graph.edges", "communication graph must be connected"));
        }
        self.gains
            .validate()
            .map_err(|e| config_error("gains", e.to_string()))?;
        let centers = self.rbf.centers.values();
        if let Some(q) = self.rbf.q {
            if q != centers.len() {
                return Err(config_error(
                    "rbf.q",
                    format!("q = {q} but {} centers were given", centers.len()),
                ));
            }
        }
        let basis = RbfBasis::diagonal(&centers, n * d, self.rbf.width)
            .map_err(|e| config_error("rbf", e.to_string()))?;
        let rbf = RbfParams {
            w_max: self.rbf.w_max,
            beta: self.rbf.beta,
            delta: self.rbf.delta,
            epsilon: self.rbf.epsilon,
        };
        rbf.validate().map_err(|e| config_error("rbf", e.to_string()))?;
        let disturbances = match self.disturbance {
            DisturbanceChoice::Zero => DisturbanceModel::zero(n, d),
            DisturbanceChoice::Vehicles5 => {
                if n != 5 || d != 2 {
                    return Err(config_error(
                        "disturbance",
                        "the vehicles5 disturbance model needs 5 players with 2-D actions",
                    ));
                }
                vehicles5_disturbances()
            }
        };
        let layout = Arc::new(StateLayout::new(game.orders().to_vec(), d, basis.n_neurons()));
        let init = InitialConditions {
            x: self.initial.x.clone(),
            v: self.initial.v.clone(),
            z: self.initial.z.clone(),
            y: self.initial.y.clone(),
        };
        let initial = init
            .build(layout)
            .map_err(|e| config_error("initial", e.to_string()))?;
        let controller = Controller {
            game: Arc::new(game),
            graph,
            gains: self.gains,
            basis,
            rbf,
            kappa: tanh_kappa(),
            variant: self.variant,
        };
        Scenario::new(
            self.name.clone(),
            controller,
            Some(disturbances),
            initial,
            self.integrator,
        )
        .map_err(|e| config_error("scenario", e.to_string()))
    }
}
