//! Distributed Nash equilibrium seeking for games among mixed first- and
//! second-order integrator players.
//!
//! Each player only observes its own state and its graph neighbours'
//! estimates. First-order players track an auxiliary gradient-play variable
//! `z_i`; second-order players damp their velocity against the estimated
//! gradient. Unknown dynamics and bounded disturbances are compensated by a
//! per-player adaptive RBF network with a norm-capped projection law and a
//! `tanh` robustifying term.
//!
//! Module map:
//!
//! * [`graph`]: communication topology, Laplacian, estimator matrix, Lyapunov solve.
//! * [`game`]: game oracles, quadratic games, the five-vehicle connectivity game.
//! * [`rbfnn`]: Gaussian RBF network, projection adaptive law, damping term.
//! * [`controller`]: control laws, auxiliary dynamics and the consensus estimator.
//! * [`sim`]: closed loop assembly, RK4 integration, trajectories and metrics.
//! * [`config`]: JSON scenario files and built-in scenarios.
//! * [`cli`]: the `mixnash` command line front end.

pub mod cli;
pub mod config;
pub mod controller;
pub mod error;
pub mod game;
pub mod graph;
pub mod rbfnn;
pub mod sim;

pub use error::{Error, Result};
