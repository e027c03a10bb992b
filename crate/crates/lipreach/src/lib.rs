//! Reachability analysis and safety checking for neural-network controlled
//! systems (NNCS).
//!
//! A closed-loop system couples a continuous plant `x' = f(x, u)` with a
//! feedforward neural controller under zero-order hold: at each control
//! boundary `i*delta` the controller reads the measured state and the
//! resulting input is held constant until the next boundary. The reachable
//! set at a time `t` is bracketed per state dimension by minimising (and, by
//! negation, maximising) the flow `x0 -> phi_dim(x0, t)` over the initial
//! set with a deterministic Lipschitzian global optimiser. The optimiser's
//! sawtooth lower bound is sound at any iteration count, so every emitted
//! box over-approximates the true reachable states: tightness, not
//! soundness, is what further iterations buy.
//!
//! Module map:
//!
//! * [`expr`] - arithmetic expression language for plant dynamics.
//! * [`nn`] - feedforward controllers (ReLU / Sigmoid / Tanh / Linear).
//! * [`sim`] - RK4 closed-loop simulation and trajectory memoisation.
//! * [`optim`] - sawtooth (Piyavskii-Shubert style) global minimisation
//!   with fixed, global-dynamic, and local-tuning Lipschitz estimates.
//! * [`reach`] - reach tubes, safety specs, and verdicts.
//! * [`oracle`] - grid-based sampling oracles and convex-hull area, used to
//!   validate tubes empirically.
//! * [`model`] - the on-disk JSON model format.

pub mod expr;
pub mod model;
pub mod nn;
pub mod optim;
pub mod oracle;
pub mod reach;
pub mod sim;

pub use expr::Expr;
pub use model::{load_model, LoadedModel};
pub use nn::{Activation, Controller, Layer};
pub use optim::{minimize_1d, minimize_nd, LipStrategy, OptResult, OptimOptions};
pub use reach::{
    bound_state, check_safety, reach_tube, Direction, HyperRect, ReachOptions, ReachTube,
    SafetySpec, Verdict, Witness, WitnessSearch,
};
pub use sim::{NncsModel, Trajectory, TrajectoryCache};
