//! Closed-loop simulation of a plant under a neural controller with
//! zero-order hold.
//!
//! The control input is recomputed from the measured state at every
//! boundary `i*delta` and held constant until the next boundary. Between
//! boundaries the plant is integrated with classical RK4 on a canonical
//! substep grid: control step `i` is divided into `substeps` equal pieces,
//! and a state at any query time is produced by walking that grid and, when
//! the query falls strictly inside a substep, taking a single partial RK4
//! step that branches off the canonical state. The canonical path never
//! depends on which times were asked for, so `trajectory` over a grid and
//! independent `simulate` calls at each grid point produce bit-identical
//! states.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use thiserror::Error;

use crate::expr::{self, EvalError, Expr, VarKind};
use crate::nn::{Controller, NnError};

/// States whose sup norm passes this limit abort the run as divergent.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

/// Default number of RK4 substeps per control step.
pub const DEFAULT_SUBSTEPS: u32 = 20;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum SimError {
    #[error("control step must be positive and finite, got {0}")]
    BadControlStep(f64),
    #[error("substeps must be at least 1")]
    BadSubsteps,
    #[error("dynamics must contain at least one expression")]
    EmptyDynamics,
    #[error("{context}[{index}] references {prefix}{var} but only {available} are available", prefix = kind.prefix())]
    VarOutOfRange {
        context: &'static str,
        index: usize,
        kind: VarKind,
        var: usize,
        available: usize,
    },
    #[error("measurement produces {found} values but the controller expects {expected}")]
    MeasurementDim { expected: usize, found: usize },
    #[error("state has {found} entries but the model has {expected} dimensions")]
    StateDim { expected: usize, found: usize },
    #[error("simulation time must be nonnegative and finite, got {0}")]
    BadTime(f64),
    #[error("sample times must be finite, nonnegative, and strictly increasing")]
    BadTimes,
    #[error("expression evaluation failed: {source}")]
    Eval {
        #[source]
        source: EvalError,
    },
    #[error("expression evaluation failed at t = {time}: {source}")]
    EvalAt {
        time: f64,
        #[source]
        source: EvalError,
    },
    #[error("simulation diverged at t = {time}: state exceeded {limit:e}")]
    Divergence { time: f64, limit: f64 },
    #[error("controller failure: {0}")]
    Nn(#[from] NnError),
    #[error("sample index {index} out of range for {len} sample times")]
    SampleIndex { index: usize, len: usize },
    #[error("sign must be +1 or -1, got {0}")]
    BadSign(f64),
}

/// A sampled closed-loop trajectory from a single initial state.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub x0: Vec<f64>,
    /// `(time, state)` pairs at exactly the requested sample times.
    pub samples: Vec<(f64, Vec<f64>)>,
}

/// A plant, a measurement map, and a controller under zero-order hold.
#[derive(Debug, Clone)]
pub struct NncsModel {
    dynamics: Vec<Expr>,
    /// `None` means the identity measurement `y = x`.
    measurement: Option<Vec<Expr>>,
    controller: Controller,
    delta: f64,
    substeps: u32,
}

impl NncsModel {
    pub fn new(
        dynamics: Vec<Expr>,
        measurement: Option<Vec<Expr>>,
        controller: Controller,
        delta: f64,
        substeps: u32,
    ) -> Result<Self, SimError> {
        if !(delta.is_finite() && delta > 0.0) {
            return Err(SimError::BadControlStep(delta));
        }
        if substeps == 0 {
            return Err(SimError::BadSubsteps);
        }
        if dynamics.is_empty() {
            return Err(SimError::EmptyDynamics);
        }
        let n = dynamics.len();
        let m = controller.output_dim();
        for (index, expr) in dynamics.iter().enumerate() {
            check_vars(expr, "dynamics", index, n, m)?;
        }
        match &measurement {
            None => {
                if controller.input_dim() != n {
                    return Err(SimError::MeasurementDim {
                        expected: controller.input_dim(),
                        found: n,
                    });
                }
            }
            Some(exprs) => {
                if exprs.len() != controller.input_dim() {
                    return Err(SimError::MeasurementDim {
                        expected: controller.input_dim(),
                        found: exprs.len(),
                    });
                }
                for (index, expr) in exprs.iter().enumerate() {
                    // Measurements read states only; inputs are not in scope.
                    check_vars(expr, "measurement", index, n, 0)?;
                }
            }
        }
        Ok(NncsModel {
            dynamics,
            measurement,
            controller,
            delta,
            substeps,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.dynamics.len()
    }

    pub fn input_dim(&self) -> usize {
        self.controller.output_dim()
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn substeps(&self) -> u32 {
        self.substeps
    }

    pub fn controller(&self) -> &Controller {
        &self.controller
    }

    pub fn dynamics(&self) -> &[Expr] {
        &self.dynamics
    }

    fn measure(&self, state: &[f64], time: f64) -> Result<Vec<f64>, SimError> {
        match &self.measurement {
            None => Ok(state.to_vec()),
            Some(exprs) => exprs
                .iter()
                .map(|e| {
                    expr::eval(e, state, &[]).map_err(|source| SimError::EvalAt { time, source })
                })
                .collect(),
        }
    }

    /// State at time `t` starting from `x0`. `t = 0` returns `x0` as is.
    pub fn simulate(&self, x0: &[f64], t: f64) -> Result<Vec<f64>, SimError> {
        if !(t.is_finite() && t >= 0.0) {
            return Err(SimError::BadTime(t));
        }
        let mut out = Vec::with_capacity(1);
        self.integrate_visit(x0, &[t], |_, state| out.push(state.to_vec()))?;
        Ok(out.pop().expect("one sample requested"))
    }

    /// One integration pass recording the state at every requested time.
    /// Times must be finite, nonnegative, and strictly increasing. Each
    /// recorded state is bit-identical to an independent `simulate` call at
    /// that time.
    pub fn trajectory(&self, x0: &[f64], times: &[f64]) -> Result<Trajectory, SimError> {
        let mut samples = Vec::with_capacity(times.len());
        self.integrate_visit(x0, times, |idx, state| {
            samples.push((times[idx], state.to_vec()));
        })?;
        Ok(Trajectory {
            x0: x0.to_vec(),
            samples,
        })
    }

    /// Walks the canonical substep grid, invoking `visit` for each sample
    /// index in ascending time order.
    fn integrate_visit(
        &self,
        x0: &[f64],
        times: &[f64],
        mut visit: impl FnMut(usize, &[f64]),
    ) -> Result<(), SimError> {
        if x0.len() != self.state_dim() {
            return Err(SimError::StateDim {
                expected: self.state_dim(),
                found: x0.len(),
            });
        }
        let increasing = times.windows(2).all(|w| w[0] < w[1]);
        if !increasing || times.iter().any(|t| !t.is_finite() || *t < 0.0) {
            return Err(SimError::BadTimes);
        }

        let mut state = x0.to_vec();
        let mut idx = 0;
        while idx < times.len() && times[idx] == 0.0 {
            visit(idx, &state);
            idx += 1;
        }

        let h = self.delta / self.substeps as f64;
        let mut step: u64 = 0;
        'steps: while idx < times.len() {
            let step_start = step as f64 * self.delta;
            let y = self.measure(&state, step_start)?;
            let u = self.controller.forward(&y)?;
            for j in 0..self.substeps {
                let sub_start = step_start + j as f64 * h;
                // The last substep lands exactly on the next control
                // boundary so boundary states do not drift with rounding.
                let sub_end = if j + 1 == self.substeps {
                    (step + 1) as f64 * self.delta
                } else {
                    step_start + (j + 1) as f64 * h
                };
                while idx < times.len() && times[idx] > sub_start && times[idx] < sub_end {
                    let branched = rk4_step(&self.dynamics, &state, &u, times[idx] - sub_start)?;
                    check_divergence(&branched, times[idx])?;
                    visit(idx, &branched);
                    idx += 1;
                }
                if idx >= times.len() {
                    break 'steps;
                }
                state = rk4_step(&self.dynamics, &state, &u, sub_end - sub_start)?;
                check_divergence(&state, sub_end)?;
                while idx < times.len() && times[idx] == sub_end {
                    visit(idx, &state);
                    idx += 1;
                }
            }
            step += 1;
        }
        Ok(())
    }
}

fn check_vars(
    expr: &Expr,
    context: &'static str,
    index: usize,
    states: usize,
    inputs: usize,
) -> Result<(), SimError> {
    for (kind, var, _) in expr.variables() {
        let available = match kind {
            VarKind::State => states,
            VarKind::Input => inputs,
        };
        if var >= available {
            return Err(SimError::VarOutOfRange {
                context,
                index,
                kind,
                var: var + 1,
                available,
            });
        }
    }
    Ok(())
}

fn check_divergence(state: &[f64], time: f64) -> Result<(), SimError> {
    if state
        .iter()
        .any(|v| !v.is_finite() || v.abs() > DIVERGENCE_LIMIT)
    {
        return Err(SimError::Divergence {
            time,
            limit: DIVERGENCE_LIMIT,
        });
    }
    Ok(())
}

/// One classical RK4 step of `x' = f(x, u)` with `u` held constant.
pub fn rk4_step(dynamics: &[Expr], x: &[f64], u: &[f64], h: f64) -> Result<Vec<f64>, SimError> {
    let deriv = |state: &[f64]| -> Result<Vec<f64>, SimError> {
        dynamics
            .iter()
            .map(|e| expr::eval(e, state, u).map_err(|source| SimError::Eval { source }))
            .collect()
    };
    let n = x.len();
    let k1 = deriv(x)?;
    let mut probe: Vec<f64> = (0..n).map(|i| x[i] + 0.5 * h * k1[i]).collect();
    let k2 = deriv(&probe)?;
    for i in 0..n {
        probe[i] = x[i] + 0.5 * h * k2[i];
    }
    let k3 = deriv(&probe)?;
    for i in 0..n {
        probe[i] = x[i] + h * k3[i];
    }
    let k4 = deriv(&probe)?;
    Ok((0..n)
        .map(|i| x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect())
}

/// One cache slot: the states at each of the cache's times for a single
/// initial state, or the error its integration produced.
type CachedStates = Result<Arc<Vec<Vec<f64>>>, SimError>;

/// Shared trajectory store keyed on the exact bit pattern of the initial
/// state, so every reachability task over the same time grid reuses
/// integrations. Capacity `limit = 0` disables storage entirely; cached and
/// uncached evaluations are bit-identical either way.
#[derive(Debug)]
pub struct TrajectoryCache {
    model: Arc<NncsModel>,
    times: Vec<f64>,
    entries: Mutex<HashMap<Vec<u64>, CachedStates>>,
    limit: usize,
    hits: AtomicU64,
    misses: AtomicU64,
}

/// Default bound on distinct initial states kept by a cache.
pub const DEFAULT_CACHE_LIMIT: usize = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
    pub entries: usize,
}

impl TrajectoryCache {
    pub fn new(model: Arc<NncsModel>, times: Vec<f64>) -> Result<Self, SimError> {
        Self::with_limit(model, times, DEFAULT_CACHE_LIMIT)
    }

    pub fn with_limit(
        model: Arc<NncsModel>,
        times: Vec<f64>,
        limit: usize,
    ) -> Result<Self, SimError> {
        let increasing = times.windows(2).all(|w| w[0] < w[1]);
        if !increasing || times.iter().any(|t| !t.is_finite() || *t < 0.0) {
            return Err(SimError::BadTimes);
        }
        Ok(TrajectoryCache {
            model,
            times,
            entries: Mutex::new(HashMap::new()),
            limit,
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        })
    }

    pub fn model(&self) -> &Arc<NncsModel> {
        &self.model
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn stats(&self) -> CacheStats {
        CacheStats {
            hits: self.hits.load(Ordering::Relaxed),
            misses: self.misses.load(Ordering::Relaxed),
            entries: self.entries.lock().expect("cache lock").len(),
        }
    }

    /// States at every cached time for this initial state, integrating on a
    /// miss. Failures are cached too: a divergent initial state keeps
    /// reporting the same error.
    pub fn states_at(&self, x0: &[f64]) -> Result<Arc<Vec<Vec<f64>>>, SimError> {
        let key: Vec<u64> = x0.iter().map(|v| v.to_bits()).collect();
        if self.limit > 0 {
            if let Some(slot) = self.entries.lock().expect("cache lock").get(&key) {
                self.hits.fetch_add(1, Ordering::Relaxed);
                return slot.clone();
            }
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        let result = self
            .model
            .trajectory(x0, &self.times)
            .map(|tr| Arc::new(tr.samples.into_iter().map(|(_, s)| s).collect::<Vec<_>>()));
        if self.limit > 0 {
            let mut entries = self.entries.lock().expect("cache lock");
            if entries.len() < self.limit {
                entries.entry(key).or_insert_with(|| result.clone());
            }
        }
        result
    }

    /// An objective `x0 -> sign * phi_dim(x0, times[time_index])` backed by
    /// this cache. `sign = -1` turns maximisation into minimisation.
    pub fn objective(
        self: &Arc<Self>,
        time_index: usize,
        dim: usize,
        sign: f64,
    ) -> Result<StateObjective, SimError> {
        if time_index >= self.times.len() {
            return Err(SimError::SampleIndex {
                index: time_index,
                len: self.times.len(),
            });
        }
        if dim >= self.model.state_dim() {
            return Err(SimError::StateDim {
                expected: self.model.state_dim(),
                found: dim,
            });
        }
        if sign != 1.0 && sign != -1.0 {
            return Err(SimError::BadSign(sign));
        }
        Ok(StateObjective {
            cache: Arc::clone(self),
            time_index,
            dim,
            sign,
        })
    }
}

/// Memoised objective over one state dimension at one sample time.
#[derive(Debug, Clone)]
pub struct StateObjective {
    cache: Arc<TrajectoryCache>,
    time_index: usize,
    dim: usize,
    sign: f64,
}

impl StateObjective {
    pub fn eval(&self, x0: &[f64]) -> Result<f64, SimError> {
        let states = self.cache.states_at(x0)?;
        Ok(self.sign * states[self.time_index][self.dim])
    }
}
