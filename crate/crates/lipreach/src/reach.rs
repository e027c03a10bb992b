//! Reachable-set bounding and safety verdicts.
//!
//! For each requested time `t` and state dimension `d`, the extreme values
//! of `x_d(t)` over all initial states in a box are bracketed by running
//! the Lipschitzian optimiser on the simulated flow: the minimum directly,
//! the maximum by minimising the negated coordinate. Collecting both
//! directions over every dimension yields an axis-aligned box that
//! over-approximates the reachable set at `t`, and doing so independently
//! per time avoids compounding over-approximation from one step to the
//! next. Bounds are certified relative to the slope estimates used; the
//! observed samples underneath them are genuine trajectories, giving an
//! inner estimate alongside the outer box.
//!
//! Safety is judged against avoid boxes and an optional goal box. An
//! over-approximation can prove avoidance (no box touches an avoid
//! region) but never violation, so an `Unsafe` verdict additionally
//! requires a concrete initial state whose sampled trajectory enters an
//! avoid box. Overlap without such a witness stays `Unknown`.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::optim::{
    minimize_nd, validate_options, LipStrategy, ObjectiveError, OptimError, OptimOptions,
};
use crate::oracle::build_lattice;
use crate::sim::{NncsModel, SimError, TrajectoryCache, DEFAULT_CACHE_LIMIT};

#[derive(Debug, Error)]
pub enum ReachError {
    #[error("box is invalid: {0}")]
    BadRect(String),
    #[error("initial set has {found} dimensions but the model has {expected} states")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("state index {dim} out of range for {state_dim} states")]
    BadDimension { dim: usize, state_dim: usize },
    #[error("safety specification: {0}")]
    BadSpec(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("optimisation setup failed: {0}")]
    Optim(String),
    #[error("thread pool: {0}")]
    ThreadPool(String),
}

/// A closed axis-aligned box `[lower_1, upper_1] x ... x [lower_n,
/// upper_n]`. Bounds may be infinite (an axis without a usable bound) but
/// never NaN, and `lower[d] <= upper[d]` holds for every axis; `new`
/// enforces this.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperRect {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl HyperRect {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self, ReachError> {
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(ReachError::BadRect(format!(
                "bound vectors must be nonempty and equal length, got {} and {}",
                lower.len(),
                upper.len()
            )));
        }
        for d in 0..lower.len() {
            if lower[d].is_nan() || upper[d].is_nan() {
                return Err(ReachError::BadRect(format!("axis {d} has a NaN bound")));
            }
            if lower[d] > upper[d] {
                return Err(ReachError::BadRect(format!(
                    "axis {d} is empty: lower {} exceeds upper {}",
                    lower[d], upper[d]
                )));
            }
        }
        Ok(HyperRect { lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn width(&self, d: usize) -> f64 {
        self.upper[d] - self.lower[d]
    }

    /// Whether every axis is degenerate.
    pub fn is_point(&self) -> bool {
        (0..self.dim()).all(|d| self.lower[d] == self.upper[d])
    }

    pub fn is_bounded(&self) -> bool {
        self.lower
            .iter()
            .chain(self.upper.iter())
            .all(|v| v.is_finite())
    }

    /// Closed-box membership; a point of the wrong dimension is outside.
    pub fn contains(&self, point: &[f64]) -> bool {
        point.len() == self.dim()
            && (0..self.dim()).all(|d| self.lower[d] <= point[d] && point[d] <= self.upper[d])
    }

    /// Whether two closed boxes share at least one point (touching
    /// boundaries count). Boxes of different dimension never intersect.
    pub fn intersects(&self, other: &HyperRect) -> bool {
        self.dim() == other.dim()
            && (0..self.dim())
                .all(|d| self.lower[d] <= other.upper[d] && other.lower[d] <= self.upper[d])
    }

    /// Whether `other` lies entirely inside this box.
    pub fn contains_rect(&self, other: &HyperRect) -> bool {
        self.dim() == other.dim()
            && (0..self.dim())
                .all(|d| self.lower[d] <= other.lower[d] && other.upper[d] <= self.upper[d])
    }

    /// All `2^n` corners; bit `d` of the index selects the upper bound on
    /// axis `d`, so corner 0 is the all-lower corner.
    pub fn corners(&self) -> Vec<Vec<f64>> {
        let n = self.dim();
        let count = 1usize << n;
        (0..count)
            .map(|i| {
                (0..n)
                    .map(|d| {
                        if (i >> d) & 1 == 1 {
                            self.upper[d]
                        } else {
                            self.lower[d]
                        }
                    })
                    .collect()
            })
            .collect()
    }

    /// Area of the projection onto axes `(i, j)`.
    pub fn projected_area(&self, i: usize, j: usize) -> f64 {
        self.width(i) * self.width(j)
    }
}

/// Which extreme of a state coordinate to bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Min,
    Max,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReachOptions {
    /// Per-level optimiser tolerance.
    pub eps: f64,
    /// Iteration cap per 1D optimiser run.
    pub k_max: usize,
    pub strategy: LipStrategy,
    /// Worker threads for the per-time, per-dimension tasks; 0 uses the
    /// global thread pool. Results never depend on this.
    pub threads: usize,
}

impl Default for ReachOptions {
    fn default() -> Self {
        ReachOptions {
            eps: 5e-4,
            k_max: 10_000,
            strategy: LipStrategy::default(),
            threads: 0,
        }
    }
}

impl ReachOptions {
    fn optim_options(&self) -> OptimOptions {
        OptimOptions {
            eps: self.eps,
            max_iterations: self.k_max,
            strategy: self.strategy,
        }
    }
}

/// One bounded extreme of one state coordinate at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundResult {
    /// The certified outer bound (a lower bound for `Min`, an upper bound
    /// for `Max`).
    pub bound: f64,
    /// The most extreme genuinely simulated value, an inner estimate
    /// bracketing the true extreme together with `bound`.
    pub observed: f64,
    /// Initial state achieving `observed`.
    pub observed_at: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub evaluations: u64,
}

/// The reachable box at one time.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TubeSlice {
    pub time: f64,
    pub rect: HyperRect,
    /// Per-dimension convergence of the minimising runs.
    pub converged_min: Vec<bool>,
    /// Per-dimension convergence of the maximising runs.
    pub converged_max: Vec<bool>,
    /// Per-dimension failure descriptions; a failed direction widens that
    /// side of the box to infinity.
    pub errors: Vec<Option<String>>,
}

/// Reachable boxes over a set of times, with the tolerances they were
/// computed under.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReachTube {
    pub eps: f64,
    pub k_max: usize,
    pub slices: Vec<TubeSlice>,
}

/// Avoid regions and an optional goal over a time horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct SafetySpec {
    pub avoid: Vec<HyperRect>,
    pub goal: Option<HyperRect>,
    pub horizon: f64,
}

/// Budget for hunting a concrete counterexample trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WitnessSearch {
    /// Lattice points sampled across the initial set.
    pub grid_points: usize,
    /// Hard cap on candidate simulations (corners plus lattice).
    pub max_simulations: usize,
}

impl Default for WitnessSearch {
    fn default() -> Self {
        WitnessSearch {
            grid_points: 1000,
            max_simulations: 10_000,
        }
    }
}

/// A concrete initial state whose simulated trajectory enters an avoid
/// region.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Witness {
    pub x0: Vec<f64>,
    /// First sampled time at which the trajectory is inside an avoid box.
    pub time: f64,
    /// The full sampled trajectory, `(time, state)` pairs.
    pub trajectory: Vec<(f64, Vec<f64>)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Verdict {
    /// No reachable box touches an avoid region and the final box lies
    /// inside the goal (when one is given).
    Safe,
    /// A simulated trajectory demonstrably enters an avoid region.
    Unsafe(Witness),
    /// The outer bounds conflict with the safety spec but no concrete
    /// counterexample was found; the overlap may be real or an artefact
    /// of over-approximation.
    Unknown { first_conflict_time: f64 },
}

fn map_optim_error(err: OptimError) -> ReachError {
    match err {
        OptimError::Objective { source, .. } => match source.downcast::<SimError>() {
            Ok(sim) => ReachError::Sim(*sim),
            Err(other) => ReachError::Optim(other.to_string()),
        },
        other => ReachError::Optim(other.to_string()),
    }
}

fn check_model_rect(model: &NncsModel, rect: &HyperRect) -> Result<(), ReachError> {
    if rect.dim() != model.state_dim() {
        return Err(ReachError::DimensionMismatch {
            expected: model.state_dim(),
            found: rect.dim(),
        });
    }
    Ok(())
}

/// Bounds one extreme of `x_dim(time)` over initial states in `init`.
///
/// `Min` certifies `bound <= min x_dim(time)`, `Max` certifies `bound >=
/// max x_dim(time)`, in both cases relative to the slope estimates of the
/// chosen strategy. The result also reports the most extreme genuinely
/// simulated value, so the true extreme lies between `observed` and
/// `bound` whenever the estimates are honest.
pub fn bound_state(
    model: &Arc<NncsModel>,
    init: &HyperRect,
    time: f64,
    dim: usize,
    direction: Direction,
    options: &ReachOptions,
) -> Result<BoundResult, ReachError> {
    check_model_rect(model, init)?;
    if !init.is_bounded() {
        return Err(ReachError::BadRect(
            "initial set must have finite bounds".to_string(),
        ));
    }
    if dim >= model.state_dim() {
        return Err(ReachError::BadDimension {
            dim,
            state_dim: model.state_dim(),
        });
    }
    let optim_options = options.optim_options();
    validate_options(&optim_options).map_err(map_optim_error)?;

    let cache = Arc::new(TrajectoryCache::new(model.clone(), vec![time])?);
    let sign = match direction {
        Direction::Min => 1.0,
        Direction::Max => -1.0,
    };
    let objective = cache.objective(0, dim, sign)?;
    let result = minimize_nd(
        |x0| {
            objective
                .eval(x0)
                .map_err(|e| Box::new(e) as ObjectiveError)
        },
        &init.lower,
        &init.upper,
        &optim_options,
    )
    .map_err(map_optim_error)?;
    Ok(BoundResult {
        bound: sign * result.lower_bound,
        observed: sign * result.best_value,
        observed_at: result.best_point,
        converged: result.converged,
        iterations: result.iterations,
        evaluations: result.evaluations,
    })
}

struct DimBound {
    bound: f64,
    converged: bool,
    error: Option<String>,
}

fn run_dim_task(
    cache: &Arc<TrajectoryCache>,
    init: &HyperRect,
    time_index: usize,
    dim: usize,
    direction: Direction,
    options: &OptimOptions,
) -> DimBound {
    let sign = match direction {
        Direction::Min => 1.0,
        Direction::Max => -1.0,
    };
    let fail_bound = match direction {
        Direction::Min => f64::NEG_INFINITY,
        Direction::Max => f64::INFINITY,
    };
    let objective = match cache.objective(time_index, dim, sign) {
        Ok(o) => o,
        Err(e) => {
            return DimBound {
                bound: fail_bound,
                converged: false,
                error: Some(e.to_string()),
            }
        }
    };
    match minimize_nd(
        |x0| {
            objective
                .eval(x0)
                .map_err(|e| Box::new(e) as ObjectiveError)
        },
        &init.lower,
        &init.upper,
        options,
    ) {
        Ok(r) => DimBound {
            bound: sign * r.lower_bound,
            converged: r.converged,
            error: None,
        },
        // A failing trajectory means the flow may genuinely escape any
        // finite box, so the honest bound for this direction is infinite.
        Err(OptimError::Objective { source, .. }) => DimBound {
            bound: fail_bound,
            converged: false,
            error: Some(source.to_string()),
        },
        Err(other) => DimBound {
            bound: fail_bound,
            converged: false,
            error: Some(other.to_string()),
        },
    }
}

/// Computes the reachable box at every requested time.
///
/// Each time and dimension is bounded independently in both directions
/// (2 n |times| optimiser runs) over a shared memoised trajectory cache,
/// so a box at a later time never inherits slack from earlier boxes. A
/// run that fails (for example, a diverging trajectory) widens its side
/// of the box to infinity and records the failure on the slice instead of
/// aborting the tube. Output is deterministic for fixed inputs, whatever
/// `options.threads` says.
pub fn reach_tube(
    model: &Arc<NncsModel>,
    init: &HyperRect,
    times: &[f64],
    options: &ReachOptions,
) -> Result<ReachTube, ReachError> {
    check_model_rect(model, init)?;
    if !init.is_bounded() {
        return Err(ReachError::BadRect(
            "initial set must have finite bounds".to_string(),
        ));
    }
    if times.is_empty() {
        return Err(ReachError::Sim(SimError::BadTimes));
    }
    let optim_options = options.optim_options();
    validate_options(&optim_options).map_err(map_optim_error)?;

    let cache = Arc::new(TrajectoryCache::with_limit(
        model.clone(),
        times.to_vec(),
        DEFAULT_CACHE_LIMIT,
    )?);
    let n = model.state_dim();
    let tasks: Vec<(usize, usize, Direction)> = (0..times.len())
        .flat_map(|t| (0..n).flat_map(move |d| [(t, d, Direction::Min), (t, d, Direction::Max)]))
        .collect();

    let run_all = || -> Vec<DimBound> {
        tasks
            .par_iter()
            .map(|&(t, d, direction)| run_dim_task(&cache, init, t, d, direction, &optim_options))
            .collect()
    };
    let results = if options.threads > 0 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(options.threads)
            .build()
            .map_err(|e| ReachError::ThreadPool(e.to_string()))?;
        pool.install(run_all)
    } else {
        run_all()
    };

    let mut slices = Vec::with_capacity(times.len());
    for (t_idx, &time) in times.iter().enumerate() {
        let mut lower = Vec::with_capacity(n);
        let mut upper = Vec::with_capacity(n);
        let mut converged_min = Vec::with_capacity(n);
        let mut converged_max = Vec::with_capacity(n);
        let mut errors = Vec::with_capacity(n);
        for d in 0..n {
            let min = &results[(t_idx * n + d) * 2];
            let max = &results[(t_idx * n + d) * 2 + 1];
            lower.push(min.bound);
            upper.push(max.bound);
            converged_min.push(min.converged);
            converged_max.push(max.converged);
            errors.push(match (&min.error, &max.error) {
                (None, None) => None,
                (Some(e), None) => Some(format!("min: {e}")),
                (None, Some(e)) => Some(format!("max: {e}")),
                (Some(a), Some(b)) => Some(format!("min: {a}; max: {b}")),
            });
        }
        slices.push(TubeSlice {
            time,
            rect: HyperRect::new(lower, upper)?,
            converged_min,
            converged_max,
            errors,
        });
    }
    Ok(ReachTube {
        eps: options.eps,
        k_max: options.k_max,
        slices,
    })
}

/// Candidate initial states for the witness hunt: the corners of the
/// initial set (when affordable) followed by a uniform lattice, truncated
/// to the simulation budget. Order is deterministic.
fn witness_candidates(
    init: &HyperRect,
    search: &WitnessSearch,
) -> Result<Vec<Vec<f64>>, ReachError> {
    let mut candidates = Vec::new();
    let n = init.dim();
    if n < 30 && (1usize << n) <= search.max_simulations {
        candidates.extend(init.corners());
    }
    if search.grid_points > 0 {
        let lattice = build_lattice(init, search.grid_points)
            .map_err(|e| ReachError::BadSpec(e.to_string()))?;
        candidates.extend(lattice.points);
    }
    candidates.truncate(search.max_simulations);
    Ok(candidates)
}

fn find_witness(
    model: &NncsModel,
    init: &HyperRect,
    avoid: &[HyperRect],
    times: &[f64],
    search: &WitnessSearch,
) -> Result<Option<Witness>, ReachError> {
    let mut scan_times = Vec::with_capacity(times.len() + 1);
    if times.first().is_some_and(|&t| t > 0.0) {
        scan_times.push(0.0);
    }
    scan_times.extend_from_slice(times);
    let candidates = witness_candidates(init, search)?;
    let witness = candidates.par_iter().find_map_first(|x0| {
        let trajectory = model.trajectory(x0, &scan_times).ok()?;
        for (time, state) in &trajectory.samples {
            if avoid.iter().any(|r| r.contains(state)) {
                return Some(Witness {
                    x0: x0.clone(),
                    time: *time,
                    trajectory: trajectory.samples.clone(),
                });
            }
        }
        None
    });
    Ok(witness)
}

/// Judges a reach tube against a safety specification.
///
/// `Safe` means no slice box touches any avoid region, the initial set
/// itself is clear of them, and the final slice box lies inside the goal
/// when one is given; this is a proof relative to the tube's bounds. For
/// an avoid conflict the verdict is `Unsafe` only when a concrete
/// simulated trajectory from `init` actually enters an avoid box;
/// otherwise the conflict (including a missed goal, which outer bounds
/// alone can never prove violated) yields `Unknown` with the earliest
/// conflicting time.
pub fn check_safety(
    model: &NncsModel,
    init: &HyperRect,
    spec: &SafetySpec,
    tube: &ReachTube,
    search: &WitnessSearch,
) -> Result<Verdict, ReachError> {
    check_model_rect(model, init)?;
    if !init.is_bounded() {
        return Err(ReachError::BadRect(
            "initial set must have finite bounds".to_string(),
        ));
    }
    if tube.slices.is_empty() {
        return Err(ReachError::BadSpec("reach tube has no slices".to_string()));
    }
    if !(spec.horizon.is_finite() && spec.horizon > 0.0) {
        return Err(ReachError::BadSpec(format!(
            "horizon must be positive and finite, got {}",
            spec.horizon
        )));
    }
    for (i, rect) in spec.avoid.iter().enumerate() {
        if rect.dim() != model.state_dim() {
            return Err(ReachError::BadSpec(format!(
                "avoid region {i} has {} dimensions, expected {}",
                rect.dim(),
                model.state_dim()
            )));
        }
    }
    if let Some(goal) = &spec.goal {
        if goal.dim() != model.state_dim() {
            return Err(ReachError::BadSpec(format!(
                "goal region has {} dimensions, expected {}",
                goal.dim(),
                model.state_dim()
            )));
        }
    }

    let mut conflicts: Vec<f64> = Vec::new();
    if spec.avoid.iter().any(|r| r.intersects(init)) {
        conflicts.push(0.0);
    }
    for slice in &tube.slices {
        if spec.avoid.iter().any(|r| r.intersects(&slice.rect)) {
            conflicts.push(slice.time);
        }
    }

    let final_slice = tube.slices.last().expect("nonempty tube");
    let goal_ok = spec
        .goal
        .as_ref()
        .is_none_or(|goal| goal.contains_rect(&final_slice.rect));

    if conflicts.is_empty() && goal_ok {
        return Ok(Verdict::Safe);
    }

    if !conflicts.is_empty() {
        let times: Vec<f64> = tube.slices.iter().map(|s| s.time).collect();
        if let Some(witness) = find_witness(model, init, &spec.avoid, &times, search)? {
            return Ok(Verdict::Unsafe(witness));
        }
        return Ok(Verdict::Unknown {
            first_conflict_time: conflicts[0],
        });
    }

    // Only the goal check failed. Outer bounds overstate the reachable
    // set, so this may be slack rather than a genuine miss.
    Ok(Verdict::Unknown {
        first_conflict_time: final_slice.time,
    })
}
