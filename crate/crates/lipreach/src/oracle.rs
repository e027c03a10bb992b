//! Dense trajectory sampling used to cross-check reachability output.
//!
//! The bounds produced by `reach` are one-sided: they may be loose but
//! must never cut into the true reachable set. This module provides the
//! other side of that comparison by simulating a deterministic lattice of
//! initial states and reporting where the sampled states actually land:
//! containment checks against a box, and the convex-hull area of a 2D
//! projection as a tightness yardstick. Sampling can prove a bound wrong
//! or measure its slack; it can never prove the bound safe.

use rayon::prelude::*;
use thiserror::Error;

use crate::reach::HyperRect;
use crate::sim::{NncsModel, SimError};

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("grid must request at least one point")]
    EmptyGrid,
    #[error("sample times must be nonempty, finite, nonnegative and strictly increasing")]
    BadTimes,
    #[error("no usable samples at time {time}: all {failures} trajectories failed")]
    NoSamples { time: f64, failures: usize },
    #[error("sample has {found} coordinates but the box has {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// A deterministic grid of initial states covering a box, endpoints
/// included on every non-degenerate axis.
#[derive(Debug, Clone, PartialEq)]
pub struct Lattice {
    /// Points per axis; degenerate axes get exactly one.
    pub per_axis: Vec<usize>,
    /// Lattice points in row-major order (last axis fastest).
    pub points: Vec<Vec<f64>>,
}

/// The sampled states observed at one time, one entry per lattice point
/// whose trajectory succeeded.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleCloud {
    pub time: f64,
    pub states: Vec<Vec<f64>>,
    /// Points per axis of the generating lattice.
    pub per_axis: Vec<usize>,
    /// Trajectories that failed (divergence or evaluation faults).
    pub failures: usize,
}

/// How the samples at one time sit relative to a box.
#[derive(Debug, Clone, PartialEq)]
pub struct ContainmentReport {
    pub total: usize,
    pub inside: usize,
    pub contained: bool,
    /// Largest coordinate distance outside the box over all samples,
    /// zero when everything is inside.
    pub worst_violation: f64,
    /// A sample attaining `worst_violation`, when any lies outside.
    pub worst_point: Option<Vec<f64>>,
}

fn lattice_side(non_degenerate: usize, n_points: usize) -> usize {
    if non_degenerate == 0 {
        return 1;
    }
    let d = non_degenerate as u32;
    let mut k = (n_points as f64).powf(1.0 / f64::from(d)).floor() as usize;
    k = k.max(1);
    let reaches = |k: usize| {
        (k as u128)
            .checked_pow(d)
            .is_none_or(|total| total >= n_points as u128)
    };
    while !reaches(k) {
        k += 1;
    }
    k
}

/// Builds the smallest uniform lattice over `rect` with at least
/// `n_points` points: every non-degenerate axis gets `k` evenly spaced
/// points (endpoints included) with `k` minimal such that `k^d >=
/// n_points` over the `d` non-degenerate axes, and degenerate axes
/// contribute their single coordinate. A fully degenerate box yields its
/// one corner.
pub fn build_lattice(rect: &HyperRect, n_points: usize) -> Result<Lattice, OracleError> {
    if n_points == 0 {
        return Err(OracleError::EmptyGrid);
    }
    let dim = rect.dim();
    let non_degenerate = (0..dim).filter(|&d| rect.lower[d] < rect.upper[d]).count();
    let side = lattice_side(non_degenerate, n_points);
    let per_axis: Vec<usize> = (0..dim)
        .map(|d| {
            if rect.lower[d] < rect.upper[d] {
                side
            } else {
                1
            }
        })
        .collect();

    let total: usize = per_axis.iter().product();
    let mut points = Vec::with_capacity(total);
    let mut index = vec![0usize; dim];
    for _ in 0..total {
        let point: Vec<f64> = (0..dim)
            .map(|d| {
                let k = per_axis[d];
                let j = index[d];
                if k == 1 {
                    rect.lower[d]
                } else if j == k - 1 {
                    rect.upper[d]
                } else {
                    rect.lower[d] + (rect.upper[d] - rect.lower[d]) * j as f64 / (k - 1) as f64
                }
            })
            .collect();
        points.push(point);
        for d in (0..dim).rev() {
            index[d] += 1;
            if index[d] < per_axis[d] {
                break;
            }
            index[d] = 0;
        }
    }
    Ok(Lattice { per_axis, points })
}

fn validate_times(times: &[f64]) -> Result<(), OracleError> {
    if times.is_empty() {
        return Err(OracleError::BadTimes);
    }
    for (i, &t) in times.iter().enumerate() {
        if !t.is_finite() || t < 0.0 {
            return Err(OracleError::BadTimes);
        }
        if i > 0 && t <= times[i - 1] {
            return Err(OracleError::BadTimes);
        }
    }
    Ok(())
}

/// Simulates every lattice point of `init` through `model` and collects
/// the observed states at each requested time. Each point is one
/// trajectory pass; points whose trajectory fails are counted in
/// `failures` and contribute no samples anywhere. Results do not depend
/// on thread scheduling.
pub fn grid_clouds(
    model: &NncsModel,
    init: &HyperRect,
    times: &[f64],
    n_points: usize,
) -> Result<Vec<SampleCloud>, OracleError> {
    validate_times(times)?;
    if init.dim() != model.state_dim() {
        return Err(OracleError::DimensionMismatch {
            expected: model.state_dim(),
            found: init.dim(),
        });
    }
    let lattice = build_lattice(init, n_points)?;
    let runs: Vec<_> = lattice
        .points
        .par_iter()
        .map(|x0| model.trajectory(x0, times).map(|traj| traj.samples))
        .collect();

    let failures = runs.iter().filter(|r| r.is_err()).count();
    let clouds = times
        .iter()
        .enumerate()
        .map(|(t_idx, &time)| {
            let states: Vec<Vec<f64>> = runs
                .iter()
                .filter_map(|r| r.as_ref().ok())
                .map(|samples| samples[t_idx].1.clone())
                .collect();
            SampleCloud {
                time,
                states,
                per_axis: lattice.per_axis.clone(),
                failures,
            }
        })
        .collect();
    Ok(clouds)
}

/// Compares every sample in the cloud against a box. Errs when the cloud
/// has no samples at all (nothing can be concluded from zero data) or on
/// a dimension mismatch.
pub fn check_containment(
    cloud: &SampleCloud,
    rect: &HyperRect,
) -> Result<ContainmentReport, OracleError> {
    if cloud.states.is_empty() {
        return Err(OracleError::NoSamples {
            time: cloud.time,
            failures: cloud.failures,
        });
    }
    let mut inside = 0;
    let mut worst_violation = 0.0_f64;
    let mut worst_point: Option<Vec<f64>> = None;
    for state in &cloud.states {
        if state.len() != rect.dim() {
            return Err(OracleError::DimensionMismatch {
                expected: rect.dim(),
                found: state.len(),
            });
        }
        let violation = state
            .iter()
            .enumerate()
            .map(|(d, &s)| (rect.lower[d] - s).max(s - rect.upper[d]).max(0.0))
            .fold(0.0_f64, f64::max);
        if violation == 0.0 {
            inside += 1;
        } else if violation > worst_violation {
            worst_violation = violation;
            worst_point = Some(state.clone());
        }
    }
    Ok(ContainmentReport {
        total: cloud.states.len(),
        inside,
        contained: inside == cloud.states.len(),
        worst_violation,
        worst_point,
    })
}

/// Projects each sample onto the coordinate pair `(i, j)`.
pub fn project_cloud(cloud: &SampleCloud, i: usize, j: usize) -> Vec<(f64, f64)> {
    cloud
        .states
        .iter()
        .filter(|s| i < s.len() && j < s.len())
        .map(|s| (s[i], s[j]))
        .collect()
}

/// Area of the convex hull of a planar point set (monotone chain plus the
/// shoelace formula). Fewer than three distinct points, or a collinear
/// set, has zero area. Non-finite points are ignored.
pub fn hull_area(points: &[(f64, f64)]) -> f64 {
    let mut pts: Vec<(f64, f64)> = points
        .iter()
        .copied()
        .filter(|(x, y)| x.is_finite() && y.is_finite())
        .collect();
    pts.sort_by(|a, b| a.partial_cmp(b).expect("finite points are comparable"));
    pts.dedup();
    if pts.len() < 3 {
        return 0.0;
    }
    let cross = |o: (f64, f64), a: (f64, f64), b: (f64, f64)| {
        (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
    };
    let mut lower: Vec<(f64, f64)> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<(f64, f64)> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    let hull: Vec<(f64, f64)> = lower.into_iter().chain(upper).collect();
    if hull.len() < 3 {
        return 0.0;
    }
    let mut twice_area = 0.0;
    for i in 0..hull.len() {
        let (x1, y1) = hull[i];
        let (x2, y2) = hull[(i + 1) % hull.len()];
        twice_area += x1 * y2 - x2 * y1;
    }
    0.5 * twice_area.abs()
}
