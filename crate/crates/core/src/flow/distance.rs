//! Tip distances along a stored run.

use serde::{Deserialize, Serialize};

use super::GridState;
use crate::geometry::coordinate_arclength;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceReport {
    pub c_fit: f64,
    /// Smallest `β ≥ 0` with `d_t(o,y) + β√(c t)` nondecreasing in `t`
    /// for every sampled `y` (distances shrink at most like `β√(ct)`).
    pub beta_fit: f64,
    /// Smallest `β ≥ 0` with `d_t(o,y) − β√(c t)` nonincreasing in `t`
    /// (distances grow at most like `β√(ct)`).
    pub beta_growth: f64,
    /// Largest `|d_t − d_0|/d_0` seen.
    pub max_relative_change: f64,
    pub samples: usize,
    pub times: usize,
}

impl DistanceReport {
    pub fn is_finite(&self) -> bool {
        self.beta_fit.is_finite() && self.beta_growth.is_finite()
    }
}

/// Coordinate of the material point with initial arclength `m`.
fn locate(state: &GridState, m: f64) -> f64 {
    let mat = &state.material;
    let k = mat.partition_point(|&v| v <= m);
    if k == 0 {
        // Between the tip (label 0 at x = 0) and the first node.
        return state.x(0) * (m / mat[0]).clamp(0.0, 1.0);
    }
    if k >= mat.len() {
        return state.x(mat.len() - 1);
    }
    let (a, b) = (mat[k - 1], mat[k]);
    state.x(k - 1) + state.h * (m - a) / (b - a)
}

/// Fit the square-root distance-distortion constant over a series of states.
///
/// Points `y` are tracked by their material label, so the check remains
/// valid across regrids. Distances use the tip `o` as base point.
pub fn distance_distortion_check(states: &[GridState], c_fit: f64) -> Result<DistanceReport> {
    if states.len() < 2 {
        return Err(Error::Usage("distance check needs at least two stored states".into()));
    }
    if !(c_fit >= 0.0) {
        return Err(Error::Parameter(format!("c_fit must be nonnegative, got {c_fit}")));
    }
    let mut order: Vec<&GridState> = states.iter().collect();
    order.sort_by(|a, b| a.t.total_cmp(&b.t));
    let first = order[0];
    let usable = first.cells().saturating_sub(5);
    let stride = (usable / 64).max(1);
    let labels: Vec<f64> = (0..usable).step_by(stride).map(|i| first.material[i]).collect();
    let dist: Vec<Vec<f64>> =
        order.iter().map(|st| labels.iter().map(|&m| coordinate_arclength(st, locate(st, m))).collect()).collect();
    let roots: Vec<f64> = order.iter().map(|st| (c_fit * st.t).sqrt()).collect();
    let (mut shrink, mut grow, mut rel) = (0.0f64, 0.0f64, 0.0f64);
    for w in 0..order.len() - 1 {
        let gap = roots[w + 1] - roots[w];
        for (&da, &db) in dist[w].iter().zip(&dist[w + 1]) {
            let tol = 1e-10 * da.abs().max(1e-300);
            let change = db - da;
            if change.abs() <= tol {
                continue;
            }
            let need = if gap > 0.0 { change.abs() / gap } else { f64::INFINITY };
            if change < 0.0 {
                shrink = shrink.max(need);
            } else {
                grow = grow.max(need);
            }
        }
    }
    for row in &dist {
        for j in 0..labels.len() {
            let d0 = dist[0][j];
            if d0 > 0.0 {
                rel = rel.max((row[j] - d0).abs() / d0);
            }
        }
    }
    Ok(DistanceReport {
        c_fit,
        beta_fit: shrink,
        beta_growth: grow,
        max_relative_change: rel,
        samples: labels.len(),
        times: order.len(),
    })
}
