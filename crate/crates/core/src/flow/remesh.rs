//! Resampling a state onto a new grid in current arclength.

use super::{trapezoid_arclength, GridMap, GridState, InitGrid, TipBc, GHOSTS};
use crate::{Error, Result};

/// Piecewise cubic Hermite interpolant with Fritsch–Carlson slope limiting.
///
/// Initial slopes come from the three-point parabola through neighbouring
/// nodes, so smooth monotone data are reproduced to third order.
#[derive(Clone, Debug)]
pub struct MonotoneCubic {
    xs: Vec<f64>,
    ys: Vec<f64>,
    ds: Vec<f64>,
}

impl MonotoneCubic {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        let n = xs.len();
        if n < 3 || ys.len() != n {
            return Err(Error::Parameter("monotone cubic needs at least three matching samples".into()));
        }
        if xs.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Parameter("interpolation abscissae must increase strictly".into()));
        }
        let hs: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).collect();
        let secants: Vec<f64> = (0..n - 1).map(|i| (ys[i + 1] - ys[i]) / hs[i]).collect();
        let mut ds = vec![0.0; n];
        for i in 1..n - 1 {
            ds[i] = (hs[i] * secants[i - 1] + hs[i - 1] * secants[i]) / (hs[i - 1] + hs[i]);
        }
        ds[0] = ((2.0 * hs[0] + hs[1]) * secants[0] - hs[0] * secants[1]) / (hs[0] + hs[1]);
        let (a, b) = (hs[n - 2], hs[n - 3]);
        ds[n - 1] = ((2.0 * a + b) * secants[n - 2] - a * secants[n - 3]) / (a + b);
        // Fritsch–Carlson: no overshoot at extrema, bounded slope ratios.
        for i in 0..n {
            let left = if i > 0 { secants[i - 1] } else { secants[0] };
            let right = if i + 1 < n { secants[i] } else { secants[n - 2] };
            if left * right <= 0.0 || ds[i] * right < 0.0 {
                ds[i] = 0.0;
            }
        }
        for k in 0..n - 1 {
            let m = secants[k];
            if m == 0.0 {
                ds[k] = 0.0;
                ds[k + 1] = 0.0;
                continue;
            }
            let (alpha, beta) = (ds[k] / m, ds[k + 1] / m);
            let r2 = alpha * alpha + beta * beta;
            if r2 > 9.0 {
                let tau = 3.0 / r2.sqrt();
                ds[k] = tau * alpha * m;
                ds[k + 1] = tau * beta * m;
            }
        }
        Ok(MonotoneCubic { xs, ys, ds })
    }

    /// Value at `x`; linear extrapolation with the end slopes outside the data.
    pub fn eval(&self, x: f64) -> f64 {
        let n = self.xs.len();
        if x <= self.xs[0] {
            return self.ys[0] + self.ds[0] * (x - self.xs[0]);
        }
        if x >= self.xs[n - 1] {
            return self.ys[n - 1] + self.ds[n - 1] * (x - self.xs[n - 1]);
        }
        let k = self.xs.partition_point(|&v| v <= x) - 1;
        let h = self.xs[k + 1] - self.xs[k];
        let u = (x - self.xs[k]) / h;
        let (u2, u3) = (u * u, u * u * u);
        let h00 = 2.0 * u3 - 3.0 * u2 + 1.0;
        let h10 = u3 - 2.0 * u2 + u;
        let h01 = -2.0 * u3 + 3.0 * u2;
        let h11 = u3 - u2;
        h00 * self.ys[k] + h10 * h * self.ds[k] + h01 * self.ys[k + 1] + h11 * h * self.ds[k + 1]
    }
}

/// `max(σ/σ_map) / min(σ/σ_map)` with `σ_map` the stretch of the current grid map.
pub fn sigma_drift(state: &GridState) -> f64 {
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for (i, s) in state.sigma.iter().enumerate() {
        let r = s / state.map.stretch(state.x(i));
        lo = lo.min(r);
        hi = hi.max(r);
    }
    hi / lo
}

/// Resample onto a grid uniform in current arclength when `max σ / min σ`
/// exceeds `threshold`; otherwise return the state unchanged.
pub fn remesh(state: &GridState, threshold: f64) -> GridState {
    let (lo, hi) = state.sigma.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &s| (lo.min(s), hi.max(s)));
    if hi / lo <= threshold {
        return state.clone();
    }
    regrid(state, InitGrid::Uniform).unwrap_or_else(|_| state.clone())
}

/// Resample `f` and the material labels onto a fresh grid spanning the
/// current total arclength, laid out by `layout`.
pub fn regrid(state: &GridState, layout: InitGrid) -> Result<GridState> {
    let cells = state.cells();
    let length = state.total_length();
    let s = state.node_arclength();
    let (ef, _) = state.extended(&state.f, &state.sigma);
    let mut xs = Vec::with_capacity(cells + 4);
    let mut fs = Vec::with_capacity(cells + 4);
    let mut ms = Vec::with_capacity(cells + 4);
    let tip_sign = if state.tip == TipBc::Anchored { -1.0 } else { 1.0 };
    xs.push(-s[0]);
    fs.push(tip_sign * state.f[0]);
    ms.push(-state.material[0]);
    xs.extend_from_slice(&s);
    fs.extend_from_slice(&state.f);
    ms.extend_from_slice(&state.material);
    let ghost_s = 2.0 * length - s[cells - 1];
    xs.push(ghost_s);
    fs.push(ef[GHOSTS + cells]);
    let dm = state.material[cells - 1] - state.material[cells - 2];
    let ds = s[cells - 1] - s[cells - 2];
    ms.push(state.material[cells - 1] + dm / ds * (ghost_s - s[cells - 1]));
    let f_interp = MonotoneCubic::new(xs.clone(), fs)?;
    let m_interp = MonotoneCubic::new(xs, ms)?;

    let map = match layout {
        InitGrid::Uniform => GridMap::Uniform,
        InitGrid::Graded { tip_spacing } => GridMap::graded(length, cells, tip_spacing),
        InitGrid::Map(map) => {
            let end = map.position(length);
            if !((end - length).abs() <= 1e-9 * length) {
                return Err(Error::Configuration(format!("grid map sends {length} to {end}")));
            }
            map
        }
    };
    let h = length / cells as f64;
    let mut next = state.clone();
    next.h = h;
    next.map = map;
    next.dt_prev = 0.0;
    next.epoch += 1;
    for i in 0..cells {
        next.sigma[i] = map.stretch((i as f64 + 0.5) * h);
    }
    for (i, target) in trapezoid_arclength(&next.sigma, h).into_iter().enumerate() {
        next.f[i] = f_interp.eval(target);
        next.material[i] = m_interp.eval(target);
    }
    if let Some(i) = next.f.iter().position(|v| !(*v > 0.0)) {
        return Err(Error::Domain(format!("regrid produced f ≤ 0 at node {i}")));
    }
    Ok(next)
}

/// Restrict to half as many cells on the same grid map.
///
/// Each coarse node lies midway between two fine nodes in `x`; `f`, `σ` and
/// the material labels are interpolated with the centred six-point stencil,
/// using the boundary ghosts near either end. The result is a fresh run
/// (step 0) at the state's time.
pub fn restrict_half(state: &GridState) -> Result<GridState> {
    let cells = state.cells();
    if !cells.is_multiple_of(2) || cells / 2 < 64 {
        return Err(Error::Parameter(format!("cannot halve {cells} cells")));
    }
    if state.bc_outer == super::OuterBc::Frozen {
        return Err(Error::Configuration("restriction does not support a frozen boundary".into()));
    }
    const W: [f64; 6] = [3.0, -25.0, 150.0, 150.0, -25.0, 3.0];
    let (ef, es) = state.extended(&state.f, &state.sigma);
    let m = &state.material;
    let tip_sign = if state.tip == TipBc::Anchored { -1.0 } else { 1.0 };
    let mut em = vec![tip_sign * m[1], tip_sign * m[0]];
    em.extend_from_slice(m);
    let step = m[cells - 1] - m[cells - 2];
    em.push(m[cells - 1] + step);
    em.push(m[cells - 1] + 2.0 * step);
    let mid = |e: &[f64], i: usize| {
        // fine nodes 2i−2 ..= 2i+3 sit at extended offsets 2i ..= 2i+5
        W.iter().zip(&e[2 * i..2 * i + 6]).map(|(w, v)| w * v).sum::<f64>() / 256.0
    };
    let half = cells / 2;
    let mut next = state.clone();
    next.h = 2.0 * state.h;
    next.f = (0..half).map(|i| mid(&ef, i)).collect();
    next.sigma = (0..half).map(|i| mid(&es, i)).collect();
    next.material = (0..half).map(|i| mid(&em, i)).collect();
    next.step = 0;
    next.dt_prev = 0.0;
    next.epoch = 0;
    if next.tip == TipBc::Anchored {
        next.sigma[0] = super::tip_sigma(next.f[0], next.f[1], next.sigma[1], next.h);
    }
    if let Some(i) = next.f.iter().position(|v| !(*v > 0.0)) {
        return Err(Error::Domain(format!("restriction produced f ≤ 0 at node {i}")));
    }
    Ok(next)
}
