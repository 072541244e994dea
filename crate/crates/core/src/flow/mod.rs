//! Rotationally symmetric Ricci flow as a method-of-lines system.
//!
//! The metric is `σ(x,t)² dx² + f(x,t)² g_std` on a fixed coordinate
//! interval `[0, X]`; `x` labels material points. With `∂s = σ⁻¹ ∂x`,
//!
//! ```text
//! ∂t f = f_ss − (n−1)(1 − f_s²)/f,     ∂t σ = n (f_ss/f) σ.
//! ```
//!
//! Nodes sit at cell centres `x_i = (i + ½)h`. Two ghost cells on each side
//! carry the boundary conditions: at a smooth tip `f` is odd and `σ` even;
//! tip-free states (tubes) reflect both evenly. `f_s` uses a fourth-order
//! stencil so that `(1 − f_s²)/f²` stays accurate in the first cells, and
//! `f_ss` the conservative second-order flux form.

mod checkpoint;
mod remesh;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::curvature::{curvature_unchecked, CurvatureSample};
use crate::profiles::{AnalyticKind, Profile, Shape};
use crate::{Error, Result};

pub use checkpoint::{load_checkpoint, write_checkpoint, CHECKPOINT_SCHEMA};
pub use remesh::{regrid, remesh, restrict_half, sigma_drift, MonotoneCubic};

mod distance;
pub use distance::{distance_distortion_check, DistanceReport};

/// Outer boundary condition at `x = X`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OuterBc {
    /// `f_x = 0`, `σ_x = 0`.
    CylinderNeumann,
    /// `f_x/σ = slope`, `σ_x = 0`.
    LinearSlope { slope: f64 },
    /// Ghost values pinned at their initial values.
    Frozen,
}

/// Reflection rule at `x = 0`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TipBc {
    /// Smooth tip: `f` odd, `σ` even.
    Anchored,
    /// Tip-free test state: `f` and `σ` even.
    Neumann,
}

/// Coordinate-to-arclength map used when a grid was (re)built.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GridMap {
    /// `s = x`.
    Uniform,
    /// `s = amp · sinh(x / width)`: fine at the tip, coarse outside.
    Sinh { amp: f64, width: f64 },
}

impl GridMap {
    /// Map on `[0, length]` with `length` cells whose first cell has
    /// arclength `tip_spacing`. Falls back to uniform when that is not finer
    /// than `length/cells`.
    pub fn graded(length: f64, cells: usize, tip_spacing: f64) -> GridMap {
        let ratio = length / (cells as f64 * tip_spacing);
        if !(ratio > 1.0 + 1e-9) || !ratio.is_finite() {
            return GridMap::Uniform;
        }
        // sinh(u)/u = ratio
        let target = ratio.ln();
        let g = |u: f64| (u.sinh() / u).ln() - target;
        let (mut lo, mut hi) = (1e-6, 1.0);
        while g(hi) < 0.0 {
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if g(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let u = 0.5 * (lo + hi);
        GridMap::Sinh { amp: length / u.sinh(), width: length / u }
    }

    pub fn position(&self, x: f64) -> f64 {
        match *self {
            GridMap::Uniform => x,
            GridMap::Sinh { amp, width } => amp * (x / width).sinh(),
        }
    }

    pub fn stretch(&self, x: f64) -> f64 {
        match *self {
            GridMap::Uniform => 1.0,
            GridMap::Sinh { amp, width } => amp / width * (x / width).cosh(),
        }
    }
}

/// Discrete flow state.
#[derive(Clone, Debug, PartialEq)]
pub struct GridState {
    pub n: usize,
    pub h: f64,
    pub sigma: Vec<f64>,
    pub f: Vec<f64>,
    pub t: f64,
    pub bc_outer: OuterBc,
    pub tip: TipBc,
    /// Map of the most recent (re)grid; reference for σ drift.
    pub map: GridMap,
    /// Initial arclength of the material point at each node.
    pub material: Vec<f64>,
    /// `[f_N, f_{N+1}, σ_N, σ_{N+1}]` for [`OuterBc::Frozen`].
    pub outer_ghosts: Option<[f64; 4]>,
    pub step: u64,
    /// Last accepted step size (0 before the first step or after a regrid).
    pub dt_prev: f64,
    /// Incremented by every regrid.
    pub epoch: u64,
}

/// How [`init_state_with`] lays out the initial grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InitGrid {
    Uniform,
    /// Sinh-graded grid whose first cell has this arclength.
    Graded {
        tip_spacing: f64,
    },
    /// An explicit map; it must carry `[0, X]` onto itself. Reusing one map
    /// at several cell counts gives nested grids for convergence studies.
    Map(GridMap),
}

/// First and second arclength derivatives at every node.
#[derive(Clone, Debug)]
pub struct NodeDerivatives {
    pub fs: Vec<f64>,
    pub fss: Vec<f64>,
}

pub(crate) const GHOSTS: usize = 2;

/// Largest `sup|Rm|·(min f)²` for which a failed step counts as a closing neck.
const NECK_SCALE: f64 = 10.0;

impl GridState {
    /// State at `t = 0` from node values on a uniform coordinate grid.
    /// Material labels are the node arclengths.
    pub fn from_arrays(
        n: usize,
        h: f64,
        f: Vec<f64>,
        sigma: Vec<f64>,
        tip: TipBc,
        bc_outer: OuterBc,
    ) -> Result<GridState> {
        if f.len() != sigma.len() || f.len() < 4 {
            return Err(Error::Configuration("f and σ need equal lengths of at least 4".into()));
        }
        if !(h > 0.0) || n < 2 {
            return Err(Error::Configuration(format!("need h > 0 and n ≥ 2, got h = {h}, n = {n}")));
        }
        if bc_outer == OuterBc::Frozen {
            return Err(Error::Configuration("frozen boundaries need init_state".into()));
        }
        if matches!(GridState::is_admissible(&f, &sigma), Admissible::Crossing | Admissible::NonFinite) {
            return Err(Error::Configuration("f and σ must be positive and finite".into()));
        }
        let mut state = GridState {
            n,
            h,
            sigma,
            f,
            t: 0.0,
            bc_outer,
            tip,
            map: GridMap::Uniform,
            material: Vec::new(),
            outer_ghosts: None,
            step: 0,
            dt_prev: 0.0,
            epoch: 0,
        };
        state.material = state.node_arclength();
        Ok(state)
    }

    pub fn cells(&self) -> usize {
        self.f.len()
    }

    pub fn x_end(&self) -> f64 {
        self.h * self.cells() as f64
    }

    pub fn x(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.h
    }

    /// Arclength from the tip to each node (midpoint rule on cells).
    pub fn node_arclength(&self) -> Vec<f64> {
        trapezoid_arclength(&self.sigma, self.h)
    }

    pub fn total_length(&self) -> f64 {
        let n = self.cells();
        trapezoid_arclength(&self.sigma, self.h)[n - 1] + 0.5 * self.h * self.sigma[n - 1]
    }

    /// Copies of `f` and `σ` extended by two ghost cells at each end.
    pub(crate) fn extended(&self, f: &[f64], sg: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = f.len();
        let mut ef = vec![0.0; n + 2 * GHOSTS];
        let mut es = vec![0.0; n + 2 * GHOSTS];
        ef[GHOSTS..GHOSTS + n].copy_from_slice(f);
        es[GHOSTS..GHOSTS + n].copy_from_slice(sg);
        let parity = match self.tip {
            TipBc::Anchored => {
                es[GHOSTS] = tip_sigma(f[0], f[1], sg[1], self.h);
                -1.0
            }
            TipBc::Neumann => 1.0,
        };
        ef[1] = parity * f[0];
        ef[0] = parity * f[1];
        es[1] = es[GHOSTS];
        es[0] = sg[1];
        let (a, b) = (GHOSTS + n, GHOSTS + n + 1);
        match self.bc_outer {
            OuterBc::CylinderNeumann => {
                ef[a] = f[n - 1];
                ef[b] = f[n - 2];
                es[a] = sg[n - 1];
                es[b] = sg[n - 2];
            }
            OuterBc::LinearSlope { slope } => {
                let rise = slope * sg[n - 1] * self.h;
                ef[a] = f[n - 1] + rise;
                ef[b] = f[n - 2] + 3.0 * rise;
                es[a] = sg[n - 1];
                es[b] = sg[n - 2];
            }
            OuterBc::Frozen => {
                let g = self.outer_ghosts.expect("frozen boundary without stored ghosts");
                ef[a] = g[0];
                ef[b] = g[1];
                es[a] = g[2];
                es[b] = g[3];
            }
        }
        (ef, es)
    }

    /// `f_s` and `f_ss` for arrays shaped like this state.
    ///
    /// Node spacing in arclength is `h σ_face`. `f_ss` is the divided
    /// difference of the face slopes `Δf/(h σ_face)`; `f_s` differentiates
    /// the quartic through the five nearest nodes (fourth order).
    pub fn derivatives_of(&self, f: &[f64], sg: &[f64]) -> NodeDerivatives {
        let n = f.len();
        let (ef, es) = self.extended(f, sg);
        let h = self.h;
        let gap: Vec<f64> = (0..ef.len() - 1).map(|k| 0.5 * h * (es[k] + es[k + 1])).collect();
        let mut fs = Vec::with_capacity(n);
        let mut fss = Vec::with_capacity(n);
        for i in 0..n {
            let j = i + GHOSTS;
            let (l, r) = ((ef[j] - ef[j - 1]) / gap[j - 1], (ef[j + 1] - ef[j]) / gap[j]);
            let pos = [-gap[j - 2] - gap[j - 1], -gap[j - 1], 0.0, gap[j], gap[j] + gap[j + 1]];
            fs.push((0..5).map(|k| lagrange_slope(&pos, k) * ef[j - 2 + k]).sum());
            fss.push((r - l) / (h * es[j]));
        }
        NodeDerivatives { fs, fss }
    }

    pub fn derivatives(&self) -> NodeDerivatives {
        self.derivatives_of(&self.f, &self.sigma)
    }

    fn rhs(&self, f: &[f64], sg: &[f64], df: &mut [f64], ds: &mut [f64]) {
        let d = self.derivatives_of(f, sg);
        let n = self.n as f64;
        for i in 0..f.len() {
            let (fs, fss) = (d.fs[i], d.fss[i]);
            df[i] = fss - (n - 1.0) * (1.0 - fs * fs) / f[i];
            ds[i] = n * fss / f[i] * sg[i];
        }
        if self.tip == TipBc::Anchored {
            // σ₀ is slaved to the tip condition and never integrated.
            ds[0] = 0.0;
        }
    }

    /// Curvature at every node, with `s` the node arclength.
    pub fn curvature_samples(&self) -> Vec<CurvatureSample> {
        let d = self.derivatives();
        let s = self.node_arclength();
        let n = self.n as f64;
        (0..self.cells()).map(|i| curvature_unchecked(s[i], self.f[i], d.fs[i], d.fss[i], n)).collect()
    }

    pub fn sup_rm(&self) -> f64 {
        self.curvature_samples()
            .iter()
            .fold(0.0, |m, c| if c.rm_norm > m || c.rm_norm.is_nan() { c.rm_norm } else { m })
    }

    pub fn diagnostics(&self, dt_taken: f64) -> DiagnosticsRecord {
        let samples = self.curvature_samples();
        let d = self.derivatives();
        let mut rec = DiagnosticsRecord {
            t: self.t,
            sup_rm: 0.0,
            lambda_t: 0.0,
            min_fs: f64::INFINITY,
            min_f: f64::INFINITY,
            min_scal: f64::INFINITY,
            max_scal: f64::NEG_INFINITY,
            dt_taken,
        };
        for (i, c) in samples.iter().enumerate() {
            rec.sup_rm = rec.sup_rm.max(c.rm_norm);
            rec.min_fs = rec.min_fs.min(d.fs[i]);
            rec.min_f = rec.min_f.min(self.f[i]);
            rec.min_scal = rec.min_scal.min(c.scal);
            rec.max_scal = rec.max_scal.max(c.scal);
        }
        rec.lambda_t = rec.t * rec.sup_rm;
        rec
    }

    /// Largest `|f_ghost ∓ f_mirror|` relative to `max |f|` at the tip.
    pub fn parity_defect(&self) -> f64 {
        let (ef, es) = self.extended(&self.f, &self.sigma);
        let scale = self.f.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
        let sign = if self.tip == TipBc::Anchored { 1.0 } else { -1.0 };
        let df = (ef[1] + sign * ef[2]).abs().max((ef[0] + sign * ef[3]).abs());
        let dsg = (es[1] - es[2]).abs().max((es[0] - es[3]).abs());
        df.max(dsg) / scale
    }

    fn is_admissible(f: &[f64], sg: &[f64]) -> Admissible {
        let mut bad = Admissible::Ok;
        for (a, b) in f.iter().zip(sg) {
            if !a.is_finite() || !b.is_finite() {
                return Admissible::NonFinite;
            }
            if *a <= 0.0 || *b <= 0.0 {
                bad = Admissible::Crossing;
            }
        }
        bad
    }

    /// Node index of the smallest `f`.
    pub fn argmin_f(&self) -> usize {
        let mut best = 0;
        for (i, v) in self.f.iter().enumerate() {
            if *v < self.f[best] {
                best = i;
            }
        }
        best
    }

    #[cfg(test)]
    pub(crate) fn uniform_test_state(cells: usize, x_end: f64, sigma: impl Fn(f64) -> f64) -> GridState {
        let h = x_end / cells as f64;
        let xs: Vec<f64> = (0..cells).map(|i| (i as f64 + 0.5) * h).collect();
        GridState {
            n: 2,
            h,
            sigma: xs.iter().map(|&x| sigma(x)).collect(),
            f: xs.clone(),
            t: 0.0,
            bc_outer: OuterBc::LinearSlope { slope: 1.0 },
            tip: TipBc::Anchored,
            map: GridMap::Uniform,
            material: xs,
            outer_ghosts: None,
            step: 0,
            dt_prev: 0.0,
            epoch: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Admissible {
    Ok,
    Crossing,
    NonFinite,
}

/// Per-record summary of a state.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRecord {
    pub t: f64,
    pub sup_rm: f64,
    pub lambda_t: f64,
    pub min_fs: f64,
    pub min_f: f64,
    pub min_scal: f64,
    pub max_scal: f64,
    pub dt_taken: f64,
}

impl DiagnosticsRecord {
    pub const CSV_HEADER: &'static str = "t,sup_rm,lambda_t,min_fs,min_f,min_scal,max_scal,dt_taken";

    pub fn csv_row(&self) -> String {
        format!(
            "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            self.t, self.sup_rm, self.lambda_t, self.min_fs, self.min_f, self.min_scal, self.max_scal, self.dt_taken
        )
    }

    pub fn is_finite(&self) -> bool {
        [self.t, self.sup_rm, self.lambda_t, self.min_fs, self.min_f, self.min_scal, self.max_scal, self.dt_taken]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Sample `profile` on a uniform grid with `σ ≡ 1`.
pub fn init_state(profile: &Profile, n: usize, cells: usize, x_end: f64, bc_outer: OuterBc) -> Result<GridState> {
    init_state_with(profile, n, cells, x_end, bc_outer, InitGrid::Uniform)
}

pub fn init_state_with(
    profile: &Profile,
    n: usize,
    cells: usize,
    x_end: f64,
    bc_outer: OuterBc,
    grid: InitGrid,
) -> Result<GridState> {
    let config = |m: String| Err(Error::Configuration(m));
    if cells < 64 {
        return config(format!("need at least 64 cells, got {cells}"));
    }
    if n < 2 {
        return config(format!("fibre dimension must be at least 2, got {n}"));
    }
    if !(x_end > 0.0) || x_end > profile.domain_end() * (1.0 + 1e-12) {
        return config(format!("grid end {x_end} outside the profile domain (0, {}]", profile.domain_end()));
    }
    if matches!(profile.shape(), Shape::Analytic(AnalyticKind::SphereCap))
        && x_end > std::f64::consts::FRAC_PI_2 + 1e-12
    {
        return config(format!("sphere cap on [0, {x_end}] passes the equator; f would vanish inside the flow domain"));
    }
    let tip = if profile.is_tip_anchored() {
        TipBc::Anchored
    } else {
        let slope = profile.derivative(1, 0.0);
        if slope.abs() > 1e-8 {
            return config(format!("tip-free profile needs f'(0) = 0, got {slope}"));
        }
        TipBc::Neumann
    };
    let end = profile.jet(x_end);
    match bc_outer {
        OuterBc::CylinderNeumann if end.d1.abs() > 1e-6 => {
            return config(format!("cylinder_neumann needs a capped profile, but f'({x_end}) = {}", end.d1));
        }
        OuterBc::LinearSlope { slope } if (end.d1 - slope).abs() > 1e-6 => {
            return config(format!("linear_slope({slope}) does not match f'({x_end}) = {}", end.d1));
        }
        _ => {}
    }
    let map = match grid {
        InitGrid::Uniform => GridMap::Uniform,
        InitGrid::Graded { tip_spacing } => {
            if !(tip_spacing > 0.0) {
                return config(format!("tip spacing must be positive, got {tip_spacing}"));
            }
            GridMap::graded(x_end, cells, tip_spacing)
        }
        InitGrid::Map(map) => {
            let end = map.position(x_end);
            if !((end - x_end).abs() <= 1e-9 * x_end) {
                return config(format!("grid map sends X = {x_end} to {end}"));
            }
            map
        }
    };
    let h = x_end / cells as f64;
    let xs: Vec<f64> = (0..cells).map(|i| (i as f64 + 0.5) * h).collect();
    let sigma: Vec<f64> = xs.iter().map(|&x| map.stretch(x)).collect();
    let s: Vec<f64> = trapezoid_arclength(&sigma, h).into_iter().map(|s| s.min(x_end)).collect();
    let f: Vec<f64> = s.iter().map(|&s| profile.value(s)).collect();
    if let Some(i) = f.iter().position(|v| !(*v > 0.0)) {
        return config(format!("profile is not positive at s = {}", s[i]));
    }
    let outer_ghosts = if bc_outer == OuterBc::Frozen {
        let extrapolate = |x: f64| {
            let ds = map.position(x) - x_end;
            end.f + end.d1 * ds + 0.5 * end.d2 * ds * ds
        };
        let (x0, x1) = (x_end + 0.5 * h, x_end + 1.5 * h);
        Some([extrapolate(x0), extrapolate(x1), map.stretch(x0), map.stretch(x1)])
    } else {
        None
    };
    Ok(GridState {
        n,
        h,
        sigma,
        f,
        t: 0.0,
        bc_outer,
        tip,
        map,
        material: s,
        outer_ghosts,
        step: 0,
        dt_prev: 0.0,
        epoch: 0,
    })
}

/// Step-size control and output cadence for [`step`] and [`evolve`].
#[derive(Clone, Debug, PartialEq)]
pub struct FlowOptions {
    /// `Δt ≤ cfl · (min σh)²`; must lie in `(0, 0.2]`.
    pub cfl: f64,
    /// Accepted steps between diagnostics records.
    pub cadence: u64,
    /// Halvings below the CFL step before a failing step becomes a signal.
    pub max_halvings: u32,
    /// A step is rejected when `sup |Rm|` grows by more than this factor.
    pub jump_factor: f64,
    /// Regrid when σ drifts from the grid map by more than this ratio.
    pub remesh_threshold: Option<f64>,
    /// Coarsen the tip when its cell is finer than half of
    /// `tip_resolution / √sup|Rm|`.
    pub tip_resolution: Option<f64>,
    pub snapshots: Option<SnapshotPolicy>,
    /// Directory receiving a checkpoint for every snapshot.
    pub checkpoint_dir: Option<PathBuf>,
    /// Stop (cause [`Termination::StepLimit`]) after this many total steps.
    pub max_steps: Option<u64>,
    /// CSV file receiving each diagnostics row as it is recorded (appended,
    /// header written when the file is empty).
    pub series_path: Option<PathBuf>,
}

impl Default for FlowOptions {
    fn default() -> Self {
        FlowOptions {
            cfl: 0.1,
            cadence: 10,
            max_halvings: 40,
            jump_factor: 10.0,
            remesh_threshold: None,
            tip_resolution: None,
            snapshots: None,
            checkpoint_dir: None,
            max_steps: None,
            series_path: None,
        }
    }
}

impl FlowOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.cfl > 0.0 && self.cfl <= 0.2) {
            return Err(Error::Configuration(format!("cfl must lie in (0, 0.2], got {}", self.cfl)));
        }
        if self.cadence == 0 {
            return Err(Error::Configuration("cadence must be at least 1".into()));
        }
        if let Some(th) = self.remesh_threshold {
            if !(th > 1.0) {
                return Err(Error::Configuration(format!("remesh threshold must exceed 1, got {th}")));
            }
        }
        if let Some(r) = self.tip_resolution {
            if !(r > 0.0) {
                return Err(Error::Configuration(format!("tip resolution must be positive, got {r}")));
            }
        }
        if let Some(p) = self.snapshots {
            if p.every == 0 || p.burst == 0 {
                return Err(Error::Configuration("snapshot every/burst must be at least 1".into()));
            }
        }
        Ok(())
    }
}

/// Keep records `r` with `r mod every < burst` (record index `r = step/cadence`).
/// Bursts of consecutive records give the oracles centred time differences.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnapshotPolicy {
    pub every: u64,
    pub burst: u64,
}

impl SnapshotPolicy {
    pub fn keeps(&self, record: u64) -> bool {
        record % self.every < self.burst
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "cause", rename_all = "snake_case")]
pub enum FlowSignal {
    Extinction { t: f64, x: f64, s: f64, min_f: f64 },
    Blowup { t: f64, reason: String },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepInfo {
    pub dt: f64,
    pub halvings: u32,
}

/// Node arclengths measured with the same face spacing `h(σᵢ + σᵢ₊₁)/2` the
/// derivative stencils use; the first node sits `σ₀h/2` from the tip.
pub fn trapezoid_arclength(sigma: &[f64], h: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(sigma.len());
    let mut acc = 0.5 * h * sigma[0];
    out.push(acc);
    for w in sigma.windows(2) {
        acc += 0.5 * h * (w[0] + w[1]);
        out.push(acc);
    }
    out
}

/// Weight of node `k` in the derivative at `pos[2]` (= 0) of the interpolant.
fn lagrange_slope(pos: &[f64; 5], k: usize) -> f64 {
    if k == 2 {
        return (0..5).filter(|&m| m != 2).map(|m| -1.0 / pos[m]).sum();
    }
    let mut w = 1.0 / pos[k];
    for m in (0..5).filter(|&m| m != 2 && m != k) {
        w *= -pos[m] / (pos[k] - pos[m]);
    }
    w
}

/// σ at the first node of a tip-anchored grid, fixed by smoothness.
///
/// Fits `f = s + a s³` through the first two nodes, with `s₀ = σ₀h/2` and
/// `s₁ = s₀ + h(σ₀ + σ₁)/2`, and solves for `s₀`. Evolving σ₀ freely lets
/// the cone angle at the first cell drift and grow.
pub(crate) fn tip_sigma(f0: f64, f1: f64, sigma1: f64, h: f64) -> f64 {
    let c = 0.5 * h * sigma1;
    let g = |s: f64| (2.0 * s + c - f1) * s.powi(3) + (f0 - s) * (2.0 * s + c).powi(3);
    let dg = |s: f64| {
        let w = 2.0 * s + c;
        2.0 * s.powi(3) + 3.0 * (w - f1) * s * s - w.powi(3) + 6.0 * (f0 - s) * w * w
    };
    let mut s = f0;
    for _ in 0..50 {
        let d = dg(s);
        if !(d.is_finite() && d != 0.0) {
            break;
        }
        let next = s - g(s) / d;
        if !(next.is_finite() && next > 0.5 * f0 && next < 2.0 * f0) {
            return 2.0 * f0 / h;
        }
        let done = (next - s).abs() <= 1e-15 * s;
        s = next;
        if done {
            return 2.0 * s / h;
        }
    }
    2.0 * f0 / h
}

pub fn cfl_step(state: &GridState, cfl: f64) -> f64 {
    let min_ds = state.sigma.iter().fold(f64::INFINITY, |m, &s| m.min(s)) * state.h;
    cfl * min_ds * min_ds
}

fn rk4(state: &GridState, dt: f64) -> std::result::Result<(Vec<f64>, Vec<f64>), Admissible> {
    let n = state.cells();
    let (f0, s0) = (&state.f, &state.sigma);
    let mut kf = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    let mut ks = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    let mut yf = f0.clone();
    let mut ys = s0.clone();
    let weights = [0.5, 0.5, 1.0];
    for stage in 0..4 {
        if stage > 0 {
            let c = weights[stage - 1] * dt;
            for i in 0..n {
                yf[i] = f0[i] + c * kf[stage - 1][i];
                ys[i] = s0[i] + c * ks[stage - 1][i];
            }
            match GridState::is_admissible(&yf, &ys) {
                Admissible::Ok => {}
                bad => return Err(bad),
            }
        }
        let (a, b) = (&mut kf[stage], &mut ks[stage]);
        state.rhs(&yf, &ys, a, b);
    }
    for i in 0..n {
        yf[i] = f0[i] + dt / 6.0 * (kf[0][i] + 2.0 * kf[1][i] + 2.0 * kf[2][i] + kf[3][i]);
        ys[i] = s0[i] + dt / 6.0 * (ks[0][i] + 2.0 * ks[1][i] + 2.0 * ks[2][i] + ks[3][i]);
    }
    if state.tip == TipBc::Anchored && n > 1 {
        ys[0] = tip_sigma(yf[0], yf[1], ys[1], state.h);
    }
    match GridState::is_admissible(&yf, &ys) {
        Admissible::Ok => Ok((yf, ys)),
        bad => Err(bad),
    }
}

/// Advance by one accepted explicit RK4 step, never past `t_end`.
///
/// The trial step is `min(2·dt_prev, cfl·(min σh)²)`. A trial is rejected
/// and halved when some `f` or `σ` would become non-positive, a value is not
/// finite, or `sup |Rm|` jumps by more than `jump_factor`. Once the trial
/// falls `max_halvings` halvings below the CFL step the failure is returned
/// as a signal: extinction if `f` kept crossing zero or the curvature jump
/// sits at a closing neck, blowup otherwise.
pub fn step(state: &mut GridState, opts: &FlowOptions, t_end: f64) -> std::result::Result<StepInfo, FlowSignal> {
    let cap = cfl_step(state, opts.cfl);
    let floor = cap * 0.5f64.powi(opts.max_halvings as i32);
    let mut dt = if state.dt_prev > 0.0 { (2.0 * state.dt_prev).min(cap) } else { cap };
    let remaining = t_end - state.t;
    let mut clipped = false;
    if dt >= remaining {
        dt = remaining;
        clipped = true;
    }
    let rm_before = state.sup_rm();
    let min_ds = state.sigma.iter().fold(f64::INFINITY, |m, &s| m.min(s)) * state.h;
    let rm_floor = 1e-9 / (min_ds * min_ds);
    let mut halvings = 0;
    let mut last;
    let mut reason;
    loop {
        match rk4(state, dt) {
            Ok((f, sigma)) => {
                let mut trial = state.clone();
                trial.f = f;
                trial.sigma = sigma;
                let rm_after = trial.sup_rm();
                if !rm_after.is_finite() {
                    last = Admissible::NonFinite;
                    reason = "curvature is not finite".to_string();
                } else if rm_after > opts.jump_factor * rm_before && rm_after > rm_floor {
                    last = Admissible::NonFinite;
                    reason = format!("sup |Rm| jumped from {rm_before:e} to {rm_after:e}");
                } else {
                    state.f = trial.f;
                    state.sigma = trial.sigma;
                    state.t = if clipped && halvings == 0 { t_end } else { state.t + dt };
                    state.step += 1;
                    state.dt_prev = dt;
                    return Ok(StepInfo { dt, halvings });
                }
            }
            Err(bad) => {
                last = bad;
                reason = match bad {
                    Admissible::Crossing => "f or σ would become non-positive".to_string(),
                    _ => "non-finite values".to_string(),
                };
            }
        }
        if 0.5 * dt < floor {
            break;
        }
        dt *= 0.5;
        halvings += 1;
    }
    // A curvature jump at a neck whose radius already matches the curvature
    // scale is the neck closing, not a numerical failure.
    let i = state.argmin_f();
    let neck_closing = rm_before.is_finite() && rm_before * state.f[i] * state.f[i] <= NECK_SCALE;
    if last == Admissible::Crossing || (reason.starts_with("sup |Rm| jumped") && neck_closing) {
        let s = state.node_arclength()[i];
        Err(FlowSignal::Extinction { t: state.t, x: state.x(i), s, min_f: state.f[i] })
    } else {
        Err(FlowSignal::Blowup { t: state.t, reason })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "cause", rename_all = "snake_case")]
pub enum Termination {
    Horizon,
    Extinction { t: f64, x: f64, s: f64, min_f: f64 },
    Blowup { t: f64, reason: String },
    StepLimit { step: u64 },
}

impl Termination {
    pub fn label(&self) -> &'static str {
        match self {
            Termination::Horizon => "horizon",
            Termination::Extinction { .. } => "extinction",
            Termination::Blowup { .. } => "blowup",
            Termination::StepLimit { .. } => "step_limit",
        }
    }
}

impl From<FlowSignal> for Termination {
    fn from(s: FlowSignal) -> Self {
        match s {
            FlowSignal::Extinction { t, x, s, min_f } => Termination::Extinction { t, x, s, min_f },
            FlowSignal::Blowup { t, reason } => Termination::Blowup { t, reason },
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub state: GridState,
    pub records: Vec<DiagnosticsRecord>,
    pub snapshots: Vec<GridState>,
    pub checkpoints: Vec<PathBuf>,
    pub termination: Termination,
    /// Number of regrids performed during this call.
    pub regrids: u64,
}

/// An I/O failure during [`evolve`], with everything computed so far.
#[derive(Debug, thiserror::Error)]
#[error("{error}")]
pub struct EvolveFailure {
    pub error: Error,
    pub partial: Box<RunOutput>,
}

fn maybe_regrid(state: &mut GridState, opts: &FlowOptions) -> Result<bool> {
    if state.bc_outer == OuterBc::Frozen {
        return Ok(false);
    }
    let tip_spacing = state.sigma[0] * state.h;
    if let Some(res) = opts.tip_resolution {
        let rm = state.sup_rm();
        if rm > 0.0 {
            let target = res / rm.sqrt();
            let uniform = state.total_length() / state.cells() as f64;
            if tip_spacing < 0.5 * target && tip_spacing < 0.99 * uniform {
                *state = regrid(state, InitGrid::Graded { tip_spacing: target })?;
                return Ok(true);
            }
        }
    }
    if let Some(th) = opts.remesh_threshold {
        if sigma_drift(state) > th {
            let layout =
                if opts.tip_resolution.is_some() { InitGrid::Graded { tip_spacing } } else { InitGrid::Uniform };
            *state = regrid(state, layout)?;
            return Ok(true);
        }
    }
    Ok(false)
}

/// Integrate to `t_end`, recording diagnostics every `cadence` steps.
///
/// A fresh state (`step == 0`) is recorded before the first step. Regrid
/// checks run only on record boundaries so a resumed run makes the same
/// decisions as an uninterrupted one.
pub fn evolve(state: GridState, t_end: f64, opts: &FlowOptions) -> std::result::Result<RunOutput, EvolveFailure> {
    let mut out = RunOutput {
        state,
        records: Vec::new(),
        snapshots: Vec::new(),
        checkpoints: Vec::new(),
        termination: Termination::Horizon,
        regrids: 0,
    };
    macro_rules! fail {
        ($e:expr) => {
            return Err(EvolveFailure { error: $e, partial: Box::new(out) })
        };
    }
    if let Err(e) = opts.validate() {
        fail!(e);
    }
    let mut sink = match opts.series_path.as_deref().map(SeriesSink::open).transpose() {
        Ok(s) => s,
        Err(e) => fail!(e),
    };
    macro_rules! record {
        ($rec:expr) => {{
            let rec = $rec;
            if let Some(sink) = sink.as_mut() {
                if let Err(e) = sink.push(&rec) {
                    out.records.push(rec);
                    fail!(e);
                }
            }
            out.records.push(rec);
        }};
    }
    if !(t_end > out.state.t) {
        fail!(Error::Parameter(format!("t_end = {t_end} must exceed the state time {}", out.state.t)));
    }
    if out.state.step == 0 {
        record!(out.state.diagnostics(0.0));
        if let Err(e) = keep_snapshot(&mut out, opts, 0) {
            fail!(e);
        }
    }
    let mut last_dt = 0.0;
    loop {
        if out.state.t >= t_end {
            out.termination = Termination::Horizon;
            break;
        }
        if let Some(limit) = opts.max_steps {
            if out.state.step >= limit {
                out.termination = Termination::StepLimit { step: out.state.step };
                return Ok(out);
            }
        }
        if out.state.step.is_multiple_of(opts.cadence) {
            match maybe_regrid(&mut out.state, opts) {
                Ok(true) => out.regrids += 1,
                Ok(false) => {}
                Err(e) => fail!(e),
            }
        }
        match step(&mut out.state, opts, t_end) {
            Ok(info) => last_dt = info.dt,
            Err(signal) => {
                out.termination = signal.into();
                break;
            }
        }
        if out.state.step.is_multiple_of(opts.cadence) {
            let rec = out.state.diagnostics(last_dt);
            if !rec.is_finite() {
                out.termination = Termination::Blowup { t: rec.t, reason: "non-finite diagnostics".into() };
                record!(rec);
                break;
            }
            record!(rec);
            let index = out.state.step / opts.cadence;
            if let Err(e) = keep_snapshot(&mut out, opts, index) {
                fail!(e);
            }
        }
    }
    // Close the series with the final state unless it was just recorded.
    if !out.state.step.is_multiple_of(opts.cadence) || out.records.is_empty() {
        record!(out.state.diagnostics(last_dt));
        if let Err(e) = store_snapshot(&mut out, opts) {
            fail!(e);
        }
    }
    Ok(out)
}

struct SeriesSink {
    path: PathBuf,
    file: std::fs::File,
}

impl SeriesSink {
    fn open(path: &std::path::Path) -> Result<Self> {
        use std::io::Write;
        let mut file =
            std::fs::OpenOptions::new().create(true).append(true).open(path).map_err(|e| Error::io(path, e))?;
        let empty = file.metadata().map_err(|e| Error::io(path, e))?.len() == 0;
        if empty {
            writeln!(file, "{}", DiagnosticsRecord::CSV_HEADER).map_err(|e| Error::io(path, e))?;
        }
        Ok(SeriesSink { path: path.to_path_buf(), file })
    }

    fn push(&mut self, rec: &DiagnosticsRecord) -> Result<()> {
        use std::io::Write;
        writeln!(self.file, "{}", rec.csv_row()).map_err(|e| Error::io(&self.path, e))
    }
}

fn keep_snapshot(out: &mut RunOutput, opts: &FlowOptions, record: u64) -> Result<()> {
    match opts.snapshots {
        Some(p) if p.keeps(record) => store_snapshot(out, opts),
        _ => Ok(()),
    }
}

fn store_snapshot(out: &mut RunOutput, opts: &FlowOptions) -> Result<()> {
    if opts.snapshots.is_none() {
        return Ok(());
    }
    if let Some(dir) = &opts.checkpoint_dir {
        let path = dir.join(format!("ckpt_{:010}.json", out.state.step));
        write_checkpoint(&path, &out.state)?;
        out.checkpoints.push(path);
    }
    out.snapshots.push(out.state.clone());
    Ok(())
}
