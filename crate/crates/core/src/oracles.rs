//! Discrete checks of the identities and inequalities that hold along the flow.
//!
//! Every oracle post-processes stored states; nothing is re-simulated. Time
//! derivatives use three consecutive states on the same grid (same regrid
//! epoch), so nodes are material points and `∂t` is taken at fixed `x`.
//! Spatial derivatives are three-point differences in node arclength. Sup
//! norms skip a buffer of cells at both ends, where ghost-cell stencils have
//! a different truncation error.
//!
//! The radial Laplacian used throughout is `Δu = u_ss + n (f_s/f) u_s`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::curvature::CurvatureSample;
use crate::flow::{DiagnosticsRecord, GridState};
use crate::par::{self, Exec};
use crate::{Error, Result};

pub const DEFAULT_BUFFER: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OracleOptions {
    /// Multiplies every `10 h²` tolerance.
    pub tolerance_scale: f64,
    /// Cells skipped at each end.
    pub buffer: usize,
    pub exec: Exec,
}

impl Default for OracleOptions {
    fn default() -> Self {
        OracleOptions { tolerance_scale: 1.0, buffer: DEFAULT_BUFFER, exec: Exec::Auto }
    }
}

impl OracleOptions {
    fn tolerance(&self, h: f64) -> f64 {
        10.0 * h * h * self.tolerance_scale
    }
}

/// Sup of one residual over the interior at one stored time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub name: String,
    pub t: f64,
    pub sup_abs_residual: f64,
    /// Largest node spacing in arclength over the checked interior.
    pub grid_h: f64,
    pub expected_order: u32,
    /// Arclength of the node attaining the sup.
    pub s: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Location {
    pub x: f64,
    pub s: f64,
    pub t: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    HypothesesNotMet,
    NotApplicable,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub name: String,
    pub hypotheses_met: bool,
    pub worst_value: f64,
    pub worst_location: Option<Location>,
    pub tolerance: f64,
    pub verdict: Verdict,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub details: BTreeMap<String, Value>,
}

impl OracleReport {
    fn new(name: &str) -> Self {
        OracleReport {
            name: name.to_string(),
            hypotheses_met: true,
            worst_value: 0.0,
            worst_location: None,
            tolerance: 0.0,
            verdict: Verdict::Pass,
            details: BTreeMap::new(),
        }
    }

    fn detail(&mut self, key: &str, value: impl Into<Value>) {
        self.details.insert(key.to_string(), value.into());
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize")
    }
}

/// Geometry of one stored state, node by node.
struct Frame<'a> {
    state: &'a GridState,
    s: Vec<f64>,
    fs: Vec<f64>,
    curv: Vec<CurvatureSample>,
}

impl<'a> Frame<'a> {
    fn new(state: &'a GridState) -> Self {
        let d = state.derivatives();
        Frame { state, s: state.node_arclength(), fs: d.fs, curv: state.curvature_samples() }
    }

    fn f(&self, i: usize) -> f64 {
        self.state.f[i]
    }

    fn t(&self) -> f64 {
        self.state.t
    }

    fn location(&self, i: usize) -> Location {
        Location { x: self.state.x(i), s: self.s[i], t: self.state.t }
    }

    /// `(u_s, u_ss)` at node `i` from its two neighbours.
    fn slope_and_curvature(&self, u: &[f64], i: usize) -> (f64, f64) {
        let a = self.s[i] - self.s[i - 1];
        let b = self.s[i + 1] - self.s[i];
        let (um, up) = (u[i - 1] - u[i], u[i + 1] - u[i]);
        let first = -b / (a * (a + b)) * um + a / (b * (a + b)) * up;
        let second = 2.0 * (um / (a * (a + b)) + up / (b * (a + b)));
        (first, second)
    }

    fn laplacian(&self, u: &[f64], i: usize) -> f64 {
        let n = self.state.n as f64;
        let (d1, d2) = self.slope_and_curvature(u, i);
        d2 + n * self.fs[i] / self.f(i) * d1
    }

    fn max_gap(&self, range: std::ops::Range<usize>) -> f64 {
        range.map(|i| self.s[i + 1] - self.s[i - 1]).fold(0.0, f64::max) * 0.5
    }
}

/// Three consecutive frames on one grid, with the weights of the centred
/// nonuniform time derivative at the middle one.
struct Triple<'a> {
    prev: Frame<'a>,
    mid: Frame<'a>,
    next: Frame<'a>,
    w_prev: f64,
    w_next: f64,
}

impl Triple<'_> {
    /// `∂t u` at the middle time from values at the three times, written in
    /// differences so a constant series gives exactly zero.
    fn dt(&self, prev: f64, mid: f64, next: f64) -> f64 {
        self.w_prev * (prev - mid) + self.w_next * (next - mid)
    }
}

fn sorted(states: &[GridState]) -> Vec<&GridState> {
    let mut order: Vec<&GridState> = states.iter().collect();
    order.sort_by(|a, b| a.t.total_cmp(&b.t));
    order
}

/// Triples whose two gaps differ by more than this ratio are skipped: the
/// nonuniform stencil then divides round-off by the short gap (a run's last
/// step is usually truncated to land on `t_end`).
const GAP_BALANCE: f64 = 4.0;

/// Consecutive same-grid triples; rejects cadences too sparse to difference.
fn triples(states: &[GridState]) -> Result<Vec<[&GridState; 3]>> {
    let order = sorted(states);
    let mut out = Vec::new();
    for w in order.windows(3) {
        let (a, b, c) = (w[0], w[1], w[2]);
        let same_grid = a.epoch == b.epoch && b.epoch == c.epoch && a.cells() == c.cells() && b.cells() == c.cells();
        if !same_grid || !(a.t < b.t && b.t < c.t) {
            continue;
        }
        let (g1, g2) = (b.t - a.t, c.t - b.t);
        if g1.max(g2) > GAP_BALANCE * g1.min(g2) {
            continue;
        }
        for (x, y) in [(a, b), (b, c)] {
            let dt_taken = x.dt_prev.max(y.dt_prev);
            if y.t - x.t > 10.0 * dt_taken * (1.0 + 1e-12) {
                return Err(Error::Usage(format!(
                    "stored states at t = {} and t = {} are {} apart, more than 10 solver steps ({dt_taken:e}); store denser snapshots",
                    x.t,
                    y.t,
                    y.t - x.t
                )));
            }
        }
        out.push([a, b, c]);
    }
    if out.is_empty() {
        return Err(Error::Usage("no three consecutive, evenly spaced stored states share a grid".into()));
    }
    Ok(out)
}

fn build_triple<'a>(t: [&'a GridState; 3]) -> Triple<'a> {
    let (prev, mid, next) = (Frame::new(t[0]), Frame::new(t[1]), Frame::new(t[2]));
    let tau1 = mid.t() - prev.t();
    let tau2 = next.t() - mid.t();
    Triple { w_prev: -tau2 / (tau1 * (tau1 + tau2)), w_next: tau1 / (tau2 * (tau1 + tau2)), prev, mid, next }
}

fn interior(state: &GridState, buffer: usize) -> Result<std::ops::Range<usize>> {
    let lo = buffer.max(1);
    let hi = state.cells().saturating_sub(buffer.max(1));
    if lo >= hi {
        return Err(Error::Usage(format!("{} cells leave no interior after a {buffer}-cell buffer", state.cells())));
    }
    Ok(lo..hi)
}

fn worst_abs(values: impl Iterator<Item = (usize, f64)>) -> (usize, f64) {
    values.fold((0, 0.0), |(bi, bv), (i, v)| if v.abs() > bv || v.is_nan() { (i, v.abs()) } else { (bi, bv) })
}

/// `∂t f_s − [Δ f_s + (Scal/n) f_s]` at every stored interior time.
pub fn fs_evolution_residual(states: &[GridState], opts: &OracleOptions) -> Result<Vec<ResidualReport>> {
    let list = triples(states)?;
    let range = interior(list[0][1], opts.buffer)?;
    par::map_slice(opts.exec, &list, |t| {
        let tr = build_triple(*t);
        let m = &tr.mid;
        let n = m.state.n as f64;
        let range = range.start..range.end.min(m.state.cells() - 1);
        let (i, sup) = worst_abs(range.clone().map(|i| {
            let dt = tr.dt(tr.prev.fs[i], m.fs[i], tr.next.fs[i]);
            let rhs = m.laplacian(&m.fs, i) + m.curv[i].scal / n * m.fs[i];
            (i, dt - rhs)
        }));
        Ok(ResidualReport {
            name: "fs_evolution".into(),
            t: m.t(),
            sup_abs_residual: sup,
            grid_h: m.max_gap(range),
            expected_order: 2,
            s: m.s[i],
        })
    })
    .into_iter()
    .collect()
}

/// Fold a residual series into a pass/fail report against `10 h²`.
pub fn summarize_residuals(name: &str, series: &[ResidualReport], opts: &OracleOptions) -> OracleReport {
    let mut report = OracleReport::new(name);
    let h = series.iter().map(|r| r.grid_h).fold(0.0, f64::max);
    report.tolerance = opts.tolerance(h);
    if let Some(w) = series.iter().max_by(|a, b| a.sup_abs_residual.total_cmp(&b.sup_abs_residual)) {
        report.worst_value = w.sup_abs_residual;
        report.worst_location = Some(Location { x: f64::NAN, s: w.s, t: w.t });
    }
    report.verdict = if report.worst_value <= report.tolerance { Verdict::Pass } else { Verdict::Fail };
    report.detail("times", series.len());
    report.detail("grid_h", h);
    report
}

/// Barrier `φ = δ(1 − 2t) − f_s`: where `φ > 0`, `(∂t − Δ)φ ≤ (Scal/n)φ`.
///
/// Hypotheses: `min f_s ≥ δ` on the interior at the first stored time and
/// `Scal ≥ −2` on the interior at every stored time. The report also records
/// until when the conclusion `f_s ≥ δ/4` held (`conclusion_holds_until`).
pub fn phi_barrier_check(states: &[GridState], delta: f64, opts: &OracleOptions) -> Result<OracleReport> {
    if !(delta > 0.0) {
        return Err(Error::Parameter(format!("δ must be positive, got {delta}")));
    }
    let list = triples(states)?;
    let order = sorted(states);
    let range = interior(order[0], opts.buffer)?;
    let mut report = OracleReport::new("phi_barrier");
    report.detail("delta", delta);

    let first = Frame::new(order[0]);
    let (i0, fs0) =
        range
            .clone()
            .map(|i| (i, first.fs[i]))
            .fold((range.start, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
    let mut failures = Vec::new();
    if fs0 < delta * (1.0 - 1e-12) {
        failures.push(format!("min f_s = {fs0} < δ at s = {}", first.s[i0]));
        report.worst_location = Some(first.location(i0));
    }
    let mut conclusion_until = None;
    for st in &order {
        let fr = Frame::new(st);
        let r = range.start..range.end.min(st.cells() - 1);
        if let Some(i) = r.clone().find(|&i| fr.curv[i].scal < -2.0) {
            if failures.len() < 8 {
                failures.push(format!("Scal = {} < −2 at s = {}, t = {}", fr.curv[i].scal, fr.s[i], st.t));
            }
            report.worst_location.get_or_insert(fr.location(i));
        }
        if conclusion_until.is_none() && r.clone().any(|i| fr.fs[i] < 0.25 * delta) {
            conclusion_until = Some(st.t);
        }
    }
    match conclusion_until {
        Some(t) => report.detail("conclusion_holds_until", t),
        None => report.detail("conclusion_holds_until", Value::String("end of run".into())),
    }
    if !failures.is_empty() {
        report.hypotheses_met = false;
        report.verdict = Verdict::HypothesesNotMet;
        report.worst_value = f64::NAN;
        report.detail("hypothesis_failures", failures);
        return Ok(report);
    }

    let per_time = par::map_slice(opts.exec, &list, |t| {
        let tr = build_triple(*t);
        let m = &tr.mid;
        let n = m.state.n as f64;
        let r = range.start..range.end.min(m.state.cells() - 1);
        let phi = |fr: &Frame, i: usize| delta * (1.0 - 2.0 * fr.t()) - fr.fs[i];
        let field: Vec<f64> = (0..m.state.cells()).map(|i| phi(m, i)).collect();
        let mut best: Option<(f64, Location)> = None;
        for i in r.clone() {
            if field[i] <= 0.0 {
                continue;
            }
            let dt = tr.dt(phi(&tr.prev, i), field[i], phi(&tr.next, i));
            let excess = dt - m.laplacian(&field, i) - m.curv[i].scal / n * field[i];
            if best.is_none_or(|(b, _)| excess > b) {
                best = Some((excess, m.location(i)));
            }
        }
        (best, m.max_gap(r))
    });
    let h = per_time.iter().map(|p| p.1).fold(0.0, f64::max);
    report.tolerance = opts.tolerance(h);
    let worst = per_time.iter().filter_map(|p| p.0).max_by(|a, b| a.0.total_cmp(&b.0));
    match worst {
        Some((v, loc)) => {
            report.worst_value = v;
            report.worst_location = Some(loc);
        }
        None => {
            report.worst_value = f64::NEG_INFINITY;
            report.detail("vacuous", true);
        }
    }
    report.verdict = if report.worst_value <= report.tolerance { Verdict::Pass } else { Verdict::Fail };
    Ok(report)
}

/// Exact value of `(∂t − ∂ss)[e^{ct}(fⁿ + 2/(n−2))]`, `c = (n−1)(n−2)`, along
/// the flow: a function of `f` alone.
pub fn supersolution_closed_form(f: f64, t: f64, n: usize) -> f64 {
    let nf = n as f64;
    let c = (nf - 1.0) * (nf - 2.0);
    (nf - 1.0) * (c * t).exp() * ((nf - 2.0) * f.powi(n as i32) + 2.0 - nf * f.powi(n as i32 - 2))
}

/// Discrete `(∂t − ∂ss)[e^{(n−1)(n−2)t}(fⁿ + 2/(n−2))]`; its most negative
/// interior value must be `≥ −tolerance`. Not applicable for `n = 2`.
pub fn supersolution_check(states: &[GridState], opts: &OracleOptions) -> Result<OracleReport> {
    let mut report = OracleReport::new("supersolution");
    let n = states.first().map_or(0, |s| s.n);
    if n < 3 {
        report.hypotheses_met = false;
        report.verdict = Verdict::NotApplicable;
        report.worst_value = f64::NAN;
        report.detail("reason", "the expression contains 2/(n−2) and needs n ≥ 3");
        return Ok(report);
    }
    let list = triples(states)?;
    let range = interior(list[0][1], opts.buffer)?;
    let nf = n as f64;
    let c = (nf - 1.0) * (nf - 2.0);
    let per_time = par::map_slice(opts.exec, &list, |t| {
        let tr = build_triple(*t);
        let m = &tr.mid;
        let r = range.start..range.end.min(m.state.cells() - 1);
        let grow = (c * m.t()).exp();
        let power: Vec<f64> = m.state.f.iter().map(|f| f.powi(n as i32)).collect();
        let mut worst = (f64::INFINITY, m.location(r.start));
        let mut drift = 0.0f64;
        let mut scale = 1.0f64;
        for i in r.clone() {
            let f = m.f(i);
            let ft = tr.dt(tr.prev.f(i), f, tr.next.f(i));
            let (_, pss) = m.slope_and_curvature(&power, i);
            let value = grow * (c * (power[i] + 2.0 / (nf - 2.0)) + nf * f.powi(n as i32 - 1) * ft - pss);
            drift = drift.max((value - supersolution_closed_form(f, m.t(), n)).abs());
            scale = scale.max(grow * power[i]);
            if value < worst.0 {
                worst = (value, m.location(i));
            }
        }
        (worst, drift, scale, m.max_gap(r))
    });
    let h = per_time.iter().map(|p| p.3).fold(0.0, f64::max);
    let scale = per_time.iter().map(|p| p.2).fold(1.0, f64::max);
    report.tolerance = opts.tolerance(h) * scale;
    let (value, loc) = per_time.iter().map(|p| p.0).min_by(|a, b| a.0.total_cmp(&b.0)).expect("at least one triple");
    report.worst_value = value;
    report.worst_location = Some(loc);
    report.detail("max_deviation_from_closed_form", per_time.iter().map(|p| p.1).fold(0.0, f64::max));
    report.verdict = if value >= -report.tolerance { Verdict::Pass } else { Verdict::Fail };
    Ok(report)
}

/// `c(m) = max{((5m−3)² − 16(m+2)(m−1))/(8(m−1)), m−4}` for manifold dimension `m`.
pub fn pinch_constant(m: usize) -> Result<f64> {
    if m < 2 {
        return Err(Error::Parameter(format!("manifold dimension must be at least 2, got {m}")));
    }
    let m = m as f64;
    let quadratic = ((5.0 * m - 3.0).powi(2) - 16.0 * (m + 2.0) * (m - 1.0)) / (8.0 * (m - 1.0));
    Ok(quadratic.max(m - 4.0))
}

/// Exact `(∂t − Δ)` of the radial and spherical Ricci eigenvalues along the
/// flow, in terms of `K`, `L` and `f`.
pub fn ricci_heat_operator(k: f64, l: f64, f: f64, n: usize) -> (f64, f64) {
    let n = n as f64;
    let g = 1.0 / (f * f);
    let radial = 2.0 * n * (k * k + 2.0 * (n - 1.0) * k * l - (n - 1.0) * l * l + (n - 1.0) * (l - k) * g);
    let spherical = 2.0 * (n * k * k + n * (n - 1.0) * l * l + (n - 1.0) * (k - l) * g);
    (radial, spherical)
}

/// `ℓ = max(0, −min Ric eigenvalue)` and the index of the minimizing branch.
fn pinch(c: &CurvatureSample) -> (f64, u8) {
    if c.ric_radial <= c.ric_sph {
        ((-c.ric_radial).max(0.0), 0)
    } else {
        ((-c.ric_sph).max(0.0), 1)
    }
}

/// Output of [`ricci_pinch_residual`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RicciPinchOutcome {
    /// `|(∂t − Δ)ℓ − exact|` at smooth points where `ℓ > 0`.
    pub residuals: Vec<ResidualReport>,
    /// Inequality `(∂t − Δ)ℓ ≤ Scal·ℓ + c(m)ℓ²`.
    pub report: OracleReport,
}

/// Check `(∂t − Δ)ℓ ≤ Scal·ℓ + c(m)ℓ²`, `m = n + 1`, at interior points where
/// `ℓ > 0` and the same Ricci branch is minimal across the whole stencil.
pub fn ricci_pinch_residual(states: &[GridState], opts: &OracleOptions) -> Result<RicciPinchOutcome> {
    let list = triples(states)?;
    let range = interior(list[0][1], opts.buffer)?;
    let n = list[0][1].n;
    let c_m = pinch_constant(n + 1)?;
    let per_time = par::map_slice(opts.exec, &list, |t| {
        let tr = build_triple(*t);
        let m = &tr.mid;
        let r = range.start..range.end.min(m.state.cells() - 1);
        let ell: Vec<(f64, u8)> = m.curv.iter().map(pinch).collect();
        let field: Vec<f64> = ell.iter().map(|e| e.0).collect();
        let mut sup = (0.0f64, m.s[r.start]);
        let mut worst: Option<(f64, Location)> = None;
        let mut checked = 0usize;
        let mut max_ell = 0.0f64;
        for i in r.clone() {
            let (lp, bp) = pinch(&tr.prev.curv[i]);
            let (ln, bn) = pinch(&tr.next.curv[i]);
            let branch = ell[i].1;
            let smooth =
                [ell[i - 1], ell[i], ell[i + 1], (lp, bp), (ln, bn)].iter().all(|&(v, b)| v > 0.0 && b == branch);
            if !smooth {
                continue;
            }
            checked += 1;
            max_ell = max_ell.max(field[i]);
            let heat = tr.dt(lp, field[i], ln) - m.laplacian(&field, i);
            let cs = &m.curv[i];
            let (radial, spherical) = ricci_heat_operator(cs.k, cs.l, m.f(i), n);
            let exact = -if branch == 0 { radial } else { spherical };
            let residual = (heat - exact).abs();
            if residual > sup.0 {
                sup = (residual, m.s[i]);
            }
            let excess = heat - cs.scal * field[i] - c_m * field[i] * field[i];
            if worst.is_none_or(|(w, _)| excess > w) {
                worst = Some((excess, m.location(i)));
            }
        }
        let residual = ResidualReport {
            name: "ricci_pinch".into(),
            t: m.t(),
            sup_abs_residual: sup.0,
            grid_h: m.max_gap(r),
            expected_order: 2,
            s: sup.1,
        };
        (residual, worst, checked, max_ell)
    });
    let mut report = OracleReport::new("ricci_pinch");
    let h = per_time.iter().map(|p| p.0.grid_h).fold(0.0, f64::max);
    report.tolerance = opts.tolerance(h);
    report.detail("c_m", c_m);
    report.detail("manifold_dimension", n + 1);
    report.detail("points_checked", per_time.iter().map(|p| p.2).sum::<usize>());
    report.detail("max_ell", per_time.iter().map(|p| p.3).fold(0.0, f64::max));
    match per_time.iter().filter_map(|p| p.1).max_by(|a, b| a.0.total_cmp(&b.0)) {
        Some((v, loc)) => {
            report.worst_value = v;
            report.worst_location = Some(loc);
        }
        None => {
            report.worst_value = f64::NEG_INFINITY;
            report.detail("vacuous", true);
        }
    }
    report.verdict = if report.worst_value <= report.tolerance { Verdict::Pass } else { Verdict::Fail };
    Ok(RicciPinchOutcome { residuals: per_time.into_iter().map(|p| p.0).collect(), report })
}

/// One member of an approximation family for [`lambda_fit`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FamilyRun {
    pub label: String,
    /// The swept parameter (e.g. `k`); orders the family for trend detection.
    pub parameter: f64,
    pub records: Vec<DiagnosticsRecord>,
    /// First solver step; records with `t < 5·dt0` are skipped.
    pub dt0: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaRow {
    pub label: String,
    pub parameter: f64,
    pub lambda_fit: f64,
    pub t_at_max: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trend {
    Flat,
    Increasing,
    Decreasing,
    Mixed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyVerdict {
    Uniform,
    Drifting,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaFitReport {
    pub rows: Vec<LambdaRow>,
    /// `max Λ / min Λ` (infinite when the minimum is zero and the maximum is not).
    pub spread: f64,
    pub trend: Trend,
    pub verdict: FamilyVerdict,
}

/// Largest spread `max/min` for which a family counts as uniform.
pub const UNIFORM_SPREAD: f64 = 1.25;
/// Λ values below this are treated as zero.
pub const LAMBDA_FLOOR: f64 = 1e-8;

/// Fit `Λ = sup_t t·sup|Rm|` per run and judge whether it is uniform in the family.
pub fn lambda_fit(family: &[FamilyRun]) -> Result<LambdaFitReport> {
    if family.len() < 3 {
        return Err(Error::Usage(format!("lambda fit needs at least 3 runs, got {}", family.len())));
    }
    let mut rows: Vec<LambdaRow> = family
        .iter()
        .map(|run| {
            let (lambda_fit, t_at_max) =
                run.records.iter().filter(|r| r.t >= 5.0 * run.dt0).fold((0.0f64, f64::NAN), |(best, at), r| {
                    if r.lambda_t > best {
                        (r.lambda_t, r.t)
                    } else {
                        (best, at)
                    }
                });
            LambdaRow { label: run.label.clone(), parameter: run.parameter, lambda_fit, t_at_max }
        })
        .collect();
    rows.sort_by(|a, b| a.parameter.total_cmp(&b.parameter));
    let hi = rows.iter().map(|r| r.lambda_fit).fold(0.0, f64::max);
    let lo = rows.iter().map(|r| r.lambda_fit).fold(f64::INFINITY, f64::min);
    let spread = if hi <= LAMBDA_FLOOR {
        1.0
    } else if lo > 0.0 {
        hi / lo
    } else {
        f64::INFINITY
    };
    let steps: Vec<f64> = rows.windows(2).map(|w| w[1].lambda_fit - w[0].lambda_fit).collect();
    let moved = |d: f64| d.abs() > LAMBDA_FLOOR;
    let trend = if !steps.iter().any(|&d| moved(d)) {
        Trend::Flat
    } else if steps.iter().all(|&d| d >= 0.0 || !moved(d)) {
        Trend::Increasing
    } else if steps.iter().all(|&d| d <= 0.0 || !moved(d)) {
        Trend::Decreasing
    } else {
        Trend::Mixed
    };
    let verdict = if spread <= UNIFORM_SPREAD { FamilyVerdict::Uniform } else { FamilyVerdict::Drifting };
    Ok(LambdaFitReport { rows, spread, trend, verdict })
}
