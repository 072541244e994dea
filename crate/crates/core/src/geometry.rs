//! Volumes of balls and annuli in warped products, and the volume-ratio
//! lower bound for profiles with `f ≥ δ s` near the tip and `f ≥ δ` beyond.
//!
//! Only tip-centred balls are computed exactly. Off-axis balls are bounded
//! below by the annulus `A_x^r = {|s′ − s| < r, d(θ, θ′) < r/f(s′)}`, which
//! lies inside `B(x, 2r)`.

use std::f64::consts::PI;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::flow::GridState;
use crate::par::{self, Exec};
use crate::profiles::Profile;
use crate::quad::adaptive_simpson;
use crate::{Error, Result};

const SINGLE_TOL: f64 = 1e-8;
const NESTED_TOL: f64 = 1e-6;

/// Γ((m+1)/2) for integer m ≥ 0, exact recursion from Γ(1) or Γ(1/2).
fn gamma_half(m: usize) -> f64 {
    let twice = m + 1;
    let (mut g, mut x) = if twice.is_multiple_of(2) { (1.0, 1.0) } else { (PI.sqrt(), 0.5) };
    let target = twice as f64 / 2.0;
    while x < target - 0.25 {
        g *= x;
        x += 1.0;
    }
    g
}

fn omega(m: usize) -> f64 {
    2.0 * PI.powf((m + 1) as f64 / 2.0) / gamma_half(m)
}

/// Volume of the unit round sphere `Sᵐ`.
pub fn sphere_volume(m: usize) -> Result<f64> {
    if m < 1 {
        return Err(Error::Parameter(format!("sphere dimension must be ≥ 1, got {m}")));
    }
    Ok(omega(m))
}

/// `∫₀^ρ sinᵏ t dt` by the reduction formula.
fn sin_power_integral(k: usize, rho: f64) -> f64 {
    let (s, c) = rho.sin_cos();
    let mut lo = rho; // k = 0
    let mut hi = 1.0 - c; // k = 1
    if k == 0 {
        return lo;
    }
    for j in 2..=k {
        let next = -s.powi(j as i32 - 1) * c / j as f64 + (j - 1) as f64 / j as f64 * lo;
        lo = hi;
        hi = next;
    }
    hi
}

/// Volume of a geodesic ball of radius `rho` in the unit `Sⁿ`.
pub fn sphere_cap_volume(rho: f64, n: usize) -> f64 {
    if rho <= 0.0 {
        return 0.0;
    }
    if rho >= PI {
        return omega(n);
    }
    omega(n - 1) * sin_power_integral(n - 1, rho)
}

/// Volume of the metric ball of radius `r` about the tip.
pub fn ball_volume_origin(profile: &Profile, r: f64, n: usize) -> Result<f64> {
    if !profile.is_tip_anchored() {
        return Err(Error::Precondition("tip-centred balls need a tip-anchored profile".into()));
    }
    if !(r >= 0.0) || r > profile.domain_end() {
        return Err(Error::Domain(format!("radius {r} outside the profile domain [0, {}]", profile.domain_end())));
    }
    let integral = adaptive_simpson(|s| profile.value(s).max(0.0).powi(n as i32), 0.0, r, SINGLE_TOL);
    Ok(omega(n) * integral)
}

/// Volume of the annulus `A_x^r` about a point at distance `s_center` from the tip.
pub fn annulus_volume(profile: &Profile, s_center: f64, r: f64, n: usize) -> Result<f64> {
    let (lo, hi) = (s_center - r, s_center + r);
    if !(r >= 0.0) || lo < -1e-14 || hi > profile.domain_end() * (1.0 + 1e-14) {
        return Err(Error::Domain(format!(
            "annulus [{lo}, {hi}] leaves the profile domain [0, {}]",
            profile.domain_end()
        )));
    }
    let integrand = |s: f64| {
        let f = profile.value(s);
        if f <= 0.0 {
            return 0.0;
        }
        f.powi(n as i32) * sphere_cap_volume(r / f, n)
    };
    Ok(adaptive_simpson(integrand, lo.max(0.0), hi, NESTED_TOL))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolumeReport {
    pub v1: f64,
    pub v2: f64,
    pub v: f64,
    #[serde(rename = "A_n")]
    pub a_n: f64,
    #[serde(rename = "B_n")]
    pub b_n: f64,
    pub delta: f64,
    pub n: usize,
}

/// Lower bound `v(δ, n)` for `vol B(x, r)/r^{n+1}`, `r ≤ 1`.
pub fn volume_ratio_lower_bound(delta: f64, n: usize) -> Result<VolumeReport> {
    if !(delta > 0.0) || n < 2 {
        return Err(Error::Parameter(format!("need δ > 0 and n ≥ 2, got δ = {delta}, n = {n}")));
    }
    let nf = n as f64;
    let v1 = 0.25f64.powi(n as i32 + 1) * delta.powi(n as i32) * omega(n) / (nf + 1.0);
    let a_n = sphere_cap_volume(PI / 4.0, n);
    let b_n = omega(n - 1) / (nf * 2f64.powf((nf - 1.0) / 2.0) * 4f64.powi(n as i32));
    let v2 = 0.5 * (a_n * (delta / 4.0).powi(n as i32)).min(b_n);
    Ok(VolumeReport { v1, v2, v: v1.min(v2), a_n, b_n, delta, n })
}

/// Largest `δ` with `f ≥ δ s` on `(0, 1]` and `f ≥ δ` on `(1, S]`, sampled.
pub fn effective_delta(profile: &Profile, per_unit: f64) -> f64 {
    let end = profile.domain_end();
    let count = ((end * per_unit).ceil() as usize).max(2);
    let step = end / count as f64;
    par::argmin(Exec::Auto, count, |i| {
        let s = step * (i + 1) as f64;
        let f = profile.value(s);
        if s <= 1.0 {
            f / s
        } else {
            f
        }
    })
    .map(|(_, d)| d)
    .unwrap_or(f64::NAN)
}

/// First sample where `f ≥ δ s χ_[0,1] + δ χ_(1,S]` fails.
pub fn delta_hypothesis_violation(profile: &Profile, delta: f64, per_unit: f64) -> Option<f64> {
    let tol = 1e-12;
    profile.scan_first(0.0, profile.domain_end(), per_unit, |s, j| {
        let bound = if s <= 1.0 { delta * s } else { delta };
        j.f < bound - tol * bound.max(1.0)
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioRow {
    pub s_center: f64,
    pub r: f64,
    pub ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioScan {
    pub delta: f64,
    pub bound: VolumeReport,
    pub rows: Vec<RatioRow>,
    pub min: RatioRow,
}

impl RatioScan {
    pub fn bound_holds(&self) -> bool {
        self.min.ratio >= self.bound.v
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum RatioScanOutcome {
    Scanned(RatioScan),
    HypothesisFailed { delta: f64, s: f64 },
}

/// Options for [`ratio_scan`]; `delta: None` uses the detected [`effective_delta`].
#[derive(Clone, Copy, Debug)]
pub struct ScanOptions {
    pub delta: Option<f64>,
    pub centers: usize,
    pub exec: Exec,
}

impl Default for ScanOptions {
    fn default() -> Self {
        ScanOptions { delta: None, centers: 64, exec: Exec::Auto }
    }
}

/// Lower bound for `vol B(x, r)` at distance `s_center` from the tip:
/// the larger of the tip ball `B(o, r − s_center)` and the annulus
/// `A_x^{r/2}`, whichever are available.
pub fn ball_volume_lower_bound(profile: &Profile, s_center: f64, r: f64, n: usize) -> Result<f64> {
    let mut best: f64 = 0.0;
    if s_center < r && profile.is_tip_anchored() {
        best = best.max(ball_volume_origin(profile, (r - s_center).min(profile.domain_end()), n)?);
    }
    if s_center >= 0.5 * r && s_center + 0.5 * r <= profile.domain_end() {
        best = best.max(annulus_volume(profile, s_center, 0.5 * r, n)?);
    }
    Ok(best)
}

/// Empirical minimum of the volume ratio lower bound over a grid of centres
/// in `[0, S − r/2]` and the given radii.
pub fn ratio_scan(profile: &Profile, n: usize, radii: &[f64], opts: ScanOptions) -> Result<RatioScanOutcome> {
    const PER_UNIT: f64 = 2e3;
    let delta = match opts.delta {
        Some(d) => {
            if let Some(s) = delta_hypothesis_violation(profile, d, PER_UNIT) {
                return Ok(RatioScanOutcome::HypothesisFailed { delta: d, s });
            }
            d
        }
        None => effective_delta(profile, PER_UNIT),
    };
    if !(delta > 0.0) {
        return Ok(RatioScanOutcome::HypothesisFailed { delta, s: 0.0 });
    }
    let bound = volume_ratio_lower_bound(delta, n)?;
    let centers = opts.centers.max(2);
    let mut jobs = Vec::with_capacity(centers * radii.len());
    for &r in radii {
        if !(r > 0.0) {
            return Err(Error::Parameter(format!("scan radius must be positive, got {r}")));
        }
        let top = profile.domain_end() - 0.5 * r;
        if top < 0.0 {
            return Err(Error::Domain(format!("radius {r} exceeds twice the domain length")));
        }
        for i in 0..centers {
            jobs.push((top * i as f64 / (centers - 1) as f64, r));
        }
    }
    let rows: Vec<RatioRow> = par::map_slice(opts.exec, &jobs, |&(s_center, r)| {
        ball_volume_lower_bound(profile, s_center, r, n).map(|vol| RatioRow {
            s_center,
            r,
            ratio: vol / r.powi(n as i32 + 1),
        })
    })
    .into_iter()
    .collect::<Result<_>>()?;
    let (at, _) = par::argmin(opts.exec, rows.len(), |i| rows[i].ratio)
        .ok_or_else(|| Error::Parameter("ratio scan needs at least one radius".into()))?;
    let min = rows[at];
    Ok(RatioScanOutcome::Scanned(RatioScan { delta, bound, rows, min }))
}

pub fn write_ratio_csv<W: Write>(mut out: W, rows: &[RatioRow]) -> std::io::Result<()> {
    writeln!(out, "s_center,r,ratio")?;
    for row in rows {
        writeln!(out, "{},{},{}", row.s_center, row.r, row.ratio)?;
    }
    Ok(())
}

/// Length of the radial segment between coordinates `x1` and `x2`,
/// integrating the piecewise-linear interpolant of σ through the cell
/// centres (even extension past both ends).
pub fn arclength_and_distance(state: &GridState, x1: f64, x2: f64) -> Result<f64> {
    let end = state.x_end();
    for x in [x1, x2] {
        if !(x >= 0.0 && x <= end * (1.0 + 1e-14)) {
            return Err(Error::Domain(format!("coordinate {x} outside [0, {end}]")));
        }
    }
    let (a, b) = if x1 <= x2 { (x1, x2) } else { (x2, x1) };
    Ok(coordinate_arclength(state, b) - coordinate_arclength(state, a))
}

/// `∫₀ˣ σ` with the same interpolant as [`arclength_and_distance`].
pub fn coordinate_arclength(state: &GridState, x: f64) -> f64 {
    let h = state.h;
    let sigma = &state.sigma;
    let n = sigma.len();
    // Breakpoints at x = -h/2 (ghost), (i+1/2)h, X + h/2 (ghost).
    let node = |i: isize| -> (f64, f64) {
        let idx = i.clamp(0, n as isize - 1) as usize;
        ((i as f64 + 0.5) * h, sigma[idx])
    };
    let mut total = 0.0;
    let mut left = 0.0;
    let mut i: isize = -1;
    while i < n as isize {
        let (xa, sa) = node(i);
        let (xb, sb) = node(i + 1);
        let lo = xa.max(left);
        let hi = xb.min(x);
        if hi > lo {
            let interp = |y: f64| sa + (sb - sa) * (y - xa) / (xb - xa);
            total += 0.5 * (interp(lo) + interp(hi)) * (hi - lo);
            left = hi;
        }
        if xb >= x {
            break;
        }
        i += 1;
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profiles::caps::cap_cylinder;
    use crate::profiles::{make_profile, AnalyticKind};

    fn close(a: f64, b: f64, rel: f64) -> bool {
        (a - b).abs() <= rel * b.abs().max(1e-300)
    }

    #[test]
    fn sphere_volumes() {
        assert!(close(sphere_volume(1).unwrap(), 2.0 * PI, 1e-14));
        assert!(close(sphere_volume(2).unwrap(), 4.0 * PI, 1e-14));
        assert!(close(sphere_volume(3).unwrap(), 2.0 * PI * PI, 1e-14));
        assert!(close(sphere_volume(4).unwrap(), 8.0 * PI * PI / 3.0, 1e-14));
        assert!(matches!(sphere_volume(0), Err(Error::Parameter(_))));
    }

    #[test]
    fn cap_volumes_match_closed_forms() {
        assert!(close(sphere_cap_volume(PI, 2), 4.0 * PI, 1e-15));
        assert_eq!(sphere_cap_volume(0.0, 2), 0.0);
        let quarter = sphere_cap_volume(PI / 4.0, 2);
        assert!(close(quarter, 2.0 * PI * (1.0 - 0.5f64.sqrt()), 1e-14));
        assert!((quarter - 1.84030).abs() < 1e-5);
        // n = 3: ω₂ ∫ sin² = 4π (ρ/2 − sin 2ρ/4).
        let rho = 1.1f64;
        let exact = 4.0 * PI * (rho / 2.0 - (2.0 * rho).sin() / 4.0);
        assert!(close(sphere_cap_volume(rho, 3), exact, 1e-13));
        // Reduction formula against quadrature for higher powers.
        for n in 2..8 {
            let q = omega(n - 1) * adaptive_simpson(|t: f64| t.sin().powi(n as i32 - 1), 0.0, 2.0, 1e-12);
            assert!(close(sphere_cap_volume(2.0, n), q, 1e-10), "n = {n}");
        }
        // Just below π the cap is nearly the whole sphere.
        assert!(close(sphere_cap_volume(PI - 1e-9, 4), omega(4), 1e-12));
    }

    #[test]
    fn tip_balls() {
        let flat = make_profile(AnalyticKind::Euclidean, 3.0, 2).unwrap();
        for r in [0.5f64, 1.0, 2.0] {
            let exact = 4.0 * PI * r.powi(3) / 3.0;
            assert!(close(ball_volume_origin(&flat, r, 2).unwrap(), exact, 1e-8));
        }
        let cone = make_profile(AnalyticKind::Cone { slope: 0.3 }, 2.0, 2).unwrap();
        assert!(close(ball_volume_origin(&cone, 1.0, 2).unwrap(), 4.0 * PI / 3.0 * 0.09, 1e-8));
        let sphere = make_profile(AnalyticKind::SphereCap, PI / 2.0, 2).unwrap();
        assert!(close(ball_volume_origin(&sphere, PI / 2.0, 2).unwrap(), PI * PI, 1e-8));
        assert!(matches!(ball_volume_origin(&flat, 4.0, 2), Err(Error::Domain(_))));
        let tube = make_profile(AnalyticKind::Cylinder { radius: 1.0 }, 3.0, 2).unwrap();
        assert!(matches!(ball_volume_origin(&tube, 1.0, 2), Err(Error::Precondition(_))));
    }

    #[test]
    fn annulus_on_cylinder() {
        let tube = make_profile(AnalyticKind::Cylinder { radius: 1.0 }, 10.0, 2).unwrap();
        let vol = annulus_volume(&tube, 5.0, 0.25, 2).unwrap();
        let exact = 0.5 * 2.0 * PI * (1.0 - 0.25f64.cos());
        assert!(close(vol, exact, 1e-9));
        assert!((vol - 0.097665).abs() < 1e-6);
        assert!(matches!(annulus_volume(&tube, 0.1, 0.25, 2), Err(Error::Domain(_))));
        assert!(matches!(annulus_volume(&tube, 9.9, 0.25, 2), Err(Error::Domain(_))));
    }

    #[test]
    fn annulus_on_thin_cone_sweeps_whole_spheres() {
        // r/f ≥ π everywhere on the shell, so the annulus is the whole shell.
        let delta = 0.01;
        let cone = make_profile(AnalyticKind::Cone { slope: delta }, 3.0, 2).unwrap();
        let (s, r) = (1.5f64, 0.5f64);
        let shell = 4.0 * PI * delta * delta * ((s + r).powi(3) - (s - r).powi(3_i32)) / 3.0;
        assert!(close(annulus_volume(&cone, s, r, 2).unwrap(), shell, 1e-6));
    }

    #[test]
    fn thin_annuli_per_unit_length_are_radius_independent() {
        // For r ≪ f, fⁿ·vol(B(r/f)) ≈ ω_{n−1} rⁿ/n whatever f is.
        let r = 1e-3;
        let reference = omega(1) / 2.0;
        for c in [1.0, 2.0, 5.0] {
            let tube = make_profile(AnalyticKind::Cylinder { radius: c }, 10.0, 2).unwrap();
            let per_len = annulus_volume(&tube, 5.0, r, 2).unwrap() / (2.0 * r) / r.powi(2);
            assert!(close(per_len, reference, 1e-6), "c = {c}: {per_len}");
        }
        // The same cancellation fixes Bₙ: ω_{n−1}/(n 2^{(n−1)/2} 4ⁿ).
        let report = volume_ratio_lower_bound(1.0, 2).unwrap();
        assert!(close(report.b_n, 2.0 * PI / (2.0 * 2f64.sqrt() * 16.0), 1e-14));
    }

    #[test]
    fn bound_constants() {
        let r = volume_ratio_lower_bound(0.5, 2).unwrap();
        assert!((r.v1 - PI / 192.0).abs() <= 1e-12);
        assert!((r.a_n - 1.84030).abs() < 1e-5);
        assert!((r.b_n - 0.138841).abs() < 1e-6);
        assert!((r.v2 - 0.014377).abs() < 1e-5);
        assert_eq!(r.v, r.v2);
        assert!(volume_ratio_lower_bound(0.0, 2).is_err());
        assert!(volume_ratio_lower_bound(0.5, 1).is_err());
        let json = serde_json::to_value(r).unwrap();
        assert!(json.get("A_n").is_some() && json.get("B_n").is_some());
    }

    #[test]
    fn euclidean_scan() {
        let flat = make_profile(AnalyticKind::Euclidean, 3.0, 2).unwrap();
        let out = ratio_scan(&flat, 2, &[1.0], ScanOptions::default()).unwrap();
        let RatioScanOutcome::Scanned(scan) = out else { panic!("{out:?}") };
        assert!(close(scan.delta, 1.0, 1e-9));
        // At the tip the bound is the exact ball.
        assert!(close(scan.rows[0].ratio, 4.0 * PI / 3.0, 1e-8));
        assert!(scan.bound_holds());
        assert!(scan.min.ratio > 10.0 * scan.bound.v);
    }

    #[test]
    fn scan_reports_failed_hypothesis() {
        let cone = make_profile(AnalyticKind::Cone { slope: 0.25 }, 3.0, 2).unwrap();
        let out = ratio_scan(&cone, 2, &[1.0], ScanOptions { delta: Some(0.5), ..Default::default() }).unwrap();
        match out {
            RatioScanOutcome::HypothesisFailed { delta, s } => {
                assert_eq!(delta, 0.5);
                assert!(s > 0.0 && s < 0.01, "{s}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn collapsing_tails_scale_like_eps_to_the_n() {
        let cone = make_profile(AnalyticKind::Cone { slope: 0.5 }, 8.0, 2).unwrap();
        let mins: Vec<f64> = [0.2, 0.1]
            .iter()
            .map(|&eps| {
                let capped = cap_cylinder(&cone, 0.5, eps).unwrap();
                match ratio_scan(&capped, 2, &[1.0], ScanOptions::default()).unwrap() {
                    RatioScanOutcome::Scanned(s) => {
                        assert!(s.bound_holds());
                        s.min.ratio
                    }
                    other => panic!("{other:?}"),
                }
            })
            .collect();
        let factor = mins[0] / mins[1];
        assert!((factor - 4.0).abs() < 0.05, "{factor}");
    }

    #[test]
    fn csv_rows() {
        let mut buf = Vec::new();
        write_ratio_csv(&mut buf, &[RatioRow { s_center: 0.5, r: 1.0, ratio: 2.0 }]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "s_center,r,ratio\n0.5,1,2\n");
    }

    #[test]
    fn radial_distances() {
        let mut state = GridState::uniform_test_state(64, 1.0, |_| 1.0);
        assert!(close(arclength_and_distance(&state, 0.0, 1.0).unwrap(), 1.0, 1e-14));
        state.sigma.iter_mut().for_each(|s| *s = 2.0);
        assert!(close(arclength_and_distance(&state, 1.0, 0.0).unwrap(), 2.0, 1e-14));
        assert!(arclength_and_distance(&state, 0.0, 1.5).is_err());
        // σ = 1 + x: the even end extensions cancel, so the rule is exact.
        for cells in [32, 64] {
            let st = GridState::uniform_test_state(cells, 1.0, |x| 1.0 + x);
            assert!((arclength_and_distance(&st, 0.0, 1.0).unwrap() - 1.5).abs() < 1e-13);
        }
        // Interior sub-intervals are integrated exactly too.
        let st = GridState::uniform_test_state(64, 1.0, |x| 1.0 + x);
        assert!((arclength_and_distance(&st, 0.25, 0.75).unwrap() - 0.75).abs() < 1e-13);
    }
}
