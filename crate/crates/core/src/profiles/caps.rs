//! Bounded-curvature approximants: linear and cylindrical caps outside a
//! compact set, and smoothing of a cone-like tip.

use serde::{Deserialize, Serialize};

use super::{AnalyticKind, BumpPsi, CapPsiBig, Piece, Profile, Shape, Tip};
use crate::{Error, Result};

/// Samples per unit length used to verify construction postconditions.
pub const VERIFY_DENSITY: f64 = 1e4;

fn require_anchored(f: &Profile) -> Result<()> {
    if !f.is_tip_anchored() {
        return Err(Error::Parameter("construction requires a tip-anchored profile".into()));
    }
    Ok(())
}

fn require_blend_zone(f: &Profile, k: f64) -> Result<()> {
    if !(k >= 0.0) || k + 1.0 > f.domain_end() {
        return Err(Error::Parameter(format!("blend zone [{k}, {}] must lie inside [0, {}]", k + 1.0, f.domain_end())));
    }
    Ok(())
}

/// Replace `f` beyond `k + 1` by its tangent line at `k`, blending on `[k, k+1]`.
///
/// The result equals `f` bit-for-bit on `[0, k]` and is verified to have
/// `f_k' > 0` on the whole domain.
pub fn cap_linear(f: &Profile, k: f64) -> Result<Profile> {
    require_anchored(f)?;
    require_blend_zone(f, k)?;
    if let Some(s) = f.scan_first(k, k + 1.0, VERIFY_DENSITY, |_, j| !(j.d1 > 0.0)) {
        return Err(Error::construction(s, "f' ≤ 0 on the blend zone"));
    }
    let anchor = f.jet(k);
    let line = AnalyticKind::Affine { value: anchor.f, slope: anchor.d1, anchor: k };
    let shape = Shape::Blend {
        inner: Box::new(f.shape().clone()),
        outer: Box::new(Shape::Analytic(line)),
        start: k,
        width: 1.0,
    };
    let capped = Profile::from_shape(shape, f.domain_end(), f.fiber_dim(), Tip::Anchored)?;
    if let Some(s) = capped.scan_first(0.0, f.domain_end(), VERIFY_DENSITY, |_, j| !(j.d1 > 0.0)) {
        return Err(Error::construction(s, "capped profile has f_k' ≤ 0"));
    }
    Ok(capped)
}

/// Replace `f` beyond `k + 1` by the constant `ε/2`, blending on `[k, k+1]`.
pub fn cap_cylinder(f: &Profile, k: f64, eps: f64) -> Result<Profile> {
    if !(eps > 0.0) {
        return Err(Error::Parameter(format!("cylinder cap width must be positive, got {eps}")));
    }
    require_blend_zone(f, k)?;
    if let Some(s) = f.scan_first(k, k + 1.0, VERIFY_DENSITY, |_, j| !(j.f >= eps)) {
        return Err(Error::construction(s, format!("f < ε = {eps} on the blend zone")));
    }
    require_anchored(f)?;
    let tail = AnalyticKind::Affine { value: 0.5 * eps, slope: 0.0, anchor: 0.0 };
    let shape = Shape::Blend {
        inner: Box::new(f.shape().clone()),
        outer: Box::new(Shape::Analytic(tail)),
        start: k,
        width: 1.0,
    };
    let capped = Profile::from_shape(shape, f.domain_end(), f.fiber_dim(), Tip::Anchored)?;
    if let Some(s) = capped.scan_first(k, k + 1.0, VERIFY_DENSITY, |_, j| !(j.f >= 0.5 * eps)) {
        return Err(Error::construction(s, "capped profile dips below ε/2"));
    }
    Ok(capped)
}

/// The three candidates for the smoothing scale ε_k and their minimum.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsilonBranches {
    /// `√((1 − v²/16)/100) / (C k²)`
    pub curvature: f64,
    /// `v / (4 C k)`
    pub slope: f64,
    /// `v L / (2 k³ C)`
    pub ricci: f64,
    pub value: f64,
}

pub fn cone_smoothing_epsilon(k: f64, v: f64, ricci_scale: f64, bound: f64) -> EpsilonBranches {
    let curvature = ((1.0 - v * v / 16.0) / 100.0).sqrt() / (bound * k * k);
    let slope = v / (4.0 * bound * k);
    let ricci = v * ricci_scale / (2.0 * k * k * k * bound);
    EpsilonBranches { curvature, slope, ricci, value: curvature.min(slope).min(ricci) }
}

/// Construction record for a smoothed cone.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothConeInfo {
    pub k: f64,
    pub tip_slope: f64,
    pub ricci_scale: f64,
    /// Bound C used in ε_k.
    pub bound_used: f64,
    /// Measured sup(|ψ'|+|ψ''|+|ψ'''|) of the implemented cut-off.
    pub bound_realized: f64,
    pub epsilon: EpsilonBranches,
    /// Length of the Ψ-cap piece, ε_k/Ψ(1).
    pub cap_length: f64,
    /// Largest radius where |f|², |f''|² ≤ (1 − v²/4)/100 (sampled).
    pub delta0: f64,
    pub min_slope: f64,
    pub min_tip_margin: f64,
    pub min_ricci_margin: f64,
}

const DELTA_SAMPLES: usize = 1000;

fn small_on(f: &Profile, delta: f64, threshold: f64) -> bool {
    Profile::sample_points(0.0, delta, DELTA_SAMPLES).all(|s| {
        let j = f.jet(s);
        j.f * j.f <= threshold && j.d2 * j.d2 <= threshold
    })
}

/// Smooth the cone-like tip of `f` (f(0) = 0, f''(0) = 0, f'(0) = v < 1).
///
/// Returns the glued profile: the rescaled Ψ-cap on `[0, ε_k/Ψ(1)]` followed
/// by `F_k(s − ε_k/Ψ(1))` with `F_k(u) = ε_k ψ(k u) + f(u)`. When `bound` is
/// `None` the measured bound of the implemented ψ is used for C.
pub fn smooth_cone(f: &Profile, k: f64, v: f64, ricci_scale: f64, bound: Option<f64>) -> Result<Profile> {
    if !(v > 0.0 && v < 1.0) {
        return Err(Error::Parameter(format!("tip slope v must lie in (0, 1), got {v}")));
    }
    if !(k > 0.0 && ricci_scale > 0.0) {
        return Err(Error::Parameter("k and L must be positive".into()));
    }
    require_anchored(f)?;
    let psi = BumpPsi::new();
    let bound_used = bound.unwrap_or_else(|| psi.derivative_bound());
    if !(bound_used > 0.0) {
        return Err(Error::Parameter(format!("bump bound C must be positive, got {bound_used}")));
    }
    let tip = f.jet(0.0);
    if tip.f.abs() > 1e-12 || tip.d2.abs() > 1e-9 {
        return Err(Error::construction(0.0, "cone smoothing needs f(0) = 0 and f''(0) = 0"));
    }
    if (tip.d1 - v).abs() > 1e-9 {
        return Err(Error::construction(0.0, format!("f'(0) = {} differs from v = {v}", tip.d1)));
    }

    let threshold = (1.0 - v * v / 4.0) / 100.0;
    let (mut lo, mut hi) = (0.0, f.domain_end());
    if small_on(f, hi, threshold) {
        lo = hi;
    } else {
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if small_on(f, mid, threshold) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
    }
    let delta0 = lo;
    if !(delta0 > 0.0) {
        return Err(Error::construction(0.0, "|f|², |f''|² ≤ (1 − v²/4)/100 fails near the tip"));
    }
    if let Some(s) = Profile::sample_points(0.0, delta0, DELTA_SAMPLES).find(|&s| {
        let d1 = f.jet(s).d1;
        !(d1 >= 0.5 * v && d1 <= 0.5 * (v + 1.0))
    }) {
        return Err(Error::construction(s, "f' leaves [v/2, (v+1)/2] on [0, δ₀]"));
    }
    if !(k > 1.0 / delta0) {
        return Err(Error::Parameter(format!("k = {k} must exceed 1/δ₀ = {}", 1.0 / delta0)));
    }

    let epsilon = cone_smoothing_epsilon(k, v, ricci_scale, bound_used);
    let eps = epsilon.value;
    let cap = CapPsiBig::new(v)?;
    let cap_length = eps / cap.end_value();
    if cap_length >= f.domain_end() {
        return Err(Error::Parameter("cap length exceeds the profile domain".into()));
    }
    let bumped = Shape::BumpAdded { eps, k, base: Box::new(f.shape().clone()) };
    let pieces = vec![
        Piece { start: 0.0, shift: 0.0, shape: Shape::ScaledCap { scale: cap_length, cap } },
        Piece { start: cap_length, shift: cap_length, shape: bumped.clone() },
    ];
    let n = f.fiber_dim() as f64;

    // Postconditions on the F_k piece, in its own variable u.
    let body = Profile::from_shape(bumped, f.domain_end() - cap_length, f.fiber_dim(), Tip::Anchored)?;
    let slope_floor = 0.25 * v;
    if let Some(u) = body.scan_first(0.0, body.domain_end(), VERIFY_DENSITY, |_, j| !(j.d1 >= slope_floor)) {
        return Err(Error::construction(u + cap_length, "F_k' ≥ v/4 fails"));
    }
    let tip_floor = (n - 2.0) * (1.0 - v * v / 16.0);
    let tip_density = VERIFY_DENSITY * k;
    let tip_margin = |j: &super::Jet| -2.0 * j.f * j.d2 + (n - 1.0) * (1.0 - j.d1 * j.d1) - tip_floor;
    if let Some(u) = body.scan_first(0.0, 1.0 / k, tip_density, |_, j| tip_margin(j) < -1e-12) {
        return Err(Error::construction(u + cap_length, "−2F F'' + (n−1)(1 − F'²) ≥ (n−2)(1 − v²/16) fails"));
    }
    let ricci_margin = |j: &super::Jet| {
        if j.d2 >= 0.0 {
            -j.d2 / j.f + 2.0 * ricci_scale
        } else {
            f64::INFINITY
        }
    };
    if let Some(u) = body.scan_first(0.0, body.domain_end(), VERIFY_DENSITY, |_, j| ricci_margin(j) < 0.0) {
        return Err(Error::construction(u + cap_length, "−F''/F ≥ −2L fails where F'' ≥ 0"));
    }

    let min_over = |a: f64, b: f64, density: f64, g: &(dyn Fn(&super::Jet) -> f64 + Sync)| {
        let count = (((b - a) * density).ceil() as usize).max(1);
        crate::par::argmin(crate::par::Exec::Auto, count + 1, |i| g(&body.jet(a + (b - a) * i as f64 / count as f64)))
            .map(|(_, m)| m)
            .unwrap_or(f64::NAN)
    };
    let end = body.domain_end();
    let min_slope = min_over(0.0, end, VERIFY_DENSITY, &|j| j.d1);
    let min_tip_margin = min_over(0.0, 1.0 / k, tip_density, &tip_margin);
    let min_ricci_margin = min_over(0.0, end, VERIFY_DENSITY, &ricci_margin);

    let mut out = super::make_composite(pieces, f.domain_end(), f.fiber_dim(), Tip::Anchored)?;
    out.cone_info = Some(SmoothConeInfo {
        k,
        tip_slope: v,
        ricci_scale,
        bound_used,
        bound_realized: psi.derivative_bound(),
        epsilon,
        cap_length,
        delta0,
        min_slope,
        min_tip_margin,
        min_ricci_margin,
    });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::super::make_profile;
    use super::*;

    #[test]
    fn cap_linear_is_identity_on_cones() {
        let f = make_profile(AnalyticKind::Euclidean, 10.0, 2).unwrap();
        let fk = cap_linear(&f, 5.0).unwrap();
        for s in Profile::sample_points(0.0, 10.0, 1000) {
            assert!((fk.value(s) - s).abs() <= 1e-14 * (1.0 + s));
            assert!((fk.derivative(1, s) - 1.0).abs() <= 1e-14);
        }
    }

    #[test]
    fn cap_linear_rejects_decreasing_blend_zone() {
        // f' = 1 + 2 cos(s) < 0 at s = 5.5? cos(5.5) ≈ 0.709, so use a shifted phase
        let f = make_profile(AnalyticKind::PerturbedLinear { slope: 0.3, amplitude: 0.5, frequency: 1.0 }, 10.0, 2)
            .unwrap();
        // f'(s) = 0.3 + 0.5 cos s, negative for s in (1.98, 4.30); blend zone [2.5, 3.5]
        match cap_linear(&f, 2.5) {
            Err(Error::Construction { s, .. }) => assert!((2.5..=3.5).contains(&s)),
            other => panic!("expected construction error, got {other:?}"),
        }
    }

    #[test]
    fn cap_cylinder_errors() {
        let c = make_profile(AnalyticKind::Cylinder { radius: 1.0 }, 10.0, 2).unwrap();
        assert!(matches!(cap_cylinder(&c, 5.0, 2.0), Err(Error::Construction { .. })));
        let e = make_profile(AnalyticKind::Euclidean, 10.0, 2).unwrap();
        assert!(cap_cylinder(&e, 9.5, 1.0).is_err());
        assert!(cap_cylinder(&e, 5.0, 0.0).is_err());
    }

    #[test]
    fn epsilon_branches() {
        let e = cone_smoothing_epsilon(20.0, 0.5, 1.0, 10.0);
        // √((1 − 1/64)/100)/(10·400)
        let curvature = (0.984375f64 / 100.0).sqrt() / 4000.0;
        assert!((e.curvature - curvature).abs() < 1e-18);
        assert!((e.curvature - 2.48e-5).abs() < 1e-7);
        assert!((e.slope - 6.25e-4).abs() < 1e-18);
        assert!((e.ricci - 3.125e-6).abs() < 1e-18);
        assert_eq!(e.value, e.ricci);
    }

    #[test]
    fn smooth_cone_rejects_bad_tips() {
        let e = make_profile(AnalyticKind::Euclidean, 4.0, 2).unwrap();
        assert!(smooth_cone(&e, 20.0, 0.5, 1.0, None).is_err());
        let cone = make_profile(AnalyticKind::Cone { slope: 0.5 }, 4.0, 2).unwrap();
        // k must exceed 1/δ₀ (δ₀ ≈ 0.19 for this cone)
        assert!(matches!(smooth_cone(&cone, 3.0, 0.5, 1.0, None), Err(Error::Parameter(_))));
    }
}
