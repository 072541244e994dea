//! Curvature of `g = ds² + f(s)² g_std` on ℝⁿ⁺¹ with fibre Sⁿ.
//!
//! The curvature operator of such a metric has exactly two sectional
//! eigenvalues: `K = −f''/f` on planes containing the radial direction and
//! `L = (1 − f'²)/f²` on planes tangent to the fibre. `|Rm|` is taken to be
//! `max(|K|, |L|)`; any tensor norm differs by a dimensional factor.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::par::{self, Exec};
use crate::profiles::Profile;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvatureSample {
    pub s: f64,
    /// Radial-plane sectional curvature.
    pub k: f64,
    /// Spherical-plane sectional curvature.
    pub l: f64,
    pub ric_radial: f64,
    pub ric_sph: f64,
    pub scal: f64,
    pub rm_norm: f64,
}

/// Eigenvalues of `A_g = (Ric − (Scal/(2n) − (n−1)) g)/(n−1)` on g-unit
/// radial and spherical vectors.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchoutenPair {
    pub a_radial: f64,
    pub a_spherical: f64,
}

/// Curvature from the jet `(f, f', f'')` at `s`.
///
/// The Ricci and scalar entries are evaluated from their own closed forms,
/// not assembled from `K` and `L`, so the algebraic relations between them
/// remain checkable.
pub fn curvature_at(s: f64, f: f64, d1: f64, d2: f64, n: usize) -> Result<CurvatureSample> {
    if !(f > 0.0) {
        return Err(Error::Domain(format!("curvature needs f > 0, got f({s}) = {f}")));
    }
    Ok(curvature_unchecked(s, f, d1, d2, n as f64))
}

#[inline]
pub(crate) fn curvature_unchecked(s: f64, f: f64, d1: f64, d2: f64, n: f64) -> CurvatureSample {
    let f2 = f * f;
    let slope_defect = 1.0 - d1 * d1;
    let k = -d2 / f;
    let l = slope_defect / f2;
    CurvatureSample {
        s,
        k,
        l,
        ric_radial: -n * d2 / f,
        ric_sph: (-f * d2 + (n - 1.0) * slope_defect) / f2,
        scal: n * (-2.0 * d2 / f + (n - 1.0) * slope_defect / f2),
        rm_norm: k.abs().max(l.abs()),
    }
}

impl CurvatureSample {
    pub fn schouten(&self) -> SchoutenPair {
        SchoutenPair { a_radial: 1.0 + self.k - 0.5 * self.l, a_spherical: 0.5 * self.l + 1.0 }
    }

    pub fn min_ricci(&self) -> f64 {
        self.ric_radial.min(self.ric_sph)
    }
}

/// Curvature of `profile` at each point of `points` (in parallel).
pub fn curvature_field(profile: &Profile, points: &[f64]) -> Result<Vec<CurvatureSample>> {
    let n = profile.fiber_dim();
    par::map_slice(Exec::Auto, points, |&s| {
        let j = profile.jet(s);
        curvature_at(s, j.f, j.d1, j.d2, n)
    })
    .into_iter()
    .collect()
}

/// Limit of the curvature at the tip s → 0.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum TipCurvature {
    /// Smooth tip (f'(0) = 1): K and L both tend to −f'''(0).
    Regular(CurvatureSample),
    /// Cone-like tip f'(0) = v ≠ 1: K → −f'''(0)/v stays finite while
    /// L·s² → (1 − v²)/v².
    Divergent { slope: f64, k_limit: f64, l_rate: f64 },
}

pub fn tip_curvature(profile: &Profile) -> TipCurvature {
    let j = profile.jet(0.0);
    let n = profile.fiber_dim() as f64;
    let v = j.d1;
    if (v - 1.0).abs() <= 1e-9 {
        let c = -j.d3;
        TipCurvature::Regular(CurvatureSample {
            s: 0.0,
            k: c,
            l: c,
            ric_radial: n * c,
            ric_sph: n * c,
            scal: n * (n + 1.0) * c,
            rm_norm: c.abs(),
        })
    } else {
        TipCurvature::Divergent { slope: v, k_limit: -j.d3 / v, l_rate: (1.0 - v * v) / (v * v) }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pic1Report {
    pub holds: bool,
    pub tolerance: f64,
    /// min over samples of (1 − f'²)/(2f²) + 1
    pub worst_margin_1: f64,
    pub argmin_1: f64,
    /// min over samples of 2 − f''/f
    pub worst_margin_2: f64,
    pub argmin_2: f64,
    /// Smallest sampled s where either margin is below −tolerance.
    pub first_failure: Option<f64>,
}

/// Check the two scalar PIC1 conditions on `density` samples per unit length
/// over `(0, S]`.
pub fn pic1_check(profile: &Profile, density: f64, tolerance: f64) -> Pic1Report {
    let end = profile.domain_end();
    let count = ((end * density).ceil() as usize).max(1);
    let at = |i: usize| end * (i + 1) as f64 / count as f64;
    let margins = |i: usize| {
        let s = at(i);
        let j = profile.jet(s);
        let l = (1.0 - j.d1 * j.d1) / (j.f * j.f);
        (0.5 * l + 1.0, 2.0 - j.d2 / j.f)
    };
    let (i1, m1) = par::argmin(Exec::Auto, count, |i| margins(i).0).unwrap();
    let (i2, m2) = par::argmin(Exec::Auto, count, |i| margins(i).1).unwrap();
    let first = par::find_first(Exec::Auto, count, |i| {
        let (a, b) = margins(i);
        !(a >= -tolerance && b >= -tolerance)
    });
    Pic1Report {
        holds: first.is_none(),
        tolerance,
        worst_margin_1: m1,
        argmin_1: at(i1),
        worst_margin_2: m2,
        argmin_2: at(i2),
        first_failure: first.map(at),
    }
}

/// Minimum over orthonormal 3-frames of `A(e₁,e₁) + A(e₂,e₂) + 2A(e₃,e₃)`.
///
/// For unit `e` with radial component `c`, `A(e,e) = a_θ + (a_r − a_θ)c²`.
/// The radial components `(c₁,c₂,c₃)` of a frame fill the unit ball, which
/// is searched on a `(resolution+1)³` lattice.
pub fn pic1_frame_oracle(pair: SchoutenPair, resolution: usize) -> f64 {
    let res = resolution.max(2);
    let step = 2.0 / res as f64;
    let coord = |i: usize| -1.0 + step * i as f64;
    let diff = pair.a_radial - pair.a_spherical;
    let mut best = f64::INFINITY;
    for i in 0..=res {
        let c1 = coord(i);
        for j in 0..=res {
            let c2 = coord(j);
            let r12 = c1 * c1 + c2 * c2;
            if r12 > 1.0 + 1e-12 {
                continue;
            }
            for k in 0..=res {
                let c3 = coord(k);
                let r = r12 + c3 * c3;
                if r > 1.0 + 1e-12 {
                    continue;
                }
                let value = 4.0 * pair.a_spherical + diff * (r12 + 2.0 * c3 * c3);
                if value < best {
                    best = value;
                }
            }
        }
    }
    best
}

/// Rebuild `K` and `L` from the Ricci data through the locally conformally
/// flat decomposition `Rm = P ⊙ g`, `P = (Ric − Scal/(2n) g)/(n−1)`, and
/// return the largest relative deviation from the direct formulas.
pub fn lcf_reconstruction_check(sample: &CurvatureSample, f: f64, d1: f64, n: usize) -> f64 {
    let n = n as f64;
    let trace_part = sample.scal / (2.0 * n);
    let p_radial = (sample.ric_radial - trace_part) / (n - 1.0);
    let p_sph = (sample.ric_sph - trace_part) / (n - 1.0);
    // Kulkarni–Nomizu: a plane spanned by eigenvectors eᵢ, eⱼ of P has
    // sectional curvature P(eᵢ,eᵢ) + P(eⱼ,eⱼ).
    let k_rec = p_radial + p_sph;
    let l_rec = 2.0 * p_sph;
    let l_direct = (1.0 - d1 * d1) / (f * f);
    let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1.0);
    rel(k_rec, sample.k).max(rel(l_rec, l_direct))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrowthReport {
    pub holds: bool,
    /// min over samples of (e^{√2 s} − 1)/√2 − f(s)
    pub worst_value_margin: f64,
    pub argmin_value: f64,
    /// min over samples of e^{√2 s} − f'(s)
    pub worst_slope_margin: f64,
    pub argmin_slope: f64,
}

/// Verify the exponential growth bound implied by the first PIC1 condition.
/// Refuses unless PIC1 holds on the whole domain.
pub fn growth_bound_check(profile: &Profile, density: f64, tolerance: f64) -> Result<GrowthReport> {
    let pic1 = pic1_check(profile, density, tolerance);
    if !pic1.holds {
        return Err(Error::Precondition(format!(
            "growth bound is only claimed under PIC1; first violation at s = {}",
            pic1.first_failure.unwrap_or(f64::NAN)
        )));
    }
    let end = profile.domain_end();
    let count = ((end * density).ceil() as usize).max(1);
    let at = |i: usize| end * i as f64 / count as f64;
    let r2 = std::f64::consts::SQRT_2;
    let (iv, mv) = par::argmin(Exec::Auto, count + 1, |i| {
        let s = at(i);
        (r2 * s).exp_m1() / r2 - profile.value(s)
    })
    .unwrap();
    let (is, ms) = par::argmin(Exec::Auto, count + 1, |i| {
        let s = at(i);
        (r2 * s).exp() - profile.derivative(1, s)
    })
    .unwrap();
    Ok(GrowthReport {
        holds: mv >= -tolerance && ms >= -tolerance,
        worst_value_margin: mv,
        argmin_value: at(iv),
        worst_slope_margin: ms,
        argmin_slope: at(is),
    })
}

pub const CURVATURE_CSV_HEADER: &str = "s,K,L,ric_radial,ric_sph,scal,rm_norm";

pub fn write_curvature_csv<W: Write>(mut out: W, samples: &[CurvatureSample]) -> std::io::Result<()> {
    writeln!(out, "{CURVATURE_CSV_HEADER}")?;
    for c in samples {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            // `+ 0.0` folds negative zero so exact zeros print as `0`
            c.s + 0.0,
            c.k + 0.0,
            c.l + 0.0,
            c.ric_radial + 0.0,
            c.ric_sph + 0.0,
            c.scal + 0.0,
            c.rm_norm + 0.0
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profiles::{make_profile, AnalyticKind};
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

    #[test]
    fn flat_and_round_and_cylinder() {
        let c = curvature_at(1.0, 1.0, 1.0, 0.0, 2).unwrap();
        assert_eq!((c.k, c.l, c.scal), (0.0, 0.0, 0.0));

        let s = FRAC_PI_4;
        let c = curvature_at(s, s.sin(), s.cos(), -s.sin(), 2).unwrap();
        assert!((c.k - 1.0).abs() < 1e-15);
        assert!((c.l - 1.0).abs() < 1e-15);
        assert!((c.scal - 6.0).abs() < 1e-14);

        let c = curvature_at(3.0, 1.0, 0.0, 0.0, 2).unwrap();
        assert_eq!((c.k, c.l, c.scal, c.rm_norm), (0.0, 1.0, 2.0, 1.0));

        assert!(matches!(curvature_at(0.0, 0.0, 1.0, 0.0, 2), Err(Error::Domain(_))));
    }

    #[test]
    fn tip_limits() {
        let e = make_profile(AnalyticKind::Euclidean, 1.0, 2).unwrap();
        match tip_curvature(&e) {
            TipCurvature::Regular(c) => assert_eq!((c.k, c.l), (0.0, 0.0)),
            other => panic!("{other:?}"),
        }
        let sc = make_profile(AnalyticKind::SphereCap, FRAC_PI_2, 2).unwrap();
        match tip_curvature(&sc) {
            TipCurvature::Regular(c) => assert_eq!((c.k, c.l, c.scal), (1.0, 1.0, 6.0)),
            other => panic!("{other:?}"),
        }
        let cone = make_profile(AnalyticKind::Cone { slope: 0.5 }, 1.0, 2).unwrap();
        match tip_curvature(&cone) {
            TipCurvature::Divergent { l_rate, .. } => assert!((l_rate - 3.0).abs() < 1e-15),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn pic1_examples() {
        let e = make_profile(AnalyticKind::Euclidean, 5.0, 2).unwrap();
        let r = pic1_check(&e, 100.0, 1e-12);
        assert!(r.holds);
        assert!((r.worst_margin_1 - 1.0).abs() < 1e-12 && (r.worst_margin_2 - 2.0).abs() < 1e-12);

        let sc = make_profile(AnalyticKind::SphereCap, FRAC_PI_2, 2).unwrap();
        let r = pic1_check(&sc, 1000.0, 1e-12);
        assert!(r.holds);
        assert!((r.worst_margin_1 - 1.5).abs() < 1e-9);
        assert!((r.worst_margin_2 - 3.0).abs() < 1e-12);

        let fast = make_profile(AnalyticKind::ExpGrowth { rate: 2.0 }, 6.0, 2).unwrap();
        let r = pic1_check(&fast, 100.0, 1e-12);
        assert!(!r.holds);
        assert!(r.first_failure.is_some());
        // At s = 5 the first margin is 1 − 2(e¹⁰+1)/(e¹⁰−1) ≈ −1.
        let j = fast.jet(5.0);
        let m1 = (1.0 - j.d1 * j.d1) / (2.0 * j.f * j.f) + 1.0;
        let e10 = 10f64.exp();
        assert!((m1 - (1.0 - 2.0 * (e10 + 1.0) / (e10 - 1.0))).abs() < 1e-12);
        assert!(m1 < 0.0);
    }

    #[test]
    fn frame_oracle_examples() {
        let pair = |a_radial, a_spherical| SchoutenPair { a_radial, a_spherical };
        assert_eq!(pic1_frame_oracle(pair(1.0, 1.0), 100), 4.0);
        assert_eq!(pic1_frame_oracle(pair(-1.0, 1.0), 100), 0.0);
        assert_eq!(pic1_frame_oracle(pair(0.0, -0.5), 100), -2.0);
    }

    #[test]
    fn lcf_examples() {
        let e = curvature_at(1.0, 1.0, 1.0, 0.0, 2).unwrap();
        assert_eq!(lcf_reconstruction_check(&e, 1.0, 1.0, 2), 0.0);
        let s = 0.6f64;
        let c = curvature_at(s, s.sin(), s.cos(), -s.sin(), 3).unwrap();
        assert!(lcf_reconstruction_check(&c, s.sin(), s.cos(), 3) <= 1e-12);
        let c = curvature_at(1.0, 2.0, 0.0, 0.0, 2).unwrap();
        assert_eq!((c.k, c.l), (0.0, 0.25));
        assert!(lcf_reconstruction_check(&c, 2.0, 0.0, 2) <= 1e-15);
    }

    #[test]
    fn growth_examples() {
        let e = make_profile(AnalyticKind::Euclidean, 5.0, 2).unwrap();
        assert!(growth_bound_check(&e, 100.0, 1e-12).unwrap().holds);
        let sat = make_profile(AnalyticKind::Sinh { rate: std::f64::consts::SQRT_2 }, 3.0, 2).unwrap();
        let r = growth_bound_check(&sat, 100.0, 1e-9).unwrap();
        assert!(r.holds);
        let fast = make_profile(AnalyticKind::ExpGrowth { rate: 2.0 }, 6.0, 2).unwrap();
        assert!(matches!(growth_bound_check(&fast, 100.0, 1e-12), Err(Error::Precondition(_))));
    }

    #[test]
    fn csv_header_and_rows() {
        let c = curvature_at(1.0, 1.0, 0.0, 0.0, 2).unwrap();
        let mut buf = Vec::new();
        write_curvature_csv(&mut buf, &[c]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "s,K,L,ric_radial,ric_sph,scal,rm_norm\n1,0,1,0,1,2,1\n");
    }
}
