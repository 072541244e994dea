//! Warping profiles `f(s)` for metrics `ds² + f(s)² g_std`.
//!
//! A [`Profile`] is immutable after construction and carries closed-form
//! evaluators for `f, f', f'', f'''` wherever the shape admits them. The
//! approximation constructions (linear cap, cylinder cap, cone smoothing)
//! live in [`caps`]; the JSON description in [`spec`].

mod bump;
pub mod caps;
mod spec;
mod spline;

pub use bump::{BumpPsi, CapPsiBig};
pub use caps::{cap_cylinder, cap_linear, cone_smoothing_epsilon, smooth_cone, EpsilonBranches, SmoothConeInfo};
pub use spec::ProfileSpec;
pub use spline::NaturalSpline;

use std::f64::consts::PI;

use crate::par::{self, Exec};
use crate::{Error, Result};

/// Value and first three derivatives at a point.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Jet {
    pub f: f64,
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
}

impl Jet {
    pub fn constant(c: f64) -> Self {
        Jet { f: c, ..Jet::default() }
    }

    pub fn get(&self, order: usize) -> f64 {
        match order {
            0 => self.f,
            1 => self.d1,
            2 => self.d2,
            3 => self.d3,
            _ => panic!("derivative order {order} is not implemented"),
        }
    }
}

/// Closed-form profile families.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AnalyticKind {
    /// f(s) = s
    Euclidean,
    /// f(s) = δ s
    Cone { slope: f64 },
    /// f(s) ≡ c (tip-free)
    Cylinder { radius: f64 },
    /// f(s) = sin s
    SphereCap,
    /// f(s) = a s + b sin(ω s)
    PerturbedLinear { slope: f64, amplitude: f64, frequency: f64 },
    /// f(s) = (e^{r s} − 1)/r
    ExpGrowth { rate: f64 },
    /// f(s) = sinh(r s)/r
    Sinh { rate: f64 },
    /// f(s) = c tanh(s/c)
    Tanh { scale: f64 },
    /// f(s) = c atan(s/c)
    Arctan { scale: f64 },
    /// f(s) = value + slope (s − anchor)
    Affine { value: f64, slope: f64, anchor: f64 },
}

impl AnalyticKind {
    fn jet(&self, s: f64) -> Jet {
        match *self {
            AnalyticKind::Euclidean => Jet { f: s, d1: 1.0, d2: 0.0, d3: 0.0 },
            AnalyticKind::Cone { slope } => Jet { f: slope * s, d1: slope, d2: 0.0, d3: 0.0 },
            AnalyticKind::Cylinder { radius } => Jet::constant(radius),
            AnalyticKind::SphereCap => {
                let (sn, cs) = s.sin_cos();
                Jet { f: sn, d1: cs, d2: -sn, d3: -cs }
            }
            AnalyticKind::PerturbedLinear { slope, amplitude, frequency } => {
                let (sn, cs) = (frequency * s).sin_cos();
                let w = frequency;
                Jet {
                    f: slope * s + amplitude * sn,
                    d1: slope + amplitude * w * cs,
                    d2: -amplitude * w * w * sn,
                    d3: -amplitude * w * w * w * cs,
                }
            }
            AnalyticKind::ExpGrowth { rate } => {
                let e = (rate * s).exp();
                Jet { f: (rate * s).exp_m1() / rate, d1: e, d2: rate * e, d3: rate * rate * e }
            }
            AnalyticKind::Sinh { rate } => {
                let (sh, ch) = ((rate * s).sinh(), (rate * s).cosh());
                Jet { f: sh / rate, d1: ch, d2: rate * sh, d3: rate * rate * ch }
            }
            AnalyticKind::Tanh { scale } => {
                let th = (s / scale).tanh();
                let sech2 = 1.0 - th * th;
                Jet {
                    f: scale * th,
                    d1: sech2,
                    d2: -2.0 * sech2 * th / scale,
                    d3: -2.0 * sech2 * (1.0 - 3.0 * th * th) / (scale * scale),
                }
            }
            AnalyticKind::Arctan { scale } => {
                let u = s / scale;
                let q = 1.0 + u * u;
                Jet {
                    f: scale * u.atan(),
                    d1: 1.0 / q,
                    d2: -2.0 * u / (scale * q * q),
                    d3: (6.0 * u * u - 2.0) / (scale * scale * q * q * q),
                }
            }
            AnalyticKind::Affine { value, slope, anchor } => {
                Jet { f: value + slope * (s - anchor), d1: slope, d2: 0.0, d3: 0.0 }
            }
        }
    }

    fn tip_anchored(&self) -> bool {
        match *self {
            AnalyticKind::Cylinder { .. } => false,
            AnalyticKind::Affine { value, slope, anchor } => value - slope * anchor == 0.0,
            _ => true,
        }
    }

    fn validate(&self, domain_end: f64) -> Result<()> {
        let bad = |msg: String| Err(Error::Parameter(msg));
        match *self {
            AnalyticKind::Cone { slope } if !(slope > 0.0 && slope <= 1.0) => {
                bad(format!("cone slope must lie in (0, 1], got {slope}"))
            }
            AnalyticKind::Cylinder { radius } if !(radius > 0.0) => {
                bad(format!("cylinder radius must be positive, got {radius}"))
            }
            AnalyticKind::SphereCap if domain_end >= PI => {
                bad(format!("sphere cap needs domain_end < π so that f > 0 on (0, S], got {domain_end}"))
            }
            AnalyticKind::ExpGrowth { rate } | AnalyticKind::Sinh { rate } if !(rate > 0.0) => {
                bad(format!("growth rate must be positive, got {rate}"))
            }
            AnalyticKind::Tanh { scale } | AnalyticKind::Arctan { scale } if !(scale > 0.0) => {
                bad(format!("scale must be positive, got {scale}"))
            }
            AnalyticKind::PerturbedLinear { slope, amplitude, frequency }
                if !(slope.is_finite() && amplitude.is_finite() && frequency.is_finite()) =>
            {
                bad("perturbed linear parameters must be finite".into())
            }
            _ => Ok(()),
        }
    }
}

/// One piece of a composite profile: used on `[start, next start)` and
/// evaluated at `s − shift`.
#[derive(Clone, Debug)]
pub struct Piece {
    pub start: f64,
    pub shift: f64,
    pub shape: Shape,
}

#[derive(Clone, Debug)]
pub enum Shape {
    Analytic(AnalyticKind),
    Spline(NaturalSpline),
    /// `inner` on `[0, start]`, `outer` beyond `start + width`, quintic
    /// smoothstep convex combination in between.
    Blend {
        inner: Box<Shape>,
        outer: Box<Shape>,
        start: f64,
        width: f64,
    },
    Composite(Vec<Piece>),
    /// `a Ψ(s/a)`
    ScaledCap {
        scale: f64,
        cap: CapPsiBig,
    },
    /// `ε ψ(k s) + base(s)`
    BumpAdded {
        eps: f64,
        k: f64,
        base: Box<Shape>,
    },
}

/// Quintic smoothstep and its first three derivatives; C² at both ends.
pub(crate) fn smoothstep(u: f64) -> [f64; 4] {
    if u <= 0.0 {
        return [0.0; 4];
    }
    if u >= 1.0 {
        return [1.0, 0.0, 0.0, 0.0];
    }
    let u2 = u * u;
    [
        u2 * u * (10.0 - 15.0 * u + 6.0 * u2),
        30.0 * u2 * (1.0 - u) * (1.0 - u),
        60.0 * u * (1.0 - u) * (1.0 - 2.0 * u),
        60.0 * (1.0 - 6.0 * u + 6.0 * u2),
    ]
}

impl Shape {
    pub fn jet(&self, s: f64) -> Jet {
        match self {
            Shape::Analytic(k) => k.jet(s),
            Shape::Spline(sp) => sp.jet(s),
            Shape::Blend { inner, outer, start, width } => {
                if s <= *start {
                    return inner.jet(s);
                }
                if s >= start + width {
                    return outer.jet(s);
                }
                let a = inner.jet(s);
                let b = outer.jet(s);
                let u = (s - start) / width;
                let w = smoothstep(u);
                let (b1, b2, b3) = (w[1] / width, w[2] / (width * width), w[3] / (width * width * width));
                let d = [b.f - a.f, b.d1 - a.d1, b.d2 - a.d2, b.d3 - a.d3];
                Jet {
                    f: a.f + w[0] * d[0],
                    d1: a.d1 + w[0] * d[1] + b1 * d[0],
                    d2: a.d2 + w[0] * d[2] + 2.0 * b1 * d[1] + b2 * d[0],
                    d3: a.d3 + w[0] * d[3] + 3.0 * b1 * d[2] + 3.0 * b2 * d[1] + b3 * d[0],
                }
            }
            Shape::Composite(pieces) => {
                let idx = pieces.partition_point(|p| p.start <= s).saturating_sub(1);
                let p = &pieces[idx];
                p.shape.jet(s - p.shift)
            }
            Shape::ScaledCap { scale, cap } => {
                let j = cap.jet(s / scale);
                Jet { f: scale * j.f, d1: j.d1, d2: j.d2 / scale, d3: j.d3 / (scale * scale) }
            }
            Shape::BumpAdded { eps, k, base } => {
                let p = BumpPsi::new().jet(k * s);
                let b = base.jet(s);
                Jet {
                    f: b.f + eps * p.f,
                    d1: b.d1 + eps * k * p.d1,
                    d2: b.d2 + eps * k * k * p.d2,
                    d3: b.d3 + eps * k * k * k * p.d3,
                }
            }
        }
    }
}

/// Whether the fibres collapse at s = 0.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Tip {
    Anchored,
    /// Test-only profiles without a smooth tip (cylinders).
    Free,
}

/// A warping function on `[0, domain_end]` for fibre dimension `fiber_dim`.
#[derive(Clone, Debug)]
pub struct Profile {
    shape: Shape,
    domain_end: f64,
    fiber_dim: usize,
    tip: Tip,
    cone_info: Option<SmoothConeInfo>,
}

impl Profile {
    pub(crate) fn from_shape(shape: Shape, domain_end: f64, fiber_dim: usize, tip: Tip) -> Result<Self> {
        if !(domain_end > 0.0 && domain_end.is_finite()) {
            return Err(Error::Parameter(format!("domain_end must be positive, got {domain_end}")));
        }
        if fiber_dim < 2 {
            return Err(Error::Parameter(format!("fiber dimension must be at least 2, got {fiber_dim}")));
        }
        Ok(Profile { shape, domain_end, fiber_dim, tip, cone_info: None })
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn domain_end(&self) -> f64 {
        self.domain_end
    }

    pub fn fiber_dim(&self) -> usize {
        self.fiber_dim
    }

    pub fn tip(&self) -> Tip {
        self.tip
    }

    pub fn is_tip_anchored(&self) -> bool {
        self.tip == Tip::Anchored
    }

    /// Construction metadata when this profile came from [`smooth_cone`].
    pub fn cone_info(&self) -> Option<&SmoothConeInfo> {
        self.cone_info.as_ref()
    }

    pub fn jet(&self, s: f64) -> Jet {
        self.shape.jet(s)
    }

    pub fn value(&self, s: f64) -> f64 {
        self.shape.jet(s).f
    }

    pub fn derivative(&self, order: usize, s: f64) -> f64 {
        self.shape.jet(s).get(order)
    }

    /// Same shape on a different fibre dimension.
    pub fn with_fiber_dim(&self, n: usize) -> Result<Self> {
        let mut p = Profile::from_shape(self.shape.clone(), self.domain_end, n, self.tip)?;
        p.cone_info = self.cone_info.clone();
        Ok(p)
    }

    /// `count + 1` equally spaced sample points on `[a, b]`.
    pub fn sample_points(a: f64, b: f64, count: usize) -> impl Iterator<Item = f64> + Clone {
        let step = (b - a) / count as f64;
        (0..=count).map(move |i| if i == count { b } else { a + step * i as f64 })
    }

    /// First sample in `[a, b]` (with `per_unit` samples per unit length)
    /// where `bad` holds.
    pub fn scan_first<F>(&self, a: f64, b: f64, per_unit: f64, bad: F) -> Option<f64>
    where
        F: Fn(f64, &Jet) -> bool + Sync + Send,
    {
        let count = (((b - a) * per_unit).ceil() as usize).max(1);
        let step = (b - a) / count as f64;
        par::find_first(Exec::Auto, count + 1, |i| {
            let s = if i == count { b } else { a + step * i as f64 };
            bad(s, &self.jet(s))
        })
        .map(|i| if i == count { b } else { a + step * i as f64 })
    }
}

/// Build a closed-form profile.
pub fn make_profile(kind: AnalyticKind, domain_end: f64, fiber_dim: usize) -> Result<Profile> {
    kind.validate(domain_end)?;
    let tip = if kind.tip_anchored() { Tip::Anchored } else { Tip::Free };
    let profile = Profile::from_shape(Shape::Analytic(kind), domain_end, fiber_dim, tip)?;
    if tip == Tip::Anchored {
        if let Some(s) = profile.scan_first(0.0, domain_end, 1e3, |s, j| s > 0.0 && !(j.f > 0.0)) {
            return Err(Error::Parameter(format!("profile is not positive on (0, S]: f({s}) ≤ 0")));
        }
    }
    Ok(profile)
}

/// Build a profile from a natural cubic spline through the given samples.
pub fn make_spline_profile(knots: Vec<f64>, values: Vec<f64>, fiber_dim: usize) -> Result<Profile> {
    let spline = NaturalSpline::new(knots, values)?;
    let end = *spline.knots().last().unwrap();
    if spline.knots()[0] != 0.0 {
        return Err(Error::Parameter("spline profiles start at s = 0".into()));
    }
    let tip = if spline.values()[0] == 0.0 { Tip::Anchored } else { Tip::Free };
    Profile::from_shape(Shape::Spline(spline), end, fiber_dim, tip)
}

/// Assemble a composite profile; adjacent pieces must agree in value, first
/// and second derivative at each junction to 1e-9 relative.
pub fn make_composite(pieces: Vec<Piece>, domain_end: f64, fiber_dim: usize, tip: Tip) -> Result<Profile> {
    if pieces.is_empty() || pieces[0].start != 0.0 {
        return Err(Error::Parameter("composite pieces must start at s = 0".into()));
    }
    if pieces.windows(2).any(|w| !(w[1].start > w[0].start)) {
        return Err(Error::Parameter("composite junctions must be strictly increasing".into()));
    }
    for w in pieces.windows(2) {
        let s = w[1].start;
        let l = w[0].shape.jet(s - w[0].shift);
        let r = w[1].shape.jet(s - w[1].shift);
        for (order, (a, b)) in [(l.f, r.f), (l.d1, r.d1), (l.d2, r.d2)].into_iter().enumerate() {
            if (a - b).abs() > 1e-9 * (1.0 + a.abs().max(b.abs())) {
                return Err(Error::construction(
                    s,
                    format!("composite pieces disagree in derivative order {order}: {a} vs {b}"),
                ));
            }
        }
    }
    Profile::from_shape(Shape::Composite(pieces), domain_end, fiber_dim, tip)
}
