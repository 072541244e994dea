use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{
    cap_cylinder, cap_linear, make_composite, make_profile, make_spline_profile, smooth_cone, AnalyticKind, Piece,
    Profile,
};
use crate::{Error, Result};

/// JSON description of a profile:
/// `{"kind": "...", "params": {...}, "domain_end": S, "fiber_dim": n}`.
///
/// Nested specs (cap bases, composite pieces) may omit `domain_end` and
/// `fiber_dim`; they inherit them from the enclosing spec.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileSpec {
    pub kind: String,
    #[serde(default = "empty_object")]
    pub params: serde_json::Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain_end: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fiber_dim: Option<usize>,
}

fn empty_object() -> serde_json::Value {
    serde_json::Value::Object(Default::default())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Empty {}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SlopeParams {
    slope: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RadiusParams {
    radius: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RateParams {
    rate: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScaleParams {
    #[serde(default = "one")]
    scale: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PerturbedParams {
    slope: f64,
    amplitude: f64,
    frequency: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AffineParams {
    value: f64,
    slope: f64,
    #[serde(default)]
    anchor: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SplineParams {
    knots: Vec<f64>,
    values: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PieceSpec {
    start: f64,
    #[serde(default)]
    shift: f64,
    profile: ProfileSpec,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CompositeParams {
    pieces: Vec<PieceSpec>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CapLinearParams {
    base: ProfileSpec,
    k: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CapCylinderParams {
    base: ProfileSpec,
    k: f64,
    eps: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SmoothConeParams {
    base: ProfileSpec,
    k: f64,
    v: f64,
    #[serde(rename = "L")]
    ricci_scale: f64,
    #[serde(rename = "C", default)]
    bound: Option<f64>,
}

fn parse_params<T: DeserializeOwned>(value: &serde_json::Value, prefix: &str) -> Result<T> {
    serde_path_to_error::deserialize(value)
        .map_err(|e| Error::Parse { path: join_path(prefix, &e.path().to_string()), message: e.inner().to_string() })
}

fn join_path(prefix: &str, rest: &str) -> String {
    match (prefix.is_empty(), rest == "." || rest.is_empty()) {
        (true, _) => rest.to_string(),
        (false, true) => prefix.to_string(),
        (false, false) => format!("{prefix}.{rest}"),
    }
}

impl ProfileSpec {
    pub fn new(kind: &str, params: serde_json::Value, domain_end: f64, fiber_dim: usize) -> Self {
        ProfileSpec { kind: kind.to_string(), params, domain_end: Some(domain_end), fiber_dim: Some(fiber_dim) }
    }

    /// Parse a spec, reporting unknown or malformed keys with their path.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de)
            .map_err(|e| Error::Parse { path: e.path().to_string(), message: e.inner().to_string() })
    }

    pub fn build(&self) -> Result<Profile> {
        self.build_at(None, None, "")
    }

    fn build_at(&self, parent_end: Option<f64>, parent_dim: Option<usize>, path: &str) -> Result<Profile> {
        let end = self
            .domain_end
            .or(parent_end)
            .ok_or_else(|| Error::Parse { path: join_path(path, "domain_end"), message: "missing".into() })?;
        let n = self
            .fiber_dim
            .or(parent_dim)
            .ok_or_else(|| Error::Parse { path: join_path(path, "fiber_dim"), message: "missing".into() })?;
        let pp = join_path(path, "params");
        let analytic = |kind: AnalyticKind| make_profile(kind, end, n);
        match self.kind.as_str() {
            "euclidean" => {
                parse_params::<Empty>(&self.params, &pp)?;
                analytic(AnalyticKind::Euclidean)
            }
            "cone" => {
                let p: SlopeParams = parse_params(&self.params, &pp)?;
                analytic(AnalyticKind::Cone { slope: p.slope })
            }
            "cylinder" => {
                let p: RadiusParams = parse_params(&self.params, &pp)?;
                analytic(AnalyticKind::Cylinder { radius: p.radius })
            }
            "sphere_cap" => {
                parse_params::<Empty>(&self.params, &pp)?;
                analytic(AnalyticKind::SphereCap)
            }
            "perturbed_linear" => {
                let p: PerturbedParams = parse_params(&self.params, &pp)?;
                analytic(AnalyticKind::PerturbedLinear {
                    slope: p.slope,
                    amplitude: p.amplitude,
                    frequency: p.frequency,
                })
            }
            "exp_growth" => {
                let p: RateParams = parse_params(&self.params, &pp)?;
                analytic(AnalyticKind::ExpGrowth { rate: p.rate })
            }
            "sinh" => {
                let p: RateParams = parse_params(&self.params, &pp)?;
                analytic(AnalyticKind::Sinh { rate: p.rate })
            }
            "tanh" => {
                let p: ScaleParams = parse_params(&self.params, &pp)?;
                analytic(AnalyticKind::Tanh { scale: p.scale })
            }
            "arctan" => {
                let p: ScaleParams = parse_params(&self.params, &pp)?;
                analytic(AnalyticKind::Arctan { scale: p.scale })
            }
            "affine" => {
                let p: AffineParams = parse_params(&self.params, &pp)?;
                analytic(AnalyticKind::Affine { value: p.value, slope: p.slope, anchor: p.anchor })
            }
            "spline" => {
                let p: SplineParams = parse_params(&self.params, &pp)?;
                make_spline_profile(p.knots, p.values, n)
            }
            "composite" => {
                let p: CompositeParams = parse_params(&self.params, &pp)?;
                let mut pieces = Vec::with_capacity(p.pieces.len());
                let mut tip = None;
                for (i, piece) in p.pieces.iter().enumerate() {
                    let built = piece.profile.build_at(Some(end), Some(n), &format!("{pp}.pieces[{i}].profile"))?;
                    tip.get_or_insert(built.tip());
                    pieces.push(Piece { start: piece.start, shift: piece.shift, shape: built.shape().clone() });
                }
                let tip = tip.ok_or_else(|| Error::Parameter("composite needs at least one piece".into()))?;
                make_composite(pieces, end, n, tip)
            }
            "cap_linear" => {
                let p: CapLinearParams = parse_params(&self.params, &pp)?;
                let base = p.base.build_at(Some(end), Some(n), &format!("{pp}.base"))?;
                cap_linear(&base, p.k)
            }
            "cap_cylinder" => {
                let p: CapCylinderParams = parse_params(&self.params, &pp)?;
                let base = p.base.build_at(Some(end), Some(n), &format!("{pp}.base"))?;
                cap_cylinder(&base, p.k, p.eps)
            }
            "smooth_cone" => {
                let p: SmoothConeParams = parse_params(&self.params, &pp)?;
                let base = p.base.build_at(Some(end), Some(n), &format!("{pp}.base"))?;
                smooth_cone(&base, p.k, p.v, p.ricci_scale, p.bound)
            }
            other => {
                Err(Error::Parse { path: join_path(path, "kind"), message: format!("unknown profile kind `{other}`") })
            }
        }
    }
}
