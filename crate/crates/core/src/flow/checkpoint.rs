//! Checkpoint files: one JSON document per state, floats written with 17
//! significant digits so a reload reproduces the state bit for bit.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::Deserialize;

use super::{GridMap, GridState, OuterBc, TipBc};
use crate::{Error, Result};

pub const CHECKPOINT_SCHEMA: u32 = 1;

fn num(out: &mut String, v: f64) {
    if v.is_finite() {
        let _ = write!(out, "{v:.16e}");
    } else {
        out.push_str("null");
    }
}

fn array(out: &mut String, values: &[f64]) {
    out.push('[');
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        num(out, *v);
    }
    out.push(']');
}

pub(crate) fn render(state: &GridState) -> String {
    let mut o = String::with_capacity(64 * state.cells() + 512);
    let _ = write!(o, "{{\"schema_version\":{CHECKPOINT_SCHEMA},\"n\":{},\"X\":", state.n);
    num(&mut o, state.x_end());
    let _ = write!(o, ",\"N\":{},\"h\":", state.cells());
    num(&mut o, state.h);
    o.push_str(",\"t\":");
    num(&mut o, state.t);
    o.push_str(",\"bc_outer\":");
    match state.bc_outer {
        OuterBc::CylinderNeumann => o.push_str("{\"kind\":\"cylinder_neumann\"}"),
        OuterBc::Frozen => o.push_str("{\"kind\":\"frozen\"}"),
        OuterBc::LinearSlope { slope } => {
            o.push_str("{\"kind\":\"linear_slope\",\"slope\":");
            num(&mut o, slope);
            o.push('}');
        }
    }
    let tip = match state.tip {
        TipBc::Anchored => "anchored",
        TipBc::Neumann => "neumann",
    };
    let _ = write!(o, ",\"tip\":\"{tip}\",\"map\":");
    match state.map {
        GridMap::Uniform => o.push_str("{\"kind\":\"uniform\"}"),
        GridMap::Sinh { amp, width } => {
            o.push_str("{\"kind\":\"sinh\",\"amp\":");
            num(&mut o, amp);
            o.push_str(",\"width\":");
            num(&mut o, width);
            o.push('}');
        }
    }
    let _ = write!(o, ",\"step\":{},\"epoch\":{},\"dt_prev\":", state.step, state.epoch);
    num(&mut o, state.dt_prev);
    o.push_str(",\"sigma\":");
    array(&mut o, &state.sigma);
    o.push_str(",\"f\":");
    array(&mut o, &state.f);
    o.push_str(",\"material\":");
    array(&mut o, &state.material);
    o.push_str(",\"outer_ghosts\":");
    match &state.outer_ghosts {
        Some(g) => array(&mut o, g),
        None => o.push_str("null"),
    }
    o.push_str("}\n");
    o
}

/// Write `state` to `path` atomically (temporary file, then rename).
pub fn write_checkpoint(path: &Path, state: &GridState) -> Result<()> {
    let body = render(state);
    let tmp = path.with_extension("json.tmp");
    let write = || -> std::io::Result<()> {
        let mut file = fs::File::create(&tmp)?;
        file.write_all(body.as_bytes())?;
        file.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| Error::io(path, e))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Doc {
    schema_version: u32,
    n: usize,
    #[serde(rename = "X")]
    x_end: f64,
    #[serde(rename = "N")]
    cells: usize,
    h: f64,
    t: f64,
    bc_outer: OuterBc,
    tip: TipBc,
    map: GridMap,
    step: u64,
    epoch: u64,
    dt_prev: f64,
    sigma: Vec<f64>,
    f: Vec<f64>,
    material: Vec<f64>,
    outer_ghosts: Option<[f64; 4]>,
}

pub fn load_checkpoint(path: &Path) -> Result<GridState> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |message: String| Error::Parse { path: path.display().to_string(), message };
    let de = &mut serde_json::Deserializer::from_str(&text);
    let doc: Doc = serde_path_to_error::deserialize(de).map_err(|e| Error::Parse {
        path: e.path().to_string(),
        message: format!("{} in {}", e.inner(), path.display()),
    })?;
    if doc.schema_version != CHECKPOINT_SCHEMA {
        return Err(parse_err(format!("unsupported schema_version {}", doc.schema_version)));
    }
    let cells = doc.cells;
    if doc.sigma.len() != cells || doc.f.len() != cells || doc.material.len() != cells {
        return Err(parse_err(format!("array lengths do not match N = {cells}")));
    }
    if ((doc.h * cells as f64) - doc.x_end).abs() > 1e-12 * doc.x_end.abs() {
        return Err(parse_err("X, N and h are inconsistent".into()));
    }
    if doc.bc_outer == OuterBc::Frozen && doc.outer_ghosts.is_none() {
        return Err(parse_err("frozen boundary needs outer_ghosts".into()));
    }
    Ok(GridState {
        n: doc.n,
        h: doc.h,
        sigma: doc.sigma,
        f: doc.f,
        t: doc.t,
        bc_outer: doc.bc_outer,
        tip: doc.tip,
        map: doc.map,
        material: doc.material,
        outer_ghosts: doc.outer_ghosts,
        step: doc.step,
        dt_prev: doc.dt_prev,
        epoch: doc.epoch,
    })
}
