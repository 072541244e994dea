//! Quadrature: adaptive Simpson for the volume integrals and fixed
//! Gauss–Legendre panels for tabulating smooth antiderivatives.

/// Adaptive Simpson integration of `f` over `[a, b]`.
///
/// Refinement stops when the Richardson-corrected panel error is below
/// `rel_tol · |I|` (with an absolute floor of `rel_tol · 1e-300` so zero
/// integrands terminate) or the recursion depth reaches `max_depth`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, rel_tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let (a, b, sign) = if a < b { (a, b, 1.0) } else { (b, a, -1.0) };
    // Seed with a few panels so narrow features inside [a, b] are not skipped.
    const SEED: usize = 16;
    let width = (b - a) / SEED as f64;
    let mut panels = Vec::with_capacity(SEED);
    let mut coarse = 0.0;
    for i in 0..SEED {
        let x0 = a + width * i as f64;
        let x1 = if i + 1 == SEED { b } else { x0 + width };
        let xm = 0.5 * (x0 + x1);
        let (f0, fm, f1) = (f(x0), f(xm), f(x1));
        let s = (x1 - x0) / 6.0 * (f0 + 4.0 * fm + f1);
        coarse += s.abs();
        panels.push((x0, x1, f0, fm, f1, s));
    }
    let abs_tol = rel_tol * coarse.max(1e-300);
    let per_panel = abs_tol / SEED as f64;
    panels.into_iter().map(|(x0, x1, f0, fm, f1, s)| simpson_rec(&f, x0, x1, f0, fm, f1, s, per_panel, 48)).sum::<f64>()
        * sign
}

#[allow(clippy::too_many_arguments)]
fn simpson_rec<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson_rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + simpson_rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

const GL8_NODES: [f64; 8] = [
    -0.960_289_856_497_536_2,
    -0.796_666_477_413_626_7,
    -0.525_532_409_916_329,
    -0.183_434_642_495_649_8,
    0.183_434_642_495_649_8,
    0.525_532_409_916_329,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_2,
];
const GL8_WEIGHTS: [f64; 8] = [
    0.101_228_536_290_376_3,
    0.222_381_034_453_374_5,
    0.313_706_645_877_887_3,
    0.362_683_783_378_362,
    0.362_683_783_378_362,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_5,
    0.101_228_536_290_376_3,
];

/// Eight-point Gauss–Legendre rule on `[a, b]`.
pub fn gauss_legendre8<F: Fn(f64) -> f64>(f: F, a: f64, b: f64) -> f64 {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    GL8_NODES.iter().zip(GL8_WEIGHTS.iter()).map(|(x, w)| w * f(mid + half * x)).sum::<f64>() * half
}

/// Trapezoid rule on sampled values with uniform spacing.
pub fn trapezoid_uniform(values: &[f64], spacing: f64) -> f64 {
    match values.len() {
        0 | 1 => 0.0,
        n => {
            let inner: f64 = values[1..n - 1].iter().sum();
            spacing * (inner + 0.5 * (values[0] + values[n - 1]))
        }
    }
}
