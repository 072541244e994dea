//! Smooth cut-off functions built from the mollifier `h(u) = exp(-1/(u(1-u)))`.
//!
//! Both cut-offs are antiderivatives of `h`, whose derivatives are available
//! in closed form. The antiderivatives themselves are tabulated once with
//! Gauss–Legendre panels and completed on the partial panel at evaluation
//! time, which keeps them accurate to round-off.

use std::sync::OnceLock;

use crate::par::{self, Exec};
use crate::quad::gauss_legendre8;

use super::Jet;

const TABLE_CELLS: usize = 4096;

/// `h`, `h'`, `h''` at `u`, zero outside the open unit interval.
fn mollifier(u: f64) -> (f64, f64, f64) {
    if u <= 0.0 || u >= 1.0 {
        return (0.0, 0.0, 0.0);
    }
    let p = u * (1.0 - u);
    let h = (-1.0 / p).exp();
    if h == 0.0 {
        return (0.0, 0.0, 0.0);
    }
    // q = -1/p, q' = (1-2u)/p², q'' = -2/p² - 2(1-2u)²/p³
    let d = 1.0 - 2.0 * u;
    let q1 = d / (p * p);
    let q2 = -2.0 / (p * p) - 2.0 * d * d / (p * p * p);
    (h, h * q1, h * (q1 * q1 + q2))
}

struct Tables {
    /// ∫₀^{cell start} h
    mass: Vec<f64>,
    /// ∫₀^{cell start} t·h(t) dt
    moment: Vec<f64>,
    total: f64,
    total_moment: f64,
}

fn tables() -> &'static Tables {
    static TABLES: OnceLock<Tables> = OnceLock::new();
    TABLES.get_or_init(|| {
        let width = 1.0 / TABLE_CELLS as f64;
        let mut mass = Vec::with_capacity(TABLE_CELLS + 1);
        let mut moment = Vec::with_capacity(TABLE_CELLS + 1);
        let (mut m, mut mo) = (0.0, 0.0);
        for i in 0..TABLE_CELLS {
            mass.push(m);
            moment.push(mo);
            let a = i as f64 * width;
            let b = a + width;
            m += gauss_legendre8(|t| mollifier(t).0, a, b);
            mo += gauss_legendre8(|t| t * mollifier(t).0, a, b);
        }
        mass.push(m);
        moment.push(mo);
        Tables { mass, moment, total: m, total_moment: mo }
    })
}

/// Returns (∫₀ᵘ h, ∫₀ᵘ t h) for u in [0, 1].
fn partial_integrals(u: f64) -> (f64, f64) {
    let t = tables();
    if u <= 0.0 {
        return (0.0, 0.0);
    }
    if u >= 1.0 {
        return (t.total, t.total_moment);
    }
    let pos = u * TABLE_CELLS as f64;
    let cell = (pos.floor() as usize).min(TABLE_CELLS - 1);
    let a = cell as f64 / TABLE_CELLS as f64;
    let m = t.mass[cell] + gauss_legendre8(|s| mollifier(s).0, a, u);
    let mo = t.moment[cell] + gauss_legendre8(|s| s * mollifier(s).0, a, u);
    (m, mo)
}

/// Normalised smooth step `H(u) = ∫₀ᵘ h / ∫₀¹ h`, rising from 0 to 1 on [0, 1].
fn step(u: f64) -> f64 {
    partial_integrals(u).0 / tables().total
}

/// `∫₀ᵘ H`.
fn step_integral(u: f64) -> f64 {
    let t = tables();
    let u = u.max(0.0);
    if u >= 1.0 {
        return (1.0 - t.total_moment / t.total) + (u - 1.0);
    }
    let (m, mo) = partial_integrals(u);
    (u * m - mo) / t.total
}

/// Decreasing cut-off ψ on [0, 1]: ψ = 1 near 0, ψ = 0 near 1, every
/// derivative vanishes at both ends.
#[derive(Clone, Copy, Debug)]
pub struct BumpPsi {
    bound: f64,
}

impl BumpPsi {
    pub fn new() -> Self {
        static BOUND: OnceLock<f64> = OnceLock::new();
        let bound = *BOUND.get_or_init(|| {
            let probe = BumpPsi { bound: f64::NAN };
            let samples = 200_000;
            par::argmax(Exec::Auto, samples + 1, |i| {
                let j = probe.jet(i as f64 / samples as f64);
                j.d1.abs() + j.d2.abs() + j.d3.abs()
            })
            .map(|(_, v)| v)
            .unwrap_or(f64::NAN)
        });
        BumpPsi { bound }
    }

    /// Realised `sup(|ψ'| + |ψ''| + |ψ'''|)`, measured on a dense grid.
    pub fn derivative_bound(&self) -> f64 {
        self.bound
    }

    pub fn jet(&self, u: f64) -> Jet {
        if u <= 0.0 {
            return Jet::constant(1.0);
        }
        if u >= 1.0 {
            return Jet::constant(0.0);
        }
        let total = tables().total;
        let (h, h1, h2) = mollifier(u);
        Jet { f: 1.0 - step(u), d1: -h / total, d2: -h1 / total, d3: -h2 / total }
    }
}

impl Default for BumpPsi {
    fn default() -> Self {
        Self::new()
    }
}

/// Concave cap Ψ on [0, 1] with Ψ(0) = 0, Ψ'(0) = 1, Ψ'(1) = v and all
/// higher derivatives vanishing at both ends. `-Ψ''` is the mollifier
/// rescaled to integrate to `1 - v`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CapPsiBig {
    end_slope: f64,
}

impl CapPsiBig {
    pub fn new(end_slope: f64) -> crate::Result<Self> {
        if !(end_slope > 0.0 && end_slope < 1.0) {
            return Err(crate::Error::Parameter(format!("cap end slope must lie in (0, 1), got {end_slope}")));
        }
        Ok(CapPsiBig { end_slope })
    }

    pub fn end_slope(&self) -> f64 {
        self.end_slope
    }

    /// Ψ(1) = (1 + v)/2 up to quadrature round-off (the mollifier is symmetric).
    pub fn end_value(&self) -> f64 {
        self.jet(1.0).f
    }

    /// Jet of Ψ; beyond 1 it continues linearly with slope v.
    pub fn jet(&self, u: f64) -> Jet {
        let drop = 1.0 - self.end_slope;
        if u <= 0.0 {
            return Jet { f: u, d1: 1.0, d2: 0.0, d3: 0.0 };
        }
        let total = tables().total;
        let (h, h1, _) = mollifier(u);
        Jet { f: u - drop * step_integral(u), d1: 1.0 - drop * step(u), d2: -drop * h / total, d3: -drop * h1 / total }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mollifier_is_symmetric_and_normalised() {
        let t = tables();
        assert!((t.total_moment / t.total - 0.5).abs() < 1e-14);
        assert!((step(0.5) - 0.5).abs() < 1e-13);
        assert_eq!(step(0.0), 0.0);
        assert!((step(1.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn psi_endpoint_values() {
        let psi = BumpPsi::new();
        let j0 = psi.jet(0.0);
        assert_eq!((j0.f, j0.d1, j0.d2, j0.d3), (1.0, 0.0, 0.0, 0.0));
        let j1 = psi.jet(1.0);
        assert_eq!((j1.f, j1.d1, j1.d2, j1.d3), (0.0, 0.0, 0.0, 0.0));
        // derivatives decay to zero approaching both ends
        for u in [1e-3, 1.0 - 1e-3] {
            let j = psi.jet(u);
            assert!(j.d1.abs() < 1e-100 && j.d2.abs() < 1e-100 && j.d3.abs() < 1e-100);
        }
        assert!(psi.derivative_bound().is_finite() && psi.derivative_bound() > 0.0);
    }

    #[test]
    fn cap_end_value_matches_symmetry() {
        let cap = CapPsiBig::new(0.5).unwrap();
        assert!((cap.end_value() - 0.75).abs() < 1e-13);
        let j = cap.jet(1.0);
        assert!((j.d1 - 0.5).abs() < 1e-14);
        assert_eq!(j.d2, 0.0);
        assert!(CapPsiBig::new(1.0).is_err());
        assert!(CapPsiBig::new(0.0).is_err());
    }

    #[test]
    fn psi_derivatives_match_finite_differences() {
        let psi = BumpPsi::new();
        for &u in &[0.2, 0.37, 0.5, 0.81] {
            let h = 1e-5;
            let fd1 = (psi.jet(u + h).f - psi.jet(u - h).f) / (2.0 * h);
            let fd3 = (psi.jet(u + h).d2 - psi.jet(u - h).d2) / (2.0 * h);
            let j = psi.jet(u);
            assert!((fd1 - j.d1).abs() < 1e-8, "{u}: {fd1} vs {}", j.d1);
            assert!((fd3 - j.d3).abs() < 1e-5 * (1.0 + j.d3.abs()));
        }
    }
}
