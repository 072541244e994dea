use super::Jet;
use crate::{Error, Result};

/// Natural cubic spline through `(knots[i], values[i])`.
///
/// The second derivative vanishes at both ends, which gives the even-order
/// tip condition f''(0) = 0 for free when the first knot sits at s = 0.
#[derive(Clone, Debug, PartialEq)]
pub struct NaturalSpline {
    knots: Vec<f64>,
    values: Vec<f64>,
    second: Vec<f64>,
}

impl NaturalSpline {
    pub fn new(knots: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if knots.len() != values.len() || knots.len() < 3 {
            return Err(Error::Parameter("spline needs matching knots/values with at least 3 entries".into()));
        }
        if knots.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Parameter("spline knots must be strictly increasing".into()));
        }
        let n = knots.len();
        // Tridiagonal solve for interior second derivatives (Thomas algorithm).
        let mut second = vec![0.0; n];
        let mut diag = vec![0.0; n];
        let mut rhs = vec![0.0; n];
        for i in 1..n - 1 {
            let h0 = knots[i] - knots[i - 1];
            let h1 = knots[i + 1] - knots[i];
            diag[i] = 2.0 * (h0 + h1);
            rhs[i] = 6.0 * ((values[i + 1] - values[i]) / h1 - (values[i] - values[i - 1]) / h0);
        }
        for i in 2..n - 1 {
            let h0 = knots[i] - knots[i - 1];
            let w = h0 / diag[i - 1];
            diag[i] -= w * h0;
            rhs[i] -= w * rhs[i - 1];
        }
        for i in (1..n - 1).rev() {
            let h1 = knots[i + 1] - knots[i];
            let upper = if i + 1 < n - 1 { h1 * second[i + 1] } else { 0.0 };
            second[i] = (rhs[i] - upper) / diag[i];
        }
        Ok(NaturalSpline { knots, values, second })
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn jet(&self, s: f64) -> Jet {
        let n = self.knots.len();
        let i = match self.knots.partition_point(|&k| k <= s) {
            0 => 0,
            p if p >= n => n - 2,
            p => p - 1,
        };
        let (x0, x1) = (self.knots[i], self.knots[i + 1]);
        let (y0, y1) = (self.values[i], self.values[i + 1]);
        let (m0, m1) = (self.second[i], self.second[i + 1]);
        let h = x1 - x0;
        let a = (x1 - s) / h;
        let b = (s - x0) / h;
        Jet {
            f: a * y0 + b * y1 + ((a * a * a - a) * m0 + (b * b * b - b) * m1) * h * h / 6.0,
            d1: (y1 - y0) / h - (3.0 * a * a - 1.0) / 6.0 * h * m0 + (3.0 * b * b - 1.0) / 6.0 * h * m1,
            d2: a * m0 + b * m1,
            d3: (m1 - m0) / h,
        }
    }
}
