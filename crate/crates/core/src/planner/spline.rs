use log::warn;
use nalgebra::Vector3;

use super::graph::Space;
use crate::error::{Error, Result};

/// Natural cubic spline through 3-vectors, chord-length parameterized.
///
/// On interval `i`, with `u = t - t_i`, the curve is
/// `a_i + b_i u + c_i u^2 + d_i u^3`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub space: Space,
    pub knots: Vec<Vector3<f64>>,
    /// Knot parameters; `t[0] = 0`, `t[i+1] - t[i]` is the chord length.
    pub t: Vec<f64>,
    coeffs: Vec<[Vector3<f64>; 4]>,
}

impl Trajectory {
    pub fn duration(&self) -> f64 {
        *self.t.last().expect("at least one knot")
    }

    pub fn intervals(&self) -> usize {
        self.coeffs.len()
    }

    fn locate(&self, t: f64) -> (usize, f64) {
        if self.coeffs.is_empty() {
            return (0, 0.0);
        }
        let t = t.clamp(0.0, self.duration());
        let i = match self.t.binary_search_by(|x| x.total_cmp(&t)) {
            Ok(i) => i.min(self.coeffs.len() - 1),
            Err(i) => i.saturating_sub(1).min(self.coeffs.len() - 1),
        };
        (i, t - self.t[i])
    }

    pub fn eval(&self, t: f64) -> Vector3<f64> {
        if self.coeffs.is_empty() {
            return self.knots[0];
        }
        let (i, u) = self.locate(t);
        let [a, b, c, d] = &self.coeffs[i];
        a + (b + (c + d * u) * u) * u
    }

    pub fn derivative(&self, t: f64) -> Vector3<f64> {
        if self.coeffs.is_empty() {
            return Vector3::zeros();
        }
        let (i, u) = self.locate(t);
        let [_, b, c, d] = &self.coeffs[i];
        b + (c * 2.0 + d * (3.0 * u)) * u
    }

    pub fn second_derivative(&self, t: f64) -> Vector3<f64> {
        if self.coeffs.is_empty() {
            return Vector3::zeros();
        }
        let (i, u) = self.locate(t);
        let [_, _, c, d] = &self.coeffs[i];
        c * 2.0 + d * (6.0 * u)
    }

    /// Second derivative at the right end of interval `i`, from its own
    /// coefficients.
    pub fn second_derivative_left_of(&self, knot: usize) -> Vector3<f64> {
        let [_, _, c, d] = &self.coeffs[knot - 1];
        let h = self.t[knot] - self.t[knot - 1];
        c * 2.0 + d * (6.0 * h)
    }

    /// Second derivative at the left end of interval `knot`.
    pub fn second_derivative_right_of(&self, knot: usize) -> Vector3<f64> {
        self.coeffs[knot][2] * 2.0
    }

    /// `per_interval` evenly spaced parameters per interval plus the end.
    pub fn sample_params(&self, per_interval: usize) -> Vec<f64> {
        if self.coeffs.is_empty() {
            return vec![0.0];
        }
        let per = per_interval.max(1);
        let mut out = Vec::with_capacity(self.coeffs.len() * per + 1);
        for i in 0..self.coeffs.len() {
            let h = self.t[i + 1] - self.t[i];
            for k in 0..per {
                out.push(self.t[i] + h * k as f64 / per as f64);
            }
        }
        out.push(self.duration());
        out
    }
}

/// Fits the spline through `nodes` with `start` and `goal` put back as the
/// exact first and last knots. Consecutive duplicates are collapsed.
pub fn spline_fit(space: Space, nodes: &[Vector3<f64>], start: Vector3<f64>, goal: Vector3<f64>) -> Result<Trajectory> {
    let mut raw = Vec::with_capacity(nodes.len() + 2);
    raw.push(start);
    raw.extend_from_slice(nodes);
    raw.push(goal);
    let mut knots: Vec<Vector3<f64>> = Vec::with_capacity(raw.len());
    let mut collapsed = 0;
    for p in raw {
        if knots.last() == Some(&p) {
            collapsed += 1;
        } else {
            knots.push(p);
        }
    }
    if collapsed > 0 && knots.len() > 1 {
        warn!("collapsed {collapsed} duplicate consecutive knots");
    }
    let n = knots.len();
    let mut t = vec![0.0; n];
    for i in 1..n {
        t[i] = t[i - 1] + (knots[i] - knots[i - 1]).norm();
    }
    if n == 1 {
        return Ok(Trajectory {
            space,
            knots,
            t,
            coeffs: Vec::new(),
        });
    }
    let h: Vec<f64> = t.windows(2).map(|w| w[1] - w[0]).collect();
    if h.iter().any(|&x| !(x > 0.0)) {
        return Err(Error::DegenerateCurve("non-increasing knot parameters"));
    }
    // second derivatives m_i, natural ends m_0 = m_{n-1} = 0
    let mut m = vec![Vector3::zeros(); n];
    if n > 2 {
        let k = n - 2;
        let mut diag = vec![0.0; k];
        let mut rhs = vec![Vector3::zeros(); k];
        for j in 0..k {
            let i = j + 1;
            diag[j] = 2.0 * (h[i - 1] + h[i]);
            rhs[j] = ((knots[i + 1] - knots[i]) / h[i] - (knots[i] - knots[i - 1]) / h[i - 1]) * 6.0;
        }
        // Thomas algorithm; off-diagonals are h[i]
        for j in 1..k {
            let w = h[j] / diag[j - 1];
            diag[j] -= w * h[j];
            let prev = rhs[j - 1];
            rhs[j] -= prev * w;
        }
        m[k] = rhs[k - 1] / diag[k - 1];
        for j in (0..k - 1).rev() {
            m[j + 1] = (rhs[j] - m[j + 2] * h[j + 1]) / diag[j];
        }
    }
    let coeffs = (0..n - 1)
        .map(|i| {
            let a = knots[i];
            let b = (knots[i + 1] - knots[i]) / h[i] - (m[i] * 2.0 + m[i + 1]) * (h[i] / 6.0);
            let c = m[i] * 0.5;
            let d = (m[i + 1] - m[i]) / (6.0 * h[i]);
            [a, b, c, d]
        })
        .collect();
    Ok(Trajectory {
        space,
        knots,
        t,
        coeffs,
    })
}
