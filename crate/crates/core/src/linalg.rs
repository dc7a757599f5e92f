//! Fixed-size 2-vector / 2x2 matrix arithmetic for the two-parameter model.

use serde::{Deserialize, Serialize};

pub type Vec2 = [f64; 2];

/// Row-major 2x2 matrix.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Mat2(pub [[f64; 2]; 2]);

impl Mat2 {
    pub const ZERO: Mat2 = Mat2([[0.0; 2]; 2]);
    pub const IDENTITY: Mat2 = Mat2([[1.0, 0.0], [0.0, 1.0]]);

    pub fn new(a: f64, b: f64, c: f64, d: f64) -> Self {
        Mat2([[a, b], [c, d]])
    }

    pub fn outer(u: Vec2, v: Vec2) -> Self {
        Mat2([[u[0] * v[0], u[0] * v[1]], [u[1] * v[0], u[1] * v[1]]])
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[i][j]
    }

    pub fn det(&self) -> f64 {
        self.0[0][0] * self.0[1][1] - self.0[0][1] * self.0[1][0]
    }

    pub fn trace(&self) -> f64 {
        self.0[0][0] + self.0[1][1]
    }

    pub fn transpose(&self) -> Self {
        Mat2([[self.0[0][0], self.0[1][0]], [self.0[0][1], self.0[1][1]]])
    }

    pub fn is_symmetric(&self) -> bool {
        self.0[0][1] == self.0[1][0]
    }

    pub fn scale(&self, s: f64) -> Self {
        Mat2([
            [self.0[0][0] * s, self.0[0][1] * s],
            [self.0[1][0] * s, self.0[1][1] * s],
        ])
    }

    pub fn add(&self, o: &Mat2) -> Self {
        Mat2([
            [self.0[0][0] + o.0[0][0], self.0[0][1] + o.0[0][1]],
            [self.0[1][0] + o.0[1][0], self.0[1][1] + o.0[1][1]],
        ])
    }

    pub fn sub(&self, o: &Mat2) -> Self {
        self.add(&o.scale(-1.0))
    }

    pub fn mul_vec(&self, v: Vec2) -> Vec2 {
        [
            self.0[0][0] * v[0] + self.0[0][1] * v[1],
            self.0[1][0] * v[0] + self.0[1][1] * v[1],
        ]
    }

    pub fn inverse(&self) -> Option<Mat2> {
        let det = self.det();
        if det == 0.0 || !det.is_finite() {
            return None;
        }
        Some(Mat2([
            [self.0[1][1] / det, -self.0[0][1] / det],
            [-self.0[1][0] / det, self.0[0][0] / det],
        ]))
    }

    /// Eigenvalues of a symmetric matrix, ascending.
    pub fn sym_eigenvalues(&self) -> [f64; 2] {
        let (a, b, d) = (
            self.0[0][0],
            0.5 * (self.0[0][1] + self.0[1][0]),
            self.0[1][1],
        );
        let mid = 0.5 * (a + d);
        let rad = (0.25 * (a - d) * (a - d) + b * b).sqrt();
        [mid - rad, mid + rad]
    }

    pub fn is_positive_definite(&self) -> bool {
        self.0[0][0] > 0.0 && self.det() > 0.0
    }

    pub fn frobenius(&self) -> f64 {
        self.0.iter().flatten().map(|x| x * x).sum::<f64>().sqrt()
    }
}

pub fn dot(a: Vec2, b: Vec2) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

pub fn norm_inf(v: Vec2) -> f64 {
    v[0].abs().max(v[1].abs())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_roundtrip() {
        let m = Mat2::new(2.0, 1.0, 1.0, 3.0);
        let inv = m.inverse().unwrap();
        let v = inv.mul_vec(m.mul_vec([0.3, -1.7]));
        assert!((v[0] - 0.3).abs() < 1e-14 && (v[1] + 1.7).abs() < 1e-14);
        assert!(Mat2::new(1.0, 1.0, 1.0, 1.0).inverse().is_none());
    }

    #[test]
    fn eigenvalues_of_symmetric() {
        let e = Mat2::new(1.0, 1.0, 1.0, 2.0).sym_eigenvalues();
        let s5 = 5f64.sqrt();
        assert!((e[0] - (3.0 - s5) / 2.0).abs() < 1e-14);
        assert!((e[1] - (3.0 + s5) / 2.0).abs() < 1e-14);
    }
}
