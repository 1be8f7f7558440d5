//! Deterministic low-discrepancy sampling of workspace boxes and momentum balls.

use serde::{Deserialize, Serialize};

use crate::linalg::Vector;

const PRIMES: [u32; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

/// Radical inverse of `index` in base `base`.
pub fn radical_inverse(mut index: u64, base: u32) -> f64 {
    let b = base as u64;
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut out = 0.0;
    while index > 0 {
        out += (index % b) as f64 * f;
        index /= b;
        f *= inv;
    }
    out
}

/// Halton sequence point in `[0,1)^dim`. The first point (index 0) is skipped by callers.
pub fn halton(index: u64, dim: usize) -> Vec<f64> {
    assert!(
        dim <= PRIMES.len(),
        "halton sequence supports up to 16 dimensions"
    );
    (0..dim)
        .map(|d| radical_inverse(index, PRIMES[d]))
        .collect()
}

/// Axis-aligned box in configuration space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Workspace {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Workspace {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        assert_eq!(
            lower.len(),
            upper.len(),
            "workspace bounds must have equal length"
        );
        assert!(
            lower.iter().zip(&upper).all(|(l, u)| l <= u),
            "workspace lower bound exceeds upper bound"
        );
        Self { lower, upper }
    }

    /// Box `[-h_i, h_i]` around the origin.
    pub fn symmetric(half_widths: &[f64]) -> Self {
        Self::new(
            half_widths.iter().map(|h| -h).collect(),
            half_widths.to_vec(),
        )
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, q: &Vector) -> bool {
        q.len() == self.dim()
            && q.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(x, (l, u))| *x >= *l && *x <= *u)
    }

    /// Map a point of the unit cube into the box.
    pub fn map_unit(&self, u: &[f64]) -> Vector {
        Vector::from_iterator(
            self.dim(),
            u.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .map(|(t, (l, h))| l + t * (h - l)),
        )
    }

    pub fn center(&self) -> Vector {
        Vector::from_iterator(
            self.dim(),
            self.lower
                .iter()
                .zip(&self.upper)
                .map(|(l, u)| 0.5 * (l + u)),
        )
    }

    /// Return a copy with coordinate `i` restricted to `[lo, hi]` (intersected with the box).
    pub fn with_axis(&self, i: usize, lo: f64, hi: f64) -> Self {
        let mut out = self.clone();
        out.lower[i] = lo.max(self.lower[i]);
        out.upper[i] = hi.min(self.upper[i]);
        out
    }
}

/// Map a unit-cube point to a point of the Euclidean ball of radius `radius`.
///
/// The first `n` coordinates choose a direction (through the cube `[-1,1]^n`), the last one
/// chooses the radius with the `r^(1/n)` law.
pub fn unit_to_ball(u: &[f64], radius: f64) -> Vector {
    let n = u.len() - 1;
    let mut dir = Vector::from_iterator(n, u[..n].iter().map(|t| 2.0 * t - 1.0));
    let norm = dir.norm();
    if norm < 1e-12 {
        dir = Vector::zeros(n);
        dir[0] = 1.0;
    } else {
        dir /= norm;
    }
    dir * (radius * u[n].powf(1.0 / n as f64))
}

/// Unit-cube point to a unit vector.
pub fn unit_to_sphere(u: &[f64]) -> Vector {
    let v = Vector::from_iterator(u.len(), u.iter().map(|t| 2.0 * t - 1.0));
    let norm = v.norm();
    if norm < 1e-12 {
        let mut e = Vector::zeros(u.len());
        e[0] = 1.0;
        e
    } else {
        v / norm
    }
}
