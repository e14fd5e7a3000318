//! Surplus grid, action grid and the upwind generator.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub z_min: f64,
    pub z_max: f64,
    pub k: usize,
    pub dz: f64,
    pub nodes: Vec<f64>,
}

pub fn build_grid(z_min: f64, z_max: f64, k: usize) -> Result<Grid> {
    if k < 3 {
        return Err(Error::Config(format!("grid needs at least 3 nodes, got {k}")));
    }
    if !(z_min < z_max) || !z_min.is_finite() || !z_max.is_finite() {
        return Err(Error::Config(format!("grid bounds must satisfy z_min < z_max, got [{z_min}, {z_max}]")));
    }
    let dz = (z_max - z_min) / (k - 1) as f64;
    let mut nodes: Vec<f64> = (0..k).map(|i| z_min + i as f64 * dz).collect();
    nodes[k - 1] = z_max;
    Ok(Grid { z_min, z_max, k, dz, nodes })
}

impl Grid {
    pub fn len(&self) -> usize {
        self.k
    }

    pub fn is_empty(&self) -> bool {
        self.k == 0
    }

    /// Index of the node closest to `z` (ties go to the lower node).
    pub fn nearest_index(&self, z: f64) -> usize {
        let x = ((z - self.z_min) / self.dz).clamp(0.0, (self.k - 1) as f64);
        let lo = x.floor() as usize;
        if lo + 1 < self.k && x - lo as f64 > 0.5 {
            lo + 1
        } else {
            lo
        }
    }

    /// Piecewise-linear interpolation of nodal values, clamped at the ends.
    pub fn interp(&self, values: &[f64], z: f64) -> f64 {
        let x = (z - self.z_min) / self.dz;
        if x <= 0.0 {
            return values[0];
        }
        if x >= (self.k - 1) as f64 {
            return values[self.k - 1];
        }
        let lo = x.floor() as usize;
        let t = x - lo as f64;
        values[lo] * (1.0 - t) + values[lo + 1] * t
    }
}

/// Discrete set of search intensities, increasing, starting at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionGrid {
    pub values: Vec<f64>,
}

impl ActionGrid {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::Config("action grid needs at least two points".into()));
        }
        if values[0] != 0.0 {
            return Err(Error::Config("action grid must start at 0".into()));
        }
        if values.windows(2).any(|w| !(w[0] < w[1])) || values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("action grid must be finite and strictly increasing".into()));
        }
        Ok(Self { values })
    }

    pub fn uniform(a_max: f64, n: usize) -> Result<Self> {
        if n < 2 || !(a_max > 0.0) {
            return Err(Error::Config("uniform action grid needs n >= 2 and a_max > 0".into()));
        }
        let h = a_max / (n - 1) as f64;
        Self::new((0..n).map(|i| i as f64 * h).collect())
    }
}

/// Tridiagonal matrix; row k is (lower[k-1], diag[k], upper[k]).
#[derive(Debug, Clone, PartialEq)]
pub struct TridiagonalOperator {
    pub lower: Vec<f64>,
    pub diag: Vec<f64>,
    pub upper: Vec<f64>,
}

impl TridiagonalOperator {
    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let n = self.diag.len();
        (0..n).map(|k| self.apply_row(k, v)).collect()
    }

    #[inline]
    pub fn apply_row(&self, k: usize, v: &[f64]) -> f64 {
        let n = self.diag.len();
        let mut s = self.diag[k] * v[k];
        if k > 0 {
            s += self.lower[k - 1] * v[k - 1];
        }
        if k + 1 < n {
            s += self.upper[k] * v[k + 1];
        }
        s
    }
}

/// Generator of the controlled diffusion acting on value vectors.
///
/// Drift is upwinded so that every off-diagonal entry is nonnegative: a
/// positive drift uses the forward difference and a negative drift the
/// backward one. The end rows reflect through a ghost node (V[-1] = V[1],
/// V[K] = V[K-2]), i.e. a zero-derivative closure that keeps the matrix
/// tridiagonal and monotone.
pub fn assemble_generator(drift: &[f64], vol2: &[f64], g: &Grid) -> Result<TridiagonalOperator> {
    let n = g.k;
    if drift.len() != n || vol2.len() != n {
        return Err(Error::Config("coefficient vectors must match the grid length".into()));
    }
    for (node, &v) in vol2.iter().enumerate() {
        if !(v > 0.0) {
            return Err(Error::Ellipticity { node, value: v });
        }
    }
    let dz = g.dz;
    let mut lower = vec![0.0; n - 1];
    let mut diag = vec![0.0; n];
    let mut upper = vec![0.0; n - 1];
    for k in 0..n {
        let up = drift[k].max(0.0);
        let dn = -drift[k].min(0.0);
        let d = 0.5 * vol2[k] / (dz * dz);
        let mut to_up = up / dz + d;
        let mut to_dn = dn / dz + d;
        if k == 0 {
            to_up += to_dn;
            to_dn = 0.0;
        } else if k == n - 1 {
            to_dn += to_up;
            to_up = 0.0;
        }
        if k > 0 {
            lower[k - 1] = to_dn;
        }
        if k + 1 < n {
            upper[k] = to_up;
        }
        diag[k] = -(to_up + to_dn);
    }
    Ok(TridiagonalOperator { lower, diag, upper })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn grid_examples() {
        let g = build_grid(0.0, 1.0, 3).unwrap();
        assert_eq!(g.nodes, vec![0.0, 0.5, 1.0]);
        assert_eq!(g.dz, 0.5);
        let g = build_grid(-2.0, 2.0, 5).unwrap();
        assert_eq!(g.nodes, vec![-2.0, -1.0, 0.0, 1.0, 2.0]);
        assert!(build_grid(0.0, 1.0, 2).is_err());
        assert!(build_grid(1.0, 1.0, 5).is_err());
    }

    #[test]
    fn nearest_and_interp() {
        let g = build_grid(0.0, 1.0, 11).unwrap();
        assert_eq!(g.nearest_index(0.34), 3);
        assert_eq!(g.nearest_index(-5.0), 0);
        assert_eq!(g.nearest_index(5.0), 10);
        let v: Vec<f64> = g.nodes.iter().map(|z| 2.0 * z).collect();
        assert!((g.interp(&v, 0.333) - 0.666).abs() < 1e-12);
    }

    #[test]
    fn pure_diffusion_stencil() {
        let g = build_grid(0.0, 1.0, 3).unwrap();
        let op = assemble_generator(&[0.0; 3], &[0.04; 3], &g).unwrap();
        let c = 0.04 / (2.0 * 0.25);
        assert!((op.lower[0] - c).abs() < 1e-15);
        assert!((op.diag[1] + 2.0 * c).abs() < 1e-15);
        assert!((op.upper[1] - c).abs() < 1e-15);
    }

    #[test]
    fn positive_drift_looks_forward() {
        let g = build_grid(0.0, 1.0, 5).unwrap();
        let op = assemble_generator(&[0.3; 5], &[1e-3; 5], &g).unwrap();
        let d = 0.5 * 1e-3 / (g.dz * g.dz);
        assert!((op.upper[2] - (0.3 / g.dz + d)).abs() < 1e-12);
        assert!((op.lower[1] - d).abs() < 1e-12);
        let op = assemble_generator(&[-0.3; 5], &[1e-3; 5], &g).unwrap();
        assert!((op.lower[1] - (0.3 / g.dz + d)).abs() < 1e-12);
    }

    #[test]
    fn nonpositive_vol_rejected() {
        let g = build_grid(0.0, 1.0, 4).unwrap();
        let err = assemble_generator(&[0.0; 4], &[1.0, 1.0, 0.0, 1.0], &g).unwrap_err();
        assert!(matches!(err, Error::Ellipticity { node: 2, .. }));
    }

    #[test]
    fn action_grid_checks() {
        assert!(ActionGrid::new(vec![0.0]).is_err());
        assert!(ActionGrid::new(vec![0.1, 0.2]).is_err());
        assert!(ActionGrid::new(vec![0.0, 0.2, 0.2]).is_err());
        let a = ActionGrid::uniform(2.0, 5).unwrap();
        assert_eq!(a.values, vec![0.0, 0.5, 1.0, 1.5, 2.0]);
    }

    proptest! {
        #[test]
        fn monotone_and_row_sum_zero(
            coeffs in proptest::collection::vec((-2.0f64..2.0, 1e-4f64..2.0), 3..40)
        ) {
            let n = coeffs.len();
            let g = build_grid(-1.0, 1.0, n).unwrap();
            let drift: Vec<f64> = coeffs.iter().map(|c| c.0).collect();
            let vol2: Vec<f64> = coeffs.iter().map(|c| c.1).collect();
            let op = assemble_generator(&drift, &vol2, &g).unwrap();
            prop_assert!(op.lower.iter().all(|&x| x >= 0.0));
            prop_assert!(op.upper.iter().all(|&x| x >= 0.0));
            let ones = vec![1.0; n];
            for (k, y) in op.apply(&ones).iter().enumerate() {
                prop_assert!(y.abs() <= 1e-9 * (1.0 + op.diag[k].abs()));
            }
        }

        #[test]
        fn consistent_on_quadratic(mu in -1.0f64..1.0, s2 in 0.01f64..1.0, n in 5usize..60) {
            let g = build_grid(-1.0, 2.0, n).unwrap();
            let op = assemble_generator(&vec![mu; n], &vec![s2; n], &g).unwrap();
            let q: Vec<f64> = g.nodes.iter().map(|z| z * z).collect();
            let lq = op.apply(&q);
            for k in 1..n - 1 {
                let z = g.nodes[k];
                let err = lq[k] - (2.0 * mu * z + s2);
                // upwinded drift is first order; diffusion part is exact
                prop_assert!((err - mu.abs() * g.dz).abs() < 1e-8 * (1.0 + lq[k].abs()));
            }
        }
    }
}
