use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::Mesh;

/// Ellipse with an additive intensity. Rotation is in degrees, counterclockwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ellipse {
    pub center: [f64; 2],
    pub axes: [f64; 2],
    #[serde(default)]
    pub rotation: f64,
    pub intensity: f64,
}

impl Ellipse {
    pub fn disk(center: [f64; 2], radius: f64, intensity: f64) -> Self {
        Self {
            center,
            axes: [radius, radius],
            rotation: 0.0,
            intensity,
        }
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        let (s, c) = self.rotation.to_radians().sin_cos();
        let (dx, dy) = (p[0] - self.center[0], p[1] - self.center[1]);
        let x = c * dx + s * dy;
        let y = -s * dx + c * dy;
        (x / self.axes[0]).powi(2) + (y / self.axes[1]).powi(2) <= 1.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EllipsePhantomSpec {
    pub background: f64,
    #[serde(default)]
    pub ellipses: Vec<Ellipse>,
}

impl EllipsePhantomSpec {
    /// Shepp–Logan geometry with the modified (high-contrast) intensities,
    /// whose stacked values already span [0, 1].
    pub fn shepp_logan() -> Self {
        let e = |cx, cy, a, b, rot, i| Ellipse {
            center: [cx, cy],
            axes: [a, b],
            rotation: rot,
            intensity: i,
        };
        Self {
            background: 0.0,
            ellipses: vec![
                e(0.0, 0.0, 0.69, 0.92, 0.0, 1.0),
                e(0.0, -0.0184, 0.6624, 0.874, 0.0, -0.8),
                e(0.22, 0.0, 0.11, 0.31, -18.0, -0.2),
                e(-0.22, 0.0, 0.16, 0.41, 18.0, -0.2),
                e(0.0, 0.35, 0.21, 0.25, 0.0, 0.1),
                e(0.0, 0.1, 0.046, 0.046, 0.0, 0.1),
                e(0.0, -0.1, 0.046, 0.046, 0.0, 0.1),
                e(-0.08, -0.605, 0.046, 0.023, 0.0, 0.1),
                e(0.0, -0.606, 0.023, 0.023, 0.0, 0.1),
                e(0.06, -0.605, 0.023, 0.046, 0.0, 0.1),
            ],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.ellipses.iter().any(|e| !(e.axes[0] > 0.0 && e.axes[1] > 0.0)) {
            return Err(Error::InvalidSettings("ellipse semi-axes must be positive".into()));
        }
        Ok(())
    }

    pub fn value_at(&self, p: [f64; 2]) -> f64 {
        self.background
            + self
                .ellipses
                .iter()
                .filter(|e| e.contains(p))
                .map(|e| e.intensity)
                .sum::<f64>()
    }
}

/// Nodal evaluation of the phantom.
pub fn phantom(mesh: &Mesh, spec: &EllipsePhantomSpec) -> Vec<f64> {
    mesh.vertices().iter().map(|&p| spec.value_at(p)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::build_unit_disc_mesh;

    #[test]
    fn empty_spec_is_background() {
        let mesh = build_unit_disc_mesh(2).unwrap();
        let spec = EllipsePhantomSpec {
            background: 0.3,
            ellipses: vec![],
        };
        assert!(phantom(&mesh, &spec).iter().all(|v| *v == 0.3));
    }

    #[test]
    fn overlapping_ellipses_add() {
        let spec = EllipsePhantomSpec {
            background: 1.0,
            ellipses: vec![Ellipse::disk([0.1, 0.2], 0.3, 0.5), Ellipse::disk([0.2, 0.2], 0.3, 0.25)],
        };
        assert_eq!(spec.value_at([0.1, 0.2]), 1.75);
        assert_eq!(spec.value_at([-0.9, 0.0]), 1.0);
    }

    #[test]
    fn rotation_moves_long_axis() {
        let e = Ellipse {
            center: [0.0, 0.0],
            axes: [0.5, 0.1],
            rotation: 90.0,
            intensity: 1.0,
        };
        assert!(e.contains([0.0, 0.4]));
        assert!(!e.contains([0.4, 0.0]));
    }

    #[test]
    fn shepp_logan_range_on_level3_disc() {
        let mesh = build_unit_disc_mesh(3).unwrap();
        let spec = EllipsePhantomSpec::shepp_logan();
        let v = phantom(&mesh, &spec);
        let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        // brute-force maximum of the stacked intensities on a fine grid
        let mut best = f64::NEG_INFINITY;
        for i in 0..=400 {
            for j in 0..=400 {
                let p = [-1.0 + i as f64 / 200.0, -1.0 + j as f64 / 200.0];
                if p[0] * p[0] + p[1] * p[1] <= 1.0 {
                    best = best.max(spec.value_at(p));
                }
            }
        }
        assert!(lo.abs() < 1e-12);
        assert!((hi - 1.0).abs() < 1e-12 && (best - 1.0).abs() < 1e-12);
    }
}
