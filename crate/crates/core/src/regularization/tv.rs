use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::Regularizer;
use crate::error::{Error, Result};
use crate::fem::{FunctionSpace, SparseOperator};

/// Weights of the smoothed total-variation plus Tikhonov regularizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TvSettings {
    pub alpha_tv: f64,
    pub alpha_tk: f64,
    pub eps: f64,
    /// Nodal reference field.
    pub m_ref: Vec<f64>,
}

impl TvSettings {
    pub fn with_constant_reference(alpha_tv: f64, alpha_tk: f64, eps: f64, m_ref: f64, n: usize) -> Self {
        Self {
            alpha_tv,
            alpha_tk,
            eps,
            m_ref: vec![m_ref; n],
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if !(self.eps > 0.0) {
            return Err(Error::InvalidSettings("TV smoothing eps must be positive".into()));
        }
        if self.alpha_tv < 0.0 || self.alpha_tk < 0.0 {
            return Err(Error::InvalidSettings("regularization weights must be nonnegative".into()));
        }
        if self.m_ref.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: self.m_ref.len(),
            });
        }
        Ok(())
    }
}

fn offset(m: &[f64], m_ref: &[f64]) -> Vec<f64> {
    m.iter().zip(m_ref).map(|(a, b)| a - b).collect()
}

/// α_TV ∫|∇(m−m_ref)|_ε + (α_TK/2)∫(m−m_ref)², |g|_ε = √(gᵀg + ε).
pub fn tv_eval(space: &FunctionSpace, m: &[f64], s: &TvSettings) -> f64 {
    let d = offset(m, &s.m_ref);
    let mut tv = 0.0;
    if s.alpha_tv != 0.0 {
        for (e, area) in space.areas().iter().enumerate() {
            let g = space.element_gradient(e, &d);
            tv += area * (g[0] * g[0] + g[1] * g[1] + s.eps).sqrt();
        }
    }
    s.alpha_tv * tv + 0.5 * s.alpha_tk * space.mass().bilinear(&d, &d)
}

/// Only the TV part, without weights: ∫|∇(m−m_ref)|_ε.
pub fn tv_term(space: &FunctionSpace, m: &[f64], s: &TvSettings) -> f64 {
    let d = offset(m, &s.m_ref);
    space
        .areas()
        .iter()
        .enumerate()
        .map(|(e, area)| {
            let g = space.element_gradient(e, &d);
            area * (g[0] * g[0] + g[1] * g[1] + s.eps).sqrt()
        })
        .sum()
}

/// Assembled first variation of [`tv_eval`].
pub fn tv_gradient(space: &FunctionSpace, m: &[f64], s: &TvSettings) -> Vec<f64> {
    let d = offset(m, &s.m_ref);
    let mut out = space.mass().apply(&d);
    out.iter_mut().for_each(|v| *v *= s.alpha_tk);
    if s.alpha_tv != 0.0 {
        let tris = space.mesh().triangles();
        for (e, area) in space.areas().iter().enumerate() {
            let g = space.element_gradient(e, &d);
            let n = (g[0] * g[0] + g[1] * g[1] + s.eps).sqrt();
            let b = space.basis_gradients(e);
            for k in 0..3 {
                out[tris[e][k]] += s.alpha_tv * area * (g[0] * b[k][0] + g[1] * b[k][1]) / n;
            }
        }
    }
    out
}

/// Second variation applied to `dir`, computed element by element.
pub fn tv_hessian_action(space: &FunctionSpace, m: &[f64], dir: &[f64], s: &TvSettings) -> Vec<f64> {
    let d = offset(m, &s.m_ref);
    let mut out = space.mass().apply(dir);
    out.iter_mut().for_each(|v| *v *= s.alpha_tk);
    if s.alpha_tv != 0.0 {
        let tris = space.mesh().triangles();
        for (e, area) in space.areas().iter().enumerate() {
            let g = space.element_gradient(e, &d);
            let v = space.element_gradient(e, dir);
            let n2 = g[0] * g[0] + g[1] * g[1] + s.eps;
            let n = n2.sqrt();
            let gv = g[0] * v[0] + g[1] * v[1];
            // (I/n − g gᵀ/n³) v
            let w = [v[0] / n - g[0] * gv / (n2 * n), v[1] / n - g[1] * gv / (n2 * n)];
            let b = space.basis_gradients(e);
            for k in 0..3 {
                out[tris[e][k]] += s.alpha_tv * area * (w[0] * b[k][0] + w[1] * b[k][1]);
            }
        }
    }
    out
}

/// Assembled second variation, including the anisotropic term.
pub fn tv_hessian_matrix(space: &FunctionSpace, m: &[f64], s: &TvSettings) -> SparseOperator {
    let d = offset(m, &s.m_ref);
    let mut h = space.mass().clone();
    h.scale(s.alpha_tk);
    if s.alpha_tv != 0.0 {
        let tris = space.mesh().triangles();
        let pattern = space.pattern();
        let vals = h.values_mut();
        for (e, area) in space.areas().iter().enumerate() {
            let g = space.element_gradient(e, &d);
            let n2 = g[0] * g[0] + g[1] * g[1] + s.eps;
            let n = n2.sqrt();
            let b = space.basis_gradients(e);
            let gb: Vec<f64> = (0..3).map(|k| g[0] * b[k][0] + g[1] * b[k][1]).collect();
            for i in 0..3 {
                for j in 0..3 {
                    let bb = b[i][0] * b[j][0] + b[i][1] * b[j][1];
                    let slot = pattern.slot(tris[e][i], tris[e][j]).unwrap();
                    vals[slot] += s.alpha_tv * area * (bb / n - gb[i] * gb[j] / (n2 * n));
                }
            }
        }
    }
    h
}

/// [`Regularizer`] wrapper around the TV functions.
#[derive(Debug, Clone)]
pub struct TvRegularizer {
    space: Arc<FunctionSpace>,
    settings: TvSettings,
}

impl TvRegularizer {
    pub fn new(space: Arc<FunctionSpace>, settings: TvSettings) -> Result<Self> {
        settings.validate(space.dim())?;
        Ok(Self { space, settings })
    }

    pub fn settings(&self) -> &TvSettings {
        &self.settings
    }
}

impl Regularizer for TvRegularizer {
    fn dim(&self) -> usize {
        self.space.dim()
    }

    fn value(&self, m: &[f64]) -> f64 {
        tv_eval(&self.space, m, &self.settings)
    }

    fn gradient(&self, m: &[f64]) -> Vec<f64> {
        tv_gradient(&self.space, m, &self.settings)
    }

    fn hessian(&self, m: &[f64]) -> SparseOperator {
        tv_hessian_matrix(&self.space, m, &self.settings)
    }

    fn hessian_action(&self, m: &[f64], dir: &[f64]) -> Vec<f64> {
        tv_hessian_action(&self.space, m, dir, &self.settings)
    }

    fn prior(&self) -> Option<Vec<f64>> {
        Some(self.settings.m_ref.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{build_unit_disc_mesh, build_unit_square_mesh};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn disc(level: usize) -> FunctionSpace {
        FunctionSpace::new(Arc::new(build_unit_disc_mesh(level).unwrap())).unwrap()
    }

    fn random(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn value_at_reference_is_eps_floor() {
        let space = disc(3);
        let s = TvSettings::with_constant_reference(0.1, 0.01, 1e-4, 0.3, space.dim());
        let v = tv_eval(&space, &s.m_ref.clone(), &s);
        assert!((v - 0.1 * 1e-2 * space.area()).abs() < 1e-15);
        assert!(tv_gradient(&space, &s.m_ref.clone(), &s).iter().all(|g| g.abs() < 1e-16));
    }

    #[test]
    fn linear_offset_on_square_gives_constant_gradient() {
        let space = FunctionSpace::new(Arc::new(build_unit_square_mesh(5).unwrap())).unwrap();
        let a = 1.7;
        let s = TvSettings::with_constant_reference(0.3, 0.0, 1e-3, 0.0, space.dim());
        let m: Vec<f64> = space.mesh().vertices().iter().map(|p| a * p[0]).collect();
        let v = tv_eval(&space, &m, &s);
        assert!((v - 0.3 * (a * a + 1e-3f64).sqrt()).abs() < 1e-13);
    }

    #[test]
    fn pure_tikhonov_matches_mass_form() {
        let space = disc(3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = random(space.dim(), &mut rng);
        let mut s = TvSettings::with_constant_reference(0.0, 0.7, 1e-4, 0.0, space.dim());
        s.m_ref = random(space.dim(), &mut rng);
        let d: Vec<f64> = m.iter().zip(&s.m_ref).map(|(a, b)| a - b).collect();
        let expect = 0.35 * space.mass().bilinear(&d, &d);
        assert!((tv_eval(&space, &m, &s) - expect).abs() < 1e-12 * expect.abs().max(1.0));
        let g = tv_gradient(&space, &m, &s);
        let md = space.mass().apply(&d);
        for (g, md) in g.iter().zip(&md) {
            assert!((g - 0.7 * md).abs() < 1e-15);
        }
    }

    #[test]
    fn hessian_at_reference_is_scaled_laplacian() {
        let space = disc(3);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (atv, atk, eps) = (0.1, 0.01, 1e-4);
        let s = TvSettings::with_constant_reference(atv, atk, eps, 0.0, space.dim());
        let v = random(space.dim(), &mut rng);
        let h = tv_hessian_action(&space, &s.m_ref.clone(), &v, &s);
        let kv = space.stiffness().apply(&v);
        let mv = space.mass().apply(&v);
        for i in 0..v.len() {
            let expect = atv / eps.sqrt() * kv[i] + atk * mv[i];
            assert!((h[i] - expect).abs() < 1e-12 * (1.0 + expect.abs()));
        }
    }

    #[test]
    fn matrix_and_action_agree() {
        let space = disc(3);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = TvSettings::with_constant_reference(0.2, 0.05, 1e-3, 0.1, space.dim());
        let m = random(space.dim(), &mut rng);
        let v = random(space.dim(), &mut rng);
        let a = tv_hessian_action(&space, &m, &v, &s);
        let b = tv_hessian_matrix(&space, &m, &s).apply(&v);
        for (a, b) in a.iter().zip(&b) {
            assert!((a - b).abs() < 1e-12 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn invalid_settings_rejected() {
        let s = TvSettings::with_constant_reference(0.1, 0.1, 0.0, 0.0, 4);
        assert!(s.validate(4).is_err());
        let s = TvSettings::with_constant_reference(-0.1, 0.1, 1e-3, 0.0, 4);
        assert!(s.validate(4).is_err());
    }
}
