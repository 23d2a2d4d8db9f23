use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::tv::{tv_gradient, tv_hessian_action, tv_hessian_matrix, tv_term, TvSettings};
use super::Regularizer;
use crate::error::{Error, Result};
use crate::fem::{FunctionSpace, SparseOperator};

/// Weights of the three-field regularizer on (s, c_thb, μ_s′).
///
/// Quadratic terms carry no ½ factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QpactRegSettings {
    pub gamma_s: f64,
    pub delta_s: f64,
    pub gamma_cthb: f64,
    pub delta_cthb: f64,
    pub gamma_mus: f64,
    pub delta_mus: f64,
    pub eps: f64,
}

impl Default for QpactRegSettings {
    fn default() -> Self {
        Self {
            gamma_s: 0.05,
            delta_s: 0.001,
            gamma_cthb: 0.005,
            delta_cthb: 1e-6,
            gamma_mus: 10.0,
            delta_mus: 10.0,
            eps: 1e-6,
        }
    }
}

impl QpactRegSettings {
    pub fn validate(&self) -> Result<()> {
        let w = [
            self.gamma_s,
            self.delta_s,
            self.gamma_cthb,
            self.delta_cthb,
            self.gamma_mus,
            self.delta_mus,
        ];
        if w.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::InvalidSettings("qPACT regularization weights must be nonnegative".into()));
        }
        if !(self.eps > 0.0) {
            return Err(Error::InvalidSettings("qPACT smoothing eps must be positive".into()));
        }
        Ok(())
    }

    fn tv(&self, n: usize) -> TvSettings {
        TvSettings::with_constant_reference(self.gamma_cthb, 0.0, self.eps, 0.0, n)
    }
}

/// Per-block values of the composite regularizer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpactRegTerms {
    pub s: f64,
    pub cthb: f64,
    pub mus: f64,
}

impl QpactRegTerms {
    pub fn total(&self) -> f64 {
        self.s + self.cthb + self.mus
    }
}

fn quadratic(space: &FunctionSpace, gamma: f64, delta: f64, f: &[f64]) -> f64 {
    gamma * space.stiffness().bilinear(f, f) + delta * space.mass().bilinear(f, f)
}

fn quadratic_operator(space: &FunctionSpace, gamma: f64, delta: f64) -> SparseOperator {
    let mut op = space.stiffness().clone();
    op.scale(2.0 * gamma);
    op.axpy(2.0 * delta, space.mass());
    op
}

/// Smoothed L¹ of the value, with lumped nodal quadrature.
fn smoothed_l1(space: &FunctionSpace, c: &[f64], eps: f64) -> f64 {
    space
        .lumped_mass()
        .iter()
        .zip(c)
        .map(|(w, c)| w * (c * c + eps).sqrt())
        .sum()
}

pub fn qpact_reg_eval(
    space: &FunctionSpace,
    s: &[f64],
    cthb: &[f64],
    mus: &[f64],
    settings: &QpactRegSettings,
) -> QpactRegTerms {
    let n = space.dim();
    QpactRegTerms {
        s: quadratic(space, settings.gamma_s, settings.delta_s, s),
        cthb: settings.gamma_cthb * tv_term(space, cthb, &settings.tv(n))
            + settings.delta_cthb * smoothed_l1(space, cthb, settings.eps),
        mus: quadratic(space, settings.gamma_mus, settings.delta_mus, mus),
    }
}

/// Gradient blocks (s, c_thb, μ_s′).
pub fn qpact_reg_gradient(
    space: &FunctionSpace,
    s: &[f64],
    cthb: &[f64],
    mus: &[f64],
    settings: &QpactRegSettings,
) -> [Vec<f64>; 3] {
    let n = space.dim();
    let gs = quadratic_operator(space, settings.gamma_s, settings.delta_s).apply(s);
    let mut gc = tv_gradient(space, cthb, &settings.tv(n));
    for ((g, w), c) in gc.iter_mut().zip(space.lumped_mass()).zip(cthb) {
        *g += settings.delta_cthb * w * c / (c * c + settings.eps).sqrt();
    }
    let gm = quadratic_operator(space, settings.gamma_mus, settings.delta_mus).apply(mus);
    [gs, gc, gm]
}

fn l1_curvature(space: &FunctionSpace, cthb: &[f64], settings: &QpactRegSettings) -> Vec<f64> {
    space
        .lumped_mass()
        .iter()
        .zip(cthb)
        .map(|(w, c)| settings.delta_cthb * w * settings.eps / (c * c + settings.eps).powf(1.5))
        .collect()
}

/// Block-diagonal Hessian action.
pub fn qpact_reg_hessian_action(
    space: &FunctionSpace,
    cthb: &[f64],
    dirs: [&[f64]; 3],
    settings: &QpactRegSettings,
) -> [Vec<f64>; 3] {
    let n = space.dim();
    let hs = quadratic_operator(space, settings.gamma_s, settings.delta_s).apply(dirs[0]);
    let mut hc = tv_hessian_action(space, cthb, dirs[1], &settings.tv(n));
    for ((h, k), d) in hc.iter_mut().zip(l1_curvature(space, cthb, settings)).zip(dirs[1]) {
        *h += k * d;
    }
    let hm = quadratic_operator(space, settings.gamma_mus, settings.delta_mus).apply(dirs[2]);
    [hs, hc, hm]
}

/// Composite regularizer on stacked `[s; c_thb; μ_s′]` vectors.
#[derive(Debug, Clone)]
pub struct QpactRegularizer {
    space: Arc<FunctionSpace>,
    settings: QpactRegSettings,
    block_pattern: Arc<crate::fem::SparsityPattern>,
}

impl QpactRegularizer {
    pub fn new(space: Arc<FunctionSpace>, settings: QpactRegSettings) -> Result<Self> {
        settings.validate()?;
        let block_pattern = space.block_pattern(3);
        Ok(Self {
            space,
            settings,
            block_pattern,
        })
    }

    pub fn settings(&self) -> &QpactRegSettings {
        &self.settings
    }

    fn split<'a>(&self, m: &'a [f64]) -> (&'a [f64], &'a [f64], &'a [f64]) {
        let n = self.space.dim();
        (&m[..n], &m[n..2 * n], &m[2 * n..3 * n])
    }
}

impl Regularizer for QpactRegularizer {
    fn dim(&self) -> usize {
        3 * self.space.dim()
    }

    fn value(&self, m: &[f64]) -> f64 {
        let (s, c, mu) = self.split(m);
        qpact_reg_eval(&self.space, s, c, mu, &self.settings).total()
    }

    fn gradient(&self, m: &[f64]) -> Vec<f64> {
        let (s, c, mu) = self.split(m);
        qpact_reg_gradient(&self.space, s, c, mu, &self.settings).concat()
    }

    fn hessian(&self, m: &[f64]) -> SparseOperator {
        let (_, c, _) = self.split(m);
        let n = self.space.dim();
        let hs = quadratic_operator(&self.space, self.settings.gamma_s, self.settings.delta_s);
        let mut hc = tv_hessian_matrix(&self.space, c, &self.settings.tv(n));
        hc.add_diagonal(&l1_curvature(&self.space, c, &self.settings));
        let hm = quadratic_operator(&self.space, self.settings.gamma_mus, self.settings.delta_mus);
        SparseOperator::block_diagonal(self.block_pattern.clone(), &[&hs, &hc, &hm])
    }

    fn hessian_action(&self, m: &[f64], dir: &[f64]) -> Vec<f64> {
        let (_, c, _) = self.split(m);
        let (ds, dc, dm) = self.split(dir);
        qpact_reg_hessian_action(&self.space, c, [ds, dc, dm], &self.settings).concat()
    }

    fn prior(&self) -> Option<Vec<f64>> {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::build_unit_square_mesh;

    fn square() -> FunctionSpace {
        FunctionSpace::new(Arc::new(build_unit_square_mesh(6).unwrap())).unwrap()
    }

    #[test]
    fn zero_fields_leave_eps_floor() {
        let space = square();
        let z = vec![0.0; space.dim()];
        let st = QpactRegSettings {
            eps: 1e-4,
            ..Default::default()
        };
        let v = qpact_reg_eval(&space, &z, &z, &z, &st).total();
        let expect = (st.gamma_cthb + st.delta_cthb) * 1e-2 * space.area();
        assert!((v - expect).abs() < 1e-15);
    }

    #[test]
    fn constant_s_and_mus_give_mass_terms() {
        let space = square();
        let n = space.dim();
        let st = QpactRegSettings {
            eps: 1e-4,
            ..Default::default()
        };
        let (s, mu, c) = (vec![0.6; n], vec![2.0; n], vec![0.0; n]);
        let v = qpact_reg_eval(&space, &s, &c, &mu, &st);
        let area = space.area();
        assert!((v.s - st.delta_s * 0.36 * area).abs() < 1e-13);
        assert!((v.mus - st.delta_mus * 4.0 * area).abs() < 1e-12);
        let floor = (st.gamma_cthb + st.delta_cthb) * 1e-2 * area;
        assert!((v.cthb - floor).abs() < 1e-15);
    }

    #[test]
    fn hessian_matrix_matches_action() {
        let space = Arc::new(square());
        let reg = QpactRegularizer::new(space.clone(), QpactRegSettings::default()).unwrap();
        let m: Vec<f64> = (0..reg.dim()).map(|i| (i as f64 * 0.31).sin()).collect();
        let v: Vec<f64> = (0..reg.dim()).map(|i| (i as f64 * 0.17).cos()).collect();
        let a = reg.hessian_action(&m, &v);
        let b = reg.hessian(&m).apply(&v);
        for (a, b) in a.iter().zip(&b) {
            assert!((a - b).abs() < 1e-10 * (1.0 + a.abs()));
        }
    }
}
