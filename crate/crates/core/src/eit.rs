//! Electrical impedance tomography: −∇·(e^m ∇u) = 0 with a Gaussian boundary
//! current and a single grounded boundary vertex.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::mesh::{polar_angle, wrap_angle};
use crate::fem::{Factorization, FunctionSpace, SparseOperator, BOUNDARY_MARKER};
use crate::model::{HessianMode, InversionModel, SolveCounters};

/// One injected current pattern.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceSpec {
    pub theta: f64,
    pub gamma: f64,
    pub beta: f64,
    pub ground_node: usize,
    pub observation_marker: i32,
}

impl SourceSpec {
    /// Source at angle `theta` with the default amplitude and decay.
    pub fn at_angle(theta: f64, ground_node: usize) -> Self {
        Self {
            theta,
            gamma: 0.1,
            beta: 10.0,
            ground_node,
            observation_marker: BOUNDARY_MARKER,
        }
    }

    pub fn validate(&self, space: &FunctionSpace) -> Result<()> {
        if !(self.gamma > 0.0 && self.beta > 0.0) {
            return Err(Error::InvalidSettings("source gamma and beta must be positive".into()));
        }
        if !space.mesh().boundary_vertices().contains(&self.ground_node) {
            return Err(Error::InvalidSettings(format!(
                "ground node {} is not a boundary vertex",
                self.ground_node
            )));
        }
        Ok(())
    }
}

/// Sources equispaced in angle, starting at θ = 0.
pub fn equispaced_sources(q: usize, ground_node: usize) -> Vec<SourceSpec> {
    (0..q)
        .map(|i| SourceSpec::at_angle(2.0 * std::f64::consts::PI * i as f64 / q as f64, ground_node))
        .collect()
}

/// γ exp(−β (θ−θᵢ)²) with the difference wrapped to (−π, π].
pub fn boundary_current(spec: &SourceSpec, theta: f64) -> f64 {
    let d = wrap_angle(theta - spec.theta);
    spec.gamma * (-spec.beta * d * d).exp()
}

/// ∫_Γ g φⱼ ds with three-point Gauss quadrature on each facet.
pub fn current_load(space: &FunctionSpace, spec: &SourceSpec) -> Vec<f64> {
    const GAUSS: [(f64, f64); 3] = [
        (0.112_701_665_379_258_3, 5.0 / 18.0),
        (0.5, 8.0 / 18.0),
        (0.887_298_334_620_741_7, 5.0 / 18.0),
    ];
    let verts = space.mesh().vertices();
    let mut b = vec![0.0; space.dim()];
    for (f, len) in space.mesh().boundary_facets().iter().zip(space.facet_lengths()) {
        let [i, j] = f.vertices;
        let (p, q) = (verts[i], verts[j]);
        for (t, w) in GAUSS {
            let x = [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])];
            let g = boundary_current(spec, polar_angle(x)) * w * len;
            b[i] += g * (1.0 - t);
            b[j] += g * t;
        }
    }
    b
}

struct Linearization {
    m: Vec<f64>,
    sigma: Vec<f64>,
    factor: Factorization,
    u: Vec<f64>,
    p: Option<Vec<f64>>,
}

/// Per-source EIT model with boundary data.
pub struct EitModel {
    space: Arc<FunctionSpace>,
    source: SourceSpec,
    load: Vec<f64>,
    obs_mass: SparseOperator,
    data: Vec<f64>,
    counters: SolveCounters,
    state: Option<Linearization>,
}

impl EitModel {
    pub fn new(space: Arc<FunctionSpace>, source: SourceSpec, data: Vec<f64>) -> Result<Self> {
        source.validate(&space)?;
        space.check_len(&data)?;
        let load = current_load(&space, &source);
        let obs_mass = space.assemble_boundary_mass(source.observation_marker)?;
        Ok(Self {
            space,
            source,
            load,
            obs_mass,
            data,
            counters: SolveCounters::default(),
            state: None,
        })
    }

    pub fn space(&self) -> &Arc<FunctionSpace> {
        &self.space
    }

    pub fn source(&self) -> &SourceSpec {
        &self.source
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn set_data(&mut self, data: Vec<f64>) -> Result<()> {
        self.space.check_len(&data)?;
        self.data = data;
        self.state = None;
        Ok(())
    }

    /// Boundary vertices seen by the observation operator, excluding ground.
    pub fn observed_nodes(&self) -> Vec<usize> {
        let mut nodes = std::collections::BTreeSet::new();
        for f in self.space.mesh().boundary_facets() {
            if f.marker == self.source.observation_marker {
                nodes.extend(f.vertices);
            }
        }
        nodes.remove(&self.source.ground_node);
        nodes.into_iter().collect()
    }

    /// Restriction of a state to the observed boundary; zero elsewhere.
    pub fn observe(&self, u: &[f64]) -> Vec<f64> {
        let mut d = vec![0.0; u.len()];
        for i in self.observed_nodes() {
            d[i] = u[i];
        }
        d
    }

    fn linearize(&mut self, m: &[f64]) -> Result<()> {
        self.space.check_len(m)?;
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidField("parameter has non-finite entries".into()));
        }
        let sigma: Vec<f64> = m.iter().map(|v| v.exp()).collect();
        let k = self.space.weighted_stiffness(&self.space.element_average(&sigma));
        let factor = Factorization::new(&k, &[self.source.ground_node])?;
        let u = factor.solve(&self.load)?;
        self.counters.forward += 1;
        self.state = Some(Linearization {
            m: m.to_vec(),
            sigma,
            factor,
            u,
            p: None,
        });
        Ok(())
    }

    /// State u at `m`. One forward solve.
    pub fn forward_solve(&mut self, m: &[f64]) -> Result<Vec<f64>> {
        self.linearize(m)?;
        Ok(self.state.as_ref().unwrap().u.clone())
    }

    /// ½(u−d)ᵀM_b(u−d).
    pub fn misfit(&self, u: &[f64]) -> f64 {
        let r: Vec<f64> = u.iter().zip(&self.data).map(|(u, d)| u - d).collect();
        0.5 * self.obs_mass.bilinear(&r, &r)
    }

    fn state(&self) -> Result<&Linearization> {
        self.state
            .as_ref()
            .filter(|s| s.p.is_some())
            .ok_or(Error::MissingState("EIT Hessian action requires a prior gradient call"))
    }

    /// Parameter at which the model is currently linearized.
    pub fn linearization_point(&self) -> Option<&[f64]> {
        self.state.as_ref().map(|s| s.m.as_slice())
    }

    /// Σ_{e∋j} (σⱼ/3) ∫ₑ ∇a·∇b, the derivative of aᵀK(m)b with respect to mⱼ.
    fn stiffness_derivative(&self, sigma: &[f64], a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut g = self.space.scatter_thirds(&self.space.element_gradient_products(a, b));
        g.iter_mut().zip(sigma).for_each(|(g, s)| *g *= s);
        g
    }
}

impl InversionModel for EitModel {
    fn dim(&self) -> usize {
        self.space.dim()
    }

    fn cost(&mut self, m: &[f64]) -> Result<f64> {
        self.linearize(m)?;
        Ok(self.misfit(&self.state.as_ref().unwrap().u))
    }

    fn gradient(&mut self, m: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.linearize(m)?;
        let st = self.state.as_ref().unwrap();
        let r: Vec<f64> = st.u.iter().zip(&self.data).map(|(u, d)| d - u).collect();
        let p = st.factor.solve(&self.obs_mass.apply(&r))?;
        self.counters.adjoint += 1;
        let cost = self.misfit(&st.u);
        let g = self.stiffness_derivative(&st.sigma, &st.u, &p);
        self.state.as_mut().unwrap().p = Some(p);
        Ok((cost, g))
    }

    fn hessian_action(&mut self, dir: &[f64], mode: HessianMode) -> Result<Vec<f64>> {
        self.space.check_len(dir)?;
        let st = self.state()?;
        let p = st.p.as_ref().unwrap();
        let dsigma: Vec<f64> = st.sigma.iter().zip(dir).map(|(s, v)| s * v).collect();
        let dk = self.space.weighted_stiffness(&self.space.element_average(&dsigma));

        let mut rhs = dk.apply(&st.u);
        rhs.iter_mut().for_each(|v| *v = -*v);
        let uhat = st.factor.solve(&rhs)?;

        let mut rhs = self.obs_mass.apply(&uhat);
        if mode == HessianMode::Full {
            crate::metric::axpy(&mut rhs, 1.0, &dk.apply(p));
        }
        rhs.iter_mut().for_each(|v| *v = -*v);
        let phat = st.factor.solve(&rhs)?;

        let mut h = self.stiffness_derivative(&st.sigma, &st.u, &phat);
        if mode == HessianMode::Full {
            let a = self.stiffness_derivative(&st.sigma, &uhat, p);
            let b = self.stiffness_derivative(&dsigma, &st.u, p);
            for i in 0..h.len() {
                h[i] += a[i] + b[i];
            }
        }
        self.counters.incremental += 2;
        Ok(h)
    }

    fn counters(&self) -> SolveCounters {
        self.counters
    }

    fn misfit_weight(&self) -> f64 {
        2.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::build_unit_disc_mesh;
    use crate::metric::dot;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn space(level: usize) -> Arc<FunctionSpace> {
        Arc::new(FunctionSpace::new(Arc::new(build_unit_disc_mesh(level).unwrap())).unwrap())
    }

    fn smooth_field(space: &FunctionSpace, a: f64) -> Vec<f64> {
        space
            .mesh()
            .vertices()
            .iter()
            .map(|p| a * (1.3 * p[0] - 0.7 * p[1]).sin() + 0.2 * p[0] * p[1])
            .collect()
    }

    fn model_with_truth(space: &Arc<FunctionSpace>, theta: f64, truth: &[f64]) -> EitModel {
        let mut m = EitModel::new(space.clone(), SourceSpec::at_angle(theta, 1), vec![0.0; space.dim()]).unwrap();
        let u = m.forward_solve(truth).unwrap();
        let d = m.observe(&u);
        m.set_data(d).unwrap();
        m
    }

    #[test]
    fn current_profile() {
        let s = SourceSpec::at_angle(0.4, 1);
        assert!((boundary_current(&s, 0.4) - 0.1).abs() < 1e-15);
        assert!((boundary_current(&s, 1.4) - 0.1 * (-10f64).exp()).abs() < 1e-18);
        assert!((boundary_current(&s, 0.4 + 2.0 * std::f64::consts::PI) - 0.1).abs() < 1e-14);
    }

    #[test]
    fn zero_current_gives_zero_state() {
        let sp = space(2);
        let mut src = SourceSpec::at_angle(0.0, 1);
        src.gamma = 1e-300;
        let mut m = EitModel::new(sp.clone(), src, vec![0.0; sp.dim()]).unwrap();
        let u = m.forward_solve(&vec![0.0; sp.dim()]).unwrap();
        assert!(u.iter().all(|v| v.abs() < 1e-290));
    }

    #[test]
    fn constant_shift_scales_state() {
        let sp = space(3);
        let mut model = EitModel::new(sp.clone(), SourceSpec::at_angle(1.0, 1), vec![0.0; sp.dim()]).unwrap();
        let m = smooth_field(&sp, 0.5);
        let u = model.forward_solve(&m).unwrap();
        let shifted: Vec<f64> = m.iter().map(|v| v + 0.8).collect();
        let us = model.forward_solve(&shifted).unwrap();
        for (a, b) in u.iter().zip(&us) {
            assert!((a * (-0.8f64).exp() - b).abs() < 1e-10 * a.abs().max(1e-3));
        }
        assert_eq!(model.counters().forward, 2);
    }

    #[test]
    fn misfit_of_constant_residual() {
        let sp = space(3);
        let model = EitModel::new(sp.clone(), SourceSpec::at_angle(0.0, 1), vec![0.0; sp.dim()]).unwrap();
        let u = vec![0.3; sp.dim()];
        let len: f64 = sp.facet_lengths().iter().sum();
        assert!((model.misfit(&u) - 0.09 * len / 2.0).abs() < 1e-14);
    }

    #[test]
    fn gradient_vanishes_at_noiseless_truth() {
        let sp = space(3);
        let truth = smooth_field(&sp, 0.4);
        let mut model = model_with_truth(&sp, 0.9, &truth);
        let (c, g) = model.gradient(&truth).unwrap();
        assert!(c < 1e-25);
        assert!(g.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let sp = space(3);
        let truth = smooth_field(&sp, 0.4);
        let mut model = model_with_truth(&sp, 2.0, &truth);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let m: Vec<f64> = (0..sp.dim()).map(|_| rng.gen_range(-0.3..0.3)).collect();
        let (_, g) = model.gradient(&m).unwrap();
        for _ in 0..3 {
            let v: Vec<f64> = (0..sp.dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let h = 1e-5;
            let mp: Vec<f64> = m.iter().zip(&v).map(|(a, b)| a + h * b).collect();
            let mm: Vec<f64> = m.iter().zip(&v).map(|(a, b)| a - h * b).collect();
            let fd = (model.cost(&mp).unwrap() - model.cost(&mm).unwrap()) / (2.0 * h);
            let an = dot(&g, &v);
            assert!((fd - an).abs() <= 1e-5 * an.abs(), "fd {fd} vs {an}");
        }
    }

    #[test]
    fn hessian_symmetric_and_matches_fd() {
        let sp = space(3);
        let truth = smooth_field(&sp, 0.4);
        let mut model = model_with_truth(&sp, 2.0, &truth);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m: Vec<f64> = (0..sp.dim()).map(|_| rng.gen_range(-0.3..0.3)).collect();
        let v: Vec<f64> = (0..sp.dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..sp.dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (_, g0) = model.gradient(&m).unwrap();
        let before = model.counters().incremental;
        let hv = model.hessian_action(&v, HessianMode::Full).unwrap();
        let hw = model.hessian_action(&w, HessianMode::Full).unwrap();
        assert_eq!(model.counters().incremental - before, 4);
        let (a, b) = (dot(&hv, &w), dot(&v, &hw));
        assert!((a - b).abs() <= 1e-8 * a.abs().max(b.abs()));

        let h = 1e-5;
        let mp: Vec<f64> = m.iter().zip(&v).map(|(a, b)| a + h * b).collect();
        let mm: Vec<f64> = m.iter().zip(&v).map(|(a, b)| a - h * b).collect();
        let gp = model.gradient(&mp).unwrap().1;
        let gm = model.gradient(&mm).unwrap().1;
        let fd: Vec<f64> = gp.iter().zip(&gm).map(|(a, b)| (a - b) / (2.0 * h)).collect();
        let err: f64 = fd.iter().zip(&hv).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let nrm: f64 = hv.iter().map(|a| a * a).sum::<f64>().sqrt();
        assert!(err <= 1e-4 * nrm, "{err} vs {nrm}");
        let _ = g0;
    }

    #[test]
    fn gauss_newton_equals_full_at_noiseless_optimum() {
        let sp = space(3);
        let truth = smooth_field(&sp, 0.4);
        let mut model = model_with_truth(&sp, 0.0, &truth);
        model.gradient(&truth).unwrap();
        let v: Vec<f64> = (0..sp.dim()).map(|i| (i as f64).sin()).collect();
        let a = model.hessian_action(&v, HessianMode::Full).unwrap();
        let b = model.hessian_action(&v, HessianMode::GaussNewton).unwrap();
        let scale = a.iter().fold(0.0f64, |s, x| s.max(x.abs()));
        assert!(a.iter().zip(&b).all(|(a, b)| (a - b).abs() <= 1e-9 * scale));
    }

    #[test]
    fn hessian_requires_gradient() {
        let sp = space(2);
        let mut model = EitModel::new(sp.clone(), SourceSpec::at_angle(0.0, 1), vec![0.0; sp.dim()]).unwrap();
        assert!(matches!(
            model.hessian_action(&vec![0.0; sp.dim()], HessianMode::Full),
            Err(Error::MissingState(_))
        ));
    }

    #[test]
    fn boundary_trace_self_converges() {
        // The grounded vertex acts as a point sink, which shifts the trace by a
        // constant growing like log(1/h); compare traces relative to θ = π,
        // away from the sink, at the level-2 boundary vertices.
        let coarse = build_unit_disc_mesh(2).unwrap();
        let far: Vec<usize> = coarse
            .boundary_vertices()
            .into_iter()
            .filter(|&i| polar_angle(coarse.vertices()[i]).abs() > 1.0)
            .collect();
        let opposite = coarse.boundary_vertex_nearest_angle(std::f64::consts::PI).unwrap();
        let traces: Vec<Vec<f64>> = (2..6)
            .map(|l| {
                let sp = space(l);
                let mut model =
                    EitModel::new(sp.clone(), SourceSpec::at_angle(0.5, 1), vec![0.0; sp.dim()]).unwrap();
                let u = model.forward_solve(&vec![0.0; sp.dim()]).unwrap();
                far.iter().map(|&i| u[i] - u[opposite]).collect()
            })
            .collect();
        let diffs: Vec<f64> = traces
            .windows(2)
            .map(|w| w[0].iter().zip(&w[1]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .collect();
        for w in diffs.windows(2) {
            assert!(w[0] / w[1] > 3.0, "{diffs:?}");
        }
    }
}
