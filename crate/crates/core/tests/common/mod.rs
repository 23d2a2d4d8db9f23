#![allow(dead_code)]

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use admm_pde::fem::{build_unit_disc_mesh, build_unit_square_mesh, FunctionSpace};
use admm_pde::model::{HessianMode, InversionModel, SolveCounters};
use admm_pde::Result;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn disc(level: usize) -> Arc<FunctionSpace> {
    Arc::new(FunctionSpace::new(Arc::new(build_unit_disc_mesh(level).unwrap())).unwrap())
}

pub fn square(n: usize) -> Arc<FunctionSpace> {
    Arc::new(FunctionSpace::new(Arc::new(build_unit_square_mesh(n).unwrap())).unwrap())
}

pub fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn along(m: &[f64], v: &[f64], h: f64) -> Vec<f64> {
    m.iter().zip(v).map(|(a, b)| a + h * b).collect()
}

pub fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    norm(&sub(a, b)) / norm(b).max(1e-300)
}

/// |central difference − gᵀv| / |gᵀv|.
pub fn fd_gap(mut f: impl FnMut(&[f64]) -> f64, m: &[f64], g: &[f64], v: &[f64], h: f64) -> f64 {
    let fd = (f(&along(m, v, h)) - f(&along(m, v, -h))) / (2.0 * h);
    let an = dot(g, v);
    (fd - an).abs() / an.abs().max(1e-14)
}

/// Dense copy of a linear map given by its action.
pub fn dense(n: usize, apply: impl Fn(&[f64]) -> Vec<f64>) -> nalgebra::DMatrix<f64> {
    let mut out = nalgebra::DMatrix::zeros(n, n);
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        let col = apply(&e);
        for i in 0..n {
            out[(i, j)] = col[i];
        }
    }
    out
}

/// ½ Σⱼ cⱼ(mⱼ − dⱼ)², a separable quadratic stand-in for a forward model.
pub struct Quadratic {
    pub c: Vec<f64>,
    pub d: Vec<f64>,
    pub counters: SolveCounters,
}

impl Quadratic {
    pub fn new(c: Vec<f64>, d: Vec<f64>) -> Self {
        Self {
            c,
            d,
            counters: SolveCounters::default(),
        }
    }
}

impl InversionModel for Quadratic {
    fn dim(&self) -> usize {
        self.c.len()
    }

    fn cost(&mut self, m: &[f64]) -> Result<f64> {
        self.counters.forward += 1;
        Ok(0.5 * m.iter().zip(&self.d).zip(&self.c).map(|((m, d), c)| c * (m - d) * (m - d)).sum::<f64>())
    }

    fn gradient(&mut self, m: &[f64]) -> Result<(f64, Vec<f64>)> {
        let cost = self.cost(m)?;
        self.counters.adjoint += 1;
        Ok((cost, m.iter().zip(&self.d).zip(&self.c).map(|((m, d), c)| c * (m - d)).collect()))
    }

    fn hessian_action(&mut self, dir: &[f64], _mode: HessianMode) -> Result<Vec<f64>> {
        self.counters.incremental += 2;
        Ok(dir.iter().zip(&self.c).map(|(v, c)| c * v).collect())
    }

    fn counters(&self) -> SolveCounters {
        self.counters
    }

    fn misfit_weight(&self) -> f64 {
        2.0
    }
}
