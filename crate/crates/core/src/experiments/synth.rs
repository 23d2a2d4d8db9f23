use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::eit::EitModel;
use crate::error::Result;
use crate::fem::FunctionSpace;
use crate::model::InversionModel;
use crate::qpact::{QpactModel, QpactParams};

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn rng_for(seed: u64, index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_add(index as u64))
}

/// Sets noisy boundary data on every EIT model from the state at `truth`.
///
/// Noise on model i is N(0, (noise·max|u|)²) on the observed nodes, drawn from
/// a generator seeded with `seed + i`.
pub fn synthesize_eit_data(models: &mut [EitModel], truth: &[f64], noise: f64, seed: u64) -> Result<()> {
    for (i, model) in models.iter_mut().enumerate() {
        let u = model.forward_solve(truth)?;
        let mut d = model.observe(&u);
        if noise > 0.0 {
            let std = noise * max_abs(&d);
            let normal = Normal::new(0.0, std).expect("finite standard deviation");
            let mut rng = rng_for(seed, i);
            for j in model.observed_nodes() {
                d[j] += normal.sample(&mut rng);
            }
        }
        model.set_data(d)?;
    }
    Ok(())
}

/// Data floor, relative to the largest clean value, applied after adding noise.
pub const QPACT_DATA_FLOOR: f64 = 1e-3;

/// Sets noisy interior data d = μ_a φ on every qPACT model.
///
/// Returns the number of clamped nodes per model.
pub fn synthesize_qpact_data(models: &mut [QpactModel], truth: &QpactParams, noise: f64, seed: u64) -> Result<Vec<usize>> {
    let mut clamped = Vec::with_capacity(models.len());
    for (i, model) in models.iter_mut().enumerate() {
        let mut d = model.predict(truth)?;
        let peak = max_abs(&d);
        let mut count = 0;
        if noise > 0.0 {
            let normal = Normal::new(0.0, noise * peak).expect("finite standard deviation");
            let mut rng = rng_for(seed, i);
            let floor = QPACT_DATA_FLOOR * peak;
            for v in d.iter_mut() {
                *v += normal.sample(&mut rng);
                if *v < floor {
                    *v = floor;
                    count += 1;
                }
            }
        }
        if count * 100 > d.len() {
            log::warn!("qPACT data for model {i}: {count} of {} nodes clamped", d.len());
        }
        model.set_data(d)?;
        clamped.push(count);
    }
    Ok(clamped)
}

/// ‖m − m_true‖ / ‖m_true‖ in L²(Ω).
pub fn relative_error(space: &FunctionSpace, m: &[f64], truth: &[f64]) -> f64 {
    let d: Vec<f64> = m.iter().zip(truth).map(|(a, b)| a - b).collect();
    (space.mass().bilinear(&d, &d) / space.mass().bilinear(truth, truth)).sqrt()
}

/// Σᵢ ‖fᵢ(m) − dᵢ‖², one forward solve per model.
pub fn state_misfit<M: InversionModel>(models: &mut [M], m: &[f64]) -> Result<f64> {
    let mut total = 0.0;
    for model in models.iter_mut() {
        total += model.misfit_weight() * model.cost(m)?;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eit::{equispaced_sources, EitModel};
    use crate::fem::build_unit_disc_mesh;
    use std::sync::Arc;

    fn setup(q: usize) -> (Arc<FunctionSpace>, Vec<EitModel>) {
        let space = Arc::new(FunctionSpace::new(Arc::new(build_unit_disc_mesh(3).unwrap())).unwrap());
        let models = equispaced_sources(q, 1)
            .into_iter()
            .map(|s| EitModel::new(space.clone(), s, vec![0.0; space.dim()]).unwrap())
            .collect();
        (space, models)
    }

    #[test]
    fn noiseless_data_is_the_trace() {
        let (space, mut models) = setup(2);
        let truth: Vec<f64> = space.mesh().vertices().iter().map(|p| 0.3 * p[0]).collect();
        synthesize_eit_data(&mut models, &truth, 0.0, 3).unwrap();
        let u = models[0].forward_solve(&truth).unwrap();
        assert_eq!(models[0].data(), models[0].observe(&u).as_slice());
        assert!(state_misfit(&mut models, &truth).unwrap() < 1e-28);
    }

    #[test]
    fn same_seed_same_data() {
        let (space, mut a) = setup(3);
        let (_, mut b) = setup(3);
        let truth = vec![0.1; space.dim()];
        synthesize_eit_data(&mut a, &truth, 0.01, 42).unwrap();
        synthesize_eit_data(&mut b, &truth, 0.01, 42).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.data(), y.data());
        }
    }

    #[test]
    fn noise_level_matches_request() {
        let (space, mut models) = setup(16);
        let truth = vec![0.0; space.dim()];
        let clean: Vec<Vec<f64>> = models
            .iter_mut()
            .map(|m| {
                let u = m.forward_solve(&truth).unwrap();
                m.observe(&u)
            })
            .collect();
        synthesize_eit_data(&mut models, &truth, 0.01, 9).unwrap();
        let mut z = Vec::new();
        for (m, c) in models.iter().zip(&clean) {
            let std = 0.01 * max_abs(c);
            for j in m.observed_nodes() {
                z.push((m.data()[j] - c[j]) / std);
            }
        }
        assert!(z.len() >= 1000);
        let var = z.iter().map(|v| v * v).sum::<f64>() / z.len() as f64;
        assert!((var.sqrt() - 1.0).abs() < 0.05, "{}", var.sqrt());
    }

    #[test]
    fn relative_error_identities() {
        let (space, _) = setup(1);
        let t: Vec<f64> = space.mesh().vertices().iter().map(|p| 1.0 + p[1]).collect();
        let twice: Vec<f64> = t.iter().map(|v| 2.0 * v).collect();
        assert_eq!(relative_error(&space, &t, &t), 0.0);
        assert!((relative_error(&space, &twice, &t) - 1.0).abs() < 1e-14);
        assert!((relative_error(&space, &vec![0.0; t.len()], &t) - 1.0).abs() < 1e-14);
    }
}
