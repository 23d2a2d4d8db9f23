//! Quantitative photoacoustic tomography in the diffusion approximation.
//!
//! Unknowns are stacked nodal fields `[s; c_thb; μ_s′]`. At each wavelength
//! μ_a = c_thb(ε_hb(1−s) + ε_hbo2 s) and the fluence φ solves
//! −∇·(D∇φ) + μ_a φ = 0 with the Robin condition D ∂φ/∂n + φ/2 = φ₀/2,
//! D = 1/(3(μ_a + μ_s′)). Data are d = μ_a φ on the whole domain.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{Factorization, FunctionSpace, SparseOperator};
use crate::model::{HessianMode, InversionModel, SolveCounters};

/// Molar extinction of the two hemoglobin species per wavelength.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChromophoreTable {
    pub wavelengths: Vec<f64>,
    pub extinction_hb: Vec<f64>,
    pub extinction_hbo2: Vec<f64>,
}

impl Default for ChromophoreTable {
    /// Synthetic values for 757, 800 and 850 nm with the usual crossing near 800 nm.
    fn default() -> Self {
        Self {
            wavelengths: vec![757.0, 800.0, 850.0],
            extinction_hb: vec![1.6, 0.8, 0.7],
            extinction_hbo2: vec![0.6, 0.8, 1.1],
        }
    }
}

impl ChromophoreTable {
    pub fn validate(&self) -> Result<()> {
        let n = self.wavelengths.len();
        if n == 0 || self.extinction_hb.len() != n || self.extinction_hbo2.len() != n {
            return Err(Error::InvalidSettings("chromophore table columns differ in length".into()));
        }
        if self.wavelengths.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidSettings("wavelengths must be strictly increasing".into()));
        }
        if self.extinction_hb.iter().chain(&self.extinction_hbo2).any(|e| !(*e > 0.0)) {
            return Err(Error::InvalidSettings("extinction coefficients must be positive".into()));
        }
        Ok(())
    }

    /// (ε_hb, ε_hbo2) at `wavelength`.
    pub fn coefficients(&self, wavelength: f64) -> Result<(f64, f64)> {
        self.wavelengths
            .iter()
            .position(|w| (w - wavelength).abs() < 1e-9)
            .map(|i| (self.extinction_hb[i], self.extinction_hbo2[i]))
            .ok_or(Error::UnknownWavelength(wavelength))
    }
}

/// Physical optical parameters, one value per vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct QpactParams {
    pub s: Vec<f64>,
    pub c_thb: Vec<f64>,
    pub mus: Vec<f64>,
}

impl QpactParams {
    pub fn stacked(&self) -> Vec<f64> {
        [self.s.as_slice(), &self.c_thb, &self.mus].concat()
    }

    pub fn from_stacked(v: &[f64]) -> Self {
        let n = v.len() / 3;
        Self {
            s: v[..n].to_vec(),
            c_thb: v[n..2 * n].to_vec(),
            mus: v[2 * n..].to_vec(),
        }
    }
}

/// μ_a = ε_hb (1−s) c_thb + ε_hbo2 s c_thb, nodewise.
pub fn mua_from_chromophores(params: &QpactParams, table: &ChromophoreTable, wavelength: f64) -> Result<Vec<f64>> {
    let (hb, hbo2) = table.coefficients(wavelength)?;
    Ok(params
        .s
        .iter()
        .zip(&params.c_thb)
        .map(|(s, c)| c * (hb * (1.0 - s) + hbo2 * s))
        .collect())
}

/// Nodal values of (μ_a, D) and the pointwise derivatives needed by the chain rule.
struct Optical {
    mua: Vec<f64>,
    diff: Vec<f64>,
    /// ∂μ_a/∂s and ∂μ_a/∂c per node.
    da_ds: Vec<f64>,
    da_dc: Vec<f64>,
}

struct Linearization {
    theta: Vec<f64>,
    optical: Optical,
    factor: Factorization,
    phi: Vec<f64>,
    /// w = 2M r, the residual weighted by the mass matrix.
    w: Vec<f64>,
    p: Option<Vec<f64>>,
}

/// Single-wavelength qPACT model on physical parameters.
pub struct QpactModel {
    space: Arc<FunctionSpace>,
    wavelength: f64,
    eps_hb: f64,
    eps_hbo2: f64,
    robin: SparseOperator,
    load: Vec<f64>,
    data: Vec<f64>,
    log_data: Vec<f64>,
    counters: SolveCounters,
    state: Option<Linearization>,
}

impl QpactModel {
    /// `illumination` is the nodal boundary source φ₀.
    pub fn new(
        space: Arc<FunctionSpace>,
        table: &ChromophoreTable,
        wavelength: f64,
        illumination: &[f64],
        data: Vec<f64>,
    ) -> Result<Self> {
        table.validate()?;
        let (eps_hb, eps_hbo2) = table.coefficients(wavelength)?;
        space.check_len(illumination)?;
        let mut robin = space.full_boundary_mass();
        robin.scale(0.5);
        let load = robin.apply(illumination);
        let mut model = Self {
            space,
            wavelength,
            eps_hb,
            eps_hbo2,
            robin,
            load,
            data: Vec::new(),
            log_data: Vec::new(),
            counters: SolveCounters::default(),
            state: None,
        };
        model.set_data(data)?;
        Ok(model)
    }

    pub fn space(&self) -> &Arc<FunctionSpace> {
        &self.space
    }

    pub fn wavelength(&self) -> f64 {
        self.wavelength
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Replaces the data. Entries must be strictly positive; an all-ones
    /// placeholder is accepted when only forward solves are needed.
    pub fn set_data(&mut self, data: Vec<f64>) -> Result<()> {
        self.space.check_len(&data)?;
        if let Some((node, &value)) = data.iter().enumerate().find(|(_, d)| !(**d > 0.0)) {
            return Err(Error::NonPositiveLog { node, value });
        }
        self.log_data = data.iter().map(|d| d.ln()).collect();
        self.data = data;
        self.state = None;
        Ok(())
    }

    fn optical(&self, theta: &[f64]) -> Result<Optical> {
        let n = self.space.dim();
        if theta.len() != 3 * n {
            return Err(Error::DimensionMismatch {
                expected: 3 * n,
                got: theta.len(),
            });
        }
        let (s, c, mus) = (&theta[..n], &theta[n..2 * n], &theta[2 * n..]);
        let delta = self.eps_hbo2 - self.eps_hb;
        let mut o = Optical {
            mua: Vec::with_capacity(n),
            diff: Vec::with_capacity(n),
            da_ds: Vec::with_capacity(n),
            da_dc: Vec::with_capacity(n),
        };
        for j in 0..n {
            if !(s[j].is_finite() && c[j].is_finite() && mus[j].is_finite()) {
                return Err(Error::InvalidField(format!("non-finite optical parameter at node {j}")));
            }
            let e = self.eps_hb + delta * s[j];
            let a = c[j] * e;
            if !(a >= 0.0) {
                return Err(Error::NonPositiveCoefficient { element: j, value: a });
            }
            let t = a + mus[j];
            if !(t > 0.0) {
                return Err(Error::NonPositiveCoefficient { element: j, value: t });
            }
            o.mua.push(a);
            o.diff.push(1.0 / (3.0 * t));
            o.da_ds.push(c[j] * delta);
            o.da_dc.push(e);
        }
        Ok(o)
    }

    fn system(&self, diff: &[f64], mua: &[f64]) -> SparseOperator {
        let mut a = self.space.weighted_stiffness(&self.space.element_average(diff));
        a.axpy(1.0, &self.space.weighted_mass(&self.space.element_average(mua)));
        a.axpy(1.0, &self.robin);
        a
    }

    /// Derivative of the system in the direction (â, D̂), applied to `x`.
    fn system_variation(&self, da: &[f64], dd: &[f64], x: &[f64]) -> Vec<f64> {
        let mut v = self.space.weighted_stiffness(&self.space.element_average(dd)).apply(x);
        let m = self.space.weighted_mass(&self.space.element_average(da)).apply(x);
        crate::metric::axpy(&mut v, 1.0, &m);
        v
    }

    /// Gradient of pᵀA(y)x with respect to nodal (μ_a, D).
    fn system_derivative(&self, p: &[f64], x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let ga = self.space.scatter_thirds(&self.space.element_mass_products(p, x));
        let gd = self.space.scatter_thirds(&self.space.element_gradient_products(p, x));
        (ga, gd)
    }

    fn linearize(&mut self, theta: &[f64]) -> Result<()> {
        let optical = self.optical(theta)?;
        let a = self.system(&optical.diff, &optical.mua);
        let factor = Factorization::new(&a, &[])?;
        let phi = factor.solve(&self.load)?;
        self.counters.forward += 1;
        self.state = Some(Linearization {
            theta: theta.to_vec(),
            optical,
            factor,
            phi,
            w: Vec::new(),
            p: None,
        });
        Ok(())
    }

    /// Fluence at physical parameters `params`. One forward solve.
    pub fn forward_solve(&mut self, params: &QpactParams) -> Result<Vec<f64>> {
        self.linearize(&params.stacked())?;
        Ok(self.state.as_ref().unwrap().phi.clone())
    }

    /// Predicted data μ_a φ at `params`.
    pub fn predict(&mut self, params: &QpactParams) -> Result<Vec<f64>> {
        let phi = self.forward_solve(params)?;
        let mua = &self.state.as_ref().unwrap().optical.mua;
        Ok(mua.iter().zip(&phi).map(|(a, f)| a * f).collect())
    }

    /// Nodal log residual ln(μ_a φ) − ln d.
    fn log_residual(&self, mua: &[f64], phi: &[f64]) -> Result<Vec<f64>> {
        mua.iter()
            .zip(phi)
            .zip(&self.log_data)
            .enumerate()
            .map(|(node, ((a, f), ld))| {
                let v = a * f;
                if v > 0.0 {
                    Ok(v.ln() - ld)
                } else {
                    Err(Error::NonPositiveLog { node, value: v })
                }
            })
            .collect()
    }

    /// ‖ln(μ_a φ) − ln d‖² in L²(Ω).
    pub fn log_misfit(&self, params: &QpactParams, phi: &[f64]) -> Result<f64> {
        let (hb, hbo2) = (self.eps_hb, self.eps_hbo2);
        let mua: Vec<f64> = params
            .s
            .iter()
            .zip(&params.c_thb)
            .map(|(s, c)| c * (hb * (1.0 - s) + hbo2 * s))
            .collect();
        let r = self.log_residual(&mua, phi)?;
        Ok(self.space.mass().bilinear(&r, &r))
    }

    fn state(&self) -> Result<&Linearization> {
        self.state
            .as_ref()
            .filter(|s| s.p.is_some())
            .ok_or(Error::MissingState("qPACT Hessian action requires a prior gradient call"))
    }

    /// Pulls (g_a, g_D) back to (s, c, μ_s′) through the pointwise map.
    fn pull_back(o: &Optical, ga: &[f64], gd: &[f64]) -> Vec<f64> {
        let n = ga.len();
        let mut out = vec![0.0; 3 * n];
        for j in 0..n {
            let dd = -3.0 * o.diff[j] * o.diff[j];
            let total = ga[j] + dd * gd[j];
            out[j] = total * o.da_ds[j];
            out[n + j] = total * o.da_dc[j];
            out[2 * n + j] = dd * gd[j];
        }
        out
    }
}

impl InversionModel for QpactModel {
    fn dim(&self) -> usize {
        3 * self.space.dim()
    }

    fn cost(&mut self, theta: &[f64]) -> Result<f64> {
        self.linearize(theta)?;
        let st = self.state.as_ref().unwrap();
        let r = self.log_residual(&st.optical.mua, &st.phi)?;
        Ok(self.space.mass().bilinear(&r, &r))
    }

    fn gradient(&mut self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.linearize(theta)?;
        let st = self.state.as_ref().unwrap();
        let r = self.log_residual(&st.optical.mua, &st.phi)?;
        let cost = self.space.mass().bilinear(&r, &r);
        let mut w = self.space.mass().apply(&r);
        w.iter_mut().for_each(|v| *v *= 2.0);
        let rhs: Vec<f64> = w.iter().zip(&st.phi).map(|(w, f)| -w / f).collect();
        let p = st.factor.solve(&rhs)?;
        self.counters.adjoint += 1;
        let (mut ga, gd) = self.system_derivative(&p, &st.phi);
        for ((g, w), a) in ga.iter_mut().zip(&w).zip(&st.optical.mua) {
            *g += w / a;
        }
        let g = Self::pull_back(&st.optical, &ga, &gd);
        let st = self.state.as_mut().unwrap();
        st.w = w;
        st.p = Some(p);
        Ok((cost, g))
    }

    fn hessian_action(&mut self, dir: &[f64], mode: HessianMode) -> Result<Vec<f64>> {
        let n = self.space.dim();
        if dir.len() != 3 * n {
            return Err(Error::DimensionMismatch {
                expected: 3 * n,
                got: dir.len(),
            });
        }
        let st = self.state()?;
        let o = &st.optical;
        let (phi, w, p) = (&st.phi, &st.w, st.p.as_ref().unwrap());
        let full = mode == HessianMode::Full;
        let (ds, dc, dm) = (&dir[..n], &dir[n..2 * n], &dir[2 * n..]);

        // direction in (μ_a, D)
        let mut da = vec![0.0; n];
        let mut dd = vec![0.0; n];
        for j in 0..n {
            da[j] = o.da_ds[j] * ds[j] + o.da_dc[j] * dc[j];
            dd[j] = -3.0 * o.diff[j] * o.diff[j] * (da[j] + dm[j]);
        }

        let mut rhs = self.system_variation(&da, &dd, phi);
        rhs.iter_mut().for_each(|v| *v = -*v);
        let phat = st.factor.solve(&rhs)?;

        // linearized log residual and its mass-weighted form
        let rhat: Vec<f64> = (0..n).map(|j| da[j] / o.mua[j] + phat[j] / phi[j]).collect();
        let mrhat = self.space.mass().apply(&rhat);

        let mut rhs: Vec<f64> = (0..n).map(|j| -2.0 * mrhat[j] / phi[j]).collect();
        if full {
            let ap = self.system_variation(&da, &dd, p);
            for j in 0..n {
                rhs[j] += w[j] * phat[j] / (phi[j] * phi[j]) - ap[j];
            }
        }
        let pshat = st.factor.solve(&rhs)?;

        let (mut ha, mut hd) = self.system_derivative(&pshat, phi);
        for j in 0..n {
            ha[j] += 2.0 * mrhat[j] / o.mua[j];
        }
        if full {
            let (ea, ed) = self.system_derivative(p, &phat);
            for j in 0..n {
                ha[j] += ea[j] - w[j] * da[j] / (o.mua[j] * o.mua[j]);
                hd[j] += ed[j];
            }
        }
        let mut h = Self::pull_back(o, &ha, &hd);

        if full {
            // gradient in (μ_a, D) contracted with the second derivative of the pointwise map
            let (mut ga, gd) = self.system_derivative(p, phi);
            for j in 0..n {
                ga[j] += w[j] / o.mua[j];
            }
            let delta = self.eps_hbo2 - self.eps_hb;
            for j in 0..n {
                let d = o.diff[j];
                let that = da[j] + dm[j];
                let curv = 18.0 * d * d * d * gd[j] * that;
                let total = ga[j] - 3.0 * d * d * gd[j];
                h[j] += curv * o.da_ds[j] + total * delta * dc[j];
                h[n + j] += curv * o.da_dc[j] + total * delta * ds[j];
                h[2 * n + j] += curv;
            }
        }
        self.counters.incremental += 2;
        Ok(h)
    }

    fn counters(&self) -> SolveCounters {
        self.counters
    }

    fn misfit_weight(&self) -> f64 {
        1.0
    }
}

impl QpactModel {
    /// Parameter at which the model is currently linearized.
    pub fn linearization_point(&self) -> Option<&[f64]> {
        self.state.as_ref().map(|s| s.theta.as_slice())
    }
}
