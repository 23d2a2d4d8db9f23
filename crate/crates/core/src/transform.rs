//! Nodal reparameterizations that keep bounded physical fields in an open domain.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransformKind {
    Identity,
    /// x ↦ 1/(1+e⁻ˣ), maps onto (0, 1).
    Logit,
    /// x ↦ eˣ, maps onto (0, ∞).
    Log,
}

impl TransformKind {
    /// Physical value and its first and second derivative at `x`.
    pub fn eval(self, x: f64) -> (f64, f64, f64) {
        match self {
            TransformKind::Identity => (x, 1.0, 0.0),
            TransformKind::Logit => {
                let s = 1.0 / (1.0 + (-x).exp());
                let d = s * (1.0 - s);
                (s, d, d * (1.0 - 2.0 * s))
            }
            TransformKind::Log => {
                let e = x.exp();
                (e, e, e)
            }
        }
    }

    /// Inverse map from a physical value, clamped into the open range.
    pub fn inverse(self, y: f64) -> f64 {
        match self {
            TransformKind::Identity => y,
            TransformKind::Logit => {
                let y = y.clamp(1e-9, 1.0 - 1e-9);
                (y / (1.0 - y)).ln()
            }
            TransformKind::Log => y.max(1e-300).ln(),
        }
    }
}

/// Per-block transform on parameter vectors of `blocks × n` nodal values.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockTransform {
    kinds: Vec<TransformKind>,
    n: usize,
}

/// Physical values with first and second derivatives, all nodal.
#[derive(Debug, Clone)]
pub struct TransformJet {
    pub value: Vec<f64>,
    pub first: Vec<f64>,
    pub second: Vec<f64>,
}

impl BlockTransform {
    pub fn new(kinds: Vec<TransformKind>, n: usize) -> Self {
        Self { kinds, n }
    }

    pub fn identity(blocks: usize, n: usize) -> Self {
        Self::new(vec![TransformKind::Identity; blocks], n)
    }

    pub fn kinds(&self) -> &[TransformKind] {
        &self.kinds
    }

    pub fn is_identity(&self) -> bool {
        self.kinds.iter().all(|k| *k == TransformKind::Identity)
    }

    pub fn dim(&self) -> usize {
        self.kinds.len() * self.n
    }

    pub fn jet(&self, x: &[f64]) -> TransformJet {
        let mut value = Vec::with_capacity(x.len());
        let mut first = Vec::with_capacity(x.len());
        let mut second = Vec::with_capacity(x.len());
        for (b, kind) in self.kinds.iter().enumerate() {
            for &xi in &x[b * self.n..(b + 1) * self.n] {
                let (v, d1, d2) = kind.eval(xi);
                value.push(v);
                first.push(d1);
                second.push(d2);
            }
        }
        TransformJet {
            value,
            first,
            second,
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.jet(x).value
    }

    pub fn inverse(&self, y: &[f64]) -> Vec<f64> {
        self.kinds
            .iter()
            .enumerate()
            .flat_map(|(b, kind)| y[b * self.n..(b + 1) * self.n].iter().map(move |&v| kind.inverse(v)))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivatives_match_finite_differences() {
        for kind in [TransformKind::Identity, TransformKind::Logit, TransformKind::Log] {
            for &x in &[-2.0, -0.3, 0.0, 0.7, 1.9] {
                let h = 1e-5;
                let (_, d1, d2) = kind.eval(x);
                let fd1 = (kind.eval(x + h).0 - kind.eval(x - h).0) / (2.0 * h);
                let fd2 = (kind.eval(x + h).1 - kind.eval(x - h).1) / (2.0 * h);
                assert!((d1 - fd1).abs() < 1e-8 * (1.0 + d1.abs()));
                assert!((d2 - fd2).abs() < 1e-8 * (1.0 + d2.abs()));
            }
        }
    }

    #[test]
    fn inverse_roundtrip() {
        let t = BlockTransform::new(vec![TransformKind::Logit, TransformKind::Log], 3);
        let y = vec![0.2, 0.5, 0.95, 0.1, 1.0, 12.0];
        let back = t.forward(&t.inverse(&y));
        for (a, b) in back.iter().zip(&y) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
