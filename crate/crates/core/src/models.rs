//! Built-in model catalog.

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::jump_sde::Dynamics;

/// `b(x) = M x + s·tanh(x)` and `G(x, y) = L y + g·(Σ_j y_j)·tanh(x)`, with
/// `tanh` applied componentwise. `M` is `d × d`, `L` is `d × m`, both
/// row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineTanh {
    d: usize,
    m: usize,
    drift: Vec<f64>,
    drift_tanh: f64,
    mix: Vec<f64>,
    jump_tanh: f64,
}

impl AffineTanh {
    pub fn new(d: usize, m: usize, drift: Vec<f64>, drift_tanh: f64, mix: Vec<f64>, jump_tanh: f64) -> Result<Self> {
        if drift.len() != d * d {
            return Err(Error::Dimension {
                expected: d * d,
                got: drift.len(),
            });
        }
        if mix.len() != d * m {
            return Err(Error::Dimension {
                expected: d * m,
                got: mix.len(),
            });
        }
        Ok(Self {
            d,
            m,
            drift,
            drift_tanh,
            mix,
            jump_tanh,
        })
    }

    /// `b(x) = −κ x`, `G(x, y) = c y`.
    pub fn scalar(kappa: f64, jump_gain: f64) -> Self {
        Self {
            d: 1,
            m: 1,
            drift: vec![-kappa],
            drift_tanh: 0.0,
            mix: vec![jump_gain],
            jump_tanh: 0.0,
        }
    }

    /// Two-dimensional benchmark with nonlinear drift and state-dependent
    /// jumps over two-dimensional marks.
    pub fn planar() -> Self {
        Self {
            d: 2,
            m: 2,
            drift: vec![-1.0, 0.5, -0.5, -1.0],
            drift_tanh: 0.3,
            mix: vec![1.0, 0.2, 0.0, 0.8],
            jump_tanh: 0.25,
        }
    }

    pub fn mark_dim(&self) -> usize {
        self.m
    }
}

fn sech2(x: f64) -> f64 {
    let c = x.cosh();
    1.0 / (c * c)
}

impl Dynamics for AffineTanh {
    fn dim(&self) -> usize {
        self.d
    }

    fn drift(&self, x: &[f64], out: &mut [f64]) {
        for i in 0..self.d {
            let row = &self.drift[i * self.d..(i + 1) * self.d];
            out[i] = row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + self.drift_tanh * x[i].tanh();
        }
    }

    fn drift_jacobian(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.drift);
        for i in 0..self.d {
            out[i * self.d + i] += self.drift_tanh * sech2(x[i]);
        }
    }

    fn jump(&self, x: &[f64], _atom: usize, y: &[f64], out: &mut [f64]) {
        let ysum: f64 = y.iter().sum();
        for i in 0..self.d {
            let row = &self.mix[i * self.m..(i + 1) * self.m];
            out[i] = row.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() + self.jump_tanh * ysum * x[i].tanh();
        }
    }

    fn jump_jacobian(&self, x: &[f64], _atom: usize, y: &[f64], out: &mut [f64]) {
        let ysum: f64 = y.iter().sum();
        out.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..self.d {
            out[i * self.d + i] = self.jump_tanh * ysum * sech2(x[i]);
        }
    }
}
