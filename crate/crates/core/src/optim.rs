//! SGD with momentum, Adam, and masked Adam for sparse weight updates.
//!
//! Masked Adam only touches coordinates whose mask is set: their moments and
//! values follow the usual Adam recurrences, every other coordinate (value,
//! first and second moment) is left bit-for-bit alone. Bias correction uses
//! one global step counter shared by all coordinates.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

fn check_len(op: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::LengthMismatch {
            op,
            expected,
            actual,
        });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SgdState {
    pub step_size: f64,
    pub momentum: f64,
    velocity: Vec<f64>,
}

impl SgdState {
    pub fn new(n: usize, step_size: f64, momentum: f64) -> Self {
        Self {
            step_size,
            momentum,
            velocity: vec![0.0; n],
        }
    }

    pub fn velocity(&self) -> &[f64] {
        &self.velocity
    }
}

/// `buf ← momentum·buf + g; θ ← θ − α·buf`.
pub fn sgd_step(state: &mut SgdState, params: &mut [f64], grads: &[f64]) -> Result<()> {
    check_len("sgd_step params", state.velocity.len(), params.len())?;
    check_len("sgd_step grads", state.velocity.len(), grads.len())?;
    for ((p, b), g) in params.iter_mut().zip(&mut state.velocity).zip(grads) {
        *b = state.momentum * *b + g;
        *p -= state.step_size * *b;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub step_size: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            step_size: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_step_size(step_size: f64) -> Self {
        Self {
            step_size,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamState {
    pub fn new(n: usize, config: AdamConfig) -> Self {
        Self {
            config,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.m
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.v
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }
}

#[inline]
fn adam_coord(c: &AdamConfig, bc1: f64, bc2: f64, p: &mut f64, m: &mut f64, v: &mut f64, g: f64) {
    *m = c.beta1 * *m + (1.0 - c.beta1) * g;
    *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
    let m_hat = *m / bc1;
    let v_hat = *v / bc2;
    *p -= c.step_size * m_hat / (libm::sqrt(v_hat) + c.eps);
}

fn bias_corrections(state: &AdamState) -> (f64, f64) {
    let t = state.t as f64;
    (
        1.0 - libm::pow(state.config.beta1, t),
        1.0 - libm::pow(state.config.beta2, t),
    )
}

/// Standard bias-corrected Adam.
pub fn adam_step(state: &mut AdamState, params: &mut [f64], grads: &[f64]) -> Result<()> {
    check_len("adam_step params", state.len(), params.len())?;
    check_len("adam_step grads", state.len(), grads.len())?;
    state.t += 1;
    let (bc1, bc2) = bias_corrections(state);
    let c = state.config;
    for i in 0..params.len() {
        adam_coord(
            &c,
            bc1,
            bc2,
            &mut params[i],
            &mut state.m[i],
            &mut state.v[i],
            grads[i],
        );
    }
    Ok(())
}

/// `mask[i] = grads[i] != 0`.
pub fn nonzero_mask(grads: &[f64]) -> Vec<bool> {
    grads.iter().map(|&g| g != 0.0).collect()
}

/// Masked Adam. The global step counter advances on every call, even when
/// the mask is empty.
pub fn madam_step(
    state: &mut AdamState,
    params: &mut [f64],
    grads: &[f64],
    mask: &[bool],
) -> Result<()> {
    check_len("madam_step params", state.len(), params.len())?;
    check_len("madam_step grads", state.len(), grads.len())?;
    check_len("madam_step mask", state.len(), mask.len())?;
    state.t += 1;
    let (bc1, bc2) = bias_corrections(state);
    let c = state.config;
    for i in 0..params.len() {
        if mask[i] {
            adam_coord(
                &c,
                bc1,
                bc2,
                &mut params[i],
                &mut state.m[i],
                &mut state.v[i],
                grads[i],
            );
        }
    }
    Ok(())
}
