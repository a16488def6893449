use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::tensor::Matrix;

use super::{Gradients, StudentHead};

/// Cosine annealing from `lr0` at step 0 to `lr_min` at `total`.
pub fn cosine_lr(step: usize, total: usize, lr0: f64, lr_min: f64) -> Result<f64> {
    if total == 0 || step > total {
        return Err(Error::BadSchedule { step, total });
    }
    if step == 0 {
        return Ok(lr0);
    }
    if step == total {
        return Ok(lr_min);
    }
    let phase = PI * step as f64 / total as f64;
    Ok(lr_min + 0.5 * (lr0 - lr_min) * (1.0 + phase.cos()))
}

/// Adam with bias correction over a student head's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m_w: Matrix,
    v_w: Matrix,
    m_b: Vec<f64>,
    v_b: Vec<f64>,
}

impl Adam {
    pub fn new(head: &StudentHead, beta1: f64, beta2: f64, eps: f64) -> Self {
        let (r, c) = head.w.shape();
        Self {
            beta1,
            beta2,
            eps,
            t: 0,
            m_w: Matrix::zeros(r, c),
            v_w: Matrix::zeros(r, c),
            m_b: vec![0.0; r],
            v_b: vec![0.0; r],
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, head: &mut StudentHead, grads: &Gradients, lr: f64) -> Result<()> {
        if grads.w.shape() != head.w.shape()
            || grads.b.len() != head.b.len()
            || self.m_w.shape() != head.w.shape()
        {
            return Err(Error::ShapeMismatch(format!(
                "optimizer state {:?}, head {:?}, gradient {:?}",
                self.m_w.shape(),
                head.w.shape(),
                grads.w.shape()
            )));
        }
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let update = |p: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        };
        for (((p, m), v), g) in head
            .w
            .as_mut_slice()
            .iter_mut()
            .zip(self.m_w.as_mut_slice())
            .zip(self.v_w.as_mut_slice())
            .zip(grads.w.as_slice())
        {
            update(p, m, v, *g);
        }
        for (((p, m), v), g) in head
            .b
            .iter_mut()
            .zip(&mut self.m_b)
            .zip(&mut self.v_b)
            .zip(&grads.b)
        {
            update(p, m, v, *g);
        }
        Ok(())
    }
}
