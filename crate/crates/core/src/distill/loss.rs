use crate::error::{Error, Result};
use crate::similarity::ProbMatrix;
use crate::tensor::{self, Matrix, ZERO_NORM};

use super::{Batch, KlDirection, LossKind, StudentHead, TrainConfig};

/// Gradients with respect to the head's `W` and `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub w: Matrix,
    pub b: Vec<f64>,
}

struct Forward {
    phi_x: Matrix,
    phi_y: Matrix,
    norm_x: Vec<f64>,
    norm_y: Vec<f64>,
}

fn normalize_with_norms(u: Matrix) -> Result<(Matrix, Vec<f64>)> {
    let mut phi = u;
    let mut norms = Vec::with_capacity(phi.rows());
    for i in 0..phi.rows() {
        let n = tensor::norm(phi.row(i));
        if n <= ZERO_NORM {
            return Err(Error::ZeroRow(i));
        }
        for v in phi.row_mut(i) {
            *v /= n;
        }
        norms.push(n);
    }
    Ok((phi, norms))
}

fn forward(head: &StudentHead, batch: &Batch) -> Result<Forward> {
    let (phi_x, norm_x) = normalize_with_norms(head.project(&batch.x_base)?)?;
    let (phi_y, norm_y) = normalize_with_norms(head.project(&batch.y_base)?)?;
    Ok(Forward {
        phi_x,
        phi_y,
        norm_x,
        norm_y,
    })
}

/// Chain rule from `dL/dφ` through normalization and the affine map.
fn backward(
    head: &StudentHead,
    batch: &Batch,
    fw: &Forward,
    dphi_x: &Matrix,
    dphi_y: &Matrix,
    weight_decay: f64,
) -> Gradients {
    let n_s = head.n_s();
    let n_base = head.n_base();
    let mut gw = head.w.scaled(2.0 * weight_decay);
    let mut gb = vec![0.0; n_s];
    let mut du = vec![0.0; n_s];
    let views = [
        (&fw.phi_x, &fw.norm_x, dphi_x, &batch.x_base),
        (&fw.phi_y, &fw.norm_y, dphi_y, &batch.y_base),
    ];
    for (phi, norms, dphi, base) in views {
        for i in 0..phi.rows() {
            let p = phi.row(i);
            let g = dphi.row(i);
            let pg = tensor::dot(p, g);
            for r in 0..n_s {
                du[r] = (g[r] - p[r] * pg) / norms[i];
                gb[r] += du[r];
            }
            let x = base.row(i);
            for (r, &d) in du.iter().enumerate() {
                let row = &mut gw.as_mut_slice()[r * n_base..(r + 1) * n_base];
                for (w, xv) in row.iter_mut().zip(x) {
                    *w += d * xv;
                }
            }
        }
    }
    Gradients { w: gw, b: gb }
}

fn log_softmax_rows(z: &Matrix) -> Matrix {
    let mut out = z.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        for v in row.iter_mut() {
            *v -= lse;
        }
    }
    out
}

fn decay_term(head: &StudentHead, weight_decay: f64) -> f64 {
    weight_decay * head.w.as_slice().iter().map(|v| v * v).sum::<f64>()
}

/// Shared tail for the softmax-based losses: `dz = dL/d(S/τ)` to parameter gradients.
fn softmax_backward(
    head: &StudentHead,
    batch: &Batch,
    fw: &Forward,
    dz: &Matrix,
    tau_s: f64,
    weight_decay: f64,
) -> Result<Gradients> {
    let ds = dz.scaled(1.0 / tau_s);
    let dphi_x = tensor::gemm(&ds, &fw.phi_y)?;
    let dphi_y = tensor::gemm(&ds.transpose(), &fw.phi_x)?;
    Ok(backward(head, batch, fw, &dphi_x, &dphi_y, weight_decay))
}

fn student_logits(fw: &Forward, tau_s: f64) -> Result<Matrix> {
    if !(tau_s > 0.0) {
        return Err(Error::BadTemperature(tau_s));
    }
    let mut s = tensor::gemm_nt(&fw.phi_x, &fw.phi_y)?;
    for v in s.as_mut_slice() {
        *v = v.clamp(-1.0, 1.0) / tau_s;
    }
    Ok(s)
}

/// `(1/N) Σᵢ KL(pᵢ ‖ qᵢ)` with `0·ln(0/q) = 0`.
pub fn kl_loss(p: &ProbMatrix, q: &ProbMatrix) -> Result<f64> {
    let (pm, qm) = (p.matrix(), q.matrix());
    if pm.shape() != qm.shape() {
        return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", pm.shape(), qm.shape())));
    }
    let mut total = 0.0;
    for i in 0..pm.rows() {
        for j in 0..pm.cols() {
            let (pv, qv) = (pm.get(i, j), qm.get(i, j));
            if qv <= 0.0 {
                return Err(Error::NonPositiveQ(i, j));
            }
            if pv > 0.0 {
                total += pv * (pv / qv).ln();
            }
        }
    }
    Ok(total / pm.rows() as f64)
}

fn check_target(q: &ProbMatrix, n: usize) -> Result<()> {
    let qm = q.matrix();
    if qm.shape() != (n, n) {
        return Err(Error::ShapeMismatch(format!("target is {:?} for {n} pairs", qm.shape())));
    }
    for i in 0..n {
        for j in 0..n {
            if qm.get(i, j) <= 0.0 {
                return Err(Error::NonPositiveQ(i, j));
            }
        }
    }
    Ok(())
}

/// KL distillation loss against a fixed target `q`, plus weight decay.
pub fn loss_and_grad(
    head: &StudentHead,
    batch: &Batch,
    q: &ProbMatrix,
    config: &TrainConfig,
) -> Result<(f64, Gradients)> {
    let n = batch.pairs();
    check_target(q, n)?;
    let fw = forward(head, batch)?;
    let log_p = log_softmax_rows(&student_logits(&fw, config.tau_s)?);
    let inv_n = 1.0 / n as f64;
    let mut dz = Matrix::zeros(n, n);
    let mut loss = 0.0;
    for i in 0..n {
        match config.kl_direction {
            KlDirection::StudentFirst => {
                let mut row_kl = 0.0;
                for j in 0..n {
                    let lp = log_p.get(i, j);
                    let a = lp - q.get(i, j).ln();
                    row_kl += lp.exp() * a;
                    dz.set(i, j, a);
                }
                for j in 0..n {
                    let p = log_p.get(i, j).exp();
                    dz.set(i, j, inv_n * p * (dz.get(i, j) - row_kl));
                }
                loss += row_kl;
            }
            KlDirection::TeacherFirst => {
                for j in 0..n {
                    let (lp, qv) = (log_p.get(i, j), q.get(i, j));
                    loss += qv * (qv.ln() - lp);
                    dz.set(i, j, inv_n * (lp.exp() - qv));
                }
            }
        }
    }
    let grads = softmax_backward(head, batch, &fw, &dz, config.tau_s, config.weight_decay)?;
    Ok((loss * inv_n + decay_term(head, config.weight_decay), grads))
}

/// Contrastive baseline: cross-entropy of student rows against the diagonal.
pub fn cl_loss_and_grad(
    head: &StudentHead,
    batch: &Batch,
    tau_s: f64,
    weight_decay: f64,
) -> Result<(f64, Gradients)> {
    let n = batch.pairs();
    let fw = forward(head, batch)?;
    let log_p = log_softmax_rows(&student_logits(&fw, tau_s)?);
    let inv_n = 1.0 / n as f64;
    let mut dz = Matrix::zeros(n, n);
    let mut loss = 0.0;
    for i in 0..n {
        loss -= log_p.get(i, i);
        for j in 0..n {
            let target = if i == j { 1.0 } else { 0.0 };
            dz.set(i, j, inv_n * (log_p.get(i, j).exp() - target));
        }
    }
    let grads = softmax_backward(head, batch, &fw, &dz, tau_s, weight_decay)?;
    Ok((loss * inv_n + decay_term(head, weight_decay), grads))
}

/// Euclidean baseline: mean squared distance to every teacher's embeddings.
pub fn ed_loss_and_grad(
    head: &StudentHead,
    batch: &Batch,
    weight_decay: f64,
) -> Result<(f64, Gradients)> {
    let k = batch.teachers();
    if k == 0 {
        return Err(Error::EmptyTeacherList);
    }
    let n_c = batch.x_teachers[0].cols();
    if head.n_s() != n_c {
        return Err(Error::DimMismatch {
            expected: n_c,
            got: head.n_s(),
        });
    }
    let n = batch.pairs();
    let fw = forward(head, batch)?;
    let scale = 1.0 / (n * k) as f64;
    let mut loss = 0.0;
    let mut grads_phi = Vec::with_capacity(2);
    for (phi, teachers) in [(&fw.phi_x, &batch.x_teachers), (&fw.phi_y, &batch.y_teachers)] {
        let mut dphi = Matrix::zeros(n, n_c);
        for t in teachers {
            for i in 0..n {
                for (d, (a, b)) in dphi.row_mut(i).iter_mut().zip(phi.row(i).iter().zip(t.row(i))) {
                    let diff = a - b;
                    loss += diff * diff;
                    *d += scale * diff;
                }
            }
        }
        grads_phi.push(dphi);
    }
    let grads = backward(head, batch, &fw, &grads_phi[0], &grads_phi[1], weight_decay);
    Ok((0.5 * scale * loss + decay_term(head, weight_decay), grads))
}

/// Loss selected by `config.loss_kind`; KL needs the fused target.
pub fn objective(
    head: &StudentHead,
    batch: &Batch,
    target: Option<&ProbMatrix>,
    config: &TrainConfig,
) -> Result<(f64, Gradients)> {
    match config.loss_kind {
        LossKind::Kl => {
            let q = target.ok_or_else(|| Error::BadConfig("KL loss needs a target".into()))?;
            loss_and_grad(head, batch, q, config)
        }
        LossKind::Ed => ed_loss_and_grad(head, batch, config.weight_decay),
        LossKind::Cl => cl_loss_and_grad(head, batch, config.tau_s, config.weight_decay),
    }
}
