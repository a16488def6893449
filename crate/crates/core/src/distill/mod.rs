//! Relational distillation of fused teacher similarities into a linear student head.

mod gradcheck;
mod loss;
mod optim;
mod train;

pub use gradcheck::{gradcheck, gradcheck_all, GradcheckReport, GRADCHECK_TOL};
pub use loss::{
    cl_loss_and_grad, ed_loss_and_grad, kl_loss, loss_and_grad, objective, Gradients,
};
pub use optim::{cosine_lr, Adam};
pub use train::{label_groups, sample_pairs, train, History, MrrRecord, StepRecord};

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{FusionStrategy, RandMode};
use crate::tensor::{self, Matrix};

/// Linear projection plus bias, followed by row L2-normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct StudentHead {
    pub w: Matrix,
    pub b: Vec<f64>,
}

impl StudentHead {
    pub fn new(w: Matrix, b: Vec<f64>) -> Result<Self> {
        if b.len() != w.rows() {
            return Err(Error::ShapeMismatch(format!(
                "bias has {} entries for {} outputs",
                b.len(),
                w.rows()
            )));
        }
        if w.rows() < 2 {
            return Err(Error::BadConfig(format!("student dim must be >= 2, got {}", w.rows())));
        }
        if let Some(i) = b.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self { w, b })
    }

    /// Entries uniform in `[-1/sqrt(n_base), 1/sqrt(n_base)]`.
    pub fn init(n_s: usize, n_base: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / (n_base as f64).sqrt();
        let w = Matrix::from_fn(n_s, n_base, |_, _| rng.random_range(-bound..=bound));
        let b = (0..n_s).map(|_| rng.random_range(-bound..=bound)).collect();
        Self::new(w, b)
    }

    pub fn n_s(&self) -> usize {
        self.w.rows()
    }

    pub fn n_base(&self) -> usize {
        self.w.cols()
    }

    /// Rows `base · Wᵀ + b` before normalization.
    pub fn project(&self, base: &Matrix) -> Result<Matrix> {
        if base.cols() != self.n_base() {
            return Err(Error::DimMismatch {
                expected: self.n_base(),
                got: base.cols(),
            });
        }
        let mut u = tensor::gemm_nt(base, &self.w)?;
        for i in 0..u.rows() {
            for (v, b) in u.row_mut(i).iter_mut().zip(&self.b) {
                *v += b;
            }
        }
        Ok(u)
    }
}

pub fn student_forward(head: &StudentHead, base: &Matrix) -> Result<Matrix> {
    tensor::l2_normalize_rows(&head.project(base)?)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    #[default]
    Kl,
    Ed,
    Cl,
}

impl LossKind {
    pub const ALL: [LossKind; 3] = [LossKind::Kl, LossKind::Ed, LossKind::Cl];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Kl => "kl",
            Self::Ed => "ed",
            Self::Cl => "cl",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kl" => Ok(Self::Kl),
            "ed" => Ok(Self::Ed),
            "cl" => Ok(Self::Cl),
            other => Err(Error::BadConfig(format!("unknown loss `{other}`"))),
        }
    }
}

/// `StudentFirst` is KL(P‖Q) with P the student distribution.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KlDirection {
    #[default]
    StudentFirst,
    TeacherFirst,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub tau_s: f64,
    pub tau_t: f64,
    pub lr0: f64,
    pub lr_min: f64,
    pub weight_decay: f64,
    pub steps: usize,
    pub batch_pairs: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub strategy: FusionStrategy,
    pub rand_mode: RandMode,
    pub loss_kind: LossKind,
    pub kl_direction: KlDirection,
    /// Output dimension; defaults to the teachers' n_c.
    pub student_dim: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            tau_s: 0.05,
            tau_t: 0.05,
            lr0: 1e-3,
            lr_min: 0.0,
            weight_decay: 1e-6,
            steps: 1000,
            batch_pairs: 64,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            strategy: FusionStrategy::MaxMin,
            rand_mode: RandMode::PerElement,
            loss_kind: LossKind::Kl,
            kl_direction: KlDirection::StudentFirst,
            student_dim: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::BadConfig(m));
        for (name, t) in [("tau_s", self.tau_s), ("tau_t", self.tau_t)] {
            if !(t > 0.0 && t.is_finite()) {
                return bad(format!("{name} must be > 0, got {t}"));
            }
        }
        if !(self.lr_min >= 0.0 && self.lr0 > self.lr_min && self.lr0.is_finite()) {
            return bad(format!(
                "need lr0 > lr_min >= 0, got lr0={} lr_min={}",
                self.lr0, self.lr_min
            ));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay must be >= 0, got {}", self.weight_decay));
        }
        if self.batch_pairs < 2 {
            return bad(format!("batch_pairs must be >= 2, got {}", self.batch_pairs));
        }
        if self.steps == 0 {
            return bad("steps must be >= 1".into());
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} must be in [0, 1), got {b}"));
            }
        }
        if !(self.adam_eps > 0.0) {
            return bad(format!("adam_eps must be > 0, got {}", self.adam_eps));
        }
        if matches!(self.student_dim, Some(d) if d < 2) {
            return bad("student_dim must be >= 2".into());
        }
        Ok(())
    }
}

/// N positive pairs: student inputs and every teacher's whitened views, row-aligned.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub x_base: Matrix,
    pub y_base: Matrix,
    pub x_teachers: Vec<Matrix>,
    pub y_teachers: Vec<Matrix>,
}

impl Batch {
    pub fn new(
        x_base: Matrix,
        y_base: Matrix,
        x_teachers: Vec<Matrix>,
        y_teachers: Vec<Matrix>,
    ) -> Result<Self> {
        let n = x_base.rows();
        if y_base.shape() != x_base.shape() {
            return Err(Error::ShapeMismatch(format!(
                "base views {:?} vs {:?}",
                x_base.shape(),
                y_base.shape()
            )));
        }
        if x_teachers.len() != y_teachers.len() {
            return Err(Error::ShapeMismatch("teacher view counts differ".into()));
        }
        for (tx, ty) in x_teachers.iter().zip(&y_teachers) {
            if tx.rows() != n || tx.shape() != ty.shape() {
                return Err(Error::ShapeMismatch(format!(
                    "teacher views {:?}/{:?} for {n} pairs",
                    tx.shape(),
                    ty.shape()
                )));
            }
        }
        Ok(Self {
            x_base,
            y_base,
            x_teachers,
            y_teachers,
        })
    }

    pub fn pairs(&self) -> usize {
        self.x_base.rows()
    }

    pub fn teachers(&self) -> usize {
        self.x_teachers.len()
    }

    /// Cosine similarity matrix of each teacher between the x and y views.
    pub fn teacher_similarities(&self) -> Result<Vec<crate::similarity::SimilarityMatrix>> {
        self.x_teachers
            .iter()
            .zip(&self.y_teachers)
            .map(|(x, y)| crate::similarity::cosine_similarity_matrix(x, y))
            .collect()
    }
}
