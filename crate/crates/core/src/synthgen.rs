//! Seeded synthetic benchmark: labelled base embeddings plus K distorted teachers
//! with complementary per-class expertise.
//!
//! Noise levels are expressed as expected noise norms: a sigma of `s` adds
//! per-coordinate Gaussian noise with standard deviation `s / sqrt(teacher_dim)`.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{self, Matrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub classes: usize,
    pub items_per_class: usize,
    pub base_dim: usize,
    pub teacher_dim: usize,
    #[serde(rename = "K")]
    pub teachers: usize,
    /// Teacher noise on classes outside its expertise.
    pub noise_sigma: f64,
    /// Teacher noise on its own round-robin class subset.
    pub expert_noise_sigma: f64,
    pub anisotropy_log_range: f64,
    /// Item-level variation shared by every view of an item.
    pub item_noise_sigma: f64,
    /// Noise seen only by the base (student input) view.
    pub base_noise_sigma: f64,
    /// Teacher k is offset by `mean_shift * k / (K-1)` times its rms norm.
    pub mean_shift: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            classes: 200,
            items_per_class: 20,
            base_dim: 64,
            teacher_dim: 64,
            teachers: 3,
            noise_sigma: 3.0,
            expert_noise_sigma: 1.0,
            anisotropy_log_range: 1.5,
            item_noise_sigma: 0.5,
            base_noise_sigma: 1.25,
            mean_shift: 0.5,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::BadConfig(msg));
        if self.classes < 2 {
            return bad(format!("classes must be >= 2, got {}", self.classes));
        }
        if self.items_per_class < 2 {
            return bad(format!("items_per_class must be >= 2, got {}", self.items_per_class));
        }
        if self.teacher_dim < 2 || self.base_dim < 2 {
            return bad(format!(
                "dimensions must be >= 2, got base_dim={} teacher_dim={}",
                self.base_dim, self.teacher_dim
            ));
        }
        if self.teachers == 0 {
            return bad("K must be >= 1".into());
        }
        let sigmas = [
            ("noise_sigma", self.noise_sigma),
            ("expert_noise_sigma", self.expert_noise_sigma),
            ("anisotropy_log_range", self.anisotropy_log_range),
            ("item_noise_sigma", self.item_noise_sigma),
            ("base_noise_sigma", self.base_noise_sigma),
            ("mean_shift", self.mean_shift),
        ];
        for (name, v) in sigmas {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        if self.expert_noise_sigma > self.noise_sigma {
            return bad(format!(
                "expert_noise_sigma ({}) must not exceed noise_sigma ({})",
                self.expert_noise_sigma, self.noise_sigma
            ));
        }
        Ok(())
    }

    pub fn rows(&self) -> usize {
        self.classes * self.items_per_class
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub base: Matrix,
    pub labels: Vec<usize>,
    pub teachers: Vec<Matrix>,
}

fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

fn determinant_sign(m: &Matrix) -> f64 {
    let n = m.rows();
    let mut a = m.clone();
    let mut sign = 1.0;
    for k in 0..n {
        let p = (k..n)
            .max_by(|&i, &j| a.get(i, k).abs().total_cmp(&a.get(j, k).abs()))
            .unwrap();
        if a.get(p, k) == 0.0 {
            return 0.0;
        }
        if p != k {
            for j in 0..n {
                let t = a.get(k, j);
                a.set(k, j, a.get(p, j));
                a.set(p, j, t);
            }
            sign = -sign;
        }
        if a.get(k, k) < 0.0 {
            sign = -sign;
        }
        for i in k + 1..n {
            let f = a.get(i, k) / a.get(k, k);
            for j in k..n {
                a.set(i, j, a.get(i, j) - f * a.get(k, j));
            }
        }
    }
    sign
}

/// Haar-like random rotation: Gram–Schmidt QR of a Gaussian matrix with a
/// positive R diagonal, last column flipped if needed so that det = +1.
pub fn random_rotation(dim: usize, seed: u64) -> Result<Matrix> {
    if dim < 2 {
        return Err(Error::BadDimension(dim));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = gaussian(dim, dim, &mut rng);
    let det_sign = determinant_sign(&g);

    // Columns of g as rows of `cols`; orthonormalized twice for stability.
    let mut cols = g.transpose();
    for k in 0..dim {
        for _ in 0..2 {
            for p in 0..k {
                let proj = tensor::dot(cols.row(p), cols.row(k));
                let (head, tail) = cols.as_mut_slice().split_at_mut(k * dim);
                let q = &head[p * dim..(p + 1) * dim];
                for (v, qv) in tail[..dim].iter_mut().zip(q) {
                    *v -= proj * qv;
                }
            }
        }
        let n = tensor::norm(cols.row(k));
        for v in cols.row_mut(k) {
            *v /= n;
        }
    }
    if det_sign < 0.0 {
        for v in cols.row_mut(dim - 1) {
            *v = -*v;
        }
    }
    Ok(cols.transpose())
}

/// Rows `z = R diag(exp(u)) v` for an output block of the rotation.
fn anisotropic_map(
    v: &Matrix,
    out_dim: usize,
    log_range: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Matrix> {
    let d = v.cols();
    let gains: Vec<f64> = (0..d)
        .map(|_| {
            if log_range > 0.0 {
                rng.random_range(-log_range..=log_range).exp()
            } else {
                1.0
            }
        })
        .collect();
    let rot = random_rotation(d.max(out_dim), rng.next_u64())?;
    let block = Matrix::from_fn(out_dim, d, |i, j| rot.get(i, j) * gains[j]);
    tensor::gemm_nt(v, &block)
}

fn add_noise(v: &Matrix, sigma_of_row: impl Fn(usize) -> f64, rng: &mut ChaCha8Rng) -> Matrix {
    let scale = 1.0 / (v.cols() as f64).sqrt();
    let mut out = v.clone();
    for i in 0..out.rows() {
        let s = sigma_of_row(i) * scale;
        for x in out.row_mut(i) {
            let g: f64 = StandardNormal.sample(rng);
            *x += s * g;
        }
    }
    out
}

pub fn generate(config: &SynthConfig) -> Result<SynthData> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let d = config.teacher_dim;
    let k_count = config.teachers;

    let prototypes = tensor::l2_normalize_rows(&gaussian(config.classes, d, &mut rng))?;
    let labels: Vec<usize> = (0..config.classes)
        .flat_map(|c| std::iter::repeat_n(c, config.items_per_class))
        .collect();
    let latent = add_noise(
        &prototypes.select_rows(&labels),
        |_| config.item_noise_sigma,
        &mut rng,
    );

    let mut teachers = Vec::with_capacity(k_count);
    for k in 0..k_count {
        let noisy = add_noise(
            &latent,
            |i| {
                if labels[i] % k_count == k {
                    config.expert_noise_sigma
                } else {
                    config.noise_sigma
                }
            },
            &mut rng,
        );
        let mut z = anisotropic_map(&noisy, d, config.anisotropy_log_range, &mut rng)?;
        if config.mean_shift > 0.0 && k_count > 1 && k > 0 {
            let dir = tensor::l2_normalize_rows(&gaussian(1, d, &mut rng))?;
            let rms = (z.as_slice().iter().map(|v| v * v).sum::<f64>() / z.rows() as f64).sqrt();
            let scale = config.mean_shift * k as f64 / (k_count - 1) as f64 * rms;
            for i in 0..z.rows() {
                for (x, u) in z.row_mut(i).iter_mut().zip(dir.row(0)) {
                    *x += scale * u;
                }
            }
        }
        teachers.push(tensor::l2_normalize_rows(&z)?);
    }

    let base_view = add_noise(&latent, |_| config.base_noise_sigma, &mut rng);
    let base = tensor::l2_normalize_rows(&anisotropic_map(
        &base_view,
        config.base_dim,
        config.anisotropy_log_range,
        &mut rng,
    )?)?;

    Ok(SynthData {
        base,
        labels,
        teachers,
    })
}
