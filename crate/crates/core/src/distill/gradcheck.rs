use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;
use crate::fusion;
use crate::tensor::{self, Matrix};

use super::{objective, Batch, LossKind, StudentHead, TrainConfig};

pub const GRADCHECK_TOL: f64 = 1e-5;

const STEP: f64 = 1e-5;
const PAIRS: usize = 4;
const DIM: usize = 8;
const TEACHERS: usize = 2;
/// Denominator floor for the relative error, so entries that are zero up to
/// rounding do not dominate.
const REL_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub loss_kind: LossKind,
    pub max_rel_err: f64,
    pub points: usize,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < GRADCHECK_TOL
    }
}

fn random_point(seed: u64) -> Result<(StudentHead, Batch)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gauss = |r: usize, c: usize| Matrix::from_fn(r, c, |_, _| StandardNormal.sample(&mut rng));
    let xb = gauss(PAIRS, DIM);
    let yb = gauss(PAIRS, DIM);
    let mut unit = || tensor::l2_normalize_rows(&gauss(PAIRS, DIM));
    let xt = (0..TEACHERS).map(|_| unit()).collect::<Result<Vec<_>>>()?;
    let yt = (0..TEACHERS).map(|_| unit()).collect::<Result<Vec<_>>>()?;
    let head = StudentHead::init(DIM, DIM, seed ^ 0x5eed)?;
    Ok((head, Batch::new(xb, yb, xt, yt)?))
}

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Central-difference check of one loss at `points` random heads and batches.
///
/// `corrupt` perturbs the analytic gradient; used as a negative control.
pub fn gradcheck(
    kind: LossKind,
    config: &TrainConfig,
    points: usize,
    seed: u64,
    corrupt: bool,
) -> Result<GradcheckReport> {
    let cfg = TrainConfig {
        loss_kind: kind,
        ..config.clone()
    };
    let mut worst = 0.0_f64;
    for p in 0..points {
        let (head, batch) = random_point(seed.wrapping_add(p as u64))?;
        let target = match kind {
            LossKind::Kl => Some(fusion::fuse_prob_with_mode(
                cfg.strategy,
                cfg.rand_mode,
                &batch.teacher_similarities()?,
                cfg.tau_t,
            )?),
            _ => None,
        };
        let eval = |h: &StudentHead| objective(h, &batch, target.as_ref(), &cfg);
        let (_, mut grads) = eval(&head)?;
        if corrupt {
            let g = grads.w.get(0, 0);
            grads.w.set(0, 0, g + 1e-3 * (1.0 + g.abs()));
        }

        let n_w = head.w.as_slice().len();
        for idx in 0..n_w + head.b.len() {
            let shifted = |delta: f64| -> Result<f64> {
                let mut h = head.clone();
                if idx < n_w {
                    h.w.as_mut_slice()[idx] += delta;
                } else {
                    h.b[idx - n_w] += delta;
                }
                Ok(eval(&h)?.0)
            };
            let numeric = (shifted(STEP)? - shifted(-STEP)?) / (2.0 * STEP);
            let analytic = if idx < n_w {
                grads.w.as_slice()[idx]
            } else {
                grads.b[idx - n_w]
            };
            worst = worst.max(relative_error(analytic, numeric));
        }
    }
    Ok(GradcheckReport {
        loss_kind: kind,
        max_rel_err: worst,
        points,
    })
}

pub fn gradcheck_all(
    config: &TrainConfig,
    points: usize,
    seed: u64,
    corrupt: bool,
) -> Result<Vec<GradcheckReport>> {
    LossKind::ALL
        .iter()
        .map(|&k| gradcheck(k, config, points, seed, corrupt))
        .collect()
}
