use std::collections::BTreeMap;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::eval;
use crate::fusion;
use crate::similarity::{self, format_significant};
use crate::tensor::Matrix;
use crate::whitening::{self, WhiteningTransform};

use super::{objective, Adam, Batch, LossKind, StudentHead, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
}

/// Per-batch MRR of the fused target and of each teacher.
#[derive(Debug, Clone, PartialEq)]
pub struct MrrRecord {
    pub fused: f64,
    pub teachers: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    pub steps: Vec<StepRecord>,
    pub mrr: Vec<MrrRecord>,
}

impl History {
    /// `step\tlr\tloss` rows.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("step\tlr\tloss\n");
        for r in &self.steps {
            out.push_str(&format!(
                "{}\t{}\t{}\n",
                r.step,
                format_significant(r.lr, 12),
                format_significant(r.loss, 12)
            ));
        }
        out
    }

    /// Cumulative-average MRR per step: `step\tfused\tteacher_0…`.
    pub fn mrr_tsv(&self) -> Result<String> {
        let k = self.mrr.first().map_or(0, |r| r.teachers.len());
        let mut out = String::from("step\tfused");
        for t in 0..k {
            out.push_str(&format!("\tteacher_{t}"));
        }
        out.push('\n');
        let fused = eval::cumulative_mean(&self.mrr.iter().map(|r| r.fused).collect::<Vec<_>>())?;
        let per_teacher = (0..k)
            .map(|t| eval::cumulative_mean(&self.mrr.iter().map(|r| r.teachers[t]).collect::<Vec<_>>()))
            .collect::<Result<Vec<_>>>()?;
        for (s, f) in fused.iter().enumerate() {
            out.push_str(&format!("{s}\t{}", format_significant(*f, 9)));
            for col in &per_teacher {
                out.push_str(&format!("\t{}", format_significant(col[s], 9)));
            }
            out.push('\n');
        }
        Ok(out)
    }

    /// Means of consecutive non-overlapping windows of the loss.
    pub fn windowed_loss(&self, window: usize) -> Vec<f64> {
        self.steps
            .chunks_exact(window.max(1))
            .map(|c| c.iter().map(|r| r.loss).sum::<f64>() / c.len() as f64)
            .collect()
    }
}

/// N distinct groups, then two distinct items from each.
pub fn sample_pairs(groups: &[Vec<usize>], n: usize, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    let chosen = index::sample(rng, groups.len(), n);
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for g in chosen.iter() {
        let items = &groups[g];
        let a = rng.random_range(0..items.len());
        let mut b = rng.random_range(0..items.len() - 1);
        if b >= a {
            b += 1;
        }
        xs.push(items[a]);
        ys.push(items[b]);
    }
    (xs, ys)
}

/// Row indices grouped by label, ascending label order; groups with fewer than two rows are dropped.
pub fn label_groups(labels: &[usize]) -> Vec<Vec<usize>> {
    let mut by_label: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_label.entry(l).or_default().push(i);
    }
    by_label.into_values().filter(|g| g.len() >= 2).collect()
}

/// Trains a student head on `base` against whitened, fused teacher similarities.
pub fn train(
    config: &TrainConfig,
    base: &Matrix,
    labels: &[usize],
    teacher_sets: &[Matrix],
    transforms: &[WhiteningTransform],
) -> Result<(StudentHead, History)> {
    config.validate()?;
    if teacher_sets.len() != transforms.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} teacher sets, {} transforms",
            teacher_sets.len(),
            transforms.len()
        )));
    }
    if teacher_sets.is_empty() && config.loss_kind != LossKind::Cl {
        return Err(Error::EmptyTeacherList);
    }
    if labels.len() != base.rows() {
        return Err(Error::ShapeMismatch(format!(
            "{} labels for {} base rows",
            labels.len(),
            base.rows()
        )));
    }
    for t in teacher_sets {
        if t.rows() != base.rows() {
            return Err(Error::ShapeMismatch(format!(
                "teacher has {} rows, base has {}",
                t.rows(),
                base.rows()
            )));
        }
    }
    let n_c = transforms.first().map(|t| t.output_dim());
    for t in transforms {
        if Some(t.output_dim()) != n_c {
            return Err(Error::DimMismatch {
                expected: n_c.unwrap_or(0),
                got: t.output_dim(),
            });
        }
    }

    let views = teacher_sets
        .iter()
        .zip(transforms)
        .map(|(x, t)| whitening::whiten_pipeline(t, x))
        .collect::<Result<Vec<_>>>()?;
    let groups = label_groups(labels);
    if groups.len() < config.batch_pairs {
        return Err(Error::InsufficientPairs {
            needed: config.batch_pairs,
            available: groups.len(),
        });
    }

    let n_s = config.student_dim.or(n_c).unwrap_or(base.cols());
    let mut head = StudentHead::init(n_s, base.cols(), config.seed)?;
    let mut opt = Adam::new(&head, config.adam_beta1, config.adam_beta2, config.adam_eps);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut history = History::default();

    for step in 0..config.steps {
        let lr = super::cosine_lr(step, config.steps, config.lr0, config.lr_min)?;
        let (xs, ys) = sample_pairs(&groups, config.batch_pairs, &mut rng);
        let batch = Batch::new(
            base.select_rows(&xs),
            base.select_rows(&ys),
            views.iter().map(|v| v.select_rows(&xs)).collect(),
            views.iter().map(|v| v.select_rows(&ys)).collect(),
        )?;

        let mut target = None;
        if batch.teachers() > 0 {
            let sims = batch.teacher_similarities()?;
            let fused = fusion::fuse_with_mode(
                config.strategy.for_step(step as u64),
                config.rand_mode,
                &sims,
            )?;
            history.mrr.push(MrrRecord {
                fused: eval::mrr(fused.matrix())?,
                teachers: sims.iter().map(|s| eval::mrr(s.matrix())).collect::<Result<_>>()?,
            });
            if config.loss_kind == LossKind::Kl {
                target = Some(similarity::row_softmax(&fused, config.tau_t)?);
            }
        }

        let (loss, grads) = objective(&head, &batch, target.as_ref(), config)?;
        if !loss.is_finite() || !grads.w.all_finite() || grads.b.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteLoss(step));
        }
        opt.step(&mut head, &grads, lr)?;
        history.steps.push(StepRecord { step, lr, loss });
    }
    Ok((head, history))
}
