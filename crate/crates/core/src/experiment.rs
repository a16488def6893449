//! Held-out-class evaluation and the reference comparison of student variants.

use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{EvalSection, ExperimentConfig};
use crate::distill::{self, label_groups, sample_pairs, History, StudentHead, TrainConfig};
use crate::error::{Error, Result};
use crate::eval::{self, RetrievalTask};
use crate::synthgen::{self, SynthData};
use crate::tensor::{self, Matrix};
use crate::whitening::{self, WhiteningTransform};

/// Row indices of the training classes and of the held-out classes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassSplit {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Holds out the largest `ceil(fraction · classes)` labels, at least one and
/// at most all but one.
pub fn class_split(labels: &[usize], holdout_fraction: f64) -> Result<ClassSplit> {
    let classes: Vec<usize> = labels.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    if classes.len() < 2 {
        return Err(Error::BadConfig(format!("need >= 2 classes to split, got {}", classes.len())));
    }
    if !(holdout_fraction > 0.0 && holdout_fraction < 1.0) {
        return Err(Error::BadConfig(format!("holdout_fraction {holdout_fraction} not in (0, 1)")));
    }
    let held = ((holdout_fraction * classes.len() as f64).ceil() as usize).clamp(1, classes.len() - 1);
    let first_held = classes[classes.len() - held];
    let (test, train) = (0..labels.len()).partition(|&i| labels[i] >= first_held);
    Ok(ClassSplit { train, test })
}

/// One split side of a generated benchmark.
#[derive(Debug, Clone, PartialEq)]
pub struct Part {
    pub base: Matrix,
    pub labels: Vec<usize>,
    pub teachers: Vec<Matrix>,
}

impl Part {
    pub fn select(data: &SynthData, rows: &[usize]) -> Self {
        Self {
            base: data.base.select_rows(rows),
            labels: rows.iter().map(|&i| data.labels[i]).collect(),
            teachers: data.teachers.iter().map(|t| t.select_rows(rows)).collect(),
        }
    }
}

/// Fits PCA whitening on L2-normalized rows, or identity maps when disabled.
pub fn fit_transforms(
    teachers: &[Matrix],
    n_c: usize,
    eps_rel: f64,
    enabled: bool,
) -> Result<Vec<WhiteningTransform>> {
    teachers
        .iter()
        .map(|t| {
            if enabled {
                whitening::fit_normalized(t, n_c, eps_rel)
            } else {
                Ok(WhiteningTransform::identity(t.cols()))
            }
        })
        .collect()
}

/// Metric rows `mAP`, `mAP@k` of a leave-one-out task over `scores`.
pub fn retrieval_metrics(task: &RetrievalTask, scores: &Matrix, ks: &[usize]) -> Result<Vec<(String, f64)>> {
    let mut out = vec![("mAP".to_string(), eval::mean_ap(task, scores)?)];
    for &k in ks {
        out.push((format!("mAP@{k}"), eval::map_at_k(task, scores, k)?));
    }
    Ok(out)
}

/// Mean MRR of the pair-score matrices `scores(xs, ys)` over seeded batches of
/// held-out positive pairs.
fn mrr_over_batches(
    labels: &[usize],
    eval: &EvalSection,
    scores: impl Fn(&[usize], &[usize]) -> Result<Matrix>,
) -> Result<f64> {
    let groups = label_groups(labels);
    let n = eval.mrr_batch_pairs.min(groups.len());
    if n < 2 || eval.mrr_batches == 0 {
        return Err(Error::InsufficientPairs {
            needed: 2,
            available: groups.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(eval.seed);
    let mut total = 0.0;
    for _ in 0..eval.mrr_batches {
        let (xs, ys) = sample_pairs(&groups, n, &mut rng);
        total += eval::mrr(&scores(&xs, &ys)?)?;
    }
    Ok(total / eval.mrr_batches as f64)
}

pub fn batch_mrr(emb: &Matrix, labels: &[usize], eval: &EvalSection) -> Result<f64> {
    mrr_over_batches(labels, eval, |xs, ys| {
        tensor::gemm_nt(&emb.select_rows(xs), &emb.select_rows(ys))
    })
}

/// Full metric table of unit-norm embeddings on a leave-one-out task.
pub fn evaluate_embeddings(emb: &Matrix, labels: &[usize], eval: &EvalSection) -> Result<Vec<(String, f64)>> {
    let task = RetrievalTask::leave_one_out(emb.clone(), labels)?;
    let mut out = retrieval_metrics(&task, &task.cosine_scores()?, &eval.k)?;
    out.push(("MRR".into(), batch_mrr(emb, labels, eval)?));
    Ok(out)
}

/// Ensemble-mean baseline: per-teacher cosine scores averaged, then ranked.
pub fn evaluate_ensemble(views: &[Matrix], labels: &[usize], eval: &EvalSection) -> Result<Vec<(String, f64)>> {
    let first = views.first().ok_or(Error::EmptyTeacherList)?;
    let task = RetrievalTask::leave_one_out(first.clone(), labels)?;
    let pairs: Vec<(Matrix, Matrix)> = views.iter().map(|v| (v.clone(), v.clone())).collect();
    let scores = eval::ensemble_mean_scores(&task, &pairs)?;
    let mut out = retrieval_metrics(&task, &scores, &eval.k)?;

    let mrr = mrr_over_batches(labels, eval, |xs, ys| {
        let mut acc = Matrix::zeros(xs.len(), ys.len());
        for v in views {
            let s = tensor::gemm_nt(&v.select_rows(xs), &v.select_rows(ys))?;
            for (a, b) in acc.as_mut_slice().iter_mut().zip(s.as_slice()) {
                *a += b;
            }
        }
        Ok(acc)
    })?;
    out.push(("MRR".into(), mrr));
    Ok(out)
}

pub fn evaluate_student(head: &StudentHead, part: &Part, eval: &EvalSection) -> Result<Vec<(String, f64)>> {
    evaluate_embeddings(&distill::student_forward(head, &part.base)?, &part.labels, eval)
}

pub fn lookup(metrics: &[(String, f64)], name: &str) -> Option<f64> {
    metrics.iter().find(|(n, _)| n == name).map(|&(_, v)| v)
}

/// A trained student and its held-out metrics.
#[derive(Debug, Clone)]
pub struct VariantResult {
    pub name: String,
    pub head: StudentHead,
    pub history: History,
    pub metrics: Vec<(String, f64)>,
}

impl VariantResult {
    pub fn map(&self) -> f64 {
        lookup(&self.metrics, "mAP").unwrap_or(f64::NAN)
    }
}

/// Everything the reference comparison produces.
#[derive(Debug, Clone)]
pub struct ReferenceReport {
    /// Whitened single-teacher students, one per teacher.
    pub single: Vec<VariantResult>,
    /// Whitened students trained on all teachers with the configured fusion.
    pub multi: VariantResult,
    /// Same as `multi` with whitening replaced by L2 normalization only.
    pub multi_raw: VariantResult,
    /// Held-out metrics of each whitened teacher.
    pub teachers: Vec<Vec<(String, f64)>>,
    /// Held-out metrics of the ensemble-mean of whitened teachers.
    pub ensemble: Vec<(String, f64)>,
}

impl ReferenceReport {
    /// One `variant\tmAP` row per evaluated model, six decimals.
    pub fn summary_tsv(&self) -> String {
        let mut rows: Vec<(String, f64)> = Vec::new();
        for (k, m) in self.teachers.iter().enumerate() {
            rows.push((format!("teacher_{k}"), lookup(m, "mAP").unwrap_or(f64::NAN)));
        }
        rows.push(("ensemble_mean".into(), lookup(&self.ensemble, "mAP").unwrap_or(f64::NAN)));
        for v in self.single.iter().chain([&self.multi, &self.multi_raw]) {
            rows.push((v.name.clone(), v.map()));
        }
        let mut out = String::from("variant\tmAP\n");
        for (n, v) in rows {
            out.push_str(&format!("{n}\t{v:.6}\n"));
        }
        out
    }
}

fn train_variant(
    name: String,
    cfg: &TrainConfig,
    train: &Part,
    test: &Part,
    teachers: &[usize],
    transforms: &[WhiteningTransform],
    eval: &EvalSection,
) -> Result<VariantResult> {
    let sets: Vec<Matrix> = teachers.iter().map(|&k| train.teachers[k].clone()).collect();
    let tr: Vec<WhiteningTransform> = teachers.iter().map(|&k| transforms[k].clone()).collect();
    let (head, history) = distill::train(cfg, &train.base, &train.labels, &sets, &tr)?;
    let metrics = evaluate_student(&head, test, eval)?;
    Ok(VariantResult {
        name,
        head,
        history,
        metrics,
    })
}

/// Generates the benchmark, trains single-teacher, multi-teacher and unwhitened
/// multi-teacher students on the training classes and scores everything on the
/// held-out classes.
pub fn run_reference(cfg: &ExperimentConfig) -> Result<ReferenceReport> {
    cfg.validate()?;
    let data = synthgen::generate(&cfg.synth)?;
    let split = class_split(&data.labels, cfg.eval.holdout_fraction)?;
    let train = Part::select(&data, &split.train);
    let test = Part::select(&data, &split.test);
    let tc = cfg.train_config();
    let k_all: Vec<usize> = (0..data.teachers.len()).collect();

    let white = fit_transforms(&train.teachers, cfg.n_c(), cfg.whitening.eps_rel, true)?;
    let raw = fit_transforms(&train.teachers, cfg.n_c(), cfg.whitening.eps_rel, false)?;

    let views = test
        .teachers
        .iter()
        .zip(&white)
        .map(|(x, t)| whitening::whiten_pipeline(t, x))
        .collect::<Result<Vec<_>>>()?;
    let teachers = views
        .iter()
        .map(|v| evaluate_embeddings(v, &test.labels, &cfg.eval))
        .collect::<Result<Vec<_>>>()?;
    let ensemble = evaluate_ensemble(&views, &test.labels, &cfg.eval)?;

    let single = k_all
        .iter()
        .map(|&k| train_variant(format!("student_teacher_{k}"), &tc, &train, &test, &[k], &white, &cfg.eval))
        .collect::<Result<Vec<_>>>()?;
    let name = tc.strategy.name();
    let multi = train_variant(format!("student_{name}"), &tc, &train, &test, &k_all, &white, &cfg.eval)?;
    let multi_raw = train_variant(format!("student_{name}_unwhitened"), &tc, &train, &test, &k_all, &raw, &cfg.eval)?;

    Ok(ReferenceReport {
        single,
        multi,
        multi_raw,
        teachers,
        ensemble,
    })
}
