use simdistill::config::ExperimentConfig;
use simdistill::distill::{self, History, LossKind, StudentHead};
use simdistill::experiment::{class_split, fit_transforms, Part};
use simdistill::io;
use simdistill::similarity::{ks_distance_to_theory, ks_two_sample, pairwise_angle_sample};
use simdistill::synthgen;
use simdistill::whitening::{self, WhiteningTransform};

const WINDOW: usize = 50;

fn reference_train_part() -> (ExperimentConfig, Part, Vec<WhiteningTransform>) {
    let cfg = ExperimentConfig::default();
    let data = synthgen::generate(&cfg.synth).unwrap();
    let split = class_split(&data.labels, cfg.eval.holdout_fraction).unwrap();
    let train = Part::select(&data, &split.train);
    let tr = fit_transforms(&train.teachers, cfg.n_c(), cfg.whitening.eps_rel, true).unwrap();
    (cfg, train, tr)
}

fn train(cfg: &ExperimentConfig, part: &Part, tr: &[WhiteningTransform], kind: LossKind) -> (StudentHead, History) {
    let mut tc = cfg.train_config();
    tc.loss_kind = kind;
    distill::train(&tc, &part.base, &part.labels, &part.teachers, tr).unwrap()
}

/// Mean and standard error of each non-overlapping window.
fn window_stats(h: &History) -> Vec<(f64, f64)> {
    h.steps
        .chunks_exact(WINDOW)
        .map(|c| {
            let n = c.len() as f64;
            let mean = c.iter().map(|r| r.loss).sum::<f64>() / n;
            let var = c.iter().map(|r| (r.loss - mean).powi(2)).sum::<f64>() / (n - 1.0);
            (mean, (var / n).sqrt())
        })
        .collect()
}

#[test]
fn smoothed_loss_does_not_increase_beyond_batch_noise() {
    let (cfg, part, tr) = reference_train_part();
    for kind in LossKind::ALL {
        let (_, h) = train(&cfg, &part, &tr, kind);
        let stats = window_stats(&h);
        let means = h.windowed_loss(WINDOW);
        assert_eq!(means.len(), stats.len());
        for (i, pair) in stats.windows(2).enumerate() {
            let ((a, sa), (b, sb)) = (pair[0], pair[1]);
            assert!((means[i] - a).abs() < 1e-12);
            let tol = 3.0 * (sa * sa + sb * sb).sqrt();
            assert!(b <= a + tol, "{kind}: window {} rose {a} -> {b} (tol {tol})", i + 1);
        }
        let (first, s0) = stats[0];
        let (last, s1) = stats[stats.len() - 1];
        assert!(first - last > 10.0 * (s0 * s0 + s1 * s1).sqrt(), "{kind}: {first} -> {last}");
    }
}

#[test]
fn max_min_targets_dominate_every_batch() {
    let (cfg, part, tr) = reference_train_part();
    let (_, h) = train(&cfg, &part, &tr, LossKind::Kl);
    assert_eq!(h.mrr.len(), cfg.train.steps);
    for (step, r) in h.mrr.iter().enumerate() {
        for (k, &t) in r.teachers.iter().enumerate() {
            assert!(r.fused >= t, "step {step}: fused {} < teacher {k} {t}", r.fused);
        }
    }
}

#[test]
fn whitening_aligns_teacher_angle_distributions() {
    let cfg = ExperimentConfig::default();
    let data = synthgen::generate(&cfg.synth).unwrap();
    let mut white = Vec::new();
    let mut raw = Vec::new();
    for t in &data.teachers {
        let w = whitening::fit_normalized(t, 64, 1e-6).unwrap();
        let v = whitening::whiten_pipeline(&w, t).unwrap();
        white.push(pairwise_angle_sample(&v, 100_000, 1).unwrap());
        raw.push(pairwise_angle_sample(t, 100_000, 1).unwrap());
        assert!(ks_distance_to_theory(white.last().unwrap(), 64).unwrap() < 0.01);
    }
    for i in 0..white.len() {
        for j in i + 1..white.len() {
            assert!(ks_two_sample(&white[i], &white[j]).unwrap() < 0.02);
            assert!(ks_two_sample(&raw[i], &raw[j]).unwrap() > 0.1);
        }
    }
}

#[test]
fn trained_artifacts_survive_files() {
    let mut cfg = ExperimentConfig::default();
    cfg.synth.classes = 50;
    cfg.synth.items_per_class = 5;
    cfg.train.steps = 40;
    cfg.train.batch_pairs = 16;
    let data = synthgen::generate(&cfg.synth).unwrap();
    let tr = fit_transforms(&data.teachers, 32, 1e-6, true).unwrap();
    let tc = cfg.train_config();
    let (head, hist) = distill::train(&tc, &data.base, &data.labels, &data.teachers, &tr).unwrap();
    let (_, again) = distill::train(&tc, &data.base, &data.labels, &data.teachers, &tr).unwrap();
    assert_eq!(hist.to_tsv(), again.to_tsv());
    assert_eq!(head.n_s(), 32);

    let dir = tempfile::tempdir().unwrap();
    let sp = dir.path().join("s.stu");
    io::write_student(&sp, &head).unwrap();
    assert_eq!(io::read_student(&sp).unwrap(), head);
    let wp = dir.path().join("t.wht");
    io::write_transform(&wp, &tr[0]).unwrap();
    assert_eq!(io::read_transform(&wp).unwrap(), tr[0]);
    let lp = dir.path().join("labels.csv");
    io::write_labels(&lp, &data.labels).unwrap();
    assert_eq!(io::read_labels(&lp).unwrap(), data.labels);
}
