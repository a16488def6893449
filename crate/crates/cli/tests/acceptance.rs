//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any failure.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use simdistill::config::ExperimentConfig;
use simdistill::distill::cosine_lr;
use simdistill::eval::{self, RetrievalTask};
use simdistill::fusion::{fuse, FusionStrategy};
use simdistill::similarity::{angle_density, cosine_similarity_matrix, integrate, SimilarityMatrix};
use simdistill::synthgen;
use simdistill::tensor::{self, Matrix};
use simdistill::whitening;
use simdistill_cli::parse_ks_footer;

const BIN: &str = env!("CARGO_BIN_EXE_simdistill");

type Outcome = Result<String, String>;

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn run_ok(args: &[&str]) -> Result<Output, String> {
    let out = run(args);
    if out.status.success() {
        Ok(out)
    } else {
        Err(format!(
            "`simdistill {}` exited {:?}: {}",
            args.join(" "),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr).trim()
        ))
    }
}

fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 path")
}

fn read_metric(path: &Path, name: &str) -> Result<f64, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    text.lines()
        .filter_map(|l| l.split_once('\t'))
        .find(|(n, _)| *n == name)
        .and_then(|(_, v)| v.parse().ok())
        .ok_or_else(|| format!("{}: no metric {name}", path.display()))
}

fn within(budget: Duration, start: Instant) -> Result<f64, String> {
    let secs = start.elapsed().as_secs_f64();
    if start.elapsed() < budget {
        Ok(secs)
    } else {
        Err(format!("took {secs:.1}s, budget {}s", budget.as_secs()))
    }
}

struct Workspace {
    _dir: tempfile::TempDir,
    root: PathBuf,
    config: PathBuf,
    data: PathBuf,
}

impl Workspace {
    fn new() -> Self {
        let dir = tempfile::tempdir().expect("temp dir");
        let root = dir.path().to_path_buf();
        let config = root.join("reference.json");
        fs::write(&config, ExperimentConfig::default().to_json()).expect("write config");
        Self {
            data: root.join("data"),
            _dir: dir,
            root,
            config,
        }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    fn gen(&self) -> Result<(), String> {
        if !self.data.join("labels.csv").exists() {
            run_ok(&["gen", "--config", p(&self.config), "--out", p(&self.data)])?;
        }
        Ok(())
    }
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let data = synthgen::generate(&ExperimentConfig::default().synth).map_err(|e| e.to_string())?;
    let mut worst_off = 0.0_f64;
    let mut worst_diag = 0.0_f64;
    for t in &data.teachers {
        let wt = whitening::fit_normalized(t, t.cols(), whitening::DEFAULT_EPS_REL).map_err(|e| e.to_string())?;
        let x = tensor::l2_normalize_rows(t).map_err(|e| e.to_string())?;
        let w = whitening::apply_whitening(&wt, &x).map_err(|e| e.to_string())?;
        let (n, d) = w.shape();
        let mean: Vec<f64> = (0..d).map(|j| (0..n).map(|i| w.get(i, j)).sum::<f64>() / n as f64).collect();
        for a in 0..d {
            for b in a..d {
                let c = (0..n).map(|i| (w.get(i, a) - mean[a]) * (w.get(i, b) - mean[b])).sum::<f64>() / n as f64;
                if a == b {
                    worst_diag = worst_diag.max((c - 1.0).abs());
                } else {
                    worst_off = worst_off.max(c.abs());
                }
            }
        }
    }
    let secs = within(Duration::from_secs(5), start)?;
    let detail = format!(
        "{} teachers of {} rows: max |offdiag| {worst_off:.2e}, max |diag-1| {worst_diag:.2e}, {secs:.2}s",
        data.teachers.len(),
        data.base.rows()
    );
    if worst_off < 1e-4 && worst_diag < 1e-4 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_2(ws: &Workspace) -> Outcome {
    let start = Instant::now();
    ws.gen()?;
    let k = ExperimentConfig::default().synth.teachers;
    let raw: Vec<PathBuf> = (0..k).map(|i| ws.data.join(format!("teacher_{i}.emb"))).collect();
    let mut white = Vec::new();
    for (i, f) in raw.iter().enumerate() {
        let out = ws.path(&format!("white_{i}.emb"));
        run_ok(&[
            "whiten",
            "--input",
            p(f),
            "--n-c",
            "64",
            "--transform",
            p(&ws.path(&format!("white_{i}.wht"))),
            "--output",
            p(&out),
        ])?;
        white.push(out);
    }
    let simdist = |files: &[PathBuf], out: &Path| -> Result<(Vec<Option<f64>>, Vec<Vec<f64>>), String> {
        let mut args = vec!["simdist", "--pairs", "100000", "--bins", "90", "--out", p(out)];
        args.extend(files.iter().map(|f| p(f)));
        run_ok(&args)?;
        let text = fs::read_to_string(out).map_err(|e| e.to_string())?;
        parse_ks_footer(&text).ok_or_else(|| "unparseable KS footer".to_string())
    };
    let (_, before) = simdist(&raw, &ws.path("simdist_raw.tsv"))?;
    let (theory, after) = simdist(&white, &ws.path("simdist_white.tsv"))?;
    let secs = within(Duration::from_secs(30), start)?;

    let theory: Vec<f64> = theory.into_iter().map(|d| d.unwrap_or(f64::INFINITY)).collect();
    let off = |m: &[Vec<f64>]| -> Vec<f64> {
        (0..m.len())
            .flat_map(|i| (i + 1..m.len()).map(move |j| (i, j)))
            .map(|(i, j)| m[i][j])
            .collect()
    };
    let (before, after) = (off(&before), off(&after));
    let max = |v: &[f64]| v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = |v: &[f64]| v.iter().copied().fold(f64::INFINITY, f64::min);
    let detail = format!(
        "KS to theory max {:.4}; teacher pairs after max {:.4}, before min {:.4}; {secs:.1}s",
        max(&theory),
        max(&after),
        min(&before)
    );
    if max(&theory) < 0.01 && max(&after) < 0.02 && min(&before) > 0.1 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_3() -> Outcome {
    let mut worst = 0.0_f64;
    for n in [2, 3, 64, 512] {
        let total = integrate(|t| angle_density(n, t).unwrap(), 0.0, PI, 1e-12);
        worst = worst.max((total - 1.0).abs());
    }
    let half = angle_density(3, FRAC_PI_2).map_err(|e| e.to_string())?;
    let flat = [0.0, 0.3, FRAC_PI_2, 2.0, PI]
        .iter()
        .all(|&t| angle_density(2, t).unwrap() == 1.0 / PI);
    let detail = format!("max |integral-1| {worst:.2e}; f_3(pi/2) = {half}; n=2 constant 1/pi: {flat}");
    if worst < 1e-6 && half == 0.5 && flat {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_4(ws: &Workspace) -> Outcome {
    let out = run(&["gradcheck", "--config", p(&ws.config)]);
    let text = String::from_utf8_lossy(&out.stdout).into_owned();
    let mut errs = Vec::new();
    for line in text.lines().skip(1) {
        let (kind, v) = line.split_once('\t').ok_or("malformed report line")?;
        errs.push((kind.to_string(), v.parse::<f64>().map_err(|e| e.to_string())?));
    }
    let corrupt = run(&["gradcheck", "--config", p(&ws.config), "--corrupt"]).status.code();
    let kinds: Vec<&str> = errs.iter().map(|(k, _)| k.as_str()).collect();
    let detail = format!(
        "exit {:?}; {}; corrupted gradient exit {corrupt:?}",
        out.status.code(),
        errs.iter().map(|(k, v)| format!("{k} {v:.1e}")).collect::<Vec<_>>().join(", ")
    );
    if out.status.code() == Some(0)
        && kinds == ["kl", "ed", "cl"]
        && errs.iter().all(|(_, v)| *v < 1e-5)
        && corrupt == Some(7)
    {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn random_unit(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let g = Matrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng));
    tensor::l2_normalize_rows(&g).expect("gaussian rows are nonzero")
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut violations = 0;
    let mut quantized = 0;
    for trial in 0..1000 {
        let n = rng.random_range(2..=24);
        let dim = rng.random_range(2..=32);
        let anchor = random_unit(&mut rng, n, dim);
        let sims: Vec<SimilarityMatrix> = (0..3)
            .map(|_| {
                let noise: f64 = rng.random_range(0.0..2.0);
                let y = Matrix::from_fn(n, dim, |i, j| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    anchor.get(i, j) + noise * z / (dim as f64).sqrt()
                });
                let y = tensor::l2_normalize_rows(&y).unwrap();
                let mut s = cosine_similarity_matrix(&anchor, &y).unwrap().into_matrix();
                if trial % 2 == 1 {
                    for v in s.as_mut_slice() {
                        *v = (*v * 4.0).round() / 4.0;
                    }
                }
                SimilarityMatrix::new(s).unwrap()
            })
            .collect();
        quantized += trial % 2;
        let fused = fuse(FusionStrategy::MaxMin, &sims).map_err(|e| e.to_string())?;
        let best = sims.iter().map(|s| eval::mrr(s.matrix()).unwrap()).fold(f64::NEG_INFINITY, f64::max);
        if eval::mrr(fused.matrix()).unwrap() < best {
            violations += 1;
        }
    }
    let detail = format!("1000 triples ({quantized} with tied scores): {violations} violations");
    if violations == 0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// AP by definition: mean over relevant items of precision at that item's rank.
fn oracle_ap(scores: &[f64], relevant: &[usize], excluded: Option<usize>) -> f64 {
    let before = |h: usize, g: usize| scores[h] > scores[g] || (scores[h] == scores[g] && h < g);
    let mut total = 0.0;
    for &g in relevant {
        let rank = 1 + (0..scores.len()).filter(|&h| Some(h) != excluded && before(h, g)).count();
        let hits = 1 + relevant.iter().filter(|&&h| before(h, g)).count();
        total += hits as f64 / rank as f64;
    }
    total / relevant.len() as f64
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0_f64;
    for trial in 0..10_000 {
        let queries = rng.random_range(1..=4);
        let gallery = rng.random_range(1..=10);
        let relevant: Vec<Vec<usize>> = (0..queries)
            .map(|_| {
                let mut r: Vec<usize> = (0..gallery).filter(|_| rng.random_bool(0.4)).collect();
                if r.is_empty() {
                    r.push(rng.random_range(0..gallery));
                }
                r
            })
            .collect();
        let task = RetrievalTask::new(random_unit(&mut rng, queries, 4), random_unit(&mut rng, gallery, 4), relevant.clone())
            .map_err(|e| e.to_string())?;
        let mut scores = task.cosine_scores().map_err(|e| e.to_string())?;
        if trial % 3 == 0 {
            for v in scores.as_mut_slice() {
                *v = (*v * 2.0).round();
            }
        }
        let got = eval::mean_ap(&task, &scores).map_err(|e| e.to_string())?;
        let want = (0..queries).map(|q| oracle_ap(scores.row(q), &relevant[q], None)).sum::<f64>() / queries as f64;
        worst = worst.max((got - want).abs());
    }
    let detail = format!("10000 tasks, gallery <= 10: max |diff| {worst:.2e}");
    if worst < 1e-12 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Trains the five students and scores students, teachers and the ensemble
/// through the CLI. Returns (name, mAP) rows.
fn reference_pipeline(ws: &Workspace) -> Result<Vec<(String, f64)>, String> {
    ws.gen()?;
    let raw_cfg = ws.path("unwhitened.json");
    let mut cfg = ExperimentConfig::default();
    cfg.whitening.enabled = false;
    fs::write(&raw_cfg, cfg.to_json()).map_err(|e| e.to_string())?;

    let k = ExperimentConfig::default().synth.teachers;
    let mut variants: Vec<(String, PathBuf, Vec<String>)> = (0..k)
        .map(|i| (format!("student_teacher_{i}"), ws.config.clone(), vec!["--teachers".into(), i.to_string()]))
        .collect();
    variants.push(("student_max-min".into(), ws.config.clone(), vec![]));
    variants.push(("student_max-min_unwhitened".into(), raw_cfg, vec![]));

    let mut rows = Vec::new();
    for (name, cfg, extra) in &variants {
        let out = ws.path(name);
        let mut args = vec!["distill", "--config", p(cfg), "--data", p(&ws.data), "--out", p(&out)];
        args.extend(extra.iter().map(String::as_str));
        run_ok(&args)?;
        let metrics = out.join("metrics.tsv");
        run_ok(&[
            "eval",
            "--config",
            p(&ws.config),
            "--data",
            p(&ws.data),
            "--student",
            p(&out.join("student.stu")),
            "--out",
            p(&metrics),
        ])?;
        rows.push((name.clone(), read_metric(&metrics, "mAP")?));
    }

    let fitted = ws.path("student_max-min");
    let emb: Vec<PathBuf> = (0..k).map(|i| ws.data.join(format!("teacher_{i}.emb"))).collect();
    let wht: Vec<PathBuf> = (0..k).map(|i| fitted.join(format!("teacher_{i}.wht"))).collect();
    for i in 0..k {
        let metrics = ws.path(&format!("teacher_{i}_metrics.tsv"));
        run_ok(&[
            "eval",
            "--config",
            p(&ws.config),
            "--data",
            p(&ws.data),
            "--emb",
            p(&emb[i]),
            "--transform",
            p(&wht[i]),
            "--out",
            p(&metrics),
        ])?;
        rows.push((format!("teacher_{i}"), read_metric(&metrics, "mAP")?));
    }
    let metrics = ws.path("ensemble_metrics.tsv");
    let mut args = vec!["eval", "--config", p(&ws.config), "--data", p(&ws.data), "--ensemble-mean", "--out", p(&metrics)];
    for i in 0..k {
        args.extend(["--emb", p(&emb[i]), "--transform", p(&wht[i])]);
    }
    run_ok(&args)?;
    rows.push(("ensemble_mean".into(), read_metric(&metrics, "mAP")?));
    Ok(rows)
}

fn get(rows: &[(String, f64)], name: &str) -> f64 {
    rows.iter().find(|(n, _)| n == name).map_or(f64::NAN, |r| r.1)
}

fn criterion_7(rows: &Result<Vec<(String, f64)>, String>, secs: f64) -> Outcome {
    let rows = rows.as_ref().map_err(Clone::clone)?;
    let multi = get(rows, "student_max-min");
    let raw = get(rows, "student_max-min_unwhitened");
    let singles: Vec<f64> = rows
        .iter()
        .filter(|(n, _)| n.starts_with("student_teacher_"))
        .map(|r| r.1)
        .collect();
    let best = singles.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let detail = format!(
        "held-out mAP: max-min {multi:.4}, single {}, unwhitened max-min {raw:.4}; pipeline {secs:.1}s",
        singles.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>().join("/")
    );
    if multi > best && multi > raw && secs < 300.0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_8(rows: &Result<Vec<(String, f64)>, String>) -> Outcome {
    let rows = rows.as_ref().map_err(Clone::clone)?;
    let em = get(rows, "ensemble_mean");
    let teachers: Vec<f64> = rows
        .iter()
        .filter(|(n, _)| n.starts_with("teacher_"))
        .map(|r| r.1)
        .collect();
    let best = teachers.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let detail = format!("ensemble-mean mAP {em:.4} vs best whitened teacher {best:.4}");
    if !teachers.is_empty() && em >= best {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .map(|it| {
            it.filter_map(|e| e.ok())
                .filter(|e| e.path().is_file())
                .map(|e| (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap()))
                .collect()
        })
        .unwrap_or_default();
    files.sort();
    files
}

fn criterion_9(ws: &Workspace) -> Outcome {
    ws.gen()?;
    let mut small = ExperimentConfig::default();
    small.synth.classes = 60;
    small.synth.items_per_class = 6;
    small.train.steps = 100;
    small.train.batch_pairs = 32;
    let small_cfg = ws.path("small.json");
    fs::write(&small_cfg, small.to_json()).map_err(|e| e.to_string())?;

    let cfg = p(&ws.config);
    let data = p(&ws.data);
    let t0 = ws.data.join("teacher_0.emb");
    let t1 = ws.data.join("teacher_1.emb");
    let commands: Vec<(&str, Box<dyn Fn(&Path) -> Vec<String> + '_>)> = vec![
        ("gen", Box::new(|o: &Path| vec!["gen".into(), "--config".into(), cfg.into(), "--out".into(), p(o).into()])),
        (
            "whiten",
            Box::new(|o: &Path| {
                ["whiten", "--input", p(&t0), "--n-c", "64", "--transform", p(&o.join("t.wht")), "--output", p(&o.join("w.emb"))]
                    .map(String::from)
                    .to_vec()
            }),
        ),
        (
            "simdist",
            Box::new(|o: &Path| {
                ["simdist", "--pairs", "20000", "--out", p(&o.join("s.tsv")), p(&t0), p(&t1)]
                    .map(String::from)
                    .to_vec()
            }),
        ),
        (
            "distill",
            Box::new(|o: &Path| ["distill", "--config", cfg, "--data", data, "--out", p(o)].map(String::from).to_vec()),
        ),
        (
            "eval",
            Box::new(|o: &Path| {
                let stu = ws.path("student_max-min/student.stu");
                ["eval", "--config", cfg, "--data", data, "--student", p(&stu), "--out", p(&o.join("m.tsv"))]
                    .map(String::from)
                    .to_vec()
            }),
        ),
        (
            "eval --ensemble-mean",
            Box::new(|o: &Path| {
                ["eval", "--config", cfg, "--data", data, "--ensemble-mean", "--emb", p(&t0), "--emb", p(&t1), "--out", p(&o.join("m.tsv"))]
                    .map(String::from)
                    .to_vec()
            }),
        ),
        ("gradcheck", Box::new(|_: &Path| ["gradcheck", "--config", cfg].map(String::from).to_vec())),
        (
            "experiment",
            Box::new(|o: &Path| {
                ["experiment", "--config", p(&small_cfg), "--out", p(&o.join("summary.tsv"))]
                    .map(String::from)
                    .to_vec()
            }),
        ),
    ];

    let mut checked = Vec::new();
    let mut differing = Vec::new();
    for (name, make) in &commands {
        let mut runs = Vec::new();
        for rep in 0..2 {
            let dir = ws.path(&format!("det/{}/{rep}", name.replace(' ', "_")));
            fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
            let args = make(&dir);
            let argv: Vec<&str> = args.iter().map(String::as_str).collect();
            let out = run_ok(&argv)?;
            let stdout = String::from_utf8_lossy(&out.stdout).replace(p(&dir), "<out>");
            runs.push((stdout, snapshot(&dir)));
        }
        let files = runs[0].1.len();
        if runs[0] != runs[1] || (files == 0 && *name != "gradcheck") {
            differing.push(*name);
        }
        checked.push(format!("{name} ({files} files)"));
    }
    let detail = format!("{} commands rerun: {}", checked.len(), checked.join(", "));
    if differing.is_empty() {
        Ok(detail)
    } else {
        Err(format!("outputs differ for {}; {detail}", differing.join(", ")))
    }
}

fn criterion_10() -> Outcome {
    let frames = Matrix::from_rows(&[[0.2, 0.8], [0.4, 0.6]]).unwrap();
    let chamfer = eval::chamfer_similarity(&frames).map_err(|e| e.to_string())?;
    let ties = eval::mrr(&Matrix::from_fn(4, 4, |_, _| 0.5)).map_err(|e| e.to_string())?;
    let (lr0, lr_min) = (1e-3, 1e-5);
    let start = cosine_lr(0, 1000, lr0, lr_min).map_err(|e| e.to_string())?;
    let end = cosine_lr(1000, 1000, lr0, lr_min).map_err(|e| e.to_string())?;
    let mid = cosine_lr(500, 1000, lr0, lr_min).map_err(|e| e.to_string())?;
    let detail = format!("chamfer {chamfer}, all-ties MRR {ties}, lr endpoints {start}/{end}, midpoint {mid}");
    if chamfer == 0.7 && ties == 0.25 && start == lr0 && end == lr_min && (mid - 0.5 * (lr0 + lr_min)).abs() < 1e-18 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn main() {
    let ws = Workspace::new();
    let mut results: Vec<(usize, Outcome)> = Vec::new();
    results.push((1, criterion_1()));
    results.push((2, criterion_2(&ws)));
    results.push((3, criterion_3()));
    results.push((4, criterion_4(&ws)));
    results.push((5, criterion_5()));
    results.push((6, criterion_6()));
    let start = Instant::now();
    let rows = reference_pipeline(&ws);
    let secs = start.elapsed().as_secs_f64();
    results.push((7, criterion_7(&rows, secs)));
    results.push((8, criterion_8(&rows)));
    results.push((9, criterion_9(&ws)));
    results.push((10, criterion_10()));

    let mut failed = 0;
    for (n, r) in &results {
        match r {
            Ok(d) => println!("criterion {n:>2}: PASS  {d}"),
            Err(d) => {
                failed += 1;
                println!("criterion {n:>2}: FAIL  {d}");
            }
        }
    }
    println!("{} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
