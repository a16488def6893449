//! Command implementations behind the `simdistill` binary.
//!
//! Each command returns a [`CliError`] carrying the process exit code.

use std::f64::consts::PI;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use simdistill::config::ExperimentConfig;
use simdistill::distill::{self, gradcheck_all, StudentHead};
use simdistill::eval;
use simdistill::experiment::{self, class_split, Part};
use simdistill::io;
use simdistill::similarity::{self, angle_histogram, AngleCdf, format_significant, ks_distance_to_theory, ks_two_sample};
use simdistill::synthgen;
use simdistill::tensor::{self, Matrix};
use simdistill::whitening::{self, WhiteningTransform};
use simdistill::Error;

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_RANK: i32 = 4;
pub const EXIT_NUMERIC: i32 = 5;
pub const EXIT_DIM: i32 = 6;
pub const EXIT_GRADCHECK: i32 = 7;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn new(code: i32, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::BadConfig(_) | Error::UnknownStrategy(_) | Error::Json(_) => EXIT_CONFIG,
        Error::Io(_) | Error::Format(_) => EXIT_IO,
        Error::RankDeficient(_) | Error::TooFewSamples { .. } => EXIT_RANK,
        Error::NonFiniteLoss(_) | Error::NonFinite(_) => EXIT_NUMERIC,
        Error::DimMismatch { .. } | Error::ShapeMismatch(_) => EXIT_DIM,
        _ => 1,
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        Self::new(exit_code(&e), e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

fn with_path<T>(path: &Path, r: simdistill::Result<T>) -> CliResult<T> {
    r.map_err(|e| CliError::new(exit_code(&e), format!("{}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        with_path(dir, fs::create_dir_all(dir).map_err(Error::from))?;
    }
    with_path(path, fs::write(path, text).map_err(Error::from))
}

fn create_dir(dir: &Path) -> CliResult<()> {
    with_path(dir, fs::create_dir_all(dir).map_err(Error::from))
}

pub fn load_config(path: &Path) -> CliResult<ExperimentConfig> {
    with_path(path, ExperimentConfig::load(path))
}

pub fn teacher_path(dir: &Path, k: usize) -> PathBuf {
    dir.join(format!("teacher_{k}.emb"))
}

pub fn transform_path(dir: &Path, k: usize) -> PathBuf {
    dir.join(format!("teacher_{k}.wht"))
}

/// Writes `base.emb`, `labels.csv` and `teacher_k.emb` for every teacher.
pub fn cmd_gen(config: &Path, out: &Path) -> CliResult<Vec<PathBuf>> {
    let cfg = load_config(config)?;
    let data = synthgen::generate(&cfg.synth)?;
    create_dir(out)?;
    let mut written = Vec::new();
    let base = out.join("base.emb");
    with_path(&base, io::write_emb(&base, &data.base))?;
    written.push(base);
    let labels = out.join("labels.csv");
    with_path(&labels, io::write_labels(&labels, &data.labels))?;
    written.push(labels);
    for (k, t) in data.teachers.iter().enumerate() {
        let p = teacher_path(out, k);
        with_path(&p, io::write_emb(&p, t))?;
        written.push(p);
    }
    Ok(written)
}

/// Outcome of [`cmd_whiten`], for reporting.
#[derive(Debug, Clone, PartialEq)]
pub struct WhitenSummary {
    pub significant: usize,
    pub n_c: usize,
    pub warning: bool,
}

/// Fits L2-normalized PCA whitening on every row of `input`, then writes the
/// transform and the whitened, normalized embeddings.
pub fn cmd_whiten(input: &Path, n_c: usize, eps_rel: f64, transform: &Path, output: &Path) -> CliResult<WhitenSummary> {
    let x = with_path(input, io::read_emb(input))?;
    let t = with_path(input, whitening::fit_normalized(&x, n_c, eps_rel))?;
    let white = whitening::whiten_pipeline(&t, &x)?;
    with_path(transform, io::write_transform(transform, &t))?;
    with_path(output, io::write_emb(output, &white))?;
    Ok(WhitenSummary {
        significant: t.significant_count(),
        n_c,
        warning: t.warning(),
    })
}

fn display_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

/// Angle histograms of each file next to the bin-averaged theoretical density
/// of its dimension, followed by `#`-prefixed KS footers: one row of distances to
/// theory, then the pairwise two-sample KS matrix.
pub fn cmd_simdist(files: &[PathBuf], pairs: usize, bins: usize, seed: u64, out: &Path) -> CliResult<String> {
    if files.is_empty() {
        return Err(CliError::new(EXIT_CONFIG, "simdist needs at least one embedding file"));
    }
    if bins == 0 || pairs == 0 {
        return Err(CliError::new(EXIT_CONFIG, "pairs and bins must be >= 1"));
    }
    let mut names = Vec::new();
    let mut samples = Vec::new();
    let mut dims = Vec::new();
    for f in files {
        let x = with_path(f, io::read_emb(f))?;
        let x = with_path(f, tensor::l2_normalize_rows(&x))?;
        samples.push(with_path(f, similarity::pairwise_angle_sample(&x, pairs, seed))?);
        dims.push(x.cols());
        names.push(display_name(f));
    }
    let hists = samples
        .iter()
        .map(|s| angle_histogram(s, bins))
        .collect::<simdistill::Result<Vec<_>>>()?;

    let half = 0.5 * PI / bins as f64;
    let cdfs = dims
        .iter()
        .map(|&d| if d >= 2 { AngleCdf::new(d).map(Some) } else { Ok(None) })
        .collect::<simdistill::Result<Vec<_>>>()?;

    let mut text = String::from("bin_center");
    for n in &names {
        text.push_str(&format!("\t{n}\t{n}_theory"));
    }
    text.push('\n');
    for b in 0..bins {
        let center = hists[0][b].0;
        text.push_str(&format_significant(center, 9));
        for (h, cdf) in hists.iter().zip(&cdfs) {
            let theory = match cdf {
                Some(c) => (c.eval((center + half).min(PI))? - c.eval((center - half).max(0.0))?) / (2.0 * half),
                None => f64::NAN,
            };
            text.push_str(&format!("\t{}\t{}", format_significant(h[b].1, 9), format_significant(theory, 9)));
        }
        text.push('\n');
    }

    text.push_str("#ks_theory");
    for (s, &dim) in samples.iter().zip(&dims) {
        match ks_distance_to_theory(s, dim) {
            Ok(d) => text.push_str(&format!("\t{d:.6}")),
            Err(Error::SampleTooSmall { .. }) | Err(Error::BadDimension(_)) => text.push_str("\tNA"),
            Err(e) => return Err(e.into()),
        }
    }
    text.push('\n');
    text.push_str("#ks");
    for n in &names {
        text.push_str(&format!("\t{n}"));
    }
    text.push('\n');
    for (i, a) in samples.iter().enumerate() {
        text.push_str(&format!("#{}", names[i]));
        for b in &samples {
            text.push_str(&format!("\t{:.6}", ks_two_sample(a, b)?));
        }
        text.push('\n');
    }
    write_text(out, &text)?;
    Ok(text)
}

/// Parses the `#ks` footer of a simdist TSV: (distances to theory, pairwise matrix).
pub fn parse_ks_footer(text: &str) -> Option<(Vec<Option<f64>>, Vec<Vec<f64>>)> {
    let mut theory = None;
    let mut matrix = Vec::new();
    let mut in_matrix = false;
    for line in text.lines() {
        if let Some(rest) = line.strip_prefix("#ks_theory\t") {
            theory = Some(rest.split('\t').map(|v| v.parse().ok()).collect());
        } else if line.starts_with("#ks\t") || line == "#ks" {
            in_matrix = true;
        } else if in_matrix {
            let row = line.strip_prefix('#')?;
            let vals: Option<Vec<f64>> = row.split('\t').skip(1).map(|v| v.parse().ok()).collect();
            matrix.push(vals?);
        }
    }
    Some((theory?, matrix))
}

/// Rows of a gen output directory, with the teacher count discovered from
/// consecutive `teacher_k.emb` files.
pub struct DataDir {
    pub base: Matrix,
    pub labels: Vec<usize>,
    pub teachers: Vec<Matrix>,
}

impl DataDir {
    pub fn load(dir: &Path, with_teachers: bool) -> CliResult<Self> {
        let bp = dir.join("base.emb");
        let base = with_path(&bp, io::read_emb(&bp))?;
        let lp = dir.join("labels.csv");
        let labels = with_path(&lp, io::read_labels(&lp))?;
        if labels.len() != base.rows() {
            return Err(CliError::new(
                EXIT_DIM,
                format!("{} labels for {} base rows", labels.len(), base.rows()),
            ));
        }
        let mut teachers = Vec::new();
        while with_teachers {
            let p = teacher_path(dir, teachers.len());
            if !p.exists() {
                break;
            }
            let t = with_path(&p, io::read_emb(&p))?;
            if t.rows() != base.rows() {
                return Err(CliError::new(EXIT_DIM, format!("{}: {} rows, base has {}", p.display(), t.rows(), base.rows())));
            }
            teachers.push(t);
        }
        Ok(Self { base, labels, teachers })
    }

    fn part(&self, rows: &[usize]) -> Part {
        Part {
            base: self.base.select_rows(rows),
            labels: rows.iter().map(|&i| self.labels[i]).collect(),
            teachers: self.teachers.iter().map(|t| t.select_rows(rows)).collect(),
        }
    }
}

/// Which rows a command works on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitSide {
    Train,
    Test,
    All,
}

fn split_rows(cfg: &ExperimentConfig, labels: &[usize], side: SplitSide) -> CliResult<Vec<usize>> {
    Ok(match side {
        SplitSide::All => (0..labels.len()).collect(),
        SplitSide::Train => class_split(labels, cfg.eval.holdout_fraction)?.train,
        SplitSide::Test => class_split(labels, cfg.eval.holdout_fraction)?.test,
    })
}

/// Options of [`cmd_distill`] beyond the config.
#[derive(Debug, Clone, Default)]
pub struct DistillOptions {
    /// Subset of teacher indices; all teachers when empty.
    pub teachers: Vec<usize>,
}

/// Trains a student on the training classes of `data`. Uses `teacher_k.wht`
/// from the data directory when present, otherwise fits (or, with whitening
/// disabled, uses identity maps) and writes fitted transforms to `out`.
pub fn cmd_distill(config: &Path, data: &Path, out: &Path, opts: &DistillOptions) -> CliResult<StudentHead> {
    let cfg = load_config(config)?;
    let dd = DataDir::load(data, true)?;
    if dd.teachers.is_empty() {
        return Err(CliError::new(EXIT_IO, format!("{}: no teacher_0.emb", data.display())));
    }
    let chosen: Vec<usize> = if opts.teachers.is_empty() {
        (0..dd.teachers.len()).collect()
    } else {
        opts.teachers.clone()
    };
    if let Some(&k) = chosen.iter().find(|&&k| k >= dd.teachers.len()) {
        return Err(CliError::new(EXIT_CONFIG, format!("teacher {k} not found; have {}", dd.teachers.len())));
    }
    let train = dd.part(&split_rows(&cfg, &dd.labels, SplitSide::Train)?);
    create_dir(out)?;

    let mut sets = Vec::new();
    let mut transforms = Vec::new();
    for &k in &chosen {
        let x = &train.teachers[k];
        let given = transform_path(data, k);
        let t = if given.exists() {
            with_path(&given, io::read_transform(&given))?
        } else if cfg.whitening.enabled {
            let t = with_path(&teacher_path(data, k), whitening::fit_normalized(x, cfg.n_c(), cfg.whitening.eps_rel))?;
            let p = transform_path(out, k);
            with_path(&p, io::write_transform(&p, &t))?;
            t
        } else {
            WhiteningTransform::identity(x.cols())
        };
        if t.warning() {
            eprintln!(
                "warning: teacher {k}: n_c = {} exceeds {} significant components",
                t.output_dim(),
                t.significant_count()
            );
        }
        sets.push(x.clone());
        transforms.push(t);
    }

    let (head, history) = distill::train(&cfg.train_config(), &train.base, &train.labels, &sets, &transforms)?;
    let sp = out.join("student.stu");
    with_path(&sp, io::write_student(&sp, &head))?;
    write_text(&out.join("history.tsv"), &history.to_tsv())?;
    if !history.mrr.is_empty() {
        write_text(&out.join("mrr.tsv"), &history.mrr_tsv()?)?;
    }
    Ok(head)
}

/// What [`cmd_eval`] scores.
#[derive(Debug, Clone)]
pub enum EvalInput {
    /// A student head applied to the data directory's `base.emb`.
    Student(PathBuf),
    /// Embedding files row-aligned with `labels.csv`, each optionally passed
    /// through a transform.
    Embeddings {
        files: Vec<PathBuf>,
        transforms: Vec<PathBuf>,
        ensemble_mean: bool,
    },
}

/// Writes `metric\tvalue` rows: mAP, mAP@k per configured k, and batch MRR.
pub fn cmd_eval(config: &Path, data: &Path, input: &EvalInput, side: SplitSide, out: &Path) -> CliResult<Vec<(String, f64)>> {
    let cfg = load_config(config)?;
    let dd = DataDir::load(data, false)?;
    let rows = split_rows(&cfg, &dd.labels, side)?;
    let labels: Vec<usize> = rows.iter().map(|&i| dd.labels[i]).collect();

    let metrics = match input {
        EvalInput::Student(path) => {
            let head = with_path(path, io::read_student(path))?;
            if head.n_base() != dd.base.cols() {
                return Err(CliError::new(
                    EXIT_DIM,
                    format!("student expects {} inputs, base.emb has {}", head.n_base(), dd.base.cols()),
                ));
            }
            let emb = distill::student_forward(&head, &dd.base.select_rows(&rows))?;
            experiment::evaluate_embeddings(&emb, &labels, &cfg.eval)?
        }
        EvalInput::Embeddings {
            files,
            transforms,
            ensemble_mean,
        } => {
            if files.is_empty() {
                return Err(CliError::new(EXIT_CONFIG, "eval needs --student or at least one --emb"));
            }
            if files.len() > 1 && !ensemble_mean {
                return Err(CliError::new(EXIT_CONFIG, "several --emb files need --ensemble-mean"));
            }
            if !transforms.is_empty() && transforms.len() != files.len() {
                return Err(CliError::new(EXIT_CONFIG, "give one --transform per --emb file, or none"));
            }
            let mut views = Vec::new();
            for (i, f) in files.iter().enumerate() {
                let x = with_path(f, io::read_emb(f))?;
                if x.rows() != dd.labels.len() {
                    return Err(CliError::new(
                        EXIT_DIM,
                        format!("{}: {} rows for {} labels", f.display(), x.rows(), dd.labels.len()),
                    ));
                }
                let x = x.select_rows(&rows);
                let v = match transforms.get(i) {
                    Some(tp) => {
                        let t = with_path(tp, io::read_transform(tp))?;
                        with_path(f, whitening::whiten_pipeline(&t, &x))?
                    }
                    None => with_path(f, tensor::l2_normalize_rows(&x))?,
                };
                views.push(v);
            }
            if *ensemble_mean {
                experiment::evaluate_ensemble(&views, &labels, &cfg.eval)?
            } else {
                experiment::evaluate_embeddings(&views[0], &labels, &cfg.eval)?
            }
        }
    };
    write_text(out, &eval::metrics_tsv(&metrics))?;
    Ok(metrics)
}

/// Finite-difference report: `loss_kind\tmax_rel_err` header and one line per loss.
/// Fails with exit 7 unless every loss passes.
pub fn cmd_gradcheck(config: &Path, corrupt: bool) -> CliResult<String> {
    let cfg = load_config(config)?;
    let reports = gradcheck_all(&cfg.train_config(), cfg.gradcheck.points, cfg.gradcheck.seed, corrupt)?;
    let mut text = String::from("loss_kind\tmax_rel_err\n");
    for r in &reports {
        text.push_str(&format!("{}\t{:.3e}\n", r.loss_kind, r.max_rel_err));
    }
    if reports.iter().all(|r| r.passed()) {
        Ok(text)
    } else {
        Err(CliError::new(EXIT_GRADCHECK, text))
    }
}

/// Runs the full reference comparison and writes the `variant\tmAP` summary.
pub fn cmd_experiment(config: &Path, out: &Path) -> CliResult<String> {
    let cfg = load_config(config)?;
    let report = experiment::run_reference(&cfg)?;
    let text = report.summary_tsv();
    write_text(out, &text)?;
    Ok(text)
}
