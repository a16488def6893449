use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use simdistill::whitening::DEFAULT_EPS_REL;
use simdistill_cli::{
    cmd_distill, cmd_eval, cmd_experiment, cmd_gen, cmd_gradcheck, cmd_simdist, cmd_whiten, CliError, DistillOptions,
    EvalInput, SplitSide, EXIT_CONFIG, EXIT_GRADCHECK,
};

/// Multi-teacher similarity distillation on synthetic embeddings.
#[derive(Parser)]
#[command(name = "simdistill", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Split {
    Train,
    Test,
    All,
}

impl From<Split> for SplitSide {
    fn from(s: Split) -> Self {
        match s {
            Split::Train => SplitSide::Train,
            Split::Test => SplitSide::Test,
            Split::All => SplitSide::All,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate base.emb, labels.csv and teacher_k.emb.
    Gen {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit PCA whitening on an embedding file and write the whitened rows.
    Whiten {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        n_c: usize,
        #[arg(long, default_value_t = DEFAULT_EPS_REL)]
        eps_rel: f64,
        /// Output WHT1 transform.
        #[arg(long)]
        transform: PathBuf,
        /// Output EMB1 whitened embeddings.
        #[arg(long)]
        output: PathBuf,
    },
    /// Pairwise-angle histograms, theoretical densities and KS distances.
    Simdist {
        #[arg(long, default_value_t = 100_000)]
        pairs: usize,
        #[arg(long, default_value_t = 90)]
        bins: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
    /// Train a student head; writes student.stu, history.tsv and mrr.tsv.
    Distill {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated teacher indices (default: all).
        #[arg(long, value_delimiter = ',')]
        teachers: Vec<usize>,
    },
    /// Retrieval metrics of a student or of embedding files.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, conflicts_with_all = ["emb", "ensemble_mean"])]
        student: Option<PathBuf>,
        #[arg(long)]
        emb: Vec<PathBuf>,
        /// Transforms applied to the --emb files, in order.
        #[arg(long)]
        transform: Vec<PathBuf>,
        /// Average per-teacher cosine scores before ranking.
        #[arg(long)]
        ensemble_mean: bool,
        #[arg(long, value_enum, default_value = "test")]
        split: Split,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference check of the KL, ED and CL gradients.
    Gradcheck {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, hide = true)]
        corrupt: bool,
    },
    /// Train and score every student variant of the reference comparison.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Stdout writes that tolerate a closed pipe.
macro_rules! out {
    ($($arg:tt)*) => {{
        let _ = write!(std::io::stdout(), $($arg)*);
    }};
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Gen { config, out } => {
            for p in cmd_gen(&config, &out)? {
                out!("{}\n", p.display());
            }
        }
        Command::Whiten {
            input,
            n_c,
            eps_rel,
            transform,
            output,
        } => {
            let s = cmd_whiten(&input, n_c, eps_rel, &transform, &output)?;
            out!("s_sig\t{}\n", s.significant);
            out!("warning\t{}\n", u8::from(s.warning));
            if s.warning {
                eprintln!(
                    "warning: n_c = {} exceeds the {} significant components",
                    s.n_c, s.significant
                );
            }
        }
        Command::Simdist {
            pairs,
            bins,
            seed,
            out,
            files,
        } => {
            cmd_simdist(&files, pairs, bins, seed, &out)?;
        }
        Command::Distill {
            config,
            data,
            out,
            teachers,
        } => {
            cmd_distill(&config, &data, &out, &DistillOptions { teachers })?;
        }
        Command::Eval {
            config,
            data,
            student,
            emb,
            transform,
            ensemble_mean,
            split,
            out,
        } => {
            let input = match student {
                Some(s) => EvalInput::Student(s),
                None => EvalInput::Embeddings {
                    files: emb,
                    transforms: transform,
                    ensemble_mean,
                },
            };
            for (name, v) in cmd_eval(&config, &data, &input, split.into(), &out)? {
                out!("{name}\t{v:.6}\n");
            }
        }
        Command::Gradcheck { config, corrupt } => {
            match cmd_gradcheck(&config, corrupt) {
                Ok(report) => out!("{report}"),
                Err(e) if e.code == EXIT_GRADCHECK => {
                    out!("{}", e.message);
                    return Err(CliError::new(EXIT_GRADCHECK, "gradient check failed"));
                }
                Err(e) => return Err(e),
            }
        }
        Command::Experiment { config, out } => {
            out!("{}", cmd_experiment(&config, &out)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_CONFIG as u8 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}
