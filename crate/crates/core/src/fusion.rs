//! Element-wise fusion of K teacher similarity matrices.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::similarity::{self, ProbMatrix, SimilarityMatrix};
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FusionStrategy {
    Mean,
    Rand { seed: u64 },
    MaxMin,
    MaxMean,
    MaxRand { seed: u64 },
}

/// Whether random selection draws a teacher per element or once per matrix.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RandMode {
    #[default]
    PerElement,
    PerBatch,
}

/// Strategy names as accepted in configs and on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyName {
    Mean,
    Rand,
    MaxMin,
    MaxMean,
    MaxRand,
}

impl StrategyName {
    pub fn with_seed(self, seed: u64) -> FusionStrategy {
        match self {
            Self::Mean => FusionStrategy::Mean,
            Self::Rand => FusionStrategy::Rand { seed },
            Self::MaxMin => FusionStrategy::MaxMin,
            Self::MaxMean => FusionStrategy::MaxMean,
            Self::MaxRand => FusionStrategy::MaxRand { seed },
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Mean => "mean",
            Self::Rand => "rand",
            Self::MaxMin => "max-min",
            Self::MaxMean => "max-mean",
            Self::MaxRand => "max-rand",
        }
    }
}

impl FromStr for StrategyName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "mean" => Self::Mean,
            "rand" => Self::Rand,
            "max-min" => Self::MaxMin,
            "max-mean" => Self::MaxMean,
            "max-rand" => Self::MaxRand,
            other => return Err(Error::UnknownStrategy(other.to_string())),
        })
    }
}

impl fmt::Display for StrategyName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FusionStrategy {
    pub fn name(&self) -> StrategyName {
        match self {
            Self::Mean => StrategyName::Mean,
            Self::Rand { .. } => StrategyName::Rand,
            Self::MaxMin => StrategyName::MaxMin,
            Self::MaxMean => StrategyName::MaxMean,
            Self::MaxRand { .. } => StrategyName::MaxRand,
        }
    }

    pub fn seed(&self) -> Option<u64> {
        match *self {
            Self::Rand { seed } | Self::MaxRand { seed } => Some(seed),
            _ => None,
        }
    }

    /// Independent seed for training step `step`; deterministic strategies are unchanged.
    pub fn for_step(&self, step: u64) -> Self {
        let mix = |seed: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(step);
            rng.random()
        };
        match *self {
            Self::Rand { seed } => Self::Rand { seed: mix(seed) },
            Self::MaxRand { seed } => Self::MaxRand { seed: mix(seed) },
            other => other,
        }
    }
}

fn check_teachers(teachers: &[SimilarityMatrix]) -> Result<usize> {
    let first = teachers.first().ok_or(Error::EmptyTeacherList)?;
    let n = first.size();
    for (k, t) in teachers.iter().enumerate() {
        if t.size() != n {
            return Err(Error::ShapeMismatch(format!(
                "teacher {k} is {}x{}, teacher 0 is {n}x{n}",
                t.size(),
                t.size()
            )));
        }
    }
    Ok(n)
}

fn max_of(teachers: &[SimilarityMatrix], i: usize, j: usize) -> f64 {
    teachers.iter().map(|t| t.get(i, j)).fold(f64::NEG_INFINITY, f64::max)
}

fn min_of(teachers: &[SimilarityMatrix], i: usize, j: usize) -> f64 {
    teachers.iter().map(|t| t.get(i, j)).fold(f64::INFINITY, f64::min)
}

fn mean_of(teachers: &[SimilarityMatrix], i: usize, j: usize) -> f64 {
    teachers.iter().map(|t| t.get(i, j)).sum::<f64>() / teachers.len() as f64
}

pub fn fuse(strategy: FusionStrategy, teachers: &[SimilarityMatrix]) -> Result<SimilarityMatrix> {
    fuse_with_mode(strategy, RandMode::PerElement, teachers)
}

pub fn fuse_with_mode(
    strategy: FusionStrategy,
    mode: RandMode,
    teachers: &[SimilarityMatrix],
) -> Result<SimilarityMatrix> {
    let n = check_teachers(teachers)?;
    let k = teachers.len();
    let mut rng = ChaCha8Rng::seed_from_u64(strategy.seed().unwrap_or(0));
    let batch_pick = rng.random_range(0..k);
    let pick = |rng: &mut ChaCha8Rng| match mode {
        RandMode::PerElement => rng.random_range(0..k),
        RandMode::PerBatch => batch_pick,
    };

    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let v = match strategy {
                FusionStrategy::Mean => mean_of(teachers, i, j),
                FusionStrategy::Rand { .. } => teachers[pick(&mut rng)].get(i, j),
                _ if i == j => max_of(teachers, i, j),
                FusionStrategy::MaxMin => min_of(teachers, i, j),
                FusionStrategy::MaxMean => mean_of(teachers, i, j),
                FusionStrategy::MaxRand { .. } => teachers[pick(&mut rng)].get(i, j),
            };
            // Means of values in [-1, 1] can round a hair outside the bounds.
            out.set(i, j, v.clamp(-1.0, 1.0));
        }
    }
    Ok(SimilarityMatrix::from_bounded(out))
}

/// Fuse in similarity space, then apply the temperature softmax.
pub fn fuse_prob(
    strategy: FusionStrategy,
    teachers: &[SimilarityMatrix],
    tau_t: f64,
) -> Result<ProbMatrix> {
    fuse_prob_with_mode(strategy, RandMode::PerElement, teachers, tau_t)
}

pub fn fuse_prob_with_mode(
    strategy: FusionStrategy,
    mode: RandMode,
    teachers: &[SimilarityMatrix],
    tau_t: f64,
) -> Result<ProbMatrix> {
    if !(tau_t > 0.0) {
        return Err(Error::BadTemperature(tau_t));
    }
    similarity::row_softmax(&fuse_with_mode(strategy, mode, teachers)?, tau_t)
}
