//! Cosine similarity matrices, temperature softmax, and hypersphere angle statistics.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{self, Matrix};

const COS_SLACK: f64 = 1e-9;
const UNIT_TOL: f64 = 1e-6;
const ROW_SUM_TOL: f64 = 1e-9;
const MIN_KS_SAMPLE: usize = 100;
const QUAD_TOL: f64 = 1e-13;
const CDF_GRID: usize = 2048;
const RECURRENCE_MAX: usize = 4096;

/// Square matrix of cosine similarities, clamped to `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix(Matrix);

impl SimilarityMatrix {
    /// Accepts entries within `1e-9` of `[-1, 1]` and clamps them.
    pub fn new(mut m: Matrix) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::NotSquare {
                rows: m.rows(),
                cols: m.cols(),
            });
        }
        for (idx, v) in m.as_mut_slice().iter_mut().enumerate() {
            if v.abs() > 1.0 + COS_SLACK {
                return Err(Error::ShapeMismatch(format!(
                    "similarity entry {idx} = {v} outside [-1, 1]"
                )));
            }
            *v = v.clamp(-1.0, 1.0);
        }
        Ok(Self(m))
    }

    pub(crate) fn from_bounded(m: Matrix) -> Self {
        debug_assert!(m.is_square());
        Self(m)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    pub fn size(&self) -> usize {
        self.0.rows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0.get(i, j)
    }
}

/// Row-stochastic matrix with strictly positive entries.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMatrix(Matrix);

impl ProbMatrix {
    pub fn new(m: Matrix) -> Result<Self> {
        for i in 0..m.rows() {
            let row = m.row(i);
            if row.iter().any(|&p| p < 0.0) {
                return Err(Error::ShapeMismatch(format!("row {i} has a negative probability")));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::ShapeMismatch(format!("row {i} sums to {s}")));
            }
        }
        Ok(Self(m))
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0.get(i, j)
    }
}

pub fn check_unit_rows(m: &Matrix) -> Result<()> {
    for (i, r) in m.iter_rows().enumerate() {
        let n = tensor::norm(r);
        if (n - 1.0).abs() > UNIT_TOL {
            return Err(Error::NotNormalized { row: i, norm: n });
        }
    }
    Ok(())
}

/// `S[i][j] = aᵢ·bⱼ` for unit-norm rows.
pub fn cosine_similarity_matrix(a: &Matrix, b: &Matrix) -> Result<SimilarityMatrix> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch(format!(
            "{:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    check_unit_rows(a)?;
    check_unit_rows(b)?;
    let mut s = tensor::gemm_nt(a, b)?;
    for v in s.as_mut_slice() {
        *v = v.clamp(-1.0, 1.0);
    }
    Ok(SimilarityMatrix(s))
}

/// Temperature softmax of each row of an arbitrary matrix.
pub fn softmax_rows(s: &Matrix, tau: f64) -> Result<Matrix> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::BadTemperature(tau));
    }
    let mut out = s.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = ((*v - max) / tau).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    Ok(out)
}

pub fn row_softmax(s: &SimilarityMatrix, tau: f64) -> Result<ProbMatrix> {
    Ok(ProbMatrix(softmax_rows(&s.0, tau)?))
}

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// ln Γ(x) for x > 0 (Lanczos approximation, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        return (PI / (PI * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = LANCZOS[0];
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    let t = x + LANCZOS_G + 0.5;
    0.5 * (2.0 * PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Normalizing constant `Γ(n/2) / (√π Γ((n−1)/2))` of the angle density.
pub fn angle_density_constant(n: usize) -> Result<f64> {
    if n < 2 {
        return Err(Error::BadDimension(n));
    }
    if n > RECURRENCE_MAX {
        return Ok((ln_gamma(n as f64 / 2.0) - ln_gamma((n as f64 - 1.0) / 2.0)).exp() / PI.sqrt());
    }
    // c(n) = c(n-2)·(n-2)/(n-3), from Γ(x+1) = xΓ(x).
    let (mut k, mut c) = if n % 2 == 0 { (2, 1.0 / PI) } else { (3, 0.5) };
    while k < n {
        k += 2;
        c *= (k - 2) as f64 / (k - 3) as f64;
    }
    Ok(c)
}

/// Density of the angle between two independent uniform unit vectors in ℝⁿ.
#[derive(Debug, Clone, Copy)]
pub struct AngleDensity {
    n: usize,
    c: f64,
}

impl AngleDensity {
    pub fn new(n: usize) -> Result<Self> {
        Ok(Self {
            n,
            c: angle_density_constant(n)?,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Unchecked evaluation; `theta` must lie in `[0, π]`.
    pub fn eval(&self, theta: f64) -> f64 {
        match self.n {
            2 => self.c,
            n if n - 2 <= i32::MAX as usize => self.c * theta.sin().powi((n - 2) as i32),
            n => self.c * ((n - 2) as f64 * theta.sin().ln()).exp(),
        }
    }
}

fn check_theta(theta: f64) -> Result<()> {
    if (0.0..=PI).contains(&theta) {
        Ok(())
    } else {
        Err(Error::ThetaOutOfRange(theta))
    }
}

pub fn angle_density(n: usize, theta: f64) -> Result<f64> {
    let d = AngleDensity::new(n)?;
    check_theta(theta)?;
    Ok(d.eval(theta))
}

fn simpson(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn adaptive<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    eps: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson(fa, flm, fm, a, m);
    let right = simpson(fm, frm, fb, m, b);
    let delta = left + right - whole;
    if depth == 0 || (depth < 44 && delta.abs() <= 15.0 * eps) {
        return left + right + delta / 15.0;
    }
    adaptive(f, a, m, fa, flm, fm, left, eps / 2.0, depth - 1)
        + adaptive(f, m, b, fm, frm, fb, right, eps / 2.0, depth - 1)
}

/// Adaptive Simpson integral of `f` over `[a, b]`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, eps: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let fa = f(a);
    let fb = f(b);
    let fm = f(0.5 * (a + b));
    let whole = simpson(fa, fm, fb, a, b);
    adaptive(&f, a, b, fa, fm, fb, whole, eps, 50)
}

/// `∫₀^x f` for `x ≤ π/2`, where the integrand is monotone.
fn half_integral(d: &AngleDensity, x: f64) -> f64 {
    // A few forced splits keep narrow peaks at large n from being skipped.
    let parts = 8;
    let h = x / parts as f64;
    (0..parts)
        .map(|k| integrate(|t| d.eval(t), k as f64 * h, (k + 1) as f64 * h, QUAD_TOL / parts as f64))
        .sum()
}

fn fold(g: f64, half: f64, theta: f64) -> f64 {
    let total = 2.0 * half;
    if theta <= FRAC_PI_2 {
        g / total
    } else {
        1.0 - g / total
    }
}

/// `∫₀^θ f(u) du`.
pub fn angle_cdf(n: usize, theta: f64) -> Result<f64> {
    let d = AngleDensity::new(n)?;
    check_theta(theta)?;
    if n == 2 {
        return Ok(theta / PI);
    }
    let x = if theta <= FRAC_PI_2 { theta } else { PI - theta };
    let half = half_integral(&d, FRAC_PI_2);
    Ok(fold(half_integral(&d, x), half, theta))
}

/// Angle CDF backed by a precomputed grid on `[0, π/2]`, for many evaluations.
#[derive(Debug, Clone)]
pub struct AngleCdf {
    density: AngleDensity,
    step: f64,
    cumulative: Vec<f64>,
}

/// Five-point Gauss-Legendre rule; exact for polynomials up to degree 9.
fn gauss_legendre5(f: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    const NODES: [f64; 5] = [
        0.0,
        0.538_469_310_105_683_1,
        -0.538_469_310_105_683_1,
        0.906_179_845_938_664,
        -0.906_179_845_938_664,
    ];
    const WEIGHTS: [f64; 5] = [
        0.568_888_888_888_888_9,
        0.478_628_670_499_366_5,
        0.478_628_670_499_366_5,
        0.236_926_885_056_189_1,
        0.236_926_885_056_189_1,
    ];
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    half * NODES
        .iter()
        .zip(WEIGHTS)
        .map(|(x, w)| w * f(mid + half * x))
        .sum::<f64>()
}

impl AngleCdf {
    pub fn new(n: usize) -> Result<Self> {
        let density = AngleDensity::new(n)?;
        let step = FRAC_PI_2 / CDF_GRID as f64;
        let mut cumulative = Vec::with_capacity(CDF_GRID + 1);
        let mut acc = 0.0;
        cumulative.push(0.0);
        for k in 0..CDF_GRID {
            acc += integrate(
                |t| density.eval(t),
                k as f64 * step,
                (k + 1) as f64 * step,
                QUAD_TOL / CDF_GRID as f64,
            );
            cumulative.push(acc);
        }
        Ok(Self {
            density,
            step,
            cumulative,
        })
    }

    pub fn eval(&self, theta: f64) -> Result<f64> {
        check_theta(theta)?;
        let x = if theta <= FRAC_PI_2 { theta } else { PI - theta };
        let k = ((x / self.step) as usize).min(CDF_GRID - 1);
        let lo = k as f64 * self.step;
        let g = self.cumulative[k] + gauss_legendre5(|t| self.density.eval(t), lo, x);
        Ok(fold(g, self.cumulative[CDF_GRID], theta))
    }
}

/// One-sample Kolmogorov–Smirnov statistic against the angle CDF for dimension `n`.
pub fn ks_distance_to_theory(angles: &[f64], n: usize) -> Result<f64> {
    if angles.len() < MIN_KS_SAMPLE {
        return Err(Error::SampleTooSmall {
            needed: MIN_KS_SAMPLE,
            got: angles.len(),
        });
    }
    for &a in angles {
        check_theta(a)?;
    }
    let cdf = AngleCdf::new(n)?;
    let mut sorted = angles.to_vec();
    sorted.sort_by(f64::total_cmp);
    let len = sorted.len() as f64;
    let mut d = 0.0_f64;
    for (i, &a) in sorted.iter().enumerate() {
        let f = cdf.eval(a)?;
        d = d.max((i + 1) as f64 / len - f).max(f - i as f64 / len);
    }
    Ok(d)
}

/// Two-sample Kolmogorov–Smirnov statistic.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<f64> {
    for s in [a, b] {
        if s.is_empty() {
            return Err(Error::SampleTooSmall { needed: 1, got: 0 });
        }
    }
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (nx, ny) = (x.len() as f64, y.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d = 0.0_f64;
    while i < x.len() && j < y.len() {
        let v = x[i].min(y[j]);
        while i < x.len() && x[i] <= v {
            i += 1;
        }
        while j < y.len() && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / nx - j as f64 / ny).abs());
    }
    Ok(d)
}

/// Angles between `pairs` uniformly drawn row pairs `i ≠ j`.
pub fn pairwise_angle_sample(x: &Matrix, pairs: usize, seed: u64) -> Result<Vec<f64>> {
    if x.rows() < 2 {
        return Err(Error::TooFewRows {
            needed: 2,
            got: x.rows(),
        });
    }
    check_unit_rows(x)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = x.rows();
    Ok((0..pairs)
        .map(|_| {
            let i = rng.random_range(0..n);
            let mut j = rng.random_range(0..n - 1);
            if j >= i {
                j += 1;
            }
            tensor::dot(x.row(i), x.row(j)).clamp(-1.0, 1.0).acos()
        })
        .collect())
}

/// Density-normalized histogram over `[0, π]` as `(bin_center, density)` rows.
pub fn angle_histogram(angles: &[f64], bins: usize) -> Result<Vec<(f64, f64)>> {
    if bins == 0 {
        return Err(Error::BadBins(bins));
    }
    if angles.is_empty() {
        return Err(Error::SampleTooSmall { needed: 1, got: 0 });
    }
    let width = PI / bins as f64;
    let mut counts = vec![0usize; bins];
    for &a in angles {
        check_theta(a)?;
        counts[((a / width) as usize).min(bins - 1)] += 1;
    }
    let scale = 1.0 / (angles.len() as f64 * width);
    Ok(counts
        .iter()
        .enumerate()
        .map(|(k, &c)| ((k as f64 + 0.5) * width, c as f64 * scale))
        .collect())
}

/// `%.{digits}g`-style formatting.
pub fn format_significant(x: f64, digits: usize) -> String {
    if x == 0.0 || !x.is_finite() {
        return if x == 0.0 { "0".into() } else { x.to_string() };
    }
    let sci = format!("{:.*e}", digits - 1, x);
    let exp: i32 = sci[sci.find('e').unwrap() + 1..].parse().unwrap();
    if exp < -4 || exp >= digits as i32 {
        let (mantissa, _) = sci.split_at(sci.find('e').unwrap());
        let mantissa = trim_zeros(mantissa);
        format!("{mantissa}e{}{:02}", if exp < 0 { '-' } else { '+' }, exp.abs())
    } else {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        trim_zeros(&format!("{x:.decimals$}")).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// `bin_center\tdensity` lines with 9 significant digits.
pub fn histogram_tsv(table: &[(f64, f64)]) -> String {
    let mut out = String::from("bin_center\tdensity\n");
    for &(c, d) in table {
        out.push_str(&format!(
            "{}\t{}\n",
            format_significant(c, 9),
            format_significant(d, 9)
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn cosine_examples() {
        let e = Matrix::identity(3);
        assert_eq!(cosine_similarity_matrix(&e, &e).unwrap().into_matrix(), e);
        let a = m(&[&[0.6, 0.8], &[1.0, 0.0]]);
        let b = m(&[&[-0.6, -0.8], &[0.6, 0.8]]);
        let s = cosine_similarity_matrix(&a, &b).unwrap();
        assert_eq!(s.get(0, 0), -1.0);
        assert_eq!(s.get(0, 1), 1.0);
        assert!(matches!(
            cosine_similarity_matrix(&m(&[&[2.0, 0.0]]), &m(&[&[1.0, 0.0]])),
            Err(Error::NotNormalized { row: 0, .. })
        ));
        assert!(matches!(
            cosine_similarity_matrix(&a, &e),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn cosine_is_clamped() {
        let v = 1.0 / 3f64.sqrt();
        let a = m(&[&[v, v, v]]);
        let s = cosine_similarity_matrix(&a, &a).unwrap();
        assert!(s.get(0, 0) <= 1.0);
    }

    #[test]
    fn softmax_examples() {
        let s = SimilarityMatrix::new(Matrix::from_fn(4, 4, |_, _| 0.3)).unwrap();
        let p = row_softmax(&s, 0.7).unwrap();
        for v in p.matrix().as_slice() {
            assert!((v - 0.25).abs() < 1e-16);
        }

        let s = SimilarityMatrix::new(m(&[&[1.0, 0.0], &[0.0, 1.0]])).unwrap();
        let p = row_softmax(&s, 1.0).unwrap();
        let e = std::f64::consts::E;
        assert!((p.get(0, 0) - e / (e + 1.0)).abs() < 1e-15);
        assert!((p.get(0, 0) - 0.73106).abs() < 1e-5);
        assert!((p.get(0, 1) - 0.26894).abs() < 1e-5);

        let p = row_softmax(&s, 0.05).unwrap();
        let oracle = 20f64.exp() / (20f64.exp() + 1.0);
        assert!(p.get(0, 0) > 1.0 - 1e-8);
        assert!((p.get(0, 0) - oracle).abs() < 1e-15);

        assert!(matches!(row_softmax(&s, 0.0), Err(Error::BadTemperature(_))));
        assert!(matches!(row_softmax(&s, -1.0), Err(Error::BadTemperature(_))));
    }

    #[test]
    fn ln_gamma_matches_known_values() {
        assert!(ln_gamma(1.0).abs() < 1e-14);
        assert!(ln_gamma(2.0).abs() < 1e-14);
        assert!((ln_gamma(0.5) - 0.5 * PI.ln()).abs() < 1e-14);
        let fact10: f64 = (1..10).map(|k| k as f64).product();
        assert!((ln_gamma(10.0) - fact10.ln()).abs() < 1e-12);
        // Stirling series as an independent route at large argument.
        let x = 300.5_f64;
        let stirling = (x - 0.5) * x.ln() - x + 0.5 * (2.0 * PI).ln() + 1.0 / (12.0 * x)
            - 1.0 / (360.0 * x.powi(3));
        assert!((ln_gamma(x) - stirling).abs() / stirling < 1e-14);
    }

    #[test]
    fn density_constant_routes_agree() {
        for n in [3usize, 4, 10, 64, 65, 512, 513, 2048] {
            let lanczos =
                (ln_gamma(n as f64 / 2.0) - ln_gamma((n as f64 - 1.0) / 2.0)).exp() / PI.sqrt();
            let rec = angle_density_constant(n).unwrap();
            assert!((rec - lanczos).abs() / rec < 1e-11, "n={n}: {rec} vs {lanczos}");
        }
        let big = angle_density_constant(RECURRENCE_MAX + 1).unwrap();
        let below = angle_density_constant(RECURRENCE_MAX - 1).unwrap();
        assert!((big / below - ((RECURRENCE_MAX - 1) as f64 / (RECURRENCE_MAX - 2) as f64)).abs() < 1e-11);
    }

    #[test]
    fn density_examples() {
        for t in [0.0, 0.4, FRAC_PI_2, 3.0, PI] {
            assert_eq!(angle_density(2, t).unwrap(), 1.0 / PI);
        }
        assert_eq!(angle_density(3, FRAC_PI_2).unwrap(), 0.5);
        assert!((angle_density(2, 1.0).unwrap() - 0.318_309_9).abs() < 1e-7);
        assert!(matches!(angle_density(1, 1.0), Err(Error::BadDimension(1))));
        assert!(matches!(angle_density(3, -0.1), Err(Error::ThetaOutOfRange(_))));
        assert!(matches!(angle_density(3, 3.2), Err(Error::ThetaOutOfRange(_))));
        assert!(matches!(angle_density(3, f64::NAN), Err(Error::ThetaOutOfRange(_))));
    }

    fn composite_simpson(n: usize, panels: usize) -> f64 {
        let h = PI / panels as f64;
        let f = |k: usize| angle_density(n, (k as f64 * h).min(PI)).unwrap();
        let mut s = f(0) + f(panels);
        for k in 1..panels {
            s += if k % 2 == 1 { 4.0 } else { 2.0 } * f(k);
        }
        s * h / 3.0
    }

    #[test]
    fn density_integrates_to_one() {
        for n in [2, 3, 64, 512] {
            let total = composite_simpson(n, 10_000);
            assert!((total - 1.0).abs() < 1e-6, "n={n}: {total}");
        }
    }

    #[test]
    fn cdf_examples() {
        for n in [2, 3, 7, 64, 512] {
            assert_eq!(angle_cdf(n, 0.0).unwrap(), 0.0);
            assert!((angle_cdf(n, PI).unwrap() - 1.0).abs() < 1e-9);
        }
        assert_eq!(angle_cdf(3, FRAC_PI_2).unwrap(), 0.5);
    }

    #[test]
    fn cdf_matches_closed_forms() {
        for k in 0..=40 {
            let t = PI * k as f64 / 40.0;
            let f3 = (1.0 - t.cos()) / 2.0;
            let f4 = (t - t.sin() * t.cos()) / PI;
            assert!((angle_cdf(3, t).unwrap() - f3).abs() < 1e-9);
            assert!((angle_cdf(4, t).unwrap() - f4).abs() < 1e-9);
            assert!((angle_cdf(2, t).unwrap() - t / PI).abs() < 1e-15);
        }
    }

    #[test]
    fn tabulated_cdf_matches_direct() {
        for n in [3, 17, 64, 512] {
            let table = AngleCdf::new(n).unwrap();
            for k in 0..=97 {
                let t = PI * k as f64 / 97.0;
                let diff = (table.eval(t).unwrap() - angle_cdf(n, t).unwrap()).abs();
                assert!(diff < 1e-10, "n={n} t={t}: {diff}");
            }
        }
    }

    fn inverse_cdf_sample(n: usize, count: usize, seed: u64) -> Vec<f64> {
        let table = AngleCdf::new(n).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| {
                let u: f64 = rng.random();
                let (mut lo, mut hi) = (0.0, PI);
                for _ in 0..60 {
                    let mid = 0.5 * (lo + hi);
                    if table.eval(mid).unwrap() < u {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                0.5 * (lo + hi)
            })
            .collect()
    }

    #[test]
    fn ks_on_inverse_transform_sample() {
        for n in [3, 64] {
            let s = inverse_cdf_sample(n, 100_000, 5);
            let d = ks_distance_to_theory(&s, n).unwrap();
            assert!(d < 0.01, "n={n}: {d}");
        }
    }

    #[test]
    fn ks_examples() {
        assert_eq!(ks_distance_to_theory(&[FRAC_PI_2; 200], 3).unwrap(), 0.5);
        assert!(matches!(
            ks_distance_to_theory(&[], 3),
            Err(Error::SampleTooSmall { needed: 100, got: 0 })
        ));
        assert!(matches!(
            ks_distance_to_theory(&[4.0; 100], 3),
            Err(Error::ThetaOutOfRange(_))
        ));
    }

    #[test]
    fn two_sample_ks_examples() {
        let a = [0.1, 0.2, 0.3, 0.4];
        assert_eq!(ks_two_sample(&a, &a).unwrap(), 0.0);
        assert_eq!(ks_two_sample(&a, &[1.0, 2.0]).unwrap(), 1.0);
        assert_eq!(ks_two_sample(&[0.0, 1.0], &[0.5, 1.5]).unwrap(), 0.5);
        assert!(ks_two_sample(&a, &[]).is_err());
    }

    #[test]
    fn pairwise_sample_examples() {
        let e = Matrix::identity(5);
        let s = pairwise_angle_sample(&e, 300, 1).unwrap();
        assert!(s.iter().all(|&t| t == FRAC_PI_2));
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = tensor::l2_normalize_rows(&Matrix::from_fn(30, 4, |_, _| {
            StandardNormal.sample(&mut rng)
        }))
        .unwrap();
        assert_eq!(
            pairwise_angle_sample(&x, 500, 9).unwrap(),
            pairwise_angle_sample(&x, 500, 9).unwrap()
        );
        assert_ne!(
            pairwise_angle_sample(&x, 500, 9).unwrap(),
            pairwise_angle_sample(&x, 500, 10).unwrap()
        );
        assert!(matches!(
            pairwise_angle_sample(&Matrix::identity(1), 5, 0),
            Err(Error::TooFewRows { .. })
        ));
    }

    #[test]
    fn gaussian_angles_match_theory() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let x = tensor::l2_normalize_rows(&Matrix::from_fn(4000, 64, |_, _| {
            StandardNormal.sample(&mut rng)
        }))
        .unwrap();
        let s = pairwise_angle_sample(&x, 100_000, 4).unwrap();
        let d = ks_distance_to_theory(&s, 64).unwrap();
        assert!(d < 0.01, "{d}");
    }

    #[test]
    fn histogram_examples() {
        let h = angle_histogram(&[0.3, 1.0, 2.0], 1).unwrap();
        assert_eq!(h.len(), 1);
        assert!((h[0].0 - FRAC_PI_2).abs() < 1e-15);
        assert!((h[0].1 - 1.0 / PI).abs() < 1e-15);
        assert!(matches!(angle_histogram(&[], 5), Err(Error::SampleTooSmall { .. })));
        assert!(matches!(angle_histogram(&[1.0], 0), Err(Error::BadBins(0))));

        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let u: Vec<f64> = (0..200_000).map(|_| rng.random::<f64>() * PI).collect();
        let h = angle_histogram(&u, 20).unwrap();
        let width = PI / 20.0;
        let area: f64 = h.iter().map(|&(_, d)| d * width).sum();
        assert!((area - 1.0).abs() < 1e-9);
        for &(_, d) in &h {
            assert!((d - 1.0 / PI).abs() < 0.02 / PI, "{d}");
        }
        let h = angle_histogram(&[PI, 0.0], 4).unwrap();
        assert_eq!(h[3].1, h[0].1);
    }

    #[test]
    fn significant_formatting() {
        assert_eq!(format_significant(0.0, 9), "0");
        assert_eq!(format_significant(1.0 / PI, 9), "0.318309886");
        assert_eq!(format_significant(PI, 9), "3.14159265");
        assert_eq!(format_significant(0.5, 9), "0.5");
        assert_eq!(format_significant(1.5e-7, 9), "1.5e-07");
        assert_eq!(format_significant(9.999_999_999_9, 9), "10");
        assert_eq!(format_significant(-12.25, 9), "-12.25");
        let tsv = histogram_tsv(&[(FRAC_PI_2, 1.0 / PI)]);
        assert_eq!(tsv, "bin_center\tdensity\n1.57079633\t0.318309886\n");
    }

    proptest! {
        #[test]
        fn softmax_rows_sum_and_shift(vals in proptest::collection::vec(-1.0f64..1.0, 9), shift in -5.0f64..5.0, tau in 0.01f64..3.0) {
            let s = Matrix::from_vec(3, 3, vals).unwrap();
            let p = softmax_rows(&s, tau).unwrap();
            let shifted = Matrix::from_fn(3, 3, |i, j| s.get(i, j) + if i == 1 { shift } else { 0.0 });
            let q = softmax_rows(&shifted, tau).unwrap();
            for i in 0..3 {
                prop_assert!((p.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
            prop_assert!(p.max_abs_diff(&q) < 1e-12);
        }

        #[test]
        fn density_is_symmetric(n in 2usize..600, t in 0.0f64..PI) {
            let a = angle_density(n, t).unwrap();
            let b = angle_density(n, PI - t).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn cdf_is_monotone(n in 2usize..200, a in 0.0f64..PI, b in 0.0f64..PI) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(angle_cdf(n, lo).unwrap() <= angle_cdf(n, hi).unwrap());
        }
    }
}
