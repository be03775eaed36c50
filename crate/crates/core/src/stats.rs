//! Kendall rank correlation, percentile bootstrap, paired t-test, F1 and
//! score-distribution summaries.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::consistency::{CONSISTENT_ABOVE, INCONSISTENT_BELOW};
use crate::error::{Error, Result};
use crate::hashing::derive_seed;
use crate::parallel::par_map;
use crate::prompting::Label;

fn check_paired(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::domain(format!(
            "paired samples differ in length: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::domain("paired samples need at least two items"));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::domain("paired samples contain a non-finite value"));
    }
    Ok(())
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample standard deviation (n - 1 denominator); zero for fewer than two values.
pub fn sample_sd(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    let m = mean(x);
    let ss: f64 = x.iter().map(|v| (v - m) * (v - m)).sum();
    (ss / (x.len() - 1) as f64).sqrt()
}

// ---------------------------------------------------------------- Kendall

fn tie_pairs<T: PartialEq>(sorted: &[T]) -> u64 {
    let mut total = 0u64;
    let mut run = 1u64;
    for i in 1..=sorted.len() {
        if i < sorted.len() && sorted[i] == sorted[i - 1] {
            run += 1;
        } else {
            total += run * (run - 1) / 2;
            run = 1;
        }
    }
    total
}

/// Sorts `v` in place and returns the number of inversions (pairs i < j
/// with v[i] > v[j]).
fn merge_count(v: &mut [f64], buf: &mut Vec<f64>) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = merge_count(&mut v[..mid], buf) + merge_count(&mut v[mid..], buf);
    buf.clear();
    let (mut i, mut j) = (0, mid);
    while i < mid && j < n {
        if v[i] <= v[j] {
            buf.push(v[i]);
            i += 1;
        } else {
            buf.push(v[j]);
            swaps += (mid - i) as u64;
            j += 1;
        }
    }
    buf.extend_from_slice(&v[i..mid]);
    buf.extend_from_slice(&v[j..n]);
    v.copy_from_slice(buf);
    swaps
}

/// Kendall's tau-b in O(n log n).
pub fn kendall_tau(x: &[f64], y: &[f64]) -> Result<f64> {
    check_paired(x, y)?;
    let n = x.len() as u64;
    let mut pairs: Vec<(f64, f64)> = x.iter().copied().zip(y.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let n1 = tie_pairs(&xs);
    let n3 = tie_pairs(&pairs);
    let mut ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let mut buf = Vec::with_capacity(ys.len());
    let swaps = merge_count(&mut ys, &mut buf);
    let n2 = tie_pairs(&ys);
    let n0 = n * (n - 1) / 2;
    if n1 == n0 || n2 == n0 {
        return Err(Error::domain(
            "Kendall tau is undefined when a vector is constant",
        ));
    }
    let s = n0 as f64 - n1 as f64 - n2 as f64 + n3 as f64 - 2.0 * swaps as f64;
    let denom = (((n0 - n1) as f64) * ((n0 - n2) as f64)).sqrt();
    Ok((s / denom).clamp(-1.0, 1.0))
}

// -------------------------------------------------------------- bootstrap

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub level: f64,
    pub resamples: usize,
    pub seed: u64,
    /// Redraws allowed per resample when the statistic is undefined.
    pub max_retries: usize,
}

impl BootstrapConfig {
    pub const MIN_RESAMPLES: usize = 1000;

    pub fn new(level: f64, seed: u64) -> Self {
        Self {
            level,
            resamples: 10_000,
            seed,
            max_retries: 100,
        }
    }

    pub fn with_resamples(mut self, resamples: usize) -> Self {
        self.resamples = resamples;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::domain(format!(
                "level must lie in (0, 1), got {}",
                self.level
            )));
        }
        if self.resamples < Self::MIN_RESAMPLES {
            return Err(Error::domain(format!(
                "at least {} resamples are required, got {}",
                Self::MIN_RESAMPLES,
                self.resamples
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub estimate: f64,
    pub lo: f64,
    pub hi: f64,
    pub level: f64,
}

impl Interval {
    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Percentile bootstrap over paired resampling of `(x[i], y[i])`.
///
/// Each resample draws from its own generator seeded by `(seed, index)`,
/// so the interval does not depend on `jobs`.
pub fn bootstrap_ci<F>(
    x: &[f64],
    y: &[f64],
    statistic: F,
    config: &BootstrapConfig,
    jobs: usize,
) -> Result<Interval>
where
    F: Fn(&[f64], &[f64]) -> Result<f64> + Sync + Send,
{
    check_paired(x, y)?;
    config.validate()?;
    let estimate = statistic(x, y)?;
    let n = x.len();
    let indices: Vec<usize> = (0..config.resamples).collect();
    let draws = par_map(jobs, &indices, |&b| -> Result<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[
            "bootstrap",
            &config.seed.to_string(),
            &b.to_string(),
        ]));
        let mut xs = vec![0.0; n];
        let mut ys = vec![0.0; n];
        for _ in 0..=config.max_retries {
            for k in 0..n {
                let i = rng.gen_range(0..n);
                xs[k] = x[i];
                ys[k] = y[i];
            }
            if let Ok(v) = statistic(&xs, &ys) {
                if v.is_finite() {
                    return Ok(v);
                }
            }
        }
        Err(Error::domain(format!(
            "bootstrap resample {b} stayed degenerate after {} retries",
            config.max_retries
        )))
    });
    let mut values = draws.into_iter().collect::<Result<Vec<f64>>>()?;
    values.sort_by(f64::total_cmp);
    let alpha = (1.0 - config.level) / 2.0;
    Ok(Interval {
        estimate,
        lo: quantile_sorted(&values, alpha),
        hi: quantile_sorted(&values, 1.0 - alpha),
        level: config.level,
    })
}

// ----------------------------------------------------------- t distribution

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

/// `ln Γ(x)` for `x > 0`.
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let t = x + 7.5;
    let mut a = LANCZOS[0];
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

fn beta_continued_fraction(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..10_000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < 1e-16 {
            break;
        }
    }
    h
}

/// Regularized incomplete beta `I_x(a, b)`.
pub fn inc_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_continued_fraction(a, b, x) / a
    } else {
        1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b
    }
}

/// Two-sided tail probability `P(|T| >= |t|)` for Student's t with `df` degrees of freedom.
pub fn t_two_sided_p(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    inc_beta(df / 2.0, 0.5, df / (df + t * t))
}

/// Critical value `c` with `P(|T| <= c) = level`.
pub fn t_critical(level: f64, df: f64) -> f64 {
    let target = 1.0 - level;
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while t_two_sided_p(hi, df) > target {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if t_two_sided_p(mid, df) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub df: usize,
    pub p_value: f64,
    pub mean_difference: f64,
}

/// Paired t-test on `x - y`, two-sided.
pub fn paired_t_test(x: &[f64], y: &[f64]) -> Result<TTest> {
    check_paired(x, y)?;
    let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    let m = mean(&d);
    let sd = sample_sd(&d);
    if sd == 0.0 || sd <= 1e-15 * m.abs() {
        return Err(Error::domain("paired differences have zero variance"));
    }
    let n = d.len();
    let t = m / (sd / (n as f64).sqrt());
    let df = n - 1;
    Ok(TTest {
        t,
        df,
        p_value: t_two_sided_p(t, df as f64),
        mean_difference: m,
    })
}

// -------------------------------------------------------------------- F1

/// Binary F1 of `predicted` against `reference` for the `positive` class.
/// Zero when there are no true positives.
pub fn f1_score(reference: &[Label], predicted: &[Label], positive: Label) -> Result<f64> {
    if reference.len() != predicted.len() {
        return Err(Error::domain("reference and predictions differ in length"));
    }
    if reference.is_empty() {
        return Err(Error::domain("F1 of an empty set"));
    }
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    for (r, p) in reference.iter().zip(predicted) {
        match (*r == positive, *p == positive) {
            (true, true) => tp += 1,
            (false, true) => fp += 1,
            (true, false) => fneg += 1,
            (false, false) => {}
        }
    }
    if tp == 0 {
        return Ok(0.0);
    }
    Ok(2.0 * tp as f64 / (2 * tp + fp + fneg) as f64)
}

// ---------------------------------------------------------- distributions

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `bins + 1` ascending edges; the last bin is closed on the right.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

pub fn histogram(values: &[f64], lo: f64, hi: f64, bins: usize) -> Histogram {
    let bins = bins.max(1);
    let (lo, hi) = if hi > lo {
        (lo, hi)
    } else {
        (lo - 0.5, lo + 0.5)
    };
    let width = (hi - lo) / bins as f64;
    let edges = (0..=bins).map(|i| lo + width * i as f64).collect();
    let mut counts = vec![0; bins];
    for &v in values {
        if v < lo || v > hi {
            continue;
        }
        let i = (((v - lo) / width).floor() as usize).min(bins - 1);
        counts[i] += 1;
    }
    Histogram { edges, counts }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionSummary {
    pub count: usize,
    pub mean: f64,
    /// Normal-approximation 95 % half-width.
    pub ci95: f64,
    pub frac_inconsistent: f64,
    pub frac_indeterminate: f64,
    pub frac_consistent: f64,
    pub histogram: Histogram,
}

pub const DEFAULT_BINS: usize = 20;

pub fn distribution_summary(scores: &[f64]) -> Result<DistributionSummary> {
    distribution_summary_with_bins(scores, DEFAULT_BINS)
}

pub fn distribution_summary_with_bins(scores: &[f64], bins: usize) -> Result<DistributionSummary> {
    if scores.is_empty() {
        return Err(Error::domain("cannot summarize an empty score list"));
    }
    if scores.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("score list contains a non-finite value"));
    }
    let n = scores.len();
    let below = scores.iter().filter(|&&v| v < INCONSISTENT_BELOW).count();
    let above = scores.iter().filter(|&&v| v > CONSISTENT_ABOVE).count();
    let lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(DistributionSummary {
        count: n,
        mean: mean(scores),
        ci95: 1.96 * sample_sd(scores) / (n as f64).sqrt(),
        frac_inconsistent: below as f64 / n as f64,
        frac_indeterminate: (n - below - above) as f64 / n as f64,
        frac_consistent: above as f64 / n as f64,
        histogram: histogram(scores, lo, hi, bins),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kendall_extremes() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        let rev: Vec<f64> = x.iter().rev().copied().collect();
        assert_eq!(kendall_tau(&x, &x).unwrap(), 1.0);
        assert_eq!(kendall_tau(&x, &rev).unwrap(), -1.0);
        assert!(kendall_tau(&x, &[2.0; 5]).is_err());
        assert!(kendall_tau(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn kendall_with_ties_known_value() {
        // concordant 4, discordant 1, x-ties 1, y-ties 0, n0 = 6
        let x = [1.0, 1.0, 2.0, 3.0];
        let y = [1.0, 2.0, 4.0, 3.0];
        let tau = kendall_tau(&x, &y).unwrap();
        assert!((tau - 3.0 / (5.0f64 * 6.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn gamma_values() {
        assert!((ln_gamma(5.0) - 24f64.ln()).abs() < 1e-12);
        assert!((ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-12);
    }

    #[test]
    fn t_tail_with_one_df_is_cauchy() {
        for t in [0.3, 1.0, 4.0] {
            let exact = 1.0 - 2.0 * f64::atan(t) / std::f64::consts::PI;
            assert!((t_two_sided_p(t, 1.0) - exact).abs() < 1e-12);
        }
        assert!((t_critical(0.95, 1e7) - 1.959964).abs() < 1e-5);
        assert!((t_critical(0.95, 4.0) - 2.776445).abs() < 1e-5);
    }

    #[test]
    fn t_test_degenerate_cases() {
        let x = [1.0, 2.0, 3.0];
        assert!(paired_t_test(&x, &x).is_err());
        assert!(paired_t_test(&[2.0, 3.0, 4.0], &x).is_err());
        assert!(paired_t_test(&[1.0], &[0.0]).is_err());
    }

    #[test]
    fn t_test_is_translation_invariant() {
        let x = [1.0, 2.5, 2.0, 4.0];
        let y = [0.5, 2.0, 2.6, 3.0];
        let a = paired_t_test(&x, &y).unwrap();
        let xs: Vec<f64> = x.iter().map(|v| v + 7.0).collect();
        let ys: Vec<f64> = y.iter().map(|v| v + 7.0).collect();
        let b = paired_t_test(&xs, &ys).unwrap();
        assert!((a.t - b.t).abs() < 1e-12);
        assert!((a.p_value - b.p_value).abs() < 1e-12);
    }

    #[test]
    fn f1_cases() {
        use Label::*;
        let r = [Truthful, Deceptive, Truthful, Deceptive];
        assert_eq!(f1_score(&r, &r, Deceptive).unwrap(), 1.0);
        let constant = [Deceptive; 4];
        assert!((f1_score(&r, &constant, Deceptive).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(f1_score(&r, &[Truthful; 4], Deceptive).unwrap(), 0.0);
    }

    #[test]
    fn summary_fractions() {
        let s = distribution_summary(&[-1.0, 1.0, 3.0]).unwrap();
        assert!((s.frac_inconsistent - 1.0 / 3.0).abs() < 1e-15);
        assert!((s.frac_consistent - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(s.histogram.counts.iter().sum::<usize>(), 3);
        let z = distribution_summary(&[0.0; 4]).unwrap();
        assert_eq!((z.frac_inconsistent, z.frac_consistent), (0.0, 0.0));
        assert_eq!(z.frac_indeterminate, 1.0);
        assert!(distribution_summary(&[]).is_err());
    }

    #[test]
    fn constant_statistic_gives_zero_width() {
        let x: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let cfg = BootstrapConfig::new(0.9, 3).with_resamples(1000);
        let ci = bootstrap_ci(&x, &x, |_, _| Ok(0.25), &cfg, 1).unwrap();
        assert_eq!((ci.lo, ci.hi), (0.25, 0.25));
        assert!(bootstrap_ci(&x, &x, |_, _| Ok(0.0), &cfg.with_resamples(10), 1).is_err());
    }

    #[test]
    fn bootstrap_is_reproducible_across_jobs() {
        let x: Vec<f64> = (0..30).map(|i| ((i * 7) % 11) as f64).collect();
        let y: Vec<f64> = (0..30).map(|i| ((i * 5) % 13) as f64).collect();
        let cfg = BootstrapConfig::new(0.9, 11).with_resamples(1000);
        let a = bootstrap_ci(&x, &y, kendall_tau, &cfg, 1).unwrap();
        let b = bootstrap_ci(&x, &y, kendall_tau, &cfg, 4).unwrap();
        assert_eq!(a, b);
        let wide = bootstrap_ci(
            &x,
            &y,
            kendall_tau,
            &BootstrapConfig { level: 0.95, ..cfg },
            1,
        )
        .unwrap();
        assert!(wide.lo <= a.lo && wide.hi >= a.hi);
    }
}
