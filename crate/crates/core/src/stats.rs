//! Two-sample hypothesis tests and Monte-Carlo power estimation.
//!
//! Sampled bitstrings are first mapped to real numbers (a weighted
//! integer map under a random bit permutation, or postprocessed
//! energies) and two sample sets are then compared with either the
//! two-sample Kolmogorov-Smirnov test or the Epps-Singleton test.  A
//! test keeps or rejects the null hypothesis that both samples come
//! from the same distribution; the Monte-Carlo harness repeats that
//! decision on freshly drawn data to estimate the keep probability.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;

/// Default significance level used by the experiment drivers.
pub const DEFAULT_ALPHA: f64 = 0.05;

/// Relative singular-value cutoff of the pseudo-inverse in the
/// Epps-Singleton statistic.
const PINV_CUTOFF: f64 = 1e-10;

/// Which two-sample test to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TestKind {
    Ks,
    Es,
}

impl TestKind {
    pub fn name(self) -> &'static str {
        match self {
            TestKind::Ks => "ks",
            TestKind::Es => "es",
        }
    }
}

impl std::str::FromStr for TestKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ks" => Ok(TestKind::Ks),
            "es" => Ok(TestKind::Es),
            other => Err(Error::InvalidConfig(format!(
                "unknown test kind '{other}' (expected 'ks' or 'es')"
            ))),
        }
    }
}

/// Result of a single two-sample test.
#[derive(Debug, Clone, Serialize)]
pub struct TestOutcome {
    pub test: TestKind,
    /// KS: the ECDF sup-distance d.  ES: the quadratic form W.
    pub statistic: f64,
    pub p_value: f64,
    pub alpha: f64,
    /// True when the null hypothesis (same distribution) is rejected,
    /// i.e. when `p_value < alpha`.
    pub reject: bool,
    /// Rank of the estimated covariance matrix (ES only).
    pub rank: Option<usize>,
    pub k: usize,
    pub l: usize,
}

fn check_sample(name: &str, vals: &[f64]) -> Result<()> {
    if vals.is_empty() {
        return Err(Error::DegenerateSample(format!("sample {name} is empty")));
    }
    if vals.iter().any(|v| !v.is_finite()) {
        return Err(Error::DegenerateSample(format!(
            "sample {name} contains a non-finite value"
        )));
    }
    Ok(())
}

/// Map a bitstring to the weighted integer `sum_i 2^(i+1) * x[perm[i]]`.
///
/// The weights are exact in an f64 for widths up to 52 bits; distinct
/// bitstrings map to distinct values for any fixed permutation.
pub fn bits_to_int(bits: &[u8], perm: &[usize]) -> Result<f64> {
    if bits.len() != perm.len() {
        return Err(Error::LengthMismatch(format!(
            "bitstring length {} does not match permutation length {}",
            bits.len(),
            perm.len()
        )));
    }
    let mut acc = 0.0;
    let mut weight = 2.0;
    for &src in perm {
        if src >= bits.len() {
            return Err(Error::IndexOutOfRange {
                index: src,
                width: bits.len(),
            });
        }
        acc += weight * f64::from(bits[src]);
        weight *= 2.0;
    }
    Ok(acc)
}

/// Uniformly random permutation of `0..n`.
pub fn random_permutation<R: rand::Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}

/// Apply [`bits_to_int`] to every sampled bitstring.
pub fn map_samples(samples: &[Vec<u8>], perm: &[usize]) -> Result<Vec<f64>> {
    samples.iter().map(|b| bits_to_int(b, perm)).collect()
}

/// Sup-distance between the two empirical CDFs, evaluated after every
/// pooled jump point.
pub fn ks_statistic(xs: &[f64], ys: &[f64]) -> Result<f64> {
    check_sample("xs", xs)?;
    check_sample("ys", ys)?;
    let mut a = xs.to_vec();
    let mut b = ys.to_vec();
    a.sort_by(|x, y| x.partial_cmp(y).expect("finite values"));
    b.sort_by(|x, y| x.partial_cmp(y).expect("finite values"));
    let (k, l) = (a.len(), b.len());
    let (mut i, mut j) = (0usize, 0usize);
    let mut d = 0.0f64;
    while i < k && j < l {
        let v = a[i].min(b[j]);
        while i < k && a[i] == v {
            i += 1;
        }
        while j < l && b[j] == v {
            j += 1;
        }
        d = d.max((i as f64 / k as f64 - j as f64 / l as f64).abs());
    }
    Ok(d)
}

/// Survival function of the asymptotic Kolmogorov distribution.
///
/// The alternating series (100 terms) converges quickly for lambda
/// around one and above; below one the equivalent theta-function series
/// is used so that small arguments stay accurate.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    use std::f64::consts::PI;
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.0 {
        let mut cdf = 0.0;
        for j in 1..=20u32 {
            let t = f64::from(2 * j - 1);
            cdf += (-t * t * PI * PI / (8.0 * lambda * lambda)).exp();
        }
        cdf *= (2.0 * PI).sqrt() / lambda;
        (1.0 - cdf).clamp(0.0, 1.0)
    } else {
        let mut s = 0.0;
        for j in 1..=100u32 {
            let sign = if j % 2 == 1 { 1.0 } else { -1.0 };
            let jf = f64::from(j);
            s += sign * (-2.0 * jf * jf * lambda * lambda).exp();
        }
        (2.0 * s).clamp(0.0, 1.0)
    }
}

/// Survival function of the chi-squared distribution with `df` degrees
/// of freedom, via the upper regularized incomplete gamma function.
pub fn chi2_sf(x: f64, df: usize) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if df == 0 {
        // Point mass at zero: a positive threshold is never exceeded.
        return 0.0;
    }
    statrs::function::gamma::gamma_ur(df as f64 / 2.0, x / 2.0)
}

/// Two-sample Kolmogorov-Smirnov test with the asymptotic p-value at
/// effective size `k*l/(k+l)`.
pub fn ks_two_sample(xs: &[f64], ys: &[f64], alpha: f64) -> Result<TestOutcome> {
    let d = ks_statistic(xs, ys)?;
    let (k, l) = (xs.len(), ys.len());
    let effective = (k as f64) * (l as f64) / ((k + l) as f64);
    let p = kolmogorov_sf(d * effective.sqrt());
    Ok(TestOutcome {
        test: TestKind::Ks,
        statistic: d,
        p_value: p,
        alpha,
        reject: p < alpha,
        rank: None,
        k,
        l,
    })
}

/// Half the spread between the 25th and 75th order statistics of the
/// pooled sample (1-based floor indices).
pub fn semi_interquartile_range(pooled: &[f64]) -> Result<f64> {
    if pooled.len() < 4 {
        return Err(Error::DegenerateSample(format!(
            "pooled sample of size {} is too small for a quartile spread",
            pooled.len()
        )));
    }
    let mut s = pooled.to_vec();
    s.sort_by(|x, y| x.partial_cmp(y).expect("finite values"));
    let n = s.len();
    let lo = (n / 4).max(1);
    let hi = ((3 * n) / 4).max(1);
    Ok(0.5 * (s[hi - 1] - s[lo - 1]))
}

/// Two-sample Epps-Singleton test.
///
/// The empirical characteristic functions are compared at t1 = 0.4/s
/// and t2 = 0.8/s where s is the pooled semi-interquartile range; the
/// quadratic form W of the difference, weighted by the pseudo-inverse
/// of the estimated covariance, is asymptotically chi-squared with as
/// many degrees of freedom as the covariance estimate has rank.
pub fn es_two_sample(xs: &[f64], ys: &[f64], alpha: f64) -> Result<TestOutcome> {
    use nalgebra::{Matrix4, Vector4};

    check_sample("xs", xs)?;
    check_sample("ys", ys)?;
    let pooled: Vec<f64> = xs.iter().chain(ys.iter()).copied().collect();
    let sigma = semi_interquartile_range(&pooled)?;
    if sigma <= 0.0 {
        return Err(Error::DegenerateSample(
            "pooled semi-interquartile range is zero".into(),
        ));
    }
    let (t1, t2) = (0.4 / sigma, 0.8 / sigma);
    let g = |v: f64| {
        Vector4::new(
            (t1 * v).cos(),
            (t1 * v).sin(),
            (t2 * v).cos(),
            (t2 * v).sin(),
        )
    };

    // Biased covariance of the transformed values, computed in centered
    // form so the estimate stays positive semidefinite even when a
    // sample is (nearly) constant.
    let moments = |vals: &[f64]| -> (Vector4<f64>, Matrix4<f64>) {
        let n = vals.len() as f64;
        let gs: Vec<Vector4<f64>> = vals.iter().map(|&v| g(v)).collect();
        let mut mean = Vector4::zeros();
        for gv in &gs {
            mean += gv;
        }
        mean /= n;
        let mut cov = Matrix4::zeros();
        for gv in &gs {
            let d = gv - mean;
            cov += d * d.transpose();
        }
        cov /= n;
        (mean, cov)
    };

    let (n1, n2) = (xs.len() as f64, ys.len() as f64);
    let (gb1, s1) = moments(xs);
    let (gb2, s2) = moments(ys);
    let omega = ((n1 + n2) / 2.0) * (1.0 / n1 + 1.0 / n2) * (s1 + s2);
    let gdiff = gb1 - gb2;

    let svd = omega.svd(true, true);
    let u = svd.u.expect("svd with u");
    let vt = svd.v_t.expect("svd with v_t");
    let smax = svd.singular_values.max();
    let cutoff = PINV_CUTOFF * smax;
    let mut pinv = Matrix4::zeros();
    let mut rank = 0usize;
    for idx in 0..4 {
        let sv = svd.singular_values[idx];
        if sv > cutoff && sv > 0.0 {
            rank += 1;
            pinv += vt.row(idx).transpose() * u.column(idx).transpose() / sv;
        }
    }
    let w = (n1 + n2) * (gdiff.transpose() * pinv * gdiff)[(0, 0)];
    // Zero estimated covariance with a nonzero difference means the
    // samples are distinct atoms: reject outright.
    let p = if rank == 0 { 0.0 } else { chi2_sf(w, rank) };
    Ok(TestOutcome {
        test: TestKind::Es,
        statistic: w,
        p_value: p,
        alpha,
        reject: p < alpha,
        rank: Some(rank),
        k: xs.len(),
        l: ys.len(),
    })
}

/// Run the chosen test.
pub fn run_test(kind: TestKind, xs: &[f64], ys: &[f64], alpha: f64) -> Result<TestOutcome> {
    match kind {
        TestKind::Ks => ks_two_sample(xs, ys, alpha),
        TestKind::Es => es_two_sample(xs, ys, alpha),
    }
}

/// Decision helper for Monte-Carlo loops: true when the null is kept.
///
/// The ES statistic is undefined when the pooled quartile spread
/// degenerates to zero; such draws fall back to the KS decision so a
/// power estimate never aborts mid-loop.
pub fn keeps_null(kind: TestKind, xs: &[f64], ys: &[f64], alpha: f64) -> Result<bool> {
    match run_test(kind, xs, ys, alpha) {
        Ok(outcome) => Ok(!outcome.reject),
        Err(Error::DegenerateSample(_)) if kind == TestKind::Es => {
            Ok(!ks_two_sample(xs, ys, alpha)?.reject)
        }
        Err(e) => Err(e),
    }
}

/// 95% Wilson score interval for `successes` out of `trials`.
pub fn wilson_interval(successes: usize, trials: usize) -> (f64, f64) {
    const Z: f64 = 1.959963984540054;
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = Z * Z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = Z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// Keep-probability estimate with its confidence interval.
#[derive(Debug, Clone, Serialize)]
pub struct PowerEstimate {
    /// Fraction of repetitions in which the test kept the null.
    pub keep_rate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub reps: usize,
}

/// Repeat a keep/reject trial `reps` times with independent RNG
/// streams and aggregate the keep fraction with a Wilson interval.
///
/// Stream `i + 1` of the seeded generator is dedicated to repetition
/// `i`, so results do not depend on worker scheduling.
pub fn monte_carlo_keep_rate<F>(reps: usize, seed: u64, trial: F) -> Result<PowerEstimate>
where
    F: Fn(usize, &mut ChaCha8Rng) -> Result<bool> + Sync + Send,
{
    if reps == 0 {
        return Err(Error::InvalidConfig("reps must be positive".into()));
    }
    let outcomes: Vec<Result<bool>> = par::map_indexed(reps, |i| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64 + 1);
        trial(i, &mut rng)
    });
    let mut kept = 0usize;
    for o in outcomes {
        if o? {
            kept += 1;
        }
    }
    let (ci_low, ci_high) = wilson_interval(kept, reps);
    Ok(PowerEstimate {
        keep_rate: kept as f64 / reps as f64,
        ci_low,
        ci_high,
        reps,
    })
}

/// Estimate the probability that the test keeps the null when fed
/// `shots` fresh bitstrings from each of two samplers per repetition.
///
/// Every repetition draws a fresh random bit permutation and maps both
/// sample sets through the same weighted integer map.
pub fn estimate_power<A, B>(
    sampler_a: A,
    sampler_b: B,
    n_bits: usize,
    shots: usize,
    kind: TestKind,
    alpha: f64,
    reps: usize,
    seed: u64,
) -> Result<PowerEstimate>
where
    A: Fn(usize, &mut ChaCha8Rng) -> Result<Vec<Vec<u8>>> + Sync + Send,
    B: Fn(usize, &mut ChaCha8Rng) -> Result<Vec<Vec<u8>>> + Sync + Send,
{
    monte_carlo_keep_rate(reps, seed, |_, rng| {
        let a = sampler_a(shots, rng)?;
        let b = sampler_b(shots, rng)?;
        let perm = random_permutation(n_bits, rng);
        let xs = map_samples(&a, &perm)?;
        let ys = map_samples(&b, &perm)?;
        keeps_null(kind, &xs, &ys, alpha)
    })
}

/// Success criterion for distinguishing two states: the estimated keep
/// probability is at most alpha (boundary inclusive).
pub fn distinguish_success(keep_rate: f64, alpha: f64) -> bool {
    keep_rate <= alpha
}
