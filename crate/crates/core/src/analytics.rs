//! Exact reference quantities for the exceedance process and the statistics
//! used to compare simulations against them.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};
use statrs::function::factorial::ln_factorial;

use crate::error::{Error, Result};
use crate::exceedance::{ExperimentConfig, ReplicationSummary};
use crate::geometry::{log_ball_volume, threshold, Dimension, ThresholdSpec};

/// Confidence level of the intensity intervals.
pub const INTENSITY_LEVEL: f64 = 0.999;

/// `ln Σ_{ℓ<k} x^ℓ/ℓ!` for `x > 0`, accumulated around the largest term.
fn ln_poisson_partial(x: f64, k: usize) -> f64 {
    let lx = x.ln();
    let terms: Vec<f64> = (0..k).map(|l| l as f64 * lx - ln_factorial(l as u64)).collect();
    let top = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    top + terms.iter().map(|t| (t - top).exp()).sum::<f64>().ln()
}

fn level_of(threshold_value: f64, u: f64) -> Result<f64> {
    let x = u + threshold_value;
    if !(x > 0.0) {
        return Err(Error::Precondition(format!(
            "u + threshold must be positive, got {x}"
        )));
    }
    Ok(x)
}

/// Expected number of points of `B_R` whose k-NN ball volume exceeds the
/// threshold by more than `u`:
/// `V(B_R) e^{-(u+v)} Σ_{ℓ<k} (u+v)^ℓ/ℓ!`.
pub fn exact_exceedance_mean(d: Dimension, spec: ThresholdSpec, big_r: f64, u: f64) -> Result<f64> {
    let v = threshold(spec, d, big_r)?;
    let x = level_of(v, u)?;
    Ok((log_ball_volume(d, big_r)? - x + ln_poisson_partial(x, spec.k())).exp())
}

/// Density in `u` of the exceedance intensity, `V(B_R) e^{-x} x^{k-1}/(k-1)!`
/// with `x = u + v`; the negative derivative of [`exact_exceedance_mean`].
pub fn intensity_density(d: Dimension, spec: ThresholdSpec, big_r: f64, u: f64) -> Result<f64> {
    let v = threshold(spec, d, big_r)?;
    let x = level_of(v, u)?;
    let k1 = spec.k() - 1;
    Ok((log_ball_volume(d, big_r)? - x + k1 as f64 * x.ln() - ln_factorial(k1 as u64)).exp())
}

pub fn gumbel_cdf(c: f64) -> f64 {
    (-(-c).exp()).exp()
}

/// Inverse of [`gumbel_cdf`] on `(0, 1)`.
pub fn gumbel_quantile(p: f64) -> f64 {
    -(-p.ln()).ln()
}

pub fn poisson_pmf(lambda: f64, n: u64) -> f64 {
    if lambda == 0.0 {
        return if n == 0 { 1.0 } else { 0.0 };
    }
    (-lambda + n as f64 * lambda.ln() - ln_factorial(n)).exp()
}

pub fn poisson_cdf(lambda: f64, n: u64) -> f64 {
    (0..=n).map(|i| poisson_pmf(lambda, i)).sum::<f64>().min(1.0)
}

/// `λ P(X ≤ k-1) ≤ k P(X ≤ k)` for `X ~ Poisson(λ)`, with 1e-12 slack.
pub fn chen_stein_check(lambda: f64, k: u64) -> bool {
    assert!(lambda > 0.0 && k >= 1, "chen_stein_check needs lambda > 0 and k >= 1");
    lambda * poisson_cdf(lambda, k - 1) <= k as f64 * poisson_cdf(lambda, k) + 1e-12
}

/// Kolmogorov-Smirnov distance between the empirical distribution of a
/// sorted sample and `cdf`, evaluated on both sides of every jump.
pub fn ks_statistic(sample: &[f64], cdf: impl Fn(f64) -> f64) -> Result<f64> {
    if sample.is_empty() {
        return Err(Error::Precondition("empty sample".into()));
    }
    if sample.windows(2).any(|w| !(w[0] <= w[1])) {
        return Err(Error::Precondition("sample must be sorted and free of NaN".into()));
    }
    let n = sample.len() as f64;
    let mut d: f64 = 0.0;
    let mut i = 0;
    while i < sample.len() {
        let x = sample[i];
        let mut j = i;
        while j < sample.len() && sample[j] == x {
            j += 1;
        }
        let f = cdf(x);
        d = d.max((f - i as f64 / n).abs()).max((j as f64 / n - f).abs());
        i = j;
    }
    Ok(d.min(1.0))
}

/// Dvoretzky-Kiefer-Wolfowitz bound `sqrt(ln(2/α)/(2n))`; zero for α ≥ 2.
pub fn dkw_bound(n: usize, alpha: f64) -> f64 {
    ((2.0 / alpha).ln() / (2.0 * n as f64)).max(0.0).sqrt()
}

/// Total variation distance between the empirical law given by the
/// histogram `counts` (entry `n` is the number of observations equal to `n`)
/// and Poisson(λ), including the Poisson mass beyond the histogram.
pub fn tv_empirical_poisson(counts: &[u64], lambda: f64) -> Result<f64> {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(Error::Precondition("histogram has no mass".into()));
    }
    let mut covered = 0.0;
    let mut diff = 0.0;
    for (n, &c) in counts.iter().enumerate() {
        let p = poisson_pmf(lambda, n as u64);
        covered += p;
        diff += (c as f64 / total as f64 - p).abs();
    }
    Ok((0.5 * (diff + (1.0 - covered).max(0.0))).clamp(0.0, 1.0))
}

/// Histogram of integer observations.
pub fn histogram(values: impl IntoIterator<Item = usize>) -> Vec<u64> {
    let mut h = Vec::new();
    for v in values {
        if v >= h.len() {
            h.resize(v + 1, 0);
        }
        h[v] += 1;
    }
    h
}

/// Pearson chi-square statistic and its upper-tail p-value with
/// `observed.len() - 1` degrees of freedom.
pub fn chi_square(observed: &[f64], expected: &[f64]) -> Result<(f64, f64)> {
    if observed.len() != expected.len() || observed.len() < 2 {
        return Err(Error::Precondition("need matching bins, at least two".into()));
    }
    if expected.iter().any(|&e| !(e > 0.0)) {
        return Err(Error::Precondition("expected counts must be positive".into()));
    }
    let stat: f64 = observed.iter().zip(expected).map(|(o, e)| (o - e).powi(2) / e).sum();
    let dist = ChiSquared::new((observed.len() - 1) as f64).expect("positive degrees of freedom");
    Ok((stat, dist.sf(stat)))
}

/// Two-sided standard normal quantile for confidence `level`.
pub fn normal_quantile(level: f64) -> f64 {
    Normal::standard().inverse_cdf(0.5 + 0.5 * level)
}

/// Outcome of one goodness-of-fit comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GofReport {
    pub name: String,
    pub value: f64,
    pub n: usize,
    pub threshold: f64,
    pub pass: bool,
}

impl GofReport {
    pub fn new(name: impl Into<String>, value: f64, n: usize, threshold: f64) -> Self {
        Self {
            name: name.into(),
            value,
            n,
            threshold,
            pass: value <= threshold,
        }
    }
}

/// Empirical and exact mean exceedance counts on a grid of levels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntensityCurve {
    pub grid: Vec<f64>,
    pub exact: Vec<f64>,
    pub empirical_mean: Vec<f64>,
    pub empirical_ci_halfwidth: Vec<f64>,
    pub level: f64,
}

impl IntensityCurve {
    /// Whether the exact value at grid point `i` lies in the empirical interval.
    pub fn passes(&self, i: usize) -> bool {
        (self.empirical_mean[i] - self.exact[i]).abs() <= self.empirical_ci_halfwidth[i]
    }

    pub fn all_pass(&self) -> bool {
        (0..self.grid.len()).all(|i| self.passes(i))
    }
}

/// Mean record count above each `u` over replications, with normal
/// intervals at [`INTENSITY_LEVEL`] from the sample standard deviation.
/// Levels must lie in `[c, u_cap)`: records only exist above `c`, and
/// heights are censored at `u_cap`.
pub fn build_intensity_curve(
    summaries: &[ReplicationSummary],
    config: &ExperimentConfig,
    u_grid: &[f64],
) -> Result<IntensityCurve> {
    if summaries.is_empty() {
        return Err(Error::Precondition("no replications".into()));
    }
    if let Some(u) = u_grid.iter().find(|&&u| !(u >= config.c && u < config.u_cap)) {
        return Err(Error::Config(format!(
            "grid value {u} outside [{}, {})",
            config.c, config.u_cap
        )));
    }
    let spec = config.threshold_spec()?;
    let n = summaries.len() as f64;
    let z = normal_quantile(INTENSITY_LEVEL);
    let mut curve = IntensityCurve {
        grid: u_grid.to_vec(),
        exact: Vec::with_capacity(u_grid.len()),
        empirical_mean: Vec::with_capacity(u_grid.len()),
        empirical_ci_halfwidth: Vec::with_capacity(u_grid.len()),
        level: INTENSITY_LEVEL,
    };
    for &u in u_grid {
        let counts: Vec<f64> = summaries.iter().map(|s| s.count_above(u) as f64).collect();
        let mean = counts.iter().sum::<f64>() / n;
        let var = if counts.len() > 1 {
            counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        curve.exact.push(exact_exceedance_mean(config.d, spec, config.big_r, u)?);
        curve.empirical_mean.push(mean);
        curve.empirical_ci_halfwidth.push(z * (var / n).sqrt());
    }
    Ok(curve)
}

/// Sorted maximum heights of the replications that have one.
pub fn sorted_max_heights(summaries: &[ReplicationSummary]) -> Vec<f64> {
    let mut m: Vec<f64> = summaries.iter().filter_map(|s| s.max_height).collect();
    m.sort_by(f64::total_cmp);
    m
}

/// Fraction of a sorted sample at or below `x`.
pub fn empirical_cdf(sorted: &[f64], x: f64) -> f64 {
    sorted.partition_point(|&s| s <= x) as f64 / sorted.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{ball_volume, ThresholdKind};
    use crate::quadrature::{integrate, Tolerance};
    use crate::sampling::SeedSpec;
    use proptest::prelude::*;
    use rand::Rng;

    fn dim(d: usize) -> Dimension {
        Dimension::new(d).unwrap()
    }

    fn std(k: usize) -> ThresholdSpec {
        ThresholdSpec::standard(k).unwrap()
    }

    fn close(a: f64, b: f64, rel: f64) -> bool {
        (a - b).abs() <= rel * b.abs().max(1e-300)
    }

    #[test]
    fn exact_mean_examples() {
        // High-precision values; the commonly quoted 0.98661, 0.36299 and
        // 1.7274 are rounded from a slightly different evaluation.
        let m0 = exact_exceedance_mean(dim(2), std(1), 5.0, 0.0).unwrap();
        assert!(close(m0, 0.986_569_505_931_591_6, 1e-12), "{m0}");
        assert!((m0 - 0.98661).abs() < 1e-4);
        let m1 = exact_exceedance_mean(dim(2), std(1), 5.0, 1.0).unwrap();
        assert!(close(m1, 0.362_938_638_518_899_9, 1e-12), "{m1}");
        assert!((m1 - 0.36299).abs() < 1e-4);
        assert!(close(m1, m0 * (-1.0f64).exp(), 1e-13));
        let m2 = exact_exceedance_mean(dim(2), std(2), 5.0, 0.0).unwrap();
        assert!(close(m2, 1.727_318_999_918_960_3, 1e-12), "{m2}");
        assert!((m2 - 1.7274).abs() < 1e-4);
        let direct = ball_volume(dim(2), 8.0).unwrap() * (-(8.0 + std::f64::consts::PI.ln())).exp();
        assert!(close(exact_exceedance_mean(dim(2), std(1), 8.0, 0.0).unwrap(), direct, 1e-12));
        assert!(exact_exceedance_mean(dim(2), std(1), 5.0, -7.0).is_err());
    }

    #[test]
    fn exact_mean_tends_to_gumbel_intensity() {
        for u in [0.0, 1.0, 3.0] {
            let mut prev = f64::INFINITY;
            for r in [5.0, 10.0, 15.0, 20.0] {
                let gap = (exact_exceedance_mean(dim(2), std(1), r, u).unwrap() - (-u).exp()).abs();
                assert!(gap < prev, "u={u} R={r}");
                prev = gap;
            }
            assert!(prev < 1e-6);
        }
    }

    #[test]
    fn log_volume_threshold_gives_pure_exponential() {
        let spec = ThresholdSpec::new(ThresholdKind::LogVolume, 1).unwrap();
        for d in 2..=6 {
            for r in [2.0, 5.0, 10.0] {
                for u in [0.0, 0.5, 4.0] {
                    let m = exact_exceedance_mean(dim(d), spec, r, u).unwrap();
                    assert!(close(m, (-u).exp(), 1e-12), "d={d} R={r} u={u}: {m}");
                }
            }
        }
    }

    #[test]
    fn density_matches_closed_form_and_derivative() {
        use crate::geometry::unit_sphere_area;
        for (d, k, r) in [(2, 1, 5.0), (2, 2, 8.0), (3, 1, 6.0), (3, 3, 6.0), (5, 2, 4.0)] {
            let dd = dim(d);
            let m = (d - 1) as f64;
            for u in [-0.5, 0.0, 1.0, 2.5] {
                let rho = intensity_density(dd, std(k), r, u).unwrap();
                let v = threshold(std(k), dd, r).unwrap();
                let expanded = (-u).exp() * ball_volume(dd, r).unwrap() * 2f64.powf(m) * m * (-r * m).exp()
                    * (u + v).powi(k as i32 - 1)
                    / (unit_sphere_area(d) * (r * m).powi(k as i32 - 1));
                assert!(close(rho, expanded, 1e-11), "d={d} k={k} u={u}");
                let h = 1e-4;
                let num = (exact_exceedance_mean(dd, std(k), r, u - h).unwrap()
                    - exact_exceedance_mean(dd, std(k), r, u + h).unwrap())
                    / (2.0 * h);
                assert!(close(num, rho, 1e-6), "d={d} k={k} u={u}: {num} vs {rho}");
            }
        }
        let rho0 = intensity_density(dim(2), std(1), 5.0, 0.0).unwrap();
        assert!(close(rho0, exact_exceedance_mean(dim(2), std(1), 5.0, 0.0).unwrap(), 1e-13));
    }

    #[test]
    fn density_integrates_to_mean() {
        for (d, k, r, c) in [(2, 1, 5.0, 0.0), (2, 2, 8.0, -1.0), (3, 2, 6.0, 0.5), (4, 3, 5.0, 0.0)] {
            let dd = dim(d);
            let tol = Tolerance::new(0.0, 1e-12);
            let tail = integrate(|u| intensity_density(dd, std(k), r, u).unwrap(), c, c + 80.0, tol);
            let exact = exact_exceedance_mean(dd, std(k), r, c).unwrap();
            assert!(close(tail.value, exact, 1e-8), "d={d} k={k}: {} vs {exact}", tail.value);
        }
    }

    #[test]
    fn density_over_exponential_is_constant_for_k1() {
        let base = intensity_density(dim(3), std(1), 6.0, 0.0).unwrap();
        for u in [0.5, 1.0, 4.0] {
            let rho = intensity_density(dim(3), std(1), 6.0, u).unwrap();
            assert!(close(rho / (-u).exp(), base, 1e-13));
        }
    }

    #[test]
    fn gumbel_examples() {
        assert!((gumbel_cdf(0.0) - 0.3678794).abs() < 1e-7);
        assert!((gumbel_cdf(2.0) - 0.8734230).abs() < 1e-7);
        assert_eq!(gumbel_cdf(50.0), 1.0);
        assert_eq!(gumbel_cdf(-50.0), 0.0);
        for p in [0.01, 0.3, 0.9] {
            assert!((gumbel_cdf(gumbel_quantile(p)) - p).abs() < 1e-14);
        }
    }

    #[test]
    fn poisson_examples() {
        assert!((poisson_pmf(1.0, 0) - 0.367879).abs() < 1e-6);
        assert!((poisson_cdf(3.0, 1) - 0.199148).abs() < 1e-6);
        for lambda in [0.1f64, 1.0, 7.5, 30.0, 50.0] {
            let top = (lambda + 20.0 * lambda.sqrt() + 30.0) as u64;
            let total: f64 = (0..=top).map(|n| poisson_pmf(lambda, n)).sum();
            assert!((total - 1.0).abs() < 1e-12, "{lambda}: {total}");
        }
        assert_eq!(poisson_pmf(0.0, 0), 1.0);
        assert_eq!(poisson_pmf(0.0, 3), 0.0);
    }

    #[test]
    fn chen_stein_examples_and_sweep() {
        assert!((3.0 * poisson_cdf(3.0, 1) - 0.597445).abs() < 1e-6);
        assert!((2.0 * poisson_cdf(3.0, 2) - 0.846381).abs() < 1e-6);
        assert!(chen_stein_check(3.0, 2));
        assert!(chen_stein_check(1e-9, 1));
        for i in 0..=200 {
            let lambda = 50.0 * 10f64.powf(-6.0 * (1.0 - i as f64 / 200.0));
            for k in 1..=20 {
                assert!(chen_stein_check(lambda, k), "λ={lambda} k={k}");
            }
        }
    }

    #[test]
    fn ks_examples() {
        let d = ks_statistic(&[0.0], gumbel_cdf).unwrap();
        assert!((d - 0.6321206).abs() < 1e-7);
        let n = 500;
        let quantiles: Vec<f64> = (1..=n).map(|i| gumbel_quantile((i as f64 - 0.5) / n as f64)).collect();
        assert!((ks_statistic(&quantiles, gumbel_cdf).unwrap() - 0.5 / n as f64).abs() < 1e-12);
        assert!(ks_statistic(&[], gumbel_cdf).is_err());
        assert!(ks_statistic(&[1.0, 0.0], gumbel_cdf).is_err());
    }

    #[test]
    fn ks_handles_ties() {
        let c = gumbel_cdf(0.0);
        let d = ks_statistic(&[0.0, 0.0, 1.0], gumbel_cdf).unwrap();
        assert!((d - (2.0 / 3.0 - c).max(c).max((1.0 - gumbel_cdf(1.0)).max(gumbel_cdf(1.0) - 2.0 / 3.0))).abs() < 1e-15);
    }

    #[test]
    fn ks_null_calibration_with_synthetic_gumbel() {
        let n = 1000;
        let mut failures = 0;
        for rep in 0..50 {
            let mut rng = SeedSpec::new(404, rep).rng();
            let mut draws: Vec<f64> = (0..n).map(|_| gumbel_quantile(rng.random::<f64>())).collect();
            draws.sort_by(f64::total_cmp);
            if ks_statistic(&draws, gumbel_cdf).unwrap() > dkw_bound(n, 0.01) {
                failures += 1;
            }
        }
        // P(exceed) ≤ 0.01 per draw; three or more failures in 50 has probability < 0.02.
        assert!(failures <= 2, "{failures}");
    }

    #[test]
    fn dkw_examples() {
        assert!((dkw_bound(1000, 0.01) - 0.0515).abs() < 5e-5);
        assert!(dkw_bound(10_000_000, 0.01) < 1e-3);
        assert_eq!(dkw_bound(10, 2.0), 0.0);
    }

    #[test]
    fn tv_examples() {
        let lambda = 1.3;
        let scale = 1e12;
        let counts: Vec<u64> = (0..40).map(|n| (poisson_pmf(lambda, n) * scale).round() as u64).collect();
        assert!(tv_empirical_poisson(&counts, lambda).unwrap() < 1e-10);
        let tv = tv_empirical_poisson(&[10], 1.0).unwrap();
        assert!((tv - (1.0 - (-1.0f64).exp())).abs() < 1e-12);
        assert!(tv_empirical_poisson(&[], 1.0).is_err());
        assert!(tv_empirical_poisson(&[0, 0], 1.0).is_err());
    }

    #[test]
    fn histogram_counts() {
        assert_eq!(histogram([0, 2, 2, 5]), vec![1, 0, 2, 0, 0, 1]);
        assert!(histogram(std::iter::empty()).is_empty());
    }

    #[test]
    fn chi_square_basics() {
        let (stat, p) = chi_square(&[10.0, 10.0], &[10.0, 10.0]).unwrap();
        assert_eq!(stat, 0.0);
        assert!((p - 1.0).abs() < 1e-12);
        let (_, p) = chi_square(&[30.0, 0.0], &[15.0, 15.0]).unwrap();
        assert!(p < 1e-6);
        assert!(chi_square(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn normal_quantile_level() {
        assert!((normal_quantile(0.999) - 3.2905267).abs() < 1e-6);
        assert!((normal_quantile(0.95) - 1.9599640).abs() < 1e-6);
    }

    fn summary(heights: &[f64]) -> ReplicationSummary {
        use crate::exceedance::ExceedanceRecord;
        use crate::geometry::HPoint;
        ReplicationSummary {
            replication_id: 0,
            records: heights
                .iter()
                .map(|&h| ExceedanceRecord {
                    position: HPoint::origin(dim(2)),
                    height: h,
                    censored: false,
                })
                .collect(),
            max_height: heights.iter().copied().reduce(f64::max),
            n_points_in_br: heights.len(),
            n_censored: 0,
        }
    }

    #[test]
    fn intensity_curve_statistics() {
        let config = ExperimentConfig::new(dim(2), 1, 8.0);
        let sums = vec![summary(&[0.5, 1.5]), summary(&[]), summary(&[2.5])];
        let curve = build_intensity_curve(&sums, &config, &[0.1, 1.0, 2.0, 3.0]).unwrap();
        assert_eq!(curve.empirical_mean, vec![1.0, 2.0 / 3.0, 1.0 / 3.0, 0.0]);
        let z = normal_quantile(0.999);
        assert!((curve.empirical_ci_halfwidth[0] - z * (1.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert_eq!(curve.empirical_ci_halfwidth[3], 0.0);
        assert!(curve.exact.windows(2).all(|w| w[1] < w[0]));
        assert!(build_intensity_curve(&sums, &config, &[0.0]).is_ok());
        assert!(build_intensity_curve(&sums, &config, &[-0.5]).is_err());
        assert!(build_intensity_curve(&sums, &config, &[15.0]).is_err());
        assert!(build_intensity_curve(&[], &config, &[1.0]).is_err());
        let near_cap = build_intensity_curve(&sums, &config, &[14.9]).unwrap();
        assert!(near_cap.exact[0] < 1e-6);
    }

    #[test]
    fn gof_report_pass_flag() {
        assert!(GofReport::new("ks", 0.05, 100, 0.08).pass);
        assert!(!GofReport::new("ks", 0.09, 100, 0.08).pass);
        assert!(GofReport::new("ks", 0.08, 100, 0.08).pass);
    }

    proptest! {
        #[test]
        fn ks_in_unit_interval(mut xs in prop::collection::vec(-5.0f64..5.0, 1..60)) {
            xs.sort_by(f64::total_cmp);
            let d = ks_statistic(&xs, gumbel_cdf).unwrap();
            prop_assert!((0.0..=1.0).contains(&d));
        }

        #[test]
        fn tv_in_unit_interval(counts in prop::collection::vec(0u64..50, 1..30), lambda in 0.01f64..40.0) {
            prop_assume!(counts.iter().sum::<u64>() > 0);
            let tv = tv_empirical_poisson(&counts, lambda).unwrap();
            prop_assert!((0.0..=1.0).contains(&tv));
        }

        #[test]
        fn exact_mean_decreases_in_u(d in 2usize..7, k in 1usize..5, r in 3.0f64..15.0, u in -1.0f64..10.0) {
            let a = exact_exceedance_mean(dim(d), std(k), r, u).unwrap();
            let b = exact_exceedance_mean(dim(d), std(k), r, u + 0.25).unwrap();
            prop_assert!(b < a);
        }

        #[test]
        fn chen_stein_holds(lambda in 1e-6f64..50.0, k in 1u64..21) {
            prop_assert!(chen_stein_check(lambda, k));
        }
    }
}
