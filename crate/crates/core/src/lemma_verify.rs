//! Deterministic and Monte Carlo oracles for the volume estimates behind the
//! exceedance limit: growth of ball volumes, the volume of the difference of
//! two balls of equal radius, and the two-sided exponential sandwich.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::analytics::{normal_quantile, GofReport};
use crate::error::{Error, Result};
use crate::geometry::{
    acosh1p, ball_volume, chord, point_at, polar_key_into, unit_sphere_area, Dimension, VolumeTable,
    MAX_RADIUS, POLAR_HEADER,
};
use crate::quadrature::{integrate, integrate_with_breaks, Tolerance};
use crate::sampling::{fill_direction, SeedSpec};

/// Relative slack allowed on every inequality check.
const BOUND_SLACK: f64 = 1e-12;

/// Two balls of common radius `r` whose centres are `s` apart.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BallPairSpec {
    pub d: Dimension,
    pub r: f64,
    pub s: f64,
}

impl BallPairSpec {
    pub fn new(d: Dimension, r: f64, s: f64) -> Result<Self> {
        if !(r > 0.0 && r <= MAX_RADIUS) {
            return Err(Error::Radius { value: r, max: MAX_RADIUS });
        }
        if !(s >= 0.0 && s <= MAX_RADIUS) {
            return Err(Error::Precondition(format!("separation must lie in [0, {MAX_RADIUS}], got {s}")));
        }
        Ok(Self { d, r, s })
    }
}

/// Volume of `B(z, r) ∩ B(x, r)` with `d(x, z) = s`, integrating in polar
/// coordinates around `z`: for each radius `t` the admissible directions form
/// a polar cap of angle `θ*(t)` around the direction of `x`, whose measure is
/// integrated numerically.
pub fn ball_intersection_volume(spec: BallPairSpec) -> f64 {
    let BallPairSpec { d, r, s } = spec;
    if s >= 2.0 * r {
        return 0.0;
    }
    let m = d.get() - 1;
    let full = ball_volume(d, r).expect("radius validated");
    let omega = unit_sphere_area(m);
    let inner_tol = Tolerance::new(0.0, 1e-13);
    let cap = |theta: f64| -> f64 {
        if m == 1 {
            theta
        } else {
            integrate(|a| a.sin().powi(m as i32 - 1), 0.0, theta, inner_tol).value
        }
    };
    let (cs, ss, cr) = (s.cosh(), s.sinh(), r.cosh());
    let integrand = |t: f64| -> f64 {
        let (ct, st) = (t.cosh(), t.sinh());
        let denom = ss * st;
        let theta = if denom == 0.0 {
            if cs * ct <= cr { std::f64::consts::PI } else { 0.0 }
        } else {
            let kappa = (cs * ct - cr) / denom;
            if kappa <= -1.0 {
                std::f64::consts::PI
            } else if kappa >= 1.0 {
                0.0
            } else {
                kappa.acos()
            }
        };
        st.powi(m as i32) * cap(theta)
    };
    let tol = Tolerance::new(1e-13 * full, 1e-12);
    let breaks = [0.0, (r - s).abs().min(r), r];
    omega * integrate_with_breaks(integrand, &breaks, tol).value
}

/// Volume of `B(z, r) \ B(x, r)` with `d(x, z) = s`.
pub fn ball_difference_volume(spec: BallPairSpec) -> f64 {
    let full = ball_volume(spec.d, spec.r).expect("radius validated");
    if spec.s == 0.0 {
        return 0.0;
    }
    (full - ball_intersection_volume(spec)).max(0.0)
}

/// Monte Carlo estimate of [`ball_difference_volume`] from `n` uniform points
/// of `B(z, r)`, with the half-width of a 99% normal interval.
pub fn ball_difference_volume_mc(spec: BallPairSpec, n: usize, seed: SeedSpec) -> Result<(f64, f64)> {
    if n < 1000 {
        return Err(Error::Precondition(format!("need at least 1000 samples, got {n}")));
    }
    let BallPairSpec { d, r, s } = spec;
    let table = VolumeTable::get(d);
    let full = table.volume(r);
    if s >= 2.0 * r {
        return Ok((full, 0.0));
    }
    let dd = d.get();
    let mut axis = vec![0.0; dd];
    axis[0] = 1.0;
    let x = point_at(&axis, s)?.polar_key();
    let limit = r;
    let mut rng = seed.rng();
    let mut u = vec![0.0; dd];
    let mut coords = vec![0.0; dd + 1];
    let mut key = vec![0.0; dd + POLAR_HEADER];
    let mut outside = 0usize;
    for _ in 0..n {
        let t = table.inverse(rng.random::<f64>() * full).min(r);
        fill_direction(&mut u, &mut rng);
        let (st, ct) = (t.sinh(), t.cosh());
        coords[0] = ct;
        for (c, ui) in coords[1..].iter_mut().zip(&u) {
            *c = st * ui;
        }
        polar_key_into(&coords, &mut key);
        if acosh1p(chord(&key, &x)) > limit {
            outside += 1;
        }
    }
    let p = outside as f64 / n as f64;
    let half = normal_quantile(0.99) * full * (p * (1.0 - p) / n as f64).sqrt();
    Ok((full * p, half))
}

/// Growth constants `(γ_d, Γ_d)` of `γ e^{(d-1)r} ≤ V(r) ≤ Γ e^{(d-1)r}`, `r ≥ 2`.
pub fn growth_constants(d: Dimension) -> (f64, f64) {
    let m = (d.get() - 1) as f64;
    let w = unit_sphere_area(d.get());
    (w / (2.0 * m * 3f64.powf(m)), w / (m * 2f64.powf(m)))
}

/// Constants `(α₁, α₂)` of the difference bounds
/// `α₁ s e^{(d-1)(r-s/2)} ≤ V(B(z,r) \ B(x,r)) ≤ α₂ s e^{(d-1)r}`.
pub fn difference_constants(d: Dimension) -> (f64, f64) {
    let dd = d.get();
    let m = (dd - 1) as f64;
    let w = unit_sphere_area(dd - 1);
    let a2 = w / (m * 2f64.powf(m - 1.0));
    let a1 = if dd == 2 {
        (-3.0f64).exp()
    } else {
        w / (2.0 * m * (3.0 * (m - 1.0)).exp())
    };
    (a1, a2)
}

/// Outcome of one grid point of a lemma check.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RowStatus {
    Pass,
    Fail,
    /// The grid point lies outside the range where the bound is claimed.
    Skipped,
    /// The bound is not defined or not claimed in this dimension.
    NotApplicable,
}

impl RowStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Pass => "pass",
            Self::Fail => "fail",
            Self::Skipped => "skipped",
            Self::NotApplicable => "not-applicable",
        }
    }

    fn of(lower: Option<f64>, value: f64, upper: Option<f64>) -> Self {
        let lo_ok = lower.is_none_or(|l| l <= value * (1.0 + BOUND_SLACK));
        let hi_ok = upper.is_none_or(|u| value <= u * (1.0 + BOUND_SLACK));
        if lo_ok && hi_ok { Self::Pass } else { Self::Fail }
    }
}

/// One evaluated grid point; `s` is `None` for single-ball checks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LemmaRow {
    pub lemma: &'static str,
    pub d: usize,
    pub r: f64,
    pub s: Option<f64>,
    pub value: f64,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub status: RowStatus,
}

pub const GROWTH: &str = "growth";
pub const DIFFERENCE: &str = "difference";
pub const SANDWICH_LOWER: &str = "sandwich-lower";
pub const SANDWICH_UPPER: &str = "sandwich-upper";
pub const DIFFERENCE_MC: &str = "difference-mc";

pub fn growth_rows(d: Dimension, r_grid: &[f64]) -> Result<Vec<LemmaRow>> {
    if let Some(&r) = r_grid.iter().find(|&&r| !(r >= 2.0)) {
        return Err(Error::Precondition(format!("growth bounds need r >= 2, got {r}")));
    }
    let (lo, hi) = growth_constants(d);
    let m = (d.get() - 1) as f64;
    r_grid
        .iter()
        .map(|&r| {
            let value = ball_volume(d, r)?;
            let e = (m * r).exp();
            let (lower, upper) = (Some(lo * e), Some(hi * e));
            Ok(LemmaRow {
                lemma: GROWTH,
                d: d.get(),
                r,
                s: None,
                value,
                lower,
                upper,
                status: RowStatus::of(lower, value, upper),
            })
        })
        .collect()
}

fn report(name: &str, rows: &[LemmaRow]) -> GofReport {
    let checked = rows.iter().filter(|r| matches!(r.status, RowStatus::Pass | RowStatus::Fail)).count();
    let failed = rows.iter().filter(|r| r.status == RowStatus::Fail).count();
    GofReport::new(format!("{name} violations"), failed as f64, checked, 0.0)
}

/// Violation count of the growth bounds over `r_grid`.
pub fn check_growth_bounds(d: Dimension, r_grid: &[f64]) -> Result<GofReport> {
    Ok(report(GROWTH, &growth_rows(d, r_grid)?))
}

/// The difference bounds at one ball pair; `Skipped` outside
/// `0 < s ≤ r, r - s/2 ≥ 2`.
pub fn difference_row(spec: BallPairSpec) -> LemmaRow {
    let BallPairSpec { d, r, s } = spec;
    let in_scope = s > 0.0 && s <= r && r - s / 2.0 >= 2.0;
    let value = ball_difference_volume(spec);
    let (a1, a2) = difference_constants(d);
    let m = (d.get() - 1) as f64;
    let lower = Some(a1 * s * (m * (r - s / 2.0)).exp());
    let upper = Some(a2 * s * (m * r).exp());
    LemmaRow {
        lemma: DIFFERENCE,
        d: d.get(),
        r,
        s: Some(s),
        value,
        lower,
        upper,
        status: if in_scope { RowStatus::of(lower, value, upper) } else { RowStatus::Skipped },
    }
}

pub fn check_difference_bounds(spec: BallPairSpec) -> Result<GofReport> {
    let BallPairSpec { r, s, .. } = spec;
    if !(s > 0.0 && s <= r && r - s / 2.0 >= 2.0) {
        return Err(Error::Precondition(format!(
            "difference bounds need 0 < s <= r and r - s/2 >= 2, got r = {r}, s = {s}"
        )));
    }
    Ok(report(DIFFERENCE, &[difference_row(spec)]))
}

/// Quadrature difference volume against the 99% interval of a Monte Carlo
/// estimate from `n` samples.
pub fn difference_mc_row(spec: BallPairSpec, n: usize, seed: SeedSpec) -> Result<LemmaRow> {
    let value = ball_difference_volume(spec);
    let (est, half) = ball_difference_volume_mc(spec, n, seed)?;
    let (lower, upper) = (est - half, est + half);
    Ok(LemmaRow {
        lemma: DIFFERENCE_MC,
        d: spec.d.get(),
        r: spec.r,
        s: Some(spec.s),
        value,
        lower: Some(lower),
        upper: Some(upper),
        status: if (lower..=upper).contains(&value) { RowStatus::Pass } else { RowStatus::Fail },
    })
}

/// Sandwich `ω_d [e^{s(d-1)}/((d-1)2^{d-1}) - (d-1)e^{s(d-3)}/((d-3)2^{d-1})]
/// ≤ V(s) ≤ ω_d e^{s(d-1)}/((d-1)2^{d-1})`. The lower bound is checked for
/// `d ≥ 4` only: it is singular at `d = 3` and exceeds `V(s)` at `d = 2`.
pub fn sandwich_rows(d: Dimension, s_grid: &[f64]) -> Result<Vec<LemmaRow>> {
    let dd = d.get();
    let m = (dd - 1) as f64;
    let w = unit_sphere_area(dd);
    let mut rows = Vec::with_capacity(2 * s_grid.len());
    for &s in s_grid {
        if !(s > 0.0) {
            return Err(Error::Precondition(format!("sandwich needs s > 0, got {s}")));
        }
        let value = ball_volume(d, s)?;
        let upper = w * (m * s).exp() / (m * 2f64.powf(m));
        rows.push(LemmaRow {
            lemma: SANDWICH_UPPER,
            d: dd,
            r: s,
            s: None,
            value,
            lower: None,
            upper: Some(upper),
            status: RowStatus::of(None, value, Some(upper)),
        });
        let (lower, status) = if dd >= 4 {
            let l = upper - w * m * ((m - 2.0) * s).exp() / ((m - 2.0) * 2f64.powf(m));
            (Some(l), RowStatus::of(Some(l), value, None))
        } else {
            (None, RowStatus::NotApplicable)
        };
        rows.push(LemmaRow {
            lemma: SANDWICH_LOWER,
            d: dd,
            r: s,
            s: None,
            value,
            lower,
            upper: None,
            status,
        });
    }
    Ok(rows)
}

pub fn check_sandwich_bounds(d: Dimension, s_grid: &[f64]) -> Result<GofReport> {
    Ok(report("sandwich", &sandwich_rows(d, s_grid)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{distance, intersection_boundary_radius, HPoint};
    use proptest::prelude::*;

    fn dim(d: usize) -> Dimension {
        Dimension::new(d).unwrap()
    }

    fn pair(d: usize, r: f64, s: f64) -> BallPairSpec {
        BallPairSpec::new(dim(d), r, s).unwrap()
    }

    fn grid(a: f64, b: f64, step: f64) -> Vec<f64> {
        let n = ((b - a) / step).round() as usize;
        (0..=n).map(|i| a + i as f64 * step).collect()
    }

    #[test]
    fn identical_balls_intersect_fully() {
        for d in 2..=6 {
            for r in [0.5, 3.0, 8.0] {
                let full = ball_volume(dim(d), r).unwrap();
                let v = ball_intersection_volume(pair(d, r, 0.0));
                assert!((v - full).abs() <= 1e-9 * full, "d={d} r={r}: {v} vs {full}");
                assert_eq!(ball_difference_volume(pair(d, r, 0.0)), 0.0);
            }
        }
    }

    #[test]
    fn disjoint_balls() {
        for d in [2, 4] {
            assert_eq!(ball_intersection_volume(pair(d, 2.0, 4.0)), 0.0);
            assert_eq!(ball_intersection_volume(pair(d, 2.0, 5.0)), 0.0);
            assert_eq!(ball_difference_volume(pair(d, 2.0, 4.5)), ball_volume(dim(d), 2.0).unwrap());
        }
    }

    #[test]
    fn cap_boundary_matches_bisector_radius() {
        let (r, s) = (3.0f64, 1.0f64);
        let rbar = intersection_boundary_radius(r, s).unwrap();
        assert!((rbar - 2.879210).abs() < 5e-7, "{rbar}");
        // At t = r the cap angle marks the points at distance r from both centres.
        let kappa = (s.cosh() * r.cosh() - r.cosh()) / (s.sinh() * r.sinh());
        let theta = kappa.acos();
        let y = point_at(&[theta.cos(), theta.sin()], r).unwrap();
        let x = point_at(&[1.0, 0.0], s).unwrap();
        let mid = point_at(&[1.0, 0.0], s / 2.0).unwrap();
        assert!((distance(&y, &x) - r).abs() < 1e-12);
        assert!((distance(&y, &HPoint::origin(dim(2))) - r).abs() < 1e-12);
        assert!((distance(&y, &mid) - rbar).abs() < 1e-12);
    }

    #[test]
    fn difference_example_in_the_plane() {
        let v = ball_difference_volume(pair(2, 3.0, 1.0));
        let (_, a2) = difference_constants(dim(2));
        assert_eq!(a2, 2.0);
        assert!(v <= a2 * 3f64.exp());
        assert!((a2 * 3f64.exp() - 40.171).abs() < 1e-3);
        assert!(v <= 56.9738);
        assert!(v > 0.0);
    }

    #[test]
    fn difference_grows_with_separation() {
        for d in [2, 3, 5] {
            let r = 3.0;
            let mut prev = 0.0;
            for s in grid(0.1, 6.0, 0.1) {
                let v = ball_difference_volume(pair(d, r, s));
                assert!(v >= prev, "d={d} s={s}");
                prev = v;
            }
        }
    }

    #[test]
    fn difference_bound_examples() {
        assert!(check_difference_bounds(pair(3, 5.0, 1.0)).unwrap().pass);
        assert!(check_difference_bounds(pair(2, 4.0, 2.0)).unwrap().pass);
        assert!(check_difference_bounds(pair(2, 2.5, 2.0)).is_err());
        assert!(check_difference_bounds(pair(2, 4.0, 0.0)).is_err());
        assert_eq!(difference_row(pair(2, 2.5, 2.0)).status, RowStatus::Skipped);
    }

    #[test]
    fn difference_bounds_on_grid() {
        for d in 2..=6 {
            for r in [2.5, 3.0, 4.0, 6.0, 9.0] {
                for s in [0.05, 0.25, 0.5, 1.0, 2.0, 3.0] {
                    if s <= r && r - s / 2.0 >= 2.0 {
                        let row = difference_row(pair(d, r, s));
                        assert_eq!(row.status, RowStatus::Pass, "{row:?}");
                    }
                }
            }
        }
    }

    #[test]
    fn small_separation_limit() {
        for d in [2, 3, 4] {
            let r = 4.0;
            let m = (d - 1) as f64;
            let (a1, a2) = difference_constants(dim(d));
            let ratios: Vec<f64> = [1e-2, 5e-3, 2.5e-3]
                .iter()
                .map(|&s| ball_difference_volume(pair(d, r, s)) / s)
                .collect();
            assert!((ratios[1] - ratios[2]).abs() < 0.6 * (ratios[0] - ratios[1]).abs() + 1e-9 * ratios[2]);
            let e = (m * r).exp();
            assert!(a1 * e <= ratios[2] && ratios[2] <= a2 * e, "d={d}: {ratios:?}");
        }
    }

    #[test]
    fn monte_carlo_agrees_with_quadrature() {
        for (i, &(d, r, s)) in [(2, 3.0, 1.0), (3, 2.5, 0.5), (4, 3.0, 1.5), (5, 2.0, 0.8)].iter().enumerate() {
            let spec = pair(d, r, s);
            let q = ball_difference_volume(spec);
            let (mc, half) = ball_difference_volume_mc(spec, 200_000, SeedSpec::new(99, i as u64)).unwrap();
            assert!((mc - q).abs() <= half, "d={d} r={r} s={s}: mc {mc} ± {half}, quadrature {q}");
        }
    }

    #[test]
    fn monte_carlo_trivial_cases() {
        let (v, h) = ball_difference_volume_mc(pair(3, 2.0, 0.0), 1000, SeedSpec::new(1, 0)).unwrap();
        assert_eq!((v, h), (0.0, 0.0));
        let (v, h) = ball_difference_volume_mc(pair(3, 2.0, 4.0), 1000, SeedSpec::new(1, 0)).unwrap();
        assert_eq!((v, h), (ball_volume(dim(3), 2.0).unwrap(), 0.0));
        assert!(ball_difference_volume_mc(pair(3, 2.0, 1.0), 10, SeedSpec::new(1, 0)).is_err());
    }

    #[test]
    fn growth_bound_examples() {
        let (g, big) = growth_constants(dim(2));
        assert!((g * 2f64.exp() - 7.738).abs() < 1e-3);
        assert!((big * 2f64.exp() - 23.213).abs() < 1e-3);
        let rows = growth_rows(dim(2), &[2.0]).unwrap();
        // 2π(cosh 2 - 1); the figure 17.3605 sometimes quoted is a slip.
        assert!((rows[0].value - 17.355_387_381_771_44).abs() < 1e-10);
        assert_eq!(rows[0].status, RowStatus::Pass);
        assert!(check_growth_bounds(dim(2), &[1.5]).is_err());
        for d in 2..=8 {
            let rep = check_growth_bounds(dim(d), &grid(2.0, 20.0, 0.25)).unwrap();
            assert!(rep.pass, "d={d}: {rep:?}");
            assert_eq!(rep.n, 73);
        }
    }

    #[test]
    fn sandwich_statuses() {
        let rows = sandwich_rows(dim(3), &[1.0]).unwrap();
        assert_eq!(rows[0].status, RowStatus::Pass);
        assert_eq!(rows[1].status, RowStatus::NotApplicable);
        let rows = sandwich_rows(dim(2), &[1.0]).unwrap();
        assert_eq!(rows[0].status, RowStatus::Pass);
        assert_eq!(rows[1].status, RowStatus::NotApplicable);
        for d in 4..=8 {
            let rep = check_sandwich_bounds(dim(d), &grid(0.5, 15.0, 0.25)).unwrap();
            assert!(rep.pass, "d={d}: {rep:?}");
        }
        assert!(check_sandwich_bounds(dim(2), &grid(0.5, 15.0, 0.25)).unwrap().pass);
        assert!(sandwich_rows(dim(4), &[0.0]).is_err());
    }

    #[test]
    fn bisector_radius_dominates_half_gap() {
        for r in grid(2.0, 12.0, 0.5) {
            for s in grid(0.0, 2.0 * (r - 2.0), 0.25) {
                let rbar = intersection_boundary_radius(r, s).unwrap();
                assert!(rbar >= r - s / 2.0 - 1e-12, "r={r} s={s}");
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]
        #[test]
        fn intersection_within_ball(d in 2usize..6, r in 0.2f64..6.0, f in 0.0f64..1.2) {
            let s = f * 2.0 * r;
            let v = ball_intersection_volume(pair(d, r, s));
            let full = ball_volume(dim(d), r).unwrap();
            prop_assert!(v >= -1e-9 * full && v <= full * (1.0 + 1e-9));
        }
    }
}
