//! Hyperbolic geometry in the hyperboloid model.
//!
//! Points of `H^d` live on the upper sheet of `-x0² + x1² + … + xd² = -1`.
//! Distances are evaluated through a polar decomposition of each point
//! (radius from the origin plus unit direction) rather than through the
//! Minkowski pairing directly: for two nearby points far from the origin the
//! pairing is a difference of two numbers of size `e^{2t}` and loses almost
//! all significant digits, while the polar form is a sum of nonnegative terms.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest radius accepted by volume, threshold and sampling routines.
pub const MAX_RADIUS: f64 = 300.0;

/// Number of scalar slots preceding the direction in a polar key.
pub const POLAR_HEADER: usize = 3;

/// Ambient dimension `d ≥ 2` of the hyperbolic space.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "usize", into = "usize")]
pub struct Dimension(usize);

impl Dimension {
    pub fn new(d: usize) -> Result<Self> {
        if d < 2 {
            return Err(Error::Dimension(d));
        }
        Ok(Self(d))
    }

    pub fn get(self) -> usize {
        self.0
    }
}

impl TryFrom<usize> for Dimension {
    type Error = Error;

    fn try_from(d: usize) -> Result<Self> {
        Self::new(d)
    }
}

impl From<Dimension> for usize {
    fn from(d: Dimension) -> usize {
        d.0
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// A point of `H^d` in hyperboloid coordinates `(x0, x1, …, xd)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HPoint {
    coords: Vec<f64>,
}

impl HPoint {
    /// Validates the hyperboloid constraint. The Minkowski norm is checked
    /// relative to `x0²`, since far from the origin the coordinates are only
    /// representable to that precision.
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.len() < 3 {
            return Err(Error::Dimension(coords.len().saturating_sub(1)));
        }
        let x0 = coords[0];
        let spatial: f64 = coords[1..].iter().map(|x| x * x).sum();
        let norm = -x0 * x0 + spatial;
        if !(x0 >= 1.0 - 1e-12) || !((norm + 1.0).abs() <= 1e-9 * (x0 * x0).max(1.0)) {
            return Err(Error::Precondition(format!(
                "not on the hyperboloid: x0 = {x0}, Minkowski norm = {norm}"
            )));
        }
        Ok(Self { coords })
    }

    pub fn origin(d: Dimension) -> Self {
        let mut coords = vec![0.0; d.get() + 1];
        coords[0] = 1.0;
        Self { coords }
    }

    /// Builds `(cosh t, sinh t · u)` without validation; `u` must be a unit vector.
    pub(crate) fn from_polar_unchecked(direction: &[f64], t: f64) -> Self {
        let (s, c) = (t.sinh(), t.cosh());
        let mut coords = Vec::with_capacity(direction.len() + 1);
        coords.push(c);
        coords.extend(direction.iter().map(|u| s * u));
        Self { coords }
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn dim(&self) -> usize {
        self.coords.len() - 1
    }

    /// Hyperbolic distance from the origin.
    pub fn radius(&self) -> f64 {
        spatial_norm(&self.coords).asinh()
    }

    pub fn polar_key(&self) -> Vec<f64> {
        let mut key = vec![0.0; self.coords.len() + POLAR_HEADER - 1];
        polar_key_into(&self.coords, &mut key);
        key
    }
}

fn spatial_norm(coords: &[f64]) -> f64 {
    coords[1..].iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Writes the polar key `[e^{t/2}, e^{-t/2}, sinh t, u1, …, ud]` of a point
/// given in hyperboloid coordinates. `out` must have length `d + 3`.
pub fn polar_key_into(coords: &[f64], out: &mut [f64]) {
    let d = coords.len() - 1;
    debug_assert_eq!(out.len(), d + POLAR_HEADER);
    let s = spatial_norm(coords);
    let t = s.asinh();
    let half = (0.5 * t).exp();
    out[0] = half;
    out[1] = 1.0 / half;
    out[2] = s;
    if s > 0.0 {
        for (o, x) in out[POLAR_HEADER..].iter_mut().zip(&coords[1..]) {
            *o = x / s;
        }
    } else {
        out[POLAR_HEADER..].fill(0.0);
    }
}

/// `cosh(dist) - 1` between two polar keys.
///
/// Uses `cosh d = cosh(t1 - t2) + sinh t1 sinh t2 (1 - cos θ)` with
/// `1 - cos θ = |u1 - u2|² / 2`; both terms are nonnegative.
#[inline]
pub fn chord(a: &[f64], b: &[f64]) -> f64 {
    let sh = 0.5 * (a[0] * b[1] - a[1] * b[0]);
    let mut sq = 0.0;
    for (x, y) in a[POLAR_HEADER..].iter().zip(&b[POLAR_HEADER..]) {
        let du = x - y;
        sq += du * du;
    }
    2.0 * sh * sh + 0.5 * a[2] * b[2] * sq
}

/// `acosh(1 + x)` without cancellation for small `x`.
#[inline]
pub fn acosh1p(x: f64) -> f64 {
    (x + (x * (x + 2.0)).sqrt()).ln_1p()
}

/// `cosh(rho) - 1` evaluated without cancellation.
#[inline]
pub fn cosh_m1(rho: f64) -> f64 {
    let h = (0.5 * rho).sinh();
    2.0 * h * h
}

/// Minkowski pairing `-a0 b0 + a1 b1 + … + ad bd`.
pub fn minkowski_bilinear(a: &HPoint, b: &HPoint) -> f64 {
    let (a, b) = (a.coords(), b.coords());
    let spatial: f64 = a[1..].iter().zip(&b[1..]).map(|(x, y)| x * y).sum();
    spatial - a[0] * b[0]
}

/// Hyperbolic distance, equal to `acosh(-<a, b>)` in exact arithmetic.
pub fn distance(a: &HPoint, b: &HPoint) -> f64 {
    acosh1p(chord(&a.polar_key(), &b.polar_key()))
}

/// Surface area `2π^{n/2} / Γ(n/2)` of the unit sphere `S^{n-1} ⊂ R^n`.
pub fn unit_sphere_area(n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    2.0 * PI.powf(n as f64 / 2.0) / gamma_half(n)
}

/// `Γ(n / 2)` for a positive integer `n`, by the recurrence `Γ(x + 1) = x Γ(x)`.
fn gamma_half(n: usize) -> f64 {
    let (mut x, mut g) = if n % 2 == 0 { (1.0, 1.0) } else { (0.5, PI.sqrt()) };
    let target = n as f64 / 2.0;
    while x < target {
        g *= x;
        x += 1.0;
    }
    g
}

fn ln_factorial(n: usize) -> f64 {
    (2..=n).map(|i| (i as f64).ln()).sum()
}

fn binomial(n: usize, k: usize) -> f64 {
    let mut c = 1.0;
    for i in 0..k {
        c = c * (n - i) as f64 / (i + 1) as f64;
    }
    c.round()
}

/// Precomputed constants for ball volumes in a fixed dimension.
#[derive(Debug, Clone)]
pub struct VolumeTable {
    m: usize,
    omega: f64,
    ln_omega: f64,
    /// `(-1)^j C(m, j)` for the binomial expansion of `sinh^m`.
    signed_binom: Vec<f64>,
    /// `∫_0^r sinh^m = r^{m+1} Σ_i series[i] r^{2i}`, all coefficients positive.
    series: Vec<f64>,
}

const SERIES_SWITCH: f64 = 1.0;
const CACHED_DIMS: usize = 33;

impl VolumeTable {
    pub fn new(d: Dimension) -> Self {
        let m = d.get() - 1;
        let omega = unit_sphere_area(d.get());
        let signed_binom = (0..=m)
            .map(|j| if j % 2 == 0 { 1.0 } else { -1.0 } * binomial(m, j))
            .collect();

        // Power series of sinh^m by repeated Cauchy products with sinh.
        let terms = 40 + 2 * m;
        let top = m + 2 * terms + 1;
        let mut sinh_coef = vec![0.0; top + 1];
        let mut fact = 1.0;
        for (n, c) in sinh_coef.iter_mut().enumerate().skip(1) {
            fact *= n as f64;
            if n % 2 == 1 {
                *c = 1.0 / fact;
            }
        }
        let mut power = sinh_coef.clone();
        for _ in 1..m {
            let mut next = vec![0.0; top + 1];
            for (i, &a) in power.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (j, &b) in sinh_coef.iter().enumerate().take(top + 1 - i) {
                    next[i + j] += a * b;
                }
            }
            power = next;
        }
        let series = (0..terms)
            .map(|i| {
                let n = m + 2 * i;
                power[n] / (n + 1) as f64
            })
            .collect();

        Self {
            m,
            omega,
            ln_omega: omega.ln(),
            signed_binom,
            series,
        }
    }

    /// Shared table for `d`, built once per process for small dimensions.
    pub fn get(d: Dimension) -> std::borrow::Cow<'static, VolumeTable> {
        static TABLES: OnceLock<Vec<OnceLock<VolumeTable>>> = OnceLock::new();
        let tables = TABLES.get_or_init(|| (0..CACHED_DIMS).map(|_| OnceLock::new()).collect());
        match tables.get(d.get()) {
            Some(slot) => std::borrow::Cow::Borrowed(slot.get_or_init(|| VolumeTable::new(d))),
            None => std::borrow::Cow::Owned(VolumeTable::new(d)),
        }
    }

    pub fn dim(&self) -> usize {
        self.m + 1
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    /// `e^{-m r} Σ_j (-1)^j C(m,j) ∫_0^r e^{(m-2j)u} du`, compensated.
    fn scaled_binomial_sum(&self, r: f64) -> f64 {
        let m = self.m as i64;
        let decay = (-(m as f64) * r).exp();
        let mut sum = 0.0;
        let mut comp = 0.0;
        for (j, &c) in self.signed_binom.iter().enumerate() {
            let a = m - 2 * j as i64;
            let g = if j == 0 {
                -(-(m as f64) * r).exp_m1() / m as f64
            } else if a == 0 {
                r * decay
            } else {
                ((-2.0 * j as f64 * r).exp() - decay) / a as f64
            };
            let term = c * g;
            let t = sum + term;
            if sum.abs() >= term.abs() {
                comp += (sum - t) + term;
            } else {
                comp += (term - t) + sum;
            }
            sum = t;
        }
        sum + comp
    }

    fn series_integral(&self, r: f64) -> f64 {
        let r2 = r * r;
        let mut acc = 0.0;
        for &c in self.series.iter().rev() {
            acc = acc * r2 + c;
        }
        acc * r.powi(self.m as i32 + 1)
    }

    /// `V(r) = ω_d ∫_0^r sinh^{d-1}(u) du`; `r` must be nonnegative.
    pub fn volume(&self, r: f64) -> f64 {
        if r < SERIES_SWITCH {
            return self.omega * self.series_integral(r);
        }
        let mr = self.m as f64 * r;
        if mr < 700.0 {
            self.omega * self.scaled_binomial_sum(r) * mr.exp() * 0.5f64.powi(self.m as i32)
        } else {
            self.log_volume(r).exp()
        }
    }

    pub fn log_volume(&self, r: f64) -> f64 {
        if r < SERIES_SWITCH {
            return self.volume(r).ln();
        }
        let m = self.m as f64;
        self.ln_omega - m * std::f64::consts::LN_2 + m * r + self.scaled_binomial_sum(r).ln()
    }

    /// Radial density `ω_d sinh^{d-1}(r)`, the derivative of [`Self::volume`].
    pub fn density(&self, r: f64) -> f64 {
        self.omega * r.sinh().powi(self.m as i32)
    }

    fn log_density(&self, r: f64) -> f64 {
        self.ln_omega + self.m as f64 * r.sinh().ln()
    }

    /// Radius `r` with `V(r) = v`, by safeguarded Newton iteration in log space.
    pub fn inverse(&self, v: f64) -> f64 {
        if v <= 0.0 {
            return 0.0;
        }
        if self.m == 1 {
            return acosh1p(v / self.omega);
        }
        let m = self.m as f64;
        let d = m + 1.0;
        let target = v.ln();
        // ln Γ_d for the growth bound V(r) ≤ Γ_d e^{(d-1) r}.
        let ln_upper_coef = self.ln_omega - m.ln() - m * std::f64::consts::LN_2;
        let mut lo = 0.0;
        let mut hi = f64::max(2.0, (target - ln_upper_coef) / m + 2.0);
        while self.log_volume(hi) < target {
            lo = hi;
            hi *= 2.0;
        }
        let mut r = if v <= self.volume(SERIES_SWITCH) {
            (d * v / self.omega).powf(1.0 / d)
        } else {
            (target - ln_upper_coef) / m
        };
        if !(r > lo && r < hi) {
            r = 0.5 * (lo + hi);
        }
        let tol = 1e-14 * target.abs().max(1.0);
        for _ in 0..200 {
            let lv = self.log_volume(r);
            let h = lv - target;
            if h.abs() <= tol {
                break;
            }
            if h > 0.0 {
                hi = r;
            } else {
                lo = r;
            }
            if hi - lo <= 4.0 * f64::EPSILON * hi {
                break;
            }
            let slope = (self.log_density(r) - lv).exp();
            let mut next = r - h / slope;
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            r = next;
        }
        r
    }
}

fn check_radius(r: f64) -> Result<()> {
    if !(0.0..=MAX_RADIUS).contains(&r) {
        return Err(Error::Radius {
            value: r,
            max: MAX_RADIUS,
        });
    }
    Ok(())
}

/// Volume of a hyperbolic ball of radius `r` in `H^d`.
pub fn ball_volume(d: Dimension, r: f64) -> Result<f64> {
    check_radius(r)?;
    Ok(VolumeTable::get(d).volume(r))
}

/// Natural log of [`ball_volume`]; finite even where the volume overflows.
pub fn log_ball_volume(d: Dimension, r: f64) -> Result<f64> {
    check_radius(r)?;
    Ok(VolumeTable::get(d).log_volume(r))
}

/// Radius of the ball with volume `v`.
pub fn inverse_ball_volume(d: Dimension, v: f64) -> Result<f64> {
    if !(v >= 0.0) || !v.is_finite() {
        return Err(Error::Volume(v));
    }
    Ok(VolumeTable::get(d).inverse(v))
}

/// Which centring sequence to subtract from k-NN ball volumes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdKind {
    /// `v_k(R) = R(d-1) + (k-1) log(R(d-1)) - log((k-1)! 2^{d-1} (d-1) / ω_d)`.
    Standard,
    /// `log V(R)`; only defined for `k = 1`.
    LogVolume,
}

impl ThresholdKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Standard => "standard",
            Self::LogVolume => "logvolume",
        }
    }
}

impl fmt::Display for ThresholdKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ThresholdKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "standard" => Ok(Self::Standard),
            "logvolume" | "log-volume" => Ok(Self::LogVolume),
            other => Err(Error::Threshold(format!("unknown threshold kind {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ThresholdSpec {
    kind: ThresholdKind,
    k: usize,
}

impl ThresholdSpec {
    pub fn new(kind: ThresholdKind, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::Threshold("k must be at least 1".into()));
        }
        if kind == ThresholdKind::LogVolume && k != 1 {
            return Err(Error::Threshold(format!(
                "the log-volume threshold is only defined for k = 1, got k = {k}"
            )));
        }
        Ok(Self { kind, k })
    }

    pub fn standard(k: usize) -> Result<Self> {
        Self::new(ThresholdKind::Standard, k)
    }

    pub fn kind(&self) -> ThresholdKind {
        self.kind
    }

    pub fn k(&self) -> usize {
        self.k
    }
}

/// Threshold value for a ball of radius `big_r` around the origin.
pub fn threshold(spec: ThresholdSpec, d: Dimension, big_r: f64) -> Result<f64> {
    if !(big_r > 0.0) {
        return Err(Error::Threshold(format!("R must be positive, got {big_r}")));
    }
    check_radius(big_r)?;
    match spec.kind {
        ThresholdKind::Standard => {
            let m = (d.get() - 1) as f64;
            let k1 = spec.k - 1;
            let rm = big_r * m;
            let log_norm = ln_factorial(k1) + m * std::f64::consts::LN_2 + m.ln()
                - unit_sphere_area(d.get()).ln();
            Ok(rm + k1 as f64 * rm.ln() - log_norm)
        }
        ThresholdKind::LogVolume => log_ball_volume(d, big_r),
    }
}

/// Radius `arcosh(cosh r / cosh(s/2))` of the sphere where the boundaries of
/// two radius-`r` balls at separation `s` meet.
pub fn intersection_boundary_radius(r: f64, s: f64) -> Result<f64> {
    check_radius(r)?;
    if !(s >= 0.0) {
        return Err(Error::Precondition(format!("separation must be nonnegative, got {s}")));
    }
    if s > 2.0 * r {
        return Err(Error::DisjointBalls { r, s });
    }
    // cosh r / cosh(s/2) - 1 = 2 sinh((r + s/2)/2) sinh((r - s/2)/2) / cosh(s/2)
    let h = 0.5 * s;
    let x = 2.0 * (0.5 * (r + h)).sinh() * (0.5 * (r - h)).sinh() / h.cosh();
    Ok(acosh1p(x.max(0.0)))
}

/// Exponential map at the origin: the point at distance `t` along `direction`.
pub fn point_at(direction: &[f64], t: f64) -> Result<HPoint> {
    let norm = direction.iter().map(|x| x * x).sum::<f64>().sqrt();
    if direction.len() < 2 || (norm - 1.0).abs() > 1e-12 {
        return Err(Error::Direction {
            expected: direction.len().max(2),
            len: direction.len(),
            norm,
        });
    }
    check_radius(t)?;
    Ok(HPoint::from_polar_unchecked(direction, t))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dim(d: usize) -> Dimension {
        Dimension::new(d).unwrap()
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1.0)
    }

    #[test]
    fn bilinear_examples() {
        let o = HPoint::origin(dim(2));
        assert_eq!(minkowski_bilinear(&o, &o), -1.0);
        let q = point_at(&[1.0, 0.0], 2.0).unwrap();
        assert!(close(minkowski_bilinear(&o, &q), -2f64.cosh(), 1e-14));
        let a = point_at(&[1.0, 0.0], 1.0).unwrap();
        let b = point_at(&[-1.0, 0.0], 1.0).unwrap();
        assert!(close(minkowski_bilinear(&a, &b), -2f64.cosh(), 1e-14));
        assert!((-2f64.cosh() - -3.7621957).abs() < 1e-7);
    }

    #[test]
    fn distance_examples() {
        let o = HPoint::origin(dim(2));
        assert_eq!(distance(&o, &o), 0.0);
        let q = point_at(&[1.0, 0.0], 2.0).unwrap();
        assert!((distance(&o, &q) - 2.0).abs() < 1e-14);
        let a = point_at(&[1.0, 0.0], 1.0).unwrap();
        let b = point_at(&[-1.0, 0.0], 1.0).unwrap();
        assert!((distance(&a, &b) - 2.0).abs() < 1e-14);
    }

    #[test]
    fn distance_far_from_origin_is_accurate() {
        // Two points at radius 14 separated by a known angle: the law of
        // cosines in extended precision terms gives the reference.
        let t = 14.0;
        let theta: f64 = 3e-6;
        let a = point_at(&[1.0, 0.0], t).unwrap();
        let b = point_at(&[theta.cos(), theta.sin()], t).unwrap();
        let x = 2.0 * t.sinh().powi(2) * (0.5 * theta).sin().powi(2);
        let expect = acosh1p(x);
        assert!((distance(&a, &b) - expect).abs() < 1e-10);
    }

    #[test]
    fn sphere_area_examples() {
        assert!(close(unit_sphere_area(2), 2.0 * PI, 1e-15));
        assert!(close(unit_sphere_area(3), 4.0 * PI, 1e-15));
        assert!(close(unit_sphere_area(1), 2.0, 1e-15));
        assert!(close(unit_sphere_area(4), 2.0 * PI * PI, 1e-15));
        assert!(close(unit_sphere_area(5), 8.0 * PI * PI / 3.0, 1e-15));
    }

    #[test]
    fn ball_volume_examples() {
        assert_eq!(ball_volume(dim(2), 0.0).unwrap(), 0.0);
        let v = ball_volume(dim(2), 1.0).unwrap();
        assert!(close(v, 2.0 * PI * (1f64.cosh() - 1.0), 1e-14));
        // Quoted to six decimals; the exact value is 3.4122763.
        assert!((v - 3.412283).abs() < 1e-5);
        let v = ball_volume(dim(3), 1.0).unwrap();
        assert!(close(v, PI * (2f64.sinh() - 2.0), 1e-14));
        assert!((v - 5.110935).abs() < 1e-5);
        let v = ball_volume(dim(2), 5.0).unwrap();
        assert!(close(v, 2.0 * PI * (5f64.cosh() - 1.0), 1e-14));
        assert!((v - 459.9917).abs() < 1e-4);
    }

    #[test]
    fn ball_volume_small_radius_matches_closed_forms() {
        for &r in &[1e-6, 0.01, 0.1, 0.5, 0.999] {
            let v2 = ball_volume(dim(2), r).unwrap();
            assert!(close(v2, 2.0 * PI * cosh_m1(r), 1e-14), "d=2 r={r}");
            let v3 = ball_volume(dim(3), r).unwrap();
            let x = 2.0 * r;
            let e3 = if x < 0.1 {
                PI * x.powi(3) / 6.0 * (1.0 + x * x / 20.0 * (1.0 + x * x / 42.0))
            } else {
                PI * (x.sinh() - x)
            };
            assert!((v3 - e3).abs() <= 1e-12 * e3 + 1e-300, "d=3 r={r}");
        }
    }

    #[test]
    fn ball_volume_rejects_bad_radius() {
        assert!(ball_volume(dim(2), -0.1).is_err());
        assert!(ball_volume(dim(2), 301.0).is_err());
        assert!(ball_volume(dim(2), f64::NAN).is_err());
    }

    #[test]
    fn large_radius_log_volume() {
        let lv = log_ball_volume(dim(8), 250.0).unwrap();
        let expect = unit_sphere_area(8).ln() - 7.0 * 2f64.ln() - 7f64.ln() + 7.0 * 250.0;
        assert!((lv - expect).abs() < 1e-9);
    }

    #[test]
    fn inverse_examples() {
        assert_eq!(inverse_ball_volume(dim(2), 0.0).unwrap(), 0.0);
        assert!((inverse_ball_volume(dim(2), 3.412283).unwrap() - 1.0).abs() < 1e-5);
        let v = ball_volume(dim(2), 1.0).unwrap();
        assert!((inverse_ball_volume(dim(2), v).unwrap() - 1.0).abs() < 1e-12);
        assert!(inverse_ball_volume(dim(2), -1.0).is_err());
    }

    #[test]
    fn inverse_roundtrip_grid() {
        for d in 2..=8 {
            for &r in &[0.1, 1.0, 5.0, 12.0, 1e-4, 0.75, 40.0] {
                let v = ball_volume(dim(d), r).unwrap();
                let back = inverse_ball_volume(dim(d), v).unwrap();
                assert!((back - r).abs() < 1e-9, "d={d} r={r} back={back}");
                let v2 = ball_volume(dim(d), back).unwrap();
                assert!(((v2 - v) / v).abs() < 1e-12, "d={d} r={r}");
            }
        }
    }

    #[test]
    fn threshold_examples() {
        let std1 = ThresholdSpec::standard(1).unwrap();
        let std2 = ThresholdSpec::standard(2).unwrap();
        let t = threshold(std1, dim(2), 10.0).unwrap();
        assert!((t - (10.0 + PI.ln())).abs() < 1e-12);
        assert!((t - 11.1447299).abs() < 1e-7);
        let t = threshold(std2, dim(2), 10.0).unwrap();
        assert!((t - (10.0 + 10f64.ln() + PI.ln())).abs() < 1e-12);
        assert!((t - 13.4473150).abs() < 1e-7);
        let t = threshold(std1, dim(3), 10.0).unwrap();
        assert!((t - (20.0 - (2.0 / PI).ln())).abs() < 1e-12);
        assert!((t - 20.4515827).abs() < 1e-7);
        let logv = ThresholdSpec::new(ThresholdKind::LogVolume, 1).unwrap();
        let t = threshold(logv, dim(2), 10.0).unwrap();
        assert!((t - (2.0 * PI * (10f64.cosh() - 1.0)).ln()).abs() < 1e-12);
        assert!((t - 11.1447).abs() < 1e-3);
    }

    #[test]
    fn threshold_errors() {
        assert!(ThresholdSpec::new(ThresholdKind::LogVolume, 2).is_err());
        assert!(ThresholdSpec::standard(0).is_err());
        let s = ThresholdSpec::standard(1).unwrap();
        assert!(threshold(s, dim(2), 0.0).is_err());
        assert!(threshold(s, dim(2), -3.0).is_err());
    }

    #[test]
    fn boundary_radius_examples() {
        assert!((intersection_boundary_radius(3.0, 0.0).unwrap() - 3.0).abs() < 1e-14);
        let rb = intersection_boundary_radius(3.0, 1.0).unwrap();
        assert!((rb - (3f64.cosh() / 0.5f64.cosh()).acosh()).abs() < 1e-12);
        assert!((rb - 2.879210).abs() < 1e-6);
        assert_eq!(intersection_boundary_radius(3.0, 6.0).unwrap(), 0.0);
        assert!(matches!(
            intersection_boundary_radius(3.0, 6.5),
            Err(Error::DisjointBalls { .. })
        ));
    }

    #[test]
    fn boundary_radius_at_least_r_minus_half_s() {
        let mut r = 2.0;
        while r <= 20.0 {
            let mut s = 0.0;
            while s <= r && r - s / 2.0 >= 2.0 {
                let rb = intersection_boundary_radius(r, s).unwrap();
                assert!(rb >= r - s / 2.0 - 1e-12, "r={r} s={s}");
                s += 0.05;
            }
            r += 0.25;
        }
    }

    #[test]
    fn point_at_examples() {
        let o = point_at(&[1.0, 0.0, 0.0], 0.0).unwrap();
        assert_eq!(o, HPoint::origin(dim(3)));
        let p = point_at(&[1.0, 0.0], 2.0).unwrap();
        assert_eq!(p.coords(), &[2f64.cosh(), 2f64.sinh(), 0.0]);
        assert!((p.radius() - 2.0).abs() < 1e-14);
        assert!(point_at(&[1.0, 1.0], 1.0).is_err());
        let v = [0.6, 0.8];
        for &(t1, t2) in &[(0.5, 3.0), (7.0, 2.0), (10.0, 10.5)] {
            let a = point_at(&v, t1).unwrap();
            let b = point_at(&v, t2).unwrap();
            assert!((distance(&a, &b) - (t1 - t2).abs()).abs() < 1e-12);
        }
    }

    #[test]
    fn hpoint_validation() {
        assert!(HPoint::new(vec![1.0, 0.0, 0.0]).is_ok());
        assert!(HPoint::new(vec![2.0, 0.0, 0.0]).is_err());
        assert!(HPoint::new(vec![-1.0, 0.0, 0.0]).is_err());
        assert!(HPoint::new(vec![1.0, 0.0]).is_err());
    }
}
