//! Seeded generation of the stationary Poisson process restricted to balls.
//!
//! Every replication draws from its own ChaCha stream: the key is derived
//! from the master seed and the replication index selects the stream, so
//! streams never share generator state and results do not depend on which
//! worker runs a replication.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Dimension, HPoint, VolumeTable, MAX_RADIUS};

/// Master seed plus replication index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeedSpec {
    pub master_seed: u64,
    pub stream_id: u64,
}

impl SeedSpec {
    pub fn new(master_seed: u64, stream_id: u64) -> Self {
        Self {
            master_seed,
            stream_id,
        }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        let mut state = self.master_seed;
        for chunk in key.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(self.stream_id);
        rng
    }
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A flat, read-only collection of points of `H^d` in hyperboloid coordinates.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointSet {
    dim: usize,
    coords: Vec<f64>,
}

impl PointSet {
    pub fn new(d: Dimension) -> Self {
        Self {
            dim: d.get(),
            coords: Vec::new(),
        }
    }

    pub fn with_capacity(d: Dimension, n: usize) -> Self {
        Self {
            dim: d.get(),
            coords: Vec::with_capacity(n * (d.get() + 1)),
        }
    }

    pub fn from_points(d: Dimension, points: &[HPoint]) -> Result<Self> {
        let mut set = Self::with_capacity(d, points.len());
        for p in points {
            if p.dim() != d.get() {
                return Err(Error::Dimension(p.dim()));
            }
            set.coords.extend_from_slice(p.coords());
        }
        Ok(set)
    }

    /// Wraps `(d + 1)`-tuples of hyperboloid coordinates laid end to end.
    pub(crate) fn from_flat(d: usize, coords: Vec<f64>) -> Self {
        debug_assert_eq!(coords.len() % (d + 1), 0);
        Self { dim: d, coords }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.coords.len() / (self.dim + 1)
        }
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn coords(&self, i: usize) -> &[f64] {
        let w = self.dim + 1;
        &self.coords[i * w..(i + 1) * w]
    }

    pub fn point(&self, i: usize) -> HPoint {
        HPoint::new(self.coords(i).to_vec()).expect("stored points satisfy the hyperboloid constraint")
    }

    /// Radial distance of point `i` from the origin.
    pub fn radius(&self, i: usize) -> f64 {
        let c = self.coords(i);
        c[1..].iter().map(|x| x * x).sum::<f64>().sqrt().asinh()
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.coords.chunks_exact(self.dim + 1)
    }

    pub fn to_points(&self) -> Vec<HPoint> {
        (0..self.len()).map(|i| self.point(i)).collect()
    }

    fn push_polar(&mut self, direction: &[f64], t: f64) {
        let (s, c) = (t.sinh(), t.cosh());
        self.coords.push(c);
        self.coords.extend(direction.iter().map(|u| s * u));
    }
}

/// One realisation of the process on a centred ball.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleBatch {
    pub points: PointSet,
    pub region_radius: f64,
    pub realized_count: usize,
}

/// Poisson variate: inversion of the CDF below mean 10, rejection above.
pub fn poisson_count<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u64 {
    if !(mean > 0.0) {
        return 0;
    }
    if mean < 10.0 {
        let u: f64 = rng.random();
        let mut n = 0u64;
        let mut p = (-mean).exp();
        let mut cdf = p;
        while u > cdf {
            n += 1;
            p *= mean / n as f64;
            cdf += p;
            if p < 1e-300 && n as f64 > mean {
                break;
            }
        }
        n
    } else {
        Poisson::new(mean)
            .expect("finite positive Poisson mean")
            .sample(rng) as u64
    }
}

/// Poisson count drawn from the stream identified by `seed`.
pub fn sample_poisson_count(mean: f64, seed: SeedSpec) -> u64 {
    poisson_count(mean, &mut seed.rng())
}

/// Radius with distribution function `V(t) / V(rmax)` at uniform level `u`.
pub fn sample_radius(d: Dimension, rmax: f64, u: f64) -> Result<f64> {
    if !(rmax > 0.0 && rmax <= MAX_RADIUS) {
        return Err(Error::Radius {
            value: rmax,
            max: MAX_RADIUS,
        });
    }
    let table = VolumeTable::get(d);
    Ok(table.inverse(u * table.volume(rmax)))
}

/// Isotropic unit vector in `R^d` from normalised Gaussians.
pub fn sample_direction<R: Rng + ?Sized>(d: Dimension, rng: &mut R) -> Vec<f64> {
    let mut v = vec![0.0; d.get()];
    fill_direction(&mut v, rng);
    v
}

pub fn fill_direction<R: Rng + ?Sized>(v: &mut [f64], rng: &mut R) {
    loop {
        let mut norm2 = 0.0;
        for x in v.iter_mut() {
            let g: f64 = rng.sample(StandardNormal);
            *x = g;
            norm2 += g * g;
        }
        if norm2 > 1e-200 {
            let inv = norm2.sqrt().recip();
            v.iter_mut().for_each(|x| *x *= inv);
            return;
        }
    }
}

/// Samples the Poisson process with intensity `H^d` on the ball `B_rmax`.
pub fn sample_ball_process(d: Dimension, rmax: f64, seed: SeedSpec) -> Result<SampleBatch> {
    if !(rmax > 0.0 && rmax <= MAX_RADIUS) {
        return Err(Error::Radius {
            value: rmax,
            max: MAX_RADIUS,
        });
    }
    let table = VolumeTable::get(d);
    let total = table.volume(rmax);
    if !total.is_finite() {
        return Err(Error::Config(format!(
            "ball of radius {rmax} in dimension {d} has unrepresentable volume"
        )));
    }
    let mut rng = seed.rng();
    let n = poisson_count(total, &mut rng) as usize;
    let mut points = PointSet::with_capacity(d, n);
    let mut dir = vec![0.0; d.get()];
    for _ in 0..n {
        let u: f64 = rng.random();
        let t = table.inverse(u * total);
        fill_direction(&mut dir, &mut rng);
        points.push_polar(&dir, t);
    }
    Ok(SampleBatch {
        points,
        region_radius: rmax,
        realized_count: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{ball_volume, distance};

    fn dim(d: usize) -> Dimension {
        Dimension::new(d).unwrap()
    }

    #[test]
    fn zero_mean_gives_zero() {
        for id in 0..50 {
            assert_eq!(sample_poisson_count(0.0, SeedSpec::new(1, id)), 0);
        }
    }

    #[test]
    fn poisson_mean_large() {
        let mean = ball_volume(dim(2), 5.0).unwrap();
        let mut rng = SeedSpec::new(7, 0).rng();
        let n = 10_000;
        let avg = (0..n).map(|_| poisson_count(mean, &mut rng) as f64).sum::<f64>() / n as f64;
        assert!((avg - mean).abs() <= 4.0 * (mean / n as f64).sqrt(), "avg={avg}");
    }

    #[test]
    fn poisson_zero_probability_at_mean_one() {
        let mut rng = SeedSpec::new(9, 0).rng();
        let n = 100_000;
        let zeros = (0..n).filter(|_| poisson_count(1.0, &mut rng) == 0).count();
        let p0 = zeros as f64 / n as f64;
        assert!((p0 - (-1f64).exp()).abs() < 0.006, "p0={p0}");
    }

    #[test]
    fn radius_examples() {
        assert_eq!(sample_radius(dim(2), 5.0, 0.0).unwrap(), 0.0);
        let r = sample_radius(dim(2), 5.0, 0.5).unwrap();
        let v = ball_volume(dim(2), 5.0).unwrap();
        assert!((r - (1.0 + 0.5 * v / (2.0 * std::f64::consts::PI)).acosh()).abs() < 1e-12);
        assert!((r - 4.32).abs() < 0.01);
    }

    #[test]
    fn direction_is_unit() {
        let mut rng = SeedSpec::new(3, 3).rng();
        for d in 2..=8 {
            let v = sample_direction(dim(d), &mut rng);
            let n: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn mean_direction_is_small() {
        let mut rng = SeedSpec::new(5, 1).rng();
        for d in [2usize, 3, 5] {
            let n = 100_000;
            let mut mean = vec![0.0; d];
            for _ in 0..n {
                let v = sample_direction(dim(d), &mut rng);
                mean.iter_mut().zip(&v).for_each(|(m, x)| *m += x / n as f64);
            }
            let norm = mean.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!(norm <= 4.0 / (n as f64).sqrt() * (d as f64).sqrt(), "d={d} norm={norm}");
        }
    }

    #[test]
    fn batch_is_deterministic_and_inside_ball() {
        let a = sample_ball_process(dim(2), 4.0, SeedSpec::new(11, 2)).unwrap();
        let b = sample_ball_process(dim(2), 4.0, SeedSpec::new(11, 2)).unwrap();
        assert_eq!(a, b);
        let c = sample_ball_process(dim(2), 4.0, SeedSpec::new(11, 3)).unwrap();
        assert_ne!(a.points, c.points);
        assert_eq!(a.realized_count, a.points.len());
        let o = HPoint::origin(dim(2));
        for i in 0..a.points.len() {
            assert!(distance(&o, &a.points.point(i)) <= 4.0 + 1e-9);
        }
    }

    #[test]
    fn tiny_ball_is_usually_empty() {
        let b = sample_ball_process(dim(3), 1e-3, SeedSpec::new(1, 1)).unwrap();
        assert!(b.points.is_empty());
        assert!(sample_ball_process(dim(2), 0.0, SeedSpec::new(1, 1)).is_err());
        assert!(sample_ball_process(dim(2), 301.0, SeedSpec::new(1, 1)).is_err());
    }

    #[test]
    fn rng_streams_differ() {
        let mut a = SeedSpec::new(1, 0).rng();
        let mut b = SeedSpec::new(1, 1).rng();
        let mut c = SeedSpec::new(2, 0).rng();
        let (x, y, z): (u64, u64, u64) = (a.random(), b.random(), c.random());
        assert_ne!(x, y);
        assert_ne!(x, z);
    }
}
