//! Exact neighbour search under the hyperbolic metric.
//!
//! Backends implement [`NeighbourIndex`] and are registered by name in an
//! [`IndexRegistry`]; experiments pick one at runtime (`--index`). All
//! backends share the same polar keys and the same distance kernel, so any
//! two of them return bitwise-identical distances for the same query.

mod brute;
mod cellgrid;
mod vptree;

pub use brute::BruteForce;
pub use cellgrid::CellGrid;
pub use vptree::VpTree;

use crate::error::{Error, Result};
use crate::geometry::{acosh1p, chord, cosh_m1, HPoint, POLAR_HEADER};
use crate::sampling::PointSet;

/// A stored point returned by a range query.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neighbour {
    /// Position of the point in the set the index was built from.
    pub id: usize,
    pub distance: f64,
}

/// Result of a capped k-th neighbour query.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum KthDistance {
    Distance(f64),
    /// Fewer than k points lie within the cap.
    Censored,
}

impl KthDistance {
    pub fn distance(self) -> Option<f64> {
        match self {
            Self::Distance(r) => Some(r),
            Self::Censored => None,
        }
    }
}

/// Polar keys for a point set, stored contiguously in a caller-chosen order.
#[derive(Clone, Debug)]
pub(crate) struct KeyStore {
    pub stride: usize,
    pub keys: Vec<f64>,
    /// Original id of each stored row.
    pub ids: Vec<u32>,
}

impl KeyStore {
    pub fn from_points(points: &PointSet) -> Self {
        let stride = points.dim() + POLAR_HEADER;
        let n = points.len();
        assert!(n < u32::MAX as usize, "point set too large for 32-bit ids");
        let mut keys = vec![0.0; n * stride];
        for (c, out) in points.iter().zip(keys.chunks_exact_mut(stride)) {
            crate::geometry::polar_key_into(c, out);
        }
        Self {
            stride,
            keys,
            ids: (0..n as u32).collect(),
        }
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.keys[i * self.stride..(i + 1) * self.stride]
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }
}

/// Small sorted buffer of the k smallest chords seen so far.
#[derive(Debug)]
pub(crate) struct KBest {
    k: usize,
    chords: Vec<f64>,
    r_cap: f64,
    cap_chord: f64,
    tau: f64,
}

impl KBest {
    pub fn new(k: usize, r_cap: f64) -> Self {
        Self {
            k,
            chords: Vec::with_capacity(k + 1),
            r_cap,
            cap_chord: cosh_m1(r_cap) * (1.0 + 1e-12),
            tau: r_cap,
        }
    }

    /// Current search radius as a distance.
    #[inline]
    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn is_full(&self) -> bool {
        self.chords.len() == self.k
    }

    #[inline]
    pub fn offer(&mut self, c: f64) {
        let bound = if self.chords.len() == self.k {
            self.chords[self.k - 1]
        } else {
            self.cap_chord
        };
        if c > bound {
            return;
        }
        let pos = self.chords.partition_point(|&x| x <= c);
        self.chords.insert(pos, c);
        if self.chords.len() > self.k {
            self.chords.pop();
        }
        if self.chords.len() == self.k {
            self.tau = acosh1p(self.chords[self.k - 1]).min(self.r_cap);
        }
    }

    pub fn finish(self) -> KthDistance {
        if self.chords.len() < self.k {
            return KthDistance::Censored;
        }
        let r = acosh1p(self.chords[self.k - 1]);
        if r <= self.r_cap {
            KthDistance::Distance(r)
        } else {
            KthDistance::Censored
        }
    }
}

/// Common interface of the neighbour search backends.
pub trait NeighbourIndex: Send + Sync {
    fn name(&self) -> &'static str;

    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Polar key of the point with original id `id`.
    fn key(&self, id: usize) -> &[f64];

    /// Original ids in the order the backend stores them; iterating queries in
    /// this order is cache friendly.
    fn storage_order(&self) -> &[u32];

    /// Appends every stored point within `rho` of the query key to `out`.
    /// With `exclude_self`, points coinciding with the query are skipped.
    fn within_key(&self, query: &[f64], rho: f64, exclude_self: bool, out: &mut Vec<Neighbour>);

    /// k-th smallest distance to stored points other than the query, if at most `r_cap`.
    fn kth_key(&self, query: &[f64], k: usize, r_cap: f64) -> KthDistance;

    fn neighbours_within(&self, q: &HPoint, rho: f64, exclude_self: bool) -> Vec<Neighbour> {
        let mut out = Vec::new();
        self.within_key(&q.polar_key(), rho, exclude_self, &mut out);
        out
    }

    fn kth_neighbour_distance(&self, q: &HPoint, k: usize, r_cap: f64) -> KthDistance {
        self.kth_key(&q.polar_key(), k, r_cap)
    }
}

pub type IndexBuilder = fn(&PointSet) -> Box<dyn NeighbourIndex>;

/// Name → constructor table for neighbour search backends.
#[derive(Clone)]
pub struct IndexRegistry {
    entries: Vec<(&'static str, IndexBuilder)>,
}

pub const DEFAULT_INDEX: &str = "vptree";

impl IndexRegistry {
    pub fn empty() -> Self {
        Self { entries: Vec::new() }
    }

    /// Registry holding `vptree`, `cells` and `brute`.
    pub fn with_builtins() -> Self {
        let mut r = Self::empty();
        r.register("vptree", |p| Box::new(VpTree::build(p)));
        r.register("cells", |p| Box::new(CellGrid::build(p)));
        r.register("brute", |p| Box::new(BruteForce::build(p)));
        r
    }

    /// Adds or replaces a backend.
    pub fn register(&mut self, name: &'static str, builder: IndexBuilder) {
        if let Some(slot) = self.entries.iter_mut().find(|(n, _)| *n == name) {
            slot.1 = builder;
        } else {
            self.entries.push((name, builder));
        }
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.iter().map(|(n, _)| *n).collect()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.iter().any(|(n, _)| *n == name)
    }

    pub fn build(&self, name: &str, points: &PointSet) -> Result<Box<dyn NeighbourIndex>> {
        self.entries
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, b)| b(points))
            .ok_or_else(|| Error::UnknownIndex(name.to_string()))
    }
}

impl Default for IndexRegistry {
    fn default() -> Self {
        Self::with_builtins()
    }
}

/// Builds the default backend.
pub fn build(points: &PointSet) -> VpTree {
    VpTree::build(points)
}

/// Reference k-th neighbour distance by a full scan; the query itself (any
/// coincident point) is not counted.
pub fn brute_force_kth(points: &[HPoint], q: &HPoint, k: usize) -> KthDistance {
    let qk = q.polar_key();
    let mut chords: Vec<f64> = points
        .iter()
        .map(|p| chord(&qk, &p.polar_key()))
        .filter(|&c| c > 0.0)
        .collect();
    if k == 0 || chords.len() < k {
        return KthDistance::Censored;
    }
    chords.select_nth_unstable_by(k - 1, f64::total_cmp);
    KthDistance::Distance(acosh1p(chords[k - 1]))
}
