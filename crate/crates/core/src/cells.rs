//! Cell decomposition of centred hyperbolic balls.
//!
//! A ball is cut into concentric layers, and each layer into `2^{L(d-1)}`
//! cells of equal volume through an equal-area chart of the unit sphere
//! (hyperspherical angles pushed through the distribution functions of their
//! `sin^m` densities). Cells are the unit of both sampling and search: every
//! cell of a replication draws its points from its own generator stream, so
//! a cell can be materialised on demand and always yields the same points.

use std::collections::HashMap;
use std::f64::consts::{PI, TAU};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use smallvec::{smallvec, SmallVec};

use crate::geometry::{acosh1p, chord, cosh_m1, polar_key_into, VolumeTable, POLAR_HEADER};
use crate::knn::KthDistance;
use crate::sampling::{poisson_count, PointSet, SeedSpec};

// Relative and absolute slack added to every conservative angular bound.
const REL_SLACK: f64 = 1e-9;
const ABS_SLACK: f64 = 1e-12;
const MAX_LEVEL: u32 = 30;

/// `∫_0^θ sin^m(x) dx` by the usual reduction formula.
fn sin_power_integral(m: usize, theta: f64) -> f64 {
    let (s, c) = theta.sin_cos();
    let mut j = if m % 2 == 0 {
        theta
    } else {
        let h = (0.5 * theta).sin();
        2.0 * h * h
    };
    let mut p = if m % 2 == 0 { 2 } else { 3 };
    while p <= m {
        let pf = p as f64;
        j = (-(s.powi(p as i32 - 1)) * c + (pf - 1.0) * j) / pf;
        p += 2;
    }
    j
}

fn sin_power_total(m: usize) -> f64 {
    let mut j = if m % 2 == 0 { PI } else { 2.0 };
    let mut p = if m % 2 == 0 { 2 } else { 3 };
    while p <= m {
        j *= (p as f64 - 1.0) / p as f64;
        p += 2;
    }
    j
}

/// Distribution function of the density `∝ sin^m θ` on `[0, π]`.
pub fn sin_power_cdf(m: usize, theta: f64) -> f64 {
    match m {
        0 => theta / PI,
        1 => {
            let h = (0.5 * theta).sin();
            h * h
        }
        _ => (sin_power_integral(m, theta) / sin_power_total(m)).clamp(0.0, 1.0),
    }
}

/// Inverse of [`sin_power_cdf`].
pub fn sin_power_quantile(m: usize, w: f64) -> f64 {
    let w = w.clamp(0.0, 1.0);
    match m {
        0 => PI * w,
        1 => 2.0 * w.sqrt().asin(),
        _ => {
            if w > 0.5 {
                return PI - sin_power_quantile(m, 1.0 - w);
            }
            let total = sin_power_total(m);
            let target = w * total;
            let (mut lo, mut hi) = (0.0, 0.5 * PI);
            let mut x = ((m as f64 + 1.0) * target).powf(1.0 / (m as f64 + 1.0)).min(hi);
            for _ in 0..100 {
                let f = sin_power_integral(m, x) - target;
                if f > 0.0 {
                    hi = x;
                } else {
                    lo = x;
                }
                if hi - lo <= 4.0 * f64::EPSILON * hi.max(1e-300) || f == 0.0 {
                    break;
                }
                let slope = x.sin().powi(m as i32);
                let mut next = x - f / slope;
                if !(next > lo && next < hi) {
                    next = 0.5 * (lo + hi);
                }
                x = next;
            }
            x
        }
    }
}

/// Hyperspherical angles `(θ_0, …, θ_{d-3}, φ)` of directions in `R^d`:
/// `u_0 = cos θ_0`, `u_1 = sin θ_0 cos θ_1`, …, `u_{d-1} = (∏ sin θ_c) sin φ`.
/// Under the uniform measure `θ_c` has density `∝ sin^{d-2-c}` and `φ` is
/// uniform, independently.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SphereChart {
    d: usize,
}

impl SphereChart {
    pub fn new(d: usize) -> Self {
        assert!(d >= 2);
        Self { d }
    }

    /// Number of chart coordinates, `d - 1`.
    pub fn coords(&self) -> usize {
        self.d - 1
    }

    fn exponent(&self, c: usize) -> usize {
        self.d - 2 - c
    }

    pub fn angles(&self, u: &[f64], out: &mut [f64]) {
        let d = self.d;
        let mut tail = u[d - 1] * u[d - 1] + u[d - 2] * u[d - 2];
        let mut phi = u[d - 1].atan2(u[d - 2]);
        if phi < 0.0 {
            phi += TAU;
        }
        if phi >= TAU {
            phi = 0.0;
        }
        out[d - 2] = phi;
        for c in (0..d.saturating_sub(2)).rev() {
            out[c] = tail.sqrt().atan2(u[c]);
            tail += u[c] * u[c];
        }
    }

    pub fn direction(&self, angles: &[f64], u: &mut [f64]) {
        let d = self.d;
        let mut s = 1.0;
        for c in 0..d - 2 {
            let (sn, cs) = angles[c].sin_cos();
            u[c] = s * cs;
            s *= sn;
        }
        let (sn, cs) = angles[d - 2].sin_cos();
        u[d - 2] = s * cs;
        u[d - 1] = s * sn;
    }

    /// Chart value in `[0, 1]` of angle `c`.
    pub fn to_unit(&self, c: usize, angle: f64) -> f64 {
        if c == self.d - 2 {
            angle / TAU
        } else {
            sin_power_cdf(self.exponent(c), angle)
        }
    }

    pub fn from_unit(&self, c: usize, w: f64) -> f64 {
        if c == self.d - 2 {
            TAU * w
        } else {
            sin_power_quantile(self.exponent(c), w)
        }
    }
}

/// Layer edges and per-layer chart resolutions.
#[derive(Clone, Debug, PartialEq)]
pub struct Layout {
    d: usize,
    edges: Vec<f64>,
    levels: Vec<u32>,
    offsets: Vec<u64>,
    means: Vec<f64>,
}

impl Layout {
    /// Layers of width `h` aligned so that `core` is an edge, out to at least
    /// `outer`; each layer gets about `target` expected points per cell under
    /// unit intensity. Nothing here depends on `outer` except the number of
    /// layers, so cells of a larger layout extend those of a smaller one.
    pub fn for_process(table: &VolumeTable, core: f64, outer: f64, h: f64, target: f64) -> Self {
        let inner = (core / h).ceil().max(1.0) as usize;
        let mut edges = vec![0.0];
        for i in 1..=inner {
            edges.push(core - (inner - i) as f64 * h);
        }
        let mut j = 1;
        while edges[edges.len() - 1] < outer {
            edges.push(core + j as f64 * h);
            j += 1;
        }
        let volumes: Vec<f64> = edges
            .windows(2)
            .map(|w| table.volume(w[1]) - table.volume(w[0]))
            .collect();
        Self::with_loads(table.dim(), edges, &volumes, target)
    }

    /// Layers with the given edges, resolution chosen from the expected
    /// point load of each layer.
    pub fn with_loads(d: usize, edges: Vec<f64>, loads: &[f64], target: f64) -> Self {
        assert_eq!(edges.len(), loads.len() + 1);
        let dims = (d - 1) as f64;
        let cap = MAX_LEVEL.min(60 / (d as u32 - 1));
        let levels: Vec<u32> = loads
            .iter()
            .map(|&v| {
                let cells = v / target;
                if cells <= 1.0 {
                    0
                } else {
                    ((cells.log2() / dims).round() as u32).min(cap)
                }
            })
            .collect();
        let mut offsets = vec![0u64];
        for &l in &levels {
            let last = offsets[offsets.len() - 1];
            offsets.push(last + (1u64 << (l as u64 * (d as u64 - 1))));
        }
        let means = loads
            .iter()
            .zip(&levels)
            .map(|(&v, &l)| v / (1u64 << (l as u64 * (d as u64 - 1))) as f64)
            .collect();
        Self {
            d,
            edges,
            levels,
            offsets,
            means,
        }
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn layers(&self) -> usize {
        self.levels.len()
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    /// Number of layers whose outer edge is at most `r`.
    pub fn layers_within(&self, r: f64) -> usize {
        self.edges[1..].iter().take_while(|&&e| e <= r).count()
    }

    pub fn total_cells(&self, layers: usize) -> u64 {
        self.offsets[layers]
    }

    pub fn cells_in_layer(&self, j: usize) -> u64 {
        self.offsets[j + 1] - self.offsets[j]
    }

    fn bins(&self, j: usize) -> u64 {
        1u64 << self.levels[j]
    }

    /// Layer containing radius `t` (the last layer for radii beyond it).
    pub fn layer_of(&self, t: f64) -> usize {
        let j = self.edges[1..].partition_point(|&e| e <= t);
        j.min(self.layers() - 1)
    }

    /// Cell of layer `j` holding the direction with chart values `w`.
    fn cell_of_unit(&self, j: usize, w: &[f64]) -> u64 {
        let n = self.bins(j);
        let mut idx = 0u64;
        for &x in w {
            let b = ((x * n as f64) as u64).min(n - 1);
            idx = idx * n + b;
        }
        self.offsets[j] + idx
    }

    /// Layer of a global cell id.
    pub fn layer_of_cell(&self, cell: u64) -> usize {
        self.offsets[1..].partition_point(|&o| o <= cell)
    }

    fn decode(&self, j: usize, local: u64, bins: &mut [u64]) {
        let n = self.bins(j);
        let mut rest = local;
        for b in bins.iter_mut().rev() {
            *b = rest % n;
            rest /= n;
        }
    }

    fn encode(&self, j: usize, bins: &[u64]) -> u64 {
        let n = self.bins(j);
        self.offsets[j] + bins.iter().fold(0u64, |acc, &b| acc * n + b)
    }

    /// Calls `f` with every cell that may contain a point within `r` of the
    /// query and at radius at most `rmax`. The enumeration is conservative:
    /// it never misses such a cell, but may report extra ones.
    pub fn cells_near<F: FnMut(u64)>(
        &self,
        chart: &SphereChart,
        q: &QueryPos,
        r: f64,
        rmax: f64,
        mut f: F,
    ) {
        let reach = r * (1.0 + REL_SLACK) + ABS_SLACK;
        let cm1_r = cosh_m1(r);
        for j in 0..self.layers() {
            let a = self.edges[j];
            if a > rmax {
                break;
            }
            let b = self.edges[j + 1].min(rmax);
            if a - q.t > reach {
                break;
            }
            if q.t - b > reach {
                continue;
            }
            // Largest admissible 1 - cos(angle) over the layer; attained at the
            // radius closest to acosh(cosh t / cosh r).
            let tau = if q.t > r {
                let ratio = (q.t - r).exp() * (1.0 + (-2.0 * q.t).exp()) / (1.0 + (-2.0 * r).exp());
                ratio.max(1.0).acosh().clamp(a, b)
            } else {
                a
            };
            let denom = q.sinh_t * tau.sinh();
            let psi = if denom <= 0.0 {
                PI
            } else {
                let gap = (cm1_r - cosh_m1(tau - q.t)) / denom;
                let gap = gap * (1.0 + REL_SLACK) + ABS_SLACK;
                if gap < 0.0 {
                    continue;
                }
                if gap >= 2.0 {
                    PI
                } else {
                    2.0 * (0.5 * gap).sqrt().asin()
                }
            };
            self.cap_cells(chart, j, 0, &q.angles, psi, 0, &mut f);
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn cap_cells<F: FnMut(u64)>(
        &self,
        chart: &SphereChart,
        j: usize,
        c: usize,
        qa: &[f64],
        psi: f64,
        prefix: u64,
        f: &mut F,
    ) {
        let n = self.bins(j);
        let nf = n as f64;
        if c == self.d - 2 {
            let all = |f: &mut F| {
                for b in 0..n {
                    f(self.offsets[j] + prefix * n + b);
                }
            };
            if psi >= PI {
                all(f);
                return;
            }
            let lo = ((qa[c] - psi) / TAU * nf).floor() as i64;
            let hi = ((qa[c] + psi) / TAU * nf).floor() as i64;
            if hi - lo + 1 >= n as i64 {
                all(f);
                return;
            }
            for k in lo..=hi {
                let b = k.rem_euclid(n as i64) as u64;
                f(self.offsets[j] + prefix * n + b);
            }
            return;
        }

        let tq = qa[c];
        let (lo_t, hi_t) = if psi >= PI {
            (0.0, PI)
        } else {
            ((tq - psi).max(0.0), (tq + psi).min(PI))
        };
        let b_lo = ((chart.to_unit(c, lo_t - 1e-9) * nf) as u64).min(n - 1);
        let b_hi = ((chart.to_unit(c, hi_t + 1e-9) * nf) as u64).min(n - 1);
        let (sq, cq) = tq.sin_cos();
        let cos_psi = psi.cos();
        for b in b_lo..=b_hi {
            let sub = if psi >= PI || sq < 1e-12 {
                PI
            } else {
                let ea = chart.from_unit(c, b as f64 / nf).max(lo_t);
                let eb = chart.from_unit(c, (b + 1) as f64 / nf).min(hi_t);
                if ea <= 0.0 || eb >= PI {
                    PI
                } else {
                    let h = |th: f64| {
                        let (s, cs) = th.sin_cos();
                        (cos_psi - cs * cq) / (s * sq)
                    };
                    let mut hmin = h(ea).min(h(eb));
                    if cos_psi > 0.0 {
                        let ratio = cq / cos_psi;
                        if ratio.abs() <= 1.0 {
                            let ts = ratio.acos();
                            if ts > ea && ts < eb {
                                hmin = hmin.min(h(ts));
                            }
                        }
                    }
                    if hmin <= -1.0 {
                        PI
                    } else {
                        (hmin.min(1.0).acos() * (1.0 + REL_SLACK) + 1e-9).min(PI)
                    }
                }
            };
            self.cap_cells(chart, j, c + 1, qa, sub, prefix * n + b, f);
        }
    }
}

/// Radius, `sinh` of the radius, and chart angles of a query point.
#[derive(Clone, Debug)]
pub struct QueryPos {
    pub t: f64,
    pub sinh_t: f64,
    pub angles: Vec<f64>,
}

impl QueryPos {
    pub fn from_key(chart: &SphereChart, key: &[f64]) -> Self {
        let mut angles = vec![0.0; chart.coords()];
        chart.angles(&key[POLAR_HEADER..], &mut angles);
        Self {
            t: 2.0 * key[0].ln(),
            sinh_t: key[2],
            angles,
        }
    }
}

/// Points of one or more cells: hyperboloid coordinates and polar keys.
#[derive(Clone, Debug, Default)]
pub struct CellPoints {
    pub coords: Vec<f64>,
    pub keys: Vec<f64>,
}

// Per-point work buffers; inline for any dimension used in practice.
type Scratch<T> = SmallVec<[T; 12]>;

/// Draws the points of individual cells for one replication.
#[derive(Clone, Debug)]
pub struct CellSampler<'a> {
    layout: &'a Layout,
    table: &'a VolumeTable,
    chart: SphereChart,
    key: [u8; 32],
    rmax: f64,
    v_edges: Vec<f64>,
}

impl<'a> CellSampler<'a> {
    pub fn new(layout: &'a Layout, table: &'a VolumeTable, seed: SeedSpec, rmax: f64) -> Self {
        let mut key = [0u8; 32];
        seed.rng().fill_bytes(&mut key);
        let v_edges = layout.edges.iter().map(|&e| table.volume(e)).collect();
        Self {
            layout,
            table,
            chart: SphereChart::new(layout.d),
            key,
            rmax,
            v_edges,
        }
    }

    pub fn rmax(&self) -> f64 {
        self.rmax
    }

    /// Appends the points of `cell` that lie within `rmax`. The draw does not
    /// depend on `rmax`: points beyond it are generated and discarded.
    pub fn sample_cell(&self, cell: u64, out: &mut CellPoints) {
        let layout = self.layout;
        let d = layout.d;
        let j = layout.layer_of_cell(cell);
        let local = cell - layout.offsets[j];
        let mut bins: Scratch<u64> = smallvec![0; d - 1];
        layout.decode(j, local, &mut bins);

        let mut rng = ChaCha8Rng::from_seed(self.key);
        rng.set_stream(cell);
        let count = poisson_count(layout.means[j], &mut rng);
        if count == 0 {
            return;
        }
        let (a, b) = (layout.edges[j], layout.edges[j + 1]);
        let (va, vb) = (self.v_edges[j], self.v_edges[j + 1]);
        let nf = layout.bins(j) as f64;
        let m = (d - 1) as i32;
        let mut angles: Scratch<f64> = smallvec![0.0; d - 1];
        let mut u: Scratch<f64> = smallvec![0.0; d];
        let mut coords: Scratch<f64> = smallvec![0.0; d + 1];
        let mut key: Scratch<f64> = smallvec![0.0; d + POLAR_HEADER];
        out.coords.reserve(count as usize * (d + 1));
        out.keys.reserve(count as usize * (d + POLAR_HEADER));
        for _ in 0..count {
            let t = if m == 1 || a < 1.0 {
                let v = va + rng.random::<f64>() * (vb - va);
                self.table.inverse(v).clamp(a, b)
            } else {
                // Exponential proposal on [a, b], accepted with probability
                // ((1 - e^{-2t}) / (1 - e^{-2b}))^{d-1}.
                let span = (m as f64 * (b - a)).exp_m1();
                let top = -(-2.0 * b).exp_m1();
                loop {
                    let x: f64 = rng.random();
                    let t = (a + (x * span).ln_1p() / m as f64).min(b);
                    let y: f64 = rng.random();
                    if y * top.powi(m) <= (-(-2.0 * t).exp_m1()).powi(m) {
                        break t;
                    }
                }
            };
            for (c, ang) in angles.iter_mut().enumerate() {
                let w = (bins[c] as f64 + rng.random::<f64>()) / nf;
                *ang = self.chart.from_unit(c, w);
            }
            self.chart.direction(&angles, &mut u);
            if t > self.rmax {
                continue;
            }
            let (s, ch) = (t.sinh(), t.cosh());
            coords[0] = ch;
            for (x, ui) in coords[1..].iter_mut().zip(&u) {
                *x = s * ui;
            }
            polar_key_into(&coords, &mut key);
            out.coords.extend_from_slice(&coords);
            out.keys.extend_from_slice(&key);
        }
    }
}

/// One replication of the process on `B_rmax`, sampled cell by cell: cells
/// of the core layers are drawn up front, outer cells when first touched.
#[derive(Debug)]
pub struct LazyProcess<'a> {
    sampler: CellSampler<'a>,
    chart: SphereChart,
    core_cells: u64,
    start: Vec<usize>,
    core: CellPoints,
    outer: CellPoints,
    /// Row range in `outer` of every outer cell drawn so far.
    outer_rows: HashMap<u64, (usize, usize)>,
    stride: usize,
}

impl<'a> LazyProcess<'a> {
    /// Draws every cell of the first `core_layers` layers.
    pub fn new(sampler: CellSampler<'a>, core_layers: usize) -> Self {
        let layout = sampler.layout;
        let core_cells = layout.total_cells(core_layers);
        let mut start = Vec::with_capacity(core_cells as usize + 1);
        let mut core = CellPoints::default();
        let stride = layout.d + POLAR_HEADER;
        start.push(0);
        for cell in 0..core_cells {
            sampler.sample_cell(cell, &mut core);
            start.push(core.keys.len() / stride);
        }
        Self {
            chart: SphereChart::new(layout.d),
            sampler,
            core_cells,
            start,
            core,
            outer: CellPoints::default(),
            outer_rows: HashMap::new(),
            stride,
        }
    }

    pub fn layout(&self) -> &Layout {
        self.sampler.layout
    }

    pub fn chart(&self) -> &SphereChart {
        &self.chart
    }

    pub fn core_len(&self) -> usize {
        self.start[self.start.len() - 1]
    }

    pub fn core_cells(&self) -> u64 {
        self.core_cells
    }

    pub fn core_key(&self, i: usize) -> &[f64] {
        &self.core.keys[i * self.stride..(i + 1) * self.stride]
    }

    pub fn core_coords(&self, i: usize) -> &[f64] {
        let w = self.layout().d + 1;
        &self.core.coords[i * w..(i + 1) * w]
    }

    /// Row range of a core cell.
    pub fn core_rows(&self, cell: u64) -> std::ops::Range<usize> {
        self.start[cell as usize]..self.start[cell as usize + 1]
    }

    /// Keys of any cell, drawing it first if necessary.
    pub(crate) fn cell_keys(&mut self, cell: u64) -> &[f64] {
        if cell < self.core_cells {
            let r = self.core_rows(cell);
            return &self.core.keys[r.start * self.stride..r.end * self.stride];
        }
        let (a, b) = match self.outer_rows.get(&cell) {
            Some(&r) => r,
            None => {
                let a = self.outer.keys.len() / self.stride;
                self.sampler.sample_cell(cell, &mut self.outer);
                let r = (a, self.outer.keys.len() / self.stride);
                self.outer_rows.insert(cell, r);
                r
            }
        };
        &self.outer.keys[a * self.stride..b * self.stride]
    }

    /// Number of outer cells drawn so far.
    pub fn outer_cells_drawn(&self) -> usize {
        self.outer_rows.len()
    }

    /// The `kmax` smallest chords from `key` to other points within `r_cap`,
    /// sorted ascending; shorter than `kmax` when the cap is exhausted. The
    /// search starts at radius `r_start` and widens until `kmax` points are
    /// found.
    pub fn nearest_chords(&mut self, key: &[f64], kmax: usize, r_start: f64, r_cap: f64) -> Vec<f64> {
        let q = QueryPos::from_key(&self.chart, key);
        let mut r = r_start.clamp(1e-3, r_cap);
        let mut cells = Vec::new();
        loop {
            cells.clear();
            let layout = self.sampler.layout;
            layout.cells_near(&self.chart, &q, r, self.sampler.rmax, |c| cells.push(c));
            let pre = cosh_m1(r) * (1.0 + 1e-12);
            let mut best: Vec<f64> = Vec::with_capacity(kmax + 1);
            for &cell in &cells {
                let stride = self.stride;
                for row in self.cell_keys(cell).chunks_exact(stride) {
                    let c = chord(key, row);
                    if c > 0.0 && c <= pre {
                        insert_bounded(&mut best, c, kmax);
                    }
                }
            }
            let enough = best.len() == kmax && acosh1p(best[kmax - 1]) <= r;
            if enough || r >= r_cap {
                return best;
            }
            r = (r * 1.5).min(r_cap);
        }
    }

    /// Every point of the process on `B_rmax`: core cells in order, then
    /// all outer cells in order.
    pub fn materialize(&self) -> PointSet {
        let layout = self.sampler.layout;
        let mut all = CellPoints {
            coords: self.core.coords.clone(),
            keys: Vec::new(),
        };
        let layers = layout.layers_within(f64::INFINITY);
        let last = layout.total_cells(layers);
        for cell in self.core_cells..last {
            if layout.edges[layout.layer_of_cell(cell)] > self.sampler.rmax {
                break;
            }
            match self.outer_rows.get(&cell) {
                Some(&(a, b)) => {
                    let w = layout.d + 1;
                    all.coords.extend_from_slice(&self.outer.coords[a * w..b * w]);
                }
                None => self.sampler.sample_cell(cell, &mut all),
            }
        }
        PointSet::from_flat(layout.d, all.coords)
    }
}

#[inline]
pub(crate) fn insert_bounded(best: &mut Vec<f64>, c: f64, k: usize) {
    if best.len() == k && c >= best[k - 1] {
        return;
    }
    let pos = best.partition_point(|&x| x <= c);
    best.insert(pos, c);
    if best.len() > k {
        best.pop();
    }
}

/// k-th entry of a sorted chord list as a capped distance.
pub fn kth_from_chords(chords: &[f64], k: usize, r_cap: f64) -> KthDistance {
    if chords.len() < k {
        return KthDistance::Censored;
    }
    let r = acosh1p(chords[k - 1]);
    if r <= r_cap {
        KthDistance::Distance(r)
    } else {
        KthDistance::Censored
    }
}

/// For a point stored in `cell`, the cells searched first when looking for
/// close neighbours cheaply: in each layer within `reach` layers of the
/// cell's own (restricted to the first `layers`), the cell over the same
/// chart position and its neighbours along each chart coordinate.
pub fn nearby_cells(layout: &Layout, cell: u64, layers: usize, reach: usize, out: &mut Vec<u64>) {
    out.clear();
    let d = layout.d;
    let j = layout.layer_of_cell(cell);
    let mut bins: Scratch<u64> = smallvec![0; d - 1];
    layout.decode(j, cell - layout.offsets[j], &mut bins);
    let mut mapped: Scratch<u64> = smallvec![0; d - 1];
    let lo = j.saturating_sub(reach);
    let hi = (j + reach).min(layers.saturating_sub(1)).max(j);
    for jj in lo..=hi {
        let (l, l2) = (layout.levels[j], layout.levels[jj]);
        for (m, &b) in mapped.iter_mut().zip(&bins) {
            *m = if l2 >= l {
                (b << (l2 - l)) + ((1u64 << (l2 - l)) >> 1)
            } else {
                b >> (l - l2)
            };
        }
        let start = out.len();
        out.push(layout.encode(jj, &mapped));
        let n = layout.bins(jj);
        if n < 2 {
            continue;
        }
        for c in 0..d - 1 {
            let b = mapped[c];
            let wraps = c == d - 2;
            for nb in [b.wrapping_sub(1), b + 1] {
                let nb = match (wraps, nb) {
                    (true, x) if x == u64::MAX => n - 1,
                    (true, x) if x == n => 0,
                    (false, x) if x >= n => continue,
                    (_, x) => x,
                };
                mapped[c] = nb;
                let id = layout.encode(jj, &mapped);
                if !out[start..].contains(&id) {
                    out.push(id);
                }
            }
            mapped[c] = b;
        }
    }
}

/// Cell of a point with polar key `key` in `layout`.
pub fn cell_of_key(layout: &Layout, chart: &SphereChart, key: &[f64]) -> u64 {
    let t = 2.0 * key[0].ln();
    let j = layout.layer_of(t);
    let mut angles = vec![0.0; chart.coords()];
    chart.angles(&key[POLAR_HEADER..], &mut angles);
    let w: Vec<f64> = angles.iter().enumerate().map(|(c, &a)| chart.to_unit(c, a)).collect();
    layout.cell_of_unit(j, &w)
}
