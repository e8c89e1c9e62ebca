//! The exceedance process of k-NN ball volumes over a threshold.
//!
//! For every point `x` of the process inside `B_R`, the height is
//! `V(r_k(x)) - v`, where `r_k(x)` is the distance from `x` to its k-th
//! nearest other point and `v` the threshold. Heights up to `u_cap` need
//! neighbours no further than `ρ = V⁻¹(v + u_cap)`, so the process is sampled
//! on `B_{R+ρ}` and searches are capped at `ρ`; points with fewer than `k`
//! neighbours within `ρ` are censored at `u_cap`.
//!
//! The process is drawn cell by cell (see [`crate::cells`]). With the
//! default `cells` backend, cells outside `B_R` are only drawn when a search
//! reaches them, and points that provably sit far below both the restriction
//! level and the running maximum are settled without an exact search. The
//! other backends materialise every cell of `B_{R+ρ}`, build the named
//! index and search every point; both paths produce identical summaries.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cells::{kth_from_chords, nearby_cells, CellSampler, LazyProcess, Layout};
use crate::error::{Error, Result};
use crate::geometry::{
    acosh1p, chord, cosh_m1, threshold, Dimension, HPoint, ThresholdKind, ThresholdSpec, VolumeTable,
    MAX_RADIUS,
};
use crate::knn::{IndexRegistry, KthDistance};
use crate::sampling::{PointSet, SampleBatch, SeedSpec};

pub const DEFAULT_U_CAP: f64 = 15.0;
pub const CELL_INDEX: &str = "cells";

// Layer width and expected points per cell of the sampling layout.
const LAYER_WIDTH: f64 = 0.5;
const CELL_LOAD: f64 = 4.0;
// Points are settled cheaply only when their height is provably below this
// level (and below the restriction level).
const SETTLE_LEVEL: f64 = -3.0;

fn default_index() -> String {
    CELL_INDEX.to_string()
}

/// Parameters of one exceedance experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub d: Dimension,
    pub k: usize,
    #[serde(rename = "R")]
    pub big_r: f64,
    /// Restriction level: records are emitted for heights above `c`.
    pub c: f64,
    pub u_cap: f64,
    pub threshold: ThresholdKind,
    pub seed: u64,
    pub replications: u64,
    /// Neighbour search backend (`cells`, `vptree` or `brute`).
    #[serde(default = "default_index")]
    pub index: String,
}

impl ExperimentConfig {
    /// Standard threshold, `c = 0`, `u_cap = 15`, seed 0, one replication.
    pub fn new(d: Dimension, k: usize, big_r: f64) -> Self {
        Self {
            d,
            k,
            big_r,
            c: 0.0,
            u_cap: DEFAULT_U_CAP,
            threshold: ThresholdKind::Standard,
            seed: 0,
            replications: 1,
            index: default_index(),
        }
    }

    pub fn with_threshold(mut self, kind: ThresholdKind) -> Self {
        self.threshold = kind;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_replications(mut self, n: u64) -> Self {
        self.replications = n;
        self
    }

    pub fn with_c(mut self, c: f64) -> Self {
        self.c = c;
        self
    }

    pub fn with_u_cap(mut self, u_cap: f64) -> Self {
        self.u_cap = u_cap;
        self
    }

    pub fn with_index(mut self, name: &str) -> Self {
        self.index = name.to_string();
        self
    }

    pub fn threshold_spec(&self) -> Result<ThresholdSpec> {
        ThresholdSpec::new(self.threshold, self.k)
    }

    pub fn threshold_value(&self) -> Result<f64> {
        threshold(self.threshold_spec()?, self.d, self.big_r)
    }

    /// Checks every field and the buffer constraint `R + ρ ≤ 300`.
    pub fn validate(&self) -> Result<()> {
        self.threshold_spec()?;
        if !(self.big_r > 0.0 && self.big_r <= MAX_RADIUS) {
            return Err(Error::Config(format!("R must lie in (0, {MAX_RADIUS}], got {}", self.big_r)));
        }
        if !self.c.is_finite() || !self.u_cap.is_finite() {
            return Err(Error::Config("c and u_cap must be finite".into()));
        }
        if !(self.u_cap > self.c.max(0.0)) {
            return Err(Error::Config(format!(
                "u_cap must exceed max(c, 0); got u_cap = {}, c = {}",
                self.u_cap, self.c
            )));
        }
        if self.replications == 0 {
            return Err(Error::Config("at least one replication is required".into()));
        }
        buffer_radius(self).map(|_| ())
    }
}

/// One atom of the exceedance process.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExceedanceRecord {
    pub position: HPoint,
    pub height: f64,
    /// Fewer than `k` neighbours within the buffer radius; `height` is then
    /// `u_cap`, a lower bound on the true height.
    pub censored: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicationSummary {
    pub replication_id: u64,
    pub records: Vec<ExceedanceRecord>,
    /// Largest height over all points of `B_R`; `None` when `B_R` is empty.
    pub max_height: Option<f64>,
    pub n_points_in_br: usize,
    pub n_censored: usize,
}

impl ReplicationSummary {
    /// Number of records with height above `u`.
    pub fn count_above(&self, u: f64) -> usize {
        self.records.iter().filter(|r| r.height > u).count()
    }
}

/// Radius `ρ` with `V(ρ) = v + u_cap`.
pub fn buffer_radius(config: &ExperimentConfig) -> Result<f64> {
    let v = config.threshold_value()?;
    let total = v + config.u_cap;
    if !(total > 0.0) {
        return Err(Error::Config(format!(
            "threshold + u_cap must be positive, got {total}"
        )));
    }
    let rho = VolumeTable::get(config.d).inverse(total);
    if config.big_r + rho > MAX_RADIUS {
        return Err(Error::Config(format!(
            "R + buffer radius = {} exceeds {MAX_RADIUS}",
            config.big_r + rho
        )));
    }
    Ok(rho)
}

#[derive(Clone, Debug)]
struct Variant {
    k: usize,
    v: f64,
    c: f64,
    u_cap: f64,
    rho: f64,
    /// Settling level and the chord of its radius (0 when nothing can be settled).
    level: f64,
    settle_chord: f64,
}

/// Shared state for running replications of one or more configurations that
/// differ only in `k`, threshold, `c` and `u_cap`. All of them see the same
/// sample, and each gets exactly the summary it would get when run alone.
#[derive(Clone, Debug)]
pub struct Engine {
    d: Dimension,
    big_r: f64,
    seed: u64,
    index: String,
    variants: Vec<Variant>,
    rmax: f64,
    table: VolumeTable,
    layout: Layout,
    core_layers: usize,
}

impl Engine {
    pub fn new(configs: &[ExperimentConfig]) -> Result<Self> {
        Self::with_extra_buffer(configs, 0.0)
    }

    /// As [`Engine::new`], sampling on `B_{R+ρ+extra}` instead of `B_{R+ρ}`
    /// while still capping searches at `ρ`.
    pub fn with_extra_buffer(configs: &[ExperimentConfig], extra: f64) -> Result<Self> {
        let first = configs
            .first()
            .ok_or_else(|| Error::Config("no configuration given".into()))?;
        let mut variants = Vec::with_capacity(configs.len());
        for c in configs {
            c.validate()?;
            if c.d != first.d || c.big_r != first.big_r || c.seed != first.seed || c.index != first.index {
                return Err(Error::Config(
                    "configurations sharing a sample must agree on d, R, seed and index".into(),
                ));
            }
            let table = VolumeTable::get(c.d);
            let v = c.threshold_value()?;
            let level = c.c.min(SETTLE_LEVEL);
            let settle_chord = if v + level > 0.0 {
                cosh_m1(table.inverse(v + level)) * (1.0 - 1e-9)
            } else {
                0.0
            };
            variants.push(Variant {
                k: c.k,
                v,
                c: c.c,
                u_cap: c.u_cap,
                rho: buffer_radius(c)?,
                level,
                settle_chord,
            });
        }
        if !IndexRegistry::default().contains(&first.index) {
            return Err(Error::UnknownIndex(first.index.clone()));
        }
        let rho_max = variants.iter().map(|v| v.rho).fold(0.0, f64::max);
        let rmax = first.big_r + rho_max + extra.max(0.0);
        if rmax > MAX_RADIUS {
            return Err(Error::Config(format!("sampling radius {rmax} exceeds {MAX_RADIUS}")));
        }
        let table = VolumeTable::new(first.d);
        let layout = Layout::for_process(&table, first.big_r, rmax, LAYER_WIDTH, CELL_LOAD);
        let core_layers = layout.layers_within(first.big_r);
        Ok(Self {
            d: first.d,
            big_r: first.big_r,
            seed: first.seed,
            index: first.index.clone(),
            variants,
            rmax,
            table,
            layout,
            core_layers,
        })
    }

    pub fn sampling_radius(&self) -> f64 {
        self.rmax
    }

    fn sampler(&self, id: u64) -> CellSampler<'_> {
        CellSampler::new(&self.layout, &self.table, SeedSpec::new(self.seed, id), self.rmax)
    }

    /// The full sample on the sampling ball for replication `id`; the first
    /// `n_points_in_br` points are those of `B_R`, in the order records use.
    pub fn sample(&self, id: u64) -> (SampleBatch, usize) {
        let process = LazyProcess::new(self.sampler(id), self.core_layers);
        let points = process.materialize();
        let n = points.len();
        (
            SampleBatch {
                points,
                region_radius: self.rmax,
                realized_count: n,
            },
            process.core_len(),
        )
    }

    /// Runs replication `id` for every configuration, in configuration order.
    pub fn run(&self, id: u64) -> Result<Vec<ReplicationSummary>> {
        let out = if self.index == CELL_INDEX {
            self.run_lazy(id)
        } else {
            self.run_indexed(id)
        };
        out.map_err(|e| Error::Replication { id, source: Box::new(e) })
    }

    fn height(&self, var: &Variant, kth: KthDistance) -> (f64, bool) {
        match kth {
            KthDistance::Distance(r) => (self.table.volume(r) - var.v, false),
            KthDistance::Censored => (var.u_cap, true),
        }
    }

    fn run_indexed(&self, id: u64) -> Result<Vec<ReplicationSummary>> {
        let (batch, n_core) = self.sample(id);
        let index = IndexRegistry::default().build(&self.index, &batch.points)?;
        let mut acc: Vec<Accumulator> = self.variants.iter().map(|_| Accumulator::default()).collect();
        for i in 0..n_core {
            for (var, a) in self.variants.iter().zip(acc.iter_mut()) {
                let kth = index.kth_key(index.key(i), var.k, var.rho);
                let (h, censored) = self.height(var, kth);
                a.push(var, h, censored, || batch.points.point(i));
            }
        }
        Ok(self.finish(id, n_core, acc))
    }

    fn run_lazy(&self, id: u64) -> Result<Vec<ReplicationSummary>> {
        let mut process = LazyProcess::new(self.sampler(id), self.core_layers);
        let n_core = process.core_len();
        let kmax = self.variants.iter().map(|v| v.k).max().unwrap_or(1);
        let settle_max = self.variants.iter().map(|v| v.settle_chord).fold(0.0, f64::max);
        let rho_max = self.variants.iter().map(|v| v.rho).fold(0.0, f64::max);
        let mut acc: Vec<Accumulator> = self.variants.iter().map(|_| Accumulator::default()).collect();
        let mut near = Vec::new();
        let reach = self.scan_reach();
        let stride = self.layout.dim() + crate::geometry::POLAR_HEADER;
        let mut quick: Vec<f64> = Vec::with_capacity(kmax + 1);

        for cell in 0..process.core_cells() {
            let rows = process.core_rows(cell);
            if rows.is_empty() {
                continue;
            }
            nearby_cells(&self.layout, cell, self.core_layers + 1, reach, &mut near);
            for i in rows {
                let key = process.core_key(i).to_vec();
                quick.clear();
                let mut settled = false;
                'scan: for &nc in &near {
                    if settle_max <= 0.0 {
                        break;
                    }
                    for row in process.cell_keys(nc).chunks_exact(stride) {
                        let c = chord(&key, row);
                        if c > 0.0 && c <= settle_max {
                            crate::cells::insert_bounded(&mut quick, c, kmax);
                        }
                    }
                    if self.settled(&quick) {
                        settled = true;
                        break 'scan;
                    }
                }
                if settled {
                    continue;
                }
                let start = if settle_max > 0.0 { acosh1p(settle_max) } else { 0.1 };
                let chords = process.nearest_chords(&key, kmax, start, rho_max);
                for (var, a) in self.variants.iter().zip(acc.iter_mut()) {
                    let (h, censored) = self.height(var, kth_from_chords(&chords, var.k, var.rho));
                    a.push(var, h, censored, || point_of(&process, i));
                }
            }
        }

        // The maximum is only known exactly when it beats every settled point.
        for (vi, var) in self.variants.iter().enumerate() {
            if n_core == 0 || acc[vi].max.is_some_and(|m| m >= var.level) {
                continue;
            }
            let mut a = Accumulator::default();
            for i in 0..n_core {
                let key = process.core_key(i).to_vec();
                let chords = process.nearest_chords(&key, var.k, 0.1, var.rho);
                let (h, censored) = self.height(var, kth_from_chords(&chords, var.k, var.rho));
                a.push(var, h, censored, || point_of(&process, i));
            }
            acc[vi] = a;
        }
        Ok(self.finish(id, n_core, acc))
    }

    /// Layers on either side scanned cheaply: about the settling radius.
    fn scan_reach(&self) -> usize {
        let r = self
            .variants
            .iter()
            .map(|v| acosh1p(v.settle_chord))
            .fold(0.0, f64::max);
        ((r / (2.0 * LAYER_WIDTH)).ceil() as usize).clamp(1, 3)
    }

    /// True when every variant has its k-th neighbour within its settling chord.
    fn settled(&self, chords: &[f64]) -> bool {
        self.variants
            .iter()
            .all(|v| chords.len() >= v.k && chords[v.k - 1] <= v.settle_chord)
    }

    fn finish(&self, id: u64, n_core: usize, acc: Vec<Accumulator>) -> Vec<ReplicationSummary> {
        acc.into_iter()
            .map(|a| ReplicationSummary {
                replication_id: id,
                n_censored: a.records.iter().filter(|r| r.censored).count(),
                records: a.records,
                max_height: if n_core == 0 { None } else { a.max },
                n_points_in_br: n_core,
            })
            .collect()
    }

    pub fn dim(&self) -> Dimension {
        self.d
    }

    pub fn big_r(&self) -> f64 {
        self.big_r
    }
}

fn point_of(process: &LazyProcess<'_>, i: usize) -> HPoint {
    HPoint::new(process.core_coords(i).to_vec()).expect("sampled points lie on the hyperboloid")
}

#[derive(Default)]
struct Accumulator {
    records: Vec<ExceedanceRecord>,
    max: Option<f64>,
}

impl Accumulator {
    fn push(&mut self, var: &Variant, h: f64, censored: bool, pos: impl FnOnce() -> HPoint) {
        self.max = Some(self.max.map_or(h, |m| m.max(h)));
        if h > var.c {
            self.records.push(ExceedanceRecord {
                position: pos(),
                height: h,
                censored,
            });
        }
    }
}

pub fn run_replication(config: &ExperimentConfig, id: u64) -> Result<ReplicationSummary> {
    let engine = Engine::new(std::slice::from_ref(config))?;
    Ok(engine.run(id)?.pop().expect("one configuration"))
}

/// All replications `0..replications`, ordered by id.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<ReplicationSummary>> {
    let mut out = run_experiments(std::slice::from_ref(config), config.replications)?;
    Ok(out.pop().expect("one configuration"))
}

/// Replications `0..replications` of several configurations sharing samples;
/// one ordered list of summaries per configuration.
pub fn run_experiments(configs: &[ExperimentConfig], replications: u64) -> Result<Vec<Vec<ReplicationSummary>>> {
    let engine = Engine::new(configs)?;
    let per_rep: Vec<Vec<ReplicationSummary>> = (0..replications)
        .into_par_iter()
        .map(|id| engine.run(id))
        .collect::<Result<_>>()?;
    let mut out: Vec<Vec<ReplicationSummary>> = configs.iter().map(|_| Vec::with_capacity(per_rep.len())).collect();
    for rep in per_rep {
        for (slot, s) in out.iter_mut().zip(rep) {
            slot.push(s);
        }
    }
    Ok(out)
}

/// Points of `batch` other than `x` inside the ball around `x` of volume `vol`.
pub fn count_in_volume_ball(batch: &PointSet, x: &HPoint, vol: f64) -> usize {
    let d = Dimension::new(batch.dim()).expect("point sets have d >= 2");
    let r = VolumeTable::get(d).inverse(vol);
    let q = x.polar_key();
    let mut key = vec![0.0; batch.dim() + crate::geometry::POLAR_HEADER];
    batch
        .iter()
        .filter(|c| {
            crate::geometry::polar_key_into(c, &mut key);
            let ch = chord(&q, &key);
            ch > 0.0 && acosh1p(ch) <= r
        })
        .count()
}
