use super::{KBest, KeyStore, KthDistance, Neighbour, NeighbourIndex};
use crate::cells::{cell_of_key, Layout, QueryPos, SphereChart};
use crate::geometry::{acosh1p, chord, cosh_m1};
use crate::sampling::PointSet;

const LAYER_WIDTH: f64 = 0.5;
const CELL_LOAD: f64 = 4.0;

/// Points bucketed by radial layer and equal-area direction cell.
///
/// Queries enumerate the cells that may meet the search ball and scan them;
/// k-th neighbour queries start from a small ball and widen it until it holds
/// `k` points.
#[derive(Clone, Debug)]
pub struct CellGrid {
    store: KeyStore,
    layout: Layout,
    chart: SphereChart,
    start: Vec<usize>,
    row_of: Vec<u32>,
    rmax: f64,
}

impl CellGrid {
    pub fn build(points: &PointSet) -> Self {
        let d = points.dim();
        let chart = SphereChart::new(d);
        let mut store = KeyStore::from_points(points);
        let n = store.len();
        let rmax = (0..n).map(|i| points.radius(i)).fold(0.0, f64::max);
        let layers = ((rmax / LAYER_WIDTH).floor() as usize + 1).max(1);
        let edges: Vec<f64> = (0..=layers).map(|i| i as f64 * LAYER_WIDTH).collect();
        let mut loads = vec![0.0; layers];
        for i in 0..n {
            loads[((points.radius(i) / LAYER_WIDTH) as usize).min(layers - 1)] += 1.0;
        }
        let layout = Layout::with_loads(d, edges, &loads, CELL_LOAD);

        let cells: Vec<u64> = (0..n).map(|i| cell_of_key(&layout, &chart, store.row(i))).collect();
        let total = layout.total_cells(layout.layers()) as usize;
        let mut start = vec![0usize; total + 1];
        for &c in &cells {
            start[c as usize + 1] += 1;
        }
        for c in 0..total {
            start[c + 1] += start[c];
        }
        let mut order: Vec<u32> = (0..n as u32).collect();
        order.sort_by_key(|&i| cells[i as usize]);

        let stride = store.stride;
        let mut keys = Vec::with_capacity(n * stride);
        for &i in &order {
            keys.extend_from_slice(store.row(i as usize));
        }
        store.keys = keys;
        store.ids = order;
        let mut row_of = vec![0u32; n];
        for (row, &id) in store.ids.iter().enumerate() {
            row_of[id as usize] = row as u32;
        }
        Self {
            store,
            layout,
            chart,
            start,
            row_of,
            rmax,
        }
    }

    fn scan<F: FnMut(usize, f64)>(&self, q: &QueryPos, key: &[f64], r: f64, mut f: F) {
        self.layout.cells_near(&self.chart, q, r, self.rmax, |cell| {
            let cell = cell as usize;
            for row in self.start[cell]..self.start[cell + 1] {
                f(row, chord(key, self.store.row(row)));
            }
        });
    }
}

impl NeighbourIndex for CellGrid {
    fn name(&self) -> &'static str {
        "cells"
    }

    fn len(&self) -> usize {
        self.store.len()
    }

    fn key(&self, id: usize) -> &[f64] {
        self.store.row(self.row_of[id] as usize)
    }

    fn storage_order(&self) -> &[u32] {
        &self.store.ids
    }

    fn within_key(&self, query: &[f64], rho: f64, exclude_self: bool, out: &mut Vec<Neighbour>) {
        if self.store.len() == 0 || !(rho >= 0.0) {
            return;
        }
        let q = QueryPos::from_key(&self.chart, query);
        let r = rho.min(q.t + self.rmax + 1.0);
        let pre = cosh_m1(rho) * (1.0 + 1e-12) + f64::MIN_POSITIVE;
        let start = out.len();
        self.scan(&q, query, r, |row, c| {
            if c <= pre && !(exclude_self && c == 0.0) {
                let distance = acosh1p(c);
                if distance <= rho {
                    out.push(Neighbour {
                        id: self.store.ids[row] as usize,
                        distance,
                    });
                }
            }
        });
        out[start..].sort_by_key(|nb| nb.id);
    }

    fn kth_key(&self, query: &[f64], k: usize, r_cap: f64) -> KthDistance {
        if k == 0 || self.store.len() < k {
            return KthDistance::Censored;
        }
        let q = QueryPos::from_key(&self.chart, query);
        // Every stored point is within this distance of the query.
        let span = q.t + self.rmax + 1.0;
        let limit = r_cap.min(span);
        let mut r = 0.5f64.min(limit);
        loop {
            let mut best = KBest::new(k, r_cap);
            let pre = cosh_m1(r) * (1.0 + 1e-12);
            self.scan(&q, query, r, |_, c| {
                if c > 0.0 && c <= pre {
                    best.offer(c);
                }
            });
            if best.is_full() || r >= limit {
                return best.finish();
            }
            r = (r * 2.0).min(limit);
        }
    }
}
