use super::{KBest, KeyStore, KthDistance, Neighbour, NeighbourIndex};
use crate::geometry::{acosh1p, chord, cosh_m1};
use crate::sampling::PointSet;

const LEAF: usize = 12;
// Absolute slack on triangle-inequality pruning; distances carry ~1e-14 error.
const PRUNE_SLACK: f64 = 1e-9;

/// Vantage-point tree stored implicitly over a permuted key array.
///
/// The node covering rows `[lo, hi)` has its vantage point at `lo`; rows
/// `[lo + 1, mid)` are within `mu[lo]` of it and rows `[mid, hi)` are at
/// least `mu[lo]` away, with `mid = lo + 1 + (hi - lo - 1) / 2`. Ranges of at
/// most `LEAF` rows are scanned linearly.
#[derive(Clone, Debug)]
pub struct VpTree {
    store: KeyStore,
    mu: Vec<f64>,
    /// Row holding each original id.
    row_of: Vec<u32>,
}

#[inline]
fn split(lo: usize, hi: usize) -> usize {
    lo + 1 + (hi - lo - 1) / 2
}

impl VpTree {
    pub fn build(points: &PointSet) -> Self {
        let mut store = KeyStore::from_points(points);
        let n = store.len();
        let stride = store.stride;
        let mut mu = vec![0.0; n];
        let mut work: Vec<(f64, u32)> = Vec::with_capacity(n);
        let mut rows_tmp: Vec<f64> = Vec::with_capacity(n * stride);
        let mut ids_tmp: Vec<u32> = Vec::with_capacity(n);
        let mut stack = vec![(0usize, n)];

        while let Some((lo, hi)) = stack.pop() {
            if hi - lo <= LEAF {
                continue;
            }
            let pick = choose_vantage(&store, lo, hi);
            swap_rows(&mut store, lo, pick);

            let vantage = store.row(lo).to_vec();
            work.clear();
            work.extend(
                (lo + 1..hi).map(|i| (chord(&vantage, store.row(i)), (i - lo - 1) as u32)),
            );
            let mid = split(lo, hi);
            let nth = mid - lo - 1;
            work.select_nth_unstable_by(nth, |a, b| a.0.total_cmp(&b.0));
            mu[lo] = acosh1p(work[nth].0);

            rows_tmp.clear();
            ids_tmp.clear();
            for &(_, j) in &work {
                let i = lo + 1 + j as usize;
                rows_tmp.extend_from_slice(store.row(i));
                ids_tmp.push(store.ids[i]);
            }
            store.keys[(lo + 1) * stride..hi * stride].copy_from_slice(&rows_tmp);
            store.ids[lo + 1..hi].copy_from_slice(&ids_tmp);

            stack.push((mid, hi));
            stack.push((lo + 1, mid));
        }

        let mut row_of = vec![0u32; n];
        for (row, &id) in store.ids.iter().enumerate() {
            row_of[id as usize] = row as u32;
        }
        Self { store, mu, row_of }
    }

    fn visit_kth(&self, q: &[f64], lo: usize, hi: usize, best: &mut KBest) {
        if hi - lo <= LEAF {
            for i in lo..hi {
                let c = chord(q, self.store.row(i));
                if c > 0.0 {
                    best.offer(c);
                }
            }
            return;
        }
        let cv = chord(q, self.store.row(lo));
        if cv > 0.0 {
            best.offer(cv);
        }
        let dv = acosh1p(cv);
        let mu = self.mu[lo];
        let mid = split(lo, hi);
        if dv < mu {
            if dv - best.tau() <= mu + PRUNE_SLACK {
                self.visit_kth(q, lo + 1, mid, best);
            }
            if dv + best.tau() >= mu - PRUNE_SLACK {
                self.visit_kth(q, mid, hi, best);
            }
        } else {
            if dv + best.tau() >= mu - PRUNE_SLACK {
                self.visit_kth(q, mid, hi, best);
            }
            if dv - best.tau() <= mu + PRUNE_SLACK {
                self.visit_kth(q, lo + 1, mid, best);
            }
        }
    }

    fn visit_within(
        &self,
        q: &[f64],
        rho: f64,
        pre: f64,
        exclude_self: bool,
        lo: usize,
        hi: usize,
        out: &mut Vec<Neighbour>,
    ) {
        let test = |i: usize, c: f64, out: &mut Vec<Neighbour>| {
            if c <= pre && !(exclude_self && c == 0.0) {
                let distance = acosh1p(c);
                if distance <= rho {
                    out.push(Neighbour {
                        id: self.store.ids[i] as usize,
                        distance,
                    });
                }
            }
        };
        if hi - lo <= LEAF {
            for i in lo..hi {
                test(i, chord(q, self.store.row(i)), out);
            }
            return;
        }
        let cv = chord(q, self.store.row(lo));
        test(lo, cv, out);
        let dv = acosh1p(cv);
        let mu = self.mu[lo];
        let mid = split(lo, hi);
        if dv - rho <= mu + PRUNE_SLACK {
            self.visit_within(q, rho, pre, exclude_self, lo + 1, mid, out);
        }
        if dv + rho >= mu - PRUNE_SLACK {
            self.visit_within(q, rho, pre, exclude_self, mid, hi, out);
        }
    }
}

/// Among a few evenly spaced candidates, the row whose distances to an evenly
/// spaced sample of the range have the largest spread.
fn choose_vantage(store: &KeyStore, lo: usize, hi: usize) -> usize {
    const CANDIDATES: usize = 6;
    const PROBES: usize = 24;
    let m = hi - lo;
    if m < 64 {
        return lo + m / 2;
    }
    let mut best = (f64::NEG_INFINITY, lo);
    let mut dist = [0.0; PROBES];
    for c in 0..CANDIDATES {
        let cand = lo + (2 * c + 1) * m / (2 * CANDIDATES);
        let v = store.row(cand);
        for (p, slot) in dist.iter_mut().enumerate() {
            let j = lo + ((p * 7919 + 13) % m);
            *slot = acosh1p(chord(v, store.row(j)));
        }
        let mean = dist.iter().sum::<f64>() / PROBES as f64;
        let var = dist.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>();
        if var > best.0 {
            best = (var, cand);
        }
    }
    best.1
}

fn swap_rows(store: &mut KeyStore, a: usize, b: usize) {
    if a == b {
        return;
    }
    let s = store.stride;
    let (x, y) = (a.min(b), a.max(b));
    let (head, tail) = store.keys.split_at_mut(y * s);
    head[x * s..(x + 1) * s].swap_with_slice(&mut tail[..s]);
    store.ids.swap(a, b);
}

impl NeighbourIndex for VpTree {
    fn name(&self) -> &'static str {
        "vptree"
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
        let pre = cosh_m1(rho) * (1.0 + 1e-12) + f64::MIN_POSITIVE;
        self.visit_within(query, rho, pre, exclude_self, 0, self.store.len(), out);
    }

    fn kth_key(&self, query: &[f64], k: usize, r_cap: f64) -> KthDistance {
        if k == 0 || self.store.len() < k {
            return KthDistance::Censored;
        }
        let mut best = KBest::new(k, r_cap);
        self.visit_kth(query, 0, self.store.len(), &mut best);
        best.finish()
    }
}
