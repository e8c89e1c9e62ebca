use super::{KBest, KeyStore, KthDistance, Neighbour, NeighbourIndex};
use crate::geometry::{acosh1p, chord, cosh_m1};
use crate::sampling::PointSet;

/// Linear scan over all keys. Slow, but trivially correct.
#[derive(Clone, Debug)]
pub struct BruteForce {
    store: KeyStore,
}

impl BruteForce {
    pub fn build(points: &PointSet) -> Self {
        Self {
            store: KeyStore::from_points(points),
        }
    }
}

impl NeighbourIndex for BruteForce {
    fn name(&self) -> &'static str {
        "brute"
    }

    fn len(&self) -> usize {
        self.store.len()
    }

    fn key(&self, id: usize) -> &[f64] {
        self.store.row(id)
    }

    fn storage_order(&self) -> &[u32] {
        &self.store.ids
    }

    fn within_key(&self, query: &[f64], rho: f64, exclude_self: bool, out: &mut Vec<Neighbour>) {
        if !(rho >= 0.0) {
            return;
        }
        let pre = cosh_m1(rho) * (1.0 + 1e-12) + f64::MIN_POSITIVE;
        for i in 0..self.store.len() {
            let c = chord(query, self.store.row(i));
            if c <= pre && !(exclude_self && c == 0.0) {
                let distance = acosh1p(c);
                if distance <= rho {
                    out.push(Neighbour { id: i, distance });
                }
            }
        }
    }

    fn kth_key(&self, query: &[f64], k: usize, r_cap: f64) -> KthDistance {
        if k == 0 {
            return KthDistance::Censored;
        }
        let mut best = KBest::new(k, r_cap);
        for i in 0..self.store.len() {
            let c = chord(query, self.store.row(i));
            if c > 0.0 {
                best.offer(c);
            }
        }
        best.finish()
    }
}
