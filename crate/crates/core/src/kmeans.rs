//! Shared k-means machinery: cluster state, k-means++ seeding, the plain
//! Lloyd assignment step, and mean updates.

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{add_assign, distance, Dataset, DistanceCounter};
use crate::error::{Error, Result};

/// Label of a point that has not been assigned yet.
pub const UNASSIGNED: u32 = u32::MAX;

/// Per-point cluster labels plus the number that changed in the latest pass.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assignment {
    pub labels: Vec<u32>,
    pub changed: usize,
}

impl Assignment {
    pub fn new(n: usize) -> Self {
        Self {
            labels: vec![UNASSIGNED; n],
            changed: 0,
        }
    }

    #[inline]
    pub(crate) fn set(&mut self, point: usize, label: u32) {
        let slot = &mut self.labels[point];
        if *slot != label {
            *slot = label;
            self.changed += 1;
        }
    }
}

/// Centers, their previous positions and the derived center geometry.
///
/// `cc_dist` and `moved` are refreshed lazily by the algorithms that need
/// them, so that plain Lloyd iterations stay at exactly `N·k` metric
/// evaluations.
#[derive(Debug, Clone)]
pub struct ClusterState {
    k: usize,
    dim: usize,
    centers: Vec<f64>,
    prev_centers: Vec<f64>,
    pub(crate) sums: Vec<f64>,
    pub(crate) counts: Vec<usize>,
    cc_dist: Vec<f64>,
    half_min_cc: Vec<f64>,
    cc_basis: Vec<f64>,
    cc_valid: bool,
    cc_fresh: bool,
    moved: Vec<f64>,
    moved_fresh: bool,
    max_moved: (f64, usize),
    second_max_moved: f64,
}

impl ClusterState {
    pub fn new(centers: Vec<f64>, dim: usize) -> Self {
        assert!(dim > 0 && !centers.is_empty() && centers.len().is_multiple_of(dim));
        let k = centers.len() / dim;
        Self {
            k,
            dim,
            prev_centers: centers.clone(),
            centers: centers.clone(),
            sums: vec![0.0; k * dim],
            counts: vec![0; k],
            cc_dist: vec![0.0; k * k],
            half_min_cc: vec![f64::INFINITY; k],
            cc_basis: centers.clone(),
            cc_valid: false,
            cc_fresh: false,
            moved: vec![0.0; k],
            moved_fresh: true,
            max_moved: (0.0, 0),
            second_max_moved: 0.0,
        }
    }

    #[inline]
    pub fn k(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn center(&self, i: usize) -> &[f64] {
        &self.centers[i * self.dim..(i + 1) * self.dim]
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn prev_center(&self, i: usize) -> &[f64] {
        &self.prev_centers[i * self.dim..(i + 1) * self.dim]
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn sums(&self) -> &[f64] {
        &self.sums
    }

    /// Center-to-center distance, valid after [`refresh_cc`](Self::refresh_cc).
    #[inline]
    pub fn cc(&self, i: usize, j: usize) -> f64 {
        self.cc_dist[i * self.k + j]
    }

    /// Half the distance from center `i` to its nearest other center.
    #[inline]
    pub fn half_min_cc(&self, i: usize) -> f64 {
        self.half_min_cc[i]
    }

    /// Distance each center moved in the latest update, valid after
    /// [`refresh_moved`](Self::refresh_moved).
    pub fn moved(&self) -> &[f64] {
        &self.moved
    }

    /// Largest movement and the index of the center that made it.
    pub fn max_moved(&self) -> (f64, usize) {
        self.max_moved
    }

    pub fn second_max_moved(&self) -> f64 {
        self.second_max_moved
    }

    /// Largest movement among all centers other than `i`.
    #[inline]
    pub fn max_moved_except(&self, i: usize) -> f64 {
        if i == self.max_moved.1 {
            self.second_max_moved
        } else {
            self.max_moved.0
        }
    }

    /// Recomputes the center-to-center matrix. Pairs whose centers did not
    /// change bit-for-bit since the last refresh keep their cached distance.
    pub fn refresh_cc(&mut self, ctr: &mut DistanceCounter) {
        if self.cc_fresh {
            return;
        }
        let k = self.k;
        let dim = self.dim;
        let unchanged: Vec<bool> = (0..k)
            .map(|i| self.cc_valid && self.center(i) == &self.cc_basis[i * dim..(i + 1) * dim])
            .collect();
        for i in 0..k {
            for j in i + 1..k {
                if unchanged[i] && unchanged[j] {
                    continue;
                }
                let d = ctr.measure(self.center(i), self.center(j));
                self.cc_dist[i * k + j] = d;
                self.cc_dist[j * k + i] = d;
            }
        }
        for i in 0..k {
            let min = (0..k)
                .filter(|&j| j != i)
                .map(|j| self.cc_dist[i * k + j])
                .fold(f64::INFINITY, f64::min);
            self.half_min_cc[i] = 0.5 * min;
        }
        self.cc_basis.copy_from_slice(&self.centers);
        self.cc_valid = true;
        self.cc_fresh = true;
    }

    /// Measures how far every center moved in the latest update. Centers
    /// that did not change cost no metric evaluation.
    pub fn refresh_moved(&mut self, ctr: &mut DistanceCounter) {
        if self.moved_fresh {
            return;
        }
        let mut max = (0.0, 0);
        let mut second = 0.0;
        for i in 0..self.k {
            let m = if self.center(i) == self.prev_center(i) {
                0.0
            } else {
                ctr.measure(self.prev_center(i), self.center(i))
            };
            self.moved[i] = m;
            if m > max.0 {
                second = max.0;
                max = (m, i);
            } else if m > second {
                second = m;
            }
        }
        self.max_moved = max;
        self.second_max_moved = second;
        self.moved_fresh = true;
    }

    fn begin_update(&mut self) {
        self.prev_centers.copy_from_slice(&self.centers);
        self.cc_fresh = false;
        self.moved_fresh = false;
    }

    /// Moves each non-empty cluster's center to the mean of its points;
    /// empty clusters keep their previous center.
    pub fn update_means(&mut self, data: &Dataset, labels: &[u32]) {
        self.sums.iter_mut().for_each(|s| *s = 0.0);
        self.counts.iter_mut().for_each(|c| *c = 0);
        for (p, &l) in data.points().zip(labels) {
            let l = l as usize;
            add_assign(&mut self.sums[l * self.dim..(l + 1) * self.dim], p);
            self.counts[l] += 1;
        }
        self.update_from_sums();
    }

    /// Same as [`update_means`](Self::update_means), using sums and counts
    /// already accumulated in the state.
    pub fn update_from_sums(&mut self) {
        self.begin_update();
        for i in 0..self.k {
            let n = self.counts[i];
            if n == 0 {
                continue;
            }
            let inv = n as f64;
            for j in 0..self.dim {
                self.centers[i * self.dim + j] = self.sums[i * self.dim + j] / inv;
            }
        }
    }

    pub(crate) fn clear_sums(&mut self) {
        self.sums.iter_mut().for_each(|s| *s = 0.0);
        self.counts.iter_mut().for_each(|c| *c = 0);
    }
}

/// k-means++ seeding: the first center uniformly, each further one with
/// probability proportional to the squared distance to the nearest chosen
/// center. Returns the chosen dataset indices.
pub fn kmeanspp_indices(data: &Dataset, k: usize, seed: u64, ctr: &mut DistanceCounter) -> Result<Vec<usize>> {
    let n = data.len();
    if k == 0 || k > n {
        return Err(Error::InvalidK { k, n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = Vec::with_capacity(k);
    let mut taken = vec![false; n];
    let first = rng.gen_range(0..n);
    chosen.push(first);
    taken[first] = true;
    let mut nearest = vec![f64::INFINITY; n];
    while chosen.len() < k {
        let last = data.point(*chosen.last().unwrap());
        for (i, slot) in nearest.iter_mut().enumerate() {
            if taken[i] {
                *slot = 0.0;
                continue;
            }
            let d = ctr.measure(data.point(i), last);
            *slot = slot.min(d * d);
        }
        let next = match WeightedIndex::new(&nearest) {
            Ok(dist) => dist.sample(&mut rng),
            // All remaining mass is zero: every free point duplicates a
            // chosen center, so pick uniformly among the free indices.
            Err(_) => {
                let free: Vec<usize> = (0..n).filter(|&i| !taken[i]).collect();
                free[rng.gen_range(0..free.len())]
            }
        };
        chosen.push(next);
        taken[next] = true;
    }
    Ok(chosen)
}

/// k-means++ centers as a flat `k × dim` buffer.
pub fn kmeanspp_init(data: &Dataset, k: usize, seed: u64, ctr: &mut DistanceCounter) -> Result<Vec<f64>> {
    let idx = kmeanspp_indices(data, k, seed, ctr)?;
    Ok(idx.iter().flat_map(|&i| data.point(i).iter().copied()).collect())
}

/// Labels every point with its nearest center, lowest index on ties.
/// Evaluates exactly `N·k` distances and returns the number of changed
/// labels.
pub fn lloyd_assign(
    data: &Dataset,
    state: &ClusterState,
    assignment: &mut Assignment,
    ctr: &mut DistanceCounter,
) -> usize {
    assignment.changed = 0;
    for (i, p) in data.points().enumerate() {
        let mut best = (f64::INFINITY, 0u32);
        for c in 0..state.k() {
            let d = ctr.measure(p, state.center(c));
            if d < best.0 {
                best = (d, c as u32);
            }
        }
        assignment.set(i, best.1);
    }
    assignment.changed
}

/// Sum of squared distances from each point to its labelled center.
pub fn sse(data: &Dataset, centers: &[f64], labels: &[u32]) -> f64 {
    let dim = data.dim();
    data.points()
        .zip(labels)
        .map(|(p, &l)| {
            let l = l as usize;
            let d = distance(p, &centers[l * dim..(l + 1) * dim]);
            d * d
        })
        .sum()
}
