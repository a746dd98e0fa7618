//! Triangle-inequality baselines: the center-separation filter, Hamerly's
//! single lower bound, and Elkan's per-center lower bounds.
//!
//! Both bound algorithms reproduce [`lloyd_assign`](crate::kmeans::lloyd_assign)
//! labels exactly, including its lowest-index tie rule: a center is only
//! skipped when a bound shows it is strictly farther than the current one.

use crate::data::{Dataset, DistanceCounter};
use crate::kmeans::{Assignment, ClusterState};

/// Relative slack required before a bound comparison is trusted to prune.
/// Bound arithmetic accumulates rounding; a razor-thin win is recomputed.
pub const PRUNE_MARGIN: f64 = 1e-12;

/// True when the lower bound `lb` on one center's distance strictly exceeds
/// the upper bound `ub` on another's, by more than the rounding margin.
#[inline]
pub fn exceeds(lb: f64, ub: f64) -> bool {
    lb > ub + PRUNE_MARGIN * lb.abs().max(ub.abs())
}

/// Center-separation test: `d(c_i, c_j) >= 2 d(s, c_i)` implies `c_j` is no
/// closer to `s` than `c_i`.
#[inline]
pub fn phillips_skip(cc_dist_ij: f64, d_si: f64) -> bool {
    cc_dist_ij >= 2.0 * d_si
}

/// Nearest and second-nearest of a full distance row, lowest index on ties.
fn two_nearest(row: impl Iterator<Item = f64>) -> ((f64, u32), (f64, u32)) {
    let mut best = (f64::INFINITY, 0u32);
    let mut second = (f64::INFINITY, u32::MAX);
    for (j, d) in row.enumerate() {
        let j = j as u32;
        if d < best.0 {
            second = best;
            best = (d, j);
        } else if d < second.0 {
            second = (d, j);
        }
    }
    (best, second)
}

#[derive(Debug, Clone, PartialEq)]
pub struct HamerlyBounds {
    /// Upper bound on the distance to the assigned center.
    pub upper: Vec<f64>,
    /// Lower bound on the distance to every other center.
    pub lower: Vec<f64>,
    /// Center the lower bound was last derived from. Informational.
    pub second: Vec<u32>,
}

impl HamerlyBounds {
    pub fn len(&self) -> usize {
        self.upper.len()
    }

    pub fn is_empty(&self) -> bool {
        self.upper.is_empty()
    }
}

/// One Hamerly pass. Without bounds, evaluates all `N·k` distances and
/// initializes them; otherwise expects bounds already adjusted with
/// [`update_hamerly_bounds`]. Returns the number of changed labels.
pub fn hamerly_iterate(
    data: &Dataset,
    state: &ClusterState,
    bounds: &mut Option<HamerlyBounds>,
    assignment: &mut Assignment,
    ctr: &mut DistanceCounter,
) -> usize {
    assignment.changed = 0;
    let k = state.k();
    let Some(b) = bounds else {
        let n = data.len();
        let mut fresh = HamerlyBounds {
            upper: vec![0.0; n],
            lower: vec![0.0; n],
            second: vec![0; n],
        };
        for (i, p) in data.points().enumerate() {
            let ((u, a), (l, s)) = two_nearest((0..k).map(|c| ctr.measure(p, state.center(c))));
            fresh.upper[i] = u;
            fresh.lower[i] = l;
            fresh.second[i] = s;
            assignment.set(i, a);
        }
        *bounds = Some(fresh);
        return assignment.changed;
    };

    for (i, p) in data.points().enumerate() {
        let a = assignment.labels[i] as usize;
        let gate = b.lower[i].max(state.half_min_cc(a));
        if exceeds(gate, b.upper[i]) {
            continue;
        }
        let u = ctr.measure(p, state.center(a));
        b.upper[i] = u;
        if exceeds(gate, u) {
            continue;
        }
        let ((u, best), (l, s)) = two_nearest((0..k).map(|c| if c == a { u } else { ctr.measure(p, state.center(c)) }));
        b.upper[i] = u;
        b.lower[i] = l;
        b.second[i] = s;
        assignment.set(i, best);
    }
    assignment.changed
}

/// Loosens the bounds by the latest center movements: the upper bound grows
/// by the assigned center's shift, the lower bound shrinks by the largest
/// shift of any other center (clamped at zero).
pub fn update_hamerly_bounds(bounds: &mut HamerlyBounds, labels: &[u32], state: &ClusterState) {
    let moved = state.moved();
    for (i, &a) in labels.iter().enumerate() {
        let a = a as usize;
        bounds.upper[i] += moved[a];
        bounds.lower[i] = (bounds.lower[i] - state.max_moved_except(a)).max(0.0);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ElkanBounds {
    pub upper: Vec<f64>,
    /// Row-major `N × k` lower bounds, one per center.
    pub lower: Vec<f64>,
    pub k: usize,
}

impl ElkanBounds {
    #[inline]
    pub fn lower_row(&self, i: usize) -> &[f64] {
        &self.lower[i * self.k..(i + 1) * self.k]
    }
}

/// One Elkan pass. Center `j` is measured for point `s` only when neither
/// its own lower bound nor half the separation from the assigned center
/// rules it out.
pub fn elkan_iterate(
    data: &Dataset,
    state: &ClusterState,
    bounds: &mut Option<ElkanBounds>,
    assignment: &mut Assignment,
    ctr: &mut DistanceCounter,
) -> usize {
    assignment.changed = 0;
    let k = state.k();
    let Some(b) = bounds else {
        let n = data.len();
        let mut fresh = ElkanBounds {
            upper: vec![0.0; n],
            lower: vec![0.0; n * k],
            k,
        };
        for (i, p) in data.points().enumerate() {
            let row = &mut fresh.lower[i * k..(i + 1) * k];
            let mut best = (f64::INFINITY, 0u32);
            for (c, slot) in row.iter_mut().enumerate() {
                let d = ctr.measure(p, state.center(c));
                *slot = d;
                if d < best.0 {
                    best = (d, c as u32);
                }
            }
            fresh.upper[i] = best.0;
            assignment.set(i, best.1);
        }
        *bounds = Some(fresh);
        return assignment.changed;
    };

    for (i, p) in data.points().enumerate() {
        let mut a = assignment.labels[i] as usize;
        let mut u = b.upper[i];
        if exceeds(state.half_min_cc(a), u) {
            continue;
        }
        let row = &mut b.lower[i * k..(i + 1) * k];
        let mut exact = false;
        for j in 0..k {
            if j == a || exceeds(row[j], u) || exceeds(0.5 * state.cc(a, j), u) {
                continue;
            }
            if !exact {
                u = ctr.measure(p, state.center(a));
                row[a] = u;
                exact = true;
                if exceeds(row[j], u) || exceeds(0.5 * state.cc(a, j), u) {
                    continue;
                }
            }
            let d = ctr.measure(p, state.center(j));
            row[j] = d;
            if d < u || (d == u && j < a) {
                a = j;
                u = d;
            }
        }
        b.upper[i] = u;
        assignment.set(i, a as u32);
    }
    assignment.changed
}

/// Per-center version of [`update_hamerly_bounds`].
pub fn update_elkan_bounds(bounds: &mut ElkanBounds, labels: &[u32], state: &ClusterState) {
    let moved = state.moved();
    let k = bounds.k;
    for (i, &a) in labels.iter().enumerate() {
        bounds.upper[i] += moved[a as usize];
        for (l, m) in bounds.lower[i * k..(i + 1) * k].iter_mut().zip(moved) {
            *l = (*l - m).max(0.0);
        }
    }
}
