//! Brute-force ground truth and checkers for the accelerated paths.
//!
//! Nothing here calls into the assignment code under test; distances are
//! computed by a separate naive loop.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::bounds::{ElkanBounds, HamerlyBounds};
use crate::cover::{ExportedBounds, PruneEvent, PruneRule, PruneTarget};
use crate::covertree::CoverTree;
use crate::data::Dataset;

/// Relative slack for all floating-point comparisons in the checkers.
pub const SLACK: f64 = 1e-9;

fn naive_distance(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let mut total = 0.0;
    for i in 0..a.len() {
        let d = a[i] - b[i];
        total += d * d;
    }
    total.sqrt()
}

fn center(centers: &[f64], dim: usize, j: usize) -> &[f64] {
    &centers[j * dim..(j + 1) * dim]
}

/// `a` is smaller than `b` by more than the slack.
fn clearly_below(a: f64, b: f64) -> bool {
    a < b - SLACK * a.abs().max(b.abs())
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub labels: Vec<u32>,
    pub nearest_dist: Vec<f64>,
    /// `INFINITY` when there is a single center.
    pub second_dist: Vec<f64>,
    /// `u32::MAX` when there is a single center.
    pub second_id: Vec<u32>,
}

fn scan(p: &[f64], centers: &[f64], dim: usize) -> (u32, f64, u32, f64) {
    let k = centers.len() / dim;
    let (mut best, mut best_d) = (u32::MAX, f64::INFINITY);
    let (mut second, mut second_d) = (u32::MAX, f64::INFINITY);
    for j in 0..k {
        let d = naive_distance(p, center(centers, dim, j));
        if d < best_d {
            second = best;
            second_d = best_d;
            best = j as u32;
            best_d = d;
        } else if d < second_d {
            second = j as u32;
            second_d = d;
        }
    }
    (best, best_d, second, second_d)
}

/// Nearest and second-nearest center of every point by full enumeration,
/// lowest index winning ties. `centers` is row-major `k × dim`.
pub fn brute_force_assign(data: &Dataset, centers: &[f64]) -> OracleResult {
    let dim = data.dim();
    assert!(
        !centers.is_empty() && centers.len().is_multiple_of(dim),
        "centers do not match the data dimension"
    );
    let idx: Vec<usize> = (0..data.len()).collect();
    #[cfg(feature = "parallel")]
    let rows: Vec<_> = idx.par_iter().map(|&i| scan(data.point(i), centers, dim)).collect();
    #[cfg(not(feature = "parallel"))]
    let rows: Vec<_> = idx.iter().map(|&i| scan(data.point(i), centers, dim)).collect();

    let mut out = OracleResult {
        labels: Vec::with_capacity(rows.len()),
        nearest_dist: Vec::with_capacity(rows.len()),
        second_dist: Vec::with_capacity(rows.len()),
        second_id: Vec::with_capacity(rows.len()),
    };
    for (a, da, s, ds) in rows {
        out.labels.push(a);
        out.nearest_dist.push(da);
        out.second_id.push(s);
        out.second_dist.push(ds);
    }
    out
}

/// Bounds to check against the true distances.
#[derive(Debug, Clone, Copy)]
pub enum BoundsView<'a> {
    Hamerly {
        labels: &'a [u32],
        bounds: &'a HamerlyBounds,
    },
    Elkan {
        labels: &'a [u32],
        bounds: &'a ElkanBounds,
    },
    Exported(&'a ExportedBounds),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundSide {
    /// Upper bound on the assigned center's distance.
    Upper,
    /// Lower bound on the given center's distance.
    Lower(u32),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundViolation {
    pub point: usize,
    pub side: BoundSide,
    pub bound: f64,
    pub actual: f64,
}

/// Lists every point whose stored bounds do not bracket the true distances
/// to `centers`.
pub fn verify_bounds(data: &Dataset, centers: &[f64], view: BoundsView<'_>) -> Vec<BoundViolation> {
    let dim = data.dim();
    let k = centers.len() / dim;
    let labels = match view {
        BoundsView::Hamerly { labels, .. } | BoundsView::Elkan { labels, .. } => labels,
        BoundsView::Exported(e) => &e.labels,
    };
    assert_eq!(labels.len(), data.len());
    let mut out = Vec::new();
    for (s, p) in data.points().enumerate() {
        let a = labels[s] as usize;
        let dist: Vec<f64> = (0..k).map(|j| naive_distance(p, center(centers, dim, j))).collect();
        let upper = match view {
            BoundsView::Hamerly { bounds, .. } => bounds.upper[s],
            BoundsView::Elkan { bounds, .. } => bounds.upper[s],
            BoundsView::Exported(e) => e.upper[s],
        };
        if clearly_below(upper, dist[a]) || upper.is_nan() {
            out.push(BoundViolation {
                point: s,
                side: BoundSide::Upper,
                bound: upper,
                actual: dist[a],
            });
        }
        for j in (0..k).filter(|&j| j != a) {
            let lower = match view {
                BoundsView::Hamerly { bounds, .. } => bounds.lower[s],
                BoundsView::Elkan { bounds, .. } => bounds.lower[s * bounds.k + j],
                BoundsView::Exported(e) => e.lower[s],
            };
            if clearly_below(dist[j], lower) || lower.is_nan() {
                out.push(BoundViolation {
                    point: s,
                    side: BoundSide::Lower(j as u32),
                    bound: lower,
                    actual: dist[j],
                });
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PruneViolation {
    pub event: PruneEvent,
    pub point: u32,
    pub pruned_dist: f64,
    pub keeper_dist: f64,
}

impl PruneViolation {
    pub fn rule(&self) -> PruneRule {
        self.event.rule
    }
}

/// Checks each traced decision by enumerating the points it covered: the
/// pruned center must never be strictly closer than the kept one.
pub fn verify_prune_soundness(
    data: &Dataset,
    tree: &CoverTree,
    centers: &[f64],
    trace: &[PruneEvent],
) -> Vec<PruneViolation> {
    let dim = data.dim();
    let mut out = Vec::new();
    for ev in trace {
        let single;
        let points: &[u32] = match ev.target {
            PruneTarget::Node(id) => tree.subtree_points(id),
            PruneTarget::Point(p) => {
                single = [p];
                &single
            }
        };
        let pruned = center(centers, dim, ev.pruned as usize);
        let keeper = center(centers, dim, ev.keeper as usize);
        for &s in points {
            let p = data.point(s as usize);
            let (dp, dk) = (naive_distance(p, pruned), naive_distance(p, keeper));
            if clearly_below(dp, dk) {
                out.push(PruneViolation {
                    event: *ev,
                    point: s,
                    pruned_dist: dp,
                    keeper_dist: dk,
                });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bounds::{hamerly_iterate, update_hamerly_bounds};
    use crate::cover::CoverMeans;
    use crate::covertree::TreeConfig;
    use crate::data::DistanceCounter;
    use crate::kmeans::{kmeanspp_init, Assignment, ClusterState};
    use crate::synth;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_center_has_no_second() {
        let data = Dataset::from_rows(&[[0.0, 1.0], [5.0, 5.0]]).unwrap();
        let r = brute_force_assign(&data, &[1.0, 1.0]);
        assert_eq!(r.labels, vec![0, 0]);
        assert_eq!(r.second_id, vec![u32::MAX; 2]);
        assert!(r.second_dist.iter().all(|d| d.is_infinite()));
        assert_eq!(r.nearest_dist[0], 1.0);
    }

    #[test]
    fn identical_centers_pick_the_lowest_index() {
        let data = synth::uniform(50, 3, 1).unwrap();
        let r = brute_force_assign(&data, &[0.5, 0.5, 0.5, 0.5, 0.5, 0.5]);
        assert!(r.labels.iter().all(|&l| l == 0));
        assert!(r.second_id.iter().all(|&l| l == 1));
        assert_eq!(r.nearest_dist, r.second_dist);
    }

    #[test]
    fn agrees_with_a_double_loop() {
        let data = synth::blobs(500, 4, 6, 3.0, 9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let centers: Vec<f64> = (0..7 * 4).map(|_| rng.gen_range(0.0..100.0)).collect();
        let r = brute_force_assign(&data, &centers);
        for i in 0..data.len() {
            let mut d: Vec<(f64, usize)> = (0..7)
                .map(|j| {
                    let sq: f64 = (0..4).map(|t| (data.point(i)[t] - centers[j * 4 + t]).powi(2)).sum();
                    (sq.sqrt(), j)
                })
                .collect();
            d.sort_by(|a, b| a.partial_cmp(b).unwrap());
            assert_eq!(r.labels[i] as usize, d[0].1);
            assert_eq!(r.second_id[i] as usize, d[1].1);
            assert!((r.nearest_dist[i] - d[0].0).abs() <= 1e-12 * d[0].0.max(1.0));
        }
    }

    fn hamerly_start(data: &Dataset, k: usize, seed: u64) -> (ClusterState, Assignment, HamerlyBounds) {
        let centers = kmeanspp_init(data, k, seed, &mut DistanceCounter::new()).unwrap();
        let state = ClusterState::new(centers, data.dim());
        let mut a = Assignment::new(data.len());
        let mut b = None;
        hamerly_iterate(data, &state, &mut b, &mut a, &mut DistanceCounter::new());
        (state, a, b.unwrap())
    }

    #[test]
    fn fresh_bounds_pass() {
        let data = synth::blobs(400, 3, 5, 2.0, 1).unwrap();
        let (state, a, b) = hamerly_start(&data, 6, 1);
        let v = BoundsView::Hamerly {
            labels: &a.labels,
            bounds: &b,
        };
        assert!(verify_bounds(&data, state.centers(), v).is_empty());
    }

    #[test]
    fn lowered_upper_bound_is_flagged() {
        let data = synth::blobs(400, 3, 5, 2.0, 1).unwrap();
        let (state, a, mut b) = hamerly_start(&data, 6, 1);
        b.upper[17] *= 0.5;
        let found = verify_bounds(
            &data,
            state.centers(),
            BoundsView::Hamerly {
                labels: &a.labels,
                bounds: &b,
            },
        );
        assert_eq!(found.len(), 1);
        assert_eq!(found[0].point, 17);
        assert_eq!(found[0].side, BoundSide::Upper);
    }

    #[test]
    fn bounds_survive_random_center_moves() {
        let data = synth::blobs(600, 4, 5, 3.0, 4).unwrap();
        let (mut state, a, mut b) = hamerly_start(&data, 8, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut ctr = DistanceCounter::new();
        for _ in 0..20 {
            let moved: Vec<f64> = state.centers().iter().map(|c| c + rng.gen_range(-2.0..2.0)).collect();
            state.sums.copy_from_slice(&moved);
            state.counts.iter_mut().for_each(|c| *c = 1);
            state.update_from_sums();
            state.refresh_moved(&mut ctr);
            update_hamerly_bounds(&mut b, &a.labels, &state);
            let v = BoundsView::Hamerly {
                labels: &a.labels,
                bounds: &b,
            };
            assert!(verify_bounds(&data, state.centers(), v).is_empty());
        }
    }

    #[test]
    fn empty_trace_is_sound() {
        let data = synth::uniform(100, 2, 0).unwrap();
        let tree = CoverTree::build(&data, TreeConfig::default(), &mut DistanceCounter::new()).unwrap();
        assert!(verify_prune_soundness(&data, &tree, &[0.0, 0.0], &[]).is_empty());
    }

    fn traced_pass(data: &Dataset, tree: &CoverTree, k: usize, seed: u64) -> (Vec<f64>, Vec<PruneEvent>) {
        let centers = kmeanspp_init(data, k, seed, &mut DistanceCounter::new()).unwrap();
        let mut state = ClusterState::new(centers.clone(), data.dim());
        let mut cm = CoverMeans::new(tree).with_trace();
        cm.iterate(data, &mut state, &mut DistanceCounter::new());
        (centers, cm.take_trace())
    }

    #[test]
    fn random_run_trace_is_sound() {
        let data = synth::blobs(2_000, 3, 15, 4.0, 8).unwrap();
        let tree = CoverTree::build(&data, TreeConfig::default(), &mut DistanceCounter::new()).unwrap();
        let (centers, trace) = traced_pass(&data, &tree, 20, 8);
        assert!(!trace.is_empty());
        assert!(verify_prune_soundness(&data, &tree, &centers, &trace).is_empty());
    }

    #[test]
    fn shrunk_radii_produce_detectable_faults() {
        let data = synth::uniform(2_000, 2, 5).unwrap();
        let cfg = TreeConfig {
            base: 1.2,
            leaf_threshold: 8,
        };
        let mut tree = CoverTree::build(&data, cfg, &mut DistanceCounter::new()).unwrap();
        for id in 0..tree.len() as u32 {
            tree.node_mut(id).radius *= 0.01;
        }
        let (centers, trace) = traced_pass(&data, &tree, 20, 2);
        let found = verify_prune_soundness(&data, &tree, &centers, &trace);
        assert!(!found.is_empty());
    }
}
