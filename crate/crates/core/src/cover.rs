//! Cover-means: k-means assignment over whole cover-tree nodes.
//!
//! Each pass walks the tree depth-first with a shrinking set of candidate
//! centers. For a node with routing point `p` and radius `r`, once `d(p, c)`
//! is known for the surviving candidates, with `c1` the nearest:
//!
//! * a candidate `j` whose separation from an already measured candidate `i`
//!   satisfies `d(c_i, c_j) > 2 d(p, c_i) + 2r` is dropped unmeasured;
//! * if `d(p, c1) + r < d(p, c) - r` for every other candidate, the whole node
//!   goes to `c1` and contributes its aggregate sum and weight in one step;
//! * otherwise candidates with `d(p, c1) + r < d(p, c) - r` are dropped and the
//!   children are processed.
//!
//! A child `y` at distance `δ` from `p` with radius `r_y` is first tested with
//! the parent's distances only (`d(p, c1) + δ + r_y < d(p, c) - δ - r_y`),
//! then with `d(p_y, c1)` measured, and finally the same tightened inequality
//! removes candidates before descending. Leaf points are children of radius
//! zero, so they use the stored distance to their routing point the same way.
//! A child that shares its parent's routing point inherits every distance.
//!
//! All tests are strict (see [`exceeds`]), so the labels equal those of
//! [`lloyd_assign`](crate::kmeans::lloyd_assign), ties included.

use crate::bounds::exceeds;
use crate::covertree::{CoverTree, NodeId};
use crate::data::{add_assign, Dataset, DistanceCounter};
use crate::kmeans::{Assignment, ClusterState};

const MIXED: u32 = u32::MAX;

/// Which inequality removed a candidate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PruneRule {
    /// Center separation relative to an already measured candidate.
    Separation,
    /// Node-level filter against the nearest candidate.
    NodeFilter,
    /// Child filter using the parent's distances and `d(p_y, c1)`.
    ChildFilter,
}

/// The node, or single point, a pruning decision applies to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PruneTarget {
    Node(NodeId),
    Point(u32),
}

/// One recorded pruning decision: `pruned` is claimed to be no closer than
/// `keeper` for every point of `target`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PruneEvent {
    pub target: PruneTarget,
    pub pruned: u32,
    pub keeper: u32,
    pub rule: PruneRule,
}

/// Stored-bounds state derived from a tree pass without extra distance
/// evaluations. `second[i]` is the center the lower bound came from; it is
/// not necessarily the true second-nearest center.
#[derive(Debug, Clone, PartialEq)]
pub struct ExportedBounds {
    pub labels: Vec<u32>,
    pub upper: Vec<f64>,
    pub lower: Vec<f64>,
    pub second: Vec<u32>,
}

impl ExportedBounds {
    fn new(n: usize) -> Self {
        Self {
            labels: Vec::new(),
            upper: vec![f64::NAN; n],
            lower: vec![f64::NAN; n],
            second: vec![u32::MAX; n],
        }
    }
}

/// Smallest lower bound among candidates dropped so far on the path to the
/// current node; valid for every point below it.
#[derive(Debug, Clone, Copy)]
struct Floor {
    lb: f64,
    id: u32,
}

impl Floor {
    const NONE: Floor = Floor {
        lb: f64::INFINITY,
        id: u32::MAX,
    };

    #[inline]
    fn note(&mut self, lb: f64, id: u32) {
        if lb < self.lb {
            *self = Floor { lb, id };
        }
    }

    #[inline]
    fn with(mut self, lb: f64, id: u32) -> Self {
        self.note(lb, id);
        self
    }
}

/// Candidate with its exact distance to the current routing point.
type Cand = (u32, f64);

#[derive(Clone, Copy)]
enum Entry {
    Node(NodeId),
    Point { index: u32, dist: f64 },
}

/// Cover-means assignment state for one clustering run.
#[derive(Debug, Clone)]
pub struct CoverMeans<'t> {
    tree: &'t CoverTree,
    assignment: Assignment,
    cache: Vec<u32>,
    trace: Option<Vec<PruneEvent>>,
}

impl<'t> CoverMeans<'t> {
    pub fn new(tree: &'t CoverTree) -> Self {
        Self {
            tree,
            assignment: Assignment::new(tree.point_count()),
            cache: vec![MIXED; tree.len()],
            trace: None,
        }
    }

    /// Records every pruning decision of subsequent passes.
    pub fn with_trace(mut self) -> Self {
        self.trace = Some(Vec::new());
        self
    }

    /// Returns and clears the recorded pruning decisions.
    pub fn take_trace(&mut self) -> Vec<PruneEvent> {
        self.trace.as_mut().map(std::mem::take).unwrap_or_default()
    }

    pub fn assignment(&self) -> &Assignment {
        &self.assignment
    }

    pub fn tree(&self) -> &'t CoverTree {
        self.tree
    }

    /// Label cached for a node, or `None` when its points may differ.
    pub fn cached_label(&self, node: NodeId) -> Option<u32> {
        let l = self.cache[node as usize];
        (l != MIXED).then_some(l)
    }

    /// One assignment pass for the centers in `state`. Leaves the new
    /// cluster sums and counts in `state`, ready for
    /// [`ClusterState::update_from_sums`]. Returns the number of changed
    /// labels.
    pub fn iterate(&mut self, data: &Dataset, state: &mut ClusterState, ctr: &mut DistanceCounter) -> usize {
        self.pass(data, state, ctr, None)
    }

    /// Like [`iterate`](Self::iterate), also deriving per-point bounds for
    /// the pass's centers from the distances the traversal computed.
    pub fn iterate_exporting(
        &mut self,
        data: &Dataset,
        state: &mut ClusterState,
        ctr: &mut DistanceCounter,
    ) -> (usize, ExportedBounds) {
        let mut export = ExportedBounds::new(data.len());
        let changed = self.pass(data, state, ctr, Some(&mut export));
        export.labels = self.assignment.labels.clone();
        (changed, export)
    }

    fn pass(
        &mut self,
        data: &Dataset,
        state: &mut ClusterState,
        ctr: &mut DistanceCounter,
        export: Option<&mut ExportedBounds>,
    ) -> usize {
        assert_eq!(data.len(), self.tree.point_count(), "tree built over another dataset");
        state.refresh_cc(ctr);
        let k = state.k();
        let dim = state.dim();
        self.assignment.changed = 0;
        let mut pass = Pass {
            data,
            tree: self.tree,
            state,
            ctr,
            assignment: &mut self.assignment,
            cache: &mut self.cache,
            sums: vec![0.0; k * dim],
            counts: vec![0; k],
            trace: self.trace.as_mut(),
            export,
        };
        let all: Vec<u32> = (0..k as u32).collect();
        pass.visit(self.tree.root(), &[], &all, Floor::NONE);
        let Pass { sums, counts, .. } = pass;
        state.clear_sums();
        state.sums.copy_from_slice(&sums);
        state.counts.copy_from_slice(&counts);
        self.assignment.changed
    }
}

struct Pass<'a> {
    data: &'a Dataset,
    tree: &'a CoverTree,
    state: &'a ClusterState,
    ctr: &'a mut DistanceCounter,
    assignment: &'a mut Assignment,
    cache: &'a mut [u32],
    sums: Vec<f64>,
    counts: Vec<usize>,
    trace: Option<&'a mut Vec<PruneEvent>>,
    export: Option<&'a mut ExportedBounds>,
}

#[inline]
fn by_distance(a: &Cand, b: &Cand) -> std::cmp::Ordering {
    a.1.total_cmp(&b.1).then(a.0.cmp(&b.0))
}

impl Pass<'_> {
    #[inline]
    fn record(&mut self, target: PruneTarget, pruned: u32, keeper: u32, rule: PruneRule) {
        if let Some(t) = self.trace.as_deref_mut() {
            t.push(PruneEvent {
                target,
                pruned,
                keeper,
                rule,
            });
        }
    }

    /// Distances from `point` to the candidates, measuring unknown ones in
    /// order and skipping those ruled out by center separation from the
    /// nearest candidate measured so far. Sorted nearest first.
    fn evaluate(
        &mut self,
        target: PruneTarget,
        point: &[f64],
        radius: f64,
        known: &[Cand],
        unknown: &[u32],
        floor: &mut Floor,
    ) -> Vec<Cand> {
        let mut out = Vec::with_capacity(known.len() + unknown.len());
        out.extend_from_slice(known);
        let mut best = known.iter().copied().min_by(by_distance);
        for &j in unknown {
            if let Some((b, db)) = best {
                let lb = self.state.cc(b as usize, j as usize) - db - radius;
                if exceeds(lb, db + radius) {
                    floor.note(lb, j);
                    self.record(target, j, b, PruneRule::Separation);
                    continue;
                }
            }
            let d = self.ctr.measure(point, self.state.center(j as usize));
            out.push((j, d));
            if best.is_none_or(|(b, db)| d < db || (d == db && j < b)) {
                best = Some((j, d));
            }
        }
        out.sort_by(by_distance);
        out
    }

    fn visit(&mut self, id: NodeId, known: &[Cand], unknown: &[u32], mut floor: Floor) {
        let tree = self.tree;
        let node = tree.node(id);
        let routing = self.data.point(node.routing as usize);
        let r = node.radius;
        let cands = self.evaluate(PruneTarget::Node(id), routing, r, known, unknown, &mut floor);
        let (c1, d1) = cands[0];

        if cands[1..].iter().all(|&(_, d)| exceeds(d - r, d1 + r)) {
            let second = cands.get(1).copied();
            self.assign_node(id, c1, d1, second, floor);
            return;
        }

        let mut kept = Vec::with_capacity(cands.len());
        kept.push(cands[0]);
        for &(i, d) in &cands[1..] {
            if exceeds(d - r, d1 + r) {
                floor.note(d - r, i);
                self.record(PruneTarget::Node(id), i, c1, PruneRule::NodeFilter);
            } else {
                kept.push((i, d));
            }
        }
        self.cache[id as usize] = MIXED;

        for m in &node.members {
            self.process_entry(
                node.routing,
                &kept,
                Entry::Point {
                    index: m.index,
                    dist: m.dist,
                },
                floor,
            );
        }
        for &c in &node.children {
            self.process_entry(node.routing, &kept, Entry::Node(c), floor);
        }
    }

    fn process_entry(&mut self, parent_routing: u32, kept: &[Cand], entry: Entry, floor: Floor) {
        let (routing, d_pp, r_y, target) = match entry {
            Entry::Node(c) => {
                let n = self.tree.node(c);
                (n.routing, n.parent_distance, n.radius, PruneTarget::Node(c))
            }
            Entry::Point { index, dist } => (index, dist, 0.0, PruneTarget::Point(index)),
        };

        if routing == parent_routing {
            // Same routing point: every parent distance carries over.
            match entry {
                Entry::Node(c) => self.visit(c, kept, &[], floor),
                Entry::Point { index, .. } => self.resolve_point(index, kept, &[], floor),
            }
            return;
        }

        let (c1, d1) = kept[0];
        let (c2, d2) = kept[1];
        let second = Some((c2, d2 - d_pp));

        // Parent distances alone.
        let upper = d1 + d_pp;
        if kept[1..].iter().all(|&(_, d)| exceeds(d - d_pp - r_y, upper + r_y)) {
            self.assign_entry(entry, c1, upper, second, floor);
            return;
        }

        // Tightened with the child's own distance to c1.
        let dy1 = self
            .ctr
            .measure(self.data.point(routing as usize), self.state.center(c1 as usize));
        if kept[1..].iter().all(|&(_, d)| exceeds(d - d_pp - r_y, dy1 + r_y)) {
            self.assign_entry(entry, c1, dy1, second, floor);
            return;
        }

        let mut child_floor = floor;
        let mut unknown = Vec::with_capacity(kept.len() - 1);
        for &(i, d) in &kept[1..] {
            let lb = d - d_pp - r_y;
            if exceeds(lb, dy1 + r_y) {
                child_floor.note(lb, i);
                self.record(target, i, c1, PruneRule::ChildFilter);
            } else {
                unknown.push(i);
            }
        }
        let known = [(c1, dy1)];
        match entry {
            Entry::Node(c) => self.visit(c, &known, &unknown, child_floor),
            Entry::Point { index, .. } => self.resolve_point(index, &known, &unknown, child_floor),
        }
    }

    fn resolve_point(&mut self, index: u32, known: &[Cand], unknown: &[u32], mut floor: Floor) {
        let point = self.data.point(index as usize);
        let cands = self.evaluate(PruneTarget::Point(index), point, 0.0, known, unknown, &mut floor);
        let (a, d) = cands[0];
        self.assignment.set(index as usize, a);
        let a = a as usize;
        let dim = self.state.dim();
        add_assign(&mut self.sums[a * dim..(a + 1) * dim], point);
        self.counts[a] += 1;
        if let Some(ex) = self.export.as_deref_mut() {
            let f = match cands.get(1) {
                Some(&(j, dj)) => floor.with(dj, j),
                None => floor,
            };
            ex.upper[index as usize] = d;
            ex.lower[index as usize] = f.lb.max(0.0);
            ex.second[index as usize] = f.id;
        }
    }

    /// Assigns a node or point wholesale. `upper` bounds the distance from
    /// its routing point to `c`; `second` carries a lower bound on the
    /// distance from the routing point to every other surviving candidate.
    fn assign_entry(&mut self, entry: Entry, c: u32, upper: f64, second: Option<Cand>, floor: Floor) {
        match entry {
            Entry::Node(id) => self.assign_node(id, c, upper, second, floor),
            Entry::Point { index, .. } => {
                let point = self.data.point(index as usize);
                self.assignment.set(index as usize, c);
                let dim = self.state.dim();
                let ci = c as usize;
                add_assign(&mut self.sums[ci * dim..(ci + 1) * dim], point);
                self.counts[ci] += 1;
                if let Some(ex) = self.export.as_deref_mut() {
                    let f = match second {
                        Some((j, lb)) => floor.with(lb, j),
                        None => floor,
                    };
                    ex.upper[index as usize] = upper;
                    ex.lower[index as usize] = f.lb.max(0.0);
                    ex.second[index as usize] = f.id;
                }
            }
        }
    }

    fn assign_node(&mut self, id: NodeId, c: u32, upper: f64, second: Option<Cand>, floor: Floor) {
        let tree = self.tree;
        let ci = c as usize;
        let dim = self.state.dim();
        add_assign(&mut self.sums[ci * dim..(ci + 1) * dim], tree.agg_sum(id));
        self.counts[ci] += tree.node(id).weight;

        if self.cache[id as usize] != c {
            for &q in tree.subtree_points(id) {
                self.assignment.set(q as usize, c);
            }
            self.cache[id as usize] = c;
            let end = tree.node(id).end;
            self.cache[id as usize + 1..end as usize].fill(MIXED);
        }

        if let Some(ex) = self.export.as_deref_mut() {
            let radius = tree.node(id).radius;
            let mut stack = vec![(id, 0.0f64)];
            while let Some((n, chain)) = stack.pop() {
                let node = tree.node(n);
                for m in &node.members {
                    // Distance from the assigned node's routing point to q,
                    // bounded along the stored path.
                    let reach = (chain + m.dist).min(radius);
                    let f = match second {
                        Some((j, d)) => floor.with(d - reach, j),
                        None => floor,
                    };
                    let q = m.index as usize;
                    ex.upper[q] = upper + reach;
                    ex.lower[q] = f.lb.max(0.0);
                    ex.second[q] = f.id;
                }
                for &child in &node.children {
                    stack.push((child, chain + tree.node(child).parent_distance));
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covertree::TreeConfig;
    use crate::data::distance;
    use crate::kmeans::{kmeanspp_init, lloyd_assign};
    use crate::synth;

    fn tree_for(data: &Dataset, leaf: usize) -> CoverTree {
        CoverTree::build(
            data,
            TreeConfig {
                base: 1.2,
                leaf_threshold: leaf,
            },
            &mut DistanceCounter::new(),
        )
        .unwrap()
    }

    #[test]
    fn single_center_costs_one_distance() {
        let data = synth::blobs(1_000, 3, 4, 1.0, 1).unwrap();
        let tree = tree_for(&data, 10);
        let mut cm = CoverMeans::new(&tree);
        let mut state = ClusterState::new(data.point(17).to_vec(), 3);
        let mut ctr = DistanceCounter::new();
        let changed = cm.iterate(&data, &mut state, &mut ctr);
        assert_eq!(changed, 1_000);
        assert_eq!(ctr.count(), 1);
        assert_eq!(state.counts(), &[1_000]);
        assert_eq!(cm.cached_label(tree.root()), Some(0));
    }

    #[test]
    fn far_apart_centers_assign_the_root() {
        // All points within r of the origin; centers at 10r and 40r.
        let rows: Vec<[f64; 2]> = (0..200)
            .map(|i| {
                let t = i as f64 * 0.1;
                [t.cos() * (i % 10) as f64 * 0.1, t.sin() * (i % 10) as f64 * 0.1]
            })
            .collect();
        let data = Dataset::from_rows(&rows).unwrap();
        let tree = tree_for(&data, 100);
        let r = tree.node(0).radius;
        let p = data.point(tree.node(0).routing as usize).to_vec();
        let centers = vec![p[0] + 10.0 * r, p[1], p[0] - 40.0 * r, p[1]];
        let mut state = ClusterState::new(centers, 2);
        let mut cm = CoverMeans::new(&tree).with_trace();
        let mut ctr = DistanceCounter::new();
        cm.iterate(&data, &mut state, &mut ctr);
        assert_eq!(state.counts(), &[200, 0]);
        assert_eq!(cm.cached_label(0), Some(0));
        // The center-center distance, then d(p, c_0); center 1 is ruled out
        // by separation without being measured.
        assert_eq!(ctr.count(), 2);
        let trace = cm.take_trace();
        assert_eq!(trace.len(), 1);
        assert_eq!(trace[0].rule, PruneRule::Separation);
    }

    #[test]
    fn labels_sums_and_bounds_match_brute_force() {
        for seed in 0..5 {
            let data = synth::blobs(1_500, 4, 8, 3.0, seed).unwrap();
            let tree = tree_for(&data, 5 + seed as usize * 7);
            let centers = kmeanspp_init(&data, 12, seed, &mut DistanceCounter::new()).unwrap();
            let mut state = ClusterState::new(centers, 4);
            let mut lloyd_state = state.clone();
            let mut cm = CoverMeans::new(&tree);
            let mut lloyd = Assignment::new(data.len());
            for _ in 0..15 {
                let mut ctr = DistanceCounter::new();
                let (_, ex) = cm.iterate_exporting(&data, &mut state, &mut ctr);
                assert!(ctr.count() as usize <= data.len() * 12 + tree.len() + 66);
                lloyd_assign(&data, &state, &mut lloyd, &mut DistanceCounter::new());
                assert_eq!(cm.assignment().labels, lloyd.labels);

                lloyd_state.update_means(&data, &lloyd.labels);
                for (a, b) in state.sums().iter().zip(lloyd_state.sums()) {
                    assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0));
                }
                assert_eq!(state.counts(), lloyd_state.counts());

                for (i, p) in data.points().enumerate() {
                    let a = ex.labels[i] as usize;
                    let da = distance(p, state.center(a));
                    assert!(ex.upper[i] >= da * (1.0 - 1e-9), "upper {i}");
                    for c in (0..12).filter(|&c| c != a) {
                        let dc = distance(p, state.center(c));
                        assert!(ex.lower[i] <= dc * (1.0 + 1e-9) + 1e-12, "lower {i} {c}");
                    }
                }
                state.update_from_sums();
            }
        }
    }

    #[test]
    fn prunes_are_sound() {
        let data = synth::blobs(2_000, 3, 10, 2.0, 4).unwrap();
        let tree = tree_for(&data, 12);
        let centers = kmeanspp_init(&data, 20, 4, &mut DistanceCounter::new()).unwrap();
        let mut state = ClusterState::new(centers, 3);
        let mut cm = CoverMeans::new(&tree).with_trace();
        let mut rules = std::collections::HashSet::new();
        for _ in 0..6 {
            cm.iterate(&data, &mut state, &mut DistanceCounter::new());
            for e in cm.take_trace() {
                rules.insert(e.rule);
                let members: Vec<u32> = match e.target {
                    PruneTarget::Node(n) => tree.subtree_points(n).to_vec(),
                    PruneTarget::Point(p) => vec![p],
                };
                for q in members {
                    let p = data.point(q as usize);
                    let dp = distance(p, state.center(e.pruned as usize));
                    let dk = distance(p, state.center(e.keeper as usize));
                    assert!(dp >= dk * (1.0 - 1e-9), "{e:?}");
                }
            }
            state.update_from_sums();
        }
        assert_eq!(rules.len(), 3, "{rules:?}");
    }
}
