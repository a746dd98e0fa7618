//! Cover tree over a [`Dataset`], extended with per-node aggregates.
//!
//! A node at level `i` covers every point of its subtree within `base^i` of
//! its routing point. Its direct entries (child nodes and compact singleton
//! members) have routing points pairwise more than `base^(i-1)` apart, and
//! the node's own routing point reappears as one of those entries at
//! distance 0. Small subtrees (at most `leaf_threshold` points) are not
//! split further; their points are stored as leaf members together with their
//! distance to the routing point.
//!
//! Every node also carries the exact cover radius (the maximum distance from
//! the routing point to any subtree point), the coordinate sum of its subtree
//! and the number of points in it, so that a whole subtree can be added to a
//! cluster in `O(d)`.

use std::fmt;
use std::io::Write;
use std::ops::Range;
use std::time::{Duration, Instant};

use crate::data::{add_assign, distance, Dataset, DistanceCounter};
use crate::error::{Error, Result};

pub type NodeId = u32;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeConfig {
    /// Scale factor between consecutive levels.
    pub base: f64,
    /// Subtrees with at most this many points become leaves.
    pub leaf_threshold: usize,
}

impl Default for TreeConfig {
    fn default() -> Self {
        Self {
            base: 1.2,
            leaf_threshold: 100,
        }
    }
}

impl TreeConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.base.is_finite() || self.base <= 1.0 {
            return Err(Error::Config(format!(
                "cover tree scale factor must be > 1, got {}",
                self.base
            )));
        }
        if self.leaf_threshold == 0 {
            return Err(Error::Config("leaf threshold must be >= 1".into()));
        }
        Ok(())
    }
}

/// A point stored directly in a node, with its distance to the node's
/// routing point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Member {
    pub index: u32,
    pub dist: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub routing: u32,
    pub level: i32,
    pub radius: f64,
    pub parent_distance: f64,
    pub leaf: bool,
    pub children: Vec<NodeId>,
    /// Singleton children of an inner node, or all points of a leaf
    /// (including the routing point at distance 0).
    pub members: Vec<Member>,
    pub weight: usize,
    /// Range of this subtree's points in [`CoverTree::order`].
    pub span: Range<usize>,
    /// Exclusive end of this subtree's node ids; descendants occupy
    /// `id + 1..end`.
    pub end: NodeId,
}

#[derive(Debug, Clone)]
pub struct CoverTree {
    nodes: Vec<Node>,
    sums: Vec<f64>,
    order: Vec<u32>,
    config: TreeConfig,
    dim: usize,
    build_time: Duration,
    build_distances: u64,
}

struct Builder<'a> {
    data: &'a Dataset,
    config: TreeConfig,
    nodes: Vec<Node>,
    ctr: &'a mut DistanceCounter,
}

impl Builder<'_> {
    fn level_for(&self, dist: f64) -> i32 {
        level_for(self.config.base, dist)
    }

    fn build(&mut self, routing: u32, cap: i32, parent_distance: f64, elems: Vec<Member>) -> NodeId {
        let max = elems.iter().map(|m| m.dist).fold(0.0, f64::max);
        let id = self.nodes.len() as NodeId;
        let level = if max > 0.0 { self.level_for(max).min(cap) } else { cap };
        self.nodes.push(Node {
            routing,
            level,
            radius: max,
            parent_distance,
            leaf: true,
            children: Vec::new(),
            members: Vec::new(),
            weight: 0,
            span: 0..0,
            end: id + 1,
        });

        if elems.len() < self.config.leaf_threshold || max == 0.0 {
            let mut members = Vec::with_capacity(elems.len() + 1);
            members.push(Member {
                index: routing,
                dist: 0.0,
            });
            members.extend(elems);
            self.nodes[id as usize].members = members;
            return id;
        }

        let scale = level_radius(self.config.base, level - 1);
        let (near, mut far): (Vec<Member>, Vec<Member>) = elems.into_iter().partition(|m| m.dist <= scale);
        debug_assert!(!far.is_empty());

        let mut children = Vec::new();
        let mut members = Vec::new();
        if near.is_empty() {
            members.push(Member {
                index: routing,
                dist: 0.0,
            });
        } else {
            children.push(self.build(routing, level - 1, 0.0, near));
        }

        while !far.is_empty() {
            let head = far[0];
            let head_point = self.data.point(head.index as usize);
            let mut covered = Vec::new();
            let mut rest = Vec::with_capacity(far.len());
            for m in &far[1..] {
                let d = self.ctr.measure(head_point, self.data.point(m.index as usize));
                if d <= scale {
                    covered.push(Member {
                        index: m.index,
                        dist: d,
                    });
                } else {
                    rest.push(*m);
                }
            }
            if covered.is_empty() {
                members.push(head);
            } else {
                children.push(self.build(head.index, level - 1, head.dist, covered));
            }
            far = rest;
        }

        let end = self.nodes.len() as NodeId;
        let node = &mut self.nodes[id as usize];
        node.end = end;
        node.leaf = false;
        node.children = children;
        node.members = members;
        id
    }
}

/// Smallest level `l` with `base^l >= dist`.
fn level_for(base: f64, dist: f64) -> i32 {
    let mut level = (dist.ln() / base.ln()).ceil() as i32;
    while level_radius(base, level) < dist {
        level += 1;
    }
    while level_radius(base, level - 1) >= dist {
        level -= 1;
    }
    level
}

#[inline]
fn level_radius(base: f64, level: i32) -> f64 {
    base.powi(level)
}

impl CoverTree {
    /// Builds the tree by batch insertion in dataset order, rooted at the
    /// first point, then aggregates sums and weights bottom-up. Every metric
    /// evaluation is recorded in `ctr`.
    pub fn build(data: &Dataset, config: TreeConfig, ctr: &mut DistanceCounter) -> Result<Self> {
        config.validate()?;
        if data.is_empty() {
            return Err(Error::Empty);
        }
        let start = Instant::now();
        let before = ctr.count();
        let root_point = data.point(0);
        let elems: Vec<Member> = (1..data.len())
            .map(|i| Member {
                index: i as u32,
                dist: ctr.measure(root_point, data.point(i)),
            })
            .collect();
        let mut builder = Builder {
            data,
            config,
            nodes: Vec::new(),
            ctr,
        };
        builder.build(0, i32::MAX, 0.0, elems);
        let nodes = builder.nodes;
        let mut tree = Self {
            nodes,
            sums: Vec::new(),
            order: Vec::with_capacity(data.len()),
            config,
            dim: data.dim(),
            build_time: Duration::ZERO,
            build_distances: 0,
        };
        tree.assign_spans(0);
        tree.aggregate(data);
        tree.build_time = start.elapsed();
        tree.build_distances = ctr.count() - before;
        Ok(tree)
    }

    fn assign_spans(&mut self, id: NodeId) {
        let start = self.order.len();
        let node = &self.nodes[id as usize];
        self.order.extend(node.members.iter().map(|m| m.index));
        let children = node.children.clone();
        for c in children {
            self.assign_spans(c);
        }
        self.nodes[id as usize].span = start..self.order.len();
    }

    /// Recomputes every node's aggregate sum and weight bottom-up. Children
    /// always have larger ids than their parent, so a reverse sweep visits
    /// them first.
    pub fn aggregate(&mut self, data: &Dataset) {
        let dim = data.dim();
        self.sums = vec![0.0; self.nodes.len() * dim];
        for id in (0..self.nodes.len()).rev() {
            let mut sum = vec![0.0; dim];
            let mut weight = 0;
            let node = &self.nodes[id];
            for m in &node.members {
                add_assign(&mut sum, data.point(m.index as usize));
                weight += 1;
            }
            for &c in &node.children {
                add_assign(&mut sum, self.agg_sum(c));
                weight += self.nodes[c as usize].weight;
            }
            self.sums[id * dim..(id + 1) * dim].copy_from_slice(&sum);
            self.nodes[id].weight = weight;
        }
    }

    pub fn root(&self) -> NodeId {
        0
    }

    #[inline]
    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id as usize]
    }

    /// Mutable node access, used to inject faults in checker tests.
    pub fn node_mut(&mut self, id: NodeId) -> &mut Node {
        &mut self.nodes[id as usize]
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    #[inline]
    pub fn agg_sum(&self, id: NodeId) -> &[f64] {
        let i = id as usize;
        &self.sums[i * self.dim..(i + 1) * self.dim]
    }

    /// Points of the subtree rooted at `id`.
    #[inline]
    pub fn subtree_points(&self, id: NodeId) -> &[u32] {
        &self.order[self.node(id).span.clone()]
    }

    /// All dataset indices in depth-first order.
    pub fn order(&self) -> &[u32] {
        &self.order
    }

    pub fn config(&self) -> TreeConfig {
        self.config
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point_count(&self) -> usize {
        self.order.len()
    }

    pub fn build_time(&self) -> Duration {
        self.build_time
    }

    pub fn build_distances(&self) -> u64 {
        self.build_distances
    }

    /// Ball radius `base^level`.
    pub fn level_radius(&self, level: i32) -> f64 {
        level_radius(self.config.base, level)
    }

    pub fn depth(&self) -> usize {
        fn go(t: &CoverTree, id: NodeId) -> usize {
            1 + t.node(id).children.iter().map(|&c| go(t, c)).max().unwrap_or(0)
        }
        go(self, self.root())
    }

    /// One line per node in pre-order:
    /// `level routing radius weight parent_distance entries`.
    pub fn dump<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let mut stack = vec![self.root()];
        while let Some(id) = stack.pop() {
            let n = self.node(id);
            writeln!(
                out,
                "{} {} {} {} {} {}",
                n.level,
                n.routing,
                n.radius,
                n.weight,
                n.parent_distance,
                n.children.len() + n.members.len()
            )?;
            stack.extend(n.children.iter().rev());
        }
        Ok(())
    }

    /// Scans the tree against the dataset and reports every broken
    /// structural, radius or aggregate invariant.
    pub fn check_invariants(&self, data: &Dataset) -> Vec<Violation> {
        let mut out = Vec::new();
        let tol = |a: f64, b: f64| 1e-9 * a.abs().max(b.abs()).max(f64::MIN_POSITIVE);

        let mut seen = vec![0u32; data.len()];
        for &p in &self.order {
            if let Some(s) = seen.get_mut(p as usize) {
                *s += 1;
            }
        }
        if self.order.len() != data.len() || seen.iter().any(|&c| c != 1) {
            out.push(Violation {
                node: self.root(),
                kind: InvariantKind::Conservation,
                detail: format!(
                    "tree holds {} point occurrences for {} dataset points",
                    self.order.len(),
                    data.len()
                ),
            });
        }

        for (id, node) in self.nodes.iter().enumerate() {
            let id = id as NodeId;
            let p = data.point(node.routing as usize);
            let mut flag = |kind, detail: String| out.push(Violation { node: id, kind, detail });

            let self_entries = node.members.iter().filter(|m| m.index == node.routing).count()
                + node
                    .children
                    .iter()
                    .filter(|&&c| self.node(c).routing == node.routing)
                    .count();
            if self_entries != 1 {
                flag(
                    InvariantKind::Nesting,
                    format!(
                        "routing point {} appears {self_entries} times among entries",
                        node.routing
                    ),
                );
            }

            for m in &node.members {
                let d = distance(p, data.point(m.index as usize));
                if d != m.dist {
                    flag(
                        InvariantKind::StoredDistance,
                        format!("member {} stores {} but distance is {d}", m.index, m.dist),
                    );
                }
            }

            for &c in &node.children {
                let child = self.node(c);
                let d = distance(p, data.point(child.routing as usize));
                if d != child.parent_distance {
                    flag(
                        InvariantKind::StoredDistance,
                        format!(
                            "child {c} stores parent distance {} but distance is {d}",
                            child.parent_distance
                        ),
                    );
                }
                if child.level >= node.level {
                    flag(
                        InvariantKind::Level,
                        format!("child {c} level {} not below {}", child.level, node.level),
                    );
                }
                if child.routing == node.routing && child.parent_distance != 0.0 {
                    flag(
                        InvariantKind::Nesting,
                        format!("self child {c} at parent distance {}", child.parent_distance),
                    );
                }
            }

            let ball = self.level_radius(node.level);
            if node.radius > ball + tol(node.radius, ball) {
                flag(
                    InvariantKind::Cover,
                    format!("radius {} exceeds level ball {ball}", node.radius),
                );
            }

            if !node.leaf {
                let entries: Vec<(u32, f64)> = node
                    .members
                    .iter()
                    .map(|m| (m.index, m.dist))
                    .chain(node.children.iter().map(|&c| {
                        let ch = self.node(c);
                        (ch.routing, ch.parent_distance)
                    }))
                    .collect();
                for &(q, d) in &entries {
                    if d > ball + tol(d, ball) {
                        flag(InvariantKind::Cover, format!("entry {q} at {d} outside ball {ball}"));
                    }
                }
                let sep = self.level_radius(node.level - 1);
                for (i, &(a, _)) in entries.iter().enumerate() {
                    for &(b, _) in &entries[i + 1..] {
                        let d = distance(data.point(a as usize), data.point(b as usize));
                        if d <= sep {
                            flag(
                                InvariantKind::Separation,
                                format!("entries {a} and {b} are {d} apart, need > {sep}"),
                            );
                        }
                    }
                }
            }

            let mut sum = vec![0.0; data.dim()];
            let mut max = 0.0f64;
            let mut max_at = node.routing;
            for &q in self.subtree_points(id) {
                let qp = data.point(q as usize);
                add_assign(&mut sum, qp);
                let d = distance(p, qp);
                if d > max {
                    max = d;
                    max_at = q;
                }
            }
            if max > node.radius + tol(max, node.radius) {
                flag(
                    InvariantKind::Radius,
                    format!("point {max_at} at {max} beyond radius {}", node.radius),
                );
            }
            if node.weight != node.span.len() {
                flag(
                    InvariantKind::Aggregate,
                    format!("weight {} but subtree has {} points", node.weight, node.span.len()),
                );
            }
            let agg = self.agg_sum(id);
            for (j, (&a, &s)) in agg.iter().zip(&sum).enumerate() {
                if (a - s).abs() > tol(a, s) {
                    flag(
                        InvariantKind::Aggregate,
                        format!("sum coordinate {j}: stored {a}, recomputed {s}"),
                    );
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InvariantKind {
    Conservation,
    Nesting,
    Cover,
    Separation,
    Level,
    Radius,
    Aggregate,
    StoredDistance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub node: NodeId,
    pub kind: InvariantKind,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "node {} {:?}: {}", self.node, self.kind, self.detail)
    }
}

/// Distance interval for every member of a ball of radius `r` whose routing
/// point is `d_pc` from a center. The lower end is clamped at zero.
#[inline]
pub fn node_point_bounds(d_pc: f64, r: f64) -> (f64, f64) {
    ((d_pc - r).max(0.0), d_pc + r)
}

/// Distance interval for every member of a child ball (radius `r_child`,
/// routing point `d_pp` from the parent's routing point), using only the
/// parent routing point's distance `d_pc` to the center.
#[inline]
pub fn child_point_bounds(d_pc: f64, d_pp: f64, r_child: f64) -> (f64, f64) {
    ((d_pc - d_pp - r_child).max(0.0), d_pc + d_pp + r_child)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn build(data: &Dataset, config: TreeConfig) -> CoverTree {
        CoverTree::build(data, config, &mut DistanceCounter::new()).unwrap()
    }

    #[test]
    fn single_point() {
        let data = Dataset::from_rows(&[[1.0, 2.0]]).unwrap();
        let tree = build(&data, TreeConfig::default());
        let root = tree.node(tree.root());
        assert_eq!((root.radius, root.weight), (0.0, 1));
        assert_eq!(tree.agg_sum(0), &[1.0, 2.0]);
        assert!(tree.check_invariants(&data).is_empty());
    }

    #[test]
    fn small_dataset_is_one_leaf() {
        let data = synth::uniform(50, 3, 1).unwrap();
        let tree = build(&data, TreeConfig::default());
        assert_eq!(tree.len(), 1);
        let root = tree.node(0);
        assert!(root.leaf);
        assert_eq!(root.members.len(), 50);
        let oracle = (0..50)
            .map(|i| distance(data.point(0), data.point(i)))
            .fold(0.0, f64::max);
        assert_eq!(root.radius, oracle);
    }

    #[test]
    fn three_points_two_levels() {
        let data = Dataset::from_rows(&[[0.0], [0.1], [10.0]]).unwrap();
        let tree = build(
            &data,
            TreeConfig {
                base: 2.0,
                leaf_threshold: 1,
            },
        );
        assert_eq!(tree.node(0).weight, 3);
        assert!(!tree.node(0).leaf);
        assert!(tree.check_invariants(&data).is_empty());
    }

    #[test]
    fn invariants_hold_on_uniform_data() {
        let data = synth::uniform(10_000, 2, 5).unwrap();
        let tree = build(&data, TreeConfig::default());
        let report = tree.check_invariants(&data);
        assert!(report.is_empty(), "{:?}", &report[..report.len().min(5)]);
        assert!(tree.len() > 1);
    }

    #[test]
    fn root_sums_match_column_sums() {
        let data = synth::blobs(3_000, 4, 6, 2.0, 11).unwrap();
        let tree = build(
            &data,
            TreeConfig {
                base: 1.3,
                leaf_threshold: 8,
            },
        );
        let sums = data.column_sums();
        for (a, b) in tree.agg_sum(0).iter().zip(&sums) {
            assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0));
        }
        assert_eq!(tree.node(0).weight, data.len());
    }

    #[test]
    fn duplicates_collapse_into_leaves() {
        let rows: Vec<[f64; 2]> = (0..500).map(|i| [(i % 7) as f64, (i % 3) as f64]).collect();
        let data = Dataset::from_rows(&rows).unwrap();
        let tree = build(
            &data,
            TreeConfig {
                base: 1.2,
                leaf_threshold: 1,
            },
        );
        assert!(tree.check_invariants(&data).is_empty());
        let zero_leaves = tree
            .nodes()
            .iter()
            .filter(|n| n.leaf && n.radius == 0.0 && n.members.len() > 1)
            .count();
        assert_eq!(zero_leaves, 21);
    }

    #[test]
    fn build_is_deterministic() {
        let data = synth::blobs(2_000, 3, 5, 1.0, 2).unwrap();
        let cfg = TreeConfig {
            base: 1.2,
            leaf_threshold: 10,
        };
        let mut a = Vec::new();
        let mut b = Vec::new();
        build(&data, cfg).dump(&mut a).unwrap();
        build(&data, cfg).dump(&mut b).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn build_distances_are_counted_separately() {
        let data = synth::uniform(1_000, 2, 8).unwrap();
        let mut ctr = DistanceCounter::new();
        let tree = CoverTree::build(&data, TreeConfig::default(), &mut ctr).unwrap();
        assert_eq!(tree.build_distances(), ctr.count());
        assert!(ctr.count() >= 999);
    }

    #[test]
    fn shrunk_radius_is_reported_once() {
        let data = synth::uniform(2_000, 2, 4).unwrap();
        let mut tree = build(&data, TreeConfig::default());
        let victim = (0..tree.len() as NodeId)
            .find(|&id| tree.node(id).leaf && tree.node(id).radius > 0.0)
            .unwrap();
        tree.node_mut(victim).radius *= 0.5;
        let report = tree.check_invariants(&data);
        assert_eq!(report.len(), 1, "{report:?}");
        assert_eq!(report[0].kind, InvariantKind::Radius);
        assert_eq!(report[0].node, victim);
    }

    #[test]
    fn close_siblings_are_reported() {
        let data = synth::uniform(3_000, 2, 6).unwrap();
        let mut tree = build(
            &data,
            TreeConfig {
                base: 1.2,
                leaf_threshold: 1,
            },
        );
        let (parent, a, b) = tree
            .nodes()
            .iter()
            .enumerate()
            .find_map(|(id, n)| (!n.leaf && n.members.len() >= 2).then(|| (id as NodeId, n.members[0], n.members[1])))
            .unwrap();
        // Pretend the second singleton is a duplicate of the first.
        let members = &mut tree.node_mut(parent).members;
        let pos = members.iter().position(|m| *m == b).unwrap();
        members[pos] = Member {
            index: a.index,
            dist: a.dist,
        };
        let report = tree.check_invariants(&data);
        assert!(report
            .iter()
            .any(|v| v.kind == InvariantKind::Separation && v.node == parent));
    }

    #[test]
    fn arithmetic_bounds() {
        assert_eq!(node_point_bounds(10.0, 2.0), (8.0, 12.0));
        assert_eq!(node_point_bounds(3.0, 0.0), (3.0, 3.0));
        assert_eq!(node_point_bounds(1.0, 2.0), (0.0, 3.0));
        assert_eq!(child_point_bounds(10.0, 1.0, 0.5), (8.5, 11.5));
        assert_eq!(child_point_bounds(10.0, 0.0, 0.5), node_point_bounds(10.0, 0.5));
    }

    #[test]
    fn bounds_bracket_member_distances() {
        let data = synth::blobs(4_000, 3, 8, 3.0, 21).unwrap();
        let tree = build(
            &data,
            TreeConfig {
                base: 1.2,
                leaf_threshold: 20,
            },
        );
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut checked = 0;
        for _ in 0..1_500 {
            let id = rng.gen_range(0..tree.len()) as NodeId;
            let center: Vec<f64> = (0..3).map(|_| rng.gen_range(-10.0..110.0)).collect();
            let node = tree.node(id);
            let d_pc = distance(data.point(node.routing as usize), &center);
            let (lo, hi) = node_point_bounds(d_pc, node.radius);
            for &q in tree.subtree_points(id) {
                let d = distance(data.point(q as usize), &center);
                assert!(lo <= d + 1e-9 && d <= hi + 1e-9);
            }
            for &c in &node.children {
                let child = tree.node(c);
                let (lo, hi) = child_point_bounds(d_pc, child.parent_distance, child.radius);
                for &q in tree.subtree_points(c) {
                    let d = distance(data.point(q as usize), &center);
                    assert!(lo <= d + 1e-9 && d <= hi + 1e-9);
                }
            }
            checked += 1;
        }
        assert_eq!(checked, 1_500);
    }
}
