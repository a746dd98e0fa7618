//! Algorithm selection and the iterate-until-stable driver.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::bounds::{
    elkan_iterate, hamerly_iterate, update_elkan_bounds, update_hamerly_bounds, ElkanBounds, HamerlyBounds,
};
use crate::cover::CoverMeans;
use crate::covertree::{CoverTree, TreeConfig};
use crate::data::{Dataset, DistanceCounter};
use crate::error::{Error, Result};
use crate::hybrid::{Hybrid, HybridConfig};
use crate::kmeans::{kmeanspp_init, lloyd_assign, sse, Assignment, ClusterState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Standard,
    Hamerly,
    Elkan,
    Cover,
    Hybrid,
}

impl Algorithm {
    pub const ALL: [Algorithm; 5] = [
        Algorithm::Standard,
        Algorithm::Hamerly,
        Algorithm::Elkan,
        Algorithm::Cover,
        Algorithm::Hybrid,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Standard => "standard",
            Algorithm::Hamerly => "hamerly",
            Algorithm::Elkan => "elkan",
            Algorithm::Cover => "cover",
            Algorithm::Hybrid => "hybrid",
        }
    }

    pub fn uses_tree(self) -> bool {
        matches!(self, Algorithm::Cover | Algorithm::Hybrid)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown algorithm {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunConfig {
    pub k: usize,
    pub seed: u64,
    pub max_iter: usize,
    /// Stop once no center moves farther than this. Zero disables the test
    /// and leaves label stability as the only criterion.
    pub tol: f64,
    pub tree: TreeConfig,
    pub hybrid: HybridConfig,
}

impl RunConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        Self {
            k,
            seed,
            max_iter: 1000,
            tol: 0.0,
            tree: TreeConfig::default(),
            hybrid: HybridConfig::default(),
        }
    }

    pub fn validate(&self, data: &Dataset) -> Result<()> {
        if self.k == 0 || self.k > data.len() {
            return Err(Error::InvalidK {
                k: self.k,
                n: data.len(),
            });
        }
        if self.max_iter == 0 {
            return Err(Error::Config("max_iter must be >= 1".into()));
        }
        if self.tol.is_nan() || self.tol < 0.0 {
            return Err(Error::Config(format!("tolerance must be >= 0, got {}", self.tol)));
        }
        self.tree.validate()?;
        self.hybrid.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub dists: u64,
    pub time_ns: u64,
    #[serde(skip)]
    pub changed: usize,
}

/// One run's record. Serializes to the harness's fixed JSON layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub algorithm: Algorithm,
    pub seed: u64,
    pub k: usize,
    pub iterations: usize,
    pub converged: bool,
    pub sse: f64,
    pub dist_total: u64,
    pub time_total_ns: u64,
    pub tree_build_ns: Option<u64>,
    pub tree_build_dists: Option<u64>,
    pub per_iter: Vec<IterationMetrics>,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub labels: Vec<u32>,
    pub centers: Vec<f64>,
    pub metrics: RunMetrics,
}

/// What an observer sees after each assignment pass: the centers the pass
/// used and the labels it produced.
pub struct IterationView<'a> {
    pub iteration: usize,
    pub state: &'a ClusterState,
    pub labels: &'a [u32],
    pub changed: usize,
    pub algorithm: AlgorithmView<'a>,
}

/// Algorithm-specific internals exposed to observers.
pub enum AlgorithmView<'a> {
    Standard,
    Hamerly(&'a HamerlyBounds),
    Elkan(&'a ElkanBounds),
    Cover(&'a CoverMeans<'a>),
    Hybrid(&'a Hybrid<'a>),
}

enum Engine<'t> {
    Standard(Assignment),
    Hamerly(Assignment, Option<HamerlyBounds>),
    Elkan(Assignment, Option<ElkanBounds>),
    Cover(CoverMeans<'t>),
    Hybrid(Hybrid<'t>),
}

impl<'t> Engine<'t> {
    fn new(algorithm: Algorithm, n: usize, tree: Option<&'t CoverTree>, cfg: &RunConfig) -> Result<Self> {
        Ok(match algorithm {
            Algorithm::Standard => Engine::Standard(Assignment::new(n)),
            Algorithm::Hamerly => Engine::Hamerly(Assignment::new(n), None),
            Algorithm::Elkan => Engine::Elkan(Assignment::new(n), None),
            Algorithm::Cover => Engine::Cover(CoverMeans::new(tree.expect("tree"))),
            Algorithm::Hybrid => Engine::Hybrid(Hybrid::new(tree.expect("tree"), cfg.hybrid)?),
        })
    }

    fn assign(&mut self, data: &Dataset, state: &mut ClusterState, ctr: &mut DistanceCounter) -> usize {
        match self {
            Engine::Standard(a) => lloyd_assign(data, state, a, ctr),
            Engine::Hamerly(a, b) => {
                if let Some(b) = b.as_mut() {
                    state.refresh_moved(ctr);
                    state.refresh_cc(ctr);
                    update_hamerly_bounds(b, &a.labels, state);
                }
                hamerly_iterate(data, state, b, a, ctr)
            }
            Engine::Elkan(a, b) => {
                if let Some(b) = b.as_mut() {
                    state.refresh_moved(ctr);
                    state.refresh_cc(ctr);
                    update_elkan_bounds(b, &a.labels, state);
                }
                elkan_iterate(data, state, b, a, ctr)
            }
            Engine::Cover(cm) => cm.iterate(data, state, ctr),
            Engine::Hybrid(h) => h.iterate(data, state, ctr),
        }
    }

    fn update(&mut self, data: &Dataset, state: &mut ClusterState) {
        match self {
            Engine::Standard(a) | Engine::Hamerly(a, _) | Engine::Elkan(a, _) => state.update_means(data, &a.labels),
            Engine::Cover(_) => state.update_from_sums(),
            Engine::Hybrid(h) => h.update(data, state),
        }
    }

    fn labels(&self) -> &[u32] {
        match self {
            Engine::Standard(a) | Engine::Hamerly(a, _) | Engine::Elkan(a, _) => &a.labels,
            Engine::Cover(cm) => &cm.assignment().labels,
            Engine::Hybrid(h) => &h.assignment().labels,
        }
    }

    fn view(&self) -> AlgorithmView<'_> {
        match self {
            Engine::Standard(_) => AlgorithmView::Standard,
            Engine::Hamerly(_, b) => AlgorithmView::Hamerly(b.as_ref().expect("bounds after a pass")),
            Engine::Elkan(_, b) => AlgorithmView::Elkan(b.as_ref().expect("bounds after a pass")),
            Engine::Cover(cm) => AlgorithmView::Cover(cm),
            Engine::Hybrid(h) => AlgorithmView::Hybrid(h),
        }
    }
}

/// Runs one clustering from a k-means++ start. Tree algorithms use `tree`
/// when given (reporting its build cost) and build their own otherwise.
pub fn run(algorithm: Algorithm, data: &Dataset, cfg: &RunConfig, tree: Option<&CoverTree>) -> Result<RunResult> {
    run_observed(algorithm, data, cfg, tree, &mut |_| {})
}

/// [`run`] with a callback after every assignment pass.
pub fn run_observed(
    algorithm: Algorithm,
    data: &Dataset,
    cfg: &RunConfig,
    tree: Option<&CoverTree>,
    observer: &mut dyn FnMut(&IterationView<'_>),
) -> Result<RunResult> {
    cfg.validate(data)?;
    let owned;
    let tree = match (algorithm.uses_tree(), tree) {
        (false, _) => None,
        (true, Some(t)) => Some(t),
        (true, None) => {
            owned = CoverTree::build(data, cfg.tree, &mut DistanceCounter::new())?;
            Some(&owned)
        }
    };
    let centers = kmeanspp_init(data, cfg.k, cfg.seed, &mut DistanceCounter::new())?;
    let initial = ClusterState::new(centers, data.dim());
    drive(algorithm, data, cfg, tree, initial, observer)
}

/// Iterates from explicit initial centers.
pub fn drive(
    algorithm: Algorithm,
    data: &Dataset,
    cfg: &RunConfig,
    tree: Option<&CoverTree>,
    mut state: ClusterState,
    observer: &mut dyn FnMut(&IterationView<'_>),
) -> Result<RunResult> {
    if algorithm.uses_tree() && tree.is_none() {
        return Err(Error::Config(format!("{algorithm} needs a cover tree")));
    }
    let tree = tree.filter(|_| algorithm.uses_tree());
    let mut engine = Engine::new(algorithm, data.len(), tree, cfg)?;
    let mut ctr = DistanceCounter::new();
    let mut per_iter = Vec::new();
    let mut converged = false;

    for iteration in 1..=cfg.max_iter {
        let before = ctr.count();
        let start = Instant::now();
        let changed = engine.assign(data, &mut state, &mut ctr);
        let mut elapsed = start.elapsed();

        observer(&IterationView {
            iteration,
            state: &state,
            labels: engine.labels(),
            changed,
            algorithm: engine.view(),
        });

        if changed == 0 {
            converged = true;
        } else {
            let start = Instant::now();
            engine.update(data, &mut state);
            if cfg.tol > 0.0 {
                state.refresh_moved(&mut ctr);
                converged = state.max_moved().0 <= cfg.tol;
            }
            elapsed += start.elapsed();
        }
        per_iter.push(IterationMetrics {
            dists: ctr.count() - before,
            time_ns: elapsed.as_nanos() as u64,
            changed,
        });
        if converged {
            break;
        }
    }

    let labels = engine.labels().to_vec();
    let centers = state.centers().to_vec();
    let metrics = RunMetrics {
        algorithm,
        seed: cfg.seed,
        k: cfg.k,
        iterations: per_iter.len(),
        converged,
        sse: sse(data, &centers, &labels),
        dist_total: per_iter.iter().map(|m| m.dists).sum(),
        time_total_ns: per_iter.iter().map(|m| m.time_ns).sum(),
        tree_build_ns: tree.map(|t| t.build_time().as_nanos() as u64),
        tree_build_dists: tree.map(|t| t.build_distances()),
        per_iter,
    };
    Ok(RunResult {
        labels,
        centers,
        metrics,
    })
}
