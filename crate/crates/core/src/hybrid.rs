//! Cover-means for the first iterations, then a stored-bounds algorithm
//! seeded with bounds taken from the last tree pass.

use crate::bounds::{hamerly_iterate, update_hamerly_bounds, HamerlyBounds};
use crate::cover::{CoverMeans, ExportedBounds};
use crate::covertree::CoverTree;
use crate::data::{Dataset, DistanceCounter};
use crate::error::{Error, Result};
use crate::kmeans::{Assignment, ClusterState};

/// Stored-bounds algorithm that takes over after the tree phase. Anything
/// built on a single upper and lower bound per point can accept the
/// exported state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Backend {
    #[default]
    Hamerly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HybridConfig {
    /// Number of tree iterations before switching.
    pub t_switch: usize,
    pub backend: Backend,
}

impl Default for HybridConfig {
    fn default() -> Self {
        Self {
            t_switch: 7,
            backend: Backend::Hamerly,
        }
    }
}

impl HybridConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t_switch == 0 {
            return Err(Error::Config("switch iteration must be >= 1".into()));
        }
        Ok(())
    }
}

/// Converts exported tree bounds into the backend's initial state.
pub fn seed_hamerly(export: ExportedBounds) -> (Assignment, HamerlyBounds) {
    let assignment = Assignment {
        labels: export.labels,
        changed: 0,
    };
    let bounds = HamerlyBounds {
        upper: export.upper,
        lower: export.lower,
        second: export.second,
    };
    (assignment, bounds)
}

#[derive(Debug, Clone)]
enum Phase<'t> {
    Tree(CoverMeans<'t>),
    Bounds {
        assignment: Assignment,
        bounds: Option<HamerlyBounds>,
    },
}

#[derive(Debug, Clone)]
pub struct Hybrid<'t> {
    config: HybridConfig,
    iteration: usize,
    phase: Phase<'t>,
    last_export: Option<ExportedBounds>,
    keep_export: bool,
    tree_sums: bool,
}

impl<'t> Hybrid<'t> {
    pub fn new(tree: &'t CoverTree, config: HybridConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            iteration: 0,
            phase: Phase::Tree(CoverMeans::new(tree)),
            last_export: None,
            keep_export: false,
            tree_sums: false,
        })
    }

    /// Keeps a copy of the bounds exported at the switch, for inspection.
    pub fn keep_export(mut self) -> Self {
        self.keep_export = true;
        self
    }

    pub fn exported(&self) -> Option<&ExportedBounds> {
        self.last_export.as_ref()
    }

    /// Whether the backend has taken over.
    pub fn switched(&self) -> bool {
        matches!(self.phase, Phase::Bounds { .. })
    }

    /// The backend's current bounds, once switched.
    pub fn backend_bounds(&self) -> Option<&HamerlyBounds> {
        match &self.phase {
            Phase::Bounds { bounds, .. } => bounds.as_ref(),
            Phase::Tree(_) => None,
        }
    }

    pub fn assignment(&self) -> &Assignment {
        match &self.phase {
            Phase::Tree(cm) => cm.assignment(),
            Phase::Bounds { assignment, .. } => assignment,
        }
    }

    /// One assignment pass. Tree passes leave cluster sums in `state`;
    /// follow with [`update`](Self::update) either way.
    pub fn iterate(&mut self, data: &Dataset, state: &mut ClusterState, ctr: &mut DistanceCounter) -> usize {
        self.iteration += 1;
        self.tree_sums = matches!(self.phase, Phase::Tree(_));
        match &mut self.phase {
            Phase::Tree(cm) if self.iteration < self.config.t_switch => cm.iterate(data, state, ctr),
            Phase::Tree(cm) => {
                let (changed, export) = cm.iterate_exporting(data, state, ctr);
                if self.keep_export {
                    self.last_export = Some(export.clone());
                }
                let (assignment, bounds) = match self.config.backend {
                    Backend::Hamerly => seed_hamerly(export),
                };
                self.phase = Phase::Bounds {
                    assignment: Assignment { changed, ..assignment },
                    bounds: Some(bounds),
                };
                changed
            }
            Phase::Bounds { assignment, bounds } => {
                state.refresh_moved(ctr);
                state.refresh_cc(ctr);
                if let Some(b) = bounds.as_mut() {
                    update_hamerly_bounds(b, &assignment.labels, state);
                }
                hamerly_iterate(data, state, bounds, assignment, ctr)
            }
        }
    }

    /// Mean update matching the pass that just ran.
    pub fn update(&mut self, data: &Dataset, state: &mut ClusterState) {
        if self.tree_sums {
            state.update_from_sums();
        } else {
            state.update_means(data, &self.assignment().labels);
        }
    }
}
