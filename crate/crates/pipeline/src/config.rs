use std::path::{Path, PathBuf};
use std::time::Duration;

use refcolor_core::hints;
use refcolor_core::segmentation::DEFAULT_SEGMENTS;
use refcolor_core::{Metric, SolverConfig};
use serde::{Deserialize, Serialize};

use crate::error::{PipelineError, Stage};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CannyConfig {
    pub low: f64,
    pub high: f64,
    pub sigma: f64,
}

impl Default for CannyConfig {
    fn default() -> Self {
        Self {
            low: 0.1,
            high: 0.2,
            sigma: 1.0,
        }
    }
}

/// Where candidates come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ProviderConfig {
    Dir {
        path: PathBuf,
    },
    Http {
        endpoint: String,
        #[serde(default = "default_timeout_secs")]
        timeout_secs: f64,
        /// Externally computed HED boundary map sent with the request.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        hed_map: Option<PathBuf>,
    },
}

fn default_timeout_secs() -> f64 {
    300.0
}

impl ProviderConfig {
    pub fn timeout(&self) -> Option<Duration> {
        match self {
            Self::Http { timeout_secs, .. } => Some(Duration::from_secs_f64(*timeout_secs)),
            Self::Dir { .. } => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Candidates requested from a generation service.
    pub n_candidates: usize,
    /// HED-conditioned share of `n_candidates`; half when unset.
    pub n_hed: Option<usize>,
    pub n_segments: usize,
    pub compactness: f64,
    /// Externally computed segment map used instead of superpixels.
    pub segments: Option<PathBuf>,
    /// Feature grid of the input; only used when every candidate has one too.
    pub features: Option<PathBuf>,
    pub metric: Metric,
    pub cell_size: usize,
    pub search_radius: usize,
    pub s_eps: f64,
    pub hint_cap: usize,
    pub dbscan_eps: f64,
    pub dbscan_min_pts: usize,
    pub solver: SolverConfig,
    pub canny: CannyConfig,
    pub caption: String,
    pub provider: Option<ProviderConfig>,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            n_candidates: 8,
            n_hed: None,
            n_segments: DEFAULT_SEGMENTS,
            compactness: 10.0,
            segments: None,
            features: None,
            metric: Metric::default(),
            cell_size: hints::DEFAULT_CELL_SIZE,
            search_radius: 0,
            s_eps: hints::DEFAULT_SIMILARITY_THRESHOLD,
            hint_cap: hints::DEFAULT_HINT_CAP,
            dbscan_eps: hints::DEFAULT_DBSCAN_EPS,
            dbscan_min_pts: hints::DEFAULT_DBSCAN_MIN_PTS,
            solver: SolverConfig::default(),
            canny: CannyConfig::default(),
            caption: String::new(),
            provider: None,
            seed: 0,
        }
    }
}

fn config_error(msg: impl Into<String>) -> PipelineError {
    PipelineError::message(Stage::Config, msg)
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, PipelineError> {
        toml::from_str(text).map_err(|e| config_error(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| config_error(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| config_error(format!("{}: {}", path.display(), e.source_message())))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// `(n_canny, n_hed)` for a generation request. Without a HED map every
    /// candidate is Canny-conditioned.
    pub fn condition_split(&self, hed_available: bool) -> (usize, usize) {
        if !hed_available {
            return (self.n_candidates, 0);
        }
        let n_hed = self.n_hed.unwrap_or(self.n_candidates / 2).min(self.n_candidates);
        (self.n_candidates - n_hed, n_hed)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let positive = [
            ("n_candidates", self.n_candidates),
            ("n_segments", self.n_segments),
            ("hint_cap", self.hint_cap),
            ("dbscan_min_pts", self.dbscan_min_pts),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(config_error(format!("{name} must be at least 1")));
            }
        }
        if self.n_hed.is_some_and(|h| h > self.n_candidates) {
            return Err(config_error("n_hed exceeds n_candidates"));
        }
        if self.cell_size < 2 {
            return Err(config_error(format!("cell_size must be at least 2, got {}", self.cell_size)));
        }
        if !(0.0..=1.0).contains(&self.s_eps) {
            return Err(config_error(format!("s_eps must lie in [0, 1], got {}", self.s_eps)));
        }
        if !(self.compactness > 0.0) {
            return Err(config_error("compactness must be positive"));
        }
        if !(self.dbscan_eps > 0.0) {
            return Err(config_error("dbscan_eps must be positive"));
        }
        if !(self.canny.sigma > 0.0) || !(self.canny.low >= 0.0) || self.canny.low >= self.canny.high {
            return Err(config_error("canny needs sigma > 0 and 0 <= low < high"));
        }
        if let Some(ProviderConfig::Http { timeout_secs, .. }) = &self.provider {
            if !(*timeout_secs > 0.0 && timeout_secs.is_finite()) {
                return Err(config_error("provider timeout must be positive"));
            }
        }
        self.solver.validate().map_err(|e| config_error(e.to_string()))
    }
}
