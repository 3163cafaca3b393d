use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use stochloc::gaussian::TestFunctional;
use stochloc::linalg::ComplexVec;
use stochloc::localization::{default_horizon, DEFAULT_RANK_TOL, DEFAULT_STEP};
use stochloc::variety::{PolynomialMap, PolynomialMapJson};

use crate::error::CliError;

/// Experiment parameters. Everything except `map` is optional and falls back
/// to a per-command default; command-line flags override the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub map: PolynomialMapJson,
    #[serde(rename = "T", default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_paths: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_grid: Option<Vec<f64>>,
    #[serde(rename = "N", default, skip_serializing_if = "Option::is_none")]
    pub n_samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Diagonal weights of a circled norm; Euclidean when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank_tol: Option<f64>,
    /// Distance from the origin to the fiber, when known in closed form.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record_every: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub functionals: Option<Vec<TestFunctional>>,
    /// Evaluation points for the density martingale, as lists of `[re, im]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<Vec<Vec<[f64; 2]>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tilt_instances: Option<usize>,
}

/// A parsed config with a validated map.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub map: PolynomialMap,
}

fn config_error(path: impl Into<String>, message: impl Into<String>) -> CliError {
    CliError::Config { path: path.into(), message: message.into() }
}

fn positive(path: &str, x: Option<f64>) -> Result<(), CliError> {
    match x {
        Some(v) if !(v > 0.0 && v.is_finite()) => Err(config_error(path, format!("must be finite and positive, got {v}"))),
        _ => Ok(()),
    }
}

impl ExperimentConfig {
    pub fn from_json_str(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| config_error("config", e.to_string()))
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Checks every field and builds the map.
    pub fn validate(self) -> Result<Experiment, CliError> {
        let map = PolynomialMap::from_json(&self.map).map_err(|e| match e {
            stochloc::Error::Validation { path, message } => config_error(format!("map.{path}"), message),
            other => config_error("map", other.to_string()),
        })?;
        positive("T", self.horizon)?;
        positive("h", self.h)?;
        positive("rank_tol", self.rank_tol)?;
        if let Some(grid) = &self.r_grid {
            if grid.is_empty() {
                return Err(config_error("r_grid", "at least one radius is required"));
            }
            for (i, r) in grid.iter().enumerate() {
                if !(*r >= 0.0 && r.is_finite()) {
                    return Err(config_error(format!("r_grid[{i}]"), format!("must be finite and >= 0, got {r}")));
                }
                if i > 0 && !(grid[i - 1] < *r) {
                    return Err(config_error(format!("r_grid[{i}]"), "radii must be strictly increasing"));
                }
            }
        }
        if self.n_samples == Some(0) {
            return Err(config_error("N", "sample count must be at least 1"));
        }
        if self.n_paths == Some(0) {
            return Err(config_error("n_paths", "path count must be at least 1"));
        }
        if let Some(w) = &self.weights {
            if w.len() != map.ambient_dim() {
                return Err(config_error("weights", format!("expected {} weights, got {}", map.ambient_dim(), w.len())));
            }
            for (j, x) in w.iter().enumerate() {
                if !(*x > 0.0 && x.is_finite()) {
                    return Err(config_error(format!("weights[{j}]"), format!("must be finite and positive, got {x}")));
                }
            }
        }
        if let Some(d) = self.distance {
            if !(d >= 0.0 && d.is_finite()) {
                return Err(config_error("distance", format!("must be finite and >= 0, got {d}")));
            }
        }
        if let Some(points) = &self.points {
            for (i, p) in points.iter().enumerate() {
                if p.len() != map.ambient_dim() {
                    return Err(config_error(format!("points[{i}]"), format!("expected {} coordinates", map.ambient_dim())));
                }
            }
        }
        Ok(Experiment { config: self, map })
    }

    /// SHA-256 of the canonical JSON form.
    pub fn sha256(&self) -> String {
        let digest = Sha256::digest(serde_json::to_vec(self).expect("config serializes"));
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

impl Experiment {
    pub fn seed(&self) -> u64 {
        self.config.seed.unwrap_or(0)
    }

    pub fn horizon(&self) -> f64 {
        self.config.horizon.unwrap_or_else(|| default_horizon(self.map.ambient_dim(), self.map.codim()))
    }

    pub fn step(&self) -> f64 {
        self.config.h.unwrap_or(DEFAULT_STEP)
    }

    pub fn n_paths(&self) -> usize {
        self.config.n_paths.unwrap_or(100)
    }

    pub fn n_samples(&self) -> usize {
        self.config.n_samples.unwrap_or(10_000)
    }

    pub fn r_grid(&self) -> Vec<f64> {
        self.config.r_grid.clone().unwrap_or_else(|| vec![0.5, 1.0, 2.0])
    }

    pub fn rank_tol(&self) -> f64 {
        self.config.rank_tol.unwrap_or(DEFAULT_RANK_TOL)
    }

    pub fn record_every(&self) -> usize {
        self.config.record_every.unwrap_or(1)
    }

    pub fn functionals(&self) -> Vec<TestFunctional> {
        self.config.functionals.clone().unwrap_or_else(|| {
            vec![
                TestFunctional::One,
                TestFunctional::SquaredNorm,
                TestFunctional::coordinate_half_space(self.map.ambient_dim(), 0),
            ]
        })
    }

    pub fn points(&self) -> Vec<ComplexVec> {
        self.config
            .points
            .as_ref()
            .map(|ps| {
                ps.iter()
                    .map(|p| ComplexVec::from_iterator(p.len(), p.iter().map(|c| num_complex::Complex64::new(c[0], c[1]))))
                    .collect()
            })
            .unwrap_or_default()
    }
}
