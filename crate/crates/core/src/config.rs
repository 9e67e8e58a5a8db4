//! Generation configuration.
//!
//! The on-disk format is JSON. Every key is optional; missing keys take the
//! default profile below, unknown keys are rejected. The defaults reproduce
//! the reference setup: hidden dimension 2, 1000 noiseless pre-samples, 10% of
//! values perturbed with noise std 0.1, category counts from Normal(4, 2),
//! coupling-key cardinality from Normal(100, 50), 100,000 main rows and 500
//! additional rows.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::PoolingKind;
use crate::scm::{Activation, NoiseConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerationConfig {
    pub master_seed: u64,
    pub hidden_dim: usize,
    pub main_graph: GraphParams,
    pub add_graph: GraphParams,
    pub root_distributions: RootFamilyConfig,
    pub activations: Vec<Activation>,
    /// Continuous pooling choices; categorical pooling is governed by
    /// `categorical_probability`.
    pub poolings: Vec<PoolingKind>,
    pub categorical_probability: f64,
    pub category_count: CountDistribution,
    pub coupling_category_count: CountDistribution,
    pub noise: NoiseConfig,
    pub num_presamples: usize,
    pub quantiles: QuantileConfig,
    pub kmeans: KMeansConfig,
    pub rows_main: usize,
    pub rows_add: usize,
    pub latent_count: usize,
    pub output_dir: PathBuf,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            master_seed: 0,
            hidden_dim: 2,
            main_graph: GraphParams::default(),
            add_graph: GraphParams::default(),
            root_distributions: RootFamilyConfig::default(),
            activations: Activation::ALL.to_vec(),
            poolings: PoolingKind::CONTINUOUS.to_vec(),
            categorical_probability: 0.4,
            category_count: CountDistribution { mean: 4.0, std: 2.0 },
            coupling_category_count: CountDistribution { mean: 100.0, std: 50.0 },
            noise: NoiseConfig::default(),
            num_presamples: 1000,
            quantiles: QuantileConfig::default(),
            kmeans: KMeansConfig::default(),
            rows_main: 100_000,
            rows_add: 500,
            latent_count: 2,
            output_dir: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GraphParams {
    pub min_nodes: usize,
    pub max_nodes: usize,
    pub attach_m: usize,
    /// Resampling budget when a draw degenerates.
    pub max_attempts: usize,
}

impl Default for GraphParams {
    fn default() -> Self {
        GraphParams {
            min_nodes: 6,
            max_nodes: 12,
            attach_m: 2,
            max_attempts: 16,
        }
    }
}

impl GraphParams {
    pub fn fixed(num_nodes: usize, attach_m: usize) -> Self {
        GraphParams {
            min_nodes: num_nodes,
            max_nodes: num_nodes,
            attach_m,
            ..Default::default()
        }
    }

    fn validate(&self, key: &str) -> Result<()> {
        if self.min_nodes < 3 {
            return Err(Error::config(format!("{key}.min_nodes"), "must be >= 3"));
        }
        if self.max_nodes < self.min_nodes {
            return Err(Error::config(format!("{key}.max_nodes"), "must be >= min_nodes"));
        }
        if self.attach_m == 0 || self.attach_m >= self.min_nodes {
            return Err(Error::config(
                format!("{key}.attach_m"),
                "must satisfy 1 <= attach_m < min_nodes",
            ));
        }
        if self.max_attempts == 0 {
            return Err(Error::config(format!("{key}.max_attempts"), "must be >= 1"));
        }
        Ok(())
    }
}

/// Which root families are drawn, with what relative weight, and the uniform
/// ranges their parameters come from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RootFamilyConfig {
    pub normal_weight: f64,
    pub gamma_weight: f64,
    pub mixture_weight: f64,
    pub normal_mean: [f64; 2],
    pub normal_std: [f64; 2],
    pub gamma_shape: [f64; 2],
    pub gamma_scale: [f64; 2],
    pub mixture_p: [f64; 2],
    pub mixture_normal_std: [f64; 2],
    pub mixture_exp_scale: [f64; 2],
}

impl Default for RootFamilyConfig {
    fn default() -> Self {
        RootFamilyConfig {
            normal_weight: 1.0,
            gamma_weight: 1.0,
            mixture_weight: 1.0,
            normal_mean: [-1.0, 1.0],
            normal_std: [0.5, 1.5],
            gamma_shape: [1.0, 4.0],
            gamma_scale: [0.5, 2.0],
            mixture_p: [0.3, 0.7],
            mixture_normal_std: [1.0, 1.0],
            mixture_exp_scale: [0.3, 1.5],
        }
    }
}

impl RootFamilyConfig {
    fn validate(&self) -> Result<()> {
        let k = "root_distributions";
        for (name, w) in [
            ("normal_weight", self.normal_weight),
            ("gamma_weight", self.gamma_weight),
            ("mixture_weight", self.mixture_weight),
        ] {
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::config(format!("{k}.{name}"), "must be finite and >= 0"));
            }
        }
        if self.normal_weight + self.gamma_weight + self.mixture_weight <= 0.0 {
            return Err(Error::config(k, "at least one family weight must be positive"));
        }
        let ranges = [
            ("normal_mean", self.normal_mean, f64::NEG_INFINITY),
            ("normal_std", self.normal_std, 0.0),
            ("gamma_shape", self.gamma_shape, 0.0),
            ("gamma_scale", self.gamma_scale, 0.0),
            ("mixture_normal_std", self.mixture_normal_std, 0.0),
            ("mixture_exp_scale", self.mixture_exp_scale, 0.0),
        ];
        for (name, [lo, hi], floor) in ranges {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi && lo > floor) {
                return Err(Error::config(
                    format!("{k}.{name}"),
                    format!("expected finite [lo, hi] with lo <= hi and lo > {floor}"),
                ));
            }
        }
        let [plo, phi] = self.mixture_p;
        if !(0.0 <= plo && plo <= phi && phi <= 1.0) {
            return Err(Error::config(format!("{k}.mixture_p"), "expected 0 <= lo <= hi <= 1"));
        }
        Ok(())
    }
}

/// A count drawn as `round(Normal(mean, std))`, clamped to at least 2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CountDistribution {
    pub mean: f64,
    pub std: f64,
}

impl CountDistribution {
    fn validate(&self, key: &str) -> Result<()> {
        if !(self.mean.is_finite() && self.std.is_finite() && self.std >= 0.0) {
            return Err(Error::config(key, "mean must be finite and std finite and >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuantileConfig {
    pub lo: f64,
    pub hi: f64,
}

impl Default for QuantileConfig {
    fn default() -> Self {
        QuantileConfig { lo: 0.1, hi: 0.9 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KMeansConfig {
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        KMeansConfig {
            tolerance: 1e-8,
            max_iterations: 100,
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 {
            return Err(Error::config("hidden_dim", "must be >= 1"));
        }
        self.main_graph.validate("main_graph")?;
        self.add_graph.validate("add_graph")?;
        self.root_distributions.validate()?;
        if self.activations.is_empty() {
            return Err(Error::config("activations", "must not be empty"));
        }
        if self.poolings.is_empty() {
            return Err(Error::config("poolings", "must not be empty"));
        }
        if self.poolings.contains(&PoolingKind::Categorical) {
            return Err(Error::config(
                "poolings",
                "categorical pooling is controlled by categorical_probability",
            ));
        }
        if !(0.0..=1.0).contains(&self.categorical_probability) {
            return Err(Error::config("categorical_probability", "must lie in [0, 1]"));
        }
        self.category_count.validate("category_count")?;
        self.coupling_category_count.validate("coupling_category_count")?;
        self.noise.validate()?;
        if self.num_presamples < 2 {
            return Err(Error::config("num_presamples", "must be >= 2"));
        }
        let QuantileConfig { lo, hi } = self.quantiles;
        if !(0.0 <= lo && lo < hi && hi <= 1.0) {
            return Err(Error::config("quantiles", "expected 0 <= lo < hi <= 1"));
        }
        if !(self.kmeans.tolerance.is_finite() && self.kmeans.tolerance >= 0.0) {
            return Err(Error::config("kmeans.tolerance", "must be finite and >= 0"));
        }
        if self.kmeans.max_iterations == 0 {
            return Err(Error::config("kmeans.max_iterations", "must be >= 1"));
        }
        Ok(())
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let text = if text.trim().is_empty() { "{}" } else { text };
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: GenerationConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let key = e.path().to_string();
            Error::config(key, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

pub fn load_config(path: &Path) -> Result<GenerationConfig> {
    let text = std::fs::read_to_string(path)?;
    GenerationConfig::from_json_str(&text)
}
