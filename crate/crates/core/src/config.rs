//! Pipeline settings as TOML. Lengths carry their unit in the field name.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agglomerate::{AgglomerationMode, CELL_SIZE_FINE};
use crate::detect::{DetectorConfig, Pipeline, TestPoints};
use crate::eval::IcpParams;
use crate::saliency::Keep;
use crate::tensor::{BisectorParams, BuildParams, SamplingScheme, WeightRule, DEFAULT_KEYPOINTS, ORIENTATIONS};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("{field}: {msg}")]
    Invalid { field: &'static str, msg: String },
}

fn invalid(field: &'static str, msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { field, msg: msg.into() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BuildSection {
    pub keypoints_per_orientation: usize,
    /// fixed at 8; present so configs state it
    pub orientations: u8,
    pub tensor_samples: usize,
    pub sampling_scheme: SamplingScheme,
    pub weight_rule: WeightRule,
    pub contact_bound_m: f64,
    pub bisector_tolerance_m: f64,
    pub bisector_max_iterations: usize,
    pub bisector_attempts_per_sample: usize,
    /// fraction of the seed pair gap
    pub bisector_jitter: f64,
    pub seed: u64,
}

impl Default for BuildSection {
    fn default() -> Self {
        let p = BuildParams::default();
        Self {
            keypoints_per_orientation: DEFAULT_KEYPOINTS,
            orientations: ORIENTATIONS,
            tensor_samples: p.tensor_samples,
            sampling_scheme: p.scheme,
            weight_rule: p.weight_rule,
            contact_bound_m: p.contact_bound,
            bisector_tolerance_m: p.bisector.tolerance,
            bisector_max_iterations: p.bisector.max_iterations,
            bisector_attempts_per_sample: p.bisector.attempts_per_sample,
            bisector_jitter: p.bisector.jitter,
            seed: p.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgglomerateSection {
    pub cell_size_m: f64,
    pub mode: AgglomerationMode,
}

impl Default for AgglomerateSection {
    fn default() -> Self {
        Self {
            cell_size_m: CELL_SIZE_FINE,
            mode: AgglomerationMode::Closest,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SaliencySection {
    pub keep: Keep,
    /// add activation weights instead of counting projections
    pub weighted: bool,
    /// prune each single-affordance descriptor before agglomerating
    pub per_affordance: bool,
    /// share of voted scene points kept by the geometric fallback
    pub fallback_top_fraction: f64,
}

impl Default for SaliencySection {
    fn default() -> Self {
        Self {
            keep: Keep::default(),
            weighted: false,
            per_affordance: false,
            fallback_top_fraction: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectSection {
    pub pipeline: Pipeline,
    /// overrides the pipeline's threshold
    pub threshold: Option<f64>,
    pub test_points: TestPoints,
    pub search_half_width_m: Option<f64>,
    pub seed: u64,
}

impl Default for DetectSection {
    fn default() -> Self {
        let d = DetectorConfig::default();
        Self {
            pipeline: Pipeline::Agglomeration,
            threshold: None,
            test_points: d.test_points,
            search_half_width_m: d.search_half_width,
            seed: d.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// defaults to the cell size
    pub match_radius_m: Option<f64>,
    pub bt_tolerance: f64,
    pub bt_max_iterations: usize,
    pub icp_max_iterations: usize,
    pub icp_tolerance_m: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        let icp = IcpParams::default();
        Self {
            match_radius_m: None,
            bt_tolerance: 1e-9,
            bt_max_iterations: 10_000,
            icp_max_iterations: icp.max_iterations,
            icp_tolerance_m: icp.tolerance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub build: BuildSection,
    pub agglomerate: AgglomerateSection,
    pub saliency: SaliencySection,
    pub detect: DetectSection,
    pub eval: EvalSection,
}

fn positive(field: &'static str, v: f64) -> Result<(), ConfigError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(invalid(field, format!("must be positive, got {v}")))
    }
}

fn unit_interval(field: &'static str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 && v <= 1.0 {
        Ok(())
    } else {
        Err(invalid(field, format!("must be in (0, 1], got {v}")))
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let c: Self = toml::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let b = &self.build;
        if b.keypoints_per_orientation == 0 {
            return Err(invalid("build.keypoints_per_orientation", "must be at least 1"));
        }
        if b.orientations != ORIENTATIONS {
            return Err(invalid("build.orientations", format!("only {ORIENTATIONS} is supported")));
        }
        if b.tensor_samples == 0 {
            return Err(invalid("build.tensor_samples", "must be at least 1"));
        }
        if let WeightRule::Saturating { scale_m } = b.weight_rule {
            positive("build.weight_rule.scale_m", scale_m)?;
        }
        positive("build.contact_bound_m", b.contact_bound_m)?;
        positive("build.bisector_tolerance_m", b.bisector_tolerance_m)?;
        if b.bisector_max_iterations == 0 || b.bisector_attempts_per_sample == 0 {
            return Err(invalid("build.bisector_*", "iteration and attempt budgets must be at least 1"));
        }
        if !(0.0..=1.0).contains(&b.bisector_jitter) {
            return Err(invalid("build.bisector_jitter", "must be in [0, 1]"));
        }
        positive("agglomerate.cell_size_m", self.agglomerate.cell_size_m)?;
        match self.saliency.keep {
            Keep::Count(0) => return Err(invalid("saliency.keep", "count must be at least 1")),
            Keep::Fraction(f) | Keep::Mass(f) => unit_interval("saliency.keep", f)?,
            Keep::Count(_) => {}
        }
        unit_interval("saliency.fallback_top_fraction", self.saliency.fallback_top_fraction)?;
        let d = &self.detect;
        if let Some(t) = d.threshold {
            if !(0.0..=1.0).contains(&t) {
                return Err(invalid("detect.threshold", format!("must be in [0, 1], got {t}")));
            }
        }
        match d.test_points {
            TestPoints::Count(0) => return Err(invalid("detect.test_points", "count must be at least 1")),
            TestPoints::PerSquareMeter(v) => positive("detect.test_points", v)?,
            TestPoints::Count(_) => {}
        }
        if let Some(h) = d.search_half_width_m {
            positive("detect.search_half_width_m", h)?;
        }
        if let Some(r) = self.eval.match_radius_m {
            positive("eval.match_radius_m", r)?;
        }
        positive("eval.bt_tolerance", self.eval.bt_tolerance)?;
        positive("eval.icp_tolerance_m", self.eval.icp_tolerance_m)?;
        Ok(())
    }

    pub fn build_params(&self) -> BuildParams {
        let b = &self.build;
        BuildParams {
            keypoints_per_orientation: b.keypoints_per_orientation,
            tensor_samples: b.tensor_samples,
            bisector: BisectorParams {
                tolerance: b.bisector_tolerance_m,
                max_iterations: b.bisector_max_iterations,
                attempts_per_sample: b.bisector_attempts_per_sample,
                jitter: b.bisector_jitter,
            },
            scheme: b.sampling_scheme,
            weight_rule: b.weight_rule,
            contact_bound: b.contact_bound_m,
            seed: b.seed,
        }
    }

    pub fn detector_config(&self) -> DetectorConfig {
        let d = &self.detect;
        DetectorConfig {
            threshold: d.threshold.unwrap_or(d.pipeline.default_threshold()),
            test_points: d.test_points,
            search_half_width: d.search_half_width_m,
            seed: d.seed,
        }
    }

    pub fn icp_params(&self) -> IcpParams {
        IcpParams {
            max_iterations: self.eval.icp_max_iterations,
            tolerance: self.eval.icp_tolerance_m,
        }
    }

    pub fn match_radius(&self) -> f64 {
        self.eval.match_radius_m.unwrap_or(self.agglomerate.cell_size_m)
    }
}
