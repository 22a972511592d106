use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::Disturbance;
use crate::control::{ControllerConfig, ControllerMode, SpiralParams};
use crate::geometry::InsertionOptions;
use crate::world::{CompliancePreset, ComplianceConfig, DisturbanceKind, MAX_ARM_BIAS};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid `{field}`: {message}")]
    Field { field: String, message: String },
    #[error("unknown object {0:?}")]
    UnknownObject(String),
    #[error("{0}")]
    Io(String),
}

impl ConfigError {
    pub fn field(field: &str, message: impl Into<String>) -> Self {
        ConfigError::Field { field: field.to_string(), message: message.into() }
    }
}

/// Tracker noise setting.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseLevel {
    None,
    N5,
    N10,
}

impl NoiseLevel {
    pub const ALL: [NoiseLevel; 3] = [NoiseLevel::None, NoiseLevel::N5, NoiseLevel::N10];

    pub fn name(&self) -> &'static str {
        match self {
            NoiseLevel::None => "none",
            NoiseLevel::N5 => "n5",
            NoiseLevel::N10 => "n10",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|n| n.name() == s)
    }

    /// (translation mm, rotation deg) per-axis bounds.
    pub fn bounds(&self) -> (f64, f64) {
        match self {
            NoiseLevel::None => (0.0, 0.0),
            NoiseLevel::N5 => (5.0, 5.0),
            NoiseLevel::N10 => (10.0, 10.0),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Csv,
    Markdown,
}

impl OutputFormat {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "csv" => Some(Self::Csv),
            "markdown" | "md" => Some(Self::Markdown),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Csv => "csv",
            Self::Markdown => "markdown",
        }
    }

    pub fn extension(&self) -> &'static str {
        match self {
            Self::Csv => "csv",
            Self::Markdown => "md",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub name: String,
    pub object: String,
    pub trials: usize,
    pub seed: u64,
    pub mode: ControllerMode,
    pub compliance: CompliancePreset,
    pub noise: NoiseLevel,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            name: "default".into(),
            object: "large_circle".into(),
            trials: 12,
            seed: 0,
            mode: ControllerMode::Full,
            compliance: CompliancePreset::Compliant,
            noise: NoiseLevel::None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldSection {
    pub clearance: f64,
    pub hole_depth: f64,
    pub k_c: f64,
    pub k_arm: f64,
    pub hole_spring: f64,
    pub mu: f64,
    pub arm_bias_radius: f64,
    pub arm_noise: f64,
    /// Largest hand-to-grasp-pose offset the closing fingers recover (mm).
    pub grasp_capture: f64,
    /// Residual in-hand tilt after grasping (deg).
    pub grasp_tilt_deg: f64,
}

impl Default for WorldSection {
    fn default() -> Self {
        let c = ComplianceConfig::default();
        Self {
            clearance: 0.25,
            hole_depth: 20.0,
            k_c: c.k_c,
            k_arm: c.k_arm,
            hole_spring: c.hole_spring,
            mu: c.mu,
            arm_bias_radius: MAX_ARM_BIAS,
            arm_noise: 0.5,
            grasp_capture: 45.0,
            grasp_tilt_deg: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerSection {
    pub gamma: f64,
    pub sigma: f64,
    pub beta_f_fraction: f64,
    pub overshoot: f64,
    pub beta0_deg: Option<f64>,
    pub max_rate: f64,
    pub gain: f64,
    pub approach_clearance: f64,
    pub press_limit: f64,
    pub looks: usize,
    pub spiral_amplitude_deg: f64,
    pub spiral_pitch_deg: f64,
    pub descent_rate: f64,
    pub spiral_max_ticks: usize,
    pub ticks_per_rev: usize,
}

impl Default for ControllerSection {
    fn default() -> Self {
        let o = InsertionOptions::default();
        let c = ControllerConfig::default();
        let s = SpiralParams::default();
        Self {
            gamma: o.gamma,
            sigma: o.sigma,
            beta_f_fraction: o.beta_f_fraction,
            overshoot: o.overshoot,
            beta0_deg: None,
            max_rate: c.max_rate,
            gain: c.gain,
            approach_clearance: c.approach_clearance,
            press_limit: c.press_limit,
            looks: c.looks,
            spiral_amplitude_deg: s.amplitude.to_degrees(),
            spiral_pitch_deg: s.pitch.to_degrees(),
            descent_rate: s.descent_rate,
            spiral_max_ticks: s.max_ticks,
            ticks_per_rev: s.ticks_per_rev,
        }
    }
}

impl ControllerSection {
    pub fn insertion_options(&self) -> InsertionOptions {
        InsertionOptions {
            overshoot: self.overshoot,
            beta_f_fraction: self.beta_f_fraction,
            gamma: self.gamma,
            sigma: self.sigma,
            beta0_override: self.beta0_deg.map(f64::to_radians),
        }
    }

    pub fn controller_config(&self, mode: ControllerMode) -> ControllerConfig {
        ControllerConfig {
            mode,
            spiral: SpiralParams {
                amplitude: self.spiral_amplitude_deg.to_radians(),
                pitch: self.spiral_pitch_deg.to_radians(),
                descent_rate: self.descent_rate,
                max_ticks: self.spiral_max_ticks,
                ticks_per_rev: self.ticks_per_rev,
            },
            max_rate: self.max_rate,
            gain: self.gain,
            approach_clearance: self.approach_clearance,
            press_limit: self.press_limit,
            looks: self.looks,
            ..ControllerConfig::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    /// Fitted model file; when absent a model is generated and fitted.
    pub path: Option<PathBuf>,
    pub transitions: usize,
    pub triangles: usize,
    pub seed: u64,
    pub epochs: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self { path: None, transitions: 20_000, triangles: 12, seed: 0, epochs: 60 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub out_dir: PathBuf,
    pub format: OutputFormat,
    /// Write a trace file per trial.
    pub traces: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { out_dir: PathBuf::from("out"), format: OutputFormat::Csv, traces: false }
    }
}

/// Lists crossed by `ablate`; empty lists keep the experiment's value.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationSection {
    pub objects: Vec<String>,
    pub modes: Vec<String>,
    pub compliance: Vec<String>,
    pub noise: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub world: WorldSection,
    pub controller: ControllerSection,
    pub model: ModelSection,
    pub output: OutputSection,
    pub ablation: AblationSection,
    pub disturbances: Vec<Disturbance>,
}

fn positive(field: &str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(ConfigError::field(field, format!("must be positive, got {v}")))
    }
}

fn non_negative(field: &str, v: f64) -> Result<(), ConfigError> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(ConfigError::field(field, format!("must be non-negative, got {v}")))
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn compliance(&self) -> ComplianceConfig {
        let w = &self.world;
        ComplianceConfig {
            k_c: w.k_c,
            k_arm: w.k_arm,
            hole_spring: w.hole_spring,
            mu: w.mu,
            ..self.experiment.compliance.config()
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let e = &self.experiment;
        if e.trials == 0 {
            return Err(ConfigError::field("experiment.trials", "must be at least 1"));
        }
        if e.object.trim().is_empty() {
            return Err(ConfigError::field("experiment.object", "must not be empty"));
        }
        let w = &self.world;
        positive("world.clearance", w.clearance)?;
        positive("world.hole_depth", w.hole_depth)?;
        positive("world.k_c", w.k_c)?;
        positive("world.k_arm", w.k_arm)?;
        positive("world.hole_spring", w.hole_spring)?;
        non_negative("world.mu", w.mu)?;
        non_negative("world.arm_noise", w.arm_noise)?;
        non_negative("world.grasp_capture", w.grasp_capture)?;
        non_negative("world.grasp_tilt_deg", w.grasp_tilt_deg)?;
        if !(0.0..=MAX_ARM_BIAS).contains(&w.arm_bias_radius) {
            return Err(ConfigError::field("world.arm_bias_radius", format!("must lie in [0, {MAX_ARM_BIAS}] mm")));
        }
        let c = &self.controller;
        positive("controller.gamma", c.gamma)?;
        positive("controller.sigma", c.sigma)?;
        positive("controller.max_rate", c.max_rate)?;
        positive("controller.gain", c.gain)?;
        positive("controller.descent_rate", c.descent_rate)?;
        positive("controller.spiral_pitch_deg", c.spiral_pitch_deg)?;
        non_negative("controller.spiral_amplitude_deg", c.spiral_amplitude_deg)?;
        non_negative("controller.overshoot", c.overshoot)?;
        non_negative("controller.approach_clearance", c.approach_clearance)?;
        positive("controller.press_limit", c.press_limit)?;
        if !(c.beta_f_fraction > 0.0 && c.beta_f_fraction <= 1.0) {
            return Err(ConfigError::field("controller.beta_f_fraction", "must lie in (0, 1]"));
        }
        if c.looks == 0 {
            return Err(ConfigError::field("controller.looks", "must be at least 1"));
        }
        if c.spiral_max_ticks == 0 || c.ticks_per_rev == 0 {
            return Err(ConfigError::field("controller.spiral_max_ticks", "spiral tick counts must be positive"));
        }
        if let Some(b) = c.beta0_deg {
            if !(b > 0.0 && b < 90.0) {
                return Err(ConfigError::field("controller.beta0_deg", "must lie in (0, 90)"));
            }
        }
        if self.model.path.is_none() && (self.model.transitions == 0 || self.model.triangles == 0 || self.model.epochs == 0) {
            return Err(ConfigError::field("model.transitions", "dataset size, triangles and epochs must be positive"));
        }
        for (i, d) in self.disturbances.iter().enumerate() {
            if DisturbanceKind::parse(&d.kind).is_none() {
                return Err(ConfigError::field(&format!("disturbances[{i}].kind"), format!("unknown kind {:?}", d.kind)));
            }
            if d.magnitude.iter().any(|m| !m.is_finite()) {
                return Err(ConfigError::field(&format!("disturbances[{i}].magnitude"), "must be finite"));
            }
        }
        let a = &self.ablation;
        for m in &a.modes {
            ControllerMode::parse(m).ok_or_else(|| ConfigError::field("ablation.modes", format!("unknown mode {m:?}")))?;
        }
        for c in &a.compliance {
            CompliancePreset::parse(c).ok_or_else(|| ConfigError::field("ablation.compliance", format!("unknown preset {c:?}")))?;
        }
        for n in &a.noise {
            NoiseLevel::parse(n).ok_or_else(|| ConfigError::field("ablation.noise", format!("unknown noise level {n:?}")))?;
        }
        Ok(())
    }

    /// Label used in reports.
    pub fn label(&self) -> String {
        self.experiment.name.clone()
    }

    /// Configs crossed over the ablation lists, or the standard matrix when
    /// every list is empty.
    pub fn ablation_matrix(&self) -> Vec<ExperimentConfig> {
        let a = &self.ablation;
        let standard = a.objects.is_empty() && a.modes.is_empty() && a.compliance.is_empty() && a.noise.is_empty();
        if standard {
            let mut out = Vec::new();
            let base = |name: &str| {
                let mut c = self.clone();
                c.experiment.name = name.to_string();
                c
            };
            out.push(base("baseline"));
            for p in &CompliancePreset::ALL[1..] {
                let mut c = base(p.name());
                c.experiment.compliance = *p;
                out.push(c);
            }
            for m in [ControllerMode::Naive, ControllerMode::OpenLoop] {
                let mut c = base(m.name());
                c.experiment.mode = m;
                out.push(c);
            }
            for n in [NoiseLevel::N5, NoiseLevel::N10] {
                let mut c = base(&format!("noise_{}", n.name()));
                c.experiment.noise = n;
                out.push(c);
            }
            return out;
        }
        let or_self = |v: &Vec<String>, cur: String| if v.is_empty() { vec![cur] } else { v.clone() };
        let e = &self.experiment;
        let mut out = Vec::new();
        for o in or_self(&a.objects, e.object.clone()) {
            for m in or_self(&a.modes, e.mode.name().into()) {
                for c in or_self(&a.compliance, e.compliance.name().into()) {
                    for n in or_self(&a.noise, e.noise.name().into()) {
                        let mut cfg = self.clone();
                        cfg.experiment.object = o.clone();
                        cfg.experiment.mode = ControllerMode::parse(&m).unwrap_or(e.mode);
                        cfg.experiment.compliance = CompliancePreset::parse(&c).unwrap_or(e.compliance);
                        cfg.experiment.noise = NoiseLevel::parse(&n).unwrap_or(e.noise);
                        cfg.experiment.name = format!("{o}/{m}/{c}/{n}");
                        out.push(cfg);
                    }
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_roundtrip_through_toml() {
        let c = ExperimentConfig::default();
        let back = ExperimentConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn sections_parse() {
        let c = ExperimentConfig::from_toml(
            r#"
            [experiment]
            object = "pear"
            trials = 3
            mode = "naive"
            compliance = "all_rigid"
            noise = "n5"
            [world]
            mu = 0.5
            [[disturbances]]
            tick = 4
            phase = "translate"
            kind = "move_hole"
            magnitude = [30.0, 0.0, 0.0]
            "#,
        )
        .unwrap();
        assert_eq!(c.experiment.mode, ControllerMode::Naive);
        assert_eq!(c.experiment.compliance, CompliancePreset::AllRigid);
        assert_eq!(c.experiment.noise, NoiseLevel::N5);
        assert_eq!(c.world.mu, 0.5);
        assert_eq!(c.disturbances.len(), 1);
        assert!(!c.compliance().any_compliant());
    }

    #[test]
    fn errors_name_the_field() {
        let err = |t: &str| ExperimentConfig::from_toml(t).unwrap_err().to_string();
        assert!(err("[experiment]\ntrials = 0").contains("experiment.trials"));
        assert!(err("[world]\nclearance = -1.0").contains("world.clearance"));
        assert!(err("[experiment]\nmode = \"fast\"").contains("fast"));
        assert!(err("[world]\nbogus = 1").contains("bogus"));
        assert!(err("[[disturbances]]\ntick = 1\nkind = \"quake\"\nmagnitude = [0.0, 0.0, 0.0]").contains("disturbances[0].kind"));
        assert!(err("[world]\narm_bias_radius = 30.0").contains("world.arm_bias_radius"));
    }

    #[test]
    fn standard_ablation_matrix() {
        let m = ExperimentConfig::default().ablation_matrix();
        assert_eq!(m.len(), 8);
        let mut c = ExperimentConfig::default();
        c.ablation.modes = vec!["full".into(), "naive".into()];
        c.ablation.noise = vec!["none".into(), "n5".into(), "n10".into()];
        assert_eq!(c.ablation_matrix().len(), 6);
    }
}
