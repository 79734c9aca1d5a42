//! Run configuration, schema version 1.
//!
//! Lengths are in mm and angles in degrees; conversion to radians happens
//! in [`RunConfig::arm`] and [`RunConfig::sigma_q_rad`].

use std::path::{Path, PathBuf};

use jointspace::arm::{ArmGeometry, EXPERIMENT_PORT};
use jointspace::evaluation::DEFAULT_EVAL_SAMPLES;
use jointspace::obstacle_map::{Coverage, GridSpec};
use jointspace::planner::plan::{DEFAULT_ROADMAP_SIZE, DEFAULT_SAMPLES_PER_INTERVAL};
use jointspace::planner::PlannerParams;
use jointspace::scene::{
    make_cholecystectomy_scene, make_hemisphere_scene_with, ImplicitSurface, Scene, Shape, DEFAULT_BOUNDARY_SAMPLES,
};
use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

/// Grid resolution used when none is configured.
pub const DEFAULT_GRID: usize = 30;

pub const EXPERIMENT_START: [f64; 3] = [705.0, -26.0, -330.0];
pub const EXPERIMENT_GOAL: [f64; 3] = [656.0, -26.0, -378.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    #[serde(default)]
    pub scene: SceneSpec,
    #[serde(default)]
    pub arm: ArmOverrides,
    /// Joint-space roadmap size.
    #[serde(default = "default_roadmap")]
    pub n_joint: usize,
    /// Position-space roadmap size.
    #[serde(default = "default_roadmap")]
    pub n_position: usize,
    /// Position-space boundary samples for nearest-point queries.
    #[serde(default = "default_boundary")]
    pub n_boundary: usize,
    #[serde(default)]
    pub grid: GridConfig,
    /// Grid directions whose boundary point has no in-limit IK are dropped
    /// by default.
    #[serde(default = "default_coverage")]
    pub coverage: Coverage,
    #[serde(default = "default_sigma_x")]
    pub sigma_x: f64,
    /// Joint-space buffer in degrees; absent means calibrated from `sigma_x`.
    #[serde(default)]
    pub sigma_q_deg: Option<f64>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_start")]
    pub start: [f64; 3],
    #[serde(default = "default_goal")]
    pub goal: [f64; 3],
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Exported samples per spline interval.
    #[serde(default = "default_samples_per_interval")]
    pub samples_per_interval: usize,
    /// Evaluation steps per spline interval.
    #[serde(default = "default_eval_samples")]
    pub eval_samples: usize,
}

fn default_roadmap() -> usize {
    DEFAULT_ROADMAP_SIZE
}
fn default_boundary() -> usize {
    DEFAULT_BOUNDARY_SAMPLES
}
fn default_coverage() -> Coverage {
    Coverage::ReachableOnly
}
fn default_sigma_x() -> f64 {
    5.0
}
fn default_seeds() -> Vec<u64> {
    (0..10).collect()
}
fn default_start() -> [f64; 3] {
    EXPERIMENT_START
}
fn default_goal() -> [f64; 3] {
    EXPERIMENT_GOAL
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}
fn default_samples_per_interval() -> usize {
    DEFAULT_SAMPLES_PER_INTERVAL
}
fn default_eval_samples() -> usize {
    DEFAULT_EVAL_SAMPLES
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            version: SCHEMA_VERSION,
            scene: SceneSpec::default(),
            arm: ArmOverrides::default(),
            n_joint: default_roadmap(),
            n_position: default_roadmap(),
            n_boundary: default_boundary(),
            grid: GridConfig::default(),
            coverage: default_coverage(),
            sigma_x: default_sigma_x(),
            sigma_q_deg: None,
            seeds: default_seeds(),
            start: default_start(),
            goal: default_goal(),
            output_dir: default_output_dir(),
            samples_per_interval: default_samples_per_interval(),
            eval_samples: default_eval_samples(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum SceneSpec {
    Hemisphere {
        /// Forceps length `L`, mm.
        #[serde(default = "default_length")]
        length: f64,
        /// Cavity radius as a fraction of `L`.
        #[serde(default = "default_k")]
        k: f64,
        #[serde(default = "default_port")]
        port: [f64; 3],
        /// Height of the cap centre above the port, mm.
        #[serde(default)]
        cap_offset: f64,
    },
    Cholecystectomy,
    Primitives {
        #[serde(default = "default_name")]
        name: String,
        port: [f64; 3],
        cavity: Primitive,
        #[serde(default)]
        organs: Vec<Primitive>,
        /// Bounds ray marching; usually the forceps length, mm.
        #[serde(default = "default_length")]
        length_scale: f64,
    },
}

fn default_length() -> f64 {
    500.0
}
fn default_k() -> f64 {
    0.5
}
fn default_port() -> [f64; 3] {
    EXPERIMENT_PORT
}
fn default_name() -> String {
    "custom".into()
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self::Hemisphere {
            length: default_length(),
            k: default_k(),
            port: default_port(),
            cap_offset: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case", deny_unknown_fields)]
pub enum Primitive {
    Sphere {
        center: [f64; 3],
        radius: f64,
    },
    Ellipsoid {
        center: [f64; 3],
        radii: [f64; 3],
    },
    /// Ball whose part below `rim_z` is the cavity wall.
    HemisphericalCavity {
        center: [f64; 3],
        radius: f64,
        rim_z: f64,
    },
}

impl Primitive {
    fn surface(&self) -> ImplicitSurface {
        let shape = match *self {
            Primitive::Sphere { center, radius } => Shape::Sphere {
                center: Point3::from(center),
                radius,
            },
            Primitive::Ellipsoid { center, radii } => Shape::Ellipsoid {
                center: Point3::from(center),
                radii: Vector3::from(radii),
            },
            Primitive::HemisphericalCavity { center, radius, rim_z } => Shape::HemisphericalCavity {
                center: Point3::from(center),
                radius,
                rim_z,
            },
        };
        ImplicitSurface { shape }
    }
}

/// Overrides on top of the default arm placed for the scene's port.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmOverrides {
    pub l2: Option<f64>,
    pub l3: Option<f64>,
    pub d_x: Option<f64>,
    pub d_z: Option<f64>,
    /// Defaults to the scene length scale.
    pub forceps_length: Option<f64>,
    pub limits_deg: Option<[[f64; 2]; 5]>,
    /// Absolute base position, mm.
    pub base: Option<[f64; 3]>,
    pub base_yaw_deg: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub n_theta: usize,
    pub n_phi: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            n_theta: DEFAULT_GRID,
            n_phi: DEFAULT_GRID,
        }
    }
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| config_err(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks everything that can be checked without building the scene.
    pub fn validate(&self) -> Result<(), CliError> {
        if self.version != SCHEMA_VERSION {
            return Err(config_err(format!(
                "unsupported config version {} (expected {SCHEMA_VERSION})",
                self.version
            )));
        }
        for (name, v) in [
            ("n_joint", self.n_joint),
            ("n_position", self.n_position),
            ("n_boundary", self.n_boundary),
            ("samples_per_interval", self.samples_per_interval),
            ("eval_samples", self.eval_samples),
        ] {
            if v == 0 {
                return Err(config_err(format!("{name} must be positive")));
            }
        }
        if self.n_joint < 2 || self.n_position < 2 {
            return Err(config_err("roadmap sizes must hold at least start and goal"));
        }
        GridSpec::new(self.grid.n_theta, self.grid.n_phi).map_err(|e| config_err(e.to_string()))?;
        if !(self.sigma_x.is_finite() && self.sigma_x >= 0.0) {
            return Err(config_err(format!("sigma_x must be >= 0, got {}", self.sigma_x)));
        }
        if let Some(s) = self.sigma_q_deg {
            if !(s.is_finite() && s >= 0.0) {
                return Err(config_err(format!("sigma_q_deg must be >= 0, got {s}")));
            }
        }
        if self.seeds.is_empty() {
            return Err(config_err("seed list is empty"));
        }
        if !self.start.iter().chain(&self.goal).all(|v| v.is_finite()) {
            return Err(config_err("start and goal must be finite"));
        }
        if self.output_dir.as_os_str().is_empty() {
            return Err(config_err("output_dir is empty"));
        }
        Ok(())
    }

    pub fn grid_spec(&self) -> GridSpec {
        GridSpec::new(self.grid.n_theta, self.grid.n_phi).expect("validated grid")
    }

    pub fn scene(&self) -> Result<Scene, CliError> {
        let scene = match &self.scene {
            SceneSpec::Hemisphere {
                length,
                k,
                port,
                cap_offset,
            } => make_hemisphere_scene_with(*length, *k, Point3::from(*port), *cap_offset, self.n_boundary),
            SceneSpec::Cholecystectomy => make_cholecystectomy_scene().and_then(|s| {
                if self.n_boundary == s.boundary_samples().len() {
                    Ok(s)
                } else {
                    Scene::new(s.name, s.port, s.cavity, s.organs, s.length_scale, self.n_boundary)
                }
            }),
            SceneSpec::Primitives {
                name,
                port,
                cavity,
                organs,
                length_scale,
            } => Scene::new(
                name.clone(),
                Point3::from(*port),
                cavity.surface(),
                organs.iter().map(Primitive::surface).collect(),
                *length_scale,
                self.n_boundary,
            ),
        };
        scene.map_err(|e| config_err(format!("scene: {e}")))
    }

    pub fn arm(&self, scene: &Scene) -> Result<ArmGeometry, CliError> {
        let o = &self.arm;
        let mut arm = ArmGeometry::placed_for_port(&scene.port);
        arm.forceps_length = scene.length_scale;
        arm.l2 = o.l2.unwrap_or(arm.l2);
        arm.l3 = o.l3.unwrap_or(arm.l3);
        arm.d_x = o.d_x.unwrap_or(arm.d_x);
        arm.d_z = o.d_z.unwrap_or(arm.d_z);
        arm.forceps_length = o.forceps_length.unwrap_or(arm.forceps_length);
        if let Some(limits) = o.limits_deg {
            for (dst, src) in arm.limits.iter_mut().zip(limits) {
                *dst = [src[0].to_radians(), src[1].to_radians()];
            }
        }
        if let Some(b) = o.base {
            arm.base = Point3::from(b);
        }
        if let Some(y) = o.base_yaw_deg {
            arm.base_yaw = y.to_radians();
        }
        arm.validate().map_err(|e| config_err(format!("arm: {e}")))?;
        Ok(arm)
    }

    pub fn sigma_q_rad(&self) -> Option<f64> {
        self.sigma_q_deg.map(f64::to_radians)
    }

    /// Planner parameters with the given joint-space buffer in radians.
    pub fn planner_params(&self, sigma_q: f64) -> PlannerParams {
        PlannerParams {
            n_joint: self.n_joint,
            n_position: self.n_position,
            sigma_q,
            sigma_x: self.sigma_x,
            samples_per_interval: self.samples_per_interval,
        }
    }

    pub fn start_point(&self) -> Point3<f64> {
        Point3::from(self.start)
    }

    pub fn goal_point(&self) -> Point3<f64> {
        Point3::from(self.goal)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_takes_experiment_defaults() {
        let cfg = RunConfig::from_json(r#"{"version": 1}"#).unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.n_joint, 1000);
        assert_eq!(cfg.n_boundary, 5000);
        assert_eq!(cfg.seeds.len(), 10);
        assert!(cfg.sigma_q_deg.is_none());
    }

    #[test]
    fn round_trips_through_json() {
        let cfg = RunConfig {
            sigma_q_deg: Some(0.842),
            scene: SceneSpec::Primitives {
                name: "ball".into(),
                port: [0.0, 0.0, 0.0],
                cavity: Primitive::Sphere {
                    center: [0.0, 0.0, -100.0],
                    radius: 150.0,
                },
                organs: vec![Primitive::Ellipsoid {
                    center: [0.0, 0.0, -150.0],
                    radii: [20.0, 30.0, 40.0],
                }],
                length_scale: 500.0,
            },
            ..RunConfig::default()
        };
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(RunConfig::from_json(&text).unwrap(), cfg);
    }

    #[test]
    fn rejects_bad_values() {
        for text in [
            r#"{"version": 2}"#,
            r#"{"version": 1, "n_joint": 0}"#,
            r#"{"version": 1, "sigma_x": -1}"#,
            r#"{"version": 1, "sigma_q_deg": -0.1}"#,
            r#"{"version": 1, "seeds": []}"#,
            r#"{"version": 1, "grid": {"n_theta": 0, "n_phi": 4}}"#,
            r#"{"version": 1, "unknown": 3}"#,
            r#"{"version": 1, "scene": {"type": "moon"}}"#,
            "{",
        ] {
            assert!(matches!(RunConfig::from_json(text), Err(CliError::Config(_))), "{text}");
        }
    }

    #[test]
    fn scene_and_arm_overrides() {
        let cfg = RunConfig::from_json(
            r#"{"version": 1, "scene": {"type": "hemisphere", "length": 300}, "n_boundary": 200,
                "arm": {"l2": 350, "base_yaw_deg": -45}}"#,
        )
        .unwrap();
        let scene = cfg.scene().unwrap();
        assert_eq!(scene.boundary_samples().len(), 200);
        let arm = cfg.arm(&scene).unwrap();
        assert_eq!(arm.l2, 350.0);
        assert_eq!(arm.forceps_length, 300.0);
        assert!((arm.base_yaw + std::f64::consts::FRAC_PI_4).abs() < 1e-15);
        let bad = RunConfig::from_json(r#"{"version": 1, "arm": {"l3": -1}}"#).unwrap();
        assert!(matches!(bad.arm(&bad.scene().unwrap()), Err(CliError::Config(_))));
    }
}
