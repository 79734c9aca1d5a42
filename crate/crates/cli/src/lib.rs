//! Batch front end: configuration loading, the `map`, `plan`, `compare` and
//! `calibrate` commands, and atomic artifact output.

pub mod config;

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use jointspace::arm::ArmGeometry;
use jointspace::evaluation::{calibrate_sigma_q, compare, evaluate, Calibration, CompareSetup, MetricsReport};
use jointspace::obstacle_map::{build_segmented, BoundaryMesh};
use jointspace::planner::{plan_joint_space, plan_position_space, Space};
use jointspace::scene::Scene;
use log::info;
use serde_json::json;

pub use config::RunConfig;

/// Reference joint-space buffer, degrees; calibration results are logged
/// against it.
pub const REFERENCE_SIGMA_Q_DEG: f64 = 0.842;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("mapping failed: {0}")]
    Mapping(jointspace::Error),
    #[error("planning failed: {0}")]
    Planning(jointspace::Error),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Mapping(_) => 3,
            CliError::Planning(_) => 4,
            CliError::Io(_) => 5,
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

/// Writes `dir/name` through a temporary file in `dir` and a rename, so a
/// reader never sees a partial artifact.
pub fn write_atomic<F>(dir: &Path, name: &str, fill: F) -> Result<PathBuf, CliError>
where
    F: FnOnce(&mut dyn Write) -> jointspace::Result<()>,
{
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let target = dir.join(name);
    let tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| io_err(dir, e))?;
    {
        let mut w = BufWriter::new(tmp.as_file());
        fill(&mut w).map_err(|e| io_err(&target, e))?;
        w.flush().map_err(|e| io_err(&target, e))?;
    }
    // temp files are created owner-only
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        fs::set_permissions(tmp.path(), fs::Permissions::from_mode(0o644)).map_err(|e| io_err(&target, e))?;
    }
    tmp.persist(&target).map_err(|e| io_err(&target, e.error))?;
    Ok(target)
}

fn write_json(dir: &Path, name: &str, value: &serde_json::Value) -> Result<PathBuf, CliError> {
    write_atomic(dir, name, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        writeln!(w)?;
        Ok(())
    })
}

/// Scene and arm from the config; failures are configuration errors.
pub fn setup(cfg: &RunConfig) -> Result<(Scene, ArmGeometry), CliError> {
    cfg.validate()?;
    let scene = cfg.scene()?;
    let arm = cfg.arm(&scene)?;
    Ok((scene, arm))
}

pub fn build_mesh(cfg: &RunConfig, scene: &Scene, arm: &ArmGeometry) -> Result<BoundaryMesh, CliError> {
    let mesh = build_segmented(scene, arm, cfg.grid_spec(), cfg.coverage).map_err(CliError::Mapping)?;
    info!(
        "boundary mesh: {} vertices, {} triangles, {} patches",
        mesh.len(),
        mesh.triangles.len(),
        mesh.patches.len()
    );
    Ok(mesh)
}

pub fn calibrate(mesh: &BoundaryMesh, scene: &Scene, arm: &ArmGeometry, sigma_x: f64) -> Result<Calibration, CliError> {
    let pm = mesh.position_mesh(scene.port).map_err(CliError::Mapping)?;
    let cal = calibrate_sigma_q(&pm, arm, &scene.port, sigma_x).map_err(CliError::Mapping)?;
    info!(
        "calibrated sigma_q = {:.4} deg for sigma_x = {} mm (reference {REFERENCE_SIGMA_Q_DEG} deg)",
        cal.sigma_q_deg, sigma_x
    );
    Ok(cal)
}

/// Configured buffer, or the calibrated one when the config leaves it out.
fn resolve_sigma_q(
    cfg: &RunConfig,
    mesh: &BoundaryMesh,
    scene: &Scene,
    arm: &ArmGeometry,
) -> Result<(f64, Option<Calibration>), CliError> {
    match cfg.sigma_q_rad() {
        Some(s) => Ok((s, None)),
        None => {
            let cal = calibrate(mesh, scene, arm, cfg.sigma_x)?;
            Ok((cal.sigma_q, Some(cal)))
        }
    }
}

fn out_dir(cfg: &RunConfig) -> &Path {
    &cfg.output_dir
}

/// Joint-space boundary mesh as OBJ plus JSON sidecar, and the
/// position-space boundary samples as an OBJ point cloud.
pub fn cmd_map(cfg: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    let (scene, arm) = setup(cfg)?;
    let mesh = build_mesh(cfg, &scene, &arm)?;
    let dir = out_dir(cfg);
    let sidecar = json!({
        "scene": scene.name,
        "grid": cfg.grid,
        "coverage": cfg.coverage,
        "mesh": mesh.sidecar_json(),
    });
    Ok(vec![
        write_atomic(dir, "boundary.obj", |w| mesh.write_obj(w))?,
        write_json(dir, "boundary.json", &sidecar)?,
        write_atomic(dir, "scene_samples.obj", |w| scene.write_samples_obj(w))?,
    ])
}

fn space_name(space: Space) -> &'static str {
    match space {
        Space::Joint => "joint",
        Space::Position => "position",
    }
}

/// One planner run: trajectory CSV, metrics JSON, angle trace CSV and the
/// roadmap. `seed` defaults to the first configured seed.
pub fn cmd_plan(cfg: &RunConfig, space: Space, seed: Option<u64>) -> Result<Vec<PathBuf>, CliError> {
    let (scene, arm) = setup(cfg)?;
    let seed = seed.unwrap_or(cfg.seeds[0]);
    let (start, goal) = (cfg.start_point(), cfg.goal_point());
    let (plan, sigma_q, calibration) = match space {
        Space::Joint => {
            let mesh = build_mesh(cfg, &scene, &arm)?;
            let (sigma_q, cal) = resolve_sigma_q(cfg, &mesh, &scene, &arm)?;
            let params = cfg.planner_params(sigma_q);
            let plan = plan_joint_space(&scene, &arm, &mesh, &start, &goal, &params, seed);
            (plan, Some(sigma_q), cal)
        }
        Space::Position => {
            let params = cfg.planner_params(cfg.sigma_q_rad().unwrap_or(0.0));
            (
                plan_position_space(&scene, &arm, &start, &goal, &params, seed),
                None,
                None,
            )
        }
    };
    let plan = plan.map_err(CliError::Planning)?;
    let metrics = if plan.curve.trajectory.duration() == 0.0 {
        MetricsReport::stationary(&start, &scene.port)
    } else {
        evaluate(&plan.curve, &scene.port, cfg.eval_samples)
    }
    .map_err(CliError::Planning)?;
    info!(
        "{} plan, seed {seed}: {} nodes on path, psi_ave {:.2} deg, length {:.1} mm",
        space_name(space),
        plan.path.len(),
        metrics.psi_ave_deg,
        metrics.path_length_mm
    );
    let name = space_name(space);
    let summary = json!({
        "space": name,
        "seed": seed,
        "scene": scene.name,
        "sigma_x_mm": cfg.sigma_x,
        "sigma_q_deg": sigma_q.map(f64::to_degrees),
        "calibration": calibration,
        "path_nodes": plan.path.len(),
        "path_cost": plan.path_cost(),
        "clearance": plan.clearance,
        "metrics": metrics,
    });
    let dir = out_dir(cfg);
    Ok(vec![
        write_atomic(dir, &format!("trajectory_{name}.csv"), |w| {
            plan.curve.write_csv(w, cfg.samples_per_interval)
        })?,
        write_json(dir, &format!("metrics_{name}.json"), &summary)?,
        write_atomic(dir, &format!("trace_{name}.csv"), |w| metrics.write_trace_csv(w))?,
        write_json(dir, &format!("roadmap_{name}.json"), &plan.roadmap.to_json())?,
    ])
}

/// Both planners over the seed list, or over `[seed]` when given.
pub fn cmd_compare(cfg: &RunConfig, seed: Option<u64>) -> Result<Vec<PathBuf>, CliError> {
    let (scene, arm) = setup(cfg)?;
    let mesh = build_mesh(cfg, &scene, &arm)?;
    let (sigma_q, calibration) = resolve_sigma_q(cfg, &mesh, &scene, &arm)?;
    let seeds = match seed {
        Some(s) => vec![s],
        None => cfg.seeds.clone(),
    };
    let setup = CompareSetup {
        scene: &scene,
        arm: &arm,
        mesh: &mesh,
        start: cfg.start_point(),
        goal: cfg.goal_point(),
        params: cfg.planner_params(sigma_q),
        eval_samples: cfg.eval_samples,
    };
    let report = compare(&setup, &seeds).map_err(CliError::Planning)?;
    let mut text = report.to_text();
    match &calibration {
        Some(c) => {
            text += &format!(
                "sigma_q calibrated from sigma_x = {} mm over {} triangles (reference {REFERENCE_SIGMA_Q_DEG} deg)\n",
                c.sigma_x, c.triangles_used
            )
        }
        None => text += "sigma_q taken from the config\n",
    }
    let value = json!({
        "scene": scene.name,
        "seeds": seeds,
        "sigma_q_source": if calibration.is_some() { "calibrated" } else { "config" },
        "calibration": calibration,
        "report": report,
    });
    let dir = out_dir(cfg);
    Ok(vec![
        write_json(dir, "comparison.json", &value)?,
        write_atomic(dir, "comparison.txt", |w| Ok(w.write_all(text.as_bytes())?))?,
    ])
}

/// Calibration at the configured `sigma_x`, at zero and at twice the value.
pub fn cmd_calibrate(cfg: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    let (scene, arm) = setup(cfg)?;
    let mesh = build_mesh(cfg, &scene, &arm)?;
    let zero = calibrate(&mesh, &scene, &arm, 0.0)?;
    let base = calibrate(&mesh, &scene, &arm, cfg.sigma_x)?;
    let doubled = calibrate(&mesh, &scene, &arm, 2.0 * cfg.sigma_x)?;
    let ratio = (base.sigma_q > 0.0).then(|| doubled.sigma_q / base.sigma_q);
    let value = json!({
        "scene": scene.name,
        "reference_sigma_q_deg": REFERENCE_SIGMA_Q_DEG,
        "calibration": base,
        "zero": zero,
        "doubled": doubled,
        "linearity_ratio": ratio,
    });
    Ok(vec![write_json(out_dir(cfg), "calibration.json", &value)?])
}
