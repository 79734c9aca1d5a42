//! Insertion-angle metrics, buffer calibration and planner comparison.
//!
//! Angles are reported in degrees, rates in degrees per mm of tip travel.

use log::{info, warn};
use nalgebra::{Point3, Vector3};
use rayon::prelude::*;
use serde::Serialize;

use crate::arm::{inverse_kinematics, ArmGeometry};
use crate::error::{Error, Result};
use crate::obstacle_map::{BoundaryMesh, PositionMesh};
use crate::planner::{plan_joint_space, plan_position_space, Plan, PlannedPath, PlannerParams};
use crate::scene::Scene;

pub const DEFAULT_EVAL_SAMPLES: usize = 1000;

/// Angle between the port-to-tip direction and the downward vertical, in
/// radians. NaN for tips at or above the port plane.
pub fn insertion_angle(x: &Point3<f64>, p: &Point3<f64>) -> Result<f64> {
    if x == p {
        return Err(Error::InvalidParameter("tip coincides with the port".into()));
    }
    let depth = p.z - x.z;
    if !(depth > 0.0) {
        return Ok(f64::NAN);
    }
    Ok((x.x - p.x).hypot(x.y - p.y).atan2(depth))
}

/// Gradient of [`insertion_angle`] with respect to `x`.
pub fn insertion_angle_gradient(x: &Point3<f64>, p: &Point3<f64>) -> Vector3<f64> {
    let (dx, dy, h) = (x.x - p.x, x.y - p.y, p.z - x.z);
    let rho = dx.hypot(dy);
    let r2 = rho * rho + h * h;
    if rho == 0.0 {
        // psi = |offset| / h to first order; no unique direction
        return Vector3::zeros();
    }
    Vector3::new(h * dx / (rho * r2), h * dy / (rho * r2), rho / r2)
}

/// A tip trajectory with piecewise-smooth parameterization.
pub trait TipCurve {
    /// Parameter values bounding the smooth pieces, increasing.
    fn breakpoints(&self) -> Vec<f64>;
    fn tip(&self, t: f64) -> Point3<f64>;
    fn tip_velocity(&self, t: f64) -> Vector3<f64>;
}

impl TipCurve for PlannedPath {
    fn breakpoints(&self) -> Vec<f64> {
        self.trajectory.t.clone()
    }

    fn tip(&self, t: f64) -> Point3<f64> {
        PlannedPath::tip(self, t)
    }

    fn tip_velocity(&self, t: f64) -> Vector3<f64> {
        PlannedPath::tip_velocity(self, t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceSample {
    pub t: f64,
    /// Arc length, mm.
    pub s: f64,
    pub psi_deg: f64,
    pub dpsi_ds_deg_per_mm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub psi_ave_deg: f64,
    pub psi_max_deg: f64,
    pub dpsi_rms_deg_per_mm: f64,
    pub dpsi_max_deg_per_mm: f64,
    pub path_length_mm: f64,
    /// Samples at or above the port plane, left out of the statistics.
    pub excluded_samples: usize,
    #[serde(skip)]
    pub trace: Vec<TraceSample>,
}

impl MetricsReport {
    /// Report for a tip that never moves: zero length and rates, the angle
    /// of the single pose.
    pub fn stationary(x: &Point3<f64>, port: &Point3<f64>) -> Result<Self> {
        let psi = insertion_angle(x, port)?.to_degrees();
        Ok(Self {
            psi_ave_deg: psi,
            psi_max_deg: psi,
            dpsi_rms_deg_per_mm: 0.0,
            dpsi_max_deg_per_mm: 0.0,
            path_length_mm: 0.0,
            excluded_samples: usize::from(psi.is_nan()),
            trace: vec![TraceSample {
                t: 0.0,
                s: 0.0,
                psi_deg: psi,
                dpsi_ds_deg_per_mm: 0.0,
            }],
        })
    }

    pub fn write_trace_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for row in &self.trace {
            out.serialize(row).map_err(|e| Error::Io(std::io::Error::other(e)))?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Dense evaluation with `per_interval` steps on every smooth piece.
pub fn evaluate(curve: &dyn TipCurve, port: &Point3<f64>, per_interval: usize) -> Result<MetricsReport> {
    let per = per_interval.max(1);
    let bp = curve.breakpoints();
    if bp.len() < 2 {
        return Err(Error::DegenerateCurve("zero-length curve"));
    }
    let mut ts = Vec::with_capacity((bp.len() - 1) * per + 1);
    for w in bp.windows(2) {
        for k in 0..per {
            ts.push(w[0] + (w[1] - w[0]) * k as f64 / per as f64);
        }
    }
    ts.push(*bp.last().expect("two breakpoints"));

    let mut trace = Vec::with_capacity(ts.len());
    let mut s = 0.0;
    let mut prev_speed = None;
    let mut prev_t = ts[0];
    for &t in &ts {
        let x = curve.tip(t);
        let v = curve.tip_velocity(t);
        let speed = v.norm();
        if let Some(ps) = prev_speed {
            s += 0.5 * (ps + speed) * (t - prev_t);
        }
        prev_speed = Some(speed);
        prev_t = t;
        let psi = insertion_angle(&x, port)?;
        let dpsi = if speed > 0.0 {
            insertion_angle_gradient(&x, port).dot(&v) / speed
        } else {
            0.0
        };
        trace.push(TraceSample {
            t,
            s,
            psi_deg: psi.to_degrees(),
            dpsi_ds_deg_per_mm: dpsi.to_degrees(),
        });
    }
    if !(s > 0.0) {
        return Err(Error::DegenerateCurve("zero-length curve"));
    }
    let excluded = trace.iter().filter(|r| r.psi_deg.is_nan()).count();
    if excluded > 0 {
        warn!("{excluded} samples at or above the port plane excluded from angle statistics");
    }
    let (mut psi_int, mut dpsi2_int, mut len) = (0.0, 0.0, 0.0);
    for w in trace.windows(2) {
        if w[0].psi_deg.is_nan() || w[1].psi_deg.is_nan() {
            continue;
        }
        let ds = w[1].s - w[0].s;
        psi_int += 0.5 * (w[0].psi_deg + w[1].psi_deg) * ds;
        dpsi2_int += 0.5 * (w[0].dpsi_ds_deg_per_mm.powi(2) + w[1].dpsi_ds_deg_per_mm.powi(2)) * ds;
        len += ds;
    }
    if !(len > 0.0) {
        return Err(Error::DegenerateCurve("no evaluable samples below the port"));
    }
    let valid = trace.iter().filter(|r| !r.psi_deg.is_nan());
    let psi_max = valid.clone().map(|r| r.psi_deg).fold(f64::NEG_INFINITY, f64::max);
    let dpsi_max = valid.map(|r| r.dpsi_ds_deg_per_mm.abs()).fold(0.0, f64::max);
    Ok(MetricsReport {
        psi_ave_deg: psi_int / len,
        psi_max_deg: psi_max,
        dpsi_rms_deg_per_mm: (dpsi2_int / len).sqrt(),
        dpsi_max_deg_per_mm: dpsi_max,
        path_length_mm: s,
        excluded_samples: excluded,
        trace,
    })
}

/// `(psi_ave, psi_max)` in degrees.
pub fn angle_stats(curve: &dyn TipCurve, port: &Point3<f64>) -> Result<(f64, f64)> {
    let r = evaluate(curve, port, DEFAULT_EVAL_SAMPLES)?;
    Ok((r.psi_ave_deg, r.psi_max_deg))
}

/// `(psi'_rms, psi'_max)` in degrees per mm.
pub fn angle_derivative_stats(curve: &dyn TipCurve, port: &Point3<f64>) -> Result<(f64, f64)> {
    let r = evaluate(curve, port, DEFAULT_EVAL_SAMPLES)?;
    Ok((r.dpsi_rms_deg_per_mm, r.dpsi_max_deg_per_mm))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Calibration {
    /// Radians.
    pub sigma_q: f64,
    pub sigma_q_deg: f64,
    pub sigma_x: f64,
    pub triangles_used: usize,
    pub ik_failures: usize,
    /// Degenerate triangles and triangles spanning two surfaces.
    pub skipped: usize,
}

/// Mean joint-space displacement produced by moving `sigma_x` across each
/// boundary triangle along its normal.
pub fn calibrate_sigma_q(
    mesh: &PositionMesh,
    arm: &ArmGeometry,
    port: &Point3<f64>,
    sigma_x: f64,
) -> Result<Calibration> {
    if !(sigma_x.is_finite() && sigma_x >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "sigma_x must be finite and >= 0, got {sigma_x}"
        )));
    }
    let results: Vec<Option<Option<f64>>> = (0..mesh.triangles.len())
        .into_par_iter()
        .map(|t| {
            if !mesh.single_surface(t) {
                return None;
            }
            let (c, n) = mesh.triangle_frame(t)?;
            let plus = inverse_kinematics(&(c + n * (0.5 * sigma_x)), port, arm);
            let minus = inverse_kinematics(&(c - n * (0.5 * sigma_x)), port, arm);
            Some(match (plus, minus) {
                (Ok(a), Ok(b)) => Some((a.as_vector() - b.as_vector()).norm()),
                _ => None,
            })
        })
        .collect();
    let skipped = results.iter().filter(|r| r.is_none()).count();
    let ik_failures = results.iter().filter(|r| matches!(r, Some(None))).count();
    let mut values: Vec<f64> = results.into_iter().flatten().flatten().collect();
    if values.is_empty() {
        return Err(Error::CalibrationFailed(mesh.triangles.len()));
    }
    // order-independent mean
    values.sort_by(f64::total_cmp);
    let sigma_q = values.iter().sum::<f64>() / values.len() as f64;
    info!(
        "sigma_x {sigma_x} mm -> sigma_q {:.4} deg over {} triangles ({ik_failures} IK failures, {skipped} skipped)",
        sigma_q.to_degrees(),
        values.len()
    );
    Ok(Calibration {
        sigma_q,
        sigma_q_deg: sigma_q.to_degrees(),
        sigma_x,
        triangles_used: values.len(),
        ik_failures,
        skipped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedRow {
    pub seed: u64,
    pub joint: std::result::Result<MetricsReport, String>,
    pub position: std::result::Result<MetricsReport, String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Spread {
    pub mean: f64,
    pub std: f64,
}

impl Spread {
    fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = if values.len() > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Self { mean, std: var.sqrt() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Aggregate {
    pub runs: usize,
    pub psi_ave_deg: Spread,
    pub psi_max_deg: Spread,
    pub dpsi_max_deg_per_mm: Spread,
    pub dpsi_rms_deg_per_mm: Spread,
    pub path_length_mm: Spread,
}

impl Aggregate {
    fn of(reports: &[&MetricsReport]) -> Option<Self> {
        if reports.is_empty() {
            return None;
        }
        let col = |f: fn(&MetricsReport) -> f64| Spread::of(&reports.iter().map(|r| f(r)).collect::<Vec<_>>());
        Some(Self {
            runs: reports.len(),
            psi_ave_deg: col(|r| r.psi_ave_deg),
            psi_max_deg: col(|r| r.psi_max_deg),
            dpsi_max_deg_per_mm: col(|r| r.dpsi_max_deg_per_mm),
            dpsi_rms_deg_per_mm: col(|r| r.dpsi_rms_deg_per_mm),
            path_length_mm: col(|r| r.path_length_mm),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub sigma_q_deg: f64,
    pub sigma_x: f64,
    pub rows: Vec<SeedRow>,
    pub joint: Option<Aggregate>,
    pub position: Option<Aggregate>,
}

impl ComparisonReport {
    /// Aligned plain-text table, one row per planner.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "sigma_q = {:.4} deg, sigma_x = {:.3} mm, seeds = {}\n",
            self.sigma_q_deg,
            self.sigma_x,
            self.rows.len()
        );
        out += &format!(
            "{:<10} {:>5} {:>18} {:>18} {:>22} {:>22} {:>18}\n",
            "planner",
            "runs",
            "psi_ave [deg]",
            "psi_max [deg]",
            "dpsi_max [deg/mm]",
            "dpsi_rms [deg/mm]",
            "length [mm]"
        );
        let cell = |s: &Spread, prec: usize| format!("{:.prec$} +- {:.prec$}", s.mean, s.std);
        for (name, agg) in [("joint", &self.joint), ("position", &self.position)] {
            match agg {
                Some(a) => {
                    out += &format!(
                        "{:<10} {:>5} {:>18} {:>18} {:>22} {:>22} {:>18}\n",
                        name,
                        a.runs,
                        cell(&a.psi_ave_deg, 2),
                        cell(&a.psi_max_deg, 2),
                        cell(&a.dpsi_max_deg_per_mm, 4),
                        cell(&a.dpsi_rms_deg_per_mm, 4),
                        cell(&a.path_length_mm, 1)
                    )
                }
                None => out += &format!("{name:<10} {:>5}\n", 0),
            }
        }
        for row in &self.rows {
            for (name, r) in [("joint", &row.joint), ("position", &row.position)] {
                if let Err(e) = r {
                    out += &format!("seed {} {name} failed: {e}\n", row.seed);
                }
            }
        }
        out
    }
}

/// Everything one comparison needs besides the seeds.
pub struct CompareSetup<'a> {
    pub scene: &'a Scene,
    pub arm: &'a ArmGeometry,
    pub mesh: &'a BoundaryMesh,
    pub start: Point3<f64>,
    pub goal: Point3<f64>,
    pub params: PlannerParams,
    pub eval_samples: usize,
}

fn run(plan: Result<Plan>, port: &Point3<f64>, per: usize) -> std::result::Result<MetricsReport, String> {
    let plan = plan.map_err(|e| e.to_string())?;
    evaluate(&plan.curve, port, per).map_err(|e| e.to_string())
}

/// Both planners on every seed; seeds run in parallel.
pub fn compare(setup: &CompareSetup, seeds: &[u64]) -> Result<ComparisonReport> {
    if seeds.is_empty() {
        return Err(Error::Empty("seed list"));
    }
    let port = setup.scene.port;
    let rows: Vec<SeedRow> = seeds
        .par_iter()
        .map(|&seed| {
            let joint = plan_joint_space(
                setup.scene,
                setup.arm,
                setup.mesh,
                &setup.start,
                &setup.goal,
                &setup.params,
                seed,
            );
            let position = plan_position_space(setup.scene, setup.arm, &setup.start, &setup.goal, &setup.params, seed);
            SeedRow {
                seed,
                joint: run(joint, &port, setup.eval_samples),
                position: run(position, &port, setup.eval_samples),
            }
        })
        .collect();
    let ok = |f: fn(&SeedRow) -> &std::result::Result<MetricsReport, String>| -> Vec<&MetricsReport> {
        rows.iter().filter_map(|r| f(r).as_ref().ok()).collect()
    };
    let joint = Aggregate::of(&ok(|r| &r.joint));
    let position = Aggregate::of(&ok(|r| &r.position));
    Ok(ComparisonReport {
        sigma_q_deg: setup.params.sigma_q.to_degrees(),
        sigma_x: setup.params.sigma_x,
        rows,
        joint,
        position,
    })
}
