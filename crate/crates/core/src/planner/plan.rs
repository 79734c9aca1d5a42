use std::io::Write;

use log::{debug, warn};
use nalgebra::{Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::delaunay::delaunay3;
use super::graph::{dijkstra, Roadmap, Space};
use super::spline::{spline_fit, Trajectory};
use crate::arm::{inverse_kinematics, solve_rcm, tip_jacobian, tip_jet, tip_of, ArmGeometry, ReducedConfig};
use crate::error::{Error, Result};
use crate::metric::{ArmWrist, Metric};
use crate::obstacle_map::BoundaryMesh;
use crate::scene::{baseline_edge_cost, Scene};

pub const DEFAULT_ROADMAP_SIZE: usize = 1000;
pub const DEFAULT_SAMPLES_PER_INTERVAL: usize = 20;
const REJECTION_FACTOR: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlannerParams {
    pub n_joint: usize,
    pub n_position: usize,
    /// Joint-space buffer, radians.
    pub sigma_q: f64,
    /// Position-space buffer, mm.
    pub sigma_x: f64,
    /// Density of the clearance check and of exported samples.
    pub samples_per_interval: usize,
}

impl Default for PlannerParams {
    fn default() -> Self {
        Self {
            n_joint: DEFAULT_ROADMAP_SIZE,
            n_position: DEFAULT_ROADMAP_SIZE,
            sigma_q: 0.842_f64.to_radians(),
            sigma_x: 5.0,
            samples_per_interval: DEFAULT_SAMPLES_PER_INTERVAL,
        }
    }
}

impl PlannerParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_joint < 2 || self.n_position < 2 {
            return Err(Error::InvalidParameter("roadmap sizes must be >= 2".into()));
        }
        if self.samples_per_interval == 0 {
            return Err(Error::InvalidParameter("samples_per_interval must be >= 1".into()));
        }
        for (name, v) in [("sigma_q", self.sigma_q), ("sigma_x", self.sigma_x)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Region sampled by [`sample_free`] and its free-space test.
#[derive(Debug, Clone, Copy)]
pub enum Domain<'a> {
    /// `(q1, q2, q3)` within the joint limits whose lift succeeds and whose
    /// tip is free.
    Joint { scene: &'a Scene, arm: &'a ArmGeometry },
    /// Free tip positions below the port plane.
    Position { scene: &'a Scene },
}

impl Domain<'_> {
    pub fn space(&self) -> Space {
        match self {
            Domain::Joint { .. } => Space::Joint,
            Domain::Position { .. } => Space::Position,
        }
    }

    fn bounds(&self) -> (Vector3<f64>, Vector3<f64>) {
        match self {
            Domain::Joint { arm, .. } => (
                Vector3::from_fn(|i, _| arm.limits[i][0]),
                Vector3::from_fn(|i, _| arm.limits[i][1]),
            ),
            Domain::Position { scene } => {
                let pts = scene.boundary_samples();
                let lo = pts.iter().fold(Vector3::repeat(f64::INFINITY), |m, p| m.inf(&p.coords));
                let mut hi = pts
                    .iter()
                    .fold(Vector3::repeat(f64::NEG_INFINITY), |m, p| m.sup(&p.coords));
                hi.z = hi.z.min(scene.port.z);
                (lo, hi)
            }
        }
    }

    pub fn is_free(&self, v: &Vector3<f64>) -> bool {
        match self {
            Domain::Joint { scene, arm } => {
                tip_of(&ReducedConfig(*v), &scene.port, arm).is_ok_and(|x| scene.is_free_tip(&x))
            }
            Domain::Position { scene } => scene.is_free_tip(&Point3::from(*v)),
        }
    }
}

/// `n` free nodes: `start` and `goal` first, then uniform rejection samples
/// from the domain's bounding box.
pub fn sample_free(
    n: usize,
    domain: &Domain,
    start: Vector3<f64>,
    goal: Vector3<f64>,
    seed: u64,
) -> Result<Vec<Vector3<f64>>> {
    if n < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: n });
    }
    let (lo, hi) = domain.bounds();
    if (0..3).any(|i| !(lo[i] < hi[i])) {
        return Err(Error::InvalidParameter("empty sampling box".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut nodes = Vec::with_capacity(n);
    nodes.push(start);
    nodes.push(goal);
    let budget = REJECTION_FACTOR * n;
    let mut attempts = 0;
    while nodes.len() < n {
        if attempts == budget {
            return Err(Error::RejectionBudgetExceeded {
                requested: n,
                accepted: nodes.len(),
                attempts,
            });
        }
        attempts += 1;
        let v = Vector3::from_fn(|i, _| rng.gen_range(lo[i]..hi[i]));
        if domain.is_free(&v) {
            nodes.push(v);
        }
    }
    debug!("{n} free samples in {attempts} attempts");
    Ok(nodes)
}

/// Delaunay edges, or the complete graph below four nodes.
fn roadmap_edges(nodes: &[Vector3<f64>]) -> Result<Vec<(usize, usize)>> {
    if nodes.len() < 4 {
        return Ok((0..nodes.len())
            .flat_map(|a| (a + 1..nodes.len()).map(move |b| (a, b)))
            .collect());
    }
    delaunay3(nodes)
}

/// Tool-tip curve of a planned trajectory with the arm it was planned for.
#[derive(Debug, Clone)]
pub struct PlannedPath {
    pub trajectory: Trajectory,
    pub arm: ArmGeometry,
    pub port: Point3<f64>,
}

impl PlannedPath {
    pub fn space(&self) -> Space {
        self.trajectory.space
    }

    pub fn tip(&self, t: f64) -> Point3<f64> {
        let v = self.trajectory.eval(t);
        match self.space() {
            Space::Position => Point3::from(v),
            Space::Joint => {
                let j = tip_jet(&ReducedConfig(v), &self.port, &self.arm);
                Point3::new(j[0].v, j[1].v, j[2].v)
            }
        }
    }

    /// `d tip / dt`.
    pub fn tip_velocity(&self, t: f64) -> Vector3<f64> {
        let d = self.trajectory.derivative(t);
        match self.space() {
            Space::Position => d,
            Space::Joint => tip_jacobian(&ReducedConfig(self.trajectory.eval(t)), &self.port, &self.arm) * d,
        }
    }

    /// All five joint angles at `t`, or `None` if the wrist cannot be solved
    /// within its limits.
    pub fn joints(&self, t: f64) -> Option<[f64; 5]> {
        match self.space() {
            Space::Joint => {
                let q = self.trajectory.eval(t);
                let (f, g) = solve_rcm(&ReducedConfig(q), &self.port, &self.arm).ok()?;
                Some([q[0], q[1], q[2], f, g])
            }
            Space::Position => {
                let q = inverse_kinematics(&self.tip(t), &self.port, &self.arm).ok()?;
                Some(*q.as_vector().as_ref())
            }
        }
    }

    /// Rows `t, q1..q5 (deg), x, y, z (mm)`; unsolvable joints are left empty.
    pub fn write_csv<W: Write>(&self, w: W, per_interval: usize) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
        out.write_record(["t", "q1", "q2", "q3", "q4", "q5", "x", "y", "z"])
            .map_err(io)?;
        for t in self.trajectory.sample_params(per_interval) {
            let mut row = vec![format!("{t:.9}")];
            match self.joints(t) {
                Some(q) => row.extend(q.iter().map(|a| format!("{:.9}", a.to_degrees()))),
                None => row.extend(std::iter::repeat_n(String::new(), 5)),
            }
            let x = self.tip(t);
            row.extend([x.x, x.y, x.z].iter().map(|c| format!("{c:.9}")));
            out.write_record(&row).map_err(io)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Parameter ranges where sampled tips leave free space.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClearanceReport {
    pub min_clearance: f64,
    pub violations: Vec<(f64, f64)>,
}

pub fn check_clearance(path: &PlannedPath, scene: &Scene, per_interval: usize) -> ClearanceReport {
    let ts = path.trajectory.sample_params(per_interval);
    let mut min_clearance = f64::INFINITY;
    let mut violations: Vec<(f64, f64)> = Vec::new();
    let mut open: Option<f64> = None;
    for (k, &t) in ts.iter().enumerate() {
        let x = path.tip(t);
        let c = if x.z < scene.port.z {
            scene.clearance(&x)
        } else {
            f64::NEG_INFINITY
        };
        min_clearance = min_clearance.min(c);
        if c < 0.0 {
            open.get_or_insert(t);
        } else if let Some(t0) = open.take() {
            violations.push((t0, ts[k - 1]));
        }
    }
    if let Some(t0) = open {
        violations.push((t0, *ts.last().expect("non-empty")));
    }
    if !violations.is_empty() {
        warn!(
            "{} trajectory leaves free space on {} arc(s): {:?}",
            match path.space() {
                Space::Joint => "joint-space",
                Space::Position => "position-space",
            },
            violations.len(),
            violations
        );
    }
    ClearanceReport {
        min_clearance,
        violations,
    }
}

#[derive(Debug, Clone)]
pub struct Plan {
    pub roadmap: Roadmap,
    pub path: Vec<usize>,
    pub curve: PlannedPath,
    pub clearance: ClearanceReport,
}

impl Plan {
    pub fn path_cost(&self) -> f64 {
        self.roadmap.path_cost(&self.path)
    }
}

fn finish(roadmap: Roadmap, scene: &Scene, arm: &ArmGeometry, params: &PlannerParams) -> Result<Plan> {
    let path = dijkstra(&roadmap, roadmap.start, roadmap.goal)?;
    let inner = if path.len() > 2 {
        &path[1..path.len() - 1]
    } else {
        &[][..]
    };
    let interior: Vec<Vector3<f64>> = inner.iter().map(|&i| roadmap.nodes[i]).collect();
    let trajectory = spline_fit(
        roadmap.space,
        &interior,
        roadmap.nodes[roadmap.start],
        roadmap.nodes[roadmap.goal],
    )?;
    let curve = PlannedPath {
        trajectory,
        arm: arm.clone(),
        port: scene.port,
    };
    let clearance = check_clearance(&curve, scene, params.samples_per_interval);
    Ok(Plan {
        roadmap,
        path,
        curve,
        clearance,
    })
}

fn trivial_plan(
    space: Space,
    v: Vector3<f64>,
    scene: &Scene,
    arm: &ArmGeometry,
    params: &PlannerParams,
) -> Result<Plan> {
    let roadmap = Roadmap::new(space, vec![v], Vec::new(), Vec::new(), 0, 0)?;
    finish(roadmap, scene, arm, params)
}

/// Joint-space roadmap weighted by the Riemannian edge cost. Edges whose
/// midpoint cannot be lifted or puts the tip outside free space cost
/// infinity.
pub fn plan_joint_space(
    scene: &Scene,
    arm: &ArmGeometry,
    mesh: &BoundaryMesh,
    start: &Point3<f64>,
    goal: &Point3<f64>,
    params: &PlannerParams,
    seed: u64,
) -> Result<Plan> {
    params.validate()?;
    let qs = inverse_kinematics(start, &scene.port, arm)?.reduced().0;
    let qg = inverse_kinematics(goal, &scene.port, arm)?.reduced().0;
    if qs == qg {
        return trivial_plan(Space::Joint, qs, scene, arm, params);
    }
    let domain = Domain::Joint { scene, arm };
    let nodes = sample_free(params.n_joint, &domain, qs, qg, seed)?;
    let edges = roadmap_edges(&nodes)?;
    let wrist = ArmWrist { arm, port: scene.port };
    let metric = Metric::new(&wrist, mesh, params.sigma_q)?;
    let costs: Vec<f64> = edges
        .par_iter()
        .map(|&(a, b)| {
            let mid = (nodes[a] + nodes[b]) * 0.5;
            if !domain.is_free(&mid) {
                return f64::INFINITY;
            }
            metric.edge_cost(&nodes[a], &nodes[b]).unwrap_or(f64::INFINITY)
        })
        .collect();
    let roadmap = Roadmap::new(Space::Joint, nodes, edges, costs, 0, 1)?;
    finish(roadmap, scene, arm, params)
}

/// Position-space baseline: the same pipeline over tip positions with the
/// clearance-weighted Euclidean edge cost.
pub fn plan_position_space(
    scene: &Scene,
    arm: &ArmGeometry,
    start: &Point3<f64>,
    goal: &Point3<f64>,
    params: &PlannerParams,
    seed: u64,
) -> Result<Plan> {
    params.validate()?;
    let domain = Domain::Position { scene };
    for p in [start, goal] {
        if !domain.is_free(&p.coords) {
            return Err(Error::InvalidParameter(format!("endpoint {p} is not in free space")));
        }
    }
    if start == goal {
        return trivial_plan(Space::Position, start.coords, scene, arm, params);
    }
    let nodes = sample_free(params.n_position, &domain, start.coords, goal.coords, seed)?;
    let edges = roadmap_edges(&nodes)?;
    let costs: Vec<f64> = edges
        .par_iter()
        .map(|&(a, b)| {
            let mid = (nodes[a] + nodes[b]) * 0.5;
            if !domain.is_free(&mid) {
                return f64::INFINITY;
            }
            baseline_edge_cost(&Point3::from(nodes[a]), &Point3::from(nodes[b]), scene, params.sigma_x)
                .unwrap_or(f64::INFINITY)
        })
        .collect();
    let roadmap = Roadmap::new(Space::Position, nodes, edges, costs, 0, 1)?;
    finish(roadmap, scene, arm, params)
}
