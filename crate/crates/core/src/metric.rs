//! Joint-space Riemannian metric, edge cost and geodesic residual.
//!
//! Coordinates are the reduced angles `q = (q1, q2, q3)` in radians. The
//! metric is `G = G_q + G_obs` with the wrist pullback
//! `G_q = I + grad f grad f^T + grad g grad g^T` and the isotropic barrier
//! `G_obs = sigma_q / |q - q_a| I` around the nearest forbidden vertex `q_a`.

use nalgebra::{Matrix3, Point3, SymmetricEigen, Vector3};

use crate::arm::{implicit_derivatives, solve_rcm, ArmGeometry, ReducedConfig, WristDerivatives};
use crate::error::{Error, Result};
use crate::obstacle_map::{nearest_forbidden_greedy, BoundaryMesh};

/// Symmetric 3x3 quadratic form over `dq`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricTensor(pub Matrix3<f64>);

impl MetricTensor {
    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    pub fn quadratic_form(&self, v: &Vector3<f64>) -> f64 {
        v.dot(&(self.0 * v))
    }

    pub fn norm_of(&self, v: &Vector3<f64>) -> f64 {
        self.quadratic_form(v).max(0.0).sqrt()
    }

    pub fn asymmetry(&self) -> f64 {
        (self.0 - self.0.transpose()).abs().max()
    }

    pub fn eigenvalues(&self) -> Vector3<f64> {
        SymmetricEigen::new(self.0).eigenvalues
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues().min()
    }
}

impl std::ops::Add for MetricTensor {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self(self.0 + o.0)
    }
}

/// Buffer scales: `sigma_q` in radians, `sigma_x` in mm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BarrierParams {
    pub sigma_q: f64,
    pub sigma_x: f64,
}

impl BarrierParams {
    pub fn new(sigma_q: f64, sigma_x: f64) -> Result<Self> {
        for (name, v) in [("sigma_q", sigma_q), ("sigma_x", sigma_x)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        Ok(Self { sigma_q, sigma_x })
    }
}

/// Source of the wrist functions `f`, `g` and their derivatives.
pub trait WristModel: Sync {
    fn derivatives(&self, q: &Vector3<f64>) -> Result<WristDerivatives>;
}

/// The holder arm through a fixed port.
#[derive(Debug, Clone)]
pub struct ArmWrist<'a> {
    pub arm: &'a ArmGeometry,
    pub port: Point3<f64>,
}

impl WristModel for ArmWrist<'_> {
    fn derivatives(&self, q: &Vector3<f64>) -> Result<WristDerivatives> {
        let qr = ReducedConfig(*q);
        let w = solve_rcm(&qr, &self.port, self.arm)?;
        implicit_derivatives(&qr, w, &self.port, self.arm)
    }
}

/// `f = a . q`, `g = b . q`: a constant metric. `a = b = 0` is the flat case.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearWrist {
    pub a: Vector3<f64>,
    pub b: Vector3<f64>,
}

impl LinearWrist {
    pub fn flat() -> Self {
        Self {
            a: Vector3::zeros(),
            b: Vector3::zeros(),
        }
    }
}

impl WristModel for LinearWrist {
    fn derivatives(&self, _q: &Vector3<f64>) -> Result<WristDerivatives> {
        Ok(WristDerivatives {
            grad_f: self.a,
            grad_g: self.b,
            hess_f: Matrix3::zeros(),
            hess_g: Matrix3::zeros(),
        })
    }
}

/// Nearest forbidden configuration `q_a` for a query.
pub trait ForbiddenSource: Sync {
    fn nearest(&self, q: &Vector3<f64>) -> Result<Vector3<f64>>;
}

impl ForbiddenSource for BoundaryMesh {
    fn nearest(&self, q: &Vector3<f64>) -> Result<Vector3<f64>> {
        let (i, _) = nearest_forbidden_greedy(q, self)?;
        Ok(*self.point(i))
    }
}

/// A single forbidden configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointObstacle(pub Vector3<f64>);

impl ForbiddenSource for PointObstacle {
    fn nearest(&self, _q: &Vector3<f64>) -> Result<Vector3<f64>> {
        Ok(self.0)
    }
}

pub fn kinematic_from(d: &WristDerivatives) -> MetricTensor {
    MetricTensor(Matrix3::identity() + d.grad_f * d.grad_f.transpose() + d.grad_g * d.grad_g.transpose())
}

/// Wrist pullback metric of the arm at `qr`, with cross-checked gradients.
pub fn metric_kinematic(qr: &ReducedConfig, port: &Point3<f64>, arm: &ArmGeometry) -> Result<MetricTensor> {
    let (gf, gg) = crate::arm::grad_fg(qr, port, arm)?;
    Ok(MetricTensor(
        Matrix3::identity() + gf * gf.transpose() + gg * gg.transpose(),
    ))
}

/// Barrier `sigma_q / |q - q_a| I`.
pub fn metric_obstacle(q: &Vector3<f64>, q_a: &Vector3<f64>, sigma_q: f64) -> Result<MetricTensor> {
    let d = (q - q_a).norm();
    if sigma_q == 0.0 {
        return Ok(MetricTensor(Matrix3::zeros()));
    }
    if d == 0.0 {
        return Err(Error::AtBoundary);
    }
    Ok(MetricTensor(Matrix3::identity() * (sigma_q / d)))
}

pub fn metric_total(
    qr: &ReducedConfig,
    mesh: &BoundaryMesh,
    port: &Point3<f64>,
    arm: &ArmGeometry,
    sigma_q: f64,
) -> Result<MetricTensor> {
    Metric::new(&ArmWrist { arm, port: *port }, mesh, sigma_q)?.total(&qr.0)
}

pub fn edge_cost(
    qa: &ReducedConfig,
    qb: &ReducedConfig,
    mesh: &BoundaryMesh,
    port: &Point3<f64>,
    arm: &ArmGeometry,
    sigma_q: f64,
) -> Result<f64> {
    Metric::new(&ArmWrist { arm, port: *port }, mesh, sigma_q)?.edge_cost(&qa.0, &qb.0)
}

/// Which parts of the Lagrangian enter [`Metric::geodesic_residual`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Terms {
    Kinematic,
    Obstacle,
    Both,
}

/// Composite metric field `G(q)`.
#[derive(Clone, Copy)]
pub struct Metric<'a> {
    pub wrist: &'a dyn WristModel,
    pub obstacles: &'a dyn ForbiddenSource,
    pub sigma_q: f64,
}

impl<'a> Metric<'a> {
    pub fn new(wrist: &'a dyn WristModel, obstacles: &'a dyn ForbiddenSource, sigma_q: f64) -> Result<Self> {
        if !(sigma_q.is_finite() && sigma_q >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "sigma_q must be finite and >= 0, got {sigma_q}"
            )));
        }
        Ok(Self {
            wrist,
            obstacles,
            sigma_q,
        })
    }

    pub fn kinematic(&self, q: &Vector3<f64>) -> Result<MetricTensor> {
        Ok(kinematic_from(&self.wrist.derivatives(q)?))
    }

    pub fn obstacle(&self, q: &Vector3<f64>) -> Result<MetricTensor> {
        if self.sigma_q == 0.0 {
            return Ok(MetricTensor(Matrix3::zeros()));
        }
        metric_obstacle(q, &self.obstacles.nearest(q)?, self.sigma_q)
    }

    pub fn total(&self, q: &Vector3<f64>) -> Result<MetricTensor> {
        Ok(self.kinematic(q)? + self.obstacle(q)?)
    }

    /// Chord length under `G` at the midpoint times `1 + sigma_q / d`, where
    /// `d` is the midpoint's distance to its nearest forbidden vertex.
    /// Infinite when the midpoint sits on the boundary.
    pub fn edge_cost(&self, qa: &Vector3<f64>, qb: &Vector3<f64>) -> Result<f64> {
        let dq = qb - qa;
        if dq == Vector3::zeros() {
            return Ok(0.0);
        }
        let mid = (qa + qb) * 0.5;
        let mut g = self.kinematic(&mid)?;
        let mut factor = 1.0;
        if self.sigma_q > 0.0 {
            let d = (mid - self.obstacles.nearest(&mid)?).norm();
            if d == 0.0 {
                return Ok(f64::INFINITY);
            }
            g.0 += Matrix3::identity() * (self.sigma_q / d);
            factor += self.sigma_q / d;
        }
        Ok(g.norm_of(&dq) * factor)
    }

    /// Trapezoidal length of the polyline through `samples`: each chord is
    /// measured under `G` at both of its ends and averaged.
    pub fn path_length(&self, samples: &[Vector3<f64>]) -> Result<f64> {
        path_length(samples, |q| self.total(q))
    }

    /// Euler-Lagrange residual of `L = 1/2 qd^T G(q) qd` at the state
    /// `(q, qd, qdd)`. `q_a` is treated as locally constant.
    pub fn geodesic_residual(
        &self,
        q: &Vector3<f64>,
        qd: &Vector3<f64>,
        qdd: &Vector3<f64>,
        terms: Terms,
    ) -> Result<Vector3<f64>> {
        let mut r = Vector3::zeros();
        if matches!(terms, Terms::Kinematic | Terms::Both) {
            let d = self.wrist.derivatives(q)?;
            r += kinematic_from(&d).0 * qdd + d.grad_f * qd.dot(&(d.hess_f * qd)) + d.grad_g * qd.dot(&(d.hess_g * qd));
        }
        if matches!(terms, Terms::Obstacle | Terms::Both) && self.sigma_q > 0.0 {
            let diff = q - self.obstacles.nearest(q)?;
            let dist = diff.norm();
            if dist == 0.0 {
                return Err(Error::AtBoundary);
            }
            let s = self.sigma_q;
            let bracket = qd * qd.transpose() - Matrix3::identity() * (0.5 * qd.norm_squared());
            r += qdd * (s / dist) - bracket * diff * (s / dist.powi(3));
        }
        Ok(r)
    }

    /// Residual along a sampled curve at `t`, with velocity and acceleration
    /// from central differences of step `h`.
    pub fn geodesic_residual_on<F: Fn(f64) -> Vector3<f64>>(
        &self,
        curve: F,
        t: f64,
        h: f64,
        terms: Terms,
    ) -> Result<Vector3<f64>> {
        if !(h > 0.0) {
            return Err(Error::InvalidParameter(format!("step must be > 0, got {h}")));
        }
        let (qm, q0, qp) = (curve(t - h), curve(t), curve(t + h));
        let qd = (qp - qm) / (2.0 * h);
        let qdd = (qp - q0 * 2.0 + qm) / (h * h);
        self.geodesic_residual(&q0, &qd, &qdd, terms)
    }
}

/// Trapezoidal length of a polyline under an arbitrary metric field.
pub fn path_length<F>(samples: &[Vector3<f64>], metric: F) -> Result<f64>
where
    F: Fn(&Vector3<f64>) -> Result<MetricTensor>,
{
    if samples.len() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: samples.len(),
        });
    }
    let gs = samples.iter().map(&metric).collect::<Result<Vec<_>>>()?;
    Ok(samples
        .windows(2)
        .zip(gs.windows(2))
        .map(|(q, g)| {
            let dq = q[1] - q[0];
            0.5 * (g[0].norm_of(&dq) + g[1].norm_of(&dq))
        })
        .sum())
}
