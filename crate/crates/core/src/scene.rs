//! Position-space environment: analytic implicit surfaces for the cavity
//! wall and organs, rays cast from the port, and nearest-boundary queries.

use nalgebra::{Matrix3, Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::{FRAC_PI_2, PI, TAU};

use crate::error::{Error, Result};

/// Default number of boundary samples used for nearest-point queries.
pub const DEFAULT_BOUNDARY_SAMPLES: usize = 5000;
const BOUNDARY_SAMPLE_SEED: u64 = 0x5eed_0a11;
const RAY_STEP: f64 = 1.0;
const RAY_TOL: f64 = 1e-6;

/// Analytic shape of an implicit surface. `F < 0` inside.
#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    Sphere {
        center: Point3<f64>,
        radius: f64,
    },
    Ellipsoid {
        center: Point3<f64>,
        radii: Vector3<f64>,
    },
    /// Ball whose lower cap (below `rim_z`) is the cavity wall.
    HemisphericalCavity {
        center: Point3<f64>,
        radius: f64,
        rim_z: f64,
    },
    Union(Vec<ImplicitSurface>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImplicitSurface {
    pub shape: Shape,
}

impl ImplicitSurface {
    pub fn sphere(center: Point3<f64>, radius: f64) -> Self {
        Self {
            shape: Shape::Sphere { center, radius },
        }
    }

    pub fn ellipsoid(center: Point3<f64>, radii: Vector3<f64>) -> Self {
        Self {
            shape: Shape::Ellipsoid { center, radii },
        }
    }

    pub fn tag(&self) -> &'static str {
        match self.shape {
            Shape::Sphere { .. } => "sphere",
            Shape::Ellipsoid { .. } => "ellipsoid",
            Shape::HemisphericalCavity { .. } => "hemispherical-cavity",
            Shape::Union(_) => "union",
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |what: String| Err(Error::InvalidParameter(what));
        match &self.shape {
            Shape::Sphere { radius, .. } | Shape::HemisphericalCavity { radius, .. } => {
                if !(radius.is_finite() && *radius > 0.0) {
                    return bad(format!("radius must be > 0, got {radius}"));
                }
            }
            Shape::Ellipsoid { radii, .. } => {
                if radii.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
                    return bad(format!("ellipsoid radii must be > 0, got {radii:?}"));
                }
            }
            Shape::Union(parts) => {
                if parts.is_empty() {
                    return bad("empty union".into());
                }
                for p in parts {
                    p.validate()?;
                }
            }
        }
        Ok(())
    }

    /// Signed value, scaled so that `|grad F| ~ 1` on the zero set.
    pub fn value(&self, x: &Point3<f64>) -> f64 {
        match &self.shape {
            Shape::Sphere { center, radius } | Shape::HemisphericalCavity { center, radius, .. } => {
                ((x - center).norm_squared() - radius * radius) / (2.0 * radius)
            }
            Shape::Ellipsoid { center, radii } => {
                let d = x - center;
                let s = radii.min();
                let q: f64 = (0..3).map(|i| (d[i] / radii[i]).powi(2)).sum();
                0.5 * s * (q - 1.0)
            }
            Shape::Union(parts) => parts.iter().map(|p| p.value(x)).fold(f64::INFINITY, f64::min),
        }
    }

    pub fn gradient(&self, x: &Point3<f64>) -> Vector3<f64> {
        match &self.shape {
            Shape::Sphere { center, radius } | Shape::HemisphericalCavity { center, radius, .. } => {
                (x - center) / *radius
            }
            Shape::Ellipsoid { center, radii } => {
                let d = x - center;
                let s = radii.min();
                Vector3::from_fn(|i, _| s * d[i] / (radii[i] * radii[i]))
            }
            Shape::Union(parts) => self.active(parts, x).gradient(x),
        }
    }

    pub fn hessian(&self, x: &Point3<f64>) -> Matrix3<f64> {
        match &self.shape {
            Shape::Sphere { radius, .. } | Shape::HemisphericalCavity { radius, .. } => Matrix3::identity() / *radius,
            Shape::Ellipsoid { radii, .. } => {
                let s = radii.min();
                Matrix3::from_diagonal(&Vector3::from_fn(|i, _| s / (radii[i] * radii[i])))
            }
            Shape::Union(parts) => self.active(parts, x).hessian(x),
        }
    }

    fn active<'a>(&self, parts: &'a [ImplicitSurface], x: &Point3<f64>) -> &'a ImplicitSurface {
        parts
            .iter()
            .min_by(|a, b| a.value(x).total_cmp(&b.value(x)))
            .expect("validated non-empty union")
    }

    fn area(&self) -> f64 {
        match &self.shape {
            Shape::Sphere { radius, .. } => 4.0 * PI * radius * radius,
            Shape::HemisphericalCavity { center, radius, rim_z } => {
                // spherical cap below rim_z
                let h = (rim_z - (center.z - radius)).clamp(0.0, 2.0 * radius);
                TAU * radius * h
            }
            Shape::Ellipsoid { radii, .. } => {
                // Knud Thomsen approximation, < 1.1% error
                let p = 1.6075;
                let (a, b, c) = (radii.x.powf(p), radii.y.powf(p), radii.z.powf(p));
                4.0 * PI * ((a * b + a * c + b * c) / 3.0).powf(1.0 / p)
            }
            Shape::Union(parts) => parts.iter().map(|p| p.area()).sum(),
        }
    }

    /// Area-uniform random point on the surface (or `None` when the
    /// proposal is rejected).
    fn sample_point(&self, rng: &mut ChaCha8Rng) -> Option<Point3<f64>> {
        let u = random_unit(rng);
        match &self.shape {
            Shape::Sphere { center, radius } => Some(center + u * *radius),
            Shape::HemisphericalCavity { center, radius, rim_z } => {
                let x = center + u * *radius;
                (x.z < *rim_z).then_some(x)
            }
            Shape::Ellipsoid { center, radii } => {
                // map the sphere to the ellipsoid; accept proportional to the
                // local area stretch
                let stretch = (u.x * radii.y * radii.z).powi(2)
                    + (u.y * radii.x * radii.z).powi(2)
                    + (u.z * radii.x * radii.y).powi(2);
                let max = [radii.y * radii.z, radii.x * radii.z, radii.x * radii.y]
                    .into_iter()
                    .fold(0.0, f64::max);
                (rng.gen::<f64>() * max <= stretch.sqrt()).then(|| center + u.component_mul(radii))
            }
            Shape::Union(parts) => {
                let total: f64 = parts.iter().map(|p| p.area()).sum();
                let mut pick = rng.gen::<f64>() * total;
                for p in parts {
                    pick -= p.area();
                    if pick <= 0.0 {
                        return p.sample_point(rng);
                    }
                }
                parts.last().and_then(|p| p.sample_point(rng))
            }
        }
    }
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    let z: f64 = rng.gen_range(-1.0..1.0);
    let phi: f64 = rng.gen_range(0.0..TAU);
    let s = (1.0 - z * z).sqrt();
    Vector3::new(s * phi.cos(), s * phi.sin(), z)
}

/// Direction `(theta, phi)` in the lower half-sphere around the port.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphericalDirection {
    theta: f64,
    phi: f64,
}

impl SphericalDirection {
    pub fn new(theta: f64, phi: f64) -> Result<Self> {
        if !(FRAC_PI_2..=PI).contains(&theta) || !(0.0..TAU).contains(&phi) {
            return Err(Error::InvalidParameter(format!(
                "direction ({theta}, {phi}) outside [pi/2, pi] x [0, 2pi)"
            )));
        }
        Ok(Self { theta, phi })
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn phi(&self) -> f64 {
        self.phi
    }

    pub fn unit(&self) -> Vector3<f64> {
        let (st, ct) = self.theta.sin_cos();
        let (sp, cp) = self.phi.sin_cos();
        Vector3::new(st * cp, st * sp, ct)
    }
}

/// Which surface a boundary point belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum SurfaceRef {
    Cavity,
    Organ(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayHit {
    pub r: f64,
    pub point: Point3<f64>,
    pub surface: SurfaceRef,
}

#[derive(Debug, Clone)]
pub struct Scene {
    pub name: String,
    pub port: Point3<f64>,
    pub cavity: ImplicitSurface,
    pub organs: Vec<ImplicitSurface>,
    /// Length scale (forceps length) bounding ray marching, mm.
    pub length_scale: f64,
    boundary_samples: Vec<Point3<f64>>,
}

impl Scene {
    pub fn new(
        name: impl Into<String>,
        port: Point3<f64>,
        cavity: ImplicitSurface,
        organs: Vec<ImplicitSurface>,
        length_scale: f64,
        boundary_sample_count: usize,
    ) -> Result<Self> {
        cavity.validate()?;
        for o in &organs {
            o.validate()?;
        }
        if !(length_scale.is_finite() && length_scale > 0.0) {
            return Err(Error::InvalidParameter(format!("length scale {length_scale}")));
        }
        if boundary_sample_count < 4 {
            return Err(Error::InvalidParameter(format!(
                "need at least 4 boundary samples, got {boundary_sample_count}"
            )));
        }
        let mut scene = Self {
            name: name.into(),
            port,
            cavity,
            organs,
            length_scale,
            boundary_samples: Vec::new(),
        };
        if scene.clearance(&port) <= 0.0 {
            return Err(Error::InvalidParameter(
                "port must lie strictly inside the free cavity".into(),
            ));
        }
        scene.boundary_samples = scene.sample_boundary(boundary_sample_count)?;
        Ok(scene)
    }

    /// Signed free-space value: positive in the free region, zero on the
    /// forbidden boundary.
    pub fn clearance(&self, x: &Point3<f64>) -> f64 {
        self.organs
            .iter()
            .map(|o| o.value(x))
            .fold(-self.cavity.value(x), f64::min)
    }

    /// Free-side oriented implicit value of one surface (positive in free
    /// space near it).
    pub fn free_side_value(&self, s: SurfaceRef, x: &Point3<f64>) -> f64 {
        match s {
            SurfaceRef::Cavity => -self.cavity.value(x),
            SurfaceRef::Organ(i) => self.organs[i].value(x),
        }
    }

    pub fn free_side_gradient(&self, s: SurfaceRef, x: &Point3<f64>) -> Vector3<f64> {
        match s {
            SurfaceRef::Cavity => -self.cavity.gradient(x),
            SurfaceRef::Organ(i) => self.organs[i].gradient(x),
        }
    }

    pub fn free_side_hessian(&self, s: SurfaceRef, x: &Point3<f64>) -> Matrix3<f64> {
        match s {
            SurfaceRef::Cavity => -self.cavity.hessian(x),
            SurfaceRef::Organ(i) => self.organs[i].hessian(x),
        }
    }

    /// Surface that is closest to being violated at `x`.
    pub fn active_surface(&self, x: &Point3<f64>) -> SurfaceRef {
        let mut best = (SurfaceRef::Cavity, -self.cavity.value(x));
        for (i, o) in self.organs.iter().enumerate() {
            let v = o.value(x);
            if v < best.1 {
                best = (SurfaceRef::Organ(i), v);
            }
        }
        best.0
    }

    pub fn is_free(&self, x: &Point3<f64>) -> bool {
        self.clearance(x) > 0.0
    }

    /// Tips are expected below the port plane.
    pub fn is_free_tip(&self, x: &Point3<f64>) -> bool {
        x.z < self.port.z && self.is_free(x)
    }

    pub fn boundary_samples(&self) -> &[Point3<f64>] {
        &self.boundary_samples
    }

    /// Boundary samples as a Wavefront OBJ point cloud, mm.
    pub fn write_samples_obj<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# {} boundary samples, x y z in mm", self.name)?;
        for p in &self.boundary_samples {
            writeln!(w, "v {:.9} {:.9} {:.9}", p.x, p.y, p.z)?;
        }
        Ok(())
    }

    fn on_boundary(&self, x: &Point3<f64>, own: SurfaceRef) -> bool {
        let cavity_ok = own == SurfaceRef::Cavity || self.cavity.value(x) < 0.0;
        cavity_ok
            && self
                .organs
                .iter()
                .enumerate()
                .all(|(i, o)| own == SurfaceRef::Organ(i) || o.value(x) > 0.0)
    }

    fn sample_boundary(&self, n: usize) -> Result<Vec<Point3<f64>>> {
        let mut rng = ChaCha8Rng::seed_from_u64(BOUNDARY_SAMPLE_SEED);
        let mut surfaces: Vec<(SurfaceRef, &ImplicitSurface)> = vec![(SurfaceRef::Cavity, &self.cavity)];
        surfaces.extend(self.organs.iter().enumerate().map(|(i, o)| (SurfaceRef::Organ(i), o)));
        let areas: Vec<f64> = surfaces.iter().map(|(_, s)| s.area()).collect();
        let total: f64 = areas.iter().sum();
        let mut out = Vec::with_capacity(n);
        let budget = 1000 * n;
        let mut attempts = 0;
        while out.len() < n {
            attempts += 1;
            if attempts > budget {
                return Err(Error::RejectionBudgetExceeded {
                    requested: n,
                    accepted: out.len(),
                    attempts,
                });
            }
            let mut pick = rng.gen::<f64>() * total;
            let mut idx = surfaces.len() - 1;
            for (i, a) in areas.iter().enumerate() {
                if pick <= *a {
                    idx = i;
                    break;
                }
                pick -= a;
            }
            let (own, surf) = surfaces[idx];
            if let Some(x) = surf.sample_point(&mut rng) {
                if self.on_boundary(&x, own) {
                    out.push(x);
                }
            }
        }
        Ok(out)
    }

    /// First boundary crossing along the ray from the port.
    pub fn ray_cast(&self, dir: &SphericalDirection) -> Result<RayHit> {
        let e = dir.unit();
        let at = |t: f64| self.port + e * t;
        let max_range = 4.0 * self.length_scale;
        let mut lo = 0.0;
        let mut hi = RAY_STEP;
        while self.clearance(&at(hi)) > 0.0 {
            lo = hi;
            hi += RAY_STEP;
            if hi > max_range {
                return Err(Error::NoHit {
                    theta: dir.theta,
                    phi: dir.phi,
                    max_range,
                });
            }
        }
        while hi - lo > RAY_TOL {
            let mid = 0.5 * (lo + hi);
            if self.clearance(&at(mid)) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let r = 0.5 * (lo + hi);
        let point = at(r);
        Ok(RayHit {
            r,
            point,
            surface: self.active_surface(&point),
        })
    }

    /// Closest boundary sample to `x`, by exhaustive scan.
    pub fn nearest_boundary_point(&self, x: &Point3<f64>) -> Result<(Point3<f64>, f64)> {
        nearest_sample(&self.boundary_samples, x)
    }
}

pub(crate) fn nearest_sample(samples: &[Point3<f64>], x: &Point3<f64>) -> Result<(Point3<f64>, f64)> {
    let mut best: Option<(Point3<f64>, f64)> = None;
    for s in samples {
        let d = (s - x).norm_squared();
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((*s, d));
        }
    }
    best.map(|(p, d)| (p, d.sqrt()))
        .ok_or(Error::Empty("boundary sample set"))
}

/// Prostatectomy mimic: hemispherical cavity of radius `k * L` under the
/// port with a spherical bladder `0.3 L` below the port, radius `0.15 L`.
pub fn make_hemisphere_scene(length: f64, k: f64, port: Point3<f64>) -> Result<Scene> {
    make_hemisphere_scene_with(length, k, port, 0.0, DEFAULT_BOUNDARY_SAMPLES)
}

/// As [`make_hemisphere_scene`] with the cap centre `d` above the port and
/// a chosen boundary sample count.
pub fn make_hemisphere_scene_with(length: f64, k: f64, port: Point3<f64>, d: f64, samples: usize) -> Result<Scene> {
    if !(k > 0.0 && k <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "cavity ratio k = {k} must be in (0, 1]"
        )));
    }
    if !(length.is_finite() && length > 0.0) {
        return Err(Error::InvalidParameter(format!("forceps length {length}")));
    }
    let radius = k * length;
    if d.abs() >= radius {
        return Err(Error::InvalidParameter(format!(
            "cap offset {d} exceeds radius {radius}"
        )));
    }
    let center = port + Vector3::new(0.0, 0.0, d);
    let cavity = ImplicitSurface {
        shape: Shape::HemisphericalCavity {
            center,
            radius,
            rim_z: port.z,
        },
    };
    let bladder_center = port + Vector3::new(0.0, 0.0, -0.3 * length);
    let bladder_radius = 0.15 * length;
    if (bladder_center - center).norm() + bladder_radius >= radius {
        return Err(Error::InvalidParameter(format!(
            "k = {k} leaves no room for the bladder inside the cavity"
        )));
    }
    let bladder = ImplicitSurface::sphere(bladder_center, bladder_radius);
    Scene::new("hemisphere", port, cavity, vec![bladder], length, samples)
}

/// Cholecystectomy mimic: ellipsoidal cavity with liver and gallbladder.
///
/// The cavity centre sits at `p - c` so the liver is centred in it; that
/// places the nominal port `[400, 0, -320]` exactly on the cavity wall, so
/// the port used here is moved 1 mm inside along the wall normal.
pub fn make_cholecystectomy_scene() -> Result<Scene> {
    let s3 = 3f64.sqrt();
    let nominal_port = Point3::new(400.0, 0.0, -320.0);
    let c = Vector3::new(-100.0, 0.0, 50.0 * s3);
    let cavity = ImplicitSurface::ellipsoid(nominal_port - c, Vector3::new(200.0, 200.0, 100.0));
    let inward = -cavity.gradient(&nominal_port).normalize();
    let port = nominal_port + inward;
    let liver = ImplicitSurface::ellipsoid(
        Point3::new(500.0, 0.0, -320.0 - 50.0 * s3),
        Vector3::new(50.0, 60.0, 60.0),
    );
    let gallbladder = ImplicitSurface::ellipsoid(
        Point3::new(520.0, 0.0, -370.0 - 50.0 * s3),
        Vector3::new(50.0, 20.0, 20.0),
    );
    Scene::new(
        "cholecystectomy",
        port,
        cavity,
        vec![liver, gallbladder],
        500.0,
        DEFAULT_BOUNDARY_SAMPLES,
    )
}

/// Position-space edge cost with a clearance barrier on the midpoint.
pub fn baseline_edge_cost(a: &Point3<f64>, b: &Point3<f64>, scene: &Scene, sigma_x: f64) -> Result<f64> {
    if !(sigma_x >= 0.0) {
        return Err(Error::InvalidParameter(format!("sigma_x = {sigma_x} must be >= 0")));
    }
    let len = (b - a).norm();
    if len == 0.0 || sigma_x == 0.0 {
        return Ok(len);
    }
    let mid = Point3::from((a.coords + b.coords) * 0.5);
    let (_, dist) = scene.nearest_boundary_point(&mid)?;
    if dist == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(len * (1.0 + sigma_x / dist))
}
