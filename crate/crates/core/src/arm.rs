//! Kinematics of the 5-DOF holder arm under the trocar (port) constraint.
//!
//! Joint layout (all angles in radians, lengths in millimetres):
//!
//! * `q1` yaws the whole arm about the vertical axis through the base.
//! * `q2` pitches link 2 (length `l2`) up from the horizontal plane.
//! * `q3` yaws link 3 (length `l3`) relative to link 2; link 3 stays
//!   horizontal. Joint 5 sits `d_x` further along link 3 and `d_z` below it.
//! * `q4` rolls the wrist about the link-3 axis, `q5` pitches the forceps
//!   down from that axis. The forceps shaft starts at the wrist centre
//!   `j5` and its tip lies `forceps_length` along the shaft.
//!
//! With the tip constrained to move through the port, the wrist angles are
//! functions of the first three joints: `q4 = f(q)`, `q5 = g(q)`. They are
//! found by Newton iteration on the port-to-shaft residual and
//! differentiated through the implicit function theorem.

use nalgebra::{Matrix2, Matrix3, Point3, Unit, Vector3, Vector5};

use crate::error::{Error, Result};
use crate::jet::{dot, Jet, Real};

/// Default joint ranges in degrees, `[min, max]` per joint.
pub const DEFAULT_LIMITS_DEG: [[f64; 2]; 5] = [
    [-150.0, 150.0],
    [0.0, 90.0],
    [-90.0, 0.0],
    [-90.0, 90.0],
    [-14.0, 104.0],
];

/// Port of the prostatectomy experiment; the default base placement is
/// expressed relative to it.
pub const EXPERIMENT_PORT: [f64; 3] = [750.0, 0.0, -300.0];

/// Default base position relative to the port, in mm: beside the port and
/// above it, so that tips on the -x side of the port and around the
/// vertical below it are reachable.
pub const DEFAULT_BASE_OFFSET: [f64; 3] = [0.0, 700.0, 225.0];

/// Default base yaw: with `q1 = 0` link 2 points along -y, toward the port.
pub const DEFAULT_BASE_YAW: f64 = -std::f64::consts::FRAC_PI_2;

const NEWTON_MAX_ITER: usize = 50;
const NEWTON_TOL: f64 = 1e-12;
const FD_STEP: f64 = 1e-6;
const DERIV_REL_TOL: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct ArmGeometry {
    pub l2: f64,
    pub l3: f64,
    pub d_x: f64,
    pub d_z: f64,
    pub forceps_length: f64,
    /// Joint ranges in radians.
    pub limits: [[f64; 2]; 5],
    /// Position of the joint-1/joint-2 axis intersection, mm.
    pub base: Point3<f64>,
    pub base_yaw: f64,
}

impl Default for ArmGeometry {
    fn default() -> Self {
        Self::placed_for_port(&Point3::from(EXPERIMENT_PORT))
    }
}

impl ArmGeometry {
    /// Default link dimensions with the base placed at the default offset
    /// from `port`.
    pub fn placed_for_port(port: &Point3<f64>) -> Self {
        let mut limits = [[0.0; 2]; 5];
        for (dst, src) in limits.iter_mut().zip(DEFAULT_LIMITS_DEG.iter()) {
            *dst = [src[0].to_radians(), src[1].to_radians()];
        }
        Self {
            l2: 400.0,
            l3: 400.0,
            d_x: 50.0,
            d_z: 50.0,
            forceps_length: 500.0,
            limits,
            base: port + Vector3::from(DEFAULT_BASE_OFFSET),
            base_yaw: DEFAULT_BASE_YAW,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("l2", self.l2),
            ("l3", self.l3),
            ("d_x", self.d_x),
            ("d_z", self.d_z),
            ("forceps_length", self.forceps_length),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter(format!("{name} must be > 0, got {v}")));
            }
        }
        for (i, [lo, hi]) in self.limits.iter().enumerate() {
            if !(lo < hi) {
                return Err(Error::InvalidParameter(format!(
                    "joint {} limits [{lo}, {hi}] are empty",
                    i + 1
                )));
            }
        }
        Ok(())
    }

    fn check_joint(&self, joint: usize, value: f64) -> Result<()> {
        let [lo, hi] = self.limits[joint];
        // rounding slack only
        let eps = 1e-12;
        if value.is_finite() && value >= lo - eps && value <= hi + eps {
            Ok(())
        } else {
            Err(Error::LimitViolation {
                joint: joint + 1,
                value_deg: value.to_degrees(),
                min_deg: lo.to_degrees(),
                max_deg: hi.to_degrees(),
            })
        }
    }

    fn within(&self, joint: usize, value: f64) -> bool {
        self.check_joint(joint, value).is_ok()
    }
}

/// Full joint vector `(q1, .., q5)`, validated against the joint limits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointConfig(Vector5<f64>);

impl JointConfig {
    pub fn new(q: [f64; 5], geom: &ArmGeometry) -> Result<Self> {
        for (i, v) in q.iter().enumerate() {
            geom.check_joint(i, *v)?;
        }
        Ok(Self(Vector5::from(q)))
    }

    pub fn as_vector(&self) -> &Vector5<f64> {
        &self.0
    }

    pub fn reduced(&self) -> ReducedConfig {
        ReducedConfig(Vector3::new(self.0[0], self.0[1], self.0[2]))
    }

    pub fn wrist(&self) -> (f64, f64) {
        (self.0[3], self.0[4])
    }

    pub fn to_degrees(&self) -> [f64; 5] {
        let mut out = [0.0; 5];
        for (o, v) in out.iter_mut().zip(self.0.iter()) {
            *o = v.to_degrees();
        }
        out
    }
}

/// Planning coordinates `(q1, q2, q3)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReducedConfig(pub Vector3<f64>);

impl ReducedConfig {
    /// Checked constructor: joints 1-3 must be within their limits.
    pub fn new(q: Vector3<f64>, geom: &ArmGeometry) -> Result<Self> {
        for i in 0..3 {
            geom.check_joint(i, q[i])?;
        }
        Ok(Self(q))
    }

    pub fn vector(&self) -> &Vector3<f64> {
        &self.0
    }
}

/// Wrist centre `j5` as a function of the first three joints.
pub fn wrist_center<T: Real>(geom: &ArmGeometry, q1: T, q2: T, q3: T) -> [T; 3] {
    let a1 = q1 + geom.base_yaw;
    let a3 = a1 + q3;
    let reach2 = q2.cos() * geom.l2;
    let reach3 = geom.l3 + geom.d_x;
    [
        a1.cos() * reach2 + a3.cos() * reach3 + geom.base.x,
        a1.sin() * reach2 + a3.sin() * reach3 + geom.base.y,
        q2.sin() * geom.l2 + (geom.base.z - geom.d_z),
    ]
}

/// Wrist frame columns `(shaft, lateral, normal)` for heading `a3`.
fn wrist_frame<T: Real>(a3: T, q4: T, q5: T) -> [[T; 3]; 3] {
    let (ca, sa) = (a3.cos(), a3.sin());
    let (c4, s4) = (q4.cos(), q4.sin());
    let (c5, s5) = (q5.cos(), q5.sin());
    let zero = T::cst(0.0);
    let rot = |v: [T; 3]| [ca * v[0] - sa * v[1], sa * v[0] + ca * v[1], v[2]];
    [
        rot([c5, s4 * s5, -(c4 * s5)]),
        rot([zero, c4, s4]),
        rot([s5, -(s4 * c5), c4 * c5]),
    ]
}

/// Port residual: the components of `port - j5` orthogonal to the shaft.
/// Its norm is the perpendicular distance from the port to the shaft line.
fn port_residual<T: Real>(geom: &ArmGeometry, port: &Point3<f64>, q: [T; 5]) -> [T; 2] {
    let j5 = wrist_center(geom, q[0], q[1], q[2]);
    let v = [T::cst(port.x) - j5[0], T::cst(port.y) - j5[1], T::cst(port.z) - j5[2]];
    let frame = wrist_frame(q[0] + q[2] + geom.base_yaw, q[3], q[4]);
    [dot(&frame[1], &v), dot(&frame[2], &v)]
}

fn to_vec<T: Real>(v: [T; 3]) -> Vector3<f64> {
    Vector3::new(v[0].value(), v[1].value(), v[2].value())
}

pub fn forward_kinematics(q: &JointConfig, geom: &ArmGeometry) -> Result<(Point3<f64>, Unit<Vector3<f64>>)> {
    for i in 0..5 {
        geom.check_joint(i, q.0[i])?;
    }
    Ok(fk_unchecked(q.0.as_slice(), geom))
}

fn fk_unchecked(q: &[f64], geom: &ArmGeometry) -> (Point3<f64>, Unit<Vector3<f64>>) {
    let j5 = to_vec(wrist_center(geom, q[0], q[1], q[2]));
    let frame = wrist_frame(q[0] + q[2] + geom.base_yaw, q[3], q[4]);
    let shaft = Unit::new_normalize(to_vec(frame[0]));
    (Point3::from(j5 + shaft.into_inner() * geom.forceps_length), shaft)
}

fn wrap_angle(a: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let mut r = a.rem_euclid(two_pi);
    if r > std::f64::consts::PI {
        r -= two_pi;
    }
    r
}

fn check_reduced(qr: &ReducedConfig, geom: &ArmGeometry) -> Result<()> {
    for i in 0..3 {
        geom.check_joint(i, qr.0[i])?;
    }
    Ok(())
}

/// Wrist angles `(f(q), g(q))` that put the port on the shaft line.
pub fn solve_rcm(qr: &ReducedConfig, port: &Point3<f64>, geom: &ArmGeometry) -> Result<(f64, f64)> {
    solve_rcm_seeded(qr, port, geom, None)
}

/// As [`solve_rcm`], starting Newton from `seed` (typically the solution at a
/// nearby configuration) instead of a coarse grid.
pub fn solve_rcm_seeded(
    qr: &ReducedConfig,
    port: &Point3<f64>,
    geom: &ArmGeometry,
    seed: Option<(f64, f64)>,
) -> Result<(f64, f64)> {
    check_reduced(qr, geom)?;
    let q = qr.0;
    let j5 = to_vec(wrist_center(geom, q[0], q[1], q[2]));
    let v = port.coords - j5;
    let dist = v.norm();
    if dist < 1e-9 {
        return Err(Error::NoSolution("port coincides with the wrist centre".into()));
    }
    if dist >= geom.forceps_length {
        return Err(Error::NoSolution(format!(
            "port is {dist:.1} mm from the wrist, beyond the {:.1} mm forceps",
            geom.forceps_length
        )));
    }
    let heading = q[0] + q[2] + geom.base_yaw;
    let vhat = v / dist;

    let mut w = match seed {
        Some(s) => [s.0, s.1],
        None => grid_seed(heading, &vhat),
    };
    let eval = |w: [f64; 2]| -> ([f64; 2], Matrix2<f64>) {
        let jets = [
            Jet::<2>::constant(q[0]),
            Jet::constant(q[1]),
            Jet::constant(q[2]),
            Jet::var(w[0], 0),
            Jet::var(w[1], 1),
        ];
        let r = port_residual(geom, port, jets);
        (
            [r[0].v, r[1].v],
            Matrix2::new(r[0].g[0], r[0].g[1], r[1].g[0], r[1].g[1]),
        )
    };
    let norm2 = |r: [f64; 2]| (r[0] * r[0] + r[1] * r[1]).sqrt();

    let (mut r, mut jac) = eval(w);
    let mut res = norm2(r);
    let mut iter = 0;
    while res > NEWTON_TOL {
        if iter == NEWTON_MAX_ITER {
            return Err(Error::NonConvergence {
                iterations: iter,
                residual: res,
            });
        }
        iter += 1;
        let step = jac
            .try_inverse()
            .map(|inv| inv * nalgebra::Vector2::new(r[0], r[1]))
            .ok_or_else(|| Error::NoSolution("wrist jacobian singular".into()))?;
        let mut scale = 1.0;
        loop {
            let cand = [w[0] - scale * step[0], w[1] - scale * step[1]];
            let (rc, jc) = eval(cand);
            let rn = norm2(rc);
            if rn < res || scale < 1e-6 {
                w = cand;
                r = rc;
                jac = jc;
                res = rn;
                break;
            }
            scale *= 0.5;
        }
    }

    let shaft = to_vec(wrist_frame(heading, w[0], w[1])[0]);
    if shaft.dot(&v) <= 0.0 {
        return Err(Error::NoSolution("shaft points away from the port".into()));
    }
    pick_wrist_branch(wrap_angle(w[0]), wrap_angle(w[1]), geom)
}

/// Best-aligned shaft direction on a coarse (q4, q5) grid.
fn grid_seed(heading: f64, vhat: &Vector3<f64>) -> [f64; 2] {
    let mut best = ([0.0, 0.5 * std::f64::consts::PI], f64::NEG_INFINITY);
    for i in 0..16 {
        let q4 = -std::f64::consts::PI + i as f64 * std::f64::consts::TAU / 16.0;
        for k in 0..8 {
            let q5 = (k as f64 + 0.5) * std::f64::consts::PI / 8.0;
            let d = to_vec(wrist_frame(heading, q4, q5)[0]);
            let a = d.dot(vhat);
            if a > best.1 {
                best = ([q4, q5], a);
            }
        }
    }
    best.0
}

/// `(q4, q5)` and `(q4 + pi, -q5)` give the same shaft; keep whichever is
/// within limits.
fn pick_wrist_branch(q4: f64, q5: f64, geom: &ArmGeometry) -> Result<(f64, f64)> {
    let alt = (wrap_angle(q4 + std::f64::consts::PI), -q5);
    for (a, b) in [(q4, q5), alt] {
        if geom.within(3, a) && geom.within(4, b) {
            return Ok((a, b));
        }
    }
    geom.check_joint(3, q4)?;
    geom.check_joint(4, q5)?;
    unreachable!("one of the wrist limits must have failed")
}

pub fn lift(qr: &ReducedConfig, port: &Point3<f64>, geom: &ArmGeometry) -> Result<JointConfig> {
    let (f, g) = solve_rcm(qr, port, geom)?;
    let q = qr.0;
    JointConfig::new([q[0], q[1], q[2], f, g], geom)
}

pub fn lift_seeded(
    qr: &ReducedConfig,
    port: &Point3<f64>,
    geom: &ArmGeometry,
    seed: Option<(f64, f64)>,
) -> Result<JointConfig> {
    let (f, g) = solve_rcm_seeded(qr, port, geom, seed)?;
    let q = qr.0;
    JointConfig::new([q[0], q[1], q[2], f, g], geom)
}

/// Tool tip of the lifted configuration.
pub fn tip_of(qr: &ReducedConfig, port: &Point3<f64>, geom: &ArmGeometry) -> Result<Point3<f64>> {
    let q = lift(qr, port, geom)?;
    Ok(fk_unchecked(q.0.as_slice(), geom).0)
}

/// Inverse kinematics with the shaft through `port`. Among branches inside
/// the joint limits the one of smallest norm is returned.
pub fn inverse_kinematics(tip: &Point3<f64>, port: &Point3<f64>, geom: &ArmGeometry) -> Result<JointConfig> {
    let u = port - tip;
    let rho = u.norm();
    if rho < 1e-9 {
        return Err(Error::NoSolution("tip coincides with the port".into()));
    }
    if rho >= geom.forceps_length {
        return Err(Error::NoSolution(format!(
            "tip is {rho:.1} mm from the port, beyond the forceps length"
        )));
    }
    let j5 = tip.coords + u * (geom.forceps_length / rho);

    let s2 = (j5.z - geom.base.z + geom.d_z) / geom.l2;
    if s2.abs() > 1.0 {
        return Err(Error::NoSolution("wrist height out of shoulder reach".into()));
    }
    let reach3 = geom.l3 + geom.d_x;
    let px = j5.x - geom.base.x;
    let py = j5.y - geom.base.y;
    let planar2 = px * px + py * py;

    let mut candidates = Vec::new();
    let mut first_err: Option<Error> = None;
    let mut geometric = false;
    for q2 in [s2.asin(), std::f64::consts::PI - s2.asin()] {
        let reach2 = geom.l2 * q2.cos();
        let c3 = (planar2 - reach2 * reach2 - reach3 * reach3) / (2.0 * reach2 * reach3);
        if !c3.is_finite() || c3.abs() > 1.0 {
            continue;
        }
        geometric = true;
        let a3 = c3.acos();
        for q3 in [-a3, a3] {
            let a1 = py.atan2(px) - (reach3 * q3.sin()).atan2(reach2 + reach3 * q3.cos());
            let q1 = wrap_angle(a1 - geom.base_yaw);
            let attempt =
                ReducedConfig::new(Vector3::new(q1, wrap_angle(q2), q3), geom).and_then(|qr| lift(&qr, port, geom));
            match attempt {
                Ok(q) => {
                    let (t, _) = fk_unchecked(q.0.as_slice(), geom);
                    if (t - tip).norm() <= 1e-6 {
                        candidates.push(q);
                    }
                }
                Err(e) => {
                    first_err.get_or_insert(e);
                }
            }
        }
    }
    if !geometric {
        return Err(Error::NoSolution("wrist centre out of arm reach".into()));
    }
    candidates
        .into_iter()
        .min_by(|a, b| a.0.norm().total_cmp(&b.0.norm()))
        .ok_or_else(|| first_err.unwrap_or_else(|| Error::NoSolution("no branch reproduces the tip".into())))
}

/// First and second derivatives of the wrist functions `f`, `g`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WristDerivatives {
    pub grad_f: Vector3<f64>,
    pub grad_g: Vector3<f64>,
    pub hess_f: Matrix3<f64>,
    pub hess_g: Matrix3<f64>,
}

/// Implicit-function derivatives of `(f, g)` at a solved configuration.
pub fn implicit_derivatives(
    qr: &ReducedConfig,
    w: (f64, f64),
    port: &Point3<f64>,
    geom: &ArmGeometry,
) -> Result<WristDerivatives> {
    let q = qr.0;
    let jets: [Jet<5>; 5] = [
        Jet::var(q[0], 0),
        Jet::var(q[1], 1),
        Jet::var(q[2], 2),
        Jet::var(w.0, 3),
        Jet::var(w.1, 4),
    ];
    let r = port_residual(geom, port, jets);
    let rw = Matrix2::new(r[0].g[3], r[0].g[4], r[1].g[3], r[1].g[4]);
    let rw_inv = rw
        .try_inverse()
        .ok_or_else(|| Error::NoSolution("wrist jacobian singular".into()))?;
    let mut grad = [Vector3::zeros(); 2];
    for (a, ga) in grad.iter_mut().enumerate() {
        for i in 0..3 {
            ga[i] = -(rw_inv[(a, 0)] * r[0].g[i] + rw_inv[(a, 1)] * r[1].g[i]);
        }
    }
    // d(q, w)/dq, 5x3
    let col = |j: usize, i: usize| -> f64 {
        match j {
            0..=2 => f64::from(j == i),
            3 => grad[0][i],
            _ => grad[1][i],
        }
    };
    let mut pulled = [Matrix3::zeros(); 2];
    for (k, t) in pulled.iter_mut().enumerate() {
        for i in 0..3 {
            for l in 0..3 {
                let mut s = 0.0;
                for a in 0..5 {
                    for b in 0..5 {
                        s += col(a, i) * r[k].h[a][b] * col(b, l);
                    }
                }
                t[(i, l)] = s;
            }
        }
    }
    let hess_f = -(pulled[0] * rw_inv[(0, 0)] + pulled[1] * rw_inv[(0, 1)]);
    let hess_g = -(pulled[0] * rw_inv[(1, 0)] + pulled[1] * rw_inv[(1, 1)]);
    Ok(WristDerivatives {
        grad_f: grad[0],
        grad_g: grad[1],
        hess_f,
        hess_g,
    })
}

fn rel_err_vec(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let scale: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / scale.max(1e-3)
}

fn shifted(qr: &ReducedConfig, i: usize, h: f64) -> ReducedConfig {
    let mut q = qr.0;
    q[i] += h;
    ReducedConfig(q)
}

/// Central-difference gradients of `(f, g)` with step `FD_STEP`.
pub fn grad_fg_fd(qr: &ReducedConfig, port: &Point3<f64>, geom: &ArmGeometry) -> Result<(Vector3<f64>, Vector3<f64>)> {
    let w0 = solve_rcm(qr, port, geom)?;
    fd_grad_around(qr, w0, port, geom)
}

fn fd_grad_around(
    qr: &ReducedConfig,
    w0: (f64, f64),
    port: &Point3<f64>,
    geom: &ArmGeometry,
) -> Result<(Vector3<f64>, Vector3<f64>)> {
    let mut gf = Vector3::zeros();
    let mut gg = Vector3::zeros();
    for i in 0..3 {
        // limit checks are skipped so the stencil may straddle a bound
        let plus = solve_unchecked(&shifted(qr, i, FD_STEP), port, geom, w0)?;
        let minus = solve_unchecked(&shifted(qr, i, -FD_STEP), port, geom, w0)?;
        gf[i] = (plus.0 - minus.0) / (2.0 * FD_STEP);
        gg[i] = (plus.1 - minus.1) / (2.0 * FD_STEP);
    }
    Ok((gf, gg))
}

/// Newton on the residual with relaxed joint limits, for stencils.
fn solve_unchecked(qr: &ReducedConfig, port: &Point3<f64>, geom: &ArmGeometry, seed: (f64, f64)) -> Result<(f64, f64)> {
    let mut relaxed = geom.clone();
    for l in relaxed.limits.iter_mut() {
        *l = [-10.0, 10.0];
    }
    let (a, b) = solve_rcm_seeded(qr, port, &relaxed, Some(seed))?;
    // stay on the seed's branch
    if (a - seed.0).abs() > 1.0 || (b - seed.1).abs() > 1.0 {
        let alt = (wrap_angle(a + std::f64::consts::PI), -b);
        return Ok(alt);
    }
    Ok((a, b))
}

/// Gradients of the implicit wrist functions, cross-checked against
/// central differences.
pub fn grad_fg(qr: &ReducedConfig, port: &Point3<f64>, geom: &ArmGeometry) -> Result<(Vector3<f64>, Vector3<f64>)> {
    let w = solve_rcm(qr, port, geom)?;
    let d = implicit_derivatives(qr, w, port, geom)?;
    let (ff, fg) = fd_grad_around(qr, w, port, geom)?;
    let err = rel_err_vec(
        &[d.grad_f.as_slice(), d.grad_g.as_slice()].concat(),
        &[ff.as_slice(), fg.as_slice()].concat(),
    );
    if err > DERIV_REL_TOL {
        return Err(Error::DerivativeInconsistency {
            what: "grad_fg",
            rel_err: err,
        });
    }
    Ok((d.grad_f, d.grad_g))
}

/// Hessians of the implicit wrist functions, cross-checked against central
/// differences of the analytic gradient.
pub fn hess_fg(qr: &ReducedConfig, port: &Point3<f64>, geom: &ArmGeometry) -> Result<(Matrix3<f64>, Matrix3<f64>)> {
    let w = solve_rcm(qr, port, geom)?;
    let d = implicit_derivatives(qr, w, port, geom)?;
    let mut fd_f = Matrix3::zeros();
    let mut fd_g = Matrix3::zeros();
    for i in 0..3 {
        let qp = shifted(qr, i, FD_STEP);
        let qm = shifted(qr, i, -FD_STEP);
        let dp = implicit_derivatives(&qp, solve_unchecked(&qp, port, geom, w)?, port, geom)?;
        let dm = implicit_derivatives(&qm, solve_unchecked(&qm, port, geom, w)?, port, geom)?;
        fd_f.set_column(i, &((dp.grad_f - dm.grad_f) / (2.0 * FD_STEP)));
        fd_g.set_column(i, &((dp.grad_g - dm.grad_g) / (2.0 * FD_STEP)));
    }
    let err = rel_err_vec(
        &[d.hess_f.as_slice(), d.hess_g.as_slice()].concat(),
        &[fd_f.as_slice(), fd_g.as_slice()].concat(),
    );
    if err > DERIV_REL_TOL {
        return Err(Error::DerivativeInconsistency {
            what: "hess_fg",
            rel_err: err,
        });
    }
    Ok((d.hess_f, d.hess_g))
}

/// Tool tip as a function of `(q1, q2, q3)` with the shaft through the port,
/// carried to second order.
pub fn tip_jet(qr: &ReducedConfig, port: &Point3<f64>, geom: &ArmGeometry) -> [Jet<3>; 3] {
    let q = qr.0;
    let j5 = wrist_center(geom, Jet::var(q[0], 0), Jet::var(q[1], 1), Jet::var(q[2], 2));
    let v = [
        Jet::constant(port.x) - j5[0],
        Jet::constant(port.y) - j5[1],
        Jet::constant(port.z) - j5[2],
    ];
    let scale = dot(&v, &v).sqrt().recip() * geom.forceps_length;
    [j5[0] + v[0] * scale, j5[1] + v[1] * scale, j5[2] + v[2] * scale]
}

/// `d(tip)/d(q1, q2, q3)` with the port constraint applied.
pub fn tip_jacobian(qr: &ReducedConfig, port: &Point3<f64>, geom: &ArmGeometry) -> Matrix3<f64> {
    let t = tip_jet(qr, port, geom);
    Matrix3::from_fn(|r, c| t[r].g[c])
}
