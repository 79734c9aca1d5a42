//! Incremental (Bowyer-Watson) Delaunay tetrahedralization with exact
//! orientation and in-sphere predicates.

use std::collections::HashMap;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use robust::{insphere, orient3d, Coord3D};

use crate::error::{Error, Result};

/// Relative size of the deterministic perturbation that breaks
/// cospherical and coplanar ties.
const JITTER: f64 = 1e-10;
const JITTER_SEED: u64 = 0xde1a_0a11;
/// Half-size of the enclosing tetrahedron in normalized coordinates.
const SUPER_SCALE: f64 = 1e6;

#[derive(Debug, Clone, PartialEq)]
pub struct Tetrahedralization {
    /// Positively oriented tetrahedra over input indices.
    pub tets: Vec<[usize; 4]>,
    /// Unique edges `(a, b)` with `a < b`, sorted.
    pub edges: Vec<(usize, usize)>,
}

fn coord(p: &Vector3<f64>) -> Coord3D<f64> {
    Coord3D { x: p.x, y: p.y, z: p.z }
}

fn orient(p: &[Vector3<f64>], t: &[usize; 4]) -> f64 {
    orient3d(coord(&p[t[0]]), coord(&p[t[1]]), coord(&p[t[2]]), coord(&p[t[3]]))
}

/// Edges of the Delaunay tetrahedralization of `points`.
pub fn delaunay3(points: &[Vector3<f64>]) -> Result<Vec<(usize, usize)>> {
    Ok(tetrahedralize(points)?.edges)
}

pub fn tetrahedralize(points: &[Vector3<f64>]) -> Result<Tetrahedralization> {
    let n = points.len();
    if n < 4 {
        return Err(Error::DegenerateInput(format!("need at least 4 points, got {n}")));
    }
    if points.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
        return Err(Error::DegenerateInput("non-finite coordinate".into()));
    }
    check_duplicates(points)?;
    check_coplanar(points)?;

    let lo = points.iter().fold(Vector3::repeat(f64::INFINITY), |m, p| m.inf(p));
    let hi = points.iter().fold(Vector3::repeat(f64::NEG_INFINITY), |m, p| m.sup(p));
    let center = (lo + hi) * 0.5;
    let scale = (hi - lo).max();
    let mut rng = ChaCha8Rng::seed_from_u64(JITTER_SEED);
    let mut pts: Vec<Vector3<f64>> = points
        .iter()
        .map(|p| {
            let j = Vector3::from_fn(|_, _| rng.gen_range(-1.0..1.0));
            (p - center) / scale + j * JITTER
        })
        .collect();
    let s = SUPER_SCALE;
    pts.extend([
        Vector3::new(-s, -s, -s),
        Vector3::new(3.0 * s, -s, -s),
        Vector3::new(-s, 3.0 * s, -s),
        Vector3::new(-s, -s, 3.0 * s),
    ]);

    let mut mesh = Mesh::default();
    let mut first = [n, n + 1, n + 2, n + 3];
    if orient(&pts, &first) < 0.0 {
        first.swap(0, 1);
    }
    mesh.push(first, [None; 4]);
    for i in 0..n {
        mesh.insert(&pts, i)?;
    }

    let mut tets = Vec::new();
    let mut edges = Vec::new();
    for (t, alive) in mesh.verts.iter().zip(&mesh.alive) {
        if !alive || t.iter().any(|&v| v >= n) {
            continue;
        }
        tets.push(*t);
        for a in 0..4 {
            for b in a + 1..4 {
                edges.push((t[a].min(t[b]), t[a].max(t[b])));
            }
        }
    }
    edges.sort_unstable();
    edges.dedup();
    Ok(Tetrahedralization { tets, edges })
}

fn check_duplicates(points: &[Vector3<f64>]) -> Result<()> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    let key = |i: usize| [points[i].x, points[i].y, points[i].z];
    order.sort_by(|&a, &b| {
        let (ka, kb) = (key(a), key(b));
        ka[0]
            .total_cmp(&kb[0])
            .then(ka[1].total_cmp(&kb[1]))
            .then(ka[2].total_cmp(&kb[2]))
    });
    for w in order.windows(2) {
        if points[w[0]] == points[w[1]] {
            return Err(Error::DegenerateInput(format!(
                "duplicate points {} and {}",
                w[0].min(w[1]),
                w[0].max(w[1])
            )));
        }
    }
    Ok(())
}

fn check_coplanar(points: &[Vector3<f64>]) -> Result<()> {
    let a = points[0];
    let b = points[1];
    let Some(c) = points
        .iter()
        .max_by(|p, q| {
            (*p - a)
                .cross(&(b - a))
                .norm()
                .total_cmp(&(*q - a).cross(&(b - a)).norm())
        })
        .filter(|c| (*c - a).cross(&(b - a)).norm() > 0.0)
    else {
        return Err(Error::DegenerateInput("all points are collinear".into()));
    };
    if points
        .iter()
        .all(|d| orient3d(coord(&a), coord(&b), coord(c), coord(d)) == 0.0)
    {
        return Err(Error::DegenerateInput("all points are coplanar".into()));
    }
    Ok(())
}

#[derive(Default)]
struct Mesh {
    verts: Vec<[usize; 4]>,
    /// `neigh[t][j]` shares the face opposite vertex `j` of `t`.
    neigh: Vec<[Option<usize>; 4]>,
    alive: Vec<bool>,
}

impl Mesh {
    fn push(&mut self, v: [usize; 4], n: [Option<usize>; 4]) -> usize {
        self.verts.push(v);
        self.neigh.push(n);
        self.alive.push(true);
        self.verts.len() - 1
    }

    /// Visibility walk from the newest tetrahedron to one containing `p`.
    fn locate(&self, pts: &[Vector3<f64>], p: usize) -> Option<usize> {
        let mut t = (0..self.verts.len()).rev().find(|&t| self.alive[t])?;
        for _ in 0..self.verts.len() {
            let v = self.verts[t];
            let mut moved = false;
            for j in 0..4 {
                let mut w = v;
                w[j] = p;
                if orient(pts, &w) < 0.0 {
                    if let Some(nb) = self.neigh[t][j] {
                        t = nb;
                        moved = true;
                        break;
                    }
                }
            }
            if !moved {
                return Some(t);
            }
        }
        None
    }

    fn in_sphere(&self, pts: &[Vector3<f64>], t: usize, p: usize) -> bool {
        let v = self.verts[t];
        insphere(
            coord(&pts[v[0]]),
            coord(&pts[v[1]]),
            coord(&pts[v[2]]),
            coord(&pts[v[3]]),
            coord(&pts[p]),
        ) > 0.0
    }

    fn insert(&mut self, pts: &[Vector3<f64>], p: usize) -> Result<()> {
        let seed = self
            .locate(pts, p)
            .filter(|&t| self.in_sphere(pts, t, p))
            .or_else(|| (0..self.verts.len()).find(|&t| self.alive[t] && self.in_sphere(pts, t, p)))
            .ok_or_else(|| Error::DegenerateInput(format!("point {p} could not be located")))?;

        let mut in_cavity = HashMap::new();
        let mut cavity = vec![seed];
        in_cavity.insert(seed, ());
        let mut k = 0;
        while k < cavity.len() {
            let t = cavity[k];
            k += 1;
            for nb in self.neigh[t].into_iter().flatten() {
                if !in_cavity.contains_key(&nb) && self.in_sphere(pts, nb, p) {
                    in_cavity.insert(nb, ());
                    cavity.push(nb);
                }
            }
        }

        // faces containing p, keyed by their other two vertices
        let mut open: HashMap<(usize, usize), (usize, usize)> = HashMap::new();
        for &t in &cavity {
            for j in 0..4 {
                let outside = self.neigh[t][j];
                if outside.is_some_and(|nb| in_cavity.contains_key(&nb)) {
                    continue;
                }
                let v = self.verts[t];
                let mut face = [0; 3];
                let mut m = 0;
                for (i, &vi) in v.iter().enumerate() {
                    if i != j {
                        face[m] = vi;
                        m += 1;
                    }
                }
                let mut nv = [face[0], face[1], face[2], p];
                let o = orient(pts, &nv);
                if o == 0.0 {
                    return Err(Error::DegenerateInput(format!(
                        "point {p} is coplanar with a cavity face"
                    )));
                }
                if o < 0.0 {
                    nv.swap(0, 1);
                }
                let nt = self.push(nv, [None, None, None, outside]);
                if let Some(nb) = outside {
                    let slot = self.neigh[nb]
                        .iter()
                        .position(|x| *x == Some(t))
                        .expect("neighbour relation is symmetric");
                    self.neigh[nb][slot] = Some(nt);
                }
                for s in 0..3 {
                    let (a, b) = match s {
                        0 => (nv[1], nv[2]),
                        1 => (nv[0], nv[2]),
                        _ => (nv[0], nv[1]),
                    };
                    let key = (a.min(b), a.max(b));
                    if let Some((other, oslot)) = open.remove(&key) {
                        self.neigh[nt][s] = Some(other);
                        self.neigh[other][oslot] = Some(nt);
                    } else {
                        open.insert(key, (nt, s));
                    }
                }
            }
        }
        for &t in &cavity {
            self.alive[t] = false;
        }
        Ok(())
    }
}
