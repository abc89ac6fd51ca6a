//! 2-D Delaunay triangulation of chart positions, point location and
//! barycentric coordinates.
//!
//! Construction is incremental Bowyer–Watson. Instead of a finite
//! super-triangle the hull is closed with "ghost" triangles sharing a vertex
//! at infinity, which keeps every hull triangle (a finite bounding triangle
//! can swallow thin hull triangles). Orientation and in-circle tests are
//! exact: a floating-point filter with a big-integer fallback.

use std::collections::HashMap;
use std::io::Write;

use num_bigint::BigInt;

use crate::charting::ChartPosition;
use crate::error::{Error, Result};

/// Points closer than this are merged into a single vertex.
pub const DUPLICATE_EPS: f64 = 1e-9;

const INF: usize = usize::MAX;

mod predicates {
    use super::BigInt;
    use num_bigint::Sign;

    const EPS: f64 = f64::EPSILON / 2.0;
    const CCW_BOUND: f64 = (3.0 + 16.0 * EPS) * EPS;
    const ICC_BOUND: f64 = (10.0 + 96.0 * EPS) * EPS;

    /// `x = m * 2^e` exactly.
    fn decode(x: f64) -> (i64, i32) {
        if x == 0.0 {
            return (0, 0);
        }
        let bits = x.to_bits();
        let exp = ((bits >> 52) & 0x7ff) as i32;
        let frac = (bits & ((1u64 << 52) - 1)) as i64;
        let (m, e) = if exp == 0 {
            (frac, -1074)
        } else {
            (frac | (1i64 << 52), exp - 1075)
        };
        (if x < 0.0 { -m } else { m }, e)
    }

    /// Exact integers `v * 2^-e_min` for all inputs.
    fn to_exact<const N: usize>(vals: [f64; N]) -> [BigInt; N] {
        let decoded = vals.map(decode);
        let e_min = decoded
            .iter()
            .filter(|(m, _)| *m != 0)
            .map(|&(_, e)| e)
            .min()
            .unwrap_or(0);
        decoded.map(|(m, e)| BigInt::from(m) << ((e - e_min) as usize))
    }

    fn sign(b: &BigInt) -> i32 {
        match b.sign() {
            Sign::Minus => -1,
            Sign::NoSign => 0,
            Sign::Plus => 1,
        }
    }

    /// Sign of `(b - a) x (c - a)`: +1 when `a, b, c` turn counter-clockwise.
    pub fn orient(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> i32 {
        let left = (b[0] - a[0]) * (c[1] - a[1]);
        let right = (b[1] - a[1]) * (c[0] - a[0]);
        let det = left - right;
        let bound = CCW_BOUND * (left.abs() + right.abs());
        if det > bound {
            return 1;
        }
        if -det > bound {
            return -1;
        }
        let [ax, ay, bx, by, cx, cy] = to_exact([a[0], a[1], b[0], b[1], c[0], c[1]]);
        sign(&((&bx - &ax) * (&cy - &ay) - (&by - &ay) * (&cx - &ax)))
    }

    /// +1 when `d` lies strictly inside the circle through the
    /// counter-clockwise triangle `a, b, c`.
    pub fn incircle(a: [f64; 2], b: [f64; 2], c: [f64; 2], d: [f64; 2]) -> i32 {
        let (adx, ady) = (a[0] - d[0], a[1] - d[1]);
        let (bdx, bdy) = (b[0] - d[0], b[1] - d[1]);
        let (cdx, cdy) = (c[0] - d[0], c[1] - d[1]);
        let (bc1, bc2) = (bdx * cdy, cdx * bdy);
        let (ca1, ca2) = (cdx * ady, adx * cdy);
        let (ab1, ab2) = (adx * bdy, bdx * ady);
        let alift = adx * adx + ady * ady;
        let blift = bdx * bdx + bdy * bdy;
        let clift = cdx * cdx + cdy * cdy;
        let det = alift * (bc1 - bc2) + blift * (ca1 - ca2) + clift * (ab1 - ab2);
        let permanent = (bc1.abs() + bc2.abs()) * alift
            + (ca1.abs() + ca2.abs()) * blift
            + (ab1.abs() + ab2.abs()) * clift;
        let bound = ICC_BOUND * permanent;
        if det > bound {
            return 1;
        }
        if -det > bound {
            return -1;
        }
        let [ax, ay, bx, by, cx, cy, dx, dy] =
            to_exact([a[0], a[1], b[0], b[1], c[0], c[1], d[0], d[1]]);
        let (adx, ady) = (&ax - &dx, &ay - &dy);
        let (bdx, bdy) = (&bx - &dx, &by - &dy);
        let (cdx, cdy) = (&cx - &dx, &cy - &dy);
        let alift = &adx * &adx + &ady * &ady;
        let blift = &bdx * &bdx + &bdy * &bdy;
        let clift = &cdx * &cdx + &cdy * &cdy;
        let det = alift * (&bdx * &cdy - &cdx * &bdy)
            + blift * (&cdx * &ady - &adx * &cdy)
            + clift * (&adx * &bdy - &bdx * &ady);
        sign(&det)
    }
}

pub use predicates::{incircle, orient};

/// Result of [`Triangulation::locate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Location {
    Inside(usize),
    Outside,
}

/// Affine weights of a point relative to a triangle, summing to one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Barycentric(pub [f64; 3]);

/// Delaunay triangulation over deduplicated chart positions.
#[derive(Debug, Clone)]
pub struct Triangulation {
    points: Vec<[f64; 2]>,
    /// Dataset index of each vertex.
    labels: Vec<usize>,
    /// Counter-clockwise vertex triples.
    triangles: Vec<[usize; 3]>,
    /// `neighbors[t][k]` lies across the edge opposite vertex `k`.
    neighbors: Vec<[Option<usize>; 3]>,
    vertex_triangles: Vec<Vec<usize>>,
}

struct Builder {
    pts: Vec<[f64; 2]>,
    tris: Vec<[usize; 3]>,
    nbrs: Vec<[usize; 3]>,
    alive: Vec<bool>,
}

impl Builder {
    fn conflicts(&self, t: usize, p: [f64; 2]) -> bool {
        let [a, b, c] = self.tris[t];
        if c == INF {
            let (pa, pb) = (self.pts[a], self.pts[b]);
            match orient(pa, pb, p) {
                1 => true,
                0 => strictly_between(pa, pb, p),
                _ => false,
            }
        } else {
            incircle(self.pts[a], self.pts[b], self.pts[c], p) > 0
        }
    }

    fn push(&mut self, v: [usize; 3]) -> usize {
        // Ghost triangles keep the infinite vertex last.
        let v = match v.iter().position(|&x| x == INF) {
            Some(0) => [v[1], v[2], v[0]],
            Some(1) => [v[2], v[0], v[1]],
            _ => v,
        };
        self.tris.push(v);
        self.nbrs.push([INF; 3]);
        self.alive.push(true);
        self.tris.len() - 1
    }

    fn insert(&mut self, p_idx: usize, hint: &[usize]) -> Vec<usize> {
        let p = self.pts[p_idx];
        let start = hint
            .iter()
            .copied()
            .find(|&t| self.alive[t] && self.conflicts(t, p))
            .or_else(|| (0..self.tris.len()).find(|&t| self.alive[t] && self.conflicts(t, p)))
            .expect("a point outside every circumcircle and the hull cannot exist");

        let mut in_cavity = HashMap::new();
        in_cavity.insert(start, ());
        let mut cavity = vec![start];
        let mut stack = vec![start];
        while let Some(t) = stack.pop() {
            for k in 0..3 {
                let n = self.nbrs[t][k];
                if n != INF && !in_cavity.contains_key(&n) && self.conflicts(n, p) {
                    in_cavity.insert(n, ());
                    cavity.push(n);
                    stack.push(n);
                }
            }
        }

        let mut created = Vec::new();
        let mut edge_owner: HashMap<(usize, usize), (usize, usize)> = HashMap::new();
        for &t in &cavity {
            for k in 0..3 {
                let n = self.nbrs[t][k];
                if in_cavity.contains_key(&n) {
                    continue;
                }
                let v = self.tris[t];
                let (a, b) = (v[(k + 1) % 3], v[(k + 2) % 3]);
                let nt = self.push([a, b, p_idx]);
                created.push(nt);
                // Wire the new triangle to the outside neighbour across (a, b).
                let tv = self.tris[nt];
                for kk in 0..3 {
                    let (e0, e1) = (tv[(kk + 1) % 3], tv[(kk + 2) % 3]);
                    if (e0, e1) == (a, b) {
                        self.nbrs[nt][kk] = n;
                        if n != INF {
                            let back = self.nbrs[n].iter().position(|&x| x == t).unwrap();
                            self.nbrs[n][back] = nt;
                        }
                    } else if let Some((ot, ok)) = edge_owner.remove(&(e1, e0)) {
                        self.nbrs[nt][kk] = ot;
                        self.nbrs[ot][ok] = nt;
                    } else {
                        edge_owner.insert((e0, e1), (nt, kk));
                    }
                }
            }
        }
        debug_assert!(edge_owner.is_empty(), "cavity boundary is not closed");
        for t in cavity {
            self.alive[t] = false;
        }
        created
    }
}

fn strictly_between(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> bool {
    // Only called for collinear points.
    let inside = |lo: f64, hi: f64, v: f64| (lo < v && v < hi) || (hi < v && v < lo);
    if a[0] != b[0] {
        inside(a[0], b[0], p[0])
    } else {
        inside(a[1], b[1], p[1])
    }
}

fn lex(a: &[f64; 2], b: &[f64; 2]) -> std::cmp::Ordering {
    a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1]))
}

impl Triangulation {
    /// Delaunay triangulation of `points`. Vertex labels are the input
    /// indices; points within [`DUPLICATE_EPS`] collapse onto the one with
    /// the lowest index.
    pub fn delaunay(points: &[ChartPosition]) -> Result<Self> {
        let raw: Vec<[f64; 2]> = points.iter().map(|p| p.0).collect();
        Self::from_points(&raw)
    }

    pub fn from_points(points: &[[f64; 2]]) -> Result<Self> {
        if points.len() < 3 {
            return Err(Error::DegenerateGeometry(format!(
                "need at least 3 points, got {}",
                points.len()
            )));
        }
        if points
            .iter()
            .any(|p| !p[0].is_finite() || !p[1].is_finite())
        {
            return Err(Error::NonFinite("triangulation input".into()));
        }

        // Lexicographic insertion order makes the result independent of the
        // input order.
        let mut order: Vec<usize> = (0..points.len()).collect();
        order.sort_by(|&i, &j| lex(&points[i], &points[j]).then(i.cmp(&j)));
        let mut kept: Vec<usize> = Vec::new();
        for &i in &order {
            let p = points[i];
            let dup = kept
                .iter_mut()
                .rev()
                .take_while(|k| p[0] - points[**k][0] <= DUPLICATE_EPS)
                .find(|k| {
                    let q = points[**k];
                    (p[0] - q[0]).hypot(p[1] - q[1]) <= DUPLICATE_EPS
                });
            match dup {
                Some(k) => *k = (*k).min(i),
                None => kept.push(i),
            }
        }
        let mut by_label = kept.clone();
        by_label.sort_unstable();
        let labels = by_label;
        let vertex_of: HashMap<usize, usize> =
            labels.iter().enumerate().map(|(v, &l)| (l, v)).collect();
        let pts: Vec<[f64; 2]> = labels.iter().map(|&l| points[l]).collect();
        let insertion: Vec<usize> = kept.iter().map(|l| vertex_of[l]).collect();

        if insertion.len() < 3 {
            return Err(Error::DegenerateGeometry(
                "fewer than 3 distinct points".into(),
            ));
        }
        let (i0, i1) = (insertion[0], insertion[1]);
        let Some(pos) = insertion[2..]
            .iter()
            .position(|&v| orient(pts[i0], pts[i1], pts[v]) != 0)
        else {
            return Err(Error::DegenerateGeometry("all points are collinear".into()));
        };
        let i2 = insertion[2 + pos];

        let mut bld = Builder {
            pts,
            tris: Vec::new(),
            nbrs: Vec::new(),
            alive: Vec::new(),
        };
        let (a, b, c) = if orient(bld.pts[i0], bld.pts[i1], bld.pts[i2]) > 0 {
            (i0, i1, i2)
        } else {
            (i0, i2, i1)
        };
        let t0 = bld.push([a, b, c]);
        // Ghosts across (b,a), (c,b), (a,c): opposite-vertex index of the
        // shared edge in the real triangle is c, a, b respectively.
        let g_ab = bld.push([b, a, INF]);
        let g_bc = bld.push([c, b, INF]);
        let g_ca = bld.push([a, c, INF]);
        bld.nbrs[t0] = [g_bc, g_ca, g_ab];
        // Ghost [x, y, INF]: neighbour 2 is the real triangle, 0 is across
        // (y, INF) and 1 across (INF, x).
        bld.nbrs[g_ab] = [g_ca, g_bc, t0];
        bld.nbrs[g_bc] = [g_ab, g_ca, t0];
        bld.nbrs[g_ca] = [g_bc, g_ab, t0];

        let mut hint = vec![g_ab, g_bc, g_ca];
        for &v in &insertion[2..] {
            if v == i2 {
                continue;
            }
            hint = bld.insert(v, &hint);
        }

        Self::finish(bld, labels)
    }

    fn finish(bld: Builder, labels: Vec<usize>) -> Result<Self> {
        let mut real: Vec<[usize; 3]> = (0..bld.tris.len())
            .filter(|&t| bld.alive[t] && bld.tris[t][2] != INF)
            .map(|t| {
                let v = bld.tris[t];
                // Rotate so the lowest vertex leads, keeping orientation.
                let r = (0..3).min_by_key(|&k| v[k]).unwrap();
                [v[r], v[(r + 1) % 3], v[(r + 2) % 3]]
            })
            .collect();
        real.sort_unstable();

        let mut edge_map: HashMap<(usize, usize), (usize, usize)> = HashMap::new();
        for (t, v) in real.iter().enumerate() {
            for k in 0..3 {
                edge_map.insert((v[(k + 1) % 3], v[(k + 2) % 3]), (t, k));
            }
        }
        let neighbors = real
            .iter()
            .map(|v| {
                let mut n = [None; 3];
                for (k, slot) in n.iter_mut().enumerate() {
                    *slot = edge_map
                        .get(&(v[(k + 2) % 3], v[(k + 1) % 3]))
                        .map(|&(t, _)| t);
                }
                n
            })
            .collect();
        let mut vertex_triangles = vec![Vec::new(); bld.pts.len()];
        for (t, v) in real.iter().enumerate() {
            for &x in v {
                vertex_triangles[x].push(t);
            }
        }
        Ok(Self {
            points: bld.pts,
            labels,
            triangles: real,
            neighbors,
            vertex_triangles,
        })
    }

    pub fn num_vertices(&self) -> usize {
        self.points.len()
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn vertex(&self, v: usize) -> [f64; 2] {
        self.points[v]
    }

    /// Dataset index of vertex `v`.
    pub fn label(&self, v: usize) -> usize {
        self.labels[v]
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn neighbors(&self, t: usize) -> [Option<usize>; 3] {
        self.neighbors[t]
    }

    /// Dataset indices of triangle `t`'s corners.
    pub fn triangle_labels(&self, t: usize) -> [usize; 3] {
        self.triangles[t].map(|v| self.labels[v])
    }

    pub fn triangle_points(&self, t: usize) -> [[f64; 2]; 3] {
        self.triangles[t].map(|v| self.points[v])
    }

    /// Vertices on the convex hull boundary, including collinear ones.
    pub fn hull_vertex_count(&self) -> usize {
        let mut on_hull = vec![false; self.points.len()];
        for (t, v) in self.triangles.iter().enumerate() {
            for k in 0..3 {
                if self.neighbors[t][k].is_none() {
                    on_hull[v[(k + 1) % 3]] = true;
                    on_hull[v[(k + 2) % 3]] = true;
                }
            }
        }
        on_hull.iter().filter(|&&h| h).count()
    }

    fn contains(&self, t: usize, p: [f64; 2]) -> [i32; 3] {
        let [a, b, c] = self.triangle_points(t);
        [orient(b, c, p), orient(c, a, p), orient(a, b, p)]
    }

    /// Triangle containing `p` (boundary inclusive). On a shared edge or
    /// vertex the lowest triangle index wins.
    pub fn locate(&self, p: ChartPosition) -> Location {
        self.locate_from(p, 0)
    }

    pub fn locate_from(&self, p: ChartPosition, start: usize) -> Location {
        let p = p.0;
        if self.triangles.is_empty() || !p[0].is_finite() || !p[1].is_finite() {
            return Location::Outside;
        }
        let mut t = start.min(self.triangles.len() - 1);
        let max_steps = self.triangles.len() + 16;
        for _ in 0..max_steps {
            let o = self.contains(t, p);
            match (0..3).find(|&k| o[k] < 0) {
                None => return Location::Inside(self.resolve_tie(t, o)),
                Some(k) => match self.neighbors[t][k] {
                    Some(n) => t = n,
                    None => return Location::Outside,
                },
            }
        }
        // Not reached for Delaunay meshes; scan as a fallback.
        (0..self.triangles.len())
            .find(|&t| self.contains(t, p).iter().all(|&o| o >= 0))
            .map_or(Location::Outside, |t| {
                Location::Inside(self.resolve_tie(t, self.contains(t, p)))
            })
    }

    fn resolve_tie(&self, t: usize, o: [i32; 3]) -> usize {
        let zeros: Vec<usize> = (0..3).filter(|&k| o[k] == 0).collect();
        match zeros.len() {
            0 => t,
            1 => self.neighbors[t][zeros[0]].map_or(t, |n| n.min(t)),
            _ => {
                // On the vertex shared by the two zero edges.
                let k = (0..3).find(|k| !zeros.contains(k)).unwrap();
                let v = self.triangles[t][k];
                *self.vertex_triangles[v].iter().min().unwrap()
            }
        }
    }

    /// Triangles as dataset-index triples, one per line.
    pub fn write_triangles_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "triangle,i0,i1,i2")?;
        for t in 0..self.triangles.len() {
            let [a, b, c] = self.triangle_labels(t);
            writeln!(w, "{t},{a},{b},{c}")?;
        }
        Ok(())
    }

    /// Unique undirected edges as dataset-index pairs.
    pub fn write_edges_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let mut edges: Vec<(usize, usize)> = self
            .triangles
            .iter()
            .flat_map(|v| {
                (0..3).map(move |k| {
                    let (a, b) = (v[k], v[(k + 1) % 3]);
                    (a.min(b), a.max(b))
                })
            })
            .collect();
        edges.sort_unstable();
        edges.dedup();
        writeln!(w, "i0,i1")?;
        for (a, b) in edges {
            writeln!(w, "{},{}", self.labels[a], self.labels[b])?;
        }
        Ok(())
    }
}

/// Barycentric coordinates of `p` in triangle `tri`.
pub fn barycentric(tri: [ChartPosition; 3], p: ChartPosition) -> Result<Barycentric> {
    barycentric_raw(tri.map(|z| z.0), p.0)
}

pub fn barycentric_raw(tri: [[f64; 2]; 3], p: [f64; 2]) -> Result<Barycentric> {
    let [a, b, c] = tri;
    if orient(a, b, c) == 0 {
        return Err(Error::DegenerateGeometry(format!(
            "zero-area triangle {a:?} {b:?} {c:?}"
        )));
    }
    let cross = |o: [f64; 2], u: [f64; 2], v: [f64; 2]| {
        (u[0] - o[0]) * (v[1] - o[1]) - (u[1] - o[1]) * (v[0] - o[0])
    };
    let area = cross(a, b, c);
    let c1 = cross(p, b, c) / area;
    let c2 = cross(a, p, c) / area;
    Ok(Barycentric([c1, c2, 1.0 - c1 - c2]))
}
