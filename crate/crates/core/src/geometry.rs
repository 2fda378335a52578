//! Polygonal walking region `D = outer \ (obstacles ∪ fire)` with the
//! membership, projection and normal-cone queries needed by the reflection
//! solver.
//!
//! Orientation convention: the outer ring is counterclockwise and every hole
//! is clockwise, so the domain always lies to the left of each directed edge and
//! the inward normal of an edge with direction `d` is `d.perp()`.

use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub, SubAssign};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    #[inline]
    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    /// z-component of the 3D cross product.
    #[inline]
    pub fn cross(self, o: Vec2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    #[inline]
    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    #[inline]
    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    /// Counterclockwise rotation by a right angle.
    #[inline]
    pub fn perp(self) -> Vec2 {
        Vec2::new(-self.y, self.x)
    }

    /// Unit vector in the same direction, or `None` for the zero vector.
    pub fn normalized(self) -> Option<Vec2> {
        let n = self.norm();
        (n > 0.0 && n.is_finite()).then(|| self / n)
    }

    pub fn distance(self, o: Vec2) -> f64 {
        (self - o).norm()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl From<[f64; 2]> for Vec2 {
    fn from(a: [f64; 2]) -> Self {
        Vec2::new(a[0], a[1])
    }
}

impl From<Vec2> for [f64; 2] {
    fn from(v: Vec2) -> Self {
        [v.x, v.y]
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    #[inline]
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl AddAssign for Vec2 {
    #[inline]
    fn add_assign(&mut self, o: Vec2) {
        self.x += o.x;
        self.y += o.y;
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    #[inline]
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl SubAssign for Vec2 {
    #[inline]
    fn sub_assign(&mut self, o: Vec2) {
        self.x -= o.x;
        self.y -= o.y;
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    #[inline]
    fn mul(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.y * s)
    }
}

impl Mul<Vec2> for f64 {
    type Output = Vec2;
    #[inline]
    fn mul(self, v: Vec2) -> Vec2 {
        v * self
    }
}

impl Div<f64> for Vec2 {
    type Output = Vec2;
    #[inline]
    fn div(self, s: f64) -> Vec2 {
        Vec2::new(self.x / s, self.y / s)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    #[inline]
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// Closest point to `p` on the segment `[a, b]` and its parameter in `[0, 1]`.
pub fn closest_on_segment(p: Vec2, a: Vec2, b: Vec2) -> (Vec2, f64) {
    let ab = b - a;
    let len_sq = ab.norm_sq();
    if len_sq == 0.0 {
        return (a, 0.0);
    }
    let t = ((p - a).dot(ab) / len_sq).clamp(0.0, 1.0);
    let q = if t == 0.0 {
        a
    } else if t == 1.0 {
        b
    } else {
        a + ab * t
    };
    (q, t)
}

fn orient(a: Vec2, b: Vec2, c: Vec2) -> f64 {
    (b - a).cross(c - a)
}

fn on_segment(a: Vec2, b: Vec2, p: Vec2) -> bool {
    p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x) && p.y >= a.y.min(b.y) && p.y <= a.y.max(b.y)
}

/// Closed-segment intersection test (touching counts).
pub fn segments_intersect(p1: Vec2, p2: Vec2, q1: Vec2, q2: Vec2) -> bool {
    let d1 = orient(q1, q2, p1);
    let d2 = orient(q1, q2, p2);
    let d3 = orient(p1, p2, q1);
    let d4 = orient(p1, p2, q2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    (d1 == 0.0 && on_segment(q1, q2, p1))
        || (d2 == 0.0 && on_segment(q1, q2, p2))
        || (d3 == 0.0 && on_segment(p1, p2, q1))
        || (d4 == 0.0 && on_segment(p1, p2, q2))
}

/// A simple polygon given by its vertex ring (closing edge implied).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Polygon {
    pub vertices: Vec<Vec2>,
}

impl Polygon {
    pub fn new(vertices: Vec<Vec2>) -> Self {
        Self { vertices }
    }

    /// Axis-aligned rectangle, counterclockwise.
    pub fn rectangle(min: Vec2, max: Vec2) -> Self {
        Self::new(vec![
            min,
            Vec2::new(max.x, min.y),
            max,
            Vec2::new(min.x, max.y),
        ])
    }

    pub fn reversed(&self) -> Self {
        let mut v = self.vertices.clone();
        v.reverse();
        Self::new(v)
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn edges(&self) -> impl Iterator<Item = (Vec2, Vec2)> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }

    /// Shoelace area, positive for counterclockwise rings.
    pub fn signed_area(&self) -> f64 {
        0.5 * self.edges().map(|(a, b)| a.cross(b)).sum::<f64>()
    }

    pub fn perimeter(&self) -> f64 {
        self.edges().map(|(a, b)| a.distance(b)).sum()
    }

    pub fn centroid(&self) -> Vec2 {
        let a = self.signed_area();
        if a == 0.0 {
            let n = self.vertices.len().max(1) as f64;
            return self.vertices.iter().fold(Vec2::ZERO, |s, &v| s + v) / n;
        }
        let mut c = Vec2::ZERO;
        for (p, q) in self.edges() {
            let w = p.cross(q);
            c += (p + q) * w;
        }
        c / (6.0 * a)
    }

    /// Crossing-number test; boundary points may land on either side.
    pub fn winds_around(&self, p: Vec2) -> bool {
        let mut inside = false;
        for (a, b) in self.edges() {
            if (a.y > p.y) != (b.y > p.y) {
                let x = a.x + (p.y - a.y) / (b.y - a.y) * (b.x - a.x);
                if p.x < x {
                    inside = !inside;
                }
            }
        }
        inside
    }

    pub fn boundary_distance(&self, p: Vec2) -> f64 {
        self.edges()
            .map(|(a, b)| closest_on_segment(p, a, b).0.distance(p))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn min_edge_length(&self) -> f64 {
        self.edges()
            .map(|(a, b)| a.distance(b))
            .fold(f64::INFINITY, f64::min)
    }

    fn check_simple(&self, what: &str) -> Result<()> {
        let n = self.vertices.len();
        if n < 3 {
            return Err(Error::Validation(format!("{what}: needs at least 3 vertices")));
        }
        if self.vertices.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation(format!("{what}: non-finite vertex")));
        }
        for (i, (a, b)) in self.edges().enumerate() {
            if a == b {
                return Err(Error::Validation(format!("{what}: edge {i} has zero length")));
            }
        }
        let edges: Vec<_> = self.edges().collect();
        for i in 0..n {
            for j in (i + 1)..n {
                let adjacent = j == i + 1 || (i == 0 && j == n - 1);
                let (p1, p2) = edges[i];
                let (q1, q2) = edges[j];
                if adjacent {
                    // Adjacent edges may only share their common vertex.
                    let (shared, far_i, far_j) = if j == i + 1 { (p2, p1, q2) } else { (p1, p2, q1) };
                    let folded = orient(far_i, shared, far_j) == 0.0
                        && (far_i - shared).dot(far_j - shared) > 0.0;
                    if folded {
                        return Err(Error::Validation(format!(
                            "{what}: edges {i} and {j} overlap"
                        )));
                    }
                } else if segments_intersect(p1, p2, q1, q2) {
                    return Err(Error::Validation(format!(
                        "{what}: edges {i} and {j} intersect (polygon is not simple)"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// An exit: a piece `[t0, t1]` of one outer edge, with an absorption radius.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExitSegment {
    pub edge: usize,
    pub t0: f64,
    pub t1: f64,
    #[serde(default)]
    pub r_e: f64,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Edge {
    pub a: Vec2,
    pub b: Vec2,
    /// Unit normal pointing into the domain.
    pub normal: Vec2,
    pub prev: usize,
    pub next: usize,
}

impl Edge {
    fn closest(&self, p: Vec2) -> (Vec2, f64) {
        closest_on_segment(p, self.a, self.b)
    }
}

/// Boundary feature under a point, as seen by the reflection solver.
#[derive(Clone, Debug, PartialEq)]
pub(crate) enum Contact {
    Free,
    Edge(usize),
    /// Vertex at `edges[outgoing].a == edges[incoming].b`.
    Vertex {
        incoming: usize,
        outgoing: usize,
        convex: bool,
    },
    /// Several unrelated edges within tolerance (only in very narrow gaps).
    Multi(Vec<usize>),
}

/// Nearest boundary point of a query point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundaryFoot {
    pub point: Vec2,
    pub distance: f64,
    /// Inward normal at the foot (edge normal, or the direction towards the
    /// query point when the foot is a vertex).
    pub normal: Vec2,
    /// True when the foot is a polygon vertex.
    pub at_vertex: bool,
}

/// The set of inward unit normals at a boundary point.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalCone {
    /// The boundary point the cone belongs to.
    pub base: Vec2,
    /// Representative unit vectors: the edge normal, or for a vertex the two
    /// extreme directions of the arc plus its bisector.
    pub vectors: Vec<Vec2>,
    /// Largest radius (capped) for which each vector passes the empty-disk test.
    pub radii: Vec<f64>,
    /// Extreme directions when the cone is a nondegenerate arc.
    pub arc: Option<(Vec2, Vec2)>,
}

impl NormalCone {
    /// Radius at which every returned vector passes the empty-disk test.
    pub fn radius(&self) -> f64 {
        self.radii.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// `max ⟨v̂, n⟩` over all normals `n` in the cone (the whole arc, not just
    /// the representatives).
    pub fn max_alignment(&self, v: Vec2) -> f64 {
        let Some(v) = v.normalized() else {
            return f64::NEG_INFINITY;
        };
        if let Some((a, b)) = self.arc {
            let eps = 1e-12;
            if a.cross(v) >= -eps && v.cross(b) >= -eps && v.dot(a + b) > 0.0 {
                return 1.0;
            }
        }
        self.vectors
            .iter()
            .map(|n| n.dot(v))
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// One failed sample of the exterior sphere check.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SphereFailure {
    pub point: Vec2,
    /// Largest radius that works at this point (0 when the cone is empty).
    pub admissible_radius: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExteriorSphereReport {
    pub r0: f64,
    pub samples: usize,
    pub failures: Vec<SphereFailure>,
    /// Largest radius for which every sample passes.
    pub largest_radius: f64,
}

impl ExteriorSphereReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Validated walking region.
#[derive(Clone, Debug)]
pub struct Domain {
    outer: Polygon,
    obstacles: Vec<Polygon>,
    fire: Option<Polygon>,
    exits: Vec<ExitSegment>,
    r0: f64,
    edges: Vec<Edge>,
    diam: f64,
    area: f64,
}

impl Domain {
    /// Builds and validates a domain. The exterior sphere radius `r0` is only
    /// checked for positivity here; see [`Domain::validate_exterior_sphere`].
    pub fn new(
        outer: Polygon,
        obstacles: Vec<Polygon>,
        fire: Option<Polygon>,
        exits: Vec<ExitSegment>,
        r0: f64,
    ) -> Result<Self> {
        outer.check_simple("outer")?;
        if outer.signed_area() <= 0.0 {
            return Err(Error::Validation(
                "outer: vertices must be counterclockwise".into(),
            ));
        }
        if !(r0 > 0.0 && r0.is_finite()) {
            return Err(Error::Validation(format!("r0 must be positive, got {r0}")));
        }

        let holes: Vec<(String, &Polygon)> = obstacles
            .iter()
            .enumerate()
            .map(|(i, p)| (format!("obstacle {i}"), p))
            .chain(fire.iter().map(|p| ("fire".to_string(), p)))
            .collect();

        for (name, hole) in &holes {
            hole.check_simple(name)?;
            if hole.signed_area() >= 0.0 {
                return Err(Error::Validation(format!(
                    "{name}: vertices must be clockwise"
                )));
            }
            for (a, b) in hole.edges() {
                if outer.edges().any(|(c, d)| segments_intersect(a, b, c, d)) {
                    return Err(Error::Validation(format!(
                        "{name} intersects the outer boundary"
                    )));
                }
            }
            if hole.vertices.iter().any(|&v| !outer.winds_around(v)) {
                return Err(Error::Validation(format!(
                    "{name} is not inside the outer boundary"
                )));
            }
        }
        for i in 0..holes.len() {
            for j in (i + 1)..holes.len() {
                let (ni, hi) = &holes[i];
                let (nj, hj) = &holes[j];
                let touching = hi
                    .edges()
                    .any(|(a, b)| hj.edges().any(|(c, d)| segments_intersect(a, b, c, d)));
                let nested = hi.winds_around(hj.vertices[0]) || hj.winds_around(hi.vertices[0]);
                if touching || nested {
                    return Err(Error::Validation(format!("{ni} and {nj} overlap")));
                }
            }
        }

        for (k, e) in exits.iter().enumerate() {
            if e.edge >= outer.len() {
                return Err(Error::Validation(format!(
                    "exit {k}: edge index {} out of range (outer has {} edges)",
                    e.edge,
                    outer.len()
                )));
            }
            if !(0.0 <= e.t0 && e.t0 < e.t1 && e.t1 <= 1.0) {
                return Err(Error::Validation(format!(
                    "exit {k}: need 0 <= t0 < t1 <= 1, got [{}, {}]",
                    e.t0, e.t1
                )));
            }
            if !(e.r_e >= 0.0 && e.r_e.is_finite()) {
                return Err(Error::Validation(format!("exit {k}: r_e must be >= 0")));
            }
        }

        let area = outer.signed_area() + holes.iter().map(|(_, h)| h.signed_area()).sum::<f64>();
        if area <= 0.0 {
            return Err(Error::Validation("domain has non-positive area".into()));
        }

        let mut diam: f64 = 0.0;
        for (i, &p) in outer.vertices.iter().enumerate() {
            for &q in &outer.vertices[i + 1..] {
                diam = diam.max(p.distance(q));
            }
        }

        let mut edges = Vec::new();
        for ring in std::iter::once(&outer).chain(holes.iter().map(|(_, h)| *h)) {
            let base = edges.len();
            let m = ring.len();
            for j in 0..m {
                let a = ring.vertices[j];
                let b = ring.vertices[(j + 1) % m];
                edges.push(Edge {
                    a,
                    b,
                    normal: (b - a).perp().normalized().expect("nonzero edge"),
                    prev: base + (j + m - 1) % m,
                    next: base + (j + 1) % m,
                });
            }
        }

        Ok(Self {
            outer,
            obstacles,
            fire,
            exits,
            r0,
            edges,
            diam,
            area,
        })
    }

    pub fn outer(&self) -> &Polygon {
        &self.outer
    }

    pub fn obstacles(&self) -> &[Polygon] {
        &self.obstacles
    }

    pub fn fire(&self) -> Option<&Polygon> {
        self.fire.as_ref()
    }

    pub fn exits(&self) -> &[ExitSegment] {
        &self.exits
    }

    pub fn r0(&self) -> f64 {
        self.r0
    }

    pub fn diam(&self) -> f64 {
        self.diam
    }

    /// `|D̄|`, the area of the walking region.
    pub fn area(&self) -> f64 {
        self.area
    }

    pub(crate) fn edges(&self) -> &[Edge] {
        &self.edges
    }

    fn holes(&self) -> impl Iterator<Item = &Polygon> {
        self.obstacles.iter().chain(self.fire.iter())
    }

    /// Width of the boundary band that counts as "on the boundary".
    pub fn tolerance(&self) -> f64 {
        1e-12 * self.diam
    }

    pub(crate) fn contact_tolerance(&self) -> f64 {
        self.tolerance()
    }

    pub fn bounding_box(&self) -> (Vec2, Vec2) {
        let mut lo = Vec2::new(f64::INFINITY, f64::INFINITY);
        let mut hi = Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for v in &self.outer.vertices {
            lo = Vec2::new(lo.x.min(v.x), lo.y.min(v.y));
            hi = Vec2::new(hi.x.max(v.x), hi.y.max(v.y));
        }
        (lo, hi)
    }

    /// Smallest edge length over obstacles and fire (infinite without holes).
    pub fn min_hole_feature(&self) -> f64 {
        self.holes()
            .map(Polygon::min_edge_length)
            .fold(f64::INFINITY, f64::min)
    }

    /// Endpoints of an exit segment.
    pub fn exit_endpoints(&self, exit: &ExitSegment) -> (Vec2, Vec2) {
        let a = self.outer.vertices[exit.edge];
        let b = self.outer.vertices[(exit.edge + 1) % self.outer.len()];
        (a + (b - a) * exit.t0, a + (b - a) * exit.t1)
    }

    /// Distance from `p` to the nearest exit segment with that exit's index.
    pub fn nearest_exit(&self, p: Vec2) -> Option<(usize, f64)> {
        self.exits
            .iter()
            .enumerate()
            .map(|(k, e)| {
                let (a, b) = self.exit_endpoints(e);
                (k, closest_on_segment(p, a, b).0.distance(p))
            })
            .min_by(|x, y| x.1.total_cmp(&y.1))
    }

    /// Membership in the closed domain `D̄`; points within
    /// [`Domain::tolerance`] of the boundary count as boundary points.
    pub fn contains(&self, p: Vec2) -> bool {
        if !p.is_finite() {
            return false;
        }
        let tol = self.tolerance();
        if !self.outer.winds_around(p) && self.outer.boundary_distance(p) > tol {
            return false;
        }
        !self
            .holes()
            .any(|h| h.winds_around(p) && h.boundary_distance(p) > tol)
    }

    /// True when `p` lies in the open domain, away from the boundary band.
    pub fn contains_strictly(&self, p: Vec2) -> bool {
        self.contains(p) && self.boundary_distance(p) > self.tolerance()
    }

    pub fn boundary_distance(&self, p: Vec2) -> f64 {
        self.edges
            .iter()
            .map(|e| e.closest(p).0.distance(p))
            .fold(f64::INFINITY, f64::min)
    }

    /// Nearest point of `∂D` with the inward normal there.
    pub fn nearest_boundary(&self, p: Vec2) -> BoundaryFoot {
        let mut best = (f64::INFINITY, Vec2::ZERO, 0usize, 0.0);
        for (i, e) in self.edges.iter().enumerate() {
            let (q, t) = e.closest(p);
            let d = q.distance(p);
            if d < best.0 {
                best = (d, q, i, t);
            }
        }
        let (distance, point, i, t) = best;
        let e = &self.edges[i];
        let normal = if t > 0.0 && t < 1.0 {
            e.normal
        } else {
            // Vertex foot: direction towards p when p is inside, otherwise the
            // bisector of the adjacent edge normals.
            let (other, here) = if t == 0.0 {
                (self.edges[e.prev].normal, e.normal)
            } else {
                (self.edges[e.next].normal, e.normal)
            };
            let towards = (p - point).normalized().filter(|_| self.contains(p));
            towards
                .or_else(|| (other + here).normalized())
                .unwrap_or(here)
        };
        BoundaryFoot {
            point,
            distance,
            normal,
            at_vertex: !(t > 0.0 && t < 1.0),
        }
    }

    /// Nearest point of `D̄` to `p` and the distance to it.
    ///
    /// Returns `p` itself for points of `D̄`. Fails with
    /// [`Error::AmbiguousProjection`] when two well-separated boundary points
    /// are equally near.
    pub fn project(&self, p: Vec2) -> Result<(Vec2, f64)> {
        if self.contains(p) {
            return Ok((p, 0.0));
        }
        let feet: Vec<(Vec2, f64)> = self
            .edges
            .iter()
            .map(|e| {
                let q = e.closest(p).0;
                (q, q.distance(p))
            })
            .collect();
        let (best, dmin) = feet
            .iter()
            .copied()
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .ok_or_else(|| Error::Validation("domain has no edges".into()))?;
        let tie = 1e-12 * self.diam;
        let separation = 1e-9 * self.diam;
        for &(q, d) in &feet {
            if d <= dmin + tie && q.distance(best) > separation {
                return Err(Error::AmbiguousProjection {
                    point: p,
                    first: best,
                    second: q,
                });
            }
        }
        Ok((best, dmin))
    }

    /// Boundary feature at `p` for the reflection solver.
    pub(crate) fn contact(&self, p: Vec2) -> Contact {
        let tol = self.contact_tolerance();
        let active: Vec<usize> = self
            .edges
            .iter()
            .enumerate()
            .filter(|(_, e)| e.closest(p).0.distance(p) <= tol)
            .map(|(i, _)| i)
            .collect();
        match active.len() {
            0 => Contact::Free,
            1 => {
                let i = active[0];
                let e = &self.edges[i];
                if p.distance(e.a) <= tol {
                    self.vertex_contact(i)
                } else if p.distance(e.b) <= tol {
                    self.vertex_contact(e.next)
                } else {
                    Contact::Edge(i)
                }
            }
            2 => {
                let (i, j) = (active[0], active[1]);
                if self.edges[i].next == j {
                    self.vertex_contact(j)
                } else if self.edges[j].next == i {
                    self.vertex_contact(i)
                } else {
                    Contact::Multi(active)
                }
            }
            _ => Contact::Multi(active),
        }
    }

    fn vertex_contact(&self, outgoing: usize) -> Contact {
        let incoming = self.edges[outgoing].prev;
        let d_in = self.edges[incoming].b - self.edges[incoming].a;
        let d_out = self.edges[outgoing].b - self.edges[outgoing].a;
        let turn = d_in.cross(d_out);
        if turn.abs() <= 1e-14 * d_in.norm() * d_out.norm() && d_in.dot(d_out) > 0.0 {
            // Straight vertex: both edges lie on one line.
            return Contact::Multi(vec![incoming, outgoing]);
        }
        Contact::Vertex {
            incoming,
            outgoing,
            convex: turn > 0.0,
        }
    }

    /// Empty-disk test: the open disk `B(center, r)` contains no point of `D`.
    pub fn disk_is_clear(&self, center: Vec2, r: f64) -> bool {
        if self.contains_strictly(center) {
            return false;
        }
        self.boundary_distance(center) >= r * (1.0 - 1e-9)
    }

    /// Largest `r <= cap` with `B(base - r n, r) ∩ D = ∅`, found by bisection
    /// to 1e-6 relative (0 when no positive radius works).
    pub fn admissible_radius(&self, base: Vec2, n: Vec2, cap: f64) -> f64 {
        if self.disk_is_clear(base - n * cap, cap) {
            return cap;
        }
        let floor = 1e-12 * self.diam;
        let (mut lo, mut hi) = (0.0_f64, cap);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.disk_is_clear(base - n * mid, mid) {
                lo = mid;
            } else {
                hi = mid;
            }
            if lo > 0.0 && hi - lo <= 1e-6 * lo {
                break;
            }
            if lo == 0.0 && hi < floor {
                break;
            }
        }
        lo
    }

    fn normal_cone_capped(&self, x: Vec2, cap: f64) -> Result<NormalCone> {
        let (base, candidates, arc) = self.cone_candidates(x)?;
        let floor = 1e-12 * self.diam;
        let mut vectors = Vec::new();
        let mut radii = Vec::new();
        for n in candidates {
            let r = self.admissible_radius(base, n, cap);
            if r > floor {
                vectors.push(n);
                radii.push(r);
            }
        }
        if vectors.is_empty() {
            return Err(Error::EmptyCone(x));
        }
        let arc = arc.filter(|(a, b)| vectors.contains(a) && vectors.contains(b));
        Ok(NormalCone {
            base,
            vectors,
            radii,
            arc,
        })
    }

    /// Inward normal cone `N_x = ∪_{r>0} N_{x,r}` at a boundary point.
    ///
    /// Each returned vector carries the largest radius (up to `r0`) for which
    /// it passes the empty-disk test; [`NormalCone::radius`] `>= r0` means the
    /// cone is admissible at the uniform radius.
    pub fn normal_cone(&self, x: Vec2) -> Result<NormalCone> {
        self.normal_cone_capped(x, self.r0)
    }

    /// Geometric candidates at `x`: base point, candidate normals and arc.
    #[allow(clippy::type_complexity)]
    fn cone_candidates(&self, x: Vec2) -> Result<(Vec2, Vec<Vec2>, Option<(Vec2, Vec2)>)> {
        let tol = 1e-9 * self.diam;
        let mut nearest: Option<(usize, Vec2, f64, f64)> = None;
        for (i, e) in self.edges.iter().enumerate() {
            let (q, t) = e.closest(x);
            let d = q.distance(x);
            if d <= tol && nearest.is_none_or(|(_, _, _, bd)| d < bd) {
                nearest = Some((i, q, t, d));
            }
        }
        let Some((i, foot, _, _)) = nearest else {
            return Err(Error::NotOnBoundary(x));
        };
        let e = self.edges[i];
        let vertex = if x.distance(e.a) <= tol {
            Some(i)
        } else if x.distance(e.b) <= tol {
            Some(e.next)
        } else {
            None
        };
        let Some(out) = vertex else {
            return Ok((foot, vec![e.normal], None));
        };
        let incoming = self.edges[out].prev;
        let v = self.edges[out].a;
        let n_in = self.edges[incoming].normal;
        let n_out = self.edges[out].normal;
        let bisector = (n_in + n_out).normalized().unwrap_or(n_out);
        match self.vertex_contact(out) {
            Contact::Vertex { convex: true, .. } => {
                Ok((v, vec![n_in, bisector, n_out], Some((n_in, n_out))))
            }
            Contact::Vertex { convex: false, .. } => Ok((v, vec![bisector], None)),
            _ => Ok((v, vec![n_out], None)),
        }
    }

    /// Total length of all boundary rings.
    pub fn perimeter(&self) -> f64 {
        self.edges.iter().map(|e| e.a.distance(e.b)).sum()
    }

    /// Boundary point at arclength `s` along the concatenated rings.
    pub fn boundary_point(&self, s: f64) -> Vec2 {
        let mut rem = s.max(0.0);
        for e in &self.edges {
            let len = e.a.distance(e.b);
            if rem <= len {
                return e.a + (e.b - e.a) * (rem / len);
            }
            rem -= len;
        }
        self.edges.last().map(|e| e.b).unwrap_or_default()
    }

    /// Samples `n_samples` boundary points uniformly by arclength and checks
    /// that the normal cone is nonempty at radius `r0` at each one.
    pub fn validate_exterior_sphere(&self, n_samples: usize) -> ExteriorSphereReport {
        let total = self.perimeter();
        let mut failures = Vec::new();
        let mut largest = self.diam;
        for k in 0..n_samples {
            let x = self.boundary_point((k as f64 + 0.5) * total / n_samples as f64);
            let r = match self.normal_cone_capped(x, self.diam) {
                Ok(cone) => cone.radii.iter().copied().fold(0.0, f64::max),
                Err(_) => 0.0,
            };
            largest = largest.min(r);
            if r < self.r0 * (1.0 - 1e-6) {
                failures.push(SphereFailure {
                    point: x,
                    admissible_radius: r,
                });
            }
        }
        ExteriorSphereReport {
            r0: self.r0,
            samples: n_samples,
            failures,
            largest_radius: largest,
        }
    }
}
