//! Deterministic Skorohod problem.
//!
//! [`gamma_1d`] is the explicit running-minimum map on the half-line.
//! [`reflect_increment`] reflects one straight driving segment inside a
//! polygonal domain by following the projected dynamics `ẋ = Π_{T(x)} v`,
//! where `T(x)` is the tangent cone of the domain at `x`. For a
//! piecewise-linear driver this is the exact solution of the Skorohod
//! equation: motion is free in the interior, slides along an edge while the
//! driver pushes into it, and stops in a convex corner whose normal cone
//! contains the push. [`solve_path`] chains increments knot to knot.

use crate::error::{Error, Result};
use crate::geometry::{Contact, Domain, Edge, Vec2};

/// Upper bound on the number of free-flight/slide pieces per increment.
pub const MAX_SUBSTEPS: usize = 64;

/// One regulator contribution: where it acted, its unit direction, and the
/// amount of pushing.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hit {
    pub point: Vec2,
    pub direction: Vec2,
    pub magnitude: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Increment {
    pub end: Vec2,
    /// `end - (start + delta)`.
    pub dphi: Vec2,
    pub hits: Vec<Hit>,
    pub substeps: usize,
}

/// Scalar driving path on the half-line `[0, ∞)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarPath {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScalarSolution {
    pub xi: Vec<f64>,
    pub phi: Vec<f64>,
}

/// Planar driving path, linear between knots.
#[derive(Clone, Debug, PartialEq)]
pub struct DrivingPath {
    pub times: Vec<f64>,
    pub values: Vec<Vec2>,
}

impl DrivingPath {
    pub fn new(times: Vec<f64>, values: Vec<Vec2>) -> Result<Self> {
        check_knots(&times, values.len())?;
        Ok(Self { times, values })
    }

    /// Same path with a linear midpoint inserted between every pair of knots.
    pub fn refined(&self) -> Self {
        let mut times = Vec::with_capacity(2 * self.times.len());
        let mut values = Vec::with_capacity(2 * self.values.len());
        for k in 0..self.times.len() {
            if k > 0 {
                times.push(0.5 * (self.times[k - 1] + self.times[k]));
                values.push((self.values[k - 1] + self.values[k]) * 0.5);
            }
            times.push(self.times[k]);
            values.push(self.values[k]);
        }
        Self { times, values }
    }
}

fn check_knots(times: &[f64], n_values: usize) -> Result<()> {
    if times.is_empty() || times.len() != n_values {
        return Err(Error::Validation(format!(
            "path needs matching nonempty times and values ({} vs {n_values})",
            times.len()
        )));
    }
    if times[0] != 0.0 {
        return Err(Error::Validation("path must start at time 0".into()));
    }
    if times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Validation("path times must be strictly increasing".into()));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct SkorohodSolution {
    pub times: Vec<f64>,
    pub xi: Vec<Vec2>,
    /// Regulator `Φ(t)` with `Φ(0) = 0`.
    pub phi: Vec<Vec2>,
    /// Running total variation `|Φ|_t`.
    pub tv: Vec<f64>,
    /// Regulator pieces acting on the interval ending at each knot.
    pub hits: Vec<Vec<Hit>>,
}

/// Exact Skorohod map on the half-line: `φ(t) = -min_{y≤t} min(w(y), 0)`.
///
/// The path is linear between knots, so the running minimum is attained at
/// knots.
pub fn gamma_1d(w: &ScalarPath) -> Result<ScalarSolution> {
    check_knots(&w.times, w.values.len())?;
    if !(w.values[0] >= 0.0) {
        return Err(Error::Validation(format!(
            "path must start in [0, inf), got {}",
            w.values[0]
        )));
    }
    let mut running_min = 0.0_f64;
    let mut xi = Vec::with_capacity(w.values.len());
    let mut phi = Vec::with_capacity(w.values.len());
    for &v in &w.values {
        running_min = running_min.min(v);
        phi.push(-running_min);
        xi.push(v - running_min);
    }
    Ok(ScalarSolution { xi, phi })
}

/// Projection of `v` onto `{u : ⟨u, n⟩ ≥ 0 for all n}`.
fn project_onto_intersection(v: Vec2, normals: &[Vec2]) -> Vec2 {
    let eps = 1e-12 * v.norm();
    if normals.iter().all(|n| v.dot(*n) >= -eps) {
        return v;
    }
    let mut best: Option<Vec2> = None;
    for n in normals {
        let c = v.dot(*n);
        if c >= 0.0 {
            continue;
        }
        let u = v - *n * c;
        let feasible = normals.iter().all(|m| u.dot(*m) >= -eps);
        if feasible && best.is_none_or(|b| (v - u).norm_sq() < (v - b).norm_sq()) {
            best = Some(u);
        }
    }
    best.unwrap_or(Vec2::ZERO)
}

/// Velocity actually followed at `p` for driver velocity `v`.
fn tangent_velocity(d: &Domain, p: Vec2, v: Vec2, contact: &Contact) -> Result<Vec2> {
    let edges = d.edges();
    match contact {
        Contact::Free => Ok(v),
        Contact::Edge(i) => Ok(project_onto_intersection(v, &[edges[*i].normal])),
        Contact::Multi(active) => {
            let normals: Vec<Vec2> = active.iter().map(|&k| edges[k].normal).collect();
            Ok(project_onto_intersection(v, &normals))
        }
        Contact::Vertex {
            incoming,
            outgoing,
            convex: true,
        } => Ok(project_onto_intersection(
            v,
            &[edges[*incoming].normal, edges[*outgoing].normal],
        )),
        Contact::Vertex {
            incoming,
            outgoing,
            convex: false,
        } => {
            // The tangent cone is the union of two half-planes.
            let (ei, eo) = (&edges[*incoming], &edges[*outgoing]);
            let eps = 1e-12 * v.norm();
            let (ci, co) = (v.dot(ei.normal), v.dot(eo.normal));
            if ci >= -eps || co >= -eps {
                return Ok(v);
            }
            let ui = v - ei.normal * ci;
            let uo = v - eo.normal * co;
            // Only slides that run along an actual edge keep contact.
            let along_in = ui.dot(ei.b - ei.a) < 0.0;
            let along_out = uo.dot(eo.b - eo.a) > 0.0;
            match (along_in, along_out) {
                (true, false) => Ok(ui),
                (false, true) => Ok(uo),
                _ => {
                    let (di, dout) = (-ci, -co);
                    if (di - dout).abs() <= 1e-12 * v.norm() {
                        Err(Error::AmbiguousProjection {
                            point: p,
                            first: p + ui,
                            second: p + uo,
                        })
                    } else if di < dout {
                        Ok(ui)
                    } else {
                        Ok(uo)
                    }
                }
            }
        }
    }
}

/// Moves `q` onto the edge by removing its normal offset, clamping to the
/// endpoints. Axis-aligned edges are hit exactly.
fn snap_to_edge(q: Vec2, e: &Edge) -> Vec2 {
    let on_line = q - e.normal * (q - e.a).dot(e.normal);
    let t = (on_line - e.a).dot(e.b - e.a);
    if t <= 0.0 {
        e.a
    } else if t >= (e.b - e.a).norm_sq() {
        e.b
    } else {
        on_line
    }
}

/// Edges within contact tolerance of `p`.
fn active_edges(contact: &Contact) -> Vec<usize> {
    match contact {
        Contact::Free => vec![],
        Contact::Edge(i) => vec![*i],
        Contact::Vertex {
            incoming, outgoing, ..
        } => vec![*incoming, *outgoing],
        Contact::Multi(v) => v.clone(),
    }
}

/// Reflects the straight driving segment `x → x + delta`.
///
/// The endpoint is exact for the projected dynamics; `dphi` is the total
/// regulator push and each hit lies on the boundary with a direction in the
/// normal cone there.
pub fn reflect_increment(d: &Domain, x: Vec2, delta: Vec2) -> Result<Increment> {
    if !d.contains(x) {
        return Err(Error::OutsideDomain(x));
    }
    if !delta.is_finite() {
        return Err(Error::Validation("non-finite increment".into()));
    }
    let target = x + delta;
    let tol = d.contact_tolerance();
    let edges = d.edges();
    let mut p = x;
    let mut remaining = 1.0_f64;
    let mut hits = Vec::new();
    let mut substeps = 0usize;

    while remaining > 0.0 && delta != Vec2::ZERO {
        substeps += 1;
        if substeps > MAX_SUBSTEPS {
            return Err(Error::StuckInCorner { at: p, substeps });
        }
        let contact = d.contact(p);
        let u = tangent_velocity(d, p, delta, &contact)?;
        let active = active_edges(&contact);

        if u.norm() <= 1e-14 * delta.norm() {
            if let Some(dir) = (-delta).normalized() {
                hits.push(Hit {
                    point: p,
                    direction: dir,
                    magnitude: delta.norm() * remaining,
                });
            }
            break;
        }

        // Earliest event along p + u t, t in (0, remaining].
        let mut t_event = f64::INFINITY;
        let mut event_point = Vec2::ZERO;
        for (k, e) in edges.iter().enumerate() {
            if active.contains(&k) {
                continue;
            }
            let speed = u.dot(e.normal);
            if speed >= 0.0 {
                continue;
            }
            let gap = (p - e.a).dot(e.normal);
            let t = gap / -speed;
            if !(t > 0.0) || t > remaining || t >= t_event {
                continue;
            }
            let q = p + u * t;
            let len = e.a.distance(e.b);
            let lambda = (q - e.a).dot(e.b - e.a) / (len * len);
            let slack = tol / len;
            if lambda < -slack || lambda > 1.0 + slack {
                continue;
            }
            let mut snapped = snap_to_edge(q, e);
            if snapped.distance(e.a) <= tol {
                snapped = e.a;
            } else if snapped.distance(e.b) <= tol {
                snapped = e.b;
            }
            t_event = t;
            event_point = snapped;
        }

        let unorm = u.norm();
        let mut sliding_on = None;
        for &k in &active {
            let e = &edges[k];
            if u.dot(e.normal).abs() > 1e-9 * unorm {
                continue;
            }
            sliding_on = Some(k);
            for end in [e.a, e.b] {
                let t = (end - p).dot(u) / (unorm * unorm);
                if t > 0.0 && t <= remaining && t < t_event && end.distance(p) > tol {
                    t_event = t;
                    event_point = end;
                }
            }
        }

        let (step, next) = if t_event.is_finite() {
            (t_event, event_point)
        } else {
            let mut q = if u == delta && p == x {
                target
            } else {
                p + u * remaining
            };
            if let Some(k) = sliding_on {
                q = snap_to_edge(q, &edges[k]);
            }
            (remaining, q)
        };

        let push = u - delta;
        if push != Vec2::ZERO {
            if let Some(dir) = push.normalized() {
                hits.push(Hit {
                    point: (p + next) * 0.5,
                    direction: dir,
                    magnitude: push.norm() * step,
                });
            }
        }
        p = next;
        remaining -= step;
        if remaining <= 1e-15 {
            break;
        }
    }

    if !d.contains(p) {
        p = d.project(p)?.0;
    }
    Ok(Increment {
        end: p,
        dphi: p - target,
        hits,
        substeps,
    })
}

/// Reflects a piecewise-linear driving path knot by knot.
pub fn solve_path(d: &Domain, w: &DrivingPath) -> Result<SkorohodSolution> {
    check_knots(&w.times, w.values.len())?;
    let start = w.values[0];
    if !d.contains(start) {
        return Err(Error::OutsideDomain(start));
    }
    let n = w.values.len();
    let mut xi = Vec::with_capacity(n);
    let mut phi = Vec::with_capacity(n);
    let mut tv = Vec::with_capacity(n);
    let mut hits = Vec::with_capacity(n);
    xi.push(start);
    phi.push(Vec2::ZERO);
    tv.push(0.0);
    hits.push(Vec::new());
    for k in 1..n {
        let inc = reflect_increment(d, xi[k - 1], w.values[k] - w.values[k - 1])?;
        xi.push(inc.end);
        phi.push(phi[k - 1] + inc.dphi);
        tv.push(tv[k - 1] + inc.hits.iter().map(|h| h.magnitude).sum::<f64>());
        hits.push(inc.hits);
    }
    Ok(SkorohodSolution {
        times: w.times.clone(),
        xi,
        phi,
        tv,
        hits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Polygon;
    use proptest::prelude::*;

    fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Domain {
        Domain::new(
            Polygon::rectangle(Vec2::new(x0, y0), Vec2::new(x1, y1)),
            vec![],
            None,
            vec![],
            0.1,
        )
        .unwrap()
    }

    fn strip() -> Domain {
        rect(-1.0, 0.0, 1.0, 1000.0)
    }

    #[test]
    fn gamma_examples() {
        let s = gamma_1d(&ScalarPath {
            times: vec![0.0, 1.0, 2.0],
            values: vec![0.0, -1.0, 0.5],
        })
        .unwrap();
        assert_eq!(s.phi, vec![0.0, 1.0, 1.0]);
        assert_eq!(s.xi, vec![0.0, 0.0, 1.5]);
        let s = gamma_1d(&ScalarPath {
            times: vec![0.0, 1.0],
            values: vec![0.0, 1.0],
        })
        .unwrap();
        assert_eq!(s.phi, vec![0.0, 0.0]);
        assert_eq!(s.xi, vec![0.0, 1.0]);
        let s = gamma_1d(&ScalarPath {
            times: vec![0.0, 1.0],
            values: vec![0.0, -2.0],
        })
        .unwrap();
        assert_eq!((s.phi[1], s.xi[1]), (2.0, 0.0));
    }

    #[test]
    fn normal_reflection_on_half_plane() {
        let d = rect(-100.0, 0.0, 100.0, 100.0);
        let inc = reflect_increment(&d, Vec2::new(0.0, 0.5), Vec2::new(0.0, -1.0)).unwrap();
        assert_eq!(inc.end, Vec2::new(0.0, 0.0));
        assert_eq!(inc.dphi, Vec2::new(0.0, 0.5));
        assert_eq!(inc.hits.len(), 1);
        assert_eq!(inc.hits[0].direction, Vec2::new(0.0, 1.0));
    }

    #[test]
    fn interior_increment_is_untouched() {
        let d = rect(0.0, 0.0, 1.0, 1.0);
        let inc = reflect_increment(&d, Vec2::new(0.2, 0.2), Vec2::new(0.1, 0.1)).unwrap();
        assert_eq!(inc.end, Vec2::new(0.2, 0.2) + Vec2::new(0.1, 0.1));
        assert_eq!(inc.dphi, Vec2::ZERO);
        assert!(inc.hits.is_empty());
    }

    fn substep_oracle(d: &Domain, x: Vec2, delta: Vec2, m: usize) -> Vec2 {
        let mut p = x;
        for _ in 0..m {
            let q = p + delta / m as f64;
            p = if d.contains(q) { q } else { d.nearest_boundary(q).point };
        }
        p
    }

    #[test]
    fn matches_fine_substep_projection() {
        let d = rect(0.0, 0.0, 1.0, 1.0);
        let (x, delta) = (Vec2::new(0.5, 0.1), Vec2::new(0.8, -0.3));
        let inc = reflect_increment(&d, x, delta).unwrap();
        let oracle = substep_oracle(&d, x, delta, 1 << 12);
        assert!(inc.end.distance(oracle) <= 1e-6, "{:?} vs {oracle:?}", inc.end);
        assert_eq!(inc.end, Vec2::new(1.0, 0.0));
    }

    #[test]
    fn slide_along_hole_matches_substeps() {
        let d = Domain::new(
            Polygon::rectangle(Vec2::new(0.0, 0.0), Vec2::new(1.0, 1.0)),
            vec![Polygon::rectangle(Vec2::new(0.4, 0.4), Vec2::new(0.6, 0.6)).reversed()],
            None,
            vec![],
            0.05,
        )
        .unwrap();
        let (x, delta) = (Vec2::new(0.3, 0.7), Vec2::new(0.5, -0.2));
        let inc = reflect_increment(&d, x, delta).unwrap();
        // Hits the hole top at x = 0.55, slides to the corner (0.6, 0.6), then
        // moves freely for the remaining 40% of the increment.
        assert!(inc.end.distance(Vec2::new(0.8, 0.52)) <= 1e-15, "{:?}", inc.end);
        // Substep projection converges only at first order past a corner.
        let coarse = substep_oracle(&d, x, delta, 999).distance(inc.end);
        let fine = substep_oracle(&d, x, delta, 3999).distance(inc.end);
        assert!(fine <= 1e-4 && fine < 0.5 * coarse, "{coarse} {fine}");
        for h in &inc.hits {
            let cone = d.normal_cone(h.point).unwrap();
            assert!(cone.max_alignment(h.direction) >= 1.0 - 1e-6);
        }
    }

    #[test]
    fn corner_push_stops_at_corner() {
        let d = rect(0.0, 0.0, 1.0, 1.0);
        let inc = reflect_increment(&d, Vec2::new(0.0, 0.0), Vec2::new(-0.3, -0.4)).unwrap();
        assert_eq!(inc.end, Vec2::ZERO);
        assert_eq!(inc.dphi, Vec2::new(0.3, 0.4));
        let cone = d.normal_cone(Vec2::ZERO).unwrap();
        assert_eq!(cone.max_alignment(inc.hits[0].direction), 1.0);
    }

    #[test]
    fn constant_path_is_fixed() {
        let d = rect(0.0, 0.0, 1.0, 1.0);
        let p = Vec2::new(0.0, 0.3);
        let w = DrivingPath::new(vec![0.0, 1.0, 2.0], vec![p; 3]).unwrap();
        let s = solve_path(&d, &w).unwrap();
        assert!(s.xi.iter().all(|&q| q == p));
        assert!(s.phi.iter().all(|&q| q == Vec2::ZERO));
        assert!(s.tv.iter().all(|&t| t == 0.0));
    }

    #[test]
    fn rejects_start_outside() {
        let d = rect(0.0, 0.0, 1.0, 1.0);
        let err = reflect_increment(&d, Vec2::new(2.0, 0.0), Vec2::ZERO).unwrap_err();
        assert!(matches!(err, Error::OutsideDomain(_)));
    }

    fn scalar_path() -> impl Strategy<Value = Vec<f64>> {
        (prop::collection::vec(-1.0f64..1.0, 1..200), 0.0f64..0.5).prop_map(|(steps, w0)| {
            let mut v = vec![w0];
            for s in steps {
                let last = *v.last().unwrap();
                v.push(last + s);
            }
            v
        })
    }

    fn times(n: usize) -> Vec<f64> {
        (0..n).map(|k| k as f64).collect()
    }

    proptest! {
        #[test]
        fn strip_reproduces_gamma(values in scalar_path()) {
            let d = strip();
            let w = DrivingPath::new(
                times(values.len()),
                values.iter().map(|&y| Vec2::new(0.0, y)).collect(),
            ).unwrap();
            let sol = solve_path(&d, &w).unwrap();
            let g = gamma_1d(&ScalarPath { times: w.times.clone(), values: values.clone() }).unwrap();
            for k in 0..values.len() {
                prop_assert!((sol.xi[k].y - g.xi[k]).abs() <= 1e-12);
                prop_assert_eq!(sol.xi[k].x, 0.0);
            }
        }

        #[test]
        fn gamma_is_two_lipschitz(a in scalar_path(), b in scalar_path()) {
            let n = a.len().min(b.len());
            let pa = ScalarPath { times: times(n), values: a[..n].to_vec() };
            let pb = ScalarPath { times: times(n), values: b[..n].to_vec() };
            let (ga, gb) = (gamma_1d(&pa).unwrap(), gamma_1d(&pb).unwrap());
            let dw = (0..n).map(|k| (a[k] - b[k]).abs()).fold(0.0, f64::max);
            let dx = (0..n).map(|k| (ga.xi[k] - gb.xi[k]).abs()).fold(0.0, f64::max);
            prop_assert!(dx <= 2.0 * dw + 1e-12);
        }

        #[test]
        fn refinement_leaves_knots_unchanged(
            steps in prop::collection::vec((-0.6f64..0.6, -0.6f64..0.6), 1..40),
            x0 in 0.0f64..1.0, y0 in 0.0f64..1.0,
        ) {
            let d = rect(0.0, 0.0, 1.0, 1.0);
            let mut values = vec![Vec2::new(x0, y0)];
            for (dx, dy) in steps {
                let last = *values.last().unwrap();
                values.push(last + Vec2::new(dx, dy));
            }
            let w = DrivingPath::new(times(values.len()), values).unwrap();
            let coarse = solve_path(&d, &w).unwrap();
            let fine = solve_path(&d, &w.refined()).unwrap();
            for k in 0..coarse.xi.len() {
                prop_assert!(coarse.xi[k].distance(fine.xi[2 * k]) <= 1e-9);
            }
        }

        #[test]
        fn path_invariants_with_hole(
            steps in prop::collection::vec((-0.3f64..0.3, -0.3f64..0.3), 1..60),
        ) {
            let d = Domain::new(
                Polygon::rectangle(Vec2::new(0.0, 0.0), Vec2::new(1.0, 1.0)),
                vec![Polygon::new(vec![
                    Vec2::new(0.45, 0.35), Vec2::new(0.35, 0.6), Vec2::new(0.65, 0.6),
                ])],
                None, vec![], 0.05,
            ).unwrap();
            let mut values = vec![Vec2::new(0.2, 0.2)];
            for (dx, dy) in steps {
                let last = *values.last().unwrap();
                values.push(last + Vec2::new(dx, dy));
            }
            let w = DrivingPath::new(times(values.len()), values).unwrap();
            let s = solve_path(&d, &w).unwrap();
            let diam = d.diam();
            for k in 0..s.xi.len() {
                prop_assert!(d.contains(s.xi[k]));
                if k > 0 {
                    prop_assert!(s.tv[k] >= s.tv[k - 1]);
                    let near = d.boundary_distance(s.xi[k]) <= 1e-6 * diam;
                    if !near && s.hits[k].is_empty() {
                        prop_assert!(s.tv[k] - s.tv[k - 1] <= 1e-12);
                    }
                }
                for h in &s.hits[k] {
                    prop_assert!(d.boundary_distance(h.point) <= 1e-9 * diam);
                    let cone = d.normal_cone(h.point).unwrap();
                    prop_assert!(cone.max_alignment(h.direction) >= 1.0 - 1e-6);
                }
            }
        }
    }
}
