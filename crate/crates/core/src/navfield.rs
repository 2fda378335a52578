//! Regularized Eikonal navigation field.
//!
//! The viscous Eikonal problem `-ς Δφ + |∇φ|² = f²` with `φ = 0` on the exits
//! and no-flux walls is linearized by the Hopf–Cole substitution
//! `v = exp(-φ/ς)`, which turns it into `-Δv + (f/ς)² v = 0` with `v = 1` on
//! exits. The unknown `v` (rather than `v - 1`) is discretized because it
//! decays to roughly `exp(-diam/ς)` and must keep full relative precision.
//!
//! Discretization is a node-centred finite-volume scheme on the bounding box
//! of the outer polygon: each node owns the square of side `h` around it, and
//! every flux and reaction term is weighted by the fraction of that square
//! (or face) lying in the domain. The resulting matrix is a symmetric
//! M-matrix; it is factored with a banded Cholesky decomposition, whose
//! triangular solves involve only sums of nonnegative terms.

use std::collections::VecDeque;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{closest_on_segment, Domain, Vec2};

/// Classification of a grid node.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NodeKind {
    /// Control volume misses the domain; values are copied from the nearest
    /// active node so interpolation stays continuous.
    Outside,
    Interior,
    /// Dirichlet node on an exit.
    Exit,
}

/// Node-centred grid over the bounding box of the outer polygon.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    pub origin: Vec2,
    pub h: f64,
    pub nx: usize,
    pub ny: usize,
}

impl Grid {
    pub fn covering(d: &Domain, h: f64) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::Validation(format!("grid spacing h must be positive, got {h}")));
        }
        let (lo, hi) = d.bounding_box();
        let nx = ((hi.x - lo.x) / h - 1e-9).ceil().max(1.0) as usize + 1;
        let ny = ((hi.y - lo.y) / h - 1e-9).ceil().max(1.0) as usize + 1;
        if nx.saturating_mul(ny) > 50_000_000 {
            return Err(Error::Validation(format!(
                "grid of {nx} x {ny} nodes is too large; increase h"
            )));
        }
        Ok(Self { origin: lo, h, nx, ny })
    }

    #[inline]
    pub fn node(&self, i: usize, j: usize) -> Vec2 {
        Vec2::new(
            self.origin.x + i as f64 * self.h,
            self.origin.y + j as f64 * self.h,
        )
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Inputs of the navigation solve.
#[derive(Clone, Debug, PartialEq)]
pub struct NavParams {
    pub h: f64,
    pub varsigma: f64,
    /// Per-node walking speed `f > 0` (row-major, `nx * ny`); `None` means 1.
    pub speed: Option<Vec<f64>>,
}

#[derive(Clone, Debug)]
pub struct NavigationField {
    domain: Domain,
    pub grid: Grid,
    pub kind: Vec<NodeKind>,
    /// `φ_ς` at every node (outside nodes carry the nearest active value).
    pub phi: Vec<f64>,
    pub grad: Vec<Vec2>,
    pub varsigma: f64,
    speed: Vec<f64>,
    /// Relative residual `|b - A v| / |b|` of the linear solve.
    pub residual_norm: f64,
    /// Smallest transformed value `v = exp(-φ/ς)` over active nodes.
    pub min_v: f64,
    exit_nodes: Vec<Vec2>,
}

/// Fraction of the segment `a → b` inside the domain (4 midpoint samples).
fn face_fraction(d: &Domain, a: Vec2, b: Vec2) -> f64 {
    (0..4)
        .filter(|&k| d.contains(a + (b - a) * ((k as f64 + 0.5) / 4.0)))
        .count() as f64
        / 4.0
}

/// Fraction of the square of side `h` centred at `c` inside the domain.
fn area_fraction(d: &Domain, c: Vec2, h: f64) -> f64 {
    let mut inside = 0;
    for a in 0..4 {
        for b in 0..4 {
            let off = Vec2::new((a as f64 + 0.5) / 4.0 - 0.5, (b as f64 + 0.5) / 4.0 - 0.5);
            if d.contains(c + off * h) {
                inside += 1;
            }
        }
    }
    inside as f64 / 16.0
}

/// Symmetric banded matrix stored by lower rows: `band[i*(w+1) + (j + w - i)]`
/// holds entry `(i, j)` for `i - w <= j <= i`.
struct Banded {
    n: usize,
    w: usize,
    band: Vec<f64>,
}

impl Banded {
    fn new(n: usize, w: usize) -> Self {
        Self {
            n,
            w,
            band: vec![0.0; n * (w + 1)],
        }
    }

    #[inline]
    fn at(&mut self, i: usize, j: usize) -> &mut f64 {
        debug_assert!(j <= i && i - j <= self.w);
        &mut self.band[i * (self.w + 1) + (j + self.w - i)]
    }

    fn cholesky(mut self) -> Result<Self> {
        let w = self.w;
        let stride = w + 1;
        for i in 0..self.n {
            let lo = i.saturating_sub(w);
            for j in lo..=i {
                let k0 = lo.max(j.saturating_sub(w));
                let row_i = i * stride + w - i;
                let row_j = j * stride + w - j;
                let mut s = self.band[row_i + j];
                for k in k0..j {
                    s -= self.band[row_i + k] * self.band[row_j + k];
                }
                if i == j {
                    if !(s > 0.0) {
                        return Err(Error::SolveFailed(format!(
                            "matrix not positive definite at row {i}"
                        )));
                    }
                    self.band[row_i + i] = s.sqrt();
                } else {
                    self.band[row_i + j] = s / self.band[row_j + j];
                }
            }
        }
        Ok(self)
    }

    fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let (w, stride) = (self.w, self.w + 1);
        let mut y = rhs.to_vec();
        for i in 0..self.n {
            let row = i * stride + w - i;
            let mut s = y[i];
            for k in i.saturating_sub(w)..i {
                s -= self.band[row + k] * y[k];
            }
            y[i] = s / self.band[row + i];
        }
        for i in (0..self.n).rev() {
            let mut s = y[i];
            for k in (i + 1)..(i + w + 1).min(self.n) {
                s -= self.band[k * stride + w - k + i] * y[k];
            }
            y[i] = s / self.band[i * stride + w - i + i];
        }
        y
    }
}

/// Sparse symmetric operator in coordinate rows for residual evaluation.
struct Sparse {
    diag: Vec<f64>,
    off: Vec<Vec<(usize, f64)>>,
}

impl Sparse {
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        (0..x.len())
            .map(|i| {
                self.diag[i] * x[i] + self.off[i].iter().map(|&(j, a)| a * x[j]).sum::<f64>()
            })
            .collect()
    }
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Solves for the navigation field of `d` on a grid of spacing `params.h`.
pub fn solve_navigation(d: &Domain, params: &NavParams) -> Result<NavigationField> {
    let varsigma = params.varsigma;
    if !(varsigma > 0.0 && varsigma.is_finite()) {
        return Err(Error::Validation(format!(
            "varsigma must be positive, got {varsigma}"
        )));
    }
    if d.exits().is_empty() {
        return Err(Error::Validation("navigation field needs at least one exit".into()));
    }
    let grid = Grid::covering(d, params.h)?;
    let (nx, ny, h) = (grid.nx, grid.ny, grid.h);
    let n_nodes = grid.len();
    let speed = match &params.speed {
        None => vec![1.0; n_nodes],
        Some(f) if f.len() == n_nodes => f.clone(),
        Some(f) => {
            return Err(Error::Validation(format!(
                "speed field has {} values, grid has {n_nodes} nodes",
                f.len()
            )))
        }
    };
    if speed.iter().any(|&f| !(f > 0.0 && f.is_finite())) {
        return Err(Error::Validation("speed must be positive and finite".into()));
    }

    let mut area = vec![0.0; n_nodes];
    let mut face_x = vec![0.0; n_nodes]; // face between (i,j) and (i+1,j)
    let mut face_y = vec![0.0; n_nodes]; // face between (i,j) and (i,j+1)
    for j in 0..ny {
        for i in 0..nx {
            let c = grid.node(i, j);
            let k = grid.index(i, j);
            area[k] = area_fraction(d, c, h);
            let half = h / 2.0;
            if i + 1 < nx {
                let x = c.x + half;
                face_x[k] = face_fraction(d, Vec2::new(x, c.y - half), Vec2::new(x, c.y + half));
            }
            if j + 1 < ny {
                let y = c.y + half;
                face_y[k] = face_fraction(d, Vec2::new(c.x - half, y), Vec2::new(c.x + half, y));
            }
        }
    }
    // Faces only couple two nodes that both own part of the domain.
    for j in 0..ny {
        for i in 0..nx {
            let k = grid.index(i, j);
            if i + 1 < nx && (area[k] == 0.0 || area[k + 1] == 0.0) {
                face_x[k] = 0.0;
            }
            if j + 1 < ny && (area[k] == 0.0 || area[k + nx] == 0.0) {
                face_y[k] = 0.0;
            }
        }
    }
    let neighbours = |i: usize, j: usize| {
        let k = grid.index(i, j);
        let mut out: Vec<(usize, f64)> = Vec::with_capacity(4);
        if i + 1 < nx && face_x[k] > 0.0 {
            out.push((k + 1, face_x[k]));
        }
        if i > 0 && face_x[k - 1] > 0.0 {
            out.push((k - 1, face_x[k - 1]));
        }
        if j + 1 < ny && face_y[k] > 0.0 {
            out.push((k + nx, face_y[k]));
        }
        if j > 0 && face_y[k - nx] > 0.0 {
            out.push((k - nx, face_y[k - nx]));
        }
        out
    };

    let mut kind = vec![NodeKind::Outside; n_nodes];
    let mut exit_nodes = Vec::new();
    let exit_segments: Vec<(Vec2, Vec2)> = d.exits().iter().map(|e| d.exit_endpoints(e)).collect();
    let exit_reach = std::f64::consts::FRAC_1_SQRT_2 * h;
    for j in 0..ny {
        for i in 0..nx {
            let k = grid.index(i, j);
            if area[k] == 0.0 || neighbours(i, j).is_empty() {
                continue;
            }
            let c = grid.node(i, j);
            let on_exit = exit_segments
                .iter()
                .any(|&(a, b)| closest_on_segment(c, a, b).0.distance(c) <= exit_reach);
            kind[k] = if on_exit {
                exit_nodes.push(c);
                NodeKind::Exit
            } else {
                NodeKind::Interior
            };
        }
    }
    if exit_nodes.is_empty() {
        return Err(Error::Validation(
            "no grid node lies on an exit; decrease h".into(),
        ));
    }

    // Unknowns are interior nodes, numbered along the shorter grid direction.
    let column_major = nx > ny;
    let mut unknown = vec![usize::MAX; n_nodes];
    let mut nodes_of = Vec::new();
    let mut push = |i: usize, j: usize| {
        let k = grid.index(i, j);
        if kind[k] == NodeKind::Interior {
            unknown[k] = nodes_of.len();
            nodes_of.push((i, j));
        }
    };
    if column_major {
        for i in 0..nx {
            for j in 0..ny {
                push(i, j);
            }
        }
    } else {
        for j in 0..ny {
            for i in 0..nx {
                push(i, j);
            }
        }
    }
    let n = nodes_of.len();
    let mut rhs = vec![0.0; n];
    let mut sparse = Sparse {
        diag: vec![0.0; n],
        off: vec![Vec::new(); n],
    };
    let mut width = 0usize;
    for (r, &(i, j)) in nodes_of.iter().enumerate() {
        let k = grid.index(i, j);
        let coef = speed[k] * speed[k] / (varsigma * varsigma);
        let mut diag = area[k] * h * h * coef;
        for (m, beta) in neighbours(i, j) {
            diag += beta;
            match kind[m] {
                NodeKind::Exit => rhs[r] += beta,
                NodeKind::Interior => {
                    let c = unknown[m];
                    sparse.off[r].push((c, -beta));
                    width = width.max(r.abs_diff(c));
                }
                NodeKind::Outside => unreachable!("faces couple active nodes only"),
            }
        }
        sparse.diag[r] = diag;
    }

    let mut v_active = vec![1.0; n];
    let mut residual_norm = 0.0;
    if n > 0 {
        let mut a = Banded::new(n, width);
        for r in 0..n {
            *a.at(r, r) = sparse.diag[r];
            for &(c, val) in &sparse.off[r] {
                if c < r {
                    *a.at(r, c) = val;
                }
            }
        }
        let chol = a.cholesky()?;
        v_active = chol.solve(&rhs);
        let rhs_norm = norm2(&rhs).max(f64::MIN_POSITIVE);
        for _ in 0..4 {
            let av = sparse.apply(&v_active);
            let res: Vec<f64> = rhs.iter().zip(&av).map(|(b, x)| b - x).collect();
            residual_norm = norm2(&res) / rhs_norm;
            if residual_norm <= 1e-14 {
                break;
            }
            let corr = chol.solve(&res);
            for (x, c) in v_active.iter_mut().zip(&corr) {
                *x += c;
            }
        }
        let av = sparse.apply(&v_active);
        let res: Vec<f64> = rhs.iter().zip(&av).map(|(b, x)| b - x).collect();
        residual_norm = norm2(&res) / rhs_norm;
        if !(residual_norm <= 1e-10) {
            return Err(Error::SolveFailed(format!(
                "relative residual {residual_norm:e} exceeds 1e-10"
            )));
        }
    }

    let mut phi = vec![f64::NAN; n_nodes];
    let mut min_v = 1.0_f64;
    for k in 0..n_nodes {
        match kind[k] {
            NodeKind::Exit => phi[k] = 0.0,
            NodeKind::Interior => {
                let v = v_active[unknown[k]];
                if !(v > 1e-300 && v <= 1.0 && v.is_finite()) {
                    return Err(Error::TransformRange(format!(
                        "transformed value {v:e} at node {k} leaves (0, 1]; \
                         varsigma is too small for this domain or a region is cut off from the exits"
                    )));
                }
                min_v = min_v.min(v);
                phi[k] = -varsigma * v.ln();
            }
            NodeKind::Outside => {}
        }
    }

    let mut grad = vec![Vec2::ZERO; n_nodes];
    for j in 0..ny {
        for i in 0..nx {
            let k = grid.index(i, j);
            if kind[k] == NodeKind::Outside {
                continue;
            }
            let linked = |m: usize, face: f64| face > 0.0 && kind[m] != NodeKind::Outside;
            let east = (i + 1 < nx && linked(k + 1, face_x[k])).then(|| phi[k + 1]);
            let west = (i > 0 && linked(k - 1, face_x[k.wrapping_sub(1)])).then(|| phi[k - 1]);
            let north = (j + 1 < ny && linked(k + nx, face_y[k])).then(|| phi[k + nx]);
            let south = (j > 0 && linked(k - nx, face_y[k.wrapping_sub(nx)])).then(|| phi[k - nx]);
            let diff = |plus: Option<f64>, minus: Option<f64>| match (plus, minus) {
                (Some(p), Some(m)) => (p - m) / (2.0 * h),
                (Some(p), None) => (p - phi[k]) / h,
                (None, Some(m)) => (phi[k] - m) / h,
                (None, None) => 0.0,
            };
            grad[k] = Vec2::new(diff(east, west), diff(north, south));
        }
    }

    // Copy values into outside nodes from the nearest active node.
    let mut queue: VecDeque<usize> = (0..n_nodes).filter(|&k| kind[k] != NodeKind::Outside).collect();
    let mut filled: Vec<bool> = kind.iter().map(|&c| c != NodeKind::Outside).collect();
    while let Some(k) = queue.pop_front() {
        let (i, j) = (k % nx, k / nx);
        let mut visit = |m: usize| {
            if !filled[m] {
                filled[m] = true;
                phi[m] = phi[k];
                grad[m] = grad[k];
                queue.push_back(m);
            }
        };
        if i + 1 < nx {
            visit(k + 1);
        }
        if i > 0 {
            visit(k - 1);
        }
        if j + 1 < ny {
            visit(k + nx);
        }
        if j > 0 {
            visit(k - nx);
        }
    }

    Ok(NavigationField {
        domain: d.clone(),
        grid,
        kind,
        phi,
        grad,
        varsigma,
        speed,
        residual_norm,
        min_v,
        exit_nodes,
    })
}

impl NavigationField {
    fn cell(&self, p: Vec2) -> (usize, usize, f64, f64) {
        let g = &self.grid;
        let fx = ((p.x - g.origin.x) / g.h).clamp(0.0, (g.nx - 1) as f64);
        let fy = ((p.y - g.origin.y) / g.h).clamp(0.0, (g.ny - 1) as f64);
        let i = (fx.floor() as usize).min(g.nx.saturating_sub(2));
        let j = (fy.floor() as usize).min(g.ny.saturating_sub(2));
        (i, j, fx - i as f64, fy - j as f64)
    }

    fn bilinear<T>(&self, values: &[T], p: Vec2) -> T
    where
        T: Copy + std::ops::Mul<f64, Output = T> + std::ops::Add<Output = T>,
    {
        let (i, j, tx, ty) = self.cell(p);
        let g = &self.grid;
        let (i1, j1) = ((i + 1).min(g.nx - 1), (j + 1).min(g.ny - 1));
        let v00 = values[g.index(i, j)];
        let v10 = values[g.index(i1, j)];
        let v01 = values[g.index(i, j1)];
        let v11 = values[g.index(i1, j1)];
        v00 * ((1.0 - tx) * (1.0 - ty)) + v10 * (tx * (1.0 - ty)) + v01 * ((1.0 - tx) * ty) + v11 * (tx * ty)
    }

    /// Interpolated `φ_ς` at `p`.
    pub fn phi_at(&self, p: Vec2) -> f64 {
        self.bilinear(&self.phi, p)
    }

    /// Unit vector along the interpolated `∇φ_ς` at `p`.
    ///
    /// Where the interpolated gradient vanishes, returns the unit vector
    /// pointing away from the nearest exit node, so that `-grad_at` still leads
    /// to an exit.
    pub fn grad_at(&self, p: Vec2) -> Result<Vec2> {
        if !self.domain.contains(p) {
            return Err(Error::OutsideDomain(p));
        }
        let g = self.bilinear(&self.grad, p);
        if g.norm() >= 1e-12 {
            if let Some(u) = g.normalized() {
                return Ok(u);
            }
        }
        let nearest = self
            .exit_nodes
            .iter()
            .copied()
            .min_by(|a, b| a.distance(p).total_cmp(&b.distance(p)))
            .expect("at least one exit node");
        Ok((p - nearest).normalized().unwrap_or(Vec2::new(1.0, 0.0)))
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    /// Active nodes (not outside) other than exits that have no strictly lower
    /// active neighbour, i.e. local minima where descent would get stuck.
    pub fn local_minima(&self) -> Vec<(usize, usize)> {
        let g = &self.grid;
        let mut out = Vec::new();
        for j in 0..g.ny {
            for i in 0..g.nx {
                let k = g.index(i, j);
                if self.kind[k] != NodeKind::Interior {
                    continue;
                }
                let mut lower = false;
                for (di, dj) in [(-1i64, 0i64), (1, 0), (0, -1), (0, 1), (-1, -1), (1, 1), (-1, 1), (1, -1)] {
                    let (a, b) = (i as i64 + di, j as i64 + dj);
                    if a < 0 || b < 0 || a >= g.nx as i64 || b >= g.ny as i64 {
                        continue;
                    }
                    let m = g.index(a as usize, b as usize);
                    if self.kind[m] != NodeKind::Outside && self.phi[m] < self.phi[k] {
                        lower = true;
                        break;
                    }
                }
                if !lower {
                    out.push((i, j));
                }
            }
        }
        out
    }

    /// `max |−ς Δ_h φ + |∇_h φ|² − f²|` over interior nodes at least
    /// `margin` (and at least `2h`) away from walls and exits.
    pub fn nonlinear_residual(&self, margin: f64) -> f64 {
        let g = &self.grid;
        let h = g.h;
        let mut worst: f64 = 0.0;
        for j in 1..g.ny.saturating_sub(1) {
            for i in 1..g.nx.saturating_sub(1) {
                let k = g.index(i, j);
                if self.kind[k] != NodeKind::Interior {
                    continue;
                }
                let c = g.node(i, j);
                let keep = margin.max(2.0 * h);
                if !self.domain.contains(c) || self.domain.boundary_distance(c) < keep {
                    continue;
                }
                if self.exit_nodes.iter().any(|e| e.distance(c) < keep) {
                    continue;
                }
                let (e, w, n, s) = (self.phi[k + 1], self.phi[k - 1], self.phi[k + g.nx], self.phi[k - g.nx]);
                let lap = (e + w + n + s - 4.0 * self.phi[k]) / (h * h);
                let gx = (e - w) / (2.0 * h);
                let gy = (n - s) / (2.0 * h);
                let f = self.speed[k];
                let r = -self.varsigma * lap + gx * gx + gy * gy - f * f;
                worst = worst.max(r.abs());
            }
        }
        worst
    }

    /// Writes `x,y,phi,gx,gy` for every active node.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "x,y,phi,gx,gy")?;
        let g = &self.grid;
        for j in 0..g.ny {
            for i in 0..g.nx {
                let k = g.index(i, j);
                if self.kind[k] == NodeKind::Outside {
                    continue;
                }
                let p = g.node(i, j);
                writeln!(
                    out,
                    "{},{},{},{},{}",
                    p.x, p.y, self.phi[k], self.grad[k].x, self.grad[k].y
                )?;
            }
        }
        out.flush()?;
        Ok(())
    }
}
