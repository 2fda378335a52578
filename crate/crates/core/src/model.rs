//! Drift and diffusion coefficients of the active/passive crowd model.
//!
//! Active pedestrians follow the navigation field at a speed throttled by
//! smoke (`Υ`) and by local crowding (`p_max - p`); they carry no noise.
//! Passive pedestrians interact through a Morse-type pair force and diffuse
//! with an intensity gated by the smoke density (`β`). Every term is already
//! multiplied by the rate `κ`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Polygon, Vec2};
use crate::navfield::NavigationField;

/// Resolved model constants.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub zeta: f64,
    pub eta: f64,
    pub c_a: f64,
    pub c_r: f64,
    pub ell_a: f64,
    pub ell_r: f64,
    pub eps: f64,
    pub delta_tilde: f64,
    pub mu0: f64,
    pub p_max: f64,
    pub s_cr: f64,
    pub beta_width: f64,
    pub kappa: f64,
    /// Norm bound applied to every drift vector and diffusion matrix.
    pub bound: f64,
    pub smooth_discomfort: bool,
}

impl ModelParams {
    /// Checks positivity of every constant, naming the first offender.
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("zeta", self.zeta),
            ("eta", self.eta),
            ("C_A", self.c_a),
            ("C_R", self.c_r),
            ("ell_A", self.ell_a),
            ("ell_R", self.ell_r),
            ("eps", self.eps),
            ("delta_tilde", self.delta_tilde),
            ("mu0", self.mu0),
            ("p_max", self.p_max),
            ("beta_width", self.beta_width),
            ("kappa", self.kappa),
            ("bound", self.bound),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Validation(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.s_cr >= 0.0 && self.s_cr.is_finite()) {
            return Err(Error::Validation(format!("s_cr must be >= 0, got {}", self.s_cr)));
        }
        Ok(())
    }
}

/// Smoke density `s(x) ≥ 0`, stationary in time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SmokeField {
    None,
    GaussianPlume {
        center: Vec2,
        amplitude: f64,
        width: f64,
    },
    /// Node values on a regular grid, bilinearly interpolated and clamped to
    /// the grid edges.
    Grid {
        origin: Vec2,
        h: f64,
        nx: usize,
        ny: usize,
        values: Vec<f64>,
    },
}

impl SmokeField {
    /// Plume centred on the fire polygon.
    pub fn plume_at_fire(fire: &Polygon, amplitude: f64, width: f64) -> Self {
        SmokeField::GaussianPlume {
            center: fire.centroid(),
            amplitude,
            width,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            SmokeField::None => Ok(()),
            SmokeField::GaussianPlume {
                center,
                amplitude,
                width,
            } => {
                if !center.is_finite() || !(*amplitude >= 0.0) || !(*width > 0.0) {
                    return Err(Error::Validation(
                        "smoke plume needs finite center, amplitude >= 0 and width > 0".into(),
                    ));
                }
                Ok(())
            }
            SmokeField::Grid {
                h, nx, ny, values, ..
            } => {
                if !(*h > 0.0) || *nx < 2 || *ny < 2 || values.len() != nx * ny {
                    return Err(Error::Validation(
                        "smoke grid needs h > 0, at least 2x2 nodes and nx*ny values".into(),
                    ));
                }
                if values.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
                    return Err(Error::Validation("smoke grid values must be >= 0".into()));
                }
                Ok(())
            }
        }
    }

    pub fn eval(&self, p: Vec2) -> f64 {
        match self {
            SmokeField::None => 0.0,
            SmokeField::GaussianPlume {
                center,
                amplitude,
                width,
            } => amplitude * (-(p - *center).norm_sq() / (2.0 * width * width)).exp(),
            SmokeField::Grid {
                origin,
                h,
                nx,
                ny,
                values,
            } => {
                let fx = ((p.x - origin.x) / h).clamp(0.0, (nx - 1) as f64);
                let fy = ((p.y - origin.y) / h).clamp(0.0, (ny - 1) as f64);
                let i = (fx.floor() as usize).min(nx - 2);
                let j = (fy.floor() as usize).min(ny - 2);
                let (tx, ty) = (fx - i as f64, fy - j as f64);
                let at = |a: usize, b: usize| values[b * nx + a];
                at(i, j) * (1.0 - tx) * (1.0 - ty)
                    + at(i + 1, j) * tx * (1.0 - ty)
                    + at(i, j + 1) * (1.0 - tx) * ty
                    + at(i + 1, j + 1) * tx * ty
            }
        }
    }
}

/// Smoke-dependent walking speed factor, clamped at zero.
pub fn upsilon(s: f64, p: &ModelParams) -> f64 {
    (-p.zeta * s + p.eta).max(0.0)
}

/// Logistic gate: 1 in clean air, 0 in dense smoke, 1/2 at `s_cr`.
pub fn beta_gate(s: f64, p: &ModelParams) -> f64 {
    1.0 / (1.0 + ((s - p.s_cr) / p.beta_width).exp())
}

/// Morse-type interaction strength at distance `r`.
pub fn morse_omega(r: f64, s: f64, p: &ModelParams) -> f64 {
    -beta_gate(s, p) * (-p.c_a * (-r / p.ell_a).exp() + p.c_r * (-r / p.ell_r).exp())
}

/// Weight of a neighbour at distance `r` in the discomfort count.
fn discomfort_weight(r: f64, p: &ModelParams) -> f64 {
    if !p.smooth_discomfort {
        return if r < p.delta_tilde { 1.0 } else { 0.0 };
    }
    let ramp = p.delta_tilde / 10.0;
    let inner = p.delta_tilde - ramp;
    if r <= inner {
        1.0
    } else if r >= p.delta_tilde {
        0.0
    } else {
        (p.delta_tilde - r) / ramp
    }
}

/// `μ0` times the number of pedestrians within `δ̃` of `x` (self included
/// when `x` is a pedestrian position). `others` must hold only pedestrians
/// still in the room.
pub fn discomfort(x: Vec2, others: &[Vec2], p: &ModelParams) -> f64 {
    p.mu0
        * others
            .iter()
            .map(|&y| discomfort_weight(y.distance(x), p))
            .sum::<f64>()
}

/// 2×2 matrix in row-major order.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Mat2 {
    pub m: [[f64; 2]; 2],
}

impl Mat2 {
    pub const ZERO: Mat2 = Mat2 { m: [[0.0; 2]; 2] };

    pub fn scalar(s: f64) -> Self {
        Mat2 {
            m: [[s, 0.0], [0.0, s]],
        }
    }

    pub fn apply(&self, v: Vec2) -> Vec2 {
        Vec2::new(
            self.m[0][0] * v.x + self.m[0][1] * v.y,
            self.m[1][0] * v.x + self.m[1][1] * v.y,
        )
    }

    /// Spectral norm.
    pub fn norm(&self) -> f64 {
        let [[a, b], [c, d]] = self.m;
        let s1 = (a + d).hypot(c - b);
        let s2 = (a - d).hypot(c + b);
        0.5 * (s1 + s2)
    }

    pub fn scaled(&self, s: f64) -> Self {
        let [[a, b], [c, d]] = self.m;
        Mat2 {
            m: [[a * s, b * s], [c * s, d * s]],
        }
    }

    pub fn is_zero(&self) -> bool {
        *self == Mat2::ZERO
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Active,
    Passive,
}

/// Positions of all pedestrians, actives first.
#[derive(Clone, Debug, PartialEq)]
pub struct CrowdState {
    pub positions: Vec<Vec2>,
    pub kinds: Vec<Kind>,
    pub evacuated: Vec<bool>,
    pub time: f64,
}

impl CrowdState {
    pub fn new(active: &[Vec2], passive: &[Vec2]) -> Self {
        let positions: Vec<Vec2> = active.iter().chain(passive).copied().collect();
        let kinds = std::iter::repeat_n(Kind::Active, active.len())
            .chain(std::iter::repeat_n(Kind::Passive, passive.len()))
            .collect();
        let evacuated = vec![false; positions.len()];
        Self {
            positions,
            kinds,
            evacuated,
            time: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Positions of pedestrians still in the room.
    pub fn present(&self) -> Vec<Vec2> {
        self.positions
            .iter()
            .zip(&self.evacuated)
            .filter(|(_, &e)| !e)
            .map(|(&p, _)| p)
            .collect()
    }
}

/// Source of frozen drift and diffusion coefficients for one time step.
pub trait Coefficients: Sync {
    /// Fills `b` and `sigma` for every pedestrian (zero for evacuated ones)
    /// and returns the number of norm clips applied.
    fn evaluate(&self, state: &CrowdState, b: &mut [Vec2], sigma: &mut [Mat2]) -> Result<usize>;
}

/// The full active/passive crowd model.
#[derive(Clone, Debug)]
pub struct CrowdModel<'a> {
    pub params: ModelParams,
    pub nav: Option<&'a NavigationField>,
    pub smoke: SmokeField,
}

fn clip_vec(v: Vec2, bound: f64, clips: &mut usize) -> Vec2 {
    let n = v.norm();
    if n > bound {
        *clips += 1;
        v * (bound / n)
    } else {
        v
    }
}

fn clip_mat(m: Mat2, bound: f64, clips: &mut usize) -> Mat2 {
    let n = m.norm();
    if n > bound {
        *clips += 1;
        m.scaled(bound / n)
    } else {
        m
    }
}

impl CrowdModel<'_> {
    /// Contribution of pedestrian at `other` to the passive pedestrian at `x`.
    pub fn pair_force(&self, x: Vec2, other: Vec2, s: f64) -> Vec2 {
        let diff = other - x;
        let r = diff.norm();
        diff * (morse_omega(r, s, &self.params) / (self.params.eps + r))
    }
}

impl Coefficients for CrowdModel<'_> {
    fn evaluate(&self, state: &CrowdState, b: &mut [Vec2], sigma: &mut [Mat2]) -> Result<usize> {
        let p = &self.params;
        let present = state.present();
        let mut clips = 0;
        for k in 0..state.len() {
            if state.evacuated[k] {
                b[k] = Vec2::ZERO;
                sigma[k] = Mat2::ZERO;
                continue;
            }
            let x = state.positions[k];
            let s = self.smoke.eval(x);
            match state.kinds[k] {
                Kind::Active => {
                    let nav = self.nav.ok_or_else(|| {
                        Error::Validation("active pedestrians need a navigation field".into())
                    })?;
                    let dir = nav.grad_at(x)?;
                    let slack = p.p_max - discomfort(x, &present, p);
                    b[k] = clip_vec(dir * (-p.kappa * upsilon(s, p) * slack), p.bound, &mut clips);
                    sigma[k] = Mat2::ZERO;
                }
                Kind::Passive => {
                    let mut force = Vec2::ZERO;
                    for j in 0..state.len() {
                        if j != k && !state.evacuated[j] {
                            force += self.pair_force(x, state.positions[j], s);
                        }
                    }
                    b[k] = clip_vec(force * p.kappa, p.bound, &mut clips);
                    sigma[k] = clip_mat(Mat2::scalar(p.kappa * beta_gate(s, p)), p.bound, &mut clips);
                }
            }
        }
        Ok(clips)
    }
}

/// Same drift vector and isotropic diffusion for every pedestrian.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConstantCoefficients {
    pub drift: Vec2,
    pub sigma: f64,
}

impl Coefficients for ConstantCoefficients {
    fn evaluate(&self, state: &CrowdState, b: &mut [Vec2], sigma: &mut [Mat2]) -> Result<usize> {
        for k in 0..state.len() {
            if state.evacuated[k] {
                b[k] = Vec2::ZERO;
                sigma[k] = Mat2::ZERO;
            } else {
                b[k] = self.drift;
                sigma[k] = Mat2::scalar(self.sigma);
            }
        }
        Ok(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Domain, ExitSegment};
    use crate::navfield::{solve_navigation, NavParams};

    fn params() -> ModelParams {
        ModelParams {
            zeta: 1.0,
            eta: 2.0,
            c_a: 1.0,
            c_r: 2.0,
            ell_a: 2.0,
            ell_r: 0.5,
            eps: 0.1,
            delta_tilde: 0.5,
            mu0: 1.0,
            p_max: 3.0,
            s_cr: 1.0,
            beta_width: 0.1,
            kappa: 1.0,
            bound: 1e6,
            smooth_discomfort: false,
        }
    }

    #[test]
    fn upsilon_examples() {
        let p = params();
        assert_eq!(upsilon(0.0, &p), p.eta);
        assert_eq!(upsilon(1.0, &p), 1.0);
        assert_eq!(upsilon(5.0, &p), 0.0);
    }

    #[test]
    fn beta_examples() {
        let p = params();
        assert_eq!(beta_gate(p.s_cr, &p), 0.5);
        let q = ModelParams {
            s_cr: 10.0,
            ..params()
        };
        assert!((beta_gate(0.0, &q) - 1.0).abs() <= 1e-6);
        let want = 1.0 / (1.0 + 2f64.exp());
        assert!((beta_gate(1.2, &p) - want).abs() <= 1e-12);
        assert!((beta_gate(1.2, &p) - 0.119_202_922_022_117_56).abs() <= 1e-9);
    }

    #[test]
    fn omega_examples() {
        let p = ModelParams {
            s_cr: 1e9,
            beta_width: 1.0,
            ..params()
        };
        // Gate is 1 to within rounding for s far below s_cr.
        assert_eq!(beta_gate(0.0, &p), 1.0);
        assert!((morse_omega(0.0, 0.0, &p) - -(p.c_r - p.c_a)).abs() <= 1e-12);
        // e^{-1/2} - 2 e^{-2}, evaluated independently to 20 digits.
        assert!((morse_omega(1.0, 0.0, &p) - 0.335_860_093_239_408_04).abs() <= 1e-9);
        let same = ModelParams {
            c_r: p.c_a,
            ell_r: p.ell_a,
            ..p.clone()
        };
        for r in [0.0, 0.3, 1.0, 7.0] {
            assert_eq!(morse_omega(r, 0.0, &same), 0.0);
        }
    }

    #[test]
    fn discomfort_examples() {
        let p = ModelParams {
            mu0: 2.5,
            ..params()
        };
        let x = Vec2::new(1.0, 1.0);
        assert_eq!(discomfort(x, &[x], &p), 2.5);
        let near = [x, x + Vec2::new(0.1, 0.0), x + Vec2::new(0.0, -0.2)];
        assert_eq!(discomfort(x, &near, &p), 3.0 * 2.5);
    }

    #[test]
    fn smooth_discomfort_ramps() {
        let p = ModelParams {
            smooth_discomfort: true,
            ..params()
        };
        let x = Vec2::ZERO;
        assert_eq!(discomfort(x, &[Vec2::new(0.44, 0.0)], &p), 1.0);
        assert!((discomfort(x, &[Vec2::new(0.475, 0.0)], &p) - 0.5).abs() < 1e-12);
        assert_eq!(discomfort(x, &[Vec2::new(0.5, 0.0)], &p), 0.0);
    }

    #[test]
    fn mat2_norm() {
        assert_eq!(Mat2::scalar(3.0).norm(), 3.0);
        let m = Mat2 {
            m: [[0.0, 2.0], [0.0, 0.0]],
        };
        assert!((m.norm() - 2.0).abs() < 1e-15);
    }

    fn room() -> Domain {
        Domain::new(
            Polygon::rectangle(Vec2::new(0.0, 0.0), Vec2::new(1.0, 1.0)),
            vec![],
            None,
            vec![ExitSegment {
                edge: 3,
                t0: 0.0,
                t1: 1.0,
                r_e: 0.0,
            }],
            0.1,
        )
        .unwrap()
    }

    #[test]
    fn saturated_active_pedestrian_stands_still() {
        let d = room();
        let nav = solve_navigation(
            &d,
            &NavParams {
                h: 1.0 / 32.0,
                varsigma: 0.05,
                speed: None,
            },
        )
        .unwrap();
        let p = ModelParams {
            mu0: d.area(),
            p_max: d.area(),
            ..params()
        };
        let model = CrowdModel {
            params: p,
            nav: Some(&nav),
            smoke: SmokeField::None,
        };
        let state = CrowdState::new(&[Vec2::new(0.5, 0.5)], &[]);
        let (mut b, mut s) = (vec![Vec2::ZERO; 1], vec![Mat2::ZERO; 1]);
        model.evaluate(&state, &mut b, &mut s).unwrap();
        assert_eq!(b[0].norm(), 0.0);
        assert!(s[0].is_zero());
    }

    #[test]
    fn lone_passive_only_diffuses() {
        let p = ModelParams {
            kappa: 2.0,
            ..params()
        };
        let smoke = SmokeField::GaussianPlume {
            center: Vec2::new(0.5, 0.5),
            amplitude: 1.0,
            width: 0.3,
        };
        let x = Vec2::new(0.4, 0.5);
        let s = smoke.eval(x);
        let model = CrowdModel {
            params: p.clone(),
            nav: None,
            smoke,
        };
        let state = CrowdState::new(&[], &[x]);
        let (mut b, mut sg) = (vec![Vec2::new(9.0, 9.0); 1], vec![Mat2::ZERO; 1]);
        model.evaluate(&state, &mut b, &mut sg).unwrap();
        assert_eq!(b[0], Vec2::ZERO);
        assert_eq!(sg[0], Mat2::scalar(2.0 * beta_gate(s, &p)));
    }

    #[test]
    fn passive_pair_is_antisymmetric() {
        let p = params();
        let model = CrowdModel {
            params: p,
            nav: None,
            smoke: SmokeField::None,
        };
        let (a, c) = (Vec2::new(0.2, 0.3), Vec2::new(0.71, 0.45));
        let state = CrowdState::new(&[], &[a, c]);
        let (mut b, mut s) = (vec![Vec2::ZERO; 2], vec![Mat2::ZERO; 2]);
        model.evaluate(&state, &mut b, &mut s).unwrap();
        assert_eq!(b[0], -b[1]);
        assert!(b[0].norm() > 0.0);
    }

    #[test]
    fn clipping_counts() {
        let p = ModelParams {
            bound: 0.1,
            kappa: 5.0,
            ..params()
        };
        let model = CrowdModel {
            params: p,
            nav: None,
            smoke: SmokeField::None,
        };
        let state = CrowdState::new(&[], &[Vec2::ZERO, Vec2::new(0.1, 0.0)]);
        let (mut b, mut s) = (vec![Vec2::ZERO; 2], vec![Mat2::ZERO; 2]);
        let clips = model.evaluate(&state, &mut b, &mut s).unwrap();
        assert_eq!(clips, 4);
        assert!(b.iter().all(|v| v.norm() <= 0.1 + 1e-15));
        assert!(s.iter().all(|m| m.norm() <= 0.1 + 1e-15));
    }

    #[test]
    fn validation_names_field() {
        let p = ModelParams {
            ell_a: -1.0,
            ..params()
        };
        assert!(p.validate().unwrap_err().to_string().contains("ell_A"));
    }

    #[test]
    fn grid_smoke_interpolates() {
        let smoke = SmokeField::Grid {
            origin: Vec2::ZERO,
            h: 1.0,
            nx: 2,
            ny: 2,
            values: vec![0.0, 1.0, 2.0, 3.0],
        };
        smoke.validate().unwrap();
        assert!((smoke.eval(Vec2::new(0.5, 0.5)) - 1.5).abs() < 1e-15);
        assert_eq!(smoke.eval(Vec2::new(5.0, 5.0)), 3.0);
    }
}
