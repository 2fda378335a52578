//! Dyadic Euler–Skorohod scheme.
//!
//! Time `[0, T]` is cut into `2^n` steps of length `T 2^{-n}`. On each step
//! the drift and diffusion are frozen at the left endpoint, the driving
//! increment `b dt + σ ΔB` is formed, and the straight driving segment is
//! reflected exactly by [`reflect_increment`].
//!
//! With [`NoiseMode::Bridge`] the step additionally accounts for boundary
//! contact of the Brownian path *inside* the step: the minimum of the
//! Brownian bridge in the direction of the nearest wall is sampled, and the
//! reflection push it implies is applied along that wall's normal. For a
//! half-plane this makes each step exact in law. The correction is skipped
//! when the nearest boundary point is a corner.

pub mod experiments;
pub mod noise;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Domain, Vec2};
use crate::model::{Coefficients, CrowdState, Kind, Mat2};
use crate::skorohod::{reflect_increment, Hit};

pub use noise::BrownianSource;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    /// Reflect the linear interpolation of the driving path only.
    #[default]
    Linear,
    /// Also apply the push implied by the sampled in-step bridge minimum.
    Bridge,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SchemeConfig {
    pub level: u32,
    pub horizon: f64,
    pub seed: u64,
    pub ensemble_size: usize,
    pub absorb_at_exit: bool,
    pub record_stride: usize,
    pub noise: NoiseMode,
    /// Worker threads for the ensemble (0 = all cores).
    pub workers: usize,
    /// Keep every regulator piece in the trajectory record.
    pub record_hits: bool,
}

impl SchemeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.level < 1 || self.level > 30 {
            return Err(Error::Validation(format!(
                "level must be in 1..=30, got {}",
                self.level
            )));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::Validation(format!(
                "horizon must be positive, got {}",
                self.horizon
            )));
        }
        if self.ensemble_size < 1 {
            return Err(Error::Validation("ensemble_size must be >= 1".into()));
        }
        if self.record_stride < 1 {
            return Err(Error::Validation("record_stride must be >= 1".into()));
        }
        if self.ensemble_size >= 1 << 32 {
            return Err(Error::Validation("ensemble_size must be < 2^32".into()));
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        step_length(self.horizon, self.level)
    }

    pub fn steps(&self) -> usize {
        1 << self.level
    }
}

pub fn step_length(horizon: f64, level: u32) -> f64 {
    horizon / (1u64 << level) as f64
}

/// Work space and result of one step.
#[derive(Clone, Debug, Default)]
pub struct StepReport {
    pub dphi: Vec<Vec2>,
    pub hits: Vec<Vec<Hit>>,
    pub substeps: usize,
    pub clips: usize,
}

/// Random input of one step for every pedestrian.
pub struct StepNoise<'a> {
    pub db: &'a [Vec2],
    /// Bridge uniforms, present in [`NoiseMode::Bridge`].
    pub bridge: Option<&'a [f64]>,
}

/// Push along the inward normal that makes the endpoint agree with the
/// sampled minimum of the Brownian bridge in the normal direction.
///
/// `gap` is the distance to the wall, `z` the normal component of the
/// increment, `sd` the normal standard deviation rate and `u` a uniform in
/// `(0, 1]`.
pub fn bridge_push(gap: f64, z: f64, sd: f64, dt: f64, u: f64) -> f64 {
    let var = sd * sd * dt;
    let low = 0.5 * (z - (z * z - 2.0 * var * u.ln()).sqrt());
    let end = gap + z;
    (end.max(z - low) - end.max(0.0)).max(0.0)
}

/// Advances `state` by one frozen-coefficient step of length `dt`.
pub fn step(
    domain: &Domain,
    coeffs: &dyn Coefficients,
    state: &mut CrowdState,
    dt: f64,
    noise: StepNoise<'_>,
    report: &mut StepReport,
) -> Result<()> {
    let n = state.len();
    let mut b = vec![Vec2::ZERO; n];
    let mut sigma = vec![Mat2::ZERO; n];
    report.clips = coeffs.evaluate(state, &mut b, &mut sigma)?;
    report.dphi.clear();
    report.dphi.resize(n, Vec2::ZERO);
    report.hits.clear();
    report.hits.resize(n, Vec::new());
    report.substeps = 0;
    for k in 0..n {
        if state.evacuated[k] {
            continue;
        }
        let x = state.positions[k];
        let delta = b[k] * dt + sigma[k].apply(noise.db[k]);
        if delta == Vec2::ZERO {
            continue;
        }
        let mut inc = reflect_increment(domain, x, delta)?;
        if let (Some(us), false) = (noise.bridge, sigma[k].is_zero()) {
            let foot = domain.nearest_boundary(x);
            let n_in = foot.normal;
            let m = sigma[k].m;
            // Standard deviation rate of ⟨σ dB, n⟩.
            let sd = Vec2::new(
                m[0][0] * n_in.x + m[1][0] * n_in.y,
                m[0][1] * n_in.x + m[1][1] * n_in.y,
            )
            .norm();
            let push = if foot.at_vertex {
                0.0
            } else {
                bridge_push(foot.distance, delta.dot(n_in), sd, dt, us[k])
            };
            if push > 0.0 {
                let extra = reflect_increment(domain, inc.end, n_in * push)?;
                inc.hits.push(Hit {
                    point: foot.point,
                    direction: n_in,
                    magnitude: push,
                });
                inc.hits.extend(extra.hits);
                inc.substeps += extra.substeps;
                inc.end = extra.end;
            }
        }
        state.positions[k] = inc.end;
        report.dphi[k] = inc.end - (x + delta);
        report.substeps += inc.substeps;
        report.hits[k] = inc.hits;
    }
    state.time += dt;
    Ok(())
}

/// One regulator piece with its step and pedestrian.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Contact {
    pub step: usize,
    pub pedestrian: usize,
    pub hit: Hit,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryRecord {
    pub member: usize,
    pub steps: Vec<usize>,
    pub times: Vec<f64>,
    /// `positions[r][k]`: pedestrian `k` at record `r`.
    pub positions: Vec<Vec<Vec2>>,
    /// Running regulator total variation `|Φ|_t`.
    pub tv: Vec<Vec<f64>>,
    pub evacuated: Vec<Vec<bool>>,
    pub kinds: Vec<Kind>,
    pub evacuation_times: Vec<Option<f64>>,
    pub clip_events: usize,
    pub substeps: usize,
    pub contacts: Vec<Contact>,
    /// Step index and message if the trajectory stopped on an error.
    pub failure: Option<(usize, String)>,
}

/// Everything a trajectory run needs besides the member index.
pub struct Problem<'a> {
    pub domain: &'a Domain,
    pub coeffs: &'a dyn Coefficients,
    pub initial: &'a CrowdState,
}

/// Runs one member at `level` using `source`, calling `observe` after every
/// step with the step number (1-based) and the new state.
pub fn integrate(
    problem: &Problem<'_>,
    source: &BrownianSource,
    member: usize,
    level: u32,
    horizon: f64,
    mode: NoiseMode,
    absorb: bool,
    mut observe: impl FnMut(usize, &CrowdState, &StepReport),
) -> std::result::Result<CrowdState, (usize, Error, CrowdState)> {
    let mut state = problem.initial.clone();
    let n = state.len();
    let dt = step_length(horizon, level);
    let mut streams: Vec<_> = (0..n).map(|k| source.stream(member as u64, k as u64, level)).collect();
    let mut db = vec![Vec2::ZERO; n];
    let mut us = vec![1.0; n];
    let mut report = StepReport::default();
    for s in 0..(1usize << level) {
        for k in 0..n {
            db[k] = streams[k].next_increment();
            if mode == NoiseMode::Bridge {
                us[k] = source.aux_uniform(member as u64, k as u64, level, s as u64);
            }
        }
        let noise = StepNoise {
            db: &db,
            bridge: (mode == NoiseMode::Bridge).then_some(&us[..]),
        };
        if let Err(e) = step(problem.domain, problem.coeffs, &mut state, dt, noise, &mut report) {
            return Err((s + 1, e, state));
        }
        state.time = (s + 1) as f64 * dt;
        if absorb {
            for k in 0..n {
                if state.evacuated[k] {
                    continue;
                }
                let x = state.positions[k];
                let out = problem.domain.exits().iter().any(|e| {
                    let (a, b) = problem.domain.exit_endpoints(e);
                    crate::geometry::closest_on_segment(x, a, b).0.distance(x)
                        <= e.r_e.max(problem.domain.tolerance())
                });
                if out {
                    state.evacuated[k] = true;
                }
            }
        }
        observe(s + 1, &state, &report);
    }
    Ok(state)
}

fn run_member(problem: &Problem<'_>, cfg: &SchemeConfig, source: &BrownianSource, member: usize) -> TrajectoryRecord {
    let n = problem.initial.len();
    let steps_total = cfg.steps();
    let mut rec = TrajectoryRecord {
        member,
        steps: vec![0],
        times: vec![0.0],
        positions: vec![problem.initial.positions.clone()],
        tv: vec![vec![0.0; n]],
        evacuated: vec![problem.initial.evacuated.clone()],
        kinds: problem.initial.kinds.clone(),
        evacuation_times: vec![None; n],
        clip_events: 0,
        substeps: 0,
        contacts: Vec::new(),
        failure: None,
    };
    let mut tv = vec![0.0; n];
    let result = integrate(
        problem,
        source,
        member,
        cfg.level,
        cfg.horizon,
        cfg.noise,
        cfg.absorb_at_exit,
        |s, state, report| {
            rec.clip_events += report.clips;
            rec.substeps += report.substeps;
            for k in 0..n {
                for h in &report.hits[k] {
                    tv[k] += h.magnitude;
                    if cfg.record_hits {
                        rec.contacts.push(Contact {
                            step: s,
                            pedestrian: k,
                            hit: *h,
                        });
                    }
                }
                if state.evacuated[k] && rec.evacuation_times[k].is_none() {
                    rec.evacuation_times[k] = Some(state.time);
                }
            }
            if s % cfg.record_stride == 0 || s == steps_total {
                rec.steps.push(s);
                rec.times.push(state.time);
                rec.positions.push(state.positions.clone());
                rec.tv.push(tv.clone());
                rec.evacuated.push(state.evacuated.clone());
            }
        },
    );
    if let Err((s, e, _)) = result {
        rec.failure = Some((s, e.to_string()));
    }
    rec
}

/// Runs the ensemble. Results are ordered by member index and do not depend
/// on the number of workers.
pub fn simulate(problem: &Problem<'_>, cfg: &SchemeConfig) -> Result<Vec<TrajectoryRecord>> {
    cfg.validate()?;
    for (k, &p) in problem.initial.positions.iter().enumerate() {
        if !problem.domain.contains(p) {
            return Err(Error::Validation(format!(
                "pedestrian {k} starts outside the domain at ({}, {})",
                p.x, p.y
            )));
        }
    }
    let source = BrownianSource::new(cfg.seed, cfg.horizon, cfg.level);
    let run = || {
        (0..cfg.ensemble_size)
            .into_par_iter()
            .map(|m| run_member(problem, cfg, &source, m))
            .collect::<Vec<_>>()
    };
    in_pool(cfg.workers, run)
}

/// Runs `f` on a dedicated pool of `workers` threads (0 = default size).
pub fn in_pool<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Validation(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Polygon;
    use crate::model::ConstantCoefficients;

    fn half_plane() -> Domain {
        Domain::new(
            Polygon::rectangle(Vec2::new(-50.0, 0.0), Vec2::new(50.0, 50.0)),
            vec![],
            None,
            vec![],
            1.0,
        )
        .unwrap()
    }

    fn cfg(level: u32, members: usize) -> SchemeConfig {
        SchemeConfig {
            level,
            horizon: 1.0,
            seed: 5,
            ensemble_size: members,
            absorb_at_exit: false,
            record_stride: 1,
            noise: NoiseMode::Linear,
            workers: 2,
            record_hits: true,
        }
    }

    #[test]
    fn frozen_state_without_coefficients() {
        let d = half_plane();
        let coeffs = ConstantCoefficients {
            drift: Vec2::ZERO,
            sigma: 0.0,
        };
        let init = CrowdState::new(&[], &[Vec2::new(0.0, 1.0), Vec2::new(3.0, 0.0)]);
        let recs = simulate(
            &Problem {
                domain: &d,
                coeffs: &coeffs,
                initial: &init,
            },
            &cfg(4, 3),
        )
        .unwrap();
        for r in &recs {
            assert!(r.positions.iter().all(|p| *p == init.positions));
            assert!(r.tv.iter().flatten().all(|&t| t == 0.0));
        }
    }

    #[test]
    fn interior_step_adds_delta() {
        let d = half_plane();
        let coeffs = ConstantCoefficients {
            drift: Vec2::new(0.5, 0.25),
            sigma: 0.0,
        };
        let mut state = CrowdState::new(&[], &[Vec2::new(0.0, 1.0)]);
        let mut rep = StepReport::default();
        step(
            &d,
            &coeffs,
            &mut state,
            0.1,
            StepNoise {
                db: &[Vec2::ZERO],
                bridge: None,
            },
            &mut rep,
        )
        .unwrap();
        assert_eq!(state.positions[0], Vec2::new(0.0, 1.0) + Vec2::new(0.5, 0.25) * 0.1);
        assert_eq!(rep.dphi[0], Vec2::ZERO);
    }

    #[test]
    fn outward_step_on_boundary_is_cancelled() {
        let d = half_plane();
        let coeffs = ConstantCoefficients {
            drift: Vec2::new(0.2, -1.0),
            sigma: 0.0,
        };
        let mut state = CrowdState::new(&[], &[Vec2::new(1.0, 0.0)]);
        let mut rep = StepReport::default();
        step(
            &d,
            &coeffs,
            &mut state,
            0.5,
            StepNoise {
                db: &[Vec2::ZERO],
                bridge: None,
            },
            &mut rep,
        )
        .unwrap();
        assert_eq!(state.positions[0], Vec2::new(1.1, 0.0));
        assert_eq!(rep.dphi[0], Vec2::new(0.0, 0.5));
    }

    #[test]
    fn deterministic_across_workers() {
        let d = half_plane();
        let coeffs = ConstantCoefficients {
            drift: Vec2::ZERO,
            sigma: 1.0,
        };
        let init = CrowdState::new(&[], &[Vec2::ZERO, Vec2::new(1.0, 1.0)]);
        let problem = Problem {
            domain: &d,
            coeffs: &coeffs,
            initial: &init,
        };
        let mut one = cfg(6, 16);
        one.workers = 1;
        let mut many = cfg(6, 16);
        many.workers = 4;
        many.noise = NoiseMode::Bridge;
        one.noise = NoiseMode::Bridge;
        assert_eq!(simulate(&problem, &one).unwrap(), simulate(&problem, &many).unwrap());
    }

    #[test]
    fn bridge_push_cases() {
        // Far from the wall nothing happens.
        assert_eq!(bridge_push(10.0, 0.1, 1.0, 1e-3, 0.5), 0.0);
        // Starting on the wall with zero increment the push is the depth of
        // the bridge minimum.
        let p = bridge_push(0.0, 0.0, 1.0, 1.0, (-2.0f64).exp());
        assert!((p - 1.0).abs() < 1e-15);
        // Linear part already reflected: push only for the hidden excursion.
        assert_eq!(bridge_push(0.0, -1.0, 0.0, 1.0, 0.3), 0.0);
    }

    #[test]
    fn containment_and_hits_under_noise() {
        let d = Domain::new(
            Polygon::rectangle(Vec2::new(0.0, 0.0), Vec2::new(1.0, 1.0)),
            vec![Polygon::rectangle(Vec2::new(0.4, 0.4), Vec2::new(0.6, 0.6)).reversed()],
            None,
            vec![],
            0.05,
        )
        .unwrap();
        let coeffs = ConstantCoefficients {
            drift: Vec2::ZERO,
            sigma: 0.5,
        };
        let init = CrowdState::new(&[], &[Vec2::new(0.2, 0.5), Vec2::new(0.5, 0.8)]);
        let recs = simulate(
            &Problem {
                domain: &d,
                coeffs: &coeffs,
                initial: &init,
            },
            &cfg(8, 8),
        )
        .unwrap();
        let mut n_hits = 0;
        for r in &recs {
            assert!(r.failure.is_none(), "{:?}", r.failure);
            for ps in &r.positions {
                assert!(ps.iter().all(|&p| d.contains(p)));
            }
            for c in &r.contacts {
                n_hits += 1;
                assert!(d.boundary_distance(c.hit.point) <= 1e-9 * d.diam());
                let cone = d.normal_cone(c.hit.point).unwrap();
                assert!(cone.max_alignment(c.hit.direction) >= 1.0 - 1e-6);
            }
        }
        assert!(n_hits > 0);
    }
}
