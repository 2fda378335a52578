//! Monte Carlo verification experiments: stability under perturbed initial
//! data, strong convergence under coupled refinement, and path regularity.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use rayon::prelude::*;
use serde::Serialize;

use super::{in_pool, integrate, BrownianSource, Problem, SchemeConfig};
use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::model::CrowdState;
use crate::stats;

/// Positions of every pedestrian after every step, step 0 included.
fn full_path(
    problem: &Problem<'_>,
    source: &BrownianSource,
    cfg: &SchemeConfig,
    member: usize,
    level: u32,
) -> Result<Vec<Vec<Vec2>>> {
    let mut path = Vec::with_capacity((1 << level) + 1);
    path.push(problem.initial.positions.clone());
    integrate(
        problem,
        source,
        member,
        level,
        cfg.horizon,
        cfg.noise,
        false,
        |_, state, _| path.push(state.positions.clone()),
    )
    .map_err(|(_, e, _)| e)?;
    Ok(path)
}

fn sq_dist(a: &[Vec2], b: &[Vec2]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (*p - *q).norm_sq()).sum()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StabilityRow {
    pub rho: f64,
    /// `E|ΔX_0|²`.
    pub initial: f64,
    /// `E max_t |ΔX_t|²`.
    pub max_path: f64,
    pub ratio: f64,
    /// `ratio` divided by the ratio at the largest perturbation.
    pub normalized_ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StabilityResult {
    pub rows: Vec<StabilityRow>,
    /// Least-squares slope of `ln E max|ΔX|²` against `ln E|ΔX_0|²`.
    pub slope: f64,
    pub pairs: usize,
    pub failed_pairs: usize,
}

/// Random unit direction in `R^{2N}` for pair `member`.
fn unit_direction(source: &BrownianSource, member: usize, n: usize) -> Vec<Vec2> {
    let mut u: Vec<Vec2> = (0..n).map(|k| source.aux_normal(member as u64, 0, k as u64)).collect();
    let norm = u.iter().map(|v| v.norm_sq()).sum::<f64>().sqrt();
    for v in &mut u {
        *v = *v / norm;
    }
    u
}

/// Runs paired trajectories from `X_0` and `X_0 + ρ u` with identical noise.
pub fn stability_experiment(
    problem: &Problem<'_>,
    cfg: &SchemeConfig,
    rhos: &[f64],
    pairs: usize,
) -> Result<StabilityResult> {
    cfg.validate()?;
    if rhos.is_empty() || rhos.iter().any(|&r| !(r > 0.0)) {
        return Err(Error::Validation("perturbations must be positive".into()));
    }
    if rhos.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::Validation("perturbations must be decreasing".into()));
    }
    let source = BrownianSource::new(cfg.seed, cfg.horizon, cfg.level);
    let n = problem.initial.len();
    let domain = problem.domain;

    let per_pair = |m: usize| -> Result<Vec<(f64, f64)>> {
        let base = full_path(problem, &source, cfg, m, cfg.level)?;
        let u = unit_direction(&source, m, n);
        rhos.iter()
            .map(|&rho| {
                let mut init = problem.initial.clone();
                for k in 0..n {
                    init.positions[k] = domain.project(init.positions[k] + u[k] * rho)?.0;
                }
                let shifted = Problem {
                    domain,
                    coeffs: problem.coeffs,
                    initial: &init,
                };
                let other = full_path(&shifted, &source, cfg, m, cfg.level)?;
                let d0 = sq_dist(&base[0], &other[0]);
                let dmax = base
                    .iter()
                    .zip(&other)
                    .map(|(a, b)| sq_dist(a, b))
                    .fold(0.0, f64::max);
                Ok((d0, dmax))
            })
            .collect()
    };
    let outcomes: Vec<Result<Vec<(f64, f64)>>> =
        in_pool(cfg.workers, || (0..pairs).into_par_iter().map(per_pair).collect())?;
    let ok: Vec<Vec<(f64, f64)>> = outcomes.into_iter().filter_map(|r| r.ok()).collect();
    let failed_pairs = pairs - ok.len();
    if ok.is_empty() {
        return Err(Error::Validation("every stability pair failed".into()));
    }

    let mut rows = Vec::with_capacity(rhos.len());
    for (i, &rho) in rhos.iter().enumerate() {
        let d0: Vec<f64> = ok.iter().map(|v| v[i].0).collect();
        let dm: Vec<f64> = ok.iter().map(|v| v[i].1).collect();
        let (initial, max_path) = (stats::mean(&d0), stats::mean(&dm));
        rows.push(StabilityRow {
            rho,
            initial,
            max_path,
            ratio: max_path / initial,
            normalized_ratio: 0.0,
        });
    }
    let first = rows[0].ratio;
    for r in &mut rows {
        r.normalized_ratio = r.ratio / first;
    }
    let xs: Vec<f64> = rows.iter().map(|r| r.initial.ln()).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.max_path.ln()).collect();
    Ok(StabilityResult {
        slope: stats::slope(&xs, &ys),
        rows,
        pairs: ok.len(),
        failed_pairs,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvergenceResult {
    pub levels: Vec<u32>,
    pub reference: u32,
    /// `E max_t |X^{(n)} - X^{(ref)}|²` over the coarse grid, per level.
    pub errors: Vec<f64>,
    /// Rate `r` in `error ≈ C (2^{-n})^r`.
    pub slope: f64,
    /// 95% bootstrap interval of `slope`.
    pub ci: (f64, f64),
    pub members: usize,
    pub failed_members: usize,
}

fn rate(levels: &[u32], errors: &[f64]) -> f64 {
    let xs: Vec<f64> = levels.iter().map(|&n| -(n as f64)).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.log2()).collect();
    stats::slope(&xs, &ys)
}

/// Strong error of levels `levels` against `reference` on coupled noise.
pub fn convergence_experiment(
    problem: &Problem<'_>,
    cfg: &SchemeConfig,
    levels: &[u32],
    reference: u32,
    members: usize,
) -> Result<ConvergenceResult> {
    let max_level = levels.iter().copied().max().unwrap_or(0);
    if levels.is_empty() || max_level + 2 > reference {
        return Err(Error::Validation(format!(
            "need a nonempty level list with max level + 2 <= reference ({reference})"
        )));
    }
    if members < 2 {
        return Err(Error::Validation("convergence needs at least 2 members".into()));
    }
    let source = BrownianSource::new(cfg.seed, cfg.horizon, reference);
    let per_member = |m: usize| -> Result<Vec<f64>> {
        let fine = full_path(problem, &source, cfg, m, reference)?;
        levels
            .iter()
            .map(|&n| {
                let coarse = full_path(problem, &source, cfg, m, n)?;
                let stride = 1usize << (reference - n);
                Ok(coarse
                    .iter()
                    .enumerate()
                    .map(|(s, x)| sq_dist(x, &fine[s * stride]))
                    .fold(0.0, f64::max))
            })
            .collect()
    };
    let outcomes: Vec<Result<Vec<f64>>> =
        in_pool(cfg.workers, || (0..members).into_par_iter().map(per_member).collect())?;
    let ok: Vec<Vec<f64>> = outcomes.into_iter().filter_map(|r| r.ok()).collect();
    let failed_members = members - ok.len();
    if ok.len() < 2 {
        return Err(Error::Validation("too few convergence members succeeded".into()));
    }
    let mean_errors = |rows: &[&Vec<f64>]| -> Vec<f64> {
        (0..levels.len())
            .map(|i| rows.iter().map(|r| r[i]).sum::<f64>() / rows.len() as f64)
            .collect()
    };
    let all: Vec<&Vec<f64>> = ok.iter().collect();
    let errors = mean_errors(&all);
    let slope = rate(levels, &errors);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_b007);
    let mut boot = Vec::with_capacity(200);
    for _ in 0..200 {
        let sample: Vec<&Vec<f64>> = (0..ok.len())
            .map(|_| &ok[(rng.next_u64() % ok.len() as u64) as usize])
            .collect();
        boot.push(rate(levels, &mean_errors(&sample)));
    }
    Ok(ConvergenceResult {
        levels: levels.to_vec(),
        reference,
        errors,
        slope,
        ci: (stats::percentile(&boot, 0.025), stats::percentile(&boot, 0.975)),
        members: ok.len(),
        failed_members,
    })
}

/// `max_{s≠t} |Y(t) - Y(s)| / |t - s|^{1/4}` over the given knots.
pub fn holder_quarter(times: &[f64], path: &[Vec2]) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..path.len() {
        for j in (i + 1)..path.len() {
            let q = path[i].distance(path[j]) / (times[j] - times[i]).abs().powf(0.25);
            worst = worst.max(q);
        }
    }
    worst
}

/// Largest Hölder-1/4 quotient over all pedestrians of one member at `level`.
pub fn path_holder(
    problem: &Problem<'_>,
    cfg: &SchemeConfig,
    member: usize,
    level: u32,
    finest: u32,
) -> Result<f64> {
    let source = BrownianSource::new(cfg.seed, cfg.horizon, finest.max(level));
    let path = full_path(problem, &source, cfg, member, level)?;
    let dt = super::step_length(cfg.horizon, level);
    let times: Vec<f64> = (0..path.len()).map(|s| s as f64 * dt).collect();
    let n = problem.initial.len();
    Ok((0..n)
        .map(|k| {
            let p: Vec<Vec2> = path.iter().map(|row| row[k]).collect();
            holder_quarter(&times, &p)
        })
        .fold(0.0, f64::max))
}

/// Terminal positions of every member.
pub fn terminal_positions(
    problem: &Problem<'_>,
    cfg: &SchemeConfig,
) -> Result<Vec<std::result::Result<CrowdState, String>>> {
    cfg.validate()?;
    let source = BrownianSource::new(cfg.seed, cfg.horizon, cfg.level);
    in_pool(cfg.workers, || {
        (0..cfg.ensemble_size)
            .into_par_iter()
            .map(|m| {
                integrate(
                    problem,
                    &source,
                    m,
                    cfg.level,
                    cfg.horizon,
                    cfg.noise,
                    cfg.absorb_at_exit,
                    |_, _, _| {},
                )
                .map_err(|(s, e, _)| format!("step {s}: {e}"))
            })
            .collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Domain, Polygon};
    use crate::integrator::NoiseMode;
    use crate::model::ConstantCoefficients;

    fn big_box() -> Domain {
        Domain::new(
            Polygon::rectangle(Vec2::new(-50.0, -50.0), Vec2::new(50.0, 50.0)),
            vec![],
            None,
            vec![],
            1.0,
        )
        .unwrap()
    }

    fn cfg(level: u32) -> SchemeConfig {
        SchemeConfig {
            level,
            horizon: 1.0,
            seed: 17,
            ensemble_size: 1,
            absorb_at_exit: false,
            record_stride: 1,
            noise: NoiseMode::Linear,
            workers: 2,
            record_hits: false,
        }
    }

    #[test]
    fn zero_dynamics_preserve_perturbation() {
        let d = big_box();
        let coeffs = ConstantCoefficients {
            drift: Vec2::ZERO,
            sigma: 0.0,
        };
        let init = CrowdState::new(&[], &[Vec2::new(0.0, 0.0), Vec2::new(1.0, 1.0)]);
        let problem = Problem {
            domain: &d,
            coeffs: &coeffs,
            initial: &init,
        };
        let res = stability_experiment(&problem, &cfg(4), &[1e-1, 1e-2, 1e-3], 8).unwrap();
        for r in &res.rows {
            assert_eq!(r.initial, r.max_path);
        }
        assert!((res.slope - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_coefficients_are_exact() {
        let d = big_box();
        let coeffs = ConstantCoefficients {
            drift: Vec2::new(0.3, -0.2),
            sigma: 0.7,
        };
        let init = CrowdState::new(&[], &[Vec2::ZERO]);
        let problem = Problem {
            domain: &d,
            coeffs: &coeffs,
            initial: &init,
        };
        let res = convergence_experiment(&problem, &cfg(4), &[3, 4, 5], 8, 16).unwrap();
        assert!(res.errors.iter().all(|&e| e <= 1e-24), "{:?}", res.errors);
    }

    #[test]
    fn holder_of_line() {
        let t = [0.0, 1.0, 2.0];
        let p = [Vec2::ZERO, Vec2::new(1.0, 0.0), Vec2::new(2.0, 0.0)];
        assert!((holder_quarter(&t, &p) - 2f64.powf(0.75)).abs() < 1e-15);
    }
}
