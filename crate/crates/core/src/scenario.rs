//! Scenario documents: the JSON file a run is described by.
//!
//! A document has the blocks `geometry`, `crowd`, `model`, `navfield`,
//! `scales`, `scheme`, `outputs` and `experiments`. Only `geometry` and
//! `crowd` are required. [`ScenarioDocument::resolve`] fills every default
//! (several depend on the domain, e.g. `mu0 = |D|`), materializes randomly
//! placed pedestrians and cross-validates the blocks. The resolved document
//! is written next to the outputs; loading it again yields the same scenario.

use std::path::{Path, PathBuf};

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Domain, ExitSegment, Polygon, Vec2};
use crate::integrator::{NoiseMode, SchemeConfig};
use crate::model::{CrowdState, ModelParams, SmokeField};
use crate::navfield::NavParams;
use crate::nondim::{compute_kappa, ReferenceScales};

/// File name of the resolved scenario copy written into the output directory.
pub const NORMALIZED_NAME: &str = "scenario.normalized.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryBlock {
    pub outer: Polygon,
    #[serde(default)]
    pub obstacles: Vec<Polygon>,
    #[serde(default)]
    pub fire: Option<Polygon>,
    #[serde(default)]
    pub exits: Vec<ExitSegment>,
    pub r0: f64,
    /// Turn exterior-sphere failures into a validation error.
    #[serde(default)]
    pub require_exterior_sphere: bool,
    #[serde(default = "default_sphere_samples")]
    pub sphere_samples: usize,
}

fn default_sphere_samples() -> usize {
    256
}

/// Uniform placement inside the domain, keeping `clearance` from walls.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomCrowd {
    #[serde(default)]
    pub active: usize,
    #[serde(default)]
    pub passive: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub clearance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrowdBlock {
    #[serde(default)]
    pub active: Vec<Vec2>,
    #[serde(default)]
    pub passive: Vec<Vec2>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub random: Option<RandomCrowd>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBlock {
    pub zeta: Option<f64>,
    pub eta: Option<f64>,
    #[serde(rename = "C_A")]
    pub c_a: Option<f64>,
    #[serde(rename = "C_R")]
    pub c_r: Option<f64>,
    #[serde(rename = "ell_A")]
    pub ell_a: Option<f64>,
    #[serde(rename = "ell_R")]
    pub ell_r: Option<f64>,
    pub eps: Option<f64>,
    pub delta_tilde: Option<f64>,
    pub mu0: Option<f64>,
    pub p_max: Option<f64>,
    pub s_cr: Option<f64>,
    pub beta_width: Option<f64>,
    /// Overrides the rate computed from the scales block.
    pub kappa: Option<f64>,
    pub bound: Option<f64>,
    pub smooth_discomfort: Option<bool>,
    pub smoke: Option<SmokeField>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NavBlock {
    pub h: Option<f64>,
    pub varsigma: Option<f64>,
    /// Per-node walking speed, row-major over the grid covering the domain.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speed: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalesBlock {
    pub x_ref: Option<f64>,
    pub t_ref: Option<f64>,
    pub s_ref: Option<f64>,
    pub p_ref: Option<f64>,
    pub upsilon_ref: Option<f64>,
    pub omega_ref: Option<f64>,
    pub beta_ref: Option<f64>,
    pub phi_ref: Option<f64>,
    pub mu_ref: Option<f64>,
    pub p_max: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SchemeBlock {
    pub level: u32,
    pub horizon: f64,
    pub seed: u64,
    pub ensemble_size: usize,
    pub absorb_at_exit: bool,
    pub record_stride: usize,
    pub noise: NoiseMode,
    pub record_hits: bool,
}

impl Default for SchemeBlock {
    fn default() -> Self {
        Self {
            level: 8,
            horizon: 1.0,
            seed: 0,
            ensemble_size: 1,
            absorb_at_exit: false,
            record_stride: 1,
            noise: NoiseMode::Linear,
            record_hits: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputsBlock {
    pub dir: PathBuf,
    pub trajectories: String,
    pub metadata: String,
    pub results: String,
    /// Navigation-field CSV written by `simulate` when set.
    pub navfield: Option<String>,
    /// Regulator contacts CSV, written when `scheme.record_hits` is on.
    pub contacts: String,
}

impl Default for OutputsBlock {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            trajectories: "trajectories.csv".into(),
            metadata: "metadata.json".into(),
            results: "results.json".into(),
            navfield: None,
            contacts: "contacts.csv".into(),
        }
    }
}

/// Settings of the half-plane reflected Brownian motion check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReflectCheck {
    pub members: usize,
    pub level: u32,
    pub noise: NoiseMode,
    pub threshold: f64,
}

impl Default for ReflectCheck {
    fn default() -> Self {
        Self {
            members: 10_000,
            level: 10,
            noise: NoiseMode::Bridge,
            threshold: 0.02,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StabilityCheck {
    pub rhos: Vec<f64>,
    pub pairs: usize,
    pub slope_range: [f64; 2],
    /// Allowed range of the ratio normalized by its value at the largest ρ.
    pub ratio_range: [f64; 2],
}

impl Default for StabilityCheck {
    fn default() -> Self {
        Self {
            rhos: vec![1e-1, 1e-2, 1e-3],
            pairs: 500,
            slope_range: [0.8, 1.2],
            ratio_range: [0.5, 2.0],
        }
    }
}

/// Which problem the convergence check refines.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvergenceTarget {
    /// Reflected Brownian motion in a half-plane started on the wall.
    #[default]
    ReflectedBrownianMotion,
    /// The scenario's own crowd model.
    Scenario,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConvergenceCheck {
    pub target: ConvergenceTarget,
    pub levels: Vec<u32>,
    pub reference: u32,
    pub members: usize,
    pub min_slope: f64,
}

impl Default for ConvergenceCheck {
    fn default() -> Self {
        Self {
            target: ConvergenceTarget::ReflectedBrownianMotion,
            levels: vec![4, 5, 6, 7, 8, 9],
            reference: 12,
            members: 2000,
            min_slope: 0.4,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentsBlock {
    pub reflect: ReflectCheck,
    pub stability: StabilityCheck,
    pub convergence: ConvergenceCheck,
}

/// A scenario document as written on disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioDocument {
    pub geometry: GeometryBlock,
    pub crowd: CrowdBlock,
    #[serde(default)]
    pub model: ModelBlock,
    #[serde(default)]
    pub navfield: NavBlock,
    #[serde(default)]
    pub scales: ScalesBlock,
    #[serde(default)]
    pub scheme: SchemeBlock,
    #[serde(default)]
    pub outputs: OutputsBlock,
    #[serde(default)]
    pub experiments: ExperimentsBlock,
}

/// Command-line values that take precedence over the document.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub level: Option<u32>,
    pub ensemble: Option<usize>,
    pub out: Option<PathBuf>,
}

/// A fully resolved and validated scenario.
#[derive(Clone, Debug)]
pub struct Scenario {
    /// The document with every default filled in.
    pub document: ScenarioDocument,
    pub domain: Domain,
    pub initial: CrowdState,
    pub params: ModelParams,
    pub smoke: SmokeField,
    pub scales: ReferenceScales,
    pub nav: NavParams,
    pub scheme: SchemeConfig,
    /// Non-fatal findings, such as exterior-sphere failures.
    pub warnings: Vec<String>,
}

impl PartialEq for Scenario {
    fn eq(&self, other: &Self) -> bool {
        self.document == other.document
            && self.initial == other.initial
            && self.params == other.params
            && self.smoke == other.smoke
            && self.scales == other.scales
            && self.nav == other.nav
            && self.scheme == other.scheme
    }
}

/// Parses a document, reporting syntax and type errors with their position.
pub fn parse_document(text: &str) -> Result<ScenarioDocument> {
    serde_json::from_str(text).map_err(|e| Error::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

pub fn load_scenario(path: &Path) -> Result<Scenario> {
    load_with(path, &Overrides::default())
}

pub fn load_with(path: &Path, overrides: &Overrides) -> Result<Scenario> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Io(format!("cannot read {}: {e}", path.display())))?;
    let mut doc = parse_document(&text)?;
    doc.apply(overrides);
    doc.resolve()
}

fn uniform(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

fn place_random(d: &Domain, count: usize, clearance: f64, rng: &mut ChaCha8Rng) -> Result<Vec<Vec2>> {
    let (lo, hi) = d.bounding_box();
    let mut out = Vec::with_capacity(count);
    let mut tries = 0usize;
    while out.len() < count {
        tries += 1;
        if tries > 1000 * (count + 1) {
            return Err(Error::Validation(format!(
                "could not place {count} random pedestrians with clearance {clearance}"
            )));
        }
        let p = Vec2::new(
            lo.x + (hi.x - lo.x) * uniform(rng),
            lo.y + (hi.y - lo.y) * uniform(rng),
        );
        if d.contains_strictly(p) && d.boundary_distance(p) >= clearance {
            out.push(p);
        }
    }
    Ok(out)
}

fn positive(name: &str, v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Validation(format!("{name} must be positive, got {v}")))
    }
}

impl ScenarioDocument {
    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.scheme.seed = s;
        }
        if let Some(n) = o.level {
            self.scheme.level = n;
        }
        if let Some(m) = o.ensemble {
            self.scheme.ensemble_size = m;
        }
        if let Some(dir) = &o.out {
            self.outputs.dir = dir.clone();
        }
    }

    /// Fills defaults, validates every block and builds the scenario.
    pub fn resolve(mut self) -> Result<Scenario> {
        let g = &self.geometry;
        let domain = Domain::new(
            g.outer.clone(),
            g.obstacles.clone(),
            g.fire.clone(),
            g.exits.clone(),
            g.r0,
        )?;
        let diam = domain.diam();
        let mut warnings = Vec::new();
        if g.sphere_samples > 0 {
            let report = domain.validate_exterior_sphere(g.sphere_samples);
            if !report.passed() {
                let worst = &report.failures[0];
                let msg = format!(
                    "exterior sphere condition fails at {} of {} boundary samples for r0 = {} \
                     (e.g. at ({}, {}) the admissible radius is {})",
                    report.failures.len(),
                    report.samples,
                    report.r0,
                    worst.point.x,
                    worst.point.y,
                    worst.admissible_radius
                );
                if g.require_exterior_sphere {
                    return Err(Error::Validation(msg));
                }
                warnings.push(msg);
            }
        }

        if let Some(r) = self.crowd.random.take() {
            if !(r.clearance >= 0.0) {
                return Err(Error::Validation("crowd.random.clearance must be >= 0".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(r.seed);
            let active = place_random(&domain, r.active, r.clearance, &mut rng)?;
            let passive = place_random(&domain, r.passive, r.clearance, &mut rng)?;
            self.crowd.active.extend(active);
            self.crowd.passive.extend(passive);
        }
        let initial = CrowdState::new(&self.crowd.active, &self.crowd.passive);
        if initial.is_empty() {
            return Err(Error::Validation("crowd must contain at least one pedestrian".into()));
        }
        for (k, p) in initial.positions.iter().enumerate() {
            if !domain.contains(*p) {
                return Err(Error::Validation(format!(
                    "pedestrian {k} at ({}, {}) is outside the domain",
                    p.x, p.y
                )));
            }
        }
        if !self.crowd.active.is_empty() && domain.exits().is_empty() {
            return Err(Error::Validation(
                "active pedestrians need at least one exit".into(),
            ));
        }
        let n = initial.len() as f64;
        let area = domain.area();

        let m = &mut self.model;
        m.zeta.get_or_insert(1.0);
        m.eta.get_or_insert(1.0);
        m.c_a.get_or_insert(1.0);
        m.c_r.get_or_insert(2.0);
        m.ell_a.get_or_insert(0.2 * diam);
        m.ell_r.get_or_insert(0.05 * diam);
        m.eps.get_or_insert(0.01 * diam);
        m.delta_tilde.get_or_insert(0.1 * diam);
        m.mu0.get_or_insert(area);
        m.p_max.get_or_insert(n * area);
        m.s_cr.get_or_insert(1.0);
        m.beta_width.get_or_insert(0.1);
        m.bound.get_or_insert(1e3);
        m.smooth_discomfort.get_or_insert(false);
        if m.smoke.is_none() {
            m.smoke = Some(match domain.fire() {
                Some(f) => SmokeField::plume_at_fire(f, 1.0, 0.1 * diam),
                None => SmokeField::None,
            });
        }
        let p_max = m.p_max.unwrap_or_default();

        let s = &mut self.scales;
        let scales = ReferenceScales {
            x_ref: *s.x_ref.get_or_insert(diam),
            t_ref: *s.t_ref.get_or_insert(1.0),
            s_ref: *s.s_ref.get_or_insert(1.0),
            p_ref: *s.p_ref.get_or_insert(1.0),
            upsilon_ref: *s.upsilon_ref.get_or_insert(1.0),
            omega_ref: *s.omega_ref.get_or_insert(1.0),
            beta_ref: *s.beta_ref.get_or_insert(1.0),
            phi_ref: *s.phi_ref.get_or_insert(1.0),
            mu_ref: *s.mu_ref.get_or_insert(1.0),
            p_max: *s.p_max.get_or_insert(p_max),
        };
        scales.validate()?;
        let kappa = *self.model.kappa.get_or_insert(compute_kappa(&scales));

        let m = &self.model;
        let params = ModelParams {
            zeta: m.zeta.unwrap_or_default(),
            eta: m.eta.unwrap_or_default(),
            c_a: m.c_a.unwrap_or_default(),
            c_r: m.c_r.unwrap_or_default(),
            ell_a: m.ell_a.unwrap_or_default(),
            ell_r: m.ell_r.unwrap_or_default(),
            eps: m.eps.unwrap_or_default(),
            delta_tilde: m.delta_tilde.unwrap_or_default(),
            mu0: m.mu0.unwrap_or_default(),
            p_max,
            s_cr: m.s_cr.unwrap_or_default(),
            beta_width: m.beta_width.unwrap_or_default(),
            kappa,
            bound: m.bound.unwrap_or_default(),
            smooth_discomfort: m.smooth_discomfort.unwrap_or_default(),
        };
        params.validate()?;
        if params.delta_tilde >= diam {
            return Err(Error::Validation(format!(
                "delta_tilde = {} must be smaller than the domain diameter {diam}",
                params.delta_tilde
            )));
        }
        let smoke = m.smoke.clone().unwrap_or(SmokeField::None);
        smoke.validate()?;

        let feature = domain.min_hole_feature();
        let nb = &mut self.navfield;
        let h = *nb.h.get_or_insert((diam / 128.0).min(feature / 5.0));
        let varsigma = *nb.varsigma.get_or_insert(0.02 * diam);
        positive("navfield.h", h)?;
        positive("navfield.varsigma", varsigma)?;
        if h >= feature / 4.0 {
            return Err(Error::Validation(format!(
                "navfield.h = {h} must be below a quarter of the smallest obstacle edge ({feature})"
            )));
        }
        if let Some(speed) = &nb.speed {
            let grid = crate::navfield::Grid::covering(&domain, h)?;
            if speed.len() != grid.len() {
                return Err(Error::Validation(format!(
                    "navfield.speed has {} values but the grid has {} nodes",
                    speed.len(),
                    grid.len()
                )));
            }
            if speed.iter().any(|f| !(*f > 0.0 && f.is_finite())) {
                return Err(Error::Validation("navfield.speed values must be positive".into()));
            }
        }
        let nav = NavParams {
            h,
            varsigma,
            speed: nb.speed.clone(),
        };

        let sb = &self.scheme;
        let scheme = SchemeConfig {
            level: sb.level,
            horizon: sb.horizon,
            seed: sb.seed,
            ensemble_size: sb.ensemble_size,
            absorb_at_exit: sb.absorb_at_exit,
            record_stride: sb.record_stride,
            noise: sb.noise,
            workers: 0,
            record_hits: sb.record_hits,
        };
        scheme.validate()?;
        self.validate_experiments()?;

        Ok(Scenario {
            document: self,
            domain,
            initial,
            params,
            smoke,
            scales,
            nav,
            scheme,
            warnings,
        })
    }

    fn validate_experiments(&self) -> Result<()> {
        let e = &self.experiments;
        if e.reflect.members < 1 || !(1..=30).contains(&e.reflect.level) {
            return Err(Error::Validation(
                "experiments.reflect needs members >= 1 and level in 1..=30".into(),
            ));
        }
        let st = &e.stability;
        if st.rhos.is_empty() || st.rhos.iter().any(|r| !(*r > 0.0)) {
            return Err(Error::Validation("experiments.stability.rhos must be positive".into()));
        }
        if st.rhos.windows(2).any(|w| !(w[1] < w[0])) {
            return Err(Error::Validation(
                "experiments.stability.rhos must be strictly decreasing".into(),
            ));
        }
        if st.pairs < 1 {
            return Err(Error::Validation("experiments.stability.pairs must be >= 1".into()));
        }
        let c = &e.convergence;
        let top = c.levels.iter().copied().max().unwrap_or(0);
        if c.levels.len() < 2 || top + 2 > c.reference || c.reference > 30 || c.members < 2 {
            return Err(Error::Validation(
                "experiments.convergence needs >= 2 levels, max level + 2 <= reference <= 30 \
                 and >= 2 members"
                    .into(),
            ));
        }
        Ok(())
    }
}

impl Scenario {
    /// The resolved document as pretty-printed JSON.
    pub fn normalized_json(&self) -> String {
        serde_json::to_string_pretty(&self.document).expect("scenario documents always serialize")
    }

    /// Writes the resolved document into `dir` and returns its path.
    pub fn write_normalized(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(NORMALIZED_NAME);
        std::fs::write(&path, self.normalized_json() + "\n")?;
        Ok(path)
    }

    pub fn output_dir(&self) -> &Path {
        &self.document.outputs.dir
    }
}
