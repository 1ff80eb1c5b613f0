//! Experiment configuration: parameters, potential, initial data and solver
//! settings, parsed from JSON and validated as a whole.
//!
//! ```json
//! {
//!   "params": {"m": [1, 1], "p": [1, 1], "d": 1},
//!   "potential": {"n": 2, "entries": [[...], [...]], "kappa": [[2, 1], [1, 2]]},
//!   "initial": {"kind": "preset", "name": "uniform", "args": {"lo": [-1, 0], "hi": [1, 2]}},
//!   "solver": {"t_end": 3.0, "dt": 0.001, "scheme": "rk4"},
//!   "resolution": 256,
//!   "seed": 7
//! }
//! ```

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::convexity::SystemParams;
use crate::error::ConfigIssue;
use crate::measures::{particles_from_quantile, quantile_from_particles, weighted_center_of_mass, ParticleState, QuantileState};
use crate::potentials::PotentialMatrix;
use crate::quantile_solver::SolverConfig;
use crate::{is_symmetric, Error, Result};

pub const DEFAULT_RESOLUTION: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsSpec {
    pub m: Vec<f64>,
    pub p: Vec<f64>,
    #[serde(default = "one")]
    pub d: usize,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParticleSpec {
    pub x: Vec<f64>,
    pub mass: f64,
}

/// A scalar applied to every species, or one value per species.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerSpecies {
    All(f64),
    Each(Vec<f64>),
}

impl PerSpecies {
    fn get(&self, i: usize) -> f64 {
        match self {
            PerSpecies::All(v) => *v,
            PerSpecies::Each(v) => v[i],
        }
    }

    fn check(&self, n: usize, path: &str, issues: &mut Vec<ConfigIssue>) {
        let values: &[f64] = match self {
            PerSpecies::All(v) => std::slice::from_ref(v),
            PerSpecies::Each(v) => {
                if v.len() != n {
                    issues.push(issue(path, format!("a number or {n} numbers, got {}", v.len())));
                    return;
                }
                v
            }
        };
        if values.iter().any(|v| !v.is_finite()) {
            issues.push(issue(path, "finite numbers"));
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", content = "args", rename_all = "snake_case")]
pub enum Preset {
    /// Half of each species' mass at `left`, half at `right`.
    TwoDiracs {
        #[serde(default = "minus_one")]
        left: PerSpecies,
        #[serde(default = "plus_one")]
        right: PerSpecies,
    },
    /// Uniform density on `[lo, hi]` (a box `[lo, hi]ᵈ` of random particles for d > 1).
    Uniform {
        #[serde(default = "minus_one")]
        lo: PerSpecies,
        #[serde(default = "plus_one")]
        hi: PerSpecies,
    },
    /// Seeded samples of two Gaussian bumps at `center ± separation/2` with
    /// width `sigma`, truncated at 4σ.
    GaussPair {
        #[serde(default = "zero")]
        center: PerSpecies,
        #[serde(default = "two")]
        separation: f64,
        #[serde(default = "quarter")]
        sigma: f64,
    },
}

fn minus_one() -> PerSpecies {
    PerSpecies::All(-1.0)
}
fn plus_one() -> PerSpecies {
    PerSpecies::All(1.0)
}
fn zero() -> PerSpecies {
    PerSpecies::All(0.0)
}
fn two() -> f64 {
    2.0
}
fn quarter() -> f64 {
    0.25
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialData {
    /// Explicit weighted particles per species.
    Particles { species: Vec<Vec<ParticleSpec>> },
    /// Explicit quantile vectors on the midpoint grid (one row per species).
    Quantile { values: Vec<Vec<f64>> },
    Preset {
        #[serde(flatten)]
        preset: Preset,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub params: ParamsSpec,
    pub potential: PotentialMatrix,
    pub initial: InitialData,
    /// Second initial datum for contraction checks; generated when absent.
    pub comparison: Option<InitialData>,
    pub solver: SolverConfig,
    /// Quantile resolution `M` (also the particle count of presets).
    pub resolution: usize,
    pub seed: u64,
}

fn issue(path: &str, expected: impl Into<String>) -> ConfigIssue {
    ConfigIssue {
        path: path.to_string(),
        expected: expected.into(),
    }
}

fn section<T: serde::de::DeserializeOwned>(doc: &mut serde_json::Map<String, Value>, key: &str, issues: &mut Vec<ConfigIssue>) -> Option<T> {
    let value = doc.remove(key)?;
    match serde_json::from_value(value) {
        Ok(v) => Some(v),
        Err(e) => {
            issues.push(issue(key, e.to_string()));
            None
        }
    }
}

/// Reads and validates a configuration file.
pub fn parse_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config_str(&text)
}

/// Parses a configuration document, reporting every schema problem found.
pub fn parse_config_str(text: &str) -> Result<ExperimentConfig> {
    let doc: Value = serde_json::from_str(text).map_err(|e| Error::config("document", format!("well-formed JSON ({e})")))?;
    let Value::Object(mut doc) = doc else {
        return Err(Error::config("document", "a JSON object"));
    };
    let mut issues = Vec::new();
    for key in ["params", "potential", "initial"] {
        if !doc.contains_key(key) {
            issues.push(issue(key, "required section"));
        }
    }
    for key in ["initial", "comparison"] {
        if let Some(Value::Object(data)) = doc.get_mut(key) {
            if data.get("kind").and_then(Value::as_str) == Some("preset") && !data.contains_key("args") {
                data.insert("args".into(), Value::Object(Default::default()));
            }
        }
    }
    let params: Option<ParamsSpec> = section(&mut doc, "params", &mut issues);
    let potential: Option<PotentialMatrix> = section(&mut doc, "potential", &mut issues);
    let initial: Option<InitialData> = section(&mut doc, "initial", &mut issues);
    let comparison: Option<InitialData> = section(&mut doc, "comparison", &mut issues);
    let solver: SolverConfig = section(&mut doc, "solver", &mut issues).unwrap_or_default();
    let resolution: usize = section(&mut doc, "resolution", &mut issues).unwrap_or(DEFAULT_RESOLUTION);
    let seed: u64 = section(&mut doc, "seed", &mut issues).unwrap_or(0);
    for key in doc.keys() {
        issues.push(issue(key, "no such field (expected params, potential, initial, comparison, solver, resolution, seed)"));
    }

    if let Err(e) = solver.check() {
        issues.push(issue("solver", e.to_string()));
    }
    if resolution == 0 {
        issues.push(issue("resolution", "a positive integer"));
    }
    if let Some(params) = &params {
        if let Err(e) = SystemParams::centered(params.m.clone(), params.p.clone(), params.d) {
            issues.push(issue("params", e.to_string()));
        }
        if params.d == 0 {
            issues.push(issue("params.d", "dimension ≥ 1"));
        }
    }
    if let Some(pm) = &potential {
        if !is_symmetric(pm.kappa()) {
            issues.push(issue("potential.kappa", "a symmetric matrix"));
        }
        let n = pm.n();
        if (0..n).any(|i| (0..i).any(|j| pm.entry(i, j) != pm.entry(j, i))) {
            issues.push(issue("potential.entries", "a symmetric matrix of kernels"));
        }
        if let Some(params) = &params {
            if params.m.len() != n {
                issues.push(issue("params.m", format!("{n} mobilities to match potential.n")));
            }
            if params.p.len() != n {
                issues.push(issue("params.p", format!("{n} masses to match potential.n")));
            }
        }
    }
    if !issues.is_empty() {
        return Err(Error::Config(issues));
    }

    let cfg = ExperimentConfig {
        params: params.expect("checked above"),
        potential: potential.expect("checked above"),
        initial: initial.expect("checked above"),
        comparison,
        solver,
        resolution,
        seed,
    };
    let mut issues = Vec::new();
    cfg.check_initial(&cfg.initial, "initial", &mut issues);
    if let Some(cmp) = &cfg.comparison {
        cfg.check_initial(cmp, "comparison", &mut issues);
    }
    if !issues.is_empty() {
        return Err(Error::Config(issues));
    }
    Ok(cfg)
}

impl ExperimentConfig {
    pub fn n(&self) -> usize {
        self.potential.n()
    }

    pub fn dim(&self) -> usize {
        self.params.d
    }

    fn check_initial(&self, data: &InitialData, path: &str, issues: &mut Vec<ConfigIssue>) {
        let n = self.n();
        match data {
            InitialData::Particles { species } => {
                if species.len() != n {
                    issues.push(issue(&format!("{path}.species"), format!("{n} species lists")));
                    return;
                }
                for (i, list) in species.iter().enumerate() {
                    if list.is_empty() {
                        issues.push(issue(&format!("{path}.species[{i}]"), "at least one particle"));
                        continue;
                    }
                    if let Some(k) = list.iter().position(|q| q.x.len() != self.dim()) {
                        issues.push(issue(
                            &format!("{path}.species[{i}][{k}].x"),
                            format!("{} coordinates", self.dim()),
                        ));
                    }
                    let total: f64 = list.iter().map(|q| q.mass).sum();
                    let p = self.params.p[i];
                    if (total - p).abs() > 1e-12 * p {
                        issues.push(issue(
                            &format!("{path}.species[{i}]"),
                            format!("particle masses summing to params.p[{i}] = {p}, got total {total}"),
                        ));
                    }
                }
            }
            InitialData::Quantile { values } => {
                if self.dim() != 1 {
                    issues.push(issue(path, "quantile data requires d = 1"));
                }
                if values.len() != n {
                    issues.push(issue(&format!("{path}.values"), format!("{n} rows")));
                } else if values.iter().any(|r| r.len() != values[0].len() || r.is_empty()) {
                    issues.push(issue(&format!("{path}.values"), "rows of one common length M ≥ 1"));
                } else if values.iter().any(|r| r.windows(2).any(|w| w[1] < w[0])) {
                    issues.push(issue(&format!("{path}.values"), "non-decreasing rows"));
                }
            }
            InitialData::Preset { preset } => match preset {
                Preset::TwoDiracs { left, right } => {
                    left.check(n, &format!("{path}.args.left"), issues);
                    right.check(n, &format!("{path}.args.right"), issues);
                }
                Preset::Uniform { lo, hi } => {
                    lo.check(n, &format!("{path}.args.lo"), issues);
                    hi.check(n, &format!("{path}.args.hi"), issues);
                    if issues.is_empty() && (0..n).any(|i| hi.get(i) < lo.get(i)) {
                        issues.push(issue(&format!("{path}.args"), "lo ≤ hi"));
                    }
                }
                Preset::GaussPair { center, separation, sigma } => {
                    center.check(n, &format!("{path}.args.center"), issues);
                    if !(separation.is_finite() && *separation >= 0.0) {
                        issues.push(issue(&format!("{path}.args.separation"), "a finite number ≥ 0"));
                    }
                    if !(sigma.is_finite() && *sigma > 0.0) {
                        issues.push(issue(&format!("{path}.args.sigma"), "a positive number"));
                    }
                }
            },
        }
        if issues.is_empty() {
            if let Err(e) = self.materialize_particles(data) {
                issues.push(issue(path, e.to_string()));
            }
        }
    }

    fn base_params(&self) -> Result<SystemParams> {
        SystemParams::centered(self.params.m.clone(), self.params.p.clone(), self.params.d)
    }

    /// Quantile grid of a one-dimensional datum at the configured resolution
    /// (explicit quantile rows keep their own length).
    fn materialize_quantile(&self, data: &InitialData) -> Result<QuantileState> {
        if self.dim() != 1 {
            return Err(Error::Usage(format!("quantile runs need d = 1, config has d = {}", self.dim())));
        }
        let params = self.base_params()?;
        let m_cells = self.resolution;
        let z = |k: usize| (k as f64 + 0.5) / m_cells as f64;
        let n = self.n();
        let u: Vec<Vec<f64>> = match data {
            InitialData::Particles { .. } => {
                let ps = self.materialize_particles(data)?;
                return quantile_from_particles(&ps, m_cells).map(with_center);
            }
            InitialData::Quantile { values } => values.clone(),
            InitialData::Preset { preset } => match preset {
                Preset::TwoDiracs { left, right } => (0..n)
                    .map(|i| (0..m_cells).map(|k| if z(k) < 0.5 { left.get(i) } else { right.get(i) }).collect())
                    .collect(),
                Preset::Uniform { lo, hi } => (0..n)
                    .map(|i| (0..m_cells).map(|k| lo.get(i) + (hi.get(i) - lo.get(i)) * z(k)).collect())
                    .collect(),
                Preset::GaussPair { center, separation, sigma } => {
                    let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                    (0..n)
                        .map(|i| {
                            let mut row: Vec<f64> = (0..m_cells)
                                .map(|k| gauss_pair_sample(&mut rng, k, center.get(i), *separation, *sigma))
                                .collect();
                            row.sort_by(f64::total_cmp);
                            row
                        })
                        .collect()
                }
            },
        };
        QuantileState::new(u, params).map(with_center)
    }

    fn materialize_particles(&self, data: &InitialData) -> Result<ParticleState> {
        let params = self.base_params()?;
        let d = self.dim();
        let n = self.n();
        match data {
            InitialData::Particles { species } => {
                let positions = species.iter().map(|l| l.iter().flat_map(|q| q.x.iter().copied()).collect()).collect();
                let masses = species.iter().map(|l| l.iter().map(|q| q.mass).collect()).collect();
                ParticleState::new(positions, masses, params).map(with_particle_center)
            }
            _ if d == 1 => Ok(particles_from_quantile(&self.materialize_quantile(data)?)),
            InitialData::Quantile { .. } => Err(Error::Usage("quantile data requires d = 1".into())),
            InitialData::Preset { preset } => {
                let count = self.resolution;
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                let positions: Vec<Vec<f64>> = (0..n)
                    .map(|i| match preset {
                        Preset::TwoDiracs { left, right } => (0..count)
                            .flat_map(|k| {
                                let x0 = if 2 * k < count { left.get(i) } else { right.get(i) };
                                std::iter::once(x0).chain(std::iter::repeat_n(0.0, d - 1))
                            })
                            .collect(),
                        Preset::Uniform { lo, hi } => {
                            let (a, b) = (lo.get(i), hi.get(i));
                            (0..count * d)
                                .map(|_| if b > a { Uniform::new(a, b).expect("a < b").sample(&mut rng) } else { a })
                                .collect()
                        }
                        Preset::GaussPair { center, separation, sigma } => (0..count)
                            .flat_map(|k| {
                                let first = gauss_pair_sample(&mut rng, k, center.get(i), *separation, *sigma);
                                let rest: Vec<f64> = (1..d).map(|_| truncated_normal(&mut rng, *sigma)).collect();
                                std::iter::once(first).chain(rest)
                            })
                            .collect(),
                    })
                    .collect();
                let masses = (0..n).map(|i| vec![self.params.p[i] / count as f64; count]).collect();
                ParticleState::new(positions, masses, params).map(with_particle_center)
            }
        }
    }

    /// System parameters with the center of mass of the initial datum.
    pub fn system_params(&self) -> Result<SystemParams> {
        if self.dim() == 1 {
            Ok(self.initial_quantile()?.params().clone())
        } else {
            Ok(self.initial_particles()?.params().clone())
        }
    }

    pub fn initial_quantile(&self) -> Result<QuantileState> {
        self.materialize_quantile(&self.initial)
    }

    pub fn initial_particles(&self) -> Result<ParticleState> {
        self.materialize_particles(&self.initial)
    }

    pub fn comparison_quantile(&self) -> Option<Result<QuantileState>> {
        self.comparison.as_ref().map(|c| self.materialize_quantile(c))
    }
}

fn with_center(mut qs: QuantileState) -> QuantileState {
    let e = weighted_center_of_mass(&qs);
    qs.set_center(vec![e]);
    qs
}

fn with_particle_center(mut ps: ParticleState) -> ParticleState {
    let e = ps.weighted_center_of_mass();
    ps.set_center(e);
    ps
}

fn truncated_normal(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    let normal = Normal::new(0.0, sigma).expect("sigma > 0");
    loop {
        let v = normal.sample(rng);
        if v.abs() <= 4.0 * sigma {
            return v;
        }
    }
}

/// Cell `k` alternates between the two bumps so both carry half the mass.
fn gauss_pair_sample(rng: &mut ChaCha8Rng, k: usize, center: f64, separation: f64, sigma: f64) -> f64 {
    let offset = if k % 2 == 0 { -0.5 * separation } else { 0.5 * separation };
    center + offset + truncated_normal(rng, sigma)
}
