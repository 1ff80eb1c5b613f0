//! Explicit time integration of the quantile ODE system
//!
//! ```text
//! ∂ₜuᵢ(z) = mᵢ Σⱼ pⱼ ∫₀¹ W′ᵢⱼ(uⱼ(ξ) − uᵢ(z)) dξ
//! ```
//!
//! on the shared midpoint grid. The ξ-integral is the flat midpoint sum over
//! the `M` cells, so for atomic data with equal-mass cells the discrete system
//! coincides with the particle ODE. Because every species uses the same grid,
//! the double sums in the weighted center of mass cancel pairwise and the
//! invariant is conserved up to roundoff.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::convexity::{self, SystemParams};
use crate::diagnostics::{self, DiagnosticsRecord};
use crate::measures::QuantileState;
use crate::potentials::{estimate_growth_bound, PotentialMatrix};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Euler,
    Rk4,
}

/// What to do when a step leaves a quantile vector non-monotone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Repair {
    /// Keep the raw update and count the inversion.
    None,
    /// Re-sort each species ascending: the metric projection back onto the
    /// monotone cone, a no-op when nothing crossed.
    Sort,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Time step; `None` picks the stability bound at the initial state.
    pub dt: Option<f64>,
    pub t_end: f64,
    pub scheme: Scheme,
    pub repair: Repair,
    pub cfl_safety: f64,
    pub record_every: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            dt: None,
            t_end: 1.0,
            scheme: Scheme::Rk4,
            repair: Repair::Sort,
            cfl_safety: 0.2,
            record_every: 10,
        }
    }
}

impl SolverConfig {
    pub fn check(&self) -> Result<()> {
        if let Some(dt) = self.dt {
            if !(dt > 0.0 && dt.is_finite()) {
                return Err(Error::Usage(format!("dt must be positive, got {dt}")));
            }
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return Err(Error::Usage(format!("t_end must be ≥ 0, got {}", self.t_end)));
        }
        if !(self.cfl_safety > 0.0 && self.cfl_safety <= 1.0) {
            return Err(Error::Usage(format!(
                "cfl_safety must lie in (0, 1], got {}",
                self.cfl_safety
            )));
        }
        if self.record_every == 0 {
            return Err(Error::Usage("record_every must be ≥ 1".into()));
        }
        Ok(())
    }

    /// Step count and the step actually used for a horizon, given `dt`.
    pub(crate) fn schedule(&self, dt: f64) -> usize {
        if self.t_end == 0.0 {
            0
        } else {
            ((self.t_end / dt) - 1e-9).ceil().max(1.0) as usize
        }
    }
}

/// `dt ≤ cfl_safety / maxᵢ mᵢ Σⱼ C̄ᵢⱼ pⱼ (1 + spread)` with the gradient growth
/// constants `C̄ᵢⱼ` sampled on `[−spread, spread]`, `spread` being the diameter
/// of the joint support hull.
pub fn stability_bound(spread: f64, pm: &PotentialMatrix, params: &SystemParams, cfl_safety: f64) -> f64 {
    let half = spread.max(1.0);
    let n = pm.n();
    let rate = (0..n)
        .map(|i| {
            params.m[i]
                * (0..n)
                    .map(|j| estimate_growth_bound(pm.entry(i, j), (-half, half), 1001) * params.p[j])
                    .sum::<f64>()
                * (1.0 + spread)
        })
        .fold(0.0, f64::max);
    if rate > 0.0 {
        cfl_safety / rate
    } else {
        f64::INFINITY
    }
}

fn spread_of(u: &[Vec<f64>]) -> f64 {
    let (lo, hi) = u
        .iter()
        .flatten()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    hi - lo
}

/// `innerᵢ[k] = Σⱼ (pⱼ/M) Σₗ W′ᵢⱼ(uᵢ[k] − uⱼ[l])`, the mean-field force felt
/// by cell `k` of species `i` (without the mobility and sign).
pub(crate) fn inner_sums(u: &[Vec<f64>], pm: &PotentialMatrix, p: &[f64]) -> Vec<Vec<f64>> {
    let n = u.len();
    let resolution = u[0].len() as f64;
    (0..n)
        .map(|i| {
            u[i].par_iter()
                .with_min_len(8)
                .map(|&x| {
                    (0..n)
                        .map(|j| p[j] / resolution * pm.entry(i, j).grad_sum(x, &u[j]))
                        .sum()
                })
                .collect()
        })
        .collect()
}

fn locate_non_finite(u: &[Vec<f64>], pm: &PotentialMatrix, i: usize, k: usize) -> String {
    for (j, row) in u.iter().enumerate() {
        for (l, &y) in row.iter().enumerate() {
            if !pm.entry(i, j).grad(u[i][k] - y).is_finite() {
                return format!("i={i}, j={j}, k={k}, l={l}");
            }
        }
    }
    format!("i={i}, k={k}")
}

fn rhs_values(u: &[Vec<f64>], pm: &PotentialMatrix, params: &SystemParams) -> Result<Vec<Vec<f64>>> {
    let mut v = inner_sums(u, pm, &params.p);
    for (i, row) in v.iter_mut().enumerate() {
        let m = params.m[i];
        for (k, x) in row.iter_mut().enumerate() {
            if !x.is_finite() {
                return Err(Error::numeric(
                    "non-finite interaction force",
                    locate_non_finite(u, pm, i, k),
                ));
            }
            *x *= -m;
        }
    }
    Ok(v)
}

/// Velocities `vᵢ[k] = mᵢ Σⱼ (pⱼ/M) Σₗ W′ᵢⱼ(uⱼ[l] − uᵢ[k])`. Cost `O(n²M²)`.
pub fn rhs(qs: &QuantileState, pm: &PotentialMatrix) -> Result<Vec<Vec<f64>>> {
    check_shapes(qs, pm)?;
    rhs_values(qs.values(), pm, qs.params())
}

fn check_shapes(qs: &QuantileState, pm: &PotentialMatrix) -> Result<()> {
    if qs.n() != pm.n() {
        return Err(Error::Usage(format!(
            "state has {} species, potential has {}",
            qs.n(),
            pm.n()
        )));
    }
    Ok(())
}

fn axpy(u: &[Vec<f64>], a: f64, v: &[Vec<f64>]) -> Vec<Vec<f64>> {
    u.iter()
        .zip(v)
        .map(|(ur, vr)| ur.iter().zip(vr).map(|(x, y)| x + a * y).collect())
        .collect()
}

/// Explicit update of raw species vectors with one Euler or RK4 step.
pub(crate) fn integrate(
    u: &[Vec<f64>],
    dt: f64,
    scheme: Scheme,
    f: impl Fn(&[Vec<f64>]) -> Result<Vec<Vec<f64>>>,
) -> Result<Vec<Vec<f64>>> {
    match scheme {
        Scheme::Euler => Ok(axpy(u, dt, &f(u)?)),
        Scheme::Rk4 => {
            let k1 = f(u)?;
            let k2 = f(&axpy(u, 0.5 * dt, &k1))?;
            let k3 = f(&axpy(u, 0.5 * dt, &k2))?;
            let k4 = f(&axpy(u, dt, &k3))?;
            Ok(u.iter()
                .enumerate()
                .map(|(i, row)| {
                    row.iter()
                        .enumerate()
                        .map(|(k, x)| x + dt / 6.0 * (k1[i][k] + 2.0 * k2[i][k] + 2.0 * k3[i][k] + k4[i][k]))
                        .collect()
                })
                .collect())
        }
    }
}

/// Result of a single step.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub state: QuantileState,
    /// Number of adjacent-cell inversions produced by the raw update.
    pub inversions: usize,
    /// Whether the sort repair changed anything.
    pub repaired: bool,
}

/// One explicit step of size `dt` with the configured scheme and repair.
pub fn step(qs: &QuantileState, pm: &PotentialMatrix, scheme: Scheme, repair: Repair, dt: f64) -> Result<StepOutcome> {
    check_shapes(qs, pm)?;
    let params = qs.params();
    let mut next = integrate(qs.values(), dt, scheme, |u| rhs_values(u, pm, params))?;
    for (i, row) in next.iter().enumerate() {
        if let Some(k) = row.iter().position(|x| !x.is_finite()) {
            return Err(Error::numeric("non-finite state after step", format!("species {i}, cell {k}")));
        }
    }
    let inversions = next
        .iter()
        .map(|row| row.windows(2).filter(|w| w[1] < w[0]).count())
        .sum();
    let repaired = repair == Repair::Sort && inversions > 0;
    if repaired {
        next.iter_mut().for_each(|row| row.sort_by(f64::total_cmp));
    }
    let state = QuantileState::new_unordered(next, params.clone())?;
    Ok(StepOutcome {
        state,
        inversions,
        repaired,
    })
}

/// A recorded sample of a quantile trajectory.
#[derive(Debug, Clone)]
pub struct Record {
    pub t: f64,
    pub state: QuantileState,
    pub diagnostics: DiagnosticsRecord,
}

#[derive(Debug)]
pub struct Trajectory {
    pub records: Vec<Record>,
    /// Step size actually used.
    pub dt: f64,
    /// Stability bound at the initial state.
    pub stability_bound: f64,
    pub steps_taken: usize,
    /// Steps whose raw update was non-monotone.
    pub inversion_steps: usize,
    /// Steps where the sort repair fired.
    pub repair_events: usize,
    /// Set when integration stopped early; `records` then ends at the last
    /// good state.
    pub failure: Option<Error>,
}

impl Trajectory {
    pub fn times(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.t).collect()
    }

    pub fn final_state(&self) -> &QuantileState {
        &self.records.last().expect("trajectory holds the initial state").state
    }

    pub fn final_record(&self) -> &Record {
        self.records.last().expect("trajectory holds the initial state")
    }

    /// `(t, f(record))` for every record.
    pub fn series(&self, f: impl Fn(&Record) -> f64) -> Vec<(f64, f64)> {
        self.records.iter().map(|r| (r.t, f(r))).collect()
    }

    pub fn exceeds_stability_bound(&self) -> bool {
        self.dt > self.stability_bound
    }
}

/// Ground state to report distances against, when λ₀ > 0.
pub(crate) fn ground_if_convex(pm: &PotentialMatrix, params: &SystemParams, resolution: usize) -> Option<QuantileState> {
    let report = convexity::analyze(pm, params).ok()?;
    (report.lambda0 > 0.0).then(|| diagnostics::ground_state(params, resolution))
}

/// Integrates from `qs0` to `cfg.t_end`, recording every `record_every`
/// steps and at the final time.
pub fn run(qs0: &QuantileState, pm: &PotentialMatrix, cfg: &SolverConfig) -> Result<Trajectory> {
    cfg.check()?;
    check_shapes(qs0, pm)?;
    let params = qs0.params();
    let bound = stability_bound(spread_of(qs0.values()), pm, params, cfg.cfl_safety);
    let dt = match cfg.dt {
        Some(dt) => dt,
        None if bound.is_finite() => bound.min(cfg.t_end.max(f64::MIN_POSITIVE)),
        None => cfg.t_end.max(1.0),
    };
    let steps = cfg.schedule(dt);
    let ground = ground_if_convex(pm, params, qs0.resolution());
    let make_record = |t: f64, state: QuantileState| Record {
        diagnostics: diagnostics::record(t, &state, pm, ground.as_ref()),
        t,
        state,
    };

    let mut traj = Trajectory {
        records: vec![make_record(0.0, qs0.clone())],
        dt,
        stability_bound: bound,
        steps_taken: 0,
        inversion_steps: 0,
        repair_events: 0,
        failure: None,
    };
    let mut current = qs0.clone();
    for s in 1..=steps {
        let t_prev = (s - 1) as f64 * dt;
        let (t, h) = if s == steps { (cfg.t_end, cfg.t_end - t_prev) } else { (s as f64 * dt, dt) };
        match step(&current, pm, cfg.scheme, cfg.repair, h) {
            Ok(out) => {
                traj.steps_taken += 1;
                traj.inversion_steps += usize::from(out.inversions > 0);
                traj.repair_events += usize::from(out.repaired);
                current = out.state;
                if s % cfg.record_every == 0 || s == steps {
                    traj.records.push(make_record(t, current.clone()));
                }
            }
            Err(e) => {
                if traj.records.last().map(|r| r.t) != Some(t_prev) {
                    traj.records.push(make_record(t_prev, current.clone()));
                }
                traj.failure = Some(e);
                break;
            }
        }
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::weighted_center_of_mass;
    use crate::potentials::ScalarPotential;
    use approx::assert_abs_diff_eq;

    fn single(u: Vec<f64>, m: f64, p: f64) -> QuantileState {
        QuantileState::from_values(vec![u], vec![m], vec![p]).unwrap()
    }

    #[test]
    fn quadratic_velocity_is_relaxation_to_mean() {
        let (m, kappa, p) = (1.5, 0.8, 2.0);
        let u = vec![-2.0, -0.3, 0.1, 1.0, 4.0];
        let mean = u.iter().sum::<f64>() / u.len() as f64;
        let pm = PotentialMatrix::scalar(ScalarPotential::quadratic(kappa), kappa);
        let v = rhs(&single(u.clone(), m, p), &pm).unwrap();
        for (k, x) in u.iter().enumerate() {
            assert_abs_diff_eq!(v[0][k], m * kappa * p * (mean - x), epsilon = 1e-12);
        }
    }

    #[test]
    fn dirac_is_fixed() {
        let pm = PotentialMatrix::scalar(ScalarPotential::morse(1.0, 1.0, 2.0, 0.3, Some(0.05)).unwrap(), 0.0);
        let qs = single(vec![1.7; 6], 1.0, 1.0);
        assert!(rhs(&qs, &pm).unwrap()[0].iter().all(|&v| v == 0.0));
        let out = step(&qs, &pm, Scheme::Rk4, Repair::Sort, 0.1).unwrap();
        assert_eq!(out.state.values(), qs.values());
    }

    #[test]
    fn cross_interaction_only() {
        let w = ScalarPotential::gaussian_ar(1.0, 0.7, 0.0, 1.0).unwrap();
        let z = ScalarPotential::Zero;
        let pm = PotentialMatrix::new(vec![vec![z.clone(), w.clone()], vec![w.clone(), z]], vec![vec![0.0; 2]; 2]).unwrap();
        let (m, p, a) = ([1.3, 0.6], [0.4, 2.2], 0.9);
        let qs = QuantileState::from_values(vec![vec![0.0; 3], vec![a; 3]], m.to_vec(), p.to_vec()).unwrap();
        let v = rhs(&qs, &pm).unwrap();
        for k in 0..3 {
            assert_abs_diff_eq!(v[0][k], m[0] * p[1] * w.grad(a), epsilon = 1e-14);
            assert_abs_diff_eq!(v[1][k], -m[1] * p[0] * w.grad(a), epsilon = 1e-14);
        }
    }

    #[test]
    fn euler_is_the_linear_map() {
        let pm = PotentialMatrix::scalar(ScalarPotential::quadratic(1.0), 1.0);
        let u = vec![-1.0, 0.0, 0.5, 2.5];
        let mean = u.iter().sum::<f64>() / 4.0;
        let dt = 0.1;
        let out = step(&single(u.clone(), 1.0, 1.0), &pm, Scheme::Euler, Repair::None, dt).unwrap();
        for (k, x) in u.iter().enumerate() {
            assert_abs_diff_eq!(out.state.species(0)[k] - mean, (1.0 - dt) * (x - mean), epsilon = 1e-14);
        }
    }

    #[test]
    fn rk4_matches_exponential_decay() {
        let pm = PotentialMatrix::scalar(ScalarPotential::quadratic(1.0), 1.0);
        let u = vec![-1.0, 0.0, 0.5, 2.5];
        let mean = u.iter().sum::<f64>() / 4.0;
        let errors: Vec<f64> = [0.1, 0.05]
            .iter()
            .map(|&dt| {
                let cfg = SolverConfig { dt: Some(dt), t_end: 1.0, ..SolverConfig::default() };
                let traj = run(&single(u.clone(), 1.0, 1.0), &pm, &cfg).unwrap();
                let end = traj.final_state();
                u.iter()
                    .enumerate()
                    .map(|(k, x)| (end.species(0)[k] - mean - (x - mean) * (-1.0f64).exp()).abs())
                    .fold(0.0, f64::max)
            })
            .collect();
        assert!(errors[0] < 1e-6, "{errors:?}");
        // Fourth order: halving dt divides the error by about 16.
        let ratio = errors[0] / errors[1];
        assert!(ratio > 12.0 && ratio < 20.0, "ratio {ratio}");
    }

    #[test]
    fn zero_horizon_keeps_initial_state() {
        let pm = PotentialMatrix::scalar(ScalarPotential::quadratic(1.0), 1.0);
        let qs = single(vec![0.0, 1.0], 1.0, 1.0);
        let cfg = SolverConfig { t_end: 0.0, ..SolverConfig::default() };
        let traj = run(&qs, &pm, &cfg).unwrap();
        assert_eq!(traj.records.len(), 1);
        assert_eq!(traj.steps_taken, 0);
        assert_eq!(traj.final_state().values(), qs.values());
    }

    #[test]
    fn records_follow_schedule() {
        let pm = PotentialMatrix::scalar(ScalarPotential::quadratic(1.0), 1.0);
        let qs = single(vec![0.0, 1.0], 1.0, 1.0);
        let cfg = SolverConfig { dt: Some(0.01), t_end: 0.25, record_every: 10, ..SolverConfig::default() };
        let traj = run(&qs, &pm, &cfg).unwrap();
        assert_eq!(traj.steps_taken, 25);
        let times = traj.times();
        assert_eq!(times.len(), 4);
        assert_abs_diff_eq!(times[1], 0.1, epsilon = 1e-15);
        assert_eq!(*times.last().unwrap(), 0.25);
    }

    #[test]
    fn default_dt_is_the_stability_bound() {
        let pm = PotentialMatrix::scalar(ScalarPotential::quadratic(2.0), 2.0);
        let qs = single(vec![-1.0, 1.0], 1.0, 1.0);
        let traj = run(&qs, &pm, &SolverConfig::default()).unwrap();
        // cfl / (m · |a| · p · (1 + spread)) = 0.2 / (2 · 3)
        assert_abs_diff_eq!(traj.dt, 0.2 / 6.0, epsilon = 1e-15);
        assert!(!traj.exceeds_stability_bound());
        let coarse = SolverConfig { dt: Some(0.5), ..SolverConfig::default() };
        assert!(run(&qs, &pm, &coarse).unwrap().exceeds_stability_bound());
    }

    #[test]
    fn center_of_mass_is_conserved_for_mixed_kernels() {
        let a = ScalarPotential::morse(1.0, 1.0, 0.6, 0.4, Some(0.1)).unwrap();
        let b = ScalarPotential::double_well(0.2, 0.5);
        let c = ScalarPotential::quadratic(0.7);
        let pm = PotentialMatrix::new(vec![vec![a, c.clone()], vec![c, b]], vec![vec![0.0; 2]; 2]).unwrap();
        let qs = QuantileState::from_values(
            vec![vec![-1.0, -0.5, 0.2, 0.9], vec![-0.3, 0.4, 0.5, 2.0]],
            vec![1.0, 3.0],
            vec![0.7, 1.9],
        )
        .unwrap();
        let e0 = weighted_center_of_mass(&qs);
        let cfg = SolverConfig { dt: Some(0.01), t_end: 1.0, ..SolverConfig::default() };
        let traj = run(&qs, &pm, &cfg).unwrap();
        for r in &traj.records {
            assert!((r.diagnostics.e_invariant - e0).abs() < 1e-13, "{}", r.diagnostics.e_invariant - e0);
        }
    }

    #[test]
    fn repair_sorts_crossings() {
        // Strong repulsion with a huge step produces crossings.
        let pm = PotentialMatrix::scalar(ScalarPotential::double_well(1.0, 0.0), 0.0);
        let qs = single(vec![-1.0, -0.9, 0.9, 1.0], 1.0, 1.0);
        let raw = step(&qs, &pm, Scheme::Euler, Repair::None, 2.0).unwrap();
        assert!(raw.inversions > 0);
        assert!(!raw.state.is_monotone());
        let sorted = step(&qs, &pm, Scheme::Euler, Repair::Sort, 2.0).unwrap();
        assert!(sorted.repaired);
        assert!(sorted.state.is_monotone());
    }

    #[test]
    fn euler_preserves_gaps_below_lipschitz_bound() {
        let w = ScalarPotential::gaussian_ar(1.0, 0.5, 0.5, 0.1).unwrap();
        let l = crate::potentials::estimate_gradient_lipschitz(&w, (-10.0, 10.0), 20001);
        let pm = PotentialMatrix::scalar(w, 0.0);
        let mut qs = single((0..16).map(|k| -1.0 + k as f64 / 8.0).collect(), 1.0, 1.0);
        let dt = 0.5 / l;
        for _ in 0..50 {
            let gap = qs.min_gap(0);
            let out = step(&qs, &pm, Scheme::Euler, Repair::None, dt).unwrap();
            assert_eq!(out.inversions, 0);
            assert!(out.state.min_gap(0) >= (1.0 - dt * l) * gap * (1.0 - 1e-12));
            qs = out.state;
        }
    }

    #[test]
    fn numeric_failure_gives_partial_trajectory() {
        let pm = PotentialMatrix::scalar(ScalarPotential::power(3.0, -1.0).unwrap(), 0.0);
        let qs = single(vec![-1.0, 1.0], 1.0, 1.0);
        let cfg = SolverConfig { dt: Some(1.0), t_end: 100.0, scheme: Scheme::Euler, ..SolverConfig::default() };
        let traj = run(&qs, &pm, &cfg).unwrap();
        assert!(matches!(traj.failure, Some(Error::Numeric { .. })));
        assert!(traj.steps_taken < 100);
        assert!(traj.final_state().values().iter().flatten().all(|v| v.is_finite()));
    }

    #[test]
    fn config_checks() {
        let bad = [
            SolverConfig { dt: Some(0.0), ..SolverConfig::default() },
            SolverConfig { t_end: -1.0, ..SolverConfig::default() },
            SolverConfig { cfl_safety: 1.5, ..SolverConfig::default() },
            SolverConfig { record_every: 0, ..SolverConfig::default() },
        ];
        for cfg in bad {
            assert!(matches!(cfg.check(), Err(Error::Usage(_))), "{cfg:?}");
        }
        assert!(SolverConfig::default().check().is_ok());
    }

    #[test]
    fn shape_mismatch_is_usage_error() {
        let pm = PotentialMatrix::scalar(ScalarPotential::quadratic(1.0), 1.0);
        let qs = QuantileState::from_values(vec![vec![0.0], vec![1.0]], vec![1.0; 2], vec![1.0; 2]).unwrap();
        assert!(matches!(rhs(&qs, &pm), Err(Error::Usage(_))));
    }
}
