//! Energy, dissipation, support and long-time diagnostics of quantile states.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::convexity::SystemParams;
use crate::measures::{compound_distance, weighted_center_of_mass, QuantileState};
use crate::potentials::PotentialMatrix;
use crate::quantile_solver::{inner_sums, Trajectory};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticsRecord {
    pub t: f64,
    pub energy: f64,
    /// `d𝒲/dt`, always ≤ 0.
    pub dissipation: f64,
    pub e_invariant: f64,
    pub supp_lo: Vec<f64>,
    pub supp_hi: Vec<f64>,
    pub diam: Vec<f64>,
    /// Compound distance to the ground state, present when λ₀ > 0.
    pub w2_to_ground: Option<f64>,
}

/// Multi-component interaction energy
/// `½ Σᵢ Σⱼ (pᵢpⱼ/M²) Σₖ Σₗ Wᵢⱼ(uᵢ[k] − uⱼ[l])`.
pub fn energy(qs: &QuantileState, pm: &PotentialMatrix) -> f64 {
    let n = qs.n();
    let resolution = qs.resolution() as f64;
    let p = &qs.params().p;
    let u = qs.values();
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            let w = pm.entry(i, j);
            let sum: f64 = u[i].par_iter().with_min_len(8).map(|&x| w.eval_sum(x, &u[j])).sum();
            total += p[i] * p[j] / (resolution * resolution) * sum;
        }
    }
    0.5 * total
}

/// Energy dissipation `−Σᵢ (mᵢpᵢ/M) Σₖ innerᵢ[k]²`, where `innerᵢ[k]` is the
/// quadrature of `Σⱼ pⱼ ∫ W′ᵢⱼ(uᵢ(zₖ) − uⱼ(ξ)) dξ`.
pub fn dissipation(qs: &QuantileState, pm: &PotentialMatrix) -> f64 {
    let inner = inner_sums(qs.values(), pm, &qs.params().p);
    let resolution = qs.resolution() as f64;
    let params = qs.params();
    -inner
        .iter()
        .enumerate()
        .map(|(i, row)| params.m[i] * params.p[i] / resolution * row.iter().map(|x| x * x).sum::<f64>())
        .sum::<f64>()
}

/// Per species, `maxₖ |Σⱼ pⱼ ∫ W′ᵢⱼ(uᵢ(zₖ) − uⱼ(ξ)) dξ|`: how far each cell is
/// from force balance, with the same quadrature as the solver.
pub fn stationarity_residual(qs: &QuantileState, pm: &PotentialMatrix) -> Vec<f64> {
    inner_sums(qs.values(), pm, &qs.params().p)
        .iter()
        .map(|row| row.iter().map(|x| x.abs()).fold(0.0, f64::max))
        .collect()
}

/// Position `x∞ = E / Σⱼ(pⱼ/mⱼ)` of the Dirac ground state.
pub fn ground_position(params: &SystemParams) -> f64 {
    params.center[0] / params.weight_sum()
}

/// The Dirac vector `(p₁, …, pₙ)ᵀ δ_{x∞}` as a quantile state of resolution `M`.
pub fn ground_state(params: &SystemParams, resolution: usize) -> QuantileState {
    let x = ground_position(params);
    QuantileState::new(vec![vec![x; resolution.max(1)]; params.n()], params.clone())
        .expect("constant rows are monotone and finite")
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Support {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub diam: Vec<f64>,
}

/// Support endpoints `uᵢ[0]`, `uᵢ[M−1]` and the diameters between them.
pub fn support_and_diameter(qs: &QuantileState) -> Support {
    let lo: Vec<f64> = qs.values().iter().map(|r| r[0]).collect();
    let hi: Vec<f64> = qs.values().iter().map(|r| r[r.len() - 1]).collect();
    let diam = lo.iter().zip(&hi).map(|(l, h)| (h - l).max(0.0)).collect();
    Support { lo, hi, diam }
}

/// Diagnostics of one state at time `t`.
pub fn record(t: f64, qs: &QuantileState, pm: &PotentialMatrix, ground: Option<&QuantileState>) -> DiagnosticsRecord {
    let support = support_and_diameter(qs);
    DiagnosticsRecord {
        t,
        energy: energy(qs, pm),
        dissipation: dissipation(qs, pm),
        e_invariant: weighted_center_of_mass(qs),
        supp_lo: support.lo,
        supp_hi: support.hi,
        diam: support.diam,
        w2_to_ground: ground.and_then(|g| compound_distance(qs, g).ok()),
    }
}

/// Header of the diagnostics CSV for `n` species.
pub fn diagnostics_csv_header(n: usize) -> String {
    let mut header = String::from("t,energy,dissipation,E_invariant");
    for prefix in ["diam", "supp_lo", "supp_hi"] {
        for i in 1..=n {
            header.push_str(&format!(",{prefix}_{i}"));
        }
    }
    header
}

pub fn write_diagnostics_row<W: Write>(out: &mut W, rec: &DiagnosticsRecord) -> std::io::Result<()> {
    write!(out, "{},{},{},{}", rec.t, rec.energy, rec.dissipation, rec.e_invariant)?;
    for v in rec.diam.iter().chain(&rec.supp_lo).chain(&rec.supp_hi) {
        write!(out, ",{v}")?;
    }
    writeln!(out)
}

/// Log-linear least-squares fit of an exponential decay.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateFit {
    pub quantity: String,
    /// `−slope` of `ln(value)` against `t`.
    pub fitted_rate: f64,
    pub predicted_rate: f64,
    /// `|fitted − predicted| / |predicted|` (absolute error when predicted is 0).
    pub rel_err: f64,
    pub r_squared: f64,
    pub window: (f64, f64),
    pub points: usize,
}

/// Fits `value ≈ C·e^{−rate·t}` over the samples with `t` in `window`.
pub fn fit_decay_rate(quantity: &str, series: &[(f64, f64)], window: (f64, f64), predicted_rate: f64) -> Result<RateFit> {
    let pts: Vec<(f64, f64)> = series
        .iter()
        .copied()
        .filter(|(t, _)| *t >= window.0 && *t <= window.1)
        .collect();
    if pts.len() < 3 {
        return Err(Error::Usage(format!(
            "rate fit of {quantity} needs ≥ 3 points in [{}, {}], got {}",
            window.0,
            window.1,
            pts.len()
        )));
    }
    if let Some((t, v)) = pts.iter().find(|(_, v)| !(*v > 0.0 && v.is_finite())) {
        return Err(Error::Usage(format!(
            "rate fit of {quantity}: nonpositive value {v} at t = {t} (decayed to roundoff; shrink the window)"
        )));
    }
    let count = pts.len() as f64;
    let mean_t = pts.iter().map(|p| p.0).sum::<f64>() / count;
    let mean_y = pts.iter().map(|p| p.1.ln()).sum::<f64>() / count;
    let (mut stt, mut sty, mut syy) = (0.0, 0.0, 0.0);
    for &(t, v) in &pts {
        let dt = t - mean_t;
        let dy = v.ln() - mean_y;
        stt += dt * dt;
        sty += dt * dy;
        syy += dy * dy;
    }
    if stt == 0.0 {
        return Err(Error::Usage(format!("rate fit of {quantity}: all samples at one time")));
    }
    let slope = sty / stt;
    let residual: f64 = pts
        .iter()
        .map(|&(t, v)| {
            let r = v.ln() - (mean_y + slope * (t - mean_t));
            r * r
        })
        .sum();
    let r_squared = if syy > 0.0 { 1.0 - residual / syy } else { 1.0 };
    let fitted_rate = -slope;
    let rel_err = if predicted_rate != 0.0 {
        (fitted_rate - predicted_rate).abs() / predicted_rate.abs()
    } else {
        fitted_rate.abs()
    };
    Ok(RateFit {
        quantity: quantity.to_string(),
        fitted_rate,
        predicted_rate,
        rel_err,
        r_squared,
        window,
        points: pts.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SteadyStateVerdict {
    pub steady: bool,
    pub energy: f64,
    pub dissipation: f64,
    /// Per-species stationarity residual, see [`stationarity_residual`].
    pub residual: Vec<f64>,
}

/// Steady when `|dissipation| < tol·(1 + |energy|)`.
pub fn steady_state_of(qs: &QuantileState, pm: &PotentialMatrix, tol: f64) -> SteadyStateVerdict {
    let e = energy(qs, pm);
    let d = dissipation(qs, pm);
    SteadyStateVerdict {
        steady: d.abs() < tol * (1.0 + e.abs()),
        energy: e,
        dissipation: d,
        residual: stationarity_residual(qs, pm),
    }
}

pub const DEFAULT_STEADY_TOL: f64 = 1e-8;

/// Steady-state verdict at the final time of a trajectory.
pub fn steady_state_check(traj: &Trajectory, pm: &PotentialMatrix, tol: f64) -> SteadyStateVerdict {
    steady_state_of(traj.final_state(), pm, tol)
}
