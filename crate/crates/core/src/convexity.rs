//! Geodesic-convexity analysis of the interaction energy.
//!
//! All quantities here are closed-form arithmetic on the declared moduli κ
//! (or the tail moduli `C`), mobilities `m` and masses `p`:
//!
//! ```text
//! ηᵢ = min_{j≠i} κᵢⱼ mⱼ
//! λ₀ = minᵢ [ pᵢ·min(0, mᵢκᵢᵢ − ηᵢ) + ½ Σⱼ pⱼ (ηⱼ + ηᵢ mᵢ/mⱼ) ]
//! ```
//!
//! The energy is λ-convex along generalized geodesics of the compound metric
//! for every λ ≤ λ₀; a positive λ₀ means contraction of the flow at that rate
//! and a unique Dirac ground state.

use serde::{Deserialize, Serialize};

use crate::potentials::{require_symmetric_kappa, PotentialMatrix};
use crate::{is_square, Error, Matrix, Result};

/// Mobilities, masses and the conserved weighted center of mass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    /// Mobility magnitudes `mⱼ > 0`.
    pub m: Vec<f64>,
    /// Total masses `pⱼ > 0`.
    pub p: Vec<f64>,
    /// Weighted center of mass `E = Σⱼ (1/mⱼ) ∫ x dμⱼ`, a `d`-vector.
    pub center: Vec<f64>,
}

impl SystemParams {
    pub fn new(m: Vec<f64>, p: Vec<f64>, center: Vec<f64>) -> Result<Self> {
        if m.is_empty() {
            return Err(Error::Domain("need at least one species".into()));
        }
        if p.len() != m.len() {
            return Err(Error::Domain(format!(
                "{} mobilities but {} masses",
                m.len(),
                p.len()
            )));
        }
        if let Some(bad) = m.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
            return Err(Error::Domain(format!("mobilities must be positive and finite, got {bad}")));
        }
        if let Some(bad) = p.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
            return Err(Error::Domain(format!("masses must be positive and finite, got {bad}")));
        }
        if center.is_empty() {
            return Err(Error::Domain("center of mass needs dimension d ≥ 1".into()));
        }
        if center.iter().any(|c| !c.is_finite()) {
            return Err(Error::Domain("center of mass must be finite".into()));
        }
        Ok(SystemParams { m, p, center })
    }

    /// Parameters in `d` dimensions with the center at the origin.
    pub fn centered(m: Vec<f64>, p: Vec<f64>, d: usize) -> Result<Self> {
        Self::new(m, p, vec![0.0; d.max(1)])
    }

    pub fn n(&self) -> usize {
        self.m.len()
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    /// `Σⱼ pⱼ/mⱼ`, the normalisation of the ground-state position.
    pub fn weight_sum(&self) -> f64 {
        self.p.iter().zip(&self.m).map(|(p, m)| p / m).sum()
    }

    fn check_matrix(&self, k: &Matrix, name: &str) -> Result<()> {
        if !is_square(k, self.n()) {
            return Err(Error::Usage(format!(
                "{name} must be {n}×{n} to match the parameters",
                n = self.n()
            )));
        }
        Ok(())
    }
}

/// `λ₀` together with the `ηᵢ` it was built from.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvexityModulus {
    pub eta: Vec<f64>,
    pub lambda0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfiningReport {
    /// `λ̃₀` (`m·C·p` for a single species).
    pub lambda0_tilde: f64,
    /// `η̃ᵢ = min_{j≠i} Cᵢⱼ pⱼ`; empty for a single species.
    pub eta_tilde: Vec<f64>,
    pub irreducible_at_distance: bool,
    pub confining: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvexityReport {
    /// Empty for a single species.
    pub eta: Vec<f64>,
    pub lambda0: f64,
    pub necessary_ok: Vec<bool>,
    pub irreducible: bool,
    pub confining: Option<ConfiningReport>,
}

/// The minimum formula shared by λ₀ and λ̃₀, with `ηᵢ = min_{j≠i} kᵢⱼ·wⱼ`.
fn min_formula(k: &Matrix, m: &[f64], p: &[f64], eta_weight: &[f64]) -> ConvexityModulus {
    let n = m.len();
    let eta: Vec<f64> = (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| j != i)
                .map(|j| k[i][j] * eta_weight[j])
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let lambda0 = (0..n)
        .map(|i| {
            let diag = p[i] * (m[i] * k[i][i] - eta[i]).min(0.0);
            let coupling: f64 = (0..n).map(|j| p[j] * (eta[j] + eta[i] * m[i] / m[j])).sum();
            diag + 0.5 * coupling
        })
        .fold(f64::INFINITY, f64::min);
    ConvexityModulus { eta, lambda0 }
}

/// λ₀ for a genuine system (`n > 1`).
pub fn lambda0(kappa: &Matrix, params: &SystemParams) -> Result<ConvexityModulus> {
    if params.n() < 2 {
        return Err(Error::Usage(
            "lambda0 needs n > 1; use lambda0_scalar for a single species".into(),
        ));
    }
    params.check_matrix(kappa, "kappa")?;
    require_symmetric_kappa(kappa)?;
    Ok(min_formula(kappa, &params.m, &params.p, &params.m))
}

/// Single-species modulus `m·κ·p`.
pub fn lambda0_scalar(kappa: f64, params: &SystemParams) -> Result<f64> {
    if params.n() != 1 {
        return Err(Error::Usage(format!(
            "lambda0_scalar needs n = 1, got n = {}",
            params.n()
        )));
    }
    Ok(params.m[0] * kappa * params.p[0])
}

/// Entry `i` is `Σⱼ κᵢⱼ pⱼ > 0`; all entries hold whenever λ₀ > 0.
pub fn necessary_condition(kappa: &Matrix, params: &SystemParams) -> Result<Vec<bool>> {
    params.check_matrix(kappa, "kappa")?;
    require_symmetric_kappa(kappa)?;
    Ok(kappa
        .iter()
        .map(|row| row.iter().zip(&params.p).map(|(k, p)| k * p).sum::<f64>() > 0.0)
        .collect())
}

fn connected(n: usize, edge: impl Fn(usize, usize) -> bool) -> bool {
    let mut seen = vec![false; n];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(i) = stack.pop() {
        for j in 0..n {
            if !seen[j] && (edge(i, j) || edge(j, i)) {
                seen[j] = true;
                stack.push(j);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

/// Connectivity of the graph with an edge `(i, j)` whenever `W′ᵢⱼ ≢ 0`.
pub fn irreducible(pm: &PotentialMatrix) -> bool {
    connected(pm.n(), |i, j| i != j && !pm.entry(i, j).is_gradient_identically_zero())
}

/// Connectivity of the graph with an edge `(i, j)` whenever `W′ᵢⱼ ≢ 0` on `(R, ∞)`.
pub fn irreducible_at_distance(pm: &PotentialMatrix, radius: f64) -> bool {
    connected(pm.n(), |i, j| i != j && !pm.entry(i, j).gradient_vanishes_beyond(radius))
}

/// Confinement verdict from the declared tail moduli.
///
/// Note that `η̃ᵢ` weights by the masses `pⱼ`, unlike `ηᵢ` which weights by
/// the mobilities.
pub fn confining_check(pm: &PotentialMatrix, params: &SystemParams) -> Result<ConfiningReport> {
    let spec = pm
        .confining()
        .ok_or_else(|| Error::Usage("potential has no confining spec (radius, C)".into()))?;
    params.check_matrix(&spec.c, "confining C")?;
    if params.n() == 1 {
        let c = spec.c[0][0];
        return Ok(ConfiningReport {
            lambda0_tilde: params.m[0] * c * params.p[0],
            eta_tilde: Vec::new(),
            irreducible_at_distance: true,
            confining: c > 0.0,
        });
    }
    let modulus = min_formula(&spec.c, &params.m, &params.p, &params.p);
    let tail_connected = irreducible_at_distance(pm, spec.radius);
    Ok(ConfiningReport {
        lambda0_tilde: modulus.lambda0,
        eta_tilde: modulus.eta,
        irreducible_at_distance: tail_connected,
        confining: modulus.lambda0 > 0.0 && tail_connected,
    })
}

/// Full convexity report for a potential matrix and parameters.
pub fn analyze(pm: &PotentialMatrix, params: &SystemParams) -> Result<ConvexityReport> {
    if pm.n() != params.n() {
        return Err(Error::Usage(format!(
            "potential has n = {} but parameters have n = {}",
            pm.n(),
            params.n()
        )));
    }
    let (eta, lambda0) = if pm.n() == 1 {
        (Vec::new(), lambda0_scalar(pm.kappa()[0][0], params)?)
    } else {
        let m = lambda0(pm.kappa(), params)?;
        (m.eta, m.lambda0)
    };
    let confining = match pm.confining() {
        Some(_) => Some(confining_check(pm, params)?),
        None => None,
    };
    Ok(ConvexityReport {
        eta,
        lambda0,
        necessary_ok: necessary_condition(pm.kappa(), params)?,
        irreducible: irreducible(pm),
        confining,
    })
}
