//! Species measures in the two representations used by the solvers.
//!
//! In one dimension a species of mass `pᵢ` is stored by its pseudo-inverse
//! distribution function `uᵢ(z) = inf{x : Fᵢ(x) > z}` sampled at the cell
//! midpoints `zₖ = (k + ½)/M` of a grid shared by all species. Each cell then
//! carries mass `pᵢ/M`, and the monotone (quantile) coupling is optimal for
//! every convex transport cost, so W₁, W₂ and W∞ reduce to norms of
//! differences of quantile vectors.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::convexity::SystemParams;
use crate::{Error, Result};

/// Per-species quantile vectors on a shared midpoint grid of `[0, 1)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuantileState {
    u: Vec<Vec<f64>>,
    params: SystemParams,
}

impl QuantileState {
    /// Requires `n` rows of equal length `M ≥ 1`, finite and non-decreasing.
    pub fn new(u: Vec<Vec<f64>>, params: SystemParams) -> Result<Self> {
        let state = Self::new_unordered(u, params)?;
        if let Some((i, k)) = state.first_inversion() {
            return Err(Error::Domain(format!(
                "quantile vector of species {i} decreases at cell {k}"
            )));
        }
        Ok(state)
    }

    /// Like [`QuantileState::new`] but accepts non-monotone rows (as produced
    /// by a time step without repair).
    pub fn new_unordered(u: Vec<Vec<f64>>, params: SystemParams) -> Result<Self> {
        if params.dim() != 1 {
            return Err(Error::Usage(format!(
                "quantile states are one-dimensional, parameters have d = {}",
                params.dim()
            )));
        }
        if u.len() != params.n() {
            return Err(Error::Usage(format!(
                "{} quantile rows for {} species",
                u.len(),
                params.n()
            )));
        }
        let resolution = u[0].len();
        if resolution == 0 || u.iter().any(|row| row.len() != resolution) {
            return Err(Error::Usage("quantile rows must share one resolution M ≥ 1".into()));
        }
        if let Some((i, k)) = u
            .iter()
            .enumerate()
            .find_map(|(i, row)| row.iter().position(|v| !v.is_finite()).map(|k| (i, k)))
        {
            return Err(Error::numeric("non-finite quantile value", format!("species {i}, cell {k}")));
        }
        Ok(QuantileState { u, params })
    }

    /// Builds a state and sets the parameters' center of mass from the data.
    pub fn from_values(u: Vec<Vec<f64>>, m: Vec<f64>, p: Vec<f64>) -> Result<Self> {
        let params = SystemParams::new(m, p, vec![0.0])?;
        let mut state = Self::new(u, params)?;
        state.params.center = vec![weighted_center_of_mass(&state)];
        Ok(state)
    }

    pub fn n(&self) -> usize {
        self.u.len()
    }

    /// Number of cells `M`.
    pub fn resolution(&self) -> usize {
        self.u[0].len()
    }

    pub fn species(&self, i: usize) -> &[f64] {
        &self.u[i]
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.u
    }

    pub fn params(&self) -> &SystemParams {
        &self.params
    }

    /// Midpoint `zₖ = (k + ½)/M` of cell `k`.
    pub fn cell_midpoint(&self, k: usize) -> f64 {
        (k as f64 + 0.5) / self.resolution() as f64
    }

    pub fn first_inversion(&self) -> Option<(usize, usize)> {
        self.u
            .iter()
            .enumerate()
            .find_map(|(i, row)| row.windows(2).position(|w| w[1] < w[0]).map(|k| (i, k)))
    }

    pub fn is_monotone(&self) -> bool {
        self.first_inversion().is_none()
    }

    /// Smallest gap `uᵢ[k+1] − uᵢ[k]` of species `i` (infinite when `M = 1`).
    pub fn min_gap(&self, i: usize) -> f64 {
        self.u[i]
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::INFINITY, f64::min)
    }

    fn check_compatible(&self, other: &QuantileState) -> Result<()> {
        if self.n() != other.n() || self.resolution() != other.resolution() {
            return Err(Error::Usage(format!(
                "state shapes differ: {}×{} vs {}×{}",
                self.n(),
                self.resolution(),
                other.n(),
                other.resolution()
            )));
        }
        if self.params.m != other.params.m || self.params.p != other.params.p {
            return Err(Error::Usage("states have different mobilities or masses".into()));
        }
        Ok(())
    }
}

/// Particles of one species: `N` positions in ℝᵈ stored row-major, with masses.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpeciesParticles {
    positions: Vec<f64>,
    masses: Vec<f64>,
}

impl SpeciesParticles {
    pub fn len(&self) -> usize {
        self.masses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masses.is_empty()
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    /// Flat row-major positions, `d` coordinates per particle.
    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub(crate) fn positions_mut(&mut self) -> &mut [f64] {
        &mut self.positions
    }
}

/// Atomic measures: per species, weighted particles in ℝᵈ.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParticleState {
    species: Vec<SpeciesParticles>,
    params: SystemParams,
}

impl ParticleState {
    /// `positions[i]` holds `Nᵢ·d` coordinates row-major; masses of species `i`
    /// must sum to `pᵢ` within 1e-12 relative.
    pub fn new(positions: Vec<Vec<f64>>, masses: Vec<Vec<f64>>, params: SystemParams) -> Result<Self> {
        let d = params.dim();
        if positions.len() != params.n() || masses.len() != params.n() {
            return Err(Error::Usage(format!(
                "particle data for {} / {} species, parameters have {}",
                positions.len(),
                masses.len(),
                params.n()
            )));
        }
        let mut species = Vec::with_capacity(params.n());
        for (i, (x, w)) in positions.into_iter().zip(masses).enumerate() {
            if w.is_empty() {
                return Err(Error::Usage(format!("species {i} has no particles")));
            }
            if x.len() != w.len() * d {
                return Err(Error::Usage(format!(
                    "species {i}: {} coordinates for {} particles in d = {d}",
                    x.len(),
                    w.len()
                )));
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::Domain(format!("species {i}: non-finite particle position")));
            }
            if w.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                return Err(Error::Domain(format!("species {i}: particle masses must be positive")));
            }
            let total: f64 = w.iter().sum();
            let expected = params.p[i];
            if (total - expected).abs() > 1e-12 * expected {
                return Err(Error::Domain(format!(
                    "species {i}: particle masses sum to {total}, expected p = {expected}"
                )));
            }
            species.push(SpeciesParticles {
                positions: x,
                masses: w,
            });
        }
        Ok(ParticleState { species, params })
    }

    /// Builds a state and sets the center of mass from the particles.
    pub fn from_particles(positions: Vec<Vec<f64>>, masses: Vec<Vec<f64>>, m: Vec<f64>, d: usize) -> Result<Self> {
        let p = masses.iter().map(|w| w.iter().sum()).collect();
        let params = SystemParams::centered(m, p, d)?;
        let mut state = Self::new(positions, masses, params)?;
        state.params.center = state.weighted_center_of_mass();
        Ok(state)
    }

    pub fn n(&self) -> usize {
        self.species.len()
    }

    pub fn dim(&self) -> usize {
        self.params.dim()
    }

    pub fn params(&self) -> &SystemParams {
        &self.params
    }

    pub fn species(&self, i: usize) -> &SpeciesParticles {
        &self.species[i]
    }

    pub fn all_species(&self) -> &[SpeciesParticles] {
        &self.species
    }

    pub(crate) fn species_mut(&mut self) -> &mut [SpeciesParticles] {
        &mut self.species
    }

    /// Position of particle `k` of species `i`.
    pub fn position(&self, i: usize, k: usize) -> &[f64] {
        let d = self.dim();
        &self.species[i].positions[k * d..(k + 1) * d]
    }

    pub fn total_particles(&self) -> usize {
        self.species.iter().map(SpeciesParticles::len).sum()
    }

    /// `Σᵢ (1/mᵢ) Σₖ pᵢᵏ xᵢᵏ`.
    pub fn weighted_center_of_mass(&self) -> Vec<f64> {
        let d = self.dim();
        let mut center = vec![0.0; d];
        for (sp, m) in self.species.iter().zip(&self.params.m) {
            for (k, w) in sp.masses.iter().enumerate() {
                for c in 0..d {
                    center[c] += w / m * sp.positions[k * d + c];
                }
            }
        }
        center
    }

    pub(crate) fn same_layout(&self, other: &ParticleState) -> bool {
        self.dim() == other.dim()
            && self.params.m == other.params.m
            && self.species.len() == other.species.len()
            && self
                .species
                .iter()
                .zip(&other.species)
                .all(|(a, b)| a.masses == b.masses)
    }
}

/// Pseudo-inverse of the normalised CDF of one-dimensional particles, sampled
/// at the `M` cell midpoints.
pub fn quantile_from_particles(ps: &ParticleState, resolution: usize) -> Result<QuantileState> {
    if ps.dim() != 1 {
        return Err(Error::Usage(format!(
            "quantile representation needs d = 1, got d = {}",
            ps.dim()
        )));
    }
    if resolution == 0 {
        return Err(Error::Usage("quantile resolution must be ≥ 1".into()));
    }
    let u = ps
        .species
        .iter()
        .map(|sp| {
            let mut order: Vec<usize> = (0..sp.len()).collect();
            order.sort_by(|&a, &b| sp.positions[a].total_cmp(&sp.positions[b]));
            let total: f64 = sp.masses.iter().sum();
            let mut cumulative = Vec::with_capacity(order.len());
            let mut acc = 0.0;
            for &k in &order {
                acc += sp.masses[k];
                cumulative.push(acc / total);
            }
            (0..resolution)
                .map(|cell| {
                    let z = (cell as f64 + 0.5) / resolution as f64;
                    // first particle whose cumulative mass exceeds z
                    let idx = cumulative.partition_point(|&c| c <= z).min(order.len() - 1);
                    sp.positions[order[idx]]
                })
                .collect()
        })
        .collect();
    QuantileState::new(u, ps.params.clone())
}

/// One particle of mass `pᵢ/M` per quantile cell.
pub fn particles_from_quantile(qs: &QuantileState) -> ParticleState {
    let resolution = qs.resolution();
    let species = qs
        .u
        .iter()
        .zip(&qs.params.p)
        .map(|(row, &p)| SpeciesParticles {
            positions: row.clone(),
            masses: vec![p / resolution as f64; resolution],
        })
        .collect();
    ParticleState {
        species,
        params: qs.params.clone(),
    }
}

/// Squared W₂ cost of species `i`: `(pᵢ/M) Σₖ Δuᵢ[k]²`.
fn w2_squared(a: &QuantileState, b: &QuantileState, i: usize) -> f64 {
    let cell_mass = a.params.p[i] / a.resolution() as f64;
    cell_mass
        * a.u[i]
            .iter()
            .zip(&b.u[i])
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
}

/// The compound metric `√(Σⱼ (1/mⱼ)·W₂(μⱼᵃ, μⱼᵇ)²)` with mass-`pⱼ` transport costs.
pub fn compound_distance(a: &QuantileState, b: &QuantileState) -> Result<f64> {
    a.check_compatible(b)?;
    Ok((0..a.n())
        .map(|i| w2_squared(a, b, i) / a.params.m[i])
        .sum::<f64>()
        .sqrt())
}

fn check_species(a: &QuantileState, b: &QuantileState, i: usize) -> Result<()> {
    a.check_compatible(b)?;
    if i >= a.n() {
        return Err(Error::Usage(format!("species {i} out of range for n = {}", a.n())));
    }
    Ok(())
}

/// W₂ distance of species `i` (mass `pᵢ`).
pub fn w2_distance(a: &QuantileState, b: &QuantileState, i: usize) -> Result<f64> {
    check_species(a, b, i)?;
    Ok(w2_squared(a, b, i).sqrt())
}

/// W₁ distance of species `i` (mass `pᵢ`): `(pᵢ/M) Σₖ |Δuᵢ[k]|`.
pub fn w1_distance(a: &QuantileState, b: &QuantileState, i: usize) -> Result<f64> {
    check_species(a, b, i)?;
    let cell_mass = a.params.p[i] / a.resolution() as f64;
    Ok(cell_mass * a.u[i].iter().zip(&b.u[i]).map(|(x, y)| (x - y).abs()).sum::<f64>())
}

/// W∞ distance of species `i`: `maxₖ |Δuᵢ[k]|`.
pub fn winf_distance(a: &QuantileState, b: &QuantileState, i: usize) -> Result<f64> {
    check_species(a, b, i)?;
    Ok(a.u[i]
        .iter()
        .zip(&b.u[i])
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max))
}

/// `Σⱼ (pⱼ/mⱼ)·mean(uⱼ)`.
pub fn weighted_center_of_mass(qs: &QuantileState) -> f64 {
    let resolution = qs.resolution() as f64;
    qs.u
        .iter()
        .zip(qs.params.p.iter().zip(&qs.params.m))
        .map(|(row, (p, m))| p / m * (row.iter().sum::<f64>() / resolution))
        .sum()
}

/// `M₂(μᵢ) = (pᵢ/M) Σₖ uᵢ[k]²` per species.
pub fn second_moments(qs: &QuantileState) -> Vec<f64> {
    let resolution = qs.resolution() as f64;
    qs.u
        .iter()
        .zip(&qs.params.p)
        .map(|(row, p)| p / resolution * row.iter().map(|x| x * x).sum::<f64>())
        .collect()
}

/// Appends snapshot rows `t,species,cell,u` (no header).
pub fn write_quantile_rows<W: Write>(out: &mut W, t: f64, qs: &QuantileState) -> std::io::Result<()> {
    for (i, row) in qs.u.iter().enumerate() {
        for (k, v) in row.iter().enumerate() {
            writeln!(out, "{t},{i},{k},{v}")?;
        }
    }
    Ok(())
}

pub const QUANTILE_CSV_HEADER: &str = "t,species,cell,u";

/// Header `t,species,k,mass,x_1..x_d` of particle snapshots.
pub fn particle_csv_header(d: usize) -> String {
    let mut header = String::from("t,species,k,mass");
    for c in 1..=d {
        header.push_str(&format!(",x_{c}"));
    }
    header
}

/// Appends snapshot rows `t,species,k,mass,x_1..x_d` (no header).
pub fn write_particle_rows<W: Write>(out: &mut W, t: f64, ps: &ParticleState) -> std::io::Result<()> {
    for (i, sp) in ps.species.iter().enumerate() {
        for k in 0..sp.len() {
            write!(out, "{t},{i},{k},{}", sp.masses[k])?;
            for x in ps.position(i, k) {
                write!(out, ",{x}")?;
            }
            writeln!(out)?;
        }
    }
    Ok(())
}

#[derive(Deserialize)]
struct QuantileRow {
    t: f64,
    species: usize,
    cell: usize,
    u: f64,
}

/// Reads a quantile trajectory CSV (with header) back into states carrying
/// `params`. Rows of one time must be complete; times keep file order.
pub fn read_quantile_csv<R: Read>(input: R, params: &SystemParams) -> Result<Vec<(f64, QuantileState)>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let header = reader
        .headers()
        .map_err(|e| Error::config("line 1", format!("header `{QUANTILE_CSV_HEADER}` ({e})")))?;
    if header.iter().collect::<Vec<_>>().join(",") != QUANTILE_CSV_HEADER {
        return Err(Error::config("line 1", format!("header `{QUANTILE_CSV_HEADER}`")));
    }
    let mut frames: Vec<(f64, Vec<Vec<(usize, f64)>>)> = Vec::new();
    for row in reader.deserialize::<QuantileRow>() {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            Error::config(format!("line {line}"), format!("numeric fields t,species,cell,u ({e})"))
        })?;
        if row.species >= params.n() {
            return Err(Error::config(format!("t = {}", row.t), format!("species < {}", params.n())));
        }
        if frames.last().map(|f| f.0) != Some(row.t) {
            frames.push((row.t, vec![Vec::new(); params.n()]));
        }
        frames.last_mut().expect("frame pushed above").1[row.species].push((row.cell, row.u));
    }
    frames
        .into_iter()
        .map(|(t, rows)| {
            let u = rows
                .into_iter()
                .map(|mut cells| {
                    cells.sort_by_key(|c| c.0);
                    if cells.iter().enumerate().any(|(pos, c)| c.0 != pos) {
                        return Err(Error::config(format!("t = {t}"), "cells 0..M for every species"));
                    }
                    Ok(cells.into_iter().map(|c| c.1).collect())
                })
                .collect::<Result<Vec<Vec<f64>>>>()?;
            Ok((t, QuantileState::new_unordered(u, params.clone())?))
        })
        .collect()
}

impl QuantileState {
    pub(crate) fn set_center(&mut self, center: Vec<f64>) {
        self.params.center = center;
    }
}

impl ParticleState {
    pub(crate) fn set_center(&mut self, center: Vec<f64>) {
        self.params.center = center;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn qs(u: Vec<Vec<f64>>, m: Vec<f64>, p: Vec<f64>) -> QuantileState {
        QuantileState::from_values(u, m, p).unwrap()
    }

    fn particles_1d(x: Vec<f64>, w: Vec<f64>) -> ParticleState {
        ParticleState::from_particles(vec![x], vec![w], vec![1.0], 1).unwrap()
    }

    #[test]
    fn rejects_decreasing_rows_and_ragged_shapes() {
        let params = SystemParams::centered(vec![1.0], vec![1.0], 1).unwrap();
        assert!(QuantileState::new(vec![vec![1.0, 0.0]], params.clone()).is_err());
        assert!(QuantileState::new_unordered(vec![vec![1.0, 0.0]], params.clone()).is_ok());
        assert!(QuantileState::new(vec![vec![]], params.clone()).is_err());
        assert!(QuantileState::new(vec![vec![f64::NAN]], params).is_err());
        let two = SystemParams::centered(vec![1.0; 2], vec![1.0; 2], 1).unwrap();
        assert!(QuantileState::new(vec![vec![0.0], vec![0.0, 1.0]], two).is_err());
    }

    #[test]
    fn particle_masses_must_match() {
        let params = SystemParams::centered(vec![1.0], vec![2.0], 1).unwrap();
        let err = ParticleState::new(vec![vec![0.0, 1.0]], vec![vec![1.0, 0.5]], params).unwrap_err();
        assert!(err.to_string().contains("1.5"), "{err}");
    }

    #[test]
    fn quantile_from_particles_examples() {
        let one = quantile_from_particles(&particles_1d(vec![3.0], vec![0.7]), 4).unwrap();
        assert_eq!(one.species(0), &[3.0; 4]);
        let pair = quantile_from_particles(&particles_1d(vec![1.0, -1.0], vec![1.0, 1.0]), 4).unwrap();
        assert_eq!(pair.species(0), &[-1.0, -1.0, 1.0, 1.0]);
        let three = quantile_from_particles(&particles_1d(vec![2.0, 0.0, 1.0], vec![2.0, 1.0, 1.0]), 8).unwrap();
        assert_eq!(three.species(0), &[0.0, 0.0, 1.0, 1.0, 2.0, 2.0, 2.0, 2.0]);
    }

    #[test]
    fn quantile_from_particles_needs_one_dimension() {
        let ps = ParticleState::from_particles(vec![vec![0.0, 0.0]], vec![vec![1.0]], vec![1.0], 2).unwrap();
        assert!(matches!(quantile_from_particles(&ps, 4), Err(Error::Usage(_))));
    }

    #[test]
    fn particles_from_quantile_examples() {
        let ps = particles_from_quantile(&qs(vec![vec![3.0; 4]], vec![1.0], vec![1.0]));
        assert_eq!(ps.species(0).masses(), &[0.25; 4]);
        assert_eq!(ps.species(0).positions(), &[3.0; 4]);
        let ps = particles_from_quantile(&qs(vec![vec![-1.0, -1.0, 1.0, 1.0]], vec![1.0], vec![2.0]));
        assert_eq!(ps.species(0).masses(), &[0.5; 4]);
    }

    #[test]
    fn distance_examples() {
        let a = qs(vec![vec![0.0; 3]], vec![1.0], vec![1.0]);
        let b = qs(vec![vec![2.0; 3]], vec![1.0], vec![1.0]);
        assert_eq!(compound_distance(&a, &a).unwrap(), 0.0);
        assert_abs_diff_eq!(compound_distance(&a, &b).unwrap(), 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(w1_distance(&a, &b, 0).unwrap(), 2.0, epsilon = 1e-15);
        assert_eq!(winf_distance(&a, &b, 0).unwrap(), 2.0);
        assert_eq!(w1_distance(&a, &a, 0).unwrap(), 0.0);

        let c = qs(vec![vec![0.0; 2], vec![0.0; 2]], vec![1.0, 2.0], vec![1.0, 3.0]);
        let d = qs(vec![vec![1.0; 2], vec![1.0; 2]], vec![1.0, 2.0], vec![1.0, 3.0]);
        assert_abs_diff_eq!(compound_distance(&c, &d).unwrap(), 2.5f64.sqrt(), epsilon = 1e-15);

        let e = qs(vec![vec![0.0, 1.0, 2.0, 3.0]], vec![1.0], vec![1.0]);
        let f = qs(vec![vec![0.0, 1.0, 3.0, 3.0]], vec![1.0], vec![1.0]);
        assert_abs_diff_eq!(w1_distance(&e, &f, 0).unwrap(), 0.25, epsilon = 1e-15);
        assert_eq!(winf_distance(&e, &f, 0).unwrap(), 1.0);
    }

    #[test]
    fn distances_need_matching_shapes() {
        let a = qs(vec![vec![0.0; 3]], vec![1.0], vec![1.0]);
        let b = qs(vec![vec![0.0; 4]], vec![1.0], vec![1.0]);
        let c = qs(vec![vec![0.0; 3]], vec![1.0], vec![2.0]);
        assert!(matches!(compound_distance(&a, &b), Err(Error::Usage(_))));
        assert!(matches!(compound_distance(&a, &c), Err(Error::Usage(_))));
        assert!(matches!(w1_distance(&a, &a, 1), Err(Error::Usage(_))));
    }

    #[test]
    fn moment_examples() {
        let a = qs(vec![vec![5.0; 2]], vec![1.0], vec![1.0]);
        assert_eq!(weighted_center_of_mass(&a), 5.0);
        assert_eq!(second_moments(&a), vec![25.0]);
        let b = qs(vec![vec![1.0; 2], vec![3.0; 2]], vec![1.0, 2.0], vec![2.0, 2.0]);
        assert_eq!(weighted_center_of_mass(&b), 5.0);
        assert_eq!(b.params().center, vec![5.0]);
        let sym = qs(vec![vec![-2.0, -0.5, 0.5, 2.0]], vec![1.0], vec![1.0]);
        assert_eq!(weighted_center_of_mass(&sym), 0.0);
    }

    #[test]
    fn particle_center_of_mass() {
        let ps = ParticleState::from_particles(
            vec![vec![1.0, 2.0, 3.0, 4.0], vec![0.0, 2.0]],
            vec![vec![1.0, 1.0], vec![2.0]],
            vec![1.0, 2.0],
            2,
        )
        .unwrap();
        // (1/1)(1·(1,2) + 1·(3,4)) + (1/2)·2·(0,2)
        assert_eq!(ps.weighted_center_of_mass(), vec![4.0, 8.0]);
        assert_eq!(ps.params().center, vec![4.0, 8.0]);
    }

    #[test]
    fn csv_round_trip() {
        let a = qs(vec![vec![-1.0, 0.25, 3.0], vec![0.0, 0.0, 1e-17]], vec![1.0, 2.0], vec![1.0, 0.5]);
        let mut buf = Vec::new();
        writeln!(buf, "{QUANTILE_CSV_HEADER}").unwrap();
        write_quantile_rows(&mut buf, 0.0, &a).unwrap();
        write_quantile_rows(&mut buf, 0.5, &a).unwrap();
        let frames = read_quantile_csv(&buf[..], a.params()).unwrap();
        assert_eq!(frames.len(), 2);
        assert_eq!(frames[1].0, 0.5);
        assert_eq!(frames[1].1.values(), a.values());
    }

    #[test]
    fn csv_reader_rejects_bad_input() {
        let params = SystemParams::centered(vec![1.0], vec![1.0], 1).unwrap();
        assert!(read_quantile_csv(&b"x,y\n"[..], &params).is_err());
        assert!(read_quantile_csv(&b"t,species,cell,u\n0,0,1,2.0\n"[..], &params).is_err());
        assert!(read_quantile_csv(&b"t,species,cell,u\n0,3,0,2.0\n"[..], &params).is_err());
    }

    #[test]
    fn particle_csv_layout() {
        assert_eq!(particle_csv_header(2), "t,species,k,mass,x_1,x_2");
        let ps = ParticleState::from_particles(vec![vec![1.0, 2.0]], vec![vec![1.0]], vec![1.0], 2).unwrap();
        let mut buf = Vec::new();
        write_particle_rows(&mut buf, 0.5, &ps).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "0.5,0,0,1,1,2\n");
    }

    fn monotone_row(len: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-5.0..5.0f64, len).prop_map(|mut v| {
            v.sort_by(f64::total_cmp);
            v
        })
    }

    fn state_pair_triple() -> impl Strategy<Value = [QuantileState; 3]> {
        (monotone_row(6), monotone_row(6), monotone_row(6), monotone_row(6), monotone_row(6), monotone_row(6)).prop_map(
            |(a0, a1, b0, b1, c0, c1)| {
                let mk = |r0, r1| {
                    let params = SystemParams::centered(vec![1.0, 2.5], vec![0.5, 2.0], 1).unwrap();
                    QuantileState::new(vec![r0, r1], params).unwrap()
                };
                [mk(a0, a1), mk(b0, b1), mk(c0, c1)]
            },
        )
    }

    proptest! {
        #[test]
        fn compound_distance_is_a_metric([a, b, c] in state_pair_triple()) {
            let ab = compound_distance(&a, &b).unwrap();
            let ba = compound_distance(&b, &a).unwrap();
            let bc = compound_distance(&b, &c).unwrap();
            let ac = compound_distance(&a, &c).unwrap();
            prop_assert_eq!(ab, ba);
            prop_assert_eq!(compound_distance(&a, &a).unwrap(), 0.0);
            prop_assert!(ac <= ab + bc + 1e-12);
        }

        #[test]
        fn transport_distance_ordering([a, b, _c] in state_pair_triple()) {
            for i in 0..2 {
                let p = a.params().p[i];
                let winf = winf_distance(&a, &b, i).unwrap();
                let w1 = w1_distance(&a, &b, i).unwrap();
                let w2 = w2_distance(&a, &b, i).unwrap();
                prop_assert!(winf >= w1 / p - 1e-12);
                prop_assert!(p * winf * winf >= w2 * w2 - 1e-12);
            }
        }

        #[test]
        fn quantiles_of_particles_are_monotone(
            x in prop::collection::vec(-10.0..10.0f64, 1..20),
            seed in 1u32..1000,
            resolution in 1usize..40,
        ) {
            let w: Vec<f64> = (0..x.len()).map(|k| 0.1 + ((k as u32 * 7919 + seed) % 97) as f64 / 50.0).collect();
            let ps = particles_1d(x, w);
            let q = quantile_from_particles(&ps, resolution).unwrap();
            prop_assert!(q.is_monotone());
        }

        #[test]
        fn quantile_round_trip(u in monotone_row(8)) {
            let a = qs(vec![u], vec![1.0], vec![1.3]);
            let back = quantile_from_particles(&particles_from_quantile(&a), 8).unwrap();
            prop_assert_eq!(back.values(), a.values());
        }
    }
}
