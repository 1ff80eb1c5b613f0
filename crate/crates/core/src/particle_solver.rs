//! The particle ODE
//!
//! ```text
//! d/dt xᵢᵏ = −mᵢ Σⱼ Σₗ pⱼˡ ∇Wᵢⱼ(xᵢᵏ − xⱼˡ)
//! ```
//!
//! which is the exact gradient flow for atomic initial data, in any dimension.
//! It is the gradient flow of the discrete energy 𝒲_d with respect to the
//! labelled weighted distance 𝐝, i.e. `ẋᵢᵏ = −(mᵢ/pᵢᵏ) ∂𝒲_d/∂xᵢᵏ`.

use rayon::prelude::*;
use serde::Serialize;

use crate::measures::ParticleState;
use crate::potentials::PotentialMatrix;
use crate::quantile_solver::{integrate, stability_bound, SolverConfig};
use crate::{Error, Result};

fn check_shapes(ps: &ParticleState, pm: &PotentialMatrix) -> Result<()> {
    if ps.n() != pm.n() {
        return Err(Error::Usage(format!(
            "state has {} species, potential has {}",
            ps.n(),
            pm.n()
        )));
    }
    Ok(())
}

/// Velocities for flat per-species positions `x` with the masses and
/// mobilities of `ps`.
fn velocities(x: &[Vec<f64>], ps: &ParticleState, pm: &PotentialMatrix) -> Result<Vec<Vec<f64>>> {
    let d = ps.dim();
    let n = ps.n();
    let m = &ps.params().m;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let count = ps.species(i).len();
        let v: Vec<Vec<f64>> = (0..count)
            .into_par_iter()
            .with_min_len(4)
            .map(|k| {
                let xi = &x[i][k * d..(k + 1) * d];
                let mut acc = vec![0.0; d];
                let mut z = vec![0.0; d];
                let mut g = vec![0.0; d];
                for j in 0..n {
                    let w = pm.entry(i, j);
                    for (l, mass) in ps.species(j).masses().iter().enumerate() {
                        let xj = &x[j][l * d..(l + 1) * d];
                        for c in 0..d {
                            z[c] = xi[c] - xj[c];
                        }
                        w.grad_vec(&z, &mut g);
                        for c in 0..d {
                            acc[c] += mass * g[c];
                        }
                    }
                }
                acc.iter_mut().for_each(|a| *a *= -m[i]);
                acc
            })
            .collect();
        let flat: Vec<f64> = v.into_iter().flatten().collect();
        if let Some(pos) = flat.iter().position(|c| !c.is_finite()) {
            return Err(Error::numeric(
                "non-finite particle velocity",
                format!("species {i}, particle {}", pos / d),
            ));
        }
        out.push(flat);
    }
    Ok(out)
}

/// Per-particle velocities, flat row-major per species. Cost `O(N²d)`.
pub fn particle_rhs(ps: &ParticleState, pm: &PotentialMatrix) -> Result<Vec<Vec<f64>>> {
    check_shapes(ps, pm)?;
    let x: Vec<Vec<f64>> = ps.all_species().iter().map(|s| s.positions().to_vec()).collect();
    velocities(&x, ps, pm)
}

/// `𝒲_d(x) = ½ Σᵢ Σⱼ Σₖ Σₗ pᵢᵏ pⱼˡ Wᵢⱼ(|xᵢᵏ − xⱼˡ|)`.
pub fn discrete_energy(ps: &ParticleState, pm: &PotentialMatrix) -> f64 {
    let d = ps.dim();
    let n = ps.n();
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            let w = pm.entry(i, j);
            let si = ps.species(i);
            let sj = ps.species(j);
            let sum: f64 = (0..si.len())
                .into_par_iter()
                .map(|k| {
                    let xi = ps.position(i, k);
                    let inner: f64 = (0..sj.len())
                        .map(|l| {
                            let xj = ps.position(j, l);
                            let z = if d == 1 {
                                xi[0] - xj[0]
                            } else {
                                xi.iter().zip(xj).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
                            };
                            sj.masses()[l] * w.eval(z)
                        })
                        .sum();
                    si.masses()[k] * inner
                })
                .sum();
            total += sum;
        }
    }
    0.5 * total
}

/// Labelled distance `𝐝(x, y) = √(Σᵢ (1/mᵢ) Σₖ pᵢᵏ |xᵢᵏ − yᵢᵏ|²)`. This pairs
/// particles by index, not by optimal transport.
pub fn discrete_metric(a: &ParticleState, b: &ParticleState) -> Result<f64> {
    if !a.same_layout(b) {
        return Err(Error::Usage(
            "discrete metric needs identical particle counts, masses and mobilities".into(),
        ));
    }
    let d = a.dim();
    let mut total = 0.0;
    for i in 0..a.n() {
        let (sa, sb) = (a.species(i), b.species(i));
        let mut s = 0.0;
        for (k, w) in sa.masses().iter().enumerate() {
            let dist2: f64 = sa.positions()[k * d..(k + 1) * d]
                .iter()
                .zip(&sb.positions()[k * d..(k + 1) * d])
                .map(|(x, y)| (x - y) * (x - y))
                .sum();
            s += w * dist2;
        }
        total += s / a.params().m[i];
    }
    Ok(total.sqrt())
}

#[derive(Debug, Serialize)]
pub struct ParticleTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<ParticleState>,
    pub energies: Vec<f64>,
    pub dt: f64,
    pub stability_bound: f64,
    #[serde(skip)]
    pub failure: Option<Error>,
}

impl ParticleTrajectory {
    pub fn final_state(&self) -> &ParticleState {
        self.states.last().expect("trajectory holds the initial state")
    }
}

fn coordinate_spread(ps: &ParticleState) -> f64 {
    let d = ps.dim();
    (0..d)
        .map(|c| {
            let (lo, hi) = ps
                .all_species()
                .iter()
                .flat_map(|s| s.positions().iter().skip(c).step_by(d))
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
            (hi - lo) * (hi - lo)
        })
        .sum::<f64>()
        .sqrt()
}

/// Integrates the particle system with the same step policy as the quantile
/// solver. Repair settings do not apply to particles.
pub fn run_particles(ps0: &ParticleState, pm: &PotentialMatrix, cfg: &SolverConfig) -> Result<ParticleTrajectory> {
    cfg.check()?;
    check_shapes(ps0, pm)?;
    let bound = stability_bound(coordinate_spread(ps0), pm, ps0.params(), cfg.cfl_safety);
    let dt = match cfg.dt {
        Some(dt) => dt,
        None if bound.is_finite() => bound.min(cfg.t_end.max(f64::MIN_POSITIVE)),
        None => cfg.t_end.max(1.0),
    };
    let steps = cfg.schedule(dt);
    let mut traj = ParticleTrajectory {
        times: vec![0.0],
        states: vec![ps0.clone()],
        energies: vec![discrete_energy(ps0, pm)],
        dt,
        stability_bound: bound,
        failure: None,
    };
    let mut current = ps0.clone();
    let mut x: Vec<Vec<f64>> = ps0.all_species().iter().map(|s| s.positions().to_vec()).collect();
    for s in 1..=steps {
        let t_prev = (s - 1) as f64 * dt;
        let (t, h) = if s == steps { (cfg.t_end, cfg.t_end - t_prev) } else { (s as f64 * dt, dt) };
        let next = integrate(&x, h, cfg.scheme, |y| velocities(y, ps0, pm)).and_then(|next| {
            match next.iter().flatten().position(|v| !v.is_finite()) {
                Some(_) => Err(Error::numeric("non-finite particle position", format!("t = {t}"))),
                None => Ok(next),
            }
        });
        match next {
            Ok(next) => {
                x = next;
                for (sp, xi) in current.species_mut().iter_mut().zip(&x) {
                    sp.positions_mut().copy_from_slice(xi);
                }
                if s % cfg.record_every == 0 || s == steps {
                    traj.times.push(t);
                    traj.energies.push(discrete_energy(&current, pm));
                    traj.states.push(current.clone());
                }
            }
            Err(e) => {
                if traj.times.last() != Some(&t_prev) {
                    traj.times.push(t_prev);
                    traj.energies.push(discrete_energy(&current, pm));
                    traj.states.push(current.clone());
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
    use crate::diagnostics;
    use crate::measures::{particles_from_quantile, QuantileState};
    use crate::potentials::ScalarPotential;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn one_species(x: Vec<f64>, w: Vec<f64>, d: usize) -> ParticleState {
        ParticleState::from_particles(vec![x], vec![w], vec![1.0], d).unwrap()
    }

    #[test]
    fn single_particle_is_stationary() {
        let pm = PotentialMatrix::scalar(ScalarPotential::quadratic(3.0), 3.0);
        let ps = one_species(vec![0.4, -2.0], vec![1.0], 2);
        assert_eq!(particle_rhs(&ps, &pm).unwrap(), vec![vec![0.0, 0.0]]);
        let cfg = SolverConfig { dt: Some(0.1), t_end: 1.0, ..SolverConfig::default() };
        let traj = run_particles(&ps, &pm, &cfg).unwrap();
        assert_eq!(traj.final_state().position(0, 0), &[0.4, -2.0]);
    }

    #[test]
    fn two_particle_velocities() {
        let pm = PotentialMatrix::scalar(ScalarPotential::quadratic(1.0), 1.0);
        let ps = one_species(vec![-1.0, 1.0], vec![1.0, 1.0], 1);
        assert_eq!(particle_rhs(&ps, &pm).unwrap(), vec![vec![2.0, -2.0]]);
    }

    #[test]
    fn rotation_equivariance() {
        let pm = PotentialMatrix::scalar(ScalarPotential::morse(1.0, 1.0, 0.8, 0.3, Some(0.05)).unwrap(), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x: Vec<f64> = (0..10).map(|_| rng.random_range(-2.0..2.0)).collect();
        let w = vec![0.2; 5];
        let theta: f64 = 0.83;
        let (c, s) = (theta.cos(), theta.sin());
        let rotate = |v: &[f64]| -> Vec<f64> { v.chunks(2).flat_map(|p| [c * p[0] - s * p[1], s * p[0] + c * p[1]]).collect() };
        let v = particle_rhs(&one_species(x.clone(), w.clone(), 2), &pm).unwrap();
        let v_rot = particle_rhs(&one_species(rotate(&x), w, 2), &pm).unwrap();
        for (a, b) in rotate(&v[0]).iter().zip(&v_rot[0]) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn energy_examples() {
        let pm = PotentialMatrix::scalar(ScalarPotential::quadratic(1.0), 1.0);
        assert_eq!(discrete_energy(&one_species(vec![-1.0, 1.0], vec![1.0, 1.0], 1), &pm), 2.0);
        let dw = PotentialMatrix::scalar(ScalarPotential::gaussian_ar(1.0, 1.0, 0.0, 1.0).unwrap(), 0.0);
        assert_eq!(discrete_energy(&one_species(vec![3.0], vec![2.0], 1), &dw), 0.5 * 4.0 * -1.0);
    }

    #[test]
    fn energy_matches_quantile_energy() {
        let pm = PotentialMatrix::scalar(ScalarPotential::double_well(0.3, 1.0), 0.0);
        let qs = QuantileState::from_values(vec![vec![-1.2, -0.4, 0.0, 0.3, 1.9]], vec![1.0], vec![1.7]).unwrap();
        let ps = particles_from_quantile(&qs);
        let a = discrete_energy(&ps, &pm);
        let b = diagnostics::energy(&qs, &pm);
        assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0), "{a} vs {b}");
    }

    #[test]
    fn metric_examples() {
        let a = one_species(vec![0.0], vec![1.0], 1);
        let b = one_species(vec![2.0], vec![1.0], 1);
        assert_eq!(discrete_metric(&a, &a).unwrap(), 0.0);
        assert_eq!(discrete_metric(&a, &b).unwrap(), 2.0);
        let c = one_species(vec![0.0, 1.0], vec![0.5, 0.5], 1);
        let swapped = one_species(vec![1.0, 0.0], vec![0.5, 0.5], 1);
        assert!(discrete_metric(&c, &swapped).unwrap() > 0.0);
        assert!(matches!(discrete_metric(&a, &c), Err(Error::Usage(_))));
    }

    #[test]
    fn pair_separation_decays_exponentially() {
        let (kappa, mass) = (1.5, 0.8);
        let pm = PotentialMatrix::scalar(ScalarPotential::quadratic(kappa), kappa);
        let ps = one_species(vec![-1.0, 2.0], vec![mass / 2.0, mass / 2.0], 1);
        let cfg = SolverConfig { dt: Some(1e-3), t_end: 1.0, ..SolverConfig::default() };
        let traj = run_particles(&ps, &pm, &cfg).unwrap();
        for (t, s) in traj.times.iter().zip(&traj.states) {
            let sep = s.position(0, 1)[0] - s.position(0, 0)[0];
            assert_abs_diff_eq!(sep, 3.0 * (-kappa * mass * t).exp(), epsilon = 1e-11);
        }
    }

    #[test]
    fn convex_pair_collapses_to_ground_position() {
        let q = |a| ScalarPotential::quadratic(a);
        let pm = PotentialMatrix::new(vec![vec![q(2.0), q(1.0)], vec![q(1.0), q(2.0)]], vec![vec![2.0, 1.0], vec![1.0, 2.0]])
            .unwrap();
        let ps = ParticleState::from_particles(
            vec![vec![-1.0, 0.5, 2.0], vec![3.0, 4.0]],
            vec![vec![0.2, 0.3, 0.5], vec![1.0, 0.5]],
            vec![1.0, 2.0],
            1,
        )
        .unwrap();
        let x_inf = ps.params().center[0] / ps.params().weight_sum();
        let cfg = SolverConfig { dt: Some(0.01), t_end: 15.0, record_every: 100, ..SolverConfig::default() };
        let end = run_particles(&ps, &pm, &cfg).unwrap();
        for sp in end.final_state().all_species() {
            for x in sp.positions() {
                assert_abs_diff_eq!(*x, x_inf, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn energy_decreases_along_trajectory() {
        let pm = PotentialMatrix::scalar(ScalarPotential::morse(1.0, 1.0, 1.5, 0.3, Some(0.05)).unwrap(), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x: Vec<f64> = (0..24).map(|_| rng.random_range(-1.0..1.0)).collect();
        let ps = one_species(x, vec![1.0 / 12.0; 12], 2);
        let cfg = SolverConfig { t_end: 2.0, record_every: 1, ..SolverConfig::default() };
        let traj = run_particles(&ps, &pm, &cfg).unwrap();
        assert!(traj.failure.is_none());
        for w in traj.energies.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "{} > {}", w[1], w[0]);
        }
    }
}
