//! Scalar interaction kernels and the symmetric matrix of kernels coupling the
//! species.
//!
//! Every kernel is an even C¹ function of a signed scalar displacement. Even
//! symmetry is exact in floating point: kernels are evaluated through `|z|` or
//! through even powers of `z`, and gradients through odd expressions, so
//! `eval(z) == eval(-z)` and `grad(z) == -grad(-z)` hold bit for bit.
//!
//! In more than one dimension a kernel acts radially: the gradient at a vector
//! displacement `z` is `grad(|z|) · z/|z|`, and zero at the origin.

use serde::{Deserialize, Serialize};

use crate::{is_square, is_symmetric, Error, Matrix, Result};

/// Even interaction kernel of one scalar displacement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "KernelSpec", into = "KernelSpec")]
pub enum ScalarPotential {
    /// `½·a·z²`
    Quadratic { a: f64 },
    /// `a·|z|^q` with `q > 1`
    Power { q: f64, a: f64 },
    /// `−Ca·e^{−r/la} + Cr·e^{−r/lr}` with the smoothed radius `r = √(z²+ε²)`.
    Morse {
        ca: f64,
        la: f64,
        cr: f64,
        lr: f64,
        eps: f64,
    },
    /// `−Ca·e^{−z²/la} + Cr·e^{−z²/lr}`
    GaussianAR { ca: f64, la: f64, cr: f64, lr: f64 },
    /// `a·z⁴ − b·z²`
    DoubleWell { a: f64, b: f64 },
    Zero,
    Tabulated(Tabulated),
}

/// Cubic Hermite profile through `(value, derivative)` knots on `z ≥ 0`,
/// reflected to negative arguments. Beyond the last knot the profile continues
/// linearly with the last derivative.
#[derive(Debug, Clone, PartialEq)]
pub struct Tabulated {
    knots: Vec<f64>,
    values: Vec<f64>,
    derivs: Vec<f64>,
}

impl Tabulated {
    pub fn new(knots: Vec<f64>, values: Vec<f64>, derivs: Vec<f64>) -> Result<Self> {
        if knots.len() < 2 {
            return Err(Error::Domain("tabulated potential needs at least two knots".into()));
        }
        if values.len() != knots.len() || derivs.len() != knots.len() {
            return Err(Error::Domain(format!(
                "tabulated potential: {} knots but {} values and {} derivs",
                knots.len(),
                values.len(),
                derivs.len()
            )));
        }
        if knots.iter().chain(&values).chain(&derivs).any(|v| !v.is_finite()) {
            return Err(Error::Domain("tabulated potential has non-finite entries".into()));
        }
        if knots[0] != 0.0 {
            return Err(Error::Domain(
                "tabulated potential: first knot must be 0 (only z ≥ 0 is stored)".into(),
            ));
        }
        if derivs[0] != 0.0 {
            return Err(Error::Domain(
                "tabulated potential: derivative at 0 must vanish for an even C¹ kernel".into(),
            ));
        }
        if knots.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Domain("tabulated potential: knots must be strictly increasing".into()));
        }
        Ok(Tabulated { knots, values, derivs })
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn derivs(&self) -> &[f64] {
        &self.derivs
    }

    fn last_knot(&self) -> f64 {
        self.knots[self.knots.len() - 1]
    }

    /// Profile value and derivative at `r ≥ 0`.
    fn profile(&self, r: f64) -> (f64, f64) {
        let last = self.knots.len() - 1;
        if r >= self.knots[last] {
            let d = self.derivs[last];
            return (self.values[last] + d * (r - self.knots[last]), d);
        }
        let seg = self.knots.partition_point(|&k| k <= r).saturating_sub(1).min(last - 1);
        let (x0, x1) = (self.knots[seg], self.knots[seg + 1]);
        let h = x1 - x0;
        let t = (r - x0) / h;
        let (y0, y1) = (self.values[seg], self.values[seg + 1]);
        let (d0, d1) = (self.derivs[seg] * h, self.derivs[seg + 1] * h);
        let t2 = t * t;
        let t3 = t2 * t;
        let value = (2.0 * t3 - 3.0 * t2 + 1.0) * y0
            + (t3 - 2.0 * t2 + t) * d0
            + (-2.0 * t3 + 3.0 * t2) * y1
            + (t3 - t2) * d1;
        let slope = ((6.0 * t2 - 6.0 * t) * y0
            + (3.0 * t2 - 4.0 * t + 1.0) * d0
            + (-6.0 * t2 + 6.0 * t) * y1
            + (3.0 * t2 - 2.0 * t) * d1)
            / h;
        (value, slope)
    }
}

impl ScalarPotential {
    pub fn quadratic(a: f64) -> Self {
        ScalarPotential::Quadratic { a }
    }

    pub fn power(q: f64, a: f64) -> Result<Self> {
        if !(q > 1.0) || !q.is_finite() {
            return Err(Error::Domain(format!("power potential needs exponent q > 1, got {q}")));
        }
        Ok(ScalarPotential::Power { q, a })
    }

    /// Morse kernel. The bare `|z|` profile has a kink at the origin, so a
    /// positive smoothing length `eps` is mandatory.
    pub fn morse(ca: f64, la: f64, cr: f64, lr: f64, eps: Option<f64>) -> Result<Self> {
        let eps = match eps {
            Some(e) if e > 0.0 && e.is_finite() => e,
            Some(e) => {
                return Err(Error::Domain(format!("morse smoothing eps must be positive, got {e}")))
            }
            None => {
                return Err(Error::Domain(
                    "morse potential is not C¹ at the origin; supply a smoothing eps > 0".into(),
                ))
            }
        };
        if !(la > 0.0 && lr > 0.0) {
            return Err(Error::Domain("morse length scales must be positive".into()));
        }
        Ok(ScalarPotential::Morse { ca, la, cr, lr, eps })
    }

    pub fn gaussian_ar(ca: f64, la: f64, cr: f64, lr: f64) -> Result<Self> {
        if !(la > 0.0 && lr > 0.0) {
            return Err(Error::Domain("gaussian length scales must be positive".into()));
        }
        Ok(ScalarPotential::GaussianAR { ca, la, cr, lr })
    }

    pub fn double_well(a: f64, b: f64) -> Self {
        ScalarPotential::DoubleWell { a, b }
    }

    pub fn tabulated(knots: Vec<f64>, values: Vec<f64>, derivs: Vec<f64>) -> Result<Self> {
        Tabulated::new(knots, values, derivs).map(ScalarPotential::Tabulated)
    }

    /// `W(z)`. No finiteness check; see [`PotentialMatrix::eval`].
    pub fn eval(&self, z: f64) -> f64 {
        match *self {
            ScalarPotential::Quadratic { a } => 0.5 * a * (z * z),
            ScalarPotential::Power { q, a } => a * z.abs().powf(q),
            ScalarPotential::Morse { ca, la, cr, lr, eps } => {
                let r = (z * z + eps * eps).sqrt();
                -ca * (-r / la).exp() + cr * (-r / lr).exp()
            }
            ScalarPotential::GaussianAR { ca, la, cr, lr } => {
                let z2 = z * z;
                -ca * (-z2 / la).exp() + cr * (-z2 / lr).exp()
            }
            ScalarPotential::DoubleWell { a, b } => {
                let z2 = z * z;
                a * (z2 * z2) - b * z2
            }
            ScalarPotential::Zero => 0.0,
            ScalarPotential::Tabulated(ref t) => t.profile(z.abs()).0,
        }
    }

    /// `W′(z)`; odd in `z` and zero at the origin.
    #[inline]
    pub fn grad(&self, z: f64) -> f64 {
        match *self {
            ScalarPotential::Quadratic { a } => a * z,
            ScalarPotential::Power { q, a } => power_grad(q, a, z),
            ScalarPotential::Morse { ca, la, cr, lr, eps } => morse_grad(ca, la, cr, lr, eps, z),
            ScalarPotential::GaussianAR { ca, la, cr, lr } => gaussian_grad(ca, la, cr, lr, z),
            ScalarPotential::DoubleWell { a, b } => z * (4.0 * a * (z * z) - 2.0 * b),
            ScalarPotential::Zero => 0.0,
            ScalarPotential::Tabulated(ref t) => {
                let g = t.profile(z.abs()).1;
                if z < 0.0 {
                    -g
                } else {
                    g
                }
            }
        }
    }

    /// `Σₗ W′(x − pointsₗ)`, with the kind dispatch hoisted out of the loop.
    pub fn grad_sum(&self, x: f64, points: &[f64]) -> f64 {
        match *self {
            ScalarPotential::Quadratic { a } => points.iter().map(|&p| a * (x - p)).sum(),
            ScalarPotential::Power { q, a } => points.iter().map(|&p| power_grad(q, a, x - p)).sum(),
            ScalarPotential::Morse { ca, la, cr, lr, eps } => points
                .iter()
                .map(|&p| morse_grad(ca, la, cr, lr, eps, x - p))
                .sum(),
            ScalarPotential::GaussianAR { ca, la, cr, lr } => points
                .iter()
                .map(|&p| gaussian_grad(ca, la, cr, lr, x - p))
                .sum(),
            ScalarPotential::DoubleWell { a, b } => points
                .iter()
                .map(|&p| {
                    let z = x - p;
                    z * (4.0 * a * (z * z) - 2.0 * b)
                })
                .sum(),
            ScalarPotential::Zero => 0.0,
            ScalarPotential::Tabulated(_) => points.iter().map(|&p| self.grad(x - p)).sum(),
        }
    }

    /// `Σₗ W(x − pointsₗ)`.
    pub fn eval_sum(&self, x: f64, points: &[f64]) -> f64 {
        match self {
            ScalarPotential::Zero => 0.0,
            _ => points.iter().map(|&p| self.eval(x - p)).sum(),
        }
    }

    /// Radial gradient at a vector displacement: `W′(|z|)·z/|z|`, zero at the origin.
    /// Written into `out`, which must have the length of `z`.
    pub fn grad_vec(&self, z: &[f64], out: &mut [f64]) {
        if let [z0] = z {
            out[0] = self.grad(*z0);
            return;
        }
        let r = z.iter().map(|c| c * c).sum::<f64>().sqrt();
        if r == 0.0 {
            out.iter_mut().for_each(|o| *o = 0.0);
            return;
        }
        let scale = self.grad(r) / r;
        for (o, c) in out.iter_mut().zip(z) {
            *o = scale * c;
        }
    }

    /// Whether `W′ ≡ 0` on all of ℝ. Analytic kinds are decided from their
    /// coefficients; tabulated kernels by dense sampling.
    pub fn is_gradient_identically_zero(&self) -> bool {
        match self {
            ScalarPotential::Tabulated(t) => {
                let hi = 2.0 * t.last_knot() + 1.0;
                tabulated_gradient_vanishes(t, 0.0, hi)
            }
            _ => self.structurally_flat(),
        }
    }

    /// Whether `W′ ≡ 0` on `(radius, ∞)`.
    pub fn gradient_vanishes_beyond(&self, radius: f64) -> bool {
        match self {
            ScalarPotential::Tabulated(t) => {
                if t.derivs[t.derivs.len() - 1] != 0.0 {
                    return false;
                }
                let lo = radius.max(0.0);
                let hi = t.last_knot().max(lo) + 1.0;
                tabulated_gradient_vanishes(t, lo, hi)
            }
            _ => self.structurally_flat(),
        }
    }

    fn structurally_flat(&self) -> bool {
        match *self {
            ScalarPotential::Quadratic { a } | ScalarPotential::Power { a, .. } => a == 0.0,
            ScalarPotential::Morse { ca, cr, .. } | ScalarPotential::GaussianAR { ca, cr, .. } => {
                ca == 0.0 && cr == 0.0
            }
            ScalarPotential::DoubleWell { a, b } => a == 0.0 && b == 0.0,
            ScalarPotential::Zero => true,
            ScalarPotential::Tabulated(_) => unreachable!("tabulated kernels are sampled"),
        }
    }
}

fn tabulated_gradient_vanishes(t: &Tabulated, lo: f64, hi: f64) -> bool {
    const SAMPLES: usize = 1001;
    let step = (hi - lo) / (SAMPLES - 1) as f64;
    (0..SAMPLES)
        .map(|s| lo + s as f64 * step)
        .filter(|&r| r > lo || lo == 0.0)
        .all(|r| t.profile(r).1 == 0.0)
}

#[inline]
fn power_grad(q: f64, a: f64, z: f64) -> f64 {
    let g = a * q * z.abs().powf(q - 1.0);
    if z < 0.0 {
        -g
    } else {
        g
    }
}

#[inline]
fn morse_grad(ca: f64, la: f64, cr: f64, lr: f64, eps: f64, z: f64) -> f64 {
    let r = (z * z + eps * eps).sqrt();
    z / r * (ca / la * (-r / la).exp() - cr / lr * (-r / lr).exp())
}

#[inline]
fn gaussian_grad(ca: f64, la: f64, cr: f64, lr: f64, z: f64) -> f64 {
    let z2 = z * z;
    2.0 * z * (ca / la * (-z2 / la).exp() - cr / lr * (-z2 / lr).exp())
}

fn sample_grid(interval: (f64, f64), samples: usize) -> impl Iterator<Item = f64> {
    let (lo, hi) = interval;
    let step = (hi - lo) / (samples.max(2) - 1) as f64;
    (0..samples).map(move |s| lo + s as f64 * step)
}

/// Smallest second difference of `W` on a uniform grid of `interval`: a
/// numerical estimate of the best semiconvexity modulus κ there.
pub fn estimate_semiconvexity(p: &ScalarPotential, interval: (f64, f64), samples: usize) -> f64 {
    semiconvexity_witness(p, interval, samples).0
}

/// Like [`estimate_semiconvexity`], also returning the grid point where the
/// minimum is attained.
pub fn semiconvexity_witness(p: &ScalarPotential, interval: (f64, f64), samples: usize) -> (f64, f64) {
    let (lo, hi) = interval;
    assert!(lo < hi && samples >= 3, "need lo < hi and at least 3 samples");
    let h = (hi - lo) / (samples - 1) as f64;
    let values: Vec<f64> = sample_grid(interval, samples).map(|z| p.eval(z)).collect();
    let mut best = (f64::INFINITY, lo);
    for s in 1..samples - 1 {
        let curvature = (values[s - 1] - 2.0 * values[s] + values[s + 1]) / (h * h);
        if curvature < best.0 {
            best = (curvature, lo + s as f64 * h);
        }
    }
    best
}

/// Growth constant `C̄` with `|W′(z)| ≤ C̄(|z| + 1)` on `interval`.
///
/// For a quadratic kernel the global constant `|a|` is returned, which is
/// valid on every interval. Other kinds use the largest sampled ratio.
pub fn estimate_growth_bound(p: &ScalarPotential, interval: (f64, f64), samples: usize) -> f64 {
    if let ScalarPotential::Quadratic { a } = *p {
        return a.abs();
    }
    sample_grid(interval, samples)
        .map(|z| p.grad(z).abs() / (z.abs() + 1.0))
        .fold(0.0, f64::max)
}

/// Largest difference quotient of `W′` between neighbouring grid points: an
/// estimate of the Lipschitz constant of the gradient on `interval`.
pub fn estimate_gradient_lipschitz(p: &ScalarPotential, interval: (f64, f64), samples: usize) -> f64 {
    let (lo, hi) = interval;
    assert!(lo < hi && samples >= 2, "need lo < hi and at least 2 samples");
    let h = (hi - lo) / (samples - 1) as f64;
    let grads: Vec<f64> = sample_grid(interval, samples).map(|z| p.grad(z)).collect();
    grads
        .windows(2)
        .map(|w| (w[1] - w[0]).abs() / h)
        .fold(0.0, f64::max)
}

/// Tail-convexity data declared for the confinement criterion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfiningSpec {
    pub radius: f64,
    /// `Cᵢⱼ`: semiconvexity moduli of the kernels on `(radius, ∞)`.
    pub c: Matrix,
}

/// The symmetric `n×n` matrix of kernels with declared semiconvexity moduli.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PotentialMatrixSpec")]
pub struct PotentialMatrix {
    n: usize,
    entries: Vec<Vec<ScalarPotential>>,
    kappa: Matrix,
    #[serde(skip_serializing_if = "Option::is_none")]
    growth: Option<Matrix>,
    #[serde(skip_serializing_if = "Option::is_none")]
    confining: Option<ConfiningSpec>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PotentialMatrixSpec {
    n: usize,
    entries: Vec<Vec<ScalarPotential>>,
    kappa: Matrix,
    #[serde(default)]
    growth: Option<Matrix>,
    #[serde(default)]
    confining: Option<ConfiningSpec>,
}

impl TryFrom<PotentialMatrixSpec> for PotentialMatrix {
    type Error = Error;

    fn try_from(spec: PotentialMatrixSpec) -> Result<Self> {
        let pm = PotentialMatrix::new(spec.entries, spec.kappa)?;
        if pm.n != spec.n {
            return Err(Error::Domain(format!(
                "declared n = {} but entries are {}×{}",
                spec.n, pm.n, pm.n
            )));
        }
        let pm = match spec.growth {
            Some(g) => pm.with_growth(g)?,
            None => pm,
        };
        match spec.confining {
            Some(c) => pm.with_confining(c),
            None => Ok(pm),
        }
    }
}

impl PotentialMatrix {
    /// Checks shapes only. Symmetry of the entries and of κ is reported by
    /// [`validate`] and enforced where an operation depends on it.
    pub fn new(entries: Vec<Vec<ScalarPotential>>, kappa: Matrix) -> Result<Self> {
        let n = entries.len();
        if n == 0 {
            return Err(Error::Domain("potential matrix needs at least one species".into()));
        }
        if entries.iter().any(|row| row.len() != n) {
            return Err(Error::Domain("potential entries must form a square matrix".into()));
        }
        if !is_square(&kappa, n) {
            return Err(Error::Domain(format!("kappa must be {n}×{n}")));
        }
        if kappa.iter().flatten().any(|k| !k.is_finite()) {
            return Err(Error::Domain("kappa has non-finite entries".into()));
        }
        Ok(PotentialMatrix {
            n,
            entries,
            kappa,
            growth: None,
            confining: None,
        })
    }

    /// Single-species convenience constructor.
    pub fn scalar(p: ScalarPotential, kappa: f64) -> Self {
        PotentialMatrix {
            n: 1,
            entries: vec![vec![p]],
            kappa: vec![vec![kappa]],
            growth: None,
            confining: None,
        }
    }

    pub fn with_growth(mut self, growth: Matrix) -> Result<Self> {
        if !is_square(&growth, self.n) {
            return Err(Error::Domain(format!("growth must be {n}×{n}", n = self.n)));
        }
        self.growth = Some(growth);
        Ok(self)
    }

    pub fn with_confining(mut self, spec: ConfiningSpec) -> Result<Self> {
        if !(spec.radius > 0.0) {
            return Err(Error::Domain("confining radius must be positive".into()));
        }
        if !is_square(&spec.c, self.n) {
            return Err(Error::Domain(format!("confining C must be {n}×{n}", n = self.n)));
        }
        self.confining = Some(spec);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn entry(&self, i: usize, j: usize) -> &ScalarPotential {
        &self.entries[i][j]
    }

    pub fn entries(&self) -> &[Vec<ScalarPotential>] {
        &self.entries
    }

    pub fn kappa(&self) -> &Matrix {
        &self.kappa
    }

    pub fn growth(&self) -> Option<&Matrix> {
        self.growth.as_ref()
    }

    pub fn confining(&self) -> Option<&ConfiningSpec> {
        self.confining.as_ref()
    }

    fn check_args(&self, i: usize, j: usize, z: f64) -> Result<()> {
        if i >= self.n || j >= self.n {
            return Err(Error::Usage(format!(
                "species index ({i}, {j}) out of range for n = {}",
                self.n
            )));
        }
        if !z.is_finite() {
            return Err(Error::Domain(format!("displacement must be finite, got {z}")));
        }
        Ok(())
    }

    /// `Wᵢⱼ(z)`.
    pub fn eval(&self, i: usize, j: usize, z: f64) -> Result<f64> {
        self.check_args(i, j, z)?;
        Ok(self.entries[i][j].eval(z))
    }

    /// `W′ᵢⱼ(z)`.
    pub fn grad(&self, i: usize, j: usize, z: f64) -> Result<f64> {
        self.check_args(i, j, z)?;
        Ok(self.entries[i][j].grad(z))
    }
}

/// Standing assumption a validation finding refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Assumption {
    /// Symmetric matrix of kernels.
    W1,
    /// C¹ kernels (gradient consistent with values, zero at the origin).
    W2,
    /// Even kernels.
    W3,
    /// Quadratic growth bound.
    W4,
    /// Declared semiconvexity moduli.
    W5,
}

#[derive(Debug, Clone, Serialize)]
pub struct Finding {
    pub assumption: Assumption,
    pub i: usize,
    pub j: usize,
    /// Worst offending displacement, when the check is numerical.
    pub witness: Option<f64>,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub all_passed: bool,
    pub violations: Vec<Finding>,
    /// Informational: declared κ well below the sampled modulus, and the
    /// sampled modulus estimates themselves.
    pub notes: Vec<String>,
}

impl ValidationReport {
    pub fn flags(&self, assumption: Assumption) -> bool {
        self.violations.iter().any(|v| v.assumption == assumption)
    }
}

/// Check (W1)–(W5) for every entry: structural symmetry exactly, the rest on a
/// uniform grid of `interval`. Never fails; violations are report entries.
pub fn validate(pm: &PotentialMatrix, interval: (f64, f64), samples: usize) -> ValidationReport {
    let samples = samples.max(3);
    let mut violations = Vec::new();
    let mut notes = Vec::new();
    let n = pm.n;

    for i in 0..n {
        for j in (i + 1)..n {
            if pm.entries[i][j] != pm.entries[j][i] {
                violations.push(Finding {
                    assumption: Assumption::W1,
                    i,
                    j,
                    witness: None,
                    detail: format!("entry ({i},{j}) differs from entry ({j},{i})"),
                });
            }
            if pm.kappa[i][j] != pm.kappa[j][i] {
                violations.push(Finding {
                    assumption: Assumption::W5,
                    i,
                    j,
                    witness: None,
                    detail: format!(
                        "kappa not symmetric: κ[{i}][{j}] = {} vs κ[{j}][{i}] = {}",
                        pm.kappa[i][j], pm.kappa[j][i]
                    ),
                });
            }
        }
    }

    let grid: Vec<f64> = sample_grid(interval, samples).collect();
    let h_fd = 1e-5;
    for i in 0..n {
        for j in 0..n {
            let w = &pm.entries[i][j];

            if w.grad(0.0) != 0.0 {
                violations.push(Finding {
                    assumption: Assumption::W2,
                    i,
                    j,
                    witness: Some(0.0),
                    detail: format!("W′(0) = {} ≠ 0", w.grad(0.0)),
                });
            }
            let mut worst_fd = (0.0_f64, 0.0);
            for &z in &grid {
                let scale = h_fd * z.abs().max(1.0);
                let fd = (w.eval(z + scale) - w.eval(z - scale)) / (2.0 * scale);
                let g = w.grad(z);
                let err = (fd - g).abs() / g.abs().max(1.0);
                if err > worst_fd.0 {
                    worst_fd = (err, z);
                }
            }
            if worst_fd.0 > 1e-4 {
                violations.push(Finding {
                    assumption: Assumption::W2,
                    i,
                    j,
                    witness: Some(worst_fd.1),
                    detail: format!("gradient disagrees with finite differences (rel err {:.3e})", worst_fd.0),
                });
            }

            let even_break = grid
                .iter()
                .copied()
                .find(|&z| w.eval(z) != w.eval(-z) || w.grad(z) != -w.grad(-z));
            if let Some(z) = even_break {
                violations.push(Finding {
                    assumption: Assumption::W3,
                    i,
                    j,
                    witness: Some(z),
                    detail: "kernel not even (or gradient not odd)".into(),
                });
            }

            if let Some(growth) = &pm.growth {
                let bound = growth[i][j];
                let worst = grid
                    .iter()
                    .copied()
                    .map(|z| (w.eval(z).abs() - bound * (1.0 + z * z), z))
                    .fold((f64::NEG_INFINITY, 0.0), |a, b| if b.0 > a.0 { b } else { a });
                if worst.0 > 1e-12 * bound.abs().max(1.0) {
                    violations.push(Finding {
                        assumption: Assumption::W4,
                        i,
                        j,
                        witness: Some(worst.1),
                        detail: format!("|W(z)| exceeds W̄(1+z²) with W̄ = {bound}"),
                    });
                }
            }

            let (estimate, at) = semiconvexity_witness(w, interval, samples);
            let declared = pm.kappa[i][j];
            let tol = 1e-6 * declared.abs().max(1.0);
            if declared > estimate + tol {
                violations.push(Finding {
                    assumption: Assumption::W5,
                    i,
                    j,
                    witness: Some(at),
                    detail: format!("declared κ = {declared} exceeds sampled modulus {estimate:.6}"),
                });
            } else if declared < estimate - tol {
                notes.push(format!(
                    "entry ({i},{j}): declared κ = {declared} is below the sampled modulus {estimate:.6} (valid, not tight)"
                ));
            }
        }
    }

    ValidationReport {
        all_passed: violations.is_empty(),
        violations,
        notes,
    }
}

/// Wire form of a kernel: `{"kind": "quadratic", "a": 2.0}` and friends.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum KernelSpec {
    Quadratic {
        a: f64,
    },
    Power {
        q: f64,
        a: f64,
    },
    Morse {
        ca: f64,
        la: f64,
        cr: f64,
        lr: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        eps: Option<f64>,
    },
    GaussianAr {
        ca: f64,
        la: f64,
        cr: f64,
        lr: f64,
    },
    DoubleWell {
        a: f64,
        b: f64,
    },
    Zero,
    Tabulated {
        knots: Vec<f64>,
        values: Vec<f64>,
        derivs: Vec<f64>,
    },
}

impl TryFrom<KernelSpec> for ScalarPotential {
    type Error = Error;

    fn try_from(spec: KernelSpec) -> Result<Self> {
        match spec {
            KernelSpec::Quadratic { a } => Ok(ScalarPotential::quadratic(a)),
            KernelSpec::Power { q, a } => ScalarPotential::power(q, a),
            KernelSpec::Morse { ca, la, cr, lr, eps } => ScalarPotential::morse(ca, la, cr, lr, eps),
            KernelSpec::GaussianAr { ca, la, cr, lr } => ScalarPotential::gaussian_ar(ca, la, cr, lr),
            KernelSpec::DoubleWell { a, b } => Ok(ScalarPotential::double_well(a, b)),
            KernelSpec::Zero => Ok(ScalarPotential::Zero),
            KernelSpec::Tabulated { knots, values, derivs } => {
                ScalarPotential::tabulated(knots, values, derivs)
            }
        }
    }
}

impl From<ScalarPotential> for KernelSpec {
    fn from(p: ScalarPotential) -> Self {
        match p {
            ScalarPotential::Quadratic { a } => KernelSpec::Quadratic { a },
            ScalarPotential::Power { q, a } => KernelSpec::Power { q, a },
            ScalarPotential::Morse { ca, la, cr, lr, eps } => KernelSpec::Morse {
                ca,
                la,
                cr,
                lr,
                eps: Some(eps),
            },
            ScalarPotential::GaussianAR { ca, la, cr, lr } => KernelSpec::GaussianAr { ca, la, cr, lr },
            ScalarPotential::DoubleWell { a, b } => KernelSpec::DoubleWell { a, b },
            ScalarPotential::Zero => KernelSpec::Zero,
            ScalarPotential::Tabulated(t) => KernelSpec::Tabulated {
                knots: t.knots,
                values: t.values,
                derivs: t.derivs,
            },
        }
    }
}

pub(crate) fn require_symmetric_kappa(kappa: &Matrix) -> Result<()> {
    if !is_symmetric(kappa) {
        return Err(Error::Domain("kappa must be symmetric".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn all_kinds() -> Vec<ScalarPotential> {
        vec![
            ScalarPotential::quadratic(1.5),
            ScalarPotential::power(3.0, 0.7).unwrap(),
            ScalarPotential::power(1.5, -0.4).unwrap(),
            ScalarPotential::morse(1.0, 1.0, 0.5, 0.3, Some(0.1)).unwrap(),
            ScalarPotential::gaussian_ar(1.0, 1.0, 0.6, 0.2).unwrap(),
            ScalarPotential::double_well(1.0, 1.0),
            ScalarPotential::Zero,
            ScalarPotential::tabulated(vec![0.0, 1.0, 2.0, 4.0], vec![0.0, 0.5, 1.5, 2.0], vec![0.0, 1.0, 0.5, 0.0])
                .unwrap(),
        ]
    }

    #[test]
    fn eval_examples() {
        assert_eq!(ScalarPotential::quadratic(1.0).eval(2.0), 2.0);
        assert_eq!(ScalarPotential::double_well(1.0, 1.0).eval(0.0), 0.0);
        assert_eq!(ScalarPotential::gaussian_ar(1.0, 1.0, 0.0, 1.0).unwrap().eval(0.0), -1.0);
    }

    #[test]
    fn grad_examples() {
        assert_eq!(ScalarPotential::quadratic(1.0).grad(3.0), 3.0);
        assert_eq!(ScalarPotential::double_well(1.0, 1.0).grad(1.0), 2.0);
        for w in all_kinds() {
            assert_eq!(w.grad(0.0), 0.0, "{w:?}");
            assert_eq!(w.grad(0.37) + w.grad(-0.37), 0.0, "{w:?}");
        }
    }

    #[test]
    fn evenness_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for w in all_kinds() {
            for _ in 0..1000 {
                let z: f64 = rng.random_range(-6.0..6.0);
                assert_eq!(w.eval(z), w.eval(-z), "{w:?} at {z}");
                assert_eq!(w.grad(z), -w.grad(-z), "{w:?} at {z}");
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for w in all_kinds() {
            for _ in 0..100 {
                let z: f64 = rng.random_range(-5.0..5.0);
                let h = 1e-5 * z.abs().max(1.0);
                let fd = (w.eval(z + h) - w.eval(z - h)) / (2.0 * h);
                let g = w.grad(z);
                assert!((fd - g).abs() <= 1e-6 * g.abs().max(1.0), "{w:?} at {z}: fd {fd} vs {g}");
            }
        }
    }

    #[test]
    fn semiconvexity_of_quadratics_is_exact() {
        for a in [-3.0, 0.0, 7.0] {
            let k = estimate_semiconvexity(&ScalarPotential::quadratic(a), (-5.0, 5.0), 101);
            assert_abs_diff_eq!(k, a, epsilon = 1e-9);
        }
        let k = estimate_semiconvexity(&ScalarPotential::quadratic(2.0), (-5.0, 5.0), 101);
        assert_abs_diff_eq!(k, 2.0, epsilon = 1e-9);
    }

    #[test]
    fn semiconvexity_of_double_well() {
        let k = estimate_semiconvexity(&ScalarPotential::double_well(1.0, 1.0), (-1.0, 1.0), 1001);
        assert_abs_diff_eq!(k, -2.0, epsilon = 1e-3);
    }

    #[test]
    fn semiconvexity_of_gaussian_matches_closed_form() {
        // d²/dz² (−e^{−z²}) = (2 − 4z²)e^{−z²}; minimized where it is most negative.
        let exact = (0..=60_000)
            .map(|s| -3.0 + 6.0 * s as f64 / 60_000.0)
            .map(|z: f64| (2.0 - 4.0 * z * z) * (-z * z).exp())
            .fold(f64::INFINITY, f64::min);
        let w = ScalarPotential::gaussian_ar(1.0, 1.0, 0.0, 1.0).unwrap();
        let k = estimate_semiconvexity(&w, (-3.0, 3.0), 1001);
        assert!((k - exact).abs() < 1e-3, "{k} vs {exact}");
    }

    #[test]
    fn growth_bound_examples() {
        assert_abs_diff_eq!(
            estimate_growth_bound(&ScalarPotential::quadratic(1.0), (-10.0, 10.0), 2001),
            1.0,
            epsilon = 1e-9
        );
        assert_eq!(estimate_growth_bound(&ScalarPotential::Zero, (-3.0, 3.0), 11), 0.0);
        let oracle = (0..401)
            .map(|s| -2.0 + s as f64 * 0.01)
            .map(|z: f64| (4.0 * z.powi(3) - 2.0 * z).abs() / (z.abs() + 1.0))
            .fold(0.0, f64::max);
        let c = estimate_growth_bound(&ScalarPotential::double_well(1.0, 1.0), (-2.0, 2.0), 401);
        assert_abs_diff_eq!(c, oracle, epsilon = 1e-12);
    }

    #[test]
    fn morse_requires_smoothing() {
        assert!(matches!(ScalarPotential::morse(1.0, 1.0, 0.5, 0.5, None), Err(Error::Domain(_))));
        assert!(ScalarPotential::morse(1.0, 1.0, 0.5, 0.5, Some(0.0)).is_err());
        assert!(ScalarPotential::power(1.0, 1.0).is_err());
    }

    #[test]
    fn tabulated_rejects_bad_knots() {
        assert!(ScalarPotential::tabulated(vec![0.5, 1.0], vec![0.0, 1.0], vec![0.0, 1.0]).is_err());
        assert!(ScalarPotential::tabulated(vec![0.0, 1.0], vec![0.0, 1.0], vec![0.3, 1.0]).is_err());
        assert!(ScalarPotential::tabulated(vec![0.0, 1.0, 1.0], vec![0.0; 3], vec![0.0; 3]).is_err());
        assert!(ScalarPotential::tabulated(vec![0.0], vec![0.0], vec![0.0]).is_err());
    }

    #[test]
    fn tabulated_reproduces_knot_data() {
        let w = ScalarPotential::tabulated(vec![0.0, 1.0, 3.0], vec![0.0, 0.5, 4.5], vec![0.0, 1.0, 3.0]).unwrap();
        assert_abs_diff_eq!(w.eval(1.0), 0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(w.eval(-3.0), 4.5, epsilon = 1e-14);
        assert_abs_diff_eq!(w.grad(-1.0), -1.0, epsilon = 1e-14);
        // Linear extrapolation past the last knot.
        assert_abs_diff_eq!(w.eval(4.0), 7.5, epsilon = 1e-12);
    }

    #[test]
    fn flatness_detection() {
        assert!(ScalarPotential::Zero.is_gradient_identically_zero());
        assert!(ScalarPotential::quadratic(0.0).is_gradient_identically_zero());
        assert!(!ScalarPotential::quadratic(1.0).is_gradient_identically_zero());
        let flat = ScalarPotential::tabulated(vec![0.0, 1.0], vec![2.0, 2.0], vec![0.0, 0.0]).unwrap();
        assert!(flat.is_gradient_identically_zero());
        let bump = ScalarPotential::tabulated(vec![0.0, 1.0, 2.0], vec![0.0, -1.0, -1.0], vec![0.0, 0.0, 0.0]).unwrap();
        assert!(!bump.is_gradient_identically_zero());
        assert!(bump.gradient_vanishes_beyond(2.0));
        assert!(!bump.gradient_vanishes_beyond(0.5));
    }

    #[test]
    fn radial_gradient() {
        let w = ScalarPotential::quadratic(2.0);
        let mut out = [0.0; 2];
        w.grad_vec(&[3.0, 4.0], &mut out);
        assert_abs_diff_eq!(out[0], 6.0, epsilon = 1e-12);
        assert_abs_diff_eq!(out[1], 8.0, epsilon = 1e-12);
        w.grad_vec(&[0.0, 0.0], &mut out);
        assert_eq!(out, [0.0, 0.0]);
    }

    #[test]
    fn grad_sum_agrees_with_pointwise() {
        let points = [-1.0, 0.3, 2.5];
        for w in all_kinds() {
            let direct: f64 = points.iter().map(|p| w.grad(0.7 - p)).sum();
            assert_abs_diff_eq!(w.grad_sum(0.7, &points), direct, epsilon = 1e-12);
        }
    }

    #[test]
    fn matrix_eval_rejects_bad_input() {
        let pm = PotentialMatrix::scalar(ScalarPotential::quadratic(1.0), 1.0);
        assert!(matches!(pm.eval(0, 0, f64::NAN), Err(Error::Domain(_))));
        assert!(matches!(pm.grad(0, 0, f64::INFINITY), Err(Error::Domain(_))));
        assert!(matches!(pm.eval(1, 0, 1.0), Err(Error::Usage(_))));
        assert_eq!(pm.eval(0, 0, 2.0).unwrap(), 2.0);
    }

    fn quad2(k12: f64) -> PotentialMatrix {
        let q = |a| ScalarPotential::quadratic(a);
        PotentialMatrix::new(vec![vec![q(2.0), q(k12)], vec![q(k12), q(2.0)]], vec![vec![2.0, k12], vec![k12, 2.0]])
            .unwrap()
    }

    #[test]
    fn validate_symmetric_quadratics_pass() {
        let report = validate(&quad2(1.0), (-4.0, 4.0), 201);
        assert!(report.all_passed, "{:?}", report.violations);
    }

    #[test]
    fn validate_flags_asymmetric_entries() {
        let q = |a| ScalarPotential::quadratic(a);
        let pm = PotentialMatrix::new(vec![vec![q(2.0), q(1.0)], vec![q(0.5), q(2.0)]], vec![vec![2.0, 0.5], vec![0.5, 2.0]])
            .unwrap();
        let report = validate(&pm, (-4.0, 4.0), 201);
        assert!(report.flags(Assumption::W1));
    }

    #[test]
    fn validate_flags_overclaimed_kappa_near_origin() {
        let pm = PotentialMatrix::scalar(ScalarPotential::double_well(1.0, 1.0), 1.0);
        let report = validate(&pm, (-1.0, 1.0), 1001);
        let finding = report.violations.iter().find(|f| f.assumption == Assumption::W5).expect("W5 flagged");
        assert!(finding.witness.unwrap().abs() < 0.01);
    }

    #[test]
    fn validate_notes_underclaimed_kappa() {
        let pm = PotentialMatrix::scalar(ScalarPotential::quadratic(3.0), 1.0);
        let report = validate(&pm, (-2.0, 2.0), 101);
        assert!(report.all_passed);
        assert_eq!(report.notes.len(), 1);
    }

    #[test]
    fn validate_flags_growth_violation() {
        let pm = PotentialMatrix::scalar(ScalarPotential::power(3.0, 1.0).unwrap(), 0.0)
            .with_growth(vec![vec![1.0]])
            .unwrap();
        let report = validate(&pm, (-5.0, 5.0), 101);
        assert!(report.flags(Assumption::W4));
    }

    #[test]
    fn wire_format_round_trip() {
        let json = r#"{"n":2,"entries":[[{"kind":"quadratic","a":2.0},{"kind":"zero"}],
            [{"kind":"zero"},{"kind":"morse","ca":1,"la":1,"cr":0.5,"lr":0.5,"eps":0.1}]],
            "kappa":[[2,0],[0,-1]]}"#;
        let pm: PotentialMatrix = serde_json::from_str(json).unwrap();
        assert_eq!(pm.n(), 2);
        let back: PotentialMatrix = serde_json::from_str(&serde_json::to_string(&pm).unwrap()).unwrap();
        assert_eq!(back, pm);
    }

    #[test]
    fn wire_format_rejects_declared_n_mismatch_and_bare_morse() {
        let bad_n = r#"{"n":3,"entries":[[{"kind":"zero"}]],"kappa":[[0]]}"#;
        assert!(serde_json::from_str::<PotentialMatrix>(bad_n).is_err());
        let bare = r#"{"n":1,"entries":[[{"kind":"morse","ca":1,"la":1,"cr":0,"lr":1}]],"kappa":[[0]]}"#;
        assert!(serde_json::from_str::<PotentialMatrix>(bare).is_err());
    }

    proptest! {
        #[test]
        fn quadratic_kernels_even_for_any_coefficient(a in -10.0..10.0f64, z in -100.0..100.0f64) {
            let w = ScalarPotential::quadratic(a);
            prop_assert_eq!(w.eval(z), w.eval(-z));
            prop_assert_eq!(w.grad(z), -w.grad(-z));
        }

        #[test]
        fn lipschitz_estimate_bounds_difference_quotients(a in 0.1..4.0f64, b in 0.1..4.0f64) {
            let w = ScalarPotential::double_well(a, b);
            let l = estimate_gradient_lipschitz(&w, (-2.0, 2.0), 2001);
            // Exact maximum of |12az² − 2b| on [−2, 2].
            let exact = (48.0 * a - 2.0 * b).abs().max(2.0 * b);
            prop_assert!((l - exact).abs() <= 0.01 * exact);
        }
    }
}
