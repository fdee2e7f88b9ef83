//! The initial condition `psi(h) = F̄_1(0, h)` for i.i.d.-row priors, its
//! gradient, and scalar convex conjugation.
//!
//! `psi` is an expectation over the planted row `X ~ P` and a Gaussian vector
//! `Z ~ N(0, I_K)` of a log-partition function over the prior atoms. The
//! expectation over `X` is an exact finite sum; the one over `Z` uses a
//! tensorized Gauss-Hermite rule (probabilists' weights) or seeded sampling.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{stream_rng, DiscretePrior};
use crate::stats::SampleStats;
use crate::symcone::{eig_sym, min_eigenvalue, psd_project, SymMatrix, PSD_TOL};

pub const DEFAULT_GH_NODES: usize = 64;
const MAX_QUADRATURE_DIM: usize = 3;
/// Below this, `s_i + s_j` in the derivative of `sqrt(2h)` is treated as 0.
const ROOT_FLOOR: f64 = 1e-5;
/// Above this the Newton root search for the nodes loses roots.
pub const MAX_GH_NODES: usize = 180;

/// Gauss-Hermite nodes and weights for `int f(z) exp(-z^2/2) dz / sqrt(2 pi)`.
pub fn gauss_hermite_probabilists(n: usize) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_hermite_physicists(n);
    let s = std::f64::consts::PI.sqrt();
    (
        x.iter().map(|v| v * std::f64::consts::SQRT_2).collect(),
        w.iter().map(|v| v / s).collect(),
    )
}

/// Nodes and weights for weight `exp(-x^2)`, by Newton iteration on the
/// normalized Hermite recurrence.
pub fn gauss_hermite_physicists(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n > 0);
    let pim4 = std::f64::consts::PI.powf(-0.25);
    let nf = n as f64;
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let mut z = 0.0f64;
    for i in 0..n.div_ceil(2) {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = pim4;
            let mut p2 = 0.0;
            for j in 1..=n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 * (1.0 + z.abs()) {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum EvalMode {
    GaussHermite { nodes: usize },
    MonteCarlo { samples: usize, seed: u64 },
}

/// Convex, nondecreasing potential on the PSD cone with a gradient oracle.
pub trait ConvexPotential: Send + Sync {
    fn dim(&self) -> usize;

    /// Value and Frobenius gradient at a PSD point.
    fn value_grad(&self, h: &SymMatrix) -> Result<(f64, SymMatrix)>;

    /// A matrix bounding every gradient in the Loewner order, when known. The
    /// monotone conjugate is `+inf` outside `{h'' <= ceiling}`.
    fn gradient_ceiling(&self) -> Option<SymMatrix> {
        None
    }
}

/// `psi` of a discrete i.i.d. row prior.
#[derive(Clone)]
pub struct InitialCondition {
    prior: DiscretePrior,
    mode: EvalMode,
    /// Standard-normal sample points with their weights.
    points: Vec<(Vec<f64>, f64)>,
}

impl fmt::Debug for InitialCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("InitialCondition")
            .field("prior", &self.prior)
            .field("mode", &self.mode)
            .finish()
    }
}

/// Value, gradient and the Monte Carlo error of the value (zero for quadrature).
#[derive(Clone, Debug)]
pub struct PsiEvaluation {
    pub value: f64,
    pub grad: SymMatrix,
    pub std_error: f64,
}

impl InitialCondition {
    pub fn new(prior: DiscretePrior, mode: EvalMode) -> Result<Self> {
        let k = prior.dim();
        let points = match mode {
            EvalMode::GaussHermite { nodes } => {
                if k > MAX_QUADRATURE_DIM {
                    return Err(Error::QuadratureDimension(k));
                }
                if nodes == 0 || nodes > MAX_GH_NODES {
                    return Err(Error::invalid(
                        "nodes",
                        format!("must be in 1..={MAX_GH_NODES}"),
                    ));
                }
                let (z, w) = gauss_hermite_probabilists(nodes);
                let mut points = vec![(Vec::new(), 1.0)];
                for _ in 0..k {
                    points = points
                        .into_iter()
                        .flat_map(|(v, wt)| {
                            z.iter().zip(&w).map(move |(zi, wi)| {
                                let mut v = v.clone();
                                v.push(*zi);
                                (v, wt * wi)
                            })
                        })
                        .collect();
                }
                points
            }
            EvalMode::MonteCarlo { samples, seed } => {
                if samples < 2 {
                    return Err(Error::invalid("samples", "need at least 2"));
                }
                let mut rng = stream_rng(seed, 0);
                let wt = 1.0 / samples as f64;
                (0..samples)
                    .map(|_| ((0..k).map(|_| rng.sample(StandardNormal)).collect(), wt))
                    .collect()
            }
        };
        Ok(Self {
            prior,
            mode,
            points,
        })
    }

    /// Default 64-node Gauss-Hermite rule.
    pub fn gauss_hermite(prior: DiscretePrior) -> Result<Self> {
        Self::new(
            prior,
            EvalMode::GaussHermite {
                nodes: DEFAULT_GH_NODES,
            },
        )
    }

    pub fn prior(&self) -> &DiscretePrior {
        &self.prior
    }

    pub fn mode(&self) -> EvalMode {
        self.mode
    }

    pub fn dim(&self) -> usize {
        self.prior.dim()
    }

    fn check(&self, h: &SymMatrix) -> Result<()> {
        if h.dim() != self.dim() {
            return Err(Error::dims(self.dim(), h.dim()));
        }
        let min = min_eigenvalue(h)?;
        if min < -PSD_TOL {
            return Err(Error::NotPsd {
                min_eigenvalue: min,
            });
        }
        Ok(())
    }

    /// Value, gradient and, in Monte Carlo mode, the value's standard error.
    ///
    /// The gradient is the exact derivative of the discretized expectation
    /// (quadrature rule or sample average), so optimizers see consistent
    /// values and slopes. It agrees with the Gibbs form `E[<x>^T <x>]` up to
    /// the discretization error.
    pub fn evaluate(&self, h: &SymMatrix) -> Result<PsiEvaluation> {
        self.check(h)?;
        let k = self.dim();
        if h.max_abs() == 0.0 {
            let m = self.prior.mean();
            return Ok(PsiEvaluation {
                value: 0.0,
                grad: SymMatrix::outer(&m),
                std_error: 0.0,
            });
        }
        // sqrt(2h) in the eigenbasis of h; its derivative is needed below
        let eig = eig_sym(h)?;
        let roots: Vec<f64> = eig
            .values
            .iter()
            .map(|l| (2.0 * l.max(0.0)).sqrt())
            .collect();
        let basis = &eig.vectors;
        let sqrt_2h = SymMatrix::from_fn(k, |i, j| {
            (0..k)
                .map(|m| basis.get(i, m) * roots[m] * basis.get(j, m))
                .sum()
        });
        let atoms = self.prior.atoms();
        let log_w: Vec<f64> = self.prior.weights().iter().map(|w| w.ln()).collect();
        // quadratic self-term x_b^T h x_b and the planted coupling 2 h X_a
        let self_term: Vec<f64> = atoms.iter().map(|b| h.bilinear(b, b)).collect();
        let planted: Vec<Vec<f64>> = atoms
            .iter()
            .map(|a| h.mul_vec(a).iter().map(|v| 2.0 * v).collect())
            .collect();

        let kk = k * k;
        let mut value = 0.0;
        // explicit h-dependence, the sqrt(2h) channel <x> z^T, and the
        // Gaussian-integration-by-parts form of that channel
        let mut direct = vec![0.0; kk];
        let mut channel = vec![0.0; kk];
        let mut stein = vec![0.0; kk];
        let mut per_point = Vec::with_capacity(self.points.len());
        let mut exponents = vec![0.0; atoms.len()];
        let mut mean = vec![0.0; k];
        let mut second = vec![0.0; kk];
        for (z, wz) in &self.points {
            let field = sqrt_2h.mul_vec(z);
            let mut point_value = 0.0;
            for ((pa, xa_field), xa) in self.prior.weights().iter().zip(&planted).zip(atoms) {
                let mut max = f64::NEG_INFINITY;
                for (bi, b) in atoms.iter().enumerate() {
                    let mut e = log_w[bi] - self_term[bi];
                    for c in 0..k {
                        e += b[c] * (xa_field[c] + field[c]);
                    }
                    exponents[bi] = e;
                    max = max.max(e);
                }
                let mut s = 0.0;
                mean.iter_mut().for_each(|m| *m = 0.0);
                second.iter_mut().for_each(|m| *m = 0.0);
                for (bi, b) in atoms.iter().enumerate() {
                    let g = (exponents[bi] - max).exp();
                    s += g;
                    for c in 0..k {
                        mean[c] += g * b[c];
                        for d in 0..k {
                            second[c * k + d] += g * b[c] * b[d];
                        }
                    }
                }
                let lse = max + s.ln();
                mean.iter_mut().for_each(|m| *m /= s);
                second.iter_mut().for_each(|m| *m /= s);
                point_value += pa * lse;
                let wt = pa * wz;
                for i in 0..k {
                    for j in 0..k {
                        let ij = i * k + j;
                        direct[ij] += wt * (mean[i] * xa[j] + xa[i] * mean[j] - second[ij]);
                        channel[ij] += wt * mean[i] * z[j];
                        stein[ij] += wt * (second[ij] - mean[i] * mean[j]);
                    }
                }
            }
            value += wz * point_value;
            per_point.push(point_value);
        }
        // d sqrt(2h)[E] = V [ (V^T 2E V)_ij / (s_i + s_j) ] V^T; pairs with
        // s_i + s_j ~ 0 use the integration-by-parts limit instead
        let rotate = |m: &[f64]| -> Vec<f64> {
            let mut out = vec![0.0; kk];
            for a in 0..k {
                for b in 0..k {
                    let mut acc = 0.0;
                    for i in 0..k {
                        for j in 0..k {
                            acc += basis.get(i, a)
                                * 0.5
                                * (m[i * k + j] + m[j * k + i])
                                * basis.get(j, b);
                        }
                    }
                    out[a * k + b] = acc;
                }
            }
            out
        };
        let channel_eig = rotate(&channel);
        let stein_eig = rotate(&stein);
        let mut n = vec![0.0; kk];
        for a in 0..k {
            for b in 0..k {
                let denom = roots[a] + roots[b];
                n[a * k + b] = if denom > ROOT_FLOOR {
                    2.0 * channel_eig[a * k + b] / denom
                } else {
                    stein_eig[a * k + b]
                };
            }
        }
        let grad = SymMatrix::from_fn(k, |i, j| {
            let mut acc = 0.5 * (direct[i * k + j] + direct[j * k + i]);
            for a in 0..k {
                for b in 0..k {
                    acc += basis.get(i, a) * n[a * k + b] * basis.get(j, b);
                }
            }
            acc
        });
        let std_error = match self.mode {
            EvalMode::GaussHermite { .. } => 0.0,
            EvalMode::MonteCarlo { .. } => SampleStats::new(&per_point).std_error,
        };
        Ok(PsiEvaluation {
            value,
            grad,
            std_error,
        })
    }

    pub fn psi(&self, h: &SymMatrix) -> Result<f64> {
        Ok(self.evaluate(h)?.value)
    }

    pub fn grad_psi(&self, h: &SymMatrix) -> Result<SymMatrix> {
        Ok(self.evaluate(h)?.grad)
    }

    /// Evaluates at the PSD projection of `h`; returns the projection distance
    /// alongside so callers can flag out-of-cone queries.
    pub fn evaluate_projected(&self, h: &SymMatrix) -> Result<(PsiEvaluation, f64)> {
        let projected = psd_project(h)?;
        let distance = (&projected - h).norm();
        Ok((self.evaluate(&projected)?, distance))
    }

    /// The scalar restriction `x -> psi([x])` of a one-dimensional prior.
    pub fn scalar(&self) -> Result<ScalarConvexFunction> {
        if self.dim() != 1 {
            return Err(Error::dims(1, self.dim()));
        }
        let ic = Arc::new(self.clone());
        let ic2 = Arc::clone(&ic);
        let lipschitz = self.prior.second_moment().get(0, 0);
        Ok(ScalarConvexFunction::new(
            move |x| {
                ic.psi(&SymMatrix::from_diag(&[x.max(0.0)]))
                    .unwrap_or(f64::NAN)
            },
            lipschitz,
        )
        .with_derivative(move |x| {
            ic2.grad_psi(&SymMatrix::from_diag(&[x.max(0.0)]))
                .map(|g| g.get(0, 0))
                .unwrap_or(f64::NAN)
        }))
    }
}

impl ConvexPotential for InitialCondition {
    fn dim(&self) -> usize {
        self.prior.dim()
    }

    fn value_grad(&self, h: &SymMatrix) -> Result<(f64, SymMatrix)> {
        let (e, _) = self.evaluate_projected(h)?;
        Ok((e.value, e.grad))
    }

    fn gradient_ceiling(&self) -> Option<SymMatrix> {
        Some(self.prior.second_moment())
    }
}

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Convex function on `[0, domain_max]` with a declared Lipschitz bound.
#[derive(Clone)]
pub struct ScalarConvexFunction {
    f: ScalarFn,
    derivative: Option<ScalarFn>,
    lipschitz: f64,
    domain_max: f64,
}

impl fmt::Debug for ScalarConvexFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScalarConvexFunction")
            .field("lipschitz", &self.lipschitz)
            .field("domain_max", &self.domain_max)
            .finish()
    }
}

impl ScalarConvexFunction {
    pub fn new(f: impl Fn(f64) -> f64 + Send + Sync + 'static, lipschitz: f64) -> Self {
        Self {
            f: Arc::new(f),
            derivative: None,
            lipschitz,
            domain_max: f64::INFINITY,
        }
    }

    pub fn with_derivative(mut self, d: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        self.derivative = Some(Arc::new(d));
        self
    }

    /// Restricts the effective domain to `[0, domain_max]`.
    pub fn with_domain(mut self, domain_max: f64) -> Self {
        self.domain_max = domain_max;
        self
    }

    pub fn eval(&self, x: f64) -> f64 {
        (self.f)(x)
    }

    /// Derivative, by central differences when no closed form was supplied.
    pub fn derivative(&self, x: f64) -> f64 {
        match &self.derivative {
            Some(d) => d(x),
            None => {
                let step = 1e-6 * (1.0 + x.abs());
                let lo = (x - step).max(0.0);
                (self.eval(x + step) - self.eval(lo)) / (x + step - lo)
            }
        }
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn domain_max(&self) -> f64 {
        self.domain_max
    }

    /// `y -> sup_{0 <= x <= cap} (x y - f(x))` as a scalar function of `y` on
    /// `[0, slope_cap]`; its derivative is the maximizer.
    pub fn conjugate(&self, slope_cap: f64, radius: Option<f64>) -> ScalarConvexFunction {
        let inner = self.clone();
        let inner2 = self.clone();
        let radius_value = radius.unwrap_or(10.0 * (1.0 + self.lipschitz));
        ScalarConvexFunction::new(
            move |y| match conjugate_1d(&inner, y, radius) {
                Ok(c) => c.value,
                Err(Error::RadiusExhausted { value, .. }) => value,
                Err(_) => f64::NAN,
            },
            radius_value.min(self.domain_max),
        )
        .with_derivative(move |y| match conjugate_1d(&inner2, y, radius) {
            Ok(c) => c.argmax,
            Err(_) => radius_value,
        })
        .with_domain(slope_cap)
    }
}

/// Value and maximizer of a scalar conjugate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Conjugate {
    pub value: f64,
    pub argmax: f64,
}

const GOLDEN: f64 = 0.618_033_988_749_894_9;

/// Maximizes a concave function on `[lo, hi]` by golden-section search to an
/// interval width of `tol`. Returns `(argmax, value)`, endpoints included.
pub(crate) fn golden_section_max(f: impl Fn(f64) -> f64, lo: f64, hi: f64, tol: f64) -> (f64, f64) {
    let (mut a, mut b) = (lo, hi);
    let mut c = b - GOLDEN * (b - a);
    let mut d = a + GOLDEN * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a) > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - GOLDEN * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + GOLDEN * (b - a);
            fd = f(d);
        }
    }
    let mut best = if fc >= fd { (c, fc) } else { (d, fd) };
    for x in [lo, hi] {
        let v = f(x);
        if v > best.1 {
            best = (x, v);
        }
    }
    best
}

/// `sup_{x >= 0} (x y - f(x))` by golden-section search on `[0, R]`, with
/// `R = 10 (1 + Lip f)` unless given, clipped to the domain of `f`.
pub fn conjugate_1d(f: &ScalarConvexFunction, y: f64, radius: Option<f64>) -> Result<Conjugate> {
    if !(y >= 0.0 && y.is_finite()) {
        return Err(Error::invalid(
            "y",
            format!("must be finite and >= 0, got {y}"),
        ));
    }
    let radius = radius.unwrap_or(10.0 * (1.0 + f.lipschitz()));
    let upper = radius.min(f.domain_max());
    let (argmax, value) = golden_section_max(|x| x * y - f.eval(x), 0.0, upper, 1e-8);
    if upper == radius && argmax >= upper - 1e-7 && radius < f.domain_max() {
        return Err(Error::RadiusExhausted { radius, value });
    }
    Ok(Conjugate { value, argmax })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rad() -> InitialCondition {
        InitialCondition::gauss_hermite(DiscretePrior::rademacher()).unwrap()
    }

    // Composite Simpson on [-12, 12] against the standard normal density.
    fn simpson_normal(f: impl Fn(f64) -> f64) -> f64 {
        let n = 20_000;
        let (a, b) = (-12.0f64, 12.0f64);
        let hstep = (b - a) / n as f64;
        let mut s = 0.0;
        for i in 0..=n {
            let z = a + i as f64 * hstep;
            let c = if i == 0 || i == n {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            s += c * f(z) * (-0.5 * z * z).exp();
        }
        s * hstep / 3.0 / (2.0 * std::f64::consts::PI).sqrt()
    }

    #[test]
    fn hermite_rule_moments() {
        let (z, w) = gauss_hermite_probabilists(64);
        let m0: f64 = w.iter().sum();
        let m2: f64 = z.iter().zip(&w).map(|(z, w)| w * z * z).sum();
        let m4: f64 = z.iter().zip(&w).map(|(z, w)| w * z.powi(4)).sum();
        assert!((m0 - 1.0).abs() < 1e-13);
        assert!((m2 - 1.0).abs() < 1e-12);
        assert!((m4 - 3.0).abs() < 1e-11);
        for n in [100, MAX_GH_NODES] {
            let (z, w) = gauss_hermite_probabilists(n);
            assert!(z.windows(2).all(|p| p[0] > p[1]));
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-13);
        }
        let (x, w) = gauss_hermite_physicists(3);
        assert!((x[0] - 1.224_744_871_391_589).abs() < 1e-14);
        assert!((w[1] - 1.181_635_900_603_677).abs() < 1e-14);
    }

    #[test]
    fn psi_vanishes_at_origin() {
        assert_eq!(rad().psi(&SymMatrix::zeros(1)).unwrap(), 0.0);
    }

    #[test]
    fn psi_rademacher_matches_oracle() {
        // log cosh has complex singularities near the real axis, so the
        // default rule degrades as c grows; 128 nodes do much better.
        let fine = InitialCondition::new(
            DiscretePrior::rademacher(),
            EvalMode::GaussHermite { nodes: 128 },
        )
        .unwrap();
        for c in [0.05f64, 0.3, 1.0, 2.5] {
            let oracle = -c + simpson_normal(|z| (2.0 * c + (2.0 * c).sqrt() * z).cosh().ln());
            let h = SymMatrix::from_diag(&[c]);
            let got = rad().psi(&h).unwrap();
            assert!((got - oracle).abs() < 1e-6, "c={c}: {got} vs {oracle}");
            let got = fine.psi(&h).unwrap();
            assert!(
                (got - oracle).abs() < 1e-11 * (1.0 + c.powi(8)),
                "c={c}: {got} vs {oracle}"
            );
        }
    }

    #[test]
    fn psi_single_atom_is_identity() {
        let ic = InitialCondition::gauss_hermite(DiscretePrior::single_atom(vec![1.0]).unwrap())
            .unwrap();
        for c in [0.1, 0.7, 3.0] {
            assert!((ic.psi(&SymMatrix::from_diag(&[c])).unwrap() - c).abs() < 1e-13);
        }
    }

    #[test]
    fn grad_at_origin_is_prior_mean() {
        let prior =
            DiscretePrior::new(vec![vec![1.0, 0.0], vec![0.0, -1.0]], vec![0.25, 0.75]).unwrap();
        let ic =
            InitialCondition::new(prior.clone(), EvalMode::GaussHermite { nodes: 16 }).unwrap();
        let g = ic.grad_psi(&SymMatrix::zeros(2)).unwrap();
        assert!((&g - &SymMatrix::outer(&prior.mean())).norm() < 1e-15);
        assert_eq!(rad().grad_psi(&SymMatrix::zeros(1)).unwrap().get(0, 0), 0.0);
    }

    #[test]
    fn grad_matches_finite_differences_k2() {
        let prior = DiscretePrior::new(
            vec![vec![1.0, 1.0], vec![-1.0, 0.5], vec![0.0, -1.0]],
            vec![0.3, 0.3, 0.4],
        )
        .unwrap();
        let ic = InitialCondition::new(prior, EvalMode::GaussHermite { nodes: 40 }).unwrap();
        let h = SymMatrix::from_rows(&[vec![0.6, 0.2], vec![0.2, 0.4]]).unwrap();
        let g = ic.grad_psi(&h).unwrap();
        let step = 1e-5;
        for (a, b) in [(0, 0), (0, 1), (1, 1)] {
            let mut e = SymMatrix::zeros(2);
            e.set(a, b, 1.0);
            let fd = (ic.psi(&h.axpy(step, &e)).unwrap() - ic.psi(&h.axpy(-step, &e)).unwrap())
                / (2.0 * step);
            assert!(
                (fd - g.dot(&e)).abs() < 1e-6,
                "({a},{b}): {fd} vs {}",
                g.dot(&e)
            );
        }
    }

    #[test]
    fn quadrature_rejects_large_k_and_bad_h() {
        let prior = DiscretePrior::single_atom(vec![0.5; 4]).unwrap();
        assert!(matches!(
            InitialCondition::gauss_hermite(prior),
            Err(Error::QuadratureDimension(4))
        ));
        assert!(matches!(
            rad().psi(&SymMatrix::from_diag(&[-0.5])),
            Err(Error::NotPsd { .. })
        ));
        let (e, dist) = rad()
            .evaluate_projected(&SymMatrix::from_diag(&[-0.5]))
            .unwrap();
        assert_eq!(e.value, 0.0);
        assert_eq!(dist, 0.5);
    }

    #[test]
    fn conjugate_examples() {
        let quad = ScalarConvexFunction::new(|x| 0.5 * x * x, f64::INFINITY);
        let c = conjugate_1d(&quad, 1.0, Some(10.0)).unwrap();
        assert!((c.value - 0.5).abs() < 1e-12);
        assert!((c.argmax - 1.0).abs() < 1e-7);

        let lin = ScalarConvexFunction::new(|x| x, 1.0);
        let c = conjugate_1d(&lin, 0.5, None).unwrap();
        assert!(c.value.abs() < 1e-15 && c.argmax == 0.0);

        let c = conjugate_1d(&lin, 2.0, None);
        assert!(matches!(c, Err(Error::RadiusExhausted { .. })));
    }

    #[test]
    fn scalar_restriction_derivative() {
        let f = rad().scalar().unwrap();
        let x = 0.8;
        let fd = (f.eval(x + 1e-5) - f.eval(x - 1e-5)) / 2e-5;
        assert!((f.derivative(x) - fd).abs() < 1e-7);
        assert_eq!(f.lipschitz(), 1.0);
    }
}
