//! Sup-inf (Hopf) formula on the PSD cone and on the orthant, the layered
//! odd/even reduction, and the scalar Hopf-Lax formula.
//!
//! The outer maximization is over `h''` in the cone, inside the ball of radius
//! `R` and below the gradient ceiling of the potential (outside of which the
//! inner infimum is `-inf`). Seeds for the outer search come from a grid of
//! inner points `h'` pushed through the potential's gradient: for
//! `h'' = grad psi(h')` the inner problem is solved exactly by `h'`, so the
//! seed values cost one potential evaluation each.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::initial_condition::{
    conjugate_1d, golden_section_max, ConvexPotential, ScalarConvexFunction,
};
use crate::model::InteractionSpec;
use crate::symcone::{eig_sym, min_eigenvalue, psd_project, Matrix, SymMatrix, PSD_TOL};

const ARMIJO: f64 = 1e-4;
const UNBOUNDED_FACTOR: f64 = 1e6;
const TIE_TOL: f64 = 1e-10;
const STALL_LIMIT: usize = 10;
const VALUE_WINDOW: usize = 25;
const NEWTON_FD: f64 = 1e-6;
const NEWTON_TRUST: f64 = 10.0;
const NEWTON_HALVINGS: usize = 6;

/// Slack in the sufficient-decrease test: objective values carry quadrature
/// round-off, and near the optimum the predicted change falls below it.
fn noise_floor(f: f64) -> f64 {
    64.0 * f64::EPSILON * (1.0 + f.abs())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Outer radius; `2 K^{3/2}` when absent.
    pub radius: Option<f64>,
    /// Levels per eigenvalue (or coordinate) axis of the seed grid.
    pub grid_levels: usize,
    /// Rotations of the eigenvalue grid (PSD cone, `K >= 2`).
    pub rotations: usize,
    /// Seeds refined by projected-gradient ascent, besides the origin.
    pub multistart: usize,
    pub inner_tol: f64,
    pub inner_cap: usize,
    pub outer_tol: f64,
    pub outer_cap: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            radius: None,
            grid_levels: 9,
            rotations: 4,
            multistart: 5,
            inner_tol: 1e-9,
            inner_cap: 100_000,
            outer_tol: 1e-6,
            outer_cap: 10_000,
        }
    }
}

impl SolverConfig {
    pub fn radius_for(&self, k: usize) -> f64 {
        self.radius.unwrap_or(2.0 * (k as f64).powf(1.5))
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(r) = self.radius {
            if !(r > 0.0 && r.is_finite()) {
                return Err(Error::invalid("radius", "must be positive and finite"));
            }
        }
        if self.grid_levels < 2 {
            return Err(Error::invalid("grid_levels", "need at least 2"));
        }
        if self.rotations == 0 {
            return Err(Error::invalid("rotations", "must be positive"));
        }
        for (field, v) in [("inner_tol", self.inner_tol), ("outer_tol", self.outer_tol)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(field, "must be positive"));
            }
        }
        if self.inner_cap == 0 || self.outer_cap == 0 {
            return Err(Error::invalid("inner_cap/outer_cap", "must be positive"));
        }
        Ok(())
    }

    /// Seed levels for the inner point: `0` and a geometric ladder up to 20.
    fn levels(&self) -> Vec<f64> {
        let n = self.grid_levels;
        let mut v = vec![0.0];
        for i in 0..n - 1 {
            let s = if n > 2 {
                i as f64 / (n - 2) as f64
            } else {
                0.0
            };
            v.push(0.05 * 400f64.powf(s));
        }
        v
    }
}

/// Result of a sup-inf evaluation. For the PSD cone `P = SymMatrix`, for the
/// orthant `P = Vec<f64>`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HopfSolution<P> {
    pub value: f64,
    /// Outer maximizer `h''`.
    pub h_outer: P,
    /// Inner minimizer `h'`.
    pub h_inner: P,
    pub outer_starts: usize,
    pub inner_iterations: usize,
    /// Spread between the best and second-best outer start.
    pub gap_estimate: f64,
}

pub type HopfResult = HopfSolution<SymMatrix>;

#[derive(Clone, Debug, PartialEq)]
pub struct InnerSolution<P> {
    pub value: f64,
    pub argmin: P,
    pub iterations: usize,
}

/// A closed convex cone with the vector operations the solvers need.
pub trait Cone: Sync {
    type Point: Clone + Send + Sync + std::fmt::Debug;

    fn dim(&self) -> usize;
    fn zero(&self) -> Self::Point;
    fn dot(&self, a: &Self::Point, b: &Self::Point) -> f64;
    /// `a + s b`.
    fn combine(&self, a: &Self::Point, s: f64, b: &Self::Point) -> Self::Point;
    fn project(&self, a: &Self::Point) -> Result<Self::Point>;
    /// Seed points built from per-axis levels.
    fn seeds(&self, levels: &[f64], rotations: usize) -> Vec<Self::Point>;
    /// Smallest eigenvalue (or coordinate): nonnegative iff the point is in the cone.
    fn depth(&self, a: &Self::Point) -> Result<f64>;
    /// Orthonormal basis of the ambient space.
    fn basis(&self) -> Vec<Self::Point>;

    fn norm(&self, a: &Self::Point) -> f64 {
        self.dot(a, a).sqrt()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct PsdCone {
    pub k: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct Orthant {
    pub k: usize,
}

const MAX_SEEDS: usize = 1000;

fn thin_levels(levels: &[f64], k: usize) -> Vec<f64> {
    let mut m = levels.len();
    while m > 2 && m.pow(k as u32) > MAX_SEEDS {
        m -= 1;
    }
    if m == levels.len() {
        return levels.to_vec();
    }
    (0..m)
        .map(|i| levels[i * (levels.len() - 1) / (m - 1)])
        .collect()
}

fn product_grid(levels: &[f64], k: usize) -> Vec<Vec<f64>> {
    let mut out = vec![Vec::new()];
    for _ in 0..k {
        out = out
            .into_iter()
            .flat_map(|v| {
                levels.iter().map(move |l| {
                    let mut v = v.clone();
                    v.push(*l);
                    v
                })
            })
            .collect();
    }
    out
}

/// Deterministic orthogonal matrix: a product of Givens rotations.
fn rotation(k: usize, r: usize, rotations: usize) -> Matrix {
    let mut q = Matrix::from_fn(k, k, |i, j| if i == j { 1.0 } else { 0.0 });
    if r == 0 {
        return q;
    }
    let base = std::f64::consts::FRAC_PI_2 * r as f64 / rotations as f64;
    for i in 0..k {
        for j in i + 1..k {
            let angle = base * (1.0 + 0.37 * (i + 2 * j) as f64);
            let (s, c) = angle.sin_cos();
            for row in 0..k {
                let (a, b) = (q.get(row, i), q.get(row, j));
                q.set(row, i, c * a - s * b);
                q.set(row, j, s * a + c * b);
            }
        }
    }
    q
}

impl Cone for PsdCone {
    type Point = SymMatrix;

    fn dim(&self) -> usize {
        self.k
    }

    fn zero(&self) -> SymMatrix {
        SymMatrix::zeros(self.k)
    }

    fn dot(&self, a: &SymMatrix, b: &SymMatrix) -> f64 {
        a.dot(b)
    }

    fn combine(&self, a: &SymMatrix, s: f64, b: &SymMatrix) -> SymMatrix {
        a.axpy(s, b)
    }

    fn project(&self, a: &SymMatrix) -> Result<SymMatrix> {
        psd_project(a)
    }

    fn depth(&self, a: &SymMatrix) -> Result<f64> {
        min_eigenvalue(a)
    }

    fn basis(&self) -> Vec<SymMatrix> {
        let k = self.k;
        let mut out = Vec::with_capacity(k * (k + 1) / 2);
        for i in 0..k {
            for j in i..k {
                let mut e = SymMatrix::zeros(k);
                e.set(
                    i,
                    j,
                    if i == j {
                        1.0
                    } else {
                        std::f64::consts::FRAC_1_SQRT_2
                    },
                );
                out.push(e);
            }
        }
        out
    }

    fn seeds(&self, levels: &[f64], rotations: usize) -> Vec<SymMatrix> {
        let k = self.k;
        let levels = thin_levels(levels, k);
        let diagonals = product_grid(&levels, k);
        let n_rot = if k == 1 { 1 } else { rotations };
        let mut out = Vec::with_capacity(diagonals.len() * n_rot);
        for r in 0..n_rot {
            let q = rotation(k, r, n_rot);
            for d in &diagonals {
                out.push(SymMatrix::from_fn(k, |i, j| {
                    (0..k).map(|m| q.get(i, m) * d[m] * q.get(j, m)).sum()
                }));
            }
        }
        out
    }
}

impl Cone for Orthant {
    type Point = Vec<f64>;

    fn dim(&self) -> usize {
        self.k
    }

    fn zero(&self) -> Vec<f64> {
        vec![0.0; self.k]
    }

    fn dot(&self, a: &Vec<f64>, b: &Vec<f64>) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    fn combine(&self, a: &Vec<f64>, s: f64, b: &Vec<f64>) -> Vec<f64> {
        a.iter().zip(b).map(|(x, y)| x + s * y).collect()
    }

    fn project(&self, a: &Vec<f64>) -> Result<Vec<f64>> {
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("orthant point"));
        }
        Ok(a.iter().map(|v| v.max(0.0)).collect())
    }

    fn depth(&self, a: &Vec<f64>) -> Result<f64> {
        Ok(a.iter().copied().fold(f64::INFINITY, f64::min))
    }

    fn basis(&self) -> Vec<Vec<f64>> {
        (0..self.k)
            .map(|i| {
                (0..self.k)
                    .map(|j| if i == j { 1.0 } else { 0.0 })
                    .collect()
            })
            .collect()
    }

    fn seeds(&self, levels: &[f64], _rotations: usize) -> Vec<Vec<f64>> {
        product_grid(&thin_levels(levels, self.k), self.k)
    }
}

type ValueGrad<'a, P> = dyn Fn(&P) -> Result<(f64, P)> + Sync + 'a;

/// A sup-inf problem over a cone.
struct Problem<'a, C: Cone> {
    cone: &'a C,
    potential: &'a ValueGrad<'a, C::Point>,
    nonlinearity: &'a ValueGrad<'a, C::Point>,
    ceiling: Option<C::Point>,
    radius: f64,
    cfg: &'a SolverConfig,
}

struct Candidate<P> {
    value: f64,
    outer: P,
    inner: InnerSolution<P>,
    grad: P,
}

impl<C: Cone> Problem<'_, C> {
    fn inner_objective(&self, y: &C::Point, x: &C::Point) -> Result<(f64, C::Point)> {
        let (v, g) = (self.potential)(x)?;
        Ok((v - self.cone.dot(y, x), self.cone.combine(&g, -1.0, y)))
    }

    /// Damped Newton direction from a finite-difference Hessian, for interior
    /// points only (the difference stencil must stay in the cone).
    fn newton_direction(
        &self,
        y: &C::Point,
        x: &C::Point,
        g: &C::Point,
    ) -> Result<Option<C::Point>> {
        let cone = self.cone;
        let scale = 1.0 + cone.norm(x);
        let delta = NEWTON_FD * scale;
        if cone.depth(x)? <= delta {
            return Ok(None);
        }
        let basis = cone.basis();
        let n = basis.len();
        let mut cols = Vec::with_capacity(n);
        for e in &basis {
            let (_, gb) = self.inner_objective(y, &cone.combine(x, delta, e))?;
            cols.push(cone.combine(&gb, -1.0, g));
        }
        let hess = SymMatrix::from_fn(n, |a, b| {
            0.5 * (cone.dot(&cols[b], &basis[a]) + cone.dot(&cols[a], &basis[b])) / delta
        });
        if !hess.is_finite() {
            return Ok(None);
        }
        let eig = eig_sym(&hess)?;
        let top = eig.max();
        if top <= 0.0 {
            return Ok(None);
        }
        let floor = 1e-12 * top;
        let coords: Vec<f64> = basis.iter().map(|e| cone.dot(g, e)).collect();
        let mut d = cone.zero();
        for (c, &lambda) in eig.values.iter().enumerate() {
            let v = eig.vector(c);
            let along: f64 = v.iter().zip(&coords).map(|(a, b)| a * b).sum();
            let w = -along / lambda.max(floor);
            for (e, vi) in basis.iter().zip(&v) {
                d = cone.combine(&d, w * vi, e);
            }
        }
        // trust region: a flat direction must not launch the iterate
        let len = cone.norm(&d);
        let cap = NEWTON_TRUST * scale;
        if len > cap {
            d = cone.combine(&cone.zero(), cap / len, &d);
        }
        Ok(Some(d))
    }

    /// Projected gradient with Barzilai-Borwein steps and Armijo backtracking,
    /// preceded at interior points by a damped Newton attempt.
    fn inner_from(&self, y: &C::Point, start: &C::Point) -> Result<InnerSolution<C::Point>> {
        let cone = self.cone;
        let limit = UNBOUNDED_FACTOR * (1.0 + self.radius);
        let mut x = cone.project(start)?;
        let (mut f, mut g) = self.inner_objective(y, &x)?;
        let mut step = 1.0;
        let mut iterations = 0;
        let mut stalled = 0;
        let mut history = std::collections::VecDeque::with_capacity(VALUE_WINDOW + 1);
        loop {
            let trial = cone.project(&cone.combine(&x, -1.0, &g))?;
            if cone.norm(&cone.combine(&trial, -1.0, &x)) <= self.cfg.inner_tol {
                break;
            }
            if iterations >= self.cfg.inner_cap {
                return Err(Error::IterationCap {
                    what: "inner minimization",
                    cap: self.cfg.inner_cap,
                });
            }
            iterations += 1;
            let mut accepted = None;
            if let Some(dir) = self.newton_direction(y, &x, &g)? {
                let mut s = 1.0;
                for _ in 0..NEWTON_HALVINGS {
                    let xn = cone.project(&cone.combine(&x, s, &dir))?;
                    let d = cone.combine(&xn, -1.0, &x);
                    let slope = cone.dot(&g, &d);
                    if slope >= 0.0 {
                        break;
                    }
                    let (fn_, gn) = self.inner_objective(y, &xn)?;
                    if fn_ <= f + ARMIJO * slope + noise_floor(f) {
                        accepted = Some((xn, d, fn_, gn));
                        break;
                    }
                    s *= 0.5;
                }
            }
            let mut s = step;
            let accepted = if accepted.is_some() {
                accepted
            } else {
                loop {
                    let xn = cone.project(&cone.combine(&x, -s, &g))?;
                    let d = cone.combine(&xn, -1.0, &x);
                    let (fn_, gn) = self.inner_objective(y, &xn)?;
                    if fn_ <= f + ARMIJO * cone.dot(&g, &d) + noise_floor(f) {
                        break Some((xn, d, fn_, gn));
                    }
                    s *= 0.5;
                    if s < 1e-20 {
                        break None;
                    }
                }
            };
            // no decrease even for tiny steps: round-off floor reached
            let Some((xn, d, fn_, gn)) = accepted else {
                break;
            };
            if cone.norm(&d) == 0.0 {
                break;
            }
            if cone.norm(&xn) > limit && cone.dot(&gn, &d) < 0.0 {
                return Err(Error::Unbounded);
            }
            // an infimum approached only at infinity (dual on the ceiling)
            // stops making progress above round-off; the value is then exact
            stalled = if f - fn_ <= noise_floor(f) {
                stalled + 1
            } else {
                0
            };
            let yk = cone.combine(&gn, -1.0, &g);
            let sy = cone.dot(&d, &yk);
            step = if sy > 0.0 {
                cone.dot(&d, &d) / sy
            } else {
                2.0 * s
            };
            step = step.clamp(1e-12, 1e12);
            x = xn;
            f = fn_;
            g = gn;
            if stalled >= STALL_LIMIT {
                break;
            }
            // slow tail (infimum far out along a flat direction): the value
            // has converged even though the gradient test has not fired
            history.push_back(f);
            if history.len() > VALUE_WINDOW {
                let old = history.pop_front().expect("nonempty");
                if old - f <= 1e-3 * self.cfg.inner_tol * (1.0 + f.abs()) {
                    break;
                }
            }
        }
        Ok(InnerSolution {
            value: f,
            argmin: x,
            iterations,
        })
    }

    fn inner(&self, y: &C::Point, starts: &[&C::Point]) -> Result<InnerSolution<C::Point>> {
        let mut best: Option<InnerSolution<C::Point>> = None;
        let mut total = 0;
        for s in starts {
            let sol = self.inner_from(y, s)?;
            total += sol.iterations;
            if best.as_ref().is_none_or(|b| sol.value < b.value) {
                best = Some(sol);
            }
        }
        let mut best = best.expect("at least one start");
        best.iterations = total;
        Ok(best)
    }

    fn below_ceiling(&self, c: &C::Point, x: &C::Point) -> Result<C::Point> {
        let gap = self.cone.project(&self.cone.combine(c, -1.0, x))?;
        Ok(self.cone.combine(c, -1.0, &gap))
    }

    fn ball(&self, x: &C::Point) -> C::Point {
        let n = self.cone.norm(x);
        if n > self.radius {
            self.cone.combine(&self.cone.zero(), self.radius / n, x)
        } else {
            x.clone()
        }
    }

    /// Dykstra's alternating projections onto cone, ceiling and ball.
    fn feasible(&self, x: &C::Point) -> Result<C::Point> {
        let cone = self.cone;
        let n_sets = if self.ceiling.is_some() { 3 } else { 2 };
        let mut corr = vec![cone.zero(); n_sets];
        let mut cur = x.clone();
        for _ in 0..1000 {
            let prev = cur.clone();
            for (i, c) in corr.iter_mut().enumerate() {
                let shifted = cone.combine(&cur, 1.0, c);
                let proj = match (i, &self.ceiling) {
                    (0, _) => cone.project(&shifted)?,
                    (1, Some(ceil)) => self.below_ceiling(ceil, &shifted)?,
                    _ => self.ball(&shifted),
                };
                *c = cone.combine(&shifted, -1.0, &proj);
                cur = proj;
            }
            if cone.norm(&cone.combine(&cur, -1.0, &prev)) <= 1e-14 * (1.0 + cone.norm(&cur)) {
                break;
            }
        }
        let cur = cone.project(&cur)?;
        // Dykstra is only asymptotically exact; pull back along the ray to 0
        // (feasible) until the ceiling holds exactly
        let Some(ceil) = &self.ceiling else {
            return Ok(cur);
        };
        let slack = |a: f64| cone.depth(&cone.combine(ceil, -a, &cur));
        if slack(1.0)? >= 0.0 {
            return Ok(cur);
        }
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if slack(mid)? >= 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(cone.combine(&cone.zero(), lo, &cur))
    }

    fn outer_eval(
        &self,
        t: f64,
        h: &C::Point,
        y: &C::Point,
        inner: InnerSolution<C::Point>,
    ) -> Result<Candidate<C::Point>> {
        let (hv, hg) = (self.nonlinearity)(y)?;
        let value = self.cone.dot(y, h) + t * hv + inner.value;
        let grad = self
            .cone
            .combine(&self.cone.combine(h, -1.0, &inner.argmin), t, &hg);
        Ok(Candidate {
            value,
            outer: y.clone(),
            inner,
            grad,
        })
    }

    /// Projected-gradient ascent on the outer objective; the gradient follows
    /// from the envelope theorem: `h - h'* + t grad H(h'')`.
    fn ascend(
        &self,
        t: f64,
        h: &C::Point,
        start: Candidate<C::Point>,
    ) -> Result<Candidate<C::Point>> {
        let cone = self.cone;
        let mut cur = start;
        let mut step = 1.0;
        let mut iterations = 0;
        loop {
            let unit = self.feasible(&cone.combine(&cur.outer, 1.0, &cur.grad))?;
            if cone.norm(&cone.combine(&unit, -1.0, &cur.outer)) <= self.cfg.outer_tol {
                break;
            }
            if iterations >= self.cfg.outer_cap {
                return Err(Error::IterationCap {
                    what: "outer ascent",
                    cap: self.cfg.outer_cap,
                });
            }
            iterations += 1;
            let mut s = step;
            let accepted = loop {
                let yn = self.feasible(&cone.combine(&cur.outer, s, &cur.grad))?;
                let d = cone.combine(&yn, -1.0, &cur.outer);
                let inner = self.inner(&yn, &[&cur.inner.argmin])?;
                let next = self.outer_eval(t, h, &yn, inner)?;
                if next.value
                    >= cur.value + ARMIJO * cone.dot(&cur.grad, &d) - noise_floor(cur.value)
                {
                    break Some((next, d));
                }
                s *= 0.5;
                if s < 1e-16 {
                    break None;
                }
            };
            let Some((mut next, d)) = accepted else { break };
            if cone.norm(&d) == 0.0 {
                break;
            }
            let yk = cone.combine(&next.grad, -1.0, &cur.grad);
            let sy = cone.dot(&d, &yk);
            step = if sy < 0.0 {
                cone.dot(&d, &d) / -sy
            } else {
                2.0 * s
            };
            step = step.clamp(1e-8, 1e8);
            next.inner.iterations += cur.inner.iterations;
            cur = next;
        }
        Ok(cur)
    }

    fn solve(&self, t: f64, h: &C::Point) -> Result<HopfSolution<C::Point>> {
        let cone = self.cone;
        let zero = cone.zero();
        // seeds: h'' = grad psi(h'), whose inner problem h' solves exactly
        let seeds: Vec<Candidate<C::Point>> = cone
            .seeds(&self.cfg.levels(), self.cfg.rotations)
            .into_par_iter()
            .map(|x| -> Result<Option<Candidate<C::Point>>> {
                let (v, g) = (self.potential)(&x)?;
                let y = cone.project(&g)?;
                if cone.norm(&cone.combine(&self.feasible(&y)?, -1.0, &y)) > 1e-12 {
                    return Ok(None);
                }
                let inner = InnerSolution {
                    value: v - cone.dot(&y, &x),
                    argmin: x,
                    iterations: 0,
                };
                Ok(Some(self.outer_eval(t, h, &y, inner)?))
            })
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .flatten()
            .collect();
        // the vertex of the feasible set, which the Legendre seeds only approach
        let mut seeds = seeds;
        if let Some(ceil) = &self.ceiling {
            let y = self.feasible(ceil)?;
            let inner = self.inner(&y, &[&zero, &y])?;
            seeds.push(self.outer_eval(t, h, &y, inner)?);
        }

        let mut order: Vec<usize> = (0..seeds.len()).collect();
        order.sort_by(|&a, &b| {
            seeds[b].value.total_cmp(&seeds[a].value).then(
                cone.norm(&seeds[a].outer)
                    .total_cmp(&cone.norm(&seeds[b].outer)),
            )
        });
        let mut picked: Vec<usize> = Vec::new();
        for i in order {
            if picked.len() == self.cfg.multistart {
                break;
            }
            let distinct = picked
                .iter()
                .all(|&j| cone.norm(&cone.combine(&seeds[i].outer, -1.0, &seeds[j].outer)) > 1e-6);
            if distinct {
                picked.push(i);
            }
        }
        let mut seeds: Vec<Option<Candidate<C::Point>>> = seeds.into_iter().map(Some).collect();
        let mut starts: Vec<Candidate<C::Point>> = picked
            .iter()
            .map(|&i| seeds[i].take().expect("picked once"))
            .collect();
        let origin_inner = self.inner(&zero, &[&zero])?;
        starts.push(self.outer_eval(t, h, &zero, origin_inner)?);
        let outer_starts = starts.len();

        // the ascent only warm-starts the inner problem, which can leave its
        // value high; rank on a fresh solve from the warm point, 0 and h''
        let finished: Vec<Candidate<C::Point>> = starts
            .into_par_iter()
            .map(|s| {
                let c = self.ascend(t, h, s)?;
                let warm = c.inner.iterations;
                let mut inner = self.inner(&c.outer, &[&c.inner.argmin, &zero, &c.outer])?;
                inner.iterations += warm;
                self.outer_eval(t, h, &c.outer, inner)
            })
            .collect::<Result<_>>()?;

        let mut idx: Vec<usize> = (0..finished.len()).collect();
        idx.sort_by(|&a, &b| finished[b].value.total_cmp(&finished[a].value));
        let top = finished[idx[0]].value;
        let best = *idx
            .iter()
            .filter(|&&i| finished[i].value >= top - TIE_TOL)
            .min_by(|&&a, &&b| {
                cone.norm(&finished[a].outer)
                    .total_cmp(&cone.norm(&finished[b].outer))
                    .then(a.cmp(&b))
            })
            .expect("nonempty");
        let gap_estimate = if idx.len() > 1 {
            (top - finished[idx[1]].value).max(0.0)
        } else {
            0.0
        };
        let inner_iterations: usize = finished.iter().map(|c| c.inner.iterations).sum();
        let b = finished.into_iter().nth(best).expect("index");
        // value re-evaluated from the returned points
        let (psi_v, _) = (self.potential)(&b.inner.argmin)?;
        let (hv, _) = (self.nonlinearity)(&b.outer)?;
        let value = cone.dot(&b.outer, &cone.combine(h, -1.0, &b.inner.argmin)) + psi_v + t * hv;
        Ok(HopfSolution {
            value,
            h_outer: b.outer.clone(),
            h_inner: b.inner.argmin.clone(),
            outer_starts,
            inner_iterations,
            gap_estimate,
        })
    }
}

fn require_psd(h: &SymMatrix, field: &'static str) -> Result<()> {
    let min = min_eigenvalue(h)?;
    if min < -PSD_TOL {
        return Err(Error::invalid(
            field,
            format!("not PSD (min eigenvalue {min:e})"),
        ));
    }
    Ok(())
}

fn require_time(t: f64) -> Result<()> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::invalid(
            "t",
            format!("must be finite and >= 0, got {t}"),
        ));
    }
    Ok(())
}

fn psd_problem<'a>(
    cone: &'a PsdCone,
    potential: &'a ValueGrad<'a, SymMatrix>,
    nonlinearity: &'a ValueGrad<'a, SymMatrix>,
    psi: &dyn ConvexPotential,
    cfg: &'a SolverConfig,
) -> Problem<'a, PsdCone> {
    Problem {
        cone,
        potential,
        nonlinearity,
        ceiling: psi.gradient_ceiling(),
        radius: cfg.radius_for(cone.k),
        cfg,
    }
}

/// `inf_{h' PSD} psi(h') - h''.h'`, started at `0` and at `h''`.
pub fn inner_inf(
    psi: &dyn ConvexPotential,
    h_outer: &SymMatrix,
    cfg: &SolverConfig,
) -> Result<InnerSolution<SymMatrix>> {
    cfg.validate()?;
    if h_outer.dim() != psi.dim() {
        return Err(Error::dims(psi.dim(), h_outer.dim()));
    }
    require_psd(h_outer, "h_outer")?;
    let cone = PsdCone { k: psi.dim() };
    let potential = |x: &SymMatrix| psi.value_grad(x);
    let zero_nl = |x: &SymMatrix| Ok((0.0, SymMatrix::zeros(x.dim())));
    let problem = psd_problem(&cone, &potential, &zero_nl, psi, cfg);
    problem.inner(h_outer, &[&cone.zero(), h_outer])
}

/// The sup-inf formula at `(t, h)` on the PSD cone.
pub fn hopf_value(
    psi: &dyn ConvexPotential,
    spec: &InteractionSpec,
    t: f64,
    h: &SymMatrix,
    cfg: &SolverConfig,
) -> Result<HopfResult> {
    cfg.validate()?;
    require_time(t)?;
    let k = psi.dim();
    if spec.k() != k || h.dim() != k {
        return Err(Error::dims(
            k,
            format!("spec K={}, h {}x{}", spec.k(), h.dim(), h.dim()),
        ));
    }
    require_psd(h, "h")?;
    let cone = PsdCone { k };
    let potential = |x: &SymMatrix| psi.value_grad(x);
    let nonlinearity = |q: &SymMatrix| Ok((spec.nonlinearity_sym(q)?, spec.grad_nonlinearity(q)?));
    psd_problem(&cone, &potential, &nonlinearity, psi, cfg).solve(t, h)
}

/// Sup-inf formula on the orthant for a potential given on it directly.
#[allow(clippy::too_many_arguments)]
pub fn hopf_orthant(
    potential: &ValueGrad<'_, Vec<f64>>,
    nonlinearity: &ValueGrad<'_, Vec<f64>>,
    ceiling: Option<Vec<f64>>,
    t: f64,
    x: &[f64],
    cfg: &SolverConfig,
) -> Result<HopfSolution<Vec<f64>>> {
    cfg.validate()?;
    require_time(t)?;
    if x.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
        return Err(Error::invalid("x", "must be finite and >= 0"));
    }
    let cone = Orthant { k: x.len() };
    Problem {
        cone: &cone,
        potential,
        nonlinearity,
        ceiling,
        radius: cfg.radius_for(x.len()),
        cfg,
    }
    .solve(t, &x.to_vec())
}

const DIAGONAL_CHECK_SAMPLES: usize = 20;
const DIAGONAL_CHECK_TOL: f64 = 1e-9;

/// Relative deviation of `H(q)` from `H(diag q)` on random PSD matrices.
pub fn diagonal_dependence(spec: &InteractionSpec, seed: u64) -> Result<f64> {
    let k = spec.k();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples: Vec<SymMatrix> = (0..DIAGONAL_CHECK_SAMPLES)
        .map(|_| {
            let b = Matrix::from_fn(k, k, |_, _| rng.random_range(-1.0..1.0));
            SymMatrix::from_fn(k, |i, j| (0..k).map(|m| b.get(i, m) * b.get(j, m)).sum())
        })
        .collect();
    spec.diagonal_dependence_deviation(&samples)
}

/// Orthant form for nonlinearities that only see the diagonal:
/// `sup_{x''} inf_{x'} x''.(x - x') + psi(diag x') + t H(diag x'')`.
pub fn hopf_diagonal(
    psi: &dyn ConvexPotential,
    spec: &InteractionSpec,
    t: f64,
    x: &[f64],
    cfg: &SolverConfig,
) -> Result<HopfSolution<Vec<f64>>> {
    let k = psi.dim();
    if spec.k() != k || x.len() != k {
        return Err(Error::dims(
            k,
            format!("spec K={}, x len {}", spec.k(), x.len()),
        ));
    }
    let deviation = diagonal_dependence(spec, 0x5eed)?;
    if deviation > DIAGONAL_CHECK_TOL {
        return Err(Error::NotDiagonal { deviation });
    }
    let potential = |v: &Vec<f64>| {
        let (val, g) = psi.value_grad(&SymMatrix::from_diag(v))?;
        Ok((val, g.diag()))
    };
    let nonlinearity = |v: &Vec<f64>| {
        let q = SymMatrix::from_diag(v);
        Ok((
            spec.nonlinearity_sym(&q)?,
            spec.grad_nonlinearity(&q)?.diag(),
        ))
    };
    let ceiling = psi.gradient_ceiling().map(|c| c.diag());
    hopf_orthant(&potential, &nonlinearity, ceiling, t, x, cfg)
}

/// `psi(h) = m.h` for a fixed PSD `m`; its sup-inf value is `m.h + t H(m)`.
#[derive(Clone, Debug)]
pub struct LinearPotential {
    m: SymMatrix,
}

impl LinearPotential {
    pub fn new(m: SymMatrix) -> Result<Self> {
        require_psd(&m, "m")?;
        Ok(Self { m })
    }
}

impl ConvexPotential for LinearPotential {
    fn dim(&self) -> usize {
        self.m.dim()
    }

    fn value_grad(&self, h: &SymMatrix) -> Result<(f64, SymMatrix)> {
        let h = psd_project(h)?;
        Ok((self.m.dot(&h), self.m.clone()))
    }

    fn gradient_ceiling(&self) -> Option<SymMatrix> {
        Some(self.m.clone())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayeredResult {
    pub value: f64,
    /// Maximizing duals of the odd layers (1st, 3rd, ...).
    pub odd_duals: Vec<f64>,
    pub outer_starts: usize,
    pub gap_estimate: f64,
}

struct Layered<'a> {
    t: f64,
    layers: &'a [ScalarConvexFunction],
}

impl Layered<'_> {
    fn odd(&self) -> Vec<usize> {
        (0..self.layers.len()).step_by(2).collect()
    }

    fn upper(&self, k: usize) -> f64 {
        self.layers[k].lipschitz().min(self.layers[k].domain_max())
    }

    /// Objective, gradient, and whether any conjugate hit its search radius.
    fn eval(&self, duals: &[f64]) -> (f64, Vec<f64>, bool) {
        let n = self.layers.len();
        let mut full = vec![0.0; n + 1];
        for (slot, k) in self.odd().into_iter().enumerate() {
            full[k] = duals[slot];
        }
        let mut value = 0.0;
        let mut grad = vec![0.0; duals.len()];
        let mut exhausted = false;
        for (slot, k) in self.odd().into_iter().enumerate() {
            let (v, arg) = match conjugate_1d(&self.layers[k], full[k], None) {
                Ok(c) => (c.value, c.argmax),
                Err(Error::RadiusExhausted { radius, value }) => {
                    exhausted = true;
                    (value, radius)
                }
                Err(_) => (f64::NAN, f64::NAN),
            };
            value -= v;
            grad[slot] -= arg;
        }
        for k in (1..n).step_by(2) {
            let arg = self.t * (full[k - 1] + full[k + 1]);
            value += self.layers[k].eval(arg);
            let d = self.t * self.layers[k].derivative(arg);
            grad[(k - 1) / 2] += d;
            if k + 1 < n {
                grad[(k + 1) / 2] += d;
            }
        }
        (value, grad, exhausted)
    }

    fn clip(&self, duals: &[f64]) -> Vec<f64> {
        self.odd()
            .into_iter()
            .zip(duals)
            .map(|(k, v)| v.clamp(0.0, self.upper(k)))
            .collect()
    }

    fn ascend(&self, start: Vec<f64>, cfg: &SolverConfig) -> Result<(f64, Vec<f64>)> {
        let mut x = start;
        let (mut f, mut g, _) = self.eval(&x);
        let mut step = 1.0;
        for _ in 0..cfg.outer_cap {
            let unit = self.clip(&add(&x, 1.0, &g));
            if norm(&add(&unit, -1.0, &x)) <= cfg.outer_tol {
                return Ok((f, x));
            }
            let mut s = step;
            let accepted = loop {
                let xn = self.clip(&add(&x, s, &g));
                let d = add(&xn, -1.0, &x);
                let (fn_, gn, _) = self.eval(&xn);
                if fn_ >= f + ARMIJO * dot(&g, &d) - noise_floor(f) {
                    break Some((xn, d, fn_, gn));
                }
                s *= 0.5;
                if s < 1e-16 {
                    break None;
                }
            };
            let Some((xn, d, fn_, gn)) = accepted else {
                return Ok((f, x));
            };
            if norm(&d) == 0.0 {
                return Ok((f, x));
            }
            let sy = dot(&d, &add(&gn, -1.0, &g));
            step = if sy < 0.0 { dot(&d, &d) / -sy } else { 2.0 * s }.clamp(1e-8, 1e8);
            x = xn;
            f = fn_;
            g = gn;
        }
        Err(Error::IterationCap {
            what: "layered ascent",
            cap: cfg.outer_cap,
        })
    }
}

fn add(a: &[f64], s: f64, b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + s * y).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// The layered reduction for a chain nonlinearity with independent layers:
/// `sup_{x'_o} -sum_odd psi_k^*(x'_k) + sum_even psi_k(t x'_{k-1} + t x'_{k+1})`,
/// each dual ranging over `[0, Lip psi_k]` (the conjugate is infinite beyond).
pub fn layered_reduced(
    t: f64,
    layers: &[ScalarConvexFunction],
    cfg: &SolverConfig,
) -> Result<LayeredResult> {
    cfg.validate()?;
    require_time(t)?;
    if layers.len() < 2 {
        return Err(Error::invalid("layers", "need at least two layers"));
    }
    if layers
        .iter()
        .any(|l| !(l.lipschitz().is_finite() && l.lipschitz() >= 0.0))
    {
        return Err(Error::invalid(
            "layers",
            "every layer needs a finite Lipschitz bound",
        ));
    }
    let problem = Layered { t, layers };
    let odd = problem.odd();
    let unit_grid = product_grid(
        &thin_levels(
            &(0..cfg.grid_levels)
                .map(|i| i as f64 / (cfg.grid_levels - 1) as f64)
                .collect::<Vec<_>>(),
            odd.len(),
        ),
        odd.len(),
    );
    let mut seeds: Vec<(f64, Vec<f64>)> = unit_grid
        .into_par_iter()
        .map(|u| {
            let x: Vec<f64> = odd
                .iter()
                .zip(&u)
                .map(|(&k, s)| s * problem.upper(k))
                .collect();
            (problem.eval(&x).0, x)
        })
        .collect();
    seeds.sort_by(|a, b| b.0.total_cmp(&a.0).then(norm(&a.1).total_cmp(&norm(&b.1))));
    let mut starts: Vec<Vec<f64>> = seeds
        .into_iter()
        .filter(|s| s.0.is_finite())
        .take(cfg.multistart)
        .map(|s| s.1)
        .collect();
    let origin = vec![0.0; odd.len()];
    if !starts.contains(&origin) {
        starts.push(origin);
    }
    let outer_starts = starts.len();
    let mut finished: Vec<(f64, Vec<f64>)> = starts
        .into_par_iter()
        .map(|s| problem.ascend(s, cfg))
        .collect::<Result<_>>()?;
    finished.sort_by(|a, b| b.0.total_cmp(&a.0));
    let top = finished[0].0;
    let gap_estimate = finished.get(1).map_or(0.0, |s| (top - s.0).max(0.0));
    let best = finished
        .iter()
        .filter(|s| s.0 >= top - TIE_TOL)
        .min_by(|a, b| norm(&a.1).total_cmp(&norm(&b.1)))
        .expect("nonempty")
        .1
        .clone();
    let (value, _, exhausted) = problem.eval(&best);
    if exhausted {
        return Err(Error::RadiusExhausted {
            radius: layers
                .iter()
                .map(|l| 10.0 * (1.0 + l.lipschitz()))
                .fold(0.0, f64::max),
            value,
        });
    }
    Ok(LayeredResult {
        value,
        odd_duals: best,
        outer_starts,
        gap_estimate,
    })
}

/// `inf_y g(y) + |y - x|^2 / (4t)`, searched on `[x - 2tL - 1, x + 2tL + 1]`.
pub fn hopf_lax_1d(g: impl Fn(f64) -> f64, lipschitz: f64, t: f64, x: f64) -> Result<f64> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::invalid("t", format!("must be positive, got {t}")));
    }
    if !(lipschitz >= 0.0 && lipschitz.is_finite()) {
        return Err(Error::invalid("lipschitz", "must be finite and >= 0"));
    }
    if !x.is_finite() {
        return Err(Error::invalid("x", "must be finite"));
    }
    let half = 2.0 * t * lipschitz + 1.0;
    let objective = |y: f64| g(y) + (y - x) * (y - x) / (4.0 * t);
    let (_, neg) = golden_section_max(|y| -objective(y), x - half, x + half, 1e-10);
    Ok(-neg)
}
