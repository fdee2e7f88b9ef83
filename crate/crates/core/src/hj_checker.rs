//! Finite-difference diagnostics: Hamilton-Jacobi residuals of a candidate
//! solution on interior grids, gradient-order checks, and the decay of the
//! finite-`N` free energy towards the sup-inf value.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::free_energy::{mean_free_energy_antithetic, FreeEnergyEstimate};
use crate::hopf::{hopf_value, HopfResult, SolverConfig};
use crate::initial_condition::InitialCondition;
use crate::model::{DiscretePrior, InteractionSpec};
use crate::symcone::{loewner_leq, min_eigenvalue, SymMatrix, PSD_TOL};

pub const DEFAULT_DELTA: f64 = 1e-3;
pub const DEFAULT_TOLERANCE: f64 = 1e-3;
/// One-sided differences further apart than `KINK_FACTOR * delta` mark a kink.
pub const KINK_FACTOR: f64 = 10.0;

/// A function of `(t, h)` on `[0, inf) x S^K_+`.
pub type SpaceTime<'a> = dyn Fn(f64, &SymMatrix) -> Result<f64> + Sync + 'a;

/// How the field coordinate of a grid is laid out.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum FieldGrid {
    /// `h = s I` for `n_h` values of `s` spaced evenly in `[lo, hi]`.
    Diagonal { lo: f64, hi: f64 },
    /// `n_h` random PSD matrices `shift I + scale B B^T / K`, `B` uniform in `[-1, 1]`.
    RandomPsd { seed: u64, scale: f64, shift: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub k: usize,
    pub t_min: f64,
    pub t_max: f64,
    pub n_t: usize,
    pub field: FieldGrid,
    pub n_h: usize,
    pub delta: f64,
    /// Pass threshold on `|r|`.
    pub tolerance: f64,
}

impl GridSpec {
    /// `n_t x n_h` grid with `h = s I`, default step and tolerance.
    pub fn diagonal(k: usize, t: (f64, f64, usize), h: (f64, f64, usize)) -> Self {
        Self {
            k,
            t_min: t.0,
            t_max: t.1,
            n_t: t.2,
            field: FieldGrid::Diagonal { lo: h.0, hi: h.1 },
            n_h: h.2,
            delta: DEFAULT_DELTA,
            tolerance: DEFAULT_TOLERANCE,
        }
    }

    fn fields(&self) -> Vec<SymMatrix> {
        match &self.field {
            FieldGrid::Diagonal { lo, hi } => spaced(*lo, *hi, self.n_h)
                .into_iter()
                .map(|s| SymMatrix::identity(self.k).scale(s))
                .collect(),
            FieldGrid::RandomPsd { seed, scale, shift } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let k = self.k;
                (0..self.n_h)
                    .map(|_| {
                        let b: Vec<f64> = (0..k * k).map(|_| rng.random_range(-1.0..1.0)).collect();
                        SymMatrix::from_fn(k, |i, j| {
                            let bb: f64 = (0..k).map(|m| b[i * k + m] * b[j * k + m]).sum();
                            scale * bb / k as f64 + if i == j { *shift } else { 0.0 }
                        })
                    })
                    .collect()
            }
        }
    }

    /// Grid points, `t` outermost; fails unless every point is interior.
    pub fn points(&self) -> Result<Vec<(f64, SymMatrix)>> {
        if self.k == 0 || self.n_t == 0 || self.n_h == 0 {
            return Err(Error::invalid("grid", "k, n_t and n_h must be positive"));
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::invalid("delta", "must be positive"));
        }
        if !(self.tolerance >= 0.0) {
            return Err(Error::invalid("tolerance", "must be nonnegative"));
        }
        if !(self.t_min <= self.t_max && self.t_max.is_finite()) {
            return Err(Error::invalid("t range", "need t_min <= t_max, finite"));
        }
        let fields = self.fields();
        let ts = spaced(self.t_min, self.t_max, self.n_t);
        for t in &ts {
            check_interior(*t, &fields[0], self.delta)?;
        }
        for h in &fields {
            check_interior(self.t_min, h, self.delta)?;
        }
        Ok(ts
            .iter()
            .flat_map(|&t| fields.iter().map(move |h| (t, h.clone())))
            .collect())
    }
}

fn spaced(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// Central differences at `(t, h)` stay in the domain: `t >= delta` and
/// `h - delta I` PSD.
pub fn check_interior(t: f64, h: &SymMatrix, delta: f64) -> Result<()> {
    if !(t >= delta) {
        return Err(Error::NotInterior(format!("t = {t} < delta = {delta}")));
    }
    let min = min_eigenvalue(h)?;
    if min < delta - PSD_TOL {
        return Err(Error::NotInterior(format!(
            "h - delta I not PSD (min eigenvalue of h {min:e}, delta {delta:e})"
        )));
    }
    Ok(())
}

/// Orthonormal basis of `S^K` under the Frobenius product.
fn sym_basis(k: usize) -> Vec<SymMatrix> {
    let mut out = Vec::with_capacity(k * (k + 1) / 2);
    for i in 0..k {
        for j in i..k {
            let mut e = SymMatrix::zeros(k);
            e.set(i, j, if i == j { 1.0 } else { std::f64::consts::FRAC_1_SQRT_2 });
            out.push(e);
        }
    }
    out
}

/// Finite-difference derivatives at one point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Derivatives {
    pub value: f64,
    pub dt: f64,
    pub grad: SymMatrix,
    /// Same differences with step `delta / 2`.
    pub dt_half: f64,
    pub grad_half: SymMatrix,
    pub kink: bool,
}

/// Central differences in `t` and along an orthonormal basis of `S^K`, with a
/// half-step column and a kink flag from disagreeing one-sided differences.
pub fn derivatives(f: &SpaceTime<'_>, t: f64, h: &SymMatrix, delta: f64) -> Result<Derivatives> {
    check_interior(t, h, delta)?;
    let k = h.dim();
    let basis = sym_basis(k);
    let value = f(t, h)?;
    let mut kink = false;
    // returns (central(delta), central(delta / 2)) along one direction
    let mut along = |shifted: &dyn Fn(f64) -> Result<f64>| -> Result<(f64, f64)> {
        let (p, m) = (shifted(delta)?, shifted(-delta)?);
        let (ph, mh) = (shifted(0.5 * delta)?, shifted(-0.5 * delta)?);
        let (fwd, bwd) = ((p - value) / delta, (value - m) / delta);
        if (fwd - bwd).abs() > KINK_FACTOR * delta {
            kink = true;
        }
        Ok(((p - m) / (2.0 * delta), (ph - mh) / delta))
    };
    let (dt, dt_half) = along(&|s| f(t + s, h))?;
    let mut grad = SymMatrix::zeros(k);
    let mut grad_half = SymMatrix::zeros(k);
    for e in &basis {
        let (c, ch) = along(&|s| f(t, &h.axpy(s, e)))?;
        grad = grad.axpy(c, e);
        grad_half = grad_half.axpy(ch, e);
    }
    Ok(Derivatives {
        value,
        dt,
        grad,
        dt_half,
        grad_half,
        kink,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualPoint {
    pub t: f64,
    pub h: SymMatrix,
    pub value: f64,
    pub dt: f64,
    pub grad: SymMatrix,
    /// `dt - H(grad)`
    pub residual: f64,
    /// Residual from the `delta / 2` differences.
    pub residual_half: f64,
    /// `(4 r_half - r) / 3`
    pub richardson: f64,
    pub kink: bool,
    pub pass: bool,
}

/// Quantiles of `|r|` over the non-kink points.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quantiles {
    pub min: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub max: f64,
}

impl Quantiles {
    fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let q = |p: f64| {
            let pos = p * (v.len() - 1) as f64;
            let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
            v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
        };
        Some(Self {
            min: v[0],
            q25: q(0.25),
            median: q(0.5),
            q75: q(0.75),
            max: v[v.len() - 1],
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub points: Vec<ResidualPoint>,
    pub delta: f64,
    pub tolerance: f64,
    pub n_kink: usize,
    /// Fraction of non-kink points with `|r| <= tolerance` (0 if there are none).
    pub pass_fraction: f64,
    pub kink_fraction: f64,
    pub abs_residual: Option<Quantiles>,
}

/// `r = d_t f - H(grad f)` by central differences at every grid point.
pub fn residual_grid(f: &SpaceTime<'_>, spec: &InteractionSpec, grid: &GridSpec) -> Result<ResidualReport> {
    if spec.k() != grid.k {
        return Err(Error::dims(spec.k(), grid.k));
    }
    let points = grid.points()?;
    let rows: Vec<ResidualPoint> = points
        .into_par_iter()
        .map(|(t, h)| -> Result<ResidualPoint> {
            let d = derivatives(f, t, &h, grid.delta)?;
            let residual = d.dt - spec.nonlinearity_sym(&d.grad)?;
            let residual_half = d.dt_half - spec.nonlinearity_sym(&d.grad_half)?;
            if !(residual.is_finite() && residual_half.is_finite()) {
                return Err(Error::NonFinite("residual"));
            }
            Ok(ResidualPoint {
                t,
                h,
                value: d.value,
                dt: d.dt,
                grad: d.grad,
                residual,
                residual_half,
                richardson: (4.0 * residual_half - residual) / 3.0,
                kink: d.kink,
                pass: !d.kink && residual.abs() <= grid.tolerance,
            })
        })
        .collect::<Result<_>>()?;
    let smooth: Vec<f64> = rows.iter().filter(|r| !r.kink).map(|r| r.residual.abs()).collect();
    let n_kink = rows.len() - smooth.len();
    let passed = rows.iter().filter(|r| r.pass).count();
    Ok(ResidualReport {
        pass_fraction: if smooth.is_empty() { 0.0 } else { passed as f64 / smooth.len() as f64 },
        kink_fraction: n_kink as f64 / rows.len() as f64,
        abs_residual: Quantiles::of(&smooth),
        n_kink,
        delta: grid.delta,
        tolerance: grid.tolerance,
        points: rows,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderedPair {
    pub lower: (f64, SymMatrix),
    pub upper: (f64, SymMatrix),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairCheck {
    pub pair: OrderedPair,
    pub lower: Derivatives,
    pub upper: Derivatives,
    /// Either endpoint was flagged as a kink; the pair is not judged.
    pub skipped: bool,
    pub nonnegative: bool,
    pub ordered: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonotoneReport {
    pub pairs: Vec<PairCheck>,
    pub tolerance: f64,
    pub passed: bool,
}

/// Checks that `(d_t, grad) f` lies in `[0, inf) x S^K_+` and is ordered
/// along ordered pairs, within `KINK_FACTOR * delta`. Pairs must satisfy
/// `t1 <= t2`, `h1 <= h2` (Loewner) and be interior.
pub fn monotone_gradient_check(f: &SpaceTime<'_>, pairs: &[OrderedPair], delta: f64) -> Result<MonotoneReport> {
    let tol = KINK_FACTOR * delta;
    for p in pairs {
        if p.lower.0 > p.upper.0 || !loewner_leq(&p.lower.1, &p.upper.1, PSD_TOL)? {
            return Err(Error::invalid("pairs", "each pair must be ordered (t1 <= t2, h1 <= h2)"));
        }
    }
    let checks: Vec<PairCheck> = pairs
        .par_iter()
        .map(|p| -> Result<PairCheck> {
            let lower = derivatives(f, p.lower.0, &p.lower.1, delta)?;
            let upper = derivatives(f, p.upper.0, &p.upper.1, delta)?;
            let skipped = lower.kink || upper.kink;
            let mut nonnegative = true;
            for d in [&lower, &upper] {
                nonnegative &= d.dt >= -tol && min_eigenvalue(&d.grad)? >= -tol;
            }
            let ordered = lower.dt <= upper.dt + tol && loewner_leq(&lower.grad, &upper.grad, tol)?;
            Ok(PairCheck {
                pair: p.clone(),
                lower,
                upper,
                skipped,
                nonnegative,
                ordered,
            })
        })
        .collect::<Result<_>>()?;
    let passed = checks.iter().all(|c| c.skipped || (c.nonnegative && c.ordered));
    Ok(MonotoneReport {
        pairs: checks,
        tolerance: tol,
        passed,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub n: usize,
    pub free_energy: f64,
    pub std_error: f64,
    pub hopf: f64,
    /// `F̄_N - hopf`
    pub gap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub t: f64,
    pub h: SymMatrix,
    pub n_disorder: usize,
    pub seed: u64,
    pub hopf: HopfResult,
    pub rows: Vec<ConvergenceRow>,
    /// Least-squares slope of `|gap|` against `N`.
    pub trend_slope: f64,
    /// `(|gap_first| - |gap_last|) / sqrt(se_first^2 + se_last^2)`; the
    /// sizes use independent disorder, so the errors add in quadrature.
    pub decrease_z: f64,
}

impl ConvergenceReport {
    /// `|gap|` never grows by more than `sigmas` combined standard errors
    /// from one `N` to the next.
    pub fn nonincreasing_within(&self, sigmas: f64) -> bool {
        self.rows.windows(2).all(|w| {
            let se = w[0].std_error.hypot(w[1].std_error);
            w[1].gap.abs() <= w[0].gap.abs() + sigmas * se
        })
    }
}

/// `F̄_N(t, h)` for every `N` of `n_list` against the sup-inf value at the
/// same point (initial condition by quadrature). The free energies use
/// antithetic noise pairs; see [`mean_free_energy_antithetic`].
#[allow(clippy::too_many_arguments)]
pub fn convergence_report(
    spec: &InteractionSpec,
    prior: &DiscretePrior,
    t: f64,
    h: &SymMatrix,
    n_list: &[usize],
    n_disorder: usize,
    seed: u64,
    cfg: &SolverConfig,
) -> Result<ConvergenceReport> {
    if n_list.is_empty() {
        return Err(Error::invalid("n_list", "must not be empty"));
    }
    let estimates: Vec<FreeEnergyEstimate> = n_list
        .iter()
        .map(|&n| mean_free_energy_antithetic(spec, prior, n, t, h, n_disorder, seed))
        .collect::<Result<_>>()?;
    let psi = InitialCondition::gauss_hermite(prior.clone())?;
    let hopf = hopf_value(&psi, spec, t, h, cfg)?;
    let rows: Vec<ConvergenceRow> = estimates
        .iter()
        .map(|e| ConvergenceRow {
            n: e.n,
            free_energy: e.value,
            std_error: e.std_error,
            hopf: hopf.value,
            gap: e.value - hopf.value,
        })
        .collect();
    let (first, last) = (&rows[0], &rows[rows.len() - 1]);
    let se = first.std_error.hypot(last.std_error);
    let drop = first.gap.abs() - last.gap.abs();
    let decrease_z = if se > 0.0 {
        drop / se
    } else if drop > 0.0 {
        f64::INFINITY
    } else if drop < 0.0 {
        f64::NEG_INFINITY
    } else {
        0.0
    };
    Ok(ConvergenceReport {
        t,
        h: h.clone(),
        n_disorder,
        seed,
        trend_slope: slope(&rows),
        decrease_z,
        hopf,
        rows,
    })
}

fn slope(rows: &[ConvergenceRow]) -> f64 {
    let m = rows.len() as f64;
    if rows.len() < 2 {
        return 0.0;
    }
    let xm = rows.iter().map(|r| r.n as f64).sum::<f64>() / m;
    let ym = rows.iter().map(|r| r.gap.abs()).sum::<f64>() / m;
    let sxy: f64 = rows.iter().map(|r| (r.n as f64 - xm) * (r.gap.abs() - ym)).sum();
    let sxx: f64 = rows.iter().map(|r| (r.n as f64 - xm).powi(2)).sum();
    if sxx == 0.0 {
        0.0
    } else {
        sxy / sxx
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_differences_are_exact() {
        let a = SymMatrix::from_rows(&[vec![0.7, -0.2], vec![-0.2, 1.3]]).unwrap();
        let f = move |t: f64, h: &SymMatrix| Ok(0.25 + 1.5 * t + a.dot(h));
        let h = SymMatrix::from_rows(&[vec![0.6, 0.1], vec![0.1, 0.4]]).unwrap();
        let d = derivatives(&f, 0.5, &h, 1e-3).unwrap();
        assert!((d.dt - 1.5).abs() <= 1e-12);
        let a = SymMatrix::from_rows(&[vec![0.7, -0.2], vec![-0.2, 1.3]]).unwrap();
        assert!((&d.grad - &a).max_abs() <= 1e-12);
        assert!((&d.grad_half - &a).max_abs() <= 1e-12);
        assert!(!d.kink);
    }

    #[test]
    fn kinks_are_flagged() {
        let f = |t: f64, h: &SymMatrix| Ok((t - 0.5).abs() + h.trace());
        let d = derivatives(&f, 0.5, &SymMatrix::from_diag(&[0.3]), 1e-3).unwrap();
        assert!(d.kink);
        let d = derivatives(&f, 0.7, &SymMatrix::from_diag(&[0.3]), 1e-3).unwrap();
        assert!(!d.kink);
    }

    #[test]
    fn boundary_points_rejected() {
        let grid = GridSpec::diagonal(1, (0.0, 1.0, 3), (0.1, 1.0, 3));
        assert!(matches!(grid.points(), Err(Error::NotInterior(_))));
        let grid = GridSpec::diagonal(1, (0.1, 1.0, 3), (0.0, 1.0, 3));
        assert!(matches!(grid.points(), Err(Error::NotInterior(_))));
        let f = |_: f64, _: &SymMatrix| Ok(0.0);
        assert!(derivatives(&f, 0.5, &SymMatrix::from_diag(&[0.3, 0.0]), 1e-3).is_err());
    }

    #[test]
    fn random_grid_is_interior_and_reproducible() {
        let grid = GridSpec {
            field: FieldGrid::RandomPsd { seed: 5, scale: 1.0, shift: 0.01 },
            ..GridSpec::diagonal(2, (0.1, 1.0, 2), (0.0, 0.0, 6))
        };
        let a = grid.points().unwrap();
        assert_eq!(a.len(), 12);
        assert_eq!(a, grid.points().unwrap());
    }

    #[test]
    fn quantiles_interpolate() {
        let q = Quantiles::of(&[4.0, 1.0, 3.0, 2.0, 5.0]).unwrap();
        assert_eq!((q.min, q.q25, q.median, q.q75, q.max), (1.0, 2.0, 3.0, 4.0, 5.0));
        assert!(Quantiles::of(&[]).is_none());
    }

    #[test]
    fn monotone_check_controls() {
        let h1 = SymMatrix::from_diag(&[0.2]);
        let h2 = SymMatrix::from_diag(&[0.5]);
        let pairs = vec![OrderedPair { lower: (0.2, h1.clone()), upper: (0.6, h2.clone()) }];
        let affine = |t: f64, h: &SymMatrix| Ok(0.5 * t + 2.0 * h.trace());
        assert!(monotone_gradient_check(&affine, &pairs, 1e-3).unwrap().passed);
        let decreasing = |t: f64, _: &SymMatrix| Ok(-t);
        assert!(!monotone_gradient_check(&decreasing, &pairs, 1e-3).unwrap().passed);
        // strictly convex in t: derivative grows with t
        let convex = |t: f64, h: &SymMatrix| Ok(t * t + h.trace().powi(2));
        assert!(monotone_gradient_check(&convex, &pairs, 1e-3).unwrap().passed);
        let concave = |t: f64, _: &SymMatrix| Ok((t + 1.0).ln() * 5.0 - 2.0 * t * t);
        assert!(!monotone_gradient_check(&concave, &pairs, 1e-3).unwrap().passed);
        let unordered = vec![OrderedPair { lower: (0.6, h2), upper: (0.2, h1) }];
        assert!(monotone_gradient_check(&affine, &unordered, 1e-3).is_err());
    }
}
