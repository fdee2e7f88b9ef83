//! Sampled statistical checks of the finite-`N` structure: convexity of
//! `F̄_N`, ordered and nonnegative derivatives, and agreement of the Gibbs
//! brackets with finite differences. All comparisons pair samples through
//! common random numbers and use a `sigmas`-standard-error threshold.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::free_energy::{average_gibbs, free_energy_samples, gibbs_samples};
use crate::model::{DiscretePrior, InteractionSpec};
use crate::stats::SampleStats;
use crate::symcone::{loewner_leq, min_eigenvalue, SymMatrix};

/// Finite-difference step for derivatives of disorder averages.
pub const FD_STEP: f64 = 1e-4;
/// Tolerance for PSD-ness of averaged overlaps, which are PSD per draw.
pub const GRAD_PSD_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteConfig {
    pub n: usize,
    pub n_disorder: usize,
    pub seed: u64,
    /// Number of sampled triples or pairs.
    pub samples: usize,
    /// Times are drawn from `[t_min, t_max]`.
    pub t_min: f64,
    pub t_max: f64,
    /// Fields are `scale * B B^T / K` with `B` uniform in `[-1, 1]`.
    pub h_scale: f64,
    pub sigmas: f64,
}

impl SuiteConfig {
    pub fn new(n: usize, n_disorder: usize, seed: u64, samples: usize) -> Self {
        Self {
            n,
            n_disorder,
            seed,
            samples,
            t_min: 0.05,
            t_max: 1.0,
            h_scale: 1.0,
            sigmas: 3.0,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.samples == 0 {
            return Err(Error::invalid("samples", "must be positive"));
        }
        if !(0.0 <= self.t_min && self.t_min <= self.t_max && self.t_max.is_finite()) {
            return Err(Error::invalid("t range", "need 0 <= t_min <= t_max < inf"));
        }
        if !(self.h_scale >= 0.0 && self.h_scale.is_finite()) {
            return Err(Error::invalid("h_scale", "must be finite and >= 0"));
        }
        if !(self.sigmas > 0.0) {
            return Err(Error::invalid("sigmas", "must be positive"));
        }
        Ok(())
    }
}

/// One sampled comparison: passes when `statistic <= threshold`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub label: String,
    pub statistic: f64,
    pub threshold: f64,
    pub passed: bool,
}

impl Check {
    fn new(label: String, statistic: f64, threshold: f64) -> Self {
        Self {
            label,
            statistic,
            threshold,
            passed: statistic <= threshold,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub name: String,
    pub checks: Vec<Check>,
    pub passed: bool,
}

impl SuiteReport {
    fn new(name: &str, checks: Vec<Check>) -> Self {
        let passed = checks.iter().all(|c| c.passed);
        Self {
            name: name.to_string(),
            checks,
            passed,
        }
    }

    pub fn failures(&self) -> usize {
        self.checks.iter().filter(|c| !c.passed).count()
    }
}

fn random_field(k: usize, scale: f64, rng: &mut ChaCha8Rng) -> SymMatrix {
    let b: Vec<f64> = (0..k * k).map(|_| rng.random_range(-1.0..1.0)).collect();
    SymMatrix::from_fn(k, |i, j| {
        scale * (0..k).map(|m| b[i * k + m] * b[j * k + m]).sum::<f64>() / k as f64
    })
}

fn random_point(k: usize, cfg: &SuiteConfig, rng: &mut ChaCha8Rng) -> (f64, SymMatrix) {
    let t = cfg.t_min + (cfg.t_max - cfg.t_min) * rng.random::<f64>();
    (t, random_field(k, cfg.h_scale, rng))
}

fn describe(t: f64, h: &SymMatrix) -> String {
    format!("t={t:.4} h={:?}", h.to_rows())
}

/// `F̄_N(mid) <= (F̄_N(a) + F̄_N(b)) / 2` on random segments.
pub fn convexity_suite(spec: &InteractionSpec, prior: &DiscretePrior, cfg: &SuiteConfig) -> Result<SuiteReport> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xc0_4e_c5);
    let mut checks = Vec::with_capacity(cfg.samples);
    for _ in 0..cfg.samples {
        let (ta, ha) = random_point(spec.k(), cfg, &mut rng);
        let (tb, hb) = random_point(spec.k(), cfg, &mut rng);
        let (tm, hm) = (0.5 * (ta + tb), (&ha + &hb).scale(0.5));
        let sample = |t: f64, h: &SymMatrix| free_energy_samples(spec, prior, cfg.n, t, h, cfg.n_disorder, cfg.seed);
        let (a, b, m) = (sample(ta, &ha)?, sample(tb, &hb)?, sample(tm, &hm)?);
        let st = SampleStats::paired(&[1.0, -0.5, -0.5], &[&m, &a, &b]);
        checks.push(Check::new(
            format!("midpoint of {} and {}", describe(ta, &ha), describe(tb, &hb)),
            st.mean,
            cfg.sigmas * st.std_error,
        ));
    }
    Ok(SuiteReport::new("convexity", checks))
}

/// `(d_t, grad) F̄_N` ordered along random ordered pairs `(t1, h1) <= (t2, h2)`.
pub fn order_suite(spec: &InteractionSpec, prior: &DiscretePrior, cfg: &SuiteConfig) -> Result<SuiteReport> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x04de_4ed);
    let mut checks = Vec::with_capacity(2 * cfg.samples);
    for _ in 0..cfg.samples {
        let (t1, h1) = random_point(spec.k(), cfg, &mut rng);
        let t2 = t1 + 0.5 * (cfg.t_max - cfg.t_min) * rng.random::<f64>();
        let h2 = &h1 + &random_field(spec.k(), 0.5 * cfg.h_scale, &mut rng);
        let lo = gibbs_samples(spec, prior, cfg.n, t1, &h1, cfg.n_disorder, cfg.seed)?;
        let hi = gibbs_samples(spec, prior, cfg.n, t2, &h2, cfg.n_disorder, cfg.seed)?;
        let label = format!("{} <= {}", describe(t1, &h1), describe(t2, &h2));
        let (dlo, dhi): (Vec<f64>, Vec<f64>) = (lo.iter().map(|s| s.dt).collect(), hi.iter().map(|s| s.dt).collect());
        let st = SampleStats::paired(&[1.0, -1.0], &[&dlo, &dhi]);
        checks.push(Check::new(format!("dt: {label}"), st.mean, cfg.sigmas * st.std_error));
        // Loewner order within a tolerance from the paired per-entry errors
        let k = spec.k();
        let mut se_sq = 0.0;
        for a in 0..k {
            for b in a..k {
                let x: Vec<f64> = lo.iter().map(|s| s.grad.get(a, b)).collect();
                let y: Vec<f64> = hi.iter().map(|s| s.grad.get(a, b)).collect();
                let e = SampleStats::paired(&[1.0, -1.0], &[&x, &y]).std_error;
                se_sq += if a == b { e * e } else { 2.0 * e * e };
            }
        }
        let (glo, ghi) = (average_gibbs(&lo).grad, average_gibbs(&hi).grad);
        let tol = cfg.sigmas * se_sq.sqrt();
        let deficit = -min_eigenvalue(&(&ghi - &glo))?;
        debug_assert_eq!(deficit <= tol, loewner_leq(&glo, &ghi, tol)?);
        checks.push(Check::new(format!("grad: {label}"), deficit, tol));
    }
    Ok(SuiteReport::new("monotone gradients", checks))
}

/// `d_t F̄_N >= 0` and `grad F̄_N` PSD at random points.
pub fn positivity_suite(spec: &InteractionSpec, prior: &DiscretePrior, cfg: &SuiteConfig) -> Result<SuiteReport> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9051);
    let mut checks = Vec::with_capacity(2 * cfg.samples);
    for _ in 0..cfg.samples {
        let (t, h) = random_point(spec.k(), cfg, &mut rng);
        let avg = average_gibbs(&gibbs_samples(spec, prior, cfg.n, t, &h, cfg.n_disorder, cfg.seed)?);
        let label = describe(t, &h);
        checks.push(Check::new(format!("dt: {label}"), -avg.dt, cfg.sigmas * avg.dt_std_error));
        checks.push(Check::new(format!("grad: {label}"), -min_eigenvalue(&avg.grad)?, GRAD_PSD_TOL));
    }
    Ok(SuiteReport::new("nonnegative derivatives", checks))
}

/// Gibbs-bracket derivative against a central difference of `F̄_N`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentityCheck {
    pub t: f64,
    pub h: SymMatrix,
    /// `"t"` or the direction of the field derivative.
    pub direction: String,
    pub bracket: f64,
    pub finite_difference: f64,
    /// Standard error of the per-draw difference.
    pub std_error: f64,
    pub passed: bool,
}

/// At each `(t, h)`: disorder-averaged `dt` and `grad . e` (for every basis
/// direction `e_aa`) against central differences of `F̄_N` with step
/// [`FD_STEP`], all on the same disorder draws.
pub fn derivative_identities(
    spec: &InteractionSpec,
    prior: &DiscretePrior,
    points: &[(f64, SymMatrix)],
    cfg: &SuiteConfig,
) -> Result<Vec<IdentityCheck>> {
    let mut out = Vec::new();
    for (t, h) in points {
        if *t < FD_STEP {
            return Err(Error::invalid("t", "must be at least the difference step"));
        }
        let gibbs = gibbs_samples(spec, prior, cfg.n, *t, h, cfg.n_disorder, cfg.seed)?;
        let f = |t: f64, h: &SymMatrix| free_energy_samples(spec, prior, cfg.n, t, h, cfg.n_disorder, cfg.seed);
        let mut compare = |direction: String, bracket: Vec<f64>, plus: Vec<f64>, minus: Vec<f64>| {
            let fd: Vec<f64> = plus.iter().zip(&minus).map(|(p, m)| (p - m) / (2.0 * FD_STEP)).collect();
            let diff = SampleStats::paired(&[1.0, -1.0], &[&bracket, &fd]);
            out.push(IdentityCheck {
                t: *t,
                h: h.clone(),
                direction,
                bracket: SampleStats::new(&bracket).mean,
                finite_difference: SampleStats::new(&fd).mean,
                std_error: diff.std_error,
                passed: diff.mean.abs() <= cfg.sigmas * diff.std_error,
            });
        };
        compare(
            "t".into(),
            gibbs.iter().map(|s| s.dt).collect(),
            f(t + FD_STEP, h)?,
            f(t - FD_STEP, h)?,
        );
        for a in 0..spec.k() {
            let mut e = SymMatrix::zeros(spec.k());
            e.set(a, a, 1.0);
            // the minus side needs h - step e_aa PSD
            if min_eigenvalue(&h.axpy(-FD_STEP, &e))? < 0.0 {
                return Err(Error::NotInterior(format!("h - {FD_STEP} e_{a}{a} is not PSD")));
            }
            compare(
                format!("h[{a},{a}]"),
                gibbs.iter().map(|s| s.grad.get(a, a)).collect(),
                f(*t, &h.axpy(FD_STEP, &e))?,
                f(*t, &h.axpy(-FD_STEP, &e))?,
            );
        }
    }
    Ok(out)
}
