//! Exact finite-`N` free energy by enumeration of the prior support, its
//! Monte Carlo average over disorder, and Gibbs-bracket derivatives.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    draw_disorder, kron_power, DiscretePrior, Disorder, HamiltonianContext, InteractionSpec,
};
use crate::stats::{NeumaierSum, SampleStats};
use crate::symcone::{require_psd, Matrix, SymMatrix, PSD_TOL};

/// Maximum number of configurations enumerated per disorder draw.
pub const ENUMERATION_CAP: usize = 1 << 21;

pub const METHOD_ENUMERATION: &str = "enumeration-exact-in-x";

/// Disorder-averaged free energy `F̄_N(t, h)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FreeEnergyEstimate {
    pub n: usize,
    pub t: f64,
    pub h: SymMatrix,
    pub value: f64,
    pub std_error: f64,
    pub n_disorder: usize,
    pub method: String,
    pub seed: u64,
}

/// Per-disorder Gibbs-bracket derivative estimates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GibbsSummary {
    /// `N^{-p} <x^{(x)p} A> . <x^{(x)p} A>`
    pub dt: f64,
    /// `N^{-1} <x>^T <x>`
    pub grad: SymMatrix,
    /// `dt - H(grad)`
    pub residual: f64,
}

/// Disorder average of [`GibbsSummary`] with per-entry standard errors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GibbsAverage {
    pub dt: f64,
    pub dt_std_error: f64,
    pub grad: SymMatrix,
    pub grad_std_error: SymMatrix,
    pub n_disorder: usize,
}

/// Right side of the approximate Hamilton-Jacobi identity,
/// `E<dt> - H(E<grad>)`, with a delta-method standard error.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualEstimate {
    pub value: f64,
    pub std_error: f64,
    pub n_disorder: usize,
}

pub(crate) fn configuration_count(prior: &DiscretePrior, n: usize) -> Result<usize> {
    let count = (prior.len() as f64).powi(n as i32);
    if count > ENUMERATION_CAP as f64 {
        return Err(Error::EnumerationCap {
            configs: count,
            cap: ENUMERATION_CAP,
        });
    }
    Ok(prior.len().pow(n as u32))
}

struct Enumeration {
    /// `log Z / N`
    log_partition: f64,
    mean_x: Option<Matrix>,
    mean_power: Option<Matrix>,
}

/// Walks every assignment of prior atoms to the `N` rows. Row 0 is the most
/// significant digit of the configuration index.
fn for_each_configuration(
    prior: &DiscretePrior,
    n: usize,
    k: usize,
    mut visit: impl FnMut(&Matrix, f64),
) -> Result<()> {
    let count = configuration_count(prior, n)?;
    let m = prior.len();
    let log_w: Vec<f64> = prior.weights().iter().map(|w| w.ln()).collect();
    let mut digits = vec![0usize; n];
    let mut x = Matrix::zeros(n, k);
    for i in 0..n {
        x.row_mut(i).copy_from_slice(&prior.atoms()[0]);
    }
    for c in 0..count {
        if c > 0 {
            let mut i = n;
            loop {
                i -= 1;
                digits[i] += 1;
                if digits[i] < m {
                    x.row_mut(i).copy_from_slice(&prior.atoms()[digits[i]]);
                    break;
                }
                digits[i] = 0;
                x.row_mut(i).copy_from_slice(&prior.atoms()[0]);
            }
        }
        let prior_log_weight: f64 = digits.iter().map(|&a| log_w[a]).sum();
        visit(&x, prior_log_weight);
    }
    Ok(())
}

fn enumerate(
    spec: &InteractionSpec,
    prior: &DiscretePrior,
    t: f64,
    h: &SymMatrix,
    d: &Disorder,
    moments: bool,
) -> Result<Enumeration> {
    let n = d.x.rows();
    if prior.dim() != spec.k() {
        return Err(Error::dims(spec.k(), prior.dim()));
    }
    require_psd(h, PSD_TOL)?;
    let ctx = HamiltonianContext::new(spec, t, h, d)?;
    let need_power = t > 0.0 || moments;
    let p = spec.p();

    let mut log_weights = Vec::with_capacity(configuration_count(prior, n)?);
    let mut scratch = Vec::new();
    for_each_configuration(prior, n, spec.k(), |x, lw| {
        let e = if need_power {
            ctx.eval_contracted(x, &mut scratch)
        } else {
            ctx.enrichment(x)
        };
        log_weights.push(lw + e);
    })?;

    let max = log_weights
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let mut z = NeumaierSum::default();
    for lw in &log_weights {
        z.add((lw - max).exp());
    }
    let log_z = max + z.value().ln();
    let log_partition = log_z / n as f64;

    if !moments {
        return Ok(Enumeration {
            log_partition,
            mean_x: None,
            mean_power: None,
        });
    }

    let kp = spec.k().pow(p as u32);
    let np = n.pow(p as u32);
    let mut mean_x = Matrix::zeros(n, spec.k());
    let mut mean_power = Matrix::zeros(np, kp);
    let mut idx = 0;
    for_each_configuration(prior, n, spec.k(), |x, _| {
        let g = (log_weights[idx] - log_z).exp();
        idx += 1;
        if g == 0.0 {
            return;
        }
        for i in 0..n {
            for (m, v) in mean_x.row_mut(i).iter_mut().zip(x.row(i)) {
                *m += g * v;
            }
        }
        let power = kron_power(x, p).expect("tensor power size checked by disorder");
        for r in 0..np {
            for (m, v) in mean_power.row_mut(r).iter_mut().zip(power.row(r)) {
                *m += g * v;
            }
        }
    })?;
    Ok(Enumeration {
        log_partition,
        mean_x: Some(mean_x),
        mean_power: Some(mean_power),
    })
}

/// `F_N(t, h) = N^{-1} log sum_x P(x) exp(H_N(t, h, x))` for one disorder draw.
pub fn log_partition(
    spec: &InteractionSpec,
    prior: &DiscretePrior,
    t: f64,
    h: &SymMatrix,
    d: &Disorder,
) -> Result<f64> {
    Ok(enumerate(spec, prior, t, h, d, false)?.log_partition)
}

/// Exact Gibbs brackets for one disorder draw.
pub fn gibbs_derivatives(
    spec: &InteractionSpec,
    prior: &DiscretePrior,
    t: f64,
    h: &SymMatrix,
    d: &Disorder,
) -> Result<GibbsSummary> {
    let e = enumerate(spec, prior, t, h, d, true)?;
    let n = d.x.rows() as f64;
    let mean_x = e.mean_x.unwrap();
    let image = e.mean_power.unwrap().matmul(spec.a())?;
    let dt = image.dot(&image)? / n.powi(spec.p() as i32);
    let overlap = mean_x.t_matmul(&mean_x)?;
    let grad = SymMatrix::from_fn(spec.k(), |a, b| {
        0.5 * (overlap.get(a, b) + overlap.get(b, a)) / n
    });
    let residual = dt - spec.nonlinearity_sym(&grad)?;
    Ok(GibbsSummary { dt, grad, residual })
}

fn check_common(n: usize, t: f64, n_disorder: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::invalid("N", "must be at least 1"));
    }
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::invalid(
            "t",
            format!("must be finite and >= 0, got {t}"),
        ));
    }
    if n_disorder == 0 {
        return Err(Error::invalid("n_disorder", "must be at least 1"));
    }
    Ok(())
}

/// `F_N(t, h)` for disorder streams `0..n_disorder` of `seed`. The same seed
/// gives the same disorder at every `(t, h)`, so samples at different points
/// are paired (common random numbers).
#[allow(clippy::too_many_arguments)]
pub fn free_energy_samples(
    spec: &InteractionSpec,
    prior: &DiscretePrior,
    n: usize,
    t: f64,
    h: &SymMatrix,
    n_disorder: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    check_common(n, t, n_disorder)?;
    configuration_count(prior, n)?;
    require_psd(h, PSD_TOL)?;
    (0..n_disorder as u64)
        .into_par_iter()
        .map(|s| {
            let d = draw_disorder(seed, s, n, spec, prior)?;
            log_partition(spec, prior, t, h, &d)
        })
        .collect()
}

/// `F̄_N(t, h)` with its Monte Carlo standard error.
#[allow(clippy::too_many_arguments)]
pub fn mean_free_energy(
    spec: &InteractionSpec,
    prior: &DiscretePrior,
    n: usize,
    t: f64,
    h: &SymMatrix,
    n_disorder: usize,
    seed: u64,
) -> Result<FreeEnergyEstimate> {
    let samples = free_energy_samples(spec, prior, n, t, h, n_disorder, seed)?;
    let stats = SampleStats::new(&samples);
    Ok(FreeEnergyEstimate {
        n,
        t,
        h: h.clone(),
        value: stats.mean,
        std_error: stats.std_error,
        n_disorder,
        method: METHOD_ENUMERATION.to_string(),
        seed,
    })
}

pub const METHOD_ANTITHETIC: &str = "enumeration-exact-in-x, antithetic noise pairs";

/// `F̄_N(t, h)` from `n_disorder / 2` antithetic pairs: stream `j` of `seed`
/// and its mirror with `(W, Z) -> (-W, -Z)` (same `X`). The pair average is
/// unbiased; `std_error` is computed over pair averages. The first-order
/// noise fluctuation of `F_N` cancels within a pair, which matters at small
/// `N` where it dominates.
#[allow(clippy::too_many_arguments)]
pub fn mean_free_energy_antithetic(
    spec: &InteractionSpec,
    prior: &DiscretePrior,
    n: usize,
    t: f64,
    h: &SymMatrix,
    n_disorder: usize,
    seed: u64,
) -> Result<FreeEnergyEstimate> {
    check_common(n, t, n_disorder)?;
    if n_disorder < 4 || n_disorder % 2 != 0 {
        return Err(Error::invalid("n_disorder", "antithetic sampling needs an even count >= 4"));
    }
    configuration_count(prior, n)?;
    require_psd(h, PSD_TOL)?;
    let pairs: Vec<f64> = (0..(n_disorder / 2) as u64)
        .into_par_iter()
        .map(|s| {
            let d = draw_disorder(seed, s, n, spec, prior)?;
            let mirror = Disorder {
                w: Matrix::from_fn(d.w.rows(), d.w.cols(), |i, j| -d.w.get(i, j)),
                z: Matrix::from_fn(d.z.rows(), d.z.cols(), |i, j| -d.z.get(i, j)),
                ..d.clone()
            };
            Ok(0.5 * (log_partition(spec, prior, t, h, &d)? + log_partition(spec, prior, t, h, &mirror)?))
        })
        .collect::<Result<_>>()?;
    let stats = SampleStats::new(&pairs);
    Ok(FreeEnergyEstimate {
        n,
        t,
        h: h.clone(),
        value: stats.mean,
        std_error: stats.std_error,
        n_disorder,
        method: METHOD_ANTITHETIC.to_string(),
        seed,
    })
}

/// Per-disorder [`GibbsSummary`] for streams `0..n_disorder` of `seed`.
#[allow(clippy::too_many_arguments)]
pub fn gibbs_samples(
    spec: &InteractionSpec,
    prior: &DiscretePrior,
    n: usize,
    t: f64,
    h: &SymMatrix,
    n_disorder: usize,
    seed: u64,
) -> Result<Vec<GibbsSummary>> {
    check_common(n, t, n_disorder)?;
    configuration_count(prior, n)?;
    require_psd(h, PSD_TOL)?;
    (0..n_disorder as u64)
        .into_par_iter()
        .map(|s| {
            let d = draw_disorder(seed, s, n, spec, prior)?;
            gibbs_derivatives(spec, prior, t, h, &d)
        })
        .collect()
}

pub fn average_gibbs(samples: &[GibbsSummary]) -> GibbsAverage {
    let dts: Vec<f64> = samples.iter().map(|s| s.dt).collect();
    let dt = SampleStats::new(&dts);
    let k = samples[0].grad.dim();
    let mut grad = SymMatrix::zeros(k);
    let mut grad_se = SymMatrix::zeros(k);
    for a in 0..k {
        for b in a..k {
            let v: Vec<f64> = samples.iter().map(|s| s.grad.get(a, b)).collect();
            let st = SampleStats::new(&v);
            grad.set(a, b, st.mean);
            grad_se.set(a, b, st.std_error);
        }
    }
    GibbsAverage {
        dt: dt.mean,
        dt_std_error: dt.std_error,
        grad,
        grad_std_error: grad_se,
        n_disorder: samples.len(),
    }
}

/// Disorder-averaged Gibbs derivatives.
#[allow(clippy::too_many_arguments)]
pub fn mean_gibbs_derivatives(
    spec: &InteractionSpec,
    prior: &DiscretePrior,
    n: usize,
    t: f64,
    h: &SymMatrix,
    n_disorder: usize,
    seed: u64,
) -> Result<GibbsAverage> {
    Ok(average_gibbs(&gibbs_samples(
        spec, prior, n, t, h, n_disorder, seed,
    )?))
}

/// `E<dt> - H(E<grad>)` from per-disorder summaries; the standard error uses the
/// linearization `dt_i - grad H(mean grad) . grad_i`.
pub fn residual_from_samples(
    spec: &InteractionSpec,
    samples: &[GibbsSummary],
) -> Result<ResidualEstimate> {
    let avg = average_gibbs(samples);
    let value = avg.dt - spec.nonlinearity_sym(&avg.grad)?;
    let slope = spec.grad_nonlinearity(&avg.grad)?;
    let influence: Vec<f64> = samples.iter().map(|s| s.dt - slope.dot(&s.grad)).collect();
    Ok(ResidualEstimate {
        value,
        std_error: SampleStats::new(&influence).std_error,
        n_disorder: samples.len(),
    })
}

/// Disorder-averaged right side of the approximate Hamilton-Jacobi equation
/// satisfied by `F̄_N`.
#[allow(clippy::too_many_arguments)]
pub fn hj_residual_n(
    spec: &InteractionSpec,
    prior: &DiscretePrior,
    n: usize,
    t: f64,
    h: &SymMatrix,
    n_disorder: usize,
    seed: u64,
) -> Result<ResidualEstimate> {
    residual_from_samples(
        spec,
        &gibbs_samples(spec, prior, n, t, h, n_disorder, seed)?,
    )
}
