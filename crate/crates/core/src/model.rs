//! Model data: the interaction matrix `A`, the row prior, the nonlinearity
//! `H(q) = (A A^T) . q^{(x)p}` and the Hamiltonian of the enriched observation
//! channel, plus seeded disorder generation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::symcone::{sqrt_psd, Matrix, SymMatrix, PSD_TOL};

/// Upper bound on `K^p`.
pub const DESK_SCALE_GUARD: usize = 1_000_000;
/// Upper bound on the size of explicitly materialized `N^p`-row tensors.
pub const TENSOR_GUARD: usize = 10_000_000;
const GRAM_GUARD: usize = 100_000_000;

fn checked_pow(base: usize, exp: usize) -> Option<usize> {
    (0..exp).try_fold(1usize, |acc, _| acc.checked_mul(base))
}

/// Fixed model data `(K, L, p, A)`; `A` has `K^p` rows indexed by multi-indices
/// `(j_1, ..., j_p)` in lexicographic order with `j_1` most significant.
#[derive(Clone, Debug)]
pub struct InteractionSpec {
    k: usize,
    l: usize,
    p: usize,
    a: Matrix,
    /// Nonzero entries of `A A^T` as `(row, col, value)`.
    gram: Vec<(usize, usize, f64)>,
    /// `digits[j]` is the multi-index of row `j` of `A`.
    digits: Vec<Vec<usize>>,
}

impl InteractionSpec {
    pub fn new(k: usize, l: usize, p: usize, a: Matrix) -> Result<Self> {
        if k == 0 || l == 0 || p == 0 {
            return Err(Error::InvalidSpec("K, L and p must be positive".into()));
        }
        let kp = checked_pow(k, p)
            .filter(|&v| v <= DESK_SCALE_GUARD)
            .ok_or(Error::DeskScale {
                what: "K^p",
                size: (k as f64).powi(p as i32),
                guard: DESK_SCALE_GUARD,
            })?;
        if a.rows() != kp || a.cols() != l {
            return Err(Error::InvalidSpec(format!(
                "A must be {kp}x{l}, got {}x{}",
                a.rows(),
                a.cols()
            )));
        }
        if !a.is_finite() {
            return Err(Error::NonFinite("interaction matrix A"));
        }
        if kp.saturating_mul(kp) > GRAM_GUARD {
            return Err(Error::DeskScale {
                what: "K^(2p)",
                size: (kp as f64).powi(2),
                guard: GRAM_GUARD,
            });
        }
        let nonzero_rows: Vec<usize> = (0..kp)
            .filter(|&j| a.row(j).iter().any(|&v| v != 0.0))
            .collect();
        let mut gram = Vec::new();
        for &i in &nonzero_rows {
            for &j in &nonzero_rows {
                let v: f64 = a.row(i).iter().zip(a.row(j)).map(|(x, y)| x * y).sum();
                if v != 0.0 {
                    gram.push((i, j, v));
                }
            }
        }
        let digits = (0..kp).map(|j| multi_index(j, k, p)).collect();
        Ok(Self {
            k,
            l,
            p,
            a,
            gram,
            digits,
        })
    }

    /// `L = 1`, `A_j = 1` iff all entries of the multi-index `j` coincide, so that
    /// `H(q) = sum_{k,k'} q_{kk'}^p`.
    pub fn diagonal_indicator(k: usize, p: usize) -> Result<Self> {
        let kp = checked_pow(k, p).unwrap_or(usize::MAX);
        if kp > DESK_SCALE_GUARD {
            return Err(Error::DeskScale {
                what: "K^p",
                size: kp as f64,
                guard: DESK_SCALE_GUARD,
            });
        }
        let a = Matrix::from_fn(kp, 1, |j, _| {
            let d = multi_index(j, k, p);
            if d.iter().all(|&x| x == d[0]) {
                1.0
            } else {
                0.0
            }
        });
        Self::new(k, 1, p, a)
    }

    /// Nearest-neighbour layered interaction: `p = 2`, `L = K - 1`, and
    /// `A_{(k,l),r} = 1` iff `r = k = l - 1`, so that
    /// `H(q) = sum_{k < K} q_{kk} q_{k+1,k+1}`.
    pub fn nearest_neighbor_chain(k: usize) -> Result<Self> {
        if k < 2 {
            return Err(Error::InvalidSpec("chain needs K >= 2".into()));
        }
        let a = Matrix::from_fn(k * k, k - 1, |row, r| {
            let (a, b) = (row / k, row % k);
            if a == r && b == r + 1 {
                1.0
            } else {
                0.0
            }
        });
        Self::new(k, k - 1, 2, a)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn l(&self) -> usize {
        self.l
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    fn check_square(&self, q: &Matrix) -> Result<()> {
        if q.rows() != self.k || q.cols() != self.k {
            return Err(Error::dims(
                format!("{0}x{0}", self.k),
                format!("{}x{}", q.rows(), q.cols()),
            ));
        }
        Ok(())
    }

    /// `H(q) = sum_{j,j'} (A A^T)_{j j'} prod_n q_{j_n j'_n}` for any square `q`.
    pub fn nonlinearity(&self, q: &Matrix) -> Result<f64> {
        self.check_square(q)?;
        Ok(self.nonlinearity_unchecked(q))
    }

    pub(crate) fn nonlinearity_unchecked(&self, q: &Matrix) -> f64 {
        let k = self.k;
        let qd = q.data();
        let mut total = 0.0;
        for &(j, jj, g) in &self.gram {
            let (dj, djj) = (&self.digits[j], &self.digits[jj]);
            let mut prod = g;
            for n in 0..self.p {
                prod *= qd[dj[n] * k + djj[n]];
            }
            total += prod;
        }
        total
    }

    pub fn nonlinearity_sym(&self, q: &SymMatrix) -> Result<f64> {
        self.nonlinearity(&q.to_matrix())
    }

    /// Gradient of `H` on the symmetric matrices with respect to the Frobenius
    /// inner product: the symmetrized polynomial gradient.
    pub fn grad_nonlinearity(&self, q: &SymMatrix) -> Result<SymMatrix> {
        if q.dim() != self.k {
            return Err(Error::dims(self.k, q.dim()));
        }
        let k = self.k;
        let qm = q.to_matrix();
        let qd = qm.data();
        let mut d = vec![0.0; k * k];
        for &(j, jj, g) in &self.gram {
            let (dj, djj) = (&self.digits[j], &self.digits[jj]);
            for n in 0..self.p {
                let mut prod = g;
                for m in 0..self.p {
                    if m != n {
                        prod *= qd[dj[m] * k + djj[m]];
                    }
                }
                d[dj[n] * k + djj[n]] += prod;
            }
        }
        Ok(SymMatrix::from_fn(k, |a, b| {
            0.5 * (d[a * k + b] + d[b * k + a])
        }))
    }

    /// Largest deviation `|H(q) - H(diag part of q)|` over the given matrices.
    pub fn diagonal_dependence_deviation<'a>(
        &self,
        samples: impl IntoIterator<Item = &'a SymMatrix>,
    ) -> Result<f64> {
        let mut worst = 0.0f64;
        for q in samples {
            let full = self.nonlinearity_sym(q)?;
            let diag = self.nonlinearity_sym(&q.diag_part())?;
            worst = worst.max((full - diag).abs() / (1.0 + full.abs()));
        }
        Ok(worst)
    }

    /// `x^{(x)p} A`, materialized; `N^p x L`.
    pub fn tensor_image(&self, x: &Matrix) -> Result<Matrix> {
        let power = kron_power(x, self.p)?;
        power.matmul(&self.a)
    }
}

/// Digits of `j` in base `k`, most significant first, `p` digits.
pub fn multi_index(mut j: usize, k: usize, p: usize) -> Vec<usize> {
    let mut d = vec![0; p];
    for slot in d.iter_mut().rev() {
        *slot = j % k;
        j /= k;
    }
    d
}

/// `x^{(x)p}` as an `N^p x K^p` matrix.
pub fn kron_power(x: &Matrix, p: usize) -> Result<Matrix> {
    let size = (x.rows() as f64 * x.cols() as f64).powi(p as i32);
    if size > TENSOR_GUARD as f64 {
        return Err(Error::DeskScale {
            what: "x^(x)p",
            size,
            guard: TENSOR_GUARD,
        });
    }
    let mut out = x.clone();
    for _ in 1..p {
        out = out.kron(x);
    }
    Ok(out)
}

/// `x^{(x)p} . T` for `T` of shape `N^p x K^p` (row-major, Kronecker index
/// order). Removes the last row and column mode per pass.
fn contract_modes(t: &[f64], x: &Matrix, p: usize, buf: &mut Vec<f64>) -> f64 {
    let (n, k) = (x.rows(), x.cols());
    let xd = x.data();
    let (mut rows, mut cols) = (n.pow(p as u32), k.pow(p as u32));
    buf.clear();
    buf.extend_from_slice(t);
    // each output index is at most every input index it reads, so the
    // reduction can run in place in increasing order
    for _ in 0..p {
        let (r2, c2) = (rows / n, cols / k);
        for r in 0..r2 {
            for c in 0..c2 {
                let mut acc = 0.0;
                for i in 0..n {
                    let base = (r * n + i) * cols + c * k;
                    for a in 0..k {
                        acc += xd[i * k + a] * buf[base + a];
                    }
                }
                buf[r * c2 + c] = acc;
            }
        }
        rows = r2;
        cols = c2;
    }
    buf[0]
}

/// Both sides of `(x^{(x)p} A) . (x'^{(x)p} A) = H(x^T x')`: the first by explicit
/// tensor images, the second through the nonlinearity.
pub fn overlap_identity_check(
    spec: &InteractionSpec,
    x: &Matrix,
    xp: &Matrix,
) -> Result<(f64, f64)> {
    if x.cols() != spec.k() || xp.cols() != spec.k() || x.rows() != xp.rows() {
        return Err(Error::dims(
            format!("N x {}", spec.k()),
            format!("{}x{} and {}x{}", x.rows(), x.cols(), xp.rows(), xp.cols()),
        ));
    }
    let image_size = (x.rows() as f64).powi(spec.p() as i32) * spec.l() as f64;
    if image_size > TENSOR_GUARD as f64 {
        return Err(Error::DeskScale {
            what: "N^p L",
            size: image_size,
            guard: TENSOR_GUARD,
        });
    }
    let naive = spec.tensor_image(x)?.dot(&spec.tensor_image(xp)?)?;
    let via_h = spec.nonlinearity(&x.t_matmul(xp)?)?;
    Ok((naive, via_h))
}

/// Finitely supported law of one row of `X`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscretePrior {
    atoms: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

impl DiscretePrior {
    pub fn new(atoms: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::InvalidPrior("no atoms".into()));
        }
        if atoms.len() != weights.len() {
            return Err(Error::InvalidPrior(format!(
                "{} atoms but {} weights",
                atoms.len(),
                weights.len()
            )));
        }
        let k = atoms[0].len();
        if k == 0 {
            return Err(Error::InvalidPrior(
                "atoms must be non-empty vectors".into(),
            ));
        }
        for (i, v) in atoms.iter().enumerate() {
            if v.len() != k {
                return Err(Error::InvalidPrior(format!(
                    "atom {i} has length {}, expected {k}",
                    v.len()
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidPrior(format!("atom {i} is not finite")));
            }
            let norm2: f64 = v.iter().map(|x| x * x).sum();
            if norm2 > k as f64 * (1.0 + 1e-12) {
                return Err(Error::InvalidPrior(format!(
                    "atom {i} has norm {} > sqrt(K) = {}",
                    norm2.sqrt(),
                    (k as f64).sqrt()
                )));
            }
        }
        if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::InvalidPrior("weights must be positive".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidPrior(format!(
                "weights sum to {total}, expected 1"
            )));
        }
        Ok(Self { atoms, weights })
    }

    /// Uniform on `{-1, +1}`.
    pub fn rademacher() -> Self {
        Self::new(vec![vec![-1.0], vec![1.0]], vec![0.5, 0.5]).unwrap()
    }

    pub fn single_atom(v: Vec<f64>) -> Result<Self> {
        Self::new(vec![v], vec![1.0])
    }

    /// Product law of independent scalar coordinates.
    pub fn product(layers: &[DiscretePrior]) -> Result<Self> {
        if layers.iter().any(|l| l.dim() != 1) {
            return Err(Error::InvalidPrior("product layers must be scalar".into()));
        }
        let mut atoms = vec![Vec::new()];
        let mut weights = vec![1.0];
        for layer in layers {
            let mut next_a = Vec::new();
            let mut next_w = Vec::new();
            for (a, w) in atoms.iter().zip(&weights) {
                for (b, wb) in layer.atoms.iter().zip(&layer.weights) {
                    let mut v = a.clone();
                    v.push(b[0]);
                    next_a.push(v);
                    next_w.push(w * wb);
                }
            }
            atoms = next_a;
            weights = next_w;
        }
        let total: f64 = weights.iter().sum();
        let weights = weights.iter().map(|w| w / total).collect();
        Self::new(atoms, weights)
    }

    pub fn dim(&self) -> usize {
        self.atoms[0].len()
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn atoms(&self) -> &[Vec<f64>] {
        &self.atoms
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim()];
        for (a, w) in self.atoms.iter().zip(&self.weights) {
            for (mi, ai) in m.iter_mut().zip(a) {
                *mi += w * ai;
            }
        }
        m
    }

    /// `E[x x^T]` for one row.
    pub fn second_moment(&self) -> SymMatrix {
        let k = self.dim();
        SymMatrix::from_fn(k, |i, j| {
            self.atoms
                .iter()
                .zip(&self.weights)
                .map(|(a, w)| w * a[i] * a[j])
                .sum()
        })
    }

    pub(crate) fn sample_index(&self, rng: &mut impl Rng) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                return i;
            }
        }
        self.weights.len() - 1
    }
}

/// One realization of the randomness `(X, W, Z)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Disorder {
    pub x: Matrix,
    pub w: Matrix,
    pub z: Matrix,
    pub seed: u64,
    pub stream: u64,
}

/// Seeded generator for stream `stream` of `seed`. ChaCha is counter based, so
/// streams are independent and reproducible in any order.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Draws `X` (rows i.i.d. from `prior`), then `W` and `Z` (i.i.d. standard
/// normal) from stream `stream` of `seed`.
pub fn draw_disorder(
    seed: u64,
    stream: u64,
    n: usize,
    spec: &InteractionSpec,
    prior: &DiscretePrior,
) -> Result<Disorder> {
    if n == 0 {
        return Err(Error::invalid("N", "must be at least 1"));
    }
    if prior.dim() != spec.k() {
        return Err(Error::dims(
            format!("prior of dimension {}", spec.k()),
            prior.dim(),
        ));
    }
    let w_rows = checked_pow(n, spec.p())
        .filter(|r| r.saturating_mul(spec.l()) <= TENSOR_GUARD)
        .ok_or(Error::DeskScale {
            what: "W (N^p x L)",
            size: (n as f64).powi(spec.p() as i32) * spec.l() as f64,
            guard: TENSOR_GUARD,
        })?;
    let k = spec.k();
    let mut rng = stream_rng(seed, stream);
    let mut x = Matrix::zeros(n, k);
    for i in 0..n {
        let atom = &prior.atoms()[prior.sample_index(&mut rng)];
        x.row_mut(i).copy_from_slice(atom);
    }
    let w = Matrix::from_fn(w_rows, spec.l(), |_, _| rng.sample(StandardNormal));
    let z = Matrix::from_fn(n, k, |_, _| rng.sample(StandardNormal));
    Ok(Disorder {
        x,
        w,
        z,
        seed,
        stream,
    })
}

/// Quantities shared by every configuration `x` at fixed `(t, h, disorder)`.
#[derive(Clone, Debug)]
pub struct HamiltonianContext<'a> {
    spec: &'a InteractionSpec,
    /// `t / N^{p-1}`
    coupling: f64,
    /// `W A^T`, `N^p x K^p`
    noise_field: Matrix,
    signal: &'a Matrix,
    sqrt_2h: SymMatrix,
    /// `X sqrt(2h) + Z`
    y_bar: Matrix,
    h: SymMatrix,
    n: usize,
}

impl<'a> HamiltonianContext<'a> {
    pub fn new(spec: &'a InteractionSpec, t: f64, h: &SymMatrix, d: &'a Disorder) -> Result<Self> {
        if !(t >= 0.0 && t.is_finite()) {
            return Err(Error::invalid(
                "t",
                format!("must be finite and >= 0, got {t}"),
            ));
        }
        if h.dim() != spec.k() {
            return Err(Error::dims(spec.k(), h.dim()));
        }
        let n = d.x.rows();
        if d.x.cols() != spec.k() || d.z.rows() != n || d.z.cols() != spec.k() {
            return Err(Error::dims(
                format!("N x {}", spec.k()),
                format!("{}x{}", d.x.rows(), d.x.cols()),
            ));
        }
        let sqrt_2h = sqrt_psd(&h.scale(2.0))?;
        let y_bar = {
            let mut y = d.x.matmul(&sqrt_2h.to_matrix())?;
            for i in 0..n {
                for (yv, zv) in y.row_mut(i).iter_mut().zip(d.z.row(i)) {
                    *yv += zv;
                }
            }
            y
        };
        let noise_field = d.w.matmul(&spec.a().transpose())?;
        Ok(Self {
            spec,
            coupling: t / (n as f64).powi(spec.p() as i32 - 1),
            noise_field,
            signal: &d.x,
            sqrt_2h,
            y_bar,
            h: h.clone(),
            n,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// `H_N(t, h, x)` given the precomputed tensor power `x^{(x)p}`.
    pub fn eval_with_power(&self, x: &Matrix, power: &Matrix) -> f64 {
        let spec = self.spec;
        let mut value = 0.0;
        if self.coupling != 0.0 {
            let cross = spec.nonlinearity_unchecked(&x.t_matmul(self.signal).unwrap());
            let own = spec.nonlinearity_unchecked(&x.t_matmul(x).unwrap());
            let noise = power.dot(&self.noise_field).unwrap();
            value += 2.0 * self.coupling * cross + (2.0 * self.coupling).sqrt() * noise
                - self.coupling * own;
        }
        value + self.enrichment(x)
    }

    /// Same as [`eval_with_power`](Self::eval_with_power) without forming
    /// `x^{(x)p}`: the noise term is contracted one tensor mode at a time,
    /// in place in `scratch`.
    pub fn eval_contracted(&self, x: &Matrix, scratch: &mut Vec<f64>) -> f64 {
        let spec = self.spec;
        let mut value = 0.0;
        if self.coupling != 0.0 {
            let cross = spec.nonlinearity_unchecked(&x.t_matmul(self.signal).unwrap());
            let own = spec.nonlinearity_unchecked(&x.t_matmul(x).unwrap());
            let noise = contract_modes(self.noise_field.data(), x, spec.p(), scratch);
            value += 2.0 * self.coupling * cross + (2.0 * self.coupling).sqrt() * noise
                - self.coupling * own;
        }
        value + self.enrichment(x)
    }

    /// `sqrt(2h) . (x^T Ybar) - h . (x^T x)`
    pub fn enrichment(&self, x: &Matrix) -> f64 {
        let k = self.spec.k();
        let mut value = 0.0;
        for r in 0..self.n {
            let xr = x.row(r);
            let yr = self.y_bar.row(r);
            for a in 0..k {
                for b in 0..k {
                    value +=
                        self.sqrt_2h.get(a, b) * xr[a] * yr[b] - self.h.get(a, b) * xr[a] * xr[b];
                }
            }
        }
        value
    }

    pub fn eval(&self, x: &Matrix) -> Result<f64> {
        if x.rows() != self.n || x.cols() != self.spec.k() {
            return Err(Error::dims(
                format!("{}x{}", self.n, self.spec.k()),
                format!("{}x{}", x.rows(), x.cols()),
            ));
        }
        let power = if self.coupling != 0.0 {
            kron_power(x, self.spec.p())?
        } else {
            Matrix::zeros(0, 0)
        };
        Ok(self.eval_with_power(x, &power))
    }
}

/// `H_N(t, h, x) = H°_N(t, x) + sqrt(2h) . (x^T Ybar) - h . (x^T x)`.
pub fn hamiltonian(
    spec: &InteractionSpec,
    t: f64,
    h: &SymMatrix,
    x: &Matrix,
    d: &Disorder,
) -> Result<f64> {
    crate::symcone::require_psd(h, PSD_TOL)?;
    HamiltonianContext::new(spec, t, h, d)?.eval(x)
}

/// Model file: a `[model]` table with `k`, `p` and `a` (row-major rows, or
/// the preset `"diagonal-indicator"` / `"nearest-neighbor-chain"`), and a
/// `[prior]` table with `atoms` and `weights`, or `preset = "rademacher"`
/// (`K` independent signs).
///
/// ```toml
/// [model]
/// k = 1
/// p = 3
/// a = "diagonal-indicator"
///
/// [prior]
/// atoms = [[-1.0], [1.0]]
/// weights = [0.5, 0.5]
/// ```
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub model: ModelSection,
    pub prior: PriorSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub k: usize,
    pub p: usize,
    pub a: InteractionMatrix,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InteractionMatrix {
    Preset(String),
    Rows(Vec<Vec<f64>>),
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorSection {
    pub preset: Option<String>,
    pub atoms: Option<Vec<Vec<f64>>>,
    pub weights: Option<Vec<f64>>,
}

impl PriorSection {
    /// The prior on `R^k`; the `"rademacher"` preset is the `k`-fold product.
    pub fn build(&self, k: usize) -> Result<DiscretePrior> {
        let PriorSection { preset, atoms, weights } = self;
        match (preset.as_deref(), atoms, weights) {
            (Some("rademacher"), None, None) => {
                DiscretePrior::product(&vec![DiscretePrior::rademacher(); k])
            }
            (Some(other), None, None) => Err(Error::ModelFile(format!("unknown prior preset `{other}`"))),
            (None, Some(a), Some(w)) => DiscretePrior::new(a.clone(), w.clone()),
            _ => Err(Error::ModelFile(
                "prior needs either `preset` or both `atoms` and `weights`".into(),
            )),
        }
    }
}

impl ModelFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::ModelFile(e.to_string()))
    }

    pub fn spec(&self) -> Result<InteractionSpec> {
        let ModelSection { k, p, a } = &self.model;
        match a {
            InteractionMatrix::Preset(name) => match name.as_str() {
                "diagonal-indicator" => InteractionSpec::diagonal_indicator(*k, *p),
                "nearest-neighbor-chain" if *p == 2 => InteractionSpec::nearest_neighbor_chain(*k),
                "nearest-neighbor-chain" => Err(Error::ModelFile("nearest-neighbor-chain needs p = 2".into())),
                other => Err(Error::ModelFile(format!("unknown interaction preset `{other}`"))),
            },
            InteractionMatrix::Rows(rows) => {
                let l = rows.first().map_or(0, |r| r.len());
                InteractionSpec::new(*k, l, *p, Matrix::from_rows(rows)?)
            }
        }
    }

    pub fn prior(&self) -> Result<DiscretePrior> {
        self.prior.build(self.model.k)
    }

    /// Parses and validates both parts, checking that their dimensions agree.
    pub fn load(text: &str) -> Result<(InteractionSpec, DiscretePrior)> {
        Self::parse(text)?.resolve()
    }

    /// Validates both parts and checks that their dimensions agree.
    pub fn resolve(&self) -> Result<(InteractionSpec, DiscretePrior)> {
        let (spec, prior) = (self.spec()?, self.prior()?);
        if prior.dim() != spec.k() {
            return Err(Error::ModelFile(format!(
                "prior atoms have dimension {}, model has K = {}",
                prior.dim(),
                spec.k()
            )));
        }
        Ok((spec, prior))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symcone::{loewner_leq, psd_project};
    use proptest::prelude::*;
    use rand::Rng;

    fn rand_matrix(rng: &mut impl Rng, r: usize, c: usize) -> Matrix {
        Matrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    fn rand_psd(rng: &mut impl Rng, k: usize) -> SymMatrix {
        let b = rand_matrix(rng, k, k);
        let g = b.matmul(&b.transpose()).unwrap();
        SymMatrix::from_fn(k, |i, j| g.get(i, j))
    }

    fn rand_spec(rng: &mut impl Rng, k: usize, l: usize, p: usize) -> InteractionSpec {
        let a = rand_matrix(rng, k.pow(p as u32), l);
        InteractionSpec::new(k, l, p, a).unwrap()
    }

    #[test]
    fn h_examples() {
        let spec = InteractionSpec::diagonal_indicator(2, 2).unwrap();
        assert_eq!(spec.nonlinearity(&Matrix::zeros(2, 2)).unwrap(), 0.0);
        assert_eq!(spec.nonlinearity_sym(&SymMatrix::identity(2)).unwrap(), 2.0);
        let q = SymMatrix::from_rows(&[vec![0.3, -0.7], vec![-0.7, 1.1]]).unwrap();
        let expect: f64 = [0.3f64, -0.7, -0.7, 1.1].iter().map(|v| v.powi(2)).sum();
        assert!((spec.nonlinearity_sym(&q).unwrap() - expect).abs() < 1e-15);

        let spec = InteractionSpec::diagonal_indicator(1, 3).unwrap();
        let c = -0.4f64;
        assert!(
            (spec.nonlinearity_sym(&SymMatrix::from_diag(&[c])).unwrap() - c.powi(3)).abs() < 1e-16
        );
        assert!(spec.nonlinearity(&Matrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn chain_nonlinearity_is_diagonal() {
        let spec = InteractionSpec::nearest_neighbor_chain(3).unwrap();
        let q = SymMatrix::from_rows(&[
            vec![1.0, 0.4, 0.2],
            vec![0.4, 2.0, -0.3],
            vec![0.2, -0.3, 3.0],
        ])
        .unwrap();
        assert!((spec.nonlinearity_sym(&q).unwrap() - (2.0 + 6.0)).abs() < 1e-14);
        assert_eq!(spec.diagonal_dependence_deviation([&q]).unwrap(), 0.0);
        let sp = InteractionSpec::diagonal_indicator(3, 2).unwrap();
        assert!(sp.diagonal_dependence_deviation([&q]).unwrap() > 0.01);
    }

    #[test]
    fn grad_examples() {
        let spec = InteractionSpec::diagonal_indicator(2, 3).unwrap();
        assert_eq!(
            spec.grad_nonlinearity(&SymMatrix::zeros(2))
                .unwrap()
                .max_abs(),
            0.0
        );
        let spec = InteractionSpec::diagonal_indicator(1, 3).unwrap();
        let g = spec
            .grad_nonlinearity(&SymMatrix::from_diag(&[0.7]))
            .unwrap();
        assert!((g.get(0, 0) - 3.0 * 0.49).abs() < 1e-15);
    }

    fn fd_check(spec: &InteractionSpec, q: &SymMatrix, step: f64) -> f64 {
        let g = spec.grad_nonlinearity(q).unwrap();
        let k = q.dim();
        let mut worst = 0.0f64;
        for a in 0..k {
            for b in a..k {
                let mut e = SymMatrix::zeros(k);
                e.set(a, b, 1.0);
                let fp = spec.nonlinearity_sym(&q.axpy(step, &e)).unwrap();
                let fm = spec.nonlinearity_sym(&q.axpy(-step, &e)).unwrap();
                let fd = (fp - fm) / (2.0 * step);
                worst = worst.max((fd - g.dot(&e)).abs());
            }
        }
        worst
    }

    #[test]
    fn grad_matches_central_difference_k2_p2() {
        let mut rng = stream_rng(11, 0);
        let spec = rand_spec(&mut rng, 2, 3, 2);
        for _ in 0..10 {
            let q = SymMatrix::from_fn(2, |_, _| rng.random_range(-1.0..1.0));
            assert!(fd_check(&spec, &q, 1e-5) < 1e-8);
        }
    }

    #[test]
    fn grad_matches_finite_differences_on_psd() {
        let mut rng = stream_rng(12, 0);
        for k in 1..=4usize {
            for p in 1..=4usize {
                if k.pow(p as u32) > 64 {
                    continue;
                }
                let spec = rand_spec(&mut rng, k, 2, p);
                for _ in 0..3 {
                    let q = rand_psd(&mut rng, k).scale(0.5);
                    let scale = 1.0 + spec.nonlinearity_sym(&q).unwrap().abs();
                    assert!(
                        fd_check(&spec, &q, 1e-5) < 1e-7 * scale * 10.0,
                        "k={k} p={p}"
                    );
                }
            }
        }
    }

    #[test]
    fn overlap_identity_examples() {
        let spec =
            InteractionSpec::new(1, 1, 2, Matrix::from_vec(1, 1, vec![1.0]).unwrap()).unwrap();
        let zero = Matrix::zeros(3, 1);
        assert_eq!(
            overlap_identity_check(&spec, &zero, &zero).unwrap(),
            (0.0, 0.0)
        );
        let ones = Matrix::from_vec(3, 1, vec![1.0; 3]).unwrap();
        assert_eq!(
            overlap_identity_check(&spec, &ones, &ones).unwrap(),
            (9.0, 9.0)
        );

        let spec = InteractionSpec::diagonal_indicator(2, 3).unwrap();
        let mut rng = stream_rng(3, 0);
        let x = rand_matrix(&mut rng, 2, 2);
        let y = rand_matrix(&mut rng, 2, 2);
        let (a, b) = overlap_identity_check(&spec, &x, &y).unwrap();
        assert!((a - b).abs() < 1e-10);
    }

    #[test]
    fn overlap_identity_random_batch() {
        let mut rng = stream_rng(4, 0);
        let mut done = 0;
        while done < 100 {
            let k = rng.random_range(1..=3usize);
            let p = rng.random_range(1..=3usize);
            let n = rng.random_range(1..=4usize);
            let l = rng.random_range(1..=3usize);
            if n.pow(p as u32) * l > 10_000 {
                continue;
            }
            let spec = rand_spec(&mut rng, k, l, p);
            let x = rand_matrix(&mut rng, n, k);
            let y = rand_matrix(&mut rng, n, k);
            let (a, b) = overlap_identity_check(&spec, &x, &y).unwrap();
            assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()), "{a} vs {b}");
            done += 1;
        }
    }

    #[test]
    fn h_is_monotone_and_nonnegative_on_cone() {
        let mut rng = stream_rng(5, 0);
        for _ in 0..100 {
            let k = rng.random_range(1..=3usize);
            let p = rng.random_range(1..=3usize);
            let spec = rand_spec(&mut rng, k, 2, p);
            let a = rand_psd(&mut rng, k);
            let c = rand_matrix(&mut rng, k, 1);
            let b = &a + &SymMatrix::outer(c.data());
            assert!(loewner_leq(&a, &b, PSD_TOL).unwrap());
            let (ha, hb) = (
                spec.nonlinearity_sym(&a).unwrap(),
                spec.nonlinearity_sym(&b).unwrap(),
            );
            assert!(ha >= -1e-12 && ha <= hb + 1e-12, "H(a)={ha} H(b)={hb}");
        }
    }

    #[test]
    fn prior_validation() {
        assert!(DiscretePrior::new(vec![vec![2.0]], vec![1.0]).is_err());
        assert!(DiscretePrior::new(vec![vec![1.0], vec![-1.0]], vec![0.5, 0.6]).is_err());
        assert!(DiscretePrior::new(vec![vec![1.0], vec![1.0, 0.0]], vec![0.5, 0.5]).is_err());
        assert!(DiscretePrior::new(vec![vec![1.0, 1.0]], vec![1.0]).is_ok());
        let p = DiscretePrior::product(&[DiscretePrior::rademacher(), DiscretePrior::rademacher()])
            .unwrap();
        assert_eq!(p.len(), 4);
        assert!((&p.second_moment() - &SymMatrix::identity(2)).norm() < 1e-15);
    }

    #[test]
    fn disorder_is_deterministic() {
        let spec = InteractionSpec::diagonal_indicator(2, 2).unwrap();
        let prior =
            DiscretePrior::product(&[DiscretePrior::rademacher(), DiscretePrior::rademacher()])
                .unwrap();
        let a = draw_disorder(9, 3, 4, &spec, &prior).unwrap();
        let b = draw_disorder(9, 3, 4, &spec, &prior).unwrap();
        assert_eq!(a, b);
        let c = draw_disorder(9, 4, 4, &spec, &prior).unwrap();
        assert_ne!(a.w, c.w);
        assert_eq!(a.w.rows(), 16);
    }

    #[test]
    fn disorder_row_frequencies_match_prior() {
        let spec = InteractionSpec::diagonal_indicator(1, 1).unwrap();
        let prior = DiscretePrior::new(vec![vec![-1.0], vec![0.0], vec![1.0]], vec![0.2, 0.3, 0.5])
            .unwrap();
        let n = 100_000;
        let d = draw_disorder(21, 0, n, &spec, &prior).unwrap();
        for (atom, &w) in prior.atoms().iter().zip(prior.weights()) {
            let count = (0..n).filter(|&i| d.x.get(i, 0) == atom[0]).count() as f64;
            let se = (w * (1.0 - w) / n as f64).sqrt();
            assert!((count / n as f64 - w).abs() < 3.0 * se, "atom {atom:?}");
        }
        let mean_w = d.w.data().iter().sum::<f64>() / n as f64;
        assert!(mean_w.abs() < 3.0 / (n as f64).sqrt());
    }

    fn scalar_disorder() -> (InteractionSpec, Disorder) {
        let spec =
            InteractionSpec::new(1, 1, 2, Matrix::from_vec(1, 1, vec![0.8]).unwrap()).unwrap();
        let d = draw_disorder(5, 0, 1, &spec, &DiscretePrior::rademacher()).unwrap();
        (spec, d)
    }

    #[test]
    fn hamiltonian_vanishes_at_origin() {
        let spec = InteractionSpec::diagonal_indicator(1, 2).unwrap();
        let d = draw_disorder(1, 0, 3, &spec, &DiscretePrior::rademacher()).unwrap();
        let x = Matrix::from_vec(3, 1, vec![1.0, -1.0, 1.0]).unwrap();
        assert_eq!(
            hamiltonian(&spec, 0.0, &SymMatrix::zeros(1), &x, &d).unwrap(),
            0.0
        );
    }

    #[test]
    fn hamiltonian_scalar_transcription() {
        let (spec, d) = scalar_disorder();
        let (t, hh, xv) = (0.7f64, 0.3f64, 0.6f64);
        let (a, xs, w, z) = (0.8f64, d.x.get(0, 0), d.w.get(0, 0), d.z.get(0, 0));
        // N = 1: Y = sqrt(2t) X^2 a + W
        let y = (2.0 * t).sqrt() * xs * xs * a + w;
        let h0 = (2.0 * t).sqrt() * xv * xv * a * y - t * (xv * xv * a).powi(2);
        let ybar = xs * (2.0 * hh).sqrt() + z;
        let expect = h0 + (2.0 * hh).sqrt() * xv * ybar - hh * xv * xv;
        let x = Matrix::from_vec(1, 1, vec![xv]).unwrap();
        let got = hamiltonian(&spec, t, &SymMatrix::from_diag(&[hh]), &x, &d).unwrap();
        assert!((got - expect).abs() < 1e-13, "{got} vs {expect}");
        // h = 0 leaves only the tensor channel
        let got0 = hamiltonian(&spec, t, &SymMatrix::zeros(1), &x, &d).unwrap();
        assert!((got0 - h0).abs() < 1e-13);
    }

    #[test]
    fn hamiltonian_matches_explicit_observation() {
        let spec = InteractionSpec::diagonal_indicator(2, 2).unwrap();
        let prior =
            DiscretePrior::product(&[DiscretePrior::rademacher(), DiscretePrior::rademacher()])
                .unwrap();
        let n = 3;
        let d = draw_disorder(17, 2, n, &spec, &prior).unwrap();
        let t = 0.9;
        let h = SymMatrix::from_rows(&[vec![0.5, 0.1], vec![0.1, 0.3]]).unwrap();
        let mut rng = stream_rng(0, 0);
        let x = rand_matrix(&mut rng, n, 2);
        let c = t / n as f64;
        let sx = spec.tensor_image(&d.x).unwrap();
        let mut y = sx.clone();
        for i in 0..y.rows() {
            for j in 0..y.cols() {
                y.set(i, j, (2.0 * c).sqrt() * sx.get(i, j) + d.w.get(i, j));
            }
        }
        let ix = spec.tensor_image(&x).unwrap();
        let h0 = (2.0 * c).sqrt() * ix.dot(&y).unwrap() - c * ix.dot(&ix).unwrap();
        let s = sqrt_psd(&h.scale(2.0)).unwrap().to_matrix();
        let mut ybar = d.x.matmul(&s).unwrap();
        for i in 0..n {
            for j in 0..2 {
                ybar.set(i, j, ybar.get(i, j) + d.z.get(i, j));
            }
        }
        let expect = h0 + s.dot(&x.t_matmul(&ybar).unwrap()).unwrap()
            - h.to_matrix().dot(&x.t_matmul(&x).unwrap()).unwrap();
        let got = hamiltonian(&spec, t, &h, &x, &d).unwrap();
        assert!((got - expect).abs() < 1e-12 * (1.0 + expect.abs()));
    }

    #[test]
    fn contracted_evaluation_matches_tensor_power() {
        let prior =
            DiscretePrior::product(&[DiscretePrior::rademacher(), DiscretePrior::rademacher()])
                .unwrap();
        let h = SymMatrix::from_rows(&[vec![0.4, 0.2], vec![0.2, 0.7]]).unwrap();
        let mut scratch = Vec::new();
        for (p, n) in [(2, 4), (3, 3)] {
            let spec = if p == 2 {
                InteractionSpec::nearest_neighbor_chain(2).unwrap()
            } else {
                InteractionSpec::diagonal_indicator(2, p).unwrap()
            };
            let d = draw_disorder(5, p as u64, n, &spec, &prior).unwrap();
            let ctx = HamiltonianContext::new(&spec, 0.8, &h, &d).unwrap();
            let x = rand_matrix(&mut stream_rng(1, p as u64), n, 2);
            let a = ctx.eval_with_power(&x, &kron_power(&x, p).unwrap());
            let b = ctx.eval_contracted(&x, &mut scratch);
            assert!((a - b).abs() < 1e-12 * (1.0 + a.abs()), "{a} {b}");
        }
    }

    #[test]
    fn hamiltonian_rejects_bad_input() {
        let (spec, d) = scalar_disorder();
        let x = Matrix::from_vec(1, 1, vec![1.0]).unwrap();
        assert!(matches!(
            hamiltonian(&spec, 0.1, &SymMatrix::from_diag(&[-1.0]), &x, &d),
            Err(Error::NotPsd { .. })
        ));
        assert!(hamiltonian(&spec, -0.1, &SymMatrix::zeros(1), &x, &d).is_err());
    }

    proptest! {
        #[test]
        fn h_nonnegative_on_projected_inputs(v in proptest::collection::vec(-2.0f64..2.0, 3), p in 1usize..4) {
            let spec = InteractionSpec::diagonal_indicator(2, p).unwrap();
            let q = psd_project(&SymMatrix::from_upper(2, v).unwrap()).unwrap();
            prop_assert!(spec.nonlinearity_sym(&q).unwrap() >= -1e-12);
        }
    }

    #[test]
    fn model_file_presets_and_explicit_matrices() {
        let (spec, prior) = ModelFile::load(
            "[model]\nk = 1\np = 3\na = \"diagonal-indicator\"\n[prior]\natoms = [[-1.0], [1.0]]\nweights = [0.5, 0.5]\n",
        )
        .unwrap();
        assert_eq!((spec.k(), spec.p(), spec.l()), (1, 3, 1));
        assert_eq!(prior, DiscretePrior::rademacher());

        let (spec, prior) = ModelFile::load(
            "[model]\nk = 2\np = 1\na = [[1.0, 0.0], [0.5, 2.0]]\n[prior]\npreset = \"rademacher\"\n",
        )
        .unwrap();
        assert_eq!((spec.k(), spec.l()), (2, 2));
        assert_eq!(prior.len(), 4);

        let chain = ModelFile::load("[model]\nk = 3\np = 2\na = \"nearest-neighbor-chain\"\n[prior]\npreset = \"rademacher\"\n");
        assert_eq!(chain.unwrap().0.l(), 2);
    }

    #[test]
    fn model_file_rejections() {
        for text in [
            "[model]\nk = 1\np = 2\na = \"nope\"\n[prior]\npreset = \"rademacher\"\n",
            "[model]\nk = 1\np = 2\na = [[1.0], [2.0]]\n[prior]\npreset = \"rademacher\"\n",
            "[model]\nk = 2\np = 2\na = \"diagonal-indicator\"\n[prior]\natoms = [[1.0]]\nweights = [1.0]\n",
            "[model]\nk = 1\np = 2\na = \"diagonal-indicator\"\n[prior]\natoms = [[1.0]]\n",
            "[model]\nk = 1\np = 2\na = \"diagonal-indicator\"\nextra = 1\n[prior]\npreset = \"rademacher\"\n",
            "[model]\nk = 1\np = 2\na = \"diagonal-indicator\"\n[prior]\natoms = [[3.0]]\nweights = [1.0]\n",
        ] {
            assert!(ModelFile::load(text).is_err(), "{text}");
        }
    }
}
