//! Exact grid simulation of a Brownian motion `W` jointly with the
//! Riemann–Liouville fractional Brownian motion `Ŵ_t = ∫_0^t K(t,s) dW_s`.
//!
//! The joint Gaussian vector `(W_{t_1..t_N}, Ŵ_{t_1..t_N})` is assembled from
//! its covariance, factorized once by Cholesky, and sampled per sample index
//! from a counter-based ChaCha stream. A second, independent stream supplies
//! the increments of the orthogonal Brownian motion `W̄`.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::quadrature::GaussLegendre;

/// Hurst index of the fractional driver, restricted to `(0, 1/2]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Hurst(f64);

impl Hurst {
    pub fn new(h: f64) -> Result<Self> {
        if h.is_finite() && h > 0.0 && h <= 0.5 {
            Ok(Self(h))
        } else {
            Err(Error::InvalidParameter(format!(
                "Hurst index must lie in (0, 1/2], got {h}"
            )))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// `H + 1/2`.
    pub fn alpha(self) -> f64 {
        self.0 + 0.5
    }

    pub fn is_brownian(self) -> bool {
        self.0 == 0.5
    }
}

/// Volterra kernel `K(t,s) = √(2H) (t-s)^{H-1/2}` for `t > s`, zero otherwise.
pub fn kernel(t: f64, s: f64, hurst: Hurst) -> f64 {
    if t <= s {
        return 0.0;
    }
    let h = hurst.value();
    (2.0 * h).sqrt() * (t - s).powf(h - 0.5)
}

/// `K1(t) = ∫_0^t K(t,s) ds = √(2H) t^{H+1/2} / (H+1/2)`.
pub fn kernel_integral(t: f64, hurst: Hurst) -> f64 {
    let a = hurst.alpha();
    (2.0 * hurst.value()).sqrt() * t.powf(a) / a
}

/// Uniform grid `t_k = kT/N`, `k = 1..N`; `t_0 = 0` is implicit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulationGrid {
    maturity: f64,
    steps: usize,
}

impl SimulationGrid {
    pub fn new(maturity: f64, steps: usize) -> Result<Self> {
        if !(maturity.is_finite() && maturity > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "maturity must be positive, got {maturity}"
            )));
        }
        if steps == 0 {
            return Err(Error::InvalidParameter("step count must be at least 1".into()));
        }
        Ok(Self { maturity, steps })
    }

    pub fn maturity(&self) -> f64 {
        self.maturity
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.maturity / self.steps as f64
    }

    /// Node `t_k` for `k = 0..=N`; `t_N` is exactly the maturity.
    pub fn time(&self, k: usize) -> f64 {
        if k == self.steps {
            self.maturity
        } else {
            k as f64 * self.maturity / self.steps as f64
        }
    }

    /// Nodes `t_1..t_N`.
    pub fn times(&self) -> Vec<f64> {
        (1..=self.steps).map(|k| self.time(k)).collect()
    }
}

const COVARIANCE_TOL: f64 = 1e-12;
const COVARIANCE_RULE_ORDER: usize = 12;

/// Covariance of `(W_{t_1..t_N}, Ŵ_{t_1..t_N})`, stored dense row-major.
#[derive(Debug, Clone)]
pub struct JointCovariance {
    steps: usize,
    hurst: Hurst,
    data: Vec<f64>,
}

impl JointCovariance {
    pub fn dim(&self) -> usize {
        2 * self.steps
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn hurst(&self) -> Hurst {
        self.hurst
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim() + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn max_diagonal(&self) -> f64 {
        (0..self.dim()).map(|i| self.get(i, i)).fold(0.0, f64::max)
    }

    /// Upper-left `N×N` block, the covariance of `W` alone.
    pub fn w_block(&self) -> Vec<f64> {
        let n = self.steps;
        let mut out = Vec::with_capacity(n * n);
        for i in 0..n {
            out.extend_from_slice(&self.data[i * self.dim()..i * self.dim() + n]);
        }
        out
    }

    /// Debug dump, row-major, 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let d = self.dim();
        for i in 0..d {
            let row: Vec<String> = (0..d).map(|j| format!("{:.16e}", self.get(i, j))).collect();
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// `Cov(W_ti, Ŵ_tj) = √(2H)/(H+1/2) · [t_j^{H+1/2} - (t_j - t_i∧t_j)^{H+1/2}]`.
pub fn cross_covariance(ti: f64, tj: f64, hurst: Hurst) -> f64 {
    let a = hurst.alpha();
    let m = ti.min(tj);
    (2.0 * hurst.value()).sqrt() / a * (tj.powf(a) - (tj - m).powf(a))
}

/// `Cov(Ŵ_s, Ŵ_t) = 2H ∫_0^{s∧t} (t-u)^{H-1/2} (s-u)^{H-1/2} du`.
///
/// With `v = (s∧t - u)^{H+1/2}` the integrable singularity disappears and the
/// integral becomes `2H/(H+1/2) ∫_0^{(s∧t)^{H+1/2}} (|t-s| + v^{1/(H+1/2)})^{H-1/2} dv`.
pub fn fbm_covariance(s: f64, t: f64, hurst: Hurst, rule: &GaussLegendre) -> Result<f64> {
    let h = hurst.value();
    let lo = s.min(t);
    let gap = (t - s).abs();
    if lo <= 0.0 {
        return Ok(0.0);
    }
    if gap == 0.0 {
        return Ok(lo.powf(2.0 * h));
    }
    if hurst.is_brownian() {
        return Ok(lo);
    }
    let a = hurst.alpha();
    let p = 1.0 / a;
    let upper = lo.powf(a);
    let integrand = |v: f64| (gap + v.powf(p)).powf(h - 0.5);
    let integral = rule.integrate_adaptive(&integrand, 0.0, upper, COVARIANCE_TOL * a / (2.0 * h))?;
    Ok(2.0 * h / a * integral)
}

/// Assembles the `2N×2N` covariance ordered `[W block; Ŵ block]`.
pub fn build_covariance(grid: &SimulationGrid, hurst: Hurst) -> Result<JointCovariance> {
    let n = grid.steps();
    let d = 2 * n;
    let times = grid.times();
    let rule = GaussLegendre::new(COVARIANCE_RULE_ORDER);
    let mut data = vec![0.0; d * d];
    for i in 0..n {
        for j in 0..n {
            data[i * d + j] = times[i].min(times[j]);
            let c = cross_covariance(times[i], times[j], hurst);
            data[i * d + n + j] = c;
            data[(n + j) * d + i] = c;
        }
    }
    for i in 0..n {
        for j in 0..=i {
            let c = fbm_covariance(times[i], times[j], hurst, &rule).map_err(|e| match e {
                Error::QuadratureFailure(estimate) => Error::Quadrature {
                    row: n + i,
                    col: n + j,
                    estimate,
                },
                other => other,
            })?;
            data[(n + i) * d + n + j] = c;
            data[(n + j) * d + n + i] = c;
        }
    }
    Ok(JointCovariance { steps: n, hurst, data })
}

/// Lower-triangular Cholesky factor in packed row-major storage.
#[derive(Debug, Clone)]
pub struct CholeskyFactor {
    dim: usize,
    packed: Vec<f64>,
    jitter: f64,
}

#[inline]
fn packed_index(i: usize, j: usize) -> usize {
    i * (i + 1) / 2 + j
}

impl CholeskyFactor {
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Diagonal jitter that was needed, zero when the plain factorization succeeded.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if j > i {
            0.0
        } else {
            self.packed[packed_index(i, j)]
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let start = packed_index(i, 0);
        &self.packed[start..start + i + 1]
    }

    /// `out = L z`.
    pub fn apply(&self, z: &[f64], out: &mut [f64]) {
        debug_assert_eq!(z.len(), self.dim);
        for (i, o) in out.iter_mut().enumerate().take(self.dim) {
            *o = dot(self.row(i), &z[..=i]);
        }
    }

    /// Dense `L Lᵀ`, used to check the factorization.
    pub fn reconstruct(&self) -> Vec<f64> {
        let d = self.dim;
        let mut out = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..=i {
                let v = dot(&self.row(i)[..=j], self.row(j));
                out[i * d + j] = v;
                out[j * d + i] = v;
            }
        }
        out
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let chunks = n / 4;
    for c in 0..chunks {
        let k = 4 * c;
        acc[0] += a[k] * b[k];
        acc[1] += a[k + 1] * b[k + 1];
        acc[2] += a[k + 2] * b[k + 2];
        acc[3] += a[k + 3] * b[k + 3];
    }
    let mut tail = 0.0;
    for k in 4 * chunks..n {
        tail += a[k] * b[k];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

const JITTER_RELATIVE: f64 = 1e-12;
const JITTER_RETRIES: usize = 3;
/// Pivots below this fraction of the largest diagonal entry count as a failure.
const PIVOT_FLOOR: f64 = 1e-14;

/// Cholesky factorization of the joint covariance.
pub fn factorize(cov: &JointCovariance) -> Result<CholeskyFactor> {
    factorize_dense(cov.dim(), cov.as_slice())
}

/// Cholesky factorization of a symmetric `dim×dim` row-major matrix.
///
/// A plain attempt is made first; on failure the diagonal is loaded with
/// `1e-12·max diag`, escalating tenfold up to three times.
pub fn factorize_dense(dim: usize, matrix: &[f64]) -> Result<CholeskyFactor> {
    if matrix.len() != dim * dim {
        return Err(Error::DimensionMismatch {
            expected: dim * dim,
            found: matrix.len(),
        });
    }
    let max_diag = (0..dim).map(|i| matrix[i * dim + i]).fold(0.0, f64::max);
    let mut jitter = 0.0;
    let mut last_failure = (0, 0.0);
    for attempt in 0..=JITTER_RETRIES {
        match try_cholesky(dim, matrix, jitter, PIVOT_FLOOR * max_diag) {
            Ok(packed) => return Ok(CholeskyFactor { dim, packed, jitter }),
            Err(failure) => last_failure = failure,
        }
        jitter = JITTER_RELATIVE * max_diag * 10f64.powi(attempt as i32);
    }
    Err(Error::NotPositiveDefinite {
        index: last_failure.0,
        pivot: last_failure.1,
    })
}

fn try_cholesky(
    dim: usize,
    matrix: &[f64],
    jitter: f64,
    floor: f64,
) -> std::result::Result<Vec<f64>, (usize, f64)> {
    let mut l = vec![0.0; dim * (dim + 1) / 2];
    for i in 0..dim {
        let row_i = packed_index(i, 0);
        for j in 0..i {
            let row_j = packed_index(j, 0);
            let s = dot(&l[row_i..row_i + j], &l[row_j..row_j + j]);
            l[row_i + j] = (matrix[i * dim + j] - s) / l[row_j + j];
        }
        let s = dot(&l[row_i..row_i + i], &l[row_i..row_i + i]);
        let pivot = matrix[i * dim + i] + jitter - s;
        if !(pivot > floor) || !pivot.is_finite() {
            return Err((i, pivot));
        }
        l[row_i + i] = pivot.sqrt();
    }
    Ok(l)
}

/// One joint draw on the grid. `w` and `w_hat` hold node values at `t_1..t_N`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianDraw {
    pub w: Vec<f64>,
    pub w_hat: Vec<f64>,
    pub w_bar_incr: Vec<f64>,
}

impl GaussianDraw {
    pub fn zeros(steps: usize) -> Self {
        Self {
            w: vec![0.0; steps],
            w_hat: vec![0.0; steps],
            w_bar_incr: vec![0.0; steps],
        }
    }
}

/// Per-sample RNG streams: `(seed, 2i)` drives `(W, Ŵ)`, `(seed, 2i+1)` drives `W̄`.
fn substream(seed: u64, index: u64, which: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((index << 1) | which);
    rng
}

/// Draws `(W, Ŵ, ΔW̄)` samples from a factorized covariance.
///
/// At `H = 1/2` the kernel is identically one and `Ŵ = W`; the sampler then
/// factorizes the `W` block alone and copies the path.
#[derive(Debug, Clone)]
pub struct Sampler {
    grid: SimulationGrid,
    factor: CholeskyFactor,
    shared_path: bool,
}

impl Sampler {
    pub fn new(grid: SimulationGrid, hurst: Hurst) -> Result<Self> {
        let cov = build_covariance(&grid, hurst)?;
        if hurst.is_brownian() {
            let factor = factorize_dense(grid.steps(), &cov.w_block())?;
            return Ok(Self { grid, factor, shared_path: true });
        }
        let factor = factorize(&cov)?;
        Self::from_factor(grid, factor)
    }

    pub fn from_factor(grid: SimulationGrid, factor: CholeskyFactor) -> Result<Self> {
        if factor.dim() != 2 * grid.steps() {
            return Err(Error::DimensionMismatch {
                expected: 2 * grid.steps(),
                found: factor.dim(),
            });
        }
        Ok(Self { grid, factor, shared_path: false })
    }

    pub fn grid(&self) -> &SimulationGrid {
        &self.grid
    }

    pub fn factor(&self) -> &CholeskyFactor {
        &self.factor
    }

    /// Writes draw number `index` of stream `seed` into `out`; `scratch` needs
    /// room for the factor dimension.
    pub fn fill(&self, seed: u64, index: u64, scratch: &mut Vec<f64>, out: &mut GaussianDraw) {
        let n = self.grid.steps();
        let d = self.factor.dim();
        scratch.resize(2 * d, 0.0);
        let (z, y) = scratch.split_at_mut(d);
        let mut rng = substream(seed, index, 0);
        for v in z.iter_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
        self.factor.apply(z, y);
        out.w.resize(n, 0.0);
        out.w_hat.resize(n, 0.0);
        out.w.copy_from_slice(&y[..n]);
        if self.shared_path {
            out.w_hat.copy_from_slice(&y[..n]);
        } else {
            out.w_hat.copy_from_slice(&y[n..2 * n]);
        }
        let sd = self.grid.dt().sqrt();
        let mut rng = substream(seed, index, 1);
        out.w_bar_incr.resize(n, 0.0);
        for v in out.w_bar_incr.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v = sd * z;
        }
    }

    pub fn draw(&self, seed: u64, index: u64) -> GaussianDraw {
        let mut out = GaussianDraw::zeros(self.grid.steps());
        let mut scratch = Vec::new();
        self.fill(seed, index, &mut scratch, &mut out);
        out
    }

    /// Lazily yields draws `0..m` of stream `seed`.
    pub fn sample_batch(&self, seed: u64, m: usize) -> impl Iterator<Item = GaussianDraw> + '_ {
        (0..m as u64).map(move |i| self.draw(seed, i))
    }
}
