//! Deterministic reductions and delta-method error bars.
//!
//! Monte Carlo estimators in this crate are smooth functions of sample means.
//! Each one is returned as a [`Linearized`] value: the point estimate together
//! with its per-sample influence, so that `estimate - truth ≈ mean(influence)`.
//! Linear combinations of influences give joint error bars for derived
//! quantities computed from the same batch.

/// Two-sided 95% standard normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

const PAIRWISE_BLOCK: usize = 128;

/// Pairwise summation with a fixed block size; the result depends only on the
/// order of `xs`, never on how the work was split across threads.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= PAIRWISE_BLOCK {
        let mut acc = 0.0;
        for &x in xs {
            acc += x;
        }
        return acc;
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    pairwise_sum(xs) / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return f64::NAN;
    }
    let m = mean(xs);
    let sq: Vec<f64> = xs.iter().map(|x| (x - m) * (x - m)).collect();
    pairwise_sum(&sq) / (n - 1) as f64
}

/// Point estimate plus per-sample influence values.
#[derive(Debug, Clone)]
pub struct Linearized {
    pub value: f64,
    pub influence: Vec<f64>,
}

impl Linearized {
    pub fn new(value: f64, influence: Vec<f64>) -> Self {
        Self { value, influence }
    }

    /// Sample mean with influence `x_m - mean`.
    pub fn from_mean(xs: &[f64]) -> Self {
        let m = mean(xs);
        Self::new(m, xs.iter().map(|x| x - m).collect())
    }

    /// Ratio of means `mean(num) / mean(den)`.
    pub fn ratio_of_means(num: &[f64], den: &[f64]) -> Self {
        let a = mean(num);
        let b = mean(den);
        let r = a / b;
        let infl = num
            .iter()
            .zip(den)
            .map(|(n, d)| (n - r * d) / b)
            .collect();
        Self::new(r, infl)
    }

    pub fn samples(&self) -> usize {
        self.influence.len()
    }

    /// Standard error of the estimate.
    pub fn std_error(&self) -> f64 {
        let m = self.influence.len();
        if m < 2 {
            return f64::INFINITY;
        }
        let mu = mean(&self.influence);
        let sq: Vec<f64> = self.influence.iter().map(|x| (x - mu) * (x - mu)).collect();
        (pairwise_sum(&sq) / ((m - 1) as f64 * m as f64)).sqrt()
    }

    /// Half-width of the 95% confidence interval.
    pub fn ci95(&self) -> f64 {
        Z95 * self.std_error()
    }

    /// Applies a smooth scalar map `g` with derivative `dg` at the estimate.
    pub fn map(&self, g: impl Fn(f64) -> f64, dg: f64) -> Self {
        Self::new(
            g(self.value),
            self.influence.iter().map(|x| dg * x).collect(),
        )
    }

    /// Linear combination `Σ c_i · x_i` of estimates built from the same samples.
    pub fn combine(terms: &[(f64, &Linearized)], value: f64) -> Self {
        let m = terms.first().map_or(0, |(_, l)| l.samples());
        let mut infl = vec![0.0; m];
        for (c, l) in terms {
            assert_eq!(l.samples(), m, "estimates must share a sample set");
            for (acc, x) in infl.iter_mut().zip(&l.influence) {
                *acc += c * x;
            }
        }
        Self::new(value, infl)
    }
}
