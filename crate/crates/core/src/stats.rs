//! Small numerical helpers: compensated summation and sample statistics.

/// Neumaier-compensated running sum.
#[derive(Clone, Copy, Debug, Default)]
pub struct NeumaierSum {
    sum: f64,
    compensation: f64,
}

impl NeumaierSum {
    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.compensation += (self.sum - t) + v;
        } else {
            self.compensation += (v - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

/// Mean, sample standard deviation and standard error of the mean.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleStats {
    pub n: usize,
    pub mean: f64,
    pub std_dev: f64,
    pub std_error: f64,
}

impl SampleStats {
    pub fn new(samples: &[f64]) -> Self {
        let n = samples.len();
        if n == 0 {
            return Self {
                n,
                mean: f64::NAN,
                std_dev: f64::NAN,
                std_error: f64::NAN,
            };
        }
        let mut acc = NeumaierSum::default();
        samples.iter().for_each(|&v| acc.add(v));
        let mean = acc.value() / n as f64;
        let std_dev = if n > 1 {
            let ss: f64 = samples.iter().map(|v| (v - mean).powi(2)).sum();
            (ss / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self {
            n,
            mean,
            std_dev,
            std_error: std_dev / (n as f64).sqrt(),
        }
    }

    /// Statistics of the paired combination `sum_j c_j * series_j[i]`.
    pub fn paired(coefficients: &[f64], series: &[&[f64]]) -> Self {
        let n = series.first().map_or(0, |s| s.len());
        let combined: Vec<f64> = (0..n)
            .map(|i| coefficients.iter().zip(series).map(|(c, s)| c * s[i]).sum())
            .collect();
        Self::new(&combined)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn neumaier_recovers_small_terms() {
        let mut s = NeumaierSum::default();
        s.add(1.0);
        for _ in 0..10 {
            s.add(1e-17);
        }
        s.add(-1.0);
        assert!((s.value() - 1e-16).abs() < 1e-30);
    }

    #[test]
    fn sample_stats_basic() {
        let st = SampleStats::new(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(st.mean, 2.5);
        assert!((st.std_dev - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert!((st.std_error - st.std_dev / 2.0).abs() < 1e-15);
        assert_eq!(SampleStats::new(&[3.0]).std_error, 0.0);
        let p = SampleStats::paired(&[1.0, -1.0], &[&[3.0, 5.0], &[1.0, 2.0]]);
        assert_eq!(p.mean, 2.5);
    }
}
