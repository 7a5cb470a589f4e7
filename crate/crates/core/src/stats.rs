//! Small statistics helpers: batch-means jackknife and summary moments.

/// Default number of batches for batch-means standard errors.
pub const DEFAULT_BATCHES: usize = 50;

/// Per-batch means of a sample stream plus the overall mean.
///
/// The overall mean is the plain sample mean; batches are contiguous and
/// the last batch absorbs the remainder.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchMeans {
    pub mean: f64,
    pub batches: Vec<f64>,
    pub sizes: Vec<usize>,
}

impl BatchMeans {
    /// Exact (zero-variance) value without batch structure.
    pub fn exact(value: f64) -> Self {
        Self {
            mean: value,
            batches: Vec::new(),
            sizes: Vec::new(),
        }
    }

    pub fn from_values(values: &[f64], n_batches: usize) -> Self {
        let n = values.len();
        if n == 0 {
            return Self::exact(f64::NAN);
        }
        let nb = n_batches.clamp(1, n);
        let base = n / nb;
        let mut batches = Vec::with_capacity(nb);
        let mut sizes = Vec::with_capacity(nb);
        let mut total = 0.0;
        for b in 0..nb {
            let lo = b * base;
            let hi = if b + 1 == nb { n } else { lo + base };
            let s: f64 = values[lo..hi].iter().sum();
            total += s;
            batches.push(s / (hi - lo) as f64);
            sizes.push(hi - lo);
        }
        Self {
            mean: total / n as f64,
            batches,
            sizes,
        }
    }

    pub fn is_exact(&self) -> bool {
        self.batches.is_empty()
    }

    /// Mean with batch `skip` removed.
    fn leave_out(&self, skip: usize) -> f64 {
        let total: usize = self.sizes.iter().sum();
        let sum = self.mean * total as f64 - self.batches[skip] * self.sizes[skip] as f64;
        sum / (total - self.sizes[skip]) as f64
    }

    /// Standard error of the mean.
    pub fn stderr(&self) -> f64 {
        jackknife(std::slice::from_ref(self), |v| v[0]).1
    }
}

/// Delete-one-batch jackknife of a smooth functional of several batch-mean
/// vectors that share one batch layout. Exact inputs (no batches) are held
/// fixed. Returns `(value, stderr)`.
pub fn jackknife(inputs: &[BatchMeans], f: impl Fn(&[f64]) -> f64) -> (f64, f64) {
    let means: Vec<f64> = inputs.iter().map(|b| b.mean).collect();
    let value = f(&means);
    let nb = inputs
        .iter()
        .filter(|b| !b.is_exact())
        .map(|b| b.batches.len())
        .max()
        .unwrap_or(0);
    if nb < 2 {
        return (value, 0.0);
    }
    let mut reps = Vec::with_capacity(nb);
    let mut buf = means.clone();
    for k in 0..nb {
        for (slot, inp) in buf.iter_mut().zip(inputs) {
            *slot = if inp.is_exact() || k >= inp.batches.len() {
                inp.mean
            } else {
                inp.leave_out(k)
            };
        }
        reps.push(f(&buf));
    }
    let bar = reps.iter().sum::<f64>() / nb as f64;
    let ss: f64 = reps.iter().map(|r| (r - bar).powi(2)).sum();
    let var = ss * (nb as f64 - 1.0) / nb as f64;
    (value, var.max(0.0).sqrt())
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Linear-interpolated empirical quantile of an unsorted slice.
pub fn quantile(xs: &[f64], q: f64) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

pub fn median(xs: &[f64]) -> f64 {
    quantile(xs, 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batch_means_stderr_matches_iid_formula_for_equal_batches() {
        let values: Vec<f64> = (0..1000).map(|i| ((i * 7919) % 113) as f64).collect();
        let bm = BatchMeans::from_values(&values, 50);
        assert!((bm.mean - mean(&values)).abs() < 1e-12);
        // batch-means variance: var(batch means) / n_batches
        let v = variance(&bm.batches) / 50.0;
        assert!((bm.stderr() - v.sqrt()).abs() < 1e-10);
    }

    #[test]
    fn exact_inputs_have_zero_stderr() {
        let (v, se) = jackknife(&[BatchMeans::exact(2.0), BatchMeans::exact(3.0)], |m| m[0] * m[1]);
        assert_eq!(v, 6.0);
        assert_eq!(se, 0.0);
    }

    #[test]
    fn quantiles() {
        let xs = [3.0, 1.0, 2.0, 4.0];
        assert_eq!(median(&xs), 2.5);
        assert_eq!(quantile(&xs, 0.0), 1.0);
        assert_eq!(quantile(&xs, 1.0), 4.0);
    }
}
