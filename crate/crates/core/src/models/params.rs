use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::DenseMatrix;

/// Anything that owns named parameter matrices. Names are stable and unique
/// within one value, and both methods list them in the same order.
pub trait Parameterized {
    fn params(&self) -> Vec<(String, &DenseMatrix)>;
    fn params_mut(&mut self) -> Vec<(String, &mut DenseMatrix)>;

    fn parameter_count(&self) -> usize {
        self.params().iter().map(|(_, m)| m.data().len()).sum()
    }

    /// `self += other`, parameter by parameter.
    fn accumulate(&mut self, other: &Self)
    where
        Self: Sized,
    {
        for ((_, a), (_, b)) in self.params_mut().into_iter().zip(other.params()) {
            a.add_assign(b);
        }
    }

    fn scale_all(&mut self, s: f64) {
        for (_, m) in self.params_mut() {
            m.scale(s);
        }
    }

    fn zero_all(&mut self) {
        for (_, m) in self.params_mut() {
            m.fill(0.0);
        }
    }
}

pub(crate) fn prefixed<'a>(prefix: &str, items: Vec<(String, &'a DenseMatrix)>) -> Vec<(String, &'a DenseMatrix)> {
    items.into_iter().map(|(n, m)| (format!("{prefix}.{n}"), m)).collect()
}

pub(crate) fn prefixed_mut<'a>(
    prefix: &str,
    items: Vec<(String, &'a mut DenseMatrix)>,
) -> Vec<(String, &'a mut DenseMatrix)> {
    items.into_iter().map(|(n, m)| (format!("{prefix}.{n}"), m)).collect()
}

/// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
pub fn init_uniform(rows: usize, cols: usize, fan_in: usize, rng: &mut ChaCha8Rng) -> DenseMatrix {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let mut m = DenseMatrix::zeros(rows, cols);
    for v in m.data_mut() {
        *v = rng.random_range(-bound..=bound);
    }
    m
}
