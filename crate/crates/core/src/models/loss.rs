use super::matrix::dot;
use super::{DenseMatrix, ModelError};

/// `score_i = <u, C_i>`.
pub fn score_candidates(user: &[f64], candidates: &DenseMatrix) -> Result<Vec<f64>, ModelError> {
    if candidates.cols() != user.len() {
        return Err(ModelError::DimensionMismatch {
            context: "candidate vector width",
            expected: user.len(),
            found: candidates.cols(),
        });
    }
    Ok((0..candidates.rows()).map(|i| dot(user, candidates.row(i))).collect())
}

/// Softmax cross-entropy over `[s⁺, s⁻₁, ..., s⁻ₖ]` with the positive first.
/// Returns the loss and its gradient with respect to each score.
pub fn softmax_cross_entropy(scores: &[f64]) -> (f64, Vec<f64>) {
    assert!(!scores.is_empty(), "loss needs at least the positive score");
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    let loss = total.ln() - (scores[0] - max);
    let mut grad: Vec<f64> = exps.iter().map(|e| e / total).collect();
    grad[0] -= 1.0;
    (loss.max(0.0), grad)
}

pub fn training_loss(positive: f64, negatives: &[f64]) -> f64 {
    let mut scores = Vec::with_capacity(negatives.len() + 1);
    scores.push(positive);
    scores.extend_from_slice(negatives);
    softmax_cross_entropy(&scores).0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loss_examples() {
        assert!((training_loss(0.3, &[0.3; 4]) - 5f64.ln()).abs() < 1e-12);
        assert!((training_loss(0.0, &[0.0; 4]) - 1.6094).abs() < 1e-4);
        assert!(training_loss(50.0, &[0.0; 4]) < 1e-9);
        assert!(training_loss(1000.0, &[-1000.0]).is_finite());
        let (a, b) = (0.7, [-0.2, 1.1, 0.4]);
        let naive = -(f64::exp(a) / (f64::exp(a) + b.iter().map(|x: &f64| x.exp()).sum::<f64>())).ln();
        assert!((training_loss(a, &b) - naive).abs() < 1e-12);
    }

    #[test]
    fn scores() {
        let c = DenseMatrix::from_rows(&[vec![2.0, 0.0], vec![1.0, 1.0]]).unwrap();
        assert_eq!(score_candidates(&[0.0, 0.0], &c).unwrap(), vec![0.0, 0.0]);
        let u = [2.0, 0.0];
        assert_eq!(score_candidates(&u, &c).unwrap()[0], 4.0);
        assert!(score_candidates(&[1.0], &c).is_err());
    }
}
