use alloc::vec::Vec;

use super::NnError;
use crate::math::{ln, softmax};

const PROB_FLOOR: f64 = 1e-12;

/// Cross-entropy of a probability vector against a target class, and its
/// gradient with respect to the probabilities.
pub fn cross_entropy(probs: &[f64], target: usize) -> Result<(f64, Vec<f64>), NnError> {
    if target >= probs.len() {
        return Err(NnError::Shape { expected: probs.len(), actual: target + 1 });
    }
    let p = probs[target].max(PROB_FLOOR);
    let mut grad = alloc::vec![0.0; probs.len()];
    grad[target] = -1.0 / p;
    Ok((-ln(p), grad))
}

/// Fused softmax + cross-entropy on logits; gradient is `softmax - onehot`.
pub fn softmax_cross_entropy(logits: &[f64], target: usize) -> Result<(f64, Vec<f64>), NnError> {
    if target >= logits.len() {
        return Err(NnError::Shape { expected: logits.len(), actual: target + 1 });
    }
    let mut probs = softmax(logits);
    let loss = -ln(probs[target].max(PROB_FLOOR));
    probs[target] -= 1.0;
    Ok((loss, probs))
}

/// `sum((y - t)^2) / n` and its gradient.
pub fn mse(prediction: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>), NnError> {
    if prediction.len() != target.len() {
        return Err(NnError::Shape { expected: prediction.len(), actual: target.len() });
    }
    let n = prediction.len().max(1) as f64;
    let mut loss = 0.0;
    let grad = prediction
        .iter()
        .zip(target)
        .map(|(y, t)| {
            let d = y - t;
            loss += d * d;
            2.0 * d / n
        })
        .collect();
    Ok((loss / n, grad))
}

/// Vector-Jacobian product of softmax: given output `y` and `dL/dy`.
pub fn softmax_backward(y: &[f64], dy: &[f64]) -> Vec<f64> {
    let dot: f64 = y.iter().zip(dy).map(|(a, b)| a * b).sum();
    y.iter().zip(dy).map(|(yi, di)| yi * (di - dot)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_cross_entropy_is_log_n() {
        let (l, _) = softmax_cross_entropy(&[0.0; 4], 2).unwrap();
        assert!((l - libm::log(4.0)).abs() < 1e-12);
        let (l2, _) = cross_entropy(&[0.25; 4], 2).unwrap();
        assert!((l - l2).abs() < 1e-12);
    }

    #[test]
    fn fused_gradient_sums_to_zero() {
        let (_, g) = softmax_cross_entropy(&[1.0, -2.0, 0.5], 0).unwrap();
        assert!(g.iter().sum::<f64>().abs() < 1e-12);
        assert!(g[0] < 0.0);
    }

    #[test]
    fn mse_values() {
        let (l, g) = mse(&[1.0, 3.0], &[0.0, 1.0]).unwrap();
        assert_eq!(l, 2.5);
        assert_eq!(g, alloc::vec![1.0, 2.0]);
        assert!(mse(&[1.0], &[]).is_err());
    }

    #[test]
    fn out_of_range_target() {
        assert!(softmax_cross_entropy(&[0.0, 0.0], 2).is_err());
        assert!(cross_entropy(&[0.5, 0.5], 5).is_err());
    }
}
