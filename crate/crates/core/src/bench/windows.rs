//! Rolling-origin evaluation windows and the MSE metric.

use crate::error::{Error, Result};

/// Mean squared error.
pub fn mse(y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    if y_true.is_empty() || y_true.len() != y_pred.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} true values vs {} predictions",
            y_true.len(),
            y_pred.len()
        )));
    }
    Ok(y_true
        .iter()
        .zip(y_pred)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / y_true.len() as f64)
}

/// One evaluation window: input ticks `[start, start + seq_len)`, target
/// ticks `[start + seq_len, start + seq_len + pred_len)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalWindow {
    pub start: usize,
    pub seq_len: usize,
    pub pred_len: usize,
}

impl EvalWindow {
    pub fn input_range(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.seq_len
    }

    pub fn target_range(&self) -> std::ops::Range<usize> {
        self.start + self.seq_len..self.start + self.seq_len + self.pred_len
    }
}

/// Rolling windows over a test split: starts advance by `stride`;
/// the count is `floor((n - seq_len - pred_len) / stride) + 1`.
pub fn evaluation_windows(
    n: usize,
    seq_len: usize,
    pred_len: usize,
    stride: usize,
) -> Result<Vec<EvalWindow>> {
    if stride == 0 {
        return Err(Error::InvalidArgument("stride must be >= 1".into()));
    }
    if n < seq_len + pred_len {
        return Err(Error::InvalidArgument(format!(
            "test split of {n} ticks cannot host a {seq_len}+{pred_len} window"
        )));
    }
    let count = (n - seq_len - pred_len) / stride + 1;
    Ok((0..count)
        .map(|i| EvalWindow {
            start: i * stride,
            seq_len,
            pred_len,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mse_hand_values() {
        assert_eq!(mse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mse(&[1.0, 2.0], &[2.0, 2.0]).unwrap(), 0.5);
        assert!(mse(&[1.0], &[1.0, 2.0]).is_err());
        assert!(mse(&[], &[]).is_err());
    }

    #[test]
    fn mse_against_mean_is_variance() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let y: Vec<f64> = (0..10_000).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        let zeros: Vec<f64> = y.iter().map(|v| v - mean).collect();
        let pred = vec![0.0; y.len()];
        let got = mse(&zeros, &pred).unwrap();
        let var = zeros.iter().map(|v| v * v).sum::<f64>() / y.len() as f64;
        assert!((got - var).abs() < 1e-12);
    }

    #[test]
    fn window_count_formula() {
        let w = evaluation_windows(100, 20, 10, 10).unwrap();
        assert_eq!(w.len(), (100 - 30) / 10 + 1);
        assert_eq!(w[0].input_range(), 0..20);
        assert_eq!(w[0].target_range(), 20..30);
        assert_eq!(w.last().unwrap().target_range().end, 100);

        let w = evaluation_windows(30, 20, 10, 5).unwrap();
        assert_eq!(w.len(), 1);
        assert!(evaluation_windows(29, 20, 10, 5).is_err());
    }
}
