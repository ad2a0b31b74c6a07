use super::Tensor;
use crate::error::{Error, Result};

/// Row-wise softmax of a `(batch, classes)` tensor.
pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    let [_, c] = *logits.shape() else {
        return Err(Error::Shape(format!(
            "softmax expects (batch, classes), got {:?}",
            logits.shape()
        )));
    };
    let mut p = logits.clone();
    for row in p.data_mut().chunks_mut(c) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
    Ok(p)
}

/// Mean cross-entropy of `softmax(logits)` against class indices, and its
/// gradient with respect to the logits.
pub fn softmax_xent(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let [b, c] = *logits.shape() else {
        return Err(Error::Shape(format!(
            "softmax expects (batch, classes), got {:?}",
            logits.shape()
        )));
    };
    if labels.len() != b {
        return Err(Error::Shape(format!(
            "{} labels for batch {b}",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::Shape(format!(
            "label {bad} out of range for {c} classes"
        )));
    }
    let mut grad = softmax(logits)?;
    let mut loss = 0.0;
    for (n, (row, &label)) in grad.data_mut().chunks_mut(c).zip(labels).enumerate() {
        let z = &logits.data()[n * c..(n + 1) * c];
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_sum = z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += log_sum - (z[label] - max);
        row[label] -= 1.0;
        row.iter_mut().for_each(|v| *v /= b as f64);
    }
    Ok((loss / b as f64, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits() {
        let c = 7;
        let logits = Tensor::new(vec![2, c], vec![0.3; 2 * c]).unwrap();
        let (loss, _) = softmax_xent(&logits, &[0, 6]).unwrap();
        assert!((loss - (c as f64).ln()).abs() < 1e-12);
        let p = softmax(&logits).unwrap();
        assert!(p.data().iter().all(|&v| (v - 1.0 / c as f64).abs() < 1e-15));
    }

    #[test]
    fn saturated_logit() {
        let logits = Tensor::new(vec![1, 3], vec![0.0, 1000.0, -5.0]).unwrap();
        let (loss, grad) = softmax_xent(&logits, &[1]).unwrap();
        assert!(loss.abs() < 1e-12 && loss >= 0.0);
        assert!(grad.is_finite());
        let (wrong, _) = softmax_xent(&logits, &[0]).unwrap();
        assert!((wrong - 1000.0).abs() < 1e-9);
    }

    #[test]
    fn rows_sum_to_one() {
        let logits = Tensor::from_fn(vec![5, 4], |i| (i as f64 * 1.7).sin() * 30.0);
        let p = softmax(&logits).unwrap();
        for row in p.data().chunks(4) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn label_out_of_range() {
        let logits = Tensor::zeros(vec![1, 3]);
        assert!(softmax_xent(&logits, &[3]).is_err());
        assert!(softmax_xent(&logits, &[0, 1]).is_err());
    }
}
