//! Softmax cross-entropy.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One-hot rows for integer labels.
pub fn one_hot(labels: &[usize], classes: usize) -> Result<Tensor> {
    let mut data = vec![0.0; labels.len() * classes];
    for (i, &l) in labels.iter().enumerate() {
        if l >= classes {
            return Err(Error::Input(format!("label {l} out of range for {classes} classes")));
        }
        data[i * classes + l] = 1.0;
    }
    Tensor::new(vec![labels.len(), classes], data)
}

/// Class index of each one-hot row; rejects rows that are not one-hot.
pub fn labels_of(y: &Tensor) -> Result<Vec<usize>> {
    if y.shape().len() != 2 {
        return Err(Error::Input(format!("labels must be [N, classes], got {:?}", y.shape())));
    }
    (0..y.batch())
        .map(|i| {
            let row = y.row(i);
            let ones: Vec<usize> = row.iter().enumerate().filter(|(_, &v)| v == 1.0).map(|(j, _)| j).collect();
            let zeros = row.iter().filter(|&&v| v == 0.0).count();
            if ones.len() == 1 && zeros + 1 == row.len() {
                Ok(ones[0])
            } else {
                Err(Error::Input(format!("label row {i} is not one-hot: {row:?}")))
            }
        })
        .collect()
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn log_softmax(row: &[f32]) -> Vec<f64> {
    let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64));
    let lse = max + row.iter().map(|&v| (v as f64 - max).exp()).sum::<f64>().ln();
    row.iter().map(|&v| v as f64 - lse).collect()
}

pub fn softmax_rows(logits: &Tensor) -> Vec<Vec<f64>> {
    (0..logits.batch())
        .map(|i| log_softmax(logits.row(i)).into_iter().map(f64::exp).collect())
        .collect()
}

pub fn log_softmax_rows(logits: &Tensor) -> Vec<Vec<f64>> {
    (0..logits.batch()).map(|i| log_softmax(logits.row(i))).collect()
}

fn check(logits: &Tensor, labels: &[usize]) -> Result<()> {
    if logits.shape().len() != 2 || logits.batch() != labels.len() {
        return Err(Error::Input(format!(
            "logits {:?} do not match {} labels",
            logits.shape(),
            labels.len()
        )));
    }
    let classes = logits.shape()[1];
    if let Some(&l) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Input(format!("label {l} out of range for {classes} classes")));
    }
    Ok(())
}

/// Per-sample `-log softmax(logits)[label]`.
pub fn per_sample_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<Vec<f64>> {
    check(logits, labels)?;
    Ok(labels
        .iter()
        .enumerate()
        .map(|(i, &l)| -log_softmax(logits.row(i))[l])
        .collect())
}

/// Batch-mean cross-entropy against one-hot targets.
pub fn cross_entropy(logits: &Tensor, y: &Tensor) -> Result<f32> {
    if logits.shape() != y.shape() {
        return Err(Error::Input(format!(
            "logits {:?} and targets {:?} differ in shape",
            logits.shape(),
            y.shape()
        )));
    }
    let labels = labels_of(y)?;
    Ok(cross_entropy_with_grad(logits, &labels, 1.0)?.0)
}

/// Mean cross-entropy and its gradient w.r.t. the logits, scaled by `scale`.
pub fn cross_entropy_with_grad(logits: &Tensor, labels: &[usize], scale: f64) -> Result<(f32, Tensor)> {
    check(logits, labels)?;
    let n = labels.len() as f64;
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(logits.len());
    for (i, &l) in labels.iter().enumerate() {
        let ls = log_softmax(logits.row(i));
        total -= ls[l];
        grad.extend(ls.iter().enumerate().map(|(j, &v)| {
            let target = if j == l { 1.0 } else { 0.0 };
            ((v.exp() - target) * scale / n) as f32
        }));
    }
    Ok(((total / n) as f32, Tensor::new(logits.shape().to_vec(), grad)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn saturated_correct_class_is_zero() {
        let logits = Tensor::new(vec![1, 3], vec![1e6, 0.0, 0.0]).unwrap();
        let y = one_hot(&[0], 3).unwrap();
        assert!(cross_entropy(&logits, &y).unwrap().abs() < 1e-6);
    }

    #[test]
    fn uniform_logits_give_ln_classes() {
        let logits = Tensor::full(&[4, 3], 0.7);
        let y = one_hot(&[0, 1, 2, 1], 3).unwrap();
        let l = cross_entropy(&logits, &y).unwrap();
        assert!((l as f64 - 3f64.ln()).abs() < 1e-6);
    }

    #[test]
    fn non_one_hot_rejected() {
        let logits = Tensor::zeros(&[1, 3]);
        let y = Tensor::new(vec![1, 3], vec![0.5, 0.5, 0.0]).unwrap();
        assert!(matches!(cross_entropy(&logits, &y), Err(Error::Input(_))));
        let y = Tensor::new(vec![1, 3], vec![1.0, 1.0, 0.0]).unwrap();
        assert!(cross_entropy(&logits, &y).is_err());
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[0.0, 0.0]), 0);
    }
}
