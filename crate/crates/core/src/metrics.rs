//! Prediction metrics, pooled over all clients on the standardized scale.

use alloc::vec::Vec;

use crate::data::WindowedDataset;
use crate::error::{check_len, Error, Result};
use crate::model::MlpModel;

fn check_pair(pred: &[f64], truth: &[f64]) -> Result<()> {
    check_len(truth.len(), pred.len())?;
    if pred.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    Ok(())
}

pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(pred, truth)?;
    let sse: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok(libm::sqrt(sse / pred.len() as f64))
}

pub fn mae(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(pred, truth)?;
    let sae: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum();
    Ok(sae / pred.len() as f64)
}

/// Coefficient of determination against the mean of `truth`.
pub fn r2_score(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(pred, truth)?;
    if truth.len() < 2 {
        return Err(Error::ConstantTruth);
    }
    let mean = truth.iter().sum::<f64>() / truth.len() as f64;
    let total: f64 = truth.iter().map(|t| (t - mean) * (t - mean)).sum();
    if total == 0.0 {
        return Err(Error::ConstantTruth);
    }
    let residual: f64 = pred.iter().zip(truth).map(|(p, t)| (t - p) * (t - p)).sum();
    Ok(1.0 - residual / total)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsSnapshot {
    pub rmse: f64,
    pub mae: f64,
    pub r2: f64,
    pub n_samples: usize,
}

impl MetricsSnapshot {
    pub fn from_predictions(pred: &[f64], truth: &[f64]) -> Result<Self> {
        Ok(Self {
            rmse: rmse(pred, truth)?,
            mae: mae(pred, truth)?,
            r2: r2_score(pred, truth)?,
            n_samples: pred.len(),
        })
    }
}

/// Predictions for every client's test set, in client order.
pub fn predict_all(
    model: &MlpModel,
    test_sets: &[&WindowedDataset],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut pred = Vec::new();
    let mut truth = Vec::new();
    for set in test_sets {
        if set.is_empty() {
            continue;
        }
        pred.extend(model.forward(&set.inputs)?);
        truth.extend_from_slice(&set.targets);
    }
    Ok((pred, truth))
}

/// Pooled metrics over the concatenation of all clients' test samples.
pub fn evaluate(model: &MlpModel, test_sets: &[&WindowedDataset]) -> Result<MetricsSnapshot> {
    let (pred, truth) = predict_all(model, test_sets)?;
    if pred.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    MetricsSnapshot::from_predictions(&pred, &truth)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(rmse(&[1.0, 1.0], &[0.0, 2.0]).unwrap(), 1.0);
        let p = [0.3, -1.2, 2.5];
        let t = [0.1, -1.0, 2.0];
        let mse = crate::model::mse_loss(&p, &t).unwrap();
        assert!((rmse(&p, &t).unwrap() - libm::sqrt(mse)).abs() < 1e-15);
        assert!(rmse(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn mae_examples() {
        assert_eq!(mae(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mae(&[1.0, 1.0], &[0.0, 2.0]).unwrap(), 1.0);
        assert_eq!(mae(&[2.0, 0.0], &[0.0, 0.0]).unwrap(), 1.0);
        assert!(mae(&[], &[]).is_err());
    }

    #[test]
    fn r2_examples() {
        assert_eq!(r2_score(&[1.0, 3.0], &[1.0, 3.0]).unwrap(), 1.0);
        assert_eq!(r2_score(&[2.0, 2.0, 2.0], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
        assert_eq!(r2_score(&[0.0, 0.0], &[-1.0, 1.0]).unwrap(), 0.0);
        assert_eq!(
            r2_score(&[0.0, 0.0], &[4.0, 4.0]),
            Err(Error::ConstantTruth)
        );
        assert_eq!(r2_score(&[0.0], &[4.0]), Err(Error::ConstantTruth));
    }
}
