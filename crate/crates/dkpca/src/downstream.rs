//! Supervised tasks on extracted deep features: concatenated per-level
//! hidden features fed to a ridge least-squares predictor, with ACC/RMSE
//! metrics.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataio::DataMatrix;
use crate::error::{Error, Result};
use crate::generative::{encode_oos, FittedModel};

/// N x (s_1 + ... + s_n) matrix of concatenated per-level features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub values: DMatrix<f64>,
}

/// Prediction task and ridge strength.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictorSpec {
    pub task: Task,
    pub ridge: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Task {
    Regression,
    BinaryClassification,
}

/// Concatenated deep features for each row of `x`. Training rows are looked
/// up in the stored state (no kernel evaluation); new rows are encoded
/// out-of-sample.
pub fn extract_features(
    model: &FittedModel,
    x: &DataMatrix,
    is_training: bool,
) -> Result<FeatureMatrix> {
    if x.ncols() != model.train_data.ncols() {
        return Err(Error::invalid("feature extraction: dimension mismatch"));
    }
    let total_s: usize = model.arch.levels.iter().map(|l| l.s).sum();
    if is_training {
        if x.nrows() != model.train_data.nrows() {
            return Err(Error::invalid(
                "training lookup needs one row per training sample",
            ));
        }
        let mut values = DMatrix::zeros(x.nrows(), total_s);
        for i in 0..x.nrows() {
            let mut col = 0;
            for h in &model.state.h {
                for c in 0..h.ncols() {
                    values[(i, col)] = h[(i, c)];
                    col += 1;
                }
            }
        }
        return Ok(FeatureMatrix { values });
    }
    let mut values = DMatrix::zeros(x.nrows(), total_s);
    for i in 0..x.nrows() {
        let hs = encode_oos(model, &x.row(i))?;
        let mut col = 0;
        for h in &hs {
            for v in h.iter() {
                values[(i, col)] = *v;
                col += 1;
            }
        }
    }
    Ok(FeatureMatrix { values })
}

/// Ridge least squares with intercept. Regression predicts real values;
/// classification maps {0,1} labels to +-1 targets and thresholds the
/// decision value at zero.
pub fn fit_predict(
    features_train: &FeatureMatrix,
    y_train: &DVector<f64>,
    features_test: &FeatureMatrix,
    spec: &PredictorSpec,
) -> Result<DVector<f64>> {
    let n = features_train.values.nrows();
    let p = features_train.values.ncols();
    if y_train.len() != n {
        return Err(Error::invalid("row count mismatch between features and targets"));
    }
    if features_test.values.ncols() != p {
        return Err(Error::invalid("train/test feature width mismatch"));
    }
    if !(spec.ridge >= 0.0) || !spec.ridge.is_finite() {
        return Err(Error::invalid("ridge must be finite and >= 0"));
    }
    let targets = match spec.task {
        Task::Regression => y_train.clone(),
        Task::BinaryClassification => {
            if y_train.iter().any(|&v| v != 0.0 && v != 1.0) {
                return Err(Error::invalid("classification labels must be in {0,1}"));
            }
            y_train.map(|v| 2.0 * v - 1.0)
        }
    };

    // design matrix with intercept column
    let design = |f: &FeatureMatrix| {
        let mut d = DMatrix::zeros(f.values.nrows(), p + 1);
        d.view_mut((0, 0), (f.values.nrows(), p)).copy_from(&f.values);
        d.column_mut(p).fill(1.0);
        d
    };
    let a = design(features_train);
    let mut normal = a.transpose() * &a;
    for i in 0..p {
        normal[(i, i)] += spec.ridge;
    }
    let rhs = a.transpose() * &targets;
    let coef = normal.clone().lu().solve(&rhs).ok_or_else(|| {
        if spec.ridge == 0.0 {
            Error::invalid("singular normal equations; set ridge > 0")
        } else {
            Error::NumericalFailure("normal equations could not be solved".into())
        }
    })?;
    // LU can return garbage on near-singular systems; verify the solve.
    if (&normal * &coef - &rhs).amax() > 1e-6 * (1.0 + rhs.amax()) {
        return Err(if spec.ridge == 0.0 {
            Error::invalid("singular normal equations; set ridge > 0")
        } else {
            Error::NumericalFailure("normal equations could not be solved".into())
        });
    }

    let raw = design(features_test) * coef;
    Ok(match spec.task {
        Task::Regression => raw,
        Task::BinaryClassification => raw.map(|v| if v >= 0.0 { 1.0 } else { 0.0 }),
    })
}

/// ACC (% correct) for classification, RMSE for regression.
pub fn metrics(pred: &DVector<f64>, truth: &DVector<f64>, task: Task) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::invalid("prediction/truth length mismatch"));
    }
    if pred.is_empty() {
        return Err(Error::invalid("empty input"));
    }
    Ok(match task {
        Task::BinaryClassification => {
            let correct = pred
                .iter()
                .zip(truth.iter())
                .filter(|(p, t)| (*p - *t).abs() < 0.5)
                .count();
            100.0 * correct as f64 / pred.len() as f64
        }
        Task::Regression => {
            let mse: f64 = pred
                .iter()
                .zip(truth.iter())
                .map(|(p, t)| (p - t) * (p - t))
                .sum::<f64>()
                / pred.len() as f64;
            mse.sqrt()
        }
    })
}
