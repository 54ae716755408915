pub mod choice;
pub mod mlp;

use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use choice::{fit_choice_model, softmax_left, ChoiceFit, ChoiceModel, FitConfig, FitWarning};
pub use mlp::{
    mlp_fit_regression, mlp_train, DenseLayer, EpochRecord, Gradient, MlpFit, MlpTrainConfig,
    OutputActivation, Targets, TrainedMLP,
};

use crate::dilemma::{AggregatedJudgment, Dilemma};
use crate::error::{Result, SrmError};
use crate::features::{axis_id, parse_feature_spec};

/// Anything that assigns a probability of sparing the left side.
pub trait Predictor {
    fn predict_save_left(&self, d: &Dilemma) -> f64;

    fn predict_many(&self, ds: &[Dilemma]) -> Vec<f64> {
        ds.iter().map(|d| self.predict_save_left(d)).collect()
    }

    /// Number of fitted parameters, for information criteria.
    fn n_params(&self) -> usize;
}

pub const PROB_CLAMP: f64 = 1e-12;

/// Total negative log-likelihood in nats of aggregated judgments under
/// predicted save-left probabilities, clamped away from 0 and 1.
pub fn nll_from_predictions(preds: &[f64], data: &[AggregatedJudgment]) -> f64 {
    preds
        .iter()
        .zip(data)
        .map(|(&p, j)| {
            let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            -(j.n_save_left as f64) * p.ln() - (j.n_save_right() as f64) * (1.0 - p).ln()
        })
        .sum()
}

pub fn nll(model: &dyn Predictor, data: &[AggregatedJudgment]) -> f64 {
    let dilemmas: Vec<Dilemma> = data.iter().map(|j| j.dilemma.clone()).collect();
    nll_from_predictions(&model.predict_many(&dilemmas), data)
}

/// Either fitted model family, as loaded from a checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyModel {
    Choice(ChoiceModel),
    Mlp(TrainedMLP),
}

impl Predictor for AnyModel {
    fn predict_save_left(&self, d: &Dilemma) -> f64 {
        match self {
            AnyModel::Choice(m) => m.predict_save_left(d),
            AnyModel::Mlp(m) => m.predict_save_left(d),
        }
    }

    fn predict_many(&self, ds: &[Dilemma]) -> Vec<f64> {
        match self {
            AnyModel::Choice(m) => m.predict_many(ds),
            AnyModel::Mlp(m) => m.predict_many(ds),
        }
    }

    fn n_params(&self) -> usize {
        match self {
            AnyModel::Choice(m) => m.n_params(),
            AnyModel::Mlp(m) => m.n_params(),
        }
    }
}

/// On-disk model format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Checkpoint {
    Choice {
        feature_hash: String,
        features: String,
        feature_names: Vec<String>,
        weights: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        config: Option<FitConfig>,
    },
    Mlp {
        feature_hash: String,
        layer_sizes: Vec<usize>,
        /// Per layer, the `inputs x outputs` weight matrix in row-major order.
        weights: Vec<Vec<f64>>,
        biases: Vec<Vec<f64>>,
        output: OutputActivation,
        output_shift: f64,
        output_scale: f64,
        axis_inputs: Vec<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        config: Option<MlpTrainConfig>,
    },
}

/// Hash identifying a network's input encoding.
pub fn encoding_hash(axis_inputs: &[String], input_width: usize) -> String {
    let desc = format!("dilemma-encoding;width={input_width};axes={}", axis_inputs.join(","));
    hex::encode(Sha256::digest(desc.as_bytes()))
}

impl Checkpoint {
    pub fn from_choice(model: &ChoiceModel, config: Option<FitConfig>) -> Self {
        Checkpoint::Choice {
            feature_hash: model.features().content_hash().to_string(),
            features: model.features().to_spec_text(),
            feature_names: model.features().names().map(str::to_string).collect(),
            weights: model.weights().to_vec(),
            config,
        }
    }

    pub fn from_mlp(model: &TrainedMLP, config: Option<MlpTrainConfig>) -> Self {
        let axis_inputs: Vec<String> = model.axis_inputs().iter().map(|a| a.name().to_string()).collect();
        let (output_shift, output_scale) = model.output_affine();
        Checkpoint::Mlp {
            feature_hash: encoding_hash(&axis_inputs, model.input_width()),
            layer_sizes: model.layer_sizes(),
            weights: model
                .layers()
                .iter()
                .map(|l| l.weights.iter().copied().collect())
                .collect(),
            biases: model.layers().iter().map(|l| l.bias.to_vec()).collect(),
            output: model.output(),
            output_shift,
            output_scale,
            axis_inputs,
            config,
        }
    }

    pub fn into_model(self) -> Result<AnyModel> {
        match self {
            Checkpoint::Choice {
                feature_hash,
                features,
                weights,
                ..
            } => {
                let fs = parse_feature_spec(&features)?;
                if fs.content_hash() != feature_hash {
                    return Err(SrmError::Data("checkpoint feature hash does not match its features".into()));
                }
                Ok(AnyModel::Choice(ChoiceModel::new(fs, weights)?))
            }
            Checkpoint::Mlp {
                layer_sizes,
                weights,
                biases,
                output,
                output_shift,
                output_scale,
                axis_inputs,
                ..
            } => {
                if layer_sizes.len() != weights.len() + 1 || weights.len() != biases.len() {
                    return Err(SrmError::Data("checkpoint layer arrays do not match layer_sizes".into()));
                }
                let layers = layer_sizes
                    .windows(2)
                    .zip(weights.into_iter().zip(biases))
                    .map(|(dims, (w, b))| {
                        Ok(DenseLayer {
                            weights: Array2::from_shape_vec((dims[0], dims[1]), w).map_err(|_| {
                                SrmError::Data("checkpoint weight array has the wrong length".into())
                            })?,
                            bias: Array1::from(b),
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                let axes = axis_inputs
                    .iter()
                    .map(|a| axis_id(a))
                    .collect::<Result<Vec<_>>>()?;
                Ok(AnyModel::Mlp(TrainedMLP::from_layers(
                    layers,
                    output,
                    output_shift,
                    output_scale,
                    axes,
                )?))
            }
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, crate::io::to_json_pretty(self)?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| SrmError::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}
