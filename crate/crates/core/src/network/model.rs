use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::margin_loss::{ClassifierState, LossResult};
use crate::numerics::{dot_unchecked, DenseMatrix};
use crate::rng::{self, Stream};
use crate::uncertainty::DropoutMask;

/// Affine layer `W x + b`, `W` stored as out × in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub weights: DenseMatrix,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    fn zeros(out: usize, input: usize) -> Self {
        Self { weights: DenseMatrix::zeros(out, input), bias: vec![0.0; out] }
    }
}

/// ReLU hidden layers, each followed by dropout, then a bias-free classifier
/// whose rows are the class-representative vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub hidden: Vec<DenseLayer>,
    pub classifier: ClassifierState,
}

impl MlpModel {
    /// He-style uniform initialisation, `U(±√(6/fan_in))`, drawn from the init stream of `seed`.
    pub fn new(input_dim: usize, hidden_widths: &[usize], num_classes: usize, seed: u64) -> Result<Self> {
        if input_dim == 0 || hidden_widths.is_empty() || hidden_widths.contains(&0) {
            return Err(Error::Config(format!("invalid architecture {input_dim} -> {hidden_widths:?}")));
        }
        let mut rng = rng::stream(seed, Stream::Init);
        let mut uniform = |rows: usize, cols: usize| {
            let bound = (6.0 / cols as f64).sqrt();
            let data = (0..rows * cols).map(|_| rng.random_range(-bound..bound)).collect();
            DenseMatrix::from_vec(rows, cols, data)
        };
        let mut hidden = Vec::with_capacity(hidden_widths.len());
        let mut fan_in = input_dim;
        for &w in hidden_widths {
            hidden.push(DenseLayer { weights: uniform(w, fan_in)?, bias: vec![0.0; w] });
            fan_in = w;
        }
        let classifier = ClassifierState::new(uniform(num_classes, fan_in)?)?;
        Ok(Self { hidden, classifier })
    }

    pub fn input_dim(&self) -> usize {
        self.hidden[0].weights.cols()
    }

    pub fn feature_dim(&self) -> usize {
        self.classifier.dim()
    }

    pub fn num_classes(&self) -> usize {
        self.classifier.num_classes()
    }

    pub fn hidden_widths(&self) -> Vec<usize> {
        self.hidden.iter().map(|l| l.bias.len()).collect()
    }

    pub fn num_params(&self) -> usize {
        self.hidden.iter().map(|l| l.weights.as_slice().len() + l.bias.len()).sum::<usize>()
            + self.classifier.weights().as_slice().len()
    }

    /// Parameters flattened as (W, b) per hidden layer, then the classifier.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.hidden {
            out.extend_from_slice(l.weights.as_slice());
            out.extend_from_slice(&l.bias);
        }
        out.extend_from_slice(self.classifier.weights().as_slice());
        out
    }

    pub fn set_flat(&mut self, params: &[f64]) {
        assert_eq!(params.len(), self.num_params());
        let mut at = 0;
        for l in &mut self.hidden {
            let n = l.weights.as_slice().len();
            l.weights.as_mut_slice().copy_from_slice(&params[at..at + n]);
            at += n;
            let b = l.bias.len();
            l.bias.copy_from_slice(&params[at..at + b]);
            at += b;
        }
        self.classifier.weights_mut().as_mut_slice().copy_from_slice(&params[at..]);
    }

    pub fn is_finite(&self) -> bool {
        self.hidden.iter().all(|l| l.weights.is_finite() && l.bias.iter().all(|b| b.is_finite()))
            && self.classifier.weights().is_finite()
    }
}

/// Everything backprop needs from one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardCache {
    /// Input to each hidden layer.
    pub inputs: Vec<Vec<f64>>,
    pub pre_activations: Vec<Vec<f64>>,
    /// Dropout multiplier per hidden unit (1 without a mask).
    pub factors: Vec<Vec<f64>>,
    /// Penultimate activation fed to the classifier.
    pub feature: Vec<f64>,
    pub logits: Vec<f64>,
}

pub fn forward(model: &MlpModel, x: &[f64], mask: Option<&DropoutMask>) -> Result<ForwardCache> {
    if x.len() != model.input_dim() {
        return Err(Error::Dimension(format!("input of length {} for a model expecting {}", x.len(), model.input_dim())));
    }
    if let Some(m) = mask {
        if m.layers.len() != model.hidden.len() || m.layers.iter().zip(&model.hidden).any(|(a, l)| a.len() != l.bias.len()) {
            return Err(Error::Dimension("dropout mask does not match the hidden layers".into()));
        }
    }
    let n = model.hidden.len();
    let mut cache = ForwardCache {
        inputs: Vec::with_capacity(n),
        pre_activations: Vec::with_capacity(n),
        factors: Vec::with_capacity(n),
        feature: Vec::new(),
        logits: Vec::new(),
    };
    let mut h = x.to_vec();
    for (li, layer) in model.hidden.iter().enumerate() {
        let pre: Vec<f64> = layer
            .weights
            .iter_rows()
            .zip(&layer.bias)
            .map(|(w, b)| dot_unchecked(w, &h) + b)
            .collect();
        let factors: Vec<f64> = match mask {
            Some(m) => (0..pre.len()).map(|u| m.factor(li, u)).collect(),
            None => vec![1.0; pre.len()],
        };
        let next = pre.iter().zip(&factors).map(|(p, f)| p.max(0.0) * f).collect();
        cache.inputs.push(std::mem::replace(&mut h, next));
        cache.pre_activations.push(pre);
        cache.factors.push(factors);
    }
    cache.logits = model.classifier.logits(&h);
    cache.feature = h;
    Ok(cache)
}

/// Gradients with the same layout as [`MlpModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGradients {
    pub hidden: Vec<DenseLayer>,
    pub classifier: DenseMatrix,
}

impl ModelGradients {
    pub fn zeros_like(model: &MlpModel) -> Self {
        Self {
            hidden: model.hidden.iter().map(|l| DenseLayer::zeros(l.weights.rows(), l.weights.cols())).collect(),
            classifier: DenseMatrix::zeros(model.num_classes(), model.feature_dim()),
        }
    }

    pub fn add_scaled(&mut self, other: &ModelGradients, s: f64) {
        for (a, b) in self.hidden.iter_mut().zip(&other.hidden) {
            a.weights.add_scaled(&b.weights, s);
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += s * y;
            }
        }
        self.classifier.add_scaled(&other.classifier, s);
    }

    pub fn scale(&mut self, s: f64) {
        for l in &mut self.hidden {
            l.weights.scale(s);
            l.bias.iter_mut().for_each(|b| *b *= s);
        }
        self.classifier.scale(s);
    }

    /// Same ordering as [`MlpModel::flatten`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.hidden {
            out.extend_from_slice(l.weights.as_slice());
            out.extend_from_slice(&l.bias);
        }
        out.extend_from_slice(self.classifier.as_slice());
        out
    }
}

/// Reverse-mode pass given the loss gradients at the classifier and feature.
pub fn backward(model: &MlpModel, cache: &ForwardCache, loss: &LossResult) -> Result<ModelGradients> {
    if loss.grad_feature.len() != cache.feature.len()
        || loss.grad_weights.rows() != model.num_classes()
        || loss.grad_weights.cols() != model.feature_dim()
        || cache.inputs.len() != model.hidden.len()
    {
        return Err(Error::Dimension("loss gradients do not match the cached forward pass".into()));
    }
    let mut grads = ModelGradients::zeros_like(model);
    grads.classifier = loss.grad_weights.clone();
    let mut upstream = loss.grad_feature.to_vec();
    for li in (0..model.hidden.len()).rev() {
        let pre = &cache.pre_activations[li];
        let delta: Vec<f64> = upstream
            .iter()
            .zip(pre)
            .zip(&cache.factors[li])
            .map(|((g, p), f)| if *p > 0.0 { g * f } else { 0.0 })
            .collect();
        let g = &mut grads.hidden[li];
        g.weights.add_outer(&delta, &cache.inputs[li], 1.0);
        g.bias.copy_from_slice(&delta);
        if li > 0 {
            upstream = model.hidden[li].weights.transpose_matvec(&delta)?;
        }
    }
    Ok(grads)
}

/// `w ← w − lr·(g + decay·w)` on weight matrices; biases get no decay.
pub fn sgd_step(model: &mut MlpModel, grads: &ModelGradients, lr: f64, weight_decay: f64) {
    let shrink = 1.0 - lr * weight_decay;
    for (l, g) in model.hidden.iter_mut().zip(&grads.hidden) {
        l.weights.scale(shrink);
        l.weights.add_scaled(&g.weights, -lr);
        for (b, gb) in l.bias.iter_mut().zip(&g.bias) {
            *b -= lr * gb;
        }
    }
    let w = model.classifier.weights_mut();
    w.scale(shrink);
    w.add_scaled(&grads.classifier, -lr);
}
