//! Forward path: per-part attention prediction, rule modulation, the
//! per-class read-out head and late fusion of score streams.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::classes::ClassId;
use crate::error::{Error, Result};
use crate::parts::{BodyPart, NUM_PARTS};
use crate::rng::SeededRng;
use crate::rules::{RuleMatrix, RuleRow};

/// Half-width of the uniform range used for parameter initialization.
pub const INIT_SCALE: f64 = 0.1;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Part and object features for one human-object candidate pair.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceFeatures {
    pub parts: [Vec<f64>; NUM_PARTS],
    pub object: Vec<f64>,
}

impl InstanceFeatures {
    pub fn feature_dim(&self) -> usize {
        self.parts[0].len()
    }

    pub fn part(&self, part: BodyPart) -> &[f64] {
        &self.parts[part.ordinal()]
    }

    pub fn check(&self, feature_dim: usize, object_dim: usize) -> Result<()> {
        for part in BodyPart::ALL {
            let v = &self.parts[part.ordinal()];
            if v.len() != feature_dim {
                return Err(Error::Shape(format!(
                    "part {part} has dimension {}, expected {feature_dim}",
                    v.len()
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Shape(format!("part {part} has a non-finite value")));
            }
        }
        if self.object.len() != object_dim {
            return Err(Error::Shape(format!(
                "object feature has dimension {}, expected {object_dim}",
                self.object.len()
            )));
        }
        if self.object.iter().any(|x| !x.is_finite()) {
            return Err(Error::Shape("object feature has a non-finite value".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttentionVector(pub [f64; NUM_PARTS]);

impl AttentionVector {
    pub fn get(&self, part: BodyPart) -> f64 {
        self.0[part.ordinal()]
    }
}

/// Two-layer perceptron for one part: rectifier hidden layer over
/// `[part feature; object feature]`, then a scalar logit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartPredictor {
    /// Row-major `hidden x (feature_dim + object_dim)`.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionParams {
    pub feature_dim: usize,
    pub object_dim: usize,
    pub hidden: usize,
    pub parts: Vec<PartPredictor>,
}

impl AttentionParams {
    pub fn zeros(feature_dim: usize, object_dim: usize, hidden: usize) -> Self {
        let input = feature_dim + object_dim;
        let part = PartPredictor {
            w1: vec![0.0; hidden * input],
            b1: vec![0.0; hidden],
            w2: vec![0.0; hidden],
            b2: 0.0,
        };
        Self {
            feature_dim,
            object_dim,
            hidden,
            parts: vec![part; NUM_PARTS],
        }
    }

    /// Every parameter drawn uniformly from [-0.1, 0.1).
    pub fn seeded(feature_dim: usize, object_dim: usize, hidden: usize, rng: &mut SeededRng) -> Self {
        let mut p = Self::zeros(feature_dim, object_dim, hidden);
        for v in p.values_mut() {
            *v = rng.uniform_in(-INIT_SCALE, INIT_SCALE);
        }
        p
    }

    pub fn input_dim(&self) -> usize {
        self.feature_dim + self.object_dim
    }

    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.parts.iter().flat_map(|p| {
            p.w1.iter()
                .chain(&p.b1)
                .chain(&p.w2)
                .chain(std::iter::once(&p.b2))
        })
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.parts.iter_mut().flat_map(|p| {
            p.w1.iter_mut()
                .chain(p.b1.iter_mut())
                .chain(p.w2.iter_mut())
                .chain(std::iter::once(&mut p.b2))
        })
    }

    pub fn check(&self) -> Result<()> {
        if self.parts.len() != NUM_PARTS {
            return Err(Error::Shape(format!(
                "attention params have {} part predictors, expected {NUM_PARTS}",
                self.parts.len()
            )));
        }
        let input = self.input_dim();
        for (part, p) in BodyPart::ALL.iter().zip(&self.parts) {
            if p.w1.len() != self.hidden * input || p.b1.len() != self.hidden || p.w2.len() != self.hidden {
                return Err(Error::Shape(format!("attention predictor for {part} has inconsistent shapes")));
            }
        }
        if self.values().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("attention params contain non-finite values".into()));
        }
        Ok(())
    }
}

/// Intermediate values of the attention forward pass, kept for backprop.
#[derive(Debug, Clone)]
pub struct AttentionTrace {
    pub attention: AttentionVector,
    /// Post-rectifier hidden activations per part.
    pub hidden: [Vec<f64>; NUM_PARTS],
}

pub fn attention_forward(features: &InstanceFeatures, params: &AttentionParams) -> Result<AttentionTrace> {
    features.check(params.feature_dim, params.object_dim)?;
    let input = params.input_dim();
    let mut a = [0.0; NUM_PARTS];
    let mut hidden: [Vec<f64>; NUM_PARTS] = Default::default();
    let mut x = Vec::with_capacity(input);
    for i in 0..NUM_PARTS {
        let p = &params.parts[i];
        x.clear();
        x.extend_from_slice(&features.parts[i]);
        x.extend_from_slice(&features.object);
        let h: Vec<f64> = (0..params.hidden)
            .map(|k| (dot(&p.w1[k * input..(k + 1) * input], &x) + p.b1[k]).max(0.0))
            .collect();
        a[i] = sigmoid(dot(&p.w2, &h) + p.b2);
        hidden[i] = h;
    }
    Ok(AttentionTrace {
        attention: AttentionVector(a),
        hidden,
    })
}

/// Per-part attention `a_i` in [0, 1].
pub fn predict_attention(features: &InstanceFeatures, params: &AttentionParams) -> Result<AttentionVector> {
    attention_forward(features, params).map(|t| t.attention)
}

/// Elementwise product of attention and a class's rule row.
pub fn apply_rules(attention: &AttentionVector, rule_row: &[f64]) -> Result<AttentionVector> {
    let row: &RuleRow = rule_row.try_into().map_err(|_| {
        Error::Shape(format!("rule row has {} weights, expected {NUM_PARTS}", rule_row.len()))
    })?;
    if let Some(w) = row.iter().find(|w| !(0.0..=1.0).contains(*w)) {
        return Err(Error::Domain(format!("rule weight {w} outside [0, 1]")));
    }
    Ok(modulate(attention, row))
}

pub(crate) fn modulate(attention: &AttentionVector, row: &RuleRow) -> AttentionVector {
    let mut out = attention.0;
    for (o, w) in out.iter_mut().zip(row) {
        *o *= w;
    }
    AttentionVector(out)
}

/// Per-class, per-part linear read-out plus bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadParams {
    pub feature_dim: usize,
    /// Ascending class ids; row `k` of `weights` / `bias` belongs to `classes[k]`.
    pub classes: Vec<ClassId>,
    /// `classes.len() x 10 x feature_dim`, row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl HeadParams {
    pub fn zeros(feature_dim: usize, classes: &[ClassId]) -> Self {
        let mut classes = classes.to_vec();
        classes.sort_unstable();
        classes.dedup();
        let n = classes.len();
        Self {
            feature_dim,
            weights: vec![0.0; n * NUM_PARTS * feature_dim],
            bias: vec![0.0; n],
            classes,
        }
    }

    pub fn seeded(feature_dim: usize, classes: &[ClassId], rng: &mut SeededRng) -> Self {
        let mut h = Self::zeros(feature_dim, classes);
        for v in h.values_mut() {
            *v = rng.uniform_in(-INIT_SCALE, INIT_SCALE);
        }
        h
    }

    pub fn index_of(&self, class: ClassId) -> Result<usize> {
        self.classes
            .binary_search(&class)
            .map_err(|_| Error::NotFound(format!("head has no row for class {class}")))
    }

    fn row_stride(&self) -> usize {
        NUM_PARTS * self.feature_dim
    }

    /// Weight vector `w_{c,i}` by row index.
    pub fn part_weights(&self, index: usize, part: usize) -> &[f64] {
        let start = index * self.row_stride() + part * self.feature_dim;
        &self.weights[start..start + self.feature_dim]
    }

    pub fn part_weights_mut(&mut self, index: usize, part: usize) -> &mut [f64] {
        let start = index * self.row_stride() + part * self.feature_dim;
        let d = self.feature_dim;
        &mut self.weights[start..start + d]
    }

    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.weights.iter().chain(&self.bias)
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights.iter_mut().chain(self.bias.iter_mut())
    }

    pub fn check(&self) -> Result<()> {
        if self.weights.len() != self.classes.len() * self.row_stride() || self.bias.len() != self.classes.len() {
            return Err(Error::Shape("head params have inconsistent shapes".into()));
        }
        if self.classes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Shape("head class ids must be strictly ascending".into()));
        }
        if self.values().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("head params contain non-finite values".into()));
        }
        Ok(())
    }
}

/// Pre-sigmoid class score: `sum_i a_i * <w_{c,i}, f_i> + b_c`.
pub fn class_logit(features: &InstanceFeatures, attention_rb: &AttentionVector, head: &HeadParams, index: usize) -> f64 {
    let mut z = head.bias[index];
    for i in 0..NUM_PARTS {
        let a = attention_rb.0[i];
        if a != 0.0 {
            z += a * dot(head.part_weights(index, i), &features.parts[i]);
        }
    }
    z
}

pub fn score_class(
    features: &InstanceFeatures,
    attention_rb: &AttentionVector,
    head: &HeadParams,
    class: ClassId,
) -> Result<f64> {
    let index = head.index_of(class)?;
    if features.feature_dim() != head.feature_dim {
        return Err(Error::Shape(format!(
            "features have dimension {}, head expects {}",
            features.feature_dim(),
            head.feature_dim
        )));
    }
    Ok(sigmoid(class_logit(features, attention_rb, head, index)))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassScores(pub BTreeMap<ClassId, f64>);

impl ClassScores {
    pub fn get(&self, class: ClassId) -> Option<f64> {
        self.0.get(&class).copied()
    }
}

/// Scores every head class: attention once, then each class's rule row.
pub fn score_all(
    features: &InstanceFeatures,
    attention_params: &AttentionParams,
    rules: &RuleMatrix,
    head: &HeadParams,
) -> Result<ClassScores> {
    score_all_with(features, attention_params, Some(rules), head)
}

/// `rules = None` skips modulation entirely.
pub fn score_all_with(
    features: &InstanceFeatures,
    attention_params: &AttentionParams,
    rules: Option<&RuleMatrix>,
    head: &HeadParams,
) -> Result<ClassScores> {
    let attention = predict_attention(features, attention_params)?;
    score_with_attention(features, &attention, rules, head)
}

/// Scoring for an already-predicted attention vector.
pub fn score_with_attention(
    features: &InstanceFeatures,
    attention: &AttentionVector,
    rules: Option<&RuleMatrix>,
    head: &HeadParams,
) -> Result<ClassScores> {
    if features.feature_dim() != head.feature_dim {
        return Err(Error::Shape(format!(
            "features have dimension {}, head expects {}",
            features.feature_dim(),
            head.feature_dim
        )));
    }
    let mut scores = BTreeMap::new();
    for (index, &class) in head.classes.iter().enumerate() {
        let z = match rules {
            Some(rules) => {
                let a_rb = modulate(attention, rules.require_row(class)?);
                class_logit(features, &a_rb, head, index)
            }
            None => class_logit(features, attention, head, index),
        };
        scores.insert(class, sigmoid(z));
    }
    Ok(ClassScores(scores))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    #[default]
    Mean,
    Product,
}

pub fn late_fuse(part_stream: &ClassScores, instance_stream: &ClassScores, mode: FusionMode) -> Result<ClassScores> {
    let mismatch: Vec<ClassId> = part_stream
        .0
        .keys()
        .filter(|k| !instance_stream.0.contains_key(k))
        .chain(instance_stream.0.keys().filter(|k| !part_stream.0.contains_key(k)))
        .copied()
        .collect();
    if !mismatch.is_empty() {
        let mut mismatch = mismatch;
        mismatch.sort_unstable();
        return Err(Error::Fusion(mismatch));
    }
    let fused = part_stream
        .0
        .iter()
        .map(|(&k, &a)| {
            let b = instance_stream.0[&k];
            let v = match mode {
                FusionMode::Mean => (a + b) / 2.0,
                FusionMode::Product => a * b,
            };
            (k, v)
        })
        .collect();
    Ok(ClassScores(fused))
}
