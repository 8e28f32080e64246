//! Cross-entropy training of the read-out head (and optionally the
//! attention predictors) with ratio-controlled minibatches and plain SGD,
//! plus a central finite-difference gradient check.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::attention::{
    attention_forward, class_logit, modulate, predict_attention, sigmoid, AttentionParams, AttentionVector,
    HeadParams, InstanceFeatures,
};
use crate::classes::ClassId;
use crate::error::{Error, Result};
use crate::parts::NUM_PARTS;
use crate::rng::SeededRng;
use crate::rules::{RuleMatrix, RuleRow, ONES_ROW};

/// Scores are kept this far away from 0 and 1 before taking logarithms.
pub const SCORE_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub attention: AttentionParams,
    pub head: HeadParams,
}

impl ModelParams {
    /// Seeded uniform initialization; attention first, then head, from one stream.
    pub fn seeded(
        feature_dim: usize,
        object_dim: usize,
        hidden: usize,
        classes: &[ClassId],
        seed: u64,
    ) -> Self {
        let mut rng = SeededRng::new(seed);
        let attention = AttentionParams::seeded(feature_dim, object_dim, hidden, &mut rng);
        let head = HeadParams::seeded(feature_dim, classes, &mut rng);
        Self { attention, head }
    }

    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.values_mut().for_each(|v| *v = 0.0);
        z
    }

    pub fn len(&self) -> usize {
        self.values().count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.attention.values().chain(self.head.values())
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.attention.values_mut().chain(self.head.values_mut())
    }

    pub fn check(&self) -> Result<()> {
        self.attention.check()?;
        self.head.check()?;
        if self.attention.feature_dim != self.head.feature_dim {
            return Err(Error::Shape("attention and head feature dimensions differ".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum RulesAt {
    Inference,
    #[default]
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub iterations: usize,
    pub batch_size: usize,
    pub pos_neg_ratio: (u32, u32),
    pub seed: u64,
    pub train_attention: bool,
    pub rules_at: RulesAt,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            iterations: 10_000,
            batch_size: 20,
            pos_neg_ratio: (1, 4),
            seed: 0,
            train_attention: false,
            rules_at: RulesAt::Both,
        }
    }
}

impl TrainConfig {
    pub fn check(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.learning_rate)));
        }
        let (pos, neg) = self.pos_neg_ratio;
        let unit = (pos + neg) as usize;
        if unit == 0 {
            return Err(Error::Config("pos:neg ratio must not be 0:0".into()));
        }
        if self.batch_size < unit || !self.batch_size.is_multiple_of(unit) {
            return Err(Error::Config(format!(
                "batch size {} must be a positive multiple of {unit}",
                self.batch_size
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    pub features: InstanceFeatures,
    pub targets: BTreeMap<ClassId, u8>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub trace: Vec<f64>,
    pub final_loss: Option<f64>,
}

/// One (example, class) pair of a minibatch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Sample {
    pub example: usize,
    pub class: ClassId,
    pub target: u8,
}

pub fn cross_entropy(score: f64, target: u8) -> Result<f64> {
    let y = match target {
        0 => 0.0,
        1 => 1.0,
        t => return Err(Error::Domain(format!("target {t} is not binary"))),
    };
    let s = score.clamp(SCORE_CLAMP, 1.0 - SCORE_CLAMP);
    Ok(-(y * s.ln() + (1.0 - y) * (1.0 - s).ln()))
}

/// Loss and its derivative with respect to the logit.
fn logit_loss(z: f64, target: u8) -> (f64, f64) {
    let s = sigmoid(z);
    let clamped = !(SCORE_CLAMP..=1.0 - SCORE_CLAMP).contains(&s);
    let loss = cross_entropy(s, target).expect("binary target");
    let dz = if clamped { 0.0 } else { s - target as f64 };
    (loss, dz)
}

/// Positive and negative (example, class) pools, built once.
#[derive(Debug, Clone)]
pub struct MinibatchSampler {
    positives: Vec<(usize, ClassId)>,
    negatives: Vec<(usize, ClassId)>,
    ratio: (u32, u32),
}

impl MinibatchSampler {
    pub fn new(dataset: &[LabeledExample], classes: &[ClassId], ratio: (u32, u32)) -> Result<Self> {
        if dataset.is_empty() {
            return Err(Error::EmptyPool("dataset has no examples".into()));
        }
        let mut positives = Vec::new();
        let mut negatives = Vec::new();
        for (i, ex) in dataset.iter().enumerate() {
            for &c in classes {
                match ex.targets.get(&c) {
                    Some(1) => positives.push((i, c)),
                    Some(0) => negatives.push((i, c)),
                    Some(t) => return Err(Error::Domain(format!("example {i} class {c}: target {t} is not binary"))),
                    None => return Err(Error::Coverage(format!("example {i} has no target for class {c}"))),
                }
            }
        }
        Ok(Self {
            positives,
            negatives,
            ratio,
        })
    }

    pub fn pool_sizes(&self) -> (usize, usize) {
        (self.positives.len(), self.negatives.len())
    }

    pub fn sample(&self, size: usize, rng: &mut SeededRng) -> Result<Vec<Sample>> {
        let (pos, neg) = (self.ratio.0 as usize, self.ratio.1 as usize);
        let unit = pos + neg;
        if unit == 0 || !size.is_multiple_of(unit) {
            return Err(Error::Config(format!("batch size {size} is not a multiple of {unit}")));
        }
        let n_pos = size / unit * pos;
        let n_neg = size / unit * neg;
        let mut batch = Vec::with_capacity(size);
        for (pool, quota, label, target) in [
            (&self.positives, n_pos, "positive", 1u8),
            (&self.negatives, n_neg, "negative", 0u8),
        ] {
            if quota == 0 {
                continue;
            }
            if pool.is_empty() {
                return Err(Error::EmptyPool(format!("no {label} samples for a quota of {quota}")));
            }
            for idx in draw_indices(pool.len(), quota, rng) {
                let (example, class) = pool[idx];
                batch.push(Sample { example, class, target });
            }
        }
        Ok(batch)
    }
}

/// `k` indices from `0..n`: distinct (Floyd's method) when `k <= n`,
/// with replacement otherwise.
fn draw_indices(n: usize, k: usize, rng: &mut SeededRng) -> Vec<usize> {
    if k > n {
        return (0..k).map(|_| rng.below(n)).collect();
    }
    let mut chosen = HashSet::with_capacity(k);
    let mut out = Vec::with_capacity(k);
    for j in n - k..n {
        let t = rng.below(j + 1);
        let pick = if chosen.contains(&t) { j } else { t };
        chosen.insert(pick);
        out.push(pick);
    }
    out
}

/// Positives and negatives over every class that appears in the targets.
pub fn sample_minibatch(
    dataset: &[LabeledExample],
    ratio: (u32, u32),
    size: usize,
    seed: u64,
) -> Result<Vec<Sample>> {
    let mut classes: Vec<ClassId> = dataset.iter().flat_map(|e| e.targets.keys().copied()).collect();
    classes.sort_unstable();
    classes.dedup();
    let sampler = MinibatchSampler::new(dataset, &classes, ratio)?;
    sampler.sample(size, &mut SeededRng::new(seed))
}

fn training_row(rules: Option<&RuleMatrix>, class: ClassId) -> Result<&RuleRow> {
    match rules {
        Some(r) => r.require_row(class),
        None => Ok(&ONES_ROW),
    }
}

/// Adds `scale * dloss/dparams` for one (example, class) pair into `grad`
/// and returns the loss. Attention gradients only when `attention_grad`.
#[allow(clippy::too_many_arguments)]
fn accumulate(
    params: &ModelParams,
    features: &InstanceFeatures,
    cached_attention: Option<&AttentionVector>,
    class: ClassId,
    target: u8,
    row: &RuleRow,
    scale: f64,
    attention_grad: bool,
    grad: &mut ModelParams,
) -> Result<f64> {
    let index = params.head.index_of(class)?;
    let owned_trace;
    let (attention, trace) = match (cached_attention, attention_grad) {
        (Some(a), false) => (*a, None),
        _ => {
            owned_trace = attention_forward(features, &params.attention)?;
            (owned_trace.attention, Some(&owned_trace))
        }
    };
    let a_rb = modulate(&attention, row);
    let z = class_logit(features, &a_rb, &params.head, index);
    let (loss, dz) = logit_loss(z, target);
    let g = scale * dz;
    if g == 0.0 {
        return Ok(loss);
    }
    grad.head.bias[index] += g;
    for i in 0..NUM_PARTS {
        let coeff = g * a_rb.0[i];
        if coeff != 0.0 {
            for (gw, f) in grad.head.part_weights_mut(index, i).iter_mut().zip(&features.parts[i]) {
                *gw += coeff * f;
            }
        }
    }
    if attention_grad {
        let trace = trace.expect("trace computed when attention gradients are requested");
        let input = params.attention.input_dim();
        for i in 0..NUM_PARTS {
            if row[i] == 0.0 {
                continue;
            }
            let wf: f64 = params
                .head
                .part_weights(index, i)
                .iter()
                .zip(&features.parts[i])
                .map(|(w, f)| w * f)
                .sum();
            let a = attention.0[i];
            let du = g * row[i] * wf * a * (1.0 - a);
            if du == 0.0 {
                continue;
            }
            let p = &params.attention.parts[i];
            let h = &trace.hidden[i];
            let gp = &mut grad.attention.parts[i];
            gp.b2 += du;
            for k in 0..params.attention.hidden {
                gp.w2[k] += du * h[k];
                if h[k] > 0.0 {
                    let dh = du * p.w2[k];
                    gp.b1[k] += dh;
                    let gw1 = &mut gp.w1[k * input..(k + 1) * input];
                    let d = features.parts[i].len();
                    for (j, gw) in gw1.iter_mut().enumerate() {
                        let x = if j < d { features.parts[i][j] } else { features.object[j - d] };
                        *gw += dh * x;
                    }
                }
            }
        }
    }
    Ok(loss)
}

fn scored_classes(params: &ModelParams, example: &LabeledExample) -> Result<Vec<(ClassId, u8)>> {
    params
        .head
        .classes
        .iter()
        .map(|&c| {
            example
                .targets
                .get(&c)
                .map(|&t| (c, t))
                .ok_or_else(|| Error::Coverage(format!("example has no target for class {c}")))
        })
        .collect()
}

/// Mean cross-entropy of one example over every head class.
pub fn example_loss(params: &ModelParams, example: &LabeledExample, rules: Option<&RuleMatrix>) -> Result<f64> {
    let targets = scored_classes(params, example)?;
    let attention = predict_attention(&example.features, &params.attention)?;
    let mut total = 0.0;
    for &(class, target) in &targets {
        let index = params.head.index_of(class)?;
        let a_rb = modulate(&attention, training_row(rules, class)?);
        let z = class_logit(&example.features, &a_rb, &params.head, index);
        total += cross_entropy(sigmoid(z), target)?;
    }
    Ok(total / targets.len() as f64)
}

/// Analytic gradient of [`example_loss`], flattened in [`ModelParams::values`] order.
pub fn analytic_gradient(params: &ModelParams, example: &LabeledExample, rules: Option<&RuleMatrix>) -> Result<Vec<f64>> {
    let targets = scored_classes(params, example)?;
    let mut grad = params.zeros_like();
    let scale = 1.0 / targets.len() as f64;
    for &(class, target) in &targets {
        accumulate(
            params,
            &example.features,
            None,
            class,
            target,
            training_row(rules, class)?,
            scale,
            true,
            &mut grad,
        )?;
    }
    let flat: Vec<f64> = grad.values().copied().collect();
    if flat.iter().any(|g| !g.is_finite()) {
        return Err(Error::Numeric("analytic gradient is not finite".into()));
    }
    Ok(flat)
}

/// Central finite differences of [`example_loss`], same order as [`analytic_gradient`].
pub fn numeric_gradient(
    params: &ModelParams,
    example: &LabeledExample,
    rules: Option<&RuleMatrix>,
    epsilon: f64,
) -> Result<Vec<f64>> {
    let mut probe = params.clone();
    let n = probe.len();
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let original = *probe.values().nth(k).expect("index in range");
        let set = |p: &mut ModelParams, v: f64| *p.values_mut().nth(k).expect("index in range") = v;
        set(&mut probe, original + epsilon);
        let plus = example_loss(&probe, example, rules)?;
        set(&mut probe, original - epsilon);
        let minus = example_loss(&probe, example, rules)?;
        set(&mut probe, original);
        out.push((plus - minus) / (2.0 * epsilon));
    }
    if out.iter().any(|g| !g.is_finite()) {
        return Err(Error::Numeric("finite-difference gradient is not finite".into()));
    }
    Ok(out)
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Max relative error between analytic and finite-difference gradients.
pub fn gradient_check(
    params: &ModelParams,
    example: &LabeledExample,
    rules: Option<&RuleMatrix>,
    epsilon: f64,
) -> Result<f64> {
    if !(1e-8..=1e-4).contains(&epsilon) {
        return Err(Error::Domain(format!("epsilon {epsilon} outside [1e-8, 1e-4]")));
    }
    let analytic = analytic_gradient(params, example, rules)?;
    let numeric = numeric_gradient(params, example, rules, epsilon)?;
    Ok(analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| relative_error(*a, *n))
        .fold(0.0, f64::max))
}

/// Runs `config.iterations` SGD steps on minibatch mean cross-entropy.
pub fn train(
    dataset: &[LabeledExample],
    config: &TrainConfig,
    rules: &RuleMatrix,
    init: &ModelParams,
) -> Result<(ModelParams, LossReport)> {
    config.check()?;
    init.check()?;
    let mut params = init.clone();
    let mut report = LossReport::default();
    if config.iterations == 0 {
        return Ok((params, report));
    }
    let training_rules = match config.rules_at {
        RulesAt::Both => Some(rules),
        RulesAt::Inference => None,
    };
    for &c in &params.head.classes {
        training_row(training_rules, c)?;
    }
    let sampler = MinibatchSampler::new(dataset, &params.head.classes, config.pos_neg_ratio)?;
    let cached: Option<Vec<AttentionVector>> = if config.train_attention {
        None
    } else {
        Some(
            dataset
                .iter()
                .map(|e| predict_attention(&e.features, &params.attention))
                .collect::<Result<_>>()?,
        )
    };
    let mut rng = SeededRng::new(config.seed);
    let mut grad = params.zeros_like();
    let mut touched: Vec<usize> = Vec::new();
    let d = params.head.feature_dim;
    let stride = NUM_PARTS * d;
    for iteration in 0..config.iterations {
        let batch = sampler.sample(config.batch_size, &mut rng)?;
        let scale = 1.0 / batch.len() as f64;
        let mut total = 0.0;
        touched.clear();
        for s in &batch {
            let ex = &dataset[s.example];
            total += accumulate(
                &params,
                &ex.features,
                cached.as_ref().map(|c| &c[s.example]),
                s.class,
                s.target,
                training_row(training_rules, s.class)?,
                scale,
                config.train_attention,
                &mut grad,
            )?;
            touched.push(params.head.index_of(s.class)?);
        }
        let mean = total * scale;
        if !mean.is_finite() {
            return Err(Error::Divergence { iteration, loss: mean });
        }
        touched.sort_unstable();
        touched.dedup();
        let lr = config.learning_rate;
        for &idx in &touched {
            let (w, gw) = (
                &mut params.head.weights[idx * stride..(idx + 1) * stride],
                &mut grad.head.weights[idx * stride..(idx + 1) * stride],
            );
            for (p, g) in w.iter_mut().zip(gw.iter_mut()) {
                *p -= lr * *g;
                *g = 0.0;
            }
            params.head.bias[idx] -= lr * grad.head.bias[idx];
            grad.head.bias[idx] = 0.0;
        }
        if config.train_attention {
            for (p, g) in params.attention.values_mut().zip(grad.attention.values_mut()) {
                *p -= lr * *g;
                *g = 0.0;
            }
        }
        if params.head.values().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { iteration, loss: f64::NAN });
        }
        report.trace.push(mean);
    }
    report.final_loss = report.trace.last().copied();
    Ok((params, report))
}

/// Saved training state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub seed: u64,
    pub iterations: usize,
}
