//! End-to-end comparison of planted rules against the all-ones control on
//! a synthetic benchmark: train, score the test split, evaluate.

use crate::attention::FusionMode;
use crate::classes::{partition_by_rarity, DEFAULT_RARITY_THRESHOLD};
use crate::error::Result;
use crate::eval::{evaluate, EvalReport, Setting};
use crate::io::InstanceRecord;
use crate::pipeline::score_instances;
use crate::rules::{all_ones, RuleMatrix};
use crate::synth::{generate_benchmark, SynthConfig, SynthDataset};
use crate::trainer::{train, LabeledExample, ModelParams, TrainConfig};

/// Hidden width of the attention predictors used by the experiments.
pub const DEFAULT_HIDDEN: usize = 8;

#[derive(Debug, Clone)]
pub struct UpliftResult {
    pub planted: EvalReport,
    pub all_ones: EvalReport,
}

impl UpliftResult {
    pub fn rare_gain(&self) -> Option<f64> {
        Some(self.planted.map_rare? - self.all_ones.map_rare?)
    }

    pub fn full_gain(&self) -> Option<f64> {
        Some(self.planted.map_full? - self.all_ones.map_full?)
    }
}

pub fn labeled_examples(records: &[InstanceRecord], ds: &SynthDataset) -> Result<Vec<LabeledExample>> {
    let ids = ds.table.ids();
    records.iter().map(|r| r.labeled(&ids)).collect()
}

/// Trains from the same initialization with `rules`, then evaluates the test split.
pub fn train_and_evaluate(
    ds: &SynthDataset,
    rules: &RuleMatrix,
    train_config: &TrainConfig,
    hidden: usize,
    setting: Setting,
) -> Result<EvalReport> {
    let partition = partition_by_rarity(&ds.table, DEFAULT_RARITY_THRESHOLD);
    let examples = labeled_examples(&ds.train, ds)?;
    let init = ModelParams::seeded(
        ds.config.feature_dim,
        ds.config.object_dim,
        hidden,
        &ds.table.ids(),
        train_config.seed,
    );
    let (params, _) = train(&examples, train_config, rules, &init)?;
    let dets = score_instances(&ds.test, &params, Some(rules), FusionMode::Mean)?;
    evaluate(&dets, &ds.test_gt, &ds.table, &partition, setting)
}

/// Planted rules (rare rows only, the rest ones) versus the all-ones control.
pub fn uplift_experiment(synth: &SynthConfig, train_config: &TrainConfig, hidden: usize) -> Result<UpliftResult> {
    let ds = generate_benchmark(synth)?;
    let partition = partition_by_rarity(&ds.table, DEFAULT_RARITY_THRESHOLD);
    let planted = ds.planted.restricted_to_rare(&partition);
    let control = all_ones(&ds.table);
    Ok(UpliftResult {
        planted: train_and_evaluate(&ds, &planted, train_config, hidden, Setting::Default)?,
        all_ones: train_and_evaluate(&ds, &control, train_config, hidden, Setting::Default)?,
    })
}
