//! Seeded synthetic benchmarks with planted part-relevance rules.
//!
//! Every class gets a boolean rule row. Positive instances of a class carry
//! a fixed class-specific signal vector (plus noise) on the parts its row
//! marks active; all other parts are pure noise. Test instances are laid
//! out on a grid so that every detection overlaps exactly its own GT pair.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attention::{AttentionParams, HeadParams};
use crate::classes::{ClassId, ClassTable, HoiClass, DEFAULT_RARITY_THRESHOLD};
use crate::error::{Error, Result};
use crate::eval::{BBox, GtPair};
use crate::io::{to_json_pretty, to_jsonl, write_file, InstanceRecord};
use crate::parts::{BodyPart, NUM_PARTS};
use crate::rng::SeededRng;
use crate::rules::{RuleKind, RuleMatrix, RuleRow};
use crate::trainer::ModelParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_classes: usize,
    pub n_rare: usize,
    pub feature_dim: usize,
    pub object_dim: usize,
    pub n_objects: usize,
    pub shots_per_rare: u32,
    pub shots_per_common: u32,
    pub test_per_class: usize,
    pub instances_per_image: usize,
    pub noise_std: f64,
    /// Magnitude of each signal coordinate (random sign).
    pub signal_strength: f64,
    /// Probability that a part is active in a planted rule row.
    pub rule_sparsity: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_classes: 30,
            n_rare: 12,
            feature_dim: 16,
            object_dim: 4,
            n_objects: 10,
            shots_per_rare: 5,
            shots_per_common: 20,
            test_per_class: 10,
            instances_per_image: 3,
            noise_std: 1.0,
            signal_strength: 2.0,
            rule_sparsity: 0.3,
            seed: 42,
        }
    }
}

impl SynthConfig {
    pub fn check(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_classes == 0 {
            return bad("n_classes must be positive".into());
        }
        if self.n_rare > self.n_classes {
            return bad(format!("n_rare {} exceeds n_classes {}", self.n_rare, self.n_classes));
        }
        if self.shots_per_rare >= DEFAULT_RARITY_THRESHOLD {
            return bad(format!("shots_per_rare {} must be below {DEFAULT_RARITY_THRESHOLD}", self.shots_per_rare));
        }
        if self.shots_per_common < DEFAULT_RARITY_THRESHOLD {
            return bad(format!("shots_per_common {} must be at least {DEFAULT_RARITY_THRESHOLD}", self.shots_per_common));
        }
        if self.feature_dim == 0 || self.n_objects == 0 || self.instances_per_image == 0 || self.test_per_class == 0 {
            return bad("feature_dim, n_objects, instances_per_image and test_per_class must be positive".into());
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad(format!("noise_std {} must be finite and non-negative", self.noise_std));
        }
        if !(self.signal_strength > 0.0 && self.signal_strength.is_finite()) {
            return bad(format!("signal_strength {} must be positive", self.signal_strength));
        }
        if !(self.rule_sparsity > 0.0 && self.rule_sparsity < 1.0) {
            return bad(format!("rule_sparsity {} outside (0, 1)", self.rule_sparsity));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub config: SynthConfig,
    pub table: ClassTable,
    /// Planted rows for every class, including non-rare ones.
    pub planted: RuleMatrix,
    /// `signals[class][part]`: the class mean on that part (zero when inactive).
    pub signals: BTreeMap<ClassId, Vec<Vec<f64>>>,
    pub train: Vec<InstanceRecord>,
    pub test: Vec<InstanceRecord>,
    pub test_gt: Vec<GtPair>,
}

/// Written next to the data files so the generating parameters stay attached.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthMeta {
    pub config: SynthConfig,
    pub rare: Vec<ClassId>,
    pub signal_parts: BTreeMap<ClassId, Vec<BodyPart>>,
}

const OBJECT_STREAM_BASE: u64 = 1 << 32;

fn noise(rng: &mut SeededRng, n: usize, std: f64) -> Vec<f64> {
    (0..n).map(|_| std * rng.normal()).collect()
}

fn planted_row(rng: &mut SeededRng, density: f64) -> RuleRow {
    let mut row = [0.0; NUM_PARTS];
    for w in row.iter_mut() {
        if rng.bernoulli(density) {
            *w = 1.0;
        }
    }
    if row.iter().all(|&w| w == 0.0) {
        row[rng.below(NUM_PARTS)] = 1.0;
    }
    row
}

pub fn generate_benchmark(config: &SynthConfig) -> Result<SynthDataset> {
    config.check()?;
    let c = config;
    let mut layout_rng = SeededRng::new(c.seed);

    let mut ids: Vec<usize> = (0..c.n_classes).collect();
    layout_rng.shuffle(&mut ids);
    let mut is_rare = vec![false; c.n_classes];
    for &i in &ids[..c.n_rare] {
        is_rare[i] = true;
    }

    let objects: Vec<Vec<f64>> = (0..c.n_objects)
        .map(|o| {
            let mut r = SeededRng::with_stream(c.seed, OBJECT_STREAM_BASE + o as u64);
            (0..c.object_dim).map(|_| r.sign()).collect()
        })
        .collect();

    let mut classes = Vec::with_capacity(c.n_classes);
    let mut planted = BTreeMap::new();
    let mut signals = BTreeMap::new();
    let mut train = Vec::new();
    let mut test_pool: Vec<(usize, InstanceRecord)> = Vec::new();
    for i in 0..c.n_classes {
        let id = ClassId(i as u32);
        let object_idx = i % c.n_objects;
        let object = format!("object{object_idx}");
        let shots = if is_rare[i] { c.shots_per_rare } else { c.shots_per_common };
        classes.push(HoiClass {
            class_id: id,
            verb: format!("verb{i}"),
            object: object.clone(),
            train_count: shots,
        });

        // class-level substream keeps every class independent of the others
        let mut rng = SeededRng::with_stream(c.seed, i as u64 + 1);
        let row = planted_row(&mut rng, c.rule_sparsity);
        let signal: Vec<Vec<f64>> = row
            .iter()
            .map(|&w| {
                (0..c.feature_dim)
                    .map(|_| {
                        let s = rng.sign() * c.signal_strength;
                        if w == 1.0 {
                            s
                        } else {
                            0.0
                        }
                    })
                    .collect()
            })
            .collect();

        let instance = |rng: &mut SeededRng, tag: &str, k: usize| -> InstanceRecord {
            let parts = BodyPart::ALL
                .iter()
                .map(|&p| {
                    let mut v = noise(rng, c.feature_dim, c.noise_std);
                    for (x, s) in v.iter_mut().zip(&signal[p.ordinal()]) {
                        *x += s;
                    }
                    (p, v)
                })
                .collect();
            let mut object_feature = objects[object_idx].clone();
            for (x, n) in object_feature.iter_mut().zip(noise(rng, c.object_dim, c.noise_std)) {
                *x += n;
            }
            InstanceRecord {
                instance_id: format!("{tag}_c{i}_{k}"),
                image_id: format!("{tag}_c{i}_{k}"),
                gt_class_ids: vec![id],
                object: object.clone(),
                object_feature,
                parts,
                instance_stream_scores: None,
                human_box: None,
                object_box: None,
            }
        };
        for k in 0..shots as usize {
            train.push(instance(&mut rng, "train", k));
        }
        for k in 0..c.test_per_class {
            test_pool.push((i, instance(&mut rng, "test", k)));
        }
        planted.insert(id, row);
        signals.insert(id, signal);
    }

    layout_rng.shuffle(&mut test_pool);
    let mut test = Vec::with_capacity(test_pool.len());
    let mut test_gt = Vec::with_capacity(test_pool.len());
    for (n, (class_idx, mut rec)) in test_pool.into_iter().enumerate() {
        let image = n / c.instances_per_image;
        let slot = (n % c.instances_per_image) as f64;
        let human_box = BBox::new(10.0 * slot, 0.0, 10.0 * slot + 4.0, 10.0);
        let object_box = BBox::new(10.0 * slot + 5.0, 0.0, 10.0 * slot + 9.0, 10.0);
        rec.image_id = format!("test_img{image:05}");
        rec.human_box = Some(human_box);
        rec.object_box = Some(object_box);
        test_gt.push(GtPair {
            image_id: rec.image_id.clone(),
            class_id: ClassId(class_idx as u32),
            human_box,
            object_box,
        });
        test.push(rec);
    }

    Ok(SynthDataset {
        config: c.clone(),
        table: ClassTable::new(classes)?,
        planted: RuleMatrix::new(RuleKind::Boolean, planted),
        signals,
        train,
        test,
        test_gt,
    })
}

impl SynthDataset {
    /// Parameters that read out exactly the planted signal: zero attention
    /// weights (every attention is 0.5), head weights equal to the signal.
    pub fn oracle_params(&self, hidden: usize) -> ModelParams {
        let d = self.config.feature_dim;
        let ids = self.table.ids();
        let mut head = HeadParams::zeros(d, &ids);
        for (index, id) in ids.iter().enumerate() {
            for (part, signal) in self.signals[id].iter().enumerate() {
                head.part_weights_mut(index, part).copy_from_slice(signal);
            }
        }
        ModelParams {
            attention: AttentionParams::zeros(d, self.config.object_dim, hidden),
            head,
        }
    }

    pub fn meta(&self) -> SynthMeta {
        let rare = self
            .table
            .classes()
            .iter()
            .filter(|c| c.train_count < DEFAULT_RARITY_THRESHOLD)
            .map(|c| c.class_id)
            .collect();
        let signal_parts = self
            .planted
            .rows()
            .iter()
            .map(|(&id, row)| {
                let parts = BodyPart::ALL.iter().copied().filter(|p| row[p.ordinal()] == 1.0).collect();
                (id, parts)
            })
            .collect();
        SynthMeta {
            config: self.config.clone(),
            rare,
            signal_parts,
        }
    }

    /// Writes `classes.csv`, `train.jsonl`, `test.jsonl`, `test_gt.jsonl`,
    /// `planted_rules.json` (non-rare rows forced to ones),
    /// `planted_rules_full.json` and `synth_meta.json`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        let partition = crate::classes::partition_by_rarity(&self.table, DEFAULT_RARITY_THRESHOLD);
        write_file(&dir.join("classes.csv"), &self.table.to_csv())?;
        write_file(&dir.join("train.jsonl"), &to_jsonl(&self.train))?;
        write_file(&dir.join("test.jsonl"), &to_jsonl(&self.test))?;
        write_file(&dir.join("test_gt.jsonl"), &to_jsonl(&self.test_gt))?;
        write_file(&dir.join("planted_rules.json"), &self.planted.restricted_to_rare(&partition).to_json())?;
        write_file(&dir.join("planted_rules_full.json"), &self.planted.to_json())?;
        write_file(&dir.join("synth_meta.json"), &to_json_pretty(&self.meta()))?;
        Ok(())
    }
}
