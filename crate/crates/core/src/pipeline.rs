//! Instance records to detections: attention, rule modulation, head scores,
//! optional late fusion with an instance stream.

use crate::attention::{late_fuse, score_all_with, ClassScores, FusionMode};
use crate::error::{Error, Result};
use crate::classes::{ClassPartition, ClassTable};
use crate::eval::{evaluate, Detection, EvalReport, GtPair, Setting};
use crate::io::InstanceRecord;
use crate::rules::RuleMatrix;
use crate::trainer::ModelParams;

/// Returned by [`score_instances_until`] when the caller's stop check fires.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Cancelled;

pub fn score_record(
    record: &InstanceRecord,
    params: &ModelParams,
    rules: Option<&RuleMatrix>,
    fusion: FusionMode,
) -> Result<ClassScores> {
    let features = record.features()?;
    let part_stream = score_all_with(&features, &params.attention, rules, &params.head)?;
    match &record.instance_stream_scores {
        Some(s) => late_fuse(&part_stream, &ClassScores(s.clone()), fusion),
        None => Ok(part_stream),
    }
}

/// One detection per (instance, head class).
pub fn score_instances(
    records: &[InstanceRecord],
    params: &ModelParams,
    rules: Option<&RuleMatrix>,
    fusion: FusionMode,
) -> Result<Vec<Detection>> {
    match score_instances_until(records, params, rules, fusion, &|| false)? {
        Ok(d) => Ok(d),
        Err(Cancelled) => unreachable!("stop check never fires"),
    }
}

/// Like [`score_instances`], polling `stop` between instances.
pub fn score_instances_until(
    records: &[InstanceRecord],
    params: &ModelParams,
    rules: Option<&RuleMatrix>,
    fusion: FusionMode,
    stop: &dyn Fn() -> bool,
) -> Result<std::result::Result<Vec<Detection>, Cancelled>> {
    let mut out = Vec::with_capacity(records.len() * params.head.classes.len());
    for r in records {
        if stop() {
            return Ok(Err(Cancelled));
        }
        let (Some(human_box), Some(object_box)) = (r.human_box, r.object_box) else {
            return Err(Error::Shape(format!("instance {} has no boxes to score", r.instance_id)));
        };
        let scores = score_record(r, params, rules, fusion)?;
        for (class_id, score) in scores.0 {
            out.push(Detection {
                image_id: r.image_id.clone(),
                class_id,
                score,
                human_box,
                object_box,
            });
        }
    }
    Ok(Ok(out))
}

/// Scores `records` with `rules` and evaluates against `gts`, polling `stop`.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_rules(
    records: &[InstanceRecord],
    gts: &[GtPair],
    table: &ClassTable,
    partition: &ClassPartition,
    params: &ModelParams,
    rules: Option<&RuleMatrix>,
    fusion: FusionMode,
    setting: Setting,
    stop: &dyn Fn() -> bool,
) -> Result<std::result::Result<EvalReport, Cancelled>> {
    let dets = match score_instances_until(records, params, rules, fusion, stop)? {
        Ok(d) => d,
        Err(c) => return Ok(Err(c)),
    };
    evaluate(&dets, gts, table, partition, setting).map(Ok)
}
