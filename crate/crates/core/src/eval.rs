//! HICO-DET style evaluation: human/object pair matching, all-points
//! interpolated AP, Default and Known-Object settings, and Full / Rare /
//! Non-rare mAP.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize};

use crate::classes::{ClassId, ClassPartition, ClassTable};
use crate::error::{Error, Result};

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Self { x1, y1, x2, y2 }
    }

    pub fn is_valid(&self) -> bool {
        [self.x1, self.y1, self.x2, self.y2].iter().all(|v| v.is_finite()) && self.x2 > self.x1 && self.y2 > self.y1
    }

    pub fn area(&self) -> f64 {
        (self.x2 - self.x1) * (self.y2 - self.y1)
    }

    fn check(&self) -> Result<()> {
        if self.is_valid() {
            Ok(())
        } else {
            Err(Error::Domain(format!("degenerate box {self}")))
        }
    }
}

impl From<[f64; 4]> for BBox {
    fn from(v: [f64; 4]) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x1, b.y1, b.x2, b.y2]
    }
}

impl fmt::Display for BBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}, {}, {}]", self.x1, self.y1, self.x2, self.y2)
    }
}

pub fn iou(a: &BBox, b: &BBox) -> Result<f64> {
    a.check()?;
    b.check()?;
    let w = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let h = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = w * h;
    if inter == 0.0 {
        return Ok(0.0);
    }
    Ok(inter / (a.area() + b.area() - inter))
}

/// Image ids are strings on the wire; bare integers are accepted too.
pub(crate) fn image_id<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<String, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Id {
        S(String),
        N(serde_json::Number),
    }
    Ok(match Id::deserialize(d)? {
        Id::S(s) => s,
        Id::N(n) => n.to_string(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Detection {
    #[serde(deserialize_with = "image_id")]
    pub image_id: String,
    pub class_id: ClassId,
    pub score: f64,
    pub human_box: BBox,
    pub object_box: BBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GtPair {
    #[serde(deserialize_with = "image_id")]
    pub image_id: String,
    pub class_id: ClassId,
    pub human_box: BBox,
    pub object_box: BBox,
}

/// Ranked TP/FP flags of one class.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ClassMatches {
    /// Descending score order; `true` marks a true positive.
    pub flags: Vec<bool>,
    pub n_gt: usize,
}

/// Greedy one-to-one matching per class. A detection is a TP when an
/// unmatched GT pair of its class on its image overlaps it with both
/// human and object IoU at or above `iou_thresh`; of the candidates the
/// one with the largest `min(IoU_h, IoU_o)` is consumed.
pub fn match_detections(dets: &[Detection], gts: &[GtPair], iou_thresh: f64) -> Result<BTreeMap<ClassId, ClassMatches>> {
    if !(iou_thresh > 0.0 && iou_thresh <= 1.0) {
        return Err(Error::Domain(format!("IoU threshold {iou_thresh} outside (0, 1]")));
    }
    let mut out: BTreeMap<ClassId, ClassMatches> = BTreeMap::new();
    let mut gt_index: HashMap<(ClassId, &str), Vec<usize>> = HashMap::new();
    for (i, g) in gts.iter().enumerate() {
        g.human_box.check()?;
        g.object_box.check()?;
        gt_index.entry((g.class_id, g.image_id.as_str())).or_default().push(i);
        out.entry(g.class_id).or_default().n_gt += 1;
    }
    let mut by_class: BTreeMap<ClassId, Vec<usize>> = BTreeMap::new();
    for (i, d) in dets.iter().enumerate() {
        if !d.score.is_finite() {
            return Err(Error::Domain(format!("detection {i} has non-finite score")));
        }
        d.human_box.check()?;
        d.object_box.check()?;
        by_class.entry(d.class_id).or_default().push(i);
    }
    let mut used = vec![false; gts.len()];
    for (class, mut order) in by_class {
        // stable: equal scores keep input order
        order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score));
        let entry = out.entry(class).or_default();
        for i in order {
            let d = &dets[i];
            let mut best: Option<(usize, f64)> = None;
            if let Some(cands) = gt_index.get(&(class, d.image_id.as_str())) {
                for &g in cands {
                    if used[g] {
                        continue;
                    }
                    let ih = iou(&d.human_box, &gts[g].human_box)?;
                    let io = iou(&d.object_box, &gts[g].object_box)?;
                    if ih >= iou_thresh && io >= iou_thresh {
                        let m = ih.min(io);
                        if best.is_none_or(|(_, bm)| m > bm) {
                            best = Some((g, m));
                        }
                    }
                }
            }
            if let Some((g, _)) = best {
                used[g] = true;
            }
            entry.flags.push(best.is_some());
        }
    }
    Ok(out)
}

/// All-points interpolated AP; `None` when the class has no ground truth.
pub fn average_precision(flags: &[bool], n_gt: usize) -> Option<f64> {
    if n_gt == 0 {
        return None;
    }
    let mut precision = Vec::with_capacity(flags.len());
    let mut tp = 0usize;
    for (rank, &hit) in flags.iter().enumerate() {
        tp += hit as usize;
        precision.push(tp as f64 / (rank + 1) as f64);
    }
    // precision envelope from the right
    for k in (0..precision.len().saturating_sub(1)).rev() {
        precision[k] = precision[k].max(precision[k + 1]);
    }
    // each TP is a recall step of 1/n_gt
    let sum: f64 = flags
        .iter()
        .zip(&precision)
        .filter(|(hit, _)| **hit)
        .map(|(_, p)| p)
        .sum();
    Some((sum / n_gt as f64).min(1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    Default,
    #[value(name = "ko")]
    #[serde(rename = "ko", alias = "known_object")]
    KnownObject,
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Setting::Default => "default",
            Setting::KnownObject => "ko",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub setting: Setting,
    /// AP in [0, 1] for every class with at least one GT pair.
    pub per_class_ap: BTreeMap<ClassId, f64>,
    /// Fractions in [0, 1]; `null` when the class set has no defined AP.
    pub map_full: Option<f64>,
    pub map_rare: Option<f64>,
    pub map_nonrare: Option<f64>,
    /// Classes left out of the means because they have no GT pairs.
    #[serde(default)]
    pub excluded_no_gt: Vec<ClassId>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serialize");
        s.push('\n');
        s
    }
}

fn mean_over(aps: &BTreeMap<ClassId, f64>, ids: &BTreeSet<ClassId>) -> Option<f64> {
    let vals: Vec<f64> = ids.iter().filter_map(|id| aps.get(id).copied()).collect();
    if vals.is_empty() {
        None
    } else {
        Some(vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

pub fn evaluate(
    dets: &[Detection],
    gts: &[GtPair],
    table: &ClassTable,
    partition: &ClassPartition,
    setting: Setting,
) -> Result<EvalReport> {
    evaluate_at(dets, gts, table, partition, setting, DEFAULT_IOU_THRESHOLD)
}

pub fn evaluate_at(
    dets: &[Detection],
    gts: &[GtPair],
    table: &ClassTable,
    partition: &ClassPartition,
    setting: Setting,
    iou_thresh: f64,
) -> Result<EvalReport> {
    let object_of = |id: ClassId| -> Result<&str> {
        table
            .get(id)
            .map(|c| c.object.as_str())
            .ok_or_else(|| Error::NotFound(format!("class {id} not in class table")))
    };
    for g in gts {
        object_of(g.class_id)?;
    }
    for d in dets {
        object_of(d.class_id)?;
    }
    let kept: Vec<Detection> = match setting {
        Setting::Default => dets.to_vec(),
        Setting::KnownObject => {
            let mut image_objects: HashSet<(&str, &str)> = HashSet::new();
            for g in gts {
                image_objects.insert((g.image_id.as_str(), object_of(g.class_id)?));
            }
            let mut kept = Vec::with_capacity(dets.len());
            for d in dets {
                if image_objects.contains(&(d.image_id.as_str(), object_of(d.class_id)?)) {
                    kept.push(d.clone());
                }
            }
            kept
        }
    };
    let matches = match_detections(&kept, gts, iou_thresh)?;
    let mut per_class_ap = BTreeMap::new();
    let mut excluded_no_gt = Vec::new();
    for id in table.ids() {
        let m = matches.get(&id).cloned().unwrap_or_default();
        match average_precision(&m.flags, m.n_gt) {
            Some(ap) => {
                per_class_ap.insert(id, ap);
            }
            None => excluded_no_gt.push(id),
        }
    }
    let all: BTreeSet<ClassId> = table.ids().into_iter().collect();
    Ok(EvalReport {
        setting,
        map_full: mean_over(&per_class_ap, &all),
        map_rare: mean_over(&per_class_ap, &partition.rare),
        map_nonrare: mean_over(&per_class_ap, &partition.non_rare),
        per_class_ap,
        excluded_no_gt,
    })
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{:.2}", 100.0 * x))
}

/// Aligned text table, mAP in percent with two decimals; columns are
/// Full/Rare/Non-rare for Default then Known-Object. Missing settings print `-`.
pub fn format_table(rows: &[(&str, Option<&EvalReport>, Option<&EvalReport>)]) -> String {
    let header = ["Method", "Full(def)", "Rare(def)", "Non-rare(def)", "Full(ko)", "Rare(ko)", "Non-rare(ko)"];
    let mut cells: Vec<Vec<String>> = vec![header.iter().map(|s| s.to_string()).collect()];
    for (name, def, ko) in rows {
        let mut row = vec![name.to_string()];
        for r in [def, ko] {
            match r {
                Some(r) => row.extend([pct(r.map_full), pct(r.map_rare), pct(r.map_nonrare)]),
                None => row.extend(["-".to_string(), "-".to_string(), "-".to_string()]),
            }
        }
        cells.push(row);
    }
    let widths: Vec<usize> = (0..header.len())
        .map(|c| cells.iter().map(|r| r[c].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in &cells {
        let line: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(c, s)| if c == 0 { format!("{s:<w$}", w = widths[c]) } else { format!("{s:>w$}", w = widths[c]) })
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}

/// Per-class AP change from report `a` to report `b` (b minus a).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDiff {
    pub setting: Setting,
    pub per_class_delta: BTreeMap<ClassId, f64>,
    pub map_full_delta: Option<f64>,
    pub map_rare_delta: Option<f64>,
    pub map_nonrare_delta: Option<f64>,
}

/// Classes defined in only one report are left out of `per_class_delta`.
pub fn diff_reports(a: &EvalReport, b: &EvalReport) -> Result<ReportDiff> {
    if a.setting != b.setting {
        return Err(Error::Config(format!("cannot diff a {} report against a {} report", a.setting, b.setting)));
    }
    let delta = |x: Option<f64>, y: Option<f64>| Some(y? - x?);
    Ok(ReportDiff {
        setting: a.setting,
        per_class_delta: a
            .per_class_ap
            .iter()
            .filter_map(|(id, ap)| b.per_class_ap.get(id).map(|bp| (*id, bp - ap)))
            .collect(),
        map_full_delta: delta(a.map_full, b.map_full),
        map_rare_delta: delta(a.map_rare, b.map_rare),
        map_nonrare_delta: delta(a.map_nonrare, b.map_nonrare),
    })
}
