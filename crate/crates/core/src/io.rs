//! JSON-lines records shared by the scoring, training and evaluation paths.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::attention::InstanceFeatures;
use crate::classes::ClassId;
use crate::error::{Error, Result};
use crate::eval::BBox;
use crate::parts::BodyPart;
use crate::trainer::LabeledExample;

/// One candidate human-object pair with its precomputed features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceRecord {
    pub instance_id: String,
    #[serde(deserialize_with = "crate::eval::image_id")]
    pub image_id: String,
    pub gt_class_ids: Vec<ClassId>,
    pub object: String,
    pub object_feature: Vec<f64>,
    pub parts: BTreeMap<BodyPart, Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instance_stream_scores: Option<BTreeMap<ClassId, f64>>,
    /// Boxes are needed only when the record is turned into detections.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub human_box: Option<BBox>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub object_box: Option<BBox>,
}

impl InstanceRecord {
    pub fn features(&self) -> Result<InstanceFeatures> {
        let mut parts: [Vec<f64>; 10] = Default::default();
        for part in BodyPart::ALL {
            parts[part.ordinal()] = self
                .parts
                .get(&part)
                .cloned()
                .ok_or_else(|| Error::Shape(format!("instance {}: missing part {part}", self.instance_id)))?;
        }
        Ok(InstanceFeatures {
            parts,
            object: self.object_feature.clone(),
        })
    }

    /// Binary targets for every class in `classes`.
    pub fn labeled(&self, classes: &[ClassId]) -> Result<LabeledExample> {
        Ok(LabeledExample {
            features: self.features()?,
            targets: classes
                .iter()
                .map(|&c| (c, self.gt_class_ids.contains(&c) as u8))
                .collect(),
        })
    }
}

pub fn parse_jsonl<T: DeserializeOwned, R: BufRead>(reader: R, source_name: &str) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i as u64 + 1;
        let line = line.map_err(|e| Error::io(format!("{source_name}:{line_no}"), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| Error::parse(source_name, line_no, e.to_string()))?;
        out.push(value);
    }
    Ok(out)
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path.display(), e))?;
    parse_jsonl(BufReader::new(file), &path.display().to_string())
}

pub fn to_jsonl<T: Serialize>(items: &[T]) -> String {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item).expect("record serialize"));
        out.push('\n');
    }
    out
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display(), e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(&path.display().to_string(), e.line() as u64, e.to_string()))
}

pub fn to_json_pretty<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("json serialize");
    s.push('\n');
    s
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display(), e))?;
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path.display(), e))?;
    f.write_all(contents.as_bytes()).map_err(|e| Error::io(path.display(), e))
}
