//! Per-class, per-part rule weights: annotation averaging, thresholding,
//! the all-ones control, validation and the rules / heatmap file formats.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::classes::{ClassId, ClassPartition, ClassTable};
use crate::error::{Error, Result};
use crate::parts::{BodyPart, NUM_PARTS};

pub type RuleRow = [f64; NUM_PARTS];

pub const ONES_ROW: RuleRow = [1.0; NUM_PARTS];

/// Default cut-off used when mapping decimal weights to booleans.
pub const DEFAULT_BOOL_THRESHOLD: f64 = 0.5;

const LABEL_ALPHABET: [f64; 3] = [0.0, 0.5, 1.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleKind {
    Decimal,
    Boolean,
    AllOnes,
}

/// One annotator's labels, keyed by (class, part).
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatorLabelSet {
    pub annotator_id: String,
    pub labels: BTreeMap<(ClassId, BodyPart), f64>,
}

impl AnnotatorLabelSet {
    pub fn new(annotator_id: impl Into<String>) -> Self {
        Self {
            annotator_id: annotator_id.into(),
            labels: BTreeMap::new(),
        }
    }

    /// Sets all ten labels of one class.
    pub fn with_row(mut self, class: ClassId, row: RuleRow) -> Self {
        for part in BodyPart::ALL {
            self.labels.insert((class, part), row[part.ordinal()]);
        }
        self
    }

    pub fn labeled_classes(&self) -> BTreeSet<ClassId> {
        self.labels.keys().map(|(c, _)| *c).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RuleMatrix {
    pub kind: RuleKind,
    rows: BTreeMap<ClassId, RuleRow>,
}

impl RuleMatrix {
    pub fn new(kind: RuleKind, rows: BTreeMap<ClassId, RuleRow>) -> Self {
        Self { kind, rows }
    }

    pub fn rows(&self) -> &BTreeMap<ClassId, RuleRow> {
        &self.rows
    }

    pub fn row(&self, class: ClassId) -> Option<&RuleRow> {
        self.rows.get(&class)
    }

    pub fn require_row(&self, class: ClassId) -> Result<&RuleRow> {
        self.rows
            .get(&class)
            .ok_or_else(|| Error::NotFound(format!("no rule row for class {class}")))
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Replaces one weight, returning the updated matrix. The kind drops
    /// to `Decimal` since an edited matrix is no longer a pure control or
    /// boolean table.
    pub fn with_weight(&self, class: ClassId, part: BodyPart, weight: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&weight) {
            return Err(Error::Domain(format!("weight {weight} outside [0, 1]")));
        }
        let mut rows = self.rows.clone();
        let row = rows
            .get_mut(&class)
            .ok_or_else(|| Error::NotFound(format!("no rule row for class {class}")))?;
        row[part.ordinal()] = weight;
        Ok(Self {
            kind: RuleKind::Decimal,
            rows,
        })
    }

    /// Adds an all-ones row for every non-rare class without one and
    /// returns the ids that were filled.
    pub fn fill_missing_non_rare(&mut self, partition: &ClassPartition) -> Vec<ClassId> {
        let mut filled = Vec::new();
        for &id in &partition.non_rare {
            if let std::collections::btree_map::Entry::Vacant(e) = self.rows.entry(id) {
                e.insert(ONES_ROW);
                filled.push(id);
            }
        }
        if !filled.is_empty() {
            tracing::info!(count = filled.len(), "filled missing non-rare rule rows with ones");
        }
        filled
    }

    /// Keeps rare-class rows and forces every other row to ones.
    pub fn restricted_to_rare(&self, partition: &ClassPartition) -> Self {
        let rows = self
            .rows
            .iter()
            .map(|(&id, row)| (id, if partition.is_rare(id) { *row } else { ONES_ROW }))
            .collect();
        Self {
            kind: self.kind,
            rows,
        }
    }

    pub fn to_file(&self) -> RulesFile {
        RulesFile {
            version: 1,
            kind: self.kind,
            parts: BodyPart::names().iter().map(|s| s.to_string()).collect(),
            rows: self.rows.iter().map(|(k, v)| (*k, v.to_vec())).collect(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.to_file()).expect("rules serialize");
        s.push('\n');
        s
    }

    pub fn from_json_str(text: &str, source_name: &str) -> Result<Self> {
        let file: RulesFile = serde_json::from_str(text)
            .map_err(|e| Error::parse(source_name, e.line() as u64, e.to_string()))?;
        Self::from_file(file, source_name)
    }

    pub fn from_file(file: RulesFile, source_name: &str) -> Result<Self> {
        if file.version != 1 {
            return Err(Error::parse(
                source_name,
                0,
                format!("unsupported rules version {}", file.version),
            ));
        }
        if file.parts.iter().map(String::as_str).ne(BodyPart::names()) {
            return Err(Error::parse(
                source_name,
                0,
                format!("parts must be {:?}", BodyPart::names()),
            ));
        }
        let mut rows = BTreeMap::new();
        for (id, values) in file.rows {
            let row: RuleRow = values.as_slice().try_into().map_err(|_| {
                Error::Shape(format!(
                    "{source_name}: class {id} has {} weights, expected {NUM_PARTS}",
                    values.len()
                ))
            })?;
            rows.insert(id, row);
        }
        Ok(Self {
            kind: file.kind,
            rows,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display(), e))?;
        Self::from_json_str(&text, &path.display().to_string())
    }

    /// CSV matrix: one row per class (ascending id), one column per part.
    pub fn heatmap_csv(&self) -> String {
        let mut out = String::from("class_id");
        for name in BodyPart::names() {
            out.push(',');
            out.push_str(name);
        }
        out.push('\n');
        for (id, row) in &self.rows {
            out.push_str(&id.to_string());
            for w in row {
                out.push(',');
                out.push_str(&format_weight(*w));
            }
            out.push('\n');
        }
        out
    }
}

fn format_weight(w: f64) -> String {
    // serde_json's float formatting is shortest round-trip, matching the rules file.
    serde_json::to_string(&w).unwrap_or_else(|_| w.to_string())
}

/// On-disk rules document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RulesFile {
    pub version: u32,
    pub kind: RuleKind,
    pub parts: Vec<String>,
    pub rows: BTreeMap<ClassId, Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RuleValidationReport {
    pub ok: bool,
    pub violations: Vec<(ClassId, String)>,
}

/// Averages the annotators' labels for every rare class; non-rare rows are ones.
pub fn aggregate_annotations(
    sets: &[AnnotatorLabelSet],
    table: &ClassTable,
    partition: &ClassPartition,
) -> Result<RuleMatrix> {
    if sets.is_empty() {
        return Err(Error::Coverage("no annotator label sets supplied".into()));
    }
    for set in sets {
        for (&(class, part), &value) in &set.labels {
            if !LABEL_ALPHABET.contains(&value) {
                return Err(Error::Domain(format!(
                    "annotator {} class {class} part {part}: label {value} not in {{0, 0.5, 1}}",
                    set.annotator_id
                )));
            }
            if !table.contains(class) {
                return Err(Error::NotFound(format!(
                    "annotator {} labels unknown class {class}",
                    set.annotator_id
                )));
            }
        }
    }
    let k = sets.len() as f64;
    let mut rows = BTreeMap::new();
    for id in table.ids() {
        if !partition.is_rare(id) {
            rows.insert(id, ONES_ROW);
            continue;
        }
        let mut row = [0.0; NUM_PARTS];
        for part in BodyPart::ALL {
            // label values are multiples of 0.5, so this sum is exact
            let mut sum = 0.0;
            for set in sets {
                let v = set.labels.get(&(id, part)).ok_or_else(|| {
                    Error::Coverage(format!(
                        "annotator {} has no label for rare class {id} part {part}",
                        set.annotator_id
                    ))
                })?;
                sum += v;
            }
            row[part.ordinal()] = sum / k;
        }
        rows.insert(id, row);
    }
    Ok(RuleMatrix::new(RuleKind::Decimal, rows))
}

/// Maps each weight to 1 when it is at least `threshold`, else 0.
pub fn booleanize(matrix: &RuleMatrix, threshold: f64) -> Result<RuleMatrix> {
    if matrix.kind == RuleKind::Boolean {
        return Err(Error::InvalidKind(
            "matrix is already boolean; use it as is".into(),
        ));
    }
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::Domain(format!("threshold {threshold} outside (0, 1]")));
    }
    let rows = matrix
        .rows
        .iter()
        .map(|(&id, row)| (id, row.map(|w| if w >= threshold { 1.0 } else { 0.0 })))
        .collect();
    Ok(RuleMatrix::new(RuleKind::Boolean, rows))
}

pub fn all_ones(table: &ClassTable) -> RuleMatrix {
    all_ones_for(table.ids())
}

pub fn all_ones_for(ids: impl IntoIterator<Item = ClassId>) -> RuleMatrix {
    RuleMatrix::new(
        RuleKind::AllOnes,
        ids.into_iter().map(|id| (id, ONES_ROW)).collect(),
    )
}

pub fn validate_rules(matrix: &RuleMatrix, partition: &ClassPartition) -> RuleValidationReport {
    let mut violations = Vec::new();
    for id in partition.all() {
        let Some(row) = matrix.row(id) else {
            violations.push((id, "missing rule row".to_string()));
            continue;
        };
        for part in BodyPart::ALL {
            let w = row[part.ordinal()];
            if !(0.0..=1.0).contains(&w) {
                violations.push((id, format!("{part} weight {w} outside [0, 1]")));
            } else if matrix.kind == RuleKind::Boolean && w != 0.0 && w != 1.0 {
                violations.push((id, format!("{part} weight {w} is not boolean")));
            } else if matrix.kind == RuleKind::AllOnes && w != 1.0 {
                violations.push((id, format!("{part} weight {w} in an all-ones matrix")));
            }
        }
        if !partition.is_rare(id) && row.iter().any(|&w| w != 1.0) {
            violations.push((id, "non-rare class row is not all ones".to_string()));
        }
    }
    RuleValidationReport {
        ok: violations.is_empty(),
        violations,
    }
}

pub fn rule_row_mean(matrix: &RuleMatrix, class: ClassId) -> Result<f64> {
    let row = matrix.require_row(class)?;
    Ok(row.iter().sum::<f64>() / NUM_PARTS as f64)
}

#[derive(Debug, Deserialize)]
struct AnnotationRow {
    annotator_id: String,
    class_id: u32,
    part: String,
    label: f64,
}

/// Parses `annotator_id,class_id,part,label` rows into one set per
/// annotator, in order of first appearance. Label values are checked
/// later by [`aggregate_annotations`].
pub fn load_annotations<R: Read>(reader: R, source_name: &str) -> Result<Vec<AnnotatorLabelSet>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| Error::parse(source_name, 1, e.to_string()))?
        .clone();
    let expected = ["annotator_id", "class_id", "part", "label"];
    if header.iter().ne(expected.iter().copied()) {
        return Err(Error::parse(
            source_name,
            1,
            format!("expected header {}", expected.join(",")),
        ));
    }
    let mut sets: Vec<AnnotatorLabelSet> = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            Error::parse(source_name, line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let row: AnnotationRow = record
            .deserialize(Some(&header))
            .map_err(|e| Error::parse(source_name, line, e.to_string()))?;
        let part: BodyPart = row
            .part
            .parse()
            .map_err(|e: Error| Error::parse(source_name, line, e.to_string()))?;
        let idx = match sets.iter().position(|s| s.annotator_id == row.annotator_id) {
            Some(i) => i,
            None => {
                sets.push(AnnotatorLabelSet::new(row.annotator_id.clone()));
                sets.len() - 1
            }
        };
        if sets[idx]
            .labels
            .insert((ClassId(row.class_id), part), row.label)
            .is_some()
        {
            return Err(Error::Duplicate(format!(
                "{source_name}:{line}: annotator {} labels class {} part {part} twice",
                row.annotator_id, row.class_id
            )));
        }
    }
    Ok(sets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classes::{partition_by_rarity, HoiClass};
    use proptest::prelude::*;

    // "feed a cat" as three annotators could have labeled it.
    const FEED_CAT_LABELS: [RuleRow; 3] = [
        [0.0, 0.5, 0.5, 0.0, 0.5, 0.5, 1.0, 1.0, 1.0, 1.0],
        [0.0, 0.5, 0.0, 0.0, 0.0, 0.5, 1.0, 1.0, 0.5, 1.0],
        [0.0, 0.0, 0.5, 0.0, 0.5, 0.5, 1.0, 0.5, 1.0, 1.0],
    ];

    fn table() -> ClassTable {
        ClassTable::new(vec![
            HoiClass::new(0, "feed", "cat", 3),
            HoiClass::new(1, "ride", "horse", 50),
            HoiClass::new(2, "pet", "cat", 8),
        ])
        .unwrap()
    }

    fn feed_cat_sets() -> Vec<AnnotatorLabelSet> {
        FEED_CAT_LABELS
            .iter()
            .enumerate()
            .map(|(i, row)| {
                AnnotatorLabelSet::new(format!("a{i}"))
                    .with_row(ClassId(0), *row)
                    .with_row(ClassId(2), [1.0; 10])
            })
            .collect()
    }

    #[test]
    fn aggregation_matches_feed_cat_decimal_row() {
        let t = table();
        let p = partition_by_rarity(&t, 10);
        let m = aggregate_annotations(&feed_cat_sets(), &t, &p).unwrap();
        assert_eq!(m.kind, RuleKind::Decimal);
        let row = m.row(ClassId(0)).unwrap();
        let expect = [0.0, 1.0 / 3.0, 1.0 / 3.0, 0.0, 1.0 / 3.0, 0.5, 1.0, 5.0 / 6.0, 5.0 / 6.0, 1.0];
        for (a, b) in row.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15, "{row:?}");
        }
        assert_eq!(m.row(ClassId(1)), Some(&ONES_ROW));
        assert!(validate_rules(&m, &p).ok);
    }

    #[test]
    fn single_part_means() {
        let t = ClassTable::new(vec![HoiClass::new(0, "feed", "cat", 1)]).unwrap();
        let p = partition_by_rarity(&t, 10);
        let mk = |vals: [f64; 3]| -> Vec<AnnotatorLabelSet> {
            vals.iter()
                .enumerate()
                .map(|(i, &v)| {
                    let mut row = [0.0; 10];
                    row[7] = v;
                    AnnotatorLabelSet::new(format!("a{i}")).with_row(ClassId(0), row)
                })
                .collect()
        };
        let m = aggregate_annotations(&mk([1.0, 1.0, 0.5]), &t, &p).unwrap();
        assert!((m.row(ClassId(0)).unwrap()[7] - 0.8333333333333334).abs() < 1e-15);
        let m = aggregate_annotations(&mk([0.0, 0.0, 0.0]), &t, &p).unwrap();
        assert_eq!(m.row(ClassId(0)).unwrap()[7], 0.0);
        let err = aggregate_annotations(&mk([1.0, 0.5, 0.7]), &t, &p).unwrap_err();
        assert_eq!(err.kind(), "domain");
        assert!(err.to_string().contains("a2") && err.to_string().contains("RArm"), "{err}");
    }

    #[test]
    fn missing_rare_class_is_coverage_error() {
        let t = table();
        let p = partition_by_rarity(&t, 10);
        let mut sets = feed_cat_sets();
        sets[1].labels.retain(|(c, _), _| *c != ClassId(2));
        assert_eq!(aggregate_annotations(&sets, &t, &p).unwrap_err().kind(), "coverage");
        assert_eq!(aggregate_annotations(&[], &t, &p).unwrap_err().kind(), "coverage");
    }

    #[test]
    fn booleanize_threshold_cases() {
        let rows = BTreeMap::from([(
            ClassId(0),
            [0.0, 1.0 / 3.0, 1.0 / 3.0, 0.0, 1.0 / 3.0, 0.5, 1.0, 5.0 / 6.0, 5.0 / 6.0, 1.0],
        )]);
        let dec = RuleMatrix::new(RuleKind::Decimal, rows);
        let b = booleanize(&dec, DEFAULT_BOOL_THRESHOLD).unwrap();
        assert_eq!(b.kind, RuleKind::Boolean);
        assert_eq!(
            b.row(ClassId(0)).unwrap(),
            &[0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0, 1.0]
        );
        assert_eq!(booleanize(&b, 0.5).unwrap_err().kind(), "invalid_kind");
        assert_eq!(booleanize(&dec, 0.0).unwrap_err().kind(), "domain");
        assert_eq!(booleanize(&dec, 1.5).unwrap_err().kind(), "domain");
        // rounded display values give the same booleans
        let shown = RuleMatrix::new(
            RuleKind::Decimal,
            BTreeMap::from([(ClassId(0), [0.0, 0.33, 0.33, 0.0, 0.33, 0.5, 1.0, 0.83, 0.83, 1.0])]),
        );
        assert_eq!(booleanize(&shown, 0.5).unwrap().row(ClassId(0)), b.row(ClassId(0)));
    }

    #[test]
    fn all_ones_rows() {
        let m = all_ones(&table());
        assert_eq!(m.len(), 3);
        assert!(m.rows().values().all(|r| *r == ONES_ROW));
        assert_eq!(rule_row_mean(&m, ClassId(1)).unwrap(), 1.0);
        assert!(all_ones_for(Vec::new()).is_empty());
        assert!(booleanize(&m, 0.5).unwrap().rows().values().all(|r| *r == ONES_ROW));
    }

    #[test]
    fn validation_flags() {
        let t = table();
        let p = partition_by_rarity(&t, 10);
        assert!(validate_rules(&all_ones(&t), &p).ok);

        let mut bad_common = all_ones(&t);
        bad_common.rows.get_mut(&ClassId(1)).unwrap()[9] = 0.5;
        bad_common.kind = RuleKind::Decimal;
        let r = validate_rules(&bad_common, &p);
        assert!(!r.ok);
        assert_eq!(r.violations[0].0, ClassId(1));

        let mut bad_bool = booleanize(&all_ones(&t), 0.5).unwrap();
        bad_bool.rows.get_mut(&ClassId(0)).unwrap()[3] = 0.5;
        assert!(!validate_rules(&bad_bool, &p).ok);

        let mut missing = all_ones(&t);
        missing.rows.remove(&ClassId(2));
        let r = validate_rules(&missing, &p);
        assert_eq!(r.violations, vec![(ClassId(2), "missing rule row".into())]);

        let mut oob = all_ones(&t);
        oob.kind = RuleKind::Decimal;
        oob.rows.get_mut(&ClassId(0)).unwrap()[0] = 1.5;
        assert!(!validate_rules(&oob, &p).ok);
    }

    #[test]
    fn row_means() {
        let t = table();
        let p = partition_by_rarity(&t, 10);
        let dec = aggregate_annotations(&feed_cat_sets(), &t, &p).unwrap();
        assert!((rule_row_mean(&dec, ClassId(0)).unwrap() - 0.52).abs() <= 0.005);
        let b = booleanize(&dec, 0.5).unwrap();
        assert_eq!(rule_row_mean(&b, ClassId(0)).unwrap(), 0.5);
        assert_eq!(rule_row_mean(&b, ClassId(9)).unwrap_err().kind(), "not_found");
    }

    #[test]
    fn fill_missing_non_rare_rows() {
        let t = table();
        let p = partition_by_rarity(&t, 10);
        let mut m = RuleMatrix::new(RuleKind::Decimal, BTreeMap::from([(ClassId(0), [0.5; 10])]));
        assert_eq!(m.fill_missing_non_rare(&p), vec![ClassId(1)]);
        assert_eq!(m.row(ClassId(1)), Some(&ONES_ROW));
        assert!(m.row(ClassId(2)).is_none());
    }

    #[test]
    fn rules_file_rejects_wrong_part_order() {
        let text = r#"{"version":1,"kind":"boolean","parts":["RThigh","RFoot","LThigh","LFoot","Hip","Head","RHand","RArm","LArm","LHand"],"rows":{}}"#;
        assert_eq!(RuleMatrix::from_json_str(text, "r").unwrap_err().kind(), "parse");
        let short = r#"{"version":1,"kind":"boolean","parts":["RFoot","RThigh","LThigh","LFoot","Hip","Head","RHand","RArm","LArm","LHand"],"rows":{"3":[1,0]}}"#;
        assert_eq!(RuleMatrix::from_json_str(short, "r").unwrap_err().kind(), "shape");
    }

    #[test]
    fn heatmap_layout() {
        let m = RuleMatrix::new(
            RuleKind::Decimal,
            BTreeMap::from([(ClassId(10), [0.5; 10]), (ClassId(2), ONES_ROW)]),
        );
        let csv = m.heatmap_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "class_id,RFoot,RThigh,LThigh,LFoot,Hip,Head,RHand,RArm,LArm,LHand");
        assert!(lines[1].starts_with("2,1.0,"));
        assert!(lines[2].starts_with("10,0.5,"));
    }

    #[test]
    fn annotation_csv() {
        let csv = "annotator_id,class_id,part,label\nann1,0,Head,0.5\nann2,0,Head,1\nann1,0,RFoot,0\n";
        let sets = load_annotations(csv.as_bytes(), "a.csv").unwrap();
        assert_eq!(sets.len(), 2);
        assert_eq!(sets[0].labels[&(ClassId(0), BodyPart::Head)], 0.5);
        let bad = "annotator_id,class_id,part,label\nann1,0,Tail,0.5\n";
        let err = load_annotations(bad.as_bytes(), "a.csv").unwrap_err();
        assert!(err.to_string().starts_with("a.csv:2:"), "{err}");
    }

    fn label() -> impl Strategy<Value = f64> {
        prop::sample::select(vec![0.0, 0.5, 1.0])
    }

    fn arb_matrix() -> impl Strategy<Value = RuleMatrix> {
        prop::collection::btree_map(0u32..50, prop::array::uniform10(0.0f64..=1.0), 0..8).prop_map(
            |rows| {
                RuleMatrix::new(
                    RuleKind::Decimal,
                    rows.into_iter().map(|(k, v)| (ClassId(k), v)).collect(),
                )
            },
        )
    }

    proptest! {
        #[test]
        fn aggregate_values_are_multiples_of_half_over_k(
            labels in prop::collection::vec(prop::array::uniform10(label()), 1..6)
        ) {
            let t = ClassTable::new(vec![HoiClass::new(0, "feed", "cat", 1)]).unwrap();
            let p = partition_by_rarity(&t, 10);
            let sets: Vec<_> = labels.iter().enumerate()
                .map(|(i, r)| AnnotatorLabelSet::new(i.to_string()).with_row(ClassId(0), *r))
                .collect();
            let m = aggregate_annotations(&sets, &t, &p).unwrap();
            let denom = 2.0 * sets.len() as f64;
            for &w in m.row(ClassId(0)).unwrap() {
                prop_assert!((w * denom - (w * denom).round()).abs() <= 1e-12 * denom);
                prop_assert!((0.0..=1.0).contains(&w));
            }
        }

        #[test]
        fn booleanize_idempotent_and_monotone(w in 0.0f64..=1.0, dw in 0.0f64..1.0, th in 0.01f64..=1.0) {
            let id = ClassId(0);
            let one = |v: f64| RuleMatrix::new(RuleKind::Decimal, BTreeMap::from([(id, [v; 10])]));
            let b = booleanize(&one(w), th).unwrap();
            let mut again = b.clone();
            again.kind = RuleKind::Decimal;
            let twice = booleanize(&again, th).unwrap();
            prop_assert_eq!(twice.rows(), b.rows());
            let hi = booleanize(&one((w + dw).min(1.0)), th).unwrap();
            prop_assert!(hi.row(id).unwrap()[0] >= b.row(id).unwrap()[0]);
        }

        #[test]
        fn rules_file_round_trip(m in arb_matrix()) {
            let back = RuleMatrix::from_json_str(&m.to_json(), "mem").unwrap();
            prop_assert_eq!(back, m);
        }
    }
}
