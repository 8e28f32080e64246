//! HOI class taxonomy, training counts and the rare / non-rare split.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default rarity cut-off: classes seen fewer than this many times are rare.
pub const DEFAULT_RARITY_THRESHOLD: u32 = 10;

/// Verb used for the "no interaction" classes of a HICO-style taxonomy.
pub const NO_INTERACTION_VERB: &str = "no_interaction";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassId(pub u32);

impl fmt::Display for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HoiClass {
    pub class_id: ClassId,
    pub verb: String,
    pub object: String,
    pub train_count: u32,
}

impl HoiClass {
    pub fn new(id: u32, verb: &str, object: &str, train_count: u32) -> Self {
        Self {
            class_id: ClassId(id),
            verb: verb.to_string(),
            object: object.to_string(),
            train_count,
        }
    }
}

/// Ordered class list with unique ids and unique (verb, object) pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassTable {
    classes: Vec<HoiClass>,
    by_id: HashMap<ClassId, usize>,
}

impl ClassTable {
    pub fn new(classes: Vec<HoiClass>) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(classes.len());
        let mut pairs = HashSet::with_capacity(classes.len());
        for (i, c) in classes.iter().enumerate() {
            if by_id.insert(c.class_id, i).is_some() {
                return Err(Error::Duplicate(format!("class_id {} appears twice", c.class_id)));
            }
            if !pairs.insert((c.verb.as_str(), c.object.as_str())) {
                return Err(Error::Duplicate(format!(
                    "(verb, object) pair ({}, {}) appears twice",
                    c.verb, c.object
                )));
            }
        }
        Ok(Self { classes, by_id })
    }

    pub fn classes(&self) -> &[HoiClass] {
        &self.classes
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn get(&self, id: ClassId) -> Option<&HoiClass> {
        self.by_id.get(&id).map(|&i| &self.classes[i])
    }

    pub fn contains(&self, id: ClassId) -> bool {
        self.by_id.contains_key(&id)
    }

    /// Class ids in ascending order.
    pub fn ids(&self) -> Vec<ClassId> {
        let mut ids: Vec<ClassId> = self.classes.iter().map(|c| c.class_id).collect();
        ids.sort_unstable();
        ids
    }

    /// Ids of every class whose object field equals `object`, ascending.
    pub fn classes_for_object(&self, object: &str) -> Result<Vec<ClassId>> {
        let mut ids: Vec<ClassId> = self
            .classes
            .iter()
            .filter(|c| c.object == object)
            .map(|c| c.class_id)
            .collect();
        if ids.is_empty() {
            return Err(Error::NotFound(format!("no class with object {object:?}")));
        }
        ids.sort_unstable();
        Ok(ids)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("class_id,verb,object,train_count\n");
        for c in &self.classes {
            out.push_str(&format!("{},{},{},{}\n", c.class_id, c.verb, c.object, c.train_count));
        }
        out
    }
}

#[derive(Debug, Deserialize)]
struct ClassRow {
    class_id: u32,
    verb: String,
    object: String,
    train_count: u32,
}

/// Parses the `class_id,verb,object,train_count` CSV format.
pub fn load_class_metadata<R: Read>(reader: R, source_name: &str) -> Result<ClassTable> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| Error::parse(source_name, 1, e.to_string()))?
        .clone();
    let expected = ["class_id", "verb", "object", "train_count"];
    if header.iter().ne(expected.iter().copied()) {
        return Err(Error::parse(
            source_name,
            1,
            format!("expected header {}", expected.join(",")),
        ));
    }
    let mut classes = Vec::new();
    let mut seen: HashMap<u32, u64> = HashMap::new();
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            Error::parse(source_name, line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let row: ClassRow = record
            .deserialize(Some(&header))
            .map_err(|e| Error::parse(source_name, line, e.to_string()))?;
        if let Some(first) = seen.insert(row.class_id, line) {
            return Err(Error::Duplicate(format!(
                "{source_name}:{line}: class_id {} already defined on line {first}",
                row.class_id
            )));
        }
        classes.push(HoiClass {
            class_id: ClassId(row.class_id),
            verb: row.verb,
            object: row.object,
            train_count: row.train_count,
        });
    }
    if classes.is_empty() {
        return Err(Error::parse(source_name, 1, "class table has no rows"));
    }
    ClassTable::new(classes)
}

pub fn load_class_file(path: &std::path::Path) -> Result<ClassTable> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path.display(), e))?;
    load_class_metadata(file, &path.display().to_string())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ClassPartition {
    pub rare: BTreeSet<ClassId>,
    pub non_rare: BTreeSet<ClassId>,
    pub threshold: u32,
}

impl ClassPartition {
    pub fn is_rare(&self, id: ClassId) -> bool {
        self.rare.contains(&id)
    }

    pub fn contains(&self, id: ClassId) -> bool {
        self.rare.contains(&id) || self.non_rare.contains(&id)
    }

    pub fn all(&self) -> BTreeSet<ClassId> {
        self.rare.union(&self.non_rare).copied().collect()
    }
}

/// Splits classes by `train_count < threshold`.
pub fn partition_by_rarity(table: &ClassTable, threshold: u32) -> ClassPartition {
    partition_by_rarity_with(table, threshold, false)
}

/// Like [`partition_by_rarity`]; with `exclude_no_interaction` the
/// `no_interaction` classes are always placed in the non-rare set.
pub fn partition_by_rarity_with(
    table: &ClassTable,
    threshold: u32,
    exclude_no_interaction: bool,
) -> ClassPartition {
    let mut rare = BTreeSet::new();
    let mut non_rare = BTreeSet::new();
    for c in table.classes() {
        let exempt = exclude_no_interaction && c.verb == NO_INTERACTION_VERB;
        if c.train_count < threshold && !exempt {
            rare.insert(c.class_id);
        } else {
            non_rare.insert(c.class_id);
        }
    }
    ClassPartition {
        rare,
        non_rare,
        threshold,
    }
}
