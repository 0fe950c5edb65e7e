//! Label data model.
//!
//! An [`AnnotationMatrix`] holds one [`LabelValue`] per (image, attribute)
//! cell. Images flagged unusable keep their row but are invisible to every
//! reader: the accessors skip them, so metric code cannot read their cells.

mod file;
mod provenance;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use file::{
    export_cleaned, ingest_attribute_file, load_partition, parse_attribute_file,
    sidecar_path, write_attribute_file, AttributeFormat,
};
pub use provenance::{ProvenanceEntry, ProvenanceLog, UNUSABLE_FIELD};

/// Three-state attribute value. Displayed as `1`, `-1` and `0`, serialized by name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum LabelValue {
    True,
    False,
    InfoNotVisible,
}

impl LabelValue {
    pub fn code(self) -> i8 {
        match self {
            LabelValue::True => 1,
            LabelValue::False => -1,
            LabelValue::InfoNotVisible => 0,
        }
    }

    pub fn from_code(code: i8) -> Option<Self> {
        match code {
            1 => Some(LabelValue::True),
            -1 => Some(LabelValue::False),
            0 => Some(LabelValue::InfoNotVisible),
            _ => None,
        }
    }

    pub fn from_bool(value: bool) -> Self {
        if value {
            LabelValue::True
        } else {
            LabelValue::False
        }
    }

    /// `Some(bool)` for TRUE/FALSE, `None` for info-not-visible.
    pub fn as_bool(self) -> Option<bool> {
        match self {
            LabelValue::True => Some(true),
            LabelValue::False => Some(false),
            LabelValue::InfoNotVisible => None,
        }
    }

    pub fn is_binary(self) -> bool {
        self != LabelValue::InfoNotVisible
    }
}

impl fmt::Display for LabelValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.code())
    }
}

impl FromStr for LabelValue {
    type Err = Error;

    /// Accepts the numeric codes as well as the names used by the service
    /// (`true`, `false`, `info_not_visible`).
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "1" | "true" => Ok(LabelValue::True),
            "-1" | "false" => Ok(LabelValue::False),
            "0" | "info_not_visible" => Ok(LabelValue::InfoNotVisible),
            other => Err(Error::InvalidArgument(format!("not a label value: {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: String,
    pub identity_id: Option<String>,
    pub unusable: bool,
}

impl ImageRecord {
    pub fn new(image_id: impl Into<String>) -> Self {
        ImageRecord {
            image_id: image_id.into(),
            identity_id: None,
            unusable: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AnnotationMatrix {
    images: Vec<ImageRecord>,
    attributes: Vec<String>,
    // row-major, images.len() * attributes.len()
    values: Vec<LabelValue>,
    split: Vec<Option<Split>>,
    image_index: HashMap<String, usize>,
    attribute_index: HashMap<String, usize>,
}

impl AnnotationMatrix {
    pub fn new(attributes: Vec<String>) -> Result<Self> {
        let mut attribute_index = HashMap::with_capacity(attributes.len());
        for (i, name) in attributes.iter().enumerate() {
            if attribute_index.insert(name.clone(), i).is_some() {
                return Err(Error::DuplicateId(name.clone()));
            }
        }
        Ok(AnnotationMatrix {
            images: Vec::new(),
            attributes,
            values: Vec::new(),
            split: Vec::new(),
            image_index: HashMap::new(),
            attribute_index,
        })
    }

    /// Appends a usable image row. `row` must have one value per attribute.
    pub fn push_image(&mut self, record: ImageRecord, row: &[LabelValue]) -> Result<()> {
        if row.len() != self.attributes.len() {
            return Err(Error::MatrixShapeMismatch(format!(
                "row for {} has {} values, expected {}",
                record.image_id,
                row.len(),
                self.attributes.len()
            )));
        }
        if self.image_index.contains_key(&record.image_id) {
            return Err(Error::DuplicateId(record.image_id));
        }
        self.image_index
            .insert(record.image_id.clone(), self.images.len());
        self.images.push(record);
        self.values.extend_from_slice(row);
        self.split.push(None);
        Ok(())
    }

    /// Appends an image that is unusable from the start (no values known).
    pub fn push_unusable(&mut self, image_id: impl Into<String>) -> Result<()> {
        let mut record = ImageRecord::new(image_id);
        record.unusable = true;
        let row = vec![LabelValue::InfoNotVisible; self.attributes.len()];
        self.push_image(record, &row)
    }

    pub fn attributes(&self) -> &[String] {
        &self.attributes
    }

    pub fn attribute_index(&self, name: &str) -> Result<usize> {
        self.attribute_index
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownAttribute(name.to_string()))
    }

    pub fn image_index(&self, image_id: &str) -> Result<usize> {
        self.image_index
            .get(image_id)
            .copied()
            .ok_or_else(|| Error::UnknownImage(image_id.to_string()))
    }

    pub fn contains_image(&self, image_id: &str) -> bool {
        self.image_index.contains_key(image_id)
    }

    /// All rows, including unusable ones.
    pub fn records(&self) -> &[ImageRecord] {
        &self.images
    }

    pub fn record(&self, image_id: &str) -> Result<&ImageRecord> {
        Ok(&self.images[self.image_index(image_id)?])
    }

    pub fn n_images(&self) -> usize {
        self.images.len()
    }

    pub fn n_usable(&self) -> usize {
        self.images.iter().filter(|r| !r.unusable).count()
    }

    /// Usable images with their row index, in ingest order.
    pub fn usable_images(&self) -> impl Iterator<Item = (usize, &ImageRecord)> + '_ {
        self.images.iter().enumerate().filter(|(_, r)| !r.unusable)
    }

    pub fn unusable_ids(&self) -> impl Iterator<Item = &str> + '_ {
        self.images
            .iter()
            .filter(|r| r.unusable)
            .map(|r| r.image_id.as_str())
    }

    /// Cell accessor by index. `None` when the image is unusable.
    pub fn cell(&self, image: usize, attribute: usize) -> Option<LabelValue> {
        if self.images[image].unusable {
            None
        } else {
            Some(self.values[image * self.attributes.len() + attribute])
        }
    }

    /// Cell accessor by name. Unusable images yield `ImageUnusable`.
    pub fn get(&self, image_id: &str, attribute: &str) -> Result<LabelValue> {
        let i = self.image_index(image_id)?;
        let a = self.attribute_index(attribute)?;
        self.cell(i, a)
            .ok_or_else(|| Error::ImageUnusable(image_id.to_string()))
    }

    /// Usable (image_id, value) pairs of one attribute column.
    pub fn column(&self, attribute: usize) -> impl Iterator<Item = (&str, LabelValue)> + '_ {
        self.usable_images().map(move |(i, r)| {
            (
                r.image_id.as_str(),
                self.values[i * self.attributes.len() + attribute],
            )
        })
    }

    pub fn split_of(&self, image: usize) -> Option<Split> {
        self.split[image]
    }

    pub fn set_split(&mut self, image_id: &str, split: Split) -> Result<()> {
        let i = self.image_index(image_id)?;
        self.split[i] = Some(split);
        Ok(())
    }

    pub fn set_identity(&mut self, image_id: &str, identity: Option<String>) -> Result<()> {
        let i = self.image_index(image_id)?;
        self.images[i].identity_id = identity;
        Ok(())
    }

    /// Raw cell write without provenance. Used by ingest and log replay.
    pub(crate) fn write_cell(&mut self, image: usize, attribute: usize, value: LabelValue) {
        let n = self.attributes.len();
        self.values[image * n + attribute] = value;
    }

    pub(crate) fn write_unusable(&mut self, image: usize, unusable: bool) {
        self.images[image].unusable = unusable;
    }

    /// Sets one cell and appends the change to `log`.
    pub fn apply_label(
        &mut self,
        log: &mut ProvenanceLog,
        image_id: &str,
        attribute: &str,
        value: LabelValue,
        source: &str,
    ) -> Result<ProvenanceEntry> {
        let old = self.get(image_id, attribute)?;
        let (i, a) = (self.image_index(image_id)?, self.attribute_index(attribute)?);
        self.write_cell(i, a, value);
        let entry = ProvenanceEntry::now(image_id, attribute, old.to_string(), value.to_string(), source);
        log.append(entry.clone());
        Ok(entry)
    }

    /// Flags a whole image as unusable; the change is logged like a label edit.
    pub fn mark_unusable(
        &mut self,
        log: &mut ProvenanceLog,
        image_id: &str,
        source: &str,
    ) -> Result<ProvenanceEntry> {
        let i = self.image_index(image_id)?;
        if self.images[i].unusable {
            return Err(Error::ImageUnusable(image_id.to_string()));
        }
        self.write_unusable(i, true);
        let entry = ProvenanceEntry::now(image_id, UNUSABLE_FIELD, "0", "1", source);
        log.append(entry.clone());
        Ok(entry)
    }

    /// Equality of everything the extended file format carries: attribute
    /// order, usable rows with their values (in order), and the unusable set.
    pub fn labels_equal(&self, other: &AnnotationMatrix) -> bool {
        if self.attributes != other.attributes {
            return false;
        }
        let mine: Vec<_> = self.usable_images().collect();
        let theirs: Vec<_> = other.usable_images().collect();
        if mine.len() != theirs.len() {
            return false;
        }
        let n = self.attributes.len();
        let rows_equal = mine.iter().zip(&theirs).all(|((i, a), (j, b))| {
            a.image_id == b.image_id
                && self.values[i * n..(i + 1) * n] == other.values[j * n..(j + 1) * n]
        });
        if !rows_equal {
            return false;
        }
        let mut u1: Vec<_> = self.unusable_ids().collect();
        let mut u2: Vec<_> = other.unusable_ids().collect();
        u1.sort_unstable();
        u2.sort_unstable();
        u1 == u2
    }

    /// Counts of (info_not_visible cells, unusable images), the cleaned
    /// dataset summary.
    pub fn summary(&self) -> (usize, usize) {
        let n = self.attributes.len();
        let inv = self
            .usable_images()
            .map(|(i, _)| {
                self.values[i * n..(i + 1) * n]
                    .iter()
                    .filter(|v| **v == LabelValue::InfoNotVisible)
                    .count()
            })
            .sum();
        (inv, self.n_images() - self.n_usable())
    }
}
