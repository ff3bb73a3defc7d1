//! Label rasters, the class table and the panoptic id encoding.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::BinaryMask;

/// Sentinel for pixels excluded from losses and metric denominators.
pub const IGNORE: u16 = u16::MAX;

pub const MAX_CLASS_ID: u16 = 64;
pub const INSTANCES_PER_CLASS: u16 = 1000;

/// `class_id * 1000 + instance_index`.
pub fn encode_panoptic_id(class_id: u16, instance_index: u16) -> Result<u16> {
    if class_id > MAX_CLASS_ID {
        return Err(Error::OutOfRange(format!(
            "class id {class_id} > {MAX_CLASS_ID}"
        )));
    }
    if instance_index >= INSTANCES_PER_CLASS {
        return Err(Error::OutOfRange(format!(
            "instance index {instance_index} >= {INSTANCES_PER_CLASS}"
        )));
    }
    Ok(class_id * INSTANCES_PER_CLASS + instance_index)
}

pub fn decode_panoptic_id(encoded: u16) -> Result<(u16, u16)> {
    if encoded == IGNORE {
        return Err(Error::IgnoreSentinel);
    }
    if encoded > MAX_CLASS_ID * INSTANCES_PER_CLASS + INSTANCES_PER_CLASS - 1 {
        return Err(Error::OutOfRange(format!("encoded id {encoded} > 64999")));
    }
    Ok((encoded / INSTANCES_PER_CLASS, encoded % INSTANCES_PER_CLASS))
}

/// 16-bit raster with `IGNORE` as the unlabelled marker. Backs both semantic
/// label maps (class ids) and panoptic maps (encoded ids).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Raster16 {
    height: usize,
    width: usize,
    data: Vec<u16>,
}

impl Raster16 {
    pub fn filled(height: usize, width: usize, value: u16) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<u16>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::ExtentMismatch(format!(
                "{height}x{width} raster needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn extent(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[u16] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u16] {
        &mut self.data
    }

    pub fn get(&self, y: usize, x: usize) -> u16 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, v: u16) {
        self.data[y * self.width + x] = v;
    }

    pub fn at(&self, i: usize) -> u16 {
        self.data[i]
    }

    pub fn set_at(&mut self, i: usize, v: u16) {
        self.data[i] = v;
    }

    /// Mask of pixels equal to `value`.
    pub fn mask_of(&self, value: u16) -> BinaryMask {
        BinaryMask::from_vec(
            self.height,
            self.width,
            self.data.iter().map(|&v| v == value).collect(),
        )
        .expect("same extent")
    }
}

/// Per-pixel class ids.
pub type LabelMap = Raster16;

impl LabelMap {
    /// Every non-IGNORE value must index into `classes`.
    pub fn validate_classes(&self, classes: &ClassTable) -> Result<()> {
        match self
            .data
            .iter()
            .find(|&&v| v != IGNORE && !classes.contains(v))
        {
            Some(&v) => Err(Error::UnknownClass(v)),
            None => Ok(()),
        }
    }
}

/// Panoptic map with `class * 1000 + instance` ids per pixel.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PanopticMap(Raster16);

impl PanopticMap {
    pub fn filled_ignore(height: usize, width: usize) -> Self {
        Self(Raster16::filled(height, width, IGNORE))
    }

    /// Wraps a raster after checking every id decodes.
    pub fn new(raster: Raster16) -> Result<Self> {
        for &v in raster.data() {
            if v != IGNORE {
                decode_panoptic_id(v)?;
            }
        }
        Ok(Self(raster))
    }

    pub fn raster(&self) -> &Raster16 {
        &self.0
    }

    pub fn into_raster(self) -> Raster16 {
        self.0
    }

    pub fn height(&self) -> usize {
        self.0.height
    }

    pub fn width(&self) -> usize {
        self.0.width
    }

    pub fn extent(&self) -> (usize, usize) {
        self.0.extent()
    }

    pub fn data(&self) -> &[u16] {
        self.0.data()
    }

    pub fn at(&self, i: usize) -> u16 {
        self.0.at(i)
    }

    /// Writes the pixel as `(class, instance)`.
    pub fn assign(&mut self, i: usize, class_id: u16, instance: u16) -> Result<()> {
        let id = encode_panoptic_id(class_id, instance)?;
        self.0.set_at(i, id);
        Ok(())
    }

    pub(crate) fn raster_mut(&mut self) -> &mut Raster16 {
        &mut self.0
    }

    pub fn set_ignore(&mut self, i: usize) {
        self.0.set_at(i, IGNORE);
    }

    /// Drops instance indices.
    pub fn semantic(&self) -> LabelMap {
        LabelMap {
            height: self.0.height,
            width: self.0.width,
            data: self
                .0
                .data
                .iter()
                .map(|&v| {
                    if v == IGNORE {
                        IGNORE
                    } else {
                        v / INSTANCES_PER_CLASS
                    }
                })
                .collect(),
        }
    }

    /// Pixel count of every segment id present (IGNORE excluded), ordered by id.
    pub fn segment_areas(&self) -> BTreeMap<u16, usize> {
        let mut areas = BTreeMap::new();
        for &v in self.0.data() {
            if v != IGNORE {
                *areas.entry(v).or_insert(0) += 1;
            }
        }
        areas
    }

    /// Stuff classes may carry only instance 0.
    pub fn check_stuff_single_instance(&self, classes: &ClassTable) -> Result<()> {
        for &id in self.segment_areas().keys() {
            let (c, inst) = decode_panoptic_id(id)?;
            let entry = classes.get(c).ok_or(Error::UnknownClass(c))?;
            if entry.kind == ClassKind::Stuff && inst != 0 {
                return Err(Error::OutOfRange(format!(
                    "stuff class {c} carries instance {inst}"
                )));
            }
        }
        Ok(())
    }
}

/// What to write where no evidence labels a pixel.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FillMode {
    #[default]
    Ignore,
    /// The single catch-all stuff class of the table.
    VocBackground,
}

impl std::str::FromStr for FillMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ignore" => Ok(FillMode::Ignore),
            "voc-background" => Ok(FillMode::VocBackground),
            other => Err(Error::InvalidConfig(format!("unknown mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassKind {
    Thing,
    Stuff,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassEntry {
    pub id: u16,
    pub name: String,
    pub kind: ClassKind,
    pub color: [u8; 3],
}

/// Ordered class list; ids are contiguous from 0.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<ClassEntry>", into = "Vec<ClassEntry>")]
pub struct ClassTable {
    entries: Vec<ClassEntry>,
}

impl TryFrom<Vec<ClassEntry>> for ClassTable {
    type Error = Error;

    fn try_from(entries: Vec<ClassEntry>) -> Result<Self> {
        ClassTable::new(entries)
    }
}

impl From<ClassTable> for Vec<ClassEntry> {
    fn from(t: ClassTable) -> Self {
        t.entries
    }
}

impl ClassTable {
    pub fn new(mut entries: Vec<ClassEntry>) -> Result<Self> {
        entries.sort_by_key(|e| e.id);
        for (i, e) in entries.iter().enumerate() {
            if e.id as usize != i {
                return Err(Error::InvalidClassTable(format!(
                    "class ids must be contiguous from 0; found {} at position {i}",
                    e.id
                )));
            }
            if e.id > MAX_CLASS_ID {
                return Err(Error::InvalidClassTable(format!(
                    "class id {} exceeds {MAX_CLASS_ID}",
                    e.id
                )));
            }
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("class table serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ClassEntry] {
        &self.entries
    }

    pub fn get(&self, id: u16) -> Option<&ClassEntry> {
        self.entries.get(id as usize)
    }

    pub fn contains(&self, id: u16) -> bool {
        (id as usize) < self.entries.len()
    }

    pub fn kind(&self, id: u16) -> Option<ClassKind> {
        self.get(id).map(|e| e.kind)
    }

    pub fn is_thing(&self, id: u16) -> bool {
        self.kind(id) == Some(ClassKind::Thing)
    }

    pub fn is_stuff(&self, id: u16) -> bool {
        self.kind(id) == Some(ClassKind::Stuff)
    }

    pub fn stuff_ids(&self) -> Vec<u16> {
        self.ids_of(ClassKind::Stuff)
    }

    pub fn thing_ids(&self) -> Vec<u16> {
        self.ids_of(ClassKind::Thing)
    }

    fn ids_of(&self, kind: ClassKind) -> Vec<u16> {
        self.entries
            .iter()
            .filter(|e| e.kind == kind)
            .map(|e| e.id)
            .collect()
    }

    /// The catch-all background class, when the table declares exactly one stuff class.
    pub fn background(&self) -> Option<u16> {
        match self.stuff_ids().as_slice() {
            [only] => Some(*only),
            _ => None,
        }
    }
}
