//! What every trained localiser exposes to evaluation.

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Point, RssSample};
use crate::encoder::FingerprintImage;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassEntry {
    pub position_id: u32,
    pub location: Option<Point>,
}

/// Maps dense class indices to survey positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassTable {
    entries: Vec<ClassEntry>,
}

impl ClassTable {
    /// Classes `0..n` with no coordinates attached.
    pub fn identity(n: usize) -> Self {
        ClassTable {
            entries: (0..n as u32)
                .map(|position_id| ClassEntry {
                    position_id,
                    location: None,
                })
                .collect(),
        }
    }

    pub fn from_entries(entries: Vec<ClassEntry>) -> Result<Self> {
        let mut ids: Vec<u32> = entries.iter().map(|e| e.position_id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidDataset(
                "duplicate position in class table".into(),
            ));
        }
        Ok(ClassTable { entries })
    }

    /// One class per labelled position, in ascending position id.
    pub fn from_dataset(ds: &Dataset) -> Self {
        ClassTable {
            entries: ds
                .positions()
                .iter()
                .map(|(&position_id, &loc)| ClassEntry {
                    position_id,
                    location: Some(loc),
                })
                .collect(),
        }
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

    pub fn class_of(&self, position_id: u32) -> Option<usize> {
        self.entries
            .iter()
            .position(|e| e.position_id == position_id)
    }

    pub fn position_id(&self, class: usize) -> u32 {
        self.entries[class].position_id
    }

    pub fn location(&self, class: usize) -> Result<Point> {
        self.entries[class].location.ok_or_else(|| {
            Error::Config(format!(
                "position {} has no coordinates",
                self.entries[class].position_id
            ))
        })
    }

    /// Class index of every label, failing on labels outside the table.
    pub fn classes_of(&self, labels: impl IntoIterator<Item = Option<u32>>) -> Result<Vec<usize>> {
        labels
            .into_iter()
            .map(|l| {
                let label = l.ok_or_else(|| Error::InvalidDataset("unlabelled sample".into()))?;
                self.class_of(label).ok_or(Error::UnknownLabel { label })
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub position_id: u32,
    pub location: Point,
}

/// A trained classifier over fingerprint images.
pub trait Localizer: Send + Sync {
    fn name(&self) -> &str;

    fn class_table(&self) -> &ClassTable;

    /// Image side the model was trained on.
    fn side(&self) -> usize;

    fn predict_class(&self, img: &FingerprintImage) -> Result<usize>;

    /// Position estimate for one scan. `sample` is the raw scan behind `img`;
    /// ordinary models ignore it.
    fn locate(&self, img: &FingerprintImage, sample: &RssSample) -> Result<Estimate> {
        let _ = sample;
        let class = self.predict_class(img)?;
        let table = self.class_table();
        Ok(Estimate {
            position_id: table.position_id(class),
            location: table.location(class)?,
        })
    }
}

pub(crate) fn check_side(expected: usize, img: &FingerprintImage) -> Result<()> {
    if img.side() != expected {
        return Err(Error::SideMismatch {
            expected,
            got: img.side(),
        });
    }
    Ok(())
}

/// Answers with the scan's ground truth; the perfect-localiser reference.
#[derive(Debug, Clone)]
pub struct TruthOracle {
    side: usize,
    table: ClassTable,
}

impl TruthOracle {
    pub fn new(side: usize) -> Self {
        TruthOracle {
            side,
            table: ClassTable::identity(0),
        }
    }
}

impl Localizer for TruthOracle {
    fn name(&self) -> &str {
        "oracle"
    }

    fn class_table(&self) -> &ClassTable {
        &self.table
    }

    fn side(&self) -> usize {
        self.side
    }

    fn predict_class(&self, _img: &FingerprintImage) -> Result<usize> {
        Err(Error::Config("the truth oracle has no classes".into()))
    }

    fn locate(&self, img: &FingerprintImage, sample: &RssSample) -> Result<Estimate> {
        check_side(self.side, img)?;
        let location = sample
            .location
            .ok_or_else(|| Error::InvalidDataset("scan has no ground truth".into()))?;
        Ok(Estimate {
            position_id: sample.position_id.unwrap_or(u32::MAX),
            location,
        })
    }
}
