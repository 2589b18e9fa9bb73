//! Dataset JSON: images plus run-length encoded annotations.
//!
//! ```json
//! {"images": [{"id": 1, "file": "a.png", "height": 4, "width": 6}],
//!  "annotations": [{"id": 7, "image_id": 1, "rle": {"size": [4, 6], "counts": [3, 2, 19]},
//!                   "role": "gt", "score": 0.9, "provenance": "node:12"}]}
//! ```
//!
//! Counts are column-major runs starting with background. Writers sort both
//! lists by id and emit pretty-printed JSON with a trailing newline.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{read_bytes, write_atomic};
use crate::error::{Error, Result};
use crate::evalkit::Proposal;
use crate::mask::{rle_decode, rle_encode, BinaryMask, GridDims, InstanceSet, RunLengthMask};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: u64,
    pub file: String,
    pub height: usize,
    pub width: usize,
}

impl ImageRecord {
    pub fn dims(&self) -> Result<GridDims> {
        GridDims::new(self.height, self.width)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RleRecord {
    /// `[height, width]`.
    pub size: [usize; 2],
    pub counts: Vec<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Gt,
    Pseudo,
    Proposal,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Gt => "gt",
            Role::Pseudo => "pseudo",
            Role::Proposal => "proposal",
        })
    }
}

impl FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gt" => Ok(Role::Gt),
            "pseudo" => Ok(Role::Pseudo),
            "proposal" => Ok(Role::Proposal),
            _ => Err(Error::param(format!("unknown role {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub id: u64,
    pub image_id: u64,
    pub rle: RleRecord,
    pub role: Role,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<String>,
}

impl AnnotationRecord {
    pub fn from_mask(id: u64, image_id: u64, mask: &BinaryMask, role: Role) -> Self {
        let rle = rle_encode(mask);
        let d = mask.dims();
        Self {
            id,
            image_id,
            rle: RleRecord { size: [d.height(), d.width()], counts: rle.counts().to_vec() },
            role,
            score: None,
            provenance: None,
        }
    }

    pub fn with_score(mut self, score: f64) -> Self {
        self.score = Some(score);
        self
    }

    pub fn with_provenance(mut self, provenance: impl Into<String>) -> Self {
        self.provenance = Some(provenance.into());
        self
    }

    pub fn mask(&self) -> Result<BinaryMask> {
        let err = |reason: String| Error::Annotation { id: self.id, reason };
        let dims = GridDims::new(self.rle.size[0], self.rle.size[1]).map_err(|e| err(e.to_string()))?;
        let rle = RunLengthMask::new(dims, self.rle.counts.clone()).map_err(|e| err(e.to_string()))?;
        Ok(rle_decode(&rle))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub images: Vec<ImageRecord>,
    pub annotations: Vec<AnnotationRecord>,
}

impl Dataset {
    pub fn new() -> Self {
        Self::default()
    }

    /// Checks unique ids, that every annotation names a known image, that
    /// its RLE size equals the image size, and that the counts are valid.
    pub fn validate(&self) -> Result<()> {
        let mut images = HashMap::new();
        for img in &self.images {
            img.dims()?;
            if images.insert(img.id, img).is_some() {
                return Err(Error::Format(format!("duplicate image id {}", img.id)));
            }
        }
        let mut seen = HashSet::new();
        for a in &self.annotations {
            if !seen.insert(a.id) {
                return Err(Error::Annotation { id: a.id, reason: "duplicate annotation id".into() });
            }
            let Some(img) = images.get(&a.image_id) else {
                return Err(Error::Annotation { id: a.id, reason: format!("unknown image_id {}", a.image_id) });
            };
            if a.rle.size != [img.height, img.width] {
                return Err(Error::Annotation {
                    id: a.id,
                    reason: format!(
                        "rle size {}x{} does not match image {} ({}x{})",
                        a.rle.size[0], a.rle.size[1], img.id, img.height, img.width
                    ),
                });
            }
            a.mask()?;
            if a.score.is_some_and(|s| !s.is_finite()) {
                return Err(Error::Annotation { id: a.id, reason: "score is not finite".into() });
            }
        }
        Ok(())
    }

    pub fn sort(&mut self) {
        self.images.sort_by_key(|i| i.id);
        self.annotations.sort_by_key(|a| a.id);
    }

    pub fn image(&self, id: u64) -> Option<&ImageRecord> {
        self.images.iter().find(|i| i.id == id)
    }

    pub fn annotations_for(&self, image_id: u64, role: Option<Role>) -> impl Iterator<Item = &AnnotationRecord> {
        self.annotations.iter().filter(move |a| a.image_id == image_id && role.is_none_or(|r| a.role == r))
    }

    /// Masks of one image (optionally one role), ids = annotation ids.
    pub fn instance_set(&self, image_id: u64, role: Option<Role>) -> Result<InstanceSet> {
        let img = self
            .image(image_id)
            .ok_or_else(|| Error::Format(format!("unknown image id {image_id}")))?;
        let mut set = InstanceSet::new(img.dims()?);
        for a in self.annotations_for(image_id, role) {
            set.push(a.id, a.mask()?)?;
        }
        Ok(set)
    }

    /// Scored masks of one image; a missing score counts as 0.
    pub fn proposals(&self, image_id: u64, role: Option<Role>) -> Result<Vec<Proposal>> {
        self.annotations_for(image_id, role)
            .map(|a| Ok(Proposal { id: a.id, mask: a.mask()?, score: a.score.unwrap_or(0.0) }))
            .collect()
    }

    pub fn next_annotation_id(&self) -> u64 {
        self.annotations.iter().map(|a| a.id + 1).max().unwrap_or(1)
    }

    /// Canonical bytes: sorted, pretty-printed, newline-terminated.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let mut sorted = self.clone();
        sorted.sort();
        let mut out = serde_json::to_vec_pretty(&sorted).map_err(|e| Error::Format(e.to_string()))?;
        out.push(b'\n');
        Ok(out)
    }

    pub fn from_slice(bytes: &[u8]) -> Result<Self> {
        let ds: Dataset = serde_json::from_slice(bytes).map_err(|e| Error::Format(e.to_string()))?;
        ds.validate()?;
        Ok(ds)
    }
}

pub fn dataset_read(path: &Path) -> Result<Dataset> {
    let bytes = read_bytes(path)?;
    let ds: Dataset =
        serde_json::from_slice(&bytes).map_err(|source| Error::Json { path: path.to_path_buf(), source })?;
    ds.validate().map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        Error::Annotation { id, reason } => Error::Annotation { id, reason: format!("{reason} (in {})", path.display()) },
        other => other,
    })?;
    Ok(ds)
}

pub fn dataset_write(ds: &Dataset, path: &Path) -> Result<()> {
    write_atomic(path, &ds.to_bytes()?)
}
