//! Dataset manifests: a header line followed by one JSON record per line.
//!
//! ```text
//! {"split":"train","metadata":{"date":"2018-08-07","weather":"clear","gsd_mm_per_px":5.24,"condition":"clear"}}
//! {"id":"train_0000","image":"images/train_0000.png","annotation":"annotations/train_0000.xml"}
//! ```
//! Paths are relative to the manifest's directory.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::annotation::{read_annotation, AnnotationRecord};
use super::image::load_image;
use crate::error::{Error, Result};

/// Acquisition metadata carried alongside a split.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionMetadata {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub date: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weather: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gsd_mm_per_px: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub condition: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordRef {
    pub id: String,
    pub image: PathBuf,
    pub annotation: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    split: String,
    #[serde(default)]
    metadata: AcquisitionMetadata,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub split: String,
    pub metadata: AcquisitionMetadata,
    pub records: Vec<RecordRef>,
}

impl DatasetManifest {
    pub fn new(split: impl Into<String>, metadata: AcquisitionMetadata) -> Self {
        DatasetManifest {
            split: split.into(),
            metadata,
            records: Vec::new(),
        }
    }

    pub fn push(&mut self, record: RecordRef) -> Result<()> {
        if self.records.iter().any(|r| r.id == record.id) {
            return Err(Error::InvalidInput(format!(
                "duplicate image id {}",
                record.id
            )));
        }
        self.records.push(record);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn render(&self) -> Result<String> {
        let mut s = to_json(&Header {
            split: self.split.clone(),
            metadata: self.metadata.clone(),
        })?;
        s.push('\n');
        for r in &self.records {
            let _ = writeln!(s, "{}", to_json(r)?);
        }
        Ok(s)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: Header = serde_json::from_str(
            lines
                .next()
                .ok_or_else(|| Error::Serde("empty manifest".into()))?,
        )
        .map_err(|e| Error::Serde(format!("manifest header: {e}")))?;
        let mut records = Vec::new();
        let mut seen = HashSet::new();
        for (i, line) in lines.enumerate() {
            let r: RecordRef = serde_json::from_str(line)
                .map_err(|e| Error::Serde(format!("manifest record {i}: {e}")))?;
            if !seen.insert(r.id.clone()) {
                return Err(Error::InvalidInput(format!("duplicate image id {}", r.id)));
            }
            records.push(r);
        }
        Ok(DatasetManifest {
            split: header.split,
            metadata: header.metadata,
            records,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        std::fs::write(path, self.render()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        DatasetManifest::parse(&text)
    }

    /// Loads every image and annotation the manifest at `path` refers to.
    pub fn load_records(
        &self,
        manifest_path: &Path,
    ) -> Result<Vec<(image::RgbImage, AnnotationRecord)>> {
        let base = manifest_path.parent().unwrap_or(Path::new("."));
        self.records
            .iter()
            .map(|r| {
                let img = load_image(&base.join(&r.image))?;
                let ann = read_annotation(&base.join(&r.annotation))?;
                Ok((img, ann))
            })
            .collect()
    }
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string(value).map_err(|e| Error::Serde(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str) -> RecordRef {
        RecordRef {
            id: id.into(),
            image: format!("images/{id}.png").into(),
            annotation: format!("annotations/{id}.xml").into(),
        }
    }

    #[test]
    fn render_parse_round_trip() {
        let mut m = DatasetManifest::new(
            "test-2019-08-20",
            AcquisitionMetadata {
                date: Some("2019-08-20".into()),
                weather: Some("partly cloudy".into()),
                gsd_mm_per_px: Some(4.78),
                condition: Some("algae-ponding".into()),
            },
        );
        m.push(rec("a")).unwrap();
        m.push(rec("b")).unwrap();
        let text = m.render().unwrap();
        assert_eq!(text.lines().count(), 3);
        assert_eq!(DatasetManifest::parse(&text).unwrap(), m);
    }

    #[test]
    fn duplicate_ids_rejected() {
        let mut m = DatasetManifest::new("train", AcquisitionMetadata::default());
        m.push(rec("a")).unwrap();
        assert!(m.push(rec("a")).is_err());
        let text = m.render().unwrap() + &serde_json::to_string(&rec("a")).unwrap();
        assert!(DatasetManifest::parse(&text).is_err());
    }

    #[test]
    fn empty_manifest_is_valid() {
        let m = DatasetManifest::new("val", AcquisitionMetadata::default());
        let back = DatasetManifest::parse(&m.render().unwrap()).unwrap();
        assert!(back.is_empty());
        assert_eq!(back.split, "val");
    }
}
