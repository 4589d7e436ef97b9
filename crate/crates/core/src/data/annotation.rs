//! labelImg-style annotation documents and their line-delimited twin.
//!
//! Boxes are held as integer corners in the continuous frame
//! (`x_min` inclusive edge, `x_max` exclusive edge). On disk they follow the
//! labelImg convention: 1-based inclusive pixel indices, so
//! `xmin_xml = x_min + 1` and `xmax_xml = x_max`.

use std::fmt::Write as _;
use std::path::Path;

use quick_xml::escape::escape;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;

pub const SEEDLING: &str = "seedling";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    #[default]
    Manual,
    Proposed,
    Verified,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Manual => "manual",
            Provenance::Proposed => "proposed",
            Provenance::Verified => "verified",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "manual" => Some(Provenance::Manual),
            "proposed" => Some(Provenance::Proposed),
            "verified" => Some(Provenance::Verified),
            _ => None,
        }
    }
}

/// Integer-corner box in the continuous pixel frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PixelBox {
    pub x_min: i64,
    pub y_min: i64,
    pub x_max: i64,
    pub y_max: i64,
}

impl PixelBox {
    pub fn to_bbox(self) -> BBox {
        BBox {
            x_min: self.x_min as f64,
            y_min: self.y_min as f64,
            x_max: self.x_max as f64,
            y_max: self.y_max as f64,
        }
    }

    /// Rounds each corner of a continuous box to the nearest integer.
    pub fn round(b: &BBox) -> Self {
        PixelBox {
            x_min: b.x_min.round() as i64,
            y_min: b.y_min.round() as i64,
            x_max: b.x_max.round() as i64,
            y_max: b.y_max.round() as i64,
        }
    }

    pub fn area(&self) -> i64 {
        (self.x_max - self.x_min).max(0) * (self.y_max - self.y_min).max(0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedObject {
    pub name: String,
    pub bbox: PixelBox,
}

/// One image's annotations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub image_id: String,
    pub width: u32,
    pub height: u32,
    pub objects: Vec<AnnotatedObject>,
    #[serde(default)]
    pub provenance: Provenance,
}

impl AnnotationRecord {
    pub fn new(image_id: impl Into<String>, width: u32, height: u32) -> Self {
        AnnotationRecord {
            image_id: image_id.into(),
            width,
            height,
            objects: Vec::new(),
            provenance: Provenance::Manual,
        }
    }

    pub fn boxes(&self) -> Vec<BBox> {
        self.objects.iter().map(|o| o.bbox.to_bbox()).collect()
    }

    /// Checks corner order and image bounds for every object.
    pub fn validate(&self) -> Result<()> {
        for (i, o) in self.objects.iter().enumerate() {
            let b = o.bbox;
            if b.x_min >= b.x_max || b.y_min >= b.y_max {
                return Err(Error::Annotation(format!(
                    "object {i}: min corner must be below max corner ({b:?})"
                )));
            }
            if b.x_min < 0
                || b.y_min < 0
                || b.x_max > self.width as i64
                || b.y_max > self.height as i64
            {
                return Err(Error::Annotation(format!(
                    "object {i}: box {b:?} outside {}x{} image",
                    self.width, self.height
                )));
            }
        }
        Ok(())
    }
}

#[derive(Deserialize)]
struct XmlAnnotation {
    #[serde(rename = "@provenance")]
    provenance: Option<String>,
    filename: Option<String>,
    size: Option<XmlSize>,
    #[serde(default, rename = "object")]
    objects: Vec<XmlObject>,
}

#[derive(Deserialize)]
struct XmlSize {
    width: Option<String>,
    height: Option<String>,
}

#[derive(Deserialize)]
struct XmlObject {
    #[serde(rename = "@provenance")]
    provenance: Option<String>,
    name: Option<String>,
    bndbox: Option<XmlBndBox>,
}

#[derive(Deserialize)]
struct XmlBndBox {
    xmin: Option<String>,
    ymin: Option<String>,
    xmax: Option<String>,
    ymax: Option<String>,
}

fn parse_int(raw: Option<&String>, what: &str) -> Result<i64> {
    let raw = raw.ok_or_else(|| Error::Annotation(format!("{what}: missing")))?;
    let v: f64 = raw
        .trim()
        .parse()
        .map_err(|_| Error::Annotation(format!("{what}: not a number: {raw:?}")))?;
    if v.fract() != 0.0 || !v.is_finite() {
        return Err(Error::Annotation(format!(
            "{what}: not an integer: {raw:?}"
        )));
    }
    Ok(v as i64)
}

fn parse_provenance(raw: &Option<String>, what: &str) -> Result<Option<Provenance>> {
    raw.as_deref()
        .map(|s| {
            Provenance::parse(s)
                .ok_or_else(|| Error::Annotation(format!("{what}: unknown provenance {s:?}")))
        })
        .transpose()
}

pub fn parse_annotation_xml(document: &str) -> Result<AnnotationRecord> {
    let doc: XmlAnnotation = quick_xml::de::from_str(document)
        .map_err(|e| Error::Annotation(format!("malformed document: {e}")))?;
    let size = doc
        .size
        .ok_or_else(|| Error::Annotation("missing size element".into()))?;
    let width = parse_int(size.width.as_ref(), "size/width")?;
    let height = parse_int(size.height.as_ref(), "size/height")?;
    if width <= 0 || height <= 0 || width > u32::MAX as i64 || height > u32::MAX as i64 {
        return Err(Error::Annotation(format!(
            "invalid image size {width}x{height}"
        )));
    }
    let mut provenance = parse_provenance(&doc.provenance, "annotation")?;
    let mut objects = Vec::with_capacity(doc.objects.len());
    for (i, o) in doc.objects.iter().enumerate() {
        let ctx = format!("object {i}");
        let bb = o
            .bndbox
            .as_ref()
            .ok_or_else(|| Error::Annotation(format!("{ctx}: missing bndbox")))?;
        let xmin = parse_int(bb.xmin.as_ref(), &format!("{ctx} xmin"))?;
        let ymin = parse_int(bb.ymin.as_ref(), &format!("{ctx} ymin"))?;
        let xmax = parse_int(bb.xmax.as_ref(), &format!("{ctx} xmax"))?;
        let ymax = parse_int(bb.ymax.as_ref(), &format!("{ctx} ymax"))?;
        if xmin >= xmax || ymin >= ymax {
            return Err(Error::Annotation(format!(
                "{ctx}: xmin/ymin must be below xmax/ymax ({xmin},{ymin},{xmax},{ymax})"
            )));
        }
        if provenance.is_none() {
            provenance = parse_provenance(&o.provenance, &ctx)?;
        }
        objects.push(AnnotatedObject {
            name: o.name.clone().unwrap_or_else(|| SEEDLING.to_string()),
            bbox: PixelBox {
                x_min: xmin - 1,
                y_min: ymin - 1,
                x_max: xmax,
                y_max: ymax,
            },
        });
    }
    let record = AnnotationRecord {
        image_id: doc.filename.unwrap_or_default(),
        width: width as u32,
        height: height as u32,
        objects,
        provenance: provenance.unwrap_or_default(),
    };
    record.validate()?;
    Ok(record)
}

pub fn write_annotation_xml(record: &AnnotationRecord) -> String {
    let prov = record.provenance.as_str();
    let mut s = String::new();
    let _ = writeln!(s, "<annotation provenance=\"{prov}\">");
    let _ = writeln!(
        s,
        "\t<filename>{}</filename>",
        escape(record.image_id.as_str())
    );
    let _ = writeln!(s, "\t<size>");
    let _ = writeln!(s, "\t\t<width>{}</width>", record.width);
    let _ = writeln!(s, "\t\t<height>{}</height>", record.height);
    let _ = writeln!(s, "\t\t<depth>3</depth>");
    let _ = writeln!(s, "\t</size>");
    for o in &record.objects {
        let b = o.bbox;
        let _ = writeln!(s, "\t<object provenance=\"{prov}\">");
        let _ = writeln!(s, "\t\t<name>{}</name>", escape(o.name.as_str()));
        let _ = writeln!(s, "\t\t<bndbox>");
        let _ = writeln!(s, "\t\t\t<xmin>{}</xmin>", b.x_min + 1);
        let _ = writeln!(s, "\t\t\t<ymin>{}</ymin>", b.y_min + 1);
        let _ = writeln!(s, "\t\t\t<xmax>{}</xmax>", b.x_max);
        let _ = writeln!(s, "\t\t\t<ymax>{}</ymax>", b.y_max);
        let _ = writeln!(s, "\t\t</bndbox>");
        let _ = writeln!(s, "\t</object>");
    }
    s.push_str("</annotation>\n");
    s
}

pub fn read_annotation(path: &Path) -> Result<AnnotationRecord> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if path
        .extension()
        .is_some_and(|e| e == "json" || e == "jsonl")
    {
        parse_annotation_line(text.trim())
    } else {
        parse_annotation_xml(&text)
    }
}

pub fn write_annotation(record: &AnnotationRecord, path: &Path) -> Result<()> {
    let text = if path
        .extension()
        .is_some_and(|e| e == "json" || e == "jsonl")
    {
        annotation_line(record)? + "\n"
    } else {
        write_annotation_xml(record)
    };
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// The record as a single JSON line.
pub fn annotation_line(record: &AnnotationRecord) -> Result<String> {
    serde_json::to_string(record).map_err(|e| Error::Serde(e.to_string()))
}

pub fn parse_annotation_line(line: &str) -> Result<AnnotationRecord> {
    let r: AnnotationRecord =
        serde_json::from_str(line).map_err(|e| Error::Annotation(e.to_string()))?;
    r.validate()?;
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIXTURE: &str = r#"<annotation>
	<folder>tiles</folder>
	<filename>tile_0001.png</filename>
	<path>/data/tiles/tile_0001.png</path>
	<source><database>Unknown</database></source>
	<size>
		<width>512</width>
		<height>512</height>
		<depth>3</depth>
	</size>
	<segmented>0</segmented>
	<object>
		<name>seedling</name>
		<pose>Unspecified</pose>
		<truncated>0</truncated>
		<difficult>0</difficult>
		<bndbox>
			<xmin>101</xmin>
			<ymin>51</ymin>
			<xmax>118</xmax>
			<ymax>66</ymax>
		</bndbox>
	</object>
	<object>
		<name>seedling</name>
		<bndbox>
			<xmin>300</xmin>
			<ymin>200</ymin>
			<xmax>312</xmax>
			<ymax>215</ymax>
		</bndbox>
	</object>
</annotation>"#;

    #[test]
    fn labelimg_fixture() {
        let r = parse_annotation_xml(FIXTURE).unwrap();
        assert_eq!(r.image_id, "tile_0001.png");
        assert_eq!((r.width, r.height), (512, 512));
        assert_eq!(r.provenance, Provenance::Manual);
        assert_eq!(r.objects.len(), 2);
        assert_eq!(
            r.objects[0].bbox,
            PixelBox {
                x_min: 100,
                y_min: 50,
                x_max: 118,
                y_max: 66
            }
        );
        assert_eq!(r.objects[1].bbox.to_bbox().width(), 13.0);
        assert_eq!(r.objects[1].name, SEEDLING);
    }

    #[test]
    fn round_trip() {
        let mut r = parse_annotation_xml(FIXTURE).unwrap();
        r.provenance = Provenance::Verified;
        let text = write_annotation_xml(&r);
        assert_eq!(parse_annotation_xml(&text).unwrap(), r);
        assert!(!text.contains("segmented"));
        let line = annotation_line(&r).unwrap();
        assert_eq!(parse_annotation_line(&line).unwrap(), r);
    }

    #[test]
    fn empty_record() {
        let doc = "<annotation><size><width>64</width><height>32</height><depth>3</depth></size></annotation>";
        let r = parse_annotation_xml(doc).unwrap();
        assert!(r.objects.is_empty());
        let mut v = r.clone();
        v.provenance = Provenance::Verified;
        assert_eq!(parse_annotation_xml(&write_annotation_xml(&v)).unwrap(), v);
    }

    #[test]
    fn missing_coordinate_names_object() {
        let doc = FIXTURE.replace("<ymax>215</ymax>", "");
        let err = parse_annotation_xml(&doc).unwrap_err().to_string();
        assert!(err.contains("object 1") && err.contains("ymax"), "{err}");
    }

    #[test]
    fn inverted_box_names_object() {
        let doc = FIXTURE.replace("<xmax>118</xmax>", "<xmax>101</xmax>");
        let err = parse_annotation_xml(&doc).unwrap_err().to_string();
        assert!(err.contains("object 0"), "{err}");
    }

    #[test]
    fn out_of_bounds_rejected() {
        let doc = FIXTURE.replace("<xmax>312</xmax>", "<xmax>513</xmax>");
        assert!(parse_annotation_xml(&doc).is_err());
    }

    #[test]
    fn provenance_attribute_read_from_objects() {
        let doc = FIXTURE.replacen("<object>", "<object provenance=\"proposed\">", 1);
        assert_eq!(
            parse_annotation_xml(&doc).unwrap().provenance,
            Provenance::Proposed
        );
    }
}
