use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

pub const SPLICED_CLASS: &str = "spliced";

/// A polygon annotation in pixel coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolygonRegion {
    pub vertices: Vec<(f64, f64)>,
    pub class_label: String,
}

impl PolygonRegion {
    pub fn new(vertices: Vec<(f64, f64)>) -> Self {
        PolygonRegion {
            vertices,
            class_label: SPLICED_CLASS.to_string(),
        }
    }
}

/// A region that was skipped, with the reason.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionRejection {
    pub filename: String,
    pub region_index: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ImageAnnotation {
    pub regions: Vec<PolygonRegion>,
    /// `file_attributes` of the entry, when present.
    pub attributes: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ViaAnnotations {
    /// Keyed by the entry's `filename`.
    pub images: BTreeMap<String, ImageAnnotation>,
    pub rejected: Vec<RegionRejection>,
}

impl ViaAnnotations {
    pub fn regions(&self, filename: &str) -> Option<&[PolygonRegion]> {
        self.images.get(filename).map(|a| a.regions.as_slice())
    }
}

/// Converts serde_json's 1-based line/column into a byte offset.
fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    let start: usize = text.split_inclusive('\n').take(line.saturating_sub(1)).map(str::len).sum();
    (start + column.saturating_sub(1)).min(text.len())
}

fn parse_error(text: &str, e: &serde_json::Error) -> Error {
    Error::AnnotationParse {
        offset: byte_offset(text, e.line(), e.column()),
        message: e.to_string(),
    }
}

fn structure_error(message: impl Into<String>) -> Error {
    Error::AnnotationParse {
        offset: 0,
        message: message.into(),
    }
}

fn numbers(v: Option<&Value>) -> Option<Vec<f64>> {
    v?.as_array()?.iter().map(Value::as_f64).collect()
}

fn parse_region(r: &Value) -> std::result::Result<PolygonRegion, String> {
    let shape = r
        .get("shape_attributes")
        .ok_or_else(|| "missing shape_attributes".to_string())?;
    let name = shape.get("name").and_then(Value::as_str).unwrap_or("");
    if name != "polygon" && name != "polyline" {
        return Err(format!("unsupported shape '{name}'"));
    }
    let xs = numbers(shape.get("all_points_x")).ok_or("all_points_x missing or not numeric")?;
    let ys = numbers(shape.get("all_points_y")).ok_or("all_points_y missing or not numeric")?;
    if xs.len() != ys.len() {
        return Err(format!("{} x coordinates but {} y coordinates", xs.len(), ys.len()));
    }
    if xs.len() < 3 {
        return Err(format!("polygon has {} vertices, need at least 3", xs.len()));
    }
    Ok(PolygonRegion::new(xs.into_iter().zip(ys).collect()))
}

/// Parses a VIA project (2.x `_via_img_metadata` layout, or the bare 1.x
/// image map). Non-polygon regions are recorded in `rejected`.
pub fn parse_via_annotations(document: &str) -> Result<ViaAnnotations> {
    let root: Value = serde_json::from_str(document).map_err(|e| parse_error(document, &e))?;
    let meta = root.get("_via_img_metadata").unwrap_or(&root);
    let meta = meta
        .as_object()
        .ok_or_else(|| structure_error("image metadata is not an object"))?;
    let mut out = ViaAnnotations::default();
    for (key, entry) in meta {
        let filename = entry
            .get("filename")
            .and_then(Value::as_str)
            .unwrap_or(key)
            .to_string();
        let regions: Vec<&Value> = match entry.get("regions") {
            None | Some(Value::Null) => Vec::new(),
            Some(Value::Array(a)) => a.iter().collect(),
            Some(Value::Object(o)) => {
                // 1.x stores regions as {"0": .., "1": ..}
                let mut v: Vec<(usize, &Value)> = o
                    .iter()
                    .map(|(k, v)| (k.parse().unwrap_or(usize::MAX), v))
                    .collect();
                v.sort_by_key(|(k, _)| *k);
                v.into_iter().map(|(_, v)| v).collect()
            }
            Some(_) => return Err(structure_error(format!("{filename}: regions is not a list"))),
        };
        let mut ann = ImageAnnotation::default();
        if let Some(attrs) = entry.get("file_attributes").and_then(Value::as_object) {
            for (k, v) in attrs {
                if let Some(s) = v.as_str() {
                    ann.attributes.insert(k.clone(), s.to_string());
                }
            }
        }
        for (i, r) in regions.into_iter().enumerate() {
            match parse_region(r) {
                Ok(p) => ann.regions.push(p),
                Err(reason) => {
                    log::warn!("{filename} region {i}: {reason}");
                    out.rejected.push(RegionRejection {
                        filename: filename.clone(),
                        region_index: i,
                        reason,
                    });
                }
            }
        }
        out.images.insert(filename, ann);
    }
    Ok(out)
}

/// Serializes regions back into a VIA 2.x project document.
pub fn write_via_annotations(entries: &[(String, u64, Vec<PolygonRegion>, BTreeMap<String, String>)]) -> String {
    let mut meta = serde_json::Map::new();
    for (filename, size, regions, attrs) in entries {
        let regions: Vec<Value> = regions
            .iter()
            .map(|r| {
                serde_json::json!({
                    "shape_attributes": {
                        "name": "polygon",
                        "all_points_x": r.vertices.iter().map(|v| v.0).collect::<Vec<_>>(),
                        "all_points_y": r.vertices.iter().map(|v| v.1).collect::<Vec<_>>(),
                    },
                    "region_attributes": {"class": r.class_label},
                })
            })
            .collect();
        meta.insert(
            format!("{filename}{size}"),
            serde_json::json!({
                "filename": filename,
                "size": size,
                "regions": regions,
                "file_attributes": attrs,
            }),
        );
    }
    serde_json::to_string_pretty(&serde_json::json!({ "_via_img_metadata": meta })).expect("json values serialize")
}
