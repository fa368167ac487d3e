use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use image::{GrayImage, Luma};
use serde::{Deserialize, Serialize};

use super::{
    parse_via_annotations, rasterize_polygon, split_dataset, write_via_annotations, AnnotatedSample, Category, Mask,
    RegionRejection, ViaAnnotations,
};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    /// Image path as resolved at build time.
    pub image: String,
    /// Key of the image in the annotation document.
    pub filename: String,
    pub width: usize,
    pub height: usize,
    pub category: Option<Category>,
    pub split: Option<String>,
    /// Per-region mask PNGs, relative to the manifest directory.
    pub masks: Vec<String>,
    pub union_mask: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub annotation: String,
    pub seed: u64,
    pub entries: Vec<ManifestEntry>,
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn mkdir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Writes a mask as 8-bit grey: 0 authentic, 255 spliced.
pub fn write_mask_png(path: &Path, mask: &Mask) -> Result<()> {
    let (h, w) = mask.dim();
    let img = GrayImage::from_fn(w as u32, h as u32, |x, y| Luma([if mask[[y as usize, x as usize]] { 255 } else { 0 }]));
    img.save(path).map_err(Error::from)
}

/// Reads a grey PNG; any value of at least 128 counts as spliced.
pub fn read_mask_png(path: &Path) -> Result<Mask> {
    let img = image::open(path)?.into_luma8();
    Ok(Mask::from_shape_fn((img.height() as usize, img.width() as usize), |(y, x)| {
        img.get_pixel(x as u32, y as u32)[0] >= 128
    }))
}

fn stem(filename: &str) -> String {
    Path::new(filename)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| filename.to_string())
        .replace(['/', '\\', ' '], "_")
}

fn category_of(filename: &str, attrs: &BTreeMap<String, String>) -> Option<Category> {
    if let Some(c) = attrs.get("category").and_then(|c| c.parse().ok()) {
        return Some(c);
    }
    Path::new(filename)
        .parent()
        .and_then(|p| p.file_name())
        .and_then(|d| d.to_str())
        .and_then(|d| d.parse().ok())
}

/// Parses the annotation document, rasterizes every region and writes mask
/// PNGs plus `manifest.json` into `out_dir`. Splits are 80/10/10 by seed.
pub fn build_dataset(
    images_dir: &Path,
    annotation: &Path,
    out_dir: &Path,
    seed: u64,
) -> Result<(Manifest, Vec<RegionRejection>)> {
    let via = parse_via_annotations(&read_text(annotation)?)?;
    let mask_dir = out_dir.join("masks");
    mkdir(&mask_dir)?;
    let ids: Vec<String> = via.images.keys().map(|f| stem(f)).collect();
    let n = ids.len();
    let (val, test) = ((n as f64 * 0.1).round() as usize, (n as f64 * 0.1).round() as usize);
    let split = split_dataset(&ids, (n - val - test, val, test), seed)?;
    let mut entries = Vec::with_capacity(n);
    for ((filename, ann), id) in via.images.iter().zip(&ids) {
        let image_path = images_dir.join(filename);
        let (w, h) = image::image_dimensions(&image_path)?;
        let (h, w) = (h as usize, w as usize);
        let mut union = Mask::from_elem((h, w), false);
        let mut masks = Vec::with_capacity(ann.regions.len());
        for (k, r) in ann.regions.iter().enumerate() {
            let m = rasterize_polygon(r, h, w)?;
            union.zip_mut_with(&m, |a, &b| *a |= b);
            let rel = format!("masks/{id}_r{k}.png");
            write_mask_png(&out_dir.join(&rel), &m)?;
            masks.push(rel);
        }
        let union_rel = format!("masks/{id}_union.png");
        write_mask_png(&out_dir.join(&union_rel), &union)?;
        entries.push(ManifestEntry {
            id: id.clone(),
            image: image_path.to_string_lossy().into_owned(),
            filename: filename.clone(),
            width: w,
            height: h,
            category: category_of(filename, &ann.attributes),
            split: split.assignment(id).map(str::to_string),
            masks,
            union_mask: union_rel,
        });
    }
    let manifest = Manifest {
        annotation: annotation.to_string_lossy().into_owned(),
        seed,
        entries,
    };
    let path = out_dir.join(MANIFEST_FILE);
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
    Ok((manifest, via.rejected))
}

pub fn load_manifest(path: &Path) -> Result<Manifest> {
    Ok(serde_json::from_str(&read_text(path)?)?)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ValidationIssue {
    pub id: String,
    pub file: String,
    pub message: String,
}

fn manifest_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

/// Re-rasterizes every annotation and compares against the stored masks.
pub fn validate_dataset(manifest_path: &Path) -> Result<Vec<ValidationIssue>> {
    let manifest = load_manifest(manifest_path)?;
    let dir = manifest_dir(manifest_path);
    let via = parse_via_annotations(&read_text(Path::new(&manifest.annotation))?)?;
    let mut issues = Vec::new();
    let mut issue = |e: &ManifestEntry, file: &str, message: String| {
        issues.push(ValidationIssue {
            id: e.id.clone(),
            file: file.to_string(),
            message,
        })
    };
    for e in &manifest.entries {
        let Some(ann) = via.images.get(&e.filename) else {
            issue(e, &manifest.annotation, "image missing from annotations".into());
            continue;
        };
        if ann.regions.len() != e.masks.len() {
            issue(
                e,
                &manifest.annotation,
                format!("{} regions but {} mask files", ann.regions.len(), e.masks.len()),
            );
            continue;
        }
        let mut union = Mask::from_elem((e.height, e.width), false);
        for (r, rel) in ann.regions.iter().zip(&e.masks) {
            let expect = rasterize_polygon(r, e.height, e.width)?;
            union.zip_mut_with(&expect, |a, &b| *a |= b);
            match read_mask_png(&dir.join(rel)) {
                Ok(m) if m == expect => {}
                Ok(_) => issue(e, rel, "mask differs from its polygon".into()),
                Err(err) => issue(e, rel, err.to_string()),
            }
        }
        match read_mask_png(&dir.join(&e.union_mask)) {
            Ok(m) if m == union => {}
            Ok(_) => issue(e, &e.union_mask, "union mask differs".into()),
            Err(err) => issue(e, &e.union_mask, err.to_string()),
        }
    }
    Ok(issues)
}

/// Loads images and stored masks in manifest order.
pub fn load_samples(manifest_path: &Path) -> Result<(Manifest, Vec<AnnotatedSample>)> {
    let manifest = load_manifest(manifest_path)?;
    let dir = manifest_dir(manifest_path);
    let via: ViaAnnotations = parse_via_annotations(&read_text(Path::new(&manifest.annotation))?)?;
    let mut samples = Vec::with_capacity(manifest.entries.len());
    for e in &manifest.entries {
        let image = image::open(&e.image)?.into_rgb8();
        let regions = via
            .images
            .get(&e.filename)
            .map(|a| a.regions.clone())
            .unwrap_or_default();
        let masks = e
            .masks
            .iter()
            .map(|rel| read_mask_png(&dir.join(rel)))
            .collect::<Result<Vec<_>>>()?;
        samples.push(AnnotatedSample {
            image,
            regions,
            masks,
            source_id: e.id.clone(),
            category: e.category,
        });
    }
    Ok((manifest, samples))
}

/// Writes `images/<id>.png` and `annotations.json` (VIA 2.x) under `dir`.
/// Returns the annotation path.
pub fn write_fixture(samples: &[AnnotatedSample], dir: &Path) -> Result<PathBuf> {
    let images = dir.join("images");
    mkdir(&images)?;
    let mut entries = Vec::with_capacity(samples.len());
    for s in samples {
        let name = format!("{}.png", s.source_id);
        let path = images.join(&name);
        s.image.save(&path)?;
        let size = std::fs::metadata(&path).map_err(|e| Error::io(&path, e))?.len();
        let mut attrs = BTreeMap::new();
        if let Some(c) = s.category {
            attrs.insert("category".to_string(), c.to_string());
        }
        entries.push((name, size, s.regions.clone(), attrs));
    }
    let ann = dir.join("annotations.json");
    std::fs::write(&ann, write_via_annotations(&entries)).map_err(|e| Error::io(&ann, e))?;
    Ok(ann)
}
