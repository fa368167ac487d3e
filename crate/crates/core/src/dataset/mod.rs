mod io;
mod raster;
mod split;
mod stats;
mod synth;
mod transform;
mod via;

use image::RgbImage;

pub use io::{
    build_dataset, load_manifest, load_samples, read_mask_png, validate_dataset, write_fixture, write_mask_png,
    Manifest, ManifestEntry, ValidationIssue, MANIFEST_FILE,
};
pub use raster::{mask_area, mask_bbox, rasterize_polygon, Mask};
pub use split::{split_dataset, DatasetSplit};
pub use stats::{dataset_stats, Category, DatasetStats};
pub use synth::make_synthetic_fixture;
pub use transform::{resize_and_pad, ResizeTransform, Resized};
pub use via::{
    parse_via_annotations, write_via_annotations, ImageAnnotation, PolygonRegion, RegionRejection, ViaAnnotations,
    SPLICED_CLASS,
};

use crate::error::{Error, Result};

/// One image with its spliced regions (empty for an authentic image).
#[derive(Debug, Clone)]
pub struct AnnotatedSample {
    pub image: RgbImage,
    pub regions: Vec<PolygonRegion>,
    pub masks: Vec<Mask>,
    pub source_id: String,
    pub category: Option<Category>,
}

impl AnnotatedSample {
    pub fn height(&self) -> usize {
        self.image.height() as usize
    }

    pub fn width(&self) -> usize {
        self.image.width() as usize
    }

    /// Verifies one mask per region, each equal to its rasterized polygon.
    pub fn check(&self) -> Result<()> {
        if self.masks.len() != self.regions.len() {
            return Err(Error::ShapeMismatch(format!(
                "{}: {} masks for {} regions",
                self.source_id,
                self.masks.len(),
                self.regions.len()
            )));
        }
        for (i, (r, m)) in self.regions.iter().zip(&self.masks).enumerate() {
            if rasterize_polygon(r, self.height(), self.width())? != *m {
                return Err(Error::ShapeMismatch(format!(
                    "{}: mask {i} differs from its polygon",
                    self.source_id
                )));
            }
        }
        Ok(())
    }

    /// Union of all region masks.
    pub fn union_mask(&self) -> Mask {
        let mut u = Mask::from_elem((self.height(), self.width()), false);
        for m in &self.masks {
            u.zip_mut_with(m, |a, &b| *a |= b);
        }
        u
    }
}
