//! Predictions JSON.
//!
//! ```json
//! [{"image_id": "x", "height": 256, "width": 384, "forged_percentage": 4.2,
//!   "detections": [{"box": [x1, y1, x2, y2], "score": 0.9, "class_id": 1,
//!                   "rle": {"size": [256, 384], "counts": [n0, n1, ...]}}]}]
//! ```
//!
//! Masks are run-length encoded over the row-major pixel sequence. Runs
//! alternate starting with unset pixels, so the first count is 0 when the
//! first pixel is set. Counts sum to `height · width`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ImageRegions, Region};
use crate::dataset::Mask;
use crate::error::{Error, Result};
use crate::rpn::BBox;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rle {
    pub size: [usize; 2],
    pub counts: Vec<usize>,
}

pub fn encode_rle(mask: &Mask) -> Rle {
    let (h, w) = mask.dim();
    let mut counts = Vec::new();
    let mut cur = false;
    let mut run = 0usize;
    for &v in mask.iter() {
        if v != cur {
            counts.push(run);
            run = 0;
            cur = v;
        }
        run += 1;
    }
    counts.push(run);
    Rle { size: [h, w], counts }
}

pub fn decode_rle(rle: &Rle) -> Result<Mask> {
    let [h, w] = rle.size;
    let total: usize = rle.counts.iter().sum();
    if total != h * w {
        return Err(Error::Schema {
            field: "rle.counts".into(),
            message: format!("runs sum to {total}, expected {}", h * w),
        });
    }
    let mut flat = Vec::with_capacity(h * w);
    for (i, &n) in rle.counts.iter().enumerate() {
        flat.extend(std::iter::repeat_n(i % 2 == 1, n));
    }
    Ok(Mask::from_shape_vec((h, w), flat).expect("length checked"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
    pub score: f64,
    #[serde(default = "one")]
    pub class_id: usize,
    pub rle: Rle,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: String,
    pub height: usize,
    pub width: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forged_percentage: Option<f64>,
    pub detections: Vec<DetectionRecord>,
}

impl ImageRecord {
    pub fn from_regions(img: &ImageRegions, class_id: usize, forged_percentage: Option<f64>) -> Self {
        ImageRecord {
            image_id: img.image_id.clone(),
            height: img.height,
            width: img.width,
            forged_percentage,
            detections: img
                .regions
                .iter()
                .map(|r| DetectionRecord {
                    bbox: r.bbox.to_array(),
                    score: r.score,
                    class_id,
                    rle: encode_rle(&r.mask),
                })
                .collect(),
        }
    }

    pub fn to_regions(&self) -> Result<ImageRegions> {
        Ok(ImageRegions {
            image_id: self.image_id.clone(),
            height: self.height,
            width: self.width,
            regions: self
                .detections
                .iter()
                .map(|d| {
                    Ok(Region {
                        bbox: BBox::from_array(d.bbox),
                        mask: decode_rle(&d.rle)?,
                        score: d.score,
                    })
                })
                .collect::<Result<_>>()?,
        })
    }
}

fn schema(field: String, message: impl Into<String>) -> Error {
    Error::Schema {
        field,
        message: message.into(),
    }
}

fn validate(records: &[ImageRecord]) -> Result<()> {
    for (i, r) in records.iter().enumerate() {
        if r.height == 0 || r.width == 0 {
            return Err(schema(format!("[{i}].height"), "image dimensions must be positive"));
        }
        if let Some(f) = r.forged_percentage {
            if !(0.0..=100.0).contains(&f) {
                return Err(schema(format!("[{i}].forged_percentage"), "must lie in [0, 100]"));
            }
        }
        for (j, d) in r.detections.iter().enumerate() {
            let at = |f: &str| format!("[{i}].detections[{j}].{f}");
            if !(0.0..=1.0).contains(&d.score) {
                return Err(schema(at("score"), format!("{} outside [0, 1]", d.score)));
            }
            let b = d.bbox;
            if b.iter().any(|v| !v.is_finite()) || b[2] < b[0] || b[3] < b[1] {
                return Err(schema(at("box"), format!("{b:?} is not a valid box")));
            }
            if d.rle.size != [r.height, r.width] {
                return Err(schema(
                    at("rle.size"),
                    format!("{:?} does not match image {}×{}", d.rle.size, r.height, r.width),
                ));
            }
            let total: usize = d.rle.counts.iter().sum();
            if total != r.height * r.width {
                return Err(schema(at("rle.counts"), format!("runs sum to {total}, expected {}", r.height * r.width)));
            }
        }
    }
    Ok(())
}

pub fn predictions_to_json(records: &[ImageRecord]) -> Result<String> {
    Ok(serde_json::to_string_pretty(records)?)
}

pub fn predictions_from_json(text: &str) -> Result<Vec<ImageRecord>> {
    let records: Vec<ImageRecord> = serde_json::from_str(text).map_err(|e| {
        schema(format!("line {} column {}", e.line(), e.column()), e.to_string())
    })?;
    validate(&records)?;
    Ok(records)
}

pub fn write_predictions(path: &Path, records: &[ImageRecord]) -> Result<()> {
    std::fs::write(path, predictions_to_json(records)?).map_err(|e| Error::io(path, e))
}

pub fn read_predictions(path: &Path) -> Result<Vec<ImageRecord>> {
    predictions_from_json(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rle_known_layout() {
        let m = Mask::from_shape_vec((2, 3), vec![true, true, false, false, false, true]).unwrap();
        let r = encode_rle(&m);
        assert_eq!(r.counts, vec![0, 2, 3, 1]);
        assert_eq!(decode_rle(&r).unwrap(), m);
        let e = Mask::from_elem((2, 2), false);
        assert_eq!(encode_rle(&e).counts, vec![4]);
        assert!(decode_rle(&Rle { size: [2, 2], counts: vec![1, 1] }).is_err());
    }

    proptest! {
        #[test]
        fn rle_round_trip(h in 1usize..12, w in 1usize..12, bits in proptest::collection::vec(any::<bool>(), 144)) {
            let m = Mask::from_shape_fn((h, w), |(y, x)| bits[y * 12 + x]);
            prop_assert_eq!(decode_rle(&encode_rle(&m)).unwrap(), m);
        }
    }

    #[test]
    fn json_round_trip_and_schema_errors() {
        let m = Mask::from_shape_fn((5, 7), |(y, x)| x > y);
        let rec = ImageRecord {
            image_id: "img".into(),
            height: 5,
            width: 7,
            forged_percentage: Some(1.0 / 3.0),
            detections: vec![DetectionRecord {
                bbox: [0.1, 0.2, 6.3, 4.0 / 3.0],
                score: 0.123456789012345,
                class_id: 1,
                rle: encode_rle(&m),
            }],
        };
        let text = predictions_to_json(std::slice::from_ref(&rec)).unwrap();
        assert_eq!(predictions_from_json(&text).unwrap(), vec![rec.clone()]);

        let mut bad = rec.clone();
        bad.detections[0].score = 1.5;
        let e = predictions_from_json(&predictions_to_json(&[bad]).unwrap()).unwrap_err();
        assert!(e.to_string().starts_with("[0].detections[0].score"));
        let mut bad = rec;
        bad.detections[0].rle.size = [7, 5];
        assert!(predictions_from_json(&predictions_to_json(&[bad]).unwrap()).is_err());
        assert!(predictions_from_json("[{\"image_id\": 3}]").is_err());
    }
}
