use serde::{Deserialize, Serialize};

use super::BBox;
use crate::error::{invalid, Result};

/// Spatial size and stride of one pyramid level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelShape {
    pub height: usize,
    pub width: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnchorSet {
    pub boxes: Vec<BBox>,
    /// Pyramid level index (0 = finest) of every anchor.
    pub level_of: Vec<usize>,
    pub stride_of: Vec<usize>,
    /// First anchor index of each level, plus a final end marker.
    pub level_offsets: Vec<usize>,
    pub anchors_per_location: usize,
}

impl AnchorSet {
    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn num_levels(&self) -> usize {
        self.level_offsets.len().saturating_sub(1)
    }
}

/// Tiles anchors over every level.
///
/// At level `l` each grid cell gets one anchor per ratio with area
/// `(scales[l] * stride)^2` and `h / w = ratio`, centred on
/// `((x + 0.5) * stride, (y + 0.5) * stride)`. Order is level-major, then
/// row-major over cells, then ratio.
pub fn generate_anchors(levels: &[LevelShape], scales: &[f64], ratios: &[f64]) -> Result<AnchorSet> {
    if levels.len() != scales.len() {
        return Err(invalid(format!(
            "{} pyramid levels but {} anchor scales",
            levels.len(),
            scales.len()
        )));
    }
    if ratios.is_empty() {
        return Err(invalid("anchor ratios must be non-empty"));
    }
    if let Some(r) = ratios.iter().chain(scales).find(|r| !(**r > 0.0 && r.is_finite())) {
        return Err(invalid(format!("anchor scales and ratios must be positive, got {r}")));
    }
    let total: usize = levels.iter().map(|l| l.height * l.width * ratios.len()).sum();
    let mut set = AnchorSet {
        boxes: Vec::with_capacity(total),
        level_of: Vec::with_capacity(total),
        stride_of: Vec::with_capacity(total),
        level_offsets: vec![0],
        anchors_per_location: ratios.len(),
    };
    for (li, (level, &scale)) in levels.iter().zip(scales).enumerate() {
        let side = scale * level.stride as f64;
        let shapes: Vec<(f64, f64)> = ratios
            .iter()
            .map(|&r| (side / r.sqrt(), side * r.sqrt()))
            .collect();
        for y in 0..level.height {
            let cy = (y as f64 + 0.5) * level.stride as f64;
            for x in 0..level.width {
                let cx = (x as f64 + 0.5) * level.stride as f64;
                for &(w, h) in &shapes {
                    set.boxes.push(BBox::from_center(cx, cy, w, h));
                    set.level_of.push(li);
                    set.stride_of.push(level.stride);
                }
            }
        }
        set.level_offsets.push(set.boxes.len());
    }
    Ok(set)
}

/// Pyramid level shapes for a square input, strides `2^first_level ..`.
pub fn pyramid_shapes(input: usize, first_level: u32, num_levels: usize) -> Vec<LevelShape> {
    (0..num_levels as u32)
        .map(|i| {
            let stride = 1usize << (first_level + i);
            let size = input.div_ceil(stride);
            LevelShape {
                height: size,
                width: size,
                stride,
            }
        })
        .collect()
}
