use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Axis-aligned box in pixel coordinates, `x2 >= x1`, `y2 >= y1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        BBox { x1, y1, x2, y2 }
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        BBox::new(cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h)
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn center(&self) -> (f64, f64) {
        (0.5 * (self.x1 + self.x2), 0.5 * (self.y1 + self.y2))
    }

    pub fn is_degenerate(&self) -> bool {
        !(self.width() > 0.0 && self.height() > 0.0)
    }

    pub fn is_finite(&self) -> bool {
        [self.x1, self.y1, self.x2, self.y2].iter().all(|v| v.is_finite())
    }

    /// Clips to `[0, width] × [0, height]`.
    pub fn clip(&self, height: f64, width: f64) -> BBox {
        BBox::new(
            self.x1.clamp(0.0, width),
            self.y1.clamp(0.0, height),
            self.x2.clamp(0.0, width),
            self.y2.clamp(0.0, height),
        )
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        BBox::new(a[0], a[1], a[2], a[3])
    }

    pub fn scale(&self, s: f64) -> BBox {
        BBox::new(self.x1 * s, self.y1 * s, self.x2 * s, self.y2 * s)
    }

    pub fn translate(&self, dx: f64, dy: f64) -> BBox {
        BBox::new(self.x1 + dx, self.y1 + dy, self.x2 + dx, self.y2 + dy)
    }
}

/// Intersection over union; 0 when disjoint or either box is degenerate.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    if a.is_degenerate() || b.is_degenerate() {
        return 0.0;
    }
    let iw = a.x2.min(b.x2) - a.x1.max(b.x1);
    let ih = a.y2.min(b.y2) - a.y1.max(b.y1);
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Largest `tw`/`th` accepted by [`decode_box_deltas`]; keeps `exp` finite.
pub const MAX_LOG_SCALE: f64 = 8.0;

/// `(tx, ty, tw, th)` of `target` relative to `anchor`.
pub fn encode_box_deltas(anchor: &BBox, target: &BBox) -> Result<[f64; 4]> {
    if anchor.is_degenerate() {
        return Err(invalid(format!("cannot encode against degenerate anchor {anchor:?}")));
    }
    if target.is_degenerate() {
        return Err(invalid(format!("cannot encode degenerate target {target:?}")));
    }
    let (acx, acy) = anchor.center();
    let (tcx, tcy) = target.center();
    let (aw, ah) = (anchor.width(), anchor.height());
    Ok([
        (tcx - acx) / aw,
        (tcy - acy) / ah,
        (target.width() / aw).ln(),
        (target.height() / ah).ln(),
    ])
}

/// Inverse of [`encode_box_deltas`]; clipped to the image when `image_size`
/// (height, width) is given.
pub fn decode_box_deltas(anchor: &BBox, deltas: [f64; 4], image_size: Option<(f64, f64)>) -> BBox {
    let (acx, acy) = anchor.center();
    let (aw, ah) = (anchor.width(), anchor.height());
    let cx = acx + deltas[0] * aw;
    let cy = acy + deltas[1] * ah;
    let w = aw * deltas[2].min(MAX_LOG_SCALE).exp();
    let h = ah * deltas[3].min(MAX_LOG_SCALE).exp();
    let b = BBox::from_center(cx, cy, w, h);
    match image_size {
        Some((ih, iw)) => b.clip(ih, iw),
        None => b,
    }
}
