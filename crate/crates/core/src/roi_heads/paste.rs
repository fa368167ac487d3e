use ndarray::ArrayView2;

use crate::dataset::Mask;
use crate::rpn::BBox;

/// Bilinear sample with edge clamping, in mask-cell coordinates where cell
/// `(i, j)` is centred at `(j, i)`.
fn sample_clamped(m: &ArrayView2<f64>, u: f64, v: f64) -> f64 {
    let (h, w) = m.dim();
    let u = u.clamp(0.0, (w - 1) as f64);
    let v = v.clamp(0.0, (h - 1) as f64);
    let (u0, v0) = (u.floor() as usize, v.floor() as usize);
    let (u1, v1) = ((u0 + 1).min(w - 1), (v0 + 1).min(h - 1));
    let (lu, lv) = (u - u0 as f64, v - v0 as f64);
    (1.0 - lv) * ((1.0 - lu) * m[[v0, u0]] + lu * m[[v0, u1]]) + lv * ((1.0 - lu) * m[[v1, u0]] + lu * m[[v1, u1]])
}

/// Resamples a fixed-size mask prediction into its box on an `h×w` canvas
/// and thresholds it. Pixels outside the box are never set.
pub fn paste_mask(mask: ArrayView2<f64>, b: &BBox, image_size: (usize, usize), threshold: f64) -> Mask {
    let (h, w) = image_size;
    let mut out = Mask::from_elem((h, w), false);
    let (mh, mw) = mask.dim();
    if mh == 0 || mw == 0 || b.is_degenerate() || !b.is_finite() {
        return out;
    }
    let x0 = b.x1.max(0.0).floor() as usize;
    let y0 = b.y1.max(0.0).floor() as usize;
    let x1 = (b.x2.min(w as f64).ceil().max(0.0) as usize).min(w);
    let y1 = (b.y2.min(h as f64).ceil().max(0.0) as usize).min(h);
    let (sx, sy) = (mw as f64 / b.width(), mh as f64 / b.height());
    for y in y0..y1 {
        let cy = y as f64 + 0.5;
        if cy < b.y1 || cy >= b.y2 {
            continue;
        }
        let v = (cy - b.y1) * sy - 0.5;
        for x in x0..x1 {
            let cx = x as f64 + 0.5;
            if cx < b.x1 || cx >= b.x2 {
                continue;
            }
            let u = (cx - b.x1) * sx - 0.5;
            out[[y, x]] = sample_clamped(&mask, u, v) >= threshold;
        }
    }
    out
}
