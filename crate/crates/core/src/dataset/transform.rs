use image::imageops::{self, FilterType};
use image::RgbImage;
use serde::{Deserialize, Serialize};

use super::Mask;
use crate::error::{invalid, Result};
use crate::rpn::BBox;

/// Scale-then-pad mapping from an original image into the square network input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResizeTransform {
    pub scale: f64,
    pub pad_top: usize,
    pub pad_left: usize,
    /// Size of the scaled content before padding.
    pub scaled: (usize, usize),
    pub original: (usize, usize),
    pub target: usize,
}

impl ResizeTransform {
    pub fn new(height: usize, width: usize, target: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(invalid("cannot resize an empty image"));
        }
        if target == 0 {
            return Err(invalid("resize target must be positive"));
        }
        let scale = target as f64 / height.max(width) as f64;
        let sh = ((height as f64 * scale).round() as usize).clamp(1, target);
        let sw = ((width as f64 * scale).round() as usize).clamp(1, target);
        Ok(ResizeTransform {
            scale,
            pad_top: (target - sh) / 2,
            pad_left: (target - sw) / 2,
            scaled: (sh, sw),
            original: (height, width),
            target,
        })
    }

    pub fn is_identity(&self) -> bool {
        self.scale == 1.0 && self.pad_top == 0 && self.pad_left == 0
    }

    pub fn forward_point(&self, x: f64, y: f64) -> (f64, f64) {
        (x * self.scale + self.pad_left as f64, y * self.scale + self.pad_top as f64)
    }

    pub fn inverse_point(&self, x: f64, y: f64) -> (f64, f64) {
        ((x - self.pad_left as f64) / self.scale, (y - self.pad_top as f64) / self.scale)
    }

    pub fn forward_box(&self, b: &BBox) -> BBox {
        let (x1, y1) = self.forward_point(b.x1, b.y1);
        let (x2, y2) = self.forward_point(b.x2, b.y2);
        BBox::new(x1, y1, x2, y2)
    }

    pub fn inverse_box(&self, b: &BBox) -> BBox {
        let (x1, y1) = self.inverse_point(b.x1, b.y1);
        let (x2, y2) = self.inverse_point(b.x2, b.y2);
        BBox::new(x1, y1, x2, y2)
    }

    /// Nearest-neighbour resample of a mask into the padded square.
    pub fn forward_mask(&self, mask: &Mask) -> Mask {
        let (h, w) = self.original;
        assert_eq!(mask.dim(), (h, w), "mask does not match the original size");
        let (sh, sw) = self.scaled;
        let mut out = Mask::from_elem((self.target, self.target), false);
        for y in 0..sh {
            let sy = ((((y as f64 + 0.5) * h as f64) / sh as f64) as usize).min(h - 1);
            for x in 0..sw {
                let sx = ((((x as f64 + 0.5) * w as f64) / sw as f64) as usize).min(w - 1);
                out[[y + self.pad_top, x + self.pad_left]] = mask[[sy, sx]];
            }
        }
        out
    }

    /// Maps a network-space mask back to the original image grid.
    pub fn inverse_mask(&self, mask: &Mask) -> Mask {
        assert_eq!(mask.dim(), (self.target, self.target), "mask is not network sized");
        let (h, w) = self.original;
        let (sh, sw) = self.scaled;
        Mask::from_shape_fn((h, w), |(y, x)| {
            let ty = ((((y as f64 + 0.5) * sh as f64) / h as f64) as usize).min(sh - 1);
            let tx = ((((x as f64 + 0.5) * sw as f64) / w as f64) as usize).min(sw - 1);
            mask[[ty + self.pad_top, tx + self.pad_left]]
        })
    }
}

#[derive(Debug, Clone)]
pub struct Resized {
    pub image: RgbImage,
    pub masks: Vec<Mask>,
    pub transform: ResizeTransform,
}

/// Scales the longest side to `target` (aspect preserved), centres the
/// result on a zero square, and transforms masks with nearest neighbour.
pub fn resize_and_pad(image: &RgbImage, masks: &[Mask], target: usize) -> Result<Resized> {
    let (w, h) = (image.width() as usize, image.height() as usize);
    let t = ResizeTransform::new(h, w, target)?;
    for m in masks {
        if m.dim() != (h, w) {
            return Err(invalid(format!("mask {:?} does not match image {:?}", m.dim(), (h, w))));
        }
    }
    let mut out = RgbImage::new(target as u32, target as u32);
    if t.scaled == (h, w) {
        imageops::replace(&mut out, image, t.pad_left as i64, t.pad_top as i64);
    } else {
        let scaled = imageops::resize(image, t.scaled.1 as u32, t.scaled.0 as u32, FilterType::Triangle);
        imageops::replace(&mut out, &scaled, t.pad_left as i64, t.pad_top as i64);
    }
    Ok(Resized {
        image: out,
        masks: masks.iter().map(|m| t.forward_mask(m)).collect(),
        transform: t,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;

    #[test]
    fn identity_for_square_target() {
        let img = RgbImage::from_fn(512, 512, |x, y| Rgb([(x % 256) as u8, (y % 256) as u8, 7]));
        let m = Mask::from_shape_fn((512, 512), |(y, x)| (x + y) % 3 == 0);
        let r = resize_and_pad(&img, std::slice::from_ref(&m), 512).unwrap();
        assert!(r.transform.is_identity());
        assert_eq!(r.image, img);
        assert_eq!(r.masks[0], m);
    }

    #[test]
    fn misd_native_size() {
        // 384 rows × 256 columns
        let img = RgbImage::new(256, 384);
        let r = resize_and_pad(&img, &[], 512).unwrap();
        assert!((r.transform.scale - 512.0 / 384.0).abs() < 1e-12);
        assert_eq!(r.transform.scaled, (512, 341));
        assert_eq!(r.transform.pad_top, 0);
        assert!(r.transform.pad_left > 0);
        // landscape orientation pads rows instead
        let r = resize_and_pad(&RgbImage::new(384, 256), &[], 512).unwrap();
        assert_eq!(r.transform.scaled, (341, 512));
        assert!(r.transform.pad_top > 0);
    }

    #[test]
    fn box_round_trip_within_a_pixel() {
        for &(h, w) in &[(384usize, 256usize), (256, 384), (100, 37), (513, 1000)] {
            let t = ResizeTransform::new(h, w, 512).unwrap();
            let b = BBox::new(3.0, 5.5, w as f64 - 2.0, h as f64 - 7.0);
            let back = t.inverse_box(&t.forward_box(&b));
            for (a, c) in b.to_array().iter().zip(back.to_array()) {
                assert!((a - c).abs() <= 1.0);
            }
        }
    }

    #[test]
    fn mask_round_trip_on_upscale() {
        let m = Mask::from_shape_fn((96, 64), |(y, x)| (10..40).contains(&y) && (5..30).contains(&x));
        let t = ResizeTransform::new(96, 64, 128).unwrap();
        assert_eq!(t.inverse_mask(&t.forward_mask(&m)), m);
    }

    #[test]
    fn empty_image_is_an_error() {
        assert!(resize_and_pad(&RgbImage::new(0, 5), &[], 512).is_err());
    }
}
