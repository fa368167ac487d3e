//! Detection overlays: translucent mask fill, a solid box outline and a
//! caption like `spliced p=0.87 (4.2%)` per region.

use image::{Rgb, RgbImage};
use splicemask::dataset::Mask;
use splicemask::rpn::BBox;

pub const FILL_ALPHA: f64 = 0.45;

const PALETTE: [[u8; 3]; 6] = [
    [255, 40, 40],
    [40, 200, 255],
    [255, 200, 0],
    [200, 60, 255],
    [60, 255, 120],
    [255, 120, 200],
];

pub struct OverlayRegion<'a> {
    pub bbox: BBox,
    pub score: f64,
    pub mask: &'a Mask,
    /// Share of the image covered by this region, in percent.
    pub percent: f64,
}

pub fn caption(score: f64, percent: f64) -> String {
    format!("spliced p={score:.2} ({percent:.1}%)")
}

// 3×5 glyphs, one row per entry, bit 2 is the left column
fn glyph(c: char) -> [u8; 5] {
    match c {
        '0' => [7, 5, 5, 5, 7],
        '1' => [2, 6, 2, 2, 7],
        '2' => [7, 1, 7, 4, 7],
        '3' => [7, 1, 7, 1, 7],
        '4' => [5, 5, 7, 1, 1],
        '5' => [7, 4, 7, 1, 7],
        '6' => [7, 4, 7, 5, 7],
        '7' => [7, 1, 1, 2, 2],
        '8' => [7, 5, 7, 5, 7],
        '9' => [7, 5, 7, 1, 7],
        's' => [0, 7, 4, 3, 6],
        'p' => [0, 7, 5, 7, 4],
        'l' => [6, 2, 2, 2, 7],
        'i' => [2, 0, 6, 2, 7],
        'c' => [0, 7, 4, 4, 7],
        'e' => [0, 7, 7, 4, 7],
        'd' => [1, 7, 5, 5, 7],
        '=' => [0, 7, 0, 7, 0],
        '.' => [0, 0, 0, 0, 2],
        '(' => [1, 2, 2, 2, 1],
        ')' => [4, 2, 2, 2, 4],
        '%' => [5, 1, 2, 4, 5],
        _ => [0; 5],
    }
}

/// Pixels drawn on top of the fill: box outlines, then caption plates and
/// text. Later entries overwrite earlier ones.
pub fn decorations(regions: &[OverlayRegion], width: usize, height: usize) -> Vec<(usize, usize, Rgb<u8>)> {
    let mut out = Vec::new();
    let inside = |x: i64, y: i64| x >= 0 && y >= 0 && (x as usize) < width && (y as usize) < height;
    for (i, r) in regions.iter().enumerate() {
        let color = Rgb(PALETTE[i % PALETTE.len()]);
        let x1 = r.bbox.x1.floor() as i64;
        let y1 = r.bbox.y1.floor() as i64;
        let x2 = (r.bbox.x2.ceil() as i64 - 1).max(x1);
        let y2 = (r.bbox.y2.ceil() as i64 - 1).max(y1);
        for x in x1..=x2 {
            for y in [y1, y2] {
                if inside(x, y) {
                    out.push((x as usize, y as usize, color));
                }
            }
        }
        for y in y1..=y2 {
            for x in [x1, x2] {
                if inside(x, y) {
                    out.push((x as usize, y as usize, color));
                }
            }
        }
        let text = caption(r.score, r.percent);
        let tw = text.chars().count() as i64 * 4 + 1;
        // plate above the box, or just inside its top edge
        let ty = if y1 >= 7 { y1 - 7 } else { y1 + 1 };
        for y in ty..ty + 7 {
            for x in x1..x1 + tw {
                if inside(x, y) {
                    out.push((x as usize, y as usize, Rgb([0, 0, 0])));
                }
            }
        }
        for (k, ch) in text.chars().enumerate() {
            let g = glyph(ch);
            for (row, bits) in g.iter().enumerate() {
                for col in 0..3 {
                    if bits & (4 >> col) != 0 {
                        let x = x1 + 1 + k as i64 * 4 + col;
                        let y = ty + 1 + row as i64;
                        if inside(x, y) {
                            out.push((x as usize, y as usize, color));
                        }
                    }
                }
            }
        }
    }
    out
}

/// Which pixels [`decorations`] touches.
pub fn decoration_mask(regions: &[OverlayRegion], width: usize, height: usize) -> Mask {
    let mut m = Mask::from_elem((height, width), false);
    for (x, y, _) in decorations(regions, width, height) {
        m[[y, x]] = true;
    }
    m
}

fn blend(p: u8, c: u8) -> u8 {
    (p as f64 * (1.0 - FILL_ALPHA) + c as f64 * FILL_ALPHA).round() as u8
}

/// Regions are drawn in the given order; where masks overlap the first
/// region's colour wins.
pub fn render_overlay(image: &RgbImage, regions: &[OverlayRegion]) -> RgbImage {
    let (w, h) = (image.width() as usize, image.height() as usize);
    let mut out = image.clone();
    for y in 0..h {
        for x in 0..w {
            if let Some(i) = regions.iter().position(|r| r.mask[[y, x]]) {
                let c = PALETTE[i % PALETTE.len()];
                let p = out.get_pixel_mut(x as u32, y as u32);
                *p = Rgb(std::array::from_fn(|k| blend(p[k], c[k])));
            }
        }
    }
    for (x, y, c) in decorations(regions, w, h) {
        out.put_pixel(x as u32, y as u32, c);
    }
    out
}
