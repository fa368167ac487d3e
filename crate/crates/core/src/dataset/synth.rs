use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{rasterize_polygon, AnnotatedSample, Mask, PolygonRegion};
use crate::error::{invalid, Error, Result};

/// Gap kept between patch bounding boxes, in pixels.
const PATCH_MARGIN: i64 = 3;
const MIN_PATCH: usize = 8;

#[derive(Debug, Clone, Copy)]
enum Shape {
    Rectangle,
    Triangle,
    Diamond,
    Hexagon,
}

fn polygon(shape: Shape, x0: i64, y0: i64, w: i64, h: i64) -> Vec<(f64, f64)> {
    let (x1, y1) = (x0 + w, y0 + h);
    let pts: Vec<(i64, i64)> = match shape {
        Shape::Rectangle => vec![(x0, y0), (x1, y0), (x1, y1), (x0, y1)],
        Shape::Triangle => vec![(x0, y1), (x0 + w / 2, y0), (x1, y1)],
        Shape::Diamond => vec![(x0 + w / 2, y0), (x1, y0 + h / 2), (x0 + w / 2, y1), (x0, y0 + h / 2)],
        Shape::Hexagon => {
            let q = w / 4;
            vec![
                (x0 + q, y0),
                (x1 - q, y0),
                (x1, y0 + h / 2),
                (x1 - q, y1),
                (x0 + q, y1),
                (x0, y0 + h / 2),
            ]
        }
    };
    pts.into_iter().map(|(x, y)| (x as f64, y as f64)).collect()
}

fn overlaps(a: (i64, i64, i64, i64), b: (i64, i64, i64, i64)) -> bool {
    a.0 < b.2 + PATCH_MARGIN && b.0 < a.2 + PATCH_MARGIN && a.1 < b.3 + PATCH_MARGIN && b.1 < a.3 + PATCH_MARGIN
}

fn background(rng: &mut ChaCha8Rng, h: usize, w: usize) -> RgbImage {
    // desaturated two-tone gradient with a gentle ripple and pixel noise
    let base: [f64; 3] = {
        let g = rng.random_range(90.0..160.0);
        std::array::from_fn(|_| g + rng.random_range(-12.0..12.0))
    };
    let tilt: [f64; 2] = [rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3)];
    let freq = rng.random_range(0.05..0.15);
    let mut img = RgbImage::new(w as u32, h as u32);
    for (x, y, px) in img.enumerate_pixels_mut() {
        let (xf, yf) = (x as f64, y as f64);
        let ripple = 8.0 * (freq * xf).sin() * (freq * 0.7 * yf).cos();
        let g = tilt[0] * xf + tilt[1] * yf + ripple;
        *px = Rgb(std::array::from_fn(|c| {
            (base[c] + g + rng.random_range(-6.0..6.0)).clamp(0.0, 255.0) as u8
        }));
    }
    img
}

fn paint_patch(rng: &mut ChaCha8Rng, img: &mut RgbImage, mask: &Mask) {
    // saturated colour with an oriented stripe texture
    let hue = rng.random_range(0..6);
    let hi: f64 = rng.random_range(200.0..250.0);
    let lo = rng.random_range(10.0..60.0);
    let mid = rng.random_range(lo..hi);
    let color = match hue {
        0 => [hi, lo, mid],
        1 => [hi, mid, lo],
        2 => [lo, hi, mid],
        3 => [mid, hi, lo],
        4 => [lo, mid, hi],
        _ => [mid, lo, hi],
    };
    let angle: f64 = rng.random_range(0.0..std::f64::consts::PI);
    let period = rng.random_range(4.0..9.0);
    let (ca, sa) = (angle.cos(), angle.sin());
    for ((y, x), &inside) in mask.indexed_iter() {
        if !inside {
            continue;
        }
        let t = (x as f64 * ca + y as f64 * sa) * std::f64::consts::TAU / period;
        let shade: f64 = if t.sin() >= 0.0 { 1.0 } else { 0.72 };
        img.put_pixel(x as u32, y as u32, Rgb(color.map(|c| (c * shade).clamp(0.0, 255.0) as u8)));
    }
}

/// Textured backgrounds with `k` non-overlapping pasted polygon patches each
/// (`k` uniform in `splice_range`). Vertices are integral so masks are exact.
pub fn make_synthetic_fixture(
    n_images: usize,
    image_size: (usize, usize),
    splice_range: (usize, usize),
    seed: u64,
) -> Result<Vec<AnnotatedSample>> {
    let (kmin, kmax) = splice_range;
    if kmin < 1 || kmax > 20 || kmin > kmax {
        return Err(invalid(format!("splice range {kmin}..{kmax} must lie within 1..=20")));
    }
    let (h, w) = image_size;
    let side = h.min(w);
    if side < MIN_PATCH + 2 * PATCH_MARGIN as usize {
        return Err(Error::Fixture(format!("{h}×{w} image cannot hold any patch")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(n_images);
    for i in 0..n_images {
        let k = rng.random_range(kmin..=kmax);
        let mut img = background(&mut rng, h, w);
        let mut boxes: Vec<(i64, i64, i64, i64)> = Vec::with_capacity(k);
        let mut regions = Vec::with_capacity(k);
        let mut masks = Vec::with_capacity(k);
        let mut lo = (side / 6).max(MIN_PATCH);
        let mut hi = ((side * 2) / 7).max(lo);
        while regions.len() < k {
            let mut placed = false;
            for _ in 0..400 {
                let pw = rng.random_range(lo..=hi) as i64;
                let ph = ((pw as f64 * rng.random_range(0.75..1.33)).round() as i64).clamp(lo as i64, hi as i64);
                if pw + 2 > w as i64 || ph + 2 > h as i64 {
                    continue;
                }
                let x0 = rng.random_range(1..=(w as i64 - pw - 1));
                let y0 = rng.random_range(1..=(h as i64 - ph - 1));
                let b = (x0, y0, x0 + pw, y0 + ph);
                if boxes.iter().any(|&o| overlaps(o, b)) {
                    continue;
                }
                let shape = [Shape::Rectangle, Shape::Triangle, Shape::Diamond, Shape::Hexagon][rng.random_range(0..4)];
                let region = PolygonRegion::new(polygon(shape, x0, y0, pw, ph));
                let mask = rasterize_polygon(&region, h, w)?;
                paint_patch(&mut rng, &mut img, &mask);
                boxes.push(b);
                regions.push(region);
                masks.push(mask);
                placed = true;
                break;
            }
            if !placed {
                if lo == MIN_PATCH && hi == MIN_PATCH {
                    return Err(Error::Fixture(format!(
                        "could not place {k} patches in a {h}×{w} image (placed {})",
                        regions.len()
                    )));
                }
                hi = ((hi * 4) / 5).max(MIN_PATCH);
                lo = lo.min(hi);
            }
        }
        samples.push(AnnotatedSample {
            image: img,
            regions,
            masks,
            source_id: format!("synth_{seed}_{i:04}"),
            category: None,
        });
    }
    Ok(samples)
}
