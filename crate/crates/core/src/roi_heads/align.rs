use ndarray::{Array3, ArrayView3, ArrayViewMut3};

use crate::error::{Error, Result};
use crate::rpn::BBox;

/// Bilinear read with zero padding: `(value, d/dx, d/dy)` at continuous
/// feature coordinates where pixel `(i, j)` sits at `(j, i)`.
#[inline]
fn bilinear(fm: &ArrayView3<f64>, c: usize, x: f64, y: f64) -> (f64, f64, f64) {
    let (_, h, w) = fm.dim();
    let (x0, y0) = (x.floor(), y.floor());
    let (lx, ly) = (x - x0, y - y0);
    let (x0, y0) = (x0 as isize, y0 as isize);
    let at = |yy: isize, xx: isize| -> f64 {
        if yy < 0 || xx < 0 || yy >= h as isize || xx >= w as isize {
            0.0
        } else {
            fm[[c, yy as usize, xx as usize]]
        }
    };
    let (f00, f01, f10, f11) = (at(y0, x0), at(y0, x0 + 1), at(y0 + 1, x0), at(y0 + 1, x0 + 1));
    let v = (1.0 - ly) * ((1.0 - lx) * f00 + lx * f01) + ly * ((1.0 - lx) * f10 + lx * f11);
    let dx = (1.0 - ly) * (f01 - f00) + ly * (f11 - f10);
    let dy = (1.0 - lx) * (f10 - f00) + lx * (f11 - f01);
    (v, dx, dy)
}

#[inline]
fn scatter(grad: &mut ArrayViewMut3<f64>, c: usize, x: f64, y: f64, g: f64) {
    let (_, h, w) = grad.dim();
    let (x0, y0) = (x.floor(), y.floor());
    let (lx, ly) = (x - x0, y - y0);
    let (x0, y0) = (x0 as isize, y0 as isize);
    for (yy, xx, wgt) in [
        (y0, x0, (1.0 - ly) * (1.0 - lx)),
        (y0, x0 + 1, (1.0 - ly) * lx),
        (y0 + 1, x0, ly * (1.0 - lx)),
        (y0 + 1, x0 + 1, ly * lx),
    ] {
        if yy >= 0 && xx >= 0 && (yy as usize) < h && (xx as usize) < w {
            grad[[c, yy as usize, xx as usize]] += wgt * g;
        }
    }
}

/// Sample positions for one ROI: per output row/col, the `sampling_ratio`
/// coordinates and their derivative w.r.t. the low and high box edge.
struct Grid {
    /// `(coord, d/d_lo, d/d_hi)` indexed `[bin * sr + k]`.
    xs: Vec<(f64, f64, f64)>,
    ys: Vec<(f64, f64, f64)>,
    sr: usize,
}

fn grid(b: &BBox, stride: f64, out: (usize, usize), sr: usize) -> Grid {
    // image coordinate u maps to u / stride - 0.5 so pixel centres land on integers
    let axis = |lo: f64, hi: f64, n: usize| -> Vec<(f64, f64, f64)> {
        let (flo, fhi) = (lo / stride - 0.5, hi / stride - 0.5);
        let mut v = Vec::with_capacity(n * sr);
        for bin in 0..n {
            for k in 0..sr {
                let t = (bin as f64 + (k as f64 + 0.5) / sr as f64) / n as f64;
                v.push((flo + t * (fhi - flo), (1.0 - t) / stride, t / stride));
            }
        }
        v
    };
    Grid {
        xs: axis(b.x1, b.x2, out.1),
        ys: axis(b.y1, b.y2, out.0),
        sr,
    }
}

fn check(b: &BBox, out: (usize, usize), sr: usize, stride: f64) -> Result<()> {
    if !b.is_finite() || b.x2 <= b.x1 || b.y2 <= b.y1 {
        return Err(Error::InvalidArgument(format!("degenerate ROI {b:?}")));
    }
    if out.0 == 0 || out.1 == 0 || sr == 0 || stride <= 0.0 {
        return Err(Error::InvalidArgument("ROIAlign needs positive output size, sampling ratio and stride".into()));
    }
    Ok(())
}

/// ROIAlign over one `C×H×W` map with the given stride. Each output bin
/// averages `sampling_ratio²` bilinear samples; box edges are never rounded.
pub fn roi_align(
    feature: ArrayView3<f64>,
    stride: f64,
    b: &BBox,
    output_size: (usize, usize),
    sampling_ratio: usize,
) -> Result<Array3<f64>> {
    check(b, output_size, sampling_ratio, stride)?;
    let g = grid(b, stride, output_size, sampling_ratio);
    let c = feature.dim().0;
    let (oh, ow) = output_size;
    let norm = 1.0 / (g.sr * g.sr) as f64;
    let mut out = Array3::zeros((c, oh, ow));
    for ch in 0..c {
        for by in 0..oh {
            for bx in 0..ow {
                let mut acc = 0.0;
                for &(y, _, _) in &g.ys[by * g.sr..(by + 1) * g.sr] {
                    for &(x, _, _) in &g.xs[bx * g.sr..(bx + 1) * g.sr] {
                        acc += bilinear(&feature, ch, x, y).0;
                    }
                }
                out[[ch, by, bx]] = acc * norm;
            }
        }
    }
    Ok(out)
}

/// Backward of [`roi_align`]: accumulates `dL/dfeature` into `grad_feature`
/// and returns `dL/d(x1, y1, x2, y2)`.
pub fn roi_align_backward(
    feature: ArrayView3<f64>,
    grad_feature: &mut ArrayViewMut3<f64>,
    stride: f64,
    b: &BBox,
    grad_out: ArrayView3<f64>,
    sampling_ratio: usize,
) -> Result<[f64; 4]> {
    let (c, oh, ow) = grad_out.dim();
    check(b, (oh, ow), sampling_ratio, stride)?;
    let g = grid(b, stride, (oh, ow), sampling_ratio);
    let norm = 1.0 / (g.sr * g.sr) as f64;
    let mut gb = [0.0; 4];
    for ch in 0..c {
        for by in 0..oh {
            for bx in 0..ow {
                let go = grad_out[[ch, by, bx]] * norm;
                if go == 0.0 {
                    continue;
                }
                for &(y, dy_lo, dy_hi) in &g.ys[by * g.sr..(by + 1) * g.sr] {
                    for &(x, dx_lo, dx_hi) in &g.xs[bx * g.sr..(bx + 1) * g.sr] {
                        let (_, dvx, dvy) = bilinear(&feature, ch, x, y);
                        scatter(grad_feature, ch, x, y, go);
                        gb[0] += go * dvx * dx_lo;
                        gb[2] += go * dvx * dx_hi;
                        gb[1] += go * dvy * dy_lo;
                        gb[3] += go * dvy * dy_hi;
                    }
                }
            }
        }
    }
    Ok(gb)
}

/// Pyramid level for a ROI: `floor(4 + log2(sqrt(wh) / 224))` clamped to
/// `[min_level, max_level]`.
pub fn roi_level(b: &BBox, min_level: usize, max_level: usize) -> usize {
    let s = (b.width() * b.height()).max(1e-12).sqrt();
    let k = (4.0 + (s / 224.0).log2()).floor();
    (k.max(min_level as f64).min(max_level as f64)) as usize
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Explicit four-neighbour bilinear weights, one sample at a time.
    fn scalar_oracle(f: &Array3<f64>, s: f64, b: &BBox, oh: usize, ow: usize, sr: usize) -> Array3<f64> {
        let (c, h, w) = f.dim();
        let mut out = Array3::zeros((c, oh, ow));
        let (x1, y1) = (b.x1 / s - 0.5, b.y1 / s - 0.5);
        let (bw, bh) = ((b.x2 - b.x1) / s / ow as f64, (b.y2 - b.y1) / s / oh as f64);
        for ch in 0..c {
            for i in 0..oh {
                for j in 0..ow {
                    let mut sum = 0.0;
                    for a in 0..sr {
                        for bb in 0..sr {
                            let y = y1 + i as f64 * bh + (a as f64 + 0.5) * bh / sr as f64;
                            let x = x1 + j as f64 * bw + (bb as f64 + 0.5) * bw / sr as f64;
                            for yy in 0..h {
                                for xx in 0..w {
                                    let wy = (1.0 - (y - yy as f64).abs()).max(0.0);
                                    let wx = (1.0 - (x - xx as f64).abs()).max(0.0);
                                    sum += wy * wx * f[[ch, yy, xx]];
                                }
                            }
                        }
                    }
                    out[[ch, i, j]] = sum / (sr * sr) as f64;
                }
            }
        }
        out
    }

    fn random_box(rng: &mut ChaCha8Rng, extent: f64) -> BBox {
        let x1 = rng.random_range(-4.0..extent - 4.0);
        let y1 = rng.random_range(-4.0..extent - 4.0);
        BBox::new(x1, y1, x1 + rng.random_range(1.0..extent / 2.0), y1 + rng.random_range(1.0..extent / 2.0))
    }

    #[test]
    fn constant_map() {
        let f = Array3::from_elem((2, 10, 10), 3.5);
        let out = roi_align(f.view(), 4.0, &BBox::new(6.0, 6.0, 30.0, 26.0), (7, 7), 2).unwrap();
        assert!(out.iter().all(|&v| (v - 3.5).abs() < 1e-12));
    }

    #[test]
    fn integer_bins_equal_average_pooling() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let f = Array3::from_shape_fn((1, 12, 12), |_| rng.random_range(-1.0..1.0));
        let s = 2.0;
        // cells 2..8 horizontally, 3..9 vertically, 3×3 bins of 2 cells
        let b = BBox::new(2.0 * s, 3.0 * s, 8.0 * s, 9.0 * s);
        let out = roi_align(f.view(), s, &b, (3, 3), 2).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let mut avg = 0.0;
                for yy in 0..2 {
                    for xx in 0..2 {
                        avg += f[[0, 3 + 2 * i + yy, 2 + 2 * j + xx]];
                    }
                }
                assert!((out[[0, i, j]] - avg / 4.0).abs() < 1e-12);
            }
        }
        // one cell per bin at its centre reads the cell itself
        let one = roi_align(f.view(), s, &b, (6, 6), 1).unwrap();
        assert!((one[[0, 0, 0]] - f[[0, 3, 2]]).abs() < 1e-12);
    }

    #[test]
    fn matches_scalar_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = Array3::from_shape_fn((2, 16, 16), |_| rng.random_range(-1.0..1.0));
        for _ in 0..40 {
            let b = random_box(&mut rng, 64.0);
            let sr = rng.random_range(1..3);
            let a = roi_align(f.view(), 4.0, &b, (5, 4), sr).unwrap();
            let o = scalar_oracle(&f, 4.0, &b, 5, 4, sr);
            for (x, y) in a.iter().zip(o.iter()) {
                assert!((x - y).abs() <= 1e-6 * y.abs().max(1e-6));
            }
        }
    }

    #[test]
    fn degenerate_box() {
        let f = Array3::zeros((1, 4, 4));
        assert!(roi_align(f.view(), 1.0, &BBox::new(2.0, 2.0, 2.0, 3.0), (2, 2), 2).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f = Array3::from_shape_fn((2, 9, 9), |_| rng.random_range(-1.0..1.0));
        let w = Array3::from_shape_fn((2, 3, 3), |_| rng.random_range(-1.0..1.0));
        let loss = |f: &Array3<f64>, b: &BBox| (roi_align(f.view(), 2.0, b, (3, 3), 2).unwrap() * &w).sum();
        for _ in 0..10 {
            let b = random_box(&mut rng, 18.0);
            let mut gf = Array3::zeros(f.dim());
            let gb = roi_align_backward(f.view(), &mut gf.view_mut(), 2.0, &b, w.view(), 2).unwrap();
            let h = 1e-6;
            for k in 0..4 {
                let mut p = b.to_array();
                let mut m = b.to_array();
                p[k] += h;
                m[k] -= h;
                let num = (loss(&f, &BBox::from_array(p)) - loss(&f, &BBox::from_array(m))) / (2.0 * h);
                assert!((gb[k] - num).abs() <= 1e-4 * num.abs().max(1e-2), "box[{k}] {} vs {num}", gb[k]);
            }
            for idx in [0usize, 40, 80, 100, 161] {
                let mut fp = f.clone();
                let mut fm = f.clone();
                fp.as_slice_mut().unwrap()[idx] += h;
                fm.as_slice_mut().unwrap()[idx] -= h;
                let num = (loss(&fp, &b) - loss(&fm, &b)) / (2.0 * h);
                let ana = gf.as_slice().unwrap()[idx];
                assert!((ana - num).abs() <= 1e-4 * num.abs().max(1e-2));
            }
        }
    }

    #[test]
    fn continuous_in_box_coordinates() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = Array3::from_shape_fn((1, 16, 16), |_| rng.random_range(-1.0..1.0));
        let base = BBox::new(10.3, 7.9, 40.2, 33.3);
        let a = roi_align(f.view(), 4.0, &base, (7, 7), 2).unwrap();
        for eps in [1e-3, 1e-5, 1e-7] {
            let b = roi_align(f.view(), 4.0, &base.translate(eps, -eps), (7, 7), 2).unwrap();
            let diff = (&a - &b).iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(diff < 10.0 * eps, "jump {diff} at eps {eps}");
        }
    }

    #[test]
    fn level_assignment() {
        assert_eq!(roi_level(&BBox::new(0.0, 0.0, 224.0, 224.0), 2, 5), 4);
        assert_eq!(roi_level(&BBox::new(0.0, 0.0, 112.0, 112.0), 2, 5), 3);
        assert_eq!(roi_level(&BBox::new(0.0, 0.0, 20.0, 20.0), 2, 5), 2);
        assert_eq!(roi_level(&BBox::new(0.0, 0.0, 2000.0, 2000.0), 2, 5), 5);
    }
}
