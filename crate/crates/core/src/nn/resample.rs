use super::Tensor4;

/// Nearest-neighbour 2× upsampling cropped to `(height, width)`.
pub fn upsample_nearest2(x: &Tensor4, height: usize, width: usize) -> Tensor4 {
    let (n, c, h, w) = x.dim();
    assert!(height <= 2 * h && width <= 2 * w, "upsample target too large");
    Tensor4::from_shape_fn((n, c, height, width), |(b, ch, y, xx)| x[[b, ch, y / 2, xx / 2]])
}

pub fn upsample_nearest2_backward(dy: &Tensor4, height: usize, width: usize) -> Tensor4 {
    let (n, c, ho, wo) = dy.dim();
    let mut dx = Tensor4::zeros((n, c, height, width));
    for b in 0..n {
        for ch in 0..c {
            for y in 0..ho {
                for xx in 0..wo {
                    dx[[b, ch, y / 2, xx / 2]] += dy[[b, ch, y, xx]];
                }
            }
        }
    }
    dx
}

/// Stride-2 subsampling (a 1×1 max-pool at stride 2): output size `ceil(h/2)`.
pub fn subsample2(x: &Tensor4) -> Tensor4 {
    let (n, c, h, w) = x.dim();
    Tensor4::from_shape_fn((n, c, h.div_ceil(2), w.div_ceil(2)), |(b, ch, y, xx)| {
        x[[b, ch, 2 * y, 2 * xx]]
    })
}

pub fn subsample2_backward(dy: &Tensor4, height: usize, width: usize) -> Tensor4 {
    let (n, c, ho, wo) = dy.dim();
    let mut dx = Tensor4::zeros((n, c, height, width));
    for b in 0..n {
        for ch in 0..c {
            for y in 0..ho {
                for xx in 0..wo {
                    dx[[b, ch, 2 * y, 2 * xx]] = dy[[b, ch, y, xx]];
                }
            }
        }
    }
    dx
}
