use ndarray::Array2;

use super::PolygonRegion;
use crate::error::{invalid, Error, Result};

/// Binary mask, `true` = spliced.
pub type Mask = Array2<bool>;

/// Fills `region` with the even-odd rule sampled at pixel centers.
///
/// Pixel `(x, y)` is set iff `(x + 0.5, y + 0.5)` lies inside the polygon.
/// A center exactly on a left/top edge is inside, on a right/bottom edge
/// outside. Vertices are first clamped to `[0, width] × [0, height]`.
pub fn rasterize_polygon(region: &PolygonRegion, height: usize, width: usize) -> Result<Mask> {
    if height == 0 || width == 0 {
        return Err(invalid("mask dimensions must be at least 1×1"));
    }
    if region.vertices.len() < 3 {
        return Err(Error::DegeneratePolygon(format!(
            "{} vertices, need at least 3",
            region.vertices.len()
        )));
    }
    if region.vertices.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(Error::DegeneratePolygon("non-finite vertex".into()));
    }
    let pts: Vec<(f64, f64)> = region
        .vertices
        .iter()
        .map(|&(x, y)| (x.clamp(0.0, width as f64), y.clamp(0.0, height as f64)))
        .collect();
    let mut mask = Mask::from_elem((height, width), false);
    let mut xs = Vec::with_capacity(pts.len());
    for y in 0..height {
        let yc = y as f64 + 0.5;
        xs.clear();
        for i in 0..pts.len() {
            let (x0, y0) = pts[i];
            let (x1, y1) = pts[(i + 1) % pts.len()];
            if (y0 > yc) != (y1 > yc) {
                xs.push(x0 + (yc - y0) * (x1 - x0) / (y1 - y0));
            }
        }
        xs.sort_by(f64::total_cmp);
        for span in xs.chunks_exact(2) {
            // centers with span[0] <= x + 0.5 < span[1]
            let start = (span[0] - 0.5).ceil().max(0.0) as usize;
            let end = ((span[1] - 0.5).ceil().max(0.0) as usize).min(width);
            for x in start..end {
                mask[[y, x]] = true;
            }
        }
    }
    Ok(mask)
}

pub fn mask_area(mask: &Mask) -> usize {
    mask.iter().filter(|&&v| v).count()
}

/// Tight pixel bounding box `(x1, y1, x2, y2)` with exclusive max corner.
pub fn mask_bbox(mask: &Mask) -> Option<(usize, usize, usize, usize)> {
    let mut b: Option<(usize, usize, usize, usize)> = None;
    for ((y, x), &v) in mask.indexed_iter() {
        if v {
            b = Some(match b {
                None => (x, y, x + 1, y + 1),
                Some((x1, y1, x2, y2)) => (x1.min(x), y1.min(y), x2.max(x + 1), y2.max(y + 1)),
            });
        }
    }
    b
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// PNPOLY crossing test at a single point.
    fn pnpoly(pts: &[(f64, f64)], px: f64, py: f64) -> bool {
        let mut inside = false;
        let mut j = pts.len() - 1;
        for i in 0..pts.len() {
            let (xi, yi) = pts[i];
            let (xj, yj) = pts[j];
            if (yi > py) != (yj > py) && px < (xj - xi) * (py - yi) / (yj - yi) + xi {
                inside = !inside;
            }
            j = i;
        }
        inside
    }

    fn oracle(pts: &[(f64, f64)], h: usize, w: usize) -> Mask {
        Mask::from_shape_fn((h, w), |(y, x)| pnpoly(pts, x as f64 + 0.5, y as f64 + 0.5))
    }

    #[test]
    fn full_image_rectangle() {
        let r = PolygonRegion::new(vec![(0.0, 0.0), (7.0, 0.0), (7.0, 5.0), (0.0, 5.0)]);
        assert!(rasterize_polygon(&r, 5, 7).unwrap().iter().all(|&v| v));
    }

    #[test]
    fn square_has_sixteen_pixels() {
        let pts = vec![(2.0, 2.0), (6.0, 2.0), (6.0, 6.0), (2.0, 6.0)];
        let m = rasterize_polygon(&PolygonRegion::new(pts.clone()), 10, 10).unwrap();
        assert_eq!(mask_area(&m), 16);
        assert_eq!(m, oracle(&pts, 10, 10));
    }

    #[test]
    fn right_triangle_matches_oracle() {
        let pts = vec![(0.0, 0.0), (10.0, 0.0), (0.0, 10.0)];
        let m = rasterize_polygon(&PolygonRegion::new(pts.clone()), 10, 10).unwrap();
        let o = oracle(&pts, 10, 10);
        assert_eq!(m, o);
        // centers strictly below the hypotenuse x + y < 10: 1+2+..+9 plus ties
        assert!(mask_area(&m).abs_diff(45) <= 10);
    }

    #[test]
    fn out_of_bounds_vertices_are_clamped() {
        let r = PolygonRegion::new(vec![(-5.0, -5.0), (50.0, -5.0), (50.0, 50.0), (-5.0, 50.0)]);
        assert!(rasterize_polygon(&r, 4, 6).unwrap().iter().all(|&v| v));
    }

    #[test]
    fn too_few_vertices() {
        let r = PolygonRegion::new(vec![(0.0, 0.0), (1.0, 1.0)]);
        assert!(matches!(rasterize_polygon(&r, 4, 4), Err(Error::DegeneratePolygon(_))));
    }

    proptest! {
        #[test]
        fn convex_polygons_match_pnpoly(cx in 8.0..24.0f64, cy in 8.0..24.0f64, r in 2.0..8.0f64,
                                        n in 3usize..9, phase in 0.0..6.28f64) {
            let pts: Vec<(f64, f64)> = (0..n)
                .map(|i| {
                    let a = phase + i as f64 * std::f64::consts::TAU / n as f64;
                    (cx + r * a.cos(), cy + r * a.sin())
                })
                .collect();
            let m = rasterize_polygon(&PolygonRegion::new(pts.clone()), 32, 32).unwrap();
            prop_assert_eq!(m, oracle(&pts, 32, 32));
        }

        #[test]
        fn star_polygons_match_pnpoly(radii in proptest::collection::vec(2.0..12.0f64, 5..12)) {
            // star-shaped around the center, hence simple
            let n = radii.len();
            let pts: Vec<(f64, f64)> = radii
                .iter()
                .enumerate()
                .map(|(i, r)| {
                    let a = i as f64 * std::f64::consts::TAU / n as f64;
                    (16.0 + r * a.cos(), 16.0 + r * a.sin())
                })
                .collect();
            let m = rasterize_polygon(&PolygonRegion::new(pts.clone()), 32, 32).unwrap();
            let o = oracle(&pts, 32, 32);
            let agree = m.iter().zip(o.iter()).filter(|(a, b)| a == b).count();
            prop_assert!(agree as f64 >= 0.99 * 1024.0);
        }
    }
}
