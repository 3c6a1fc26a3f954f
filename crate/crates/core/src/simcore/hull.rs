//! Planar convex hull and polygon area, for support-polygon measures.

use crate::scalar::Real;

/// Convex hull of 2D points (Andrew's monotone chain), counterclockwise,
/// without the closing repeat. Collinear boundary points are dropped; fewer
/// than three distinct points come back as-is.
pub fn convex_hull<T: Real>(points: &[(T, T)]) -> Vec<(T, T)> {
    let mut pts: Vec<(T, T)> = points.to_vec();
    pts.sort_by(|a, b| {
        a.0.partial_cmp(&b.0)
            .unwrap()
            .then(a.1.partial_cmp(&b.1).unwrap())
    });
    pts.dedup_by(|a, b| a.0 == b.0 && a.1 == b.1);
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: (T, T), a: (T, T), b: (T, T)| -> T {
        (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
    };
    let mut lower: Vec<(T, T)> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2
            && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= T::zero()
        {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<(T, T)> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2
            && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= T::zero()
        {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// Area of the convex hull of the points; zero for fewer than three
/// non-collinear points.
pub fn hull_area<T: Real>(points: &[(T, T)]) -> T {
    polygon_area(&convex_hull(points))
}

/// Shoelace area of a simple polygon given in order (either winding).
pub fn polygon_area<T: Real>(poly: &[(T, T)]) -> T {
    if poly.len() < 3 {
        return T::zero();
    }
    let mut twice = T::zero();
    for i in 0..poly.len() {
        let (x0, y0) = poly[i];
        let (x1, y1) = poly[(i + 1) % poly.len()];
        twice += x0 * y1 - x1 * y0;
    }
    (twice / (T::one() + T::one())).abs()
}
