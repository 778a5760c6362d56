//! Planar helpers for placement: convex hull and distance to it.

pub type P2 = [f64; 2];

pub fn sub(a: P2, b: P2) -> P2 {
    [a[0] - b[0], a[1] - b[1]]
}

pub fn cross(a: P2, b: P2) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

pub fn dot(a: P2, b: P2) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

pub fn dist(a: P2, b: P2) -> f64 {
    let d = sub(a, b);
    dot(d, d).sqrt()
}

/// Convex hull in counter-clockwise order (monotone chain). Collinear input
/// yields its two extreme points; a single distinct point yields one.
pub fn convex_hull(points: &[P2]) -> Vec<P2> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut lower: Vec<P2> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2
            && cross(sub(lower[lower.len() - 1], lower[lower.len() - 2]), sub(p, lower[lower.len() - 2])) <= 0.0
        {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<P2> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2
            && cross(sub(upper[upper.len() - 1], upper[upper.len() - 2]), sub(p, upper[upper.len() - 2])) <= 0.0
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

fn segment_distance(p: P2, a: P2, b: P2) -> f64 {
    let ab = sub(b, a);
    let len2 = dot(ab, ab);
    if len2 == 0.0 {
        return dist(p, a);
    }
    let t = (dot(sub(p, a), ab) / len2).clamp(0.0, 1.0);
    dist(p, [a[0] + t * ab[0], a[1] + t * ab[1]])
}

/// Euclidean distance from `p` to the convex polygon `hull` (0 inside).
pub fn hull_distance(p: P2, hull: &[P2]) -> f64 {
    match hull.len() {
        0 => f64::INFINITY,
        1 => dist(p, hull[0]),
        2 => segment_distance(p, hull[0], hull[1]),
        n => {
            let inside = (0..n).all(|i| cross(sub(hull[(i + 1) % n], hull[i]), sub(p, hull[i])) >= 0.0);
            if inside {
                return 0.0;
            }
            (0..n)
                .map(|i| segment_distance(p, hull[i], hull[(i + 1) % n]))
                .fold(f64::INFINITY, f64::min)
        }
    }
}

/// Axis-aligned bounding box `(min, max)`.
pub fn bounding_box(points: &[P2]) -> (P2, P2) {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for p in points {
        for k in 0..2 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    (lo, hi)
}

/// Parameter interval `{t : hull_distance(origin + t·dir) <= radius}`, or
/// `None` when the line misses that neighborhood.
pub fn line_chord(origin: P2, dir: P2, hull: &[P2], radius: f64) -> Option<(f64, f64)> {
    let at = |t: f64| hull_distance([origin[0] + t * dir[0], origin[1] + t * dir[1]], hull);
    let (lo, hi) = bounding_box(hull);
    let extent = dist(lo, hi) + 2.0 * radius + dist(origin, lo);
    let len = dot(dir, dir).sqrt();
    if len == 0.0 {
        return None;
    }
    let span = 2.0 * extent / len;
    let (mut a, mut b) = (-span, span);
    for _ in 0..200 {
        let m1 = a + (b - a) / 3.0;
        let m2 = b - (b - a) / 3.0;
        if at(m1) <= at(m2) {
            b = m2;
        } else {
            a = m1;
        }
    }
    let best = 0.5 * (a + b);
    if at(best) > radius {
        return None;
    }
    let edge = |mut inside: f64, mut outside: f64| {
        for _ in 0..200 {
            let mid = 0.5 * (inside + outside);
            if at(mid) <= radius {
                inside = mid;
            } else {
                outside = mid;
            }
        }
        inside
    };
    Some((edge(best, -span), edge(best, span)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_hull_drops_interior_point() {
        let h = convex_hull(&[[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0], [0.5, 0.5]]);
        assert_eq!(h.len(), 4);
        assert_eq!(hull_distance([0.5, 0.5], &h), 0.0);
        assert!((hull_distance([2.0, 0.5], &h) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn collinear_hull_is_segment() {
        let h = convex_hull(&[[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]]);
        assert_eq!(h, vec![[0.0, 0.0], [2.0, 0.0]]);
        assert!((hull_distance([1.0, 0.3], &h) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn chord_through_square() {
        let h = convex_hull(&[[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]);
        let (a, b) = line_chord([0.5, 0.0], [0.0, 1.0], &h, 0.0).unwrap();
        assert!(a.abs() < 1e-9 && (b - 1.0).abs() < 1e-9);
        assert!(line_chord([3.0, 0.0], [0.0, 1.0], &h, 0.5).is_none());
    }
}
