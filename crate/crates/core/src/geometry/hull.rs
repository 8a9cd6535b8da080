//! Incremental 3D convex hull, used to triangulate points sampled on convex
//! surfaces (all input points must end up as hull vertices).

use std::collections::HashMap;

use super::surface::Vec3;
use crate::error::{Error, Result};

/// Outward-oriented triangles of the convex hull of `points`.
///
/// Fails when the points are degenerate (coplanar) or when some point lies
/// strictly inside the hull, since callers rely on every point being a vertex.
pub fn convex_hull(points: &[Vec3]) -> Result<Vec<[usize; 3]>> {
    let n = points.len();
    if n < 4 {
        return Err(Error::InvalidInput("hull needs at least 4 points".into()));
    }
    let scale = points.iter().map(|p| p.norm()).fold(0.0, f64::max).max(1e-300);
    let eps = 1e-12 * scale;

    let (i0, i1, i2, i3) = initial_simplex(points, eps)?;
    let interior = (points[i0] + points[i1] + points[i2] + points[i3]) / 4.0;

    let mut faces: Vec<Option<[usize; 3]>> = Vec::new();
    let mut edge_face: HashMap<(usize, usize), usize> = HashMap::new();
    let push = |f: [usize; 3], faces: &mut Vec<Option<[usize; 3]>>, ef: &mut HashMap<(usize, usize), usize>| {
        let id = faces.len();
        faces.push(Some(f));
        for k in 0..3 {
            ef.insert((f[k], f[(k + 1) % 3]), id);
        }
    };
    for tri in [[i0, i1, i2], [i0, i1, i3], [i0, i2, i3], [i1, i2, i3]] {
        let [a, b, c] = tri;
        let nrm = (points[b] - points[a]).cross(&(points[c] - points[a]));
        let f = if nrm.dot(&(points[a] - interior)) > 0.0 { [a, b, c] } else { [a, c, b] };
        push(f, &mut faces, &mut edge_face);
    }

    let mut visible = Vec::new();
    for p in 0..n {
        if [i0, i1, i2, i3].contains(&p) {
            continue;
        }
        visible.clear();
        for (id, f) in faces.iter().enumerate() {
            if let Some([a, b, c]) = *f {
                let nrm = (points[b] - points[a]).cross(&(points[c] - points[a]));
                let len = nrm.norm();
                if len > 0.0 && nrm.dot(&(points[p] - points[a])) / len > eps {
                    visible.push(id);
                }
            }
        }
        if visible.is_empty() {
            return Err(Error::InvalidInput(format!("point {p} lies inside the hull")));
        }
        let mut horizon = Vec::new();
        for &id in &visible {
            let f = faces[id].expect("visible face is live");
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                let twin = edge_face[&(b, a)];
                if !visible.contains(&twin) {
                    horizon.push((a, b));
                }
            }
        }
        for &id in &visible {
            let f = faces[id].take().expect("visible face is live");
            for k in 0..3 {
                edge_face.remove(&(f[k], f[(k + 1) % 3]));
            }
        }
        for (a, b) in horizon {
            push([a, b, p], &mut faces, &mut edge_face);
        }
    }
    Ok(faces.into_iter().flatten().collect())
}

fn initial_simplex(points: &[Vec3], eps: f64) -> Result<(usize, usize, usize, usize)> {
    let i0 = 0;
    let i1 = (1..points.len())
        .max_by(|&a, &b| {
            let da = (points[a] - points[i0]).norm();
            let db = (points[b] - points[i0]).norm();
            da.total_cmp(&db)
        })
        .unwrap();
    let dir = (points[i1] - points[i0]).normalize();
    let i2 = (0..points.len())
        .max_by(|&a, &b| {
            let ra = (points[a] - points[i0]).cross(&dir).norm();
            let rb = (points[b] - points[i0]).cross(&dir).norm();
            ra.total_cmp(&rb)
        })
        .unwrap();
    let nrm = (points[i1] - points[i0]).cross(&(points[i2] - points[i0]));
    if nrm.norm() <= eps {
        return Err(Error::InvalidInput("points are collinear".into()));
    }
    let nrm = nrm.normalize();
    let i3 = (0..points.len())
        .max_by(|&a, &b| {
            let ha = nrm.dot(&(points[a] - points[i0])).abs();
            let hb = nrm.dot(&(points[b] - points[i0])).abs();
            ha.total_cmp(&hb)
        })
        .unwrap();
    if nrm.dot(&(points[i3] - points[i0])).abs() <= eps {
        return Err(Error::InvalidInput("points are coplanar".into()));
    }
    Ok((i0, i1, i2, i3))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::primitives::fibonacci_sphere_points;
    use crate::geometry::surface::Surface;

    #[test]
    fn sphere_hull_is_closed_genus_zero() {
        for n in [50, 333, 901] {
            let pts = fibonacci_sphere_points(n);
            let faces = convex_hull(&pts).unwrap();
            assert_eq!(faces.len(), 2 * n - 4);
            let s = Surface::new("h", pts, faces).unwrap();
            assert_eq!(s.euler_characteristic(), 2);
            assert!(s.is_manifold());
            let sphere = 4.0 * std::f64::consts::PI;
            assert!(s.total_area() < sphere && s.total_area() > sphere * (1.0 - 4.0 / n as f64));
        }
    }

    #[test]
    fn faces_point_outward() {
        let pts = fibonacci_sphere_points(120);
        for [a, b, c] in convex_hull(&pts).unwrap() {
            let nrm = (pts[b] - pts[a]).cross(&(pts[c] - pts[a]));
            assert!(nrm.dot(&pts[a]) > 0.0);
        }
    }

    #[test]
    fn interior_point_is_an_error() {
        let mut pts = fibonacci_sphere_points(40);
        pts.push(Vec3::zeros());
        assert!(convex_hull(&pts).is_err());
    }
}
