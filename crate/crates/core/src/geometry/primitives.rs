//! Reference shapes used by the corpus generator and the test suites.

use std::collections::HashMap;

use super::hull::convex_hull;
use super::surface::{Surface, Vec3};

/// Regular tetrahedron inscribed in the unit sphere, outward-oriented faces.
pub fn tetrahedron() -> Surface {
    let s = 1.0 / 3f64.sqrt();
    let v = vec![
        Vec3::new(s, s, s),
        Vec3::new(s, -s, -s),
        Vec3::new(-s, s, -s),
        Vec3::new(-s, -s, s),
    ];
    let f = vec![[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]];
    Surface::new("tetrahedron", v, f).expect("valid tetrahedron")
}

/// Icosahedron refined `subdivisions` times by edge midpoints, projected to a sphere.
///
/// Vertex counts are 12, 42, 162, 642, 2562, ...
pub fn icosphere(subdivisions: u32, radius: f64) -> Surface {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut verts: Vec<Vec3> = [
        (-1.0, t, 0.0),
        (1.0, t, 0.0),
        (-1.0, -t, 0.0),
        (1.0, -t, 0.0),
        (0.0, -1.0, t),
        (0.0, 1.0, t),
        (0.0, -1.0, -t),
        (0.0, 1.0, -t),
        (t, 0.0, -1.0),
        (t, 0.0, 1.0),
        (-t, 0.0, -1.0),
        (-t, 0.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| Vec3::new(x, y, z).normalize())
    .collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut midpoint: HashMap<(usize, usize), usize> = HashMap::new();
        let mut mid = |a: usize, b: usize, verts: &mut Vec<Vec3>| -> usize {
            let key = (a.min(b), a.max(b));
            *midpoint.entry(key).or_insert_with(|| {
                verts.push(((verts[a] + verts[b]) * 0.5).normalize());
                verts.len() - 1
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for &[a, b, c] in &faces {
            let ab = mid(a, b, &mut verts);
            let bc = mid(b, c, &mut verts);
            let ca = mid(c, a, &mut verts);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    let verts = verts.into_iter().map(|v| v * radius).collect();
    Surface::new(format!("icosphere{subdivisions}"), verts, faces).expect("valid icosphere")
}

/// `n` nearly uniform points on the unit sphere (golden-angle spiral).
pub fn fibonacci_sphere_points(n: usize) -> Vec<Vec3> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - (2.0 * i as f64 + 1.0) / n as f64;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let phi = golden * i as f64;
            Vec3::new(r * phi.cos(), r * phi.sin(), z)
        })
        .collect()
}

/// Closed genus-0 mesh of the unit sphere with exactly `n` vertices.
pub fn fibonacci_sphere(n: usize) -> Surface {
    let pts = fibonacci_sphere_points(n);
    let faces = convex_hull(&pts).expect("spiral points are in general position");
    Surface::new(format!("fibsphere{n}"), pts, faces).expect("valid hull mesh")
}

/// Triangulated `[0,1]^2` square in the z=0 plane with `cells` quads per side.
pub fn flat_grid(cells: usize) -> Surface {
    let stride = cells + 1;
    let mut v = Vec::with_capacity(stride * stride);
    for j in 0..stride {
        for i in 0..stride {
            v.push(Vec3::new(i as f64 / cells as f64, j as f64 / cells as f64, 0.0));
        }
    }
    let mut f = Vec::with_capacity(2 * cells * cells);
    for j in 0..cells {
        for i in 0..cells {
            let a = j * stride + i;
            let (b, c, d) = (a + 1, a + stride, a + stride + 1);
            f.push([a, b, d]);
            f.push([a, d, c]);
        }
    }
    Surface::new("grid", v, f).expect("valid grid")
}
