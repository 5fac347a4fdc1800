use std::f64::consts::TAU;
use std::fmt::Write;

use nalgebra::Vector3;
use rayon::prelude::*;
use reflector_core::reflector::{GeneralizedReflector, InterpolatedReflector};
use reflector_core::sphere::Direction;

/// Patch surfaces sampled on a `resolution` by `2 resolution` grid about the
/// aperture's bounding cap, one OBJ object per patch, plus the wall panels
/// when given. Each grid cell whose corners all select the same patch
/// becomes two triangles of that patch.
pub fn write_obj(r: &GeneralizedReflector, walls: Option<&InterpolatedReflector>, resolution: usize) -> String {
    let (axis, level) = r.aperture().bounding_cap().unwrap_or((Direction::Z, -1.0));
    let rows = resolution;
    let cols = 2 * resolution;
    // the last row sits on the axis so the mesh closes at the pole
    let node = |i: usize, j: usize| {
        let u = level + (1.0 - level) * i as f64 / (rows - 1) as f64;
        Direction::from_axis_coords(&axis, u.min(1.0), TAU * j as f64 / cols as f64)
    };
    let nodes: Vec<(Direction, Option<usize>)> = (0..rows * cols)
        .into_par_iter()
        .map(|k| {
            let m = node(k / cols, k % cols);
            (m, r.rho(&m).map(|s| s.patch))
        })
        .collect();
    let at = |i: usize, j: usize| &nodes[i * cols + j % cols];

    let mut out = String::new();
    let mut next_index = 1usize;
    for (p, patch) in r.patches().iter().enumerate() {
        let mut index = vec![0usize; rows * cols];
        let mut verts: Vec<Vector3<f64>> = Vec::new();
        let mut faces: Vec<[usize; 3]> = Vec::new();
        let vertex = |i: usize, j: usize, index: &mut Vec<usize>, verts: &mut Vec<Vector3<f64>>| {
            let k = i * cols + j % cols;
            if index[k] == 0 {
                verts.push(patch.ellipsoid().point(&nodes[k].0));
                index[k] = next_index + verts.len() - 1;
            }
            index[k]
        };
        for i in 0..rows - 1 {
            for j in 0..cols {
                let corners = [(i, j), (i, j + 1), (i + 1, j + 1), (i + 1, j)];
                if corners.iter().all(|&(a, b)| at(a, b).1 == Some(p)) {
                    let v: Vec<usize> = corners
                        .iter()
                        .map(|&(a, b)| vertex(a, b, &mut index, &mut verts))
                        .collect();
                    faces.push([v[0], v[1], v[2]]);
                    faces.push([v[0], v[2], v[3]]);
                }
            }
        }
        let _ = writeln!(out, "o patch_{p}");
        for v in &verts {
            let _ = writeln!(out, "v {} {} {}", v.x, v.y, v.z);
        }
        for f in &faces {
            let _ = writeln!(out, "f {} {} {}", f[0], f[1], f[2]);
        }
        next_index += verts.len();
    }
    if let Some(ir) = walls {
        let _ = writeln!(out, "o walls");
        for w in &ir.walls {
            let [g0, g1] = &w.generators;
            for v in [g0.inner_point(), g0.outer_point(), g1.outer_point(), g1.inner_point()] {
                let _ = writeln!(out, "v {} {} {}", v.x, v.y, v.z);
            }
            let b = next_index;
            let _ = writeln!(out, "f {} {} {} {}", b, b + 1, b + 2, b + 3);
            next_index += 4;
        }
    }
    out
}
