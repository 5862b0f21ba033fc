//! Voxel-face surface extraction and binary STL output.

use std::path::Path;

use byteorder::{ByteOrder, LittleEndian};

use crate::error::{Error, Result};
use crate::volume::Mask;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Triangle {
    pub normal: [f32; 3],
    pub vertices: [[f32; 3]; 3],
}

impl Triangle {
    pub fn area(&self) -> f64 {
        let [a, b, c] = self.vertices.map(|v| v.map(f64::from));
        let u = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
        let v = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
        let n = [
            u[1] * v[2] - u[2] * v[1],
            u[2] * v[0] - u[0] * v[2],
            u[0] * v[1] - u[1] * v[0],
        ];
        0.5 * (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt()
    }
}

/// Two triangles per foreground face that touches background or the grid
/// boundary. Coordinates are in mm with voxel centres at `index * spacing`,
/// windings counter-clockwise seen from outside.
pub fn extract_surface_mesh(mask: &Mask) -> Result<Vec<Triangle>> {
    if mask.is_empty() {
        return Err(Error::Degenerate("cannot extract a surface from an empty mask".into()));
    }
    let dims = mask.dims();
    let ext = dims.as_array();
    let sp = mask.spacing().as_array();
    let mut tris = Vec::new();

    for i in mask.foreground() {
        let c = dims.coords(i);
        let centre = [0, 1, 2].map(|a| c[a] as f64 * sp[a]);
        for axis in 0..3 {
            for sign in [-1isize, 1] {
                let n = c[axis] as isize + sign;
                let exposed = if n < 0 || n >= ext[axis] as isize {
                    true
                } else {
                    let mut nc = c;
                    nc[axis] = n as usize;
                    !mask.get(nc)
                };
                if exposed {
                    push_face(&mut tris, centre, sp, axis, sign);
                }
            }
        }
    }
    Ok(tris)
}

fn push_face(tris: &mut Vec<Triangle>, centre: [f64; 3], sp: [f64; 3], axis: usize, sign: isize) {
    let u = (axis + 1) % 3;
    let v = (axis + 2) % 3;
    let corner = |su: f64, sv: f64| {
        let mut p = centre;
        p[axis] += sign as f64 * 0.5 * sp[axis];
        p[u] += su * 0.5 * sp[u];
        p[v] += sv * 0.5 * sp[v];
        p.map(|x| x as f32)
    };
    // (u, v, axis) is right-handed, so this order faces +axis.
    let mut quad = [corner(-1.0, -1.0), corner(1.0, -1.0), corner(1.0, 1.0), corner(-1.0, 1.0)];
    if sign < 0 {
        quad.reverse();
    }
    let mut normal = [0f32; 3];
    normal[axis] = sign as f32;
    tris.push(Triangle {
        normal,
        vertices: [quad[0], quad[1], quad[2]],
    });
    tris.push(Triangle {
        normal,
        vertices: [quad[0], quad[2], quad[3]],
    });
}

pub fn surface_area(mesh: &[Triangle]) -> f64 {
    mesh.iter().map(Triangle::area).sum()
}

pub fn encode_stl(mesh: &[Triangle]) -> Vec<u8> {
    let mut buf = vec![0u8; 84 + 50 * mesh.len()];
    let title = b"biliseg voxel surface (mm)";
    buf[..title.len()].copy_from_slice(title);
    LittleEndian::write_u32(&mut buf[80..84], mesh.len() as u32);
    for (t, chunk) in mesh.iter().zip(buf[84..].chunks_exact_mut(50)) {
        let floats = t.normal.iter().chain(t.vertices.iter().flatten());
        for (k, f) in floats.enumerate() {
            LittleEndian::write_f32(&mut chunk[4 * k..], *f);
        }
        // trailing u16 attribute count stays zero
    }
    buf
}

pub fn write_stl(mesh: &[Triangle], path: impl AsRef<Path>) -> Result<()> {
    super::write_atomic(path.as_ref(), &encode_stl(mesh))
}
