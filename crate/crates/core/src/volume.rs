//! Volumetric data model: scalar volumes, binary masks, label maps and
//! voxel neighbourhoods.
//!
//! All grids use a linear layout with x fastest, then y, then z
//! (`index = ix + iy*nx + iz*nx*ny`), which is also the NIfTI on-disk order.

use std::collections::VecDeque;
use std::fmt;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Voxel size in millimetres along each axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spacing {
    pub dx: f64,
    pub dy: f64,
    pub dz: f64,
}

impl Spacing {
    pub fn new(dx: f64, dy: f64, dz: f64) -> Result<Self> {
        let s = Spacing { dx, dy, dz };
        s.validate()?;
        Ok(s)
    }

    pub const fn isotropic(d: f64) -> Self {
        Spacing { dx: d, dy: d, dz: d }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("dx", self.dx), ("dy", self.dy), ("dz", self.dz)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("spacing {name} must be > 0, got {v}")));
            }
        }
        Ok(())
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.dx, self.dy, self.dz]
    }

    pub fn max_component(&self) -> f64 {
        self.dx.max(self.dy).max(self.dz)
    }

    pub fn voxel_volume(&self) -> f64 {
        self.dx * self.dy * self.dz
    }
}

impl Default for Spacing {
    fn default() -> Self {
        Spacing::isotropic(1.0)
    }
}

// Spacing holds finite positive floats only, so equality is reflexive.
impl Eq for Spacing {}

/// Grid extent in voxels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
}

impl Dims {
    pub fn new(nx: usize, ny: usize, nz: usize) -> Result<Self> {
        if nx == 0 || ny == 0 || nz == 0 {
            return Err(Error::Config(format!(
                "dimensions must be positive, got ({nx}, {ny}, {nz})"
            )));
        }
        Ok(Dims { nx, ny, nz })
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn slice_len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn as_array(&self) -> [usize; 3] {
        [self.nx, self.ny, self.nz]
    }

    pub fn contains(&self, [ix, iy, iz]: [usize; 3]) -> bool {
        ix < self.nx && iy < self.ny && iz < self.nz
    }

    /// Linear index of `(ix, iy, iz)`. The caller guarantees bounds.
    #[inline]
    pub fn index(&self, [ix, iy, iz]: [usize; 3]) -> usize {
        ix + self.nx * (iy + self.ny * iz)
    }

    pub fn checked_index(&self, idx: [usize; 3]) -> Result<usize> {
        if self.contains(idx) {
            Ok(self.index(idx))
        } else {
            Err(Error::OutOfBounds {
                index: idx,
                dims: self.as_array(),
            })
        }
    }

    #[inline]
    pub fn coords(&self, linear: usize) -> [usize; 3] {
        let ix = linear % self.nx;
        let rest = linear / self.nx;
        [ix, rest % self.ny, rest / self.ny]
    }

    /// Neighbours of `linear` under `offsets` that fall inside the grid.
    #[inline]
    pub fn neighbors<'a>(
        &'a self,
        linear: usize,
        offsets: &'a [[isize; 3]],
    ) -> impl Iterator<Item = usize> + 'a {
        let c = self.coords(linear);
        offsets.iter().filter_map(move |d| {
            let x = c[0] as isize + d[0];
            let y = c[1] as isize + d[1];
            let z = c[2] as isize + d[2];
            if x < 0
                || y < 0
                || z < 0
                || x >= self.nx as isize
                || y >= self.ny as isize
                || z >= self.nz as isize
            {
                None
            } else {
                Some(self.index([x as usize, y as usize, z as usize]))
            }
        })
    }
}

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.nx, self.ny, self.nz)
    }
}

/// Millimetre position of a voxel centre. The lattice origin is voxel (0,0,0).
pub fn voxel_to_world(index: [usize; 3], dims: Dims, spacing: Spacing) -> Result<[f64; 3]> {
    dims.checked_index(index)?;
    Ok([
        index[0] as f64 * spacing.dx,
        index[1] as f64 * spacing.dy,
        index[2] as f64 * spacing.dz,
    ])
}

/// Voxel adjacency. The 2D variants stay within one z-slice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Connectivity {
    Face6,
    Edge18,
    Vertex26,
    Edge4,
    Vertex8,
}

impl Connectivity {
    pub fn offsets(self) -> &'static [[isize; 3]] {
        static TABLES: OnceLock<[Vec<[isize; 3]>; 5]> = OnceLock::new();
        let tables = TABLES.get_or_init(|| {
            let build = |keep: &dyn Fn(isize, isize, isize) -> bool| {
                let mut v = Vec::new();
                for dz in -1..=1isize {
                    for dy in -1..=1isize {
                        for dx in -1..=1isize {
                            if (dx, dy, dz) != (0, 0, 0) && keep(dx, dy, dz) {
                                v.push([dx, dy, dz]);
                            }
                        }
                    }
                }
                v
            };
            let l1 = |dx: isize, dy: isize, dz: isize| dx.abs() + dy.abs() + dz.abs();
            [
                build(&|x, y, z| l1(x, y, z) == 1),
                build(&|x, y, z| l1(x, y, z) <= 2),
                build(&|_, _, _| true),
                build(&|x, y, z| z == 0 && l1(x, y, z) == 1),
                build(&|_, _, z| z == 0),
            ]
        });
        let i = match self {
            Connectivity::Face6 => 0,
            Connectivity::Edge18 => 1,
            Connectivity::Vertex26 => 2,
            Connectivity::Edge4 => 3,
            Connectivity::Vertex8 => 4,
        };
        &tables[i]
    }

    pub fn is_planar(self) -> bool {
        matches!(self, Connectivity::Edge4 | Connectivity::Vertex8)
    }

    /// Parses the neighbour count form used on the command line (`6`, `18`, `26`, `4`, `8`).
    pub fn from_count(n: u32) -> Result<Self> {
        match n {
            6 => Ok(Connectivity::Face6),
            18 => Ok(Connectivity::Edge18),
            26 => Ok(Connectivity::Vertex26),
            4 => Ok(Connectivity::Edge4),
            8 => Ok(Connectivity::Vertex8),
            _ => Err(Error::Config(format!("unsupported connectivity {n}"))),
        }
    }
}

/// 3D scalar image with finite floating-point intensities.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    dims: Dims,
    spacing: Spacing,
    data: Vec<f32>,
}

impl Volume {
    pub fn new(dims: Dims, spacing: Spacing, data: Vec<f32>) -> Result<Self> {
        spacing.validate()?;
        if data.len() != dims.len() {
            return Err(Error::Geometry(format!(
                "volume {dims} needs {} intensities, got {}",
                dims.len(),
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!(
                "non-finite intensity at voxel {:?}",
                dims.coords(i)
            )));
        }
        Ok(Volume { dims, spacing, data })
    }

    pub fn filled(dims: Dims, spacing: Spacing, value: f32) -> Result<Self> {
        Volume::new(dims, spacing, vec![value; dims.len()])
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn get(&self, idx: [usize; 3]) -> f32 {
        self.data[self.dims.index(idx)]
    }

    pub fn slice(&self, z: usize) -> &[f32] {
        let n = self.dims.slice_len();
        &self.data[z * n..(z + 1) * n]
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    /// Sub-volume covered by `bbox`.
    pub fn crop(&self, bbox: &BBox) -> Result<Volume> {
        let data = crop_grid(&self.data, self.dims, bbox)?;
        Volume::new(bbox.dims(), self.spacing, data)
    }
}

/// Binary segmentation on the same lattice as the volume it was derived from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    dims: Dims,
    spacing: Spacing,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(dims: Dims, spacing: Spacing, data: Vec<bool>) -> Result<Self> {
        spacing.validate()?;
        if data.len() != dims.len() {
            return Err(Error::Geometry(format!(
                "mask {dims} needs {} voxels, got {}",
                dims.len(),
                data.len()
            )));
        }
        Ok(Mask { dims, spacing, data })
    }

    pub fn empty(dims: Dims, spacing: Spacing) -> Self {
        Mask {
            dims,
            spacing,
            data: vec![false; dims.len()],
        }
    }

    pub fn from_indices(dims: Dims, spacing: Spacing, voxels: &[[usize; 3]]) -> Result<Self> {
        let mut m = Mask::empty(dims, spacing);
        for &v in voxels {
            let i = dims.checked_index(v)?;
            m.data[i] = true;
        }
        Ok(m)
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [bool] {
        &mut self.data
    }

    pub fn get(&self, idx: [usize; 3]) -> bool {
        self.data[self.dims.index(idx)]
    }

    pub fn set(&mut self, idx: [usize; 3], value: bool) {
        let i = self.dims.index(idx);
        self.data[i] = value;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    pub fn foreground(&self) -> impl Iterator<Item = usize> + '_ {
        self.data
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
    }

    /// Errors unless both masks share dims and spacing.
    pub fn check_same_geometry(&self, other: &Mask) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::Geometry(format!(
                "dims differ: {} vs {}",
                self.dims, other.dims
            )));
        }
        if self.spacing != other.spacing {
            return Err(Error::Geometry(format!(
                "spacing differs: {:?} vs {:?}",
                self.spacing, other.spacing
            )));
        }
        Ok(())
    }

    pub fn crop(&self, bbox: &BBox) -> Result<Mask> {
        let data = crop_grid(&self.data, self.dims, bbox)?;
        Mask::new(bbox.dims(), self.spacing, data)
    }

    /// Places this mask, which covers `bbox`, back into a full grid of `dims`.
    pub fn embed(&self, bbox: &BBox, dims: Dims) -> Result<Mask> {
        if bbox.dims() != self.dims || !dims.contains(bbox.max) {
            return Err(Error::Geometry(format!(
                "cannot embed {} mask through box {:?}..{:?} into {dims}",
                self.dims, bbox.min, bbox.max
            )));
        }
        let mut out = Mask::empty(dims, self.spacing);
        for i in self.foreground() {
            let [x, y, z] = self.dims.coords(i);
            out.set([x + bbox.min[0], y + bbox.min[1], z + bbox.min[2]], true);
        }
        Ok(out)
    }
}

fn crop_grid<T: Copy>(data: &[T], dims: Dims, bbox: &BBox) -> Result<Vec<T>> {
    if !dims.contains(bbox.max) {
        return Err(Error::Geometry(format!(
            "box {:?}..{:?} exceeds {dims}",
            bbox.min, bbox.max
        )));
    }
    let out_dims = bbox.dims();
    let mut out = Vec::with_capacity(out_dims.len());
    for z in bbox.min[2]..=bbox.max[2] {
        for y in bbox.min[1]..=bbox.max[1] {
            let start = dims.index([bbox.min[0], y, z]);
            out.extend_from_slice(&data[start..start + out_dims.nx]);
        }
    }
    Ok(out)
}

/// Inclusive axis-aligned voxel box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBox {
    pub min: [usize; 3],
    pub max: [usize; 3],
}

impl BBox {
    pub fn dims(&self) -> Dims {
        Dims {
            nx: self.max[0] - self.min[0] + 1,
            ny: self.max[1] - self.min[1] + 1,
            nz: self.max[2] - self.min[2] + 1,
        }
    }

    pub fn contains(&self, idx: [usize; 3]) -> bool {
        (0..3).all(|a| idx[a] >= self.min[a] && idx[a] <= self.max[a])
    }
}

/// Tight box around the foreground, grown by `margin` voxels and clamped to the grid.
pub fn bbox_of(mask: &Mask, margin: usize) -> Result<BBox> {
    let dims = mask.dims();
    let mut min = [usize::MAX; 3];
    let mut max = [0usize; 3];
    let mut any = false;
    for i in mask.foreground() {
        any = true;
        let c = dims.coords(i);
        for a in 0..3 {
            min[a] = min[a].min(c[a]);
            max[a] = max[a].max(c[a]);
        }
    }
    if !any {
        return Err(Error::Degenerate("bounding box of an empty mask".into()));
    }
    let extent = dims.as_array();
    for a in 0..3 {
        min[a] = min[a].saturating_sub(margin);
        max[a] = max[a].saturating_add(margin).min(extent[a] - 1);
    }
    Ok(BBox { min, max })
}

/// Connected-component labels. Label 0 is background; labels `1..=K` are
/// ordered by decreasing component size, ties by smallest first voxel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    dims: Dims,
    spacing: Spacing,
    labels: Vec<u32>,
    sizes: Vec<usize>,
}

impl LabelMap {
    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn num_components(&self) -> usize {
        self.sizes.len()
    }

    /// Voxel count of each component, indexed by `label - 1`.
    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    /// Mask of the voxels whose label satisfies `keep`.
    pub fn select(&self, keep: impl Fn(u32) -> bool) -> Mask {
        let data = self.labels.iter().map(|&l| l != 0 && keep(l)).collect();
        Mask {
            dims: self.dims,
            spacing: self.spacing,
            data,
        }
    }
}

pub fn connected_components(mask: &Mask, conn: Connectivity) -> LabelMap {
    let dims = mask.dims();
    let offsets = conn.offsets();
    let fg = mask.data();
    let mut provisional = vec![0u32; dims.len()];
    let mut sizes: Vec<usize> = Vec::new();
    let mut queue = VecDeque::new();

    for start in 0..fg.len() {
        if !fg[start] || provisional[start] != 0 {
            continue;
        }
        let label = sizes.len() as u32 + 1;
        provisional[start] = label;
        queue.push_back(start);
        let mut size = 0usize;
        while let Some(v) = queue.pop_front() {
            size += 1;
            for n in dims.neighbors(v, offsets) {
                if fg[n] && provisional[n] == 0 {
                    provisional[n] = label;
                    queue.push_back(n);
                }
            }
        }
        sizes.push(size);
    }

    // Discovery order is already ascending by first voxel, so a stable sort
    // on size gives the documented tie-break.
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by(|&a, &b| sizes[b].cmp(&sizes[a]));
    let mut remap = vec![0u32; sizes.len() + 1];
    for (rank, &old) in order.iter().enumerate() {
        remap[old + 1] = rank as u32 + 1;
    }
    let labels = provisional.iter().map(|&l| remap[l as usize]).collect();
    let sizes = order.iter().map(|&o| sizes[o]).collect();

    LabelMap {
        dims,
        spacing: mask.spacing(),
        labels,
        sizes,
    }
}
