//! Synthetic branching-tube phantoms with exact ground truth.
//!
//! Random draws come from ChaCha8 (`rand_chacha::ChaCha8Rng`) seeded with
//! `rng_seed`: stream 0 drives the tree geometry, stream 1 the voxel noise.
//! Trees are generated depth-first, children in creation order, and each node
//! consumes draws in this order: branch decision, then either
//! (roll angle) for a bifurcation or (roll angle, jitter fraction) for a
//! straight continuation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{Dims, Mask, Spacing, Volume};

type Vec3 = [f64; 3];

fn default_jitter() -> f64 {
    10.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomParams {
    pub dims: Dims,
    pub spacing: Spacing,
    /// Start of the root segment, mm.
    pub root: Vec3,
    pub root_direction: Vec3,
    pub segment_length: f64,
    pub radius_root: f64,
    /// Radius factor applied to both children at a bifurcation.
    pub radius_taper: f64,
    pub branch_probability: f64,
    /// Angle between the two child directions at a bifurcation, degrees.
    pub branch_angle: f64,
    /// Largest deviation of a straight continuation, degrees.
    #[serde(default = "default_jitter")]
    pub jitter_angle: f64,
    pub max_depth: usize,
    pub fg_mean: f64,
    pub bg_mean: f64,
    pub noise_std: f64,
    pub rng_seed: u64,
}

impl PhantomParams {
    pub fn validate(&self) -> Result<()> {
        Dims::new(self.dims.nx, self.dims.ny, self.dims.nz)?;
        self.spacing.validate()?;
        let bad = |msg: String| Err(Error::Config(msg));
        if norm(self.root_direction) == 0.0 || !self.root_direction.iter().all(|v| v.is_finite()) {
            return bad("root_direction must be a finite non-zero vector".into());
        }
        if !(self.segment_length > 0.0) {
            return bad(format!("segment_length must be > 0, got {}", self.segment_length));
        }
        if !(self.radius_root >= self.spacing.max_component() / 2.0) {
            return bad(format!(
                "radius_root {} is below half the largest voxel size {}",
                self.radius_root,
                self.spacing.max_component()
            ));
        }
        if !(self.radius_taper > 0.0 && self.radius_taper <= 1.0) {
            return bad(format!("radius_taper must lie in (0, 1], got {}", self.radius_taper));
        }
        if !(0.0..=1.0).contains(&self.branch_probability) {
            return bad(format!(
                "branch_probability must lie in [0, 1], got {}",
                self.branch_probability
            ));
        }
        if !(self.fg_mean > self.bg_mean) {
            return bad(format!(
                "fg_mean {} must exceed bg_mean {}",
                self.fg_mean, self.bg_mean
            ));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad(format!("noise_std must be >= 0, got {}", self.noise_std));
        }
        if !(self.branch_angle.is_finite() && self.jitter_angle.is_finite()) {
            return bad("angles must be finite".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start: Vec3,
    pub end: Vec3,
    pub radius: f64,
    pub parent: Option<usize>,
    pub depth: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CenterlineTree {
    pub segments: Vec<Segment>,
}

impl CenterlineTree {
    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    /// Number of segments with exactly two children.
    pub fn bifurcations(&self) -> usize {
        let mut children = vec![0usize; self.segments.len()];
        for s in &self.segments {
            if let Some(p) = s.parent {
                children[p] += 1;
            }
        }
        children.iter().filter(|&&c| c == 2).count()
    }
}

fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}
fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}
fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}
fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}
fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}
fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}
fn normalize(a: Vec3) -> Vec3 {
    scale(a, 1.0 / norm(a))
}

/// Unit vector perpendicular to unit `d`, at `roll` radians around it.
fn perpendicular(d: Vec3, roll: f64) -> Vec3 {
    let helper = if d[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    let u = normalize(cross(d, helper));
    let v = cross(d, u);
    add(scale(u, roll.cos()), scale(v, roll.sin()))
}

/// Tilts unit `d` by `angle` radians towards unit `perp`.
fn tilt(d: Vec3, perp: Vec3, angle: f64) -> Vec3 {
    normalize(add(scale(d, angle.cos()), scale(perp, angle.sin())))
}

pub fn generate_tree(params: &PhantomParams) -> Result<CenterlineTree> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.rng_seed);
    let mut tree = CenterlineTree::default();
    let half_branch = params.branch_angle.to_radians() / 2.0;
    let jitter = params.jitter_angle.to_radians();

    // (start, direction, radius, depth, parent)
    let mut stack = vec![(params.root, normalize(params.root_direction), params.radius_root, 0usize, None)];
    while let Some((start, dir, radius, depth, parent)) = stack.pop() {
        let end = add(start, scale(dir, params.segment_length));
        let id = tree.segments.len();
        tree.segments.push(Segment { start, end, radius, parent, depth });
        if depth == params.max_depth {
            continue;
        }
        if rng.random::<f64>() < params.branch_probability {
            let axis = perpendicular(dir, rng.random::<f64>() * std::f64::consts::TAU);
            let child_r = radius * params.radius_taper;
            let left = tilt(dir, axis, half_branch);
            let right = tilt(dir, scale(axis, -1.0), half_branch);
            // pushed in reverse so the left child is expanded first
            stack.push((end, right, child_r, depth + 1, Some(id)));
            stack.push((end, left, child_r, depth + 1, Some(id)));
        } else {
            let axis = perpendicular(dir, rng.random::<f64>() * std::f64::consts::TAU);
            let next = tilt(dir, axis, jitter * rng.random::<f64>());
            stack.push((end, next, radius, depth + 1, Some(id)));
        }
    }
    Ok(tree)
}

/// Squared distance from `p` to the segment `[a, b]`.
pub fn point_segment_dist2(p: Vec3, a: Vec3, b: Vec3) -> f64 {
    let ab = sub(b, a);
    let ap = sub(p, a);
    let len2 = dot(ab, ab);
    let t = if len2 > 0.0 { (dot(ap, ab) / len2).clamp(0.0, 1.0) } else { 0.0 };
    let q = add(a, scale(ab, t));
    let d = sub(p, q);
    dot(d, d)
}

/// Voxels whose centre lies within some segment's radius of that segment
/// (distance equal to the radius counts as inside).
pub fn rasterize_tree(tree: &CenterlineTree, dims: Dims, spacing: Spacing) -> Result<Mask> {
    spacing.validate()?;
    if tree.is_empty() {
        return Err(Error::Degenerate("tree has no segments".into()));
    }
    let sp = spacing.as_array();
    let ext = dims.as_array();
    // Inclusive voxel ranges per segment, or None if entirely outside.
    let ranges: Vec<Option<[(usize, usize); 3]>> = tree
        .segments
        .iter()
        .map(|s| {
            let mut r = [(0usize, 0usize); 3];
            for a in 0..3 {
                let lo = (s.start[a].min(s.end[a]) - s.radius) / sp[a];
                let hi = (s.start[a].max(s.end[a]) + s.radius) / sp[a];
                // one voxel of slack so rounding never drops a boundary voxel
                let lo = (lo.floor() - 1.0).max(0.0);
                let hi = (hi.ceil() + 1.0).min(ext[a] as f64 - 1.0);
                if hi < lo {
                    return None;
                }
                r[a] = (lo as usize, hi as usize);
            }
            Some(r)
        })
        .collect();

    let mut data = vec![false; dims.len()];
    data.par_chunks_mut(dims.slice_len())
        .enumerate()
        .for_each(|(z, slice)| {
            for (s, r) in tree.segments.iter().zip(&ranges) {
                let Some(r) = r else { continue };
                if z < r[2].0 || z > r[2].1 {
                    continue;
                }
                let r2 = s.radius * s.radius;
                for y in r[1].0..=r[1].1 {
                    for x in r[0].0..=r[0].1 {
                        let cell = &mut slice[x + y * dims.nx];
                        if *cell {
                            continue;
                        }
                        let p = [x as f64 * sp[0], y as f64 * sp[1], z as f64 * sp[2]];
                        if point_segment_dist2(p, s.start, s.end) <= r2 {
                            *cell = true;
                        }
                    }
                }
            }
        });
    let mask = Mask::new(dims, spacing, data)?;
    if mask.is_empty() {
        return Err(Error::Degenerate("tree does not intersect the grid".into()));
    }
    Ok(mask)
}

/// Two-class Gaussian intensities clamped to [0, 255].
pub fn render_intensities(gt: &Mask, params: &PhantomParams) -> Result<Volume> {
    let mut rng = ChaCha8Rng::seed_from_u64(params.rng_seed);
    rng.set_stream(1);
    let normal = |mean: f64| {
        Normal::new(mean, params.noise_std)
            .map_err(|e| Error::Config(format!("invalid noise model: {e}")))
    };
    let fg = normal(params.fg_mean)?;
    let bg = normal(params.bg_mean)?;
    let data = gt
        .data()
        .iter()
        .map(|&inside| {
            let v = if inside { fg.sample(&mut rng) } else { bg.sample(&mut rng) };
            v.clamp(0.0, 255.0) as f32
        })
        .collect();
    Volume::new(gt.dims(), gt.spacing(), data)
}

#[derive(Debug, Clone)]
pub struct Phantom {
    pub tree: CenterlineTree,
    pub truth: Mask,
    pub volume: Volume,
}

pub fn generate_phantom(params: &PhantomParams) -> Result<Phantom> {
    let tree = generate_tree(params)?;
    let truth = rasterize_tree(&tree, params.dims, params.spacing)?;
    let volume = render_intensities(&truth, params)?;
    Ok(Phantom { tree, truth, volume })
}
