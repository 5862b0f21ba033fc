//! Overlap, distance and volume metrics between a predicted mask and ground
//! truth, plus connected-component proxies for topological errors.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{connected_components, Connectivity, Dims, Mask, Spacing};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub dsc: f64,
    pub hd_mm: f64,
    pub hd_directed_pred_to_gt: f64,
    pub hd_directed_gt_to_pred: f64,
    pub rvd: f64,
    pub outliers: usize,
    pub missed_components: usize,
    pub false_communicating: usize,
    pub false_non_communicating: usize,
}

/// Component-overlap proxies for expert topology review. These are automated
/// counts, not a reproduction of a human reader's judgement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TopologyCounts {
    /// Predicted components touching no ground-truth voxel.
    pub outliers: usize,
    /// Ground-truth components touching no predicted voxel.
    pub missed_components: usize,
    /// Extra ground-truth components bridged by a single predicted component.
    pub false_communicating: usize,
    /// Extra predicted fragments covering a single ground-truth component.
    pub false_non_communicating: usize,
}

pub fn dice(pred: &Mask, gt: &Mask) -> Result<f64> {
    pred.check_same_geometry(gt)?;
    let (mut a, mut b, mut both) = (0usize, 0usize, 0usize);
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        a += p as usize;
        b += g as usize;
        both += (p && g) as usize;
    }
    if a + b == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * both as f64 / (a + b) as f64)
}

pub fn rvd(pred: &Mask, gt: &Mask) -> Result<f64> {
    pred.check_same_geometry(gt)?;
    let y = gt.count();
    if y == 0 {
        return Err(Error::Degenerate("relative volume difference needs a non-empty reference".into()));
    }
    let x = pred.count();
    Ok(x.abs_diff(y) as f64 / y as f64)
}

/// Euclidean distance (mm) from every voxel centre to the nearest foreground
/// voxel centre of the source mask.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceField {
    dims: Dims,
    spacing: Spacing,
    distance: Vec<f64>,
}

impl DistanceField {
    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn distances(&self) -> &[f64] {
        &self.distance
    }

    pub fn at(&self, idx: [usize; 3]) -> f64 {
        self.distance[self.dims.index(idx)]
    }
}

/// Exact anisotropic Euclidean distance transform using three separable
/// passes of the lower-envelope-of-parabolas algorithm on squared distances.
pub fn distance_transform(mask: &Mask) -> Result<DistanceField> {
    if mask.is_empty() {
        return Err(Error::Degenerate("distance transform of an empty mask".into()));
    }
    let dims = mask.dims();
    let sp = mask.spacing();
    let (nx, ny, nz) = (dims.nx, dims.ny, dims.nz);
    let plane = dims.slice_len();

    let mut sq: Vec<f64> = mask
        .data()
        .iter()
        .map(|&b| if b { 0.0 } else { f64::INFINITY })
        .collect();

    // x and y passes stay inside one z-slice.
    let w2x = sp.dx * sp.dx;
    let w2y = sp.dy * sp.dy;
    sq.par_chunks_mut(plane).for_each(|slice| {
        let mut env = Envelope::with_capacity(nx.max(ny));
        let mut line = vec![0.0; nx.max(ny)];
        for row in slice.chunks_mut(nx) {
            line[..nx].copy_from_slice(row);
            env.transform(&line[..nx], w2x, row);
        }
        let mut out = vec![0.0; ny];
        for x in 0..nx {
            for y in 0..ny {
                line[y] = slice[x + y * nx];
            }
            env.transform(&line[..ny], w2y, &mut out);
            for y in 0..ny {
                slice[x + y * nx] = out[y];
            }
        }
    });

    if nz > 1 {
        let w2z = sp.dz * sp.dz;
        let src = &sq;
        let columns: Vec<Vec<f64>> = (0..plane)
            .into_par_iter()
            .map_init(
                || Envelope::with_capacity(nz),
                |env, xy| {
                    let line: Vec<f64> = (0..nz).map(|z| src[xy + z * plane]).collect();
                    let mut out = vec![0.0; nz];
                    env.transform(&line, w2z, &mut out);
                    out
                },
            )
            .collect();
        for (xy, col) in columns.iter().enumerate() {
            for (z, &v) in col.iter().enumerate() {
                sq[xy + z * plane] = v;
            }
        }
    }

    Ok(DistanceField {
        dims,
        spacing: sp,
        distance: sq.into_iter().map(f64::sqrt).collect(),
    })
}

/// Scratch buffers for the 1D squared distance transform.
struct Envelope {
    sites: Vec<usize>,
    bounds: Vec<f64>,
}

impl Envelope {
    fn with_capacity(n: usize) -> Self {
        Envelope {
            sites: Vec::with_capacity(n),
            bounds: Vec::with_capacity(n + 1),
        }
    }

    /// out[q] = min_p (w2 (q-p)^2 + f[p]), ignoring infinite f.
    fn transform(&mut self, f: &[f64], w2: f64, out: &mut [f64]) {
        self.sites.clear();
        self.bounds.clear();
        let key = |p: usize| f[p] + w2 * (p * p) as f64;
        for q in 0..f.len() {
            if !f[q].is_finite() {
                continue;
            }
            loop {
                let Some(&v) = self.sites.last() else {
                    self.sites.push(q);
                    self.bounds.push(f64::NEG_INFINITY);
                    break;
                };
                let s = (key(q) - key(v)) / (2.0 * w2 * (q - v) as f64);
                if s <= *self.bounds.last().unwrap() {
                    self.sites.pop();
                    self.bounds.pop();
                } else {
                    self.sites.push(q);
                    self.bounds.push(s);
                    break;
                }
            }
        }
        if self.sites.is_empty() {
            out.fill(f64::INFINITY);
            return;
        }
        let mut k = 0;
        for (q, o) in out.iter_mut().enumerate() {
            while k + 1 < self.sites.len() && self.bounds[k + 1] < q as f64 {
                k += 1;
            }
            let p = self.sites[k];
            let d = q.abs_diff(p) as f64;
            *o = w2 * d * d + f[p];
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HausdorffMode {
    /// From the first argument to the second.
    Directed,
    Symmetric,
}

/// max over voxels of `from` of the distance to the nearest voxel of `to`.
pub fn directed_hausdorff(from: &Mask, to: &Mask) -> Result<f64> {
    from.check_same_geometry(to)?;
    if from.is_empty() {
        return Err(Error::Degenerate("Hausdorff distance from an empty mask".into()));
    }
    let field = distance_transform(to)?;
    Ok(from
        .foreground()
        .map(|i| field.distance[i])
        .fold(0.0, f64::max))
}

pub fn hausdorff(pred: &Mask, gt: &Mask, mode: HausdorffMode) -> Result<f64> {
    let forward = directed_hausdorff(pred, gt)?;
    match mode {
        HausdorffMode::Directed => Ok(forward),
        HausdorffMode::Symmetric => Ok(forward.max(directed_hausdorff(gt, pred)?)),
    }
}

pub fn topology_report(pred: &Mask, gt: &Mask, conn: Connectivity) -> Result<TopologyCounts> {
    pred.check_same_geometry(gt)?;
    let lp = connected_components(pred, conn);
    let lg = connected_components(gt, conn);
    let pairs: BTreeSet<(u32, u32)> = lp
        .labels()
        .iter()
        .zip(lg.labels())
        .filter(|(&p, &g)| p != 0 && g != 0)
        .map(|(&p, &g)| (p, g))
        .collect();

    let mut per_pred = vec![0usize; lp.num_components() + 1];
    let mut per_gt = vec![0usize; lg.num_components() + 1];
    for &(p, g) in &pairs {
        per_pred[p as usize] += 1;
        per_gt[g as usize] += 1;
    }
    let tally = |touches: &[usize]| {
        let mut isolated = 0;
        let mut extra = 0;
        for &t in &touches[1..] {
            if t == 0 {
                isolated += 1;
            } else {
                extra += t - 1;
            }
        }
        (isolated, extra)
    };
    let (outliers, false_communicating) = tally(&per_pred);
    let (missed_components, false_non_communicating) = tally(&per_gt);
    Ok(TopologyCounts {
        outliers,
        missed_components,
        false_communicating,
        false_non_communicating,
    })
}

/// Full comparison of `pred` against `gt`. Both masks must be non-empty since
/// the Hausdorff distance is undefined otherwise.
pub fn evaluate(pred: &Mask, gt: &Mask, conn: Connectivity) -> Result<MetricsReport> {
    pred.check_same_geometry(gt)?;
    if gt.is_empty() {
        return Err(Error::Degenerate("ground-truth mask is empty".into()));
    }
    if pred.is_empty() {
        return Err(Error::Degenerate("predicted mask is empty".into()));
    }
    let fwd = directed_hausdorff(pred, gt)?;
    let bwd = directed_hausdorff(gt, pred)?;
    let topo = topology_report(pred, gt, conn)?;
    Ok(MetricsReport {
        dsc: dice(pred, gt)?,
        hd_mm: fwd.max(bwd),
        hd_directed_pred_to_gt: fwd,
        hd_directed_gt_to_pred: bwd,
        rvd: rvd(pred, gt)?,
        outliers: topo.outliers,
        missed_components: topo.missed_components,
        false_communicating: topo.false_communicating,
        false_non_communicating: topo.false_non_communicating,
    })
}
