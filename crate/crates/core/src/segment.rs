//! Segmentation methods: dual-threshold windowing, seeded flood fill and
//! Sauvola-criterion region growing, followed by component filtering.

use std::collections::{BTreeMap, VecDeque};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{connected_components, BBox, Connectivity, Dims, Mask, Volume};

pub type SeedPoint = [usize; 3];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdConfig {
    pub t_min: f64,
    pub t_max: f64,
    /// Replacement `(t_min, t_max)` keyed by z-slice index.
    #[serde(default, deserialize_with = "slice_keyed")]
    pub per_slice_overrides: BTreeMap<usize, (f64, f64)>,
}

// JSON object keys are strings; parse them as slice indices. Done by hand
// because the tagged `MethodConfig` buffers content and loses key typing.
fn slice_keyed<'de, D>(de: D) -> std::result::Result<BTreeMap<usize, (f64, f64)>, D::Error>
where
    D: serde::Deserializer<'de>,
{
    let raw = BTreeMap::<String, (f64, f64)>::deserialize(de)?;
    raw.into_iter()
        .map(|(k, v)| {
            k.trim()
                .parse::<usize>()
                .map(|z| (z, v))
                .map_err(|_| serde::de::Error::custom(format!("slice index {k:?} is not an integer")))
        })
        .collect()
}

impl ThresholdConfig {
    pub fn new(t_min: f64, t_max: f64) -> Self {
        ThresholdConfig {
            t_min,
            t_max,
            per_slice_overrides: BTreeMap::new(),
        }
    }

    pub fn validate(&self, dims: Dims) -> Result<()> {
        check_window(self.t_min, self.t_max, "global")?;
        for (&z, &(lo, hi)) in &self.per_slice_overrides {
            if z >= dims.nz {
                return Err(Error::Config(format!(
                    "threshold override for slice {z}, volume has {} slices",
                    dims.nz
                )));
            }
            check_window(lo, hi, &format!("slice {z}"))?;
        }
        Ok(())
    }

    fn window_for(&self, z: usize) -> (f64, f64) {
        self.per_slice_overrides
            .get(&z)
            .copied()
            .unwrap_or((self.t_min, self.t_max))
    }
}

fn check_window(lo: f64, hi: f64, what: &str) -> Result<()> {
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::Config(format!(
            "{what} threshold window needs t_min < t_max, got ({lo}, {hi})"
        )));
    }
    Ok(())
}

/// Voxels with `t_min < f <= t_max`, using the slice's override window where one exists.
pub fn dual_threshold(volume: &Volume, cfg: &ThresholdConfig) -> Result<Mask> {
    let dims = volume.dims();
    cfg.validate(dims)?;
    let mut data = vec![false; dims.len()];
    data.par_chunks_mut(dims.slice_len())
        .enumerate()
        .for_each(|(z, out)| {
            let (lo, hi) = cfg.window_for(z);
            for (o, &v) in out.iter_mut().zip(volume.slice(z)) {
                let v = v as f64;
                *o = lo < v && v <= hi;
            }
        });
    Mask::new(dims, volume.spacing(), data)
}

fn default_face6() -> Connectivity {
    Connectivity::Face6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FloodFillConfig {
    pub seed: SeedPoint,
    pub tolerance: f64,
    #[serde(default = "default_face6")]
    pub connectivity: Connectivity,
}

impl FloodFillConfig {
    pub fn validate(&self, dims: Dims) -> Result<()> {
        dims.checked_index(self.seed)?;
        if !(self.tolerance >= 0.0) {
            return Err(Error::Config(format!(
                "flood-fill tolerance must be >= 0, got {}",
                self.tolerance
            )));
        }
        Ok(())
    }
}

/// Connected set around the seed whose intensities lie within `tolerance`
/// of the seed intensity. Traversal uses an explicit stack.
pub fn flood_fill(volume: &Volume, cfg: &FloodFillConfig) -> Result<Mask> {
    let dims = volume.dims();
    cfg.validate(dims)?;
    let data = volume.data();
    let start = dims.index(cfg.seed);
    let reference = data[start] as f64;
    let within = |i: usize| (data[i] as f64 - reference).abs() <= cfg.tolerance;
    let offsets = cfg.connectivity.offsets();

    let mut filled = vec![false; dims.len()];
    let mut stack = vec![start];
    filled[start] = true;
    while let Some(v) = stack.pop() {
        for n in dims.neighbors(v, offsets) {
            if !filled[n] && within(n) {
                filled[n] = true;
                stack.push(n);
            }
        }
    }
    Mask::new(dims, volume.spacing(), filled)
}

fn default_k() -> f64 {
    0.3
}
fn default_r() -> f64 {
    100.0
}
fn default_window() -> usize {
    3
}
fn default_edge4() -> Connectivity {
    Connectivity::Edge4
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionGrowConfig {
    pub seed: SeedPoint,
    /// Sauvola sensitivity.
    #[serde(default = "default_k")]
    pub k: f64,
    /// Sauvola dynamic range of the standard deviation.
    #[serde(default = "default_r", rename = "R", alias = "r")]
    pub r: f64,
    #[serde(default = "default_window")]
    pub window: usize,
    #[serde(default = "default_edge4")]
    pub in_slice_connectivity: Connectivity,
    #[serde(default = "default_true")]
    pub propagate_slices: bool,
}

impl RegionGrowConfig {
    pub fn new(seed: SeedPoint) -> Self {
        RegionGrowConfig {
            seed,
            k: default_k(),
            r: default_r(),
            window: default_window(),
            in_slice_connectivity: default_edge4(),
            propagate_slices: true,
        }
    }

    pub fn validate(&self, dims: Dims) -> Result<()> {
        dims.checked_index(self.seed)?;
        if self.window < 3 || self.window % 2 == 0 {
            return Err(Error::Config(format!(
                "Sauvola window must be odd and >= 3, got {}",
                self.window
            )));
        }
        if !(self.r > 0.0 && self.r.is_finite()) {
            return Err(Error::Config(format!("Sauvola R must be > 0, got {}", self.r)));
        }
        if !(self.k > 0.0 && self.k < 1.0) {
            return Err(Error::Config(format!("Sauvola k must lie in (0, 1), got {}", self.k)));
        }
        if !self.in_slice_connectivity.is_planar() {
            return Err(Error::Config(format!(
                "in-slice connectivity must be edge4 or vertex8, got {:?}",
                self.in_slice_connectivity
            )));
        }
        Ok(())
    }
}

/// Sauvola threshold `m * (1 + k * (s / R - 1))` of a window, with `m` the
/// mean and `s` the population standard deviation of `window`.
pub fn sauvola_threshold(window: &[f64], k: f64, r: f64) -> f64 {
    let n = window.len() as f64;
    let mean = window.iter().sum::<f64>() / n;
    let var = window.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    mean * (1.0 + k * (var.sqrt() / r - 1.0))
}

/// Per-voxel Sauvola thresholds of one z-slice, windows clipped at the borders.
pub fn sauvola_slice(slice: &[f32], nx: usize, ny: usize, window: usize, k: f64, r: f64) -> Vec<f64> {
    let half = window / 2;
    let mut buf = Vec::with_capacity(window * window);
    let mut out = Vec::with_capacity(nx * ny);
    for y in 0..ny {
        let (y0, y1) = (y.saturating_sub(half), (y + half).min(ny - 1));
        for x in 0..nx {
            let (x0, x1) = (x.saturating_sub(half), (x + half).min(nx - 1));
            buf.clear();
            for wy in y0..=y1 {
                buf.extend(slice[wy * nx + x0..=wy * nx + x1].iter().map(|&v| v as f64));
            }
            out.push(sauvola_threshold(&buf, k, r));
        }
    }
    out
}

/// Voxels satisfying the growth criterion `f(v) >= T_sauvola(v)` on their own slice.
pub fn sauvola_acceptance(volume: &Volume, window: usize, k: f64, r: f64) -> Mask {
    let dims = volume.dims();
    let mut data = vec![false; dims.len()];
    data.par_chunks_mut(dims.slice_len())
        .enumerate()
        .for_each(|(z, out)| {
            let slice = volume.slice(z);
            let t = sauvola_slice(slice, dims.nx, dims.ny, window, k, r);
            for ((o, &v), th) in out.iter_mut().zip(slice).zip(t) {
                *o = v as f64 >= th;
            }
        });
    Mask::new(dims, volume.spacing(), data).expect("geometry taken from the volume")
}

/// Single-seed region growing. Each slice grows in-plane from its accepted
/// voxels until it converges; with `propagate_slices`, converged voxels then
/// seed the same (x, y) on the adjacent slices, until no slice changes.
/// The seed itself is always part of the result.
pub fn region_grow(volume: &Volume, cfg: &RegionGrowConfig) -> Result<Mask> {
    let dims = volume.dims();
    cfg.validate(dims)?;
    let accept = sauvola_acceptance(volume, cfg.window, cfg.k, cfg.r);
    let accept = accept.data();
    let offsets = cfg.in_slice_connectivity.offsets();
    let plane = dims.slice_len();

    let mut grown = vec![false; dims.len()];
    let mut pending: Vec<Vec<usize>> = vec![Vec::new(); dims.nz];
    let mut queued = vec![false; dims.nz];
    let mut slices = VecDeque::new();

    let start = dims.index(cfg.seed);
    grown[start] = true;
    pending[cfg.seed[2]].push(start);
    queued[cfg.seed[2]] = true;
    slices.push_back(cfg.seed[2]);

    while let Some(z) = slices.pop_front() {
        queued[z] = false;
        let mut stack = std::mem::take(&mut pending[z]);
        let mut converged = stack.clone();
        while let Some(v) = stack.pop() {
            for n in dims.neighbors(v, offsets) {
                if !grown[n] && accept[n] {
                    grown[n] = true;
                    stack.push(n);
                    converged.push(n);
                }
            }
        }
        if !cfg.propagate_slices {
            continue;
        }
        for &v in &converged {
            let below = (z > 0).then(|| (z - 1, v - plane));
            let above = (z + 1 < dims.nz).then(|| (z + 1, v + plane));
            for (nz, n) in [below, above].into_iter().flatten() {
                if !grown[n] && accept[n] {
                    grown[n] = true;
                    pending[nz].push(n);
                    if !queued[nz] {
                        queued[nz] = true;
                        slices.push_back(nz);
                    }
                }
            }
        }
    }
    Mask::new(dims, volume.spacing(), grown)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PostprocessPolicy {
    /// Keep the largest 26-connected component.
    KeepLargest,
    /// Keep every component containing one of the seeds.
    KeepSeeded(Vec<SeedPoint>),
    /// Drop components with fewer voxels than this.
    MinSize(usize),
}

/// Applies `policies` in order. Components are 26-connected.
pub fn postprocess(mask: &Mask, policies: &[PostprocessPolicy]) -> Result<Mask> {
    let mut current = mask.clone();
    for policy in policies {
        let labels = connected_components(&current, Connectivity::Vertex26);
        current = match policy {
            PostprocessPolicy::KeepLargest => labels.select(|l| l == 1),
            PostprocessPolicy::KeepSeeded(seeds) => {
                let dims = current.dims();
                let mut keep = vec![false; labels.num_components() + 1];
                for &s in seeds {
                    let i = dims.checked_index(s)?;
                    keep[labels.labels()[i] as usize] = true;
                }
                keep[0] = false;
                if !keep.iter().any(|&k| k) {
                    return Err(Error::Degenerate(
                        "no keep_seeded seed lies on the segmentation".into(),
                    ));
                }
                labels.select(|l| keep[l as usize])
            }
            PostprocessPolicy::MinSize(min) => {
                if *min == 0 {
                    return Err(Error::Config("min_size must be >= 1".into()));
                }
                let sizes = labels.sizes();
                labels.select(|l| sizes[l as usize - 1] >= *min)
            }
        };
    }
    Ok(current)
}

/// Method selection plus parameters, tagged by `"method"` in JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum MethodConfig {
    Threshold(ThresholdConfig),
    Floodfill(FloodFillConfig),
    Regiongrow(RegionGrowConfig),
}

impl MethodConfig {
    pub fn name(&self) -> &'static str {
        match self {
            MethodConfig::Threshold(_) => "threshold",
            MethodConfig::Floodfill(_) => "floodfill",
            MethodConfig::Regiongrow(_) => "regiongrow",
        }
    }

    pub fn validate(&self, dims: Dims) -> Result<()> {
        match self {
            MethodConfig::Threshold(c) => c.validate(dims),
            MethodConfig::Floodfill(c) => c.validate(dims),
            MethodConfig::Regiongrow(c) => c.validate(dims),
        }
    }

    /// Re-expresses grid coordinates relative to `bbox`. Overrides for slices
    /// outside the box are dropped; a seed outside it is an error.
    pub fn relative_to(&self, bbox: &BBox) -> Result<MethodConfig> {
        let shift = |s: SeedPoint| -> Result<SeedPoint> {
            if !bbox.contains(s) {
                return Err(Error::Config(format!(
                    "seed {s:?} lies outside the cropped region {:?}..{:?}",
                    bbox.min, bbox.max
                )));
            }
            Ok([s[0] - bbox.min[0], s[1] - bbox.min[1], s[2] - bbox.min[2]])
        };
        Ok(match self {
            MethodConfig::Threshold(c) => {
                let per_slice_overrides = c
                    .per_slice_overrides
                    .iter()
                    .filter(|(&z, _)| z >= bbox.min[2] && z <= bbox.max[2])
                    .map(|(&z, &w)| (z - bbox.min[2], w))
                    .collect();
                MethodConfig::Threshold(ThresholdConfig { per_slice_overrides, ..c.clone() })
            }
            MethodConfig::Floodfill(c) => MethodConfig::Floodfill(FloodFillConfig {
                seed: shift(c.seed)?,
                ..c.clone()
            }),
            MethodConfig::Regiongrow(c) => MethodConfig::Regiongrow(RegionGrowConfig {
                seed: shift(c.seed)?,
                ..c.clone()
            }),
        })
    }
}

pub fn segment(volume: &Volume, method: &MethodConfig) -> Result<Mask> {
    match method {
        MethodConfig::Threshold(c) => dual_threshold(volume, c),
        MethodConfig::Floodfill(c) => flood_fill(volume, c),
        MethodConfig::Regiongrow(c) => region_grow(volume, c),
    }
}
