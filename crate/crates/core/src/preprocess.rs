//! Contrast normalisation and automatic cropping ahead of segmentation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{bbox_of, connected_components, BBox, Connectivity, Mask, Volume};

/// Output intensity range of [`percentile_stretch`] is `[0, STRETCH_MAX]`.
pub const STRETCH_MAX: f64 = 255.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessParams {
    pub p_low: f64,
    pub p_high: f64,
    pub crop_enabled: bool,
    pub crop_percentile: f64,
    pub crop_margin: usize,
}

impl Default for PreprocessParams {
    fn default() -> Self {
        PreprocessParams {
            p_low: 1.0,
            p_high: 99.0,
            crop_enabled: false,
            crop_percentile: 90.0,
            crop_margin: 5,
        }
    }
}

impl PreprocessParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.p_low && self.p_low < self.p_high && self.p_high <= 100.0) {
            return Err(Error::Config(format!(
                "percentiles must satisfy 0 <= p_low < p_high <= 100, got {} and {}",
                self.p_low, self.p_high
            )));
        }
        if !(0.0..=100.0).contains(&self.crop_percentile) {
            return Err(Error::Config(format!(
                "crop_percentile {} outside [0, 100]",
                self.crop_percentile
            )));
        }
        Ok(())
    }
}

/// Percentile `p` (0..=100) of ascending `sorted` by linear interpolation
/// between order statistics at rank `p/100 * (n-1)`.
pub fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of an empty sample");
    let rank = (p / 100.0).clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (sorted[hi] - sorted[lo]) * frac
    }
}

fn sorted_intensities(volume: &Volume) -> Vec<f64> {
    let mut v: Vec<f64> = volume.data().iter().map(|&x| x as f64).collect();
    v.sort_by(f64::total_cmp);
    v
}

/// Linear stretch of the `[p_low, p_high]` percentile window onto `[0, 255]`,
/// clamping outside it. A zero-width window maps everything to 0.
pub fn percentile_stretch(volume: &Volume, params: &PreprocessParams) -> Result<Volume> {
    params.validate()?;
    let sorted = sorted_intensities(volume);
    let lo = percentile_sorted(&sorted, params.p_low);
    let hi = percentile_sorted(&sorted, params.p_high);
    let data = if hi > lo {
        let scale = hi - lo;
        volume
            .data()
            .iter()
            .map(|&v| (((v as f64 - lo) / scale).clamp(0.0, 1.0) * STRETCH_MAX) as f32)
            .collect()
    } else {
        vec![0.0; volume.data().len()]
    };
    Volume::new(volume.dims(), volume.spacing(), data)
}

/// Crops to the bounding box (plus margin) of the largest bright structure:
/// voxels at or above the `crop_percentile` intensity, excluding the minimum
/// intensity level, grouped into 26-connected components.
pub fn dynamic_crop(volume: &Volume, params: &PreprocessParams) -> Result<(Volume, BBox)> {
    params.validate()?;
    let sorted = sorted_intensities(volume);
    let min = sorted[0];
    let threshold = percentile_sorted(&sorted, params.crop_percentile);
    let bright: Vec<bool> = volume
        .data()
        .iter()
        .map(|&v| {
            let v = v as f64;
            v >= threshold && v > min
        })
        .collect();
    if !bright.iter().any(|&b| b) {
        return Err(Error::Degenerate(
            "volume has no structure above its background level to crop to".into(),
        ));
    }
    let mask = Mask::new(volume.dims(), volume.spacing(), bright)?;
    let largest = connected_components(&mask, Connectivity::Vertex26).select(|l| l == 1);
    let bbox = bbox_of(&largest, params.crop_margin)?;
    Ok((volume.crop(&bbox)?, bbox))
}

/// Stretch, then crop when enabled. Returns the box the output covers in the
/// input grid, or `None` when no cropping took place.
pub fn preprocess(volume: &Volume, params: &PreprocessParams) -> Result<(Volume, Option<BBox>)> {
    let stretched = percentile_stretch(volume, params)?;
    if params.crop_enabled {
        let (cropped, bbox) = dynamic_crop(&stretched, params)?;
        Ok((cropped, Some(bbox)))
    } else {
        Ok((stretched, None))
    }
}
