use alloc::vec;
use alloc::vec::Vec;

use super::FeatureVolume;
use crate::error::{bail, Result};
use crate::math;
use crate::volume::LabelVolume;

/// Per-class weights `count_k^(-1/2)` over both volumes, rescaled so the
/// largest weight is 1. Classes absent from both volumes get weight 0.
pub fn class_weights(fixed: &LabelVolume, moving: &LabelVolume) -> Vec<f64> {
    let k = fixed.num_classes().max(moving.num_classes()) as usize;
    let mut counts = vec![0u64; k];
    for &l in fixed.data().iter().chain(moving.data()) {
        counts[l as usize] += 1;
    }
    let mut w: Vec<f64> = counts
        .iter()
        .map(|&c| if c == 0 { 0.0 } else { 1.0 / math::sqrt(c as f64) })
        .collect();
    let max = w.iter().cloned().fold(0.0, f64::max);
    if max > 0.0 {
        w.iter_mut().for_each(|v| *v /= max);
    }
    w
}

/// Inverse class-weighted one-hot encodings of a pair of label maps.
///
/// Channel `k` holds `w_k` where the label is `k` and 0 elsewhere, with the
/// weights of [`class_weights`]. Squared differences of these features
/// weigh each class inversely to its frequency.
pub fn seg_onehot_features(fixed: &LabelVolume, moving: &LabelVolume) -> Result<(FeatureVolume, FeatureVolume)> {
    if fixed.dims() != moving.dims() {
        bail!(
            ShapeMismatch,
            "label volumes differ in size: {:?} vs {:?}",
            fixed.dims().to_array(),
            moving.dims().to_array()
        );
    }
    if fixed.num_classes() != moving.num_classes() {
        bail!(
            ShapeMismatch,
            "label volumes declare {} and {} classes",
            fixed.num_classes(),
            moving.num_classes()
        );
    }
    let w = class_weights(fixed, moving);
    let encode = |labels: &LabelVolume| {
        let n = labels.dims().len();
        let k = w.len();
        let mut data = vec![0.0f32; k * n];
        for (i, &l) in labels.data().iter().enumerate() {
            data[l as usize * n + i] = w[l as usize] as f32;
        }
        FeatureVolume::new(labels.dims(), labels.spacing(), k, data)
    };
    Ok((encode(fixed)?, encode(moving)?))
}
