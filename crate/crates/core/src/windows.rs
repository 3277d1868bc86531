//! Sliding training windows over an episode.
//!
//! The window anchored at `k` stacks frames `k - T_p + 1 ..= k`. A training
//! sample at anchor `k` uses the windows at `k, k + 1, ..., k + T_f` and the
//! actions `a_k .. a_{k + T_f - 2}`, so anchors run from `T_p` to
//! `K - 1 - T_f`.

use std::ops::Range;

use jepa_nn::Tensor;

use crate::dataset::EpisodeDataset;
use crate::error::{JepaError, Result};
use crate::pendulum::FRAME_PIXELS;

/// Valid anchors for an episode of `len` steps.
pub fn anchor_range(len: usize, past: usize, future: usize) -> Result<Range<usize>> {
    let need = past + future + 1;
    if len < need {
        return Err(JepaError::DatasetTooShort { len, need });
    }
    Ok(past..len - future)
}

/// Train and validation anchors after a chronological split of the frames.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    /// First frame index belonging to validation.
    pub boundary: usize,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

impl Split {
    /// Frames `[0, boundary)` feed training windows and `[boundary, len)`
    /// feed validation windows; no window touches both sides.
    pub fn chronological(len: usize, past: usize, future: usize, train_fraction: f64) -> Result<Self> {
        anchor_range(len, past, future)?;
        let boundary = (len as f64 * train_fraction).floor() as usize;
        let train: Vec<usize> = anchor_range(boundary, past, future).map(|r| r.collect()).unwrap_or_default();
        let val: Vec<usize> = anchor_range(len - boundary, past, future)
            .map(|r| r.map(|k| k + boundary).collect())
            .unwrap_or_default();
        if train.is_empty() || val.is_empty() {
            return Err(JepaError::DatasetTooShort { len, need: 2 * (past + future + 1) });
        }
        Ok(Self { boundary, train, val })
    }
}

/// Frame indices covered by the sample anchored at `k`.
pub fn frames_touched(k: usize, past: usize, future: usize) -> Range<usize> {
    k + 1 - past..k + future + 1
}

/// Stacked window at `anchor`, pixels scaled to `[0, 1]`, appended to `out`.
pub fn push_window(ds: &EpisodeDataset, anchor: usize, past: usize, out: &mut Vec<f64>) {
    for t in anchor + 1 - past..=anchor {
        out.extend(ds.frame(t).iter().map(|&p| f64::from(p) / 255.0));
    }
}

/// Windows at the given anchors as `[B, T_p, H, W]`.
pub fn window_batch(ds: &EpisodeDataset, anchors: &[usize], past: usize) -> Result<Tensor> {
    let mut data = Vec::with_capacity(anchors.len() * past * FRAME_PIXELS);
    for &k in anchors {
        push_window(ds, k, past, &mut data);
    }
    let side = ds.manifest.frame_height;
    Ok(Tensor::new(&[anchors.len(), past, side, side], data)?)
}

/// One phase-1 batch in time-major order.
#[derive(Clone, Debug)]
pub struct SampleBatch {
    pub anchors: Vec<usize>,
    /// `[(T_f + 1) N, T_p, H, W]`: rows `j N .. (j + 1) N` hold the windows at
    /// `anchor + j`.
    pub windows: Tensor,
    /// `[(T_f - 1) N, 1]` standardized actions; rows `j N ..` hold `a_{anchor + j}`.
    pub actions: Tensor,
}

/// Assembles samples at `anchors`, standardizing actions with `(mean, std)`.
pub fn sample_batch(
    ds: &EpisodeDataset,
    anchors: &[usize],
    past: usize,
    future: usize,
    action_norm: (f64, f64),
) -> Result<SampleBatch> {
    let range = anchor_range(ds.len(), past, future)?;
    if let Some(&bad) = anchors.iter().find(|k| !range.contains(k)) {
        return Err(JepaError::IndexOutOfRange { index: bad, len: ds.len() });
    }
    let n = anchors.len();
    let mut data = Vec::with_capacity((future + 1) * n * past * FRAME_PIXELS);
    for j in 0..=future {
        for &k in anchors {
            push_window(ds, k + j, past, &mut data);
        }
    }
    let side = ds.manifest.frame_height;
    let windows = Tensor::new(&[(future + 1) * n, past, side, side], data)?;
    let (mean, std) = action_norm;
    let actions = (0..future - 1)
        .flat_map(|j| anchors.iter().map(move |&k| k + j))
        .map(|t| (f64::from(ds.actions[t]) - mean) / std)
        .collect();
    Ok(SampleBatch { anchors: anchors.to_vec(), windows, actions: Tensor::new(&[(future - 1) * n, 1], actions)? })
}
