//! Grad-CAM saliency for the toy detectors.
//!
//! Channel weights are the spatially averaged gradients of the target
//! logit at the last multi-channel convolution layer; the map is the
//! rectified weighted sum of activations, min-max normalized to [0, 1].
//! Bona fide heatmaps use +logit, spoof heatmaps use -logit (the
//! detectors emit a single bona fide support logit).

use std::path::Path;

use thiserror::Error;

use crate::data::{save_image, DataError, Image};
use crate::detector::{Detector, DetectorError};
use crate::numcore::{NumError, Tensor};

#[derive(Debug, Error)]
pub enum ExplainError {
    #[error("empty heatmap sequence")]
    EmptySequence,
    #[error("heatmap shapes or labels differ: {0:?} vs {1:?}")]
    MixedHeatmaps(Vec<usize>, Vec<usize>),
    #[error(transparent)]
    Detector(#[from] DetectorError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Numeric(#[from] NumError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetLabel {
    BonaFide,
    Spoof,
}

impl TargetLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            TargetLabel::BonaFide => "bona_fide",
            TargetLabel::Spoof => "spoof",
        }
    }
}

/// Saliency map at the target convolution layer's spatial resolution,
/// values in [0, 1]. `source_hw` remembers the input image size for
/// rendering.
#[derive(Debug, Clone)]
pub struct Heatmap {
    pub values: Tensor,
    pub target_label: TargetLabel,
    pub source_hw: (usize, usize),
}

/// Min-max normalize to [0, 1]; a constant map (including all-zero)
/// normalizes to all zeros.
fn normalize_map(values: Tensor) -> Tensor {
    let (lo, hi) = values.min_max();
    if hi > lo {
        values.map(|v| (v - lo) / (hi - lo))
    } else {
        Tensor::zeros(values.shape())
    }
}

pub fn gradcam(
    detector: &Detector,
    image: &Image,
    target_label: TargetLabel,
) -> Result<Heatmap, ExplainError> {
    let sign = match target_label {
        TargetLabel::BonaFide => 1.0,
        TargetLabel::Spoof => -1.0,
    };
    let (activation, grad) = detector.gradcam_capture(image, sign)?;
    let [h, w, c] = *activation.shape() else {
        return Err(ExplainError::Detector(DetectorError::BadActivation(
            activation.shape().to_vec(),
        )));
    };

    // channel weights: spatial mean of the gradients
    let mut weights = vec![0.0; c];
    for (i, &g) in grad.values().iter().enumerate() {
        weights[i % c] += g;
    }
    let scale = 1.0 / (h * w) as f64;
    for wgt in &mut weights {
        *wgt *= scale;
    }

    // rectified weighted activation sum
    let mut map = Tensor::zeros(&[h, w]);
    {
        let mv = map.values_mut();
        for p in 0..h * w {
            let mut acc = 0.0;
            for ch in 0..c {
                acc += weights[ch] * activation.values()[p * c + ch];
            }
            mv[p] = acc.max(0.0);
        }
    }

    let (ih, iw, _) = image.dims();
    Ok(Heatmap {
        values: normalize_map(map),
        target_label,
        source_hw: (ih, iw),
    })
}

/// Elementwise mean of same-shape, same-label heatmaps, re-normalized.
pub fn average_heatmaps(heatmaps: &[Heatmap]) -> Result<Heatmap, ExplainError> {
    let first = heatmaps.first().ok_or(ExplainError::EmptySequence)?;
    let mut sum = Tensor::zeros(first.values.shape());
    for hm in heatmaps {
        if hm.values.shape() != first.values.shape() || hm.target_label != first.target_label {
            return Err(ExplainError::MixedHeatmaps(
                first.values.shape().to_vec(),
                hm.values.shape().to_vec(),
            ));
        }
        for (a, b) in sum.values_mut().iter_mut().zip(hm.values.values()) {
            *a += b;
        }
    }
    let inv = 1.0 / heatmaps.len() as f64;
    Ok(Heatmap {
        values: normalize_map(sum.map(|v| v * inv)),
        target_label: first.target_label,
        source_hw: first.source_hw,
    })
}

/// Nearest-neighbor upsample of the heatmap to the source image size.
pub fn upsample(heatmap: &Heatmap) -> Tensor {
    let [h, w] = *heatmap.values.shape() else {
        unreachable!("heatmaps are rank 2")
    };
    let (oh, ow) = heatmap.source_hw;
    let mut out = Tensor::zeros(&[oh, ow]);
    {
        let ov = out.values_mut();
        for y in 0..oh {
            let sy = y * h / oh;
            for x in 0..ow {
                let sx = x * w / ow;
                ov[y * ow + x] = heatmap.values.idx2(sy, sx);
            }
        }
    }
    out
}

/// Render as grayscale PGM, or as a PPM overlay (heatmap in the red
/// channel over the dimmed base image) when a base image is given.
pub fn render_heatmap(
    heatmap: &Heatmap,
    base_image: Option<&Image>,
    path: &Path,
) -> Result<(), ExplainError> {
    let up = upsample(heatmap);
    let (oh, ow) = heatmap.source_hw;
    let image = match base_image {
        None => {
            let gray = Tensor::new(&[oh, ow, 1], up.into_values())?;
            Image::new(gray)?
        }
        Some(base) => {
            let (bh, bw, _) = base.dims();
            if (bh, bw) != (oh, ow) {
                return Err(ExplainError::MixedHeatmaps(
                    vec![oh, ow],
                    vec![bh, bw],
                ));
            }
            let mut vals = vec![0.0; oh * ow * 3];
            for y in 0..oh {
                for x in 0..ow {
                    let heat = up.idx2(y, x);
                    let base_px = |c: usize| 0.4 * base.pixel(y, x, c);
                    let i = (y * ow + x) * 3;
                    vals[i] = heat.max(base_px(0));
                    vals[i + 1] = base_px(1);
                    vals[i + 2] = base_px(2);
                }
            }
            Image::new(Tensor::new(&[oh, ow, 3], vals)?)?
        }
    };
    save_image(&image, path)?;
    Ok(())
}
