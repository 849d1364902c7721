//! Adversarial LTI filter attack: one learnable L x L convolution kernel
//! per spoofing algorithm, optimized by gradient ascent on the summed
//! detector score of filtered spoof images against a frozen detector.
//!
//! The filter starts as the identity delta kernel, so the ascent is
//! measured from the unattacked baseline. Filtering is followed by a
//! conditional min-max normalization that keeps pixels inside [0, 1] and
//! is an exact no-op whenever the filtered image is already in range.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::data::{AttackId, DataError, Image};
use crate::detector::{DetectorError, Scorer};
use crate::eval::{compute_eer, EvalError, ScoreSet};
use crate::numcore::{adam_step, conv2d_kernel_grad, conv2d_same, AdamState, NumError, Tensor};

#[derive(Debug, Error)]
pub enum AttackError {
    #[error("detector must be frozen before filter optimization")]
    UnfrozenDetector,
    #[error("spoof image set is empty")]
    EmptySpoofSet,
    #[error("bona fide image set is empty")]
    EmptyBonaSet,
    #[error("batch is empty")]
    EmptyBatch,
    #[error("all spoof images are constant; the objective gradient is ill-posed")]
    DegenerateSpoofs,
    #[error("objective became non-finite at epoch {epoch}")]
    NonFiniteObjective { epoch: usize },
    #[error("invalid attack config: {0}")]
    BadConfig(String),
    #[error("bad filter file at byte {offset}: {what}")]
    BadFilterFile { offset: usize, what: String },
    #[error("{0}: {1}")]
    Io(String, String),
    #[error(transparent)]
    Numeric(#[from] NumError),
    #[error(transparent)]
    Detector(#[from] DetectorError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("{0}")]
    Eval(String),
}

impl From<EvalError> for AttackError {
    fn from(e: EvalError) -> Self {
        AttackError::Eval(e.to_string())
    }
}

/// The attack-specific L x L kernel.
#[derive(Debug, Clone)]
pub struct MalafideFilter {
    pub attack_id: AttackId,
    pub size: usize,
    pub coefficients: Tensor,
}

#[derive(Debug, Clone)]
pub struct AttackConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Stop once the monitored EER (percent) exceeds this.
    pub eer_stop_threshold: f64,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-2,
            weight_decay: 0.0,
            batch_size: 32,
            max_epochs: 100,
            eer_stop_threshold: 50.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    EerThreshold,
    EpochCap,
}

impl StopReason {
    pub fn as_str(self) -> &'static str {
        match self {
            StopReason::EerThreshold => "eer_threshold",
            StopReason::EpochCap => "epoch_cap",
        }
    }
}

#[derive(Debug, Clone)]
pub struct EpochRecord {
    pub epoch: usize,
    pub objective: f64,
    pub eer: f64,
}

#[derive(Debug, Clone)]
pub struct AttackLog {
    pub records: Vec<EpochRecord>,
    pub stop_reason: StopReason,
}

impl AttackLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,objective,eer\n");
        for r in &self.records {
            out.push_str(&format!("{},{:.17e},{:.6}\n", r.epoch, r.objective, r.eer));
        }
        out
    }
}

/// Delta kernel: center coefficient 1, all others 0.
pub fn init_identity_filter(attack_id: AttackId, l: usize) -> Result<MalafideFilter, AttackError> {
    if l == 0 || l % 2 == 0 {
        return Err(AttackError::Numeric(NumError::EvenKernel(l)));
    }
    let mut coeffs = Tensor::zeros(&[l, l]);
    coeffs.values_mut()[(l / 2) * l + l / 2] = 1.0;
    Ok(MalafideFilter {
        attack_id,
        size: l,
        coefficients: coeffs,
    })
}

/// Conditional min-max normalization together with the slope of its
/// smooth branch (d normalized / d input, treating min and max as
/// constants of the forward pass).
pub(crate) fn normalize_with_scale(tensor: &Tensor) -> Result<(Image, f64), AttackError> {
    if !tensor.all_finite() {
        return Err(AttackError::Numeric(NumError::NonFinite(
            "normalize_image input".into(),
        )));
    }
    let (lo, hi) = tensor.min_max();
    if lo >= 0.0 && hi <= 1.0 {
        return Ok((Image::new(tensor.clone())?, 1.0));
    }
    if hi > lo {
        let scale = 1.0 / (hi - lo);
        let img = Image::new(tensor.map(|v| (v - lo) * scale))?;
        Ok((img, scale))
    } else {
        // constant out-of-range image
        Ok((Image::new(Tensor::filled(tensor.shape(), 0.5))?, 0.0))
    }
}

/// Rescale an arbitrary finite image into [0, 1]. Already-in-range input
/// passes through unchanged; a constant out-of-range image maps to 0.5.
pub fn normalize_image(tensor: &Tensor) -> Result<Image, AttackError> {
    normalize_with_scale(tensor).map(|(img, _)| img)
}

/// Filter then normalize; output pixels always lie in [0, 1].
pub fn apply_filter(image: &Image, filter: &MalafideFilter) -> Result<Image, AttackError> {
    let filtered = conv2d_same(image.tensor(), &filter.coefficients)?;
    normalize_image(&filtered)
}

/// Summed detector score of the filtered batch (the quantity the attack
/// maximizes).
pub fn objective<S: Scorer>(
    spoof_batch: &[&Image],
    filter: &MalafideFilter,
    detector: &S,
) -> Result<f64, AttackError> {
    if spoof_batch.is_empty() {
        return Err(AttackError::EmptyBatch);
    }
    if !detector.frozen() {
        return Err(AttackError::UnfrozenDetector);
    }
    let mut sum = 0.0;
    for img in spoof_batch {
        sum += detector.score_image(&apply_filter(img, filter)?)?;
    }
    Ok(sum)
}

/// Gradient of the per-image objective with respect to the kernel:
/// detector input gradient, scaled through the normalization branch,
/// pulled back through the convolution.
fn kernel_gradient<S: Scorer>(
    image: &Image,
    filter_coeffs: &Tensor,
    l: usize,
    detector: &S,
) -> Result<(f64, Tensor), AttackError> {
    let filtered = conv2d_same(image.tensor(), filter_coeffs)?;
    let (normalized, scale) = normalize_with_scale(&filtered)?;
    let (score, input_grad) = detector.score_image_with_grad(&normalized)?;
    let upstream = input_grad.map(|g| g * scale);
    let grad = conv2d_kernel_grad(image.tensor(), &upstream, l)?;
    Ok((score, grad))
}

fn mix(seed: u64, salt: u64) -> u64 {
    let mut z = seed
        .wrapping_add(salt.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Optimize an attack-specific filter by gradient ascent against a frozen
/// detector. Monitored EER: unfiltered bona fide training scores vs
/// filtered spoof training scores, recomputed after every epoch. Stops
/// when the monitored EER exceeds the threshold or the epoch cap is hit.
pub fn optimize_filter<S: Scorer>(
    spoof_train: &[&Image],
    bona_train: &[&Image],
    detector: &S,
    attack_id: AttackId,
    l: usize,
    config: &AttackConfig,
) -> Result<(MalafideFilter, AttackLog), AttackError> {
    if !detector.frozen() {
        return Err(AttackError::UnfrozenDetector);
    }
    if spoof_train.is_empty() {
        return Err(AttackError::EmptySpoofSet);
    }
    if bona_train.is_empty() {
        return Err(AttackError::EmptyBonaSet);
    }
    if config.max_epochs == 0 || config.batch_size == 0 {
        return Err(AttackError::BadConfig(
            "max_epochs and batch_size must be >= 1".into(),
        ));
    }
    if !(config.eer_stop_threshold > 0.0 && config.eer_stop_threshold <= 100.0) {
        return Err(AttackError::BadConfig(format!(
            "eer_stop_threshold {} not in (0, 100]",
            config.eer_stop_threshold
        )));
    }
    if spoof_train.iter().all(|img| {
        let (lo, hi) = img.tensor().min_max();
        lo == hi
    }) {
        return Err(AttackError::DegenerateSpoofs);
    }

    let mut filter = init_identity_filter(attack_id, l)?;
    let mut adam = AdamState::new(&[l, l], config.learning_rate, config.weight_decay);

    let bona_scores: Vec<f64> = bona_train
        .iter()
        .map(|img| detector.score_image(img))
        .collect::<Result<_, _>>()?;

    let mut records = Vec::new();
    let mut stop_reason = StopReason::EpochCap;
    for epoch in 1..=config.max_epochs {
        let mut order: Vec<usize> = (0..spoof_train.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(mix(config.seed, epoch as u64));
        for i in (1..order.len()).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }

        for batch in order.chunks(config.batch_size) {
            let mut acc = Tensor::zeros(&[l, l]);
            for &idx in batch {
                let (_, g) = kernel_gradient(spoof_train[idx], &filter.coefficients, l, detector)?;
                for (a, b) in acc.values_mut().iter_mut().zip(g.values()) {
                    *a += b;
                }
            }
            // ascent: Adam minimizes, so feed the negated mean gradient
            let inv = -1.0 / batch.len() as f64;
            let neg_mean = acc.map(|v| v * inv);
            let (next, next_state) = adam_step(&filter.coefficients, &neg_mean, &adam)?;
            filter.coefficients = next;
            adam = next_state;
        }

        // end-of-epoch monitoring with the epoch's final filter
        let mut spoof_scores = Vec::with_capacity(spoof_train.len());
        for img in spoof_train {
            spoof_scores.push(detector.score_image(&apply_filter(img, &filter)?)?);
        }
        let objective_mean = spoof_scores.iter().sum::<f64>() / spoof_scores.len() as f64;
        if !objective_mean.is_finite() {
            return Err(AttackError::NonFiniteObjective { epoch });
        }
        let eer = compute_eer(&ScoreSet {
            bona_scores: bona_scores.clone(),
            spoof_scores,
        })?;
        records.push(EpochRecord {
            epoch,
            objective: objective_mean,
            eer,
        });
        if eer > config.eer_stop_threshold {
            stop_reason = StopReason::EerThreshold;
            break;
        }
    }

    Ok((
        filter,
        AttackLog {
            records,
            stop_reason,
        },
    ))
}

// ---- filter file format -------------------------------------------------

const FILTER_MAGIC: &[u8; 4] = b"MFF1";

/// Versioned binary filter file: attack id, L, row-major little-endian
/// f64 coefficients. Round trip is bitwise exact.
pub fn encode_filter(filter: &MalafideFilter) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(FILTER_MAGIC);
    let name = filter.attack_id.name().as_bytes();
    out.push(name.len() as u8);
    out.extend_from_slice(name);
    out.extend_from_slice(&(filter.size as u32).to_le_bytes());
    for &v in filter.coefficients.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_filter(bytes: &[u8]) -> Result<MalafideFilter, AttackError> {
    let fail = |offset: usize, what: &str| AttackError::BadFilterFile {
        offset,
        what: what.to_string(),
    };
    if bytes.len() < 5 || &bytes[..4] != FILTER_MAGIC {
        return Err(fail(0, "bad magic"));
    }
    let name_len = bytes[4] as usize;
    let mut pos = 5;
    let name = std::str::from_utf8(bytes.get(pos..pos + name_len).ok_or(fail(pos, "truncated attack id"))?)
        .map_err(|_| fail(pos, "attack id not utf-8"))?;
    let attack_id: AttackId = name.parse()?;
    pos += name_len;
    let l_bytes = bytes.get(pos..pos + 4).ok_or(fail(pos, "truncated size"))?;
    let l = u32::from_le_bytes(l_bytes.try_into().unwrap()) as usize;
    pos += 4;
    if l == 0 || l % 2 == 0 || l > 1023 {
        return Err(fail(pos, "filter size must be odd and < 1024"));
    }
    let payload = bytes.get(pos..).ok_or(fail(pos, "truncated payload"))?;
    if payload.len() != l * l * 8 {
        return Err(fail(pos, "coefficient payload length mismatch"));
    }
    let values: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let coefficients = Tensor::new(&[l, l], values)?;
    Ok(MalafideFilter {
        attack_id,
        size: l,
        coefficients,
    })
}

pub fn save_filter(filter: &MalafideFilter, path: &Path) -> Result<(), AttackError> {
    fs::write(path, encode_filter(filter))
        .map_err(|e| AttackError::Io(path.display().to_string(), e.to_string()))
}

pub fn load_filter(path: &Path) -> Result<MalafideFilter, AttackError> {
    let bytes =
        fs::read(path).map_err(|e| AttackError::Io(path.display().to_string(), e.to_string()))?;
    decode_filter(&bytes)
}
