//! Synthetic corpus generation, stratified partitioning, and image I/O.
//!
//! Bona fide images are procedural face-like compositions; each attack id
//! applies a distinct localized artifact transform to every bona fide image.
//! The corpus is a stand-in for real deepfake frames: detectors learn the
//! artifacts, attack filters learn to hide them.

mod corpus;
mod manifest;
mod pnm;

pub use corpus::{
    generate_corpus, generate_corpus_with_geometry, split_partition, stratified_split_counts,
    FaceGeometry,
};
pub use manifest::{load_corpus_dir, save_corpus_dir, CorpusOnDisk, Label, ManifestEntry, Part};
pub use pnm::{decode_image, encode_image, load_image, quantize, save_image};

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::numcore::Tensor;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("unknown attack id: {0}")]
    UnknownAttack(String),
    #[error("corpus needs at least 4 bona fide images, got {0}")]
    TooFewImages(usize),
    #[error("image dimensions must be >= 32, got {0}x{1}")]
    ImageTooSmall(usize, usize),
    #[error("split ratio must lie strictly between 0 and 1, got {0}")]
    BadRatio(f64),
    #[error("stratum {stratum} has only {size} images; need at least 2 to split")]
    StratumTooSmall { stratum: String, size: usize },
    #[error("image must have 1 or 3 channels, got {0}")]
    UnsupportedChannels(usize),
    #[error("pixel values must lie in [0,1]")]
    PixelOutOfRange,
    #[error("image tensor must be rank 3 (HxWxC), got {0:?}")]
    BadImageShape(Vec<usize>),
    #[error("malformed PNM at byte {offset}: {what}")]
    MalformedPnm { offset: usize, what: String },
    #[error("malformed manifest line {line}: {what}")]
    BadManifest { line: usize, what: String },
    #[error("{0}: {1}")]
    Io(String, String),
    #[error("{0}")]
    Internal(String),
}

/// An H x W x C image with pixel values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Image(Tensor);

impl Image {
    pub fn new(tensor: Tensor) -> Result<Self, DataError> {
        if tensor.shape().len() != 3 {
            return Err(DataError::BadImageShape(tensor.shape().to_vec()));
        }
        if !tensor.values().iter().all(|&v| (0.0..=1.0).contains(&v)) {
            return Err(DataError::PixelOutOfRange);
        }
        Ok(Self(tensor))
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        let s = self.0.shape();
        (s[0], s[1], s[2])
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    #[inline]
    pub fn pixel(&self, y: usize, x: usize, c: usize) -> f64 {
        self.0.idx3(y, x, c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AttackId {
    RegionSwap,
    TextureNoise,
    ColorShift,
}

impl AttackId {
    pub const ALL: [AttackId; 3] = [
        AttackId::RegionSwap,
        AttackId::TextureNoise,
        AttackId::ColorShift,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AttackId::RegionSwap => "region-swap",
            AttackId::TextureNoise => "texture-noise",
            AttackId::ColorShift => "color-shift",
        }
    }
}

impl fmt::Display for AttackId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AttackId {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "region-swap" => Ok(AttackId::RegionSwap),
            "texture-noise" => Ok(AttackId::TextureNoise),
            "color-shift" => Ok(AttackId::ColorShift),
            other => Err(DataError::UnknownAttack(other.to_string())),
        }
    }
}

/// Labeled bona fide and per-attack spoof image sets.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub bona_fide: Vec<Image>,
    pub spoofs: Vec<(AttackId, Vec<Image>)>,
    pub seed: u64,
}

impl Corpus {
    pub fn spoofs_for(&self, attack: AttackId) -> Option<&[Image]> {
        self.spoofs
            .iter()
            .find(|(a, _)| *a == attack)
            .map(|(_, imgs)| imgs.as_slice())
    }

    pub fn attack_ids(&self) -> Vec<AttackId> {
        self.spoofs.iter().map(|(a, _)| *a).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum SampleId {
    Bona(usize),
    Spoof(AttackId, usize),
}

/// Disjoint train/test index sets covering the corpus, stratified per
/// class and per attack.
#[derive(Debug, Clone)]
pub struct Partition {
    pub part1: Vec<SampleId>,
    pub part2: Vec<SampleId>,
}

impl Partition {
    pub fn contains_part1(&self, id: SampleId) -> bool {
        self.part1.contains(&id)
    }
}
