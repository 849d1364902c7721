//! Two structurally distinct differentiable deepfake detectors.
//!
//! Architecture A is biased toward local features: three 3x3 convolution
//! stages followed by a 1x1 patch-logit head and a global max over patches.
//! Architecture B uses wider 5x5 kernels, global average pooling and a
//! dense head, and trains with light augmentation (horizontal flip,
//! brightness jitter).
//!
//! Detectors output a raw bona fide support logit: higher means more bona
//! fide. Once trained they are frozen; no public operation mutates their
//! weights.

mod checkpoint;
mod layers;
mod train;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_detector, save_detector};
pub use layers::Layer;
pub use train::{train_detector, TrainConfig};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::data::Image;
use crate::numcore::{NumError, Tensor};

#[derive(Debug, Error)]
pub enum DetectorError {
    #[error("image shape {got:?} does not match detector input {expected:?}")]
    ShapeMismatch { expected: [usize; 3], got: Vec<usize> },
    #[error("training data contains a single class only")]
    SingleClass,
    #[error("unexpected activation shape {0:?}")]
    BadActivation(Vec<usize>),
    #[error("detector has no multi-channel convolution layer")]
    NoConvLayer,
    #[error("bad checkpoint at byte {offset}: {what}")]
    BadCheckpoint { offset: usize, what: String },
    #[error("{0}: {1}")]
    Io(String, String),
    #[error(transparent)]
    Numeric(#[from] NumError),
    #[error("{0}")]
    Internal(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ArchitectureId {
    A,
    B,
}

impl ArchitectureId {
    pub fn name(self) -> &'static str {
        match self {
            ArchitectureId::A => "A",
            ArchitectureId::B => "B",
        }
    }
}

impl std::fmt::Display for ArchitectureId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ArchitectureId {
    type Err = DetectorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "A" | "a" => Ok(ArchitectureId::A),
            "B" | "b" => Ok(ArchitectureId::B),
            other => Err(DetectorError::Internal(format!(
                "unknown architecture {other}, expected A or B"
            ))),
        }
    }
}

/// A frozen differentiable scorer. `score` is the pre-threshold bona fide
/// support logit.
#[derive(Debug, Clone)]
pub struct Detector {
    pub architecture_id: ArchitectureId,
    pub input_shape: [usize; 3],
    layers: Vec<Layer>,
    frozen: bool,
}

fn he_conv(rng: &mut ChaCha8Rng, cout: usize, cin: usize, k: usize, center: bool) -> Layer {
    let fan_in = (cin * k * k) as f64;
    let s = (6.0 / fan_in).sqrt();
    let n = cout * cin * k * k;
    let weights = Tensor::new(
        &[cout, cin, k, k],
        (0..n).map(|_| rng.gen_range(-s..s)).collect(),
    )
    .expect("finite init");
    // first layer: bias = -0.5 * sum(weights per filter), equivalent to
    // centering [0,1] inputs around zero at initialization
    let bias = if center {
        let per = cin * k * k;
        Tensor::new(
            &[cout],
            (0..cout)
                .map(|o| -0.5 * weights.values()[o * per..(o + 1) * per].iter().sum::<f64>())
                .collect(),
        )
        .expect("finite init")
    } else {
        Tensor::zeros(&[cout])
    };
    Layer::Conv { weights, bias }
}

fn he_dense(rng: &mut ChaCha8Rng, nout: usize, nin: usize) -> Layer {
    let s = (6.0 / nin as f64).sqrt();
    let weights = Tensor::new(
        &[nout, nin],
        (0..nout * nin).map(|_| rng.gen_range(-s..s)).collect(),
    )
    .expect("finite init");
    Layer::Dense {
        weights,
        bias: Tensor::zeros(&[nout]),
    }
}

impl Detector {
    /// Fresh unfrozen detector with seeded weight initialization.
    pub fn new(
        architecture_id: ArchitectureId,
        input_shape: [usize; 3],
        seed: u64,
    ) -> Result<Self, DetectorError> {
        let [h, w, c] = input_shape;
        if h < 8 || w < 8 {
            return Err(DetectorError::Internal(format!(
                "input {h}x{w} too small for pooling stack"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = match architecture_id {
            ArchitectureId::A => vec![
                he_conv(&mut rng, 4, c, 3, true),
                Layer::Relu,
                Layer::AvgPool2,
                he_conv(&mut rng, 8, 4, 3, false),
                Layer::Relu,
                Layer::AvgPool2,
                he_conv(&mut rng, 8, 8, 3, false),
                Layer::Relu,
                he_conv(&mut rng, 1, 8, 1, false),
                Layer::GlobalMax,
            ],
            ArchitectureId::B => vec![
                he_conv(&mut rng, 4, c, 5, true),
                Layer::Relu,
                Layer::AvgPool2,
                he_conv(&mut rng, 8, 4, 5, false),
                Layer::Relu,
                Layer::AvgPool2,
                Layer::GlobalAvgPool,
                he_dense(&mut rng, 16, 8),
                Layer::Relu,
                he_dense(&mut rng, 1, 16),
            ],
        };
        Ok(Self {
            architecture_id,
            input_shape,
            layers,
            frozen: false,
        })
    }

    pub(crate) fn from_parts(
        architecture_id: ArchitectureId,
        input_shape: [usize; 3],
        layers: Vec<Layer>,
        frozen: bool,
    ) -> Self {
        Self {
            architecture_id,
            input_shape,
            layers,
            frozen,
        }
    }

    pub fn frozen(&self) -> bool {
        self.frozen
    }

    pub(crate) fn freeze(&mut self) {
        self.frozen = true;
    }

    pub(crate) fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut Vec<Layer> {
        &mut self.layers
    }

    fn check_input(&self, image: &Image) -> Result<(), DetectorError> {
        if image.tensor().shape() != self.input_shape {
            return Err(DetectorError::ShapeMismatch {
                expected: self.input_shape,
                got: image.tensor().shape().to_vec(),
            });
        }
        Ok(())
    }

    fn forward_tensor(&self, input: &Tensor) -> Result<layers::Trace, DetectorError> {
        layers::forward(&self.layers, input)
    }

    /// Bona fide support logit for `image`.
    pub fn score(&self, image: &Image) -> Result<f64, DetectorError> {
        self.check_input(image)?;
        let trace = self.forward_tensor(image.tensor())?;
        Ok(trace.output.values()[0])
    }

    /// d(score)/d(image), detector weights untouched.
    pub fn score_input_grad(&self, image: &Image) -> Result<Tensor, DetectorError> {
        Ok(self.score_with_input_grad(image)?.1)
    }

    /// Score and input gradient from a single forward/backward pass.
    pub fn score_with_input_grad(&self, image: &Image) -> Result<(f64, Tensor), DetectorError> {
        self.check_input(image)?;
        let trace = self.forward_tensor(image.tensor())?;
        let score = trace.output.values()[0];
        let back = layers::backward(&self.layers, &trace, 1.0, false, None)?;
        Ok((score, back.input_grad))
    }

    /// Index of the Grad-CAM target layer: the last convolution with more
    /// than one output channel (the 1x1 patch-logit head of architecture A
    /// is a classifier head, not a feature layer).
    pub(crate) fn gradcam_layer(&self) -> Result<usize, DetectorError> {
        self.layers
            .iter()
            .rposition(|l| matches!(l.conv_dims(), Some((cout, _, _)) if cout > 1))
            .ok_or(DetectorError::NoConvLayer)
    }

    /// Activations of the Grad-CAM target layer and the gradient of
    /// `sign * score` with respect to them.
    pub fn gradcam_capture(
        &self,
        image: &Image,
        sign: f64,
    ) -> Result<(Tensor, Tensor), DetectorError> {
        self.check_input(image)?;
        let target = self.gradcam_layer()?;
        let trace = self.forward_tensor(image.tensor())?;
        let activation = if target + 1 < trace.inputs.len() {
            trace.inputs[target + 1].clone()
        } else {
            trace.output.clone()
        };
        let back = layers::backward(&self.layers, &trace, sign, false, Some(target))?;
        let grad = back
            .captured
            .ok_or_else(|| DetectorError::Internal("capture layer not reached".into()))?;
        Ok((activation, grad))
    }
}

/// Frozen scoring surface consumed by the attack optimizer. Tests inject
/// scripted scorers through this trait.
pub trait Scorer {
    fn frozen(&self) -> bool;
    fn input_shape(&self) -> [usize; 3];
    fn score_image(&self, image: &Image) -> Result<f64, DetectorError>;
    fn score_image_with_grad(&self, image: &Image) -> Result<(f64, Tensor), DetectorError>;
}

impl Scorer for Detector {
    fn frozen(&self) -> bool {
        self.frozen
    }

    fn input_shape(&self) -> [usize; 3] {
        self.input_shape
    }

    fn score_image(&self, image: &Image) -> Result<f64, DetectorError> {
        self.score(image)
    }

    fn score_image_with_grad(&self, image: &Image) -> Result<(f64, Tensor), DetectorError> {
        self.score_with_input_grad(image)
    }
}
