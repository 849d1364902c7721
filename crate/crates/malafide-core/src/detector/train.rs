//! Detector training: binary cross-entropy on sigmoid(logit) over Part 1
//! with Adam, class-balanced sample weights, seeded shuffling. Returns a
//! frozen detector.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::Layer;
use super::{ArchitectureId, Detector, DetectorError};
use crate::data::{Corpus, Image, Partition, SampleId};
use crate::numcore::{adam_step, sigmoid, AdamState, Tensor};

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            learning_rate: 1e-3,
            weight_decay: 1e-4,
            seed: 0,
        }
    }
}

fn mix(seed: u64, salt: u64) -> u64 {
    let mut z = seed
        .wrapping_add(salt.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn sample_image<'a>(corpus: &'a Corpus, id: SampleId) -> &'a Image {
    match id {
        SampleId::Bona(i) => &corpus.bona_fide[i],
        SampleId::Spoof(a, i) => &corpus.spoofs_for(a).expect("attack present")[i],
    }
}

fn flip_horizontal(t: &Tensor) -> Tensor {
    let [h, w, c] = *t.shape() else { unreachable!() };
    let mut out = Tensor::zeros(&[h, w, c]);
    {
        let ov = out.values_mut();
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    ov[(y * w + x) * c + ch] = t.idx3(y, w - 1 - x, ch);
                }
            }
        }
    }
    out
}

pub fn train_detector(
    corpus: &Corpus,
    partition: &Partition,
    architecture_id: ArchitectureId,
    config: &TrainConfig,
) -> Result<Detector, DetectorError> {
    if config.epochs == 0 || config.batch_size == 0 {
        return Err(DetectorError::Internal(
            "epochs and batch_size must be >= 1".into(),
        ));
    }
    let samples: Vec<(SampleId, f64)> = partition
        .part1
        .iter()
        .map(|&id| {
            let label = match id {
                SampleId::Bona(_) => 1.0,
                SampleId::Spoof(..) => 0.0,
            };
            (id, label)
        })
        .collect();
    let n_bona = samples.iter().filter(|(_, l)| *l == 1.0).count();
    let n_spoof = samples.len() - n_bona;
    if n_bona == 0 || n_spoof == 0 {
        return Err(DetectorError::SingleClass);
    }
    // class-balanced sample weights
    let w_bona = samples.len() as f64 / (2.0 * n_bona as f64);
    let w_spoof = samples.len() as f64 / (2.0 * n_spoof as f64);

    let (h, w, c) = corpus.bona_fide[0].dims();
    let mut detector = Detector::new(architecture_id, [h, w, c], mix(config.seed, 0xD7))?;
    let augment = architecture_id == ArchitectureId::B;

    // Adam state per parameterized layer (weights and bias separately)
    let mut states: Vec<Option<(AdamState, AdamState)>> = detector
        .layers()
        .iter()
        .map(|l| match l {
            Layer::Conv { weights, bias } | Layer::Dense { weights, bias } => Some((
                AdamState::new(weights.shape(), config.learning_rate, config.weight_decay),
                AdamState::new(bias.shape(), config.learning_rate, config.weight_decay),
            )),
            _ => None,
        })
        .collect();

    let debug = std::env::var_os("MALAFIDE_TRAIN_DEBUG").is_some();
    for epoch in 0..config.epochs {
        let mut epoch_loss = 0.0f64;
        let mut epoch_n = 0.0f64;
        let mut rng = ChaCha8Rng::seed_from_u64(mix(config.seed, 0x100 + epoch as u64));
        let mut order: Vec<usize> = (0..samples.len()).collect();
        for i in (1..order.len()).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }

        for batch in order.chunks(config.batch_size) {
            let mut grads: Vec<Option<(Tensor, Tensor)>> = detector
                .layers()
                .iter()
                .map(|l| match l {
                    Layer::Conv { weights, bias } | Layer::Dense { weights, bias } => Some((
                        Tensor::zeros(weights.shape()),
                        Tensor::zeros(bias.shape()),
                    )),
                    _ => None,
                })
                .collect();

            for &si in batch {
                let (id, label) = samples[si];
                let img = sample_image(corpus, id);
                let mut input = img.tensor().clone();
                if augment {
                    if rng.gen_bool(0.5) {
                        input = flip_horizontal(&input);
                    }
                    let delta: f64 = rng.gen_range(-0.05..0.05);
                    input = input.map(|v| (v + delta).clamp(0.0, 1.0));
                }
                let trace = super::layers::forward(detector.layers(), &input)?;
                let logit = trace.output.values()[0];
                let p = sigmoid(logit);
                let weight = if label == 1.0 { w_bona } else { w_spoof };
                if debug {
                    let eps = 1e-12;
                    epoch_loss -= weight
                        * (label * (p + eps).ln() + (1.0 - label) * (1.0 - p + eps).ln());
                    epoch_n += 1.0;
                }
                let d_logit = (p - label) * weight / batch.len() as f64;
                let back =
                    super::layers::backward(detector.layers(), &trace, d_logit, true, None)?;
                for (acc, g) in grads.iter_mut().zip(back.param_grads) {
                    if let (Some((aw, ab)), Some((gw, gb))) = (acc.as_mut(), g) {
                        for (a, b) in aw.values_mut().iter_mut().zip(gw.values()) {
                            *a += b;
                        }
                        for (a, b) in ab.values_mut().iter_mut().zip(gb.values()) {
                            *a += b;
                        }
                    }
                }
            }

            for (i, layer) in detector.layers_mut().iter_mut().enumerate() {
                if let (
                    Layer::Conv { weights, bias } | Layer::Dense { weights, bias },
                    Some((gw, gb)),
                    Some((sw, sb)),
                ) = (layer, &grads[i], &mut states[i])
                {
                    let (nw, nsw) = adam_step(weights, gw, sw)?;
                    let (nb, nsb) = adam_step(bias, gb, sb)?;
                    *weights = nw;
                    *bias = nb;
                    *sw = nsw;
                    *sb = nsb;
                }
            }
        }
        if debug {
            eprintln!(
                "epoch {epoch}: weighted BCE {:.4}",
                epoch_loss / epoch_n.max(1.0)
            );
        }
    }

    detector.freeze();
    Ok(detector)
}
