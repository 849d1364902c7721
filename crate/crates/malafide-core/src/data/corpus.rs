//! Procedural face-like corpus and stratified 70/30 partitioning.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{AttackId, Corpus, DataError, Image, Partition, SampleId};
use crate::numcore::Tensor;

/// Where the face and its manipulated regions sit inside a bona fide image.
/// Exposed so tests can relate saliency maps to the manipulated band.
#[derive(Debug, Clone)]
pub struct FaceGeometry {
    pub cx: f64,
    pub cy: f64,
    pub rx: f64,
    pub ry: f64,
    /// Rows [start, end) of the eye band replaced by the region-swap attack.
    pub eye_band_rows: (usize, usize),
    /// Columns [start, end) of the eye band.
    pub eye_band_cols: (usize, usize),
}

impl FaceGeometry {
    pub fn in_face(&self, y: usize, x: usize) -> bool {
        let dy = (y as f64 - self.cy) / self.ry;
        let dx = (x as f64 - self.cx) / self.rx;
        dy * dy + dx * dx <= 1.0
    }

    pub fn in_eye_band(&self, y: usize, x: usize) -> bool {
        y >= self.eye_band_rows.0
            && y < self.eye_band_rows.1
            && x >= self.eye_band_cols.0
            && x < self.eye_band_cols.1
    }
}

fn mix_seed(seed: u64, salt: u64) -> u64 {
    // splitmix64 finalizer over seed + salt
    let mut z = seed
        .wrapping_add(salt.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

struct Ellipse {
    cy: f64,
    cx: f64,
    ry: f64,
    rx: f64,
}

impl Ellipse {
    fn contains(&self, y: usize, x: usize) -> bool {
        let dy = (y as f64 - self.cy) / self.ry;
        let dx = (x as f64 - self.cx) / self.rx;
        dy * dy + dx * dx <= 1.0
    }
}

fn generate_bona(rng: &mut ChaCha8Rng, h: usize, w: usize) -> (Vec<f64>, FaceGeometry) {
    let bg0: [f64; 3] = [
        rng.gen_range(0.20..0.55),
        rng.gen_range(0.25..0.60),
        rng.gen_range(0.35..0.70),
    ];
    let bg1: [f64; 3] = [
        rng.gen_range(0.20..0.55),
        rng.gen_range(0.25..0.60),
        rng.gen_range(0.35..0.70),
    ];
    let cx = w as f64 * rng.gen_range(0.42..0.58);
    let cy = h as f64 * rng.gen_range(0.44..0.56);
    let rx = w as f64 * rng.gen_range(0.26..0.34);
    let ry = h as f64 * rng.gen_range(0.30..0.38);
    let skin_r = rng.gen_range(0.62..0.80);
    let skin: [f64; 3] = [
        skin_r,
        skin_r * rng.gen_range(0.76..0.84),
        skin_r * rng.gen_range(0.58..0.68),
    ];
    let eye_y = cy - 0.35 * ry;
    let eye_dx = 0.45 * rx;
    let eye_r = (0.13 * rx).max(2.0);
    let eye_shade = rng.gen_range(0.06..0.18);
    let left_eye = Ellipse {
        cy: eye_y,
        cx: cx - eye_dx,
        ry: eye_r * 0.7,
        rx: eye_r,
    };
    let right_eye = Ellipse {
        cy: eye_y,
        cx: cx + eye_dx,
        ry: eye_r * 0.7,
        rx: eye_r,
    };
    let mouth = Ellipse {
        cy: cy + 0.45 * ry,
        cx,
        ry: (0.10 * ry).max(2.0),
        rx: 0.35 * rx,
    };
    let face = Ellipse { cy, cx, ry, rx };

    let mut vals = vec![0.0; h * w * 3];
    for y in 0..h {
        for x in 0..w {
            let t = 0.5 * (y as f64 / h as f64 + x as f64 / w as f64);
            let mut px = [
                bg0[0] + t * (bg1[0] - bg0[0]),
                bg0[1] + t * (bg1[1] - bg0[1]),
                bg0[2] + t * (bg1[2] - bg0[2]),
            ];
            if face.contains(y, x) {
                // light radial shading so the face is not flat
                let dy = (y as f64 - cy) / ry;
                let dx = (x as f64 - cx) / rx;
                let shade = 1.0 - 0.18 * (dy * dy + dx * dx);
                px = [skin[0] * shade, skin[1] * shade, skin[2] * shade];
            }
            if left_eye.contains(y, x) || right_eye.contains(y, x) {
                px = [eye_shade, eye_shade, eye_shade * 1.2];
            }
            if mouth.contains(y, x) {
                px = [0.52, 0.16, 0.18];
            }
            let base = (y * w + x) * 3;
            for c in 0..3 {
                vals[base + c] = px[c].clamp(0.0, 1.0);
            }
        }
    }

    let band_half = (0.20 * ry).ceil() as usize;
    let eye_row = eye_y.round() as usize;
    let geom = FaceGeometry {
        cx,
        cy,
        rx,
        ry,
        eye_band_rows: (
            eye_row.saturating_sub(band_half),
            (eye_row + band_half + 1).min(h),
        ),
        eye_band_cols: (
            (cx - rx).floor().max(0.0) as usize,
            ((cx + rx).ceil() as usize).min(w),
        ),
    };
    (vals, geom)
}

fn apply_region_swap(
    vals: &mut [f64],
    donor: &Image,
    geom: &FaceGeometry,
    w: usize,
) {
    let (r0, r1) = geom.eye_band_rows;
    let (c0, c1) = geom.eye_band_cols;
    for y in r0..r1 {
        for x in c0..c1 {
            let base = (y * w + x) * 3;
            for c in 0..3 {
                vals[base + c] = donor.pixel(y, x, c);
            }
        }
    }
    // 2-pixel seam at the top and bottom edges of the pasted band
    for dy in 0..2usize {
        for &y in &[r0 + dy, r1.saturating_sub(1 + dy)] {
            if y >= r0 && y < r1 {
                for x in c0..c1 {
                    let base = (y * w + x) * 3;
                    for c in 0..3 {
                        vals[base + c] *= 0.25;
                    }
                }
            }
        }
    }
}

fn apply_texture_noise(vals: &mut [f64], rng: &mut ChaCha8Rng, geom: &FaceGeometry, h: usize, w: usize) {
    for y in 0..h {
        for x in 0..w {
            if geom.in_face(y, x) {
                let base = (y * w + x) * 3;
                let n = rng.gen_range(-0.35..0.35);
                for c in 0..3 {
                    vals[base + c] = (vals[base + c] + n).clamp(0.0, 1.0);
                }
            }
        }
    }
}

fn apply_color_shift(vals: &mut [f64], geom: &FaceGeometry, h: usize, w: usize) {
    // Channel-wise affine shift inside the face, modulated row-by-row by a
    // zero-mean mix of a period-2 and a period-3 stripe. The modulation
    // averages to zero over any 6-row window, so the artifact lives in the
    // spatial high frequencies rather than in the global color balance.
    for y in 0..h {
        let p2 = if y % 2 == 0 { 1.0 } else { -1.0 };
        let p3 = if y % 3 == 0 { -1.4 } else { 0.7 };
        let m = 0.5 * p2 + 0.5 * p3;
        for x in 0..w {
            if geom.in_face(y, x) {
                let base = (y * w + x) * 3;
                vals[base] = (vals[base] + 0.10 * m).clamp(0.0, 1.0);
                vals[base + 1] = (vals[base + 1] - 0.08 * m).clamp(0.0, 1.0);
                vals[base + 2] = (vals[base + 2] + 0.09 * m).clamp(0.0, 1.0);
            }
        }
    }
}

/// Generate the corpus together with per-image face geometry.
pub fn generate_corpus_with_geometry(
    seed: u64,
    n_bona: usize,
    attack_ids: &[AttackId],
    height: usize,
    width: usize,
) -> Result<(Corpus, Vec<FaceGeometry>), DataError> {
    if n_bona < 4 {
        return Err(DataError::TooFewImages(n_bona));
    }
    if height < 32 || width < 32 {
        return Err(DataError::ImageTooSmall(height, width));
    }
    for (i, a) in attack_ids.iter().enumerate() {
        if attack_ids[..i].contains(a) {
            return Err(DataError::Internal(format!("duplicate attack id {a}")));
        }
    }

    let mut bona = Vec::with_capacity(n_bona);
    let mut geoms = Vec::with_capacity(n_bona);
    for i in 0..n_bona {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, i as u64));
        let (vals, geom) = generate_bona(&mut rng, height, width);
        bona.push(Image::new(
            Tensor::new(&[height, width, 3], vals).map_err(|e| DataError::Internal(e.to_string()))?,
        )?);
        geoms.push(geom);
    }

    let mut spoofs = Vec::new();
    for (ai, &attack) in attack_ids.iter().enumerate() {
        let mut imgs = Vec::with_capacity(n_bona);
        for i in 0..n_bona {
            let mut vals = bona[i].tensor().values().to_vec();
            match attack {
                AttackId::RegionSwap => {
                    let donor = &bona[(i + 1) % n_bona];
                    apply_region_swap(&mut vals, donor, &geoms[i], width);
                }
                AttackId::TextureNoise => {
                    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(
                        seed,
                        0x1000_0000 + (ai as u64) * 0x10_0000 + i as u64,
                    ));
                    apply_texture_noise(&mut vals, &mut rng, &geoms[i], height, width);
                }
                AttackId::ColorShift => {
                    apply_color_shift(&mut vals, &geoms[i], height, width);
                }
            }
            imgs.push(Image::new(
                Tensor::new(&[height, width, 3], vals)
                    .map_err(|e| DataError::Internal(e.to_string()))?,
            )?);
        }
        spoofs.push((attack, imgs));
    }

    Ok((
        Corpus {
            bona_fide: bona,
            spoofs,
            seed,
        },
        geoms,
    ))
}

pub fn generate_corpus(
    seed: u64,
    n_bona: usize,
    attack_ids: &[AttackId],
    height: usize,
    width: usize,
) -> Result<Corpus, DataError> {
    generate_corpus_with_geometry(seed, n_bona, attack_ids, height, width).map(|(c, _)| c)
}

/// Part-1 / part-2 sizes for a stratum of `n` images at `ratio`.
pub fn stratified_split_counts(n: usize, ratio: f64) -> (usize, usize) {
    let n1 = (ratio * n as f64).round() as usize;
    let n1 = n1.min(n);
    (n1, n - n1)
}

fn split_stratum(
    n: usize,
    ratio: f64,
    rng: &mut ChaCha8Rng,
    name: &str,
) -> Result<(Vec<usize>, Vec<usize>), DataError> {
    if n < 2 {
        return Err(DataError::StratumTooSmall {
            stratum: name.to_string(),
            size: n,
        });
    }
    let mut idx: Vec<usize> = (0..n).collect();
    // Fisher-Yates
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        idx.swap(i, j);
    }
    let (n1, _) = stratified_split_counts(n, ratio);
    let mut part1: Vec<usize> = idx[..n1].to_vec();
    let mut part2: Vec<usize> = idx[n1..].to_vec();
    part1.sort_unstable();
    part2.sort_unstable();
    Ok((part1, part2))
}

/// Stratified split: bona fide and each attack's spoofs are split
/// independently at the same ratio, shuffled by a seeded PRNG.
pub fn split_partition(corpus: &Corpus, ratio: f64, seed: u64) -> Result<Partition, DataError> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(DataError::BadRatio(ratio));
    }
    let mut part1 = Vec::new();
    let mut part2 = Vec::new();

    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0xB0BA));
    let (p1, p2) = split_stratum(corpus.bona_fide.len(), ratio, &mut rng, "bona-fide")?;
    part1.extend(p1.into_iter().map(SampleId::Bona));
    part2.extend(p2.into_iter().map(SampleId::Bona));

    for (si, (attack, imgs)) in corpus.spoofs.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x5B00 + si as u64));
        let (p1, p2) = split_stratum(imgs.len(), ratio, &mut rng, attack.name())?;
        part1.extend(p1.into_iter().map(|i| SampleId::Spoof(*attack, i)));
        part2.extend(p2.into_iter().map(|i| SampleId::Spoof(*attack, i)));
    }

    Ok(Partition { part1, part2 })
}
