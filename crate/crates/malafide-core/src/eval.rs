//! Fixed-polarity EER and the baseline / white-box / black-box
//! cross-evaluation matrix.
//!
//! Polarity is fixed: higher score means bona fide. FAR(t) is the fraction
//! of spoof scores >= t, FRR(t) the fraction of bona fide scores < t. The
//! EER is read off at the FAR/FRR crossing with linear interpolation
//! between adjacent sweep thresholds, ties broken toward the lower
//! threshold. Because the polarity never flips, a successful attack can
//! push the EER above 50%.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::attack::{apply_filter, AttackError, MalafideFilter};
use crate::data::{AttackId, Image};
use crate::detector::{DetectorError, Scorer};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("score set has an empty {0} list")]
    EmptyScores(&'static str),
    #[error("non-finite score in {0} list")]
    NonFiniteScore(&'static str),
    #[error("detector must be frozen for evaluation")]
    NotFrozen,
    #[error("black-box setting requires exactly 2 detectors, got {0}")]
    BlackBoxArity(usize),
    #[error("missing filters for configured cells: {0:?}")]
    MissingFilters(Vec<String>),
    #[error(transparent)]
    Detector(#[from] DetectorError),
    #[error(transparent)]
    Attack(#[from] AttackError),
}

/// Bona fide and spoof detector scores for one evaluation cell.
#[derive(Debug, Clone)]
pub struct ScoreSet {
    pub bona_scores: Vec<f64>,
    pub spoof_scores: Vec<f64>,
}

/// Equal error rate in percent, possibly above 50 (fixed polarity).
pub fn compute_eer(scores: &ScoreSet) -> Result<f64, EvalError> {
    let bona = &scores.bona_scores;
    let spoof = &scores.spoof_scores;
    if bona.is_empty() {
        return Err(EvalError::EmptyScores("bona fide"));
    }
    if spoof.is_empty() {
        return Err(EvalError::EmptyScores("spoof"));
    }
    if !bona.iter().all(|v| v.is_finite()) {
        return Err(EvalError::NonFiniteScore("bona fide"));
    }
    if !spoof.iter().all(|v| v.is_finite()) {
        return Err(EvalError::NonFiniteScore("spoof"));
    }

    let mut sorted_bona = bona.clone();
    let mut sorted_spoof = spoof.clone();
    sorted_bona.sort_by(|a, b| a.total_cmp(b));
    sorted_spoof.sort_by(|a, b| a.total_cmp(b));

    // sweep thresholds: sorted union of all scores plus a sentinel above
    // the maximum, so the sweep always ends at (FAR, FRR) = (0, 1)
    let mut thresholds: Vec<f64> = Vec::with_capacity(bona.len() + spoof.len() + 1);
    thresholds.extend_from_slice(&sorted_bona);
    thresholds.extend_from_slice(&sorted_spoof);
    thresholds.sort_by(|a, b| a.total_cmp(b));
    thresholds.dedup();
    thresholds.push(thresholds[thresholds.len() - 1] + 1.0);

    let frac_ge = |sorted: &[f64], t: f64| {
        // count of elements >= t
        let idx = sorted.partition_point(|&v| v < t);
        (sorted.len() - idx) as f64 / sorted.len() as f64
    };

    let mut prev: Option<(f64, f64)> = None;
    for &t in &thresholds {
        let far = frac_ge(&sorted_spoof, t);
        let frr = 1.0 - frac_ge(&sorted_bona, t);
        if let Some((pfar, pfrr)) = prev {
            // FAR non-increasing, FRR non-decreasing in t
            debug_assert!(far <= pfar && frr >= pfrr);
            let d_prev = pfar - pfrr;
            let d_cur = far - frr;
            if d_prev >= 0.0 && d_cur <= 0.0 {
                if d_prev == 0.0 {
                    // tie at the lower threshold
                    return Ok(100.0 * pfar);
                }
                let t_star = d_prev / (d_prev - d_cur);
                return Ok(100.0 * (pfar + t_star * (far - pfar)));
            }
        }
        prev = Some((far, frr));
    }
    // the sentinel guarantees the sweep crosses; first threshold has
    // FAR = 1, FRR = 0
    unreachable!("FAR/FRR sweep did not cross");
}

/// Score `images` in order, applying `filter` first when present.
pub fn score_partition<S: Scorer>(
    detector: &S,
    images: &[&Image],
    filter: Option<&MalafideFilter>,
) -> Result<Vec<f64>, EvalError> {
    if !detector.frozen() {
        return Err(EvalError::NotFrozen);
    }
    let mut out = Vec::with_capacity(images.len());
    for img in images {
        let score = match filter {
            Some(f) => detector.score_image(&apply_filter(img, f)?)?,
            None => detector.score_image(img)?,
        };
        out.push(score);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Setting {
    Baseline,
    White,
    Black,
}

impl Setting {
    pub fn as_str(self) -> &'static str {
        match self {
            Setting::Baseline => "baseline",
            Setting::White => "white",
            Setting::Black => "black",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct CellKey {
    pub detector: String,
    pub attack: AttackId,
    pub filter_size: Option<usize>,
    pub setting: Setting,
}

/// EER values per (detector, attack, filter size, setting) cell.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub cells: BTreeMap<CellKey, f64>,
    pub metadata: Vec<(String, String)>,
}

impl EvalReport {
    pub fn get(&self, detector: &str, attack: AttackId, size: Option<usize>, setting: Setting) -> Option<f64> {
        self.cells
            .get(&CellKey {
                detector: detector.to_string(),
                attack,
                filter_size: size,
                setting,
            })
            .copied()
    }

    /// CSV with columns detector,attack,filter_size,setting,eer_percent.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("detector,attack,filter_size,setting,eer_percent\n");
        for (key, eer) in &self.cells {
            let size = key
                .filter_size
                .map(|l| l.to_string())
                .unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{:.4}\n",
                key.detector,
                key.attack,
                size,
                key.setting.as_str(),
                eer
            ));
        }
        out
    }

    /// Human-readable aligned table, one block per detector.
    pub fn to_table(&self) -> String {
        let mut detectors: Vec<&str> = self.cells.keys().map(|k| k.detector.as_str()).collect();
        detectors.sort_unstable();
        detectors.dedup();
        let mut attacks: Vec<AttackId> = self.cells.keys().map(|k| k.attack).collect();
        attacks.sort_unstable();
        attacks.dedup();
        let mut sizes: Vec<usize> = self.cells.keys().filter_map(|k| k.filter_size).collect();
        sizes.sort_unstable();
        sizes.dedup();

        let mut out = String::new();
        for det in &detectors {
            out.push_str(&format!("detector {det} (EER %)\n"));
            out.push_str(&format!("{:<16}{:>10}", "attack", "baseline"));
            for &l in &sizes {
                for setting in [Setting::White, Setting::Black] {
                    let key = format!("{} L={l}", match setting {
                        Setting::White => "W",
                        Setting::Black => "B",
                        Setting::Baseline => unreachable!(),
                    });
                    out.push_str(&format!("{key:>10}"));
                }
            }
            out.push('\n');
            for &attack in &attacks {
                out.push_str(&format!("{:<16}", attack.to_string()));
                let fmt = |v: Option<f64>| match v {
                    Some(e) => format!("{e:>10.2}"),
                    None => format!("{:>10}", "-"),
                };
                out.push_str(&fmt(self.get(det, attack, None, Setting::Baseline)));
                for &l in &sizes {
                    out.push_str(&fmt(self.get(det, attack, Some(l), Setting::White)));
                    out.push_str(&fmt(self.get(det, attack, Some(l), Setting::Black)));
                }
                out.push('\n');
            }
            out.push('\n');
        }
        out
    }
}

/// Held-out (Part 2) images fed to the evaluation matrix.
pub struct EvalData<'a> {
    pub bona: Vec<&'a Image>,
    pub spoofs: Vec<(AttackId, Vec<&'a Image>)>,
}

/// Full white-box/black-box matrix. Bona fide images are never filtered;
/// baseline cells score unfiltered spoofs; white cells apply the filter
/// trained on the evaluating detector; black cells apply the filter
/// trained on the other detector.
pub fn cross_eval<S: Scorer>(
    detectors: &[(String, &S)],
    filters: &BTreeMap<(AttackId, usize, String), MalafideFilter>,
    data: &EvalData<'_>,
    metadata: Vec<(String, String)>,
) -> Result<EvalReport, EvalError> {
    for (_, d) in detectors {
        if !d.frozen() {
            return Err(EvalError::NotFrozen);
        }
    }
    let sizes: Vec<usize> = {
        let mut s: Vec<usize> = filters.keys().map(|(_, l, _)| *l).collect();
        s.sort_unstable();
        s.dedup();
        s
    };
    let black_enabled = detectors.len() > 1;
    if black_enabled && detectors.len() != 2 {
        return Err(EvalError::BlackBoxArity(detectors.len()));
    }

    // validate every configured cell before scoring anything
    let mut missing = Vec::new();
    for (det_id, _) in detectors {
        for (attack, _) in &data.spoofs {
            for &l in &sizes {
                let white_key = (*attack, l, det_id.clone());
                if !filters.contains_key(&white_key) {
                    missing.push(format!("filter {attack} L={l} trained on {det_id}"));
                }
            }
        }
    }
    missing.sort_unstable();
    missing.dedup();
    if !missing.is_empty() {
        return Err(EvalError::MissingFilters(missing));
    }

    let mut cells = BTreeMap::new();
    for (det_id, det) in detectors {
        let bona_scores = score_partition(*det, &data.bona, None)?;
        let other_id = detectors
            .iter()
            .map(|(id, _)| id)
            .find(|id| *id != det_id)
            .cloned();
        for (attack, spoof_imgs) in &data.spoofs {
            let mut cell = |size, setting, filter: Option<&MalafideFilter>| -> Result<(), EvalError> {
                let spoof_scores = score_partition(*det, spoof_imgs, filter)?;
                let eer = compute_eer(&ScoreSet {
                    bona_scores: bona_scores.clone(),
                    spoof_scores,
                })?;
                cells.insert(
                    CellKey {
                        detector: det_id.clone(),
                        attack: *attack,
                        filter_size: size,
                        setting,
                    },
                    eer,
                );
                Ok(())
            };
            cell(None, Setting::Baseline, None)?;
            for &l in &sizes {
                let white = &filters[&(*attack, l, det_id.clone())];
                cell(Some(l), Setting::White, Some(white))?;
                if let Some(other) = &other_id {
                    let black = &filters[&(*attack, l, other.clone())];
                    cell(Some(l), Setting::Black, Some(black))?;
                }
            }
        }
    }
    Ok(EvalReport { cells, metadata })
}
