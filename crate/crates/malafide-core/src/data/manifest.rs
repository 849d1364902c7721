//! On-disk corpus layout: PPM files plus a manifest CSV with columns
//! `path,label,attack_id,partition`.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use super::{load_image, save_image, AttackId, Corpus, DataError, Image, Partition, SampleId};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Label {
    BonaFide,
    Spoof,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Part {
    One,
    Two,
}

impl Part {
    fn as_str(self) -> &'static str {
        match self {
            Part::One => "part1",
            Part::Two => "part2",
        }
    }
}

#[derive(Debug, Clone)]
pub struct ManifestEntry {
    pub path: String,
    pub label: Label,
    pub attack_id: Option<AttackId>,
    pub partition: Part,
}

#[derive(Debug)]
pub struct CorpusOnDisk {
    pub entries: Vec<ManifestEntry>,
    pub images: Vec<Image>,
}

impl CorpusOnDisk {
    pub fn bona(&self, part: Part) -> Vec<&Image> {
        self.entries
            .iter()
            .zip(&self.images)
            .filter(|(e, _)| e.label == Label::BonaFide && e.partition == part)
            .map(|(_, img)| img)
            .collect()
    }

    pub fn spoofs(&self, part: Part, attack: AttackId) -> Vec<&Image> {
        self.entries
            .iter()
            .zip(&self.images)
            .filter(|(e, _)| {
                e.label == Label::Spoof && e.partition == part && e.attack_id == Some(attack)
            })
            .map(|(_, img)| img)
            .collect()
    }

    /// Rebuild the in-memory corpus plus its partition from the manifest.
    /// Sample indices follow manifest order within each stratum.
    pub fn to_corpus(&self) -> (Corpus, Partition) {
        let mut corpus = Corpus {
            bona_fide: Vec::new(),
            spoofs: Vec::new(),
            seed: 0,
        };
        let mut partition = Partition {
            part1: Vec::new(),
            part2: Vec::new(),
        };
        for (entry, image) in self.entries.iter().zip(&self.images) {
            let id = match (entry.label, entry.attack_id) {
                (Label::BonaFide, _) => {
                    corpus.bona_fide.push(image.clone());
                    SampleId::Bona(corpus.bona_fide.len() - 1)
                }
                (Label::Spoof, Some(attack)) => {
                    if corpus.spoofs_for(attack).is_none() {
                        corpus.spoofs.push((attack, Vec::new()));
                    }
                    let bucket = &mut corpus
                        .spoofs
                        .iter_mut()
                        .find(|(a, _)| *a == attack)
                        .unwrap()
                        .1;
                    bucket.push(image.clone());
                    SampleId::Spoof(attack, bucket.len() - 1)
                }
                (Label::Spoof, None) => continue, // unreachable: loader validates
            };
            match entry.partition {
                Part::One => partition.part1.push(id),
                Part::Two => partition.part2.push(id),
            }
        }
        (corpus, partition)
    }

    pub fn attacks(&self) -> Vec<AttackId> {
        let mut out = Vec::new();
        for e in &self.entries {
            if let Some(a) = e.attack_id {
                if !out.contains(&a) {
                    out.push(a);
                }
            }
        }
        out
    }
}

fn io_err(path: &Path, e: std::io::Error) -> DataError {
    DataError::Io(path.display().to_string(), e.to_string())
}

/// Write every corpus image plus `manifest.csv` under `dir`.
pub fn save_corpus_dir(dir: &Path, corpus: &Corpus, partition: &Partition) -> Result<(), DataError> {
    fs::create_dir_all(dir.join("bona")).map_err(|e| io_err(dir, e))?;
    let part_of = |id: SampleId| {
        if partition.part1.contains(&id) {
            Part::One
        } else {
            Part::Two
        }
    };

    let mut manifest = String::from("path,label,attack_id,partition\n");
    for (i, img) in corpus.bona_fide.iter().enumerate() {
        let rel = format!("bona/{i:04}.ppm");
        save_image(img, &dir.join(&rel))?;
        manifest.push_str(&format!(
            "{rel},bona_fide,,{}\n",
            part_of(SampleId::Bona(i)).as_str()
        ));
    }
    for (attack, imgs) in &corpus.spoofs {
        let sub = dir.join("spoof").join(attack.name());
        fs::create_dir_all(&sub).map_err(|e| io_err(&sub, e))?;
        for (i, img) in imgs.iter().enumerate() {
            let rel = format!("spoof/{}/{i:04}.ppm", attack.name());
            save_image(img, &dir.join(&rel))?;
            manifest.push_str(&format!(
                "{rel},spoof,{},{}\n",
                attack.name(),
                part_of(SampleId::Spoof(*attack, i)).as_str()
            ));
        }
    }
    fs::write(dir.join("manifest.csv"), manifest).map_err(|e| io_err(dir, e))
}

/// Load a corpus directory written by [`save_corpus_dir`].
pub fn load_corpus_dir(dir: &Path) -> Result<CorpusOnDisk, DataError> {
    let manifest_path = dir.join("manifest.csv");
    let text = fs::read_to_string(&manifest_path).map_err(|e| io_err(&manifest_path, e))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, "path,label,attack_id,partition")) => {}
        _ => {
            return Err(DataError::BadManifest {
                line: 1,
                what: "missing header".into(),
            })
        }
    }

    let mut entries = Vec::new();
    let mut images = Vec::new();
    for (ln, line) in lines {
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 4 {
            return Err(DataError::BadManifest {
                line: ln + 1,
                what: format!("expected 4 columns, got {}", cols.len()),
            });
        }
        let label = match cols[1] {
            "bona_fide" => Label::BonaFide,
            "spoof" => Label::Spoof,
            other => {
                return Err(DataError::BadManifest {
                    line: ln + 1,
                    what: format!("bad label {other}"),
                })
            }
        };
        let attack_id = match (label, cols[2]) {
            (Label::BonaFide, "") => None,
            (Label::Spoof, s) => Some(AttackId::from_str(s)?),
            _ => {
                return Err(DataError::BadManifest {
                    line: ln + 1,
                    what: "bona_fide row with attack_id".into(),
                })
            }
        };
        let partition = match cols[3] {
            "part1" => Part::One,
            "part2" => Part::Two,
            other => {
                return Err(DataError::BadManifest {
                    line: ln + 1,
                    what: format!("bad partition {other}"),
                })
            }
        };
        images.push(load_image(&dir.join(cols[0]))?);
        entries.push(ManifestEntry {
            path: cols[0].to_string(),
            label,
            attack_id,
            partition,
        });
    }
    Ok(CorpusOnDisk { entries, images })
}
