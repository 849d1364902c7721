//! Command-line pipeline driver: corpus generation, detector training,
//! filter optimization, cross evaluation, and heatmap export. Every
//! subcommand is reproducible for a fixed seed; timestamps are confined
//! to the run metadata file.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use malafide_core::attack::{
    load_filter, optimize_filter, save_filter, AttackConfig, AttackError, MalafideFilter,
};
use malafide_core::data::{
    generate_corpus, load_corpus_dir, save_corpus_dir, split_partition, AttackId, CorpusOnDisk,
    Image, Part,
};
use malafide_core::detector::{
    load_detector, save_detector, train_detector, ArchitectureId, Detector, DetectorError,
    TrainConfig,
};
use malafide_core::eval::{cross_eval, EvalData};
use malafide_core::explain::{average_heatmaps, gradcam, render_heatmap, TargetLabel};
use malafide_core::numcore::NumError;

const EXIT_INPUT: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    fn input(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_INPUT,
            message: message.into(),
        }
    }

    fn numeric(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_NUMERIC,
            message: message.into(),
        }
    }
}

/// Detector training failures are input errors unless the numerics blew up.
fn detector_err(e: DetectorError) -> CliError {
    match e {
        DetectorError::Numeric(NumError::NonFinite(_)) => CliError::numeric(e.to_string()),
        other => CliError::input(other.to_string()),
    }
}

fn attack_err(e: AttackError) -> CliError {
    match e {
        AttackError::NonFiniteObjective { .. } => CliError::numeric(e.to_string()),
        AttackError::Numeric(NumError::NonFinite(_)) => CliError::numeric(e.to_string()),
        AttackError::Detector(d) => detector_err(d),
        other => CliError::input(other.to_string()),
    }
}

#[derive(Parser)]
#[command(
    name = "malafide",
    version,
    about = "Adversarial convolutional filters against toy deepfake detectors"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic face corpus with a train/test partition
    GenData(GenDataArgs),
    /// Train a detector on Part 1 of a generated corpus
    TrainDetector(TrainDetectorArgs),
    /// Optimize an attack filter against a frozen detector
    TrainFilter(TrainFilterArgs),
    /// Evaluate the white-box/black-box EER matrix on Part 2
    Eval(EvalArgs),
    /// Export averaged Grad-CAM heatmaps over Part 2
    Gradcam(GradcamArgs),
}

#[derive(Args)]
struct Common {
    /// RNG seed (flag overrides the config file; default 0)
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; all files are written beneath it
    #[arg(long)]
    out: PathBuf,
    /// Optional TOML config file; command-line flags take precedence
    #[arg(long)]
    config: Option<PathBuf>,
    /// Worker cap; 1 selects the bitwise-deterministic path
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct GenDataArgs {
    #[command(flatten)]
    common: Common,
    /// Number of bona fide images
    #[arg(long)]
    bona: Option<usize>,
    /// Comma-separated attack names
    #[arg(long, value_delimiter = ',')]
    attacks: Option<Vec<String>>,
    #[arg(long)]
    height: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    /// Part-1 fraction of the stratified split
    #[arg(long)]
    split_ratio: Option<f64>,
}

#[derive(Args)]
struct TrainDetectorArgs {
    #[command(flatten)]
    common: Common,
    /// Corpus directory written by gen-data
    #[arg(long)]
    data: PathBuf,
    /// Detector architecture: A or B
    #[arg(long)]
    arch: String,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
}

#[derive(Args)]
struct TrainFilterArgs {
    #[command(flatten)]
    common: Common,
    /// Corpus directory written by gen-data
    #[arg(long)]
    data: PathBuf,
    /// Frozen detector checkpoint to attack
    #[arg(long)]
    detector: PathBuf,
    /// Attack whose Part-1 spoofs train the filter
    #[arg(long)]
    attack: String,
    /// Filter side length L (odd)
    #[arg(long)]
    size: usize,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
    /// Stop once the monitored EER (percent) exceeds this
    #[arg(long)]
    eer_stop: Option<f64>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    /// Corpus directory written by gen-data
    #[arg(long)]
    data: PathBuf,
    /// Detector checkpoints (one or two)
    #[arg(long = "detector", required = true, value_delimiter = ',')]
    detectors: Vec<PathBuf>,
    /// Directory holding filter files named filter_{attack}_{L}_{detector}.bin
    #[arg(long)]
    filters: Option<PathBuf>,
    /// Comma-separated filter sizes to evaluate; empty for baseline only
    #[arg(long, value_delimiter = ',')]
    sizes: Vec<usize>,
}

#[derive(Args)]
struct GradcamArgs {
    #[command(flatten)]
    common: Common,
    /// Corpus directory written by gen-data
    #[arg(long)]
    data: PathBuf,
    /// Frozen detector checkpoint
    #[arg(long)]
    detector: PathBuf,
    /// Optional filter applied to this attack's spoofs before attribution
    #[arg(long)]
    filter: Option<PathBuf>,
}

// --- config file -----------------------------------------------------------

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    seed: Option<u64>,
    threads: Option<usize>,
    #[serde(default)]
    corpus: CorpusSection,
    #[serde(default)]
    detector: DetectorSection,
    #[serde(default)]
    attack: AttackSection,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct CorpusSection {
    bona: Option<usize>,
    attacks: Option<Vec<String>>,
    height: Option<usize>,
    width: Option<usize>,
    split_ratio: Option<f64>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct DetectorSection {
    epochs: Option<usize>,
    batch_size: Option<usize>,
    learning_rate: Option<f64>,
    weight_decay: Option<f64>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct AttackSection {
    learning_rate: Option<f64>,
    weight_decay: Option<f64>,
    batch_size: Option<usize>,
    max_epochs: Option<usize>,
    eer_stop: Option<f64>,
}

fn load_config(path: Option<&Path>) -> Result<FileConfig, CliError> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::input(format!("config {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::input(format!("config {}: {e}", path.display())))
}

/// Resolved common settings; `threads` is validated but the current build
/// executes every path single-threaded, so any value is deterministic.
struct Resolved {
    seed: u64,
    out: PathBuf,
    threads: usize,
    config: FileConfig,
}

fn resolve_common(common: &Common) -> Result<Resolved, CliError> {
    let config = load_config(common.config.as_deref())?;
    let threads = common.threads.or(config.threads).unwrap_or(1);
    if threads == 0 {
        return Err(CliError::input("--threads must be >= 1"));
    }
    Ok(Resolved {
        seed: common.seed.or(config.seed).unwrap_or(0),
        out: common.out.clone(),
        threads,
        config,
    })
}

fn write_metadata(
    out: &Path,
    subcommand: &str,
    effective: &[(&str, String)],
) -> Result<(), CliError> {
    let stamp = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let mut text = String::new();
    let _ = writeln!(text, "subcommand = \"{subcommand}\"");
    let _ = writeln!(text, "timestamp_unix = {stamp}");
    let _ = writeln!(text, "\n[effective]");
    for (k, v) in effective {
        let _ = writeln!(text, "{k} = \"{v}\"");
    }
    let path = out.join("run_metadata.toml");
    std::fs::write(&path, text)
        .map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

fn ensure_out(out: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(out).map_err(|e| CliError::input(format!("{}: {e}", out.display())))
}

fn parse_attacks(names: &[String]) -> Result<Vec<AttackId>, CliError> {
    let mut out = Vec::new();
    for name in names {
        let attack = AttackId::from_str(name).map_err(|e| CliError::input(e.to_string()))?;
        if out.contains(&attack) {
            return Err(CliError::input(format!("duplicate attack '{name}'")));
        }
        out.push(attack);
    }
    Ok(out)
}

fn load_corpus(dir: &Path) -> Result<CorpusOnDisk, CliError> {
    load_corpus_dir(dir).map_err(|e| CliError::input(format!("corpus {}: {e}", dir.display())))
}

fn load_detector_file(path: &Path) -> Result<Detector, CliError> {
    load_detector(path).map_err(|e| CliError::input(format!("detector {}: {e}", path.display())))
}

fn detector_id(detector: &Detector) -> String {
    detector.architecture_id.name().to_ascii_lowercase()
}

fn filter_file_name(attack: AttackId, size: usize, detector: &str) -> String {
    format!("filter_{attack}_{size}_{detector}.bin")
}

// --- subcommands -----------------------------------------------------------

fn cmd_gen_data(args: &GenDataArgs) -> Result<(), CliError> {
    let resolved = resolve_common(&args.common)?;
    let section = &resolved.config.corpus;
    let bona = args.bona.or(section.bona).unwrap_or(200);
    let height = args.height.or(section.height).unwrap_or(64);
    let width = args.width.or(section.width).unwrap_or(64);
    let ratio = args.split_ratio.or(section.split_ratio).unwrap_or(0.7);
    let attack_names = args
        .attacks
        .clone()
        .or_else(|| section.attacks.clone())
        .unwrap_or_else(|| AttackId::ALL.iter().map(|a| a.to_string()).collect());

    // validate everything before any file is created
    let attacks = parse_attacks(&attack_names)?;
    let corpus = generate_corpus(resolved.seed, bona, &attacks, height, width)
        .map_err(|e| CliError::input(e.to_string()))?;
    let partition = split_partition(&corpus, ratio, resolved.seed)
        .map_err(|e| CliError::input(e.to_string()))?;

    ensure_out(&resolved.out)?;
    save_corpus_dir(&resolved.out, &corpus, &partition)
        .map_err(|e| CliError::input(e.to_string()))?;
    write_metadata(
        &resolved.out,
        "gen-data",
        &[
            ("seed", resolved.seed.to_string()),
            ("threads", resolved.threads.to_string()),
            ("bona", bona.to_string()),
            ("attacks", attack_names.join(",")),
            ("height", height.to_string()),
            ("width", width.to_string()),
            ("split_ratio", ratio.to_string()),
        ],
    )?;

    let spoof_total: usize = corpus.spoofs.iter().map(|(_, v)| v.len()).sum();
    println!(
        "corpus: {} bona fide, {} spoofs across {} attacks ({}x{}), part1 {} / part2 {}",
        corpus.bona_fide.len(),
        spoof_total,
        corpus.spoofs.len(),
        height,
        width,
        partition.part1.len(),
        partition.part2.len()
    );
    Ok(())
}

fn cmd_train_detector(args: &TrainDetectorArgs) -> Result<(), CliError> {
    let resolved = resolve_common(&args.common)?;
    let arch =
        ArchitectureId::from_str(&args.arch).map_err(|e| CliError::input(e.to_string()))?;
    let section = &resolved.config.detector;
    let defaults = TrainConfig::default();
    let config = TrainConfig {
        epochs: args.epochs.or(section.epochs).unwrap_or(defaults.epochs),
        batch_size: args
            .batch_size
            .or(section.batch_size)
            .unwrap_or(defaults.batch_size),
        learning_rate: args
            .learning_rate
            .or(section.learning_rate)
            .unwrap_or(defaults.learning_rate),
        weight_decay: args
            .weight_decay
            .or(section.weight_decay)
            .unwrap_or(defaults.weight_decay),
        seed: resolved.seed,
    };

    let on_disk = load_corpus(&args.data)?;
    let (corpus, partition) = on_disk.to_corpus();
    let detector = train_detector(&corpus, &partition, arch, &config).map_err(detector_err)?;

    ensure_out(&resolved.out)?;
    let path = resolved
        .out
        .join(format!("detector_{}.bin", detector_id(&detector)));
    save_detector(&detector, &path).map_err(detector_err)?;
    write_metadata(
        &resolved.out,
        "train-detector",
        &[
            ("seed", resolved.seed.to_string()),
            ("threads", resolved.threads.to_string()),
            ("arch", arch.to_string()),
            ("epochs", config.epochs.to_string()),
            ("batch_size", config.batch_size.to_string()),
            ("learning_rate", config.learning_rate.to_string()),
            ("weight_decay", config.weight_decay.to_string()),
        ],
    )?;
    println!("trained detector {arch} -> {}", path.display());
    Ok(())
}

fn cmd_train_filter(args: &TrainFilterArgs) -> Result<(), CliError> {
    let resolved = resolve_common(&args.common)?;
    let attack = AttackId::from_str(&args.attack).map_err(|e| CliError::input(e.to_string()))?;
    let detector = load_detector_file(&args.detector)?;
    let section = &resolved.config.attack;
    let defaults = AttackConfig::default();
    // architecture B trains stably at a smaller step size
    let default_lr = match detector.architecture_id {
        ArchitectureId::A => 1e-2,
        ArchitectureId::B => 3e-3,
    };
    let config = AttackConfig {
        learning_rate: args
            .learning_rate
            .or(section.learning_rate)
            .unwrap_or(default_lr),
        weight_decay: args
            .weight_decay
            .or(section.weight_decay)
            .unwrap_or(defaults.weight_decay),
        batch_size: args
            .batch_size
            .or(section.batch_size)
            .unwrap_or(defaults.batch_size),
        max_epochs: args
            .max_epochs
            .or(section.max_epochs)
            .unwrap_or(defaults.max_epochs),
        eer_stop_threshold: args
            .eer_stop
            .or(section.eer_stop)
            .unwrap_or(defaults.eer_stop_threshold),
        seed: resolved.seed,
    };

    let on_disk = load_corpus(&args.data)?;
    let spoofs = on_disk.spoofs(Part::One, attack);
    let bona = on_disk.bona(Part::One);
    let (filter, log) = optimize_filter(&spoofs, &bona, &detector, attack, args.size, &config)
        .map_err(attack_err)?;

    ensure_out(&resolved.out)?;
    let det_id = detector_id(&detector);
    let filter_path = resolved
        .out
        .join(filter_file_name(attack, args.size, &det_id));
    save_filter(&filter, &filter_path).map_err(attack_err)?;
    let log_path = resolved
        .out
        .join(format!("filter_{attack}_{}_{det_id}_log.csv", args.size));
    std::fs::write(&log_path, log.to_csv())
        .map_err(|e| CliError::input(format!("{}: {e}", log_path.display())))?;
    write_metadata(
        &resolved.out,
        "train-filter",
        &[
            ("seed", resolved.seed.to_string()),
            ("threads", resolved.threads.to_string()),
            ("attack", attack.to_string()),
            ("size", args.size.to_string()),
            ("detector", det_id.clone()),
            ("learning_rate", config.learning_rate.to_string()),
            ("weight_decay", config.weight_decay.to_string()),
            ("batch_size", config.batch_size.to_string()),
            ("max_epochs", config.max_epochs.to_string()),
            ("eer_stop", config.eer_stop_threshold.to_string()),
            ("stop_reason", log.stop_reason.as_str().to_string()),
            ("epochs_run", log.records.len().to_string()),
        ],
    )?;
    let last = log.records.last().expect("log has >= 1 record");
    println!(
        "filter {attack} L={} vs {det_id}: {} epochs, final EER {:.2}%, stop {} -> {}",
        args.size,
        log.records.len(),
        last.eer,
        log.stop_reason.as_str(),
        filter_path.display()
    );
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> Result<(), CliError> {
    let resolved = resolve_common(&args.common)?;
    if args.detectors.len() > 2 {
        return Err(CliError::input(
            "eval accepts at most two --detector checkpoints",
        ));
    }
    let mut detectors = Vec::new();
    for path in &args.detectors {
        let det = load_detector_file(path)?;
        let id = detector_id(&det);
        if detectors.iter().any(|(existing, _)| *existing == id) {
            return Err(CliError::input(format!(
                "duplicate detector architecture '{id}'"
            )));
        }
        detectors.push((id, det));
    }

    let mut sizes = args.sizes.clone();
    sizes.sort_unstable();
    sizes.dedup();
    if !sizes.is_empty() && args.filters.is_none() {
        return Err(CliError::input("--filters is required when --sizes is set"));
    }

    let on_disk = load_corpus(&args.data)?;
    let attacks = on_disk.attacks();

    // every required filter must exist before anything is scored
    let mut filters = BTreeMap::new();
    let mut missing = Vec::new();
    if let Some(filter_dir) = &args.filters {
        for &(ref det_id, _) in &detectors {
            for &attack in &attacks {
                for &size in &sizes {
                    let path = filter_dir.join(filter_file_name(attack, size, det_id));
                    match load_filter(&path) {
                        Ok(f) => {
                            filters.insert((attack, size, det_id.clone()), f);
                        }
                        Err(_) => missing.push(path.display().to_string()),
                    }
                }
            }
        }
    }
    if !missing.is_empty() {
        return Err(CliError::input(format!(
            "missing filter artifacts:\n  {}",
            missing.join("\n  ")
        )));
    }

    let data = EvalData {
        bona: on_disk.bona(Part::Two),
        spoofs: attacks
            .iter()
            .map(|&a| (a, on_disk.spoofs(Part::Two, a)))
            .collect(),
    };
    let metadata = vec![
        ("seed".to_string(), resolved.seed.to_string()),
        (
            "detectors".to_string(),
            detectors
                .iter()
                .map(|(id, _)| id.as_str())
                .collect::<Vec<_>>()
                .join(","),
        ),
        (
            "sizes".to_string(),
            sizes
                .iter()
                .map(|s| s.to_string())
                .collect::<Vec<_>>()
                .join(","),
        ),
    ];
    let refs: Vec<(String, &Detector)> = detectors.iter().map(|(id, d)| (id.clone(), d)).collect();
    let report =
        cross_eval(&refs, &filters, &data, metadata).map_err(|e| CliError::input(e.to_string()))?;

    ensure_out(&resolved.out)?;
    let csv_path = resolved.out.join("report.csv");
    std::fs::write(&csv_path, report.to_csv())
        .map_err(|e| CliError::input(format!("{}: {e}", csv_path.display())))?;
    write_metadata(
        &resolved.out,
        "eval",
        &[
            ("seed", resolved.seed.to_string()),
            ("threads", resolved.threads.to_string()),
            (
                "sizes",
                sizes
                    .iter()
                    .map(|s| s.to_string())
                    .collect::<Vec<_>>()
                    .join(","),
            ),
        ],
    )?;
    print!("{}", report.to_table());
    println!("report -> {}", csv_path.display());
    Ok(())
}

fn cmd_gradcam(args: &GradcamArgs) -> Result<(), CliError> {
    let resolved = resolve_common(&args.common)?;
    let detector = load_detector_file(&args.detector)?;
    let det_id = detector_id(&detector);
    let filter: Option<MalafideFilter> = match &args.filter {
        Some(path) => Some(
            load_filter(path)
                .map_err(|e| CliError::input(format!("filter {}: {e}", path.display())))?,
        ),
        None => None,
    };
    let on_disk = load_corpus(&args.data)?;

    ensure_out(&resolved.out)?;
    let mut manifest = String::from("path,detector,attack_id,filter_size,label\n");
    let mut categories: Vec<(String, Option<AttackId>)> = vec![("bona".to_string(), None)];
    for attack in on_disk.attacks() {
        categories.push((attack.to_string(), Some(attack)));
    }

    for (name, attack) in &categories {
        let images: Vec<&Image> = match attack {
            None => on_disk.bona(Part::Two),
            Some(a) => on_disk.spoofs(Part::Two, *a),
        };
        if images.is_empty() {
            return Err(CliError::input(format!("no part2 images for '{name}'")));
        }
        // the filter only applies to spoofs of the attack it was trained on
        let active_filter = filter
            .as_ref()
            .filter(|f| *attack == Some(f.attack_id));
        let filtered: Vec<Image> = match active_filter {
            Some(f) => images
                .iter()
                .map(|img| {
                    malafide_core::attack::apply_filter(img, f).map_err(attack_err)
                })
                .collect::<Result<_, _>>()?,
            None => Vec::new(),
        };
        let inputs: Vec<&Image> = if active_filter.is_some() {
            filtered.iter().collect()
        } else {
            images
        };

        for label in [TargetLabel::BonaFide, TargetLabel::Spoof] {
            let maps = inputs
                .iter()
                .map(|img| gradcam(&detector, img, label))
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| CliError::input(e.to_string()))?;
            let avg = average_heatmaps(&maps).map_err(|e| CliError::input(e.to_string()))?;
            let file = format!("heatmap_{det_id}_{name}_{}.pgm", label.as_str());
            let path = resolved.out.join(&file);
            render_heatmap(&avg, None, &path).map_err(|e| CliError::input(e.to_string()))?;
            let size = active_filter
                .map(|f| f.size.to_string())
                .unwrap_or_default();
            let _ = writeln!(
                manifest,
                "{file},{det_id},{},{size},{}",
                attack.map(|a| a.to_string()).unwrap_or_default(),
                label.as_str()
            );
        }
    }

    let manifest_path = resolved.out.join("heatmaps.csv");
    std::fs::write(&manifest_path, &manifest)
        .map_err(|e| CliError::input(format!("{}: {e}", manifest_path.display())))?;
    write_metadata(
        &resolved.out,
        "gradcam",
        &[
            ("seed", resolved.seed.to_string()),
            ("threads", resolved.threads.to_string()),
            ("detector", det_id.clone()),
            (
                "filter",
                args.filter
                    .as_ref()
                    .map(|p| p.display().to_string())
                    .unwrap_or_default(),
            ),
        ],
    )?;
    println!(
        "wrote {} heatmaps -> {}",
        categories.len() * 2,
        resolved.out.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::GenData(args) => cmd_gen_data(args),
        Command::TrainDetector(args) => cmd_train_detector(args),
        Command::TrainFilter(args) => cmd_train_filter(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Gradcam(args) => cmd_gradcam(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
