//! Experiment orchestration: config parsing, master-seed derivation, and the
//! pipeline / individual / layer-study / fig1 commands with their CSV, JSON,
//! and PGM outputs.
//!
//! Every artifact byte is determined by (config, seed); wall-clock timestamps
//! go only into `manifest.txt`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::attacks::{self, AttackBudget, AttackKind, AttackOutcome};
use crate::data::{self, DetectionDataset, DetectionOptions, Image, LabeledImages};
use crate::detectors::{Detector, DetectorKind};
use crate::error::{Error, Result};
use crate::metrics::{self, EvalReport, ReportConfig};
use crate::smallnet::{Architecture, Network};
use crate::spectral::{self, FeatureMode};

/// Where the experiment's labeled images come from.
#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSource {
    Synthetic { classes: usize, per_class: usize, size: usize },
    CifarBinary { path: PathBuf },
}

/// Fully resolved experiment configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    pub epochs: usize,
    pub learning_rate: f64,
    pub attacks: Vec<AttackKind>,
    pub epsilons: Vec<f64>,
    pub steps: usize,
    pub modes: Vec<FeatureMode>,
    pub detectors: Vec<DetectorKind>,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub log_scale: bool,
    pub quantize_8bit: bool,
    /// Cap on the number of correctly-classified test samples attacked per ε.
    pub attack_samples: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: DatasetSource::Synthetic { classes: 2, per_class: 500, size: 32 },
            epochs: 12,
            learning_rate: 0.02,
            attacks: vec![AttackKind::Pgd],
            epsilons: vec![8.0 / 255.0],
            steps: 40,
            modes: vec![FeatureMode::Black],
            detectors: vec![DetectorKind::Forest],
            seed: 0,
            out_dir: PathBuf::from("runs/default"),
            log_scale: false,
            quantize_8bit: false,
            attack_samples: 100,
        }
    }
}

/// Accepts "8/255" fraction syntax as well as plain decimals.
pub fn parse_epsilon(s: &str) -> Result<f64> {
    let value = if let Some((num, den)) = s.split_once('/') {
        let n: f64 = num.trim().parse().map_err(|_| bad_eps(s))?;
        let d: f64 = den.trim().parse().map_err(|_| bad_eps(s))?;
        n / d
    } else {
        s.trim().parse().map_err(|_| bad_eps(s))?
    };
    if !(value > 0.0 && value <= 1.0) {
        return Err(Error::Config(format!("epsilon {s} not in (0,1]")));
    }
    Ok(value)
}

fn bad_eps(s: &str) -> Error {
    Error::Config(format!("cannot parse epsilon '{s}'"))
}

impl ExperimentConfig {
    /// Parse the flat key=value config format; repeated keys form lists.
    pub fn parse(text: &str) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::default();
        let mut white_layers: Vec<String> = Vec::new();
        let mut attacks = Vec::new();
        let mut epsilons = Vec::new();
        let mut modes: Vec<String> = Vec::new();
        let mut detectors = Vec::new();
        let mut dataset_kind = String::from("synthetic");
        let mut cifar_path = None;
        let (mut classes, mut per_class, mut size) = (2usize, 500usize, 32usize);

        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", lineno + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            let parse_usize = |v: &str| {
                v.parse::<usize>()
                    .map_err(|_| Error::Config(format!("line {}: bad integer '{v}'", lineno + 1)))
            };
            let parse_bool = |v: &str| match v {
                "true" | "1" | "yes" => Ok(true),
                "false" | "0" | "no" => Ok(false),
                _ => Err(Error::Config(format!("line {}: bad bool '{v}'", lineno + 1))),
            };
            match key {
                "dataset" => dataset_kind = value.to_string(),
                "cifar_path" => cifar_path = Some(PathBuf::from(value)),
                "classes" => classes = parse_usize(value)?,
                "per_class" => per_class = parse_usize(value)?,
                "image_size" => size = parse_usize(value)?,
                "epochs" => cfg.epochs = parse_usize(value)?,
                "lr" => {
                    cfg.learning_rate = value
                        .parse()
                        .map_err(|_| Error::Config(format!("line {}: bad lr '{value}'", lineno + 1)))?
                }
                "attack" => attacks.push(AttackKind::parse(value)?),
                "epsilon" => epsilons.push(parse_epsilon(value)?),
                "steps" => cfg.steps = parse_usize(value)?,
                "mode" => modes.push(value.to_string()),
                "layer" => white_layers.push(value.to_string()),
                "detector" => detectors.push(DetectorKind::parse(value)?),
                "seed" => cfg.seed = parse_usize(value)? as u64,
                "out" => cfg.out_dir = PathBuf::from(value),
                "log_scale" => cfg.log_scale = parse_bool(value)?,
                "quantize_8bit" => cfg.quantize_8bit = parse_bool(value)?,
                "attack_samples" => cfg.attack_samples = parse_usize(value)?,
                other => return Err(Error::Config(format!("line {}: unknown key '{other}'", lineno + 1))),
            }
        }

        cfg.dataset = match dataset_kind.as_str() {
            "synthetic" => DatasetSource::Synthetic { classes, per_class, size },
            "cifar" => DatasetSource::CifarBinary {
                path: cifar_path.ok_or_else(|| Error::Config("dataset=cifar needs cifar_path".into()))?,
            },
            other => return Err(Error::Config(format!("unknown dataset '{other}'"))),
        };
        if !attacks.is_empty() {
            cfg.attacks = attacks;
        }
        if !epsilons.is_empty() {
            cfg.epsilons = epsilons;
        }
        if !detectors.is_empty() {
            cfg.detectors = detectors;
        }
        if !modes.is_empty() {
            cfg.modes = modes
                .iter()
                .map(|m| match m.as_str() {
                    "black" => Ok(FeatureMode::Black),
                    "white" => {
                        if white_layers.is_empty() {
                            Err(Error::Config("mode=white needs at least one layer= entry".into()))
                        } else {
                            Ok(FeatureMode::White { layers: white_layers.clone() })
                        }
                    }
                    other => Err(Error::Config(format!("unknown mode '{other}' (black, white)"))),
                })
                .collect::<Result<_>>()?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.epsilons.is_empty() {
            return Err(Error::Config("epsilon list must be non-empty".into()));
        }
        for &e in &self.epsilons {
            if !(e > 0.0 && e <= 1.0) {
                return Err(Error::Config(format!("epsilon {e} not in (0,1]")));
            }
        }
        if self.attacks.is_empty() {
            return Err(Error::Config("attack list must be non-empty".into()));
        }
        if self.modes.is_empty() || self.detectors.is_empty() {
            return Err(Error::Config("need at least one mode and one detector".into()));
        }
        Ok(())
    }

    /// Resolved config as the flat text format (deterministic byte output).
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        match &self.dataset {
            DatasetSource::Synthetic { classes, per_class, size } => {
                let _ = writeln!(s, "dataset = synthetic");
                let _ = writeln!(s, "classes = {classes}");
                let _ = writeln!(s, "per_class = {per_class}");
                let _ = writeln!(s, "image_size = {size}");
            }
            DatasetSource::CifarBinary { path } => {
                let _ = writeln!(s, "dataset = cifar");
                let _ = writeln!(s, "cifar_path = {}", path.display());
            }
        }
        let _ = writeln!(s, "epochs = {}", self.epochs);
        let _ = writeln!(s, "lr = {}", self.learning_rate);
        for a in &self.attacks {
            let _ = writeln!(s, "attack = {}", a.name());
        }
        for e in &self.epsilons {
            let _ = writeln!(s, "epsilon = {e}");
        }
        let _ = writeln!(s, "steps = {}", self.steps);
        for m in &self.modes {
            match m {
                FeatureMode::Black => {
                    let _ = writeln!(s, "mode = black");
                }
                FeatureMode::White { layers } => {
                    let _ = writeln!(s, "mode = white");
                    for l in layers {
                        let _ = writeln!(s, "layer = {l}");
                    }
                }
            }
        }
        for d in &self.detectors {
            let _ = writeln!(s, "detector = {}", d.name());
        }
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "out = {}", self.out_dir.display());
        let _ = writeln!(s, "log_scale = {}", self.log_scale);
        let _ = writeln!(s, "quantize_8bit = {}", self.quantize_8bit);
        let _ = writeln!(s, "attack_samples = {}", self.attack_samples);
        s
    }
}

fn fnv1a64(s: &str) -> u64 {
    let mut h = 0xcbf29ce484222325u64;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Stage-scoped seed derived from the master seed and the stage name.
pub fn derive_seed(master: u64, stage: &str) -> u64 {
    splitmix64(master ^ fnv1a64(stage))
}

pub fn mode_name(mode: &FeatureMode) -> String {
    match mode {
        FeatureMode::Black => "black".to_string(),
        FeatureMode::White { .. } => "white".to_string(),
    }
}

/// Trained target plus the attack pool (correctly-classified held-out
/// samples, capped to `attack_samples`).
pub struct PreparedTarget {
    pub net: Network,
    pub train_set: LabeledImages,
    pub test_set: LabeledImages,
    pub pool_images: Vec<Image>,
    pub pool_labels: Vec<usize>,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
}

pub fn load_dataset(cfg: &ExperimentConfig) -> Result<LabeledImages> {
    match &cfg.dataset {
        DatasetSource::Synthetic { classes, per_class, size } => {
            Ok(data::synth_dataset(*classes, *per_class, *size, derive_seed(cfg.seed, "data")))
        }
        DatasetSource::CifarBinary { path } => data::load_cifar10_binary(path),
    }
}

/// Correctly-classified held-out samples selected for attack.
pub struct AttackPool {
    pub images: Vec<Image>,
    pub labels: Vec<usize>,
}

/// Rebuild the attack pool for a saved net: same dataset, same split, same
/// correctness filter and cap as [`prepare_target`].
pub fn attack_pool(cfg: &ExperimentConfig, net: &Network) -> Result<AttackPool> {
    let dataset = load_dataset(cfg)?;
    let (_, test_set) = dataset.split(0.8, derive_seed(cfg.seed, "split"));
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for (img, &label) in test_set.images.iter().zip(&test_set.labels) {
        if images.len() >= cfg.attack_samples {
            break;
        }
        if net.predict(img)? == label {
            images.push(img.clone());
            labels.push(label);
        }
    }
    if images.is_empty() {
        return Err(Error::Data("no correctly-classified test samples to attack".into()));
    }
    Ok(AttackPool { images, labels })
}

/// Run the configured cascade at one ε over the pool.
pub fn run_cascade(
    cfg: &ExperimentConfig,
    net: &Network,
    pool: &AttackPool,
    epsilon: f64,
) -> Result<(Vec<AttackOutcome>, AttackBudget)> {
    let budget = budget_for(cfg, epsilon, &format!("attack/{}", eps_dir_name(epsilon)));
    let outcomes =
        attacks::standard_cascade(net, &pool.images, &pool.labels, &cfg.attacks, &budget)?;
    Ok((outcomes, budget))
}

/// Train the target net and select the attack pool.
pub fn prepare_target(cfg: &ExperimentConfig) -> Result<PreparedTarget> {
    let dataset = load_dataset(cfg)?;
    let (train_set, test_set) = dataset.split(0.8, derive_seed(cfg.seed, "split"));
    let arch = Architecture::default_for(dataset.class_count);
    let net = Network::new(arch, derive_seed(cfg.seed, "init"))?;
    let net = net.train(&train_set, cfg.epochs, cfg.learning_rate, derive_seed(cfg.seed, "train"))?;
    for mode in &cfg.modes {
        if let FeatureMode::White { layers } = mode {
            for l in layers {
                net.layer_shape(l)?;
            }
        }
    }
    let train_accuracy = net.accuracy(&train_set)?;
    let test_accuracy = net.accuracy(&test_set)?;
    let pool = attack_pool(cfg, &net)?;
    Ok(PreparedTarget {
        net,
        train_set,
        test_set,
        pool_images: pool.images,
        pool_labels: pool.labels,
        train_accuracy,
        test_accuracy,
    })
}

fn budget_for(cfg: &ExperimentConfig, epsilon: f64, stage: &str) -> AttackBudget {
    AttackBudget {
        epsilon,
        steps: cfg.steps,
        step_size: epsilon / 4.0,
        seed: derive_seed(cfg.seed, stage),
        random_start: true,
    }
}

fn detection_options(cfg: &ExperimentConfig, mode: &FeatureMode) -> DetectionOptions {
    DetectionOptions {
        mode: mode.clone(),
        log_scale: cfg.log_scale,
        quantize_8bit: cfg.quantize_8bit,
    }
}

/// Train a detector on the dataset's train split and evaluate on the test
/// split.
pub fn train_and_evaluate(
    ds: &DetectionDataset,
    kind: DetectorKind,
    asr: f64,
    config: ReportConfig,
) -> Result<(Detector, EvalReport)> {
    let train = ds.train_set();
    let detector = Detector::train(&train, kind, derive_seed(ds.seed, "detector"))?;
    let predictions: Vec<(f64, u8)> = ds
        .test_set()
        .iter()
        .map(|f| detector.predict(&f.values).map(|p| (p, f.label)))
        .collect::<Result<_>>()?;
    let report = metrics::evaluate_detector(&predictions, asr, config)?;
    Ok((detector, report))
}

fn stage_err(stage: &str, e: Error) -> Error {
    match e {
        Error::Config(m) => Error::Config(format!("stage {stage}: {m}")),
        Error::NonFinite(m) => Error::NonFinite(format!("stage {stage}: {m}")),
        other => Error::Data(format!("stage {stage}: {other}")),
    }
}

fn write_manifest(dir: &Path, command: &str) -> Result<()> {
    let now = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    fs::write(dir.join("manifest.txt"), format!("command={command}\nunix_time={now}\n"))?;
    Ok(())
}

/// Directory name for one ε of the sweep.
pub fn eps_dir_name(epsilon: f64) -> String {
    format!("eps{epsilon:.6}")
}

/// One evaluated configuration of the pipeline sweep.
#[derive(Debug, Clone)]
pub struct PipelineCell {
    pub epsilon: f64,
    pub mode: String,
    pub detector: String,
    pub report: EvalReport,
}

#[derive(Debug, Clone)]
pub struct PipelineSummary {
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub asr_per_epsilon: Vec<(f64, f64)>,
    pub cells: Vec<PipelineCell>,
}

/// Full sweep: train target, attack per ε with the configured cascade, build
/// detection datasets per mode, train and evaluate each detector, and emit
/// per-cell reports plus a per-detector summary CSV.
pub fn cmd_pipeline(cfg: &ExperimentConfig) -> Result<PipelineSummary> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.out_dir)?;
    fs::write(cfg.out_dir.join("config.txt"), cfg.to_text())?;
    write_manifest(&cfg.out_dir, "pipeline")?;

    let target = prepare_target(cfg).map_err(|e| stage_err("train-target", e))?;
    target.net.save_file(&cfg.out_dir.join("net.ssnet"))?;

    let mut summary = PipelineSummary {
        train_accuracy: target.train_accuracy,
        test_accuracy: target.test_accuracy,
        asr_per_epsilon: Vec::new(),
        cells: Vec::new(),
    };

    for &epsilon in &cfg.epsilons {
        let tag = eps_dir_name(epsilon);
        let eps_dir = cfg.out_dir.join(&tag);
        fs::create_dir_all(&eps_dir)?;
        let budget = budget_for(cfg, epsilon, &format!("attack/{tag}"));
        let outcomes = attacks::standard_cascade(
            &target.net,
            &target.pool_images,
            &target.pool_labels,
            &cfg.attacks,
            &budget,
        )
        .map_err(|e| stage_err("attack", e))?;
        attacks::save_outcomes_file(&eps_dir.join("outcomes.bin"), &outcomes, &budget)?;
        let asr = metrics::compute_asr(&outcomes)?;
        summary.asr_per_epsilon.push((epsilon, asr));

        for mode in &cfg.modes {
            let opts = detection_options(cfg, mode);
            let ds = data::build_detection_dataset(
                &target.pool_images,
                &outcomes,
                &target.net,
                &opts,
                derive_seed(cfg.seed, &format!("detect/{tag}/{}", mode_name(mode))),
            )
            .map_err(|e| stage_err("features", e))?;
            for &kind in &cfg.detectors {
                let rc = ReportConfig {
                    epsilon,
                    mode: mode_name(mode),
                    detector: kind.name().to_string(),
                    seed: cfg.seed,
                };
                let (_, report) = train_and_evaluate(&ds, kind, asr, rc)
                    .map_err(|e| stage_err("evaluate", e))?;
                let stem = format!("report_{}_{}", mode_name(mode), kind.name());
                fs::write(eps_dir.join(format!("{stem}.json")), report.to_json())?;
                fs::write(
                    eps_dir.join(format!("{stem}.csv")),
                    format!("{}\n{}\n", EvalReport::CSV_HEADER, report.csv_row()),
                )?;
                summary.cells.push(PipelineCell {
                    epsilon,
                    mode: mode_name(mode),
                    detector: kind.name().to_string(),
                    report,
                });
            }
        }
    }

    for &kind in &cfg.detectors {
        let mut csv = String::from("epsilon,asr");
        for mode in &cfg.modes {
            let m = mode_name(mode);
            let _ = write!(csv, ",f1_{m},fnr_{m},asrd_{m}");
        }
        csv.push('\n');
        for (i, &epsilon) in cfg.epsilons.iter().enumerate() {
            let asr = summary.asr_per_epsilon[i].1;
            let _ = write!(csv, "{epsilon},{:.1}", 100.0 * asr);
            for mode in &cfg.modes {
                let m = mode_name(mode);
                let cell = summary
                    .cells
                    .iter()
                    .find(|c| c.epsilon == epsilon && c.mode == m && c.detector == kind.name())
                    .expect("cell exists for every (eps, mode, detector)");
                let r = &cell.report;
                let _ = write!(csv, ",{:.1},{:.1},{:.1}", 100.0 * r.f1, 100.0 * r.fnr, 100.0 * r.asrd);
            }
            csv.push('\n');
        }
        fs::write(cfg.out_dir.join(format!("summary_{}.csv", kind.name())), csv)?;
    }
    Ok(summary)
}

#[derive(Debug, Clone)]
pub struct IndividualSummary {
    /// (attack, mode, detector) -> report for detectors trained and tested on
    /// the same attack.
    pub reports: Vec<(String, String, String, EvalReport)>,
    /// Cross-attack F1 matrix per (mode, detector): f1[train_attack][test_attack].
    pub cross_f1: Vec<(String, String, Vec<Vec<f64>>)>,
}

/// Individual mode: every configured attack runs on all pool samples; one
/// report per (attack, mode, detector) plus the cross-attack F1 matrix.
pub fn cmd_individual(cfg: &ExperimentConfig) -> Result<IndividualSummary> {
    cfg.validate()?;
    let out = cfg.out_dir.join("individual");
    fs::create_dir_all(&out)?;
    fs::write(cfg.out_dir.join("config.txt"), cfg.to_text())?;
    write_manifest(&cfg.out_dir, "individual")?;
    let epsilon = cfg.epsilons[0];
    let target = prepare_target(cfg).map_err(|e| stage_err("train-target", e))?;

    // one outcome set per attack, all on the full pool
    let mut per_attack: Vec<(AttackKind, Vec<AttackOutcome>, f64)> = Vec::new();
    for &kind in &cfg.attacks {
        let budget = budget_for(cfg, epsilon, &format!("attack/{}", kind.name()));
        let outcomes = attacks::standard_cascade(
            &target.net,
            &target.pool_images,
            &target.pool_labels,
            &[kind],
            &budget,
        )
        .map_err(|e| stage_err("attack", e))?;
        let asr = metrics::compute_asr(&outcomes)?;
        per_attack.push((kind, outcomes, asr));
    }

    let mut summary = IndividualSummary { reports: Vec::new(), cross_f1: Vec::new() };
    for mode in &cfg.modes {
        let opts = detection_options(cfg, mode);
        let datasets: Vec<DetectionDataset> = per_attack
            .iter()
            .map(|(kind, outcomes, _)| {
                data::build_detection_dataset(
                    &target.pool_images,
                    outcomes,
                    &target.net,
                    &opts,
                    derive_seed(cfg.seed, &format!("detect/{}/{}", kind.name(), mode_name(mode))),
                )
                .map_err(|e| stage_err("features", e))
            })
            .collect::<Result<_>>()?;

        for &det in &cfg.detectors {
            let mut trained = Vec::new();
            for ((kind, _, asr), ds) in per_attack.iter().zip(&datasets) {
                let rc = ReportConfig {
                    epsilon,
                    mode: mode_name(mode),
                    detector: det.name().to_string(),
                    seed: cfg.seed,
                };
                let (detector, report) =
                    train_and_evaluate(ds, det, *asr, rc).map_err(|e| stage_err("evaluate", e))?;
                let stem = format!("report_{}_{}_{}", kind.name(), mode_name(mode), det.name());
                fs::write(out.join(format!("{stem}.json")), report.to_json())?;
                summary.reports.push((
                    kind.name().to_string(),
                    mode_name(mode),
                    det.name().to_string(),
                    report,
                ));
                trained.push(detector);
            }

            // cross-attack generalization: train on A, test on B's test split
            let n = per_attack.len();
            let mut matrix = vec![vec![0.0; n]; n];
            for (ai, detector) in trained.iter().enumerate() {
                for (bi, ds) in datasets.iter().enumerate() {
                    let predictions: Vec<(f64, u8)> = ds
                        .test_set()
                        .iter()
                        .map(|f| detector.predict(&f.values).map(|p| (p, f.label)))
                        .collect::<Result<_>>()?;
                    let rc = ReportConfig {
                        epsilon,
                        mode: mode_name(mode),
                        detector: det.name().to_string(),
                        seed: cfg.seed,
                    };
                    let report = metrics::evaluate_detector(&predictions, per_attack[bi].2, rc)?;
                    matrix[ai][bi] = report.f1;
                }
            }
            let mut csv = String::from("train_attack");
            for (kind, _, _) in &per_attack {
                let _ = write!(csv, ",f1_on_{}", kind.name());
            }
            csv.push('\n');
            for (ai, (kind, _, _)) in per_attack.iter().enumerate() {
                let _ = write!(csv, "{}", kind.name());
                for bi in 0..per_attack.len() {
                    let _ = write!(csv, ",{:.1}", 100.0 * matrix[ai][bi]);
                }
                csv.push('\n');
            }
            fs::write(
                out.join(format!("crossattack_{}_{}.csv", mode_name(mode), det.name())),
                csv,
            )?;
            summary.cross_f1.push((mode_name(mode), det.name().to_string(), matrix));
        }

        // per-mode F1 table shaped attack x detector
        let mut csv = String::from("detector");
        for (kind, _, _) in &per_attack {
            let _ = write!(csv, ",{}", kind.name());
        }
        csv.push('\n');
        for &det in &cfg.detectors {
            let _ = write!(csv, "{}", det.name());
            for (kind, _, _) in &per_attack {
                let f1 = summary
                    .reports
                    .iter()
                    .find(|(a, m, d, _)| {
                        a == kind.name() && *m == mode_name(mode) && d == det.name()
                    })
                    .map(|(_, _, _, r)| r.f1)
                    .unwrap_or(0.0);
                let _ = write!(csv, ",{:.1}", 100.0 * f1);
            }
            csv.push('\n');
        }
        fs::write(out.join(format!("f1_table_{}.csv", mode_name(mode))), csv)?;
    }
    Ok(summary)
}

#[derive(Debug, Clone)]
pub struct LayerStudyRow {
    pub layer: String,
    pub dimension: usize,
    /// F1 per configured attack, in config order.
    pub f1_per_attack: Vec<f64>,
}

/// White-box study: one single-layer detector per capturable layer.
pub fn cmd_layer_study(cfg: &ExperimentConfig) -> Result<Vec<LayerStudyRow>> {
    cfg.validate()?;
    let out = cfg.out_dir.join("layerstudy");
    fs::create_dir_all(&out)?;
    fs::write(cfg.out_dir.join("config.txt"), cfg.to_text())?;
    write_manifest(&cfg.out_dir, "layer-study")?;
    let epsilon = cfg.epsilons[0];
    let det = cfg.detectors[0];
    let target = prepare_target(cfg).map_err(|e| stage_err("train-target", e))?;

    let mut per_attack = Vec::new();
    for &kind in &cfg.attacks {
        let budget = budget_for(cfg, epsilon, &format!("attack/{}", kind.name()));
        let outcomes = attacks::standard_cascade(
            &target.net,
            &target.pool_images,
            &target.pool_labels,
            &[kind],
            &budget,
        )
        .map_err(|e| stage_err("attack", e))?;
        let asr = metrics::compute_asr(&outcomes)?;
        per_attack.push((kind, outcomes, asr));
    }

    let mut rows = Vec::new();
    for layer in target.net.capturable_layers() {
        let shape = target.net.layer_shape(&layer)?.to_vec();
        let dimension: usize = shape.iter().product();
        let mode = FeatureMode::White { layers: vec![layer.clone()] };
        let opts = detection_options(cfg, &mode);
        let mut f1s = Vec::new();
        for (kind, outcomes, asr) in &per_attack {
            let ds = data::build_detection_dataset(
                &target.pool_images,
                outcomes,
                &target.net,
                &opts,
                derive_seed(cfg.seed, &format!("layer/{layer}/{}", kind.name())),
            )
            .map_err(|e| stage_err("features", e))?;
            let rc = ReportConfig {
                epsilon,
                mode: format!("white:{layer}"),
                detector: det.name().to_string(),
                seed: cfg.seed,
            };
            let (_, report) =
                train_and_evaluate(&ds, det, *asr, rc).map_err(|e| stage_err("evaluate", e))?;
            f1s.push(report.f1);
        }
        rows.push(LayerStudyRow { layer, dimension, f1_per_attack: f1s });
    }

    let mut csv = String::from("layer,dim");
    for (kind, _, _) in &per_attack {
        let _ = write!(csv, ",f1_{}", kind.name());
    }
    csv.push('\n');
    for row in &rows {
        let _ = write!(csv, "{},{}", row.layer, row.dimension);
        for f1 in &row.f1_per_attack {
            let _ = write!(csv, ",{:.1}", 100.0 * f1);
        }
        csv.push('\n');
    }
    fs::write(out.join("layer_table.csv"), csv)?;
    Ok(rows)
}

/// Per attack: mean spatial difference and accumulated spectral difference of
/// the successful perturbations, written as PGM heatmaps.
pub fn cmd_fig1(cfg: &ExperimentConfig) -> Result<()> {
    cfg.validate()?;
    let out = cfg.out_dir.join("fig1");
    fs::create_dir_all(&out)?;
    fs::write(cfg.out_dir.join("config.txt"), cfg.to_text())?;
    write_manifest(&cfg.out_dir, "fig1")?;
    let epsilon = cfg.epsilons[0];
    let target = prepare_target(cfg).map_err(|e| stage_err("train-target", e))?;

    for &kind in &cfg.attacks {
        let budget = budget_for(cfg, epsilon, &format!("attack/{}", kind.name()));
        let outcomes = attacks::standard_cascade(
            &target.net,
            &target.pool_images,
            &target.pool_labels,
            &[kind],
            &budget,
        )
        .map_err(|e| stage_err("attack", e))?;
        let clean: Vec<Image> =
            outcomes.iter().filter(|o| o.success).map(|o| o.original.clone()).collect();
        let adv: Vec<Image> =
            outcomes.iter().filter(|o| o.success).map(|o| o.adversarial.clone()).collect();
        if clean.is_empty() {
            return Err(Error::Data(format!(
                "fig1: attack {} produced no successful perturbations at epsilon {epsilon}",
                kind.name()
            )));
        }
        let (spatial, spectral) = spectral::diff_heatmaps(&clean, &adv)?;
        let (h, w) = (clean[0].height, clean[0].width);
        for (c, plane) in spatial.iter().enumerate() {
            spectral::write_pgm(&out.join(format!("{}_spatial_c{c}.pgm", kind.name())), plane, h, w)?;
        }
        for (c, plane) in spectral.iter().enumerate() {
            spectral::write_pgm(&out.join(format!("{}_spectral_c{c}.pgm", kind.name())), plane, h, w)?;
        }
    }
    Ok(())
}

/// Exit code mapping: 0 success, 2 config error, 3 data error, 4 numeric
/// failure.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Shape(_) | Error::UnknownLayer { .. } => 2,
        Error::Data(_) | Error::Format(_) | Error::Io(_) => 3,
        Error::NonFinite(_) => 4,
    }
}

// ---- feature dumps for the stage-level CLI ----

const FEATURE_MAGIC: &[u8; 6] = b"SSFTR1";

/// Write a detection dataset (features + split flags) as a binary file.
pub fn save_features(path: &Path, ds: &DetectionDataset) -> Result<()> {
    use std::io::Write as _;
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    f.write_all(FEATURE_MAGIC)?;
    f.write_all(&ds.seed.to_le_bytes())?;
    f.write_all(&(ds.features.len() as u32).to_le_bytes())?;
    let dim = ds.features.first().map_or(0, |fv| fv.values.len());
    f.write_all(&(dim as u32).to_le_bytes())?;
    for (fv, split) in ds.features.iter().zip(&ds.split) {
        f.write_all(&[fv.label, u8::from(*split == data::Split::Train)])?;
        f.write_all(&(fv.sample_id as u32).to_le_bytes())?;
        f.write_all(&fv.epsilon.to_le_bytes())?;
        let name = fv.attack.as_bytes();
        f.write_all(&(name.len() as u16).to_le_bytes())?;
        f.write_all(name)?;
        for v in &fv.values {
            f.write_all(&v.to_le_bytes())?;
        }
    }
    f.flush()?;
    Ok(())
}

pub fn load_features(path: &Path) -> Result<DetectionDataset> {
    use std::io::Read as _;
    let mut r = std::io::BufReader::new(fs::File::open(path)?);
    let mut magic = [0u8; 6];
    r.read_exact(&mut magic)?;
    if &magic != FEATURE_MAGIC {
        return Err(Error::Format("bad magic, not a SSFTR1 feature file".into()));
    }
    let mut b8 = [0u8; 8];
    let mut b4 = [0u8; 4];
    let mut b2 = [0u8; 2];
    let mut b1 = [0u8; 2];
    r.read_exact(&mut b8)?;
    let seed = u64::from_le_bytes(b8);
    r.read_exact(&mut b4)?;
    let count = u32::from_le_bytes(b4) as usize;
    r.read_exact(&mut b4)?;
    let dim = u32::from_le_bytes(b4) as usize;
    let mut features = Vec::with_capacity(count);
    let mut split = Vec::with_capacity(count);
    for _ in 0..count {
        r.read_exact(&mut b1)?;
        let label = b1[0];
        split.push(if b1[1] != 0 { data::Split::Train } else { data::Split::Test });
        r.read_exact(&mut b4)?;
        let sample_id = u32::from_le_bytes(b4) as usize;
        r.read_exact(&mut b8)?;
        let epsilon = f64::from_le_bytes(b8);
        r.read_exact(&mut b2)?;
        let mut name = vec![0u8; u16::from_le_bytes(b2) as usize];
        r.read_exact(&mut name)?;
        let attack =
            String::from_utf8(name).map_err(|_| Error::Format("attack name not UTF-8".into()))?;
        let mut values = Vec::with_capacity(dim);
        for _ in 0..dim {
            r.read_exact(&mut b8)?;
            values.push(f64::from_le_bytes(b8));
        }
        features.push(crate::spectral::FeatureVector { values, label, sample_id, attack, epsilon });
    }
    Ok(DetectionDataset { features, split, seed })
}

/// Build the detection dataset for one (outcomes, mode) pair; shared by the
/// `features` CLI stage and tests.
pub fn build_features(
    cfg: &ExperimentConfig,
    net: &Network,
    pool: &[Image],
    outcomes: &[AttackOutcome],
    mode: &FeatureMode,
) -> Result<DetectionDataset> {
    let opts = detection_options(cfg, mode);
    data::build_detection_dataset(
        pool,
        outcomes,
        net,
        &opts,
        derive_seed(cfg.seed, &format!("detect/{}", mode_name(mode))),
    )
}

pub fn layer_shapes_map(net: &Network) -> BTreeMap<String, Vec<usize>> {
    net.layer_names()
        .iter()
        .filter_map(|n| net.layer_shape(n).ok().map(|s| (n.clone(), s.to_vec())))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg(out: &Path) -> ExperimentConfig {
        ExperimentConfig {
            dataset: DatasetSource::Synthetic { classes: 2, per_class: 30, size: 16 },
            epochs: 3,
            learning_rate: 0.05,
            attacks: vec![AttackKind::Fgsm],
            epsilons: vec![8.0 / 255.0],
            steps: 3,
            modes: vec![FeatureMode::Black],
            detectors: vec![DetectorKind::Forest],
            seed: 7,
            out_dir: out.to_path_buf(),
            log_scale: false,
            quantize_8bit: false,
            attack_samples: 12,
        }
    }

    #[test]
    fn epsilon_fraction_syntax() {
        assert!((parse_epsilon("8/255").unwrap() - 8.0 / 255.0).abs() < 1e-15);
        assert!((parse_epsilon("0.25").unwrap() - 0.25).abs() < 1e-15);
        assert!(parse_epsilon("0").is_err());
        assert!(parse_epsilon("2.0").is_err());
    }

    #[test]
    fn config_text_round_trips() {
        let dir = std::env::temp_dir().join("freqdetect-cfg-test");
        let mut cfg = tiny_cfg(&dir);
        cfg.modes = vec![
            FeatureMode::Black,
            FeatureMode::White { layers: vec!["relu2".into(), "relu3".into()] },
        ];
        cfg.detectors = vec![DetectorKind::LogReg, DetectorKind::Forest];
        let parsed = ExperimentConfig::parse(&cfg.to_text()).unwrap();
        assert_eq!(cfg, parsed);
    }

    #[test]
    fn config_rejects_unknown_keys_and_bad_values() {
        assert!(ExperimentConfig::parse("bogus = 1").is_err());
        assert!(ExperimentConfig::parse("epsilon = nope").is_err());
        assert!(ExperimentConfig::parse("mode = white").is_err()); // no layer
    }

    #[test]
    fn derive_seed_separates_stages() {
        assert_ne!(derive_seed(0, "attack"), derive_seed(0, "train"));
        assert_eq!(derive_seed(5, "attack"), derive_seed(5, "attack"));
    }

    #[test]
    fn exit_codes_match_error_classes() {
        assert_eq!(exit_code(&Error::Config("x".into())), 2);
        assert_eq!(exit_code(&Error::Data("x".into())), 3);
        assert_eq!(exit_code(&Error::NonFinite("x".into())), 4);
    }
}
