//! Command-line front end. Subcommands mirror the experiment stages:
//! `train-target`, `attack`, `features`, `train-detector`, `evaluate`, plus
//! the composite `pipeline`, `individual`, `layer-study`, and `fig1`.

use std::path::PathBuf;
use std::process::ExitCode;

use freqdetect::attacks::{self};
use freqdetect::data::Split;
use freqdetect::detectors::Detector;
use freqdetect::error::{Error, Result};
use freqdetect::harness::{self, eps_dir_name, ExperimentConfig};
use freqdetect::metrics::{self, EvalReport, ReportConfig};
use freqdetect::smallnet::Network;

const USAGE: &str = "\
usage: freqdetect <command> [--config PATH] [--seed N] [--out DIR] [--quantize-8bit] [--print-config]

commands:
  pipeline        full sweep: train target, attack per epsilon, train and evaluate detectors
  individual      per-attack evaluation plus the cross-attack F1 matrix
  layer-study     single-layer white-box detector per capturable layer
  fig1            mean spatial and accumulated spectral difference heatmaps (PGM)
  train-target    train the target net and save <out>/net.ssnet
  attack          run the configured attack cascade, save <out>/<eps>/outcomes.bin
  features        extract detection features, save <out>/<eps>/features_<mode>.bin
  train-detector  train detectors from saved features, save SSDET1 model files
  evaluate        evaluate saved detectors on the saved features' test split

flags:
  --config PATH    flat key=value config file (repeated keys form lists)
  --seed N         override the master seed
  --out DIR        override the output directory
  --quantize-8bit  round adversarial images to 8-bit levels before features
  --print-config   print the resolved config and exit
";

struct Cli {
    command: String,
    config: Option<PathBuf>,
    seed: Option<u64>,
    out: Option<PathBuf>,
    quantize: bool,
    print_config: bool,
}

fn parse_args(args: &[String]) -> Result<Cli> {
    let command = args.first().cloned().ok_or_else(|| Error::Config("missing command".into()))?;
    let mut cli = Cli {
        command,
        config: None,
        seed: None,
        out: None,
        quantize: false,
        print_config: false,
    };
    let mut it = args[1..].iter();
    while let Some(arg) = it.next() {
        let mut value = |name: &str| {
            it.next().cloned().ok_or_else(|| Error::Config(format!("{name} needs a value")))
        };
        match arg.as_str() {
            "--config" => cli.config = Some(PathBuf::from(value("--config")?)),
            "--seed" => {
                cli.seed = Some(
                    value("--seed")?
                        .parse()
                        .map_err(|_| Error::Config("--seed needs an integer".into()))?,
                )
            }
            "--out" => cli.out = Some(PathBuf::from(value("--out")?)),
            "--quantize-8bit" => cli.quantize = true,
            "--print-config" => cli.print_config = true,
            other => return Err(Error::Config(format!("unknown flag '{other}'"))),
        }
    }
    Ok(cli)
}

fn resolve_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::parse(&std::fs::read_to_string(path)?)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    if cli.quantize {
        cfg.quantize_8bit = true;
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = resolve_config(cli)?;
    if cli.print_config {
        print!("{}", cfg.to_text());
        return Ok(());
    }
    match cli.command.as_str() {
        "pipeline" => {
            let summary = harness::cmd_pipeline(&cfg)?;
            println!(
                "target accuracy: train {:.3}, test {:.3}",
                summary.train_accuracy, summary.test_accuracy
            );
            for (eps, asr) in &summary.asr_per_epsilon {
                println!("epsilon {eps:.6}: ASR {:.1}%", 100.0 * asr);
            }
            for cell in &summary.cells {
                println!(
                    "epsilon {:.6} {} {}: F1 {:.1}% FNR {:.1}% ASRD {:.1}%",
                    cell.epsilon,
                    cell.mode,
                    cell.detector,
                    100.0 * cell.report.f1,
                    100.0 * cell.report.fnr,
                    100.0 * cell.report.asrd
                );
            }
        }
        "individual" => {
            let summary = harness::cmd_individual(&cfg)?;
            for (attack, mode, det, report) in &summary.reports {
                println!("{attack} {mode} {det}: F1 {:.1}%", 100.0 * report.f1);
            }
        }
        "layer-study" => {
            let rows = harness::cmd_layer_study(&cfg)?;
            for row in &rows {
                let f1s: Vec<String> =
                    row.f1_per_attack.iter().map(|f| format!("{:.1}", 100.0 * f)).collect();
                println!("{} (dim {}): F1 {}", row.layer, row.dimension, f1s.join(", "));
            }
        }
        "fig1" => {
            harness::cmd_fig1(&cfg)?;
            println!("heatmaps written to {}", cfg.out_dir.join("fig1").display());
        }
        "train-target" => {
            let target = harness::prepare_target(&cfg)?;
            std::fs::create_dir_all(&cfg.out_dir)?;
            let path = cfg.out_dir.join("net.ssnet");
            target.net.save_file(&path)?;
            println!(
                "saved {} (train acc {:.3}, test acc {:.3})",
                path.display(),
                target.train_accuracy,
                target.test_accuracy
            );
        }
        "attack" => {
            let net = Network::load_file(&cfg.out_dir.join("net.ssnet"))?;
            let pool = harness::attack_pool(&cfg, &net)?;
            for &epsilon in &cfg.epsilons {
                let dir = cfg.out_dir.join(eps_dir_name(epsilon));
                std::fs::create_dir_all(&dir)?;
                let (outcomes, budget) = harness::run_cascade(&cfg, &net, &pool, epsilon)?;
                attacks::save_outcomes_file(&dir.join("outcomes.bin"), &outcomes, &budget)?;
                let asr = metrics::compute_asr(&outcomes)?;
                println!("epsilon {epsilon:.6}: ASR {:.1}%", 100.0 * asr);
            }
        }
        "features" => {
            let net = Network::load_file(&cfg.out_dir.join("net.ssnet"))?;
            let pool = harness::attack_pool(&cfg, &net)?;
            for &epsilon in &cfg.epsilons {
                let dir = cfg.out_dir.join(eps_dir_name(epsilon));
                let (outcomes, _) = attacks::load_outcomes(&mut std::io::BufReader::new(
                    std::fs::File::open(dir.join("outcomes.bin"))?,
                ))?;
                for mode in &cfg.modes {
                    let ds = harness::build_features(&cfg, &net, &pool.images, &outcomes, mode)?;
                    let path = dir.join(format!("features_{}.bin", harness::mode_name(mode)));
                    harness::save_features(&path, &ds)?;
                    println!("wrote {}", path.display());
                }
            }
        }
        "train-detector" => {
            for &epsilon in &cfg.epsilons {
                let dir = cfg.out_dir.join(eps_dir_name(epsilon));
                for mode in &cfg.modes {
                    let ds = harness::load_features(
                        &dir.join(format!("features_{}.bin", harness::mode_name(mode))),
                    )?;
                    for &kind in &cfg.detectors {
                        let det = Detector::train(
                            &ds.train_set(),
                            kind,
                            harness::derive_seed(ds.seed, "detector"),
                        )?;
                        let path = dir.join(format!(
                            "detector_{}_{}.ssdet",
                            harness::mode_name(mode),
                            kind.name()
                        ));
                        det.save_file(&path)?;
                        println!("wrote {}", path.display());
                    }
                }
            }
        }
        "evaluate" => {
            for &epsilon in &cfg.epsilons {
                let dir = cfg.out_dir.join(eps_dir_name(epsilon));
                let (outcomes, _) = attacks::load_outcomes(&mut std::io::BufReader::new(
                    std::fs::File::open(dir.join("outcomes.bin"))?,
                ))?;
                let asr = metrics::compute_asr(&outcomes)?;
                for mode in &cfg.modes {
                    let mode_str = harness::mode_name(mode);
                    let ds = harness::load_features(&dir.join(format!("features_{mode_str}.bin")))?;
                    for &kind in &cfg.detectors {
                        let det = Detector::load_file(
                            &dir.join(format!("detector_{mode_str}_{}.ssdet", kind.name())),
                        )?;
                        let predictions: Vec<(f64, u8)> = ds
                            .features
                            .iter()
                            .zip(&ds.split)
                            .filter(|(_, s)| **s == Split::Test)
                            .map(|(f, _)| det.predict(&f.values).map(|p| (p, f.label)))
                            .collect::<Result<_>>()?;
                        let report = metrics::evaluate_detector(
                            &predictions,
                            asr,
                            ReportConfig {
                                epsilon,
                                mode: mode_str.clone(),
                                detector: kind.name().to_string(),
                                seed: cfg.seed,
                            },
                        )?;
                        let stem = format!("report_{mode_str}_{}", kind.name());
                        std::fs::write(dir.join(format!("{stem}.json")), report.to_json())?;
                        std::fs::write(
                            dir.join(format!("{stem}.csv")),
                            format!("{}\n{}\n", EvalReport::CSV_HEADER, report.csv_row()),
                        )?;
                        println!("{stem}: F1 {:.1}% FNR {:.1}%", 100.0 * report.f1, 100.0 * report.fnr);
                    }
                }
            }
        }
        other => {
            return Err(Error::Config(format!("unknown command '{other}'")));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.is_empty() || args[0] == "--help" || args[0] == "-h" || args[0] == "help" {
        print!("{USAGE}");
        return ExitCode::SUCCESS;
    }
    let cli = match parse_args(&args) {
        Ok(cli) => cli,
        Err(e) => {
            eprintln!("error: {e}");
            eprintln!("{USAGE}");
            return ExitCode::from(2);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(harness::exit_code(&e) as u8)
        }
    }
}
