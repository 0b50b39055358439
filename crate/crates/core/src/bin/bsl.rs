//! Command-line front end: each pipeline stage is independently runnable
//! against a config file, with checkpoints carrying state between stages.

use bsl_core::attack::{bayes_fgsm, bayes_pgd, fgsm, pgd, AttackMethod};
use bsl_core::bayes::{posterior_predictive, EnsembleMeta, InferenceMethod, PosteriorEnsemble};
use bsl_core::checkpoint::{load_checkpoint, save_checkpoint};
use bsl_core::config::{AttackLabel, ExperimentConfig, InferenceKind};
use bsl_core::error::{Error, Result};
use bsl_core::experiment::{
    assemble_models, evaluate_with_sink, fit_posterior, network_spec, prepare_data, run_geometry,
    train_deterministic, PreparedData, PreparedModels,
};
use bsl_core::lrp::{lrp_epsilon, RelevanceSeed};
use bsl_core::metrics::{softmax_robustness, ModelKind, RobustnessRecord};
use bsl_core::nn::{argmax, forward, predict_softmax, NetworkSpec, WeightVector};
use bsl_core::report::{
    emit_geometry, emit_report, format_summary, parse_records, record_lines, RECORDS_HEADER,
};
use bsl_core::rng::substream_indexed;
use clap::{Args, Parser, Subcommand};
use rand::Rng;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "bsl", about = "Saliency-explanation robustness lab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Experiment config file (key = value lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override single keys, e.g. --set seed=3 --set attack.delta=0.1
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::from_file(path)?,
            None => ExperimentConfig::default(),
        };
        for kv in &self.overrides {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train the deterministic network and save a checkpoint.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Output checkpoint path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the variational posterior and save a sample ensemble.
    InferVi {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
        /// Deterministic checkpoint to warm-start from (else trains one).
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Run HMC and save the stored posterior samples.
    InferHmc {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Attack the test points of a saved model and tabulate outcomes.
    Attack {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Checkpoint to attack (deterministic or ensemble).
        #[arg(long)]
        model: PathBuf,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Heatmaps of one test point under a saved deterministic model.
    Lrp {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        model: PathBuf,
        /// Index into the test pool.
        #[arg(long)]
        point: usize,
        /// Also attack the point and emit the adversarial heatmaps.
        #[arg(long)]
        adversarial: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Full pipeline: train/infer (or load checkpoints), attack, LRP,
    /// metrics, report CSVs.
    Robustness {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Reuse a deterministic checkpoint instead of training.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Reuse an ensemble checkpoint instead of running inference.
        #[arg(long)]
        ensemble: Option<PathBuf>,
        /// Output directory for records.csv, histograms.csv, scatter.csv,
        /// summary.txt.
        #[arg(long)]
        out: PathBuf,
    },
    /// Zero-averaging geometry statistic on the synthetic circle task.
    Geometry {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Regenerate histogram/scatter CSVs from a records.csv.
    Report {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Previously written records.csv.
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn check_spec(path: &Path, got: &NetworkSpec, want: &NetworkSpec) -> Result<()> {
    if got != want {
        return Err(Error::Shape(format!(
            "checkpoint {} does not match the configured architecture",
            path.display()
        )));
    }
    Ok(())
}

enum LoadedModel {
    Deterministic(WeightVector),
    Ensemble(PosteriorEnsemble),
}

fn load_any_model(path: &Path, spec: &NetworkSpec) -> Result<LoadedModel> {
    let ckpt = load_checkpoint(path)?;
    check_spec(path, &ckpt.spec, spec)?;
    match ckpt.kind {
        ModelKind::Deterministic => Ok(LoadedModel::Deterministic(
            ckpt.samples.into_iter().next().unwrap(),
        )),
        kind => {
            let method = match kind {
                ModelKind::BayesVi => InferenceMethod::Vi,
                _ => InferenceMethod::Hmc,
            };
            Ok(LoadedModel::Ensemble(PosteriorEnsemble::new(
                ckpt.samples,
                method,
                EnsembleMeta::default(),
            )?))
        }
    }
}

fn det_or_train(
    cfg: &ExperimentConfig,
    data: &PreparedData,
    model: &Option<PathBuf>,
) -> Result<(NetworkSpec, WeightVector)> {
    let spec = network_spec(cfg, data)?;
    match model {
        Some(path) => match load_any_model(path, &spec)? {
            LoadedModel::Deterministic(w) => Ok((spec, w)),
            LoadedModel::Ensemble(_) => Err(Error::Parameter(format!(
                "{} is an ensemble checkpoint, expected deterministic weights",
                path.display()
            ))),
        },
        None => train_deterministic(cfg, data),
    }
}

fn cmd_train(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let data = prepare_data(cfg)?;
    let (spec, det) = train_deterministic(cfg, &data)?;
    let models = assemble_models(&data, spec, det, None)?;
    save_checkpoint(
        out,
        &models.spec,
        std::slice::from_ref(&models.det_weights),
        ModelKind::Deterministic,
    )?;
    println!(
        "trained: train accuracy {:.4}, test accuracy {:.4}",
        models.train_accuracy, models.test_accuracy
    );
    println!("saved {}", out.display());
    Ok(())
}

fn cmd_infer(cfg: &ExperimentConfig, kind: InferenceKind, out: &Path, model: &Option<PathBuf>) -> Result<()> {
    let mut cfg = cfg.clone();
    cfg.inference = kind;
    let data = prepare_data(&cfg)?;
    let (spec, det) = det_or_train(&cfg, &data, model)?;
    let ensemble = fit_posterior(&cfg, &data, &spec, &det)?
        .expect("inference kind is never deterministic here");
    let model_kind = match kind {
        InferenceKind::Vi => ModelKind::BayesVi,
        _ => ModelKind::BayesHmc,
    };
    save_checkpoint(out, &spec, ensemble.samples(), model_kind)?;
    if let Some(rate) = ensemble.meta().acceptance_rate {
        let tuned = if ensemble.meta().poorly_tuned { " (poorly tuned!)" } else { "" };
        println!("hmc acceptance rate {rate:.3}{tuned}");
    }
    println!("saved {} samples to {}", ensemble.len(), out.display());
    Ok(())
}

fn cmd_attack(cfg: &ExperimentConfig, model_path: &Path, out: &Path) -> Result<()> {
    let data = prepare_data(cfg)?;
    let spec = network_spec(cfg, &data)?;
    let model = load_any_model(model_path, &spec)?;
    let mut w = BufWriter::new(File::create(out)?);
    writeln!(w, "point_id,true_label,clean_pred,adv_pred,softmax_rob,linf")?;
    let mut flips = 0usize;
    for &idx in &data.test_indices {
        let x = data.test_pool.input(idx);
        let y_true = data.test_pool.label(idx);
        let p_clean = match &model {
            LoadedModel::Deterministic(det) => predict_softmax(&spec, det, x)?,
            LoadedModel::Ensemble(ens) => posterior_predictive(&spec, ens, x)?,
        };
        let label = match cfg.attack_label {
            AttackLabel::Predicted => argmax(&p_clean),
            AttackLabel::TrueLabel => y_true,
        };
        let atk = cfg
            .attack
            .with_seed(substream_indexed(cfg.seed, "attack-det", idx as u64).random());
        let x_adv = match (&model, cfg.attack.method) {
            (LoadedModel::Deterministic(det), AttackMethod::Fgsm) => fgsm(&spec, det, x, label, &atk)?,
            (LoadedModel::Deterministic(det), AttackMethod::Pgd) => pgd(&spec, det, x, label, &atk)?,
            (LoadedModel::Ensemble(ens), AttackMethod::Fgsm) => bayes_fgsm(&spec, ens, x, label, &atk)?,
            (LoadedModel::Ensemble(ens), AttackMethod::Pgd) => bayes_pgd(&spec, ens, x, label, &atk)?,
        };
        let p_adv = match &model {
            LoadedModel::Deterministic(det) => predict_softmax(&spec, det, &x_adv)?,
            LoadedModel::Ensemble(ens) => posterior_predictive(&spec, ens, &x_adv)?,
        };
        let clean_pred = argmax(&p_clean);
        let adv_pred = argmax(&p_adv);
        if clean_pred != adv_pred {
            flips += 1;
        }
        let linf = x
            .iter()
            .zip(x_adv.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        writeln!(
            w,
            "{},{},{},{},{},{}",
            idx,
            y_true,
            clean_pred,
            adv_pred,
            softmax_robustness(&p_clean, &p_adv)?,
            linf
        )?;
    }
    w.flush()?;
    println!(
        "attacked {} points, {} label flips; wrote {}",
        data.test_indices.len(),
        flips,
        out.display()
    );
    Ok(())
}

fn cmd_lrp(cfg: &ExperimentConfig, model_path: &Path, point: usize, adversarial: bool, out: &Path) -> Result<()> {
    let data = prepare_data(cfg)?;
    let spec = network_spec(cfg, &data)?;
    if point >= data.test_pool.len() {
        return Err(Error::Parameter(format!(
            "point {point} out of range for a test pool of {}",
            data.test_pool.len()
        )));
    }
    let det = match load_any_model(model_path, &spec)? {
        LoadedModel::Deterministic(w) => w,
        LoadedModel::Ensemble(_) => {
            return Err(Error::Parameter(
                "lrp expects a deterministic checkpoint; Bayesian heatmaps come from `robustness`".into(),
            ))
        }
    };
    let x = data.test_pool.input(point);
    let trace = forward(&spec, &det, x)?;
    let pred = argmax(trace.logits());
    let last = spec.layer_count() - 1;
    let adv = if adversarial {
        let label = match cfg.attack_label {
            AttackLabel::Predicted => pred,
            AttackLabel::TrueLabel => data.test_pool.label(point),
        };
        let atk = cfg
            .attack
            .with_seed(substream_indexed(cfg.seed, "attack-det", point as u64).random());
        Some(match cfg.attack.method {
            AttackMethod::Fgsm => fgsm(&spec, &det, x, label, &atk)?,
            AttackMethod::Pgd => pgd(&spec, &det, x, label, &atk)?,
        })
    } else {
        None
    };
    let mut w = BufWriter::new(File::create(out)?);
    if adv.is_some() {
        writeln!(w, "layer,pixel,relevance,relevance_adv")?;
    } else {
        writeln!(w, "layer,pixel,relevance")?;
    }
    for &layer in &cfg.layers {
        let seed = if layer == last {
            RelevanceSeed::Class(pred)
        } else {
            RelevanceSeed::AllUnits
        };
        let hm = lrp_epsilon(&spec, &det, &trace, layer, seed, cfg.lrp_epsilon, cfg.stabilizer)?;
        let hm_adv = match &adv {
            Some(xa) => {
                let trace_adv = forward(&spec, &det, xa)?;
                Some(lrp_epsilon(&spec, &det, &trace_adv, layer, seed, cfg.lrp_epsilon, cfg.stabilizer)?)
            }
            None => None,
        };
        for (p, &r) in hm.relevances.iter().enumerate() {
            match &hm_adv {
                Some(ha) => writeln!(w, "{layer},{p},{r},{}", ha.relevances[p])?,
                None => writeln!(w, "{layer},{p},{r}")?,
            }
        }
    }
    w.flush()?;
    println!("point {point}: predicted class {pred}; wrote {}", out.display());
    Ok(())
}

fn cmd_robustness(
    cfg: &ExperimentConfig,
    model: &Option<PathBuf>,
    ensemble: &Option<PathBuf>,
    out_dir: &Path,
) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    let data = prepare_data(cfg)?;
    let (spec, det) = det_or_train(cfg, &data, model)?;
    let ens = match ensemble {
        Some(path) => match load_any_model(path, &spec)? {
            LoadedModel::Ensemble(e) => Some(e),
            LoadedModel::Deterministic(_) => {
                return Err(Error::Parameter(format!(
                    "{} is a deterministic checkpoint, expected an ensemble",
                    path.display()
                )))
            }
        },
        None => fit_posterior(cfg, &data, &spec, &det)?,
    };
    let models: PreparedModels = assemble_models(&data, spec, det, ens)?;

    // Stream records as they are produced so partial output survives an
    // abort; the remaining CSVs are derived afterwards.
    let records_path = out_dir.join("records.csv");
    let mut sink_file = BufWriter::new(File::create(&records_path)?);
    writeln!(sink_file, "{RECORDS_HEADER}")?;
    let mut write_record = |r: &RobustnessRecord| -> Result<()> {
        for line in record_lines(std::slice::from_ref(r)) {
            writeln!(sink_file, "{line}")?;
        }
        sink_file.flush()?;
        Ok(())
    };
    let output = evaluate_with_sink(cfg, &data, &models, &mut write_record)?;
    drop(write_record);

    emit_report(&output.records, cfg, out_dir)?;
    let summary_text = format_summary(&output.summary);
    std::fs::write(out_dir.join("summary.txt"), &summary_text)?;
    print!("{summary_text}");
    println!("wrote {}", out_dir.display());
    Ok(())
}

fn cmd_geometry(cfg: &ExperimentConfig, out_dir: &Path) -> Result<()> {
    let output = run_geometry(cfg)?;
    emit_geometry(&output, out_dir)?;
    println!(
        "train accuracy {:.4}, hmc acceptance {:.3}",
        output.train_accuracy, output.hmc_acceptance
    );
    for (n, r) in &output.ratios {
        println!("N = {n:>4}: zero-averaging ratio {r:.4}");
    }
    println!("wrote {}", out_dir.display());
    Ok(())
}

fn cmd_report(cfg: &ExperimentConfig, records_path: &Path, out_dir: &Path) -> Result<()> {
    let records = parse_records(records_path)?;
    emit_report(&records, cfg, out_dir)?;
    println!(
        "rebuilt report for {} records in {}",
        records.len(),
        out_dir.display()
    );
    Ok(())
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Train { cfg, out } => cmd_train(&cfg.load()?, out),
        Command::InferVi { cfg, out, model } => cmd_infer(&cfg.load()?, InferenceKind::Vi, out, model),
        Command::InferHmc { cfg, out, model } => cmd_infer(&cfg.load()?, InferenceKind::Hmc, out, model),
        Command::Attack { cfg, model, out } => cmd_attack(&cfg.load()?, model, out),
        Command::Lrp {
            cfg,
            model,
            point,
            adversarial,
            out,
        } => cmd_lrp(&cfg.load()?, model, *point, *adversarial, out),
        Command::Robustness {
            cfg,
            model,
            ensemble,
            out,
        } => cmd_robustness(&cfg.load()?, model, ensemble, out),
        Command::Geometry { cfg, out } => cmd_geometry(&cfg.load()?, out),
        Command::Report { cfg, records, out } => cmd_report(&cfg.load()?, records, out),
    }
}

fn main() {
    if let Err(e) = run() {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
