mod config;
mod error;

use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;
use softschema::analysis::report::{
    write_ablation_csv, write_eval_csv, write_lag_csv, write_maps_png, write_panel_png, write_segmentation_csv,
};
use softschema::analysis::{
    ablate_inputs, compare_architectures, evaluate_with_ids, lag_scan, latent_segmentation, noise_filter_check,
    percentile, permutation_baseline, CompareConfig, Ids, NoiseFilter, Predictor,
};
use softschema::datagen::{generate_dataset, Dataset};
use softschema::models::{Checkpoint, ModelKind};
use softschema::training::{train_model, Architecture, ModelConfig};

use config::RunConfig;
use error::CliError;

#[derive(Parser, Debug)]
#[command(name = "softschema", version, about = "Soft-finger body-schema experiments")]
struct Cli {
    /// Run configuration (TOML); defaults apply to every missing field.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Global seed; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run directory for artifacts; defaults to runs/<command>.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Suppress progress lines on stderr.
    #[arg(long, global = true)]
    quiet: bool,
    /// Worker threads for generation and sweeps.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug)]
struct ModelArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Autoencoder of a recurrent model; defaults to autoencoder.sbsm next to the checkpoint.
    #[arg(long)]
    autoencoder: Option<PathBuf>,
    #[arg(long)]
    dataset: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a dataset file.
    Gen,
    /// Train the configured architecture on a dataset.
    Train {
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Score a model on a dataset split.
    Eval(ModelArgs),
    /// Mean-substitution ablation of each input.
    Ablate(ModelArgs),
    /// Error as a function of input delay.
    Lagscan(ModelArgs),
    /// Distractor variance passed through to predictions.
    Noise(ModelArgs),
    /// Threshold a latent layer and score it against the scene masks.
    Latent(ModelArgs),
    /// Train and compare scene-conditioned and recurrent models.
    Compare {
        #[arg(long)]
        dataset: PathBuf,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Gen => "gen",
            Command::Train { .. } => "train",
            Command::Eval(_) => "eval",
            Command::Ablate(_) => "ablate",
            Command::Lagscan(_) => "lagscan",
            Command::Noise(_) => "noise",
            Command::Latent(_) => "latent",
            Command::Compare { .. } => "compare",
        }
    }
}

/// Output directory with its config echo and log.
struct Run {
    dir: PathBuf,
    log: File,
    quiet: bool,
}

impl Run {
    fn open(dir: PathBuf, cfg: &RunConfig, command: &str, quiet: bool) -> Result<Self, CliError> {
        fs::create_dir_all(&dir).map_err(|e| io_at(&dir, e))?;
        fs::write(dir.join("config.toml"), cfg.to_toml()).map_err(|e| io_at(&dir, e))?;
        let log_path = dir.join("run.log");
        let log = File::create(&log_path).map_err(|e| io_at(&log_path, e))?;
        let mut run = Self { dir, log, quiet };
        run.progress(&format!(
            "{} {} command={command} seed={}",
            env!("CARGO_PKG_NAME"),
            env!("CARGO_PKG_VERSION"),
            cfg.seed
        ));
        Ok(run)
    }

    fn progress(&mut self, line: &str) {
        if !self.quiet {
            eprintln!("{line}");
        }
        let _ = writeln!(self.log, "{line}");
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn write_json(&self, name: &str, value: &impl serde::Serialize) -> Result<(), CliError> {
        let path = self.path(name);
        let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
        fs::write(&path, text).map_err(|e| io_at(&path, e))
    }
}

fn io_at(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn load_dataset(path: &Path) -> Result<Dataset, CliError> {
    if !path.exists() {
        return Err(CliError::Io(format!("{}: no such file", path.display())));
    }
    Ok(Dataset::load(path)?)
}

fn load_predictor(args: &ModelArgs) -> Result<Predictor, CliError> {
    if !args.checkpoint.exists() {
        return Err(CliError::Io(format!("{}: no such file", args.checkpoint.display())));
    }
    let ck = Checkpoint::load(&args.checkpoint)?;
    if ck.network.spec.kind == ModelKind::RecurrentPredictor {
        let ae_path = args
            .autoencoder
            .clone()
            .unwrap_or_else(|| args.checkpoint.with_file_name("autoencoder.sbsm"));
        let ae = Checkpoint::load(&ae_path).map_err(|e| CliError::Io(format!("{}: {e}", ae_path.display())))?;
        return Ok(Predictor::recurrent(ck, ae)?);
    }
    Ok(Predictor::from_checkpoint(ck)?)
}

fn default_layer(pred: &Predictor) -> Option<String> {
    let net = match pred {
        Predictor::Static(c) | Predictor::Scene(c) => &c.network,
        Predictor::Recurrent { autoencoder, .. } => &autoencoder.network,
        _ => return None,
    };
    let idx = net.spec.penultimate_upsampling_activation()?;
    Some(net.spec.layers[idx].name.clone())
}

fn panel_frames(len: usize, count: usize) -> Vec<usize> {
    let count = count.clamp(1, len);
    (0..count).map(|k| k * (len - 1) / (count - 1).max(1)).collect()
}

fn execute(cli: &Cli) -> Result<serde_json::Value, CliError> {
    let cfg = RunConfig::load(cli.config.as_deref())?.resolve(cli.seed);
    cfg.validate()?;
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    let name = cli.command.name();
    let dir = cli.out.clone().unwrap_or_else(|| Path::new("runs").join(name));
    let mut run = Run::open(dir, &cfg, name, cli.quiet)?;
    let a = &cfg.analysis;

    let summary = match &cli.command {
        Command::Gen => {
            let dc = cfg.dataset_config();
            run.progress(&format!("generating {} batches x {} frames", dc.batches, dc.episode.frames));
            let ds = generate_dataset(&dc)?;
            let path = run.path("dataset.sbsd");
            ds.save(&path)?;
            let contact: usize = ds.batches.iter().flatten().filter(|f| f.contact).count();
            run.progress(&format!("wrote {} ({} contact frames)", path.display(), contact));
            json!({
                "dataset": path, "dataset_id": ds.digest()?, "batches": ds.batches.len(),
                "frames": ds.frame_count(), "contact_frames": contact,
            })
        }
        Command::Train { dataset } => {
            let ds = load_dataset(dataset)?;
            let mut losses = String::from("stage,epoch,loss\n");
            let mut last = f64::NAN;
            let pred = train_model(&ds, &cfg.model, &cfg.train, |e| {
                run.progress(&format!("{} epoch {} loss {:.6}", e.stage, e.epoch, e.loss));
                losses.push_str(&format!("{},{},{}\n", e.stage, e.epoch, e.loss));
                last = e.loss;
            })?;
            fs::write(run.path("losses.csv"), losses)?;
            let model_path = run.path("model.sbsm");
            match &pred {
                Predictor::Recurrent { predictor, autoencoder } => {
                    predictor.save(&model_path)?;
                    autoencoder.save(&run.path("autoencoder.sbsm"))?;
                }
                Predictor::Static(c) | Predictor::Scene(c) => c.save(&model_path)?,
                _ => unreachable!("training yields a network"),
            }
            run.progress(&format!("wrote {}", model_path.display()));
            json!({
                "checkpoint": model_path, "model": pred.describe(), "model_id": pred.id()?,
                "dataset_id": ds.digest()?, "final_loss": last,
            })
        }
        Command::Eval(m) => {
            let ds = load_dataset(&m.dataset)?;
            let pred = load_predictor(m)?;
            let ids = Ids::of(&pred, &ds)?;
            let report = evaluate_with_ids(&pred, &ds, a.split, &ids)?;
            write_eval_csv(&report, &run.path("eval.csv"))?;
            run.write_json("eval.json", &report)?;
            let batch = *ds
                .batch_indices(a.split)
                .first()
                .ok_or_else(|| CliError::Config("split has no batches".into()))?;
            let frames = panel_frames(ds.batches[batch].len(), a.panel_frames);
            let truth = frames.iter().map(|&t| ds.image_floats(batch, t)).collect();
            let predicted = frames
                .iter()
                .map(|&t| pred.predict_frame(&ds, batch, t))
                .collect::<Result<Vec<_>, _>>()?;
            write_panel_png(&run.path("eval.png"), ds.header.width, ds.header.height, &[truth, predicted])?;
            run.progress(&format!("mean mse {:.6} over {} frames", report.mean, report.frames.len()));
            json!({
                "model_id": report.model_id, "dataset_id": report.dataset_id, "split": report.split,
                "mean": report.mean, "std": report.std, "contact_mean": report.contact_mean,
                "frames": report.frames.len(),
            })
        }
        Command::Ablate(m) => {
            let ds = load_dataset(&m.dataset)?;
            let pred = load_predictor(m)?;
            let report = ablate_inputs(&pred, &ds, a.split)?;
            write_ablation_csv(&report, &run.path("ablation.csv"))?;
            run.write_json("ablation.json", &report)?;
            run.progress(&format!("baseline mse {:.6}", report.baseline_mse));
            serde_json::to_value(&report).map_err(|e| CliError::Io(e.to_string()))?
        }
        Command::Lagscan(m) => {
            let ds = load_dataset(&m.dataset)?;
            let pred = load_predictor(m)?;
            let scan = lag_scan(&pred, &ds, a.split, a.signal, &a.lags)?;
            write_lag_csv(&scan, &run.path("lagscan.csv"))?;
            run.write_json("lagscan.json", &scan)?;
            for p in &scan.points {
                run.progress(&format!("lag {} mse {:.6}", p.lag, p.mse));
            }
            json!({
                "model_id": scan.model_id, "dataset_id": scan.dataset_id, "signal": scan.signal,
                "argmin": scan.argmin(), "points": scan.points.len(),
            })
        }
        Command::Noise(m) => {
            let ds = load_dataset(&m.dataset)?;
            let pred = load_predictor(m)?;
            let result = noise_filter_check(&pred, &ds, a.split)?;
            run.write_json("noise.json", &result)?;
            match &result {
                NoiseFilter::NoDistractor => run.progress("no distractor pixels in this split"),
                NoiseFilter::Ratio { ratio, pixels, .. } => {
                    run.progress(&format!("variance ratio {ratio:.4} over {pixels} pixels"))
                }
            }
            json!({ "model_id": pred.id()?, "dataset_id": ds.digest()?, "result": result })
        }
        Command::Latent(m) => {
            let ds = load_dataset(&m.dataset)?;
            let pred = load_predictor(m)?;
            let layer = match a.layer.clone().or_else(|| default_layer(&pred)) {
                Some(l) => l,
                None => return Err(CliError::Config("model has no latent layers".into())),
            };
            let report = latent_segmentation(&pred, &ds, a.batch, a.frame, &layer)?;
            write_segmentation_csv(&report, &run.path("segmentation.csv"))?;
            write_maps_png(&run.path("maps.png"), &report, 8)?;
            let image = &ds.frame(a.batch, a.frame).image;
            let baseline = permutation_baseline(&report, image, a.class, a.permutation_draws, cfg.seed);
            let p95 = percentile(&baseline, 95.0);
            let (channel, best) = report.best_for(a.class);
            run.progress(&format!(
                "{} best IoU {best:.3} (channel {channel}), permutation p95 {p95:.3}",
                a.class.name()
            ));
            json!({
                "layer": layer, "batch": a.batch, "t": a.frame, "class": a.class,
                "best_channel": channel, "best_iou": best, "permutation_p95": p95,
                "above_baseline": best > p95,
            })
        }
        Command::Compare { dataset } => {
            let ds = load_dataset(dataset)?;
            let with_arch = |arch| ModelConfig {
                architecture: arch,
                ..cfg.model.clone()
            };
            let cc = CompareConfig {
                scene_conditioned: with_arch(Architecture::SceneConditioned),
                recurrent: with_arch(Architecture::Recurrent),
                train: cfg.train.clone(),
                split: a.split,
                panel_frames: a.panel_frames,
            };
            let dir = run.dir.clone();
            let cmp = compare_architectures(&ds, &cc, Some(&dir), |line| run.progress(line))?;
            json!({
                "dataset_id": cmp.dataset_id,
                "scene_conditioned": cmp.scene_conditioned.mean,
                "recurrent": cmp.recurrent.mean,
                "seconds": cmp.seconds,
                "lower_error": cmp.lower_error,
            })
        }
    };
    let mut summary = summary;
    summary["command"] = json!(name);
    summary["out"] = json!(run.dir);
    run.progress("done");
    Ok(summary)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let first = e.to_string().lines().next().unwrap_or_default().trim_start_matches("error: ").to_string();
            return fail(&CliError::Config(first));
        }
    };
    match execute(&cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => fail(&e),
    }
}

fn fail(e: &CliError) -> ExitCode {
    let msg = e.to_string().replace('\n', " ");
    println!("{}", json!({ "error": e.class(), "message": msg }));
    eprintln!("error[{}]: {msg}", e.class());
    ExitCode::from(e.exit_code() as u8)
}
