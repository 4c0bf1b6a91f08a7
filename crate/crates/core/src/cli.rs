//! The `n2n` command line: synth-data, train, eval, infer, ablate.
//!
//! A JSON config (`--config`) plus dotted-path overrides (`--set key=value`)
//! drive everything; `--seed` points every random stream at one value.
//! Validation happens before any side effect, artifacts embed the config
//! fingerprint, and errors come out as a single machine-parsable line.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::config::RunConfig;
use crate::data_io::{
    load_image, make_synthetic_dataset, render_heatmap, save_rgb, scan_dataset,
    tensor_to_raw_image,
};
use crate::error::{Error, Result};
use crate::evaluation::{
    ablate, evaluate, image_score, infer_anomaly_map, train_and_evaluate, EvalOptions,
};
use crate::fingerprint::fingerprint_of;
use crate::rng::stable_hash;
use crate::training::{load_checkpoint, save_checkpoint, Checkpoint, EpochRecord};

#[derive(Parser)]
#[command(
    name = "n2n",
    version,
    about = "Noise-to-norm reconstruction toolkit for anomaly detection"
)]
struct Cli {
    /// JSON configuration file; defaults apply when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Override one config key, e.g. --set noise.lambda=0.3 (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,

    /// Override every seed (split/init/noise/synth) at once.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic-defect dataset under data.root.
    SynthData,
    /// Train on the configured category's normal images.
    Train,
    /// Evaluate a checkpoint on the test split (image + pixel AUROC).
    Eval {
        /// Checkpoint path; defaults to <out_dir>/model.ckpt.
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
        /// Proceed even when the checkpoint's model config differs from
        /// the runtime config.
        #[arg(long)]
        allow_config_drift: bool,
    },
    /// Write per-image heatmap/overlay/region panels and a score CSV.
    Infer {
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        allow_config_drift: bool,
    },
    /// Train and evaluate once per value of one config key.
    Ablate {
        /// Sweep spec, e.g. --sweep noise.lambda=0,0.3
        #[arg(long, value_name = "KEY=V1,V2,...")]
        sweep: String,
    },
}

/// Runs the CLI; returns the process exit code. 0 success, 2 for argument
/// and configuration problems, 1 for runtime failures.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            // clap renders its own message (including --help/--version,
            // which exit 0).
            return e.exit_code_and_print();
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::InvalidArgument { .. } => 2,
                _ => 1,
            }
        }
    }
}

trait ClapExit {
    fn exit_code_and_print(self) -> i32;
}

impl ClapExit for clap::Error {
    fn exit_code_and_print(self) -> i32 {
        let code = i32::from(self.use_stderr());
        let _ = self.print();
        code * 2
    }
}

fn build_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::from_json_file(path)?,
        None => RunConfig::default(),
    };
    for pair in &cli.set {
        let (key, value) = pair.split_once('=').ok_or_else(|| {
            Error::Config(format!("--set expects KEY=VALUE, got '{pair}'"))
        })?;
        cfg = cfg.apply_override(key, value)?;
    }
    if let Some(seed) = cli.seed {
        cfg = cfg.with_all_seeds(seed);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn dispatch(cli: Cli) -> Result<()> {
    let cfg = build_config(&cli)?;
    match &cli.command {
        Command::SynthData => cmd_synth(&cfg),
        Command::Train => cmd_train(&cfg),
        Command::Eval {
            checkpoint,
            allow_config_drift,
        } => cmd_eval(&cfg, checkpoint.as_deref(), *allow_config_drift),
        Command::Infer {
            checkpoint,
            allow_config_drift,
        } => cmd_infer(&cfg, checkpoint.as_deref(), *allow_config_drift),
        Command::Ablate { sweep } => cmd_ablate(&cfg, sweep),
    }
}

fn ensure_out_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = cfg.out_dir();
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

fn write_text_atomic(path: &Path, content: &str) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, content).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn default_checkpoint_path(cfg: &RunConfig) -> PathBuf {
    cfg.out_dir().join("model.ckpt")
}

fn cmd_synth(cfg: &RunConfig) -> Result<()> {
    make_synthetic_dataset(&cfg.data_root(), &cfg.synth)?;
    println!(
        "synthetic dataset written to {} ({} train / {} good / {} defect, {}x{}, seed {})",
        cfg.data_root().join(crate::data_io::SYNTH_CATEGORY).display(),
        cfg.synth.train,
        cfg.synth.test_good,
        cfg.synth.test_defect,
        cfg.synth.size,
        cfg.synth.size,
        cfg.synth.seed
    );
    Ok(())
}

fn epoch_csv(records: &[EpochRecord], hash: &str) -> String {
    let mut out = format!("# config={hash}\nepoch,train_loss,val_loss,lr\n");
    for r in records {
        let _ = writeln!(
            out,
            "{},{:.6},{:.6},{:.6e}",
            r.epoch, r.train_loss, r.val_loss, r.lr
        );
    }
    out
}

fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let out_dir = ensure_out_dir(cfg)?;
    let hash = cfg.fingerprint();
    let index = scan_dataset(&cfg.data_root(), &cfg.data.category)?;
    let images = crate::evaluation::load_train_images(&index, cfg.train.image_size)?;

    // Stream the epoch log so partial runs leave usable records behind.
    let log_path = out_dir.join("epochs.csv");
    let mut log = fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    writeln!(log, "# config={hash}").map_err(|e| Error::io(&log_path, e))?;
    writeln!(log, "epoch,train_loss,val_loss,lr").map_err(|e| Error::io(&log_path, e))?;

    let outcome = crate::training::train(
        &images,
        &cfg.model,
        &cfg.noise,
        &cfg.ssim,
        &cfg.loss,
        &cfg.train,
        |r| {
            println!(
                "epoch {:>4}  train {:.6}  val {:.6}  lr {:.3e}",
                r.epoch, r.train_loss, r.val_loss, r.lr
            );
            let _ = writeln!(
                log,
                "{},{:.6},{:.6},{:.6e}",
                r.epoch, r.train_loss, r.val_loss, r.lr
            );
        },
    )?;
    drop(log);
    // Rewrite atomically so the final artifact is complete and canonical.
    write_text_atomic(&log_path, &epoch_csv(&outcome.epochs, &hash))?;

    let ckpt_path = default_checkpoint_path(cfg);
    save_checkpoint(&outcome.checkpoint, &ckpt_path)?;
    println!(
        "checkpoint written to {} ({} epochs, best val loss {:.6})",
        ckpt_path.display(),
        outcome.checkpoint.meta.epochs_run,
        outcome.checkpoint.meta.best_val_loss
    );
    Ok(())
}

fn load_checked_checkpoint(
    cfg: &RunConfig,
    explicit: Option<&Path>,
    allow_drift: bool,
) -> Result<Checkpoint> {
    let path = explicit
        .map(Path::to_path_buf)
        .unwrap_or_else(|| default_checkpoint_path(cfg));
    let ckpt = load_checkpoint(&path)?;
    let runtime_fp = fingerprint_of(&cfg.model);
    if ckpt.meta.model_fingerprint != runtime_fp && !allow_drift {
        return Err(Error::Config(format!(
            "checkpoint model config ({}) differs from runtime config ({}); \
             pass --allow-config-drift to use it anyway",
            ckpt.meta.model_fingerprint, runtime_fp
        )));
    }
    Ok(ckpt)
}

fn cmd_eval(cfg: &RunConfig, checkpoint: Option<&Path>, allow_drift: bool) -> Result<()> {
    let out_dir = ensure_out_dir(cfg)?;
    let ckpt = load_checked_checkpoint(cfg, checkpoint, allow_drift)?;
    let index = scan_dataset(&cfg.data_root(), &cfg.data.category)?;
    let hash = cfg.fingerprint();
    let report = evaluate(
        &ckpt,
        &index,
        &EvalOptions {
            image_size: cfg.train.image_size,
            smooth_sigma: cfg.smooth_sigma(),
            noise_seed: cfg.train.noise_seed,
            config_hash: hash.clone(),
        },
    )?;

    let csv = format!(
        "# config={hash}\n{}\n{}\n",
        crate::evaluation::EvalReport::CSV_HEADER,
        report.csv_row()
    );
    let path = out_dir.join("eval.csv");
    write_text_atomic(&path, &csv)?;

    println!("category       : {}", report.category);
    println!("image AUROC    : {:.4}", report.image_auroc);
    println!("pixel AUROC    : {:.4}", report.pixel_auroc);
    println!(
        "test images    : {} normal / {} anomalous",
        report.n_normal, report.n_anomalous
    );
    println!("config hash    : {}", report.config_hash);
    println!("report written : {}", path.display());
    Ok(())
}

fn cmd_infer(cfg: &RunConfig, checkpoint: Option<&Path>, allow_drift: bool) -> Result<()> {
    let out_dir = ensure_out_dir(cfg)?;
    let ckpt = load_checked_checkpoint(cfg, checkpoint, allow_drift)?;
    let index = scan_dataset(&cfg.data_root(), &cfg.data.category)?;
    let hash = cfg.fingerprint();
    let panel_dir = out_dir.join("panels");
    fs::create_dir_all(&panel_dir).map_err(|e| Error::io(&panel_dir, e))?;

    let mut csv = format!("# config={hash}\nimage,score,is_anomalous\n");
    for entry in &index.test {
        let raw = load_image(&entry.path, cfg.train.image_size)?;
        let seed = stable_hash(&entry.rel_path) ^ cfg.train.noise_seed;
        let am = infer_anomaly_map(&ckpt, &raw, seed, cfg.smooth_sigma())?;
        let score = image_score(&am);

        let stem = format!(
            "{}_{}",
            entry.defect_type,
            Path::new(&entry.rel_path)
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or("image")
        );
        let panels = render_heatmap(&am, &tensor_to_raw_image(&raw));
        save_rgb(&panel_dir.join(format!("{stem}_heat.png")), &panels.heatmap)?;
        save_rgb(&panel_dir.join(format!("{stem}_overlay.png")), &panels.overlay)?;
        save_rgb(&panel_dir.join(format!("{stem}_regions.png")), &panels.binary)?;
        let _ = writeln!(
            csv,
            "{},{:.6},{}",
            entry.rel_path,
            score,
            u8::from(entry.is_anomalous)
        );
    }
    let csv_path = out_dir.join("scores.csv");
    write_text_atomic(&csv_path, &csv)?;
    println!(
        "{} images scored; panels under {}, scores in {}",
        index.test.len(),
        panel_dir.display(),
        csv_path.display()
    );
    Ok(())
}

fn cmd_ablate(cfg: &RunConfig, sweep: &str) -> Result<()> {
    let out_dir = ensure_out_dir(cfg)?;
    let (key, values_raw) = sweep.split_once('=').ok_or_else(|| {
        Error::Config(format!("--sweep expects KEY=V1,V2,..., got '{sweep}'"))
    })?;
    let values: Vec<String> = values_raw.split(',').map(str::to_string).collect();

    let result = ablate(cfg, key, &values, |run, r| {
        println!(
            "[{key}={}] epoch {:>4}  train {:.6}  val {:.6}",
            values[run], r.epoch, r.train_loss, r.val_loss
        );
    })?;

    let csv = format!("# config={}\n{}", cfg.fingerprint(), result.to_csv());
    let path = out_dir.join("sweep.csv");
    write_text_atomic(&path, &csv)?;

    for (value, report) in result.values.iter().zip(&result.reports) {
        println!(
            "{key}={value}: image AUROC {:.4}, pixel AUROC {:.4}",
            report.image_auroc, report.pixel_auroc
        );
    }
    println!("sweep written to {}", path.display());
    Ok(())
}
