//! Command-line front end. `main` only forwards to [`run`].

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::codec::CellKind;
use crate::dataset::{load_dataset, save_dataset, Dataset};
use crate::error::{Error, Result};
use crate::harness::{
    dataset_for_seed, emit_csv, fmt_sig, gradcheck_run, pilot_error_table, run_sweep, train_cell, unix_now,
    ExperimentConfig, RunManifest, SubSeeds, SweepEvent,
};
use crate::model::{Mode, ModelDims};
use crate::trainer::{evaluate, save_checkpoint, FdScheme};

#[derive(Parser, Debug)]
#[command(name = "semcom", version, about = "Audio-visual semantic communication simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train and evaluate every (channel, seed, mode, csi) over the SNR list and write a CSV.
    Simulate(SimulateArgs),
    /// Train one model (first channel, seed, mode and csi) and report held-out accuracy.
    Train(TrainArgs),
    /// Compare analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
    /// Print the pilot channel-estimation error against SNR.
    PilotDemo(PilotDemoArgs),
}

/// Flags shared by every experiment verb; they override the config file.
#[derive(Args, Debug, Default, Clone)]
pub struct ConfigArgs {
    /// key=value config file; `#` starts a comment.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Comma-separated list of awgn, rayleigh, rician.
    #[arg(long)]
    pub channel: Option<String>,
    #[arg(long)]
    pub rician_k: Option<String>,
    /// Comma-separated SNRs in dB; `inf` means noiseless.
    #[arg(long)]
    pub snr_list: Option<String>,
    #[arg(long)]
    pub seeds: Option<String>,
    /// Comma-separated list of audio-only, video-only, multimodal.
    #[arg(long)]
    pub mode: Option<String>,
    /// Comma-separated list of pilot, perfect, none.
    #[arg(long)]
    pub csi: Option<String>,
    /// Any other config key, as key=value. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::from_file(path)?,
            None => ExperimentConfig::default(),
        };
        self.apply(&mut cfg)?;
        Ok(cfg)
    }

    fn apply(&self, cfg: &mut ExperimentConfig) -> Result<()> {
        let flags = [
            ("channel", &self.channel),
            ("rician_k", &self.rician_k),
            ("snr_list", &self.snr_list),
            ("seeds", &self.seeds),
            ("mode", &self.mode),
            ("csi", &self.csi),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        for kv in &self.set {
            let (k, v) = kv.split_once('=').ok_or_else(|| Error::Config(format!("--set expects key=value, got '{kv}'")))?;
            cfg.set(k, v)?;
        }
        Ok(())
    }
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[arg(long, default_value = "metrics.csv")]
    pub out: PathBuf,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Rebuild the configuration from an earlier manifest; other flags still override it.
    #[arg(long)]
    pub from_manifest: Option<PathBuf>,
    #[arg(long, short)]
    pub quiet: bool,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    /// Write the trained parameters as a tensor file.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Train on a tensor-file dataset instead of synthesising one.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Save the dataset used for training.
    #[arg(long)]
    pub export_dataset: Option<PathBuf>,
    #[arg(long, short)]
    pub quiet: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SchemeArg {
    Central,
    Richardson,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    #[arg(long, default_value = "multimodal")]
    pub mode: Mode,
    #[arg(long, default_value = "single-gate")]
    pub cell: CellKind,
    #[arg(long, default_value_t = 4)]
    pub segments: usize,
    #[arg(long, default_value_t = 100.0)]
    pub beta: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "richardson")]
    pub scheme: SchemeArg,
    /// Use the full default layer widths instead of the compact check model.
    #[arg(long)]
    pub full_dims: bool,
}

#[derive(Args, Debug)]
pub struct PilotDemoArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[arg(long, default_value_t = 1000)]
    pub trials: usize,
    #[arg(long, default_value_t = 2)]
    pub users: usize,
}

/// Exit status once the command has finished without an error.
pub const EXIT_OK: i32 = 0;
pub const EXIT_NUMERICAL: i32 = 3;

pub fn run(cli: Cli, out: &mut dyn Write, log: &mut dyn Write) -> Result<i32> {
    match cli.command {
        Command::Simulate(a) => simulate(a, out, log),
        Command::Train(a) => train_cmd(a, out, log),
        Command::Gradcheck(a) => gradcheck(a, out),
        Command::PilotDemo(a) => pilot_demo(a, out),
    }
}

fn simulate(a: SimulateArgs, out: &mut dyn Write, log: &mut dyn Write) -> Result<i32> {
    let mut cfg = match &a.from_manifest {
        Some(path) => RunManifest::parse(&std::fs::read_to_string(path)?)?.config()?,
        None => ExperimentConfig::default(),
    };
    if let Some(path) = &a.cfg.config {
        cfg.apply_text(&std::fs::read_to_string(path)?)?;
    }
    a.cfg.apply(&mut cfg)?;
    let started = unix_now();
    let (rows, manifest) = run_sweep(&cfg, |ev| {
        if a.quiet {
            return;
        }
        let _ = match ev {
            SweepEvent::Training { channel, seed, mode, csi } => {
                writeln!(log, "training channel={channel} seed={seed} mode={mode} csi={csi}")
            }
            SweepEvent::Epoch(e) => writeln!(log, "  epoch {:3} loss {:.4} acc {:.3}", e.epoch, e.loss, e.accuracy),
            SweepEvent::Row(r) => writeln!(
                log,
                "  snr {:>7} dB  accuracy {}  erasures {}",
                fmt_sig(r.snr_db),
                fmt_sig(r.segment_accuracy),
                r.frame_erasures
            ),
        };
    })?;
    emit_csv(&rows, &a.out)?;
    if let Some(path) = &a.manifest {
        manifest.write(path, started, unix_now())?;
    }
    writeln!(out, "wrote {} rows to {}", rows.len(), a.out.display())?;
    Ok(EXIT_OK)
}

/// Adopts the shapes of an imported dataset.
fn fit_config_to(cfg: &mut ExperimentConfig, data: &Dataset) -> Result<()> {
    let first = data.samples.first().ok_or_else(|| Error::Config("imported dataset is empty".into()))?;
    cfg.dims.audio_dim = first.audio.dim();
    cfg.dims.visual_dim = first.visual.dim();
    cfg.dims.locations = first.visual.locations();
    cfg.dims.classes = data.classes;
    cfg.dataset.audio_dim = cfg.dims.audio_dim;
    cfg.dataset.visual_dim = cfg.dims.visual_dim;
    cfg.dataset.locations = cfg.dims.locations;
    cfg.dataset.classes = data.classes;
    cfg.dataset.samples = data.len();
    cfg.dataset.segments = first.segments();
    Ok(())
}

fn train_cmd(a: TrainArgs, out: &mut dyn Write, log: &mut dyn Write) -> Result<i32> {
    let mut cfg = a.cfg.resolve()?;
    let (kind, seed, mode, csi) = (cfg.channels[0], cfg.seeds[0], cfg.modes[0], cfg.csi[0]);
    let data = match &a.dataset {
        Some(path) => {
            let data = load_dataset(path)?;
            fit_config_to(&mut cfg, &data)?;
            data
        }
        None => {
            cfg.validate()?;
            dataset_for_seed(&cfg, seed)?
        }
    };
    cfg.validate()?;
    if let Some(path) = &a.export_dataset {
        save_dataset(path, &data)?;
    }
    writeln!(out, "training channel={kind} seed={seed} mode={mode} csi={csi} samples={}", data.len())?;
    let params = train_cell(&cfg, &data, kind, seed, mode, csi, |e| {
        if !a.quiet {
            let _ = writeln!(
                log,
                "epoch {:3} loss {:.4} cls {:.4} avs {:.4} acc {:.3} step {:.2e}",
                e.epoch, e.loss, e.cls, e.avs, e.accuracy, e.step_size
            );
        }
    })?;
    let (_, test_set) = data.split(cfg.train_count());
    let setting = cfg.channel_setting(kind, csi);
    let sub = SubSeeds::for_seed(seed);
    writeln!(out, "snr_db,segment_accuracy,frame_erasures")?;
    for &snr in &cfg.snr_list {
        let stats = evaluate(&params, &cfg.dims, test_set, mode, &setting, snr, &mut sub.eval_at(snr))?;
        writeln!(out, "{},{},{}", fmt_sig(snr), fmt_sig(stats.accuracy()), stats.erasures)?;
    }
    if let Some(path) = &a.checkpoint {
        save_checkpoint(path, &params)?;
    }
    Ok(EXIT_OK)
}

fn gradcheck(a: GradcheckArgs, out: &mut dyn Write) -> Result<i32> {
    let base = if a.full_dims { ModelDims::default() } else { ModelDims::gradcheck() };
    let dims = ModelDims { cell: a.cell, ..base };
    let scheme = match a.scheme {
        SchemeArg::Central => FdScheme::Central,
        SchemeArg::Richardson => FdScheme::Richardson,
    };
    let report = gradcheck_run(&dims, a.mode, a.segments, a.beta, a.seed, scheme)?;
    writeln!(out, "{:<12} {:>14} {:>8} {:>8}", "group", "max_rel_error", "checked", "skipped")?;
    for (name, (err, checked, skipped)) in report.groups() {
        writeln!(out, "{name:<12} {err:>14.3e} {checked:>8} {skipped:>8}")?;
    }
    let verdict = if report.passed() { "PASS" } else { "FAIL" };
    writeln!(out, "{verdict}: max relative error {:.3e} (threshold {:.0e})", report.max_rel_error(), report.threshold)?;
    Ok(if report.passed() { EXIT_OK } else { EXIT_NUMERICAL })
}

fn pilot_demo(a: PilotDemoArgs, out: &mut dyn Write) -> Result<i32> {
    let cfg = a.cfg.resolve()?;
    if a.users == 0 || a.users > cfg.antennas || a.trials == 0 {
        return Err(Error::Config("need 1 <= users <= antennas and at least one trial".into()));
    }
    let snrs: Vec<f64> = cfg.snr_list.iter().copied().filter(|s| s.is_finite()).collect();
    if snrs.is_empty() {
        return Err(Error::Config("pilot-demo needs at least one finite SNR".into()));
    }
    writeln!(out, "channel,snr_db,mean_sq_error,trials")?;
    for &kind in &cfg.channels {
        let rows =
            pilot_error_table(cfg.channel_model(kind), cfg.antennas, a.users, cfg.pilot_len_per_user, &snrs, a.trials, cfg.seeds[0])?;
        for r in rows {
            writeln!(out, "{kind},{},{:.6e},{}", fmt_sig(r.snr_db), r.mean_error, r.trials)?;
        }
    }
    Ok(EXIT_OK)
}
