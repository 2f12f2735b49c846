//! Experiment configuration, SNR sweeps, CSV metrics and run manifests.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::channel::{draw_channel, snr_to_noise_power, ChannelKind, ChannelModel, DEFAULT_RICIAN_K};
use crate::dataset::{synth_dataset, Dataset, DatasetConfig};
use crate::equalizer::{ls_estimate, make_pilot, PilotConfig, DEFAULT_PILOT_LEN_PER_USER};
use crate::error::{Error, Result};
use crate::link::Csi;
use crate::model::{Mode, ModelDims, ModelParams};
use crate::numeric::{sample_cn, SeededRng};
use crate::trainer::{
    default_snr_grid, draw_frame_links, evaluate, model_grad_check, stream_len, train, ChannelSetting, EpochStats,
    FdScheme, GradCheckReport, LinkSetting, OptimizerKind, OptimizerState, TrainConfig,
};

pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const CSV_HEADER: [&str; 7] = ["channel", "snr_db", "seed", "mode", "csi", "segment_accuracy", "frame_erasures"];

/// Training hyper-parameters as they appear in a config file.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingParams {
    pub epochs: usize,
    pub batch_size: usize,
    pub beta: f64,
    pub optimizer: OptimizerKind,
    pub step_size: f64,
    pub decay_every: usize,
    pub decay_factor: f64,
    pub clip_norm: Option<f64>,
    pub train_snr_list: Vec<f64>,
    pub stop_at_accuracy: Option<f64>,
}

impl Default for TrainingParams {
    fn default() -> Self {
        Self {
            epochs: 40,
            batch_size: 16,
            beta: 100.0,
            optimizer: OptimizerKind::adam(),
            step_size: 3e-3,
            decay_every: 50,
            decay_factor: 0.5,
            clip_norm: Some(1.0),
            train_snr_list: default_snr_grid(),
            stop_at_accuracy: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub channels: Vec<ChannelKind>,
    pub rician_k: f64,
    pub snr_list: Vec<f64>,
    pub seeds: Vec<u64>,
    pub modes: Vec<Mode>,
    pub csi: Vec<Csi>,
    pub dataset: DatasetConfig,
    /// Fraction of samples used for training; the rest are held out.
    pub train_fraction: f64,
    pub dims: ModelDims,
    pub training: TrainingParams,
    pub antennas: usize,
    pub power: f64,
    pub pilot_len_per_user: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            channels: ChannelKind::ALL.to_vec(),
            rician_k: DEFAULT_RICIAN_K,
            snr_list: default_snr_grid(),
            seeds: vec![0],
            modes: vec![Mode::Multimodal],
            csi: vec![Csi::Pilot],
            dataset: DatasetConfig::default(),
            train_fraction: 0.8,
            dims: ModelDims::default(),
            training: TrainingParams::default(),
            antennas: 2,
            power: 1.0,
            pilot_len_per_user: DEFAULT_PILOT_LEN_PER_USER,
        }
    }
}

fn bad(key: &str, value: &str) -> Error {
    Error::Config(format!("invalid value '{value}' for '{key}'"))
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.trim().parse().map_err(|_| bad(key, value))
}

fn parse_list<T>(key: &str, value: &str, f: impl Fn(&str) -> Result<T>) -> Result<Vec<T>> {
    let items = value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(&f)
        .collect::<Result<Vec<_>>>()?;
    if items.is_empty() {
        return Err(Error::Config(format!("'{key}' needs at least one value")));
    }
    Ok(items)
}

fn parse_optional(key: &str, value: &str) -> Result<Option<f64>> {
    match value.trim() {
        "none" | "off" | "" => Ok(None),
        v => parse_num(key, v).map(Some),
    }
}

fn parse_snr(key: &str, v: &str) -> Result<f64> {
    match v {
        "inf" | "+inf" => Ok(f64::INFINITY),
        _ => {
            let x: f64 = parse_num(key, v)?;
            if x.is_finite() {
                Ok(x)
            } else {
                Err(bad(key, v))
            }
        }
    }
}

/// Formats `x` with six significant digits in fixed notation.
pub fn fmt_sig(x: f64) -> String {
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0.00000".into();
    }
    let int_digits = x.abs().log10().floor() as i32 + 1;
    let decimals = (6 - int_digits).max(0) as usize;
    let s = format!("{x:.decimals$}");
    // Rounding can carry into a new leading digit, e.g. 9.999999 -> 10.00000.
    let digits = s.chars().filter(char::is_ascii_digit).collect::<String>();
    let significant = digits.trim_start_matches('0').len();
    if significant > 6 && decimals > 0 {
        let decimals = decimals - 1;
        return format!("{x:.decimals$}");
    }
    s
}

fn join_list<T: ToString>(items: &[T]) -> String {
    items.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn fmt_list(xs: &[f64]) -> String {
    xs.iter().map(|&x| fmt_sig(x)).collect::<Vec<_>>().join(",")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "none".to_string(), fmt_sig)
}

impl ExperimentConfig {
    /// Applies one `key=value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let d = &mut self.dims;
        let t = &mut self.training;
        let ds = &mut self.dataset;
        match key.trim() {
            "channel" => self.channels = parse_list(key, v, |s| s.parse())?,
            "rician_k" => self.rician_k = parse_num(key, v)?,
            "snr_list" => self.snr_list = parse_list(key, v, |s| parse_snr(key, s))?,
            "seeds" => self.seeds = parse_list(key, v, |s| parse_num(key, s))?,
            "mode" => self.modes = parse_list(key, v, |s| s.parse())?,
            "csi" => self.csi = parse_list(key, v, |s| s.parse())?,
            "samples" => ds.samples = parse_num(key, v)?,
            "segments" => ds.segments = parse_num(key, v)?,
            "classes" => {
                ds.classes = parse_num(key, v)?;
                d.classes = ds.classes;
            }
            "jitter" => ds.jitter = parse_num(key, v)?,
            "distractor_rate" => ds.distractor_rate = parse_num(key, v)?,
            "latent_dim" => ds.latent_dim = parse_num(key, v)?,
            "min_span" => ds.min_span = parse_num(key, v)?,
            "train_fraction" => self.train_fraction = parse_num(key, v)?,
            "audio_dim" => {
                d.audio_dim = parse_num(key, v)?;
                ds.audio_dim = d.audio_dim;
            }
            "visual_dim" => {
                d.visual_dim = parse_num(key, v)?;
                ds.visual_dim = d.visual_dim;
            }
            "locations" => {
                d.locations = parse_num(key, v)?;
                ds.locations = d.locations;
            }
            "attn_dim" => d.attn_dim = parse_num(key, v)?,
            "hidden" => d.hidden = parse_num(key, v)?,
            "code_dim" => d.code_dim = parse_num(key, v)?,
            "enc_hidden" => d.enc_hidden = parse_num(key, v)?,
            "dec_hidden" => d.dec_hidden = parse_num(key, v)?,
            "common_dim" => d.common_dim = parse_num(key, v)?,
            "sim_dim" => d.sim_dim = parse_num(key, v)?,
            "head_hidden" => d.head_hidden = parse_num(key, v)?,
            "cell" => d.cell = v.parse()?,
            "tau1" => d.tau1 = parse_num(key, v)?,
            "epochs" => t.epochs = parse_num(key, v)?,
            "batch_size" => t.batch_size = parse_num(key, v)?,
            "beta" => t.beta = parse_num(key, v)?,
            "optimizer" => t.optimizer = v.parse()?,
            "step_size" => t.step_size = parse_num(key, v)?,
            "decay_every" => t.decay_every = parse_num(key, v)?,
            "decay_factor" => t.decay_factor = parse_num(key, v)?,
            "clip_norm" => t.clip_norm = parse_optional(key, v)?,
            "stop_at_accuracy" => t.stop_at_accuracy = parse_optional(key, v)?,
            "train_snr_list" => t.train_snr_list = parse_list(key, v, |s| parse_snr(key, s))?,
            "antennas" => self.antennas = parse_num(key, v)?,
            "power" => self.power = parse_num(key, v)?,
            "pilot_len" => self.pilot_len_per_user = parse_num(key, v)?,
            other => return Err(Error::Config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got '{line}'", n + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(&fs::read_to_string(path)?)?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.snr_list.is_empty() || self.seeds.is_empty() || self.channels.is_empty() {
            return Err(Error::Config("snr list, seeds and channels must be nonempty".into()));
        }
        if self.modes.is_empty() || self.csi.is_empty() {
            return Err(Error::Config("mode and csi lists must be nonempty".into()));
        }
        if self.dataset.classes != self.dims.classes {
            return Err(Error::Config("dataset and model disagree on the class count".into()));
        }
        self.dataset.validate()?;
        self.dims.validate()?;
        ChannelModel::new(ChannelKind::Rician, self.rician_k)?;
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config("train_fraction must lie in (0, 1)".into()));
        }
        let n_train = self.train_count();
        if n_train == 0 || n_train >= self.dataset.samples {
            return Err(Error::Config("need at least one training and one held-out sample".into()));
        }
        if self.training.train_snr_list.is_empty() {
            return Err(Error::Config("train_snr_list must be nonempty".into()));
        }
        if self.antennas < 2 {
            return Err(Error::Config("the base station needs at least two antennas".into()));
        }
        if !(self.power > 0.0) {
            return Err(Error::NonPositivePower(self.power));
        }
        if self.pilot_len_per_user < 2 {
            return Err(Error::Config("pilot_len must be at least 2".into()));
        }
        self.optimizer()?;
        Ok(())
    }

    pub fn train_count(&self) -> usize {
        (self.dataset.samples as f64 * self.train_fraction).round() as usize
    }

    pub fn optimizer(&self) -> Result<OptimizerState> {
        let t = &self.training;
        OptimizerState::new(t.step_size, t.decay_every, t.decay_factor, t.optimizer)
    }

    pub fn channel_model(&self, kind: ChannelKind) -> ChannelModel {
        ChannelModel { kind, rician_k: self.rician_k }
    }

    pub fn channel_setting(&self, kind: ChannelKind, csi: Csi) -> ChannelSetting {
        let mut link = LinkSetting::new(self.channel_model(kind), csi);
        link.antennas = self.antennas;
        link.power = self.power;
        link.pilot_len_per_user = self.pilot_len_per_user;
        ChannelSetting::Link(link)
    }

    pub fn train_config(&self, kind: ChannelKind, mode: Mode, csi: Csi) -> Result<TrainConfig> {
        let t = &self.training;
        Ok(TrainConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            beta: t.beta,
            optimizer: self.optimizer()?,
            mode,
            channel: self.channel_setting(kind, csi),
            snr_grid: t.train_snr_list.clone(),
            stop_at_accuracy: t.stop_at_accuracy,
            clip_norm: t.clip_norm,
        })
    }

    /// Every setting as `key=value` pairs in a fixed order.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let d = &self.dims;
        let t = &self.training;
        let ds = &self.dataset;
        let pairs: Vec<(&str, String)> = vec![
            ("channel", join_list(&self.channels)),
            ("rician_k", fmt_sig(self.rician_k)),
            ("snr_list", fmt_list(&self.snr_list)),
            ("seeds", join_list(&self.seeds)),
            ("mode", join_list(&self.modes)),
            ("csi", join_list(&self.csi)),
            ("samples", ds.samples.to_string()),
            ("segments", ds.segments.to_string()),
            ("classes", ds.classes.to_string()),
            ("jitter", fmt_sig(ds.jitter)),
            ("distractor_rate", fmt_sig(ds.distractor_rate)),
            ("latent_dim", ds.latent_dim.to_string()),
            ("min_span", ds.min_span.to_string()),
            ("train_fraction", fmt_sig(self.train_fraction)),
            ("audio_dim", d.audio_dim.to_string()),
            ("visual_dim", d.visual_dim.to_string()),
            ("locations", d.locations.to_string()),
            ("attn_dim", d.attn_dim.to_string()),
            ("hidden", d.hidden.to_string()),
            ("code_dim", d.code_dim.to_string()),
            ("enc_hidden", d.enc_hidden.to_string()),
            ("dec_hidden", d.dec_hidden.to_string()),
            ("common_dim", d.common_dim.to_string()),
            ("sim_dim", d.sim_dim.to_string()),
            ("head_hidden", d.head_hidden.to_string()),
            ("cell", d.cell.to_string()),
            ("tau1", fmt_sig(d.tau1)),
            ("epochs", t.epochs.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("beta", fmt_sig(t.beta)),
            ("optimizer", t.optimizer.to_string()),
            ("step_size", format!("{:e}", t.step_size)),
            ("decay_every", t.decay_every.to_string()),
            ("decay_factor", fmt_sig(t.decay_factor)),
            ("clip_norm", fmt_opt(t.clip_norm)),
            ("stop_at_accuracy", fmt_opt(t.stop_at_accuracy)),
            ("train_snr_list", fmt_list(&t.train_snr_list)),
            ("antennas", self.antennas.to_string()),
            ("power", fmt_sig(self.power)),
            ("pilot_len", self.pilot_len_per_user.to_string()),
        ];
        pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }
}

/// Independent generator seeds for each stage of one run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SubSeeds {
    pub data: u64,
    pub init: u64,
    pub train: u64,
    pub eval: u64,
}

impl SubSeeds {
    /// Training and evaluation streams do not depend on channel, mode or csi,
    /// so compared settings see identical data order and channel draws.
    pub fn for_seed(seed: u64) -> Self {
        Self {
            data: SeededRng::derive_seed(seed, "data"),
            init: SeededRng::derive_seed(seed, "init"),
            train: SeededRng::derive_seed(seed, "train"),
            eval: SeededRng::derive_seed(seed, "eval"),
        }
    }

    pub fn eval_at(&self, snr_db: f64) -> SeededRng {
        SeededRng::new(SeededRng::derive_seed(self.eval, &fmt_sig(snr_db)))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub channel: ChannelKind,
    pub snr_db: f64,
    pub seed: u64,
    pub mode: Mode,
    pub csi: Csi,
    pub segment_accuracy: f64,
    pub frame_erasures: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunManifest {
    pub config: Vec<(String, String)>,
    pub seeds: Vec<(u64, SubSeeds)>,
    pub version: String,
    pub rows: usize,
}

impl RunManifest {
    pub fn new(cfg: &ExperimentConfig, rows: usize) -> Self {
        Self {
            config: cfg.to_pairs(),
            seeds: cfg.seeds.iter().map(|&s| (s, SubSeeds::for_seed(s))).collect(),
            version: ARTIFACT_VERSION.to_string(),
            rows,
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "artifact_version={}", self.version);
        let _ = writeln!(out, "rows={}", self.rows);
        for (k, v) in &self.config {
            let _ = writeln!(out, "config.{k}={v}");
        }
        for (seed, sub) in &self.seeds {
            let _ = writeln!(out, "seed.{seed}.data={}", sub.data);
            let _ = writeln!(out, "seed.{seed}.init={}", sub.init);
            let _ = writeln!(out, "seed.{seed}.train={}", sub.train);
            let _ = writeln!(out, "seed.{seed}.eval={}", sub.eval);
        }
        out
    }

    /// Rebuilds the experiment configuration recorded in the manifest.
    pub fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::default();
        for (k, v) in &self.config {
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut config = Vec::new();
        let mut version = String::new();
        let mut rows = 0;
        let mut seeds: BTreeMap<u64, [u64; 4]> = BTreeMap::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Format(format!("manifest line '{line}'")))?;
            if let Some(key) = k.strip_prefix("config.") {
                config.push((key.to_string(), v.to_string()));
            } else if let Some(rest) = k.strip_prefix("seed.") {
                let (seed, stage) = rest.split_once('.').ok_or_else(|| Error::Format(format!("manifest key '{k}'")))?;
                let seed: u64 = seed.parse().map_err(|_| Error::Format(format!("manifest key '{k}'")))?;
                let value: u64 = v.parse().map_err(|_| Error::Format(format!("manifest value '{v}'")))?;
                let slot = match stage {
                    "data" => 0,
                    "init" => 1,
                    "train" => 2,
                    "eval" => 3,
                    _ => return Err(Error::Format(format!("manifest key '{k}'"))),
                };
                seeds.entry(seed).or_default()[slot] = value;
            } else if k == "artifact_version" {
                version = v.to_string();
            } else if k == "rows" {
                rows = v.parse().map_err(|_| Error::Format(format!("manifest rows '{v}'")))?;
            } else {
                return Err(Error::Format(format!("unknown manifest key '{k}'")));
            }
        }
        let seeds = seeds
            .into_iter()
            .map(|(s, [data, init, train, eval])| (s, SubSeeds { data, init, train, eval }))
            .collect();
        Ok(Self { config, seeds, version, rows })
    }

    /// Writes the manifest and a `.timing` sidecar holding wall-clock times,
    /// which stay out of the manifest so identical runs give identical bytes.
    pub fn write(&self, path: &Path, started: u64, finished: u64) -> Result<()> {
        fs::write(path, self.to_text())?;
        fs::write(timing_path(path), format!("wall_clock_start={started}\nwall_clock_end={finished}\n"))?;
        Ok(())
    }
}

pub fn timing_path(manifest: &Path) -> PathBuf {
    let mut s = manifest.as_os_str().to_owned();
    s.push(".timing");
    PathBuf::from(s)
}

pub fn unix_now() -> u64 {
    std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

/// Progress callback events.
#[derive(Clone, Debug)]
pub enum SweepEvent<'a> {
    Training { channel: ChannelKind, seed: u64, mode: Mode, csi: Csi },
    Epoch(&'a EpochStats),
    Row(&'a MetricsRow),
}

pub fn dataset_for_seed(cfg: &ExperimentConfig, seed: u64) -> Result<Dataset> {
    synth_dataset(&cfg.dataset, &mut SeededRng::new(SubSeeds::for_seed(seed).data))
}

/// Trains one model for a sweep cell and returns it.
pub fn train_cell(
    cfg: &ExperimentConfig,
    data: &Dataset,
    kind: ChannelKind,
    seed: u64,
    mode: Mode,
    csi: Csi,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<ModelParams> {
    let sub = SubSeeds::for_seed(seed);
    let mut params = ModelParams::init(&cfg.dims, &mut SeededRng::new(sub.init));
    let (train_set, _) = data.split(cfg.train_count());
    let tc = cfg.train_config(kind, mode, csi)?;
    train(&mut params, &cfg.dims, train_set, &tc, &mut SeededRng::new(sub.train), &mut on_epoch)?;
    Ok(params)
}

/// Trains one model per (channel, seed, mode, csi) with per-batch SNRs drawn
/// from the training grid, then evaluates it at every SNR of the sweep.
pub fn run_sweep(cfg: &ExperimentConfig, mut progress: impl FnMut(SweepEvent<'_>)) -> Result<(Vec<MetricsRow>, RunManifest)> {
    cfg.validate()?;
    let mut rows = Vec::new();
    for &seed in &cfg.seeds {
        let data = dataset_for_seed(cfg, seed)?;
        let (_, test_set) = data.split(cfg.train_count());
        let sub = SubSeeds::for_seed(seed);
        for &kind in &cfg.channels {
            for &mode in &cfg.modes {
                for &csi in &cfg.csi {
                    progress(SweepEvent::Training { channel: kind, seed, mode, csi });
                    let params = train_cell(cfg, &data, kind, seed, mode, csi, |e| progress(SweepEvent::Epoch(e)))?;
                    let setting = cfg.channel_setting(kind, csi);
                    for &snr in &cfg.snr_list {
                        let stats = evaluate(&params, &cfg.dims, test_set, mode, &setting, snr, &mut sub.eval_at(snr))?;
                        let row = MetricsRow {
                            channel: kind,
                            snr_db: snr,
                            seed,
                            mode,
                            csi,
                            segment_accuracy: stats.accuracy(),
                            frame_erasures: stats.erasures,
                        };
                        progress(SweepEvent::Row(&row));
                        rows.push(row);
                    }
                }
            }
        }
    }
    sort_rows(&mut rows);
    let manifest = RunManifest::new(cfg, rows.len());
    Ok((rows, manifest))
}

/// Orders by (channel, snr_db, seed), then mode and csi.
pub fn sort_rows(rows: &mut [MetricsRow]) {
    rows.sort_by(|a, b| {
        a.channel
            .cmp(&b.channel)
            .then(a.snr_db.total_cmp(&b.snr_db))
            .then(a.seed.cmp(&b.seed))
            .then(a.mode.cmp(&b.mode))
            .then(a.csi.as_str().cmp(b.csi.as_str()))
    });
}

pub fn write_csv<W: Write>(w: W, rows: &[MetricsRow]) -> Result<()> {
    let mut out = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
    out.write_record(CSV_HEADER)?;
    for r in rows {
        out.write_record([
            r.channel.as_str().to_string(),
            fmt_sig(r.snr_db),
            r.seed.to_string(),
            r.mode.as_str().to_string(),
            r.csi.as_str().to_string(),
            fmt_sig(r.segment_accuracy),
            r.frame_erasures.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn emit_csv(rows: &[MetricsRow], path: &Path) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::Config("no rows to write".into()));
    }
    let mut sorted = rows.to_vec();
    sort_rows(&mut sorted);
    let mut buf = Vec::new();
    write_csv(&mut buf, &sorted)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn read_csv<R: std::io::Read>(r: R) -> Result<Vec<MetricsRow>> {
    let mut rdr = csv::Reader::from_reader(r);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != CSV_HEADER {
        return Err(Error::Format(format!("unexpected CSV header {header:?}")));
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let field = |i: usize| rec.get(i).unwrap_or("");
        let fmt = |i: usize| Error::Format(format!("bad CSV field '{}'", field(i)));
        rows.push(MetricsRow {
            channel: field(0).parse().map_err(|_| fmt(0))?,
            snr_db: parse_snr("snr_db", field(1)).map_err(|_| fmt(1))?,
            seed: field(2).parse().map_err(|_| fmt(2))?,
            mode: field(3).parse().map_err(|_| fmt(3))?,
            csi: field(4).parse().map_err(|_| fmt(4))?,
            segment_accuracy: field(5).parse().map_err(|_| fmt(5))?,
            frame_erasures: field(6).parse().map_err(|_| fmt(6))?,
        });
    }
    Ok(rows)
}

/// Runs the model gradient check on one synthetic sample of `segments`
/// segments sent over a Rayleigh pilot link at 20 dB.
pub fn gradcheck_run(dims: &ModelDims, mode: Mode, segments: usize, beta: f64, seed: u64, scheme: FdScheme) -> Result<GradCheckReport> {
    dims.validate()?;
    let rng = SeededRng::new(seed);
    let params = ModelParams::init(dims, &mut rng.derive("init"));
    let data_cfg = DatasetConfig {
        samples: 1,
        segments,
        classes: dims.classes,
        audio_dim: dims.audio_dim,
        visual_dim: dims.visual_dim,
        locations: dims.locations,
        ..DatasetConfig::default()
    };
    let sample = synth_dataset(&data_cfg, &mut rng.derive("data"))?.samples.remove(0);
    let setting = ChannelSetting::Link(LinkSetting::new(ChannelModel::rayleigh(), Csi::Pilot));
    let links = draw_frame_links(&setting, 20.0, mode, stream_len(dims, segments), &mut rng.derive("link"))?;
    model_grad_check(&params, dims, &sample, &links, mode, beta, scheme)
}

/// Monte-Carlo mean of `‖Ĥ_best − H‖²_F` for pilot-based LS estimation.
#[derive(Clone, Debug, PartialEq)]
pub struct PilotErrorRow {
    pub snr_db: f64,
    pub mean_error: f64,
    pub trials: usize,
}

pub fn pilot_error_table(
    model: ChannelModel,
    antennas: usize,
    users: usize,
    pilot_len_per_user: usize,
    snrs: &[f64],
    trials: usize,
    seed: u64,
) -> Result<Vec<PilotErrorRow>> {
    let sched = make_pilot(users, users * pilot_len_per_user, &PilotConfig::default())?;
    let mut out = Vec::with_capacity(snrs.len());
    for &snr in snrs {
        let mut rng = SeededRng::new(SeededRng::derive_seed(seed, &fmt_sig(snr)));
        let sigma2 = snr_to_noise_power(1.0, snr)?;
        let mut total = 0.0;
        for _ in 0..trials {
            let ch = draw_channel(model, antennas, users, &mut rng);
            let noise = sample_cn(&mut rng, antennas, sched.len(), sigma2);
            let y = ch.h.matmul(&sched.symbols)?.try_add(&noise)?;
            let est = ls_estimate(&y, &sched)?;
            total += est.h_best.try_sub(&ch.h)?.frobenius_norm_sqr();
        }
        out.push(PilotErrorRow { snr_db: snr, mean_error: total / trials.max(1) as f64, trials });
    }
    Ok(out)
}
