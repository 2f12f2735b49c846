//! Losses, optimiser, finite-difference gradient verification and the
//! training / evaluation loops.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::channel::ChannelModel;
use crate::equalizer::{PilotConfig, DEFAULT_PILOT_LEN_PER_USER};
use crate::error::{Error, Result};
use crate::layers::Parameters;
use crate::link::{draw_link, Csi, LinkSpec};
use crate::model::{loss_and_grad, FrameLinks, Mode, ModelDims, ModelParams, Sample};
use crate::numeric::{RealMatrix, SeededRng};
use crate::psp::EventLabels;
use crate::tensor_io::{load_named, save_named, Tensor};

pub const PROB_FLOOR: f64 = 1e-12;
pub const GRAD_CHECK_STEP: f64 = 1e-4;
pub const GRAD_CHECK_THRESHOLD: f64 = 1e-4;
pub const GRAD_CHECK_FLOOR: f64 = 1e-8;

/// SNR grid used when training across channel conditions, in dB.
pub fn default_snr_grid() -> Vec<f64> {
    (0..=10).map(|i| 3.0 * i as f64).collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossReport {
    pub cls: f64,
    pub avs: f64,
    pub total: f64,
    pub beta: f64,
}

fn check_shapes(x: &RealMatrix, y: &EventLabels) -> Result<()> {
    if x.shape() != y.y.shape() {
        return Err(Error::ShapeMismatch(format!("predictions {:?} vs labels {:?}", x.shape(), y.y.shape())));
    }
    Ok(())
}

/// Mean cross-entropy over all `T x C` entries, natural log, clipped at 1e-12.
pub fn ce_loss(x: &RealMatrix, y: &EventLabels) -> Result<f64> {
    check_shapes(x, y)?;
    let n = x.data().len() as f64;
    let sum: f64 = x
        .data()
        .iter()
        .zip(y.y.data())
        .filter(|(_, &t)| t != 0.0)
        .map(|(&p, &t)| t * p.clamp(PROB_FLOOR, 1.0).ln())
        .sum();
    Ok(-sum / n)
}

/// `dL/dX` of [`ce_loss`]; zero where the clip is active.
pub fn ce_loss_grad(x: &RealMatrix, y: &EventLabels) -> RealMatrix {
    let n = x.data().len() as f64;
    RealMatrix::from_fn(x.rows(), x.cols(), |r, c| {
        let p = x[(r, c)];
        let t = y.y[(r, c)];
        if t == 0.0 || p < PROB_FLOOR || p > 1.0 {
            0.0
        } else {
            -t / (n * p)
        }
    })
}

/// Segment-similarity loss with its gradients.
#[derive(Clone, Debug)]
pub struct AvsLoss {
    pub loss: f64,
    pub cosine: Vec<Option<f64>>,
    /// Segments with a zero-norm feature, left out of the mean.
    pub skipped: Vec<usize>,
    pub grad_v: RealMatrix,
    pub grad_a: RealMatrix,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn l1(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

/// Mean squared error between per-segment cosine similarity and the
/// event-presence labels `g`.
pub fn avs_loss_with_grad(sd_v: &RealMatrix, sd_a: &RealMatrix, g: &[f64]) -> Result<AvsLoss> {
    if sd_v.shape() != sd_a.shape() || sd_v.rows() != g.len() {
        return Err(Error::ShapeMismatch(format!("avs got {:?}, {:?} and {} labels", sd_v.shape(), sd_a.shape(), g.len())));
    }
    let (t, d) = sd_v.shape();
    let mut cosine = vec![None; t];
    let mut skipped = Vec::new();
    for s in 0..t {
        let (v, a) = (sd_v.row(s), sd_a.row(s));
        if l1(v) == 0.0 || l1(a) == 0.0 {
            skipped.push(s);
            continue;
        }
        // Cosine is invariant to the positive l1 rescaling.
        let (nv, na) = (norm(v), norm(a));
        let dot: f64 = v.iter().zip(a).map(|(x, y)| x * y).sum();
        cosine[s] = Some(dot / (nv * na));
    }
    let used = t - skipped.len();
    let mut grad_v = RealMatrix::zeros(t, d);
    let mut grad_a = RealMatrix::zeros(t, d);
    if used == 0 {
        return Ok(AvsLoss { loss: 0.0, cosine, skipped, grad_v, grad_a });
    }
    let mut loss = 0.0;
    for s in 0..t {
        let Some(c) = cosine[s] else { continue };
        let err = c - g[s];
        loss += err * err;
        let coeff = 2.0 * err / used as f64;
        let (v, a) = (sd_v.row(s), sd_a.row(s));
        let (nv, na) = (norm(v), norm(a));
        for i in 0..d {
            grad_v[(s, i)] = coeff * (a[i] / (nv * na) - c * v[i] / (nv * nv));
            grad_a[(s, i)] = coeff * (v[i] / (nv * na) - c * a[i] / (na * na));
        }
    }
    Ok(AvsLoss { loss: loss / used as f64, cosine, skipped, grad_v, grad_a })
}

pub fn avs_loss(sd_v: &RealMatrix, sd_a: &RealMatrix, g: &[f64]) -> Result<f64> {
    Ok(avs_loss_with_grad(sd_v, sd_a, g)?.loss)
}

pub fn total_loss(cls: f64, avs: f64, beta: f64) -> f64 {
    cls + beta * avs
}

// ---------------------------------------------------------------------------
// Optimiser
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OptimizerKind {
    Sgd,
    Momentum { mu: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    pub fn name(&self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Momentum { .. } => "momentum",
            OptimizerKind::Adam { .. } => "adam",
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "momentum" => Ok(OptimizerKind::Momentum { mu: 0.9 }),
            "adam" => Ok(OptimizerKind::adam()),
            other => Err(Error::Config(format!("unknown optimizer '{other}'"))),
        }
    }
}

/// Step-size schedule plus any optimiser moments.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub step_size: f64,
    pub epoch: usize,
    pub decay_every: usize,
    pub decay_factor: f64,
    pub kind: OptimizerKind,
    steps: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Default for OptimizerState {
    fn default() -> Self {
        Self::new(3e-4, 10, 0.1, OptimizerKind::Sgd).expect("valid defaults")
    }
}

impl OptimizerState {
    pub fn new(step_size: f64, decay_every: usize, decay_factor: f64, kind: OptimizerKind) -> Result<Self> {
        if !(step_size > 0.0) || !step_size.is_finite() {
            return Err(Error::Config(format!("step size must be positive, got {step_size}")));
        }
        if decay_every == 0 || !(decay_factor > 0.0) {
            return Err(Error::Config("decay schedule must be positive".into()));
        }
        Ok(Self { step_size, epoch: 0, decay_every, decay_factor, kind, steps: 0, m: Vec::new(), v: Vec::new() })
    }

    /// Marks the end of an epoch and applies the decay at each boundary.
    pub fn end_epoch(&mut self) {
        self.epoch += 1;
        if self.epoch % self.decay_every == 0 {
            self.step_size *= self.decay_factor;
        }
    }
}

/// One update of `params` in place.
pub fn step<P: Parameters>(params: &mut P, grads: &mut P, opt: &mut OptimizerState) {
    let g = grads.flatten();
    if opt.m.len() != g.len() {
        opt.m = vec![0.0; g.len()];
        opt.v = vec![0.0; g.len()];
    }
    opt.steps += 1;
    let lr = opt.step_size;
    let delta: Vec<f64> = match opt.kind {
        OptimizerKind::Sgd => g.iter().map(|x| lr * x).collect(),
        OptimizerKind::Momentum { mu } => {
            for (m, x) in opt.m.iter_mut().zip(&g) {
                *m = mu * *m + x;
            }
            opt.m.iter().map(|m| lr * m).collect()
        }
        OptimizerKind::Adam { beta1, beta2, eps } => {
            let c1 = 1.0 - beta1.powi(opt.steps as i32);
            let c2 = 1.0 - beta2.powi(opt.steps as i32);
            g.iter()
                .enumerate()
                .map(|(i, &x)| {
                    opt.m[i] = beta1 * opt.m[i] + (1.0 - beta1) * x;
                    opt.v[i] = beta2 * opt.v[i] + (1.0 - beta2) * x * x;
                    lr * (opt.m[i] / c1) / ((opt.v[i] / c2).sqrt() + eps)
                })
                .collect()
        }
    };
    let mut i = 0;
    params.visit("", &mut |_, _, v| {
        for x in v.iter_mut() {
            *x -= delta[i];
            i += 1;
        }
    });
}

// ---------------------------------------------------------------------------
// Gradient check
// ---------------------------------------------------------------------------

/// Finite-difference estimator.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FdScheme {
    /// `(L(θ+h) − L(θ−h)) / 2h`, error O(h²).
    Central,
    /// `(4 D(h) − D(2h)) / 3` over central differences, error O(h⁴).
    Richardson,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub checked: usize,
    /// `(analytic, finite difference)` at the worst entry.
    pub worst: (f64, f64),
    /// Probes that crossed a ReLU or pruning threshold.
    pub skipped: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorCheck>,
    pub threshold: f64,
    pub step: f64,
    pub scheme: FdScheme,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.tensors.iter().all(|t| t.max_rel_error <= self.threshold)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.tensors.iter().map(|t| t.max_rel_error).fold(0.0, f64::max)
    }

    /// Tensors aggregated by their leading name component.
    pub fn groups(&self) -> BTreeMap<String, (f64, usize, usize)> {
        let mut out: BTreeMap<String, (f64, usize, usize)> = BTreeMap::new();
        for t in &self.tensors {
            let key = t.name.split('.').next().unwrap_or("").to_string();
            let e = out.entry(key).or_insert((0.0, 0, 0));
            e.0 = e.0.max(t.max_rel_error);
            e.1 += t.checked;
            e.2 += t.skipped;
        }
        out
    }
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(GRAD_CHECK_FLOOR)
}

fn nudge<P: Parameters>(params: &mut P, index: usize, delta: f64) {
    let mut offset = 0;
    params.visit("", &mut |_, _, v| {
        if index >= offset && index < offset + v.len() {
            v[index - offset] += delta;
        }
        offset += v.len();
    });
}

/// Compares `analytic` against central differences of `loss`. `loss` also
/// returns the kink pattern of its pass; probes whose two sides disagree
/// with the base pattern are not differentiable there and are skipped.
pub fn grad_check<P, F>(
    params: &P,
    analytic: &P,
    step: f64,
    scheme: FdScheme,
    threshold: f64,
    mut loss: F,
) -> Result<GradCheckReport>
where
    P: Parameters + Clone,
    F: FnMut(&P) -> Result<(f64, Vec<bool>)>,
{
    let mut work = params.clone();
    let mut layout = Vec::new();
    work.visit("", &mut |name, _, v| layout.push((name.to_string(), v.len())));
    let g = analytic.clone().flatten();
    let (_, base) = loss(&work)?;
    let mut tensors = Vec::with_capacity(layout.len());
    let mut index = 0;
    for (name, len) in layout {
        let mut check = TensorCheck { name, max_rel_error: 0.0, checked: 0, worst: (0.0, 0.0), skipped: 0 };
        for _ in 0..len {
            let mut central = |h: f64, work: &mut P| -> Result<Option<f64>> {
                nudge(work, index, h);
                let (lp, pp) = loss(work)?;
                nudge(work, index, -2.0 * h);
                let (lm, pm) = loss(work)?;
                nudge(work, index, h);
                Ok((pp == base && pm == base).then(|| (lp - lm) / (2.0 * h)))
            };
            let fd = match central(step, &mut work)? {
                Some(d1) if scheme == FdScheme::Richardson => {
                    central(2.0 * step, &mut work)?.map(|d2| (4.0 * d1 - d2) / 3.0)
                }
                other => other,
            };
            if let Some(fd) = fd {
                let err = relative_error(g[index], fd);
                if err > check.max_rel_error {
                    check.max_rel_error = err;
                    check.worst = (g[index], fd);
                }
                check.checked += 1;
            } else {
                check.skipped += 1;
            }
            index += 1;
        }
        tensors.push(check);
    }
    Ok(GradCheckReport { tensors, threshold, step, scheme })
}

/// Gradient check of the full model on one sample with fixed link draws.
///
/// Plain central differences at h = 1e-4 carry an O(h²) truncation error
/// that exceeds 1e-4 relative wherever a gradient entry is small against the
/// local third derivative, so the default scheme extrapolates.
pub fn model_grad_check(
    params: &ModelParams,
    dims: &ModelDims,
    sample: &Sample,
    links: &FrameLinks,
    mode: Mode,
    beta: f64,
    scheme: FdScheme,
) -> Result<GradCheckReport> {
    let mut grad = params.zeros_like();
    loss_and_grad(params, dims, sample, links, mode, beta, Some((&mut grad, 1.0)))?;
    grad_check(params, &grad, GRAD_CHECK_STEP, scheme, GRAD_CHECK_THRESHOLD, |p| {
        let (report, fwd) = loss_and_grad(p, dims, sample, links, mode, beta, None)?;
        Ok((report.total, fwd.kink_pattern(dims.tau1)))
    })
}

// ---------------------------------------------------------------------------
// Training and evaluation
// ---------------------------------------------------------------------------

/// How frames reach the receiver.
#[derive(Clone, Debug, PartialEq)]
pub enum ChannelSetting {
    /// Encoder output feeds the decoders directly.
    Direct,
    Link(LinkSetting),
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinkSetting {
    pub model: ChannelModel,
    pub csi: Csi,
    pub power: f64,
    pub antennas: usize,
    pub pilot_len_per_user: usize,
    pub pilot: PilotConfig,
}

impl LinkSetting {
    pub fn new(model: ChannelModel, csi: Csi) -> Self {
        Self {
            model,
            csi,
            power: 1.0,
            antennas: 2,
            pilot_len_per_user: DEFAULT_PILOT_LEN_PER_USER,
            pilot: PilotConfig::default(),
        }
    }

    fn spec(&self, snr_db: f64) -> LinkSpec {
        LinkSpec {
            model: self.model,
            csi: self.csi,
            snr_db,
            power: self.power,
            pilot_len_per_user: self.pilot_len_per_user,
            pilot: self.pilot.clone(),
        }
    }
}

/// Draws the SISO side link (multimodal only) and the MIMO uplink for one frame.
pub fn draw_frame_links(
    setting: &ChannelSetting,
    snr_db: f64,
    mode: Mode,
    stream_len: usize,
    rng: &mut SeededRng,
) -> Result<FrameLinks> {
    match setting {
        ChannelSetting::Direct => Ok(FrameLinks::default()),
        ChannelSetting::Link(link) => {
            let spec = link.spec(snr_db);
            let siso = if mode == Mode::Multimodal { Some(draw_link(&spec, 1, 1, stream_len, rng)?) } else { None };
            let users = mode.users();
            let mimo = Some(draw_link(&spec, link.antennas.max(users), users, stream_len, rng)?);
            Ok(FrameLinks { siso, mimo })
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub beta: f64,
    pub optimizer: OptimizerState,
    pub mode: Mode,
    pub channel: ChannelSetting,
    /// Training SNRs in dB; each batch draws one uniformly.
    pub snr_grid: Vec<f64>,
    /// Stop once the epoch's training accuracy reaches this.
    pub stop_at_accuracy: Option<f64>,
    /// Rescale each batch gradient to at most this Euclidean norm.
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 16,
            beta: 100.0,
            optimizer: OptimizerState::default(),
            mode: Mode::Multimodal,
            channel: ChannelSetting::Direct,
            snr_grid: default_snr_grid(),
            stop_at_accuracy: None,
            clip_norm: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub cls: f64,
    pub avs: f64,
    pub accuracy: f64,
    pub step_size: f64,
}

/// Scales `grad` down to Euclidean norm `max` if it is larger; returns the
/// norm before clipping.
pub fn clip_grad_norm<P: Parameters>(grad: &mut P, max: f64) -> f64 {
    let mut sq = 0.0;
    grad.visit("", &mut |_, _, v| sq += v.iter().map(|x| x * x).sum::<f64>());
    let norm = sq.sqrt();
    if norm > max && norm.is_finite() {
        let s = max / norm;
        grad.visit("", &mut |_, _, v| v.iter_mut().for_each(|x| *x *= s));
    }
    norm
}

pub fn stream_len(dims: &ModelDims, segments: usize) -> usize {
    segments * dims.code_dim / 2
}

/// Mini-batch training in place. Returns per-epoch statistics.
pub fn train(
    params: &mut ModelParams,
    dims: &ModelDims,
    data: &[Sample],
    cfg: &TrainConfig,
    rng: &mut SeededRng,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<Vec<EpochStats>> {
    if data.is_empty() {
        return Err(Error::Config("empty training set".into()));
    }
    if cfg.snr_grid.is_empty() {
        return Err(Error::Config("empty SNR grid".into()));
    }
    let mut opt = cfg.optimizer.clone();
    let batch = cfg.batch_size.max(1);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut grad = params.zeros_like();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        rng.shuffle(&mut order);
        let (mut loss, mut cls, mut avs) = (0.0, 0.0, 0.0);
        let (mut correct, mut total) = (0usize, 0usize);
        for chunk in order.chunks(batch) {
            let snr = cfg.snr_grid[rng.range(0, cfg.snr_grid.len())];
            grad.fill_zero();
            let weight = 1.0 / chunk.len() as f64;
            for &i in chunk {
                let s = &data[i];
                let links = draw_frame_links(&cfg.channel, snr, cfg.mode, stream_len(dims, s.segments()), rng)?;
                let (report, fwd) = loss_and_grad(params, dims, s, &links, cfg.mode, cfg.beta, Some((&mut grad, weight)))?;
                if !report.total.is_finite() {
                    return Err(Error::Config(format!("non-finite loss at epoch {epoch}")));
                }
                loss += report.total;
                cls += report.cls;
                avs += report.avs;
                correct += fwd.predictions().iter().zip(&s.labels).filter(|(p, l)| p == l).count();
                total += s.segments();
            }
            if let Some(max) = cfg.clip_norm {
                clip_grad_norm(&mut grad, max);
            }
            step(params, &mut grad, &mut opt);
        }
        let n = data.len() as f64;
        let stats = EpochStats {
            epoch,
            loss: loss / n,
            cls: cls / n,
            avs: avs / n,
            accuracy: correct as f64 / total as f64,
            step_size: opt.step_size,
        };
        opt.end_epoch();
        on_epoch(&stats);
        history.push(stats);
        if cfg.stop_at_accuracy.is_some_and(|a| stats.accuracy >= a) {
            break;
        }
    }
    Ok(history)
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EvalStats {
    pub correct: usize,
    pub total: usize,
    pub erasures: usize,
}

impl EvalStats {
    pub fn accuracy(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }
}

/// Segment accuracy of `params` at one SNR.
pub fn evaluate(
    params: &ModelParams,
    dims: &ModelDims,
    data: &[Sample],
    mode: Mode,
    channel: &ChannelSetting,
    snr_db: f64,
    rng: &mut SeededRng,
) -> Result<EvalStats> {
    let mut stats = EvalStats::default();
    for s in data {
        let links = draw_frame_links(channel, snr_db, mode, stream_len(dims, s.segments()), rng)?;
        stats.erasures += links.erasures();
        let pred = crate::model::predict(params, dims, s, &links, mode)?;
        stats.correct += pred.iter().zip(&s.labels).filter(|(p, l)| p == l).count();
        stats.total += s.segments();
    }
    Ok(stats)
}

/// Writes every parameter as a named PGSC tensor plus the manifest.
pub fn save_checkpoint(path: &Path, params: &ModelParams) -> Result<()> {
    let mut tensors = Vec::new();
    let mut p = params.clone();
    let mut failed = None;
    p.visit("", &mut |name, shape, v| match Tensor::from_f64(shape.to_vec(), v) {
        Ok(t) => tensors.push((name.to_string(), t)),
        Err(e) => failed = Some(e),
    });
    if let Some(e) = failed {
        return Err(e);
    }
    save_named(path, &tensors)
}

/// Loads a checkpoint into a model of the given dimensions. Values pass
/// through f32, so they round to single precision.
pub fn load_checkpoint(path: &Path, dims: &ModelDims) -> Result<ModelParams> {
    let named = load_named(path)?;
    let mut params = ModelParams::init(dims, &mut SeededRng::new(0));
    let mut seen = 0;
    let mut failed = None;
    params.visit("", &mut |name, shape, v| {
        match named.iter().find(|(n, _)| n == name) {
            Some((_, t)) if t.dims == shape => {
                v.copy_from_slice(&t.to_f64());
                seen += 1;
            }
            Some((_, t)) => {
                failed.get_or_insert_with(|| Error::Format(format!("{name}: checkpoint shape {:?}, model {shape:?}", t.dims)));
            }
            None => {
                failed.get_or_insert_with(|| Error::Format(format!("checkpoint is missing {name}")));
            }
        }
    });
    if let Some(e) = failed {
        return Err(e);
    }
    if seen != named.len() {
        return Err(Error::Format(format!("checkpoint has {} tensors, model {}", named.len(), seen)));
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::sample_normal;

    fn labels(classes: &[usize], c: usize) -> EventLabels {
        EventLabels::from_classes(classes, c).unwrap()
    }

    #[test]
    fn ce_perfect_prediction_is_zero() {
        let y = labels(&[0, 2, 1], 3);
        assert!(ce_loss(&y.y, &y).unwrap() <= 1e-10);
    }

    #[test]
    fn ce_uniform_closed_form() {
        let c = 28;
        let x = RealMatrix::from_fn(4, c, |_, _| 1.0 / c as f64);
        let y = labels(&[3, 0, 27, 11], c);
        let l = ce_loss(&x, &y).unwrap();
        assert!((l - (28f64).ln() / 28.0).abs() < 1e-12);
        assert!((l - 0.11901).abs() < 1e-5);
    }

    #[test]
    fn ce_matches_double_loop() {
        let mut rng = SeededRng::new(2);
        let raw = sample_normal(&mut rng, 5, 4, 1.0);
        let x = crate::numeric::elementwise(&raw, crate::numeric::Activation::SoftmaxRow);
        let y = labels(&[0, 1, 3, 3, 2], 4);
        let mut oracle = 0.0;
        for t in 0..5 {
            for c in 0..4 {
                oracle -= y.y[(t, c)] * x[(t, c)].max(1e-12).ln();
            }
        }
        oracle /= 20.0;
        assert!((ce_loss(&x, &y).unwrap() - oracle).abs() <= 1e-12);
    }

    #[test]
    fn ce_shape_mismatch() {
        let y = labels(&[0, 1], 3);
        assert!(matches!(ce_loss(&RealMatrix::zeros(2, 4), &y), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn ce_grad_matches_finite_differences() {
        let x = RealMatrix::from_rows(&[vec![0.2, 0.5, 0.3], vec![0.6, 0.1, 0.3]]);
        let y = labels(&[1, 0], 3);
        let g = ce_loss_grad(&x, &y);
        let h = 1e-7;
        for i in 0..6 {
            let mut p = x.clone();
            p.data_mut()[i] += h;
            let mut m = x.clone();
            m.data_mut()[i] -= h;
            let fd = (ce_loss(&p, &y).unwrap() - ce_loss(&m, &y).unwrap()) / (2.0 * h);
            assert!((fd - g.data()[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn avs_identical_positive_features() {
        let mut rng = SeededRng::new(3);
        let v = sample_normal(&mut rng, 6, 5, 1.0).map(|x| x.abs() + 0.1);
        assert!(avs_loss(&v, &v, &[1.0; 6]).unwrap().abs() <= 1e-12);
    }

    #[test]
    fn avs_orthogonal_features() {
        let v = RealMatrix::from_fn(10, 2, |_, c| if c == 0 { 1.0 } else { 0.0 });
        let a = RealMatrix::from_fn(10, 2, |_, c| if c == 1 { 2.0 } else { 0.0 });
        assert!((avs_loss(&v, &a, &[1.0; 10]).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn avs_matches_formula_oracle() {
        let mut rng = SeededRng::new(4);
        let v = sample_normal(&mut rng, 7, 3, 1.0);
        let a = sample_normal(&mut rng, 7, 3, 1.0);
        let g = [1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0];
        let mut oracle = 0.0;
        for t in 0..7 {
            let nv: Vec<f64> = { let s: f64 = v.row(t).iter().map(|x| x.abs()).sum(); v.row(t).iter().map(|x| x / s).collect() };
            let na: Vec<f64> = { let s: f64 = a.row(t).iter().map(|x| x.abs()).sum(); a.row(t).iter().map(|x| x / s).collect() };
            let dot: f64 = nv.iter().zip(&na).map(|(x, y)| x * y).sum();
            let cos = dot / (norm(&nv) * norm(&na));
            oracle += (cos - g[t]).powi(2);
        }
        oracle /= 7.0;
        assert!((avs_loss(&v, &a, &g).unwrap() - oracle).abs() <= 1e-12);
    }

    #[test]
    fn avs_skips_zero_segments() {
        let v = RealMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]);
        let a = RealMatrix::from_rows(&[vec![1.0, 0.0], vec![3.0, 1.0]]);
        let r = avs_loss_with_grad(&v, &a, &[1.0, 1.0]).unwrap();
        assert_eq!(r.skipped, vec![1]);
        assert!(r.loss.abs() < 1e-15);
        assert_eq!(r.grad_v.row(1), &[0.0, 0.0]);
    }

    #[test]
    fn avs_grad_matches_finite_differences() {
        let mut rng = SeededRng::new(5);
        let v = sample_normal(&mut rng, 4, 3, 1.0);
        let a = sample_normal(&mut rng, 4, 3, 1.0);
        let g = [1.0, 0.0, 0.0, 1.0];
        let r = avs_loss_with_grad(&v, &a, &g).unwrap();
        let h = 1e-6;
        for i in 0..12 {
            let mut p = v.clone();
            p.data_mut()[i] += h;
            let mut m = v.clone();
            m.data_mut()[i] -= h;
            let fd = (avs_loss(&p, &a, &g).unwrap() - avs_loss(&m, &a, &g).unwrap()) / (2.0 * h);
            assert!((fd - r.grad_v.data()[i]).abs() < 1e-7);
            let mut p = a.clone();
            p.data_mut()[i] += h;
            let mut m = a.clone();
            m.data_mut()[i] -= h;
            let fd = (avs_loss(&v, &p, &g).unwrap() - avs_loss(&v, &m, &g).unwrap()) / (2.0 * h);
            assert!((fd - r.grad_a.data()[i]).abs() < 1e-7);
        }
    }

    #[test]
    fn total_loss_examples() {
        assert_eq!(total_loss(0.7, 5.0, 0.0), 0.7);
        assert!((total_loss(0.1, 0.002, 100.0) - 0.3).abs() < 1e-12);
        // affine in beta
        let f = |b: f64| total_loss(0.4, 0.03, b);
        let (a, b, c) = (f(1.0), f(4.0), f(7.0));
        assert!(((b - a) - (c - b)).abs() < 1e-12);
    }

    #[derive(Clone)]
    struct Scalar(Vec<f64>);

    impl Parameters for Scalar {
        fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
            let n = self.0.len();
            f(prefix, &[n], &mut self.0);
        }
    }

    #[test]
    fn step_with_zero_grads_is_identity() {
        let mut p = Scalar(vec![1.0, -2.0]);
        let mut g = Scalar(vec![0.0, 0.0]);
        let mut opt = OptimizerState::default();
        step(&mut p, &mut g, &mut opt);
        assert_eq!(p.0, vec![1.0, -2.0]);
    }

    #[test]
    fn decay_at_epoch_ten() {
        let mut opt = OptimizerState::default();
        assert_eq!(opt.step_size, 3e-4);
        for _ in 0..9 {
            opt.end_epoch();
        }
        assert_eq!(opt.step_size, 3e-4);
        opt.end_epoch();
        assert!((opt.step_size - 3e-5).abs() < 1e-18);
    }

    #[test]
    fn rejects_nonpositive_step() {
        assert!(OptimizerState::new(0.0, 10, 0.1, OptimizerKind::Sgd).is_err());
    }

    #[test]
    fn descends_scalar_quadratic() {
        // L = (x - 3)^2
        for kind in [OptimizerKind::Sgd, OptimizerKind::Momentum { mu: 0.5 }, OptimizerKind::adam()] {
            let mut p = Scalar(vec![-1.0]);
            let mut opt = OptimizerState::new(0.1, 1000, 0.1, kind).unwrap();
            let start = (p.0[0] - 3.0f64).abs();
            for _ in 0..100 {
                let mut g = Scalar(vec![2.0 * (p.0[0] - 3.0)]);
                step(&mut p, &mut g, &mut opt);
            }
            assert!((p.0[0] - 3.0).abs() < 0.1 * start, "{kind}: {}", p.0[0]);
        }
    }

    #[test]
    fn clip_rescales_only_large_gradients() {
        let mut g = Scalar(vec![3.0, 4.0]);
        assert_eq!(clip_grad_norm(&mut g, 10.0), 5.0);
        assert_eq!(g.0, vec![3.0, 4.0]);
        clip_grad_norm(&mut g, 1.0);
        assert!((g.0[0] - 0.6).abs() < 1e-15 && (g.0[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn checkpoint_round_trip() {
        let dims = ModelDims::gradcheck();
        let params = ModelParams::init(&dims, &mut SeededRng::new(3));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.pgsc");
        save_checkpoint(&path, &params).unwrap();
        let back = load_checkpoint(&path, &dims).unwrap();
        let (a, b) = (params.clone().flatten(), back.clone().flatten());
        assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() <= 1e-6 * x.abs().max(1.0)));
        let manifest = std::fs::read_to_string(crate::tensor_io::manifest_path(&path)).unwrap();
        assert!(manifest.starts_with("audio_cell.gate0.wx\t8x8\t0\n"), "{manifest}");
        let wider = ModelDims { hidden: 9, ..dims };
        assert!(matches!(load_checkpoint(&path, &wider), Err(Error::Format(_))));
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1e-9, 0.0) - 0.1).abs() < 1e-12);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn grad_check_flags_wrong_gradient() {
        let p = Scalar(vec![1.0, 2.0]);
        let loss = |q: &Scalar| Ok((q.0[0] * q.0[0] + 3.0 * q.0[1], vec![]));
        let good = Scalar(vec![2.0, 3.0]);
        for scheme in [FdScheme::Central, FdScheme::Richardson] {
            assert!(grad_check(&p, &good, 1e-4, scheme, 1e-4, loss).unwrap().passed());
            let bad = Scalar(vec![2.0, 3.1]);
            assert!(!grad_check(&p, &bad, 1e-4, scheme, 1e-4, loss).unwrap().passed());
        }
    }

    #[test]
    fn richardson_removes_cubic_truncation() {
        // L = x^3 at x = 1: central difference has error h^2, extrapolation none.
        let p = Scalar(vec![1.0]);
        let g = Scalar(vec![3.0]);
        let loss = |q: &Scalar| Ok((q.0[0].powi(3), vec![]));
        let central = grad_check(&p, &g, 1e-2, FdScheme::Central, 1e-6, loss).unwrap();
        let rich = grad_check(&p, &g, 1e-2, FdScheme::Richardson, 1e-6, loss).unwrap();
        assert!((central.tensors[0].worst.1 - 3.0001).abs() < 1e-12);
        assert!(rich.max_rel_error() < 1e-12);
    }
}
