//! The full transmit-channel-receive pipeline as one differentiable model.
//!
//! Audio user: recurrent encoder, channel encoder, Euler map. Its symbols go
//! to the video user over a SISO link (guiding attention there) and to the
//! base station over the MIMO link. Video user: attention pooling over spatial
//! locations, channel encoder, Euler map, MIMO link. Base station: complex
//! decomposition, channel decoders, PSP fusion and the event classifier.

use std::fmt;
use std::str::FromStr;

use crate::codec::{
    complex_grad_to_real, from_stream, real_grad_to_complex, rows_to_complex, rows_to_real, AgvaCache, AgvaParams,
    CellCache, CellKind, ChannelDecoder, ChannelEncoder, DecoderCache, EncoderCache, FeatureSequence, RecurrentCell,
    VisualSequence,
};
use crate::error::{Error, Result};
use crate::layers::{join, Parameters};
use crate::link::{link_backward, link_forward, LinkCache, LinkDraw};
use crate::numeric::{ComplexMatrix, RealMatrix, SeededRng};
use crate::psp::{fuse, fuse_backward, pruning_pattern, HeadCache, PspCache, PspParams, DEFAULT_TAU1};
use crate::trainer::{avs_loss_with_grad, ce_loss, ce_loss_grad, total_loss, LossReport};

/// Which modalities reach the receiver.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Mode {
    AudioOnly,
    VideoOnly,
    Multimodal,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::AudioOnly => "audio-only",
            Mode::VideoOnly => "video-only",
            Mode::Multimodal => "multimodal",
        }
    }

    /// Transmitters sharing the MIMO uplink.
    pub fn users(self) -> usize {
        match self {
            Mode::Multimodal => 2,
            _ => 1,
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "audio-only" | "audio" => Ok(Mode::AudioOnly),
            "video-only" | "video" => Ok(Mode::VideoOnly),
            "multimodal" | "av" => Ok(Mode::Multimodal),
            other => Err(Error::Config(format!("unknown mode '{other}'"))),
        }
    }
}

/// Layer widths. Defaults are desk-scale.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelDims {
    pub audio_dim: usize,
    pub visual_dim: usize,
    pub locations: usize,
    /// Shared attention width.
    pub attn_dim: usize,
    pub hidden: usize,
    /// Real width of each segment's channel code; even.
    pub code_dim: usize,
    pub enc_hidden: usize,
    pub dec_hidden: usize,
    /// Common width `d_l` of the decoded features.
    pub common_dim: usize,
    /// Similarity projection width `d_s`.
    pub sim_dim: usize,
    pub head_hidden: usize,
    pub classes: usize,
    pub cell: CellKind,
    pub tau1: f64,
}

impl Default for ModelDims {
    fn default() -> Self {
        Self {
            audio_dim: 16,
            visual_dim: 24,
            locations: 4,
            attn_dim: 16,
            hidden: 32,
            code_dim: 16,
            enc_hidden: 32,
            dec_hidden: 32,
            common_dim: 32,
            sim_dim: 16,
            head_hidden: 32,
            classes: 5,
            cell: CellKind::SingleGate,
            tau1: DEFAULT_TAU1,
        }
    }
}

impl ModelDims {
    /// Narrow widths for finite-difference checks.
    pub fn gradcheck() -> Self {
        Self {
            audio_dim: 8,
            visual_dim: 8,
            locations: 3,
            attn_dim: 6,
            hidden: 8,
            code_dim: 8,
            enc_hidden: 8,
            dec_hidden: 8,
            common_dim: 8,
            sim_dim: 4,
            head_hidden: 8,
            classes: 5,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.code_dim == 0 || self.code_dim % 2 != 0 {
            return Err(Error::OddWidth(self.code_dim));
        }
        if self.classes < 2 {
            return Err(Error::Config("need at least one event class plus background".into()));
        }
        if !(0.0..1.0).contains(&self.tau1) {
            return Err(Error::Config(format!("tau1 must lie in [0, 1), got {}", self.tau1)));
        }
        let widths = [
            self.audio_dim,
            self.visual_dim,
            self.locations,
            self.attn_dim,
            self.hidden,
            self.enc_hidden,
            self.dec_hidden,
            self.common_dim,
            self.sim_dim,
            self.head_hidden,
        ];
        if widths.contains(&0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        Ok(())
    }

    pub fn background(&self) -> usize {
        self.classes - 1
    }
}

/// Every trainable weight in the system.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub audio_cell: RecurrentCell,
    pub audio_enc: ChannelEncoder,
    pub agva: AgvaParams,
    pub visual_enc: ChannelEncoder,
    pub audio_dec: ChannelDecoder,
    pub visual_dec: ChannelDecoder,
    pub psp: PspParams,
}

impl ModelParams {
    pub fn init(dims: &ModelDims, rng: &mut SeededRng) -> Self {
        Self {
            audio_cell: RecurrentCell::init(dims.cell, dims.audio_dim, dims.hidden, rng),
            audio_enc: ChannelEncoder::init(dims.hidden, dims.enc_hidden, dims.code_dim, rng),
            agva: AgvaParams::init(dims.visual_dim, dims.code_dim, dims.attn_dim, rng),
            visual_enc: ChannelEncoder::init(dims.visual_dim, dims.enc_hidden, dims.code_dim, rng),
            audio_dec: ChannelDecoder::init(dims.code_dim, dims.dec_hidden, dims.common_dim, rng),
            visual_dec: ChannelDecoder::init(dims.code_dim, dims.dec_hidden, dims.common_dim, rng),
            psp: PspParams::init(dims.common_dim, dims.sim_dim, dims.head_hidden, dims.classes, dims.tau1, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut g = self.clone();
        g.fill_zero();
        g
    }

    /// Adds `scale * other` elementwise.
    pub fn axpy(&mut self, scale: f64, other: &ModelParams) {
        let flat = other.clone().flatten();
        let mut i = 0;
        self.visit("", &mut |_, _, v| {
            for x in v.iter_mut() {
                *x += scale * flat[i];
                i += 1;
            }
        });
    }
}

impl Parameters for ModelParams {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        self.audio_cell.visit(&join(prefix, "audio_cell"), f);
        self.audio_enc.visit(&join(prefix, "audio_enc"), f);
        self.agva.visit(&join(prefix, "agva"), f);
        self.visual_enc.visit(&join(prefix, "visual_enc"), f);
        self.audio_dec.visit(&join(prefix, "audio_dec"), f);
        self.visual_dec.visit(&join(prefix, "visual_dec"), f);
        self.psp.visit(&join(prefix, "psp"), f);
    }
}

/// One clip: per-segment audio and visual features with segment labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub audio: FeatureSequence,
    pub visual: VisualSequence,
    /// Class index per segment; the last class is background.
    pub labels: Vec<usize>,
}

impl Sample {
    pub fn segments(&self) -> usize {
        self.labels.len()
    }
}

/// Link realisations for one frame. `None` bypasses the channel entirely.
#[derive(Clone, Debug, Default)]
pub struct FrameLinks {
    /// Audio user to video user.
    pub siso: Option<LinkDraw>,
    /// Both users to the base station.
    pub mimo: Option<LinkDraw>,
}

impl FrameLinks {
    pub fn erasures(&self) -> usize {
        [&self.siso, &self.mimo].iter().filter(|l| l.as_ref().is_some_and(|d| d.erased)).count()
    }
}

#[derive(Clone, Debug)]
struct AudioTx {
    cell: CellCache,
    hidden: RealMatrix,
    enc: EncoderCache,
    symbols: ComplexMatrix,
}

#[derive(Clone, Debug)]
struct VisualTx {
    a_star: RealMatrix,
    siso: Option<LinkCache>,
    agva: Vec<AgvaCache>,
    attended: RealMatrix,
    enc: EncoderCache,
    symbols: ComplexMatrix,
}

#[derive(Clone, Debug)]
struct Receiver {
    mimo: Option<LinkCache>,
    audio: Option<(DecoderCache, RealMatrix)>,
    visual: Option<(DecoderCache, RealMatrix)>,
    psp: Option<(PspCache, RealMatrix, RealMatrix)>,
    head: HeadCache,
}

/// Forward pass results plus everything needed for backward.
#[derive(Clone, Debug)]
pub struct Forward {
    pub probs: RealMatrix,
    audio: Option<AudioTx>,
    visual: Option<VisualTx>,
    rx: Receiver,
}

impl Forward {
    pub fn predictions(&self) -> Vec<usize> {
        (0..self.probs.rows())
            .map(|t| {
                let row = self.probs.row(t);
                let mut best = 0;
                for (c, &p) in row.iter().enumerate() {
                    if p > row[best] {
                        best = c;
                    }
                }
                best
            })
            .collect()
    }

    /// Fused `(SD_v, SD_a)` in multimodal mode.
    pub fn fused_features(&self) -> Option<(&RealMatrix, &RealMatrix)> {
        self.rx.psp.as_ref().map(|(_, v, a)| (v, a))
    }

    pub fn attention(&self) -> Option<Vec<Vec<f64>>> {
        self.visual.as_ref().map(|v| v.agva.iter().map(|c| c.alpha.clone()).collect())
    }

    /// Sign pattern of every piecewise-linear decision in the pass.
    pub fn kink_pattern(&self, tau1: f64) -> Vec<bool> {
        let mut out = Vec::new();
        if let Some((cache, _, _)) = &self.rx.psp {
            out.extend(pruning_pattern(cache, tau1));
        }
        out.extend(self.rx.head.relu_pattern());
        for (cache, _) in [&self.rx.audio, &self.rx.visual].into_iter().flatten() {
            out.extend(cache.relu_pattern());
        }
        if let Some(a) = &self.audio {
            out.extend(a.enc.relu_pattern());
        }
        if let Some(v) = &self.visual {
            out.extend(v.enc.relu_pattern());
            for c in &v.agva {
                out.extend(c.relu_pattern());
            }
        }
        out
    }
}

fn check_sample(dims: &ModelDims, s: &Sample) -> Result<()> {
    let t = s.segments();
    if s.audio.segments() != t || s.visual.len() != t {
        return Err(Error::ShapeMismatch(format!(
            "{} labels, {} audio and {} visual segments",
            t,
            s.audio.segments(),
            s.visual.len()
        )));
    }
    if s.audio.dim() != dims.audio_dim || s.visual.dim() != dims.visual_dim {
        return Err(Error::ShapeMismatch(format!(
            "feature widths {}/{} but model expects {}/{}",
            s.audio.dim(),
            s.visual.dim(),
            dims.audio_dim,
            dims.visual_dim
        )));
    }
    if let Some(&c) = s.labels.iter().find(|&&c| c >= dims.classes) {
        return Err(Error::ShapeMismatch(format!("label {c} out of range")));
    }
    Ok(())
}

pub fn forward(params: &ModelParams, dims: &ModelDims, sample: &Sample, links: &FrameLinks, mode: Mode) -> Result<Forward> {
    check_sample(dims, sample)?;
    let t = sample.segments();
    let use_audio = mode != Mode::VideoOnly;
    let use_visual = mode != Mode::AudioOnly;

    // Audio transmitter is needed whenever audio reaches anyone.
    let audio = if use_audio {
        let (hidden, cell) = params.audio_cell.forward(&sample.audio.data);
        let (code, enc) = params.audio_enc.forward_real(&hidden);
        let symbols = rows_to_complex(&code)?;
        Some(AudioTx { cell, hidden, enc, symbols })
    } else {
        None
    };

    let visual = if use_visual {
        let (a_star, siso) = match (&audio, mode) {
            (Some(a), Mode::Multimodal) => match &links.siso {
                Some(draw) => {
                    let stream = ComplexMatrix::from_vec(1, a.symbols.data().len(), a.symbols.data().to_vec())?;
                    let (rx, cache) = link_forward(&stream, draw);
                    (rows_to_real(&from_stream(rx.row(0), t)), Some(cache))
                }
                None => (rows_to_real(&a.symbols), None),
            },
            _ => (RealMatrix::zeros(t, dims.code_dim), None),
        };
        let mut attended = RealMatrix::zeros(t, dims.visual_dim);
        let mut agva = Vec::with_capacity(t);
        for (seg, v) in sample.visual.segments.iter().enumerate() {
            let (out, cache) = params.agva.forward(v, a_star.row(seg));
            attended.row_mut(seg).copy_from_slice(&out);
            agva.push(cache);
        }
        let (code, enc) = params.visual_enc.forward_real(&attended);
        let symbols = rows_to_complex(&code)?;
        Some(VisualTx { a_star, siso, agva, attended, enc, symbols })
    } else {
        None
    };

    // MIMO uplink: stack the active users' streams.
    let streams: Vec<&ComplexMatrix> = audio.iter().map(|a| &a.symbols).chain(visual.iter().map(|v| &v.symbols)).collect();
    let len = streams[0].data().len();
    let mut x = ComplexMatrix::zeros(streams.len(), len);
    for (u, s) in streams.iter().enumerate() {
        x.row_mut(u).copy_from_slice(s.data());
    }
    let (x_hat, mimo) = match &links.mimo {
        Some(draw) => {
            let (out, cache) = link_forward(&x, draw);
            (out, Some(cache))
        }
        None => (x, None),
    };

    let mut row = 0;
    let mut decode = |dec: &ChannelDecoder| {
        let z = from_stream(x_hat.row(row), t);
        row += 1;
        let (m, cache) = dec.forward(&z);
        (cache, m)
    };
    let audio_rx = audio.as_ref().map(|_| decode(&params.audio_dec));
    let visual_rx = visual.as_ref().map(|_| decode(&params.visual_dec));

    let (psp, fused) = match (&audio_rx, &visual_rx) {
        (Some((_, ma)), Some((_, mv))) => {
            let out = fuse(mv, ma, &params.psp)?;
            let fused = out.sd_v.try_add(&out.sd_a)?.scale(0.5);
            (Some((out.cache, out.sd_v, out.sd_a)), fused)
        }
        (Some((_, ma)), None) => (None, ma.clone()),
        (None, Some((_, mv))) => (None, mv.clone()),
        (None, None) => unreachable!("at least one modality"),
    };
    let (probs, head) = params.psp.head.forward(&fused);
    Ok(Forward { probs, audio, visual, rx: Receiver { mimo, audio: audio_rx, visual: visual_rx, psp, head } })
}

/// Labels of the segments that contain an event (everything but background).
pub fn event_presence(labels: &[usize], background: usize) -> Vec<f64> {
    labels.iter().map(|&c| if c == background { 0.0 } else { 1.0 }).collect()
}

/// Loss of one sample and, optionally, gradients accumulated into `grad`
/// scaled by `weight`.
pub fn loss_and_grad(
    params: &ModelParams,
    dims: &ModelDims,
    sample: &Sample,
    links: &FrameLinks,
    mode: Mode,
    beta: f64,
    grad: Option<(&mut ModelParams, f64)>,
) -> Result<(LossReport, Forward)> {
    let fwd = forward(params, dims, sample, links, mode)?;
    let onehot = crate::psp::EventLabels::from_classes(&sample.labels, dims.classes)?;
    let cls = ce_loss(&fwd.probs, &onehot)?;
    let presence = event_presence(&sample.labels, dims.background());
    let avs = match fwd.fused_features() {
        Some((sd_v, sd_a)) => Some(avs_loss_with_grad(sd_v, sd_a, &presence)?),
        None => None,
    };
    let avs_value = avs.as_ref().map_or(0.0, |a| a.loss);
    let report = LossReport { cls, avs: avs_value, total: total_loss(cls, avs_value, beta), beta };

    if let Some((grad, weight)) = grad {
        let g_probs = ce_loss_grad(&fwd.probs, &onehot).scale(weight);
        let g_fused = params.psp.head.backward(&fwd.rx.head, &g_probs, &mut grad.psp.head);
        let (g_ma, g_mv) = match (&fwd.rx.psp, &fwd.rx.audio, &fwd.rx.visual) {
            (Some((cache, _, _)), Some((_, ma)), Some((_, mv))) => {
                let avs = avs.as_ref().expect("multimodal avs");
                let mut g_sd_v = g_fused.scale(0.5);
                let mut g_sd_a = g_fused.scale(0.5);
                g_sd_v.add_assign(&avs.grad_v.scale(beta * weight));
                g_sd_a.add_assign(&avs.grad_a.scale(beta * weight));
                let (g_mv, g_ma) = fuse_backward(mv, ma, &params.psp, cache, &g_sd_v, &g_sd_a, &mut grad.psp);
                (Some(g_ma), Some(g_mv))
            }
            (None, Some(_), None) => (Some(g_fused), None),
            (None, None, Some(_)) => (None, Some(g_fused)),
            _ => unreachable!("receiver caches match the mode"),
        };

        let len = fwd.probs.rows() * dims.code_dim / 2;
        let users = mode.users();
        let mut g_xhat = ComplexMatrix::zeros(users, len);
        let mut row = 0;
        if let (Some(g), Some((cache, _))) = (&g_ma, &fwd.rx.audio) {
            let gz = params.audio_dec.backward(cache, g, &mut grad.audio_dec);
            g_xhat.row_mut(row).copy_from_slice(gz.data());
            row += 1;
        }
        if let (Some(g), Some((cache, _))) = (&g_mv, &fwd.rx.visual) {
            let gz = params.visual_dec.backward(cache, g, &mut grad.visual_dec);
            g_xhat.row_mut(row).copy_from_slice(gz.data());
        }
        let g_x = match (&links.mimo, &fwd.rx.mimo) {
            (Some(draw), Some(cache)) => link_backward(draw, cache, &g_xhat),
            _ => g_xhat,
        };

        let t = sample.segments();
        let mut row = 0;
        let mut g_audio_symbols = fwd.audio.as_ref().map(|_| {
            row += 1;
            from_stream(g_x.row(0), t)
        });
        if let Some(v) = &fwd.visual {
            let g_code = complex_grad_to_real(&from_stream(g_x.row(row), t));
            let g_att = params.visual_enc.backward_real(&v.attended, &v.enc, &g_code, &mut grad.visual_enc);
            let mut g_a_star = RealMatrix::zeros(t, dims.code_dim);
            for (seg, cache) in v.agva.iter().enumerate() {
                let ga = params.agva.backward(
                    &sample.visual.segments[seg],
                    v.a_star.row(seg),
                    cache,
                    g_att.row(seg),
                    &mut grad.agva,
                );
                g_a_star.row_mut(seg).copy_from_slice(&ga);
            }
            if let (Some(g_sym), Some(a)) = (g_audio_symbols.as_mut(), &fwd.audio) {
                // Audio guide reached the video user through the SISO link (or directly).
                let g_rx = real_grad_to_complex(&g_a_star);
                let g_stream = match (&links.siso, &v.siso) {
                    (Some(draw), Some(cache)) => {
                        let g = ComplexMatrix::from_vec(1, g_rx.data().len(), g_rx.data().to_vec())?;
                        from_stream(link_backward(draw, cache, &g).row(0), t)
                    }
                    _ => g_rx,
                };
                debug_assert_eq!(g_stream.shape(), a.symbols.shape());
                *g_sym = g_sym.try_add(&g_stream)?;
            }
        }
        if let (Some(a), Some(g_sym)) = (&fwd.audio, g_audio_symbols) {
            let g_code = complex_grad_to_real(&g_sym);
            let g_hidden = params.audio_enc.backward_real(&a.hidden, &a.enc, &g_code, &mut grad.audio_enc);
            params.audio_cell.backward(&sample.audio.data, &a.cell, &g_hidden, &mut grad.audio_cell);
        }
    }
    Ok((report, fwd))
}

/// Segment predictions for one sample.
pub fn predict(params: &ModelParams, dims: &ModelDims, sample: &Sample, links: &FrameLinks, mode: Mode) -> Result<Vec<usize>> {
    Ok(forward(params, dims, sample, links, mode)?.predictions())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::ChannelModel;
    use crate::dataset::{synth_dataset, DatasetConfig};
    use crate::link::Csi;
    use crate::trainer::{draw_frame_links, model_grad_check, stream_len, ChannelSetting, FdScheme, LinkSetting};

    fn small_dims() -> ModelDims {
        ModelDims::gradcheck()
    }

    fn sample_for(dims: &ModelDims, segments: usize, seed: u64) -> Sample {
        let cfg = DatasetConfig {
            samples: 1,
            segments,
            classes: dims.classes,
            audio_dim: dims.audio_dim,
            visual_dim: dims.visual_dim,
            locations: dims.locations,
            ..DatasetConfig::default()
        };
        synth_dataset(&cfg, &mut SeededRng::new(seed)).unwrap().samples.remove(0)
    }

    #[test]
    fn gradients_match_finite_differences_through_the_channel() {
        for (mode, cell) in [
            (Mode::Multimodal, CellKind::SingleGate),
            (Mode::Multimodal, CellKind::Lstm),
            (Mode::AudioOnly, CellKind::SingleGate),
            (Mode::VideoOnly, CellKind::SingleGate),
        ] {
            let dims = ModelDims { cell, ..small_dims() };
            let mut rng = SeededRng::new(11);
            let params = ModelParams::init(&dims, &mut rng);
            let sample = sample_for(&dims, 4, 3);
            let setting = ChannelSetting::Link(LinkSetting::new(ChannelModel::rayleigh(), Csi::Pilot));
            let links = draw_frame_links(&setting, 20.0, mode, stream_len(&dims, 4), &mut rng).unwrap();
            let report = model_grad_check(&params, &dims, &sample, &links, mode, 100.0, FdScheme::Richardson).unwrap();
            assert!(report.passed(), "{mode} {cell:?}: {:#?}", report.tensors.iter().filter(|t| t.max_rel_error > 1e-5).collect::<Vec<_>>());
        }
    }

    #[test]
    fn zero_weights_give_zero_multiplicative_gradients() {
        let dims = small_dims();
        let mut params = ModelParams::init(&dims, &mut SeededRng::new(1));
        params.fill_zero();
        let mut sample = sample_for(&dims, 4, 2);
        sample.audio.data = RealMatrix::zeros(4, dims.audio_dim);
        for v in &mut sample.visual.segments {
            *v = RealMatrix::zeros(dims.locations, dims.visual_dim);
        }
        let mut grad = params.zeros_like();
        loss_and_grad(&params, &dims, &sample, &FrameLinks::default(), Mode::Multimodal, 1.0, Some((&mut grad, 1.0))).unwrap();
        let mut names = Vec::new();
        grad.visit("", &mut |n, _, v| {
            if n.ends_with(".w") && n != "psp.head.l2.w" && v.iter().any(|x| *x != 0.0) {
                names.push(n.to_string());
            }
        });
        assert!(names.is_empty(), "{names:?}");
    }

    #[test]
    fn noiseless_perfect_link_matches_direct_pipeline() {
        let dims = ModelDims::default();
        let mut rng = SeededRng::new(4);
        let params = ModelParams::init(&dims, &mut rng);
        let sample = sample_for(&dims, 10, 5);
        let setting = ChannelSetting::Link(LinkSetting::new(ChannelModel::rician(2.0), Csi::Perfect));
        let links = draw_frame_links(&setting, f64::INFINITY, Mode::Multimodal, stream_len(&dims, 10), &mut rng).unwrap();
        let direct = forward(&params, &dims, &sample, &FrameLinks::default(), Mode::Multimodal).unwrap();
        let linked = forward(&params, &dims, &sample, &links, Mode::Multimodal).unwrap();
        assert!(direct.probs.max_abs_diff(&linked.probs) < 1e-9);
    }

    #[test]
    fn beta_scales_the_similarity_branch_linearly() {
        let dims = small_dims();
        let params = ModelParams::init(&dims, &mut SeededRng::new(8));
        let sample = sample_for(&dims, 4, 6);
        let links = FrameLinks::default();
        let grad_at = |beta: f64| {
            let mut g = params.zeros_like();
            loss_and_grad(&params, &dims, &sample, &links, Mode::Multimodal, beta, Some((&mut g, 1.0))).unwrap();
            g.flatten()
        };
        let (g0, g1, g3) = (grad_at(0.0), grad_at(1.0), grad_at(3.0));
        for i in 0..g0.len() {
            let branch1 = g1[i] - g0[i];
            let branch3 = g3[i] - g0[i];
            assert!((branch3 - 3.0 * branch1).abs() <= 1e-9 * (1.0 + branch3.abs()));
        }
    }

    #[test]
    fn rejects_mismatched_sample() {
        let dims = small_dims();
        let params = ModelParams::init(&dims, &mut SeededRng::new(1));
        let mut sample = sample_for(&dims, 4, 1);
        sample.labels.pop();
        assert!(matches!(
            forward(&params, &dims, &sample, &FrameLinks::default(), Mode::Multimodal),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn parameter_names_are_unique() {
        let mut params = ModelParams::init(&ModelDims::default(), &mut SeededRng::new(0));
        let mut names = Vec::new();
        params.visit("", &mut |n, _, _| names.push(n.to_string()));
        let mut sorted = names.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), names.len());
        assert!(names.iter().any(|n| n.starts_with("psp.sim_proj_v")));
    }
}
