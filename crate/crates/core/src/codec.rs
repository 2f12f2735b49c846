//! Semantic and channel encoders/decoders for the audio and visual users.
//!
//! Every block exposes `forward` returning a cache and a `backward` that
//! accumulates parameter gradients into a same-shaped gradient struct.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::euler::{euler_forward, euler_inverse};
use crate::layers::{join, relu, relu_backward, relu_mask, Dense, Parameters};
use crate::numeric::{sample_normal, sigmoid, softmax_into, ComplexMatrix, RealMatrix, SeededRng, C64};

/// `T x d` per-segment features of one modality.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence {
    pub data: RealMatrix,
}

impl FeatureSequence {
    pub fn new(data: RealMatrix) -> Result<Self> {
        if data.rows() == 0 {
            return Err(Error::ShapeMismatch("feature sequence needs T >= 1".into()));
        }
        if !data.is_finite() {
            return Err(Error::ShapeMismatch("non-finite feature value".into()));
        }
        Ok(Self { data })
    }

    pub fn segments(&self) -> usize {
        self.data.rows()
    }

    pub fn dim(&self) -> usize {
        self.data.cols()
    }
}

/// `T x k x d_v` visual features: `k` spatial locations per segment.
#[derive(Clone, Debug, PartialEq)]
pub struct VisualSequence {
    pub segments: Vec<RealMatrix>,
}

impl VisualSequence {
    pub fn new(segments: Vec<RealMatrix>) -> Result<Self> {
        let first = segments.first().ok_or_else(|| Error::ShapeMismatch("visual sequence needs T >= 1".into()))?;
        let shape = first.shape();
        if shape.0 == 0 || segments.iter().any(|s| s.shape() != shape || !s.is_finite()) {
            return Err(Error::ShapeMismatch("visual segments must share a finite k x d_v shape with k >= 1".into()));
        }
        Ok(Self { segments })
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn locations(&self) -> usize {
        self.segments[0].rows()
    }

    pub fn dim(&self) -> usize {
        self.segments[0].cols()
    }
}

// ---------------------------------------------------------------------------
// Recurrent audio encoder
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CellKind {
    /// `h = (1-g)·h_prev + g·tanh(...)` with a single sigmoid update gate.
    SingleGate,
    /// Input, forget and output gates plus a tanh candidate.
    Lstm,
}

impl CellKind {
    fn gate_count(self) -> usize {
        match self {
            CellKind::SingleGate => 2,
            CellKind::Lstm => 4,
        }
    }
}

impl fmt::Display for CellKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CellKind::SingleGate => "single-gate",
            CellKind::Lstm => "lstm",
        })
    }
}

impl FromStr for CellKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single-gate" | "gru1" => Ok(CellKind::SingleGate),
            "lstm" => Ok(CellKind::Lstm),
            other => Err(Error::Config(format!("unknown cell kind '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gate {
    pub wx: RealMatrix,
    pub wh: RealMatrix,
    pub b: Vec<f64>,
}

impl Gate {
    fn zeros(inputs: usize, hidden: usize) -> Self {
        Self { wx: RealMatrix::zeros(inputs, hidden), wh: RealMatrix::zeros(hidden, hidden), b: vec![0.0; hidden] }
    }

    fn pre(&self, x: &[f64], h: &[f64]) -> Vec<f64> {
        let mut out = self.b.clone();
        for (i, &xi) in x.iter().enumerate() {
            out.iter_mut().zip(self.wx.row(i)).for_each(|(o, w)| *o += xi * w);
        }
        for (i, &hi) in h.iter().enumerate() {
            out.iter_mut().zip(self.wh.row(i)).for_each(|(o, w)| *o += hi * w);
        }
        out
    }

    fn accumulate(&self, grad: &mut Gate, x: &[f64], h_prev: &[f64], dpre: &[f64], dh_prev: &mut [f64]) {
        for (i, &xi) in x.iter().enumerate() {
            grad.wx.row_mut(i).iter_mut().zip(dpre).for_each(|(g, d)| *g += xi * d);
        }
        for (i, &hi) in h_prev.iter().enumerate() {
            grad.wh.row_mut(i).iter_mut().zip(dpre).for_each(|(g, d)| *g += hi * d);
            dh_prev[i] += self.wh.row(i).iter().zip(dpre).map(|(w, d)| w * d).sum::<f64>();
        }
        grad.b.iter_mut().zip(dpre).for_each(|(g, d)| *g += d);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RecurrentCell {
    pub kind: CellKind,
    pub gates: Vec<Gate>,
}

/// Per-timestep activations kept for backpropagation through time.
#[derive(Clone, Debug)]
pub struct CellCache {
    h: Vec<Vec<f64>>,
    c: Vec<Vec<f64>>,
    acts: Vec<Vec<Vec<f64>>>,
}

impl RecurrentCell {
    pub fn zeros(kind: CellKind, inputs: usize, hidden: usize) -> Self {
        Self { kind, gates: (0..kind.gate_count()).map(|_| Gate::zeros(inputs, hidden)).collect() }
    }

    pub fn init(kind: CellKind, inputs: usize, hidden: usize, rng: &mut SeededRng) -> Self {
        let mut cell = Self::zeros(kind, inputs, hidden);
        let sx = (1.0 / inputs as f64).sqrt();
        let sh = (1.0 / hidden as f64).sqrt();
        for g in &mut cell.gates {
            g.wx = sample_normal(rng, inputs, hidden, sx);
            g.wh = sample_normal(rng, hidden, hidden, 0.5 * sh);
        }
        cell
    }

    pub fn inputs(&self) -> usize {
        self.gates[0].wx.rows()
    }

    pub fn hidden(&self) -> usize {
        self.gates[0].wh.rows()
    }

    /// Runs over the rows of `x` from a zero state; returns all hidden states.
    pub fn forward(&self, x: &RealMatrix) -> (RealMatrix, CellCache) {
        let hid = self.hidden();
        let steps = x.rows();
        let mut cache = CellCache { h: vec![vec![0.0; hid]], c: vec![vec![0.0; hid]], acts: Vec::with_capacity(steps) };
        let mut out = RealMatrix::zeros(steps, hid);
        for t in 0..steps {
            let xt = x.row(t);
            let hp = &cache.h[t];
            let (h, c, acts) = match self.kind {
                CellKind::SingleGate => {
                    let g: Vec<f64> = self.gates[0].pre(xt, hp).into_iter().map(sigmoid).collect();
                    let cand: Vec<f64> = self.gates[1].pre(xt, hp).into_iter().map(f64::tanh).collect();
                    let h: Vec<f64> = (0..hid).map(|j| (1.0 - g[j]) * hp[j] + g[j] * cand[j]).collect();
                    (h, vec![0.0; hid], vec![g, cand])
                }
                CellKind::Lstm => {
                    let cp = &cache.c[t];
                    let i: Vec<f64> = self.gates[0].pre(xt, hp).into_iter().map(sigmoid).collect();
                    let f: Vec<f64> = self.gates[1].pre(xt, hp).into_iter().map(sigmoid).collect();
                    let o: Vec<f64> = self.gates[2].pre(xt, hp).into_iter().map(sigmoid).collect();
                    let cand: Vec<f64> = self.gates[3].pre(xt, hp).into_iter().map(f64::tanh).collect();
                    let c: Vec<f64> = (0..hid).map(|j| f[j] * cp[j] + i[j] * cand[j]).collect();
                    let h: Vec<f64> = (0..hid).map(|j| o[j] * c[j].tanh()).collect();
                    (h, c, vec![i, f, o, cand])
                }
            };
            out.row_mut(t).copy_from_slice(&h);
            cache.h.push(h);
            cache.c.push(c);
            cache.acts.push(acts);
        }
        (out, cache)
    }

    /// Backpropagation through time. The input is raw data, so no input
    /// gradient is produced.
    pub fn backward(&self, x: &RealMatrix, cache: &CellCache, gh: &RealMatrix, grad: &mut RecurrentCell) {
        let hid = self.hidden();
        let mut carry_h = vec![0.0; hid];
        let mut carry_c = vec![0.0; hid];
        for t in (0..x.rows()).rev() {
            let xt = x.row(t);
            let hp = &cache.h[t];
            let dh: Vec<f64> = gh.row(t).iter().zip(&carry_h).map(|(a, b)| a + b).collect();
            let acts = &cache.acts[t];
            let mut dh_prev = vec![0.0; hid];
            match self.kind {
                CellKind::SingleGate => {
                    let (g, cand) = (&acts[0], &acts[1]);
                    let dg: Vec<f64> = (0..hid).map(|j| dh[j] * (cand[j] - hp[j]) * g[j] * (1.0 - g[j])).collect();
                    let dc: Vec<f64> = (0..hid).map(|j| dh[j] * g[j] * (1.0 - cand[j] * cand[j])).collect();
                    for j in 0..hid {
                        dh_prev[j] = dh[j] * (1.0 - g[j]);
                    }
                    self.gates[0].accumulate(&mut grad.gates[0], xt, hp, &dg, &mut dh_prev);
                    self.gates[1].accumulate(&mut grad.gates[1], xt, hp, &dc, &mut dh_prev);
                }
                CellKind::Lstm => {
                    let (i, f, o, cand) = (&acts[0], &acts[1], &acts[2], &acts[3]);
                    let c = &cache.c[t + 1];
                    let cp = &cache.c[t];
                    let mut dpre = vec![vec![0.0; hid]; 4];
                    for j in 0..hid {
                        let tc = c[j].tanh();
                        let dcell = carry_c[j] + dh[j] * o[j] * (1.0 - tc * tc);
                        dpre[0][j] = dcell * cand[j] * i[j] * (1.0 - i[j]);
                        dpre[1][j] = dcell * cp[j] * f[j] * (1.0 - f[j]);
                        dpre[2][j] = dh[j] * tc * o[j] * (1.0 - o[j]);
                        dpre[3][j] = dcell * i[j] * (1.0 - cand[j] * cand[j]);
                        carry_c[j] = dcell * f[j];
                    }
                    for (k, d) in dpre.iter().enumerate() {
                        self.gates[k].accumulate(&mut grad.gates[k], xt, hp, d, &mut dh_prev);
                    }
                }
            }
            carry_h = dh_prev;
        }
    }
}

impl Parameters for RecurrentCell {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        for (k, g) in self.gates.iter_mut().enumerate() {
            let p = join(prefix, &format!("gate{k}"));
            let sx = [g.wx.rows(), g.wx.cols()];
            f(&join(&p, "wx"), &sx, g.wx.data_mut());
            let sh = [g.wh.rows(), g.wh.cols()];
            f(&join(&p, "wh"), &sh, g.wh.data_mut());
            let n = g.b.len();
            f(&join(&p, "b"), &[n], &mut g.b);
        }
    }
}

pub fn encode_audio_semantic(a: &FeatureSequence, cell: &RecurrentCell) -> Result<FeatureSequence> {
    if a.dim() != cell.inputs() {
        return Err(Error::ShapeMismatch(format!("audio width {} but cell expects {}", a.dim(), cell.inputs())));
    }
    Ok(FeatureSequence { data: cell.forward(&a.data).0 })
}

// ---------------------------------------------------------------------------
// Audio-guided visual attention
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
pub struct AgvaParams {
    /// Visual location features to the shared width `d` (ReLU).
    pub m_v: Dense,
    /// Received audio features to the shared width `d` (ReLU).
    pub m_a: Dense,
    pub w_v1: RealMatrix,
    pub w_a1: RealMatrix,
    /// Scoring vector, `d -> 1`.
    pub w_f: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct AgvaCache {
    pre_mv: RealMatrix,
    mv: RealMatrix,
    pre_ma: RealMatrix,
    ma: RealMatrix,
    s: RealMatrix,
    pub alpha: Vec<f64>,
}

impl AgvaCache {
    pub fn relu_pattern(&self) -> Vec<bool> {
        relu_mask(&self.pre_mv).chain(relu_mask(&self.pre_ma)).collect()
    }
}

impl AgvaParams {
    pub fn zeros(d_v: usize, d_a: usize, d: usize) -> Self {
        Self {
            m_v: Dense::zeros(d_v, d),
            m_a: Dense::zeros(d_a, d),
            w_v1: RealMatrix::zeros(d, d),
            w_a1: RealMatrix::zeros(d, d),
            w_f: vec![0.0; d],
        }
    }

    pub fn init(d_v: usize, d_a: usize, d: usize, rng: &mut SeededRng) -> Self {
        let s = (1.0 / d as f64).sqrt();
        Self {
            m_v: Dense::init(d_v, d, rng),
            m_a: Dense::init(d_a, d, rng),
            w_v1: sample_normal(rng, d, d, s),
            w_a1: sample_normal(rng, d, d, s),
            w_f: (0..d).map(|_| s * rng.standard_normal()).collect(),
        }
    }

    /// Attention over the `k` rows of `v` guided by the audio vector `a`;
    /// returns the attended `d_v` feature.
    pub fn forward(&self, v: &RealMatrix, a: &[f64]) -> (Vec<f64>, AgvaCache) {
        let pre_mv = self.m_v.forward(v);
        let mv = relu(&pre_mv);
        let a_row = RealMatrix::from_vec(1, a.len(), a.to_vec()).expect("row");
        let pre_ma = self.m_a.forward(&a_row);
        let ma = relu(&pre_ma);
        let audio_term = ma.matmul(&self.w_a1).expect("agva width");
        let mut u = mv.matmul(&self.w_v1).expect("agva width");
        for r in 0..u.rows() {
            u.row_mut(r).iter_mut().zip(audio_term.row(0)).for_each(|(x, y)| *x += y);
        }
        let s = u.map(f64::tanh);
        let z: Vec<f64> = (0..s.rows()).map(|j| s.row(j).iter().zip(&self.w_f).map(|(a, b)| a * b).sum()).collect();
        let mut alpha = vec![0.0; z.len()];
        softmax_into(&z, &mut alpha);
        let mut out = vec![0.0; v.cols()];
        for (j, &w) in alpha.iter().enumerate() {
            out.iter_mut().zip(v.row(j)).for_each(|(o, x)| *o += w * x);
        }
        (out, AgvaCache { pre_mv, mv, pre_ma, ma, s, alpha })
    }

    /// Returns the gradient with respect to the audio guide vector.
    pub fn backward(&self, v: &RealMatrix, a: &[f64], cache: &AgvaCache, g_out: &[f64], grad: &mut AgvaParams) -> Vec<f64> {
        let k = v.rows();
        let galpha: Vec<f64> = (0..k).map(|j| v.row(j).iter().zip(g_out).map(|(x, g)| x * g).sum()).collect();
        let dot: f64 = cache.alpha.iter().zip(&galpha).map(|(a, g)| a * g).sum();
        let gz: Vec<f64> = cache.alpha.iter().zip(&galpha).map(|(a, g)| a * (g - dot)).collect();
        let d = self.w_f.len();
        let mut gu = RealMatrix::zeros(k, d);
        for j in 0..k {
            for i in 0..d {
                let s = cache.s[(j, i)];
                grad.w_f[i] += s * gz[j];
                gu[(j, i)] = gz[j] * self.w_f[i] * (1.0 - s * s);
            }
        }
        grad.w_v1.add_assign(&cache.mv.t_matmul(&gu).expect("agva grad"));
        let gmv = gu.matmul_t(&self.w_v1).expect("agva grad");
        let gu_sum = RealMatrix::from_fn(1, d, |_, i| (0..k).map(|j| gu[(j, i)]).sum());
        grad.w_a1.add_assign(&cache.ma.t_matmul(&gu_sum).expect("agva grad"));
        let gma = gu_sum.matmul_t(&self.w_a1).expect("agva grad");

        self.m_v.backward(v, &relu_backward(&cache.pre_mv, &gmv), &mut grad.m_v);
        let a_row = RealMatrix::from_vec(1, a.len(), a.to_vec()).expect("row");
        self.m_a.backward(&a_row, &relu_backward(&cache.pre_ma, &gma), &mut grad.m_a).into_data()
    }
}

impl Parameters for AgvaParams {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        self.m_v.visit(&join(prefix, "m_v"), f);
        self.m_a.visit(&join(prefix, "m_a"), f);
        let s = [self.w_v1.rows(), self.w_v1.cols()];
        f(&join(prefix, "w_v1"), &s, self.w_v1.data_mut());
        let s = [self.w_a1.rows(), self.w_a1.cols()];
        f(&join(prefix, "w_a1"), &s, self.w_a1.data_mut());
        let n = self.w_f.len();
        f(&join(prefix, "w_f"), &[n], &mut self.w_f);
    }
}

pub fn agva_attend(v: &RealMatrix, a_star: &[f64], params: &AgvaParams) -> Result<Vec<f64>> {
    if v.cols() != params.m_v.inputs() || a_star.len() != params.m_a.inputs() || v.rows() == 0 {
        return Err(Error::ShapeMismatch(format!(
            "agva got v {}x{} and audio {}, expects widths {} and {}",
            v.rows(),
            v.cols(),
            a_star.len(),
            params.m_v.inputs(),
            params.m_a.inputs()
        )));
    }
    Ok(params.forward(v, a_star).0)
}

// ---------------------------------------------------------------------------
// Channel encoder / decoder
// ---------------------------------------------------------------------------

/// Two dense layers (ReLU between) followed by the Euler map.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelEncoder {
    pub l1: Dense,
    pub l2: Dense,
}

#[derive(Clone, Debug)]
pub struct EncoderCache {
    pre1: RealMatrix,
    h1: RealMatrix,
}

impl EncoderCache {
    pub fn relu_pattern(&self) -> Vec<bool> {
        relu_mask(&self.pre1).collect()
    }
}

impl ChannelEncoder {
    pub fn init(inputs: usize, hidden: usize, code: usize, rng: &mut SeededRng) -> Self {
        Self { l1: Dense::init(inputs, hidden, rng), l2: Dense::init(hidden, code, rng) }
    }

    pub fn code_width(&self) -> usize {
        self.l2.outputs()
    }

    /// Real-valued encoder output, `T x code`.
    pub fn forward_real(&self, x: &RealMatrix) -> (RealMatrix, EncoderCache) {
        let pre1 = self.l1.forward(x);
        let h1 = relu(&pre1);
        (self.l2.forward(&h1), EncoderCache { pre1, h1 })
    }

    pub fn backward_real(&self, x: &RealMatrix, cache: &EncoderCache, gy: &RealMatrix, grad: &mut ChannelEncoder) -> RealMatrix {
        let gh1 = self.l2.backward(&cache.h1, gy, &mut grad.l2);
        self.l1.backward(x, &relu_backward(&cache.pre1, &gh1), &mut grad.l1)
    }
}

impl Parameters for ChannelEncoder {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        self.l1.visit(&join(prefix, "l1"), f);
        self.l2.visit(&join(prefix, "l2"), f);
    }
}

/// Row-wise Euler map of a `T x w` real matrix into `T x w/2` complex symbols.
pub fn rows_to_complex(y: &RealMatrix) -> Result<ComplexMatrix> {
    if y.cols() % 2 != 0 {
        return Err(Error::OddWidth(y.cols()));
    }
    let mut out = Vec::with_capacity(y.rows() * y.cols() / 2);
    for r in 0..y.rows() {
        out.extend(euler_forward(y.row(r))?);
    }
    ComplexMatrix::from_vec(y.rows(), y.cols() / 2, out)
}

/// Row-wise inverse Euler map.
pub fn rows_to_real(z: &ComplexMatrix) -> RealMatrix {
    let mut out = Vec::with_capacity(z.rows() * z.cols() * 2);
    for r in 0..z.rows() {
        out.extend(euler_inverse(z.row(r)));
    }
    RealMatrix::from_vec(z.rows(), z.cols() * 2, out).expect("euler inverse width")
}

/// Real-coordinate gradient of a complex matrix laid out the way
/// [`rows_to_complex`] reads it. Both maps are linear and mutually adjoint.
pub fn complex_grad_to_real(g: &ComplexMatrix) -> RealMatrix {
    rows_to_real(g)
}

pub fn real_grad_to_complex(g: &RealMatrix) -> ComplexMatrix {
    rows_to_complex(g).expect("even width")
}

pub fn channel_encode(x: &FeatureSequence, enc: &ChannelEncoder) -> Result<ComplexMatrix> {
    if x.dim() != enc.l1.inputs() {
        return Err(Error::ShapeMismatch(format!("encoder expects width {}, got {}", enc.l1.inputs(), x.dim())));
    }
    if enc.code_width() % 2 != 0 {
        return Err(Error::OddWidth(enc.code_width()));
    }
    rows_to_complex(&enc.forward_real(&x.data).0)
}

/// Complex decomposition, two ReLU dense layers, then a linear projection
/// to the common width `d_l`.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelDecoder {
    pub l1: Dense,
    pub l2: Dense,
    pub proj: Dense,
}

#[derive(Clone, Debug)]
pub struct DecoderCache {
    r: RealMatrix,
    pre1: RealMatrix,
    h1: RealMatrix,
    pre2: RealMatrix,
    h2: RealMatrix,
}

impl DecoderCache {
    pub fn relu_pattern(&self) -> Vec<bool> {
        relu_mask(&self.pre1).chain(relu_mask(&self.pre2)).collect()
    }
}

impl ChannelDecoder {
    pub fn init(code: usize, hidden: usize, common: usize, rng: &mut SeededRng) -> Self {
        Self {
            l1: Dense::init(code, hidden, rng),
            l2: Dense::init(hidden, hidden, rng),
            proj: Dense::init(hidden, common, rng),
        }
    }

    pub fn forward(&self, z: &ComplexMatrix) -> (RealMatrix, DecoderCache) {
        let r = rows_to_real(z);
        let pre1 = self.l1.forward(&r);
        let h1 = relu(&pre1);
        let pre2 = self.l2.forward(&h1);
        let h2 = relu(&pre2);
        (self.proj.forward(&h2), DecoderCache { r, pre1, h1, pre2, h2 })
    }

    /// Returns the gradient with respect to the received complex symbols.
    pub fn backward(&self, cache: &DecoderCache, gm: &RealMatrix, grad: &mut ChannelDecoder) -> ComplexMatrix {
        let gh2 = self.proj.backward(&cache.h2, gm, &mut grad.proj);
        let gh1 = self.l2.backward(&cache.h1, &relu_backward(&cache.pre2, &gh2), &mut grad.l2);
        let gr = self.l1.backward(&cache.r, &relu_backward(&cache.pre1, &gh1), &mut grad.l1);
        real_grad_to_complex(&gr)
    }
}

impl Parameters for ChannelDecoder {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        self.l1.visit(&join(prefix, "l1"), f);
        self.l2.visit(&join(prefix, "l2"), f);
        self.proj.visit(&join(prefix, "proj"), f);
    }
}

pub fn channel_decode(z: &ComplexMatrix, dec: &ChannelDecoder) -> Result<FeatureSequence> {
    if 2 * z.cols() != dec.l1.inputs() {
        return Err(Error::ShapeMismatch(format!("decoder expects {} symbols per segment, got {}", dec.l1.inputs() / 2, z.cols())));
    }
    FeatureSequence::new(dec.forward(z).0)
}

/// Flattens `T x n` symbols into one row of `T*n` channel uses.
pub fn to_stream(z: &ComplexMatrix) -> Vec<C64> {
    z.data().to_vec()
}

pub fn from_stream(stream: &[C64], segments: usize) -> ComplexMatrix {
    ComplexMatrix::from_vec(segments, stream.len() / segments, stream.to_vec()).expect("stream length")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_seq(t: usize, d: usize) -> FeatureSequence {
        FeatureSequence::new(RealMatrix::zeros(t, d)).unwrap()
    }

    #[test]
    fn zero_cell_is_fixed_point() {
        for kind in [CellKind::SingleGate, CellKind::Lstm] {
            let cell = RecurrentCell::zeros(kind, 3, 4);
            let out = encode_audio_semantic(&zero_seq(1, 3), &cell).unwrap();
            assert_eq!(out.data, RealMatrix::zeros(1, 4));
            let mut rng = SeededRng::new(1);
            let x = FeatureSequence::new(sample_normal(&mut rng, 5, 3, 2.0)).unwrap();
            let out = encode_audio_semantic(&x, &cell).unwrap();
            assert!(out.data.data().iter().all(|&v| v == 0.0));
        }
        let cell = RecurrentCell::zeros(CellKind::SingleGate, 3, 4);
        assert!(matches!(encode_audio_semantic(&zero_seq(2, 5), &cell), Err(Error::ShapeMismatch(_))));
    }

    /// Scalar-loop single-gate cell written out index by index.
    fn scalar_cell(cell: &RecurrentCell, x: &RealMatrix) -> Vec<Vec<f64>> {
        let hid = cell.hidden();
        let mut h = vec![0.0; hid];
        let mut out = Vec::new();
        for t in 0..x.rows() {
            let mut next = vec![0.0; hid];
            for j in 0..hid {
                let (mut zg, mut zc) = (cell.gates[0].b[j], cell.gates[1].b[j]);
                for i in 0..x.cols() {
                    zg += x[(t, i)] * cell.gates[0].wx[(i, j)];
                    zc += x[(t, i)] * cell.gates[1].wx[(i, j)];
                }
                for i in 0..hid {
                    zg += h[i] * cell.gates[0].wh[(i, j)];
                    zc += h[i] * cell.gates[1].wh[(i, j)];
                }
                let g = 1.0 / (1.0 + (-zg).exp());
                next[j] = (1.0 - g) * h[j] + g * zc.tanh();
            }
            h = next;
            out.push(h.clone());
        }
        out
    }

    #[test]
    fn cell_matches_unrolled_oracle() {
        let mut rng = SeededRng::new(77);
        let mut cell = RecurrentCell::init(CellKind::SingleGate, 2, 3, &mut rng);
        for g in &mut cell.gates {
            g.b = (0..3).map(|_| rng.standard_normal()).collect();
        }
        let x = sample_normal(&mut rng, 6, 2, 1.0);
        let (got, _) = cell.forward(&x);
        for (t, row) in scalar_cell(&cell, &x).iter().enumerate() {
            for j in 0..3 {
                assert!((got[(t, j)] - row[j]).abs() <= 1e-10);
            }
        }
    }

    fn cell_grad_check(kind: CellKind) {
        let mut rng = SeededRng::new(8);
        let cell = RecurrentCell::init(kind, 3, 4, &mut rng);
        let x = sample_normal(&mut rng, 5, 3, 1.0);
        let w = sample_normal(&mut rng, 5, 4, 1.0);
        let loss = |c: &RecurrentCell| -> f64 { c.forward(&x).0.data().iter().zip(w.data()).map(|(a, b)| a * b).sum() };
        let (_, cache) = cell.forward(&x);
        let mut grad = RecurrentCell::zeros(kind, 3, 4);
        cell.backward(&x, &cache, &w, &mut grad);
        let analytic = grad.clone().flatten();
        let base = cell.clone().flatten();
        let h = 1e-6;
        for i in 0..base.len() {
            let eval = |delta: f64| {
                let mut c = cell.clone();
                let mut k = 0;
                c.visit("", &mut |_, _, v| {
                    for x in v.iter_mut() {
                        if k == i {
                            *x += delta;
                        }
                        k += 1;
                    }
                });
                loss(&c)
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            assert!((fd - analytic[i]).abs() <= 1e-7 * (1.0 + fd.abs()), "{kind:?} param {i}: {fd} vs {}", analytic[i]);
        }
    }

    #[test]
    fn single_gate_gradients() {
        cell_grad_check(CellKind::SingleGate);
    }

    #[test]
    fn lstm_gradients() {
        cell_grad_check(CellKind::Lstm);
    }

    #[test]
    fn agva_single_location() {
        let mut rng = SeededRng::new(3);
        let p = AgvaParams::init(4, 3, 2, &mut rng);
        let v = sample_normal(&mut rng, 1, 4, 1.0);
        let out = agva_attend(&v, &[0.1, 0.2, 0.3], &p).unwrap();
        assert_eq!(out, v.row(0));
    }

    #[test]
    fn agva_zero_scorer_is_mean() {
        let mut rng = SeededRng::new(4);
        let mut p = AgvaParams::init(4, 3, 2, &mut rng);
        p.w_f = vec![0.0; 2];
        let v = sample_normal(&mut rng, 3, 4, 1.0);
        let (out, cache) = p.forward(&v, &[1.0, -1.0, 0.5]);
        assert!(cache.alpha.iter().all(|a| (a - 1.0 / 3.0).abs() < 1e-15));
        for c in 0..4 {
            let mean = v.col(c).iter().sum::<f64>() / 3.0;
            assert!((out[c] - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn agva_matches_hand_evaluation() {
        let mut rng = SeededRng::new(5);
        let (k, dv, da, d) = (3, 4, 3, 2);
        let p = AgvaParams::init(dv, da, d, &mut rng);
        let v = sample_normal(&mut rng, k, dv, 1.0);
        let a: Vec<f64> = (0..da).map(|_| rng.standard_normal()).collect();
        let out = agva_attend(&v, &a, &p).unwrap();

        let dense_relu = |l: &Dense, x: &[f64]| -> Vec<f64> {
            (0..l.outputs())
                .map(|o| (l.b[o] + x.iter().enumerate().map(|(i, xi)| xi * l.w[(i, o)]).sum::<f64>()).max(0.0))
                .collect()
        };
        let ma = dense_relu(&p.m_a, &a);
        let mut z = vec![0.0; k];
        for j in 0..k {
            let mv = dense_relu(&p.m_v, v.row(j));
            for o in 0..d {
                let mut u = 0.0;
                for i in 0..d {
                    u += mv[i] * p.w_v1[(i, o)] + ma[i] * p.w_a1[(i, o)];
                }
                z[j] += p.w_f[o] * u.tanh();
            }
        }
        let e: Vec<f64> = z.iter().map(|v| v.exp()).collect();
        let s: f64 = e.iter().sum();
        for c in 0..dv {
            let want: f64 = (0..k).map(|j| e[j] / s * v[(j, c)]).sum();
            assert!((out[c] - want).abs() <= 1e-12);
        }
        assert!(matches!(agva_attend(&v, &a[..2], &p), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn agva_gradients() {
        let mut rng = SeededRng::new(6);
        let p = AgvaParams::init(5, 4, 3, &mut rng);
        let v = sample_normal(&mut rng, 4, 5, 1.0);
        let a: Vec<f64> = (0..4).map(|_| rng.standard_normal()).collect();
        let w: Vec<f64> = (0..5).map(|_| rng.standard_normal()).collect();
        let loss = |p: &AgvaParams, a: &[f64]| -> f64 { p.forward(&v, a).0.iter().zip(&w).map(|(x, y)| x * y).sum() };
        let (_, cache) = p.forward(&v, &a);
        let mut grad = AgvaParams::zeros(5, 4, 3);
        let ga = p.backward(&v, &a, &cache, &w, &mut grad);
        let h = 1e-6;
        for i in 0..4 {
            let mut ap = a.clone();
            ap[i] += h;
            let mut am = a.clone();
            am[i] -= h;
            let fd = (loss(&p, &ap) - loss(&p, &am)) / (2.0 * h);
            assert!((fd - ga[i]).abs() < 1e-7);
        }
        let analytic = grad.flatten();
        for i in 0..analytic.len() {
            let eval = |delta: f64| {
                let mut q = p.clone();
                let mut k = 0;
                q.visit("", &mut |_, _, vals| {
                    for x in vals.iter_mut() {
                        if k == i {
                            *x += delta;
                        }
                        k += 1;
                    }
                });
                loss(&q, &a)
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            assert!((fd - analytic[i]).abs() < 1e-7, "param {i}");
        }
    }

    #[test]
    fn encode_identity_and_zero() {
        let enc = ChannelEncoder { l1: Dense::identity(2), l2: Dense::identity(2) };
        let x = FeatureSequence::new(RealMatrix::from_rows(&[vec![1.0, 0.0]])).unwrap();
        let z = channel_encode(&x, &enc).unwrap();
        assert_eq!(z.data(), &[C64::new(1.0, 0.0)]);

        let zero = ChannelEncoder { l1: Dense::zeros(3, 4), l2: Dense::zeros(4, 6) };
        let mut rng = SeededRng::new(2);
        let x = FeatureSequence::new(sample_normal(&mut rng, 2, 3, 1.0)).unwrap();
        assert_eq!(channel_encode(&x, &zero).unwrap(), ComplexMatrix::zeros(2, 3));

        let odd = ChannelEncoder { l1: Dense::zeros(3, 4), l2: Dense::zeros(4, 5) };
        assert!(matches!(channel_encode(&x, &odd), Err(Error::OddWidth(5))));
    }

    #[test]
    fn encode_decode_loopback() {
        let mut rng = SeededRng::new(9);
        let enc = ChannelEncoder::init(6, 8, 10, &mut rng);
        let x = FeatureSequence::new(sample_normal(&mut rng, 4, 6, 1.0)).unwrap();
        let (real, _) = enc.forward_real(&x.data);
        let z = channel_encode(&x, &enc).unwrap();
        // Noiseless identity link: the decoder front end sees exactly the Euler-domain signal.
        let recovered = rows_to_real(&z);
        assert!(recovered.max_abs_diff(&real) <= 1e-9);
    }

    #[test]
    fn decode_zero_and_identity() {
        let dec = ChannelDecoder { l1: Dense::zeros(4, 3), l2: Dense::zeros(3, 3), proj: Dense::zeros(3, 2) };
        let out = channel_decode(&ComplexMatrix::zeros(2, 2), &dec).unwrap();
        assert_eq!(out.data, RealMatrix::zeros(2, 2));

        let ident = ChannelDecoder { l1: Dense::identity(4), l2: Dense::identity(4), proj: Dense::identity(4) };
        let z = ComplexMatrix::from_rows(&[vec![C64::new(0.5, 2.0), C64::new(1.5, 0.25)]]);
        let out = channel_decode(&z, &ident).unwrap();
        assert_eq!(out.data.row(0), &[0.5, 1.5, 2.0, 0.25]);
    }

    #[test]
    fn decode_matches_formula() {
        let mut rng = SeededRng::new(10);
        let dec = ChannelDecoder::init(4, 3, 2, &mut rng);
        let z = crate::numeric::sample_cn(&mut rng, 2, 2, 1.0);
        let out = channel_decode(&z, &dec).unwrap();
        let layer = |l: &Dense, x: &[f64], act: bool| -> Vec<f64> {
            (0..l.outputs())
                .map(|o| {
                    let v = l.b[o] + x.iter().enumerate().map(|(i, xi)| xi * l.w[(i, o)]).sum::<f64>();
                    if act { v.max(0.0) } else { v }
                })
                .collect()
        };
        for t in 0..2 {
            let r = [z[(t, 0)].re, z[(t, 1)].re, z[(t, 0)].im, z[(t, 1)].im];
            let h1 = layer(&dec.l1, &r, true);
            let h2 = layer(&dec.l2, &h1, true);
            let m = layer(&dec.proj, &h2, false);
            for c in 0..2 {
                assert!((out.data[(t, c)] - m[c]).abs() <= 1e-10);
            }
        }
    }
}
