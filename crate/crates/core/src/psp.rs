//! Positive sample propagation: cross-modal segment similarity, pruning of
//! negative and weak connections, residual propagation, and the event head.

use crate::error::{Error, Result};
use crate::layers::{join, relu, relu_backward, relu_mask, softmax_backward, Dense, Parameters};
use crate::numeric::{elementwise, row_l1_normalize, sample_normal, Activation, RealMatrix, SeededRng, ROW_SUM_EPS};

pub const DEFAULT_TAU1: f64 = 0.099;

/// Two dense layers and a softmax over the `C` classes.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierHead {
    pub l1: Dense,
    pub l2: Dense,
}

impl ClassifierHead {
    pub fn init(inputs: usize, hidden: usize, classes: usize, rng: &mut SeededRng) -> Self {
        Self { l1: Dense::init(inputs, hidden, rng), l2: Dense::init(hidden, classes, rng) }
    }

    pub fn classes(&self) -> usize {
        self.l2.outputs()
    }

    pub fn forward(&self, fused: &RealMatrix) -> (RealMatrix, HeadCache) {
        let pre1 = self.l1.forward(fused);
        let h1 = relu(&pre1);
        let probs = elementwise(&self.l2.forward(&h1), Activation::SoftmaxRow);
        (probs.clone(), HeadCache { fused: fused.clone(), pre1, h1, probs })
    }

    /// `g_probs` is the gradient with respect to the softmax output.
    pub fn backward(&self, cache: &HeadCache, g_probs: &RealMatrix, grad: &mut ClassifierHead) -> RealMatrix {
        let g_logits = softmax_backward(&cache.probs, g_probs);
        let gh1 = self.l2.backward(&cache.h1, &g_logits, &mut grad.l2);
        self.l1.backward(&cache.fused, &relu_backward(&cache.pre1, &gh1), &mut grad.l1)
    }
}

#[derive(Clone, Debug)]
pub struct HeadCache {
    fused: RealMatrix,
    pre1: RealMatrix,
    h1: RealMatrix,
    pub probs: RealMatrix,
}

impl HeadCache {
    pub fn relu_pattern(&self) -> Vec<bool> {
        relu_mask(&self.pre1).collect()
    }
}

impl Parameters for ClassifierHead {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        self.l1.visit(&join(prefix, "l1"), f);
        self.l2.visit(&join(prefix, "l2"), f);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PspParams {
    /// Visual similarity projection, `d_l x d_s`.
    pub sim_proj_v: RealMatrix,
    /// Audio similarity projection, `d_l x d_s`.
    pub sim_proj_a: RealMatrix,
    /// Map applied to visual features propagated into the audio stream.
    pub fuse_a: RealMatrix,
    /// Map applied to audio features propagated into the visual stream.
    pub fuse_v: RealMatrix,
    /// Connection threshold in `[0, 1)`; not trained.
    pub tau1: f64,
    pub head: ClassifierHead,
}

impl PspParams {
    pub fn init(d_l: usize, d_s: usize, head_hidden: usize, classes: usize, tau1: f64, rng: &mut SeededRng) -> Self {
        let s = (1.0 / d_l as f64).sqrt();
        Self {
            sim_proj_v: sample_normal(rng, d_l, d_s, s),
            sim_proj_a: sample_normal(rng, d_l, d_s, s),
            fuse_a: sample_normal(rng, d_l, d_l, s),
            fuse_v: sample_normal(rng, d_l, d_l, s),
            tau1,
            head: ClassifierHead::init(d_l, head_hidden, classes, rng),
        }
    }

    pub fn common_dim(&self) -> usize {
        self.sim_proj_v.rows()
    }
}

impl Parameters for PspParams {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        for (name, m) in [
            ("sim_proj_v", &mut self.sim_proj_v),
            ("sim_proj_a", &mut self.sim_proj_a),
            ("fuse_a", &mut self.fuse_a),
            ("fuse_v", &mut self.fuse_v),
        ] {
            let s = [m.rows(), m.cols()];
            f(&join(prefix, name), &s, m.data_mut());
        }
        self.head.visit(&join(prefix, "head"), f);
    }
}

/// One-hot `T x C` segment labels.
#[derive(Clone, Debug, PartialEq)]
pub struct EventLabels {
    pub y: RealMatrix,
}

impl EventLabels {
    pub fn from_classes(classes: &[usize], num_classes: usize) -> Result<Self> {
        if let Some(&bad) = classes.iter().find(|&&c| c >= num_classes) {
            return Err(Error::ShapeMismatch(format!("class {bad} out of range for C={num_classes}")));
        }
        Ok(Self { y: RealMatrix::from_fn(classes.len(), num_classes, |t, c| if classes[t] == c { 1.0 } else { 0.0 }) })
    }

    pub fn class_of(&self, t: usize) -> usize {
        self.y.row(t).iter().position(|&v| v == 1.0).expect("one-hot row")
    }
}

fn check_pair(mv: &RealMatrix, ma: &RealMatrix, params: &PspParams) -> Result<()> {
    if mv.shape() != ma.shape() || mv.cols() != params.common_dim() {
        return Err(Error::ShapeMismatch(format!(
            "visual {:?} and audio {:?} features for common width {}",
            mv.shape(),
            ma.shape(),
            params.common_dim()
        )));
    }
    Ok(())
}

/// `(ω_va, ω_av)`, scaled by `1/√d_l`. `ω_av` is the transpose of `ω_va`.
pub fn similarity(mv: &RealMatrix, ma: &RealMatrix, params: &PspParams) -> Result<(RealMatrix, RealMatrix)> {
    check_pair(mv, ma, params)?;
    let pv = mv.matmul(&params.sim_proj_v)?;
    let pa = ma.matmul(&params.sim_proj_a)?;
    let scale = 1.0 / (params.common_dim() as f64).sqrt();
    let va = pv.matmul_t(&pa)?.scale(scale);
    let av = pa.matmul_t(&pv)?.scale(scale);
    Ok((va, av))
}

pub fn normalize_connections(omega: &RealMatrix) -> RealMatrix {
    row_l1_normalize(&relu(omega))
}

/// Zeroes entries at or below `tau1` and re-normalises each row, once.
pub fn threshold_connections(w_hat: &RealMatrix, tau1: f64) -> RealMatrix {
    row_l1_normalize(&w_hat.map(|v| if v > tau1 { v } else { 0.0 }))
}

/// `(SD_v, SD_a)` with `SD_a = η_av (M_v fuse_a) + M_a` and
/// `SD_v = η_va (M_a fuse_v) + M_v`.
pub fn propagate(
    mv: &RealMatrix,
    ma: &RealMatrix,
    eta_va: &RealMatrix,
    eta_av: &RealMatrix,
    params: &PspParams,
) -> Result<(RealMatrix, RealMatrix)> {
    check_pair(mv, ma, params)?;
    let t = mv.rows();
    if eta_va.shape() != (t, t) || eta_av.shape() != (t, t) {
        return Err(Error::ShapeMismatch(format!("connection matrices must be {t}x{t}")));
    }
    let sd_a = eta_av.matmul(&mv.matmul(&params.fuse_a)?)?.try_add(ma)?;
    let sd_v = eta_va.matmul(&ma.matmul(&params.fuse_v)?)?.try_add(mv)?;
    Ok((sd_v, sd_a))
}

pub fn classify(sd_v: &RealMatrix, sd_a: &RealMatrix, head: &ClassifierHead) -> Result<RealMatrix> {
    if sd_v.shape() != sd_a.shape() || sd_v.cols() != head.l1.inputs() {
        return Err(Error::ShapeMismatch(format!("classify got {:?} and {:?}", sd_v.shape(), sd_a.shape())));
    }
    let fused = sd_v.try_add(sd_a)?.scale(0.5);
    Ok(head.forward(&fused).0)
}

/// Everything the fusion backward pass needs.
#[derive(Clone, Debug)]
pub struct PspCache {
    pv: RealMatrix,
    pa: RealMatrix,
    omega_va: RealMatrix,
    omega_av: RealMatrix,
    w_hat_va: RealMatrix,
    w_hat_av: RealMatrix,
    pub eta_va: RealMatrix,
    pub eta_av: RealMatrix,
    qa: RealMatrix,
    qv: RealMatrix,
}

#[derive(Clone, Debug)]
pub struct PspOutput {
    pub sd_v: RealMatrix,
    pub sd_a: RealMatrix,
    pub cache: PspCache,
}

/// Similarity, pruning and propagation in one pass, keeping intermediates.
pub fn fuse(mv: &RealMatrix, ma: &RealMatrix, params: &PspParams) -> Result<PspOutput> {
    check_pair(mv, ma, params)?;
    let scale = 1.0 / (params.common_dim() as f64).sqrt();
    let pv = mv.matmul(&params.sim_proj_v)?;
    let pa = ma.matmul(&params.sim_proj_a)?;
    let omega_va = pv.matmul_t(&pa)?.scale(scale);
    let omega_av = pa.matmul_t(&pv)?.scale(scale);
    let w_hat_va = normalize_connections(&omega_va);
    let w_hat_av = normalize_connections(&omega_av);
    let eta_va = threshold_connections(&w_hat_va, params.tau1);
    let eta_av = threshold_connections(&w_hat_av, params.tau1);
    let qa = mv.matmul(&params.fuse_a)?;
    let qv = ma.matmul(&params.fuse_v)?;
    let sd_a = eta_av.matmul(&qa)?.try_add(ma)?;
    let sd_v = eta_va.matmul(&qv)?.try_add(mv)?;
    Ok(PspOutput {
        sd_v,
        sd_a,
        cache: PspCache { pv, pa, omega_va, omega_av, w_hat_va, w_hat_av, eta_va, eta_av, qa, qv },
    })
}

/// Gradient through [`row_l1_normalize`] given its input and output; rows
/// left untouched by the normaliser pass the gradient straight through.
fn row_normalize_backward(input: &RealMatrix, output: &RealMatrix, g: &RealMatrix) -> RealMatrix {
    let mut gx = g.clone();
    for r in 0..input.rows() {
        let sum: f64 = input.row(r).iter().sum();
        if sum > ROW_SUM_EPS {
            let dot: f64 = g.row(r).iter().zip(output.row(r)).map(|(a, b)| a * b).sum();
            gx.row_mut(r).iter_mut().for_each(|v| *v = (*v - dot) / sum);
        }
    }
    gx
}

fn prune_backward(omega: &RealMatrix, w_hat: &RealMatrix, eta: &RealMatrix, tau1: f64, g_eta: &RealMatrix) -> RealMatrix {
    let masked = w_hat.map(|v| if v > tau1 { v } else { 0.0 });
    let g_masked = row_normalize_backward(&masked, eta, g_eta);
    let g_w_hat = RealMatrix::from_fn(w_hat.rows(), w_hat.cols(), |r, c| if w_hat[(r, c)] > tau1 { g_masked[(r, c)] } else { 0.0 });
    let relu_omega = relu(omega);
    let g_relu = row_normalize_backward(&relu_omega, w_hat, &g_w_hat);
    relu_backward(omega, &g_relu)
}

/// Backward through [`fuse`]; returns `(dL/dM_v, dL/dM_a)`.
pub fn fuse_backward(
    mv: &RealMatrix,
    ma: &RealMatrix,
    params: &PspParams,
    cache: &PspCache,
    g_sd_v: &RealMatrix,
    g_sd_a: &RealMatrix,
    grad: &mut PspParams,
) -> (RealMatrix, RealMatrix) {
    let mut g_mv = g_sd_v.clone();
    let mut g_ma = g_sd_a.clone();

    // SD_a = η_av Q_a + M_a, Q_a = M_v fuse_a
    let g_eta_av = g_sd_a.matmul_t(&cache.qa).expect("psp grad");
    let g_qa = cache.eta_av.t_matmul(g_sd_a).expect("psp grad");
    g_mv.add_assign(&g_qa.matmul_t(&params.fuse_a).expect("psp grad"));
    grad.fuse_a.add_assign(&mv.t_matmul(&g_qa).expect("psp grad"));

    // SD_v = η_va Q_v + M_v, Q_v = M_a fuse_v
    let g_eta_va = g_sd_v.matmul_t(&cache.qv).expect("psp grad");
    let g_qv = cache.eta_va.t_matmul(g_sd_v).expect("psp grad");
    g_ma.add_assign(&g_qv.matmul_t(&params.fuse_v).expect("psp grad"));
    grad.fuse_v.add_assign(&ma.t_matmul(&g_qv).expect("psp grad"));

    let g_omega_va = prune_backward(&cache.omega_va, &cache.w_hat_va, &cache.eta_va, params.tau1, &g_eta_va);
    let g_omega_av = prune_backward(&cache.omega_av, &cache.w_hat_av, &cache.eta_av, params.tau1, &g_eta_av);
    // ω_av = ω_va^T, so both paths land on ω_va.
    let mut g_omega = g_omega_va;
    g_omega.add_assign(&g_omega_av.transpose());
    let scale = 1.0 / (params.common_dim() as f64).sqrt();
    let g_omega = g_omega.scale(scale);

    let g_pv = g_omega.matmul(&cache.pa).expect("psp grad");
    let g_pa = g_omega.t_matmul(&cache.pv).expect("psp grad");
    grad.sim_proj_v.add_assign(&mv.t_matmul(&g_pv).expect("psp grad"));
    grad.sim_proj_a.add_assign(&ma.t_matmul(&g_pa).expect("psp grad"));
    g_mv.add_assign(&g_pv.matmul_t(&params.sim_proj_v).expect("psp grad"));
    g_ma.add_assign(&g_pa.matmul_t(&params.sim_proj_a).expect("psp grad"));
    (g_mv, g_ma)
}

/// Signature of every pruning decision, used to detect finite-difference
/// probes that cross a threshold.
pub fn pruning_pattern(cache: &PspCache, tau1: f64) -> Vec<bool> {
    [&cache.omega_va, &cache.omega_av]
        .iter()
        .flat_map(|m| m.data().iter().map(|&v| v > 0.0))
        .chain([&cache.w_hat_va, &cache.w_hat_av].iter().flat_map(|m| m.data().iter().map(move |&v| v > tau1)))
        .collect()
}
