//! Trainable building blocks with hand-written backward passes.

use crate::numeric::{sample_normal, RealMatrix, SeededRng};

/// Walks every trainable tensor in a fixed order.
pub trait Parameters {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64]));

    fn param_count(&mut self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, _, v| n += v.len());
        n
    }

    fn flatten(&mut self) -> Vec<f64> {
        let mut out = Vec::new();
        self.visit("", &mut |_, _, v| out.extend_from_slice(v));
        out
    }

    fn fill_zero(&mut self) {
        self.visit("", &mut |_, _, v| v.iter_mut().for_each(|x| *x = 0.0));
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Affine map `y = x W + b` applied to every row of `x`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    /// `inputs x outputs`
    pub w: RealMatrix,
    pub b: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self { w: RealMatrix::zeros(inputs, outputs), b: vec![0.0; outputs] }
    }

    /// Glorot-scaled normal weights, zero bias.
    pub fn init(inputs: usize, outputs: usize, rng: &mut SeededRng) -> Self {
        let sd = (2.0 / (inputs + outputs) as f64).sqrt();
        Self { w: sample_normal(rng, inputs, outputs, sd), b: vec![0.0; outputs] }
    }

    pub fn identity(n: usize) -> Self {
        Self { w: RealMatrix::identity(n), b: vec![0.0; n] }
    }

    pub fn inputs(&self) -> usize {
        self.w.rows()
    }

    pub fn outputs(&self) -> usize {
        self.w.cols()
    }

    pub fn forward(&self, x: &RealMatrix) -> RealMatrix {
        let mut y = x.matmul(&self.w).expect("dense input width");
        for r in 0..y.rows() {
            y.row_mut(r).iter_mut().zip(&self.b).for_each(|(v, b)| *v += b);
        }
        y
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    pub fn backward(&self, x: &RealMatrix, gy: &RealMatrix, grad: &mut Dense) -> RealMatrix {
        grad.w.add_assign(&x.t_matmul(gy).expect("dense grad shape"));
        for r in 0..gy.rows() {
            grad.b.iter_mut().zip(gy.row(r)).for_each(|(g, v)| *g += v);
        }
        gy.matmul_t(&self.w).expect("dense grad shape")
    }
}

impl Parameters for Dense {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        let shape = [self.w.rows(), self.w.cols()];
        f(&join(prefix, "w"), &shape, self.w.data_mut());
        let n = self.b.len();
        f(&join(prefix, "b"), &[n], &mut self.b);
    }
}

pub fn relu(x: &RealMatrix) -> RealMatrix {
    x.map(|v| v.max(0.0))
}

/// Which pre-activations are positive.
pub fn relu_mask(pre: &RealMatrix) -> impl Iterator<Item = bool> + '_ {
    pre.data().iter().map(|&v| v > 0.0)
}

/// Gradient through ReLU given the pre-activation.
pub fn relu_backward(pre: &RealMatrix, gy: &RealMatrix) -> RealMatrix {
    RealMatrix::from_fn(pre.rows(), pre.cols(), |r, c| if pre[(r, c)] > 0.0 { gy[(r, c)] } else { 0.0 })
}

/// Gradient through a row-wise softmax given its output.
pub fn softmax_backward(out: &RealMatrix, gy: &RealMatrix) -> RealMatrix {
    let mut gx = RealMatrix::zeros(out.rows(), out.cols());
    for r in 0..out.rows() {
        let p = out.row(r);
        let g = gy.row(r);
        let dot: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
        gx.row_mut(r).iter_mut().zip(p.iter().zip(g)).for_each(|(d, (pi, gi))| *d = pi * (gi - dot));
    }
    gx
}
