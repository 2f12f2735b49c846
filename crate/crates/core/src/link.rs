//! End-to-end physical link as seen by the semantic codecs.
//!
//! For one frame the receiver's view of the transmitted streams after
//! detection is
//!
//! ```text
//! x̂_k = ( Σ_j B_kj s_j x_j + W_k ) / s_k
//! ```
//!
//! where `s_k` is user k's power-normalisation factor, `B = G H` is the
//! effective channel after the detection filter `G`, and `W = G N` is the
//! filtered noise. `G` is the zero-forcing filter built from the pilot
//! estimate, from the true channel, or a plain antenna selection when no
//! channel state is used. Everything except `x` is fixed per frame, so the
//! map is differentiable in `x` and [`link_backward`] gives its exact adjoint.

use std::fmt;
use std::str::FromStr;

use crate::channel::{draw_channel, snr_to_noise_power, ChannelModel};
use crate::equalizer::{ls_estimate, make_pilot, zf_matrix, PilotConfig};
use crate::error::{Error, Result};
use crate::numeric::{hermitian, sample_cn, ComplexMatrix, SeededRng, C64};

/// How the receiver learns the channel before detection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Csi {
    /// Least-squares estimate from pilots, then zero forcing.
    Pilot,
    /// Zero forcing with the true channel matrix.
    Perfect,
    /// No estimation or equalisation; the faded signal goes straight to the decoder.
    None,
}

impl Csi {
    pub fn as_str(self) -> &'static str {
        match self {
            Csi::Pilot => "pilot",
            Csi::Perfect => "perfect",
            Csi::None => "none",
        }
    }
}

impl fmt::Display for Csi {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Csi {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pilot" => Ok(Csi::Pilot),
            "perfect" => Ok(Csi::Perfect),
            "none" => Ok(Csi::None),
            other => Err(Error::Config(format!("unknown csi mode '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinkSpec {
    pub model: ChannelModel,
    pub csi: Csi,
    pub snr_db: f64,
    /// Average per-symbol transmit power of every user.
    pub power: f64,
    pub pilot_len_per_user: usize,
    pub pilot: PilotConfig,
}

/// Fixed quantities of one frame's link.
#[derive(Clone, Debug, PartialEq)]
pub struct LinkDraw {
    /// `B = G H`, `K x K`.
    pub mix: ComplexMatrix,
    /// `W = G N`, `K x L`.
    pub noise: ComplexMatrix,
    /// Detection failed; the payload is dropped.
    pub erased: bool,
    /// `‖Ĥ − H‖²_F` for pilot estimation, zero otherwise.
    pub estimation_error: f64,
    pub power: f64,
}

impl LinkDraw {
    /// Noiseless identity link.
    pub fn ideal(users: usize, len: usize, power: f64) -> Self {
        Self {
            mix: ComplexMatrix::identity(users),
            noise: ComplexMatrix::zeros(users, len),
            erased: false,
            estimation_error: 0.0,
            power,
        }
    }
}

/// Draws the channel, pilots and noise for one frame of `users` streams of
/// `len` symbols into `antennas` receive antennas.
///
/// Random draws happen in the same order for every [`Csi`] mode, so two modes
/// fed the same generator see the same channel and noise.
pub fn draw_link(spec: &LinkSpec, antennas: usize, users: usize, len: usize, rng: &mut SeededRng) -> Result<LinkDraw> {
    let ch = draw_channel(spec.model, antennas, users, rng);
    let sigma2 = snr_to_noise_power(spec.power, spec.snr_db)?;
    let sched = make_pilot(users, users * spec.pilot_len_per_user, &spec.pilot)?;
    let pilot_amp = C64::new(spec.power.sqrt(), 0.0);
    let pilot_noise = sample_cn(rng, antennas, sched.len(), sigma2);
    let noise = sample_cn(rng, antennas, len, sigma2);

    let mut estimation_error = 0.0;
    let filter = match spec.csi {
        Csi::Perfect => zf_matrix(&ch.h),
        Csi::Pilot => {
            let y = ch.h.matmul(&sched.symbols.scale(pilot_amp))?.try_add(&pilot_noise)?;
            // Unit-modulus reference symbols; the amplitude is folded into the estimate.
            let mut est = ls_estimate(&y, &sched)?;
            est.h_best = est.h_best.scale(C64::new(1.0 / spec.power.sqrt(), 0.0));
            estimation_error = est.h_best.try_sub(&ch.h)?.frobenius_norm_sqr();
            zf_matrix(&est.h_best)
        }
        Csi::None => Ok(ComplexMatrix::from_fn(users, antennas, |r, c| {
            if r == c {
                C64::new(1.0, 0.0)
            } else {
                C64::new(0.0, 0.0)
            }
        })),
    };
    match filter {
        Ok(g) => Ok(LinkDraw {
            mix: g.matmul(&ch.h)?,
            noise: g.matmul(&noise)?,
            erased: false,
            estimation_error,
            power: spec.power,
        }),
        Err(Error::IllConditioned { .. }) => Ok(LinkDraw {
            mix: ComplexMatrix::zeros(users, users),
            noise: ComplexMatrix::zeros(users, len),
            erased: true,
            estimation_error,
            power: spec.power,
        }),
        Err(e) => Err(e),
    }
}

#[derive(Clone, Debug)]
pub struct LinkCache {
    x: ComplexMatrix,
    /// Detected signal before de-scaling.
    y: ComplexMatrix,
    scale: Vec<f64>,
    norms: Vec<f64>,
}

/// Applies the link to `K x L` user streams.
pub fn link_forward(x: &ComplexMatrix, draw: &LinkDraw) -> (ComplexMatrix, LinkCache) {
    let (k, len) = x.shape();
    assert_eq!(draw.mix.rows(), k, "link user count");
    let target = (draw.power * len as f64).sqrt();
    let norms: Vec<f64> = (0..k).map(|u| x.row(u).iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()).collect();
    let scale: Vec<f64> = norms.iter().map(|&n| if n > 0.0 { target / n } else { 1.0 }).collect();
    if draw.erased {
        let zeros = ComplexMatrix::zeros(k, len);
        return (zeros.clone(), LinkCache { x: x.clone(), y: zeros, scale, norms });
    }
    let mut tx = x.clone();
    for u in 0..k {
        let s = C64::new(scale[u], 0.0);
        tx.row_mut(u).iter_mut().for_each(|z| *z *= s);
    }
    let y = draw.mix.matmul(&tx).expect("link shape").try_add(&draw.noise).expect("link noise shape");
    let mut out = y.clone();
    for u in 0..k {
        let r = 1.0 / scale[u];
        out.row_mut(u).iter_mut().for_each(|z| *z *= r);
    }
    (out, LinkCache { x: x.clone(), y, scale, norms })
}

fn re_dot(a: &[C64], b: &[C64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| p.re * q.re + p.im * q.im).sum()
}

/// Gradient of the loss with respect to the user streams, given the gradient
/// with respect to the link output. Complex gradients pack `∂L/∂Re + i ∂L/∂Im`.
pub fn link_backward(draw: &LinkDraw, cache: &LinkCache, g_out: &ComplexMatrix) -> ComplexMatrix {
    let (k, len) = cache.x.shape();
    if draw.erased {
        return ComplexMatrix::zeros(k, len);
    }
    let target = (draw.power * len as f64).sqrt();
    let mut g_x = ComplexMatrix::zeros(k, len);
    let mut g_y = g_out.clone();
    let mut g_recip = vec![0.0; k];
    for u in 0..k {
        let r = 1.0 / cache.scale[u];
        g_recip[u] = re_dot(g_out.row(u), cache.y.row(u));
        g_y.row_mut(u).iter_mut().for_each(|z| *z *= r);
    }
    let g_tx = hermitian(&draw.mix).matmul(&g_y).expect("link shape");
    for u in 0..k {
        let xu = cache.x.row(u);
        let norm = cache.norms[u];
        let s = cache.scale[u];
        let g_scale = re_dot(g_tx.row(u), xu);
        let row = g_x.row_mut(u);
        for (dst, &g) in row.iter_mut().zip(g_tx.row(u)) {
            *dst = g * s;
        }
        if norm > 0.0 {
            // s = target/‖x‖ and 1/s = ‖x‖/target.
            let coeff = -g_scale * target / norm.powi(3) + g_recip[u] / (target * norm);
            for (dst, &xv) in row.iter_mut().zip(xu) {
                *dst += xv * coeff;
            }
        }
    }
    g_x
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::ChannelKind;

    fn spec(kind: ChannelKind, csi: Csi, snr_db: f64) -> LinkSpec {
        LinkSpec {
            model: ChannelModel::new(kind, 1.0).unwrap(),
            csi,
            snr_db,
            power: 1.0,
            pilot_len_per_user: 32,
            pilot: PilotConfig::default(),
        }
    }

    #[test]
    fn perfect_noiseless_link_is_identity() {
        let mut rng = SeededRng::new(1);
        let x = sample_cn(&mut rng, 2, 24, 3.0);
        for kind in ChannelKind::ALL {
            for csi in [Csi::Perfect, Csi::Pilot] {
                let draw = draw_link(&spec(kind, csi, f64::INFINITY), 2, 2, 24, &mut rng).unwrap();
                let (out, _) = link_forward(&x, &draw);
                assert!(out.max_abs_diff(&x) <= 1e-9, "{kind} {csi}");
            }
        }
    }

    #[test]
    fn modes_share_random_draws() {
        let a = draw_link(&spec(ChannelKind::Rayleigh, Csi::Perfect, 10.0), 2, 2, 8, &mut SeededRng::new(5)).unwrap();
        let b = draw_link(&spec(ChannelKind::Rayleigh, Csi::None, 10.0), 2, 2, 8, &mut SeededRng::new(5)).unwrap();
        // Perfect CSI equalises to identity; without CSI the mix is the raw channel.
        assert!(a.mix.max_abs_diff(&ComplexMatrix::identity(2)) < 1e-9);
        assert!(b.mix.max_abs_diff(&ComplexMatrix::identity(2)) > 1e-3);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = SeededRng::new(2);
        for csi in [Csi::Pilot, Csi::None] {
            let draw = draw_link(&spec(ChannelKind::Rician, csi, 5.0), 2, 2, 6, &mut rng).unwrap();
            let x = sample_cn(&mut rng, 2, 6, 1.5);
            let w = sample_cn(&mut rng, 2, 6, 1.0);
            let loss = |x: &ComplexMatrix| -> f64 { re_dot(link_forward(x, &draw).0.data(), w.data()) };
            let (_, cache) = link_forward(&x, &draw);
            let g = link_backward(&draw, &cache, &w);
            let h = 1e-6;
            for i in 0..12 {
                for dir in [C64::new(1.0, 0.0), C64::new(0.0, 1.0)] {
                    let mut xp = x.clone();
                    xp.data_mut()[i] += dir * h;
                    let mut xm = x.clone();
                    xm.data_mut()[i] -= dir * h;
                    let fd = (loss(&xp) - loss(&xm)) / (2.0 * h);
                    let an = if dir.re == 1.0 { g.data()[i].re } else { g.data()[i].im };
                    assert!((fd - an).abs() < 1e-6, "{csi} {i}: {fd} vs {an}");
                }
            }
        }
    }

    #[test]
    fn erased_frames_are_zero() {
        let draw = LinkDraw { erased: true, ..LinkDraw::ideal(1, 4, 1.0) };
        let x = ComplexMatrix::from_fn(1, 4, |_, j| C64::new(j as f64, 1.0));
        let (out, cache) = link_forward(&x, &draw);
        assert_eq!(out, ComplexMatrix::zeros(1, 4));
        assert_eq!(link_backward(&draw, &cache, &x), ComplexMatrix::zeros(1, 4));
    }

    #[test]
    fn receive_noise_power_tracks_snr() {
        let mut rng = SeededRng::new(3);
        let draw = draw_link(&spec(ChannelKind::Awgn, Csi::Perfect, 10.0), 1, 1, 100_000, &mut rng).unwrap();
        let p = draw.noise.mean_power();
        assert!((p - 0.1).abs() < 0.002, "{p}");
    }
}
