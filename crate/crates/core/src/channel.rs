//! Flat-fading channel draws and the receive equation `Y = H X + N`.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::numeric::{sample_cn, ComplexMatrix, SeededRng, C64};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ChannelKind {
    Awgn,
    Rayleigh,
    Rician,
}

impl ChannelKind {
    pub const ALL: [ChannelKind; 3] = [ChannelKind::Awgn, ChannelKind::Rayleigh, ChannelKind::Rician];

    pub fn as_str(self) -> &'static str {
        match self {
            ChannelKind::Awgn => "awgn",
            ChannelKind::Rayleigh => "rayleigh",
            ChannelKind::Rician => "rician",
        }
    }
}

impl fmt::Display for ChannelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ChannelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "awgn" => Ok(ChannelKind::Awgn),
            "rayleigh" => Ok(ChannelKind::Rayleigh),
            "rician" | "rice" => Ok(ChannelKind::Rician),
            other => Err(Error::Config(format!("unknown channel model '{other}'"))),
        }
    }
}

pub const DEFAULT_RICIAN_K: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChannelModel {
    pub kind: ChannelKind,
    /// Line-of-sight to scatter power ratio; only read for [`ChannelKind::Rician`].
    pub rician_k: f64,
}

impl ChannelModel {
    pub fn new(kind: ChannelKind, rician_k: f64) -> Result<Self> {
        if !(rician_k >= 0.0) {
            return Err(Error::Config(format!("rician_k must be >= 0, got {rician_k}")));
        }
        Ok(Self { kind, rician_k })
    }

    pub fn awgn() -> Self {
        Self { kind: ChannelKind::Awgn, rician_k: DEFAULT_RICIAN_K }
    }

    pub fn rayleigh() -> Self {
        Self { kind: ChannelKind::Rayleigh, rician_k: DEFAULT_RICIAN_K }
    }

    pub fn rician(k: f64) -> Self {
        Self { kind: ChannelKind::Rician, rician_k: k }
    }
}

/// One slow-fading draw, held constant over a whole frame.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelRealization {
    /// `M` receive antennas by `K` transmitters.
    pub h: ComplexMatrix,
    pub model: ChannelModel,
}

/// Power-normalised transmit block, `K` users by `L_c` channel uses.
#[derive(Clone, Debug, PartialEq)]
pub struct TransmitFrame {
    pub x: ComplexMatrix,
    pub power: f64,
    /// Factor applied to the raw symbols; the receiver divides by it.
    pub scale: f64,
}

pub fn snr_to_noise_power(power: f64, snr_db: f64) -> Result<f64> {
    if !(power > 0.0) {
        return Err(Error::NonPositivePower(power));
    }
    Ok(power / 10f64.powf(snr_db / 10.0))
}

pub fn normalize_power(x: &ComplexMatrix, power: f64) -> Result<TransmitFrame> {
    if !(power > 0.0) {
        return Err(Error::NonPositivePower(power));
    }
    let current = x.mean_power();
    if current == 0.0 {
        return Err(Error::ZeroFrame);
    }
    let scale = (power / current).sqrt();
    Ok(TransmitFrame { x: x.scale(C64::new(scale, 0.0)), power, scale })
}

pub fn draw_channel(model: ChannelModel, m: usize, k: usize, rng: &mut SeededRng) -> ChannelRealization {
    assert!(m >= 1 && k >= 1, "channel needs at least one antenna per side");
    let h = match model.kind {
        ChannelKind::Awgn => ComplexMatrix::from_fn(m, k, |r, c| if r == c { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) }),
        ChannelKind::Rayleigh => sample_cn(rng, m, k, 1.0),
        ChannelKind::Rician => {
            let kf = model.rician_k;
            let los = (kf / (kf + 1.0)).sqrt();
            let nlos = (1.0 / (kf + 1.0)).sqrt();
            sample_cn(rng, m, k, 1.0).map(|z| C64::new(los, 0.0) + z * nlos)
        }
    };
    ChannelRealization { h, model }
}

/// `Y = H X + N`, also returning the noise draw.
pub fn transmit_with_noise(
    frame: &TransmitFrame,
    ch: &ChannelRealization,
    snr_db: f64,
    rng: &mut SeededRng,
) -> Result<(ComplexMatrix, ComplexMatrix)> {
    if ch.h.cols() != frame.x.rows() {
        return Err(Error::DimensionMismatch(format!(
            "channel has {} inputs, frame has {} users",
            ch.h.cols(),
            frame.x.rows()
        )));
    }
    let variance = snr_to_noise_power(frame.power, snr_db)?;
    let noise = sample_cn(rng, ch.h.rows(), frame.x.cols(), variance);
    let y = ch.h.matmul(&frame.x)?.try_add(&noise)?;
    Ok((y, noise))
}

pub fn transmit(frame: &TransmitFrame, ch: &ChannelRealization, snr_db: f64, rng: &mut SeededRng) -> Result<ComplexMatrix> {
    transmit_with_noise(frame, ch, snr_db, rng).map(|(y, _)| y)
}
