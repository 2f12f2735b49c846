//! Real <-> complex feature mapping.
//!
//! A real vector `x` of even length `d` is split into halves `r = x[..d/2]`
//! and `s = x[d/2..]`, which become the real and imaginary parts of a complex
//! vector of length `d/2`. The polar view `λ·exp(iθ)` with `λ = hypot(r, s)`
//! and `θ = atan2(s, r)` is available through [`PolarSignal`].

use crate::error::{Error, Result};
use crate::numeric::C64;

/// Magnitude/phase view of a complex feature vector.
#[derive(Clone, Debug, PartialEq)]
pub struct PolarSignal {
    pub magnitude: Vec<f64>,
    pub phase: Vec<f64>,
}

impl PolarSignal {
    pub fn from_complex(z: &[C64]) -> Self {
        let magnitude = z.iter().map(|v| v.re.hypot(v.im)).collect();
        let phase = z.iter().map(|v| phase_of(*v)).collect();
        Self { magnitude, phase }
    }

    pub fn to_complex(&self) -> Vec<C64> {
        self.magnitude.iter().zip(&self.phase).map(|(&m, &p)| C64::from_polar(m, p)).collect()
    }

    pub fn len(&self) -> usize {
        self.magnitude.len()
    }

    pub fn is_empty(&self) -> bool {
        self.magnitude.is_empty()
    }
}

/// atan2 phase in (-π, π]; zero magnitude maps to phase 0, and the
/// negative-zero imaginary part is folded onto +π.
pub fn phase_of(z: C64) -> f64 {
    if z.re == 0.0 && z.im == 0.0 {
        return 0.0;
    }
    let p = z.im.atan2(z.re);
    if p <= -std::f64::consts::PI {
        std::f64::consts::PI
    } else {
        p
    }
}

pub fn euler_forward(x: &[f64]) -> Result<Vec<C64>> {
    let d = x.len();
    if d == 0 || d % 2 != 0 {
        return Err(Error::OddLength(d));
    }
    let (r, s) = x.split_at(d / 2);
    Ok(r.iter().zip(s).map(|(&re, &im)| C64::new(re, im)).collect())
}

pub fn euler_forward_polar(x: &[f64]) -> Result<PolarSignal> {
    euler_forward(x).map(|z| PolarSignal::from_complex(&z))
}

/// `[λ·cos θ ; λ·sin θ]`, i.e. the real parts followed by the imaginary parts.
pub fn euler_inverse(z: &[C64]) -> Vec<f64> {
    z.iter().map(|v| v.re).chain(z.iter().map(|v| v.im)).collect()
}
