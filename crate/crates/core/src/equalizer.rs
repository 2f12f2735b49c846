//! Pilot generation, per-timestep least-squares channel estimation and
//! zero-forcing detection.
//!
//! Pilots are time-orthogonal: the pilot block is cut into `K` contiguous
//! slots and only one user transmits in each timestep, so every timestep's LS
//! problem is scalar per receive antenna. The estimate at timestep `t` takes
//! the newest column estimate available for every user; it is scored by its
//! squared residual over the whole pilot block and the lowest-scoring
//! timestep wins.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::numeric::{hermitian, solve_hermitian_system, ComplexMatrix, C64};

pub const DEFAULT_PILOT_LEN_PER_USER: usize = 32;

/// Pilot symbols with energy below this are rejected by [`ls_estimate`].
const MIN_PILOT_ENERGY: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct PilotConfig {
    /// Sinusoid frequency (cycles per pilot block) for each user. When empty
    /// user `k` uses `k + 1`.
    pub frequencies: Vec<i64>,
}

impl Default for PilotConfig {
    fn default() -> Self {
        Self { frequencies: Vec::new() }
    }
}

impl PilotConfig {
    fn frequency(&self, user: usize) -> i64 {
        self.frequencies.get(user).copied().unwrap_or(user as i64 + 1)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PilotSchedule {
    /// `K x L_p`; exactly one nonzero entry per column.
    pub symbols: ComplexMatrix,
    /// Active user for each timestep.
    pub slot_map: Vec<usize>,
}

impl PilotSchedule {
    pub fn users(&self) -> usize {
        self.symbols.rows()
    }

    pub fn len(&self) -> usize {
        self.symbols.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.cols() == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChannelEstimate {
    pub h_best: ComplexMatrix,
    /// Residual of each timestep's estimate over the pilot block; infinite
    /// while some user has not been heard yet.
    pub per_t_error: Vec<f64>,
    pub t_min: usize,
}

pub fn make_pilot(users: usize, len: usize, config: &PilotConfig) -> Result<PilotSchedule> {
    if users == 0 || len < 2 * users {
        return Err(Error::TooShort { len, users, min: 2 * users.max(1) });
    }
    let slot_map: Vec<usize> = (0..len).map(|t| t * users / len).collect();
    let mut symbols = ComplexMatrix::zeros(users, len);
    for (t, &k) in slot_map.iter().enumerate() {
        let f = config.frequency(k) as f64;
        symbols[(k, t)] = C64::from_polar(1.0, 2.0 * PI * f * t as f64 / len as f64);
    }
    Ok(PilotSchedule { symbols, slot_map })
}

/// Smallest index wins ties.
fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v < values[best] {
            best = i;
        }
    }
    best
}

pub fn ls_estimate(y_pilot: &ComplexMatrix, sched: &PilotSchedule) -> Result<ChannelEstimate> {
    let (m, len) = y_pilot.shape();
    let k = sched.users();
    if len != sched.len() {
        return Err(Error::DimensionMismatch(format!(
            "{len} received pilot samples for a {}-step schedule",
            sched.len()
        )));
    }
    let mut latest: Vec<Option<Vec<C64>>> = vec![None; k];
    let mut candidates: Vec<Option<ComplexMatrix>> = Vec::with_capacity(len);
    for (t, &user) in sched.slot_map.iter().enumerate() {
        let x = sched.symbols[(user, t)];
        let energy = x.norm_sqr();
        if energy < MIN_PILOT_ENERGY {
            return Err(Error::ZeroPilotSymbol(t));
        }
        let gain = x.conj() / energy;
        latest[user] = Some((0..m).map(|r| y_pilot[(r, t)] * gain).collect());
        let complete = latest.iter().all(Option::is_some);
        candidates.push(complete.then(|| {
            ComplexMatrix::from_fn(m, k, |r, c| latest[c].as_ref().expect("complete")[r])
        }));
    }

    let per_t_error: Vec<f64> = candidates
        .iter()
        .map(|cand| match cand {
            Some(h) => pilot_residual(h, y_pilot, sched),
            None => f64::INFINITY,
        })
        .collect();
    let t_min = argmin(&per_t_error);
    let h_best = candidates[t_min]
        .clone()
        .ok_or_else(|| Error::DimensionMismatch("pilot schedule never completes".into()))?;
    Ok(ChannelEstimate { h_best, per_t_error, t_min })
}

/// `Σ_s ‖Ĥ x_s − y_s‖²` over the pilot block.
fn pilot_residual(h: &ComplexMatrix, y: &ComplexMatrix, sched: &PilotSchedule) -> f64 {
    let mut total = 0.0;
    for (s, &user) in sched.slot_map.iter().enumerate() {
        let x = sched.symbols[(user, s)];
        for r in 0..y.rows() {
            total += (h[(r, user)] * x - y[(r, s)]).norm_sqr();
        }
    }
    total
}

/// Zero-forcing filter `(Ĥ^H Ĥ)^{-1} Ĥ^H`, shape `K x M`.
pub fn zf_matrix(h: &ComplexMatrix) -> Result<ComplexMatrix> {
    if h.rows() < h.cols() {
        return Err(Error::DimensionMismatch(format!(
            "zero forcing needs M >= K, got {}x{}",
            h.rows(),
            h.cols()
        )));
    }
    let hh = hermitian(h);
    solve_hermitian_system(&hh.matmul(h)?, &hh)
}

/// `X̂ = (Ĥ^H Ĥ)^{-1} Ĥ^H Y` for a known or estimated channel matrix.
pub fn zf_detect_with(y: &ComplexMatrix, h: &ComplexMatrix) -> Result<ComplexMatrix> {
    if h.rows() < h.cols() {
        return Err(Error::DimensionMismatch(format!(
            "zero forcing needs M >= K, got {}x{}",
            h.rows(),
            h.cols()
        )));
    }
    let hh = hermitian(h);
    solve_hermitian_system(&hh.matmul(h)?, &hh.matmul(y)?)
}

pub fn zf_detect(y: &ComplexMatrix, est: &ChannelEstimate) -> Result<ComplexMatrix> {
    zf_detect_with(y, &est.h_best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{draw_channel, normalize_power, transmit_with_noise, ChannelModel, ChannelRealization};
    use crate::numeric::{sample_cn, SeededRng};

    #[test]
    fn quarter_period_pilot() {
        let p = make_pilot(1, 4, &PilotConfig::default()).unwrap();
        let want = [C64::new(1.0, 0.0), C64::new(0.0, 1.0), C64::new(-1.0, 0.0), C64::new(0.0, -1.0)];
        for (got, w) in p.symbols.row(0).iter().zip(want) {
            assert!((got - w).norm() < 1e-15);
        }
    }

    #[test]
    fn two_user_slots() {
        let p = make_pilot(2, 8, &PilotConfig::default()).unwrap();
        assert_eq!(p.slot_map, vec![0, 0, 0, 0, 1, 1, 1, 1]);
        for t in 0..8 {
            let idle = 1 - p.slot_map[t];
            assert_eq!(p.symbols[(idle, t)], C64::new(0.0, 0.0));
            assert!((p.symbols[(p.slot_map[t], t)].norm() - 1.0).abs() <= 1e-12);
        }
        assert!(matches!(make_pilot(2, 3, &PilotConfig::default()), Err(Error::TooShort { .. })));
    }

    #[test]
    fn active_modulus_scan() {
        for k in 1..=3 {
            for len in [2 * k, 2 * k + 1, 17, 64] {
                let p = make_pilot(k, len, &PilotConfig { frequencies: vec![3, -2, 5] }).unwrap();
                for t in 0..len {
                    let active: Vec<_> = (0..k).filter(|&u| p.symbols[(u, t)].norm() > 0.0).collect();
                    assert_eq!(active, vec![p.slot_map[t]]);
                    assert!((p.symbols[(active[0], t)].norm() - 1.0).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn scalar_ls() {
        let sched = PilotSchedule {
            symbols: ComplexMatrix::from_rows(&[vec![C64::new(1.0, 0.0)]]),
            slot_map: vec![0],
        };
        let y = ComplexMatrix::from_rows(&[vec![C64::new(0.5, 0.5)]]);
        let est = ls_estimate(&y, &sched).unwrap();
        assert!((est.h_best[(0, 0)] - C64::new(0.5, 0.5)).norm() < 1e-15);
        assert!(est.per_t_error[0] < 1e-20);
    }

    #[test]
    fn zero_pilot_symbol_rejected() {
        let sched = PilotSchedule { symbols: ComplexMatrix::zeros(1, 2), slot_map: vec![0, 0] };
        let y = ComplexMatrix::zeros(1, 2);
        assert!(matches!(ls_estimate(&y, &sched), Err(Error::ZeroPilotSymbol(0))));
    }

    #[test]
    fn ties_pick_first_timestep() {
        let sched = make_pilot(1, 6, &PilotConfig::default()).unwrap();
        let y = ComplexMatrix::zeros(1, 6);
        let est = ls_estimate(&y, &sched).unwrap();
        assert!(est.per_t_error.iter().all(|&e| e == 0.0));
        assert_eq!(est.t_min, 0);
    }

    #[test]
    fn noiseless_mimo_estimate_is_exact() {
        let mut rng = SeededRng::new(21);
        let sched = make_pilot(2, 64, &PilotConfig::default()).unwrap();
        for _ in 0..20 {
            let ch = draw_channel(ChannelModel::rayleigh(), 2, 2, &mut rng);
            let y = ch.h.matmul(&sched.symbols).unwrap();
            let est = ls_estimate(&y, &sched).unwrap();
            assert!(est.h_best.max_abs_diff(&ch.h) <= 1e-12);
            // Candidates before user 1 is heard are excluded.
            assert!(est.per_t_error[..32].iter().all(|e| e.is_infinite()));
        }
    }

    #[test]
    fn zf_identity_channel() {
        let mut rng = SeededRng::new(2);
        let y = sample_cn(&mut rng, 2, 10, 1.0);
        let x = zf_detect_with(&y, &ComplexMatrix::identity(2)).unwrap();
        assert!(x.max_abs_diff(&y) < 1e-15);
    }

    #[test]
    fn zf_noiseless_reconstruction() {
        let mut rng = SeededRng::new(3);
        for _ in 0..50 {
            let ch = draw_channel(ChannelModel::rayleigh(), 2, 2, &mut rng);
            let x = sample_cn(&mut rng, 2, 12, 1.0);
            let y = ch.h.matmul(&x).unwrap();
            let xh = zf_detect_with(&y, &ch.h).unwrap();
            let tol = 1e-10 * (1.0 + x.frobenius_norm());
            assert!(xh.max_abs_diff(&x) <= tol, "{}", xh.max_abs_diff(&x));
        }
    }

    #[test]
    fn zf_residual_is_filtered_noise() {
        let mut rng = SeededRng::new(4);
        let ch = draw_channel(ChannelModel::rayleigh(), 2, 2, &mut rng);
        let frame = normalize_power(&sample_cn(&mut rng, 2, 20, 1.0), 1.0).unwrap();
        let (y, n) = transmit_with_noise(&frame, &ch, 5.0, &mut rng).unwrap();
        let xh = zf_detect_with(&y, &ch.h).unwrap();
        let direct = zf_matrix(&ch.h).unwrap().matmul(&n).unwrap();
        assert!(xh.try_sub(&frame.x).unwrap().max_abs_diff(&direct) <= 1e-10);
    }

    #[test]
    fn zf_rejects_wide_and_singular() {
        let wide = ComplexMatrix::zeros(1, 2);
        assert!(matches!(zf_detect_with(&ComplexMatrix::zeros(1, 3), &wide), Err(Error::DimensionMismatch(_))));
        let one = C64::new(1.0, 0.0);
        let rank1 = ComplexMatrix::from_rows(&[vec![one, one], vec![one, one]]);
        assert!(matches!(zf_detect_with(&ComplexMatrix::zeros(2, 3), &rank1), Err(Error::IllConditioned { .. })));
    }

    #[test]
    fn full_chain_noiseless() {
        let mut rng = SeededRng::new(8);
        let sched = make_pilot(2, 64, &PilotConfig::default()).unwrap();
        for model in [ChannelModel::awgn(), ChannelModel::rayleigh(), ChannelModel::rician(2.0)] {
            let ch: ChannelRealization = draw_channel(model, 2, 2, &mut rng);
            let pilot = normalize_power(&sched.symbols, 1.0).unwrap();
            // Pilots already have mean power 1/K; keep them at unit modulus.
            let pilot = crate::channel::TransmitFrame { x: sched.symbols.clone(), ..pilot };
            let (yp, _) = transmit_with_noise(&pilot, &ch, f64::INFINITY, &mut rng).unwrap();
            let est = ls_estimate(&yp, &sched).unwrap();
            let payload = normalize_power(&sample_cn(&mut rng, 2, 40, 1.0), 1.0).unwrap();
            let (y, _) = transmit_with_noise(&payload, &ch, f64::INFINITY, &mut rng).unwrap();
            let xh = zf_detect(&y, &est).unwrap();
            assert!(xh.max_abs_diff(&payload.x) <= 1e-9);
        }
    }
}
