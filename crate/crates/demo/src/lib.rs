//! Browser demo: pilot estimation error, received constellations and PSP
//! connection maps. Each export is a thin wrapper over a plain function so the
//! logic also builds and tests natively.

use semcom::channel::{ChannelKind, ChannelModel};
use semcom::equalizer::PilotConfig;
use semcom::harness::pilot_error_table;
use semcom::link::{draw_link, link_forward, Csi, LinkSpec};
use semcom::numeric::{ComplexMatrix, RealMatrix, SeededRng};
use semcom::psp::{fuse, PspParams};
use semcom::Error;
use wasm_bindgen::prelude::*;

pub const USERS: usize = 2;
pub const ANTENNAS: usize = 2;
pub const PILOT_LEN_PER_USER: usize = 32;

fn channel_model(kind: &str, rician_k: f64) -> Result<ChannelModel, Error> {
    ChannelModel::new(kind.parse::<ChannelKind>()?, rician_k)
}

/// Mean `‖Ĥ − H‖²_F` at each SNR in `snrs`.
pub fn pilot_error_curve(kind: &str, rician_k: f64, snrs: &[f64], trials: usize, seed: u64) -> Result<Vec<f64>, Error> {
    let model = channel_model(kind, rician_k)?;
    let rows = pilot_error_table(model, ANTENNAS, USERS, PILOT_LEN_PER_USER, snrs, trials.max(1), seed)?;
    Ok(rows.into_iter().map(|r| r.mean_error).collect())
}

/// QPSK symbols for `USERS` streams, the same for every call with `seed`.
fn qpsk(len: usize, rng: &mut SeededRng) -> ComplexMatrix {
    let a = std::f64::consts::FRAC_1_SQRT_2;
    ComplexMatrix::from_fn(USERS, len, |_, _| {
        let re = if rng.uniform() < 0.5 { -a } else { a };
        let im = if rng.uniform() < 0.5 { -a } else { a };
        num_complex::Complex64::new(re, im)
    })
}

/// Detected QPSK symbols after one frame, flattened as `[re, im, user, ...]`
/// per symbol. An erased frame returns all zeros.
pub fn constellation(kind: &str, rician_k: f64, csi: &str, snr_db: f64, symbols: usize, seed: u64) -> Result<Vec<f64>, Error> {
    let spec = LinkSpec {
        model: channel_model(kind, rician_k)?,
        csi: csi.parse::<Csi>()?,
        snr_db,
        power: 1.0,
        pilot_len_per_user: PILOT_LEN_PER_USER,
        pilot: PilotConfig::default(),
    };
    let rng = SeededRng::new(seed);
    let x = qpsk(symbols.max(1), &mut rng.derive("payload"));
    let draw = draw_link(&spec, ANTENNAS, USERS, x.cols(), &mut rng.derive("link"))?;
    let (y, _) = link_forward(&x, &draw);
    let mut out = Vec::with_capacity(3 * USERS * x.cols());
    for u in 0..USERS {
        for z in y.row(u) {
            out.extend([z.re, z.im, u as f64]);
        }
    }
    Ok(out)
}

pub const PSP_SEGMENTS: usize = 10;
const PSP_WIDTH: usize = 16;

/// Thresholded visual-to-audio connections `η_va` (row-major,
/// `PSP_SEGMENTS x PSP_SEGMENTS`) for a clip whose segments 3..7 carry a
/// shared event in both modalities.
pub fn psp_connections(tau1: f64, noise: f64, seed: u64) -> Result<Vec<f64>, Error> {
    if !(0.0..1.0).contains(&tau1) {
        return Err(Error::Config(format!("tau1 must lie in [0, 1), got {tau1}")));
    }
    let mut rng = SeededRng::new(seed);
    let mut params = PspParams::init(PSP_WIDTH, PSP_WIDTH / 2, 8, 5, tau1, &mut rng);
    // Shared projections make matching segments score positively.
    params.sim_proj_a = params.sim_proj_v.clone();
    let event: Vec<f64> = (0..PSP_WIDTH).map(|_| rng.standard_normal()).collect();
    let features = |rng: &mut SeededRng| {
        RealMatrix::from_fn(PSP_SEGMENTS, PSP_WIDTH, |t, j| {
            let base = if (3..7).contains(&t) { event[j] } else { 0.0 };
            base + noise * rng.standard_normal()
        })
    };
    let mv = features(&mut rng);
    let ma = features(&mut rng);
    Ok(fuse(&mv, &ma, &params)?.cache.eta_va.into_data())
}

fn js(e: Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen(js_name = pilotErrorCurve)]
pub fn pilot_error_curve_js(kind: &str, rician_k: f64, snrs: &[f64], trials: usize, seed: u32) -> Result<Vec<f64>, JsError> {
    pilot_error_curve(kind, rician_k, snrs, trials, seed.into()).map_err(js)
}

#[wasm_bindgen(js_name = constellation)]
pub fn constellation_js(kind: &str, rician_k: f64, csi: &str, snr_db: f64, symbols: usize, seed: u32) -> Result<Vec<f64>, JsError> {
    constellation(kind, rician_k, csi, snr_db, symbols, seed.into()).map_err(js)
}

#[wasm_bindgen(js_name = pspConnections)]
pub fn psp_connections_js(tau1: f64, noise: f64, seed: u32) -> Result<Vec<f64>, JsError> {
    psp_connections(tau1, noise, seed.into()).map_err(js)
}
