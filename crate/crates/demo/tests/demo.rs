use semcom_demo::{constellation, pilot_error_curve, psp_connections, PSP_SEGMENTS, USERS};

#[test]
fn pilot_error_shrinks_with_snr() {
    let curve = pilot_error_curve("rician", 2.0, &[0.0, 10.0, 20.0, 30.0], 300, 1).unwrap();
    assert_eq!(curve.len(), 4);
    assert!(curve.windows(2).all(|w| w[1] < w[0]), "{curve:?}");
    assert!(pilot_error_curve("fog", 1.0, &[0.0], 10, 1).is_err());
}

#[test]
fn noiseless_constellation_is_exact_with_csi() {
    for csi in ["perfect", "pilot"] {
        let pts = constellation("rayleigh", 1.0, csi, 200.0, 16, 3).unwrap();
        assert_eq!(pts.len(), 3 * USERS * 16);
        let a = std::f64::consts::FRAC_1_SQRT_2;
        for p in pts.chunks(3) {
            assert!((p[0].abs() - a).abs() < 1e-6 && (p[1].abs() - a).abs() < 1e-6, "{csi}: {p:?}");
        }
    }
}

#[test]
fn constellation_without_csi_is_scrambled() {
    let a = std::f64::consts::FRAC_1_SQRT_2;
    let pts = constellation("rayleigh", 1.0, "none", 200.0, 16, 3).unwrap();
    let off = pts.chunks(3).filter(|p| (p[0].abs() - a).abs() > 1e-3).count();
    assert!(off > 0);
    assert!(constellation("awgn", 1.0, "psychic", 10.0, 4, 0).is_err());
}

#[test]
fn psp_rows_are_distributions_and_threshold_prunes() {
    let loose = psp_connections(0.0, 0.3, 5).unwrap();
    let tight = psp_connections(0.2, 0.3, 5).unwrap();
    assert_eq!(loose.len(), PSP_SEGMENTS * PSP_SEGMENTS);
    for eta in [&loose, &tight] {
        assert!(eta.iter().all(|&v| v >= 0.0));
        for row in eta.chunks(PSP_SEGMENTS) {
            let s: f64 = row.iter().sum();
            assert!(s.abs() < 1e-12 || (s - 1.0).abs() < 1e-12);
        }
    }
    let kept = |eta: &[f64]| eta.iter().filter(|&&v| v > 0.0).count();
    assert!(kept(&tight) <= kept(&loose));
    // Event segments connect to each other.
    assert!(loose[4 * PSP_SEGMENTS + 5] > 0.0);
    assert!(psp_connections(1.0, 0.3, 5).is_err());
}
