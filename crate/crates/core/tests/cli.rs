use std::fs;
use std::process::{Command, Output};

use semcom::harness::{read_csv, RunManifest};

fn semcom(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_semcom")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const TINY: [&str; 6] = ["--set", "samples=24", "--set", "epochs=1", "--set", "batch_size=8"];

#[test]
fn simulate_writes_csv_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("m.csv");
    let man = dir.path().join("run.manifest");
    let mut args = vec!["simulate", "-q", "--channel", "awgn,rayleigh", "--snr-list", "0,30", "--seeds", "1,2"];
    args.extend(TINY);
    args.extend(["--out", csv.to_str().unwrap(), "--manifest", man.to_str().unwrap()]);
    let o = semcom(&args);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = read_csv(fs::File::open(&csv).unwrap()).unwrap();
    assert_eq!(rows.len(), 2 * 2 * 2);
    let m = RunManifest::parse(&fs::read_to_string(&man).unwrap()).unwrap();
    assert_eq!(m.rows, 8);
    assert!(fs::read_to_string(dir.path().join("run.manifest.timing")).unwrap().contains("wall_clock_start="));

    // Replaying the manifest reproduces the CSV byte for byte.
    let again = dir.path().join("again.csv");
    let o = semcom(&["simulate", "-q", "--from-manifest", man.to_str().unwrap(), "--out", again.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(fs::read(&csv).unwrap(), fs::read(&again).unwrap());
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.conf");
    fs::write(&cfg, "# tiny run\nchannel = rician\nrician_k = 3\nsnr_list = 0, 3, 6\nsamples = 24\nepochs = 1\n").unwrap();
    let csv = dir.path().join("m.csv");
    let o = semcom(&["simulate", "-q", "--config", cfg.to_str().unwrap(), "--snr-list", "30", "--out", csv.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = read_csv(fs::File::open(&csv).unwrap()).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].snr_db, 30.0);
    assert_eq!(rows[0].channel.as_str(), "rician");
}

#[test]
fn config_errors_exit_2() {
    assert_eq!(semcom(&["simulate", "--snr-list", "loud"]).status.code(), Some(2));
    assert_eq!(semcom(&["simulate", "--set", "nonsense=1"]).status.code(), Some(2));
    assert_eq!(semcom(&["simulate", "--mode", "smell"]).status.code(), Some(2));
    assert_eq!(semcom(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn io_errors_exit_4() {
    let mut args = vec!["simulate", "-q", "--snr-list", "0", "--channel", "awgn"];
    args.extend(TINY);
    args.extend(["--out", "/nonexistent/dir/m.csv"]);
    assert_eq!(semcom(&args).status.code(), Some(4));
    assert_eq!(semcom(&["simulate", "--config", "/nonexistent/exp.conf"]).status.code(), Some(4));
}

#[test]
fn gradcheck_passes() {
    let o = semcom(&["gradcheck"]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    assert!(out.contains("PASS"));
    for group in ["agva", "audio_cell", "audio_dec", "audio_enc", "psp", "visual_dec", "visual_enc"] {
        assert!(out.contains(group), "{group} missing from\n{out}");
    }
}

#[test]
fn pilot_demo_table_falls_with_snr() {
    let o = semcom(&["pilot-demo", "--channel", "rayleigh", "--snr-list", "0,30", "--trials", "300"]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    let errs: Vec<f64> = out.lines().skip(1).map(|l| l.split(',').nth(2).unwrap().parse().unwrap()).collect();
    assert_eq!(errs.len(), 2);
    assert!(errs[0] > 100.0 * errs[1], "{out}");
}

#[test]
fn train_exports_dataset_and_checkpoint_and_reimports() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.pgsc");
    let ckpt = dir.path().join("model.pgsc");
    let mut args = vec!["train", "-q", "--channel", "awgn", "--snr-list", "0,30"];
    args.extend(TINY);
    args.extend(["--export-dataset", data.to_str().unwrap(), "--checkpoint", ckpt.to_str().unwrap()]);
    let o = semcom(&args);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let first = stdout(&o);
    assert!(first.contains("snr_db,segment_accuracy,frame_erasures"));
    assert!(data.exists() && ckpt.exists());

    let mut args = vec!["train", "-q", "--channel", "awgn", "--snr-list", "0,30"];
    args.extend(TINY);
    args.extend(["--dataset", data.to_str().unwrap()]);
    let o = semcom(&args);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout(&o), first);
}
