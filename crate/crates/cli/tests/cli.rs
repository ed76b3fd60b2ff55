use std::fs;
use std::path::Path;
use std::process::Command;

use coldpost::data::{read_pgm, shepp_logan, Rng};
use coldpost::mfvi::{predict_mean_weights, train, ArchConfig};
use coldpost::radon::ProjectionGeometry;
use coldpost::{DipNetwork, Image, ObjectiveMode, RadonOperator, TrainConfig, VariationalParams};
use coldpost_cli::run_with_args;

const SIZE: usize = 32;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_coldpost"))
}

/// Small network and short training so each run takes well under a second.
fn small(cmd: &str, dir: &Path, extra: &[&str]) -> Vec<String> {
    let mut args: Vec<String> = vec!["coldpost".into(), cmd.into()];
    let base = [
        "--out-dir", dir.to_str().unwrap(), "--size", "32", "--angles", "15", "--seed", "3", "--iters", "40", "--channels", "4",
        "--input-channels", "2", "--depth", "2", "--bottleneck-convs", "1", "--log-every", "5", "--mc-samples", "4",
    ];
    // flags given in `extra` replace the defaults
    for pair in base.chunks(2) {
        if !extra.contains(&pair[0]) {
            args.extend(pair.iter().map(|s| s.to_string()));
        }
    }
    args.extend(extra.iter().map(|s| s.to_string()));
    args
}

fn arch() -> ArchConfig {
    ArchConfig { image_size: SIZE, input_channels: 2, channels: 4, depth: 2, bottleneck_convs: 1 }
}

/// Network and initial parameters as the CLI derives them from `--seed`.
fn model(seed: u64) -> (DipNetwork, VariationalParams) {
    let mut rng = Rng::new(seed).split(1);
    let net = DipNetwork::new(arch(), &mut rng).unwrap();
    let params = VariationalParams::init(&net, &mut rng);
    (net, params)
}

fn read(path: &Path) -> String {
    fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn column(csv: &str, name: &str) -> Vec<String> {
    let mut lines = csv.lines();
    let idx = lines.next().unwrap().split(',').position(|h| h == name).unwrap();
    lines.map(|l| l.split(',').nth(idx).unwrap().to_string()).collect()
}

#[test]
fn usage_errors_exit_with_code_two() {
    let out = bin().args(["phantom", "--size", "64"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = bin().args(["fbp", "--angles", "many"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let code = run_with_args(small("mfvi", dir.path(), &["--temperature", "1", "--prior-sigma", "0.1"]));
    assert_eq!(code, 2, "T = 1 lies outside the default box");
}

#[test]
fn phantom_writes_pgm_and_config() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.pgm");
    let out = bin().args(["phantom", "--size", "64", "--out", path.to_str().unwrap()]).output().unwrap();
    assert!(out.status.success());
    let img: Image = read_pgm(&path).unwrap();
    assert_eq!((img.width(), img.height()), (64, 64));
    assert!(read(&dir.path().join("config.txt")).contains("size = 64"));
}

#[test]
fn sparse_fbp_is_worse_than_dense() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let q = |angles: &str| {
        let out = bin().args(["fbp", "--size", "64", "--angles", angles, "--out-dir", d]).output().unwrap();
        assert!(out.status.success());
        let line = String::from_utf8(out.stdout).unwrap();
        line.trim().trim_start_matches("fbp psnr=").trim_end_matches(" dB").parse::<f64>().unwrap()
    };
    let (sparse, dense) = (q("45"), q("180"));
    assert!(sparse < dense, "{sparse} vs {dense}");
    assert!(dir.path().join("fbp.pgm").exists());
    assert_eq!(read(&dir.path().join("metrics.csv")).lines().count(), 3);
}

#[test]
fn sinogram_csv_has_one_row_per_angle() {
    let dir = tempfile::tempdir().unwrap();
    let code = run_with_args(["coldpost", "sinogram", "--size", "32", "--angles", "15", "--out-dir", dir.path().to_str().unwrap()]);
    assert_eq!(code, 0);
    let csv = read(&dir.path().join("sinogram.csv"));
    assert!(csv.lines().count() >= 15);
}

#[test]
fn dip_is_reproducible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    assert_eq!(run_with_args(small("dip", a.path(), &[])), 0);
    assert_eq!(run_with_args(small("dip", b.path(), &[])), 0);
    let h = read(&a.path().join("dip_history.csv"));
    assert_eq!(h, read(&b.path().join("dip_history.csv")));
    assert_eq!(h.lines().count(), 1 + 9);
    assert_eq!(fs::read(a.path().join("dip.pgm")).unwrap(), fs::read(b.path().join("dip.pgm")).unwrap());
}

#[test]
fn dip_without_iterations_is_the_untrained_network() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run_with_args(small("dip", dir.path(), &["--iters", "0"])), 0);
    let written: Image = read_pgm(dir.path().join("dip.pgm")).unwrap();
    let (net, init) = model(3);
    let untrained = predict_mean_weights(&net, &init).unwrap().clamped01();
    for (w, u) in written.pixels().iter().zip(untrained.pixels()) {
        assert!((w - u).abs() <= 0.5 / 65535.0 + 1e-12);
    }
}

#[test]
fn mfvi_is_reproducible_and_writes_artifacts() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let flags = ["--temperature", "1e-3", "--prior-sigma", "0.5"];
    assert_eq!(run_with_args(small("mfvi", a.path(), &flags)), 0);
    assert_eq!(run_with_args(small("mfvi", b.path(), &flags)), 0);
    for f in ["mfvi_mean.pgm", "mfvi_variance.pgm", "mfvi_error.pgm", "mfvi_variance_scale.csv", "mfvi_history.csv", "mfvi_calibration.csv", "metrics.csv"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let cfg = read(&a.path().join("config.txt"));
    assert!(cfg.contains("prior_scaling = ") && cfg.contains("temperature = 0.001"));
}

#[test]
fn single_posterior_sample_has_zero_variance() {
    let dir = tempfile::tempdir().unwrap();
    let args = small("mfvi", dir.path(), &["--temperature", "1e-3", "--prior-sigma", "0.5", "--mc-samples", "1"]);
    assert_eq!(run_with_args(args), 0);
    let var: Image = read_pgm(dir.path().join("mfvi_variance.pgm")).unwrap();
    assert!(var.pixels().iter().all(|&v| v == 0.0));
    assert_eq!(read(&dir.path().join("mfvi_variance_scale.csv")), "min,max\n0,0\n");
}

#[test]
fn unit_temperature_is_the_untempered_elbo() {
    let dir = tempfile::tempdir().unwrap();
    let sigma = 0.5;
    let args = small("mfvi", dir.path(), &["--temperature", "1", "--prior-sigma", "0.5", "--unsafe"]);
    assert_eq!(run_with_args(args), 0);
    let losses = column(&read(&dir.path().join("mfvi_history.csv")), "loss");

    let x: Image = shepp_logan(SIZE).unwrap();
    let g = ProjectionGeometry::parallel(15, SIZE).unwrap();
    let op = std::sync::Arc::new(RadonOperator::new(&g, SIZE).unwrap());
    let y = op.forward(&x).unwrap();
    let (net, init) = model(3);
    let mut tc = TrainConfig::new(ObjectiveMode::PartialLambda { lambda: 1.0, sigma });
    tc.iterations = 40;
    tc.log_every = 5;
    tc.warmup = 100;
    let out = train(&net, init, &tc, &op, &y, Some(&x), &mut Rng::new(3).split(2)).unwrap();
    let reference: Vec<String> = out.history.iter().map(|h| h.loss.to_string()).collect();
    assert_eq!(losses, reference);
}

#[test]
fn bo_without_iterations_evaluates_the_initial_design() {
    let dir = tempfile::tempdir().unwrap();
    let args = small("bo", dir.path(), &["--bo-iterations", "0", "--parallel", "2"]);
    assert_eq!(run_with_args(args), 0);
    let hist = read(&dir.path().join("bo_history.csv"));
    assert_eq!(hist.lines().count(), 1 + 4);
    let best: Vec<f64> = column(&hist, "best_psnr_so_far").iter().map(|s| s.parse().unwrap()).collect();
    assert!(best.windows(2).all(|w| w[1] >= w[0]));
    let init_max = column(&hist, "psnr").iter().map(|s| s.parse::<f64>().unwrap()).fold(f64::NEG_INFINITY, f64::max);
    let report = read(&dir.path().join("report.csv"));
    let mfvi_row = report.lines().find(|l| l.starts_with("mfvi_bo,")).unwrap();
    let reported: f64 = mfvi_row.split(',').nth(3).unwrap().parse().unwrap();
    assert!(reported >= init_max);
    for f in ["config.txt", "gp_landscape_final.csv", "fbp.pgm", "dip.pgm", "bo_best_mean.pgm", "bo_metrics.csv"] {
        assert!(dir.path().join(f).exists(), "{f} missing");
    }
}

#[test]
fn bo_history_is_byte_identical_across_runs() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let flags = ["--bo-iterations", "1", "--batch", "2", "--parallel", "2", "--iters", "15", "--skip-dip"];
    assert_eq!(run_with_args(small("bo", a.path(), &flags)), 0);
    assert_eq!(run_with_args(small("bo", b.path(), &flags)), 0);
    for f in ["bo_history.csv", "bo_metrics.csv", "gp_landscape_iter01.csv", "report.csv"] {
        assert_eq!(read(&a.path().join(f)), read(&b.path().join(f)), "{f}");
    }
}
