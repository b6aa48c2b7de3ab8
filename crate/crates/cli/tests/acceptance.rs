//! One test per acceptance criterion. Each prints a single PASS/FAIL line to
//! the uncaptured stderr stream, then asserts.

use std::f64::consts::FRAC_PI_4;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::sync::OnceLock;
use std::time::Instant;

use ddm_core::baselines::{run_cdm, run_dsm, BfgsOptions};
use ddm_core::config::RunConfig;
use ddm_core::eval::{boundary_error, noise_scaling_study, reciprocity_residual, NoiseStudyOptions};
use ddm_core::forward::{add_noise, assemble_msrm, disk_msrm, extract_limited, Aperture, SolverOptions};
use ddm_core::geometry::{sample_random_curve, ParametricShape};
use ddm_core::specfun::{bessel_j, bessel_jy_seq, bessel_y};
use ddm_core::train::{generate_dataset, gradient_check, invert, train_ddm, Checkpoint, Dataset};
use ddm_core::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn report(id: u32, name: &str, pass: bool, detail: String) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "acceptance {id:>2} {verdict}: {name}: {detail}");
    assert!(pass, "criterion {id} ({name}) failed: {detail}");
}

struct Trained {
    data: Dataset,
    ck: Checkpoint,
    seconds: f64,
}

/// The reduced-scale run shared by the training, latency and noise criteria.
fn trained() -> &'static Trained {
    static CELL: OnceLock<Trained> = OnceLock::new();
    CELL.get_or_init(|| {
        let config = RunConfig::default();
        let start = Instant::now();
        let data = generate_dataset(&config).expect("dataset");
        let ck = train_ddm(&data, &config).expect("training");
        Trained { data, ck, seconds: start.elapsed().as_secs_f64() }
    })
}

#[test]
fn c01_forward_solver_matches_disk_series() {
    let start = Instant::now();
    let msrm = assemble_msrm(&ParametricShape::unit_disk(), 3.0, 16, &SolverOptions::default()).unwrap();
    let seconds = start.elapsed().as_secs_f64();
    let series = disk_msrm(1.0, 3.0, 16, 40).unwrap();
    let diff: f64 = msrm.matrix.data.iter().zip(&series.matrix.data).map(|(a, b)| (a - b).norm_sqr()).sum();
    let err = diff.sqrt() / series.matrix.frobenius_norm();
    report(1, "forward solver oracle", err <= 1e-8 && seconds < 1.0, format!("relative Frobenius {err:.2e}, {seconds:.3} s"));
}

#[test]
fn c02_reciprocity_on_random_shapes() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut worst, mut shapes, mut skipped) = (0.0f64, 0, 0);
    while shapes < 20 {
        let shape: ParametricShape = sample_random_curve(&mut rng, Default::default()).into();
        match assemble_msrm(&shape, 3.0, 16, &SolverOptions::default()) {
            Ok(msrm) => {
                worst = worst.max(reciprocity_residual(&msrm));
                shapes += 1;
            }
            Err(Error::NearSingular(_)) => skipped += 1,
            Err(e) => panic!("{e}"),
        }
    }
    report(2, "reciprocity", worst <= 1e-8, format!("worst residual {worst:.2e} over {shapes} shapes, {skipped} resonant draws skipped"));
}

#[test]
fn c03_special_functions() {
    let mut worst = 0.0f64;
    for i in 0..1000 {
        let x = 0.1 + (40.0 - 0.1) * i as f64 / 999.0;
        let (j, y) = bessel_jy_seq(11, x).unwrap();
        let want = 2.0 / (std::f64::consts::PI * x);
        for n in 0..=10 {
            worst = worst.max((j[n + 1] * y[n] - j[n] * y[n + 1] - want).abs() / want);
        }
    }
    let j0 = (bessel_j(0, 1.0) - 0.7651976865579666).abs();
    let y0 = (bessel_y(0, 1.0).unwrap() - 0.08825696421567696).abs();
    let pass = worst <= 1e-10 && j0 <= 1e-10 && y0 <= 1e-10;
    report(3, "special functions", pass, format!("Wronskian {worst:.2e}, |dJ0(1)| {j0:.1e}, |dY0(1)| {y0:.1e}"));
}

#[test]
fn c04_gradient_integrity() {
    let config = RunConfig { m: 4, n_lambda: 2, ..Default::default() };
    let (mut passed, mut worst) = (0, 0.0f64);
    for seed in 0..10 {
        let r = gradient_check(&config, seed, 4).unwrap();
        if r.passes(1e-4) {
            passed += 1;
        }
        worst = worst.max(r.max_rel_err());
    }
    report(4, "gradient integrity", passed == 10, format!("{passed}/10 seeds pass, worst relative error {worst:.2e}"));
}

#[test]
fn c05_cdm_on_noisy_disk() {
    let config = RunConfig { aperture: Aperture::full(), sigma: 0.01, ..Default::default() };
    let start = Instant::now();
    let disk = ParametricShape::unit_disk();
    let full = assemble_msrm(&disk, config.k, config.m, &config.solver).unwrap();
    let data = add_noise(&extract_limited(&full, &config.aperture).unwrap(), config.sigma, &mut ChaCha8Rng::seed_from_u64(5));
    let res = run_cdm(&data, &config.physics_limited().unwrap(), config.n_lambda, &BfgsOptions::default()).unwrap();
    let seconds = start.elapsed().as_secs_f64();
    let e = boundary_error(&disk, &res.curve, config.n_t).unwrap().value;
    report(5, "CDM sanity", e <= 0.03 && seconds < 300.0, format!("e_bar {e:.3e} after {} iterations, {seconds:.1} s", res.iterations));
}

#[test]
fn c06_reduced_scale_training() {
    let t = trained();
    let (first, last) = (t.ck.history[0], *t.ck.history.last().unwrap());
    let err_ratio = last.err / first.err;
    let drop = first.l_ddm / last.l_ddm;
    let pass = err_ratio <= 0.5 && drop >= 10.0 && t.seconds <= 1800.0;
    report(
        6,
        "reduced-scale training",
        pass,
        format!(
            "Err {:.4} -> {:.4} (ratio {err_ratio:.3}), L_DDM {:.3e} -> {:.3e} ({drop:.1}x), {:.0} s on {} threads",
            first.err,
            last.err,
            first.l_ddm,
            last.l_ddm,
            t.seconds,
            rayon::current_num_threads()
        ),
    );
}

#[test]
fn c07_inversion_latency() {
    let t = trained();
    let sample = &t.data.test()[0];
    let start = Instant::now();
    let inv = invert(&t.ck.best, &t.ck.config, &sample.limited).unwrap();
    let seconds = start.elapsed().as_secs_f64();
    report(7, "inversion latency", seconds < 1.0, format!("{seconds:.4} s wall, {:.4} s inside the pass", inv.seconds));
}

#[test]
fn c08_dsm_illuminated_portion() {
    let config = RunConfig::default();
    let start = Instant::now();
    let full = assemble_msrm(&ParametricShape::unit_disk(), config.k, config.m, &config.solver).unwrap();
    let grid = run_dsm(&extract_limited(&full, &config.aperture).unwrap(), config.k);
    let seconds = start.elapsed().as_secs_f64();
    let mut nodes: Vec<([f64; 2], f64)> = grid.nodes().collect();
    nodes.sort_by(|a, b| b.1.total_cmp(&a.1));
    // the observation arc [0, pi/2] faces the direction pi/4
    let (cx, cy) = (FRAC_PI_4.cos(), FRAC_PI_4.sin());
    let top = &nodes[..nodes.len() / 100];
    let near = top.iter().filter(|(h, _)| (h[0].hypot(h[1]) - 1.0).abs() <= 0.5).count();
    let lit = top.iter().filter(|(h, _)| h[0] * cx + h[1] * cy >= 0.0).count();
    let pass = near == top.len() && lit == top.len() && seconds < 10.0;
    report(8, "DSM illuminated portion", pass, format!("{near}/{} near the boundary, {lit}/{} illuminated, {seconds:.2} s", top.len(), top.len()));
}

#[test]
fn c09_noise_scaling() {
    let t = trained();
    let opts = NoiseStudyOptions::default();
    let start = Instant::now();
    let study = noise_scaling_study(&t.ck.best, &t.ck.config, &t.data.test()[0], &opts).unwrap();
    let seconds = start.elapsed().as_secs_f64();
    let slope = study.slope.unwrap_or(f64::NAN);
    let pass = (1.7..=2.3).contains(&slope) && opts.trials >= 2000 && seconds < 600.0;
    let ci = study.slope_ci.map_or("n/a".to_string(), |c| format!("[{:.3}, {:.3}]", c[0], c[1]));
    report(9, "noise scaling", pass, format!("slope {slope:.3}, 95% CI {ci}, {} trials per level, {seconds:.1} s", opts.trials));
}

const SMALL: &str = "m = 4\nn_t = 16\nn_lambda = 3\nn_samples = 20\nepochs = 3\nbatch_size = 4\nlearning_rate = 1e-3\nsigma = 0.01\n";

fn run_all(dir: &Path, config: &Path) {
    let c = config.to_str().unwrap();
    let steps: [&[&str]; 8] = [
        &["gen-data"],
        &["train"],
        &["invert", "--index", "0"],
        &["baseline-cdm", "--shape", "pear", "--max-iter", "50"],
        &["baseline-dsm", "--shape", "rounded-square"],
        &["eval", "--dataset", "dataset.ddm", "--checkpoint", "model.ckpt"],
        &["eval", "--exact", "pear", "--recovered", "cdm.json"],
        &["noise-study", "--trials", "16"],
    ];
    for args in steps {
        let out = Command::new(env!("CARGO_BIN_EXE_ddm"))
            .args(["--threads", "1", "--seed", "11", "--svg", "--config", c, "--output-dir"])
            .arg(dir)
            .args(args)
            .env("RUST_LOG", "warn")
            .output()
            .unwrap();
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn c10_determinism() {
    let root = tempfile::tempdir().unwrap();
    let config = root.path().join("run.toml");
    fs::write(&config, SMALL).unwrap();
    let (a, b) = (root.path().join("a"), root.path().join("b"));
    run_all(&a, &config);
    run_all(&b, &config);
    let mut names: Vec<_> = fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    let differing: Vec<String> = names
        .iter()
        .filter(|n| fs::read(a.join(n)).ok() != fs::read(b.join(n)).ok())
        .map(|n| n.to_string_lossy().into_owned())
        .collect();
    let pass = differing.is_empty() && names.len() >= 15;
    report(10, "determinism", pass, format!("{} output files compared, differing: {differing:?}", names.len()));
}
