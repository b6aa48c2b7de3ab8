//! Subcommand implementations. Every output file is a pure function of the
//! configuration and seed; wall-clock timings only go to the log.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::Args;
use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use ddm_core::baselines::{run_cdm, run_dsm, BfgsOptions};
use ddm_core::config::RunConfig;
use ddm_core::eval::{boundary_error, noise_scaling_study, reciprocity_residual, NoiseStudyOptions};
use ddm_core::forward::{add_noise, assemble_msrm, extract_limited, LimitedAperture, Msrm};
use ddm_core::geometry::{FourierCurve, ParametricShape};
use ddm_core::io::{dataset_file_size, load_checkpoint, load_dataset, save_checkpoint, save_dataset};
use ddm_core::train::{generate_dataset, invert as ddm_invert, terr, train_ddm, Dataset, HISTORY_HEADER};
use ddm_core::{Error, Result};

use crate::shapes::{parse_recovered, parse_shape};
use crate::{svg, Global};

/// Stream of the generator that perturbs single observations.
const OBSERVATION_STREAM: u64 = 1 << 41;
const PLOT_POINTS: usize = 256;

pub struct Context {
    pub config: RunConfig,
    pub output_dir: PathBuf,
    pub svg: bool,
    /// Arcs given on the command line, which a checkpoint must then match.
    pub explicit_aperture: bool,
}

impl Context {
    pub fn new(g: &Global) -> Result<Self> {
        let mut config = match &g.config {
            Some(path) => RunConfig::from_toml(&fs::read_to_string(path)?)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = g.seed {
            config.seed = seed;
        }
        if let Some(sigma) = g.sigma {
            config.sigma = sigma;
        }
        if let Some(arc) = &g.observation {
            config.aperture.observation = arc.parse()?;
        }
        if let Some(arc) = &g.incidence {
            config.aperture.incidence = arc.parse()?;
        }
        config.validate()?;
        let output_dir = g
            .output_dir
            .clone()
            .or_else(|| std::env::var_os("DDM_OUTPUT_DIR").map(PathBuf::from))
            .unwrap_or_else(|| config.paths.output_dir.clone());
        fs::create_dir_all(&output_dir)?;
        Ok(Self { config, output_dir, svg: g.svg, explicit_aperture: g.observation.is_some() || g.incidence.is_some() })
    }

    fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.output_dir.join(path)
        }
    }

    fn write(&self, name: &str, contents: impl AsRef<[u8]>) -> Result<PathBuf> {
        let path = self.output_dir.join(name);
        fs::write(&path, contents)?;
        info!("wrote {}", path.display());
        Ok(path)
    }

    fn write_json(&self, name: &str, value: &Value) -> Result<PathBuf> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
        text.push('\n');
        self.write(name, text)
    }

    fn dataset_path(&self, flag: Option<PathBuf>) -> PathBuf {
        self.resolve(&flag.unwrap_or_else(|| self.config.paths.dataset.clone()))
    }

    fn checkpoint_path(&self, flag: Option<PathBuf>) -> PathBuf {
        self.resolve(&flag.unwrap_or_else(|| self.config.paths.checkpoint.clone()))
    }

    /// Configuration of a checkpoint with this run's noise level and seed.
    fn checkpoint_config(&self, trained: &RunConfig) -> Result<RunConfig> {
        if self.explicit_aperture && self.config.aperture != trained.aperture {
            return Err(Error::Aperture(format!(
                "checkpoint was trained on observation {} and incidence {}",
                trained.aperture.observation, trained.aperture.incidence
            )));
        }
        Ok(RunConfig { sigma: self.config.sigma, seed: self.config.seed, ..trained.clone() })
    }
}

fn config_json(config: &RunConfig) -> Value {
    serde_json::to_value(config).expect("configuration serializes")
}

/// Observed obstacle: a named shape simulated on the fly, or a test sample.
#[derive(Debug, Args)]
pub struct Target {
    /// Obstacle to simulate: disk, circle:R, pear, rounded-square or fourier:q0,a1,b1,...
    #[arg(long, conflicts_with = "index")]
    pub shape: Option<String>,
    /// Index into the test split of a dataset instead of a named shape.
    #[arg(long)]
    pub index: Option<usize>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
}

struct Observation {
    label: String,
    exact: ParametricShape,
    full: Msrm,
    limited: LimitedAperture,
}

fn observe(ctx: &Context, target: &Target, config: &RunConfig) -> Result<Observation> {
    if let Some(i) = target.index {
        let data = load_dataset(&ctx.dataset_path(target.dataset.clone()))?;
        let d = &data.config;
        if (d.m, d.k, d.aperture) != (config.m, config.k, config.aperture) {
            return Err(Error::Config("dataset was generated with a different k, m or aperture".into()));
        }
        let test = data.test();
        let s = test.get(i).ok_or_else(|| Error::Config(format!("test split has {} samples, index {i} requested", test.len())))?;
        return Ok(Observation {
            label: format!("test sample {i}"),
            exact: s.curve.clone().into(),
            full: s.full.clone(),
            limited: s.limited.clone(),
        });
    }
    let spec = target.shape.as_deref().unwrap_or("disk");
    let exact = parse_shape(spec, config.n_lambda, config.s)?;
    let full = assemble_msrm(&exact, config.k, config.m, &config.solver)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(OBSERVATION_STREAM);
    let limited = add_noise(&extract_limited(&full, &config.aperture)?, config.sigma, &mut rng);
    Ok(Observation { label: spec.to_string(), exact, full, limited })
}

fn curve_points(f: impl Fn(f64) -> [f64; 2]) -> Vec<[f64; 2]> {
    (0..PLOT_POINTS).map(|i| f(std::f64::consts::TAU * i as f64 / PLOT_POINTS as f64)).collect()
}

/// Boundary table sampled on a uniform parameter grid.
fn boundary_csv(exact: &ParametricShape, recovered: &FourierCurve) -> String {
    let mut out = String::from("t,exact_x,exact_y,recovered_x,recovered_y\n");
    for i in 0..PLOT_POINTS {
        let t = std::f64::consts::TAU * i as f64 / PLOT_POINTS as f64;
        let e = exact.point(t);
        let r = recovered.boundary_point(t);
        out.push_str(&format!("{t:.8},{:.12e},{:.12e},{:.12e},{:.12e}\n", e[0], e[1], r[0], r[1]));
    }
    out
}

fn write_boundary(ctx: &Context, stem: &str, label: &str, obs: &Observation, recovered: &FourierCurve) -> Result<()> {
    ctx.write(&format!("{stem}_boundary.csv"), boundary_csv(&obs.exact, recovered))?;
    if ctx.svg {
        let figure = svg::boundaries(&[
            ("exact", "black", curve_points(|t| obs.exact.point(t))),
            (label, "crimson", curve_points(|t| recovered.boundary_point(t))),
        ]);
        ctx.write(&format!("{stem}_boundary.svg"), figure)?;
    }
    Ok(())
}

pub fn gen_data(ctx: &Context, samples: Option<usize>, out: Option<PathBuf>) -> Result<()> {
    let mut config = ctx.config.clone();
    if let Some(n) = samples {
        config.n_samples = n;
    }
    config.validate()?;
    let start = Instant::now();
    let data = generate_dataset(&config)?;
    info!("generated {} samples in {:.1} s", data.samples.len(), start.elapsed().as_secs_f64());
    let path = ctx.dataset_path(out);
    save_dataset(&path, &data)?;
    let bytes = dataset_file_size(&config, data.samples.len())?;
    ctx.write_json(
        "dataset.json",
        &json!({
            "config": config_json(&config),
            "samples": data.samples.len(),
            "train": data.n_train(),
            "rejected_draws": data.retries,
            "bytes": bytes,
        }),
    )?;
    println!("dataset: {} samples, {} bytes", data.samples.len(), bytes);
    Ok(())
}

/// Data settings come from the dataset; optimization settings from the
/// active configuration.
fn training_config(ctx: &Context, data: &Dataset) -> RunConfig {
    let c = &ctx.config;
    RunConfig {
        n_t: c.n_t,
        z: c.z,
        weights: c.weights,
        epochs: c.epochs,
        batch_size: c.batch_size,
        learning_rate: c.learning_rate,
        shuffle: c.shuffle,
        seed: c.seed,
        paths: c.paths.clone(),
        ..data.config.clone()
    }
}

pub fn train(
    ctx: &Context,
    dataset: Option<PathBuf>,
    epochs: Option<usize>,
    batch_size: Option<usize>,
    learning_rate: Option<f64>,
    out: Option<PathBuf>,
) -> Result<()> {
    let data = load_dataset(&ctx.dataset_path(dataset))?;
    let mut config = training_config(ctx, &data);
    config.epochs = epochs.unwrap_or(config.epochs);
    config.batch_size = batch_size.unwrap_or(config.batch_size);
    config.learning_rate = learning_rate.unwrap_or(config.learning_rate);
    config.validate()?;
    let start = Instant::now();
    let ck = train_ddm(&data, &config)?;
    info!("trained {} epochs in {:.1} s", config.epochs, start.elapsed().as_secs_f64());
    save_checkpoint(&ctx.checkpoint_path(out), &ck)?;

    let mut csv = format!("{HISTORY_HEADER}\n");
    for r in &ck.history {
        csv.push_str(&r.csv_row());
        csv.push('\n');
    }
    ctx.write("history.csv", csv)?;
    let (terr_best, terr_last) = if data.test().is_empty() {
        (None, None)
    } else {
        (Some(terr(&ck.best, data.test())?), Some(terr(&ck.last, data.test())?))
    };
    let last = ck.history.last().expect("at least one epoch");
    ctx.write_json(
        "train.json",
        &json!({
            "config": config_json(&config),
            "best_epoch": ck.best_epoch,
            "final": { "l_ddm": last.l_ddm, "l_phy": last.l_phy, "l_dc": last.l_dc, "err": last.err },
            "terr_best": terr_best,
            "terr_last": terr_last,
            "parameters": ck.best.param_count(),
        }),
    )?;
    if ctx.svg {
        let series = |f: fn(&ddm_core::train::EpochRecord) -> f64| ck.history.iter().map(|r| (r.epoch as f64, f(r))).collect();
        let figure = svg::log_chart(&[
            ("L_DDM", "black", series(|r| r.l_ddm)),
            ("L_phy", "steelblue", series(|r| r.l_phy)),
            ("L_DC", "darkorange", series(|r| r.l_dc)),
            ("Err", "crimson", series(|r| r.err)),
        ]);
        ctx.write("loss.svg", figure)?;
    }
    println!("best epoch {} of {}, final Err {:.4}", ck.best_epoch, config.epochs, last.err);
    Ok(())
}

pub fn invert(ctx: &Context, checkpoint: Option<PathBuf>, target: &Target) -> Result<()> {
    let ck = load_checkpoint(&ctx.checkpoint_path(checkpoint))?;
    let config = ctx.checkpoint_config(&ck.config)?;
    let obs = observe(ctx, target, &config)?;
    let inv = ddm_invert(&ck.best, &config, &obs.limited)?;
    info!("inversion took {:.3} s", inv.seconds);
    let err = boundary_error(&obs.exact, &inv.curve, config.n_t)?;
    let completed = Msrm::new(config.m, inv.completed.clone())?;
    ctx.write_json(
        "inversion.json",
        &json!({
            "config": config_json(&config),
            "target": obs.label,
            "coefficients": inv.curve.to_vec(),
            "kernel": inv.kernel.iter().map(|z| [z.re, z.im]).collect::<Vec<_>>(),
            "boundary_error": err.value,
            "reciprocity_completed": reciprocity_residual(&completed),
            "reciprocity_exact": reciprocity_residual(&obs.full),
        }),
    )?;
    write_boundary(ctx, "inversion", "DDM", &obs, &inv.curve)?;
    println!("{}: e_bar = {:.6e}", obs.label, err.value);
    Ok(())
}

pub fn baseline_cdm(ctx: &Context, target: &Target, max_iter: usize) -> Result<()> {
    let config = &ctx.config;
    let obs = observe(ctx, target, config)?;
    let setup = config.physics_limited()?;
    let opts = BfgsOptions { max_iter, ..Default::default() };
    let start = Instant::now();
    let res = run_cdm(&obs.limited, &setup, config.n_lambda, &opts)?;
    info!("CDM finished after {} iterations in {:.2} s", res.iterations, start.elapsed().as_secs_f64());
    let err = boundary_error(&obs.exact, &res.curve, config.n_t)?;
    ctx.write_json(
        "cdm.json",
        &json!({
            "config": config_json(config),
            "target": obs.label,
            "coefficients": res.curve.to_vec(),
            "kernel": res.kernel.iter().map(|z| [z.re, z.im]).collect::<Vec<_>>(),
            "iterations": res.iterations,
            "converged": res.converged,
            "degraded": res.degraded,
            "objective": res.history.last(),
            "boundary_error": err.value,
        }),
    )?;
    let mut history = Vec::new();
    res.write_history_csv(&mut history)?;
    ctx.write("cdm_history.csv", history)?;
    write_boundary(ctx, "cdm", "CDM", &obs, &res.curve)?;
    println!("{}: e_bar = {:.6e} after {} iterations", obs.label, err.value, res.iterations);
    Ok(())
}

pub fn baseline_dsm(ctx: &Context, target: &Target) -> Result<()> {
    let config = &ctx.config;
    let obs = observe(ctx, target, config)?;
    let start = Instant::now();
    let grid = run_dsm(&obs.limited, config.k);
    info!("DSM grid in {:.3} s", start.elapsed().as_secs_f64());
    let mut csv = Vec::new();
    grid.write_csv(&mut csv)?;
    ctx.write("dsm.csv", csv)?;
    let peak = grid.argmax();
    let max = grid.values.iter().fold(0.0f64, |m, v| m.max(*v));
    ctx.write_json(
        "dsm.json",
        &json!({ "config": config_json(config), "target": obs.label, "argmax": peak, "max": max, "nodes": grid.values.len() }),
    )?;
    if ctx.svg {
        ctx.write("dsm.svg", svg::heatmap(&grid))?;
    }
    println!("{}: indicator peaks at ({:.3}, {:.3})", obs.label, peak[0], peak[1]);
    Ok(())
}

pub fn eval(
    ctx: &Context,
    exact: Option<String>,
    recovered: Option<String>,
    dataset: Option<PathBuf>,
    checkpoint: Option<PathBuf>,
) -> Result<()> {
    let config = &ctx.config;
    if let (Some(exact), Some(recovered)) = (exact, recovered) {
        let shape = parse_shape(&exact, config.n_lambda, config.s)?;
        let curve = parse_recovered(&recovered, &ctx.output_dir, config.n_lambda, config.s)?;
        let err = boundary_error(&shape, &curve, config.n_t)?;
        ctx.write_json(
            "eval.json",
            &json!({
                "config": config_json(config),
                "exact": exact,
                "recovered": curve.to_vec(),
                "boundary_error": err.value,
                "residuals": err.residuals,
            }),
        )?;
        println!("e_bar = {:.6e}", err.value);
        return Ok(());
    }

    let data = load_dataset(&ctx.dataset_path(dataset))?;
    let model = match checkpoint {
        Some(p) => Some(load_checkpoint(&ctx.resolve(&p))?),
        None => None,
    };
    let mut csv = String::from("index,reciprocity_exact,e_bar,reciprocity_completed\n");
    let mut sum = 0.0;
    for (i, s) in data.test().iter().enumerate() {
        let rec = reciprocity_residual(&s.full);
        let (e, rc) = match &model {
            Some(ck) => {
                let inv = ddm_invert(&ck.best, &ck.config, &s.limited)?;
                let e = boundary_error(&s.curve.clone().into(), &inv.curve, config.n_t)?.value;
                sum += e;
                (format!("{e:.12e}"), format!("{:.12e}", reciprocity_residual(&Msrm::new(s.full.m, inv.completed)?)))
            }
            None => (String::new(), String::new()),
        };
        csv.push_str(&format!("{i},{rec:.12e},{e},{rc}\n"));
    }
    ctx.write("eval.csv", csv)?;
    let n = data.test().len();
    let summary = match &model {
        Some(ck) if n > 0 => json!({ "terr": terr(&ck.best, data.test())?, "mean_e_bar": sum / n as f64 }),
        _ => json!({}),
    };
    ctx.write_json("eval.json", &json!({ "config": config_json(&data.config), "test_samples": n, "summary": summary }))?;
    println!("evaluated {n} test samples");
    Ok(())
}

pub fn noise_study(
    ctx: &Context,
    checkpoint: Option<PathBuf>,
    dataset: Option<PathBuf>,
    index: usize,
    trials: usize,
    sigmas: Vec<f64>,
) -> Result<()> {
    let ck = load_checkpoint(&ctx.checkpoint_path(checkpoint))?;
    let data = load_dataset(&ctx.dataset_path(dataset))?;
    let sample = data
        .samples
        .get(index)
        .ok_or_else(|| Error::Config(format!("dataset has {} samples, index {index} requested", data.samples.len())))?;
    let opts = NoiseStudyOptions { sigmas, trials, seed: ctx.config.seed };
    let start = Instant::now();
    let config = ctx.checkpoint_config(&ck.config)?;
    let study = noise_scaling_study(&ck.best, &config, sample, &opts)?;
    info!("noise study in {:.1} s", start.elapsed().as_secs_f64());
    let mut csv = Vec::new();
    study.write_csv(&mut csv)?;
    ctx.write("noise.csv", csv)?;
    ctx.write_json(
        "noise.json",
        &json!({
            "config": config_json(&config),
            "options": opts,
            "sample": index,
            "study": study,
        }),
    )?;
    match study.slope {
        Some(s) => println!("log-log slope {s:.4}"),
        None => println!("log-log slope undefined: fewer than two positive means"),
    }
    Ok(())
}
