//! The subcommands. Each resolves its settings, does the work through the
//! library and commits its artifacts with a manifest.

use std::path::{Path, PathBuf};

use noma_secrecy::channels::{sample_channel_pair, sample_set, ChannelDims, ChannelPair};
use noma_secrecy::eval::{
    bench_methods, capacity_fraction, region_curve, write_region_csv, BenchOptions, Method, ModelBank, Precoder,
};
use noma_secrecy::features::{generate_dataset, read_dataset, write_dataset, write_dataset_csv, Dataset};
use noma_secrecy::mlp::{read_model, train as train_model, write_model, ModelContext, PrecoderModel, TrainConfig};
use noma_secrecy::secrecy_rates::evaluate_rates;
use noma_secrecy::wiretap::PgaOptions;
use serde::Serialize;

use crate::artifacts::{Inputs, Outputs};
use crate::config::{parse_alpha_grid, Settings};
use crate::error::{CliError, CliResult};
use crate::{BenchArgs, DimArgs, GenDataArgs, RegionArgs, SolveArgs, SolverArgs, TrainArgs};

pub struct Context {
    pub settings: Settings,
    pub out_dir: PathBuf,
    pub command: &'static str,
}

impl Context {
    fn output(&self, flag: Option<PathBuf>, default_name: String) -> CliResult<PathBuf> {
        self.settings.get("output", flag, self.out_dir.join(default_name))
    }
}

fn dims(s: &Settings, a: &DimArgs) -> CliResult<(ChannelDims, f64)> {
    let d = ChannelDims::new(s.get("nt", a.nt, 2)?, s.get("n1", a.n1, 1)?, s.get("n2", a.n2, 1)?)?;
    let power = s.get("power", a.power, 10.0)?;
    if power < 0.0 || !power.is_finite() {
        return Err(CliError::usage(format!(
            "--power must be finite and nonnegative, got {power}"
        )));
    }
    Ok((d, power))
}

fn solver_options(s: &Settings, a: &SolverArgs) -> CliResult<PgaOptions> {
    let d = PgaOptions::default();
    Ok(PgaOptions {
        max_iters: s.get("max_iters", a.max_iters, d.max_iters)?,
        tol: s.get("tol", a.tol, d.tol)?,
        step0: s.get_opt("step0", a.step0)?,
        record_history: false,
    })
}

fn alpha(s: &Settings, flag: Option<f64>) -> CliResult<f64> {
    let a = s.require("alpha", flag)?;
    if !(0.0..=1.0).contains(&a) {
        return Err(CliError::usage(format!("--alpha must lie in [0, 1], got {a}")));
    }
    Ok(a)
}

fn methods(names: &[String]) -> CliResult<Vec<Method>> {
    names
        .iter()
        .map(|n| n.trim().parse::<Method>().map_err(CliError::from))
        .collect()
}

fn to_bytes(f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> CliResult<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf).map_err(|e| CliError::io(format!("rendering output: {e}")))?;
    Ok(buf)
}

fn json_bytes<T: Serialize>(v: &T) -> CliResult<Vec<u8>> {
    let mut buf = serde_json::to_vec_pretty(v).map_err(|e| CliError::io(format!("rendering JSON: {e}")))?;
    buf.push(b'\n');
    Ok(buf)
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_stem().unwrap_or_default().to_os_string();
    name.push(suffix);
    path.with_file_name(name)
}

fn load_dataset(inputs: &mut Inputs, path: &Path) -> CliResult<Dataset> {
    let bytes = inputs.read(path)?;
    Ok(read_dataset(&bytes[..])?)
}

fn load_model(inputs: &mut Inputs, path: &Path) -> CliResult<PrecoderModel> {
    let bytes = inputs.read(path)?;
    Ok(read_model(&bytes[..])?)
}

fn report(ctx: &Context, outputs: Outputs, primary: &Path, inputs: Inputs) -> CliResult<()> {
    let config = ctx.settings.finish()?;
    let manifest = outputs.commit(primary, ctx.command, &config, inputs)?;
    eprintln!("wrote {} (manifest {})", primary.display(), manifest.display());
    Ok(())
}

pub fn gen_data(ctx: &Context, a: GenDataArgs) -> CliResult<()> {
    let s = &ctx.settings;
    let (d, power) = dims(s, &a.dims)?;
    let alpha = alpha(s, a.alpha)?;
    let count = s.get("count", a.count, 1000)?;
    let seed = s.get("seed", a.seed, 0)?;
    let csv = s.get("csv", a.csv.then_some(true), false)?;
    let solver = solver_options(s, &a.solver)?;
    let output = ctx.output(a.output, format!("dataset-a{alpha}-s{seed}.bin"))?;

    let ds = generate_dataset(count, alpha, power, d, seed, &solver)?;
    let mut out = Outputs::new();
    out.stage(&output, &to_bytes(|b| write_dataset(&ds, b))?)?;
    if csv {
        out.stage(&with_suffix(&output, ".csv"), &to_bytes(|b| write_dataset_csv(&ds, b))?)?;
    }
    report(ctx, out, &output, Inputs::new())
}

pub fn train(ctx: &Context, a: TrainArgs) -> CliResult<()> {
    let s = &ctx.settings;
    let d = TrainConfig::default();
    let cfg = TrainConfig {
        learning_rate: s.get("learning_rate", a.learning_rate, d.learning_rate)?,
        drop_factor: s.get("drop_factor", a.drop_factor, d.drop_factor)?,
        drop_period: s.get("drop_period", a.drop_period, d.drop_period)?,
        batch_size: s.get("batch_size", a.batch_size, d.batch_size)?,
        validation_frequency: s.get("validation_frequency", a.validation_frequency, d.validation_frequency)?,
        validation_patience: s.get("patience", a.patience, d.validation_patience)?,
        max_epochs: s.get("max_epochs", a.max_epochs, d.max_epochs)?,
        seed: s.get("seed", a.seed, d.seed)?,
        hidden_widths: s.get("hidden", a.hidden, d.hidden_widths.clone())?,
        ..d
    };
    let train_path: PathBuf = s.require("train", a.train)?;
    let val_path: PathBuf = s.require("val", a.val)?;

    let mut inputs = Inputs::new();
    let tr = load_dataset(&mut inputs, &train_path)?;
    let va = load_dataset(&mut inputs, &val_path)?;
    let output = ctx.output(a.output, format!("model-a{}.bin", tr.header.alpha))?;
    let (model, log) = train_model(&cfg, &tr, &va)?;
    eprintln!(
        "best validation MSE {:.4e} at iteration {} after {} epochs",
        log.best_val_mse(),
        log.best_iteration,
        log.epochs_run
    );
    let mut out = Outputs::new();
    out.stage(&output, &to_bytes(|b| write_model(&model, b))?)?;
    out.stage(&with_suffix(&output, ".log.json"), &json_bytes(&log)?)?;
    report(ctx, out, &output, inputs)
}

#[derive(Serialize)]
struct SolveReport<'a> {
    method: Method,
    alpha: f64,
    #[serde(rename = "P")]
    power: f64,
    channel: &'a ChannelPair,
    #[serde(rename = "Q1")]
    q1: &'a noma_secrecy::SymMatrix,
    #[serde(rename = "Q2")]
    q2: &'a noma_secrecy::SymMatrix,
    #[serde(rename = "R1")]
    r1: f64,
    #[serde(rename = "R2")]
    r2: f64,
}

pub fn solve(ctx: &Context, a: SolveArgs) -> CliResult<()> {
    let s = &ctx.settings;
    let alpha = alpha(s, a.alpha)?;
    let method: Method = s.get("method", a.method, "solver".to_string())?.parse()?;
    let solver = solver_options(s, &a.solver)?;
    let channel_path: Option<PathBuf> = s.get_opt("channel", a.channel)?;
    let mut inputs = Inputs::new();
    let (ch, power) = match channel_path {
        Some(p) => {
            let bytes = inputs.read(&p)?;
            let ch: ChannelPair = serde_json::from_slice(&bytes)
                .map_err(|e| CliError::usage(format!("channel file {}: {e}", p.display())))?;
            (ch, dims(s, &a.dims)?.1)
        }
        None => {
            let (d, power) = dims(s, &a.dims)?;
            let seed = s.get("seed", a.seed, 0)?;
            (sample_channel_pair(d.n_t, d.n1, d.n2, seed)?, power)
        }
    };
    let model_path: Option<PathBuf> = s.get_opt("model", a.model)?;
    let bank = match (method, model_path) {
        (Method::Dnn, Some(p)) => ModelBank::new(vec![load_model(&mut inputs, &p)?]),
        (Method::Dnn, None) => return Err(CliError::usage("the dnn method needs --model")),
        _ => ModelBank::default(),
    };
    let precoder = match method {
        Method::Solver => Precoder::Solver(solver),
        Method::Gsvd => Precoder::Gsvd,
        Method::Dnn => Precoder::Dnn(&bank),
    };
    let output = ctx.output(a.output, "solve.json".to_string())?;

    let q = precoder.covariances(&ch, power, alpha)?;
    let rates = evaluate_rates(&q, &ch)?;
    let result = SolveReport {
        method,
        alpha,
        power,
        channel: &ch,
        q1: &q.q1,
        q2: &q.q2,
        r1: rates.r1,
        r2: rates.r2,
    };
    let bytes = json_bytes(&result)?;
    print!("{}", String::from_utf8_lossy(&bytes));
    let mut out = Outputs::new();
    out.stage(&output, &bytes)?;
    report(ctx, out, &output, inputs)
}

pub fn region(ctx: &Context, a: RegionArgs) -> CliResult<()> {
    let s = &ctx.settings;
    let (d, power) = dims(s, &a.dims)?;
    let alphas = parse_alpha_grid(&s.get("alphas", a.alphas, "0:0.1:1".to_string())?)?;
    let count = s.get("channels", a.channels, 1000)?;
    let seed = s.get("seed", a.seed, 0)?;
    let solver = solver_options(s, &a.solver)?;
    let model_paths: Vec<PathBuf> = s.get("models", a.models, Vec::new())?;
    let default_methods = if model_paths.is_empty() {
        vec!["solver".to_string(), "gsvd".to_string()]
    } else {
        vec!["solver".to_string(), "gsvd".to_string(), "dnn".to_string()]
    };
    let methods = methods(&s.get("methods", a.methods, default_methods)?)?;
    let output = ctx.output(a.output, "region.csv".to_string())?;
    if count == 0 {
        return Err(CliError::usage("--channels must be at least 1"));
    }

    let mut inputs = Inputs::new();
    let models = model_paths
        .iter()
        .map(|p| load_model(&mut inputs, p))
        .collect::<CliResult<Vec<_>>>()?;
    if methods.contains(&Method::Dnn) && models.is_empty() {
        return Err(CliError::usage("the dnn method needs --models, one per alpha"));
    }
    let bank = ModelBank::new(models);
    let channels = sample_set(d, seed, count)?;
    let mut curves = Vec::new();
    for m in &methods {
        let p = match m {
            Method::Solver => Precoder::Solver(solver),
            Method::Gsvd => Precoder::Gsvd,
            Method::Dnn => Precoder::Dnn(&bank),
        };
        curves.push(region_curve(&p, &channels, power, &alphas, seed)?);
    }
    if let Some(reference) = curves.iter().find(|c| c.method == Method::Solver) {
        for c in curves.iter().filter(|c| c.method != Method::Solver) {
            match capacity_fraction(c, reference) {
                Ok(f) => eprintln!("{}: {f:.2}% of the solver sum rate", c.method),
                Err(e) => eprintln!("{}: no capacity fraction ({e})", c.method),
            }
        }
    }
    let mut out = Outputs::new();
    out.stage(&output, &to_bytes(|b| write_region_csv(&curves, b))?)?;
    report(ctx, out, &output, inputs)
}

pub fn bench(ctx: &Context, a: BenchArgs) -> CliResult<()> {
    let s = &ctx.settings;
    let (d, power) = dims(s, &a.dims)?;
    let defaults = BenchOptions::default();
    let opts = BenchOptions {
        power,
        alpha: s.get("alpha", a.alpha, defaults.alpha)?,
        repetitions: s.get("reps", a.reps, defaults.repetitions)?,
        warmup: s.get("warmup", a.warmup, defaults.warmup)?,
    };
    let count = s.get("channels", a.channels, 50)?;
    let seed = s.get("seed", a.seed, 0)?;
    let solver = solver_options(s, &a.solver)?;
    let methods = methods(&s.get("methods", a.methods, vec!["solver".into(), "dnn".into(), "gsvd".into()])?)?;
    let model_path: Option<PathBuf> = s.get_opt("model", a.model)?;
    let output = ctx.output(a.output, "bench.json".to_string())?;
    if count == 0 {
        return Err(CliError::usage("--channels must be at least 1"));
    }

    let mut inputs = Inputs::new();
    let model = match model_path {
        Some(p) => load_model(&mut inputs, &p)?,
        None => PrecoderModel::new(ModelContext::new(d.n_t, opts.alpha, power), seed),
    };
    let bank = ModelBank::new(vec![model]);
    let precoders: Vec<Precoder<'_>> = methods
        .iter()
        .map(|m| match m {
            Method::Solver => Precoder::Solver(solver),
            Method::Gsvd => Precoder::Gsvd,
            Method::Dnn => Precoder::Dnn(&bank),
        })
        .collect();
    let channels = sample_set(d, seed, count)?;
    let results = bench_methods(&precoders, &channels, &opts)?;
    for r in &results {
        eprintln!(
            "{}: mean {:.4} ms, p50 {:.4} ms, p95 {:.4} ms over {} reps",
            r.method, r.mean_ms, r.p50_ms, r.p95_ms, r.reps
        );
    }
    let mut out = Outputs::new();
    out.stage(&output, &json_bytes(&results)?)?;
    report(ctx, out, &output, inputs)
}
