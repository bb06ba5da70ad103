//! Rate-region sweeps, capacity fractions, label error and latency
//! benchmarks.
//!
//! Every reported rate is recomputed from the produced covariances on the
//! original channels; methods never report their own rates.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::channels::ChannelPair;
use crate::error::{Error, Result};
use crate::features::Dataset;
use crate::gsvd::gsvd_precode;
use crate::mlp::{dataset_mse, FrozenModel, PrecoderModel};
use crate::par;
use crate::pipeline::{split_solve, SplitConfig};
use crate::secrecy_rates::{evaluate_rates, CovariancePair};
use crate::wiretap::PgaOptions;

/// Split factors closer than this are treated as the same grid point.
pub const ALPHA_MATCH: f64 = 1e-9;
/// Reference sums below this are skipped by [`capacity_fraction`].
pub const REFERENCE_FLOOR: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Solver,
    Dnn,
    Gsvd,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Solver => "solver",
            Method::Dnn => "dnn",
            Method::Gsvd => "gsvd",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "solver" => Ok(Method::Solver),
            "dnn" => Ok(Method::Dnn),
            "gsvd" => Ok(Method::Gsvd),
            other => Err(Error::InvalidInput(format!(
                "unknown method {other:?} (expected solver, dnn or gsvd)"
            ))),
        }
    }
}

/// One trained model per split factor.
///
/// Predictions go through half-precision inference copies of the models.
#[derive(Clone, Debug, Default)]
pub struct ModelBank {
    models: Vec<PrecoderModel>,
    frozen: Vec<FrozenModel>,
}

impl ModelBank {
    pub fn new(models: Vec<PrecoderModel>) -> Self {
        let frozen = models.iter().map(FrozenModel::new).collect();
        ModelBank { models, frozen }
    }

    pub fn models(&self) -> &[PrecoderModel] {
        &self.models
    }

    fn index_for(&self, alpha: f64) -> Result<usize> {
        self.models
            .iter()
            .position(|m| (m.context.alpha - alpha).abs() <= ALPHA_MATCH)
            .ok_or_else(|| Error::InvalidInput(format!("no model trained for alpha = {alpha}")))
    }

    pub fn for_alpha(&self, alpha: f64) -> Result<&PrecoderModel> {
        Ok(&self.models[self.index_for(alpha)?])
    }

    pub fn frozen_for_alpha(&self, alpha: f64) -> Result<&FrozenModel> {
        Ok(&self.frozen[self.index_for(alpha)?])
    }
}

/// A way of producing a covariance pair from a channel.
#[derive(Clone, Copy, Debug)]
pub enum Precoder<'a> {
    Solver(PgaOptions),
    Gsvd,
    Dnn(&'a ModelBank),
}

impl Precoder<'_> {
    pub fn method(&self) -> Method {
        match self {
            Precoder::Solver(_) => Method::Solver,
            Precoder::Gsvd => Method::Gsvd,
            Precoder::Dnn(_) => Method::Dnn,
        }
    }

    pub fn covariances(&self, ch: &ChannelPair, power: f64, alpha: f64) -> Result<CovariancePair> {
        match self {
            Precoder::Solver(opts) => {
                let cfg = SplitConfig {
                    alpha,
                    power,
                    solver: *opts,
                };
                Ok(split_solve(ch, &cfg)?.covariances)
            }
            Precoder::Gsvd => gsvd_precode(ch, power, alpha),
            Precoder::Dnn(bank) => {
                let model = bank.frozen_for_alpha(alpha)?;
                if model.context.power != power {
                    return Err(Error::ContextMismatch(format!(
                        "model for alpha = {alpha} was trained with P = {}, evaluating at P = {power}",
                        model.context.power
                    )));
                }
                model.predict_covariances(ch)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionPoint {
    pub alpha: f64,
    pub r1: f64,
    pub r2: f64,
}

impl RegionPoint {
    pub fn sum(&self) -> f64 {
        self.r1 + self.r2
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionMeta {
    pub n_t: usize,
    pub n1: usize,
    pub n2: usize,
    #[serde(rename = "P")]
    pub power: f64,
    pub n_channels: usize,
    pub seed: u64,
}

/// Mean rate pair per split factor over a channel set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionCurve {
    pub method: Method,
    pub points: Vec<RegionPoint>,
    pub meta: RegionMeta,
}

/// Sweeps `alphas` for one method over `channels`.
///
/// `seed` only labels the curve; it should be the seed the channels were
/// drawn from so curves from different runs can be matched.
pub fn region_curve(
    precoder: &Precoder<'_>,
    channels: &[ChannelPair],
    power: f64,
    alphas: &[f64],
    seed: u64,
) -> Result<RegionCurve> {
    let first = channels
        .first()
        .ok_or_else(|| Error::InvalidInput("region needs at least one channel".into()))?;
    let dims = first.dims();
    if channels.iter().any(|c| c.dims() != dims) {
        return Err(Error::Shape("channels in a region sweep must share dimensions".into()));
    }
    if alphas.is_empty() {
        return Err(Error::InvalidInput("region needs at least one alpha".into()));
    }
    if let Precoder::Dnn(bank) = precoder {
        for &a in alphas {
            bank.for_alpha(a)?;
        }
    }
    let n = channels.len() as f64;
    let mut points = Vec::with_capacity(alphas.len());
    for &alpha in alphas {
        let rates = par::map_indexed(channels.len(), |i| {
            let q = precoder.covariances(&channels[i], power, alpha)?;
            evaluate_rates(&q, &channels[i])
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        let (s1, s2) = rates.iter().fold((0.0, 0.0), |(a, b), r| (a + r.r1, b + r.r2));
        points.push(RegionPoint {
            alpha,
            r1: s1 / n,
            r2: s2 / n,
        });
    }
    Ok(RegionCurve {
        method: precoder.method(),
        points,
        meta: RegionMeta {
            n_t: dims.n_t,
            n1: dims.n1,
            n2: dims.n2,
            power,
            n_channels: channels.len(),
            seed,
        },
    })
}

/// Mean over split factors of the sum-rate ratio `test / reference`, in
/// percent. Split factors where the reference sum is below
/// [`REFERENCE_FLOOR`] are skipped.
pub fn capacity_fraction(test: &RegionCurve, reference: &RegionCurve) -> Result<f64> {
    if test.meta != reference.meta {
        return Err(Error::ContextMismatch(format!(
            "curve metadata differ: {:?} vs {:?}",
            test.meta, reference.meta
        )));
    }
    if test.points.len() != reference.points.len()
        || test
            .points
            .iter()
            .zip(&reference.points)
            .any(|(a, b)| (a.alpha - b.alpha).abs() > ALPHA_MATCH)
    {
        return Err(Error::ContextMismatch("curves use different alpha grids".into()));
    }
    let ratios: Vec<f64> = test
        .points
        .iter()
        .zip(&reference.points)
        .filter(|(_, r)| r.sum() >= REFERENCE_FLOOR)
        .map(|(t, r)| t.sum() / r.sum())
        .collect();
    if ratios.is_empty() {
        return Err(Error::InvalidInput("reference curve has no positive sum rate".into()));
    }
    Ok(100.0 * ratios.iter().sum::<f64>() / ratios.len() as f64)
}

/// Mean squared error between raw network outputs and stored labels.
pub fn label_mse(model: &PrecoderModel, ds: &Dataset) -> Result<f64> {
    let (c, h) = (&model.context, &ds.header);
    if c.n_t != h.n_t || c.alpha != h.alpha || c.power != h.power {
        return Err(Error::ContextMismatch(format!(
            "model (n_t={}, alpha={}, P={}) vs dataset (n_t={}, alpha={}, P={})",
            c.n_t, c.alpha, c.power, h.n_t, h.alpha, h.power
        )));
    }
    dataset_mse(model, ds)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub method: Method,
    pub n_t: usize,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub reps: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchOptions {
    pub power: f64,
    pub alpha: f64,
    pub repetitions: usize,
    pub warmup: usize,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions {
            power: 10.0,
            alpha: 0.5,
            repetitions: 100,
            warmup: 5,
        }
    }
}

/// Times covariance production per method.
///
/// Repetition `r` runs every method back to back on channel
/// `r mod channels.len()`, so all methods see the same workload. Calls run
/// on the current thread.
pub fn bench_methods(
    methods: &[Precoder<'_>],
    channels: &[ChannelPair],
    opts: &BenchOptions,
) -> Result<Vec<BenchResult>> {
    if opts.repetitions < 30 {
        return Err(Error::InvalidInput(format!(
            "benchmarks need at least 30 repetitions, got {}",
            opts.repetitions
        )));
    }
    let first = channels
        .first()
        .ok_or_else(|| Error::InvalidInput("benchmark needs at least one channel".into()))?;
    let n_t = first.n_t();
    for r in 0..opts.warmup {
        let ch = &channels[r % channels.len()];
        for m in methods {
            std::hint::black_box(m.covariances(ch, opts.power, opts.alpha)?);
        }
    }
    let mut samples = vec![Vec::with_capacity(opts.repetitions); methods.len()];
    for r in 0..opts.repetitions {
        let ch = &channels[r % channels.len()];
        for (m, out) in methods.iter().zip(&mut samples) {
            let t = Instant::now();
            let q = m.covariances(ch, opts.power, opts.alpha)?;
            out.push(t.elapsed().as_secs_f64() * 1e3);
            std::hint::black_box(q);
        }
    }
    Ok(methods
        .iter()
        .zip(samples)
        .map(|(m, mut s)| {
            s.sort_by(f64::total_cmp);
            BenchResult {
                method: m.method(),
                n_t,
                mean_ms: s.iter().sum::<f64>() / s.len() as f64,
                p50_ms: percentile(&s, 0.50),
                p95_ms: percentile(&s, 0.95),
                reps: s.len(),
            }
        })
        .collect())
}

/// Nearest-rank percentile of sorted data.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    let rank = (p * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Region curves as CSV: `#` metadata lines, then `method,alpha,R1,R2`.
pub fn write_region_csv<W: Write>(curves: &[RegionCurve], mut w: W) -> std::io::Result<()> {
    for c in curves {
        let m = &c.meta;
        writeln!(
            w,
            "# method={} n_t={} n1={} n2={} P={} n_channels={} seed={}",
            c.method, m.n_t, m.n1, m.n2, m.power, m.n_channels, m.seed
        )?;
    }
    writeln!(w, "method,alpha,R1,R2")?;
    for c in curves {
        for p in &c.points {
            writeln!(w, "{},{},{},{}", c.method, p.alpha, p.r1, p.r2)?;
        }
    }
    w.flush()
}

pub fn export_region_csv(curves: &[RegionCurve], path: &Path) -> Result<()> {
    if curves.is_empty() {
        return Err(Error::InvalidInput("no curves to export".into()));
    }
    let f = File::create(path).map_err(|e| Error::io("creating region file", path, e))?;
    write_region_csv(curves, BufWriter::new(f)).map_err(|e| Error::io("writing region file", path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channels::{sample_set, ChannelDims};
    use crate::features::generate_dataset;
    use crate::mlp::ModelContext;

    fn meta() -> RegionMeta {
        RegionMeta {
            n_t: 2,
            n1: 1,
            n2: 1,
            power: 10.0,
            n_channels: 3,
            seed: 1,
        }
    }

    fn curve(method: Method, pts: &[(f64, f64, f64)]) -> RegionCurve {
        RegionCurve {
            method,
            points: pts
                .iter()
                .map(|&(alpha, r1, r2)| RegionPoint { alpha, r1, r2 })
                .collect(),
            meta: meta(),
        }
    }

    #[test]
    fn self_fraction_is_exactly_100() {
        let c = curve(Method::Solver, &[(0.0, 0.0, 1.3), (0.5, 0.71, 0.42), (1.0, 1.1, 0.0)]);
        assert_eq!(capacity_fraction(&c, &c).unwrap(), 100.0);
    }

    #[test]
    fn zero_curve_is_zero_percent() {
        let r = curve(Method::Solver, &[(0.0, 0.0, 1.3), (1.0, 1.1, 0.0)]);
        let t = curve(Method::Dnn, &[(0.0, 0.0, 0.0), (1.0, 0.0, 0.0)]);
        assert_eq!(capacity_fraction(&t, &r).unwrap(), 0.0);
    }

    #[test]
    fn zero_reference_points_skipped() {
        let r = curve(Method::Solver, &[(0.0, 0.0, 0.0), (1.0, 2.0, 0.0)]);
        let t = curve(Method::Dnn, &[(0.0, 0.5, 0.0), (1.0, 1.0, 0.0)]);
        assert_eq!(capacity_fraction(&t, &r).unwrap(), 50.0);
    }

    #[test]
    fn mismatched_meta_rejected() {
        let r = curve(Method::Solver, &[(0.0, 0.0, 1.0)]);
        let mut t = r.clone();
        t.meta.power = 5.0;
        assert!(capacity_fraction(&t, &r).is_err());
    }

    #[test]
    fn solver_curve_endpoints() {
        let chs = sample_set(ChannelDims::new(2, 1, 1).unwrap(), 3, 4).unwrap();
        let c = region_curve(&Precoder::Solver(PgaOptions::default()), &chs, 10.0, &[0.0, 1.0], 3).unwrap();
        assert_eq!(c.points[0].r1, 0.0);
        assert_eq!(c.points[1].r2, 0.0);
        assert_eq!(c.meta.n_channels, 4);
    }

    #[test]
    fn missing_model_rejected() {
        let chs = sample_set(ChannelDims::new(2, 1, 1).unwrap(), 3, 2).unwrap();
        let bank = ModelBank::new(vec![PrecoderModel::new(ModelContext::new(2, 0.5, 10.0), 0)]);
        assert!(region_curve(&Precoder::Dnn(&bank), &chs, 10.0, &[0.5], 3).is_ok());
        assert!(region_curve(&Precoder::Dnn(&bank), &chs, 10.0, &[0.3], 3).is_err());
    }

    #[test]
    fn zero_model_mse_is_label_power() {
        let ds = generate_dataset(
            8,
            0.5,
            10.0,
            ChannelDims::new(2, 1, 1).unwrap(),
            5,
            &PgaOptions::default(),
        )
        .unwrap();
        let m = PrecoderModel::zeros(&[24, 4, 6], ModelContext::new(2, 0.5, 10.0)).unwrap();
        let expect: f64 = ds.samples.iter().flat_map(|s| &s.labels).map(|x| x * x).sum::<f64>() / (8.0 * 6.0);
        assert!((label_mse(&m, &ds).unwrap() - expect).abs() <= 1e-14 * expect.max(1.0));

        let other = PrecoderModel::zeros(&[24, 4, 6], ModelContext::new(2, 0.3, 10.0)).unwrap();
        assert!(matches!(label_mse(&other, &ds), Err(Error::ContextMismatch(_))));
    }

    #[test]
    fn csv_layout() {
        let a = curve(Method::Solver, &[(0.0, 0.0, 1.25), (1.0, 0.5, 0.0)]);
        let b = curve(Method::Gsvd, &[(0.0, 0.0, 0.75), (1.0, 0.25, 0.0)]);
        let mut out = Vec::new();
        write_region_csv(&[a, b], &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[0].starts_with("# method=solver"));
        assert_eq!(lines[2], "method,alpha,R1,R2");
        assert_eq!(lines[3], "solver,0,0,1.25");
        assert_eq!(lines.len(), 2 + 1 + 4);
    }

    #[test]
    fn percentile_nearest_rank() {
        let s: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(percentile(&s, 0.5), 50.0);
        assert_eq!(percentile(&s, 0.95), 95.0);
        assert_eq!(percentile(&[3.0], 0.95), 3.0);
    }

    #[test]
    fn bench_requires_enough_reps() {
        let chs = sample_set(ChannelDims::new(2, 1, 1).unwrap(), 3, 2).unwrap();
        let opts = BenchOptions {
            repetitions: 10,
            ..BenchOptions::default()
        };
        assert!(bench_methods(&[Precoder::Gsvd], &chs, &opts).is_err());
    }
}
