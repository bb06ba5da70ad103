//! Network inputs, label packing and labeled dataset files.
//!
//! Input features are built from the Gram matrices `HᵢᵀHᵢ`, which makes the
//! feature length depend on `n_t` only. With `G = [H1ᵀH1  H2ᵀH2]`
//! (`n_t × 2n_t`) the input is `[0.05·vec(G), 0.002·vec(GᵀG)]`, column-major,
//! which keeps nearly all entries inside `[−1, 1]` for unit-variance channels.
//!
//! Dataset file layout: one line of JSON header terminated by `\n`, followed
//! by `count` records of little-endian `f64`: `features | labels | R1 | R2`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::channels::{sample_indexed, ChannelDims, ChannelPair};
use crate::error::{Error, Result};
use crate::matcore::{gram, project_psd, Mat, SymMatrix};
use crate::par;
use crate::pipeline::{split_solve, SplitConfig};
use crate::secrecy_rates::{CovariancePair, RatePair};
use crate::wiretap::PgaOptions;

pub const V1_SCALE: f64 = 0.05;
pub const V2_SCALE: f64 = 0.002;
/// Bumped whenever the feature map changes; stored in model files.
pub const FEATURE_VERSION: u32 = 1;
pub const DATASET_FORMAT: &str = "noma-secrecy-dataset";
pub const DATASET_VERSION: u32 = 1;

pub fn feature_len(n_t: usize) -> usize {
    6 * n_t * n_t
}

pub fn label_len(n_t: usize) -> usize {
    n_t * (n_t + 1)
}

/// Network input for one channel pair; length `6·n_t²`.
pub fn build_input(ch: &ChannelPair) -> Vec<f64> {
    let g = gram(ch.h1())
        .as_mat()
        .hcat(gram(ch.h2()).as_mat())
        .expect("Gram matrices share n_t rows");
    let gtg = g.t_matmul(&g).expect("conformal");
    let mut v = Vec::with_capacity(feature_len(ch.n_t()));
    v.extend(g.vec_col_major().into_iter().map(|x| V1_SCALE * x));
    v.extend(gtg.vec_col_major().into_iter().map(|x| V2_SCALE * x));
    v
}

/// Upper-triangular entries of `Q1` then `Q2`, row-major.
pub fn pack_labels(q: &CovariancePair) -> Vec<f64> {
    let n = q.n_t();
    let mut out = Vec::with_capacity(label_len(n));
    for m in [&q.q1, &q.q2] {
        for i in 0..n {
            for j in i..n {
                out.push(m[(i, j)]);
            }
        }
    }
    out
}

/// `n_t` such that `n_t(n_t + 1) = len`.
pub fn n_t_from_label_len(len: usize) -> Result<usize> {
    let mut n = 0;
    while label_len(n) < len {
        n += 1;
    }
    if n == 0 || label_len(n) != len {
        return Err(Error::Shape(format!(
            "label length {len} is not n_t(n_t+1) for any n_t ≥ 1"
        )));
    }
    Ok(n)
}

/// Mirrors packed labels into symmetric matrices and repairs them: negative
/// eigenvalues are clipped per matrix, then both matrices are scaled by a
/// common factor if their summed trace exceeds `power`.
pub fn unpack_labels(labels: &[f64], power: f64) -> Result<CovariancePair> {
    let n = n_t_from_label_len(labels.len())?;
    if labels.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite);
    }
    let half = labels.len() / 2;
    let mirror = |chunk: &[f64]| {
        let mut m = Mat::zeros(n, n);
        let mut k = 0;
        for i in 0..n {
            for j in i..n {
                m[(i, j)] = chunk[k];
                m[(j, i)] = chunk[k];
                k += 1;
            }
        }
        SymMatrix::new(m)
    };
    let q1 = project_psd(&mirror(&labels[..half])?, f64::INFINITY);
    let q2 = project_psd(&mirror(&labels[half..])?, f64::INFINITY);
    let budget = power.max(0.0);
    let total = q1.trace() + q2.trace();
    let (q1, q2) = if total > budget {
        let s = if total > 0.0 { budget / total } else { 0.0 };
        (q1.scaled(s), q2.scaled(s))
    } else {
        (q1, q2)
    };
    Ok(CovariancePair { q1, q2, power })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub features: Vec<f64>,
    pub labels: Vec<f64>,
    pub rates: RatePair,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub format: String,
    pub version: u32,
    pub n_t: usize,
    pub n1: usize,
    pub n2: usize,
    pub alpha: f64,
    #[serde(rename = "P")]
    pub power: f64,
    pub seed: u64,
    pub count: usize,
}

impl DatasetHeader {
    pub fn dims(&self) -> ChannelDims {
        ChannelDims {
            n_t: self.n_t,
            n1: self.n1,
            n2: self.n2,
        }
    }

    fn record_len(&self) -> usize {
        feature_len(self.n_t) + label_len(self.n_t) + 2
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub samples: Vec<LabeledSample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn feature_len(&self) -> usize {
        feature_len(self.header.n_t)
    }

    pub fn label_len(&self) -> usize {
        label_len(self.header.n_t)
    }
}

/// Labels `count` channels (indices `0..count` of the set `seed`) with the
/// power-splitting solver.
pub fn generate_dataset(
    count: usize,
    alpha: f64,
    power: f64,
    dims: ChannelDims,
    seed: u64,
    solver: &PgaOptions,
) -> Result<Dataset> {
    if count == 0 {
        return Err(Error::InvalidInput("dataset needs at least one sample".into()));
    }
    let dims = ChannelDims::new(dims.n_t, dims.n1, dims.n2)?;
    let cfg = SplitConfig {
        alpha,
        power,
        solver: *solver,
    };
    cfg.validate()?;
    let samples = par::map_indexed(count, |i| -> Result<LabeledSample> {
        let ch = sample_indexed(dims, seed, i as u64)?;
        let sol = split_solve(&ch, &cfg)?;
        Ok(LabeledSample {
            features: build_input(&ch),
            labels: pack_labels(&sol.covariances),
            rates: sol.rates,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        header: DatasetHeader {
            format: DATASET_FORMAT.to_string(),
            version: DATASET_VERSION,
            n_t: dims.n_t,
            n1: dims.n1,
            n2: dims.n2,
            alpha,
            power,
            seed,
            count,
        },
        samples,
    })
}

pub fn write_dataset<W: Write>(ds: &Dataset, mut w: W) -> std::io::Result<()> {
    let header = serde_json::to_string(&ds.header).map_err(std::io::Error::other)?;
    w.write_all(header.as_bytes())?;
    w.write_all(b"\n")?;
    for s in &ds.samples {
        for x in s.features.iter().chain(&s.labels).chain([&s.rates.r1, &s.rates.r2]) {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    w.flush()
}

pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io("creating dataset file", path, e))?;
    write_dataset(ds, BufWriter::new(f)).map_err(|e| Error::io("writing dataset", path, e))
}

pub fn read_dataset<R: Read>(r: R) -> Result<Dataset> {
    let bad = |detail: String| Error::Format {
        what: "dataset",
        detail,
    };
    let mut reader = BufReader::new(r);
    let mut line = Vec::new();
    reader
        .read_until(b'\n', &mut line)
        .map_err(|e| bad(format!("reading header: {e}")))?;
    if line.last() != Some(&b'\n') {
        return Err(bad("missing header line".into()));
    }
    let header: DatasetHeader =
        serde_json::from_slice(&line[..line.len() - 1]).map_err(|e| bad(format!("header: {e}")))?;
    if header.format != DATASET_FORMAT {
        return Err(bad(format!("unexpected format tag {:?}", header.format)));
    }
    if header.version != DATASET_VERSION {
        return Err(bad(format!(
            "version {} not supported (expected {DATASET_VERSION})",
            header.version
        )));
    }
    ChannelDims::new(header.n_t, header.n1, header.n2)?;
    let rec = header.record_len();
    let mut buf = vec![0u8; rec * 8];
    let mut samples = Vec::with_capacity(header.count);
    let (fl, ll) = (feature_len(header.n_t), label_len(header.n_t));
    for i in 0..header.count {
        reader
            .read_exact(&mut buf)
            .map_err(|e| bad(format!("record {i} of {}: {e}", header.count)))?;
        let vals: Vec<f64> = buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        samples.push(LabeledSample {
            features: vals[..fl].to_vec(),
            labels: vals[fl..fl + ll].to_vec(),
            rates: RatePair {
                r1: vals[fl + ll],
                r2: vals[fl + ll + 1],
            },
        });
    }
    let mut extra = [0u8; 1];
    if reader.read(&mut extra).map_err(|e| bad(e.to_string()))? != 0 {
        return Err(bad("trailing bytes after the last record".into()));
    }
    Ok(Dataset { header, samples })
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let f = File::open(path).map_err(|e| Error::io("opening dataset", path, e))?;
    read_dataset(f)
}

/// CSV view: header row with column names, one row per sample.
pub fn write_dataset_csv<W: Write>(ds: &Dataset, mut w: W) -> std::io::Result<()> {
    let fl = ds.feature_len();
    let ll = ds.label_len();
    let mut cols: Vec<String> = (0..fl).map(|i| format!("v{i}")).collect();
    cols.extend((0..ll).map(|i| format!("label{i}")));
    cols.push("R1".into());
    cols.push("R2".into());
    writeln!(w, "{}", cols.join(","))?;
    for s in &ds.samples {
        let row: Vec<String> = s
            .features
            .iter()
            .chain(&s.labels)
            .chain([&s.rates.r1, &s.rates.r2])
            .map(|x| format!("{x:e}"))
            .collect();
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matcore::Mat;

    #[test]
    fn scalar_feature_example() {
        let ch = ChannelPair::new(Mat::from_rows(&[[1.0]]).unwrap(), Mat::from_rows(&[[2.0]]).unwrap()).unwrap();
        let v = build_input(&ch);
        let expected = [0.05, 0.2, 0.002, 0.008, 0.008, 0.032];
        assert_eq!(v.len(), 6);
        for (a, b) in v.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15, "{v:?}");
        }
    }

    #[test]
    fn zero_channels_give_zero_features() {
        let ch = ChannelPair::new(Mat::zeros(1, 3), Mat::zeros(2, 3)).unwrap();
        let v = build_input(&ch);
        assert_eq!(v.len(), 54);
        assert!(v.iter().all(|&x| x == 0.0));
        assert_eq!(feature_len(2), 24);
    }

    #[test]
    fn packing_example() {
        let q = CovariancePair::new(
            SymMatrix::from_diag(&[1.0, 2.0]),
            SymMatrix::from_rows(&[[0.5, 0.1], [0.1, 0.3]]).unwrap(),
            10.0,
        )
        .unwrap();
        let l = pack_labels(&q);
        assert_eq!(l, vec![1.0, 0.0, 2.0, 0.5, 0.1, 0.3]);
        assert_eq!(unpack_labels(&l, 10.0).unwrap(), q);
    }

    #[test]
    fn wrong_label_length_rejected() {
        assert!(matches!(unpack_labels(&[1.0; 5], 10.0), Err(Error::Shape(_))));
        assert!(unpack_labels(&[], 10.0).is_err());
        assert_eq!(n_t_from_label_len(12).unwrap(), 3);
    }

    #[test]
    fn unpack_repairs_negative_eigenvalue() {
        // Q1 = [[1, 1.2], [1.2, 1]] has eigenvalue −0.2.
        let labels = [1.0, 1.2, 1.0, 0.5, 0.0, 0.5];
        let pair = unpack_labels(&labels, 10.0).unwrap();
        assert!(pair.q1.min_eigenvalue().unwrap() >= -1e-12);
        pair.check_feasible().unwrap();
    }

    #[test]
    fn unpack_scales_jointly() {
        let labels = [6.0, 0.0, 6.0, 4.0, 0.0, 4.0];
        let pair = unpack_labels(&labels, 10.0).unwrap();
        assert!((pair.total_trace() - 10.0).abs() < 1e-12);
        // Common factor 0.5.
        assert!((pair.q1[(0, 0)] - 3.0).abs() < 1e-12);
        assert!((pair.q2[(1, 1)] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn truncated_dataset_rejected() {
        let dims = ChannelDims::new(1, 1, 1).unwrap();
        let ds = generate_dataset(3, 0.5, 10.0, dims, 1, &PgaOptions::default()).unwrap();
        let mut bytes = Vec::new();
        write_dataset(&ds, &mut bytes).unwrap();
        assert_eq!(read_dataset(&bytes[..]).unwrap(), ds);
        let cut = &bytes[..bytes.len() - 4];
        assert!(matches!(read_dataset(cut), Err(Error::Format { .. })));
    }
}
