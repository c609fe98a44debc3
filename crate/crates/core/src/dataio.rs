//! Labeled feature datasets: the comma-separated file format, a synthetic
//! generator with known ground truth, and seeded train/holdout splitting.
//!
//! Dataset files are UTF-8 with LF line endings. The header is
//! `feat_0,...,feat_{D-1},mos,noi,col,dis,loud` and every following line holds
//! `D + 5` decimal numbers. Values are written with Rust's shortest
//! round-trip formatting, so `load(write(data)) == data` bit for bit.
//!
//! The ground-truth sidecar written next to synthetic data is a key-value text
//! file (`key=value`, one per line) with `feature_dim`, `label_dims`, `seed`,
//! `sample_count`, `mean_weights` (5×D, row-major, comma-separated) and
//! `noise_cov` (5×5, row-major, comma-separated).

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::gaussian::{sample_with, CovarianceMatrix, GaussianParams, MeanVector, QUALITY_DIMS};
use crate::linalg::Matrix;

/// Canonical label order.
pub const LABEL_NAMES: [&str; QUALITY_DIMS] = ["mos", "noi", "col", "dis", "loud"];

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub features: Vec<f64>,
    pub labels: Vec<f64>,
}

impl LabeledSample {
    pub fn new(features: Vec<f64>, labels: Vec<f64>) -> Result<Self> {
        if labels.len() != QUALITY_DIMS {
            return Err(Error::InvalidInput(format!(
                "expected {QUALITY_DIMS} labels, got {}",
                labels.len()
            )));
        }
        if features.iter().chain(&labels).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("sample contains a non-finite value".into()));
        }
        Ok(Self { features, labels })
    }

    pub fn feature_dim(&self) -> usize {
        self.features.len()
    }
}

/// Result of [`load_dataset`]: samples plus the number of out-of-scale labels
/// tolerated in lenient mode.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedDataset {
    pub samples: Vec<LabeledSample>,
    pub out_of_range_labels: usize,
}

pub fn label_index(name: &str) -> Option<usize> {
    let name = name.trim().to_ascii_lowercase();
    LABEL_NAMES.iter().position(|&n| n == name)
}

fn header(dim: usize) -> String {
    let mut cols: Vec<String> = (0..dim).map(|i| format!("feat_{i}")).collect();
    cols.extend(LABEL_NAMES.iter().map(|s| s.to_string()));
    cols.join(",")
}

pub fn write_dataset(path: impl AsRef<Path>, data: &[LabeledSample]) -> Result<()> {
    let dim = data.first().map_or(0, |s| s.feature_dim());
    if let Some(bad) = data.iter().position(|s| s.feature_dim() != dim) {
        return Err(Error::Schema(format!(
            "sample {bad} has {} features, expected {dim}",
            data[bad].feature_dim()
        )));
    }
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "{}", header(dim))?;
    let mut line = String::new();
    for s in data {
        line.clear();
        for (i, v) in s.features.iter().chain(&s.labels).enumerate() {
            if i > 0 {
                line.push(',');
            }
            line.push_str(&format!("{v:?}"));
        }
        line.push('\n');
        w.write_all(line.as_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a dataset file. In strict mode a label outside `[1, 5]` is an error;
/// otherwise such labels are counted in [`LoadedDataset::out_of_range_labels`].
pub fn load_dataset(path: impl AsRef<Path>, strict: bool) -> Result<LoadedDataset> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut lines = reader.lines();
    let head = match lines.next() {
        Some(h) => h?,
        None => return Err(Error::Parse { line: 1, message: "empty file (missing header)".into() }),
    };
    let columns: Vec<&str> = head.trim_end_matches('\r').split(',').map(str::trim).collect();
    if columns.len() < QUALITY_DIMS {
        return Err(Error::Schema(format!(
            "header has {} columns, need at least the {QUALITY_DIMS} label columns",
            columns.len()
        )));
    }
    let dim = columns.len() - QUALITY_DIMS;
    for (i, col) in columns[..dim].iter().enumerate() {
        if *col != format!("feat_{i}") {
            return Err(Error::Schema(format!("header column {i} is `{col}`, expected `feat_{i}`")));
        }
    }
    for (col, expected) in columns[dim..].iter().zip(LABEL_NAMES) {
        if !col.eq_ignore_ascii_case(expected) {
            return Err(Error::Schema(format!("label column `{col}` should be `{expected}`")));
        }
    }

    let mut samples = Vec::new();
    let mut out_of_range = 0;
    for (idx, line) in lines.enumerate() {
        let line_no = idx + 2;
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != columns.len() {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected {} fields, found {}", columns.len(), fields.len()),
            });
        }
        let mut values = Vec::with_capacity(fields.len());
        for (c, f) in fields.iter().enumerate() {
            let v: f64 = f.trim().parse().map_err(|_| Error::Parse {
                line: line_no,
                message: format!("column {} (`{}`) is not a number: `{f}`", c, columns[c]),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("column {} is not finite", columns[c]),
                });
            }
            values.push(v);
        }
        let labels = values.split_off(dim);
        for (name, &v) in LABEL_NAMES.iter().zip(&labels) {
            if !(1.0..=5.0).contains(&v) {
                if strict {
                    return Err(Error::Parse {
                        line: line_no,
                        message: format!("label {name} = {v} is outside [1, 5]"),
                    });
                }
                out_of_range += 1;
            }
        }
        samples.push(LabeledSample { features: values, labels });
    }
    Ok(LoadedDataset {
        samples,
        out_of_range_labels: out_of_range,
    })
}

/// Ground truth for synthetic data: labels are drawn from
/// `N(3 + 1.5·tanh(W x), Λ*)` with `x ~ U(−1, 1)^D`.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub feature_dim: usize,
    pub sample_count: usize,
    /// `5 × D` mean weights.
    pub mean_weights: Matrix,
    pub noise_cov: Matrix,
    pub seed: u64,
}

impl SynthSpec {
    /// Draws `W` with entries `N(0, weight_scale² / D)` from `seed` and uses
    /// [`default_noise_cov`] with the given noise standard deviation and
    /// strongest correlation.
    pub fn random(
        feature_dim: usize,
        sample_count: usize,
        noise_std: f64,
        max_corr: f64,
        weight_scale: f64,
        seed: u64,
    ) -> Result<Self> {
        if feature_dim == 0 {
            return Err(Error::InvalidSpec("feature_dim must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5e_ed0f_3a7e);
        let scale = weight_scale / (feature_dim as f64).sqrt();
        let w: Vec<f64> = (0..QUALITY_DIMS * feature_dim)
            .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Ok(Self {
            feature_dim,
            sample_count,
            mean_weights: Matrix::from_row_major(QUALITY_DIMS, feature_dim, w)?,
            noise_cov: default_noise_cov(noise_std, max_corr)?,
            seed,
        })
    }

    pub fn mean_at(&self, x: &[f64]) -> Vec<f64> {
        self.mean_weights
            .matvec(x)
            .expect("feature length checked by caller")
            .into_iter()
            .map(|v| 3.0 + 1.5 * v.tanh())
            .collect()
    }

    fn validate(&self) -> Result<()> {
        if self.sample_count == 0 {
            return Err(Error::InvalidSpec("sample_count must be at least 1".into()));
        }
        if self.mean_weights.rows() != QUALITY_DIMS || self.mean_weights.cols() != self.feature_dim {
            return Err(Error::InvalidSpec(format!(
                "mean weights must be {QUALITY_DIMS}x{}",
                self.feature_dim
            )));
        }
        if self.noise_cov.rows() != QUALITY_DIMS {
            return Err(Error::InvalidSpec("noise covariance must be 5x5".into()));
        }
        CovarianceMatrix::new(self.noise_cov.clone())
            .map_err(|e| Error::InvalidSpec(format!("noise covariance is not SPD: {e}")))?;
        Ok(())
    }
}

/// Correlation pattern used by synthetic data, scaled so the strongest
/// entry (MOS–NOI) equals `max_corr`.
const CORR_PATTERN: [[f64; QUALITY_DIMS]; QUALITY_DIMS] = [
    [1.0, 1.0, 2.0 / 3.0, 0.5, 1.0 / 3.0],
    [1.0, 1.0, 1.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0],
    [2.0 / 3.0, 1.0 / 3.0, 1.0, 1.0 / 3.0, 1.0 / 6.0],
    [0.5, 1.0 / 6.0, 1.0 / 3.0, 1.0, 1.0 / 6.0],
    [1.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0, 1.0 / 6.0, 1.0],
];

/// `σ² · R` where `R` has unit diagonal and off-diagonal `max_corr · pattern`.
pub fn default_noise_cov(noise_std: f64, max_corr: f64) -> Result<Matrix> {
    if !(noise_std > 0.0) || !noise_std.is_finite() {
        return Err(Error::InvalidSpec("noise standard deviation must be positive".into()));
    }
    if !(0.0..1.0).contains(&max_corr.abs()) {
        return Err(Error::InvalidSpec("correlation must lie in (-1, 1)".into()));
    }
    let var = noise_std * noise_std;
    let mut m = Matrix::zeros(QUALITY_DIMS, QUALITY_DIMS);
    for i in 0..QUALITY_DIMS {
        for j in 0..QUALITY_DIMS {
            let r = if i == j { 1.0 } else { max_corr * CORR_PATTERN[i][j] };
            m[(i, j)] = var * r;
        }
    }
    CovarianceMatrix::new(m.clone())
        .map_err(|e| Error::InvalidSpec(format!("correlation {max_corr} gives a non-SPD matrix: {e}")))?;
    Ok(m)
}

/// Generated samples together with the truth they were drawn from.
#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub samples: Vec<LabeledSample>,
    /// `μ*(x)` for each sample.
    pub true_means: Vec<Vec<f64>>,
    pub spec: SynthSpec,
}

pub fn generate_synthetic(spec: &SynthSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let noise = GaussianParams::new(
        MeanVector::zeros(QUALITY_DIMS),
        CovarianceMatrix::new(spec.noise_cov.clone())?,
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut samples = Vec::with_capacity(spec.sample_count);
    let mut true_means = Vec::with_capacity(spec.sample_count);
    for _ in 0..spec.sample_count {
        let x: Vec<f64> = (0..spec.feature_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mu = spec.mean_at(&x);
        let eps = sample_with(&noise, 1, &mut rng);
        let y: Vec<f64> = mu.iter().zip(eps.row(0)).map(|(m, e)| m + e).collect();
        samples.push(LabeledSample { features: x, labels: y });
        true_means.push(mu);
    }
    Ok(SyntheticData {
        samples,
        true_means,
        spec: spec.clone(),
    })
}

fn join(values: &[f64]) -> String {
    values.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(",")
}

pub fn write_ground_truth(path: impl AsRef<Path>, spec: &SynthSpec) -> Result<()> {
    let text = format!(
        "feature_dim={}\nlabel_dims={}\nseed={}\nsample_count={}\nmean_weights={}\nnoise_cov={}\n",
        spec.feature_dim,
        QUALITY_DIMS,
        spec.seed,
        spec.sample_count,
        join(spec.mean_weights.as_slice()),
        join(spec.noise_cov.as_slice()),
    );
    fs::write(path, text)?;
    Ok(())
}

pub fn read_ground_truth(path: impl AsRef<Path>) -> Result<SynthSpec> {
    let text = fs::read_to_string(path)?;
    let mut feature_dim = None;
    let mut seed = None;
    let mut sample_count = None;
    let mut weights = None;
    let mut cov = None;
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: line_no,
            message: "expected key=value".into(),
        })?;
        let parse_err = |what: &str| Error::Parse {
            line: line_no,
            message: format!("bad value for {what}"),
        };
        let floats = |v: &str| -> Result<Vec<f64>> {
            v.split(',')
                .map(|f| f.trim().parse::<f64>().map_err(|_| parse_err(key)))
                .collect()
        };
        match key.trim() {
            "feature_dim" => feature_dim = Some(value.trim().parse::<usize>().map_err(|_| parse_err(key))?),
            "label_dims" => {
                if value.trim() != QUALITY_DIMS.to_string() {
                    return Err(Error::Schema(format!("label_dims must be {QUALITY_DIMS}")));
                }
            }
            "seed" => seed = Some(value.trim().parse::<u64>().map_err(|_| parse_err(key))?),
            "sample_count" => sample_count = Some(value.trim().parse::<usize>().map_err(|_| parse_err(key))?),
            "mean_weights" => weights = Some(floats(value)?),
            "noise_cov" => cov = Some(floats(value)?),
            other => return Err(Error::Schema(format!("unknown ground-truth key `{other}`"))),
        }
    }
    let missing = |k: &str| Error::Schema(format!("ground truth is missing `{k}`"));
    let feature_dim = feature_dim.ok_or_else(|| missing("feature_dim"))?;
    let spec = SynthSpec {
        feature_dim,
        sample_count: sample_count.ok_or_else(|| missing("sample_count"))?,
        mean_weights: Matrix::from_row_major(
            QUALITY_DIMS,
            feature_dim,
            weights.ok_or_else(|| missing("mean_weights"))?,
        )
        .map_err(|e| Error::Schema(e.to_string()))?,
        noise_cov: Matrix::from_row_major(QUALITY_DIMS, QUALITY_DIMS, cov.ok_or_else(|| missing("noise_cov"))?)
            .map_err(|e| Error::Schema(e.to_string()))?,
        seed: seed.ok_or_else(|| missing("seed"))?,
    };
    spec.validate()?;
    Ok(spec)
}

/// Seeded shuffle, then the first `round(fraction · N)` samples go to the
/// training side.
pub fn split(
    data: &[LabeledSample],
    fraction: f64,
    seed: u64,
) -> Result<(Vec<LabeledSample>, Vec<LabeledSample>)> {
    if data.len() < 2 {
        return Err(Error::InvalidArgument("split needs at least 2 samples".into()));
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidArgument(format!("fraction {fraction} is not in (0, 1)")));
    }
    let cut = (fraction * data.len() as f64).round() as usize;
    if cut == 0 || cut == data.len() {
        return Err(Error::InvalidArgument(format!(
            "fraction {fraction} leaves one side of a {}-sample split empty",
            data.len()
        )));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let train = order[..cut].iter().map(|&i| data[i].clone()).collect();
    let holdout = order[cut..].iter().map(|&i| data[i].clone()).collect();
    Ok((train, holdout))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    #[test]
    fn parses_documented_example() {
        let dir = tmp();
        let p = dir.path().join("d.csv");
        fs::write(&p, "feat_0,feat_1,mos,noi,col,dis,loud\n0.5,-0.25,3.0,4.0,2.5,3.5,3.0\n").unwrap();
        let d = load_dataset(&p, true).unwrap();
        assert_eq!(d.samples.len(), 1);
        assert_eq!(d.samples[0].features, vec![0.5, -0.25]);
        assert_eq!(d.samples[0].labels, vec![3.0, 4.0, 2.5, 3.5, 3.0]);
        assert_eq!(d.out_of_range_labels, 0);
    }

    #[test]
    fn strict_mode_rejects_out_of_scale() {
        let dir = tmp();
        let p = dir.path().join("d.csv");
        fs::write(&p, "feat_0,mos,noi,col,dis,loud\n0.1,3,3,3,3,3\n0.2,5.7,3,3,3,3\n").unwrap();
        match load_dataset(&p, true) {
            Err(Error::Parse { line, message }) => {
                assert_eq!(line, 3);
                assert!(message.contains("5.7"));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(load_dataset(&p, false).unwrap().out_of_range_labels, 1);
    }

    #[test]
    fn malformed_rows_report_line_numbers() {
        let dir = tmp();
        let p = dir.path().join("d.csv");
        fs::write(&p, "feat_0,mos,noi,col,dis,loud\n0.1,3,3,3,3\n").unwrap();
        assert!(matches!(load_dataset(&p, false), Err(Error::Parse { line: 2, .. })));
        fs::write(&p, "feat_0,mos,noi,col,dis,loud\n0.1,3,3,x,3,3\n").unwrap();
        assert!(matches!(load_dataset(&p, false), Err(Error::Parse { line: 2, .. })));
        fs::write(&p, "feat_1,mos,noi,col,dis,loud\n").unwrap();
        assert!(matches!(load_dataset(&p, false), Err(Error::Schema(_))));
    }

    #[test]
    fn round_trip_is_exact() {
        let spec = SynthSpec::random(3, 20, 0.5, 0.6, 1.0, 4).unwrap();
        let data = generate_synthetic(&spec).unwrap().samples;
        let dir = tmp();
        let p = dir.path().join("d.csv");
        write_dataset(&p, &data).unwrap();
        assert_eq!(load_dataset(&p, false).unwrap().samples, data);
    }

    #[test]
    fn ground_truth_round_trip() {
        let spec = SynthSpec::random(4, 10, 0.3, 0.6, 1.0, 8).unwrap();
        let dir = tmp();
        let p = dir.path().join("truth.txt");
        write_ground_truth(&p, &spec).unwrap();
        assert_eq!(read_ground_truth(&p).unwrap(), spec);
    }

    #[test]
    fn zero_weights_give_constant_mean() {
        let spec = SynthSpec {
            mean_weights: Matrix::zeros(5, 3),
            ..SynthSpec::random(3, 50, 0.5, 0.6, 1.0, 1).unwrap()
        };
        let data = generate_synthetic(&spec).unwrap();
        assert!(data.true_means.iter().all(|m| m == &vec![3.0; 5]));
    }

    #[test]
    fn tiny_noise_labels_hug_the_mean() {
        let spec = SynthSpec {
            noise_cov: Matrix::identity(5).scale(1e-4),
            ..SynthSpec::random(6, 2000, 0.5, 0.6, 1.0, 2).unwrap()
        };
        let data = generate_synthetic(&spec).unwrap();
        let total = data.samples.len() * 5;
        let inside = data
            .samples
            .iter()
            .zip(&data.true_means)
            .flat_map(|(s, m)| s.labels.iter().zip(m).map(|(y, mu)| (y - mu).abs() <= 0.04))
            .filter(|&ok| ok)
            .count();
        assert!(inside as f64 >= 0.99 * total as f64);
    }

    #[test]
    fn non_spd_truth_rejected() {
        let spec = SynthSpec {
            noise_cov: Matrix::from_diagonal(&[1.0, 1.0, -1.0, 1.0, 1.0]),
            ..SynthSpec::random(2, 5, 0.5, 0.6, 1.0, 2).unwrap()
        };
        assert!(matches!(generate_synthetic(&spec), Err(Error::InvalidSpec(_))));
        assert!(default_noise_cov(0.5, 0.99).is_err());
    }

    #[test]
    fn split_contract() {
        let spec = SynthSpec::random(2, 10, 0.5, 0.6, 1.0, 3).unwrap();
        let data = generate_synthetic(&spec).unwrap().samples;
        let (a, b) = split(&data, 0.8, 5).unwrap();
        assert_eq!((a.len(), b.len()), (8, 2));
        let (a2, b2) = split(&data, 0.8, 5).unwrap();
        assert_eq!((a.clone(), b.clone()), (a2, b2));
        let mut union: Vec<_> = a.into_iter().chain(b).map(|s| format!("{s:?}")).collect();
        let mut orig: Vec<_> = data.iter().map(|s| format!("{s:?}")).collect();
        union.sort();
        orig.sort();
        assert_eq!(union, orig);
        assert!(split(&data, 0.01, 1).is_err());
        assert!(split(&data[..1], 0.5, 1).is_err());
    }

    #[test]
    fn label_names_resolve() {
        assert_eq!(label_index("MOS"), Some(0));
        assert_eq!(label_index("loud"), Some(4));
        assert_eq!(label_index("pesq"), None);
    }
}
