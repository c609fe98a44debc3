//! Per-dimension RMSE/PCC evaluation, report tables and the diagnostic data
//! tables (marginal density grids and predicted-correlation scatter).

use std::fmt::Write as _;

use crate::dataio::{LabeledSample, LABEL_NAMES};
use crate::error::{Error, Result};
use crate::gaussian::{correlation, log_density, marginalize, AffineMap, GaussianParams, QUALITY_DIMS};
use crate::model::{predict, HeadModel, Variant};

pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::InvalidInput(format!(
            "rmse needs equal non-zero lengths, got {} and {}",
            pred.len(),
            truth.len()
        )));
    }
    let sq: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok((sq / pred.len() as f64).sqrt())
}

/// Pearson correlation. Constant inputs are an error, never a silent zero.
pub fn pcc(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() || pred.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "pcc needs equal lengths of at least 2, got {} and {}",
            pred.len(),
            truth.len()
        )));
    }
    let n = pred.len() as f64;
    let mp = pred.iter().sum::<f64>() / n;
    let mt = truth.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (p, t) in pred.iter().zip(truth) {
        let (dp, dt) = (p - mp, t - mt);
        sxy += dp * dt;
        sxx += dp * dp;
        syy += dt * dt;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation(
            if sxx == 0.0 { "prediction is constant" } else { "target is constant" }.into(),
        ));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DimensionMetrics {
    pub name: &'static str,
    pub rmse: f64,
    /// `None` when either side is constant.
    pub pcc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub variant: Variant,
    pub sample_count: usize,
    pub dims: Vec<DimensionMetrics>,
    pub avg_rmse: f64,
    /// Mean over the dimensions whose PCC is defined.
    pub avg_pcc: Option<f64>,
}

impl EvalReport {
    fn from_columns(variant: Variant, preds: &[Vec<f64>], truths: &[Vec<f64>]) -> Result<Self> {
        let dims = (0..QUALITY_DIMS)
            .map(|d| {
                let r = rmse(&preds[d], &truths[d])?;
                let c = match pcc(&preds[d], &truths[d]) {
                    Ok(v) => Some(v),
                    Err(Error::UndefinedCorrelation(_)) | Err(Error::InvalidInput(_)) => None,
                    Err(e) => return Err(e),
                };
                Ok(DimensionMetrics {
                    name: LABEL_NAMES[d],
                    rmse: r,
                    pcc: c,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let avg_rmse = dims.iter().map(|d| d.rmse).sum::<f64>() / dims.len() as f64;
        let defined: Vec<f64> = dims.iter().filter_map(|d| d.pcc).collect();
        let avg_pcc = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
        Ok(Self {
            variant,
            sample_count: preds[0].len(),
            dims,
            avg_rmse,
            avg_pcc,
        })
    }
}

/// Point predictions on `data`, compared per dimension against the labels.
pub fn evaluate(model: &HeadModel, data: &[LabeledSample], map: &AffineMap) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(Error::InvalidInput("cannot evaluate on an empty dataset".into()));
    }
    let mut preds: Vec<Vec<f64>> = (0..QUALITY_DIMS).map(|_| Vec::with_capacity(data.len())).collect();
    let mut truths: Vec<Vec<f64>> = (0..QUALITY_DIMS).map(|_| Vec::with_capacity(data.len())).collect();
    for s in data {
        let p = predict(model, &s.features, map)?;
        for d in 0..QUALITY_DIMS {
            preds[d].push(p.point.as_slice()[d]);
            truths[d].push(s.labels[d]);
        }
    }
    EvalReport::from_columns(model.config().variant, &preds, &truths)
}

/// Evaluation from precomputed point predictions (one row per sample).
pub fn evaluate_points(variant: Variant, points: &[Vec<f64>], labels: &[Vec<f64>]) -> Result<EvalReport> {
    if points.is_empty() || points.len() != labels.len() {
        return Err(Error::InvalidInput("need matching non-empty prediction and label rows".into()));
    }
    let column = |rows: &[Vec<f64>], d: usize| rows.iter().map(|r| r[d]).collect::<Vec<_>>();
    let preds: Vec<_> = (0..QUALITY_DIMS).map(|d| column(points, d)).collect();
    let truths: Vec<_> = (0..QUALITY_DIMS).map(|d| column(labels, d)).collect();
    EvalReport::from_columns(variant, &preds, &truths)
}

/// Rectangular evaluation grid over two coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub lo: [f64; 2],
    pub hi: [f64; 2],
    pub resolution: [usize; 2],
}

impl GridSpec {
    /// Grid spanning `±half_width` standard deviations around the marginal mean.
    pub fn around(g: &GaussianParams, dims: (usize, usize), half_width: f64, resolution: usize) -> Result<Self> {
        let (i, j) = dims;
        if i >= g.dim() || j >= g.dim() {
            return Err(Error::InvalidInput("grid dimension out of range".into()));
        }
        let m = g.mean().as_slice();
        let si = g.cov().get(i, i).sqrt();
        let sj = g.cov().get(j, j).sqrt();
        Ok(Self {
            lo: [m[i] - half_width * si, m[j] - half_width * sj],
            hi: [m[i] + half_width * si, m[j] + half_width * sj],
            resolution: [resolution, resolution],
        })
    }

    pub fn step(&self, axis: usize) -> f64 {
        (self.hi[axis] - self.lo[axis]) / (self.resolution[axis] - 1) as f64
    }

    pub fn cell_area(&self) -> f64 {
        self.step(0) * self.step(1)
    }

    pub fn point(&self, axis: usize, k: usize) -> f64 {
        self.lo[axis] + k as f64 * self.step(axis)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridRow {
    pub v1: f64,
    pub v2: f64,
    pub density: f64,
}

/// Density of the `(i, j)` marginal on a grid; rows vary `v2` fastest.
pub fn emit_marginal_grid(g: &GaussianParams, dims: (usize, usize), grid: &GridSpec) -> Result<Vec<GridRow>> {
    let (i, j) = dims;
    if i == j {
        return Err(Error::InvalidInput("marginal grid needs two distinct dimensions".into()));
    }
    if grid.resolution.iter().any(|&r| r < 2) {
        return Err(Error::InvalidInput("grid resolution must be at least 2 per axis".into()));
    }
    if !(grid.hi[0] > grid.lo[0] && grid.hi[1] > grid.lo[1]) {
        return Err(Error::InvalidInput("grid bounds must be increasing".into()));
    }
    let swapped = i > j;
    let marginal = marginalize(g, &[i.min(j), i.max(j)])?;
    let mut rows = Vec::with_capacity(grid.resolution[0] * grid.resolution[1]);
    for a in 0..grid.resolution[0] {
        let v1 = grid.point(0, a);
        for b in 0..grid.resolution[1] {
            let v2 = grid.point(1, b);
            let y = if swapped { [v2, v1] } else { [v1, v2] };
            let density = log_density(&marginal, &y)?.exp();
            rows.push(GridRow { v1, v2, density });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScatterRow {
    pub label_i: f64,
    pub label_j: f64,
    pub predicted_corr: f64,
}

/// Per sample: the two labels and the model's predicted correlation between them.
pub fn emit_correlation_scatter(
    model: &HeadModel,
    data: &[LabeledSample],
    map: &AffineMap,
    dims: (usize, usize),
) -> Result<Vec<ScatterRow>> {
    let (i, j) = dims;
    if i >= QUALITY_DIMS || j >= QUALITY_DIMS {
        return Err(Error::InvalidInput(format!("dimension pair ({i}, {j}) out of range")));
    }
    data.iter()
        .map(|s| {
            let p = predict(model, &s.features, map)?;
            Ok(ScatterRow {
                label_i: s.labels[i],
                label_j: s.labels[j],
                predicted_corr: correlation(p.gaussian.cov(), i, j)?,
            })
        })
        .collect()
}

pub fn grid_csv(rows: &[GridRow], names: (&str, &str)) -> String {
    let mut out = format!("{},{},density\n", names.0, names.1);
    for r in rows {
        let _ = writeln!(out, "{:?},{:?},{:?}", r.v1, r.v2, r.density);
    }
    out
}

pub fn scatter_csv(rows: &[ScatterRow], names: (&str, &str)) -> String {
    let mut out = format!("{},{},predicted_corr\n", names.0, names.1);
    for r in rows {
        let _ = writeln!(out, "{:?},{:?},{:?}", r.label_i, r.label_j, r.predicted_corr);
    }
    out
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.3}"))
}

fn table_header(out: &mut String, tag_width: usize) {
    let _ = write!(out, "{:<tag_width$}", "model");
    for name in LABEL_NAMES.iter().map(|n| n.to_ascii_uppercase()).chain(["AVG".to_string()]) {
        let _ = write!(out, " | {name:^15}");
    }
    out.push('\n');
    let _ = write!(out, "{:<tag_width$}", "");
    for _ in 0..=QUALITY_DIMS {
        let _ = write!(out, " | {:>7} {:>7}", "RMSE", "PCC");
    }
    out.push('\n');
}

/// Fixed-width table: one row per model, an RMSE/PCC column pair per
/// dimension and a final average pair.
pub fn format_table(rows: &[(String, EvalReport)]) -> String {
    let width = rows.iter().map(|(t, _)| t.len()).max().unwrap_or(0).max(5);
    let mut out = String::new();
    table_header(&mut out, width);
    for (tag, r) in rows {
        let _ = write!(out, "{tag:<width$}");
        for d in &r.dims {
            let _ = write!(out, " | {:>7.3} {:>7}", d.rmse, fmt_opt(d.pcc));
        }
        let _ = write!(out, " | {:>7.3} {:>7}", r.avg_rmse, fmt_opt(r.avg_pcc));
        if !r.variant.is_probabilistic() {
            out.push_str("  (point estimate only)");
        }
        out.push('\n');
    }
    out
}

fn csv_header(stats: &[&str]) -> String {
    let mut cols = vec!["model".to_string(), "variant".to_string(), "samples".to_string()];
    for name in LABEL_NAMES.iter().chain(["avg"].iter()) {
        for s in stats {
            cols.push(format!("{name}_{s}"));
        }
    }
    cols.join(",")
}

fn csv_num(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:?}"))
}

/// Machine-readable form of [`format_table`]; an undefined PCC is an empty field.
pub fn format_csv(rows: &[(String, EvalReport)]) -> String {
    let mut out = csv_header(&["rmse", "pcc"]);
    out.push('\n');
    for (tag, r) in rows {
        let mut fields = vec![tag.clone(), r.variant.to_string(), r.sample_count.to_string()];
        for d in &r.dims {
            fields.push(format!("{:?}", d.rmse));
            fields.push(csv_num(d.pcc));
        }
        fields.push(format!("{:?}", r.avg_rmse));
        fields.push(csv_num(r.avg_pcc));
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

/// Mean and sample standard deviation (denominator `runs − 1`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::InvalidArgument("mean ± std needs at least 2 values".into()));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
        Ok(Self { mean, std: var.sqrt() })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateDimension {
    pub name: &'static str,
    pub rmse: MeanStd,
    pub pcc: Option<MeanStd>,
}

/// Several runs of the same model differing only in seed.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateReport {
    pub variant: Variant,
    pub runs: usize,
    pub dims: Vec<AggregateDimension>,
    pub avg_rmse: MeanStd,
    pub avg_pcc: Option<MeanStd>,
}

fn optional_stats(values: Vec<Option<f64>>) -> Result<Option<MeanStd>> {
    match values.into_iter().collect::<Option<Vec<f64>>>() {
        Some(v) => MeanStd::of(&v).map(Some),
        None => Ok(None),
    }
}

pub fn aggregate(reports: &[EvalReport]) -> Result<AggregateReport> {
    if reports.len() < 2 {
        return Err(Error::InvalidArgument("aggregation needs at least 2 runs".into()));
    }
    let variant = reports[0].variant;
    if reports.iter().any(|r| r.variant != variant) {
        return Err(Error::InvalidArgument("cannot aggregate reports of different variants".into()));
    }
    let dims = (0..QUALITY_DIMS)
        .map(|d| {
            Ok(AggregateDimension {
                name: LABEL_NAMES[d],
                rmse: MeanStd::of(&reports.iter().map(|r| r.dims[d].rmse).collect::<Vec<_>>())?,
                pcc: optional_stats(reports.iter().map(|r| r.dims[d].pcc).collect())?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AggregateReport {
        variant,
        runs: reports.len(),
        dims,
        avg_rmse: MeanStd::of(&reports.iter().map(|r| r.avg_rmse).collect::<Vec<_>>())?,
        avg_pcc: optional_stats(reports.iter().map(|r| r.avg_pcc).collect())?,
    })
}

fn fmt_ms(v: Option<MeanStd>) -> String {
    v.map_or_else(|| "n/a".to_string(), |m| format!("{:.3}±{:.3}", m.mean, m.std))
}

/// Table layout of [`format_table`] with `mean±std` cells.
pub fn format_aggregate_table(rows: &[(String, AggregateReport)]) -> String {
    let width = rows.iter().map(|(t, _)| t.len()).max().unwrap_or(0).max(5);
    let mut out = String::new();
    let _ = write!(out, "{:<width$}", "model");
    for name in LABEL_NAMES.iter().map(|n| n.to_ascii_uppercase()).chain(["AVG".to_string()]) {
        let _ = write!(out, " | {name:^25}");
    }
    out.push('\n');
    let _ = write!(out, "{:<width$}", "");
    for _ in 0..=QUALITY_DIMS {
        let _ = write!(out, " | {:>12} {:>12}", "RMSE", "PCC");
    }
    out.push('\n');
    for (tag, r) in rows {
        let _ = write!(out, "{tag:<width$}");
        for d in &r.dims {
            let _ = write!(out, " | {:>12} {:>12}", fmt_ms(Some(d.rmse)), fmt_ms(d.pcc));
        }
        let _ = write!(out, " | {:>12} {:>12}", fmt_ms(Some(r.avg_rmse)), fmt_ms(r.avg_pcc));
        let _ = write!(out, "  ({} runs)", r.runs);
        out.push('\n');
    }
    out
}

pub fn format_aggregate_csv(rows: &[(String, AggregateReport)]) -> String {
    let mut out = csv_header(&["rmse_mean", "rmse_std", "pcc_mean", "pcc_std"]);
    out = out.replacen("samples", "runs", 1);
    out.push('\n');
    let push = |fields: &mut Vec<String>, rmse: MeanStd, pcc: Option<MeanStd>| {
        fields.push(format!("{:?}", rmse.mean));
        fields.push(format!("{:?}", rmse.std));
        fields.push(csv_num(pcc.map(|p| p.mean)));
        fields.push(csv_num(pcc.map(|p| p.std)));
    };
    for (tag, r) in rows {
        let mut fields = vec![tag.clone(), r.variant.to_string(), r.runs.to_string()];
        for d in &r.dims {
            push(&mut fields, d.rmse, d.pcc);
        }
        push(&mut fields, r.avg_rmse, r.avg_pcc);
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}
