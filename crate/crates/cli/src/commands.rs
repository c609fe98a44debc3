//! Subcommand implementations. Each returns once every output file is written.

use std::fs;
use std::path::{Path, PathBuf};
use std::thread;

use anyhow::{anyhow, bail, Context, Result};
use qualgauss_core::dataio::{
    generate_synthetic, label_index, load_dataset, write_dataset, write_ground_truth, LabeledSample,
};
use qualgauss_core::metrics::{
    aggregate, emit_correlation_scatter, emit_marginal_grid, format_aggregate_csv, format_aggregate_table,
    format_csv, format_table, grid_csv, scatter_csv, AggregateReport, GridSpec,
};
use qualgauss_core::trainer::TrainTrace;
use qualgauss_core::{evaluate, predict, train as train_head, Error, EvalReport, HeadModel, SynthSpec, LABEL_NAMES};

use crate::config::RunConfig;
use crate::{EvalArgs, SynthArgs};

/// Seed offset for the holdout file so it shares `W` and `Λ*` but not samples.
const HOLDOUT_SEED_OFFSET: u64 = 0x686f_6c64;

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("cannot create {}", parent.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("cannot write {}", path.display()))
}

pub fn synth(args: &SynthArgs) -> Result<()> {
    let n = args.n as usize;
    let d = args.d as usize;
    let spec = SynthSpec::random(d, n, args.noise_std, args.max_corr, args.weight_scale, args.seed)?;
    let data = generate_synthetic(&spec)?;
    fs::create_dir_all(&args.out).with_context(|| format!("cannot create {}", args.out.display()))?;
    let train_path = args.out.join("train.csv");
    write_dataset(&train_path, &data.samples).with_context(|| format!("writing {}", train_path.display()))?;
    let truth_path = args.out.join("ground_truth.txt");
    write_ground_truth(&truth_path, &spec).with_context(|| format!("writing {}", truth_path.display()))?;
    if args.holdout > 0 {
        let holdout_spec = SynthSpec {
            sample_count: args.holdout,
            seed: args.seed.wrapping_add(HOLDOUT_SEED_OFFSET),
            ..spec.clone()
        };
        let holdout = generate_synthetic(&holdout_spec)?;
        let path = args.out.join("holdout.csv");
        write_dataset(&path, &holdout.samples).with_context(|| format!("writing {}", path.display()))?;
    }
    println!("N={n} D={d} seed={}", args.seed);
    Ok(())
}

fn load(path: &Path, strict: bool) -> Result<Vec<LabeledSample>> {
    let loaded = load_dataset(path, strict).with_context(|| format!("loading {}", path.display()))?;
    if loaded.out_of_range_labels > 0 {
        eprintln!(
            "warning: {} labels in {} lie outside [1, 5]",
            loaded.out_of_range_labels,
            path.display()
        );
    }
    Ok(loaded.samples)
}

fn load_train_val(cfg: &RunConfig) -> Result<(Vec<LabeledSample>, Option<Vec<LabeledSample>>)> {
    cfg.validate(true)?;
    let train = load(cfg.train.as_deref().expect("validated"), cfg.strict)?;
    let val = cfg.val.as_deref().map(|p| load(p, cfg.strict)).transpose()?;
    Ok((train, val))
}

fn fit(cfg: &RunConfig, train: &[LabeledSample], val: Option<&[LabeledSample]>) -> Result<(HeadModel, TrainTrace)> {
    let input_dim = train.first().map(LabeledSample::feature_dim).unwrap_or(0);
    let head = cfg.head_config(input_dim);
    Ok(train_head(train, val, &head, &cfg.train_config())?)
}

pub fn train(cfg: &RunConfig) -> Result<HeadModel> {
    let (train, val) = load_train_val(cfg)?;
    let (model, trace) = fit(cfg, &train, val.as_deref())?;
    if let Some(parent) = cfg.checkpoint.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("cannot create {}", parent.display()))?;
    }
    model
        .save(&cfg.checkpoint)
        .with_context(|| format!("writing checkpoint {}", cfg.checkpoint.display()))?;
    let trace_path = cfg.trace_path();
    write(&trace_path, trace.to_table())?;
    if let Some(last) = trace.records.last() {
        let val = last.val_loss.map_or_else(|| "-".into(), |v| format!("{v:.6}"));
        println!(
            "trained {} head for {} epochs: train_loss {:.6} val_loss {val}",
            cfg.variant, last.epoch, last.train_loss
        );
    }
    println!("checkpoint: {}", cfg.checkpoint.display());
    println!("trace: {}", trace_path.display());
    Ok(model)
}

fn parse_pair(text: &str) -> Result<(usize, usize)> {
    let (a, b) = text
        .split_once(',')
        .ok_or_else(|| anyhow!("expected a label pair like mos,noi, got `{text}`"))?;
    let idx = |name: &str| {
        label_index(name.trim()).ok_or_else(|| {
            anyhow!("unknown label `{}` (expected one of {})", name.trim(), LABEL_NAMES.join(", "))
        })
    };
    let (i, j) = (idx(a)?, idx(b)?);
    if i == j {
        bail!("label pair `{text}` names the same dimension twice");
    }
    Ok((i, j))
}

fn eval_data_path(args: &EvalArgs, cfg: &RunConfig) -> Result<PathBuf> {
    args.data
        .clone()
        .or_else(|| cfg.val.clone())
        .or_else(|| cfg.train.clone())
        .ok_or_else(|| anyhow!("no dataset to evaluate (pass --data, --val or --train)"))
}

/// Writes `report.txt` and `report.csv`, plus `scatter_<i>_<j>.csv` and
/// `grid_<i>_<j>.csv` when requested.
pub fn eval(args: &EvalArgs) -> Result<()> {
    let cfg = args.run.resolve()?;
    cfg.validate(false)?;
    let scatter = args.scatter.as_deref().map(parse_pair).transpose()?;
    let grid = args.grid.as_deref().map(parse_pair).transpose()?;
    if !cfg.checkpoint.is_file() {
        bail!("checkpoint {} does not exist", cfg.checkpoint.display());
    }
    let model = HeadModel::load(&cfg.checkpoint)
        .with_context(|| format!("loading checkpoint {}", cfg.checkpoint.display()))?;
    let ck_variant = model.config().variant;
    if cfg.variant_explicit && ck_variant != cfg.variant {
        return Err(Error::Schema(format!(
            "checkpoint {} holds a {ck_variant} head but the configuration asks for {}",
            cfg.checkpoint.display(),
            cfg.variant
        ))
        .into());
    }
    let data_path = eval_data_path(args, &cfg)?;
    if !data_path.is_file() {
        bail!("dataset {} does not exist", data_path.display());
    }
    let data = load(&data_path, cfg.strict)?;
    let map = cfg.affine();
    let report = evaluate(&model, &data, &map)?;
    let rows = vec![(ck_variant.to_string(), report)];
    let table = format_table(&rows);
    write(&cfg.report_dir.join("report.txt"), &table)?;
    write(&cfg.report_dir.join("report.csv"), format_csv(&rows))?;
    print!("{table}");

    if let Some((i, j)) = scatter {
        let rows = emit_correlation_scatter(&model, &data, &map, (i, j))?;
        let path = cfg.report_dir.join(format!("scatter_{}_{}.csv", LABEL_NAMES[i], LABEL_NAMES[j]));
        write(&path, scatter_csv(&rows, (LABEL_NAMES[i], LABEL_NAMES[j])))?;
        println!("scatter: {} ({} rows)", path.display(), rows.len());
    }
    if let Some((i, j)) = grid {
        let sample = data.get(args.grid_sample).ok_or_else(|| {
            anyhow!("--grid-sample {} is out of range for {} samples", args.grid_sample, data.len())
        })?;
        let g = predict(&model, &sample.features, &map)?.gaussian;
        let spec = GridSpec::around(&g, (i, j), args.grid_width, args.grid_res)?;
        let rows = emit_marginal_grid(&g, (i, j), &spec)?;
        let path = cfg.report_dir.join(format!("grid_{}_{}.csv", LABEL_NAMES[i], LABEL_NAMES[j]));
        write(&path, grid_csv(&rows, (LABEL_NAMES[i], LABEL_NAMES[j])))?;
        println!("grid: {} ({} rows)", path.display(), rows.len());
    }
    Ok(())
}

/// Trains `runs` models with seeds `seed, seed + 1, ...` and writes
/// `battery.txt` and `battery.csv` with mean ± sample std per metric.
pub fn battery(cfg: &RunConfig, runs: usize) -> Result<AggregateReport> {
    if runs < 2 {
        bail!("a battery needs at least 2 runs, got {runs}");
    }
    let (train, val) = load_train_val(cfg)?;
    let eval_set: &[LabeledSample] = val.as_deref().unwrap_or(&train);
    let workers = thread::available_parallelism().map_or(1, |n| n.get()).min(runs);
    let seeds: Vec<u64> = (0..runs as u64).map(|k| cfg.seed.wrapping_add(k)).collect();

    // Runs share nothing, so they go in parallel; results keep seed order.
    let mut reports: Vec<Option<Result<EvalReport>>> = (0..runs).map(|_| None).collect();
    for (chunk_seeds, chunk_out) in seeds.chunks(workers).zip(reports.chunks_mut(workers)) {
        thread::scope(|s| {
            for (&seed, slot) in chunk_seeds.iter().zip(chunk_out.iter_mut()) {
                let run_cfg = RunConfig { seed, ..cfg.clone() };
                let (train, val) = (&train, val.as_deref());
                s.spawn(move || {
                    *slot = Some(
                        fit(&run_cfg, train, val)
                            .and_then(|(m, _)| Ok(evaluate(&m, eval_set, &run_cfg.affine())?))
                            .with_context(|| format!("battery run with seed {seed}")),
                    );
                });
            }
        });
    }
    let reports = reports
        .into_iter()
        .map(|r| r.expect("every run reports"))
        .collect::<Result<Vec<_>>>()?;

    let agg = aggregate(&reports)?;
    let rows = vec![(cfg.variant.to_string(), agg.clone())];
    let table = format_aggregate_table(&rows);
    write(&cfg.report_dir.join("battery.txt"), &table)?;
    write(&cfg.report_dir.join("battery.csv"), format_aggregate_csv(&rows))?;
    print!("{table}");
    Ok(agg)
}
