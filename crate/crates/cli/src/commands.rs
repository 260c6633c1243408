use std::fs;
use std::path::{Path, PathBuf};

use smmt_core::config::RunConfig;
use smmt_core::dataset::{generate_synthetic, kfold_split, load_dataset, save_dataset, Dataset, ModalityBatch, SyntheticSpec};
use smmt_core::harness::energy::{co2_estimate, energy_from_flops};
use smmt_core::harness::flops::CONVENTION;
use smmt_core::harness::sweep::{bench_sweep, write_sweep, SweepConfig, SweepMode};
use smmt_core::model::{ForwardCtx, Mode, SmmtConfig, SmmtModel};
use smmt_core::numeric::{finite_diff_gradcheck, GradCheckConfig, Tape};
use smmt_core::training::{
    ablation_run, evaluate, masking_sweep, summarize, train_with, write_rows, ExperimentSetup, MetricsReport,
};
use smmt_core::{Error, Result};

use crate::{AblateArgs, BenchArgs, Cli, Co2Args, Command, EvalArgs, GradcheckArgs, MaskSweepArgs, TrainArgs};

pub fn run(cli: &Cli) -> Result<()> {
    let mut rc = match &cli.global.config {
        Some(path) => RunConfig::from_file(path).map_err(|e| match e {
            Error::Io(io) => Error::Input(format!("cannot read config {}: {io}", path.display())),
            other => other,
        })?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.global.seed {
        rc.set_seed(seed);
    }
    let out = &cli.global.out;
    fs::create_dir_all(out)?;
    match &cli.command {
        Command::GenData => gen_data(&rc, out),
        Command::Train(a) => train(&rc, out, a),
        Command::Eval(a) => eval(&rc, out, a),
        Command::Ablate(a) => ablate(&rc, out, a),
        Command::MaskSweep(a) => mask_sweep(&rc, out, a),
        Command::Bench(a) => bench(&rc, out, a),
        Command::Gradcheck(a) => gradcheck(&rc, out, a),
        Command::Co2(a) => co2(&rc, out, a),
    }
}

/// Records the command, FLOP convention and full configuration next to the
/// reports so numbers from different runs can be compared.
fn write_meta(out: &Path, command: &str, rc: &RunConfig) -> Result<()> {
    let text = format!("# command: {command}\n# flop convention: {CONVENTION}\n{}", rc.to_text());
    fs::write(out.join(format!("{command}.meta")), text)?;
    Ok(())
}

fn dataset(rc: &RunConfig, path: Option<&PathBuf>) -> Result<Dataset> {
    match path {
        Some(p) => input_file(p, load_dataset),
        None => generate_synthetic(&rc.data),
    }
}

/// A missing or unreadable input file is a usage error, not a runtime one.
fn input_file<T>(path: &Path, load: impl FnOnce(&Path) -> Result<T>) -> Result<T> {
    if !path.is_file() {
        return Err(Error::Input(format!("no such file: {}", path.display())));
    }
    load(path)
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    Ok(csv::Writer::from_path(path)?)
}

fn gen_data(rc: &RunConfig, out: &Path) -> Result<()> {
    let ds = generate_synthetic(&rc.data)?;
    let path = out.join("data.smmtds");
    save_dataset(&ds, &path)?;
    write_meta(out, "gen-data", rc)?;
    let [neg, pos] = ds.class_counts();
    println!("wrote {} records ({neg} negative, {pos} positive) to {}", ds.len(), path.display());
    Ok(())
}

fn train(rc: &RunConfig, out: &Path, a: &TrainArgs) -> Result<()> {
    let ds = dataset(rc, a.data.as_ref())?;
    let (train_ds, val) = if a.holdout {
        let fold = kfold_split(&ds.labels(), rc.train.folds, rc.train.seed)?.swap_remove(0);
        (ds.select(&fold.train)?, Some(ds.select(&fold.validation)?))
    } else {
        (ds, None)
    };
    let mut val_acc = Vec::new();
    let mut failure = None;
    let outcome = train_with(&rc.model, &rc.train, &train_ds, |s, m| {
        if let Some(v) = &val {
            match evaluate(m, v) {
                Ok(r) => val_acc.push(r.accuracy),
                Err(e) => {
                    failure = Some(e);
                    return false;
                }
            }
        }
        println!("epoch {:>3}  loss {:.5}  train acc {:.4}", s.epoch, s.loss, s.train_accuracy);
        true
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    outcome.model.save(&out.join("model.smmt"))?;

    let mut w = csv_writer(&out.join("history.csv"))?;
    w.write_record(["epoch", "loss", "train_accuracy", "val_accuracy"])?;
    for (i, h) in outcome.history.iter().enumerate() {
        let v = val_acc.get(i).map_or(String::new(), |a| format!("{a:.6}"));
        w.write_record([h.epoch.to_string(), format!("{:.6}", h.loss), format!("{:.6}", h.train_accuracy), v])?;
    }
    w.flush()?;
    write_meta(out, "train", rc)?;
    println!(
        "trained {} epochs in {:.1}s ({} attention flops); model at {}",
        outcome.history.len(),
        outcome.train_seconds,
        outcome.attn_flops,
        out.join("model.smmt").display()
    );
    Ok(())
}

fn write_metrics(path: &Path, m: &MetricsReport) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["accuracy", "precision", "recall", "specificity", "f1", "auc", "tp", "tn", "fp", "fn"])?;
    let c = m.confusion;
    w.write_record([
        format!("{:.6}", m.accuracy),
        format!("{:.6}", m.precision),
        format!("{:.6}", m.recall),
        format!("{:.6}", m.specificity),
        format!("{:.6}", m.f1),
        format!("{:.6}", m.auc),
        c.tp.to_string(),
        c.tn.to_string(),
        c.fp.to_string(),
        c.fn_.to_string(),
    ])?;
    w.flush()?;
    Ok(())
}

fn eval(rc: &RunConfig, out: &Path, a: &EvalArgs) -> Result<()> {
    let model = input_file(&a.model, SmmtModel::load)?;
    let ds = input_file(&a.data, load_dataset)?;
    let m = evaluate(&model, &ds)?;
    write_metrics(&out.join("metrics.csv"), &m)?;
    write_meta(out, "eval", rc)?;
    println!(
        "accuracy {:.4}  precision {:.4}  recall {:.4}  specificity {:.4}  f1 {:.4}  auc {:.4}",
        m.accuracy, m.precision, m.recall, m.specificity, m.f1, m.auc
    );
    for d in &m.degenerate {
        println!("note: {d} has a zero denominator and is reported as 0");
    }
    Ok(())
}

fn setup(rc: &RunConfig) -> ExperimentSetup {
    ExperimentSetup {
        model: rc.model.clone(),
        train: rc.train.clone(),
    }
}

fn write_grid(out: &Path, name: &str, rows: &[smmt_core::training::CellResult]) -> Result<()> {
    write_rows(fs::File::create(out.join(format!("{name}.csv")))?, rows)?;
    let summary = summarize(rows);
    write_rows(fs::File::create(out.join(format!("{name}_summary.csv")))?, &summary)?;
    for s in &summary {
        println!("{:<12} fraction {:<4} accuracy {:.4}  f1 {:.4}", s.variant, s.fraction, s.metrics.accuracy, s.metrics.f1);
    }
    Ok(())
}

fn ablate(rc: &RunConfig, out: &Path, a: &AblateArgs) -> Result<()> {
    let ds = dataset(rc, a.data.as_ref())?;
    let rows = ablation_run(&setup(rc), &ds, &a.fractions)?;
    write_grid(out, "ablation", &rows)?;
    write_meta(out, "ablate", rc)
}

fn mask_sweep(rc: &RunConfig, out: &Path, a: &MaskSweepArgs) -> Result<()> {
    let ds = dataset(rc, a.data.as_ref())?;
    let rows = masking_sweep(&setup(rc), &ds, &a.ratios, a.fraction)?;
    write_grid(out, "mask_sweep", &rows)?;
    write_meta(out, "mask-sweep", rc)
}

fn bench(rc: &RunConfig, out: &Path, a: &BenchArgs) -> Result<()> {
    let modes = match a.mode.as_str() {
        "both" => vec![SweepMode::Dense, SweepMode::Sparse],
        m => vec![m.parse()?],
    };
    let cfg = SweepConfig {
        runs: a.runs,
        kmeans_iters: rc.model.kmeans_iters,
        seed: rc.train.seed,
    };
    let mut rows = Vec::new();
    for mode in modes {
        rows.extend(bench_sweep(&a.n, a.d_k, a.heads, mode, &cfg)?);
    }
    write_sweep(fs::File::create(out.join("bench.csv"))?, &rows)?;
    write_meta(out, "bench", rc)?;
    for r in &rows {
        println!("{:<6} n={:<6} {:>14} flops {:>12.3} ms {:>12} bytes", r.mode, r.n, r.flops, r.wall_ns as f64 / 1e6, r.peak_bytes);
    }
    Ok(())
}

/// Checks a small copy of the configured model with clusters and masks
/// frozen from one training-mode pass.
fn gradcheck(rc: &RunConfig, out: &Path, a: &GradcheckArgs) -> Result<()> {
    let cfg = SmmtConfig {
        d_model: 8,
        heads: 2,
        image_channels: vec![2, 3, 2, 3],
        numeric_hidden: [6, 5],
        ..rc.model.clone()
    };
    let mut model = SmmtModel::new(cfg)?;
    // Flat image regions with zero conv bias sit exactly on a ReLU kink.
    for block in model.imaging.blocks.clone() {
        for (i, b) in model.store.get_mut(block.b).data_mut().iter_mut().enumerate() {
            *b = 0.05 + 0.03 * i as f64;
        }
    }
    let ds = generate_synthetic(&SyntheticSpec {
        n_samples: 2,
        height: 16,
        width: 16,
        ..rc.data.clone()
    })?;
    let batch = ModalityBatch::from_records(&ds.records)?;
    let mut ctx = ForwardCtx::new(Mode::Train);
    model.forward(&mut Tape::new(), &batch, &mut ctx)?;
    let trace = ctx.trace.clone();
    let report = finite_diff_gradcheck(&model.store, &GradCheckConfig::default(), |tape, store| {
        let m = SmmtModel {
            store: store.clone(),
            ..model.clone()
        };
        let mut ctx = ForwardCtx::replaying(Mode::Train, trace.clone());
        let logits = m.forward(tape, &batch, &mut ctx)?;
        tape.cross_entropy(logits, &batch.labels)
    })?;
    let mut w = csv_writer(&out.join("gradcheck.csv"))?;
    w.write_record(["entries_checked", "max_rel_error", "worst_param", "worst_index", "tolerance"])?;
    w.write_record([
        report.entries_checked.to_string(),
        format!("{:e}", report.max_rel_error),
        report.worst_param.clone(),
        report.worst_index.to_string(),
        format!("{:e}", a.tolerance),
    ])?;
    w.flush()?;
    write_meta(out, "gradcheck", rc)?;
    println!(
        "{} entries, max relative error {:.2e} ({}[{}])",
        report.entries_checked, report.max_rel_error, report.worst_param, report.worst_index
    );
    if report.max_rel_error > a.tolerance {
        return Err(Error::Numeric(format!(
            "gradient check failed: {:.2e} exceeds {:.0e}",
            report.max_rel_error, a.tolerance
        )));
    }
    Ok(())
}

fn co2(rc: &RunConfig, out: &Path, a: &Co2Args) -> Result<()> {
    let energy = match (a.energy_kwh, a.flops, a.joules_per_flop) {
        (Some(e), None, _) => e,
        (None, Some(f), Some(j)) => energy_from_flops(f, j)?,
        _ => return Err(Error::Input("give --energy-kwh, or --flops with --joules-per-flop".into())),
    };
    let r = co2_estimate(energy, a.ci)?;
    let mut w = csv_writer(&out.join("co2.csv"))?;
    w.write_record(["energy_kwh", "carbon_intensity", "emissions_kg"])?;
    w.write_record([r.energy_kwh.to_string(), r.carbon_intensity.to_string(), format!("{:.6}", r.emissions_kg)])?;
    w.flush()?;
    write_meta(out, "co2", rc)?;
    println!("{:.4} kg CO2 ({} kWh at {} kg/kWh)", r.emissions_kg, r.energy_kwh, r.carbon_intensity);
    Ok(())
}
