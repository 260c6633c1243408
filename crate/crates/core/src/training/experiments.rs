//! Ablation grid and masking-ratio sweep.
//!
//! Every run uses fold 0 of a stratified k-fold split as its validation set.
//! Subsetting applies to the training part only, so all fractions are
//! scored on the same validation records for a given seed.

use std::io::Write;

use crate::dataset::{kfold_split, subset_fraction, Dataset};
use crate::error::Result;
use crate::model::SmmtConfig;

use super::{evaluate, train, ConfusionMatrix, MetricsReport, TrainConfig};

pub const CSV_HEADER: [&str; 11] = [
    "variant",
    "fraction",
    "seed",
    "accuracy",
    "precision",
    "recall",
    "specificity",
    "f1",
    "auc",
    "train_seconds",
    "attn_flops",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    Full,
    NoSparse,
    NoMask,
    Neither,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Full, Variant::NoSparse, Variant::NoMask, Variant::Neither];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoSparse => "no_sparse",
            Variant::NoMask => "no_mask",
            Variant::Neither => "neither",
        }
    }

    pub fn apply(self, base: &SmmtConfig) -> SmmtConfig {
        let (sparse, mask) = match self {
            Variant::Full => (true, true),
            Variant::NoSparse => (false, true),
            Variant::NoMask => (true, false),
            Variant::Neither => (false, false),
        };
        SmmtConfig {
            use_sparse: sparse,
            use_mask: mask,
            ..base.clone()
        }
    }
}

/// Model and training settings shared by every cell of a grid.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExperimentSetup {
    pub model: SmmtConfig,
    pub train: TrainConfig,
}

impl ExperimentSetup {
    /// `train.runs` consecutive seeds starting at `train.seed`.
    pub fn seeds(&self) -> Vec<u64> {
        (0..self.train.runs as u64).map(|i| self.train.seed.wrapping_add(i)).collect()
    }
}

/// One trained-and-scored configuration, or the mean over seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct CellResult {
    pub variant: String,
    pub fraction: f64,
    pub seed: u64,
    pub metrics: MetricsReport,
    pub train_seconds: f64,
    pub attn_flops: u64,
}

impl CellResult {
    fn record(&self) -> Vec<String> {
        let m = &self.metrics;
        vec![
            self.variant.clone(),
            format!("{}", self.fraction),
            self.seed.to_string(),
            format!("{:.6}", m.accuracy),
            format!("{:.6}", m.precision),
            format!("{:.6}", m.recall),
            format!("{:.6}", m.specificity),
            format!("{:.6}", m.f1),
            format!("{:.6}", m.auc),
            format!("{:.3}", self.train_seconds),
            self.attn_flops.to_string(),
        ]
    }
}

/// Trains `cfg` on `fraction` of the fold-0 training split drawn with `seed`
/// and scores it on the fold-0 validation split. Model, masks and batch
/// order are seeded with `seed` too.
pub fn run_cell(
    setup: &ExperimentSetup,
    ds: &Dataset,
    variant: &str,
    cfg: &SmmtConfig,
    fraction: f64,
    seed: u64,
) -> Result<CellResult> {
    let fold = kfold_split(&ds.labels(), setup.train.folds, seed)?.swap_remove(0);
    let train_ds = subset_fraction(&ds.select(&fold.train)?, fraction, seed)?;
    let val = ds.select(&fold.validation)?;
    let mut cfg = cfg.clone();
    cfg.seed = seed;
    cfg.mask.seed = seed;
    let tc = TrainConfig {
        seed,
        ..setup.train.clone()
    };
    let out = train(&cfg, &tc, &train_ds)?;
    Ok(CellResult {
        variant: variant.to_string(),
        fraction,
        seed,
        metrics: evaluate(&out.model, &val)?,
        train_seconds: out.train_seconds,
        attn_flops: out.attn_flops,
    })
}

/// Per-seed results for every variant and fraction, variant-major.
pub fn ablation_run(setup: &ExperimentSetup, ds: &Dataset, fractions: &[f64]) -> Result<Vec<CellResult>> {
    let mut rows = Vec::new();
    for v in Variant::ALL {
        let cfg = v.apply(&setup.model);
        for &f in fractions {
            for seed in setup.seeds() {
                rows.push(run_cell(setup, ds, v.name(), &cfg, f, seed)?);
            }
        }
    }
    Ok(rows)
}

/// Name of the sweep cell for mask ratio `r`.
pub fn sweep_variant(r: f64) -> String {
    format!("mask_r{r}")
}

/// Per-seed results of the full model at each mask ratio.
pub fn masking_sweep(setup: &ExperimentSetup, ds: &Dataset, ratios: &[f64], fraction: f64) -> Result<Vec<CellResult>> {
    let mut rows = Vec::new();
    for &r in ratios {
        let mut cfg = Variant::Full.apply(&setup.model);
        cfg.mask.ratio = r;
        cfg.mask.validate()?;
        for seed in setup.seeds() {
            rows.push(run_cell(setup, ds, &sweep_variant(r), &cfg, fraction, seed)?);
        }
    }
    Ok(rows)
}

/// Means over seeds for each `(variant, fraction)` group, in first-seen
/// order. The seed column keeps the group's first seed; confusion counts
/// are summed; rates, time and FLOPs are averaged.
pub fn summarize(rows: &[CellResult]) -> Vec<CellResult> {
    let mut groups: Vec<Vec<&CellResult>> = Vec::new();
    for r in rows {
        match groups
            .iter_mut()
            .find(|g| g[0].variant == r.variant && g[0].fraction == r.fraction)
        {
            Some(g) => g.push(r),
            None => groups.push(vec![r]),
        }
    }
    groups
        .into_iter()
        .map(|g| {
            let n = g.len() as f64;
            let mean = |f: &dyn Fn(&CellResult) -> f64| g.iter().map(|r| f(r)).sum::<f64>() / n;
            let mut confusion = ConfusionMatrix::default();
            let mut degenerate: Vec<&'static str> = Vec::new();
            for r in &g {
                let c = r.metrics.confusion;
                confusion.tp += c.tp;
                confusion.tn += c.tn;
                confusion.fp += c.fp;
                confusion.fn_ += c.fn_;
                for d in &r.metrics.degenerate {
                    if !degenerate.contains(d) {
                        degenerate.push(d);
                    }
                }
            }
            CellResult {
                variant: g[0].variant.clone(),
                fraction: g[0].fraction,
                seed: g[0].seed,
                metrics: MetricsReport {
                    confusion,
                    accuracy: mean(&|r| r.metrics.accuracy),
                    precision: mean(&|r| r.metrics.precision),
                    recall: mean(&|r| r.metrics.recall),
                    specificity: mean(&|r| r.metrics.specificity),
                    f1: mean(&|r| r.metrics.f1),
                    auc: mean(&|r| r.metrics.auc),
                    degenerate,
                },
                train_seconds: mean(&|r| r.train_seconds),
                attn_flops: g.iter().map(|r| r.attn_flops).sum::<u64>() / g.len() as u64,
            }
        })
        .collect()
}

pub fn write_rows<W: Write>(out: W, rows: &[CellResult]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.write_record(r.record())?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic, SyntheticSpec};

    fn setup() -> (ExperimentSetup, Dataset) {
        let setup = ExperimentSetup {
            model: SmmtConfig {
                d_model: 8,
                heads: 2,
                image_channels: vec![2, 2, 2, 2],
                numeric_hidden: [4, 4],
                ..SmmtConfig::default()
            },
            train: TrainConfig {
                epochs: 1,
                runs: 2,
                seed: 10,
                ..TrainConfig::default()
            },
        };
        let ds = generate_synthetic(&SyntheticSpec {
            n_samples: 50,
            height: 16,
            width: 16,
            ..SyntheticSpec::default()
        })
        .unwrap();
        (setup, ds)
    }

    #[test]
    fn ablation_grid_shape_and_csv() {
        let (setup, ds) = setup();
        let rows = ablation_run(&setup, &ds, &[0.5, 1.0]).unwrap();
        assert_eq!(rows.len(), 4 * 2 * 2);
        let summary = summarize(&rows);
        assert_eq!(summary.len(), 8);
        let mut buf = Vec::new();
        write_rows(&mut buf, &summary).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), CSV_HEADER.join(","));
        assert_eq!(lines.count(), 8);
        for pair in summary.chunks(2) {
            assert_eq!(pair[0].variant, pair[1].variant);
        }
    }

    #[test]
    fn zero_ratio_matches_unmasked_variant() {
        let (setup, ds) = setup();
        let sweep = masking_sweep(&setup, &ds, &[0.0], 0.5).unwrap();
        let cfg = Variant::NoMask.apply(&setup.model);
        for r in &sweep {
            let plain = run_cell(&setup, &ds, "no_mask", &cfg, 0.5, r.seed).unwrap();
            assert_eq!(plain.metrics, r.metrics);
            assert_eq!(plain.attn_flops, r.attn_flops);
        }
    }

    #[test]
    fn summary_averages_rates() {
        let (setup, ds) = setup();
        let cfg = Variant::Full.apply(&setup.model);
        let a = run_cell(&setup, &ds, "full", &cfg, 1.0, 1).unwrap();
        let b = run_cell(&setup, &ds, "full", &cfg, 1.0, 2).unwrap();
        let s = summarize(&[a.clone(), b.clone()]);
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].metrics.accuracy, (a.metrics.accuracy + b.metrics.accuracy) / 2.0);
        assert_eq!(s[0].metrics.confusion.total(), a.metrics.confusion.total() * 2);
    }
}
