//! Wall-time, FLOP and memory sweep of dense against cluster-sparse attention.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::attention::{grouped_attention, AttentionWorkspace, Groups};
use crate::clustering::{choose_cluster_count, kmeans_fit, KMeansConfig};
use crate::error::{input_err, Error, Result};
use crate::numeric::Tensor;

use super::flops::{flop_dense, flop_sparse, KMeansCost};

pub const SWEEP_HEADER: [&str; 5] = ["mode", "n", "flops", "wall_ns", "peak_bytes"];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepMode {
    Dense,
    Sparse,
}

impl SweepMode {
    pub fn name(self) -> &'static str {
        match self {
            SweepMode::Dense => "dense",
            SweepMode::Sparse => "sparse",
        }
    }
}

impl fmt::Display for SweepMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dense" => Ok(SweepMode::Dense),
            "sparse" => Ok(SweepMode::Sparse),
            _ => Err(input_err!("mode must be dense or sparse, got {s:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepConfig {
    /// Timed repetitions per point, after one untimed warmup.
    pub runs: usize,
    /// Lloyd iteration cap on the sparse path.
    pub kmeans_iters: usize,
    /// Seeds the Gaussian Q, K and V.
    pub seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            runs: 5,
            kmeans_iters: 10,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub mode: SweepMode,
    pub n: usize,
    /// Modeled FLOPs of one call; the sparse count uses the clusters of the
    /// last timed run.
    pub flops: u64,
    /// Median over the timed runs.
    pub wall_ns: u64,
    /// High-water mark of the attention buffers, clusters and output.
    pub peak_bytes: usize,
}

struct Measured {
    flops: u64,
    bytes: usize,
}

fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let mut v = Vec::new();
    v.try_reserve_exact(rows * cols)
        .map_err(|e| Error::Resource(format!("{rows}x{cols} input: {e}")))?;
    v.extend((0..rows * cols).map(|_| -> f64 { StandardNormal.sample(&mut *rng) }));
    Ok(v)
}

/// One call of the measured kernel, including clustering for sparse mode.
fn run_once(mode: SweepMode, qkv: &[Vec<f64>; 3], n: usize, d_k: usize, heads: usize, iters: usize) -> Result<Measured> {
    let [q, k, v] = qkv;
    let scale = 1.0 / (d_k as f64).sqrt();
    let mut ws = AttentionWorkspace::new();
    let out_bytes = 8 * n * heads * d_k;
    match mode {
        SweepMode::Dense => {
            let out = grouped_attention(q, k, v, n, n, heads, d_k, scale, &Groups::Full, &mut ws);
            std::hint::black_box(&out);
            Ok(Measured {
                flops: flop_dense(n as u64, d_k as u64, heads as u64),
                bytes: ws.bytes() + out_bytes,
            })
        }
        SweepMode::Sparse => {
            let width = heads * d_k;
            let head0: Vec<f64> = (0..n).flat_map(|i| q[i * width..i * width + d_k].iter().copied()).collect();
            let points = Tensor::new(vec![n, d_k], head0)?;
            let kc = choose_cluster_count(n)?;
            let ca = kmeans_fit(
                &points,
                &KMeansConfig {
                    max_iters: iters,
                    ..KMeansConfig::new(kc)
                },
            )?;
            let groups = Groups::from_assignment(&ca);
            let out = grouped_attention(q, k, v, n, n, heads, d_k, scale, &groups, &mut ws);
            std::hint::black_box(&out);
            let sizes: Vec<u64> = ca.sizes.iter().map(|&s| s as u64).collect();
            let cost = KMeansCost {
                k: kc as u64,
                d: d_k as u64,
                iters: ca.iterations as u64,
            };
            let cluster_bytes = 8 * (points.numel() + ca.centroids.numel() + 2 * n + kc);
            Ok(Measured {
                flops: flop_sparse(&sizes, d_k as u64, heads as u64, cost),
                bytes: ws.bytes() + out_bytes + cluster_bytes,
            })
        }
    }
}

fn median(mut v: Vec<u64>) -> u64 {
    v.sort_unstable();
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2
    }
}

/// Times attention on random Gaussian inputs of `n × heads·d_k` for each `n`.
pub fn bench_sweep(ns: &[usize], d_k: usize, heads: usize, mode: SweepMode, cfg: &SweepConfig) -> Result<Vec<SweepRow>> {
    if ns.is_empty() || ns.windows(2).any(|w| w[0] >= w[1]) || ns[0] == 0 {
        return Err(input_err!("n list must be nonempty, positive and strictly increasing"));
    }
    if d_k == 0 || heads == 0 {
        return Err(input_err!("d_k and heads must be positive"));
    }
    if cfg.runs < 5 {
        return Err(input_err!("at least 5 timed runs are required, got {}", cfg.runs));
    }
    let mut rows = Vec::with_capacity(ns.len());
    for &n in ns {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(n as u64);
        let width = heads * d_k;
        let qkv = [gaussian(n, width, &mut rng)?, gaussian(n, width, &mut rng)?, gaussian(n, width, &mut rng)?];
        run_once(mode, &qkv, n, d_k, heads, cfg.kmeans_iters)?;
        let mut times = Vec::with_capacity(cfg.runs);
        let mut last = None;
        for _ in 0..cfg.runs {
            let t = Instant::now();
            let m = run_once(mode, &qkv, n, d_k, heads, cfg.kmeans_iters)?;
            times.push(t.elapsed().as_nanos() as u64);
            last = Some(m);
        }
        let m = last.expect("runs >= 5");
        rows.push(SweepRow {
            mode,
            n,
            flops: m.flops,
            wall_ns: median(times),
            peak_bytes: m.bytes,
        });
    }
    Ok(rows)
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(points: &[(f64, f64)]) -> Result<f64> {
    if points.len() < 2 || points.iter().any(|&(x, y)| !(x > 0.0 && y > 0.0)) {
        return Err(input_err!("slope needs at least two points with positive coordinates"));
    }
    let logs: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    let m = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / m;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / m;
    let sxy: f64 = logs.iter().map(|&(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = logs.iter().map(|&(x, _)| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(input_err!("slope needs at least two distinct x values"));
    }
    Ok(sxy / sxx)
}

pub fn write_sweep<W: Write>(writer: W, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(SWEEP_HEADER)?;
    for r in rows {
        w.write_record([
            r.mode.name().to_string(),
            r.n.to_string(),
            r.flops.to_string(),
            r.wall_ns.to_string(),
            r.peak_bytes.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick() -> SweepConfig {
        SweepConfig {
            runs: 5,
            ..SweepConfig::default()
        }
    }

    #[test]
    fn one_row_per_n() {
        for mode in [SweepMode::Dense, SweepMode::Sparse] {
            let rows = bench_sweep(&[8, 16, 32], 4, 2, mode, &quick()).unwrap();
            assert_eq!(rows.iter().map(|r| r.n).collect::<Vec<_>>(), vec![8, 16, 32]);
            assert!(rows.iter().all(|r| r.flops > 0 && r.peak_bytes > 0 && r.mode == mode));
        }
    }

    #[test]
    fn dense_flops_follow_the_model() {
        let rows = bench_sweep(&[10, 20], 8, 2, SweepMode::Dense, &quick()).unwrap();
        assert_eq!(rows[0].flops, flop_dense(10, 8, 2));
        assert_eq!(rows[1].flops, 4 * rows[0].flops);
    }

    #[test]
    fn sparse_memory_is_below_dense_for_long_inputs() {
        let d = bench_sweep(&[512], 16, 1, SweepMode::Dense, &quick()).unwrap();
        let s = bench_sweep(&[512], 16, 1, SweepMode::Sparse, &quick()).unwrap();
        assert!(s[0].peak_bytes < d[0].peak_bytes);
        assert!(s[0].flops < d[0].flops);
    }

    #[test]
    fn rejects_bad_grids() {
        let c = quick();
        assert!(bench_sweep(&[], 4, 1, SweepMode::Dense, &c).is_err());
        assert!(bench_sweep(&[16, 8], 4, 1, SweepMode::Dense, &c).is_err());
        assert!(bench_sweep(&[8], 0, 1, SweepMode::Dense, &c).is_err());
        assert!(bench_sweep(&[8], 4, 1, SweepMode::Dense, &SweepConfig { runs: 3, ..c }).is_err());
    }

    #[test]
    fn slope_of_power_laws() {
        let pts: Vec<(f64, f64)> = [2.0, 4.0, 8.0, 16.0].iter().map(|&x: &f64| (x, 3.0 * x.powi(2))).collect();
        assert!((log_log_slope(&pts).unwrap() - 2.0).abs() < 1e-12);
        assert!(log_log_slope(&[(1.0, 1.0)]).is_err());
        assert!(log_log_slope(&[(1.0, 1.0), (1.0, 2.0)]).is_err());
    }

    #[test]
    fn csv_has_fixed_header() {
        let rows = bench_sweep(&[8], 4, 1, SweepMode::Sparse, &quick()).unwrap();
        let mut buf = Vec::new();
        write_sweep(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("mode,n,flops,wall_ns,peak_bytes\nsparse,8,"));
        assert_eq!("sparse".parse::<SweepMode>().unwrap(), SweepMode::Sparse);
        assert!("banded".parse::<SweepMode>().is_err());
    }
}
