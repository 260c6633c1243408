//! Synthetic imaging/numeric/categorical records, the `SMMTDS1` file format,
//! stratified subsetting and stratified k-fold splitting.
//!
//! # File layout
//!
//! All integers are little-endian.
//!
//! | offset | size | field |
//! |---|---|---|
//! | 0 | 7 | magic `SMMTDS1` |
//! | 7 | 1 | version (1) |
//! | 8 | 4×6 | `n`, `H`, `W`, `C = 3`, `n_numeric = 4`, `n_categorical = 2` as u32 |
//! | 32 | `n·H·W·C·4` | images, f32, record-major then row-major `H×W×C` |
//! | … | `n·n_numeric·4` | numerics, f32 |
//! | … | `n·n_categorical` | categorical ids, u8 |
//! | … | `n` | labels, u8 |

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{dim_err, input_err, Error, Result};
use crate::numeric::Tensor;

pub const MAGIC: &[u8; 7] = b"SMMTDS1";
pub const VERSION: u8 = 1;
pub const HEADER_BYTES: usize = 32;
pub const CHANNELS: usize = 3;
pub const N_NUMERIC: usize = 4;
pub const N_CATEGORICAL: usize = 2;
/// Vocabulary sizes of the categorical fields (APOE-like, sex-like).
pub const CATEGORICAL_VOCAB: [usize; N_CATEGORICAL] = [3, 2];
pub const NUMERIC_NAMES: [&str; N_NUMERIC] = ["mmse", "cdr", "faq", "age"];

/// One subject. Label 0 is the control class, 1 the positive class.
#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub image: Tensor,
    pub numerics: [f64; N_NUMERIC],
    pub categoricals: [usize; N_CATEGORICAL],
    pub label: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub height: usize,
    pub width: usize,
    pub records: Vec<Record>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.records.iter().map(|r| r.label).collect()
    }

    pub fn class_counts(&self) -> [usize; 2] {
        let mut c = [0; 2];
        for r in &self.records {
            c[r.label] += 1;
        }
        c
    }

    /// Records at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<Dataset> {
        let mut records = Vec::with_capacity(indices.len());
        for &i in indices {
            let r = self
                .records
                .get(i)
                .ok_or_else(|| input_err!("index {i} out of range for {} records", self.len()))?;
            records.push(r.clone());
        }
        Ok(Dataset {
            height: self.height,
            width: self.width,
            records,
        })
    }

    /// Checks every record against the dataset dimensions and value ranges.
    pub fn validate(&self) -> Result<()> {
        for (i, r) in self.records.iter().enumerate() {
            if r.image.shape() != [self.height, self.width, CHANNELS] {
                return Err(dim_err!("record {i}: image shape {:?}", r.image.shape()));
            }
            if r.image.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(input_err!("record {i}: intensity outside [0, 1]"));
            }
            if r.numerics.iter().any(|v| !v.is_finite()) {
                return Err(input_err!("record {i}: non-finite numeric feature"));
            }
            for (f, (&id, &v)) in r.categoricals.iter().zip(&CATEGORICAL_VOCAB).enumerate() {
                if id >= v {
                    return Err(input_err!("record {i}: field {f} id {id} outside vocabulary {v}"));
                }
            }
            if r.label > 1 {
                return Err(input_err!("record {i}: label {}", r.label));
            }
        }
        Ok(())
    }
}

/// A mini-batch of records stacked along a leading axis.
#[derive(Clone, Debug, PartialEq)]
pub struct ModalityBatch {
    /// `[b, H, W, 3]`
    pub images: Tensor,
    /// `[b, 4]`
    pub numerics: Tensor,
    pub categoricals: Vec<[usize; N_CATEGORICAL]>,
    pub labels: Vec<usize>,
}

impl ModalityBatch {
    pub fn from_records<'a, I>(records: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a Record>,
    {
        let mut img = Vec::new();
        let mut num = Vec::new();
        let mut categoricals = Vec::new();
        let mut labels = Vec::new();
        let mut shape: Option<Vec<usize>> = None;
        for r in records {
            match &shape {
                None => shape = Some(r.image.shape().to_vec()),
                Some(s) if s.as_slice() != r.image.shape() => {
                    return Err(dim_err!("mixed image shapes {s:?} and {:?}", r.image.shape()))
                }
                _ => {}
            }
            img.extend_from_slice(r.image.data());
            num.extend_from_slice(&r.numerics);
            categoricals.push(r.categoricals);
            labels.push(r.label);
        }
        let Some(shape) = shape else {
            return Err(input_err!("empty batch"));
        };
        let b = labels.len();
        let mut img_shape = vec![b];
        img_shape.extend(shape);
        Ok(Self {
            images: Tensor::new(img_shape, img)?,
            numerics: Tensor::new(vec![b, N_NUMERIC], num)?,
            categoricals,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Image of sample `i` as `[H, W, 3]`.
    pub fn image(&self, i: usize) -> Tensor {
        let s = self.images.shape();
        let per = s[1] * s[2] * s[3];
        Tensor::new(s[1..].to_vec(), self.images.data()[i * per..(i + 1) * per].to_vec()).expect("batch shape")
    }

    pub fn numeric(&self, i: usize) -> &[f64] {
        self.numerics.row(i)
    }
}

/// Parameters of the synthetic generator.
///
/// Every modality's latent features are
/// `(snr/2)·s·p + √ρ·h·q + √(1−ρ)·ε`, with `s = ±1` the class sign, `p` and
/// `q` fixed unit-norm patterns, `h ~ N(0, 1)` a per-record cause shared by
/// all modalities and `ε ~ N(0, I)`. So `snr` is the distance between class
/// means along `p` in noise standard deviations.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub n_samples: usize,
    /// Probability of the positive class.
    pub class_balance: f64,
    /// Per-modality signal strength: imaging, numeric, categorical.
    pub snr: [f64; 3],
    /// Weight `ρ` of the shared cause.
    pub redundancy: f64,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_samples: 600,
            class_balance: 0.5,
            snr: [1.0; 3],
            redundancy: 0.0,
            height: 32,
            width: 32,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn with_snr(mut self, snr: f64) -> Self {
        self.snr = [snr; 3];
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_samples < 2 {
            return Err(input_err!("need at least 2 samples, got {}", self.n_samples));
        }
        if !(0.0..=1.0).contains(&self.class_balance) {
            return Err(input_err!("class_balance must lie in [0, 1], got {}", self.class_balance));
        }
        if !(0.0..=1.0).contains(&self.redundancy) {
            return Err(input_err!("redundancy must lie in [0, 1], got {}", self.redundancy));
        }
        if self.snr.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(input_err!("snr values must be finite and nonnegative, got {:?}", self.snr));
        }
        if self.height == 0 || self.width == 0 {
            return Err(input_err!("image extents must be positive"));
        }
        if self.height > u32::MAX as usize || self.width > u32::MAX as usize || self.n_samples > u32::MAX as usize {
            return Err(input_err!("dimensions exceed the u32 file format"));
        }
        Ok(())
    }
}

const IMAGE_NOISE_SCALE: f64 = 0.12;
const NUMERIC_PATTERN: [f64; N_NUMERIC] = [-0.6, 0.5, 0.5, 0.37];
const NUMERIC_SHARED: [f64; N_NUMERIC] = [0.5, -0.5, 0.5, 0.5];
const CATEGORICAL_PATTERN: [f64; N_CATEGORICAL] = [0.8, 0.6];
const CATEGORICAL_SHARED: [f64; N_CATEGORICAL] = [0.6, -0.8];

fn normalized(v: Vec<f64>) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / norm).collect()
}

/// Two opposite-signed gaussian blobs, weighted per channel.
fn image_pattern(h: usize, w: usize) -> Vec<f64> {
    let sigma = (h.min(w) as f64 / 6.0).max(0.5);
    let bump = |y: f64, x: f64, cy: f64, cx: f64| (-((y - cy).powi(2) + (x - cx).powi(2)) / (2.0 * sigma * sigma)).exp();
    let (fh, fw) = (h as f64, w as f64);
    let mut out = Vec::with_capacity(h * w * CHANNELS);
    for y in 0..h {
        for x in 0..w {
            let (yf, xf) = (y as f64 + 0.5, x as f64 + 0.5);
            let v = bump(yf, xf, fh / 3.0, fw / 3.0) - bump(yf, xf, 2.0 * fh / 3.0, 2.0 * fw / 3.0);
            for c in 0..CHANNELS {
                out.push(v * [1.0, 0.7, 0.4][c]);
            }
        }
    }
    normalized(out)
}

/// A smooth diagonal ramp.
fn image_shared_pattern(h: usize, w: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(h * w * CHANNELS);
    for y in 0..h {
        for x in 0..w {
            let v = (y as f64 + 0.5) / h as f64 + (x as f64 + 0.5) / w as f64 - 1.0;
            for c in 0..CHANNELS {
                out.push(v * [0.4, 0.7, 1.0][c]);
            }
        }
    }
    if out.iter().all(|&v| v == 0.0) {
        out.iter_mut().for_each(|v| *v = 1.0);
    }
    normalized(out)
}

fn to_f32(v: f64) -> f64 {
    v as f32 as f64
}

/// Index of the bin of `x` among the `n` equiprobable bins of `N(0, var)`.
fn quantile_bin(x: f64, var: f64, n: usize) -> usize {
    // standard normal tertile and median cut points
    let cuts: &[f64] = match n {
        2 => &[0.0],
        3 => &[-0.430_727_299_295_457_5, 0.430_727_299_295_457_5],
        _ => unreachable!("vocabularies are fixed"),
    };
    let z = x / var.sqrt();
    cuts.iter().filter(|&&c| z >= c).count()
}

/// Generates `spec.n_samples` records. Record `i` draws only from its own
/// counter-based stream, so output is independent of generation order.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let (h, w) = (spec.height, spec.width);
    let p_img = image_pattern(h, w);
    let q_img = image_shared_pattern(h, w);
    let p_num = normalized(NUMERIC_PATTERN.to_vec());
    let q_num = normalized(NUMERIC_SHARED.to_vec());
    let p_cat = normalized(CATEGORICAL_PATTERN.to_vec());
    let q_cat = normalized(CATEGORICAL_SHARED.to_vec());
    let rho = spec.redundancy;
    let (shared, own) = (rho.sqrt(), (1.0 - rho).sqrt());

    let records = (0..spec.n_samples)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(i as u64);
            let label = usize::from(rng.random::<f64>() < spec.class_balance);
            let s = if label == 1 { 1.0 } else { -1.0 };
            let cause: f64 = StandardNormal.sample(&mut rng);
            let latent = |snr: f64, p: &[f64], q: &[f64], rng: &mut ChaCha8Rng| -> Vec<f64> {
                p.iter()
                    .zip(q)
                    .map(|(&pj, &qj)| {
                        let eps: f64 = StandardNormal.sample(rng);
                        0.5 * snr * s * pj + shared * cause * qj + own * eps
                    })
                    .collect()
            };
            let img = latent(spec.snr[0], &p_img, &q_img, &mut rng);
            let num = latent(spec.snr[1], &p_num, &q_num, &mut rng);
            let cat = latent(spec.snr[2], &p_cat, &q_cat, &mut rng);

            let image = img
                .iter()
                .map(|&v| to_f32((0.5 + IMAGE_NOISE_SCALE * v).clamp(0.0, 1.0)))
                .collect();
            let numerics = [
                to_f32(26.0 + 2.5 * num[0]),
                to_f32(0.5 + 0.4 * num[1]),
                to_f32(6.0 + 4.0 * num[2]),
                to_f32(73.0 + 7.0 * num[3]),
            ];
            let mut categoricals = [0; N_CATEGORICAL];
            for f in 0..N_CATEGORICAL {
                let var = (0.5 * spec.snr[2] * p_cat[f]).powi(2) + 1.0;
                categoricals[f] = quantile_bin(cat[f], var, CATEGORICAL_VOCAB[f]);
            }
            Record {
                image: Tensor::new(vec![h, w, CHANNELS], image).expect("positive extents"),
                numerics,
                categoricals,
                label,
            }
        })
        .collect();
    Ok(Dataset {
        height: h,
        width: w,
        records,
    })
}

/// An ordering of `labels` in which every prefix is as close to the global
/// class ratio as integer counts allow. Within a class, order is a seeded
/// shuffle.
fn stratified_order(labels: &[usize], seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut per_class: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (i, &l) in labels.iter().enumerate() {
        per_class[l].push(i);
    }
    for c in &mut per_class {
        c.shuffle(&mut rng);
    }
    let n = labels.len();
    let mut taken = [0usize; 2];
    let mut order = Vec::with_capacity(n);
    for t in 0..n {
        let deficit = |c: usize| ((t + 1) * per_class[c].len()) as f64 / n as f64 - taken[c] as f64;
        let c = if taken[0] == per_class[0].len() {
            1
        } else if taken[1] == per_class[1].len() || deficit(0) >= deficit(1) {
            0
        } else {
            1
        };
        order.push(per_class[c][taken[c]]);
        taken[c] += 1;
    }
    order
}

/// A stratified sample of `round(fraction·n)` records, kept in dataset order.
///
/// Samples for different fractions under one seed are prefixes of the same
/// stratified ordering, so smaller subsets are contained in larger ones.
pub fn subset_fraction(ds: &Dataset, fraction: f64, seed: u64) -> Result<Dataset> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(input_err!("fraction must lie in (0, 1], got {fraction}"));
    }
    let n = ds.len();
    let size = (fraction * n as f64).round() as usize;
    let mut idx = stratified_order(&ds.labels(), seed);
    idx.truncate(size);
    idx.sort_unstable();
    let out = ds.select(&idx)?;
    let counts = out.class_counts();
    if counts.contains(&0) {
        return Err(input_err!(
            "fraction {fraction} of {n} records leaves a class empty (counts {counts:?})"
        ));
    }
    Ok(out)
}

/// Train/validation index sets for one fold.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
}

/// Stratified k-fold split of `labels`. Fold sizes differ by at most one, and
/// so do the per-class counts of any two folds.
pub fn kfold_split(labels: &[usize], folds: usize, seed: u64) -> Result<Vec<Fold>> {
    if folds < 2 {
        return Err(input_err!("need at least 2 folds, got {folds}"));
    }
    if folds > labels.len() {
        return Err(input_err!("{folds} folds for {} records", labels.len()));
    }
    if let Some(l) = labels.iter().find(|&&l| l > 1) {
        return Err(input_err!("label {l} is not binary"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dealt = vec![Vec::new(); folds];
    let mut slot = 0;
    for class in 0..2 {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        members.shuffle(&mut rng);
        for i in members {
            dealt[slot % folds].push(i);
            slot += 1;
        }
    }
    Ok((0..folds)
        .map(|f| {
            let mut validation = dealt[f].clone();
            validation.sort_unstable();
            let mut train: Vec<usize> = dealt
                .iter()
                .enumerate()
                .filter(|&(g, _)| g != f)
                .flat_map(|(_, v)| v.iter().copied())
                .collect();
            train.sort_unstable();
            Fold { train, validation }
        })
        .collect())
}

/// Exact size in bytes of a dataset file.
pub fn file_size(n: usize, height: usize, width: usize) -> usize {
    HEADER_BYTES + n * (height * width * CHANNELS * 4 + N_NUMERIC * 4 + N_CATEGORICAL + 1)
}

fn f32_exact(v: f64, what: &str) -> Result<f32> {
    let f = v as f32;
    if f as f64 != v {
        return Err(input_err!("{what} value {v} is not representable as f32"));
    }
    Ok(f)
}

/// Serializes to the `SMMTDS1` layout. Values must be exactly representable
/// as f32 so the round trip is lossless.
pub fn encode_dataset(ds: &Dataset) -> Result<Vec<u8>> {
    ds.validate()?;
    let n = ds.len();
    let mut buf = Vec::with_capacity(file_size(n, ds.height, ds.width));
    buf.extend_from_slice(MAGIC);
    buf.push(VERSION);
    for v in [n, ds.height, ds.width, CHANNELS, N_NUMERIC, N_CATEGORICAL] {
        let v = u32::try_from(v).map_err(|_| input_err!("dimension {v} exceeds u32"))?;
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for r in &ds.records {
        for &v in r.image.data() {
            buf.extend_from_slice(&f32_exact(v, "image")?.to_le_bytes());
        }
    }
    for r in &ds.records {
        for &v in &r.numerics {
            buf.extend_from_slice(&f32_exact(v, "numeric")?.to_le_bytes());
        }
    }
    for r in &ds.records {
        buf.extend(r.categoricals.iter().map(|&c| c as u8));
    }
    buf.extend(ds.records.iter().map(|r| r.label as u8));
    Ok(buf)
}

pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    let bytes = encode_dataset(ds)?;
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    f.flush()?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Io(io::Error::new(
                io::ErrorKind::UnexpectedEof,
                format!("file truncated at byte {} (wanted {n} more)", self.pos),
            ))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| Error::Format("size overflow".into()))?)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect())
    }
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Dataset> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(Error::Format("bad dataset magic".into()));
    }
    let version = r.take(1)?[0];
    if version != VERSION {
        return Err(Error::Format(format!("unsupported dataset version {version}")));
    }
    let [n, h, w, c, nn, nc] = [r.u32()?, r.u32()?, r.u32()?, r.u32()?, r.u32()?, r.u32()?];
    if c != CHANNELS || nn != N_NUMERIC || nc != N_CATEGORICAL || h == 0 || w == 0 {
        return Err(Error::Format(format!(
            "unsupported layout: {h}x{w}x{c}, {nn} numeric, {nc} categorical"
        )));
    }
    let per_image = h
        .checked_mul(w)
        .and_then(|v| v.checked_mul(c))
        .ok_or_else(|| Error::Format("image size overflow".into()))?;
    let images = r.f32s(n.checked_mul(per_image).ok_or_else(|| Error::Format("size overflow".into()))?)?;
    let numerics = r.f32s(n * N_NUMERIC)?;
    let cats = r.take(n * N_CATEGORICAL)?;
    let labels = r.take(n)?;
    if r.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    let records = (0..n)
        .map(|i| {
            Ok(Record {
                image: Tensor::new(vec![h, w, c], images[i * per_image..(i + 1) * per_image].to_vec())?,
                numerics: numerics[i * N_NUMERIC..(i + 1) * N_NUMERIC].try_into().expect("4 values"),
                categoricals: [cats[i * 2] as usize, cats[i * 2 + 1] as usize],
                label: labels[i] as usize,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let ds = Dataset {
        height: h,
        width: w,
        records,
    };
    ds.validate().map_err(|e| Error::Format(format!("invalid contents: {e}")))?;
    Ok(ds)
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_dataset(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small(n: usize, seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            n_samples: n,
            height: 8,
            width: 8,
            seed,
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = SyntheticSpec {
            n_samples: 1000,
            ..small(1000, 42)
        };
        let a = generate_synthetic(&spec).unwrap();
        let b = generate_synthetic(&spec).unwrap();
        assert_eq!(a, b);
        let counts = a.class_counts();
        assert_eq!(counts[0] + counts[1], 1000);
        assert!((counts[1] as f64 - 500.0).abs() < 60.0, "{counts:?}");
        assert_ne!(a, generate_synthetic(&small(1000, 43)).unwrap());
        a.validate().unwrap();
    }

    #[test]
    fn records_depend_only_on_their_index() {
        let short = generate_synthetic(&small(10, 5)).unwrap();
        let long = generate_synthetic(&small(30, 5)).unwrap();
        assert_eq!(short.records[..], long.records[..10]);
    }

    #[test]
    fn class_balance_extremes() {
        let all_pos = generate_synthetic(&SyntheticSpec {
            class_balance: 1.0,
            ..small(50, 1)
        })
        .unwrap();
        assert_eq!(all_pos.class_counts(), [0, 50]);
    }

    #[test]
    fn invalid_specs() {
        for bad in [
            SyntheticSpec { n_samples: 1, ..small(1, 0) },
            SyntheticSpec { class_balance: 1.2, ..small(10, 0) },
            SyntheticSpec { redundancy: -0.1, ..small(10, 0) },
            SyntheticSpec { snr: [1.0, -1.0, 0.0], ..small(10, 0) },
        ] {
            assert!(matches!(generate_synthetic(&bad), Err(Error::Input(_))));
        }
    }

    #[test]
    fn values_survive_f32() {
        let ds = generate_synthetic(&small(20, 3)).unwrap();
        for r in &ds.records {
            assert!(r.image.data().iter().all(|&v| v as f32 as f64 == v));
            assert!(r.numerics.iter().all(|&v| v as f32 as f64 == v));
        }
    }

    #[test]
    fn numeric_signal_separates_classes() {
        // the class-mean difference along the planted direction is snr, here
        // measured on the standardized latent recovered from the numeric scales
        let ds = generate_synthetic(&SyntheticSpec { snr: [0.0, 4.0, 0.0], ..small(2000, 9) }).unwrap();
        let p = normalized(NUMERIC_PATTERN.to_vec());
        let scales = [(26.0, 2.5), (0.5, 0.4), (6.0, 4.0), (73.0, 7.0)];
        let mut sums = [0.0; 2];
        let counts = ds.class_counts();
        for r in &ds.records {
            let proj: f64 = (0..4).map(|j| (r.numerics[j] - scales[j].0) / scales[j].1 * p[j]).sum();
            sums[r.label] += proj;
        }
        let diff = sums[1] / counts[1] as f64 - sums[0] / counts[0] as f64;
        assert!((diff - 4.0).abs() < 0.15, "{diff}");
    }

    #[test]
    fn subset_identity_and_size() {
        let ds = generate_synthetic(&small(50, 2)).unwrap();
        assert_eq!(subset_fraction(&ds, 1.0, 7).unwrap(), ds);
        let balanced = Dataset {
            height: 1,
            width: 1,
            records: (0..1000)
                .map(|i| Record {
                    image: Tensor::zeros(&[1, 1, 3]),
                    numerics: [i as f64; 4],
                    categoricals: [0, 0],
                    label: i % 2,
                })
                .collect(),
        };
        let sub = subset_fraction(&balanced, 0.2, 3).unwrap();
        assert_eq!(sub.len(), 200);
        assert_eq!(sub.class_counts(), [100, 100]);
        assert!(subset_fraction(&balanced, 0.0, 3).is_err());
        assert!(subset_fraction(&balanced, 1.5, 3).is_err());
        assert!(matches!(subset_fraction(&balanced, 0.0004, 3), Err(Error::Input(_))));
    }

    #[test]
    fn kfold_small_case() {
        let labels = [0, 1, 0, 1, 0, 1, 0, 1, 0, 1];
        let folds = kfold_split(&labels, 5, 11).unwrap();
        let mut seen = vec![0; 10];
        for f in &folds {
            assert_eq!(f.validation.len(), 2);
            assert_eq!(f.train.len(), 8);
            for &i in &f.validation {
                seen[i] += 1;
                assert!(!f.train.contains(&i));
            }
        }
        assert!(seen.iter().all(|&c| c == 1));
        assert!(kfold_split(&labels, 11, 0).is_err());
        assert!(kfold_split(&labels, 1, 0).is_err());
    }

    #[test]
    fn file_round_trip_and_size() {
        let ds = generate_synthetic(&small(12, 4)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.smmtds");
        save_dataset(&ds, &path).unwrap();
        assert_eq!(fs::metadata(&path).unwrap().len() as usize, file_size(12, 8, 8));
        assert_eq!(file_size(12, 8, 8), 32 + 12 * (8 * 8 * 3 * 4 + 16 + 2 + 1));
        assert_eq!(load_dataset(&path).unwrap(), ds);
    }

    #[test]
    fn corrupt_and_truncated_files() {
        let ds = generate_synthetic(&small(3, 4)).unwrap();
        let bytes = encode_dataset(&ds).unwrap();
        let mut bad = bytes.clone();
        bad[0] ^= 0xff;
        assert!(matches!(decode_dataset(&bad), Err(Error::Format(_))));
        let mut bad = bytes.clone();
        bad[7] = 9;
        assert!(matches!(decode_dataset(&bad), Err(Error::Format(_))));
        assert!(matches!(decode_dataset(&bytes[..bytes.len() - 1]), Err(Error::Io(_))));
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(decode_dataset(&long), Err(Error::Format(_))));
    }

    #[test]
    fn batch_stacking() {
        let ds = generate_synthetic(&small(3, 8)).unwrap();
        let b = ModalityBatch::from_records(&ds.records).unwrap();
        assert_eq!(b.images.shape(), &[3, 8, 8, 3]);
        assert_eq!(b.numerics.shape(), &[3, 4]);
        assert_eq!(b.image(2), ds.records[2].image);
        assert_eq!(b.numeric(1), &ds.records[1].numerics);
        assert!(ModalityBatch::from_records(&[] as &[Record]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn subsets_are_nested_and_stratified(labels in prop::collection::vec(0usize..2, 10..200), seed in any::<u64>()) {
            let ds = Dataset {
                height: 1,
                width: 1,
                records: labels.iter().enumerate().map(|(i, &l)| Record {
                    image: Tensor::zeros(&[1, 1, 3]),
                    numerics: [i as f64; 4],
                    categoricals: [0, 0],
                    label: l,
                }).collect(),
            };
            let total = ds.class_counts();
            let mut prev: Option<Vec<[f64; 4]>> = None;
            for f in [0.2, 0.4, 0.6, 0.8, 1.0] {
                let Ok(sub) = subset_fraction(&ds, f, seed) else { continue };
                prop_assert_eq!(sub.len(), (f * ds.len() as f64).round() as usize);
                let c = sub.class_counts();
                for k in 0..2 {
                    let ideal = total[k] as f64 * sub.len() as f64 / ds.len() as f64;
                    prop_assert!((c[k] as f64 - ideal).abs() <= 1.0);
                }
                let ids: Vec<[f64; 4]> = sub.records.iter().map(|r| r.numerics).collect();
                if let Some(p) = &prev {
                    prop_assert!(p.iter().all(|x| ids.contains(x)));
                }
                prev = Some(ids);
            }
        }

        #[test]
        fn kfold_invariants(labels in prop::collection::vec(0usize..2, 10..200), folds in 2usize..8, seed in any::<u64>()) {
            let split = kfold_split(&labels, folds, seed).unwrap();
            prop_assert_eq!(&split, &kfold_split(&labels, folds, seed).unwrap());
            let sizes: Vec<usize> = split.iter().map(|f| f.validation.len()).collect();
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
            let mut all: Vec<usize> = split.iter().flat_map(|f| f.validation.clone()).collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..labels.len()).collect::<Vec<_>>());
            let pos = labels.iter().filter(|&&l| l == 1).count() as f64 / labels.len() as f64;
            for f in &split {
                prop_assert_eq!(f.train.len() + f.validation.len(), labels.len());
                prop_assert!(f.validation.iter().all(|i| f.train.binary_search(i).is_err()));
                let fp = f.validation.iter().filter(|&&i| labels[i] == 1).count() as f64;
                let n = f.validation.len() as f64;
                prop_assert!((fp / n - pos).abs() <= 1.0 / n + 1e-12);
            }
        }
    }
}
