//! The cascaded multimodal classifier: per-modality encoders and
//! self-attention, cross-attention fusion in cascade order, training-time
//! masking, mean pooling and an MLP head.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attention::{cross_attention_layer, self_attention_layer, AttentionParams, SparseAttentionFlags, SparsePlan};
use crate::clustering::{ClusterAssignment, KMeansConfig};
use crate::config::KeyValue;
use crate::dataset::{Dataset, ModalityBatch, CATEGORICAL_VOCAB, N_NUMERIC};
use crate::encoders::{CategoricalEncoder, ImagingEncoder, Linear, NumericEncoder, TabularTokens};
use crate::error::{input_err, Error, Result};
use crate::masking::{sample_mask, MaskConfig};
use crate::numeric::{softmax_rows, ParamId, ParamStore, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Modality {
    Imaging,
    Numeric,
    Categorical,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Imaging, Modality::Numeric, Modality::Categorical];

    pub fn name(self) -> &'static str {
        match self {
            Modality::Imaging => "imaging",
            Modality::Numeric => "numeric",
            Modality::Categorical => "categorical",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "imaging" => Ok(Modality::Imaging),
            "numeric" => Ok(Modality::Numeric),
            "categorical" => Ok(Modality::Categorical),
            other => Err(input_err!("unknown modality {other:?}")),
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

/// Every architectural switch of the model.
#[derive(Clone, Debug, PartialEq)]
pub struct SmmtConfig {
    pub d_model: usize,
    pub heads: usize,
    pub cascade_order: [Modality; 3],
    pub use_sparse: bool,
    pub use_mask: bool,
    pub mask: MaskConfig,
    pub flags: SparseAttentionFlags,
    /// Hidden width of the classifier; 0 means `d_model`.
    pub classifier_hidden: usize,
    pub image_channels: Vec<usize>,
    pub numeric_hidden: [usize; 2],
    pub tabular_tokens: TabularTokens,
    pub residual: bool,
    /// When true the fused state supplies queries and each new modality keys
    /// and values; when false the roles are swapped.
    pub fused_as_query: bool,
    /// Number of passes over the cascade. Later passes fold in every modality
    /// again with fresh cross-attention weights.
    pub cascade_repeats: usize,
    pub kmeans_iters: usize,
    /// Cluster count for sparse layers; 0 means `ceil(log2 n)`.
    pub force_k: usize,
    pub seed: u64,
}

impl Default for SmmtConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            heads: 4,
            cascade_order: [Modality::Categorical, Modality::Numeric, Modality::Imaging],
            use_sparse: true,
            use_mask: true,
            mask: MaskConfig::default(),
            flags: SparseAttentionFlags::default(),
            classifier_hidden: 0,
            image_channels: vec![8, 16, 32, 64],
            numeric_hidden: [32, 32],
            tabular_tokens: TabularTokens::PerFeature,
            residual: true,
            fused_as_query: true,
            cascade_repeats: 1,
            kmeans_iters: 10,
            force_k: 0,
            seed: 0,
        }
    }
}

impl SmmtConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.heads == 0 || self.d_model % self.heads != 0 {
            return Err(input_err!("d_model {} must be a positive multiple of heads {}", self.d_model, self.heads));
        }
        let mut seen = [false; 3];
        for m in self.cascade_order {
            seen[m.index()] = true;
        }
        if seen.contains(&false) {
            return Err(input_err!("cascade_order must be a permutation of the three modalities"));
        }
        if self.cascade_repeats == 0 || self.kmeans_iters == 0 {
            return Err(input_err!("cascade_repeats and kmeans_iters must be positive"));
        }
        if self.image_channels.is_empty() || self.image_channels.contains(&0) || self.numeric_hidden.contains(&0) {
            return Err(input_err!("encoder widths must be positive"));
        }
        self.mask.validate()?;
        self.flags.validate()
    }

    pub fn hidden(&self) -> usize {
        if self.classifier_hidden == 0 {
            self.d_model
        } else {
            self.classifier_hidden
        }
    }

    /// Number of cross-attention steps in the cascade.
    pub fn cross_steps(&self) -> usize {
        2 + 3 * (self.cascade_repeats - 1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Clusterings and masks drawn during one forward call, in draw order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trace {
    pub clusters: Vec<ClusterAssignment>,
    pub masks: Vec<Vec<f64>>,
}

/// Per-call forward state: mode, the mask draw counter, and an optional trace
/// to replay instead of drawing fresh clusters and masks.
#[derive(Clone, Debug)]
pub struct ForwardCtx {
    pub mode: Mode,
    /// Next mask draw id; advances across calls so every mask is distinct.
    pub next_draw: u64,
    /// What the last forward drew.
    pub trace: Trace,
    pub replay: Option<Trace>,
    /// Attention and clustering FLOPs of the last forward.
    pub attn_flops: u64,
    cluster_cursor: usize,
    mask_cursor: usize,
}

impl ForwardCtx {
    pub fn new(mode: Mode) -> Self {
        Self {
            mode,
            next_draw: 0,
            trace: Trace::default(),
            replay: None,
            attn_flops: 0,
            cluster_cursor: 0,
            mask_cursor: 0,
        }
    }

    pub fn replaying(mode: Mode, trace: Trace) -> Self {
        Self {
            replay: Some(trace),
            ..Self::new(mode)
        }
    }

    fn reset(&mut self) {
        self.trace = Trace::default();
        self.attn_flops = 0;
        self.cluster_cursor = 0;
        self.mask_cursor = 0;
    }
}

const PREFIX_MEAN: &str = "enc.num.mean";
const PREFIX_STD: &str = "enc.num.std";

#[derive(Clone, Debug, PartialEq)]
pub struct SmmtModel {
    pub config: SmmtConfig,
    pub store: ParamStore,
    pub imaging: ImagingEncoder,
    pub numeric: NumericEncoder,
    pub categorical: CategoricalEncoder,
    /// Self-attention per modality, indexed by [`Modality`] discriminant.
    pub self_attention: Vec<AttentionParams>,
    pub cross_attention: Vec<AttentionParams>,
    pub head: [Linear; 2],
    pub numeric_mean: ParamId,
    pub numeric_std: ParamId,
}

impl SmmtModel {
    /// Builds a model with parameters drawn from `config.seed`. Parameter
    /// names, shapes and order depend only on the config.
    pub fn new(config: SmmtConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let d = config.d_model;
        let imaging = ImagingEncoder::init(&mut store, &config.image_channels, d, &mut rng)?;
        let numeric = NumericEncoder::init(&mut store, N_NUMERIC, config.numeric_hidden, d, &mut rng)?;
        let categorical = CategoricalEncoder::init(&mut store, &CATEGORICAL_VOCAB, d, &mut rng)?;
        let self_attention = Modality::ALL
            .iter()
            .map(|m| AttentionParams::init(&mut store, &format!("self.{}", m.name()), d, config.heads, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let cross_attention = (0..config.cross_steps())
            .map(|i| AttentionParams::init(&mut store, &format!("cross{i}"), d, config.heads, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let hidden = config.hidden();
        let head = [
            Linear::default_init(&mut store, "head.fc0", d, hidden, &mut rng),
            Linear::default_init(&mut store, "head.fc1", hidden, 2, &mut rng),
        ];
        let numeric_mean = store.add(PREFIX_MEAN, Tensor::zeros(&[N_NUMERIC]), false);
        let numeric_std = store.add(PREFIX_STD, Tensor::filled(&[N_NUMERIC], 1.0), false);
        Ok(Self {
            config,
            store,
            imaging,
            numeric,
            categorical,
            self_attention,
            cross_attention,
            head,
            numeric_mean,
            numeric_std,
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.store
            .trainable_ids()
            .map(|id| self.store.get(id).numel())
            .sum()
    }

    /// Fits the numeric standardization buffers on `ds`. A constant feature
    /// keeps unit scale.
    pub fn fit_standardization(&mut self, ds: &Dataset) -> Result<()> {
        if ds.is_empty() {
            return Err(input_err!("cannot standardize on an empty dataset"));
        }
        let n = ds.len() as f64;
        let mut mean = [0.0; N_NUMERIC];
        for r in &ds.records {
            for (m, v) in mean.iter_mut().zip(&r.numerics) {
                *m += v / n;
            }
        }
        let mut var = [0.0; N_NUMERIC];
        for r in &ds.records {
            for j in 0..N_NUMERIC {
                var[j] += (r.numerics[j] - mean[j]).powi(2) / n;
            }
        }
        let std: Vec<f64> = var.iter().map(|v| if *v > 1e-24 { v.sqrt() } else { 1.0 }).collect();
        self.store.set(self.numeric_mean, Tensor::new(vec![N_NUMERIC], mean.to_vec())?)?;
        self.store.set(self.numeric_std, Tensor::new(vec![N_NUMERIC], std)?)?;
        Ok(())
    }

    fn standardize(&self, x: &[f64]) -> Vec<f64> {
        let mean = self.store.get(self.numeric_mean).data();
        let std = self.store.get(self.numeric_std).data();
        x.iter().zip(mean).zip(std).map(|((v, m), s)| (v - m) / s).collect()
    }

    fn plan(&self, ctx: &mut ForwardCtx) -> Result<SparsePlan> {
        if let Some(replay) = &ctx.replay {
            if self.config.use_sparse {
                let ca = replay
                    .clusters
                    .get(ctx.cluster_cursor)
                    .ok_or_else(|| input_err!("replay trace has too few clusterings"))?;
                ctx.cluster_cursor += 1;
                return Ok(SparsePlan::Fixed(ca.clone()));
            }
        }
        Ok(if self.config.use_sparse {
            SparsePlan::KMeans(KMeansConfig {
                k: self.config.force_k,
                max_iters: self.config.kmeans_iters,
                ..KMeansConfig::new(self.config.force_k)
            })
        } else {
            SparsePlan::Dense
        })
    }

    fn mask(&self, tape: &mut Tape, x: Var, ctx: &mut ForwardCtx) -> Result<Var> {
        if ctx.mode != Mode::Train || !self.config.use_mask {
            return Ok(x);
        }
        let len = tape.value(x).numel();
        let m = match &ctx.replay {
            Some(replay) => {
                let m = replay
                    .masks
                    .get(ctx.mask_cursor)
                    .ok_or_else(|| input_err!("replay trace has too few masks"))?
                    .clone();
                ctx.mask_cursor += 1;
                m
            }
            None => {
                let m = sample_mask(len, &self.config.mask, ctx.next_draw)?;
                ctx.next_draw += 1;
                m
            }
        };
        ctx.trace.masks.push(m.clone());
        tape.mul_const(x, m)
    }

    fn modality_tokens(&self, tape: &mut Tape, batch: &ModalityBatch, i: usize, m: Modality, ctx: &mut ForwardCtx) -> Result<Var> {
        let tok = self.config.tabular_tokens;
        let enc = match m {
            Modality::Imaging => self.imaging.forward(tape, &self.store, &batch.image(i))?,
            Modality::Numeric => {
                let x = self.standardize(batch.numeric(i));
                self.numeric.forward(tape, &self.store, &x, tok)?
            }
            Modality::Categorical => self.categorical.forward(tape, &self.store, &batch.categoricals[i], tok)?,
        };
        let plan = self.plan(ctx)?;
        let out = self_attention_layer(
            tape,
            &self.store,
            enc,
            &self.self_attention[m.index()],
            &plan,
            self.config.flags,
            self.config.residual,
        )?;
        ctx.attn_flops += out.attn_flops;
        if let Some(ca) = out.clusters {
            ctx.trace.clusters.push(ca);
        }
        Ok(out.out)
    }

    fn sample_logits(&self, tape: &mut Tape, batch: &ModalityBatch, i: usize, ctx: &mut ForwardCtx) -> Result<Var> {
        let order = self.config.cascade_order;
        let tokens: Vec<Var> = order
            .iter()
            .map(|&m| self.modality_tokens(tape, batch, i, m, ctx))
            .collect::<Result<_>>()?;
        let mut fused = tokens[0];
        let steps = (1..3).chain((1..self.config.cascade_repeats).flat_map(|_| 0..3));
        for (p, t) in self.cross_attention.iter().zip(steps) {
            let (q, kv) = if self.config.fused_as_query {
                (fused, tokens[t])
            } else {
                (tokens[t], fused)
            };
            let out = cross_attention_layer(tape, &self.store, q, kv, p, self.config.residual)?;
            ctx.attn_flops += out.attn_flops;
            fused = self.mask(tape, out.out, ctx)?;
        }
        let pooled = tape.mean_rows(fused);
        let h = self.head[0].forward(tape, &self.store, pooled)?;
        let h = tape.relu(h);
        self.head[1].forward(tape, &self.store, h)
    }

    /// Logits `[b, 2]` recorded on `tape`.
    pub fn forward(&self, tape: &mut Tape, batch: &ModalityBatch, ctx: &mut ForwardCtx) -> Result<Var> {
        if batch.is_empty() {
            return Err(input_err!("empty batch"));
        }
        ctx.reset();
        let rows = (0..batch.len())
            .map(|i| self.sample_logits(tape, batch, i, ctx))
            .collect::<Result<Vec<_>>>()?;
        tape.concat_rows(&rows)
    }

    /// Eval-mode logits as a plain tensor.
    pub fn logits(&self, batch: &ModalityBatch) -> Result<Tensor> {
        let mut tape = Tape::new();
        let mut ctx = ForwardCtx::new(Mode::Eval);
        let v = self.forward(&mut tape, batch, &mut ctx)?;
        Ok(tape.value(v).clone())
    }

    pub fn predict(&self, batch: &ModalityBatch) -> Result<Prediction> {
        predict_from_logits(&self.logits(batch)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    /// Checkpoint bytes: magic `SMMT1`, a u32-length-prefixed `key = value`
    /// config record, a u32 parameter count, then per parameter a u32 name
    /// length, the name, a trainable byte, u32 rank, u32 extents and
    /// little-endian f64 values.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        let cfg = crate::config::to_text(&self.config);
        put_u32(&mut buf, cfg.len());
        buf.extend_from_slice(cfg.as_bytes());
        put_u32(&mut buf, self.store.len());
        for (_, e) in self.store.iter() {
            put_u32(&mut buf, e.name.len());
            buf.extend_from_slice(e.name.as_bytes());
            buf.push(u8::from(e.trainable));
            put_u32(&mut buf, e.value.shape().len());
            for &s in e.value.shape() {
                put_u32(&mut buf, s);
            }
            for v in e.value.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader { bytes, pos: 0 };
        if r.take(CHECKPOINT_MAGIC.len())? != CHECKPOINT_MAGIC {
            return Err(Error::Format("bad checkpoint magic".into()));
        }
        let cfg_len = r.u32()?;
        let cfg_text = std::str::from_utf8(r.take(cfg_len)?).map_err(|_| Error::Format("config record is not UTF-8".into()))?;
        let mut config = SmmtConfig::default();
        for (key, value) in crate::config::parse_lines(cfg_text)? {
            if !config.set_key(&key, &value)? {
                return Err(Error::Format(format!("unknown config key {key:?} in checkpoint")));
            }
        }
        let mut model = Self::new(config)?;
        let count = r.u32()?;
        if count != model.store.len() {
            return Err(Error::Format(format!(
                "checkpoint has {count} parameters, config implies {}",
                model.store.len()
            )));
        }
        for _ in 0..count {
            let name_len = r.u32()?;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::Format("parameter name is not UTF-8".into()))?
                .to_string();
            let trainable = r.take(1)?[0] != 0;
            let rank = r.u32()?;
            let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
            let numel = shape
                .iter()
                .try_fold(1usize, |a, &s| a.checked_mul(s))
                .ok_or_else(|| Error::Format("parameter size overflow".into()))?;
            let raw = r.take(numel.checked_mul(8).ok_or_else(|| Error::Format("parameter size overflow".into()))?)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let id = model
                .store
                .id(&name)
                .ok_or_else(|| Error::Format(format!("unexpected parameter {name:?}")))?;
            if model.store.entry(id).trainable != trainable {
                return Err(Error::Format(format!("parameter {name:?} trainable flag mismatch")));
            }
            let value = Tensor::new(shape, data).map_err(|e| Error::Format(format!("parameter {name:?}: {e}")))?;
            model
                .store
                .set(id, value)
                .map_err(|e| Error::Format(format!("parameter {name:?}: {e}")))?;
        }
        if r.pos != bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(model)
    }
}

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"SMMT1";

fn put_u32(buf: &mut Vec<u8>, v: usize) {
    buf.extend_from_slice(&u32::try_from(v).expect("fits in u32").to_le_bytes());
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                Error::Io(std::io::Error::new(
                    std::io::ErrorKind::UnexpectedEof,
                    format!("checkpoint truncated at byte {}", self.pos),
                ))
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }
}

/// Hard labels and class-1 probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub classes: Vec<usize>,
    pub prob_positive: Vec<f64>,
}

/// Class 1 only when its logit is strictly larger; ties go to class 0.
pub fn predict_from_logits(logits: &Tensor) -> Result<Prediction> {
    if logits.shape().len() != 2 || logits.cols() != 2 {
        return Err(crate::error::dim_err!("logits must be [b, 2], got {:?}", logits.shape()));
    }
    let probs = softmax_rows(logits)?;
    let classes = (0..logits.rows())
        .map(|i| usize::from(logits.row(i)[1] > logits.row(i)[0]))
        .collect();
    let prob_positive = (0..logits.rows()).map(|i| probs.row(i)[1]).collect();
    Ok(Prediction { classes, prob_positive })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic, SyntheticSpec};
    use crate::numeric::{finite_diff_gradcheck, GradCheckConfig};
    use proptest::prelude::*;

    fn tiny_config() -> SmmtConfig {
        SmmtConfig {
            d_model: 8,
            heads: 2,
            image_channels: vec![2, 3, 2, 3],
            numeric_hidden: [6, 5],
            seed: 3,
            ..SmmtConfig::default()
        }
    }

    fn batch(n: usize, seed: u64) -> ModalityBatch {
        let ds = generate_synthetic(&SyntheticSpec {
            n_samples: n,
            height: 16,
            width: 16,
            seed,
            ..SyntheticSpec::default()
        })
        .unwrap();
        ModalityBatch::from_records(&ds.records).unwrap()
    }

    #[test]
    fn logits_shape_and_eval_determinism() {
        let model = SmmtModel::new(tiny_config()).unwrap();
        let b = batch(3, 1);
        let a = model.logits(&b).unwrap();
        assert_eq!(a.shape(), &[3, 2]);
        assert_eq!(a, model.logits(&b).unwrap());
    }

    #[test]
    fn parameter_layout_depends_only_on_config() {
        let a = SmmtModel::new(tiny_config()).unwrap();
        let b = SmmtModel::new(SmmtConfig { seed: 99, ..tiny_config() }).unwrap();
        let names = |m: &SmmtModel| m.store.iter().map(|(_, e)| (e.name.clone(), e.value.shape().to_vec())).collect::<Vec<_>>();
        assert_eq!(names(&a), names(&b));
        assert_eq!(a.parameter_count(), b.parameter_count());
        assert_ne!(a.store, b.store);
    }

    #[test]
    fn invalid_configs() {
        for cfg in [
            SmmtConfig { heads: 3, ..tiny_config() },
            SmmtConfig {
                cascade_order: [Modality::Imaging, Modality::Imaging, Modality::Numeric],
                ..tiny_config()
            },
            SmmtConfig { cascade_repeats: 0, ..tiny_config() },
            SmmtConfig {
                flags: SparseAttentionFlags { scaled_logits: true, raw_logits: true },
                ..tiny_config()
            },
        ] {
            assert!(matches!(SmmtModel::new(cfg), Err(Error::Input(_))));
        }
    }

    #[test]
    fn forced_single_cluster_matches_dense() {
        let sparse = SmmtModel::new(SmmtConfig { force_k: 1, ..tiny_config() }).unwrap();
        let dense = SmmtModel::new(SmmtConfig { use_sparse: false, ..tiny_config() }).unwrap();
        assert_eq!(sparse.store, dense.store);
        let b = batch(4, 2);
        let diff = sparse.logits(&b).unwrap().max_abs_diff(&dense.logits(&b).unwrap());
        assert!(diff < 1e-8, "{diff}");
    }

    #[test]
    fn full_masking_gives_constant_train_logits() {
        let model = SmmtModel::new(SmmtConfig {
            mask: MaskConfig { ratio: 1.0, seed: 5 },
            ..tiny_config()
        })
        .unwrap();
        let b = batch(4, 3);
        let mut tape = Tape::new();
        let mut ctx = ForwardCtx::new(Mode::Train);
        let v = model.forward(&mut tape, &b, &mut ctx).unwrap();
        let logits = tape.value(v);
        for i in 1..4 {
            assert_eq!(logits.row(i), logits.row(0));
        }
        assert_ne!(model.logits(&b).unwrap().row(0), model.logits(&b).unwrap().row(1));
    }

    #[test]
    fn unmasked_train_equals_eval() {
        let model = SmmtModel::new(SmmtConfig { use_mask: false, ..tiny_config() }).unwrap();
        let b = batch(3, 4);
        let mut tape = Tape::new();
        let mut ctx = ForwardCtx::new(Mode::Train);
        let v = model.forward(&mut tape, &b, &mut ctx).unwrap();
        assert_eq!(tape.value(v), &model.logits(&b).unwrap());
        assert!(ctx.trace.masks.is_empty());
    }

    #[test]
    fn masks_advance_between_calls() {
        let model = SmmtModel::new(tiny_config()).unwrap();
        let b = batch(2, 5);
        let mut ctx = ForwardCtx::new(Mode::Train);
        model.forward(&mut Tape::new(), &b, &mut ctx).unwrap();
        let first = ctx.trace.clone();
        model.forward(&mut Tape::new(), &b, &mut ctx).unwrap();
        assert_eq!(first.masks.len(), 2 * model.config.cross_steps());
        assert_ne!(first.masks, ctx.trace.masks);
        assert_eq!(first.clusters, ctx.trace.clusters);
    }

    #[test]
    fn swapped_direction_and_repeats_run() {
        for cfg in [
            SmmtConfig { fused_as_query: false, ..tiny_config() },
            SmmtConfig { cascade_repeats: 2, ..tiny_config() },
            SmmtConfig { tabular_tokens: TabularTokens::Single, ..tiny_config() },
        ] {
            let model = SmmtModel::new(cfg).unwrap();
            assert_eq!(model.logits(&batch(2, 6)).unwrap().shape(), &[2, 2]);
        }
    }

    #[test]
    fn end_to_end_gradcheck_with_fixed_clusters_and_masks() {
        let mut model = SmmtModel::new(tiny_config()).unwrap();
        // zero-initialized conv biases sit on ReLU kinks in flat image regions
        for block in model.imaging.blocks.clone() {
            for (i, b) in model.store.get_mut(block.b).data_mut().iter_mut().enumerate() {
                *b = 0.05 + 0.03 * i as f64;
            }
        }
        let b = batch(2, 7);
        let mut ctx = ForwardCtx::new(Mode::Train);
        model.forward(&mut Tape::new(), &b, &mut ctx).unwrap();
        let trace = ctx.trace.clone();
        assert!(!trace.clusters.is_empty() && !trace.masks.is_empty());
        let report = finite_diff_gradcheck(&model.store, &GradCheckConfig::default(), |tape, store| {
            let m = SmmtModel {
                store: store.clone(),
                ..model.clone()
            };
            let mut ctx = ForwardCtx::replaying(Mode::Train, trace.clone());
            let logits = m.forward(tape, &b, &mut ctx)?;
            tape.cross_entropy(logits, &b.labels)
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let mut model = SmmtModel::new(SmmtConfig {
            mask: MaskConfig { ratio: 0.1 + 0.2, seed: 11 },
            ..tiny_config()
        })
        .unwrap();
        let ds = generate_synthetic(&SyntheticSpec { n_samples: 10, height: 16, width: 16, ..SyntheticSpec::default() }).unwrap();
        model.fit_standardization(&ds).unwrap();
        let bytes = model.to_bytes();
        let back = SmmtModel::from_bytes(&bytes).unwrap();
        assert_eq!(back, model);
        assert_eq!(back.to_bytes(), bytes);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.smmt");
        model.save(&path).unwrap();
        assert_eq!(SmmtModel::load(&path).unwrap(), model);

        let mut bad = bytes.clone();
        bad[1] = b'X';
        assert!(matches!(SmmtModel::from_bytes(&bad), Err(Error::Format(_))));
        assert!(matches!(SmmtModel::from_bytes(&bytes[..bytes.len() - 3]), Err(Error::Io(_))));
    }

    #[test]
    fn prediction_rules() {
        let l = Tensor::new(vec![2, 2], vec![5.0, -5.0, 0.0, 0.0]).unwrap();
        let p = predict_from_logits(&l).unwrap();
        assert_eq!(p.classes, vec![0, 0]);
        assert!(p.prob_positive[0] < 1e-4);
        assert_eq!(p.prob_positive[1], 0.5);
    }

    #[test]
    fn predictions_follow_argmax_of_logits() {
        let model = SmmtModel::new(tiny_config()).unwrap();
        let b = batch(6, 8);
        let logits = model.logits(&b).unwrap();
        let p = model.predict(&b).unwrap();
        for i in 0..6 {
            let r = logits.row(i);
            assert_eq!(p.classes[i], if r[1] > r[0] { 1 } else { 0 });
        }
    }

    proptest! {
        #[test]
        fn argmax_is_shift_invariant(ai in -160i32..160, bi in -160i32..160, ci in -100i32..100) {
            // eighths and integers keep every sum exact
            let (a, b, c) = (ai as f64 / 8.0, bi as f64 / 8.0, ci as f64);
            let l = Tensor::new(vec![1, 2], vec![a, b]).unwrap();
            let s = Tensor::new(vec![1, 2], vec![a + c, b + c]).unwrap();
            prop_assert_eq!(predict_from_logits(&l).unwrap().classes, predict_from_logits(&s).unwrap().classes);
        }
    }
}
