//! Modality encoders mapping image, numeric and categorical inputs to tokens in
//! a shared `d_model`-wide latent space.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{dim_err, input_err, Result};
use crate::numeric::{ParamId, ParamStore, Tape, Tensor, Var};

/// Width of each categorical embedding.
pub const EMBED_DIM: usize = 32;

/// Token layout of the tabular encoders.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum TabularTokens {
    /// The pooled token followed by one token per input feature.
    #[default]
    PerFeature,
    /// The pooled token only.
    Single,
}

fn uniform<R: Rng>(rng: &mut R, shape: &[usize], bound: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-bound..bound)).collect())
        .expect("positive extents")
}

/// Weight and bias of an affine layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn init<R: Rng>(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, bound: f64, rng: &mut R) -> Self {
        Self {
            w: store.add(format!("{name}.w"), uniform(rng, &[fan_in, fan_out], bound), true),
            b: store.add(format!("{name}.b"), uniform(rng, &[fan_out], bound), true),
        }
    }

    /// Default initialization `U(±1/√fan_in)`.
    pub fn default_init<R: Rng>(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        Self::init(store, name, fan_in, fan_out, 1.0 / (fan_in as f64).sqrt(), rng)
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.w);
        let b = tape.param(store, self.b);
        tape.linear(x, w, b)
    }
}

/// Convolutional blocks (3×3 conv, ReLU, 2×2 average pool) followed by a
/// per-cell linear projection. An `H×W×3` image becomes
/// `(H/2^B)·(W/2^B)` tokens for `B` blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct ImagingEncoder {
    pub blocks: Vec<Linear>,
    pub proj: Linear,
}

impl ImagingEncoder {
    pub fn init<R: Rng>(store: &mut ParamStore, channels: &[usize], d_model: usize, rng: &mut R) -> Result<Self> {
        if channels.is_empty() || channels.contains(&0) {
            return Err(input_err!("imaging encoder needs positive channel counts, got {channels:?}"));
        }
        let mut blocks = Vec::with_capacity(channels.len());
        let mut c_in = 3;
        for (i, &c_out) in channels.iter().enumerate() {
            let fan_in = 9 * c_in;
            let bound = (6.0 / fan_in as f64).sqrt();
            blocks.push(Linear {
                w: store.add(format!("enc.img.conv{i}.w"), uniform(rng, &[fan_in, c_out], bound), true),
                b: store.add(format!("enc.img.conv{i}.b"), Tensor::zeros(&[c_out]), true),
            });
            c_in = c_out;
        }
        let proj = Linear::default_init(store, "enc.img.proj", c_in, d_model, rng);
        Ok(Self { blocks, proj })
    }

    /// Spatial reduction factor per side.
    pub fn stride(&self) -> usize {
        1 << self.blocks.len()
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, img: &Tensor) -> Result<Var> {
        let (h, w) = match *img.shape() {
            [h, w, 3] => (h, w),
            ref s => return Err(dim_err!("image must be [H, W, 3], got {s:?}")),
        };
        let stride = self.stride();
        if h % stride != 0 || w % stride != 0 {
            return Err(dim_err!("image {h}x{w} is not divisible by {stride}"));
        }
        if img.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(input_err!("image intensities must lie in [0, 1]"));
        }
        let mut x = tape.constant(img.clone());
        let (mut ch, mut cw) = (h, w);
        for block in &self.blocks {
            let cols = tape.im2col3x3(x)?;
            let y = block.forward(tape, store, cols)?;
            let y = tape.relu(y);
            let c_out = tape.value(y).cols();
            let y = tape.reshape(y, vec![ch, cw, c_out])?;
            x = tape.avg_pool2(y)?;
            ch /= 2;
            cw /= 2;
        }
        let c = tape.value(x).shape()[2];
        let cells = tape.reshape(x, vec![ch * cw, c])?;
        self.proj.forward(tape, store, cells)
    }

    pub fn encode(&self, store: &ParamStore, img: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let v = self.forward(&mut tape, store, img)?;
        Ok(tape.value(v).clone())
    }
}

/// Three fully connected layers with ReLU between them, plus optional
/// per-feature tokens `x_f · u_f + c_f`.
#[derive(Clone, Debug, PartialEq)]
pub struct NumericEncoder {
    pub layers: [Linear; 3],
    pub feature_scale: ParamId,
    pub feature_shift: ParamId,
    pub n_features: usize,
}

impl NumericEncoder {
    pub fn init<R: Rng>(store: &mut ParamStore, n_features: usize, hidden: [usize; 2], d_model: usize, rng: &mut R) -> Result<Self> {
        if n_features == 0 || hidden.contains(&0) {
            return Err(input_err!("numeric encoder widths must be positive"));
        }
        let layers = [
            Linear::default_init(store, "enc.num.fc0", n_features, hidden[0], rng),
            Linear::default_init(store, "enc.num.fc1", hidden[0], hidden[1], rng),
            Linear::default_init(store, "enc.num.fc2", hidden[1], d_model, rng),
        ];
        let feature_scale = store.add("enc.num.feat_scale", uniform(rng, &[n_features, d_model], 1.0), true);
        let feature_shift = store.add("enc.num.feat_shift", uniform(rng, &[n_features, d_model], 0.1), true);
        Ok(Self {
            layers,
            feature_scale,
            feature_shift,
            n_features,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: &[f64], tokens: TabularTokens) -> Result<Var> {
        if x.len() != self.n_features {
            return Err(dim_err!("expected {} numeric features, got {}", self.n_features, x.len()));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(input_err!("numeric features must be finite"));
        }
        let input = tape.constant(Tensor::new(vec![1, x.len()], x.to_vec())?);
        let h = self.layers[0].forward(tape, store, input)?;
        let h = tape.relu(h);
        let h = self.layers[1].forward(tape, store, h)?;
        let h = tape.relu(h);
        let pooled = self.layers[2].forward(tape, store, h)?;
        match tokens {
            TabularTokens::Single => Ok(pooled),
            TabularTokens::PerFeature => {
                let scale = tape.param(store, self.feature_scale);
                let d = tape.value(scale).cols();
                let factor: Vec<f64> = x.iter().flat_map(|&v| std::iter::repeat_n(v, d)).collect();
                let scaled = tape.mul_const(scale, factor)?;
                let shift = tape.param(store, self.feature_shift);
                let per = tape.add(scaled, shift)?;
                tape.concat_rows(&[pooled, per])
            }
        }
    }

    pub fn encode(&self, store: &ParamStore, x: &[f64], tokens: TabularTokens) -> Result<Tensor> {
        let mut tape = Tape::new();
        let v = self.forward(&mut tape, store, x, tokens)?;
        Ok(tape.value(v).clone())
    }
}

/// Per-field embedding tables, concatenated and linearly projected.
///
/// The projection weight is `32·fields × d_model`. The pooled token is
/// `concat(e_f)·W + b`; the per-field tokens are `e_f·W_f + b`, where `W_f`
/// is the block of rows belonging to field `f`.
#[derive(Clone, Debug, PartialEq)]
pub struct CategoricalEncoder {
    pub tables: Vec<ParamId>,
    pub vocab: Vec<usize>,
    pub proj: Linear,
}

impl CategoricalEncoder {
    pub fn init<R: Rng>(store: &mut ParamStore, vocab: &[usize], d_model: usize, rng: &mut R) -> Result<Self> {
        if vocab.is_empty() || vocab.contains(&0) {
            return Err(input_err!("categorical vocabularies must be nonempty, got {vocab:?}"));
        }
        let tables = vocab
            .iter()
            .enumerate()
            .map(|(f, &v)| {
                let data = (0..v * EMBED_DIM).map(|_| StandardNormal.sample(rng)).collect();
                store.add(format!("enc.cat.embed{f}"), Tensor::new(vec![v, EMBED_DIM], data).expect("positive"), true)
            })
            .collect();
        let proj = Linear::default_init(store, "enc.cat.proj", EMBED_DIM * vocab.len(), d_model, rng);
        Ok(Self {
            tables,
            vocab: vocab.to_vec(),
            proj,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, ids: &[usize], tokens: TabularTokens) -> Result<Var> {
        if ids.len() != self.vocab.len() {
            return Err(dim_err!("expected {} categorical fields, got {}", self.vocab.len(), ids.len()));
        }
        for (f, (&id, &v)) in ids.iter().zip(&self.vocab).enumerate() {
            if id >= v {
                return Err(input_err!("field {f}: id {id} outside vocabulary of {v}"));
            }
        }
        let w = tape.param(store, self.proj.w);
        let b = tape.param(store, self.proj.b);
        let mut parts = Vec::with_capacity(ids.len());
        for (f, &id) in ids.iter().enumerate() {
            let table = tape.param(store, self.tables[f]);
            let e = tape.gather_rows(table, vec![id])?;
            let block = tape.gather_rows(w, (f * EMBED_DIM..(f + 1) * EMBED_DIM).collect())?;
            parts.push(tape.matmul(e, block)?);
        }
        let mut pooled = parts[0];
        for &p in &parts[1..] {
            pooled = tape.add(pooled, p)?;
        }
        let pooled = tape.add_row_bias(pooled, b)?;
        match tokens {
            TabularTokens::Single => Ok(pooled),
            TabularTokens::PerFeature => {
                let mut rows = vec![pooled];
                for p in parts {
                    rows.push(tape.add_row_bias(p, b)?);
                }
                tape.concat_rows(&rows)
            }
        }
    }

    pub fn encode(&self, store: &ParamStore, ids: &[usize], tokens: TabularTokens) -> Result<Tensor> {
        let mut tape = Tape::new();
        let v = self.forward(&mut tape, store, ids, tokens)?;
        Ok(tape.value(v).clone())
    }
}
