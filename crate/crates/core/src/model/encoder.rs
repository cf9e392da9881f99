use serde::{Deserialize, Serialize};

use super::{he_uniform, linear};
use crate::autodiff::{Bound, Graph, ParamStore, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::rng_from;

/// Residual 1D-CNN encoder and projection head sizes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub n_blocks: usize,
    pub channels: Vec<usize>,
    pub embedding_dim: usize,
    pub projection_dim: usize,
    pub kernel_size: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            n_blocks: 3,
            channels: vec![16, 32, 64],
            embedding_dim: 64,
            projection_dim: 32,
            kernel_size: 7,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels.len() != self.n_blocks {
            return Err(Error::Config(format!(
                "encoder has {} blocks but {} channel counts",
                self.n_blocks,
                self.channels.len()
            )));
        }
        if self.n_blocks == 0
            || self.channels.contains(&0)
            || self.embedding_dim == 0
            || self.projection_dim == 0
            || self.kernel_size == 0
        {
            return Err(Error::Config("encoder dimensions must all be >= 1".into()));
        }
        Ok(())
    }

    /// Recover the architecture from the tensor shapes of a checkpoint.
    pub fn infer(params: &ParamStore) -> Result<Self> {
        let mut channels = Vec::new();
        let mut kernel_size = 0;
        while let Some(w) = params.get(&format!("enc.b{}.conv_a.w", channels.len())) {
            channels.push(w.shape()[0]);
            kernel_size = w.shape()[2];
        }
        if channels.is_empty() {
            return Err(Error::Config("checkpoint holds no encoder blocks".into()));
        }
        let last = *channels.last().unwrap();
        let embedding_dim = params.get("enc.embed.w").map_or(last, |w| w.shape()[1]);
        let projection_dim = params.require("proj.l2.w")?.shape()[1];
        Ok(EncoderConfig {
            n_blocks: channels.len(),
            channels,
            embedding_dim,
            projection_dim,
            kernel_size,
        })
    }
}

/// Encoder `f_θ` (conv blocks + global average pooling) and projection head.
#[derive(Clone, Debug)]
pub struct Encoder {
    config: EncoderConfig,
    input_len: usize,
}

impl Encoder {
    pub fn new(config: EncoderConfig, input_len: usize) -> Result<Self> {
        config.validate()?;
        let enc = Encoder { config, input_len };
        let mut len = input_len;
        for _ in 0..enc.config.n_blocks {
            if len == 0 {
                break;
            }
            len = (len - 1) / 2 + 1;
        }
        if input_len == 0 || len == 0 {
            return Err(Error::Config(format!("input length {input_len} too short for encoder")));
        }
        Ok(enc)
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn input_len(&self) -> usize {
        self.input_len
    }

    fn last_channels(&self) -> usize {
        *self.config.channels.last().unwrap()
    }

    /// Fresh encoder and projector parameters.
    pub fn init(&self, seed: u64) -> ParamStore {
        let mut rng = rng_from(seed);
        let mut p = ParamStore::new();
        let k = self.config.kernel_size;
        let mut c_in = 1;
        for (i, &c) in self.config.channels.iter().enumerate() {
            let pre = format!("enc.b{i}");
            p.insert(format!("{pre}.conv_a.w"), he_uniform(&mut rng, &[c, c_in, k], c_in * k, 1.0));
            p.insert(format!("{pre}.conv_a.b"), Tensor::zeros([c, 1]));
            p.insert(format!("{pre}.conv_b.w"), he_uniform(&mut rng, &[c, c, k], c * k, 1.0));
            p.insert(format!("{pre}.conv_b.b"), Tensor::zeros([c, 1]));
            p.insert(format!("{pre}.skip.w"), he_uniform(&mut rng, &[c, c_in, 1], c_in, 1.0));
            c_in = c;
        }
        let e = self.config.embedding_dim;
        if e != c_in {
            p.insert("enc.embed.w", he_uniform(&mut rng, &[c_in, e], c_in, 1.0));
            p.insert("enc.embed.b", Tensor::zeros([e]));
        }
        let d = self.config.projection_dim;
        p.insert("proj.l1.w", he_uniform(&mut rng, &[e, e], e, 1.0));
        p.insert("proj.l1.b", Tensor::zeros([e]));
        p.insert("proj.l2.w", he_uniform(&mut rng, &[e, d], e, 1.0));
        p.insert("proj.l2.b", Tensor::zeros([d]));
        p
    }

    /// Stack epochs into a `[batch, 1, len]` constant.
    pub fn input<S: AsRef<[f64]>>(&self, g: &mut Graph, epochs: &[S]) -> Result<Var> {
        if epochs.is_empty() {
            return Err(Error::invalid("encoder batch is empty"));
        }
        let mut data = Vec::with_capacity(epochs.len() * self.input_len);
        for e in epochs {
            let e = e.as_ref();
            if e.len() != self.input_len {
                return Err(Error::ShapeMismatch {
                    op: "encode",
                    lhs: vec![e.len()],
                    rhs: vec![self.input_len],
                });
            }
            data.extend_from_slice(e);
        }
        Ok(g.constant(Tensor::new(vec![epochs.len(), 1, self.input_len], data)?))
    }

    /// Embeddings `[batch, embedding_dim]` for an input built by [`Encoder::input`].
    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let pad = self.config.kernel_size / 2;
        let mut h = x;
        for i in 0..self.config.n_blocks {
            let pre = format!("enc.b{i}");
            let a = g.conv1d(h, p.get(&format!("{pre}.conv_a.w"))?, 2, pad)?;
            let a = g.add(a, p.get(&format!("{pre}.conv_a.b"))?)?;
            let a = g.relu(a)?;
            let b = g.conv1d(a, p.get(&format!("{pre}.conv_b.w"))?, 1, pad)?;
            let b = g.add(b, p.get(&format!("{pre}.conv_b.b"))?)?;
            let s = g.conv1d(h, p.get(&format!("{pre}.skip.w"))?, 2, 0)?;
            let sum = g.add(b, s)?;
            h = g.relu(sum)?;
        }
        let pooled = g.mean_axis(h, 2, false)?;
        if self.config.embedding_dim != self.last_channels() {
            linear(g, p, "enc.embed", pooled)
        } else {
            Ok(pooled)
        }
    }

    /// Encode a batch; with `stop_gradient` the result is detached so no
    /// downstream loss reaches the encoder parameters.
    pub fn encode<S: AsRef<[f64]>>(
        &self,
        g: &mut Graph,
        p: &Bound,
        epochs: &[S],
        stop_gradient: bool,
    ) -> Result<Var> {
        let x = self.input(g, epochs)?;
        let z = self.forward(g, p, x)?;
        Ok(if stop_gradient { g.detach(z) } else { z })
    }

    /// Two-layer MLP head followed by row-wise L2 normalisation.
    pub fn project(&self, g: &mut Graph, p: &Bound, z: Var) -> Result<Var> {
        let shape = g.shape(z);
        if shape.len() != 2 || shape[1] != self.config.embedding_dim {
            return Err(Error::ShapeMismatch {
                op: "project",
                lhs: shape.to_vec(),
                rhs: vec![shape.first().copied().unwrap_or(0), self.config.embedding_dim],
            });
        }
        let h = linear(g, p, "proj.l1", z)?;
        let h = g.relu(h)?;
        let h = linear(g, p, "proj.l2", h)?;
        g.l2_normalize(h, 1e-12)
    }

    /// Inference-only embeddings, `[batch, embedding_dim]` row-major.
    pub fn embed<S: AsRef<[f64]>>(&self, params: &ParamStore, epochs: &[S]) -> Result<Tensor> {
        let mut out = Vec::with_capacity(epochs.len() * self.config.embedding_dim);
        // Chunk to keep activation memory bounded on large sets.
        for chunk in epochs.chunks(128) {
            let mut g = Graph::new();
            let p = params.bind_frozen(&mut g);
            let z = self.encode(&mut g, &p, chunk, true)?;
            out.extend_from_slice(g.value(z).data());
        }
        Tensor::new(vec![epochs.len(), self.config.embedding_dim], out)
    }
}
