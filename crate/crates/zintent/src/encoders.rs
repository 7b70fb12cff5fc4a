use crate::error::{Error, Result};
use crate::numerics::ops;
use crate::numerics::Matrix;
use crate::rng::{derive_seed, StreamRng};

/// Two-layer random MLP applied per audio frame, mean-pooled over time.
/// Layer 1 is always frozen; layer 2 is the fine-tuning analogue of the top
/// encoder layers and trains only when `layer2_trainable` is set.
#[derive(Clone, Debug)]
pub struct AudioBackbone {
    pub w1: Matrix,
    pub b1: Matrix,
    pub w2: Matrix,
    pub b2: Matrix,
    pub layer2_trainable: bool,
    pub seed: u64,
}

/// Forward activations kept for the backward pass through layer 2.
#[derive(Clone, Debug)]
pub struct AudioCache {
    h1: Matrix,
    z2: Matrix,
}

impl AudioBackbone {
    pub fn new(d_raw: usize, d_hid: usize, seed: u64, layer2_trainable: bool) -> AudioBackbone {
        let root = StreamRng::new(seed);
        let w1 = Matrix::randn(d_raw, d_hid, 1.0 / (d_raw as f64).sqrt(), &mut root.split("w1"));
        let b1 = Matrix::randn(1, d_hid, 0.1, &mut root.split("b1"));
        let w2 = Matrix::randn(d_hid, d_hid, 1.0 / (d_hid as f64).sqrt(), &mut root.split("w2"));
        let b2 = Matrix::randn(1, d_hid, 0.1, &mut root.split("b2"));
        AudioBackbone { w1, b1, w2, b2, layer2_trainable, seed }
    }

    pub fn d_raw(&self) -> usize {
        self.w1.rows()
    }

    pub fn d_hid(&self) -> usize {
        self.w1.cols()
    }

    /// Per-frame layer1 -> ReLU -> layer2 -> ReLU, then mean over frames.
    pub fn encode(&self, frames: &Matrix) -> Result<Matrix> {
        Ok(self.encode_cached(frames)?.0)
    }

    pub fn encode_cached(&self, frames: &Matrix) -> Result<(Matrix, AudioCache)> {
        if frames.rows() == 0 {
            return Err(Error::Empty { op: "encode_audio" });
        }
        if frames.cols() != self.d_raw() {
            return Err(Error::dimension(
                "encode_audio",
                format!("frames have {} features, backbone expects {}", frames.cols(), self.d_raw()),
            ));
        }
        let h1 = ops::relu_forward(&ops::linear_forward(frames, &self.w1, &self.b1)?);
        let z2 = ops::linear_forward(&h1, &self.w2, &self.b2)?;
        let h2 = ops::relu_forward(&z2);
        let pooled = ops::mean_pool(&h2)?;
        Ok((pooled, AudioCache { h1, z2 }))
    }

    /// Gradients for layer 2 given the gradient at the pooled output.
    /// Layer 1 is frozen and frames are data, so nothing flows further.
    pub fn backward(&self, cache: &AudioCache, grad_pooled: &Matrix) -> Result<(Matrix, Matrix)> {
        let grad_h2 = ops::mean_pool_backward(grad_pooled, cache.z2.rows());
        let grad_z2 = ops::relu_backward(&cache.z2, &grad_h2)?;
        let (_, grad_w2, grad_b2) = ops::linear_backward(&cache.h1, &self.w2, &grad_z2)?;
        Ok((grad_w2, grad_b2))
    }
}

/// Frozen token table plus a frozen mixing layer; the BERT stand-in. Never
/// trains.
#[derive(Clone, Debug)]
pub struct TextBackbone {
    pub table: Matrix,
    pub mix_w: Matrix,
    pub mix_b: Matrix,
    pub seed: u64,
}

impl TextBackbone {
    pub fn new(vocab_size: usize, d_hid: usize, seed: u64) -> TextBackbone {
        let root = StreamRng::new(seed);
        let table = Matrix::randn(vocab_size, d_hid, 1.0, &mut root.split("table"));
        let mix_w = Matrix::randn(d_hid, d_hid, 1.0 / (d_hid as f64).sqrt(), &mut root.split("mix_w"));
        let mix_b = Matrix::randn(1, d_hid, 0.1, &mut root.split("mix_b"));
        TextBackbone { table, mix_w, mix_b, seed }
    }

    pub fn vocab_size(&self) -> usize {
        self.table.rows()
    }

    pub fn d_hid(&self) -> usize {
        self.table.cols()
    }

    /// Token lookup, mixing layer + ReLU per token, mean pool.
    pub fn encode(&self, tokens: &[usize]) -> Result<Matrix> {
        if tokens.is_empty() {
            return Err(Error::Empty { op: "encode_text" });
        }
        let mut rows = Matrix::zeros(tokens.len(), self.d_hid());
        for (i, &t) in tokens.iter().enumerate() {
            if t >= self.vocab_size() {
                return Err(Error::index(
                    "encode_text",
                    format!("token {t}, vocabulary size {}", self.vocab_size()),
                ));
            }
            rows.row_mut(i).copy_from_slice(self.table.row(t));
        }
        let mixed = ops::relu_forward(&ops::linear_forward(&rows, &self.mix_w, &self.mix_b)?);
        ops::mean_pool(&mixed)
    }
}

/// Trainable linear projection into the shared embedding space, with
/// dropout in training mode.
#[derive(Clone, Debug)]
pub struct ProjectionHead {
    pub w: Matrix,
    pub b: Matrix,
    pub dropout: f64,
}

impl ProjectionHead {
    pub fn new(d_in: usize, d_emb: usize, dropout: f64, rng: &mut StreamRng) -> ProjectionHead {
        let w = Matrix::randn(d_in, d_emb, 1.0 / (d_in as f64).sqrt(), rng);
        let b = Matrix::zeros(1, d_emb);
        ProjectionHead { w, b, dropout }
    }

    pub fn d_emb(&self) -> usize {
        self.w.cols()
    }

    /// Projection with dropout; returns the output and the dropout mask
    /// (the multiplier per entry) for the backward pass.
    pub fn forward_train(&self, x: &Matrix, rng: &mut StreamRng) -> Result<(Matrix, Matrix)> {
        let pre = ops::linear_forward(x, &self.w, &self.b)?;
        ops::dropout_forward(&pre, self.dropout, rng, true)
    }

    /// Plain projection; dropout is the identity in eval mode.
    pub fn forward_eval(&self, x: &Matrix) -> Result<Matrix> {
        ops::linear_forward(x, &self.w, &self.b)
    }
}

/// Audio backbone seeded consistently for one model seed. Teacher, student,
/// and the frozen baseline of a given seed all start from these weights.
pub fn seeded_audio_backbone(d_raw: usize, d_hid: usize, model_seed: u64, trainable: bool) -> AudioBackbone {
    AudioBackbone::new(d_raw, d_hid, derive_seed(model_seed, "audio-backbone"), trainable)
}

/// Text backbone seeded consistently for one model seed.
pub fn seeded_text_backbone(vocab_size: usize, d_hid: usize, model_seed: u64) -> TextBackbone {
    TextBackbone::new(vocab_size, d_hid, derive_seed(model_seed, "text-backbone"))
}
