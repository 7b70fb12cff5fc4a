use crate::config::{ModelConfig, TrainConfig};
use crate::corpus::{Corpus, Split, Utterance};
use crate::encoders::{
    seeded_audio_backbone, seeded_text_backbone, AudioBackbone, AudioCache, ProjectionHead,
    TextBackbone,
};
use crate::error::{Error, Result};
use crate::metrics::TeacherEpoch;
use crate::numerics::ops;
use crate::numerics::{AdamState, Matrix, PlateauScheduler};
use crate::rng::StreamRng;

/// Multimodal teacher: frozen backbones, trainable projection heads, fusion
/// layer, and intent classifier, with an optional contrastive alignment
/// objective over the batch similarity matrix.
#[derive(Clone, Debug)]
pub struct TeacherModel {
    pub audio_backbone: AudioBackbone,
    pub text_backbone: TextBackbone,
    pub audio_head: ProjectionHead,
    pub text_head: ProjectionHead,
    pub fusion_w: Matrix,
    pub fusion_b: Matrix,
    pub fusion_dropout: f64,
    pub classifier_w: Matrix,
    pub classifier_b: Matrix,
    /// Intent ids in classifier column order, sorted ascending.
    pub classes: Vec<usize>,
    pub tau: f64,
    pub use_contrastive: bool,
    pub normalize_before_sim: bool,
    pub tau_literal_multiply: bool,
}

/// Per-batch forward outputs: unimodal embeddings, fused embedding, intent
/// logits, and the similarity matrix.
#[derive(Clone, Debug)]
pub struct TeacherBatchOutput {
    pub e_a: Matrix,
    pub e_t: Matrix,
    pub e_at: Matrix,
    pub logits: Matrix,
    pub c: Matrix,
}

/// Activations saved by the training forward pass.
pub struct TeacherCache {
    audio_caches: Vec<AudioCache>,
    pooled_a: Matrix,
    pooled_t: Matrix,
    mask_a: Matrix,
    mask_t: Matrix,
    /// Row-normalized embeddings if normalization is enabled, otherwise the
    /// raw embeddings; exactly what the similarity matrix was built from.
    u: Matrix,
    v: Matrix,
    x: Matrix,
    z: Matrix,
    mask_f: Matrix,
}

/// Gradients for every trainable teacher parameter, in the same order as
/// `TeacherModel::trainable_mut`.
pub struct TeacherGrads {
    bb_w2: Option<Matrix>,
    bb_b2: Option<Matrix>,
    audio_head_w: Matrix,
    audio_head_b: Matrix,
    text_head_w: Matrix,
    text_head_b: Matrix,
    fusion_w: Matrix,
    fusion_b: Matrix,
    classifier_w: Matrix,
    classifier_b: Matrix,
}

impl TeacherGrads {
    pub fn into_vec(self) -> Vec<Matrix> {
        let mut v = Vec::new();
        if let Some(w2) = self.bb_w2 {
            v.push(w2);
        }
        if let Some(b2) = self.bb_b2 {
            v.push(b2);
        }
        v.extend([
            self.audio_head_w,
            self.audio_head_b,
            self.text_head_w,
            self.text_head_b,
            self.fusion_w,
            self.fusion_b,
            self.classifier_w,
            self.classifier_b,
        ]);
        v
    }
}

impl TeacherModel {
    pub fn new(
        cfg: &ModelConfig,
        d_raw: usize,
        vocab_size: usize,
        classes: Vec<usize>,
        seed: u64,
    ) -> Result<TeacherModel> {
        cfg.validate()?;
        let mut classes = classes;
        classes.sort_unstable();
        classes.dedup();
        if classes.is_empty() {
            return Err(Error::config("teacher needs at least one intent class"));
        }
        let audio_backbone = seeded_audio_backbone(d_raw, cfg.d_hid, seed, cfg.backbone_trainable);
        let text_backbone = seeded_text_backbone(vocab_size, cfg.d_hid, seed);
        let init = StreamRng::new(seed).split("teacher/init");
        let audio_head =
            ProjectionHead::new(cfg.d_hid, cfg.d_emb, cfg.dropout_proj, &mut init.split("audio-head"));
        let text_head =
            ProjectionHead::new(cfg.d_hid, cfg.d_emb, cfg.dropout_proj, &mut init.split("text-head"));
        let fusion_w = Matrix::randn(
            2 * cfg.d_emb,
            cfg.d_emb,
            1.0 / (2.0 * cfg.d_emb as f64).sqrt(),
            &mut init.split("fusion"),
        );
        let fusion_b = Matrix::zeros(1, cfg.d_emb);
        let classifier_w = Matrix::randn(
            cfg.d_emb,
            classes.len(),
            1.0 / (cfg.d_emb as f64).sqrt(),
            &mut init.split("classifier"),
        );
        let classifier_b = Matrix::zeros(1, classes.len());
        Ok(TeacherModel {
            audio_backbone,
            text_backbone,
            audio_head,
            text_head,
            fusion_w,
            fusion_b,
            fusion_dropout: cfg.dropout_fusion,
            classifier_w,
            classifier_b,
            classes,
            tau: cfg.tau,
            use_contrastive: cfg.use_contrastive,
            normalize_before_sim: cfg.normalize_before_sim,
            tau_literal_multiply: cfg.tau_literal_multiply,
        })
    }

    pub fn d_emb(&self) -> usize {
        self.audio_head.d_emb()
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    /// Classifier column for an intent id.
    pub fn label_of(&self, intent: usize) -> Result<usize> {
        self.classes
            .binary_search(&intent)
            .map_err(|_| Error::index("teacher", format!("intent {intent} not in model classes")))
    }

    pub fn labels_for(&self, batch: &[&Utterance]) -> Result<Vec<usize>> {
        batch.iter().map(|u| self.label_of(u.intent)).collect()
    }

    /// Concat -> linear -> ReLU -> dropout. Eval mode when `training` is
    /// false; then `rng` is not consumed.
    pub fn fuse(
        &self,
        e_a: &Matrix,
        e_t: &Matrix,
        rng: &mut StreamRng,
        training: bool,
    ) -> Result<Matrix> {
        let (e_at, _, _, _) = self.fuse_cached(e_a, e_t, rng, training)?;
        Ok(e_at)
    }

    fn fuse_cached(
        &self,
        e_a: &Matrix,
        e_t: &Matrix,
        rng: &mut StreamRng,
        training: bool,
    ) -> Result<(Matrix, Matrix, Matrix, Matrix)> {
        if e_a.rows() != e_t.rows() {
            return Err(Error::dimension(
                "fuse",
                format!("{} audio rows vs {} text rows", e_a.rows(), e_t.rows()),
            ));
        }
        if e_a.cols() != self.d_emb() || e_t.cols() != self.d_emb() {
            return Err(Error::dimension(
                "fuse",
                format!("embeddings {}x{} and {}x{}, expected width {}", e_a.rows(), e_a.cols(), e_t.rows(), e_t.cols(), self.d_emb()),
            ));
        }
        let mut x = Matrix::zeros(e_a.rows(), 2 * self.d_emb());
        for i in 0..e_a.rows() {
            let row = x.row_mut(i);
            row[..self.d_emb()].copy_from_slice(e_a.row(i));
            row[self.d_emb()..].copy_from_slice(e_t.row(i));
        }
        let z = ops::linear_forward(&x, &self.fusion_w, &self.fusion_b)?;
        let r = ops::relu_forward(&z);
        let (e_at, mask) = ops::dropout_forward(&r, self.fusion_dropout, rng, training)?;
        Ok((e_at, x, z, mask))
    }

    /// Pre-softmax intent logits.
    pub fn classify(&self, e_at: &Matrix) -> Result<Matrix> {
        ops::linear_forward(e_at, &self.classifier_w, &self.classifier_b)
    }

    fn encode_batch(&self, batch: &[&Utterance]) -> Result<(Matrix, Matrix, Vec<AudioCache>)> {
        if batch.is_empty() {
            return Err(Error::Empty { op: "teacher_forward" });
        }
        let d_hid = self.audio_backbone.d_hid();
        let mut pooled_a = Matrix::zeros(batch.len(), d_hid);
        let mut pooled_t = Matrix::zeros(batch.len(), d_hid);
        let mut caches = Vec::with_capacity(batch.len());
        for (i, u) in batch.iter().enumerate() {
            let (pa, cache) = self.audio_backbone.encode_cached(&u.frames)?;
            pooled_a.row_mut(i).copy_from_slice(pa.row(0));
            caches.push(cache);
            let pt = self.text_backbone.encode(&u.tokens)?;
            pooled_t.row_mut(i).copy_from_slice(pt.row(0));
        }
        Ok((pooled_a, pooled_t, caches))
    }

    fn sim_scale(&self) -> f64 {
        if self.tau_literal_multiply {
            self.tau
        } else {
            1.0 / self.tau
        }
    }

    /// Deterministic forward pass without dropout.
    pub fn forward_eval(&self, batch: &[&Utterance]) -> Result<TeacherBatchOutput> {
        let (pooled_a, pooled_t, _) = self.encode_batch(batch)?;
        let e_a = self.audio_head.forward_eval(&pooled_a)?;
        let e_t = self.text_head.forward_eval(&pooled_t)?;
        let (u, v) = if self.normalize_before_sim {
            (ops::l2_normalize_rows(&e_a)?, ops::l2_normalize_rows(&e_t)?)
        } else {
            (e_a.clone(), e_t.clone())
        };
        let c = similarity_matrix(&u, &v, self.tau, self.tau_literal_multiply)?;
        let mut throwaway = StreamRng::new(0);
        let e_at = self.fuse(&e_a, &e_t, &mut throwaway, false)?;
        let logits = self.classify(&e_at)?;
        Ok(TeacherBatchOutput { e_a, e_t, e_at, logits, c })
    }

    /// Forward pass with dropout active; `rng` is consumed in the order
    /// audio mask, text mask, fusion mask.
    pub fn forward_train(
        &self,
        batch: &[&Utterance],
        rng: &mut StreamRng,
    ) -> Result<(TeacherBatchOutput, TeacherCache)> {
        let (pooled_a, pooled_t, audio_caches) = self.encode_batch(batch)?;
        let (e_a, mask_a) = self.audio_head.forward_train(&pooled_a, rng)?;
        let (e_t, mask_t) = self.text_head.forward_train(&pooled_t, rng)?;
        let (u, v) = if self.normalize_before_sim {
            (ops::l2_normalize_rows(&e_a)?, ops::l2_normalize_rows(&e_t)?)
        } else {
            (e_a.clone(), e_t.clone())
        };
        let c = similarity_matrix(&u, &v, self.tau, self.tau_literal_multiply)?;
        let (e_at, x, z, mask_f) = self.fuse_cached(&e_a, &e_t, rng, true)?;
        let logits = self.classify(&e_at)?;
        let out = TeacherBatchOutput { e_a, e_t, e_at, logits, c };
        let cache = TeacherCache {
            audio_caches,
            pooled_a,
            pooled_t,
            mask_a,
            mask_t,
            u,
            v,
            x,
            z,
            mask_f,
        };
        Ok((out, cache))
    }

    /// Backpropagation from already-scaled loss gradients. `grad_c` is the
    /// gradient at the similarity matrix; pass None when the contrastive
    /// term is inactive.
    pub fn backward(
        &self,
        out: &TeacherBatchOutput,
        cache: &TeacherCache,
        grad_logits: &Matrix,
        grad_c: Option<&Matrix>,
    ) -> Result<TeacherGrads> {
        let d_emb = self.d_emb();
        let (grad_e_at, g_cls_w, g_cls_b) =
            ops::linear_backward(&out.e_at, &self.classifier_w, grad_logits)?;
        let grad_r = ops::dropout_backward(&cache.mask_f, &grad_e_at)?;
        let grad_z = ops::relu_backward(&cache.z, &grad_r)?;
        let (grad_x, g_fus_w, g_fus_b) = ops::linear_backward(&cache.x, &self.fusion_w, &grad_z)?;

        let n = grad_x.rows();
        let mut grad_e_a = Matrix::zeros(n, d_emb);
        let mut grad_e_t = Matrix::zeros(n, d_emb);
        for i in 0..n {
            grad_e_a.row_mut(i).copy_from_slice(&grad_x.row(i)[..d_emb]);
            grad_e_t.row_mut(i).copy_from_slice(&grad_x.row(i)[d_emb..]);
        }

        if let Some(gc) = grad_c {
            let scale = self.sim_scale();
            let grad_u = ops::matmul(gc, &cache.v)?.scale(scale);
            let grad_v = ops::matmul(&gc.transpose(), &cache.u)?.scale(scale);
            let (ga, gt) = if self.normalize_before_sim {
                (
                    ops::l2_normalize_rows_backward(&out.e_a, &grad_u)?,
                    ops::l2_normalize_rows_backward(&out.e_t, &grad_v)?,
                )
            } else {
                (grad_u, grad_v)
            };
            grad_e_a.add_assign(&ga)?;
            grad_e_t.add_assign(&gt)?;
        }

        let grad_pre_a = ops::dropout_backward(&cache.mask_a, &grad_e_a)?;
        let (grad_pooled_a, g_ah_w, g_ah_b) =
            ops::linear_backward(&cache.pooled_a, &self.audio_head.w, &grad_pre_a)?;
        let grad_pre_t = ops::dropout_backward(&cache.mask_t, &grad_e_t)?;
        let (_, g_th_w, g_th_b) =
            ops::linear_backward(&cache.pooled_t, &self.text_head.w, &grad_pre_t)?;

        let (bb_w2, bb_b2) = if self.audio_backbone.layer2_trainable {
            let mut gw2 = Matrix::zeros(self.audio_backbone.d_hid(), self.audio_backbone.d_hid());
            let mut gb2 = Matrix::zeros(1, self.audio_backbone.d_hid());
            for (i, ac) in cache.audio_caches.iter().enumerate() {
                let gp = Matrix::from_rows(&[grad_pooled_a.row(i)])?;
                let (w2, b2) = self.audio_backbone.backward(ac, &gp)?;
                gw2.add_assign(&w2)?;
                gb2.add_assign(&b2)?;
            }
            (Some(gw2), Some(gb2))
        } else {
            (None, None)
        };

        Ok(TeacherGrads {
            bb_w2,
            bb_b2,
            audio_head_w: g_ah_w,
            audio_head_b: g_ah_b,
            text_head_w: g_th_w,
            text_head_b: g_th_b,
            fusion_w: g_fus_w,
            fusion_b: g_fus_b,
            classifier_w: g_cls_w,
            classifier_b: g_cls_b,
        })
    }

    /// Trainable parameters in update order; the text backbone is excluded
    /// by construction.
    pub fn trainable_mut(&mut self) -> Vec<&mut Matrix> {
        let mut v: Vec<&mut Matrix> = Vec::new();
        if self.audio_backbone.layer2_trainable {
            v.push(&mut self.audio_backbone.w2);
            v.push(&mut self.audio_backbone.b2);
        }
        v.push(&mut self.audio_head.w);
        v.push(&mut self.audio_head.b);
        v.push(&mut self.text_head.w);
        v.push(&mut self.text_head.b);
        v.push(&mut self.fusion_w);
        v.push(&mut self.fusion_b);
        v.push(&mut self.classifier_w);
        v.push(&mut self.classifier_b);
        v
    }

    fn trainable_shapes(&self) -> Vec<(usize, usize)> {
        let mut v = Vec::new();
        if self.audio_backbone.layer2_trainable {
            v.push(self.audio_backbone.w2.shape());
            v.push(self.audio_backbone.b2.shape());
        }
        v.extend([
            self.audio_head.w.shape(),
            self.audio_head.b.shape(),
            self.text_head.w.shape(),
            self.text_head.b.shape(),
            self.fusion_w.shape(),
            self.fusion_b.shape(),
            self.classifier_w.shape(),
            self.classifier_b.shape(),
        ]);
        v
    }

    /// Intent logits without the similarity matrix; eval mode.
    fn eval_logits(&self, batch: &[&Utterance]) -> Result<Matrix> {
        let (pooled_a, pooled_t, _) = self.encode_batch(batch)?;
        let e_a = self.audio_head.forward_eval(&pooled_a)?;
        let e_t = self.text_head.forward_eval(&pooled_t)?;
        let mut throwaway = StreamRng::new(0);
        let e_at = self.fuse(&e_a, &e_t, &mut throwaway, false)?;
        self.classify(&e_at)
    }

    /// Top-1 classification accuracy in eval mode.
    pub fn accuracy(&self, utts: &[&Utterance]) -> Result<f64> {
        if utts.is_empty() {
            return Err(Error::Empty { op: "teacher accuracy" });
        }
        let logits = self.eval_logits(utts)?;
        let labels = self.labels_for(utts)?;
        Ok(accuracy_from_logits(&logits, &labels))
    }

    /// Mean cosine between paired audio and text embeddings, eval mode.
    pub fn mean_diag_cosine(&self, utts: &[&Utterance]) -> Result<f64> {
        if utts.is_empty() {
            return Err(Error::Empty { op: "mean_diag_cosine" });
        }
        let (pooled_a, pooled_t, _) = self.encode_batch(utts)?;
        let e_a = self.audio_head.forward_eval(&pooled_a)?;
        let e_t = self.text_head.forward_eval(&pooled_t)?;
        let mut sum = 0.0;
        for i in 0..utts.len() {
            let a = Matrix::from_rows(&[e_a.row(i)])?;
            let t = Matrix::from_rows(&[e_t.row(i)])?;
            sum += ops::cosine_similarity(&a, &t)?;
        }
        Ok(sum / utts.len() as f64)
    }
}

/// Argmax accuracy; ties go to the lowest class index.
pub(crate) fn accuracy_from_logits(logits: &Matrix, labels: &[usize]) -> f64 {
    let mut correct = 0usize;
    for (i, &label) in labels.iter().enumerate() {
        let row = logits.row(i);
        let mut best = 0usize;
        for (j, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = j;
            }
        }
        if best == label {
            correct += 1;
        }
    }
    correct as f64 / labels.len() as f64
}

/// Intent cross-entropy; the softmax lives inside.
pub fn loss_ic(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    ops::softmax_cross_entropy(logits, labels)
}

/// Scaled dot products between all audio and text embedding pairs. With the
/// default temperature semantics the scale is 1/tau; the literal flag
/// multiplies by tau instead.
pub fn similarity_matrix(
    e_a: &Matrix,
    e_t: &Matrix,
    tau: f64,
    literal_multiply: bool,
) -> Result<Matrix> {
    if tau <= 0.0 {
        return Err(Error::config(format!("tau = {tau} must be positive")));
    }
    if e_a.shape() != e_t.shape() {
        return Err(Error::dimension(
            "similarity_matrix",
            format!("{:?} vs {:?}", e_a.shape(), e_t.shape()),
        ));
    }
    let scale = if literal_multiply { tau } else { 1.0 / tau };
    Ok(ops::matmul(e_a, &e_t.transpose())?.scale(scale))
}

/// Symmetric contrastive loss over a square similarity matrix: cross-entropy
/// along rows (audio axis) and along columns (text axis), each against the
/// diagonal, averaged. Also returns the gradient with respect to C.
pub fn loss_cl(c: &Matrix) -> Result<(f64, Matrix)> {
    if c.rows() != c.cols() {
        return Err(Error::dimension("loss_cl", format!("{}x{} not square", c.rows(), c.cols())));
    }
    let labels: Vec<usize> = (0..c.rows()).collect();
    let (l_audio, g_audio) = ops::softmax_cross_entropy(c, &labels)?;
    let (l_text, g_text) = ops::softmax_cross_entropy(&c.transpose(), &labels)?;
    let loss = 0.5 * (l_audio + l_text);
    let grad = g_audio.add(&g_text.transpose())?.scale(0.5);
    Ok((loss, grad))
}

/// Combined multimodal loss: the mean of intent and contrastive terms, or
/// the intent term alone when the contrastive objective is off.
pub fn loss_mm(l_ic: f64, l_cl: f64, use_contrastive: bool) -> f64 {
    if use_contrastive {
        0.5 * (l_ic + l_cl)
    } else {
        l_ic
    }
}

/// Teacher training record; per-epoch rows plus the eval metrics measured
/// before the first update.
#[derive(Clone, Debug)]
pub struct TeacherTraining {
    pub epochs: Vec<TeacherEpoch>,
    pub initial_dev_accuracy: f64,
    pub initial_diag_cosine: f64,
}

impl TeacherTraining {
    pub fn final_dev_accuracy(&self) -> f64 {
        self.epochs.last().map_or(self.initial_dev_accuracy, |e| e.dev_accuracy)
    }

    pub fn final_diag_cosine(&self) -> f64 {
        self.epochs.last().map_or(self.initial_diag_cosine, |e| e.diag_cosine)
    }
}

/// Trains projection heads, fusion, classifier, and the backbone's trainable
/// layer with Adam and a plateau schedule on dev accuracy. The text backbone
/// never changes. Gradients reach both embeddings through the intent and
/// contrastive terms; parameter updates exclude the text backbone.
pub fn teacher_train(
    model: &mut TeacherModel,
    corpus: &Corpus,
    cfg: &TrainConfig,
) -> Result<TeacherTraining> {
    cfg.validate()?;
    let train = corpus.split_of(Split::Train, &model.classes);
    let dev = corpus.split_of(Split::Dev, &model.classes);
    if train.is_empty() || dev.is_empty() {
        return Err(Error::config("teacher training needs non-empty train and dev splits"));
    }
    let root = StreamRng::new(cfg.seed).split("teacher/train");
    let mut adam = AdamState::new(&model.trainable_shapes(), cfg.lr, cfg.beta1, cfg.beta2, cfg.eps);
    let mut sched =
        PlateauScheduler::new(cfg.lr, cfg.plateau_patience, cfg.plateau_factor, cfg.min_lr);

    let initial_dev_accuracy = model.accuracy(&dev)?;
    let initial_diag_cosine = model.mean_diag_cosine(&dev)?;
    let mut rows = Vec::new();
    let mut best = f64::NEG_INFINITY;
    let mut stale = 0usize;

    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        root.split(&format!("shuffle/{epoch}")).shuffle(&mut order);
        let mut drop_rng = root.split(&format!("dropout/{epoch}"));
        let lr_used = adam.lr();

        let (mut sum_total, mut sum_ic, mut sum_cl) = (0.0, 0.0, 0.0);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Utterance> = chunk.iter().map(|&i| train[i]).collect();
            let labels = model.labels_for(&batch)?;
            let (out, cache) = model.forward_train(&batch, &mut drop_rng)?;
            let (l_ic, g_logits) = loss_ic(&out.logits, &labels)?;
            let (l_cl, g_c) = loss_cl(&out.c)?;
            let l_total = loss_mm(l_ic, l_cl, model.use_contrastive);

            let (g_logits, g_c) = if model.use_contrastive {
                (g_logits.scale(0.5), Some(g_c.scale(0.5)))
            } else {
                (g_logits, None)
            };
            let grads = model.backward(&out, &cache, &g_logits, g_c.as_ref())?.into_vec();
            let grefs: Vec<&Matrix> = grads.iter().collect();
            let mut params = model.trainable_mut();
            adam.step(&mut params, &grefs)?;

            let n = batch.len() as f64;
            sum_total += l_total * n;
            sum_ic += l_ic * n;
            sum_cl += l_cl * n;
        }

        let n_train = train.len() as f64;
        let dev_accuracy = model.accuracy(&dev)?;
        let diag_cosine = model.mean_diag_cosine(&dev)?;
        adam.set_lr(sched.step(dev_accuracy));
        rows.push(TeacherEpoch {
            epoch,
            train_loss: sum_total / n_train,
            ic_loss: sum_ic / n_train,
            cl_loss: sum_cl / n_train,
            dev_accuracy,
            lr: lr_used,
            diag_cosine,
        });

        if dev_accuracy > best {
            best = dev_accuracy;
            stale = 0;
        } else {
            stale += 1;
            if cfg.early_stop_patience > 0 && stale >= cfg.early_stop_patience {
                break;
            }
        }
    }

    Ok(TeacherTraining { epochs: rows, initial_dev_accuracy, initial_diag_cosine })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fingerprint::FingerprintBuilder;
    use crate::numerics::gradcheck::{check_grads, fd_grad};
    use crate::testutil::tiny_corpus;

    fn tiny_model(corpus: &Corpus, seed: u64, cfg: &ModelConfig) -> TeacherModel {
        TeacherModel::new(cfg, corpus.d_raw, corpus.vocab_size, corpus.seen.clone(), seed).unwrap()
    }

    fn tiny_cfg() -> ModelConfig {
        ModelConfig { d_hid: 16, d_emb: 24, ..ModelConfig::default() }
    }

    #[test]
    fn fuse_zero_weights_and_saturated_bias_give_zeros() {
        let corpus = tiny_corpus(2, 10, 6, 1);
        let mut model = tiny_model(&corpus, 5, &tiny_cfg());
        let mut rng = StreamRng::new(0);
        let e_a = Matrix::randn(3, 24, 1.0, &mut rng);
        let e_t = Matrix::randn(3, 24, 1.0, &mut rng);

        model.fusion_w = Matrix::zeros(48, 24);
        model.fusion_b = Matrix::zeros(1, 24);
        let out = model.fuse(&e_a, &e_t, &mut rng, false).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));

        let mut model = tiny_model(&corpus, 5, &tiny_cfg());
        model.fusion_b = Matrix::zeros(1, 24).map(|_| -1e6);
        let out = model.fuse(&e_a, &e_t, &mut rng, false).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fuse_matches_concat_linear_relu_oracle() {
        let corpus = tiny_corpus(2, 10, 6, 2);
        let model = tiny_model(&corpus, 7, &tiny_cfg());
        let mut rng = StreamRng::new(1);
        let e_a = Matrix::randn(2, 24, 1.0, &mut rng);
        let e_t = Matrix::randn(2, 24, 1.0, &mut rng);
        let got = model.fuse(&e_a, &e_t, &mut rng, false).unwrap();
        for i in 0..2 {
            for j in 0..24 {
                let mut s = model.fusion_b.get(0, j);
                for k in 0..24 {
                    s += e_a.get(i, k) * model.fusion_w.get(k, j);
                    s += e_t.get(i, k) * model.fusion_w.get(24 + k, j);
                }
                assert!((got.get(i, j) - s.max(0.0)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn fuse_rejects_row_mismatch() {
        let corpus = tiny_corpus(2, 10, 6, 3);
        let model = tiny_model(&corpus, 7, &tiny_cfg());
        let mut rng = StreamRng::new(2);
        let e_a = Matrix::zeros(2, 24);
        let e_t = Matrix::zeros(3, 24);
        assert!(model.fuse(&e_a, &e_t, &mut rng, false).is_err());
    }

    #[test]
    fn classify_zero_input_returns_bias() {
        let corpus = tiny_corpus(3, 10, 6, 4);
        let mut model = tiny_model(&corpus, 9, &tiny_cfg());
        model.classifier_b = Matrix::from_rows(&[vec![0.1, -0.2, 0.3]]).unwrap();
        let logits = model.classify(&Matrix::zeros(2, 24)).unwrap();
        for i in 0..2 {
            assert_eq!(logits.row(i), model.classifier_b.row(0));
        }
    }

    #[test]
    fn loss_ic_uniform_and_confident() {
        let (loss, _) = loss_ic(&Matrix::zeros(2, 6), &[0, 5]).unwrap();
        assert!((loss - 6.0f64.ln()).abs() < 1e-9);

        let mut confident = Matrix::zeros(2, 6);
        confident.set(0, 1, 60.0);
        confident.set(1, 4, 60.0);
        let (loss, _) = loss_ic(&confident, &[1, 4]).unwrap();
        assert!(loss < 1e-9);
    }

    #[test]
    fn loss_ic_matches_direct_formula_oracle() {
        let mut rng = StreamRng::new(3);
        let logits = Matrix::randn(4, 6, 1.0, &mut rng);
        let labels = [2usize, 0, 5, 3];
        let (got, _) = loss_ic(&logits, &labels).unwrap();

        // Direct summation of the definition, no shared code.
        let mut total = 0.0;
        for (i, &l) in labels.iter().enumerate() {
            let row = logits.row(i);
            let denom: f64 = row.iter().map(|v| v.exp()).sum();
            total -= (row[l].exp() / denom).ln();
        }
        assert!((got - total / 4.0).abs() < 1e-9);
    }

    #[test]
    fn similarity_matrix_cases() {
        let a = Matrix::from_rows(&[vec![0.5, 0.5]]).unwrap();
        let t = Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let c = similarity_matrix(&a, &t, 0.5, false).unwrap();
        assert_eq!(c.shape(), (1, 1));
        assert!((c.get(0, 0) - 1.0).abs() < 1e-12);

        // Orthonormal rows give a scaled identity.
        let e = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let c = similarity_matrix(&e, &e, 0.007, false).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let want = if i == j { 1.0 / 0.007 } else { 0.0 };
                assert!((c.get(i, j) - want).abs() < 1e-9);
            }
        }

        let mut rng = StreamRng::new(4);
        let ea = Matrix::randn(3, 8, 1.0, &mut rng);
        let et = Matrix::randn(3, 8, 1.0, &mut rng);
        let c = similarity_matrix(&ea, &et, 0.007, false).unwrap();
        let c_lit = similarity_matrix(&ea, &et, 0.007, true).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = ea.row(i).iter().zip(et.row(j)).map(|(&x, &y)| x * y).sum();
                assert!((c.get(i, j) - dot / 0.007).abs() < 1e-9);
                assert!((c_lit.get(i, j) - dot * 0.007).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn loss_cl_limit_cases() {
        let one = Matrix::from_rows(&[vec![3.7]]).unwrap();
        let (loss, grad) = loss_cl(&one).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(grad.get(0, 0), 0.0);

        let uniform = Matrix::zeros(5, 5);
        let (loss, _) = loss_cl(&uniform).unwrap();
        assert!((loss - 5.0f64.ln()).abs() < 1e-9);

        let scaled_id = Matrix::from_rows(&[
            vec![50.0, 0.0, 0.0],
            vec![0.0, 50.0, 0.0],
            vec![0.0, 0.0, 50.0],
        ])
        .unwrap();
        let (loss, _) = loss_cl(&scaled_id).unwrap();
        assert!(loss < 1e-6);

        assert!(loss_cl(&Matrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn loss_cl_is_exactly_transpose_symmetric() {
        let mut rng = StreamRng::new(5);
        let c = Matrix::randn(4, 4, 2.0, &mut rng);
        let (l1, _) = loss_cl(&c).unwrap();
        let (l2, _) = loss_cl(&c.transpose()).unwrap();
        assert_eq!(l1.to_bits(), l2.to_bits());
    }

    #[test]
    fn loss_cl_prefers_diagonal_dominance() {
        // Same entries, correct pairs on vs off the diagonal.
        let good = Matrix::from_rows(&[
            vec![5.0, 1.0, 1.0],
            vec![1.0, 5.0, 1.0],
            vec![1.0, 1.0, 5.0],
        ])
        .unwrap();
        let shuffled = Matrix::from_rows(&[
            vec![1.0, 5.0, 1.0],
            vec![1.0, 1.0, 5.0],
            vec![5.0, 1.0, 1.0],
        ])
        .unwrap();
        let (lg, _) = loss_cl(&good).unwrap();
        let (ls, _) = loss_cl(&shuffled).unwrap();
        assert!(lg < ls);
    }

    #[test]
    fn loss_cl_grad_matches_finite_differences() {
        for seed in 0..5 {
            let mut rng = StreamRng::new(60 + seed);
            let c = Matrix::randn(3, 3, 1.5, &mut rng);
            let (_, analytic) = loss_cl(&c).unwrap();
            let fd = fd_grad(&c, 1e-6, |m| loss_cl(m).unwrap().0);
            check_grads(&analytic, &fd, 1e-4).unwrap();
        }
    }

    #[test]
    fn loss_mm_arithmetic() {
        assert_eq!(loss_mm(2.0, 4.0, true), 3.0);
        assert_eq!(loss_mm(2.0, 4.0, false), 2.0);
    }

    #[test]
    fn forward_eval_shapes_and_duplicate_rows() {
        let corpus = tiny_corpus(3, 10, 6, 6);
        let model = tiny_model(&corpus, 11, &tiny_cfg());
        let train = corpus.split(Split::Train);

        let out = model.forward_eval(&[train[0]]).unwrap();
        assert_eq!(out.e_a.rows(), 1);
        assert_eq!(out.e_at.rows(), 1);
        assert_eq!(out.logits.shape(), (1, 3));
        assert_eq!(out.c.shape(), (1, 1));

        let out = model.forward_eval(&[train[2], train[2]]).unwrap();
        assert_eq!(out.e_at.row(0), out.e_at.row(1));
        assert_eq!(out.logits.row(0), out.logits.row(1));
    }

    #[test]
    fn forward_eval_matches_composition_oracle() {
        let corpus = tiny_corpus(3, 10, 6, 7);
        let model = tiny_model(&corpus, 13, &tiny_cfg());
        let train = corpus.split(Split::Train);
        let batch = [train[0], train[5], train[9]];
        let out = model.forward_eval(&batch).unwrap();

        for (i, u) in batch.iter().enumerate() {
            let pa = model.audio_backbone.encode(&u.frames).unwrap();
            let pt = model.text_backbone.encode(&u.tokens).unwrap();
            let ea = model.audio_head.forward_eval(&pa).unwrap();
            let et = model.text_head.forward_eval(&pt).unwrap();
            let mut rng = StreamRng::new(0);
            let eat = model.fuse(&ea, &et, &mut rng, false).unwrap();
            assert!(Matrix::from_rows(&[out.e_at.row(i)]).unwrap().max_abs_diff(&eat) < 1e-12);
        }
    }

    #[test]
    fn teacher_backward_matches_finite_differences() {
        let corpus = tiny_corpus(3, 10, 4, 8);
        let cfg = ModelConfig { d_hid: 5, d_emb: 6, ..ModelConfig::default() };
        let model = tiny_model(&corpus, 17, &cfg);
        let train = corpus.split(Split::Train);
        let batch = [train[0], train[8], train[16]];
        let labels = model.labels_for(&batch).unwrap();

        // Eval-mode loss as a pure function of the model parameters.
        let loss_of = |m: &TeacherModel| {
            let out = m.forward_eval(&batch).unwrap();
            let (l_ic, _) = loss_ic(&out.logits, &labels).unwrap();
            let (l_cl, _) = loss_cl(&out.c).unwrap();
            loss_mm(l_ic, l_cl, true)
        };

        // Analytic gradients from a dropout-free training pass.
        let mut no_drop = model.clone();
        no_drop.audio_head.dropout = 0.0;
        no_drop.text_head.dropout = 0.0;
        no_drop.fusion_dropout = 0.0;
        let mut rng = StreamRng::new(0);
        let (out, cache) = no_drop.forward_train(&batch, &mut rng).unwrap();
        let (_, g_logits) = loss_ic(&out.logits, &labels).unwrap();
        let (_, g_c) = loss_cl(&out.c).unwrap();
        let grads = no_drop
            .backward(&out, &cache, &g_logits.scale(0.5), Some(&g_c.scale(0.5)))
            .unwrap()
            .into_vec();

        // Parameters in trainable order, as (name, getter/setter) pairs.
        let set = |m: &mut TeacherModel, idx: usize, mat: Matrix| match idx {
            0 => m.audio_backbone.w2 = mat,
            1 => m.audio_backbone.b2 = mat,
            2 => m.audio_head.w = mat,
            3 => m.audio_head.b = mat,
            4 => m.text_head.w = mat,
            5 => m.text_head.b = mat,
            6 => m.fusion_w = mat,
            7 => m.fusion_b = mat,
            8 => m.classifier_w = mat,
            9 => m.classifier_b = mat,
            _ => unreachable!(),
        };
        let get = |m: &TeacherModel, idx: usize| -> Matrix {
            match idx {
                0 => m.audio_backbone.w2.clone(),
                1 => m.audio_backbone.b2.clone(),
                2 => m.audio_head.w.clone(),
                3 => m.audio_head.b.clone(),
                4 => m.text_head.w.clone(),
                5 => m.text_head.b.clone(),
                6 => m.fusion_w.clone(),
                7 => m.fusion_b.clone(),
                8 => m.classifier_w.clone(),
                9 => m.classifier_b.clone(),
                _ => unreachable!(),
            }
        };

        for idx in 0..10 {
            let base = get(&no_drop, idx);
            let fd = fd_grad(&base, 1e-6, |mat| {
                let mut probe = no_drop.clone();
                set(&mut probe, idx, mat.clone());
                loss_of(&probe)
            });
            check_grads(&grads[idx], &fd, 1e-4)
                .map_err(|e| format!("parameter {idx}: {e}"))
                .unwrap();
        }
    }

    #[test]
    fn train_zero_epochs_leaves_model_unchanged() {
        let corpus = tiny_corpus(3, 10, 6, 9);
        let mut model = tiny_model(&corpus, 19, &tiny_cfg());
        let before = model.clone();
        let cfg = TrainConfig { epochs: 0, ..TrainConfig::default() };
        let rec = teacher_train(&mut model, &corpus, &cfg).unwrap();
        assert!(rec.epochs.is_empty());
        assert_eq!(model.fusion_w, before.fusion_w);
        assert_eq!(model.audio_head.w, before.audio_head.w);
        assert_eq!(model.audio_backbone.w2, before.audio_backbone.w2);
    }

    #[test]
    fn train_frozen_everything_has_constant_loss_trace() {
        let corpus = tiny_corpus(3, 10, 6, 10);
        let mcfg = ModelConfig {
            d_hid: 16,
            d_emb: 24,
            dropout_proj: 0.0,
            dropout_fusion: 0.0,
            use_contrastive: false,
            ..ModelConfig::default()
        };
        let mut model = tiny_model(&corpus, 21, &mcfg);
        let cfg = TrainConfig { epochs: 4, lr: 0.0, early_stop_patience: 0, ..TrainConfig::default() };
        let rec = teacher_train(&mut model, &corpus, &cfg).unwrap();
        assert_eq!(rec.epochs.len(), 4);
        let first = rec.epochs[0].train_loss;
        for e in &rec.epochs {
            assert!((e.train_loss - first).abs() < 1e-12, "epoch {} loss {} vs {first}", e.epoch, e.train_loss);
        }
    }

    #[test]
    fn train_reduces_loss_and_leaves_text_backbone_untouched() {
        let corpus = tiny_corpus(3, 16, 6, 11);
        let mut model = tiny_model(&corpus, 23, &tiny_cfg());
        let text_sum_before = {
            let mut b = FingerprintBuilder::new("text");
            b.matrix("table", &model.text_backbone.table)
                .matrix("w", &model.text_backbone.mix_w)
                .matrix("b", &model.text_backbone.mix_b);
            b.finish()
        };
        let cfg = TrainConfig {
            epochs: 12,
            batch_size: 6,
            lr: 3e-3,
            early_stop_patience: 0,
            ..TrainConfig::default()
        };
        let rec = teacher_train(&mut model, &corpus, &cfg).unwrap();
        let first = rec.epochs.first().unwrap().train_loss;
        let last = rec.epochs.last().unwrap().train_loss;
        assert!(last < first, "loss did not decrease: {first} -> {last}");

        let text_sum_after = {
            let mut b = FingerprintBuilder::new("text");
            b.matrix("table", &model.text_backbone.table)
                .matrix("w", &model.text_backbone.mix_w)
                .matrix("b", &model.text_backbone.mix_b);
            b.finish()
        };
        assert_eq!(text_sum_before, text_sum_after);
    }

    /// Fraction of utterances whose most similar text embedding (by C row
    /// argmax) carries the same intent.
    fn intent_retrieval(model: &TeacherModel, utts: &[&Utterance]) -> f64 {
        let out = model.forward_eval(utts).unwrap();
        let mut hits = 0usize;
        for i in 0..utts.len() {
            let row = out.c.row(i);
            let mut best = 0usize;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            if utts[best].intent == utts[i].intent {
                hits += 1;
            }
        }
        hits as f64 / utts.len() as f64
    }

    #[test]
    fn train_with_contrastive_aligns_modalities() {
        let corpus = tiny_corpus(3, 16, 6, 12);
        let mut model = tiny_model(&corpus, 25, &tiny_cfg());
        let train = corpus.split(Split::Train);
        let retrieval_before = intent_retrieval(&model, &train);
        let cfg = TrainConfig {
            epochs: 60,
            batch_size: 6,
            lr: 3e-3,
            early_stop_patience: 0,
            ..TrainConfig::default()
        };
        let rec = teacher_train(&mut model, &corpus, &cfg).unwrap();
        let retrieval_after = intent_retrieval(&model, &train);
        assert!(
            retrieval_after > retrieval_before,
            "intent retrieval {retrieval_before} -> {retrieval_after}"
        );
        let first_cl = rec.epochs.first().unwrap().cl_loss;
        let last_cl = rec.epochs.last().unwrap().cl_loss;
        assert!(last_cl < first_cl, "cl loss {first_cl} -> {last_cl}");
    }

    #[test]
    fn train_is_deterministic() {
        let corpus = tiny_corpus(2, 10, 6, 13);
        let cfg = TrainConfig { epochs: 3, batch_size: 4, lr: 1e-3, ..TrainConfig::default() };
        let mut m1 = tiny_model(&corpus, 27, &tiny_cfg());
        let mut m2 = tiny_model(&corpus, 27, &tiny_cfg());
        let r1 = teacher_train(&mut m1, &corpus, &cfg).unwrap();
        let r2 = teacher_train(&mut m2, &corpus, &cfg).unwrap();
        assert_eq!(m1.fusion_w, m2.fusion_w);
        assert_eq!(m1.audio_backbone.w2, m2.audio_backbone.w2);
        for (a, b) in r1.epochs.iter().zip(&r2.epochs) {
            assert_eq!(a.train_loss.to_bits(), b.train_loss.to_bits());
            assert_eq!(a.dev_accuracy.to_bits(), b.dev_accuracy.to_bits());
        }
    }
}
