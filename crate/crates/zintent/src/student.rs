use crate::config::{ModelConfig, TrainConfig};
use crate::corpus::{Corpus, Split, Utterance};
use crate::encoders::{seeded_audio_backbone, AudioBackbone, AudioCache, ProjectionHead};
use crate::error::{Error, Result};
use crate::metrics::StudentEpoch;
use crate::numerics::ops;
use crate::numerics::{AdamState, Matrix, PlateauScheduler};
use crate::rng::StreamRng;
use crate::teacher::{accuracy_from_logits, loss_ic, TeacherModel};

/// Audio-only student: backbone, projection, feed-forward layer with ReLU,
/// and an intent classifier. Optionally distilled toward the teacher's
/// fused embeddings.
#[derive(Clone, Debug)]
pub struct StudentModel {
    pub backbone: AudioBackbone,
    pub projection: ProjectionHead,
    pub ff_w: Matrix,
    pub ff_b: Matrix,
    pub classifier_w: Matrix,
    pub classifier_b: Matrix,
    pub classes: Vec<usize>,
    pub gamma: f64,
    pub distill: bool,
}

#[derive(Clone, Debug)]
pub struct StudentBatchOutput {
    pub e_s: Matrix,
    pub logits: Matrix,
}

/// Activations saved by the training forward pass.
pub struct StudentCache {
    audio_caches: Vec<AudioCache>,
    pooled: Matrix,
    mask_p: Matrix,
    p: Matrix,
    zf: Matrix,
}

/// Gradients in `trainable_mut` order.
pub struct StudentGrads {
    bb_w2: Option<Matrix>,
    bb_b2: Option<Matrix>,
    proj_w: Matrix,
    proj_b: Matrix,
    ff_w: Matrix,
    ff_b: Matrix,
    classifier_w: Matrix,
    classifier_b: Matrix,
}

impl StudentGrads {
    pub fn into_vec(self) -> Vec<Matrix> {
        let mut v = Vec::new();
        if let Some(w2) = self.bb_w2 {
            v.push(w2);
        }
        if let Some(b2) = self.bb_b2 {
            v.push(b2);
        }
        v.extend([self.proj_w, self.proj_b, self.ff_w, self.ff_b, self.classifier_w, self.classifier_b]);
        v
    }
}

impl StudentModel {
    pub fn new(cfg: &ModelConfig, d_raw: usize, classes: Vec<usize>, seed: u64) -> Result<StudentModel> {
        cfg.validate()?;
        let mut classes = classes;
        classes.sort_unstable();
        classes.dedup();
        if classes.is_empty() {
            return Err(Error::config("student needs at least one intent class"));
        }
        let backbone = seeded_audio_backbone(d_raw, cfg.d_hid, seed, cfg.backbone_trainable);
        let init = StreamRng::new(seed).split("student/init");
        let projection =
            ProjectionHead::new(cfg.d_hid, cfg.d_emb, cfg.dropout_proj, &mut init.split("projection"));
        let ff_w = Matrix::randn(
            cfg.d_emb,
            cfg.d_emb,
            1.0 / (cfg.d_emb as f64).sqrt(),
            &mut init.split("feed-forward"),
        );
        let ff_b = Matrix::zeros(1, cfg.d_emb);
        let classifier_w = Matrix::randn(
            cfg.d_emb,
            classes.len(),
            1.0 / (cfg.d_emb as f64).sqrt(),
            &mut init.split("classifier"),
        );
        let classifier_b = Matrix::zeros(1, classes.len());
        Ok(StudentModel {
            backbone,
            projection,
            ff_w,
            ff_b,
            classifier_w,
            classifier_b,
            classes,
            gamma: cfg.gamma,
            distill: cfg.distill,
        })
    }

    /// Copies trained teacher backbone weights into the student, keeping the
    /// student's own trainability flag.
    pub fn adopt_backbone(&mut self, teacher: &TeacherModel) -> Result<()> {
        let src = &teacher.audio_backbone;
        if src.d_raw() != self.backbone.d_raw() || src.d_hid() != self.backbone.d_hid() {
            return Err(Error::dimension(
                "adopt_backbone",
                format!(
                    "teacher {}x{} vs student {}x{}",
                    src.d_raw(),
                    src.d_hid(),
                    self.backbone.d_raw(),
                    self.backbone.d_hid()
                ),
            ));
        }
        self.backbone.w1 = src.w1.clone();
        self.backbone.b1 = src.b1.clone();
        self.backbone.w2 = src.w2.clone();
        self.backbone.b2 = src.b2.clone();
        Ok(())
    }

    pub fn d_emb(&self) -> usize {
        self.projection.d_emb()
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn label_of(&self, intent: usize) -> Result<usize> {
        self.classes
            .binary_search(&intent)
            .map_err(|_| Error::index("student", format!("intent {intent} not in model classes")))
    }

    pub fn labels_for(&self, batch: &[&Utterance]) -> Result<Vec<usize>> {
        batch.iter().map(|u| self.label_of(u.intent)).collect()
    }

    fn encode_batch(&self, batch: &[&Utterance]) -> Result<(Matrix, Vec<AudioCache>)> {
        if batch.is_empty() {
            return Err(Error::Empty { op: "student_forward" });
        }
        let mut pooled = Matrix::zeros(batch.len(), self.backbone.d_hid());
        let mut caches = Vec::with_capacity(batch.len());
        for (i, u) in batch.iter().enumerate() {
            let (pa, cache) = self.backbone.encode_cached(&u.frames)?;
            pooled.row_mut(i).copy_from_slice(pa.row(0));
            caches.push(cache);
        }
        Ok((pooled, caches))
    }

    /// Deterministic forward pass without dropout.
    pub fn forward_eval(&self, batch: &[&Utterance]) -> Result<StudentBatchOutput> {
        let (pooled, _) = self.encode_batch(batch)?;
        let p = self.projection.forward_eval(&pooled)?;
        let zf = ops::linear_forward(&p, &self.ff_w, &self.ff_b)?;
        let e_s = ops::relu_forward(&zf);
        let logits = ops::linear_forward(&e_s, &self.classifier_w, &self.classifier_b)?;
        Ok(StudentBatchOutput { e_s, logits })
    }

    /// Forward pass with dropout active.
    pub fn forward_train(
        &self,
        batch: &[&Utterance],
        rng: &mut StreamRng,
    ) -> Result<(StudentBatchOutput, StudentCache)> {
        let (pooled, audio_caches) = self.encode_batch(batch)?;
        let (p, mask_p) = self.projection.forward_train(&pooled, rng)?;
        let zf = ops::linear_forward(&p, &self.ff_w, &self.ff_b)?;
        let e_s = ops::relu_forward(&zf);
        let logits = ops::linear_forward(&e_s, &self.classifier_w, &self.classifier_b)?;
        let out = StudentBatchOutput { e_s, logits };
        Ok((out, StudentCache { audio_caches, pooled, mask_p, p, zf }))
    }

    /// Backpropagation; `grad_e_s_extra` carries the distillation gradient
    /// and may be None when that term is inactive.
    pub fn backward(
        &self,
        out: &StudentBatchOutput,
        cache: &StudentCache,
        grad_logits: &Matrix,
        grad_e_s_extra: Option<&Matrix>,
    ) -> Result<StudentGrads> {
        let (mut grad_e_s, g_cls_w, g_cls_b) =
            ops::linear_backward(&out.e_s, &self.classifier_w, grad_logits)?;
        if let Some(extra) = grad_e_s_extra {
            grad_e_s.add_assign(extra)?;
        }
        let grad_zf = ops::relu_backward(&cache.zf, &grad_e_s)?;
        let (grad_p, g_ff_w, g_ff_b) = ops::linear_backward(&cache.p, &self.ff_w, &grad_zf)?;
        let grad_pre = ops::dropout_backward(&cache.mask_p, &grad_p)?;
        let (grad_pooled, g_proj_w, g_proj_b) =
            ops::linear_backward(&cache.pooled, &self.projection.w, &grad_pre)?;

        let (bb_w2, bb_b2) = if self.backbone.layer2_trainable {
            let mut gw2 = Matrix::zeros(self.backbone.d_hid(), self.backbone.d_hid());
            let mut gb2 = Matrix::zeros(1, self.backbone.d_hid());
            for (i, ac) in cache.audio_caches.iter().enumerate() {
                let gp = Matrix::from_rows(&[grad_pooled.row(i)])?;
                let (w2, b2) = self.backbone.backward(ac, &gp)?;
                gw2.add_assign(&w2)?;
                gb2.add_assign(&b2)?;
            }
            (Some(gw2), Some(gb2))
        } else {
            (None, None)
        };

        Ok(StudentGrads {
            bb_w2,
            bb_b2,
            proj_w: g_proj_w,
            proj_b: g_proj_b,
            ff_w: g_ff_w,
            ff_b: g_ff_b,
            classifier_w: g_cls_w,
            classifier_b: g_cls_b,
        })
    }

    pub fn trainable_mut(&mut self) -> Vec<&mut Matrix> {
        let mut v: Vec<&mut Matrix> = Vec::new();
        if self.backbone.layer2_trainable {
            v.push(&mut self.backbone.w2);
            v.push(&mut self.backbone.b2);
        }
        v.push(&mut self.projection.w);
        v.push(&mut self.projection.b);
        v.push(&mut self.ff_w);
        v.push(&mut self.ff_b);
        v.push(&mut self.classifier_w);
        v.push(&mut self.classifier_b);
        v
    }

    fn trainable_shapes(&self) -> Vec<(usize, usize)> {
        let mut v = Vec::new();
        if self.backbone.layer2_trainable {
            v.push(self.backbone.w2.shape());
            v.push(self.backbone.b2.shape());
        }
        v.extend([
            self.projection.w.shape(),
            self.projection.b.shape(),
            self.ff_w.shape(),
            self.ff_b.shape(),
            self.classifier_w.shape(),
            self.classifier_b.shape(),
        ]);
        v
    }

    /// Top-1 classification accuracy in eval mode.
    pub fn accuracy(&self, utts: &[&Utterance]) -> Result<f64> {
        if utts.is_empty() {
            return Err(Error::Empty { op: "student accuracy" });
        }
        let out = self.forward_eval(utts)?;
        let labels = self.labels_for(utts)?;
        Ok(accuracy_from_logits(&out.logits, &labels))
    }
}

/// Mean squared distance between teacher and student embeddings, plus the
/// gradient with respect to the student embeddings.
pub fn loss_student(e_at: &Matrix, e_s: &Matrix) -> Result<(f64, Matrix)> {
    if e_at.shape() != e_s.shape() {
        return Err(Error::dimension(
            "loss_student",
            format!("{:?} vs {:?}", e_at.shape(), e_s.shape()),
        ));
    }
    if e_at.rows() == 0 {
        return Err(Error::Empty { op: "loss_student" });
    }
    let n = e_at.rows() as f64;
    let diff = e_s.sub(e_at)?;
    let loss = diff.data().iter().map(|v| v * v).sum::<f64>() / n;
    Ok((loss, diff.scale(2.0 / n)))
}

/// Combined student objective.
pub fn loss_total(l_intent: f64, l_student: f64, gamma: f64) -> f64 {
    l_intent + gamma * l_student
}

/// Student training record.
#[derive(Clone, Debug)]
pub struct StudentTraining {
    pub epochs: Vec<StudentEpoch>,
    pub initial_dev_accuracy: f64,
    pub initial_dev_distance: f64,
}

impl StudentTraining {
    pub fn final_dev_accuracy(&self) -> f64 {
        self.epochs.last().map_or(self.initial_dev_accuracy, |e| e.dev_accuracy)
    }

    pub fn final_dev_distance(&self) -> f64 {
        self.epochs.last().map_or(self.initial_dev_distance, |e| e.mean_embed_distance)
    }
}

fn dev_distance(
    model: &StudentModel,
    teacher: &TeacherModel,
    dev: &[&Utterance],
) -> Result<f64> {
    let targets = teacher.forward_eval(dev)?.e_at;
    let out = model.forward_eval(dev)?;
    let (dist, _) = loss_student(&targets, &out.e_s)?;
    Ok(dist)
}

/// Trains the student on seen-intent audio. When distillation is configured
/// the teacher provides fused-embedding targets in eval mode and never
/// updates; with `gamma` at zero or distillation off, the teacher is not
/// consulted at all and the run matches a teacher-free one exactly.
pub fn student_train(
    model: &mut StudentModel,
    teacher: Option<&TeacherModel>,
    corpus: &Corpus,
    cfg: &TrainConfig,
) -> Result<StudentTraining> {
    cfg.validate()?;
    if model.distill && teacher.is_none() {
        return Err(Error::Dependency(
            "student distillation requires a trained teacher".into(),
        ));
    }
    let active = model.distill && model.gamma != 0.0;
    let teacher = if active { teacher } else { None };
    if let Some(t) = teacher {
        if t.d_emb() != model.d_emb() {
            return Err(Error::dimension(
                "student_train",
                format!("teacher d_emb {} vs student {}", t.d_emb(), model.d_emb()),
            ));
        }
    }

    let train = corpus.split_of(Split::Train, &model.classes);
    let dev = corpus.split_of(Split::Dev, &model.classes);
    if train.is_empty() || dev.is_empty() {
        return Err(Error::config("student training needs non-empty train and dev splits"));
    }

    let root = StreamRng::new(cfg.seed).split("student/train");
    let mut adam = AdamState::new(&model.trainable_shapes(), cfg.lr, cfg.beta1, cfg.beta2, cfg.eps);
    let mut sched =
        PlateauScheduler::new(cfg.lr, cfg.plateau_patience, cfg.plateau_factor, cfg.min_lr);

    let initial_dev_accuracy = model.accuracy(&dev)?;
    let initial_dev_distance = match teacher {
        Some(t) => dev_distance(model, t, &dev)?,
        None => 0.0,
    };
    let mut rows = Vec::new();
    let mut best = f64::NEG_INFINITY;
    let mut stale = 0usize;

    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        root.split(&format!("shuffle/{epoch}")).shuffle(&mut order);
        let mut drop_rng = root.split(&format!("dropout/{epoch}"));

        let (mut sum_int, mut sum_stu, mut sum_total) = (0.0, 0.0, 0.0);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Utterance> = chunk.iter().map(|&i| train[i]).collect();
            let labels = model.labels_for(&batch)?;
            let (out, cache) = model.forward_train(&batch, &mut drop_rng)?;
            let (l_int, g_logits) = loss_ic(&out.logits, &labels)?;

            let (l_stu, extra) = match teacher {
                Some(t) => {
                    let targets = t.forward_eval(&batch)?.e_at;
                    let (l, g) = loss_student(&targets, &out.e_s)?;
                    (l, Some(g.scale(model.gamma)))
                }
                None => (0.0, None),
            };
            let l_total = loss_total(l_int, l_stu, model.gamma);

            let grads = model.backward(&out, &cache, &g_logits, extra.as_ref())?.into_vec();
            let grefs: Vec<&Matrix> = grads.iter().collect();
            let mut params = model.trainable_mut();
            adam.step(&mut params, &grefs)?;

            let n = batch.len() as f64;
            sum_int += l_int * n;
            sum_stu += l_stu * n;
            sum_total += l_total * n;
        }

        let n_train = train.len() as f64;
        let dev_accuracy = model.accuracy(&dev)?;
        let mean_embed_distance = match teacher {
            Some(t) => dev_distance(model, t, &dev)?,
            None => 0.0,
        };
        adam.set_lr(sched.step(dev_accuracy));
        rows.push(StudentEpoch {
            epoch,
            intent_loss: sum_int / n_train,
            student_loss: sum_stu / n_train,
            total_loss: sum_total / n_train,
            dev_accuracy,
            mean_embed_distance,
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

    Ok(StudentTraining { epochs: rows, initial_dev_accuracy, initial_dev_distance })
}
