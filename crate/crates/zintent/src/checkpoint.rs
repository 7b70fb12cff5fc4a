use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::encoders::{AudioBackbone, ProjectionHead, TextBackbone};
use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::student::StudentModel;
use crate::teacher::TeacherModel;

const MAGIC: &[u8; 8] = b"ZINTCKPT";
const VERSION: u32 = 1;
const KIND_TEACHER: u8 = 1;
const KIND_STUDENT: u8 = 2;

#[derive(Serialize, Deserialize)]
struct TeacherMeta {
    classes: Vec<usize>,
    tau: f64,
    use_contrastive: bool,
    normalize_before_sim: bool,
    tau_literal_multiply: bool,
    fusion_dropout: f64,
    audio_head_dropout: f64,
    text_head_dropout: f64,
    backbone_trainable: bool,
    /// Seeds are bit-cast to i64: TOML integers cannot carry the full u64
    /// range.
    audio_backbone_seed: i64,
    text_backbone_seed: i64,
}

#[derive(Serialize, Deserialize)]
struct StudentMeta {
    classes: Vec<usize>,
    gamma: f64,
    distill: bool,
    projection_dropout: f64,
    backbone_trainable: bool,
    backbone_seed: i64,
}

/// Either kind of trained model, as read back from disk.
#[derive(Debug)]
pub enum Checkpoint {
    Teacher(TeacherModel),
    Student(StudentModel),
}

fn put_bytes(buf: &mut Vec<u8>, bytes: &[u8]) {
    buf.extend_from_slice(&(bytes.len() as u32).to_le_bytes());
    buf.extend_from_slice(bytes);
}

fn put_tensor(buf: &mut Vec<u8>, name: &str, m: &Matrix) {
    put_bytes(buf, name.as_bytes());
    buf.extend_from_slice(&(m.rows() as u64).to_le_bytes());
    buf.extend_from_slice(&(m.cols() as u64).to_le_bytes());
    for v in m.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    path: &'a str,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::format(self.path, "truncated checkpoint"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn bytes_field(&mut self) -> Result<&'a [u8]> {
        let len = self.u32()? as usize;
        self.take(len)
    }

    fn tensor(&mut self, want: &str) -> Result<Matrix> {
        let name = self.bytes_field()?;
        if name != want.as_bytes() {
            return Err(Error::format(
                self.path,
                format!("expected tensor '{want}', found '{}'", String::from_utf8_lossy(name)),
            ));
        }
        let rows = self.u64()? as usize;
        let cols = self.u64()? as usize;
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::format(self.path, "tensor dimensions overflow"))?;
        let raw = self.take(n * 8)?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Matrix::from_vec(rows, cols, data)
    }
}

fn finish_and_write(path: &Path, mut buf: Vec<u8>) -> Result<()> {
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    fs::write(path, buf)?;
    Ok(())
}

fn open_checked(path: &Path, bytes: &[u8]) -> Result<usize> {
    let name = path.display().to_string();
    if bytes.len() < MAGIC.len() + 4 + 1 + 32 {
        return Err(Error::format(name, "file too short to be a checkpoint"));
    }
    if &bytes[..8] != MAGIC {
        return Err(Error::format(name, "bad magic, not a checkpoint file"));
    }
    let body = &bytes[..bytes.len() - 32];
    let stored = &bytes[bytes.len() - 32..];
    let digest = Sha256::digest(body);
    if digest.as_slice() != stored {
        return Err(Error::format(name, "checksum mismatch, file is corrupt"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(Error::format(name, format!("unsupported checkpoint version {version}")));
    }
    Ok(body.len())
}

pub fn save_teacher(path: &Path, model: &TeacherModel) -> Result<()> {
    let meta = TeacherMeta {
        classes: model.classes.clone(),
        tau: model.tau,
        use_contrastive: model.use_contrastive,
        normalize_before_sim: model.normalize_before_sim,
        tau_literal_multiply: model.tau_literal_multiply,
        fusion_dropout: model.fusion_dropout,
        audio_head_dropout: model.audio_head.dropout,
        text_head_dropout: model.text_head.dropout,
        backbone_trainable: model.audio_backbone.layer2_trainable,
        audio_backbone_seed: model.audio_backbone.seed as i64,
        text_backbone_seed: model.text_backbone.seed as i64,
    };
    let meta_toml = toml::to_string(&meta).map_err(|e| Error::config(e.to_string()))?;

    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.push(KIND_TEACHER);
    put_bytes(&mut buf, meta_toml.as_bytes());
    put_tensor(&mut buf, "audio.w1", &model.audio_backbone.w1);
    put_tensor(&mut buf, "audio.b1", &model.audio_backbone.b1);
    put_tensor(&mut buf, "audio.w2", &model.audio_backbone.w2);
    put_tensor(&mut buf, "audio.b2", &model.audio_backbone.b2);
    put_tensor(&mut buf, "text.table", &model.text_backbone.table);
    put_tensor(&mut buf, "text.mix_w", &model.text_backbone.mix_w);
    put_tensor(&mut buf, "text.mix_b", &model.text_backbone.mix_b);
    put_tensor(&mut buf, "audio_head.w", &model.audio_head.w);
    put_tensor(&mut buf, "audio_head.b", &model.audio_head.b);
    put_tensor(&mut buf, "text_head.w", &model.text_head.w);
    put_tensor(&mut buf, "text_head.b", &model.text_head.b);
    put_tensor(&mut buf, "fusion.w", &model.fusion_w);
    put_tensor(&mut buf, "fusion.b", &model.fusion_b);
    put_tensor(&mut buf, "classifier.w", &model.classifier_w);
    put_tensor(&mut buf, "classifier.b", &model.classifier_b);
    finish_and_write(path, buf)
}

pub fn save_student(path: &Path, model: &StudentModel) -> Result<()> {
    let meta = StudentMeta {
        classes: model.classes.clone(),
        gamma: model.gamma,
        distill: model.distill,
        projection_dropout: model.projection.dropout,
        backbone_trainable: model.backbone.layer2_trainable,
        backbone_seed: model.backbone.seed as i64,
    };
    let meta_toml = toml::to_string(&meta).map_err(|e| Error::config(e.to_string()))?;

    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.push(KIND_STUDENT);
    put_bytes(&mut buf, meta_toml.as_bytes());
    put_tensor(&mut buf, "audio.w1", &model.backbone.w1);
    put_tensor(&mut buf, "audio.b1", &model.backbone.b1);
    put_tensor(&mut buf, "audio.w2", &model.backbone.w2);
    put_tensor(&mut buf, "audio.b2", &model.backbone.b2);
    put_tensor(&mut buf, "projection.w", &model.projection.w);
    put_tensor(&mut buf, "projection.b", &model.projection.b);
    put_tensor(&mut buf, "ff.w", &model.ff_w);
    put_tensor(&mut buf, "ff.b", &model.ff_b);
    put_tensor(&mut buf, "classifier.w", &model.classifier_w);
    put_tensor(&mut buf, "classifier.b", &model.classifier_b);
    finish_and_write(path, buf)
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let name = path.display().to_string();
    let bytes = fs::read(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{name}: {e}"))))?;
    let body_len = open_checked(path, &bytes)?;
    let mut r = Reader { path: &name, bytes: &bytes[..body_len], pos: 12 };
    let kind = r.take(1)?[0];
    let meta_bytes = r.bytes_field()?;
    let meta_text = std::str::from_utf8(meta_bytes)
        .map_err(|_| Error::format(name.clone(), "metadata is not UTF-8"))?;

    match kind {
        KIND_TEACHER => {
            let meta: TeacherMeta = toml::from_str(meta_text)
                .map_err(|e| Error::format(name.clone(), format!("bad metadata: {e}")))?;
            let w1 = r.tensor("audio.w1")?;
            let b1 = r.tensor("audio.b1")?;
            let w2 = r.tensor("audio.w2")?;
            let b2 = r.tensor("audio.b2")?;
            let table = r.tensor("text.table")?;
            let mix_w = r.tensor("text.mix_w")?;
            let mix_b = r.tensor("text.mix_b")?;
            let ah_w = r.tensor("audio_head.w")?;
            let ah_b = r.tensor("audio_head.b")?;
            let th_w = r.tensor("text_head.w")?;
            let th_b = r.tensor("text_head.b")?;
            let fus_w = r.tensor("fusion.w")?;
            let fus_b = r.tensor("fusion.b")?;
            let cls_w = r.tensor("classifier.w")?;
            let cls_b = r.tensor("classifier.b")?;
            if cls_w.cols() != meta.classes.len() {
                return Err(Error::format(
                    name,
                    format!("classifier width {} vs {} classes", cls_w.cols(), meta.classes.len()),
                ));
            }
            Ok(Checkpoint::Teacher(TeacherModel {
                audio_backbone: AudioBackbone {
                    w1,
                    b1,
                    w2,
                    b2,
                    layer2_trainable: meta.backbone_trainable,
                    seed: meta.audio_backbone_seed as u64,
                },
                text_backbone: TextBackbone {
                    table,
                    mix_w,
                    mix_b,
                    seed: meta.text_backbone_seed as u64,
                },
                audio_head: ProjectionHead { w: ah_w, b: ah_b, dropout: meta.audio_head_dropout },
                text_head: ProjectionHead { w: th_w, b: th_b, dropout: meta.text_head_dropout },
                fusion_w: fus_w,
                fusion_b: fus_b,
                fusion_dropout: meta.fusion_dropout,
                classifier_w: cls_w,
                classifier_b: cls_b,
                classes: meta.classes,
                tau: meta.tau,
                use_contrastive: meta.use_contrastive,
                normalize_before_sim: meta.normalize_before_sim,
                tau_literal_multiply: meta.tau_literal_multiply,
            }))
        }
        KIND_STUDENT => {
            let meta: StudentMeta = toml::from_str(meta_text)
                .map_err(|e| Error::format(name.clone(), format!("bad metadata: {e}")))?;
            let w1 = r.tensor("audio.w1")?;
            let b1 = r.tensor("audio.b1")?;
            let w2 = r.tensor("audio.w2")?;
            let b2 = r.tensor("audio.b2")?;
            let proj_w = r.tensor("projection.w")?;
            let proj_b = r.tensor("projection.b")?;
            let ff_w = r.tensor("ff.w")?;
            let ff_b = r.tensor("ff.b")?;
            let cls_w = r.tensor("classifier.w")?;
            let cls_b = r.tensor("classifier.b")?;
            if cls_w.cols() != meta.classes.len() {
                return Err(Error::format(
                    name,
                    format!("classifier width {} vs {} classes", cls_w.cols(), meta.classes.len()),
                ));
            }
            Ok(Checkpoint::Student(StudentModel {
                backbone: AudioBackbone {
                    w1,
                    b1,
                    w2,
                    b2,
                    layer2_trainable: meta.backbone_trainable,
                    seed: meta.backbone_seed as u64,
                },
                projection: ProjectionHead {
                    w: proj_w,
                    b: proj_b,
                    dropout: meta.projection_dropout,
                },
                ff_w,
                ff_b,
                classifier_w: cls_w,
                classifier_b: cls_b,
                classes: meta.classes,
                gamma: meta.gamma,
                distill: meta.distill,
            }))
        }
        other => Err(Error::format(name, format!("unknown checkpoint kind {other}"))),
    }
}

pub fn load_teacher(path: &Path) -> Result<TeacherModel> {
    match load(path)? {
        Checkpoint::Teacher(t) => Ok(t),
        Checkpoint::Student(_) => Err(Error::format(
            path.display().to_string(),
            "checkpoint holds a student model, expected a teacher",
        )),
    }
}

pub fn load_student(path: &Path) -> Result<StudentModel> {
    match load(path)? {
        Checkpoint::Student(s) => Ok(s),
        Checkpoint::Teacher(_) => Err(Error::format(
            path.display().to_string(),
            "checkpoint holds a teacher model, expected a student",
        )),
    }
}
