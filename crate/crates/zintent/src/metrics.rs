use std::fs;
use std::io::{BufWriter, Write as _};
use std::path::Path;

use crate::error::Result;

/// One teacher training epoch. `diag_cosine` is the dev-split mean cosine
/// between each utterance's audio and text embeddings.
#[derive(Clone, Copy, Debug)]
pub struct TeacherEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub ic_loss: f64,
    pub cl_loss: f64,
    pub dev_accuracy: f64,
    pub lr: f64,
    pub diag_cosine: f64,
}

/// One student training epoch. `mean_embed_distance` is the dev-split mean
/// squared distance between teacher and student embeddings (0 when no
/// distillation is active).
#[derive(Clone, Copy, Debug)]
pub struct StudentEpoch {
    pub epoch: usize,
    pub intent_loss: f64,
    pub student_loss: f64,
    pub total_loss: f64,
    pub dev_accuracy: f64,
    pub mean_embed_distance: f64,
}

pub fn write_teacher_csv(path: &Path, rows: &[TeacherEpoch]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "epoch,train_loss,ic_loss,cl_loss,dev_accuracy,lr")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.epoch, r.train_loss, r.ic_loss, r.cl_loss, r.dev_accuracy, r.lr
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_student_csv(path: &Path, rows: &[StudentEpoch]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "epoch,intent_loss,student_loss,total_loss,dev_accuracy,mean_embed_distance")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.epoch, r.intent_loss, r.student_loss, r.total_loss, r.dev_accuracy, r.mean_embed_distance
        )?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_writers_are_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let rows = vec![TeacherEpoch {
            epoch: 1,
            train_loss: 1.5,
            ic_loss: 1.0,
            cl_loss: 2.0,
            dev_accuracy: 0.75,
            lr: 1e-4,
            diag_cosine: 0.3,
        }];
        let a = dir.path().join("a.csv");
        let b = dir.path().join("b.csv");
        write_teacher_csv(&a, &rows).unwrap();
        write_teacher_csv(&b, &rows).unwrap();
        assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
        let text = fs::read_to_string(&a).unwrap();
        assert!(text.starts_with("epoch,train_loss"));
        assert!(text.contains("1,1.5,1,2,0.75,0.0001"));
    }
}
