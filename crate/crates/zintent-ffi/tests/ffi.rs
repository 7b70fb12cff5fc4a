use std::ffi::{CStr, CString};
use std::path::Path;
use std::ptr;

use zintent::checkpoint;
use zintent::config::ModelConfig;
use zintent::harness::{generate_corpus, CorpusSpec};
use zintent::zeroshot::{build_embedding_database, classify_zero_shot, ExtractionLayer, Heads};
use zintent::StudentModel;
use zintent_ffi::{
    zintent_classify, zintent_close, zintent_feature_dim, zintent_intent_count,
    zintent_last_error, zintent_open, zintent_version, ZintentClassifier, ZintentPrediction,
    ZintentStatus,
};

struct Fixture {
    _dir: tempfile::TempDir,
    ckpt: CString,
    db: CString,
    corpus: zintent::Corpus,
    model: StudentModel,
    db_native: zintent::EmbeddingDatabase,
}

fn fixture() -> Fixture {
    let spec = CorpusSpec {
        seen_intents: 2,
        unseen_intents: 2,
        vocab_size: 30,
        keywords_per_intent: 2,
        sentences_per_intent: 10,
        min_sentence_len: 4,
        max_sentence_len: 6,
        audio_noise_sigma: 0.2,
        noise_rank: 2,
        frames_per_token: 2,
        d_raw: 6,
        signal_rank: 3,
        seed: 31,
    };
    let (corpus, bot) = generate_corpus(&spec).unwrap();
    let cfg = ModelConfig { d_hid: 8, d_emb: 8, distill: false, ..ModelConfig::default() };
    let model = StudentModel::new(&cfg, corpus.d_raw, corpus.seen.clone(), 3).unwrap();
    let heads = Heads::of_student(&model);
    let db_native = build_embedding_database(
        &bot,
        &spec.synthesis(),
        &model.backbone,
        &heads,
        ExtractionLayer::Pooled,
    )
    .unwrap();

    let dir = tempfile::tempdir().unwrap();
    let ckpt_path = dir.path().join("model.ckpt");
    let db_path = dir.path().join("db.edb");
    checkpoint::save_student(&ckpt_path, &model).unwrap();
    db_native.save(&db_path).unwrap();
    Fixture {
        ckpt: cstr(&ckpt_path),
        db: cstr(&db_path),
        _dir: dir,
        corpus,
        model,
        db_native,
    }
}

fn cstr(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn open(fx: &Fixture) -> *mut ZintentClassifier {
    let mut handle: *mut ZintentClassifier = ptr::null_mut();
    let status = unsafe { zintent_open(fx.ckpt.as_ptr(), fx.db.as_ptr(), &mut handle) };
    assert_eq!(status, ZintentStatus::Ok, "{}", last_error());
    assert!(!handle.is_null());
    handle
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(zintent_last_error()).to_string_lossy().into_owned() }
}

#[test]
fn open_classify_close_round_trip() {
    let fx = fixture();
    let handle = open(&fx);
    unsafe {
        assert_eq!(zintent_feature_dim(handle), 6);
        assert_eq!(zintent_intent_count(handle), 4);
        assert_eq!(last_error(), "");

        let utt = &fx.corpus.utterances[0];
        let mut out = [ZintentPrediction { intent: 0, similarity: 0.0, sentence_id: 0 }; 4];
        let mut n = 0usize;
        let status = zintent_classify(
            handle,
            utt.frames.data().as_ptr(),
            utt.frames.rows(),
            utt.frames.cols(),
            out.as_mut_ptr(),
            out.len(),
            &mut n,
        );
        assert_eq!(status, ZintentStatus::Ok, "{}", last_error());
        assert_eq!(n, 4);
        for w in out.windows(2) {
            assert!(w[0].similarity >= w[1].similarity);
        }

        // Must agree with the library call exactly.
        let heads = Heads::of_student(&fx.model);
        let native =
            classify_zero_shot(&fx.db_native, &fx.model.backbone, &heads, &utt.frames, 4).unwrap();
        for (got, want) in out.iter().zip(&native) {
            assert_eq!(got.intent, want.intent);
            assert_eq!(got.similarity, want.similarity);
            assert_eq!(got.sentence_id, want.sentence_id);
        }

        // Capacity below the intent count truncates.
        let mut n2 = 0usize;
        let status = zintent_classify(
            handle,
            utt.frames.data().as_ptr(),
            utt.frames.rows(),
            utt.frames.cols(),
            out.as_mut_ptr(),
            2,
            &mut n2,
        );
        assert_eq!(status, ZintentStatus::Ok);
        assert_eq!(n2, 2);

        zintent_close(handle);
    }
}

#[test]
fn null_arguments_are_rejected() {
    let fx = fixture();
    unsafe {
        let mut handle: *mut ZintentClassifier = ptr::null_mut();
        assert_eq!(
            zintent_open(ptr::null(), fx.db.as_ptr(), &mut handle),
            ZintentStatus::NullArg
        );
        assert_eq!(
            zintent_open(fx.ckpt.as_ptr(), fx.db.as_ptr(), ptr::null_mut()),
            ZintentStatus::NullArg
        );

        let handle = open(&fx);
        let mut n = 0usize;
        let mut out = [ZintentPrediction { intent: 0, similarity: 0.0, sentence_id: 0 }; 1];
        assert_eq!(
            zintent_classify(handle, ptr::null(), 1, 6, out.as_mut_ptr(), 1, &mut n),
            ZintentStatus::NullArg
        );
        assert_eq!(
            zintent_classify(
                ptr::null(),
                [0.0].as_ptr(),
                1,
                1,
                out.as_mut_ptr(),
                1,
                &mut n
            ),
            ZintentStatus::NullArg
        );
        assert!(!last_error().is_empty());
        zintent_close(handle);
        zintent_close(ptr::null_mut());
    }
}

#[test]
fn bad_paths_report_io_and_utf8() {
    let fx = fixture();
    let mut handle: *mut ZintentClassifier = ptr::null_mut();
    unsafe {
        let missing = CString::new("/nonexistent/model.ckpt").unwrap();
        let status = zintent_open(missing.as_ptr(), fx.db.as_ptr(), &mut handle);
        assert_eq!(status, ZintentStatus::Io);
        assert!(handle.is_null());
        assert!(last_error().contains("/nonexistent/model.ckpt"));

        let bad = CString::new(vec![0xffu8, 0xfe]).unwrap();
        let status = zintent_open(bad.as_ptr(), fx.db.as_ptr(), &mut handle);
        assert_eq!(status, ZintentStatus::Utf8);

        // A corpus file is not a checkpoint.
        let dir = tempfile::tempdir().unwrap();
        let garbage = dir.path().join("garbage.ckpt");
        std::fs::write(&garbage, b"not a checkpoint at all").unwrap();
        let garbage = cstr(&garbage);
        let status = zintent_open(garbage.as_ptr(), fx.db.as_ptr(), &mut handle);
        assert_eq!(status, ZintentStatus::Format);
    }
}

#[test]
fn mismatched_model_reports_fingerprint() {
    let fx = fixture();
    // Same architecture, different weights: database no longer matches.
    let cfg = ModelConfig { d_hid: 8, d_emb: 8, distill: false, ..ModelConfig::default() };
    let other = StudentModel::new(&cfg, fx.corpus.d_raw, fx.corpus.seen.clone(), 99).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let other_path = dir.path().join("other.ckpt");
    checkpoint::save_student(&other_path, &other).unwrap();
    let other_c = cstr(&other_path);
    let mut handle: *mut ZintentClassifier = ptr::null_mut();
    unsafe {
        let status = zintent_open(other_c.as_ptr(), fx.db.as_ptr(), &mut handle);
        assert_eq!(status, ZintentStatus::Fingerprint);
        assert!(handle.is_null());
        assert!(last_error().contains("fingerprint"));
    }
}

#[test]
fn zero_capacity_is_a_config_error() {
    let fx = fixture();
    let handle = open(&fx);
    unsafe {
        let utt = &fx.corpus.utterances[0];
        let mut n = 0usize;
        let mut out = [ZintentPrediction { intent: 0, similarity: 0.0, sentence_id: 0 }; 1];
        let status = zintent_classify(
            handle,
            utt.frames.data().as_ptr(),
            utt.frames.rows(),
            utt.frames.cols(),
            out.as_mut_ptr(),
            0,
            &mut n,
        );
        assert_eq!(status, ZintentStatus::Config);
        assert_eq!(n, 0);
        zintent_close(handle);
    }
}

#[test]
fn version_is_a_readable_string() {
    let v = unsafe { CStr::from_ptr(zintent_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}
