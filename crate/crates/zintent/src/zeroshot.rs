use std::fmt;
use std::fs;
use std::io::{BufWriter, Write as _};
use std::path::Path;

use crate::corpus::Utterance;
use crate::encoders::{AudioBackbone, ProjectionHead};
use crate::error::{Error, Result};
use crate::fingerprint::FingerprintBuilder;
use crate::numerics::ops;
use crate::numerics::Matrix;
use crate::rng::StreamRng;
use crate::student::StudentModel;
use crate::teacher::TeacherModel;

/// Which representation of the audio pipeline goes into the embedding
/// database and the query path.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExtractionLayer {
    Pooled,
    Projection,
    FeedForward,
}

impl ExtractionLayer {
    pub fn as_str(self) -> &'static str {
        match self {
            ExtractionLayer::Pooled => "pooled",
            ExtractionLayer::Projection => "projection",
            ExtractionLayer::FeedForward => "feed-forward",
        }
    }

    pub fn parse(s: &str) -> Result<ExtractionLayer> {
        match s {
            "pooled" => Ok(ExtractionLayer::Pooled),
            "projection" => Ok(ExtractionLayer::Projection),
            "feed-forward" => Ok(ExtractionLayer::FeedForward),
            other => Err(Error::config(format!(
                "unknown extraction layer '{other}', expected pooled, projection, or feed-forward"
            ))),
        }
    }
}

impl fmt::Display for ExtractionLayer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Settings for clean pseudo-audio synthesis from token sequences.
///
/// Prototypes live in a shared `signal_rank`-dimensional subspace of the
/// `d_raw` feature space, so clean audio is low-rank while channel noise
/// (added by the corpus generator) fills every dimension.
#[derive(Clone, Copy, Debug)]
pub struct SynthesisParams {
    pub seed: u64,
    pub d_raw: usize,
    pub signal_rank: usize,
    pub frames_per_token: usize,
}

/// Clean frames for a token sequence: every token emits its fixed prototype
/// row `frames_per_token` times, so identical tokens always produce
/// identical frames.
pub fn synthesize_pseudo_audio(params: &SynthesisParams, tokens: &[usize]) -> Result<Matrix> {
    if tokens.is_empty() {
        return Err(Error::Empty { op: "synthesize_pseudo_audio" });
    }
    if params.d_raw == 0 || params.frames_per_token == 0 {
        return Err(Error::config("synthesis needs d_raw and frames_per_token of at least 1"));
    }
    if params.signal_rank == 0 || params.signal_rank > params.d_raw {
        return Err(Error::config(format!(
            "signal_rank = {} must be in 1..={}",
            params.signal_rank, params.d_raw
        )));
    }
    let root = StreamRng::new(params.seed);
    // Scaled so each feature keeps unit prototype variance regardless of rank.
    let basis = Matrix::randn(
        params.signal_rank,
        params.d_raw,
        (params.signal_rank as f64).sqrt().recip(),
        &mut root.split("synth/basis"),
    );
    let mut frames = Matrix::zeros(tokens.len() * params.frames_per_token, params.d_raw);
    for (i, &t) in tokens.iter().enumerate() {
        let coeffs = Matrix::randn(1, params.signal_rank, 1.0, &mut root.split(&format!("token/{t}")));
        let proto = ops::matmul(&coeffs, &basis)?;
        for r in 0..params.frames_per_token {
            frames
                .row_mut(i * params.frames_per_token + r)
                .copy_from_slice(proto.row(0));
        }
    }
    Ok(frames)
}

/// One bot sentence: an example phrasing of an intent.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BotSentence {
    pub id: usize,
    pub intent: usize,
    pub tokens: Vec<usize>,
}

/// The text-only definition of an assistant: per intent, a list of example
/// sentences. This is all the zero-shot path knows about an intent.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BotDefinition {
    pub sentences: Vec<BotSentence>,
}

impl BotDefinition {
    /// Sorted unique intent ids.
    pub fn intents(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.sentences.iter().map(|s| s.intent).collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    pub fn filter_intents(&self, keep: &[usize]) -> BotDefinition {
        BotDefinition {
            sentences: self
                .sentences
                .iter()
                .filter(|s| keep.contains(&s.intent))
                .cloned()
                .collect(),
        }
    }

    /// At most `per_intent` sentences per intent, sampled without
    /// replacement. Kept sentences stay in id order, so asking for the whole
    /// pool returns the definition unchanged.
    pub fn sample_subset(&self, per_intent: usize, rng: &mut StreamRng) -> BotDefinition {
        let mut out = Vec::new();
        for intent in self.intents() {
            let idxs: Vec<usize> = (0..self.sentences.len())
                .filter(|&i| self.sentences[i].intent == intent)
                .collect();
            let mut chosen = idxs.clone();
            if per_intent < idxs.len() {
                rng.shuffle(&mut chosen);
                chosen.truncate(per_intent);
                chosen.sort_unstable();
            }
            out.extend(chosen.into_iter().map(|i| self.sentences[i].clone()));
        }
        out.sort_by_key(|s| s.id);
        BotDefinition { sentences: out }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        writeln!(w, "ZINTENT-BOT v1")?;
        for s in &self.sentences {
            let tokens: Vec<String> = s.tokens.iter().map(|t| t.to_string()).collect();
            writeln!(w, "{}\t{}\t{}", s.id, s.intent, tokens.join(","))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<BotDefinition> {
        let name = path.display().to_string();
        let text = fs::read_to_string(path)?;
        let mut lines = text.lines();
        match lines.next() {
            Some("ZINTENT-BOT v1") => {}
            other => {
                return Err(Error::format(
                    name.clone(),
                    format!("expected header 'ZINTENT-BOT v1', found {other:?}"),
                ))
            }
        }
        let mut sentences = Vec::new();
        for (lineno, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(Error::format(
                    name.clone(),
                    format!("line {}: expected 3 tab-separated fields", lineno + 2),
                ));
            }
            let id = fields[0].parse().map_err(|_| {
                Error::format(name.clone(), format!("line {}: bad sentence id", lineno + 2))
            })?;
            let intent = fields[1].parse().map_err(|_| {
                Error::format(name.clone(), format!("line {}: bad intent id", lineno + 2))
            })?;
            let tokens = fields[2]
                .split(',')
                .map(|t| t.parse())
                .collect::<std::result::Result<Vec<usize>, _>>()
                .map_err(|_| {
                    Error::format(name.clone(), format!("line {}: bad token list", lineno + 2))
                })?;
            sentences.push(BotSentence { id, intent, tokens });
        }
        Ok(BotDefinition { sentences })
    }
}

/// Borrowed projection layers sitting on top of a backbone; which model they
/// come from decides what the deeper extraction layers mean.
#[derive(Clone, Copy)]
pub struct Heads<'a> {
    pub projection: &'a ProjectionHead,
    pub feed_forward: Option<(&'a Matrix, &'a Matrix)>,
}

impl<'a> Heads<'a> {
    pub fn of_student(s: &'a StudentModel) -> Heads<'a> {
        Heads { projection: &s.projection, feed_forward: Some((&s.ff_w, &s.ff_b)) }
    }

    pub fn of_teacher(t: &'a TeacherModel) -> Heads<'a> {
        Heads { projection: &t.audio_head, feed_forward: None }
    }
}

/// Embeds one utterance's frames at the requested layer, eval mode.
pub fn embed_frames(
    backbone: &AudioBackbone,
    heads: &Heads<'_>,
    layer: ExtractionLayer,
    frames: &Matrix,
) -> Result<Matrix> {
    let pooled = backbone.encode(frames)?;
    if layer == ExtractionLayer::Pooled {
        return Ok(pooled);
    }
    let projected = heads.projection.forward_eval(&pooled)?;
    if layer == ExtractionLayer::Projection {
        return Ok(projected);
    }
    match heads.feed_forward {
        Some((w, b)) => Ok(ops::relu_forward(&ops::linear_forward(&projected, w, b)?)),
        None => Err(Error::Dependency(
            "feed-forward extraction needs a model with that layer".into(),
        )),
    }
}

/// Digest of everything that shapes an embedding: layer choice, dimensions,
/// and the exact weights the query path will use. Stored in the database
/// header and checked again at query time.
pub fn pipeline_fingerprint(
    backbone: &AudioBackbone,
    heads: &Heads<'_>,
    layer: ExtractionLayer,
) -> String {
    let mut b = FingerprintBuilder::new("zintent-pipeline");
    b.text("layer", layer.as_str());
    b.count("d_raw", backbone.d_raw() as u64).count("d_hid", backbone.d_hid() as u64);
    b.matrix("w1", &backbone.w1)
        .matrix("b1", &backbone.b1)
        .matrix("w2", &backbone.w2)
        .matrix("b2", &backbone.b2);
    if layer != ExtractionLayer::Pooled {
        b.matrix("proj_w", &heads.projection.w).matrix("proj_b", &heads.projection.b);
    }
    if layer == ExtractionLayer::FeedForward {
        if let Some((w, bias)) = heads.feed_forward {
            b.matrix("ff_w", w).matrix("ff_b", bias);
        }
    }
    b.finish()
}

#[derive(Clone, Debug, PartialEq)]
pub struct DbEntry {
    pub sentence_id: usize,
    pub intent: usize,
    /// Unit-norm embedding.
    pub embedding: Vec<f64>,
}

/// Precomputed unit-norm embeddings of synthesized bot sentences.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingDatabase {
    pub layer: ExtractionLayer,
    pub dim: usize,
    pub fingerprint: String,
    pub entries: Vec<DbEntry>,
}

/// Synthesizes clean audio for every bot sentence, embeds it at `layer`,
/// and stores the unit-normalized result.
pub fn build_embedding_database(
    bot: &BotDefinition,
    synth: &SynthesisParams,
    backbone: &AudioBackbone,
    heads: &Heads<'_>,
    layer: ExtractionLayer,
) -> Result<EmbeddingDatabase> {
    if bot.sentences.is_empty() {
        return Err(Error::Empty { op: "build_embedding_database" });
    }
    let fingerprint = pipeline_fingerprint(backbone, heads, layer);
    let mut entries = Vec::with_capacity(bot.sentences.len());
    let mut dim = 0usize;
    for s in &bot.sentences {
        let frames = synthesize_pseudo_audio(synth, &s.tokens)?;
        let emb = embed_frames(backbone, heads, layer, &frames)?;
        let unit = ops::l2_normalize(&emb)?;
        dim = unit.cols();
        entries.push(DbEntry {
            sentence_id: s.id,
            intent: s.intent,
            embedding: unit.row(0).to_vec(),
        });
    }
    Ok(EmbeddingDatabase { layer, dim, fingerprint, entries })
}

impl EmbeddingDatabase {
    pub fn intents(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.entries.iter().map(|e| e.intent).collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        writeln!(
            w,
            "ZINTENT-EDB v1 dim={} layer={} fingerprint={}",
            self.dim, self.layer, self.fingerprint
        )?;
        for e in &self.entries {
            let floats: Vec<String> = e.embedding.iter().map(|v| format!("{v:.16e}")).collect();
            writeln!(w, "{}\t{}\t{}", e.sentence_id, e.intent, floats.join(" "))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<EmbeddingDatabase> {
        let name = path.display().to_string();
        let text = fs::read_to_string(path)?;
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::format(name.clone(), "empty file"))?;
        let parts: Vec<&str> = header.split(' ').collect();
        if parts.len() != 5 || parts[0] != "ZINTENT-EDB" || parts[1] != "v1" {
            return Err(Error::format(name, format!("bad header '{header}'")));
        }
        let dim: usize = parts[2]
            .strip_prefix("dim=")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::format(name.clone(), "bad dim field"))?;
        let layer = parts[3]
            .strip_prefix("layer=")
            .ok_or_else(|| Error::format(name.clone(), "bad layer field"))
            .and_then(ExtractionLayer::parse)?;
        let fingerprint = parts[4]
            .strip_prefix("fingerprint=")
            .ok_or_else(|| Error::format(name.clone(), "bad fingerprint field"))?
            .to_string();

        let mut entries = Vec::new();
        for (lineno, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(Error::format(
                    name.clone(),
                    format!("line {}: expected 3 tab-separated fields", lineno + 2),
                ));
            }
            let sentence_id = fields[0].parse().map_err(|_| {
                Error::format(name.clone(), format!("line {}: bad sentence id", lineno + 2))
            })?;
            let intent = fields[1].parse().map_err(|_| {
                Error::format(name.clone(), format!("line {}: bad intent id", lineno + 2))
            })?;
            let embedding = fields[2]
                .split(' ')
                .map(|v| v.parse())
                .collect::<std::result::Result<Vec<f64>, _>>()
                .map_err(|_| {
                    Error::format(name.clone(), format!("line {}: bad embedding floats", lineno + 2))
                })?;
            if embedding.len() != dim {
                return Err(Error::format(
                    name.clone(),
                    format!("line {}: {} floats, header says dim={dim}", lineno + 2, embedding.len()),
                ));
            }
            entries.push(DbEntry { sentence_id, intent, embedding });
        }
        if entries.is_empty() {
            return Err(Error::format(name, "database holds no entries"));
        }
        Ok(EmbeddingDatabase { layer, dim, fingerprint, entries })
    }
}

/// One ranked zero-shot answer: the best-matching sentence of one intent.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prediction {
    pub intent: usize,
    pub similarity: f64,
    pub sentence_id: usize,
}

pub fn verify_fingerprint(
    db: &EmbeddingDatabase,
    backbone: &AudioBackbone,
    heads: &Heads<'_>,
) -> Result<()> {
    let current = pipeline_fingerprint(backbone, heads, db.layer);
    if current != db.fingerprint {
        return Err(Error::StaleDb { db: db.fingerprint.clone(), pipeline: current });
    }
    Ok(())
}

fn best_per_intent(db: &EmbeddingDatabase, query: &[f64]) -> Vec<Prediction> {
    let mut best: Vec<Prediction> = Vec::new();
    for e in &db.entries {
        let sim: f64 = e.embedding.iter().zip(query).map(|(&a, &b)| a * b).sum();
        match best.iter_mut().find(|p| p.intent == e.intent) {
            Some(p) => {
                if sim > p.similarity || (sim == p.similarity && e.sentence_id < p.sentence_id) {
                    p.similarity = sim;
                    p.sentence_id = e.sentence_id;
                }
            }
            None => best.push(Prediction {
                intent: e.intent,
                similarity: sim,
                sentence_id: e.sentence_id,
            }),
        }
    }
    best.sort_by(|a, b| {
        b.similarity
            .partial_cmp(&a.similarity)
            .unwrap()
            .then_with(|| a.intent.cmp(&b.intent))
    });
    best
}

fn embed_query(
    db: &EmbeddingDatabase,
    backbone: &AudioBackbone,
    heads: &Heads<'_>,
    frames: &Matrix,
) -> Result<Vec<f64>> {
    let emb = embed_frames(backbone, heads, db.layer, frames)?;
    let unit = ops::l2_normalize(&emb)?;
    Ok(unit.row(0).to_vec())
}

/// Ranks database intents by cosine similarity to the query audio, one entry
/// per intent (its closest sentence). Ties between sentences go to the lower
/// sentence id, ties between intents to the lower intent id.
pub fn classify_zero_shot(
    db: &EmbeddingDatabase,
    backbone: &AudioBackbone,
    heads: &Heads<'_>,
    frames: &Matrix,
    k: usize,
) -> Result<Vec<Prediction>> {
    if k == 0 {
        return Err(Error::config("top-k must be at least 1"));
    }
    verify_fingerprint(db, backbone, heads)?;
    let query = embed_query(db, backbone, heads, frames)?;
    let mut ranked = best_per_intent(db, &query);
    ranked.truncate(k);
    Ok(ranked)
}

/// Zero-shot evaluation result over a set of labeled utterances.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub accuracy: f64,
    /// Sorted database intents; confusion axes use this order.
    pub intents: Vec<usize>,
    /// `confusion[i][j]`: utterances of `intents[i]` predicted as `intents[j]`.
    pub confusion: Vec<Vec<usize>>,
    pub n: usize,
}

/// Classifies every utterance against the database and scores top-1 intent
/// accuracy. Every true intent must be represented in the database.
pub fn evaluate_zero_shot(
    db: &EmbeddingDatabase,
    backbone: &AudioBackbone,
    heads: &Heads<'_>,
    utts: &[&Utterance],
) -> Result<Evaluation> {
    if utts.is_empty() {
        return Err(Error::Empty { op: "evaluate_zero_shot" });
    }
    let intents = db.intents();
    let mut missing: Vec<usize> = utts
        .iter()
        .map(|u| u.intent)
        .filter(|i| intents.binary_search(i).is_err())
        .collect();
    missing.sort_unstable();
    missing.dedup();
    if !missing.is_empty() {
        let list: Vec<String> = missing.iter().map(|i| i.to_string()).collect();
        return Err(Error::Coverage { missing: list.join(", ") });
    }
    verify_fingerprint(db, backbone, heads)?;

    let mut confusion = vec![vec![0usize; intents.len()]; intents.len()];
    let mut correct = 0usize;
    for u in utts {
        let query = embed_query(db, backbone, heads, &u.frames)?;
        let top = best_per_intent(db, &query)[0];
        let ti = intents.binary_search(&u.intent).unwrap();
        let pi = intents.binary_search(&top.intent).unwrap();
        confusion[ti][pi] += 1;
        if top.intent == u.intent {
            correct += 1;
        }
    }
    Ok(Evaluation {
        accuracy: correct as f64 / utts.len() as f64,
        intents,
        confusion,
        n: utts.len(),
    })
}
