//! Experiment harness: synthetic corpus generation, the variant grid, the
//! extraction-layer ablation, and the database-size sweep.

use std::fmt;
use std::fs;
use std::io::{BufWriter, Write as _};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::{ModelConfig, TrainConfig, ZeroshotConfig};
use crate::corpus::{Corpus, Split, Utterance};
use crate::error::{Error, Result};
use crate::numerics::{ops, Matrix};
use crate::rng::{derive_seed, StreamRng};
use crate::student::{student_train, StudentModel, StudentTraining};
use crate::teacher::{teacher_train, TeacherModel, TeacherTraining};
use crate::zeroshot::{
    build_embedding_database, evaluate_zero_shot, synthesize_pseudo_audio, BotDefinition,
    BotSentence, ExtractionLayer, Heads, SynthesisParams,
};

/// Recipe for a synthetic paired corpus. Each intent owns a block of keyword
/// tokens; a sentence is all of its intent's keywords plus random filler,
/// shuffled. Audio is the clean token synthesis plus Gaussian channel noise.
/// A positive `noise_rank` confines that noise to one fixed subspace per
/// corpus, a structured channel that trained layers can learn to suppress;
/// zero means isotropic noise over all of `d_raw`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusSpec {
    pub seen_intents: usize,
    pub unseen_intents: usize,
    pub vocab_size: usize,
    pub keywords_per_intent: usize,
    pub sentences_per_intent: usize,
    pub min_sentence_len: usize,
    pub max_sentence_len: usize,
    pub audio_noise_sigma: f64,
    pub noise_rank: usize,
    pub frames_per_token: usize,
    pub d_raw: usize,
    pub signal_rank: usize,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            seen_intents: 6,
            unseen_intents: 12,
            vocab_size: 200,
            keywords_per_intent: 4,
            sentences_per_intent: 100,
            min_sentence_len: 6,
            max_sentence_len: 10,
            audio_noise_sigma: 1.25,
            noise_rank: 8,
            frames_per_token: 4,
            d_raw: 32,
            signal_rank: 12,
            seed: 42,
        }
    }
}

impl CorpusSpec {
    pub fn n_intents(&self) -> usize {
        self.seen_intents + self.unseen_intents
    }

    /// Per-intent boundaries: `[0, train_end)` train, `[train_end, dev_end)`
    /// dev, `[dev_end, n)` test.
    pub fn shares(&self) -> (usize, usize) {
        let n = self.sentences_per_intent;
        (n * 7 / 10, n * 8 / 10)
    }

    pub fn synthesis(&self) -> SynthesisParams {
        SynthesisParams {
            seed: derive_seed(self.seed, "synth"),
            d_raw: self.d_raw,
            signal_rank: self.signal_rank,
            frames_per_token: self.frames_per_token,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seen_intents == 0 {
            return Err(Error::config("corpus needs at least one seen intent"));
        }
        if self.keywords_per_intent == 0 {
            return Err(Error::config("keywords_per_intent must be at least 1"));
        }
        let keyword_total = self.n_intents() * self.keywords_per_intent;
        if self.vocab_size <= keyword_total {
            return Err(Error::config(format!(
                "vocab_size = {} must exceed the {keyword_total} keyword tokens",
                self.vocab_size
            )));
        }
        if self.min_sentence_len < self.keywords_per_intent {
            return Err(Error::config(format!(
                "min_sentence_len = {} cannot fit {} keywords",
                self.min_sentence_len, self.keywords_per_intent
            )));
        }
        if self.max_sentence_len < self.min_sentence_len {
            return Err(Error::config("max_sentence_len must be at least min_sentence_len"));
        }
        let (train_end, dev_end) = self.shares();
        if train_end == 0 || dev_end == train_end || self.sentences_per_intent == dev_end {
            return Err(Error::config(format!(
                "sentences_per_intent = {} leaves an empty train, dev, or test share",
                self.sentences_per_intent
            )));
        }
        if !self.audio_noise_sigma.is_finite() || self.audio_noise_sigma < 0.0 {
            return Err(Error::config(format!(
                "audio_noise_sigma = {} must be finite and non-negative",
                self.audio_noise_sigma
            )));
        }
        if self.frames_per_token == 0 || self.d_raw == 0 {
            return Err(Error::config("frames_per_token and d_raw must be at least 1"));
        }
        if self.signal_rank == 0 || self.signal_rank > self.d_raw {
            return Err(Error::config(format!(
                "signal_rank = {} must be in 1..={}",
                self.signal_rank, self.d_raw
            )));
        }
        if self.noise_rank > self.d_raw {
            return Err(Error::config(format!(
                "noise_rank = {} cannot exceed d_raw = {}",
                self.noise_rank, self.d_raw
            )));
        }
        Ok(())
    }
}

/// Generates the paired corpus and the text-only bot definition.
///
/// Intent `i` owns keyword tokens `[i*k, (i+1)*k)`. The bot definition holds
/// the train and dev shares of every intent, seen and unseen, so the
/// zero-shot database never sees test sentences. Unseen intents get audio
/// only for their test share; their train and dev shares exist as bot text
/// alone.
pub fn generate_corpus(spec: &CorpusSpec) -> Result<(Corpus, BotDefinition)> {
    spec.validate()?;
    let root = StreamRng::new(spec.seed);
    let synth = spec.synthesis();
    let k = spec.keywords_per_intent;
    let n = spec.sentences_per_intent;
    let (train_end, dev_end) = spec.shares();
    let keyword_total = spec.n_intents() * k;
    let fillers = spec.vocab_size - keyword_total;

    // Basis rows scaled so the per-coordinate noise variance matches the
    // isotropic case at the same sigma.
    let noise_basis = (spec.noise_rank > 0).then(|| {
        Matrix::randn(
            spec.noise_rank,
            spec.d_raw,
            (spec.noise_rank as f64).sqrt().recip(),
            &mut root.split("noise/basis"),
        )
    });

    let mut utterances = Vec::new();
    let mut bot_sentences = Vec::new();
    for intent in 0..spec.n_intents() {
        let seen = intent < spec.seen_intents;
        for j in 0..n {
            let id = intent * n + j;
            let mut rng = root.split(&format!("sentence/{id}"));
            let len = rng.range_inclusive(spec.min_sentence_len, spec.max_sentence_len);
            let mut tokens: Vec<usize> = (intent * k..(intent + 1) * k).collect();
            while tokens.len() < len {
                tokens.push(keyword_total + rng.below(fillers));
            }
            rng.shuffle(&mut tokens);

            let split = if j < train_end {
                Split::Train
            } else if j < dev_end {
                Split::Dev
            } else {
                Split::Test
            };
            if j < dev_end {
                bot_sentences.push(BotSentence { id, intent, tokens: tokens.clone() });
            }
            if !seen && split != Split::Test {
                continue;
            }

            let mut frames = synthesize_pseudo_audio(&synth, &tokens)?;
            if spec.audio_noise_sigma > 0.0 {
                let mut noise = root.split(&format!("noise/{id}"));
                match &noise_basis {
                    Some(basis) => {
                        let coeffs = Matrix::randn(
                            frames.rows(),
                            spec.noise_rank,
                            spec.audio_noise_sigma,
                            &mut noise,
                        );
                        frames.add_assign(&ops::matmul(&coeffs, basis)?)?;
                    }
                    None => {
                        for v in frames.data_mut() {
                            *v += spec.audio_noise_sigma * noise.normal();
                        }
                    }
                }
            }
            utterances.push(Utterance { id, frames, tokens, intent, split });
        }
    }

    let corpus = Corpus {
        utterances,
        seen: (0..spec.seen_intents).collect(),
        unseen: (spec.seen_intents..spec.n_intents()).collect(),
        vocab_size: spec.vocab_size,
        d_raw: spec.d_raw,
    };
    Ok((corpus, BotDefinition { sentences: bot_sentences }))
}

/// One column of the comparison grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Untrained student embeddings, retrieval only.
    Frozen,
    /// Student architecture trained on intent labels alone, no teacher.
    AudioOnly,
    /// Multimodal teacher without the contrastive term.
    Mm,
    /// Multimodal teacher with the contrastive term.
    MmCl,
    /// Student distilled from the `mm` teacher.
    StuMm,
    /// Student distilled from the `mm-cl` teacher.
    StuMmCl,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Frozen,
        Variant::AudioOnly,
        Variant::Mm,
        Variant::MmCl,
        Variant::StuMm,
        Variant::StuMmCl,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Frozen => "frozen",
            Variant::AudioOnly => "audio-only",
            Variant::Mm => "mm",
            Variant::MmCl => "mm-cl",
            Variant::StuMm => "stu-mm",
            Variant::StuMmCl => "stu-mm-cl",
        }
    }

    pub fn parse(s: &str) -> Result<Variant> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::config(format!("unknown variant '{s}'")))
    }

    /// The teacher this variant distills from, if any.
    pub fn teacher_dep(self) -> Option<Variant> {
        match self {
            Variant::StuMm => Some(Variant::Mm),
            Variant::StuMmCl => Some(Variant::MmCl),
            _ => None,
        }
    }

    pub fn is_teacher(self) -> bool {
        matches!(self, Variant::Mm | Variant::MmCl)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A trained (or deliberately untrained) model from one grid cell, kept so
/// downstream analyses can reuse it without retraining.
pub struct GridCell {
    pub variant: Variant,
    pub seed: u64,
    pub teacher: Option<TeacherModel>,
    pub student: Option<StudentModel>,
    pub teacher_training: Option<TeacherTraining>,
    pub student_training: Option<StudentTraining>,
}

/// One row of the results table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub variant: Variant,
    pub seed: u64,
    /// Top-1 accuracy on test utterances of unseen intents, database built
    /// from unseen-intent sentences only.
    pub zero_shot_unseen: f64,
    /// Top-1 accuracy on all test utterances against a database covering
    /// every intent.
    pub zero_shot_mix: f64,
    /// Final dev accuracy of the model's own classifier; absent for the
    /// untrained baseline.
    pub supervised_dev: Option<f64>,
    pub epochs_ran: usize,
}

pub struct GridOutcome {
    pub reports: Vec<ExperimentReport>,
    pub cells: Vec<GridCell>,
}

impl GridOutcome {
    pub fn cell(&self, variant: Variant, seed: u64) -> Option<&GridCell> {
        self.cells.iter().find(|c| c.variant == variant && c.seed == seed)
    }

    pub fn report(&self, variant: Variant, seed: u64) -> Option<&ExperimentReport> {
        self.reports.iter().find(|r| r.variant == variant && r.seed == seed)
    }

    pub fn reports_of(&self, variant: Variant) -> Vec<&ExperimentReport> {
        self.reports.iter().filter(|r| r.variant == variant).collect()
    }
}

/// Expands the requested variants with their teacher dependencies and puts
/// them in build order (teachers before the students that need them).
pub fn variant_closure(requested: &[Variant]) -> Vec<Variant> {
    let mut want: Vec<Variant> = requested.to_vec();
    for v in requested {
        if let Some(dep) = v.teacher_dep() {
            if !want.contains(&dep) {
                want.push(dep);
            }
        }
    }
    Variant::ALL.into_iter().filter(|v| want.contains(v)).collect()
}

/// Trains every requested variant at every seed and scores each model on the
/// two zero-shot scenarios. All models of a seed share the same backbone
/// initialization and the same database subsets, so differences come from
/// training alone.
pub fn run_variant_grid(
    corpus: &Corpus,
    bot: &BotDefinition,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    zs_cfg: &ZeroshotConfig,
    synth: &SynthesisParams,
    variants: &[Variant],
    seeds: &[u64],
) -> Result<GridOutcome> {
    model_cfg.validate()?;
    train_cfg.validate()?;
    zs_cfg.validate()?;
    if seeds.is_empty() {
        return Err(Error::config("variant grid needs at least one seed"));
    }
    if variants.is_empty() {
        return Err(Error::config("variant grid needs at least one variant"));
    }
    if corpus.unseen.is_empty() {
        return Err(Error::config("variant grid needs unseen intents for zero-shot evaluation"));
    }

    let selected = variant_closure(variants);
    let layer = zs_cfg.extraction_layer;
    let test_unseen = corpus.split_of(Split::Test, &corpus.unseen);
    let test_all = corpus.split(Split::Test);

    let mut cells: Vec<GridCell> = Vec::new();
    let mut reports = Vec::new();
    for &seed in seeds {
        let mut unseen_rng = StreamRng::new(derive_seed(seed, "db/unseen"));
        let unseen_bot = bot
            .filter_intents(&corpus.unseen)
            .sample_subset(zs_cfg.db_sentences_per_intent, &mut unseen_rng);
        let mut mix_rng = StreamRng::new(derive_seed(seed, "db/mix"));
        let mix_bot = bot.sample_subset(zs_cfg.db_sentences_per_intent, &mut mix_rng);
        if unseen_bot.sentences.is_empty() {
            return Err(Error::config("bot definition has no sentences for the unseen intents"));
        }

        let cfg = TrainConfig { seed, ..train_cfg.clone() };
        for &variant in &selected {
            let cell = match variant {
                Variant::Frozen => {
                    let mc = ModelConfig { distill: false, ..model_cfg.clone() };
                    let student = StudentModel::new(&mc, corpus.d_raw, corpus.seen.clone(), seed)?;
                    GridCell {
                        variant,
                        seed,
                        teacher: None,
                        student: Some(student),
                        teacher_training: None,
                        student_training: None,
                    }
                }
                Variant::AudioOnly => {
                    let mc = ModelConfig { distill: false, ..model_cfg.clone() };
                    let mut student =
                        StudentModel::new(&mc, corpus.d_raw, corpus.seen.clone(), seed)?;
                    let training = student_train(&mut student, None, corpus, &cfg)?;
                    GridCell {
                        variant,
                        seed,
                        teacher: None,
                        student: Some(student),
                        teacher_training: None,
                        student_training: Some(training),
                    }
                }
                Variant::Mm | Variant::MmCl => {
                    let mc = ModelConfig {
                        use_contrastive: variant == Variant::MmCl,
                        ..model_cfg.clone()
                    };
                    let mut teacher = TeacherModel::new(
                        &mc,
                        corpus.d_raw,
                        corpus.vocab_size,
                        corpus.seen.clone(),
                        seed,
                    )?;
                    let training = teacher_train(&mut teacher, corpus, &cfg)?;
                    GridCell {
                        variant,
                        seed,
                        teacher: Some(teacher),
                        student: None,
                        teacher_training: Some(training),
                        student_training: None,
                    }
                }
                Variant::StuMm | Variant::StuMmCl => {
                    let dep = variant.teacher_dep().expect("student variant");
                    let teacher = cells
                        .iter()
                        .find(|c| c.seed == seed && c.variant == dep)
                        .and_then(|c| c.teacher.as_ref())
                        .ok_or_else(|| {
                            Error::Dependency(format!("{variant} needs a trained {dep} teacher"))
                        })?;
                    let mc = ModelConfig { distill: true, ..model_cfg.clone() };
                    let mut student =
                        StudentModel::new(&mc, corpus.d_raw, corpus.seen.clone(), seed)?;
                    if mc.init_from_teacher_backbone {
                        student.adopt_backbone(teacher)?;
                    }
                    let training = student_train(&mut student, Some(teacher), corpus, &cfg)?;
                    GridCell {
                        variant,
                        seed,
                        teacher: None,
                        student: Some(student),
                        teacher_training: None,
                        student_training: Some(training),
                    }
                }
            };

            let (zero_shot_unseen, zero_shot_mix) = {
                let (backbone, heads) = match (&cell.teacher, &cell.student) {
                    (Some(t), _) => (&t.audio_backbone, Heads::of_teacher(t)),
                    (_, Some(s)) => (&s.backbone, Heads::of_student(s)),
                    _ => unreachable!("every cell holds a model"),
                };
                let udb = build_embedding_database(&unseen_bot, synth, backbone, &heads, layer)?;
                let unseen_eval = evaluate_zero_shot(&udb, backbone, &heads, &test_unseen)?;
                let mdb = build_embedding_database(&mix_bot, synth, backbone, &heads, layer)?;
                let mix_eval = evaluate_zero_shot(&mdb, backbone, &heads, &test_all)?;
                (unseen_eval.accuracy, mix_eval.accuracy)
            };
            let supervised_dev = match (&cell.teacher_training, &cell.student_training) {
                (Some(t), _) => Some(t.final_dev_accuracy()),
                (_, Some(s)) => Some(s.final_dev_accuracy()),
                _ => None,
            };
            let epochs_ran = cell
                .teacher_training
                .as_ref()
                .map(|t| t.epochs.len())
                .or_else(|| cell.student_training.as_ref().map(|s| s.epochs.len()))
                .unwrap_or(0);
            reports.push(ExperimentReport {
                variant,
                seed,
                zero_shot_unseen,
                zero_shot_mix,
                supervised_dev,
                epochs_ran,
            });
            cells.push(cell);
        }
    }
    Ok(GridOutcome { reports, cells })
}

/// Zero-shot accuracy of one student at each extraction layer, same database
/// sentences and test utterances throughout.
pub fn layer_ablation(
    student: &StudentModel,
    bot: &BotDefinition,
    synth: &SynthesisParams,
    utts: &[&Utterance],
) -> Result<Vec<(ExtractionLayer, f64)>> {
    let heads = Heads::of_student(student);
    let mut out = Vec::with_capacity(3);
    for layer in [ExtractionLayer::Pooled, ExtractionLayer::Projection, ExtractionLayer::FeedForward] {
        let db = build_embedding_database(bot, synth, &student.backbone, &heads, layer)?;
        let eval = evaluate_zero_shot(&db, &student.backbone, &heads, utts)?;
        out.push((layer, eval.accuracy));
    }
    Ok(out)
}

/// Accuracies measured at one database size.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepPoint {
    pub k: usize,
    pub accuracies: Vec<f64>,
    pub mean: f64,
    /// Max minus min across the repeats.
    pub spread: f64,
}

/// Measures zero-shot accuracy as a function of database sentences per
/// intent, resampling the subset `repeats` times at each size.
pub fn sample_size_sweep(
    student: &StudentModel,
    bot: &BotDefinition,
    synth: &SynthesisParams,
    layer: ExtractionLayer,
    utts: &[&Utterance],
    sizes: &[usize],
    repeats: usize,
    seed: u64,
) -> Result<Vec<SweepPoint>> {
    if sizes.is_empty() || repeats == 0 {
        return Err(Error::config("sweep needs at least one size and one repeat"));
    }
    let heads = Heads::of_student(student);
    let mut points = Vec::with_capacity(sizes.len());
    for &k in sizes {
        if k == 0 {
            return Err(Error::config("sweep sizes must be at least 1"));
        }
        let mut accuracies = Vec::with_capacity(repeats);
        for r in 0..repeats {
            let mut rng = StreamRng::new(derive_seed(seed, &format!("sweep/{k}/{r}")));
            let subset = bot.sample_subset(k, &mut rng);
            let db = build_embedding_database(&subset, synth, &student.backbone, &heads, layer)?;
            let eval = evaluate_zero_shot(&db, &student.backbone, &heads, utts)?;
            accuracies.push(eval.accuracy);
        }
        let mean = accuracies.iter().sum::<f64>() / accuracies.len() as f64;
        let max = accuracies.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = accuracies.iter().cloned().fold(f64::INFINITY, f64::min);
        points.push(SweepPoint { k, accuracies, mean, spread: max - min });
    }
    Ok(points)
}

fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for t in i..=j {
            ranks[idx[t]] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with average ranks for ties. Errors if either
/// side is constant, since its rank vector then has no variance.
pub fn spearman_rho(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::dimension(
            "spearman_rho",
            format!("{} xs vs {} ys", xs.len(), ys.len()),
        ));
    }
    if xs.len() < 2 {
        return Err(Error::Empty { op: "spearman_rho" });
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::config("spearman_rho needs finite inputs"));
    }
    let rx = average_ranks(xs);
    let ry = average_ranks(ys);
    let n = rx.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        let da = a - mx;
        let db = b - my;
        cov += da * db;
        vx += da * da;
        vy += db * db;
    }
    if vx == 0.0 || vy == 0.0 {
        return Err(Error::Degenerate { op: "spearman_rho" });
    }
    Ok(cov / (vx * vy).sqrt())
}

/// Supervised reference: a no-distillation student trained directly on clean
/// synthesized audio of the bot sentences, then scored on the real (noisy)
/// test utterances of the bot's intents. Roughly the ceiling for what the
/// synthesis pipeline can convey about these intents.
pub fn synth_trained_upper_bound(
    corpus: &Corpus,
    bot: &BotDefinition,
    synth: &SynthesisParams,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
) -> Result<f64> {
    let intents = bot.intents();
    if intents.is_empty() {
        return Err(Error::Empty { op: "synth_trained_upper_bound" });
    }
    let mut utterances = Vec::with_capacity(bot.sentences.len());
    for intent in &intents {
        let of_intent: Vec<&BotSentence> =
            bot.sentences.iter().filter(|s| s.intent == *intent).collect();
        let train_end = of_intent.len() * 9 / 10;
        if train_end == 0 || train_end == of_intent.len() {
            return Err(Error::config(format!(
                "intent {intent} has {} bot sentences, too few for a train/dev split",
                of_intent.len()
            )));
        }
        for (j, s) in of_intent.iter().enumerate() {
            let split = if j < train_end { Split::Train } else { Split::Dev };
            let frames = synthesize_pseudo_audio(synth, &s.tokens)?;
            utterances.push(Utterance {
                id: s.id,
                frames,
                tokens: s.tokens.clone(),
                intent: s.intent,
                split,
            });
        }
    }
    let synth_corpus = Corpus {
        utterances,
        seen: intents.clone(),
        unseen: Vec::new(),
        vocab_size: corpus.vocab_size,
        d_raw: corpus.d_raw,
    };
    let mc = ModelConfig { distill: false, ..model_cfg.clone() };
    let mut student = StudentModel::new(&mc, corpus.d_raw, intents.clone(), train_cfg.seed)?;
    student_train(&mut student, None, &synth_corpus, train_cfg)?;
    let test = corpus.split_of(Split::Test, &intents);
    if test.is_empty() {
        return Err(Error::Empty { op: "synth_trained_upper_bound" });
    }
    student.accuracy(&test)
}

pub fn write_reports_csv(reports: &[ExperimentReport], path: &Path) -> Result<()> {
    let file = fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    writeln!(w, "variant,seed,zero_shot_unseen,zero_shot_mix,supervised_dev,epochs")?;
    for r in reports {
        let supervised = r.supervised_dev.map(|a| a.to_string()).unwrap_or_default();
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.variant, r.seed, r.zero_shot_unseen, r.zero_shot_mix, supervised, r.epochs_ran
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Per-variant means across seeds, as an aligned text table.
pub fn format_summary(reports: &[ExperimentReport]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<12} {:>6} {:>14} {:>11} {:>14}\n",
        "variant", "seeds", "zs_unseen", "zs_mix", "supervised_dev"
    ));
    for variant in Variant::ALL {
        let rows: Vec<&ExperimentReport> =
            reports.iter().filter(|r| r.variant == variant).collect();
        if rows.is_empty() {
            continue;
        }
        let n = rows.len() as f64;
        let unseen = rows.iter().map(|r| r.zero_shot_unseen).sum::<f64>() / n;
        let mix = rows.iter().map(|r| r.zero_shot_mix).sum::<f64>() / n;
        let supervised: Vec<f64> = rows.iter().filter_map(|r| r.supervised_dev).collect();
        let sup = if supervised.is_empty() {
            "-".to_string()
        } else {
            format!("{:.4}", supervised.iter().sum::<f64>() / supervised.len() as f64)
        };
        out.push_str(&format!(
            "{:<12} {:>6} {:>14.4} {:>11.4} {:>14}\n",
            variant.as_str(),
            rows.len(),
            unseen,
            mix,
            sup
        ));
    }
    out
}
