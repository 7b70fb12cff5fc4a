use std::fs;
use std::io::{BufWriter, Write as _};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use zintent::checkpoint::{self, Checkpoint};
use zintent::config::{RunConfig, TrainConfig};
use zintent::corpus::{Corpus, Split};
use zintent::encoders::AudioBackbone;
use zintent::error::{Error, Result};
use zintent::harness::{
    format_summary, generate_corpus, layer_ablation, run_variant_grid, sample_size_sweep,
    spearman_rho, synth_trained_upper_bound, write_reports_csv, GridOutcome, Variant,
};
use zintent::metrics::{write_student_csv, write_teacher_csv};
use zintent::rng::{derive_seed, StreamRng};
use zintent::zeroshot::{
    classify_zero_shot, evaluate_zero_shot, BotDefinition, EmbeddingDatabase, ExtractionLayer,
    Heads,
};
use zintent::{ModelConfig, StudentModel, TeacherModel};
use zintent::{student_train, teacher_train};
use zintent::Matrix;

#[derive(Parser)]
#[command(name = "zintent", version, about = "Zero-shot audio-to-intent training and retrieval")]
struct Cli {
    /// TOML configuration file; built-in defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured output directory.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic paired corpus and the bot definition.
    Generate,
    /// Train one model variant and save its checkpoint and metrics.
    Train {
        /// frozen, audio-only, mm, mm-cl, stu-mm, or stu-mm-cl.
        #[arg(long)]
        variant: String,
        /// Teacher checkpoint for stu-* variants; defaults to the matching
        /// teacher checkpoint in the output directory.
        #[arg(long)]
        teacher: Option<PathBuf>,
        /// Checkpoint path; defaults to <out_dir>/<variant>.ckpt.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build an embedding database from a bot definition and a checkpoint.
    BuildDb {
        #[arg(long)]
        model: PathBuf,
        /// Bot definition; defaults to <out_dir>/bot.tsv.
        #[arg(long)]
        bot: Option<PathBuf>,
        /// pooled, projection, or feed-forward; defaults to the configured
        /// extraction layer.
        #[arg(long)]
        layer: Option<String>,
        /// Database path; defaults to <out_dir>/db.edb.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rank database intents for one query utterance.
    Classify {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        db: PathBuf,
        /// Text file with one row of audio features per line.
        #[arg(long, conflicts_with = "utterance")]
        frames: Option<PathBuf>,
        /// Id of an utterance in the generated corpus.
        #[arg(long)]
        utterance: Option<usize>,
        #[arg(long)]
        top_k: Option<usize>,
    },
    /// Score zero-shot top-1 accuracy on a corpus split.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        db: PathBuf,
        /// Which intents to score: seen, unseen, or all.
        #[arg(long, default_value = "unseen")]
        intents: String,
        /// train, dev, or test.
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Run the full variant grid plus layer ablation and database-size sweep.
    Experiment,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => {
            let cfg = RunConfig::default();
            cfg.validate()?;
            cfg
        }
    };
    if let Some(dir) = &cli.out_dir {
        cfg.paths.out_dir = dir.clone();
    }
    match cli.command {
        Command::Generate => cmd_generate(&cfg),
        Command::Train { variant, teacher, out } => cmd_train(&cfg, &variant, teacher, out),
        Command::BuildDb { model, bot, layer, out } => cmd_build_db(&cfg, &model, bot, layer, out),
        Command::Classify { model, db, frames, utterance, top_k } => {
            cmd_classify(&cfg, &model, &db, frames, utterance, top_k)
        }
        Command::Evaluate { model, db, intents, split } => {
            cmd_evaluate(&cfg, &model, &db, &intents, &split)
        }
        Command::Experiment => cmd_experiment(&cfg),
    }
}

fn corpus_paths(cfg: &RunConfig) -> (PathBuf, PathBuf) {
    (cfg.paths.out_dir.join("corpus.tsv"), cfg.paths.out_dir.join("frames.dat"))
}

fn load_corpus(cfg: &RunConfig) -> Result<Corpus> {
    let (text, frames) = corpus_paths(cfg);
    if !text.exists() {
        return Err(Error::Dependency(format!(
            "no corpus at {}; run `zintent generate` first",
            text.display()
        )));
    }
    Corpus::load(&text, &frames)
}

fn write_resolved_config(cfg: &RunConfig) -> Result<()> {
    fs::write(cfg.paths.out_dir.join("config.resolved.toml"), cfg.resolved()?)?;
    Ok(())
}

fn cmd_generate(cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(&cfg.paths.out_dir)?;
    let (corpus, bot) = generate_corpus(&cfg.corpus)?;
    let (text, frames) = corpus_paths(cfg);
    corpus.save(&text, &frames)?;
    let bot_path = cfg.paths.out_dir.join("bot.tsv");
    bot.save(&bot_path)?;
    write_resolved_config(cfg)?;
    println!(
        "generated {} utterances ({} seen + {} unseen intents) -> {}",
        corpus.utterances.len(),
        corpus.seen.len(),
        corpus.unseen.len(),
        text.display()
    );
    println!("bot definition: {} sentences -> {}", bot.sentences.len(), bot_path.display());
    Ok(())
}

fn cmd_train(
    cfg: &RunConfig,
    variant: &str,
    teacher: Option<PathBuf>,
    out: Option<PathBuf>,
) -> Result<()> {
    let variant = Variant::parse(variant)?;
    let corpus = load_corpus(cfg)?;
    fs::create_dir_all(&cfg.paths.out_dir)?;
    let ckpt_path = out.unwrap_or_else(|| cfg.paths.out_dir.join(format!("{variant}.ckpt")));
    let metrics_path = cfg.paths.out_dir.join(format!("{variant}-metrics.csv"));
    let seed = cfg.train.seed;

    match variant {
        Variant::Frozen => {
            let mc = ModelConfig { distill: false, ..cfg.model.clone() };
            let student = StudentModel::new(&mc, corpus.d_raw, corpus.seen.clone(), seed)?;
            checkpoint::save_student(&ckpt_path, &student)?;
            println!("saved untrained student -> {}", ckpt_path.display());
        }
        Variant::AudioOnly => {
            let mc = ModelConfig { distill: false, ..cfg.model.clone() };
            let mut student = StudentModel::new(&mc, corpus.d_raw, corpus.seen.clone(), seed)?;
            let training = student_train(&mut student, None, &corpus, &cfg.train)?;
            checkpoint::save_student(&ckpt_path, &student)?;
            write_student_csv(&metrics_path, &training.epochs)?;
            println!(
                "trained {variant}: {} epochs, dev accuracy {:.4} -> {}",
                training.epochs.len(),
                training.final_dev_accuracy(),
                ckpt_path.display()
            );
        }
        Variant::Mm | Variant::MmCl => {
            let mc = ModelConfig {
                use_contrastive: variant == Variant::MmCl,
                ..cfg.model.clone()
            };
            let mut teacher =
                TeacherModel::new(&mc, corpus.d_raw, corpus.vocab_size, corpus.seen.clone(), seed)?;
            let training = teacher_train(&mut teacher, &corpus, &cfg.train)?;
            checkpoint::save_teacher(&ckpt_path, &teacher)?;
            write_teacher_csv(&metrics_path, &training.epochs)?;
            println!(
                "trained {variant}: {} epochs, dev accuracy {:.4} -> {}",
                training.epochs.len(),
                training.final_dev_accuracy(),
                ckpt_path.display()
            );
        }
        Variant::StuMm | Variant::StuMmCl => {
            let dep = variant.teacher_dep().expect("student variant");
            let teacher_path =
                teacher.unwrap_or_else(|| cfg.paths.out_dir.join(format!("{dep}.ckpt")));
            if !teacher_path.exists() {
                return Err(Error::Dependency(format!(
                    "{variant} needs a {dep} teacher checkpoint; {} not found (train {dep} first or pass --teacher)",
                    teacher_path.display()
                )));
            }
            let teacher = checkpoint::load_teacher(&teacher_path)?;
            let mc = ModelConfig { distill: true, ..cfg.model.clone() };
            let mut student = StudentModel::new(&mc, corpus.d_raw, corpus.seen.clone(), seed)?;
            if mc.init_from_teacher_backbone {
                student.adopt_backbone(&teacher)?;
            }
            let training = student_train(&mut student, Some(&teacher), &corpus, &cfg.train)?;
            checkpoint::save_student(&ckpt_path, &student)?;
            write_student_csv(&metrics_path, &training.epochs)?;
            println!(
                "trained {variant}: {} epochs, dev accuracy {:.4}, dev distance {:.4} -> {}",
                training.epochs.len(),
                training.final_dev_accuracy(),
                training.final_dev_distance(),
                ckpt_path.display()
            );
        }
    }
    Ok(())
}

fn model_heads(ckpt: &Checkpoint) -> (&AudioBackbone, Heads<'_>) {
    match ckpt {
        Checkpoint::Teacher(t) => (&t.audio_backbone, Heads::of_teacher(t)),
        Checkpoint::Student(s) => (&s.backbone, Heads::of_student(s)),
    }
}

fn cmd_build_db(
    cfg: &RunConfig,
    model: &Path,
    bot: Option<PathBuf>,
    layer: Option<String>,
    out: Option<PathBuf>,
) -> Result<()> {
    let ckpt = checkpoint::load(model)?;
    let bot_path = bot.unwrap_or_else(|| cfg.paths.out_dir.join("bot.tsv"));
    let bot = BotDefinition::load(&bot_path)?;
    let layer = match layer {
        Some(name) => ExtractionLayer::parse(&name)?,
        None => cfg.zeroshot.extraction_layer,
    };
    let (backbone, heads) = model_heads(&ckpt);
    let db = zintent::build_embedding_database(&bot, &cfg.corpus.synthesis(), backbone, &heads, layer)?;
    let out = out.unwrap_or_else(|| cfg.paths.out_dir.join("db.edb"));
    if let Some(dir) = out.parent() {
        fs::create_dir_all(dir)?;
    }
    db.save(&out)?;
    println!(
        "built database: {} entries, {} intents, layer {} -> {}",
        db.entries.len(),
        db.intents().len(),
        db.layer.as_str(),
        out.display()
    );
    Ok(())
}

fn read_frames_text(path: &Path) -> Result<Matrix> {
    let name = path.display().to_string();
    let text =
        fs::read_to_string(path).map_err(|e| Error::format(&name, format!("cannot read: {e}")))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut cols = 0usize;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut row = Vec::new();
        for tok in line.split_whitespace() {
            let v: f64 = tok
                .parse()
                .map_err(|_| Error::format(&name, format!("line {}: bad float '{tok}'", i + 1)))?;
            row.push(v);
        }
        if cols == 0 {
            cols = row.len();
        } else if row.len() != cols {
            return Err(Error::format(
                &name,
                format!("line {}: {} values, expected {cols}", i + 1, row.len()),
            ));
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::format(&name, "no frames"));
    }
    Matrix::from_vec(rows.len(), cols, rows.concat())
}

fn cmd_classify(
    cfg: &RunConfig,
    model: &Path,
    db: &Path,
    frames: Option<PathBuf>,
    utterance: Option<usize>,
    top_k: Option<usize>,
) -> Result<()> {
    let ckpt = checkpoint::load(model)?;
    let db = EmbeddingDatabase::load(db)?;
    let frames = match (frames, utterance) {
        (Some(path), None) => read_frames_text(&path)?,
        (None, Some(id)) => {
            let corpus = load_corpus(cfg)?;
            corpus
                .by_id(id)
                .ok_or_else(|| Error::config(format!("utterance {id} not in the corpus")))?
                .frames
                .clone()
        }
        _ => return Err(Error::config("pass exactly one of --frames or --utterance")),
    };
    let k = top_k.unwrap_or(cfg.zeroshot.top_k);
    let (backbone, heads) = model_heads(&ckpt);
    let preds = classify_zero_shot(&db, backbone, &heads, &frames, k)?;
    for p in preds {
        println!("{}\t{}\t{}", p.intent, p.similarity, p.sentence_id);
    }
    Ok(())
}

fn cmd_evaluate(cfg: &RunConfig, model: &Path, db: &Path, intents: &str, split: &str) -> Result<()> {
    let ckpt = checkpoint::load(model)?;
    let db = EmbeddingDatabase::load(db)?;
    let corpus = load_corpus(cfg)?;
    let split = Split::parse(split)
        .ok_or_else(|| Error::config(format!("unknown split '{split}' (train, dev, or test)")))?;
    let keep: Vec<usize> = match intents {
        "seen" => corpus.seen.clone(),
        "unseen" => corpus.unseen.clone(),
        "all" => corpus.intent_vocab(),
        other => {
            return Err(Error::config(format!(
                "unknown intent filter '{other}' (seen, unseen, or all)"
            )))
        }
    };
    let utts = corpus.split_of(split, &keep);
    let (backbone, heads) = model_heads(&ckpt);
    let eval = evaluate_zero_shot(&db, backbone, &heads, &utts)?;
    println!("accuracy {:.4} on {} utterances", eval.accuracy, eval.n);
    let labels: Vec<String> = eval.intents.iter().map(|i| i.to_string()).collect();
    println!("confusion (rows true, cols predicted): intents {}", labels.join(" "));
    for (i, row) in eval.confusion.iter().enumerate() {
        let cells: Vec<String> = row.iter().map(|c| c.to_string()).collect();
        println!("{:>6}  {}", eval.intents[i], cells.join(" "));
    }
    Ok(())
}

fn save_grid_checkpoints(out_dir: &Path, outcome: &GridOutcome) -> Result<()> {
    for cell in &outcome.cells {
        let path = out_dir.join(format!("{}-s{}.ckpt", cell.variant, cell.seed));
        match (&cell.teacher, &cell.student) {
            (Some(t), _) => checkpoint::save_teacher(&path, t)?,
            (_, Some(s)) => checkpoint::save_student(&path, s)?,
            _ => {}
        }
    }
    Ok(())
}

fn cmd_experiment(cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(&cfg.paths.out_dir)?;
    write_resolved_config(cfg)?;
    let (corpus, bot) = generate_corpus(&cfg.corpus)?;
    let (text, frames) = corpus_paths(cfg);
    corpus.save(&text, &frames)?;
    bot.save(&cfg.paths.out_dir.join("bot.tsv"))?;
    let synth = cfg.corpus.synthesis();

    println!(
        "running grid: {} variants x {} seeds",
        cfg.experiment.variants.len(),
        cfg.experiment.seeds.len()
    );
    let outcome = run_variant_grid(
        &corpus,
        &bot,
        &cfg.model,
        &cfg.train,
        &cfg.zeroshot,
        &synth,
        &cfg.experiment.variants,
        &cfg.experiment.seeds,
    )?;
    write_reports_csv(&outcome.reports, &cfg.paths.out_dir.join("reports.csv"))?;
    save_grid_checkpoints(&cfg.paths.out_dir, &outcome)?;
    let mut summary = format_summary(&outcome.reports);

    let first_seed = cfg.experiment.seeds[0];
    let picked = [Variant::StuMmCl, Variant::StuMm, Variant::AudioOnly, Variant::Frozen]
        .into_iter()
        .find_map(|v| {
            outcome.cell(v, first_seed).and_then(|c| c.student.as_ref()).map(|s| (v, s))
        });
    match picked {
        Some((variant, student)) => {
            let mut rng = StreamRng::new(derive_seed(first_seed, "db/unseen"));
            let unseen_bot = bot
                .filter_intents(&corpus.unseen)
                .sample_subset(cfg.zeroshot.db_sentences_per_intent, &mut rng);
            let test_unseen = corpus.split_of(Split::Test, &corpus.unseen);
            let ablation = layer_ablation(student, &unseen_bot, &synth, &test_unseen)?;
            let mut w = BufWriter::new(fs::File::create(cfg.paths.out_dir.join("ablation.csv"))?);
            writeln!(w, "layer,accuracy")?;
            summary.push_str(&format!("\nlayer ablation ({variant}, seed {first_seed}):\n"));
            for (layer, acc) in &ablation {
                writeln!(w, "{},{}", layer.as_str(), acc)?;
                summary.push_str(&format!("  {:<13} {:.4}\n", layer.as_str(), acc));
            }
            w.flush()?;

            let test_all = corpus.split(Split::Test);
            let points = sample_size_sweep(
                student,
                &bot,
                &synth,
                cfg.zeroshot.extraction_layer,
                &test_all,
                &cfg.experiment.sweep_sizes,
                cfg.experiment.sweep_repeats,
                first_seed,
            )?;
            let mut w = BufWriter::new(fs::File::create(cfg.paths.out_dir.join("sweep.csv"))?);
            writeln!(w, "sentences_per_intent,repeat,accuracy")?;
            let mut ks = Vec::new();
            let mut accs = Vec::new();
            summary.push_str(&format!("\ndatabase-size sweep ({variant}, seed {first_seed}):\n"));
            for p in &points {
                for (r, acc) in p.accuracies.iter().enumerate() {
                    writeln!(w, "{},{},{}", p.k, r, acc)?;
                    ks.push(p.k as f64);
                    accs.push(*acc);
                }
                summary.push_str(&format!(
                    "  k={:<4} mean {:.4}  spread {:.4}\n",
                    p.k, p.mean, p.spread
                ));
            }
            w.flush()?;
            match spearman_rho(&ks, &accs) {
                Ok(rho) => summary.push_str(&format!("  spearman(k, accuracy) = {rho:.4}\n")),
                Err(_) => summary.push_str("  spearman(k, accuracy) undefined (constant input)\n"),
            }
        }
        None => summary.push_str("\nlayer ablation and sweep skipped: no student model in the grid\n"),
    }

    let upper = synth_trained_upper_bound(
        &corpus,
        &bot,
        &synth,
        &cfg.model,
        &TrainConfig { seed: first_seed, ..cfg.train.clone() },
    )?;
    summary.push_str(&format!("\nsynthesis-trained supervised reference: {upper:.4}\n"));

    fs::write(cfg.paths.out_dir.join("summary.txt"), &summary)?;
    print!("{summary}");
    println!("outputs in {}", cfg.paths.out_dir.display());
    Ok(())
}
