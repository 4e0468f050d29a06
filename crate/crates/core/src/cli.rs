//! Command-line front end. Every failure ends in one stderr line of the form
//! `error kind=<kind> code=<exit code> msg=<json string>`.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::data::{
    build_corpora, load_split, save_split, CorpusSizes, DatasetManifest, GeneratorConfig, Utterance, World, CORPUS_NAMES,
    SPLIT_NAMES,
};
use crate::decoder::{decode_offline, DecoderState};
use crate::encoder::{load_checkpoint, save_checkpoint, Checkpoint, CmvnStats, EncoderState};
use crate::error::{Result, SluError};
use crate::eval::{confusion_csv, confusion_matrix, early_spotting_report, evaluate, length_vs_position, DEFAULT_BUCKET_MS};
use crate::lattice::Lattice;
use crate::numerics::Tensor2;
use crate::training::{run_pipeline, Mode, PipelineData, TrainConfig};

pub const OUT_DIR_ENV: &str = "SLU_OUT_DIR";

#[derive(Parser, Debug)]
#[command(name = "slu", about = "Streaming multi-intent spoken language understanding", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Split {
    #[value(name = "S1", alias = "s1")]
    S1,
    #[value(name = "M2", alias = "m2")]
    M2,
    #[value(name = "M3", alias = "m3")]
    M3,
    #[value(name = "MM", alias = "mm")]
    Mm,
}

impl Split {
    pub fn corpus(self) -> &'static str {
        match self {
            Split::S1 => "s1",
            Split::M2 => "m2",
            Split::M3 => "m3",
            Split::Mm => "mm",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    #[value(name = "ctc_only")]
    CtcOnly,
    #[value(name = "asr_ctc")]
    AsrCtc,
    #[value(name = "full")]
    Full,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::CtcOnly => Mode::CtcOnly,
            ModeArg::AsrCtc => Mode::AsrCtc,
            ModeArg::Full => Mode::Full,
        }
    }
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate every corpus and write manifests plus record files.
    Gen {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, env = OUT_DIR_ENV)]
        out: PathBuf,
        /// `default`, `tiny`, or a TOML file with corpus sizes.
        #[arg(long, default_value = "default")]
        sizes: String,
        #[arg(long)]
        feature_dim: Option<usize>,
        /// TOML file with generator settings.
        #[arg(long)]
        generator: Option<PathBuf>,
    },
    /// Run the training pipeline on generated data.
    Train {
        /// TOML file with training settings; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        #[arg(long, value_enum, default_value = "S1")]
        train_split: Split,
        #[arg(long)]
        seed: Option<u64>,
        /// Serial execution; output is bit-identical across runs either way.
        #[arg(long)]
        deterministic: bool,
        #[arg(long, env = OUT_DIR_ENV)]
        out: PathBuf,
    },
    /// Offline decoding of a test split: accuracy and confusion CSVs.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "S1")]
        test_split: Split,
        #[arg(long, env = OUT_DIR_ENV)]
        out: PathBuf,
    },
    /// Stream one utterance through the encoder chunk by chunk.
    Stream {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Record file (`*.bin`) holding the utterance.
        #[arg(long)]
        input: PathBuf,
        /// Which record of the file to stream.
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(long, default_value_t = 16)]
        chunk_frames: usize,
        /// Compare against offline decoding and fail on any difference.
        #[arg(long)]
        verify: bool,
    },
    /// Early-spotting statistics on a test split.
    Spotting {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "M2")]
        test_split: Split,
        #[arg(long, default_value_t = DEFAULT_BUCKET_MS)]
        bucket_ms: f64,
        #[arg(long, env = OUT_DIR_ENV)]
        out: PathBuf,
    },
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            let msg = serde_json::to_string(&e.to_string()).unwrap_or_default();
            eprintln!("error kind={} code={} msg={msg}", e.kind(), e.exit_code());
            e.exit_code()
        }
    }
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Gen {
            seed,
            out,
            sizes,
            feature_dim,
            generator,
        } => cmd_gen(seed, &out, &sizes, feature_dim, generator.as_deref()),
        Command::Train {
            config,
            data,
            mode,
            train_split,
            seed,
            deterministic,
            out,
        } => {
            let mut cfg = match config {
                Some(p) => TrainConfig::load(&p)?,
                None => TrainConfig::default(),
            };
            if let Some(m) = mode {
                cfg.mode = m.into();
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            cmd_train(&cfg, &data, train_split, deterministic, &out)
        }
        Command::Eval {
            checkpoint,
            data,
            test_split,
            out,
        } => cmd_eval(&checkpoint, &data, test_split, &out),
        Command::Stream {
            checkpoint,
            input,
            index,
            chunk_frames,
            verify,
        } => cmd_stream(&checkpoint, &input, index, chunk_frames, verify),
        Command::Spotting {
            checkpoint,
            data,
            test_split,
            bucket_ms,
            out,
        } => cmd_spotting(&checkpoint, &data, test_split, bucket_ms, &out),
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| SluError::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| SluError::io(path, e))
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| SluError::io(path, e))?;
    toml::from_str(&text).map_err(|e| SluError::format(path, e.to_string()))
}

fn to_toml<T: serde::Serialize>(value: &T) -> Result<String> {
    toml::to_string(value).map_err(|e| SluError::Config(e.to_string()))
}

pub fn cmd_gen(seed: u64, out: &Path, sizes: &str, feature_dim: Option<usize>, generator: Option<&Path>) -> Result<()> {
    let sizes = match sizes {
        "default" => CorpusSizes::default(),
        "tiny" => CorpusSizes::tiny(),
        path => read_toml(Path::new(path))?,
    };
    let mut gcfg: GeneratorConfig = match generator {
        Some(p) => read_toml(p)?,
        None => GeneratorConfig::default(),
    };
    if let Some(d) = feature_dim {
        gcfg.feature_dim = d;
    }
    let world = World::new(gcfg, seed)?;
    let corpora = build_corpora(&world, seed, &sizes)?;
    for corpus in CORPUS_NAMES {
        let set = corpora.get(corpus).expect("known corpus");
        for split in SPLIT_NAMES {
            let utts = set.get(split).expect("known split");
            let m = DatasetManifest::describe(corpus, split, utts, world.intents.len(), seed, world.config.hop_ms);
            save_split(out, &m, utts)?;
        }
    }
    write_file(&out.join("generator.toml"), to_toml(&world.config)?)?;
    write_file(&out.join("sizes.toml"), to_toml(&sizes)?)?;
    let lexicon = serde_json::to_string_pretty(&world.intents).map_err(|e| SluError::Data(e.to_string()))?;
    write_file(&out.join("lexicon.json"), lexicon)?;
    println!("wrote {} corpora to {}", CORPUS_NAMES.len(), out.display());
    Ok(())
}

fn load_utts(data: &Path, corpus: &str, split: &str) -> Result<Vec<Utterance>> {
    Ok(load_split(data, corpus, split)?.1)
}

pub fn cmd_train(cfg: &TrainConfig, data: &Path, split: Split, deterministic: bool, out: &Path) -> Result<()> {
    cfg.validate()?;
    let s1_train = load_utts(data, "s1", "train")?;
    let (train, val) = match split {
        Split::S1 => (s1_train.clone(), load_utts(data, "s1", "val")?),
        other => (load_utts(data, other.corpus(), "train")?, load_utts(data, other.corpus(), "val")?),
    };
    let pd = PipelineData {
        char_train: load_utts(data, "char", "train")?,
        char_val: load_utts(data, "char", "val")?,
        ce_val: load_utts(data, "s1", "val")?,
        cmvn: CmvnStats::compute(&s1_train)?,
        ce_train: s1_train,
        train,
        val,
    };
    let result = run_pipeline(cfg, &pd, !deterministic)?;
    let mut meta = BTreeMap::new();
    meta.insert("mode".to_string(), cfg.mode.to_string());
    meta.insert("train_split".to_string(), split.corpus().to_string());
    meta.insert("seed".to_string(), cfg.seed.to_string());
    meta.insert("val_accuracy".to_string(), format!("{:?}", result.val_accuracy));
    let ckpt = Checkpoint {
        model: result.model,
        cmvn: Some(result.cmvn),
        meta,
    };
    fs::create_dir_all(out).map_err(|e| SluError::io(out, e))?;
    save_checkpoint(&out.join("model.ckpt"), &ckpt)?;
    write_file(&out.join("train_log.csv"), result.log.to_csv())?;
    write_file(&out.join("train_config.toml"), cfg.to_toml()?)?;
    println!("val_accuracy={:?} checkpoint={}", result.val_accuracy, out.join("model.ckpt").display());
    Ok(())
}

fn load_model(path: &Path) -> Result<(Checkpoint, CmvnStats)> {
    let ckpt = load_checkpoint(path)?;
    let cmvn = ckpt
        .cmvn
        .clone()
        .ok_or_else(|| SluError::format(path, "checkpoint has no normalization statistics"))?;
    Ok((ckpt, cmvn))
}

pub fn cmd_eval(checkpoint: &Path, data: &Path, split: Split, out: &Path) -> Result<()> {
    let (ckpt, cmvn) = load_model(checkpoint)?;
    let utts = load_utts(data, split.corpus(), "test")?;
    let ev = evaluate(&ckpt.model, &cmvn, &utts)?;
    let v = ckpt.model.config.vocab_size;
    let confusion = confusion_matrix(&ev.predictions, &ev.references, v)?;
    let tag = split.corpus();
    write_file(
        &out.join(format!("accuracy_{tag}.csv")),
        format!("metric,value\nsequence_accuracy,{}\nutterances,{}\n", ev.accuracy, utts.len()),
    )?;
    write_file(&out.join(format!("confusion_{tag}.csv")), confusion_csv(&confusion))?;
    let join = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(" ");
    let mut preds = String::from("index,reference,prediction\n");
    for (i, (r, p)) in ev.references.iter().zip(&ev.predictions).enumerate() {
        preds.push_str(&format!("{i},{},{}\n", join(r), join(p)));
    }
    write_file(&out.join(format!("predictions_{tag}.csv")), preds)?;
    println!("split={tag} sequence_accuracy={}", ev.accuracy);
    Ok(())
}

pub fn cmd_spotting(checkpoint: &Path, data: &Path, split: Split, bucket_ms: f64, out: &Path) -> Result<()> {
    let (ckpt, cmvn) = load_model(checkpoint)?;
    let utts = load_utts(data, split.corpus(), "test")?;
    let ev = evaluate(&ckpt.model, &cmvn, &utts)?;
    let report = early_spotting_report(&ev.events, bucket_ms)?;
    let lp = length_vs_position(&ev.events, &ev.event_lengths)?;
    let tag = split.corpus();
    let mut metrics = report.metrics_csv();
    metrics.push_str(&format!("rank_correlation_length_position,{}\n", lp.rank_correlation));
    write_file(&out.join(format!("spotting_metrics_{tag}.csv")), metrics)?;
    write_file(&out.join(format!("spotting_histogram_{tag}.csv")), report.histogram_csv())?;
    write_file(&out.join(format!("length_position_{tag}.csv")), lp.csv())?;
    println!(
        "split={tag} events={} fraction_early={} rank_correlation={}",
        report.count, report.fraction_early, lp.rank_correlation
    );
    Ok(())
}

pub fn cmd_stream(checkpoint: &Path, input: &Path, index: usize, chunk_frames: usize, verify: bool) -> Result<()> {
    if chunk_frames == 0 {
        return Err(SluError::Config("chunk-frames must be >= 1".into()));
    }
    let (ckpt, cmvn) = load_model(checkpoint)?;
    let model = &ckpt.model;
    let bytes = fs::read(input).map_err(|e| SluError::io(input, e))?;
    let utts = crate::data::decode_records(&bytes, input)?;
    let utt = utts
        .get(index)
        .ok_or_else(|| SluError::Data(format!("record {index} not found; file holds {}", utts.len())))?;
    let feats = cmvn.apply(&utt.features)?;
    let geometry = crate::decoder::FrameGeometry::from_config(&model.config);
    let mut enc = EncoderState::new(model);
    let mut dec = DecoderState::new(model.config.blank_index());
    let mut streamed = Tensor2::zeros(0, model.config.vocab_size + 1);
    let stdout = std::io::stdout();
    let emit = |rows: &Tensor2, dec: &mut DecoderState| -> Result<()> {
        for e in dec.step_rows(rows.row_iter()) {
            let mut lock = stdout.lock();
            let ms = geometry.emit_ms(e.frame, Some(utt.frames()));
            let _ = writeln!(lock, "{}\t{}\tintent_{}", e.frame, ms, e.label);
            let _ = lock.flush();
        }
        Ok(())
    };
    let mut pos = 0;
    while pos < feats.rows() {
        let end = (pos + chunk_frames).min(feats.rows());
        let rows = model.stream_push(&mut enc, &feats.slice_rows(pos, end))?;
        emit(&rows, &mut dec)?;
        streamed.append_rows(&rows)?;
        pos = end;
    }
    let rows = model.stream_close(&mut enc)?;
    emit(&rows, &mut dec)?;
    streamed.append_rows(&rows)?;
    if verify {
        let batch = model.forward(&feats)?;
        let offline = decode_offline(&batch);
        let diff = if streamed.shape() == batch.log_probs().shape() {
            streamed.max_abs_diff(batch.log_probs())
        } else {
            f64::INFINITY
        };
        let streamed_labels = decode_offline(&Lattice::new_unchecked(streamed)).labels;
        if diff > 1e-12 || streamed_labels != offline.labels || dec.labels() != offline.labels {
            return Err(SluError::Divergence(format!(
                "streaming differs from offline decoding (max lattice difference {diff:e})"
            )));
        }
        eprintln!("verify ok: {} emissions, max lattice difference {diff:e}", offline.labels.len());
    }
    Ok(())
}
