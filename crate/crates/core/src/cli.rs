//! Subcommand front end. Machine-readable results go to stdout or `--out`
//! files, logs to stderr.
//!
//! Exit codes: 0 success, 1 usage, 2 bad data, 3 numeric failure.

use std::ffi::OsString;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use log::{debug, info, warn};
use serde::Serialize;

use crate::config::RunConfig;
use crate::control::{self, analyze_deltas, deltas_to_csv, EmphasisDirective};
use crate::cwt::{build_composite, cwt_transform_with, scaleogram_to_csv};
use crate::datamodel::{self, AlignedUtterance, EmphasisFeatures, FeatureStats};
use crate::detector::{annotated_pairs, f_score, kmeans2, tune, TuneReport};
use crate::dsp::{filterbank_to_csv, frame_tracks, mel_filterbank};
use crate::emphfeat::{
    detection_values, extract_corpus, fit_combined_weights_corpus, fit_stats, normalize_corpus, raw_emphasis_features,
    CombinedWeights, FeatureKind, Normalizer, WeightFit,
};
use crate::error::Error;
use crate::ingestion::{align_to_utterance, assemble_utterance, mark_emphasis, parse_textgrid, read_track_csv, read_wav};
use crate::neural::{make_synthetic_corpus, train, EmphasisMode, PredictorModel, TrainingSet};

#[derive(Debug, Parser)]
#[command(name = "prosodike", version, about = "Word emphasis features, detection and emphasis-controllable prosody prediction")]
pub struct Cli {
    /// TOML (or JSON) run configuration; defaults apply when absent.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed and PROSODIKE_SEED.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// More log output on stderr (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// TextGrid alignments plus WAV audio or time,value CSV tracks to a corpus.
    ///
    /// For `dir/name.TextGrid` the tracks are read from `dir/name.wav`, or
    /// from `dir/name.pitch.csv` and `dir/name.energy.csv`.
    Ingest {
        #[arg(required = true)]
        textgrids: Vec<PathBuf>,
        #[arg(long)]
        phone_tier: Option<String>,
        #[arg(long)]
        word_tier: Option<String>,
        #[arg(long)]
        emphasis_tier: Option<String>,
        /// Sample rate recorded for CSV-track utterances.
        #[arg(long, default_value_t = 24_000)]
        sample_rate: u32,
        /// Write the Mel filterbank used for the first WAV file as CSV.
        #[arg(long)]
        dump_mel: Option<PathBuf>,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic corpus with one emphasized word per utterance.
    SynthCorpus {
        #[arg(short, long)]
        n: usize,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Check corpus invariants; prints the number of violations.
    Validate { corpus: PathBuf },
    /// Corpus means and variances of the raw word features.
    FitStats {
        #[arg(long)]
        corpus: PathBuf,
        /// Use the best wavelet configuration of a tune report.
        #[arg(long)]
        tuned: Option<PathBuf>,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Per-word emphasis features as JSON-lines.
    Extract {
        #[arg(long)]
        corpus: PathBuf,
        /// Feature set the output is meant for; `combined` needs `--weights`.
        #[arg(long, default_value = "wavelet")]
        features: FeatureKind,
        /// Statistics from `fit-stats`; required unless `--raw`.
        #[arg(long)]
        stats: Option<PathBuf>,
        /// Weight fit from `fit-combined`.
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long)]
        tuned: Option<PathBuf>,
        /// Skip normalization.
        #[arg(long)]
        raw: bool,
        /// Write the composite scaleogram of one utterance as CSV.
        #[arg(long)]
        dump_scaleogram: Option<PathBuf>,
        /// Utterance for `--dump-scaleogram` (default: the first).
        #[arg(long)]
        dump_utterance: Option<String>,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Grid search of the wavelet feature settings against the annotations.
    Tune {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Two-class k-means on one feature; per-word predictions as JSON-lines.
    Detect {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "wavelet")]
        features: FeatureKind,
        /// Corpus with annotations; enables the F-score summary on stderr.
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Search the simplex weights of the combined feature.
    FitCombined {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        stats: PathBuf,
        #[arg(long)]
        tuned: Option<PathBuf>,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Train the prosody predictor on normalized features.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        mode: Option<EmphasisMode>,
        #[arg(long)]
        steps: Option<usize>,
        /// Loss history CSV.
        #[arg(long)]
        history: Option<PathBuf>,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Predict per-phone emphasis and prosody, optionally with a bias.
    Infer {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, allow_negative_numbers = true)]
        bias: Option<f64>,
        /// Comma-separated word indices the bias applies to.
        #[arg(long, value_delimiter = ',')]
        words: Vec<usize>,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Prosody changes on annotated emphasized words over a bias grid.
    Analyze {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        /// Comma-separated bias levels (default from the config).
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        biases: Vec<f64>,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
}

enum Failure {
    Usage(String),
    Data(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Data(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Data(Error::Io(e))
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

/// Parse arguments, run, and return the process exit code.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Info,
        1 => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    let _ = env_logger::Builder::new().filter_level(level).parse_default_env().format_timestamp(None).try_init();
    match execute(cli) {
        Ok(()) => 0,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            1
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn load_config(cli: &Cli) -> CliResult<RunConfig> {
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let mut cfg = cfg.with_env_seed()?;
    if let Some(s) = cli.seed {
        cfg.set_seed(s);
    }
    Ok(cfg)
}

fn write_out(out: Option<&Path>, bytes: &[u8]) -> CliResult<()> {
    match out {
        Some(p) => fs::write(p, bytes)?,
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(bytes)?;
            stdout.flush()?;
        }
    }
    Ok(())
}

fn read_corpus_file(path: &Path) -> CliResult<Vec<AlignedUtterance>> {
    let f = fs::File::open(path).map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?;
    Ok(datamodel::read_corpus(BufReader::new(f))?)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text).map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?)
}

fn read_features(path: &Path) -> CliResult<Vec<EmphasisFeatures>> {
    let f = fs::File::open(path).map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::parse(i + 1, e.to_string()))?);
    }
    Ok(out)
}

fn jsonl<T: Serialize>(items: &[T]) -> Vec<u8> {
    let mut buf = Vec::new();
    for it in items {
        serde_json::to_writer(&mut buf, it).expect("record serializes");
        buf.push(b'\n');
    }
    buf
}

fn pretty<T: Serialize>(v: &T) -> Vec<u8> {
    let mut s = serde_json::to_vec_pretty(v).expect("value serializes");
    s.push(b'\n');
    s
}

/// Warn when an input artifact was produced under a different configuration.
fn check_hash(what: &str, found: Option<&str>, current: &str) {
    match found {
        Some(h) if h != current => warn!("{what} was produced with config {h}, current config is {current}"),
        _ => {}
    }
}

fn wavelet_config(cfg: &RunConfig, tuned: Option<&Path>, hash: &str) -> CliResult<crate::cwt::WaveletConfig> {
    match tuned {
        Some(p) => {
            let report: TuneReport = read_json(p)?;
            check_hash("tune report", report.config_hash.as_deref(), hash);
            Ok(report.best)
        }
        None => Ok(cfg.cwt.clone()),
    }
}

fn ensure_matching_ids(corpus: &[AlignedUtterance], feats: &[EmphasisFeatures]) -> CliResult<()> {
    if corpus.len() != feats.len() || corpus.iter().zip(feats).any(|(u, f)| u.id != f.utterance_id) {
        return Err(Error::InvalidInput("feature records do not line up with the corpus utterances".into()).into());
    }
    Ok(())
}

fn execute(cli: Cli) -> CliResult<()> {
    let cfg = load_config(&cli)?;
    let hash = cfg.hash();
    debug!("config {hash}");
    match cli.command {
        Command::Ingest { textgrids, phone_tier, word_tier, emphasis_tier, sample_rate, dump_mel, out } => {
            let phone_tier = phone_tier.unwrap_or(cfg.ingest.phone_tier.clone());
            let word_tier = word_tier.unwrap_or(cfg.ingest.word_tier.clone());
            let emphasis_tier = emphasis_tier.or(cfg.ingest.emphasis_tier.clone());
            let shift = cfg.stft.frame_shift_ms;
            let mut corpus = Vec::new();
            let mut mel_dumped = false;
            for tg in &textgrids {
                let doc = parse_textgrid(&fs::read_to_string(tg)?)?;
                let mut sk = align_to_utterance(&doc, &phone_tier, &word_tier, shift)?;
                if let Some(t) = &emphasis_tier {
                    mark_emphasis(&doc, t, &mut sk, shift)?;
                }
                let stem = tg.file_stem().and_then(|s| s.to_str()).unwrap_or("utt").to_string();
                let sibling = |ext: &str| tg.with_file_name(format!("{stem}{ext}"));
                let (pitch, energy, sr) = if sibling(".wav").exists() {
                    let audio = read_wav(&fs::read(sibling(".wav"))?)?;
                    if let (Some(p), false) = (&dump_mel, mel_dumped) {
                        let bank = mel_filterbank(&cfg.mel, audio.sample_rate_hz, cfg.stft.fft_size(audio.sample_rate_hz))?;
                        fs::write(p, filterbank_to_csv(&bank))?;
                        mel_dumped = true;
                    }
                    let tracks = frame_tracks(&audio, &cfg.stft, &cfg.pitch)?;
                    (tracks.pitch_hz, tracks.energy_db, audio.sample_rate_hz)
                } else if sibling(".pitch.csv").exists() && sibling(".energy.csv").exists() {
                    let p = read_track_csv(&fs::read_to_string(sibling(".pitch.csv"))?, shift)?;
                    let e = read_track_csv(&fs::read_to_string(sibling(".energy.csv"))?, shift)?;
                    (p, e, sample_rate)
                } else {
                    return Err(Error::InvalidInput(format!(
                        "{}: no {stem}.wav or {stem}.pitch.csv + {stem}.energy.csv next to it",
                        tg.display()
                    ))
                    .into());
                };
                let utt = assemble_utterance(stem, sk, pitch, energy, sr, shift);
                let violations = datamodel::validate(&utt);
                if let Some(v) = violations.first() {
                    return Err(Error::InvalidInput(format!("{}: {v}", tg.display())).into());
                }
                corpus.push(utt);
            }
            if dump_mel.is_some() && !mel_dumped {
                warn!("--dump-mel needs at least one WAV input; nothing written");
            }
            info!("ingested {} utterances", corpus.len());
            write_out(out.as_deref(), datamodel::corpus_to_string(&corpus).as_bytes())
        }
        Command::SynthCorpus { n, out } => {
            if n == 0 {
                return Err(Failure::Usage("--n must be at least 1".into()));
            }
            let corpus = make_synthetic_corpus(cfg.seed, n);
            write_out(out.as_deref(), datamodel::corpus_to_string(&corpus).as_bytes())
        }
        Command::Validate { corpus } => {
            let utts = read_corpus_file(&corpus)?;
            let mut count = 0;
            for u in &utts {
                for v in datamodel::validate(u) {
                    eprintln!("{}: {v}", u.id);
                    count += 1;
                }
            }
            println!("{count} violations");
            if count > 0 {
                return Err(Error::InvalidInput(format!("{count} violations in {} utterances", utts.len())).into());
            }
            Ok(())
        }
        Command::FitStats { corpus, tuned, out } => {
            let utts = read_corpus_file(&corpus)?;
            let wcfg = wavelet_config(&cfg, tuned.as_deref(), &hash)?;
            let raw = extract_corpus(&utts, &wcfg)?;
            let mut stats = fit_stats(&raw)?;
            stats.config_hash = Some(hash.clone());
            write_out(out.as_deref(), &pretty(&stats))
        }
        Command::Extract { corpus, features, stats, weights, tuned, raw, dump_scaleogram, dump_utterance, out } => {
            let utts = read_corpus_file(&corpus)?;
            let wcfg = wavelet_config(&cfg, tuned.as_deref(), &hash)?;
            if let Some(p) = &dump_scaleogram {
                let utt = match &dump_utterance {
                    Some(id) => utts.iter().find(|u| &u.id == id),
                    None => utts.first(),
                }
                .ok_or_else(|| Error::InvalidInput("no utterance to dump".into()))?;
                let c = build_composite(utt, wcfg.weights, wcfg.duration_smoothing)?;
                let sg = cwt_transform_with(&c.values, wcfg.num_scales, wcfg.base_scale_frames, wcfg.padding)?;
                fs::write(p, scaleogram_to_csv(&sg))?;
            }
            let rawf = extract_corpus(&utts, &wcfg)?;
            let mut records: Vec<EmphasisFeatures> = if raw {
                utts.iter().zip(&rawf).map(|(u, r)| raw_emphasis_features(u, r)).collect()
            } else {
                let stats_path = stats.ok_or_else(|| Failure::Usage("--stats is required unless --raw".into()))?;
                let st: FeatureStats = read_json(&stats_path)?;
                check_hash("feature statistics", st.config_hash.as_deref(), &hash);
                let w = match &weights {
                    Some(p) => {
                        let fit: WeightFit = read_json(p)?;
                        check_hash("weight fit", fit.config_hash.as_deref(), &hash);
                        fit.weights
                    }
                    None if features == FeatureKind::Combined => {
                        return Err(Failure::Usage("--features combined needs --weights from fit-combined".into()))
                    }
                    None => CombinedWeights::uniform(),
                };
                normalize_corpus(&utts, &rawf, &Normalizer::new(st, cfg.features.exponent), &w)?
            };
            for r in &mut records {
                r.config_hash = Some(hash.clone());
            }
            write_out(out.as_deref(), &jsonl(&records))
        }
        Command::Tune { corpus, out } => {
            let utts = read_corpus_file(&corpus)?;
            let mut report = tune(&utts, &cfg.detector)?;
            info!("best F1 {:.4} with {:?}", report.best_f1, report.best);
            report.config_hash = Some(hash.clone());
            write_out(out.as_deref(), &pretty(&report))
        }
        Command::Detect { input, features, corpus, out } => {
            let feats = read_features(&input)?;
            for f in &feats {
                check_hash("features", f.config_hash.as_deref(), &hash);
            }
            let values = detection_values(&feats, features);
            let flat: Vec<f64> = values.iter().flatten().copied().collect();
            let det = kmeans2(&flat)?;
            let utts = match &corpus {
                Some(p) => {
                    let u = read_corpus_file(p)?;
                    ensure_matching_ids(&u, &feats)?;
                    Some(u)
                }
                None => None,
            };
            #[derive(Serialize)]
            struct WordPrediction<'a> {
                utterance_id: &'a str,
                word: usize,
                #[serde(skip_serializing_if = "Option::is_none")]
                text: Option<&'a str>,
                value: f64,
                emphasized: bool,
                #[serde(skip_serializing_if = "Option::is_none")]
                annotated: Option<bool>,
            }
            let mut rows = Vec::with_capacity(flat.len());
            for (ui, (f, vals)) in feats.iter().zip(&values).enumerate() {
                for (wi, &v) in vals.iter().enumerate() {
                    let word = utts.as_ref().map(|u| &u[ui].words[wi]);
                    rows.push(WordPrediction {
                        utterance_id: &f.utterance_id,
                        word: wi,
                        text: word.map(|w| w.text.as_str()),
                        value: v,
                        emphasized: v >= det.threshold,
                        annotated: word.and_then(|w| w.emphasized),
                    });
                }
            }
            if let Some(u) = &utts {
                let (v, labels) = annotated_pairs(u, &values);
                if !labels.is_empty() {
                    let preds: Vec<bool> = v.iter().map(|&x| x >= det.threshold).collect();
                    let f = f_score(&preds, &labels)?;
                    info!("precision {:.4} recall {:.4} F1 {:.4} over {} annotated words", f.precision, f.recall, f.f1, labels.len());
                }
            }
            write_out(out.as_deref(), &jsonl(&rows))
        }
        Command::FitCombined { corpus, stats, tuned, out } => {
            let utts = read_corpus_file(&corpus)?;
            let wcfg = wavelet_config(&cfg, tuned.as_deref(), &hash)?;
            let st: FeatureStats = read_json(&stats)?;
            check_hash("feature statistics", st.config_hash.as_deref(), &hash);
            let raw = extract_corpus(&utts, &wcfg)?;
            let mut fit = fit_combined_weights_corpus(&utts, &raw, &Normalizer::new(st, cfg.features.exponent))?;
            info!("combined weights {:?}, F1 {:.4}", fit.weights.weights(), fit.f1);
            fit.config_hash = Some(hash.clone());
            write_out(out.as_deref(), &pretty(&fit))
        }
        Command::Train { corpus, features, mode, steps, history, out } => {
            let utts = read_corpus_file(&corpus)?;
            let feats = read_features(&features)?;
            for f in &feats {
                check_hash("features", f.config_hash.as_deref(), &hash);
            }
            let mut model_cfg = cfg.model.clone();
            if let Some(m) = mode {
                model_cfg.mode = m;
            }
            let mut train_cfg = cfg.train.clone();
            if let Some(s) = steps {
                train_cfg.steps = s;
            }
            let set = TrainingSet::build(&utts, &feats, model_cfg.mode)?;
            let (mut model, hist) = train(&set, &model_cfg, &train_cfg)?;
            if let (Some(first), Some(last)) = (hist.rows.first(), hist.rows.last()) {
                info!("loss {:.4} -> {:.4} over {} steps", first.1.total, last.1.total, hist.rows.len());
            }
            if let Some(p) = &history {
                fs::write(p, hist.to_csv())?;
            }
            model.config_hash = Some(hash.clone());
            let mut text = model.to_json();
            text.push('\n');
            write_out(out.as_deref(), text.as_bytes())
        }
        Command::Infer { model, corpus, bias, words, out } => {
            let m = PredictorModel::from_json(&fs::read_to_string(&model)?)?;
            check_hash("model", m.config_hash.as_deref(), &hash);
            let directive = match (bias, words.is_empty()) {
                (Some(b), false) => Some(EmphasisDirective::new(words, b)),
                (None, true) => None,
                (Some(_), true) => return Err(Failure::Usage("--bias needs --words".into())),
                (None, false) => return Err(Failure::Usage("--words needs --bias".into())),
            };
            let utts = read_corpus_file(&corpus)?;
            #[derive(Serialize)]
            struct Record<'a> {
                utterance_id: &'a str,
                phones: Vec<&'a str>,
                emphasis: Vec<Vec<f64>>,
                log_duration: Vec<f64>,
                duration_frames: Vec<usize>,
                pitch_hz: Vec<f64>,
                energy_db: Vec<f64>,
            }
            let mut records = Vec::with_capacity(utts.len());
            for u in &utts {
                let input = m.input_for(u)?;
                let p = control::infer(&m, &input, directive.as_ref())?;
                records.push(Record {
                    utterance_id: &u.id,
                    phones: u.phones.iter().map(|p| p.label.as_str()).collect(),
                    emphasis: p.emphasis.outer_iter().map(|r| r.to_vec()).collect(),
                    log_duration: p.log_duration,
                    duration_frames: p.duration_frames,
                    pitch_hz: p.pitch_hz,
                    energy_db: p.energy_db,
                });
            }
            write_out(out.as_deref(), &jsonl(&records))
        }
        Command::Analyze { model, corpus, biases, out } => {
            let m = PredictorModel::from_json(&fs::read_to_string(&model)?)?;
            check_hash("model", m.config_hash.as_deref(), &hash);
            let utts = read_corpus_file(&corpus)?;
            let biases = if biases.is_empty() { cfg.control.biases.clone() } else { biases };
            let reports = analyze_deltas(&m, &utts, &biases)?;
            write_out(out.as_deref(), deltas_to_csv(&reports)?.as_bytes())
        }
    }
}
