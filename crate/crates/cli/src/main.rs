//! Command-line front end: tokenization, LM training, decoding, scoring,
//! weight tuning and emission simulation.

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use atr_lm::decoder::{
    decode_batch, default_lm_weight, BatchItem, BeamDecoder, DecodeConfig, Strategy,
    DEFAULT_BEAM_SIZE,
};
use atr_lm::io::{load_manifest, read_emissions, read_lines, write_emissions, write_manifest, ManifestItem};
use atr_lm::lexicon::{unigram_scores, Lexicon, LexiconTrie};
use atr_lm::lm::{count_ngrams, estimate, read_arpa, write_arpa, NGramModel, Smoothing, MAX_ORDER};
use atr_lm::metrics::{evaluate_items, tune, EvalItem, Objective, TuneGrid, ValItem};
use atr_lm::s2s_adapter::AdapterConfig;
use atr_lm::simulate::{ctc_vocab, synthesize, NoiseModel};
use atr_lm::tokenizer::{SpaceMode, SubwordModel, TokenizationLevel, Tokenizer};
use clap::{Parser, Subcommand};
use serde::Deserialize;
use serde_json::json;

#[derive(Parser)]
#[command(name = "atr-lm", version, about = "n-gram language models for text recognition decoding")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Tokenize a corpus, one line in, one line of space-separated tokens out.
    Tokenize {
        #[arg(long, default_value = "character")]
        level: TokenizationLevel,
        /// Subword model to apply, or to write when training.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Train a subword model with this vocabulary size on the input first.
        #[arg(long, value_name = "N")]
        train_subword: Option<usize>,
        #[arg(long, default_value = "separate-spaces")]
        space_mode: SpaceMode,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate an n-gram model from tokenized text and write it as ARPA.
    TrainLm {
        /// Model order, 1 to 6.
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=MAX_ORDER as i64))]
        order: u8,
        #[arg(long, default_value = "kneser-ney")]
        smoothing: Smoothing,
        /// Space-separated tokens, one sequence per line.
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Collect the spelling of every unit in tokenized text.
    BuildLexicon {
        #[arg(long, default_value = "word")]
        level: TokenizationLevel,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Decode a manifest of emission matrices, greedily or with an LM.
    Decode {
        #[arg(long)]
        emissions: PathBuf,
        /// ARPA model; without one decoding is greedy.
        #[arg(long)]
        lm: Option<PathBuf>,
        #[arg(long, default_value = "character")]
        lm_level: TokenizationLevel,
        /// Unit spellings, required for subword and word LMs.
        #[arg(long)]
        lexicon: Option<PathBuf>,
        /// LM weight; defaults to 1.5 for character and subword LMs, 0.5 for word LMs.
        #[arg(long)]
        lm_weight: Option<f64>,
        /// Bonus added per emitted LM unit.
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        unit_score: f64,
        #[arg(long, default_value_t = DEFAULT_BEAM_SIZE)]
        beam_size: usize,
        #[arg(long, default_value_t = 1)]
        nbest: usize,
        /// Expand only this many best symbols per frame.
        #[arg(long)]
        token_beam: Option<usize>,
        /// Treat inputs as sequence-to-sequence posteriors and adapt them first.
        #[arg(long)]
        adapt_s2s: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score hypotheses against references; prints a table, writes JSON.
    Evaluate {
        /// Manifest whose items carry references.
        #[arg(long)]
        refs: PathBuf,
        /// Output of `decode`.
        #[arg(long)]
        hyps: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Grid-search LM order and weight on a validation manifest.
    Tune {
        #[arg(long)]
        valset: PathBuf,
        /// Directory of ARPA models, one per order.
        #[arg(long)]
        lm_family: PathBuf,
        #[arg(long, default_value = "character")]
        lm_level: TokenizationLevel,
        #[arg(long)]
        lexicon: Option<PathBuf>,
        /// start:stop:step, inclusive.
        #[arg(long, default_value = "0:5:0.5")]
        weights: String,
        #[arg(long, default_value = "wer")]
        objective: Objective,
        #[arg(long, default_value_t = DEFAULT_BEAM_SIZE)]
        beam_size: usize,
        #[arg(long)]
        token_beam: Option<usize>,
        #[arg(long)]
        adapt_s2s: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Turn text lines into noisy CTC emission files plus a manifest.
    Simulate {
        #[arg(long)]
        text: PathBuf,
        #[arg(long, default_value_t = 0.2)]
        tau: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.3)]
        blank_affinity: f64,
        #[arg(long, default_value_t = 1)]
        frames_per_char: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

enum Failure {
    /// Bad flags or flag combinations.
    Usage(String),
    /// Unreadable, malformed or failing data.
    Data(String),
}

type Result<T> = std::result::Result<T, Failure>;

fn data<E: std::fmt::Display>(context: &str) -> impl FnOnce(E) -> Failure + '_ {
    move |e| Failure::Data(format!("{context}: {e}"))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(data(&path.display().to_string()))
}

fn read_model(path: &Path) -> Result<NGramModel> {
    let file = File::open(path).map_err(data(&path.display().to_string()))?;
    read_arpa(BufReader::new(file)).map_err(data(&path.display().to_string()))
}

fn read_lexicon(path: &Path) -> Result<Lexicon> {
    let file = File::open(path).map_err(data(&path.display().to_string()))?;
    Lexicon::read(BufReader::new(file)).map_err(data(&path.display().to_string()))
}

fn tokenized_corpus(path: &Path) -> Result<Vec<Vec<String>>> {
    Ok(read_lines(path)
        .map_err(data("corpus"))?
        .iter()
        .map(|l| l.split_whitespace().map(String::from).collect())
        .collect())
}

fn lexicon_for(level: TokenizationLevel, lexicon: Option<&PathBuf>) -> Result<Option<Lexicon>> {
    match (level.is_lexical(), lexicon) {
        (true, None) => Err(Failure::Usage(format!(
            "a {level}-level LM needs --lexicon"
        ))),
        (false, Some(_)) => Err(Failure::Usage(format!(
            "--lexicon only applies to subword and word LMs, not {level}"
        ))),
        (true, Some(p)) => read_lexicon(p).map(Some),
        (false, None) => Ok(None),
    }
}

fn load_items(manifest: &Path) -> Result<(Vec<ManifestItem>, Vec<BatchItem>)> {
    let manifest = load_manifest(manifest).map_err(data("manifest"))?;
    let mut items = Vec::with_capacity(manifest.items.len());
    for item in &manifest.items {
        let emissions = read_emissions(&item.emissions)
            .map_err(data(&format!("item {}", item.id)))?;
        items.push(BatchItem {
            id: item.id.clone(),
            emissions,
        });
    }
    Ok((manifest.items, items))
}

fn tokenize_cmd(
    level: TokenizationLevel,
    model: Option<PathBuf>,
    train_subword: Option<usize>,
    space_mode: SpaceMode,
    input: &Path,
    out: &Path,
) -> Result<()> {
    let text = fs::read_to_string(input).map_err(data(&input.display().to_string()))?;
    let lines: Vec<&str> = text.lines().collect();
    let tokenizer = match level {
        TokenizationLevel::Character => Tokenizer::Character,
        TokenizationLevel::Word => Tokenizer::Word,
        TokenizationLevel::Subword => {
            let path = model.ok_or_else(|| Failure::Usage("subword level needs --model".into()))?;
            let model = match train_subword {
                Some(n) => {
                    let m = SubwordModel::train(&lines, n, space_mode).map_err(data("training"))?;
                    fs::write(&path, m.to_text()).map_err(data(&path.display().to_string()))?;
                    m
                }
                None => {
                    let text = fs::read_to_string(&path).map_err(data(&path.display().to_string()))?;
                    SubwordModel::from_text(&text).map_err(data(&path.display().to_string()))?
                }
            };
            Tokenizer::Subword(model)
        }
    };
    let mut w = create(out)?;
    for line in lines {
        writeln!(w, "{}", tokenizer.tokenize(line).join(" ")).map_err(data("output"))?;
    }
    w.flush().map_err(data("output"))
}

fn train_lm_cmd(order: usize, smoothing: Smoothing, input: &Path, out: &Path) -> Result<()> {
    let corpus = tokenized_corpus(input)?;
    let counts = count_ngrams(&corpus, order).map_err(data("counting"))?;
    let model = estimate(&counts, smoothing).map_err(data("estimation"))?;
    let mut w = create(out)?;
    write_arpa(&model, &mut w).map_err(data("writing ARPA"))?;
    w.flush().map_err(data("writing ARPA"))?;
    let ppl = model.perplexity(&corpus).map_err(data("perplexity"))?;
    println!("order {order} {smoothing} model, training perplexity {ppl:.4}");
    Ok(())
}

fn build_lexicon_cmd(level: TokenizationLevel, input: &Path, out: &Path) -> Result<()> {
    let corpus = tokenized_corpus(input)?;
    let lexicon = Lexicon::build(&corpus, level).map_err(|e| match e {
        atr_lm::lexicon::LexiconError::LevelNotLexical(_) => Failure::Usage(e.to_string()),
        e => Failure::Data(e.to_string()),
    })?;
    let mut w = create(out)?;
    lexicon.write(&mut w).map_err(data("writing lexicon"))?;
    w.flush().map_err(data("writing lexicon"))?;
    println!("{} units", lexicon.len());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn decode_cmd(
    emissions: &Path,
    lm: Option<PathBuf>,
    lm_level: TokenizationLevel,
    lexicon: Option<PathBuf>,
    lm_weight: Option<f64>,
    unit_score: f64,
    beam_size: usize,
    nbest: usize,
    token_beam: Option<usize>,
    adapt_s2s: bool,
    out: &Path,
) -> Result<()> {
    let config = DecodeConfig {
        beam_size,
        lm_weight: lm_weight.unwrap_or_else(|| default_lm_weight(lm_level)),
        unit_insertion_score: unit_score,
        lm_level,
        nbest,
        token_beam,
    };
    config.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let (lexicon, model) = match &lm {
        Some(path) => {
            let lexicon = lexicon_for(lm_level, lexicon.as_ref())?;
            (lexicon, Some(read_model(path)?))
        }
        None if lexicon.is_some() => {
            return Err(Failure::Usage("--lexicon needs --lm".into()));
        }
        None => (None, None),
    };
    let (_, items) = load_items(emissions)?;
    let trie = match (&lexicon, &model) {
        (Some(lex), Some(m)) => {
            if let Some(first) = items.first() {
                if let Err(e) = lex.check_characters(first.emissions.vocab()) {
                    log::warn!("{e}; such units can never be decoded");
                }
            }
            Some(LexiconTrie::build(lex, &unigram_scores(lex, m)).map_err(data("lexicon"))?)
        }
        _ => None,
    };
    let decoder = match &model {
        Some(m) => Some(BeamDecoder::new(config, m, trie.as_ref()).map_err(|e| Failure::Usage(e.to_string()))?),
        None => None,
    };
    let strategy = match &decoder {
        Some(d) => Strategy::Beam(d),
        None => Strategy::Greedy,
    };
    let adapter = adapt_s2s.then(AdapterConfig::default);
    let outputs = decode_batch(&items, &strategy, adapter.as_ref(), true);

    let mut w = create(out)?;
    let mut failed = 0;
    for o in &outputs {
        let line = match &o.result {
            Ok(d) => {
                if let Some(warning) = &d.warning {
                    log::warn!("{}: {warning}", o.id);
                }
                let nbest: Vec<_> = d
                    .nbest
                    .iter()
                    .map(|h| json!({"text": h.text, "score": h.score, "acoustic": h.acoustic, "lm_log10": h.lm_log10}))
                    .collect();
                json!({"id": o.id, "text": d.text, "score": finite(d.score), "seconds": o.seconds,
                       "nbest": nbest, "warning": d.warning})
            }
            Err(e) => {
                failed += 1;
                eprintln!("{}: {e}", o.id);
                json!({"id": o.id, "error": e.to_string(), "seconds": o.seconds})
            }
        };
        writeln!(w, "{line}").map_err(data("output"))?;
    }
    w.flush().map_err(data("output"))?;
    if failed > 0 {
        return Err(Failure::Data(format!("{failed} of {} items failed", outputs.len())));
    }
    Ok(())
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

#[derive(Deserialize)]
struct HypLine {
    id: String,
    text: Option<String>,
    seconds: Option<f64>,
    error: Option<String>,
}

fn evaluate_cmd(refs: &Path, hyps: &Path, out: &Path) -> Result<()> {
    let manifest = load_manifest(refs).map_err(data("references"))?;
    let file = File::open(hyps).map_err(data(&hyps.display().to_string()))?;
    let mut by_id: HashMap<String, HypLine> = HashMap::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(data("hypotheses"))?;
        if line.trim().is_empty() {
            continue;
        }
        let h: HypLine = serde_json::from_str(&line)
            .map_err(|e| Failure::Data(format!("hypotheses line {}: {e}", i + 1)))?;
        by_id.insert(h.id.clone(), h);
    }
    let mut items = Vec::with_capacity(manifest.items.len());
    for item in manifest.items {
        let reference = item
            .reference
            .ok_or_else(|| Failure::Data(format!("item {} has no reference", item.id)))?;
        let hyp = by_id
            .remove(&item.id)
            .ok_or_else(|| Failure::Data(format!("no hypothesis for item {}", item.id)))?;
        if let Some(e) = hyp.error {
            return Err(Failure::Data(format!("item {} failed to decode: {e}", item.id)));
        }
        items.push(EvalItem {
            id: item.id,
            reference,
            hypothesis: hyp.text.unwrap_or_default(),
            seconds: hyp.seconds,
        });
    }
    let report = evaluate_items(items);
    let mut w = create(out)?;
    serde_json::to_writer_pretty(&mut w, &report).map_err(data("report"))?;
    writeln!(w).and_then(|_| w.flush()).map_err(data("report"))?;
    println!("{report}");
    Ok(())
}

fn parse_weights(spec: &str) -> Result<Vec<f64>> {
    let bad = || Failure::Usage(format!("--weights expects start:stop:step, got {spec:?}"));
    let parts: Vec<f64> = spec
        .split(':')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| bad())?;
    match parts[..] {
        [w] => Ok(vec![w]),
        [start, stop, step] if step > 0.0 && stop >= start => {
            let n = ((stop - start) / step + 1e-9).floor() as usize;
            Ok((0..=n).map(|i| start + i as f64 * step).collect())
        }
        _ => Err(bad()),
    }
}

#[allow(clippy::too_many_arguments)]
fn tune_cmd(
    valset: &Path,
    lm_family: &Path,
    lm_level: TokenizationLevel,
    lexicon: Option<PathBuf>,
    weights: &str,
    objective: Objective,
    beam_size: usize,
    token_beam: Option<usize>,
    adapt_s2s: bool,
    out: &Path,
) -> Result<()> {
    let lm_weights = parse_weights(weights)?;
    let lexicon = lexicon_for(lm_level, lexicon.as_ref())?;
    let mut family: HashMap<usize, NGramModel> = HashMap::new();
    let entries = fs::read_dir(lm_family).map_err(data(&lm_family.display().to_string()))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "arpa"))
        .collect();
    paths.sort();
    for path in paths {
        let model = read_model(&path)?;
        if family.insert(model.order(), model).is_some() {
            return Err(Failure::Data(format!(
                "{}: a second model of the same order",
                path.display()
            )));
        }
    }
    if family.is_empty() {
        return Err(Failure::Data(format!("no .arpa files in {}", lm_family.display())));
    }
    let mut orders: Vec<usize> = family.keys().copied().collect();
    orders.sort();

    let manifest = load_manifest(valset).map_err(data("validation manifest"))?;
    let mut val = Vec::with_capacity(manifest.items.len());
    for item in manifest.items {
        let reference = item
            .reference
            .ok_or_else(|| Failure::Data(format!("item {} has no reference", item.id)))?;
        val.push(ValItem {
            emissions: read_emissions(&item.emissions).map_err(data(&format!("item {}", item.id)))?,
            reference,
        });
    }
    let grid = TuneGrid {
        lm_weights,
        orders,
        objective,
    };
    let base = DecodeConfig {
        beam_size,
        token_beam,
        ..DecodeConfig::for_level(lm_level)
    };
    base.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let adapter = adapt_s2s.then(AdapterConfig::default);
    let result = tune(
        &val,
        &grid,
        |order| family.remove(&order).ok_or("missing order"),
        lexicon.as_ref(),
        &base,
        adapter.as_ref(),
    )
    .map_err(|e| match e {
        atr_lm::metrics::MetricsError::InvalidGrid(_) => Failure::Usage(e.to_string()),
        e => Failure::Data(e.to_string()),
    })?;
    let mut w = create(out)?;
    serde_json::to_writer_pretty(&mut w, &result).map_err(data("surface"))?;
    writeln!(w).and_then(|_| w.flush()).map_err(data("surface"))?;
    for p in &result.surface {
        let value = p
            .objective(objective)
            .map_or_else(|| p.error.clone().unwrap_or_default(), |v| format!("{:.2}", 100.0 * v));
        println!("order {} weight {:.2}: {value}", p.order, p.lm_weight);
    }
    match result.best {
        Some(b) => {
            println!("best: order {} weight {:.2}", b.order, b.lm_weight);
            Ok(())
        }
        None => Err(Failure::Data("every grid point failed".into())),
    }
}

fn simulate_cmd(
    text: &Path,
    noise: NoiseModel,
    out: &Path,
) -> Result<()> {
    noise.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let lines = read_lines(text).map_err(data("text"))?;
    fs::create_dir_all(out).map_err(data(&out.display().to_string()))?;
    let vocab = ctc_vocab(&lines);
    let width = lines.len().max(1).to_string().len().max(6);
    let mut manifest = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        let m = synthesize(line, &noise.for_item(i as u64), &vocab).map_err(data(&format!("line {}", i + 1)))?;
        let name = format!("{i:0width$}.npy");
        write_emissions(&m, &out.join(&name)).map_err(data(&name))?;
        manifest.push(ManifestItem {
            id: format!("{i:0width$}"),
            emissions: PathBuf::from(name),
            reference: Some(line.clone()),
        });
    }
    let mut w = create(&out.join("manifest.jsonl"))?;
    write_manifest(&mut w, &manifest)
        .and_then(|_| w.flush())
        .map_err(data("manifest"))?;
    println!("{} items, {} symbols", manifest.len(), vocab.len());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Tokenize {
            level,
            model,
            train_subword,
            space_mode,
            input,
            out,
        } => tokenize_cmd(level, model, train_subword, space_mode, &input, &out),
        Command::TrainLm {
            order,
            smoothing,
            input,
            out,
        } => train_lm_cmd(order as usize, smoothing, &input, &out),
        Command::BuildLexicon { level, input, out } => build_lexicon_cmd(level, &input, &out),
        Command::Decode {
            emissions,
            lm,
            lm_level,
            lexicon,
            lm_weight,
            unit_score,
            beam_size,
            nbest,
            token_beam,
            adapt_s2s,
            out,
        } => decode_cmd(
            &emissions, lm, lm_level, lexicon, lm_weight, unit_score, beam_size, nbest, token_beam,
            adapt_s2s, &out,
        ),
        Command::Evaluate { refs, hyps, out } => evaluate_cmd(&refs, &hyps, &out),
        Command::Tune {
            valset,
            lm_family,
            lm_level,
            lexicon,
            weights,
            objective,
            beam_size,
            token_beam,
            adapt_s2s,
            out,
        } => tune_cmd(
            &valset, &lm_family, lm_level, lexicon, &weights, objective, beam_size, token_beam,
            adapt_s2s, &out,
        ),
        Command::Simulate {
            text,
            tau,
            seed,
            blank_affinity,
            frames_per_char,
            out,
        } => simulate_cmd(
            &text,
            NoiseModel {
                temperature: tau,
                blank_affinity,
                frames_per_char,
                seed,
                ..NoiseModel::default()
            },
            &out,
        ),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Data(msg)) => {
            eprintln!("error: {msg}");
            let _ = io::stderr().flush();
            ExitCode::from(1)
        }
    }
}
