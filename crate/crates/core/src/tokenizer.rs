//! Character, subword (BPE) and word tokenization.
//!
//! Every tokenizer maps the ASCII space to the marker token [`SPACE_MARKER`]
//! so that `detokenize(tokenize(t)) == t` holds at all levels.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use regex::Regex;
use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

/// Stand-in for the space character (U+2581).
pub const SPACE_MARKER: &str = "\u{2581}";
const SPACE_MARKER_CHAR: char = '\u{2581}';

#[derive(Debug, Error)]
pub enum TokenizerError {
    #[error("vocabulary size {requested} is smaller than the {required} distinct characters of the corpus")]
    VocabTooSmall { requested: usize, required: usize },
    #[error("cannot train a subword model on an empty corpus")]
    EmptyCorpus,
    #[error("malformed subword model at line {line}: {reason}")]
    MalformedModel { line: usize, reason: String },
    #[error("unknown tokenization level `{0}`")]
    UnknownLevel(String),
    #[error("unknown space mode `{0}`")]
    UnknownSpaceMode(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenizationLevel {
    Character,
    Subword,
    Word,
}

impl TokenizationLevel {
    pub fn as_str(self) -> &'static str {
        match self {
            TokenizationLevel::Character => "character",
            TokenizationLevel::Subword => "subword",
            TokenizationLevel::Word => "word",
        }
    }

    /// Whether decoding at this level needs a lexicon.
    pub fn is_lexical(self) -> bool {
        !matches!(self, TokenizationLevel::Character)
    }
}

impl fmt::Display for TokenizationLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TokenizationLevel {
    type Err = TokenizerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "character" => Ok(TokenizationLevel::Character),
            "subword" => Ok(TokenizationLevel::Subword),
            "word" => Ok(TokenizationLevel::Word),
            other => Err(TokenizerError::UnknownLevel(other.to_string())),
        }
    }
}

/// How spaces interact with subwords.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpaceMode {
    /// The marker is glued to the start of the following word (`▁numer ic ally`).
    SentencePiece,
    /// The marker is always a standalone token (`▁ numer ic ally`).
    #[default]
    SeparateSpaces,
}

impl SpaceMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SpaceMode::SentencePiece => "sentencepiece",
            SpaceMode::SeparateSpaces => "separate-spaces",
        }
    }
}

impl fmt::Display for SpaceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SpaceMode {
    type Err = TokenizerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sentencepiece" => Ok(SpaceMode::SentencePiece),
            "separate-spaces" => Ok(SpaceMode::SeparateSpaces),
            other => Err(TokenizerError::UnknownSpaceMode(other.to_string())),
        }
    }
}

/// NFC normalization applied to every input before tokenization.
pub fn normalize(text: &str) -> String {
    text.nfc().collect()
}

fn marker_for(c: char) -> String {
    if c == ' ' {
        SPACE_MARKER.to_string()
    } else {
        c.to_string()
    }
}

/// One token per Unicode scalar value, spaces replaced by the marker.
pub fn tokenize_chars(text: &str) -> Vec<String> {
    normalize(text).chars().map(marker_for).collect()
}

fn wordpunct() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    // Runs of word characters, single spaces, and runs of everything else.
    RE.get_or_init(|| Regex::new(r"\w+| |[^\w ]+").expect("valid regex"))
}

/// Word-level tokenization following the wordpunct rule: alphanumeric runs
/// and punctuation runs are separate tokens, every space is a marker token.
pub fn tokenize_words(text: &str) -> Vec<String> {
    let text = normalize(text);
    wordpunct()
        .find_iter(&text)
        .map(|m| {
            if m.as_str() == " " {
                SPACE_MARKER.to_string()
            } else {
                m.as_str().to_string()
            }
        })
        .collect()
}

/// Concatenates tokens, turning every marker back into a space.
pub fn detokenize<S: AsRef<str>>(tokens: &[S], _level: TokenizationLevel) -> String {
    let mut out = String::new();
    for token in tokens {
        for c in token.as_ref().chars() {
            out.push(if c == SPACE_MARKER_CHAR { ' ' } else { c });
        }
    }
    out
}

/// Splits normalized text into the segments merges are confined to.
fn segments(text: &str, mode: SpaceMode) -> Vec<Segment> {
    let mut out = Vec::new();
    let mut current: Vec<String> = Vec::new();
    for c in text.chars() {
        match (c, mode) {
            (' ', SpaceMode::SeparateSpaces) => {
                if !current.is_empty() {
                    out.push(Segment::Word(std::mem::take(&mut current)));
                }
                out.push(Segment::Space);
            }
            (' ', SpaceMode::SentencePiece) => {
                if !current.is_empty() {
                    out.push(Segment::Word(std::mem::take(&mut current)));
                }
                current.push(SPACE_MARKER.to_string());
            }
            _ => current.push(c.to_string()),
        }
    }
    if !current.is_empty() {
        out.push(Segment::Word(current));
    }
    out
}

enum Segment {
    Space,
    Word(Vec<String>),
}

/// Byte-pair-encoding model: ordered merge rules plus the vocabulary they
/// generate on top of the training characters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubwordModel {
    merges: Vec<(String, String)>,
    vocab: Vec<String>,
    vocab_size_target: usize,
    space_mode: SpaceMode,
    ranks: FxHashMap<(String, String), usize>,
    vocab_set: BTreeSet<String>,
}

impl SubwordModel {
    fn from_parts(
        merges: Vec<(String, String)>,
        vocab: Vec<String>,
        vocab_size_target: usize,
        space_mode: SpaceMode,
    ) -> Self {
        let ranks = merges
            .iter()
            .cloned()
            .enumerate()
            .map(|(i, pair)| (pair, i))
            .collect();
        let vocab_set = vocab.iter().cloned().collect();
        SubwordModel {
            merges,
            vocab,
            vocab_size_target,
            space_mode,
            ranks,
            vocab_set,
        }
    }

    /// Trains deterministic BPE: the most frequent adjacent pair is merged
    /// until the vocabulary reaches `vocab_size` or no pair remains. Ties go
    /// to the lexicographically smallest `(left, right)` pair.
    pub fn train<S: AsRef<str>>(
        corpus: &[S],
        vocab_size: usize,
        space_mode: SpaceMode,
    ) -> Result<Self, TokenizerError> {
        if corpus.is_empty() {
            return Err(TokenizerError::EmptyCorpus);
        }
        let mut word_counts: BTreeMap<Vec<String>, u64> = BTreeMap::new();
        let mut chars: BTreeSet<String> = BTreeSet::new();
        for line in corpus {
            let line = normalize(line.as_ref());
            for seg in segments(&line, space_mode) {
                match seg {
                    Segment::Space => {
                        chars.insert(SPACE_MARKER.to_string());
                    }
                    Segment::Word(symbols) => {
                        chars.extend(symbols.iter().cloned());
                        *word_counts.entry(symbols).or_insert(0) += 1;
                    }
                }
            }
        }
        if vocab_size < chars.len() {
            return Err(TokenizerError::VocabTooSmall {
                requested: vocab_size,
                required: chars.len(),
            });
        }

        let mut vocab: Vec<String> = chars.iter().cloned().collect();
        let mut vocab_set = chars;
        let mut words: Vec<(Vec<String>, u64)> = word_counts.into_iter().collect();
        let mut merges = Vec::new();

        while vocab.len() < vocab_size {
            let mut pair_counts: BTreeMap<(&str, &str), u64> = BTreeMap::new();
            for (symbols, count) in &words {
                for w in symbols.windows(2) {
                    *pair_counts.entry((&w[0], &w[1])).or_insert(0) += count;
                }
            }
            // BTreeMap iterates in lexicographic order, so the first maximum wins ties.
            let Some(((left, right), _)) = pair_counts
                .into_iter()
                .fold(None, |best: Option<((&str, &str), u64)>, (pair, c)| match best {
                    Some((_, bc)) if bc >= c => best,
                    _ => Some((pair, c)),
                })
            else {
                break;
            };
            let (left, right) = (left.to_string(), right.to_string());
            let merged = format!("{left}{right}");
            for (symbols, _) in words.iter_mut() {
                merge_in_place(symbols, &left, &right);
            }
            if vocab_set.insert(merged.clone()) {
                vocab.push(merged);
            }
            merges.push((left, right));
        }

        Ok(Self::from_parts(merges, vocab, vocab_size, space_mode))
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn contains(&self, token: &str) -> bool {
        self.vocab_set.contains(token)
    }

    pub fn vocab_size_target(&self) -> usize {
        self.vocab_size_target
    }

    pub fn space_mode(&self) -> SpaceMode {
        self.space_mode
    }

    /// Applies merges in training order within each segment. Characters
    /// never seen in training come out as single-character tokens.
    pub fn tokenize(&self, text: &str) -> Vec<String> {
        let text = normalize(text);
        let mut out = Vec::new();
        for seg in segments(&text, self.space_mode) {
            match seg {
                Segment::Space => out.push(SPACE_MARKER.to_string()),
                Segment::Word(mut symbols) => {
                    self.encode_segment(&mut symbols);
                    out.extend(symbols);
                }
            }
        }
        out
    }

    fn encode_segment(&self, symbols: &mut Vec<String>) {
        loop {
            let best = symbols
                .windows(2)
                .filter_map(|w| self.ranks.get(&(w[0].clone(), w[1].clone())).copied())
                .min();
            let Some(rank) = best else { break };
            let (left, right) = &self.merges[rank];
            merge_in_place(symbols, left, right);
        }
    }

    /// Serializes to the `bpe-v1` text format.
    pub fn to_text(&self) -> String {
        let mut out = format!("bpe-v1 {} {}\n", self.vocab_size_target, self.space_mode);
        for (l, r) in &self.merges {
            out.push_str(l);
            out.push('\t');
            out.push_str(r);
            out.push('\n');
        }
        out.push('\n');
        for v in &self.vocab {
            out.push_str(v);
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, TokenizerError> {
        let malformed = |line: usize, reason: &str| TokenizerError::MalformedModel {
            line,
            reason: reason.to_string(),
        };
        let mut lines = text.split('\n').enumerate().map(|(i, l)| (i + 1, l));
        let (_, header) = lines.next().ok_or_else(|| malformed(1, "empty file"))?;
        let fields: Vec<&str> = header.split(' ').collect();
        if fields.len() != 3 || fields[0] != "bpe-v1" {
            return Err(malformed(1, "expected `bpe-v1 <vocab_size> <space_mode>`"));
        }
        let vocab_size_target: usize = fields[1]
            .parse()
            .map_err(|_| malformed(1, "vocabulary size is not an integer"))?;
        let space_mode: SpaceMode = fields[2]
            .parse()
            .map_err(|_| malformed(1, "unknown space mode"))?;

        let mut merges = Vec::new();
        let mut in_vocab = false;
        let mut vocab = Vec::new();
        let mut saw_terminator = false;
        for (n, line) in lines {
            if !in_vocab {
                if line.is_empty() {
                    in_vocab = true;
                    continue;
                }
                let (l, r) = line
                    .split_once('\t')
                    .ok_or_else(|| malformed(n, "merge rule must be `<left>\\t<right>`"))?;
                if l.is_empty() || r.is_empty() || r.contains('\t') {
                    return Err(malformed(n, "merge rule must have two non-empty sides"));
                }
                merges.push((l.to_string(), r.to_string()));
            } else if line.is_empty() {
                // Only the final newline may produce an empty line.
                saw_terminator = true;
            } else if saw_terminator {
                return Err(malformed(n, "content after end of vocabulary"));
            } else {
                vocab.push(line.to_string());
            }
        }
        if !in_vocab {
            return Err(malformed(1, "missing blank line before vocabulary"));
        }
        let model = Self::from_parts(merges, vocab, vocab_size_target, space_mode);
        for (i, (l, r)) in model.merges.iter().enumerate() {
            if !model.contains(&format!("{l}{r}")) {
                return Err(malformed(i + 2, "merge output missing from vocabulary"));
            }
        }
        Ok(model)
    }
}

fn merge_in_place(symbols: &mut Vec<String>, left: &str, right: &str) {
    if symbols.len() < 2 {
        return;
    }
    let mut out = Vec::with_capacity(symbols.len());
    let mut i = 0;
    while i < symbols.len() {
        if i + 1 < symbols.len() && symbols[i] == left && symbols[i + 1] == right {
            out.push(format!("{left}{right}"));
            i += 2;
        } else {
            out.push(std::mem::take(&mut symbols[i]));
            i += 1;
        }
    }
    *symbols = out;
}

/// A tokenizer at any of the three levels.
#[derive(Debug, Clone)]
pub enum Tokenizer {
    Character,
    Subword(SubwordModel),
    Word,
}

impl Tokenizer {
    pub fn level(&self) -> TokenizationLevel {
        match self {
            Tokenizer::Character => TokenizationLevel::Character,
            Tokenizer::Subword(_) => TokenizationLevel::Subword,
            Tokenizer::Word => TokenizationLevel::Word,
        }
    }

    pub fn tokenize(&self, text: &str) -> Vec<String> {
        match self {
            Tokenizer::Character => tokenize_chars(text),
            Tokenizer::Subword(model) => model.tokenize(text),
            Tokenizer::Word => tokenize_words(text),
        }
    }

    pub fn detokenize<S: AsRef<str>>(&self, tokens: &[S]) -> String {
        detokenize(tokens, self.level())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &[&str]) -> Vec<String> {
        s.iter().map(|t| t.to_string()).collect()
    }

    #[test]
    fn characters_of_table_sentence() {
        let got = tokenize_chars("The numerically largest group");
        let want: Vec<String> = "T h e ▁ n u m e r i c a l l y ▁ l a r g e s t ▁ g r o u p"
            .split(' ')
            .map(String::from)
            .collect();
        assert_eq!(got, want);
    }

    #[test]
    fn character_edge_cases() {
        assert!(tokenize_chars("").is_empty());
        assert_eq!(tokenize_chars("a b"), toks(&["a", "▁", "b"]));
        assert_eq!(tokenize_chars("a  b"), toks(&["a", "▁", "▁", "b"]));
    }

    #[test]
    fn nfc_is_applied() {
        // e + combining acute composes to a single scalar.
        assert_eq!(tokenize_chars("e\u{301}"), toks(&["\u{e9}"]));
    }

    #[test]
    fn words_of_table_sentence() {
        assert_eq!(
            tokenize_words("The numerically largest group"),
            toks(&["The", "▁", "numerically", "▁", "largest", "▁", "group"])
        );
        assert!(tokenize_words("").is_empty());
    }

    #[test]
    fn words_split_punctuation() {
        assert_eq!(
            tokenize_words("don't stop."),
            toks(&["don", "'", "t", "▁", "stop", "."])
        );
        assert_eq!(tokenize_words("abc123 ?!"), toks(&["abc123", "▁", "?!"]));
        assert_eq!(tokenize_words("a  b"), toks(&["a", "▁", "▁", "b"]));
    }

    #[test]
    fn detokenize_examples() {
        assert_eq!(
            detokenize(&toks(&["T", "h", "e", "▁", "c", "a", "t"]), TokenizationLevel::Character),
            "The cat"
        );
        assert_eq!(detokenize::<String>(&[], TokenizationLevel::Word), "");
        assert_eq!(
            detokenize(&toks(&["The", "▁", "cat"]), TokenizationLevel::Word),
            "The cat"
        );
        assert_eq!(
            detokenize(&toks(&["▁numer", "ic"]), TokenizationLevel::Subword),
            " numeric"
        );
    }

    #[test]
    fn bpe_merges_most_frequent_pair_first() {
        let model = SubwordModel::train(&["aaab", "aaab"], 5, SpaceMode::SeparateSpaces).unwrap();
        assert_eq!(model.merges()[0], ("a".to_string(), "a".to_string()));
        for v in ["a", "b", "aa"] {
            assert!(model.contains(v), "missing {v}");
        }
        assert!(model.vocab().len() <= 5);
    }

    #[test]
    fn bpe_budget_exhausted_by_characters() {
        let model = SubwordModel::train(&["ab"], 2, SpaceMode::SeparateSpaces).unwrap();
        assert_eq!(model.vocab(), &toks(&["a", "b"])[..]);
        assert!(model.merges().is_empty());
        assert_eq!(model.tokenize("ab"), toks(&["a", "b"]));
    }

    #[test]
    fn bpe_vocab_too_small() {
        let err = SubwordModel::train(&["abc"], 2, SpaceMode::SeparateSpaces).unwrap_err();
        assert!(matches!(
            err,
            TokenizerError::VocabTooSmall { requested: 2, required: 3 }
        ));
        assert!(matches!(
            SubwordModel::train::<&str>(&[], 10, SpaceMode::SeparateSpaces),
            Err(TokenizerError::EmptyCorpus)
        ));
    }

    #[test]
    fn separate_spaces_never_merges_marker() {
        let model = SubwordModel::train(&["xy xy"], 4, SpaceMode::SeparateSpaces).unwrap();
        assert!(model.contains("▁"));
        assert!(model.contains("xy"));
        for v in model.vocab() {
            assert!(v == "▁" || !v.contains('▁'), "{v}");
        }
        assert_eq!(model.tokenize("xy xy"), toks(&["xy", "▁", "xy"]));
    }

    #[test]
    fn sentencepiece_mode_glues_marker() {
        let model = SubwordModel::train(&["ab ab ab"], 10, SpaceMode::SentencePiece).unwrap();
        let got = model.tokenize("ab ab");
        assert_eq!(got, toks(&["ab", "▁ab"]));
        assert_eq!(detokenize(&got, TokenizationLevel::Subword), "ab ab");
    }

    #[test]
    fn subword_application_follows_training_order() {
        let model = SubwordModel::train(&["aaab", "aaab"], 3, SpaceMode::SeparateSpaces).unwrap();
        assert_eq!(model.merges(), &[("a".to_string(), "a".to_string())]);
        assert_eq!(model.tokenize("aaab"), toks(&["aa", "a", "b"]));
        assert!(model.tokenize("").is_empty());
        // Unseen characters fall back to single characters.
        assert_eq!(model.tokenize("zaa"), toks(&["z", "aa"]));
    }

    #[test]
    fn model_text_round_trip() {
        let model =
            SubwordModel::train(&["the cat sat", "the hat"], 12, SpaceMode::SeparateSpaces).unwrap();
        let text = model.to_text();
        assert!(text.starts_with("bpe-v1 12 separate-spaces\n"));
        let back = SubwordModel::from_text(&text).unwrap();
        assert_eq!(back, model);
        assert_eq!(back.to_text(), text);
    }

    #[test]
    fn malformed_model_is_rejected() {
        assert!(SubwordModel::from_text("bpe-v2 3 separate-spaces\n\na\n").is_err());
        assert!(SubwordModel::from_text("bpe-v1 3 separate-spaces\na b\n\na\n").is_err());
        // merge output missing from vocab
        assert!(SubwordModel::from_text("bpe-v1 3 separate-spaces\na\tb\n\na\nb\n").is_err());
    }

    #[test]
    fn level_names() {
        for level in [
            TokenizationLevel::Character,
            TokenizationLevel::Subword,
            TokenizationLevel::Word,
        ] {
            assert_eq!(level.as_str().parse::<TokenizationLevel>().unwrap(), level);
            assert_eq!(
                serde_json::to_string(&level).unwrap(),
                format!("\"{}\"", level.as_str())
            );
        }
    }
}
