//! Character-spelling lexicon and the trie that constrains lexicon-mode
//! beam search.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use thiserror::Error;

use crate::lm::NGramModel;
use crate::tokenizer::TokenizationLevel;

#[derive(Debug, Error)]
pub enum LexiconError {
    #[error("no units to build a lexicon from")]
    EmptyCorpus,
    #[error("a lexicon is only used at subword or word level, not {0}")]
    LevelNotLexical(TokenizationLevel),
    #[error("no unigram score for unit {0:?}")]
    MissingScore(String),
    #[error("unit {unit:?} uses character {character:?}, which the emission vocabulary lacks")]
    UnknownCharacter { unit: String, character: String },
    #[error("malformed lexicon at line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Map from LM unit to its character spelling.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Lexicon {
    entries: BTreeMap<String, Vec<String>>,
}

impl Lexicon {
    /// One entry per distinct unit of an already-tokenized corpus.
    pub fn build<S: AsRef<str>>(
        corpus: &[Vec<S>],
        level: TokenizationLevel,
    ) -> Result<Self, LexiconError> {
        if !level.is_lexical() {
            return Err(LexiconError::LevelNotLexical(level));
        }
        let mut lexicon = Lexicon::default();
        for unit in corpus.iter().flatten() {
            let unit = unit.as_ref();
            if !lexicon.entries.contains_key(unit) {
                lexicon.entries.insert(unit.to_string(), spell(unit));
            }
        }
        if lexicon.entries.is_empty() {
            return Err(LexiconError::EmptyCorpus);
        }
        Ok(lexicon)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn spelling(&self, unit: &str) -> Option<&[String]> {
        self.entries.get(unit).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[String])> {
        self.entries.iter().map(|(u, s)| (u.as_str(), s.as_slice()))
    }

    /// Checks that every spelling character is an emission symbol.
    pub fn check_characters<S: AsRef<str>>(&self, symbols: &[S]) -> Result<(), LexiconError> {
        for (unit, spelling) in self.iter() {
            for c in spelling {
                if !symbols.iter().any(|s| s.as_ref() == c) {
                    return Err(LexiconError::UnknownCharacter {
                        unit: unit.to_string(),
                        character: c.clone(),
                    });
                }
            }
        }
        Ok(())
    }

    /// Writes `<unit>\t<char> <char> ...` lines.
    pub fn write<W: Write>(&self, mut out: W) -> Result<(), LexiconError> {
        for (unit, spelling) in self.iter() {
            writeln!(out, "{unit}\t{}", spelling.join(" "))?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(source: R) -> Result<Self, LexiconError> {
        let mut lexicon = Lexicon::default();
        for (i, line) in source.lines().enumerate() {
            let line = line?;
            let n = i + 1;
            if line.is_empty() {
                continue;
            }
            let (unit, spelling) = line.split_once('\t').ok_or(LexiconError::Malformed {
                line: n,
                reason: "expected `<unit>\\t<spelling>`".into(),
            })?;
            let spelling: Vec<String> = spelling.split(' ').map(String::from).collect();
            if unit.is_empty() || spelling.iter().any(String::is_empty) {
                return Err(LexiconError::Malformed {
                    line: n,
                    reason: "empty unit or spelling character".into(),
                });
            }
            if lexicon.entries.insert(unit.to_string(), spelling).is_some() {
                return Err(LexiconError::Malformed {
                    line: n,
                    reason: format!("duplicate unit {unit:?}"),
                });
            }
        }
        if lexicon.entries.is_empty() {
            return Err(LexiconError::EmptyCorpus);
        }
        Ok(lexicon)
    }
}

fn spell(unit: &str) -> Vec<String> {
    unit.chars().map(String::from).collect()
}

/// Unigram log10 scores of every lexicon unit under `model`.
pub fn unigram_scores(lexicon: &Lexicon, model: &NGramModel) -> BTreeMap<String, f64> {
    lexicon
        .iter()
        .map(|(unit, _)| (unit.to_string(), model.conditional::<&str>(&[], unit)))
        .collect()
}

#[derive(Debug, Clone)]
pub struct TrieNode {
    pub children: BTreeMap<String, usize>,
    /// Units whose spelling ends here.
    pub units: Vec<String>,
    /// Best unigram score among completions in this subtree.
    pub smear: f64,
}

impl TrieNode {
    fn new() -> Self {
        TrieNode {
            children: BTreeMap::new(),
            units: Vec::new(),
            smear: f64::NEG_INFINITY,
        }
    }
}

/// Spelling trie with max-smeared unigram scores. Node 0 is the root.
#[derive(Debug, Clone)]
pub struct LexiconTrie {
    nodes: Vec<TrieNode>,
}

impl LexiconTrie {
    pub const ROOT: usize = 0;

    pub fn build(
        lexicon: &Lexicon,
        unigram_scores: &BTreeMap<String, f64>,
    ) -> Result<Self, LexiconError> {
        if lexicon.is_empty() {
            return Err(LexiconError::EmptyCorpus);
        }
        let mut nodes = vec![TrieNode::new()];
        let mut paths: Vec<(Vec<usize>, f64)> = Vec::new();
        for (unit, spelling) in lexicon.iter() {
            let score = *unigram_scores
                .get(unit)
                .ok_or_else(|| LexiconError::MissingScore(unit.to_string()))?;
            let mut node = Self::ROOT;
            let mut path = vec![node];
            for c in spelling {
                node = match nodes[node].children.get(c) {
                    Some(&child) => child,
                    None => {
                        nodes.push(TrieNode::new());
                        let child = nodes.len() - 1;
                        nodes[node].children.insert(c.clone(), child);
                        child
                    }
                };
                path.push(node);
            }
            nodes[node].units.push(unit.to_string());
            paths.push((path, score));
        }
        for (path, score) in paths {
            for node in path {
                nodes[node].smear = nodes[node].smear.max(score);
            }
        }
        Ok(LexiconTrie { nodes })
    }

    pub fn node(&self, index: usize) -> &TrieNode {
        &self.nodes[index]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn child(&self, node: usize, character: &str) -> Option<usize> {
        self.nodes[node].children.get(character).copied()
    }

    /// Node reached by spelling `chars` from the root.
    pub fn walk<S: AsRef<str>>(&self, chars: &[S]) -> Option<usize> {
        chars
            .iter()
            .try_fold(Self::ROOT, |node, c| self.child(node, c.as_ref()))
    }

    /// Whether `chars` splits into a sequence of complete spellings.
    pub fn segments_exactly<S: AsRef<str>>(&self, chars: &[S]) -> bool {
        let n = chars.len();
        let mut reachable = vec![false; n + 1];
        reachable[0] = true;
        for start in 0..n {
            if !reachable[start] {
                continue;
            }
            let mut node = Self::ROOT;
            for (end, c) in chars.iter().enumerate().skip(start) {
                match self.child(node, c.as_ref()) {
                    Some(next) => node = next,
                    None => break,
                }
                if !self.nodes[node].units.is_empty() {
                    reachable[end + 1] = true;
                }
            }
        }
        reachable[n]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus(lines: &[&[&str]]) -> Vec<Vec<String>> {
        lines
            .iter()
            .map(|l| l.iter().map(|t| t.to_string()).collect())
            .collect()
    }

    fn spelled(chars: &[&str]) -> Vec<String> {
        chars.iter().map(|c| c.to_string()).collect()
    }

    #[test]
    fn word_lexicon() {
        let lex = Lexicon::build(&corpus(&[&["The", "▁", "cat"]]), TokenizationLevel::Word).unwrap();
        assert_eq!(lex.len(), 3);
        assert_eq!(lex.spelling("The").unwrap(), spelled(&["T", "h", "e"]));
        assert_eq!(lex.spelling("▁").unwrap(), spelled(&["▁"]));
        assert_eq!(lex.spelling("cat").unwrap(), spelled(&["c", "a", "t"]));
    }

    #[test]
    fn subword_lexicon_and_duplicates() {
        let lex = Lexicon::build(
            &corpus(&[&["aa", "a", "b"], &["a", "b"]]),
            TokenizationLevel::Subword,
        )
        .unwrap();
        assert_eq!(lex.len(), 3);
        assert_eq!(lex.spelling("aa").unwrap(), spelled(&["a", "a"]));
    }

    #[test]
    fn build_errors() {
        assert!(matches!(
            Lexicon::build::<String>(&[], TokenizationLevel::Word),
            Err(LexiconError::EmptyCorpus)
        ));
        assert!(matches!(
            Lexicon::build(&corpus(&[&["a"]]), TokenizationLevel::Character),
            Err(LexiconError::LevelNotLexical(_))
        ));
    }

    #[test]
    fn smear_is_max_over_subtree() {
        let lex = Lexicon::build(&corpus(&[&["a", "ab"]]), TokenizationLevel::Subword).unwrap();
        let scores = BTreeMap::from([("a".to_string(), -1.0), ("ab".to_string(), -2.0)]);
        let trie = LexiconTrie::build(&lex, &scores).unwrap();
        let a = trie.walk(&["a"]).unwrap();
        let ab = trie.walk(&["a", "b"]).unwrap();
        assert_eq!(trie.node(a).smear, -1.0);
        assert_eq!(trie.node(ab).smear, -2.0);
        assert_eq!(trie.node(LexiconTrie::ROOT).smear, -1.0);
        assert_eq!(trie.node(a).units, vec!["a".to_string()]);
        assert_eq!(trie.node(ab).units, vec!["ab".to_string()]);
    }

    #[test]
    fn single_unit_chain() {
        let lex = Lexicon::build(&corpus(&[&["xyz"]]), TokenizationLevel::Word).unwrap();
        let scores = BTreeMap::from([("xyz".to_string(), -0.5)]);
        let trie = LexiconTrie::build(&lex, &scores).unwrap();
        assert_eq!(trie.len(), 4);
        for i in 0..trie.len() {
            assert_eq!(trie.node(i).smear, -0.5);
        }
    }

    #[test]
    fn missing_score() {
        let lex = Lexicon::build(&corpus(&[&["a", "b"]]), TokenizationLevel::Word).unwrap();
        let scores = BTreeMap::from([("a".to_string(), -1.0)]);
        match LexiconTrie::build(&lex, &scores) {
            Err(LexiconError::MissingScore(u)) => assert_eq!(u, "b"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn parent_smear_dominates_children() {
        let lex = Lexicon::build(
            &corpus(&[&["cat", "car", "cart", "dog", "do", "▁"]]),
            TokenizationLevel::Word,
        )
        .unwrap();
        let scores: BTreeMap<String, f64> = lex
            .iter()
            .enumerate()
            .map(|(i, (u, _))| (u.to_string(), -(i as f64) * 0.7 - 0.1))
            .collect();
        let trie = LexiconTrie::build(&lex, &scores).unwrap();
        for i in 0..trie.len() {
            for &child in trie.node(i).children.values() {
                assert!(trie.node(i).smear >= trie.node(child).smear);
            }
        }
        for (unit, spelling) in lex.iter() {
            let node = trie.walk(spelling).unwrap();
            assert!(trie.node(node).units.iter().any(|u| u == unit));
        }
        assert!(trie.segments_exactly(&["c", "a", "r", "t", "▁", "d", "o"]));
        assert!(!trie.segments_exactly(&["c", "a"]));
    }

    #[test]
    fn file_round_trip() {
        let lex = Lexicon::build(&corpus(&[&["The", "▁", "cat"]]), TokenizationLevel::Word).unwrap();
        let mut buf = Vec::new();
        lex.write(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf.clone()).unwrap(),
            "The\tT h e\ncat\tc a t\n▁\t▁\n"
        );
        assert_eq!(Lexicon::read(buf.as_slice()).unwrap(), lex);
        assert!(Lexicon::read("a b\n".as_bytes()).is_err());
        assert!(Lexicon::read("a\ta\na\ta\n".as_bytes()).is_err());
    }

    #[test]
    fn character_check() {
        let lex = Lexicon::build(&corpus(&[&["ab"]]), TokenizationLevel::Word).unwrap();
        assert!(lex.check_characters(&["a", "b", "<ctc>"]).is_ok());
        assert!(matches!(
            lex.check_characters(&["a"]),
            Err(LexiconError::UnknownCharacter { .. })
        ));
    }
}
