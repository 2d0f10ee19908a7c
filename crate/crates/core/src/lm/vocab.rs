use rustc_hash::FxHashMap;

use super::{LmError, MAX_VOCAB};

pub const UNK: &str = "<unk>";
pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";

/// Token interning table. Ids 0, 1 and 2 are always `<unk>`, `<s>`, `</s>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: FxHashMap<String, u32>,
}

impl Default for Vocab {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocab {
    pub const UNK_ID: u32 = 0;
    pub const BOS_ID: u32 = 1;
    pub const EOS_ID: u32 = 2;

    pub fn new() -> Self {
        let mut v = Vocab {
            tokens: Vec::new(),
            index: FxHashMap::default(),
        };
        for t in [UNK, BOS, EOS] {
            v.tokens.push(t.to_string());
            v.index.insert(t.to_string(), v.tokens.len() as u32 - 1);
        }
        v
    }

    pub(crate) fn intern(&mut self, token: &str) -> Result<u32, LmError> {
        if let Some(&id) = self.index.get(token) {
            return Ok(id);
        }
        if self.tokens.len() >= MAX_VOCAB {
            return Err(LmError::VocabTooLarge);
        }
        let id = self.tokens.len() as u32;
        self.tokens.push(token.to_string());
        self.index.insert(token.to_string(), id);
        Ok(id)
    }

    pub fn get(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    /// Id of `token`, or the `<unk>` id when it is out of vocabulary.
    pub fn id_or_unk(&self, token: &str) -> u32 {
        self.get(token).unwrap_or(Self::UNK_ID)
    }

    pub fn token(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, &str)> {
        self.tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (i as u32, t.as_str()))
    }
}
