//! Instruction vocabulary and tokenization, plus the pool used to sample
//! mismatched ("fake") instructions for conditioning-aware losses.

use rand::Rng as _;
use thiserror::Error;

/// Token id 0 is the reserved blank; the rest are the closed task grammar.
pub const BLANK: &str = "<blank>";

pub const VOCAB: [&str; 26] = [
    BLANK, // 0
    "go", "to", "the", "pick", "up", "put", "next", // verbs and glue
    "red", "green", "blue", "purple", "yellow", "grey", // colors
    "ball", "key", "box", // kinds
    "in", "front", "of", "you", "behind", "on", "your", "left", "right", // locations
];

pub const BLANK_ID: u16 = 0;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LangError {
    #[error("word not in vocabulary: {0:?}")]
    UnknownWord(String),
    #[error("token id out of range: {0}")]
    UnknownId(u16),
    #[error("cannot sample a fake instruction from a pool of one")]
    PoolTooSmall,
}

pub fn word_id(word: &str) -> Option<u16> {
    VOCAB.iter().position(|&w| w == word).map(|i| i as u16)
}

pub fn id_word(id: u16) -> Option<&'static str> {
    VOCAB.get(id as usize).copied()
}

pub fn tokenize(text: &str) -> Result<Vec<u16>, LangError> {
    text.split_whitespace()
        .map(|w| word_id(w).ok_or_else(|| LangError::UnknownWord(w.to_string())))
        .collect()
}

pub fn detokenize(tokens: &[u16]) -> Result<String, LangError> {
    let words: Result<Vec<&str>, _> = tokens
        .iter()
        .map(|&t| id_word(t).ok_or(LangError::UnknownId(t)))
        .collect();
    Ok(words?.join(" "))
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Instruction {
    pub text: String,
    pub tokens: Vec<u16>,
}

impl Instruction {
    pub fn from_text(text: &str, _family: Option<crate::env::TaskFamily>) -> Result<Instruction, LangError> {
        Ok(Instruction { text: text.to_string(), tokens: tokenize(text)? })
    }

    pub fn from_tokens(tokens: Vec<u16>) -> Result<Instruction, LangError> {
        let text = detokenize(&tokens)?;
        Ok(Instruction { text, tokens })
    }

    /// The fixed unconditional instruction: a single blank token.
    pub fn blank() -> Instruction {
        Instruction { text: BLANK.to_string(), tokens: vec![BLANK_ID] }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Distinct instructions of a demo set, in a stable sorted order so sampling
/// is reproducible across runs and platforms.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstructionSet {
    instrs: Vec<Instruction>,
}

impl InstructionSet {
    pub fn build<'a, I: IntoIterator<Item = &'a Instruction>>(iter: I) -> InstructionSet {
        let mut instrs: Vec<Instruction> = iter.into_iter().cloned().collect();
        instrs.sort();
        instrs.dedup();
        InstructionSet { instrs }
    }

    pub fn len(&self) -> usize {
        self.instrs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instrs.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Instruction> {
        self.instrs.iter()
    }

    pub fn contains(&self, instr: &Instruction) -> bool {
        self.instrs.binary_search(instr).is_ok()
    }

    /// Uniform draw from the pool minus `original`. The draw is uniform over
    /// the remaining instructions regardless of whether `original` is pooled.
    pub fn sample_fake(
        &self,
        original: &Instruction,
        rng: &mut crate::rng::Rng,
    ) -> Result<Instruction, LangError> {
        let n = self.instrs.len();
        let skip = self.instrs.binary_search(original).ok();
        let m = if skip.is_some() { n - 1 } else { n };
        if m == 0 {
            return Err(LangError::PoolTooSmall);
        }
        let mut i = rng.gen_range(0..m);
        if let Some(s) = skip {
            if i >= s {
                i += 1;
            }
        }
        Ok(self.instrs[i].clone())
    }
}
