use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::text::CleanText;
use crate::error::{Error, Result};

/// Sequence cap, boundary tokens included.
pub const MAX_POSITIONS: usize = 300;

/// Fixed-length token ids with the attention mask marking real tokens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub token_ids: Vec<u32>,
    pub attention_mask: Vec<u8>,
    pub truncated: bool,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    /// Number of real (unmasked) positions.
    pub fn real_len(&self) -> usize {
        self.attention_mask.iter().map(|&m| usize::from(m)).sum()
    }
}

/// Word-level vocabulary fitted on training text, for encoders trained from
/// scratch where no published tokenizer applies.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WordVocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl WordVocabulary {
    pub const PAD: u32 = 0;
    pub const UNK: u32 = 1;
    pub const CLS: u32 = 2;
    pub const SEP: u32 = 3;
    const SPECIALS: [&'static str; 4] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]"];

    /// Collects every word occurring at least `min_count` times, in sorted order.
    pub fn fit<'a>(texts: impl IntoIterator<Item = &'a CleanText>, min_count: usize) -> Self {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for t in texts {
            for w in t.words() {
                *counts.entry(w).or_default() += 1;
            }
        }
        let words: BTreeSet<&str> = counts
            .into_iter()
            .filter(|&(_, c)| c >= min_count.max(1))
            .map(|(w, _)| w)
            .collect();
        let tokens = Self::SPECIALS
            .iter()
            .copied()
            .chain(words)
            .map(String::from)
            .collect();
        Self::from_tokens(tokens)
    }

    fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens.iter().cloned().zip(0u32..).collect();
        Self { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= Self::SPECIALS.len()
    }

    pub fn id(&self, word: &str) -> u32 {
        self.index.get(word).copied().unwrap_or(Self::UNK)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.tokens)?)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let tokens: Vec<String> = serde_json::from_str(json)?;
        if tokens.len() < Self::SPECIALS.len() || tokens[..4] != Self::SPECIALS {
            return Err(Error::Load("word vocabulary lacks the special tokens".into()));
        }
        Ok(Self::from_tokens(tokens))
    }
}

/// Tokenizer front-end shared by every text encoder.
#[derive(Debug, Clone)]
pub enum TextTokenizer {
    /// A published tokenizer (`tokenizer.json` or a WordPiece `vocab.txt`).
    Pretrained {
        inner: Box<tokenizers::Tokenizer>,
        cls: u32,
        sep: u32,
        pad: u32,
    },
    Word(WordVocabulary),
}

fn tok_err(e: impl std::fmt::Display) -> Error {
    Error::Config(format!("tokenizer: {e}"))
}

impl TextTokenizer {
    /// Loads the published tokenizer assets from a checkpoint directory.
    pub fn from_pretrained_dir(dir: &Path) -> Result<Self> {
        let json = dir.join("tokenizer.json");
        let vocab = dir.join("vocab.txt");
        let mut inner = if json.is_file() {
            tokenizers::Tokenizer::from_file(&json).map_err(tok_err)?
        } else if vocab.is_file() {
            let model = tokenizers::models::wordpiece::WordPiece::from_file(&vocab.to_string_lossy())
                .build()
                .map_err(tok_err)?;
            let mut t = tokenizers::Tokenizer::new(model);
            t.with_normalizer(Some(tokenizers::normalizers::BertNormalizer::default()))
                .map_err(tok_err)?;
            t.with_pre_tokenizer(Some(tokenizers::pre_tokenizers::bert::BertPreTokenizer));
            t
        } else {
            return Err(Error::Config(format!(
                "no tokenizer.json or vocab.txt in {}",
                dir.display()
            )));
        };
        inner.with_truncation(None).map_err(tok_err)?;
        inner.with_padding(None);
        let special = |name: &str| {
            inner
                .token_to_id(name)
                .ok_or_else(|| Error::Config(format!("tokenizer lacks special token {name}")))
        };
        let (cls, sep, pad) = (special("[CLS]")?, special("[SEP]")?, special("[PAD]")?);
        Ok(Self::Pretrained {
            inner: Box::new(inner),
            cls,
            sep,
            pad,
        })
    }

    pub fn vocab_size(&self) -> usize {
        match self {
            Self::Pretrained { inner, .. } => inner.get_vocab_size(true),
            Self::Word(v) => v.len(),
        }
    }

    pub fn pad_id(&self) -> u32 {
        match self {
            Self::Pretrained { pad, .. } => *pad,
            Self::Word(_) => WordVocabulary::PAD,
        }
    }

    fn content_ids(&self, text: &CleanText) -> Result<Vec<u32>> {
        match self {
            Self::Pretrained { inner, .. } => Ok(inner
                .encode(text.as_str(), false)
                .map_err(tok_err)?
                .get_ids()
                .to_vec()),
            Self::Word(v) => Ok(text.words().map(|w| v.id(w)).collect()),
        }
    }

    /// `[CLS] tokens [SEP]`, truncated to the position cap and padded up to it.
    pub fn tokenize(&self, text: &CleanText) -> Result<TokenSequence> {
        let (cls, sep) = match self {
            Self::Pretrained { cls, sep, .. } => (*cls, *sep),
            Self::Word(_) => (WordVocabulary::CLS, WordVocabulary::SEP),
        };
        let mut content = self.content_ids(text)?;
        let cap = MAX_POSITIONS - 2;
        let truncated = content.len() > cap;
        content.truncate(cap);

        let mut token_ids = Vec::with_capacity(MAX_POSITIONS);
        token_ids.push(cls);
        token_ids.extend_from_slice(&content);
        token_ids.push(sep);
        let mut attention_mask = vec![1u8; token_ids.len()];
        token_ids.resize(MAX_POSITIONS, self.pad_id());
        attention_mask.resize(MAX_POSITIONS, 0);
        Ok(TokenSequence {
            token_ids,
            attention_mask,
            truncated,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocess::clean_text;

    fn word_tokenizer() -> TextTokenizer {
        let corpus = [clean_text("the quick brown fox"), clean_text("the lazy dog")];
        TextTokenizer::Word(WordVocabulary::fit(&corpus, 1))
    }

    #[test]
    fn long_text_is_truncated_to_cap() {
        let text = clean_text(&vec!["fox"; 500].join(" "));
        let seq = word_tokenizer().tokenize(&text).unwrap();
        assert_eq!(seq.len(), MAX_POSITIONS);
        assert_eq!(seq.real_len(), MAX_POSITIONS);
        assert!(seq.truncated);
        assert_eq!(seq.token_ids[MAX_POSITIONS - 1], WordVocabulary::SEP);
    }

    #[test]
    fn empty_text_has_only_boundaries() {
        let seq = word_tokenizer().tokenize(&clean_text("")).unwrap();
        assert_eq!(seq.real_len(), 2);
        assert_eq!(&seq.token_ids[..2], &[WordVocabulary::CLS, WordVocabulary::SEP]);
        assert!(!seq.truncated);
        assert!(seq.token_ids[2..].iter().all(|&t| t == WordVocabulary::PAD));
    }

    #[test]
    fn unknown_words_map_to_unk() {
        let seq = word_tokenizer().tokenize(&clean_text("the zebra")).unwrap();
        assert_eq!(seq.token_ids[2], WordVocabulary::UNK);
        assert_ne!(seq.token_ids[1], WordVocabulary::UNK);
    }

    #[test]
    fn vocabulary_json_round_trip() {
        let TextTokenizer::Word(v) = word_tokenizer() else { unreachable!() };
        let back = WordVocabulary::from_json(&v.to_json().unwrap()).unwrap();
        assert_eq!(back.id("fox"), v.id("fox"));
        assert_eq!(back.len(), v.len());
        assert!(WordVocabulary::from_json("[\"a\"]").is_err());
    }

    #[test]
    fn missing_assets_is_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let err = TextTokenizer::from_pretrained_dir(dir.path()).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn wordpiece_vocab_file_is_supported() {
        let dir = tempfile::tempdir().unwrap();
        let vocab = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "hello", "world", "##s"];
        std::fs::write(dir.path().join("vocab.txt"), vocab.join("\n")).unwrap();
        let tok = TextTokenizer::from_pretrained_dir(dir.path()).unwrap();
        let seq = tok.tokenize(&clean_text("hello worlds")).unwrap();
        assert_eq!(&seq.token_ids[..5], &[2, 4, 5, 6, 3]);
        assert_eq!(seq.real_len(), 5);
    }

    proptest::proptest! {
        #[test]
        fn ids_and_mask_align(words in proptest::collection::vec("[a-z]{1,6}", 0..400)) {
            let seq = word_tokenizer().tokenize(&clean_text(&words.join(" "))).unwrap();
            proptest::prop_assert_eq!(seq.token_ids.len(), seq.attention_mask.len());
            proptest::prop_assert_eq!(seq.len(), MAX_POSITIONS);
            proptest::prop_assert_eq!(seq.real_len(), (words.len() + 2).min(MAX_POSITIONS));
            for (id, m) in seq.token_ids.iter().zip(&seq.attention_mask) {
                if *m == 0 {
                    proptest::prop_assert_eq!(*id, WordVocabulary::PAD);
                }
            }
        }
    }
}
