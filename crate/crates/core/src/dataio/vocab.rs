//! Word-level vocabulary and tokenizer.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

pub const PAD: usize = 0;
pub const SOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
const SPECIALS: [&str; 4] = ["<pad>", "<sos>", "<eos>", "<unk>"];

/// Token to id map; ids are dense from zero with the four specials first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vocab {
    words: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

/// Lowercases and splits on anything that is not alphanumeric.
pub fn words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
}

impl Vocab {
    /// Builds a vocabulary from every word in `texts`, sorted.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let set: BTreeSet<String> = texts.into_iter().flat_map(words).collect();
        Self::from_words(set.into_iter().collect())
    }

    /// `words` excludes the specials; they are prepended here.
    pub fn from_words(words: Vec<String>) -> Self {
        let mut all: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        all.extend(words.into_iter().filter(|w| !SPECIALS.contains(&w.as_str())));
        let index = all.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Self { words: all, index }
    }

    /// Vocabulary words without the specials.
    pub fn plain_words(&self) -> &[String] {
        &self.words[SPECIALS.len()..]
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> usize {
        if self.index.is_empty() && !self.words.is_empty() {
            // Deserialized without the index; linear fallback.
            return self.words.iter().position(|w| w == word).unwrap_or(UNK);
        }
        self.index.get(word).copied().unwrap_or(UNK)
    }

    pub fn word(&self, id: usize) -> Option<&str> {
        self.words.get(id).map(String::as_str)
    }

    /// `SOS word* EOS PAD*`, exactly `context` ids. Over-long captions are cut
    /// so that EOS always survives.
    pub fn tokenize(&self, caption: &str, context: usize) -> Vec<usize> {
        assert!(context >= 2, "context must hold SOS and EOS");
        let mut ids = vec![SOS];
        ids.extend(words(caption).take(context - 2).map(|w| self.id(&w)));
        ids.push(EOS);
        ids.resize(context, PAD);
        ids
    }

    /// Inverse of [`Vocab::tokenize`] for in-vocabulary words; specials dropped.
    pub fn detokenize(&self, ids: &[usize]) -> String {
        ids.iter()
            .take_while(|&&i| i != EOS)
            .filter(|&&i| i >= SPECIALS.len())
            .filter_map(|&i| self.word(i))
            .collect::<Vec<_>>()
            .join(" ")
    }
}
