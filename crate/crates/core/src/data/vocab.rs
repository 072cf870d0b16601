use std::collections::HashMap;

use crate::error::{Error, Result};

use super::news::{build_prompt, RawNews};
use super::tokenize::words;

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;

const PAD_TOKEN: &str = "<pad>";
const UNK_TOKEN: &str = "<unk>";

/// Token ↔ id map. Ids 0 and 1 are reserved for padding and unknown words.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    index: HashMap<String, u32>,
    tokens: Vec<String>,
}

impl Vocabulary {
    /// Builds a vocabulary from raw texts.
    ///
    /// Words seen at least `min_freq` times are kept, ordered by descending
    /// frequency then ascending token; `cap` bounds the total size including
    /// the two reserved ids.
    pub fn from_texts<'a>(
        texts: impl IntoIterator<Item = &'a str>,
        min_freq: usize,
        cap: Option<usize>,
    ) -> Result<Self> {
        if min_freq == 0 {
            return Err(Error::contract("min_freq must be positive"));
        }
        let mut counts: HashMap<String, usize> = HashMap::new();
        let mut seen_text = false;
        for text in texts {
            seen_text = true;
            for w in words(text) {
                *counts.entry(w).or_default() += 1;
            }
        }
        if !seen_text {
            return Err(Error::contract(
                "cannot build a vocabulary from an empty corpus",
            ));
        }
        let mut ranked: Vec<(String, usize)> =
            counts.into_iter().filter(|(_, c)| *c >= min_freq).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        if let Some(cap) = cap {
            ranked.truncate(cap.saturating_sub(2));
        }
        Ok(Self::from_tokens(ranked.into_iter().map(|(w, _)| w)))
    }

    /// Vocabulary with the given non-reserved tokens at ids 2, 3, ...
    pub fn from_tokens(tokens: impl IntoIterator<Item = String>) -> Self {
        let mut all = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
        all.extend(tokens);
        let index = all
            .iter()
            .enumerate()
            .skip(2)
            .map(|(i, w)| (w.clone(), i as u32))
            .collect();
        Vocabulary { index, tokens: all }
    }

    pub fn lookup(&self, word: &str) -> u32 {
        self.index.get(word).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    /// Total size including the reserved ids.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= 2
    }

    /// Non-reserved tokens in id order.
    pub fn words(&self) -> &[String] {
        &self.tokens[2..]
    }
}

/// Vocabulary over every title, abstract, generated title, and category
/// prompt of `news`.
pub fn build_vocabulary(
    news: &[RawNews],
    min_freq: usize,
    cap: Option<usize>,
) -> Result<Vocabulary> {
    if news.is_empty() {
        return Err(Error::contract("news table is empty"));
    }
    let prompts: Vec<String> = news
        .iter()
        .map(|n| build_prompt(&n.category, &n.subcategory).unwrap_or_default())
        .collect();
    let texts = news
        .iter()
        .flat_map(|n| {
            [
                n.title.as_str(),
                n.abstract_text.as_str(),
                n.generated_title.as_deref().unwrap_or(""),
            ]
        })
        .chain(prompts.iter().map(String::as_str));
    Vocabulary::from_texts(texts, min_freq, cap)
}
