use std::collections::HashMap;
use std::io::BufRead;

use crate::error::{Error, Result};

use super::tokenize::tokenize;
use super::Vocabulary;

/// One row of a news table before tokenization.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawNews {
    pub news_id: String,
    pub category: String,
    pub subcategory: String,
    pub title: String,
    pub abstract_text: String,
    /// Precomputed generated title, when the table carries one.
    pub generated_title: Option<String>,
}

/// Column index of the optional generated-title column.
pub const GENERATED_TITLE_COLUMN: usize = 8;

/// Reads a tab-separated news table.
///
/// Columns are `news_id, category, subcategory, title, abstract, url,
/// title_entities, abstract_entities[, generated_title]`. Only the first five
/// are required; the generated title is read when `with_generated_title` is
/// set and the column is present and non-empty. Blank lines are skipped.
pub fn parse_news_table<R: BufRead>(reader: R, with_generated_title: bool) -> Result<Vec<RawNews>> {
    let mut out = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() < 5 {
            return Err(Error::Parse {
                line: line_no,
                reason: format!(
                    "expected at least 5 tab-separated columns, found {}",
                    cols.len()
                ),
            });
        }
        let news_id = cols[0].trim();
        if news_id.is_empty() {
            return Err(Error::Parse {
                line: line_no,
                reason: "empty news id".into(),
            });
        }
        if seen.insert(news_id.to_string(), line_no).is_some() {
            return Err(Error::DuplicateId(news_id.to_string()));
        }
        let generated_title = if with_generated_title {
            cols.get(GENERATED_TITLE_COLUMN)
                .map(|s| s.trim())
                .filter(|s| !s.is_empty())
                .map(str::to_string)
        } else {
            None
        };
        out.push(RawNews {
            news_id: news_id.to_string(),
            category: cols[1].trim().to_string(),
            subcategory: cols[2].trim().to_string(),
            title: cols[3].to_string(),
            abstract_text: cols[4].to_string(),
            generated_title,
        });
    }
    Ok(out)
}

/// Inverse of [`parse_news_table`]; url and entity columns are left empty.
pub fn write_news_table(news: &[RawNews]) -> String {
    let mut out = String::new();
    for n in news {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t\t\t",
            n.news_id, n.category, n.subcategory, n.title, n.abstract_text
        ));
        if let Some(g) = &n.generated_title {
            out.push('\t');
            out.push_str(g);
        }
        out.push('\n');
    }
    out
}

/// Category prompt: `"<category> about <subcategory>"`, or the category alone
/// when there is no subcategory.
pub fn build_prompt(category: &str, subcategory: &str) -> Result<String> {
    if category.is_empty() {
        return Err(Error::contract("category must not be empty"));
    }
    if subcategory.is_empty() {
        Ok(category.to_string())
    } else {
        Ok(format!("{category} about {subcategory}"))
    }
}

/// Maximum token counts per field.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FieldLengths {
    pub cats: usize,
    pub title: usize,
    pub gen_title: usize,
    pub abstract_len: usize,
}

impl Default for FieldLengths {
    fn default() -> Self {
        FieldLengths {
            cats: 10,
            title: 20,
            gen_title: 25,
            abstract_len: 50,
        }
    }
}

/// A tokenized news item.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NewsArticle {
    pub news_id: String,
    pub category: String,
    pub subcategory: String,
    pub cats_tokens: Vec<u32>,
    pub title_tokens: Vec<u32>,
    pub abstract_tokens: Vec<u32>,
    pub gen_title_tokens: Vec<u32>,
}

impl NewsArticle {
    /// Tokenizes every field.
    ///
    /// An empty abstract falls back to the title, and the generated title
    /// falls back to the first `gen_title` abstract tokens.
    pub fn from_raw(raw: &RawNews, vocab: &Vocabulary, lengths: &FieldLengths) -> Result<Self> {
        let prompt = build_prompt(&raw.category, &raw.subcategory)?;
        let title_tokens = tokenize(&raw.title, lengths.title, vocab);
        let abstract_source = if raw.abstract_text.trim().is_empty() {
            raw.title.as_str()
        } else {
            raw.abstract_text.as_str()
        };
        let mut abstract_tokens = tokenize(abstract_source, lengths.abstract_len, vocab);
        if abstract_tokens.is_empty() {
            abstract_tokens = title_tokens.clone();
        }
        let mut gen_title_tokens = raw
            .generated_title
            .as_deref()
            .map(|g| tokenize(g, lengths.gen_title, vocab))
            .unwrap_or_default();
        if gen_title_tokens.is_empty() {
            gen_title_tokens = tokenize(abstract_source, lengths.gen_title, vocab);
        }
        Ok(NewsArticle {
            news_id: raw.news_id.clone(),
            category: raw.category.clone(),
            subcategory: raw.subcategory.clone(),
            cats_tokens: tokenize(&prompt, lengths.cats, vocab),
            title_tokens,
            abstract_tokens,
            gen_title_tokens,
        })
    }
}

/// Tokenized news with lookup by id.
#[derive(Debug, Clone, Default)]
pub struct NewsTable {
    articles: Vec<NewsArticle>,
    index: HashMap<String, usize>,
}

impl NewsTable {
    pub fn build(raw: &[RawNews], vocab: &Vocabulary, lengths: &FieldLengths) -> Result<Self> {
        let mut table = NewsTable::default();
        for r in raw {
            table.push(NewsArticle::from_raw(r, vocab, lengths)?)?;
        }
        Ok(table)
    }

    pub fn push(&mut self, article: NewsArticle) -> Result<usize> {
        if self.index.contains_key(&article.news_id) {
            return Err(Error::DuplicateId(article.news_id));
        }
        let idx = self.articles.len();
        self.index.insert(article.news_id.clone(), idx);
        self.articles.push(article);
        Ok(idx)
    }

    pub fn get(&self, idx: usize) -> &NewsArticle {
        &self.articles[idx]
    }

    pub fn position(&self, news_id: &str) -> Option<usize> {
        self.index.get(news_id).copied()
    }

    pub fn resolve(&self, news_id: &str) -> Result<usize> {
        self.position(news_id)
            .ok_or_else(|| Error::UnknownNews(news_id.to_string()))
    }

    pub fn articles(&self) -> &[NewsArticle] {
        &self.articles
    }

    pub fn len(&self) -> usize {
        self.articles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.articles.is_empty()
    }
}
