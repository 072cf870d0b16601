use std::collections::HashMap;

use crate::error::{Error, Result};

use super::{NewsArticle, NewsTable, TrainingSample, PAD_ID};

/// Which text stands in for the abstract field.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AbstractView {
    /// Generated title (the truncated abstract unless precomputed).
    GeneratedTitle,
    /// Raw abstract at full abstract length.
    RawAbstract,
    /// No abstract field; news are merged from category prompt and title.
    Absent,
}

impl AbstractView {
    pub fn tokens<'a>(&self, article: &'a NewsArticle) -> Option<&'a [u32]> {
        match self {
            AbstractView::GeneratedTitle => Some(&article.gen_title_tokens),
            AbstractView::RawAbstract => Some(&article.abstract_tokens),
            AbstractView::Absent => None,
        }
    }
}

/// Token ids of several sequences padded to a common width.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PaddedTokens {
    pub ids: Vec<u32>,
    pub width: usize,
}

impl PaddedTokens {
    pub fn from_rows<'a>(rows: impl IntoIterator<Item = &'a [u32]>, pad_id: u32) -> Self {
        let rows: Vec<&[u32]> = rows.into_iter().collect();
        let width = rows.iter().map(|r| r.len()).max().unwrap_or(0).max(1);
        let mut ids = Vec::with_capacity(rows.len() * width);
        for r in rows {
            ids.extend_from_slice(r);
            ids.extend(std::iter::repeat_n(pad_id, width - r.len()));
        }
        PaddedTokens { ids, width }
    }

    pub fn rows(&self) -> usize {
        self.ids.len() / self.width
    }

    pub fn row(&self, i: usize) -> &[u32] {
        &self.ids[i * self.width..(i + 1) * self.width]
    }

    /// `true` at every non-padding position.
    pub fn mask(&self) -> Vec<bool> {
        self.ids.iter().map(|&t| t != PAD_ID).collect()
    }
}

/// Token arrays of one set of news, one row per news.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldTokens {
    pub cats: PaddedTokens,
    pub title: PaddedTokens,
    pub abs: Option<PaddedTokens>,
}

impl FieldTokens {
    pub fn gather(news: &NewsTable, rows: &[usize], view: AbstractView, pad_id: u32) -> Self {
        let arts: Vec<&NewsArticle> = rows.iter().map(|&i| news.get(i)).collect();
        FieldTokens {
            cats: PaddedTokens::from_rows(arts.iter().map(|a| a.cats_tokens.as_slice()), pad_id),
            title: PaddedTokens::from_rows(arts.iter().map(|a| a.title_tokens.as_slice()), pad_id),
            abs: match view {
                AbstractView::Absent => None,
                _ => Some(PaddedTokens::from_rows(
                    arts.iter().map(|a| view.tokens(a).unwrap_or(&[])),
                    pad_id,
                )),
            },
        }
    }
}

/// One distinct user history in a batch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserSlot {
    pub impression: usize,
    /// Pool positions of the history, padded to the batch's longest history.
    pub history: Vec<usize>,
    pub mask: Vec<bool>,
    /// Pool positions of every news this impression contributes to the batch.
    pub news: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleSlot {
    pub user: usize,
    /// Pool positions of the positive followed by its negatives.
    pub candidates: Vec<usize>,
}

/// A batch of training samples over a deduplicated pool of news.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    /// News-table positions, each news once, in first-appearance order.
    pub pool: Vec<usize>,
    pub fields: FieldTokens,
    pub users: Vec<UserSlot>,
    pub samples: Vec<SampleSlot>,
}

impl Batch {
    pub fn history_mask(&self) -> Vec<Vec<bool>> {
        self.users.iter().map(|u| u.mask.clone()).collect()
    }

    /// Pool positions that appear as some sample's candidate.
    pub fn candidate_positions(&self) -> Vec<usize> {
        let mut seen = vec![false; self.pool.len()];
        let mut out = Vec::new();
        for s in &self.samples {
            for &c in &s.candidates {
                if !seen[c] {
                    seen[c] = true;
                    out.push(c);
                }
            }
        }
        out
    }
}

/// Lays out `samples` for one forward pass.
pub fn assemble_batch(
    samples: &[TrainingSample],
    news: &NewsTable,
    view: AbstractView,
    pad_id: u32,
) -> Result<Batch> {
    if samples.is_empty() {
        return Err(Error::contract("cannot assemble an empty batch"));
    }
    let mut pool = Vec::new();
    let mut pos: HashMap<usize, usize> = HashMap::new();
    let mut intern = |n: usize, pool: &mut Vec<usize>| -> usize {
        *pos.entry(n).or_insert_with(|| {
            pool.push(n);
            pool.len() - 1
        })
    };

    let mut users: Vec<UserSlot> = Vec::new();
    let mut user_of: HashMap<usize, usize> = HashMap::new();
    let mut slots = Vec::with_capacity(samples.len());
    for s in samples {
        let u = match user_of.get(&s.impression) {
            Some(&u) => u,
            None => {
                let history: Vec<usize> = s.history.iter().map(|&n| intern(n, &mut pool)).collect();
                users.push(UserSlot {
                    impression: s.impression,
                    mask: vec![true; history.len()],
                    news: history.clone(),
                    history,
                });
                user_of.insert(s.impression, users.len() - 1);
                users.len() - 1
            }
        };
        let candidates: Vec<usize> = std::iter::once(s.positive)
            .chain(s.negatives.iter().copied())
            .map(|n| intern(n, &mut pool))
            .collect();
        let slot = &mut users[u];
        for &c in &candidates {
            if !slot.news.contains(&c) {
                slot.news.push(c);
            }
        }
        slots.push(SampleSlot {
            user: u,
            candidates,
        });
    }

    let longest = users.iter().map(|u| u.history.len()).max().unwrap_or(0);
    for u in &mut users {
        let real = u.history.len();
        u.history.resize(longest, 0);
        u.mask.resize(longest, false);
        debug_assert_eq!(u.mask.iter().filter(|&&m| m).count(), real);
    }

    let fields = FieldTokens::gather(news, &pool, view, pad_id);
    Ok(Batch {
        pool,
        fields,
        users,
        samples: slots,
    })
}
