//! Synthetic news corpora with controllable clickbait.
//!
//! Every news item has a latent topic. Its abstract is drawn from that
//! topic's words mixed with topic-neutral filler. Its title is drawn from the
//! same topic, except that with probability `clickbait_rate` the title is
//! written about a different topic instead. Users prefer one topic and click
//! exactly the candidates whose *abstract* topic matches it, so a corrupted
//! title is a misleading signal about whether a user will click.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::{write_behaviors, write_news_table, ImpressionLog, RawNews};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_users: usize,
    pub n_news: usize,
    pub n_topics: usize,
    pub clickbait_rate: f64,
    pub seed: u64,
    pub words_per_topic: usize,
    pub filler_words: usize,
    pub title_words: usize,
    pub abstract_words: usize,
    /// Share of abstract words drawn from the news topic rather than filler.
    pub abstract_topic_share: f64,
    /// Length of an extractive generated title built from the abstract's
    /// topic words; 0 leaves the generated-title column empty.
    pub summary_words: usize,
    pub n_categories: usize,
    pub impressions_per_user: usize,
    pub history_len: usize,
    pub clicks_per_impression: usize,
    pub skips_per_impression: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_users: 50,
            n_news: 200,
            n_topics: 4,
            clickbait_rate: 0.0,
            seed: 0,
            words_per_topic: 30,
            filler_words: 40,
            title_words: 6,
            abstract_words: 30,
            abstract_topic_share: 0.5,
            summary_words: 0,
            n_categories: 5,
            impressions_per_user: 2,
            history_len: 10,
            clicks_per_impression: 2,
            skips_per_impression: 8,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.clickbait_rate) {
            return Err(Error::contract(format!(
                "clickbait rate {} outside [0, 1]",
                self.clickbait_rate
            )));
        }
        if !(0.0..=1.0).contains(&self.abstract_topic_share) {
            return Err(Error::contract("abstract topic share outside [0, 1]"));
        }
        let counts = [
            ("n_users", self.n_users),
            ("n_news", self.n_news),
            ("n_topics", self.n_topics),
            ("words_per_topic", self.words_per_topic),
            ("filler_words", self.filler_words),
            ("title_words", self.title_words),
            ("abstract_words", self.abstract_words),
            ("n_categories", self.n_categories),
            ("impressions_per_user", self.impressions_per_user),
            ("clicks_per_impression", self.clicks_per_impression),
            ("skips_per_impression", self.skips_per_impression),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::contract(format!("{name} must be positive")));
        }
        if self.clickbait_rate > 0.0 && self.n_topics < 2 {
            return Err(Error::contract("clickbait needs at least two topics"));
        }
        if self.n_topics > 1 && self.n_news < 2 * self.n_topics {
            return Err(Error::contract("need at least two news per topic"));
        }
        Ok(())
    }
}

/// Keys accepted by [`SynthConfig::set`], in [`SynthConfig::to_text`] order.
pub const SYNTH_KEYS: [&str; 16] = [
    "n-users",
    "n-news",
    "n-topics",
    "clickbait-rate",
    "seed",
    "words-per-topic",
    "filler-words",
    "title-words",
    "abstract-words",
    "abstract-topic-share",
    "summary-words",
    "n-categories",
    "impressions-per-user",
    "history-len",
    "clicks-per-impression",
    "skips-per-impression",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::config(format!("{key}: cannot parse {value:?}")))
}

impl SynthConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "n-users" => self.n_users = parse(key, value)?,
            "n-news" => self.n_news = parse(key, value)?,
            "n-topics" => self.n_topics = parse(key, value)?,
            "clickbait-rate" => self.clickbait_rate = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "words-per-topic" => self.words_per_topic = parse(key, value)?,
            "filler-words" => self.filler_words = parse(key, value)?,
            "title-words" => self.title_words = parse(key, value)?,
            "abstract-words" => self.abstract_words = parse(key, value)?,
            "abstract-topic-share" => self.abstract_topic_share = parse(key, value)?,
            "summary-words" => self.summary_words = parse(key, value)?,
            "n-categories" => self.n_categories = parse(key, value)?,
            "impressions-per-user" => self.impressions_per_user = parse(key, value)?,
            "history-len" => self.history_len = parse(key, value)?,
            "clicks-per-impression" => self.clicks_per_impression = parse(key, value)?,
            "skips-per-impression" => self.skips_per_impression = parse(key, value)?,
            _ => return Err(Error::config(format!("unknown synth key {key:?}"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "n-users" => self.n_users.to_string(),
            "n-news" => self.n_news.to_string(),
            "n-topics" => self.n_topics.to_string(),
            "clickbait-rate" => self.clickbait_rate.to_string(),
            "seed" => self.seed.to_string(),
            "words-per-topic" => self.words_per_topic.to_string(),
            "filler-words" => self.filler_words.to_string(),
            "title-words" => self.title_words.to_string(),
            "abstract-words" => self.abstract_words.to_string(),
            "abstract-topic-share" => self.abstract_topic_share.to_string(),
            "summary-words" => self.summary_words.to_string(),
            "n-categories" => self.n_categories.to_string(),
            "impressions-per-user" => self.impressions_per_user.to_string(),
            "history-len" => self.history_len.to_string(),
            "clicks-per-impression" => self.clicks_per_impression.to_string(),
            "skips-per-impression" => self.skips_per_impression.to_string(),
            _ => return None,
        })
    }

    /// Applies `key=value` lines; blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                reason: format!("expected key=value, got {line:?}"),
            })?;
            self.set(k.trim(), v).map_err(|e| Error::Parse {
                line: i + 1,
                reason: e.to_string(),
            })?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        SYNTH_KEYS
            .iter()
            .map(|k| format!("{k}={}\n", self.get(k).expect("listed key")))
            .collect()
    }
}

/// Generated corpus plus the ground truth behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub config: SynthConfig,
    pub news: Vec<RawNews>,
    pub behaviors: Vec<ImpressionLog>,
    /// Topic of each news abstract, aligned with `news`.
    pub abstract_topics: Vec<usize>,
    /// Topic each title was written about, aligned with `news`.
    pub title_topics: Vec<usize>,
    pub user_topics: Vec<usize>,
}

impl SyntheticCorpus {
    /// Ids of news whose title was rewritten to another topic.
    pub fn clickbait_ids(&self) -> BTreeSet<String> {
        self.news
            .iter()
            .zip(self.abstract_topics.iter().zip(&self.title_topics))
            .filter(|(_, (a, t))| a != t)
            .map(|(n, _)| n.news_id.clone())
            .collect()
    }

    pub fn news_tsv(&self) -> String {
        write_news_table(&self.news)
    }

    pub fn behaviors_tsv(&self) -> String {
        write_behaviors(&self.behaviors)
    }

    /// `key=value` sidecar recording how the corpus was generated.
    pub fn provenance(&self) -> String {
        let c = &self.config;
        let mut out = String::from("generator=tdnr-synth\n");
        let fields: [(&str, String); 16] = [
            ("seed", c.seed.to_string()),
            ("n_users", c.n_users.to_string()),
            ("n_news", c.n_news.to_string()),
            ("n_topics", c.n_topics.to_string()),
            ("clickbait_rate", c.clickbait_rate.to_string()),
            ("words_per_topic", c.words_per_topic.to_string()),
            ("filler_words", c.filler_words.to_string()),
            ("title_words", c.title_words.to_string()),
            ("abstract_words", c.abstract_words.to_string()),
            ("abstract_topic_share", c.abstract_topic_share.to_string()),
            ("summary_words", c.summary_words.to_string()),
            ("n_categories", c.n_categories.to_string()),
            ("impressions_per_user", c.impressions_per_user.to_string()),
            ("history_len", c.history_len.to_string()),
            ("clicks_per_impression", c.clicks_per_impression.to_string()),
            ("skips_per_impression", c.skips_per_impression.to_string()),
        ];
        for (k, v) in fields {
            let _ = writeln!(out, "{k}={v}");
        }
        let bait: Vec<String> = self.clickbait_ids().into_iter().collect();
        let _ = writeln!(out, "clickbait_ids={}", bait.join(" "));
        out
    }
}

fn topic_word(topic: usize, k: usize) -> String {
    format!("topic{topic}word{k}")
}

fn filler_word(k: usize) -> String {
    format!("filler{k}")
}

fn sentence(words: &[String]) -> String {
    let mut s = words.join(" ");
    if let Some(first) = s.get_mut(0..1) {
        first.make_ascii_uppercase();
    }
    s
}

/// Builds a corpus deterministically from `config.seed`.
pub fn generate_synthetic_corpus(config: &SynthConfig) -> Result<SyntheticCorpus> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let c = config;

    let mut news = Vec::with_capacity(c.n_news);
    let mut abstract_topics = Vec::with_capacity(c.n_news);
    let mut title_topics = Vec::with_capacity(c.n_news);
    for i in 0..c.n_news {
        // Round-robin keeps every topic populated.
        let topic = i % c.n_topics;
        let title_topic = if rng.gen_bool(c.clickbait_rate) {
            let shift = rng.gen_range(1..c.n_topics);
            (topic + shift) % c.n_topics
        } else {
            topic
        };
        let title: Vec<String> = (0..c.title_words)
            .map(|_| topic_word(title_topic, rng.gen_range(0..c.words_per_topic)))
            .collect();
        let abstract_words: Vec<String> = (0..c.abstract_words)
            .map(|_| {
                if rng.gen_bool(c.abstract_topic_share) {
                    topic_word(topic, rng.gen_range(0..c.words_per_topic))
                } else {
                    filler_word(rng.gen_range(0..c.filler_words))
                }
            })
            .collect();
        let summary: Vec<String> = abstract_words
            .iter()
            .filter(|w| w.starts_with("topic"))
            .take(c.summary_words)
            .cloned()
            .collect();
        let category = rng.gen_range(0..c.n_categories);
        news.push(RawNews {
            news_id: format!("N{}", i + 1),
            category: format!("section{category}"),
            subcategory: format!("desk{}", rng.gen_range(0..c.n_categories)),
            title: sentence(&title),
            abstract_text: sentence(&abstract_words) + ".",
            generated_title: (!summary.is_empty()).then(|| sentence(&summary)),
        });
        abstract_topics.push(topic);
        title_topics.push(title_topic);
    }

    let by_topic: Vec<Vec<usize>> = (0..c.n_topics)
        .map(|t| (0..c.n_news).filter(|&i| abstract_topics[i] == t).collect())
        .collect();

    let mut user_topics = Vec::with_capacity(c.n_users);
    let mut behaviors = Vec::new();
    for u in 0..c.n_users {
        let topic = rng.gen_range(0..c.n_topics);
        user_topics.push(topic);
        let liked = &by_topic[topic];
        let others: Vec<usize> = (0..c.n_news)
            .filter(|&i| abstract_topics[i] != topic)
            .collect();
        let history: Vec<usize> = liked
            .choose_multiple(&mut rng, c.history_len.min(liked.len()))
            .copied()
            .collect();
        for k in 0..c.impressions_per_user {
            let fresh: Vec<usize> = liked
                .iter()
                .copied()
                .filter(|i| !history.contains(i))
                .collect();
            let click_pool = if fresh.is_empty() { liked } else { &fresh };
            let mut cands: Vec<(usize, bool)> = click_pool
                .choose_multiple(&mut rng, c.clicks_per_impression.min(click_pool.len()))
                .map(|&i| (i, true))
                .collect();
            if !others.is_empty() {
                cands.extend(
                    others
                        .choose_multiple(&mut rng, c.skips_per_impression.min(others.len()))
                        .map(|&i| (i, false)),
                );
            }
            cands.shuffle(&mut rng);
            let minute = (u * c.impressions_per_user + k) % 60;
            behaviors.push(ImpressionLog {
                impression_id: (behaviors.len() + 1).to_string(),
                user_id: format!("U{}", u + 1),
                time: format!("11/15/2019 8:{minute:02}:22 AM"),
                history: history.iter().map(|&i| news[i].news_id.clone()).collect(),
                candidates: cands
                    .into_iter()
                    .map(|(i, l)| (news[i].news_id.clone(), l))
                    .collect(),
            });
        }
    }

    Ok(SyntheticCorpus {
        config: config.clone(),
        news,
        behaviors,
        abstract_topics,
        title_topics,
        user_topics,
    })
}
