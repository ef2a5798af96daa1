//! Synthetic cloze tasks with controllable evidence, distractors, unseen
//! answers and query-answer leakage.
//!
//! Every passage is a sequence of windows `left-context entity
//! right-context`, optionally separated by noise tokens. Exactly one window
//! holds the answer entity; its context shares `overlap` tokens (at the same
//! positions) with the query window. All other windows hold distractor
//! entities with context drawn from words outside the query window.

use std::collections::{BTreeSet, HashSet};

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    entity_set, ClozeInstance, CorpusError, Dataset, EmbeddingTable, EntitySpan, GAP_TOKEN,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    /// Number of distinct context words.
    pub vocab_size: usize,
    /// Entity strings available to training passages (and to distractors
    /// everywhere).
    pub entity_pool_size: usize,
    /// Entity strings that only ever appear as dev/test answers.
    pub unseen_pool_size: usize,
    /// Distinct entities per passage, answer included.
    pub entities_per_passage: usize,
    pub distractor_windows: usize,
    pub radius: usize,
    /// Context tokens shared between the query window and the answer window.
    pub overlap: usize,
    /// Probability that a dev/test answer comes from the unseen pool.
    pub unseen_rate: f64,
    /// Probability of a noise token between consecutive windows.
    pub noise_rate: f64,
    /// Probability that the query window carries a cue token determined by
    /// the answer entity.
    pub query_answer_correlation: f64,
    /// Filler tokens on each side of the query window.
    pub query_padding: usize,
    /// Dimension of the emitted random word vectors.
    pub embedding_dim: usize,
    pub seed: u64,
    pub train_size: usize,
    pub dev_size: usize,
    pub test_size: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            vocab_size: 2000,
            entity_pool_size: 300,
            unseen_pool_size: 300,
            entities_per_passage: 20,
            distractor_windows: 30,
            radius: 2,
            overlap: 3,
            unseen_rate: 0.0,
            noise_rate: 0.1,
            query_answer_correlation: 0.0,
            query_padding: 2,
            embedding_dim: 50,
            seed: 13,
            train_size: 2000,
            dev_size: 500,
            test_size: 500,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let bad =
            |field: &'static str, message: String| Err(CorpusError::Config { field, message });
        let positive = [
            ("vocab_size", self.vocab_size),
            ("entity_pool_size", self.entity_pool_size),
            ("entities_per_passage", self.entities_per_passage),
            ("radius", self.radius),
            ("embedding_dim", self.embedding_dim),
            ("train_size", self.train_size),
            ("dev_size", self.dev_size),
            ("test_size", self.test_size),
        ];
        for (field, v) in positive {
            if v == 0 {
                return bad(field, "must be positive".into());
            }
        }
        for (field, v) in [
            ("unseen_rate", self.unseen_rate),
            ("noise_rate", self.noise_rate),
            ("query_answer_correlation", self.query_answer_correlation),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(field, format!("{v} is not in [0, 1]"));
            }
        }
        if self.overlap > 2 * self.radius {
            return bad(
                "overlap",
                format!("{} exceeds 2·radius = {}", self.overlap, 2 * self.radius),
            );
        }
        let needed = 4 * self.radius + 1;
        if self.vocab_size < needed {
            return bad(
                "vocab_size",
                format!(
                    "{} words cannot keep query and distractor contexts distinct (need ≥ {needed})",
                    self.vocab_size
                ),
            );
        }
        if self.entities_per_passage > self.entity_pool_size {
            return bad(
                "entities_per_passage",
                format!(
                    "{} exceeds entity_pool_size {}",
                    self.entities_per_passage, self.entity_pool_size
                ),
            );
        }
        if self.distractor_windows > 0 && self.entities_per_passage < 2 {
            return bad(
                "entities_per_passage",
                "distractor windows need at least 2 entities per passage".into(),
            );
        }
        if self.unseen_rate > 0.0 && self.unseen_pool_size == 0 {
            return bad(
                "unseen_pool_size",
                "must be positive when unseen_rate > 0".into(),
            );
        }
        Ok(())
    }

    fn distinct_entities(&self) -> usize {
        self.entities_per_passage.min(self.distractor_windows + 1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceMeta {
    pub id: String,
    /// Index, in document order, of the window holding the answer.
    pub evidence_window: usize,
    pub answer: String,
    /// Answer never occurs as an entity in the training passages.
    pub unseen: bool,
    pub query_cue: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SplitMeta {
    pub instances: Vec<InstanceMeta>,
    pub unseen_count: usize,
    /// Distinct unseen answer strings, sorted.
    pub unseen_answers: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticMetadata {
    pub config: SyntheticConfig,
    pub train: SplitMeta,
    pub dev: SplitMeta,
    pub test: SplitMeta,
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub train: Dataset,
    pub dev: Dataset,
    pub test: Dataset,
    pub metadata: SyntheticMetadata,
    /// Random vectors for context words and cue tokens.
    pub embeddings: EmbeddingTable,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

fn word(i: usize) -> String {
    format!("w{i}")
}

fn entity(i: usize) -> String {
    format!("ent{i}")
}

fn cue(i: usize) -> String {
    format!("cue{i}")
}

struct Generator<'c> {
    cfg: &'c SyntheticConfig,
    rng: ChaCha8Rng,
}

impl Generator<'_> {
    fn word_outside(&mut self, exclude: &HashSet<usize>) -> usize {
        loop {
            let w = self.rng.gen_range(0..self.cfg.vocab_size);
            if !exclude.contains(&w) {
                return w;
            }
        }
    }

    fn instance(&mut self, split: Split, index: usize) -> (ClozeInstance, usize, bool) {
        let cfg = self.cfg;
        let b = cfg.radius;
        let pool = cfg.entity_pool_size;

        let query_ctx: Vec<usize> = sample(&mut self.rng, cfg.vocab_size, 2 * b).into_vec();
        let exclude: HashSet<usize> = query_ctx.iter().copied().collect();

        let from_unseen = split != Split::Train
            && cfg.unseen_rate > 0.0
            && self.rng.gen::<f64>() < cfg.unseen_rate;
        let answer = if from_unseen {
            pool + self.rng.gen_range(0..cfg.unseen_pool_size)
        } else {
            self.rng.gen_range(0..pool)
        };

        let n_other = cfg.distinct_entities() - 1;
        let mut others: Vec<usize> = sample(&mut self.rng, pool, (n_other + 1).min(pool))
            .into_iter()
            .filter(|&e| e != answer)
            .collect();
        others.truncate(n_other);
        let mut distractors: Vec<usize> = others.clone();
        while distractors.len() < cfg.distractor_windows {
            distractors.push(
                *others
                    .choose(&mut self.rng)
                    .expect("validated: ≥ 2 entities"),
            );
        }
        distractors.shuffle(&mut self.rng);
        let evidence = self.rng.gen_range(0..=cfg.distractor_windows);

        let shared: HashSet<usize> = sample(&mut self.rng, 2 * b, cfg.overlap)
            .into_iter()
            .collect();
        let answer_ctx: Vec<usize> = (0..2 * b)
            .map(|p| {
                if shared.contains(&p) {
                    query_ctx[p]
                } else {
                    self.word_outside(&exclude)
                }
            })
            .collect();

        let mut query_window: Vec<String> = query_ctx.iter().map(|&w| word(w)).collect();
        let with_cue = cfg.query_answer_correlation > 0.0
            && self.rng.gen::<f64>() < cfg.query_answer_correlation;
        if with_cue {
            let slot = (0..2 * b).find(|p| !shared.contains(p)).unwrap_or(0);
            query_window[slot] = cue(answer);
        }

        let mut passage: Vec<String> = Vec::new();
        let mut entities = Vec::new();
        let mut distractor_iter = distractors.into_iter();
        for w in 0..=cfg.distractor_windows {
            if w > 0 && cfg.noise_rate > 0.0 && self.rng.gen::<f64>() < cfg.noise_rate {
                let noise = self.word_outside(&exclude);
                passage.push(word(noise));
            }
            let (ent, ctx) = if w == evidence {
                (answer, answer_ctx.clone())
            } else {
                let ent = distractor_iter
                    .next()
                    .expect("one entity per distractor window");
                let ctx = (0..2 * b).map(|_| self.word_outside(&exclude)).collect();
                (ent, ctx)
            };
            passage.extend(ctx[..b].iter().map(|&t| word(t)));
            entities.push(EntitySpan::new(passage.len(), passage.len(), entity(ent)));
            passage.push(entity(ent));
            passage.extend(ctx[b..].iter().map(|&t| word(t)));
        }

        let mut query: Vec<String> = Vec::new();
        for _ in 0..cfg.query_padding {
            let t = self.word_outside(&exclude);
            query.push(word(t));
        }
        query.extend(query_window[..b].iter().cloned());
        query.push(GAP_TOKEN.to_string());
        query.extend(query_window[b..].iter().cloned());
        for _ in 0..cfg.query_padding {
            let t = self.word_outside(&exclude);
            query.push(word(t));
        }

        let inst = ClozeInstance {
            id: format!("{}-{index:05}", split.name()),
            passage,
            entities,
            query,
            answer: entity(answer),
            candidates: None,
        };
        (inst, evidence, with_cue)
    }

    fn split(&mut self, split: Split, size: usize) -> (Vec<ClozeInstance>, Vec<InstanceMeta>) {
        (0..size)
            .map(|i| {
                let (inst, evidence, with_cue) = self.instance(split, i);
                let meta = InstanceMeta {
                    id: inst.id.clone(),
                    evidence_window: evidence,
                    answer: inst.answer.clone(),
                    unseen: false,
                    query_cue: with_cue,
                };
                (inst, meta)
            })
            .unzip()
    }
}

fn split_meta(mut instances: Vec<InstanceMeta>, seen: &BTreeSet<String>) -> SplitMeta {
    let mut unseen_answers = BTreeSet::new();
    for m in &mut instances {
        m.unseen = !seen.contains(&m.answer);
        if m.unseen {
            unseen_answers.insert(m.answer.clone());
        }
    }
    SplitMeta {
        unseen_count: instances.iter().filter(|m| m.unseen).count(),
        instances,
        unseen_answers: unseen_answers.into_iter().collect(),
    }
}

/// Generates train/dev/test splits, their metadata and matching word
/// vectors. Output is a pure function of the config.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<SyntheticCorpus, CorpusError> {
    cfg.validate()?;
    let mut gen = Generator {
        cfg,
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
    };
    let (train, train_meta) = gen.split(Split::Train, cfg.train_size);
    let (dev, dev_meta) = gen.split(Split::Dev, cfg.dev_size);
    let (test, test_meta) = gen.split(Split::Test, cfg.test_size);
    let train = Dataset::new(train)?;
    let seen = entity_set(&train);

    let mut emb_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x9e3779b97f4a7c15));
    let mut embeddings = EmbeddingTable::new(cfg.embedding_dim);
    let cue_count = cfg.entity_pool_size + cfg.unseen_pool_size;
    for name in (0..cfg.vocab_size).map(word).chain((0..cue_count).map(cue)) {
        let v = (0..cfg.embedding_dim)
            .map(|_| emb_rng.gen_range(-1.0..1.0))
            .collect();
        embeddings.insert(name, v)?;
    }

    Ok(SyntheticCorpus {
        metadata: SyntheticMetadata {
            config: cfg.clone(),
            train: split_meta(train_meta, &seen),
            dev: split_meta(dev_meta, &seen),
            test: split_meta(test_meta, &seen),
        },
        train,
        dev: Dataset::new(dev)?,
        test: Dataset::new(test)?,
        embeddings,
    })
}
