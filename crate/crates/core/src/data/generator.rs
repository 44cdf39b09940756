//! Seeded synthetic CTR corpus with a planted click rule.
//!
//! Behaviors come from a shared pool; every pool entry belongs to one latent
//! topic and its words are drawn mostly from that topic's slice of the
//! vocabulary, so the text carries the topic. Users favour one topic, draw
//! behaviors topic-first and then by Zipf rank inside the topic, and click an
//! item with probability `sigmoid(scale·⟨interest, topic(item)⟩ + bias + noise)`.

use std::collections::HashSet;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal, Zipf};
use serde::{Deserialize, Serialize};

use super::{AtomicBehavior, CtrRecord, DataError, Dataset, ItemProfile, UserProfile, Vocab, UNK_TOKEN};
use crate::nn::sigmoid;
use crate::rng::stream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    /// `N`: domain sequences per user.
    pub n_domains: usize,
    /// `M`: behaviors per sequence.
    pub behaviors_per_sequence: usize,
    /// Lower bound for ragged sequences; `None` means exactly `M`.
    pub min_behaviors: Option<usize>,
    pub k_min: usize,
    pub k_max: usize,
    /// Including the `<unk>` entry.
    pub vocab_size: usize,
    /// `P`: distinct behaviors available to users.
    pub pool_size: usize,
    pub zipf_exponent: f64,
    pub n_topics: usize,
    /// Probability a user behavior comes from the user's favourite topic.
    pub topic_focus: f64,
    /// Probability a word of a topic behavior comes from the topic's words.
    pub topic_word_prob: f64,
    pub n_users: usize,
    pub n_items: usize,
    pub n_records: usize,
    pub label_scale: f64,
    pub label_noise: f64,
    pub target_base_rate: f64,
    /// Train / valid / test fractions by simulated log time.
    pub split: [f64; 3],
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            n_domains: 3,
            behaviors_per_sequence: 8,
            min_behaviors: None,
            k_min: 2,
            k_max: 4,
            vocab_size: 512,
            pool_size: 1000,
            zipf_exponent: 1.0,
            n_topics: 4,
            topic_focus: 0.7,
            topic_word_prob: 0.8,
            n_users: 2000,
            n_items: 200,
            n_records: 25_000,
            label_scale: 6.0,
            label_noise: 0.5,
            target_base_rate: 0.25,
            split: [0.8, 0.1, 0.1],
        }
    }
}

impl GenConfig {
    fn words_per_topic(&self) -> usize {
        (self.vocab_size.saturating_sub(1)) * 3 / 4 / self.n_topics.max(1)
    }

    fn common_words(&self) -> usize {
        self.vocab_size.saturating_sub(1) - self.words_per_topic() * self.n_topics
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: String| Err(DataError::InvalidConfig(m));
        if self.n_domains == 0 || self.behaviors_per_sequence == 0 {
            return bad("n_domains and behaviors_per_sequence must be positive".into());
        }
        if let Some(min) = self.min_behaviors {
            if min == 0 || min > self.behaviors_per_sequence {
                return bad(format!("min_behaviors {min} must be in 1..={}", self.behaviors_per_sequence));
            }
        }
        if self.k_min == 0 || self.k_min > self.k_max {
            return bad(format!("token range [{}, {}] is empty", self.k_min, self.k_max));
        }
        if self.n_topics == 0 || self.pool_size < self.n_topics {
            return bad("need at least one topic and one pool behavior per topic".into());
        }
        if self.words_per_topic() < 2 || self.common_words() < 1 {
            return bad(format!("vocab_size {} too small for {} topics", self.vocab_size, self.n_topics));
        }
        if self.n_users == 0 || self.n_items == 0 {
            return bad("n_users and n_items must be positive".into());
        }
        if !(self.zipf_exponent.is_finite() && self.zipf_exponent >= 0.0) {
            return bad("zipf_exponent must be finite and non-negative".into());
        }
        for (name, p) in [("topic_focus", self.topic_focus), ("topic_word_prob", self.topic_word_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} must be a probability"));
            }
        }
        if !(self.target_base_rate > 0.0 && self.target_base_rate < 1.0) {
            return bad("target_base_rate must be in (0, 1)".into());
        }
        if !(self.label_scale.is_finite() && self.label_noise.is_finite() && self.label_noise >= 0.0) {
            return bad("label_scale/label_noise must be finite, noise non-negative".into());
        }
        let sum: f64 = self.split.iter().sum();
        if self.split.iter().any(|f| *f < 0.0) || (sum - 1.0).abs() > 1e-9 {
            return bad(format!("split fractions {:?} must be non-negative and sum to 1", self.split));
        }
        Ok(())
    }
}

/// Latent variables behind the labels.
#[derive(Clone, Debug, PartialEq)]
pub struct GenTruth {
    /// Unit-norm topic mixture per user.
    pub user_interest: Vec<Vec<f64>>,
    pub item_topic: Vec<usize>,
    pub behavior_topic: std::collections::HashMap<String, usize>,
    pub bias: f64,
    pub scale: f64,
}

impl GenTruth {
    /// Score that orders impressions exactly like the click probability.
    pub fn bayes_score(&self, record: &CtrRecord) -> f64 {
        self.user_interest[record.user][self.item_topic[record.item]]
    }
}

pub struct Generated {
    pub dataset: Dataset,
    pub truth: GenTruth,
}

fn sample_text<R: Rng>(rng: &mut R, cfg: &GenConfig, topic: usize, words: &[String]) -> String {
    let per_topic = cfg.words_per_topic();
    let common_start = 1 + per_topic * cfg.n_topics;
    let k = rng.random_range(cfg.k_min..=cfg.k_max);
    (0..k)
        .map(|_| {
            let id = if rng.random::<f64>() < cfg.topic_word_prob {
                1 + topic * per_topic + rng.random_range(0..per_topic)
            } else {
                common_start + rng.random_range(0..cfg.common_words())
            };
            words[id].as_str()
        })
        .collect::<Vec<_>>()
        .join(" ")
}

fn unique_text<R: Rng>(
    rng: &mut R,
    cfg: &GenConfig,
    topic: usize,
    words: &[String],
    seen: &mut HashSet<String>,
) -> Result<String, DataError> {
    for _ in 0..1000 {
        let t = sample_text(rng, cfg, topic, words);
        if seen.insert(t.clone()) {
            return Ok(t);
        }
    }
    Err(DataError::InvalidConfig(format!(
        "cannot draw enough distinct texts for topic {topic}; enlarge vocab_size or k_max"
    )))
}

pub fn generate_synthetic(cfg: &GenConfig, seed: u64) -> Result<Generated, DataError> {
    cfg.validate()?;
    let mut words = Vec::with_capacity(cfg.vocab_size);
    words.push(UNK_TOKEN.to_string());
    for t in 0..cfg.n_topics {
        for j in 0..cfg.words_per_topic() {
            words.push(format!("t{t}w{j}"));
        }
    }
    for j in 0..cfg.common_words() {
        words.push(format!("c{j}"));
    }
    let vocab = Vocab::from_words(words.clone())?;

    // behavior pool, round-robin over topics
    let mut rng = stream(seed, "gen/pool");
    let mut seen = HashSet::new();
    let mut pool_by_topic: Vec<Vec<Arc<AtomicBehavior>>> = vec![Vec::new(); cfg.n_topics];
    let mut behavior_topic = std::collections::HashMap::new();
    for p in 0..cfg.pool_size {
        let topic = p % cfg.n_topics;
        let text = unique_text(&mut rng, cfg, topic, &words, &mut seen)?;
        behavior_topic.insert(text.clone(), topic);
        pool_by_topic[topic].push(Arc::new(AtomicBehavior::new(&text, &vocab)?));
    }
    let zipfs: Vec<Zipf<f64>> = pool_by_topic
        .iter()
        .map(|p| Zipf::new(p.len() as f64, cfg.zipf_exponent).expect("validated zipf parameters"))
        .collect();

    let mut rng = stream(seed, "gen/users");
    let mut users = Vec::with_capacity(cfg.n_users);
    let mut user_interest = Vec::with_capacity(cfg.n_users);
    for u in 0..cfg.n_users {
        let favourite = rng.random_range(0..cfg.n_topics);
        let mut counts = vec![0.0; cfg.n_topics];
        let mut sequences = Vec::with_capacity(cfg.n_domains);
        for _ in 0..cfg.n_domains {
            let len = match cfg.min_behaviors {
                Some(min) => rng.random_range(min..=cfg.behaviors_per_sequence),
                None => cfg.behaviors_per_sequence,
            };
            let mut seq = Vec::with_capacity(len);
            for _ in 0..len {
                let topic =
                    if rng.random::<f64>() < cfg.topic_focus { favourite } else { rng.random_range(0..cfg.n_topics) };
                let rank = zipfs[topic].sample(&mut rng) as usize - 1;
                counts[topic] += 1.0;
                seq.push(Arc::clone(&pool_by_topic[topic][rank]));
            }
            sequences.push(seq);
        }
        let norm = counts.iter().map(|c| c * c).sum::<f64>().sqrt();
        user_interest.push(counts.iter().map(|c| c / norm).collect::<Vec<f64>>());
        users.push(UserProfile { user_id: format!("u{u:06}"), sequences });
    }

    let mut rng = stream(seed, "gen/items");
    let mut item_seen = HashSet::new();
    let mut items = Vec::with_capacity(cfg.n_items);
    let mut item_topic = Vec::with_capacity(cfg.n_items);
    for i in 0..cfg.n_items {
        let topic = i % cfg.n_topics;
        let text = unique_text(&mut rng, cfg, topic, &words, &mut item_seen)?;
        item_topic.push(topic);
        items.push(ItemProfile { item_id: format!("i{i:05}"), title: Arc::new(AtomicBehavior::new(&text, &vocab)?) });
    }

    let noise = Normal::new(0.0, cfg.label_noise.max(f64::MIN_POSITIVE)).expect("finite noise");
    let bias = calibrate_bias(cfg, &user_interest, &item_topic, &noise, seed);

    let mut rng = stream(seed, "gen/records");
    let mut records = Vec::with_capacity(cfg.n_records);
    let mut ts = 1_700_000_000u64;
    for _ in 0..cfg.n_records {
        ts += rng.random_range(1..=3);
        let user = rng.random_range(0..cfg.n_users);
        let item = rng.random_range(0..cfg.n_items);
        let eps = if cfg.label_noise > 0.0 { noise.sample(&mut rng) } else { 0.0 };
        let logit = cfg.label_scale * user_interest[user][item_topic[item]] + bias + eps;
        let label = u8::from(rng.random::<f64>() < sigmoid(logit));
        records.push(CtrRecord { ts, user, item, label });
    }
    let n_train = (cfg.n_records as f64 * cfg.split[0]).round() as usize;
    let n_valid = (cfg.n_records as f64 * cfg.split[1]).round() as usize;
    let n_valid = n_valid.min(cfg.n_records - n_train);
    let test = records.split_off(n_train + n_valid);
    let valid = records.split_off(n_train);

    let dataset = Dataset { vocab, users, items, train: records, valid, test };
    Ok(Generated { dataset, truth: GenTruth { user_interest, item_topic, behavior_topic, bias, scale: cfg.label_scale } })
}

/// Bias that makes the expected click rate over random impressions equal
/// the configured target, found by bisection on a fixed Monte-Carlo sample.
fn calibrate_bias(cfg: &GenConfig, interest: &[Vec<f64>], item_topic: &[usize], noise: &Normal<f64>, seed: u64) -> f64 {
    let mut rng = stream(seed, "gen/calibrate");
    let sample: Vec<f64> = (0..4000)
        .map(|_| {
            let u = rng.random_range(0..interest.len());
            let i = rng.random_range(0..item_topic.len());
            let eps = if cfg.label_noise > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            cfg.label_scale * interest[u][item_topic[i]] + eps
        })
        .collect();
    let rate = |b: f64| sample.iter().map(|z| sigmoid(z + b)).sum::<f64>() / sample.len() as f64;
    let (mut lo, mut hi) = (-50.0, 50.0);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if rate(mid) < cfg.target_base_rate {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Permutes labels within each split; the null-model control.
pub fn shuffle_labels(dataset: &mut Dataset, seed: u64) {
    let mut rng = stream(seed, "gen/shuffle_labels");
    for split in [&mut dataset.train, &mut dataset.valid, &mut dataset.test] {
        let mut labels: Vec<u8> = split.iter().map(|r| r.label).collect();
        labels.shuffle(&mut rng);
        for (r, l) in split.iter_mut().zip(labels) {
            r.label = l;
        }
    }
}
