//! Generated two-topic corpus used for end-to-end checks.
//!
//! Each class owns a disjoint topic vocabulary; a fixed share of tokens is
//! drawn from a noise vocabulary common to both classes. Topic words follow
//! a Zipf law so a handful of labeled sentences covers only the head of each
//! vocabulary.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::augment::Augmentation;
use crate::corpus::{Example, LabelMap, SplitSpec};
use crate::error::{contract, Result};
use crate::losses::LossConfig;
use crate::rng::SeededRng;
use crate::trainer::TrainConfig;

const ONSETS: [&str; 16] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "ch", "sh"];
const VOWELS: [&str; 8] = ["a", "e", "i", "o", "u", "ai", "ou", "ei"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthSpec {
    pub topic_words: usize,
    pub noise_words: usize,
    /// Probability that a token comes from the shared noise vocabulary.
    pub noise_fraction: f64,
    pub zipf_exponent: f64,
    pub min_len: usize,
    pub max_len: usize,
    /// Pool to split into labeled / unlabeled / dev, balanced over classes.
    pub pool: usize,
    pub test: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            topic_words: 50,
            noise_words: 40,
            noise_fraction: 0.2,
            zipf_exponent: 0.5,
            min_len: 3,
            max_len: 4,
            pool: 720,
            test: 500,
        }
    }
}

impl SynthSpec {
    /// Split sizes that consume the whole default pool: 10 per class,
    /// 500 unlabeled, 200 dev.
    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec {
            per_class: 10,
            unlabeled: 500,
            dev: 200,
        }
    }
}

/// Training setup used on the generated corpus. The contrastive temperature
/// is high and its weight low: with an encoder trained from scratch on 20
/// labeled sentences, a sharp supervised contrastive term drives the
/// consistency term into predicting one class for all unlabeled text.
pub fn train_config(seed: u64) -> TrainConfig {
    TrainConfig {
        max_steps: 300,
        peak_lr: 3e-3,
        eval_every: 25,
        features: 4096,
        hidden: 128,
        embed: 32,
        seed,
        loss: LossConfig {
            tau_scl: 5.0,
            lambda1: 0.1,
            ..LossConfig::default()
        },
        ..TrainConfig::default()
    }
}

pub const DROP_PROB: f64 = 0.3;
pub const SWAP_PROB: f64 = 0.1;

pub fn augmentation(seed: u64) -> Augmentation {
    Augmentation::LexicalNoise {
        drop_prob: DROP_PROB,
        swap_prob: SWAP_PROB,
        seed,
    }
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub labels: LabelMap,
    pub pool: Vec<Example>,
    pub test: Vec<Example>,
    pub vocab: [Vec<String>; 2],
    pub noise: Vec<String>,
}

/// Two-syllable pseudo-word number `i`; distinct for `i < 16 * 8 * 16 * 8`.
pub fn pseudo_word(i: usize) -> String {
    let a = i % 128;
    let b = i / 128;
    format!(
        "{}{}{}{}",
        ONSETS[b % 16],
        VOWELS[(b / 16) % 8],
        ONSETS[a % 16],
        VOWELS[a / 16]
    )
}

struct Zipf {
    cumulative: Vec<f64>,
}

impl Zipf {
    fn new(n: usize, s: f64) -> Self {
        let mut cumulative = Vec::with_capacity(n);
        let mut acc = 0.0;
        for k in 1..=n {
            acc += 1.0 / libm::pow(k as f64, s);
            cumulative.push(acc);
        }
        for c in &mut cumulative {
            *c /= acc;
        }
        Self { cumulative }
    }

    fn draw(&self, rng: &mut SeededRng) -> usize {
        let u = rng.uniform();
        self.cumulative.partition_point(|&c| c <= u).min(self.cumulative.len() - 1)
    }
}

fn sentence(
    rng: &mut SeededRng,
    spec: &SynthSpec,
    topic: &[String],
    noise: &[String],
    zipf: &Zipf,
) -> String {
    let len = spec.min_len + rng.below(spec.max_len - spec.min_len + 1);
    let mut words: Vec<&str> = Vec::with_capacity(len);
    for _ in 0..len {
        if rng.bernoulli(spec.noise_fraction) {
            words.push(&noise[rng.below(noise.len())]);
        } else {
            words.push(&topic[zipf.draw(rng)]);
        }
    }
    words.join(" ")
}

pub fn generate(spec: &SynthSpec, seed: u64) -> Result<SynthCorpus> {
    if spec.topic_words == 0 || spec.noise_words == 0 || spec.min_len == 0 || spec.min_len > spec.max_len {
        return Err(contract!("degenerate synthetic spec {spec:?}"));
    }
    if 2 * spec.topic_words + spec.noise_words > 16 * 8 * 16 * 8 {
        return Err(contract!("vocabulary too large"));
    }
    let vocab = [
        (0..spec.topic_words).map(pseudo_word).collect::<Vec<_>>(),
        (spec.topic_words..2 * spec.topic_words).map(pseudo_word).collect::<Vec<_>>(),
    ];
    let noise: Vec<String> = (2 * spec.topic_words..2 * spec.topic_words + spec.noise_words)
        .map(pseudo_word)
        .collect();
    let zipf = Zipf::new(spec.topic_words, spec.zipf_exponent);
    let mut rng = SeededRng::new(seed);
    let mut make = |prefix: &str, n: usize| -> Vec<Example> {
        (0..n)
            .map(|i| {
                let label = i % 2;
                let text = sentence(&mut rng, spec, &vocab[label], &noise, &zipf);
                Example::new(format!("{prefix}{i:05}"), text, Some(label))
            })
            .collect()
    };
    let pool = make("p", spec.pool);
    let test = make("t", spec.test);
    Ok(SynthCorpus {
        labels: LabelMap::new(["topic_a", "topic_b"])?,
        pool,
        test,
        vocab,
        noise,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vocabularies_are_disjoint() {
        let c = generate(&SynthSpec::default(), 3).unwrap();
        let mut all: Vec<&String> = c.vocab[0].iter().chain(&c.vocab[1]).chain(&c.noise).collect();
        let n = all.len();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), n);
    }

    #[test]
    fn balanced_and_deterministic() {
        let spec = SynthSpec::default();
        let a = generate(&spec, 9).unwrap();
        let b = generate(&spec, 9).unwrap();
        assert_eq!(a.pool, b.pool);
        assert_eq!(a.pool.iter().filter(|e| e.label == Some(0)).count(), spec.pool / 2);
        assert_eq!(a.test.len(), spec.test);
    }

    #[test]
    fn noise_share_near_target() {
        let c = generate(&SynthSpec::default(), 1).unwrap();
        let (mut noise, mut total) = (0usize, 0usize);
        for e in &c.pool {
            for w in e.text.split_whitespace() {
                total += 1;
                noise += c.noise.iter().any(|n| n == w) as usize;
            }
        }
        let share = noise as f64 / total as f64;
        assert!((share - 0.2).abs() < 0.03, "{share}");
    }
}
