//! Planted-structure synthetic datasets with stub review and image embeddings.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{write_interactions, Dataset, Interaction};
use crate::embed::{stub_encode, write_embeddings, EmbeddingStore, Modality};
use crate::error::{Error, Result};

pub const INTERACTIONS_FILE: &str = "interactions.jsonl";
pub const TEXT_FILE: &str = "text.tsrv";
pub const IMAGE_FILE: &str = "image.tsrv";
pub const TRANSITIONS_FILE: &str = "transitions.json";

const SHARED_WEIGHT: f64 = 0.7;
const NOISE_WEIGHT: f64 = 0.3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub seed: u64,
    pub users: usize,
    pub items: usize,
    /// Probability that the next item follows the planted cycle.
    pub pattern_strength: f64,
    pub min_len: usize,
    pub max_len: usize,
    pub text_dim: usize,
    pub image_dim: usize,
    /// When positive, off-pattern steps draw from a per-user subset of this
    /// many items instead of the whole catalogue, and the user's taste is
    /// mixed into their review and image vectors.
    pub taste_size: usize,
    pub taste_weight: f64,
    pub missing_review_rate: f64,
    pub missing_image_rate: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            users: 100,
            items: 50,
            pattern_strength: 1.0,
            min_len: 8,
            max_len: 20,
            text_dim: 64,
            image_dim: 64,
            taste_size: 0,
            taste_weight: 0.8,
            missing_review_rate: 0.0,
            missing_image_rate: 0.0,
        }
    }
}

impl SynthConfig {
    pub fn new(seed: u64, users: usize, items: usize, pattern_strength: f64) -> Self {
        SynthConfig {
            seed,
            users,
            items,
            pattern_strength,
            ..Default::default()
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.users < 1 {
            return bad("users must be at least 1");
        }
        if self.items < 2 {
            return bad("items must be at least 2");
        }
        if !(0.0..=1.0).contains(&self.pattern_strength) {
            return bad("pattern_strength must lie in [0, 1]");
        }
        if self.min_len < 1 || self.min_len > self.max_len {
            return bad("sequence lengths must satisfy 1 <= min_len <= max_len");
        }
        if self.text_dim == 0 || self.image_dim == 0 {
            return bad("embedding dimensions must be positive");
        }
        if self.taste_size > self.items {
            return bad("taste_size exceeds the number of items");
        }
        for r in [self.missing_review_rate, self.missing_image_rate] {
            if !(0.0..=1.0).contains(&r) {
                return bad("missing rates must lie in [0, 1]");
            }
        }
        Ok(())
    }
}

pub fn item_id(i: usize) -> String {
    format!("i{i:04}")
}

pub fn user_id(u: usize) -> String {
    format!("u{u:04}")
}

#[derive(Clone, Debug)]
pub struct SyntheticData {
    pub dataset: Dataset,
    pub store: EmbeddingStore,
    /// Planted successor of each item, by generation index.
    pub successor: Vec<usize>,
}

impl SyntheticData {
    /// Planted successor keyed by item id.
    pub fn transitions(&self) -> BTreeMap<String, String> {
        self.successor
            .iter()
            .enumerate()
            .map(|(i, &j)| (item_id(i), item_id(j)))
            .collect()
    }

    pub fn write(&self, dir: &Path, config: &SynthConfig) -> Result<()> {
        fs::create_dir_all(dir)?;
        write_interactions(self.dataset.interactions(), &dir.join(INTERACTIONS_FILE))?;
        write_embeddings(&self.store.text, &dir.join(TEXT_FILE))?;
        write_embeddings(&self.store.image, &dir.join(IMAGE_FILE))?;
        let doc = TransitionFile {
            config: config.clone(),
            next: self.transitions(),
        };
        fs::write(dir.join(TRANSITIONS_FILE), serde_json::to_string_pretty(&doc)? + "\n")?;
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
pub struct TransitionFile {
    pub config: SynthConfig,
    pub next: BTreeMap<String, String>,
}

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    unit((0..dim).map(|_| rng.sample(StandardNormal)).collect())
}

fn to_f32(v: Vec<f64>) -> Vec<f32> {
    v.into_iter().map(|x| x as f32).collect()
}

/// Build a dataset whose next items follow one random cycle over the
/// catalogue with probability `pattern_strength`.
pub fn generate_synthetic(config: &SynthConfig) -> Result<SyntheticData> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n = config.items;

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut successor = vec![0; n];
    for k in 0..n {
        successor[order[k]] = order[(k + 1) % n];
    }

    let text_proto: Vec<Vec<f64>> = (0..n)
        .map(|i| stub_encode(Modality::Text, &item_id(i), config.text_dim, config.seed))
        .collect();
    let image_proto: Vec<Vec<f64>> = (0..n)
        .map(|i| stub_encode(Modality::Image, &item_id(i), config.image_dim, config.seed))
        .collect();

    let mut store = EmbeddingStore::new(config.text_dim, config.image_dim)?;
    let mut interactions = Vec::new();
    for u in 0..config.users {
        let user = user_id(u);
        let len = rng.random_range(config.min_len..=config.max_len);
        let taste: Vec<usize> = if config.taste_size > 0 {
            let mut all: Vec<usize> = (0..n).collect();
            all.shuffle(&mut rng);
            all.truncate(config.taste_size);
            all.sort_unstable();
            all
        } else {
            Vec::new()
        };
        let taste_vec = |proto: &[Vec<f64>], dim: usize| -> Vec<f64> {
            if taste.is_empty() {
                return vec![0.0; dim];
            }
            let mut acc = vec![0.0; dim];
            for &i in &taste {
                for (a, p) in acc.iter_mut().zip(&proto[i]) {
                    *a += p;
                }
            }
            unit(acc)
        };
        let taste_text = taste_vec(&text_proto, config.text_dim);
        let taste_image = taste_vec(&image_proto, config.image_dim);
        let off_pattern = |rng: &mut ChaCha8Rng| -> usize {
            if taste.is_empty() {
                rng.random_range(0..n)
            } else {
                taste[rng.random_range(0..taste.len())]
            }
        };

        let mut item = off_pattern(&mut rng);
        for step in 0..len {
            if step > 0 {
                item = if rng.random::<f64>() < config.pattern_strength {
                    successor[item]
                } else {
                    off_pattern(&mut rng)
                };
            }
            let shared_t = gaussian(&mut rng, config.text_dim);
            let shared_v = if config.image_dim == config.text_dim {
                shared_t.clone()
            } else {
                gaussian(&mut rng, config.image_dim)
            };
            let noise_t = gaussian(&mut rng, config.text_dim);
            let noise_v = gaussian(&mut rng, config.image_dim);
            let mix = |proto: &[f64], shared: &[f64], noise: &[f64], taste: &[f64]| {
                unit(
                    (0..proto.len())
                        .map(|d| {
                            proto[d]
                                + SHARED_WEIGHT * shared[d]
                                + NOISE_WEIGHT * noise[d]
                                + config.taste_weight * taste[d]
                        })
                        .collect(),
                )
            };
            let has_review = rng.random::<f64>() >= config.missing_review_rate;
            let has_image = rng.random::<f64>() >= config.missing_image_rate;
            let review_id = has_review.then(|| format!("r{user}_{step}"));
            let image_id = has_image.then(|| format!("g{user}_{step}"));
            if let Some(r) = &review_id {
                let v = mix(&text_proto[item], &shared_t, &noise_t, &taste_text);
                store.text.insert(r.clone(), to_f32(v))?;
            }
            if let Some(g) = &image_id {
                let v = mix(&image_proto[item], &shared_v, &noise_v, &taste_image);
                store.image.insert(g.clone(), to_f32(v))?;
            }
            interactions.push(Interaction {
                user_id: user.clone(),
                item_id: item_id(item),
                timestamp: step as u64,
                review_id,
                image_id,
            });
        }
    }
    // Every item appears in the vocabulary even if never sampled.
    let vocab = crate::data::ItemVocab::new((0..n).map(item_id).collect());
    let dataset = Dataset::with_vocab(interactions, vocab)?;
    Ok(SyntheticData {
        dataset,
        store,
        successor,
    })
}
