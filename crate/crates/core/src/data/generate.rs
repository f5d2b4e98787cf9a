//! Synthetic stand-in for slide-level feature bags.
//!
//! Every fine class owns a Gaussian cluster; all classes share one
//! background cluster at the origin. A bag of class `c` holds `ceil(alpha n)`
//! instances from cluster `c` and background instances for the rest. Class
//! centroids sit on distinct coordinate axes at distance `separation / sqrt 2`
//! from the origin, so any two centroids are exactly `separation` apart
//! (in units of the per-coordinate noise). Features are rounded to `f32` at
//! creation so a dataset survives the on-disk format unchanged.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Bag, Dataset, Entry, Mixture, Split};
use crate::error::{Error, Result};
use crate::numkernel::Tensor2;
use crate::rng::{domain, stream};
use crate::taxonomy::{FineClass, Subsite, Taxonomy, N_FINE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    /// Bags per fine class.
    pub class_counts: BTreeMap<FineClass, usize>,
    pub dim: usize,
    /// Inclusive range of instances per bag.
    pub bag_size: (usize, usize),
    /// Fraction of each bag's instances that carry the class signal.
    pub alpha: f64,
    /// Distance between any two class centroids, in noise standard deviations.
    pub separation: f64,
    pub noise_sd: f64,
    /// Probability that an SSL bag is Proximal (HP: Distal); otherwise Unknown.
    pub subsite_correlation: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            class_counts: FineClass::ALL.iter().map(|&c| (c, 60)).collect(),
            dim: 32,
            bag_size: (150, 300),
            alpha: 0.3,
            separation: 6.0,
            noise_sd: 1.0,
            subsite_correlation: 0.8,
        }
    }
}

impl GenConfig {
    pub fn with_counts(mut self, per_class: usize) -> Self {
        self.class_counts = FineClass::ALL.iter().map(|&c| (c, per_class)).collect();
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::Config(format!("alpha must be in (0, 1], got {}", self.alpha)));
        }
        if self.dim < 2 {
            return Err(Error::Config(format!("dim must be at least 2, got {}", self.dim)));
        }
        if self.dim < N_FINE {
            return Err(Error::Config(format!(
                "dim must be at least {N_FINE} to give every class its own axis"
            )));
        }
        if self.class_counts.values().all(|&n| n == 0) {
            return Err(Error::Config("class counts are empty".into()));
        }
        let (lo, hi) = self.bag_size;
        if lo == 0 || lo > hi {
            return Err(Error::Config(format!("invalid bag size range {lo}..={hi}")));
        }
        if !(self.separation >= 0.0 && self.separation.is_finite()) {
            return Err(Error::Config("separation must be finite and non-negative".into()));
        }
        if !(self.noise_sd > 0.0 && self.noise_sd.is_finite()) {
            return Err(Error::Config("noise_sd must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.subsite_correlation) {
            return Err(Error::Config("subsite_correlation must be a probability".into()));
        }
        Ok(())
    }

    /// Mean of the signal cluster of class `c`.
    pub fn centroid(&self, c: FineClass) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        v[c.index()] = self.separation * self.noise_sd / std::f64::consts::SQRT_2;
        v
    }

    fn symptomatic_count(&self, n: usize) -> usize {
        // Tolerance keeps e.g. 0.3 * 200 from rounding up to 61.
        ((self.alpha * n as f64 - 1e-9).ceil() as usize).clamp(1, n)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MixedConfig {
    pub count: usize,
    /// Range of the urgent class's share of the bag.
    pub urgent_fraction: (f64, f64),
    /// Candidate class pairs; empty means every pair of distinct classes.
    pub pairs: Vec<(FineClass, FineClass)>,
}

impl Default for MixedConfig {
    fn default() -> Self {
        MixedConfig {
            count: 140,
            urgent_fraction: (0.1, 0.5),
            pairs: Vec::new(),
        }
    }
}

impl MixedConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.urgent_fraction;
        if !(lo > 0.0 && lo <= hi && hi < 1.0) {
            return Err(Error::Config(format!("invalid urgent fraction range ({lo}, {hi})")));
        }
        if let Some((a, _)) = self.pairs.iter().find(|(a, b)| a == b) {
            return Err(Error::InvalidArgument(format!("degenerate mixed pair ({a}, {a})")));
        }
        Ok(())
    }
}

fn gaussian_row(
    rng: &mut ChaCha8Rng,
    noise: &Normal<f64>,
    mean: &[f64],
    out: &mut Vec<f64>,
) {
    for &m in mean {
        out.push((m + noise.sample(rng)) as f32 as f64);
    }
}

/// Draws `n_signal` rows around `centroid` and `n_background` rows around
/// the origin, in a shuffled order.
fn draw_instances(
    config: &GenConfig,
    rng: &mut ChaCha8Rng,
    parts: &[(&[f64], usize)],
) -> Tensor2 {
    let noise = Normal::new(0.0, config.noise_sd).expect("validated noise");
    let total: usize = parts.iter().map(|p| p.1).sum();
    let mut order: Vec<usize> = (0..parts.len())
        .flat_map(|i| std::iter::repeat_n(i, parts[i].1))
        .collect();
    order.shuffle(rng);
    let mut data = Vec::with_capacity(total * config.dim);
    for i in order {
        gaussian_row(rng, &noise, parts[i].0, &mut data);
    }
    Tensor2::from_vec(total, config.dim, data).expect("consistent shape")
}

fn draw_subsite(config: &GenConfig, class: FineClass, rng: &mut ChaCha8Rng) -> Subsite {
    let informative = match class {
        FineClass::SSL => Subsite::Proximal,
        FineClass::HP => Subsite::Distal,
        _ => return Subsite::Unknown,
    };
    if rng.random::<f64>() < config.subsite_correlation {
        informative
    } else {
        Subsite::Unknown
    }
}

fn single_bag(config: &GenConfig, class: FineClass, id: String, rng: &mut ChaCha8Rng) -> Bag {
    let n = rng.random_range(config.bag_size.0..=config.bag_size.1);
    let k = config.symptomatic_count(n);
    let centroid = config.centroid(class);
    let background = vec![0.0; config.dim];
    let features = draw_instances(config, rng, &[(&centroid, k), (&background, n - k)]);
    let subsite = draw_subsite(config, class, rng);
    Bag::new(id, features, class, subsite).expect("generated bag is valid")
}

/// Single-symptom bags for every configured class. Output is untagged; use
/// [`super::split`] to assign train/val/test.
pub fn generate_synthetic(config: &GenConfig, seed: u64) -> Result<Dataset> {
    config.validate()?;
    let jobs: Vec<(FineClass, usize)> = config
        .class_counts
        .iter()
        .flat_map(|(&c, &n)| (0..n).map(move |i| (c, i)))
        .collect();
    let entries = jobs
        .par_iter()
        .enumerate()
        .map(|(global, &(class, i))| {
            let mut rng = stream(seed, domain::BAGS, global as u64);
            Entry {
                bag: single_bag(config, class, format!("{}-{i:04}", class.name()), &mut rng),
                split: None,
                mixture: None,
            }
        })
        .collect();
    Dataset::new(config.dim, entries)
}

/// One bag mixing two symptom classes. `urgent_fraction` of the instances
/// come from a region of the higher-priority class and the rest from the
/// other class; each region has the configured symptomatic fraction. The
/// label is the higher-priority class.
pub fn mixed_bag(
    config: &GenConfig,
    taxonomy: &Taxonomy,
    pair: (FineClass, FineClass),
    urgent_fraction: f64,
    n: usize,
    id: impl Into<String>,
    rng: &mut ChaCha8Rng,
) -> Result<(Bag, Mixture)> {
    let (a, b) = pair;
    if a == b {
        return Err(Error::InvalidArgument(format!("degenerate mixed pair ({a}, {b})")));
    }
    if !(urgent_fraction > 0.0 && urgent_fraction < 1.0) || n < 2 {
        return Err(Error::InvalidArgument(format!(
            "cannot mix {n} instances at urgent fraction {urgent_fraction}"
        )));
    }
    let (urgent, other) = if taxonomy.fine_higher(a, b) { (a, b) } else { (b, a) };
    let n_urgent = ((urgent_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let n_other = n - n_urgent;
    let (k_urgent, k_other) = (config.symptomatic_count(n_urgent), config.symptomatic_count(n_other));

    let cu = config.centroid(urgent);
    let co = config.centroid(other);
    let bg = vec![0.0; config.dim];
    let features = draw_instances(
        config,
        rng,
        &[
            (&cu, k_urgent),
            (&co, k_other),
            (&bg, n - k_urgent - k_other),
        ],
    );
    let subsite = draw_subsite(config, urgent, rng);
    let bag = Bag::new(id, features, urgent, subsite)?;
    Ok((
        bag,
        Mixture {
            urgent,
            other,
            urgent_fraction: n_urgent as f64 / n as f64,
        },
    ))
}

/// Mixed-symptom bags tagged [`Split::TestMixed`], with ids `mix-NNNN`.
pub fn generate_mixed_test(
    config: &GenConfig,
    mixed: &MixedConfig,
    taxonomy: &Taxonomy,
    seed: u64,
) -> Result<Dataset> {
    config.validate()?;
    mixed.validate()?;
    let pairs: Vec<(FineClass, FineClass)> = if mixed.pairs.is_empty() {
        FineClass::ALL
            .iter()
            .flat_map(|&a| FineClass::ALL.iter().map(move |&b| (a, b)))
            .filter(|(a, b)| taxonomy.fine_higher(*a, *b))
            .collect()
    } else {
        mixed.pairs.clone()
    };
    let (lo, hi) = mixed.urgent_fraction;
    let entries = (0..mixed.count)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed, domain::MIXED, i as u64);
            let pair = pairs[rng.random_range(0..pairs.len())];
            let fraction = rng.random_range(lo..=hi);
            let n = rng.random_range(config.bag_size.0.max(2)..=config.bag_size.1.max(2));
            let (bag, mixture) =
                mixed_bag(config, taxonomy, pair, fraction, n, format!("mix-{i:04}"), &mut rng)?;
            Ok(Entry {
                bag,
                split: Some(Split::TestMixed),
                mixture: Some(mixture),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(config.dim, entries)
}
