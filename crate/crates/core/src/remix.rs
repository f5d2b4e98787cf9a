//! Implicit feature remix.
//!
//! A remixed bag takes a `beta` share of the instances of a high-priority
//! bag `i` and a `1 - beta` share of a lower-priority bag `j`. Its targets
//! are softened toward `i`:
//!
//! ```text
//! r   = k_i / (k_i + k_j)           (realized instance counts)
//! r_i = r^(1/tau),  r_j = (1 - r)^tau
//! y_i = r_i / (r_i + r_j),  y_j = r_j / (r_i + r_j)
//! ```
//!
//! [`remix_success_prob`] gives the chance that at least one symptomatic
//! instance of `i` survives the subsampling, which is what makes a remixed
//! bag's label honest.

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Bag, Provenance, SoftLabel, TrainSample};
use crate::error::{Error, Result};
use crate::numkernel::Tensor2;
use crate::rng::{domain, stream};
use crate::taxonomy::{FineClass, Taxonomy, N_COARSE, N_FINE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RemixConfig {
    pub beta_min: f64,
    pub beta_max: f64,
    pub min_bag_size: usize,
    pub tau: f64,
    /// Chance that an eligible training bag is replaced by a remix in a
    /// given epoch.
    pub remix_probability: f64,
}

impl Default for RemixConfig {
    fn default() -> Self {
        RemixConfig {
            beta_min: 0.4,
            beta_max: 0.8,
            min_bag_size: 150,
            tau: 15.0,
            remix_probability: 0.3,
        }
    }
}

impl RemixConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.beta_min && self.beta_min <= self.beta_max && self.beta_max < 1.0) {
            return Err(Error::Config(format!(
                "need 0 < beta_min <= beta_max < 1, got [{}, {}]",
                self.beta_min, self.beta_max
            )));
        }
        if self.min_bag_size < 1 {
            return Err(Error::Config("min_bag_size must be at least 1".into()));
        }
        if !(self.tau >= 1.0 && self.tau.is_finite()) {
            return Err(Error::Config(format!("tau must be >= 1, got {}", self.tau)));
        }
        if !(0.0..=1.0).contains(&self.remix_probability) {
            return Err(Error::Config(format!(
                "remix_probability must be in [0, 1], got {}",
                self.remix_probability
            )));
        }
        Ok(())
    }
}

/// Probability that a `beta` subsample of an `n`-instance bag keeps at
/// least one of its `alpha` symptomatic instances.
///
/// Counts are `round(n alpha)` and `round(n beta)`. When `alpha + beta >= 1`
/// the answer is exactly 1; otherwise it is
/// `1 - C(n - a, b) / C(n, b)`, evaluated as a product of ratios.
pub fn remix_success_prob(n: usize, alpha: f64, beta: f64) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be at least 1".into()));
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidArgument(format!("alpha must be in (0, 1], got {alpha}")));
    }
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::InvalidArgument(format!("beta must be in (0, 1), got {beta}")));
    }
    // Grid values like 0.7 + 0.3 land a hair under 1.
    if alpha + beta >= 1.0 - 1e-12 {
        return Ok(1.0);
    }
    let (a, b) = symptom_counts(n, alpha, beta);
    if b > n - a {
        return Ok(1.0);
    }
    let miss: f64 = (0..b).map(|t| (n - a - t) as f64 / (n - t) as f64).product();
    Ok((1.0 - miss).clamp(0.0, 1.0))
}

/// `(round(n alpha), round(n beta))`, capped at `n`.
pub fn symptom_counts(n: usize, alpha: f64, beta: f64) -> (usize, usize) {
    let a = ((n as f64 * alpha).round() as usize).min(n);
    let b = ((n as f64 * beta).round() as usize).min(n);
    (a, b)
}

/// One cell of a success-probability grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub n: usize,
    pub alpha: f64,
    pub beta: f64,
    pub p_success: f64,
}

impl GridCell {
    pub fn feasible(&self) -> bool {
        self.alpha + self.beta < 1.0 - 1e-12
    }
}

/// Success probability over every `(n, alpha, beta)` combination, in
/// `n`-major order.
pub fn success_grid(ns: &[usize], alphas: &[f64], betas: &[f64]) -> Result<Vec<GridCell>> {
    let mut cells = Vec::with_capacity(ns.len() * alphas.len() * betas.len());
    for &n in ns {
        for &alpha in alphas {
            for &beta in betas {
                cells.push(GridCell {
                    n,
                    alpha,
                    beta,
                    p_success: remix_success_prob(n, alpha, beta)?,
                });
            }
        }
    }
    Ok(cells)
}

/// Share of feasible cells for `n` whose success probability is at most
/// `threshold`, or `None` when no cell is feasible.
pub fn low_success_fraction(cells: &[GridCell], n: usize, threshold: f64) -> Option<f64> {
    let feasible: Vec<&GridCell> = cells.iter().filter(|c| c.n == n && c.feasible()).collect();
    if feasible.is_empty() {
        return None;
    }
    let low = feasible.iter().filter(|c| c.p_success <= threshold).count();
    Some(low as f64 / feasible.len() as f64)
}

/// Share of the remixed bag that came from the high-priority source.
pub fn mix_ratio(k_i: usize, k_j: usize) -> Result<f64> {
    if k_i == 0 || k_j == 0 {
        return Err(Error::InvalidArgument(format!(
            "mix ratio needs both counts >= 1, got ({k_i}, {k_j})"
        )));
    }
    Ok(k_i as f64 / (k_i + k_j) as f64)
}

/// `(y_i, y_j)` for a two-class softened target; sums to exactly 1.
fn soften_pair(r: f64, tau: f64) -> (f64, f64) {
    let ri = r.powf(1.0 / tau);
    let rj = (1.0 - r).powf(tau);
    // The larger share is computed by division and the smaller one as its
    // complement, which makes the pair sum to 1 without rounding.
    if ri >= rj {
        let yi = ri / (ri + rj);
        (yi, 1.0 - yi)
    } else {
        let yj = rj / (ri + rj);
        (1.0 - yj, yj)
    }
}

/// Softened targets for a bag mixed from `class_i` (more urgent) and
/// `class_j`. The coarse target applies the same rule to the parents, or is
/// one-hot when both share a parent.
pub fn soften_labels(
    r: f64,
    tau: f64,
    class_i: FineClass,
    class_j: FineClass,
    taxonomy: &Taxonomy,
) -> Result<SoftLabel> {
    if !(r > 0.0 && r < 1.0) {
        return Err(Error::InvalidArgument(format!("r must be in (0, 1), got {r}")));
    }
    if !(tau >= 1.0 && tau.is_finite()) {
        return Err(Error::InvalidArgument(format!("tau must be >= 1, got {tau}")));
    }
    if !taxonomy.fine_higher(class_i, class_j) {
        return Err(Error::InvalidArgument(format!(
            "{class_i} does not have higher priority than {class_j}"
        )));
    }
    let (yi, yj) = soften_pair(r, tau);
    let mut fine = [0.0; N_FINE];
    fine[class_i.index()] = yi;
    fine[class_j.index()] = yj;

    let (pi, pj) = (taxonomy.parent(class_i), taxonomy.parent(class_j));
    let mut coarse = [0.0; N_COARSE];
    if pi == pj {
        coarse[pi.index()] = 1.0;
    } else {
        coarse[pi.index()] = yi;
        coarse[pj.index()] = yj;
    }
    Ok(SoftLabel { coarse, fine })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RemixOutcome {
    pub bag: Bag,
    pub targets: SoftLabel,
    pub r: f64,
    /// Instances taken from `(bag_i, bag_j)`.
    pub counts: (usize, usize),
    pub source_i: String,
    pub source_j: String,
    pub beta: f64,
}

impl RemixOutcome {
    pub fn into_sample(self) -> TrainSample {
        TrainSample {
            bag: self.bag,
            targets: self.targets,
            provenance: Provenance::Remixed {
                source_i: self.source_i,
                source_j: self.source_j,
                beta: self.beta,
            },
        }
    }
}

/// Synthesizes a bag from `round(beta |B_i|)` instances of `bag_i` and
/// `round((1 - beta) |B_j|)` of `bag_j`, both sampled without replacement
/// and then shuffled together. The result keeps `bag_i`'s label and subsite.
pub fn remix_bags(
    bag_i: &Bag,
    bag_j: &Bag,
    beta: f64,
    taxonomy: &Taxonomy,
    config: &RemixConfig,
    seed: u64,
) -> Result<RemixOutcome> {
    if bag_i.len() < config.min_bag_size {
        return Err(Error::InvalidArgument(format!(
            "bag {} has {} instances; remixing needs at least {}",
            bag_i.id,
            bag_i.len(),
            config.min_bag_size
        )));
    }
    if bag_i.label == bag_j.label {
        return Err(Error::InvalidArgument(format!(
            "invalid remix pair: both bags are {}",
            bag_i.label
        )));
    }
    if !taxonomy.fine_higher(bag_i.label, bag_j.label) {
        return Err(Error::InvalidArgument(format!(
            "invalid remix pair: {} is not more urgent than {}",
            bag_i.label, bag_j.label
        )));
    }
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::InvalidArgument(format!("beta must be in (0, 1), got {beta}")));
    }
    if bag_i.dim() != bag_j.dim() {
        return Err(Error::Shape(format!(
            "cannot remix widths {} and {}",
            bag_i.dim(),
            bag_j.dim()
        )));
    }

    let take = |len: usize, share: f64| ((share * len as f64).round() as usize).clamp(1, len);
    let k_i = take(bag_i.len(), beta);
    let k_j = take(bag_j.len(), 1.0 - beta);

    let mut rng = stream(seed, domain::REMIX_BAGS, 0);
    let mut rows: Vec<&[f64]> = Vec::with_capacity(k_i + k_j);
    rows.extend(index::sample(&mut rng, bag_i.len(), k_i).into_iter().map(|k| bag_i.features.row(k)));
    rows.extend(index::sample(&mut rng, bag_j.len(), k_j).into_iter().map(|k| bag_j.features.row(k)));
    rows.shuffle(&mut rng);

    let r = mix_ratio(k_i, k_j)?;
    let targets = soften_labels(r, config.tau, bag_i.label, bag_j.label, taxonomy)?;
    let bag = Bag::new(
        format!("{}+{}", bag_i.id, bag_j.id),
        Tensor2::from_rows(&rows)?,
        bag_i.label,
        bag_i.subsite,
    )?;
    Ok(RemixOutcome {
        bag,
        targets,
        r,
        counts: (k_i, k_j),
        source_i: bag_i.id.clone(),
        source_j: bag_j.id.clone(),
        beta,
    })
}

/// A scheduled remix of training bags `i` and `j`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RemixPair {
    pub i: usize,
    pub j: usize,
    pub beta: f64,
}

/// Picks this epoch's remixes over `bags`.
///
/// Each bag with at least `min_bag_size` instances and at least one
/// strictly lower-priority partner is remixed with probability
/// `remix_probability`; the partner is uniform over the lower-priority
/// bags and `beta` is uniform on `[beta_min, beta_max]`.
pub fn select_remix_pairs(
    bags: &[Bag],
    taxonomy: &Taxonomy,
    config: &RemixConfig,
    seed: u64,
    epoch: u64,
) -> Vec<RemixPair> {
    let lower: Vec<Vec<usize>> = FineClass::ALL
        .iter()
        .map(|&c| {
            bags.iter()
                .enumerate()
                .filter(|(_, b)| taxonomy.fine_higher(c, b.label))
                .map(|(k, _)| k)
                .collect()
        })
        .collect();
    let mut rng = stream(seed, domain::REMIX_PAIRS, epoch);
    let mut pairs = Vec::new();
    for (i, bag) in bags.iter().enumerate() {
        let partners = &lower[bag.label.index()];
        if bag.len() < config.min_bag_size || partners.is_empty() {
            continue;
        }
        if rng.random::<f64>() >= config.remix_probability {
            continue;
        }
        let j = partners[rng.random_range(0..partners.len())];
        let beta = rng.random_range(config.beta_min..=config.beta_max);
        pairs.push(RemixPair { i, j, beta });
    }
    pairs
}
