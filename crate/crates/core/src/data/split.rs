use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use super::{Dataset, Split};
use crate::error::{Error, Result};
use crate::rng::{domain, stream};

pub const DEFAULT_RATIOS: [f64; 3] = [0.7, 0.15, 0.15];

/// Apportions `n` items by `ratios` with the largest-remainder rule.
///
/// Each share first gets the floor of its quota; leftover items go to the
/// largest fractional parts, earlier shares winning ties.
pub fn largest_remainder(n: usize, ratios: &[f64]) -> Vec<usize> {
    let quotas: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut left = n - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..ratios.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for i in order.into_iter().cycle() {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    counts
}

/// Stratified train/val/test assignment.
///
/// Bags already tagged [`Split::TestMixed`] are left alone; every other
/// bag is (re)assigned. Within each fine class the bags are shuffled with
/// a class-specific stream of `seed` and cut by [`largest_remainder`].
pub fn split(dataset: &Dataset, ratios: [f64; 3], seed: u64) -> Result<Dataset> {
    if ratios.iter().any(|&r| !(r > 0.0)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split ratios must be positive and sum to 1, got {ratios:?}"
        )));
    }
    let mut by_class: BTreeMap<_, Vec<usize>> = BTreeMap::new();
    for (i, e) in dataset.entries.iter().enumerate() {
        if e.split != Some(Split::TestMixed) {
            by_class.entry(e.bag.label).or_default().push(i);
        }
    }
    let mut out = dataset.clone();
    for (class, mut idx) in by_class {
        if idx.len() < 3 {
            return Err(Error::Stratification(format!(
                "class {class} has {} bags; at least 3 are needed",
                idx.len()
            )));
        }
        idx.shuffle(&mut stream(seed, domain::SPLIT, class.code() as u64));
        let counts = largest_remainder(idx.len(), &ratios);
        let tags = [Split::Train, Split::Val, Split::Test];
        let mut it = idx.into_iter();
        for (tag, count) in tags.into_iter().zip(counts) {
            for i in it.by_ref().take(count) {
                out.entries[i].split = Some(tag);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Bag, Entry};
    use crate::numkernel::Tensor2;
    use crate::taxonomy::{FineClass, Subsite};
    use proptest::prelude::*;

    fn toy(counts: &[(FineClass, usize)]) -> Dataset {
        let mut entries = Vec::new();
        for &(c, n) in counts {
            for i in 0..n {
                entries.push(Entry {
                    bag: Bag::new(
                        format!("{c}-{i}"),
                        Tensor2::filled(1, 2, i as f64),
                        c,
                        Subsite::Unknown,
                    )
                    .unwrap(),
                    split: None,
                    mixture: None,
                });
            }
        }
        Dataset::new(2, entries).unwrap()
    }

    #[test]
    fn hundred_bags_split_exactly() {
        assert_eq!(largest_remainder(100, &DEFAULT_RATIOS), vec![70, 15, 15]);
        let ds = split(&toy(&[(FineClass::TA, 100)]), DEFAULT_RATIOS, 0).unwrap();
        assert_eq!(ds.in_split(Split::Train).count(), 70);
        assert_eq!(ds.in_split(Split::Val).count(), 15);
        assert_eq!(ds.in_split(Split::Test).count(), 15);
    }

    #[test]
    fn ten_bags_use_largest_remainder() {
        // Quotas 7, 1.5, 1.5: the tie goes to the earlier share.
        assert_eq!(largest_remainder(10, &DEFAULT_RATIOS), vec![7, 2, 1]);
        assert_eq!(largest_remainder(3, &DEFAULT_RATIOS), vec![2, 1, 0]);
        assert_eq!(largest_remainder(30, &DEFAULT_RATIOS), vec![21, 5, 4]);
    }

    #[test]
    fn deterministic() {
        let ds = toy(&[(FineClass::HP, 20), (FineClass::LP, 13)]);
        assert_eq!(split(&ds, DEFAULT_RATIOS, 4).unwrap(), split(&ds, DEFAULT_RATIOS, 4).unwrap());
    }

    #[test]
    fn small_class_is_an_error() {
        let ds = toy(&[(FineClass::HP, 20), (FineClass::LP, 2)]);
        assert!(matches!(
            split(&ds, DEFAULT_RATIOS, 0),
            Err(Error::Stratification(_))
        ));
    }

    #[test]
    fn bad_ratios() {
        let ds = toy(&[(FineClass::HP, 20)]);
        assert!(split(&ds, [0.5, 0.5, 0.5], 0).is_err());
        assert!(split(&ds, [1.0, 0.0, 0.0], 0).is_err());
    }

    proptest! {
        #[test]
        fn partition_preserves_class_totals(
            counts in proptest::collection::vec(3usize..60, 1..7),
            seed in any::<u64>(),
        ) {
            let plan: Vec<_> = counts.iter().enumerate().map(|(i, &n)| (FineClass::ALL[i], n)).collect();
            let ds = split(&toy(&plan), DEFAULT_RATIOS, seed).unwrap();
            for &(c, n) in &plan {
                let per: Vec<usize> = [Split::Train, Split::Val, Split::Test]
                    .iter()
                    .map(|&s| ds.class_counts(s)[c.index()])
                    .collect();
                prop_assert_eq!(per.iter().sum::<usize>(), n);
                prop_assert_eq!(per, largest_remainder(n, &DEFAULT_RATIOS));
            }
        }
    }
}
