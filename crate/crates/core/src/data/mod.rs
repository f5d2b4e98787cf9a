//! Bags, soft targets, datasets and their persistence.

mod generate;
mod io;
mod split;

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use generate::{
    generate_mixed_test, generate_synthetic, mixed_bag, GenConfig, MixedConfig,
};
pub use io::{
    decode_bag, encode_bag, load_dataset, read_bag, read_manifest, save_dataset, write_bag,
    write_manifest,
    ManifestEntry, BAG_MAGIC, BAG_VERSION,
};
pub use split::{largest_remainder, split, DEFAULT_RATIOS};

use crate::error::{Error, Result};
use crate::numkernel::Tensor2;
use crate::taxonomy::{FineClass, Subsite, Taxonomy, N_COARSE, N_FINE};

/// A set of instance feature vectors with a slide-level label.
#[derive(Debug, Clone, PartialEq)]
pub struct Bag {
    pub id: String,
    pub features: Tensor2,
    pub label: FineClass,
    pub subsite: Subsite,
}

impl Bag {
    pub fn new(
        id: impl Into<String>,
        features: Tensor2,
        label: FineClass,
        subsite: Subsite,
    ) -> Result<Self> {
        let id = id.into();
        if features.rows() == 0 || features.cols() == 0 {
            return Err(Error::InvalidArgument(format!("bag {id} is empty")));
        }
        if !features.is_finite() {
            return Err(Error::InvalidArgument(format!("bag {id} has non-finite features")));
        }
        Ok(Bag {
            id,
            features,
            label,
            subsite,
        })
    }

    /// Number of instances.
    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }
}

/// Training targets at both levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftLabel {
    pub coarse: [f64; N_COARSE],
    pub fine: [f64; N_FINE],
}

impl SoftLabel {
    /// One-hot targets for a single fine class and its parent.
    pub fn one_hot(fine: FineClass, taxonomy: &Taxonomy) -> Self {
        let mut label = SoftLabel {
            coarse: [0.0; N_COARSE],
            fine: [0.0; N_FINE],
        };
        label.fine[fine.index()] = 1.0;
        label.coarse[taxonomy.parent(fine).index()] = 1.0;
        label
    }

    /// Both vectors non-negative and summing to one within `1e-9`.
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("coarse", &self.coarse[..]), ("fine", &self.fine[..])] {
            if v.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} target has invalid entries")));
            }
            let s: f64 = v.iter().sum();
            if (s - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidArgument(format!("{name} target sums to {s}")));
            }
        }
        Ok(())
    }
}

/// Where a training sample came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Pure,
    Remixed {
        source_i: String,
        source_j: String,
        beta: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub bag: Bag,
    pub targets: SoftLabel,
    pub provenance: Provenance,
}

impl TrainSample {
    pub fn pure(bag: Bag, taxonomy: &Taxonomy) -> Self {
        let targets = SoftLabel::one_hot(bag.label, taxonomy);
        TrainSample {
            bag,
            targets,
            provenance: Provenance::Pure,
        }
    }

    pub fn is_pure(&self) -> bool {
        self.provenance == Provenance::Pure
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Split {
    #[serde(rename = "train")]
    Train,
    #[serde(rename = "val")]
    Val,
    #[serde(rename = "test")]
    Test,
    #[serde(rename = "test-mixed")]
    TestMixed,
}

impl Split {
    pub const ALL: [Split; 4] = [Split::Train, Split::Val, Split::Test, Split::TestMixed];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::TestMixed => "test-mixed",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "unknown split {s:?} (expected train, val, test or test-mixed)"
                ))
            })
    }
}

/// Ground truth for a bag built from two symptom classes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mixture {
    pub urgent: FineClass,
    pub other: FineClass,
    /// Fraction of the bag's instances drawn from the urgent class region.
    pub urgent_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub bag: Bag,
    pub split: Option<Split>,
    pub mixture: Option<Mixture>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub dim: usize,
    pub entries: Vec<Entry>,
}

impl Dataset {
    pub fn new(dim: usize, entries: Vec<Entry>) -> Result<Self> {
        let ds = Dataset { dim, entries };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !seen.insert(e.bag.id.as_str()) {
                return Err(Error::InvalidArgument(format!("duplicate bag id {}", e.bag.id)));
            }
            if e.bag.dim() != self.dim {
                return Err(Error::Shape(format!(
                    "bag {} has width {}, dataset width is {}",
                    e.bag.id,
                    e.bag.dim(),
                    self.dim
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn in_split(&self, split: Split) -> impl Iterator<Item = &Entry> {
        self.entries.iter().filter(move |e| e.split == Some(split))
    }

    pub fn bags_in(&self, split: Split) -> Vec<Bag> {
        self.in_split(split).map(|e| e.bag.clone()).collect()
    }

    /// Appends all entries of `other`, which must share the feature width.
    pub fn extend(&mut self, other: Dataset) -> Result<()> {
        if other.dim != self.dim {
            return Err(Error::Shape(format!(
                "cannot merge width {} into width {}",
                other.dim, self.dim
            )));
        }
        self.entries.extend(other.entries);
        self.validate()
    }

    /// Per-split, per-class bag counts in fine-class code order.
    pub fn class_counts(&self, split: Split) -> [usize; N_FINE] {
        let mut counts = [0; N_FINE];
        for e in self.in_split(split) {
            counts[e.bag.label.index()] += 1;
        }
        counts
    }

    /// Bag sizes (instance counts) of the given entries, or of all entries
    /// when `split` is `None`.
    pub fn bag_sizes(&self, split: Option<Split>) -> Vec<usize> {
        self.entries
            .iter()
            .filter(|e| split.is_none() || e.split == split)
            .map(|e| e.bag.len())
            .collect()
    }

    /// Counts in the layout of a class-distribution table: one row per
    /// split, one column per fine class plus a total.
    pub fn distribution_table(&self) -> String {
        let mut out = format!("{:<11}", "");
        for c in FineClass::ALL {
            out.push_str(&format!("{:>6}", c.name()));
        }
        out.push_str(&format!("{:>8}\n", "total"));
        for split in Split::ALL {
            let counts = self.class_counts(split);
            let total: usize = counts.iter().sum();
            if total == 0 {
                continue;
            }
            out.push_str(&format!("{:<11}", split.name()));
            for n in counts {
                out.push_str(&format!("{n:>6}"));
            }
            out.push_str(&format!("{total:>8}\n"));
        }
        out
    }
}
