//! The two-level class hierarchy.
//!
//! Fine classes (H=2) roll up into coarse classes (H=1) through a total
//! parent map. Each level also carries a strict priority order; a lower
//! rank means a more urgent diagnosis. Remixing pairs bags by fine-level
//! priority, and the adenoma-positive recall metric is defined through the
//! parent map.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const N_FINE: usize = 7;
pub const N_COARSE: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FineClass {
    TA,
    TVA,
    TSA,
    HP,
    SSL,
    IP,
    LP,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CoarseClass {
    Adenoma,
    Serrated,
    Others,
}

impl FineClass {
    pub const ALL: [FineClass; N_FINE] = [
        FineClass::TA,
        FineClass::TVA,
        FineClass::TSA,
        FineClass::HP,
        FineClass::SSL,
        FineClass::IP,
        FineClass::LP,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            FineClass::TA => "TA",
            FineClass::TVA => "TVA",
            FineClass::TSA => "TSA",
            FineClass::HP => "HP",
            FineClass::SSL => "SSL",
            FineClass::IP => "IP",
            FineClass::LP => "LP",
        }
    }
}

impl CoarseClass {
    pub const ALL: [CoarseClass; N_COARSE] =
        [CoarseClass::Adenoma, CoarseClass::Serrated, CoarseClass::Others];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            CoarseClass::Adenoma => "Adenoma",
            CoarseClass::Serrated => "Serrated",
            CoarseClass::Others => "Others",
        }
    }
}

impl fmt::Display for FineClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl fmt::Display for CoarseClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FineClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FineClass::ALL
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown fine class {s:?}")))
    }
}

/// Specimen acquisition site.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Subsite {
    Proximal,
    Distal,
    Unknown,
}

impl Subsite {
    pub const ALL: [Subsite; 3] = [Subsite::Proximal, Subsite::Distal, Subsite::Unknown];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn one_hot(self) -> [f64; 3] {
        let mut v = [0.0; 3];
        v[self as usize] = 1.0;
        v
    }
}

/// Which hierarchy level a class belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Level {
    Coarse,
    Fine,
}

/// A class at either level, for level-checked comparisons.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Class {
    Coarse(CoarseClass),
    Fine(FineClass),
}

impl Class {
    pub fn level(self) -> Level {
        match self {
            Class::Coarse(_) => Level::Coarse,
            Class::Fine(_) => Level::Fine,
        }
    }
}

impl From<FineClass> for Class {
    fn from(c: FineClass) -> Self {
        Class::Fine(c)
    }
}

impl From<CoarseClass> for Class {
    fn from(c: CoarseClass) -> Self {
        Class::Coarse(c)
    }
}

/// Parent map plus per-level priority ranks.
///
/// Construct through [`Taxonomy::new`] (validated) or take the
/// [`Default`], which maps TA/TVA/TSA to Adenoma, HP/SSL to Serrated and
/// IP/LP to Others, with fine priority TA > TVA > TSA > SSL > HP > IP > LP.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "TaxonomySpec", into = "TaxonomySpec")]
pub struct Taxonomy {
    parent: [CoarseClass; N_FINE],
    fine_rank: [u8; N_FINE],
    coarse_rank: [u8; N_COARSE],
}

/// Serialized form of a [`Taxonomy`]. Ranks are given as ordered lists,
/// most urgent first.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaxonomySpec {
    pub parent: Vec<(FineClass, CoarseClass)>,
    pub fine_priority: Vec<FineClass>,
    pub coarse_priority: Vec<CoarseClass>,
}

impl Default for Taxonomy {
    fn default() -> Self {
        use CoarseClass::*;
        use FineClass::*;
        Taxonomy::new(
            [Adenoma, Adenoma, Adenoma, Serrated, Serrated, Others, Others],
            &[TA, TVA, TSA, SSL, HP, IP, LP],
            &[Adenoma, Serrated, Others],
        )
        .expect("built-in taxonomy is valid")
    }
}

impl Taxonomy {
    /// `parent` is indexed by fine class code; priority lists run from most
    /// to least urgent and must each be a permutation of their level.
    pub fn new(
        parent: [CoarseClass; N_FINE],
        fine_priority: &[FineClass],
        coarse_priority: &[CoarseClass],
    ) -> Result<Self> {
        let fine_rank = ranks_from_order(fine_priority, |c| c.index(), N_FINE, "fine")?;
        let coarse_rank = ranks_from_order(coarse_priority, |c| c.index(), N_COARSE, "coarse")?;
        let tax = Taxonomy {
            parent,
            fine_rank: fine_rank.try_into().unwrap(),
            coarse_rank: coarse_rank.try_into().unwrap(),
        };
        tax.validate()?;
        Ok(tax)
    }

    fn validate(&self) -> Result<()> {
        for coarse in CoarseClass::ALL {
            if self.children(coarse).is_empty() {
                return Err(Error::Config(format!("coarse class {coarse} has no children")));
            }
        }
        let r = |c: CoarseClass| self.coarse_rank[c.index()];
        if !(r(CoarseClass::Adenoma) < r(CoarseClass::Serrated)
            && r(CoarseClass::Serrated) < r(CoarseClass::Others))
        {
            return Err(Error::Config(
                "coarse priority must be Adenoma, Serrated, Others".into(),
            ));
        }
        for a in FineClass::ALL {
            for b in FineClass::ALL {
                if r(self.parent(a)) < r(self.parent(b)) && self.fine_rank(a) > self.fine_rank(b) {
                    return Err(Error::Config(format!(
                        "fine priority of {a} must precede {b} to agree with coarse priority"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn parent(&self, c: FineClass) -> CoarseClass {
        self.parent[c.index()]
    }

    /// Fine classes whose parent is `c`, in code order.
    pub fn children(&self, c: CoarseClass) -> Vec<FineClass> {
        FineClass::ALL
            .into_iter()
            .filter(|&f| self.parent(f) == c)
            .collect()
    }

    pub fn fine_rank(&self, c: FineClass) -> u8 {
        self.fine_rank[c.index()]
    }

    pub fn coarse_rank(&self, c: CoarseClass) -> u8 {
        self.coarse_rank[c.index()]
    }

    /// Strict priority comparison within a single level.
    pub fn higher_priority(&self, a: Class, b: Class, level: Level) -> Result<bool> {
        match (a, b) {
            (Class::Fine(a), Class::Fine(b)) if level == Level::Fine => Ok(self.fine_higher(a, b)),
            (Class::Coarse(a), Class::Coarse(b)) if level == Level::Coarse => {
                Ok(self.coarse_rank(a) < self.coarse_rank(b))
            }
            _ => Err(Error::InvalidArgument(format!(
                "cannot compare {a:?} and {b:?} at level {level:?}"
            ))),
        }
    }

    pub fn fine_higher(&self, a: FineClass, b: FineClass) -> bool {
        self.fine_rank(a) < self.fine_rank(b)
    }

    /// Fine classes ordered from most to least urgent.
    pub fn fine_priority_order(&self) -> Vec<FineClass> {
        let mut v = FineClass::ALL.to_vec();
        v.sort_by_key(|&c| self.fine_rank(c));
        v
    }

    pub fn coarse_priority_order(&self) -> Vec<CoarseClass> {
        let mut v = CoarseClass::ALL.to_vec();
        v.sort_by_key(|&c| self.coarse_rank(c));
        v
    }

    /// 0/1 membership matrix, `m[f][c] = 1` iff `parent(f) = c`.
    pub fn membership(&self) -> [[f64; N_COARSE]; N_FINE] {
        let mut m = [[0.0; N_COARSE]; N_FINE];
        for f in FineClass::ALL {
            m[f.index()][self.parent(f).index()] = 1.0;
        }
        m
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("taxonomy serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

fn ranks_from_order<T: fmt::Debug + Copy>(
    order: &[T],
    index: impl Fn(T) -> usize,
    n: usize,
    level: &str,
) -> Result<Vec<u8>> {
    if order.len() != n {
        return Err(Error::Config(format!(
            "{level} priority lists {} classes, expected {n}",
            order.len()
        )));
    }
    let mut ranks = vec![u8::MAX; n];
    for (rank, &c) in order.iter().enumerate() {
        let slot = &mut ranks[index(c)];
        if *slot != u8::MAX {
            return Err(Error::Config(format!("{level} priority repeats {c:?}")));
        }
        *slot = rank as u8;
    }
    Ok(ranks)
}

impl TryFrom<TaxonomySpec> for Taxonomy {
    type Error = Error;

    fn try_from(spec: TaxonomySpec) -> Result<Self> {
        let mut parent: [Option<CoarseClass>; N_FINE] = [None; N_FINE];
        for (f, c) in spec.parent {
            if parent[f.index()].replace(c).is_some() {
                return Err(Error::Config(format!("parent of {f} given twice")));
            }
        }
        let mut resolved = [CoarseClass::Adenoma; N_FINE];
        for f in FineClass::ALL {
            resolved[f.index()] =
                parent[f.index()].ok_or_else(|| Error::Config(format!("{f} has no parent")))?;
        }
        Taxonomy::new(resolved, &spec.fine_priority, &spec.coarse_priority)
    }
}

impl From<Taxonomy> for TaxonomySpec {
    fn from(t: Taxonomy) -> Self {
        TaxonomySpec {
            parent: FineClass::ALL.iter().map(|&f| (f, t.parent(f))).collect(),
            fine_priority: t.fine_priority_order(),
            coarse_priority: t.coarse_priority_order(),
        }
    }
}
