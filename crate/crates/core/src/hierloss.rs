//! Training objectives over a coarse/fine prediction pair.
//!
//! * joint cross-entropy, `-1/2 sum_h sum_c y_c^h ln p_c^h`;
//! * inter-hierarchy alignment: Jensen-Shannon divergence between the
//!   coarse head and the fine head summed up to coarse classes;
//! * upper-hierarchy dependence: fine probabilities multiplied by their
//!   parent's coarse probability, renormalized, and compared to the fine
//!   target with KL divergence.
//!
//! Each term exists twice: as a plain function on `f64` arrays and as a
//! recording on a [`Tape`] for training. The tests pin the two together.
//! All logs are natural; probabilities are floored at [`LOG_FLOOR`] inside
//! logarithms only.

use serde::{Deserialize, Serialize};

use crate::data::SoftLabel;
use crate::error::{Error, Result};
use crate::model::ProbPair;
use crate::numkernel::{order_free_sum, Tape, Tensor2, Var, LOG_FLOOR};
use crate::taxonomy::{FineClass, Taxonomy, N_COARSE, N_FINE};

/// Label floor used by the literal-direction UHD term.
pub const LITERAL_LABEL_FLOOR: f64 = 1e-8;

/// Which way the UHD KL divergence points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UhdDirection {
    /// `KL(y || p_adjusted)`: finite for hard labels.
    #[default]
    TargetToAdjusted,
    /// `KL(p_adjusted || y)` with `y` floored at [`LITERAL_LABEL_FLOOR`].
    AdjustedToTarget,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub use_iha: bool,
    pub use_uhd: bool,
    pub uhd_direction: UhdDirection,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            use_iha: true,
            use_uhd: true,
            uhd_direction: UhdDirection::TargetToAdjusted,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub ce: f64,
    pub iha: f64,
    pub uhd: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(ce: f64, iha: f64, uhd: f64) -> Self {
        LossBreakdown {
            ce,
            iha,
            uhd,
            total: ce + iha + uhd,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.ce.is_finite() && self.iha.is_finite() && self.uhd.is_finite() && self.total.is_finite()
    }

    /// Component-wise mean; `total` is recomputed from the means. Does not
    /// depend on the order of `items`.
    pub fn mean(items: &[LossBreakdown]) -> LossBreakdown {
        if items.is_empty() {
            return LossBreakdown::default();
        }
        let n = items.len() as f64;
        let s = |f: fn(&LossBreakdown) -> f64| {
            let mut v: Vec<f64> = items.iter().map(f).collect();
            order_free_sum(&mut v) / n
        };
        LossBreakdown::new(s(|l| l.ce), s(|l| l.iha), s(|l| l.uhd))
    }
}

fn ln_floor(x: f64) -> f64 {
    x.max(LOG_FLOOR).ln()
}

/// `KL(p || q)` with `0 ln 0 = 0`.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&p, _)| p > 0.0)
        .map(|(&p, &q)| p * (ln_floor(p) - ln_floor(q)))
        .sum()
}

/// Jensen-Shannon divergence, `(KL(p||m) + KL(q||m)) / 2` with `m` the
/// midpoint. Lies in `[0, ln 2]` for distributions.
pub fn js_divergence(p: &[f64], q: &[f64]) -> f64 {
    let m: Vec<f64> = p.iter().zip(q).map(|(a, b)| 0.5 * (a + b)).collect();
    0.5 * (kl_divergence(p, &m) + kl_divergence(q, &m))
}

pub fn cross_entropy_hier(probs: &ProbPair, targets: &SoftLabel) -> f64 {
    let level = |p: &[f64], y: &[f64]| -> f64 {
        p.iter().zip(y).map(|(&p, &y)| y * ln_floor(p)).sum()
    };
    -0.5 * (level(&probs.coarse, &targets.coarse) + level(&probs.fine, &targets.fine))
}

/// Sums fine probabilities into their coarse parents.
pub fn aggregate_fine_to_coarse(p_fine: &[f64; N_FINE], taxonomy: &Taxonomy) -> [f64; N_COARSE] {
    let mut out = [0.0; N_COARSE];
    for f in FineClass::ALL {
        out[taxonomy.parent(f).index()] += p_fine[f.index()];
    }
    out
}

pub fn iha_loss(p_coarse: &[f64; N_COARSE], p_fine: &[f64; N_FINE], taxonomy: &Taxonomy) -> f64 {
    js_divergence(p_coarse, &aggregate_fine_to_coarse(p_fine, taxonomy))
}

/// Each fine probability times its parent's coarse probability, then
/// L1-normalized.
pub fn uhd_adjust(
    p_fine: &[f64; N_FINE],
    p_coarse: &[f64; N_COARSE],
    taxonomy: &Taxonomy,
) -> Result<[f64; N_FINE]> {
    let mut out = [0.0; N_FINE];
    for f in FineClass::ALL {
        out[f.index()] = p_fine[f.index()] * p_coarse[taxonomy.parent(f).index()];
    }
    let total: f64 = out.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::Numeric(format!(
            "parent-weighted fine probabilities sum to {total}"
        )));
    }
    for x in &mut out {
        *x /= total;
    }
    Ok(out)
}

pub fn uhd_loss(p_adjusted: &[f64; N_FINE], target: &[f64; N_FINE]) -> f64 {
    kl_divergence(target, p_adjusted)
}

/// `KL(p_adjusted || y)` with the label floored, for comparison runs.
pub fn uhd_loss_literal(p_adjusted: &[f64; N_FINE], target: &[f64; N_FINE]) -> f64 {
    let floored: Vec<f64> = target.iter().map(|y| y.max(LITERAL_LABEL_FLOOR)).collect();
    kl_divergence(p_adjusted, &floored)
}

/// All three terms on one prediction. Disabled terms are exactly zero.
pub fn total_loss(
    probs: &ProbPair,
    targets: &SoftLabel,
    taxonomy: &Taxonomy,
    config: &LossConfig,
) -> Result<LossBreakdown> {
    let ce = cross_entropy_hier(probs, targets);
    let iha = if config.use_iha {
        iha_loss(&probs.coarse, &probs.fine, taxonomy)
    } else {
        0.0
    };
    let uhd = if config.use_uhd {
        let adj = uhd_adjust(&probs.fine, &probs.coarse, taxonomy)?;
        match config.uhd_direction {
            UhdDirection::TargetToAdjusted => uhd_loss(&adj, &targets.fine),
            UhdDirection::AdjustedToTarget => uhd_loss_literal(&adj, &targets.fine),
        }
    } else {
        0.0
    };
    Ok(LossBreakdown::new(ce, iha, uhd))
}

/// Loss terms recorded on a tape. Disabled terms are `None`.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub ce: Var,
    pub iha: Option<Var>,
    pub uhd: Option<Var>,
    pub total: Var,
}

impl LossVars {
    pub fn breakdown(&self, tape: &Tape) -> LossBreakdown {
        let get = |v: Option<Var>| v.map_or(0.0, |v| tape.scalar(v));
        LossBreakdown::new(tape.scalar(self.ce), get(self.iha), get(self.uhd))
    }
}

fn membership_tensor(taxonomy: &Taxonomy) -> Tensor2 {
    let m = taxonomy.membership();
    Tensor2::from_rows(&m).expect("7x3 membership")
}

/// `sum p (ln p - ln q)` on the tape, `p` and `q` of equal shape.
fn tape_kl(tape: &mut Tape, p: Var, q: Var) -> Result<Var> {
    let lp = tape.log(p);
    let lq = tape.log(q);
    let diff = tape.sub(lp, lq)?;
    let terms = tape.mul(p, diff)?;
    Ok(tape.sum(terms))
}

/// Sum over fine classes into a `1 x 3` row.
pub fn tape_aggregate(tape: &mut Tape, fine: Var, taxonomy: &Taxonomy) -> Result<Var> {
    let m = tape.constant(membership_tensor(taxonomy));
    tape.matmul(fine, m)
}

pub fn tape_cross_entropy(tape: &mut Tape, coarse: Var, fine: Var, targets: &SoftLabel) -> Result<Var> {
    let yc = tape.constant(Tensor2::row_vector(&targets.coarse));
    let yf = tape.constant(Tensor2::row_vector(&targets.fine));
    let lc = tape.log(coarse);
    let lf = tape.log(fine);
    let tc = tape.mul(yc, lc)?;
    let tf = tape.mul(yf, lf)?;
    let sc = tape.sum(tc);
    let sf = tape.sum(tf);
    let s = tape.add(sc, sf)?;
    Ok(tape.scale(s, -0.5))
}

pub fn tape_iha(tape: &mut Tape, coarse: Var, fine: Var, taxonomy: &Taxonomy) -> Result<Var> {
    let agg = tape_aggregate(tape, fine, taxonomy)?;
    let s = tape.add(coarse, agg)?;
    let m = tape.scale(s, 0.5);
    let a = tape_kl(tape, coarse, m)?;
    let b = tape_kl(tape, agg, m)?;
    let ab = tape.add(a, b)?;
    Ok(tape.scale(ab, 0.5))
}

pub fn tape_uhd_adjust(tape: &mut Tape, fine: Var, coarse: Var, taxonomy: &Taxonomy) -> Result<Var> {
    let mt = tape.constant(membership_tensor(taxonomy).transpose());
    let parent_prob = tape.matmul(coarse, mt)?;
    let prod = tape.mul(fine, parent_prob)?;
    let total = tape.sum(prod);
    tape.div_scalar(prod, total)
}

pub fn tape_uhd(
    tape: &mut Tape,
    coarse: Var,
    fine: Var,
    target: &[f64; N_FINE],
    taxonomy: &Taxonomy,
    direction: UhdDirection,
) -> Result<Var> {
    let adj = tape_uhd_adjust(tape, fine, coarse, taxonomy)?;
    match direction {
        UhdDirection::TargetToAdjusted => {
            let y = tape.constant(Tensor2::row_vector(target));
            let ln_y: Vec<f64> = target.iter().map(|&y| if y > 0.0 { ln_floor(y) } else { 0.0 }).collect();
            let ln_y = tape.constant(Tensor2::row_vector(&ln_y));
            let ln_adj = tape.log(adj);
            let diff = tape.sub(ln_y, ln_adj)?;
            let terms = tape.mul(y, diff)?;
            Ok(tape.sum(terms))
        }
        UhdDirection::AdjustedToTarget => {
            let floored: Vec<f64> = target.iter().map(|y| y.max(LITERAL_LABEL_FLOOR)).collect();
            let y = tape.constant(Tensor2::row_vector(&floored));
            tape_kl(tape, adj, y)
        }
    }
}

/// Records the configured objective on `tape` for `1 x 3` / `1 x 7`
/// probability rows.
pub fn tape_total_loss(
    tape: &mut Tape,
    coarse: Var,
    fine: Var,
    targets: &SoftLabel,
    taxonomy: &Taxonomy,
    config: &LossConfig,
) -> Result<LossVars> {
    let ce = tape_cross_entropy(tape, coarse, fine, targets)?;
    let mut total = ce;
    let iha = if config.use_iha {
        let v = tape_iha(tape, coarse, fine, taxonomy)?;
        total = tape.add(total, v)?;
        Some(v)
    } else {
        None
    };
    let uhd = if config.use_uhd {
        let v = tape_uhd(tape, coarse, fine, &targets.fine, taxonomy, config.uhd_direction)?;
        total = tape.add(total, v)?;
        Some(v)
    } else {
        None
    };
    Ok(LossVars { ce, iha, uhd, total })
}
