use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Bag, Entry, Mixture, SoftLabel};
use crate::error::{Error, Result};
use crate::hierloss::{total_loss, LossBreakdown, LossConfig};
use crate::model::{predict, Gate, ModelParams, ProbPair};
use crate::numkernel::order_free_sum;
use crate::taxonomy::{CoarseClass, FineClass, Taxonomy};

/// Twice the Mann-Whitney U statistic of `scores` for positives over
/// negatives, with ties credited one half. `None` when either group is
/// empty. Returned as `(2U, positives, negatives)`.
pub fn auroc_twice_u(scores: &[f64], positive: &[bool]) -> Option<(u128, u64, u64)> {
    assert_eq!(scores.len(), positive.len(), "one label per score");
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let (mut twice_u, mut neg_below, mut pos_total) = (0u128, 0u128, 0u64);
    let mut k = 0;
    while k < order.len() {
        let mut end = k;
        let (mut p, mut q) = (0u128, 0u128);
        while end < order.len() && scores[order[end]].total_cmp(&scores[order[k]]).is_eq() {
            if positive[order[end]] {
                p += 1;
            } else {
                q += 1;
            }
            end += 1;
        }
        twice_u += p * (2 * neg_below + q);
        neg_below += q;
        pos_total += p as u64;
        k = end;
    }
    let neg_total = neg_below as u64;
    (pos_total > 0 && neg_total > 0).then_some((twice_u, pos_total, neg_total))
}

/// Area under the ROC curve, or `None` when a group is empty.
pub fn auroc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    auroc_twice_u(scores, positive).map(|(u2, p, n)| u2 as f64 / (2.0 * p as f64 * n as f64))
}

/// Metrics for one hierarchy level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelMetrics {
    pub accuracy: f64,
    /// Mean one-vs-rest AUROC over classes with both positives and
    /// negatives in the split.
    pub macro_auroc: Option<f64>,
    pub per_class_auroc: Vec<Option<f64>>,
    /// Classes left out of `macro_auroc`.
    pub excluded_classes: Vec<String>,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    pub class_counts: Vec<usize>,
}

fn level_metrics(names: &[String], labels: &[usize], probs: &[&[f64]]) -> LevelMetrics {
    let k = names.len();
    let mut confusion = vec![vec![0usize; k]; k];
    for (&y, p) in labels.iter().zip(probs) {
        confusion[y][crate::numkernel::argmax(p)] += 1;
    }
    let class_counts: Vec<usize> = confusion.iter().map(|r| r.iter().sum()).collect();
    let correct: usize = (0..k).map(|c| confusion[c][c]).sum();
    let per_class_auroc: Vec<Option<f64>> = (0..k)
        .map(|c| {
            let scores: Vec<f64> = probs.iter().map(|p| p[c]).collect();
            let pos: Vec<bool> = labels.iter().map(|&y| y == c).collect();
            auroc(&scores, &pos)
        })
        .collect();
    let mut present: Vec<f64> = per_class_auroc.iter().flatten().copied().collect();
    let macro_auroc = (!present.is_empty()).then(|| {
        let n = present.len() as f64;
        order_free_sum(&mut present) / n
    });
    let excluded_classes = per_class_auroc
        .iter()
        .zip(names)
        .filter(|(a, _)| a.is_none())
        .map(|(_, n)| n.clone())
        .collect();
    LevelMetrics {
        accuracy: correct as f64 / labels.len() as f64,
        macro_auroc,
        per_class_auroc,
        excluded_classes,
        confusion,
        class_counts,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n: usize,
    pub coarse: LevelMetrics,
    pub fine: LevelMetrics,
    /// Recall with every Adenoma subclass as the positive class; `None`
    /// without positives.
    pub adenoma_recall: Option<f64>,
    pub adenoma_positives: usize,
    /// Mean of all three loss terms, whatever the training configuration.
    pub loss: LossBreakdown,
    /// Mean of the terms enabled in the configuration that was passed in.
    pub objective: f64,
}

/// Builds a report from per-sample predictions. The result does not depend
/// on sample order.
pub fn metrics_from_predictions(
    labels: &[FineClass],
    probs: &[ProbPair],
    taxonomy: &Taxonomy,
    loss_config: &LossConfig,
) -> Result<MetricsReport> {
    if labels.is_empty() {
        return Err(Error::InvalidArgument("cannot evaluate an empty split".into()));
    }
    if labels.len() != probs.len() {
        return Err(Error::Shape(format!("{} labels for {} predictions", labels.len(), probs.len())));
    }
    let fine_names: Vec<String> = FineClass::ALL.iter().map(|c| c.name().to_string()).collect();
    let coarse_names: Vec<String> = CoarseClass::ALL.iter().map(|c| c.name().to_string()).collect();
    let fine_labels: Vec<usize> = labels.iter().map(|c| c.index()).collect();
    let coarse_labels: Vec<usize> = labels.iter().map(|&c| taxonomy.parent(c).index()).collect();
    let fine_probs: Vec<&[f64]> = probs.iter().map(|p| &p.fine[..]).collect();
    let coarse_probs: Vec<&[f64]> = probs.iter().map(|p| &p.coarse[..]).collect();

    let adenoma = taxonomy.children(CoarseClass::Adenoma);
    let is_adenoma = |c: FineClass| adenoma.contains(&c);
    let positives = labels.iter().filter(|&&c| is_adenoma(c)).count();
    let hits = labels
        .iter()
        .zip(probs)
        .filter(|(&c, p)| is_adenoma(c) && is_adenoma(p.fine_argmax()))
        .count();

    let all_terms = LossConfig {
        use_iha: true,
        use_uhd: true,
        ..*loss_config
    };
    let mut losses = Vec::with_capacity(labels.len());
    let mut objective = Vec::with_capacity(labels.len());
    for (&c, p) in labels.iter().zip(probs) {
        let b = total_loss(p, &SoftLabel::one_hot(c, taxonomy), taxonomy, &all_terms)?;
        let mut enabled = b.ce;
        if loss_config.use_iha {
            enabled += b.iha;
        }
        if loss_config.use_uhd {
            enabled += b.uhd;
        }
        losses.push(b);
        objective.push(enabled);
    }
    let n = labels.len();
    Ok(MetricsReport {
        n,
        coarse: level_metrics(&coarse_names, &coarse_labels, &coarse_probs),
        fine: level_metrics(&fine_names, &fine_labels, &fine_probs),
        adenoma_recall: (positives > 0).then(|| hits as f64 / positives as f64),
        adenoma_positives: positives,
        loss: LossBreakdown::mean(&losses),
        objective: order_free_sum(&mut objective) / n as f64,
    })
}

fn predict_all(params: &ModelParams, bags: &[&Bag], gate: Gate) -> Result<Vec<ProbPair>> {
    bags.par_iter().map(|b| predict(params, b, gate).map(|p| p.probs)).collect()
}

/// Scores `bags` against their own labels. Predictions run in parallel.
pub fn evaluate(
    params: &ModelParams,
    bags: &[Bag],
    taxonomy: &Taxonomy,
    gate: Gate,
    loss_config: &LossConfig,
) -> Result<MetricsReport> {
    let refs: Vec<&Bag> = bags.iter().collect();
    let probs = predict_all(params, &refs, gate)?;
    let labels: Vec<FineClass> = bags.iter().map(|b| b.label).collect();
    metrics_from_predictions(&labels, &probs, taxonomy, loss_config)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorityRow {
    pub id: String,
    pub urgent: FineClass,
    pub other: FineClass,
    pub urgent_fraction: f64,
    pub p_urgent: f64,
    pub p_other: f64,
    pub predicted: FineClass,
    pub win: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorityReport {
    pub n: usize,
    /// Share of bags whose fine argmax is the urgent constituent.
    pub win_rate: f64,
    /// Mean of `p_urgent - p_other`.
    pub mean_gap: f64,
    pub rows: Vec<PriorityRow>,
}

pub fn priority_from_predictions(
    ids: &[String],
    mixtures: &[Mixture],
    probs: &[ProbPair],
) -> Result<PriorityReport> {
    if mixtures.is_empty() {
        return Err(Error::Input("no mixed bags to evaluate".into()));
    }
    if ids.len() != mixtures.len() || mixtures.len() != probs.len() {
        return Err(Error::Shape("ids, mixtures and predictions differ in length".into()));
    }
    let rows: Vec<PriorityRow> = ids
        .iter()
        .zip(mixtures)
        .zip(probs)
        .map(|((id, m), p)| {
            let predicted = p.fine_argmax();
            PriorityRow {
                id: id.clone(),
                urgent: m.urgent,
                other: m.other,
                urgent_fraction: m.urgent_fraction,
                p_urgent: p.fine[m.urgent.index()],
                p_other: p.fine[m.other.index()],
                predicted,
                win: predicted == m.urgent,
            }
        })
        .collect();
    let n = rows.len();
    let wins = rows.iter().filter(|r| r.win).count();
    let mut gaps: Vec<f64> = rows.iter().map(|r| r.p_urgent - r.p_other).collect();
    Ok(PriorityReport {
        n,
        win_rate: wins as f64 / n as f64,
        mean_gap: order_free_sum(&mut gaps) / n as f64,
        rows,
    })
}

/// Checks whether the model picks the urgent class on mixed bags.
pub fn evaluate_priority(
    params: &ModelParams,
    entries: &[Entry],
    taxonomy: &Taxonomy,
    gate: Gate,
) -> Result<PriorityReport> {
    let mut mixtures = Vec::with_capacity(entries.len());
    for e in entries {
        let m = e
            .mixture
            .ok_or_else(|| Error::Input(format!("bag {} has no mixture metadata", e.bag.id)))?;
        if !taxonomy.fine_higher(m.urgent, m.other) {
            return Err(Error::Input(format!(
                "bag {}: {} is not more urgent than {}",
                e.bag.id, m.urgent, m.other
            )));
        }
        mixtures.push(m);
    }
    let bags: Vec<&Bag> = entries.iter().map(|e| &e.bag).collect();
    let probs = predict_all(params, &bags, gate)?;
    let ids: Vec<String> = entries.iter().map(|e| e.bag.id.clone()).collect();
    priority_from_predictions(&ids, &mixtures, &probs)
}
