use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamConfig, AdamState};
use super::metrics::{evaluate, MetricsReport};
use crate::data::{Bag, Dataset, Split, TrainSample};
use crate::error::{Error, Result};
use crate::hierloss::{tape_total_loss, LossBreakdown, LossConfig};
use crate::model::{tape_forward, Gate, ModelParams, ParamVars, DEFAULT_ATTENTION_WIDTH};
use crate::numkernel::{Tape, Tensor2};
use crate::remix::{remix_bags, select_remix_pairs, RemixConfig};
use crate::rng::{derive, domain, stream};
use crate::taxonomy::Taxonomy;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub epochs: usize,
    pub attention_width: usize,
    pub loss: LossConfig,
    /// When false the subsite gate stays closed in training and evaluation.
    pub use_subsite: bool,
    pub remix: RemixConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            adam: AdamConfig::default(),
            epochs: 50,
            attention_width: DEFAULT_ATTENTION_WIDTH,
            loss: LossConfig::default(),
            use_subsite: true,
            remix: RemixConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.adam.validate()?;
        self.remix.validate()?;
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.attention_width == 0 {
            return Err(Error::Config("attention_width must be at least 1".into()));
        }
        Ok(())
    }

    pub fn gate(&self) -> Gate {
        Gate::from_subsite_flag(self.use_subsite)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ProvenanceCounts {
    pub pure: usize,
    pub remixed: usize,
}

/// One line of the run history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub seed: u64,
    pub train_loss: LossBreakdown,
    pub provenance: ProvenanceCounts,
    pub val: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHistory {
    pub seed: u64,
    pub config: TrainConfig,
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were returned.
    pub best_epoch: usize,
}

impl RunHistory {
    /// One JSON object per epoch.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for e in &self.epochs {
            out.push_str(&serde_json::to_string(e)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(seed: u64, config: TrainConfig, best_epoch: usize, text: &str) -> Result<Self> {
        let epochs = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<std::result::Result<Vec<EpochRecord>, _>>()?;
        Ok(RunHistory {
            seed,
            config,
            epochs,
            best_epoch,
        })
    }

    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_jsonl()?.as_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn best(&self) -> &EpochRecord {
        &self.epochs[self.best_epoch - 1]
    }
}

/// `a` beats `b`: higher fine accuracy, then lower objective. Equal
/// reports keep the earlier epoch.
fn better(a: &MetricsReport, b: &MetricsReport) -> bool {
    a.fine.accuracy > b.fine.accuracy || (a.fine.accuracy == b.fine.accuracy && a.objective < b.objective)
}

/// Builds the epoch's sample list: pure samples with this epoch's remixes
/// replacing their high-priority source.
fn epoch_samples(
    train: &[Bag],
    taxonomy: &Taxonomy,
    config: &TrainConfig,
    seed: u64,
    epoch: u64,
) -> Result<Vec<TrainSample>> {
    let pairs = select_remix_pairs(train, taxonomy, &config.remix, seed, epoch);
    let remixed: Vec<(usize, TrainSample)> = pairs
        .par_iter()
        .map(|p| {
            let s = derive(seed, epoch, p.i as u64);
            remix_bags(&train[p.i], &train[p.j], p.beta, taxonomy, &config.remix, s).map(|o| (p.i, o.into_sample()))
        })
        .collect::<Result<_>>()?;
    let mut samples: Vec<TrainSample> = train.iter().map(|b| TrainSample::pure(b.clone(), taxonomy)).collect();
    for (i, s) in remixed {
        samples[i] = s;
    }
    Ok(samples)
}

/// One forward/backward pass; returns the loss terms and per-tensor
/// gradients in parameter order.
fn sample_gradients(
    params: &ModelParams,
    sample: &TrainSample,
    taxonomy: &Taxonomy,
    config: &TrainConfig,
) -> Result<(LossBreakdown, Vec<Tensor2>)> {
    let mut tape = Tape::new();
    let vars = ParamVars::register(&mut tape, params);
    let fwd = tape_forward(&mut tape, &vars, &sample.bag, config.gate())?;
    let loss = tape_total_loss(&mut tape, fwd.coarse, fwd.fine, &sample.targets, taxonomy, &config.loss)?;
    let breakdown = loss.breakdown(&tape);
    if !breakdown.is_finite() {
        return Err(Error::NonFiniteLoss {
            sample_id: sample.bag.id.clone(),
            detail: format!("{breakdown:?}"),
        });
    }
    let grads = tape.backward(loss.total, &Tensor2::scalar(1.0))?;
    let g = vars.vars.iter().map(|&v| grads.wrt(v)).collect();
    Ok((breakdown, g))
}

/// Trains from scratch on the train split and returns the parameters of
/// the best validation epoch with the full history.
pub fn train(
    config: &TrainConfig,
    dataset: &Dataset,
    taxonomy: &Taxonomy,
    seed: u64,
) -> Result<(ModelParams, RunHistory)> {
    config.validate()?;
    let train_bags = dataset.bags_in(Split::Train);
    let val_bags = dataset.bags_in(Split::Val);
    if train_bags.is_empty() {
        return Err(Error::Config("dataset has no train split".into()));
    }
    if val_bags.is_empty() {
        return Err(Error::Config("dataset has no val split".into()));
    }

    let mut params = ModelParams::init(dataset.dim, config.attention_width, seed)?;
    let mut adam = AdamState::zeros_like(params.tensors());
    let mut history = RunHistory {
        seed,
        config: config.clone(),
        epochs: Vec::with_capacity(config.epochs),
        best_epoch: 0,
    };
    let mut best: Option<(ModelParams, MetricsReport)> = None;

    for epoch in 0..config.epochs as u64 {
        let samples = epoch_samples(&train_bags, taxonomy, config, seed, epoch)?;
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut stream(seed, domain::SHUFFLE, epoch));

        let mut losses = Vec::with_capacity(samples.len());
        for &k in &order {
            let (loss, grads) = sample_gradients(&params, &samples[k], taxonomy, config)?;
            adam_step(&mut params.tensors_mut(), &grads, &mut adam, &config.adam)?;
            losses.push(loss);
        }
        let remixed = samples.iter().filter(|s| !s.is_pure()).count();
        let val = evaluate(&params, &val_bags, taxonomy, config.gate(), &config.loss)?;
        if best.as_ref().is_none_or(|(_, b)| better(&val, b)) {
            best = Some((params.clone(), val.clone()));
            history.best_epoch = epoch as usize + 1;
        }
        history.epochs.push(EpochRecord {
            epoch: epoch as usize + 1,
            seed,
            train_loss: LossBreakdown::mean(&losses),
            provenance: ProvenanceCounts {
                pure: samples.len() - remixed,
                remixed,
            },
            val,
        });
    }
    let (params, _) = best.expect("at least one epoch");
    Ok((params, history))
}
