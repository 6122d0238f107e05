//! The iterative train / score / mask / act / retrain loop.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::actions::{apply_mask0, apply_mask1, Mask0Action, Mask1Action};
use crate::criteria::{build_mask, score_all, Criterion, PruneMode, PruneSchedule, WeightSnapshot};
use crate::data::{Batches, Dataset, LastBatch, Splits};
use crate::error::{Error, Result};
use crate::mask::Mask;
use crate::nn::arch::{ArchKind, NetworkArch};
use crate::nn::network::{evaluate, loss_and_grads};
use crate::nn::optim::{Optimizer, OptimizerKind};
use crate::nn::params::ParameterSet;
use crate::rng::{derive_seed, RngStream};
use crate::tensor::Real;

pub const DEFAULT_BATCH_SIZE: usize = 60;
pub const DEFAULT_EVAL_INTERVAL: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    /// Validation loss is measured every `eval_interval` iterations.
    pub eval_interval: usize,
    pub optimizer: OptimizerKind,
    #[serde(default)]
    pub last_batch: LastBatch,
}

impl TrainConfig {
    pub fn for_arch(kind: ArchKind) -> Self {
        Self {
            iterations: kind.iterations(),
            batch_size: DEFAULT_BATCH_SIZE,
            eval_interval: DEFAULT_EVAL_INTERVAL,
            optimizer: OptimizerKind::adam(kind.adam_lr()),
            last_batch: LastBatch::Drop,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.eval_interval == 0 {
            return Err(Error::Config("batch_size and eval_interval must be positive".into()));
        }
        Ok(())
    }
}

/// Outcome of one training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    /// Weights after the last iteration (`w_f`).
    pub final_params: ParameterSet<T>,
    pub early_stop_iteration: usize,
    pub early_stop_val_loss: f64,
    pub early_stop_test_accuracy: f64,
    pub final_test_accuracy: f64,
    pub initial_test_accuracy: f64,
    /// `(iteration, validation loss)` at every checkpoint.
    pub val_trace: Vec<(usize, f64)>,
}

/// Index of the minimum; the earliest checkpoint wins ties.
pub fn early_stop_index(losses: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &l) in losses.iter().enumerate() {
        if best.is_none_or(|b| l < losses[b]) {
            best = Some(i);
        }
    }
    best
}

fn eval_on<T: Real>(arch: &NetworkArch, params: &ParameterSet<T>, mask: &Mask, set: &Dataset) -> Result<(f64, f64)> {
    let e = evaluate(arch, params, mask, set.pixels(), set.labels())?;
    Ok((e.loss, e.accuracy))
}

/// Train `params` under `mask` for the configured iterations.
///
/// Validation loss is checked at iteration 0, every `eval_interval`
/// iterations and at the last iteration. Test accuracy is reported at the
/// minimum-validation-loss checkpoint and at the end. A non-finite value
/// aborts with [`Error::Diverged`].
pub fn train_to_completion<T: Real>(
    arch: &NetworkArch,
    mut params: ParameterSet<T>,
    mask: &Mask,
    data: &Splits,
    config: &TrainConfig,
    shuffle: RngStream,
) -> Result<TrainOutcome<T>> {
    config.validate()?;
    params.check_arch(arch)?;
    mask.check_arch(arch)?;
    let mut optimizer = Optimizer::new(config.optimizer);
    let mut batches = Batches::new(data.train.len(), config.batch_size, config.last_batch, shuffle)?;
    let diverged = |iteration: usize| {
        move |e: Error| Error::Diverged {
            iteration,
            source: Box::new(e),
        }
    };

    let (val_loss, _) = eval_on(arch, &params, mask, &data.val).map_err(diverged(0))?;
    let (_, initial_test_accuracy) = eval_on(arch, &params, mask, &data.test)?;
    let mut val_trace = vec![(0, val_loss)];
    let mut best = (0, val_loss, params.clone());
    for it in 1..=config.iterations {
        let idx = batches.next().expect("endless batch stream");
        let (x, y) = data.train.gather::<T>(&idx);
        let (_, grads) = loss_and_grads(arch, &params, mask, &x, &y).map_err(diverged(it))?;
        optimizer.step(&mut params, &grads)?;
        if it % config.eval_interval == 0 || it == config.iterations {
            let (val_loss, _) = eval_on(arch, &params, mask, &data.val).map_err(diverged(it))?;
            if !val_loss.is_finite() {
                return Err(diverged(it)(Error::NonFinite {
                    layer: arch.ops().len(),
                    op: "validation loss",
                }));
            }
            log::debug!("iteration {it}: val loss {val_loss:.5}");
            val_trace.push((it, val_loss));
            if val_loss < best.1 {
                best = (it, val_loss, params.clone());
            }
        }
    }
    let (_, early_stop_test_accuracy) = eval_on(arch, &best.2, mask, &data.test)?;
    let (_, final_test_accuracy) = eval_on(arch, &params, mask, &data.test)?;
    Ok(TrainOutcome {
        final_params: params,
        early_stop_iteration: best.0,
        early_stop_val_loss: best.1,
        early_stop_test_accuracy,
        final_test_accuracy,
        initial_test_accuracy,
        val_trace,
    })
}

/// Seeds for every random concern of one trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    pub init: u64,
    pub ties: u64,
    pub shuffle: u64,
    pub actions: u64,
}

impl Seeds {
    /// Labelled derivation from a master seed and a trial index. Cells with
    /// the same `(master, trial)` share init and shuffle seeds.
    pub fn derive(master: u64, trial: usize) -> Self {
        let d = |what: &str| derive_seed(master, &format!("trial{trial}/{what}"));
        Self {
            init: d("init"),
            ties: d("ties"),
            shuffle: d("shuffle"),
            actions: d("actions"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub criterion: Criterion,
    pub mask1: Mask1Action,
    pub mask0: Mask0Action,
    pub schedule: PruneSchedule,
    pub train: TrainConfig,
    pub seeds: Seeds,
    pub trial: usize,
    /// Draw fresh reinit / reshuffle / constant values every round; when
    /// false the mask-1 stream is replayed from the same seed each round.
    #[serde(default = "default_true")]
    pub rerandomize_each_round: bool,
}

fn default_true() -> bool {
    true
}

impl ExperimentConfig {
    /// The original lottery-ticket procedure for a published architecture.
    pub fn lottery_ticket(kind: ArchKind, seeds: Seeds) -> Self {
        Self {
            criterion: Criterion::LargeFinal,
            mask1: Mask1Action::REWIND,
            mask0: Mask0Action::FreezeZero,
            schedule: PruneSchedule::for_arch(kind),
            train: TrainConfig::for_arch(kind),
            seeds,
            trial: 0,
            rerandomize_each_round: true,
        }
    }

    /// Number of score / mask / act cycles after the dense round.
    pub fn pruning_rounds(&self) -> usize {
        match self.schedule.mode {
            PruneMode::Iterative => self.schedule.rounds,
            PruneMode::OneShot => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    /// Fraction of all maskable weights still unmasked.
    pub remaining_fraction: f64,
    pub layer_remaining: Vec<f64>,
    pub eval_interval: usize,
    pub early_stop_iteration: usize,
    pub early_stop_val_loss: f64,
    pub early_stop_test_accuracy: f64,
    pub final_test_accuracy: f64,
    pub wall_time_secs: f64,
    /// Set when training diverged; metric fields are NaN.
    pub diverged: Option<String>,
}

impl RoundRecord {
    fn diverged(round: usize, mask: &Mask, eval_interval: usize, wall: f64, why: String) -> Self {
        Self {
            round,
            remaining_fraction: mask.remaining_fraction(),
            layer_remaining: mask.layers().iter().map(|m| m.remaining_fraction()).collect(),
            eval_interval,
            early_stop_iteration: 0,
            early_stop_val_loss: f64::NAN,
            early_stop_test_accuracy: f64::NAN,
            final_test_accuracy: f64::NAN,
            wall_time_secs: wall,
            diverged: Some(why),
        }
    }
}

/// What the observer sees before each round's training starts.
pub struct RoundStart<'a, T> {
    pub round: usize,
    pub params: &'a ParameterSet<T>,
    pub mask: &'a Mask,
    pub initial: &'a ParameterSet<T>,
}

pub struct LtRun {
    pub records: Vec<RoundRecord>,
    pub final_mask: Mask,
}

pub fn run_lt_experiment<T: Real>(arch: &NetworkArch, data: &Splits, config: &ExperimentConfig) -> Result<LtRun> {
    run_lt_experiment_with(arch, data, config, |_: &RoundStart<'_, T>| {})
}

/// Round 0 trains the dense network; each later round scores against
/// `(w_i, w_f of the previous round)`, builds the next mask, applies the
/// mask-1 then mask-0 action and retrains. Divergence ends the run with a
/// flagged record.
pub fn run_lt_experiment_with<T: Real>(
    arch: &NetworkArch,
    data: &Splits,
    config: &ExperimentConfig,
    mut observer: impl FnMut(&RoundStart<'_, T>),
) -> Result<LtRun> {
    config.schedule.validate()?;
    config.train.validate()?;
    let initial = ParameterSet::<T>::init(arch, &mut RngStream::new("init", config.seeds.init))?;
    let stds = arch.layer_stds();
    let ones = Mask::ones(arch);
    let shuffle = RngStream::new("shuffle", config.seeds.shuffle);
    let mut ties = RngStream::new("ties", config.seeds.ties);
    let actions = RngStream::new("actions", config.seeds.actions);

    let mut mask = ones.clone();
    let mut params = initial.clone();
    let mut records = Vec::new();
    for round in 0..=config.pruning_rounds() {
        if round > 0 {
            let snapshot = WeightSnapshot::from_params(&initial, &params)?;
            let (scores, _) = score_all(config.criterion, &snapshot, &mask);
            mask = build_mask(arch, &scores, &config.schedule, &mask, &mut ties)?;
            let mut act = if config.rerandomize_each_round {
                actions.split(&format!("round{round}"))
            } else {
                actions.clone()
            };
            params.unfreeze_all();
            apply_mask1(config.mask1, &snapshot, &mask, &stds, &mut act, &mut params)?;
            apply_mask0(config.mask0, &snapshot, &mask, &mut act, &mut params)?;
            for (layer, init) in params.layers.iter_mut().zip(&initial.layers) {
                layer.bias = init.bias.clone();
            }
        }
        observer(&RoundStart {
            round,
            params: &params,
            mask: &mask,
            initial: &initial,
        });
        let start = Instant::now();
        // pruned values live in `params` (zero or frozen), so training sees
        // the full mask
        let outcome = train_to_completion(
            arch,
            params.clone(),
            &ones,
            data,
            &config.train,
            shuffle.split(&format!("round{round}")),
        );
        let wall = start.elapsed().as_secs_f64();
        match outcome {
            Ok(o) => {
                records.push(RoundRecord {
                    round,
                    remaining_fraction: mask.remaining_fraction(),
                    layer_remaining: mask.layers().iter().map(|m| m.remaining_fraction()).collect(),
                    eval_interval: config.train.eval_interval,
                    early_stop_iteration: o.early_stop_iteration,
                    early_stop_val_loss: o.early_stop_val_loss,
                    early_stop_test_accuracy: o.early_stop_test_accuracy,
                    final_test_accuracy: o.final_test_accuracy,
                    wall_time_secs: wall,
                    diverged: None,
                });
                log::info!(
                    "round {round}: {:.2}% remaining, early-stop test acc {:.4} at iteration {}",
                    100.0 * mask.remaining_fraction(),
                    o.early_stop_test_accuracy,
                    o.early_stop_iteration
                );
                params = o.final_params;
            }
            Err(e @ Error::Diverged { .. }) => {
                log::warn!("round {round}: {e}");
                records.push(RoundRecord::diverged(
                    round,
                    &mask,
                    config.train.eval_interval,
                    wall,
                    e.to_string(),
                ));
                break;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(LtRun {
        records,
        final_mask: mask,
    })
}
