//! Experiment orchestration: expands a config into cells × trials, runs
//! trials on a pool of worker threads and appends rows through a single
//! writer. Completed `(cell hash, trial)` pairs are skipped on rerun.

pub mod config;
pub mod results;

use std::collections::{BTreeSet, VecDeque};
use std::path::{Path, PathBuf};
use std::sync::{mpsc, Mutex};
use std::time::Instant;

use serde::Serialize;

use crate::actions::{Mask0Action, Mask1Action};
use crate::criteria::{Criterion, PruneSchedule, WeightSnapshot};
use crate::data::{load_cifar10, load_cifar10_with_records, load_mnist, Splits};
use crate::error::{Error, Result};
use crate::mask::Mask;
use crate::nn::arch::{ArchKind, DatasetKind, NetworkArch};
use crate::nn::network::evaluate;
use crate::nn::params::ParameterSet;
use crate::pipeline::{run_lt_experiment, train_to_completion, ExperimentConfig, Seeds, TrainConfig};
use crate::rng::RngStream;
use crate::supermask::{apply_treatment, heuristic_masks, train_learned_mask, LearnedMaskConfig, Treatment};
use crate::tensor::Real;

use self::config::{config_hash, parse_all, DataSection, Precision, RunConfig};
use self::results::{
    append_rows, completed, summarize_dir, write_summary, HasSchema, ResultRow, Summary, SupermaskMethod, SupermaskRow,
    LT_RESULTS, SCHEMA_VERSION, SUPERMASK_RESULTS,
};

/// Command-line overrides of a [`RunConfig`].
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub trials: Option<usize>,
    pub jobs: usize,
    pub out: PathBuf,
    pub data_dir: Option<PathBuf>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub executed: usize,
    pub skipped: usize,
    pub summary: Summary,
}

impl RunConfig {
    pub fn with_options(mut self, opts: &RunOptions) -> Self {
        if let Some(t) = opts.trials {
            self.trials = t;
        }
        if let Some(s) = opts.seed {
            self.master_seed = s;
        }
        if let Some(d) = &opts.data_dir {
            self.data.dir = Some(d.clone());
        }
        self
    }
}

pub fn load_data(arch: ArchKind, data: &DataSection) -> Result<Splits> {
    let dir = data
        .dir
        .as_deref()
        .ok_or_else(|| Error::Config("no data directory (set data.dir or pass --data-dir)".into()))?;
    match arch.dataset() {
        DatasetKind::Mnist => load_mnist(dir, &data.split()),
        DatasetKind::Cifar10 => match data.cifar_records {
            Some(r) => load_cifar10_with_records(dir, &data.split(), r),
            None => load_cifar10(dir, &data.split()),
        },
    }
}

/// Fields that make two trials comparable; the data directory is excluded.
#[derive(Serialize)]
struct DataKey {
    split_seed: u64,
    val_size: usize,
    normalization: config::Normalization,
    cifar_records: Option<usize>,
}

impl From<&DataSection> for DataKey {
    fn from(d: &DataSection) -> Self {
        Self {
            split_seed: d.split_seed,
            val_size: d.val_size,
            normalization: d.normalization,
            cifar_records: d.cifar_records,
        }
    }
}

/// Run `work` for every job on `jobs` threads, handing each result to
/// `sink` on the calling thread in completion order.
fn execute<J: Send, R: Send>(
    work: Vec<J>,
    jobs: usize,
    run: impl Fn(J) -> Result<R> + Sync,
    mut sink: impl FnMut(R) -> Result<()>,
) -> Result<()> {
    let queue = Mutex::new(work.into_iter().collect::<VecDeque<J>>());
    let (tx, rx) = mpsc::channel::<Result<R>>();
    std::thread::scope(|scope| {
        for _ in 0..jobs.max(1) {
            let tx = tx.clone();
            let queue = &queue;
            let run = &run;
            scope.spawn(move || loop {
                let job = queue.lock().expect("job queue").pop_front();
                let Some(job) = job else { break };
                let r = run(job);
                let failed = r.is_err();
                if tx.send(r).is_err() || failed {
                    break;
                }
            });
        }
        drop(tx);
        let mut first_err = None;
        for r in rx {
            match r.and_then(&mut sink) {
                Ok(()) => {}
                Err(e) => {
                    queue.lock().expect("job queue").clear();
                    first_err.get_or_insert(e);
                }
            }
        }
        first_err.map_or(Ok(()), Err)
    })
}

/// `(config hash, cell, trial)` still to run.
type Job<C> = (String, C, usize);

fn pending<R: for<'de> serde::Deserialize<'de> + HasSchema, C>(
    path: &Path,
    cells: Vec<(String, C)>,
    trials: usize,
) -> Result<(Vec<Job<C>>, usize)>
where
    C: Clone,
{
    let done: BTreeSet<(String, usize)> = completed::<R>(path)?;
    let mut todo = Vec::new();
    let mut skipped = 0;
    for (hash, cell) in cells {
        for trial in 0..trials {
            if done.contains(&(hash.clone(), trial)) {
                skipped += 1;
            } else {
                todo.push((hash.clone(), cell.clone(), trial));
            }
        }
    }
    Ok((todo, skipped))
}

fn experiment_id(hash: &str, trial: usize) -> String {
    format!("{}-t{trial}", &hash[..12])
}

fn finish(out: &Path, executed: usize, skipped: usize) -> Result<RunReport> {
    let summary = summarize_dir(out)?;
    write_summary(out, &summary)?;
    Ok(RunReport {
        executed,
        skipped,
        summary,
    })
}

fn prepare_out(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))
}

#[derive(Debug, Clone, Copy)]
struct LtCell {
    criterion: Criterion,
    mask1: Mask1Action,
    mask0: Mask0Action,
}

/// Iterative-pruning sweep over `criteria × mask1 × mask0`.
pub fn run_lt(config: &RunConfig, opts: &RunOptions) -> Result<RunReport> {
    let config = config.clone().with_options(opts);
    config.validate()?;
    let lt = config
        .lt
        .as_ref()
        .ok_or_else(|| Error::Config("missing [lt] section".into()))?;
    prepare_out(&opts.out)?;
    let arch = NetworkArch::new(config.arch);
    let schedule = lt.schedule(config.arch);
    let train = config.train.resolve(config.arch);
    let (mask1s, mask0s) = config.lt_actions()?;
    let mut cells = Vec::new();
    for criterion in config.lt_criteria()? {
        for &mask1 in &mask1s {
            for &mask0 in &mask0s {
                #[derive(Serialize)]
                struct Key<'a> {
                    kind: &'static str,
                    arch: ArchKind,
                    master_seed: u64,
                    data: DataKey,
                    train: &'a TrainConfig,
                    schedule: &'a PruneSchedule,
                    criterion: Criterion,
                    mask1: Mask1Action,
                    mask0: Mask0Action,
                    rerandomize_each_round: bool,
                    precision: Precision,
                }
                let hash = config_hash(&Key {
                    kind: "lt",
                    arch: config.arch,
                    master_seed: config.master_seed,
                    data: (&config.data).into(),
                    train: &train,
                    schedule: &schedule,
                    criterion,
                    mask1,
                    mask0,
                    rerandomize_each_round: lt.rerandomize_each_round,
                    precision: config.precision,
                })?;
                cells.push((
                    hash,
                    LtCell {
                        criterion,
                        mask1,
                        mask0,
                    },
                ));
            }
        }
    }
    let path = opts.out.join(LT_RESULTS);
    let (todo, skipped) = pending::<ResultRow, _>(&path, cells, config.trials)?;
    log::info!("{} trials to run, {skipped} already complete", todo.len());
    if todo.is_empty() {
        return finish(&opts.out, 0, skipped);
    }
    let data = load_data(config.arch, &config.data)?;
    let executed = todo.len();
    let run = |(hash, cell, trial): (String, LtCell, usize)| -> Result<Vec<ResultRow>> {
        let seeds = Seeds::derive(config.master_seed, trial);
        let exp = ExperimentConfig {
            criterion: cell.criterion,
            mask1: cell.mask1,
            mask0: cell.mask0,
            schedule,
            train,
            seeds,
            trial,
            rerandomize_each_round: lt.rerandomize_each_round,
        };
        let run = match config.precision {
            Precision::F32 => run_lt_experiment::<f32>(&arch, &data, &exp)?,
            Precision::F64 => run_lt_experiment::<f64>(&arch, &data, &exp)?,
        };
        Ok(run
            .records
            .into_iter()
            .map(|r| ResultRow {
                schema_version: SCHEMA_VERSION,
                experiment_id: experiment_id(&hash, trial),
                config_hash: hash.clone(),
                arch: config.arch.name().into(),
                criterion: cell.criterion.name().into(),
                mask1: cell.mask1.name(),
                mask0: cell.mask0.name().into(),
                trial,
                seed: seeds.init,
                round: r.round,
                remaining_pct: 100.0 * r.remaining_fraction,
                early_stop_iter: r.early_stop_iteration,
                early_stop_val_loss: r.early_stop_val_loss,
                early_stop_test_acc: r.early_stop_test_accuracy,
                final_test_acc: r.final_test_accuracy,
                eval_interval: r.eval_interval,
                wall_time_s: r.wall_time_secs,
                diverged: r.diverged.unwrap_or_default(),
            })
            .collect())
    };
    execute(todo, opts.jobs, run, |rows| append_rows(&path, &rows))?;
    finish(&opts.out, executed, skipped)
}

/// Heuristic Supermasks: train the dense network once per trial, then
/// evaluate one-shot masks of every criterion and depth on untrained weights.
pub fn run_supermask_eval(config: &RunConfig, opts: &RunOptions) -> Result<RunReport> {
    let config = config.clone().with_options(opts);
    config.validate()?;
    let sm = config
        .supermask
        .as_ref()
        .ok_or_else(|| Error::Config("missing [supermask] section".into()))?;
    prepare_out(&opts.out)?;
    let arch = NetworkArch::new(config.arch);
    let schedule = sm.schedule(config.arch);
    let train = config.train.resolve(config.arch);
    let criteria: Vec<Criterion> = parse_all(&sm.criteria)?;
    let treatments: Vec<Treatment> = parse_all(&sm.treatments)?;
    let levels = sm.levels(config.arch);
    #[derive(Serialize)]
    struct Key<'a> {
        kind: &'static str,
        arch: ArchKind,
        master_seed: u64,
        data: DataKey,
        train: &'a TrainConfig,
        schedule: &'a PruneSchedule,
        criteria: &'a [Criterion],
        treatments: &'a [Treatment],
        levels: &'a [usize],
        precision: Precision,
    }
    let hash = config_hash(&Key {
        kind: "supermask_heuristic",
        arch: config.arch,
        master_seed: config.master_seed,
        data: (&config.data).into(),
        train: &train,
        schedule: &schedule,
        criteria: &criteria,
        treatments: &treatments,
        levels: &levels,
        precision: config.precision,
    })?;
    let path = opts.out.join(SUPERMASK_RESULTS);
    let (todo, skipped) = pending::<SupermaskRow, _>(&path, vec![(hash, ())], config.trials)?;
    if todo.is_empty() {
        return finish(&opts.out, 0, skipped);
    }
    let data = load_data(config.arch, &config.data)?;
    let executed = todo.len();
    let run = |(hash, (), trial): (String, (), usize)| -> Result<Vec<SupermaskRow>> {
        let job = HeuristicJob {
            arch: &arch,
            data: &data,
            train: &train,
            schedule: &schedule,
            criteria: &criteria,
            treatments: &treatments,
            levels: &levels,
            seeds: Seeds::derive(config.master_seed, trial),
        };
        let rows = match config.precision {
            Precision::F32 => job.run::<f32>()?,
            Precision::F64 => job.run::<f64>()?,
        };
        Ok(rows
            .into_iter()
            .map(|mut r| {
                r.experiment_id = experiment_id(&hash, trial);
                r.config_hash = hash.clone();
                r.arch = config.arch.name().into();
                r.trial = trial;
                r
            })
            .collect())
    };
    execute(todo, opts.jobs, run, |rows| append_rows(&path, &rows))?;
    finish(&opts.out, executed, skipped)
}

/// One trial of the heuristic Supermask sweep.
pub struct HeuristicJob<'a> {
    pub arch: &'a NetworkArch,
    pub data: &'a Splits,
    pub train: &'a TrainConfig,
    pub schedule: &'a PruneSchedule,
    pub criteria: &'a [Criterion],
    pub treatments: &'a [Treatment],
    pub levels: &'a [usize],
    pub seeds: Seeds,
}

fn blank_row(method: SupermaskMethod, seed: u64) -> SupermaskRow {
    SupermaskRow {
        schema_version: SCHEMA_VERSION,
        experiment_id: String::new(),
        config_hash: String::new(),
        arch: String::new(),
        method,
        criterion: String::new(),
        treatment: String::new(),
        dwr: false,
        level: None,
        init_logit: None,
        trial: 0,
        seed,
        prune_pct: 0.0,
        test_acc: f64::NAN,
        wall_time_s: 0.0,
    }
}

impl HeuristicJob<'_> {
    /// Rows for the trained dense network and every (criterion, treatment,
    /// level) mask. Identity fields are left for the caller.
    pub fn run<T: Real>(&self) -> Result<Vec<SupermaskRow>> {
        let start = Instant::now();
        let initial = ParameterSet::<T>::init(self.arch, &mut RngStream::new("init", self.seeds.init))?;
        let ones = Mask::ones(self.arch);
        let trained = train_to_completion(
            self.arch,
            initial.clone(),
            &ones,
            self.data,
            self.train,
            RngStream::new("shuffle", self.seeds.shuffle).split("round0"),
        )?;
        let mut rows = vec![SupermaskRow {
            test_acc: trained.early_stop_test_accuracy,
            wall_time_s: start.elapsed().as_secs_f64(),
            ..blank_row(SupermaskMethod::TrainedWeights, self.seeds.init)
        }];
        let snapshot = WeightSnapshot::from_params(&initial, &trained.final_params)?;
        let weights: Vec<(Treatment, ParameterSet<T>)> = self
            .treatments
            .iter()
            .map(|&t| Ok((t, apply_treatment(self.arch, &initial, t)?)))
            .collect::<Result<_>>()?;
        let ties = RngStream::new("ties", self.seeds.ties);
        for &criterion in self.criteria {
            let mut rng = ties.split(criterion.name());
            let masks = heuristic_masks(self.arch, criterion, &snapshot, self.schedule, self.levels, &mut rng)?;
            for (&level, mask) in self.levels.iter().zip(&masks) {
                for (treatment, w) in &weights {
                    let start = Instant::now();
                    let e = evaluate(self.arch, w, mask, self.data.test.pixels(), self.data.test.labels())?;
                    rows.push(SupermaskRow {
                        criterion: criterion.name().into(),
                        treatment: treatment.name().into(),
                        level: Some(level),
                        prune_pct: 100.0 * (1.0 - mask.remaining_fraction()),
                        test_acc: e.accuracy,
                        wall_time_s: start.elapsed().as_secs_f64(),
                        ..blank_row(SupermaskMethod::Heuristic, self.seeds.init)
                    });
                }
            }
        }
        Ok(rows)
    }
}

#[derive(Debug, Clone, Copy)]
struct LearnedCell {
    treatment: Treatment,
    config: LearnedMaskConfig,
}

/// Learned Supermasks over `treatments × dwr × init_logits`.
pub fn run_supermask_train(config: &RunConfig, opts: &RunOptions) -> Result<RunReport> {
    let config = config.clone().with_options(opts);
    config.validate()?;
    let section = config
        .learned
        .as_ref()
        .ok_or_else(|| Error::Config("missing [learned] section".into()))?;
    prepare_out(&opts.out)?;
    let arch = NetworkArch::new(config.arch);
    let treatments: Vec<Treatment> = parse_all(&section.treatments)?;
    let mut cells = Vec::new();
    for &treatment in &treatments {
        for &dwr in &section.dwr {
            for &c in &section.init_logits {
                let lm = section.resolve(config.arch, c, dwr);
                #[derive(Serialize)]
                struct Key {
                    kind: &'static str,
                    arch: ArchKind,
                    master_seed: u64,
                    data: DataKey,
                    treatment: Treatment,
                    learned: LearnedMaskConfig,
                    precision: Precision,
                }
                let hash = config_hash(&Key {
                    kind: "supermask_learned",
                    arch: config.arch,
                    master_seed: config.master_seed,
                    data: (&config.data).into(),
                    treatment,
                    learned: lm,
                    precision: config.precision,
                })?;
                cells.push((hash, LearnedCell { treatment, config: lm }));
            }
        }
    }
    let path = opts.out.join(SUPERMASK_RESULTS);
    let (todo, skipped) = pending::<SupermaskRow, _>(&path, cells, config.trials)?;
    if todo.is_empty() {
        return finish(&opts.out, 0, skipped);
    }
    let data = load_data(config.arch, &config.data)?;
    let executed = todo.len();
    let run = |(hash, cell, trial): (String, LearnedCell, usize)| -> Result<Vec<SupermaskRow>> {
        let seeds = Seeds::derive(config.master_seed, trial);
        let start = Instant::now();
        let rng = RngStream::new("mask", seeds.actions);
        let (acc, sparsity) = match config.precision {
            Precision::F32 => learned_trial::<f32>(&arch, &data, seeds.init, cell, &rng)?,
            Precision::F64 => learned_trial::<f64>(&arch, &data, seeds.init, cell, &rng)?,
        };
        Ok(vec![SupermaskRow {
            experiment_id: experiment_id(&hash, trial),
            config_hash: hash,
            arch: config.arch.name().into(),
            treatment: cell.treatment.name().into(),
            dwr: cell.config.dwr,
            init_logit: Some(cell.config.init_logit),
            trial,
            prune_pct: 100.0 * sparsity,
            test_acc: acc,
            wall_time_s: start.elapsed().as_secs_f64(),
            ..blank_row(SupermaskMethod::Learned, seeds.init)
        }])
    };
    execute(todo, opts.jobs, run, |rows| append_rows(&path, &rows))?;
    finish(&opts.out, executed, skipped)
}

fn learned_trial<T: Real>(
    arch: &NetworkArch,
    data: &Splits,
    seed: u64,
    cell: LearnedCell,
    rng: &RngStream,
) -> Result<(f64, f64)> {
    let init = ParameterSet::<T>::init(arch, &mut RngStream::new("init", seed))?;
    let weights = apply_treatment(arch, &init, cell.treatment)?;
    let out = train_learned_mask(arch, &weights, data, &cell.config, rng)?;
    Ok((out.test_accuracy, out.sparsity))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn executor_collects_every_result() {
        let mut got = Vec::new();
        execute(
            (0..20).collect(),
            3,
            |j: usize| Ok(j * j),
            |r| {
                got.push(r);
                Ok(())
            },
        )
        .unwrap();
        got.sort();
        assert_eq!(got, (0..20).map(|j| j * j).collect::<Vec<_>>());
    }

    #[test]
    fn executor_stops_on_error() {
        let r = execute(
            (0..50).collect(),
            2,
            |j: usize| {
                if j == 3 {
                    Err(Error::InvalidArgument("boom".into()))
                } else {
                    Ok(j)
                }
            },
            |_| Ok(()),
        );
        assert!(r.is_err());
    }
}
