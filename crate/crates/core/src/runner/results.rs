//! Result rows, CSV persistence, per-cell summaries and the Supermask table.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::OpenOptions;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{aggregate, welch_t_test, Aggregate};

pub const SCHEMA_VERSION: u32 = 1;
pub const LT_RESULTS: &str = "results.csv";
pub const SUPERMASK_RESULTS: &str = "supermask_results.csv";
pub const SUMMARY: &str = "summary.json";
/// Table cells averaged over fewer runs than this are flagged.
pub const MIN_TABLE_RUNS: usize = 4;

/// One pruning round of one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub schema_version: u32,
    pub experiment_id: String,
    pub config_hash: String,
    pub arch: String,
    pub criterion: String,
    pub mask1: String,
    pub mask0: String,
    pub trial: usize,
    pub seed: u64,
    pub round: usize,
    pub remaining_pct: f64,
    pub early_stop_iter: usize,
    pub early_stop_val_loss: f64,
    pub early_stop_test_acc: f64,
    pub final_test_acc: f64,
    pub eval_interval: usize,
    pub wall_time_s: f64,
    /// Empty unless the trial diverged in this round.
    pub diverged: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SupermaskMethod {
    Heuristic,
    Learned,
    TrainedWeights,
}

impl SupermaskMethod {
    pub fn name(self) -> &'static str {
        match self {
            SupermaskMethod::Heuristic => "heuristic",
            SupermaskMethod::Learned => "learned",
            SupermaskMethod::TrainedWeights => "trained_weights",
        }
    }
}

/// One evaluated Supermask (or the trained dense reference).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupermaskRow {
    pub schema_version: u32,
    pub experiment_id: String,
    pub config_hash: String,
    pub arch: String,
    pub method: SupermaskMethod,
    /// Heuristic criterion; empty otherwise.
    pub criterion: String,
    /// `init` or `signed_constant`; empty for trained weights.
    pub treatment: String,
    pub dwr: bool,
    /// Heuristic pruning depth.
    pub level: Option<usize>,
    /// Initial logit of a learned mask.
    pub init_logit: Option<f64>,
    pub trial: usize,
    pub seed: u64,
    pub prune_pct: f64,
    pub test_acc: f64,
    pub wall_time_s: f64,
}

/// Append rows, writing the header only when the file is new or empty.
pub fn append_rows<R: Serialize>(path: &Path, rows: &[R]) -> Result<()> {
    let fresh = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// All rows of a results file; a missing file reads as empty.
pub fn read_rows<R: for<'de> Deserialize<'de> + HasSchema>(path: &Path) -> Result<Vec<R>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut r = csv::Reader::from_path(path)?;
    let rows = r.deserialize().collect::<std::result::Result<Vec<R>, _>>()?;
    if let Some(bad) = rows.iter().find(|r| r.schema_version() != SCHEMA_VERSION) {
        return Err(Error::Version {
            found: bad.schema_version(),
            supported: SCHEMA_VERSION,
        });
    }
    Ok(rows)
}

pub trait HasSchema {
    fn schema_version(&self) -> u32;
    fn config_hash(&self) -> &str;
    fn trial(&self) -> usize;
}

impl HasSchema for ResultRow {
    fn schema_version(&self) -> u32 {
        self.schema_version
    }
    fn config_hash(&self) -> &str {
        &self.config_hash
    }
    fn trial(&self) -> usize {
        self.trial
    }
}

impl HasSchema for SupermaskRow {
    fn schema_version(&self) -> u32 {
        self.schema_version
    }
    fn config_hash(&self) -> &str {
        &self.config_hash
    }
    fn trial(&self) -> usize {
        self.trial
    }
}

/// `(config hash, trial)` pairs already present in a results file.
pub fn completed<R: for<'de> Deserialize<'de> + HasSchema>(path: &Path) -> Result<BTreeSet<(String, usize)>> {
    Ok(read_rows::<R>(path)?
        .iter()
        .map(|r| (r.config_hash().to_string(), r.trial()))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LtCellSummary {
    pub config_hash: String,
    pub arch: String,
    pub criterion: String,
    pub mask1: String,
    pub mask0: String,
    pub round: usize,
    pub remaining_pct: f64,
    pub early_stop_test_acc: Aggregate,
    pub samples: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub arch: String,
    pub round: usize,
    pub a: String,
    pub b: String,
    pub mean_a: f64,
    pub mean_b: f64,
    pub t: f64,
    pub p_value: f64,
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupermaskCellSummary {
    pub arch: String,
    pub method: SupermaskMethod,
    pub criterion: String,
    pub treatment: String,
    pub dwr: bool,
    pub level: Option<usize>,
    pub init_logit: Option<f64>,
    pub prune_pct: f64,
    pub test_acc: Aggregate,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Summary {
    pub schema_version: u32,
    pub lt_cells: Vec<LtCellSummary>,
    pub comparisons: Vec<Comparison>,
    pub supermask_cells: Vec<SupermaskCellSummary>,
}

impl Summary {
    /// Summary cell for `(criterion, mask1, mask0, round)`.
    pub fn lt_cell(&self, criterion: &str, mask1: &str, mask0: &str, round: usize) -> Option<&LtCellSummary> {
        self.lt_cells
            .iter()
            .find(|c| c.criterion == criterion && c.mask1 == mask1 && c.mask0 == mask0 && c.round == round)
    }
}

pub fn cell_label(criterion: &str, mask1: &str, mask0: &str) -> String {
    format!("{criterion}/{mask1}/{mask0}")
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Per-cell aggregates of early-stop test accuracy and Welch tests between
/// every pair of cells at the same round. Diverged rows are excluded.
pub fn summarize_lt(rows: &[ResultRow]) -> (Vec<LtCellSummary>, Vec<Comparison>) {
    // (arch, criterion, mask1, mask0, config hash, round)
    type Key = (String, String, String, String, String, usize);
    let mut groups: BTreeMap<Key, Vec<&ResultRow>> = BTreeMap::new();
    for r in rows
        .iter()
        .filter(|r| r.diverged.is_empty() && r.early_stop_test_acc.is_finite())
    {
        let key = (
            r.arch.clone(),
            r.criterion.clone(),
            r.mask1.clone(),
            r.mask0.clone(),
            r.config_hash.clone(),
            r.round,
        );
        groups.entry(key).or_default().push(r);
    }
    let cells: Vec<LtCellSummary> = groups
        .into_iter()
        .filter_map(|((arch, criterion, mask1, mask0, config_hash, round), rs)| {
            let samples: Vec<f64> = rs.iter().map(|r| r.early_stop_test_acc).collect();
            let remaining: Vec<f64> = rs.iter().map(|r| r.remaining_pct).collect();
            Some(LtCellSummary {
                config_hash,
                arch,
                criterion,
                mask1,
                mask0,
                round,
                remaining_pct: mean(&remaining),
                early_stop_test_acc: aggregate(&samples)?,
                samples,
            })
        })
        .collect();
    let mut comparisons = Vec::new();
    for (i, a) in cells.iter().enumerate() {
        for b in &cells[i + 1..] {
            if a.arch != b.arch || a.round != b.round {
                continue;
            }
            if let Ok(t) = welch_t_test(&a.samples, &b.samples) {
                comparisons.push(Comparison {
                    arch: a.arch.clone(),
                    round: a.round,
                    a: cell_label(&a.criterion, &a.mask1, &a.mask0),
                    b: cell_label(&b.criterion, &b.mask1, &b.mask0),
                    mean_a: a.early_stop_test_acc.mean,
                    mean_b: b.early_stop_test_acc.mean,
                    t: t.t,
                    p_value: t.p_value,
                    significant: t.significant(),
                });
            }
        }
    }
    (cells, comparisons)
}

pub fn summarize_supermask(rows: &[SupermaskRow]) -> Vec<SupermaskCellSummary> {
    type Key = (
        String,
        SupermaskMethod,
        String,
        String,
        bool,
        Option<usize>,
        Option<u64>,
    );
    let mut groups: BTreeMap<Key, Vec<&SupermaskRow>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.test_acc.is_finite()) {
        let key = (
            r.arch.clone(),
            r.method,
            r.criterion.clone(),
            r.treatment.clone(),
            r.dwr,
            r.level,
            r.init_logit.map(f64::to_bits),
        );
        groups.entry(key).or_default().push(r);
    }
    groups
        .into_iter()
        .filter_map(|((arch, method, criterion, treatment, dwr, level, logit), rs)| {
            let accs: Vec<f64> = rs.iter().map(|r| r.test_acc).collect();
            let prune: Vec<f64> = rs.iter().map(|r| r.prune_pct).collect();
            Some(SupermaskCellSummary {
                arch,
                method,
                criterion,
                treatment,
                dwr,
                level,
                init_logit: logit.map(f64::from_bits),
                prune_pct: mean(&prune),
                test_acc: aggregate(&accs)?,
            })
        })
        .collect()
}

/// Build `summary.json` content from whatever result files exist in `dir`.
pub fn summarize_dir(dir: &Path) -> Result<Summary> {
    let lt: Vec<ResultRow> = read_rows(&dir.join(LT_RESULTS))?;
    let sm: Vec<SupermaskRow> = read_rows(&dir.join(SUPERMASK_RESULTS))?;
    let (lt_cells, comparisons) = summarize_lt(&lt);
    Ok(Summary {
        schema_version: SCHEMA_VERSION,
        lt_cells,
        comparisons,
        supermask_cells: summarize_supermask(&sm),
    })
}

pub fn write_summary(dir: &Path, summary: &Summary) -> Result<()> {
    let path = dir.join(SUMMARY);
    let text = serde_json::to_string_pretty(summary)?;
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

/// Columns of the best-Supermask table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableColumn {
    MaskInit,
    MaskSignedConstant,
    LearnedInit,
    LearnedSignedConstant,
    DwrInit,
    DwrSignedConstant,
    TrainedWeights,
}

impl TableColumn {
    pub const ALL: [TableColumn; 7] = [
        TableColumn::MaskInit,
        TableColumn::MaskSignedConstant,
        TableColumn::LearnedInit,
        TableColumn::LearnedSignedConstant,
        TableColumn::DwrInit,
        TableColumn::DwrSignedConstant,
        TableColumn::TrainedWeights,
    ];

    pub fn header(self) -> &'static str {
        match self {
            TableColumn::MaskInit => "mask ⊙ init",
            TableColumn::MaskSignedConstant => "mask ⊙ S.C.",
            TableColumn::LearnedInit => "learned ⊙ init",
            TableColumn::LearnedSignedConstant => "learned ⊙ S.C.",
            TableColumn::DwrInit => "DWR learned ⊙ init",
            TableColumn::DwrSignedConstant => "DWR learned ⊙ S.C.",
            TableColumn::TrainedWeights => "trained weights",
        }
    }

    fn matches(self, c: &SupermaskCellSummary) -> bool {
        let heuristic = c.method == SupermaskMethod::Heuristic && c.criterion == "large_final_same_sign";
        let learned = |dwr: bool, t: &str| c.method == SupermaskMethod::Learned && c.dwr == dwr && c.treatment == t;
        match self {
            TableColumn::MaskInit => heuristic && c.treatment == "init",
            TableColumn::MaskSignedConstant => heuristic && c.treatment == "signed_constant",
            TableColumn::LearnedInit => learned(false, "init"),
            TableColumn::LearnedSignedConstant => learned(false, "signed_constant"),
            TableColumn::DwrInit => learned(true, "init"),
            TableColumn::DwrSignedConstant => learned(true, "signed_constant"),
            TableColumn::TrainedWeights => c.method == SupermaskMethod::TrainedWeights,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableCell {
    /// Best mean test accuracy over prune levels / initial logits.
    pub accuracy: f64,
    pub runs: usize,
    pub under_sampled: bool,
    pub prune_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub arch: String,
    pub cells: Vec<Option<TableCell>>,
}

pub fn table1(cells: &[SupermaskCellSummary]) -> Vec<TableRow> {
    let order = ["fc", "conv2", "conv4", "conv6"];
    let mut archs: BTreeSet<&str> = cells.iter().map(|c| c.arch.as_str()).collect();
    archs.extend(order);
    let mut archs: Vec<&str> = archs.into_iter().collect();
    archs.sort_by_key(|a| order.iter().position(|o| o == a).unwrap_or(order.len()));
    archs
        .into_iter()
        .map(|arch| TableRow {
            arch: arch.to_string(),
            cells: TableColumn::ALL
                .iter()
                .map(|col| {
                    cells
                        .iter()
                        .filter(|c| c.arch == arch && col.matches(c))
                        .max_by(|a, b| a.test_acc.mean.total_cmp(&b.test_acc.mean))
                        .map(|c| TableCell {
                            accuracy: c.test_acc.mean,
                            runs: c.test_acc.n,
                            under_sampled: c.test_acc.n < MIN_TABLE_RUNS,
                            prune_pct: c.prune_pct,
                        })
                })
                .collect(),
        })
        .collect()
}

pub fn table_is_blank(rows: &[TableRow]) -> bool {
    rows.iter().all(|r| r.cells.iter().all(Option::is_none))
}

/// Markdown rendering; blank cells for missing data, `*` for under-sampled.
pub fn render_table1(rows: &[TableRow]) -> String {
    let mut out = String::from("| network |");
    for col in TableColumn::ALL {
        out.push_str(&format!(" {} |", col.header()));
    }
    out.push_str("\n|---|");
    out.push_str(&"---|".repeat(TableColumn::ALL.len()));
    out.push('\n');
    for row in rows {
        out.push_str(&format!("| {} |", row.arch));
        for cell in &row.cells {
            match cell {
                Some(c) => out.push_str(&format!(
                    " {:.1}{} |",
                    100.0 * c.accuracy,
                    if c.under_sampled { "*" } else { "" }
                )),
                None => out.push_str("  |"),
            }
        }
        out.push('\n');
    }
    out.push_str(&format!("\n`*` averaged over fewer than {MIN_TABLE_RUNS} runs\n"));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(criterion: &str, trial: usize, round: usize, acc: f64) -> ResultRow {
        ResultRow {
            schema_version: SCHEMA_VERSION,
            experiment_id: format!("x-t{trial}"),
            config_hash: format!("h-{criterion}"),
            arch: "fc".into(),
            criterion: criterion.into(),
            mask1: "rewind".into(),
            mask0: "freeze_zero".into(),
            trial,
            seed: 0,
            round,
            remaining_pct: 100.0 * 0.8f64.powi(round as i32),
            early_stop_iter: 100,
            early_stop_val_loss: 0.1,
            early_stop_test_acc: acc,
            final_test_acc: acc,
            eval_interval: 100,
            wall_time_s: 0.0,
            diverged: String::new(),
        }
    }

    #[test]
    fn csv_roundtrip_and_resume_keys() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(LT_RESULTS);
        append_rows(&path, &[row("random", 0, 0, 0.9)]).unwrap();
        append_rows(&path, &[row("random", 1, 0, 0.8)]).unwrap();
        let rows: Vec<ResultRow> = read_rows(&path).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[1], row("random", 1, 0, 0.8));
        let done = completed::<ResultRow>(&path).unwrap();
        assert!(done.contains(&("h-random".to_string(), 1)));
    }

    #[test]
    fn schema_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(LT_RESULTS);
        let mut r = row("random", 0, 0, 0.9);
        r.schema_version = 99;
        append_rows(&path, &[r]).unwrap();
        assert!(matches!(
            read_rows::<ResultRow>(&path),
            Err(Error::Version { found: 99, .. })
        ));
    }

    #[test]
    fn lt_summary_bands_and_tests() {
        let mut rows = Vec::new();
        for t in 0..5 {
            rows.push(row("large_final", t, 1, 0.98 + 0.001 * t as f64));
            rows.push(row("random", t, 1, 0.95 + 0.001 * t as f64));
        }
        let (cells, cmps) = summarize_lt(&rows);
        assert_eq!(cells.len(), 2);
        let lf = cells.iter().find(|c| c.criterion == "large_final").unwrap();
        assert_eq!(lf.early_stop_test_acc.n, 5);
        assert!((lf.early_stop_test_acc.min - 0.98).abs() < 1e-12);
        assert!((lf.early_stop_test_acc.max - 0.984).abs() < 1e-12);
        assert_eq!(cmps.len(), 1);
        assert!(cmps[0].significant);
    }

    fn sm(
        method: SupermaskMethod,
        treatment: &str,
        dwr: bool,
        level: Option<usize>,
        trial: usize,
        acc: f64,
    ) -> SupermaskRow {
        SupermaskRow {
            schema_version: SCHEMA_VERSION,
            experiment_id: String::new(),
            config_hash: "h".into(),
            arch: "fc".into(),
            method,
            criterion: if method == SupermaskMethod::Heuristic {
                "large_final_same_sign".into()
            } else {
                String::new()
            },
            treatment: treatment.into(),
            dwr,
            level,
            init_logit: None,
            trial,
            seed: 0,
            prune_pct: 50.0,
            test_acc: acc,
            wall_time_s: 0.0,
        }
    }

    #[test]
    fn table_takes_best_level_and_flags_small_samples() {
        let mut rows = Vec::new();
        for t in 0..3 {
            rows.push(sm(SupermaskMethod::Heuristic, "init", false, Some(1), t, 0.5));
            rows.push(sm(SupermaskMethod::Heuristic, "init", false, Some(2), t, 0.7));
        }
        let table = table1(&summarize_supermask(&rows));
        assert_eq!(table.len(), 4);
        assert!(!table_is_blank(&table));
        let c = table[0].cells[0].as_ref().unwrap();
        assert!((c.accuracy - 0.7).abs() < 1e-12);
        assert!(c.under_sampled);
        assert!(table[0].cells[1].is_none());
        let md = render_table1(&table);
        assert!(md.contains("70.0*"));
    }

    #[test]
    fn empty_results_give_blank_table() {
        let table = table1(&[]);
        assert_eq!(table.len(), 4);
        assert!(table_is_blank(&table));
    }
}
