//! Evaluation metrics, leaderboard aggregates and rank-based significance tests.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("results grid line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

pub type Result<T> = std::result::Result<T, MetricsError>;

fn contract<T>(msg: impl Into<String>) -> Result<T> {
    Err(MetricsError::Contract(msg.into()))
}

pub fn accuracy(preds: &[usize], labels: &[usize]) -> Result<f64> {
    if preds.is_empty() || preds.len() != labels.len() {
        return contract("accuracy needs equal-length nonempty inputs");
    }
    let hits = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / preds.len() as f64)
}

/// Mean over datasets of error rate divided by class count.
pub fn mpce(error_rates: &[f64], class_counts: &[usize]) -> Result<f64> {
    if error_rates.is_empty() || error_rates.len() != class_counts.len() {
        return contract("mpce needs one class count per error rate");
    }
    if class_counts.iter().any(|&c| c < 2) {
        return contract("every dataset needs at least 2 classes");
    }
    let total: f64 = error_rates.iter().zip(class_counts).map(|(e, &c)| e / c as f64).sum();
    Ok(total / error_rates.len() as f64)
}

/// `1/n Σ |x_i − x̄|`.
pub fn mean_abs_dev(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return contract("mean absolute deviation of an empty vector");
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    Ok(values.iter().map(|v| (v - mean).abs()).sum::<f64>() / n)
}

pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.is_empty() || pred.len() != truth.len() {
        return contract(format!("rmse shape mismatch: {} vs {}", pred.len(), truth.len()));
    }
    let se: f64 = pred.iter().zip(truth).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((se / pred.len() as f64).sqrt())
}

pub fn ratio(rmse: f64, baseline_rmse: f64) -> Result<f64> {
    if !(baseline_rmse > 0.0) {
        return contract("baseline rmse must be positive");
    }
    Ok(rmse / baseline_rmse)
}

/// How tied scores on one dataset are ranked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TieRule {
    /// Tied methods share the mean of the positions they occupy.
    Average,
    /// Tied methods share one rank and the next distinct score gets the
    /// next integer. This is the rule that reproduces the published
    /// leaderboard aggregates.
    #[default]
    Dense,
}

/// Accuracy grid with datasets as rows and methods as columns; `None` is N/A.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultsMatrix {
    pub methods: Vec<String>,
    pub datasets: Vec<String>,
    pub values: Vec<Vec<Option<f64>>>,
}

impl ResultsMatrix {
    pub fn new(methods: Vec<String>, datasets: Vec<String>, values: Vec<Vec<Option<f64>>>) -> Result<Self> {
        if values.len() != datasets.len() {
            return contract("one row per dataset is required");
        }
        for (d, row) in datasets.iter().zip(&values) {
            if row.len() != methods.len() {
                return contract(format!("dataset {d} has {} cells for {} methods", row.len(), methods.len()));
            }
            if let Some(v) = row.iter().flatten().find(|v| !(0.0..=1.0).contains(*v)) {
                return contract(format!("dataset {d} has value {v} outside [0, 1]"));
            }
        }
        Ok(ResultsMatrix { methods, datasets, values })
    }

    /// First column names the dataset; the header names the methods; `N/A`
    /// (or an empty cell) marks a missing result.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .flexible(true)
            .from_reader(text.as_bytes());
        let mut rows = reader.records();
        let header = match rows.next() {
            Some(Ok(h)) => h,
            Some(Err(e)) => return Err(MetricsError::Parse { line: 1, msg: e.to_string() }),
            None => return Err(MetricsError::Parse { line: 1, msg: "empty grid".into() }),
        };
        let methods: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        if methods.is_empty() {
            return Err(MetricsError::Parse { line: 1, msg: "header names no methods".into() });
        }
        let (mut datasets, mut values) = (Vec::new(), Vec::new());
        for (i, rec) in rows.enumerate() {
            let line = i + 2;
            let rec = rec.map_err(|e| MetricsError::Parse { line, msg: e.to_string() })?;
            if rec.iter().all(str::is_empty) {
                continue;
            }
            if rec.len() != methods.len() + 1 {
                return Err(MetricsError::Parse {
                    line,
                    msg: format!("expected {} fields, found {}", methods.len() + 1, rec.len()),
                });
            }
            datasets.push(rec[0].to_string());
            let row = rec
                .iter()
                .skip(1)
                .map(|cell| match cell {
                    "" | "N/A" | "NA" => Ok(None),
                    s => s
                        .parse::<f64>()
                        .ok()
                        .filter(|v| v.is_finite())
                        .map(Some)
                        .ok_or_else(|| MetricsError::Parse { line, msg: format!("bad value {s:?}") }),
                })
                .collect::<Result<Vec<_>>>()?;
            values.push(row);
        }
        ResultsMatrix::new(methods, datasets, values).map_err(|e| match e {
            MetricsError::Contract(msg) => MetricsError::Parse { line: 0, msg },
            other => other,
        })
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["dataset".to_string()];
        header.extend(self.methods.iter().cloned());
        w.write_record(&header).expect("in-memory write");
        for (d, row) in self.datasets.iter().zip(&self.values) {
            let mut rec = vec![d.clone()];
            rec.extend(row.iter().map(|v| v.map_or("N/A".to_string(), |x| x.to_string())));
            w.write_record(&rec).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
    }

    pub fn method_index(&self, name: &str) -> Option<usize> {
        self.methods.iter().position(|m| m == name)
    }

    /// Column `j` as per-dataset values.
    pub fn column(&self, j: usize) -> Vec<Option<f64>> {
        self.values.iter().map(|r| r[j]).collect()
    }

    pub fn has_missing(&self) -> bool {
        self.values.iter().flatten().any(Option::is_none)
    }
}

/// Ranks of one dataset's scores, best (highest) first. Missing cells rank
/// after every present one.
pub fn rank_scores(scores: &[Option<f64>], rule: TieRule) -> Result<Vec<f64>> {
    let mut present: Vec<f64> = scores.iter().flatten().copied().collect();
    if present.is_empty() {
        return contract("every cell of the dataset is N/A");
    }
    present.sort_by(|a, b| b.total_cmp(a));
    let mut ranks = vec![0.0; scores.len()];
    match rule {
        TieRule::Average => {
            for (i, s) in scores.iter().enumerate() {
                ranks[i] = match s {
                    Some(v) => {
                        let first = present.iter().position(|p| p == v).expect("present") + 1;
                        let count = present.iter().filter(|p| *p == v).count();
                        first as f64 + (count as f64 - 1.0) / 2.0
                    }
                    None => {
                        let missing = scores.len() - present.len();
                        present.len() as f64 + (missing as f64 + 1.0) / 2.0
                    }
                };
            }
        }
        TieRule::Dense => {
            present.dedup();
            for (i, s) in scores.iter().enumerate() {
                ranks[i] = match s {
                    Some(v) => (present.iter().position(|p| p == v).expect("present") + 1) as f64,
                    None => (present.len() + 1) as f64,
                };
            }
        }
    }
    Ok(ranks)
}

/// Mean rank per method over all datasets.
pub fn average_rank(results: &ResultsMatrix, rule: TieRule) -> Result<Vec<f64>> {
    if results.methods.len() < 2 {
        return contract("ranking needs at least 2 methods");
    }
    if results.datasets.is_empty() {
        return contract("ranking needs at least 1 dataset");
    }
    let mut total = vec![0.0; results.methods.len()];
    for (d, row) in results.datasets.iter().zip(&results.values) {
        let ranks = rank_scores(row, rule).map_err(|_| MetricsError::Contract(format!("dataset {d} is all N/A")))?;
        total.iter_mut().zip(&ranks).for_each(|(t, r)| *t += r);
    }
    let n = results.datasets.len() as f64;
    Ok(total.into_iter().map(|t| t / n).collect())
}

/// Datasets on which each method attains the best value, ties included.
pub fn wins_ties(results: &ResultsMatrix) -> Vec<usize> {
    let mut wins = vec![0; results.methods.len()];
    for row in &results.values {
        let best = row.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
        for (w, v) in wins.iter_mut().zip(row) {
            if *v == Some(best) {
                *w += 1;
            }
        }
    }
    wins
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// Friedman chi-square over within-dataset mid-ranks, corrected for ties.
pub fn friedman_test(results: &ResultsMatrix) -> Result<TestResult> {
    let k = results.methods.len();
    let n = results.datasets.len();
    if k < 3 || n < 2 {
        return contract("the Friedman test needs at least 3 methods and 2 datasets");
    }
    if results.has_missing() {
        return contract("the Friedman test needs a complete grid; drop N/A cells first");
    }
    let mut rank_sums = vec![0.0; k];
    let mut tie_term = 0.0;
    for row in &results.values {
        let ranks = rank_scores(row, TieRule::Average)?;
        rank_sums.iter_mut().zip(&ranks).for_each(|(s, r)| *s += r);
        tie_term += tie_cubes(&ranks);
    }
    let (kf, nf) = (k as f64, n as f64);
    let correction = 1.0 - tie_term / (nf * kf * (kf * kf - 1.0));
    if correction <= 1e-12 {
        // Every dataset ties all methods: no evidence of any difference.
        return Ok(TestResult { statistic: 0.0, p_value: 1.0 });
    }
    let ss: f64 = rank_sums.iter().map(|r| r * r).sum();
    let stat = (12.0 / (nf * kf * (kf + 1.0)) * ss - 3.0 * nf * (kf + 1.0)) / correction;
    let stat = stat.max(0.0);
    let chi = ChiSquared::new(kf - 1.0).expect("positive dof");
    Ok(TestResult {
        statistic: stat,
        p_value: chi.sf(stat),
    })
}

/// Σ (t³ − t) over groups of equal values.
fn tie_cubes(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mut total = 0.0;
    let mut i = 0;
    while i < v.len() {
        let j = v[i..].iter().take_while(|x| **x == v[i]).count();
        let t = j as f64;
        total += t * t * t - t;
        i += j;
    }
    total
}

/// Largest sample size that gets the exact null distribution.
pub const WILCOXON_EXACT_MAX: usize = 25;

/// Two-sided paired signed-rank test. The statistic is the smaller of the
/// positive and negative rank sums.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<TestResult> {
    if a.len() != b.len() {
        return contract("paired samples must have equal length");
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|d| *d != 0.0).collect();
    let n = diffs.len();
    if n < 6 {
        return contract(format!("{n} nonzero differences; at least 6 are required"));
    }
    let abs: Vec<Option<f64>> = diffs.iter().map(|d| Some(-d.abs())).collect();
    // Ranking negated magnitudes best-first gives rank 1 to the smallest |d|.
    let ranks = rank_scores(&abs, TieRule::Average)?;
    let w_plus: f64 = diffs.iter().zip(&ranks).filter(|(d, _)| **d > 0.0).map(|(_, r)| r).sum();
    let total = n as f64 * (n as f64 + 1.0) / 2.0;
    let stat = w_plus.min(total - w_plus);
    let p = if n <= WILCOXON_EXACT_MAX {
        exact_signed_rank_p(&ranks, stat)
    } else {
        let nf = n as f64;
        let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_cubes(&ranks) / 48.0;
        let z = ((w_plus - total / 2.0).abs() - 0.5).max(0.0) / var.sqrt();
        let normal = Normal::standard();
        2.0 * normal.sf(z)
    };
    Ok(TestResult {
        statistic: stat,
        p_value: p.min(1.0),
    })
}

/// `2 · P(T ≤ stat)` under random signs, counting subset sums of the doubled
/// (hence integral) mid-ranks.
fn exact_signed_rank_p(ranks: &[f64], stat: f64) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let max: usize = doubled.iter().sum();
    let mut counts = vec![0.0f64; max + 1];
    counts[0] = 1.0;
    let mut reach = 0;
    for &r in &doubled {
        for s in (0..=reach).rev() {
            if counts[s] > 0.0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    let limit = (2.0 * stat).round() as usize;
    let tail: f64 = counts[..=limit.min(max)].iter().sum();
    2.0 * tail / 2f64.powi(ranks.len() as i32)
}

/// Holm step-down adjusted p-values, in input order.
pub fn holm_adjust(p_values: &[f64]) -> Vec<f64> {
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| p_values[i].total_cmp(&p_values[j]));
    let mut adjusted = vec![0.0; m];
    let mut running = 0.0f64;
    for (step, &i) in order.iter().enumerate() {
        running = running.max(((m - step) as f64 * p_values[i]).min(1.0));
        adjusted[i] = running;
    }
    adjusted
}

/// Aggregates for one results grid with a reference method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub methods: Vec<String>,
    pub tie_rule: TieRule,
    pub avg_rank: Vec<f64>,
    pub wins_ties: Vec<usize>,
    /// Over datasets with no N/A cell; `None` when fewer than 2 remain.
    pub friedman: Option<TestResult>,
    pub reference: String,
    /// Reference against each method on their shared datasets; `None` when
    /// the test is degenerate.
    pub wilcoxon: Vec<Option<TestResult>>,
    pub wilcoxon_holm: Vec<Option<f64>>,
}

pub fn stats_report(results: &ResultsMatrix, reference: &str, rule: TieRule) -> Result<StatsReport> {
    let r = results
        .method_index(reference)
        .ok_or_else(|| MetricsError::Contract(format!("reference method {reference:?} is not in the grid")))?;
    let avg_rank = average_rank(results, rule)?;
    let wins = wins_ties(results);
    let complete: Vec<usize> = (0..results.datasets.len())
        .filter(|&d| results.values[d].iter().all(Option::is_some))
        .collect();
    let friedman = if complete.len() >= 2 && results.methods.len() >= 3 {
        let sub = ResultsMatrix {
            methods: results.methods.clone(),
            datasets: complete.iter().map(|&d| results.datasets[d].clone()).collect(),
            values: complete.iter().map(|&d| results.values[d].clone()).collect(),
        };
        Some(friedman_test(&sub)?)
    } else {
        None
    };
    let reference_col = results.column(r);
    let wilcoxon: Vec<Option<TestResult>> = (0..results.methods.len())
        .map(|j| {
            if j == r {
                return None;
            }
            let (a, b): (Vec<f64>, Vec<f64>) = reference_col
                .iter()
                .zip(results.column(j))
                .filter_map(|(x, y)| Some(((*x)?, y?)))
                .unzip();
            wilcoxon_signed_rank(&a, &b).ok()
        })
        .collect();
    let tested: Vec<(usize, f64)> = wilcoxon
        .iter()
        .enumerate()
        .filter_map(|(j, t)| t.map(|t| (j, t.p_value)))
        .collect();
    let adjusted = holm_adjust(&tested.iter().map(|(_, p)| *p).collect::<Vec<_>>());
    let mut wilcoxon_holm = vec![None; results.methods.len()];
    for ((j, _), p) in tested.iter().zip(adjusted) {
        wilcoxon_holm[*j] = Some(p);
    }
    Ok(StatsReport {
        methods: results.methods.clone(),
        tie_rule: rule,
        avg_rank,
        wins_ties: wins,
        friedman,
        reference: reference.to_string(),
        wilcoxon,
        wilcoxon_holm,
    })
}
