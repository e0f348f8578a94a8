//! Clustering metrics and the Monte Carlo benchmark harness.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;

use crate::error::{Result, ScosError};
use crate::io::{fmt_f64, write_csv};
use crate::solver::{fit, SolverConfig};
use crate::subspace::{truncated_basis, ViewBasis, DEFAULT_RANK_TOL};
use crate::synth::{generate, Scenario, ScenarioConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub acc: f64,
    pub ari: f64,
    pub nmi: f64,
    pub apr: f64,
    pub per_class_recall: Vec<f64>,
    pub wall_seconds: f64,
}

impl MetricsReport {
    pub fn compute(pred: &[usize], truth: &[usize], wall_seconds: f64) -> Result<Self> {
        let per_class_recall = per_class_recall(pred, truth)?;
        let apr = if per_class_recall.is_empty() {
            0.0
        } else {
            per_class_recall.iter().sum::<f64>() / per_class_recall.len() as f64
        };
        Ok(Self {
            acc: accuracy(pred, truth)?,
            ari: ari(pred, truth)?,
            nmi: nmi(pred, truth)?,
            apr,
            per_class_recall,
            wall_seconds,
        })
    }
}

/// Maps arbitrary labels to `0..n` in order of first appearance.
fn compact(labels: &[usize]) -> (Vec<usize>, usize) {
    let mut map = BTreeMap::new();
    let mut order = Vec::new();
    for &l in labels {
        let next = map.len();
        order.push(*map.entry(l).or_insert(next));
    }
    (order, map.len())
}

/// Contingency table `n[i][j]` = points with predicted `i` and true `j`.
fn contingency(pred: &[usize], truth: &[usize]) -> Result<(Vec<Vec<f64>>, usize, usize)> {
    if pred.len() != truth.len() {
        return Err(ScosError::LengthMismatch {
            left: pred.len(),
            right: truth.len(),
        });
    }
    let (p, np) = compact(pred);
    let (t, nt) = compact(truth);
    let mut table = vec![vec![0.0; nt]; np];
    for (&i, &j) in p.iter().zip(&t) {
        table[i][j] += 1.0;
    }
    Ok((table, np, nt))
}

/// Maximum-weight assignment on a rectangular weight matrix (rows ≤ cols
/// not required). Returns `assignment[row] = Some(col)`.
pub(crate) fn max_weight_matching(weights: &[Vec<f64>]) -> Vec<Option<usize>> {
    let rows = weights.len();
    let cols = weights.first().map_or(0, |r| r.len());
    let n = rows.max(cols);
    if n == 0 {
        return vec![None; rows];
    }
    let max = weights
        .iter()
        .flatten()
        .copied()
        .fold(0.0f64, f64::max);
    // Square cost matrix padded with zero-weight dummies.
    let cost = |i: usize, j: usize| -> f64 {
        let w = if i < rows && j < cols { weights[i][j] } else { 0.0 };
        max - w
    };
    // Hungarian algorithm (potentials, O(n³)), 1-based internal indexing.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![None; rows];
    for j in 1..=n {
        let i = p[j];
        if i >= 1 && i <= rows && j <= cols {
            assignment[i - 1] = Some(j - 1);
        }
    }
    assignment
}

/// Fraction of points correctly labeled under the best one-to-one matching of
/// predicted clusters to true classes.
pub fn accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    let (table, _, _) = contingency(pred, truth)?;
    if pred.is_empty() {
        return Ok(1.0);
    }
    let m = max_weight_matching(&table);
    let matched: f64 = m
        .iter()
        .enumerate()
        .filter_map(|(i, j)| j.map(|j| table[i][j]))
        .sum();
    Ok(matched / pred.len() as f64)
}

fn choose2(x: f64) -> f64 {
    x * (x - 1.0) / 2.0
}

/// Adjusted Rand index (pair counting, adjusted for chance).
pub fn ari(pred: &[usize], truth: &[usize]) -> Result<f64> {
    let (table, _, _) = contingency(pred, truth)?;
    let n = pred.len() as f64;
    let sum_ij: f64 = table.iter().flatten().map(|&x| choose2(x)).sum();
    let a: f64 = table.iter().map(|row| choose2(row.iter().sum())).sum();
    let cols = table.first().map_or(0, |r| r.len());
    let b: f64 = (0..cols)
        .map(|j| choose2(table.iter().map(|row| row[j]).sum()))
        .sum();
    let total = choose2(n);
    if total == 0.0 {
        return Ok(1.0);
    }
    let expected = a * b / total;
    let max = 0.5 * (a + b);
    if max == expected {
        // Both partitions trivial in the same way.
        return Ok(if sum_ij == expected { 1.0 } else { 0.0 });
    }
    Ok((sum_ij - expected) / (max - expected))
}

fn entropy(counts: &[f64], n: f64) -> f64 {
    counts
        .iter()
        .filter(|&&c| c > 0.0)
        .map(|&c| {
            let p = c / n;
            -p * p.ln()
        })
        .sum()
}

/// Normalized mutual information, `I / ((H_pred + H_truth)/2)`.
pub fn nmi(pred: &[usize], truth: &[usize]) -> Result<f64> {
    let (table, _, nt) = contingency(pred, truth)?;
    let n = pred.len() as f64;
    if pred.is_empty() {
        return Ok(1.0);
    }
    let rows: Vec<f64> = table.iter().map(|r| r.iter().sum()).collect();
    let cols: Vec<f64> = (0..nt).map(|j| table.iter().map(|r| r[j]).sum()).collect();
    let hp = entropy(&rows, n);
    let ht = entropy(&cols, n);
    let mut mi = 0.0;
    for (i, row) in table.iter().enumerate() {
        for (j, &x) in row.iter().enumerate() {
            if x > 0.0 {
                mi += x / n * (n * x / (rows[i] * cols[j])).ln();
            }
        }
    }
    let denom = 0.5 * (hp + ht);
    if denom == 0.0 {
        return Ok(1.0);
    }
    Ok((mi / denom).clamp(0.0, 1.0))
}

/// Recall of each true class (sorted by class id) after optimal matching.
pub fn per_class_recall(pred: &[usize], truth: &[usize]) -> Result<Vec<f64>> {
    let (table, _, nt) = contingency(pred, truth)?;
    let m = max_weight_matching(&table);
    let (t, _) = compact(truth);
    let mut class_ids: Vec<(usize, usize)> = Vec::new();
    for (&orig, &c) in truth.iter().zip(&t) {
        if !class_ids.iter().any(|&(_, cc)| cc == c) {
            class_ids.push((orig, c));
        }
    }
    class_ids.sort();
    let mut hits = vec![0.0; nt];
    for (i, j) in m.iter().enumerate() {
        if let Some(j) = *j {
            hits[j] = table[i][j];
        }
    }
    let sizes: Vec<f64> = (0..nt).map(|j| table.iter().map(|r| r[j]).sum()).collect();
    Ok(class_ids
        .iter()
        .map(|&(_, c)| hits[c] / sizes[c])
        .collect())
}

/// Orthonormal view bases of a scenario. Views whose numerical rank is below
/// their column count (e.g. noiseless, interference-free views) are truncated.
pub fn scenario_views(scenario: &Scenario) -> Result<Vec<ViewBasis>> {
    scenario
        .views
        .iter()
        .map(|x| truncated_basis(x, DEFAULT_RANK_TOL).map(|(b, _)| b))
        .collect()
}

/// One Monte Carlo run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub inr: f64,
    pub sinr_db: f64,
    pub run: usize,
    pub seed: u64,
    pub metrics: MetricsReport,
}

/// Mean and standard deviation of each metric at one grid point.
#[derive(Clone, Debug, PartialEq)]
pub struct AggregateRow {
    pub inr: f64,
    pub sinr_db: f64,
    pub runs: usize,
    pub acc: (f64, f64),
    pub ari: (f64, f64),
    pub nmi: (f64, f64),
    pub wall_s: (f64, f64),
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct MonteCarloTable {
    pub runs: Vec<RunRecord>,
    pub aggregate: Vec<AggregateRow>,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Fits every grid scenario `runs` times. Run `i` of every grid point uses
/// scenario seed `master_seed + i`; the solver seed is the same value.
/// Results are returned in grid order, then run order.
pub fn monte_carlo(
    grid: &[ScenarioConfig],
    runs: usize,
    master_seed: u64,
    solver: &SolverConfig,
) -> Result<MonteCarloTable> {
    if runs == 0 {
        return Err(ScosError::InvalidArgument("runs must be at least 1".into()));
    }
    let jobs: Vec<(usize, usize)> = (0..grid.len())
        .flat_map(|g| (0..runs).map(move |i| (g, i)))
        .collect();
    let records: Vec<RunRecord> = jobs
        .par_iter()
        .map(|&(g, i)| {
            let seed = master_seed.wrapping_add(i as u64);
            let mut cfg = grid[g].clone();
            cfg.seed = seed;
            let scenario = generate(&cfg)?;
            let views = scenario_views(&scenario)?;
            let mut sc = solver.clone();
            sc.seed = seed;
            let started = Instant::now();
            let dims = vec![cfg.subspace_dim; cfg.n_clusters];
            let (model, _) = fit(&views, cfg.n_clusters, &dims, &sc, None)?;
            let wall = started.elapsed().as_secs_f64();
            let metrics = MetricsReport::compute(&model.labels(), &scenario.labels, wall)?;
            log::info!(
                "inr={} sinr={} run={} acc={:.4} ({:.1}s)",
                cfg.inr,
                cfg.sinr_db,
                i,
                metrics.acc,
                wall
            );
            Ok(RunRecord {
                inr: cfg.inr,
                sinr_db: cfg.sinr_db,
                run: i,
                seed,
                metrics,
            })
        })
        .collect::<Result<_>>()?;

    let aggregate = grid
        .iter()
        .enumerate()
        .map(|(g, cfg)| {
            let rs = &records[g * runs..(g + 1) * runs];
            let pick = |f: &dyn Fn(&MetricsReport) -> f64| {
                mean_std(&rs.iter().map(|r| f(&r.metrics)).collect::<Vec<_>>())
            };
            AggregateRow {
                inr: cfg.inr,
                sinr_db: cfg.sinr_db,
                runs,
                acc: pick(&|m| m.acc),
                ari: pick(&|m| m.ari),
                nmi: pick(&|m| m.nmi),
                wall_s: pick(&|m| m.wall_seconds),
            }
        })
        .collect();
    Ok(MonteCarloTable {
        runs: records,
        aggregate,
    })
}

impl MonteCarloTable {
    /// Writes `runs.csv` and `aggregate.csv`. Wall-clock columns are written
    /// only when `timing` is set, so that default output is reproducible.
    pub fn write_csvs(&self, dir: &Path, timing: bool) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut header = vec!["inr", "sinr_db", "run", "seed", "acc", "ari", "nmi"];
        if timing {
            header.push("wall_s");
        }
        let rows: Vec<Vec<String>> = self
            .runs
            .iter()
            .map(|r| {
                let mut row = vec![
                    fmt_f64(r.inr),
                    fmt_f64(r.sinr_db),
                    r.run.to_string(),
                    r.seed.to_string(),
                    fmt_f64(r.metrics.acc),
                    fmt_f64(r.metrics.ari),
                    fmt_f64(r.metrics.nmi),
                ];
                if timing {
                    row.push(format!("{:.3}", r.metrics.wall_seconds));
                }
                row
            })
            .collect();
        write_csv(&dir.join("runs.csv"), &header, &rows)?;

        let mut header = vec![
            "inr", "sinr_db", "runs", "acc_mean", "acc_std", "ari_mean", "ari_std", "nmi_mean",
            "nmi_std",
        ];
        if timing {
            header.extend(["wall_s_mean", "wall_s_std"]);
        }
        let rows: Vec<Vec<String>> = self
            .aggregate
            .iter()
            .map(|a| {
                let mut row = vec![
                    fmt_f64(a.inr),
                    fmt_f64(a.sinr_db),
                    a.runs.to_string(),
                    fmt_f64(a.acc.0),
                    fmt_f64(a.acc.1),
                    fmt_f64(a.ari.0),
                    fmt_f64(a.ari.1),
                    fmt_f64(a.nmi.0),
                    fmt_f64(a.nmi.1),
                ];
                if timing {
                    row.push(format!("{:.3}", a.wall_s.0));
                    row.push(format!("{:.3}", a.wall_s.1));
                }
                row
            })
            .collect();
        write_csv(&dir.join("aggregate.csv"), &header, &rows)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_accuracy_example() {
        let pred = [1, 1, 1, 2, 2, 2];
        let truth = [1, 1, 2, 2, 2, 2];
        assert!((accuracy(&pred, &truth).unwrap() - 5.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn identical_and_permuted() {
        let t = [0, 0, 1, 2, 2, 1, 0];
        let p = [2, 2, 0, 1, 1, 0, 2];
        for pred in [&t[..], &p[..]] {
            assert_eq!(accuracy(pred, &t).unwrap(), 1.0);
            assert!((ari(pred, &t).unwrap() - 1.0).abs() < 1e-15);
            assert!((nmi(pred, &t).unwrap() - 1.0).abs() < 1e-15);
            assert!(per_class_recall(pred, &t).unwrap().iter().all(|&r| r == 1.0));
        }
    }

    #[test]
    fn single_cluster_vs_singletons() {
        let pred = vec![0; 6];
        let truth: Vec<usize> = (0..6).collect();
        assert_eq!(ari(&pred, &truth).unwrap(), 0.0);
    }

    #[test]
    fn length_mismatch() {
        assert!(matches!(
            accuracy(&[0, 1], &[0]),
            Err(ScosError::LengthMismatch { left: 2, right: 1 })
        ));
    }

    #[test]
    fn rectangular_matching() {
        // Three predicted clusters, two classes.
        let pred = [0, 0, 1, 1, 2, 2];
        let truth = [0, 0, 0, 1, 1, 1];
        assert!((accuracy(&pred, &truth).unwrap() - 4.0 / 6.0).abs() < 1e-15);
    }
}
