//! GZSL evaluation with calibrated stacking, γ sweeps and score-distribution
//! export.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{GzslDataset, Split};
use crate::error::{Error, Result};
use crate::head_loss::ScoreVector;
use crate::model::{ClassContext, Psvma};

/// `argmax_c (score_c − γ·[c is seen])`, ties to the lowest class id.
pub fn calibrated_predict(scores: &ScoreVector, gamma: f64) -> usize {
    let mut best = 0;
    let mut best_value = f64::NEG_INFINITY;
    for (c, (&s, &seen)) in scores.scores.iter().zip(&scores.seen_mask).enumerate() {
        let v = if seen { s - gamma } else { s };
        if v > best_value {
            best = c;
            best_value = v;
        }
    }
    best
}

/// `2SU / (S + U)`, defined as 0 when both are 0 and exactly `U` when `U = S`.
pub fn harmonic_mean(u: f64, s: f64) -> f64 {
    if u + s == 0.0 {
        0.0
    } else if u == s {
        u
    } else {
        2.0 * s * u / (s + u)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Averaging {
    /// Mean of per-class accuracies within each domain.
    #[default]
    PerClass,
    /// Fraction of correct samples within each domain (diagnostic).
    PerSample,
}

/// Scores for every test sample, computed once and reused across γ values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredSet {
    pub indices: Vec<usize>,
    pub labels: Vec<usize>,
    pub splits: Vec<Split>,
    pub scores: Vec<ScoreVector>,
}

impl ScoredSet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Scores the seen-test and unseen-test samples.
pub fn score_test_set(model: &Psvma, data: &GzslDataset, tau: f64) -> Result<ScoredSet> {
    score_splits(model, data, tau, &[Split::SeenTest, Split::UnseenTest])
}

pub fn score_splits(model: &Psvma, data: &GzslDataset, tau: f64, splits: &[Split]) -> Result<ScoredSet> {
    model.config().check_dataset(data)?;
    let ctx = ClassContext::from_dataset(data);
    let indices: Vec<usize> = (0..data.num_samples())
        .filter(|&i| splits.contains(&data.splits[i]))
        .collect();
    let scores = indices
        .iter()
        .map(|&i| model.score(&data.sample(i), &ctx, tau))
        .collect::<Result<Vec<_>>>()?;
    Ok(ScoredSet {
        labels: indices.iter().map(|&i| data.labels[i]).collect(),
        splits: indices.iter().map(|&i| data.splits[i]).collect(),
        indices,
        scores,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassAccuracy {
    pub class: usize,
    pub seen: bool,
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub index: usize,
    pub label: usize,
    pub split: Split,
    pub prediction: usize,
    pub max_seen: f64,
    pub max_unseen: f64,
}

/// Accuracies are fractions in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub gamma: f64,
    pub averaging: Averaging,
    pub u: f64,
    pub s: f64,
    pub h: f64,
    pub per_class: Vec<ClassAccuracy>,
    pub records: Vec<SampleRecord>,
}

fn domain_max(sv: &ScoreVector, seen: bool) -> f64 {
    sv.scores
        .iter()
        .zip(&sv.seen_mask)
        .filter(|(_, &m)| m == seen)
        .map(|(&s, _)| s)
        .fold(f64::NEG_INFINITY, f64::max)
}

pub fn evaluate_scores(set: &ScoredSet, gamma: f64, averaging: Averaging) -> Result<EvalReport> {
    for split in [Split::SeenTest, Split::UnseenTest] {
        if !set.splits.contains(&split) {
            return Err(Error::Contract(format!("no {} samples to evaluate", split.as_str())));
        }
    }
    let num_classes = set.scores[0].len();
    let mut correct = vec![0usize; num_classes];
    let mut total = vec![0usize; num_classes];
    let mut records = Vec::with_capacity(set.len());
    for k in 0..set.len() {
        let sv = &set.scores[k];
        if !sv.scores.iter().all(|s| s.is_finite()) {
            return Err(Error::Contract(format!("non-finite scores for sample {}", set.indices[k])));
        }
        let prediction = calibrated_predict(sv, gamma);
        let label = set.labels[k];
        total[label] += 1;
        if prediction == label {
            correct[label] += 1;
        }
        records.push(SampleRecord {
            index: set.indices[k],
            label,
            split: set.splits[k],
            prediction,
            max_seen: domain_max(sv, true),
            max_unseen: domain_max(sv, false),
        });
    }
    let seen_mask = &set.scores[0].seen_mask;
    let per_class: Vec<ClassAccuracy> = (0..num_classes)
        .filter(|&c| total[c] > 0)
        .map(|c| ClassAccuracy {
            class: c,
            seen: seen_mask[c],
            correct: correct[c],
            total: total[c],
            accuracy: correct[c] as f64 / total[c] as f64,
        })
        .collect();
    let domain = |seen: bool| {
        let rows: Vec<&ClassAccuracy> = per_class.iter().filter(|r| r.seen == seen).collect();
        match averaging {
            Averaging::PerClass => rows.iter().map(|r| r.accuracy).sum::<f64>() / rows.len() as f64,
            Averaging::PerSample => {
                let c: usize = rows.iter().map(|r| r.correct).sum();
                let t: usize = rows.iter().map(|r| r.total).sum();
                c as f64 / t as f64
            }
        }
    };
    let (u, s) = (domain(false), domain(true));
    Ok(EvalReport {
        gamma,
        averaging,
        u,
        s,
        h: harmonic_mean(u, s),
        per_class,
        records,
    })
}

pub fn evaluate(model: &Psvma, data: &GzslDataset, gamma: f64, tau: f64) -> Result<EvalReport> {
    evaluate_scores(&score_test_set(model, data, tau)?, gamma, Averaging::PerClass)
}

/// `steps` evenly spaced values from `from` to `to`; a single step yields `from`.
pub fn linspace(from: f64, to: f64, steps: usize) -> Vec<f64> {
    match steps {
        0 => Vec::new(),
        1 => vec![from],
        n => (0..n)
            .map(|i| from + (to - from) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

pub const DEFAULT_SWEEP_STEPS: usize = 41;

/// `[0, τ]` in 41 steps.
pub fn default_gammas(tau: f64) -> Vec<f64> {
    linspace(0.0, tau, DEFAULT_SWEEP_STEPS)
}

pub fn gamma_sweep(set: &ScoredSet, gammas: &[f64], averaging: Averaging) -> Result<Vec<EvalReport>> {
    if gammas.windows(2).any(|w| !(w[0] <= w[1])) {
        return Err(Error::Contract("gammas must be sorted ascending".into()));
    }
    gammas.iter().map(|&g| evaluate_scores(set, g, averaging)).collect()
}

/// Index of the first report with the highest H.
pub fn best_h(reports: &[EvalReport]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, r) in reports.iter().enumerate() {
        if best.is_none_or(|b| r.h > reports[b].h) {
            best = Some(i);
        }
    }
    best
}

pub const SWEEP_HEADER: &str = "gamma,U,S,H";

/// One row per γ; accuracies are fractions.
pub fn sweep_csv(reports: &[EvalReport]) -> String {
    let mut out = String::from(SWEEP_HEADER);
    out.push('\n');
    for r in reports {
        let _ = writeln!(out, "{},{},{},{}", r.gamma, r.u, r.s, r.h);
    }
    out
}

/// Seen/unseen score moments averaged over samples.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistributionSummary {
    pub alpha_s: f64,
    pub beta_s: f64,
    pub alpha_u: f64,
    pub beta_u: f64,
}

impl DistributionSummary {
    pub fn alpha_gap(&self) -> f64 {
        (self.alpha_s - self.alpha_u).abs()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DistributionRow {
    pub index: usize,
    pub label: usize,
    pub split: Split,
    pub max_seen: f64,
    pub max_unseen: f64,
    pub alpha_s: f64,
    pub beta_s: f64,
    pub alpha_u: f64,
    pub beta_u: f64,
}

pub const DISTRIBUTION_HEADER: &str = "index,label,split,max_seen,max_unseen,alpha_s,beta_s,alpha_u,beta_u";

pub fn distribution_rows(set: &ScoredSet) -> Result<Vec<DistributionRow>> {
    (0..set.len())
        .map(|k| {
            let sv = &set.scores[k];
            let (alpha_s, beta_s) = sv.seen_moments()?;
            let (alpha_u, beta_u) = sv.unseen_moments()?;
            Ok(DistributionRow {
                index: set.indices[k],
                label: set.labels[k],
                split: set.splits[k],
                max_seen: domain_max(sv, true),
                max_unseen: domain_max(sv, false),
                alpha_s,
                beta_s,
                alpha_u,
                beta_u,
            })
        })
        .collect()
}

/// Means of the per-sample moments, summed in row order.
pub fn summarize(rows: &[DistributionRow]) -> Result<DistributionSummary> {
    if rows.is_empty() {
        return Err(Error::Contract("no samples to summarize".into()));
    }
    let n = rows.len() as f64;
    let mean = |f: fn(&DistributionRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
    Ok(DistributionSummary {
        alpha_s: mean(|r| r.alpha_s),
        beta_s: mean(|r| r.beta_s),
        alpha_u: mean(|r| r.alpha_u),
        beta_u: mean(|r| r.beta_u),
    })
}

pub fn distributions_csv(rows: &[DistributionRow]) -> String {
    let mut out = String::from(DISTRIBUTION_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.index,
            r.label,
            r.split.as_str(),
            r.max_seen,
            r.max_unseen,
            r.alpha_s,
            r.beta_s,
            r.alpha_u,
            r.beta_u
        );
    }
    out
}

/// Parses a distributions CSV back into rows.
pub fn parse_distributions_csv(text: &str) -> Result<Vec<DistributionRow>> {
    let bad = |line: usize, what: &str| Error::Contract(format!("distributions.csv line {line}: {what}"));
    let mut lines = text.lines();
    if lines.next() != Some(DISTRIBUTION_HEADER) {
        return Err(bad(1, "unexpected header"));
    }
    lines
        .enumerate()
        .map(|(k, line)| {
            let n = k + 2;
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 9 {
                return Err(bad(n, "expected 9 fields"));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad(n, "bad number"));
            let int = |s: &str| s.parse::<usize>().map_err(|_| bad(n, "bad integer"));
            let split = match f[2] {
                "seen-train" => Split::SeenTrain,
                "seen-test" => Split::SeenTest,
                "unseen-test" => Split::UnseenTest,
                _ => return Err(bad(n, "bad split")),
            };
            Ok(DistributionRow {
                index: int(f[0])?,
                label: int(f[1])?,
                split,
                max_seen: num(f[3])?,
                max_unseen: num(f[4])?,
                alpha_s: num(f[5])?,
                beta_s: num(f[6])?,
                alpha_u: num(f[7])?,
                beta_u: num(f[8])?,
            })
        })
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct SummaryFile {
    samples: usize,
    #[serde(flatten)]
    summary: DistributionSummary,
}

/// Writes `distributions.csv` and `distribution_summary.json` into `dir`.
pub fn export_distributions(set: &ScoredSet, dir: &Path) -> Result<DistributionSummary> {
    let rows = distribution_rows(set)?;
    let summary = summarize(&rows)?;
    let csv = dir.join("distributions.csv");
    std::fs::write(&csv, distributions_csv(&rows)).map_err(|e| Error::io(&csv, e))?;
    crate::io::write_json(
        &dir.join("distribution_summary.json"),
        &SummaryFile {
            samples: rows.len(),
            summary,
        },
    )?;
    Ok(summary)
}
