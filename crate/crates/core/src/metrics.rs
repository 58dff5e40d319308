//! Equal error rate over countermeasure scores.
//!
//! Scores are oriented higher-is-bonafide. At threshold `θ` a spoof trial
//! is falsely accepted when `score ≥ θ` and a bonafide trial falsely
//! rejected when `score < θ`. The sweep visits every distinct score plus
//! `+∞`. The EER is `(FAR + FRR) / 2` at the threshold minimizing
//! `|FAR − FRR|`, taking the lowest such threshold. This discrete rule can
//! differ by O(1/N) from ROC-interpolated EER variants.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::label::Label;

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredTrial {
    pub id: String,
    pub score: f64,
    pub label: Label,
}

impl ScoredTrial {
    pub fn new(id: impl Into<String>, score: f64, label: Label) -> Self {
        Self {
            id: id.into(),
            score,
            label,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetPoint {
    pub threshold: f64,
    pub far: f64,
    pub frr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EerResult {
    pub eer: f64,
    pub threshold: f64,
}

fn split_scores(trials: &[ScoredTrial]) -> Result<(Vec<f64>, Vec<f64>)> {
    if let Some(t) = trials.iter().find(|t| !t.score.is_finite()) {
        return Err(Error::MetricUndefined(format!(
            "trial {} has a non-finite score",
            t.id
        )));
    }
    let mut bona: Vec<f64> = Vec::new();
    let mut spoof: Vec<f64> = Vec::new();
    for t in trials {
        match t.label {
            Label::Bonafide => bona.push(t.score),
            Label::Spoof => spoof.push(t.score),
        }
    }
    if bona.is_empty() || spoof.is_empty() {
        return Err(Error::MetricUndefined(format!(
            "need both classes, got {} bonafide and {} spoof trials",
            bona.len(),
            spoof.len()
        )));
    }
    bona.sort_by(f64::total_cmp);
    spoof.sort_by(f64::total_cmp);
    Ok((bona, spoof))
}

/// FAR/FRR at every distinct score (ascending) and at `+∞`.
pub fn det_points(trials: &[ScoredTrial]) -> Result<Vec<DetPoint>> {
    let (bona, spoof) = split_scores(trials)?;
    let mut thresholds: Vec<f64> = bona.iter().chain(&spoof).copied().collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    thresholds.push(f64::INFINITY);

    let (nb, ns) = (bona.len() as f64, spoof.len() as f64);
    // both pointers count scores strictly below the threshold
    let (mut below_b, mut below_s) = (0usize, 0usize);
    let mut out = Vec::with_capacity(thresholds.len());
    for theta in thresholds {
        while below_b < bona.len() && bona[below_b] < theta {
            below_b += 1;
        }
        while below_s < spoof.len() && spoof[below_s] < theta {
            below_s += 1;
        }
        out.push(DetPoint {
            threshold: theta,
            far: (spoof.len() - below_s) as f64 / ns,
            frr: below_b as f64 / nb,
        });
    }
    Ok(out)
}

pub fn eer(trials: &[ScoredTrial]) -> Result<EerResult> {
    let points = det_points(trials)?;
    let mut best = points[0];
    for p in &points[1..] {
        if (p.far - p.frr).abs() < (best.far - best.frr).abs() {
            best = *p;
        }
    }
    Ok(EerResult {
        eer: (best.far + best.frr) / 2.0,
        threshold: best.threshold,
    })
}

/// Writes `id\tscore\tlabel` rows under a header line.
pub fn write_scores(path: &Path, trials: &[ScoredTrial]) -> Result<()> {
    let mut text = String::from("id\tscore\tlabel\n");
    for t in trials {
        let _ = writeln!(text, "{}\t{}\t{}", t.id, t.score, t.label);
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Reads a score file. Lines starting with `#` and blank lines are
/// skipped, as is an `id\tscore\tlabel` header.
pub fn read_scores(path: &Path) -> Result<Vec<ScoredTrial>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_scores(&text, path)
}

pub fn parse_scores(text: &str, path: &Path) -> Result<Vec<ScoredTrial>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') || line.starts_with("id\tscore") {
            continue;
        }
        let bad = |m: String| Error::format(path, format!("line {}: {m}", n + 1));
        let cols: Vec<&str> = line.split('\t').collect();
        let [id, score, label] = cols[..] else {
            return Err(bad(format!(
                "expected 3 tab-separated columns, got {}",
                cols.len()
            )));
        };
        let score: f64 = score
            .trim()
            .parse()
            .map_err(|e| bad(format!("score: {e}")))?;
        let label: Label = label.parse().map_err(bad)?;
        out.push(ScoredTrial::new(id, score, label));
    }
    Ok(out)
}
