use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub fn accuracy(predicted: &[usize], truth: &[usize]) -> Result<f64> {
    if predicted.len() != truth.len() || truth.is_empty() {
        return Err(Error::shape(
            "accuracy",
            format!("{} predictions for {} labels", predicted.len(), truth.len()),
        ));
    }
    let hits = predicted.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / truth.len() as f64)
}

/// Ranking average precision of one class; ties keep input order.
pub fn average_precision(scores: &[f64], targets: &[bool]) -> Option<f64> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let positives = targets.iter().filter(|&&t| t).count();
    if positives == 0 {
        return None;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if targets[i] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Some(sum / positives as f64)
}

/// Macro mean of per-class AP over `scores[n][c]`; classes without positives are skipped.
pub fn mean_average_precision(scores: &[Vec<f64>], targets: &[Vec<bool>]) -> Result<f64> {
    if scores.len() != targets.len() || scores.is_empty() {
        return Err(Error::shape("mean_average_precision", format!("{} score rows, {} target rows", scores.len(), targets.len())));
    }
    let c = scores[0].len();
    if scores.iter().any(|r| r.len() != c) || targets.iter().any(|r| r.len() != c) {
        return Err(Error::shape("mean_average_precision", "ragged score or target rows"));
    }
    let mut aps = Vec::new();
    for k in 0..c {
        let s: Vec<f64> = scores.iter().map(|r| r[k]).collect();
        let t: Vec<bool> = targets.iter().map(|r| r[k]).collect();
        aps.extend(average_precision(&s, &t));
    }
    if aps.is_empty() {
        return Err(Error::Labels("no class has a positive target".into()));
    }
    Ok(aps.iter().sum::<f64>() / aps.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    pub threshold: f64,
    pub min_dur_ms: f64,
    pub tol_ms: f64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            threshold: 0.5,
            min_dur_ms: 60.0,
            tol_ms: 200.0,
        }
    }
}

/// Runs of frames at or above threshold as `(onset_ms, offset_ms)`; each frame
/// lasts until the next frame time (the last one as long as its predecessor).
pub fn decode_events(frame_probs: &[f64], frame_times: &[f64], cfg: &DecodeConfig) -> Vec<(f64, f64)> {
    let n = frame_times.len().min(frame_probs.len());
    let step = if n >= 2 { frame_times[n - 1] - frame_times[n - 2] } else { 0.0 };
    let end_of = |i: usize| if i + 1 < n { frame_times[i + 1] } else { frame_times[i] + step };
    let mut events = Vec::new();
    let mut start: Option<usize> = None;
    for i in 0..=n {
        let active = i < n && frame_probs[i] >= cfg.threshold;
        match (active, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                let (on, off) = (frame_times[s], end_of(i - 1));
                if off - on >= cfg.min_dur_ms {
                    events.push((on, off));
                }
                start = None;
            }
            _ => {}
        }
    }
    events
}

/// Greedy matching: each predicted onset, in time order, takes the nearest
/// unmatched reference onset within `tol_ms`. Returns the match count.
pub fn match_onsets(predicted: &[f64], reference: &[f64], tol_ms: f64) -> usize {
    let mut pred = predicted.to_vec();
    pred.sort_by(f64::total_cmp);
    let mut used = vec![false; reference.len()];
    let mut matches = 0;
    for p in pred {
        let best = (0..reference.len())
            .filter(|&j| !used[j] && (reference[j] - p).abs() <= tol_ms)
            .min_by(|&a, &b| (reference[a] - p).abs().total_cmp(&(reference[b] - p).abs()));
        if let Some(j) = best {
            used[j] = true;
            matches += 1;
        }
    }
    matches
}

/// `2·matches / (n_pred + n_ref)`, 0 when nothing is predicted.
pub fn f1_from_counts(matches: usize, n_pred: usize, n_ref: usize) -> f64 {
    if n_pred == 0 || n_pred + n_ref == 0 {
        return 0.0;
    }
    2.0 * matches as f64 / (n_pred + n_ref) as f64
}

/// Onset F-measure of one activity track against reference `(onset, offset)` events.
pub fn onset_f1(frame_probs: &[f64], frame_times: &[f64], reference: &[(f64, f64)], cfg: &DecodeConfig) -> f64 {
    let predicted: Vec<f64> = decode_events(frame_probs, frame_times, cfg).iter().map(|e| e.0).collect();
    let refs: Vec<f64> = reference.iter().map(|e| e.0).collect();
    f1_from_counts(match_onsets(&predicted, &refs, cfg.tol_ms), predicted.len(), refs.len())
}
