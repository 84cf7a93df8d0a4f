//! Comparison metrics between generated and reference corpora.

use std::ops::Range;

use serde::Serialize;

use crate::channel::{pdp, rmsds, ChannelSnapshot, Spectrogram};
use crate::cvae_model::{raw_feature, Feature};
use crate::error::{Error, Result};
use crate::scatter_geom::{RfConfig, ScatteringPoint};
use crate::skeleton::{sequence_local_frames, BodyPart, GestureSequence, NUM_PARTS};
use crate::stats::quantile_sorted;

/// 25th, 50th and 75th percentiles.
pub fn quartiles(values: &[f64]) -> Result<[f64; 3]> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Ok([quantile_sorted(&v, 0.25)?, quantile_sorted(&v, 0.5)?, quantile_sorted(&v, 0.75)?])
}

/// Quartile differences expressed as fractions of the reference IQR.
pub fn quartile_deltas(generated: &[f64], reference: &[f64]) -> Result<[f64; 3]> {
    let g = quartiles(generated)?;
    let r = quartiles(reference)?;
    let iqr = r[2] - r[0];
    if !(iqr > 0.0) {
        return Err(Error::ZeroRange);
    }
    Ok([(g[0] - r[0]).abs() / iqr, (g[1] - r[1]).abs() / iqr, (g[2] - r[2]).abs() / iqr])
}

/// Raw local features of one part's points over a snapshot range.
pub fn part_features(
    points_by_snapshot: &[Vec<ScatteringPoint>],
    seq: &GestureSequence,
    part: BodyPart,
    snapshots: Range<usize>,
    rf: &RfConfig,
) -> Result<Vec<Feature>> {
    let frames = sequence_local_frames(&seq.frames, part, &rf.tx(), None)?;
    let mut out = Vec::new();
    for t in snapshots {
        let Some(pts) = points_by_snapshot.get(t) else { break };
        for p in pts.iter().filter(|p| p.part == Some(part)) {
            out.push(raw_feature(p, &frames[t])?);
        }
    }
    Ok(out)
}

/// Mean distance from each generated point to its nearest reference point of
/// the same part within the same `window`-snapshot block, per part. Parts
/// with nothing to match are `None`.
pub fn matched_spatial_error(generated: &[ScatteringPoint], reference: &[ScatteringPoint], window: usize) -> Result<[Option<f64>; NUM_PARTS]> {
    if window == 0 {
        return Err(Error::Config("matching window must be positive".into()));
    }
    let blocks = generated.iter().chain(reference).map(|p| p.snapshot / window + 1).max().unwrap_or(0);
    let mut refs: Vec<Vec<Vec<&ScatteringPoint>>> = vec![vec![Vec::new(); NUM_PARTS]; blocks];
    for p in reference {
        if let Some(part) = p.part {
            refs[p.snapshot / window][part.code()].push(p);
        }
    }
    let mut sum = [0.0; NUM_PARTS];
    let mut count = [0usize; NUM_PARTS];
    for g in generated {
        let Some(part) = g.part else { continue };
        let j = part.code();
        let candidates = &refs[g.snapshot / window][j];
        if let Some(d) = candidates.iter().map(|r| (r.position - g.position).norm()).min_by(f64::total_cmp) {
            sum[j] += d;
            count[j] += 1;
        }
    }
    let mut out = [None; NUM_PARTS];
    for j in 0..NUM_PARTS {
        if count[j] > 0 {
            out[j] = Some(sum[j] / count[j] as f64);
        }
    }
    Ok(out)
}

/// Per-snapshot `|RMSDS(a) - RMSDS(b)|`; `None` where either side has no power.
pub fn rmsds_errors(a: &[ChannelSnapshot], b: &[ChannelSnapshot], rf: &RfConfig) -> Result<Vec<Option<f64>>> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch { expected: vec![b.len()], got: vec![a.len()] });
    }
    Ok(a.iter()
        .zip(b)
        .map(|(x, y)| match (rmsds(&pdp(x, rf)), rmsds(&pdp(y, rf))) {
            (Ok(p), Ok(q)) => Some((p - q).abs()),
            _ => None,
        })
        .collect())
}

/// Absolute ridge error per frame against a reference Doppler curve.
pub fn ridge_errors(spec: &Spectrogram, reference: impl Fn(f64) -> f64) -> Vec<f64> {
    spec.ridge().iter().zip(&spec.times).map(|(r, &t)| (r - reference(t)).abs()).collect()
}

/// Fraction of `Some` values at or below `limit`; `None` counts as a miss.
pub fn fraction_within(errors: &[Option<f64>], limit: f64) -> f64 {
    if errors.is_empty() {
        return 0.0;
    }
    errors.iter().filter(|e| matches!(e, Some(v) if *v <= limit)).count() as f64 / errors.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorQuantiles {
    pub p50: f64,
    pub p90: f64,
    pub max: f64,
}

pub fn error_quantiles(errors: &[f64]) -> Result<ErrorQuantiles> {
    let mut v = errors.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(ErrorQuantiles {
        p50: quantile_sorted(&v, 0.5)?,
        p90: quantile_sorted(&v, 0.9)?,
        max: *v.last().ok_or(Error::EmptyInput)?,
    })
}
