//! Nearest-neighbor path tracking, trajectory labeling by body-part proximity
//! and outlier removal.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scatter_geom::ScatteringPoint;
use crate::skeleton::{point_to_part_distance, point_to_segment_distance, BodyPart, SkeletonFrame, NUM_PARTS};
use crate::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerConfig {
    /// Largest distance (m) over which a point continues a path.
    pub gate_distance: f64,
    /// Points farther than this (m) from every body part are dropped.
    pub outlier_threshold: f64,
    /// Drop outliers before tracking rather than after labeling.
    pub filter_before_tracking: bool,
    /// Trajectories shorter than this many snapshots are discarded.
    pub min_trajectory_length: usize,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            gate_distance: 0.15,
            outlier_threshold: 0.25,
            filter_before_tracking: true,
            min_trajectory_length: 1,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gate_distance > 0.0) || !(self.outlier_threshold > 0.0) {
            return Err(Error::Config("tracker distances must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub path_id: u64,
    pub points: Vec<ScatteringPoint>,
    pub label: Option<BodyPart>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn first_snapshot(&self) -> Option<usize> {
        self.points.first().map(|p| p.snapshot)
    }

    pub fn last_snapshot(&self) -> Option<usize> {
        self.points.last().map(|p| p.snapshot)
    }
}

/// Bucket points by snapshot index into `n_snapshots` contiguous sets.
/// Points beyond the range are ignored.
pub fn group_by_snapshot(points: &[ScatteringPoint], n_snapshots: usize) -> Vec<Vec<ScatteringPoint>> {
    let mut out = vec![Vec::new(); n_snapshots];
    for p in points {
        if let Some(bucket) = out.get_mut(p.snapshot) {
            bucket.push(*p);
        }
    }
    out
}

/// One-to-one matching of `prev` to `cur`, smallest distance first, ignoring
/// pairs beyond `gate`. Returns `(prev_index, cur_index)` pairs.
pub fn greedy_match(prev: &[Vec3], cur: &[Vec3], gate: f64) -> Vec<(usize, usize)> {
    let gate2 = gate * gate;
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (i, a) in prev.iter().enumerate() {
        for (j, b) in cur.iter().enumerate() {
            let d2 = (a - b).norm_squared();
            if d2 <= gate2 {
                pairs.push((d2, i, j));
            }
        }
    }
    pairs.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    let mut prev_used = vec![false; prev.len()];
    let mut cur_used = vec![false; cur.len()];
    let mut out = Vec::new();
    for (_, i, j) in pairs {
        if !prev_used[i] && !cur_used[j] {
            prev_used[i] = true;
            cur_used[j] = true;
            out.push((i, j));
        }
    }
    out
}

/// Chain points across consecutive snapshots into trajectories.
///
/// Matched points continue their path; unmatched current points open new
/// paths; unmatched previous paths end. Each emitted point carries its
/// trajectory's `path_id`.
pub fn track_paths(points_by_snapshot: &[Vec<ScatteringPoint>], cfg: &TrackerConfig) -> Vec<Trajectory> {
    let mut trajectories: Vec<Trajectory> = Vec::new();
    // Indices into `trajectories` of paths alive at the previous snapshot.
    let mut alive: Vec<usize> = Vec::new();
    for snapshot_points in points_by_snapshot {
        let prev_pos: Vec<Vec3> = alive
            .iter()
            .map(|&t| trajectories[t].points.last().unwrap().position)
            .collect();
        let cur_pos: Vec<Vec3> = snapshot_points.iter().map(|p| p.position).collect();
        let matches = greedy_match(&prev_pos, &cur_pos, cfg.gate_distance);

        let mut owner: Vec<Option<usize>> = vec![None; snapshot_points.len()];
        for (i, j) in matches {
            owner[j] = Some(alive[i]);
        }
        let mut next_alive = Vec::with_capacity(snapshot_points.len());
        for (j, p) in snapshot_points.iter().enumerate() {
            let t = match owner[j] {
                Some(t) => t,
                None => {
                    trajectories.push(Trajectory {
                        path_id: trajectories.len() as u64,
                        points: Vec::new(),
                        label: None,
                    });
                    trajectories.len() - 1
                }
            };
            let mut p = *p;
            p.path_id = Some(trajectories[t].path_id);
            trajectories[t].points.push(p);
            next_alive.push(t);
        }
        alive = next_alive;
    }
    trajectories
}

fn frame_for(frames: &[SkeletonFrame], snapshot: usize) -> Result<&SkeletonFrame> {
    frames.get(snapshot).ok_or(Error::MissingFrame(snapshot))
}

/// Body part with the smallest mean point-to-part distance over the
/// trajectory; ties go to the lowest part code.
pub fn label_trajectory(traj: &Trajectory, frames: &[SkeletonFrame]) -> Result<BodyPart> {
    if traj.points.is_empty() {
        return Err(Error::EmptyTrajectory);
    }
    let mut sums = [0.0; NUM_PARTS];
    for p in &traj.points {
        let frame = frame_for(frames, p.snapshot)?;
        for part in BodyPart::ALL {
            sums[part.code()] += point_to_part_distance(&p.position, part, frame);
        }
    }
    let n = traj.points.len() as f64;
    let mut best = BodyPart::ALL[0];
    let mut best_mean = sums[0] / n;
    for part in &BodyPart::ALL[1..] {
        let mean = sums[part.code()] / n;
        if mean < best_mean {
            best = *part;
            best_mean = mean;
        }
    }
    Ok(best)
}

/// Distance from `p` to the nearest segment of any body part.
pub fn distance_to_body(p: &Vec3, frame: &SkeletonFrame) -> f64 {
    BodyPart::ALL
        .iter()
        .flat_map(|part| part.geometry().segments.iter())
        .map(|&(a, b)| point_to_segment_distance(p, &frame.position(a), &frame.position(b)))
        .fold(f64::INFINITY, f64::min)
}

/// Keep points within `cfg.outlier_threshold` of some body part.
pub fn filter_outliers(points: &[ScatteringPoint], frames: &[SkeletonFrame], cfg: &TrackerConfig) -> Result<Vec<ScatteringPoint>> {
    let mut out = Vec::with_capacity(points.len());
    for p in points {
        let frame = frame_for(frames, p.snapshot)?;
        if distance_to_body(&p.position, frame) <= cfg.outlier_threshold {
            out.push(*p);
        }
    }
    Ok(out)
}

/// Full clustering stage: outlier gate, tracking, labeling and length pruning.
/// Returned trajectories are labeled and their points carry the label.
pub fn cluster_points(points: &[ScatteringPoint], frames: &[SkeletonFrame], cfg: &TrackerConfig) -> Result<Vec<Trajectory>> {
    cfg.validate()?;
    let n = frames.len();
    if let Some(p) = points.iter().find(|p| p.snapshot >= n) {
        return Err(Error::MissingFrame(p.snapshot));
    }
    let input = if cfg.filter_before_tracking {
        filter_outliers(points, frames, cfg)?
    } else {
        points.to_vec()
    };
    let mut trajectories = track_paths(&group_by_snapshot(&input, n), cfg);
    let mut out = Vec::with_capacity(trajectories.len());
    for mut t in trajectories.drain(..) {
        if !cfg.filter_before_tracking {
            t.points = filter_outliers(&t.points, frames, cfg)?;
        }
        if t.points.is_empty() || t.points.len() < cfg.min_trajectory_length {
            continue;
        }
        let label = label_trajectory(&t, frames)?;
        t.label = Some(label);
        t.points.iter_mut().for_each(|p| p.part = Some(label));
        out.push(t);
    }
    Ok(out)
}

/// Flatten trajectories to points ordered by (snapshot, path_id).
pub fn labeled_points(trajectories: &[Trajectory]) -> Vec<ScatteringPoint> {
    let mut pts: Vec<ScatteringPoint> = trajectories.iter().flat_map(|t| t.points.iter().copied()).collect();
    pts.sort_by_key(|p| (p.snapshot, p.path_id));
    pts
}

/// Per-snapshot point counts for each body part. Unlabeled points are ignored.
pub fn counts_per_snapshot(points: &[ScatteringPoint], n_snapshots: usize) -> Vec<[u32; NUM_PARTS]> {
    let mut counts = vec![[0u32; NUM_PARTS]; n_snapshots];
    for p in points {
        if let (Some(part), Some(c)) = (p.part, counts.get_mut(p.snapshot)) {
            c[part.code()] += 1;
        }
    }
    counts
}

pub const LABELED_HEADER: [&str; 7] = ["snapshot", "path_id", "part", "x", "y", "z", "rcs_m2"];

pub fn write_labeled_csv<W: std::io::Write>(writer: W, points: &[ScatteringPoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(LABELED_HEADER)?;
    for p in points {
        w.write_record([
            p.snapshot.to_string(),
            p.path_id.map(|v| v.to_string()).unwrap_or_default(),
            p.part.map(|v| v.name().to_string()).unwrap_or_default(),
            p.position.x.to_string(),
            p.position.y.to_string(),
            p.position.z.to_string(),
            p.rcs.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_labeled_csv<R: std::io::Read>(reader: R) -> Result<Vec<ScatteringPoint>> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(reader);
    let header = r.headers()?.clone();
    if header.iter().ne(LABELED_HEADER) {
        return Err(Error::Parse(format!("unexpected labeled-point header {:?}", header.iter().collect::<Vec<_>>())));
    }
    let mut out = Vec::new();
    for (line, record) in r.records().enumerate() {
        let record = record?;
        let err = |col: usize, e: &dyn std::fmt::Display| Error::Parse(format!("row {}: {}: {e}", line + 1, LABELED_HEADER[col]));
        let num = |i: usize| record[i].parse::<f64>().map_err(|e| err(i, &e));
        let snapshot = record[0].parse::<usize>().map_err(|e| err(0, &e))?;
        let path_id = match &record[1] {
            "" => None,
            s => Some(s.parse::<u64>().map_err(|e| err(1, &e))?),
        };
        let part = match &record[2] {
            "" => None,
            s => Some(s.parse::<BodyPart>()?),
        };
        let position = Vec3::new(num(3)?, num(4)?, num(5)?);
        let rcs = num(6)?;
        if !position.iter().all(|c| c.is_finite()) || !(rcs >= 0.0) {
            return Err(Error::Parse(format!("row {}: invalid point", line + 1)));
        }
        out.push(ScatteringPoint {
            position,
            rcs,
            snapshot,
            part,
            path_id,
        });
    }
    Ok(out)
}

/// Group trajectories' point counts per label, for diagnostics.
pub fn label_histogram(trajectories: &[Trajectory]) -> BTreeMap<BodyPart, usize> {
    let mut h = BTreeMap::new();
    for t in trajectories {
        if let Some(l) = t.label {
            *h.entry(l).or_insert(0) += t.points.len();
        }
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::{KeypointId, NUM_KEYPOINTS};
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pt(x: f64, y: f64, z: f64, snapshot: usize) -> ScatteringPoint {
        ScatteringPoint::new(Vec3::new(x, y, z), 0.01, snapshot)
    }

    /// A simple upright pose facing -x at 2.5 m.
    fn body() -> SkeletonFrame {
        use KeypointId::*;
        let mut p = [Vec3::zeros(); NUM_KEYPOINTS];
        let c = Vec3::new(2.5, 0.0, 0.0);
        let set = |p: &mut [Vec3; NUM_KEYPOINTS], k: KeypointId, v: [f64; 3]| p[k.code()] = c + Vec3::from(v);
        set(&mut p, Nose, [-0.1, 0.0, 0.25]);
        set(&mut p, LeftEye, [-0.08, -0.03, 0.28]);
        set(&mut p, RightEye, [-0.08, 0.03, 0.28]);
        set(&mut p, LeftEar, [0.0, -0.075, 0.26]);
        set(&mut p, RightEar, [0.0, 0.075, 0.26]);
        set(&mut p, LeftShoulder, [0.0, -0.19, 0.0]);
        set(&mut p, RightShoulder, [0.0, 0.19, 0.0]);
        set(&mut p, LeftElbow, [0.0, -0.25, -0.28]);
        set(&mut p, RightElbow, [0.0, 0.25, -0.28]);
        set(&mut p, LeftWrist, [-0.25, -0.25, -0.35]);
        set(&mut p, RightWrist, [-0.25, 0.25, -0.35]);
        set(&mut p, LeftHip, [0.0, -0.15, -0.55]);
        set(&mut p, RightHip, [0.0, 0.15, -0.55]);
        set(&mut p, LeftKnee, [-0.45, -0.15, -0.6]);
        set(&mut p, RightKnee, [-0.45, 0.15, -0.6]);
        set(&mut p, LeftAnkle, [-0.45, -0.15, -1.05]);
        set(&mut p, RightAnkle, [-0.45, 0.15, -1.05]);
        set(&mut p, Chest, [-0.02, 0.0, -0.1]);
        set(&mut p, Belly, [-0.03, 0.0, -0.35]);
        SkeletonFrame::new(0.0, p).unwrap()
    }

    #[test]
    fn static_point_is_one_trajectory() {
        let snaps: Vec<Vec<ScatteringPoint>> = (0..10).map(|t| vec![pt(1.0, 0.0, 0.0, t)]).collect();
        let trajs = track_paths(&snaps, &TrackerConfig::default());
        assert_eq!(trajs.len(), 1);
        assert_eq!(trajs[0].len(), 10);
        assert!(trajs[0].points.windows(2).all(|w| w[1].snapshot == w[0].snapshot + 1));
    }

    #[test]
    fn swap_beyond_gate_restarts_paths() {
        let snaps = vec![
            vec![pt(0.0, 0.0, 0.0, 0), pt(1.0, 0.0, 0.0, 0)],
            vec![pt(1.0, 0.0, 0.0, 1), pt(0.0, 0.0, 0.0, 1)],
            vec![pt(0.5, 0.0, 0.0, 2), pt(2.0, 0.0, 0.0, 2)],
        ];
        let trajs = track_paths(&snaps, &TrackerConfig::default());
        // Snapshot 1 positions coincide with snapshot 0 ones, so both paths continue;
        // the jump at snapshot 2 exceeds the gate and starts two new paths.
        assert_eq!(trajs.len(), 4);
        assert_eq!(trajs[0].len(), 2);
        assert_eq!(trajs[2].len(), 1);
    }

    #[test]
    fn greedy_prefers_globally_smallest() {
        // Per-point argmin would send both current points to prev 0.
        let prev = [Vec3::new(0.0, 0.0, 0.0), Vec3::new(0.1, 0.0, 0.0)];
        let cur = [Vec3::new(0.04, 0.0, 0.0), Vec3::new(0.02, 0.0, 0.0)];
        let m = greedy_match(&prev, &cur, 0.15);
        assert_eq!(m, vec![(0, 1), (1, 0)]);
    }

    #[test]
    fn recovers_generator_paths() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let starts: Vec<Vec3> = (0..12).map(|i| Vec3::new(i as f64 * 0.5, 0.0, 0.0)).collect();
        let mut pos = starts.clone();
        let mut snaps = Vec::new();
        for t in 0..200 {
            let mut s: Vec<ScatteringPoint> = pos
                .iter()
                .enumerate()
                .map(|(i, p)| pt(p.x, p.y, p.z, t).with_path_id(i as u64))
                .collect();
            s.shuffle(&mut rng);
            snaps.push(s);
            for p in &mut pos {
                *p += Vec3::new(rng.random_range(-0.01..0.01), rng.random_range(-0.01..0.01), 0.0);
            }
        }
        // Strip true ids, track, and compare partitions.
        let truth: Vec<Vec<Option<u64>>> = snaps.iter().map(|s| s.iter().map(|p| p.path_id).collect()).collect();
        for s in &mut snaps {
            s.iter_mut().for_each(|p| p.path_id = None);
        }
        let trajs = track_paths(&snaps, &TrackerConfig::default());
        assert_eq!(trajs.len(), 12);
        for traj in &trajs {
            assert_eq!(traj.len(), 200);
            let ids: Vec<Option<u64>> = traj
                .points
                .iter()
                .map(|p| {
                    let j = snaps[p.snapshot].iter().position(|q| q.position == p.position).unwrap();
                    truth[p.snapshot][j]
                })
                .collect();
            assert!(ids.iter().all(|i| *i == ids[0]));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn permutation_invariant(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let snaps: Vec<Vec<ScatteringPoint>> = (0..20)
                .map(|t| (0..8).map(|_| pt(rng.random_range(0.0..1.0), rng.random_range(0.0..1.0), 0.0, t)).collect())
                .collect();
            let mut shuffled = snaps.clone();
            for s in &mut shuffled {
                s.shuffle(&mut rng);
            }
            let cfg = TrackerConfig::default();
            let canon = |trajs: Vec<Trajectory>| {
                let mut v: Vec<Vec<(usize, [u64; 3])>> = trajs
                    .iter()
                    .map(|t| t.points.iter().map(|p| (p.snapshot, p.position.map(f64::to_bits).into())).collect())
                    .collect();
                v.sort();
                v
            };
            let a = track_paths(&snaps, &cfg);
            let b = track_paths(&shuffled, &cfg);
            // One point, one trajectory per snapshot.
            for t in 0..20 {
                let n: usize = a.iter().map(|tr| tr.points.iter().filter(|p| p.snapshot == t).count()).sum();
                prop_assert_eq!(n, 8);
                for tr in &a {
                    prop_assert!(tr.points.iter().filter(|p| p.snapshot == t).count() <= 1);
                }
            }
            prop_assert_eq!(canon(a), canon(b));
        }
    }

    #[test]
    fn labels_forearm_points() {
        let f = body();
        let a = f.position(KeypointId::LeftElbow);
        let b = f.position(KeypointId::LeftWrist);
        let traj = Trajectory {
            path_id: 0,
            points: (0..5).map(|i| ScatteringPoint::new(a + (b - a) * (i as f64 / 4.0), 0.01, 0)).collect(),
            label: None,
        };
        assert_eq!(label_trajectory(&traj, &[f]).unwrap(), BodyPart::ForearmL);
        let empty = Trajectory { path_id: 0, points: vec![], label: None };
        assert!(matches!(label_trajectory(&empty, &[body()]), Err(Error::EmptyTrajectory)));
        let late = Trajectory { path_id: 0, points: vec![pt(0.0, 0.0, 0.0, 3)], label: None };
        assert!(matches!(label_trajectory(&late, &[body()]), Err(Error::MissingFrame(3))));
    }

    #[test]
    fn tie_breaks_to_lower_code() {
        // Head collapsed onto the chest keypoint: every head and torso distance agrees.
        let mut f = body();
        let chest = f.position(KeypointId::Chest);
        for k in [KeypointId::Nose, KeypointId::LeftEye, KeypointId::RightEye, KeypointId::LeftEar, KeypointId::RightEar] {
            f.positions[k.code()] = chest;
        }
        for k in [KeypointId::LeftHip, KeypointId::RightHip, KeypointId::Belly] {
            f.positions[k.code()] = chest;
        }
        // Arms moved far away so only head and torso compete.
        for k in [KeypointId::LeftShoulder, KeypointId::LeftElbow, KeypointId::LeftWrist] {
            f.positions[k.code()] = chest + Vec3::new(0.0, -5.0, 0.0);
        }
        for k in [KeypointId::RightShoulder, KeypointId::RightElbow, KeypointId::RightWrist] {
            f.positions[k.code()] = chest + Vec3::new(0.0, 5.0, 0.0);
        }
        let traj = Trajectory { path_id: 0, points: vec![ScatteringPoint::new(chest + Vec3::new(-0.05, 0.0, 0.0), 0.01, 0)], label: None };
        assert_eq!(label_trajectory(&traj, &[f]).unwrap(), BodyPart::Head);
    }

    #[test]
    fn labeling_translation_invariant() {
        let f = body();
        let shift = Vec3::new(0.7, -1.2, 0.4);
        let g = f.translated(shift);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let p = Vec3::new(rng.random_range(2.2..2.8), rng.random_range(-0.4..0.4), rng.random_range(-0.6..0.4));
            let t1 = Trajectory { path_id: 0, points: vec![ScatteringPoint::new(p, 0.0, 0)], label: None };
            let t2 = Trajectory { path_id: 0, points: vec![ScatteringPoint::new(p + shift, 0.0, 0)], label: None };
            assert_eq!(label_trajectory(&t1, std::slice::from_ref(&f)).unwrap(), label_trajectory(&t2, std::slice::from_ref(&g)).unwrap());
        }
    }

    #[test]
    fn outlier_filter_examples_and_monotonicity() {
        let f = body();
        let behind = ScatteringPoint::new(Vec3::new(3.5, 0.0, 0.0), 0.01, 0);
        let on = ScatteringPoint::new(f.position(KeypointId::Chest), 0.01, 0);
        let kept = filter_outliers(&[behind, on], std::slice::from_ref(&f), &TrackerConfig::default()).unwrap();
        assert_eq!(kept, vec![on]);

        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let pts: Vec<ScatteringPoint> = (0..500)
            .map(|_| pt(rng.random_range(1.8..3.2), rng.random_range(-0.8..0.8), rng.random_range(-1.2..0.6), 0))
            .collect();
        let mut prev: Option<Vec<ScatteringPoint>> = None;
        for thr in [0.05, 0.1, 0.15, 0.2, 0.25, 0.4] {
            let cfg = TrackerConfig { outlier_threshold: thr, ..TrackerConfig::default() };
            let kept = filter_outliers(&pts, std::slice::from_ref(&f), &cfg).unwrap();
            // Brute force over every part.
            let expect: Vec<ScatteringPoint> = pts
                .iter()
                .filter(|p| BodyPart::ALL.iter().map(|&b| point_to_part_distance(&p.position, b, &f)).fold(f64::INFINITY, f64::min) <= thr)
                .copied()
                .collect();
            assert_eq!(kept, expect);
            if let Some(prev) = prev {
                assert!(prev.iter().all(|p| kept.contains(p)));
            }
            prev = Some(kept);
        }
    }

    #[test]
    fn labeled_csv_round_trip() {
        let pts = vec![
            pt(2.5, 0.1, -0.2, 0).with_part(BodyPart::Torso).with_path_id(3),
            pt(2.4, -0.1, 0.2, 1).with_part(BodyPart::Head),
            pt(2.3, 0.0, 0.0, 1),
        ];
        let mut buf = Vec::new();
        write_labeled_csv(&mut buf, &pts).unwrap();
        assert_eq!(read_labeled_csv(buf.as_slice()).unwrap(), pts);
    }

    #[test]
    fn counts_by_part() {
        let pts = vec![
            pt(0.0, 0.0, 0.0, 0).with_part(BodyPart::Torso),
            pt(0.0, 0.0, 0.0, 0).with_part(BodyPart::Torso),
            pt(0.0, 0.0, 0.0, 1).with_part(BodyPart::ForearmL),
            pt(0.0, 0.0, 0.0, 1),
        ];
        let c = counts_per_snapshot(&pts, 3);
        assert_eq!(c[0][BodyPart::Torso.code()], 2);
        assert_eq!(c[1][BodyPart::ForearmL.code()], 1);
        assert_eq!(c[2], [0; NUM_PARTS]);
    }
}
