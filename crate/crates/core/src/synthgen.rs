//! Synthetic ground truth: a parametric seated-subject gesture animator and a
//! scattering process with known rates, anchors and cross sections.

use std::f64::consts::PI;
use std::fmt;

use rand::{Rng, RngExt};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scatter_geom::{point_to_mpc, MpcEstimate, RfConfig, ScatteringPoint};
use crate::skeleton::{
    keypoint_velocities, BodyPart, GestureSequence, KeypointId, SkeletonFrame, VelocityConfig, NUM_KEYPOINTS, NUM_PARTS,
};
use crate::stats::{sample_poisson, standard_normal};
use crate::Vec3;

/// Shoulder-to-elbow and shoulder-to-wrist distances of the unit template, m.
pub const UPPER_ARM_LENGTH: f64 = 0.30;
pub const ARM_LENGTH: f64 = 0.57;
const SHOULDER_HALF_WIDTH: f64 = 0.19;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArmMotion {
    Up,
    Down,
    Left,
    Right,
    Static,
}

impl ArmMotion {
    pub const GESTURES: [ArmMotion; 4] = [ArmMotion::Up, ArmMotion::Down, ArmMotion::Left, ArmMotion::Right];

    fn label(self) -> &'static str {
        match self {
            ArmMotion::Up => "Up",
            ArmMotion::Down => "Down",
            ArmMotion::Left => "Left",
            ArmMotion::Right => "Right",
            ArmMotion::Static => "Static",
        }
    }

    /// Unit arm direction after rotating by `theta` away from pointing at
    /// the transceiver (-x). "Left" is the subject's left, i.e. -y.
    pub fn direction(self, theta: f64) -> Vec3 {
        let (s, c) = theta.sin_cos();
        match self {
            ArmMotion::Up => Vec3::new(-c, 0.0, s),
            ArmMotion::Down => Vec3::new(-c, 0.0, -s),
            ArmMotion::Left => Vec3::new(-c, -s, 0.0),
            ArmMotion::Right => Vec3::new(-c, s, 0.0),
            ArmMotion::Static => Vec3::new(-1.0, 0.0, 0.0),
        }
    }

    fn direction_derivative(self, theta: f64) -> Vec3 {
        let (s, c) = theta.sin_cos();
        match self {
            ArmMotion::Up => Vec3::new(s, 0.0, c),
            ArmMotion::Down => Vec3::new(s, 0.0, -c),
            ArmMotion::Left => Vec3::new(s, -c, 0.0),
            ArmMotion::Right => Vec3::new(s, c, 0.0),
            ArmMotion::Static => Vec3::zeros(),
        }
    }
}

impl fmt::Display for ArmMotion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GestureScript {
    pub left: ArmMotion,
    pub right: ArmMotion,
    /// Peak wrist arc length, m.
    pub amplitude: f64,
    /// Raise-and-return period, s.
    pub period: f64,
    pub duration: f64,
    pub interval: f64,
    pub subject_scale: f64,
    /// Midpoint between the shoulders, m, in the transceiver frame.
    pub subject_position: [f64; 3],
    pub subject: String,
}

impl Default for GestureScript {
    fn default() -> Self {
        GestureScript {
            left: ArmMotion::Up,
            right: ArmMotion::Up,
            amplitude: 0.8,
            period: 3.9,
            duration: 3.9,
            interval: 0.0026,
            subject_scale: 1.0,
            subject_position: [2.5, 0.0, 0.0],
            subject: "synthetic".into(),
        }
    }
}

impl GestureScript {
    pub fn new(left: ArmMotion, right: ArmMotion) -> Self {
        GestureScript {
            left,
            right,
            ..GestureScript::default()
        }
    }

    pub fn still() -> Self {
        Self::new(ArmMotion::Static, ArmMotion::Static)
    }

    /// Gesture label such as `Up-Down`; fully static scripts are `other`.
    pub fn name(&self) -> String {
        if self.left == ArmMotion::Static && self.right == ArmMotion::Static {
            "other".into()
        } else {
            format!("{}-{}", self.left, self.right)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [self.amplitude, self.period, self.duration, self.interval, self.subject_scale];
        if positive.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::Config("gesture script values must be positive".into()));
        }
        self.snapshot_count().map(|_| ())
    }

    pub fn snapshot_count(&self) -> Result<usize> {
        let n = self.duration / self.interval;
        let r = n.round();
        if (n - r).abs() > 1e-6 || r < 2.0 {
            return Err(Error::Config(format!(
                "duration {} is not a whole number (>= 2) of intervals {}",
                self.duration, self.interval
            )));
        }
        Ok(r as usize)
    }

    /// Peak rotation angle, rad.
    pub fn peak_angle(&self) -> f64 {
        self.amplitude / (ARM_LENGTH * self.subject_scale)
    }

    /// Raised-cosine rotation angle at time `t`.
    pub fn angle(&self, t: f64) -> f64 {
        0.5 * self.peak_angle() * (1.0 - (2.0 * PI * t / self.period).cos())
    }

    pub fn angle_rate(&self, t: f64) -> f64 {
        self.peak_angle() * PI / self.period * (2.0 * PI * t / self.period).sin()
    }

    fn motion(&self, side: Side) -> ArmMotion {
        match side {
            Side::Left => self.left,
            Side::Right => self.right,
        }
    }

    fn shoulder(&self, side: Side) -> Vec3 {
        let y = match side {
            Side::Left => -SHOULDER_HALF_WIDTH,
            Side::Right => SHOULDER_HALF_WIDTH,
        };
        Vec3::from(self.subject_position) + Vec3::new(0.0, y * self.subject_scale, 0.0)
    }

    /// Keypoint positions at time `t`.
    pub fn pose(&self, t: f64) -> [Vec3; NUM_KEYPOINTS] {
        use KeypointId::*;
        let s = self.subject_scale;
        let c = Vec3::from(self.subject_position);
        let mut p = [Vec3::zeros(); NUM_KEYPOINTS];
        let template: [(KeypointId, [f64; 3]); 12] = [
            (Nose, [-0.10, 0.0, 0.25]),
            (LeftEye, [-0.08, -0.03, 0.28]),
            (RightEye, [-0.08, 0.03, 0.28]),
            (LeftEar, [0.0, -0.075, 0.26]),
            (RightEar, [0.0, 0.075, 0.26]),
            (Chest, [-0.02, 0.0, -0.10]),
            (Belly, [-0.03, 0.0, -0.35]),
            (LeftHip, [0.0, -0.15, -0.55]),
            (RightHip, [0.0, 0.15, -0.55]),
            (LeftKnee, [-0.45, -0.15, -0.60]),
            (RightKnee, [-0.45, 0.15, -0.60]),
            (LeftAnkle, [-0.45, -0.15, -1.05]),
        ];
        for (k, off) in template {
            p[k.code()] = c + Vec3::from(off) * s;
        }
        p[RightAnkle.code()] = c + Vec3::new(-0.45, 0.15, -1.05) * s;
        for (side, sh, el, wr) in [
            (Side::Left, LeftShoulder, LeftElbow, LeftWrist),
            (Side::Right, RightShoulder, RightElbow, RightWrist),
        ] {
            let shoulder = self.shoulder(side);
            let motion = self.motion(side);
            let d = motion.direction(if motion == ArmMotion::Static { 0.0 } else { self.angle(t) });
            p[sh.code()] = shoulder;
            p[el.code()] = shoulder + d * (UPPER_ARM_LENGTH * s);
            p[wr.code()] = shoulder + d * (ARM_LENGTH * s);
        }
        p
    }

    /// Analytic wrist velocity, m/s.
    pub fn wrist_velocity(&self, side: Side, t: f64) -> Vec3 {
        let motion = self.motion(side);
        if motion == ArmMotion::Static {
            return Vec3::zeros();
        }
        motion.direction_derivative(self.angle(t)) * (ARM_LENGTH * self.subject_scale * self.angle_rate(t))
    }

    pub fn times(&self) -> Result<Vec<f64>> {
        let n = self.snapshot_count()?;
        Ok((0..n).map(|i| i as f64 * self.interval).collect())
    }
}

/// Render a script into a uniformly sampled keypoint sequence.
pub fn animate(script: &GestureScript) -> Result<GestureSequence> {
    script.validate()?;
    let frames = script
        .times()?
        .into_iter()
        .map(|t| SkeletonFrame::new(t, script.pose(t)))
        .collect::<Result<Vec<_>>>()?;
    GestureSequence::new(frames, script.subject.clone(), script.name())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PartScatter {
    /// Rate at rest, points per snapshot.
    pub base_rate: f64,
    pub rcs_log10_mean: f64,
    pub rcs_log10_std: f64,
}

impl Default for PartScatter {
    fn default() -> Self {
        PartScatter {
            base_rate: 1.0,
            rcs_log10_mean: -2.5,
            rcs_log10_std: 0.15,
        }
    }
}

/// One value per body part, addressable by name in config files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerPart<T> {
    pub forearm_l: T,
    pub forearm_r: T,
    pub upper_arm_l: T,
    pub upper_arm_r: T,
    pub head: T,
    pub torso: T,
}

impl<T: Copy> PerPart<T> {
    pub fn get(&self, part: BodyPart) -> T {
        match part {
            BodyPart::ForearmL => self.forearm_l,
            BodyPart::ForearmR => self.forearm_r,
            BodyPart::UpperArmL => self.upper_arm_l,
            BodyPart::UpperArmR => self.upper_arm_r,
            BodyPart::Head => self.head,
            BodyPart::Torso => self.torso,
        }
    }

    pub fn from_fn(f: impl Fn(BodyPart) -> T) -> Self {
        PerPart {
            forearm_l: f(BodyPart::ForearmL),
            forearm_r: f(BodyPart::ForearmR),
            upper_arm_l: f(BodyPart::UpperArmL),
            upper_arm_r: f(BodyPart::UpperArmR),
            head: f(BodyPart::Head),
            torso: f(BodyPart::Torso),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorNoise {
    pub enabled: bool,
    pub delay_std_ns: f64,
    pub angle_std_deg: f64,
    pub gain_std_db: f64,
}

impl Default for EstimatorNoise {
    fn default() -> Self {
        EstimatorNoise {
            enabled: false,
            delay_std_ns: 0.1,
            angle_std_deg: 0.2,
            gain_std_db: 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScatterProcessConfig {
    pub parts: PerPart<PartScatter>,
    /// Rate multiplier per m/s of axis-midpoint speed, s/m.
    pub rate_gain: f64,
    /// Isotropic per-snapshot placement jitter, m.
    pub jitter_std: f64,
    pub noise: EstimatorNoise,
}

impl Default for ScatterProcessConfig {
    fn default() -> Self {
        Self::dense()
    }
}

impl ScatterProcessConfig {
    fn with_rates(rates: [f64; NUM_PARTS]) -> Self {
        let parts = PerPart::from_fn(|p| PartScatter {
            base_rate: rates[p.code()],
            rcs_log10_mean: match p {
                BodyPart::ForearmL | BodyPart::ForearmR => -1.0,
                _ => -2.5,
            },
            rcs_log10_std: 0.15,
        });
        ScatterProcessConfig {
            parts,
            rate_gain: 2.0,
            jitter_std: 0.03,
            noise: EstimatorNoise::default(),
        }
    }

    /// Many points per part with forearm-dominated power.
    pub fn dense() -> Self {
        Self::with_rates([15.0, 15.0, 8.0, 8.0, 6.0, 24.0])
    }

    /// About one point per part, so that ten-snapshot count histograms are
    /// informative.
    pub fn sparse() -> Self {
        Self::with_rates([1.0, 1.0, 0.5, 0.5, 0.3, 0.6])
    }

    pub fn validate(&self) -> Result<()> {
        for part in BodyPart::ALL {
            let p = self.parts.get(part);
            if !(p.base_rate >= 0.0) || !(p.rcs_log10_std >= 0.0) || !p.rcs_log10_mean.is_finite() {
                return Err(Error::Config(format!("invalid scatter settings for {part}")));
            }
        }
        if !(self.rate_gain >= 0.0) || !(self.jitter_std >= 0.0) {
            return Err(Error::Config("rate_gain and jitter_std must be non-negative".into()));
        }
        Ok(())
    }
}

/// Ground-truth corpus for one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct ScatterTruth {
    /// Labeled points per snapshot, carrying their true path ids.
    pub points: Vec<Vec<ScatteringPoint>>,
    /// True rates per snapshot and part.
    pub lambda: Vec<[f64; NUM_PARTS]>,
    pub counts: Vec<[u32; NUM_PARTS]>,
}

impl ScatterTruth {
    pub fn flat_points(&self) -> Vec<ScatteringPoint> {
        self.points.iter().flatten().copied().collect()
    }
}

#[derive(Debug, Clone, Copy)]
struct Anchor {
    segment: usize,
    fraction: f64,
    rcs: f64,
    path_id: u64,
}

/// Axis-midpoint speed of every part at every snapshot.
pub fn part_speeds(seq: &GestureSequence) -> Result<Vec<[f64; NUM_PARTS]>> {
    let cfg = VelocityConfig { smoothing_window: 1 };
    (0..seq.len())
        .map(|i| {
            let v = keypoint_velocities(seq, i, &cfg)?;
            Ok(std::array::from_fn(|j| {
                let (a, b) = BodyPart::ALL[j].geometry().axis;
                ((a.resolve(&v) + b.resolve(&v)) * 0.5).norm()
            }))
        })
        .collect()
}

/// Draw the scattering process for a sequence.
///
/// Each snapshot and part draws `K ~ Poisson(lambda)`; if `K` does not exceed
/// the live paths a random subset survives, otherwise new paths are born at
/// length-weighted uniform positions along the part's segments. A path keeps
/// its segment fraction and cross section and receives fresh isotropic jitter
/// every snapshot.
pub fn sample_scatter_truth<R: Rng + ?Sized>(seq: &GestureSequence, cfg: &ScatterProcessConfig, rng: &mut R) -> Result<ScatterTruth> {
    cfg.validate()?;
    let speeds = part_speeds(seq)?;
    let mut alive: Vec<Vec<Anchor>> = vec![Vec::new(); NUM_PARTS];
    let mut next_id = 0u64;
    let mut truth = ScatterTruth {
        points: Vec::with_capacity(seq.len()),
        lambda: Vec::with_capacity(seq.len()),
        counts: Vec::with_capacity(seq.len()),
    };
    for (t, frame) in seq.frames.iter().enumerate() {
        let mut pts = Vec::new();
        let mut lambdas = [0.0; NUM_PARTS];
        let mut counts = [0u32; NUM_PARTS];
        for part in BodyPart::ALL {
            let j = part.code();
            let pc = cfg.parts.get(part);
            let lambda = pc.base_rate * (1.0 + cfg.rate_gain * speeds[t][j]);
            let k = sample_poisson(lambda, rng) as usize;
            let segments = part.geometry().segments;
            let live = &mut alive[j];
            if k <= live.len() {
                let mut keep: Vec<usize> = rand::seq::index::sample(rng, live.len(), k).into_vec();
                keep.sort_unstable();
                *live = keep.into_iter().map(|i| live[i]).collect();
            } else {
                let lengths: Vec<f64> = segments
                    .iter()
                    .map(|&(a, b)| (frame.position(b) - frame.position(a)).norm())
                    .collect();
                let total: f64 = lengths.iter().sum();
                for _ in live.len()..k {
                    let mut r = rng.random::<f64>() * total;
                    let mut segment = segments.len() - 1;
                    for (i, l) in lengths.iter().enumerate() {
                        if r < *l {
                            segment = i;
                            break;
                        }
                        r -= l;
                    }
                    let fraction = rng.random::<f64>();
                    let rcs = 10f64.powf(pc.rcs_log10_mean + pc.rcs_log10_std * standard_normal(rng));
                    live.push(Anchor { segment, fraction, rcs, path_id: next_id });
                    next_id += 1;
                }
            }
            for anchor in live.iter() {
                let (a, b) = segments[anchor.segment];
                let (pa, pb) = (frame.position(a), frame.position(b));
                let jitter = Vec3::new(standard_normal(rng), standard_normal(rng), standard_normal(rng)) * cfg.jitter_std;
                let position = pa + (pb - pa) * anchor.fraction + jitter;
                pts.push(ScatteringPoint::new(position, anchor.rcs, t).with_part(part).with_path_id(anchor.path_id));
            }
            lambdas[j] = lambda;
            counts[j] = k as u32;
        }
        truth.points.push(pts);
        truth.lambda.push(lambdas);
        truth.counts.push(counts);
    }
    Ok(truth)
}

/// Convert points to MPC records, optionally perturbed by estimator noise.
pub fn export_as_mpc<R: Rng + ?Sized>(
    points: &[ScatteringPoint],
    times: &[f64],
    rf: &RfConfig,
    noise: &EstimatorNoise,
    rng: &mut R,
) -> Result<Vec<MpcEstimate>> {
    let mut out = Vec::with_capacity(points.len());
    for p in points {
        let time = *times.get(p.snapshot).ok_or(Error::MissingFrame(p.snapshot))?;
        let mut m = point_to_mpc(p, time, rf)?;
        if noise.enabled {
            m.delay = (m.delay + noise.delay_std_ns * 1e-9 * standard_normal(rng)).max(f64::MIN_POSITIVE);
            let ang = noise.angle_std_deg.to_radians();
            m.azimuth += ang * standard_normal(rng);
            m.elevation = (m.elevation + ang * standard_normal(rng)).clamp(-PI / 2.0, PI / 2.0);
            m.amplitude *= 10f64.powf(noise.gain_std_db * standard_normal(rng) / 20.0);
        }
        out.push(m);
    }
    Ok(out)
}

pub const TRUTH_COUNT_HEADER: [&str; 4] = ["snapshot", "part", "lambda_true", "count_true"];
pub const TRUTH_POINT_HEADER: [&str; 7] = ["snapshot", "path_id_true", "part", "x", "y", "z", "rcs_m2"];

pub fn write_truth_counts_csv<W: std::io::Write>(writer: W, truth: &ScatterTruth) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(TRUTH_COUNT_HEADER)?;
    for (t, (lam, cnt)) in truth.lambda.iter().zip(&truth.counts).enumerate() {
        for part in BodyPart::ALL {
            let j = part.code();
            w.write_record([t.to_string(), part.name().to_string(), lam[j].to_string(), cnt[j].to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Per-snapshot true `(lambda, count)` arrays.
pub type TruthCounts = (Vec<[f64; NUM_PARTS]>, Vec<[u32; NUM_PARTS]>);

pub fn read_truth_counts_csv<R: std::io::Read>(reader: R) -> Result<TruthCounts> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(reader);
    if r.headers()?.iter().ne(TRUTH_COUNT_HEADER) {
        return Err(Error::Parse("unexpected truth-count header".into()));
    }
    let mut lambda: Vec<[f64; NUM_PARTS]> = Vec::new();
    let mut counts: Vec<[u32; NUM_PARTS]> = Vec::new();
    for record in r.records() {
        let record = record?;
        let bad = |what: &str| Error::Parse(format!("truth counts: bad {what}"));
        let t: usize = record[0].parse().map_err(|_| bad("snapshot"))?;
        let part: BodyPart = record[1].parse()?;
        let l: f64 = record[2].parse().map_err(|_| bad("lambda"))?;
        let c: u32 = record[3].parse().map_err(|_| bad("count"))?;
        if lambda.len() <= t {
            lambda.resize(t + 1, [0.0; NUM_PARTS]);
            counts.resize(t + 1, [0; NUM_PARTS]);
        }
        lambda[t][part.code()] = l;
        counts[t][part.code()] = c;
    }
    Ok((lambda, counts))
}

pub fn write_truth_points_csv<W: std::io::Write>(writer: W, points: &[ScatteringPoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(TRUTH_POINT_HEADER)?;
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

pub fn read_truth_points_csv<R: std::io::Read>(reader: R) -> Result<Vec<ScatteringPoint>> {
    // Same column layout as the labeled-point file apart from the id header.
    let mut text = String::new();
    let mut reader = reader;
    reader.read_to_string(&mut text)?;
    let replaced = text.replacen("path_id_true", "path_id", 1);
    crate::clustering::read_labeled_csv(replaced.as_bytes())
}
