//! Keypoint data model, alignment, interpolation, body-part geometry and the
//! per-part local coordinate frames.
//!
//! All positions are in meters in the global frame whose origin is the
//! collocated transceiver.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::{Mat3, Vec3};

pub const NUM_KEYPOINTS: usize = 19;
pub const NUM_PARTS: usize = 6;

/// Axis length below which a part axis is considered degenerate.
pub const MIN_AXIS_LENGTH: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum KeypointId {
    Nose = 0,
    LeftEye,
    RightEye,
    LeftEar,
    RightEar,
    LeftShoulder,
    RightShoulder,
    LeftElbow,
    RightElbow,
    LeftWrist,
    RightWrist,
    LeftHip,
    RightHip,
    LeftKnee,
    RightKnee,
    LeftAnkle,
    RightAnkle,
    Chest,
    Belly,
}

impl KeypointId {
    pub const ALL: [KeypointId; NUM_KEYPOINTS] = [
        KeypointId::Nose,
        KeypointId::LeftEye,
        KeypointId::RightEye,
        KeypointId::LeftEar,
        KeypointId::RightEar,
        KeypointId::LeftShoulder,
        KeypointId::RightShoulder,
        KeypointId::LeftElbow,
        KeypointId::RightElbow,
        KeypointId::LeftWrist,
        KeypointId::RightWrist,
        KeypointId::LeftHip,
        KeypointId::RightHip,
        KeypointId::LeftKnee,
        KeypointId::RightKnee,
        KeypointId::LeftAnkle,
        KeypointId::RightAnkle,
        KeypointId::Chest,
        KeypointId::Belly,
    ];

    /// Stable integer code used for file I/O.
    pub fn code(self) -> usize {
        self as usize
    }

    pub fn from_code(code: usize) -> Option<Self> {
        Self::ALL.get(code).copied()
    }

    /// Left/right counterpart; midline keypoints map to themselves.
    pub fn mirror(self) -> Self {
        use KeypointId::*;
        match self {
            LeftEye => RightEye,
            RightEye => LeftEye,
            LeftEar => RightEar,
            RightEar => LeftEar,
            LeftShoulder => RightShoulder,
            RightShoulder => LeftShoulder,
            LeftElbow => RightElbow,
            RightElbow => LeftElbow,
            LeftWrist => RightWrist,
            RightWrist => LeftWrist,
            LeftHip => RightHip,
            RightHip => LeftHip,
            LeftKnee => RightKnee,
            RightKnee => LeftKnee,
            LeftAnkle => RightAnkle,
            RightAnkle => LeftAnkle,
            other => other,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BodyPart {
    ForearmL = 0,
    ForearmR,
    UpperArmL,
    UpperArmR,
    Head,
    Torso,
}

impl BodyPart {
    pub const ALL: [BodyPart; NUM_PARTS] = [
        BodyPart::ForearmL,
        BodyPart::ForearmR,
        BodyPart::UpperArmL,
        BodyPart::UpperArmR,
        BodyPart::Head,
        BodyPart::Torso,
    ];

    pub fn code(self) -> usize {
        self as usize
    }

    pub fn from_code(code: usize) -> Option<Self> {
        Self::ALL.get(code).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            BodyPart::ForearmL => "forearm_l",
            BodyPart::ForearmR => "forearm_r",
            BodyPart::UpperArmL => "upper_arm_l",
            BodyPart::UpperArmR => "upper_arm_r",
            BodyPart::Head => "head",
            BodyPart::Torso => "torso",
        }
    }

    pub fn mirror(self) -> Self {
        match self {
            BodyPart::ForearmL => BodyPart::ForearmR,
            BodyPart::ForearmR => BodyPart::ForearmL,
            BodyPart::UpperArmL => BodyPart::UpperArmR,
            BodyPart::UpperArmR => BodyPart::UpperArmL,
            other => other,
        }
    }

    pub fn geometry(self) -> BodyPartGeometry {
        BodyPartGeometry::of(self)
    }
}

impl fmt::Display for BodyPart {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BodyPart {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BodyPart::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Parse(format!("unknown body part {s:?}")))
    }
}

/// Endpoint of a part axis: either a keypoint or the midpoint of two.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AxisPoint {
    Keypoint(KeypointId),
    Midpoint(KeypointId, KeypointId),
}

impl AxisPoint {
    pub fn resolve<T>(self, values: &[T; NUM_KEYPOINTS]) -> T
    where
        T: Copy + std::ops::Add<Output = T> + std::ops::Mul<f64, Output = T>,
    {
        match self {
            AxisPoint::Keypoint(k) => values[k.code()],
            AxisPoint::Midpoint(a, b) => (values[a.code()] + values[b.code()]) * 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BodyPartGeometry {
    pub part: BodyPart,
    pub segments: &'static [(KeypointId, KeypointId)],
    pub axis: (AxisPoint, AxisPoint),
}

impl BodyPartGeometry {
    pub fn of(part: BodyPart) -> Self {
        use KeypointId::*;
        const FOREARM_L: [(KeypointId, KeypointId); 1] = [(LeftElbow, LeftWrist)];
        const FOREARM_R: [(KeypointId, KeypointId); 1] = [(RightElbow, RightWrist)];
        const UPPER_ARM_L: [(KeypointId, KeypointId); 1] = [(LeftShoulder, LeftElbow)];
        const UPPER_ARM_R: [(KeypointId, KeypointId); 1] = [(RightShoulder, RightElbow)];
        const HEAD: [(KeypointId, KeypointId); 4] = [
            (Nose, LeftEye),
            (Nose, RightEye),
            (LeftEye, LeftEar),
            (RightEye, RightEar),
        ];
        const TORSO: [(KeypointId, KeypointId); 5] = [
            (LeftShoulder, RightShoulder),
            (LeftShoulder, LeftHip),
            (RightShoulder, RightHip),
            (LeftHip, RightHip),
            (Belly, Chest),
        ];
        let kp = AxisPoint::Keypoint;
        let (segments, axis): (&'static [(KeypointId, KeypointId)], _) = match part {
            BodyPart::ForearmL => (&FOREARM_L, (kp(LeftElbow), kp(LeftWrist))),
            BodyPart::ForearmR => (&FOREARM_R, (kp(RightElbow), kp(RightWrist))),
            BodyPart::UpperArmL => (&UPPER_ARM_L, (kp(LeftShoulder), kp(LeftElbow))),
            BodyPart::UpperArmR => (&UPPER_ARM_R, (kp(RightShoulder), kp(RightElbow))),
            BodyPart::Head => (&HEAD, (AxisPoint::Midpoint(LeftEar, RightEar), kp(Nose))),
            BodyPart::Torso => (&TORSO, (kp(Belly), kp(Chest))),
        };
        BodyPartGeometry { part, segments, axis }
    }
}

/// Timestamped 19-keypoint pose in the global frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonFrame {
    pub time: f64,
    pub positions: [Vec3; NUM_KEYPOINTS],
}

impl SkeletonFrame {
    pub fn new(time: f64, positions: [Vec3; NUM_KEYPOINTS]) -> Result<Self> {
        let frame = SkeletonFrame { time, positions };
        frame.validate()?;
        Ok(frame)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.time.is_finite() || self.time < 0.0 {
            return Err(Error::InvalidFrame(format!("time {} must be finite and non-negative", self.time)));
        }
        if self.positions.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::NonFinite("keypoint positions"));
        }
        Ok(())
    }

    pub fn position(&self, k: KeypointId) -> Vec3 {
        self.positions[k.code()]
    }

    pub fn translated(&self, offset: Vec3) -> SkeletonFrame {
        SkeletonFrame {
            time: self.time,
            positions: self.positions.map(|p| p + offset),
        }
    }

    /// Keypoint-major flattening: `[kp00_x, kp00_y, kp00_z, kp01_x, ...]`.
    pub fn to_flat(&self) -> [f64; NUM_KEYPOINTS * 3] {
        let mut out = [0.0; NUM_KEYPOINTS * 3];
        for (i, p) in self.positions.iter().enumerate() {
            out[3 * i..3 * i + 3].copy_from_slice(p.as_slice());
        }
        out
    }

    pub fn axis_points(&self, part: BodyPart) -> (Vec3, Vec3) {
        let (a, b) = part.geometry().axis;
        (a.resolve(&self.positions), b.resolve(&self.positions))
    }
}

/// A frame translated so that its belly sits at the alignment reference.
///
/// Only the alignment functions construct this type, so the networks can rely
/// on receiving aligned input.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedFrame(SkeletonFrame);

impl AlignedFrame {
    pub fn frame(&self) -> &SkeletonFrame {
        &self.0
    }

    pub fn into_inner(self) -> SkeletonFrame {
        self.0
    }
}

/// Translate `frame` rigidly so its belly lands on `reference`.
pub fn align_to_reference(frame: &SkeletonFrame, reference: Vec3) -> AlignedFrame {
    let offset = reference - frame.position(KeypointId::Belly);
    AlignedFrame(frame.translated(offset))
}

/// Align a whole sequence with one offset taken from the first frame's belly,
/// so gross body motion inside the sequence survives alignment.
pub fn align_sequence(seq: &GestureSequence, reference: Vec3) -> Vec<AlignedFrame> {
    let Some(first) = seq.frames.first() else {
        return Vec::new();
    };
    let offset = reference - first.position(KeypointId::Belly);
    seq.frames.iter().map(|f| AlignedFrame(f.translated(offset))).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GestureSequence {
    pub frames: Vec<SkeletonFrame>,
    pub subject: String,
    pub gesture: String,
}

impl GestureSequence {
    pub fn new(frames: Vec<SkeletonFrame>, subject: impl Into<String>, gesture: impl Into<String>) -> Result<Self> {
        for (i, f) in frames.iter().enumerate() {
            f.validate()?;
            if i > 0 && f.time <= frames[i - 1].time {
                return Err(Error::NonMonotonicTime(i));
            }
        }
        Ok(GestureSequence {
            frames,
            subject: subject.into(),
            gesture: gesture.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn duration(&self) -> f64 {
        match (self.frames.first(), self.frames.last()) {
            (Some(a), Some(b)) => b.time - a.time,
            _ => 0.0,
        }
    }
}

/// Resample a sequence onto a uniform grid `t0 + i * target_interval` with
/// per-keypoint linear interpolation.
///
/// The grid stops at the last input time; when the span is a whole number of
/// intervals the last input frame is reproduced exactly.
pub fn interpolate_sequence(seq: &GestureSequence, target_interval: f64) -> Result<GestureSequence> {
    if seq.frames.len() < 2 {
        return Err(Error::InsufficientFrames { needed: 2, got: seq.frames.len() });
    }
    if !(target_interval > 0.0) || !target_interval.is_finite() {
        return Err(Error::Config(format!("target interval must be positive, got {target_interval}")));
    }
    let t0 = seq.frames[0].time;
    let t_end = seq.frames[seq.frames.len() - 1].time;
    let steps = ((t_end - t0) / target_interval + 1e-9).floor() as usize;

    let mut out = Vec::with_capacity(steps + 1);
    let mut seg = 0;
    for i in 0..=steps {
        let mut t = t0 + i as f64 * target_interval;
        if (t - t_end).abs() <= 1e-9 * target_interval {
            t = t_end;
        }
        let t = t.min(t_end);
        while seg + 2 < seq.frames.len() && seq.frames[seg + 1].time <= t {
            seg += 1;
        }
        let a = &seq.frames[seg];
        let b = &seq.frames[seg + 1];
        let positions = if t == a.time {
            a.positions
        } else if t == b.time {
            b.positions
        } else {
            let w = (t - a.time) / (b.time - a.time);
            std::array::from_fn(|k| a.positions[k] + (b.positions[k] - a.positions[k]) * w)
        };
        out.push(SkeletonFrame { time: t, positions });
    }
    GestureSequence::new(out, seq.subject.clone(), seq.gesture.clone())
}

pub fn point_to_segment_distance(p: &Vec3, a: &Vec3, b: &Vec3) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    if len2 == 0.0 {
        return (p - a).norm();
    }
    let s = ((p - a).dot(&ab) / len2).clamp(0.0, 1.0);
    // Endpoint distances keep points that lie on an endpoint at exactly zero.
    (p - (a + ab * s)).norm().min((p - a).norm()).min((p - b).norm())
}

/// Shortest distance from `p` to any segment of the part.
pub fn point_to_part_distance(p: &Vec3, part: BodyPart, frame: &SkeletonFrame) -> f64 {
    part.geometry()
        .segments
        .iter()
        .map(|&(a, b)| point_to_segment_distance(p, &frame.position(a), &frame.position(b)))
        .fold(f64::INFINITY, f64::min)
}

/// Right-handed orthonormal frame attached to a body part; the rotation's
/// columns are the unit axes (zeta, beta, gamma).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalFrame {
    pub origin: Vec3,
    pub rotation: Mat3,
}

impl LocalFrame {
    pub fn zeta(&self) -> Vec3 {
        self.rotation.column(0).into_owned()
    }

    pub fn beta(&self) -> Vec3 {
        self.rotation.column(1).into_owned()
    }

    pub fn gamma(&self) -> Vec3 {
        self.rotation.column(2).into_owned()
    }

    pub fn to_local(&self, p_global: &Vec3) -> Vec3 {
        self.rotation.transpose() * (p_global - self.origin)
    }

    pub fn to_global(&self, p_local: &Vec3) -> Vec3 {
        self.origin + self.rotation * p_local
    }
}

/// Build the local frame of `part`: zeta runs from axis point A to B, gamma is
/// the normalized component of `tx - A` transverse to zeta, beta = gamma x zeta.
///
/// When `tx - A` is parallel to zeta, the transverse component of
/// `fallback_gamma` is used instead.
pub fn local_frame(frame: &SkeletonFrame, part: BodyPart, tx: &Vec3, fallback_gamma: Option<&Vec3>) -> Result<LocalFrame> {
    let (a, b) = frame.axis_points(part);
    frame_from_axis(&a, &b, tx, fallback_gamma)
}

pub fn frame_from_axis(a: &Vec3, b: &Vec3, tx: &Vec3, fallback_gamma: Option<&Vec3>) -> Result<LocalFrame> {
    let axis = b - a;
    let len = axis.norm();
    if !(len > MIN_AXIS_LENGTH) {
        return Err(Error::DegenerateAxis);
    }
    let zeta = axis / len;
    let transverse = |v: &Vec3| v - zeta * zeta.dot(v);

    let mut t = transverse(&(tx - a));
    if t.norm() < MIN_AXIS_LENGTH {
        let fb = fallback_gamma.ok_or(Error::SingularFrame)?;
        t = transverse(fb);
        if t.norm() < MIN_AXIS_LENGTH {
            return Err(Error::SingularFrame);
        }
    }
    let gamma = t.normalize();
    let beta = gamma.cross(&zeta);
    Ok(LocalFrame {
        origin: *a,
        rotation: Mat3::from_columns(&[zeta, beta, gamma]),
    })
}

/// Local frames for every snapshot of a sequence; a singular snapshot reuses
/// the previous snapshot's gamma before falling back to `fallback_gamma`.
pub fn sequence_local_frames(
    frames: &[SkeletonFrame],
    part: BodyPart,
    tx: &Vec3,
    fallback_gamma: Option<&Vec3>,
) -> Result<Vec<LocalFrame>> {
    let mut out: Vec<LocalFrame> = Vec::with_capacity(frames.len());
    for frame in frames {
        let prev_gamma = out.last().map(|f| f.gamma());
        let lf = match local_frame(frame, part, tx, prev_gamma.as_ref()) {
            Err(Error::SingularFrame) => local_frame(frame, part, tx, fallback_gamma)?,
            other => other?,
        };
        out.push(lf);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VelocityConfig {
    /// Width in samples of the centered moving average applied to positions
    /// before differencing; 0 or 1 disables smoothing.
    pub smoothing_window: usize,
}

impl Default for VelocityConfig {
    fn default() -> Self {
        VelocityConfig { smoothing_window: 5 }
    }
}

fn smoothed_positions(frames: &[SkeletonFrame], index: usize, window: usize) -> [Vec3; NUM_KEYPOINTS] {
    let n = frames.len();
    if window <= 1 {
        return frames[index].positions;
    }
    // Symmetric truncation near the ends keeps affine trajectories exact.
    let half = (window / 2).min(index).min(n - 1 - index);
    let count = (2 * half + 1) as f64;
    std::array::from_fn(|k| {
        let mut acc = Vec3::zeros();
        for f in &frames[index - half..=index + half] {
            acc += f.positions[k];
        }
        acc / count
    })
}

/// Keypoint velocities (m/s) at `t_index` by central differences, one-sided at
/// the sequence ends.
pub fn keypoint_velocities(seq: &GestureSequence, t_index: usize, cfg: &VelocityConfig) -> Result<[Vec3; NUM_KEYPOINTS]> {
    let frames = &seq.frames;
    let n = frames.len();
    if n < 2 {
        return Err(Error::InsufficientFrames { needed: 2, got: n });
    }
    if t_index >= n {
        return Err(Error::MissingFrame(t_index));
    }
    let (lo, hi) = match t_index {
        0 => (0, 1),
        i if i == n - 1 => (n - 2, n - 1),
        i => (i - 1, i + 1),
    };
    let w = cfg.smoothing_window;
    let a = smoothed_positions(frames, lo, w);
    let b = smoothed_positions(frames, hi, w);
    let dt = frames[hi].time - frames[lo].time;
    Ok(std::array::from_fn(|k| (b[k] - a[k]) / dt))
}

/// Velocities for every snapshot of the sequence.
pub fn sequence_velocities(seq: &GestureSequence, cfg: &VelocityConfig) -> Result<Vec<[Vec3; NUM_KEYPOINTS]>> {
    (0..seq.len()).map(|i| keypoint_velocities(seq, i, cfg)).collect()
}

const KEYPOINT_FIXED_COLUMNS: [&str; 3] = ["time_s", "subject", "gesture"];

fn keypoint_header() -> Vec<String> {
    let mut header: Vec<String> = KEYPOINT_FIXED_COLUMNS.iter().map(|s| s.to_string()).collect();
    for k in 0..NUM_KEYPOINTS {
        for axis in ["x", "y", "z"] {
            header.push(format!("kp{k:02}_{axis}"));
        }
    }
    header
}

/// Write sequences as keypoint CSV rows (one row per frame).
pub fn write_keypoints_csv<W: std::io::Write>(writer: W, sequences: &[GestureSequence]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(keypoint_header())?;
    for seq in sequences {
        for f in &seq.frames {
            let mut row = vec![f.time.to_string(), seq.subject.clone(), seq.gesture.clone()];
            row.extend(f.to_flat().iter().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Read keypoint CSV rows; consecutive rows sharing (subject, gesture) form
/// one sequence.
pub fn read_keypoints_csv<R: std::io::Read>(reader: R) -> Result<Vec<GestureSequence>> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(reader);
    let header = r.headers()?.clone();
    let expected = keypoint_header();
    if header.len() != expected.len() || header.iter().zip(&expected).any(|(a, b)| a != b) {
        return Err(Error::Parse("keypoint CSV header does not match the 19-keypoint layout".into()));
    }
    let mut sequences: Vec<GestureSequence> = Vec::new();
    let mut current: Option<(String, String, Vec<SkeletonFrame>)> = None;
    for (line, record) in r.records().enumerate() {
        let record = record?;
        let parse = |i: usize| -> Result<f64> {
            record[i]
                .parse::<f64>()
                .map_err(|e| Error::Parse(format!("row {}: column {}: {e}", line + 1, expected[i])))
        };
        let time = parse(0)?;
        let subject = record[1].to_string();
        let gesture = record[2].to_string();
        let mut positions = [Vec3::zeros(); NUM_KEYPOINTS];
        for (k, p) in positions.iter_mut().enumerate() {
            let base = 3 + 3 * k;
            *p = Vec3::new(parse(base)?, parse(base + 1)?, parse(base + 2)?);
        }
        let frame = SkeletonFrame::new(time, positions)?;
        match &mut current {
            Some((s, g, frames)) if *s == subject && *g == gesture => frames.push(frame),
            _ => {
                if let Some((s, g, frames)) = current.take() {
                    sequences.push(GestureSequence::new(frames, s, g)?);
                }
                current = Some((subject, gesture, vec![frame]));
            }
        }
    }
    if let Some((s, g, frames)) = current {
        sequences.push(GestureSequence::new(frames, s, g)?);
    }
    Ok(sequences)
}

pub fn read_keypoints_file(path: &Path) -> Result<Vec<GestureSequence>> {
    read_keypoints_csv(std::fs::File::open(path)?)
}
