//! Channel synthesis from labeled scattering points: delays, radar-equation
//! gains, rigid-body Doppler, delay profiles, delay spread and micro-Doppler
//! spectra.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::{Rng, RngExt};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scatter_geom::{amplitude_from_rcs, RfConfig, ScatteringPoint};
use crate::skeleton::{keypoint_velocities, BodyPart, GestureSequence, SkeletonFrame, VelocityConfig, MIN_AXIS_LENGTH, NUM_KEYPOINTS};
use crate::{Vec3, C0};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathSample {
    /// Round-trip delay, s.
    pub delay: f64,
    /// Power gain `|alpha|^2`.
    pub gain: f64,
    /// Doppler shift, Hz; positive when approaching.
    pub doppler: f64,
    /// Random initial phase in `[-pi, pi)`.
    pub phase: f64,
    pub part: BodyPart,
    pub snapshot: usize,
    pub path_id: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSnapshot {
    pub snapshot: usize,
    pub time: f64,
    pub paths: Vec<PathSample>,
}

impl ChannelSnapshot {
    pub fn total_power(&self) -> f64 {
        self.paths.iter().map(|p| p.gain).sum()
    }
}

pub fn path_delay(p: &Vec3, cfg: &RfConfig) -> Result<f64> {
    let d = (cfg.tx() - p).norm();
    if d == 0.0 {
        return Err(Error::ZeroRange);
    }
    Ok(2.0 * d / C0)
}

/// Angular velocity of a rigid segment A-B whose rotation axis is
/// perpendicular to the segment.
pub fn angular_velocity(r_a: &Vec3, r_b: &Vec3, v_a: &Vec3, v_b: &Vec3) -> Result<Vec3> {
    let axis = r_b - r_a;
    let len2 = axis.norm_squared();
    if !(len2.sqrt() > MIN_AXIS_LENGTH) {
        return Err(Error::DegenerateAxis);
    }
    Ok(axis.cross(&(v_b - v_a)) / len2)
}

pub fn point_velocity(r_n: &Vec3, r_a: &Vec3, v_a: &Vec3, omega: &Vec3) -> Vec3 {
    v_a + omega.cross(&(r_n - r_a))
}

pub fn doppler_shift(v_n: &Vec3, r_n: &Vec3, cfg: &RfConfig) -> Result<f64> {
    let los = cfg.tx() - r_n;
    let d = los.norm();
    if d == 0.0 {
        return Err(Error::ZeroRange);
    }
    Ok(2.0 * cfg.carrier_frequency / C0 * v_n.dot(&(los / d)))
}

/// Persistent per-path random phases.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PhaseBook {
    phases: BTreeMap<u64, f64>,
}

fn uniform_phase<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    -PI + 2.0 * PI * rng.random::<f64>()
}

impl PhaseBook {
    pub fn new() -> Self {
        Self::default()
    }

    /// Phase of `path_id`, drawn on first use. Untracked paths get a fresh draw.
    pub fn phase<R: Rng + ?Sized>(&mut self, path_id: Option<u64>, rng: &mut R) -> f64 {
        match path_id {
            Some(id) => *self.phases.entry(id).or_insert_with(|| uniform_phase(rng)),
            None => uniform_phase(rng),
        }
    }
}

/// Turn the points of one snapshot into path samples. `frame` and
/// `velocities` describe the skeleton at that snapshot.
pub fn synthesize_snapshot<R: Rng + ?Sized>(
    points: &[ScatteringPoint],
    frame: &SkeletonFrame,
    velocities: &[Vec3; NUM_KEYPOINTS],
    snapshot: usize,
    cfg: &RfConfig,
    phases: &mut PhaseBook,
    rng: &mut R,
) -> Result<ChannelSnapshot> {
    let mut paths = Vec::with_capacity(points.len());
    for p in points {
        let part = p.part.ok_or(Error::MissingPartLabel)?;
        let (a, b) = part.geometry().axis;
        let (r_a, r_b) = (a.resolve(&frame.positions), b.resolve(&frame.positions));
        let (v_a, v_b) = (a.resolve(velocities), b.resolve(velocities));
        let omega = angular_velocity(&r_a, &r_b, &v_a, &v_b)?;
        let v_n = point_velocity(&p.position, &r_a, &v_a, &omega);
        let delay = path_delay(&p.position, cfg)?;
        let d = C0 * delay / 2.0;
        paths.push(PathSample {
            delay,
            gain: amplitude_from_rcs(p.rcs, d, cfg)?,
            doppler: doppler_shift(&v_n, &p.position, cfg)?,
            phase: phases.phase(p.path_id, rng),
            part,
            snapshot,
            path_id: p.path_id,
        });
    }
    Ok(ChannelSnapshot {
        snapshot,
        time: frame.time,
        paths,
    })
}

/// Channel snapshots for a whole sequence; `points_by_snapshot[t]` pairs with
/// `seq.frames[t]`.
pub fn synthesize_sequence<R: Rng + ?Sized>(
    points_by_snapshot: &[Vec<ScatteringPoint>],
    seq: &GestureSequence,
    velocity: &VelocityConfig,
    cfg: &RfConfig,
    rng: &mut R,
) -> Result<Vec<ChannelSnapshot>> {
    if points_by_snapshot.len() > seq.len() {
        return Err(Error::MissingFrame(seq.len()));
    }
    let mut phases = PhaseBook::new();
    let mut out = Vec::with_capacity(points_by_snapshot.len());
    for (t, pts) in points_by_snapshot.iter().enumerate() {
        let v = keypoint_velocities(seq, t, velocity)?;
        out.push(synthesize_snapshot(pts, &seq.frames[t], &v, t, cfg, &mut phases, rng)?);
    }
    Ok(out)
}

/// Power per delay bin. Bin `i` covers `[(first_bin + i) * w, (first_bin + i + 1) * w)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayProfile {
    pub bin_width: f64,
    pub first_bin: i64,
    pub power: Vec<f64>,
}

impl DelayProfile {
    /// Start delay of bin `i`, s.
    pub fn delay(&self, i: usize) -> f64 {
        (self.first_bin + i as i64) as f64 * self.bin_width
    }

    pub fn delays(&self) -> Vec<f64> {
        (0..self.power.len()).map(|i| self.delay(i)).collect()
    }

    pub fn total_power(&self) -> f64 {
        self.power.iter().sum()
    }
}

pub fn pdp(snapshot: &ChannelSnapshot, cfg: &RfConfig) -> DelayProfile {
    let w = cfg.delay_resolution();
    let bins: Vec<i64> = snapshot.paths.iter().map(|p| (p.delay / w).floor() as i64).collect();
    let (Some(&lo), Some(&hi)) = (bins.iter().min(), bins.iter().max()) else {
        return DelayProfile { bin_width: w, first_bin: 0, power: Vec::new() };
    };
    let mut power = vec![0.0; (hi - lo + 1) as usize];
    for (p, b) in snapshot.paths.iter().zip(&bins) {
        power[(b - lo) as usize] += p.gain;
    }
    DelayProfile { bin_width: w, first_bin: lo, power }
}

/// Root-mean-square delay spread, s.
pub fn rmsds(profile: &DelayProfile) -> Result<f64> {
    let total = profile.total_power();
    if !(total > 0.0) {
        return Err(Error::ZeroPower);
    }
    // Central moment about the mean, with delays relative to the first bin.
    let w = profile.bin_width;
    let mean = profile.power.iter().enumerate().map(|(i, p)| p * i as f64 * w).sum::<f64>() / total;
    let var = profile
        .power
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let d = i as f64 * w - mean;
            p * d * d
        })
        .sum::<f64>()
        / total;
    Ok(var.sqrt())
}

/// Per-snapshot delay spread; `None` for snapshots without power.
pub fn rmsds_timeseries(snapshots: &[ChannelSnapshot], cfg: &RfConfig) -> Vec<Option<f64>> {
    snapshots.iter().map(|s| rmsds(&pdp(s, cfg)).ok()).collect()
}

/// Empirical CDF.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalCdf {
    sorted: Vec<f64>,
}

impl EmpiricalCdf {
    /// Sorted sample values paired with `rank / n`.
    pub fn points(&self) -> Vec<(f64, f64)> {
        let n = self.sorted.len() as f64;
        self.sorted.iter().enumerate().map(|(i, &v)| (v, (i + 1) as f64 / n)).collect()
    }

    /// Fraction of the sample at or below `x`.
    pub fn eval(&self, x: f64) -> f64 {
        self.sorted.partition_point(|&v| v <= x) as f64 / self.sorted.len() as f64
    }

    pub fn values(&self) -> &[f64] {
        &self.sorted
    }
}

pub fn cdf(values: &[f64]) -> Result<EmpiricalCdf> {
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::NonFinite("cdf input"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(EmpiricalCdf { sorted })
}

/// Doppler axis with uniformly spaced bin centers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DopplerBins {
    pub first_center: f64,
    pub width: f64,
    pub count: usize,
}

impl DopplerBins {
    /// Symmetric bins of `width` Hz covering `[-max, max]`.
    pub fn symmetric(max: f64, width: f64) -> Self {
        let half = (max / width).ceil() as usize;
        DopplerBins {
            first_center: -(half as f64) * width,
            width,
            count: 2 * half + 1,
        }
    }

    pub fn center(&self, i: usize) -> f64 {
        self.first_center + i as f64 * self.width
    }

    /// Nearest bin; values beyond the axis land in the end bins.
    pub fn index(&self, f: f64) -> usize {
        let i = ((f - self.first_center) / self.width).round();
        i.clamp(0.0, (self.count - 1) as f64) as usize
    }
}

/// Power at each path's Doppler shift, accumulated into bins.
pub fn instantaneous_spectrum(snapshot: &ChannelSnapshot, bins: &DopplerBins) -> Vec<f64> {
    let mut out = vec![0.0; bins.count];
    for p in &snapshot.paths {
        out[bins.index(p.doppler)] += p.gain;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StftConfig {
    pub window_len: usize,
    pub hop: usize,
}

impl Default for StftConfig {
    fn default() -> Self {
        StftConfig { window_len: 128, hop: 32 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    /// Frame center times, s.
    pub times: Vec<f64>,
    /// Doppler bin frequencies, ascending, Hz.
    pub doppler: Vec<f64>,
    /// `power[frame][bin]`, linear.
    pub power: Vec<Vec<f64>>,
    pub window_len: usize,
    pub hop: usize,
    pub interval: f64,
}

impl Spectrogram {
    pub fn bin_width(&self) -> f64 {
        1.0 / (self.window_len as f64 * self.interval)
    }

    /// Doppler frequency of the strongest bin of each frame.
    pub fn ridge(&self) -> Vec<f64> {
        self.power
            .iter()
            .map(|row| {
                let mut best = 0;
                for (i, v) in row.iter().enumerate() {
                    if *v > row[best] {
                        best = i;
                    }
                }
                self.doppler[best]
            })
            .collect()
    }
}

/// Periodic Hann window.
pub fn hann(len: usize) -> Vec<f64> {
    (0..len).map(|i| 0.5 * (1.0 - (2.0 * PI * i as f64 / len as f64).cos())).collect()
}

fn check_uniform(snapshots: &[ChannelSnapshot]) -> Result<f64> {
    if snapshots.len() < 2 {
        return Err(Error::SequenceTooShort { len: snapshots.len(), window: 2 });
    }
    let dt = snapshots[1].time - snapshots[0].time;
    if !(dt > 0.0) {
        return Err(Error::NonUniformSampling(1));
    }
    for i in 1..snapshots.len() {
        let d = snapshots[i].time - snapshots[i - 1].time;
        if (d - dt).abs() > 1e-6 * dt {
            return Err(Error::NonUniformSampling(i));
        }
    }
    Ok(dt)
}

/// Slow-time complex channel sum. Tracked paths accumulate phase from their
/// Doppler history; untracked paths use their per-snapshot phase.
pub fn slow_time_signal(snapshots: &[ChannelSnapshot], interval: f64) -> Vec<Complex64> {
    let mut cumulative: BTreeMap<u64, f64> = BTreeMap::new();
    snapshots
        .iter()
        .map(|s| {
            let mut acc = Complex64::new(0.0, 0.0);
            for p in &s.paths {
                let phi = match p.path_id {
                    Some(id) => {
                        let c = cumulative.entry(id).or_insert(0.0);
                        *c += p.doppler * interval;
                        p.phase + 2.0 * PI * (*c - c.floor())
                    }
                    None => p.phase,
                };
                acc += Complex64::from_polar(p.gain.sqrt(), phi);
            }
            acc
        })
        .collect()
}

pub fn stft_spectrogram(snapshots: &[ChannelSnapshot], cfg: &StftConfig) -> Result<Spectrogram> {
    let n = snapshots.len();
    if cfg.window_len == 0 || cfg.hop == 0 {
        return Err(Error::Config("STFT window and hop must be positive".into()));
    }
    if cfg.window_len > n {
        return Err(Error::SequenceTooShort { len: n, window: cfg.window_len });
    }
    let dt = check_uniform(snapshots)?;
    let signal = slow_time_signal(snapshots, dt);
    let l = cfg.window_len;
    let window = hann(l);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(l);
    let half = l / 2;
    let bin = 1.0 / (l as f64 * dt);
    let doppler: Vec<f64> = (0..l).map(|k| (k as f64 - half as f64) * bin).collect();

    let mut times = Vec::new();
    let mut power = Vec::new();
    let mut buf = vec![Complex64::new(0.0, 0.0); l];
    let mut start = 0;
    while start + l <= n {
        for i in 0..l {
            buf[i] = signal[start + i] * window[i];
        }
        fft.process(&mut buf);
        // Reorder so that frequencies ascend from -1/(2 dt).
        let row: Vec<f64> = (0..l).map(|k| buf[(k + l - half) % l].norm_sqr() / l as f64).collect();
        power.push(row);
        times.push(snapshots[start].time + (l - 1) as f64 * dt / 2.0);
        start += cfg.hop;
    }
    Ok(Spectrogram {
        times,
        doppler,
        power,
        window_len: l,
        hop: cfg.hop,
        interval: dt,
    })
}

pub const CIR_HEADER: [&str; 8] = ["snapshot", "time_s", "path_id", "part", "delay_ns", "gain_linear", "doppler_hz", "phase_rad"];

/// One row per path tap; untracked paths leave `path_id` empty.
pub fn write_cir_csv<W: std::io::Write>(writer: W, snapshots: &[ChannelSnapshot]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(CIR_HEADER)?;
    for s in snapshots {
        for p in &s.paths {
            w.write_record([
                s.snapshot.to_string(),
                s.time.to_string(),
                p.path_id.map(|id| id.to_string()).unwrap_or_default(),
                p.part.name().to_string(),
                (p.delay * 1e9).to_string(),
                p.gain.to_string(),
                p.doppler.to_string(),
                p.phase.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Delay profiles on a shared bin axis: the header row holds bin start
/// delays in ns, each row one snapshot.
pub fn write_pdp_csv<W: std::io::Write>(writer: W, snapshots: &[ChannelSnapshot], cfg: &RfConfig) -> Result<()> {
    let profiles: Vec<DelayProfile> = snapshots.iter().map(|s| pdp(s, cfg)).collect();
    let filled = || profiles.iter().filter(|p| !p.power.is_empty());
    let lo = filled().map(|p| p.first_bin).min().unwrap_or(0);
    let hi = filled().map(|p| p.first_bin + p.power.len() as i64).max().unwrap_or(0);
    let w_ns = cfg.delay_resolution() * 1e9;
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["snapshot".to_string(), "time_s".to_string()];
    header.extend((lo..hi).map(|b| (b as f64 * w_ns).to_string()));
    w.write_record(&header)?;
    for (s, p) in snapshots.iter().zip(&profiles) {
        let mut row = vec![s.snapshot.to_string(), s.time.to_string()];
        row.extend((lo..hi).map(|b| {
            let i = b - p.first_bin;
            if i >= 0 && (i as usize) < p.power.len() { p.power[i as usize] } else { 0.0 }.to_string()
        }));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// RMS delay spread per snapshot in ns, empty where the snapshot has no power.
pub fn write_rmsds_csv<W: std::io::Write>(writer: W, snapshots: &[ChannelSnapshot], cfg: &RfConfig) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["snapshot", "time_s", "rmsds_ns"])?;
    for (s, r) in snapshots.iter().zip(rmsds_timeseries(snapshots, cfg)) {
        w.write_record([s.snapshot.to_string(), s.time.to_string(), r.map(|v| (v * 1e9).to_string()).unwrap_or_default()])?;
    }
    w.flush()?;
    Ok(())
}

/// Spectrogram matrix: the header row holds Doppler bins in Hz, each row one
/// frame led by its centre time.
pub fn write_spectrogram_csv<W: std::io::Write>(writer: W, spec: &Spectrogram) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["time_s".to_string()];
    header.extend(spec.doppler.iter().map(|f| f.to_string()));
    w.write_record(&header)?;
    for (t, row) in spec.times.iter().zip(&spec.power) {
        let mut r = vec![t.to_string()];
        r.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::KeypointId;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rf() -> RfConfig {
        RfConfig::default()
    }

    fn sample(delay: f64, gain: f64, doppler: f64, snapshot: usize, path_id: Option<u64>) -> PathSample {
        PathSample {
            delay,
            gain,
            doppler,
            phase: 0.0,
            part: BodyPart::Torso,
            snapshot,
            path_id,
        }
    }

    #[test]
    fn delay_examples() {
        let c = rf();
        let tau = path_delay(&Vec3::new(2.5, 0.0, 0.0), &c).unwrap();
        assert!((tau - 5.0 / C0).abs() < 1e-22);
        assert!((tau * 1e9 - 16.678).abs() < 1e-3);
        let tau2 = path_delay(&Vec3::new(5.0, 0.0, 0.0), &c).unwrap();
        assert!((tau2 - 2.0 * tau).abs() < 1e-22);
        assert!(path_delay(&Vec3::zeros(), &c).is_err());
        let p = ScatteringPoint::new(Vec3::new(1.3, -0.4, 0.2), 0.01, 0);
        let m = crate::scatter_geom::point_to_mpc(&p, 0.0, &c).unwrap();
        assert_eq!(m.delay, path_delay(&p.position, &c).unwrap());
    }

    #[test]
    fn angular_velocity_examples() {
        let z = Vec3::zeros();
        let w = angular_velocity(&z, &Vec3::new(1.0, 0.0, 0.0), &z, &Vec3::new(0.0, 1.0, 0.0)).unwrap();
        assert_eq!(w, Vec3::new(0.0, 0.0, 1.0));
        let v = Vec3::new(0.3, -0.1, 0.2);
        assert_eq!(angular_velocity(&z, &Vec3::new(0.0, 0.4, 0.0), &v, &v).unwrap(), Vec3::zeros());
        assert!(angular_velocity(&z, &z, &z, &z).is_err());
    }

    proptest! {
        #[test]
        fn recovers_perpendicular_screw(
            a in prop::array::uniform3(-2.0f64..2.0),
            d in prop::array::uniform3(-1.0f64..1.0),
            w in prop::array::uniform3(-5.0f64..5.0),
            va in prop::array::uniform3(-1.0f64..1.0),
            rn in prop::array::uniform3(-1.0f64..1.0),
        ) {
            let r_a = Vec3::from(a);
            let axis = Vec3::from(d);
            prop_assume!(axis.norm() > 0.05);
            let r_b = r_a + axis;
            // Project the true angular velocity perpendicular to the axis.
            let zeta = axis.normalize();
            let w = Vec3::from(w);
            let omega = w - zeta * zeta.dot(&w);
            let v_a = Vec3::from(va);
            let v_b = point_velocity(&r_b, &r_a, &v_a, &omega);
            let rec = angular_velocity(&r_a, &r_b, &v_a, &v_b).unwrap();
            prop_assert!((rec - omega).norm() < 1e-10);
            // Computing from B or from A gives the same point velocity.
            let r_n = r_a + Vec3::from(rn);
            let from_a = point_velocity(&r_n, &r_a, &v_a, &rec);
            let from_b = point_velocity(&r_n, &r_b, &v_b, &rec);
            prop_assert!((from_a - from_b).norm() < 1e-12);
        }

        #[test]
        fn doppler_antisymmetric(v in prop::array::uniform3(-2.0f64..2.0), r in prop::array::uniform3(0.5f64..3.0)) {
            let (v, r) = (Vec3::from(v), Vec3::from(r));
            let c = rf();
            prop_assert_eq!(doppler_shift(&-v, &r, &c).unwrap(), -doppler_shift(&v, &r, &c).unwrap());
        }
    }

    #[test]
    fn doppler_examples() {
        let c = rf();
        let r = Vec3::new(2.5, 0.0, 0.0);
        assert_eq!(doppler_shift(&Vec3::zeros(), &r, &c).unwrap(), 0.0);
        let f = doppler_shift(&Vec3::new(-1.0, 0.0, 0.0), &r, &c).unwrap();
        assert!((f - 2.0 * 28.5e9 / C0).abs() < 1e-9);
        assert!((f - 190.13).abs() < 5e-3);
        assert_eq!(doppler_shift(&Vec3::new(0.0, 1.0, 0.0), &r, &c).unwrap(), 0.0);
    }

    fn still_frame() -> SkeletonFrame {
        crate::synthgen::animate(&crate::synthgen::GestureScript::still()).unwrap().frames[0].clone()
    }

    #[test]
    fn single_static_point_snapshot() {
        let frame = still_frame();
        let p = ScatteringPoint::new(frame.position(KeypointId::Chest), 0.02, 0).with_part(BodyPart::Torso);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v = [Vec3::zeros(); NUM_KEYPOINTS];
        let s = synthesize_snapshot(&[p], &frame, &v, 0, &rf(), &mut PhaseBook::new(), &mut rng).unwrap();
        assert_eq!(s.paths.len(), 1);
        assert_eq!(s.paths[0].doppler, 0.0);
        let d = (p.position - rf().tx()).norm();
        assert_eq!(s.paths[0].gain, amplitude_from_rcs(0.02, d, &rf()).unwrap());
        assert!((-PI..PI).contains(&s.paths[0].phase));

        let empty = synthesize_snapshot(&[], &frame, &v, 0, &rf(), &mut PhaseBook::new(), &mut rng).unwrap();
        assert!(empty.paths.is_empty());

        let twins = synthesize_snapshot(&[p, p], &frame, &v, 0, &rf(), &mut PhaseBook::new(), &mut rng).unwrap();
        assert_eq!(twins.paths[0].gain, twins.paths[1].gain);
        assert_ne!(twins.paths[0].phase, twins.paths[1].phase);

        let unlabeled = ScatteringPoint::new(p.position, 0.02, 0);
        assert!(matches!(
            synthesize_snapshot(&[unlabeled], &frame, &v, 0, &rf(), &mut PhaseBook::new(), &mut rng),
            Err(Error::MissingPartLabel)
        ));
    }

    #[test]
    fn phases_persist_per_path() {
        let mut book = PhaseBook::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = book.phase(Some(4), &mut rng);
        assert_eq!(book.phase(Some(4), &mut rng), a);
        assert_ne!(book.phase(None, &mut rng), book.phase(None, &mut rng));
    }

    #[test]
    fn amplitude_rcs_closed_loop() {
        // Measured-style amplitude -> RCS -> synthesized gain.
        let c = rf();
        let frame = still_frame();
        let m = crate::scatter_geom::MpcEstimate {
            snapshot: 0,
            time: 0.0,
            delay: 2.0 * 2.4 / C0,
            azimuth: 0.05,
            elevation: -0.1,
            amplitude: 3.7e-4,
        };
        let p = crate::scatter_geom::mpc_to_point(&m, &c).unwrap().with_part(BodyPart::Torso);
        let v = [Vec3::zeros(); NUM_KEYPOINTS];
        let s = synthesize_snapshot(&[p], &frame, &v, 0, &c, &mut PhaseBook::new(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let expect = m.amplitude * m.amplitude;
        assert!(((s.paths[0].gain - expect) / expect).abs() < 1e-10);
    }

    #[test]
    fn pdp_examples() {
        let c = rf();
        let s = ChannelSnapshot { snapshot: 0, time: 0.0, paths: vec![sample(16.7e-9, 2.0, 0.0, 0, None)] };
        let prof = pdp(&s, &c);
        assert_eq!(prof.power.iter().filter(|&&p| p > 0.0).count(), 1);
        let i = prof.power.iter().position(|&p| p > 0.0).unwrap();
        assert!(prof.delay(i) <= 16.7e-9 && 16.7e-9 < prof.delay(i) + prof.bin_width);
        assert_eq!(rmsds(&prof).unwrap(), 0.0);

        let s = ChannelSnapshot {
            snapshot: 0,
            time: 0.0,
            paths: vec![sample(16.6e-9, 1.0, 0.0, 0, None), sample(16.8e-9, 2.5, 0.0, 0, None)],
        };
        let prof = pdp(&s, &c);
        assert_eq!(prof.power, vec![3.5]);
        assert!(rmsds(&DelayProfile { bin_width: 0.5e-9, first_bin: 0, power: vec![0.0; 3] }).is_err());
    }

    #[test]
    fn rmsds_two_equal_paths() {
        let prof = DelayProfile { bin_width: 0.5e-9, first_bin: 30, power: vec![1.0, 0.0, 0.0, 1.0] };
        assert!((rmsds(&prof).unwrap() - 0.75e-9).abs() < 1e-21);
    }

    proptest! {
        #[test]
        fn rmsds_matches_two_pass(power in prop::collection::vec(0.0f64..1.0, 1..40), first in 0i64..100, scale in 0.01f64..100.0) {
            prop_assume!(power.iter().sum::<f64>() > 1e-6);
            let prof = DelayProfile { bin_width: 0.5e-9, first_bin: first, power: power.clone() };
            let r = rmsds(&prof).unwrap();
            let total: f64 = power.iter().sum();
            let mean: f64 = power.iter().enumerate().map(|(i, p)| p * prof.delay(i)).sum::<f64>() / total;
            let var: f64 = power.iter().enumerate().map(|(i, p)| p * (prof.delay(i) - mean).powi(2)).sum::<f64>() / total;
            prop_assert!((r - var.sqrt()).abs() <= 1e-12 * var.sqrt().max(1e-9));
            // Invariant to power scaling and delay shifts.
            let scaled = DelayProfile { power: power.iter().map(|p| p * scale).collect(), ..prof.clone() };
            prop_assert!((rmsds(&scaled).unwrap() - r).abs() <= 1e-12 * r.max(1e-9));
            let shifted = DelayProfile { first_bin: first + 17, ..prof };
            prop_assert!((rmsds(&shifted).unwrap() - r).abs() <= 1e-12 * r.max(1e-9));
        }

        #[test]
        fn binning_conserves_power(gains in prop::collection::vec((1.0e-9f64..5.0e-8, 0.0f64..1.0, -300.0f64..300.0), 0..50)) {
            let s = ChannelSnapshot {
                snapshot: 0,
                time: 0.0,
                paths: gains.iter().map(|&(d, g, f)| sample(d, g, f, 0, None)).collect(),
            };
            let total = s.total_power();
            let prof = pdp(&s, &rf());
            prop_assert!((prof.total_power() - total).abs() <= 1e-12 * total.max(1e-300));
            let spec = instantaneous_spectrum(&s, &DopplerBins::symmetric(400.0, 1.0));
            prop_assert!((spec.iter().sum::<f64>() - total).abs() <= 1e-12 * total.max(1e-300));
        }
    }

    #[test]
    fn spectrum_examples() {
        let bins = DopplerBins::symmetric(500.0, 1.0);
        let s = ChannelSnapshot {
            snapshot: 0,
            time: 0.0,
            paths: vec![sample(1e-8, 1.0, 0.0, 0, None), sample(2e-8, 0.5, 0.0, 0, None)],
        };
        let spec = instantaneous_spectrum(&s, &bins);
        assert_eq!(spec[bins.index(0.0)], 1.5);
        assert_eq!(bins.center(bins.index(0.0)), 0.0);
        let s = ChannelSnapshot { snapshot: 0, time: 0.0, paths: vec![sample(1e-8, 1.0, 190.13, 0, None)] };
        let spec = instantaneous_spectrum(&s, &bins);
        let peak = spec.iter().position(|&v| v == 1.0).unwrap();
        assert_eq!(bins.center(peak), 190.0);
    }

    #[test]
    fn cdf_examples() {
        let c = cdf(&[2.0; 5]).unwrap();
        assert_eq!(c.eval(1.999), 0.0);
        assert_eq!(c.eval(2.0), 1.0);
        let vals = [5.0, 1.0, 4.0, 2.0, 3.0, 9.0, 7.0];
        let c = cdf(&vals).unwrap();
        let pts = c.points();
        assert!(pts.windows(2).all(|w| w[0].0 <= w[1].0 && w[0].1 <= w[1].1));
        assert_eq!(pts.last().unwrap().1, 1.0);
        assert_eq!(c.eval(4.0), 4.0 / 7.0);
        assert!(cdf(&[]).is_err());
    }

    fn tone(n: usize, f0: f64, dt: f64) -> Vec<ChannelSnapshot> {
        (0..n)
            .map(|t| ChannelSnapshot {
                snapshot: t,
                time: t as f64 * dt,
                paths: vec![sample(1e-8, 1.0, f0, t, Some(0))],
            })
            .collect()
    }

    #[test]
    fn stft_single_tone_ridge() {
        let dt = 0.0026;
        for f0 in [0.0, 37.0, 122.5, -88.8] {
            let spec = stft_spectrogram(&tone(600, f0, dt), &StftConfig::default()).unwrap();
            let bw = spec.bin_width();
            assert!(spec.ridge().iter().all(|r| (r - f0).abs() <= bw), "f0 {f0}");
            assert!(spec.doppler.windows(2).all(|w| w[1] > w[0]));
            assert!((spec.doppler[0] + 1.0 / (2.0 * dt)).abs() < 1e-9);
        }
    }

    #[test]
    fn stft_parseval() {
        let dt = 0.0026;
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let snaps: Vec<ChannelSnapshot> = (0..300)
            .map(|t| ChannelSnapshot {
                snapshot: t,
                time: t as f64 * dt,
                paths: (0..3)
                    .map(|k| PathSample {
                        phase: uniform_phase(&mut rng),
                        ..sample(1e-8, 0.1 + k as f64, rng.random_range(-150.0..150.0), t, Some(k))
                    })
                    .collect(),
            })
            .collect();
        let cfg = StftConfig::default();
        let spec = stft_spectrogram(&snaps, &cfg).unwrap();
        let signal = slow_time_signal(&snaps, dt);
        let w = hann(cfg.window_len);
        for (f, row) in spec.power.iter().enumerate() {
            let start = f * cfg.hop;
            let direct: f64 = (0..cfg.window_len).map(|i| (signal[start + i] * w[i]).norm_sqr()).sum();
            assert!((row.iter().sum::<f64>() - direct).abs() <= 1e-9 * direct);
        }
    }

    #[test]
    fn stft_errors() {
        let mut snaps = tone(200, 10.0, 0.0026);
        assert!(matches!(
            stft_spectrogram(&snaps[..50], &StftConfig::default()),
            Err(Error::SequenceTooShort { .. })
        ));
        snaps[100].time += 0.001;
        assert!(matches!(stft_spectrogram(&snaps, &StftConfig::default()), Err(Error::NonUniformSampling(100))));
    }

    #[test]
    fn pdp_matrix_rows_keep_power() {
        let rf = RfConfig::default();
        let snaps = vec![
            ChannelSnapshot { snapshot: 0, time: 0.0, paths: vec![sample(10e-9, 0.5, 0.0, 0, None), sample(12.2e-9, 0.25, 0.0, 0, None)] },
            ChannelSnapshot { snapshot: 1, time: 0.0026, paths: vec![] },
            ChannelSnapshot { snapshot: 2, time: 0.0052, paths: vec![sample(11e-9, 2.0, 0.0, 2, Some(1))] },
        ];
        let mut buf = Vec::new();
        write_pdp_csv(&mut buf, &snaps, &rf).unwrap();
        let mut r = csv::Reader::from_reader(buf.as_slice());
        assert_eq!(r.headers().unwrap().len(), 2 + 5);
        let sums: Vec<f64> = r
            .records()
            .map(|rec| rec.unwrap().iter().skip(2).map(|v| v.parse::<f64>().unwrap()).sum())
            .collect();
        assert_eq!(sums, vec![0.75, 0.0, 2.0]);
        let mut buf = Vec::new();
        write_rmsds_csv(&mut buf, &snaps, &rf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().nth(2).unwrap(), "1,0.0026,");
    }
}
