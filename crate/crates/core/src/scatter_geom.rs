//! Monostatic single-bounce geometry: MPC parameters to scattering points with
//! radar cross section, and back.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skeleton::BodyPart;
use crate::{Vec3, C0};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RfConfig {
    /// Carrier frequency, Hz.
    pub carrier_frequency: f64,
    /// Sounding bandwidth, Hz. Sets the delay resolution to `1 / bandwidth`.
    pub bandwidth: f64,
    /// Collocated transmitter/receiver position, meters.
    pub tx_position: [f64; 3],
}

impl Default for RfConfig {
    fn default() -> Self {
        RfConfig {
            carrier_frequency: 28.5e9,
            bandwidth: 2e9,
            tx_position: [0.0; 3],
        }
    }
}

impl RfConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.carrier_frequency > 0.0) || !self.carrier_frequency.is_finite() {
            return Err(Error::Config(format!("carrier_frequency must be positive, got {}", self.carrier_frequency)));
        }
        if !(self.bandwidth > 0.0) || !self.bandwidth.is_finite() {
            return Err(Error::Config(format!("bandwidth must be positive, got {}", self.bandwidth)));
        }
        if self.tx_position.iter().any(|c| !c.is_finite()) {
            return Err(Error::Config("tx_position must be finite".into()));
        }
        Ok(())
    }

    pub fn tx(&self) -> Vec3 {
        Vec3::from(self.tx_position)
    }

    pub fn wavelength(&self) -> f64 {
        C0 / self.carrier_frequency
    }

    /// Delay resolution in seconds.
    pub fn delay_resolution(&self) -> f64 {
        1.0 / self.bandwidth
    }
}

/// One multipath component as reported by the upstream estimator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MpcEstimate {
    pub snapshot: usize,
    /// Snapshot time, s.
    pub time: f64,
    /// Round-trip delay, s.
    pub delay: f64,
    /// Azimuth, rad.
    pub azimuth: f64,
    /// Elevation from the horizontal plane, rad.
    pub elevation: f64,
    /// Linear amplitude magnitude.
    pub amplitude: f64,
}

impl MpcEstimate {
    pub fn validate(&self) -> Result<()> {
        if !(self.delay > 0.0) {
            return Err(Error::NonCausalDelay(self.delay));
        }
        if !self.azimuth.is_finite() || !self.elevation.is_finite() || !self.amplitude.is_finite() || !self.time.is_finite() {
            return Err(Error::NonFinite("mpc estimate"));
        }
        if self.elevation.abs() > PI / 2.0 + 1e-12 {
            return Err(Error::Parse(format!("elevation {} outside [-pi/2, pi/2]", self.elevation)));
        }
        if self.amplitude < 0.0 {
            return Err(Error::Parse(format!("negative amplitude {}", self.amplitude)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScatteringPoint {
    pub position: Vec3,
    /// Radar cross section, m^2.
    pub rcs: f64,
    pub snapshot: usize,
    pub part: Option<BodyPart>,
    pub path_id: Option<u64>,
}

impl ScatteringPoint {
    pub fn new(position: Vec3, rcs: f64, snapshot: usize) -> Self {
        ScatteringPoint {
            position,
            rcs,
            snapshot,
            part: None,
            path_id: None,
        }
    }

    pub fn with_part(mut self, part: BodyPart) -> Self {
        self.part = Some(part);
        self
    }

    pub fn with_path_id(mut self, id: u64) -> Self {
        self.path_id = Some(id);
        self
    }
}

fn check_distance(d: f64) -> Result<()> {
    if d > 0.0 && d.is_finite() {
        Ok(())
    } else {
        Err(Error::NonPositiveDistance(d))
    }
}

/// Radar cross section implied by a measured amplitude at range `d`.
pub fn rcs_from_amplitude(amplitude: f64, d: f64, cfg: &RfConfig) -> Result<f64> {
    check_distance(d)?;
    let s = amplitude * d * d * cfg.carrier_frequency / C0;
    Ok((4.0 * PI).powi(3) * s * s)
}

/// Path power gain `|alpha|^2` of a scatterer with cross section `rcs` at range `d`.
pub fn amplitude_from_rcs(rcs: f64, d: f64, cfg: &RfConfig) -> Result<f64> {
    check_distance(d)?;
    if rcs < 0.0 {
        return Err(Error::Parse(format!("negative rcs {rcs}")));
    }
    let fc = cfg.carrier_frequency;
    Ok(C0 * C0 * rcs / ((4.0 * PI).powi(3) * fc * fc * d.powi(4)))
}

pub fn mpc_to_point(m: &MpcEstimate, cfg: &RfConfig) -> Result<ScatteringPoint> {
    if !(m.delay > 0.0) {
        return Err(Error::NonCausalDelay(m.delay));
    }
    let d = C0 * m.delay / 2.0;
    let (se, ce) = m.elevation.sin_cos();
    let (sa, ca) = m.azimuth.sin_cos();
    let rel = Vec3::new(d * ce * ca, d * ce * sa, d * se);
    let rcs = rcs_from_amplitude(m.amplitude, d, cfg)?;
    Ok(ScatteringPoint::new(cfg.tx() + rel, rcs, m.snapshot))
}

pub fn point_to_mpc(p: &ScatteringPoint, time: f64, cfg: &RfConfig) -> Result<MpcEstimate> {
    let rel = p.position - cfg.tx();
    let d = rel.norm();
    if d == 0.0 {
        return Err(Error::ZeroRange);
    }
    let gain = amplitude_from_rcs(p.rcs, d, cfg)?;
    Ok(MpcEstimate {
        snapshot: p.snapshot,
        time,
        delay: 2.0 * d / C0,
        azimuth: rel.y.atan2(rel.x),
        elevation: (rel.z / d).clamp(-1.0, 1.0).asin(),
        amplitude: gain.sqrt(),
    })
}

pub const MPC_HEADER: [&str; 6] = ["snapshot", "time_s", "delay_ns", "azimuth_deg", "elevation_deg", "amplitude_linear"];

pub fn write_mpc_csv<W: std::io::Write>(writer: W, records: &[MpcEstimate]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(MPC_HEADER)?;
    for m in records {
        w.write_record([
            m.snapshot.to_string(),
            m.time.to_string(),
            (m.delay * 1e9).to_string(),
            m.azimuth.to_degrees().to_string(),
            m.elevation.to_degrees().to_string(),
            m.amplitude.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_mpc_csv<R: std::io::Read>(reader: R) -> Result<Vec<MpcEstimate>> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(reader);
    let header = r.headers()?.clone();
    if header.iter().ne(MPC_HEADER) {
        return Err(Error::Parse(format!("unexpected MPC header {:?}", header.iter().collect::<Vec<_>>())));
    }
    let mut out = Vec::new();
    for (line, record) in r.records().enumerate() {
        let record = record?;
        let num = |i: usize| -> Result<f64> {
            record[i]
                .parse::<f64>()
                .map_err(|e| Error::Parse(format!("row {}: {}: {e}", line + 1, MPC_HEADER[i])))
        };
        let snapshot = record[0]
            .parse::<usize>()
            .map_err(|e| Error::Parse(format!("row {}: snapshot: {e}", line + 1)))?;
        let m = MpcEstimate {
            snapshot,
            time: num(1)?,
            delay: num(2)? * 1e-9,
            azimuth: num(3)?.to_radians(),
            elevation: num(4)?.to_radians(),
            amplitude: num(5)?,
        };
        m.validate()?;
        out.push(m);
    }
    Ok(out)
}
