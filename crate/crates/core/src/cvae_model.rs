//! Per-body-part conditional VAE over scattering-point features.
//!
//! A feature is the point's position in the part's local frame plus its
//! log-RCS. The condition concatenates a learned 8-dim gesture feature, the
//! feature of the point generated just before in the same snapshot (points
//! are visited in delay order) and the feature of the same path at the
//! previous snapshot.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nnkit::{kink_tolerant_error, Activation, AdamConfig, AdamState, Checkpoint, LayerSpec, Network, NetworkSpec, Tensor};
use crate::scatter_geom::{RfConfig, ScatteringPoint};
use crate::skeleton::{
    align_to_reference, local_frame, sequence_local_frames, AlignedFrame, BodyPart, GestureSequence, LocalFrame, SkeletonFrame,
    NUM_KEYPOINTS, NUM_PARTS,
};
use crate::stats::standard_normal;
use crate::{Vec3, C0};

pub const FEATURE_DIM: usize = 4;
pub const GESTURE_DIM: usize = 8;
pub const CONDITION_DIM: usize = GESTURE_DIM + 2 * FEATURE_DIM;
pub const LATENT_DIM: usize = 10;
pub const CONV_FILTERS: usize = 16;
pub const CONV_KERNEL: (usize, usize) = (5, 1);
pub const ENCODER_HIDDEN: [usize; 3] = [256, 128, 64];
pub const DECODER_HIDDEN: [usize; 3] = [64, 128, 256];
const FRAME_DIM: usize = NUM_KEYPOINTS * 3;
const ENC_IN: usize = FEATURE_DIM + CONDITION_DIM;
const DEC_IN: usize = LATENT_DIM + CONDITION_DIM;
/// Bound on the encoder's log-variance output.
const LOGVAR_CLAMP: f64 = 20.0;

pub const CVAE_CHECKPOINT_VERSION: u32 = 1;

/// `[zeta, beta, gamma, rcs]`; raw (meters, log10 m^2) or normalized
/// depending on context.
pub type Feature = [f64; FEATURE_DIM];

pub fn gesture_spec() -> NetworkSpec {
    NetworkSpec {
        input_shape: vec![NUM_KEYPOINTS, 3],
        layers: vec![
            LayerSpec::Conv { filters: CONV_FILTERS, height: CONV_KERNEL.0, width: CONV_KERNEL.1 },
            LayerSpec::Activation { activation: Activation::Relu },
            LayerSpec::Dense { units: GESTURE_DIM },
        ],
    }
}

pub fn encoder_spec() -> NetworkSpec {
    NetworkSpec::mlp(ENC_IN, &ENCODER_HIDDEN, 2 * LATENT_DIM, Activation::Identity)
}

pub fn decoder_spec() -> NetworkSpec {
    NetworkSpec::mlp(DEC_IN, &DECODER_HIDDEN, FEATURE_DIM, Activation::Identity)
}

/// Per-dimension standardization of `[zeta, beta, gamma, log10 rcs]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureNorm {
    pub mean: Feature,
    pub std: Feature,
}

impl Default for FeatureNorm {
    fn default() -> Self {
        FeatureNorm { mean: [0.0; FEATURE_DIM], std: [1.0; FEATURE_DIM] }
    }
}

impl FeatureNorm {
    /// Constant dimensions keep a unit scale so the map stays invertible.
    pub fn fit(raw: &[Feature]) -> Result<Self> {
        if raw.is_empty() {
            return Err(Error::EmptyInput);
        }
        let n = raw.len() as f64;
        let mut mean = [0.0; FEATURE_DIM];
        let mut std = [1.0; FEATURE_DIM];
        for d in 0..FEATURE_DIM {
            mean[d] = raw.iter().map(|f| f[d]).sum::<f64>() / n;
            let sd = (raw.iter().map(|f| (f[d] - mean[d]).powi(2)).sum::<f64>() / n).sqrt();
            if sd > 1e-9 {
                std[d] = sd;
            }
        }
        Ok(FeatureNorm { mean, std })
    }

    pub fn normalize(&self, raw: &Feature) -> Feature {
        std::array::from_fn(|d| (raw[d] - self.mean[d]) / self.std[d])
    }

    pub fn denormalize(&self, f: &Feature) -> Feature {
        std::array::from_fn(|d| f[d] * self.std[d] + self.mean[d])
    }

    /// Normalized context feature. An absent context is the raw zero
    /// feature (origin, 1 m^2), which lands outside the data range instead
    /// of on the mean.
    pub fn context(&self, raw: Option<&Feature>) -> Feature {
        self.normalize(raw.unwrap_or(&[0.0; FEATURE_DIM]))
    }
}

/// Raw feature of a global point in a part frame.
pub fn raw_feature(point: &ScatteringPoint, frame: &LocalFrame) -> Result<Feature> {
    if !(point.rcs > 0.0) {
        return Err(Error::Parse(format!("non-positive rcs {}", point.rcs)));
    }
    let l = frame.to_local(&point.position);
    Ok([l.x, l.y, l.z, point.rcs.log10()])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionVector {
    pub gesture: [f64; GESTURE_DIM],
    /// Point generated just before in the current snapshot.
    pub prior: Feature,
    /// Same path at the previous snapshot.
    pub previous: Feature,
}

impl ConditionVector {
    pub fn to_array(&self) -> [f64; CONDITION_DIM] {
        let mut out = [0.0; CONDITION_DIM];
        out[..GESTURE_DIM].copy_from_slice(&self.gesture);
        out[GESTURE_DIM..GESTURE_DIM + FEATURE_DIM].copy_from_slice(&self.prior);
        out[GESTURE_DIM + FEATURE_DIM..].copy_from_slice(&self.previous);
        out
    }
}

pub fn reparameterize(mu: &[f64], sigma: &[f64], noise: &[f64]) -> Vec<f64> {
    mu.iter().zip(sigma).zip(noise).map(|((m, s), e)| m + s * e).collect()
}

/// `KL(N(mu, exp(logvar)) || N(0, I))`, summed over dimensions.
pub fn kl_divergence(mu: &[f64], logvar: &[f64]) -> f64 {
    mu.iter().zip(logvar).map(|(m, lv)| 0.5 * (m * m + lv.exp() - 1.0 - lv)).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvaeTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Weight of the KL term.
    pub beta_kl: f64,
    /// Training samples per part are subsampled to at most this many.
    pub max_samples_per_part: usize,
    pub seed: u64,
}

impl Default for CvaeTrainConfig {
    fn default() -> Self {
        CvaeTrainConfig {
            epochs: 250,
            batch_size: 64,
            adam: AdamConfig::default(),
            beta_kl: 0.005,
            max_samples_per_part: 2000,
            seed: 0,
        }
    }
}

impl CvaeTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.max_samples_per_part == 0 {
            return Err(Error::Config("cvae training needs positive epochs, batch size and sample cap".into()));
        }
        if !(self.adam.learning_rate > 0.0) || !(self.beta_kl >= 0.0) {
            return Err(Error::Config("cvae learning rate must be positive and beta_kl non-negative".into()));
        }
        Ok(())
    }
}

/// One C-VAE with its own gesture encoder.
#[derive(Debug, Clone)]
pub struct CvaeNet {
    pub part: BodyPart,
    gesture: Network,
    encoder: Network,
    decoder: Network,
    norm: FeatureNorm,
    input_mean: Vec<f64>,
    input_std: Vec<f64>,
    beta_kl: f64,
}

/// Normalized training rows, row-major.
#[derive(Debug, Clone, Default)]
struct Batch {
    frames: Vec<f64>,
    x: Vec<f64>,
    prior: Vec<f64>,
    previous: Vec<f64>,
    len: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    pub total: f64,
    pub reconstruction: f64,
    pub kl: f64,
}

impl CvaeNet {
    pub fn new<R: Rng + ?Sized>(part: BodyPart, beta_kl: f64, rng: &mut R) -> Result<Self> {
        Ok(CvaeNet {
            part,
            gesture: Network::new(gesture_spec(), rng)?,
            encoder: Network::new(encoder_spec(), rng)?,
            decoder: Network::new(decoder_spec(), rng)?,
            norm: FeatureNorm::default(),
            input_mean: vec![0.0; FRAME_DIM],
            input_std: vec![1.0; FRAME_DIM],
            beta_kl,
        })
    }

    pub fn zeros(part: BodyPart) -> Result<Self> {
        Ok(CvaeNet {
            part,
            gesture: Network::zeros(gesture_spec())?,
            encoder: Network::zeros(encoder_spec())?,
            decoder: Network::zeros(decoder_spec())?,
            norm: FeatureNorm::default(),
            input_mean: vec![0.0; FRAME_DIM],
            input_std: vec![1.0; FRAME_DIM],
            beta_kl: 1.0,
        })
    }

    pub fn norm(&self) -> &FeatureNorm {
        &self.norm
    }

    pub fn beta_kl(&self) -> f64 {
        self.beta_kl
    }

    pub fn gesture_net_mut(&mut self) -> &mut Network {
        &mut self.gesture
    }

    pub fn encoder_net_mut(&mut self) -> &mut Network {
        &mut self.encoder
    }

    pub fn decoder_net_mut(&mut self) -> &mut Network {
        &mut self.decoder
    }

    fn frame_input(&self, frame: &AlignedFrame, out: &mut Vec<f64>) -> Result<()> {
        let flat = frame.frame().to_flat();
        if flat.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidFrame("non-finite keypoint coordinate".into()));
        }
        out.extend(flat.iter().zip(&self.input_mean).zip(&self.input_std).map(|((x, m), s)| (x - m) / s));
        Ok(())
    }

    pub fn encode_gesture(&self, frame: &AlignedFrame) -> Result<[f64; GESTURE_DIM]> {
        let mut x = Vec::with_capacity(FRAME_DIM);
        self.frame_input(frame, &mut x)?;
        let out = self.gesture.predict(&Tensor::new(vec![1, NUM_KEYPOINTS, 3], x)?)?;
        let mut g = [0.0; GESTURE_DIM];
        g.copy_from_slice(out.data());
        Ok(g)
    }

    /// Posterior mean and standard deviation for a normalized feature.
    pub fn encode(&self, x: &Feature, c: &ConditionVector) -> Result<([f64; LATENT_DIM], [f64; LATENT_DIM])> {
        let mut input = x.to_vec();
        input.extend_from_slice(&c.to_array());
        let out = self.encoder.predict(&Tensor::new(vec![1, ENC_IN], input)?)?;
        let mut mu = [0.0; LATENT_DIM];
        let mut sigma = [0.0; LATENT_DIM];
        for i in 0..LATENT_DIM {
            mu[i] = out.data()[i];
            sigma[i] = (0.5 * out.data()[LATENT_DIM + i].clamp(-LOGVAR_CLAMP, LOGVAR_CLAMP)).exp();
        }
        Ok((mu, sigma))
    }

    /// Normalized feature decoded from a latent sample.
    pub fn decode(&self, z: &[f64; LATENT_DIM], c: &ConditionVector) -> Result<Feature> {
        let mut input = z.to_vec();
        input.extend_from_slice(&c.to_array());
        let out = self.decoder.predict(&Tensor::new(vec![1, DEC_IN], input)?)?;
        let mut f = [0.0; FEATURE_DIM];
        f.copy_from_slice(out.data());
        Ok(f)
    }

    /// Loss of one normalized sample with a fresh noise draw.
    pub fn cvae_loss<R: Rng + ?Sized>(&self, x: &Feature, c: &ConditionVector, rng: &mut R) -> Result<LossParts> {
        let noise: Vec<f64> = (0..LATENT_DIM).map(|_| standard_normal(rng)).collect();
        self.loss_with_noise(x, c, &noise)
    }

    pub fn loss_with_noise(&self, x: &Feature, c: &ConditionVector, noise: &[f64]) -> Result<LossParts> {
        let mut input = x.to_vec();
        input.extend_from_slice(&c.to_array());
        let h = self.encoder.predict(&Tensor::new(vec![1, ENC_IN], input)?)?;
        let (mu, lv) = h.data().split_at(LATENT_DIM);
        let lv: Vec<f64> = lv.iter().map(|v| v.clamp(-LOGVAR_CLAMP, LOGVAR_CLAMP)).collect();
        let sigma: Vec<f64> = lv.iter().map(|v| (0.5 * v).exp()).collect();
        let mut z = [0.0; LATENT_DIM];
        z.copy_from_slice(&reparameterize(mu, &sigma, noise));
        let xh = self.decode(&z, c)?;
        let reconstruction = xh.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / FEATURE_DIM as f64;
        let kl = kl_divergence(mu, &lv);
        Ok(LossParts { total: reconstruction + self.beta_kl * kl, reconstruction, kl })
    }

    /// Forward and, if `update`, backward through all three networks.
    /// Gradients are left in each network.
    fn step_batch(&mut self, b: &Batch, noise: &[f64], update: bool) -> Result<LossParts> {
        let n = b.len;
        let g = if update {
            self.gesture.forward(&Tensor::new(vec![n, NUM_KEYPOINTS, 3], b.frames.clone())?)?
        } else {
            self.gesture.predict(&Tensor::new(vec![n, NUM_KEYPOINTS, 3], b.frames.clone())?)?
        };
        let mut enc_in = Vec::with_capacity(n * ENC_IN);
        for i in 0..n {
            enc_in.extend_from_slice(&b.x[i * FEATURE_DIM..(i + 1) * FEATURE_DIM]);
            enc_in.extend_from_slice(g.row(i));
            enc_in.extend_from_slice(&b.prior[i * FEATURE_DIM..(i + 1) * FEATURE_DIM]);
            enc_in.extend_from_slice(&b.previous[i * FEATURE_DIM..(i + 1) * FEATURE_DIM]);
        }
        let enc_in = Tensor::new(vec![n, ENC_IN], enc_in)?;
        let h = if update { self.encoder.forward(&enc_in)? } else { self.encoder.predict(&enc_in)? };

        let mut dec_in = Vec::with_capacity(n * DEC_IN);
        let mut kl = 0.0;
        let mut sigmas = vec![0.0; n * LATENT_DIM];
        for i in 0..n {
            let row = h.row(i);
            for k in 0..LATENT_DIM {
                let lv = row[LATENT_DIM + k].clamp(-LOGVAR_CLAMP, LOGVAR_CLAMP);
                let s = (0.5 * lv).exp();
                sigmas[i * LATENT_DIM + k] = s;
                dec_in.push(row[k] + s * noise[i * LATENT_DIM + k]);
                kl += 0.5 * (row[k] * row[k] + s * s - 1.0 - lv);
            }
            dec_in.extend_from_slice(&enc_in.row(i)[FEATURE_DIM..]);
        }
        let dec_in = Tensor::new(vec![n, DEC_IN], dec_in)?;
        let xh = if update { self.decoder.forward(&dec_in)? } else { self.decoder.predict(&dec_in)? };

        let inv = 1.0 / n as f64;
        let scale = inv / FEATURE_DIM as f64;
        let mut reconstruction = 0.0;
        let mut dxh = Vec::with_capacity(n * FEATURE_DIM);
        for (a, t) in xh.data().iter().zip(&b.x) {
            let e = a - t;
            reconstruction += e * e;
            dxh.push(2.0 * e * scale);
        }
        let loss = LossParts {
            total: reconstruction * scale + self.beta_kl * kl * inv,
            reconstruction: reconstruction * scale,
            kl: kl * inv,
        };
        if !loss.total.is_finite() {
            return Err(Error::NonFinite("cvae loss"));
        }
        if !update {
            return Ok(loss);
        }

        self.gesture.zero_grad();
        self.encoder.zero_grad();
        self.decoder.zero_grad();
        let d_dec = self.decoder.backward(&Tensor::new(vec![n, FEATURE_DIM], dxh)?)?;
        let mut dh = Vec::with_capacity(n * 2 * LATENT_DIM);
        let mut dg = vec![0.0; n * GESTURE_DIM];
        let beta = self.beta_kl * inv;
        for i in 0..n {
            let row = h.row(i);
            let dz = &d_dec.row(i)[..LATENT_DIM];
            for k in 0..LATENT_DIM {
                dh.push(dz[k] + beta * row[k]);
            }
            for k in 0..LATENT_DIM {
                let lv = row[LATENT_DIM + k];
                let s = sigmas[i * LATENT_DIM + k];
                let d = if lv.abs() < LOGVAR_CLAMP {
                    dz[k] * noise[i * LATENT_DIM + k] * 0.5 * s + beta * 0.5 * (s * s - 1.0)
                } else {
                    0.0
                };
                dh.push(d);
            }
            dg[i * GESTURE_DIM..(i + 1) * GESTURE_DIM].copy_from_slice(&d_dec.row(i)[LATENT_DIM..LATENT_DIM + GESTURE_DIM]);
        }
        let d_enc = self.encoder.backward(&Tensor::new(vec![n, 2 * LATENT_DIM], dh)?)?;
        for i in 0..n {
            let src = &d_enc.row(i)[FEATURE_DIM..FEATURE_DIM + GESTURE_DIM];
            for (d, s) in dg[i * GESTURE_DIM..(i + 1) * GESTURE_DIM].iter_mut().zip(src) {
                *d += s;
            }
        }
        self.gesture.backward_params(&Tensor::new(vec![n, GESTURE_DIM], dg)?)?;
        Ok(loss)
    }

    /// Largest relative error between analytic gradients of the full loss
    /// and central differences, over up to `per_net` parameters of each of
    /// the three networks.
    pub fn check_gradients<R: Rng + ?Sized>(&mut self, batch: usize, per_net: usize, step: f64, rng: &mut R) -> Result<f64> {
        let mut b = Batch { len: batch, ..Default::default() };
        for _ in 0..batch {
            b.frames.extend((0..FRAME_DIM).map(|_| rng.random_range(-1.5..1.5)));
            b.x.extend((0..FEATURE_DIM).map(|_| rng.random_range(-1.5..1.5)));
            b.prior.extend((0..FEATURE_DIM).map(|_| rng.random_range(-1.5..1.5)));
            b.previous.extend((0..FEATURE_DIM).map(|_| rng.random_range(-1.5..1.5)));
        }
        let noise: Vec<f64> = (0..batch * LATENT_DIM).map(|_| standard_normal(rng)).collect();
        self.step_batch(&b, &noise, true)?;
        let analytic = [self.gesture.grads().to_vec(), self.encoder.grads().to_vec(), self.decoder.grads().to_vec()];
        let mut worst: f64 = 0.0;
        for (which, grads) in analytic.iter().enumerate() {
            let mut idx: Vec<usize> = (0..grads.len()).collect();
            idx.shuffle(rng);
            for &i in idx.iter().take(per_net) {
                let orig = self.net_mut(which).params()[i];
                let e = kink_tolerant_error(grads[i], step, |h| {
                    self.net_mut(which).params_mut()[i] = orig + h;
                    let up = self.step_batch(&b, &noise, false)?.total;
                    self.net_mut(which).params_mut()[i] = orig - h;
                    let down = self.step_batch(&b, &noise, false)?.total;
                    self.net_mut(which).params_mut()[i] = orig;
                    Ok((up - down) / (2.0 * h))
                })?;
                worst = worst.max(e);
            }
        }
        Ok(worst)
    }

    fn net_mut(&mut self, which: usize) -> &mut Network {
        match which {
            0 => &mut self.gesture,
            1 => &mut self.encoder,
            _ => &mut self.decoder,
        }
    }

    pub fn to_checkpoint(&self, seed: u64, epochs: usize) -> CvaeCheckpoint {
        let mut stats = BTreeMap::new();
        stats.insert("input_mean".to_string(), self.input_mean.clone());
        stats.insert("input_std".to_string(), self.input_std.clone());
        CvaeCheckpoint {
            version: CVAE_CHECKPOINT_VERSION,
            part: self.part,
            beta_kl: self.beta_kl,
            feature_norm: self.norm,
            gesture: Checkpoint::from_network(&self.gesture, stats, seed, epochs),
            encoder: Checkpoint::from_network(&self.encoder, BTreeMap::new(), seed, epochs),
            decoder: Checkpoint::from_network(&self.decoder, BTreeMap::new(), seed, epochs),
        }
    }

    pub fn from_checkpoint(c: &CvaeCheckpoint) -> Result<Self> {
        if c.version != CVAE_CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported cvae checkpoint version {}", c.version)));
        }
        if c.gesture.spec != gesture_spec() || c.encoder.spec != encoder_spec() || c.decoder.spec != decoder_spec() {
            return Err(Error::Checkpoint(format!("architecture mismatch in {} checkpoint", c.part)));
        }
        let stat = |k: &str| {
            c.gesture
                .norm_stats
                .get(k)
                .filter(|v| v.len() == FRAME_DIM)
                .cloned()
                .ok_or_else(|| Error::Checkpoint(format!("missing or malformed {k}")))
        };
        Ok(CvaeNet {
            part: c.part,
            gesture: c.gesture.to_network()?,
            encoder: c.encoder.to_network()?,
            decoder: c.decoder.to_network()?,
            norm: c.feature_norm,
            input_mean: stat("input_mean")?,
            input_std: stat("input_std")?,
            beta_kl: c.beta_kl,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CvaeCheckpoint {
    pub version: u32,
    pub part: BodyPart,
    pub beta_kl: f64,
    pub feature_norm: FeatureNorm,
    pub gesture: Checkpoint,
    pub encoder: Checkpoint,
    pub decoder: Checkpoint,
}

impl CvaeCheckpoint {
    pub fn to_json(&self) -> Result<String> {
        // Validates finiteness of each network.
        for c in [&self.gesture, &self.encoder, &self.decoder] {
            c.to_json()?;
        }
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: CvaeCheckpoint = serde_json::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))?;
        CvaeNet::from_checkpoint(&c)?;
        Ok(c)
    }
}

/// One training example in raw units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CvaeSample {
    /// Index into `PartDataset::frames`.
    pub frame: usize,
    pub x: Feature,
    pub prior: Option<Feature>,
    pub previous: Option<Feature>,
}

#[derive(Debug, Clone)]
pub struct PartDataset {
    pub part: BodyPart,
    pub frames: Vec<AlignedFrame>,
    pub samples: Vec<CvaeSample>,
}

impl PartDataset {
    pub fn new(part: BodyPart) -> Self {
        PartDataset { part, frames: Vec::new(), samples: Vec::new() }
    }

    /// Add the labeled, tracked points of one sequence. Points are visited in
    /// generation order: continuing paths by their previous delay, then
    /// births by delay. A continuing point's prior is the point visited just
    /// before it; a birth's prior is drawn uniformly from nothing or any
    /// point already visited.
    pub fn add_sequence<R: Rng + ?Sized>(
        &mut self,
        seq: &GestureSequence,
        points_by_snapshot: &[Vec<ScatteringPoint>],
        reference: Vec3,
        rf: &RfConfig,
        rng: &mut R,
    ) -> Result<()> {
        if points_by_snapshot.len() > seq.len() {
            return Err(Error::MissingFrame(seq.len()));
        }
        let tx = rf.tx();
        let frames = sequence_local_frames(&seq.frames, self.part, &tx, None)?;
        let base = self.frames.len();
        self.frames.extend(seq.frames.iter().map(|f| align_to_reference(f, reference)));
        let mut last: HashMap<u64, (f64, Feature)> = HashMap::new();
        for (t, pts) in points_by_snapshot.iter().enumerate() {
            let mut continuing: Vec<(f64, Feature, f64, Feature, u64)> = Vec::new();
            let mut born: Vec<(f64, Feature, Option<u64>)> = Vec::new();
            for p in pts.iter().filter(|p| p.part == Some(self.part)) {
                let range = (p.position - tx).norm();
                let x = raw_feature(p, &frames[t])?;
                match p.path_id.and_then(|id| last.get(&id).map(|l| (id, *l))) {
                    Some((id, (prev_range, prev))) => continuing.push((range, x, prev_range, prev, id)),
                    None => born.push((range, x, p.path_id)),
                }
            }
            continuing.sort_by(|a, b| a.2.total_cmp(&b.2));
            born.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut next: HashMap<u64, (f64, Feature)> = HashMap::new();
            let mut visited: Vec<Feature> = Vec::new();
            for &(range, x, _, prev, id) in &continuing {
                self.samples.push(CvaeSample { frame: base + t, x, prior: visited.last().copied(), previous: Some(prev) });
                visited.push(x);
                next.insert(id, (range, x));
            }
            for &(range, x, id) in &born {
                let pick = rng.random_range(0..=visited.len());
                let prior = pick.checked_sub(1).map(|i| visited[i]);
                self.samples.push(CvaeSample { frame: base + t, x, prior, previous: None });
                visited.push(x);
                if let Some(id) = id {
                    next.insert(id, (range, x));
                }
            }
            last = next;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvaeTrainReport {
    pub samples_used: usize,
    pub epoch_loss: Vec<f64>,
}

fn frame_stats(frames: &[AlignedFrame]) -> (Vec<f64>, Vec<f64>) {
    let n = frames.len() as f64;
    let mut mean = vec![0.0; FRAME_DIM];
    let mut var = vec![0.0; FRAME_DIM];
    for f in frames {
        for (m, x) in mean.iter_mut().zip(f.frame().to_flat()) {
            *m += x / n;
        }
    }
    for f in frames {
        for ((v, x), m) in var.iter_mut().zip(f.frame().to_flat()).zip(&mean) {
            *v += (x - m) * (x - m) / n;
        }
    }
    let std = var.iter().map(|v| if v.sqrt() > 1e-9 { v.sqrt() } else { 1.0 }).collect();
    (mean, std)
}

pub fn train_part(data: &PartDataset, cfg: &CvaeTrainConfig) -> Result<(CvaeNet, CvaeTrainReport)> {
    cfg.validate()?;
    if data.samples.is_empty() {
        return Err(Error::InsufficientData(data.part));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (0x5eed_0000 + data.part.code() as u64));
    let samples: Vec<CvaeSample> = if data.samples.len() > cfg.max_samples_per_part {
        let mut idx = rand::seq::index::sample(&mut rng, data.samples.len(), cfg.max_samples_per_part).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| data.samples[i]).collect()
    } else {
        data.samples.clone()
    };

    let mut net = CvaeNet::new(data.part, cfg.beta_kl, &mut rng)?;
    let raw: Vec<Feature> = samples.iter().map(|s| s.x).collect();
    net.norm = FeatureNorm::fit(&raw)?;
    let used: Vec<AlignedFrame> = samples.iter().map(|s| data.frames[s.frame].clone()).collect();
    (net.input_mean, net.input_std) = frame_stats(&used);

    // Pre-normalize everything once.
    let mut frames = Vec::with_capacity(samples.len() * FRAME_DIM);
    let mut x = Vec::with_capacity(samples.len() * FEATURE_DIM);
    let mut prior = Vec::with_capacity(samples.len() * FEATURE_DIM);
    let mut previous = Vec::with_capacity(samples.len() * FEATURE_DIM);
    for (s, f) in samples.iter().zip(&used) {
        net.frame_input(f, &mut frames)?;
        x.extend(net.norm.normalize(&s.x));
        prior.extend(net.norm.context(s.prior.as_ref()));
        previous.extend(net.norm.context(s.previous.as_ref()));
    }

    let mut adam = [
        AdamState::new(cfg.adam, net.gesture.num_params()),
        AdamState::new(cfg.adam, net.encoder.num_params()),
        AdamState::new(cfg.adam, net.decoder.num_params()),
    ];
    let n = samples.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut epoch_loss = Vec::with_capacity(cfg.epochs);
    let mut batch = Batch::default();
    let mut noise = Vec::new();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut count = 0;
        for chunk in order.chunks(cfg.batch_size) {
            batch.frames.clear();
            batch.x.clear();
            batch.prior.clear();
            batch.previous.clear();
            batch.len = chunk.len();
            for &i in chunk {
                batch.frames.extend_from_slice(&frames[i * FRAME_DIM..(i + 1) * FRAME_DIM]);
                batch.x.extend_from_slice(&x[i * FEATURE_DIM..(i + 1) * FEATURE_DIM]);
                batch.prior.extend_from_slice(&prior[i * FEATURE_DIM..(i + 1) * FEATURE_DIM]);
                batch.previous.extend_from_slice(&previous[i * FEATURE_DIM..(i + 1) * FEATURE_DIM]);
            }
            noise.clear();
            noise.extend((0..chunk.len() * LATENT_DIM).map(|_| standard_normal(&mut rng)));
            let loss = net.step_batch(&batch, &noise, true)?;
            for (state, n) in adam.iter_mut().zip([&mut net.gesture, &mut net.encoder, &mut net.decoder]) {
                let (p, g) = n.params_and_grads();
                state.step(p, g)?;
            }
            sum += loss.total;
            count += 1;
        }
        epoch_loss.push(sum / count as f64);
    }
    Ok((net, CvaeTrainReport { samples_used: n, epoch_loss }))
}

/// Trained models indexed by part; parts without data stay empty.
#[derive(Debug, Clone, Default)]
pub struct CvaeModels {
    nets: Vec<Option<CvaeNet>>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BundleManifest {
    pub pipeline_version: String,
    pub latent_dim: usize,
    pub gesture_encoder: String,
    pub parts: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub part: BodyPart,
    pub checkpoint: String,
    pub feature_norm: FeatureNorm,
}

impl CvaeModels {
    pub fn new() -> Self {
        CvaeModels { nets: vec![None; NUM_PARTS] }
    }

    pub fn insert(&mut self, net: CvaeNet) {
        if self.nets.is_empty() {
            self.nets = vec![None; NUM_PARTS];
        }
        let j = net.part.code();
        self.nets[j] = Some(net);
    }

    pub fn get(&self, part: BodyPart) -> Option<&CvaeNet> {
        self.nets.get(part.code()).and_then(|n| n.as_ref())
    }

    /// Serialized files of a bundle directory: the manifest and one
    /// checkpoint per trained part, as `(file name, contents)`.
    pub fn to_files(&self, seed: u64, epochs: usize) -> Result<Vec<(String, String)>> {
        let mut files = Vec::new();
        let mut entries = Vec::new();
        for net in self.nets.iter().flatten() {
            let name = format!("cvae_{}.json", net.part.name());
            files.push((name.clone(), net.to_checkpoint(seed, epochs).to_json()?));
            entries.push(ManifestEntry { part: net.part, checkpoint: name, feature_norm: net.norm });
        }
        let manifest = BundleManifest {
            pipeline_version: crate::PIPELINE_VERSION.to_string(),
            latent_dim: LATENT_DIM,
            gesture_encoder: "per_part".to_string(),
            parts: entries,
        };
        let mut m = serde_json::to_string_pretty(&manifest)?;
        m.push('\n');
        files.insert(0, (MANIFEST_FILE.to_string(), m));
        Ok(files)
    }

    pub fn load_dir(dir: &Path) -> Result<Self> {
        let manifest: BundleManifest = serde_json::from_str(&std::fs::read_to_string(dir.join(MANIFEST_FILE))?)
            .map_err(|e| Error::Checkpoint(format!("manifest: {e}")))?;
        if manifest.latent_dim != LATENT_DIM {
            return Err(Error::Checkpoint(format!("manifest latent dimension {}", manifest.latent_dim)));
        }
        let mut models = CvaeModels::new();
        for e in &manifest.parts {
            let ckpt = CvaeCheckpoint::from_json(&std::fs::read_to_string(dir.join(&e.checkpoint))?)?;
            if ckpt.part != e.part {
                return Err(Error::Checkpoint(format!("{} holds part {}, manifest says {}", e.checkpoint, ckpt.part, e.part)));
            }
            models.insert(CvaeNet::from_checkpoint(&ckpt)?);
        }
        Ok(models)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Generated {
    feature: Feature,
    delay: f64,
    path_id: u64,
}

/// Per-sequence generation context. Use one state per independent sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationState {
    previous: Vec<Vec<Generated>>,
    gamma: Vec<Option<Vec3>>,
    next_path_id: u64,
    snapshot: usize,
}

impl Default for GenerationState {
    fn default() -> Self {
        GenerationState {
            previous: vec![Vec::new(); NUM_PARTS],
            gamma: vec![None; NUM_PARTS],
            next_path_id: 0,
            snapshot: 0,
        }
    }
}

impl GenerationState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Snapshot index the next call to `generate_points` will produce.
    pub fn snapshot(&self) -> usize {
        self.snapshot
    }

    pub fn previous_count(&self, part: BodyPart) -> usize {
        self.previous[part.code()].len()
    }
}

fn part_frame(frame: &SkeletonFrame, part: BodyPart, tx: &Vec3, gamma: Option<&Vec3>) -> Result<LocalFrame> {
    local_frame(frame, part, tx, gamma)
}

/// Generate one snapshot of points. `counts[j]` points are produced for part
/// code `j`: up to the previous snapshot's number of paths continue (chosen
/// at random when fewer are needed), the rest are births with new path ids.
pub fn generate_points<R: Rng + ?Sized>(
    models: &CvaeModels,
    frame: &SkeletonFrame,
    reference: Vec3,
    counts: &[u32; NUM_PARTS],
    state: &mut GenerationState,
    rf: &RfConfig,
    rng: &mut R,
) -> Result<Vec<ScatteringPoint>> {
    let tx = rf.tx();
    let aligned = align_to_reference(frame, reference);
    let snapshot = state.snapshot;
    let mut out = Vec::new();
    for part in BodyPart::ALL {
        let j = part.code();
        let k = counts[j] as usize;
        if k == 0 {
            state.previous[j].clear();
            continue;
        }
        let net = models.get(part).ok_or(Error::MissingModel(part))?;
        let lf = part_frame(frame, part, &tx, state.gamma[j].as_ref())?;
        state.gamma[j] = Some(lf.gamma());
        let gesture = net.encode_gesture(&aligned)?;

        let prev = std::mem::take(&mut state.previous[j]);
        let slots: Vec<Generated> = if k <= prev.len() {
            let mut idx = rand::seq::index::sample(rng, prev.len(), k).into_vec();
            idx.sort_unstable();
            idx.into_iter().map(|i| prev[i]).collect()
        } else {
            prev
        };
        let births = k - slots.len();
        let mut current: Vec<Generated> = Vec::with_capacity(k);

        let mut emit = |prior: Feature, previous: Feature, path_id: u64, current: &mut Vec<Generated>, rng: &mut R| -> Result<()> {
            let c = ConditionVector { gesture, prior, previous };
            let mut z = [0.0; LATENT_DIM];
            z.iter_mut().for_each(|v| *v = standard_normal(rng));
            let f = net.decode(&z, &c)?;
            let raw = net.norm.denormalize(&f);
            let position = lf.to_global(&Vec3::new(raw[0], raw[1], raw[2]));
            let range = (position - tx).norm();
            if !(range > 0.0) || !raw.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite("generated point"));
            }
            current.push(Generated { feature: f, delay: 2.0 * range / C0, path_id });
            out.push(
                ScatteringPoint::new(position, 10f64.powf(raw[3]), snapshot)
                    .with_part(part)
                    .with_path_id(path_id),
            );
            Ok(())
        };

        let empty = net.norm.context(None);
        for slot in &slots {
            let prior = current.last().map_or(empty, |g| g.feature);
            emit(prior, slot.feature, slot.path_id, &mut current, rng)?;
        }
        for _ in 0..births {
            let pick = rng.random_range(0..=current.len());
            let prior = pick.checked_sub(1).map_or(empty, |i| current[i].feature);
            let id = state.next_path_id;
            state.next_path_id += 1;
            emit(prior, empty, id, &mut current, rng)?;
        }
        current.sort_by(|a, b| a.delay.total_cmp(&b.delay));
        state.previous[j] = current;
    }
    state.snapshot += 1;
    Ok(out)
}

/// Generate points for a whole sequence with a fresh state.
pub fn generate_sequence<R: Rng + ?Sized>(
    models: &CvaeModels,
    seq: &GestureSequence,
    reference: Vec3,
    counts: &[[u32; NUM_PARTS]],
    rf: &RfConfig,
    rng: &mut R,
) -> Result<Vec<Vec<ScatteringPoint>>> {
    if counts.len() > seq.len() {
        return Err(Error::MissingFrame(seq.len()));
    }
    let mut state = GenerationState::new();
    counts
        .iter()
        .zip(&seq.frames)
        .map(|(k, f)| generate_points(models, f, reference, k, &mut state, rf, rng))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::point_to_part_distance;
    use crate::synthgen::{animate, sample_scatter_truth, ArmMotion, GestureScript, ScatterProcessConfig};

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn cond(seed: u64) -> ConditionVector {
        let mut r = rng(seed);
        let mut c = ConditionVector { gesture: [0.0; GESTURE_DIM], prior: [0.0; 4], previous: [0.0; 4] };
        c.gesture.iter_mut().chain(c.prior.iter_mut()).chain(c.previous.iter_mut()).for_each(|v| *v = r.random_range(-1.0..1.0));
        c
    }

    fn short_script() -> GestureScript {
        let mut s = GestureScript::new(ArmMotion::Up, ArmMotion::Static);
        s.duration = 0.26;
        s
    }

    #[test]
    fn zero_networks_are_bias_only() {
        let mut net = CvaeNet::zeros(BodyPart::Torso).unwrap();
        let seq = animate(&short_script()).unwrap();
        let f = align_to_reference(&seq.frames[0], Vec3::zeros());
        assert_eq!(net.encode_gesture(&f).unwrap(), [0.0; GESTURE_DIM]);
        let last = gesture_spec().layers.len() - 1;
        net.gesture_net_mut().layer_params_mut(last).unwrap().1.copy_from_slice(&[0.5; GESTURE_DIM]);
        assert_eq!(net.encode_gesture(&f).unwrap(), [0.5; GESTURE_DIM]);

        let elast = encoder_spec().layers.len() - 1;
        let bias: Vec<f64> = (0..2 * LATENT_DIM).map(|i| 0.1 * i as f64 - 1.0).collect();
        net.encoder_net_mut().layer_params_mut(elast).unwrap().1.copy_from_slice(&bias);
        let (mu, sigma) = net.encode(&[0.3, -0.2, 1.0, 0.5], &cond(1)).unwrap();
        for k in 0..LATENT_DIM {
            assert_eq!(mu[k], bias[k]);
            assert_eq!(sigma[k], (0.5 * bias[LATENT_DIM + k]).exp());
        }
    }

    #[test]
    fn encoder_matches_direct_evaluation() {
        let net = CvaeNet::new(BodyPart::ForearmL, 1.0, &mut rng(3)).unwrap();
        let x = [0.2, -0.7, 0.1, 0.4];
        let c = cond(4);
        let (mu, sigma) = net.encode(&x, &c).unwrap();
        let mut h: Vec<f64> = x.iter().copied().chain(c.to_array()).collect();
        let dense_layers = [0usize, 2, 4, 6];
        for (n, &li) in dense_layers.iter().enumerate() {
            let (w, b) = net.encoder.layer_params(li).unwrap();
            let out_dim = b.len();
            let mut y = b.to_vec();
            for (i, xi) in h.iter().enumerate() {
                for o in 0..out_dim {
                    y[o] += xi * w[i * out_dim + o];
                }
            }
            if n < 3 {
                y.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            h = y;
        }
        for k in 0..LATENT_DIM {
            assert!((mu[k] - h[k]).abs() < 1e-12);
            assert!((sigma[k] - (0.5 * h[LATENT_DIM + k]).exp()).abs() < 1e-12);
            assert!(sigma[k] > 0.0);
        }
    }

    #[test]
    fn reparameterize_examples() {
        let mu = [0.5, -1.0];
        assert_eq!(reparameterize(&mu, &[2.0, 3.0], &[0.0, 0.0]), mu.to_vec());
        assert_eq!(reparameterize(&mu, &[0.0, 0.0], &[1.3, -0.4]), mu.to_vec());
        let mut r = rng(5);
        let n = 100_000;
        let (m, s) = (0.7, 1.9);
        let zs: Vec<f64> = (0..n).map(|_| reparameterize(&[m], &[s], &[standard_normal(&mut r)])[0]).collect();
        let mean = zs.iter().sum::<f64>() / n as f64;
        let sd = (zs.iter().map(|z| (z - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        assert!((mean - m).abs() < 3.0 * s / (n as f64).sqrt());
        assert!((sd - s).abs() < 3.0 * s / (2.0 * n as f64).sqrt());
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl_divergence(&[0.0; 10], &[0.0; 10]), 0.0);
        // Quadrature of p ln(p/q) on a fine grid.
        let mut r = rng(6);
        for _ in 0..5 {
            let m: f64 = r.random_range(-2.0..2.0);
            let s: f64 = r.random_range(0.3..2.5);
            let pdf = |x: f64, m: f64, s: f64| (-(x - m).powi(2) / (2.0 * s * s)).exp() / (s * (2.0 * std::f64::consts::PI).sqrt());
            let (lo, hi, steps) = (m - 12.0 * s, m + 12.0 * s, 200_000);
            let h = (hi - lo) / steps as f64;
            let mut q = 0.0;
            for i in 0..=steps {
                let x = lo + i as f64 * h;
                let w = if i == 0 || i == steps { 0.5 } else { 1.0 };
                let p = pdf(x, m, s);
                if p > 0.0 {
                    q += w * p * (p / pdf(x, 0.0, 1.0)).ln();
                }
            }
            q *= h;
            let kl = kl_divergence(&[m], &[2.0 * s.ln()]);
            assert!((kl - q).abs() < 1e-6, "{kl} vs {q}");
        }
    }

    #[test]
    fn loss_zero_for_perfect_prior_matched_model() {
        // Encoder outputs mu = 0, logvar = 0; decoder copies nothing and emits x via bias.
        let mut net = CvaeNet::zeros(BodyPart::Head).unwrap();
        let x = [0.1, 0.2, -0.3, 0.4];
        let dlast = decoder_spec().layers.len() - 1;
        net.decoder_net_mut().layer_params_mut(dlast).unwrap().1.copy_from_slice(&x);
        let l = net.cvae_loss(&x, &cond(2), &mut rng(1)).unwrap();
        assert_eq!(l.kl, 0.0);
        assert_eq!(l.total, 0.0);
    }

    #[test]
    fn full_chain_gradients() {
        let mut net = CvaeNet::new(BodyPart::UpperArmR, 0.7, &mut rng(8)).unwrap();
        let worst = net.check_gradients(3, 40, 1e-5, &mut rng(9)).unwrap();
        assert!(worst < 1e-4, "{worst}");
    }

    fn corpus(script: &GestureScript, seed: u64) -> (GestureSequence, Vec<Vec<ScatteringPoint>>) {
        let seq = animate(script).unwrap();
        let truth = sample_scatter_truth(&seq, &ScatterProcessConfig::dense(), &mut rng(seed)).unwrap();
        (seq, truth.points)
    }

    #[test]
    fn dataset_context_follows_paths_and_delays() {
        let (seq, pts) = corpus(&short_script(), 1);
        let mut d = PartDataset::new(BodyPart::Torso);
        d.add_sequence(&seq, &pts, Vec3::zeros(), &RfConfig::default(), &mut rng(0)).unwrap();
        let n_torso: usize = pts.iter().map(|s| s.iter().filter(|p| p.part == Some(BodyPart::Torso)).count()).sum();
        assert_eq!(d.samples.len(), n_torso);
        assert!(d.samples.iter().filter(|s| d.frames[s.frame].frame().time == 0.0).all(|s| s.previous.is_none()));
        assert!(d.samples.iter().any(|s| s.previous.is_some()));
        // The first point visited in each non-empty snapshot lacks a prior.
        let with_points = pts.iter().filter(|s| s.iter().any(|p| p.part == Some(BodyPart::Torso))).count();
        assert!(d.samples.iter().filter(|s| s.prior.is_none()).count() >= with_points);
    }

    #[test]
    fn repeated_feature_collapses() {
        let seq = animate(&short_script()).unwrap();
        let frames = sequence_local_frames(&seq.frames, BodyPart::Torso, &RfConfig::default().tx(), None).unwrap();
        let mut pts = Vec::new();
        for (t, lf) in frames.iter().enumerate() {
            let p = lf.to_global(&Vec3::new(0.1, 0.02, -0.03));
            pts.push(vec![ScatteringPoint::new(p, 0.004, t).with_part(BodyPart::Torso).with_path_id(0)]);
        }
        let mut d = PartDataset::new(BodyPart::Torso);
        d.add_sequence(&seq, &pts, Vec3::zeros(), &RfConfig::default(), &mut rng(0)).unwrap();
        let cfg = CvaeTrainConfig { batch_size: 16, ..Default::default() };
        let (net, _) = train_part(&d, &cfg).unwrap();
        let mut models = CvaeModels::new();
        models.insert(net);
        let mut counts = vec![[0u32; NUM_PARTS]; seq.len()];
        counts.iter_mut().for_each(|c| c[BodyPart::Torso.code()] = 1);
        let gen = generate_sequence(&models, &seq, Vec3::zeros(), &counts, &RfConfig::default(), &mut rng(3)).unwrap();
        for (t, s) in gen.iter().enumerate() {
            let l = frames[t].to_local(&s[0].position);
            assert!((l - Vec3::new(0.1, 0.02, -0.03)).norm() < 0.01, "{l:?}");
            assert!((s[0].rcs.log10() - 0.004f64.log10()).abs() < 0.01);
        }
    }

    fn trained_forearm() -> (CvaeModels, CvaeTrainReport, GestureSequence) {
        let (seq, pts) = corpus(&GestureScript::new(ArmMotion::Up, ArmMotion::Static), 4);
        let mut d = PartDataset::new(BodyPart::ForearmL);
        d.add_sequence(&seq, &pts, Vec3::zeros(), &RfConfig::default(), &mut rng(0)).unwrap();
        let cfg = CvaeTrainConfig { epochs: 30, max_samples_per_part: 800, seed: 2, ..Default::default() };
        let (net, report) = train_part(&d, &cfg).unwrap();
        let mut models = CvaeModels::new();
        models.insert(net);
        (models, report, seq)
    }

    #[test]
    fn training_converges_and_stays_near_part() {
        let (models, report, seq) = trained_forearm();
        assert!(report.epoch_loss[29] < report.epoch_loss[9]);
        let mut counts = vec![[0u32; NUM_PARTS]; 300];
        counts.iter_mut().for_each(|c| c[BodyPart::ForearmL.code()] = 8);
        let gen = generate_sequence(&models, &seq, Vec3::zeros(), &counts, &RfConfig::default(), &mut rng(7)).unwrap();
        let all: Vec<&ScatteringPoint> = gen.iter().flatten().collect();
        let inside = all
            .iter()
            .filter(|p| point_to_part_distance(&p.position, BodyPart::ForearmL, &seq.frames[p.snapshot]) <= 0.25)
            .count();
        assert!(inside as f64 >= 0.95 * all.len() as f64, "{inside}/{}", all.len());
    }

    #[test]
    fn generation_protocol_and_determinism() {
        let (models, _, seq) = trained_forearm();
        let rf = RfConfig::default();
        let j = BodyPart::ForearmL.code();
        let mut counts = [0u32; NUM_PARTS];

        let mut state = GenerationState::new();
        assert!(generate_points(&models, &seq.frames[0], Vec3::zeros(), &counts, &mut state, &rf, &mut rng(1)).unwrap().is_empty());
        assert_eq!(state.snapshot(), 1);

        counts[j] = 5;
        let a = generate_points(&models, &seq.frames[1], Vec3::zeros(), &counts, &mut state, &rf, &mut rng(1)).unwrap();
        assert_eq!(a.len(), 5);
        counts[j] = 3;
        let b = generate_points(&models, &seq.frames[2], Vec3::zeros(), &counts, &mut state, &rf, &mut rng(2)).unwrap();
        let ids_a: Vec<u64> = a.iter().filter_map(|p| p.path_id).collect();
        assert!(b.iter().all(|p| ids_a.contains(&p.path_id.unwrap())));
        counts[j] = 6;
        let c = generate_points(&models, &seq.frames[3], Vec3::zeros(), &counts, &mut state, &rf, &mut rng(3)).unwrap();
        let fresh = c.iter().filter(|p| p.path_id.unwrap() >= 5).count();
        assert_eq!(fresh, 3);

        counts[BodyPart::Head.code()] = 1;
        assert!(matches!(
            generate_points(&models, &seq.frames[4], Vec3::zeros(), &counts, &mut state, &rf, &mut rng(3)),
            Err(Error::MissingModel(BodyPart::Head))
        ));

        // Identical seeds and inputs give identical points; states are isolated.
        let k: Vec<[u32; NUM_PARTS]> = (0..20).map(|t| {
            let mut c = [0; NUM_PARTS];
            c[j] = 2 + (t % 4) as u32;
            c
        }).collect();
        let run = || generate_sequence(&models, &seq, Vec3::zeros(), &k, &rf, &mut rng(11)).unwrap();
        assert_eq!(run(), run());
        let mut s1 = GenerationState::new();
        let mut s2 = GenerationState::new();
        let mut r1 = rng(11);
        let mut r2 = rng(12);
        let mut inter1 = Vec::new();
        for t in 0..20 {
            inter1.push(generate_points(&models, &seq.frames[t], Vec3::zeros(), &k[t], &mut s1, &rf, &mut r1).unwrap());
            generate_points(&models, &seq.frames[t], Vec3::zeros(), &k[t], &mut s2, &rf, &mut r2).unwrap();
        }
        assert_eq!(inter1, run());
    }

    #[test]
    fn bundle_round_trip() {
        let (models, _, seq) = trained_forearm();
        let dir = tempfile::tempdir().unwrap();
        let files = models.to_files(2, 30).unwrap();
        for (name, text) in &files {
            std::fs::write(dir.path().join(name), text).unwrap();
        }
        let back = CvaeModels::load_dir(dir.path()).unwrap();
        assert!(back.get(BodyPart::Head).is_none());
        assert_eq!(back.to_files(2, 30).unwrap(), files);
        let f = align_to_reference(&seq.frames[10], Vec3::zeros());
        assert_eq!(
            back.get(BodyPart::ForearmL).unwrap().encode_gesture(&f).unwrap(),
            models.get(BodyPart::ForearmL).unwrap().encode_gesture(&f).unwrap()
        );
    }

    #[test]
    fn empty_part_dataset_errors() {
        let d = PartDataset::new(BodyPart::Head);
        assert!(matches!(train_part(&d, &CvaeTrainConfig::default()), Err(Error::InsufficientData(BodyPart::Head))));
    }
}
