//! Per-part MPC count model: a dense network maps an aligned skeleton frame
//! to six Poisson rates, trained with the Poisson negative log-likelihood.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nnkit::{Activation, AdamConfig, AdamState, Checkpoint, Network, NetworkSpec, Tensor};
use crate::skeleton::{AlignedFrame, BodyPart, NUM_KEYPOINTS, NUM_PARTS};
use crate::stats::{sample_poisson, total_variation};
use crate::LOG_EPS;

pub const INPUT_DIM: usize = NUM_KEYPOINTS * 3;
pub const HIDDEN: [usize; 2] = [512, 128];

/// Point counts per body part, indexed by part code.
pub type CountSample = [u32; NUM_PARTS];
pub type Rates = [f64; NUM_PARTS];

const NORM_MEAN: &str = "input_mean";
const NORM_STD: &str = "input_std";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoissonTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for PoissonTrainConfig {
    fn default() -> Self {
        PoissonTrainConfig {
            epochs: 250,
            batch_size: 64,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

impl PoissonTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || !(self.adam.learning_rate > 0.0) {
            return Err(Error::Config("poisson training needs positive epochs, batch size and learning rate".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct PoissonNet {
    net: Network,
    input_mean: Vec<f64>,
    input_std: Vec<f64>,
}

pub fn network_spec() -> NetworkSpec {
    NetworkSpec::mlp(INPUT_DIM, &HIDDEN, NUM_PARTS, Activation::Exp)
}

impl PoissonNet {
    /// Freshly initialized network with identity input normalization.
    pub fn new<R: Rng + ?Sized>(rng: &mut R) -> Result<Self> {
        Ok(PoissonNet {
            net: Network::new(network_spec(), rng)?,
            input_mean: vec![0.0; INPUT_DIM],
            input_std: vec![1.0; INPUT_DIM],
        })
    }

    pub fn from_parts(net: Network, input_mean: Vec<f64>, input_std: Vec<f64>) -> Result<Self> {
        if net.input_dim() != INPUT_DIM || net.output_dim() != NUM_PARTS {
            return Err(Error::ShapeMismatch {
                expected: vec![INPUT_DIM, NUM_PARTS],
                got: vec![net.input_dim(), net.output_dim()],
            });
        }
        if input_mean.len() != INPUT_DIM || input_std.len() != INPUT_DIM {
            return Err(Error::ShapeMismatch { expected: vec![INPUT_DIM], got: vec![input_mean.len(), input_std.len()] });
        }
        if input_std.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Checkpoint("input standard deviations must be positive".into()));
        }
        Ok(PoissonNet { net, input_mean, input_std })
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn network_mut(&mut self) -> &mut Network {
        &mut self.net
    }

    pub fn input_stats(&self) -> (&[f64], &[f64]) {
        (&self.input_mean, &self.input_std)
    }

    fn normalize_into(&self, frame: &AlignedFrame, out: &mut Vec<f64>) -> Result<()> {
        let flat = frame.frame().to_flat();
        if flat.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidFrame("non-finite keypoint coordinate".into()));
        }
        out.extend(flat.iter().zip(&self.input_mean).zip(&self.input_std).map(|((x, m), s)| (x - m) / s));
        Ok(())
    }

    fn inputs(&self, frames: &[AlignedFrame]) -> Result<Tensor> {
        let mut data = Vec::with_capacity(frames.len() * INPUT_DIM);
        for f in frames {
            self.normalize_into(f, &mut data)?;
        }
        Tensor::new(vec![frames.len(), INPUT_DIM], data)
    }

    pub fn predict_rates(&self, frame: &AlignedFrame) -> Result<Rates> {
        Ok(self.predict_batch(std::slice::from_ref(frame))?[0])
    }

    pub fn predict_batch(&self, frames: &[AlignedFrame]) -> Result<Vec<Rates>> {
        if frames.is_empty() {
            return Ok(Vec::new());
        }
        let out = self.net.predict(&self.inputs(frames)?)?;
        Ok(out.data().chunks_exact(NUM_PARTS).map(to_rates).collect())
    }

    pub fn to_checkpoint(&self, seed: u64, epochs: usize) -> Checkpoint {
        let mut stats = BTreeMap::new();
        stats.insert(NORM_MEAN.to_string(), self.input_mean.clone());
        stats.insert(NORM_STD.to_string(), self.input_std.clone());
        Checkpoint::from_network(&self.net, stats, seed, epochs)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.spec != network_spec() {
            return Err(Error::Checkpoint("checkpoint does not hold a count network".into()));
        }
        let stat = |k: &str| {
            ckpt.norm_stats
                .get(k)
                .cloned()
                .ok_or_else(|| Error::Checkpoint(format!("missing normalization entry {k}")))
        };
        Self::from_parts(ckpt.to_network()?, stat(NORM_MEAN)?, stat(NORM_STD)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

fn to_rates(row: &[f64]) -> Rates {
    let mut r = [0.0; NUM_PARTS];
    r.copy_from_slice(row);
    r
}

/// Mean over the batch of `sum_j (lambda_j - k_j ln(lambda_j + eps))`.
/// `rates` and `counts` are row-major with `parts` columns.
pub fn poisson_nll(rates: &[f64], counts: &[i64], parts: usize) -> Result<f64> {
    if parts == 0 || rates.len() != counts.len() || !rates.len().is_multiple_of(parts) {
        return Err(Error::ShapeMismatch { expected: vec![rates.len()], got: vec![counts.len()] });
    }
    if let Some(&k) = counts.iter().find(|&&k| k < 0) {
        return Err(Error::NegativeCount(k));
    }
    if rates.is_empty() {
        return Err(Error::EmptyInput);
    }
    if let Some(&l) = rates.iter().find(|l| !(**l > 0.0)) {
        return Err(Error::NonPositiveRate(l));
    }
    let batch = rates.len() / parts;
    let total: f64 = rates.iter().zip(counts).map(|(l, &k)| l - k as f64 * (l + LOG_EPS).ln()).sum();
    Ok(total / batch as f64)
}

/// Loss and gradient w.r.t. the rates for a batch of `u32` counts.
fn nll_and_grad(rates: &[f64], counts: &[f64], batch: usize) -> (f64, Vec<f64>) {
    let inv = 1.0 / batch as f64;
    let mut loss = 0.0;
    let grad = rates
        .iter()
        .zip(counts)
        .map(|(l, k)| {
            loss += l - k * (l + LOG_EPS).ln();
            (1.0 - k / (l + LOG_EPS)) * inv
        })
        .collect();
    (loss * inv, grad)
}

/// Frames paired with their per-part counts.
#[derive(Debug, Clone)]
pub struct CountDataset {
    pub frames: Vec<AlignedFrame>,
    pub counts: Vec<CountSample>,
}

impl CountDataset {
    pub fn new(frames: Vec<AlignedFrame>, counts: Vec<CountSample>) -> Result<Self> {
        if frames.len() != counts.len() {
            return Err(Error::ShapeMismatch { expected: vec![frames.len()], got: vec![counts.len()] });
        }
        Ok(CountDataset { frames, counts })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Full-dataset NLL before the first update.
    pub initial_nll: f64,
    pub final_nll: f64,
    /// Mean minibatch NLL of each epoch.
    pub epoch_nll: Vec<f64>,
}

fn standardization(frames: &[AlignedFrame]) -> (Vec<f64>, Vec<f64>) {
    let n = frames.len() as f64;
    let mut mean = vec![0.0; INPUT_DIM];
    for f in frames {
        for (m, x) in mean.iter_mut().zip(f.frame().to_flat()) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; INPUT_DIM];
    for f in frames {
        for ((v, x), m) in var.iter_mut().zip(f.frame().to_flat()).zip(&mean) {
            *v += (x - m) * (x - m);
        }
    }
    // Constant coordinates keep unit scale.
    let std = var.iter().map(|v| (v / n).sqrt()).map(|s| if s > 1e-9 { s } else { 1.0 }).collect();
    (mean, std)
}

fn dataset_nll(model: &PoissonNet, inputs: &Tensor, counts: &[f64]) -> Result<f64> {
    let out = model.net.predict(inputs)?;
    Ok(nll_and_grad(out.data(), counts, inputs.batch()).0)
}

/// Train a count network. Deterministic for a given seed.
pub fn train(data: &CountDataset, cfg: &PoissonTrainConfig) -> Result<(PoissonNet, TrainReport)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (mean, std) = standardization(&data.frames);
    let mut model = PoissonNet::from_parts(Network::new(network_spec(), &mut rng)?, mean, std)?;

    // Start the output at the marginal mean count of each part.
    let n = data.len();
    let last = network_spec().layers.len() - 2;
    if let Some((_, bias)) = model.net.layer_params_mut(last) {
        for (j, b) in bias.iter_mut().enumerate() {
            let m = data.counts.iter().map(|c| c[j] as f64).sum::<f64>() / n as f64;
            *b = m.max(1e-3).ln();
        }
    }

    let inputs = model.inputs(&data.frames)?;
    let counts: Vec<f64> = data.counts.iter().flat_map(|c| c.iter().map(|&k| k as f64)).collect();
    let initial_nll = dataset_nll(&model, &inputs, &counts)?;

    let mut adam = AdamState::new(cfg.adam, model.net.num_params());
    let mut order: Vec<usize> = (0..n).collect();
    let mut epoch_nll = Vec::with_capacity(cfg.epochs);
    let mut xb = Vec::with_capacity(cfg.batch_size * INPUT_DIM);
    let mut kb = Vec::with_capacity(cfg.batch_size * NUM_PARTS);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            xb.clear();
            kb.clear();
            for &i in chunk {
                xb.extend_from_slice(inputs.row(i));
                kb.extend_from_slice(&counts[i * NUM_PARTS..(i + 1) * NUM_PARTS]);
            }
            let x = Tensor::new(vec![chunk.len(), INPUT_DIM], std::mem::take(&mut xb))?;
            let out = model.net.forward(&x)?;
            xb = x.into_data();
            let (loss, grad) = nll_and_grad(out.data(), &kb, chunk.len());
            if !loss.is_finite() {
                return Err(Error::NonFinite("poisson training loss"));
            }
            model.net.zero_grad();
            model.net.backward_params(&Tensor::new(vec![chunk.len(), NUM_PARTS], grad)?)?;
            let (params, grads) = model.net.params_and_grads();
            adam.step(params, grads)?;
            sum += loss;
            batches += 1;
        }
        epoch_nll.push(sum / batches as f64);
    }
    let final_nll = dataset_nll(&model, &inputs, &counts)?;
    Ok((model, TrainReport { initial_nll, final_nll, epoch_nll }))
}

/// One independent Poisson draw per part.
pub fn sample_counts<R: Rng + ?Sized>(rates: &Rates, rng: &mut R) -> CountSample {
    let mut k = [0u32; NUM_PARTS];
    for (kj, &l) in k.iter_mut().zip(rates) {
        *kj = sample_poisson(l, rng).min(u32::MAX as u64) as u32;
    }
    k
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowReport {
    pub start: usize,
    pub tv: [f64; NUM_PARTS],
    pub lambda_hat_mean: Rates,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CountReport {
    pub window: usize,
    pub draws: usize,
    pub windows: Vec<WindowReport>,
}

impl CountReport {
    pub fn mean_tv(&self) -> f64 {
        let n = (self.windows.len() * NUM_PARTS) as f64;
        self.windows.iter().flat_map(|w| w.tv.iter()).sum::<f64>() / n
    }

    pub fn mean_tv_part(&self, part: BodyPart) -> f64 {
        self.windows.iter().map(|w| w.tv[part.code()]).sum::<f64>() / self.windows.len() as f64
    }
}

pub const COUNT_REPORT_HEADER: [&str; 4] = ["window_start_snapshot", "part", "tv_distance", "lambda_hat_mean"];

impl CountReport {
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(COUNT_REPORT_HEADER)?;
        for win in &self.windows {
            for part in BodyPart::ALL {
                let j = part.code();
                w.write_record([
                    win.start.to_string(),
                    part.name().to_string(),
                    win.tv[j].to_string(),
                    win.lambda_hat_mean[j].to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Compare truth counts with counts sampled from per-snapshot rates over
/// disjoint windows. Draw `i` of a window uses the rates of snapshot
/// `start + i % window`.
pub fn count_distribution_report<R: Rng + ?Sized>(
    rates: &[Rates],
    truth: &[CountSample],
    window: usize,
    draws: usize,
    rng: &mut R,
) -> Result<CountReport> {
    if rates.len() != truth.len() {
        return Err(Error::ShapeMismatch { expected: vec![truth.len()], got: vec![rates.len()] });
    }
    if window == 0 || draws == 0 {
        return Err(Error::Config("window and draw count must be positive".into()));
    }
    if truth.len() < window {
        return Err(Error::SequenceTooShort { len: truth.len(), window });
    }
    let mut windows = Vec::new();
    for start in (0..=truth.len() - window).step_by(window) {
        let span = start..start + window;
        let sampled: Vec<CountSample> = (0..draws).map(|i| sample_counts(&rates[start + i % window], rng)).collect();
        let mut tv = [0.0; NUM_PARTS];
        let mut lambda_hat_mean = [0.0; NUM_PARTS];
        for j in 0..NUM_PARTS {
            let t: Vec<u64> = truth[span.clone()].iter().map(|c| c[j] as u64).collect();
            let s: Vec<u64> = sampled.iter().map(|c| c[j] as u64).collect();
            tv[j] = total_variation(&t, &s)?;
            lambda_hat_mean[j] = rates[span.clone()].iter().map(|r| r[j]).sum::<f64>() / window as f64;
        }
        windows.push(WindowReport { start, tv, lambda_hat_mean });
    }
    Ok(CountReport { window, draws, windows })
}

pub fn evaluate_count_distribution<R: Rng + ?Sized>(
    model: &PoissonNet,
    frames: &[AlignedFrame],
    truth: &[CountSample],
    window: usize,
    draws: usize,
    rng: &mut R,
) -> Result<CountReport> {
    if frames.len() < window {
        return Err(Error::SequenceTooShort { len: frames.len(), window });
    }
    let rates = model.predict_batch(frames)?;
    count_distribution_report(&rates, truth, window, draws, rng)
}
