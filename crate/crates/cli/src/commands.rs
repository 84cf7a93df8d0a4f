//! Pipeline commands. Each reads a corpus directory of per-sequence
//! subdirectories and writes a mirrored layout under the output directory.

use std::collections::BTreeMap;
use std::fs::File;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context as _, Result};
use gesture_channel::channel::{
    stft_spectrogram, synthesize_sequence, write_cir_csv, write_pdp_csv, write_rmsds_csv, write_spectrogram_csv,
    ChannelSnapshot,
};
use gesture_channel::clustering::{
    cluster_points, counts_per_snapshot, group_by_snapshot, labeled_points, read_labeled_csv, write_labeled_csv,
};
use gesture_channel::cvae_model::{generate_sequence, train_part, CvaeModels, PartDataset};
use gesture_channel::evaluation::{
    error_quantiles, fraction_within, matched_spatial_error, part_features, quartile_deltas, rmsds_errors, ErrorQuantiles,
};
use gesture_channel::poisson_model::{count_distribution_report, sample_counts, train, CountDataset, PoissonNet, Rates};
use gesture_channel::scatter_geom::{mpc_to_point, read_mpc_csv, ScatteringPoint};
use gesture_channel::skeleton::{
    align_sequence, interpolate_sequence, read_keypoints_file, write_keypoints_csv, BodyPart, GestureSequence, NUM_PARTS,
};
use gesture_channel::synthgen::{
    animate, export_as_mpc, read_truth_points_csv, sample_scatter_truth, write_truth_counts_csv, write_truth_points_csv,
};
use gesture_channel::{Vec3, PIPELINE_VERSION};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{PipelineConfig, Stage};
use crate::io::{self, require, sequence_dirs, write_atomic, write_stamped};

/// Skeletons are expressed relative to this reference before entering the
/// networks.
const REFERENCE: Vec3 = Vec3::new(0.0, 0.0, 0.0);

pub struct Context {
    pub cfg: PipelineConfig,
    pub out: PathBuf,
}

impl Context {
    fn path(&self, seq: &str, file: &str) -> PathBuf {
        self.out.join(seq).join(file)
    }

    fn rng(&self, stage: Stage, index: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.stage_seed(stage));
        rng.set_stream(index as u64);
        rng
    }

    /// Record the effective configuration next to the outputs.
    pub fn write_config(&self) -> Result<()> {
        let text = format!("{}{}", io::stamp(), self.cfg.to_toml()?);
        write_atomic(&self.out.join(io::EFFECTIVE_CONFIG), text.as_bytes())
    }

    fn write_keypoints(&self, seq_dir: &str, seq: &GestureSequence) -> Result<()> {
        write_stamped(&self.path(seq_dir, io::KEYPOINTS), |w| write_keypoints_csv(w, std::slice::from_ref(seq)))
    }

    fn write_points(&self, seq_dir: &str, file: &str, points: &[ScatteringPoint]) -> Result<()> {
        write_stamped(&self.path(seq_dir, file), |w| write_labeled_csv(w, points))
    }
}

fn read_sequence(dir: &Path) -> Result<GestureSequence> {
    let path = require(dir.join(io::KEYPOINTS))?;
    let mut seqs = read_keypoints_file(&path).with_context(|| format!("parsing {}", path.display()))?;
    ensure!(seqs.len() == 1, "{} holds {} sequences, expected one", path.display(), seqs.len());
    Ok(seqs.remove(0))
}

/// Labeled-point or truth-point file, chosen by its name.
fn read_points(path: &Path) -> Result<Vec<ScatteringPoint>> {
    let path = require(path.to_path_buf())?;
    let f = File::open(&path)?;
    let pts = if path.file_name().is_some_and(|n| n == io::TRUTH_POINTS) {
        read_truth_points_csv(f)
    } else {
        read_labeled_csv(f)
    };
    pts.with_context(|| format!("parsing {}", path.display()))
}

fn points_by_snapshot(points: &[ScatteringPoint], seq: &GestureSequence, path: &Path) -> Result<Vec<Vec<ScatteringPoint>>> {
    if let Some(p) = points.iter().find(|p| p.snapshot >= seq.len()) {
        bail!("{}: snapshot {} beyond the {} keypoint frames", path.display(), p.snapshot, seq.len());
    }
    Ok(group_by_snapshot(points, seq.len()))
}

pub fn synth_data(ctx: &Context) -> Result<()> {
    let cfg = &ctx.cfg;
    ensure!(!cfg.synth.scripts.is_empty(), "config lists no synth scripts");
    for (i, script) in cfg.synth.scripts.iter().enumerate() {
        let name = format!("seq{i:02}");
        let mut rng = ctx.rng(Stage::Synth, i);
        let seq = animate(script)?;
        let truth = sample_scatter_truth(&seq, &cfg.scatter, &mut rng)?;
        let times: Vec<f64> = seq.frames.iter().map(|f| f.time).collect();
        let mpc = export_as_mpc(&truth.flat_points(), &times, &cfg.rf, &cfg.scatter.noise, &mut rng)?;
        ctx.write_keypoints(&name, &seq)?;
        write_stamped(&ctx.path(&name, io::MPC), |w| gesture_channel::scatter_geom::write_mpc_csv(w, &mpc))?;
        write_stamped(&ctx.path(&name, io::TRUTH_COUNTS), |w| write_truth_counts_csv(w, &truth))?;
        write_stamped(&ctx.path(&name, io::TRUTH_POINTS), |w| write_truth_points_csv(w, &truth.flat_points()))?;
    }
    ctx.write_config()
}

pub fn preprocess(ctx: &Context, input: &Path) -> Result<()> {
    for name in sequence_dirs(input)? {
        let dir = input.join(&name);
        let seq = interpolate_sequence(&read_sequence(&dir)?, ctx.cfg.preprocess.snapshot_interval)?;
        let mpc_path = require(dir.join(io::MPC))?;
        let mpc = read_mpc_csv(File::open(&mpc_path)?).with_context(|| format!("parsing {}", mpc_path.display()))?;
        let points = mpc.iter().map(|m| mpc_to_point(m, &ctx.cfg.rf)).collect::<gesture_channel::Result<Vec<_>>>()?;
        points_by_snapshot(&points, &seq, &mpc_path)?;
        ctx.write_keypoints(&name, &seq)?;
        ctx.write_points(&name, io::POINTS, &points)?;
    }
    ctx.write_config()
}

pub fn cluster(ctx: &Context, input: &Path) -> Result<()> {
    for name in sequence_dirs(input)? {
        let dir = input.join(&name);
        let seq = read_sequence(&dir)?;
        let points = read_points(&dir.join(io::POINTS))?;
        points_by_snapshot(&points, &seq, &dir.join(io::POINTS))?;
        let trajectories = cluster_points(&points, &seq.frames, &ctx.cfg.tracker)?;
        ctx.write_keypoints(&name, &seq)?;
        ctx.write_points(&name, io::LABELED, &labeled_points(&trajectories))?;
    }
    ctx.write_config()
}

pub fn train_models(ctx: &Context, input: &Path) -> Result<()> {
    let cfg = &ctx.cfg;
    let mut corpus = Vec::new();
    for name in sequence_dirs(input)? {
        let dir = input.join(&name);
        let seq = read_sequence(&dir)?;
        let points = read_points(&dir.join(io::LABELED))?;
        let grouped = points_by_snapshot(&points, &seq, &dir.join(io::LABELED))?;
        corpus.push((seq, grouped));
    }

    let mut frames = Vec::new();
    let mut counts = Vec::new();
    for (seq, grouped) in &corpus {
        frames.extend(align_sequence(seq, REFERENCE));
        counts.extend(counts_per_snapshot(&grouped.concat(), seq.len()));
    }
    let pcfg = gesture_channel::poisson_model::PoissonTrainConfig { seed: cfg.stage_seed(Stage::Poisson), ..cfg.poisson };
    let (poisson, poisson_report) = train(&CountDataset::new(frames, counts)?, &pcfg)?;
    write_atomic(&ctx.out.join(io::POISSON_CHECKPOINT), poisson.to_checkpoint(pcfg.seed, pcfg.epochs).to_json()?.as_bytes())?;

    let ccfg = gesture_channel::cvae_model::CvaeTrainConfig { seed: cfg.stage_seed(Stage::Cvae), ..cfg.cvae };
    let mut models = CvaeModels::new();
    let mut losses: Vec<(String, Vec<f64>)> = vec![("poisson".into(), poisson_report.epoch_nll)];
    for part in BodyPart::ALL {
        let mut data = PartDataset::new(part);
        let mut rng = ctx.rng(Stage::Cvae, part.code());
        for (seq, grouped) in &corpus {
            data.add_sequence(seq, grouped, REFERENCE, &cfg.rf, &mut rng)?;
        }
        if data.samples.is_empty() {
            bail!("no labeled {part} points to train on");
        }
        let (net, report) = train_part(&data, &ccfg)?;
        losses.push((format!("cvae_{part}"), report.epoch_loss));
        models.insert(net);
    }
    for (name, text) in models.to_files(ccfg.seed, ccfg.epochs)? {
        write_atomic(&ctx.out.join(name), text.as_bytes())?;
    }
    write_stamped(&ctx.out.join(io::TRAIN_REPORT), |w| {
        let mut c = csv::Writer::from_writer(w);
        c.write_record(["model", "epoch", "loss"])?;
        for (model, values) in &losses {
            for (e, v) in values.iter().enumerate() {
                c.write_record([model.clone(), e.to_string(), v.to_string()])?;
            }
        }
        c.flush()?;
        Ok(())
    })?;
    ctx.write_config()
}

fn rates_header() -> Vec<String> {
    std::iter::once("snapshot".to_string()).chain(BodyPart::ALL.iter().map(|p| p.name().to_string())).collect()
}

fn write_rates(path: &Path, rates: &[Rates]) -> Result<()> {
    write_stamped(path, |w| {
        let mut c = csv::Writer::from_writer(w);
        c.write_record(rates_header())?;
        for (t, r) in rates.iter().enumerate() {
            c.write_record(std::iter::once(t.to_string()).chain(r.iter().map(|v| v.to_string())))?;
        }
        c.flush()?;
        Ok(())
    })
}

fn read_rates(path: &Path) -> Result<Vec<Rates>> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
    ensure!(r.headers()?.iter().eq(rates_header().iter().map(String::as_str)), "{}: unexpected header", path.display());
    let mut out = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        ensure!(rec.get(0) == Some(line.to_string().as_str()), "{}: row {} out of order", path.display(), line + 1);
        let mut rates = [0.0; NUM_PARTS];
        for (j, v) in rates.iter_mut().enumerate() {
            *v = rec[j + 1].parse().with_context(|| format!("{}: row {}", path.display(), line + 1))?;
        }
        out.push(rates);
    }
    Ok(out)
}

pub fn generate(ctx: &Context, models_dir: &Path, input: &Path) -> Result<()> {
    let poisson = PoissonNet::load(&require(models_dir.join(io::POISSON_CHECKPOINT))?)?;
    let models = CvaeModels::load_dir(models_dir).with_context(|| format!("loading models from {}", models_dir.display()))?;
    for (i, name) in sequence_dirs(input)?.into_iter().enumerate() {
        let seq = read_sequence(&input.join(&name))?;
        let mut rng = ctx.rng(Stage::Generate, i);
        let rates = poisson.predict_batch(&align_sequence(&seq, REFERENCE))?;
        let counts: Vec<[u32; NUM_PARTS]> = rates.iter().map(|r| sample_counts(r, &mut rng)).collect();
        let points = generate_sequence(&models, &seq, REFERENCE, &counts, &ctx.cfg.rf, &mut rng)?;
        ctx.write_keypoints(&name, &seq)?;
        write_rates(&ctx.path(&name, io::RATES), &rates)?;
        ctx.write_points(&name, io::GENERATED, &points.concat())?;
    }
    ctx.write_config()
}

fn channel(ctx: &Context, seq: &GestureSequence, grouped: &[Vec<ScatteringPoint>], index: usize) -> Result<Vec<ChannelSnapshot>> {
    let mut rng = ctx.rng(Stage::Simulate, index);
    Ok(synthesize_sequence(grouped, seq, &ctx.cfg.velocity, &ctx.cfg.rf, &mut rng)?)
}

pub fn simulate(ctx: &Context, input: &Path, points_file: &str) -> Result<()> {
    for (i, name) in sequence_dirs(input)?.into_iter().enumerate() {
        let dir = input.join(&name);
        let seq = read_sequence(&dir)?;
        let path = dir.join(points_file);
        let grouped = points_by_snapshot(&read_points(&path)?, &seq, &path)?;
        let snaps = channel(ctx, &seq, &grouped, i)?;
        let rf = &ctx.cfg.rf;
        write_stamped(&ctx.path(&name, io::CIR), |w| write_cir_csv(w, &snaps))?;
        write_stamped(&ctx.path(&name, io::PDP), |w| write_pdp_csv(w, &snaps, rf))?;
        write_stamped(&ctx.path(&name, io::RMSDS), |w| write_rmsds_csv(w, &snaps, rf))?;
        let spec = stft_spectrogram(&snaps, &ctx.cfg.stft).with_context(|| format!("spectrogram of {name}"))?;
        write_stamped(&ctx.path(&name, io::SPECTROGRAM), |w| write_spectrogram_csv(w, &spec))?;
    }
    ctx.write_config()
}

#[derive(Debug, Clone, Serialize)]
pub struct SequenceMetrics {
    pub sequence: String,
    /// Mean count-histogram TV distance; absent without a rates file.
    pub count_tv_mean: Option<f64>,
    /// `[part][feature][quartile]` deltas as fractions of the reference IQR.
    pub feature_quartile_deltas: BTreeMap<String, Vec<Option<[f64; 3]>>>,
    pub spatial_error_m: BTreeMap<String, Option<f64>>,
    pub rmsds_error_ns: Option<ErrorQuantiles>,
    pub rmsds_within_tolerance: f64,
    pub ridge_error_hz: Option<ErrorQuantiles>,
    pub ridge_within_one_bin: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct MetricsReport {
    pub pipeline_version: String,
    pub sequences: Vec<SequenceMetrics>,
}

pub fn evaluate(ctx: &Context, generated: &Path, truth: &Path, generated_file: &str, truth_file: &str) -> Result<MetricsReport> {
    let cfg = &ctx.cfg;
    let names = sequence_dirs(truth)?;
    let gen_names = sequence_dirs(generated)?;
    ensure!(names == gen_names, "generated and truth corpora hold different sequences");
    let mut sequences = Vec::new();
    for (i, name) in names.into_iter().enumerate() {
        let seq = read_sequence(&truth.join(&name))?;
        let gen_path = generated.join(&name).join(generated_file);
        let truth_path = truth.join(&name).join(truth_file);
        let gen_pts = read_points(&gen_path)?;
        let truth_pts = read_points(&truth_path)?;
        let gen_grouped = points_by_snapshot(&gen_pts, &seq, &gen_path)?;
        let truth_grouped = points_by_snapshot(&truth_pts, &seq, &truth_path)?;
        let n = seq.len();

        let rates_path = generated.join(&name).join(io::RATES);
        let count_tv_mean = if rates_path.is_file() {
            let rates = read_rates(&rates_path)?;
            ensure!(rates.len() == n, "{}: {} rows for {n} snapshots", rates_path.display(), rates.len());
            let mut rng = ctx.rng(Stage::Evaluate, i);
            let truth_counts = counts_per_snapshot(&truth_pts, n);
            let report = count_distribution_report(&rates, &truth_counts, cfg.evaluate.count_window, cfg.evaluate.count_draws, &mut rng)?;
            write_stamped(&ctx.path(&name, io::COUNT_REPORT), |w| report.write_csv(w))?;
            Some(report.mean_tv())
        } else {
            None
        };

        let mut feature_quartile_deltas = BTreeMap::new();
        for part in BodyPart::ALL {
            let g = part_features(&gen_grouped, &seq, part, 0..n, &cfg.rf)?;
            let t = part_features(&truth_grouped, &seq, part, 0..n, &cfg.rf)?;
            let per_feature = (0..4)
                .map(|k| {
                    let gk: Vec<f64> = g.iter().map(|f| f[k]).collect();
                    let tk: Vec<f64> = t.iter().map(|f| f[k]).collect();
                    quartile_deltas(&gk, &tk).ok()
                })
                .collect();
            feature_quartile_deltas.insert(part.name().to_string(), per_feature);
        }

        let spatial = matched_spatial_error(&gen_pts, &truth_pts, cfg.evaluate.match_window)?;
        let spatial_error_m = BodyPart::ALL.iter().map(|p| (p.name().to_string(), spatial[p.code()])).collect();

        let gen_ch = channel(ctx, &seq, &gen_grouped, i)?;
        let truth_ch = channel(ctx, &seq, &truth_grouped, i)?;
        let rmsds_err: Vec<Option<f64>> =
            rmsds_errors(&gen_ch, &truth_ch, &cfg.rf)?.into_iter().map(|e| e.map(|v| v * 1e9)).collect();
        let present: Vec<f64> = rmsds_err.iter().flatten().copied().collect();
        let rmsds_error_ns = error_quantiles(&present).ok();
        let rmsds_within_tolerance = fraction_within(&rmsds_err, cfg.evaluate.rmsds_tolerance_ns);

        let (ridge_error_hz, ridge_within_one_bin) = match (stft_spectrogram(&gen_ch, &cfg.stft), stft_spectrogram(&truth_ch, &cfg.stft)) {
            (Ok(a), Ok(b)) => {
                let errs: Vec<f64> = a.ridge().iter().zip(b.ridge()).map(|(x, y)| (x - y).abs()).collect();
                let bin = b.bin_width();
                let within = errs.iter().filter(|e| **e <= bin * (1.0 + 1e-9)).count() as f64 / errs.len() as f64;
                (error_quantiles(&errs).ok(), Some(within))
            }
            _ => (None, None),
        };

        sequences.push(SequenceMetrics {
            sequence: name,
            count_tv_mean,
            feature_quartile_deltas,
            spatial_error_m,
            rmsds_error_ns,
            rmsds_within_tolerance,
            ridge_error_hz,
            ridge_within_one_bin,
        });
    }
    let report = MetricsReport { pipeline_version: PIPELINE_VERSION.to_string(), sequences };
    let mut text = serde_json::to_string_pretty(&report)?;
    text.push('\n');
    write_atomic(&ctx.out.join(io::METRICS), text.as_bytes())?;
    ctx.write_config()?;
    Ok(report)
}
