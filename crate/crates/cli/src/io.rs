//! Corpus layout and stamped, atomic file output.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use gesture_channel::PIPELINE_VERSION;

pub const KEYPOINTS: &str = "keypoints.csv";
pub const MPC: &str = "mpc.csv";
pub const TRUTH_COUNTS: &str = "truth_counts.csv";
pub const TRUTH_POINTS: &str = "truth_points.csv";
pub const POINTS: &str = "points.csv";
pub const LABELED: &str = "labeled.csv";
pub const GENERATED: &str = "generated.csv";
pub const RATES: &str = "rates.csv";
pub const CIR: &str = "cir.csv";
pub const PDP: &str = "pdp.csv";
pub const RMSDS: &str = "rmsds.csv";
pub const SPECTROGRAM: &str = "spectrogram.csv";
pub const COUNT_REPORT: &str = "count_report.csv";
pub const METRICS: &str = "metrics.json";
pub const TRAIN_REPORT: &str = "train_report.csv";
pub const POISSON_CHECKPOINT: &str = "poisson.json";
pub const EFFECTIVE_CONFIG: &str = "config.toml";

/// Header line carried by every text output that admits comments.
pub fn stamp() -> String {
    format!("# pipeline_version={PIPELINE_VERSION}\n")
}

/// Write through a temporary sibling and rename into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let name = path.file_name().context("output path has no file name")?;
    let tmp = dir.join(format!(".{}.tmp", name.to_string_lossy()));
    fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

/// Stamped text output produced by a writer callback.
pub fn write_stamped<F>(path: &Path, body: F) -> Result<()>
where
    F: FnOnce(&mut Vec<u8>) -> gesture_channel::Result<()>,
{
    let mut buf = stamp().into_bytes();
    body(&mut buf).with_context(|| format!("formatting {}", path.display()))?;
    write_atomic(path, &buf)
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

/// Sequence directories of a corpus, sorted by name.
pub fn sequence_dirs(corpus: &Path) -> Result<Vec<String>> {
    let mut names = Vec::new();
    for entry in fs::read_dir(corpus).with_context(|| format!("reading corpus {}", corpus.display()))? {
        let entry = entry?;
        if entry.file_type()?.is_dir() {
            names.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    names.sort();
    if names.is_empty() {
        bail!("corpus {} has no sequence directories", corpus.display());
    }
    Ok(names)
}

pub fn require(path: PathBuf) -> Result<PathBuf> {
    if !path.is_file() {
        bail!("missing input {}", path.display());
    }
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_leaves_no_temp() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a/b.csv");
        write_stamped(&p, |w| {
            w.extend_from_slice(b"x\n1\n");
            Ok(())
        })
        .unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("# pipeline_version="));
        assert!(text.ends_with("x\n1\n"));
        assert_eq!(fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }

    #[test]
    fn corpus_needs_sequences() {
        let dir = tempfile::tempdir().unwrap();
        assert!(sequence_dirs(dir.path()).is_err());
        fs::create_dir(dir.path().join("seq01")).unwrap();
        fs::create_dir(dir.path().join("seq00")).unwrap();
        fs::write(dir.path().join("config.toml"), "").unwrap();
        assert_eq!(sequence_dirs(dir.path()).unwrap(), vec!["seq00", "seq01"]);
    }
}
