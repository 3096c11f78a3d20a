//! Portable dataset container: a JSON manifest, one raw little-endian `f32`
//! tensor per subject laid out `[trial][channel][sample]`, and a ratings CSV.

use std::fs;
use std::io::Write;
use std::ops::Range;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const FS: f64 = 128.0;
pub const N_TRIALS: usize = 40;
pub const N_CHANNELS: usize = 40;
/// 63 s at 128 Hz; the preprocessed release keeps a 3 s pre-trial segment.
pub const N_SAMPLES: usize = 8064;
pub const WINDOW_LEN: usize = 128;
pub const WINDOWS_PER_TRIAL: usize = N_SAMPLES / WINDOW_LEN;
pub const N_RATINGS: usize = 4;
pub const SUBJECT_BYTES: usize = N_TRIALS * N_CHANNELS * N_SAMPLES * 4;

pub const LABELS_HEADER: [&str; 5] = ["trial", "valence", "arousal", "dominance", "liking"];

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: invalid manifest: {msg}")]
    Manifest { path: PathBuf, msg: String },
    #[error("{path}: size mismatch: expected {expected} bytes, found {actual}")]
    SizeMismatch {
        path: PathBuf,
        expected: usize,
        actual: usize,
    },
    #[error("subject {subject}: non-finite sample at trial {trial}, channel {channel}, sample {sample}")]
    NonFinite {
        subject: String,
        trial: usize,
        channel: usize,
        sample: usize,
    },
    #[error("subject {subject}: rating {value} for trial {trial} (column {column}) outside [1, 9]")]
    RatingOutOfRange {
        subject: String,
        trial: usize,
        column: usize,
        value: f32,
    },
    #[error("{path}: {msg}")]
    Labels { path: PathBuf, msg: String },
    #[error("invalid record: {0}")]
    Shape(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Physical sensor behind a channel index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Sensor {
    /// EEG electrode, 1-based as in the channel name.
    Eeg(u8),
    HEog,
    VEog,
    ZEmg,
    TEmg,
    Gsr,
    Resp,
    Bvp,
    Temp,
}

impl Sensor {
    pub fn name(&self) -> String {
        match self {
            Sensor::Eeg(i) => format!("EEG{i:02}"),
            Sensor::HEog => "hEOG".into(),
            Sensor::VEog => "vEOG".into(),
            Sensor::ZEmg => "zEMG".into(),
            Sensor::TEmg => "tEMG".into(),
            Sensor::Gsr => "GSR".into(),
            Sensor::Resp => "RESP".into(),
            Sensor::Bvp => "BVP".into(),
            Sensor::Temp => "TEMP".into(),
        }
    }
}

/// Channel order of the preprocessed release: 32 EEG, then the 8 peripherals.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelMap {
    sensors: Vec<Sensor>,
}

impl ChannelMap {
    pub const HEOG: usize = 32;
    pub const VEOG: usize = 33;
    pub const ZEMG: usize = 34;
    pub const TEMG: usize = 35;
    pub const GSR: usize = 36;
    pub const RESP: usize = 37;
    pub const BVP: usize = 38;
    pub const TEMP: usize = 39;

    pub fn standard() -> Self {
        let mut sensors: Vec<Sensor> = (1..=32).map(Sensor::Eeg).collect();
        sensors.extend([
            Sensor::HEog,
            Sensor::VEog,
            Sensor::ZEmg,
            Sensor::TEmg,
            Sensor::Gsr,
            Sensor::Resp,
            Sensor::Bvp,
            Sensor::Temp,
        ]);
        ChannelMap { sensors }
    }

    pub fn len(&self) -> usize {
        self.sensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sensors.is_empty()
    }

    pub fn sensor(&self, index: usize) -> Sensor {
        self.sensors[index]
    }

    pub fn names(&self) -> Vec<String> {
        self.sensors.iter().map(Sensor::name).collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.sensors.iter().position(|s| s.name() == name)
    }

    pub fn eeg_channels(&self) -> impl Iterator<Item = usize> + '_ {
        self.sensors
            .iter()
            .enumerate()
            .filter(|(_, s)| matches!(s, Sensor::Eeg(_)))
            .map(|(i, _)| i)
    }
}

impl Default for ChannelMap {
    fn default() -> Self {
        Self::standard()
    }
}

/// A 1-s, non-overlapping analysis window inside a trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Window {
    pub trial_idx: usize,
    pub window_idx: usize,
}

impl Window {
    pub fn sample_range(&self) -> Range<usize> {
        let start = self.window_idx * WINDOW_LEN;
        start..start + WINDOW_LEN
    }

    /// Start and end of the window in seconds from trial start.
    pub fn time_span(&self, fs: f64) -> (f64, f64) {
        let r = self.sample_range();
        (r.start as f64 / fs, r.end as f64 / fs)
    }
}

/// Borrowed view of one trial: all channels, each `N_SAMPLES` long.
#[derive(Debug, Clone, Copy)]
pub struct TrialView<'a> {
    pub trial_idx: usize,
    data: &'a [f32],
}

impl<'a> TrialView<'a> {
    pub fn channel(&self, ch: usize) -> &'a [f32] {
        &self.data[ch * N_SAMPLES..(ch + 1) * N_SAMPLES]
    }

    pub fn n_samples(&self) -> usize {
        N_SAMPLES
    }

    pub fn windows(&self) -> Vec<Window> {
        windows_of(self)
    }
}

/// The 63 windows tiling a trial, in time order.
pub fn windows_of(trial: &TrialView<'_>) -> Vec<Window> {
    (0..trial.n_samples() / WINDOW_LEN)
        .map(|window_idx| Window {
            trial_idx: trial.trial_idx,
            window_idx,
        })
        .collect()
}

/// One subject's recordings and self-assessments.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectRecord {
    pub subject_id: String,
    signals: Vec<f32>,
    /// Per trial: valence, arousal, dominance, liking.
    pub ratings: Vec<[f32; N_RATINGS]>,
}

impl SubjectRecord {
    /// Validates shape, finiteness and rating range.
    pub fn new(
        subject_id: impl Into<String>,
        signals: Vec<f32>,
        ratings: Vec<[f32; N_RATINGS]>,
    ) -> Result<Self, CorpusError> {
        let subject_id = subject_id.into();
        if signals.len() != N_TRIALS * N_CHANNELS * N_SAMPLES {
            return Err(CorpusError::Shape(format!(
                "subject {subject_id}: {} samples, expected {}",
                signals.len(),
                N_TRIALS * N_CHANNELS * N_SAMPLES
            )));
        }
        if ratings.len() != N_TRIALS {
            return Err(CorpusError::Shape(format!(
                "subject {subject_id}: {} rating rows, expected {N_TRIALS}",
                ratings.len()
            )));
        }
        if let Some(pos) = signals.iter().position(|v| !v.is_finite()) {
            return Err(CorpusError::NonFinite {
                subject: subject_id,
                trial: pos / (N_CHANNELS * N_SAMPLES),
                channel: (pos / N_SAMPLES) % N_CHANNELS,
                sample: pos % N_SAMPLES,
            });
        }
        for (trial, row) in ratings.iter().enumerate() {
            for (column, &value) in row.iter().enumerate() {
                if !(value.is_finite() && (1.0..=9.0).contains(&value)) {
                    return Err(CorpusError::RatingOutOfRange {
                        subject: subject_id,
                        trial,
                        column,
                        value,
                    });
                }
            }
        }
        Ok(SubjectRecord {
            subject_id,
            signals,
            ratings,
        })
    }

    pub fn signals(&self) -> &[f32] {
        &self.signals
    }

    pub fn trial(&self, trial_idx: usize) -> TrialView<'_> {
        let len = N_CHANNELS * N_SAMPLES;
        TrialView {
            trial_idx,
            data: &self.signals[trial_idx * len..(trial_idx + 1) * len],
        }
    }

    pub fn channel(&self, trial_idx: usize, ch: usize) -> &[f32] {
        self.trial(trial_idx).channel(ch)
    }

    /// (trial, window) keys in trial-major order; 2520 per subject.
    pub fn window_keys(&self) -> impl Iterator<Item = Window> + '_ {
        (0..N_TRIALS).flat_map(move |t| windows_of(&self.trial(t)))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ManifestSubject {
    pub id: String,
    pub signals: String,
    pub labels: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Manifest {
    pub fs: f64,
    pub trials: usize,
    pub channels: usize,
    pub samples: usize,
    pub channel_names: Vec<String>,
    pub subjects: Vec<ManifestSubject>,
}

impl Manifest {
    pub fn for_subjects<'a>(ids: impl IntoIterator<Item = &'a str>) -> Self {
        Manifest {
            fs: FS,
            trials: N_TRIALS,
            channels: N_CHANNELS,
            samples: N_SAMPLES,
            channel_names: ChannelMap::standard().names(),
            subjects: ids
                .into_iter()
                .map(|id| ManifestSubject {
                    id: id.to_string(),
                    signals: format!("{id}.f32"),
                    labels: format!("{id}_labels.csv"),
                })
                .collect(),
        }
    }

    pub fn read(path: &Path) -> Result<Self, CorpusError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let manifest: Manifest =
            serde_json::from_str(&text).map_err(|e| CorpusError::Manifest {
                path: path.to_path_buf(),
                msg: e.to_string(),
            })?;
        manifest.validate(path)?;
        Ok(manifest)
    }

    fn validate(&self, path: &Path) -> Result<(), CorpusError> {
        let bad = |msg: String| CorpusError::Manifest {
            path: path.to_path_buf(),
            msg,
        };
        if self.fs != FS {
            return Err(bad(format!("fs {} != {FS}", self.fs)));
        }
        if (self.trials, self.channels, self.samples) != (N_TRIALS, N_CHANNELS, N_SAMPLES) {
            return Err(bad(format!(
                "shape {}x{}x{} != {N_TRIALS}x{N_CHANNELS}x{N_SAMPLES}",
                self.trials, self.channels, self.samples
            )));
        }
        if self.channel_names != ChannelMap::standard().names() {
            return Err(bad("channel_names do not follow the standard order".into()));
        }
        let mut ids: Vec<&str> = self.subjects.iter().map(|s| s.id.as_str()).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(bad("duplicate subject id".into()));
        }
        Ok(())
    }
}

/// Path to the manifest given either the manifest itself or its directory.
pub fn resolve_manifest(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join("manifest.json")
    } else {
        path.to_path_buf()
    }
}

/// Loads every subject listed in the manifest, in manifest order.
pub fn load_dataset(manifest_path: &Path) -> Result<Vec<SubjectRecord>, CorpusError> {
    let manifest_path = resolve_manifest(manifest_path);
    let manifest = Manifest::read(&manifest_path)?;
    let root = manifest_path.parent().unwrap_or(Path::new("."));
    manifest
        .subjects
        .iter()
        .map(|s| {
            let signals = read_signals(&root.join(&s.signals))?;
            let ratings = read_labels(&root.join(&s.labels))?;
            SubjectRecord::new(s.id.clone(), signals, ratings)
        })
        .collect()
}

/// Loads only the ratings of every subject (no signal I/O).
pub fn load_ratings(manifest_path: &Path) -> Result<Vec<(String, Vec<[f32; N_RATINGS]>)>, CorpusError> {
    let manifest_path = resolve_manifest(manifest_path);
    let manifest = Manifest::read(&manifest_path)?;
    let root = manifest_path.parent().unwrap_or(Path::new("."));
    manifest
        .subjects
        .iter()
        .map(|s| {
            let ratings = read_labels(&root.join(&s.labels))?;
            for (trial, row) in ratings.iter().enumerate() {
                for (column, &value) in row.iter().enumerate() {
                    if !(1.0..=9.0).contains(&value) {
                        return Err(CorpusError::RatingOutOfRange {
                            subject: s.id.clone(),
                            trial,
                            column,
                            value,
                        });
                    }
                }
            }
            Ok((s.id.clone(), ratings))
        })
        .collect()
}

pub fn read_signals(path: &Path) -> Result<Vec<f32>, CorpusError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    if bytes.len() != SUBJECT_BYTES {
        return Err(CorpusError::SizeMismatch {
            path: path.to_path_buf(),
            expected: SUBJECT_BYTES,
            actual: bytes.len(),
        });
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

pub fn read_labels(path: &Path) -> Result<Vec<[f32; N_RATINGS]>, CorpusError> {
    let bad = |msg: String| CorpusError::Labels {
        path: path.to_path_buf(),
        msg,
    };
    let mut reader = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let header = reader.headers().map_err(|e| bad(e.to_string()))?.clone();
    if header.iter().map(str::trim).ne(LABELS_HEADER) {
        return Err(bad(format!("header must be {}", LABELS_HEADER.join(","))));
    }
    let mut rows: Vec<Option<[f32; N_RATINGS]>> = vec![None; N_TRIALS];
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| bad(e.to_string()))?;
        let parse = |i: usize| -> Result<f32, CorpusError> {
            record
                .get(i)
                .map(str::trim)
                .and_then(|s| s.parse::<f32>().ok())
                .ok_or_else(|| bad(format!("row {}: column {i} is not a number", line + 2)))
        };
        let trial = record
            .get(0)
            .and_then(|s| s.trim().parse::<usize>().ok())
            .filter(|t| (1..=N_TRIALS).contains(t))
            .ok_or_else(|| bad(format!("row {}: trial must be 1..={N_TRIALS}", line + 2)))?;
        if rows[trial - 1].is_some() {
            return Err(bad(format!("trial {trial} listed twice")));
        }
        rows[trial - 1] = Some([parse(1)?, parse(2)?, parse(3)?, parse(4)?]);
    }
    rows.into_iter()
        .enumerate()
        .map(|(t, r)| r.ok_or_else(|| bad(format!("trial {} missing", t + 1))))
        .collect()
}

pub fn write_signals(path: &Path, signals: &[f32]) -> Result<(), CorpusError> {
    let mut bytes = Vec::with_capacity(signals.len() * 4);
    for v in signals {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(io_err(path))
}

pub fn write_labels(path: &Path, ratings: &[[f32; N_RATINGS]]) -> Result<(), CorpusError> {
    let mut out = String::new();
    out.push_str(&LABELS_HEADER.join(","));
    out.push('\n');
    for (t, r) in ratings.iter().enumerate() {
        out.push_str(&format!("{},{},{},{},{}\n", t + 1, r[0], r[1], r[2], r[3]));
    }
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    f.write_all(out.as_bytes()).map_err(io_err(path))
}

/// Writes `records` as a corpus rooted at `dir` (created if missing).
pub fn write_dataset(dir: &Path, records: &[SubjectRecord]) -> Result<PathBuf, CorpusError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let manifest = Manifest::for_subjects(records.iter().map(|r| r.subject_id.as_str()));
    for (rec, entry) in records.iter().zip(&manifest.subjects) {
        write_signals(&dir.join(&entry.signals), rec.signals())?;
        write_labels(&dir.join(&entry.labels), &rec.ratings)?;
    }
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text).map_err(io_err(&path))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat_record(id: &str) -> SubjectRecord {
        let signals: Vec<f32> = (0..N_TRIALS * N_CHANNELS * N_SAMPLES)
            .map(|i| (i % 977) as f32 * 0.25 - 7.0)
            .collect();
        SubjectRecord::new(id, signals, vec![[5.0, 4.5, 1.0, 9.0]; N_TRIALS]).unwrap()
    }

    #[test]
    fn channel_map_is_bijective() {
        let map = ChannelMap::standard();
        assert_eq!(map.len(), 40);
        assert_eq!(map.eeg_channels().count(), 32);
        for (i, name) in map.names().iter().enumerate() {
            assert_eq!(map.index_of(name), Some(i));
        }
        assert_eq!(map.sensor(ChannelMap::GSR), Sensor::Gsr);
        assert_eq!(map.sensor(ChannelMap::BVP), Sensor::Bvp);
        assert_eq!(map.sensor(ChannelMap::TEMP), Sensor::Temp);
        assert_eq!(map.names()[0], "EEG01");
    }

    #[test]
    fn window_edges() {
        let rec = flat_record("s01");
        let ws = rec.trial(3).windows();
        assert_eq!(ws.len(), 63);
        assert_eq!(ws[0].sample_range(), 0..128);
        assert_eq!(ws[62].sample_range(), 7936..8064);
        assert!(ws.iter().all(|w| w.trial_idx == 3));
        assert_eq!(rec.window_keys().count(), 2520);
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let rec = flat_record("s01");
        let manifest = write_dataset(dir.path(), std::slice::from_ref(&rec)).unwrap();
        let loaded = load_dataset(&manifest).unwrap();
        assert_eq!(loaded.len(), 1);
        assert_eq!(loaded[0].subject_id, "s01");
        assert!(loaded[0]
            .signals()
            .iter()
            .zip(rec.signals())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
        assert_eq!(loaded[0].ratings, rec.ratings);
        // directory form resolves to the same manifest
        assert_eq!(load_dataset(dir.path()).unwrap().len(), 1);
    }

    #[test]
    fn truncated_file_reports_sizes() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = write_dataset(dir.path(), &[flat_record("s01")]).unwrap();
        let sig = dir.path().join("s01.f32");
        let bytes = fs::read(&sig).unwrap();
        fs::write(&sig, &bytes[..bytes.len() - 4]).unwrap();
        match load_dataset(&manifest) {
            Err(CorpusError::SizeMismatch {
                expected, actual, ..
            }) => {
                assert_eq!(expected, 51_609_600);
                assert_eq!(actual, 51_609_596);
            }
            other => panic!("expected size mismatch, got {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_samples_and_ratings() {
        let mut signals = vec![0.0f32; N_TRIALS * N_CHANNELS * N_SAMPLES];
        signals[N_CHANNELS * N_SAMPLES + 5 * N_SAMPLES + 9] = f32::NAN;
        match SubjectRecord::new("x", signals, vec![[5.0; 4]; N_TRIALS]) {
            Err(CorpusError::NonFinite {
                trial,
                channel,
                sample,
                ..
            }) => assert_eq!((trial, channel, sample), (1, 5, 9)),
            other => panic!("{other:?}"),
        }
        let signals = vec![0.0f32; N_TRIALS * N_CHANNELS * N_SAMPLES];
        let mut ratings = vec![[5.0; 4]; N_TRIALS];
        ratings[7][2] = 9.5;
        assert!(matches!(
            SubjectRecord::new("x", signals, ratings),
            Err(CorpusError::RatingOutOfRange { trial: 7, column: 2, .. })
        ));
    }

    #[test]
    fn labels_need_every_trial_once() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("l.csv");
        let mut text = String::from("trial,valence,arousal,dominance,liking\n");
        for t in 1..=39 {
            text.push_str(&format!("{t},5,5,5,5\n"));
        }
        fs::write(&path, &text).unwrap();
        assert!(matches!(read_labels(&path), Err(CorpusError::Labels { .. })));
        text.push_str("40,5,5,5,5\n");
        fs::write(&path, &text).unwrap();
        assert_eq!(read_labels(&path).unwrap().len(), 40);
    }

    #[test]
    fn manifest_shape_is_checked() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = Manifest::for_subjects(["s01"]);
        m.samples = 7680;
        let path = dir.path().join("manifest.json");
        fs::write(&path, serde_json::to_string(&m).unwrap()).unwrap();
        assert!(matches!(load_dataset(&path), Err(CorpusError::Manifest { .. })));
    }
}
