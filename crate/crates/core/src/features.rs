//! Canonical per-window feature vector (343 values), its extractors, the
//! `features.csv` table and per-subject z-scoring.
//!
//! Registry layout, in order:
//!
//! | group    | count | per-source values                                            |
//! |----------|-------|--------------------------------------------------------------|
//! | EEG      | 288   | 32 x (delta, theta, alpha, beta, gamma, mean, std, ssi, centroid) |
//! | GSR      | 5     | rise mean, rise std, min, max, centroid                      |
//! | cardiac  | 19    | mean/std of RR, HR, HRV, SD, SSD; pNN50; ULF/LF/HF/UHF; raw BVP mean/std/min/max |
//! | RESP     | 8     | mean, std, d1 mean, d1 std, ssi, min, max, centroid          |
//! | TEMP     | 3     | mean, std, ssi                                               |
//! | EOG+EMG  | 20    | 2 x (mean, std, ssi, peak freq, d1 mean, d1 std) + 2 x (mean, std, ssi, peak freq) |
//!
//! Degenerate inputs (flat spectra, too few beats, no startles, zero
//! variance) fall back to 0 so every value is finite.

use std::collections::HashMap;
use std::io;
use std::path::Path;
use std::sync::OnceLock;

use ndarray::{Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{ChannelMap, SubjectRecord, Window, N_RATINGS, N_SAMPLES, N_TRIALS, WINDOWS_PER_TRIAL};
use crate::dsp::{
    self, band_power, first_derivative, periodogram, peak_frequency_excl_dc, spectral_centroid,
    window_stats, StartleEvent, StartleParams, EEG_BANDS, HRV_BANDS,
};

pub const N_FEATURES: usize = 343;
pub const REGISTRY_VERSION: &str = "physaffect-features-343/1";

/// Beat detector settings for BVP.
pub const BEAT_MIN_DISTANCE_S: f64 = 0.35;
pub const BEAT_PROMINENCE_FRACTION: f64 = 0.3;
pub const PNN50_THRESHOLD_S: f64 = 0.05;
pub const HRV_RESAMPLE_HZ: f64 = 4.0;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("{0}")]
    Io(#[from] io::Error),
    #[error("{0}")]
    Csv(#[from] csv::Error),
    #[error("features table: {0}")]
    Schema(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FeatureGroup {
    Eeg,
    Gsr,
    Cardiac,
    Resp,
    Temp,
    EogEmg,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDescriptor {
    pub name: String,
    pub channel: usize,
    pub group: FeatureGroup,
}

const EEG_SUFFIXES: [&str; 9] = ["delta", "theta", "alpha", "beta", "gamma", "mean", "std", "ssi", "centroid"];
const GSR_NAMES: [&str; 5] = ["rise_mean", "rise_std", "min", "max", "centroid"];
const CARDIAC_NAMES: [&str; 19] = [
    "rr_mean", "rr_std", "hr_mean", "hr_std", "hrv_mean", "hrv_std", "sd_mean", "sd_std", "ssd_mean",
    "ssd_std", "pnn50", "hrv_ulf", "hrv_lf", "hrv_hf", "hrv_uhf", "raw_mean", "raw_std", "raw_min",
    "raw_max",
];
const RESP_NAMES: [&str; 8] = ["mean", "std", "d1_mean", "d1_std", "ssi", "min", "max", "centroid"];
const TEMP_NAMES: [&str; 3] = ["mean", "std", "ssi"];
const EOG_NAMES: [&str; 6] = ["mean", "std", "ssi", "peak_freq", "d1_mean", "d1_std"];
const EMG_NAMES: [&str; 4] = ["mean", "std", "ssi", "peak_freq"];

/// The ordered feature registry.
pub fn registry() -> &'static [FeatureDescriptor] {
    static REGISTRY: OnceLock<Vec<FeatureDescriptor>> = OnceLock::new();
    REGISTRY.get_or_init(|| {
        let map = ChannelMap::standard();
        let mut out = Vec::with_capacity(N_FEATURES);
        let mut push = |channel: usize, group: FeatureGroup, suffixes: &[&str]| {
            let prefix = map.sensor(channel).name();
            for s in suffixes {
                out.push(FeatureDescriptor {
                    name: format!("{prefix}_{s}"),
                    channel,
                    group,
                });
            }
        };
        for ch in map.eeg_channels() {
            push(ch, FeatureGroup::Eeg, &EEG_SUFFIXES);
        }
        push(ChannelMap::GSR, FeatureGroup::Gsr, &GSR_NAMES);
        push(ChannelMap::BVP, FeatureGroup::Cardiac, &CARDIAC_NAMES);
        push(ChannelMap::RESP, FeatureGroup::Resp, &RESP_NAMES);
        push(ChannelMap::TEMP, FeatureGroup::Temp, &TEMP_NAMES);
        push(ChannelMap::HEOG, FeatureGroup::EogEmg, &EOG_NAMES);
        push(ChannelMap::VEOG, FeatureGroup::EogEmg, &EOG_NAMES);
        push(ChannelMap::ZEMG, FeatureGroup::EogEmg, &EMG_NAMES);
        push(ChannelMap::TEMG, FeatureGroup::EogEmg, &EMG_NAMES);
        assert_eq!(out.len(), N_FEATURES);
        out
    })
}

pub fn feature_names() -> Vec<String> {
    registry().iter().map(|d| d.name.clone()).collect()
}

fn stats_or_zero(x: &[f64]) -> dsp::WindowStats {
    window_stats(x).unwrap_or(dsp::WindowStats {
        mean: 0.0,
        std: 0.0,
        min: 0.0,
        max: 0.0,
        ssi: 0.0,
    })
}

fn centroid_or_zero(x: &[f64], fs: f64) -> f64 {
    periodogram(x, fs)
        .ok()
        .and_then(|s| spectral_centroid(&s).ok())
        .unwrap_or(0.0)
}

fn derivative_stats(x: &[f64], fs: f64) -> (f64, f64) {
    match first_derivative(x, fs) {
        Ok(d) => {
            let s = stats_or_zero(&d);
            (s.mean, s.std)
        }
        Err(_) => (0.0, 0.0),
    }
}

/// Five band powers, mean, std, SSI and mean frequency of one EEG window.
pub fn extract_eeg(window: &[f64], fs: f64) -> [f64; 9] {
    let mut out = [0.0; 9];
    if let Ok(spec) = periodogram(window, fs) {
        for (slot, (_, band)) in out.iter_mut().zip(EEG_BANDS) {
            *slot = band_power(&spec, band).unwrap_or(0.0);
        }
        out[8] = spectral_centroid(&spec).unwrap_or(0.0);
    }
    let s = stats_or_zero(window);
    out[5] = s.mean;
    out[6] = s.std;
    out[7] = s.ssi;
    out
}

/// Rise-time statistics of the startles relevant to `window`.
///
/// Startles with onset inside the window are used when there are at least
/// two; otherwise every startle with onset before the window end is used.
pub fn rise_time_stats(startles: &[StartleEvent], window: Window, fs: f64) -> (f64, f64) {
    let (start, end) = window.time_span(fs);
    let inside: Vec<f64> = startles
        .iter()
        .filter(|e| e.onset_time >= start && e.onset_time < end)
        .map(|e| e.rise_time)
        .collect();
    let chosen = if inside.len() >= 2 {
        inside
    } else {
        startles
            .iter()
            .filter(|e| e.onset_time < end)
            .map(|e| e.rise_time)
            .collect()
    };
    if chosen.is_empty() {
        return (0.0, 0.0);
    }
    let mean = chosen.iter().sum::<f64>() / chosen.len() as f64;
    (mean, dsp::sample_std(&chosen))
}

/// GSR features of one window. `startles` come from a single detection run
/// over the whole trial.
pub fn extract_gsr(trial_gsr: &[f64], startles: &[StartleEvent], window: Window, fs: f64) -> [f64; 5] {
    let x = &trial_gsr[window.sample_range()];
    let (rise_mean, rise_std) = rise_time_stats(startles, window, fs);
    let s = stats_or_zero(x);
    [rise_mean, rise_std, s.min, s.max, centroid_or_zero(x, fs)]
}

/// Beat-derived series. Each interval-valued entry is stamped at the later
/// beat of its interval.
#[derive(Debug, Clone, PartialEq)]
pub struct CardiacSeries {
    pub beat_times: Vec<f64>,
    /// Seconds between consecutive beats.
    pub rr: Vec<f64>,
    /// Beats per minute, `60 / rr`.
    pub hr: Vec<f64>,
    /// Successive RR differences, seconds.
    pub hrv: Vec<f64>,
    /// Squared successive RR differences.
    pub sd: Vec<f64>,
    /// Running sum of `sd`.
    pub ssd: Vec<f64>,
}

impl CardiacSeries {
    /// `None` when fewer than three beats are available.
    pub fn from_beat_times(beat_times: &[f64]) -> Option<Self> {
        if beat_times.len() < 3 || beat_times.windows(2).any(|w| w[1] <= w[0]) {
            return None;
        }
        let rr: Vec<f64> = beat_times.windows(2).map(|w| w[1] - w[0]).collect();
        let hr = rr.iter().map(|r| 60.0 / r).collect();
        let hrv: Vec<f64> = rr.windows(2).map(|w| w[1] - w[0]).collect();
        let sd: Vec<f64> = hrv.iter().map(|d| d * d).collect();
        let ssd = sd
            .iter()
            .scan(0.0, |acc, v| {
                *acc += v;
                Some(*acc)
            })
            .collect();
        Some(CardiacSeries {
            beat_times: beat_times.to_vec(),
            rr,
            hr,
            hrv,
            sd,
            ssd,
        })
    }

    pub fn rr_times(&self) -> &[f64] {
        &self.beat_times[1..]
    }

    pub fn hrv_times(&self) -> &[f64] {
        &self.beat_times[2..]
    }

    /// Percentage of successive differences above 50 ms.
    pub fn pnn50(&self) -> f64 {
        pnn50(self.hrv.iter().copied())
    }
}

fn pnn50(diffs: impl Iterator<Item = f64>) -> f64 {
    let (mut count, mut over) = (0usize, 0usize);
    for d in diffs {
        count += 1;
        if d.abs() > PNN50_THRESHOLD_S {
            over += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        100.0 * over as f64 / count as f64
    }
}

/// A cardiac series plus its zero-order-hold tracks on the signal grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CardiacTracks {
    pub series: CardiacSeries,
    pub rr: Vec<f64>,
    pub hr: Vec<f64>,
    pub hrv: Vec<f64>,
    pub sd: Vec<f64>,
    pub ssd: Vec<f64>,
    /// ULF, LF, HF, UHF power of the trial's HRV track.
    pub hrv_bands: [f64; 4],
}

impl CardiacTracks {
    pub fn from_series(series: CardiacSeries, fs: f64, n_samples: usize) -> Self {
        let duration = n_samples as f64 / fs;
        let hold = |times: &[f64], values: &[f64]| {
            dsp::zoh_interpolate(times, values, fs, duration).expect("beat times are increasing")
        };
        let rr = hold(series.rr_times(), &series.rr);
        let hr = hold(series.rr_times(), &series.hr);
        let hrv = hold(series.hrv_times(), &series.hrv);
        let sd = hold(series.hrv_times(), &series.sd);
        let ssd = hold(series.hrv_times(), &series.ssd);
        let slow = dsp::zoh_interpolate(series.hrv_times(), &series.hrv, HRV_RESAMPLE_HZ, duration)
            .expect("beat times are increasing");
        CardiacTracks {
            hrv_bands: hrv_band_powers(&slow),
            series,
            rr,
            hr,
            hrv,
            sd,
            ssd,
        }
    }
}

/// Beat times from a BVP trace, refined to sub-sample precision with a
/// parabola through each peak and its two neighbours.
pub fn detect_beats(bvp: &[f64], fs: f64) -> Vec<f64> {
    let threshold = BEAT_PROMINENCE_FRACTION * dsp::sample_std(bvp);
    let peaks = dsp::detect_peaks(bvp, fs, BEAT_MIN_DISTANCE_S, threshold);
    peaks
        .indices
        .iter()
        .map(|&i| {
            let mut offset = 0.0;
            if i > 0 && i + 1 < bvp.len() {
                let (a, b, c) = (bvp[i - 1], bvp[i], bvp[i + 1]);
                let curvature = a - 2.0 * b + c;
                if curvature < 0.0 {
                    offset = (0.5 * (a - c) / curvature).clamp(-0.5, 0.5);
                }
            }
            (i as f64 + offset) / fs
        })
        .collect()
}

/// Detects beats in a trial's BVP and builds the tracks; `None` marks a
/// degenerate trial (fewer than three beats).
pub fn build_cardiac(trial_bvp: &[f64], fs: f64) -> Option<CardiacTracks> {
    let beats = detect_beats(trial_bvp, fs);
    CardiacSeries::from_beat_times(&beats).map(|s| CardiacTracks::from_series(s, fs, trial_bvp.len()))
}

/// Band powers of an HRV track sampled at 4 Hz over the whole trial.
pub fn hrv_band_powers(track_4hz: &[f64]) -> [f64; 4] {
    let mut out = [0.0; 4];
    if let Ok(spec) = periodogram(track_4hz, HRV_RESAMPLE_HZ) {
        for (slot, (_, band)) in out.iter_mut().zip(HRV_BANDS) {
            *slot = band_power(&spec, band).unwrap_or(0.0);
        }
    }
    out
}

/// The 19 cardiac features of one window; all zeros for a degenerate trial.
pub fn extract_cardiac(tracks: Option<&CardiacTracks>, bvp_window: &[f64], window: Window, fs: f64) -> [f64; 19] {
    let mut out = [0.0; 19];
    let Some(t) = tracks else {
        return out;
    };
    let range = window.sample_range();
    for (i, track) in [&t.rr, &t.hr, &t.hrv, &t.sd, &t.ssd].into_iter().enumerate() {
        let s = stats_or_zero(&track[range.clone()]);
        out[2 * i] = s.mean;
        out[2 * i + 1] = s.std;
    }
    let (start, end) = window.time_span(fs);
    out[10] = pnn50(
        t.series
            .hrv_times()
            .iter()
            .zip(&t.series.hrv)
            .filter(|(&time, _)| time >= start && time < end)
            .map(|(_, &d)| d),
    );
    out[11..15].copy_from_slice(&t.hrv_bands);
    let raw = stats_or_zero(bvp_window);
    out[15..19].copy_from_slice(&[raw.mean, raw.std, raw.min, raw.max]);
    out
}

pub fn extract_resp(window: &[f64], fs: f64) -> [f64; 8] {
    let s = stats_or_zero(window);
    let (d_mean, d_std) = derivative_stats(window, fs);
    [s.mean, s.std, d_mean, d_std, s.ssi, s.min, s.max, centroid_or_zero(window, fs)]
}

pub fn extract_temp(window: &[f64]) -> [f64; 3] {
    let s = stats_or_zero(window);
    [s.mean, s.std, s.ssi]
}

fn peak_freq_or_zero(window: &[f64], fs: f64) -> f64 {
    periodogram(window, fs).map(|s| peak_frequency_excl_dc(&s)).unwrap_or(0.0)
}

pub fn extract_eog(window: &[f64], fs: f64) -> [f64; 6] {
    let s = stats_or_zero(window);
    let (d_mean, d_std) = derivative_stats(window, fs);
    [s.mean, s.std, s.ssi, peak_freq_or_zero(window, fs), d_mean, d_std]
}

pub fn extract_emg(window: &[f64], fs: f64) -> [f64; 4] {
    let s = stats_or_zero(window);
    [s.mean, s.std, s.ssi, peak_freq_or_zero(window, fs)]
}

/// Row key of a feature vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RowKey {
    /// Index into [`FeatureMatrix::subjects`].
    pub subject: usize,
    pub trial: usize,
    pub window: usize,
}

/// Feature vectors with their keys and the ratings of the trial each window
/// belongs to.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub subjects: Vec<String>,
    pub keys: Vec<RowKey>,
    pub values: Array2<f64>,
    pub ratings: Vec<[f32; N_RATINGS]>,
}

impl FeatureMatrix {
    pub fn n_rows(&self) -> usize {
        self.keys.len()
    }

    pub fn n_features(&self) -> usize {
        self.values.ncols()
    }

    /// Rows belonging to subject index `s`, in table order.
    pub fn rows_of_subject(&self, s: usize) -> Vec<usize> {
        self.keys
            .iter()
            .enumerate()
            .filter(|(_, k)| k.subject == s)
            .map(|(i, _)| i)
            .collect()
    }

    /// Stacks matrices, renumbering subject indices.
    pub fn concat(parts: Vec<FeatureMatrix>) -> FeatureMatrix {
        let n_features = parts.first().map_or(N_FEATURES, |p| p.n_features());
        let mut subjects = Vec::new();
        let mut keys = Vec::new();
        let mut ratings = Vec::new();
        let mut flat = Vec::new();
        for p in parts {
            let base = subjects.len();
            subjects.extend(p.subjects);
            keys.extend(p.keys.iter().map(|k| RowKey {
                subject: k.subject + base,
                ..*k
            }));
            ratings.extend(p.ratings);
            flat.extend(p.values.iter().copied());
        }
        let values = Array2::from_shape_vec((keys.len(), n_features), flat).expect("row-major");
        FeatureMatrix {
            subjects,
            keys,
            values,
            ratings,
        }
    }
}

fn channel_f64(record: &SubjectRecord, trial: usize, ch: usize) -> Vec<f64> {
    record.channel(trial, ch).iter().map(|&v| f64::from(v)).collect()
}

/// All 63 feature rows of one trial.
pub fn extract_trial(record: &SubjectRecord, trial: usize, fs: f64) -> Vec<[f64; N_FEATURES]> {
    let map = ChannelMap::standard();
    let channels: Vec<Vec<f64>> = (0..map.len()).map(|ch| channel_f64(record, trial, ch)).collect();
    let startles = dsp::detect_startles(&channels[ChannelMap::GSR], fs, StartleParams::default());
    let cardiac = build_cardiac(&channels[ChannelMap::BVP], fs);
    let eeg: Vec<usize> = map.eeg_channels().collect();

    (0..WINDOWS_PER_TRIAL)
        .map(|window_idx| {
            let w = Window {
                trial_idx: trial,
                window_idx,
            };
            let r = w.sample_range();
            let mut row = [0.0; N_FEATURES];
            let mut at = 0;
            let mut put = |vals: &[f64]| {
                row[at..at + vals.len()].copy_from_slice(vals);
                at += vals.len();
            };
            for &ch in &eeg {
                put(&extract_eeg(&channels[ch][r.clone()], fs));
            }
            put(&extract_gsr(&channels[ChannelMap::GSR], &startles, w, fs));
            put(&extract_cardiac(cardiac.as_ref(), &channels[ChannelMap::BVP][r.clone()], w, fs));
            put(&extract_resp(&channels[ChannelMap::RESP][r.clone()], fs));
            put(&extract_temp(&channels[ChannelMap::TEMP][r.clone()]));
            put(&extract_eog(&channels[ChannelMap::HEOG][r.clone()], fs));
            put(&extract_eog(&channels[ChannelMap::VEOG][r.clone()], fs));
            put(&extract_emg(&channels[ChannelMap::ZEMG][r.clone()], fs));
            put(&extract_emg(&channels[ChannelMap::TEMG][r.clone()], fs));
            debug_assert_eq!(at, N_FEATURES);
            row
        })
        .collect()
}

/// 2520 x 343 feature matrix of one subject, trial-major.
pub fn extract_all(record: &SubjectRecord) -> FeatureMatrix {
    let fs = crate::corpus::FS;
    let trials: Vec<Vec<[f64; N_FEATURES]>> = (0..N_TRIALS)
        .into_par_iter()
        .map(|t| extract_trial(record, t, fs))
        .collect();
    let mut keys = Vec::with_capacity(N_TRIALS * WINDOWS_PER_TRIAL);
    let mut ratings = Vec::with_capacity(keys.capacity());
    let mut flat = Vec::with_capacity(keys.capacity() * N_FEATURES);
    for (trial, rows) in trials.into_iter().enumerate() {
        for (window, row) in rows.into_iter().enumerate() {
            keys.push(RowKey {
                subject: 0,
                trial,
                window,
            });
            ratings.push(record.ratings[trial]);
            flat.extend_from_slice(&row);
        }
    }
    debug_assert_eq!(N_SAMPLES / crate::corpus::WINDOW_LEN, WINDOWS_PER_TRIAL);
    FeatureMatrix {
        subjects: vec![record.subject_id.clone()],
        values: Array2::from_shape_vec((keys.len(), N_FEATURES), flat).expect("row-major"),
        keys,
        ratings,
    }
}

/// Extracts every subject (in parallel) and stacks the results in input order.
pub fn extract_dataset(records: &[SubjectRecord]) -> FeatureMatrix {
    FeatureMatrix::concat(records.par_iter().map(extract_all).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectStats {
    pub subject: String,
    pub mean: Vec<f64>,
    /// Sample std; 0 marks a constant column.
    pub std: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub subjects: Vec<SubjectStats>,
}

/// Z-scores every column separately within each subject. Constant columns
/// map to 0.
pub fn normalize_per_subject(m: &FeatureMatrix) -> (FeatureMatrix, NormalizationStats) {
    let mut out = m.clone();
    let mut stats = Vec::with_capacity(m.subjects.len());
    for (s, name) in m.subjects.iter().enumerate() {
        let rows = m.rows_of_subject(s);
        let sub = m.values.select(Axis(0), &rows);
        let n = rows.len() as f64;
        let mut means = Vec::with_capacity(m.n_features());
        let mut stds = Vec::with_capacity(m.n_features());
        for (j, col) in sub.axis_iter(Axis(1)).enumerate() {
            let constant = col.iter().all(|&v| v == col[0]);
            let mean = col.sum() / n;
            let std = if constant || rows.len() < 2 {
                0.0
            } else {
                (col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
            };
            for &r in &rows {
                out.values[[r, j]] = if std > 0.0 { (m.values[[r, j]] - mean) / std } else { 0.0 };
            }
            means.push(if constant { col[0] } else { mean });
            stds.push(std);
        }
        stats.push(SubjectStats {
            subject: name.clone(),
            mean: means,
            std: stds,
        });
    }
    (out, NormalizationStats { subjects: stats })
}

const RATING_COLUMNS: [&str; 4] = ["valence", "arousal", "dominance", "liking"];

/// `subject,trial,window,<registry names>,valence,arousal,dominance,liking`
pub fn csv_header() -> Vec<String> {
    let mut h = vec!["subject".to_string(), "trial".into(), "window".into()];
    h.extend(feature_names());
    h.extend(RATING_COLUMNS.iter().map(|s| s.to_string()));
    h
}

pub fn write_features_csv<W: io::Write>(out: W, m: &FeatureMatrix) -> Result<(), FeatureError> {
    if m.n_features() != N_FEATURES {
        return Err(FeatureError::Schema(format!("{} columns, expected {N_FEATURES}", m.n_features())));
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(csv_header())?;
    let mut record = Vec::with_capacity(N_FEATURES + 7);
    for (i, key) in m.keys.iter().enumerate() {
        record.clear();
        record.push(m.subjects[key.subject].clone());
        record.push(key.trial.to_string());
        record.push(key.window.to_string());
        record.extend(m.values.row(i).iter().map(|v| v.to_string()));
        record.extend(m.ratings[i].iter().map(|v| v.to_string()));
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_features_csv(path: &Path) -> Result<FeatureMatrix, FeatureError> {
    let mut reader = csv::Reader::from_path(path)?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header != csv_header() {
        return Err(FeatureError::Schema(
            "header does not match the feature registry".into(),
        ));
    }
    let mut subjects = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut keys = Vec::new();
    let mut ratings = Vec::new();
    let mut flat = Vec::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec?;
        let bad = |what: &str| FeatureError::Schema(format!("row {}: bad {what}", line + 2));
        let subject = rec.get(0).ok_or_else(|| bad("subject"))?.to_string();
        let s = *index.entry(subject.clone()).or_insert_with(|| {
            subjects.push(subject);
            subjects.len() - 1
        });
        let trial: usize = rec.get(1).and_then(|v| v.parse().ok()).ok_or_else(|| bad("trial"))?;
        let window: usize = rec.get(2).and_then(|v| v.parse().ok()).ok_or_else(|| bad("window"))?;
        keys.push(RowKey {
            subject: s,
            trial,
            window,
        });
        for j in 0..N_FEATURES {
            let v: f64 = rec
                .get(3 + j)
                .and_then(|v| v.parse().ok())
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| bad(&header[3 + j]))?;
            flat.push(v);
        }
        let mut r = [0f32; N_RATINGS];
        for (k, slot) in r.iter_mut().enumerate() {
            *slot = rec
                .get(3 + N_FEATURES + k)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| bad(RATING_COLUMNS[k]))?;
        }
        ratings.push(r);
    }
    Ok(FeatureMatrix {
        subjects,
        values: Array2::from_shape_vec((keys.len(), N_FEATURES), flat).expect("row-major"),
        keys,
        ratings,
    })
}
