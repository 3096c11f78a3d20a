//! Numeric signal primitives shared by the feature extractors.

use std::cell::RefCell;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum DspError {
    #[error("input contains a non-finite value at index {0}")]
    NonFinite(usize),
    #[error("need at least {needed} samples, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("spectrum has no power")]
    DegenerateSpectrum,
    #[error("invalid band ({lo}, {hi}] for fs/2 = {nyquist}")]
    InvalidBand { lo: f64, hi: f64, nyquist: f64 },
    #[error("event times must be strictly increasing and match the value count")]
    InvalidEvents,
    #[error("no events to interpolate")]
    NoEvents,
}

fn check_finite(x: &[f64]) -> Result<(), DspError> {
    match x.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(DspError::NonFinite(i)),
        None => Ok(()),
    }
}

/// One-sided power spectrum normalized so the bins sum to the mean square
/// of the input.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    bins: Vec<f64>,
    n: usize,
    fs: f64,
}

impl Spectrum {
    /// Wraps precomputed one-sided bins of an `n`-point transform.
    pub fn from_bins(bins: Vec<f64>, n: usize, fs: f64) -> Self {
        debug_assert_eq!(bins.len(), n / 2 + 1);
        Spectrum { bins, n, fs }
    }

    pub fn bins(&self) -> &[f64] {
        &self.bins
    }

    pub fn fs(&self) -> f64 {
        self.fs
    }

    pub fn delta_f(&self) -> f64 {
        self.fs / self.n as f64
    }

    pub fn freq(&self, k: usize) -> f64 {
        k as f64 * self.fs / self.n as f64
    }

    pub fn total_power(&self) -> f64 {
        self.bins.iter().sum()
    }
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn forward_plan(n: usize) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft_forward(n))
}

/// Rectangular-window, single-segment periodogram.
pub fn periodogram(x: &[f64], fs: f64) -> Result<Spectrum, DspError> {
    let n = x.len();
    if n < 2 {
        return Err(DspError::TooShort { needed: 2, got: n });
    }
    check_finite(x)?;
    let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
    forward_plan(n).process(&mut buf);
    let scale = 1.0 / (n as f64 * n as f64);
    let half = n / 2;
    let bins = (0..=half)
        .map(|k| {
            let p = buf[k].norm_sqr() * scale;
            // bins other than DC and (for even n) Nyquist carry their mirror image
            if k == 0 || (n % 2 == 0 && k == half) {
                p
            } else {
                2.0 * p
            }
        })
        .collect();
    Ok(Spectrum { bins, n, fs })
}

/// Frequency interval `lo < f <= hi`, optionally also admitting the DC bin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Band {
    pub lo: f64,
    pub hi: f64,
    pub includes_dc: bool,
}

impl Band {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Band {
            lo,
            hi,
            includes_dc: false,
        }
    }

    /// `[0, hi]`, DC included.
    pub const fn from_dc(hi: f64) -> Self {
        Band {
            lo: 0.0,
            hi,
            includes_dc: true,
        }
    }

    pub fn contains(&self, f: f64) -> bool {
        (self.lo < f && f <= self.hi) || (self.includes_dc && f == 0.0)
    }
}

/// EEG bands as half-integer edges so every integer-Hz bin lands in exactly
/// one band: delta 1-3, theta 4-7, alpha 8-13, beta 14-30, gamma 31-50 Hz.
pub const EEG_BANDS: [(&str, Band); 5] = [
    ("delta", Band::new(0.5, 3.5)),
    ("theta", Band::new(3.5, 7.5)),
    ("alpha", Band::new(7.5, 13.5)),
    ("beta", Band::new(13.5, 30.5)),
    ("gamma", Band::new(30.5, 50.5)),
];

/// HRV bands: ULF `f <= 0.04`, LF `(0.04, 0.15]`, HF `(0.15, 0.4]`, UHF above.
pub const HRV_BANDS: [(&str, Band); 4] = [
    ("ulf", Band::from_dc(0.04)),
    ("lf", Band::new(0.04, 0.15)),
    ("hf", Band::new(0.15, 0.4)),
    ("uhf", Band::new(0.4, 2.0)),
];

/// Sum of the bins whose center frequency falls in `band`.
pub fn band_power(s: &Spectrum, band: Band) -> Result<f64, DspError> {
    let nyquist = s.fs / 2.0;
    if !(band.lo >= 0.0 && band.lo < band.hi && band.hi <= nyquist) {
        return Err(DspError::InvalidBand {
            lo: band.lo,
            hi: band.hi,
            nyquist,
        });
    }
    Ok(s
        .bins
        .iter()
        .enumerate()
        .filter(|&(k, _)| band.contains(s.freq(k)))
        .map(|(_, p)| p)
        .sum())
}

/// Power-weighted mean frequency over all bins, DC included.
pub fn spectral_centroid(s: &Spectrum) -> Result<f64, DspError> {
    let (mut num, mut den) = (0.0, 0.0);
    for (k, &p) in s.bins.iter().enumerate() {
        num += s.freq(k) * p;
        den += p;
    }
    if den > 0.0 {
        Ok(num / den)
    } else {
        Err(DspError::DegenerateSpectrum)
    }
}

/// Frequency of the strongest non-DC bin; ties go to the lowest frequency,
/// so an all-zero spectrum yields `delta_f`.
pub fn peak_frequency_excl_dc(s: &Spectrum) -> f64 {
    let mut best = 1;
    for k in 2..s.bins.len() {
        if s.bins[k] > s.bins[best] {
            best = k;
        }
    }
    s.freq(best)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowStats {
    pub mean: f64,
    /// Sample standard deviation (divisor `n - 1`, zero for a single sample).
    pub std: f64,
    pub min: f64,
    pub max: f64,
    /// Simple square integral, `sum x^2`.
    pub ssi: f64,
}

pub fn window_stats(x: &[f64]) -> Result<WindowStats, DspError> {
    if x.is_empty() {
        return Err(DspError::TooShort { needed: 1, got: 0 });
    }
    check_finite(x)?;
    let n = x.len() as f64;
    let mean = shifted_mean(x);
    let (mut min, mut max, mut ssi, mut ss) = (f64::INFINITY, f64::NEG_INFINITY, 0.0, 0.0);
    for &v in x {
        min = min.min(v);
        max = max.max(v);
        ssi += v * v;
        ss += (v - mean) * (v - mean);
    }
    let std = if x.len() > 1 {
        (ss / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok(WindowStats {
        mean,
        std,
        min,
        max,
        ssi,
    })
}

/// Mean computed relative to the first value, so constant input is exact.
fn shifted_mean(x: &[f64]) -> f64 {
    x[0] + x.iter().map(|v| v - x[0]).sum::<f64>() / x.len() as f64
}

/// Sample standard deviation, 0 for fewer than two values.
pub fn sample_std(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    let n = x.len() as f64;
    let mean = shifted_mean(x);
    (x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Forward difference scaled to units per second.
pub fn first_derivative(x: &[f64], fs: f64) -> Result<Vec<f64>, DspError> {
    if x.len() < 2 {
        return Err(DspError::TooShort {
            needed: 2,
            got: x.len(),
        });
    }
    Ok(x.windows(2).map(|w| (w[1] - w[0]) * fs).collect())
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PeakList {
    pub indices: Vec<usize>,
    pub times: Vec<f64>,
}

impl PeakList {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Local maxima; a flat top reports its middle sample.
fn local_maxima(x: &[f64]) -> Vec<usize> {
    let mut peaks = Vec::new();
    let n = x.len();
    let mut i = 1;
    while i + 1 < n {
        if x[i - 1] < x[i] {
            let mut ahead = i + 1;
            while ahead + 1 < n && x[ahead] == x[i] {
                ahead += 1;
            }
            if x[ahead] < x[i] {
                peaks.push((i + ahead - 1) / 2);
                i = ahead;
                continue;
            }
        }
        i += 1;
    }
    peaks
}

/// Height of a peak above the higher of the two minima reached before the
/// signal climbs above the peak on either side.
fn prominence(x: &[f64], peak: usize) -> f64 {
    let h = x[peak];
    let mut left_min = h;
    for &v in x[..peak].iter().rev() {
        if v > h {
            break;
        }
        left_min = left_min.min(v);
    }
    let mut right_min = h;
    for &v in &x[peak + 1..] {
        if v > h {
            break;
        }
        right_min = right_min.min(v);
    }
    h - left_min.max(right_min)
}

/// Prominence-filtered local maxima with greedy refractory suppression:
/// peaks are visited tallest first and any later candidate closer than
/// `min_distance` seconds to a kept peak is dropped.
pub fn detect_peaks(x: &[f64], fs: f64, min_distance: f64, min_prominence: f64) -> PeakList {
    if x.len() < 3 {
        return PeakList::default();
    }
    let candidates: Vec<usize> = local_maxima(x)
        .into_iter()
        .filter(|&p| prominence(x, p) >= min_prominence)
        .collect();
    let distance = (min_distance * fs - 1e-9).ceil().max(1.0) as usize;

    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| x[candidates[b]].total_cmp(&x[candidates[a]]).then(a.cmp(&b)));
    let mut keep = vec![true; candidates.len()];
    for &i in &order {
        if !keep[i] {
            continue;
        }
        let p = candidates[i];
        for j in (0..i).rev() {
            if p - candidates[j] >= distance {
                break;
            }
            keep[j] = false;
        }
        for j in i + 1..candidates.len() {
            if candidates[j] - p >= distance {
                break;
            }
            keep[j] = false;
        }
    }
    let indices: Vec<usize> = candidates
        .into_iter()
        .zip(keep)
        .filter_map(|(p, k)| k.then_some(p))
        .collect();
    let times = indices.iter().map(|&i| i as f64 / fs).collect();
    PeakList { indices, times }
}

/// Zero-order hold of event values onto a uniform grid of
/// `round(duration * fs)` samples. Samples before the first event take the
/// first value.
pub fn zoh_interpolate(
    event_times: &[f64],
    values: &[f64],
    fs: f64,
    duration: f64,
) -> Result<Vec<f64>, DspError> {
    if event_times.is_empty() {
        return Err(DspError::NoEvents);
    }
    if event_times.len() != values.len() || event_times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(DspError::InvalidEvents);
    }
    let len = (duration * fs).round() as usize;
    let mut out = Vec::with_capacity(len);
    let mut current = 0;
    for n in 0..len {
        let t = n as f64 / fs;
        while current + 1 < event_times.len() && event_times[current + 1] <= t + 1e-9 {
            current += 1;
        }
        out.push(values[current]);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StartleEvent {
    pub onset_time: f64,
    pub peak_time: f64,
    pub rise_time: f64,
    pub amplitude: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StartleParams {
    /// Centered moving-average length, seconds.
    pub smooth_window: f64,
    /// Detection threshold in standard deviations of the smoothed derivative.
    pub k_sigma: f64,
}

impl Default for StartleParams {
    fn default() -> Self {
        StartleParams {
            smooth_window: 0.5,
            k_sigma: 2.0,
        }
    }
}

fn moving_average(x: &[f64], width: usize) -> Vec<f64> {
    let half = width / 2;
    let mut prefix = Vec::with_capacity(x.len() + 1);
    prefix.push(0.0);
    for &v in x {
        prefix.push(prefix.last().unwrap() + v);
    }
    (0..x.len())
        .map(|n| {
            let lo = n.saturating_sub(half);
            let hi = (n + half).min(x.len() - 1);
            (prefix[hi + 1] - prefix[lo]) / (hi + 1 - lo) as f64
        })
        .collect()
}

/// Detects abrupt rises in a skin-conductance trace.
///
/// Detection runs on the derivative of the moving-average-smoothed trace: an
/// event starts where it crosses `k_sigma` standard deviations upward and
/// lasts until the smoothed trace reaches its next local maximum. Onset and
/// peak are then located on the raw trace inside that span (latest minimum,
/// earliest maximum) so the smoother does not bias the rise time.
pub fn detect_startles(gsr: &[f64], fs: f64, params: StartleParams) -> Vec<StartleEvent> {
    let n = gsr.len();
    if n < 3 {
        return Vec::new();
    }
    let width = ((params.smooth_window * fs).round() as usize).max(1);
    let half = width / 2;
    let smooth = moving_average(gsr, width);
    let deriv: Vec<f64> = smooth.windows(2).map(|w| (w[1] - w[0]) * fs).collect();
    let sigma = sample_std(&deriv);
    if !(sigma > 0.0) {
        return Vec::new();
    }
    let threshold = params.k_sigma * sigma;

    let mut events = Vec::new();
    let mut prev_peak = 0;
    let mut i = 1;
    while i < deriv.len() {
        if !(deriv[i] > threshold && deriv[i - 1] <= threshold) {
            i += 1;
            continue;
        }
        let crossing = i;
        let smooth_peak = (crossing..deriv.len())
            .find(|&m| deriv[m] <= 0.0)
            .unwrap_or(n - 1);

        let on_lo = crossing.saturating_sub(width).max(prev_peak);
        let on_hi = (crossing + half).min(smooth_peak);
        let onset = (on_lo..=on_hi)
            .rev()
            .min_by(|&a, &b| gsr[a].total_cmp(&gsr[b]))
            .unwrap_or(crossing);
        let pk_hi = (smooth_peak + half).min(n - 1);
        let peak = (onset..=pk_hi)
            .max_by(|&a, &b| gsr[a].total_cmp(&gsr[b]).then(b.cmp(&a)))
            .unwrap_or(smooth_peak);

        let rise_time = (peak as f64 - onset as f64) / fs;
        let amplitude = gsr[peak] - gsr[onset];
        if rise_time > 0.0 && amplitude > 0.0 {
            events.push(StartleEvent {
                onset_time: onset as f64 / fs,
                peak_time: peak as f64 / fs,
                rise_time,
                amplitude,
            });
            prev_peak = peak;
        }
        i = smooth_peak.max(crossing) + 1;
    }
    events
}
