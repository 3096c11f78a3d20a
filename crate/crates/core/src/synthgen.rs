//! Synthetic recordings with known ground truth.
//!
//! A [`SynthRecipe`] gives one waveform per channel; [`generate`] renders it
//! for every (subject, trial), optionally adds white noise and scales one
//! channel by the trial's planted class (see [`LabelPlan`]). Output is an
//! ordinary corpus, so the whole pipeline can run on it.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{self, ChannelMap, CorpusError, SubjectRecord, FS, N_CHANNELS, N_RATINGS, N_SAMPLES, N_TRIALS};
use crate::labels::{LabelMode, RATING_THRESHOLD};
use crate::seed::stream_rng;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("recipe has {0} channels, expected {N_CHANNELS}")]
    ChannelCount(usize),
    #[error("channel {channel}: {msg}")]
    InvalidRecipe { channel: usize, msg: String },
    #[error("label plan: {0}")]
    InvalidPlan(String),
    #[error("class margin {margin} is below 4 noise sigmas ({required})")]
    Margin { margin: f64, required: f64 },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tone {
    pub freq: f64,
    pub amp: f64,
    #[serde(default)]
    pub phase: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Startle {
    /// Seconds from trial start.
    pub onset: f64,
    pub rise: f64,
    pub amplitude: f64,
    /// Exponential recovery time constant after the peak, seconds.
    #[serde(default = "default_decay")]
    pub decay: f64,
}

fn default_decay() -> f64 {
    4.0
}

fn default_width() -> f64 {
    0.25
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ChannelRecipe {
    ToneMix {
        tones: Vec<Tone>,
    },
    /// Raised-cosine pulses centred on each beat time.
    BvpSchedule {
        beats: Vec<f64>,
        #[serde(default = "default_width")]
        width: f64,
    },
    /// Linear rise to `amplitude`, then exponential recovery.
    StartleTrace {
        baseline: f64,
        startles: Vec<Startle>,
    },
    ConstantLevel {
        value: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthRecipe {
    /// One entry per channel, in standard channel order.
    pub channels: Vec<ChannelRecipe>,
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default)]
    pub seed: u64,
}

/// Beat times `first, first + rr[0], first + rr[0] + rr[1], ...` cycling
/// through `rr` until `duration`.
pub fn beats_from_rr(first: f64, rr: &[f64], duration: f64) -> Vec<f64> {
    let mut beats = Vec::new();
    let mut t = first;
    let mut k = 0;
    while t < duration && !rr.is_empty() {
        beats.push(t);
        t += rr[k % rr.len()];
        k += 1;
    }
    beats
}

/// Unit-height raised-cosine bumps of full width `width` seconds centred on
/// each beat, sampled at `fs`.
pub fn pulse_train(beats: &[f64], width: f64, fs: f64, n: usize) -> Vec<f64> {
    let mut x = vec![0.0; n];
    let half = width / 2.0;
    for &b in beats {
        let lo = ((b - half) * fs).floor().max(0.0) as usize;
        let hi = (((b + half) * fs).ceil().max(0.0) as usize).min(n.saturating_sub(1));
        for (k, v) in x.iter_mut().enumerate().take(hi + 1).skip(lo) {
            let d = k as f64 / fs - b;
            if d.abs() < half {
                *v += 0.5 * (1.0 + (2.0 * PI * d / width).cos());
            }
        }
    }
    x
}

fn startle_trace(baseline: f64, startles: &[Startle], fs: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|k| {
            let t = k as f64 / fs;
            baseline
                + startles
                    .iter()
                    .map(|s| {
                        let dt = t - s.onset;
                        if dt < 0.0 {
                            0.0
                        } else if dt < s.rise {
                            s.amplitude * dt / s.rise
                        } else {
                            s.amplitude * (-(dt - s.rise) / s.decay).exp()
                        }
                    })
                    .sum::<f64>()
        })
        .collect()
}

impl ChannelRecipe {
    pub fn render(&self, fs: f64, n: usize) -> Vec<f64> {
        match self {
            ChannelRecipe::ToneMix { tones } => (0..n)
                .map(|k| {
                    let t = k as f64 / fs;
                    tones
                        .iter()
                        .map(|tn| tn.amp * (2.0 * PI * tn.freq * t + tn.phase).sin())
                        .sum()
                })
                .collect(),
            ChannelRecipe::BvpSchedule { beats, width } => pulse_train(beats, *width, fs, n),
            ChannelRecipe::StartleTrace { baseline, startles } => startle_trace(*baseline, startles, fs, n),
            ChannelRecipe::ConstantLevel { value } => vec![*value; n],
        }
    }

    fn validate(&self, channel: usize, fs: f64, duration: f64) -> Result<(), SynthError> {
        let bad = |msg: String| Err(SynthError::InvalidRecipe { channel, msg });
        match self {
            ChannelRecipe::ToneMix { tones } => {
                for t in tones {
                    if !(0.0..=fs / 2.0).contains(&t.freq) || !t.amp.is_finite() || !t.phase.is_finite() {
                        return bad(format!("tone {} Hz must lie in [0, {}]", t.freq, fs / 2.0));
                    }
                }
            }
            ChannelRecipe::BvpSchedule { beats, width } => {
                if !(*width > 0.0) {
                    return bad("pulse width must be positive".into());
                }
                if beats.windows(2).any(|w| !(w[1] > w[0])) {
                    return bad("beat times must be strictly increasing".into());
                }
                if beats.iter().any(|b| !(0.0..duration).contains(b)) {
                    return bad("beat time outside the trial".into());
                }
            }
            ChannelRecipe::StartleTrace { baseline, startles } => {
                if !baseline.is_finite() {
                    return bad("baseline must be finite".into());
                }
                for s in startles {
                    if !(0.0..duration).contains(&s.onset) || !(s.rise > 0.0) || !(s.decay > 0.0) {
                        return bad(format!("startle at {} s is invalid", s.onset));
                    }
                }
            }
            ChannelRecipe::ConstantLevel { value } => {
                if !value.is_finite() {
                    return bad("level must be finite".into());
                }
            }
        }
        Ok(())
    }

    /// Amplitude scale used for the class-margin check.
    fn reference_level(&self) -> Option<f64> {
        match self {
            ChannelRecipe::ToneMix { tones } => tones.iter().map(|t| t.amp.abs()).reduce(f64::min),
            ChannelRecipe::ConstantLevel { value } => Some(value.abs()),
            _ => None,
        }
    }
}

impl SynthRecipe {
    /// A plausible all-channel recipe: alpha/beta tones on EEG, 75 bpm BVP,
    /// three skin-conductance startles, slow breathing and steady temperature.
    pub fn baseline(seed: u64) -> Self {
        let duration = N_SAMPLES as f64 / FS;
        let mut channels = Vec::with_capacity(N_CHANNELS);
        for ch in 0..32 {
            channels.push(ChannelRecipe::ToneMix {
                tones: vec![
                    Tone { freq: 10.0, amp: 1.0 + 0.05 * ch as f64, phase: 0.0 },
                    Tone { freq: 21.0, amp: 0.5, phase: 0.3 * ch as f64 },
                    Tone { freq: 5.0, amp: 0.3, phase: 0.0 },
                ],
            });
        }
        let tone = |freq: f64, amp: f64| ChannelRecipe::ToneMix {
            tones: vec![Tone { freq, amp, phase: 0.0 }],
        };
        channels.push(tone(2.0, 1.0)); // hEOG
        channels.push(tone(3.0, 1.0)); // vEOG
        channels.push(tone(40.0, 0.5)); // zEMG
        channels.push(tone(45.0, 0.5)); // tEMG
        channels.push(ChannelRecipe::StartleTrace {
            baseline: 2.0,
            startles: [(10.0, 1.0), (30.0, 1.5), (50.0, 2.0)]
                .iter()
                .map(|&(onset, rise)| Startle { onset, rise, amplitude: 1.0, decay: default_decay() })
                .collect(),
        });
        channels.push(tone(0.25, 1.0)); // RESP
        channels.push(ChannelRecipe::BvpSchedule {
            beats: beats_from_rr(0.4, &[0.8], duration),
            width: default_width(),
        });
        channels.push(ChannelRecipe::ConstantLevel { value: 33.0 });
        SynthRecipe { channels, noise_sigma: 0.0, seed }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.channels.len() != N_CHANNELS {
            return Err(SynthError::ChannelCount(self.channels.len()));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(SynthError::InvalidRecipe {
                channel: 0,
                msg: "noise sigma must be >= 0".into(),
            });
        }
        let duration = N_SAMPLES as f64 / FS;
        for (ch, c) in self.channels.iter().enumerate() {
            c.validate(ch, FS, duration)?;
        }
        Ok(())
    }
}

/// Encodes a class per trial in the gain of one channel:
/// `gain(c) = base + step * (c - 1)`. Ratings are drawn inside the class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelPlan {
    pub mode: LabelMode,
    pub channel: usize,
    pub base: f64,
    pub step: f64,
    /// Planted class (1-based) of each of the 40 trials.
    pub trial_classes: Vec<u32>,
    #[serde(default)]
    pub seed: u64,
}

impl LabelPlan {
    /// Classes cycle 1, 2, ..., K, 1, 2, ... over the trials.
    pub fn cycling(mode: LabelMode, channel: usize, base: f64, step: f64, seed: u64) -> Self {
        let k = mode.n_classes();
        LabelPlan {
            mode,
            channel,
            base,
            step,
            trial_classes: (0..N_TRIALS as u32).map(|t| t % k + 1).collect(),
            seed,
        }
    }

    pub fn gain(&self, class: u32) -> f64 {
        self.base + self.step * (class as f64 - 1.0)
    }

    /// Checks the plan against `recipe` and returns the class margin.
    pub fn check(&self, recipe: &SynthRecipe) -> Result<f64, SynthError> {
        if self.trial_classes.len() != N_TRIALS {
            return Err(SynthError::InvalidPlan(format!(
                "{} trial classes, expected {N_TRIALS}",
                self.trial_classes.len()
            )));
        }
        let k = self.mode.n_classes();
        if self.trial_classes.iter().any(|&c| c == 0 || c > k) {
            return Err(SynthError::InvalidPlan(format!("classes must be in 1..={k}")));
        }
        if self.step == 0.0 || !self.step.is_finite() || !self.base.is_finite() {
            return Err(SynthError::InvalidPlan("step must be finite and non-zero".into()));
        }
        let reference = recipe
            .channels
            .get(self.channel)
            .and_then(ChannelRecipe::reference_level)
            .ok_or_else(|| SynthError::InvalidPlan("planted channel must be a tone mix or constant level".into()))?;
        let margin = self.step.abs() * reference;
        let required = 4.0 * recipe.noise_sigma;
        if margin < required || margin == 0.0 {
            return Err(SynthError::Margin { margin, required });
        }
        Ok(margin)
    }
}

/// One rating on the Low or High side of the threshold.
fn rating_on_side<R: Rng>(rng: &mut R, high: bool) -> f32 {
    let u: f64 = rng.random();
    let r = if high {
        RATING_THRESHOLD as f64 + 0.1 + u * (8.9 - RATING_THRESHOLD as f64)
    } else {
        1.0 + u * (RATING_THRESHOLD as f64 - 1.1)
    };
    ((r * 100.0).round() / 100.0) as f32
}

/// Ratings whose `plan.mode` class equals the planted class of each trial.
/// Axes the mode ignores are drawn anywhere in [1, 9].
pub fn plant_labels(plan: &LabelPlan) -> Vec<[f32; N_RATINGS]> {
    let mut rng = stream_rng(plan.seed, u64::MAX);
    plan.trial_classes
        .iter()
        .map(|&class| {
            let c = class - 1;
            let bits: [Option<bool>; 3] = match plan.mode {
                LabelMode::Valence => [Some(c == 1), None, None],
                LabelMode::Arousal => [None, Some(c == 1), None],
                LabelMode::Quad => [Some(c & 2 != 0), Some(c & 1 != 0), None],
                LabelMode::Oct => [Some(c & 4 != 0), Some(c & 2 != 0), Some(c & 1 != 0)],
            };
            let mut row = [0.0f32; N_RATINGS];
            for (axis, bit) in bits.iter().enumerate() {
                row[axis] = match bit {
                    Some(high) => rating_on_side(&mut rng, *high),
                    None => {
                        let high = rng.random_bool(0.5);
                        rating_on_side(&mut rng, high)
                    }
                };
            }
            let high = rng.random_bool(0.5);
            row[3] = rating_on_side(&mut rng, high);
            row
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub recipe: SynthRecipe,
    pub plan: Option<LabelPlan>,
    pub subjects: Vec<String>,
    pub ratings: Vec<Vec<[f32; N_RATINGS]>>,
}

/// Everything needed to regenerate a dataset; the `synth` command's input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_subjects: usize,
    pub recipe: SynthRecipe,
    #[serde(default)]
    pub plan: Option<LabelPlan>,
}

fn render_subject(recipe: &SynthRecipe, plan: Option<&LabelPlan>, subject: usize, ratings: Vec<[f32; N_RATINGS]>) -> Result<SubjectRecord, SynthError> {
    let base: Vec<Vec<f64>> = recipe.channels.iter().map(|c| c.render(FS, N_SAMPLES)).collect();
    let noise = (recipe.noise_sigma > 0.0).then(|| Normal::new(0.0, recipe.noise_sigma).expect("sigma > 0"));
    let mut signals = Vec::with_capacity(N_TRIALS * N_CHANNELS * N_SAMPLES);
    for trial in 0..N_TRIALS {
        let mut rng = stream_rng(recipe.seed, (subject * N_TRIALS + trial) as u64);
        for (ch, wave) in base.iter().enumerate() {
            let gain = match plan {
                Some(p) if p.channel == ch => p.gain(p.trial_classes[trial]),
                _ => 1.0,
            };
            for &v in wave {
                let e = noise.map_or(0.0, |d| d.sample(&mut rng));
                signals.push((gain * v + e) as f32);
            }
        }
    }
    Ok(SubjectRecord::new(format!("s{:02}", subject + 1), signals, ratings)?)
}

/// Renders `n_subjects` subjects. Subjects differ only in their noise draws;
/// with a plan every subject gets the same planted classes and ratings.
pub fn generate(
    recipe: &SynthRecipe,
    n_subjects: usize,
    plan: Option<&LabelPlan>,
) -> Result<(Vec<SubjectRecord>, GroundTruth), SynthError> {
    recipe.validate()?;
    if let Some(p) = plan {
        p.check(recipe)?;
    }
    let ratings = match plan {
        Some(p) => plant_labels(p),
        None => vec![[5.0, 5.0, 5.0, 5.0]; N_TRIALS],
    };
    let records: Vec<SubjectRecord> = (0..n_subjects)
        .into_par_iter()
        .map(|s| render_subject(recipe, plan, s, ratings.clone()))
        .collect::<Result<_, _>>()?;
    let truth = GroundTruth {
        recipe: recipe.clone(),
        plan: plan.cloned(),
        subjects: records.iter().map(|r| r.subject_id.clone()).collect(),
        ratings: records.iter().map(|r| r.ratings.clone()).collect(),
    };
    Ok((records, truth))
}

/// Writes the corpus plus `ground_truth.json` into `dir`; returns the
/// manifest path.
pub fn write_synthetic(dir: &Path, records: &[SubjectRecord], truth: &GroundTruth) -> Result<PathBuf, SynthError> {
    let manifest = corpus::write_dataset(dir, records)?;
    let path = dir.join("ground_truth.json");
    fs::write(&path, serde_json::to_string_pretty(truth)?).map_err(|source| SynthError::Io { path, source })?;
    Ok(manifest)
}

/// The baseline recipe with white noise of `noise_sigma` on every channel.
pub fn planted_recipe(noise_sigma: f64, seed: u64) -> SynthRecipe {
    let mut r = SynthRecipe::baseline(seed);
    r.noise_sigma = noise_sigma;
    r
}

/// Index of the temperature channel, the default planted channel.
pub const DEFAULT_PLANT_CHANNEL: usize = ChannelMap::TEMP;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{band_power, detect_startles, periodogram, StartleParams, EEG_BANDS};
    use crate::features::build_cardiac;

    #[test]
    fn pulse_is_unit_raised_cosine() {
        let x = pulse_train(&[1.0], 0.25, 128.0, 256);
        assert_eq!(x[128], 1.0);
        assert!((x[128 + 8] - 0.5).abs() < 1e-12);
        assert_eq!(x[128 + 16], 0.0);
        assert_eq!(x.iter().cloned().fold(f64::MIN, f64::max), 1.0);
    }

    #[test]
    fn constant_rr_gives_75_bpm() {
        let beats = beats_from_rr(0.4, &[0.8], 63.0);
        let bvp = pulse_train(&beats, 0.25, FS, N_SAMPLES);
        let tracks = build_cardiac(&bvp, FS).unwrap();
        for &hr in &tracks.hr {
            assert!((hr - 75.0).abs() <= 0.2, "{hr}");
        }
    }

    #[test]
    fn tone_gives_alpha_power() {
        let ch = ChannelRecipe::ToneMix { tones: vec![Tone { freq: 10.0, amp: 2.0, phase: 0.0 }] };
        let x = ch.render(FS, N_SAMPLES);
        for w in x.chunks(128) {
            let s = periodogram(w, FS).unwrap();
            assert!((band_power(&s, EEG_BANDS[2].1).unwrap() - 2.0).abs() < 1e-6);
        }
    }

    #[test]
    fn startles_recovered() {
        let startles: Vec<Startle> = [(15.0, 1.0), (40.0, 1.5)]
            .iter()
            .map(|&(onset, rise)| Startle { onset, rise, amplitude: 1.0, decay: 4.0 })
            .collect();
        let x = ChannelRecipe::StartleTrace { baseline: 3.0, startles: startles.clone() }.render(FS, N_SAMPLES);
        let ev = detect_startles(&x, FS, StartleParams::default());
        assert_eq!(ev.len(), 2);
        for (e, s) in ev.iter().zip(&startles) {
            assert!((e.rise_time - s.rise).abs() <= 2.0 / FS, "{e:?}");
            assert!((e.onset_time - s.onset).abs() <= 2.0 / FS, "{e:?}");
        }
    }

    #[test]
    fn planted_ratings_match_classes() {
        for mode in [LabelMode::Valence, LabelMode::Arousal, LabelMode::Quad, LabelMode::Oct] {
            let plan = LabelPlan::cycling(mode, DEFAULT_PLANT_CHANNEL, 1.0, 1.0, 5);
            let ratings = plant_labels(&plan);
            for (r, &c) in ratings.iter().zip(&plan.trial_classes) {
                assert_eq!(mode.class_of(r).unwrap(), c);
            }
            assert_eq!(ratings, plant_labels(&plan));
        }
    }

    #[test]
    fn margin_rule() {
        let recipe = planted_recipe(1.0, 0);
        // temperature level 33, so step 0.1 gives margin 3.3 < 4
        let thin = LabelPlan::cycling(LabelMode::Valence, DEFAULT_PLANT_CHANNEL, 1.0, 0.1, 0);
        assert!(matches!(thin.check(&recipe), Err(SynthError::Margin { .. })));
        let wide = LabelPlan::cycling(LabelMode::Valence, DEFAULT_PLANT_CHANNEL, 1.0, 0.2, 0);
        assert!((wide.check(&recipe).unwrap() - 6.6).abs() < 1e-12);
        let bvp = LabelPlan::cycling(LabelMode::Valence, ChannelMap::BVP, 1.0, 1.0, 0);
        assert!(bvp.check(&recipe).is_err());
    }

    #[test]
    fn recipe_validation() {
        let mut r = SynthRecipe::baseline(0);
        r.channels.pop();
        assert!(matches!(r.validate(), Err(SynthError::ChannelCount(39))));
        let mut r = SynthRecipe::baseline(0);
        r.channels[0] = ChannelRecipe::ToneMix { tones: vec![Tone { freq: 70.0, amp: 1.0, phase: 0.0 }] };
        assert!(r.validate().is_err());
        let mut r = SynthRecipe::baseline(0);
        r.channels[38] = ChannelRecipe::BvpSchedule { beats: vec![1.0, 1.0], width: 0.25 };
        assert!(r.validate().is_err());
    }

    #[test]
    fn recipe_json_shape() {
        let c: ChannelRecipe = serde_json::from_str(r#"{"kind":"tone_mix","tones":[{"freq":10,"amp":2}]}"#).unwrap();
        assert_eq!(c, ChannelRecipe::ToneMix { tones: vec![Tone { freq: 10.0, amp: 2.0, phase: 0.0 }] });
        let c: ChannelRecipe = serde_json::from_str(r#"{"kind":"constant_level","value":1.5}"#).unwrap();
        assert_eq!(c, ChannelRecipe::ConstantLevel { value: 1.5 });
    }
}
