use ndarray::Array2;
use physaffect::corpus::{windows_of, Window, N_SAMPLES, WINDOWS_PER_TRIAL};
use physaffect::dsp::{band_power, detect_peaks, periodogram, spectral_centroid, zoh_interpolate, Band, Spectrum};
use physaffect::eval::{kfold_folds, majority, pearson, summarize};
use physaffect::features::{
    extract_eeg, extract_emg, extract_eog, extract_resp, extract_temp, normalize_per_subject, CardiacSeries,
    FeatureMatrix, RowKey,
};
use physaffect::forest::{self, oob_report, stratified_sampsize, ForestParams};
use physaffect::labels::{binarize, oct_class, quad_class};
use proptest::prelude::*;

fn finite_vec(len: std::ops::Range<usize>) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1e3..1e3f64, len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn windows_tile_the_trial(trial in 0usize..40) {
        let mut seen = vec![0u8; N_SAMPLES];
        for w in (0..WINDOWS_PER_TRIAL).map(|window_idx| Window { trial_idx: trial, window_idx }) {
            for i in w.sample_range() {
                seen[i] += 1;
            }
        }
        prop_assert!(seen.iter().all(|&c| c == 1));
    }

    #[test]
    fn parseval(x in finite_vec(1..400)) {
        let ms = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
        let p = periodogram(&x, 128.0).unwrap();
        prop_assert!((p.total_power() - ms).abs() <= 1e-9 * ms.max(f64::MIN_POSITIVE));
    }

    #[test]
    fn bands_add_up(x in finite_vec(128..129), a in 1.0..30.0f64, b in 31.0..63.0f64) {
        let p = periodogram(&x, 128.0).unwrap();
        let parts = [Band::new(0.0, a), Band::new(a, b), Band::new(b, 64.0)];
        let sum: f64 = p.bins()[0] + parts.iter().map(|&band| band_power(&p, band).unwrap()).sum::<f64>();
        prop_assert!((sum - p.total_power()).abs() <= 1e-9 * p.total_power().max(1e-300));
    }

    #[test]
    fn centroid_within_support(bins in prop::collection::vec(prop_oneof![Just(0.0), 0.0..5.0f64], 65)) {
        prop_assume!(bins.iter().any(|&b| b > 0.0));
        let lo = bins.iter().position(|&b| b > 0.0).unwrap() as f64;
        let hi = bins.iter().rposition(|&b| b > 0.0).unwrap() as f64;
        let c = spectral_centroid(&Spectrum::from_bins(bins, 128, 128.0)).unwrap();
        prop_assert!(c >= lo - 1e-12 && c <= hi + 1e-12);
    }

    #[test]
    fn bin_aligned_tone_does_not_leak(k in 1usize..64, amp in 0.1..10.0f64) {
        let x: Vec<f64> = (0..128).map(|n| amp * (2.0 * std::f64::consts::PI * k as f64 * n as f64 / 128.0).sin()).collect();
        let p = periodogram(&x, 128.0).unwrap();
        let leak: f64 = p.bins().iter().enumerate().filter(|(i, _)| *i != k).map(|(_, v)| v).sum();
        prop_assert!(leak < 1e-10 * p.bins()[k]);
    }

    #[test]
    fn peaks_scale_invariant(x in finite_vec(20..300), c in 0.01..100.0f64, prom in 0.0..200.0f64) {
        let a = detect_peaks(&x, 128.0, 0.05, prom);
        let scaled: Vec<f64> = x.iter().map(|v| v * c).collect();
        let b = detect_peaks(&scaled, 128.0, 0.05, prom * c);
        prop_assert_eq!(a.indices, b.indices);
    }

    #[test]
    fn zoh_changes_only_at_events(gaps in prop::collection::vec(0.05..2.0f64, 1..20), vals in prop::collection::vec(-5.0..5.0f64, 20)) {
        let mut t = 0.0;
        let times: Vec<f64> = gaps.iter().map(|g| { t += g; t }).collect();
        let values = &vals[..times.len()];
        let fs = 16.0;
        let out = zoh_interpolate(&times, values, fs, 45.0).unwrap();
        for n in 1..out.len() {
            if out[n] != out[n - 1] {
                let tn = n as f64 / fs;
                prop_assert!(times.iter().any(|&e| (e - tn).abs() <= 1.0 / fs), "change at {}", tn);
            }
        }
    }

    #[test]
    fn heart_rate_is_reciprocal(gaps in prop::collection::vec(0.3..2.0f64, 3..80)) {
        let mut t = 0.0;
        let beats: Vec<f64> = gaps.iter().map(|g| { t += g; t }).collect();
        let s = CardiacSeries::from_beat_times(&beats).unwrap();
        for (h, r) in s.hr.iter().zip(&s.rr) {
            prop_assert!((h - 60.0 / r).abs() <= 1e-12);
        }
    }

    #[test]
    fn extractors_stay_finite(x in finite_vec(128..129), level in -1e3..1e3f64, flat in any::<bool>()) {
        let w: Vec<f64> = if flat { vec![level; 128] } else { x };
        let mut all = Vec::new();
        all.extend(extract_eeg(&w, 128.0));
        all.extend(extract_resp(&w, 128.0));
        all.extend(extract_temp(&w));
        all.extend(extract_eog(&w, 128.0));
        all.extend(extract_emg(&w, 128.0));
        prop_assert!(all.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn eeg_zscores_ignore_channel_gain(windows in prop::collection::vec(finite_vec(128..129), 4..12), c in 0.05..20.0f64) {
        let build = |gain: f64| {
            let rows: Vec<[f64; 9]> = windows
                .iter()
                .map(|w| extract_eeg(&w.iter().map(|v| v * gain).collect::<Vec<_>>(), 128.0))
                .collect();
            let flat: Vec<f64> = rows.iter().flatten().copied().collect();
            FeatureMatrix {
                subjects: vec!["s".into()],
                keys: (0..rows.len()).map(|i| RowKey { subject: 0, trial: 0, window: i }).collect(),
                values: Array2::from_shape_vec((rows.len(), 9), flat).unwrap(),
                ratings: vec![[5.0; 4]; rows.len()],
            }
        };
        let (a, _) = normalize_per_subject(&build(1.0));
        let (b, _) = normalize_per_subject(&build(c));
        for (u, v) in a.values.iter().zip(b.values.iter()) {
            prop_assert!((u - v).abs() <= 1e-6, "{} vs {}", u, v);
        }
    }

    #[test]
    fn quad_closed_form(v in 1.0..=9.0f32, a in 1.0..=9.0f32) {
        let expected = 2 * u32::from(v >= 4.5) + u32::from(a >= 4.5) + 1;
        prop_assert_eq!(quad_class(v, a).unwrap(), expected);
    }

    #[test]
    fn oct_projects_onto_quad(v in 1.0..=9.0f32, a in 1.0..=9.0f32, d in 1.0..4.5f32) {
        let oct = oct_class(v, a, d).unwrap();
        prop_assert!([1, 3, 5, 7].contains(&oct));
        prop_assert_eq!((oct + 1) / 2, quad_class(v, a).unwrap());
    }

    #[test]
    fn binarize_monotone(a in 1.0..=9.0f32, b in 1.0..=9.0f32) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(binarize(lo).unwrap() as u8 <= binarize(hi).unwrap() as u8);
    }

    #[test]
    fn pearson_symmetric_and_affine(pairs in prop::collection::vec((-10.0..10.0f64, -10.0..10.0f64), 3..40), scale in 0.1..10.0f64, shift in -5.0..5.0f64) {
        let x: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let y: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        if let (Ok(r), Ok(s)) = (pearson(&x, &y), pearson(&y, &x)) {
            prop_assert!((r - s).abs() <= 1e-12);
            let ax: Vec<f64> = x.iter().map(|v| scale * v + shift).collect();
            prop_assert!((pearson(&ax, &y).unwrap() - r).abs() <= 1e-12);
        }
    }

    #[test]
    fn summary_of_constant_is_exact(c in -1e6..1e6f64, n in 1usize..200) {
        let s = summarize(&vec![c; n]).unwrap();
        prop_assert_eq!(s.mean, c);
        prop_assert_eq!(s.median, c);
        prop_assert_eq!(s.std, 0.0);
    }

    #[test]
    fn odd_binary_votes_never_tie(highs in 0usize..=63) {
        let mut votes = vec![2u32; highs];
        votes.extend(vec![1u32; 63 - highs]);
        let winner = majority(&votes).unwrap();
        prop_assert_eq!(winner, if highs >= 32 { 2 } else { 1 });
    }

    #[test]
    fn kfold_tests_each_row_once(n in 2usize..300, k in 2usize..12, seed in any::<u64>()) {
        prop_assume!(k <= n);
        let folds = kfold_folds(n, k, seed).unwrap();
        let mut count = vec![0; n];
        for f in &folds {
            for &i in &f.test { count[i] += 1; }
            prop_assert_eq!(f.test.len() + f.train.len(), n);
            prop_assert!(f.train.iter().all(|i| !f.test.contains(i)));
        }
        prop_assert!(count.iter().all(|&c| c == 1));
        let sizes: Vec<usize> = folds.iter().map(|f| f.test.len()).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }
}

fn small_dataset(rows: &[(i32, i32, u32)]) -> (Array2<f64>, Vec<u32>) {
    let x = Array2::from_shape_fn((rows.len(), 2), |(i, j)| if j == 0 { rows[i].0 as f64 } else { rows[i].1 as f64 });
    (x, rows.iter().map(|r| r.2).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn monotone_rescaling_keeps_tree_paths(rows in prop::collection::vec((-20i32..20, -20i32..20, 1u32..=3), 6..60), seed in any::<u64>()) {
        let (x, y) = small_dataset(&rows);
        prop_assume!(forest::class_list(&y).len() >= 2);
        let mut warped = x.clone();
        warped.column_mut(1).mapv_inplace(|v| (v / 7.0).exp() + v * v * v);
        let p = ForestParams { n_trees: 15, mtry: 1, seed, ..Default::default() };
        let a = forest::fit(x.view(), &y, &p).unwrap();
        let b = forest::fit(warped.view(), &y, &p).unwrap();
        for ((ta, tb), bag) in a.trees.iter().zip(&b.trees).zip(&a.inbag) {
            prop_assert_eq!(ta.nodes.len(), tb.nodes.len());
            for (i, _) in bag.iter().enumerate().filter(|(_, &c)| c > 0) {
                let ra = x.row(i).to_vec();
                let rb = warped.row(i).to_vec();
                prop_assert_eq!(ta.leaf_of(&ra), tb.leaf_of(&rb));
            }
        }
        prop_assert_eq!(&a.inbag, &b.inbag);
    }

    #[test]
    fn affine_rescaling_keeps_predictions_and_oob(rows in prop::collection::vec((-20i32..20, -20i32..20, 1u32..=3), 6..60), seed in any::<u64>()) {
        let (x, y) = small_dataset(&rows);
        prop_assume!(forest::class_list(&y).len() >= 2);
        let mut scaled = x.clone();
        scaled.column_mut(1).mapv_inplace(|v| 4.0 * v + 3.0);
        let p = ForestParams { n_trees: 15, mtry: 1, seed, ..Default::default() };
        let a = forest::fit(x.view(), &y, &p).unwrap();
        let b = forest::fit(scaled.view(), &y, &p).unwrap();
        prop_assert_eq!(a.predict_batch(x.view()).unwrap(), b.predict_batch(scaled.view()).unwrap());
        prop_assert_eq!(oob_report(&a, x.view(), &y).unwrap().error, oob_report(&b, scaled.view(), &y).unwrap().error);
    }

    #[test]
    fn stratified_inbag_counts_match(rows in prop::collection::vec((-20i32..20, -20i32..20, 1u32..=3), 12..80), seed in any::<u64>(), ratio in 1.0..8.0f64) {
        let (x, y) = small_dataset(&rows);
        let classes = forest::class_list(&y);
        prop_assume!(classes.len() >= 2);
        let counts = forest::class_counts(&y);
        let ss = stratified_sampsize(&counts, ratio).unwrap();
        let p = ForestParams { n_trees: 8, mtry: 2, seed, sampsize: Some(ss.clone()), ..Default::default() };
        let m = forest::fit(x.view(), &y, &p).unwrap();
        for bag in &m.inbag {
            let per_class: Vec<u32> = classes
                .iter()
                .map(|c| bag.iter().zip(&y).filter(|(_, l)| *l == c).map(|(b, _)| *b).sum())
                .collect();
            prop_assert_eq!(per_class, ss.iter().map(|&v| v as u32).collect::<Vec<_>>());
        }
    }
}

#[test]
fn oob_share_near_inverse_e() {
    let n = 10_000;
    let x = Array2::from_shape_fn((n, 1), |(i, _)| (i % 97) as f64);
    let y: Vec<u32> = (0..n).map(|i| 1 + (i % 2) as u32).collect();
    let m = forest::fit(x.view(), &y, &ForestParams { n_trees: 20, mtry: 1, seed: 3, ..Default::default() }).unwrap();
    let share = m.inbag.iter().map(|b| b.iter().filter(|&&c| c == 0).count() as f64 / n as f64).sum::<f64>()
        / m.inbag.len() as f64;
    assert!((0.35..=0.39).contains(&share), "{share}");
}

fn blobs(seed: u64) -> (Array2<f64>, Vec<u32>) {
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 1.0).unwrap();
    let x = Array2::from_shape_fn((200, 2), |(i, j)| if j == 0 { 6.0 * (i % 2) as f64 } else { 0.0 } + noise.sample(&mut rng));
    (x, (0..200).map(|i| 1 + (i % 2) as u32).collect())
}

#[test]
fn row_order_does_not_move_oob_error() {
    let (x, y) = blobs(12);
    let p = ForestParams { mtry: 1, seed: 9, ..Default::default() };
    let base = oob_report(&forest::fit(x.view(), &y, &p).unwrap(), x.view(), &y).unwrap().error;
    let perm: Vec<usize> = (0..200).rev().collect();
    let xp = x.select(ndarray::Axis(0), &perm);
    let yp: Vec<u32> = perm.iter().map(|&i| y[i]).collect();
    let shuffled = oob_report(&forest::fit(xp.view(), &yp, &p).unwrap(), xp.view(), &yp).unwrap().error;
    assert!((base - shuffled).abs() <= 0.005, "{base} vs {shuffled}");
}

#[test]
fn windows_of_agrees_with_window_ranges() {
    let signals = vec![0.0f32; 40 * 40 * N_SAMPLES];
    let rec = physaffect::SubjectRecord::new("s", signals, vec![[5.0; 4]; 40]).unwrap();
    let keys: Vec<Window> = windows_of(&rec.trial(3));
    assert_eq!(keys.len(), WINDOWS_PER_TRIAL);
    assert_eq!(keys.last().unwrap().sample_range().end, N_SAMPLES);
    assert_eq!(rec.window_keys().count(), 2520);
}
