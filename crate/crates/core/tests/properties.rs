use ndarray::Array2;
use proptest::prelude::*;

use prosodike::control::{apply_bias, infer, EmphasisDirective};
use prosodike::cwt::{cwt_transform, cwt_transform_with, extract_loma, word_prominence, Aggregation, Padding};
use prosodike::datamodel::{corpus_to_string, parse_corpus, validate, AlignedUtterance, PhoneSegment, WordSpan};
use prosodike::detector::{f_score, kmeans2};
use prosodike::dsp::{estimate_pitch_acf, stft_power, PitchConfig, StftConfig};
use prosodike::emphfeat::{
    fit_combined_weights, normalize, variance_features, CombinedWeights, NormExponent,
};
use prosodike::ingestion::{
    align_to_utterance, assemble_utterance, parse_textgrid, serialize_textgrid, Interval, IntervalTier, TextGridDocument,
    TextGridForm,
};
use prosodike::neural::layers::Simplex;
use prosodike::neural::{emphasis_heads, length_regulate, make_synthetic_corpus, synthetic_phone_inventory, EmphasisMode, ModelConfig, PredictorModel, Standardizer, TargetStats};

/// Per-word phone durations; every phone belongs to a word.
fn word_durations() -> impl Strategy<Value = Vec<Vec<usize>>> {
    prop::collection::vec(prop::collection::vec(1usize..25, 1..6), 1..7)
}

fn utterance_from(words: &[Vec<usize>], pitch: &[f64]) -> AlignedUtterance {
    let mut phones = Vec::new();
    let mut spans = Vec::new();
    let mut frame = 0;
    for (wi, durs) in words.iter().enumerate() {
        let start = phones.len();
        for &d in durs {
            phones.push(PhoneSegment { label: "a".into(), start_frame: frame, num_frames: d });
            frame += d;
        }
        spans.push(WordSpan { text: format!("w{wi}"), phone_start: start, phone_end: phones.len(), emphasized: None });
    }
    let pitch_hz = (0..frame).map(|t| pitch[t % pitch.len()]).collect();
    AlignedUtterance {
        id: "p".into(),
        sample_rate_hz: 16_000,
        frame_shift_ms: 10.0,
        phones,
        words: spans,
        pitch_hz,
        energy_db: vec![60.0; frame],
    }
}

fn label() -> impl Strategy<Value = String> {
    prop::collection::vec(prop::sample::select(vec!["a", "ə", "\"", " ", "sh", "", "1", "日"]), 0..4).prop_map(|v| v.concat())
}

fn textgrid() -> impl Strategy<Value = TextGridDocument> {
    let tier = (label(), prop::collection::vec((1u32..400, label()), 1..8)).prop_map(|(name, parts)| {
        let mut t = 0.0;
        let intervals: Vec<Interval> = parts
            .into_iter()
            .map(|(len, text)| {
                let xmin = t;
                t += len as f64 / 100.0;
                Interval { xmin, xmax: t, text }
            })
            .collect();
        (name, intervals)
    });
    prop::collection::vec(tier, 1..4).prop_map(|tiers| {
        let xmax = tiers.iter().map(|(_, iv)| iv.last().unwrap().xmax).fold(0.0, f64::max);
        let tiers = tiers
            .into_iter()
            .map(|(name, mut intervals)| {
                let end = intervals.last().unwrap().xmax;
                if end < xmax {
                    intervals.push(Interval { xmin: end, xmax, text: String::new() });
                }
                IntervalTier { name, xmin: 0.0, xmax, intervals }
            })
            .collect();
        TextGridDocument { xmin: 0.0, xmax, tiers }
    })
}

fn gaussian(n: usize, center: f64, sigma: f64) -> Vec<f64> {
    (0..n).map(|t| (-0.5 * ((t as f64 - center) / sigma).powi(2)).exp()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    #[test]
    fn validate_is_total(
        phones in prop::collection::vec((0usize..50, 0usize..20), 0..6),
        words in prop::collection::vec((0usize..8, 0usize..8), 0..4),
        pitch in prop::collection::vec(prop::num::f64::ANY, 0..40),
        energy_len in 0usize..40,
    ) {
        let u = AlignedUtterance {
            id: String::new(),
            sample_rate_hz: 0,
            frame_shift_ms: f64::NAN,
            phones: phones.into_iter().map(|(s, n)| PhoneSegment { label: String::new(), start_frame: s, num_frames: n }).collect(),
            words: words.into_iter().map(|(s, e)| WordSpan { text: "w".into(), phone_start: s, phone_end: e, emphasized: None }).collect(),
            pitch_hz: pitch,
            energy_db: vec![0.0; energy_len],
        };
        let _ = validate(&u);
    }

    #[test]
    fn corpus_lines_round_trip(seed in 0u64..1000, n in 1usize..4) {
        let corpus = make_synthetic_corpus(seed, n);
        let text = corpus_to_string(&corpus);
        let back = parse_corpus(&text).unwrap();
        prop_assert_eq!(&back, &corpus);
        prop_assert_eq!(corpus_to_string(&back), text);
    }

    #[test]
    fn textgrid_round_trips_in_both_forms(doc in textgrid()) {
        for form in [TextGridForm::Long, TextGridForm::Short] {
            let text = serialize_textgrid(&doc, form);
            let back = parse_textgrid(&text).unwrap();
            prop_assert_eq!(&back, &doc);
        }
    }

    #[test]
    fn aligned_textgrids_validate(words in word_durations(), lead in 0usize..10) {
        let s = |f: usize| f as f64 / 100.0;
        let mut phones = Vec::new();
        let mut word_iv = Vec::new();
        let mut t = 0;
        if lead > 0 {
            phones.push(Interval { xmin: 0.0, xmax: s(lead), text: String::new() });
            word_iv.push(Interval { xmin: 0.0, xmax: s(lead), text: String::new() });
            t = lead;
        }
        for (wi, durs) in words.iter().enumerate() {
            let start = t;
            for &d in durs {
                phones.push(Interval { xmin: s(t), xmax: s(t + d), text: "a".into() });
                t += d;
            }
            word_iv.push(Interval { xmin: s(start), xmax: s(t), text: format!("w{wi}") });
        }
        let xmax = s(t);
        let doc = TextGridDocument {
            xmin: 0.0,
            xmax,
            tiers: vec![
                IntervalTier { name: "phones".into(), xmin: 0.0, xmax, intervals: phones },
                IntervalTier { name: "words".into(), xmin: 0.0, xmax, intervals: word_iv },
            ],
        };
        let sk = align_to_utterance(&doc, "phones", "words", 10.0).unwrap();
        prop_assert_eq!(sk.words.len(), words.len());
        let n = sk.num_frames();
        let utt = assemble_utterance("a", sk, vec![120.0; n], vec![60.0; n], 16_000, 10.0);
        prop_assert!(validate(&utt).is_empty(), "{:?}", validate(&utt));
    }

    #[test]
    fn stft_power_scales_quadratically(
        samples in prop::collection::vec(-1.0f64..1.0, 400..2000),
        c in -4.0f64..4.0,
    ) {
        let cfg = StftConfig::default();
        let a = stft_power(&samples, 16_000, &cfg).unwrap();
        let scaled: Vec<f64> = samples.iter().map(|x| c * x).collect();
        let b = stft_power(&scaled, 16_000, &cfg).unwrap();
        for (ra, rb) in a.iter().zip(&b) {
            for (x, y) in ra.iter().zip(rb) {
                let want = c * c * x;
                prop_assert!((y - want).abs() <= 1e-9 * want.abs().max(1e-300) || (y - want).abs() < 1e-20);
            }
        }
    }

    #[test]
    fn frame_count_matches_formula(n in 0usize..5000, sr in prop::sample::select(vec![8_000u32, 16_000, 22_050, 24_000])) {
        let cfg = StftConfig::default();
        let frames = stft_power(&vec![0.0; n], sr, &cfg).unwrap().len();
        let (frame, hop) = ((0.025 * sr as f64).round() as usize, (0.010 * sr as f64).round() as usize);
        let want = if n < frame { 0 } else { (n - frame) / hop + 1 };
        prop_assert_eq!(frames, want);
    }

    #[test]
    fn normalize_is_odd(x in -1e6f64..1e6, var in 1e-6f64..1e6, one in any::<bool>()) {
        let e = if one { NormExponent::One } else { NormExponent::Two };
        prop_assert_eq!(normalize(-x, var, e).unwrap(), -normalize(x, var, e).unwrap());
    }

    #[test]
    fn duration_deviations_cancel(words in word_durations()) {
        let u = utterance_from(&words, &[110.0, 130.0]);
        let f = variance_features(&u).unwrap();
        let total: f64 = words.iter().zip(&f).map(|(w, v)| w.len() as f64 * v.dur_var).sum();
        prop_assert!(total.abs() <= 1e-6, "{}", total);
    }

    #[test]
    fn combined_is_monotone_in_each_constituent(
        w in prop::array::uniform3(0.0f64..1.0),
        base in prop::array::uniform3(-2.0f64..2.0),
        k in 0usize..3,
        step in 0.0f64..1.0,
    ) {
        let s: f64 = w.iter().sum::<f64>().max(1e-9);
        let weights = CombinedWeights::new(w.map(|x| x / s)).unwrap_or_else(|_| CombinedWeights::uniform());
        let mut raised = base;
        raised[k] += step;
        let (a, b) = (weights.apply(&base), weights.apply(&raised));
        prop_assert!(b >= a - 1e-12);
        if weights.weights()[k] > 0.0 && step > 0.0 {
            prop_assert!(b > a - 1e-12);
        }
    }

    #[test]
    fn combined_fit_ignores_order(
        rows in prop::collection::vec((prop::array::uniform3(-1.0f64..1.0), any::<bool>()), 6..30),
        rot in 0usize..30,
    ) {
        let mut rows = rows;
        rows[0].1 = true;
        rows[1].1 = false;
        let (x, y): (Vec<[f64; 3]>, Vec<bool>) = rows.iter().cloned().unzip();
        let a = fit_combined_weights(&x, &y).unwrap();
        let mut rotated = rows.clone();
        rotated.rotate_left(rot % rows.len());
        rotated.reverse();
        let (x2, y2): (Vec<[f64; 3]>, Vec<bool>) = rotated.into_iter().unzip();
        let b = fit_combined_weights(&x2, &y2).unwrap();
        prop_assert_eq!(a.weights.weights(), b.weights.weights());
    }

    #[test]
    fn raising_a_value_keeps_it_emphasized(
        values in prop::collection::vec(-10.0f64..10.0, 4..60),
        i in 0usize..60,
        bump in 0.0f64..20.0,
    ) {
        prop_assume!(values.iter().any(|&v| v != values[0]));
        let i = i % values.len();
        let before = kmeans2(&values).unwrap();
        prop_assume!(before.predictions[i]);
        let mut raised = values.clone();
        raised[i] += bump;
        let after = kmeans2(&raised).unwrap();
        prop_assert!(raised[i] >= after.threshold);
        prop_assert!(after.predictions[i]);
    }

    #[test]
    fn f_score_ignores_word_order(pairs in prop::collection::vec((any::<bool>(), any::<bool>()), 1..50), rot in 0usize..50) {
        let (p, a): (Vec<bool>, Vec<bool>) = pairs.iter().cloned().unzip();
        let mut shuffled = pairs.clone();
        shuffled.rotate_left(rot % pairs.len());
        shuffled.reverse();
        let (p2, a2): (Vec<bool>, Vec<bool>) = shuffled.into_iter().unzip();
        prop_assert_eq!(f_score(&p, &a).ok(), f_score(&p2, &a2).ok());
    }

    #[test]
    fn loma_anchors_follow_translation(center in 200.0f64..300.0, sigma in 2.0f64..6.0, k in 0usize..40) {
        let n = 700;
        let a = extract_loma(&cwt_transform_with(&gaussian(n, center, sigma), 5, 2.0, Padding::ZeroContext).unwrap());
        let b = extract_loma(&cwt_transform_with(&gaussian(n, center + k as f64, sigma), 5, 2.0, Padding::ZeroContext).unwrap());
        prop_assert_eq!(a.len(), b.len());
        for (la, lb) in a.iter().zip(&b) {
            prop_assert!((lb.anchor_frame as i64 - la.anchor_frame as i64 - k as i64).abs() <= 1);
        }
    }

    #[test]
    fn word_prominence_follows_word_relabeling(words in word_durations(), center in 0.0f64..1.0, perm_seed in any::<u64>()) {
        let u = utterance_from(&words, &[120.0]);
        let n = u.num_frames();
        let lines = extract_loma(&cwt_transform_with(&gaussian(n, center * n as f64, 3.0), 6, 2.0, Padding::ZeroContext).unwrap());
        let base = word_prominence(&lines, &u, Aggregation::Max);
        let mut order: Vec<usize> = (0..u.words.len()).collect();
        let len = order.len();
        for i in (1..len).rev() {
            order.swap(i, (perm_seed as usize).wrapping_mul(i + 7) % (i + 1));
        }
        let mut relabeled = u.clone();
        relabeled.words = order.iter().map(|&i| u.words[i].clone()).collect();
        let permuted = word_prominence(&lines, &relabeled, Aggregation::Max);
        for (slot, &i) in order.iter().enumerate() {
            prop_assert_eq!(permuted[slot], base[i]);
        }
    }

    #[test]
    fn simplex_weights_stay_on_the_simplex(logits in prop::collection::vec(-800.0f64..800.0, 3)) {
        let s = Simplex { logits: Array2::from_shape_vec((1, 3), logits).unwrap() };
        let w = s.weights();
        prop_assert!(w.iter().all(|&x| x >= 0.0));
        prop_assert!((w.sum() - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn length_regulation_sums_durations(counts in prop::collection::vec(0usize..6, 1..12)) {
        let v = Array2::from_shape_fn((counts.len(), 2), |(i, j)| (i * 10 + j) as f64);
        let out = length_regulate(v.view(), &counts);
        prop_assert_eq!(out.nrows(), counts.iter().sum::<usize>());
    }

    #[test]
    fn opposite_biases_restore_emphasis_up_to_rounding(
        e in prop::collection::vec(-3.0f64..3.0, 12),
        b in -2.0f64..2.0,
    ) {
        let words = vec![0..3, 3..7, 7..12];
        let original = Array2::from_shape_vec((12, 1), e).unwrap();
        let mut x = original.clone();
        apply_bias(&mut x, &words, &EmphasisDirective::new(vec![1, 2], b)).unwrap();
        apply_bias(&mut x, &words, &EmphasisDirective::new(vec![1, 2], -b)).unwrap();
        for (got, want) in x.iter().zip(original.iter()) {
            prop_assert!((got - want).abs() <= f64::EPSILON * (want.abs() + b.abs()));
        }
        prop_assert_eq!(x.slice(ndarray::s![0..3, ..]), original.slice(ndarray::s![0..3, ..]));
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 12, ..ProptestConfig::default() })]

    #[test]
    fn pitch_track_shifts_with_the_signal(f0 in 90.0f64..250.0) {
        let sr = 16_000;
        let hop = 160;
        let tone: Vec<f64> = (0..8000).map(|i| (2.0 * std::f64::consts::PI * f0 * i as f64 / sr as f64).sin()).collect();
        let mut delayed = vec![0.0; hop];
        delayed.extend_from_slice(&tone[..tone.len() - hop]);
        let a = estimate_pitch_acf(&tone, sr, &PitchConfig::default()).unwrap();
        let b = estimate_pitch_acf(&delayed, sr, &PitchConfig::default()).unwrap();
        for t in 3..a.len() - 3 {
            prop_assert!((b[t + 1] - a[t]).abs() <= 1e-6, "frame {}: {} vs {}", t, a[t], b[t + 1]);
        }
    }

    #[test]
    fn every_head_has_one_row_per_phone(
        len in 1usize..30,
        mode in prop::sample::select(vec![EmphasisMode::Variance, EmphasisMode::Wavelet, EmphasisMode::Combined]),
        bias in -1.0f64..1.0,
    ) {
        let vocab = synthetic_phone_inventory();
        let cfg = ModelConfig { embed_dim: 8, mode, ..ModelConfig::default() };
        let unit = Standardizer { mean: 0.0, std: 1.0 };
        let stats = TargetStats {
            emphasis: vec![unit; emphasis_heads(mode)],
            prosody: [Standardizer { mean: 2.0, std: 0.5 }, Standardizer { mean: 4.8, std: 0.2 }, Standardizer { mean: 60.0, std: 5.0 }],
            pitch_range: (4.0, 6.0),
            energy_range: (30.0, 90.0),
        };
        let model = PredictorModel::new(cfg, vocab.clone(), stats).unwrap();
        let u = utterance_from(&[vec![3; len]], &[120.0]);
        let mut u = u;
        for p in &mut u.phones {
            p.label = vocab[1].clone();
        }
        let input = model.input_for(&u).unwrap();
        let p = infer(&model, &input, Some(&EmphasisDirective::new(vec![0], bias))).unwrap();
        prop_assert_eq!(p.emphasis.nrows(), len);
        prop_assert_eq!(p.log_duration.len(), len);
        prop_assert_eq!(p.pitch_hz.len(), len);
        prop_assert_eq!(p.energy_db.len(), len);
        prop_assert_eq!(p.frames.nrows(), p.duration_frames.iter().sum::<usize>());
    }
}

#[test]
fn wider_bumps_never_lower_the_argmax_scale() {
    let mut last = 0;
    for i in 0..=30 {
        let sigma = 2f64.powf(1.0 + i as f64 / 10.0);
        let (k, _, _) = cwt_transform(&gaussian(1024, 512.0, sigma), 9, 1.0).unwrap().argmax().unwrap();
        assert!(k >= last, "sigma {sigma}: scale {k} after {last}");
        last = k;
    }
}
