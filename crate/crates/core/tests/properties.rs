use guided_mel::audiodsp::{NormalizationStats, StftConfig};
use guided_mel::conditioning::{merge_embeddings, null_condition, temporal_upsample, Upsampler};
use guided_mel::guidance::{cfg_combine, guided_eps, GuidanceConfig};
use guided_mel::models::{
    analytic_gaussian_classifier_grad, analytic_gaussian_eps, AnalyticClassifier, AnalyticDenoiser, ClassLabel,
    Denoiser, GaussianWorld,
};
use guided_mel::persistence::{encode_mel, Checkpoint, Config, NamedTensor, ScheduleParams};
use guided_mel::sampler::{sample, ClassifierGuide, SampleOptions};
use guided_mel::schedule::NoiseSchedule;
use guided_mel::{Matrix, MelTensor, Shape};
use proptest::prelude::*;

fn tensor(vals: Vec<f64>, n_mels: usize) -> MelTensor {
    let frames = vals.len() / n_mels;
    MelTensor::from_vec(Shape::new(n_mels, frames), vals).unwrap()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn alpha_bar_is_decreasing_and_in_unit_interval(steps in 1usize..600, b0 in 1e-5f64..1e-2, span in 0.0f64..0.3) {
        let s = NoiseSchedule::linear(steps, b0, (b0 + span).min(0.999)).unwrap();
        let ab = s.alpha_bars();
        prop_assert!(ab.iter().all(|v| *v > 0.0 && *v < 1.0));
        prop_assert!(ab.windows(2).all(|w| w[1] < w[0]));
        for t in 1..=steps {
            prop_assert_eq!(s.alpha_bar(t).unwrap() + (1.0 - s.alpha_bar(t).unwrap()), 1.0);
        }
    }

    #[test]
    fn cfg_combine_is_affine_in_w1(
        c in prop::collection::vec(-3.0f64..3.0, 12),
        u in prop::collection::vec(-3.0f64..3.0, 12),
        a in -1.0f64..4.0,
        b in -1.0f64..4.0,
        lambda in 0.0f64..1.0,
    ) {
        let (c, u) = (tensor(c, 4), tensor(u, 4));
        let mix = lambda * a + (1.0 - lambda) * b;
        let lhs = cfg_combine(&c, &u, mix).unwrap();
        let ea = cfg_combine(&c, &u, a).unwrap();
        let eb = cfg_combine(&c, &u, b).unwrap();
        let rhs = ea.lin_comb(lambda, &eb, 1.0 - lambda).unwrap();
        prop_assert!(lhs.max_abs_diff(&rhs) < 1e-12);
    }

    #[test]
    fn guided_eps_is_affine_in_w2_without_normalization(
        e in prop::collection::vec(-3.0f64..3.0, 8),
        g in prop::collection::vec(-3.0f64..3.0, 8),
        w2 in 0.0f64..4.0,
        ab in 0.01f64..0.99,
    ) {
        let (e, g) = (tensor(e, 2), tensor(g, 2));
        let cfg = |w2| GuidanceConfig { w1: 0.0, w2, t_start: 10, normalize: false };
        let (at_w2, _) = guided_eps(&e, &g, &cfg(w2), 5, ab).unwrap();
        let (at_one, _) = guided_eps(&e, &g, &cfg(1.0), 5, ab).unwrap();
        let expected = e.lin_comb(1.0 - w2, &at_one, w2).unwrap();
        prop_assert!(at_w2.max_abs_diff(&expected) < 1e-12);
    }

    #[test]
    fn gate_closed_is_bitwise_passthrough(
        e in prop::collection::vec(-3.0f64..3.0, 6),
        g in prop::collection::vec(-3.0f64..3.0, 6),
        t_start in 0usize..400,
        w2 in 0.0f64..5.0,
        normalize in any::<bool>(),
    ) {
        let (e, g) = (tensor(e, 3), tensor(g, 3));
        let cfg = GuidanceConfig { w1: 0.0, w2, t_start, normalize };
        for t in (t_start + 1)..=(t_start + 3).min(400) {
            let (out, term) = guided_eps(&e, &g, &cfg, t, 0.5).unwrap();
            prop_assert!(term.is_none());
            prop_assert_eq!(out.as_slice(), e.as_slice());
        }
    }

    #[test]
    fn bayes_composition_holds_pointwise(
        x in prop::collection::vec(-4.0f64..4.0, 3),
        t in 1usize..=400,
        label in 0usize..3,
        sigma2 in 0.01f64..2.0,
    ) {
        let world = GaussianWorld::new(
            vec![vec![1.0, 0.0, -1.0], vec![-0.5, 0.8, 0.2], vec![0.0, -1.2, 0.7]],
            sigma2,
            vec![0.2, 0.5, 0.3],
        ).unwrap();
        let s = NoiseSchedule::default_linear();
        let x = MelTensor::from_column(x);
        let ab = s.alpha_bar(t).unwrap();
        let uncond = analytic_gaussian_eps(&x, t, &world, None, &s).unwrap();
        let (_, grad) = analytic_gaussian_classifier_grad(&x, t, &world, ClassLabel(label), &s).unwrap();
        let cond = analytic_gaussian_eps(&x, t, &world, Some(ClassLabel(label)), &s).unwrap();
        let composed = uncond.lin_comb(1.0, &grad, -(1.0 - ab).sqrt()).unwrap();
        let scale = cond.frobenius_norm().max(1e-12);
        prop_assert!(composed.max_abs_diff(&cond) / scale < 1e-8);
    }

    #[test]
    fn merge_then_slice_recovers_inputs(
        global in prop::collection::vec(-2.0f64..2.0, 1..5),
        rows in 1usize..6,
        cols in 1usize..5,
        seed in any::<u64>(),
    ) {
        let frames = Matrix::from_vec(rows, cols, (0..rows * cols).map(|i| ((seed as f64) * 1e-19 + i as f64).sin()).collect()).unwrap();
        let b = merge_embeddings(&global, &frames).unwrap();
        for r in 0..rows {
            let row = b.fused().row(r);
            prop_assert_eq!(&row[..cols], frames.row(r));
            prop_assert_eq!(&row[cols..], &global[..]);
        }
    }

    #[test]
    fn repeat_upsample_commutes_with_merge(
        global in prop::collection::vec(-2.0f64..2.0, 1..4),
        rows in 1usize..5,
        cols in 1usize..4,
    ) {
        let frames = Matrix::from_vec(rows, cols, (0..rows * cols).map(|i| (i as f64 * 0.37).cos()).collect()).unwrap();
        let up_fused = temporal_upsample(merge_embeddings(&global, &frames).unwrap().fused(), &Upsampler::Repeat).unwrap();
        let up_frames = temporal_upsample(&frames, &Upsampler::Repeat).unwrap();
        let merged = merge_embeddings(&global, &up_frames).unwrap();
        prop_assert_eq!(&up_fused, merged.fused());
    }

    #[test]
    fn null_tokens_are_seed_stable_prefixes(seed in any::<u64>(), n in 1usize..6, extra in 0usize..4) {
        let a = null_condition(3, 2, n, seed).unwrap();
        let b = null_condition(3, 2, n + extra, seed).unwrap();
        prop_assert_eq!(a.global(), b.global());
        prop_assert_eq!(a.frames().as_slice(), &b.frames().as_slice()[..n * 2]);
    }

    #[test]
    fn normalization_is_monotone_and_invertible(min in -20.0f64..0.0, span in 0.1f64..20.0, a in -30.0f64..30.0, d in 1e-6f64..5.0) {
        let s = NormalizationStats::new(min, min + span).unwrap();
        prop_assert!(s.normalize(a + d) > s.normalize(a));
        prop_assert!(rel(s.denormalize(s.normalize(a)), a) < 1e-12 || (s.denormalize(s.normalize(a)) - a).abs() < 1e-12);
    }

    #[test]
    fn frame_count_matches_enumeration(win in 1usize..64, hop in 1usize..32, len in 0usize..400) {
        let cfg = StftConfig { win, hop, dft_len: win, ..StftConfig::default() };
        let enumerated = (0..).take_while(|k| k * hop + win <= len).count();
        match cfg.frame_count(len) {
            Ok(n) => prop_assert_eq!(n, enumerated),
            Err(_) => prop_assert!(len < win),
        }
    }

    #[test]
    fn mel_encoding_length_and_header(n_mels in 1usize..10, n_frames in 1usize..10) {
        let m = MelTensor::zeros(Shape::new(n_mels, n_frames));
        let bytes = encode_mel(&m);
        prop_assert_eq!(bytes.len(), 16 + 4 * n_mels * n_frames);
        prop_assert_eq!(&bytes[..4], b"MELB");
        prop_assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize, n_mels);
        prop_assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize, n_frames);
    }

    #[test]
    fn checkpoint_roundtrip_is_exact(
        data in prop::collection::vec(any::<f32>().prop_filter("finite", |v| v.is_finite()), 0..40),
        step in any::<u64>(),
        key in "[a-z]{1,8}",
        value in "[ -~]{0,20}",
    ) {
        let stats = NormalizationStats::new(-11.5, 2.0).unwrap();
        let mut ck = Checkpoint::new(ScheduleParams::default(), stats);
        ck.step = step;
        ck.set_attr(&key, &value);
        ck.push_tensor(NamedTensor::new("w", vec![data.len() as u32], data.clone()).unwrap());
        let bytes = ck.encode().unwrap();
        let back = Checkpoint::decode("mem".as_ref(), &bytes).unwrap();
        prop_assert_eq!(back.encode().unwrap(), bytes);
        prop_assert_eq!(back.step, step);
        prop_assert_eq!(back.attr(&key), Some(value.as_str()));
        let bits: Vec<u32> = back.tensor("w").unwrap().data.iter().map(|v| v.to_bits()).collect();
        prop_assert_eq!(bits, data.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn malformed_config_line_is_named(prefix_lines in 0usize..6, junk in "[a-z]{1,6}") {
        let mut text = "# comment\n".repeat(prefix_lines);
        text.push_str(&format!("{junk}\n"));
        match Config::parse(&text) {
            Err(guided_mel::Error::ConfigLine { line, .. }) => prop_assert_eq!(line, prefix_lines + 1),
            other => prop_assert!(false, "expected a line error, got {other:?}"),
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn sampler_trace_invariants(seed in any::<u64>(), t_start in 0usize..=40, w2 in 0.0f64..3.0) {
        let s = NoiseSchedule::linear(40, 1e-3, 0.2).unwrap();
        let world = GaussianWorld::symmetric(vec![1.0, -0.5, 0.25], 0.2).unwrap();
        let den = AnalyticDenoiser { world: world.clone(), schedule: s.clone(), class: None };
        let clf = AnalyticClassifier { world, schedule: s.clone() };
        let cfg = GuidanceConfig { w1: 0.0, w2, t_start, normalize: true };
        let run = || sample(
            &s, &den, Some(ClassifierGuide { classifier: &clf, label: ClassLabel(1) }), None, &cfg,
            Shape::new(3, 1), seed, SampleOptions { trace: true, ..Default::default() },
        ).unwrap();
        let a = run();
        let b = run();
        prop_assert_eq!(a.x0.as_slice(), b.x0.as_slice());
        let tr = a.trace.unwrap();
        prop_assert_eq!(&tr, b.trace.as_ref().unwrap());
        prop_assert_eq!(tr.records.len(), 40);
        prop_assert_eq!(a.x0.shape(), Shape::new(3, 1));
        for r in &tr.records {
            prop_assert!(r.eps_norm.is_finite());
            if r.t > t_start || w2 == 0.0 {
                prop_assert_eq!(r.eps_norm, r.eps_mg_norm);
                prop_assert_eq!(r.guidance_norm, 0.0);
            } else if r.gamma > 0.0 {
                prop_assert!(rel(r.guidance_norm, w2 * r.eps_mg_norm) < 1e-9);
            }
        }
        prop_assert_eq!(tr.records.last().unwrap().t, 1);
        prop_assert_eq!(tr.records.last().unwrap().z_norm, 0.0);
        let _ = den.predict_eps(&a.x0, 1, None).unwrap();
    }
}
