use proptest::prelude::*;
use xgate::dataio::{sample_batch, Corpus, Split};
use xgate::nanonet::checkpoint::{from_bytes, to_bytes};
use xgate::nanonet::{clip_gradients, cosine_lr, Model, NetConfig, Tensor};
use xgate::rng::Rng;
use xgate::{
    act_backward, act_forward, glu_backward, glu_forward, rescale, ActivationSpec, GateKind, GluOrder, GluSpec,
    Interval, RangeParam,
};

fn smooth_gate() -> impl Strategy<Value = GateKind> {
    prop::sample::select(GateKind::SMOOTH.to_vec())
}

fn any_gate() -> impl Strategy<Value = GateKind> {
    prop::sample::select(GateKind::ALL.to_vec())
}

fn range() -> impl Strategy<Value = RangeParam> {
    let a = -0.4f64..2.0;
    prop_oneof![
        Just(RangeParam::Standard),
        a.clone().prop_map(RangeParam::Symmetric),
        a.clone().prop_map(RangeParam::MinOnly),
        a.clone().prop_map(RangeParam::MaxOnly),
        (a.clone(), a.clone()).prop_map(|(p, q)| RangeParam::Asymmetric(p, q)),
        prop::collection::vec(a, 1..4).prop_map(RangeParam::PerChannel),
    ]
}

proptest! {
    #[test]
    fn symmetric_zero_is_standard(gate in any_gate(), x in -60.0f64..60.0) {
        let std = ActivationSpec::standard(gate);
        let sym = ActivationSpec::new(gate, RangeParam::Symmetric(0.0));
        prop_assert_eq!(act_forward(&sym, x, 0).unwrap().to_bits(), act_forward(&std, x, 0).unwrap().to_bits());
    }

    #[test]
    fn origin_slope_is_one_half(gate in smooth_gate(), alpha in -3.0f64..3.0) {
        let spec = ActivationSpec::new(gate, RangeParam::Symmetric(alpha));
        let d = act_backward(&spec, 0.0, 0).unwrap().d_input;
        prop_assert!((d - 0.5).abs() < 1e-15, "{}", d);
    }

    #[test]
    fn wider_range_widens_the_slope_range(gate in smooth_gate(), a1 in 0.0f64..1.0, extra in 0.01f64..1.0) {
        let a2 = a1 + extra;
        let extremes = |a: f64| {
            let spec = ActivationSpec::new(gate, RangeParam::Symmetric(a));
            (0..=400).map(|i| act_backward(&spec, -10.0 + 0.05 * i as f64, 0).unwrap().d_input)
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), d| (lo.min(d), hi.max(d)))
        };
        let (lo1, hi1) = extremes(a1);
        let (lo2, hi2) = extremes(a2);
        prop_assert!(hi2 >= hi1 && lo2 <= lo1);
    }

    #[test]
    fn second_order_glu_at_unit_y_is_the_activation(gate in any_gate(), r in range(), x in -20.0f64..20.0) {
        let channel = r.n_params().saturating_sub(1);
        let glu = GluSpec::new(gate, r.clone(), GluOrder::Second);
        let act = ActivationSpec::new(gate, r);
        let want = act_forward(&act, x, channel).unwrap();
        prop_assert!((glu_forward(&glu, x, 1.0, channel).unwrap() - want).abs() <= 1e-15 * want.abs().max(1.0));
    }

    #[test]
    fn glu_scales_with_y(gate in any_gate(), order in prop::sample::select(vec![GluOrder::First, GluOrder::Second]),
                         r in range(), x in -8.0f64..8.0, y in -8.0f64..8.0, k in -6i32..6) {
        let c = 2f64.powi(k);
        let spec = GluSpec::new(gate, r, order);
        prop_assert_eq!(glu_forward(&spec, x, c * y, 0).unwrap(), c * glu_forward(&spec, x, y, 0).unwrap());
    }

    #[test]
    fn reglu_is_relu_times_y(x in -8.0f64..8.0, y in -8.0f64..8.0) {
        let relu = act_forward(&ActivationSpec::relu(), x, 0).unwrap();
        prop_assert_eq!(glu_forward(&GluSpec::reglu(), x, y, 0).unwrap(), relu * y);
        prop_assert_eq!(relu, x.max(0.0));
    }

    #[test]
    fn glu_input_grads_are_linear_in_y(gate in smooth_gate(), r in range(), x in -6.0f64..6.0, y in -6.0f64..6.0) {
        let spec = GluSpec::new(gate, r, GluOrder::Second);
        let g = glu_backward(&spec, x, y, 0).unwrap();
        let g1 = glu_backward(&spec, x, 1.0, 0).unwrap();
        prop_assert!((g.d_x - g1.d_x * y).abs() <= 1e-13 * g.d_x.abs().max(1.0));
        prop_assert_eq!(g.d_y, g1.d_y);
    }

    #[test]
    fn rescale_preserves_midpoints(lo in -5.0f64..5.0, w in 0.1f64..10.0, lo2 in -5.0f64..5.0, w2 in 0.1f64..10.0,
                                   a in -20.0f64..20.0, b in -20.0f64..20.0) {
        let old = Interval::new(lo, lo + w).unwrap();
        let new = Interval::new(lo2, lo2 + w2).unwrap();
        let mid = rescale(0.5 * (a + b), old, new).unwrap();
        let avg = 0.5 * (rescale(a, old, new).unwrap() + rescale(b, old, new).unwrap());
        prop_assert!((mid - avg).abs() <= 1e-12 * (1.0 + mid.abs()));
    }

    #[test]
    fn batches_stay_on_their_side(seed in any::<u64>(), len in 200usize..600, seq in 1usize..16, frac in 0.1f64..0.5) {
        let bytes: Vec<u8> = (0..len).map(|i| (i * 31 % 251) as u8).collect();
        let corpus = Corpus::from_bytes(bytes, frac, seq).unwrap();
        let split = corpus.split_point();
        let mut rng = Rng::seed(seed);
        let train = sample_batch(&corpus, Split::Train, 4, seq, &mut rng).unwrap();
        prop_assert!(train.offsets.iter().all(|&o| o + seq < split));
        let val = sample_batch(&corpus, Split::Val, 4, seq, &mut rng).unwrap();
        prop_assert!(val.offsets.iter().all(|&o| o >= split && o + seq < len));
        for (b, &o) in train.offsets.iter().enumerate() {
            let t = corpus.tokens();
            prop_assert_eq!(train.targets[b * seq + seq - 1], t[o + seq] as u32);
        }
    }

    #[test]
    fn schedule_stays_between_floor_and_peak(iters in 10usize..2000, step in 1usize..2000, peak in 1e-5f64..1e-1) {
        let cfg = NetConfig { iterations: iters, lr_peak: peak, ..NetConfig::default() };
        let lr = cosine_lr(step.min(iters), &cfg);
        prop_assert!(lr > 0.0 && lr <= peak * (1.0 + 1e-12));
        if step.min(iters) as f64 >= cfg.warmup_frac * iters as f64 {
            prop_assert!(lr >= cfg.min_lr_ratio * peak * (1.0 - 1e-12));
        }
    }

    #[test]
    fn clipping_caps_the_global_norm(vals in prop::collection::vec(-100.0f64..100.0, 2..40), max in 0.01f64..10.0) {
        let half = vals.len() / 2;
        let mut a = Tensor::from_vec(&[half], vals[..half].to_vec()).unwrap();
        let mut b = Tensor::from_vec(&[vals.len() - half], vals[half..].to_vec()).unwrap();
        let before = clip_gradients(&mut [&mut a, &mut b], max);
        let after = (a.sum_sq() + b.sum_sq()).sqrt();
        prop_assert!(after <= max * (1.0 + 1e-12) || after == before);
        prop_assert!(after <= before * (1.0 + 1e-12));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn checkpoints_round_trip(seed in any::<u64>(), depth in 1usize..3,
                              block in prop::sample::select(vec!["xatlu", "gelu:asym", "xswiglu1", "relu", "atglu2:chan"])) {
        let cfg = NetConfig {
            depth,
            model_dim: 8,
            head_dim: 4,
            seq_len: 4,
            block: block.parse().unwrap(),
            seed,
            zero_init_head: false,
            ..NetConfig::default()
        };
        let model = Model::init(&cfg, &mut Rng::seed(seed)).unwrap();
        let bytes = to_bytes(&model);
        let back = from_bytes(&bytes).unwrap();
        prop_assert_eq!(&back, &model);
        prop_assert_eq!(to_bytes(&back), bytes);
    }
}

#[test]
fn streams_are_reproducible() {
    let draw = |seed| {
        let mut r = Rng::seed(seed);
        let mut f = r.fork();
        (r.next_u64(), r.below(1000), f.uniform().to_bits(), f.normal().to_bits())
    };
    assert_eq!(draw(11), draw(11));
    assert_ne!(draw(11), draw(12));
}
