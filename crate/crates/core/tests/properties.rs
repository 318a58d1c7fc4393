//! Randomized checks of the library's structural contracts: shape algebra,
//! partition invariants, serialization round trips, and the tone-curve
//! transcription. Each block freezes a property that every valid input must
//! satisfy, not a particular example.

use std::collections::BTreeMap;

use proptest::prelude::*;
use slc_core::augment::{apply_augment, format_chain, parse_chain, AugmentOp};
use slc_core::config::{ModelChoice, RunConfig};
use slc_core::imaging::{minkowski_distance, piecewise_linear, Image, Mask, PiecewiseParams};
use slc_core::models::ModelWeights;
use slc_core::rng::SeededRng;
use slc_core::segmentation::{build_unet, dice, unet_forward, UNetConfig};
use slc_core::tensor::{self as ops, Tensor};
use slc_core::training::{make_stratified_folds, stratified_split};
use slc_core::weights::{weights_from_bytes, weights_to_bytes};

fn rand_tensor(shape: &[usize], rng: &mut SeededRng) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap()
}

// Valid tone-curve parameters: 0 < r1 <= r2 < 255 and s1 <= s2.
fn curve_params() -> impl Strategy<Value = PiecewiseParams> {
    (1u8..=254, 0u8..=255)
        .prop_flat_map(|(r1, s1)| (Just(r1), r1..=254u8, Just(s1), s1..=255u8))
        .prop_map(|(r1, r2, s1, s2)| PiecewiseParams::new(r1, s1, r2, s2).unwrap())
}

// The three-branch contrast-stretch definition, evaluated independently in
// f64: slope s1/r1 up to r1, then the (r1,s1)-(r2,s2) segment, then the
// segment from (r2,s2) to (255,255).
fn curve_reference(pix: u8, p: &PiecewiseParams) -> u8 {
    let (x, r1, s1, r2, s2) =
        (pix as f64, p.r1 as f64, p.s1 as f64, p.r2 as f64, p.s2 as f64);
    let y = if x <= r1 {
        (s1 / r1) * x
    } else if x <= r2 {
        ((s2 - s1) / (r2 - r1)) * (x - r1) + s1
    } else {
        ((255.0 - s2) / (255.0 - r2)) * (x - r2) + s2
    };
    y.round_ties_even().clamp(0.0, 255.0) as u8
}

fn ramp_image() -> Image {
    Image::new(16, 16, 1, (0..=255).collect()).unwrap()
}

proptest! {
    #[test]
    fn tone_curve_matches_reference_on_every_intensity(p in curve_params()) {
        let out = piecewise_linear(&ramp_image(), &p).unwrap();
        for v in 0..=255usize {
            prop_assert_eq!(out.pixels()[v], curve_reference(v as u8, &p));
        }
    }

    // Nonnegative slopes in every branch, so the mapping never decreases.
    #[test]
    fn tone_curve_is_monotone(p in curve_params()) {
        let out = piecewise_linear(&ramp_image(), &p).unwrap();
        for v in 1..=255usize {
            prop_assert!(out.pixels()[v] >= out.pixels()[v - 1]);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_is_a_shift_invariant_distribution(
        logits in prop::collection::vec(-30.0f32..30.0, 1..=16),
        shift in -50.0f32..50.0,
    ) {
        let x = Tensor::from_vec(logits.clone());
        let probs = ops::softmax(&x).unwrap();
        let sum: f64 = probs.data().iter().map(|&v| v as f64).sum();
        prop_assert!((sum - 1.0).abs() < 1e-5, "sum {sum}");
        prop_assert!(probs.data().iter().all(|&v| v > 0.0));

        let shifted = Tensor::from_vec(logits.iter().map(|&v| v + shift).collect());
        let probs2 = ops::softmax(&shifted).unwrap();
        for (a, b) in probs.data().iter().zip(probs2.data()) {
            prop_assert!((a - b).abs() < 1e-5, "{a} vs {b}");
        }
    }

    #[test]
    fn op_output_shapes_follow_the_arithmetic(
        (c, h, w, f) in (1usize..=3, 3usize..=10, 3usize..=10, 1usize..=4),
        seed in any::<u64>(),
    ) {
        let mut rng = SeededRng::new(seed);
        let x = rand_tensor(&[c, h, w], &mut rng);
        let k = rand_tensor(&[f, c, 3, 3], &mut rng);
        let b = rand_tensor(&[f], &mut rng);

        let valid = ops::conv2d(&x, &k, &b).unwrap();
        prop_assert_eq!(valid.shape(), &[f, h - 2, w - 2]);
        let same = ops::conv2d_same(&x, &k, &b).unwrap();
        prop_assert_eq!(same.shape(), &[f, h, w]);
        let pooled = ops::maxpool2d(&x, 2, 2).unwrap();
        prop_assert_eq!(pooled.shape(), &[c, h / 2, w / 2]);
        let up = ops::upsample_nearest_2x(&x).unwrap();
        prop_assert_eq!(up.shape(), &[c, 2 * h, 2 * w]);
        let flat = ops::flatten(&x).unwrap();
        prop_assert_eq!(flat.shape(), &[c * h * w]);

        let y = rand_tensor(&[f, h, w], &mut rng);
        let x_same = rand_tensor(&[c, h, w], &mut rng);
        let stacked = ops::concat_channels(&x_same, &y).unwrap();
        prop_assert_eq!(stacked.shape(), &[c + f, h, w]);
    }

    #[test]
    fn fold_plan_partitions_each_class_evenly(
        raw_counts in prop::collection::vec(1usize..=30, 2..=6),
        k in 2usize..=5,
        seed in any::<u64>(),
    ) {
        // every present class needs at least k members
        let counts: Vec<usize> = raw_counts.iter().map(|&c| c.max(k)).collect();
        let mut labels = Vec::new();
        for (c, &n) in counts.iter().enumerate() {
            labels.extend(std::iter::repeat(c).take(n));
        }
        let rng = SeededRng::new(seed);
        let plan = make_stratified_folds(&labels, k, &rng).unwrap();

        prop_assert_eq!(plan.k, k);
        prop_assert_eq!(plan.assignment.len(), labels.len());
        prop_assert!(plan.assignment.iter().all(|&f| f < k));
        for f in 0..k {
            prop_assert_eq!(
                plan.val_indices(f).len() + plan.train_indices(f).len(),
                labels.len()
            );
        }
        let per_fold = plan.class_counts(&labels, counts.len());
        for (c, &n) in counts.iter().enumerate() {
            let col: Vec<usize> = per_fold.iter().map(|row| row[c]).collect();
            prop_assert_eq!(col.iter().sum::<usize>(), n);
            let (lo, hi) = (col.iter().min().unwrap(), col.iter().max().unwrap());
            prop_assert!(hi - lo <= 1, "class {c} spread {col:?}");
        }

        let again = make_stratified_folds(&labels, k, &SeededRng::new(seed)).unwrap();
        prop_assert_eq!(plan.assignment, again.assignment);
    }

    #[test]
    fn split_takes_a_clamped_rounded_share_of_each_class(
        raw_counts in prop::collection::vec(2usize..=40, 2..=6),
        frac in 0.05f64..0.95,
        seed in any::<u64>(),
    ) {
        let mut labels = Vec::new();
        for (c, &n) in raw_counts.iter().enumerate() {
            labels.extend(std::iter::repeat(c).take(n));
        }
        let rng = SeededRng::new(seed);
        let (train, val) = stratified_split(&labels, frac, &rng).unwrap();

        let mut merged: Vec<usize> = train.iter().chain(&val).copied().collect();
        merged.sort_unstable();
        prop_assert_eq!(merged, (0..labels.len()).collect::<Vec<_>>());

        for (c, &n) in raw_counts.iter().enumerate() {
            let expect = ((n as f64 * frac).round_ties_even() as usize).clamp(1, n - 1);
            let got = val.iter().filter(|&&i| labels[i] == c).count();
            prop_assert_eq!(got, expect, "class {} of {}", c, n);
        }

        let (t2, v2) = stratified_split(&labels, frac, &SeededRng::new(seed)).unwrap();
        prop_assert_eq!((train, val), (t2, v2));
    }

    #[test]
    fn flips_are_involutions(
        (h, w, chans) in (1usize..=12, 1usize..=12, prop::sample::select(vec![1usize, 3])),
        seed in any::<u64>(),
    ) {
        let mut rng = SeededRng::new(seed);
        let px: Vec<u8> = (0..h * w * chans).map(|_| rng.next_below(256) as u8).collect();
        let img = Image::new(h, w, chans, px).unwrap();
        for op in [AugmentOp::FlipH, AugmentOp::FlipV] {
            let twice = apply_augment(&apply_augment(&img, &op).unwrap(), &op).unwrap();
            prop_assert_eq!(&twice, &img);
        }
    }

    #[test]
    fn augment_chain_text_round_trips(
        ops in prop::collection::vec(
            prop_oneof![
                (-90.0f32..90.0).prop_map(|degrees| AugmentOp::Rotate { degrees }),
                (0.25f32..2.0).prop_map(|factor| AugmentOp::Scale { factor }),
                Just(AugmentOp::FlipH),
                Just(AugmentOp::FlipV),
                (-0.5f32..0.5).prop_map(|factor| AugmentOp::Shear { factor }),
                (0.25f32..2.0).prop_map(|gain| AugmentOp::Contrast { gain }),
                any::<i16>().prop_map(|delta| AugmentOp::Brightness { delta }),
                (0usize..50, 0usize..50, 1usize..50, 1usize..50)
                    .prop_map(|(x, y, w, h)| AugmentOp::Crop { x, y, w, h }),
            ],
            1..=6,
        ),
    ) {
        let text = format_chain(&ops);
        prop_assert_eq!(parse_chain(&text).unwrap(), ops);
    }

    // The binary codec must reproduce every payload bit, including NaN,
    // infinities, and denormals.
    #[test]
    fn weight_bytes_round_trip_bit_exact(
        specs in prop::collection::btree_map(
            "[a-z][a-z0-9._]{0,18}",
            (prop::collection::vec(1usize..=4, 1..=4), any::<u64>()),
            0..=5,
        ),
    ) {
        let tensors: BTreeMap<String, Tensor> = specs
            .into_iter()
            .map(|(name, (shape, seed))| {
                let n: usize = shape.iter().product();
                let mut rng = SeededRng::new(seed);
                let data = (0..n).map(|_| f32::from_bits(rng.next_u64() as u32)).collect();
                (name, Tensor::new(shape, data).unwrap())
            })
            .collect();
        let weights = ModelWeights { tensors };

        let bytes = weights_to_bytes(&weights).unwrap();
        let back = weights_from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.tensors.len(), weights.tensors.len());
        for (name, t) in &weights.tensors {
            let r = &back.tensors[name];
            prop_assert_eq!(r.shape(), t.shape());
            for (a, b) in t.data().iter().zip(r.data()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
        prop_assert_eq!(weights_to_bytes(&back).unwrap(), bytes);
    }

    #[test]
    fn dice_is_a_symmetric_unit_interval_score(
        (h, w) in (1usize..=10, 1usize..=10),
        seed in any::<u64>(),
    ) {
        let mut rng = SeededRng::new(seed);
        let bits = |rng: &mut SeededRng| -> Vec<u8> {
            (0..h * w).map(|_| (rng.next_below(2)) as u8).collect()
        };
        let a = Mask::new(h, w, bits(&mut rng)).unwrap();
        let b = Mask::new(h, w, bits(&mut rng)).unwrap();
        let d = dice(&a, &b).unwrap();
        prop_assert!((0.0..=1.0).contains(&d), "dice {d}");
        prop_assert_eq!(d, dice(&b, &a).unwrap());
        prop_assert_eq!(dice(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn minkowski_order_two_is_euclidean(
        pairs in prop::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 1..=8),
        lambda in 0.1f64..10.0,
    ) {
        let x: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let y: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        let d = minkowski_distance(&x, &y, 2.0).unwrap();
        let euclid = x
            .iter()
            .zip(&y)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        prop_assert!((d - euclid).abs() <= 1e-9 * euclid.max(1.0), "{d} vs {euclid}");

        let xs: Vec<f64> = x.iter().map(|v| v * lambda).collect();
        let ys: Vec<f64> = y.iter().map(|v| v * lambda).collect();
        let scaled = minkowski_distance(&xs, &ys, 2.0).unwrap();
        prop_assert!(
            (scaled - lambda * d).abs() <= 1e-9 * (lambda * d).max(1.0),
            "{scaled} vs {}", lambda * d
        );
    }

    #[test]
    fn run_config_text_round_trips(
        seed in any::<u64>(),
        model in prop::sample::select(vec![ModelChoice::M1, ModelChoice::M2One, ModelChoice::M2Dual]),
        folds in 2usize..=50,
        epochs in 1usize..=100,
        batch_size in 1usize..=256,
        lr in 1e-5f64..1e-1,
        val_fraction in 0.05f64..0.5,
        use_mask in any::<bool>(),
        seg_threshold in any::<u8>(),
        brightness in any::<i16>(),
        rotate in -360.0f32..360.0,
    ) {
        let mut cfg = RunConfig::default();
        cfg.seed = seed;
        cfg.model = model;
        cfg.folds = folds;
        cfg.epochs = epochs;
        cfg.batch_size = batch_size;
        cfg.lr = lr;
        cfg.val_fraction = val_fraction;
        cfg.use_mask = use_mask;
        cfg.seg_threshold = seg_threshold;
        cfg.brightness_min = brightness;
        cfg.rotate_max = rotate;
        prop_assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    // The encoder halves and the decoder doubles, so any input whose edge is
    // a multiple of 2^depth must come back at its own resolution, as
    // probabilities.
    #[test]
    fn unet_output_matches_input_resolution(
        depth in 1usize..=3,
        base_channels in 1usize..=3,
        mult in 1usize..=2,
        seed in any::<u64>(),
    ) {
        let input_size = mult << depth;
        let cfg = UNetConfig { depth, base_channels, input_size };
        let net = build_unet(&cfg, &SeededRng::new(seed)).unwrap();
        let mut rng = SeededRng::new(seed ^ 0x9e37);
        let n = input_size * input_size;
        let x = Tensor::new(
            vec![1, input_size, input_size],
            (0..n).map(|_| rng.next_f32()).collect(),
        )
        .unwrap();
        let out = unet_forward(&net, &x).unwrap();
        prop_assert_eq!(out.shape(), &[1, input_size, input_size]);
        prop_assert!(out.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}
