use proptest::prelude::*;

use splitjscc::channel::{capacity, digital_bits, power_normalize, AwgnChannel, POWER};
use splitjscc::complexity::{conv_macs, flops_vs_bandwidth_frontier};
use splitjscc::data::{encode_cifar100, parse_cifar100, AugmentConfig};
use splitjscc::data::{synthetic_dataset, SplitTag, IMAGE_LEN};
use splitjscc::harness::{uniform_flops, ExperimentConfig};
use splitjscc::models::{bandwidth, build_codec, BackboneConfig, CodecConfig, SplitModel, SplitPoint};
use splitjscc::nn::{conv2d, softmax_rows, Mode};
use splitjscc::pruning::{apply_prune, select_filters, FilterSaliency, PruneMask};
use splitjscc::report::{from_csv, to_csv, ResultRow};
use splitjscc::{Rng, Tensor};

fn small() -> BackboneConfig {
    BackboneConfig::vgg16(5).with_width_scale(1.0 / 16.0)
}

fn max_diff(a: &Tensor, b: &Tensor) -> f64 {
    a.to_vec().iter().zip(&b.to_vec()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn row(split: usize, flops: u64, bw: usize, acc: f64, base: f64) -> ResultRow {
    ResultRow {
        split,
        ratio: 0.25,
        c_enc: 8,
        bandwidth: bw,
        snr_db: 10.0,
        accuracy: acc,
        device_flops: flops,
        baseline_accuracy: base,
        seed: 0,
        split_accuracy: base,
        achieved_ratio: 0.25,
        digital_bits: 1.0,
        bandwidth_reduction: 1.0,
        config_hash: "00ff".into(),
        pretrain_s: 0.0,
        prune_s: 0.0,
        codec_s: 0.0,
        e2e_s: 0.0,
        eval_s: 0.0,
    }
}

fn arb_row() -> impl Strategy<Value = ResultRow> {
    (
        (1usize..=5, 0.0..0.9f64, 1usize..512, 1usize..100_000, -10.0..30.0f64, 0.0..=1.0f64),
        (any::<u64>(), 0.0..=1.0f64, any::<u64>(), "[0-9a-f]{8}", 0.0..1e4f64, -1e3..1e3f64),
    )
        .prop_map(|((split, ratio, c_enc, bw, snr, acc), (flops, base, seed, hash, t, bits))| ResultRow {
            split,
            ratio,
            c_enc,
            bandwidth: bw,
            snr_db: snr,
            accuracy: acc,
            device_flops: flops,
            baseline_accuracy: base,
            seed,
            split_accuracy: base,
            achieved_ratio: ratio / 2.0,
            digital_bits: bits,
            bandwidth_reduction: 3072.0 / bw as f64,
            config_hash: hash,
            pretrain_s: t,
            prune_s: t / 3.0,
            codec_s: 0.1,
            e2e_s: 1e-9,
            eval_s: t * 7.0,
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn power_normalize_gives_unit_power(
        rows in 1usize..5,
        b in 1usize..300,
        scale in 1e-3..1e3f64,
        seed in any::<u64>(),
    ) {
        let mut rng = Rng::new(seed);
        let x = Tensor::from_vec(&[rows, b], (0..rows * b).map(|_| scale * rng.normal()).collect()).unwrap();
        let s = power_normalize(&x, POWER).unwrap().symbols.to_vec();
        for r in s.chunks(b) {
            let p = r.iter().map(|v| v * v).sum::<f64>() / b as f64;
            prop_assert!((p - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn capacity_strictly_increasing(a in -30.0..40.0f64, d in 1e-3..10.0f64) {
        prop_assert!(capacity(a) < capacity(a + d));
        prop_assert!(capacity(a) > 0.0);
    }

    #[test]
    fn digital_bits_monotone(snr in -20.0..30.0f64, b in 1usize..5000, db in 1usize..100) {
        prop_assert!(digital_bits(snr, b) < digital_bits(snr + 0.5, b));
        prop_assert!(digital_bits(snr, b) < digital_bits(snr, b + db));
    }

    #[test]
    fn conv_output_shape(h in 2usize..12, w in 2usize..12, k in prop::sample::select(vec![1usize, 3]), stride in 1usize..=2, seed in any::<u64>()) {
        let pad = k / 2;
        let mut rng = Rng::new(seed);
        let x = Tensor::from_vec(&[1, 2, h, w], (0..2 * h * w).map(|_| rng.normal()).collect()).unwrap();
        let wt = Tensor::from_vec(&[3, 2, k, k], (0..6 * k * k).map(|_| rng.normal()).collect()).unwrap();
        let y = conv2d(&x, &wt, &Tensor::zeros(&[3]), stride, pad).unwrap();
        prop_assert_eq!(y.shape(), &[1, 3, (h + 2 * pad - k) / stride + 1, (w + 2 * pad - k) / stride + 1][..]);
    }

    #[test]
    fn conv_macs_counts_every_multiply(ci in 1usize..5, co in 1usize..5, k in 1usize..4, oh in 1usize..6, ow in 1usize..6) {
        let mut n = 0u64;
        for _o in 0..co { for _y in 0..oh { for _x in 0..ow { for _c in 0..ci { for _i in 0..k { for _j in 0..k {
            n += 1;
        }}}}}}
        prop_assert_eq!(conv_macs(ci, co, k, k, oh, ow), n);
    }

    #[test]
    fn softmax_rows_sum_to_one(v in prop::collection::vec(-700.0..700.0f64, 1..40), k in 1usize..5) {
        let n = v.len() / k * k;
        prop_assume!(n > 0);
        let p = softmax_rows(&v[..n], k);
        for r in p.chunks(k) {
            prop_assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(r.iter().all(|&x| (0.0..=1.0).contains(&x)));
        }
    }

    #[test]
    fn select_filters_scale_invariant(
        raw in prop::collection::vec(prop::collection::vec(0.0..10.0f64, 1..8), 1..5),
        exps in prop::collection::vec(-20i32..20, 5),
        n_frac in 0.0..1.0f64,
        min_filters in 0usize..3,
    ) {
        let widths: Vec<usize> = raw.iter().map(Vec::len).collect();
        let floor: usize = widths.iter().map(|&w| w.min(min_filters)).sum();
        let n = ((widths.iter().sum::<usize>() - floor) as f64 * n_frac) as usize;
        let a = select_filters(&FilterSaliency::from_raw(raw.clone()), n, min_filters).unwrap();
        // powers of two keep the normalized scores bit-identical
        let scaled: Vec<Vec<f64>> = raw.iter().zip(&exps).map(|(l, &e)| l.iter().map(|v| v * 2f64.powi(e)).collect()).collect();
        let b = select_filters(&FilterSaliency::from_raw(scaled), n, min_filters).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(a.removed(), n);
        for (k, &w) in a.kept_widths().iter().zip(&widths) {
            prop_assert!(*k >= w.min(min_filters));
        }
    }

    #[test]
    fn flops_monotone_in_ratio(split in 1usize..=5, r1 in 0.0..0.9f64, r2 in 0.0..0.9f64, c_enc in 1usize..64) {
        let f = |r| {
            let cfg = ExperimentConfig { split: SplitPoint::new(split).unwrap(), pruning_ratio: r, c_enc, ..ExperimentConfig::default() };
            uniform_flops(&cfg).unwrap().0.device_total
        };
        let (lo, hi) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
        prop_assert!(f(hi) <= f(lo));
    }

    #[test]
    fn prefix_flops_monotone_in_split(ratio in 0.0..0.9f64) {
        let cfg = ExperimentConfig { split: SplitPoint::new(5).unwrap(), pruning_ratio: ratio, ..ExperimentConfig::default() };
        let cum = uniform_flops(&cfg).unwrap().0.cumulative_by_split;
        let v: Vec<u64> = (1..=5).map(|k| cum[&k]).collect();
        prop_assert!(v.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn csv_round_trip(rows in prop::collection::vec(arb_row(), 0..6)) {
        prop_assert_eq!(from_csv(&to_csv(&rows).unwrap()).unwrap(), rows);
    }

    #[test]
    fn frontier_is_nondominated_and_covers(
        pts in prop::collection::vec((0u64..20, 1usize..20, 0.0..=1.0f64), 0..25),
        floor in 0.0..0.3f64,
    ) {
        let rows: Vec<ResultRow> = pts.iter().map(|&(f, b, a)| row(2, f, b, a, 0.8)).collect();
        let front = flops_vs_bandwidth_frontier(&rows, floor);
        let ok: Vec<&ResultRow> = rows.iter().filter(|r| r.accuracy >= r.baseline_accuracy - floor).collect();
        let dominates = |o: &ResultRow, r: &ResultRow| {
            o.device_flops <= r.device_flops && o.bandwidth <= r.bandwidth && (o.device_flops < r.device_flops || o.bandwidth < r.bandwidth)
        };
        prop_assert!(front.windows(2).all(|w| w[0].device_flops <= w[1].device_flops));
        for f in &front {
            prop_assert!(f.accuracy >= f.baseline_accuracy - floor);
            prop_assert!(!ok.iter().any(|o| dominates(o, f)));
        }
        for r in &ok {
            prop_assert!(front.iter().any(|f| dominates(f, r) || (f.device_flops == r.device_flops && f.bandwidth == r.bandwidth)));
        }
    }

    #[test]
    fn cifar_bytes_round_trip(recs in prop::collection::vec((0u8..20, 0u8..100, prop::collection::vec(any::<u8>(), IMAGE_LEN)), 1..4)) {
        let mut bytes = Vec::new();
        for (c, f, px) in &recs {
            bytes.push(*c);
            bytes.push(*f);
            bytes.extend_from_slice(px);
        }
        let ds = parse_cifar100(&bytes, SplitTag::Train, std::path::Path::new("mem")).unwrap();
        prop_assert_eq!(ds.len(), recs.len());
        prop_assert_eq!(encode_cifar100(&ds), bytes);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn augmentation_keeps_labels(seed in any::<u64>(), idx in prop::collection::vec(0usize..15, 1..10), pad in 0usize..6, p in 0.0..=1.0f64) {
        let ds = synthetic_dataset(3, 5, &mut Rng::new(seed)).unwrap();
        let aug = AugmentConfig { pad, hflip_prob: p, ..AugmentConfig::default() };
        let mut rng = Rng::new(seed ^ 1);
        let b = ds.batch(&idx, Some((&aug, &mut rng))).unwrap();
        let want: Vec<usize> = idx.iter().map(|&i| ds.labels[i]).collect();
        prop_assert_eq!(b.labels, want);
        prop_assert_eq!(b.images.shape(), &[idx.len(), 3, 32, 32][..]);
    }

    #[test]
    fn codec_shapes_follow_bandwidth_law(split in 1usize..=5, c_enc in 1usize..40, seed in any::<u64>()) {
        let shape = small().feature_shape(split);
        let codec = build_codec(shape, &CodecConfig::new(c_enc), &mut Rng::new(seed)).unwrap();
        let x = Tensor::zeros(&[2, shape.0, shape.1, shape.2]);
        let z = codec.encoder.forward(&x).unwrap();
        prop_assert_eq!(z.numel(), 2 * bandwidth(shape, c_enc).unwrap());
        let y = codec.decoder.forward(&z, Mode::BatchStats).unwrap();
        prop_assert_eq!(y.shape(), x.shape());
    }

    #[test]
    fn pruning_a_dead_filter_changes_nothing(layer_pick in 0usize..100, filter_pick in 0usize..100, split in 1usize..=3, seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let mut m = SplitModel::new(&small(), SplitPoint::new(split).unwrap(), &mut rng).unwrap();
        m.attach_codec(&CodecConfig::new(2), &mut rng).unwrap();
        let x = Tensor::from_vec(&[2, 3, 32, 32], (0..2 * IMAGE_LEN).map(|_| rng.normal()).collect()).unwrap();
        m.forward(&x, Mode::Train).unwrap();
        let widths = m.device_widths();
        let layer = layer_pick % widths.len();
        let filter = filter_pick % widths[layer];
        let u = m.device.units().nth(layer).unwrap();
        u.bn.gamma.update_data(|g| g[filter] = 0.0);
        u.bn.beta.update_data(|b| b[filter] = 0.0);
        let mut mask = PruneMask::all_keep(&widths);
        mask.keep[layer][filter] = false;
        let p = apply_prune(&m, &mask).unwrap();
        let quiet = AwgnChannel::noiseless();
        let mut d = max_diff(&m.forward_plain(&x, Mode::Eval).unwrap(), &p.forward_plain(&x, Mode::Eval).unwrap());
        // the decoder regenerates every channel of the last layer, so only
        // earlier layers are dead end to end
        if layer + 1 < widths.len() {
            d = d.max(max_diff(
                &m.end_to_end_with(&x, Mode::Eval, &quiet, None).unwrap(),
                &p.end_to_end_with(&x, Mode::Eval, &quiet, None).unwrap(),
            ));
        }
        prop_assert!(d < 1e-12, "max change {}", d);
    }
}

#[test]
fn every_split_and_ratio_runs_end_to_end() {
    let cfg = small();
    for split in 1..=5 {
        for ratio in [0.0, 0.25, 0.5, 0.75] {
            let mut rng = Rng::new(split as u64);
            let m = SplitModel::new(&cfg, SplitPoint::new(split).unwrap(), &mut rng).unwrap();
            let mut p = apply_prune(&m, &PruneMask::uniform(&m.device_widths(), ratio)).unwrap();
            p.attach_codec(&CodecConfig::new(3), &mut rng).unwrap();
            let x = Tensor::from_vec(&[2, 3, 32, 32], (0..2 * IMAGE_LEN).map(|_| rng.normal()).collect()).unwrap();
            let y = p.end_to_end(&x, Mode::BatchStats).unwrap();
            assert_eq!(y.shape(), &[2, 5]);
            assert!(y.to_vec().iter().all(|v| v.is_finite()), "split {split} ratio {ratio}");
            assert_eq!(p.bandwidth(), Some(bandwidth(cfg.feature_shape(split), 3).unwrap()));
        }
    }
}
