//! Acceptance suite: one test per shipping criterion. Each test prints a
//! `[criterion N] PASS` line with its measured numbers; run with
//! `cargo test --test acceptance -- --nocapture` to see them. Criteria 3
//! and 4 share one trained network, so whichever runs first pays the
//! training time.

use densematch::eval::{threshold_sweep, CrossEvalMatrix, DEFAULT_THRESHOLDS};
use densematch::matcher::{
    guided_filter_volume, median_filter_volume, CostVolume, DisparityMap, VolumeDirection,
    INVALID_DISPARITY,
};
use densematch::gray::GrayImage;
use densematch::network::{NetworkConfig, NetworkWeights};
use densematch::pipeline::{run_pipeline, PipelineConfig};
use densematch::refine::{
    fill_background, fill_foreground, lr_consistency_check, Region, RegionMask,
};
use densematch::synthetic::shifted_texture_pair;
use densematch::trainer::{
    batch_loss, batch_loss_and_gradients, forward_sample, sample_training_example, train,
    TrainConfig, Trainer, TrainingPair, TrainingSet,
};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::sync::LazyLock;
use std::time::Instant;

const TRAIN_DISPARITY: usize = 8;

fn training_set(seeds: &[u64]) -> TrainingSet {
    let pairs = seeds
        .iter()
        .map(|seed| {
            let pair = shifted_texture_pair(96, 48, TRAIN_DISPARITY, *seed).unwrap();
            TrainingPair::new(pair.left, pair.right, pair.ground_truth).unwrap()
        })
        .collect();
    TrainingSet::new(pairs).unwrap()
}

struct TrainedFixture {
    weights: NetworkWeights,
    network: NetworkConfig,
    held_out_margin: f64,
    frozen_losses: Vec<f32>,
    train_seconds: f64,
}

static TRAINED: LazyLock<TrainedFixture> = LazyLock::new(|| {
    let network = NetworkConfig::default();
    let config = TrainConfig {
        iterations: 500,
        batch_size: 64,
        learning_rate: 3e-4,
        seed: 21,
        ..TrainConfig::default()
    };
    let set = training_set(&[11, 12, 13]);
    let start = Instant::now();
    let outcome = train(&set, network, &config).expect("training runs to completion");
    let train_seconds = start.elapsed().as_secs_f64();

    let held_out = training_set(&[31, 32]);
    let mut rng = ChaCha8Rng::seed_from_u64(777);
    let mut margin_sum = 0.0f64;
    let samples = 1000usize;
    for _ in 0..samples {
        let sample = sample_training_example(&held_out, &config, &mut rng).unwrap();
        let (s_pos, s_neg) =
            forward_sample(&sample, config.patch_size, &outcome.weights).unwrap();
        margin_sum += (s_pos - s_neg) as f64;
    }

    // With the training margin every hinge on this easy synthetic batch is
    // already inactive at initialization (loss 0 throughout), which would
    // make the non-increase check vacuous. A wide margin keeps every sample
    // active so the repeated steps actually exercise the optimizer.
    let frozen_config = TrainConfig {
        margin: 2.0,
        ..config.clone()
    };
    let mut trainer = Trainer::new(network, frozen_config).unwrap();
    let frozen_batch = trainer.sample_batch(&set, 9000).unwrap();
    let frozen_losses: Vec<f32> = (0..10)
        .map(|_| trainer.step(&frozen_batch).unwrap())
        .collect();

    TrainedFixture {
        weights: outcome.weights,
        network,
        held_out_margin: margin_sum / samples as f64,
        frozen_losses,
        train_seconds,
    }
});

#[test]
fn criterion_1_parameter_counts() {
    let expected = [
        (2usize, 37_568usize),
        (3, 111_360),
        (4, 222_016),
        (5, 369_536),
        (6, 553_920),
    ];
    for (layers, count) in expected {
        let config = NetworkConfig {
            num_layers: layers,
            feature_maps: 64,
        };
        assert_eq!(
            config.parameter_count(),
            count,
            "[criterion 1] FAIL - {layers} layers: expected {count} parameters, got {}",
            config.parameter_count()
        );
    }
    println!(
        "[criterion 1] PASS - 2..6 layers at 64 maps give 37568/111360/222016/369536/553920 parameters"
    );
}

#[test]
fn criterion_2_gradient_check() {
    let start = Instant::now();
    let network = NetworkConfig::default();
    let mut weights = NetworkWeights::init(network, 42).unwrap();
    let config = TrainConfig {
        batch_size: 3,
        seed: 4242,
        ..TrainConfig::default()
    };
    let set = training_set(&[51]);
    let trainer = Trainer::new(network, config.clone()).unwrap();
    let batch = trainer.sample_batch(&set, 0).unwrap();

    // A wide margin keeps every sample's hinge strictly active, so the loss
    // is smooth at the evaluation point and central differences are valid.
    let margin = 2.0f32;
    let (_, grads) = batch_loss_and_gradients(&weights, &batch, margin).unwrap();

    let step = 1e-3f32;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut checked = 0usize;
    let mut max_rel = 0.0f64;
    for layer in 0..network.num_layers {
        let kernel_len = weights.layers()[layer].kernel().len();
        let bias_len = weights.layers()[layer].bias().len();
        let mut picks: Vec<(bool, usize)> = (0..10)
            .map(|_| (true, rng.random_range(0..kernel_len)))
            .collect();
        picks.push((false, rng.random_range(0..bias_len)));
        for (is_kernel, idx) in picks {
            let set_param = |w: &mut NetworkWeights, v: f32| {
                let t = if is_kernel {
                    w.layers_mut()[layer].kernel_mut()
                } else {
                    w.layers_mut()[layer].bias_mut()
                };
                t.data_mut()[idx] = v;
            };
            let original = if is_kernel {
                weights.layers()[layer].kernel().data()[idx]
            } else {
                weights.layers()[layer].bias().data()[idx]
            };
            set_param(&mut weights, original + step);
            let loss_plus = batch_loss(&weights, &batch, margin).unwrap();
            set_param(&mut weights, original - step);
            let loss_minus = batch_loss(&weights, &batch, margin).unwrap();
            set_param(&mut weights, original);

            let fd = (loss_plus as f64 - loss_minus as f64) / (2.0 * step as f64);
            let analytic = grads[2 * layer + usize::from(!is_kernel)][idx] as f64;
            // Below the f32 rounding floor of the finite difference the
            // comparison carries no signal, so tiny gradients are compared
            // on that absolute scale instead.
            let rel = (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-2);
            assert!(
                rel <= 1e-2,
                "[criterion 2] FAIL - layer {layer} {}[{idx}]: analytic {analytic:.6e} vs finite difference {fd:.6e} (relative error {rel:.3e})",
                if is_kernel { "kernel" } else { "bias" }
            );
            checked += 1;
            max_rel = max_rel.max(rel);
        }
    }
    let seconds = start.elapsed().as_secs_f64();
    assert!(checked >= 50, "[criterion 2] FAIL - only {checked} parameters sampled");
    assert!(seconds < 120.0, "[criterion 2] FAIL - took {seconds:.0}s, budget 120s");
    println!(
        "[criterion 2] PASS - {checked} sampled parameters across 5 layers, max relative error {max_rel:.2e} at step 1e-3, {seconds:.1}s"
    );
}

#[test]
fn criterion_3_desk_scale_training() {
    let f = &*TRAINED;
    assert!(
        f.held_out_margin > 0.2,
        "[criterion 3] FAIL - mean(s_pos - s_neg) on 1000 held-out samples is {:.4}, needed > 0.2",
        f.held_out_margin
    );
    for i in 1..f.frozen_losses.len() {
        assert!(
            f.frozen_losses[i] <= f.frozen_losses[i - 1],
            "[criterion 3] FAIL - frozen-batch loss rose at step {i}: {:?}",
            f.frozen_losses
        );
    }
    assert!(
        f.frozen_losses[9] < f.frozen_losses[0],
        "[criterion 3] FAIL - frozen-batch loss never moved: {:?}",
        f.frozen_losses
    );
    assert!(
        f.train_seconds < 900.0,
        "[criterion 3] FAIL - training took {:.0}s, budget 900s",
        f.train_seconds
    );
    println!(
        "[criterion 3] PASS - 500 iterations at batch 64 in {:.0}s; held-out margin {:.4} (> 0.2 on 1000 samples); frozen-batch loss {:.5} -> {:.5} over 10 non-increasing steps",
        f.train_seconds,
        f.held_out_margin,
        f.frozen_losses[0],
        f.frozen_losses[9]
    );
}

#[test]
fn criterion_4_end_to_end_synthetic_recovery() {
    let f = &*TRAINED;
    let pair = shifted_texture_pair(128, 64, TRAIN_DISPARITY, 999).unwrap();
    let config = PipelineConfig::new(16);
    let start = Instant::now();
    let out = run_pipeline(&pair.left, &pair.right, &f.weights, &config).unwrap();
    let seconds = start.elapsed().as_secs_f64();

    let (w, h) = (out.refined.width(), out.refined.height());
    assert_eq!(
        out.refined.valid_count(),
        w * h,
        "[criterion 4] FAIL - refined map still has invalid pixels"
    );
    // Interior excludes the feature border (half the receptive field) and
    // the left band where not every disparity hypothesis has a
    // correspondence inside the right image.
    let border = f.network.receptive_field() / 2;
    let (mut within, mut total) = (0usize, 0usize);
    for y in border..h - border {
        for x in config.matching.max_disparity..w - border {
            total += 1;
            if (out.refined.get(x, y) - TRAIN_DISPARITY as f32).abs() <= 1.0 {
                within += 1;
            }
        }
    }
    let percent = 100.0 * within as f64 / total as f64;
    assert!(
        percent >= 95.0,
        "[criterion 4] FAIL - {percent:.2}% of interior pixels within +-1 of {TRAIN_DISPARITY}, needed >= 95%"
    );
    assert!(seconds < 120.0, "[criterion 4] FAIL - took {seconds:.0}s, budget 120s");
    println!(
        "[criterion 4] PASS - shift-8 pair at 16 hypotheses: {percent:.2}% of {total} interior pixels within +-1, zero invalid pixels, {seconds:.1}s"
    );
}

fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let mut i = i;
    loop {
        if i < 0 {
            i = -i;
        } else if i >= n {
            i = 2 * (n - 1) - i;
        } else {
            return i as usize;
        }
    }
}

#[test]
fn criterion_5_filter_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    let (h, w) = (9usize, 9usize);

    let slices = 100usize;
    let values: Vec<f32> = (0..slices * h * w)
        .map(|_| rng.random_range(-1.0f32..1.0))
        .collect();
    let volume =
        CostVolume::from_values(VolumeDirection::LeftReference, slices, w, h, values).unwrap();
    let filtered = median_filter_volume(&volume);
    for d in 0..slices {
        let src = volume.slice(d);
        let dst = filtered.slice(d);
        for y in 0..h {
            for x in 0..w {
                let mut window = Vec::with_capacity(25);
                for dy in -2isize..=2 {
                    for dx in -2isize..=2 {
                        window
                            .push(src[reflect(y as isize + dy, h) * w + reflect(x as isize + dx, w)]);
                    }
                }
                window.sort_by(f32::total_cmp);
                assert_eq!(
                    dst[y * w + x],
                    window[12],
                    "[criterion 5] FAIL - median mismatch at slice {d}, pixel ({x},{y})"
                );
            }
        }
    }

    let guide_values: Vec<f32> = (0..h * w).map(|_| rng.random_range(0.0f32..255.0)).collect();
    let guide = GrayImage::new(w, h, guide_values).unwrap();

    let constant = CostVolume::from_values(
        VolumeDirection::LeftReference,
        1,
        w,
        h,
        vec![0.37f32; h * w],
    )
    .unwrap();
    let out = guided_filter_volume(&constant, &guide, 8, 10.0).unwrap();
    let constant_err = out
        .slice(0)
        .iter()
        .map(|v| (v - 0.37).abs())
        .fold(0.0f32, f32::max);
    assert!(
        constant_err <= 1e-6,
        "[criterion 5] FAIL - constant slice not preserved, max deviation {constant_err:.2e}"
    );

    let identity_values: Vec<f32> = (0..h * w).map(|_| rng.random_range(0.0f32..1.0)).collect();
    let identity_guide = GrayImage::new(w, h, identity_values.clone()).unwrap();
    let identity_volume = CostVolume::from_values(
        VolumeDirection::LeftReference,
        1,
        w,
        h,
        identity_values.clone(),
    )
    .unwrap();
    let out = guided_filter_volume(&identity_volume, &identity_guide, 8, 1e-6).unwrap();
    let identity_err = out
        .slice(0)
        .iter()
        .zip(&identity_values)
        .map(|(o, i)| (o - i).abs())
        .fold(0.0f32, f32::max);
    assert!(
        identity_err <= 1e-4,
        "[criterion 5] FAIL - near-zero smoothing should reproduce the slice when it matches the guide, max deviation {identity_err:.2e}"
    );

    let mean_values: Vec<f32> = (0..h * w).map(|_| rng.random_range(-1.0f32..1.0)).collect();
    let global_mean =
        (mean_values.iter().map(|v| *v as f64).sum::<f64>() / (h * w) as f64) as f32;
    let mean_volume =
        CostVolume::from_values(VolumeDirection::LeftReference, 1, w, h, mean_values).unwrap();
    let out = guided_filter_volume(&mean_volume, &guide, 8, 1e9).unwrap();
    let mean_err = out
        .slice(0)
        .iter()
        .map(|v| (v - global_mean).abs())
        .fold(0.0f32, f32::max);
    assert!(
        mean_err <= 1e-3,
        "[criterion 5] FAIL - huge smoothing should flatten to the window mean, max deviation {mean_err:.2e}"
    );

    println!(
        "[criterion 5] PASS - median equals 25-element sort on 100 random 9x9 slices; guided filter holds constant ({constant_err:.1e}), identity ({identity_err:.1e} <= 1e-4), and flat-mean ({mean_err:.1e} <= 1e-3) limits"
    );
}

fn shuffled(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    order
}

fn random_map(w: usize, h: usize, invalid_share: f64, rng: &mut ChaCha8Rng) -> DisparityMap {
    let data = (0..w * h)
        .map(|_| {
            if rng.random_range(0.0..1.0) < invalid_share {
                INVALID_DISPARITY
            } else {
                rng.random_range(0.0f32..24.0)
            }
        })
        .collect();
    DisparityMap::new(w, h, data).unwrap()
}

fn random_mask(w: usize, h: usize, rng: &mut ChaCha8Rng) -> RegionMask {
    let mut mask = RegionMask::filled(w, h, Region::Background);
    for y in 0..h {
        for x in 0..w {
            if rng.random_range(0..2u32) == 1 {
                mask.set(x, y, Region::Foreground);
            }
        }
    }
    mask
}

/// The background rule evaluated directly from the snapshot.
fn oracle_background_value(
    map: &DisparityMap,
    mask: &RegionMask,
    x: usize,
    y: usize,
) -> Option<f32> {
    let w = map.width();
    let hit = |sx: usize| map.is_valid(sx, y) && mask.get(sx, y) == Region::Background;
    for sx in x + 1..w {
        if hit(sx) {
            return Some(map.get(sx, y));
        }
    }
    for sx in (0..x).rev() {
        if hit(sx) {
            return Some(map.get(sx, y));
        }
    }
    let mut values: Vec<f32> = (0..w * map.height())
        .filter(|i| map.is_valid(i % w, i / w) && mask.get(i % w, i / w) == Region::Background)
        .map(|i| map.data()[i])
        .collect();
    if values.is_empty() {
        return None;
    }
    values.sort_by(f32::total_cmp);
    Some(values[(values.len() - 1) / 2])
}

#[test]
fn criterion_6_refinement_determinism() {
    let mut rng = ChaCha8Rng::seed_from_u64(60);
    let (w, h) = (32usize, 20usize);

    // Consistency rule on random fixtures, recomputed pixel by pixel in a
    // shuffled order; output must not depend on processing order.
    for _ in 0..5 {
        let left = random_map(w, h, 0.25, &mut rng);
        let right = random_map(w, h, 0.25, &mut rng);
        let checked = lr_consistency_check(&left, &right, 1.1).unwrap();
        let mut oracle = left.clone();
        for i in shuffled(w * h, &mut rng) {
            let (x, y) = (i % w, i / w);
            if !left.is_valid(x, y) {
                continue;
            }
            let d = left.get(x, y);
            let xr = x as i64 - d.round() as i64;
            let keep = xr >= 0
                && (xr as usize) < w
                && right.is_valid(xr as usize, y)
                && (d - right.get(xr as usize, y)).abs() <= 1.1;
            if !keep {
                oracle.set(x, y, INVALID_DISPARITY);
            }
        }
        assert_eq!(
            checked.data(),
            oracle.data(),
            "[criterion 6] FAIL - consistency check disagrees with order-free evaluation"
        );
    }

    // Fill rules on random fixtures against shuffled-order snapshot oracles.
    for _ in 0..5 {
        let map = random_map(w, h, 0.4, &mut rng);
        let mask = random_mask(w, h, &mut rng);

        let filled = fill_background(&map, &mask).unwrap();
        let mut oracle = map.clone();
        for i in shuffled(w * h, &mut rng) {
            let (x, y) = (i % w, i / w);
            if map.is_valid(x, y) || mask.get(x, y) != Region::Background {
                continue;
            }
            oracle.set(x, y, oracle_background_value(&map, &mask, x, y).unwrap_or(0.0));
        }
        assert_eq!(
            filled.data(),
            oracle.data(),
            "[criterion 6] FAIL - background fill disagrees with order-free evaluation"
        );

        let filled = fill_foreground(&map, &mask).unwrap();
        let mut oracle = map.clone();
        const DIRS: [(i64, i64); 8] = [
            (1, 0),
            (-1, 0),
            (0, 1),
            (0, -1),
            (1, 1),
            (1, -1),
            (-1, 1),
            (-1, -1),
        ];
        for i in shuffled(w * h, &mut rng) {
            let (x, y) = (i % w, i / w);
            if map.is_valid(x, y) || mask.get(x, y) != Region::Foreground {
                continue;
            }
            let mut sum = 0.0f64;
            let mut hits = 0usize;
            for (dx, dy) in DIRS {
                let (mut cx, mut cy) = (x as i64, y as i64);
                loop {
                    cx += dx;
                    cy += dy;
                    if cx < 0 || cy < 0 || cx >= w as i64 || cy >= h as i64 {
                        break;
                    }
                    if map.is_valid(cx as usize, cy as usize)
                        && mask.get(cx as usize, cy as usize) == Region::Foreground
                    {
                        sum += map.get(cx as usize, cy as usize) as f64;
                        hits += 1;
                        break;
                    }
                }
            }
            let value = if hits > 0 {
                (sum / hits as f64) as f32
            } else {
                oracle_background_value(&map, &mask, x, y).unwrap_or(0.0)
            };
            oracle.set(x, y, value);
        }
        assert_eq!(
            filled.data(),
            oracle.data(),
            "[criterion 6] FAIL - foreground fill disagrees with order-free evaluation"
        );
    }

    // Consistency examples: match kept, disagreement dropped, missing
    // correspondence dropped.
    let mut left = DisparityMap::filled_invalid(8, 1);
    let mut right = DisparityMap::filled_invalid(8, 1);
    left.set(5, 0, 5.0);
    right.set(0, 0, 5.0);
    let checked = lr_consistency_check(&left, &right, 1.1).unwrap();
    assert_eq!(checked.get(5, 0), 5.0, "[criterion 6] FAIL - exact match must survive");

    right.set(0, 0, 3.0);
    let checked = lr_consistency_check(&left, &right, 1.1).unwrap();
    assert!(
        !checked.is_valid(5, 0),
        "[criterion 6] FAIL - disagreement of 2 must be invalidated"
    );

    let mut left = DisparityMap::filled_invalid(8, 1);
    left.set(2, 0, 5.0);
    let checked = lr_consistency_check(&left, &right, 1.1).unwrap();
    assert!(
        !checked.is_valid(2, 0),
        "[criterion 6] FAIL - correspondence outside the image must be invalidated"
    );

    // Hand-traced background fills.
    let map = DisparityMap::new(4, 1, vec![3.0, INVALID_DISPARITY, INVALID_DISPARITY, 4.0]).unwrap();
    let mask = RegionMask::filled(4, 1, Region::Background);
    let filled = fill_background(&map, &mask).unwrap();
    assert_eq!(
        filled.data(),
        &[3.0, 4.0, 4.0, 4.0],
        "[criterion 6] FAIL - rightward scan fill"
    );

    let map = DisparityMap::new(2, 1, vec![INVALID_DISPARITY, 7.0]).unwrap();
    let mask = RegionMask::filled(2, 1, Region::Background);
    let filled = fill_background(&map, &mask).unwrap();
    assert_eq!(filled.data(), &[7.0, 7.0], "[criterion 6] FAIL - single-neighbor fill");

    let map = DisparityMap::new(2, 1, vec![INVALID_DISPARITY, 5.0]).unwrap();
    let mut mask = RegionMask::filled(2, 1, Region::Background);
    mask.set(0, 0, Region::Foreground);
    let filled = fill_background(&map, &mask).unwrap();
    assert!(
        !filled.is_valid(0, 0),
        "[criterion 6] FAIL - foreground holes are not background-filled"
    );

    // Hand-traced foreground fills: two vertical hits average; a full
    // neighborhood of one value reproduces it; no hit falls back to the
    // background rule.
    let mut map = DisparityMap::filled_invalid(3, 3);
    map.set(1, 0, 10.0);
    map.set(1, 2, 20.0);
    let mask = RegionMask::filled(3, 3, Region::Foreground);
    let filled = fill_foreground(&map, &mask).unwrap();
    assert_eq!(
        filled.get(1, 1),
        15.0,
        "[criterion 6] FAIL - north/south average"
    );

    let mut map = DisparityMap::new(3, 3, vec![9.0; 9]).unwrap();
    map.set(1, 1, INVALID_DISPARITY);
    let filled = fill_foreground(&map, &mask).unwrap();
    assert_eq!(
        filled.get(1, 1),
        9.0,
        "[criterion 6] FAIL - uniform neighborhood average"
    );

    let map = DisparityMap::new(3, 1, vec![5.0, INVALID_DISPARITY, INVALID_DISPARITY]).unwrap();
    let mut mask = RegionMask::filled(3, 1, Region::Background);
    mask.set(1, 0, Region::Foreground);
    let filled = fill_foreground(&map, &mask).unwrap();
    assert_eq!(
        filled.get(1, 0),
        5.0,
        "[criterion 6] FAIL - zero-hit fallback to the background rule"
    );

    println!(
        "[criterion 6] PASS - consistency and both fills match order-free oracles on shuffled random fixtures; all hand-traced examples exact"
    );
}

#[test]
fn criterion_7_metric_contract() {
    let mut rng = ChaCha8Rng::seed_from_u64(70);
    for case in 0..100 {
        let (w, h) = (16usize, 12usize);
        let pred = random_map(w, h, 0.2, &mut rng);
        let mut gt = random_map(w, h, 0.3, &mut rng);
        gt.set(0, 0, 1.0);
        let sweep = threshold_sweep(&pred, &gt, &DEFAULT_THRESHOLDS).unwrap();
        for pair in sweep.windows(2) {
            assert!(
                pair[1].bad_percent <= pair[0].bad_percent,
                "[criterion 7] FAIL - case {case}: error rose from {:.4} to {:.4} as the threshold grew",
                pair[0].bad_percent,
                pair[1].bad_percent
            );
            assert_eq!(pair[0].valid_count, pair[1].valid_count);
        }
    }

    let gt = DisparityMap::new(4, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let pred = DisparityMap::new(4, 1, vec![1.0, 2.0, 3.0, 7.0]).unwrap();
    let sweep = threshold_sweep(&pred, &gt, &[2.0]).unwrap();
    assert_eq!(
        sweep[0].bad_percent, 25.0,
        "[criterion 7] FAIL - one of four pixels off by 3 at threshold 2 must score exactly 25.0"
    );

    println!(
        "[criterion 7] PASS - error is monotone non-increasing in the threshold on 100 random map pairs; the 4-pixel example scores exactly 25.0"
    );
}

#[test]
fn criterion_8_metric_determinism() {
    // Benchmark-scale accuracy needs multi-day training on full datasets
    // and is documented as out of scope; what ships is the guarantee that
    // the metric harness is bit-deterministic on any given inputs.
    let build = || {
        let mut rng = ChaCha8Rng::seed_from_u64(80);
        let mut csv = String::from("file,threshold,bad_count,valid_count,bad_percent\n");
        let mut matrix = CrossEvalMatrix::new(vec!["w".into()], vec!["d".into()]);
        for i in 0..3 {
            let pred = random_map(24, 16, 0.2, &mut rng);
            let mut gt = random_map(24, 16, 0.3, &mut rng);
            gt.set(0, 0, 1.0);
            for r in threshold_sweep(&pred, &gt, &DEFAULT_THRESHOLDS).unwrap() {
                csv.push_str(&format!(
                    "pair_{i},{},{},{},{:.4}\n",
                    r.threshold, r.bad_count, r.valid_count, r.bad_percent
                ));
                if r.threshold == 2.0 {
                    matrix.set(0, 0, r.bad_percent);
                }
            }
        }
        (csv, matrix.to_csv(), matrix.to_text())
    };
    let first = build();
    let second = build();
    assert_eq!(
        first, second,
        "[criterion 8] FAIL - repeated metric runs on identical inputs diverged"
    );
    println!(
        "[criterion 8] PASS - per-pair sweeps, CSV, and matrix renderings are byte-identical across repeated runs; benchmark-scale scores are documented targets, not gated"
    );
}
