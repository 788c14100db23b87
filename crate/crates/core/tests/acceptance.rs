//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each
//! and exits non-zero if any failed.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use hdemap::bench::{default_snr_grid, file_stem, evaluate_ber, BerCurve, BoundaryConfig, BoundaryGrid, Demapper};
use hdemap::bits::BitString;
use hdemap::catalog::{bundled_catalog, select};
use hdemap::channel::{
    generate_dataset, generate_sequences, read_dataset, write_dataset, ChannelConfig, Dataset, Split,
};
use hdemap::constellation::Constellation;
use hdemap::demap::{bit_llrs_from_symbols, exact_awgn_llrs, hard_decision, pseudo_loss_grad, symbol_logprobs_from_repr};
use hdemap::neural::io::{load_model, save_model, ModelHeader, MODEL_FORMAT_VERSION};
use hdemap::neural::train::{infer_bit_llrs, infer_logits, features_of, train, PlateauDecay, TrainConfig};
use hdemap::neural::{FeatureFlags, Mlp, MlpModel};
use hdemap::representation::{build_layout, LayoutMode, RepresentationLayout, SegmentKind};
use ndarray::Array2;
use num_complex::{Complex32, Complex64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::function::erf::erfc;

/// Test symbols per evaluated constellation in the BER criteria.
const TEST_SEQUENCES: usize = 200;
const MAX_RATIO: f64 = 1.5;
const RATIO_FLOOR: f64 = 1e-3;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn run(name: &str, f: impl FnOnce() -> Outcome) -> (String, bool, String) {
    let start = Instant::now();
    let o = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        outcome(false, format!("panicked: {msg}"))
    });
    let detail = format!("{} [{:.1}s]", o.detail, start.elapsed().as_secs_f64());
    println!("{name} {}: {detail}", if o.pass { "PASS" } else { "FAIL" });
    (name.to_string(), o.pass, detail)
}

fn q_function(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

fn a1() -> Outcome {
    let cat = bundled_catalog();
    let qpsk = select(&cat, &["QPSK"]).unwrap()[0];
    let mut details = Vec::new();
    let mut pass = true;
    for snr in [0.0, 5.0, 10.0] {
        let ch = ChannelConfig { snr_db_min: snr, snr_db_max: snr, block_size: 1024, ..Default::default() };
        let ds = generate_sequences(qpsk, &ch, Split::Test, 489).unwrap();
        let mut bits = 0u64;
        let mut errors = 0u64;
        for (_, sym, x) in ds.samples() {
            let decided = hard_decision(Complex64::new(x.re as f64, x.im as f64), qpsk);
            errors += qpsk.bit_mapping()[decided].hamming(&qpsk.bit_mapping()[sym]) as u64;
            bits += 2;
        }
        let p = q_function(10f64.powf(snr / 10.0).sqrt());
        let ber = errors as f64 / bits as f64;
        let sigma = (p * (1.0 - p) / bits as f64).sqrt();
        let z = (ber - p) / sigma;
        pass &= bits >= 1_000_000 && z.abs() <= 3.0;
        details.push(format!("{snr} dB: {ber:.4e} vs {p:.4e} ({z:+.2}σ, {bits} bits)"));
    }
    outcome(pass, details.join("; "))
}

/// Worst neural/hard ratio over bins where the hard oracle reaches the floor.
fn worst_ratio(curve: &BerCurve) -> (f64, f64, usize) {
    let mut worst = (0.0, f64::NAN);
    let mut bins = 0;
    for hard in curve.rows_for(Demapper::HardOracle) {
        if hard.ber < RATIO_FLOOR {
            continue;
        }
        bins += 1;
        let neural = curve.row(Demapper::Neural, hard.snr_db).unwrap();
        let r = neural.ber / hard.ber;
        if r > worst.0 {
            worst = (r, hard.snr_db);
        }
    }
    (worst.0, worst.1, bins)
}

fn ratio_criterion(model: &MlpModel, layout: &RepresentationLayout, eval: &[&Constellation]) -> Outcome {
    let ch = ChannelConfig::default();
    let mut pass = true;
    let mut details = Vec::new();
    for c in eval {
        let test = generate_sequences(c, &ch, Split::Test, TEST_SEQUENCES).unwrap();
        let curve = evaluate_ber(Some((model, layout)), c, c.bit_mapping(), &test, &default_snr_grid()).unwrap();
        let (ratio, snr, bins) = worst_ratio(&curve);
        pass &= bins > 0 && ratio <= MAX_RATIO;
        details.push(format!("{} {ratio:.3}@{snr}dB", c.id()));
    }
    outcome(pass, format!("worst neural/hard BER ratio (limit {MAX_RATIO}): {}", details.join(", ")))
}

fn desk_train_config(features: FeatureFlags, max_epochs: usize) -> TrainConfig {
    TrainConfig {
        features,
        max_epochs,
        lr_decay: Some(PlateauDecay { factor: 0.2, patience: 3 }),
        ..Default::default()
    }
}

fn train_on(
    train_set: &[&Constellation],
    layout: &RepresentationLayout,
    config: &TrainConfig,
) -> (MlpModel, usize, usize) {
    let ch = ChannelConfig::default();
    let data: Vec<(Dataset, Dataset)> = train_set
        .iter()
        .map(|c| (generate_dataset(c, &ch, Split::Train).unwrap(), generate_dataset(c, &ch, Split::Val).unwrap()))
        .collect();
    let (model, history) = train(&data, layout, config).unwrap();
    (model, history.epochs.len(), history.best_epoch)
}

fn a2(features: FeatureFlags) -> Outcome {
    let cat = bundled_catalog();
    let eval = select(&cat, &["QPSK", "16QAM", "64QAM", "256QAM"]).unwrap();
    let layout = build_layout(&eval, LayoutMode::Hierarchical).unwrap();
    let (model, epochs, best) = train_on(&eval[3..], &layout, &desk_train_config(features, 60));
    let o = ratio_criterion(&model, &layout, &eval);
    outcome(o.pass, format!("256QAM only, {epochs} epochs (best {best}); {}", o.detail))
}

fn a3(cat: &[Constellation]) -> (Outcome, Option<(MlpModel, RepresentationLayout)>) {
    let all: Vec<&Constellation> = cat.iter().collect();
    let layout = build_layout(&all, LayoutMode::Hierarchical).unwrap();
    let config = desk_train_config(FeatureFlags::default(), 60);
    let (model, epochs, best) = train_on(&all, &layout, &config);
    let header = ModelHeader {
        layer_sizes: model.sizes(),
        features: model.features,
        layout_hash: layout.hash(),
        seed: config.seed,
        train_config_digest: config.digest(),
        format_version: MODEL_FORMAT_VERSION,
    };
    if let Err(e) = save_model(&model, &header, artifact_dir().join("joint.hdnn")) {
        eprintln!("could not save joint model: {e}");
    }
    let o = ratio_criterion(&model, &layout, &all);
    let detail = format!("{} constellations, {} bits, {epochs} epochs (best {best}); {}", all.len(), layout.total_bits(), o.detail);
    (outcome(o.pass, detail), Some((model, layout)))
}

fn a4() -> Outcome {
    let cat = bundled_catalog();
    let ids = ["QPSK", "(8+8)APSK-90/180", "(8+8)APSK-100/180", "(4x16)APSK-128/180", "(8x32)APSK-124/180"];
    let set = select(&cat, &ids).unwrap();
    let shared = build_layout(&set, LayoutMode::Hierarchical).unwrap().total_bits();
    let flat = build_layout(&set, LayoutMode::FlatAll).unwrap().total_bits();
    outcome(shared == 12 && flat == 24, format!("shared {shared} bits (expect 12), flat {flat} bits (expect 24)"))
}

fn a5(joint: Option<&(MlpModel, RepresentationLayout)>, cat: &[Constellation]) -> Outcome {
    let Some((model, layout)) = joint else {
        return outcome(false, "no joint model");
    };
    let config = BoundaryConfig::default();
    let mut pass = true;
    let mut details = Vec::new();
    for (id, min) in [("QPSK", 0.97), ("8PSK-offset", 0.93)] {
        let c = select(cat, &[id]).unwrap()[0];
        let grid = BoundaryGrid::compute(model, layout, c, &config).unwrap();
        let agreement = grid.agreement();
        let _ = std::fs::write(artifact_dir().join(format!("{}.boundary.csv", file_stem(id))), grid.to_csv());
        let far = grid.far_disagreements(2);
        pass &= agreement >= min && far == 0;
        details.push(format!("{id} agreement {:.4} (min {min}), {far} disagreements beyond 2 cells", agreement));
    }
    outcome(pass, format!("{}x{} grid at {} dB: {}", config.resolution, config.resolution, config.snr_db, details.join("; ")))
}

/// Joint model and boundary grids are kept here for inspection.
fn artifact_dir() -> std::path::PathBuf {
    std::path::PathBuf::from(env!("CARGO_TARGET_TMPDIR"))
}

fn natural_mapping(c: &Constellation) -> Vec<BitString> {
    (0..c.len()).map(|s| BitString::from_value(s as u64, c.bits_per_symbol())).collect()
}

fn a7(joint: Option<&(MlpModel, RepresentationLayout)>, cat: &[Constellation]) -> Outcome {
    let Some((model, layout)) = joint else {
        return outcome(false, "no joint model");
    };
    let c = select(cat, &["16QAM"]).unwrap()[0];
    let test = generate_sequences(c, &ChannelConfig::default(), Split::Test, TEST_SEQUENCES).unwrap();
    let mut pass = true;
    let mut details = Vec::new();
    for (name, mapping) in [("gray", c.bit_mapping().to_vec()), ("natural", natural_mapping(c))] {
        let curve = evaluate_ber(Some((model, layout)), c, &mapping, &test, &default_snr_grid()).unwrap();
        let (mut worst, mut soft_worst): (f64, f64) = (0.0, 0.0);
        for hard in curve.rows_for(Demapper::HardOracle) {
            let neural = curve.row(Demapper::Neural, hard.snr_db).unwrap();
            let soft = curve.row(Demapper::SoftOracle, hard.snr_db).unwrap();
            let p = hard.ber.max(1.0 / hard.bits_counted as f64);
            let sigma = (p * (1.0 - p) / hard.bits_counted as f64).sqrt();
            worst = worst.max((neural.ber - hard.ber).abs() / sigma);
            soft_worst = soft_worst.max((soft.ber - hard.ber).abs() / sigma);
        }
        pass &= worst <= 3.0;
        // the exact-LLR sign decisions under the same test, for reference
        details.push(format!("{name}: max |neural-hard| {worst:.2}σ (exact soft demapper {soft_worst:.2}σ)"));
    }

    // LLR signs against the exact AWGN demapper at 20 dB
    let ch = ChannelConfig { snr_db_min: 20.0, snr_db_max: 20.0, ..Default::default() };
    let ds = generate_sequences(c, &ch, Split::Test, 20).unwrap();
    let samples: Vec<(Complex32, f64)> = ds.samples().map(|(s, _, x)| (x, s)).collect();
    let neural = infer_bit_llrs(model, &samples, layout, c.id(), c.bit_mapping()).unwrap();
    let agree = samples
        .iter()
        .zip(&neural)
        .filter(|((x, snr), n)| {
            let (_, exact) = exact_awgn_llrs(Complex64::new(x.re as f64, x.im as f64), c, 10f64.powf(-snr / 10.0)).unwrap();
            exact.hard_bits() == n.hard_bits()
        })
        .count() as f64
        / samples.len() as f64;
    pass &= agree >= 0.99;
    details.push(format!("sign agreement with exact LLRs at 20 dB {agree:.4} (min 0.99)"));
    outcome(pass, format!("16QAM, one model: {}", details.join("; ")))
}

fn linear_domain_check(layout: &RepresentationLayout, c: &Constellation, frame: &[f64]) -> f64 {
    let entry = layout.entry(c.id()).unwrap();
    let probs: Vec<f64> = entry
        .codes
        .iter()
        .map(|code| {
            code.iter()
                .map(|(k, bit)| {
                    let p1 = 1.0 / (1.0 + (-frame[k]).exp());
                    if bit { p1 } else { 1.0 - p1 }
                })
                .product()
        })
        .collect();
    let slp = symbol_logprobs_from_repr(frame, layout, c.id()).unwrap();
    let llrs = bit_llrs_from_symbols(&slp, c.bit_mapping()).unwrap();
    let mut worst: f64 = 0.0;
    for (lp, p) in slp.0.iter().zip(&probs) {
        worst = worst.max((lp - p.ln()).abs());
    }
    for i in 0..c.bits_per_symbol() {
        let (mut one, mut zero) = (0.0, 0.0);
        for (s, p) in probs.iter().enumerate() {
            if c.bit_mapping()[s].bit(i) {
                one += p;
            } else {
                zero += p;
            }
        }
        worst = worst.max((llrs.values[i] - (one / zero).ln()).abs());
    }
    worst
}

fn a6_equivalence(cat: &[Constellation]) -> (bool, String) {
    let all: Vec<&Constellation> = cat.iter().collect();
    let layout = build_layout(&all, LayoutMode::Hierarchical).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst: f64 = 0.0;
    for c in cat {
        for _ in 0..1000 {
            let frame: Vec<f64> = (0..layout.total_bits()).map(|_| rng.random_range(-4.0..4.0)).collect();
            worst = worst.max(linear_domain_check(&layout, c, &frame));
        }
    }
    (worst <= 1e-9, format!("log/linear equivalence max err {worst:.2e}"))
}

fn a6_gradients() -> (bool, String) {
    let cat = bundled_catalog();
    let set = select(&cat, &["QPSK", "16QAM", "8PSK", "(4+12)APSK-2/3"]).unwrap();
    let layout = build_layout(&set, LayoutMode::Hierarchical).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    let mut model = Mlp::<f64>::new(&[3, 4, 4, layout.total_bits()], FeatureFlags::default(), 3).unwrap();
    for d in &mut model.dense {
        d.weight.mapv_inplace(|_| rng.random_range(-1.0..1.0));
        d.bias.mapv_inplace(|_| rng.random_range(-0.3..0.3));
    }
    for bn in &mut model.norms {
        bn.gamma.mapv_inplace(|_| rng.random_range(0.5..1.5));
        bn.beta.mapv_inplace(|_| rng.random_range(-0.3..0.3));
    }
    let n = 24;
    let x = Array2::from_shape_fn((n, 3), |_| rng.random_range(-1.2..1.2));
    let codes: Vec<_> = (0..n)
        .map(|i| {
            let c = set[i % set.len()];
            layout.repr_of_symbol(c.id(), rng.random_range(0..c.len())).unwrap().clone()
        })
        .collect();
    let loss = |m: &Mlp<f64>| -> f64 {
        let (out, _) = m.clone().forward_train(x.view()).unwrap();
        let mut total = 0.0;
        for (i, code) in codes.iter().enumerate() {
            let frame = out.row(i).to_vec();
            total -= hdemap::demap::code_logprob(&frame, code);
        }
        total / n as f64
    };
    let (out, tape) = model.clone().forward_train(x.view()).unwrap();
    let mut d_out = Array2::zeros(out.raw_dim());
    for (i, code) in codes.iter().enumerate() {
        let frame = out.row(i).to_vec();
        let mut g = vec![0.0; frame.len()];
        pseudo_loss_grad(&frame, code, 1.0 / n as f64, &mut g);
        d_out.row_mut(i).assign(&ndarray::Array1::from(g));
    }
    let grads = model.backward(&tape, d_out.view());

    let mut analytic = Vec::new();
    model.clone().visit_params(&grads, |_, _, g| analytic.push(g.to_vec()));
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for (t, tensor) in analytic.iter().enumerate() {
        for (i, &g) in tensor.iter().enumerate() {
            let shifted = |delta: f64| {
                let mut m = model.clone();
                let mut idx = 0;
                m.visit_params(&grads, |_, p, _| {
                    if idx == t {
                        p[i] += delta;
                    }
                    idx += 1;
                });
                loss(&m)
            };
            let fd = (shifted(h) - shifted(-h)) / (2.0 * h);
            worst = worst.max((fd - g).abs() / fd.abs().max(g.abs()).max(1e-4));
            count += 1;
        }
    }
    (worst <= 1e-4, format!("finite differences over {count} parameters max rel err {worst:.2e}"))
}

/// Every pair of distinct symbols differs on a position both of them use.
fn a6_injectivity(layout: &RepresentationLayout) -> (bool, String) {
    let mut pairs = 0u64;
    let mut bad = 0u64;
    for e in layout.entries() {
        for (s, a) in e.codes.iter().enumerate() {
            for b in &e.codes[s + 1..] {
                pairs += 1;
                let separated = a.iter().any(|(k, bit)| b.get(k).is_some_and(|other| other != bit));
                bad += !separated as u64;
            }
        }
    }
    (bad == 0, format!("injectivity {pairs} symbol pairs, {bad} collisions"))
}

fn shared_positions(layout: &RepresentationLayout) -> Vec<bool> {
    let mut shared = vec![false; layout.total_bits()];
    for seg in layout.segments() {
        if matches!(
            seg.kind,
            SegmentKind::Quadrant
                | SegmentKind::QamInterleaved
                | SegmentKind::SeriesSelector { .. }
                | SegmentKind::SeriesRefine { .. }
        ) {
            for k in seg.range() {
                shared[k] = true;
            }
        }
    }
    shared
}

/// Coarser symbols' shared bits are a prefix of every finer symbol that
/// lies inside their decision cell.
fn a6_hierarchy(cat: &[Constellation], layout: &RepresentationLayout) -> (bool, String) {
    let shared = shared_positions(layout);
    let mut checked = 0u64;
    let mut bad = 0u64;
    let agrees = |ca: &Constellation, sa: usize, cb: &Constellation, sb: usize| -> bool {
        let a = layout.repr_of_symbol(ca.id(), sa).unwrap();
        let b = layout.repr_of_symbol(cb.id(), sb).unwrap();
        a.iter().filter(|(k, _)| shared[*k]).all(|(k, bit)| b.get(k) == Some(bit))
    };
    for ca in cat {
        for cb in cat {
            if let (Some(side_a), Some(side_b)) = (ca.grid_side(), cb.grid_side()) {
                if side_b < side_a {
                    continue;
                }
                let f = side_b / side_a;
                for sb in 0..cb.len() {
                    let (col, row) = cb.grid_position(sb).unwrap();
                    let sa = (row / f) * side_a + col / f;
                    checked += 1;
                    bad += !agrees(ca, sa, cb, sb) as u64;
                }
            }
            let (Some(rings_a), Some(rings_b)) = (ca.rings(), cb.rings()) else { continue };
            if !ca.is_conforming() || !cb.is_conforming() {
                continue;
            }
            for sa in 0..ca.len() {
                let (ra, ka) = ca.ring_position(sa).unwrap();
                let (Some((d, na)), ring_a) = (rings_a[ra].series(), &rings_a[ra]) else { continue };
                let theta_a = ring_a.phase_offset + ring_a.spacing() * ka as f64;
                for sb in 0..cb.len() {
                    let (rb, _) = cb.ring_position(sb).unwrap();
                    let Some((db, nb)) = rings_b[rb].series() else { continue };
                    if db != d || nb < na {
                        continue;
                    }
                    let p = cb.points()[sb];
                    let diff = (p.arg() - theta_a + std::f64::consts::PI).rem_euclid(std::f64::consts::TAU)
                        - std::f64::consts::PI;
                    if diff.abs() < ring_a.spacing() / 2.0 {
                        checked += 1;
                        bad += !agrees(ca, sa, cb, sb) as u64;
                    }
                }
            }
        }
    }
    (bad == 0 && checked > 0, format!("hierarchy prefix {checked} nested pairs, {bad} violations"))
}

fn a6_round_trips() -> (bool, String) {
    let dir = tempfile::tempdir().unwrap();
    let cat = bundled_catalog();
    let c = select(&cat, &["(4+12)APSK-2/3"]).unwrap()[0];
    let ch = ChannelConfig { sequences_per_constellation: 20, block_size: 256, ..Default::default() };
    let ds = generate_dataset(c, &ch, Split::Train).unwrap();
    let path = dir.path().join("d.hdds");
    write_dataset(&ds, &path).unwrap();
    let dataset_ok = read_dataset(&path).unwrap() == ds;

    let layout = build_layout(&[c], LayoutMode::Hierarchical).unwrap();
    let config = TrainConfig { hidden: vec![16, 16], max_epochs: 1, steps_per_epoch: Some(10), ..Default::default() };
    let (model, _) = train(&[(ds.clone(), ds)], &layout, &config).unwrap();
    let header = ModelHeader {
        layer_sizes: model.sizes(),
        features: model.features,
        layout_hash: layout.hash(),
        seed: 0,
        train_config_digest: config.digest(),
        format_version: MODEL_FORMAT_VERSION,
    };
    let mpath = dir.path().join("m.hdnn");
    save_model(&model, &header, &mpath).unwrap();
    let (back, _) = load_model(&mpath, &layout.hash()).unwrap();
    let x = features_of(model.features, &[(Complex32::new(0.3, -0.7), 4.0), (Complex32::new(-1.1, 0.2), 25.0)]);
    let model_ok = back == model && infer_logits(&back, x.view()).unwrap() == infer_logits(&model, x.view()).unwrap();
    (dataset_ok && model_ok, format!("dataset round-trip {dataset_ok}, model round-trip {model_ok}"))
}

fn a6_replay() -> (bool, String) {
    let cat = bundled_catalog();
    let set = select(&cat, &["QPSK", "8PSK-offset"]).unwrap();
    let layout = build_layout(&set, LayoutMode::Hierarchical).unwrap();
    let ch = ChannelConfig { sequences_per_constellation: 20, block_size: 128, ..Default::default() };
    let make = || -> Vec<(Dataset, Dataset)> {
        set.iter()
            .map(|c| (generate_dataset(c, &ch, Split::Train).unwrap(), generate_dataset(c, &ch, Split::Val).unwrap()))
            .collect()
    };
    let (d1, d2) = (make(), make());
    let config = TrainConfig { hidden: vec![16, 16], max_epochs: 2, steps_per_epoch: Some(20), ..Default::default() };
    let (m1, h1) = train(&d1, &layout, &config).unwrap();
    let (m2, h2) = train(&d2, &layout, &config).unwrap();
    let ok = d1 == d2 && m1 == m2 && h1 == h2;
    (ok, format!("deterministic replay {ok}"))
}

fn a6(cat: &[Constellation]) -> Outcome {
    let all: Vec<&Constellation> = cat.iter().collect();
    let layout = build_layout(&all, LayoutMode::Hierarchical).unwrap();
    let parts = [
        a6_equivalence(cat),
        a6_gradients(),
        a6_injectivity(&layout),
        a6_hierarchy(cat, &layout),
        a6_round_trips(),
        a6_replay(),
    ];
    outcome(parts.iter().all(|p| p.0), parts.iter().map(|p| p.1.as_str()).collect::<Vec<_>>().join("; "))
}

fn main() {
    let cat = bundled_catalog();
    let mut results = vec![run("A1", a1), run("A4", a4), run("A6", || a6(&cat))];
    results.push(run("A2", || a2(FeatureFlags::default())));
    let info = run("A2 (info, no SNR feature)", || a2(FeatureFlags { snr_db_normalized: false }));
    let mut joint = None;
    results.push(run("A3", || {
        let (o, model) = a3(&cat);
        joint = model;
        o
    }));
    results.push(run("A5", || a5(joint.as_ref(), &cat)));
    results.push(run("A7", || a7(joint.as_ref(), &cat)));

    results.sort_by(|a, b| a.0.cmp(&b.0));
    println!("\nacceptance summary");
    for (name, pass, detail) in &results {
        println!("{name} {}: {detail}", if *pass { "PASS" } else { "FAIL" });
    }
    println!("{} {}: {} (informational)", info.0, if info.1 { "PASS" } else { "FAIL" }, info.2);
    if results.iter().any(|r| !r.1) {
        std::process::exit(1);
    }
}
