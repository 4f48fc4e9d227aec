//! End-to-end acceptance checks. Prints one PASS or FAIL line per criterion
//! and exits non-zero if any fails.
//!
//! Pass criterion numbers as arguments to run a subset, for example
//! `cargo test --test acceptance -- 4 5 6`.

mod common;

use std::cell::OnceCell;
use std::f64::consts::LN_2;
use std::path::{Path, PathBuf};
use std::time::Instant;

use common::{composite_loss_errors, network_digest, primitive_cases, rng, uniform};
use igan::cli::RunConfig;
use igan::data::{
    grid_bytes, load_idx_images, parse_attribute_csv, parse_idx_images, parse_idx_labels, sample_prior,
    write_idx_images, write_idx_labels, Dataset, GaussianMixtureSpec, IdxError,
};
use igan::latent::{
    apply_attribute, attribute_vector, encode_dataset, knn_purity, parse_latents_csv, round_trip,
    shuffled_purity_baseline, translate,
};
use igan::loss::{forward_couples, loss_dfh, loss_eg, LossConfig};
use igan::networks::{build_model, ArchConfig, IganModel, NetKind};
use igan::tensor::{BatchNormMode, Graph, Tensor};
use igan::trainer::checkpoint::{checkpoint_bytes, state_from_bytes, CheckpointError};
use igan::trainer::{
    load_checkpoint, metrics_csv, save_checkpoint, MetricsRecord, Phase, TrainConfig, TrainState, Trainer,
};
use igan::Error;

/// `Ok` carries the measured values on success, `Err` on failure.
type Verdict = Result<String, String>;

fn repo_path(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

fn config(name: &str, overrides: &[String]) -> RunConfig {
    let path = repo_path(&format!("configs/{name}.cfg"));
    RunConfig::load(Some(&path), overrides).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

/// A finished training run on one of the reference configurations.
struct Run {
    cfg: RunConfig,
    data: Dataset,
    model: IganModel,
    metrics: Vec<MetricsRecord>,
    seconds: f64,
}

impl Run {
    fn train(cfg: RunConfig) -> Run {
        let start = Instant::now();
        let data = cfg.dataset.load().expect("dataset loads");
        let arch = cfg.arch_for(&data).expect("valid architecture");
        let model = build_model(&arch, cfg.train.seed).expect("model builds");
        let mut trainer = Trainer::new(model, &data, cfg.train.clone()).expect("trainer starts");
        let metrics = trainer.run(|_| Ok(())).expect("training stays finite");
        let model = trainer.into_state().model;
        Run {
            cfg,
            data,
            model,
            metrics,
            seconds: start.elapsed().as_secs_f64(),
        }
    }

    fn mixture(&self) -> GaussianMixtureSpec {
        self.cfg.dataset.mixture().expect("mixture dataset")
    }

    fn items(&self, n: usize) -> Tensor {
        let idx: Vec<usize> = (0..n.min(self.data.len())).collect();
        self.data.items().select_rows(&idx).unwrap()
    }

    fn record_at(&self, step: usize) -> Option<&MetricsRecord> {
        self.metrics.iter().find(|r| r.step == step)
    }
}

#[derive(Default)]
struct Runs {
    ring: OnceCell<Run>,
    grid: OnceCell<Run>,
}

impl Runs {
    fn ring(&self) -> &Run {
        self.ring.get_or_init(|| Run::train(config("ring", &[])))
    }

    fn grid(&self) -> &Run {
        self.grid.get_or_init(|| Run::train(config("grid", &[])))
    }
}

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn gradient_correctness() -> Verdict {
    let start = Instant::now();
    let mut shapes = usize::MAX;
    let mut worst = (0.0_f64, "");
    for (name, case) in primitive_cases() {
        let errors: Vec<f64> = (0..24).map(case).collect();
        shapes = shapes.min(errors.len());
        let max = errors.iter().copied().fold(0.0, f64::max);
        if max > worst.0 {
            worst = (max, name);
        }
    }
    let mut composite = (0, 0.0_f64);
    for seed in 0..3 {
        let (params, dfh, eg) = composite_loss_errors(seed);
        composite = (composite.0.max(params), composite.1.max(dfh).max(eg));
    }
    check(
        worst.0 < 1e-5 && composite.0 <= 200 && composite.1 < 1e-4 && start.elapsed().as_secs_f64() < 120.0,
        format!(
            "{} primitives x {shapes} shapes, worst {:.2e} ({}); composite {} params, worst {:.2e}",
            primitive_cases().len(),
            worst.0,
            worst.1,
            composite.0,
            composite.1
        ),
    )
}

fn closed_form_losses() -> Verdict {
    let mut worst = 0.0_f64;
    for omit_h in [true, false] {
        let arch = ArchConfig {
            omit_h,
            base_channels: 8,
            secondary_latent_dim: 8,
            ..ArchConfig::toy(2, 2)
        };
        let mut model = build_model(&arch, 4).unwrap();
        for name in ["fc1.weight", "fc1.bias"] {
            model.d.params.get_mut(name).unwrap().data_mut().fill(0.0);
        }
        let mut r = rng(9);
        let x = uniform(&mut r, &[16, 2], -1.0, 1.0);
        let z = uniform(&mut r, &[16, 2], -2.0, 2.0);
        let mut g = Graph::new();
        let bound = model.bind(&mut g, &[]);
        let (xv, zv) = (g.constant(x), g.constant(z));
        let cb = forward_couples(&mut model, &mut g, &bound, xv, zv, BatchNormMode::Train).unwrap();
        let cfg = LossConfig {
            alpha: 0.0,
            ..LossConfig::default()
        };
        let (_, d) = loss_dfh(&mut model, &mut g, &bound, &cb, &cfg, BatchNormMode::Train).unwrap();
        let (_, eg) = loss_eg(&mut model, &mut g, &bound, &cb, &cfg, BatchNormMode::Train).unwrap();
        worst = worst
            .max((d.total_d - 6.0 * LN_2).abs())
            .max((eg.total_eg - 3.0 * LN_2).abs());
    }
    check(
        worst < 1e-9,
        format!("max deviation from 6 ln 2 and 3 ln 2: {worst:.1e}"),
    )
}

/// Counts phases whose update changed a bit of the other group.
fn phase_violations(model: IganModel, data: &Dataset, steps: usize) -> (usize, usize) {
    let eg = [NetKind::E, NetKind::G];
    let dfh = [NetKind::F, NetKind::H, NetKind::D];
    let digests = |m: &IganModel, kinds: &[NetKind]| kinds.iter().map(|&k| network_digest(m, k)).collect::<Vec<_>>();
    let cfg = TrainConfig {
        batch_size: 16,
        probe_size: 16,
        seed: 21,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(model, data, cfg).unwrap();
    let (mut phases, mut violations) = (0, 0);
    for _ in 0..steps {
        let mut before = trainer.state().model.clone();
        trainer
            .step_observed(|phase, after| {
                let frozen: &[NetKind] = if phase == Phase::Discriminator { &eg } else { &dfh };
                phases += 1;
                if digests(&before, frozen) != digests(&after.model, frozen) {
                    violations += 1;
                }
                before = after.model.clone();
            })
            .unwrap();
    }
    (phases, violations)
}

fn phase_isolation() -> Verdict {
    let ring = igan::data::sample_mixture(&GaussianMixtureSpec::ring(8, 2.0, 0.05), 512, 2).unwrap();
    let toy = ArchConfig {
        omit_h: false,
        base_channels: 16,
        secondary_latent_dim: 16,
        ..ArchConfig::toy(2, 2)
    };
    let (toy_phases, toy_bad) = phase_violations(build_model(&toy, 2).unwrap(), &ring, 100);

    let digits = load_idx_images(&repo_path("data/digits8/test-images-idx3-ubyte"), None, None).unwrap();
    let conv = ArchConfig {
        data_shape: vec![1, 8, 8],
        latent_dim: 4,
        secondary_latent_dim: 8,
        base_channels: 4,
        omit_h: false,
        ..ArchConfig::default()
    };
    let (conv_phases, conv_bad) = phase_violations(build_model(&conv, 2).unwrap(), &digits, 100);
    check(
        toy_bad + conv_bad == 0,
        format!(
            "{} phases over 2 x 100 steps (toy and batchnorm conv), {} changed the frozen group",
            toy_phases + conv_phases,
            toy_bad + conv_bad
        ),
    )
}

fn mode_coverage(runs: &Runs) -> Verdict {
    let run = runs.ring();
    let z = sample_prior(run.model.arch.latent_dim, 10_000, 0xC0FFEE);
    let x = run.model.forward_g(&z).unwrap();
    let cov = run.mixture().coverage(&x, 3.0).unwrap();
    let min = cov.min_mode_fraction();
    check(
        min >= 0.02 && cov.within >= 0.8 && run.seconds < 600.0 && run.cfg.train.steps <= 20_000,
        format!(
            "smallest mode {:.1}%, within 3 sigma {:.1}%, {} steps in {:.0}s",
            100.0 * min,
            100.0 * cov.within,
            run.cfg.train.steps,
            run.seconds
        ),
    )
}

fn cycle_consistency(runs: &Runs) -> Verdict {
    let run = runs.ring();
    let (Some(early), Some(last)) = (run.record_at(100), run.metrics.last()) else {
        return Err("no indicators at step 100".into());
    };
    let latent = early.prior_latent_rec / last.prior_latent_rec;
    let data = early.fake_data_rec / last.fake_data_rec;
    check(
        latent >= 5.0 && data >= 3.0,
        format!(
            "prior latent rec {:.4} -> {:.4} ({latent:.2}x), fake data rec {:.4} -> {:.4} ({data:.2}x)",
            early.prior_latent_rec, last.prior_latent_rec, early.fake_data_rec, last.fake_data_rec
        ),
    )
}

fn discriminator_balance(runs: &Runs) -> Verdict {
    let run = runs.ring();
    let end = run.cfg.train.steps;
    let tail: Vec<&MetricsRecord> = run.metrics.iter().filter(|r| r.step + 2000 > end).collect();
    let scores = tail.iter().flat_map(|r| [r.d_score_true, r.d_score_k1]);
    let (lo, hi) = scores.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| (lo.min(s), hi.max(s)));
    check(
        !tail.is_empty() && lo > 0.1 && hi < 0.9,
        format!(
            "{} records over the final 2000 steps, scores in [{lo:.3}, {hi:.3}]",
            tail.len()
        ),
    )
}

fn latent_self_organization() -> Verdict {
    let images = repo_path("data/digits8/train-images-idx3-ubyte");
    let labels = repo_path("data/digits8/train-labels-idx1-ubyte");
    let run = Run::train(config(
        "digits",
        &[
            format!("idx_images={}", images.display()),
            format!("idx_labels={}", labels.display()),
        ],
    ));
    let test = load_idx_images(
        &repo_path("data/digits8/test-images-idx3-ubyte"),
        Some(repo_path("data/digits8/test-labels-idx1-ubyte").as_path()),
        None,
    )
    .unwrap();
    let latents = encode_dataset(&run.model, &test, 256).unwrap();
    let purity = knn_purity(&latents, 10).unwrap();
    let (baseline, sd) = shuffled_purity_baseline(&latents, 10, 100, 1).unwrap();
    check(
        purity > 2.5 * baseline && run.seconds < 1800.0,
        format!(
            "purity {purity:.3} vs shuffled {baseline:.3} (sd {sd:.3}), ratio {:.2}; {} test items, {:.0}s",
            purity / baseline,
            test.len(),
            run.seconds
        ),
    )
}

fn latent_arithmetic(runs: &Runs) -> Verdict {
    let run = runs.ring();
    let spec = run.mixture();
    let latents = encode_dataset(&run.model, &run.data, 1024).unwrap();
    let upper = attribute_vector(&latents, "upper").unwrap();
    let lower = attribute_vector(&latents, "lower").unwrap();
    let idx: Vec<usize> = run
        .data
        .with_attribute("upper")
        .unwrap()
        .into_iter()
        .take(2000)
        .collect();
    let x = run.data.items().select_rows(&idx).unwrap();

    let moved = apply_attribute(&run.model, &x, &upper, &lower).unwrap();
    let cov = spec.coverage(&moved, 3.0).unwrap();
    let lower_modes = &spec.attribute_groups.iter().find(|(n, _)| n == "lower").unwrap().1;
    let hit: f64 = lower_modes.iter().map(|&k| cov.mode_fractions[k]).sum();

    let same = apply_attribute(&run.model, &x, &upper, &upper).unwrap();
    let plain = run.model.forward_g(&run.model.forward_e(&x).unwrap()).unwrap();
    let exact = same
        .data()
        .iter()
        .zip(plain.data())
        .all(|(a, b)| a.to_bits() == b.to_bits());
    check(
        hit >= 0.8 && exact,
        format!(
            "{:.1}% of {} upper items land within 3 sigma of a lower mode; minus == plus bit-exact: {exact}",
            100.0 * hit,
            idx.len()
        ),
    )
}

fn cross_domain_translation(runs: &Runs) -> Verdict {
    let (ring, grid) = (runs.ring(), runs.grid());
    let x = ring.items(2000);
    let on_grid = translate(&ring.model, &grid.model, &x).unwrap();
    let there = grid.mixture().coverage(&on_grid, 3.0).unwrap().within;
    let back = round_trip(&ring.model, &grid.model, &x).unwrap();
    let home = ring.mixture().coverage(&back, 3.0).unwrap().within;
    check(
        there >= 0.8 && home >= 0.7,
        format!(
            "ring -> grid within 3 sigma {:.1}%, round trip {:.1}%; grid run {:.0}s",
            100.0 * there,
            100.0 * home,
            grid.seconds
        ),
    )
}

fn short_config(steps: usize) -> (Dataset, IganModel, TrainConfig) {
    let data = igan::data::sample_mixture(&GaussianMixtureSpec::ring(8, 2.0, 0.05), 512, 3).unwrap();
    let arch = ArchConfig {
        omit_h: false,
        base_channels: 16,
        secondary_latent_dim: 16,
        ..ArchConfig::toy(2, 2)
    };
    let cfg = TrainConfig {
        steps,
        batch_size: 32,
        probe_size: 64,
        indicator_interval: 5,
        seed: 17,
        ..TrainConfig::default()
    };
    (data, build_model(&arch, 17).unwrap(), cfg)
}

fn identical_metrics() -> bool {
    let run = || {
        let (data, model, cfg) = short_config(60);
        let mut trainer = Trainer::new(model, &data, cfg).unwrap();
        metrics_csv(&trainer.run(|_| Ok(())).unwrap())
    };
    run() == run()
}

/// Resuming from a checkpoint written at step 30 against an uninterrupted
/// run quantized at the same step.
fn resume_matches() -> bool {
    let (data, model, cfg) = short_config(60);
    let boundary = 30;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("boundary.igan");

    let mut straight = Trainer::new(model.clone(), &data, cfg.clone()).unwrap();
    let mut straight_metrics = straight.run(|_| Ok(())).unwrap();
    straight_metrics.retain(|r| r.step > boundary);

    // Same run again, rounded at the boundary in memory.
    let first = TrainConfig {
        steps: boundary,
        ..cfg.clone()
    };
    let mut head = Trainer::new(model, &data, first).unwrap();
    head.run(|_| Ok(())).unwrap();
    let state = head.into_state();
    save_checkpoint(&state, &path).unwrap();
    let mut quantized = state;
    quantized.quantize_f32();

    let finish = |st: TrainState| {
        let mut t = Trainer::resume(st, &data, cfg.clone()).unwrap();
        let metrics = t.run(|_| Ok(())).unwrap();
        (t.into_state(), metrics)
    };
    let (in_memory, mem_metrics) = finish(quantized);
    let (from_disk, disk_metrics) = finish(load_checkpoint(&path).unwrap());
    let rounded_differs = straight_metrics != mem_metrics;
    in_memory == from_disk
        && mem_metrics == disk_metrics
        && disk_metrics.len() == straight_metrics.len()
        && rounded_differs
}

fn format_contracts() -> Vec<(&'static str, bool)> {
    let dir = tempfile::tempdir().unwrap();
    let file = |name: &str, bytes: &[u8]| {
        let p = dir.path().join(name);
        std::fs::write(&p, bytes).unwrap();
        p
    };
    let images = write_idx_images(2, 2, 2, &[0; 8]);
    let labels = write_idx_labels(&[1, 2]);
    let mut wrong_magic = images.clone();
    wrong_magic[3] = 0x01;
    let mut trailing = images.clone();
    trailing.push(0);
    let three_labels = file("three.idx", &write_idx_labels(&[1, 2, 3]));
    let good_images = file("good.idx", &images);

    let state = TrainState::new(build_model(&ArchConfig::toy(2, 2), 0).unwrap());
    let ckpt = checkpoint_bytes(&state);
    let mut bad_version = ckpt.clone();
    bad_version[4] = 9;

    let bad_csv = |text: &str| matches!(parse_latents_csv(text), Err(Error::Data(_) | Error::Contract(_)));
    vec![
        (
            "idx wrong magic",
            matches!(parse_idx_images(&wrong_magic), Err(IdxError::WrongMagic { .. })),
        ),
        (
            "idx truncated",
            matches!(parse_idx_images(&images[..20]), Err(IdxError::Truncated { .. })),
        ),
        (
            "idx trailing bytes",
            matches!(parse_idx_images(&trailing), Err(IdxError::TrailingBytes { .. })),
        ),
        (
            "idx labels as images",
            matches!(parse_idx_images(&labels), Err(IdxError::WrongMagic { .. })),
        ),
        ("idx short label header", parse_idx_labels(&labels[..6]).is_err()),
        (
            "idx count mismatch",
            load_idx_images(&good_images, Some(&three_labels), None).is_err(),
        ),
        (
            "idx downscale to a non-divisor",
            load_idx_images(&good_images, None, Some(3)).is_err(),
        ),
        (
            "pgm two channels",
            grid_bytes(&Tensor::zeros(&[1, 2, 2, 2]), 1).is_err(),
        ),
        (
            "pgm zero columns",
            grid_bytes(&Tensor::zeros(&[1, 1, 2, 2]), 0).is_err(),
        ),
        ("pgm flat batch", grid_bytes(&Tensor::zeros(&[4, 2]), 2).is_err()),
        ("latents csv bad header", bad_csv("idx,label,z0\n0,,1\n")),
        ("latents csv ragged row", bad_csv("id,label,z0,z1\n0,,1\n")),
        ("latents csv not a number", bad_csv("id,label,z0\n0,,one\n")),
        (
            "attribute csv bad value",
            parse_attribute_csv("index,name,value\n0,smiling,2\n", 1).is_err(),
        ),
        (
            "attribute csv index out of range",
            parse_attribute_csv("index,name,value\n5,smiling,1\n", 1).is_err(),
        ),
        (
            "checkpoint bad magic",
            matches!(
                state_from_bytes(b"NOPE\x01\0\0\0"),
                Err(Error::Checkpoint(CheckpointError::BadMagic))
            ),
        ),
        (
            "checkpoint version",
            matches!(
                state_from_bytes(&bad_version),
                Err(Error::Checkpoint(CheckpointError::VersionMismatch { .. }))
            ),
        ),
        (
            "checkpoint truncated",
            matches!(
                state_from_bytes(&ckpt[..ckpt.len() - 3]),
                Err(Error::Checkpoint(CheckpointError::Truncated { .. }))
            ),
        ),
    ]
}

fn determinism_and_persistence() -> Verdict {
    let deterministic = identical_metrics();
    let resumed = resume_matches();
    let contracts = format_contracts();
    let failed: Vec<&str> = contracts.iter().filter(|(_, ok)| !ok).map(|(n, _)| *n).collect();
    check(
        deterministic && resumed && failed.is_empty(),
        format!(
            "identical metrics: {deterministic}; resume matches: {resumed}; format negatives {}/{} (failed: {failed:?})",
            contracts.len() - failed.len(),
            contracts.len()
        ),
    )
}

fn main() {
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let runs = Runs::default();
    let criteria: [(&str, &dyn Fn() -> Verdict); 10] = [
        ("gradient correctness", &gradient_correctness),
        ("closed-form loss values", &closed_form_losses),
        ("phase isolation", &phase_isolation),
        ("mode coverage on the ring", &|| mode_coverage(&runs)),
        ("latent cycle consistency", &|| cycle_consistency(&runs)),
        ("discriminator balance", &|| discriminator_balance(&runs)),
        ("latent self-organization on digits", &latent_self_organization),
        ("latent arithmetic on half-rings", &|| latent_arithmetic(&runs)),
        ("ring to grid translation", &|| cross_domain_translation(&runs)),
        ("determinism and persistence", &determinism_and_persistence),
    ];
    let mut failures = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let id = i + 1;
        if !wanted.is_empty() && !wanted.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let verdict = run();
        let secs = start.elapsed().as_secs_f64();
        let (tag, detail) = match &verdict {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        println!("{tag} [{id:>2}] {name}: {detail} ({secs:.1}s)");
        failures += usize::from(verdict.is_err());
    }
    if failures > 0 {
        println!("{failures} criteria failed");
        std::process::exit(1);
    }
}
