//! Acceptance suite: seven criteria, one test and one printed PASS/FAIL line
//! each. The heavyweight desk experiment (criteria 4, 6, 7) trains real
//! models, so the suite takes several minutes of CPU; everything is seeded
//! and deterministic apart from wall-clock measurements.
//!
//! Run with `cargo test -p srswitch --test acceptance -- --nocapture` to see
//! the per-criterion lines as they complete.

use srswitch::bench::{per_patch_csv, run_config, sweep, BenchConfig};
use srswitch::dataset::{load_pairs, synth_corpus, PatchPair, Split};
use srswitch::gradcheck::{conditioned_pair, grad_check, GradCheckReport};
use srswitch::loss::Loss;
use srswitch::metrics::{entropy, metrics_csv, psnr_tensor, ssim_luma, MetricTriple};
use srswitch::models::{train, Model, ModelSpec, TrainOptions};
use srswitch::net::NetBuilder;
use srswitch::resample::{bicubic_resize, resize_tensor};
use srswitch::rng::Rng;
use srswitch::switch::{
    accuracy, coupled_train, label_by_delta_ssim, labels_csv, per_patch_scores, train_switch,
    CoupledOptions, Difficulty, RouteCriterion, SwitchClassifier, SwitchSpec, SwitchTrainOptions,
};
use srswitch::tensor::Tensor;
use srswitch::image::ImagePatch;
use std::sync::{Mutex, OnceLock};
use std::time::Instant;

/// Criteria run one at a time so the timing bounds are honest even when the
/// harness uses several test threads.
static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|poisoned| poisoned.into_inner())
}

struct Verdict {
    criterion: usize,
    name: &'static str,
    failures: Vec<String>,
}

impl Verdict {
    fn new(criterion: usize, name: &'static str) -> Self {
        Verdict {
            criterion,
            name,
            failures: Vec::new(),
        }
    }

    fn check(&mut self, ok: bool, what: impl Into<String>) {
        if !ok {
            self.failures.push(what.into());
        }
    }

    fn finish(self) {
        if self.failures.is_empty() {
            println!("acceptance criterion {} ({}): PASS", self.criterion, self.name);
        } else {
            println!(
                "acceptance criterion {} ({}): FAIL - {}",
                self.criterion,
                self.name,
                self.failures.join("; ")
            );
            panic!(
                "criterion {} failed: {}",
                self.criterion,
                self.failures.join("; ")
            );
        }
    }
}

/// Everything the desk experiment produces, built once and shared.
struct Fixture {
    _dir: tempfile::TempDir,
    /// 200-patch corpus, 160 train / 40 val.
    pairs: Vec<PatchPair>,
    fsrcnn: Model<f32>,
    dbpn: Model<f32>,
    labels: Vec<srswitch::switch::PatchLabel>,
    classifier: SwitchClassifier,
    /// Larger corpus for the benchmark sweep.
    sweep_pairs: Vec<PatchPair>,
    build_seconds: f64,
}

fn fixture() -> &'static Fixture {
    static FIXTURE: OnceLock<Fixture> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let started = Instant::now();
        let dir = tempfile::tempdir().expect("tempdir");

        let manifest = synth_corpus(&dir.path().join("corpus"), 200, 64, 64, 0.8, 42)
            .expect("synthetic corpus");
        let pairs = load_pairs(&manifest, None).expect("load pairs");
        let train_pairs: Vec<(Tensor<f32>, Tensor<f32>)> = pairs
            .iter()
            .filter(|p| p.split == Split::Train)
            .map(|p| (p.lr.clone(), p.hr.clone()))
            .collect();
        assert_eq!(pairs.len(), 200);
        assert_eq!(train_pairs.len(), 160);

        let opts = TrainOptions {
            epochs: 30,
            lr: 0.1,
            momentum: 0.9,
            seed: 11,
            batch_size: 2,
            threads: 2,
            loss: None,
        };
        let mut fsrcnn: Model<f32> = ModelSpec::default_for("fsrcnn_t", 4)
            .unwrap()
            .build(101)
            .unwrap();
        train(&mut fsrcnn, &train_pairs, &TrainOptions { seed: 12, ..opts.clone() })
            .expect("train fsrcnn_t");
        let mut dbpn: Model<f32> = ModelSpec::default_for("dbpn_t", 4)
            .unwrap()
            .build(202)
            .unwrap();
        train(&mut dbpn, &train_pairs, &TrainOptions { seed: 22, ..opts })
            .expect("train dbpn_t");

        let labels = label_by_delta_ssim(&pairs, &dbpn, 0.02, 2).expect("labels");

        let class_of = |difficulty: Difficulty| -> usize {
            match difficulty {
                Difficulty::Easy => 0,
                Difficulty::Difficult => 1,
            }
        };
        let mut switch_train = Vec::new();
        let mut switch_holdout = Vec::new();
        for (pair, label) in pairs.iter().zip(&labels) {
            assert_eq!(pair.id, label.patch_id);
            let example = (pair.lr.clone(), class_of(label.label));
            match pair.split {
                Split::Train => switch_train.push(example),
                Split::Val => switch_holdout.push(example),
            }
        }
        let mut classifier = SwitchClassifier::build(&SwitchSpec::new(2), 303).unwrap();
        train_switch(
            &mut classifier,
            &switch_train,
            &switch_holdout,
            &SwitchTrainOptions {
                epochs: 10,
                lr: 0.02,
                momentum: 0.9,
                batch_size: 8,
                seed: 33,
                threads: 2,
            },
        )
        .expect("train switch");

        let sweep_manifest = synth_corpus(&dir.path().join("sweep"), 400, 64, 64, 0.8, 43)
            .expect("sweep corpus");
        let sweep_pairs = load_pairs(&sweep_manifest, None).expect("load sweep pairs");

        Fixture {
            _dir: dir,
            pairs,
            fsrcnn,
            dbpn,
            labels,
            classifier,
            sweep_pairs,
            build_seconds: started.elapsed().as_secs_f64(),
        }
    })
}

#[test]
fn criterion_1_gradient_suite() {
    fn record(v: &mut Verdict, what: &str, report: &GradCheckReport) {
        v.check(
            report.max_relative_error < 1e-4,
            format!("{what}: max rel err {}", report.max_relative_error),
        );
    }

    let _guard = serial();
    let started = Instant::now();
    let mut v = Verdict::new(1, "gradient suite");


    // Every layer kind in isolation (or with the minimal conv context the
    // kind needs to be part of a loss).
    {
        let mut rng = Rng::new(9);
        let mk_input =
            |rng: &mut Rng, dims: &[usize]| Tensor::<f64>::from_fn(dims, |_| rng.uniform(0.1, 0.9));

        let mut b = NetBuilder::<f64>::new(1);
        let x = b.input();
        let c = b.conv(x, "c", 1, 2, 3, 1, 1);
        let mut net = b.build(c);
        let input = mk_input(&mut rng, &[1, 6, 6]);
        let target = mk_input(&mut rng, &[2, 6, 6]);
        record(&mut v, "conv", &grad_check(&mut net, &input, &target, Loss::L2).unwrap());

        let mut b = NetBuilder::<f64>::new(2);
        let x = b.input();
        let t = b.tconv(x, "t", 1, 2, 4, 2, 1);
        let mut net = b.build(t);
        let target = mk_input(&mut rng, &[2, 12, 12]);
        record(
            &mut v,
            "transposed_conv",
            &grad_check(&mut net, &input, &target, Loss::L2).unwrap(),
        );

        let mut b = NetBuilder::<f64>::new(3);
        let x = b.input();
        let p = b.prelu(x, "p", 1);
        let mut net = b.build(p);
        let signed = Tensor::<f64>::from_fn(&[1, 6, 6], |i| {
            let v = ((i as f64) * 0.37).sin();
            if v >= 0.0 {
                v + 0.01
            } else {
                v - 0.01
            }
        });
        let target = mk_input(&mut rng, &[1, 6, 6]);
        record(&mut v, "prelu", &grad_check(&mut net, &signed, &target, Loss::L2).unwrap());

        let mut b = NetBuilder::<f64>::new(4);
        let x = b.input();
        let c1 = b.conv(x, "c1", 1, 2, 3, 1, 1);
        let c2 = b.conv(x, "c2", 1, 2, 3, 1, 1);
        let s = b.add_scaled(c1, c2, -1.0);
        let cat = b.concat(&[s, c2]);
        let head = b.conv(cat, "head", 4, 1, 1, 1, 0);
        let up = b.upsample_bicubic(head, 2);
        let mut net = b.build(up);
        let target = mk_input(&mut rng, &[1, 12, 12]);
        record(
            &mut v,
            "add_skip/concat/upsample_bicubic",
            &grad_check(&mut net, &input, &target, Loss::Charbonnier { eps: 1e-3 }).unwrap(),
        );

        let mut b = NetBuilder::<f64>::new(5);
        let x = b.input();
        let c = b.conv(x, "c", 1, 2, 3, 1, 1);
        let pool = b.avg_pool(c, 2);
        let g = b.global_avg_pool(pool);
        let head = b.conv(g, "head", 2, 3, 1, 1, 0);
        let mut net = b.build(head);
        let input8 = mk_input(&mut rng, &[1, 8, 8]);
        let target = mk_input(&mut rng, &[3, 1, 1]);
        record(
            &mut v,
            "pooling stack",
            &grad_check(&mut net, &input8, &target, Loss::L2).unwrap(),
        );
    }

    // Every model family at minimal hyperparameters, including the
    // parameterless baseline, plus the switch classifier.
    for name in ModelSpec::family_names() {
        let spec = ModelSpec::minimal_for(name, 4).unwrap();
        let model: Model<f32> = spec.build(7).unwrap();
        let mut f64_model: Model<f64> = model.cast();
        let mut checked = 0usize;
        for net in f64_model.networks_mut() {
            let (input, target) = conditioned_pair(net, (1, 8, 8), 77).unwrap();
            let report = grad_check(net, &input, &target, spec.default_loss()).unwrap();
            checked += report.parameter_count;
            record(&mut v, name, &report);
        }
        if *name == "bicubic_baseline" {
            v.check(checked == 0, "baseline must have zero parameters");
        }
    }
    {
        let clf = SwitchClassifier::build(&SwitchSpec::new(3), 13).unwrap();
        let mut net = clf.net.cast::<f64>();
        let (input, target) = conditioned_pair(&net, (1, 16, 16), 5).unwrap();
        record(
            &mut v,
            "switch classifier",
            &grad_check(&mut net, &input, &target, Loss::L2).unwrap(),
        );
    }

    let elapsed = started.elapsed().as_secs_f64();
    v.check(elapsed < 60.0, format!("runtime {elapsed:.1}s exceeds 60s"));
    v.finish();
}

#[test]
fn criterion_2_metric_oracles() {
    let _guard = serial();
    let mut v = Verdict::new(2, "metric oracles");

    let mut rng = Rng::new(31);
    let x = Tensor::<f32>::from_fn(&[1, 24, 24], |_| rng.next_f64() as f32);
    v.check(ssim_luma(&x, &x).unwrap() == 1.0, "SSIM(x,x) must be exactly 1");

    let a = Tensor::<f32>::filled(&[1, 16, 16], 0.5);
    let b = Tensor::<f32>::filled(&[1, 16, 16], 0.25);
    let closed_form = (2.0 * 0.5 * 0.25 + 1e-4) / (0.5 * 0.5 + 0.25 * 0.25 + 1e-4);
    let got = ssim_luma(&a, &b).unwrap();
    v.check(
        (got - closed_form).abs() < 1e-9,
        format!("constant SSIM {got} vs closed form {closed_form}"),
    );

    let p = psnr_tensor(
        &Tensor::<f64>::filled(&[1, 16, 16], 0.3),
        &Tensor::<f64>::filled(&[1, 16, 16], 0.4),
    );
    v.check((p - 20.0).abs() < 1e-9, format!("uniform-0.1 PSNR {p} != 20"));

    let flat = ImagePatch::new("flat", Tensor::filled(&[1, 8, 8], 0.6)).unwrap();
    v.check(entropy(&flat) == 0.0, "entropy of constant image");
    let binary = ImagePatch::new(
        "binary",
        Tensor::from_fn(&[1, 8, 8], |i| if i < 32 { 0.0 } else { 1.0 }),
    )
    .unwrap();
    v.check(
        (entropy(&binary) - 1.0).abs() < 1e-12,
        format!("binary image entropy {}", entropy(&binary)),
    );
    v.finish();
}

#[test]
fn criterion_3_resampling_oracles() {
    let _guard = serial();
    let mut v = Verdict::new(3, "resampling oracles");

    let constant = ImagePatch::new("c", Tensor::filled(&[1, 12, 10], 0.371)).unwrap();
    for (oh, ow) in [(48, 40), (3, 5), (12, 10)] {
        let r = bicubic_resize(&constant, oh, ow).unwrap();
        let worst = r
            .pixels
            .data()
            .iter()
            .map(|&p| (p as f64 - 0.371).abs())
            .fold(0.0, f64::max);
        v.check(worst < 1e-6, format!("constant resize to {oh}x{ow}: err {worst}"));
    }

    let w = 16usize;
    let ramp = Tensor::<f64>::from_fn(&[1, 6, w], |i| (i % w) as f64 / (w - 1) as f64);
    let up = resize_tensor(&ramp, 12, 2 * w);
    let mut worst = 0.0f64;
    for y in 3..9 {
        for x in 4..(2 * w - 4) {
            let src = (x as f64 + 0.5) * 0.5 - 0.5;
            let expect = src / (w - 1) as f64;
            worst = worst.max((up.at3(0, y, x) - expect).abs());
        }
    }
    v.check(worst < 1e-6, format!("linear ramp interior err {worst}"));

    let mut rng = Rng::new(17);
    let mut worst_adjoint = 0.0f64;
    for _ in 0..10 {
        let weights = Tensor::<f64>::from_fn(&[3, 2, 4, 4], |_| rng.uniform(-1.0, 1.0));
        let x = Tensor::<f64>::from_fn(&[2, 8, 8], |_| rng.uniform(-1.0, 1.0));
        let fx = srswitch::layers::conv2d_forward(&x, &weights, &Tensor::zeros(&[3]), 2, 1).unwrap();
        let y = Tensor::<f64>::from_fn(fx.dims(), |_| rng.uniform(-1.0, 1.0));
        let aty = srswitch::layers::tconv2d_forward(&y, &weights, &Tensor::zeros(&[2]), 2, 1).unwrap();
        worst_adjoint = worst_adjoint.max((fx.dot_f64(&y).unwrap() - x.dot_f64(&aty).unwrap()).abs());
    }
    v.check(
        worst_adjoint < 1e-10,
        format!("adjoint identity err {worst_adjoint}"),
    );
    v.finish();
}

#[test]
fn criterion_4_end_to_end_desk_experiment() {
    let _guard = serial();
    let f = fixture();
    let started = Instant::now();
    let mut v = Verdict::new(4, "end-to-end desk experiment");

    // (a) Oracle routing dominance, exact.
    let models = [f.fsrcnn.clone(), f.dbpn.clone()];
    let scores = per_patch_scores(&f.pairs, &models, RouteCriterion::MaxPsnr, 2).unwrap();
    let n = f.pairs.len() as f64;
    let mean_fsrcnn: f64 = scores.iter().map(|r| r[0]).sum::<f64>() / n;
    let mean_dbpn: f64 = scores.iter().map(|r| r[1]).sum::<f64>() / n;
    let mean_oracle: f64 = scores.iter().map(|r| r[0].max(r[1])).sum::<f64>() / n;
    v.check(
        mean_oracle >= mean_fsrcnn.max(mean_dbpn),
        format!("oracle {mean_oracle} < max single ({mean_fsrcnn}, {mean_dbpn})"),
    );

    // (b) At tau = 0.02, structured patches dominate the difficult set.
    let structured_total = f
        .labels
        .iter()
        .filter(|l| l.patch_id.starts_with("synth_struct"))
        .count();
    let structured_difficult = f
        .labels
        .iter()
        .filter(|l| l.patch_id.starts_with("synth_struct") && l.label == Difficulty::Difficult)
        .count();
    let frac = structured_difficult as f64 / structured_total as f64;
    v.check(
        frac >= 0.70,
        format!("only {structured_difficult}/{structured_total} structured patches difficult"),
    );

    // (c) Switch agreement with its labels on held-out patches.
    let holdout: Vec<(Tensor<f32>, usize)> = f
        .pairs
        .iter()
        .zip(&f.labels)
        .filter(|(p, _)| p.split == Split::Val)
        .map(|(p, l)| {
            (
                p.lr.clone(),
                if l.label == Difficulty::Difficult { 1 } else { 0 },
            )
        })
        .collect();
    let agreement = accuracy(&f.classifier, &holdout).unwrap();
    v.check(
        agreement >= 0.90,
        format!("held-out switch agreement {agreement}"),
    );

    // (d) Hybrid routing costs fewer MACs than the deep-only configuration.
    let val_pairs: Vec<PatchPair> = f
        .pairs
        .iter()
        .filter(|p| p.split == Split::Val)
        .cloned()
        .collect();
    let deep_cfg = BenchConfig::Single {
        name: "dbpn_t".into(),
        model: &f.dbpn,
    };
    let hybrid_cfg = BenchConfig::Hybrid {
        name: "hybrid".into(),
        classifier: &f.classifier,
        experts: vec![&f.fsrcnn, &f.dbpn],
    };
    let (deep_record, _) = run_config(&deep_cfg, &val_pairs, 3).unwrap();
    let (hybrid_record, _) = run_config(&hybrid_cfg, &val_pairs, 3).unwrap();
    v.check(
        hybrid_record.route_histogram[0] >= 1,
        "no patch routed to the shallow expert",
    );
    v.check(
        hybrid_record.total_flops < deep_record.total_flops,
        format!(
            "hybrid {} flops !< deep {} flops",
            hybrid_record.total_flops, deep_record.total_flops
        ),
    );

    let total = f.build_seconds + started.elapsed().as_secs_f64();
    v.check(
        total <= 600.0,
        format!("experiment took {total:.0}s, over the 10 min budget"),
    );
    v.finish();
}

#[test]
fn criterion_5_coupled_training_invariants() {
    let _guard = serial();
    let mut v = Verdict::new(5, "coupled training invariants");

    let dir = tempfile::tempdir().unwrap();
    let manifest = synth_corpus(&dir.path().join("c"), 60, 32, 32, 1.0, 5).unwrap();
    let pairs = load_pairs(&manifest, None).unwrap();
    assert_eq!(pairs.len(), 60);
    let tensor_pairs: Vec<(Tensor<f32>, Tensor<f32>)> =
        pairs.iter().map(|p| (p.lr.clone(), p.hr.clone())).collect();

    let warmup = TrainOptions {
        epochs: 5,
        lr: 0.1,
        momentum: 0.9,
        seed: 1,
        batch_size: 2,
        threads: 2,
        loss: None,
    };
    let mut expert0: Model<f32> = ModelSpec::minimal_for("fsrcnn_t", 4).unwrap().build(1).unwrap();
    train(&mut expert0, &tensor_pairs, &warmup).unwrap();
    let mut expert1: Model<f32> = ModelSpec::minimal_for("lapsrn_t", 4).unwrap().build(2).unwrap();
    train(&mut expert1, &tensor_pairs, &TrainOptions { seed: 2, ..warmup }).unwrap();
    // A dead expert: all-zero weights produce all-zero output, so it can
    // never win an assignment and must be flagged as skipped.
    let mut dead: Model<f32> = ModelSpec::minimal_for("fsrcnn_t", 4).unwrap().build(3).unwrap();
    for net in dead.networks_mut() {
        for p in net.params_mut() {
            p.value.scale(0.0);
        }
    }

    let mut models = vec![expert0, expert1, dead];
    let mut clf = SwitchClassifier::build(&SwitchSpec::new(3), 4).unwrap();
    let report = coupled_train(
        &mut models,
        &mut clf,
        &pairs,
        &CoupledOptions {
            rounds: 3,
            seed: 6,
            expert_lr: 0.05,
            expert_momentum: 0.9,
            switch_epochs: 4,
            switch_lr: 0.02,
            batch_size: 8,
            threads: 2,
        },
    )
    .unwrap();

    v.check(report.rounds.len() == 3, "run did not complete 3 rounds");
    for round in &report.rounds {
        v.check(
            round.assignment_histogram.iter().sum::<usize>() == 60,
            format!("round {} assignment histogram does not sum to 60", round.round),
        );
        v.check(
            round.routing_histogram.iter().sum::<usize>() == 60,
            format!("round {} routing histogram does not sum to 60", round.round),
        );
        v.check(
            round.assignment_histogram[2] == 0,
            format!("round {}: dead expert won an assignment", round.round),
        );
        if let Some(prev) = round.prev_assignment_loss {
            v.check(
                round.mean_assigned_loss <= prev,
                format!(
                    "round {}: reassignment increased loss {} -> {}",
                    round.round, prev, round.mean_assigned_loss
                ),
            );
        }
    }
    v.check(
        report.rounds.iter().any(|r| r.skipped_experts.contains(&2)),
        "dead expert was never flagged as skipped",
    );

    // Argmin dominance under the final experts, brute-forced.
    let final_scores = per_patch_scores(&pairs, &models, RouteCriterion::MinLoss, 2).unwrap();
    let mean_best: f64 = final_scores
        .iter()
        .map(|row| row.iter().cloned().fold(f64::INFINITY, f64::min))
        .sum::<f64>()
        / 60.0;
    for k in 0..3 {
        let mean_single: f64 = final_scores.iter().map(|r| r[k]).sum::<f64>() / 60.0;
        v.check(
            mean_best <= mean_single,
            format!("argmin mean {mean_best} exceeds single-expert mean {mean_single}"),
        );
    }
    v.finish();
}

/// One full mini pipeline run; returns every artifact as named bytes.
fn deterministic_pipeline(root: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let manifest = synth_corpus(&root.join("corpus"), 40, 64, 64, 0.8, 9).unwrap();
    let pairs = load_pairs(&manifest, None).unwrap();
    let train_pairs: Vec<(Tensor<f32>, Tensor<f32>)> = pairs
        .iter()
        .filter(|p| p.split == Split::Train)
        .map(|p| (p.lr.clone(), p.hr.clone()))
        .collect();

    let spec = ModelSpec::DbpnT {
        scale: 4,
        stages: 2,
        base: 8,
        feat: 16,
    };
    let mut deep: Model<f32> = spec.build(7).unwrap();
    train(
        &mut deep,
        &train_pairs,
        &TrainOptions {
            epochs: 12,
            lr: 0.1,
            momentum: 0.9,
            seed: 3,
            batch_size: 2,
            threads: 2,
            loss: None,
        },
    )
    .unwrap();
    let weights_path = root.join("deep.srw");
    srswitch::weights::save_model(&weights_path, &deep).unwrap();

    let labels = label_by_delta_ssim(&pairs, &deep, 0.02, 2).unwrap();

    let examples: Vec<(Tensor<f32>, usize)> = pairs
        .iter()
        .zip(&labels)
        .filter(|(p, _)| p.split == Split::Train)
        .map(|(p, l)| {
            (
                p.lr.clone(),
                if l.label == Difficulty::Difficult { 1 } else { 0 },
            )
        })
        .collect();
    let mut clf = SwitchClassifier::build(&SwitchSpec::new(2), 5).unwrap();
    train_switch(
        &mut clf,
        &examples,
        &[],
        &SwitchTrainOptions {
            epochs: 4,
            lr: 0.02,
            momentum: 0.9,
            batch_size: 8,
            seed: 4,
            threads: 2,
        },
    )
    .unwrap();
    let switch_path = root.join("switch.srw");
    srswitch::weights::save_network(&switch_path, &clf.net).unwrap();

    // Bench metrics over the validation split (timing fields excluded from
    // the comparison by construction: the per-patch dump has none).
    let val_pairs: Vec<PatchPair> = pairs.iter().filter(|p| p.split == Split::Val).cloned().collect();
    let cfg = BenchConfig::Single {
        name: "deep".into(),
        model: &deep,
    };
    let (_, outcomes) = run_config(&cfg, &val_pairs, 3).unwrap();
    let patch_csv = per_patch_csv("deep", &outcomes);

    let metric_rows: Vec<(String, MetricTriple)> = val_pairs
        .iter()
        .map(|p| {
            let sr = deep.forward(&p.lr).unwrap();
            (
                p.id.clone(),
                MetricTriple {
                    psnr_db: psnr_tensor(&sr, &p.hr),
                    ssim: ssim_luma(&sr, &p.hr).unwrap(),
                    entropy_bits: entropy(&ImagePatch::new(p.id.clone(), p.hr.clone()).unwrap()),
                },
            )
        })
        .collect();

    let mut artifacts = vec![
        (
            "manifest.csv".to_string(),
            std::fs::read(manifest.manifest_path()).unwrap(),
        ),
        ("deep.srw".to_string(), std::fs::read(&weights_path).unwrap()),
        ("labels.csv".to_string(), labels_csv(&labels).into_bytes()),
        ("switch.srw".to_string(), std::fs::read(&switch_path).unwrap()),
        ("bench_patches.csv".to_string(), patch_csv.into_bytes()),
        ("metrics.csv".to_string(), metrics_csv(&metric_rows).into_bytes()),
    ];
    for row in &manifest.rows {
        artifacts.push((
            format!("hr/{}", row.patch_id),
            std::fs::read(manifest.root.join(&row.hr_path)).unwrap(),
        ));
        artifacts.push((
            format!("lr/{}", row.patch_id),
            std::fs::read(manifest.root.join(&row.lr_path)).unwrap(),
        ));
    }
    artifacts
}

#[test]
fn criterion_6_pipeline_determinism() {
    let _guard = serial();
    let mut v = Verdict::new(6, "pipeline determinism");

    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let run_a = deterministic_pipeline(dir_a.path());
    let run_b = deterministic_pipeline(dir_b.path());

    v.check(run_a.len() == run_b.len(), "artifact lists differ in length");
    for ((name_a, bytes_a), (name_b, bytes_b)) in run_a.iter().zip(&run_b) {
        v.check(name_a == name_b, format!("artifact order: {name_a} vs {name_b}"));
        v.check(
            bytes_a == bytes_b,
            format!("artifact '{name_a}' differs between identical runs"),
        );
    }
    v.finish();
}

#[test]
fn criterion_7_benchmark_structure() {
    let _guard = serial();
    let f = fixture();
    let mut v = Verdict::new(7, "benchmark flop structure");

    let deep_cfg = BenchConfig::Single {
        name: "dbpn_t".into(),
        model: &f.dbpn,
    };
    let shallow_cfg = BenchConfig::Single {
        name: "fsrcnn_t".into(),
        model: &f.fsrcnn,
    };
    let hybrid_cfg = BenchConfig::Hybrid {
        name: "hybrid".into(),
        classifier: &f.classifier,
        experts: vec![&f.fsrcnn, &f.dbpn],
    };
    let configs = [deep_cfg, shallow_cfg, hybrid_cfg];
    let counts = [100usize, 200, 300, 400];
    let records = sweep(&configs, &f.sweep_pairs, &counts, 77, 3).unwrap();
    v.check(records.len() == 12, "expected 12 records");

    // Single-model configurations are exactly linear in patch count.
    for name in ["dbpn_t", "fsrcnn_t"] {
        let per: Vec<u64> = counts
            .iter()
            .map(|&c| {
                let r = records
                    .iter()
                    .find(|r| r.config == name && r.patch_count == c)
                    .unwrap();
                v.check(
                    r.total_flops % c as u64 == 0,
                    format!("{name}@{c}: flops not divisible by count"),
                );
                r.total_flops / c as u64
            })
            .collect();
        v.check(
            per.windows(2).all(|w| w[0] == w[1]),
            format!("{name}: per-patch flops not constant across counts: {per:?}"),
        );
    }

    // Hybrid premise and slope comparison.
    let hybrid: Vec<&srswitch::bench::BenchRecord> = counts
        .iter()
        .map(|&c| {
            records
                .iter()
                .find(|r| r.config == "hybrid" && r.patch_count == c)
                .unwrap()
        })
        .collect();
    let deep: Vec<&srswitch::bench::BenchRecord> = counts
        .iter()
        .map(|&c| {
            records
                .iter()
                .find(|r| r.config == "dbpn_t" && r.patch_count == c)
                .unwrap()
        })
        .collect();
    let shallow_fraction: f64 = hybrid
        .iter()
        .map(|r| r.route_histogram[0] as f64 / r.patch_count as f64)
        .sum::<f64>()
        / hybrid.len() as f64;
    v.check(
        shallow_fraction >= 0.30,
        format!("only {shallow_fraction:.2} of patches routed shallow"),
    );

    let slope = |rs: &[&srswitch::bench::BenchRecord]| -> f64 {
        (rs[3].total_flops as f64 - rs[0].total_flops as f64)
            / (rs[3].patch_count as f64 - rs[0].patch_count as f64)
    };
    let hybrid_slope = slope(&hybrid);
    let deep_slope = slope(&deep);
    v.check(
        hybrid_slope < deep_slope,
        format!("hybrid slope {hybrid_slope} !< deep slope {deep_slope}"),
    );
    for (h, d) in hybrid.iter().zip(&deep) {
        v.check(
            h.total_flops < d.total_flops,
            format!("at {} patches hybrid not cheaper", h.patch_count),
        );
    }
    v.finish();
}
