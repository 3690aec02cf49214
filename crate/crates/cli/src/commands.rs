use crate::config::RunConfig;
use crate::Command;
use srswitch::bench::{per_patch_csv, report_csv, report_table, run_config, sweep, BenchConfig, BenchRecord};
use srswitch::dataset::{load_manifest, load_pairs, synth_corpus, PatchPair, PrepareOptions, Split};
use srswitch::error::{Error, Result};
use srswitch::gradcheck::{conditioned_pair, grad_check};
use srswitch::image::load_png;
use srswitch::metrics::{entropy, format_sig9, metrics_csv, psnr, ssim, MetricTriple};
use srswitch::models::{train, Model, ModelSpec, TrainOptions};
use srswitch::switch::{
    coupled_train, label_by_delta_ssim, labels_csv, train_switch, CoupledOptions, Difficulty,
    Provenance, SwitchClassifier, SwitchSpec, SwitchTrainOptions,
};
use srswitch::weights::{load_model, save_model, save_network, load_into_network};
use srswitch::image::ImagePatch;
use std::path::{Path, PathBuf};

pub fn dispatch(command: Command, cfg: RunConfig) -> Result<()> {
    match command {
        Command::Synth {
            count,
            patch_size,
            split,
        } => {
            let n = count.unwrap_or(cfg.count);
            let size = patch_size.unwrap_or(cfg.patch_size);
            let ratio = split.unwrap_or(cfg.split_ratio);
            let manifest = synth_corpus(&cfg.corpus_dir, n, size, size, ratio, cfg.seed)?;
            println!(
                "wrote {} patches ({} train / {} val) under {}",
                manifest.rows.len(),
                manifest.rows_for(Split::Train).count(),
                manifest.rows_for(Split::Val).count(),
                cfg.corpus_dir.display()
            );
            cfg.log_run("synth")
        }
        Command::Prepare {
            mosaic,
            sample,
            patch_size,
            split,
        } => {
            let size = patch_size.unwrap_or(cfg.patch_size);
            let mosaics: Vec<ImagePatch> = mosaic
                .iter()
                .map(|p| load_png(p))
                .collect::<Result<_>>()?;
            let opts = PrepareOptions {
                patch_h: size,
                patch_w: size,
                scale: cfg.scale,
                sample_n: sample.unwrap_or(cfg.sample_n),
                split_ratio: split.unwrap_or(cfg.split_ratio),
                seed: cfg.seed,
            };
            let manifest = srswitch::dataset::prepare(&mosaics, &cfg.corpus_dir, &opts)?;
            println!(
                "wrote {} patches under {}",
                manifest.rows.len(),
                cfg.corpus_dir.display()
            );
            cfg.log_run("prepare")
        }
        Command::TrainModel {
            model,
            epochs,
            lr,
            momentum,
            batch,
        } => {
            let spec = ModelSpec::default_for(&model, cfg.scale)?;
            let mut built: Model<f32> = spec.build(cfg.seed)?;
            let pairs = corpus_pairs(&cfg, Some(Split::Train))?;
            let tensor_pairs: Vec<_> = pairs.iter().map(|p| (p.lr.clone(), p.hr.clone())).collect();
            let losses = train(
                &mut built,
                &tensor_pairs,
                &TrainOptions {
                    epochs: epochs.unwrap_or(cfg.epochs),
                    lr: lr.unwrap_or(cfg.lr),
                    momentum: momentum.unwrap_or(cfg.momentum),
                    seed: cfg.seed,
                    batch_size: batch.unwrap_or(cfg.batch),
                    threads: cfg.threads,
                    loss: None,
                },
            )?;
            save_model(&model_weights_path(&cfg, &model), &built)?;
            std::fs::create_dir_all(&cfg.weights_dir).map_err(|e| Error::io(&cfg.weights_dir, e))?;
            let spec_path = cfg.weights_dir.join(format!("{model}.spec"));
            std::fs::write(&spec_path, spec.to_kv()).map_err(|e| Error::io(&spec_path, e))?;
            write_out(&cfg, &format!("{model}_loss.csv"), &loss_csv(&losses))?;
            println!(
                "trained {model}: loss {} -> {} over {} epochs",
                format_sig9(losses[0]),
                format_sig9(*losses.last().unwrap()),
                losses.len()
            );
            cfg.log_run("train-model")
        }
        Command::Label { deep } => {
            let model = load_named_model(&cfg, &deep)?;
            let pairs = corpus_pairs(&cfg, None)?;
            let labels = label_by_delta_ssim(&pairs, &model, cfg.tau, cfg.threads)?;
            write_out(&cfg, "labels.csv", &labels_csv(&labels))?;
            let difficult = labels
                .iter()
                .filter(|l| l.label == Difficulty::Difficult)
                .count();
            println!(
                "labeled {} patches at tau={}: {} difficult / {} easy",
                labels.len(),
                cfg.tau,
                difficult,
                labels.len() - difficult
            );
            cfg.log_run("label")
        }
        Command::TrainSwitch { labels, epochs, lr } => {
            let labels_path = labels.unwrap_or_else(|| cfg.out_dir.join("labels.csv"));
            let classes = load_label_classes(&labels_path)?;
            let manifest = load_manifest(&cfg.corpus_dir.join("manifest.csv"))?;
            let pairs = load_pairs(&manifest, None)?;
            let mut train_set = Vec::new();
            let mut holdout = Vec::new();
            for pair in &pairs {
                let class = *classes.get(&pair.id).ok_or_else(|| {
                    Error::Config(format!("patch {} missing from {}", pair.id, labels_path.display()))
                })?;
                match pair.split {
                    Split::Train => train_set.push((pair.lr.clone(), class)),
                    Split::Val => holdout.push((pair.lr.clone(), class)),
                }
            }
            let spec = SwitchSpec::new(2);
            let mut clf = SwitchClassifier::build(&spec, cfg.seed)?;
            let trace = train_switch(
                &mut clf,
                &train_set,
                &holdout,
                &SwitchTrainOptions {
                    epochs: epochs.unwrap_or(cfg.switch_epochs),
                    lr: lr.unwrap_or(cfg.switch_lr),
                    momentum: 0.9,
                    batch_size: cfg.batch.max(8),
                    seed: cfg.seed,
                    threads: cfg.threads,
                },
            )?;
            save_network(&cfg.weights_dir.join("switch.srw"), &clf.net)?;
            let spec_path = cfg.weights_dir.join("switch.spec");
            std::fs::write(&spec_path, spec.to_kv()).map_err(|e| Error::io(&spec_path, e))?;
            write_out(&cfg, "switch_accuracy.csv", &accuracy_csv(&trace))?;
            println!(
                "switch trained: held-out accuracy {}",
                format_sig9(*trace.last().unwrap_or(&f64::NAN))
            );
            cfg.log_run("train-switch")
        }
        Command::Couple { experts, rounds } => {
            let names: Vec<&str> = experts.split(',').map(|s| s.trim()).collect();
            let mut models: Vec<Model<f32>> = names
                .iter()
                .map(|n| load_named_model(&cfg, n))
                .collect::<Result<_>>()?;
            let mut clf = SwitchClassifier::build(&SwitchSpec::new(models.len()), cfg.seed)?;
            let pairs = corpus_pairs(&cfg, Some(Split::Train))?;
            let report = coupled_train(
                &mut models,
                &mut clf,
                &pairs,
                &CoupledOptions {
                    rounds: rounds.unwrap_or(3),
                    seed: cfg.seed,
                    expert_lr: cfg.lr,
                    expert_momentum: cfg.momentum,
                    switch_epochs: cfg.switch_epochs,
                    switch_lr: cfg.switch_lr,
                    batch_size: cfg.batch,
                    threads: cfg.threads,
                },
            )?;
            for (name, model) in names.iter().zip(&models) {
                save_model(
                    &cfg.weights_dir.join(format!("{name}.coupled.srw")),
                    model,
                )?;
            }
            save_network(&cfg.weights_dir.join("switch.coupled.srw"), &clf.net)?;
            write_out(&cfg, "coupled_report.csv", &coupled_csv(&report, &names))?;
            for round in &report.rounds {
                println!(
                    "round {}: assignments {:?} routing {:?} mean_loss {} agreement {:.3}{}",
                    round.round,
                    round.assignment_histogram,
                    round.routing_histogram,
                    format_sig9(round.mean_assigned_loss),
                    round.classifier_agreement,
                    if round.skipped_experts.is_empty() {
                        String::new()
                    } else {
                        format!(" skipped {:?}", round.skipped_experts)
                    }
                );
            }
            cfg.log_run("couple")
        }
        Command::Route { classes } => {
            let clf = load_switch(&cfg, classes)?;
            let pairs = corpus_pairs(&cfg, None)?;
            let mut entries = Vec::with_capacity(pairs.len());
            let mut histogram = vec![0usize; clf.spec.classes];
            for pair in &pairs {
                let idx = clf.route(&pair.lr)?;
                histogram[idx] += 1;
                entries.push((pair.id.clone(), idx));
            }
            let assignment = srswitch::switch::RoutingAssignment {
                provenance: Provenance::Classifier,
                entries,
                histogram: histogram.clone(),
            };
            write_out(&cfg, "assignments.csv", &assignment.csv())?;
            println!("routed {} patches: histogram {histogram:?}", pairs.len());
            cfg.log_run("route")
        }
        Command::Bench {
            configs,
            counts,
            repeats,
        } => {
            let pairs = corpus_pairs(&cfg, None)?;
            let counts: Vec<usize> = match counts {
                Some(list) => list
                    .split(',')
                    .map(|s| {
                        s.trim()
                            .parse()
                            .map_err(|_| Error::Config(format!("bad count '{s}'")))
                    })
                    .collect::<Result<_>>()?,
                None => cfg.patch_counts.clone(),
            };
            let repeats = repeats.unwrap_or(cfg.repeats);

            // Own all models first; BenchConfig borrows them.
            let mut owned: Vec<(String, Model<f32>)> = Vec::new();
            let mut hybrids: Vec<(String, Vec<String>)> = Vec::new();
            for item in configs.split(',').map(|s| s.trim()) {
                if let Some(rest) = item.strip_prefix("hybrid:") {
                    let names: Vec<String> = rest.split('+').map(|s| s.to_string()).collect();
                    for n in &names {
                        if !owned.iter().any(|(o, _)| o == n) {
                            owned.push((n.clone(), load_named_model(&cfg, n)?));
                        }
                    }
                    hybrids.push((item.to_string(), names));
                } else if !owned.iter().any(|(o, _)| o == item) {
                    owned.push((item.to_string(), load_named_model(&cfg, item)?));
                }
            }
            let singles: Vec<String> = configs
                .split(',')
                .map(|s| s.trim().to_string())
                .filter(|s| !s.starts_with("hybrid:"))
                .collect();
            let clf = if hybrids.is_empty() {
                None
            } else {
                Some(load_switch(&cfg, Some(hybrids[0].1.len()))?)
            };

            let mut bench_configs: Vec<BenchConfig> = Vec::new();
            for name in &singles {
                let model = &owned.iter().find(|(o, _)| o == name).unwrap().1;
                bench_configs.push(BenchConfig::Single {
                    name: name.clone(),
                    model,
                });
            }
            for (label, names) in &hybrids {
                let experts: Vec<&Model<f32>> = names
                    .iter()
                    .map(|n| &owned.iter().find(|(o, _)| o == n).unwrap().1)
                    .collect();
                bench_configs.push(BenchConfig::Hybrid {
                    name: label.clone(),
                    classifier: clf.as_ref().unwrap(),
                    experts,
                });
            }

            let records = sweep(&bench_configs, &pairs, &counts, cfg.seed, repeats)?;
            write_out(&cfg, "bench.csv", &report_csv(&records))?;
            // Per-patch dump over the whole corpus, one block per config.
            let mut dump = String::new();
            for bc in &bench_configs {
                let (_, outcomes) = run_config(bc, &pairs, repeats.max(3))?;
                let block = per_patch_csv(bc.name(), &outcomes);
                if dump.is_empty() {
                    dump.push_str(&block);
                } else {
                    dump.extend(block.lines().skip(1).map(|l| format!("{l}\n")));
                }
            }
            write_out(&cfg, "bench_patches.csv", &dump)?;
            print!("{}", report_table(&records));
            cfg.log_run("bench")
        }
        Command::Report { records } => {
            let path = records.unwrap_or_else(|| cfg.out_dir.join("bench.csv"));
            let parsed = parse_bench_csv(&path)?;
            write_out(&cfg, "report.csv", &report_csv(&parsed))?;
            print!("{}", report_table(&parsed));
            cfg.log_run("report")
        }
        Command::Gradcheck { model } => {
            let spec = ModelSpec::minimal_for(&model, cfg.scale)?;
            let built: Model<f32> = spec.build(cfg.seed)?;
            let mut f64_model: Model<f64> = built.cast();
            let mut worst = 0.0f64;
            let mut params = 0usize;
            for net in f64_model.networks_mut() {
                let (input, target) = conditioned_pair(net, (1, 8, 8), cfg.seed)?;
                let report = grad_check(net, &input, &target, spec.default_loss())?;
                worst = worst.max(report.max_relative_error);
                params += report.parameter_count;
            }
            println!(
                "gradcheck {model}: max relative error {} over {params} parameters",
                format_sig9(worst)
            );
            cfg.log_run("gradcheck")?;
            if worst < 1e-4 {
                Ok(())
            } else {
                Err(Error::invalid(format!(
                    "gradient check failed: {worst} >= 1e-4"
                )))
            }
        }
        Command::Metrics { model } => {
            let pairs = corpus_pairs(&cfg, None)?;
            let model = match model {
                Some(name) => {
                    if name == "bicubic_baseline" {
                        ModelSpec::BicubicBaseline { scale: cfg.scale }.build(0)?
                    } else {
                        load_named_model(&cfg, &name)?
                    }
                }
                None => ModelSpec::BicubicBaseline { scale: cfg.scale }.build(0)?,
            };
            let mut rows = Vec::with_capacity(pairs.len());
            for pair in &pairs {
                let sr = model.forward(&pair.lr)?;
                let sr_patch = ImagePatch::new(pair.id.clone(), sr)?;
                let hr_patch = ImagePatch::new(pair.id.clone(), pair.hr.clone())?;
                rows.push((
                    pair.id.clone(),
                    MetricTriple {
                        psnr_db: psnr(&sr_patch, &hr_patch)?,
                        ssim: ssim(&sr_patch, &hr_patch)?,
                        entropy_bits: entropy(&hr_patch),
                    },
                ));
            }
            write_out(&cfg, "metrics.csv", &metrics_csv(&rows))?;
            println!("wrote metrics for {} patches", rows.len());
            cfg.log_run("metrics")
        }
    }
}

fn corpus_pairs(cfg: &RunConfig, split: Option<Split>) -> Result<Vec<PatchPair>> {
    let manifest_path = cfg.corpus_dir.join("manifest.csv");
    let manifest = load_manifest(&manifest_path)?;
    let diagnostics = srswitch::dataset::validate_manifest(&manifest, cfg.scale);
    if !diagnostics.is_empty() {
        return Err(Error::Config(format!(
            "manifest {} failed validation:\n  {}",
            manifest_path.display(),
            diagnostics.join("\n  ")
        )));
    }
    load_pairs(&manifest, split)
}

fn model_weights_path(cfg: &RunConfig, name: &str) -> PathBuf {
    cfg.weights_dir.join(format!("{name}.srw"))
}

fn load_named_model(cfg: &RunConfig, name: &str) -> Result<Model<f32>> {
    if name == "bicubic_baseline" {
        return ModelSpec::BicubicBaseline { scale: cfg.scale }.build(0);
    }
    let spec_path = cfg.weights_dir.join(format!("{name}.spec"));
    let weights_path = model_weights_path(cfg, name);
    for p in [&spec_path, &weights_path] {
        if !p.exists() {
            return Err(Error::Config(format!(
                "missing weights file {} (run `srswitch train-model --model {name}` first)",
                p.display()
            )));
        }
    }
    let text = std::fs::read_to_string(&spec_path).map_err(|e| Error::io(&spec_path, e))?;
    let spec = ModelSpec::from_kv(&text)?;
    let mut model = spec.build(0)?;
    load_model(&weights_path, &mut model)?;
    Ok(model)
}

fn load_switch(cfg: &RunConfig, classes: Option<usize>) -> Result<SwitchClassifier> {
    let spec_path = cfg.weights_dir.join("switch.spec");
    let weights_path = cfg.weights_dir.join("switch.srw");
    for p in [&spec_path, &weights_path] {
        if !p.exists() {
            return Err(Error::Config(format!(
                "missing weights file {} (run `srswitch train-switch` first)",
                p.display()
            )));
        }
    }
    let text = std::fs::read_to_string(&spec_path).map_err(|e| Error::io(&spec_path, e))?;
    let spec = SwitchSpec::from_kv(&text)?;
    if let Some(k) = classes {
        if spec.classes != k {
            return Err(Error::Config(format!(
                "switch was trained {}-way but {k} experts were requested",
                spec.classes
            )));
        }
    }
    let mut clf = SwitchClassifier::build(&spec, 0)?;
    load_into_network(&weights_path, &mut clf.net)?;
    Ok(clf)
}

fn load_label_classes(path: &Path) -> Result<std::collections::BTreeMap<String, usize>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::collections::BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(Error::Manifest {
                row: i + 1,
                message: format!("label CSV expects 4 fields, got {}", fields.len()),
            });
        }
        let class = match fields[2] {
            "easy" => 0usize,
            "difficult" => 1,
            other => {
                return Err(Error::Manifest {
                    row: i + 1,
                    message: format!("unknown label '{other}'"),
                })
            }
        };
        out.insert(fields[0].to_string(), class);
    }
    Ok(out)
}

fn loss_csv(losses: &[f64]) -> String {
    let mut out = String::from("epoch,mean_loss\n");
    for (i, l) in losses.iter().enumerate() {
        out.push_str(&format!("{},{}\n", i + 1, format_sig9(*l)));
    }
    out
}

fn accuracy_csv(trace: &[f64]) -> String {
    let mut out = String::from("epoch,holdout_accuracy\n");
    for (i, a) in trace.iter().enumerate() {
        out.push_str(&format!("{},{}\n", i + 1, format_sig9(*a)));
    }
    out
}

fn coupled_csv(report: &srswitch::switch::CoupledReport, names: &[&str]) -> String {
    let mut out = String::from(
        "round,expert,expert_name,assigned,routed,mean_assigned_loss,classifier_agreement,skipped\n",
    );
    for round in &report.rounds {
        for (i, name) in names.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                round.round,
                i,
                name,
                round.assignment_histogram[i],
                round.routing_histogram[i],
                format_sig9(round.mean_assigned_loss),
                format_sig9(round.classifier_agreement),
                round.skipped_experts.contains(&i)
            ));
        }
    }
    out
}

fn parse_bench_csv(path: &Path) -> Result<Vec<BenchRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(Error::Manifest {
                row: i + 1,
                message: format!("bench CSV expects 6 fields, got {}", fields.len()),
            });
        }
        let parse_f = |v: &str| -> Result<f64> {
            if v == "inf" {
                return Ok(f64::INFINITY);
            }
            v.parse()
                .map_err(|_| Error::Config(format!("bad number '{v}' in {}", path.display())))
        };
        out.push(BenchRecord {
            config: fields[0].to_string(),
            patch_count: fields[1]
                .parse()
                .map_err(|_| Error::Config(format!("bad count '{}'", fields[1])))?,
            wall_time_s: parse_f(fields[2])?,
            total_flops: fields[3]
                .parse()
                .map_err(|_| Error::Config(format!("bad flops '{}'", fields[3])))?,
            mean_psnr_db: parse_f(fields[4])?,
            mean_ssim: parse_f(fields[5])?,
            route_histogram: Vec::new(),
        });
    }
    Ok(out)
}

fn write_out(cfg: &RunConfig, name: &str, content: &str) -> Result<()> {
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    let path = cfg.out_dir.join(name);
    std::fs::write(&path, content).map_err(|e| Error::io(&path, e))
}
