//! Benchmark harness: run single-model and hybrid configurations over patch
//! sets, account wall time and multiply-accumulate counts, and emit the
//! records as CSV and an aligned table.
//!
//! The timed section runs strictly single-threaded so configurations stay
//! comparable; metric evaluation happens outside the timer. Flop counts are
//! the deterministic, machine-independent surrogate for time: they are
//! exactly additive over patches, so assertions about cost curves do not
//! depend on the host.

use crate::dataset::PatchPair;
use crate::error::{Error, Result};
use crate::metrics::{format_sig, format_sig9, psnr_tensor, ssim_luma};
use crate::models::Model;
use crate::rng::Rng;
use crate::switch::SwitchClassifier;
use crate::tensor::Tensor;
use std::time::Instant;

/// What to run: one expert for every patch, or classifier-routed experts.
pub enum BenchConfig<'a> {
    Single { name: String, model: &'a Model<f32> },
    Hybrid {
        name: String,
        classifier: &'a SwitchClassifier,
        experts: Vec<&'a Model<f32>>,
    },
}

impl<'a> BenchConfig<'a> {
    pub fn name(&self) -> &str {
        match self {
            BenchConfig::Single { name, .. } => name,
            BenchConfig::Hybrid { name, .. } => name,
        }
    }

    fn expert_count(&self) -> usize {
        match self {
            BenchConfig::Single { .. } => 1,
            BenchConfig::Hybrid { experts, .. } => experts.len(),
        }
    }
}

/// One (configuration, patch set) measurement.
#[derive(Debug, Clone)]
pub struct BenchRecord {
    pub config: String,
    pub patch_count: usize,
    /// Median of the repeat wall times, seconds.
    pub wall_time_s: f64,
    /// Multiply-accumulate count including classifier overhead.
    pub total_flops: u64,
    pub mean_psnr_db: f64,
    pub mean_ssim: f64,
    /// Patches per expert; a single-model config has one bucket.
    pub route_histogram: Vec<usize>,
}

/// Per-patch evaluation detail, for external plotting dumps.
#[derive(Debug, Clone)]
pub struct PatchOutcome {
    pub patch_id: String,
    pub model_index: usize,
    pub psnr_db: f64,
    pub ssim: f64,
}

/// Run one configuration over the patches. `repeats` must be >= 3; wall time
/// is the median over repeats, timed single-threaded, with image codec work
/// excluded (patches arrive decoded).
pub fn run_config(
    config: &BenchConfig,
    pairs: &[PatchPair],
    repeats: usize,
) -> Result<(BenchRecord, Vec<PatchOutcome>)> {
    if repeats < 3 {
        return Err(Error::invalid("bench needs at least 3 repeats"));
    }
    if pairs.is_empty() {
        return Err(Error::invalid("bench needs at least one patch"));
    }

    let mut times = Vec::with_capacity(repeats);
    let mut outputs: Vec<(usize, Tensor<f32>)> = Vec::new();
    for rep in 0..repeats {
        let start = Instant::now();
        let mut run: Vec<(usize, Tensor<f32>)> = Vec::with_capacity(pairs.len());
        for pair in pairs {
            let (idx, sr) = match config {
                BenchConfig::Single { model, .. } => (0usize, model.forward(&pair.lr)?),
                BenchConfig::Hybrid {
                    classifier,
                    experts,
                    ..
                } => {
                    // The switch forward is deliberately inside the timed
                    // region: routing overhead is part of the hybrid cost.
                    let idx = classifier.route(&pair.lr)?;
                    if idx >= experts.len() {
                        return Err(Error::invalid(format!(
                            "classifier routed to expert {idx}, only {} experts",
                            experts.len()
                        )));
                    }
                    (idx, experts[idx].forward(&pair.lr)?)
                }
            };
            run.push((idx, sr));
        }
        times.push(start.elapsed().as_secs_f64());
        if rep == 0 {
            outputs = run;
        }
    }
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let wall_time_s = times[times.len() / 2];

    let mut route_histogram = vec![0usize; config.expert_count()];
    let mut total_flops = 0u64;
    let mut psnr_sum = 0.0f64;
    let mut ssim_sum = 0.0f64;
    let mut outcomes = Vec::with_capacity(pairs.len());
    for (pair, (idx, sr)) in pairs.iter().zip(&outputs) {
        route_histogram[*idx] += 1;
        let (_, lh, lw) = pair.lr.shape3()?;
        total_flops += match config {
            BenchConfig::Single { model, .. } => model.flops(lh, lw)?.0,
            BenchConfig::Hybrid {
                classifier,
                experts,
                ..
            } => experts[*idx].flops(lh, lw)?.0 + classifier.net.flops((1, lh, lw))?,
        };
        let p = psnr_tensor(sr, &pair.hr);
        let s = ssim_luma(sr, &pair.hr)?;
        psnr_sum += p;
        ssim_sum += s;
        outcomes.push(PatchOutcome {
            patch_id: pair.id.clone(),
            model_index: *idx,
            psnr_db: p,
            ssim: s,
        });
    }

    Ok((
        BenchRecord {
            config: config.name().to_string(),
            patch_count: pairs.len(),
            wall_time_s,
            total_flops,
            mean_psnr_db: psnr_sum / pairs.len() as f64,
            mean_ssim: ssim_sum / pairs.len() as f64,
            route_histogram,
        },
        outcomes,
    ))
}

/// Run every configuration over seeded random subsets of sizes `counts`.
/// All configurations see identical subsets (paired design).
pub fn sweep(
    configs: &[BenchConfig],
    pairs: &[PatchPair],
    counts: &[usize],
    seed: u64,
    repeats: usize,
) -> Result<Vec<BenchRecord>> {
    if counts.is_empty() {
        return Err(Error::invalid("sweep needs at least one patch count"));
    }
    let mut rng = Rng::new(seed);
    let mut records = Vec::with_capacity(configs.len() * counts.len());
    for &count in counts {
        if count > pairs.len() {
            return Err(Error::invalid(format!(
                "sweep count {count} exceeds corpus size {}",
                pairs.len()
            )));
        }
        let subset_idx = rng.sample_indices(pairs.len(), count);
        let subset: Vec<PatchPair> = subset_idx.iter().map(|&i| pairs[i].clone()).collect();
        for config in configs {
            let (record, _) = run_config(config, &subset, repeats)?;
            records.push(record);
        }
    }
    Ok(records)
}

/// CSV report, sorted by (config, patch_count). Metrics carry 4 decimals,
/// wall time 3 significant figures.
pub fn report_csv(records: &[BenchRecord]) -> String {
    let mut sorted: Vec<&BenchRecord> = records.iter().collect();
    sorted.sort_by(|a, b| (a.config.as_str(), a.patch_count).cmp(&(b.config.as_str(), b.patch_count)));
    let mut out = String::from("config,patch_count,wall_time_s,total_flops,mean_psnr_db,mean_ssim\n");
    for r in sorted {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.config,
            r.patch_count,
            format_sig(r.wall_time_s, 3),
            r.total_flops,
            format_metric(r.mean_psnr_db),
            format_metric(r.mean_ssim)
        ));
    }
    out
}

fn format_metric(v: f64) -> String {
    if v.is_infinite() {
        return if v > 0.0 { "inf" } else { "-inf" }.to_string();
    }
    format!("{v:.4}")
}

/// Plain-text table with aligned columns, same ordering as the CSV.
pub fn report_table(records: &[BenchRecord]) -> String {
    let csv = report_csv(records);
    let rows: Vec<Vec<String>> = csv
        .lines()
        .map(|l| l.split(',').map(|s| s.to_string()).collect())
        .collect();
    let cols = rows[0].len();
    let mut widths = vec![0usize; cols];
    for row in &rows {
        for (i, cell) in row.iter().enumerate() {
            widths[i] = widths[i].max(cell.len());
        }
    }
    let mut out = String::new();
    for row in &rows {
        let line: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(i, cell)| format!("{:>width$}", cell, width = widths[i]))
            .collect();
        out.push_str(&line.join("  "));
        out.push('\n');
    }
    out
}

/// Per-patch dump `patch_id,config,model_index,psnr_db,ssim` for external
/// plotting.
pub fn per_patch_csv(config_name: &str, outcomes: &[PatchOutcome]) -> String {
    let mut out = String::from("patch_id,config,model_index,psnr_db,ssim\n");
    for o in outcomes {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            o.patch_id,
            config_name,
            o.model_index,
            format_sig9(o.psnr_db),
            format_sig9(o.ssim)
        ));
    }
    out
}
