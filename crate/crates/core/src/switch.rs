//! Patch routing: SSIM-difference labeling, the compact switch classifier,
//! oracle assignment, and the coupled classifier/expert training loop.
//!
//! A patch is "difficult" when the deep model beats plain bicubic upscaling
//! by at least `tau` in SSIM: those are the patches where a heavy network
//! actually recovers detail. The switch classifier learns to predict the
//! route from the LR patch alone, so the decision costs almost nothing at
//! inference time.

use crate::error::{Error, Result};
use crate::dataset::PatchPair;
use crate::loss::{loss_value, Loss};
use crate::metrics::{format_sig9, ssim_luma};
use crate::models::Model;
use crate::net::{NetBuilder, Network};
use crate::par::par_map;
use crate::resample;
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Difficulty {
    Easy,
    Difficult,
}

impl Difficulty {
    pub fn as_str(&self) -> &'static str {
        match self {
            Difficulty::Easy => "easy",
            Difficulty::Difficult => "difficult",
        }
    }
}

/// Outcome of the delta-SSIM labeling rule for one patch.
#[derive(Debug, Clone)]
pub struct PatchLabel {
    pub patch_id: String,
    /// SSIM(deep SR, HR) - SSIM(bicubic, HR).
    pub delta_ssim: f64,
    pub label: Difficulty,
    pub threshold: f64,
}

/// Label every patch by whether `deep` beats bicubic by at least `tau` in
/// SSIM. Ties (delta == tau) are difficult.
pub fn label_by_delta_ssim(
    pairs: &[PatchPair],
    deep: &Model<f32>,
    tau: f64,
    threads: usize,
) -> Result<Vec<PatchLabel>> {
    if tau <= 0.0 {
        return Err(Error::invalid("labeling threshold must be > 0"));
    }
    let scale = deep.spec.scale();
    let results = par_map(pairs, threads, |_, pair| -> Result<PatchLabel> {
        let (_, lh, lw) = pair.lr.shape3()?;
        let (_, hh, hw) = pair.hr.shape3()?;
        if (hh, hw) != (scale * lh, scale * lw) {
            return Err(Error::shape(format!(
                "patch {}: dims {lh}x{lw} -> {hh}x{hw} do not match deep model scale {scale}",
                pair.id
            )));
        }
        let sr = deep.forward(&pair.lr)?;
        let up = resample::resize_tensor(&pair.lr, hh, hw).clamp(0.0, 1.0);
        let ssim_deep = ssim_luma(&sr, &pair.hr)
            .map_err(|e| Error::invalid(format!("patch {}: {e}", pair.id)))?;
        let ssim_bicubic = ssim_luma(&up, &pair.hr)
            .map_err(|e| Error::invalid(format!("patch {}: {e}", pair.id)))?;
        let delta = ssim_deep - ssim_bicubic;
        Ok(PatchLabel {
            patch_id: pair.id.clone(),
            delta_ssim: delta,
            label: if delta >= tau {
                Difficulty::Difficult
            } else {
                Difficulty::Easy
            },
            threshold: tau,
        })
    });
    results.into_iter().collect()
}

/// CSV dump `patch_id,delta_ssim,label,threshold`.
pub fn labels_csv(labels: &[PatchLabel]) -> String {
    let mut out = String::from("patch_id,delta_ssim,label,threshold\n");
    for l in labels {
        out.push_str(&format!(
            "{},{},{},{}\n",
            l.patch_id,
            format_sig9(l.delta_ssim),
            l.label.as_str(),
            format_sig9(l.threshold)
        ));
    }
    out
}

/// Architecture of the switch classifier: four 3x3 conv stages with 2x2
/// average pooling between them, global average pooling, and a 1x1-conv
/// K-way head on top. Input is the LR luma patch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SwitchSpec {
    pub classes: usize,
    pub channels: usize,
}

impl SwitchSpec {
    pub fn new(classes: usize) -> Self {
        SwitchSpec {
            classes,
            channels: 8,
        }
    }

    pub fn to_kv(&self) -> String {
        format!("classes={}\nchannels={}\n", self.classes, self.channels)
    }

    pub fn from_kv(text: &str) -> Result<SwitchSpec> {
        let mut classes = None;
        let mut channels = None;
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some((k, v)) = line.split_once('=') {
                let v: usize = v
                    .trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("bad switch spec value: {line}")))?;
                match k.trim() {
                    "classes" => classes = Some(v),
                    "channels" => channels = Some(v),
                    other => return Err(Error::Config(format!("unknown switch key '{other}'"))),
                }
            }
        }
        Ok(SwitchSpec {
            classes: classes.ok_or_else(|| Error::Config("switch spec missing 'classes'".into()))?,
            channels: channels.unwrap_or(8),
        })
    }
}

#[derive(Debug, Clone)]
pub struct SwitchClassifier {
    pub spec: SwitchSpec,
    pub net: Network<f32>,
}

impl SwitchClassifier {
    pub fn build(spec: &SwitchSpec, seed: u64) -> Result<SwitchClassifier> {
        if spec.classes == 0 {
            return Err(Error::invalid("classifier needs at least one class"));
        }
        let c = spec.channels;
        let mut b = NetBuilder::<f32>::new(seed);
        let x = b.input();
        let c1 = b.conv(x, "s1", 1, c, 3, 1, 1);
        let a1 = b.prelu(c1, "s1_act", c);
        let p1 = b.avg_pool(a1, 2);
        let c2 = b.conv(p1, "s2", c, 2 * c, 3, 1, 1);
        let a2 = b.prelu(c2, "s2_act", 2 * c);
        let p2 = b.avg_pool(a2, 2);
        let c3 = b.conv(p2, "s3", 2 * c, 2 * c, 3, 1, 1);
        let a3 = b.prelu(c3, "s3_act", 2 * c);
        let p3 = b.avg_pool(a3, 2);
        let c4 = b.conv(p3, "s4", 2 * c, 2 * c, 3, 1, 1);
        let a4 = b.prelu(c4, "s4_act", 2 * c);
        let g = b.global_avg_pool(a4);
        let head = b.conv(g, "head", 2 * c, spec.classes, 1, 1, 0);
        Ok(SwitchClassifier {
            spec: spec.clone(),
            net: b.build(head),
        })
    }

    /// Class scores for one LR luma patch.
    pub fn scores(&self, lr: &Tensor<f32>) -> Result<Vec<f32>> {
        let out = self.net.forward(lr)?;
        Ok(out.data().to_vec())
    }

    /// Deterministic argmax route; ties break toward the lower index.
    pub fn route(&self, lr: &Tensor<f32>) -> Result<usize> {
        Ok(argmax(&self.scores(lr)?))
    }
}

pub fn argmax(scores: &[f32]) -> usize {
    let mut best = 0usize;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

fn softmax(scores: &[f32]) -> Vec<f32> {
    let max = scores.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    let exps: Vec<f32> = scores.iter().map(|&s| (s - max).exp()).collect();
    let sum: f32 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

#[derive(Debug, Clone)]
pub struct SwitchTrainOptions {
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub threads: usize,
}

impl Default for SwitchTrainOptions {
    fn default() -> Self {
        SwitchTrainOptions {
            epochs: 10,
            lr: 0.02,
            momentum: 0.9,
            batch_size: 8,
            seed: 0,
            threads: 1,
        }
    }
}

/// Cross-entropy training on (LR luma patch, class) examples. Returns the
/// held-out accuracy after each epoch (empty holdout reports accuracy on the
/// training set instead). Zero epochs returns the classifier untouched.
pub fn train_switch(
    clf: &mut SwitchClassifier,
    train: &[(Tensor<f32>, usize)],
    holdout: &[(Tensor<f32>, usize)],
    opts: &SwitchTrainOptions,
) -> Result<Vec<f64>> {
    if opts.epochs == 0 {
        return Ok(Vec::new());
    }
    if train.is_empty() {
        return Err(Error::invalid("switch training set is empty"));
    }
    let k = clf.spec.classes;
    let mut present = vec![false; k];
    for (_, class) in train {
        if *class >= k {
            return Err(Error::invalid(format!(
                "class {class} out of range for {k}-way classifier"
            )));
        }
        present[*class] = true;
    }
    if present.iter().filter(|&&p| p).count() < 2 {
        return Err(Error::invalid(
            "switch training needs at least 2 classes present",
        ));
    }

    let mut rng = Rng::new(opts.seed ^ 0x51C4_55F0);
    let param_dims: Vec<Vec<usize>> = clf
        .net
        .params()
        .iter()
        .map(|p| p.value.dims().to_vec())
        .collect();
    let mut velocity: Vec<Tensor<f32>> = param_dims.iter().map(|d| Tensor::zeros(d)).collect();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut accuracy_trace = Vec::with_capacity(opts.epochs);

    for _ in 0..opts.epochs {
        rng.shuffle(&mut order);
        for chunk in order.chunks(opts.batch_size.max(1)) {
            let net_ref: &Network<f32> = &clf.net;
            let results = par_map(chunk, opts.threads, |_, &idx| {
                let (input, class) = &train[idx];
                let values = net_ref.forward_all(input)?;
                let scores = values.last().unwrap();
                let probs = softmax(scores.data());
                // d(cross-entropy)/d(scores) = softmax - onehot.
                let mut grad = Tensor::<f32>::zeros(scores.dims());
                for (i, g) in grad.data_mut().iter_mut().enumerate() {
                    *g = probs[i] - if i == *class { 1.0 } else { 0.0 };
                }
                let grads = net_ref.backward(&values, &grad)?;
                Ok::<_, Error>(grads.params)
            });
            let mut batch_grads: Vec<Tensor<f32>> =
                param_dims.iter().map(|d| Tensor::zeros(d)).collect();
            let inv = 1.0f32 / chunk.len() as f32;
            for r in results {
                let grads = r?;
                for (acc, g) in batch_grads.iter_mut().zip(&grads) {
                    acc.add_scaled(g, inv)?;
                }
            }
            for (i, p) in clf.net.params_mut().iter_mut().enumerate() {
                if !p.trainable {
                    continue;
                }
                crate::optim::sgd_step(
                    &mut p.value,
                    &batch_grads[i],
                    &mut velocity[i],
                    opts.lr,
                    opts.momentum,
                )?;
            }
        }
        let eval = if holdout.is_empty() { train } else { holdout };
        accuracy_trace.push(accuracy(clf, eval)?);
    }
    Ok(accuracy_trace)
}

/// Fraction of examples whose argmax route matches the given class.
pub fn accuracy(clf: &SwitchClassifier, examples: &[(Tensor<f32>, usize)]) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::invalid("accuracy over an empty set"));
    }
    let mut hits = 0usize;
    for (input, class) in examples {
        if clf.route(input)? == *class {
            hits += 1;
        }
    }
    Ok(hits as f64 / examples.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RouteCriterion {
    MinLoss,
    MaxPsnr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    OraclePsnr,
    OracleLoss,
    Threshold,
    Classifier,
}

impl Provenance {
    pub fn as_str(&self) -> &'static str {
        match self {
            Provenance::OraclePsnr => "oracle_psnr",
            Provenance::OracleLoss => "oracle_loss",
            Provenance::Threshold => "threshold",
            Provenance::Classifier => "classifier",
        }
    }
}

/// Per-patch expert choice plus how it was decided.
#[derive(Debug, Clone)]
pub struct RoutingAssignment {
    pub provenance: Provenance,
    /// (patch_id, model index), in input order.
    pub entries: Vec<(String, usize)>,
    /// Patches per model; sums to `entries.len()`.
    pub histogram: Vec<usize>,
}

impl RoutingAssignment {
    pub fn csv(&self) -> String {
        let mut out = String::from("patch_id,model_index,provenance\n");
        for (id, idx) in &self.entries {
            out.push_str(&format!("{id},{idx},{}\n", self.provenance.as_str()));
        }
        out
    }
}

/// Evaluate every model on every patch and assign each patch to its best
/// expert (argmin L2 loss or argmax PSNR; ties go to the lower index).
pub fn assign_best(
    pairs: &[PatchPair],
    models: &[Model<f32>],
    criterion: RouteCriterion,
    threads: usize,
) -> Result<RoutingAssignment> {
    if models.is_empty() {
        return Err(Error::invalid("assignment needs at least one model"));
    }
    let scale = models[0].spec.scale();
    for m in models {
        if m.spec.scale() != scale {
            return Err(Error::invalid("all experts must share one scale"));
        }
    }
    let per_patch = per_patch_scores(pairs, models, criterion, threads)?;
    let mut entries = Vec::with_capacity(pairs.len());
    let mut histogram = vec![0usize; models.len()];
    for (pair, scores) in pairs.iter().zip(&per_patch) {
        let mut best = 0usize;
        for i in 1..scores.len() {
            let better = match criterion {
                RouteCriterion::MinLoss => scores[i] < scores[best],
                RouteCriterion::MaxPsnr => scores[i] > scores[best],
            };
            if better {
                best = i;
            }
        }
        histogram[best] += 1;
        entries.push((pair.id.clone(), best));
    }
    Ok(RoutingAssignment {
        provenance: match criterion {
            RouteCriterion::MinLoss => Provenance::OracleLoss,
            RouteCriterion::MaxPsnr => Provenance::OraclePsnr,
        },
        entries,
        histogram,
    })
}

/// Score matrix: `result[patch][model]` is the L2 loss (MinLoss) or PSNR
/// (MaxPsnr) of that model's clamped output against the HR patch.
pub fn per_patch_scores(
    pairs: &[PatchPair],
    models: &[Model<f32>],
    criterion: RouteCriterion,
    threads: usize,
) -> Result<Vec<Vec<f64>>> {
    let rows = par_map(pairs, threads, |_, pair| -> Result<Vec<f64>> {
        let mut row = Vec::with_capacity(models.len());
        for model in models {
            let sr = model.forward(&pair.lr)?;
            row.push(match criterion {
                RouteCriterion::MinLoss => loss_value(Loss::L2, &sr, &pair.hr)?,
                RouteCriterion::MaxPsnr => crate::metrics::psnr_tensor(&sr, &pair.hr),
            });
        }
        Ok(row)
    });
    rows.into_iter().collect()
}

/// What happened in one coupled-training round.
#[derive(Debug, Clone)]
pub struct CoupledRound {
    pub round: usize,
    /// assign_best histogram (argmin loss under the current experts).
    pub assignment_histogram: Vec<usize>,
    /// Classifier routing histogram after retraining.
    pub routing_histogram: Vec<usize>,
    /// Mean loss of each patch under its newly assigned expert.
    pub mean_assigned_loss: f64,
    /// The previous round's assignment re-scored under the current experts;
    /// `None` in round 0.
    pub prev_assignment_loss: Option<f64>,
    /// Fraction of patches where the classifier agrees with the assignment.
    pub classifier_agreement: f64,
    /// Experts that received no routed patches and were skipped in fine-tuning.
    pub skipped_experts: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct CoupledReport {
    pub rounds: Vec<CoupledRound>,
}

#[derive(Debug, Clone)]
pub struct CoupledOptions {
    pub rounds: usize,
    pub seed: u64,
    pub expert_lr: f64,
    pub expert_momentum: f64,
    pub switch_epochs: usize,
    pub switch_lr: f64,
    pub batch_size: usize,
    pub threads: usize,
}

impl Default for CoupledOptions {
    fn default() -> Self {
        CoupledOptions {
            rounds: 3,
            seed: 0,
            expert_lr: 0.01,
            expert_momentum: 0.9,
            switch_epochs: 5,
            switch_lr: 0.02,
            batch_size: 8,
            threads: 1,
        }
    }
}

/// Coupled training: per round, (a) assign every patch to its minimum-loss
/// expert, (b) retrain the switch on those assignments, (c) route every patch
/// with the switch, (d) fine-tune each expert for one epoch on its routed
/// subset. Experts routed zero patches are skipped and flagged.
pub fn coupled_train(
    models: &mut [Model<f32>],
    clf: &mut SwitchClassifier,
    pairs: &[PatchPair],
    opts: &CoupledOptions,
) -> Result<CoupledReport> {
    if opts.rounds == 0 {
        return Err(Error::invalid("coupled training needs rounds >= 1"));
    }
    if models.is_empty() || pairs.is_empty() {
        return Err(Error::invalid("coupled training needs models and patches"));
    }
    if clf.spec.classes != models.len() {
        return Err(Error::invalid(format!(
            "classifier has {} classes but there are {} experts",
            clf.spec.classes,
            models.len()
        )));
    }

    let mut rng = Rng::new(opts.seed ^ 0xC09E_D771_0A5B_3E24);
    let mut prev_assignment: Option<RoutingAssignment> = None;
    let mut rounds = Vec::with_capacity(opts.rounds);

    for round in 0..opts.rounds {
        // (a) Oracle assignment under the current experts.
        let scores = per_patch_scores(pairs, models, RouteCriterion::MinLoss, opts.threads)?;
        let assignment = assignment_from_scores(pairs, &scores);
        let mean_assigned_loss = assignment
            .entries
            .iter()
            .enumerate()
            .map(|(pi, (_, mi))| scores[pi][*mi])
            .sum::<f64>()
            / pairs.len() as f64;
        let prev_assignment_loss = prev_assignment.as_ref().map(|prev| {
            prev.entries
                .iter()
                .enumerate()
                .map(|(pi, (_, mi))| scores[pi][*mi])
                .sum::<f64>()
                / pairs.len() as f64
        });

        // (b) Retrain the switch on the assignments. A collapsed (single
        // class) assignment leaves the classifier as-is: argmax of one class
        // needs no training signal.
        let examples: Vec<(Tensor<f32>, usize)> = pairs
            .iter()
            .zip(&assignment.entries)
            .map(|(p, (_, mi))| (p.lr.clone(), *mi))
            .collect();
        let distinct = {
            let mut seen = vec![false; models.len()];
            for (_, c) in &examples {
                seen[*c] = true;
            }
            seen.iter().filter(|&&s| s).count()
        };
        if distinct >= 2 {
            train_switch(
                clf,
                &examples,
                &[],
                &SwitchTrainOptions {
                    epochs: opts.switch_epochs,
                    lr: opts.switch_lr,
                    momentum: 0.9,
                    batch_size: opts.batch_size,
                    seed: rng.next_u64(),
                    threads: opts.threads,
                },
            )?;
        }

        // (c) Route with the retrained classifier.
        let mut routed: Vec<Vec<usize>> = vec![Vec::new(); models.len()];
        let mut routing_histogram = vec![0usize; models.len()];
        let mut agree = 0usize;
        for (pi, pair) in pairs.iter().enumerate() {
            let route = clf.route(&pair.lr)?;
            routing_histogram[route] += 1;
            routed[route].push(pi);
            if route == assignment.entries[pi].1 {
                agree += 1;
            }
        }

        // (d) One fine-tuning epoch per expert on its routed subset.
        let mut skipped = Vec::new();
        for (mi, subset) in routed.iter().enumerate() {
            if subset.is_empty() {
                skipped.push(mi);
                continue;
            }
            let subset_pairs: Vec<(Tensor<f32>, Tensor<f32>)> = subset
                .iter()
                .map(|&pi| (pairs[pi].lr.clone(), pairs[pi].hr.clone()))
                .collect();
            crate::models::train(
                &mut models[mi],
                &subset_pairs,
                &crate::models::TrainOptions {
                    epochs: 1,
                    lr: opts.expert_lr,
                    momentum: opts.expert_momentum,
                    seed: rng.next_u64(),
                    batch_size: opts.batch_size,
                    threads: opts.threads,
                    loss: None,
                },
            )?;
        }

        rounds.push(CoupledRound {
            round,
            assignment_histogram: assignment.histogram.clone(),
            routing_histogram,
            mean_assigned_loss,
            prev_assignment_loss,
            classifier_agreement: agree as f64 / pairs.len() as f64,
            skipped_experts: skipped,
        });
        prev_assignment = Some(assignment);
    }
    Ok(CoupledReport { rounds })
}

fn assignment_from_scores(pairs: &[PatchPair], scores: &[Vec<f64>]) -> RoutingAssignment {
    let k = scores[0].len();
    let mut entries = Vec::with_capacity(pairs.len());
    let mut histogram = vec![0usize; k];
    for (pair, row) in pairs.iter().zip(scores) {
        let mut best = 0usize;
        for i in 1..k {
            if row[i] < row[best] {
                best = i;
            }
        }
        histogram[best] += 1;
        entries.push((pair.id.clone(), best));
    }
    RoutingAssignment {
        provenance: Provenance::OracleLoss,
        entries,
        histogram,
    }
}
