//! Adam optimization, stratified k-fold cross-validation, and metrics.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{self, Gradients, ModelWeights, NetworkSpec, NUM_CLASSES};
use crate::rng::SeededRng;
use crate::tensor::{self as ops, Tensor};

/// Adam hyperparameters. The defaults are the common choice; nothing in the
/// reproduced setup pins them, so they stay configurable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Optimizer state: first/second moment buffers per parameter tensor, in
/// f64 so repeated tiny updates do not wash out.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub hyper: AdamParams,
    pub t: u64,
    moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl AdamState {
    pub fn new(hyper: AdamParams) -> Self {
        AdamState { hyper, t: 0, moments: BTreeMap::new() }
    }
}

/// One Adam update with bias correction. Every weight tensor must have a
/// matching gradient; moments are allocated on first use.
pub fn adam_step(weights: &mut ModelWeights, grads: &Gradients, state: &mut AdamState) -> Result<()> {
    state.t += 1;
    let AdamParams { lr, beta1, beta2, eps } = state.hyper;
    let bc1 = 1.0 - beta1.powi(state.t as i32);
    let bc2 = 1.0 - beta2.powi(state.t as i32);
    for (name, w) in weights.tensors.iter_mut() {
        let g = grads
            .get(name)
            .ok_or_else(|| Error::param("adam_step", format!("no gradient for {name:?}")))?;
        crate::tensor::expect_shape("adam_step", g, w.shape())?;
        let n = w.data().len();
        let (m, v) = state
            .moments
            .entry(name.clone())
            .or_insert_with(|| (vec![0.0; n], vec![0.0; n]));
        let data = w.data_mut();
        for i in 0..n {
            let gi = g.data()[i] as f64;
            m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
            v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            data[i] = (data[i] as f64 - lr * m_hat / (v_hat.sqrt() + eps)) as f32;
        }
    }
    Ok(())
}

/// Assignment of every sample to one of `k` folds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    pub k: usize,
    /// `assignment[i]` is the fold of sample `i`.
    pub assignment: Vec<usize>,
}

impl FoldPlan {
    pub fn val_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignment.len()).filter(|&i| self.assignment[i] == fold).collect()
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignment.len()).filter(|&i| self.assignment[i] != fold).collect()
    }

    /// Per-fold, per-class sample counts.
    pub fn class_counts(&self, labels: &[usize], classes: usize) -> Vec<Vec<usize>> {
        let mut counts = vec![vec![0usize; classes]; self.k];
        for (&f, &c) in self.assignment.iter().zip(labels) {
            counts[f][c] += 1;
        }
        counts
    }
}

/// Stratified fold assignment: within each class, a seeded shuffle followed
/// by round-robin dealing, so per-class counts across folds differ by at
/// most one. Requires every present class to have at least `k` samples.
pub fn make_stratified_folds(labels: &[usize], k: usize, rng: &SeededRng) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::param("make_stratified_folds", format!("k {k}; need at least 2 folds")));
    }
    if labels.is_empty() {
        return Err(Error::param("make_stratified_folds", "no samples"));
    }
    let classes = labels.iter().max().unwrap() + 1;
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, &c) in labels.iter().enumerate() {
        by_class[c].push(i);
    }
    let mut assignment = vec![0usize; labels.len()];
    for (c, members) in by_class.iter_mut().enumerate() {
        if members.is_empty() {
            continue;
        }
        if members.len() < k {
            return Err(Error::param(
                "make_stratified_folds",
                format!("class {c} has {} samples, fewer than k = {k}", members.len()),
            ));
        }
        let mut stream = rng.derive(c as u64);
        stream.shuffle(members);
        for (pos, &sample) in members.iter().enumerate() {
            assignment[sample] = pos % k;
        }
    }
    Ok(FoldPlan { k, assignment })
}

/// Re-keys a fold plan built over source images onto derived rows: row `i`
/// lands in the fold of `source_of[i]`. Augmented copies therefore can never
/// straddle the train/validation boundary of their original.
pub fn inherit_source_folds(source_plan: &FoldPlan, source_of: &[usize]) -> Result<FoldPlan> {
    let n = source_plan.assignment.len();
    let mut assignment = Vec::with_capacity(source_of.len());
    for (row, &src) in source_of.iter().enumerate() {
        if src >= n {
            return Err(Error::param(
                "inherit_source_folds",
                format!("row {row} references source {src}, but only {n} sources exist"),
            ));
        }
        assignment.push(source_plan.assignment[src]);
    }
    Ok(FoldPlan { k: source_plan.k, assignment })
}

/// Seeded stratified train/validation split. The validation share per class
/// is `round(n * val_fraction)` clamped to `[1, n - 1]`.
pub fn stratified_split(labels: &[usize], val_fraction: f64, rng: &SeededRng) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..1.0).contains(&val_fraction) || val_fraction == 0.0 {
        return Err(Error::param("stratified_split", format!("val_fraction {val_fraction} outside (0, 1)")));
    }
    let classes = labels.iter().max().map_or(0, |&m| m + 1);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, &c) in labels.iter().enumerate() {
        by_class[c].push(i);
    }
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (c, members) in by_class.iter_mut().enumerate() {
        if members.is_empty() {
            continue;
        }
        if members.len() < 2 {
            return Err(Error::param(
                "stratified_split",
                format!("class {c} has {} sample(s); need at least 2 to split", members.len()),
            ));
        }
        let mut stream = rng.derive(c as u64);
        stream.shuffle(members);
        let n = members.len();
        let take = ((n as f64 * val_fraction).round_ties_even() as usize).clamp(1, n - 1);
        val.extend_from_slice(&members[..take]);
        train.extend_from_slice(&members[take..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    Ok((train, val))
}

/// One training example: one input tensor per network path plus a one-hot
/// target.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub inputs: Vec<Tensor>,
    pub target: Tensor,
}

impl TrainSample {
    /// Class index encoded by the one-hot target.
    pub fn label(&self) -> usize {
        let d = self.target.data();
        let mut best = 0;
        for (i, &v) in d.iter().enumerate() {
            if v > d[best] {
                best = i;
            }
        }
        best
    }
}

fn input_refs(sample: &TrainSample) -> Vec<&Tensor> {
    sample.inputs.iter().collect()
}

/// One optimization pass over `samples` in a seeded shuffled order, with
/// gradients averaged per batch (a final short batch averages over its
/// actual size). Returns the mean loss of each batch, measured at the
/// weights the batch was computed with.
pub fn train_epoch(
    spec: &NetworkSpec,
    weights: &mut ModelWeights,
    adam: &mut AdamState,
    samples: &[TrainSample],
    batch_size: usize,
    order_rng: &mut SeededRng,
) -> Result<Vec<f32>> {
    if samples.is_empty() {
        return Err(Error::param("train_epoch", "no samples"));
    }
    if batch_size == 0 {
        return Err(Error::param("train_epoch", "batch_size must be at least 1"));
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order_rng.shuffle(&mut order);

    let mut history = Vec::new();
    for batch in order.chunks(batch_size) {
        let mut acc: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        let mut loss_sum = 0.0f64;
        for &i in batch {
            let sample = &samples[i];
            let trace = models::forward_trace(spec, weights, &input_refs(sample))?;
            loss_sum += ops::categorical_cross_entropy(trace.output(), &sample.target)? as f64;
            let lgrad = ops::categorical_cross_entropy_backward(trace.output(), &sample.target)?;
            let grads = models::backward(spec, weights, &trace, &lgrad)?;
            for (name, g) in grads {
                let buf = acc.entry(name).or_insert_with(|| vec![0.0; g.data().len()]);
                for (b, &v) in buf.iter_mut().zip(g.data()) {
                    *b += v as f64;
                }
            }
        }
        let n = batch.len() as f64;
        let mut averaged: Gradients = BTreeMap::new();
        for (name, buf) in acc {
            let shape = weights.get(&name)?.shape().to_vec();
            let data = buf.iter().map(|&v| (v / n) as f32).collect();
            averaged.insert(name, Tensor::new(shape, data)?);
        }
        adam_step(weights, &averaged, adam)?;
        history.push((loss_sum / n) as f32);
    }
    Ok(history)
}

/// Prediction counts: `confusion[truth][predicted]`.
pub fn confusion_matrix(
    spec: &NetworkSpec,
    weights: &ModelWeights,
    samples: &[TrainSample],
    indices: &[usize],
) -> Result<Vec<Vec<u64>>> {
    let mut conf = vec![vec![0u64; NUM_CLASSES]; NUM_CLASSES];
    for &i in indices {
        let sample = &samples[i];
        let probs = models::forward(spec, weights, &input_refs(sample))?;
        let pred = models::predicted_class(&probs)?;
        conf[sample.label()][pred] += 1;
    }
    Ok(conf)
}

fn check_confusion(op: &'static str, confusion: &[Vec<u64>]) -> Result<u64> {
    let c = confusion.len();
    if c == 0 || confusion.iter().any(|row| row.len() != c) {
        return Err(Error::shape(op, "square confusion matrix", format!("{} rows", c)));
    }
    let total: u64 = confusion.iter().flatten().sum();
    if total == 0 {
        return Err(Error::param(op, "confusion matrix has no samples"));
    }
    Ok(total)
}

/// Fraction of correct predictions: trace over total.
pub fn accuracy(confusion: &[Vec<u64>]) -> Result<f64> {
    let total = check_confusion("accuracy", confusion)?;
    let correct: u64 = (0..confusion.len()).map(|i| confusion[i][i]).sum();
    Ok(correct as f64 / total as f64)
}

/// Unweighted mean of per-class recalls `TP_i / (TP_i + FN_i)`. Classes with
/// no validation samples are left out of the mean.
pub fn mean_sensitivity(confusion: &[Vec<u64>]) -> Result<f64> {
    check_confusion("mean_sensitivity", confusion)?;
    let mut sum = 0.0f64;
    let mut classes = 0usize;
    for (i, row) in confusion.iter().enumerate() {
        let row_total: u64 = row.iter().sum();
        if row_total > 0 {
            sum += confusion[i][i] as f64 / row_total as f64;
            classes += 1;
        }
    }
    Ok(sum / classes as f64)
}

/// Settings for a full training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamParams,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { epochs: 2, batch_size: 75, adam: AdamParams::default(), seed: 0 }
    }
}

/// Result of training one model against one validation set.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Weights of the epoch with the highest validation accuracy (the
    /// earliest such epoch on ties).
    pub weights: ModelWeights,
    pub best_epoch: usize,
    pub accuracy: f64,
    pub mean_sensitivity: f64,
    pub confusion: Vec<Vec<u64>>,
    /// Batch-mean losses per epoch.
    pub epoch_losses: Vec<Vec<f32>>,
    /// Validation accuracy after each epoch.
    pub epoch_accuracy: Vec<f64>,
}

/// Trains from a fresh initialization drawn off `stream`, evaluating after
/// every epoch and keeping the best checkpoint.
pub fn train_with_validation(
    spec: &NetworkSpec,
    samples: &[TrainSample],
    train_idx: &[usize],
    val_idx: &[usize],
    cfg: &TrainConfig,
    stream: &SeededRng,
) -> Result<TrainOutcome> {
    if cfg.epochs == 0 {
        return Err(Error::param("train_with_validation", "epochs must be at least 1"));
    }
    if train_idx.is_empty() || val_idx.is_empty() {
        return Err(Error::param("train_with_validation", "empty train or validation set"));
    }
    let mut weights = models::init_weights(spec, &stream.derive(0))?;
    let mut adam = AdamState::new(cfg.adam);
    let train_samples: Vec<TrainSample> = train_idx.iter().map(|&i| samples[i].clone()).collect();

    let mut best: Option<TrainOutcome> = None;
    let mut epoch_losses = Vec::new();
    let mut epoch_accuracy = Vec::new();
    for epoch in 0..cfg.epochs {
        let mut order_rng = stream.derive(1 + epoch as u64);
        let losses = train_epoch(spec, &mut weights, &mut adam, &train_samples, cfg.batch_size, &mut order_rng)?;
        epoch_losses.push(losses);
        let confusion = confusion_matrix(spec, &weights, samples, val_idx)?;
        let acc = accuracy(&confusion)?;
        epoch_accuracy.push(acc);
        let improved = best.as_ref().is_none_or(|b| acc > b.accuracy);
        if improved {
            best = Some(TrainOutcome {
                weights: weights.clone(),
                best_epoch: epoch,
                accuracy: acc,
                mean_sensitivity: mean_sensitivity(&confusion)?,
                confusion,
                epoch_losses: Vec::new(),
                epoch_accuracy: Vec::new(),
            });
        }
    }
    let mut out = best.expect("at least one epoch ran");
    out.epoch_losses = epoch_losses;
    out.epoch_accuracy = epoch_accuracy;
    Ok(out)
}

/// Metrics of one cross-validation fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub fold: usize,
    pub best_epoch: usize,
    pub val_size: usize,
    pub accuracy: f64,
    pub mean_sensitivity: f64,
    pub confusion: Vec<Vec<u64>>,
}

/// Cross-validation metrics: per-fold records plus aggregates. The headline
/// number is the unweighted mean of fold accuracies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub k: usize,
    pub folds: Vec<FoldMetrics>,
    pub mean_accuracy: f64,
    pub mean_sensitivity: f64,
    /// Element-wise sum of the per-fold matrices; every sample appears in
    /// exactly one validation fold, so row sums equal per-class totals.
    pub aggregate_confusion: Vec<Vec<u64>>,
}

impl MetricsReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Validation(format!("metrics encode: {e}")))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Validation(format!("metrics decode: {e}")))
    }

    /// Plain-text summary, one row per fold.
    pub fn format_table(&self) -> String {
        let mut s = format!(
            "{:>4} {:>10} {:>8} {:>10} {:>13}\n",
            "fold", "best_epoch", "val_n", "accuracy", "sensitivity"
        );
        for f in &self.folds {
            s.push_str(&format!(
                "{:>4} {:>10} {:>8} {:>10.4} {:>13.4}\n",
                f.fold, f.best_epoch, f.val_size, f.accuracy, f.mean_sensitivity
            ));
        }
        s.push_str(&format!(
            "mean accuracy over {} folds: {:.4}; mean sensitivity: {:.4}\n",
            self.k, self.mean_accuracy, self.mean_sensitivity
        ));
        s
    }
}

/// Runs k independent trainings, each validating on a different fold, with
/// fresh per-fold seeded initializations. Aggregate accuracy is the mean of
/// the fold accuracies.
pub fn cross_validate(
    spec: &NetworkSpec,
    samples: &[TrainSample],
    plan: &FoldPlan,
    cfg: &TrainConfig,
) -> Result<MetricsReport> {
    if plan.assignment.len() != samples.len() {
        return Err(Error::shape(
            "cross_validate",
            format!("fold plan over {} samples", samples.len()),
            format!("{}", plan.assignment.len()),
        ));
    }
    let root = SeededRng::new(cfg.seed);
    let mut folds = Vec::with_capacity(plan.k);
    let mut aggregate = vec![vec![0u64; NUM_CLASSES]; NUM_CLASSES];
    let (mut acc_sum, mut sens_sum) = (0.0f64, 0.0f64);
    for fold in 0..plan.k {
        let val_idx = plan.val_indices(fold);
        let train_idx = plan.train_indices(fold);
        let outcome = train_with_validation(spec, samples, &train_idx, &val_idx, cfg, &root.derive(fold as u64))?;
        for (agg, row) in aggregate.iter_mut().zip(&outcome.confusion) {
            for (a, &v) in agg.iter_mut().zip(row) {
                *a += v;
            }
        }
        acc_sum += outcome.accuracy;
        sens_sum += outcome.mean_sensitivity;
        folds.push(FoldMetrics {
            fold,
            best_epoch: outcome.best_epoch,
            val_size: val_idx.len(),
            accuracy: outcome.accuracy,
            mean_sensitivity: outcome.mean_sensitivity,
            confusion: outcome.confusion,
        });
    }
    Ok(MetricsReport {
        k: plan.k,
        mean_accuracy: acc_sum / plan.k as f64,
        mean_sensitivity: sens_sum / plan.k as f64,
        aggregate_confusion: aggregate,
        folds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{LayerSpec, PathSpec};

    fn single_weight(v: f32) -> ModelWeights {
        let mut tensors = BTreeMap::new();
        tensors.insert("w".to_string(), Tensor::new(vec![1], vec![v]).unwrap());
        ModelWeights { tensors }
    }

    fn grad_of(v: f32) -> Gradients {
        let mut g = BTreeMap::new();
        g.insert("w".to_string(), Tensor::new(vec![1], vec![v]).unwrap());
        g
    }

    #[test]
    fn zero_gradient_leaves_params_alone() {
        let mut w = single_weight(0.5);
        let mut st = AdamState::new(AdamParams::default());
        adam_step(&mut w, &grad_of(0.0), &mut st).unwrap();
        assert_eq!(w.tensors["w"].data()[0], 0.5);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn first_step_size_is_learning_rate() {
        for g in [1e-3f32, 0.5, 1.0, -2.0] {
            let mut w = single_weight(1.0);
            let mut st = AdamState::new(AdamParams::default());
            adam_step(&mut w, &grad_of(g), &mut st).unwrap();
            let delta = (w.tensors["w"].data()[0] - 1.0).abs() as f64;
            assert!((delta - 1e-3).abs() < 1e-6, "g {g}: delta {delta}");
            // direction opposes the gradient
            let moved_down = w.tensors["w"].data()[0] < 1.0;
            assert_eq!(moved_down, g > 0.0);
        }
    }

    #[test]
    fn quadratic_descends_two_steps() {
        // f(w) = w^2, grad 2w, from w = 1 with lr = 0.1
        let mut w = single_weight(1.0);
        let mut st = AdamState::new(AdamParams { lr: 0.1, ..AdamParams::default() });
        let w0 = w.tensors["w"].data()[0];
        adam_step(&mut w, &grad_of(2.0 * w0), &mut st).unwrap();
        let w1 = w.tensors["w"].data()[0];
        assert!(w1 < w0);
        adam_step(&mut w, &grad_of(2.0 * w1), &mut st).unwrap();
        let w2 = w.tensors["w"].data()[0];
        assert!(w2 < w1);
    }

    #[test]
    fn zero_learning_rate_is_inert() {
        let mut w = single_weight(0.25);
        let mut st = AdamState::new(AdamParams { lr: 0.0, ..AdamParams::default() });
        adam_step(&mut w, &grad_of(3.0), &mut st).unwrap();
        assert_eq!(w.tensors["w"].data()[0], 0.25);
    }

    #[test]
    fn missing_or_mishapen_gradient_errors() {
        let mut w = single_weight(0.0);
        let mut st = AdamState::new(AdamParams::default());
        assert!(adam_step(&mut w, &BTreeMap::new(), &mut st).is_err());
        let mut bad = BTreeMap::new();
        bad.insert("w".to_string(), Tensor::zeros(&[2]));
        assert!(adam_step(&mut w, &bad, &mut st).is_err());
    }

    fn labels_uniform(per_class: usize, classes: usize) -> Vec<usize> {
        (0..per_class * classes).map(|i| i % classes).collect()
    }

    #[test]
    fn folds_are_balanced_at_full_scale() {
        let labels = labels_uniform(2000, 8);
        let plan = make_stratified_folds(&labels, 10, &SeededRng::new(4)).unwrap();
        let counts = plan.class_counts(&labels, 8);
        for fold_counts in &counts {
            assert_eq!(fold_counts.iter().sum::<usize>(), 1600);
            assert!(fold_counts.iter().all(|&c| c == 200), "{fold_counts:?}");
        }
    }

    #[test]
    fn folds_handle_one_sample_per_class_per_fold() {
        let labels = labels_uniform(10, 8);
        let plan = make_stratified_folds(&labels, 10, &SeededRng::new(4)).unwrap();
        let counts = plan.class_counts(&labels, 8);
        for fold_counts in &counts {
            assert_eq!(fold_counts.iter().sum::<usize>(), 8);
            assert!(fold_counts.iter().all(|&c| c == 1));
        }
    }

    #[test]
    fn folds_partition_and_stay_within_one() {
        let labels: Vec<usize> = (0..157).map(|i| i % 3).collect();
        let plan = make_stratified_folds(&labels, 4, &SeededRng::new(9)).unwrap();
        let mut seen = vec![false; labels.len()];
        for f in 0..4 {
            for i in plan.val_indices(f) {
                assert!(!seen[i], "sample {i} in two folds");
                seen[i] = true;
            }
        }
        assert!(seen.iter().all(|&s| s));
        let counts = plan.class_counts(&labels, 3);
        for c in 0..3 {
            let per_fold: Vec<usize> = counts.iter().map(|f| f[c]).collect();
            let (lo, hi) = (per_fold.iter().min().unwrap(), per_fold.iter().max().unwrap());
            assert!(hi - lo <= 1, "class {c}: {per_fold:?}");
        }
    }

    #[test]
    fn fold_errors() {
        let labels = labels_uniform(5, 2);
        assert!(make_stratified_folds(&labels, 1, &SeededRng::new(0)).is_err());
        assert!(make_stratified_folds(&labels, 6, &SeededRng::new(0)).is_err());
        assert!(make_stratified_folds(&[], 2, &SeededRng::new(0)).is_err());
    }

    #[test]
    fn folds_reproducible() {
        let labels = labels_uniform(30, 4);
        let a = make_stratified_folds(&labels, 5, &SeededRng::new(11)).unwrap();
        let b = make_stratified_folds(&labels, 5, &SeededRng::new(11)).unwrap();
        assert_eq!(a, b);
        let c = make_stratified_folds(&labels, 5, &SeededRng::new(12)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn derived_rows_follow_their_source() {
        let source_labels = labels_uniform(6, 2);
        let plan = make_stratified_folds(&source_labels, 3, &SeededRng::new(2)).unwrap();
        // rows: each source appears twice, plus an extra derivative of source 0
        let source_of: Vec<usize> = (0..12).flat_map(|s| [s, s]).chain([0]).collect();
        let rows = inherit_source_folds(&plan, &source_of).unwrap();
        for (row, &src) in source_of.iter().enumerate() {
            assert_eq!(rows.assignment[row], plan.assignment[src]);
        }
        assert!(inherit_source_folds(&plan, &[99]).is_err());
    }

    #[test]
    fn split_respects_fraction_and_strata() {
        let labels = labels_uniform(20, 4);
        let (train, val) = stratified_split(&labels, 0.1, &SeededRng::new(8)).unwrap();
        assert_eq!(train.len() + val.len(), 80);
        assert_eq!(val.len(), 8, "10% of 20 per class, 4 classes");
        for c in 0..4 {
            assert_eq!(val.iter().filter(|&&i| labels[i] == c).count(), 2);
        }
        let mut all: Vec<usize> = train.iter().chain(&val).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..80).collect::<Vec<_>>());
    }

    #[test]
    fn confusion_metrics_hand_counts() {
        let diag = vec![vec![3, 0], vec![0, 5]];
        assert_eq!(accuracy(&diag).unwrap(), 1.0);
        assert_eq!(mean_sensitivity(&diag).unwrap(), 1.0);

        let zero_diag = vec![vec![0, 3], vec![5, 0]];
        assert_eq!(accuracy(&zero_diag).unwrap(), 0.0);
        assert_eq!(mean_sensitivity(&zero_diag).unwrap(), 0.0);

        let mixed = vec![vec![8, 2], vec![4, 6]];
        assert!((accuracy(&mixed).unwrap() - 0.7).abs() < 1e-12);
        assert!((mean_sensitivity(&mixed).unwrap() - 0.7).abs() < 1e-12);

        // absent class rows are excluded from the sensitivity mean
        let absent = vec![vec![4, 0, 0], vec![2, 2, 0], vec![0, 0, 0]];
        assert!((mean_sensitivity(&absent).unwrap() - 0.75).abs() < 1e-12);

        assert!(accuracy(&vec![vec![0u64; 2]; 2]).is_err());
        assert!(accuracy(&vec![vec![1u64; 3]; 2]).is_err());
    }

    fn tiny_spec() -> NetworkSpec {
        NetworkSpec {
            name: "tiny".into(),
            paths: vec![PathSpec {
                input: [1, 6, 6],
                layers: vec![
                    LayerSpec::Conv3x3 { filters: 2 },
                    LayerSpec::Relu,
                    LayerSpec::MaxPool2,
                    LayerSpec::Flatten,
                ],
            }],
            head: vec![LayerSpec::Dense { units: NUM_CLASSES }, LayerSpec::Softmax],
        }
    }

    /// Trivially separable toy data: each class is a fixed seeded random
    /// pattern, members differ only by small noise.
    fn toy_samples(per_class: usize, seed: u64) -> Vec<TrainSample> {
        let mut rng = SeededRng::new(seed);
        let mut out = Vec::new();
        for k in 0..NUM_CLASSES {
            let mut proto = rng.derive(k as u64);
            let pattern: Vec<f32> = (0..36).map(|_| proto.uniform(-1.0, 1.0)).collect();
            for _ in 0..per_class {
                let data = pattern.iter().map(|&p| p + rng.uniform(-0.02, 0.02)).collect();
                let mut t = vec![0.0f32; NUM_CLASSES];
                t[k] = 1.0;
                out.push(TrainSample {
                    inputs: vec![Tensor::new(vec![1, 6, 6], data).unwrap()],
                    target: Tensor::new(vec![NUM_CLASSES], t).unwrap(),
                });
            }
        }
        out
    }

    #[test]
    fn epochs_are_deterministic() {
        let spec = tiny_spec();
        let samples = toy_samples(3, 50);
        let run = || {
            let mut w = models::init_weights(&spec, &SeededRng::new(1)).unwrap();
            let mut adam = AdamState::new(AdamParams::default());
            let mut order = SeededRng::new(2);
            let h1 = train_epoch(&spec, &mut w, &mut adam, &samples, 5, &mut order).unwrap();
            let h2 = train_epoch(&spec, &mut w, &mut adam, &samples, 5, &mut order).unwrap();
            (h1, h2, w)
        };
        let (a1, a2, wa) = run();
        let (b1, b2, wb) = run();
        assert_eq!(a1, b1);
        assert_eq!(a2, b2);
        assert_eq!(wa, wb);
        assert_ne!(a1, a2, "second epoch continues from updated weights");
    }

    #[test]
    fn repeated_single_sample_loss_never_rises() {
        let spec = tiny_spec();
        let samples = toy_samples(1, 60);
        let one = vec![samples[3].clone()];
        let mut w = models::init_weights(&spec, &SeededRng::new(3)).unwrap();
        let mut adam = AdamState::new(AdamParams::default());
        let mut losses = Vec::new();
        for e in 0..10 {
            let mut order = SeededRng::new(e);
            losses.extend(train_epoch(&spec, &mut w, &mut adam, &one, 1, &mut order).unwrap());
        }
        for pair in losses.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-6, "{losses:?}");
        }
    }

    #[test]
    fn short_final_batch_averages_over_its_size() {
        let spec = tiny_spec();
        let samples = toy_samples(1, 70); // 8 samples, batch 75 -> one batch of 8
        let mut w = models::init_weights(&spec, &SeededRng::new(4)).unwrap();
        let w0 = w.clone();
        let mut adam = AdamState::new(AdamParams::default());
        let mut order = SeededRng::new(5);
        let history = train_epoch(&spec, &mut w, &mut adam, &samples, 75, &mut order).unwrap();
        assert_eq!(history.len(), 1);

        // recorded batch loss equals the mean of the individual losses at
        // the starting weights
        let mut sum = 0.0f64;
        for s in &samples {
            let p = models::forward(&spec, &w0, &[&s.inputs[0]]).unwrap();
            sum += ops::categorical_cross_entropy(&p, &s.target).unwrap() as f64;
        }
        assert!(((sum / 8.0) as f32 - history[0]).abs() < 1e-6);

        // and the update equals a manual adam step on the averaged gradient
        let mut acc: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for s in &samples {
            let trace = models::forward_trace(&spec, &w0, &[&s.inputs[0]]).unwrap();
            let lg = ops::categorical_cross_entropy_backward(trace.output(), &s.target).unwrap();
            for (name, g) in models::backward(&spec, &w0, &trace, &lg).unwrap() {
                let buf = acc.entry(name).or_insert_with(|| vec![0.0; g.data().len()]);
                for (b, &v) in buf.iter_mut().zip(g.data()) {
                    *b += v as f64;
                }
            }
        }
        let mut manual = w0.clone();
        let mut st = AdamState::new(AdamParams::default());
        let averaged: Gradients = acc
            .into_iter()
            .map(|(name, buf)| {
                let shape = w0.tensors[&name].shape().to_vec();
                let data = buf.iter().map(|&v| (v / 8.0) as f32).collect();
                (name.clone(), Tensor::new(shape, data).unwrap())
            })
            .collect();
        adam_step(&mut manual, &averaged, &mut st).unwrap();
        assert_eq!(manual, w);
    }

    #[test]
    fn empty_epoch_errors() {
        let spec = tiny_spec();
        let mut w = models::init_weights(&spec, &SeededRng::new(1)).unwrap();
        let mut adam = AdamState::new(AdamParams::default());
        assert!(train_epoch(&spec, &mut w, &mut adam, &[], 5, &mut SeededRng::new(0)).is_err());
    }

    #[test]
    fn cross_validation_learns_separable_toy_data() {
        let spec = tiny_spec();
        let samples = toy_samples(4, 80); // 32 samples, 4 per class
        let labels: Vec<usize> = samples.iter().map(|s| s.label()).collect();
        let plan = make_stratified_folds(&labels, 4, &SeededRng::new(6)).unwrap();
        let cfg = TrainConfig {
            epochs: 40,
            batch_size: 8,
            adam: AdamParams { lr: 0.01, ..AdamParams::default() },
            seed: 7,
        };
        let report = cross_validate(&spec, &samples, &plan, &cfg).unwrap();
        assert_eq!(report.folds.len(), 4);

        // every sample validated exactly once: aggregate row sums are the
        // class totals
        for row in &report.aggregate_confusion {
            assert_eq!(row.iter().sum::<u64>(), 4);
        }
        // mean of fold accuracies matches the report
        let mean: f64 = report.folds.iter().map(|f| f.accuracy).sum::<f64>() / 4.0;
        assert_eq!(mean, report.mean_accuracy);
        // equal fold sizes (8 each, powers of two): mean-of-folds equals
        // total-correct/total exactly
        let correct: u64 = (0..NUM_CLASSES).map(|i| report.aggregate_confusion[i][i]).sum();
        assert_eq!(report.mean_accuracy, correct as f64 / 32.0);
        assert!(report.mean_accuracy >= 0.9, "toy data should be learnable: {}", report.mean_accuracy);

        // JSON round trip
        let json = report.to_json().unwrap();
        let back = MetricsReport::from_json(&json).unwrap();
        assert_eq!(back, report);
        let table = report.format_table();
        assert!(table.contains("mean accuracy over 4 folds"));
    }

    #[test]
    fn fold_accuracies_average_per_formula() {
        let folds = vec![
            FoldMetrics { fold: 0, best_epoch: 0, val_size: 10, accuracy: 0.8, mean_sensitivity: 0.8, confusion: vec![] },
            FoldMetrics { fold: 1, best_epoch: 0, val_size: 10, accuracy: 0.9, mean_sensitivity: 0.9, confusion: vec![] },
        ];
        let mean = folds.iter().map(|f| f.accuracy).sum::<f64>() / folds.len() as f64;
        assert!((mean - 0.85).abs() < 1e-12);
    }
}
