use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::metrics::{
    classification_metrics, segmentation_metrics, shape_miou, EpochRecord, EvalMetrics,
    MetricsReport,
};
use super::optim::{adam_step, apply_schedules, OptimizerState, TrainConfig};
use crate::autograd::{Graph, Tensor, Var};
use crate::data::{batch_iterator, Dataset};
use crate::error::{Error, Result};
use crate::model::{forward, ModelConfig, ModelParams, PreparedCloud, Task};

/// Clouds per graph when evaluating.
const EVAL_BATCH: usize = 32;

/// Mean cross-entropy of `logits` rows against `targets`.
pub fn cross_entropy_loss(g: &mut Graph, logits: Var, targets: &[usize]) -> Result<Var> {
    g.cross_entropy(logits, targets)
}

/// Result of [`train`].
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best selection metric.
    pub best: ModelParams,
    /// Parameters after the final epoch.
    pub last: ModelParams,
    pub report: MetricsReport,
}

/// Checks that a dataset fits a model configuration.
pub fn check_compatible(config: &ModelConfig, dataset: &Dataset) -> Result<()> {
    if dataset.task != config.task {
        return Err(Error::Config(format!(
            "dataset is for {:?} but the model is for {:?}",
            dataset.task, config.task
        )));
    }
    match config.task {
        Task::Classification if dataset.num_labels() > config.classes => {
            return Err(Error::Config(format!(
                "dataset has {} classes, model.classes is {}",
                dataset.num_labels(),
                config.classes
            )))
        }
        Task::Segmentation if dataset.num_parts() > config.parts => {
            return Err(Error::Config(format!(
                "dataset has {} parts, model.parts is {}",
                dataset.num_parts(),
                config.parts
            )))
        }
        _ => {}
    }
    dataset.validate()
}

pub fn prepare(config: &ModelConfig, dataset: &Dataset) -> Result<Vec<PreparedCloud>> {
    dataset
        .samples
        .iter()
        .map(|s| PreparedCloud::new(&s.cloud, config))
        .collect()
}

fn targets(config: &ModelConfig, dataset: &Dataset, idx: &[usize]) -> Result<Vec<usize>> {
    Ok(match config.task {
        Task::Classification => idx.iter().map(|&i| dataset.samples[i].label).collect(),
        Task::Segmentation => {
            let mut t = Vec::new();
            for &i in idx {
                let l = dataset.samples[i].cloud.labels().ok_or_else(|| {
                    Error::Data(format!("sample {i} has no per-point part labels"))
                })?;
                t.extend_from_slice(l);
            }
            t
        }
    })
}

/// Mini-batch Adam training with step schedules.
///
/// Randomness comes from one ChaCha8 stream seeded by `config.seed`,
/// consumed by parameter initialization and then dropout. Batch order uses
/// [`batch_iterator`] with the same seed. Parameters are retained from the
/// epoch with the best validation metric, or the best training metric when
/// `validation` is `None` or empty. Ties on the metric go to the lower
/// training loss, then to the earlier epoch.
pub fn train(
    model: &ModelConfig,
    config: &TrainConfig,
    train_set: &Dataset,
    validation: Option<&Dataset>,
) -> Result<TrainOutcome> {
    train_with(model, config, train_set, validation, |_| {})
}

/// [`train`] with a callback invoked after every epoch.
pub fn train_with(
    model: &ModelConfig,
    config: &TrainConfig,
    train_set: &Dataset,
    validation: Option<&Dataset>,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    model.validate()?;
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    check_compatible(model, train_set)?;
    let validation = validation.filter(|v| !v.is_empty());
    if let Some(v) = validation {
        check_compatible(model, v)?;
    }
    let train_prep = prepare(model, train_set)?;
    let val_prep = validation.map(|v| prepare(model, v)).transpose()?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = ModelParams::init(model, &mut rng)?;
    let mut opt = OptimizerState::new(&params.store);
    let mut report = MetricsReport::default();
    let mut best: Option<((f64, f64), ModelParams)> = None;

    for epoch in 0..config.epochs {
        let rates = apply_schedules(config, epoch);
        let mut loss_sum = 0.0;
        for idx in batch_iterator(train_set.len(), config.batch_size, config.seed, epoch)? {
            let batch: Vec<&PreparedCloud> = idx.iter().map(|&i| &train_prep[i]).collect();
            let mut g = Graph::new(true);
            let out = forward(&mut g, &params, &batch, rates.bn_momentum, &mut rng)?;
            let t = targets(model, train_set, &idx)?;
            let loss = cross_entropy_loss(&mut g, out.logits, &t)?;
            loss_sum += g.value(loss).item()? * idx.len() as f64;
            g.backward(loss, &mut params.store)?;
            g.apply_bn_updates(&mut params.store);
            adam_step(&mut params.store, &mut opt, rates.lr)?;
            params.store.zero_grad();
        }
        let train_metrics = evaluate_prepared(&params, train_set, &train_prep)?;
        let val_metrics = match (validation, &val_prep) {
            (Some(v), Some(p)) => Some(evaluate_prepared(&params, v, p)?),
            _ => None,
        };
        let score = val_metrics.as_ref().unwrap_or(&train_metrics).primary();
        let record = EpochRecord {
            epoch: epoch + 1,
            loss: loss_sum / train_set.len() as f64,
            lr: rates.lr,
            bn_momentum: rates.bn_momentum,
            train: train_metrics,
            validation: val_metrics,
        };
        on_epoch(&record);
        let key = (score, -record.loss);
        if best.as_ref().is_none_or(|(b, _)| key > *b) {
            best = Some((key, params.clone()));
            report.best_epoch = epoch + 1;
        }
        report.records.push(record);
    }
    let best = best.map_or_else(|| params.clone(), |(_, p)| p);
    Ok(TrainOutcome {
        best,
        last: params,
        report,
    })
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Evaluation-mode logits for each prepared cloud.
pub fn predict_logits(params: &ModelParams, prepared: &[PreparedCloud]) -> Result<Vec<Tensor>> {
    let mut dummy = rand::rngs::mock::StepRng::new(0, 0);
    let mut out = Vec::with_capacity(prepared.len());
    for chunk in prepared.chunks(EVAL_BATCH) {
        let batch: Vec<&PreparedCloud> = chunk.iter().collect();
        let mut g = Graph::new(false);
        let f = forward(&mut g, params, &batch, 0.0, &mut dummy)?;
        let logits = g.value(f.logits);
        let mut row = 0;
        for pc in chunk {
            let rows = match params.config.task {
                Task::Classification => 1,
                Task::Segmentation => pc.len(),
            };
            let data = logits.data()[row * logits.cols()..(row + rows) * logits.cols()].to_vec();
            out.push(Tensor::from_vec(rows, logits.cols(), data)?);
            row += rows;
        }
    }
    Ok(out)
}

fn evaluate_prepared(
    params: &ModelParams,
    dataset: &Dataset,
    prepared: &[PreparedCloud],
) -> Result<EvalMetrics> {
    let logits = predict_logits(params, prepared)?;
    match params.config.task {
        Task::Classification => {
            let preds: Vec<usize> = logits.iter().map(|l| argmax(l.row(0))).collect();
            let labels: Vec<usize> = dataset.samples.iter().map(|s| s.label).collect();
            let classes = params.config.classes.max(dataset.num_labels());
            classification_metrics(&preds, &labels, classes).map(EvalMetrics::Classification)
        }
        Task::Segmentation => {
            let mut shapes = Vec::with_capacity(dataset.len());
            for (s, l) in dataset.samples.iter().zip(&logits) {
                let range = dataset.part_ranges.get(s.label).cloned().ok_or_else(|| {
                    Error::Data(format!("category {} has no part range", s.label))
                })?;
                if range.end > l.cols() {
                    return Err(Error::Data(format!(
                        "part range {range:?} exceeds the model's {} parts",
                        l.cols()
                    )));
                }
                // predictions are restricted to the shape's own category
                let preds: Vec<usize> = (0..l.rows())
                    .map(|r| range.start + argmax(&l.row(r)[range.clone()]))
                    .collect();
                let truth = s
                    .cloud
                    .labels()
                    .ok_or_else(|| Error::Data("shape has no per-point part labels".into()))?;
                shapes.push((s.label, shape_miou(&preds, truth, range)?));
            }
            segmentation_metrics(&shapes, &dataset.names).map(EvalMetrics::Segmentation)
        }
    }
}

/// Accuracy metrics of a classifier on a labeled dataset.
pub fn evaluate_classification(
    params: &ModelParams,
    dataset: &Dataset,
) -> Result<super::ClassificationMetrics> {
    if params.config.task != Task::Classification {
        return Err(Error::Config("model was built for segmentation".into()));
    }
    match evaluate(params, dataset)? {
        EvalMetrics::Classification(m) => Ok(m),
        EvalMetrics::Segmentation(_) => unreachable!("task checked"),
    }
}

/// Per-category and overall mIoU of a segmenter on a part-labeled dataset.
pub fn evaluate_segmentation(
    params: &ModelParams,
    dataset: &Dataset,
) -> Result<super::SegmentationMetrics> {
    if params.config.task != Task::Segmentation {
        return Err(Error::Config("model was built for classification".into()));
    }
    match evaluate(params, dataset)? {
        EvalMetrics::Segmentation(m) => Ok(m),
        EvalMetrics::Classification(_) => unreachable!("task checked"),
    }
}

/// Metrics for whichever task the model was built for.
pub fn evaluate(params: &ModelParams, dataset: &Dataset) -> Result<EvalMetrics> {
    check_compatible(&params.config, dataset)?;
    let prepared = prepare(&params.config, dataset)?;
    evaluate_prepared(params, dataset, &prepared)
}
