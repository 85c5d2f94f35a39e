//! Loss, Adam, step schedules, the training loop, evaluation metrics and
//! the finite-difference gradient check.

mod gradcheck;
mod metrics;
mod optim;
mod trainer;

pub use gradcheck::{
    check_gradients, gradient_check, gradient_check_with, relative_error, GradCheckOptions,
    GradCheckReport, TensorCheck,
};
pub use metrics::{
    classification_metrics, segmentation_metrics, shape_miou, ClassificationMetrics,
    EpochRecord, EvalMetrics, MetricsReport, SegmentationMetrics,
};
pub use optim::{
    adam_step, apply_schedules, OptimizerState, Rates, TrainConfig, BN_MOMENTUM_FLOOR, LR_FLOOR,
};
pub use trainer::{
    check_compatible, cross_entropy_loss, evaluate, evaluate_classification,
    evaluate_segmentation, predict_logits, prepare, train, train_with, TrainOutcome,
};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::{Graph, ParamStore, Tensor};
    use crate::data::{generate_synthetic, Dataset, SyntheticSpec};
    use crate::error::Error;
    use crate::model::{write_checkpoint, ModelConfig, Task};

    fn loss_of(logits: Vec<Vec<f64>>, targets: &[usize]) -> f64 {
        let mut g = Graph::new(false);
        let rows: Vec<Vec<f64>> = logits;
        let t = Tensor::from_vec(rows.len(), rows[0].len(), rows.concat()).unwrap();
        let x = g.constant(t);
        let l = cross_entropy_loss(&mut g, x, targets).unwrap();
        g.value(l).item().unwrap()
    }

    #[test]
    fn cross_entropy_examples() {
        assert!((loss_of(vec![vec![0.3; 5]], &[2]) - 5f64.ln()).abs() < 1e-14);
        assert!(loss_of(vec![vec![0.0, 800.0]], &[1]) < 1e-300);
        assert!((loss_of(vec![vec![0.0, 3f64.ln()]], &[1]) + 0.75f64.ln()).abs() < 1e-15);
        let mut g = Graph::new(false);
        let x = g.constant(Tensor::zeros(1, 3));
        assert!(matches!(cross_entropy_loss(&mut g, x, &[3]), Err(Error::Data(_))));
    }

    fn tiny_data(task: Task, count: usize, seed: u64) -> Dataset {
        let spec = match task {
            Task::Classification => SyntheticSpec::classification(16, 0.02, seed),
            Task::Segmentation => SyntheticSpec::segmentation(16, 0.02, seed),
        };
        generate_synthetic(&spec, count).unwrap()
    }

    fn quick(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: 4,
            lr: 0.01,
            seed: 5,
            ..Default::default()
        }
    }

    #[test]
    fn empty_dataset_is_a_data_error() {
        let cfg = ModelConfig::tiny(Task::Classification);
        let ds = tiny_data(Task::Classification, 1, 0).empty_like();
        assert!(matches!(train(&cfg, &quick(1), &ds, None), Err(Error::Data(_))));
    }

    #[test]
    fn task_mismatch_is_rejected() {
        let cfg = ModelConfig::tiny(Task::Segmentation);
        let ds = tiny_data(Task::Classification, 1, 0);
        assert!(matches!(train(&cfg, &quick(1), &ds, None), Err(Error::Config(_))));
    }

    #[test]
    fn single_sample_is_memorized() {
        let mut cfg = ModelConfig::tiny(Task::Classification);
        cfg.dropout = 0.0;
        let mut ds = tiny_data(Task::Classification, 1, 1);
        ds.samples.truncate(1);
        // batch norm over one sample outputs its shift, so only the output
        // layer learns; a long run without decay is needed
        let tc = TrainConfig {
            epochs: 1500,
            lr: 0.05,
            decay_every: 10_000,
            ..quick(0)
        };
        let out = train(&cfg, &tc, &ds, None).unwrap();
        let losses: Vec<f64> = out.report.records.iter().map(|r| r.loss).collect();
        assert!(*losses.last().unwrap() < 1e-3, "{:?}", &losses[losses.len() - 5..]);
        for w in losses[5..].windows(2) {
            assert!(w[1] <= w[0], "loss rose from {} to {}", w[0], w[1]);
        }
    }

    #[test]
    fn fixed_seed_is_bit_identical() {
        for task in [Task::Classification, Task::Segmentation] {
            let cfg = ModelConfig::tiny(task);
            let ds = tiny_data(task, 3, 2);
            let a = train(&cfg, &quick(3), &ds, Some(&ds)).unwrap();
            let b = train(&cfg, &quick(3), &ds, Some(&ds)).unwrap();
            assert_eq!(a.report.to_log(), b.report.to_log());
            assert_eq!(write_checkpoint(&a.last), write_checkpoint(&b.last));
            assert_eq!(write_checkpoint(&a.best), write_checkpoint(&b.best));
            let c = train(&cfg, &TrainConfig { seed: 6, ..quick(3) }, &ds, None).unwrap();
            assert_ne!(write_checkpoint(&a.last), write_checkpoint(&c.last));
        }
    }

    #[test]
    fn best_epoch_matches_retained_parameters() {
        let cfg = ModelConfig::tiny(Task::Classification);
        let ds = tiny_data(Task::Classification, 2, 3);
        let out = train(&cfg, &quick(6), &ds, None).unwrap();
        let best = out.report.best().unwrap();
        for r in &out.report.records {
            assert!(r.train.primary() <= best.train.primary());
        }
        let m = evaluate(&out.best, &ds).unwrap();
        assert_eq!(m, best.train);
        assert_eq!(out.report.to_log().lines().count(), 6);
    }

    #[test]
    fn evaluation_checks_task() {
        let cfg = ModelConfig::tiny(Task::Segmentation);
        let ds = tiny_data(Task::Segmentation, 2, 3);
        let out = train(&cfg, &quick(1), &ds, None).unwrap();
        let m = evaluate_segmentation(&out.last, &ds).unwrap();
        assert!((0.0..=1.0).contains(&m.overall));
        assert!(evaluate_classification(&out.last, &ds).is_err());
    }

    #[test]
    fn gradient_check_passes_on_tiny_models() {
        for task in [Task::Classification, Task::Segmentation] {
            let r = gradient_check(&ModelConfig::tiny(task), 1e-4).unwrap();
            assert!(r.passed(), "{task:?}\n{}", r.table());
            let store = crate::model::ModelParams::init(
                &ModelConfig::tiny(task),
                &mut rand::rngs::mock::StepRng::new(0, 1),
            )
            .unwrap()
            .store;
            let names: Vec<&str> = store.trainable().map(|(_, p)| p.name.as_str()).collect();
            let checked: Vec<&str> = r.entries.iter().map(|e| e.name.as_str()).collect();
            assert_eq!(names, checked);
        }
    }

    #[test]
    fn corrupted_gradient_is_detected() {
        let r = gradient_check_with(
            &ModelConfig::tiny(Task::Classification),
            &GradCheckOptions::default(),
            1e-4,
            |s| {
                for v in s.by_name_mut("encoder.lstm.weight").unwrap().grad.data_mut() {
                    *v *= 1.1;
                }
            },
        )
        .unwrap();
        assert!(!r.passed());
        let e = r.entries.iter().find(|e| e.name == "encoder.lstm.weight").unwrap();
        assert!(e.max_error > 1e-2);
    }

    #[test]
    fn zero_parameter_model_gives_empty_report() {
        let mut store = ParamStore::new();
        let r = check_gradients(
            &mut store,
            &GradCheckOptions::default(),
            1e-4,
            |g, _| {
                let x = g.constant(Tensor::scalar(2.0));
                Ok(g.scale(x, 3.0))
            },
            |_| {},
        )
        .unwrap();
        assert!(r.entries.is_empty());
        assert!(r.passed());
        assert_eq!(r.max_error(), 0.0);
    }
}
