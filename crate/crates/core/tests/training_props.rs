use nsl_core::dataset::{synth_generate, SynthConfig};
use nsl_core::training::{train_all, ModelBundle};
use nsl_core::TrainConfig;

fn small_config() -> TrainConfig {
    TrainConfig {
        epochs: 30,
        batch_size: 32,
        learning_rate: 0.01,
        seed: 3,
        ..TrainConfig::default()
    }
}

#[test]
fn training_reduces_loss_on_synthetic_data() {
    let data = synth_generate(&SynthConfig::new(2, 60, 2, 8, 0.05, 21)).unwrap();
    let genes = data.dataset.gene_names.clone();
    let bundle = train_all(&data.dataset, &genes, &small_config(), 1).unwrap();
    assert_eq!(bundle.models.len(), 2);
    for m in &bundle.models {
        let first = m.loss_trace[0];
        let last = *m.loss_trace.last().unwrap();
        assert!(last < 0.25 * first, "{}: {first} -> {last}", m.gene);
        assert_eq!(m.learnable_scalars().unwrap(), 11);
    }
}

#[test]
fn worker_count_does_not_change_the_bundle() {
    let data = synth_generate(&SynthConfig::new(2, 40, 4, 6, 0.05, 22)).unwrap();
    let genes = data.dataset.gene_names.clone();
    let one = train_all(&data.dataset, &genes, &small_config(), 1)
        .unwrap()
        .to_json();
    let four = train_all(&data.dataset, &genes, &small_config(), 4)
        .unwrap()
        .to_json();
    assert_eq!(one, four);
    assert_eq!(ModelBundle::from_json(&one).unwrap().to_json(), one);
}

#[test]
fn unknown_genes_are_recorded_not_fatal() {
    let data = synth_generate(&SynthConfig::new(2, 20, 1, 4, 0.05, 23)).unwrap();
    let genes = vec!["SYN1".to_string(), "NOPE".to_string()];
    let bundle = train_all(&data.dataset, &genes, &small_config(), 1).unwrap();
    assert_eq!(bundle.models.len(), 1);
    assert_eq!(bundle.failures.len(), 1);
    assert_eq!(bundle.failures[0].gene, "NOPE");
}
