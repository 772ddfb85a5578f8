use spanattn::data::{generate, ClassDistribution, DataPoint, GeneratorConfig};
use spanattn::embedding::EmbeddingSource;
use spanattn::model::{Model, ModelConfig};
use spanattn::params::Binder;
use spanattn::projections::{ProjectionConfig, ProjectionKind};
use spanattn::scorers::{ScorerKind, TaScoreConfig};
use spanattn::tensor_core::Graph;
use spanattn::training::{example_loss, ClassWeights, Target};

/// A model small enough for finite differences and quick training loops.
pub fn tiny_config(scorer: ScorerKind, projection: ProjectionKind, seed: u64) -> ModelConfig {
    ModelConfig {
        embedding: EmbeddingSource::FrozenRandom {
            dim: 6,
            seed: 11,
            window: 3,
        },
        scorer,
        tascore: TaScoreConfig {
            d_model: 4,
            ff_hidden: 4,
            head_hidden: 3,
            ..TaScoreConfig::default()
        },
        classifier_hidden: 5,
        projection: ProjectionConfig::default().with_kind(projection),
        seed,
        ..ModelConfig::default()
    }
}

pub fn dataset(n: usize, seed: u64) -> Vec<DataPoint> {
    generate(&GeneratorConfig {
        n_examples: n,
        class_distribution: ClassDistribution::Uniform,
        seed,
        ..GeneratorConfig::default()
    })
    .unwrap()
}

/// Full joint loss of one example in evaluation mode; with `backward` the
/// gradient is left in the store.
pub fn joint_loss(model: &mut Model, dp: &DataPoint, weights: &ClassWeights, lambda: f64, backward: bool) -> f64 {
    let x = model.encode(dp).unwrap();
    let target = Target::from_point(dp);
    let mut g = Graph::inference();
    let mut b = Binder::new(&model.store);
    let (loss, _, _) = example_loss(model, &mut g, &mut b, &x, &target, weights, lambda).unwrap();
    let value = g.value(loss).item();
    if backward {
        g.backward(loss).unwrap();
        model.store.zero_grad();
        b.accumulate(&g, &mut model.store, 1.0);
    }
    value
}

/// Analytic gradient and central differences of [`joint_loss`] on the
/// given flat coordinates.
pub fn joint_loss_gradients(
    model: &mut Model,
    dp: &DataPoint,
    weights: &ClassWeights,
    coords: &[usize],
    h: f64,
) -> (Vec<f64>, Vec<f64>) {
    joint_loss(model, dp, weights, 1.0, true);
    let grads = model.store.flat_grads();
    let analytic: Vec<f64> = coords.iter().map(|&i| grads[i]).collect();
    let base = model.store.flat_values();
    let mut numeric = Vec::with_capacity(coords.len());
    for &i in coords {
        let mut v = base.clone();
        v[i] = base[i] + h;
        model.store.set_flat_values(&v);
        let fp = joint_loss(model, dp, weights, 1.0, false);
        v[i] = base[i] - h;
        model.store.set_flat_values(&v);
        let fm = joint_loss(model, dp, weights, 1.0, false);
        numeric.push((fp - fm) / (2.0 * h));
    }
    model.store.set_flat_values(&base);
    (analytic, numeric)
}
