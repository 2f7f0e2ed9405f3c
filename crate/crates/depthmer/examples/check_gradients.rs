//! Verifies the classifier's analytic gradients against central finite
//! differences on a deliberately tiny network, printing the worst relative
//! disagreement found.
//!
//! Run with `cargo run --example check_gradients`.

use depthmer::motion::MotionFeatureSet;
use depthmer::net::{ModelConfig, PointModel, SaLevel, Variant};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_sample(rng: &mut ChaCha8Rng, points: usize, label: usize) -> MotionFeatureSet {
    let features = (0..points)
        .map(|_| std::array::from_fn(|_| rng.gen_range(-1.0..1.0)))
        .collect::<Vec<[f64; 6]>>();
    let pixel_index = (0..points as u32).map(|i| [i, 0]).collect();
    MotionFeatureSet {
        k: points,
        features,
        pixel_index,
        label: Some(label),
        subject_id: "probe".into(),
    }
}

fn loss_at(model: &mut PointModel, params: Vec<f64>, batch: &[&MotionFeatureSet]) -> f64 {
    model.set_params(params).expect("parameter count unchanged");
    let (loss, _) = model.loss_and_gradients(batch).expect("forward pass");
    loss
}

fn main() -> depthmer::Result<()> {
    let config = ModelConfig {
        variant: Variant::PointNet2,
        sa_levels: vec![SaLevel {
            centroids: 2,
            radius: 2.0,
            group_size: 3,
            mlp_widths: vec![4, 4],
        }],
        global_widths: vec![4],
        head_widths: vec![4],
        class_count: 2,
        rng_seed: 11,
    };
    let mut model = PointModel::new(config)?;

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let batch: Vec<MotionFeatureSet> = (0..4).map(|i| random_sample(&mut rng, 5, i % 2)).collect();
    let refs: Vec<&MotionFeatureSet> = batch.iter().collect();

    let (loss, analytic) = model.loss_and_gradients(&refs)?;
    let grad_norm = analytic.iter().map(|g| g * g).sum::<f64>().sqrt();
    println!(
        "model with {} parameters, batch loss {loss:.6}, gradient norm {grad_norm:.4}",
        model.param_count()
    );

    let step = 1e-5;
    let base = model.params().to_vec();
    let mut worst = 0.0f64;
    for i in 0..base.len() {
        let mut plus = base.clone();
        plus[i] += step;
        let mut minus = base.clone();
        minus[i] -= step;
        let numeric =
            (loss_at(&mut model, plus, &refs) - loss_at(&mut model, minus, &refs)) / (2.0 * step);
        let denom = analytic[i].abs().max(numeric.abs()).max(1.0);
        worst = worst.max((analytic[i] - numeric).abs() / denom);
    }
    println!("worst relative gradient error across all parameters: {worst:.2e}");
    Ok(())
}
