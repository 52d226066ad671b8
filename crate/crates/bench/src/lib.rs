//! Fixtures shared by the benchmarks.

use gnlaw_core::gn::{init_params, GraphBatch};
use gnlaw_core::sim::{generate_dataset, EnvConfig, ForceLaw};
use gnlaw_core::symreg::{Expr, SymDataset};
use gnlaw_core::{GNParams, ModelConfig, TrajectoryDataset};

/// A 6-body 2D inverse-square dataset.
pub fn nbody_dataset(sims: usize, steps: usize) -> TrajectoryDataset {
    let env = EnvConfig::nbody(ForceLaw::InverseR2, 2, 6);
    generate_dataset(&env, sims, steps, 7).expect("valid environment")
}

/// Full-width bottleneck model and a training-sized batch of graphs.
pub fn model_and_batch(batch_size: usize) -> (GNParams, GraphBatch) {
    let data = nbody_dataset(64, 20);
    let params = init_params(&ModelConfig::bottleneck(2), 1).expect("valid config");
    let batch = GraphBatch::from_records(&data.env, data.records.iter().take(batch_size)).expect("batch");
    (params, batch)
}

/// Pair features and the recovered 1/r law evaluated on them.
pub fn law_and_rows(rows: usize) -> (Expr, SymDataset) {
    let names: Vec<String> = ["dx", "dy", "r", "m1", "m2"].map(String::from).to_vec();
    let features: Vec<Vec<f64>> = (0..rows)
        .map(|i| {
            let t = i as f64;
            let (dx, dy) = ((0.37 * t).sin(), (0.91 * t).cos());
            vec![dx, dy, (dx * dx + dy * dy).sqrt(), 1.0, 0.5 + (i % 3) as f64 * 0.5]
        })
        .collect();
    let law = Expr::parse("(0.46 * m2 * dy - 1.55 * m2 * dx) / (r * r)", &names).expect("valid expression");
    let target = features.iter().map(|f| law.eval(f).unwrap_or(f64::NAN)).collect();
    let data = SymDataset::from_rows(names, &features, target).expect("consistent rows");
    (law, data)
}
