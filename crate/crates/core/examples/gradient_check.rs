// Compares analytic gradients with central finite differences, first for a
// small hand-built graph and then for every parameter of a tiny full model.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use spar::diagnostics::{grad_check_config, model_grad_check};
use spar::numerics::{grad_check, LrGroup, ParamStore, ParamValues, Tensor};

pub fn run_example() -> spar::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut store = ParamStore::new();
    let w = store.add("w", Tensor::random_normal(vec![6, 4], 0.5, &mut rng), LrGroup::Base);
    let gain = store.add("gain", Tensor::random_normal(vec![1, 4], 1.0, &mut rng), LrGroup::Base);
    let bias = store.add("bias", Tensor::random_normal(vec![1, 4], 0.1, &mut rng), LrGroup::Base);
    let x: Vec<f64> = Tensor::random_normal(vec![3, 6], 1.0, &mut rng).data().iter().map(|&v| v as f64).collect();

    let mut values = ParamValues::<f64>::from_store(&store);
    let report = grad_check(
        &mut values,
        |g| {
            let input = g.input(3, 6, x.clone())?;
            let (w, gain, bias) = (g.param(w), g.param(gain), g.param(bias));
            let h = g.matmul(input, w)?;
            let h = g.layer_norm(h, gain, bias)?;
            let h = g.gelu(h);
            let p = g.softmax_rows(h, None)?;
            let logits = g.slice_rows(p, 0, 1)?;
            g.softmax_cross_entropy(logits, 2)
        },
        1e-5,
        8,
        2,
    )?;
    for (name, err) in &report.per_param {
        println!("{name:>5}: max relative error {err:.2e}");
    }

    let full = model_grad_check(grad_check_config(), 3)?;
    let (worst, err) = full.worst().unwrap_or(("-", 0.0));
    println!(
        "tiny model: {} parameters, {} coordinates, worst {worst} at {err:.2e}",
        full.per_param.len(),
        full.coords_checked
    );
    Ok(())
}

fn main() {
    if let Err(e) = run_example() {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
