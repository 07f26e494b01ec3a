use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, ParamSource, ParamValues, Var};
use super::real::Real;
use super::tensor::ParamId;
use crate::error::{Error, Result};

/// Minimum number of coordinates probed per parameter.
pub const MIN_COORDS_PER_PARAM: usize = 16;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Maximum relative error per parameter name.
    pub per_param: BTreeMap<String, f64>,
    pub coords_checked: usize,
}

impl GradCheckReport {
    pub fn max_error(&self) -> f64 {
        self.per_param.values().copied().fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<(&str, f64)> {
        self.per_param
            .iter()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(k, v)| (k.as_str(), *v))
    }
}

fn eval<T: Real, F>(values: &ParamValues<T>, loss_fn: &F) -> Result<f64>
where
    F: for<'g> Fn(&mut Graph<'g, T>) -> Result<Var>,
{
    let mut g = Graph::new(values);
    let loss = loss_fn(&mut g)?;
    let v = g.scalar(loss).as_f64();
    if !v.is_finite() {
        return Err(Error::NonFinite {
            context: "loss during gradient check".into(),
        });
    }
    Ok(v)
}

/// Compares backpropagated gradients against central differences.
///
/// Each parameter has `max(coords_per_param, 16)` coordinates probed (all of
/// them if it is smaller), chosen by a generator seeded from `(seed, param)`.
/// The relative error of a coordinate is
/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`.
pub fn grad_check<T: Real, F>(
    values: &mut ParamValues<T>,
    loss_fn: F,
    eps: f64,
    coords_per_param: usize,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: for<'g> Fn(&mut Graph<'g, T>) -> Result<Var>,
{
    if !(eps > 0.0) {
        return Err(Error::Config(format!("gradient check eps must be > 0, got {eps}")));
    }
    let grads = {
        let mut g = Graph::new(&*values);
        let loss = loss_fn(&mut g)?;
        if !g.scalar(loss).as_f64().is_finite() {
            return Err(Error::NonFinite {
                context: "loss during gradient check".into(),
            });
        }
        g.backward(loss)?
    };

    let per = coords_per_param.max(MIN_COORDS_PER_PARAM);
    let mut report = GradCheckReport {
        per_param: BTreeMap::new(),
        coords_checked: 0,
    };
    for p in 0..values.num_params() {
        let id = ParamId(p);
        let n = values.param_values(id).len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(p as u64);
        let coords = sample(&mut rng, n, per.min(n)).into_vec();
        let mut worst = 0.0f64;
        for c in coords {
            let orig = values.param_values(id)[c];
            values.values_mut(id)[c] = orig + T::of_f64(eps);
            let plus = eval(values, &loss_fn);
            values.values_mut(id)[c] = orig - T::of_f64(eps);
            let minus = eval(values, &loss_fn);
            values.values_mut(id)[c] = orig;
            let numeric = (plus? - minus?) / (2.0 * eps);
            let analytic = grads.get(id).map_or(0.0, |g| g[c].as_f64());
            let denom = analytic.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max((analytic - numeric).abs() / denom);
            report.coords_checked += 1;
        }
        report.per_param.insert(values.name(id).to_string(), worst);
    }
    Ok(report)
}
