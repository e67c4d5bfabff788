use dicforge_tensor::{Mode, Real};
use rayon::prelude::*;

use super::model::Model;
use super::NetError;
use crate::grid::{DisplacementField, Grid};
use crate::seed;

/// Mean and population variance over stochastic forward passes.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyOutput {
    pub mean: DisplacementField,
    pub variance: DisplacementField,
    pub samples: usize,
}

/// `samples` forward passes with dropout active, pass `r` seeded from
/// `(seed, r)`. Passes may run concurrently; they are reduced in index order.
pub fn mc_infer<T: Real>(
    model: &Model<T>,
    reference: &Grid,
    deformed: &Grid,
    samples: usize,
    seed: u64,
) -> Result<UncertaintyOutput, NetError> {
    if samples == 0 {
        return Err(NetError::Config("Monte-Carlo inference needs at least one sample".into()));
    }
    let passes: Vec<DisplacementField> = (0..samples as u64)
        .into_par_iter()
        .map(|r| model.predict(reference, deformed, Mode::MonteCarlo, seed::mix(seed, r)))
        .collect::<Result<_, _>>()?;
    let (h, w) = passes[0].dims();
    let n = 2 * h * w;
    let mut mean = vec![0.0f64; n];
    let mut m2 = vec![0.0f64; n];
    for (k, f) in passes.iter().enumerate() {
        let count = (k + 1) as f64;
        for (i, &x) in f.u.data().iter().chain(f.v.data()).enumerate() {
            let x = x as f64;
            let delta = x - mean[i];
            mean[i] += delta / count;
            m2[i] += delta * (x - mean[i]);
        }
    }
    let to_field = |vals: Vec<f32>| {
        let (u, v) = vals.split_at(h * w);
        DisplacementField::new(Grid::from_vec(h, w, u.to_vec()), Grid::from_vec(h, w, v.to_vec()))
    };
    let var: Vec<f32> = m2.iter().map(|&s| (s / samples as f64).max(0.0) as f32).collect();
    Ok(UncertaintyOutput {
        mean: to_field(mean.iter().map(|&m| m as f32).collect()),
        variance: to_field(var),
        samples,
    })
}
