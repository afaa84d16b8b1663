//! Solve calibration (raking) weights on a small two-phase sample and show
//! that the weighted phase-two totals reproduce the phase-one totals.
//!
//! ```bash
//! cargo run --example raking_weights
//! ```

use ndarray::{Array1, Array2};
use rand::Rng;
use twophase_raking::calibration::{solve_raking_weights, AuxiliaryMatrix, AuxiliarySource};
use twophase_raking::cohort::{DesignDescriptor, TwoPhaseSample};
use twophase_raking::numeric::RngStream;

fn main() -> twophase_raking::Result<()> {
    let n = 200;
    let n_val = 50;
    let mut rng = RngStream::new(77, 0).rng();

    // Two auxiliary variables known for everyone at phase one.
    let aux_values = Array2::from_shape_fn((n, 2), |_| rng.random_range(-1.0..1.0));
    let aux = AuxiliaryMatrix::from_influence(aux_values, AuxiliarySource::Grn, true)?;

    // Simple random phase-two sample.
    let mut r = vec![false; n];
    let mut count = 0;
    while count < n_val {
        let i = rng.random_range(0..n);
        if !r[i] {
            r[i] = true;
            count += 1;
        }
    }
    let pi = Array1::from_elem(n, n_val as f64 / n as f64);
    let sample = TwoPhaseSample::new(r, pi, DesignDescriptor::Srs { n: n_val })?;

    let (lambda, g) = solve_raking_weights(&aux, &sample)?;
    println!("lambda = {:+.5?}", lambda.to_vec());
    let g_val: Vec<f64> = sample.validated_indices().iter().map(|&i| g[i]).collect();
    let (g_min, g_max) = g_val
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    println!("g range over validated subjects: [{g_min:.4}, {g_max:.4}]");

    for j in 0..aux.k() {
        let weighted: f64 = sample
            .validated_indices()
            .iter()
            .map(|&i| g[i] / sample.pi[i] * aux.a[(i, j)])
            .sum();
        println!(
            "column {j}: phase-one total {:+.6}, calibrated phase-two total {:+.6}",
            aux.totals[j], weighted
        );
    }
    Ok(())
}
