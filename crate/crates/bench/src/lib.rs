//! Shared fixtures for the benchmarks.

use strata::experiment::NamedGraph;
use strata::oracle::{latent_to_observed, oracle_batch_with_residuals};
use strata::synth::Dataset;
use strata::{GraphSpec, JacobianBatch, MechanismRegistry};

/// Line or Y graph data with N samples and d = n.
pub fn dataset(graph: NamedGraph, n_samples: usize, seed: u64) -> Dataset {
    let scm = GraphSpec::Named(graph).build(seed, &MechanismRegistry::default()).expect("named graph");
    Dataset::generate(&scm, n_samples, scm.n(), seed).expect("generate")
}

/// Observed-space oracle Jacobians of a dataset.
pub fn observed_oracle(data: &Dataset) -> JacobianBatch {
    let lat = oracle_batch_with_residuals(&data.scaled_scm, &data.batch.z, &data.scaled_noise()).expect("oracle");
    latent_to_observed(&lat, &data.mixing).expect("push forward")
}
