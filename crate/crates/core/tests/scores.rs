//! Score sources checked against closed forms: Stein on Gaussians, the
//! perturbation model's energy bookkeeping, and the oracle under rescaling.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use strata::eval::perturb_jacobians;
use strata::oracle::{diag_variance, jacobian_latent, oracle_batch, score_latent};
use strata::stein::{jacobian_ser, stein_estimate, stein_score};
use strata::synth::{sample_noise_variances, Dataset};
use strata::{Dag, JacobianBatch, Scm, Source, Space, SteinConfig};

fn gaussian(n: usize, d: usize, seed: u64) -> DMatrix<f64> {
    let mut r = ChaCha20Rng::seed_from_u64(seed);
    DMatrix::from_fn(n, d, |_, _| StandardNormal.sample(&mut r))
}

#[test]
fn stein_score_of_standard_normal_is_minus_x() {
    let x = gaussian(1000, 1, 11);
    let s = stein_score(&x, &SteinConfig::default()).unwrap();
    let mut xs: Vec<f64> = x.column(0).iter().copied().collect();
    xs.sort_by(f64::total_cmp);
    let (lo, hi) = (xs[50], xs[949]);
    let central: Vec<usize> = (0..1000).filter(|&i| x[i] >= lo && x[i] <= hi).collect();
    let mse = central.iter().map(|&i| (s[i] + x[i]).powi(2)).sum::<f64>() / central.len() as f64;
    assert!(mse <= 0.05, "MSE {mse}");
    // Least-squares slope of ŝ on x over the central mass.
    let sxy: f64 = central.iter().map(|&i| x[i] * s[i]).sum();
    let sxx: f64 = central.iter().map(|&i| x[i] * x[i]).sum();
    let slope = sxy / sxx;
    assert!((slope + 1.0).abs() <= 0.15, "slope {slope}");
}

#[test]
fn stein_jacobian_of_standard_normal_is_minus_identity_on_average() {
    let x = gaussian(800, 2, 5);
    let est = stein_estimate(&x, &SteinConfig::default()).unwrap();
    let mean = est.jacobians.mean().unwrap();
    for a in 0..2 {
        assert!((mean[(a, a)] + 1.0).abs() <= 0.15, "diag {a}: {}", mean[(a, a)]);
    }
    assert!(mean[(0, 1)].abs() <= 0.1, "off-diagonal {}", mean[(0, 1)]);
    for j in est.jacobians.raw() {
        assert_eq!(j, &j.transpose());
    }
}

fn line_oracle() -> JacobianBatch {
    let scm = Scm::squared_norm(Dag::line(3), vec![0.5, 0.3, 0.2]).unwrap();
    let z = strata::synth::sample_scm(&scm, 400, 9).unwrap().1;
    oracle_batch(&scm, &z).unwrap()
}

fn error_energy(a: &JacobianBatch, b: &JacobianBatch) -> f64 {
    a.raw().iter().zip(b.raw()).map(|(x, y)| (x - y).norm_squared()).sum()
}

#[test]
fn perturbation_energy_follows_ser() {
    let oracle = line_oracle();
    let signal: f64 = oracle.raw().iter().map(|j| j.norm_squared()).sum();
    for ser in [1.0, 8.0, 1e6] {
        let p = perturb_jacobians(&oracle, ser, 3).unwrap();
        let got = jacobian_ser(&p, &oracle).unwrap();
        assert!((got / ser - 1.0).abs() < 0.1, "SER {ser}: measured {got}");
        assert!((error_energy(&p, &oracle) * ser / signal - 1.0).abs() < 0.1);
        assert_eq!(p.source(), Source::Perturbed);
    }
    // Same seed: error scales as SER^-1/2 exactly.
    let e1 = error_energy(&perturb_jacobians(&oracle, 4.0, 3).unwrap(), &oracle);
    let e2 = error_energy(&perturb_jacobians(&oracle, 8.0, 3).unwrap(), &oracle);
    let e4 = error_energy(&perturb_jacobians(&oracle, 16.0, 3).unwrap(), &oracle);
    assert!((e1 / e2 - 2.0).abs() < 1e-9, "{}", e1 / e2);
    assert!((e1 / e4 - 4.0).abs() < 1e-9, "{}", e1 / e4);
}

#[test]
fn perturbation_seeds_differ_but_share_ser() {
    let oracle = line_oracle();
    let a = perturb_jacobians(&oracle, 10.0, 1).unwrap();
    let b = perturb_jacobians(&oracle, 10.0, 2).unwrap();
    assert!(error_energy(&a, &b) > 0.0);
    let (sa, sb) = (jacobian_ser(&a, &oracle).unwrap(), jacobian_ser(&b, &oracle).unwrap());
    assert!((sa - sb).abs() / 10.0 < 1e-9, "{sa} vs {sb}");
    // Noise is symmetric.
    for j in a.raw() {
        assert!((j - j.transpose()).amax() < 1e-12);
    }
}

#[test]
fn scaled_model_scores_match_change_of_variables() {
    let dag = Dag::y_structure();
    let scm = Scm::squared_norm(dag, sample_noise_variances(4, 4)).unwrap();
    let data = Dataset::generate(&scm, 200, 4, 4).unwrap();
    let info = data.batch.scale_info.clone().unwrap();
    let a = info.slopes();
    let d_inv = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(4, a.iter().map(|v| 1.0 / v)));
    for m in (0..200).step_by(7) {
        let zs: Vec<f64> = data.batch.z.row(m).iter().copied().collect();
        let z: Vec<f64> = (0..4).map(|i| info.min[i] + zs[i] / a[i]).collect();
        let s_scaled = score_latent(&data.scaled_scm, &zs);
        let s_dual = &d_inv * score_latent(&scm, &z);
        assert!((&s_scaled - &s_dual).amax() <= 1e-8 * (1.0 + s_dual.amax()), "sample {m}");
        let j_scaled = jacobian_latent(&data.scaled_scm, &zs);
        let j_dual = &d_inv * jacobian_latent(&scm, &z) * &d_inv;
        assert!((&j_scaled - &j_dual).amax() <= 1e-8 * (1.0 + j_dual.amax()), "sample {m}");
    }
}

#[test]
fn leaves_have_zero_jacobian_variance_in_random_graphs() {
    let mut r = ChaCha20Rng::seed_from_u64(21);
    for g in 0..10 {
        let n = 2 + g % 4;
        let dag = Dag::random(&mut r, n, 0.6, 3);
        let scm = Scm::squared_norm(dag.clone(), sample_noise_variances(n, g as u64)).unwrap();
        let z = strata::synth::sample_scm(&scm, 300, g as u64).unwrap().1;
        let v = diag_variance(&oracle_batch(&scm, &z).unwrap()).unwrap();
        let leaves = dag.leaves();
        for i in 0..n {
            if leaves.contains(&i) {
                assert!(v[i] <= 1e-20, "graph {g}: leaf {i} variance {}", v[i]);
            } else {
                assert!(v[i] > 1e-6, "graph {g}: non-leaf {i} variance {}", v[i]);
            }
        }
    }
}

#[test]
fn batch_spaces_are_tracked() {
    let b = line_oracle();
    assert_eq!(b.space(), Space::Latent);
    let p = perturb_jacobians(&b, 2.0, 0).unwrap();
    assert_eq!(p.space(), Space::Latent);
}
