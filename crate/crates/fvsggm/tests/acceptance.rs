//! Acceptance suite: every guarantee the crate makes, checked end to end
//! against brute-force oracles (see `common/`) at fixed tolerances, with
//! wall-clock budgets where a guarantee is about speed. One test per
//! guarantee; each prints a PASS line with the measured numbers.

mod common;

use std::time::Instant;

use common::{naive_em, FvsOracle};
use fvsggm::*;
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_pd(dim: usize, rng: &mut ChaCha8Rng) -> SymMatrix {
    let a = DMatrix::from_fn(dim, dim, |_, _| rng.gen_range(-1.0..1.0));
    SymMatrix::from_dense(
        &a * a.transpose() + DMatrix::identity(dim, dim) * (0.5 * dim as f64),
        1e-9,
    )
    .unwrap()
}

/// The same latent-basis normalization the learner applies internally,
/// rebuilt from public pieces so iterates can be compared one by one.
fn gauge_identity(model: FvsModel) -> FvsModel {
    let k = model.k();
    let chol = nalgebra::Cholesky::new(model.j_f().clone()).unwrap();
    let j_m = chol
        .l()
        .solve_lower_triangular(&model.j_m().transpose())
        .unwrap()
        .transpose();
    FvsModel::new(
        model.part().clone(),
        DMatrix::identity(k, k),
        j_m,
        model.j_t().clone(),
        None,
    )
    .unwrap()
}

#[test]
fn c01_conditioned_fit_matches_exhaustive_tree_search() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    for i in 0..50 {
        let n = 6 + i % 3;
        let k = i % 3;
        let cov = random_pd(n, &mut rng);
        let nodes: Vec<usize> = (0..n).collect();
        let fvs: Vec<usize> = nodes.choose_multiple(&mut rng, k).cloned().collect();

        let direct = fvs_cost_cov(&cov, &fvs).unwrap();
        let fit = conditioned_chow_liu_cov(&cov, &fvs).unwrap();
        let oracle = FvsOracle::new(cov.as_matrix(), &fvs).min_over_trees();

        worst = worst.max((direct - oracle).abs()).max((fit.divergence - oracle).abs());
        assert!(
            (direct - oracle).abs() <= 1e-9,
            "instance {i} (n={n}, k={k}): cost {direct} vs exhaustive {oracle}"
        );
        assert!(
            (fit.divergence - oracle).abs() <= 1e-9,
            "instance {i} (n={n}, k={k}): fit divergence {} vs exhaustive {oracle}",
            fit.divergence
        );
    }
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 60.0, "took {elapsed:.1}s, budget 60s");
    println!(
        "PASS conditioned fit = exhaustive tree-search minimum on 50 instances \
         (worst gap {worst:.2e}, {elapsed:.1}s)"
    );
}

#[test]
fn c02_log_det_matches_dense_cholesky() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst: f64 = 0.0;
    for i in 0..100 {
        let n = rng.gen_range(12..=200);
        let k = rng.gen_range(0..=10.min(n - 2));
        let model = random_fvs_model(n, k, 3000 + i).unwrap();

        let fast = fvs_log_det(&model).unwrap();
        let chol = nalgebra::Cholesky::new(model.assemble().into_matrix()).unwrap();
        let dense: f64 = 2.0 * chol.l().diagonal().iter().map(|&d| d.ln()).sum::<f64>();

        let rel = (fast - dense).abs() / dense.abs().max(1.0);
        worst = worst.max(rel);
        assert!(rel <= 1e-9, "model {i} (n={n}, k={k}): {fast} vs dense {dense}");
    }
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 30.0, "took {elapsed:.1}s, budget 30s");
    println!(
        "PASS log-determinant = dense Cholesky on 100 models \
         (worst relative gap {worst:.2e}, {elapsed:.1}s)"
    );
}

#[test]
fn c03_marginals_match_dense_inverse() {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut worst: f64 = 0.0;
    for i in 0..100 {
        let n = rng.gen_range(12..=200);
        let k = rng.gen_range(0..=10.min(n - 2));
        let h = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let model = random_fvs_model(n, k, 5000 + i).unwrap().with_h(Some(h.clone())).unwrap();

        let marg = fvs_marginals(&model).unwrap();
        let dense = model.assemble().into_matrix();
        let chol = nalgebra::Cholesky::new(dense).unwrap();
        let mean = chol.solve(&h);
        let inv = chol.inverse();
        for v in 0..n {
            let gap = (marg.mean[v] - mean[v]).abs().max((marg.variance[v] - inv[(v, v)]).abs());
            worst = worst.max(gap);
            assert!(gap <= 1e-9, "model {i} node {v}: mean/variance gap {gap:.2e}");
        }
    }
    println!("PASS marginals = dense J⁻¹h and diag(J⁻¹) on 100 models (worst gap {worst:.2e})");
}

#[test]
fn c04_latent_objective_never_increases() {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut worst: f64 = f64::NEG_INFINITY;
    for i in 0..20 {
        let m = rng.gen_range(8..=60);
        let k = rng.gen_range(1..=4);
        let sigma = random_pd(m, &mut rng);
        let init = default_init(&sigma, k, rng.gen()).unwrap();
        // A violation inside the loop is a hard error, so the run itself
        // is already an assertion; re-check the recorded trace anyway.
        let trace = latent_chow_liu(&sigma, k, Some(init), 20, 1e-14)
            .unwrap_or_else(|e| panic!("instance {i} (m={m}, k={k}): {e}"));
        for w in trace.states.windows(2) {
            let rise = w[1].objective - w[0].objective;
            worst = worst.max(rise);
            assert!(
                rise <= 1e-10,
                "instance {i} (m={m}, k={k}): objective rose by {rise:.2e} at iteration {}",
                w[1].iteration
            );
        }
    }
    println!(
        "PASS latent objective non-increasing over 20 random instances \
         (worst per-step rise {worst:.2e})"
    );
}

#[test]
fn c05_accelerated_iteration_equals_dense_iteration() {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut worst: f64 = 0.0;
    for i in 0..3 {
        let (m, k) = (32, 2);
        let sigma = random_pd(m, &mut rng);
        let init = default_init(&sigma, k, 70 + i).unwrap();

        // Accelerated route, one public projection at a time.
        let mut model = init.clone();
        let mut iterates = vec![model.assemble().into_matrix()];
        for _ in 0..5 {
            let completed = project_p1(&model, &sigma).unwrap();
            let (next, _) = project_p2(&completed, model.part()).unwrap();
            model = gauge_identity(next);
            iterates.push(model.assemble().into_matrix());
        }

        // Dense textbook route from the same start.
        let naive = naive_em(sigma.as_matrix(), k, &iterates[0], 5);
        assert_eq!(naive.len(), iterates.len());
        for (t, (fast, slow)) in iterates.iter().zip(naive.iter()).enumerate() {
            let gap = (fast - &slow.j).abs().max();
            worst = worst.max(gap);
            assert!(gap <= 1e-8, "instance {i} iterate {t}: max entry gap {gap:.2e}");
        }

        // The driver records the same objectives and the same tree
        // structures the dense route sees (naive edges are local observed
        // indices; the driver labels observed node o as o + k).
        let trace = latent_chow_liu(&sigma, k, Some(init), 5, 0.0).unwrap();
        for (state, slow) in trace.states.iter().zip(naive.iter()) {
            let gap = (state.objective - slow.objective).abs();
            worst = worst.max(gap);
            assert!(gap <= 1e-8, "instance {i} iteration {}: objective gap {gap:.2e}", state.iteration);
            if state.iteration >= 1 {
                let shifted: std::collections::BTreeSet<(usize, usize)> = slow
                    .tree_edges
                    .iter()
                    .map(|&(a, b)| (a.min(b) + k, a.max(b) + k))
                    .collect();
                assert_eq!(
                    state.tree_edges, shifted,
                    "instance {i} iteration {}: tree structures differ",
                    state.iteration
                );
            }
        }
    }
    println!(
        "PASS accelerated iterates = dense textbook iterates, 5 iterations x 3 instances \
         (worst gap {worst:.2e})"
    );
}

#[test]
fn c06_long_memory_sweep_hits_divergence_envelope() {
    let start = Instant::now();
    let seeds = [0u64, 1, 2];

    let sigma64 = fbm_covariance(64, 0.2).unwrap();
    let sweep64 = kl_vs_k_sweep(&sigma64, &[0, 3], 40, &seeds).unwrap();
    let ratio3 = sweep64.rows.iter().find(|r| r.k == 3).unwrap().kl_ratio_vs_tree;
    assert!(ratio3 <= 0.30, "n=64: k=3 divergence ratio {ratio3:.3} exceeds 0.30");

    let sigma32 = fbm_covariance(32, 0.2).unwrap();
    let sweep32 = kl_vs_k_sweep(&sigma32, &[0, 1], 40, &seeds).unwrap();
    let ratio1 = sweep32.rows.iter().find(|r| r.k == 1).unwrap().kl_ratio_vs_tree;
    assert!(ratio1 <= 0.35, "n=32: k=1 divergence ratio {ratio1:.3} exceeds 0.35");

    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 120.0, "took {elapsed:.1}s, budget 120s");
    println!(
        "PASS long-memory sweep: n=64 k=3 ratio {ratio3:.3} (<= 0.30), \
         n=32 k=1 ratio {ratio1:.3} (<= 0.35), {elapsed:.1}s"
    );
}

#[test]
fn c07_greedy_recovers_true_structure() {
    let start = Instant::now();
    let report = greedy_recovery_study(100, 20, 3, 1000, 42).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    // The asserted claim is feedback-set identification: that is the
    // strong-signal quantity, with every feedback node tied to the rest
    // by n−k random couplings. Full tree-edge identity is reported but
    // not asserted — the generator draws edge weights uniformly through
    // zero, so most truths contain an edge whose partial correlation
    // (median of the per-model weakest: ~0.01) sits far below the
    // sample-correlation noise at 1000 samples (~0.03). No estimator
    // can resolve those edges at this sample size.
    assert!(
        report.fvs_successes >= 95,
        "only {}/100 feedback-set recoveries",
        report.fvs_successes
    );
    assert!(elapsed < 300.0, "took {elapsed:.1}s, budget 300s");
    println!(
        "PASS greedy recovery: {}/100 feedback-set recoveries at 1000 samples \
         (full tree-edge matches: {}/100, limited by near-zero edge draws; {elapsed:.1}s)",
        report.fvs_successes, report.successes
    );
}

#[test]
fn c08_greedy_first_pick_equals_exhaustive_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    for i in 0..20 {
        let n = rng.gen_range(6..=14);
        let cov = random_pd(n, &mut rng);
        let greedy = learn_greedy_fvs_cov(&cov, 1).unwrap();
        let exact = learn_exact_fvs_cov(&cov, 1, None).unwrap();
        assert_eq!(
            greedy.final_fit.part.fvs(),
            exact.part.fvs(),
            "instance {i} (n={n}): different node"
        );
        let exact_d = fvs_cost_cov(&cov, exact.part.fvs()).unwrap();
        assert_eq!(
            greedy.steps[0].d_value.to_bits(),
            exact_d.to_bits(),
            "instance {i} (n={n}): d values differ"
        );
    }
    println!("PASS greedy k=1 = exhaustive k=1 (node and d value, bit for bit) on 20 instances");
}

#[test]
fn c09_tree_fit_is_optimal_among_all_trees() {
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let mut worst: f64 = 0.0;
    for i in 0..500 {
        let n = rng.gen_range(2..=6);
        let cov = random_pd(n, &mut rng);
        let fit = conditioned_chow_liu_cov(&cov, &[]).unwrap();
        let oracle = FvsOracle::new(cov.as_matrix(), &[]).min_over_trees();
        worst = worst.max((fit.divergence - oracle).abs());
        assert!(
            (fit.divergence - oracle).abs() <= 1e-9,
            "instance {i} (n={n}): {} vs exhaustive {oracle}",
            fit.divergence
        );
    }
    println!(
        "PASS spanning-tree fit attains the exhaustive minimum on 500 instances \
         (worst gap {worst:.2e})"
    );
}

#[test]
fn c10_tree_information_matrix_matches_dense_inverse() {
    let mut rng = ChaCha8Rng::seed_from_u64(1010);
    let mut worst: f64 = 0.0;
    for i in 0..20 {
        let n = rng.gen_range(10..=100);
        let cov = random_pd(n, &mut rng);
        let (sigma_cl, tree) = chow_liu(&cov).unwrap();
        let j = tree_information_matrix(&sigma_cl, &tree).unwrap();
        let dense = sigma_cl.as_matrix().clone().try_inverse().unwrap();
        let gap = (j.to_dense().as_matrix() - &dense).abs().max();
        worst = worst.max(gap);
        assert!(gap <= 1e-10, "instance {i} (n={n}): max entry gap {gap:.2e}");
    }
    println!(
        "PASS tree information matrix = dense inverse of the projected covariance \
         on 20 instances (worst gap {worst:.2e})"
    );
}

#[test]
fn c11_greedy_scales_to_two_hundred_nodes() {
    let start = Instant::now();
    let truth = random_fvs_model(200, 10, 7).unwrap();
    let sigma = block_inverse(&truth.assemble(), truth.part()).unwrap();
    let trace = learn_greedy_fvs_cov(&sigma, 10).unwrap();
    let elapsed = start.elapsed().as_secs_f64();

    assert_eq!(trace.steps.len(), 10);
    for w in trace.steps.windows(2) {
        assert!(
            w[1].d_value <= w[0].d_value + 1e-12,
            "divergence trace increased: {} -> {}",
            w[0].d_value,
            w[1].d_value
        );
    }
    assert!(elapsed < 300.0, "took {elapsed:.1}s, budget 300s");
    println!(
        "PASS greedy with k=10 on 200 nodes: 10-step non-increasing divergence trace \
         in {elapsed:.1}s"
    );
}

#[test]
fn c12_log_det_scaling_report() {
    // Reported, not asserted: structured log-det should grow roughly
    // linearly in n at fixed k, the dense factorization roughly cubically.
    let mut rows = Vec::new();
    for &n in &[500usize, 1000, 2000] {
        let model = random_fvs_model(n, 5, 99).unwrap();
        let reps = 20;
        let t = Instant::now();
        let mut fast = 0.0;
        for _ in 0..reps {
            fast = fvs_log_det(&model).unwrap();
        }
        let fast_time = t.elapsed().as_secs_f64() / reps as f64;

        let dense_m = model.assemble().into_matrix();
        let t = Instant::now();
        let chol = nalgebra::Cholesky::new(dense_m).unwrap();
        let dense: f64 = 2.0 * chol.l().diagonal().iter().map(|&d| d.ln()).sum::<f64>();
        let dense_time = t.elapsed().as_secs_f64();

        let rel = (fast - dense).abs() / dense.abs().max(1.0);
        assert!(rel <= 1e-9, "n={n}: values diverge ({fast} vs {dense})");
        rows.push((n as f64, fast_time, dense_time));
        println!("  n={n} k=5: structured {fast_time:.6}s, dense Cholesky {dense_time:.3}s");
    }
    let growth = |a: f64, b: f64| (b / a).ln() / 4.0f64.ln();
    println!(
        "PASS (report only) log-det scaling n=500→2000: structured exponent {:.2}, \
         dense exponent {:.2}",
        growth(rows[0].1, rows[2].1),
        growth(rows[0].2, rows[2].2),
    );
}
