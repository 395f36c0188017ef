//! Acceptance gate: one test per criterion, each printing a pass/fail line.
//!
//! Tolerances and thresholds are pinned here; fixture-calibrated thresholds
//! were frozen after the documented calibration run
//! (`cargo run --release -p krot --example calibrate`).

mod common;

use common::*;

use krot::cost::WeightedCost;
use krot::dynamic::{
    action, displacement_interpolate, velocity_jacobian_defect, xt_optimality_check, VelocityField,
};
use krot::experiments::{
    commutative_diagram, kl_decay_curve, stability_experiment, sweep_hard_epsilon,
    ClosedFormCorners, SoftSolverSpec,
};
use krot::kr::{brenier_gaussian_weighted, kr_map_gaussian};
use krot::measures::GridSpec;
use krot::ot_exact::{barycentric_map, solve_exact, Coupling};
use krot::ot_soft::{
    el_residual, exact_soft_oracle, perturbed_target_formula, resolve_consistency,
    semi_relaxed_sinkhorn, SinkhornOptions,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(number: u32, name: &str, pass: bool, detail: String) {
    println!(
        "criterion {number:2} [{}] {name}: {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "criterion {number} failed ({name}): {detail}");
}

/// Independent north-west-corner oracle on sorted 1D supports.
fn nw_monotone_1d(mu: &krot::measures::DiscreteMeasure, nu: &krot::measures::DiscreteMeasure) -> Vec<(usize, usize, f64)> {
    let mut src: Vec<usize> = (0..mu.len()).collect();
    src.sort_by(|&a, &b| mu.point(a)[0].partial_cmp(&mu.point(b)[0]).unwrap());
    let mut tgt: Vec<usize> = (0..nu.len()).collect();
    tgt.sort_by(|&a, &b| nu.point(a)[0].partial_cmp(&nu.point(b)[0]).unwrap());
    let mut entries = Vec::new();
    let (mut i, mut j) = (0usize, 0usize);
    let mut a = mu.weights()[src[0]];
    let mut b = nu.weights()[tgt[0]];
    loop {
        let m = a.min(b);
        if m > 0.0 {
            entries.push((src[i], tgt[j], m));
        }
        a -= m;
        b -= m;
        if a <= 1e-15 {
            i += 1;
            if i == src.len() {
                break;
            }
            a = mu.weights()[src[i]];
        }
        if b <= 1e-15 {
            j += 1;
            if j == tgt.len() {
                break;
            }
            b = nu.weights()[tgt[j]];
        }
    }
    entries.sort_by_key(|&(i, j, _)| (i, j));
    entries
}

#[test]
fn criterion_01_monotone_rearrangement_1d() {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut pass = true;
    let mut worst_plan = 0.0_f64;
    let mut worst_value = 0.0_f64;
    for trial in 0..25 {
        let n = rng.random_range(2..=64);
        let mu = uniform_measure(&mut rng, n, 1);
        let nu = uniform_measure(&mut rng, n, 1);
        let eps = [1.0, 0.37, 0.01][trial % 3];
        let cost = WeightedCost::new(eps, 1).unwrap();
        let matrix = cost.matrix(mu.points(), nu.points()).unwrap();
        let sol = solve_exact(&mu, &nu, &matrix).unwrap();

        let oracle = nw_monotone_1d(&mu, &nu);
        if sol.plan.entries().len() != oracle.len() {
            pass = false;
            continue;
        }
        for (&(i, j, f), &(oi, oj, of)) in sol.plan.entries().iter().zip(&oracle) {
            if i != oi || j != oj {
                pass = false;
            }
            worst_plan = worst_plan.max((f - of).abs());
        }
        // Uniform equal-count instances: the monotone coupling is a map.
        let map_value: f64 = oracle
            .iter()
            .map(|&(i, j, f)| f * (mu.point(i)[0] - nu.point(j)[0]).powi(2))
            .sum();
        worst_value = worst_value.max((sol.value - map_value).abs());
    }
    pass = pass && worst_plan <= 1e-12 && worst_value <= 1e-10;
    report(
        1,
        "1D monotone-rearrangement equivalence",
        pass,
        format!("25 instances, worst plan diff {worst_plan:.2e}, worst value diff {worst_value:.2e}"),
    );
}

#[test]
fn criterion_02_permutation_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst = 0.0_f64;
    for _ in 0..100 {
        let n = rng.random_range(2..=5);
        let d = rng.random_range(1..=3);
        let mu = uniform_measure(&mut rng, n, d);
        let nu = uniform_measure(&mut rng, n, d);
        for &eps in &[1.0, 0.1] {
            let cost = WeightedCost::new(eps, d).unwrap();
            let matrix = cost.matrix(mu.points(), nu.points()).unwrap();
            let sol = solve_exact(&mu, &nu, &matrix).unwrap();
            // Brute force over all n! assignments.
            let mut indices: Vec<usize> = (0..n).collect();
            let mut best = f64::INFINITY;
            permute(&mut indices, 0, &mut |perm| {
                let v: f64 = perm.iter().enumerate().map(|(i, &j)| matrix.at(i, j) / n as f64).sum();
                best = best.min(v);
            });
            worst = worst.max((sol.value - best).abs());
        }
    }
    report(
        2,
        "brute-force permutation equivalence",
        worst <= 1e-12,
        format!("100 draws x 2 eps, worst value gap {worst:.2e}"),
    );
}

fn permute(indices: &mut Vec<usize>, k: usize, visit: &mut impl FnMut(&[usize])) {
    if k == indices.len() {
        visit(indices);
        return;
    }
    for i in k..indices.len() {
        indices.swap(k, i);
        permute(indices, k + 1, visit);
        indices.swap(k, i);
    }
}

#[test]
fn criterion_03_gaussian_epsilon_convergence() {
    let (src, tgt) = gaussian_pair();
    let kr = kr_map_gaussian(&src, &tgt).unwrap();

    // Cross-check the Cholesky factor by reconstruction.
    let l = kr.linear_matrix();
    let recon = &l * src.covariance_matrix() * l.transpose();
    let mut chol_ok = true;
    for i in 0..2 {
        for j in 0..2 {
            chol_ok &= (recon[(i, j)] - tgt.covariance_matrix()[(i, j)]).abs() <= 1e-10;
        }
    }

    let mut uppers = Vec::new();
    let mut final_err = 0.0_f64;
    for &eps in &[1.0, 1e-1, 1e-2, 1e-4] {
        let cost = WeightedCost::new(eps, 2).unwrap();
        let map = brenier_gaussian_weighted(&src, &tgt, &cost).unwrap();
        uppers.push(map.matrix()[0][1].abs());
        if eps == 1e-4 {
            let expect = [
                [2.0_f64.sqrt(), 0.0],
                [1.0 / 2.0_f64.sqrt(), 1.5_f64.sqrt()],
            ];
            for i in 0..2 {
                for j in 0..2 {
                    final_err = final_err.max((map.matrix()[i][j] - expect[i][j]).abs());
                }
            }
        }
    }
    let decreasing = uppers.windows(2).all(|w| w[1] < w[0]);
    let pass = chol_ok && decreasing && final_err <= 5e-2;
    report(
        3,
        "Gaussian eps->0 convergence to the Cholesky map",
        pass,
        format!("uppers {uppers:?}, entrywise error at 1e-4: {final_err:.3e}"),
    );
}

#[test]
fn criterion_04_grid_epsilon_convergence() {
    let (mu, nu) = gaussian_atoms(16);
    let sweep = sweep_hard_epsilon(&mu, &nu, &[1.0, 1e-1, 1e-2, 1e-3], None).unwrap();
    let first = sweep.cells.first().unwrap().map_to_kr_l2;
    let last = sweep.cells.last().unwrap().map_to_kr_l2;
    // 25% threshold frozen after the documented calibration run (measured
    // ratio 0.003 on the 5-sigma-matched 16x16 fixture).
    let pass = last < 0.25 * first;
    report(
        4,
        "grid eps->0 convergence (16x16 fixture)",
        pass,
        format!("distance ratio {:.4} (eps=1e-3: {last:.4}, eps=1: {first:.4})", last / first),
    );
}

struct SoftBattery {
    soft_le_hard: f64,
    relative_gap_at_1e6: f64,
    resolve_worst: f64,
    el_worst: f64,
    formula_worst: f64,
}

fn soft_battery() -> SoftBattery {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut out = SoftBattery {
        soft_le_hard: f64::NEG_INFINITY,
        relative_gap_at_1e6: 0.0,
        resolve_worst: 0.0,
        el_worst: 0.0,
        formula_worst: 0.0,
    };
    for _ in 0..50 {
        let n = rng.random_range(2..=10);
        let m = rng.random_range(2..=10);
        let d = rng.random_range(1..=3);
        let mu = random_measure(&mut rng, n, d);
        let nu = random_measure(&mut rng, m, d);
        let eps = rng.random_range(0.05..1.0);
        let cost = WeightedCost::new(eps, d).unwrap();
        let matrix = cost.matrix(mu.points(), nu.points()).unwrap();
        let hard = solve_exact(&mu, &nu, &matrix).unwrap();
        for &lambda in &[1e-2, 1.0, 1e2, 1e6] {
            let soft = exact_soft_oracle(&mu, &nu, &matrix, lambda, eps).unwrap();
            out.soft_le_hard = out.soft_le_hard.max(soft.objective - hard.value);
            if lambda == 1e6 {
                let rel = (hard.value - soft.objective).abs() / hard.value.max(1e-12);
                out.relative_gap_at_1e6 = out.relative_gap_at_1e6.max(rel);
            }
            out.resolve_worst = out.resolve_worst.max(resolve_consistency(&soft, &matrix).unwrap());
            out.el_worst = out.el_worst.max(el_residual(&soft, &nu, &matrix).unwrap());
            out.formula_worst = out
                .formula_worst
                .max(perturbed_target_formula(&soft, &nu, &matrix).unwrap().max_cross_disagreement);
        }
    }
    out
}

#[test]
fn criteria_05_06_07_soft_oracle_battery() {
    let battery = soft_battery();
    report(
        5,
        "soft <= hard with equality at large lambda",
        battery.soft_le_hard <= 1e-8 && battery.relative_gap_at_1e6 <= 1e-3,
        format!(
            "max(soft - hard) = {:.2e}, max relative gap at lambda=1e6 = {:.2e}",
            battery.soft_le_hard, battery.relative_gap_at_1e6
        ),
    );
    report(
        6,
        "re-solve consistency of oracle solutions",
        battery.resolve_worst <= 1e-6,
        format!("worst hard-re-solve gap {:.2e}", battery.resolve_worst),
    );
    report(
        7,
        "Euler-Lagrange residual and perturbed-target formula",
        battery.el_worst <= 1e-6 && battery.formula_worst <= 1e-6,
        format!(
            "worst EL residual {:.2e}, worst cross-source disagreement {:.2e}",
            battery.el_worst, battery.formula_worst
        ),
    );
}

#[test]
fn criterion_08_kl_decay_bound() {
    let lambdas = [1.0, 10.0, 100.0, 1000.0];

    // Two-atom fixture: M = 7 by direct second moments.
    let (mu, nu, _) = two_atom_fixture();
    let m = mu.second_moment() + nu.second_moment();
    assert!((m - 7.0).abs() <= 1e-12, "fixture second moment M = {m}");
    let cost = WeightedCost::new(1.0, 1).unwrap();
    let two_atom =
        kl_decay_curve(&mu, &nu, &cost, &lambdas, &SoftSolverSpec::Oracle).unwrap();

    // 16x16 Gaussian fixture via the annealed, polished Sinkhorn path.
    let (gmu, gnu) = gaussian_atoms(16);
    let gcost = WeightedCost::new(1.0, 2).unwrap();
    let probe = gcost.matrix(gmu.points(), gnu.points()).unwrap();
    // Entropy-level accuracy suffices against the 2M/lambda bound, whose
    // slack is the lambda-scaled transport term; the grid fixture is too
    // degenerate for the machine-exact polish at moderate lambda.
    let solver = SoftSolverSpec::Sinkhorn(SinkhornOptions {
        tolerance: 1e-3,
        ..SinkhornOptions::near_exact(&probe)
    });
    let gaussian = kl_decay_curve(&gmu, &gnu, &gcost, &lambdas, &solver).unwrap();

    let mut pass = true;
    let mut detail = Vec::new();
    for rows in [&two_atom.rows, &gaussian.rows] {
        let mut last = f64::INFINITY;
        for r in rows {
            pass &= r.kl <= r.bound + 1e-6;
            pass &= r.kl <= last + 1e-12;
            last = r.kl;
        }
        detail.push(rows.iter().map(|r| format!("{:.2e}", r.kl)).collect::<Vec<_>>().join(" "));
    }
    report(
        8,
        "KL decay under the 2M/lambda bound",
        pass,
        format!("two-atom KL: [{}], gaussian KL: [{}]", detail[0], detail[1]),
    );
}

#[test]
fn criterion_09_commutative_diagram() {
    let (src, tgt) = gaussian_pair();
    let (mu, nu) = gaussian_atoms(24);
    let eps = [1.0, 1e-4];
    let lambdas = [1.0, 1e6];
    let cost0 = WeightedCost::new(1e-4, 2).unwrap();
    let hard = brenier_gaussian_weighted(&src, &tgt, &cost0).unwrap();
    let kr = kr_map_gaussian(&src, &tgt).unwrap();
    let matrix = cost0.matrix(mu.points(), nu.points()).unwrap();
    let diagram = commutative_diagram(
        &mu,
        &nu,
        &eps,
        &lambdas,
        Some(ClosedFormCorners { hard_eps0: &hard, kr: &kr }),
        &SoftSolverSpec::Sinkhorn(SinkhornOptions::near_exact(&matrix)),
    )
    .unwrap();
    // Corner order: A = soft, B = hard at eps0, C = KR onto nu_lambda,
    // D = closed-form KR.
    let b_d = diagram.distances[1][3];
    let c_d = diagram.distances[2][3];
    let a_b = diagram.distances[0][1];
    let a_c = diagram.distances[0][2];
    let pass = b_d <= 5e-2 && c_d <= 5e-2 && a_b <= 1e-1 && a_c <= 1e-1;
    report(
        9,
        "commutative diagram of limits",
        pass,
        format!("B-D {b_d:.3e}, C-D {c_d:.3e}, A-B {a_b:.3e}, A-C {a_c:.3e}"),
    );
}

#[test]
fn criterion_10_dynamic_triangularity_and_xt_optimality() {
    // Velocity-Jacobian defect sweep on the Gaussian fixture, exact algebra.
    let (src, tgt) = gaussian_pair();
    let mut defects = Vec::new();
    for &eps in &[1.0, 1e-1, 1e-2, 1e-4] {
        let cost = WeightedCost::new(eps, 2).unwrap();
        let map = brenier_gaussian_weighted(&src, &tgt, &cost).unwrap();
        defects
            .push(velocity_jacobian_defect(&VelocityField::Affine(&map), &[], 0.1, 0.5).unwrap());
    }
    let decreasing = defects.windows(2).all(|w| w[1] < w[0]);
    let collapsed = defects[3] < 0.05 * defects[0];

    // X_t optimality and the action identity on solver-produced optimal
    // maps (deterministic plans).
    let mut rng = ChaCha8Rng::seed_from_u64(1010);
    let mut worst_gap = 0.0_f64;
    let mut worst_action = 0.0_f64;
    let mut fixtures: Vec<(krot::measures::DiscreteMeasure, krot::measures::DiscreteMeasure, f64)> =
        vec![];
    let (m2, n2, _) = two_atom_fixture();
    fixtures.push((m2, n2, 1.0));
    for _ in 0..10 {
        let n = rng.random_range(2..=5);
        let d = rng.random_range(1..=2);
        fixtures.push((
            uniform_measure(&mut rng, n, d),
            uniform_measure(&mut rng, n, d),
            rng.random_range(0.05..1.0),
        ));
    }
    for (mu, nu, eps) in &fixtures {
        let cost = WeightedCost::new(*eps, mu.dim()).unwrap();
        let matrix = cost.matrix(mu.points(), nu.points()).unwrap();
        let sol = solve_exact(mu, nu, &matrix).unwrap();
        // Uniform weights with equal counts: the optimal plan is a map.
        let deterministic = sol.plan.entries().iter().all(|&(_, _, f)| f > 1e-12);
        if sol.plan.entries().len() != mu.len() || !deterministic {
            continue;
        }
        let map = barycentric_map(&sol.plan).unwrap();
        let ens = displacement_interpolate(&map, mu, &[0.25, 0.5, 0.75]).unwrap();
        for &t in &[0.25, 0.5, 0.75] {
            worst_gap = worst_gap.max(xt_optimality_check(mu, &ens, t, &cost).unwrap());
        }
        worst_action = worst_action.max((action(&ens, &cost).unwrap() - sol.value).abs());
    }

    let pass = decreasing && collapsed && worst_gap <= 1e-8 && worst_action <= 1e-12;
    report(
        10,
        "dynamic triangularity, X_t optimality, action identity",
        pass,
        format!(
            "defects {defects:?}, worst xt gap {worst_gap:.2e}, worst action mismatch {worst_action:.2e}"
        ),
    );
}

#[test]
fn criterion_11_stability_under_mollification() {
    let (src, tgt) = gaussian_pair();
    let (mu, nu) = gaussian_atoms(16);
    let schedule = [(1.5, 0.1), (0.8, 0.01), (0.4, 1e-3)];
    let grids: Vec<(GridSpec, GridSpec)> = schedule
        .iter()
        .map(|&(b, _)| {
            let ss = 5.0 * (1.0_f64 + b * b).sqrt();
            let ts = 5.0 * (2.0_f64 + b * b).sqrt();
            (
                GridSpec::uniform(&[-ss, -ss], &[ss, ss], &[16, 16]).unwrap(),
                GridSpec::uniform(&[-ts, -ts], &[ts, ts], &[16, 16]).unwrap(),
            )
        })
        .collect();
    let reference = kr_map_gaussian(&src, &tgt).unwrap();
    let sweep =
        stability_experiment(&mu, &nu, &schedule, &grids, |p| reference.eval(p)).unwrap();
    let dists: Vec<f64> = sweep.cells.iter().map(|c| c.map_to_kr_l2).collect();
    let pass = dists.last().unwrap() < &(dists[0] * 0.5);
    report(
        11,
        "stability under mollified marginals",
        pass,
        format!("distances along the schedule: {dists:?}"),
    );
}

#[test]
fn criterion_12_invariant_suites() {
    // Spot checks of the module invariants; the full randomized property
    // suites live in tests/invariants.rs and run in the same invocation.

    // CDF/quantile round trip on a randomized density, fixed seed.
    let mut rng = ChaCha8Rng::seed_from_u64(1212);
    let g = GridSpec::uniform(&[-1.0], &[2.0], &[41]).unwrap();
    let raw: Vec<f64> = (0..41).map(|_| rng.random_range(0.1..2.0)).collect();
    let f = krot::measures::build_grid_density(g, raw).unwrap();
    let cdf = f.cdf().unwrap();
    let h = 3.0 / 40.0;
    let mut round_trip_ok = true;
    for &x in f.grid().axis(0) {
        let u = cdf.evaluate(x);
        round_trip_ok &= (cdf.quantile(u).unwrap() - x).abs() <= h + 1e-12;
    }

    // Triangularity of a KR map is exact.
    let (fd, gd) = gaussian_densities(16);
    let map = krot::kr::kr_map_grid(&fd, &gd).unwrap();
    let a = map.eval(&[0.4, -2.0]);
    let b = map.eval(&[0.4, 2.5]);
    let triangular_ok = a[0] == b[0];

    // Coupling marginal exactness on a random instance.
    let mu = random_measure(&mut rng, 7, 2);
    let nu = random_measure(&mut rng, 5, 2);
    let cost = WeightedCost::new(0.3, 2).unwrap();
    let matrix = cost.matrix(mu.points(), nu.points()).unwrap();
    let sol = solve_exact(&mu, &nu, &matrix).unwrap();
    let rows = sol.plan.row_sums();
    let cols = sol.plan.col_sums();
    let marginals_ok = rows.iter().zip(mu.weights()).all(|(r, w)| (r - w).abs() <= 1e-10)
        && cols.iter().zip(nu.weights()).all(|(c, w)| (c - w).abs() <= 1e-10);

    // KR Jacobian identity improves under refinement.
    let coarse = {
        let (f, g) = gaussian_densities(16);
        let m = krot::kr::kr_map_grid(&f, &g).unwrap();
        krot::kr::kr_jacobian_identity_check(&m, &f, &g).unwrap()
    };
    let fine = {
        let (f, g) = gaussian_densities(48);
        let m = krot::kr::kr_map_grid(&f, &g).unwrap();
        krot::kr::kr_jacobian_identity_check(&m, &f, &g).unwrap()
    };
    let jacobian_ok = fine < coarse;

    // Determinism: identical runs serialize bitwise identically.
    let (am, an) = gaussian_atoms(8);
    let r1 = sweep_hard_epsilon(&am, &an, &[1.0, 0.1], None).unwrap();
    let r2 = sweep_hard_epsilon(&am, &an, &[1.0, 0.1], None).unwrap();
    let determinism_ok =
        r1.to_json().unwrap() == r2.to_json().unwrap() && r1.to_csv() == r2.to_csv();

    // Sinkhorn plan marginals: rows exact after the final projection.
    let (m2, n2, c2) = two_atom_fixture();
    let soft = semi_relaxed_sinkhorn(
        &m2,
        &n2,
        &c2,
        5.0,
        1.0,
        &SinkhornOptions { eta: 1e-2, tolerance: 1e-8, ..Default::default() },
    )
    .unwrap();
    let rows_exact = soft
        .plan
        .row_sums()
        .iter()
        .zip(m2.weights())
        .all(|(r, w)| (r - w).abs() <= 1e-12);

    let pass = round_trip_ok
        && triangular_ok
        && marginals_ok
        && jacobian_ok
        && determinism_ok
        && rows_exact;
    report(
        12,
        "module invariant suites",
        pass,
        format!(
            "round_trip {round_trip_ok}, triangular {triangular_ok}, marginals {marginals_ok}, jacobian {coarse:.3} -> {fine:.3}, determinism {determinism_ok}, rows_exact {rows_exact}"
        ),
    );
}

#[test]
fn coupling_rejects_bad_marginals() {
    // The acceptance suite also guards the plan validation path end to end.
    let (mu, nu, _) = two_atom_fixture();
    let bad = Coupling::new(mu, nu, vec![(0, 0, 0.9), (1, 1, 0.1)]);
    assert!(bad.is_err());
}
