//! Calibration run backing the thresholds frozen in the acceptance suite.
//!
//! Prints, for several Gaussian-fixture grid resolutions:
//! - the hard-sweep map distance ratio between eps = 1e-3 and eps = 1
//!   (threshold for the grid convergence criterion);
//! - the commutative-diagram corner distances at (eps = 1e-4, lambda = 1e6);
//! - the stability sweep distances for the documented bandwidth schedule.
//!
//! Run with: cargo run --release -p krot --example calibrate

use krot::cost::WeightedCost;
use krot::experiments::{
    commutative_diagram, stability_experiment, sweep_hard_epsilon, ClosedFormCorners,
    SoftSolverSpec,
};
use krot::kr::{brenier_gaussian_weighted, kr_map_gaussian};
use krot::measures::{discretize, DiscreteMeasure, GaussianMeasure, GridSpec};
use krot::ot_soft::SinkhornOptions;

/// Canonical grid fixture: both grids span mean +/- 5 sigma per axis. The
/// matched coverage makes the coordinate-1 column masses of source and
/// target equal exactly, so the monotone coordinate-1 stage never splits
/// columns.
fn fixture_atoms(nodes: usize) -> (DiscreteMeasure, DiscreteMeasure) {
    let src = GaussianMeasure::standard(2);
    let tgt = GaussianMeasure::new(vec![0.0, 0.0], vec![vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
    let s = 5.0;
    let t = 5.0 * 2.0_f64.sqrt();
    let sg = GridSpec::uniform(&[-s, -s], &[s, s], &[nodes, nodes]).unwrap();
    let tg = GridSpec::uniform(&[-t, -t], &[t, t], &[nodes, nodes]).unwrap();
    (discretize(&src, &sg).unwrap().atomize(), discretize(&tgt, &tg).unwrap().atomize())
}

fn main() {
    let src = GaussianMeasure::standard(2);
    let tgt = GaussianMeasure::new(vec![0.0, 0.0], vec![vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();

    println!("== hard sweep ratio (criterion: eps=1e-3 below 25% of eps=1), 16x16");
    let (mu, nu) = fixture_atoms(16);
    let t0 = std::time::Instant::now();
    let report = sweep_hard_epsilon(&mu, &nu, &[1.0, 0.1, 0.01, 1e-3], None).unwrap();
    for c in &report.cells {
        println!("  eps={:<8} map_to_kr_l2={:.6}", c.epsilon, c.map_to_kr_l2);
    }
    let first = report.cells.first().unwrap().map_to_kr_l2;
    let last = report.cells.last().unwrap().map_to_kr_l2;
    println!("  ratio = {:.4}  ({:?})", last / first, t0.elapsed());

    for nodes in [16usize, 20, 24] {
        println!("== diagram corners at (1e-4, 1e6), {nodes}x{nodes}");
        let (mu, nu) = fixture_atoms(nodes);
        let cost0 = WeightedCost::new(1e-4, 2).unwrap();
        let hard = brenier_gaussian_weighted(&src, &tgt, &cost0).unwrap();
        let kr = kr_map_gaussian(&src, &tgt).unwrap();
        let matrix = cost0.matrix(mu.points(), nu.points()).unwrap();
        let t0 = std::time::Instant::now();
        let report = commutative_diagram(
            &mu,
            &nu,
            &[1.0, 1e-4],
            &[1.0, 1e6],
            Some(ClosedFormCorners { hard_eps0: &hard, kr: &kr }),
            &SoftSolverSpec::Sinkhorn(SinkhornOptions::near_exact(&matrix)),
        )
        .unwrap();
        println!(
            "  B-D={:.4}  C-D={:.4}  A-B={:.4}  A-C={:.4}  A-D={:.4}  ({:?})",
            report.distances[1][3],
            report.distances[2][3],
            report.distances[0][1],
            report.distances[0][2],
            report.distances[0][3],
            t0.elapsed()
        );
    }

    println!("== stability sweep, bandwidths (1.5,0.8,0.4) with eps (0.1,0.01,1e-3)");
    for nodes in [16usize, 24] {
        let (mu, nu) = fixture_atoms(nodes);
        let schedule = [(1.5, 0.1), (0.8, 0.01), (0.4, 1e-3)];
        // Per-bandwidth grids: 5 sigma of the inflated measures, so the
        // coordinate-1 marginals stay mass-aligned.
        let grids: Vec<(GridSpec, GridSpec)> = schedule
            .iter()
            .map(|&(b, _)| {
                let ss = 5.0 * (1.0_f64 + b * b).sqrt();
                let ts = 5.0 * (2.0_f64 + b * b).sqrt();
                (
                    GridSpec::uniform(&[-ss, -ss], &[ss, ss], &[nodes, nodes]).unwrap(),
                    GridSpec::uniform(&[-ts, -ts], &[ts, ts], &[nodes, nodes]).unwrap(),
                )
            })
            .collect();
        let reference = kr_map_gaussian(&src, &tgt).unwrap();
        let t0 = std::time::Instant::now();
        let report = stability_experiment(
            &mu,
            &nu,
            &schedule,
            &grids,
            |p| reference.eval(p),
        )
        .unwrap();
        let dists: Vec<f64> = report.cells.iter().map(|c| c.map_to_kr_l2).collect();
        println!("  {nodes}x{nodes}: {dists:?}  ({:?})", t0.elapsed());
    }
}
