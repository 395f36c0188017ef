//! Fixture realization, experiment dispatch, and artifact writing.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::Serialize;
use serde_json::json;

use krot::cost::WeightedCost;
use krot::dynamic::{
    action, continuity_residual, displacement_interpolate, velocity_jacobian_defect,
    xt_optimality_check, VelocityField,
};
use krot::experiments::{
    commutative_diagram, kl_decay_curve, stability_experiment, sweep_hard_epsilon, sweep_soft,
    ClosedFormCorners, SoftSolverSpec, SweepReport,
};
use krot::kr::{brenier_gaussian_weighted, kr_map_gaussian, kr_map_grid, kr_plan_discrete};
use krot::measures::{discretize, DiscreteMeasure, GaussianMeasure, GridDensity, GridSpec};
use krot::ot_exact::{barycentric_map, solve_exact};
use krot::ot_soft::{
    exact_soft_oracle, semi_relaxed_sinkhorn, AnnealSchedule, SinkhornOptions,
};

use crate::config::{
    AnnealConfig, CostConfig, Experiment, GridConfig, RunConfig, SolverConfig, SolverKind,
};

pub struct RunContext {
    pub config: RunConfig,
    pub out_dir: PathBuf,
    pub quiet: bool,
}

const DEFAULT_EPSILON_SCHEDULE: [f64; 5] = [1.0, 1e-1, 1e-2, 1e-3, 1e-4];
const DEFAULT_LAMBDA_SCHEDULE: [f64; 5] = [1.0, 10.0, 100.0, 1000.0, 1e6];

struct Fixture {
    source_atoms: DiscreteMeasure,
    target_atoms: DiscreteMeasure,
    gaussian: Option<(GaussianMeasure, GaussianMeasure)>,
    source_density: Option<GridDensity>,
    target_density: Option<GridDensity>,
}

fn build_grid(config: &GridConfig) -> anyhow::Result<GridSpec> {
    Ok(GridSpec::uniform(&config.mins, &config.maxs, &config.nodes)?)
}

fn load_density(path: &str) -> anyhow::Result<GridDensity> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {path}"))?;
    if path.ends_with(".csv") {
        Ok(GridDensity::from_csv(&text)?)
    } else {
        Ok(serde_json::from_str(&text).with_context(|| format!("parsing {path}"))?)
    }
}

fn load_atoms(path: &str) -> anyhow::Result<DiscreteMeasure> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {path}"))?;
    if path.ends_with(".csv") {
        Ok(DiscreteMeasure::from_csv(&text)?)
    } else {
        Ok(serde_json::from_str(&text).with_context(|| format!("parsing {path}"))?)
    }
}

fn realize_fixture(ctx: &RunContext) -> anyhow::Result<Fixture> {
    let f = &ctx.config.fixture;
    if let Some(g) = &f.gaussian {
        let source = GaussianMeasure::new(g.source.mean.clone(), g.source.covariance.clone())?;
        let target = GaussianMeasure::new(g.target.mean.clone(), g.target.covariance.clone())?;
        let source_grid = build_grid(&g.source_grid)?;
        let target_grid = build_grid(&g.target_grid)?;
        if !ctx.quiet {
            if !source.covered_by(&source_grid) {
                eprintln!("warning: source grid does not span mean +/- 5 sigma");
            }
            if !target.covered_by(&target_grid) {
                eprintln!("warning: target grid does not span mean +/- 5 sigma");
            }
        }
        let source_density = discretize(&source, &source_grid)?;
        let target_density = discretize(&target, &target_grid)?;
        Ok(Fixture {
            source_atoms: source_density.atomize(),
            target_atoms: target_density.atomize(),
            gaussian: Some((source, target)),
            source_density: Some(source_density),
            target_density: Some(target_density),
        })
    } else if let Some(files) = &f.grid_density {
        let source_density = load_density(&files.source)?;
        let target_density = load_density(&files.target)?;
        Ok(Fixture {
            source_atoms: source_density.atomize(),
            target_atoms: target_density.atomize(),
            gaussian: None,
            source_density: Some(source_density),
            target_density: Some(target_density),
        })
    } else if let Some(files) = &f.atoms {
        Ok(Fixture {
            source_atoms: load_atoms(&files.source)?,
            target_atoms: load_atoms(&files.target)?,
            gaussian: None,
            source_density: None,
            target_density: None,
        })
    } else {
        bail!("fixture: no source configured");
    }
}

/// Epsilon schedule with the documented default, echoed back for provenance.
fn resolve_epsilons(cost: &CostConfig) -> Vec<f64> {
    if let Some(e) = cost.epsilon {
        vec![e]
    } else if let Some(list) = &cost.epsilon_list {
        list.clone()
    } else {
        DEFAULT_EPSILON_SCHEDULE.to_vec()
    }
}

fn resolve_lambdas(solver: &SolverConfig) -> Vec<f64> {
    if let Some(l) = solver.lambda {
        vec![l]
    } else if let Some(list) = &solver.lambda_list {
        list.clone()
    } else {
        DEFAULT_LAMBDA_SCHEDULE.to_vec()
    }
}

/// Soft solver spec; tolerances are never defaulted silently, schedules are
/// defaulted and echoed.
fn resolve_soft_solver(
    solver: &SolverConfig,
    reference_cost: &krot::cost::CostMatrix,
) -> anyhow::Result<(SoftSolverSpec, SolverConfig)> {
    let mut echoed = solver.clone();
    match solver.kind {
        SolverKind::Exact => bail!("solver.kind: expected a soft solver"),
        SolverKind::SoftOracle => Ok((SoftSolverSpec::Oracle, echoed)),
        SolverKind::Sinkhorn | SolverKind::SemiRelaxed => {
            let Some(tolerance) = solver.tolerance else {
                bail!("solver.tolerance: required for the sinkhorn path (no silent defaults)");
            };
            // `semi-relaxed` starts from the annealed near-exact preset
            // (polish seeded by the hard basis); `sinkhorn` from the plain
            // single-eta iteration. Config fields override either.
            let is_semi = solver.kind == SolverKind::SemiRelaxed;
            let base = if is_semi {
                SinkhornOptions::near_exact(reference_cost)
            } else {
                SinkhornOptions::default()
            };
            let polish = solver.polish.unwrap_or(base.polish);
            let options = SinkhornOptions {
                eta: solver.eta.unwrap_or(base.eta),
                max_iterations: solver.max_iterations.unwrap_or(base.max_iterations),
                tolerance,
                anneal: match &solver.anneal {
                    Some(a) => Some(AnnealSchedule { start_factor: a.start_factor, decay: a.decay }),
                    None => base.anneal.clone(),
                },
                polish,
                hard_support_polish: polish,
                domain: base.domain,
            };
            echoed.eta = Some(options.eta);
            echoed.max_iterations = Some(options.max_iterations);
            echoed.polish = Some(options.polish);
            echoed.anneal = options
                .anneal
                .as_ref()
                .map(|a| AnnealConfig { start_factor: a.start_factor, decay: a.decay });
            Ok((SoftSolverSpec::Sinkhorn(options), echoed))
        }
    }
}

fn write(out_dir: &Path, name: &str, content: &str) -> anyhow::Result<()> {
    let path = out_dir.join(name);
    fs::write(&path, content).with_context(|| format!("writing {}", path.display()))
}

fn write_report(ctx: &RunContext, echoed: &RunConfig, body: serde_json::Value) -> anyhow::Result<()> {
    let report = json!({
        "schema_version": 1,
        "status": "ok",
        "config": echoed,
        "result": body,
    });
    write(&ctx.out_dir, "report.json", &serde_json::to_string_pretty(&report)?)
}

pub fn write_failure_report(ctx: &RunContext, error: &anyhow::Error) -> anyhow::Result<()> {
    let report = json!({
        "schema_version": 1,
        "status": "failed",
        "config": ctx.config,
        "error": format!("{error:#}"),
    });
    write(&ctx.out_dir, "report.json", &serde_json::to_string_pretty(&report)?)
}

fn say(ctx: &RunContext, line: impl AsRef<str>) {
    if !ctx.quiet {
        println!("{}", line.as_ref());
    }
}

fn write_sweep_artifacts(ctx: &RunContext, report: &SweepReport) -> anyhow::Result<()> {
    write(&ctx.out_dir, "cells.csv", &report.to_csv())?;
    write(&ctx.out_dir, "timings.csv", &report.timings_csv())?;
    for cell in &report.cells {
        say(
            ctx,
            format!(
                "eps={} lambda={} objective={} map_to_kr_l2={}",
                cell.epsilon,
                cell.lambda.map_or("-".into(), |l| l.to_string()),
                cell.objective,
                cell.map_to_kr_l2
            ),
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct MapDump<'a> {
    points: &'a [Vec<f64>],
    images: &'a [Vec<f64>],
}

pub fn run(ctx: &RunContext) -> anyhow::Result<()> {
    fs::create_dir_all(&ctx.out_dir)
        .with_context(|| format!("creating {}", ctx.out_dir.display()))?;
    let fixture = realize_fixture(ctx)?;
    let mut echoed = ctx.config.clone();
    let d = fixture.source_atoms.dim();

    match ctx.config.experiment {
        Experiment::Solve => {
            let eps = resolve_epsilons(&ctx.config.cost)[0];
            echoed.cost.epsilon = Some(eps);
            let cost = WeightedCost::new(eps, d)?;
            let matrix =
                cost.matrix(fixture.source_atoms.points(), fixture.target_atoms.points())?;
            match ctx.config.solver.kind {
                SolverKind::Exact => {
                    let sol = solve_exact(&fixture.source_atoms, &fixture.target_atoms, &matrix)?;
                    write(&ctx.out_dir, "plan.csv", &sol.plan.to_triplet_csv())?;
                    let mut potentials = String::from("side,index,potential\n");
                    for (i, u) in sol.source_potential.iter().enumerate() {
                        potentials.push_str(&format!("source,{i},{u}\n"));
                    }
                    for (j, v) in sol.target_potential.iter().enumerate() {
                        potentials.push_str(&format!("target,{j},{v}\n"));
                    }
                    write(&ctx.out_dir, "potentials.csv", &potentials)?;
                    write_report(ctx, &echoed, json!({ "value": sol.value }))?;
                    say(ctx, format!("eps={eps} cost={}", sol.value));
                }
                _ => {
                    let (spec, echoed_solver) = resolve_soft_solver(&ctx.config.solver, &matrix)?;
                    echoed.solver = echoed_solver;
                    let lambda = resolve_lambdas(&ctx.config.solver)[0];
                    let soft = match &spec {
                        SoftSolverSpec::Oracle => exact_soft_oracle(
                            &fixture.source_atoms,
                            &fixture.target_atoms,
                            &matrix,
                            lambda,
                            eps,
                        )?,
                        SoftSolverSpec::Sinkhorn(opts) => semi_relaxed_sinkhorn(
                            &fixture.source_atoms,
                            &fixture.target_atoms,
                            &matrix,
                            lambda,
                            eps,
                            opts,
                        )?,
                    };
                    write(&ctx.out_dir, "solution.json", &soft.to_json()?)?;
                    write(&ctx.out_dir, "plan.csv", &soft.plan.to_triplet_csv())?;
                    write_report(
                        ctx,
                        &echoed,
                        json!({
                            "objective": soft.objective,
                            "kl_term": soft.kl_term,
                            "transport_term": soft.transport_term,
                        }),
                    )?;
                    say(ctx, format!("eps={eps} lambda={lambda} objective={}", soft.objective));
                }
            }
        }

        Experiment::Kr => {
            let plan = kr_plan_discrete(&fixture.source_atoms, &fixture.target_atoms)?;
            let map = barycentric_map(&plan)?;
            write(&ctx.out_dir, "kr_plan.csv", &plan.to_triplet_csv())?;
            write(
                &ctx.out_dir,
                "kr_map.json",
                &serde_json::to_string_pretty(&MapDump { points: map.points(), images: map.images() })?,
            )?;
            let mut summary = json!({ "plan_entries": plan.entries().len() });
            if let (Some(fd), Some(gd)) = (&fixture.source_density, &fixture.target_density) {
                let grid_map = kr_map_grid(fd, gd)?;
                write(&ctx.out_dir, "kr_triangular.json", &grid_map.to_json()?)?;
            }
            if let Some((gs, gt)) = &fixture.gaussian {
                let affine = kr_map_gaussian(gs, gt)?;
                write(&ctx.out_dir, "kr_affine.json", &serde_json::to_string_pretty(&affine)?)?;
                summary["affine_matrix"] = serde_json::to_value(affine.matrix())?;
            }
            write_report(ctx, &echoed, summary)?;
            say(ctx, format!("kr plan with {} entries", plan.entries().len()));
        }

        Experiment::SweepHard => {
            let epsilons = resolve_epsilons(&ctx.config.cost);
            echoed.cost.epsilon_list = Some(epsilons.clone());
            echoed.cost.epsilon = None;
            let reference = fixture
                .gaussian
                .as_ref()
                .map(|(gs, gt)| kr_map_gaussian(gs, gt))
                .transpose()?
                .map(|m| m.as_map_table(fixture.source_atoms.points()));
            let report = sweep_hard_epsilon(
                &fixture.source_atoms,
                &fixture.target_atoms,
                &epsilons,
                reference.as_ref(),
            )?;
            write_sweep_artifacts(ctx, &report)?;
            write_report(ctx, &echoed, serde_json::to_value(&report)?)?;
        }

        Experiment::SweepSoft => {
            let epsilons = resolve_epsilons(&ctx.config.cost);
            let lambdas = resolve_lambdas(&ctx.config.solver);
            echoed.cost.epsilon_list = Some(epsilons.clone());
            echoed.cost.epsilon = None;
            let probe_cost = WeightedCost::new(epsilons[0], d)?
                .matrix(fixture.source_atoms.points(), fixture.target_atoms.points())?;
            let (spec, echoed_solver) = resolve_soft_solver(&ctx.config.solver, &probe_cost)?;
            echoed.solver = echoed_solver;
            echoed.solver.lambda_list = Some(lambdas.clone());
            echoed.solver.lambda = None;
            let report = sweep_soft(
                &fixture.source_atoms,
                &fixture.target_atoms,
                &epsilons,
                &lambdas,
                &spec,
            )?;
            write_sweep_artifacts(ctx, &report)?;
            write_report(ctx, &echoed, serde_json::to_value(&report)?)?;
        }

        Experiment::Diagram => {
            let epsilons = resolve_epsilons(&ctx.config.cost);
            let lambdas = resolve_lambdas(&ctx.config.solver);
            echoed.cost.epsilon_list = Some(epsilons.clone());
            echoed.cost.epsilon = None;
            let eps0 = *epsilons.last().unwrap();
            let probe_cost = WeightedCost::new(eps0, d)?
                .matrix(fixture.source_atoms.points(), fixture.target_atoms.points())?;
            let (spec, echoed_solver) = resolve_soft_solver(&ctx.config.solver, &probe_cost)?;
            echoed.solver = echoed_solver;
            echoed.solver.lambda_list = Some(lambdas.clone());
            echoed.solver.lambda = None;
            let closed_affos = fixture
                .gaussian
                .as_ref()
                .map(|(gs, gt)| -> anyhow::Result<_> {
                    let cost0 = WeightedCost::new(eps0, d)?;
                    Ok((brenier_gaussian_weighted(gs, gt, &cost0)?, kr_map_gaussian(gs, gt)?))
                })
                .transpose()?;
            let report = commutative_diagram(
                &fixture.source_atoms,
                &fixture.target_atoms,
                &epsilons,
                &lambdas,
                closed_affos
                    .as_ref()
                    .map(|(hard, kr)| ClosedFormCorners { hard_eps0: hard, kr }),
                &spec,
            )?;
            write(&ctx.out_dir, "distances.csv", &report.distances_csv())?;
            write(&ctx.out_dir, "corners.json", &serde_json::to_string_pretty(&report)?)?;
            write_report(
                ctx,
                &echoed,
                json!({
                    "corner_labels": report.corner_labels,
                    "distances": report.distances,
                }),
            )?;
            for (i, label) in report.corner_labels.iter().enumerate() {
                say(ctx, format!("{label}: distance to KR corner = {}", report.distances[i][3]));
            }
        }

        Experiment::KlDecay => {
            let eps = resolve_epsilons(&ctx.config.cost)[0];
            echoed.cost.epsilon = Some(eps);
            let lambdas = resolve_lambdas(&ctx.config.solver);
            let cost = WeightedCost::new(eps, d)?;
            let probe_cost =
                cost.matrix(fixture.source_atoms.points(), fixture.target_atoms.points())?;
            let spec = match ctx.config.solver.kind {
                SolverKind::SoftOracle => SoftSolverSpec::Oracle,
                _ => {
                    let (spec, echoed_solver) = resolve_soft_solver(&ctx.config.solver, &probe_cost)?;
                    echoed.solver = echoed_solver;
                    spec
                }
            };
            echoed.solver.lambda_list = Some(lambdas.clone());
            echoed.solver.lambda = None;
            let report = kl_decay_curve(
                &fixture.source_atoms,
                &fixture.target_atoms,
                &cost,
                &lambdas,
                &spec,
            )?;
            write(&ctx.out_dir, "kl_decay.csv", &report.to_csv())?;
            write_report(ctx, &echoed, serde_json::to_value(&report)?)?;
            for row in &report.rows {
                say(ctx, format!("lambda={} kl={} bound={}", row.lambda, row.kl, row.bound));
            }
        }

        Experiment::Dynamic => {
            let dyn_cfg = ctx.config.dynamic.as_ref().expect("validated");
            let eps = resolve_epsilons(&ctx.config.cost)[0];
            echoed.cost.epsilon = Some(eps);
            let cost = WeightedCost::new(eps, d)?;
            let matrix =
                cost.matrix(fixture.source_atoms.points(), fixture.target_atoms.points())?;
            let sol = solve_exact(&fixture.source_atoms, &fixture.target_atoms, &matrix)?;
            let map = barycentric_map(&sol.plan)?;
            let ensemble = displacement_interpolate(&map, &fixture.source_atoms, &dyn_cfg.times)?;
            write(&ctx.out_dir, "trajectory.csv", &ensemble.to_csv())?;

            let kinetic = action(&ensemble, &cost)?;
            let mut gaps = Vec::new();
            for &t in &dyn_cfg.times {
                if t > 0.0 && t < 1.0 {
                    gaps.push(json!({
                        "t": t,
                        "gap": xt_optimality_check(&fixture.source_atoms, &ensemble, t, &cost)?,
                    }));
                }
            }
            let defect = fixture
                .gaussian
                .as_ref()
                .map(|(gs, gt)| -> anyhow::Result<f64> {
                    let affine = brenier_gaussian_weighted(gs, gt, &cost)?;
                    Ok(velocity_jacobian_defect(&VelocityField::Affine(&affine), &[], 0.1, 0.5)?)
                })
                .transpose()?;
            let residual = dyn_cfg
                .splat_grid
                .as_ref()
                .map(|g| -> anyhow::Result<f64> {
                    let grid = build_grid(g)?;
                    Ok(continuity_residual(&ensemble, &grid, (0.0, 1.0))?)
                })
                .transpose()?;
            write_report(
                ctx,
                &echoed,
                json!({
                    "action": kinetic,
                    "static_value": sol.value,
                    "xt_gaps": gaps,
                    "velocity_jacobian_defect": defect,
                    "continuity_residual": residual,
                }),
            )?;
            say(ctx, format!("action={kinetic} static={}", sol.value));
        }

        Experiment::Stability => {
            let st = ctx.config.stability.as_ref().expect("validated");
            let epsilons = resolve_epsilons(&ctx.config.cost);
            echoed.cost.epsilon_list = Some(epsilons.clone());
            echoed.cost.epsilon = None;
            let Some((gs, gt)) = &fixture.gaussian else {
                bail!("stability: requires the gaussian fixture (the reference KR map must be evaluable at mollified atoms)");
            };
            let schedule: Vec<(f64, f64)> =
                st.bandwidths.iter().copied().zip(epsilons.iter().copied()).collect();
            let nodes = match &st.mollify_grid {
                Some(g) => g.nodes.clone(),
                None => ctx.config.fixture.gaussian.as_ref().expect("gaussian fixture").source_grid.nodes.clone(),
            };
            // Per-bandwidth grids spanning 5 sigma of the mollified
            // (covariance-inflated) measures.
            let grids: Vec<(GridSpec, GridSpec)> = schedule
                .iter()
                .map(|&(b, _)| -> anyhow::Result<(GridSpec, GridSpec)> {
                    let span = |g: &GaussianMeasure| -> Vec<f64> {
                        g.axis_std().iter().map(|s| 5.0 * (s * s + b * b).sqrt()).collect()
                    };
                    let build = |g: &GaussianMeasure| -> anyhow::Result<GridSpec> {
                        let hi = span(g);
                        let lo: Vec<f64> = hi.iter().map(|x| -x).collect();
                        Ok(GridSpec::uniform(&lo, &hi, &nodes)?)
                    };
                    Ok((build(gs)?, build(gt)?))
                })
                .collect::<anyhow::Result<_>>()?;
            let reference = kr_map_gaussian(gs, gt)?;
            let report = stability_experiment(
                &fixture.source_atoms,
                &fixture.target_atoms,
                &schedule,
                &grids,
                |p| reference.eval(p),
            )?;
            write_sweep_artifacts(ctx, &report)?;
            write_report(ctx, &echoed, serde_json::to_value(&report)?)?;
        }
    }
    Ok(())
}
