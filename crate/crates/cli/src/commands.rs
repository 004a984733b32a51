use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use nalgebra::{DMatrix, DVector};
use serde::de::DeserializeOwned;
use serde_json::{json, Value};

use radiomap::completion::{complete, PartialGridObservation};
use radiomap::consensus::{centralized_solution, run_to_consensus, AgentData, ConsensusProblem};
use radiomap::figures::{figure_svg, reproduce, write_figure_csv, FigureName, ToyScenario};
use radiomap::formats::{read_grid_map, read_measurements, read_quantized_csv, write_grid_map, write_measurements, write_quantized_csv};
use radiomap::kernels::{fit_krr, Kernel};
use radiomap::kriging::{build_covariance, fit_kriging, CovarianceModel, MeanModel};
use radiomap::parametric::{fit_lasso, fit_ls, friis_basis};
use radiomap::ratelimited::{fit_from_intervals, from_rows, quantize_powers, simulate_branch_powers};
use radiomap::scenario::{AdmmSpec, EstimatorSpec, ExperimentSpec, KrigingMean, Scenario, SurveySpec};
use radiomap::simulator::{draw_measurements, seeded_rng, standard_normals, Realization};
use radiomap::surveying::{run_survey, run_sweep, write_trajectory_csv};
use radiomap::{db_to_linear, linear_to_db, Error, Grid, GridMap, Location, MapEstimator, MeasurementSet, Unit};

use crate::{Cli, Command};

pub const SCHEMA_VERSION: u32 = 1;
const STREAM_ADMM: u64 = 51;

pub enum Outcome {
    Converged,
    NotConverged,
}

impl From<bool> for Outcome {
    fn from(converged: bool) -> Self {
        if converged {
            Outcome::Converged
        } else {
            Outcome::NotConverged
        }
    }
}

/// 2 for validation failures, 1 for anything else.
pub fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if let Some(err) = cause.downcast_ref::<Error>() {
            return match err {
                Error::InvalidInput(_)
                | Error::DimensionMismatch { .. }
                | Error::UnitMismatch { .. }
                | Error::Domain(_)
                | Error::Disconnected
                | Error::Csv(_)
                | Error::Json(_) => 2,
                _ => 1,
            };
        }
        if cause.is::<serde_json::Error>() || cause.is::<csv::Error>() {
            return 2;
        }
    }
    1
}

fn validation(msg: impl Into<String>) -> anyhow::Error {
    Error::InvalidInput(msg.into()).into()
}

pub fn run(cli: &Cli) -> Result<Outcome> {
    fs::create_dir_all(&cli.out).with_context(|| format!("creating {}", cli.out.display()))?;
    match &cli.command {
        Command::Simulate => simulate(cli),
        Command::Estimate { spec, measurements } => estimate(cli, spec, measurements.as_deref()),
        Command::Survey { spec } => survey(cli, spec),
        Command::Admm { spec } => admm(cli, spec),
        Command::Figures { name } => figures(cli, name),
        Command::Eval { estimate, truth } => eval(cli, estimate, truth),
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    serde_json::from_reader(f).map_err(Error::from).with_context(|| format!("parsing {}", path.display()))
}

fn load_scenario(cli: &Cli) -> Result<Scenario> {
    let path = cli.scenario.as_ref().ok_or_else(|| validation("this command needs --scenario"))?;
    Scenario::load(path).with_context(|| format!("loading scenario {}", path.display()))
}

fn create(out: &Path, name: &str) -> Result<BufWriter<File>> {
    let path = out.join(name);
    Ok(BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?))
}

fn write_metrics(out: &Path, command: &str, fields: Value) -> Result<()> {
    let mut doc = json!({ "schema_version": SCHEMA_VERSION, "command": command });
    if let (Some(d), Value::Object(f)) = (doc.as_object_mut(), fields) {
        d.extend(f);
    }
    let mut w = create(out, "metrics.json")?;
    serde_json::to_writer_pretty(&mut w, &doc)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn write_map(out: &Path, name: &str, map: &GridMap) -> Result<()> {
    let mut w = create(out, name)?;
    write_grid_map(map, &mut w)?;
    w.flush()?;
    Ok(())
}

/// Received power in dB.
struct DbPower<'a>(&'a Realization);

impl MapEstimator for DbPower<'_> {
    fn evaluate(&self, loc: &Location) -> f64 {
        linear_to_db(self.0.received_power(loc)).unwrap_or(f64::NEG_INFINITY)
    }

    fn unit(&self) -> Unit {
        Unit::Db
    }
}

fn planned_measurements(
    scn: &Scenario,
    real: &Realization,
    plan: Option<&radiomap::scenario::MeasurementPlan>,
    seed: u64,
) -> Result<MeasurementSet> {
    let plan = plan.or(scn.measurements.as_ref()).ok_or_else(|| validation("no measurement plan given"))?;
    let locs = plan.locations(&scn.grid.region, seed)?;
    Ok(draw_measurements(&DbPower(real), &locs, plan.noise_variance, seed)?)
}

fn simulate(cli: &Cli) -> Result<Outcome> {
    let scn = load_scenario(cli)?;
    let seed = cli.seed.unwrap_or(0);
    let grid = scn.grid.build()?;
    let real = scn.environment.realize(&grid)?;
    let truth = real.power_map().to_db()?;
    write_map(&cli.out, "truth.csv", &truth)?;
    let mut fields = json!({ "seed": seed, "grid_points": grid.len() });
    if let Some(plan) = &scn.measurements {
        let data = planned_measurements(&scn, &real, Some(plan), seed)?;
        let mut w = create(&cli.out, "measurements.csv")?;
        write_measurements(&data, &mut w)?;
        w.flush()?;
        fields["measurements"] = json!(data.len());
        if let Some(q) = &scn.quantization {
            let basis = q.basis.build()?;
            let sensors = data.locations();
            let bank = q.filter_bank(&basis, sensors.len())?;
            let powers = simulate_branch_powers(&real, &sensors, &basis, &bank)?;
            let quantized = quantize_powers(&powers, &sensors, &q.quantizer()?)?;
            let rows: Vec<_> = quantized.iter().map(|m| m.to_row()).collect();
            let mut w = create(&cli.out, "quantized.csv")?;
            write_quantized_csv(&rows, &mut w)?;
            w.flush()?;
            fields["quantized_measurements"] = json!(rows.len());
        }
    }
    write_metrics(&cli.out, "simulate", fields)?;
    Ok(Outcome::Converged)
}

fn error_fields(est: &GridMap, truth: &GridMap) -> Result<Value> {
    Ok(json!({
        "unit": est.unit(),
        "mse": est.mse(truth)?,
        "mae": est.mae(truth)?,
    }))
}

fn kriging_model(scn: &Scenario, mean: MeanModel) -> Result<CovarianceModel> {
    let env = &scn.environment;
    Ok(build_covariance(env.shadowing, env.fading, mean)?)
}

fn path_loss_mean(scn: &Scenario, real: &Realization) -> Result<MeanModel> {
    let env = &scn.environment;
    match env.transmitters.as_slice() {
        [tx] => Ok(MeanModel::PathLoss {
            tx: tx.location,
            power_db: tx.power_db,
            exponent: env.path_loss_exponent,
            d_min: real.distance_floor(),
        }),
        _ => Err(validation("a path-loss mean needs exactly one transmitter")),
    }
}

fn estimate(cli: &Cli, spec_path: &Path, measurements: Option<&Path>) -> Result<Outcome> {
    let scn = load_scenario(cli)?;
    let spec: ExperimentSpec = read_json(spec_path)?;
    let seed = cli.seed.unwrap_or(spec.seed);
    let grid = scn.grid.build()?;
    let real = scn.environment.realize(&grid)?;
    if let EstimatorSpec::IntervalSvr { sigma, lambda, penalty_weight } = spec.estimator {
        return estimate_quantized(cli, &scn, &spec, &real, &grid, measurements, (sigma, lambda, penalty_weight), seed);
    }
    let data = match measurements {
        Some(p) => read_measurements(File::open(p).with_context(|| format!("opening {}", p.display()))?, Unit::Db, 0.0)?,
        None => planned_measurements(&scn, &real, spec.measurements.as_ref(), seed)?,
    };
    data.unit().ensure(Unit::Db)?;
    if data.is_empty() {
        return Err(validation("no measurements"));
    }
    let truth_w = real.power_map();
    let truth_db = truth_w.to_db()?;
    let watts = || -> Result<MeasurementSet> {
        let v: Vec<f64> = data.values().iter().map(|v| db_to_linear(*v)).collect();
        Ok(data.with_values(&v, Unit::Watts)?)
    };
    let env = &scn.environment;
    let (map, converged) = match &spec.estimator {
        EstimatorSpec::FriisLs => {
            let txs: Vec<Location> = env.transmitters.iter().map(|t| t.location).collect();
            let basis = friis_basis(&txs, env.path_loss_exponent, real.distance_floor())?;
            let est = fit_ls(&basis, &watts()?)?;
            (est.to_grid_map(&grid), est.converged)
        }
        EstimatorSpec::Lasso { lambda } => {
            let est = fit_lasso(&grid, &watts()?, *lambda, env.path_loss_exponent, real.distance_floor())?;
            (est.to_grid_map(&grid), est.converged)
        }
        EstimatorSpec::Krr { sigma, lambda } => {
            let mean = data.values().iter().sum::<f64>() / data.len() as f64;
            let centred: Vec<f64> = data.values().iter().map(|v| v - mean).collect();
            let est = fit_krr(&Kernel::rbf(*sigma)?, &data.with_values(&centred, Unit::Db)?, *lambda)?;
            let values = grid.points().iter().map(|p| est.evaluate(p) + mean).collect();
            (GridMap::new(grid.clone(), values, Unit::Db)?, true)
        }
        EstimatorSpec::Kriging { mean } => {
            let mean = match mean {
                KrigingMean::Sample => {
                    MeanModel::Constant { value: data.values().iter().sum::<f64>() / data.len() as f64 }
                }
                KrigingMean::PathLoss => path_loss_mean(&scn, &real)?,
            };
            let est = fit_kriging(&kriging_model(&scn, mean)?, &data)?;
            (est.to_grid_map(&grid), true)
        }
        EstimatorSpec::Completion { lambda } => {
            let obs = PartialGridObservation::from_measurements(&grid, &data)?;
            let res = complete(&obs, *lambda)?;
            (res.map, res.converged)
        }
        EstimatorSpec::IntervalSvr { .. } => unreachable!("handled above"),
    };
    write_map(&cli.out, "estimate.csv", &map)?;
    let truth = if map.unit() == Unit::Watts { &truth_w } else { &truth_db };
    let mut fields = error_fields(&map, truth)?;
    fields["estimator"] = json!(spec.estimator.name());
    fields["seed"] = json!(seed);
    fields["measurements"] = json!(data.len());
    fields["converged"] = json!(converged);
    write_metrics(&cli.out, "estimate", fields)?;
    Ok(converged.into())
}

#[allow(clippy::too_many_arguments)]
fn estimate_quantized(
    cli: &Cli,
    scn: &Scenario,
    spec: &ExperimentSpec,
    real: &Realization,
    grid: &Grid,
    measurements: Option<&Path>,
    (sigma, lambda, weight): (f64, f64, f64),
    seed: u64,
) -> Result<Outcome> {
    let q = scn.quantization.as_ref().ok_or_else(|| validation("interval_svr needs a quantization section in the scenario"))?;
    let basis = q.basis.build()?;
    let quantizer = q.quantizer()?;
    let data = match measurements {
        Some(p) => from_rows(&read_quantized_csv(File::open(p).with_context(|| format!("opening {}", p.display()))?)?, &quantizer)?,
        None => {
            let plan = spec.measurements.as_ref().or(scn.measurements.as_ref()).ok_or_else(|| validation("no measurement plan given"))?;
            let sensors = plan.locations(&scn.grid.region, seed)?;
            let bank = q.filter_bank(&basis, sensors.len())?;
            quantize_powers(&simulate_branch_powers(real, &sensors, &basis, &bank)?, &sensors, &quantizer)?
        }
    };
    let sensors = data.iter().map(|m| m.sensor).max().map_or(0, |s| s + 1);
    let bank = q.filter_bank(&basis, sensors)?;
    let est = fit_from_intervals(&data, &basis, &bank, &Kernel::rbf(sigma)?, lambda, weight)?;
    for c in 0..basis.len() {
        write_map(&cli.out, &format!("component_{c}.csv"), &est.component_map(c, grid))?;
    }
    let mut sq = 0.0;
    let mut count = 0usize;
    for p in grid.points() {
        let truth = real.psd_at(&p, &basis)?;
        for (a, b) in est.psd_at(&p).iter().zip(truth) {
            sq += (a - b).powi(2);
            count += 1;
        }
    }
    write_metrics(
        &cli.out,
        "estimate",
        json!({
            "estimator": "interval_svr",
            "seed": seed,
            "measurements": data.len(),
            "unit": Unit::Watts,
            "psd_mse": sq / count as f64,
            "objective": est.objective,
            "iterations": est.iterations,
            "converged": est.converged,
        }),
    )?;
    Ok(est.converged.into())
}

fn survey(cli: &Cli, spec_path: &Path) -> Result<Outcome> {
    let scn = load_scenario(cli)?;
    let spec: SurveySpec = read_json(spec_path)?;
    let seed = cli.seed.unwrap_or(spec.seed);
    let grid = scn.grid.build()?;
    let real = scn.environment.realize(&grid)?;
    let truth = real.power_map().to_db()?;
    let mean = if scn.environment.transmitters.len() == 1 {
        path_loss_mean(&scn, &real)?
    } else {
        log::info!("several transmitters: using the map average as prior mean");
        MeanModel::Constant { value: truth.values().iter().sum::<f64>() / truth.values().len() as f64 }
    };
    let model = kriging_model(&scn, mean)?;
    let greedy = run_survey(&truth, &model, spec.start, spec.budget, spec.travel_weight, spec.noise_variance, seed)?;
    let sweep = run_sweep(&truth, &model, spec.budget, spec.noise_variance, seed)?;
    let mut w = create(&cli.out, "trajectory.csv")?;
    write_trajectory_csv(&greedy.trajectory, &mut w)?;
    w.flush()?;
    let mut w = create(&cli.out, "sweep_trajectory.csv")?;
    write_trajectory_csv(&sweep.trajectory, &mut w)?;
    w.flush()?;
    let mut w = create(&cli.out, "measurements.csv")?;
    write_measurements(&greedy.measurements, &mut w)?;
    w.flush()?;
    let travelled: f64 = std::iter::once(spec.start)
        .chain(greedy.plan.waypoints.iter().copied())
        .collect::<Vec<_>>()
        .windows(2)
        .map(|w| w[0].distance(&w[1]))
        .sum();
    write_metrics(
        &cli.out,
        "survey",
        json!({
            "seed": seed,
            "budget": spec.budget,
            "steps": greedy.trajectory.len(),
            "final_mse": greedy.final_mse(),
            "sweep_final_mse": sweep.final_mse(),
            "final_total_variance": greedy.trajectory.last().map(|s| s.total_variance),
            "distance_travelled": travelled,
        }),
    )?;
    Ok(Outcome::Converged)
}

fn admm(cli: &Cli, spec_path: &Path) -> Result<Outcome> {
    let spec: AdmmSpec = read_json(spec_path)?;
    let seed = cli.seed.unwrap_or(spec.seed);
    if spec.agents == 0 || spec.dim == 0 || spec.rows == 0 {
        return Err(validation("agents, dim and rows must be positive"));
    }
    let mut rng = seeded_rng(seed, STREAM_ADMM);
    let theta0 = DVector::from_vec(standard_normals(&mut rng, spec.dim));
    let sd = spec.noise_variance.max(0.0).sqrt();
    let agents: Vec<AgentData> = (0..spec.agents)
        .map(|_| {
            let x = DMatrix::from_vec(spec.rows, spec.dim, standard_normals(&mut rng, spec.rows * spec.dim));
            let z = DVector::from_vec(standard_normals(&mut rng, spec.rows));
            let y = &x * &theta0 + z * sd;
            AgentData { x, y }
        })
        .collect();
    let problem = ConsensusProblem::new(&spec.topology.edges(spec.agents), agents, spec.regularizer, spec.rho)?;
    let run = run_to_consensus(&problem, spec.tol, spec.max_rounds)?;
    let star = centralized_solution(&problem)?;
    let max_error = run.states.iter().map(|s| (&s.theta - &star).norm()).fold(0.0, f64::max);
    let edges_only = run.messages.iter().flatten().all(|&(a, b)| problem.is_edge(a, b));
    let mut w = csv::Writer::from_writer(create(&cli.out, "convergence.csv")?);
    w.write_record(["round", "disagreement", "change", "residual"])?;
    for k in 0..run.rounds {
        w.write_record([
            (k + 1).to_string(),
            run.disagreement[k].to_string(),
            run.change[k].to_string(),
            run.residual[k].to_string(),
        ])?;
    }
    w.flush()?;
    write_metrics(
        &cli.out,
        "admm",
        json!({
            "seed": seed,
            "agents": spec.agents,
            "edges": problem.edges().len(),
            "rounds": run.rounds,
            "converged": run.converged,
            "max_error_vs_centralized": max_error,
            "messages_on_edges_only": edges_only,
        }),
    )?;
    Ok(run.converged.into())
}

fn figures(cli: &Cli, name: &str) -> Result<Outcome> {
    let names: Vec<FigureName> = if name == "all" { FigureName::ALL.to_vec() } else { vec![name.parse()?] };
    let seed = cli.seed.unwrap_or(0);
    let scn = ToyScenario::default();
    let mut fields = serde_json::Map::new();
    for n in names {
        let fig = reproduce(n, &scn, seed)?;
        let mut w = create(&cli.out, &format!("{n}.csv"))?;
        write_figure_csv(&fig, &mut w)?;
        w.flush()?;
        fs::write(cli.out.join(format!("{n}.svg")), figure_svg(&fig))?;
        fields.insert(
            n.to_string(),
            json!({ "test_mse": fig.test_mse, "expansion_terms": fig.expansion_terms }),
        );
    }
    write_metrics(&cli.out, "figures", json!({ "seed": seed, "figures": fields }))?;
    Ok(Outcome::Converged)
}

fn eval(cli: &Cli, estimate: &Path, truth: &Path) -> Result<Outcome> {
    let open = |p: &Path| -> Result<GridMap> {
        Ok(read_grid_map(File::open(p).with_context(|| format!("opening {}", p.display()))?)?)
    };
    let (est, truth) = (open(estimate)?, open(truth)?);
    est.unit().ensure(truth.unit())?;
    let fields = error_fields(&est, &truth)?;
    println!("{}", serde_json::to_string(&fields)?);
    write_metrics(&cli.out, "eval", fields)?;
    Ok(Outcome::Converged)
}
