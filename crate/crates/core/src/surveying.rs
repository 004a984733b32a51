//! Uncertainty-driven measurement collection with a kriging backend.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::estimator::MapEstimator;
use crate::geometry::{Grid, GridMap, Location, Unit};
use crate::kriging::{fit_kriging, CovarianceModel, KrigingEstimate};
use crate::measurement::{Measurement, MeasurementSet};
use crate::simulator::{seeded_rng, standard_normals};

const STREAM_SURVEY_NOISE: u64 = 21;

/// Posterior variance (dB²) over a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct UncertaintyMap(GridMap);

impl UncertaintyMap {
    pub fn map(&self) -> &GridMap {
        &self.0
    }

    pub fn total(&self) -> f64 {
        self.0.values().iter().sum()
    }
}

pub fn uncertainty_map(est: &KrigingEstimate, grid: &Grid) -> UncertaintyMap {
    let values = grid.points().iter().map(|p| est.posterior_variance(p)).collect();
    UncertaintyMap(GridMap::new(grid.clone(), values, Unit::DbSquared).expect("one value per grid point"))
}

fn score(est: &KrigingEstimate, p: &Location, current: &Location, travel_weight: f64) -> f64 {
    est.posterior_variance(p) - travel_weight * p.distance(current)
}

fn best_index(
    est: &KrigingEstimate,
    points: &[Location],
    current: &Location,
    travel_weight: f64,
    allowed: impl Fn(usize) -> bool,
) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, p) in points.iter().enumerate() {
        if !allowed(i) {
            continue;
        }
        let s = score(est, p, current, travel_weight);
        // Strict comparison keeps the lowest index on ties.
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    best.map(|(i, _)| i)
}

/// Grid point maximizing `posterior_variance(x) − travel_weight·‖x − current‖`.
pub fn plan_next(est: &KrigingEstimate, grid: &Grid, current: &Location, travel_weight: f64) -> Location {
    let points = grid.points();
    let i = best_index(est, &points, current, travel_weight, |_| true).expect("grids are non-empty");
    points[i]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurveyPlan {
    pub waypoints: Vec<Location>,
    pub budget: usize,
    pub travel_weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub step: usize,
    pub location: Location,
    pub mse: f64,
    pub total_variance: f64,
}

#[derive(Clone, Debug)]
pub struct SurveyResult {
    pub plan: SurveyPlan,
    pub measurements: MeasurementSet,
    pub trajectory: Vec<TrajectoryStep>,
}

impl SurveyResult {
    pub fn mse_curve(&self) -> Vec<f64> {
        self.trajectory.iter().map(|s| s.mse).collect()
    }

    pub fn final_mse(&self) -> f64 {
        self.trajectory.last().map_or(f64::NAN, |s| s.mse)
    }
}

/// Shared loop: measure at `choose(est, current)` until the budget runs out.
#[allow(clippy::too_many_arguments)]
fn survey_loop(
    truth: &GridMap,
    model: &CovarianceModel,
    noise_variance: f64,
    budget: usize,
    travel_weight: f64,
    seed: u64,
    mut choose: impl FnMut(&KrigingEstimate, &Location, &[bool]) -> Option<usize>,
    start: Location,
) -> Result<SurveyResult> {
    truth.unit().ensure(Unit::Db)?;
    if budget == 0 {
        return invalid("survey budget must be at least 1");
    }
    if !(noise_variance >= 0.0) {
        return invalid("noise variance must be non-negative");
    }
    let grid = truth.grid();
    let points = grid.points();
    let mut rng = seeded_rng(seed, STREAM_SURVEY_NOISE);
    let noise = standard_normals(&mut rng, budget);
    let sd = noise_variance.sqrt();
    let mut data = MeasurementSet::new(Vec::new(), noise_variance, Unit::Db)?;
    let mut est = fit_kriging(model, &data)?;
    let mut visited = vec![false; points.len()];
    let mut current = start;
    let mut waypoints = Vec::new();
    let mut trajectory = Vec::new();
    for (step, z) in noise.into_iter().enumerate() {
        let Some(i) = choose(&est, &current, &visited) else { break };
        visited[i] = true;
        current = points[i];
        waypoints.push(current);
        data.push(Measurement::at(current, truth.values()[i] + sd * z))?;
        est = fit_kriging(model, &data)?;
        let unc = uncertainty_map(&est, grid);
        trajectory.push(TrajectoryStep {
            step: step + 1,
            location: current,
            mse: est.to_grid_map(grid).mse(truth)?,
            total_variance: unc.total(),
        });
    }
    Ok(SurveyResult { plan: SurveyPlan { waypoints, budget, travel_weight }, measurements: data, trajectory })
}

/// Greedy uncertainty-driven survey over the grid of `truth` (a dB map).
/// Each grid point is measured at most once.
pub fn run_survey(
    truth: &GridMap,
    model: &CovarianceModel,
    start: Location,
    budget: usize,
    travel_weight: f64,
    noise_variance: f64,
    seed: u64,
) -> Result<SurveyResult> {
    let points = truth.grid().points();
    survey_loop(
        truth,
        model,
        noise_variance,
        budget,
        travel_weight,
        seed,
        |est, cur, visited| best_index(est, &points, cur, travel_weight, |i| !visited[i]),
        start,
    )
}

/// Serpentine visiting order: rows along the first axis, alternating
/// direction, layers stacked along the last axis.
pub fn boustrophedon_order(grid: &Grid) -> Vec<usize> {
    let counts = grid.counts();
    let nx = counts[0];
    let rows = grid.len() / nx;
    let mut order = Vec::with_capacity(grid.len());
    for r in 0..rows {
        let base = r * nx;
        if r % 2 == 0 {
            order.extend(base..base + nx);
        } else {
            order.extend((base..base + nx).rev());
        }
    }
    order
}

/// Naive sweep: the first `budget` points of the serpentine order.
pub fn run_sweep(truth: &GridMap, model: &CovarianceModel, budget: usize, noise_variance: f64, seed: u64) -> Result<SurveyResult> {
    let order = boustrophedon_order(truth.grid());
    let start = truth.grid().point(order[0]);
    let mut k = 0;
    survey_loop(
        truth,
        model,
        noise_variance,
        budget,
        0.0,
        seed,
        |_, _, _| {
            let i = order.get(k).copied();
            k += 1;
            i
        },
        start,
    )
}

pub fn write_trajectory_csv<W: Write>(steps: &[TrajectoryStep], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["step", "x", "y", "z", "mse", "total_variance"])?;
    for s in steps {
        let c = |a: usize| if a < s.location.dim() { s.location.get(a).to_string() } else { String::new() };
        wr.write_record([s.step.to_string(), c(0), c(1), c(2), s.mse.to_string(), s.total_variance.to_string()])?;
    }
    wr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Region;
    use crate::kriging::{build_covariance, MeanModel};
    use crate::simulator::{sample_shadowing_field, FadingParams, ShadowingParams};

    fn grid() -> Grid {
        Grid::new(Region::rect(0.0, 0.0, 9.0, 9.0).unwrap(), vec![10, 10]).unwrap()
    }

    fn model() -> CovarianceModel {
        build_covariance(ShadowingParams::new(4.0, 3.0, 0.0).unwrap(), FadingParams::none(), MeanModel::Zero).unwrap()
    }

    fn truth(seed: u64) -> GridMap {
        let s = sample_shadowing_field(&grid(), &model().shadowing, seed).unwrap();
        GridMap::new(grid(), s.values().iter().map(|v| -v).collect(), Unit::Db).unwrap()
    }

    #[test]
    fn empty_data_has_prior_variance() {
        let est = fit_kriging(&model(), &MeasurementSet::empty(Unit::Db)).unwrap();
        let u = uncertainty_map(&est, &grid());
        assert!(u.map().values().iter().all(|v| *v == 4.0));
        // Equal variance: the nearest point wins, then the lowest index.
        let cur = Location::xy(3.2, 4.9);
        assert_eq!(plan_next(&est, &grid(), &cur, 0.1), grid().point(grid().nearest_index(&cur)));
        assert_eq!(plan_next(&est, &grid(), &cur, 0.0), grid().point(0));
    }

    #[test]
    fn measured_point_is_not_selected_again() {
        let g = grid();
        let p = g.point(37);
        let data = MeasurementSet::from_points(&[(p, 1.0)], 0.0, Unit::Db).unwrap();
        let est = fit_kriging(&model(), &data).unwrap();
        assert!(est.posterior_variance(&p) < 1e-9);
        assert!(uncertainty_map(&est, &g).map().values().iter().all(|v| *v <= 4.0));
        assert_ne!(plan_next(&est, &g, &p, 0.0), p);
        assert_ne!(plan_next(&est, &g, &p, 0.5), p);
    }

    #[test]
    fn variance_decreases_and_is_reproducible() {
        let t = truth(3);
        let a = run_survey(&t, &model(), Location::xy(0.0, 0.0), 15, 0.05, 0.0, 9).unwrap();
        assert!(a.trajectory.windows(2).all(|w| w[1].total_variance < w[0].total_variance));
        let b = run_survey(&t, &model(), Location::xy(0.0, 0.0), 15, 0.05, 0.0, 9).unwrap();
        assert_eq!(a.trajectory, b.trajectory);
        assert_eq!(a.plan.waypoints.len(), 15);
    }

    #[test]
    fn full_budget_is_exact() {
        let t = truth(4);
        let r = run_survey(&t, &model(), Location::xy(0.0, 0.0), 100, 0.0, 0.0, 1).unwrap();
        assert!(r.final_mse() < 1e-8);
        assert!(r.mse_curve().iter().all(|m| *m >= r.final_mse()));
    }

    #[test]
    fn serpentine_order() {
        let g = Grid::new(Region::rect(0.0, 0.0, 2.0, 1.0).unwrap(), vec![3, 2]).unwrap();
        assert_eq!(boustrophedon_order(&g), vec![0, 1, 2, 5, 4, 3]);
    }

    #[test]
    fn trajectory_csv_header() {
        let t = truth(5);
        let r = run_sweep(&t, &model(), 3, 0.0, 0).unwrap();
        let mut buf = Vec::new();
        write_trajectory_csv(&r.trajectory, &mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("step,x,y,z,mse,total_variance\n1,0.45,0.45,,"));
        assert_eq!(s.lines().count(), 4);
    }
}
