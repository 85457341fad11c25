use serde::Serialize;
use tangency::config::ExperimentConfig;
use tangency::error::GeometryError;
use tangency::geometry::{
    initial_ball_spacing, perturbation_curve, return_disk, verify_ball_with, verify_return_cones, BallReport,
    CurveReport, DiskSample, SlopeReport,
};
use tangency::measures::{
    abs_continuity_diagnostic, basin_partition, build_ulam, cesaro_measure, component_means, mixture_fit,
    standard_observables, stationarity_residual, stationary_components, AbsContinuityReport, Component, Grid3,
    Histogram,
};
use tangency::model::{Point, ValidationReport};
use tangency::noise::NoiseKernel;
use tangency::orbits::{classify_recurrence, random_orbit, return_times};

use crate::io::{num, Sink};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("validation failed:\n{0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Validation(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

fn runtime<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Runtime(e.to_string())
}

#[derive(Serialize)]
struct Validation {
    passed: bool,
    model: ValidationReport,
    noise: Result<(), String>,
}

fn check(config: &ExperimentConfig) -> Validation {
    let model = config.model.validate();
    let noise = config
        .noise
        .kernel()
        .and_then(|k| k.check_window(config.model.t_star))
        .map_err(|e| e.to_string());
    Validation { passed: model.is_ok() && noise.is_ok(), model, noise }
}

/// Validated kernel, or the validation error every command stops on.
fn kernel(config: &ExperimentConfig) -> Result<NoiseKernel, CliError> {
    let v = check(config);
    if !v.passed {
        let mut msg = v.model.failures().map(|c| format!("{}: {}", c.name, c.condition)).collect::<Vec<_>>();
        if let Err(e) = &v.noise {
            msg.push(format!("noise: {e}"));
        }
        return Err(CliError::Validation(msg.join("\n")));
    }
    config.noise.kernel().map_err(runtime)
}

pub fn validate(config: &ExperimentConfig, sink: &mut Sink) -> Result<String, CliError> {
    let v = check(config);
    sink.json("validate.json", &v).map_err(runtime)?;
    let mut text = v.model.to_string();
    if let Err(e) = &v.noise {
        text.push_str(&format!("FAIL noise                   {e}\n"));
    }
    if v.passed {
        Ok(text)
    } else {
        Err(CliError::Validation(text))
    }
}

pub fn orbit(config: &ExperimentConfig, sink: &mut Sink) -> Result<String, CliError> {
    let k = kernel(config)?;
    let rec = random_orbit(&config.model, &k, config.run.start_point(), config.run.orbit.steps, config.seed())
        .map_err(runtime)?;
    let rows = rec.points.iter().zip(&rec.labels).enumerate().map(|(i, (p, l))| {
        let t = if i == 0 { String::new() } else { num(rec.sequence[i - 1]) };
        vec![i.to_string(), num(p.z), num(p.x1), num(p.x2), l.as_str().to_string(), t]
    });
    sink.csv("orbit.csv", &["step", "z", "x1", "x2", "label", "t_used"], rows).map_err(runtime)?;
    #[derive(Serialize)]
    struct Summary {
        start: Point,
        requested_steps: usize,
        steps: usize,
        escaped_at: Option<usize>,
        end: Point,
    }
    let s = Summary {
        start: rec.start,
        requested_steps: config.run.orbit.steps,
        steps: rec.steps(),
        escaped_at: rec.escaped_at,
        end: *rec.points.last().expect("orbit has its start"),
    };
    sink.json("orbit.json", &s).map_err(runtime)?;
    Ok(format!("{} steps, escaped_at = {:?}", s.steps, s.escaped_at))
}

pub fn returns(config: &ExperimentConfig, sink: &mut Sink) -> Result<String, CliError> {
    let k = kernel(config)?;
    let rec = random_orbit(&config.model, &k, config.run.start_point(), config.run.orbit.steps, config.seed())
        .map_err(runtime)?;
    let rt = return_times(&rec);
    let rows = rt
        .times
        .iter()
        .zip(&rt.cumulative)
        .enumerate()
        .map(|(i, (t, c))| vec![(i + 1).to_string(), t.to_string(), c.to_string()]);
    sink.csv("returns.csv", &["k", "return_time", "cumulative"], rows).map_err(runtime)?;
    sink.json("returns.json", &rt).map_err(runtime)?;
    Ok(format!("{} returns, truncated = {}", rt.times.len(), rt.truncated))
}

pub fn recurrence(config: &ExperimentConfig, sink: &mut Sink) -> Result<String, CliError> {
    let k = kernel(config)?;
    let r = &config.run.recurrence;
    let rep = classify_recurrence(
        &config.model,
        &k,
        config.run.start_point(),
        r.n_sequences,
        r.horizon,
        r.burn_in,
        config.seed(),
    )
    .map_err(runtime)?;
    sink.json("recurrence.json", &rep).map_err(runtime)?;
    Ok(format!(
        "fraction_recurrent = {}, max_return_gap = {:?}",
        rep.fraction_recurrent, rep.max_return_gap
    ))
}

#[derive(Serialize)]
struct ComponentSummary {
    n_cells: usize,
    intersects_q: bool,
    /// `‖πP − π‖₁` of the discrete stationary law.
    stationarity_error: f64,
    iterations: usize,
    /// Largest stationarity defect over the standard observables.
    residual: f64,
    max_density: f64,
    means: Vec<f64>,
}

#[derive(Serialize)]
struct MeasuresLevel {
    resolution: usize,
    n_closed_classes: usize,
    count_l: usize,
    components: Vec<ComponentSummary>,
    overlap_matrix: Vec<Vec<f64>>,
}

#[derive(Serialize)]
struct MeasuresReport {
    epsilon: f64,
    samples_per_cell: usize,
    levels: Vec<MeasuresLevel>,
    count_l_stable: bool,
    /// `residual[k] / residual[k+1]` for the matched physical components.
    residual_decrease: Vec<Vec<f64>>,
    /// Density proxy per matched physical component.
    density: Vec<AbsContinuityReport>,
}

pub fn measures(config: &ExperimentConfig, sink: &mut Sink) -> Result<String, CliError> {
    let k = kernel(config)?;
    let m = &config.model;
    let run = &config.run.measures;
    let mut levels = Vec::new();
    let mut hists: Vec<Vec<(Histogram, f64)>> = Vec::new();
    for &n in &run.resolutions {
        let grid = Grid3::for_model(m, n).map_err(runtime)?;
        let op = build_ulam(m, &k, &grid, run.samples_per_cell, config.seed()).map_err(runtime)?;
        if run.write_operator {
            let mut buf = Vec::new();
            op.transitions.write_coo(&mut buf).map_err(runtime)?;
            sink.raw(&format!("operator_{n}.coo"), &buf).map_err(runtime)?;
        }
        let set = stationary_components(&op, &m.regions.q_box).map_err(runtime)?;
        let obs = standard_observables(m, &grid);
        let mut comps = Vec::new();
        let mut level_hists = Vec::new();
        let mut rows = Vec::new();
        for (idx, c) in set.physical().enumerate() {
            let h = c.to_histogram(&grid);
            let res = stationarity_residual(&h, m, &k, &obs, run.n_quadrature);
            comps.push(ComponentSummary {
                n_cells: c.cells.len(),
                intersects_q: c.intersects_q,
                stationarity_error: c.residual,
                iterations: c.iterations,
                residual: res.max,
                max_density: h.max_density(),
                means: component_means(c, &grid, &obs),
            });
            for (cell, mass) in c.cells.iter().zip(&c.density) {
                let p = grid.center(*cell);
                rows.push(vec![idx.to_string(), cell.to_string(), num(p.z), num(p.x1), num(p.x2), num(*mass)]);
            }
            level_hists.push((h, res.max));
        }
        // Match components across levels by mean z.
        let mut order: Vec<usize> = (0..comps.len()).collect();
        order.sort_by(|a, b| comps[*a].means[0].total_cmp(&comps[*b].means[0]));
        hists.push(order.iter().map(|i| level_hists[*i].clone()).collect());
        sink.csv(&format!("components_{n}.csv"), &["component", "cell", "z", "x1", "x2", "mass"], rows)
            .map_err(runtime)?;
        levels.push(MeasuresLevel {
            resolution: n,
            n_closed_classes: set.components.len(),
            count_l: set.count_l,
            overlap_matrix: set.overlap_matrix(),
            components: comps,
        });
    }
    let count_l_stable = levels.windows(2).all(|w| w[0].count_l == w[1].count_l);
    let (mut residual_decrease, mut density) = (Vec::new(), Vec::new());
    if count_l_stable && hists.len() >= 2 {
        for j in 0..hists[0].len() {
            residual_decrease.push(hists.windows(2).map(|w| w[0][j].1 / w[1][j].1).collect());
            let hs: Vec<Histogram> = hists.iter().map(|l| l[j].0.clone()).collect();
            density.push(abs_continuity_diagnostic(&hs));
        }
    }
    let counts: Vec<usize> = levels.iter().map(|l| l.count_l).collect();
    let report = MeasuresReport {
        epsilon: k.epsilon,
        samples_per_cell: run.samples_per_cell,
        levels,
        count_l_stable,
        residual_decrease,
        density,
    };
    sink.json("measures.json", &report).map_err(runtime)?;
    Ok(format!("count_l per resolution {counts:?}, stable = {count_l_stable}"))
}

#[derive(Serialize)]
struct BasinReport {
    resolution: usize,
    count_l: usize,
    alpha: Vec<f64>,
    unassigned: f64,
    total: f64,
    standard_errors: Vec<f64>,
    counts: Vec<usize>,
    n_sequences: usize,
    /// Least-squares weights of the Cesàro measure on the components.
    mixture_weights: Vec<f64>,
}

pub fn basin(config: &ExperimentConfig, sink: &mut Sink) -> Result<String, CliError> {
    let k = kernel(config)?;
    let m = &config.model;
    let b = &config.run.basin;
    let grid = Grid3::for_model(m, b.resolution).map_err(runtime)?;
    let op = build_ulam(m, &k, &grid, b.samples_per_cell, config.seed()).map_err(runtime)?;
    let set = stationary_components(&op, &m.regions.q_box).map_err(runtime)?;
    let phys: Vec<&Component> = set.physical().collect();
    let obs = standard_observables(m, &grid);
    let means: Vec<Vec<f64>> = phys.iter().map(|c| component_means(c, &grid, &obs)).collect();
    let x = config.run.start_point();
    let part = basin_partition(m, &k, x, &means, &obs, b.threshold, b.n_sequences, b.horizon, config.seed())
        .map_err(runtime)?;
    let mu = cesaro_measure(m, &k, x, b.horizon, b.n_sequences, &grid, config.seed()).map_err(runtime)?;
    let weights = mixture_fit(&mu, &phys).map_err(runtime)?;
    let rows = (0..phys.len()).map(|i| {
        vec![i.to_string(), num(part.alpha[i]), num(part.standard_errors[i]), num(weights[i])]
    });
    sink.csv("basin.csv", &["component", "alpha", "standard_error", "mixture_weight"], rows).map_err(runtime)?;
    let report = BasinReport {
        resolution: b.resolution,
        count_l: set.count_l,
        total: part.total(),
        alpha: part.alpha,
        unassigned: part.unassigned,
        standard_errors: part.standard_errors,
        counts: part.counts,
        n_sequences: part.n_sequences,
        mixture_weights: weights,
    };
    sink.json("basin.json", &report).map_err(runtime)?;
    Ok(format!("alpha = {:?}, unassigned = {}", report.alpha, report.unassigned))
}

#[derive(Serialize)]
struct GeometryReport {
    cones: SlopeReport,
    curve: CurveReport,
    disk: Result<DiskSample, String>,
    cones_pass: bool,
    disk_pass: bool,
}

pub fn geometry(config: &ExperimentConfig, sink: &mut Sink) -> Result<String, CliError> {
    let k = kernel(config)?;
    let m = &config.model;
    let g = &config.run.geometry;
    let cones = verify_return_cones(m, &k, &g.cone, g.n_samples, config.seed()).map_err(runtime)?;
    let y = Point::from_array(g.disk_base);
    let curve = perturbation_curve(m, y, &k, g.disk_resolution).map_err(runtime)?;
    let disk = return_disk(m, y, &k, &g.cone, g.disk_resolution, config.seed()).map_err(|e| e.to_string());
    if let Ok(d) = &disk {
        let rows = d.nodes.iter().map(|n| {
            [n.u, n.s, n.point.z, n.point.x1, n.point.x2, n.du.u0, n.du.u1, n.du.u2, n.ds.u0, n.ds.u1, n.ds.u2]
                .map(num)
                .to_vec()
        });
        let header = ["u", "s", "z", "x1", "x2", "du_z", "du_x1", "du_x2", "ds_z", "ds_x1", "ds_x2"];
        sink.csv("disk.csv", &header, rows).map_err(runtime)?;
    }
    let report = GeometryReport {
        cones_pass: cones.all_pass(),
        disk_pass: disk.as_ref().is_ok_and(|d| d.checks.all_pass()),
        cones,
        curve,
        disk,
    };
    sink.json("geometry.json", &report).map_err(runtime)?;
    let summary = format!(
        "cone pass fraction {} over {} returns; disk pass = {}",
        report.cones.pass_fraction_all, report.cones.n_returned, report.disk_pass
    );
    match &report.disk {
        Err(e) => Err(CliError::Runtime(format!("{summary}; return disk: {e}"))),
        Ok(_) => Ok(summary),
    }
}

#[derive(Serialize)]
struct BallPoint {
    start: Point,
    runs: Vec<Result<BallReport, String>>,
    /// `max K / min K` over the epsilons, when every run succeeded with a
    /// positive radius.
    k_spread: Option<f64>,
}

pub fn ball(config: &ExperimentConfig, sink: &mut Sink) -> Result<String, CliError> {
    kernel(config)?;
    let m = &config.model;
    let b = &config.run.ball;
    let mut points = Vec::new();
    let mut rows = Vec::new();
    let mut failed = 0;
    for (i, x) in b.points.iter().enumerate() {
        let x = Point::from_array(*x);
        let mut runs = Vec::new();
        for &eps in &b.epsilons {
            let run = (|| -> Result<BallReport, GeometryError> {
                let k = config.noise.kernel_at(eps)?;
                let h = initial_ball_spacing(m, &k, x)?;
                verify_ball_with(m, &k, x, b.n_sequences, h, config.seed(), &b.options)
            })()
            .map_err(|e| e.to_string());
            match &run {
                Ok(r) => rows.push(vec![
                    i.to_string(),
                    num(eps),
                    num(r.radius),
                    num(r.k_empirical),
                    r.stable.to_string(),
                    num(r.grid_spacing),
                    num(r.submersion.smallest()),
                    num(r.submersion.margin_digits),
                ]),
                Err(_) => failed += 1,
            }
            runs.push(run);
        }
        let ks: Option<Vec<f64>> = runs.iter().map(|r| r.as_ref().ok().map(|r| r.k_empirical)).collect();
        let k_spread = ks.and_then(|v| {
            let hi = v.iter().copied().fold(f64::MIN, f64::max);
            let lo = v.iter().copied().fold(f64::MAX, f64::min);
            (lo > 0.0).then(|| hi / lo)
        });
        points.push(BallPoint { start: x, runs, k_spread });
    }
    let header = ["point", "epsilon", "radius", "k_empirical", "stable", "grid_spacing", "sigma_min", "margin_digits"];
    sink.csv("ball.csv", &header, rows).map_err(runtime)?;
    sink.json("ball.json", &points).map_err(runtime)?;
    let spreads: Vec<Option<f64>> = points.iter().map(|p| p.k_spread).collect();
    if failed > 0 {
        return Err(CliError::Runtime(format!("{failed} ball runs failed; see ball.json")));
    }
    Ok(format!("K spread per point {spreads:?}"))
}
