use std::path::Path;

use clap::error::ErrorKind;
use clap::CommandFactory;

use scos::eval::{monte_carlo, MetricsReport};
use scos::hsi::{self, LabelGrid, PALETTE};
use scos::ident::check_identifiability;
use scos::io::{self, fmt_f64, write_csv, write_matrix};
use scos::select::{estimate_dims, phi_metrics, select_num_clusters, DimsRule, SelectConfig};
use scos::solver::{fit, ClusterModel, FitTrace, SolverConfig};
use scos::subspace::{truncated_basis, ViewBasis, DEFAULT_RANK_TOL};
use scos::synth::{generate, ScenarioConfig};
use scos::Result;

use crate::config::RunConfig;
use crate::{
    Cli, Command, FitArgs, GenCubeArgs, GenScenarioArgs, GlobalArgs, HsiArgs, IdentCheckArgs,
    Scale, SelectOrderArgs, SynthBenchArgs,
};

/// Prints a usage error and exits with status 2.
fn usage(msg: impl std::fmt::Display) -> ! {
    Cli::command().error(ErrorKind::ValueValidation, msg).exit()
}

pub fn run(cli: &Cli) -> Result<()> {
    let mut cfg = RunConfig::load(cli.global.config.as_deref())?;
    if let Some(seed) = cli.global.seed {
        cfg.solver.seed = seed;
    }
    match &cli.command {
        Command::SynthBench(a) => synth_bench(&cli.global, cfg, a),
        Command::Fit(a) => cmd_fit(&cli.global, cfg, a),
        Command::SelectOrder(a) => select_order(cfg, a),
        Command::IdentCheck(a) => ident_check(a),
        Command::Hsi(a) => cmd_hsi(&cli.global, cfg, a),
        Command::GenScenario(a) => gen_scenario(&cli.global, cfg, a),
        Command::GenCube(a) => gen_cube(&cli.global, a),
    }
}

fn validated(solver: &SolverConfig) -> SolverConfig {
    if let Err(e) = solver.validate() {
        usage(e);
    }
    solver.clone()
}

fn parse_sinr_range(spec: &str) -> std::result::Result<Vec<f64>, String> {
    let num = |s: &str| s.trim().parse::<f64>().map_err(|_| format!("bad number {s:?}"));
    if spec.contains(':') {
        let parts: Vec<&str> = spec.split(':').collect();
        let [start, stop, step] = parts[..] else {
            return Err(format!("expected start:stop:step, got {spec:?}"));
        };
        let (start, stop, step) = (num(start)?, num(stop)?, num(step)?);
        if step == 0.0 || !step.is_finite() || (stop - start) * step < 0.0 {
            return Err(format!("step {step} does not lead from {start} to {stop}"));
        }
        let n = ((stop - start) / step + 1e-9).floor() as usize;
        Ok((0..=n).map(|i| start + i as f64 * step).collect())
    } else {
        spec.split(',').map(num).collect()
    }
}

fn preset(scale: Scale, sinr_db: f64, inr: f64, seed: u64) -> ScenarioConfig {
    match scale {
        Scale::Paper => ScenarioConfig::paper(sinr_db, inr, seed),
        Scale::Desk => ScenarioConfig::desk(sinr_db, inr, seed),
    }
}

fn synth_bench(global: &GlobalArgs, mut cfg: RunConfig, a: &SynthBenchArgs) -> Result<()> {
    let sinrs = parse_sinr_range(&a.sinr_db_range).unwrap_or_else(|e| usage(e));
    if let Some(f) = a.formulation {
        cfg.solver.formulation = f.into();
    }
    let solver = validated(&cfg.solver);
    let seed = solver.seed;
    let mut grid = Vec::new();
    for &inr in &a.inr_list {
        for &sinr in &sinrs {
            let point = match &cfg.scenario {
                Some(base) => ScenarioConfig {
                    sinr_db: sinr,
                    inr,
                    ..base.clone()
                },
                None => preset(a.scale, sinr, inr, seed),
            };
            if let Err(e) = point.validate() {
                usage(e);
            }
            grid.push(point);
        }
    }
    cfg.record(&a.out_dir)?;
    let table = monte_carlo(&grid, a.runs as usize, seed, &solver)?;
    table.write_csvs(&a.out_dir, global.timing)?;
    for row in &table.aggregate {
        println!(
            "inr={} sinr_db={} acc={:.4}±{:.4} ari={:.4} nmi={:.4}",
            fmt_f64(row.inr),
            fmt_f64(row.sinr_db),
            row.acc.0,
            row.acc.1,
            row.ari.0,
            row.nmi.0
        );
    }
    Ok(())
}

fn load_view_bases(dir: &Path) -> Result<Vec<ViewBasis>> {
    io::load_views(dir)?
        .iter()
        .map(|x| truncated_basis(x, DEFAULT_RANK_TOL).map(|(b, _)| b))
        .collect()
}

fn write_fit(
    dir: &Path,
    views: &[ViewBasis],
    model: &ClusterModel,
    trace: &FitTrace,
    timing: bool,
) -> Result<f64> {
    std::fs::create_dir_all(dir)?;
    let quality = phi_metrics(views, model)?;
    let rows: Vec<Vec<String>> = model
        .labels()
        .iter()
        .zip(&quality.phi_per_view)
        .enumerate()
        .map(|(k, (l, phi))| vec![k.to_string(), (l + 1).to_string(), fmt_f64(*phi)])
        .collect();
    write_csv(&dir.join("assignments.csv"), &["view_index", "cluster", "phi_k"], &rows)?;
    for (r, b) in model.subspaces().iter().enumerate() {
        write_matrix(&dir.join(format!("basis_{:02}.mat", r + 1)), b.data())?;
    }
    write_matrix(&dir.join("assign.mat"), &model.assign)?;
    trace.write_csv(&dir.join("trace.csv"), timing)?;
    Ok(quality.phi_bar)
}

fn broadcast_dims(dims: &[usize], r: usize) -> Vec<usize> {
    match dims {
        [l] => vec![*l; r],
        _ if dims.len() == r => dims.to_vec(),
        _ => usage(format!("--dims needs 1 or {r} values, got {}", dims.len())),
    }
}

fn cmd_fit(global: &GlobalArgs, mut cfg: RunConfig, a: &FitArgs) -> Result<()> {
    if a.clusters == 0 {
        usage("--clusters must be positive");
    }
    if let Some(f) = a.formulation {
        cfg.solver.formulation = f.into();
    }
    let solver = validated(&cfg.solver);
    let views = load_view_bases(&a.views)?;
    let dims = if a.dims.is_empty() {
        let min_m = views.iter().map(|v| v.n_cols()).min().unwrap_or(1);
        vec![min_m; a.clusters]
    } else {
        broadcast_dims(&a.dims, a.clusters)
    };
    cfg.record(&a.out)?;
    let (mut model, mut trace) = fit(&views, a.clusters, &dims, &solver, None)?;
    if a.dims_auto {
        let est = estimate_dims(&views, &model.labels(), a.criterion.into())?;
        let rows: Vec<Vec<String>> = est
            .per_cluster_dim
            .iter()
            .zip(&est.degenerate)
            .enumerate()
            .map(|(r, (d, deg))| vec![(r + 1).to_string(), d.to_string(), deg.to_string()])
            .collect();
        std::fs::create_dir_all(&a.out)?;
        write_csv(&a.out.join("dims.csv"), &["cluster", "dim", "degenerate"], &rows)?;
        std::fs::write(a.out.join("spectra.csv"), est.spectra_csv())?;
        (model, trace) = fit(&views, a.clusters, &est.per_cluster_dim, &solver, None)?;
        println!("estimated dims: {:?}", est.per_cluster_dim);
    }
    let phi_bar = write_fit(&a.out, &views, &model, &trace, global.timing)?;
    println!(
        "clusters={} phi_bar={:.6e} outer_iters={} converged={}",
        a.clusters,
        phi_bar,
        trace.rows.len(),
        trace.converged
    );
    Ok(())
}

fn select_order(mut cfg: RunConfig, a: &SelectOrderArgs) -> Result<()> {
    if let Some(f) = a.formulation {
        cfg.solver.formulation = f.into();
    }
    if let Some(r) = a.r_max {
        cfg.select.r_max = r;
    }
    if let Some(t) = a.tau {
        cfg.select.tau = t;
    }
    if cfg.select.r_max < 2 {
        usage("--r-max must be at least 2");
    }
    if !(cfg.select.tau > 0.0 && cfg.select.tau < 1.0) {
        usage("--tau must lie in (0, 1)");
    }
    let solver = validated(&cfg.solver);
    let views = load_view_bases(&a.views)?;
    cfg.record(&a.out)?;
    let select = SelectConfig {
        solver,
        tau: cfg.select.tau,
        warm_start: true,
    };
    let sel = select_num_clusters(&views, cfg.select.r_max, &DimsRule::Uniform(a.dims), &select)?;
    std::fs::write(a.out.join("phi_curve.csv"), sel.curve_csv())?;
    let labels: Vec<Vec<String>> = sel.models[sel.n_clusters - 1]
        .labels()
        .iter()
        .enumerate()
        .map(|(k, l)| vec![k.to_string(), (l + 1).to_string()])
        .collect();
    write_csv(&a.out.join("assignments.csv"), &["view_index", "cluster"], &labels)?;
    for (i, v) in sel.curve.iter().enumerate() {
        println!("R={} phi_bar={:.6e}", i + 1, v);
    }
    println!("R*={}", sel.n_clusters);
    Ok(())
}

fn ident_check(a: &IdentCheckArgs) -> Result<()> {
    let scenario = io::load_scenario(&a.scenario)?;
    let report = check_identifiability(&scenario)?;
    print!("{}", report.to_text());
    if let Some(out) = &a.out {
        std::fs::create_dir_all(out)?;
        std::fs::write(out.join("ident.csv"), report.to_csv())?;
    }
    Ok(())
}

fn metrics_rows(m: &MetricsReport, timing: bool) -> (Vec<&'static str>, Vec<Vec<String>>) {
    let mut header = vec!["oa", "ari", "nmi", "apr"];
    let mut row = vec![fmt_f64(m.acc), fmt_f64(m.ari), fmt_f64(m.nmi), fmt_f64(m.apr)];
    if timing {
        header.push("wall_s");
        row.push(format!("{:.3}", m.wall_seconds));
    }
    (header, vec![row])
}

fn cmd_hsi(global: &GlobalArgs, mut cfg: RunConfig, a: &HsiArgs) -> Result<()> {
    if a.clusters == 0 {
        usage("--clusters must be positive");
    }
    if let Some(s) = a.s_r {
        cfg.hsi.s_r = s;
    }
    if let Some(s) = a.s_a {
        cfg.hsi.s_a = s;
    }
    cfg.solver.formulation = scos::solver::Formulation::AugLagPsi;
    let solver = validated(&cfg.solver);
    let dims = if a.dims.is_empty() {
        vec![1; a.clusters]
    } else {
        broadcast_dims(&a.dims, a.clusters)
    };
    let cube = hsi::load_cube(&a.cube)?;
    cfg.record(&a.out)?;
    let started = std::time::Instant::now();
    let result = hsi::fit_hsi(&cube, a.clusters, &dims, cfg.hsi.s_r, cfg.hsi.s_a, &solver)?;
    let wall = started.elapsed().as_secs_f64();
    result.grid.write_csv(&a.out.join("labels.csv"))?;
    hsi::write_map(&a.out.join("map.ppm"), &result.grid, &PALETTE)?;
    result.trace.write_csv(&a.out.join("trace.csv"), global.timing)?;
    if let Some(truth) = &cube.labels {
        let m = hsi::score_grid(&result.grid, truth, wall)?;
        let (header, rows) = metrics_rows(&m, global.timing);
        write_csv(&a.out.join("metrics.csv"), &header, &rows)?;
        let truth_grid = LabelGrid {
            height: cube.height,
            width: cube.width,
            labels: truth.clone(),
        };
        hsi::write_map(&a.out.join("truth.ppm"), &truth_grid, &PALETTE)?;
        println!("OA={:.4} ARI={:.4} NMI={:.4} APR={:.4}", m.acc, m.ari, m.nmi, m.apr);
    }
    println!("pixels={} clusters={}", cube.n_pixels(), a.clusters);
    Ok(())
}

fn gen_scenario(_global: &GlobalArgs, cfg: RunConfig, a: &GenScenarioArgs) -> Result<()> {
    let seed = cfg.solver.seed;
    let config = match &cfg.scenario {
        Some(base) => ScenarioConfig {
            seed,
            ..base.clone()
        },
        None => preset(a.scale, a.sinr_db, a.inr, seed),
    };
    if let Err(e) = config.validate() {
        usage(e);
    }
    let scenario = generate(&config)?;
    io::save_scenario(&a.out, &scenario)?;
    println!(
        "wrote {} views ({} clusters) to {}",
        scenario.views.len(),
        config.n_clusters,
        a.out.display()
    );
    Ok(())
}

fn gen_cube(global: &GlobalArgs, a: &GenCubeArgs) -> Result<()> {
    if a.classes == 0 || a.classes > a.width {
        usage("--classes must lie in [1, width]");
    }
    let map = hsi::stripe_map(a.height, a.width, a.classes);
    let seed = global.seed.unwrap_or(0);
    let s = hsi::synth_cube(&map, a.endmembers, a.bands, a.snr_db, seed)?;
    if let Some(dir) = a.out.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    hsi::save_cube(&a.out, &s.cube)?;
    println!("wrote {}x{}x{} cube to {}", a.height, a.width, a.bands, a.out.display());
    Ok(())
}
