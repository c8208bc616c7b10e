//! Command-line front end: fit, predict, simulate, replicate-study, and
//! validate subcommands over the core library.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use dpcount::config::{render_manifest, RunConfig};
use dpcount::data::load_dataset;
use dpcount::inference::{
    average_posterior_pmf, functional_bands, ConditionalPmfDraw, CovariateGrid, GridPoint,
    YCeilingPolicy,
};
use dpcount::priors::build_base_prior;
use dpcount::sampler::{run_chain, ChainConfig, ChainModel};
use dpcount::simgen::{generate_sim_dataset_seeded, run_replicate_study, StudyConfig};
use dpcount::store::{load_sample_store, persist_sample_store, sha256_hex};

#[derive(Parser, Debug)]
#[command(
    name = "dpcount",
    about = "Dirichlet-process mixture density regression for discrete outcomes",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Fit the model to a dataset and persist the posterior sample store.
    Fit(FitArgs),
    /// Re-evaluate conditional pmfs from a persisted store at new points.
    Predict(PredictArgs),
    /// Emit a simulated dataset from the benchmark mechanism.
    Simulate(SimulateArgs),
    /// Run the replicate comparison study of the three count families.
    ReplicateStudy(StudyArgs),
    /// Check a persisted store against the invariant suite.
    Validate(ValidateArgs),
}

#[derive(Args, Debug)]
pub struct FitArgs {
    /// TOML run configuration; flags below override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub response: Option<String>,
    #[arg(long)]
    pub offset: Option<String>,
    /// Comma-separated binary covariate columns.
    #[arg(long)]
    pub binary: Option<String>,
    /// Comma-separated continuous covariate columns.
    #[arg(long)]
    pub continuous: Option<String>,
    #[arg(long)]
    pub family: Option<String>,
    /// Sampler mode: truncated | slice.
    #[arg(long)]
    pub mode: Option<String>,
    /// Truncation level for the truncated sampler.
    #[arg(long)]
    pub trunc: Option<usize>,
    #[arg(long)]
    pub iters: Option<u64>,
    #[arg(long)]
    pub burn: Option<u64>,
    #[arg(long)]
    pub thin: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Grid per continuous covariate: "min:max:count[,min:max:count...]".
    #[arg(long)]
    pub grid: Option<String>,
    /// Evaluation offset for the grid (default: mean of data offsets).
    #[arg(long = "offset-eval")]
    pub offset_eval: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    /// Persisted sample store from a previous fit.
    #[arg(long)]
    pub store: PathBuf,
    /// Evaluation points "v1,v2,...;v1,v2,..." in layout order
    /// (binary covariates first, then continuous).
    #[arg(long)]
    pub points: String,
    /// Evaluation offset.
    #[arg(long = "offset-eval")]
    pub offset_eval: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[arg(long, default_value_t = 500)]
    pub n: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Output CSV path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct StudyArgs {
    #[arg(long, default_value_t = 5)]
    pub replicates: usize,
    #[arg(long, default_value_t = 500)]
    pub n: usize,
    #[arg(long, default_value_t = 8000)]
    pub iters: u64,
    #[arg(long, default_value_t = 4000)]
    pub burn: u64,
    #[arg(long, default_value_t = 4)]
    pub thin: u64,
    #[arg(long, default_value_t = 50)]
    pub trunc: usize,
    #[arg(long, default_value_t = 20_240_501)]
    pub seed: u64,
    /// Monte Carlo size for the ground-truth conditionals.
    #[arg(long = "truth-mc", default_value_t = 1_000_000)]
    pub truth_mc: usize,
    /// Full 20-replicate, 40k-iteration setup.
    #[arg(long, default_value_t = false)]
    pub paper_scale: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ValidateArgs {
    #[arg(long)]
    pub store: PathBuf,
}

/// Run the CLI; returns the process exit code.
pub fn run(cli: Cli) -> anyhow::Result<i32> {
    match cli.command {
        Command::Fit(args) => cmd_fit(args),
        Command::Predict(args) => cmd_predict(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::ReplicateStudy(args) => cmd_study(args),
        Command::Validate(args) => cmd_validate(args),
    }
}

fn parse_list(s: &str) -> Vec<String> {
    s.split(',')
        .map(|t| t.trim().to_string())
        .filter(|t| !t.is_empty())
        .collect()
}

fn merge_fit_config(args: &FitArgs) -> anyhow::Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(v) = &args.data {
        cfg.data.path = Some(v.clone());
    }
    if let Some(v) = &args.response {
        cfg.data.response = Some(v.clone());
    }
    if let Some(v) = &args.offset {
        cfg.data.offset = Some(v.clone());
    }
    if let Some(v) = &args.binary {
        cfg.data.binary = parse_list(v);
    }
    if let Some(v) = &args.continuous {
        cfg.data.continuous = parse_list(v);
    }
    if let Some(v) = &args.family {
        cfg.model.family = v.clone();
    }
    if let Some(v) = &args.mode {
        cfg.model.mode = v.clone();
    }
    if let Some(v) = args.trunc {
        cfg.model.truncation = v;
    }
    if let Some(v) = args.iters {
        cfg.mcmc.iterations = v;
    }
    if let Some(v) = args.burn {
        cfg.mcmc.burnin = v;
    }
    if let Some(v) = args.thin {
        cfg.mcmc.thin = v;
    }
    if let Some(v) = args.seed {
        cfg.mcmc.seed = v;
    }
    if let Some(g) = &args.grid {
        cfg.grid.continuous = g
            .split(',')
            .map(|spec| {
                let parts: Vec<f64> = spec
                    .split(':')
                    .map(|t| t.parse::<f64>())
                    .collect::<Result<_, _>>()
                    .with_context(|| format!("bad grid spec '{spec}'"))?;
                if parts.len() != 3 {
                    bail!("grid spec '{spec}' must be min:max:count");
                }
                Ok([parts[0], parts[1], parts[2]])
            })
            .collect::<anyhow::Result<_>>()?;
    }
    if let Some(v) = args.offset_eval {
        cfg.grid.offset = Some(v);
    }
    if let Some(v) = &args.out {
        cfg.output.dir = v.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_fit(args: FitArgs) -> anyhow::Result<i32> {
    let cfg = merge_fit_config(&args)?;
    let data_path = cfg
        .data
        .path
        .clone()
        .context("a dataset path is required (data.path or --data)")?;
    let schema = cfg.schema()?;
    let dataset = load_dataset(&data_path, &schema)?;
    let family = cfg.family()?;
    let prior = cfg.apply_hyper(build_base_prior(&dataset, family)?);
    let model = ChainModel::new(&dataset, prior, cfg.mode()?)?;
    let grid = cfg.build_grid(&dataset)?;
    let chain_cfg = ChainConfig {
        iterations: cfg.mcmc.iterations,
        burnin: cfg.mcmc.burnin,
        thin: cfg.mcmc.thin,
        seed: cfg.mcmc.seed,
    };
    let out = run_chain(&model, &chain_cfg, Some(&grid))?;

    let dir = &cfg.output.dir;
    std::fs::create_dir_all(dir)?;
    persist_sample_store(&out.store, &dir.join("samples.dpst"))?;
    let raw = std::fs::read(&data_path)?;
    std::fs::write(
        dir.join("manifest.txt"),
        render_manifest(&cfg, &sha256_hex(&raw), dataset.n()),
    )?;
    if let Some(draws) = &out.grid_draws {
        write_grid_outputs(dir, &grid, draws)?;
    }
    for w in &out.warnings {
        eprintln!("warning: {w}");
    }
    println!(
        "fit complete: {} retained draws, store at {}",
        out.store.draws.len(),
        dir.join("samples.dpst").display()
    );
    Ok(0)
}

fn write_grid_outputs(
    dir: &Path,
    grid: &CovariateGrid,
    draws: &[ConditionalPmfDraw],
) -> anyhow::Result<()> {
    let avg = average_posterior_pmf(draws, 0.95)?;
    let mut pmf_out = String::from("point\tx\ty\tmean_prob\tband_lo\tband_hi\n");
    for (c, point) in grid.points.iter().enumerate() {
        let label = point_label(point);
        for y in 0..avg.mean[c].len() {
            pmf_out.push_str(&format!(
                "{c}\t{label}\t{y}\t{:.6e}\t{:.6e}\t{:.6e}\n",
                avg.mean[c][y], avg.band_lo[c][y], avg.band_hi[c][y]
            ));
        }
    }
    std::fs::write(dir.join("grid_pmf.tsv"), pmf_out)?;

    let bands = functional_bands(draws, 0.90)?;
    let mut f_out =
        String::from("point\tx\tmean\tmean_lo\tmean_hi\tq25\tq25_lo\tq25_hi\tq75\tq75_lo\tq75_hi\n");
    for (c, point) in grid.points.iter().enumerate() {
        let label = point_label(point);
        let [m, q25, q75] = bands[c];
        f_out.push_str(&format!(
            "{c}\t{label}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\n",
            m.mean, m.lo, m.hi, q25.mean, q25.lo, q25.hi, q75.mean, q75.lo, q75.hi
        ));
    }
    std::fs::write(dir.join("functionals.tsv"), f_out)?;
    Ok(())
}

fn point_label(point: &GridPoint) -> String {
    let mut parts: Vec<String> = point.x_binary.iter().map(|b| b.to_string()).collect();
    parts.extend(point.x_continuous.iter().map(|x| format!("{x:.4}")));
    parts.join(",")
}

fn cmd_predict(args: PredictArgs) -> anyhow::Result<i32> {
    let store = load_sample_store(&args.store)?;
    let layout = store.meta.layout();
    let mut points = Vec::new();
    for chunk in args.points.split(';') {
        let vals: Vec<f64> = chunk
            .split(',')
            .map(|t| t.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .with_context(|| format!("bad point '{chunk}'"))?;
        if vals.len() != layout.p_binary + layout.p_continuous {
            bail!(
                "point '{chunk}' has {} values, layout needs {} binary + {} continuous",
                vals.len(),
                layout.p_binary,
                layout.p_continuous
            );
        }
        let (bin, cont) = vals.split_at(layout.p_binary);
        points.push(GridPoint {
            x_binary: bin.iter().map(|&v| v as u8).collect(),
            x_continuous: cont.to_vec(),
        });
    }
    let grid = CovariateGrid {
        points,
        offset: args.offset_eval,
        ceiling: YCeilingPolicy::default(),
    };
    grid.validate()?;

    let mut draws = Vec::with_capacity(store.draws.len());
    for rec in &store.draws {
        let snap = rec.snapshot(layout)?;
        draws.push(dpcount::inference::conditional_pmf_draw(
            &snap, &grid, rec.sweep,
        )?);
    }
    std::fs::create_dir_all(&args.out)?;
    write_grid_outputs(&args.out, &grid, &draws)?;
    println!(
        "predict complete: {} draws evaluated at {} points",
        draws.len(),
        grid.points.len()
    );
    Ok(0)
}

fn cmd_simulate(args: SimulateArgs) -> anyhow::Result<i32> {
    let ds = generate_sim_dataset_seeded(args.n, args.seed);
    let mut out = String::from("y,H,x\n");
    for i in 0..ds.n() {
        out.push_str(&format!(
            "{},{:.6},{:.6}\n",
            ds.y[i], ds.offsets[i], ds.x_continuous[0][i]
        ));
    }
    std::fs::write(&args.out, out)?;
    println!("simulated {} observations to {}", args.n, args.out.display());
    Ok(0)
}

fn cmd_study(args: StudyArgs) -> anyhow::Result<i32> {
    let mut cfg = StudyConfig {
        replicates: args.replicates,
        n: args.n,
        iterations: args.iters,
        burnin: args.burn,
        thin: args.thin,
        truncation: args.trunc,
        seed: args.seed,
        truth_mc: args.truth_mc,
        ..StudyConfig::default()
    };
    if args.paper_scale {
        cfg = cfg.paper_scale();
    }
    let report = run_replicate_study(&cfg)?;
    std::fs::create_dir_all(&args.out)?;
    std::fs::write(args.out.join("overall.tsv"), report.render_overall_table())?;
    std::fs::write(args.out.join("bands.tsv"), report.render_band_table())?;
    std::fs::write(
        args.out.join("replicates.tsv"),
        report.render_replicate_table(),
    )?;
    std::fs::write(args.out.join("curves.tsv"), report.render_curves())?;
    std::fs::write(
        args.out.join("study_manifest.txt"),
        format!(
            "{}\nfailures = {}\n",
            report.config_summary,
            report.failures.len()
        ),
    )?;
    print!("{}", report.render_overall_table());
    if !report.failures.is_empty() {
        eprintln!("{} fit(s) failed and were excluded:", report.failures.len());
        for f in &report.failures {
            eprintln!("  {f}");
        }
    }
    println!("study tables written to {}", args.out.display());
    Ok(0)
}

fn cmd_validate(args: ValidateArgs) -> anyhow::Result<i32> {
    let store = load_sample_store(&args.store)?;
    let layout = store.meta.layout();
    let mut failures = Vec::new();

    if store.draws.is_empty() {
        failures.push("store holds no draws".to_string());
    }
    for (k, rec) in store.draws.iter().enumerate() {
        if !(rec.alpha > 0.0) {
            failures.push(format!("draw {k}: alpha {} not positive", rec.alpha));
            break;
        }
        let total: f64 = rec.clusters.iter().map(|c| c.weight).sum();
        if !(total <= 1.0 + 1e-9) || rec.clusters.iter().any(|c| c.weight < 0.0) {
            failures.push(format!("draw {k}: weights invalid (sum {total})"));
            break;
        }
        match rec.snapshot(layout) {
            Ok(snap) => {
                // Probe pmf normalization at each atom's own center.
                if k == 0 || k + 1 == store.draws.len() {
                    let probe = probe_points(&snap, layout.p_binary);
                    for point in probe {
                        let (pmf, flagged) = dpcount::inference::conditional_pmf(
                            &snap,
                            &point,
                            1.0,
                            YCeilingPolicy::default(),
                        )?;
                        let mass: f64 = pmf.iter().sum();
                        if !flagged && (mass - 1.0).abs() > 1e-6 {
                            failures.push(format!(
                                "draw {k}: conditional pmf mass {mass} at probe point"
                            ));
                        }
                    }
                }
            }
            Err(e) => {
                failures.push(format!("draw {k}: invalid atom ({e})"));
                break;
            }
        }
    }

    if failures.is_empty() {
        println!(
            "store ok: {} draws, family {}, layout {}+{}",
            store.draws.len(),
            store.meta.family.name(),
            store.meta.p_binary,
            store.meta.p_continuous
        );
        Ok(0)
    } else {
        for f in &failures {
            eprintln!("validate: {f}");
        }
        Ok(1)
    }
}

fn probe_points(
    snap: &dpcount::inference::MixtureSnapshot,
    p_binary: usize,
) -> Vec<GridPoint> {
    let mut points = Vec::new();
    for atom in snap.atoms.iter().take(3) {
        let layout = atom.layout();
        let mu = atom.mu_star();
        let x_continuous: Vec<f64> = (0..layout.p_continuous)
            .map(|j| mu[layout.continuous_coord(j)])
            .collect();
        points.push(GridPoint {
            x_binary: vec![0; p_binary],
            x_continuous,
        });
    }
    points
}
