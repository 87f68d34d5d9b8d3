use std::fs::File;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use unfitted::assembly::Symmetry;
use unfitted::study::{
    condition_numbers, condition_slope, read_csv, render_table, run_convergence, verify_quadrature,
    write_csv_file, ConvergenceReport, DiscretizationOptions, ExperimentConfig,
};

#[derive(Parser)]
#[command(
    name = "unfitted",
    version,
    about = "Unfitted finite elements by direct extension"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convergence study for a built-in example.
    Run(RunArgs),
    /// Measure and perimeter/surface of the cut domain against subdivision depth.
    VerifyQuadrature {
        #[arg(long, default_value_t = 1)]
        example: u32,
        /// Depth range `a..b` (inclusive) or a comma list.
        #[arg(long, default_value = "2..7")]
        depths: String,
        #[arg(long, default_value_t = 40)]
        n: usize,
    },
    /// Condition numbers and their log-log slope against h.
    Cond {
        #[arg(long, default_value_t = 1)]
        example: u32,
        #[arg(long, default_value_t = 1)]
        degree: usize,
        #[arg(long, value_delimiter = ',', default_values_t = [10, 20, 40])]
        grids: Vec<usize>,
        #[arg(long)]
        contrast: Option<f64>,
    },
    /// Render a results CSV as an aligned table.
    Table { path: PathBuf },
}

#[derive(Args)]
struct RunArgs {
    /// JSON file with ExperimentConfig fields; command-line flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    example: Option<u32>,
    /// Outer coefficient b of Example 4.
    #[arg(long)]
    contrast: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    degrees: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    grids: Option<Vec<usize>>,
    #[arg(long)]
    penalty: Option<f64>,
    #[arg(long)]
    nonsym: bool,
    /// Report κ(A) for every row.
    #[arg(long)]
    cond: bool,
    #[arg(long)]
    quad_depth: Option<usize>,
    /// Keep interface nodes on the linearised zero set.
    #[arg(long)]
    no_projection: bool,
    /// Denser default grids (2D: adds n = 80; 3D: adds n = 12).
    #[arg(long)]
    extended: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Grid sizes used when none are given.
fn default_grids(example: u32, extended: bool) -> Vec<usize> {
    match (example, extended) {
        (3 | 6, false) => vec![4, 8, 16],
        (3 | 6, true) => vec![4, 8, 12, 16],
        (2, _) => vec![24, 32, 48],
        (5, _) => vec![40, 48, 64],
        (_, false) => vec![10, 20, 40],
        (_, true) => vec![10, 20, 40, 80],
    }
}

fn parse_depths(s: &str) -> Result<Vec<usize>> {
    if let Some((a, b)) = s.split_once("..") {
        let (a, b): (usize, usize) = (a.trim().parse()?, b.trim().parse()?);
        if a > b {
            bail!("empty depth range {s}");
        }
        return Ok((a..=b).collect());
    }
    s.split(',').map(|t| Ok(t.trim().parse()?)).collect()
}

fn build_config(args: &RunArgs) -> Result<ExperimentConfig> {
    let mut config = match &args.config {
        Some(path) => {
            let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
            serde_json::from_reader(file).with_context(|| format!("parsing {}", path.display()))?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(e) = args.example {
        config.example = e;
    }
    if args.config.is_none() {
        config.grid_sizes = default_grids(config.example, args.extended);
    }
    if args.contrast.is_some() {
        config.contrast = args.contrast;
    }
    if let Some(d) = &args.degrees {
        config.degrees = d.clone();
    }
    if let Some(g) = &args.grids {
        config.grid_sizes = g.clone();
    }
    if args.penalty.is_some() {
        config.penalty = args.penalty;
    }
    if args.nonsym {
        config.symmetry = Symmetry::NonSym;
    }
    if args.cond {
        config.report_condition = true;
    }
    if args.quad_depth.is_some() {
        config.quad_depth = args.quad_depth;
    }
    if args.no_projection {
        config.project_surface = false;
    }
    if let Some(out) = &args.out {
        config.output = Some(out.display().to_string());
    }
    config.validate()?;
    Ok(config)
}

fn print_report(report: &ConvergenceReport) {
    print!("{}", render_table(&report.rows));
    for f in &report.fits {
        let show = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.2}"));
        println!(
            "m={} fitted order: L2 {}, energy {}",
            f.m,
            show(f.l2),
            show(f.energy)
        );
    }
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run(args) => {
            let config = build_config(&args)?;
            let report = run_convergence(&config)?;
            print_report(&report);
            if let Some(out) = &config.output {
                write_csv_file(&report.rows, out.as_ref())?;
            }
        }
        Command::VerifyQuadrature { example, depths, n } => {
            let problem = ExperimentConfig {
                example,
                ..Default::default()
            }
            .problem()?;
            let sci = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.3e}"));
            println!(
                "{:>5}  {:>18}  {:>10}  {:>18}  {:>10}",
                "depth", "measure", "rel_err", "surface", "rel_err"
            );
            for c in verify_quadrature(&problem, n, &parse_depths(&depths)?)? {
                println!(
                    "{:>5}  {:>18.12}  {:>10}  {:>18.12}  {:>10}",
                    c.depth,
                    c.measure,
                    sci(c.measure_error),
                    c.surface,
                    sci(c.surface_error)
                );
            }
        }
        Command::Cond {
            example,
            degree,
            grids,
            contrast,
        } => {
            let config = ExperimentConfig {
                example,
                contrast,
                degrees: vec![degree],
                ..Default::default()
            };
            config.validate()?;
            let problem = config.problem()?;
            let rows = condition_numbers(
                &problem,
                degree,
                &grids,
                &DiscretizationOptions::default(),
                1e-6,
            )?;
            println!(
                "{:>5}  {:>10}  {:>7}  {:>10}  {:>10}  {:>10}",
                "n", "h", "dofs", "lambda_min", "lambda_max", "kappa"
            );
            for r in &rows {
                println!(
                    "{:>5}  {:>10.4e}  {:>7}  {:>10.3e}  {:>10.3e}  {:>10.3e}",
                    r.n, r.h, r.dofs, r.lambda_min, r.lambda_max, r.kappa
                );
            }
            if let Some(s) = condition_slope(&rows) {
                println!("slope of log kappa vs log h: {s:.2}");
            }
        }
        Command::Table { path } => {
            let file = File::open(&path).with_context(|| format!("opening {}", path.display()))?;
            print!("{}", render_table(&read_csv(file)?));
        }
    }
    Ok(())
}
