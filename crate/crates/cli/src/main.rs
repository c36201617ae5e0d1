//! Command-line front end: coverage simulation, estimation from table
//! and assignment files, enumeration-based self-verification, and
//! variance-theory diagnostics.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use strip_rct::design::{population_contrast, Contrast, DesignDims};
use strip_rct::error::Error;
use strip_rct::estimators::{confidence_interval, conservative_variance, estimate_contrast};
use strip_rct::io::{assignment_from_json, load_table, write_matrix_csv};
use strip_rct::oracle::{exact_block_moments, exact_estimator_moments};
use strip_rct::randomizer::{observe, SeedSpec};
use strip_rct::sim::{
    render_table, run_coverage, to_json, write_csv, CoverageReport, SimScenario,
};
use strip_rct::variance::{
    conservative_variance_bias, covariance_model, observed_covariance, sampling_variance,
    UEstimatorMatrix,
};

#[derive(Parser)]
#[command(
    name = "strip-rct",
    version,
    about = "Randomization-based analysis of strip-plot experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum SimFormat {
    Table,
    Csv,
    Json,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum EstimateFormat {
    Text,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Run the Monte Carlo coverage study on the built-in outcome model.
    Simulate {
        /// Trend exponents to simulate (repeat or comma-separate).
        #[arg(long = "h", value_delimiter = ',', default_values_t = vec![0.0, 0.5])]
        h: Vec<f64>,
        /// Block counts to simulate (repeat or comma-separate).
        #[arg(long = "B", value_delimiter = ',', default_values_t = vec![20, 40, 60])]
        blocks: Vec<usize>,
        /// Monte Carlo replicates per scenario.
        #[arg(long, default_value_t = 10_000)]
        reps: usize,
        /// Confidence level of the intervals.
        #[arg(long, default_value_t = 0.95)]
        level: f64,
        /// Base seed; scenarios and replicates derive substreams from it.
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = SimFormat::Table)]
        format: SimFormat,
        /// Redraw the outcome noise every replicate instead of fixing
        /// one table per scenario.
        #[arg(long)]
        redraw_outcomes: bool,
    },
    /// Estimate a contrast from a table file and an assignment file.
    Estimate {
        /// Potential-outcome table (.json or .csv).
        #[arg(long)]
        table: PathBuf,
        /// Assignment JSON with 1-based rowPerm / colPerm.
        #[arg(long)]
        assignment: PathBuf,
        /// Comma-separated contrast coefficients in treatment order.
        #[arg(long, allow_hyphen_values = true)]
        contrast: String,
        #[arg(long, default_value_t = 0.95)]
        level: f64,
        #[arg(long, value_enum, default_value_t = EstimateFormat::Text)]
        format: EstimateFormat,
    },
    /// Cross-check the closed-form formulas against exhaustive
    /// enumeration on small random designs.
    Verify {
        #[arg(long, default_value_t = 50)]
        trials: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Variance-theory diagnostics: estimator matrices and
    /// observed-outcome covariance blocks.
    Theory {
        /// Print the pooled-estimator matrix of this order.
        #[arg(long = "B")]
        blocks: Option<usize>,
        /// Print per-block observed covariances of this table.
        #[arg(long)]
        table: Option<PathBuf>,
        /// With --table: also report this contrast's sampling variance.
        #[arg(long, allow_hyphen_values = true)]
        contrast: Option<String>,
        /// Dump the matrices as headered CSV to this path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(if err.is_validation() { 1 } else { 2 })
        }
    }
}

fn run(command: Command) -> Result<(), Error> {
    match command {
        Command::Simulate {
            h,
            blocks,
            reps,
            level,
            seed,
            out,
            format,
            redraw_outcomes,
        } => simulate(&h, &blocks, reps, level, seed, out.as_deref(), format, redraw_outcomes),
        Command::Estimate {
            table,
            assignment,
            contrast,
            level,
            format,
        } => estimate(&table, &assignment, &contrast, level, format),
        Command::Verify { trials, seed } => verify(trials, seed),
        Command::Theory {
            blocks,
            table,
            contrast,
            out,
        } => theory(blocks, table.as_deref(), contrast.as_deref(), out.as_deref()),
    }
}

#[allow(clippy::too_many_arguments)]
fn simulate(
    h_values: &[f64],
    block_values: &[usize],
    reps: usize,
    level: f64,
    seed: u64,
    out: Option<&Path>,
    format: SimFormat,
    redraw_outcomes: bool,
) -> Result<(), Error> {
    if h_values.is_empty() || block_values.is_empty() {
        return Err(Error::InvalidScenario(
            "at least one --h and one --B value are required".into(),
        ));
    }
    let mut reports: Vec<CoverageReport> = Vec::new();
    for &h in h_values {
        for &blocks in block_values {
            let mut sc = SimScenario::standard(blocks, h, reps, SeedSpec::new(seed));
            sc.level = level;
            sc.redraw_outcomes = redraw_outcomes;
            reports.push(run_coverage(&sc)?);
        }
    }
    let rendered = match format {
        SimFormat::Table => render_table(&reports),
        SimFormat::Json => to_json(&reports)?,
        SimFormat::Csv => {
            let mut buf = Vec::new();
            write_csv(&reports, &mut buf)?;
            String::from_utf8(buf).expect("csv output is UTF-8")
        }
    };
    emit(out, &rendered)
}

fn parse_contrast(spec: &str, dims: DesignDims) -> Result<Contrast, Error> {
    let coeffs = spec
        .split(',')
        .map(|tok| {
            tok.trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidContrast(format!("bad coefficient {tok:?}")))
        })
        .collect::<Result<Vec<f64>, Error>>()?;
    Contrast::new(dims.row_levels(), dims.col_levels(), coeffs)
}

fn estimate(
    table_path: &Path,
    assignment_path: &Path,
    contrast_spec: &str,
    level: f64,
    format: EstimateFormat,
) -> Result<(), Error> {
    let table = load_table(table_path)?;
    let dims = table.dims();
    let assignment_text = std::fs::read_to_string(assignment_path)?;
    let assignment = assignment_from_json(&assignment_text, dims)?;
    let contrast = parse_contrast(contrast_spec, dims)?;

    let obs = observe(&table, &assignment)?;
    let est = estimate_contrast(&obs, &contrast)?;
    let ci = confidence_interval(&est, level)?;
    let var0 = conservative_variance(&est)?;

    match format {
        EstimateFormat::Text => {
            let mut out = String::new();
            out.push_str(&format!(
                "design: {} blocks, {} x {} factorial\n",
                dims.blocks(),
                dims.row_levels(),
                dims.col_levels()
            ));
            out.push_str(&format!("per-block estimates: {:?}\n", est.block_estimates()));
            out.push_str(&format!("tau_hat = {}\n", est.pooled()));
            out.push_str(&format!("var0    = {var0}\n"));
            out.push_str(&format!(
                "{:.0}% CI  = [{}, {}]   (z = {})\n",
                level * 100.0,
                ci.lower(),
                ci.upper(),
                ci.z
            ));
            print!("{out}");
        }
        EstimateFormat::Json => {
            let doc = serde_json::json!({
                "blocks": dims.blocks(),
                "row_levels": dims.row_levels(),
                "col_levels": dims.col_levels(),
                "per_block": est.block_estimates(),
                "tau_hat": est.pooled(),
                "var0": var0,
                "ci": { "lower": ci.lower(), "upper": ci.upper(), "level": level, "z": ci.z },
            });
            println!("{}", serde_json::to_string_pretty(&doc)?);
        }
    }
    Ok(())
}

fn verify(trials: usize, seed: u64) -> Result<(), Error> {
    use strip_rct::sim::random_integer_table;
    if trials == 0 {
        return Err(Error::InvalidInput("trials must be at least 1".into()));
    }
    let shapes = [(1usize, 2usize, 2usize), (1, 2, 3), (1, 3, 3), (2, 2, 2), (2, 2, 3), (2, 3, 3)];
    let base = SeedSpec::new(seed);
    let mut cov_pairs = 0usize;
    let mut mean_checks = 0usize;
    let mut bias_checks = 0usize;
    println!("verify: {trials} trials, seed {seed}");
    for trial in 0..trials {
        let (b, p, q) = shapes[trial % shapes.len()];
        let dims = DesignDims::new(b, p, q)?;
        let table = random_integer_table(dims, base.fold(trial as u64), 0, 9)?;
        let scale2 = table.max_abs().powi(2).max(1.0);
        let fail = |what: String| Error::InvalidInput(format!("trial {trial}: {what}"));

        for block in 0..dims.blocks() {
            let bm = exact_block_moments(&table, block)?;
            for t1 in 0..dims.treatments() {
                for t2 in 0..dims.treatments() {
                    let formula = observed_covariance(
                        &table,
                        block,
                        dims.treatment_levels(t1),
                        dims.treatment_levels(t2),
                    )?;
                    let exact = bm.cov_obs.get(t1, t2);
                    if (formula - exact).abs() > 1e-10 * scale2 {
                        return Err(fail(format!(
                            "covariance mismatch at block {block} pair ({t1}, {t2}): \
                             formula {formula}, enumeration {exact}"
                        )));
                    }
                    cov_pairs += 1;
                }
            }
        }

        let basis = Contrast::basis(p, q);
        let l = &basis[trial % basis.len()];
        let em = exact_estimator_moments(&table, l)?;
        let tau = population_contrast(&table, l)?;
        if (em.mean_tau_hat - tau).abs() > 1e-10 * table.max_abs().max(1.0) {
            return Err(fail(format!(
                "estimator mean {} differs from population contrast {tau}",
                em.mean_tau_hat
            )));
        }
        mean_checks += 1;

        if dims.blocks() >= 2 {
            let gap = em.mean_var0.expect("two blocks") - em.var_tau_hat;
            let bias = conservative_variance_bias(&table, l)?;
            if (gap - bias).abs() > 1e-10 * scale2 {
                return Err(fail(format!(
                    "variance-estimator bias mismatch: enumeration gap {gap}, closed form {bias}"
                )));
            }
            bias_checks += 1;
        }
    }
    println!("  covariance formula vs enumeration .... ok ({cov_pairs} pairs)");
    println!("  estimator mean vs population value ... ok ({mean_checks} contrasts)");
    println!("  variance-estimator bias identity ..... ok ({bias_checks} designs)");
    println!("all checks passed");
    Ok(())
}

fn theory(
    blocks: Option<usize>,
    table_path: Option<&Path>,
    contrast_spec: Option<&str>,
    out: Option<&Path>,
) -> Result<(), Error> {
    match (blocks, table_path) {
        (Some(b), None) => {
            let u = UEstimatorMatrix::centering(b)?;
            let bound = 1.0 / (b as f64 * (b as f64 - 1.0));
            let row_sum_max = u
                .matrix()
                .row_sums()
                .iter()
                .fold(0.0f64, |m, s| m.max(s.abs()));
            println!("pooled-estimator matrix, order {b}");
            println!("  trace            = {}", u.matrix().trace());
            println!("  max eigenvalue   = {}", u.max_eigenvalue());
            println!("  class lower bound= {bound}");
            println!("  max |row sum|    = {row_sum_max}");
            if let Some(path) = out {
                let labels: Vec<String> = (1..=b).map(|i| format!("b{i}")).collect();
                let file = std::fs::File::create(path)?;
                write_matrix_csv(u.matrix(), &labels, file)?;
                println!("matrix written to {}", path.display());
            }
            Ok(())
        }
        (None, Some(path)) => {
            let table = load_table(path)?;
            let dims = table.dims();
            let model = covariance_model(&table);
            let labels: Vec<String> = (0..dims.treatments())
                .map(|t| {
                    let (p, q) = dims.treatment_levels(t);
                    format!("t{}_{}", p + 1, q + 1)
                })
                .collect();
            for (b, w) in model.blocks().iter().enumerate() {
                println!(
                    "block {} observed-outcome covariance ({} x {}):",
                    b + 1,
                    w.order(),
                    w.order()
                );
                for i in 0..w.order() {
                    let row: Vec<String> =
                        (0..w.order()).map(|j| format!("{:>12.6}", w.get(i, j))).collect();
                    println!("  {}", row.join(" "));
                }
                println!(
                    "  min eigenvalue = {}\n",
                    w.symmetric_eigenvalues()[0]
                );
            }
            if let Some(spec) = contrast_spec {
                let l = parse_contrast(spec, dims)?;
                println!("sampling variance = {}", sampling_variance(&table, &l)?);
                if dims.blocks() >= 2 {
                    println!(
                        "estimator bias    = {}",
                        conservative_variance_bias(&table, &l)?
                    );
                }
            }
            if let Some(path) = out {
                let mut file = std::fs::File::create(path)?;
                for (b, w) in model.blocks().iter().enumerate() {
                    writeln!(file, "# block {}", b + 1)?;
                    write_matrix_csv(w, &labels, &mut file)?;
                }
                println!("matrices written to {}", path.display());
            }
            Ok(())
        }
        _ => Err(Error::InvalidInput(
            "pass exactly one of --B <order> or --table <file>".into(),
        )),
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), Error> {
    match out {
        Some(path) => {
            std::fs::write(path, text)?;
            Ok(())
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}
