use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use spinrestore::config::{load_config, ExperimentConfig, Format, ModelKind};
use spinrestore::metrics::{sweep_n, sweep_tau_multi};
use spinrestore::oracle::{verify_suite, MAX_SITES};
use spinrestore::output::{
    read_table, solution_json, write_amplitude_csv, write_chain_length_csv, write_json,
    write_metric_csv, write_solution_extrema_csv, RunRecord,
};
use spinrestore::plot::{write_svg, PlotOptions};
use spinrestore::solver::multi_start;
use spinrestore::{Error, Result};

#[derive(Parser)]
#[command(
    name = "spinrestore",
    version,
    about = "Remote state restoring in XX spin chains"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the restoring constraints at the configured registration time.
    Solve {
        #[command(flatten)]
        run: RunArgs,
        /// Registration time; overrides `solver.tau_reg`.
        #[arg(long)]
        tau: Option<f64>,
    },
    /// Sweep the registration time and emit S1..S5 per model.
    SweepTau {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Locate the optimal registration time for every chain length in `sweep.n_list`.
    SweepN {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Cross-check the subspace code against the full Hilbert space.
    Verify {
        #[command(flatten)]
        run: RunArgs,
        /// Random schedules to test.
        #[arg(long, default_value_t = 20)]
        schedules: usize,
    },
    /// Render a result CSV as an SVG line chart.
    Plot {
        #[arg(long)]
        input: PathBuf,
        /// Output file; defaults to the input with an `.svg` extension.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        log_y: bool,
        /// Comma-separated columns to plot; all but the first by default.
        #[arg(long, value_delimiter = ',')]
        columns: Vec<String>,
        #[arg(long, default_value = "")]
        title: String,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Config file or preset name (fig2, fig4, fig6, fig7, fig8).
    #[arg(long)]
    config: String,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; all cores by default.
    #[arg(long)]
    jobs: Option<usize>,
    /// Output directory; overrides `output.directory`.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn load(&self) -> Result<(ExperimentConfig, PathBuf)> {
        if let Some(jobs) = self.jobs {
            rayon::ThreadPoolBuilder::new()
                .num_threads(jobs.max(1))
                .build_global()
                .map_err(|e| Error::Config {
                    key: "--jobs".into(),
                    msg: e.to_string(),
                })?;
        }
        let mut config = load_config(&self.config)?;
        if let Some(seed) = self.seed {
            config.solver.seed = seed;
        }
        let out = self
            .out
            .clone()
            .unwrap_or_else(|| PathBuf::from(&config.output.directory));
        Ok((config, out))
    }
}

fn prepare_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

fn finish(dir: &Path, record: RunRecord) -> Result<()> {
    write_json(&dir.join(format!("run_{}.json", record.command)), &record)
}

fn solve(run: &RunArgs, tau: Option<f64>) -> Result<()> {
    let (config, dir) = run.load()?;
    let tau = tau.or(config.solver.tau_reg).ok_or_else(|| Error::Config {
        key: "solver.tau_reg".into(),
        msg: "required by `solve` (or pass --tau)".into(),
    })?;
    prepare_dir(&dir)?;
    let mut record = RunRecord::new("solve", &config);
    record.tau_reg = Some(tau);
    let mut any = false;
    for model in config.models() {
        let problem = config.problem(model, tau)?;
        let set = multi_start(&problem)?;
        let label = model.label();
        println!(
            "{label}: {} of {} starts converged at tau = {tau}",
            set.len(),
            set.n_starts
        );
        any |= !set.is_empty();
        if config.wants(Format::Json) {
            let name = format!("solutions_{label}.json");
            write_json(&dir.join(&name), &solution_json(&config, &set))?;
            record.files.push(name);
        }
        if config.wants(Format::Csv) {
            let name = format!("amplitudes_{label}.csv");
            write_solution_extrema_csv(&dir.join(&name), &set)?;
            record.files.push(name);
        }
    }
    finish(&dir, record)?;
    if !any {
        return Err(Error::Schedule(format!(
            "no start converged at tau = {tau}"
        )));
    }
    Ok(())
}

fn sweep_tau_cmd(run: &RunArgs) -> Result<()> {
    let (config, dir) = run.load()?;
    prepare_dir(&dir)?;
    let mut record = RunRecord::new("sweep-tau", &config);
    let mut any = false;
    for model in config.models() {
        let template = config.problem(model, 0.0)?;
        let sweeps = sweep_tau_multi(
            &template,
            config.horizon(),
            config.sweep.grid_step,
            config.eps_list(),
        )?;
        for sweep in sweeps {
            let label = sweep.model.label();
            match sweep.tau_0 {
                Some(t) => println!(
                    "{label}: lambda_opt = {:.6} at tau_0 = {t}",
                    sweep.lambda_opt
                ),
                None => println!("{label}: no feasible grid point"),
            }
            any |= sweep.tau_0.is_some();
            let csv_name = format!("sweep_tau_{label}.csv");
            write_metric_csv(&dir.join(&csv_name), &sweep.points)?;
            record.files.push(csv_name.clone());
            let amp_name = format!("amplitudes_tau_{label}.csv");
            write_amplitude_csv(&dir.join(&amp_name), &sweep.points)?;
            record.files.push(amp_name);
            if config.wants(Format::Svg) && sweep.tau_0.is_some() {
                let svg_name = format!("sweep_tau_{label}.svg");
                let opts = PlotOptions {
                    title: label.clone(),
                    y: ["s1", "s2", "s3", "s4"].map(String::from).to_vec(),
                    log_y: true,
                    ..PlotOptions::default()
                };
                match write_svg(
                    &read_table(&dir.join(&csv_name))?,
                    &opts,
                    &dir.join(&svg_name),
                ) {
                    Ok(()) => record.files.push(svg_name),
                    Err(Error::Plot(msg)) => println!("{label}: chart skipped ({msg})"),
                    Err(e) => return Err(e),
                }
            }
        }
    }
    finish(&dir, record)?;
    if !any {
        return Err(Error::Schedule(
            "no feasible grid point in any sweep".into(),
        ));
    }
    Ok(())
}

fn sweep_n_cmd(run: &RunArgs) -> Result<()> {
    let (config, dir) = run.load()?;
    if config.sweep.n_list.is_empty() {
        return Err(Error::Config {
            key: "sweep.n_list".into(),
            msg: "required by `sweep-n`".into(),
        });
    }
    prepare_dir(&dir)?;
    let mut record = RunRecord::new("sweep-n", &config);
    for model in config.models() {
        let template = config.problem(model, 0.0)?;
        let rows = sweep_n(
            &template,
            &config.sweep.n_list,
            config.sweep.horizon_factor,
            config.sweep.grid_step,
            config.eps_list(),
        )?;
        for r in rows.iter().filter(|r| r.eps_tilde == rows[0].eps_tilde) {
            match r.tau_0 {
                Some(t) => println!(
                    "N = {}: lambda_opt = {:.6} at tau_0 = {t}",
                    r.n, r.lambda_opt
                ),
                None => println!("N = {}: no feasible grid point", r.n),
            }
        }
        let label = match config.model.kind {
            ModelKind::Pulse => "pulse".to_owned(),
            _ => model.label(),
        };
        let name = format!("sweep_n_{label}.csv");
        write_chain_length_csv(&dir.join(&name), &rows)?;
        record.files.push(name);
    }
    finish(&dir, record)
}

fn verify(run: &RunArgs, schedules: usize) -> Result<bool> {
    let (config, _) = run.load()?;
    let spec = config.spec()?;
    if spec.n_total > MAX_SITES {
        return Err(Error::OracleSize {
            n: spec.n_total,
            max: MAX_SITES,
        });
    }
    let tau = config.solver.tau_reg.unwrap_or(2.0 * spec.n_total as f64);
    let checks = verify_suite(
        &spec,
        config.solver.k_omega,
        tau,
        schedules,
        config.solver.seed,
    )?;
    for c in &checks {
        println!("{c}");
    }
    Ok(checks.iter().all(|c| c.passed()))
}

fn plot(
    input: &Path,
    out: Option<PathBuf>,
    log_y: bool,
    columns: Vec<String>,
    title: String,
) -> Result<()> {
    let table = read_table(input)?;
    let out = out.unwrap_or_else(|| input.with_extension("svg"));
    let opts = PlotOptions {
        title,
        x: None,
        y: columns,
        log_y,
    };
    write_svg(&table, &opts, &out)?;
    println!("wrote {}", out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Solve { run, tau } => solve(&run, tau),
        Command::SweepTau { run } => sweep_tau_cmd(&run),
        Command::SweepN { run } => sweep_n_cmd(&run),
        Command::Verify { run, schedules } => match verify(&run, schedules) {
            Ok(true) => Ok(()),
            Ok(false) => {
                eprintln!("verification failed");
                return ExitCode::from(1);
            }
            Err(e) => Err(e),
        },
        Command::Plot {
            input,
            out,
            log_y,
            columns,
            title,
        } => plot(&input, out, log_y, columns, title),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
