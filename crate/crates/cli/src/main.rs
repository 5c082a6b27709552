//! Command-line pipeline: data generation, training, propagation,
//! travelling-wave search and verification. Every command is a pure function
//! of (config, inputs, seed) — reruns produce byte-identical outputs — and
//! writes a run manifest next to its outputs.

mod config;
mod verify;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use varfield::datagen::{self, GenConfig};
use varfield::del::del_field_threads;
use varfield::density::{LoadedDensity, WaveDensity};
use varfield::error::{Error, Result};
use varfield::grid;
use varfield::solver;
use varfield::textkv::{self, Writer};
use varfield::train;
use varfield::twave;

#[derive(Parser)]
#[command(
    name = "varfield",
    version,
    about = "Learn discrete Lagrangian densities of variational PDEs from space-time data, \
             propagate solutions implicitly and detect travelling waves"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Config file (key = value lines; unknown keys are errors)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
    /// Seed override (takes precedence over the config file)
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for parallelisable stages
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Verbose progress output
    #[arg(long, default_value_t = false)]
    verbose: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesise a training dataset of discrete wave trajectories
    Generate {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Train a neural density on a dataset directory
    Train {
        #[command(flatten)]
        common: CommonArgs,
        /// Dataset directory produced by `generate`
        #[arg(long)]
        data: PathBuf,
    },
    /// Propagate initial rows under a checkpointed density
    Propagate {
        #[command(flatten)]
        common: CommonArgs,
        /// Density checkpoint file
        #[arg(long)]
        checkpoint: PathBuf,
        /// Grid file whose first two rows are the initial data
        #[arg(long)]
        rows: PathBuf,
        /// Number of time steps to propagate
        #[arg(long)]
        steps: usize,
    },
    /// Search for a travelling wave of a checkpointed density
    FindTw {
        #[command(flatten)]
        common: CommonArgs,
        /// Density checkpoint file
        #[arg(long)]
        checkpoint: PathBuf,
        /// Initial travelling-wave state file (with `init = file` in config)
        #[arg(long)]
        init: Option<PathBuf>,
    },
    /// Check a checkpoint against data and travelling-wave references
    Verify {
        #[command(flatten)]
        common: CommonArgs,
        /// Density checkpoint file
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset directory to evaluate the losses on
        #[arg(long)]
        data: Option<PathBuf>,
        /// Single grid file to evaluate the losses on
        #[arg(long)]
        grid: Option<PathBuf>,
        /// Reference travelling-wave state file
        #[arg(long)]
        tw: Option<PathBuf>,
    },
}

struct Manifest {
    command: String,
    seed: Option<u64>,
    entries: Vec<(String, String)>,
    started: Instant,
}

impl Manifest {
    fn new(command: &str, seed: Option<u64>) -> Manifest {
        Manifest {
            command: command.to_string(),
            seed,
            entries: Vec::new(),
            started: Instant::now(),
        }
    }

    fn record(&mut self, key: &str, value: impl std::fmt::Display) {
        self.entries.push((key.to_string(), value.to_string()));
    }

    fn path(&mut self, kind: &str, path: &Path) {
        self.record(kind, path.display());
    }

    fn write(&self, out_dir: &Path) -> Result<()> {
        let mut w = Writer::new();
        w.kv("command", &self.command)
            .kv("version", env!("CARGO_PKG_VERSION"));
        if let Some(seed) = self.seed {
            w.kv("seed", seed);
        }
        for (k, v) in &self.entries {
            w.kv(k, v);
        }
        w.kv_f64("wall_seconds", self.started.elapsed().as_secs_f64());
        textkv::write_string(&out_dir.join("run_manifest.txt"), &w.finish())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Generate { common } => cmd_generate(&common).map(|_| ExitCode::SUCCESS),
        Command::Train { common, data } => cmd_train(&common, &data).map(|_| ExitCode::SUCCESS),
        Command::Propagate {
            common,
            checkpoint,
            rows,
            steps,
        } => cmd_propagate(&common, &checkpoint, &rows, steps).map(|_| ExitCode::SUCCESS),
        Command::FindTw {
            common,
            checkpoint,
            init,
        } => cmd_find_tw(&common, &checkpoint, init.as_deref()).map(|_| ExitCode::SUCCESS),
        Command::Verify {
            common,
            checkpoint,
            data,
            grid,
            tw,
        } => cmd_verify(&common, &checkpoint, data.as_deref(), grid.as_deref(), tw.as_deref()),
    }
}

fn echo_gen_config(manifest: &mut Manifest, cfg: &GenConfig) {
    manifest.record("cfg_K", cfg.k);
    manifest.record("cfg_T", textkv::fmt_f64(cfg.mesh.t_final()));
    manifest.record("cfg_l", textkv::fmt_f64(cfg.mesh.period()));
    manifest.record("cfg_N", cfg.mesh.n());
    manifest.record("cfg_M", cfg.mesh.m());
    manifest.record("cfg_weight_coeff", textkv::fmt_f64(cfg.weight_coeff));
    manifest.record("cfg_weight_power", cfg.weight_power);
    manifest.record("cfg_seed", cfg.seed);
}

fn cmd_generate(common: &CommonArgs) -> Result<()> {
    let cfg = config::gen_config(common.config.as_deref(), common.seed)?;
    let mut manifest = Manifest::new("generate", Some(cfg.seed));
    echo_gen_config(&mut manifest, &cfg);
    if let Some(p) = &common.config {
        manifest.path("input_config", p);
    }
    let grids = datagen::generate_dataset_threads(&cfg, common.threads)?;

    // residual certificate for every trajectory
    let wave = WaveDensity::new(cfg.mesh.dt(), cfg.mesh.dx(), 1);
    let mut report = Writer::new();
    let mut max_residual = 0.0f64;
    for (k, g) in grids.iter().enumerate() {
        let r = del_field_threads(&wave, g, common.threads)?.max_abs();
        report.kv(&format!("traj_{k:03}_max_residual"), textkv::fmt_f64(r));
        max_residual = max_residual.max(r);
    }
    report.kv("max_residual", textkv::fmt_f64(max_residual));

    datagen::write_dataset(&common.out, &cfg, &grids, max_residual)?;
    textkv::write_string(&common.out.join("residual_report.txt"), &report.finish())?;
    manifest.path("output_dataset", &common.out);
    manifest.record("max_del_residual", textkv::fmt_f64(max_residual));
    manifest.write(&common.out)?;
    if common.verbose {
        println!(
            "generated {} trajectories on a {}x{} mesh, max residual {max_residual:.3e}",
            grids.len(),
            cfg.mesh.n() + 1,
            cfg.mesh.m()
        );
    }
    Ok(())
}

fn cmd_train(common: &CommonArgs, data_dir: &Path) -> Result<()> {
    let cfg = config::train_config(common.config.as_deref(), common.seed)?;
    let mut manifest = Manifest::new("train", Some(cfg.seed));
    manifest.path("input_data", data_dir);
    manifest.record("cfg_epochs", cfg.epochs);
    manifest.record("cfg_batch_size", cfg.batch_size);
    manifest.record("cfg_learning_rate", textkv::fmt_f64(cfg.learning_rate));
    manifest.record("cfg_reg_weight", textkv::fmt_f64(cfg.reg_weight));
    manifest.record("cfg_lambda_floor", textkv::fmt_f64(cfg.lambda_floor));
    let data = datagen::read_dataset(data_dir)?;
    let (net, record) = train::train_threads(&data, &cfg, common.threads)?;

    let ckpt_path = common.out.join("checkpoint.txt");
    textkv::write_string(
        &ckpt_path,
        &varfield::density::write_checkpoint_string(&LoadedDensity::Neural(net)),
    )?;
    textkv::write_string(&common.out.join("record.txt"), &train::write_record_string(&record))?;
    manifest.path("output_checkpoint", &ckpt_path);
    manifest.record("final_l_del", textkv::fmt_f64(record.final_l_del()));
    manifest.record("final_l_reg", textkv::fmt_f64(record.final_l_reg()));
    manifest.record("best_epoch", record.best_epoch);
    if let Some(msg) = &record.aborted {
        manifest.record("aborted", msg);
    }
    manifest.write(&common.out)?;
    if common.verbose {
        println!(
            "trained {} epochs: l_del {:.3e}, l_reg {:.3e} (best epoch {})",
            record.config.epochs,
            record.final_l_del(),
            record.final_l_reg(),
            record.best_epoch
        );
    }
    if record.aborted.is_some() {
        return Err(Error::NonFinite("training aborted; best checkpoint kept".into()));
    }
    Ok(())
}

fn cmd_propagate(common: &CommonArgs, checkpoint: &Path, rows: &Path, steps: usize) -> Result<()> {
    let solver_cfg = config::solver_config(common.config.as_deref())?;
    let mut manifest = Manifest::new("propagate", common.seed);
    manifest.path("input_checkpoint", checkpoint);
    manifest.path("input_rows", rows);
    manifest.record("cfg_steps", steps);
    manifest.record(
        "cfg_residual_tolerance",
        textkv::fmt_f64(solver_cfg.residual_tolerance),
    );
    let density = varfield::density::load_checkpoint_file(checkpoint)?;
    manifest.record("model", density.describe());
    let rows_grid = grid::read_grid_file(rows)?;
    if let varfield::density::LoadedDensity::Wave { dt, dx } = &density {
        let (mdt, mdx) = (rows_grid.mesh().dt(), rows_grid.mesh().dx());
        if (dt - mdt).abs() > 1e-12 * mdt || (dx - mdx).abs() > 1e-12 * mdx {
            return Err(Error::InvalidConfig(format!(
                "wave checkpoint widths (dt={dt}, dx={dx}) do not match the rows mesh (dt={mdt}, dx={mdx})"
            )));
        }
    }
    let model = density.into_model();
    if rows_grid.dim() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            got: rows_grid.dim(),
        });
    }
    let mesh = rows_grid.mesh().with_time_steps(steps.max(2))?;

    let mut verbose_lines = String::new();
    let mut solves = 0u64;
    let mut max_iterations = 0usize;
    let mut max_rho = 0.0f64;
    let mut max_residual = 0.0f64;
    let result = {
        let mut observer = |i: usize, j: usize, report: &solver::NewtonReport| {
            solves += 1;
            max_iterations = max_iterations.max(report.iterations);
            max_rho = max_rho.max(report.rho_star);
            max_residual = max_residual.max(report.final_residual_norm);
            if common.verbose {
                verbose_lines.push_str(&format!(
                    "{i}, {j}, {}, {}, {}\n",
                    report.iterations,
                    textkv::fmt_f64(report.final_residual_norm),
                    textkv::fmt_f64(report.rho_star)
                ));
            }
        };
        solver::propagate_observed(
            model.as_ref(),
            rows_grid.row(0),
            rows_grid.row(1),
            &mesh,
            &solver_cfg,
            &mut observer,
        )?
    };

    grid::write_grid_file(&result, &common.out.join("propagated.grid"))?;
    let mut summary = Writer::new();
    summary
        .kv("solves", solves)
        .kv("max_newton_iterations", max_iterations)
        .kv_f64("max_rho_star", max_rho)
        .kv_f64("max_accepted_residual", max_residual);
    if common.verbose {
        summary.blank();
        for line in verbose_lines.lines() {
            summary.line(line);
        }
    }
    textkv::write_string(&common.out.join("newton_report.txt"), &summary.finish())?;
    manifest.path("output_grid", &common.out.join("propagated.grid"));
    manifest.record("solves", solves);
    manifest.write(&common.out)?;
    Ok(())
}

fn cmd_find_tw(common: &CommonArgs, checkpoint: &Path, init_file: Option<&Path>) -> Result<()> {
    let setup = config::tw_setup(common.config.as_deref(), common.seed)?;
    let mut manifest = Manifest::new("find-tw", Some(setup.seed));
    manifest.path("input_checkpoint", checkpoint);
    manifest.record("cfg_steps", setup.search.steps);
    manifest.record("cfg_learning_rate", textkv::fmt_f64(setup.search.learning_rate));
    let density = varfield::density::load_checkpoint_file(checkpoint)?;
    manifest.record("model", density.describe());
    let model = density.into_model();

    let init = match (&setup.init, init_file) {
        (config::TwInit::File, Some(path)) => {
            manifest.path("input_init", path);
            twave::read_tw_file(path)?.0
        }
        (config::TwInit::File, None) => {
            return Err(Error::InvalidConfig(
                "init = file requires --init <tw file>".into(),
            ))
        }
        (
            config::TwInit::Exact {
                mode_n,
                alpha,
                beta,
                noise_sigma,
            },
            _,
        ) => {
            manifest.record("init_mode_n", mode_n);
            manifest.record("init_noise_sigma", textkv::fmt_f64(*noise_sigma));
            let (state, root) = twave::exact_wave_tw(*mode_n, *alpha, *beta, &setup.mesh)?;
            manifest.record("dispersion_c", textkv::fmt_f64(root.c));
            if *noise_sigma > 0.0 {
                state.perturbed(*noise_sigma, setup.seed)
            } else {
                state
            }
        }
    };

    let result = twave::find_tw(model.as_ref(), &init, &setup.mesh, &setup.search)?;
    let final_loss = result.best_loss;
    twave::write_tw_file(
        &result.state,
        &setup.mesh,
        final_loss,
        &common.out.join("tw_result.txt"),
    )?;
    let mut history = Writer::new();
    history.kv("steps", result.history.len().saturating_sub(1));
    if let Some(msg) = &result.aborted {
        history.kv("aborted", msg);
    }
    history.blank();
    for (k, loss) in result.history.iter().enumerate() {
        history.line(&format!("{k}, {}", textkv::fmt_f64(*loss)));
    }
    textkv::write_string(&common.out.join("loss_history.txt"), &history.finish())?;
    manifest.path("output_tw", &common.out.join("tw_result.txt"));
    manifest.record("final_loss", textkv::fmt_f64(final_loss));
    manifest.record("final_c", textkv::fmt_f64(result.state.c()));
    manifest.write(&common.out)?;
    if common.verbose {
        println!(
            "travelling-wave search finished: c = {:.6}, loss = {final_loss:.3e}",
            result.state.c()
        );
    }
    if result.aborted.is_some() {
        return Err(Error::NonFinite("travelling-wave search aborted".into()));
    }
    Ok(())
}

fn cmd_verify(
    common: &CommonArgs,
    checkpoint: &Path,
    data: Option<&Path>,
    grid_file: Option<&Path>,
    tw: Option<&Path>,
) -> Result<ExitCode> {
    let cfg = config::verify_config(common.config.as_deref())?;
    let mut manifest = Manifest::new("verify", common.seed);
    manifest.path("input_checkpoint", checkpoint);
    let density = varfield::density::load_checkpoint_file(checkpoint)?;
    manifest.record("model", density.describe());
    let model = density.into_model();

    let report = verify::run_checks(model.as_ref(), &cfg, data, grid_file, tw, common.threads)?;
    let text = verify::render(&report);
    print!("{text}");
    textkv::write_string(&common.out.join("verify_report.txt"), &text)?;
    manifest.record("checks", report.checks.len());
    manifest.record("passed", report.checks.iter().filter(|c| c.pass).count());
    manifest.write(&common.out)?;
    if report.checks.iter().all(|c| c.pass) {
        Ok(ExitCode::SUCCESS)
    } else {
        Ok(ExitCode::FAILURE)
    }
}
