use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fpld_core::dataio::{atomic_write, Pipeline, RunConfig};
use fpld_core::laser::{li_csv, Simulator, OMEGA_UNIT};
use fpld_core::onn::{
    detuning_sweep, evaluate, history_csv, init_model, train, Dims, MlpModel, SweepSpec,
};
use fpld_core::physim::{evaluate_physical, per_label_csv, PhysicalLayout};
use fpld_core::waveform::PulseGrid;
use fpld_core::xfer::threshold_point;
use fpld_core::Error;

#[derive(Parser, Debug)]
#[command(name = "fpld", version, about = "Laser-diode optical activations and the networks built on them")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// Run configuration file (flat `key = value`).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set epochs=5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Output directory (overrides `output_dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for parallel stages.
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Steady-state light–current curve and the threshold current.
    LiCurve {
        /// Highest current as a multiple of the analytic threshold.
        #[arg(long, default_value_t = 2.0)]
        max_factor: f64,
        #[arg(long, default_value_t = 41)]
        points: usize,
    },
    /// Quasi-static up/down sweep of CW injection power.
    Hysteresis {
        /// Detuning in units of 1e10 rad/s.
        #[arg(long, allow_hyphen_values = true)]
        detuning: f64,
        /// mW
        #[arg(long, default_value_t = 2.0)]
        p_max: f64,
        #[arg(long, default_value_t = 40)]
        steps: usize,
    },
    /// Pulsed peak-power transfer curve.
    Transfer {
        #[arg(long, allow_hyphen_values = true)]
        detuning: f64,
        /// ps
        #[arg(long, default_value_t = 40.0)]
        fwhm: f64,
    },
    /// Extract and fit activations for every configured layer detuning.
    Fit,
    /// Train one network.
    Train {
        #[arg(long, allow_hyphen_values = true)]
        dw1: f64,
        #[arg(long, allow_hyphen_values = true)]
        dw2: f64,
        #[arg(long, default_value_t = 0)]
        run: u64,
    },
    /// Evaluate a checkpoint on the test split.
    Eval {
        #[arg(long)]
        model: PathBuf,
    },
    /// Evaluate a checkpoint through the simulated lasers.
    PhysicalEval {
        #[arg(long)]
        model: PathBuf,
        /// Images to use (overrides `physical_subset`; 0 = whole test split).
        #[arg(long)]
        subset: Option<usize>,
    },
    /// Train over the configured detuning grid (resumable).
    Sweep,
}

enum Failure {
    Usage(Error),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => Failure::Usage(e),
            other => Failure::Runtime(other),
        }
    }
}

fn parse_overrides(set: &[String]) -> Result<Vec<(String, String)>, Failure> {
    set.iter()
        .map(|kv| {
            kv.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| Failure::Usage(Error::Config(format!("--set expects KEY=VALUE, got `{kv}`"))))
        })
        .collect()
}

fn write(path: PathBuf, text: &str) -> Result<(), Failure> {
    atomic_write(&path, text.as_bytes())?;
    println!("wrote {}", path.display());
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    let mut overrides = parse_overrides(&cli.global.set)?;
    if let Some(out) = &cli.global.out {
        overrides.push(("output_dir".into(), format!("{:?}", out.display().to_string())));
    }
    let config = RunConfig::load(cli.global.config.as_deref(), &overrides)?;
    if let Some(j) = cli.global.jobs {
        if j == 0 {
            return Err(Failure::Usage(Error::Config("--jobs must be ≥ 1".into())));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build_global()
            .map_err(|e| Failure::Runtime(Error::Dependency(e.to_string())))?;
    }
    let seed = config.seed;
    let pipe = Pipeline::new(config)?;
    let cfg = &pipe.config;
    match cli.command {
        Command::LiCurve { max_factor, points } => {
            if points < 2 || !(max_factor > 0.0) {
                return Err(Failure::Usage(Error::Config("need ≥ 2 points and max_factor > 0".into())));
            }
            let est = pipe.sim.params.analytic_threshold_current();
            let currents: Vec<f64> = (0..points)
                .map(|i| est * max_factor * i as f64 / (points - 1) as f64)
                .collect();
            let li = Simulator::li_curve(&pipe.sim.params, &currents)?;
            let text = format!("# threshold_ma={}\n{}", pipe.threshold_ma, li_csv(&li));
            write(pipe.out("li_curve.csv"), &text)?;
            println!("threshold_ma {}", pipe.threshold_ma);
        }
        Command::Hysteresis { detuning, p_max, steps } => {
            let lp = pipe
                .sim
                .hysteresis_sweep(cfg.injected_mode, detuning * OMEGA_UNIT, p_max, steps)?;
            write(pipe.out(&format!("hysteresis_{detuning}.csv")), &lp.to_csv())?;
            println!("loop_area {}", lp.loop_area());
        }
        Command::Transfer { detuning, fwhm } => {
            let curve = pipe.curve(detuning, fwhm)?;
            write(pipe.out(&format!("transfer_{detuning}_{fwhm}ps.csv")), &curve.to_csv())?;
            match threshold_point(&curve) {
                Ok(t) => println!("threshold_point_mw {t}"),
                Err(e) => println!("threshold_point_mw none ({e})"),
            }
        }
        Command::Fit => {
            let lib = pipe.fit_all()?;
            let flagged = lib.iter().filter(|c| c.quality_warning).count();
            println!(
                "fitted {} activations in {} ({flagged} above the RMSE target)",
                lib.len(),
                pipe.coeff_dir().display()
            );
        }
        Command::Train { dw1, dw2, run } => {
            let lib = pipe.stored_library()?;
            let act1 = lib.get(dw1, cfg.fwhm_layer1)?.clone();
            let act2 = lib.get(dw2, cfg.fwhm_layer2)?.clone();
            let data = pipe.dataset()?;
            let run_seed = seed + run;
            let model = init_model(Dims::mnist(cfg.hidden), act1, act2, run_seed)?;
            let tc = fpld_core::TrainConfig {
                seed: run_seed,
                ..cfg.train_config()
            };
            let (model, history) = train(&data.train, Some(&data.test), model, &tc)?;
            let stem = format!("model_{dw1}_{dw2}_h{}_s{run_seed}", cfg.hidden);
            write(pipe.out(&format!("{stem}.json")), &model.to_json()?)?;
            write(pipe.out(&format!("{stem}_history.csv")), &history_csv(&history))?;
            let last = history.last().expect("at least one epoch");
            println!("test_accuracy {} test_loss {}", last.test_accuracy, last.test_loss);
        }
        Command::Eval { model } => {
            let m = load_model(&model)?;
            let data = pipe.dataset()?;
            let e = evaluate(&m, &data.test)?;
            let mut s = String::from("label,count,accuracy\n");
            for (k, (a, c)) in e.per_label.iter().zip(&e.label_counts).enumerate() {
                s.push_str(&format!("{k},{c},{a}\n"));
            }
            write(pipe.out("eval_per_label.csv"), &s)?;
            println!("accuracy {} loss {}", e.accuracy, e.loss);
        }
        Command::PhysicalEval { model, subset } => {
            let m = load_model(&model)?;
            let data = pipe.dataset()?;
            let n = subset.unwrap_or(cfg.physical_subset);
            let test = if n == 0 { data.test } else { data.test.head(n) };
            let layout = PhysicalLayout {
                sim: &pipe.sim,
                mode: cfg.injected_mode,
                detuning1: m.act1.detuning,
                detuning2: m.act2.detuning,
                fwhm1_ps: cfg.fwhm_layer1,
                fwhm2_ps: cfg.fwhm_layer2,
                grid: PulseGrid::default(),
            };
            let analytic = evaluate(&m, &test)?;
            let phys = evaluate_physical(&m, &layout, &test)?;
            write(pipe.out("physical_scatter.csv"), &phys.scatter_csv())?;
            write(
                pipe.out("physical_per_label.csv"),
                &per_label_csv(&analytic.per_label, &phys.per_label, &phys.label_counts),
            )?;
            println!(
                "physical_accuracy {} analytic_accuracy {} failures {} mean_fwhm_layer1_ps {}",
                phys.accuracy,
                analytic.accuracy,
                phys.failures,
                phys.mean_fwhm(1)
            );
        }
        Command::Sweep => {
            let lib = pipe.fit_all()?;
            let data = pipe.dataset()?;
            let spec = SweepSpec {
                layer1: &cfg.layer1_detunings,
                layer2: &cfg.layer2_detunings,
                fwhm1: cfg.fwhm_layer1,
                fwhm2: cfg.fwhm_layer2,
                hidden: cfg.hidden,
                config: cfg.train_config(),
                runs_file: Some(pipe.out("sweep_runs.csv")),
            };
            let result = detuning_sweep(&data.train, &data.test, &lib, &spec)?;
            write(pipe.out("sweep_mean.csv"), &result.aggregate_csv())?;
            let best = result.best();
            println!("best ({}, {}) mean_accuracy {}", best.dw1, best.dw2, best.mean_accuracy());
        }
    }
    Ok(())
}

fn load_model(path: &PathBuf) -> Result<MlpModel, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        Failure::Runtime(Error::Dependency(format!("cannot read {}: {e}", path.display())))
    })?;
    Ok(MlpModel::from_json(&text)?)
}

fn report(e: &Error) {
    let msg = serde_json::to_string(&e.to_string()).unwrap_or_default();
    eprintln!("error kind={} message={msg}", e.kind());
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            report(&e);
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            report(&e);
            ExitCode::from(1)
        }
    }
}
