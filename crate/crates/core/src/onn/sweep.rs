use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{init_model, Dims};
use super::train::{epochs_to_accuracy, train, TrainConfig};
use crate::actfit::ActivationCoeffs;
use crate::dataio::fsutil::{atomic_write, split_metadata};
use crate::dataio::Split;
use crate::error::{Error, Result};
use crate::laser::OMEGA_UNIT;

/// Train accuracy used for the convergence-speed comparison.
pub const CONVERGENCE_TARGET: f64 = 0.90;

/// Fitted activations keyed by (detuning in Ω, FWHM in ps).
#[derive(Debug, Clone, Default)]
pub struct CoeffLibrary {
    map: HashMap<String, ActivationCoeffs>,
}

fn key(detuning_omega: f64, fwhm_ps: f64) -> String {
    format!("{detuning_omega:.3}@{fwhm_ps:.2}")
}

impl CoeffLibrary {
    pub fn insert(&mut self, c: ActivationCoeffs) {
        self.map.insert(key(c.detuning / OMEGA_UNIT, c.fwhm_ps), c);
    }

    pub fn get(&self, detuning_omega: f64, fwhm_ps: f64) -> Result<&ActivationCoeffs> {
        self.map.get(&key(detuning_omega, fwhm_ps)).ok_or_else(|| {
            Error::Dependency(format!(
                "no fitted activation for detuning {detuning_omega}Ω at {fwhm_ps} ps"
            ))
        })
    }

    pub fn iter(&self) -> impl Iterator<Item = &ActivationCoeffs> {
        self.map.values()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn file_name(detuning_omega: f64, fwhm_ps: f64) -> String {
        format!("coeffs_{detuning_omega}_{fwhm_ps}ps.json")
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        for c in self.map.values() {
            let name = Self::file_name(c.detuning / OMEGA_UNIT, c.fwhm_ps);
            atomic_write(&dir.join(name), c.to_json()?.as_bytes())?;
        }
        Ok(())
    }

    /// Every `coeffs_*.json` file in `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let mut lib = Self::default();
        let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        for entry in entries {
            let path = entry.map_err(|e| Error::io(dir, e))?.path();
            let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
            if name.starts_with("coeffs_") && name.ends_with(".json") {
                let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                lib.insert(ActivationCoeffs::from_json(&text)?);
            }
        }
        Ok(lib)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub run: usize,
    pub accuracy: f64,
    pub loss: f64,
    pub epochs_to_target: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    /// Ω units
    pub dw1: f64,
    pub dw2: f64,
    pub runs: Vec<RunResult>,
}

impl SweepCell {
    pub fn mean_accuracy(&self) -> f64 {
        self.runs.iter().map(|r| r.accuracy).sum::<f64>() / self.runs.len() as f64
    }

    pub fn mean_loss(&self) -> f64 {
        self.runs.iter().map(|r| r.loss).sum::<f64>() / self.runs.len() as f64
    }

    /// Mean epochs to the convergence target; runs that never reach it count
    /// as one past the last epoch.
    pub fn mean_epochs_to_target(&self, epochs: usize) -> f64 {
        self.runs
            .iter()
            .map(|r| r.epochs_to_target.unwrap_or(epochs + 1) as f64)
            .sum::<f64>()
            / self.runs.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub layer1: Vec<f64>,
    pub layer2: Vec<f64>,
    /// Row-major over (layer1, layer2).
    pub cells: Vec<SweepCell>,
}

impl SweepResult {
    pub fn cell(&self, dw1: f64, dw2: f64) -> Option<&SweepCell> {
        self.cells.iter().find(|c| c.dw1 == dw1 && c.dw2 == dw2)
    }

    pub fn best(&self) -> &SweepCell {
        self.cells
            .iter()
            .max_by(|a, b| a.mean_accuracy().total_cmp(&b.mean_accuracy()))
            .expect("sweep has cells")
    }

    pub fn aggregate_csv(&self) -> String {
        let mut s = String::from("dw1_omega,dw2_omega,mean_accuracy,mean_loss,runs\n");
        for c in &self.cells {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                c.dw1,
                c.dw2,
                c.mean_accuracy(),
                c.mean_loss(),
                c.runs.len()
            ));
        }
        s
    }
}

type RunKey = (u64, u64, usize);

fn run_key(dw1: f64, dw2: f64, run: usize) -> RunKey {
    (dw1.to_bits(), dw2.to_bits(), run)
}

fn runs_csv(hidden: usize, rows: &BTreeMap<RunKey, (f64, f64, RunResult)>) -> String {
    let mut s = format!("# hidden={hidden}\ndw1_omega,dw2_omega,run,accuracy,loss,epochs_to_90\n");
    for (dw1, dw2, r) in rows.values() {
        let e = r.epochs_to_target.map_or(String::new(), |e| e.to_string());
        s.push_str(&format!("{dw1},{dw2},{},{},{},{e}\n", r.run, r.accuracy, r.loss));
    }
    s
}

fn parse_runs_csv(text: &str) -> Result<Vec<(f64, f64, RunResult)>> {
    let (_, body) = split_metadata(text);
    let bad = |l: &str| Error::Config(format!("sweep CSV: bad row `{l}`"));
    body.iter()
        .skip(1)
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                return Err(bad(line));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad(line));
            Ok((
                num(f[0])?,
                num(f[1])?,
                RunResult {
                    run: f[2].parse().map_err(|_| bad(line))?,
                    accuracy: num(f[3])?,
                    loss: num(f[4])?,
                    epochs_to_target: if f[5].is_empty() {
                        None
                    } else {
                        Some(f[5].parse().map_err(|_| bad(line))?)
                    },
                },
            ))
        })
        .collect()
}

/// Options for [`detuning_sweep`].
#[derive(Debug, Clone)]
pub struct SweepSpec<'a> {
    /// Ω units
    pub layer1: &'a [f64],
    pub layer2: &'a [f64],
    pub fwhm1: f64,
    pub fwhm2: f64,
    pub hidden: usize,
    pub config: TrainConfig,
    /// Per-run results are rewritten here after every finished run and
    /// read back to skip completed runs.
    pub runs_file: Option<PathBuf>,
}

/// Train `config.runs` models for every (Δω1, Δω2) pair and collect the
/// test metrics. Run r of every cell uses seed `config.seed + r`.
pub fn detuning_sweep(
    train_split: &Split,
    test: &Split,
    library: &CoeffLibrary,
    spec: &SweepSpec,
) -> Result<SweepResult> {
    spec.config.validate()?;
    if spec.layer1.is_empty() || spec.layer2.is_empty() {
        return Err(Error::Precondition("empty detuning grid".into()));
    }
    for &d in spec.layer1 {
        library.get(d, spec.fwhm1)?;
    }
    for &d in spec.layer2 {
        library.get(d, spec.fwhm2)?;
    }
    let mut done = BTreeMap::new();
    if let Some(path) = &spec.runs_file {
        if path.exists() {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            for (a, b, r) in parse_runs_csv(&text)? {
                done.insert(run_key(a, b, r.run), (a, b, r));
            }
        }
    }
    let mut todo = Vec::new();
    for &a in spec.layer1 {
        for &b in spec.layer2 {
            for run in 0..spec.config.runs {
                if !done.contains_key(&run_key(a, b, run)) {
                    todo.push((a, b, run));
                }
            }
        }
    }
    log::info!("sweep: {} runs to do, {} already complete", todo.len(), done.len());
    let done = Mutex::new(done);
    todo.par_iter().try_for_each(|&(a, b, run)| -> Result<()> {
        let act1 = library.get(a, spec.fwhm1)?.clone();
        let act2 = library.get(b, spec.fwhm2)?.clone();
        let seed = spec.config.seed + run as u64;
        let model = init_model(Dims::mnist(spec.hidden), act1, act2, seed)?;
        let cfg = TrainConfig {
            seed,
            ..spec.config.clone()
        };
        let (model, history) = train(train_split, None, model, &cfg)?;
        let eval = super::train::evaluate(&model, test)?;
        let result = RunResult {
            run,
            accuracy: eval.accuracy,
            loss: eval.loss,
            epochs_to_target: epochs_to_accuracy(&history, CONVERGENCE_TARGET),
        };
        log::info!("cell ({a}, {b}) run {run}: accuracy {:.4}", eval.accuracy);
        let mut guard = done.lock().expect("sweep results");
        guard.insert(run_key(a, b, run), (a, b, result));
        if let Some(path) = &spec.runs_file {
            atomic_write(path, runs_csv(spec.hidden, &guard).as_bytes())?;
        }
        Ok(())
    })?;
    let done = done.into_inner().expect("sweep results");
    let mut cells = Vec::new();
    for &a in spec.layer1 {
        for &b in spec.layer2 {
            let runs = (0..spec.config.runs)
                .map(|r| done[&run_key(a, b, r)].2.clone())
                .collect();
            cells.push(SweepCell { dw1: a, dw2: b, runs });
        }
    }
    Ok(SweepResult {
        layer1: spec.layer1.to_vec(),
        layer2: spec.layer2.to_vec(),
        cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_coefficients_name_the_detuning() {
        let lib = CoeffLibrary::default();
        let err = lib.get(-29.0, 40.0).unwrap_err();
        assert!(matches!(err, Error::Dependency(_)));
        assert!(err.to_string().contains("-29"));
    }

    #[test]
    fn library_round_trip() {
        let mut lib = CoeffLibrary::default();
        let mut c = ActivationCoeffs::new([1.5, 1.2, 0.9, 1.0, 0.8, 1.3, 0.05], 50.0).unwrap();
        c.detuning = -29.0 * OMEGA_UNIT;
        c.fwhm_ps = 40.0;
        lib.insert(c.clone());
        let dir = tempfile::tempdir().unwrap();
        lib.save(dir.path()).unwrap();
        let back = CoeffLibrary::load_dir(dir.path()).unwrap();
        assert_eq!(back.get(-29.0, 40.0).unwrap(), &c);
    }

    #[test]
    fn runs_csv_round_trip() {
        let mut rows = BTreeMap::new();
        let r = RunResult {
            run: 2,
            accuracy: 0.912345678901,
            loss: 0.3,
            epochs_to_target: Some(17),
        };
        rows.insert(run_key(-29.0, -27.0, 2), (-29.0, -27.0, r.clone()));
        let r2 = RunResult {
            epochs_to_target: None,
            run: 0,
            ..r.clone()
        };
        rows.insert(run_key(-30.0, -27.0, 0), (-30.0, -27.0, r2.clone()));
        let parsed = parse_runs_csv(&runs_csv(10, &rows)).unwrap();
        assert!(parsed.contains(&(-29.0, -27.0, r)));
        assert!(parsed.contains(&(-30.0, -27.0, r2)));
    }
}
