use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fpld_core::dataio::idx::encode_idx;

fn fpld(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fpld"))
        .args(args)
        .env("RUST_LOG", "info")
        .output()
        .expect("spawn fpld")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Small, learnable images: label k lights up rows 2k..2k+2.
fn write_split(dir: &Path, prefix: &str, n: usize) {
    let mut pixels = vec![0u8; n * 784];
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let k = (i % 10) as u8;
        labels.push(k);
        for r in 2 * k as usize + 4..2 * k as usize + 6 {
            for c in 4..24 {
                pixels[i * 784 + r * 28 + c] = 200 + (i % 50) as u8;
            }
        }
    }
    let (img, lab) = encode_idx(&pixels, n, 28, 28, &labels);
    std::fs::write(dir.join(format!("{prefix}-images-idx3-ubyte")), img).unwrap();
    std::fs::write(dir.join(format!("{prefix}-labels-idx1-ubyte")), lab).unwrap();
}

/// Coarse, fast settings shared by the tests.
fn config(root: &Path) -> PathBuf {
    let data = root.join("data");
    std::fs::create_dir_all(&data).unwrap();
    write_split(&data, "train", 200);
    write_split(&data, "t10k", 50);
    let text = format!(
        "layer1_detunings = [-25, -26]\n\
         layer2_detunings = [-20, -21]\n\
         p_in_max = 20\n\
         grid_points = 11\n\
         refine_step = 0\n\
         fit_restarts = 2\n\
         dataset = \"synthetic\"\n\
         data_dir = {:?}\n\
         output_dir = {:?}\n\
         batch_size = 32\n\
         epochs = 2\n\
         runs = 1\n",
        data.display().to_string(),
        root.join("out").display().to_string()
    );
    let path = root.join("run.toml");
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn transfer_writes_a_curve() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path());
    let o = fpld(&["transfer", "--detuning=-25", "--fwhm=40", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("out/transfer_-25_40ps.csv")).unwrap();
    assert!(csv.starts_with('#'));
    assert!(csv.contains("p_in_mw,p_out_mw"));
    assert_eq!(csv.lines().filter(|l| !l.starts_with('#')).count(), 12);
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(code(&fpld(&[])), 2);
    assert_eq!(code(&fpld(&["transfer", "--bogus"])), 2);
    let o = fpld(&["fit", "--set", "no_such_key=1"]);
    assert_eq!(code(&o), 2);
    let line = stderr(&o);
    let last = line.lines().last().unwrap();
    assert!(last.starts_with("error kind=config message=\""), "{last}");
}

#[test]
fn runtime_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path());
    let o = fpld(&["eval", "--model", "missing.json", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).lines().last().unwrap().starts_with("error kind="));
}

#[test]
fn sweep_resumes_without_recomputing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path());
    let args = ["sweep", "--jobs", "1", "--config", cfg.to_str().unwrap()];
    let o = fpld(&args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let runs = dir.path().join("out/sweep_runs.csv");
    let full = std::fs::read_to_string(&runs).unwrap();
    let rows: Vec<&str> = full.lines().filter(|l| !l.starts_with('#')).skip(1).collect();
    assert_eq!(rows.len(), 4);
    for r in &rows {
        let acc: f64 = r.split(',').nth(3).unwrap().parse().unwrap();
        assert!(acc > 0.1, "{r}");
    }

    // Nothing left to do: the rerun trains nothing and leaves the file alone.
    let o = fpld(&args);
    assert_eq!(code(&o), 0);
    assert!(stderr(&o).contains("0 runs to do, 4 already complete"), "{}", stderr(&o));
    assert_eq!(std::fs::read_to_string(&runs).unwrap(), full);

    // Interrupted sweep: drop the last row and resume.
    let cut = full.trim_end().rsplit_once('\n').unwrap().0.to_string() + "\n";
    std::fs::write(&runs, &cut).unwrap();
    let o = fpld(&args);
    assert_eq!(code(&o), 0);
    assert!(stderr(&o).contains("1 runs to do, 3 already complete"), "{}", stderr(&o));
    assert_eq!(std::fs::read_to_string(&runs).unwrap(), full);
    assert!(dir.path().join("out/sweep_mean.csv").exists());
}
