use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use triplet_sec::powder::{edge_features, Spectrum};
use triplet_sec::table::Table;

const BIN: &str = env!("CARGO_BIN_EXE_sec-sim");

/// Config with lighter grids; the full defaults are covered by the acceptance suite.
const FAST: &str = "[numerics]\ntheta_points = 361\nstrain_nodes = 15\nphi_points = 36\n";

struct Run {
    dir: tempfile::TempDir,
}

impl Run {
    fn new(config: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("run.toml"), config).unwrap();
        Self { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn sec_sim(&self, args: &[&str]) -> Output {
        Command::new(BIN)
            .current_dir(self.dir.path())
            .args(args)
            .args(["--config", "run.toml", "--out", "out"])
            .output()
            .unwrap()
    }

    fn table(&self, name: &str) -> Table {
        Table::read(&self.path("out").join(name)).unwrap()
    }
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn spectrum_of(t: &Table) -> Spectrum {
    Spectrum::new(t.column("B_mT").unwrap(), t.column("intensity").unwrap()).unwrap()
}

#[test]
fn missing_config_flag_is_usage_error() {
    let o = Command::new(BIN).arg("spectrum").output().unwrap();
    assert_eq!(code(&o), 1);
    let o = Command::new(BIN).args(["spectrum", "--config", "/nonexistent/run.toml"]).output().unwrap();
    assert_eq!(code(&o), 1);
    let o = Command::new(BIN).arg("bogus").output().unwrap();
    assert_eq!(code(&o), 1);
}

#[test]
fn unknown_config_key_named() {
    let run = Run::new("[spin]\nDstrain = 3\n");
    let o = run.sec_sim(&["spectrum"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("Dstrain"), "{}", stderr(&o));
}

#[test]
fn sharp_spectrum_turning_points() {
    let run = Run::new(&format!("{FAST}[spin]\nD_strain_fwhm = 0\n[experiment]\nlinewidth_fwhm = 5\nfield_step = 0.02\n"));
    let o = run.sec_sim(&["spectrum"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let s = spectrum_of(&run.table("spectrum.csv"));
    let low = edge_features(&s, false).unwrap();
    let high = edge_features(&s, true).unwrap();
    // θ = 0 resonances (ν_mw ∓ D)/(g μ_B/h).
    let gmu = 2.0 * 13.996_244_9;
    assert!((low.inflection - (9700.0 - 317.0) / gmu).abs() < 0.1, "{low:?}");
    assert!((high.inflection - (9700.0 + 317.0) / gmu).abs() < 0.1, "{high:?}");
    assert!(low.sign > 0.0 && high.sign < 0.0);
}

#[test]
fn default_spectrum_records_positions() {
    let run = Run::new(FAST);
    assert_eq!(code(&run.sec_sim(&["spectrum"])), 0);
    let t = run.table("spectrum.csv");
    let z: f64 = t.meta("field_Z_mT").unwrap().parse().unwrap();
    assert!((330.0..336.0).contains(&z), "{z}");
    assert_eq!(t.meta("field_Int_mT"), Some("340"));
    assert_eq!(t.meta("field_Z_source"), Some("auto"));
    assert_eq!(t.meta("D_strain_model"), Some("gaussian_fwhm"));
    assert!(edge_features(&spectrum_of(&t), false).unwrap().sign > 0.0);
}

#[test]
fn unpolarised_spectrum_is_zero_with_warning() {
    let third = 1.0 / 3.0;
    let run = Run::new(&format!("{FAST}[spin.populations]\nplus = {third}\nzero = {third}\nminus = {}\n", 1.0 - 2.0 * third));
    let o = run.sec_sim(&["spectrum"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stderr(&o).contains("zero"), "{}", stderr(&o));
    let t = run.table("spectrum.csv");
    assert!(t.column("intensity").unwrap().iter().all(|v| v.abs() < 1e-12));
}

#[test]
fn isotropic_system_gives_one_line() {
    let run = Run::new(&format!(
        "{FAST}[spin]\nD = 0\nD_strain_fwhm = 0\npopulations = {{ plus = 0.08, zero = 0.9, minus = 0.02 }}\n[experiment]\nlinewidth_fwhm = 10\n"
    ));
    assert_eq!(code(&run.sec_sim(&["spectrum"])), 0);
    let s = spectrum_of(&run.table("spectrum.csv"));
    let peak = s.max_abs();
    assert!(peak > 0.0);
    let centre = 9700.0 / (2.0 * 13.996_244_9);
    let reach = 5.0 * 10.0 / 2.3548 / (2.0 * 13.996_244_9);
    for (b, v) in s.field.iter().zip(&s.intensity) {
        if v.abs() > 1e-4 * peak {
            assert!((b - centre).abs() < reach, "signal at {b} mT");
        }
    }
}

#[test]
fn off_resonance_orientations_fail_numerically() {
    let run = Run::new(FAST);
    let o = run.sec_sim(&["orientations", "--field", "100"]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("no resonant population"), "{}", stderr(&o));
}

#[test]
fn orientation_outputs() {
    let run = Run::new(FAST);
    let o = run.sec_sim(&["orientations"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for label in ["Z", "Int", "XY"] {
        let d = run.table(&format!("distribution_{label}.csv"));
        let theta = d.column("theta_deg").unwrap();
        assert_eq!((theta[0], *theta.last().unwrap()), (0.0, 180.0));
        assert!(d.column("weight").unwrap().iter().all(|w| *w >= 0.0));
        let e = run.table(&format!("effective_field_{label}.csv"));
        assert!(e.column("Eeff_V_per_m").is_some());
    }
    let map = run.table("resonance_map.csv");
    let b = map.column("B_mT").unwrap();
    let lo = b.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = b.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    assert!((hi - lo - 22.65).abs() < 0.05, "{lo} {hi}");
}

#[test]
fn zero_field_echo_is_flat_and_mirror_symmetric() {
    let run = Run::new(&format!("{FAST}[experiment]\nE = 0\n"));
    assert_eq!(code(&run.sec_sim(&["echo", "--position", "Z"])), 0);
    for g in ["par", "perp"] {
        let t = run.table(&format!("echo_Z_{g}.csv"));
        assert!(t.column("in_phase").unwrap().iter().all(|v| (v - 1.0).abs() < 1e-12));
        assert!(t.column("quadrature").unwrap().iter().all(|v| *v == 0.0));
    }
    let run = Run::new(FAST);
    assert_eq!(code(&run.sec_sim(&["echo", "--geometry", "par"])), 0);
    assert!(!run.path("out/echo_Z_perp.csv").exists());
    let t = run.table("echo_Z_par.csv");
    let v = t.column("in_phase").unwrap();
    for i in 0..v.len() {
        assert!((v[i] - v[v.len() - 1 - i]).abs() < 1e-9);
    }
    assert_eq!(run.table("echo_summary.csv").rows.len(), 3);
}

#[test]
fn echo_output_fits_back() {
    let cfg = format!("{FAST}[sec]\nkappa = 0.59\nsigma_kappa = 0.15\n[paths]\ninputs = [\"data\"]\n");
    let run = Run::new(&cfg);
    assert_eq!(code(&run.sec_sim(&["echo"])), 0);
    fs::create_dir(run.path("data")).unwrap();
    for entry in fs::read_dir(run.path("out")).unwrap() {
        let p = entry.unwrap().path();
        let name = p.file_name().unwrap().to_string_lossy().into_owned();
        if name.starts_with("echo_") && name != "echo_summary.csv" {
            fs::copy(&p, run.path("data").join(name)).unwrap();
        }
    }
    let o = run.sec_sim(&["fit"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("kappa"), "{stdout}");
    assert!(stdout.contains("min detectable field"));
    let result = fs::read_to_string(run.path("out/fit_result.txt")).unwrap();
    let value = |key: &str| -> f64 {
        result.lines().find_map(|l| l.strip_prefix(&format!("{key}="))).unwrap().parse().unwrap()
    };
    assert!((value("kappa") - 0.59).abs() < 0.05 * 0.59);
    assert!((value("sigma_kappa") - 0.15).abs() < 0.2 * 0.15);
    assert_eq!(result.lines().find(|l| l.starts_with("converged=")), Some("converged=true"));
    let overlays = fs::read_dir(run.path("out")).unwrap().filter(|e| {
        e.as_ref().unwrap().file_name().to_string_lossy().starts_with("fit_overlay_")
    });
    assert_eq!(overlays.count(), 6);
}

#[test]
fn fit_input_errors() {
    let run = Run::new(&format!("{FAST}[paths]\ninputs = []\n"));
    assert_eq!(code(&run.sec_sim(&["fit"])), 1);

    let run = Run::new(&format!("{FAST}[paths]\ninputs = [\"bad.csv\"]\n"));
    fs::write(
        run.path("bad.csv"),
        "# position=Z\n# geometry=par\n# E_V_per_m=1500000\n# tau_us=2\nt_E_us,echo\n0,1\n0.1,abc\n",
    )
    .unwrap();
    let o = run.sec_sim(&["fit"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("bad.csv:7"), "{}", stderr(&o));

    let run = Run::new(&format!("{FAST}[paths]\ninputs = [\"nometa.csv\"]\n"));
    fs::write(run.path("nometa.csv"), "t_E_us,echo\n0,1\n").unwrap();
    let o = run.sec_sim(&["fit"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("position"), "{}", stderr(&o));
}

#[test]
fn sensitivity_report() {
    let run = Run::new(FAST);
    let o = run.sec_sim(&["sensitivity", "--position", "Z", "--geometry", "par"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = fs::read_to_string(run.path("out/sensitivity.txt")).unwrap();
    let s: f64 = text.lines().find_map(|l| l.strip_prefix("sensitivity_Z_par=")).unwrap().parse().unwrap();
    assert!((0.36..=0.59).contains(&s), "{s}");
    let depth: f64 = text.lines().find_map(|l| l.strip_prefix("depth_at_delta_f_min=")).unwrap().parse().unwrap();
    assert!((depth - 0.289).abs() < 0.005);
}

fn read_all(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn runs_are_deterministic_and_readable() {
    let run = Run::new(FAST);
    assert_eq!(code(&run.sec_sim(&["orientations", "--position", "XY"])), 0);
    let first = read_all(&run.path("out"));
    fs::remove_dir_all(run.path("out")).unwrap();
    assert_eq!(code(&run.sec_sim(&["orientations", "--position", "XY"])), 0);
    assert_eq!(read_all(&run.path("out")), first);
    for (name, bytes) in &first {
        if name.ends_with(".csv") {
            let text = String::from_utf8(bytes.clone()).unwrap();
            let table = Table::parse(&text, Path::new(name)).unwrap();
            assert_eq!(table.render(), text);
        }
    }
}
