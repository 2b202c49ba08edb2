use std::path::Path;
use std::process::{Command as Proc, Output};

use polydual::cli::config::{parse_str, Command};
use polydual::cli::report::{read_report, to_json};
use polydual::cli::{exit_code, run, EXIT_CONFIG, EXIT_OK};
use polydual::Error;

fn bin(args: &[&str], dir: &Path) -> Output {
    Proc::new(env!("CARGO_BIN_EXE_polydual")).args(args).current_dir(dir).output().unwrap()
}

const SMALL: &str = "
[domain]
n_cells = 32
n_lambda_nodes = 17

[space]
level = 2
";

#[test]
fn report_round_trips_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("run.toml");
    std::fs::write(&cfg_path, SMALL).unwrap();
    let out = bin(&["solve-compressible", "-c", "run.toml", "-o", "report.json"], dir.path());
    assert_eq!(out.status.code(), Some(EXIT_OK), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(dir.path().join("report.json")).unwrap();
    let rep = read_report(&dir.path().join("report.json")).unwrap();
    assert_eq!(to_json(&rep).unwrap(), text);
    assert_eq!(rep.schema_version, 1);
    assert_eq!(rep.version_hash.len(), 64);
    assert!(rep.primal.unwrap().weak_duality_ok);
}

#[test]
fn runs_are_identical_apart_from_wall_clock() {
    let cfg = parse_str(Command::SolveIncompressible, SMALL, &["solver.init=\"random\"".into(), "run.seed=7".into()]).unwrap();
    let mut a = run(&cfg).unwrap();
    let mut b = run(&cfg).unwrap();
    a.wall_clock_seconds = 0.0;
    b.wall_clock_seconds = 0.0;
    assert_eq!(to_json(&a).unwrap(), to_json(&b).unwrap());
}

#[test]
fn missing_output_directory_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("run.toml");
    std::fs::write(&cfg_path, SMALL).unwrap();
    let out = bin(&["vsf", "-c", "run.toml", "-o", "no/such/dir/report.json"], dir.path());
    assert_eq!(out.status.code(), Some(EXIT_CONFIG));
    assert!(String::from_utf8_lossy(&out.stderr).contains("output directory does not exist"));

    let cfg = parse_str(Command::Vsf, SMALL, &["output.report=\"/nonexistent/dir/r.json\"".into()]).unwrap();
    assert!(matches!(run(&cfg), Err(Error::Io { .. })));
}

#[test]
fn measure_mismatch_exits_with_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin(&["solve-incompressible", "--set", "domain.lambda_radius=0.25"], dir.path());
    assert_eq!(out.status.code(), Some(EXIT_CONFIG));
    assert!(String::from_utf8_lossy(&out.stderr).contains("configuration errors"));
    // the compressible problem accepts unequal measures
    let cfg = parse_str(Command::SolveCompressible, SMALL, &["domain.lambda_radius=0.25".into()]).unwrap();
    assert!(cfg.validate().is_empty());
}

#[test]
fn countable_range_forcing_needs_the_convex_family() {
    let bad = parse_str(
        Command::SolveCompressible,
        SMALL,
        &["forcing.kind=\"piecewise_constant\"".into(), "space.kind=\"h1\"".into()],
    );
    let errs = match bad {
        Err(Error::Config(e)) => e,
        Ok(cfg) => cfg.validate(),
        Err(e) => panic!("unexpected error {e}"),
    };
    assert!(!errs.is_empty());
    let good = parse_str(
        Command::SolveCompressible,
        SMALL,
        &["forcing.kind=\"piecewise_constant\"".into(), "space.kind=\"h2\"".into()],
    )
    .unwrap();
    assert!(good.validate().is_empty());
}

#[test]
fn unknown_keys_and_bad_values_are_reported() {
    assert!(matches!(parse_str(Command::Vsf, "[domain]\nn_cels = 4\n", &[]), Err(Error::Config(_))));
    let cfg = parse_str(Command::Vsf, "[space]\nlevel = 13\n", &[]);
    let invalid = match cfg {
        Ok(c) => !c.validate().is_empty(),
        Err(Error::Config(_)) => true,
        Err(_) => false,
    };
    assert!(invalid);
    let abs = parse_str(Command::SolveCompressible, "[integrand]\nfamily = \"abs\"\n", &[]);
    assert!(match abs {
        Ok(c) => !c.validate().is_empty(),
        Err(Error::Config(_)) => true,
        Err(_) => false,
    });
}

#[test]
fn check_command_passes_on_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin(&["check", "-o", "check.json"], dir.path());
    let err = String::from_utf8_lossy(&out.stderr);
    assert_eq!(out.status.code(), Some(EXIT_OK), "{err}");
    assert!(err.lines().filter(|l| l.starts_with("PASS ")).count() >= 7, "{err}");
    assert!(!err.contains("FAIL "));
    let rep = read_report(&dir.path().join("check.json")).unwrap();
    assert!(rep.checks.unwrap().iter().all(|c| c.passed));
}

#[test]
fn vsf_and_sweep_commands_write_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = parse_str(Command::Vsf, "[space]\nlevel = 4\n", &[]).unwrap();
    let rep = run(&cfg).unwrap();
    let v = rep.vsf.unwrap();
    assert_eq!(v.levels.len(), 4);
    assert!(v.levels.windows(2).all(|w| w[0].1 <= w[1].1 + 1e-10));

    let csv = dir.path().join("sweep.csv");
    let text = format!("{SMALL}\n[sweep]\nn_values = [1, 4]\n\n[output]\nsweep_csv = {:?}\n", csv.to_str().unwrap());
    let cfg = parse_str(Command::LimitSweep, &text, &[]).unwrap();
    let res = run(&cfg);
    assert_eq!(exit_code(&res), EXIT_OK);
    assert_eq!(res.unwrap().sweep.unwrap().rows.len(), 2);
    assert!(std::fs::read_to_string(csv).unwrap().starts_with("n,J_n,I_n,beta_l2,l1_to_baseline,tie_fraction\n"));
}
