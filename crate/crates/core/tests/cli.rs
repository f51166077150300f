use std::path::Path;
use std::process::Command;

use simpl::cli::config::RunConfig;
use simpl::cli::presets::ProblemKind;
use simpl::cli::{execute, Optimizer, StopRule};
use simpl::simpl::LineSearch;

fn binary() -> Command {
    Command::new(env!("CARGO_BIN_EXE_simpl"))
}

fn small_run(out: &Path) -> RunConfig {
    RunConfig {
        problem: ProblemKind::Mbb,
        nx: Some(48),
        ny: Some(16),
        max_iters: Some(40),
        out: out.to_path_buf(),
        ..Default::default()
    }
}

#[test]
fn small_mbb_writes_all_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("mbb");
    let status = binary()
        .args(["run", "--problem", "mbb", "--nx", "48", "--ny", "16", "--max-iters", "30", "--out"])
        .arg(&out)
        .status()
        .unwrap();
    let code = status.code().unwrap();
    assert!(code == 0 || code == 2, "exit code {code}");
    for name in ["convergence.csv", "density_final.pgm", "fields_final.vtk", "config_echo.json"] {
        assert!(out.join(name).is_file(), "{name} missing");
    }
    let csv = std::fs::read_to_string(out.join("convergence.csv")).unwrap();
    let rows = csv.lines().count() - 1;
    let last_iter: usize = csv.lines().last().unwrap().split(',').next().unwrap().parse().unwrap();
    assert_eq!(rows, last_iter + 1);
    assert_eq!(code == 2, last_iter == 30);
}

#[test]
fn csv_rows_match_trace_and_objective_decreases() {
    let dir = tempfile::tempdir().unwrap();
    let outcome = execute(&small_run(dir.path())).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("convergence.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "iter,F,alpha,mu,kkt,stationarity,backtracks,evals");
    assert_eq!(lines.len() - 1, outcome.trace.iterations() + 1);
    let f: Vec<f64> = lines[1..].iter().map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert!(f.windows(2).all(|w| w[1] <= w[0]));
    for (line, rec) in lines[1..].iter().zip(&outcome.trace.records) {
        let evals: usize = line.split(',').nth(7).unwrap().parse().unwrap();
        assert_eq!(evals, rec.evaluations);
        let parsed: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        assert_eq!(parsed, rec.objective);
    }
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    execute(&small_run(&a)).unwrap();
    execute(&small_run(&b)).unwrap();
    for name in ["convergence.csv", "density_final.pgm", "fields_final.vtk"] {
        assert_eq!(
            std::fs::read(a.join(name)).unwrap(),
            std::fs::read(b.join(name)).unwrap(),
            "{name} differs"
        );
    }
}

#[test]
fn vtk_output_parses() {
    use vtkio::model::{Attribute, DataSet, IOBuffer, Piece};
    let dir = tempfile::tempdir().unwrap();
    let outcome = execute(&small_run(dir.path())).unwrap();
    let vtk = vtkio::Vtk::import(dir.path().join("fields_final.vtk")).unwrap();
    let DataSet::ImageData { extent, pieces, .. } = vtk.data else {
        panic!("expected image data");
    };
    let dims = extent.into_dims();
    assert_eq!(dims, [49, 17, 1]);
    let Piece::Inline(piece) = &pieces[0] else {
        panic!("expected inline piece");
    };
    let field = |attrs: &[Attribute], name: &str| -> Vec<f64> {
        for a in attrs {
            if let Attribute::DataArray(d) = a {
                if d.name == name {
                    if let IOBuffer::F64(v) = &d.data {
                        return v.clone();
                    }
                }
            }
        }
        panic!("field {name} missing");
    };
    let rho = field(&piece.data.cell, "rho");
    assert_eq!(rho.len(), 48 * 16);
    for (a, b) in rho.iter().zip(&outcome.trace.rho.values) {
        assert!((a - b).abs() <= 1e-15 * b.abs().max(1e-300));
    }
    assert_eq!(field(&piece.data.cell, "E").len(), 48 * 16);
    assert_eq!(field(&piece.data.point, "rho_tilde").len(), 49 * 17);
    assert_eq!(field(&piece.data.point, "displacement").len(), 3 * 49 * 17);
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(
        &cfg,
        r#"{"problem": "mbb", "nx": 24, "ny": 8, "max_iters": 3, "line_search": "bregman", "write_vtk": false}"#,
    )
    .unwrap();
    let out = dir.path().join("o");
    let status = binary()
        .args(["run", "--nx", "36", "--ny", "12", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
    let echo: RunConfig =
        serde_json::from_str(&std::fs::read_to_string(out.join("config_echo.json")).unwrap()).unwrap();
    assert_eq!(echo.nx, Some(36));
    assert_eq!(echo.ny, Some(12));
    assert_eq!(echo.max_iters, Some(3));
    assert_eq!(echo.line_search, Some(LineSearch::Bregman));
    assert_eq!(echo.stop, Some(StopRule::S));
    assert!(!echo.write_vtk);
    assert!(!out.join("fields_final.vtk").exists());
    let pgm = std::fs::read_to_string(out.join("density_final.pgm")).unwrap();
    assert_eq!(pgm.lines().nth(2).unwrap(), "36 12");
}

#[test]
fn invalid_combination_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let output = binary()
        .args(["run", "--problem", "bridge", "--optimizer", "oc", "--nx", "16", "--ny", "8", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&output.stderr).contains("passive"));

    let output = binary().args(["run", "--stop", "bogus"]).output().unwrap();
    assert!(!output.status.success());
}

#[test]
fn baselines_run_through_the_driver() {
    let dir = tempfile::tempdir().unwrap();
    for optimizer in [Optimizer::Pgd, Optimizer::Oc] {
        let cfg = RunConfig {
            optimizer,
            nx: Some(24),
            ny: Some(8),
            max_iters: Some(5),
            out: dir.path().join(format!("{optimizer:?}")),
            ..Default::default()
        };
        let outcome = execute(&cfg).unwrap();
        assert!(outcome.trace.iterations() <= 5);
        assert!(outcome.trace.records.iter().all(|r| r.kkt.is_none()));
        assert!((outcome.volume_fraction - 0.3).abs() < 1e-8);
    }
}

#[test]
fn inverter_image_is_mirrored() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        problem: ProblemKind::Inverter,
        nx: Some(16),
        ny: Some(8),
        max_iters: Some(2),
        out: dir.path().to_path_buf(),
        ..Default::default()
    };
    execute(&cfg).unwrap();
    let pgm = std::fs::read_to_string(dir.path().join("density_final.pgm")).unwrap();
    let lines: Vec<&str> = pgm.lines().collect();
    assert_eq!(lines[2], "16 16");
    let body = &lines[4..];
    for j in 0..8 {
        assert_eq!(body[j], body[15 - j]);
    }
}
