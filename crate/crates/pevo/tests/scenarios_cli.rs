//! Run configurations, the pipeline driver and the `pevo` binary.

use pevo::linear::Trajectory;
use pevo::scenarios::{
    config_schema, list_presets, run_pipeline, stages_for, PackConfig, RunConfig, Scenario, SolveMode, Stage,
    EXIT_AUDIT, EXIT_CONDITION, EXIT_CONFIG, SCHEMA_VERSION,
};
use pevo::{Grid, PevoError};
use std::path::{Path, PathBuf};
use std::process::Command;

fn config_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn load(name: &str) -> RunConfig {
    let text = std::fs::read_to_string(config_dir().join(name)).unwrap();
    RunConfig::from_json(&text).unwrap()
}

fn pevo() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pevo"))
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    std::fs::read(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

#[test]
fn shipped_configs_parse_and_golden_matches_the_builtin() {
    for entry in std::fs::read_dir(config_dir()).unwrap() {
        let path = entry.unwrap().path();
        if path.to_string_lossy().ends_with(".schema.json") {
            continue;
        }
        let text = std::fs::read_to_string(&path).unwrap();
        RunConfig::from_json(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    }
    assert_eq!(load("golden.json"), RunConfig::golden());
    // serialization round trip
    let golden = RunConfig::golden();
    let text = serde_json::to_string(&golden).unwrap();
    assert_eq!(RunConfig::from_json(&text).unwrap(), golden);
}

#[test]
fn published_schema_is_current() {
    let text = std::fs::read_to_string(config_dir().join("run-config.schema.json")).unwrap();
    let published: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(published, config_schema(), "regenerate with `pevo --print-schema`");
    let o = pevo().arg("--print-schema").output().unwrap();
    let printed: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(printed, published);
    // every config block rejects unknown fields
    let defs = published["$defs"].as_object().unwrap();
    for (name, def) in defs {
        if def["type"] == "object" {
            assert_eq!(def["additionalProperties"], false, "{name}");
        }
    }
}

#[test]
fn malformed_configs_are_config_errors() {
    let golden = serde_json::to_value(RunConfig::golden()).unwrap();
    let mutate = |f: &dyn Fn(&mut serde_json::Value)| {
        let mut v = golden.clone();
        f(&mut v);
        RunConfig::from_json(&v.to_string())
    };
    type Mutation = Box<dyn Fn(&mut serde_json::Value)>;
    let cases: Vec<(&str, Mutation)> = vec![
        ("unknown top-level field", Box::new(|v| v["colour"] = 1.into())),
        ("unknown nested field", Box::new(|v| v["solver"]["stepsize"] = 1.into())),
        ("schema version", Box::new(|v| v["schema_version"] = (SCHEMA_VERSION + 1).into())),
        ("odd grid", Box::new(|v| v["grid"]["n"] = 127.into())),
        ("non-integral step", Box::new(|v| v["solver"]["dt"] = 3e-5.into())),
        ("unknown preset", Box::new(|v| v["scenario"]["preset"] = "burgers".into())),
        ("bad epsilon", Box::new(|v| v["solver"]["epsilon"] = 0.09.into())),
        ("bad taper", Box::new(|v| v["pack"]["taper"]["end"] = 1.5.into())),
        ("bad neumann target", Box::new(|v| v["pack"]["tune"]["neumann_target"] = 1.0.into())),
        ("bad width", Box::new(|v| v["initial"]["width"] = (-1.0).into())),
    ];
    for (what, f) in cases {
        assert!(matches!(mutate(&*f), Err(PevoError::Config(_))), "{what} accepted");
    }
    assert!(matches!(RunConfig::from_json("{ not json"), Err(PevoError::Config(_))));
}

#[test]
fn presets_are_listed_and_buildable() {
    let presets = list_presets();
    let names: Vec<&str> = presets.iter().map(|p| p.name).collect();
    assert_eq!(names, ["kdv", "schrodinger", "decaying_im", "constant_im", "constant"]);
    let grid = Grid::new(32, 10.0).unwrap();
    for p in &presets {
        assert_eq!(p.default.name(), p.name);
        assert!(p.default.coefficients(&grid).is_ok(), "{}", p.name);
        // the catalogue entry is a valid scenario block
        let json = serde_json::to_value(&p.default).unwrap();
        assert_eq!(serde_json::from_value::<Scenario>(json).unwrap(), p.default);
    }
}

#[test]
fn subcommands_map_to_stages() {
    let mut cfg = RunConfig::golden();
    assert_eq!(stages_for("check", &cfg).unwrap(), [Stage::Check]);
    assert_eq!(stages_for("pipeline", &cfg).unwrap(), [Stage::Check, Stage::Tune, Stage::SolveLinear, Stage::Audit]);
    cfg.solver.mode = SolveMode::Newton;
    assert_eq!(stages_for("audit", &cfg).unwrap(), [Stage::Newton, Stage::Audit]);
    assert!(matches!(stages_for("launch", &cfg), Err(PevoError::Config(_))));
}

#[test]
fn golden_pipeline_is_deterministic() {
    let cfg = RunConfig::golden();
    let stages = stages_for("pipeline", &cfg).unwrap();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ra = run_pipeline(&cfg, &stages, Some(a.path()));
    assert_eq!(ra.exit_code, 0, "{:?}", ra.failure);
    assert!(ra.decay.as_ref().unwrap().all_pass());
    assert!(ra.audit.as_ref().unwrap().pass());
    let rb = run_pipeline(&cfg, &stages, Some(b.path()));
    assert_eq!(rb.exit_code, 0);
    for name in ["resolved-config.json", "decay-report.json", "pack-report.json", "norms.csv"] {
        assert_eq!(read(a.path(), name), read(b.path(), name), "{name} differs between runs");
    }
    assert!(!a.path().join("failure.json").exists());
    // the resolved configuration reproduces the run
    let resolved = String::from_utf8(read(a.path(), "resolved-config.json")).unwrap();
    assert_eq!(RunConfig::from_json(&resolved).unwrap(), cfg);
}

#[test]
fn newton_pipeline_writes_reports_and_frames() {
    let cfg = load("kdv_newton.json");
    let dir = tempfile::tempdir().unwrap();
    let out = run_pipeline(&cfg, &stages_for("pipeline", &cfg).unwrap(), Some(dir.path()));
    assert_eq!(out.exit_code, 0, "{:?}", out.failure);
    assert!(out.newton.as_ref().unwrap().converged);
    let report: serde_json::Value = serde_json::from_slice(&read(dir.path(), "newton-report.json")).unwrap();
    assert_eq!(report["converged"], true);
    let grid = cfg.build_grid().unwrap();
    let frames = Trajectory::read_frames(read(dir.path(), "frames.bin").as_slice(), &grid).unwrap();
    let traj = out.trajectory.unwrap();
    assert_eq!(frames.times(), traj.times());
    assert_eq!(frames.sub(&traj).unwrap().sup_l2(), 0.0);
}

#[test]
fn failing_gates_produce_their_exit_codes() {
    // non-decaying Im a₂ fails the condition check
    let cfg = load("constant_im.json");
    let dir = tempfile::tempdir().unwrap();
    let out = run_pipeline(&cfg, &stages_for("pipeline", &cfg).unwrap(), Some(dir.path()));
    assert_eq!(out.exit_code, EXIT_CONDITION);
    let rec = out.failure.unwrap();
    assert_eq!(rec.stage, Stage::Check);
    let written: serde_json::Value = serde_json::from_slice(&read(dir.path(), "failure.json")).unwrap();
    assert_eq!(written["exit_code"], EXIT_CONDITION);
    assert_eq!(written["stage"], "check");

    // without the transform the same flow fails the energy audit
    let mut cfg = RunConfig::golden();
    cfg.pack = PackConfig { skip_tune: true, ..PackConfig::default() };
    let out = run_pipeline(&cfg, &stages_for("pipeline", &cfg).unwrap(), None);
    assert_eq!(out.exit_code, EXIT_AUDIT, "{:?}", out.failure);
    assert_eq!(out.failure.unwrap().stage, Stage::Audit);
    assert!(out.artifacts.is_empty());
}

#[test]
fn binary_reports_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let run = |args: &[&str]| pevo().args(args).output().unwrap();
    let cfg = |name: &str| config_dir().join(name).to_string_lossy().into_owned();
    let out_dir = dir.path().join("ok");
    let o = run(&["check", "--config", &cfg("golden.json"), "--out", out_dir.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out_dir.join("decay-report.json").exists());

    let o = run(&["check", "--config", &cfg("constant_im.json"), "--out", dir.path().join("bad").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(EXIT_CONDITION));

    let broken = dir.path().join("broken.json");
    std::fs::write(&broken, r#"{"schema_version": 1, "typo": true}"#).unwrap();
    let fail_dir = dir.path().join("broken");
    let o = run(&["pipeline", "--config", broken.to_str().unwrap(), "--out", fail_dir.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(EXIT_CONFIG));
    assert!(fail_dir.join("failure.json").exists());

    // the paired run without the transform fails the audit gate
    let o = run(&[
        "audit",
        "--skip-tune",
        "--config",
        &cfg("golden.json"),
        "--out",
        dir.path().join("raw").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(EXIT_AUDIT));
    let rec: serde_json::Value = serde_json::from_slice(&read(&dir.path().join("raw"), "failure.json")).unwrap();
    assert_eq!(rec["stage"], "audit");

    let o = run(&["--list-presets"]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("kdv") && text.contains("constant_im"));
}

#[test]
fn binary_runs_several_configs_in_parallel() {
    let dir = tempfile::tempdir().unwrap();
    let configs: Vec<String> = ["kdv_newton.json", "kdv_bump_newton.json", "constant_im.json"]
        .iter()
        .map(|n| config_dir().join(n).to_string_lossy().into_owned())
        .collect();
    let mut args = vec!["check".to_string(), "--jobs".into(), "3".into(), "--out".into()];
    args.push(dir.path().to_string_lossy().into_owned());
    args.push("--config".into());
    args.extend(configs);
    let o = pevo().args(&args).output().unwrap();
    // the first failing configuration decides the exit code
    assert_eq!(o.status.code(), Some(EXIT_CONDITION));
    for stem in ["kdv_newton", "kdv_bump_newton", "constant_im"] {
        assert!(dir.path().join(stem).join("resolved-config.json").exists(), "{stem}");
    }
    assert!(dir.path().join("constant_im/failure.json").exists());
    assert!(!dir.path().join("kdv_newton/failure.json").exists());
}
