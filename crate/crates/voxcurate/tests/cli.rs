mod common;

use std::process::Command;

use common::{vc, SMALL};
use voxcurate::error::CliError;

fn exit_code(root: &std::path::Path, args: &[&str]) -> i32 {
    let out = Command::new(env!("CARGO_BIN_EXE_voxcurate")).arg("--root").arg(root).args(args).output().unwrap();
    out.status.code().unwrap()
}

fn synthesized() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    vc(dir.path(), "synth", SMALL).unwrap();
    dir
}

#[test]
fn eval_before_backend_is_a_stage_order_error() {
    let dir = synthesized();
    let err = vc(dir.path(), "eval", &[]).unwrap_err();
    assert!(matches!(err, CliError::StageOrder { stage: "eval", run: "backend", .. }), "{err}");
    assert_eq!(err.exit_code(), 5);
}

#[test]
fn stages_refuse_to_run_out_of_order() {
    let dir = synthesized();
    let root = dir.path();
    for (cmd, run) in [("shots", "template"), ("track", "template"), ("clean", "backend"), ("sweep", "backend")] {
        match vc(root, cmd, &[]) {
            Err(CliError::StageOrder { run: r, .. }) => assert_eq!(r, run, "{cmd}"),
            other => panic!("{cmd}: {other:?}"),
        }
    }
    assert!(matches!(vc(root, "backend", &[]), Err(CliError::StageOrder { run: "segments", .. })));
    assert!(matches!(vc(root, "synth --phase embed", &[]), Err(CliError::StageOrder { run: "segments", .. })));
    vc(root, "template", &[]).unwrap();
    assert!(matches!(vc(root, "track", &[]), Err(CliError::StageOrder { run: "shots", .. })));
    assert!(matches!(vc(root, "segments", &[]), Err(CliError::StageOrder { run: "shots", .. })));
    vc(root, "shots", &[]).unwrap();
    assert!(matches!(vc(root, "segments", &[]), Err(CliError::StageOrder { run: "track", .. })));
    vc(root, "track", &[]).unwrap();
    vc(root, "segments", &[]).unwrap();
    assert!(matches!(vc(root, "backend", &[]), Err(CliError::StageOrder { run: "synth --phase embed", .. })));
}

#[test]
fn exit_codes_distinguish_error_classes() {
    let empty = tempfile::tempdir().unwrap();
    assert_eq!(exit_code(empty.path(), &["report"]), 3);
    assert_eq!(exit_code(empty.path(), &["no-such-command"]), 2);
    assert_eq!(exit_code(empty.path(), &["report", "--set", "cleaning.colour=1"]), 4);

    let dir = synthesized();
    let root = dir.path();
    assert_eq!(exit_code(root, &["report"]), 0);
    assert_eq!(exit_code(root, &["eval"]), 5);
    assert_eq!(exit_code(root, &["clean", "--eps", "0.1,0.2"]), 2);

    std::fs::write(root.join("photos/spk0000.emb"), b"EMB1\x04\0\0\0").unwrap();
    assert_eq!(exit_code(root, &["template"]), 6);

    std::fs::write(root.join("manifest.json"), b"{\"schema_version\": 1}").unwrap();
    assert_eq!(exit_code(root, &["report"]), 4);
}

#[test]
fn manifest_must_reference_existing_files() {
    let dir = synthesized();
    let root = dir.path();
    for c in ["template", "shots"] {
        vc(root, c, &[]).unwrap();
    }
    std::fs::remove_file(root.join("videos/spk0003_v00.syn")).unwrap();
    let err = vc(root, "report", &[]).unwrap_err();
    assert!(matches!(&err, CliError::MissingInput { path, .. } if path.ends_with("videos/spk0003_v00.syn")), "{err}");
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let cfg = root.join("bad.cfg");
    std::fs::write(&cfg, "tracker.cost.c_detect = 8\ntracker.cost.c_dettect = 8\n").unwrap();
    let err = vc(root, "synth", &["--config", cfg.to_str().unwrap()]).unwrap_err();
    assert!(matches!(&err, CliError::Schema { message, .. } if message.contains("c_dettect")), "{err}");

    std::fs::write(&cfg, r#"{"synth": {"n_speakers": 4, "speakers": 4}}"#).unwrap();
    assert!(matches!(vc(root, "synth", &["--config", cfg.to_str().unwrap()]), Err(CliError::Schema { .. })));
    assert!(matches!(vc(root, "synth", &["--set", "seeed=1"]), Err(CliError::Schema { .. })));
}

#[test]
fn out_of_range_config_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    for bad in ["synth.switch_rate=1.0", "cleaning.grid=[0.2, 0.1]", "tracker.verify_interval=0", "dcf.p_target=0"] {
        let err = vc(dir.path(), "synth", &["--set", bad]).unwrap_err();
        assert_eq!(err.exit_code(), 4, "{bad}: {err}");
    }
    assert!(matches!(vc(dir.path(), "synth", &["--set", "seed"]), Err(CliError::Usage(_))));
}

#[test]
fn key_value_config_file_drives_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let cfg = root.join("run.cfg");
    std::fs::write(&cfg, "# small world\nsynth.n_speakers = 5\nsynth.nationalities = [\"ko\"]\nseed = 9\n").unwrap();
    vc(root, "synth", &["--config", cfg.to_str().unwrap(), "--seed", "11"]).unwrap();
    let written: serde_json::Value = serde_json::from_slice(&std::fs::read(root.join("config.json")).unwrap()).unwrap();
    assert_eq!(written["synth"]["n_speakers"], 5);
    assert_eq!(written["seed"], 11);
    assert_eq!(written["tracker"]["verify_interval"], serde_json::Value::Null);
    let m: serde_json::Value = serde_json::from_slice(&std::fs::read(root.join("manifest.json")).unwrap()).unwrap();
    assert!(m["speakers"].as_array().unwrap().iter().all(|s| s["nationality"] == "ko"));
}

#[test]
fn eps_flag_sets_cleaning_radius_and_grid() {
    use clap::Parser;
    use voxcurate::cli::Cli;
    use voxcurate::layout::Layout;
    let dir = synthesized();
    let layout = Layout::new(dir.path());
    let cli = Cli::try_parse_from(["voxcurate", "--root", ".", "clean", "--eps", "0.3"]).unwrap();
    let cfg = cli.load_config(&layout).unwrap();
    assert_eq!((cfg.cleaning.eps, cfg.cleaning.grid.clone()), (0.3, vec![0.3]));
    let cli = Cli::try_parse_from(["voxcurate", "sweep", "--eps", "0.1,0.2,0.4"]).unwrap();
    assert_eq!(cli.load_config(&layout).unwrap().cleaning.grid, vec![0.1, 0.2, 0.4]);
}
