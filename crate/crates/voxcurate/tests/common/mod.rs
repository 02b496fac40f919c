#![allow(dead_code)]

use std::path::Path;

use clap::Parser;
use voxcurate::cli::{run, Cli};
use voxcurate::error::CliResult;

/// A small synthetic world that keeps the whole chain under a second.
pub const SMALL: &[&str] = &[
    "--set",
    "synth.n_speakers=12",
    "--set",
    "synth.videos_per_speaker=1",
    "--set",
    "synth.shots_per_video=3",
];

pub const CHAIN: &[&str] =
    &["template", "shots", "track", "segments", "synth --phase embed", "backend", "clean", "eval", "sweep", "report"];

/// Runs one command in-process.
pub fn vc(root: &Path, command: &str, extra: &[&str]) -> CliResult<String> {
    let mut args = vec!["voxcurate".to_owned(), "--root".to_owned(), root.display().to_string()];
    args.extend(command.split_whitespace().map(str::to_owned));
    args.extend(extra.iter().map(|s| s.to_string()));
    run(&Cli::try_parse_from(args).expect("valid arguments"))
}

/// `synth` with `synth_args`, then every stage through `report`.
pub fn full_chain(root: &Path, synth_args: &[&str], extra: &[&str]) -> String {
    let mut args = synth_args.to_vec();
    args.extend_from_slice(extra);
    vc(root, "synth", &args).unwrap();
    let mut last = String::new();
    for c in CHAIN {
        last = vc(root, c, extra).unwrap_or_else(|e| panic!("{c}: {e}"));
    }
    last
}

/// Every file under `root`, relative path to contents.
pub fn snapshot(root: &Path) -> std::collections::BTreeMap<String, Vec<u8>> {
    fn walk(base: &Path, dir: &Path, out: &mut std::collections::BTreeMap<String, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                walk(base, &p, out);
            } else {
                out.insert(p.strip_prefix(base).unwrap().display().to_string(), std::fs::read(&p).unwrap());
            }
        }
    }
    let mut out = std::collections::BTreeMap::new();
    walk(root, root, &mut out);
    out
}
