//! Argument parsing and command dispatch.
//!
//! Exit status: 0 success, 2 usage, 3 missing input, 4 schema violation,
//! 5 stage-order violation, 6 file format, 7 algorithm failure, 8 other i/o.

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

use crate::config::PipelineConfig;
use crate::error::{CliError, CliResult};
use crate::layout::Layout;
use crate::provider::MockProvider;
use crate::{report, stages, synthetic};

#[derive(Debug, Parser)]
#[command(name = "voxcurate", version, about = "Speaker corpus curation pipeline")]
pub struct Cli {
    /// Corpus root directory.
    #[arg(long, global = true, default_value = ".")]
    pub root: PathBuf,
    /// Config file (JSON or key = value). Defaults to <root>/config.json when present.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Cleaning radius, or a comma-separated grid for `sweep`.
    #[arg(long, global = true, value_delimiter = ',')]
    pub eps: Vec<f64>,
    /// Worker threads; 0 uses all cores.
    #[arg(long, global = true, default_value_t = 0)]
    pub jobs: usize,
    #[arg(long, global = true, value_enum, default_value_t = ProviderKind::Mock)]
    pub provider: ProviderKind,
    /// Config override, `key=value` with a dotted key. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProviderKind {
    Mock,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Phase {
    /// Photos, videos, search index, manifest and config.
    Media,
    /// One x-vector per segment found by `segments`.
    Embed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Write a synthetic corpus.
    Synth {
        #[arg(long, value_enum, default_value_t = Phase::Media)]
        phase: Phase,
    },
    /// Build template faces from image search results.
    Template,
    /// Fetch videos and detect shot boundaries.
    Shots,
    /// Track the POI through every video.
    Track,
    /// Cut speech segments from tracks and sync confidences.
    Segments,
    /// Split speakers and train LDA + PLDA.
    Backend,
    /// Keep each speaker's largest PLDA cluster.
    Clean,
    /// Verification error before and after cleaning.
    Eval,
    /// Clean and evaluate at every eps of the grid.
    Sweep,
    /// Corpus statistics and result tables.
    Report,
}

impl Cli {
    pub fn load_config(&self, layout: &Layout) -> CliResult<PipelineConfig> {
        let synth_media = matches!(self.command, Command::Synth { phase: Phase::Media });
        let default_file = layout.config();
        let file = match &self.config {
            Some(p) => Some(p.clone()),
            None if !synth_media && default_file.is_file() => Some(default_file),
            None => None,
        };
        let base = if synth_media { synthetic::synthetic_defaults() } else { PipelineConfig::default() };
        let mut cfg = PipelineConfig::load_with_base(base, file.as_deref(), &self.overrides)?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        match (self.eps.as_slice(), self.command) {
            ([], _) => {}
            ([e], _) => {
                cfg.cleaning.eps = *e;
                cfg.cleaning.grid = vec![*e];
            }
            (_, Command::Clean) => return Err(CliError::Usage("`clean` takes a single --eps".into())),
            (grid, _) => cfg.cleaning.grid = grid.to_vec(),
        }
        cfg.validate().map_err(CliError::Usage)?;
        Ok(cfg)
    }
}

/// Runs one command and returns the text to print.
pub fn run(cli: &Cli) -> CliResult<String> {
    let layout = Layout::new(&cli.root);
    let cfg = cli.load_config(&layout)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs)
        .build()
        .map_err(|e| CliError::Usage(format!("--jobs {}: {e}", cli.jobs)))?;
    pool.install(|| dispatch(cli, &layout, &cfg))
}

fn dispatch(cli: &Cli, layout: &Layout, cfg: &PipelineConfig) -> CliResult<String> {
    let provider = || match cli.provider {
        ProviderKind::Mock => MockProvider::open(layout),
    };
    Ok(match cli.command {
        Command::Synth { phase: Phase::Media } => {
            crate::layout::ensure_dir(layout.root())?;
            let m = synthetic::synth_media(layout, cfg)?;
            format!("synth: {} speakers, {} videos each\n", m.speakers.len(), cfg.synth.videos_per_speaker)
        }
        Command::Synth { phase: Phase::Embed } => {
            let s = synthetic::synth_embed(layout, cfg)?;
            format!("synth: {} segment embeddings\n", s.utterances)
        }
        Command::Template => {
            let status = stages::template(layout, cfg, &provider()?)?;
            let accepted = status.iter().filter(|s| matches!(s, stages::TemplateStatus::Accepted { .. })).count();
            format!("template: {accepted} accepted, {} rejected\n", status.len() - accepted)
        }
        Command::Shots => {
            let shots = stages::shots(layout, cfg, &provider()?)?;
            format!("shots: {} videos, {} shots\n", shots.len(), shots.values().map(Vec::len).sum::<usize>())
        }
        Command::Track => {
            let t = stages::track(layout, cfg)?;
            format!("track: {} videos, speedup {:.2}x, agreement {:.4}\n", t.videos, t.cost_ratio, t.frame_agreement)
        }
        Command::Segments => format!("segments: {}\n", stages::segments(layout, cfg)?.len()),
        Command::Backend => {
            let b = stages::backend(layout, cfg)?;
            format!("backend: {} speakers, {} utterances, lda dim {}\n", b.train_speakers, b.train_utterances, b.lda_dim)
        }
        Command::Clean => {
            let c = stages::clean(layout, cfg)?;
            format!("clean: kept {} of {}, mean VSR {:.4}\n", c.kept, c.total, c.mean_vsr)
        }
        Command::Eval => {
            let e = stages::eval(layout, cfg)?;
            let mut s = format!("eval: EER before {:.3}%", e.before.report.eer);
            if let Some(a) = &e.after {
                s.push_str(&format!(", after {:.3}%", a.report.eer));
            }
            s.push('\n');
            s
        }
        Command::Sweep => {
            let s = stages::sweep(layout, cfg)?;
            format!("sweep: {} eps values\n", s.rows.len())
        }
        Command::Report => report::report(layout)?,
    })
}
