//! Command-line front end: subcommands for each stage and a cached,
//! manifest-producing pipeline.

pub mod commands;
pub mod config;
pub mod io;
pub mod pipeline;
pub mod report;
pub mod stage;

pub use commands::{dispatch, Cli, Command};
pub use config::PipelineConfig;
pub use pipeline::{run_pipeline, PipelineOutcome};
pub use report::{emit_report, render_plots};

/// Runs `f` on a dedicated pool of `threads` workers (all cores when
/// `None`), so the cap applies to every parallel section inside.
pub fn with_threads<T: Send>(
    threads: Option<usize>,
    f: impl FnOnce() -> T + Send,
) -> anyhow::Result<T> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        if t == 0 {
            anyhow::bail!("--threads must be positive");
        }
        b = b.num_threads(t);
    }
    Ok(b.build()?.install(f))
}
