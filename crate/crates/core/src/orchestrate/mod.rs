//! Config-driven sweeps: running, aggregation and plots.

pub mod aggregate;
pub mod plot;
pub mod run;
pub mod spec;

pub use aggregate::{aggregate, Summary, Table};
pub use plot::{emit_plots, render_svg, replot, PlotData, PlotKind, PlotOptions};
pub use run::{read_failures, read_records, resolve_output_dir, run, FailureRecord, ResultRecord, RunSummary, Shard};
pub use spec::{Ablation, ExperimentSpec, GridPoint, ModelGrid, SubsetTag};
