//! Synthetic tasks, training runs, sweeps, the memory bench and accountant
//! tables. Everything returns a [`report::CsvTable`]; floats are written with
//! nine significant digits and provenance goes into `# key=value` footer
//! lines after the data.

pub mod acct;
pub mod bench;
pub mod config;
pub mod data;
pub mod report;
pub mod train;

pub use bench::{bench, BenchConfig, BenchDims, BenchResult, BenchRow};
pub use config::{BatchSpec, Duration, RunConfig, TaskConfig};
pub use data::{gen_synthetic_task, PlantedModel, SyntheticTask};
pub use report::{fmt_g9, CsvTable};
pub use train::{snr_sweep, train, SweepResult, SweepRow, TrainRun, TrainSummary};
