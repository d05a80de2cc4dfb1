//! Run orchestration: configuration, execution, ledger and reports.

pub mod config;
pub mod ledger;
mod pipeline;
pub mod report;

pub use config::{ImputerDef, ImputerKind, RunConfig};
pub use ledger::{read_ledger, LedgerEntry};
pub use pipeline::{
    build_imputers, dataset_sha256, export_finetune, load_run_data, report, run, task_seed, RunData, RunSummary,
};
pub use report::{build_report, ReportFormat, RunReport};
