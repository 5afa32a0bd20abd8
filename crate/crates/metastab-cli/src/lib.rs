//! Library half of the command-line front end: config ingestion, run
//! manifests, SVG chart emission, and the command implementations. The
//! binary in `main.rs` only parses arguments and maps errors to exit codes.

pub mod commands;
pub mod config;
pub mod manifest;
pub mod svg;

/// Exit codes: 0 ok, 2 config error, 3 divergence, 4 premise violation.
#[derive(Debug)]
pub struct CmdError {
    pub code: i32,
    pub message: String,
}

impl std::fmt::Display for CmdError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.message)
    }
}

impl std::error::Error for CmdError {}

impl CmdError {
    pub fn config(message: impl Into<String>) -> Self {
        CmdError {
            code: 2,
            message: message.into(),
        }
    }
}

impl From<metastab::Error> for CmdError {
    fn from(e: metastab::Error) -> Self {
        let code = match &e {
            metastab::Error::Divergence { .. } => 3,
            metastab::Error::PremiseViolation(_) => 4,
            metastab::Error::InvalidConfig(_)
            | metastab::Error::InvalidWeights(_)
            | metastab::Error::Parse { .. }
            | metastab::Error::InvalidDimension { .. }
            | metastab::Error::InvalidSize { .. }
            | metastab::Error::BatchTooLarge { .. } => 2,
            _ => 1,
        };
        CmdError {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CmdError {
    fn from(e: std::io::Error) -> Self {
        CmdError {
            code: 1,
            message: format!("io error: {e}"),
        }
    }
}

pub type CmdResult<T> = Result<T, CmdError>;

/// Documented layouts of every file the commands emit or consume.
pub const SCHEMA: &str = "\
file formats
============

tasks file (gen-tasks tasks.txt)
  header: `d n m`
  rows:   `task_index split x_1 ... x_d y` with split `in` or `out`,
          floats at 17 significant digits (round-trip exact)

task specs file (gen-tasks specs.txt)
  header: `d m`
  rows:   `index mean_1..mean_d coeff_1..coeff_d feature_cov_scale noise_var`

training trace (train/fed-train trace.csv)
  columns: t,beta_t,fhat,u_t,v_t
  empty fields where a column was not recorded at that round

iterates file (train/fed-train iterates.txt)
  line 1: `last w_1 ... w_d`
  line 2: `avg w_1 ... w_d`

error report (error_report.csv)
  columns: test,gen,train,emp_min,pop_min,se_test,se_gen

sweep data (reproduce-figures <kind>.csv)
  columns: kind,m,n,reps,mean_error,std_err

stability report (stability.csv)
  columns: m,n,gamma_hat,std_err
  final row: summary,fitted_slope=..,gamma_hat=..,gamma_theory=..

shift report (shift.csv)
  columns: task,tv,std_err
  final row: summary,tv_mix=..,d_bound=..,weighted_d_bound=..,largek_gamma=..

exit codes
==========
  0 ok, 2 config error, 3 divergence, 4 premise violation

environment
===========
  METASTAB_THREADS caps the worker pool
";
