use std::collections::BTreeSet;
use std::fmt;
use std::path::PathBuf;

/// Everything the command layer can fail with. [`CliError::exit_code`]
/// maps each variant onto the process exit status.
#[derive(Debug)]
pub enum CliError {
    Io { path: PathBuf, source: std::io::Error },
    /// Malformed input cell. `row` counts data rows from 1 (the header is
    /// row 0); `col` counts columns from 1.
    Parse { path: PathBuf, row: usize, col: usize, message: String },
    /// A well-formed value outside its legal range.
    Domain { path: PathBuf, row: usize, message: String },
    /// Column sets that should agree but do not; `columns` is the
    /// symmetric difference.
    Schema { message: String, columns: BTreeSet<String> },
    Config(String),
    Usage(String),
    Estimation(npsurvey::Error),
    /// A value that must never be produced, such as a NaN headed for a report.
    Internal(String),
}

impl CliError {
    /// 0 success, 1 usage or I/O, 2 estimation failure.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Estimation(_) | CliError::Internal(_) => 2,
            _ => 1,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Io { path, source } => write!(f, "{}: {source}", path.display()),
            CliError::Parse {
                path,
                row,
                col,
                message,
            } => write!(f, "{}: row {row}, column {col}: {message}", path.display()),
            CliError::Domain { path, row, message } => write!(f, "{}: row {row}: {message}", path.display()),
            CliError::Schema { message, columns } => {
                let list: Vec<&str> = columns.iter().map(String::as_str).collect();
                write!(f, "{message}: {{{}}}", list.join(", "))
            }
            CliError::Config(m) => write!(f, "invalid configuration: {m}"),
            CliError::Usage(m) => write!(f, "usage: {m}"),
            CliError::Estimation(e) => write!(f, "estimation failed: {e}"),
            CliError::Internal(m) => write!(f, "internal error: {m}"),
        }
    }
}

impl std::error::Error for CliError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            CliError::Io { source, .. } => Some(source),
            CliError::Estimation(e) => Some(e),
            _ => None,
        }
    }
}

impl From<npsurvey::Error> for CliError {
    fn from(e: npsurvey::Error) -> Self {
        CliError::Estimation(e)
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
