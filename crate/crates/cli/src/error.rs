use std::fmt;
use std::path::{Path, PathBuf};

/// Failure of a subcommand, mapped onto the process exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    /// Every invalid setting, one message each.
    Config(Vec<String>),
    Numerical {
        message: String,
        snapshot: Option<PathBuf>,
    },
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 2,
            CliError::Numerical { .. } => 3,
            CliError::Io { .. } => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Config(v) => {
                write!(f, "invalid configuration:")?;
                for m in v {
                    write!(f, "\n  {m}")?;
                }
                Ok(())
            }
            CliError::Numerical { message, snapshot } => {
                write!(f, "numerical failure: {message}")?;
                if let Some(p) = snapshot {
                    write!(f, "\nsnapshot written to {}", p.display())?;
                }
                Ok(())
            }
            CliError::Io { path, source } => write!(f, "{}: {source}", path.display()),
        }
    }
}

impl std::error::Error for CliError {}

impl From<reweight_core::Error> for CliError {
    fn from(e: reweight_core::Error) -> Self {
        use reweight_core::Error as E;
        let numerical =
            e.is_numerical() || matches!(&e, E::Outer { source, .. } if source.is_numerical());
        match e {
            E::InvalidConfig(v) => CliError::Config(v),
            e if numerical => CliError::Numerical {
                message: chain(&e),
                snapshot: None,
            },
            e => CliError::Usage(chain(&e)),
        }
    }
}

fn chain(e: &(dyn std::error::Error + 'static)) -> String {
    let mut s = e.to_string();
    let mut cur = e.source();
    while let Some(c) = cur {
        s.push_str(": ");
        s.push_str(&c.to_string());
        cur = c.source();
    }
    s
}
