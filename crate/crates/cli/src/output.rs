use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

/// Failure categories and their exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Config,
    Data,
    Numerical,
}

impl Kind {
    fn code(self) -> u8 {
        match self {
            Kind::Config => 2,
            Kind::Data => 3,
            Kind::Numerical => 4,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Kind::Config => "config",
            Kind::Data => "data",
            Kind::Numerical => "numerical",
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub kind: Kind,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        Self {
            kind: Kind::Config,
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self {
            kind: Kind::Data,
            message: message.into(),
        }
    }

    pub fn code(&self) -> u8 {
        self.kind.code()
    }

    /// One JSON object on one line.
    pub fn to_line(&self) -> String {
        #[derive(Serialize)]
        struct Line<'a> {
            code: u8,
            kind: &'a str,
            message: &'a str,
        }
        serde_json::to_string(&Line {
            code: self.code(),
            kind: self.kind.name(),
            message: &self.message,
        })
        .expect("plain struct serializes")
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} error: {}", self.kind.name(), self.message)
    }
}

impl From<hyperlatent::Error> for CliError {
    fn from(e: hyperlatent::Error) -> Self {
        use hyperlatent::Error as E;
        let kind = match &e {
            E::Config(_) => Kind::Config,
            E::RankDeficient(_) | E::Numerical(_) => Kind::Numerical,
            E::Parse { .. } | E::Domain(_) | E::DimensionMismatch(_) | E::Io(_) | E::Json(_) => {
                Kind::Data
            }
        };
        Self {
            kind,
            message: e.to_string(),
        }
    }
}

/// Files staged in memory and written together, so a failed command leaves
/// nothing behind.
#[derive(Debug, Default)]
pub struct Outputs {
    files: Vec<(String, Vec<u8>)>,
}

impl Outputs {
    pub fn add(&mut self, name: &str, contents: impl Into<Vec<u8>>) {
        self.files.push((name.to_string(), contents.into()));
    }

    pub fn commit(self, dir: &Path) -> Result<Vec<PathBuf>, CliError> {
        let io = |what: &str, p: &Path, e: std::io::Error| {
            CliError::data(format!("cannot {what} {}: {e}", p.display()))
        };
        let existed = dir.exists();
        fs::create_dir_all(dir).map_err(|e| io("create", dir, e))?;
        let mut written = Vec::new();
        for (name, bytes) in &self.files {
            let path = dir.join(name);
            if let Err(e) = fs::write(&path, bytes) {
                for p in &written {
                    let _ = fs::remove_file(p);
                }
                if !existed {
                    let _ = fs::remove_dir(dir);
                }
                return Err(io("write", &path, e));
            }
            written.push(path);
        }
        Ok(written)
    }
}
