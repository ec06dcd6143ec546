use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A value lies outside the domain an operation is defined on.
    #[error("domain error: {0}")]
    Domain(String),
    /// Invalid or inconsistent configuration.
    #[error("configuration error: {0}")]
    Config(String),
    /// Malformed or missing input data.
    #[error("input error: {0}")]
    Input(String),
    /// A caller broke an operation precondition.
    #[error("contract violation: {0}")]
    Contract(String),
    /// Every particle of an anchor became invalid inside one window.
    #[error("filter diverged at frame {frame} (last estimate {last_x}, {last_y})")]
    Divergence {
        frame: usize,
        last_x: f64,
        last_y: f64,
    },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Input(_) => 2,
            Error::Config(_) => 3,
            _ => 1,
        }
    }
}
