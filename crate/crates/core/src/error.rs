use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid input: {0}")]
    Input(String),

    #[error("degenerate graph: {0}")]
    DegenerateGraph(String),

    #[error("estimated degree at vertex {index} is {value:e} (must be > 0); try a larger rank or sigma")]
    DegenerateDegree { index: usize, value: f64 },

    #[error("interpolation kernel block is ill-conditioned (1/cond = {rcond:e})")]
    IllConditioned { rcond: f64 },

    #[error("singular step: {0}")]
    SingularStep(String),

    #[error("method failure: {0}")]
    MethodFailure(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::DegenerateDegree { .. }
                | Error::IllConditioned { .. }
                | Error::SingularStep(_)
                | Error::MethodFailure(_)
                | Error::Precondition(_)
        )
    }
}

pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension { what, expected, got })
    }
}
