use std::fmt;

use thiserror::Error;

/// Which part of a Strang step produced an error.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    FirstReaction,
    Diffusion,
    SecondReaction,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Stage::FirstReaction => "stage 1 (reaction, dt/2)",
            Stage::Diffusion => "stage 2 (diffusion, dt)",
            Stage::SecondReaction => "stage 3 (reaction, dt/2)",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("argument outside the admissible domain: {0}")]
    DomainError(String),

    #[error("positivity violated: {0}")]
    PositivityViolation(String),

    #[error(
        "{solver} did not converge after {iterations} iterations (last residual {residual:.3e})"
    )]
    NonConvergence {
        solver: &'static str,
        iterations: usize,
        residual: f64,
        /// Residual norm after each iteration, when the solver records one.
        trace: Vec<f64>,
    },

    #[error("at cell {cell}: {source}")]
    AtCell {
        cell: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("species `{species}`: {source}")]
    AtSpecies {
        species: String,
        #[source]
        source: Box<Error>,
    },

    #[error("{stage}: {source}")]
    AtStage {
        stage: Stage,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn at_cell(self, cell: usize) -> Self {
        Error::AtCell {
            cell,
            source: Box::new(self),
        }
    }

    pub(crate) fn at_species(self, species: &str) -> Self {
        Error::AtSpecies {
            species: species.to_string(),
            source: Box::new(self),
        }
    }

    pub(crate) fn at_stage(self, stage: Stage) -> Self {
        Error::AtStage {
            stage,
            source: Box::new(self),
        }
    }

    /// The innermost error, with cell/species/stage context stripped.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtCell { source, .. }
            | Error::AtSpecies { source, .. }
            | Error::AtStage { source, .. } => source.root(),
            other => other,
        }
    }

    /// True for failures of a solver on valid input (non-convergence or loss of positivity),
    /// as opposed to malformed input.
    pub fn is_solver_failure(&self) -> bool {
        matches!(
            self.root(),
            Error::NonConvergence { .. } | Error::PositivityViolation(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
