use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("face {face} references vertex {vertex} but the mesh has {count} vertices")]
    FaceIndexOutOfRange { face: usize, vertex: usize, count: usize },

    #[error("face {face} is degenerate (area {area:e})")]
    DegenerateFace { face: usize, area: f64 },

    #[error("mesh has no vertex colors")]
    MissingColors,

    #[error("mesh is disconnected: {} components ({})", .components.len(), describe_components(.components))]
    Disconnected { components: Vec<Vec<usize>> },

    #[error("matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("invalid camera: {0}")]
    InvalidCamera(String),

    #[error("deformation field contains a non-finite offset at grid vertex ({i}, {j})")]
    NonFiniteField { i: usize, j: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("no view covers the mesh")]
    NoCoverage,

    #[error("foreground overlap is empty")]
    EmptyForeground,

    #[error("position gradients are only defined for the soft render mode")]
    HardPositionGradient,

    #[error("loss became non-finite at iteration {iteration}")]
    Diverged { iteration: usize },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("missing files: {}", .0.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", "))]
    MissingFiles(Vec<PathBuf>),

    #[error("parse error in {what}: {message}")]
    Parse { what: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("png: {0}")]
    Png(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn describe_components(components: &[Vec<usize>]) -> String {
    components
        .iter()
        .map(|c| match c.len() {
            0 => "[]".to_string(),
            1..=4 => format!("{c:?}"),
            n => format!("[{}, {}, .. {} vertices]", c[0], c[1], n),
        })
        .collect::<Vec<_>>()
        .join(", ")
}

impl Error {
    pub(crate) fn parse(what: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse { what: what.into(), message: message.into() }
    }
}
