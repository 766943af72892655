//! Minutiae extraction: ridge enhancement, binarization, thinning,
//! crossing-number detection and spurious-point pruning, plus the
//! plain-text template format.

mod enhance;
mod extract;
mod template;
mod thin;

use thiserror::Error;

pub(crate) use enhance::sobel;
pub use enhance::{enhance, Enhancement, BLOCK};
pub use extract::{crossing_number, extract, extract_with, neighborhood_code, ExtractConfig};
pub use template::{Minutia, MinutiaKind, MinutiaeTemplate};
pub use thin::{binarize_and_thin, zhang_suen, Skeleton};

use crate::imagecore::GrayImage;

#[derive(Debug, Error)]
pub enum MinutiaeError {
    #[error("image variance below 1e-6")]
    FlatImage,
    #[error("image must be square with side >= 32, got {width}x{height}")]
    BadShape { width: usize, height: usize },
    #[error("template line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
}

/// Full pipeline: enhance, binarize, thin and extract with default pruning.
pub fn extract_from_image(img: &GrayImage) -> Result<MinutiaeTemplate, MinutiaeError> {
    let e = enhance(img)?;
    let skeleton = binarize_and_thin(&e.enhanced);
    Ok(extract(&skeleton, &e.orientation))
}
