//! The annotated sample flowing through every pipeline stage.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::image_buf::ImageBuffer;
use super::mask::ComponentMask;
use super::pose::{CameraIntrinsics, PoseRecord};

/// Whether a sample comes from the rendered or the captured domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainTag {
    Synthetic,
    Real,
}

/// Image + component mask + pose + intrinsics + provenance id.
#[derive(Debug, Clone)]
pub struct AnnotatedSample {
    pub id: String,
    pub image: ImageBuffer,
    pub mask: ComponentMask,
    pub pose: PoseRecord,
    pub intrinsics: CameraIntrinsics,
    pub domain_tag: DomainTag,
}

impl AnnotatedSample {
    /// Checks the image/mask size agreement invariant.
    pub fn validate(&self) -> Result<()> {
        if self.image.height() != self.mask.height() || self.image.width() != self.mask.width() {
            return Err(Error::ShapeMismatch(format!(
                "sample {}: image {}x{} vs mask {}x{}",
                self.id,
                self.image.height(),
                self.image.width(),
                self.mask.height(),
                self.mask.width()
            )));
        }
        if self.id.is_empty() {
            return Err(Error::InvalidArgument("sample id must be non-empty".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validate_catches_size_mismatch() {
        let sample = AnnotatedSample {
            id: "s0".into(),
            image: ImageBuffer::zeros(4, 4),
            mask: ComponentMask::zeros(4, 5),
            pose: PoseRecord::identity(),
            intrinsics: CameraIntrinsics::new(10.0, 10.0, 2.0, 2.0, 4, 4).unwrap(),
            domain_tag: DomainTag::Synthetic,
        };
        assert!(sample.validate().is_err());
    }

    #[test]
    fn domain_tag_serializes_snake_case() {
        assert_eq!(
            serde_json::to_string(&DomainTag::Synthetic).unwrap(),
            "\"synthetic\""
        );
        assert_eq!(serde_json::to_string(&DomainTag::Real).unwrap(), "\"real\"");
    }
}
