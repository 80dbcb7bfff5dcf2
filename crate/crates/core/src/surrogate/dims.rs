use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sizes of every modality a sample carries, plus the latent width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default)]
pub struct ModalityDims {
    pub input_dim: usize,
    pub latent_dim: usize,
    pub scalar_dim: usize,
    pub image_views: usize,
    pub image_channels: usize,
    pub image_h: usize,
    pub image_w: usize,
}

impl Default for ModalityDims {
    /// Desk-scale defaults: 3 views × 4 channels of 16×16 images.
    fn default() -> Self {
        Self {
            input_dim: 5,
            latent_dim: 20,
            scalar_dim: 15,
            image_views: 3,
            image_channels: 4,
            image_h: 16,
            image_w: 16,
        }
    }
}

impl ModalityDims {
    /// Full-resolution 64×64 images.
    pub fn full_resolution() -> Self {
        Self {
            image_h: 64,
            image_w: 64,
            ..Self::default()
        }
    }

    /// Small dims for quick experiments and tests: one view, two 8×8 channels.
    pub fn tiny() -> Self {
        Self {
            image_views: 1,
            image_channels: 2,
            image_h: 8,
            image_w: 8,
            ..Self::default()
        }
    }

    pub fn image_len(&self) -> usize {
        self.image_views * self.image_channels * self.image_h * self.image_w
    }

    /// Width of the flattened output bundle: scalars then images.
    pub fn output_dim(&self) -> usize {
        self.scalar_dim + self.image_len()
    }

    /// Number of f32 values in one serialized sample.
    pub fn record_len(&self) -> usize {
        self.input_dim + self.output_dim()
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("input_dim", self.input_dim),
            ("latent_dim", self.latent_dim),
            ("scalar_dim", self.scalar_dim),
            ("image_views", self.image_views),
            ("image_channels", self.image_channels),
            ("image_h", self.image_h),
            ("image_w", self.image_w),
        ];
        let bad: Vec<String> = fields
            .iter()
            .filter(|(_, v)| *v == 0)
            .map(|(k, _)| format!("{k} must be >= 1"))
            .collect();
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad))
        }
    }

    pub(crate) fn to_u32s(self) -> [u32; 7] {
        [
            self.input_dim as u32,
            self.latent_dim as u32,
            self.scalar_dim as u32,
            self.image_views as u32,
            self.image_channels as u32,
            self.image_h as u32,
            self.image_w as u32,
        ]
    }

    pub(crate) fn from_u32s(v: [u32; 7]) -> Self {
        Self {
            input_dim: v[0] as usize,
            latent_dim: v[1] as usize,
            scalar_dim: v[2] as usize,
            image_views: v[3] as usize,
            image_channels: v[4] as usize,
            image_h: v[5] as usize,
            image_w: v[6] as usize,
        }
    }
}
