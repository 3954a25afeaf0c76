use serde::{Deserialize, Serialize};

use crate::autograd::{Conv3dSpec, Pool3dSpec, PoolMode};
use crate::error::{invalid, Result};
use crate::tensor::window_out;

/// Kernel, stride and padding of one convolution, as (time, height, width).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub pad: [usize; 3],
}

impl LayerSpec {
    pub const fn new(kernel: [usize; 3], stride: [usize; 3], pad: [usize; 3]) -> Self {
        Self { kernel, stride, pad }
    }

    pub fn conv(&self) -> Conv3dSpec {
        Conv3dSpec {
            stride: self.stride,
            pad: self.pad,
        }
    }

    pub fn max_pool(&self) -> Pool3dSpec {
        Pool3dSpec {
            mode: PoolMode::Max,
            kernel: self.kernel,
            stride: self.stride,
            pad: self.pad,
        }
    }

    fn out(&self, dims: [usize; 3]) -> Option<[usize; 3]> {
        Some([
            window_out(dims[0], self.kernel[0], self.stride[0], self.pad[0])?,
            window_out(dims[1], self.kernel[1], self.stride[1], self.pad[1])?,
            window_out(dims[2], self.kernel[2], self.stride[2], self.pad[2])?,
        ])
    }
}

/// Geometry of the miniature Slow-Only-style backbone: a stem, four stages
/// and a linear head. Stages 1 and 2 use purely spatial kernels; stages 3
/// and 4 add temporal extent, mirroring the Slow pathway.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackboneConfig {
    pub classes: usize,
    pub frames: usize,
    /// Spatial side length of the (square) input.
    pub size: usize,
    pub in_channels: usize,
    pub stem_width: usize,
    /// Output channels of stages 1 to 4.
    pub widths: [usize; 4],
    pub stem: LayerSpec,
    pub stem_pool: Option<LayerSpec>,
    pub stages: [LayerSpec; 4],
    /// Channel width of the auxiliary alpha head's convolution.
    pub alpha_width: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            classes: 4,
            frames: 8,
            size: 32,
            in_channels: 3,
            stem_width: 8,
            widths: [8, 16, 32, 64],
            stem: LayerSpec::new([1, 3, 3], [1, 2, 2], [0, 1, 1]),
            stem_pool: Some(LayerSpec::new([1, 2, 2], [1, 2, 2], [0, 0, 0])),
            stages: [
                LayerSpec::new([1, 3, 3], [1, 1, 1], [0, 1, 1]),
                LayerSpec::new([1, 3, 3], [1, 2, 2], [0, 1, 1]),
                LayerSpec::new([3, 3, 3], [1, 2, 2], [1, 1, 1]),
                LayerSpec::new([3, 3, 3], [1, 2, 2], [1, 1, 1]),
            ],
            alpha_width: 8,
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(invalid!("classes must be at least 2, got {}", self.classes));
        }
        if self.frames == 0 || self.size == 0 || self.in_channels == 0 {
            return Err(invalid!("frames, size and in_channels must be positive"));
        }
        if self.stem_width == 0 || self.alpha_width == 0 || self.widths.contains(&0) {
            return Err(invalid!("channel widths must be strictly positive: {:?}", self.widths));
        }
        self.feature_dims()?;
        Ok(())
    }

    /// (T, H, W) after the stem and after each stage.
    pub fn feature_dims(&self) -> Result<[[usize; 3]; 5]> {
        let mut dims = [self.frames, self.size, self.size];
        let step = |d: [usize; 3], l: &LayerSpec, what: &str| {
            l.out(d)
                .ok_or_else(|| invalid!("input {:?} too small for {what} {:?}", d, l.kernel))
        };
        dims = step(dims, &self.stem, "stem")?;
        if let Some(p) = &self.stem_pool {
            dims = step(dims, p, "stem pool")?;
        }
        let mut out = [dims; 5];
        for (i, s) in self.stages.iter().enumerate() {
            dims = step(dims, s, "stage")?;
            out[i + 1] = dims;
        }
        Ok(out)
    }
}
