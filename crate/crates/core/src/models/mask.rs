use crate::error::{invalid, shape_err, Result};
use crate::tensor::Tensor;

/// Binary human mask, shape (B, 1, T, H, W), 1 = human and 0 = background.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskTensor(Tensor);

impl MaskTensor {
    pub fn new(t: Tensor) -> Result<Self> {
        let s = t.shape();
        if s.len() != 5 || s[1] != 1 {
            return Err(shape_err!("mask must be (B,1,T,H,W), got {:?}", s));
        }
        if t.data().iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(invalid!("mask values must be exactly 0 or 1"));
        }
        Ok(Self(t))
    }

    pub fn ones(batch: usize, dims: [usize; 3]) -> Self {
        Self(Tensor::ones(&[batch, 1, dims[0], dims[1], dims[2]]))
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    pub fn dims(&self) -> [usize; 3] {
        let s = self.0.shape();
        [s[2], s[3], s[4]]
    }

    pub fn batch(&self) -> usize {
        self.0.shape()[0]
    }
}

/// (1+α)·M + (1−α)·(1−M): human pixels weighted 1+α, background 1−α.
pub fn weighted_mask(alpha: f64, mask: &MaskTensor) -> Result<Tensor> {
    if alpha.is_nan() || alpha.abs() >= 1.0 {
        return Err(invalid!("alpha must lie strictly inside (-1, 1), got {alpha}"));
    }
    let data = mask
        .0
        .data()
        .iter()
        .map(|&m| (1.0 + alpha) * m + (1.0 - alpha) * (1.0 - m))
        .collect();
    Tensor::new(mask.0.shape(), data)
}

/// Nearest-neighbour resampling of each frame to `target` (T, H, W); source
/// index along each axis is `floor(dst * src_len / dst_len)`.
pub fn downsample_mask(mask: &MaskTensor, target: [usize; 3]) -> Result<MaskTensor> {
    if target.contains(&0) {
        return Err(invalid!("target mask shape {target:?} has a zero dimension"));
    }
    let src = mask.dims();
    if let Some(d) = (0..3).find(|&d| target[d] > src[d]) {
        return Err(shape_err!(
            "mask downsample dimension {}: target {} exceeds source {}",
            d + 2,
            target[d],
            src[d]
        ));
    }
    if target == src {
        return Ok(mask.clone());
    }
    let b = mask.batch();
    let [st, sh, sw] = src;
    let [tt, th, tw] = target;
    let data = mask.0.data();
    let mut out = Vec::with_capacity(b * tt * th * tw);
    for n in 0..b {
        for t in 0..tt {
            let si = t * st / tt;
            for y in 0..th {
                let sy = y * sh / th;
                let row = ((n * st + si) * sh + sy) * sw;
                out.extend((0..tw).map(|x| data[row + x * sw / tw]));
            }
        }
    }
    MaskTensor::new(Tensor::new(&[b, 1, tt, th, tw], out)?)
}
