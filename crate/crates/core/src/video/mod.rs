//! Frame and mask sequences, person-box selection, masking and
//! counterfactual compositing.

mod augment;
pub mod io;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Error, Result};

pub use augment::{build_augmented_set, swap_jobs, SwapJob};

/// Detector label that marks a human.
pub const PERSON_LABEL: &str = "person";

/// T frames of H×W RGB, stored frame-major then row-major, 3 bytes per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    frames: usize,
    height: usize,
    width: usize,
    data: Vec<u8>,
    pub fps: Option<f64>,
}

impl FrameSequence {
    pub fn new(frames: usize, height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != frames * height * width * 3 {
            return Err(shape_err!(
                "{frames}×{height}×{width}×3 frames need {} bytes, got {}",
                frames * height * width * 3,
                data.len()
            ));
        }
        Ok(Self {
            frames,
            height,
            width,
            data,
            fps: None,
        })
    }

    pub fn black(frames: usize, height: usize, width: usize) -> Self {
        Self::new(frames, height, width, vec![0; frames * height * width * 3]).expect("sized buffer")
    }

    pub fn from_frames(height: usize, width: usize, frames: Vec<Vec<u8>>) -> Result<Self> {
        let t = frames.len();
        let mut data = Vec::with_capacity(t * height * width * 3);
        for (i, f) in frames.into_iter().enumerate() {
            if f.len() != height * width * 3 {
                return Err(shape_err!(
                    "frame {i} has {} bytes, expected {}",
                    f.len(),
                    height * width * 3
                ));
            }
            data.extend(f);
        }
        Self::new(t, height, width, data)
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// (T, H, W).
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.frames, self.height, self.width)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn frame(&self, t: usize) -> &[u8] {
        let n = self.height * self.width * 3;
        &self.data[t * n..(t + 1) * n]
    }

    pub fn pixel(&self, t: usize, y: usize, x: usize) -> [u8; 3] {
        let i = ((t * self.height + y) * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, t: usize, y: usize, x: usize, rgb: [u8; 3]) {
        let i = ((t * self.height + y) * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Gathers frames by index; indices must be in range.
    pub fn select_frames(&self, indices: &[usize]) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.frames) {
            return Err(invalid!("frame index {bad} out of range for {} frames", self.frames));
        }
        let mut data = Vec::with_capacity(indices.len() * self.height * self.width * 3);
        for &i in indices {
            data.extend_from_slice(self.frame(i));
        }
        let mut out = Self::new(indices.len(), self.height, self.width, data)?;
        out.fps = self.fps;
        Ok(out)
    }

    /// Nearest-neighbour spatial resize (source index `dst * src / dst_len`).
    pub fn resize_nearest(&self, height: usize, width: usize) -> Self {
        if (height, width) == (self.height, self.width) {
            return self.clone();
        }
        let ys = nearest_map(self.height, height);
        let xs = nearest_map(self.width, width);
        let mut data = Vec::with_capacity(self.frames * height * width * 3);
        for t in 0..self.frames {
            for &sy in &ys {
                for &sx in &xs {
                    data.extend_from_slice(&self.pixel(t, sy, sx));
                }
            }
        }
        let mut out = Self::new(self.frames, height, width, data).expect("sized buffer");
        out.fps = self.fps;
        out
    }

    /// Resizes to H×W, then loops (when shorter) or truncates from frame 0
    /// (when longer) to exactly T frames.
    pub fn fit_to(&self, frames: usize, height: usize, width: usize) -> Result<Self> {
        if self.is_empty() {
            return Err(invalid!("cannot fit an empty video"));
        }
        let resized = self.resize_nearest(height, width);
        let indices: Vec<usize> = (0..frames).map(|t| t % self.frames).collect();
        resized.select_frames(&indices)
    }
}

/// T binary H×W masks; 1 marks human pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskSequence {
    frames: usize,
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl MaskSequence {
    /// Builds from in-memory values, which must be 0 or 1.
    pub fn new(frames: usize, height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != frames * height * width {
            return Err(shape_err!(
                "{frames}×{height}×{width} masks need {} values, got {}",
                frames * height * width,
                data.len()
            ));
        }
        if let Some(v) = data.iter().find(|&&v| v > 1) {
            return Err(invalid!("mask values must be 0 or 1, found {v}"));
        }
        Ok(Self {
            frames,
            height,
            width,
            data,
        })
    }

    pub fn filled(frames: usize, height: usize, width: usize, value: bool) -> Self {
        Self::new(frames, height, width, vec![value as u8; frames * height * width]).expect("sized buffer")
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.frames, self.height, self.width)
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn frame(&self, t: usize) -> &[u8] {
        let n = self.height * self.width;
        &self.data[t * n..(t + 1) * n]
    }

    pub fn get(&self, t: usize, y: usize, x: usize) -> bool {
        self.data[(t * self.height + y) * self.width + x] == 1
    }

    pub fn set(&mut self, t: usize, y: usize, x: usize, on: bool) {
        self.data[(t * self.height + y) * self.width + x] = on as u8;
    }

    pub fn select_frames(&self, indices: &[usize]) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.frames) {
            return Err(invalid!(
                "mask frame index {bad} out of range for {} frames",
                self.frames
            ));
        }
        let data = indices.iter().flat_map(|&i| self.frame(i).iter().copied()).collect();
        Self::new(indices.len(), self.height, self.width, data)
    }

    pub fn resize_nearest(&self, height: usize, width: usize) -> Self {
        let ys = nearest_map(self.height, height);
        let xs = nearest_map(self.width, width);
        let mut data = Vec::with_capacity(self.frames * height * width);
        for t in 0..self.frames {
            for &sy in &ys {
                data.extend(xs.iter().map(|&sx| self.get(t, sy, sx) as u8));
            }
        }
        Self::new(self.frames, height, width, data).expect("sized buffer")
    }
}

fn nearest_map(src: usize, dst: usize) -> Vec<usize> {
    (0..dst).map(|d| d * src / dst).collect()
}

/// One detector output. `bbox` is (x0, y0, x1, y1) in pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionRecord {
    pub frame: usize,
    pub label: String,
    pub confidence: f64,
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
}

impl DetectionRecord {
    /// Checks confidence range and box ordering, and bounds when the frame
    /// size is known.
    pub fn validate(&self, frame_size: Option<(usize, usize)>) -> Result<()> {
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(invalid!("detection confidence {} outside [0, 1]", self.confidence));
        }
        let [x0, y0, x1, y1] = self.bbox;
        if !(x0 < x1 && y0 < y1) {
            return Err(invalid!("detection box {:?} is not ordered x0<x1, y0<y1", self.bbox));
        }
        if let Some((h, w)) = frame_size {
            if x0 < 0.0 || y0 < 0.0 || x1 > w as f64 || y1 > h as f64 {
                return Err(invalid!("detection box {:?} exceeds the {w}×{h} frame", self.bbox));
            }
        }
        Ok(())
    }
}

/// Highest-confidence person detection; ties go to the earliest frame, then
/// the smallest x0.
pub fn select_person_box(detections: &[DetectionRecord]) -> Result<DetectionRecord> {
    detections
        .iter()
        .filter(|d| d.label == PERSON_LABEL)
        .reduce(|best, d| {
            let better = d.confidence > best.confidence
                || (d.confidence == best.confidence
                    && (d.frame < best.frame || (d.frame == best.frame && d.bbox[0] < best.bbox[0])));
            if better {
                d
            } else {
                best
            }
        })
        .cloned()
        .ok_or(Error::NoHuman(detections.len()))
}

fn check_aligned(frames: &FrameSequence, masks: &MaskSequence) -> Result<()> {
    if frames.dims() != masks.dims() {
        return Err(shape_err!(
            "frames are {:?} (T, H, W) but masks are {:?}",
            frames.dims(),
            masks.dims()
        ));
    }
    Ok(())
}

/// Zeroes every pixel outside the mask.
pub fn apply_mask(frames: &FrameSequence, masks: &MaskSequence) -> Result<FrameSequence> {
    check_aligned(frames, masks)?;
    let mut out = frames.clone();
    for (px, &m) in out.data.chunks_exact_mut(3).zip(&masks.data) {
        if m == 0 {
            px.fill(0);
        }
    }
    Ok(out)
}

/// Pastes the masked human onto the background, after fitting the background
/// to the human clip's geometry (nearest-neighbour resize, loop or truncate).
pub fn composite_swap(
    human: &FrameSequence,
    masks: &MaskSequence,
    background: &FrameSequence,
) -> Result<FrameSequence> {
    check_aligned(human, masks)?;
    if background.is_empty() {
        return Err(invalid!("background video is empty"));
    }
    let (t, h, w) = human.dims();
    let mut out = background.fit_to(t, h, w)?;
    out.fps = human.fps;
    for ((dst, src), &m) in out
        .data
        .chunks_exact_mut(3)
        .zip(human.data.chunks_exact(3))
        .zip(&masks.data)
    {
        if m == 1 {
            dst.copy_from_slice(src);
        }
    }
    Ok(out)
}
