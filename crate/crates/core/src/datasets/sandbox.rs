//! Procedural bias sandbox: a class-specific moving sprite (the "human")
//! over a procedural texture (the "background") whose class agrees with the
//! sprite's with probability ρ.

use std::f64::consts::TAU;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{build_mini_action_swap, to_sample};
use crate::error::{invalid, Result};
use crate::manifest::{Manifest, ManifestItem};
use crate::models::Sample;
use crate::parallel::par_map;
use crate::rng;
use crate::video::{composite_swap, io, FrameSequence, MaskSequence};

/// Sprite colour, shared by every class so only shape and motion identify it.
pub const SPRITE_RGB: [u8; 3] = [236, 196, 160];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SandboxConfig {
    pub classes: usize,
    pub frames: usize,
    /// Square frame side in pixels.
    pub size: usize,
    /// Sprite side in pixels.
    pub sprite: usize,
    /// Probability that a video's texture is its class's canonical texture.
    pub rho: f64,
}

impl Default for SandboxConfig {
    fn default() -> Self {
        Self {
            classes: 4,
            frames: 8,
            size: 32,
            sprite: 8,
            rho: 1.0,
        }
    }
}

impl SandboxConfig {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(invalid!("sandbox needs at least 2 classes, got {}", self.classes));
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(invalid!("rho must lie in [0, 1], got {}", self.rho));
        }
        if self.frames == 0 {
            return Err(invalid!("sandbox frames must be positive"));
        }
        if self.sprite < 3 || self.sprite >= self.size {
            return Err(invalid!(
                "sprite side {} must lie in [3, size={})",
                self.sprite,
                self.size
            ));
        }
        Ok(())
    }

    pub fn class_name(k: usize) -> String {
        format!("class{k}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Motion {
    Translate,
    Oscillate,
    Orbit,
    ZigZag,
    Rise,
    Diagonal,
    Bounce,
    Jitter,
}

impl Motion {
    pub const ALL: [Motion; 8] = [
        Motion::Translate,
        Motion::Oscillate,
        Motion::Orbit,
        Motion::ZigZag,
        Motion::Rise,
        Motion::Diagonal,
        Motion::Bounce,
        Motion::Jitter,
    ];

    /// Top-left sprite corner at frame `t`, inside [0, range]².
    fn position(self, t: usize, frames: usize, range: usize, start: (f64, f64), phase: f64) -> (usize, usize) {
        let r = range as f64;
        let u = if frames > 1 {
            t as f64 / (frames - 1) as f64
        } else {
            0.0
        };
        let (y0, x0) = start;
        let (y, x) = match self {
            Motion::Translate => (y0, u * r),
            Motion::Oscillate => (y0, r / 2.0 * (1.0 + (TAU * u + phase).sin())),
            Motion::Orbit => (
                r / 2.0 * (1.0 + (TAU * u + phase).sin()),
                r / 2.0 * (1.0 + (TAU * u + phase).cos()),
            ),
            Motion::ZigZag => (r * (1.0 - (2.0 * (2.0 * u).fract() - 1.0).abs()), u * r),
            Motion::Rise => ((1.0 - u) * r, x0),
            Motion::Diagonal => (u * r, u * r),
            Motion::Bounce => (r * (TAU * u + phase).sin().abs(), x0),
            Motion::Jitter => (y0 + ((t * 7) % 3) as f64 - 1.0, x0 + ((t * 5) % 3) as f64 - 1.0),
        };
        (y.round().clamp(0.0, r) as usize, x.round().clamp(0.0, r) as usize)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Block,
    Cross,
    Ring,
    Diamond,
}

impl Shape {
    pub const ALL: [Shape; 4] = [Shape::Block, Shape::Cross, Shape::Ring, Shape::Diamond];

    fn covers(self, dy: usize, dx: usize, side: usize) -> bool {
        let third = side / 3;
        let (cy, cx) = (
            2 * dy as isize - (side as isize - 1),
            2 * dx as isize - (side as isize - 1),
        );
        match self {
            Shape::Block => true,
            Shape::Cross => (third..side - third).contains(&dy) || (third..side - third).contains(&dx),
            Shape::Ring => dy < 2 || dx < 2 || dy >= side - 2 || dx >= side - 2,
            Shape::Diamond => cy.abs() + cx.abs() <= side as isize,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Texture {
    Stripes,
    Checks,
    Noise,
}

impl Texture {
    pub const ALL: [Texture; 3] = [Texture::Stripes, Texture::Checks, Texture::Noise];
}

const PALETTE: [[u8; 3]; 8] = [
    [40, 90, 200],
    [30, 160, 60],
    [200, 40, 40],
    [120, 60, 170],
    [20, 150, 160],
    [210, 150, 20],
    [90, 90, 90],
    [160, 30, 120],
];

/// Canonical texture of class `k`: family, two colours and a period.
fn texture_of(k: usize) -> (Texture, [u8; 3], [u8; 3], usize) {
    let family = Texture::ALL[k % 3];
    let a = PALETTE[k % PALETTE.len()];
    let b = PALETTE[(k + 3) % PALETTE.len()].map(|c| c / 3);
    (family, a, b, 3 + (k / 3) % 4)
}

fn texel(k: usize, y: usize, x: usize) -> [u8; 3] {
    let (family, a, b, p) = texture_of(k);
    let on = match family {
        Texture::Stripes => (y / p).is_multiple_of(2),
        Texture::Checks => (y / p + x / p).is_multiple_of(2),
        Texture::Noise => rng::mix(rng::mix(k as u64, (y / p) as u64), (x / p) as u64) & 1 == 0,
    };
    if on {
        a
    } else {
        b
    }
}

/// One generated video with its exact sprite masks and the clean texture.
#[derive(Debug, Clone, PartialEq)]
pub struct SandboxVideo {
    pub frames: FrameSequence,
    pub masks: MaskSequence,
    pub background: FrameSequence,
}

/// Generated items (paths relative to the sandbox root) and their pixels, in
/// the same order.
#[derive(Debug, Clone, PartialEq)]
pub struct Sandbox {
    pub config: SandboxConfig,
    pub manifest: Manifest,
    pub videos: Vec<SandboxVideo>,
}

fn render(cfg: &SandboxConfig, class: usize, texture_class: usize, rng: &mut rng::Rng) -> SandboxVideo {
    let (s, t_len, side) = (cfg.size, cfg.frames, cfg.sprite);
    let range = s - side;
    let offset = (rng.gen_range(0..s), rng.gen_range(0..s));
    let start = (rng.gen_range(0..=range) as f64, rng.gen_range(0..=range) as f64);
    let phase = rng.gen_range(0.0..TAU);

    let mut plane = Vec::with_capacity(s * s * 3);
    for y in 0..s {
        for x in 0..s {
            plane.extend(texel(texture_class, y + offset.0, x + offset.1));
        }
    }
    let background = FrameSequence::new(t_len, s, s, plane.repeat(t_len)).expect("sized buffer");
    let mut frames = background.clone();
    let mut masks = MaskSequence::filled(t_len, s, s, false);
    let motion = Motion::ALL[class % Motion::ALL.len()];
    let shape = Shape::ALL[class % Shape::ALL.len()];
    for t in 0..t_len {
        let (py, px) = motion.position(t, t_len, range, start, phase);
        for dy in 0..side {
            for dx in 0..side {
                if shape.covers(dy, dx, side) {
                    frames.set_pixel(t, py + dy, px + dx, SPRITE_RGB);
                    masks.set(t, py + dy, px + dx, true);
                }
            }
        }
    }
    SandboxVideo {
        frames,
        masks,
        background,
    }
}

/// `n_per_class` videos per class. Each video draws its texture class from
/// its own seeded stream: the canonical one with probability ρ, otherwise
/// uniformly among the other classes.
pub fn generate_synthetic_sandbox(config: &SandboxConfig, n_per_class: usize, seed: u64) -> Result<Sandbox> {
    config.validate()?;
    let classes: Vec<String> = (0..config.classes).map(SandboxConfig::class_name).collect();
    let mut items = Vec::new();
    let mut videos = Vec::new();
    for (k, name) in classes.iter().enumerate() {
        for i in 0..n_per_class {
            let id = format!("{name}_{i:04}");
            let mut rng = rng::derived(seed, &format!("sandbox/{id}"));
            let texture_class = if rng.gen::<f64>() < config.rho {
                k
            } else {
                let j = rng.gen_range(0..config.classes - 1);
                if j >= k {
                    j + 1
                } else {
                    j
                }
            };
            videos.push(render(config, k, texture_class, &mut rng));
            let mut item = ManifestItem::new(&id, name, Path::new("frames").join(&id));
            item.background_class = Some(classes[texture_class].clone());
            item.masks_dir = Some(Path::new("masks").join(&id));
            item.inpainted_dir = Some(Path::new("backgrounds").join(&id));
            items.push(item);
        }
    }
    Ok(Sandbox {
        config: config.clone(),
        manifest: Manifest::new(classes, items),
        videos,
    })
}

impl Sandbox {
    pub fn len(&self) -> usize {
        self.videos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.videos.is_empty()
    }

    pub fn video(&self, video_id: &str) -> Option<&SandboxVideo> {
        let i = self.manifest.items.iter().position(|i| i.video_id == video_id)?;
        Some(&self.videos[i])
    }

    /// Writes frames, masks, clean backgrounds and `manifest.json` under `dir`.
    pub fn write_to(&self, dir: &Path, jobs: usize) -> Result<()> {
        let pairs: Vec<(&ManifestItem, &SandboxVideo)> = self.manifest.items.iter().zip(&self.videos).collect();
        par_map(&pairs, jobs, |(item, v)| -> Result<()> {
            io::write_frames(&dir.join(&item.frames_dir), &v.frames)?;
            if let Some(m) = &item.masks_dir {
                io::write_masks(&dir.join(m), &v.masks)?;
            }
            if let Some(b) = &item.inpainted_dir {
                io::write_frames(&dir.join(b), &v.background)?;
            }
            Ok(())
        })
        .into_iter()
        .collect::<Result<()>>()?;
        let mut rooted = self.manifest.clone();
        for item in &mut rooted.items {
            item.frames_dir = dir.join(&item.frames_dir);
            item.masks_dir = item.masks_dir.as_ref().map(|p| dir.join(p));
            item.inpainted_dir = item.inpainted_dir.as_ref().map(|p| dir.join(p));
        }
        rooted.save(&dir.join("manifest.json"))
    }

    /// Counterfactual test set built in memory: each human is composited on
    /// the clean background of a video from another class.
    pub fn swap_set(&self, seed: u64, target: Option<usize>) -> Result<Sandbox> {
        let manifest = build_mini_action_swap(&self.manifest, seed, target, Path::new(""))?;
        let mut videos = Vec::with_capacity(manifest.len());
        for item in &manifest.items {
            let human = self
                .video(item.human_video.as_deref().expect("swap items name a human"))
                .expect("human from this sandbox");
            let bg = self
                .video(item.background_video.as_deref().expect("swap items name a background"))
                .expect("background from this sandbox");
            let frames = composite_swap(&human.frames, &human.masks, &bg.background)?;
            videos.push(SandboxVideo {
                frames,
                masks: human.masks.clone(),
                background: bg.background.clone(),
            });
        }
        let mut manifest = manifest;
        for item in &mut manifest.items {
            item.masks_dir = Some(Path::new("masks").join(&item.video_id));
            item.inpainted_dir = Some(Path::new("backgrounds").join(&item.video_id));
        }
        Ok(Sandbox {
            config: self.config.clone(),
            manifest,
            videos,
        })
    }

    /// Model samples labelled by human class.
    pub fn samples(&self, frames: usize, size: usize) -> Result<Vec<Sample>> {
        self.manifest
            .items
            .iter()
            .zip(&self.videos)
            .map(|(item, v)| {
                let label = self.manifest.class_index(&item.human_class)?;
                to_sample(&v.frames, Some(&v.masks), label, frames, size)
            })
            .collect()
    }
}
