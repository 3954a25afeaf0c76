//! Netpbm frame storage: one `frame_%05d.ppm` (P6) per RGB frame and one
//! `frame_%05d.pgm` (P5, 0/255) per mask frame.

use std::fs;
use std::path::{Path, PathBuf};

use super::{DetectionRecord, FrameSequence, MaskSequence};
use crate::error::{Error, Result};

fn format_err(kind: &'static str, path: &Path, reason: impl Into<String>) -> Error {
    Error::Format {
        kind,
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

pub fn frame_name(t: usize, ext: &str) -> String {
    format!("frame_{t:05}.{ext}")
}

/// Parses a binary Netpbm image with maxval 255; returns (width, height, pixels).
fn parse_netpbm(
    bytes: &[u8],
    magic: &[u8; 2],
    channels: usize,
    kind: &'static str,
    path: &Path,
) -> Result<(usize, usize, Vec<u8>)> {
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(format_err(
            kind,
            path,
            format!("expected magic {}", String::from_utf8_lossy(magic)),
        ));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| format_err(kind, path, format!("bad header number at byte {start}")))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(format_err(kind, path, "missing whitespace after header"));
    }
    pos += 1;
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(format_err(
            kind,
            path,
            format!("maxval {maxval} unsupported, expected 255"),
        ));
    }
    let need = width * height * channels;
    let body = &bytes[pos..];
    if body.len() != need {
        return Err(format_err(
            kind,
            path,
            format!("expected {need} pixel bytes, found {}", body.len()),
        ));
    }
    Ok((width, height, body.to_vec()))
}

fn encode_netpbm(magic: &str, width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = format!("{magic}\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

pub fn read_ppm(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    parse_netpbm(&fs::read(path)?, b"P6", 3, "PPM", path)
}

pub fn write_ppm(path: &Path, width: usize, height: usize, rgb: &[u8]) -> Result<()> {
    Ok(fs::write(path, encode_netpbm("P6", width, height, rgb))?)
}

pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    parse_netpbm(&fs::read(path)?, b"P5", 1, "PGM", path)
}

pub fn write_pgm(path: &Path, width: usize, height: usize, gray: &[u8]) -> Result<()> {
    Ok(fs::write(path, encode_netpbm("P5", width, height, gray))?)
}

/// Files named `frame_NNNNN.<ext>`, which must be numbered 0..T contiguously.
fn frame_files(dir: &Path, ext: &str, kind: &'static str) -> Result<Vec<PathBuf>> {
    let mut numbered = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        let Some(stem) = name
            .strip_prefix("frame_")
            .and_then(|s| s.strip_suffix(&format!(".{ext}")))
        else {
            continue;
        };
        if let Ok(i) = stem.parse::<usize>() {
            numbered.push((i, path));
        }
    }
    numbered.sort();
    for (expect, (i, _)) in numbered.iter().enumerate() {
        if *i != expect {
            return Err(format_err(
                kind,
                dir,
                format!("frame {expect} missing (found frame {i})"),
            ));
        }
    }
    if numbered.is_empty() {
        return Err(format_err(kind, dir, format!("no frame_NNNNN.{ext} files")));
    }
    Ok(numbered.into_iter().map(|(_, p)| p).collect())
}

pub fn read_frames(dir: &Path) -> Result<FrameSequence> {
    let files = frame_files(dir, "ppm", "PPM")?;
    let mut size = None;
    let mut frames = Vec::with_capacity(files.len());
    for path in &files {
        let (w, h, px) = read_ppm(path)?;
        if *size.get_or_insert((w, h)) != (w, h) {
            return Err(format_err(
                "PPM",
                path,
                format!("frame is {w}×{h}, earlier frames differ"),
            ));
        }
        frames.push(px);
    }
    let (w, h) = size.expect("at least one frame");
    FrameSequence::from_frames(h, w, frames)
}

pub fn write_frames(dir: &Path, video: &FrameSequence) -> Result<()> {
    fs::create_dir_all(dir)?;
    for t in 0..video.frames() {
        write_ppm(
            &dir.join(frame_name(t, "ppm")),
            video.width(),
            video.height(),
            video.frame(t),
        )?;
    }
    Ok(())
}

pub fn read_masks(dir: &Path) -> Result<MaskSequence> {
    let files = frame_files(dir, "pgm", "PGM")?;
    let mut size = None;
    let mut data = Vec::new();
    for path in &files {
        let (w, h, px) = read_pgm(path)?;
        if *size.get_or_insert((w, h)) != (w, h) {
            return Err(format_err(
                "PGM",
                path,
                format!("mask is {w}×{h}, earlier masks differ"),
            ));
        }
        for v in px {
            data.push(match v {
                0 => 0,
                255 => 1,
                other => {
                    return Err(format_err(
                        "PGM",
                        path,
                        format!("mask value {other} is neither 0 nor 255"),
                    ))
                }
            });
        }
    }
    let (w, h) = size.expect("at least one mask");
    MaskSequence::new(files.len(), h, w, data)
}

pub fn write_masks(dir: &Path, masks: &MaskSequence) -> Result<()> {
    fs::create_dir_all(dir)?;
    let (t, h, w) = masks.dims();
    for i in 0..t {
        let gray: Vec<u8> = masks.frame(i).iter().map(|&m| m * 255).collect();
        write_pgm(&dir.join(frame_name(i, "pgm")), w, h, &gray)?;
    }
    Ok(())
}

/// Reads a JSON list of detections and validates each record.
pub fn read_detections(path: &Path) -> Result<Vec<DetectionRecord>> {
    let records: Vec<DetectionRecord> =
        serde_json::from_slice(&fs::read(path)?).map_err(|e| format_err("detections", path, e.to_string()))?;
    for r in &records {
        r.validate(None)
            .map_err(|e| format_err("detections", path, e.to_string()))?;
    }
    Ok(records)
}
