//! File formats: PGM previews, raw float arrays, scene text, message and
//! decoder files, and the training trace.
//!
//! Raw arrays are an 8-byte header (height and width as little-endian `u32`)
//! followed by little-endian `f64` values in row-major order. Multi-channel
//! images are stored as `k * H` rows, channel planes one after another.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{Array2, Array3};

use crate::error::{Error, Result};
use crate::kinematics::Vec3;
use crate::splat::{GaussianPrimitive, Image, SceneSequence};
use crate::watermark::{FrozenDecoder, TraceRow, WatermarkMessage};

pub const PGM_MAXVAL: u32 = 65535;

/// Channel-mean image as plain-text PGM, values clamped to `[0, 1]`.
pub fn pgm_string(image: &Image) -> String {
    let (k, h, w) = image.dim();
    let mut out = format!("P2\n{w} {h}\n{PGM_MAXVAL}\n");
    for r in 0..h {
        let row: Vec<String> = (0..w)
            .map(|c| {
                let mean = (0..k).map(|ch| image[[ch, r, c]]).sum::<f64>() / k as f64;
                ((mean.clamp(0.0, 1.0) * PGM_MAXVAL as f64).round() as u32).to_string()
            })
            .collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}

pub fn write_pgm(path: &Path, image: &Image) -> Result<()> {
    fs::write(path, pgm_string(image))?;
    Ok(())
}

/// Parses a P2 file into a single-channel image scaled to `[0, 1]`.
pub fn parse_pgm(text: &str, path: &Path) -> Result<Image> {
    let mut tokens = text
        .lines()
        .enumerate()
        .flat_map(|(i, l)| l.split('#').next().unwrap_or("").split_whitespace().map(move |t| (i + 1, t)));
    let mut next = |what: &str| tokens.next().ok_or_else(|| Error::parse(path, 0, format!("missing {what}")));
    let (line, magic) = next("magic")?;
    if magic != "P2" {
        return Err(Error::parse(path, line, format!("expected P2, got {magic:?}")));
    }
    let mut number = |what: &str| -> Result<u32> {
        let (line, t) = next(what)?;
        t.parse().map_err(|_| Error::parse(path, line, format!("bad {what} {t:?}")))
    };
    let w = number("width")? as usize;
    let h = number("height")? as usize;
    let maxval = number("maxval")?;
    if maxval == 0 {
        return Err(Error::parse(path, 0, "maxval must be positive"));
    }
    let values = (0..h * w).map(|_| number("pixel").map(|v| v as f64 / maxval as f64)).collect::<Result<Vec<_>>>()?;
    Ok(Array3::from_shape_vec((1, h, w), values).expect("length matches"))
}

pub fn read_pgm(path: &Path) -> Result<Image> {
    parse_pgm(&fs::read_to_string(path)?, path)
}

fn raw_bytes(rows: usize, cols: usize, values: impl Iterator<Item = f64>) -> Result<Vec<u8>> {
    let to_u32 = |v: usize, name| u32::try_from(v).map_err(|_| Error::param(name, format!("{v} exceeds u32")));
    let mut out = Vec::with_capacity(8 + rows * cols * 8);
    out.extend_from_slice(&to_u32(rows, "rows")?.to_le_bytes());
    out.extend_from_slice(&to_u32(cols, "cols")?.to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

fn parse_raw(bytes: &[u8], path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    if bytes.len() < 8 {
        return Err(Error::parse(path, 0, "raw file shorter than its header"));
    }
    let rows = u32::from_le_bytes(bytes[0..4].try_into().expect("4 bytes")) as usize;
    let cols = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let body = &bytes[8..];
    if body.len() != rows * cols * 8 {
        return Err(Error::parse(path, 0, format!("expected {} payload bytes for {rows}x{cols}, found {}", rows * cols * 8, body.len())));
    }
    let values = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    Ok((rows, cols, values))
}

pub fn raw_image_bytes(image: &Image) -> Result<Vec<u8>> {
    let (k, h, w) = image.dim();
    raw_bytes(k * h, w, image.iter().copied())
}

/// Reads a raw image whose rows stack `channels` planes.
pub fn parse_raw_image(bytes: &[u8], channels: usize, path: &Path) -> Result<Image> {
    let (rows, cols, values) = parse_raw(bytes, path)?;
    if channels == 0 || rows % channels != 0 {
        return Err(Error::parse(path, 0, format!("{rows} rows do not split into {channels} channels")));
    }
    Ok(Array3::from_shape_vec((channels, rows / channels, cols), values).expect("length checked"))
}

pub fn write_raw_image(path: &Path, image: &Image) -> Result<()> {
    fs::write(path, raw_image_bytes(image)?)?;
    Ok(())
}

pub fn read_raw_image(path: &Path, channels: usize) -> Result<Image> {
    parse_raw_image(&fs::read(path)?, channels, path)
}

pub fn write_raw_grid(path: &Path, grid: &Array2<f64>) -> Result<()> {
    let (h, w) = grid.dim();
    fs::write(path, raw_bytes(h, w, grid.iter().copied())?)?;
    Ok(())
}

pub fn read_raw_grid(path: &Path) -> Result<Array2<f64>> {
    let (rows, cols, values) = parse_raw(&fs::read(path)?, path)?;
    Ok(Array2::from_shape_vec((rows, cols), values).expect("length checked"))
}

/// One primitive per line: `t index x y z scale opacity s...`, preceded by
/// `# dt = ...` and, when known, `# correspondence t = j0 j1 ...` lines.
pub fn scene_string(scene: &SceneSequence) -> String {
    let mut out = format!("# dt = {}\n", scene.dt);
    if let Some(corr) = &scene.correspondence {
        for (t, c) in corr.iter().enumerate().skip(1) {
            let ids: Vec<String> = c.iter().map(usize::to_string).collect();
            let _ = writeln!(out, "# correspondence {t} = {}", ids.join(" "));
        }
    }
    out.push_str("# t index x y z scale opacity appearance...\n");
    for (t, frame) in scene.frames.iter().enumerate() {
        for (i, p) in frame.iter().enumerate() {
            let _ = write!(out, "{t} {i} {} {} {} {} {}", p.mu.x, p.mu.y, p.mu.z, p.scale, p.opacity);
            for s in &p.appearance {
                let _ = write!(out, " {s}");
            }
            out.push('\n');
        }
    }
    out
}

pub fn parse_scene(text: &str, path: &Path) -> Result<SceneSequence> {
    let mut dt = None;
    let mut corr: Vec<(usize, Vec<usize>)> = Vec::new();
    let mut frames: Vec<Vec<GaussianPrimitive>> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            let Some((key, value)) = comment.split_once('=') else { continue };
            let key: Vec<&str> = key.split_whitespace().collect();
            match key.as_slice() {
                ["dt"] => dt = Some(value.trim().parse::<f64>().map_err(|_| Error::parse(path, line_no, format!("bad dt {:?}", value.trim())))?),
                ["correspondence", t] => {
                    let t = t.parse().map_err(|_| Error::parse(path, line_no, format!("bad frame index {t:?}")))?;
                    let ids = value
                        .split_whitespace()
                        .map(|v| v.parse().map_err(|_| Error::parse(path, line_no, format!("bad index {v:?}"))))
                        .collect::<Result<Vec<usize>>>()?;
                    corr.push((t, ids));
                }
                _ => {}
            }
            continue;
        }
        let nums: Vec<&str> = line.split_whitespace().collect();
        if nums.len() < 8 {
            return Err(Error::parse(path, line_no, format!("expected at least 8 fields, got {}", nums.len())));
        }
        let index = |k: usize| nums[k].parse::<usize>().map_err(|_| Error::parse(path, line_no, format!("bad integer {:?}", nums[k])));
        let (t, idx) = (index(0)?, index(1)?);
        let vals = nums[2..]
            .iter()
            .map(|v| v.parse::<f64>().map_err(|_| Error::parse(path, line_no, format!("bad number {v:?}"))))
            .collect::<Result<Vec<f64>>>()?;
        if t > frames.len() || (t + 1 < frames.len()) {
            return Err(Error::parse(path, line_no, format!("frame {t} out of order")));
        }
        if t == frames.len() {
            frames.push(Vec::new());
        }
        if idx != frames[t].len() {
            return Err(Error::parse(path, line_no, format!("expected primitive index {}, got {idx}", frames[t].len())));
        }
        let p = GaussianPrimitive::new(Vec3::new(vals[0], vals[1], vals[2]), vals[3], vals[4], vals[5..].to_vec())
            .map_err(|e| Error::parse(path, line_no, e.to_string()))?;
        frames[t].push(p);
    }
    let dt = dt.ok_or_else(|| Error::parse(path, 0, "missing `# dt = ...` header"))?;
    let correspondence = if corr.is_empty() {
        None
    } else {
        let mut table = vec![Vec::new(); frames.len()];
        for (t, ids) in corr {
            if t == 0 || t >= frames.len() {
                return Err(Error::parse(path, 0, format!("correspondence for frame {t} out of range")));
            }
            table[t] = ids;
        }
        Some(table)
    };
    SceneSequence::new(frames, dt, correspondence).map_err(|e| Error::parse(path, 0, e.to_string()))
}

pub fn write_scene(path: &Path, scene: &SceneSequence) -> Result<()> {
    fs::write(path, scene_string(scene))?;
    Ok(())
}

pub fn read_scene(path: &Path) -> Result<SceneSequence> {
    parse_scene(&fs::read_to_string(path)?, path)
}

pub fn write_message(path: &Path, message: &WatermarkMessage) -> Result<()> {
    fs::write(path, format!("{message}\n"))?;
    Ok(())
}

pub fn read_message(path: &Path) -> Result<WatermarkMessage> {
    fs::read_to_string(path)?.parse().map_err(|e: Error| Error::parse(path, 1, e.to_string()))
}

/// The decoder is fully determined by `seed bits height width`.
pub fn decoder_string(decoder: &FrozenDecoder) -> String {
    let (h, w) = decoder.image_dims();
    format!("seed = {}\nbits = {}\nheight = {h}\nwidth = {w}\n", decoder.seed(), decoder.bits())
}

pub fn parse_decoder(text: &str, path: &Path) -> Result<FrozenDecoder> {
    let mut fields = [None; 4];
    const KEYS: [&str; 4] = ["seed", "bits", "height", "width"];
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::parse(path, i + 1, "expected `key = value`"))?;
        let slot = KEYS.iter().position(|key| *key == k.trim()).ok_or_else(|| Error::parse(path, i + 1, format!("unknown key {:?}", k.trim())))?;
        fields[slot] = Some(v.trim().parse::<u64>().map_err(|_| Error::parse(path, i + 1, format!("bad integer {:?}", v.trim())))?);
    }
    let get = |slot: usize| fields[slot].ok_or_else(|| Error::parse(path, 0, format!("missing key `{}`", KEYS[slot])));
    FrozenDecoder::for_image(get(0)?, get(1)? as usize, get(2)? as usize, get(3)? as usize).map_err(|e| Error::parse(path, 0, e.to_string()))
}

pub fn write_decoder(path: &Path, decoder: &FrozenDecoder) -> Result<()> {
    fs::write(path, decoder_string(decoder))?;
    Ok(())
}

pub fn read_decoder(path: &Path) -> Result<FrozenDecoder> {
    parse_decoder(&fs::read_to_string(path)?, path)
}

pub const TRACE_HEADER: &str = "epoch,loss_total,loss_wm,loss_wav,loss_con,loss_rec,bit_acc,min_bit_acc";

pub fn trace_csv(trace: &[TraceRow]) -> String {
    let mut out = format!("{TRACE_HEADER}\n");
    for row in trace {
        let c = &row.components;
        let _ = writeln!(out, "{},{},{},{},{},{},{},{}", row.epoch, row.loss_total, c.wm, c.wav, c.con, c.rec, row.bit_acc, row.min_bit_acc);
    }
    out
}
