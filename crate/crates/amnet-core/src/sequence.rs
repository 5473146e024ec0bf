//! Sequence records and the on-disk layout: a directory with `img/`
//! (zero-padded numbered frames) plus `groundtruth_rect.txt`, one
//! "x,y,w,h" line per frame (comma or tab separated).

use std::path::{Path, PathBuf};

use image::RgbImage;

use crate::error::{Error, Result};
use crate::tracker::BBox;

#[derive(Debug, Clone)]
pub enum FrameSource {
    Memory(Vec<RgbImage>),
    Paths(Vec<PathBuf>),
}

#[derive(Debug, Clone)]
pub struct SequenceRecord {
    pub name: String,
    pub frames: FrameSource,
    pub boxes: Vec<BBox>,
}

impl SequenceRecord {
    pub fn from_memory(name: impl Into<String>, frames: Vec<RgbImage>, boxes: Vec<BBox>) -> Result<Self> {
        if frames.len() != boxes.len() {
            return Err(Error::InvalidArgument(format!(
                "{} frames but {} ground-truth boxes",
                frames.len(),
                boxes.len()
            )));
        }
        Ok(SequenceRecord { name: name.into(), frames: FrameSource::Memory(frames), boxes })
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn frame(&self, i: usize) -> Result<RgbImage> {
        match &self.frames {
            FrameSource::Memory(v) => v
                .get(i)
                .cloned()
                .ok_or_else(|| Error::InvalidArgument(format!("frame {i} out of range"))),
            FrameSource::Paths(v) => {
                let path = v
                    .get(i)
                    .ok_or_else(|| Error::InvalidArgument(format!("frame {i} out of range")))?;
                let img = image::open(path).map_err(|e| Error::Image {
                    path: path.display().to_string(),
                    reason: e.to_string(),
                })?;
                Ok(img.to_rgb8())
            }
        }
    }
}

fn parse_gt_line(path: &Path, lineno: usize, line: &str) -> Result<BBox> {
    let sep = if line.contains(',') { ',' } else { '\t' };
    let fields: Vec<&str> = line.split(sep).map(str::trim).collect();
    let err = |reason: String| Error::SequenceFormat {
        path: path.display().to_string(),
        line: lineno,
        reason,
    };
    if fields.len() != 4 {
        return Err(err(format!("expected 4 fields, found {}", fields.len())));
    }
    let mut vals = [0f64; 4];
    for (i, f) in fields.iter().enumerate() {
        vals[i] = f
            .parse::<f64>()
            .map_err(|_| err(format!("unparsable number '{f}'")))?;
    }
    let b = BBox::new(vals[0], vals[1], vals[2], vals[3]);
    if b.w <= 0.0 || b.h <= 0.0 {
        return Err(err(format!("non-positive box size {}x{}", b.w, b.h)));
    }
    Ok(b)
}

/// Loads one sequence directory. Frame files are taken in lexicographic
/// order; ground-truth coordinates are used verbatim.
pub fn load_otb_sequence(dir: impl AsRef<Path>) -> Result<SequenceRecord> {
    let dir = dir.as_ref();
    let name = dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "sequence".into());

    let gt_path = dir.join("groundtruth_rect.txt");
    let text = std::fs::read_to_string(&gt_path)
        .map_err(|e| Error::io(gt_path.display().to_string(), e))?;
    let mut boxes = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        boxes.push(parse_gt_line(&gt_path, i + 1, line)?);
    }

    let img_dir = dir.join("img");
    let entries = std::fs::read_dir(&img_dir).map_err(|e| Error::io(img_dir.display().to_string(), e))?;
    let mut frames: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            matches!(
                p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
                Some("png" | "jpg" | "jpeg")
            )
        })
        .collect();
    frames.sort();

    if frames.len() != boxes.len() {
        return Err(Error::SequenceFormat {
            path: gt_path.display().to_string(),
            line: boxes.len(),
            reason: format!("{} ground-truth boxes but {} frame images", boxes.len(), frames.len()),
        });
    }
    if boxes.is_empty() {
        return Err(Error::SequenceFormat {
            path: gt_path.display().to_string(),
            line: 0,
            reason: "empty sequence".into(),
        });
    }
    Ok(SequenceRecord { name, frames: FrameSource::Paths(frames), boxes })
}

/// Writes a sequence in the same layout `load_otb_sequence` reads.
pub fn save_otb_sequence(dir: impl AsRef<Path>, seq: &SequenceRecord) -> Result<()> {
    let dir = dir.as_ref();
    let img_dir = dir.join("img");
    std::fs::create_dir_all(&img_dir).map_err(|e| Error::io(img_dir.display().to_string(), e))?;
    for i in 0..seq.len() {
        let frame = seq.frame(i)?;
        let path = img_dir.join(format!("{:04}.png", i + 1));
        frame
            .save(&path)
            .map_err(|e| Error::Image { path: path.display().to_string(), reason: e.to_string() })?;
    }
    let gt: String = seq
        .boxes
        .iter()
        .map(|b| format!("{},{},{},{}\n", b.x, b.y, b.w, b.h))
        .collect();
    let gt_path = dir.join("groundtruth_rect.txt");
    std::fs::write(&gt_path, gt).map_err(|e| Error::io(gt_path.display().to_string(), e))
}

/// Loads every sequence under a dataset root, sorted by directory name, or
/// the named subset in the given order.
pub fn load_dataset(root: impl AsRef<Path>, names: Option<&[String]>) -> Result<Vec<SequenceRecord>> {
    let root = root.as_ref();
    match names {
        Some(names) => names.iter().map(|n| load_otb_sequence(root.join(n))).collect(),
        None => {
            let entries =
                std::fs::read_dir(root).map_err(|e| Error::io(root.display().to_string(), e))?;
            let mut dirs: Vec<PathBuf> = entries
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.is_dir())
                .collect();
            dirs.sort();
            if dirs.is_empty() {
                return Err(Error::InvalidArgument(format!(
                    "no sequence directories under {}",
                    root.display()
                )));
            }
            dirs.into_iter().map(load_otb_sequence).collect()
        }
    }
}
