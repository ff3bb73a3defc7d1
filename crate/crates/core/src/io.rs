//! File formats: 16-bit label PNGs, RGB images, 8-bit proposal masks, the
//! PTF float tensor container and the JSON side files.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use image::{DynamicImage, GrayImage, ImageBuffer, Luma, RgbImage};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::boxgt::{BoundingBox, BoxAnnotation};
use crate::error::{Error, Result};
use crate::grid::{BinaryMask, ChannelGrid};
use crate::instcrf::Detection;
use crate::label::Raster16;

pub const PTF_MAGIC: &[u8; 4] = b"PTF1";
const PTF_HEADER: u64 = 16;

pub fn read_label_png(path: &Path) -> Result<Raster16> {
    let img = decode(path)?;
    match img {
        DynamicImage::ImageLuma16(buf) => {
            let (w, h) = buf.dimensions();
            Raster16::from_vec(h as usize, w as usize, buf.into_raw())
        }
        other => Err(Error::format(
            path,
            format!(
                "expected 16-bit single-channel PNG, found {:?}",
                other.color()
            ),
        )),
    }
}

pub fn write_label_png(map: &Raster16, path: &Path) -> Result<()> {
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(map.width() as u32, map.height() as u32, map.data().to_vec())
            .expect("raster length matches extent");
    ensure_parent(path)?;
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::format(path, e.to_string()))
}

pub fn read_rgb_png(path: &Path) -> Result<RgbImage> {
    Ok(decode(path)?.to_rgb8())
}

pub fn write_rgb_png(img: &RgbImage, path: &Path) -> Result<()> {
    ensure_parent(path)?;
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::format(path, e.to_string()))
}

/// 8-bit mask: any non-zero pixel is foreground.
pub fn read_mask_png(path: &Path) -> Result<BinaryMask> {
    let img = decode(path)?;
    let gray = match img {
        DynamicImage::ImageLuma8(buf) => buf,
        other => {
            return Err(Error::format(
                path,
                format!(
                    "expected 8-bit single-channel mask, found {:?}",
                    other.color()
                ),
            ))
        }
    };
    let (w, h) = gray.dimensions();
    BinaryMask::from_vec(
        h as usize,
        w as usize,
        gray.into_raw().into_iter().map(|v| v != 0).collect(),
    )
}

pub fn write_mask_png(mask: &BinaryMask, path: &Path) -> Result<()> {
    let buf = GrayImage::from_raw(
        mask.width() as u32,
        mask.height() as u32,
        mask.data()
            .iter()
            .map(|&b| if b { 255 } else { 0 })
            .collect(),
    )
    .expect("mask length matches extent");
    ensure_parent(path)?;
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::format(path, e.to_string()))
}

fn decode(path: &Path) -> Result<DynamicImage> {
    let reader = image::ImageReader::open(path).map_err(|e| Error::io(path, e))?;
    reader
        .decode()
        .map_err(|e| Error::format(path, e.to_string()))
}

pub fn encode_ptf(tensor: &ChannelGrid<f32>) -> Result<Vec<u8>> {
    if let Some(i) = tensor.data().iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteValue(i));
    }
    let mut out = Vec::with_capacity(PTF_HEADER as usize + 4 * tensor.data().len());
    out.extend_from_slice(PTF_MAGIC);
    for dim in [tensor.height(), tensor.width(), tensor.channels()] {
        out.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    for v in tensor.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_ptf(bytes: &[u8], path: &Path) -> Result<ChannelGrid<f32>> {
    if bytes.len() < 4 || &bytes[..4] != PTF_MAGIC {
        return Err(Error::BadMagic(path.to_path_buf()));
    }
    if (bytes.len() as u64) < PTF_HEADER {
        return Err(Error::TruncatedFile {
            path: path.to_path_buf(),
            expected: PTF_HEADER,
            found: bytes.len() as u64,
        });
    }
    let dim = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as u64;
    let (h, w, c) = (dim(4), dim(8), dim(12));
    let expected = PTF_HEADER + 4 * h * w * c;
    let found = bytes.len() as u64;
    if found < expected {
        return Err(Error::TruncatedFile {
            path: path.to_path_buf(),
            expected,
            found,
        });
    }
    if found > expected {
        return Err(Error::format(
            path,
            format!("{} trailing bytes after payload", found - expected),
        ));
    }
    let data: Vec<f32> = bytes[PTF_HEADER as usize..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    if let Some(i) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteValue(i));
    }
    ChannelGrid::from_vec(h as usize, w as usize, c as usize, data)
}

pub fn read_ptf(path: &Path) -> Result<ChannelGrid<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_ptf(&bytes, path)
}

pub fn write_ptf(tensor: &ChannelGrid<f32>, path: &Path) -> Result<()> {
    let bytes = encode_ptf(tensor)?;
    ensure_parent(path)?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_json<T: Serialize + ?Sized>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("value serializes");
    text.push('\n');
    ensure_parent(path)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct AnnotationRecord {
    class_id: u16,
    #[serde(rename = "box")]
    bbox: [u32; 4],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DetectionRecord {
    label: u16,
    score: f32,
    #[serde(rename = "box")]
    bbox: [u32; 4],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TagRecord {
    tags: Vec<u16>,
}

/// `[{"class_id":int,"box":[x0,y0,x1,y1]}]`
pub fn read_annotations(path: &Path) -> Result<Vec<BoxAnnotation>> {
    let records: Vec<AnnotationRecord> = read_json(path)?;
    Ok(records
        .into_iter()
        .map(|r| BoxAnnotation {
            class_id: r.class_id,
            bbox: BoundingBox::from_array(r.bbox),
        })
        .collect())
}

pub fn write_annotations(annotations: &[BoxAnnotation], path: &Path) -> Result<()> {
    let records: Vec<AnnotationRecord> = annotations
        .iter()
        .map(|a| AnnotationRecord {
            class_id: a.class_id,
            bbox: a.bbox.to_array(),
        })
        .collect();
    write_json(&records, path)
}

/// `[{"label":int,"score":float,"box":[x0,y0,x1,y1]}]`
pub fn read_detections(path: &Path) -> Result<Vec<Detection>> {
    let records: Vec<DetectionRecord> = read_json(path)?;
    records
        .into_iter()
        .map(|r| Detection::new(r.label, r.score, BoundingBox::from_array(r.bbox)))
        .collect()
}

pub fn write_detections(dets: &[Detection], path: &Path) -> Result<()> {
    let records: Vec<DetectionRecord> = dets
        .iter()
        .filter(|d| !d.is_dummy)
        .map(|d| DetectionRecord {
            label: d.label,
            score: d.score,
            bbox: d.bbox.to_array(),
        })
        .collect();
    write_json(&records, path)
}

/// `{"tags":[int,...]}`
pub fn read_tags(path: &Path) -> Result<Vec<u16>> {
    let r: TagRecord = read_json(path)?;
    let mut tags = r.tags;
    tags.sort_unstable();
    tags.dedup();
    Ok(tags)
}

pub fn write_tags(tags: &[u16], path: &Path) -> Result<()> {
    write_json(
        &TagRecord {
            tags: tags.to_vec(),
        },
        path,
    )
}

/// Files in `dir` with extension `ext`, sorted lexicographically by file name.
pub fn list_files(dir: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_file() && path.extension().and_then(|e| e.to_str()) == Some(ext) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// File stem as a string, used to pair files across directories.
pub fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Proposal directory: one 8-bit PNG mask per proposal, lexicographic order defines index.
pub fn read_proposal_dir(dir: &Path) -> Result<Vec<BinaryMask>> {
    list_files(dir, "png")?
        .iter()
        .map(|p| read_mask_png(p))
        .collect()
}
