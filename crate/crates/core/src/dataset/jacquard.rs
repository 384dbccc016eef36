//! Jacquard on-disk layout.
//!
//! Each object has a directory; each viewpoint `<scene>` inside it has
//! `<scene>_RGB.png`, `<scene>_perfect_depth.tiff`, `<scene>_mask.png` and
//! `<scene>_grasps.txt` with one `x;y;theta;opening;jaw_size` line per grasp.
//! An optional `manifest.csv` at the root lists `scene_id,object_id` rows.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use tiff::decoder::{Decoder, DecodingResult};
use tiff::encoder::{colortype, TiffEncoder};

use super::{GraspAnnotation, Image, SceneSample};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.csv";
const GRASPS_SUFFIX: &str = "_grasps.txt";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScenePaths {
    pub rgb: PathBuf,
    pub depth: PathBuf,
    pub mask: PathBuf,
    pub grasps: PathBuf,
}

impl ScenePaths {
    pub fn new(root: &Path, object_id: &str, scene_id: &str) -> Self {
        let dir = root.join(object_id);
        Self {
            rgb: dir.join(format!("{scene_id}_RGB.png")),
            depth: dir.join(format!("{scene_id}_perfect_depth.tiff")),
            mask: dir.join(format!("{scene_id}_mask.png")),
            grasps: dir.join(format!("{scene_id}{GRASPS_SUFFIX}")),
        }
    }
}

/// Parses grasp lines; `file` is only used in error messages. Blank lines are
/// skipped and repeated rows are kept.
pub fn parse_grasps(text: &str, file: &Path) -> Result<Vec<GraspAnnotation>> {
    let mut grasps = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse {
            file: file.to_path_buf(),
            line: i + 1,
            message,
        };
        let fields: Vec<&str> = line.split(';').collect();
        if fields.len() != 5 {
            return Err(err(format!(
                "expected 5 ';'-separated fields, found {}",
                fields.len()
            )));
        }
        let mut v = [0.0; 5];
        for (slot, field) in v.iter_mut().zip(&fields) {
            *slot = field
                .trim()
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| err(format!("{field:?} is not a number")))?;
        }
        if v[3] <= 0.0 || v[4] <= 0.0 {
            return Err(err(format!(
                "opening {} and jaw size {} must be positive",
                v[3], v[4]
            )));
        }
        grasps.push(GraspAnnotation::new(v[0], v[1], v[2], v[3], v[4]));
    }
    Ok(grasps)
}

pub fn format_grasps(grasps: &[GraspAnnotation]) -> String {
    grasps
        .iter()
        .map(|g| format!("{};{};{};{};{}\n", g.x, g.y, g.theta, g.opening, g.jaw_size))
        .collect()
}

fn image_error(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn require(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::MissingFile(path.to_path_buf()))
    }
}

/// Reads any supported image file as 8-bit RGB.
pub fn read_rgb(path: &Path) -> Result<Image> {
    require(path)?;
    let img = ::image::open(path)
        .map_err(|e| image_error(path, e))?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut out = Image::filled(3, h, w, 0.0);
    for (x, y, px) in img.enumerate_pixels() {
        for c in 0..3 {
            out.set(c, y as usize, x as usize, px[c] as f32);
        }
    }
    Ok(out)
}

fn read_mask(path: &Path) -> Result<Image> {
    let img = ::image::open(path)
        .map_err(|e| image_error(path, e))?
        .to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img
        .pixels()
        .map(|p| if p[0] > 127 { 1.0 } else { 0.0 })
        .collect();
    Image::new(1, h, w, data)
}

fn read_depth(path: &Path) -> Result<Image> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder =
        Decoder::new(std::io::BufReader::new(file)).map_err(|e| image_error(path, e))?;
    let (w, h) = decoder.dimensions().map_err(|e| image_error(path, e))?;
    let data: Vec<f32> = match decoder.read_image().map_err(|e| image_error(path, e))? {
        DecodingResult::F32(v) => v,
        DecodingResult::F64(v) => v.into_iter().map(|x| x as f32).collect(),
        DecodingResult::U8(v) => v.into_iter().map(f32::from).collect(),
        DecodingResult::U16(v) => v.into_iter().map(f32::from).collect(),
        _ => return Err(image_error(path, "unsupported depth sample format")),
    };
    let (w, h) = (w as usize, h as usize);
    if data.len() != w * h {
        return Err(image_error(
            path,
            format!("expected single-channel depth, got {} samples", data.len()),
        ));
    }
    Image::new(1, h, w, data)
}

/// Loads one scene. The scene id is taken from the grasp file name and the
/// object id from its parent directory. Training scenes must carry grasps.
pub fn parse_jacquard_scene(
    rgb: &Path,
    depth: &Path,
    mask: &Path,
    grasps: &Path,
) -> Result<SceneSample> {
    for p in [rgb, depth, mask, grasps] {
        require(p)?;
    }
    let text = std::fs::read_to_string(grasps).map_err(|e| Error::io(grasps, e))?;
    let annotations = parse_grasps(&text, grasps)?;
    if annotations.is_empty() {
        return Err(Error::Parse {
            file: grasps.to_path_buf(),
            line: 0,
            message: "no grasps in file".into(),
        });
    }
    let scene_id = grasps
        .file_name()
        .and_then(|n| n.to_str())
        .and_then(|n| n.strip_suffix(GRASPS_SUFFIX))
        .unwrap_or_default()
        .to_string();
    let object_id = grasps
        .parent()
        .and_then(|p| p.file_name())
        .and_then(|n| n.to_str())
        .unwrap_or_default()
        .to_string();
    let sample = SceneSample {
        scene_id,
        object_id,
        rgb: read_rgb(rgb)?,
        depth: read_depth(depth)?,
        mask: read_mask(mask)?,
        grasps: annotations,
    };
    sample.validate()?;
    Ok(sample)
}

/// Writes `sample` under `root` in the Jacquard layout.
pub fn write_scene(root: &Path, sample: &SceneSample) -> Result<ScenePaths> {
    let paths = ScenePaths::new(root, &sample.object_id, &sample.scene_id);
    let dir = paths.grasps.parent().expect("scene dir");
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let (w, h) = (sample.width(), sample.height());
    let mut rgb = Vec::with_capacity(w * h * 3);
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                rgb.push(sample.rgb.get(c, y, x).round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    ::image::RgbImage::from_raw(w as u32, h as u32, rgb)
        .expect("buffer sized")
        .save_with_format(&paths.rgb, ::image::ImageFormat::Png)
        .map_err(|e| image_error(&paths.rgb, e))?;

    let mask = sample
        .mask
        .data()
        .iter()
        .map(|&v| if v > 0.5 { 255 } else { 0 })
        .collect();
    write_gray_png(&paths.mask, w, h, mask)?;

    let file = File::create(&paths.depth).map_err(|e| Error::io(&paths.depth, e))?;
    let mut encoder =
        TiffEncoder::new(BufWriter::new(file)).map_err(|e| image_error(&paths.depth, e))?;
    encoder
        .write_image::<colortype::Gray32Float>(w as u32, h as u32, sample.depth.data())
        .map_err(|e| image_error(&paths.depth, e))?;

    std::fs::write(&paths.grasps, format_grasps(&sample.grasps))
        .map_err(|e| Error::io(&paths.grasps, e))?;
    Ok(paths)
}

/// Writes a single-channel 8-bit PNG from row-major `pixels`.
pub fn write_gray_png(path: &Path, width: usize, height: usize, pixels: Vec<u8>) -> Result<()> {
    ::image::GrayImage::from_raw(width as u32, height as u32, pixels)
        .ok_or_else(|| image_error(path, "pixel buffer does not match the image size"))?
        .save_with_format(path, ::image::ImageFormat::Png)
        .map_err(|e| image_error(path, e))
}

pub fn write_manifest(root: &Path, entries: &[(String, String)]) -> Result<()> {
    let mut text = String::from("scene_id,object_id\n");
    for (scene, object) in entries {
        text.push_str(&format!("{scene},{object}\n"));
    }
    let path = root.join(MANIFEST_FILE);
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

/// `(scene_id, object_id)` rows of the root manifest.
pub fn read_manifest(root: &Path) -> Result<Vec<(String, String)>> {
    let path = root.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let (scene, object) = line.split_once(',').ok_or_else(|| Error::Parse {
            file: path.clone(),
            line: i + 1,
            message: "expected scene_id,object_id".into(),
        })?;
        rows.push((scene.trim().to_string(), object.trim().to_string()));
    }
    Ok(rows)
}

/// Loads every scene under `root`, from the manifest when present, otherwise
/// by scanning object directories for grasp files. Order is deterministic.
pub fn load_dataset(root: &Path) -> Result<Vec<SceneSample>> {
    let entries = if root.join(MANIFEST_FILE).is_file() {
        read_manifest(root)?
    } else {
        scan(root)?
    };
    entries
        .iter()
        .map(|(scene, object)| {
            let p = ScenePaths::new(root, object, scene);
            parse_jacquard_scene(&p.rgb, &p.depth, &p.mask, &p.grasps)
        })
        .collect()
}

fn scan(root: &Path) -> Result<Vec<(String, String)>> {
    let mut rows = Vec::new();
    let read = |dir: &Path| -> Result<Vec<PathBuf>> {
        let mut v: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .collect();
        v.sort();
        Ok(v)
    };
    for dir in read(root)?.into_iter().filter(|p| p.is_dir()) {
        let object = dir
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or_default()
            .to_string();
        for file in read(&dir)? {
            let name = file
                .file_name()
                .and_then(|n| n.to_str())
                .unwrap_or_default();
            if let Some(scene) = name.strip_suffix(GRASPS_SUFFIX) {
                rows.push((scene.to_string(), object.clone()));
            }
        }
    }
    if rows.is_empty() {
        return Err(Error::Format(format!(
            "no scenes found under {}",
            root.display()
        )));
    }
    Ok(rows)
}
