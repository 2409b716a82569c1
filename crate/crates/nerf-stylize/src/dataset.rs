//! Dataset ingestion: a directory of 8-bit RGB PNGs plus a JSON manifest.
//!
//! `manifest.json` schema (all lengths in pixels, world units elsewhere):
//!
//! ```json
//! {
//!   "format_version": 1,
//!   "near": 2.5,
//!   "far": 7.0,
//!   "views": [
//!     {
//!       "image": "view_000.png",
//!       "camera_to_world": [r00, r01, r02, tx, r10, ..., tz],
//!       "focal": 110.0,
//!       "width": 96,
//!       "height": 96,
//!       "cx": 48.0,            // optional, defaults to width / 2
//!       "cy": 48.0,            // optional, defaults to height / 2
//!       "split": "train",      // optional: "train" (default) or "test"
//!       "depth": "depth_000.bin" // optional ground-truth depth file
//!     }
//!   ]
//! }
//! ```
//!
//! `camera_to_world` is the row-major 3x4 rigid transform of the pose
//! convention documented in [`crate::camera`]. Depth files are raw
//! little-endian `f32`, row-major, one value per pixel; values `<= 0` mean
//! "no depth". Images are stored as 8-bit PNG, so pixel values are exact
//! multiples of 1/255 and ingestion is lossless.

use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::camera::CameraPose;
use crate::error::{Error, Result};

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneManifest {
    pub format_version: u32,
    pub near: f64,
    pub far: f64,
    pub views: Vec<ViewRecord>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewRecord {
    pub image: String,
    pub camera_to_world: Vec<f64>,
    pub focal: f64,
    pub width: usize,
    pub height: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cx: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cy: Option<f64>,
    #[serde(default = "default_split")]
    pub split: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<String>,
}

fn default_split() -> String {
    "train".to_string()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// One ingested view: validated pose, image in `[0, 1]`, optional depth.
#[derive(Clone, Debug)]
pub struct DatasetView {
    pub name: String,
    pub camera: CameraPose,
    /// `(3, H, W)`
    pub image: Array3<f32>,
    pub depth: Option<Array2<f32>>,
    pub split: Split,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub near: f64,
    pub far: f64,
    pub views: Vec<DatasetView>,
}

impl Dataset {
    pub fn train_views(&self) -> Vec<&DatasetView> {
        self.views.iter().filter(|v| v.split == Split::Train).collect()
    }

    pub fn test_views(&self) -> Vec<&DatasetView> {
        self.views.iter().filter(|v| v.split == Split::Test).collect()
    }

    pub fn resolution(&self) -> (usize, usize) {
        let v = &self.views[0];
        (v.camera.height, v.camera.width)
    }
}

impl ViewRecord {
    pub fn to_camera(&self) -> Result<CameraPose> {
        if self.camera_to_world.len() != 12 {
            return Err(Error::Dataset(format!(
                "view `{}`: camera_to_world must have 12 entries, got {}",
                self.image,
                self.camera_to_world.len()
            )));
        }
        let m = &self.camera_to_world;
        let rotation = Matrix3::new(m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10]);
        let translation = Vector3::new(m[3], m[7], m[11]);
        let camera = CameraPose {
            focal: self.focal,
            cx: self.cx.unwrap_or(self.width as f64 / 2.0),
            cy: self.cy.unwrap_or(self.height as f64 / 2.0),
            width: self.width,
            height: self.height,
            rotation,
            translation,
        };
        camera
            .validate()
            .map_err(|e| Error::Dataset(format!("view `{}`: {e}", self.image)))?;
        Ok(camera)
    }

    pub fn from_camera(camera: &CameraPose, image: String) -> Self {
        let r = &camera.rotation;
        let t = &camera.translation;
        ViewRecord {
            image,
            camera_to_world: vec![
                r[(0, 0)],
                r[(0, 1)],
                r[(0, 2)],
                t[0],
                r[(1, 0)],
                r[(1, 1)],
                r[(1, 2)],
                t[1],
                r[(2, 0)],
                r[(2, 1)],
                r[(2, 2)],
                t[2],
            ],
            focal: camera.focal,
            width: camera.width,
            height: camera.height,
            cx: Some(camera.cx),
            cy: Some(camera.cy),
            split: default_split(),
            depth: None,
        }
    }
}

/// Loads and validates a dataset directory.
pub fn ingest_dataset(dir: &Path) -> Result<Dataset> {
    let manifest_path = dir.join(MANIFEST_NAME);
    if !manifest_path.exists() {
        return Err(Error::MissingFile(manifest_path));
    }
    let text = std::fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: SceneManifest = serde_json::from_str(&text).map_err(|e| Error::Manifest {
        line: e.line(),
        message: e.to_string(),
    })?;
    if manifest.format_version != 1 {
        return Err(Error::Dataset(format!(
            "unsupported manifest format_version {}",
            manifest.format_version
        )));
    }
    if !(manifest.near > 0.0 && manifest.near < manifest.far) {
        return Err(Error::Dataset(format!(
            "need 0 < near < far, got near={} far={}",
            manifest.near, manifest.far
        )));
    }
    if manifest.views.is_empty() {
        return Err(Error::Dataset("manifest lists no views".into()));
    }
    let mut views = Vec::with_capacity(manifest.views.len());
    for record in &manifest.views {
        let camera = record.to_camera()?;
        let image_path = dir.join(&record.image);
        if !image_path.exists() {
            return Err(Error::MissingFile(image_path));
        }
        let image = load_png(&image_path)?;
        let (_, h, w) = image.dim();
        if (h, w) != (record.height, record.width) {
            return Err(Error::Dataset(format!(
                "view `{}`: image is {w}x{h} but manifest says {}x{}",
                record.image, record.width, record.height
            )));
        }
        let depth = match &record.depth {
            Some(rel) => {
                let depth_path = dir.join(rel);
                if !depth_path.exists() {
                    return Err(Error::MissingFile(depth_path));
                }
                Some(load_depth(&depth_path, record.height, record.width)?)
            }
            None => None,
        };
        let split = match record.split.as_str() {
            "train" => Split::Train,
            "test" => Split::Test,
            other => {
                return Err(Error::Dataset(format!(
                    "view `{}`: unknown split `{other}` (expected train or test)",
                    record.image
                )))
            }
        };
        views.push(DatasetView {
            name: record.image.clone(),
            camera,
            image,
            depth,
            split,
        });
    }
    Ok(Dataset {
        near: manifest.near,
        far: manifest.far,
        views,
    })
}

/// Writes a dataset directory (images, optional depth maps, manifest).
pub fn save_dataset(dir: &Path, dataset: &Dataset) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut records = Vec::with_capacity(dataset.views.len());
    for view in &dataset.views {
        save_png(&dir.join(&view.name), &view.image)?;
        let mut record = ViewRecord::from_camera(&view.camera, view.name.clone());
        record.split = match view.split {
            Split::Train => "train".into(),
            Split::Test => "test".into(),
        };
        if let Some(depth) = &view.depth {
            let depth_name = format!("{}.depth.bin", view.name.trim_end_matches(".png"));
            save_depth(&dir.join(&depth_name), depth)?;
            record.depth = Some(depth_name);
        }
        records.push(record);
    }
    let manifest = SceneManifest {
        format_version: 1,
        near: dataset.near,
        far: dataset.far,
        views: records,
    };
    let path = dir.join(MANIFEST_NAME);
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Dataset(format!("manifest serialization failed: {e}")))?;
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(())
}

/// Loads an 8-bit RGB PNG into a `(3, H, W)` array in `[0, 1]`.
pub fn load_png(path: &Path) -> Result<Array3<f32>> {
    let img = image::open(path)
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?
        .to_rgb8();
    let (w, h) = img.dimensions();
    let mut out = Array3::zeros((3, h as usize, w as usize));
    for (x, y, pixel) in img.enumerate_pixels() {
        for c in 0..3 {
            out[(c, y as usize, x as usize)] = pixel[c] as f32 / 255.0;
        }
    }
    Ok(out)
}

/// Saves a `(3, H, W)` array in `[0, 1]` as an 8-bit RGB PNG.
pub fn save_png(path: &Path, image: &Array3<f32>) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let (c, h, w) = image.dim();
    if c != 3 {
        return Err(Error::ShapeMismatch(format!(
            "expected (3, H, W) image, got ({c}, {h}, {w})"
        )));
    }
    let mut buf = image::RgbImage::new(w as u32, h as u32);
    for (x, y, pixel) in buf.enumerate_pixels_mut() {
        for ch in 0..3 {
            let v = image[(ch, y as usize, x as usize)].clamp(0.0, 1.0);
            pixel[ch] = (v * 255.0).round() as u8;
        }
    }
    buf.save(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    Ok(())
}

/// Quantizes to the 8-bit grid that PNG storage uses.
pub fn quantize_u8(image: &Array3<f32>) -> Array3<f32> {
    image.mapv(|v| (v.clamp(0.0, 1.0) * 255.0).round() / 255.0)
}

/// Raw little-endian `f32` depth file, row-major.
pub fn save_depth(path: &Path, depth: &Array2<f32>) -> Result<()> {
    let mut bytes = Vec::with_capacity(depth.len() * 4);
    for v in depth.iter() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_depth(path: &Path, height: usize, width: usize) -> Result<Array2<f32>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != height * width * 4 {
        return Err(Error::Dataset(format!(
            "depth file {} has {} bytes, expected {}",
            path.display(),
            bytes.len(),
            height * width * 4
        )));
    }
    let values: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    Array2::from_shape_vec((height, width), values).map_err(|e| Error::Dataset(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_dataset() -> Dataset {
        let camera = CameraPose::identity(20.0, 16, 12);
        let image = quantize_u8(&Array3::from_shape_fn((3, 12, 16), |(c, r, col)| {
            (c as f32 * 0.3 + r as f32 * 0.02 + col as f32 * 0.01) % 1.0
        }));
        let depth = Array2::from_elem((12, 16), 3.25f32);
        Dataset {
            near: 1.0,
            far: 5.0,
            views: vec![DatasetView {
                name: "view_000.png".into(),
                camera,
                image,
                depth: Some(depth),
                split: Split::Train,
            }],
        }
    }

    #[test]
    fn save_then_ingest_round_trips_losslessly() {
        let dir = tempfile::tempdir().unwrap();
        let dataset = tiny_dataset();
        save_dataset(dir.path(), &dataset).unwrap();
        let back = ingest_dataset(dir.path()).unwrap();
        assert_eq!(back.views.len(), 1);
        assert_eq!(back.near, dataset.near);
        let (a, b) = (&dataset.views[0], &back.views[0]);
        assert_eq!(a.image, b.image);
        assert_eq!(a.depth, b.depth);
        assert!((a.camera.rotation - b.camera.rotation).norm() < 1e-12);
    }

    #[test]
    fn missing_image_file_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let dataset = tiny_dataset();
        save_dataset(dir.path(), &dataset).unwrap();
        std::fs::remove_file(dir.path().join("view_000.png")).unwrap();
        let err = ingest_dataset(dir.path()).unwrap_err();
        assert!(err.to_string().contains("view_000.png"), "{err}");
    }

    #[test]
    fn non_orthonormal_rotation_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let dataset = tiny_dataset();
        save_dataset(dir.path(), &dataset).unwrap();
        let path = dir.path().join(MANIFEST_NAME);
        let mut manifest: SceneManifest =
            serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        manifest.views[0].camera_to_world[0] = 2.0;
        std::fs::write(&path, serde_json::to_string(&manifest).unwrap()).unwrap();
        let err = ingest_dataset(dir.path()).unwrap_err();
        assert!(err.to_string().contains("orthonormal"), "{err}");
    }

    #[test]
    fn malformed_manifest_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join(MANIFEST_NAME),
            "{\n  \"format_version\": 1,\n  \"near\": oops\n}",
        )
        .unwrap();
        let err = ingest_dataset(dir.path()).unwrap_err();
        match err {
            Error::Manifest { line, .. } => assert_eq!(line, 3),
            other => panic!("expected manifest error, got {other}"),
        }
    }

    #[test]
    fn unknown_split_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let dataset = tiny_dataset();
        save_dataset(dir.path(), &dataset).unwrap();
        let path = dir.path().join(MANIFEST_NAME);
        let text = std::fs::read_to_string(&path)
            .unwrap()
            .replace("\"train\"", "\"validation\"");
        std::fs::write(&path, text).unwrap();
        assert!(ingest_dataset(dir.path()).is_err());
    }
}
