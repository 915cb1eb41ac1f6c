//! On-disk dataset layout.
//!
//! ```text
//! root/
//!   images/{id}.png    8-bit RGB
//!   masks/{id}.png     8-bit single-channel, pixel value = taxonomy index
//!   poses/{id}.json    {"R": row-major 3x3, "t": [m; 3], "intrinsics": {fx,fy,cx,cy,w,h}}
//!   manifest.jsonl     one record per sample: id, domain_tag, relative paths
//! ```

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::image_buf::ImageBuffer;
use super::mask::ComponentMask;
use super::pose::{CameraIntrinsics, PoseRecord};
use super::sample::{AnnotatedSample, DomainTag};

/// One line of `manifest.jsonl`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub domain_tag: DomainTag,
    pub image: String,
    pub mask: String,
    pub pose: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct IntrinsicsFile {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    w: usize,
    h: usize,
}

/// Serialized form of `poses/{id}.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoseFile {
    #[serde(rename = "R")]
    pub rotation: [[f64; 3]; 3],
    pub t: [f64; 3],
    intrinsics: IntrinsicsFile,
}

impl PoseFile {
    pub fn new(pose: &PoseRecord, intrinsics: &CameraIntrinsics) -> Self {
        Self {
            rotation: pose.rotation_rows(),
            t: pose.translation_array(),
            intrinsics: IntrinsicsFile {
                fx: intrinsics.fx,
                fy: intrinsics.fy,
                cx: intrinsics.cx,
                cy: intrinsics.cy,
                w: intrinsics.width,
                h: intrinsics.height,
            },
        }
    }

    pub fn pose(&self) -> Result<PoseRecord> {
        PoseRecord::from_rows(self.rotation, self.t)
    }

    pub fn camera(&self) -> Result<CameraIntrinsics> {
        CameraIntrinsics::new(
            self.intrinsics.fx,
            self.intrinsics.fy,
            self.intrinsics.cx,
            self.intrinsics.cy,
            self.intrinsics.w,
            self.intrinsics.h,
        )
    }
}

/// Writes one sample into the layout and returns its manifest entry.
/// Creates `images/`, `masks/` and `poses/` as needed; the caller appends the
/// entry to `manifest.jsonl` (usually via [`Dataset::write_manifest`]).
pub fn write_sample(root: &Path, sample: &AnnotatedSample) -> Result<ManifestEntry> {
    sample.validate()?;
    for sub in ["images", "masks", "poses"] {
        fs::create_dir_all(root.join(sub)).map_err(|e| Error::io(root.join(sub), e))?;
    }
    let image_rel = format!("images/{}.png", sample.id);
    let mask_rel = format!("masks/{}.png", sample.id);
    let pose_rel = format!("poses/{}.json", sample.id);

    sample.image.save_png(&root.join(&image_rel))?;
    sample.mask.save_png(&root.join(&mask_rel))?;
    let pose_file = PoseFile::new(&sample.pose, &sample.intrinsics);
    let json = serde_json::to_string_pretty(&pose_file)?;
    fs::write(root.join(&pose_rel), json).map_err(|e| Error::io(root.join(&pose_rel), e))?;

    Ok(ManifestEntry {
        id: sample.id.clone(),
        domain_tag: sample.domain_tag,
        image: image_rel,
        mask: mask_rel,
        pose: pose_rel,
    })
}

/// Reads `manifest.jsonl` in file order.
pub fn load_manifest(root: &Path) -> Result<Vec<ManifestEntry>> {
    let path = root.join("manifest.jsonl");
    let file = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
    let mut entries = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(&path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        entries.push(serde_json::from_str(&line)?);
    }
    Ok(entries)
}

/// Loads a full sample referenced by a manifest entry.
pub fn load_sample(root: &Path, entry: &ManifestEntry) -> Result<AnnotatedSample> {
    let image = ImageBuffer::load_png(&root.join(&entry.image))?;
    let mask = ComponentMask::load_png(&root.join(&entry.mask))?;
    let pose_path = root.join(&entry.pose);
    let json = fs::read_to_string(&pose_path).map_err(|e| Error::io(&pose_path, e))?;
    let pose_file: PoseFile = serde_json::from_str(&json)?;
    let sample = AnnotatedSample {
        id: entry.id.clone(),
        image,
        mask,
        pose: pose_file.pose()?,
        intrinsics: pose_file.camera()?,
        domain_tag: entry.domain_tag,
    };
    sample.validate()?;
    Ok(sample)
}

/// A dataset directory handle.
#[derive(Debug, Clone)]
pub struct Dataset {
    root: PathBuf,
}

impl Dataset {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        if !root.join("manifest.jsonl").exists() {
            return Err(Error::Dataset(format!(
                "no manifest.jsonl under {}",
                root.display()
            )));
        }
        Ok(Self { root })
    }

    /// Prepares a directory for writing (creates it if missing).
    pub fn create(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> Result<Vec<ManifestEntry>> {
        load_manifest(&self.root)
    }

    pub fn load(&self, entry: &ManifestEntry) -> Result<AnnotatedSample> {
        load_sample(&self.root, entry)
    }

    /// Loads every sample in manifest order.
    pub fn load_all(&self) -> Result<Vec<AnnotatedSample>> {
        self.manifest()?
            .iter()
            .map(|e| self.load(e))
            .collect()
    }

    /// Writes the manifest, one JSON object per line, in the given order.
    pub fn write_manifest(&self, entries: &[ManifestEntry]) -> Result<()> {
        let path = self.root.join("manifest.jsonl");
        let mut file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        for entry in entries {
            let line = serde_json::to_string(entry)?;
            writeln!(file, "{line}").map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Matrix3, Vector3};

    fn sample(id: &str) -> AnnotatedSample {
        let mut img = ndarray::Array3::zeros((3, 8, 8));
        img[[0, 2, 3]] = 0.5;
        let mut labels = ndarray::Array2::zeros((8, 8));
        labels[[2, 3]] = 2;
        AnnotatedSample {
            id: id.into(),
            image: ImageBuffer::new(img).unwrap(),
            mask: ComponentMask::new(labels),
            pose: PoseRecord::new(Matrix3::identity(), Vector3::new(0.0, 0.0, 4.0)).unwrap(),
            intrinsics: CameraIntrinsics::new(10.0, 10.0, 4.0, 4.0, 8, 8).unwrap(),
            domain_tag: DomainTag::Synthetic,
        }
    }

    #[test]
    fn round_trip_through_directory_layout() {
        let dir = tempfile::tempdir().unwrap();
        let ds = Dataset::create(dir.path()).unwrap();
        let s = sample("a01");
        let entry = write_sample(ds.root(), &s).unwrap();
        ds.write_manifest(std::slice::from_ref(&entry)).unwrap();

        let ds2 = Dataset::open(dir.path()).unwrap();
        let entries = ds2.manifest().unwrap();
        assert_eq!(entries.len(), 1);
        let back = ds2.load(&entries[0]).unwrap();
        assert_eq!(back.id, "a01");
        assert_eq!(back.mask.get(2, 3), 2);
        assert_eq!(back.image.pixel(2, 3)[0], (0.5f32 * 255.0).round() / 255.0);
        assert_eq!(back.pose.translation_array(), [0.0, 0.0, 4.0]);
        assert_eq!(back.intrinsics.width, 8);
    }

    #[test]
    fn pose_file_uses_row_major_keys() {
        let s = sample("a02");
        let pf = PoseFile::new(&s.pose, &s.intrinsics);
        let json = serde_json::to_value(&pf).unwrap();
        assert!(json.get("R").is_some());
        assert!(json.get("t").is_some());
        assert_eq!(json["intrinsics"]["w"], 8);
        assert_eq!(json["intrinsics"]["h"], 8);
    }

    #[test]
    fn open_requires_manifest() {
        let dir = tempfile::tempdir().unwrap();
        assert!(Dataset::open(dir.path()).is_err());
    }
}
