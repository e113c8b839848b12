//! `root/<class>/<file>` image directories.

use std::fs;
use std::path::{Path, PathBuf};

use image::imageops::FilterType;

use super::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct FolderLoad {
    pub dataset: Dataset,
    pub class_names: Vec<String>,
    /// Files that could not be decoded and were left out.
    pub skipped: Vec<PathBuf>,
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut entries = fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<Vec<_>>>()?;
    entries.sort();
    Ok(entries)
}

/// Classes are the sub-directories of `root` in lexicographic order; files
/// within a class are read in lexicographic order and resized to
/// `image_size`². Pixels are scaled to `[-1, 1]`.
pub fn load_image_folder(root: &Path, image_size: usize) -> Result<FolderLoad> {
    if image_size == 0 {
        return Err(Error::Config("image size must be positive".into()));
    }
    let class_dirs: Vec<PathBuf> = sorted_entries(root)?.into_iter().filter(|p| p.is_dir()).collect();
    if class_dirs.is_empty() {
        return Err(Error::Data(format!("no class directories under {}", root.display())));
    }
    let side = image_size as u32;
    let mut images = Vec::new();
    let mut labels = Vec::new();
    let mut class_names = Vec::with_capacity(class_dirs.len());
    let mut skipped = Vec::new();
    for (label, dir) in class_dirs.iter().enumerate() {
        let name = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let mut count = 0usize;
        for file in sorted_entries(dir)?.into_iter().filter(|p| p.is_file()) {
            let decoded = match image::open(&file) {
                Ok(img) => img,
                Err(err) => {
                    log::warn!("skipping {}: {err}", file.display());
                    skipped.push(file);
                    continue;
                }
            };
            let rgb = decoded.resize_exact(side, side, FilterType::Triangle).to_rgb8();
            images.extend(rgb.as_raw().iter().map(|&v| v as f64 / 127.5 - 1.0));
            labels.push(label);
            count += 1;
        }
        if count == 0 {
            return Err(Error::Data(format!("class '{name}' has no readable images")));
        }
        class_names.push(name);
    }
    let dataset = Dataset::new(images, labels, image_size, 3, class_names.len())?;
    Ok(FolderLoad {
        dataset,
        class_names,
        skipped,
    })
}

/// Write `data` as `root/<class>/<index>.png`, pixels mapped from `[-1, 1]`
/// to 8 bits. Classes are named `class_00`, `class_01`, ... so that the
/// lexicographic order of [`load_image_folder`] matches the labels.
pub fn save_image_folder(data: &Dataset, root: &Path) -> Result<Vec<PathBuf>> {
    if data.channels() != 3 {
        return Err(Error::Data(format!("can only write RGB images, not {} channels", data.channels())));
    }
    let width = (data.num_classes().max(1) - 1).to_string().len().max(2);
    let side = data.image_size() as u32;
    let mut written = Vec::with_capacity(data.len());
    for c in 0..data.num_classes() {
        fs::create_dir_all(root.join(format!("class_{c:0width$}")))?;
    }
    let digits = data.len().to_string().len();
    for (i, &label) in data.labels().iter().enumerate() {
        let bytes: Vec<u8> = data
            .image(i)
            .iter()
            .map(|v| ((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8)
            .collect();
        let img = image::RgbImage::from_raw(side, side, bytes)
            .ok_or_else(|| Error::Data("image buffer size mismatch".into()))?;
        let path = root.join(format!("class_{label:0width$}")).join(format!("{i:0digits$}.png"));
        img.save(&path)?;
        written.push(path);
    }
    Ok(written)
}
