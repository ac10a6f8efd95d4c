use std::fs;
use std::path::{Path, PathBuf};

use crate::dataset::{Dataset, Sample, Split};
use crate::error::{Error, Result};
use crate::io::png_codec::{read_color_png, read_depth_png, write_color_png, write_depth_png};

pub const IMAGE_DIR: &str = "image";
pub const SPARSE_DIR: &str = "sparse";
pub const GT_DIR: &str = "groundtruth";

pub fn frame_name(frame: usize) -> String {
    format!("{frame:010}.png")
}

pub fn scene_name(index: usize) -> String {
    format!("scene_{index:04}")
}

/// Write one sample as frame `frame` of `<root>/<split>/<scene>/`.
pub fn write_sample(
    root: &Path,
    split: Split,
    scene: &str,
    frame: usize,
    sample: &Sample,
) -> Result<()> {
    let base = root.join(split.as_str()).join(scene);
    let name = frame_name(frame);
    write_color_png(&sample.color, base.join(IMAGE_DIR).join(&name))?;
    write_depth_png(&sample.sparse, base.join(SPARSE_DIR).join(&name))?;
    write_depth_png(&sample.gt, base.join(GT_DIR).join(&name))
}

/// Write every split, one scene directory per sample.
pub fn write_dataset(root: &Path, data: &Dataset) -> Result<()> {
    let mut index = 0;
    for split in Split::ALL {
        for sample in data.split(split) {
            write_sample(root, split, &scene_name(index), 0, sample)?;
            index += 1;
        }
    }
    Ok(())
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<_>>()?;
    out.sort();
    Ok(out)
}

/// Load every frame of a split, scenes and frames in lexicographic order.
pub fn read_split(root: &Path, split: Split) -> Result<Vec<Sample>> {
    let dir = root.join(split.as_str());
    if !dir.is_dir() {
        return Err(Error::Data(format!(
            "missing split directory {}",
            dir.display()
        )));
    }
    let mut samples = Vec::new();
    for scene in sorted_entries(&dir)?.into_iter().filter(|p| p.is_dir()) {
        let images = scene.join(IMAGE_DIR);
        if !images.is_dir() {
            return Err(Error::Data(format!(
                "scene {} has no {IMAGE_DIR}/ directory",
                scene.display()
            )));
        }
        for img in sorted_entries(&images)? {
            if img.extension().and_then(|e| e.to_str()) != Some("png") {
                continue;
            }
            let name = img.file_name().expect("file entry");
            let sparse = scene.join(SPARSE_DIR).join(name);
            let gt = scene.join(GT_DIR).join(name);
            samples.push(Sample::new(
                read_color_png(&img)?,
                read_depth_png(&sparse)?,
                read_depth_png(&gt)?,
            )?);
        }
    }
    Ok(samples)
}
