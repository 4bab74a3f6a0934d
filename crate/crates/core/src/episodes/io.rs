//! Manifest CSV and PNG ingestion / export.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use super::{Dataset, Split};
use crate::augment::Image;
use crate::error::{Error, Result};

const HEADER: &str = "filepath,class_id,split";

/// One manifest line; `filepath` is relative to the manifest directory unless absolute.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRow {
    pub filepath: String,
    pub class_id: String,
    pub split: Split,
}

fn parse_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    match lines.next() {
        Some(h) if h.trim() == HEADER => {}
        Some(h) => {
            return Err(Error::Data(format!(
                "{}: expected header '{HEADER}', found '{}'",
                path.display(),
                h.trim()
            )))
        }
        None => return Err(Error::Data(format!("{}: empty manifest", path.display()))),
    }
    let mut rows = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 3 || fields.iter().any(|f| f.is_empty()) {
            return Err(Error::Data(format!(
                "{}: line {}: expected 3 fields, got '{line}'",
                path.display(),
                lineno + 2
            )));
        }
        rows.push(ManifestRow {
            filepath: fields[0].to_string(),
            class_id: fields[1].to_string(),
            split: fields[2].parse()?,
        });
    }
    if rows.is_empty() {
        return Err(Error::Data(format!("{}: manifest has no rows", path.display())));
    }
    Ok(rows)
}

fn decode_png(path: &Path) -> Result<Image> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let image_err = |message: String| Error::Image {
        path: path.to_path_buf(),
        message,
    };
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::normalize_to_color8());
    let mut reader = decoder.read_info().map_err(|e| image_err(e.to_string()))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| image_err("image too large".into()))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(|e| image_err(e.to_string()))?;
    let (w, h) = (info.width as usize, info.height as usize);
    let (stride, channels) = match info.color_type {
        png::ColorType::Grayscale => (1, 1),
        png::ColorType::GrayscaleAlpha => (2, 1),
        png::ColorType::Rgb => (3, 3),
        png::ColorType::Rgba => (4, 3),
        png::ColorType::Indexed => return Err(image_err("unexpanded palette image".into())),
    };
    let bytes = &buf[..info.buffer_size()];
    let mut data = vec![0.0; channels * h * w];
    for y in 0..h {
        for x in 0..w {
            let px = &bytes[y * info.line_size + x * stride..];
            for c in 0..channels {
                data[(c * h + y) * w + x] = px[c] as f64 / 255.0;
            }
        }
    }
    Image::new(channels, h, w, data)
}

/// Loads every manifest row tagged with `split`. Classes are ordered
/// lexicographically by id; images keep manifest order within a class.
pub fn load_dataset(manifest: &Path, split: Split) -> Result<Dataset> {
    let rows = parse_manifest(manifest)?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    let mut classes: BTreeMap<String, Vec<Image>> = BTreeMap::new();
    for row in rows.iter().filter(|r| r.split == split) {
        let p = Path::new(&row.filepath);
        let full = if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
        let img = decode_png(&full)?;
        classes.entry(row.class_id.clone()).or_default().push(img);
    }
    if classes.is_empty() {
        return Err(Error::Data(format!(
            "{}: no rows for split '{split}'",
            manifest.display()
        )));
    }
    Dataset::new(split, classes.into_iter().collect())
}

/// Writes an 8-bit grayscale (1 channel) or RGB (3 channels) PNG.
pub fn save_png(img: &Image, path: &Path) -> Result<()> {
    let (c, h, w) = img.dims();
    let color = match c {
        1 => png::ColorType::Grayscale,
        3 => png::ColorType::Rgb,
        _ => return Err(Error::invalid(format!("cannot write a {c}-channel PNG"))),
    };
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), w as u32, h as u32);
    enc.set_color(color);
    enc.set_depth(png::BitDepth::Eight);
    let mut bytes = Vec::with_capacity(c * h * w);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                bytes.push((img.get(ch, y, x) * 255.0).round() as u8);
            }
        }
    }
    let image_err = |e: png::EncodingError| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let mut writer = enc.write_header().map_err(image_err)?;
    writer.write_image_data(&bytes).map_err(image_err)?;
    writer.finish().map_err(image_err)
}

/// Writes `<split>/<class>/<index>.png` under `root` for every dataset and a
/// `manifest.csv` listing them. Returns the manifest path.
pub fn write_dataset(root: &Path, datasets: &[&Dataset]) -> Result<PathBuf> {
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let mut manifest = String::from(HEADER);
    manifest.push('\n');
    for ds in datasets {
        for (ci, id) in ds.class_ids().iter().enumerate() {
            let rel_dir = format!("{}/{}", ds.split(), id);
            let dir = root.join(&rel_dir);
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            for (ii, img) in ds.class_images(ci).iter().enumerate() {
                let rel = format!("{rel_dir}/{ii:04}.png");
                save_png(img, &root.join(&rel))?;
                manifest.push_str(&format!("{rel},{id},{}\n", ds.split()));
            }
        }
    }
    let path = root.join("manifest.csv");
    let mut f = File::create(&path).map_err(|e| Error::io(&path, e))?;
    f.write_all(manifest.as_bytes()).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
