//! On-disk dataset formats.
//!
//! **idx-like**: a directory with `images.idx`, `labels.idx` and an optional
//! `classes.txt` (one class name per line). Both `.idx` files start with a
//! big-endian `u32` magic followed by big-endian `u32` extents:
//!
//! | magic | file | extents | payload |
//! |-------|------|---------|---------|
//! | `0x00000801` | labels | `N` | `N` bytes |
//! | `0x00000803` | images | `N, H, W` | `N·H·W` bytes, one channel |
//! | `0x00000804` | images | `N, C, H, W` | `N·C·H·W` bytes, channel-major |
//!
//! Without `classes.txt` the class count is `max(label) + 1`. Sample ids
//! come from an optional `ids.txt` (one per record), else the zero-padded
//! record index.
//!
//! **image-dir**: `root/labels.csv` with header `id,class_name`, and one PNG
//! per row at `root/<class_name>/<id>.png`. Classes are indexed in sorted
//! name order.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use image::{DynamicImage, GenericImageView, ImageBuffer, Luma, Rgb};
use serde::{Deserialize, Serialize};

use super::{Dataset, Sample, Split};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const LABEL_MAGIC: u32 = 0x0801;
const GRAY_MAGIC: u32 = 0x0803;
const COLOUR_MAGIC: u32 = 0x0804;

/// Supported on-disk layouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataFormat {
    IdxLike,
    ImageDir,
}

impl fmt::Display for DataFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DataFormat::IdxLike => "idx-like",
            DataFormat::ImageDir => "image-dir",
        })
    }
}

impl FromStr for DataFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "idx-like" | "idx" => Ok(DataFormat::IdxLike),
            "image-dir" | "dir" => Ok(DataFormat::ImageDir),
            other => Err(Error::Config(format!("unknown dataset format `{other}`"))),
        }
    }
}

/// Reads a dataset; samples come back sorted by id.
pub fn load_dataset(path: &Path, format: DataFormat) -> Result<Dataset> {
    if !path.exists() {
        return Err(Error::Dataset(format!("{} does not exist", path.display())));
    }
    if path.is_dir() && fs::read_dir(path).map_err(|e| Error::io(path, e))?.next().is_none() {
        return Err(Error::Dataset(format!("no samples: {} is empty", path.display())));
    }
    let ds = match format {
        DataFormat::IdxLike => load_idx(path)?,
        DataFormat::ImageDir => load_image_dir(path)?,
    };
    if ds.is_empty() {
        return Err(Error::Dataset(format!("no samples in {}", path.display())));
    }
    Ok(ds)
}

struct Idx {
    magic: u32,
    dims: Vec<usize>,
    payload: Vec<u8>,
}

fn read_idx(path: &Path) -> Result<Idx> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |m: String| Error::Format(format!("{}: {m}", path.display()));
    let word = |i: usize| -> Result<u32> {
        bytes
            .get(i..i + 4)
            .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
            .ok_or_else(|| bad("truncated header".into()))
    };
    let magic = word(0)?;
    let ndim = match magic {
        LABEL_MAGIC => 1,
        GRAY_MAGIC => 3,
        COLOUR_MAGIC => 4,
        m => return Err(bad(format!("unknown magic {m:#010x}"))),
    };
    let dims = (0..ndim).map(|k| word(4 + 4 * k).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
    let start = 4 + 4 * ndim;
    let want: usize = dims.iter().product();
    let payload = bytes[start..].to_vec();
    if payload.len() != want {
        return Err(bad(format!("header declares {want} bytes, found {}", payload.len())));
    }
    Ok(Idx { magic, dims, payload })
}

fn load_idx(dir: &Path) -> Result<Dataset> {
    let labels = read_idx(&dir.join("labels.idx"))?;
    let images = read_idx(&dir.join("images.idx"))?;
    if labels.magic != LABEL_MAGIC || images.magic == LABEL_MAGIC {
        return Err(Error::Format(format!("{}: labels.idx/images.idx magic mismatch", dir.display())));
    }
    let n = labels.dims[0];
    if images.dims[0] != n {
        return Err(Error::Dataset(format!("{n} labels but {} images", images.dims[0])));
    }
    let (c, h, w) = match images.dims[..] {
        [_, h, w] => (1, h, w),
        [_, c, h, w] => (c, h, w),
        _ => unreachable!("magic fixes the rank"),
    };
    let class_file = dir.join("classes.txt");
    let class_names: Vec<String> = if class_file.exists() {
        fs::read_to_string(&class_file)
            .map_err(|e| Error::io(&class_file, e))?
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(String::from)
            .collect()
    } else {
        let max = labels.payload.iter().copied().max().unwrap_or(0) as usize;
        (0..=max).map(|k| k.to_string()).collect()
    };
    let id_file = dir.join("ids.txt");
    let ids: Vec<String> = if id_file.exists() {
        let ids: Vec<String> = fs::read_to_string(&id_file)
            .map_err(|e| Error::io(&id_file, e))?
            .lines()
            .map(|l| l.trim().to_string())
            .filter(|l| !l.is_empty())
            .collect();
        if ids.len() != n {
            return Err(Error::Dataset(format!("ids.txt lists {} ids for {n} records", ids.len())));
        }
        ids
    } else {
        let width = n.max(1).to_string().len().max(6);
        (0..n).map(|i| format!("{i:0width$}")).collect()
    };
    let per = c * h * w;
    let samples = (0..n)
        .map(|i| {
            let data = images.payload[i * per..(i + 1) * per].iter().map(|&b| f32::from(b)).collect();
            Ok(Sample {
                id: ids[i].clone(),
                image: Tensor::new([c, h, w], data)?,
                label: labels.payload[i] as usize,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(Split::Train, samples, class_names, dir.to_path_buf())
}

fn image_to_tensor(img: &DynamicImage, channels: usize) -> Result<Tensor<f32>> {
    let (w, h) = img.dimensions();
    let (w, h) = (w as usize, h as usize);
    let mut data = vec![0f32; channels * h * w];
    if channels == 1 {
        for (i, p) in img.to_luma8().pixels().enumerate() {
            data[i] = f32::from(p.0[0]);
        }
    } else {
        for (i, p) in img.to_rgb8().pixels().enumerate() {
            for ch in 0..3 {
                data[ch * h * w + i] = f32::from(p.0[ch]);
            }
        }
    }
    Tensor::new([channels, h, w], data)
}

/// Reads one image file as raw `C×H×W` pixels: 1 channel for grey
/// images, 3 otherwise.
pub fn read_image(path: &Path) -> Result<Tensor<f32>> {
    let img = image::open(path).map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))?;
    image_to_tensor(&img, if img.color().has_color() { 3 } else { 1 })
}

fn load_image_dir(root: &Path) -> Result<Dataset> {
    let manifest = root.join("labels.csv");
    if !manifest.exists() {
        return Err(Error::Dataset(format!("{} is missing labels.csv", root.display())));
    }
    let mut reader = csv::Reader::from_path(&manifest)
        .map_err(|e| Error::Dataset(format!("{}: {e}", manifest.display())))?;
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::Format(format!("{}: {e}", manifest.display())))?;
        match (rec.get(0), rec.get(1)) {
            (Some(id), Some(class)) => rows.push((id.trim().to_string(), class.trim().to_string())),
            _ => return Err(Error::Format(format!("{}: rows need id,class_name", manifest.display()))),
        }
    }
    let class_names: Vec<String> = rows.iter().map(|(_, c)| c.clone()).collect::<BTreeSet<_>>().into_iter().collect();
    let mut channels = None;
    let samples = rows
        .iter()
        .map(|(id, class)| {
            let path = root.join(class).join(format!("{id}.png"));
            let img = image::open(&path).map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))?;
            let c = *channels.get_or_insert(if img.color().has_color() { 3 } else { 1 });
            Ok(Sample {
                id: id.clone(),
                image: image_to_tensor(&img, c)?,
                label: class_names.binary_search(class).expect("class collected above"),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(Split::Train, samples, class_names, root.to_path_buf())
}

fn pixel(v: f32) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

fn uniform_shape(ds: &Dataset) -> Result<[usize; 3]> {
    let first = ds.samples.first().ok_or_else(|| Error::Dataset("no samples to write".into()))?;
    let s = [first.image.dim(0), first.image.dim(1), first.image.dim(2)];
    if ds.samples.iter().any(|x| x.image.shape() != s) {
        return Err(Error::Dataset("idx-like output needs equally sized images".into()));
    }
    Ok(s)
}

/// Writes `ds` in the idx-like layout (pixels rounded to bytes).
pub fn write_idx(ds: &Dataset, dir: &Path) -> Result<()> {
    let [c, h, w] = uniform_shape(ds)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let n = ds.len() as u32;
    let mut labels = LABEL_MAGIC.to_be_bytes().to_vec();
    labels.extend_from_slice(&n.to_be_bytes());
    labels.extend(ds.samples.iter().map(|s| s.label as u8));
    let (magic, dims) = if c == 1 {
        (GRAY_MAGIC, vec![n, h as u32, w as u32])
    } else {
        (COLOUR_MAGIC, vec![n, c as u32, h as u32, w as u32])
    };
    let mut images = magic.to_be_bytes().to_vec();
    for d in dims {
        images.extend_from_slice(&d.to_be_bytes());
    }
    for s in &ds.samples {
        images.extend(s.image.data().iter().map(|&v| pixel(v)));
    }
    let write = |name: &str, bytes: &[u8]| {
        let p = dir.join(name);
        fs::write(&p, bytes).map_err(|e| Error::io(&p, e))
    };
    let ids: String = ds.samples.iter().map(|s| format!("{}\n", s.id)).collect();
    write("ids.txt", ids.as_bytes())?;
    write("labels.idx", &labels)?;
    write("images.idx", &images)?;
    write("classes.txt", (ds.class_names.join("\n") + "\n").as_bytes())
}

/// Writes `ds` as `root/<class>/<id>.png` plus `labels.csv`.
pub fn write_image_dir(ds: &Dataset, root: &Path) -> Result<()> {
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let manifest = root.join("labels.csv");
    let mut out = csv::Writer::from_path(&manifest).map_err(|e| Error::Dataset(format!("{}: {e}", manifest.display())))?;
    let csv_err = |e: csv::Error| Error::Dataset(format!("{}: {e}", manifest.display()));
    out.write_record(["id", "class_name"]).map_err(csv_err)?;
    for s in &ds.samples {
        let class = &ds.class_names[s.label];
        let dir = root.join(class);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let (c, h, w) = (s.image.dim(0), s.image.dim(1), s.image.dim(2));
        let d = s.image.data();
        let path = dir.join(format!("{}.png", s.id));
        let result = match c {
            1 => ImageBuffer::from_fn(w as u32, h as u32, |x, y| Luma([pixel(d[y as usize * w + x as usize])]))
                .save(&path),
            3 => ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
                let i = y as usize * w + x as usize;
                Rgb([pixel(d[i]), pixel(d[h * w + i]), pixel(d[2 * h * w + i])])
            })
            .save(&path),
            _ => return Err(Error::Dataset(format!("PNG output needs 1 or 3 channels, got {c}"))),
        };
        result?;
        out.write_record([s.id.as_str(), class.as_str()]).map_err(csv_err)?;
    }
    out.flush().map_err(|e| Error::io(&manifest, e))
}
