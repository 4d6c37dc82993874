//! Batch conversion of image files to alpha-encoded `.aenc` files.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use log::warn;

use crate::data::read_image;
use crate::encode::{alpha_decode, alpha_encode};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Totals over one directory.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EncodeSummary {
    pub files: usize,
    /// Files that could not be read as images, with the reason.
    pub skipped: Vec<(PathBuf, String)>,
    /// Size of the same pixels stored as 32-bit floats.
    pub raw_bytes: u64,
    pub encoded_bytes: u64,
    /// Largest `|decode(encode(x)) − x|`, in pixel units.
    pub max_abs_error: f64,
    /// Largest error divided by its image's bound `scale/510` plus float
    /// rounding. At most 1 when the codec holds its bound.
    pub max_bound_ratio: f64,
}

impl EncodeSummary {
    /// Raw over encoded size; 0 when nothing was encoded.
    pub fn ratio(&self) -> f64 {
        if self.encoded_bytes == 0 {
            0.0
        } else {
            self.raw_bytes as f64 / self.encoded_bytes as f64
        }
    }
}

impl fmt::Display for EncodeSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "encoded {} files, skipped {}", self.files, self.skipped.len())?;
        writeln!(
            f,
            "raw {} bytes (32-bit), encoded {} bytes, ratio {:.3}",
            self.raw_bytes,
            self.encoded_bytes,
            self.ratio()
        )?;
        write!(
            f,
            "max round-trip error {:.6} ({:.3} of bound)",
            self.max_abs_error, self.max_bound_ratio
        )
    }
}

/// Round-trip error of one image against the codec bound.
pub fn round_trip_error(img: &Tensor<f32>) -> Result<(f64, f64)> {
    let enc = alpha_encode(img)?;
    let back = alpha_decode::<f64>(&enc)?;
    let err = img
        .data()
        .iter()
        .zip(back.data())
        .map(|(&x, &y)| (f64::from(x) - y).abs())
        .fold(0.0, f64::max);
    let (o, s) = (f64::from(enc.offset), f64::from(enc.scale));
    let slack = 4.0 * f64::from(f32::EPSILON) * (o.abs() + s);
    Ok((err, err / (s / 510.0 + slack)))
}

/// Encodes every readable image directly inside `input` (sorted by name,
/// no recursion) to `<output>/<stem>.aenc`.
pub fn encode_dir(input: &Path, output: &Path) -> Result<EncodeSummary> {
    let mut entries: Vec<PathBuf> = fs::read_dir(input)
        .map_err(|e| Error::io(input, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(input, err)))
        .collect::<Result<_>>()?;
    entries.retain(|p| p.is_file());
    entries.sort();
    fs::create_dir_all(output).map_err(|e| Error::io(output, e))?;
    let mut sum = EncodeSummary::default();
    for path in entries {
        let img = match read_image(&path) {
            Ok(img) => img,
            Err(e) => {
                warn!("skipping {}: {e}", path.display());
                sum.skipped.push((path, e.to_string()));
                continue;
            }
        };
        let enc = alpha_encode(&img)?;
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        enc.write(&output.join(format!("{stem}.aenc")))?;
        let (err, ratio) = round_trip_error(&img)?;
        sum.files += 1;
        sum.raw_bytes += 4 * img.len() as u64;
        sum.encoded_bytes += enc.encoded_len() as u64;
        sum.max_abs_error = sum.max_abs_error.max(err);
        sum.max_bound_ratio = sum.max_bound_ratio.max(ratio);
    }
    Ok(sum)
}
