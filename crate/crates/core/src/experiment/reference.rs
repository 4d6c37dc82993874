//! Published Top-1 accuracies (percent), kept beside desk results for
//! orientation only. They come from a large private corpus and are not
//! reproduced here; every emitted value carries [`NOTE`].

use crate::encode::Normalization;
use crate::losses::LossKind;
use crate::net::{Structure, Version};

use super::config::ReferenceTable;

/// Label written next to every reference number.
pub const NOTE: &str = "reference, not reproduced";

/// Rows `v1..v4`; columns plain, residual, alpha.
pub const BY_STRUCTURE: [[f64; 3]; 4] = [
    [75.1, 78.2, 79.0],
    [76.2, 76.3, 79.2],
    [76.3, 76.5, 79.5],
    [72.1, 76.1, 77.5],
];

/// Rows `v1..v4`; columns softmax, AM-Softmax, AM-Softmax with linear weights.
pub const BY_LOSS: [[f64; 3]; 4] = [
    [72.1, 74.3, 76.2],
    [71.3, 74.3, 77.1],
    [72.1, 74.3, 77.2],
    [71.2, 73.1, 75.1],
];

/// Rows `v1..v4`; columns log scaling, z-score, alpha encoding.
pub const BY_NORMALIZATION: [[f64; 3]; 4] = [
    [69.2, 71.2, 71.0],
    [69.5, 70.1, 71.2],
    [70.1, 70.1, 71.5],
    [71.2, 69.5, 70.5],
];

/// Alpha-Net `v1..v4` in the architecture comparison.
pub const ALPHA_NET: [f64; 4] = [78.2, 79.1, 79.5, 78.3];

/// Published architectures in the same comparison.
pub const BASELINES: [(&str, f64); 6] = [
    ("Xception", 79.0),
    ("Inception v3", 78.8),
    ("ResNet 50", 75.9),
    ("VGG 19", 72.7),
    ("VGG 16", 71.5),
    ("InceptionResNet v2", 80.4),
];

fn col<T: PartialEq>(all: &[T], x: T) -> Option<usize> {
    all.iter().position(|a| *a == x)
}

fn row(v: Version) -> usize {
    Version::ALL.iter().position(|&x| x == v).expect("listed")
}

/// Reference value for one configuration, if `table` has a cell for it.
pub fn lookup(
    table: ReferenceTable,
    version: Version,
    structure: Structure,
    loss: LossKind,
    normalization: Normalization,
) -> Option<f64> {
    let r = row(version);
    match table {
        ReferenceTable::None => None,
        ReferenceTable::Table1 => col(&Structure::ALL, structure).map(|c| BY_STRUCTURE[r][c]),
        ReferenceTable::Table2 => col(&LossKind::ALL, loss).map(|c| BY_LOSS[r][c]),
        ReferenceTable::Table3 => col(&Normalization::ALL, normalization).map(|c| BY_NORMALIZATION[r][c]),
        ReferenceTable::Table4 => (structure == Structure::Alpha).then_some(ALPHA_NET[r]),
    }
}

/// Every constant as `(table, row, column, printed value)`.
pub fn all_cells() -> Vec<(&'static str, String, String, f64)> {
    let mut out = Vec::new();
    let grids: [(&str, &[[f64; 3]; 4], Vec<String>); 3] = [
        ("table1", &BY_STRUCTURE, Structure::ALL.iter().map(|s| s.to_string()).collect()),
        ("table2", &BY_LOSS, LossKind::ALL.iter().map(|s| s.to_string()).collect()),
        ("table3", &BY_NORMALIZATION, Normalization::ALL.iter().map(|s| s.to_string()).collect()),
    ];
    for (name, grid, cols) in grids {
        for (v, values) in Version::ALL.iter().zip(grid) {
            for (c, value) in cols.iter().zip(values) {
                out.push((name, v.to_string(), c.clone(), *value));
            }
        }
    }
    for (v, value) in Version::ALL.iter().zip(ALPHA_NET) {
        out.push(("table4", format!("Alpha-Net {v}"), "top1".to_string(), value));
    }
    for (name, value) in BASELINES {
        out.push(("table4", name.to_string(), "top1".to_string(), value));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lookups() {
        let v3 = |t, s, l, n| lookup(t, Version::V3, s, l, n);
        let (a, al, z) = (Structure::Alpha, LossKind::AmSoftmaxLinear, Normalization::Zscore);
        assert_eq!(v3(ReferenceTable::Table1, a, al, z), Some(79.5));
        assert_eq!(v3(ReferenceTable::Table2, a, al, z), Some(77.2));
        assert_eq!(v3(ReferenceTable::Table3, a, al, z), Some(70.1));
        assert_eq!(v3(ReferenceTable::Table4, a, al, z), Some(79.5));
        assert_eq!(v3(ReferenceTable::Table4, Structure::Plain, al, z), None);
        assert_eq!(v3(ReferenceTable::None, a, al, z), None);
    }
}
