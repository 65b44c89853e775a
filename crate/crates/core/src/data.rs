//! Dataset ingestion and reduction: MNIST IDX files, feature CSV tables,
//! deterministic subsampling, PCA projection, and synthetic sets.
//!
//! Formats:
//! - IDX: big-endian; magic 2051 (images) / 2049 (labels), 32-bit
//!   dimension sizes, then raw bytes. Pixels scale to [0, 1] with 255
//!   mapping to exactly 1.0.
//! - Feature CSV: UTF-8, header `label,f0,...,f{d-1}`, one row per sample.

use crate::linalg::{DenseMatrix, PcaModel};
use crate::model::Batch;
use byteorder::{BigEndian, ReadBytesExt, WriteBytesExt};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use thiserror::Error;

pub const IDX_IMAGE_MAGIC: u32 = 2051;
pub const IDX_LABEL_MAGIC: u32 = 2049;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: bad magic {got}, expected {want}")]
    WrongMagic { path: String, got: u32, want: u32 },
    #[error("{path}: truncated file ({context})")]
    Truncated { path: String, context: String },
    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },
    #[error("sample {index}: label {label} out of range for {classes} classes")]
    LabelOutOfRange {
        index: usize,
        label: usize,
        classes: usize,
    },
    #[error("{path}:{line}: expected {expected} values, got {got}")]
    RaggedRow {
        path: String,
        line: usize,
        expected: usize,
        got: usize,
    },
    #[error("{path}:{line}: non-numeric cell '{token}'")]
    NonNumeric {
        path: String,
        line: usize,
        token: String,
    },
    #[error("{path}: missing or malformed header (expected 'label,f0,...')")]
    BadHeader { path: String },
    #[error("cannot subsample {requested} from {available} samples")]
    SubsampleTooLarge { requested: usize, available: usize },
    #[error("dataset dim {data} does not match fitted PCA dim {fitted}")]
    PcaDimMismatch { data: usize, fitted: usize },
    #[error("need at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error(transparent)]
    Linalg(#[from] crate::linalg::LinalgError),
}

/// Immutable labeled dataset: samples x dim inputs with class labels.
#[derive(Debug, Clone)]
pub struct LabeledDataset {
    pub inputs: DenseMatrix,
    pub labels: Vec<usize>,
    pub classes: usize,
    pub provenance: String,
}

impl LabeledDataset {
    pub fn new(
        inputs: DenseMatrix,
        labels: Vec<usize>,
        classes: usize,
        provenance: impl Into<String>,
    ) -> Result<Self, DataError> {
        if inputs.rows() != labels.len() {
            return Err(DataError::CountMismatch {
                images: inputs.rows(),
                labels: labels.len(),
            });
        }
        for (index, &label) in labels.iter().enumerate() {
            if label >= classes {
                return Err(DataError::LabelOutOfRange {
                    index,
                    label,
                    classes,
                });
            }
        }
        Ok(Self {
            inputs,
            labels,
            classes,
            provenance: provenance.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.inputs.cols()
    }

    /// Classifier batch with one-hot targets.
    pub fn to_batch(&self) -> Batch {
        let rows: Vec<Vec<f64>> = self
            .labels
            .iter()
            .map(|&l| {
                let mut r = vec![0.0; self.classes];
                r[l] = 1.0;
                r
            })
            .collect();
        Batch::new(self.inputs.clone(), DenseMatrix::from_rows(&rows).unwrap()).unwrap()
    }

    /// Autoencoder batch: targets equal inputs.
    pub fn to_autoencoder_batch(&self) -> Batch {
        Batch::new(self.inputs.clone(), self.inputs.clone()).unwrap()
    }
}

fn io_err(path: &Path, source: std::io::Error) -> DataError {
    DataError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Loads the big-endian IDX image/label pair. Pixels are scaled to [0, 1].
pub fn load_mnist_idx(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<LabeledDataset, DataError> {
    let images_path = images_path.as_ref();
    let labels_path = labels_path.as_ref();

    let mut r = BufReader::new(File::open(images_path).map_err(|e| io_err(images_path, e))?);
    let truncated = |ctx: &str| DataError::Truncated {
        path: images_path.display().to_string(),
        context: ctx.to_string(),
    };
    let magic = r.read_u32::<BigEndian>().map_err(|_| truncated("magic"))?;
    if magic != IDX_IMAGE_MAGIC {
        return Err(DataError::WrongMagic {
            path: images_path.display().to_string(),
            got: magic,
            want: IDX_IMAGE_MAGIC,
        });
    }
    let count = r.read_u32::<BigEndian>().map_err(|_| truncated("count"))? as usize;
    let rows = r.read_u32::<BigEndian>().map_err(|_| truncated("rows"))? as usize;
    let cols = r.read_u32::<BigEndian>().map_err(|_| truncated("cols"))? as usize;
    let dim = rows * cols;
    let mut pixels = vec![0u8; count * dim];
    r.read_exact(&mut pixels)
        .map_err(|_| truncated("pixel data"))?;

    let mut lr = BufReader::new(File::open(labels_path).map_err(|e| io_err(labels_path, e))?);
    let ltruncated = |ctx: &str| DataError::Truncated {
        path: labels_path.display().to_string(),
        context: ctx.to_string(),
    };
    let lmagic = lr.read_u32::<BigEndian>().map_err(|_| ltruncated("magic"))?;
    if lmagic != IDX_LABEL_MAGIC {
        return Err(DataError::WrongMagic {
            path: labels_path.display().to_string(),
            got: lmagic,
            want: IDX_LABEL_MAGIC,
        });
    }
    let lcount = lr.read_u32::<BigEndian>().map_err(|_| ltruncated("count"))? as usize;
    if lcount != count {
        return Err(DataError::CountMismatch {
            images: count,
            labels: lcount,
        });
    }
    let mut label_bytes = vec![0u8; count];
    lr.read_exact(&mut label_bytes)
        .map_err(|_| ltruncated("label data"))?;

    let data: Vec<f64> = pixels.iter().map(|&b| b as f64 / 255.0).collect();
    let inputs = DenseMatrix::new(count, dim, data)?;
    let labels: Vec<usize> = label_bytes.iter().map(|&b| b as usize).collect();
    LabeledDataset::new(
        inputs,
        labels,
        10,
        format!("idx:{}", images_path.display()),
    )
}

/// Writes a dataset as an IDX image/label pair, quantizing inputs (clamped
/// to [0, 1]) to bytes. Each sample is written as a 1 x dim image row.
pub fn write_mnist_idx(
    ds: &LabeledDataset,
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<(), DataError> {
    let images_path = images_path.as_ref();
    let labels_path = labels_path.as_ref();
    let mut w = BufWriter::new(File::create(images_path).map_err(|e| io_err(images_path, e))?);
    let werr = |e| io_err(images_path, e);
    w.write_u32::<BigEndian>(IDX_IMAGE_MAGIC).map_err(werr)?;
    w.write_u32::<BigEndian>(ds.len() as u32).map_err(werr)?;
    w.write_u32::<BigEndian>(1).map_err(werr)?;
    w.write_u32::<BigEndian>(ds.dim() as u32).map_err(werr)?;
    for s in 0..ds.len() {
        let row: Vec<u8> = ds
            .inputs
            .row(s)
            .iter()
            .map(|&x| (x.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        w.write_all(&row).map_err(werr)?;
    }
    w.flush().map_err(werr)?;

    let mut lw = BufWriter::new(File::create(labels_path).map_err(|e| io_err(labels_path, e))?);
    let lerr = |e| io_err(labels_path, e);
    lw.write_u32::<BigEndian>(IDX_LABEL_MAGIC).map_err(lerr)?;
    lw.write_u32::<BigEndian>(ds.len() as u32).map_err(lerr)?;
    for &l in &ds.labels {
        lw.write_all(&[l as u8]).map_err(lerr)?;
    }
    lw.flush().map_err(lerr)?;
    Ok(())
}

/// Loads a `label,f0,...` feature CSV. The feature dimension is inferred
/// from the header; the class count is max label + 1.
pub fn load_feature_csv(path: impl AsRef<Path>) -> Result<LabeledDataset, DataError> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path).map_err(|e| io_err(path, e))?);
    let mut lines = reader.lines().enumerate();
    let header = match lines.next() {
        Some((_, Ok(h))) => h,
        Some((_, Err(e))) => return Err(io_err(path, e)),
        None => {
            return Err(DataError::BadHeader {
                path: path.display().to_string(),
            })
        }
    };
    let cols: Vec<&str> = header.trim().split(',').collect();
    if cols.first() != Some(&"label") || cols.len() < 2 {
        return Err(DataError::BadHeader {
            path: path.display().to_string(),
        });
    }
    let d = cols.len() - 1;

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    for (i, line) in lines {
        let line = line.map_err(|e| io_err(path, e))?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let lineno = i + 1; // 1-based
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != d + 1 {
            return Err(DataError::RaggedRow {
                path: path.display().to_string(),
                line: lineno,
                expected: d + 1,
                got: cells.len(),
            });
        }
        let label: usize = cells[0].trim().parse().map_err(|_| DataError::NonNumeric {
            path: path.display().to_string(),
            line: lineno,
            token: cells[0].to_string(),
        })?;
        let mut row = Vec::with_capacity(d);
        for cell in &cells[1..] {
            let v: f64 = cell.trim().parse().map_err(|_| DataError::NonNumeric {
                path: path.display().to_string(),
                line: lineno,
                token: cell.to_string(),
            })?;
            row.push(v);
        }
        labels.push(label);
        rows.push(row);
    }
    let classes = labels.iter().max().map_or(0, |m| m + 1).max(2);
    let inputs = DenseMatrix::from_rows(&rows)?;
    LabeledDataset::new(inputs, labels, classes, format!("csv:{}", path.display()))
}

/// Writes the feature-CSV form of a dataset.
pub fn write_feature_csv(ds: &LabeledDataset, path: impl AsRef<Path>) -> Result<(), DataError> {
    let path = path.as_ref();
    let mut w = BufWriter::new(File::create(path).map_err(|e| io_err(path, e))?);
    let mut header = String::from("label");
    for i in 0..ds.dim() {
        header.push_str(&format!(",f{i}"));
    }
    writeln!(w, "{header}").map_err(|e| io_err(path, e))?;
    for s in 0..ds.len() {
        let mut line = ds.labels[s].to_string();
        for x in ds.inputs.row(s) {
            line.push_str(&format!(",{x:?}"));
        }
        writeln!(w, "{line}").map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Subsamples n rows without replacement, deterministically by seed.
/// Stratified sampling keeps per-class proportions within one sample.
pub fn subsample(
    ds: &LabeledDataset,
    n: usize,
    seed: u64,
    stratified: bool,
) -> Result<LabeledDataset, DataError> {
    if n > ds.len() {
        return Err(DataError::SubsampleTooLarge {
            requested: n,
            available: ds.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chosen: Vec<usize> = if stratified {
        let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); ds.classes];
        for (i, &l) in ds.labels.iter().enumerate() {
            by_class[l].push(i);
        }
        // Largest-remainder apportionment of n across classes.
        let total = ds.len() as f64;
        let mut quotas: Vec<(usize, f64)> = by_class
            .iter()
            .map(|members| {
                let exact = n as f64 * members.len() as f64 / total;
                (exact.floor() as usize, exact.fract())
            })
            .collect();
        let mut assigned: usize = quotas.iter().map(|q| q.0).sum();
        let mut order: Vec<usize> = (0..ds.classes).collect();
        order.sort_by(|&a, &b| quotas[b].1.partial_cmp(&quotas[a].1).unwrap().then(a.cmp(&b)));
        let mut oi = 0;
        while assigned < n {
            let c = order[oi % ds.classes];
            if quotas[c].0 < by_class[c].len() {
                quotas[c].0 += 1;
                assigned += 1;
            }
            oi += 1;
        }
        let mut chosen = Vec::with_capacity(n);
        for (c, members) in by_class.iter().enumerate() {
            let take = quotas[c].0;
            let mut pool = members.clone();
            for i in (1..pool.len()).rev() {
                let j = rng.gen_range(0..=i);
                pool.swap(i, j);
            }
            chosen.extend_from_slice(&pool[..take]);
        }
        chosen
    } else {
        let mut pool: Vec<usize> = (0..ds.len()).collect();
        for i in (1..pool.len()).rev() {
            let j = rng.gen_range(0..=i);
            pool.swap(i, j);
        }
        pool.truncate(n);
        pool
    };

    let rows: Vec<Vec<f64>> = chosen.iter().map(|&i| ds.inputs.row(i).to_vec()).collect();
    let labels: Vec<usize> = chosen.iter().map(|&i| ds.labels[i]).collect();
    LabeledDataset::new(
        DenseMatrix::from_rows(&rows)?,
        labels,
        ds.classes,
        format!("{}+sub{n}", ds.provenance),
    )
}

/// Replaces inputs by centered projections onto the fitted PCA directions.
/// Labels pass through untouched.
pub fn pca_reduce(ds: &LabeledDataset, fitted: &PcaModel) -> Result<LabeledDataset, DataError> {
    if ds.dim() != fitted.features() {
        return Err(DataError::PcaDimMismatch {
            data: ds.dim(),
            fitted: fitted.features(),
        });
    }
    let rows: Vec<Vec<f64>> = (0..ds.len())
        .map(|i| fitted.project(ds.inputs.row(i)))
        .collect();
    LabeledDataset::new(
        DenseMatrix::from_rows(&rows)?,
        ds.labels.clone(),
        ds.classes,
        format!("{}+pca{}", ds.provenance, fitted.k()),
    )
}

/// Gaussian blobs at seeded random centers in [0, 1]^dim.
pub fn synthetic_blobs(
    classes: usize,
    per_class: usize,
    dim: usize,
    spread: f64,
    seed: u64,
) -> Result<LabeledDataset, DataError> {
    if classes < 2 {
        return Err(DataError::TooFewClasses(classes));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = |rng: &mut ChaCha8Rng| {
        let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
        let u2: f64 = rng.gen_range(0.0..1.0);
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    };
    let centers: Vec<Vec<f64>> = (0..classes)
        .map(|_| (0..dim).map(|_| rng.gen_range(0.2..0.8)).collect())
        .collect();
    let mut rows = Vec::with_capacity(classes * per_class);
    let mut labels = Vec::with_capacity(classes * per_class);
    for (c, center) in centers.iter().enumerate() {
        for _ in 0..per_class {
            rows.push(
                center
                    .iter()
                    .map(|&m| m + spread * normal(&mut rng))
                    .collect(),
            );
            labels.push(c);
        }
    }
    LabeledDataset::new(
        DenseMatrix::from_rows(&rows)?,
        labels,
        classes,
        format!("blobs:c{classes}x{per_class}d{dim}s{spread}"),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_idx_pair(
        dir: &Path,
        magic_img: u32,
        magic_lbl: u32,
        pixels: &[Vec<u8>],
        labels: &[u8],
        rows: u32,
        cols: u32,
    ) -> (std::path::PathBuf, std::path::PathBuf) {
        let img = dir.join("images.idx");
        let lbl = dir.join("labels.idx");
        let mut w = File::create(&img).unwrap();
        w.write_u32::<BigEndian>(magic_img).unwrap();
        w.write_u32::<BigEndian>(pixels.len() as u32).unwrap();
        w.write_u32::<BigEndian>(rows).unwrap();
        w.write_u32::<BigEndian>(cols).unwrap();
        for p in pixels {
            w.write_all(p).unwrap();
        }
        let mut w = File::create(&lbl).unwrap();
        w.write_u32::<BigEndian>(magic_lbl).unwrap();
        w.write_u32::<BigEndian>(labels.len() as u32).unwrap();
        w.write_all(labels).unwrap();
        (img, lbl)
    }

    #[test]
    fn idx_fixture_roundtrips_exact_pixels() {
        let dir = tempfile::tempdir().unwrap();
        let (img, lbl) = write_idx_pair(
            dir.path(),
            IDX_IMAGE_MAGIC,
            IDX_LABEL_MAGIC,
            &[vec![0, 128, 255, 10], vec![1, 2, 3, 4]],
            &[3, 7],
            2,
            2,
        );
        let ds = load_mnist_idx(&img, &lbl).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.dim(), 4);
        assert_eq!(ds.labels, vec![3, 7]);
        assert_eq!(ds.inputs.at(0, 2), 1.0); // 255 -> exactly 1.0
        assert_eq!(ds.inputs.at(0, 1), 128.0 / 255.0);
        assert_eq!(ds.inputs.at(1, 3), 4.0 / 255.0);
    }

    #[test]
    fn idx_rejects_wrong_magic_and_bad_label() {
        let dir = tempfile::tempdir().unwrap();
        let (img, lbl) = write_idx_pair(
            dir.path(),
            1234,
            IDX_LABEL_MAGIC,
            &[vec![0; 4]],
            &[0],
            2,
            2,
        );
        assert!(matches!(
            load_mnist_idx(&img, &lbl),
            Err(DataError::WrongMagic { got: 1234, .. })
        ));

        let (img, lbl) = write_idx_pair(
            dir.path(),
            IDX_IMAGE_MAGIC,
            IDX_LABEL_MAGIC,
            &[vec![0; 4]],
            &[11],
            2,
            2,
        );
        assert!(matches!(
            load_mnist_idx(&img, &lbl),
            Err(DataError::LabelOutOfRange { label: 11, .. })
        ));
    }

    #[test]
    fn idx_truncation_fuzz_yields_structured_errors() {
        let dir = tempfile::tempdir().unwrap();
        let (img, lbl) = write_idx_pair(
            dir.path(),
            IDX_IMAGE_MAGIC,
            IDX_LABEL_MAGIC,
            &[vec![5; 9], vec![6; 9]],
            &[1, 2],
            3,
            3,
        );
        let full = std::fs::read(&img).unwrap();
        for cut in 0..full.len() {
            let trunc = dir.path().join("trunc.idx");
            std::fs::write(&trunc, &full[..cut]).unwrap();
            let r = load_mnist_idx(&trunc, &lbl);
            assert!(
                matches!(r, Err(DataError::Truncated { .. }) | Err(DataError::WrongMagic { .. })),
                "cut at {cut} gave {r:?}"
            );
        }
    }

    #[test]
    fn idx_count_mismatch_detected() {
        let dir = tempfile::tempdir().unwrap();
        let (img, lbl) = write_idx_pair(
            dir.path(),
            IDX_IMAGE_MAGIC,
            IDX_LABEL_MAGIC,
            &[vec![0; 4], vec![0; 4]],
            &[1],
            2,
            2,
        );
        assert!(matches!(
            load_mnist_idx(&img, &lbl),
            Err(DataError::CountMismatch { images: 2, labels: 1 })
        ));
    }

    #[test]
    fn idx_writer_roundtrips_through_loader() {
        let dir = tempfile::tempdir().unwrap();
        let ds = synthetic_blobs(3, 4, 6, 0.05, 9).unwrap();
        let img = dir.path().join("w.idx");
        let lbl = dir.path().join("wl.idx");
        write_mnist_idx(&ds, &img, &lbl).unwrap();
        let back = load_mnist_idx(&img, &lbl).unwrap();
        assert_eq!(back.len(), ds.len());
        assert_eq!(back.dim(), ds.dim());
        assert_eq!(back.labels, ds.labels);
        // quantization error at most half a pixel step
        for s in 0..ds.len() {
            for (a, b) in ds.inputs.row(s).iter().zip(back.inputs.row(s)) {
                assert!((a.clamp(0.0, 1.0) - b).abs() <= 0.5 / 255.0 + 1e-12);
            }
        }
    }

    #[test]
    fn feature_csv_parses_fixture() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.csv");
        let mut w = File::create(&path).unwrap();
        writeln!(w, "label,f0,f1,f2,f3").unwrap();
        writeln!(w, "0,0.5,1.0,-2.0,3.5").unwrap();
        writeln!(w, "1,0.0,0.0,0.0,0.0").unwrap();
        writeln!(w, "2,1.0,2.0,3.0,4.0").unwrap();
        drop(w);
        let ds = load_feature_csv(&path).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.dim(), 4);
        assert_eq!(ds.labels, vec![0, 1, 2]);
        assert_eq!(ds.inputs.at(0, 3), 3.5);
    }

    #[test]
    fn feature_csv_errors_name_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        let mut w = File::create(&path).unwrap();
        writeln!(w, "label,f0,f1").unwrap();
        writeln!(w, "0,1.0,2.0").unwrap();
        writeln!(w, "1,3.0").unwrap();
        drop(w);
        match load_feature_csv(&path) {
            Err(DataError::RaggedRow { line, expected, got, .. }) => {
                assert_eq!(line, 3);
                assert_eq!(expected, 3);
                assert_eq!(got, 2);
            }
            other => panic!("expected ragged-row error, got {other:?}"),
        }

        let path = dir.path().join("nonnum.csv");
        let mut w = File::create(&path).unwrap();
        writeln!(w, "label,f0").unwrap();
        writeln!(w, "0,abc").unwrap();
        drop(w);
        assert!(matches!(
            load_feature_csv(&path),
            Err(DataError::NonNumeric { line: 2, .. })
        ));

        let path = dir.path().join("nohdr.csv");
        let mut w = File::create(&path).unwrap();
        writeln!(w, "0,1.0,2.0").unwrap();
        drop(w);
        assert!(matches!(
            load_feature_csv(&path),
            Err(DataError::BadHeader { .. })
        ));
    }

    #[test]
    fn feature_csv_roundtrip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let ds = synthetic_blobs(4, 5, 7, 0.3, 11).unwrap();
        let path = dir.path().join("rt.csv");
        write_feature_csv(&ds, &path).unwrap();
        let back = load_feature_csv(&path).unwrap();
        assert_eq!(back.labels, ds.labels);
        for s in 0..ds.len() {
            for (a, b) in ds.inputs.row(s).iter().zip(back.inputs.row(s)) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn subsample_full_is_identity_up_to_order() {
        let ds = synthetic_blobs(2, 5, 3, 0.1, 1).unwrap();
        let sub = subsample(&ds, ds.len(), 7, false).unwrap();
        assert_eq!(sub.len(), ds.len());
        let mut a = sub.labels.clone();
        let mut b = ds.labels.clone();
        a.sort();
        b.sort();
        assert_eq!(a, b);
    }

    #[test]
    fn stratified_subsample_is_exactly_balanced() {
        let ds = synthetic_blobs(10, 50, 4, 0.1, 2).unwrap();
        let sub = subsample(&ds, 100, 3, true).unwrap();
        let mut counts = vec![0usize; 10];
        for &l in &sub.labels {
            counts[l] += 1;
        }
        assert!(counts.iter().all(|&c| c == 10), "{counts:?}");
    }

    #[test]
    fn subsample_is_deterministic_and_checks_bounds() {
        let ds = synthetic_blobs(3, 10, 2, 0.1, 4).unwrap();
        let a = subsample(&ds, 9, 5, true).unwrap();
        let b = subsample(&ds, 9, 5, true).unwrap();
        assert_eq!(a.labels, b.labels);
        assert_eq!(a.inputs.data(), b.inputs.data());
        assert!(matches!(
            subsample(&ds, 31, 5, false),
            Err(DataError::SubsampleTooLarge { .. })
        ));
    }

    #[test]
    fn pca_reduce_full_basis_preserves_distances() {
        let ds = synthetic_blobs(3, 15, 5, 0.4, 6).unwrap();
        let model = crate::linalg::pca_fit(&ds.inputs, 5).unwrap();
        let red = pca_reduce(&ds, &model).unwrap();
        assert_eq!(red.labels, ds.labels);
        for i in 0..3 {
            for j in (i + 1)..6 {
                let d0: f64 = ds
                    .inputs
                    .row(i)
                    .iter()
                    .zip(ds.inputs.row(j))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                let d1: f64 = red
                    .inputs
                    .row(i)
                    .iter()
                    .zip(red.inputs.row(j))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                assert!((d0 - d1).abs() < 1e-6, "distance changed: {d0} vs {d1}");
            }
        }
    }

    #[test]
    fn pca_reduce_recovers_line_positions() {
        // 2D points on the line y = 2x; k = 1 recovers position along it.
        let rows: Vec<Vec<f64>> = (0..20).map(|i| {
            let t = i as f64 * 0.1;
            vec![t, 2.0 * t]
        })
        .collect();
        let inputs = DenseMatrix::from_rows(&rows).unwrap();
        let ds = LabeledDataset::new(inputs, vec![0; 20], 2, "line").unwrap();
        let model = crate::linalg::pca_fit(&ds.inputs, 1).unwrap();
        let red = pca_reduce(&ds, &model).unwrap();
        assert_eq!(red.dim(), 1);
        // consecutive projections are equally spaced by 0.1 * sqrt(5)
        let step = (red.inputs.at(1, 0) - red.inputs.at(0, 0)).abs();
        assert!((step - 0.1 * 5.0_f64.sqrt()).abs() < 1e-6);
        for i in 2..20 {
            let s = (red.inputs.at(i, 0) - red.inputs.at(i - 1, 0)).abs();
            assert!((s - step).abs() < 1e-6);
        }
    }

    #[test]
    fn blobs_with_tiny_spread_are_centroid_separable() {
        let ds = synthetic_blobs(3, 10, 4, 0.0, 8).unwrap();
        assert_eq!(ds.len(), 30);
        // nearest-centroid (a linear classifier) is perfect at zero spread
        let mut centroids = vec![vec![0.0; 4]; 3];
        let mut counts = vec![0usize; 3];
        for s in 0..ds.len() {
            let l = ds.labels[s];
            counts[l] += 1;
            for (c, x) in centroids[l].iter_mut().zip(ds.inputs.row(s)) {
                *c += x;
            }
        }
        for (c, n) in centroids.iter_mut().zip(&counts) {
            for x in c.iter_mut() {
                *x /= *n as f64;
            }
        }
        let mut correct = 0;
        for s in 0..ds.len() {
            let row = ds.inputs.row(s);
            let pred = (0..3)
                .min_by(|&a, &b| {
                    let da: f64 = centroids[a].iter().zip(row).map(|(c, x)| (c - x) * (c - x)).sum();
                    let db: f64 = centroids[b].iter().zip(row).map(|(c, x)| (c - x) * (c - x)).sum();
                    da.partial_cmp(&db).unwrap()
                })
                .unwrap();
            if pred == ds.labels[s] {
                correct += 1;
            }
        }
        assert_eq!(correct, 30);
    }

    #[test]
    fn blobs_deterministic_and_counted() {
        let a = synthetic_blobs(2, 5, 2, 0.2, 3).unwrap();
        let b = synthetic_blobs(2, 5, 2, 0.2, 3).unwrap();
        assert_eq!(a.len(), 10);
        assert_eq!(a.inputs.data(), b.inputs.data());
        assert!(matches!(
            synthetic_blobs(1, 5, 2, 0.2, 3),
            Err(DataError::TooFewClasses(1))
        ));
    }
}
