//! Synthetic Gaussian-blob datasets, CSV ingestion and seeded splits.
//!
//! CSV layout: comma separated, no quoting, one sample per line, feature
//! columns first and the integer class label last. LF and CRLF line endings
//! are accepted; an optional single header line can be skipped.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, shape, DtsError, Result};
use crate::numerics::{LabelVector, Matrix};

/// Features, labels and the class count. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Matrix,
    labels: LabelVector,
}

impl Dataset {
    pub fn new(features: Matrix, labels: LabelVector) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(shape(format!(
                "{} feature rows for {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if features.rows() == 0 {
            return Err(invalid("dataset must contain at least one row"));
        }
        Ok(Self { features, labels })
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &LabelVector {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.labels.num_classes()
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// Rows at `indices`, in that order. Panics on out-of-range indices.
    pub fn subset(&self, indices: &[usize]) -> (Matrix, LabelVector) {
        (self.features.select_rows(indices), self.labels.select(indices))
    }

    /// Writes the CSV layout described in the module docs.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let mut line = String::new();
        for (row, &label) in self.features.row_iter().zip(self.labels.as_slice()) {
            line.clear();
            for v in row {
                // `Display` for f64 is the shortest string that round-trips.
                line.push_str(&v.to_string());
                line.push(',');
            }
            line.push_str(&label.to_string());
            line.push('\n');
            out.write_all(line.as_bytes())?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        fs::write(path, buf)?;
        Ok(())
    }
}

/// Gaussian blobs around class means placed on the unit sphere.
///
/// Rows are ordered class by class, `samples_per_class` each. A `spread` of
/// zero yields noiseless samples sitting exactly on their class mean.
pub fn make_blobs(
    num_classes: usize,
    samples_per_class: usize,
    dim: usize,
    spread: f64,
    seed: u64,
) -> Result<Dataset> {
    if num_classes == 0 || samples_per_class == 0 || dim == 0 {
        return Err(invalid(format!(
            "num_classes, samples_per_class and dim must be >= 1 (got {num_classes}, {samples_per_class}, {dim})"
        )));
    }
    if !(spread.is_finite() && spread >= 0.0) {
        return Err(invalid(format!("spread must be finite and >= 0, got {spread}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let means: Vec<Vec<f64>> = (0..num_classes)
        .map(|_| loop {
            let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-12 {
                break v.into_iter().map(|x| x / norm).collect();
            }
        })
        .collect();

    let n = num_classes * samples_per_class;
    let mut data = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for (class, mean) in means.iter().enumerate() {
        for _ in 0..samples_per_class {
            for &m in mean {
                let noise: f64 = StandardNormal.sample(&mut rng);
                data.push(m + spread * noise);
            }
            labels.push(class);
        }
    }
    Dataset::new(
        Matrix::from_vec(n, dim, data)?,
        LabelVector::new(labels, num_classes)?,
    )
}

/// Parses CSV text; `origin` is only used in error messages.
pub fn parse_csv(text: &str, num_classes: usize, skip_header: bool, origin: &Path) -> Result<Dataset> {
    let parse_err = |line: usize, message: String| DtsError::Parse {
        path: origin.to_path_buf(),
        line,
        message,
    };
    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut width: Option<usize> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        if skip_header && idx == 0 {
            continue;
        }
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() < 2 {
            return Err(parse_err(line_no, "need at least one feature and a label".into()));
        }
        match width {
            None => width = Some(cells.len()),
            Some(w) if w != cells.len() => {
                return Err(parse_err(
                    line_no,
                    format!("ragged row: {} columns, expected {w}", cells.len()),
                ))
            }
            _ => {}
        }
        let (label_cell, feature_cells) = cells.split_last().expect("checked length");
        for (col, cell) in feature_cells.iter().enumerate() {
            let v: f64 = cell
                .parse()
                .map_err(|_| parse_err(line_no, format!("column {}: bad number {cell:?}", col + 1)))?;
            if !v.is_finite() {
                return Err(parse_err(line_no, format!("column {}: non-finite value", col + 1)));
            }
            data.push(v);
        }
        let label: usize = label_cell
            .parse()
            .map_err(|_| parse_err(line_no, format!("bad label {label_cell:?}")))?;
        if label >= num_classes {
            return Err(invalid(format!(
                "{}:{line_no}: label {label} outside [0, {num_classes})",
                origin.display()
            )));
        }
        labels.push(label);
    }
    let cols = width.map_or(0, |w| w - 1);
    Dataset::new(
        Matrix::from_vec(labels.len(), cols, data)?,
        LabelVector::new(labels, num_classes)?,
    )
}

pub fn load_csv(path: impl AsRef<Path>, num_classes: usize, skip_header: bool) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    parse_csv(&text, num_classes, skip_header, path)
}

/// Seeded shuffle, then the first `round(fraction · N)` rows go to the train side.
pub fn split(dataset: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(invalid(format!(
            "train fraction must be in (0, 1), got {train_fraction}"
        )));
    }
    let n = dataset.len();
    let n_train = (train_fraction * n as f64).round() as usize;
    if n_train == 0 || n_train == n {
        return Err(invalid(format!(
            "fraction {train_fraction} of {n} rows leaves one side empty"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (train_idx, test_idx) = order.split_at(n_train);
    let build = |idx: &[usize]| {
        let (x, y) = dataset.subset(idx);
        Dataset::new(x, y)
    };
    Ok((build(train_idx)?, build(test_idx)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn blobs_are_balanced_and_deterministic() {
        let a = make_blobs(4, 25, 3, 0.2, 11).unwrap();
        let b = make_blobs(4, 25, 3, 0.2, 11).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, make_blobs(4, 25, 3, 0.2, 12).unwrap());
        for c in 0..4 {
            assert_eq!(a.labels().as_slice().iter().filter(|&&l| l == c).count(), 25);
        }
    }

    #[test]
    fn zero_spread_puts_samples_on_unit_sphere_means() {
        let d = make_blobs(3, 5, 4, 0.0, 1).unwrap();
        for c in 0..3 {
            let first = d.features().row(c * 5).to_vec();
            let norm: f64 = first.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-12);
            for i in 1..5 {
                assert_eq!(d.features().row(c * 5 + i), &first[..]);
            }
        }
    }

    #[test]
    fn blobs_reject_degenerate_parameters() {
        assert!(make_blobs(0, 5, 2, 0.1, 0).is_err());
        assert!(make_blobs(2, 0, 2, 0.1, 0).is_err());
        assert!(make_blobs(2, 5, 0, 0.1, 0).is_err());
        assert!(make_blobs(2, 5, 2, -0.1, 0).is_err());
        assert!(make_blobs(2, 5, 2, f64::NAN, 0).is_err());
    }

    #[test]
    fn csv_basic_and_crlf() {
        let d = parse_csv("1.5,2,0\r\n-3,4e-1,1\r\n", 2, false, Path::new("x.csv")).unwrap();
        assert_eq!(d.features().shape(), (2, 2));
        assert_eq!(d.labels().as_slice(), &[0, 1]);
        assert_eq!(d.features().row(1), &[-3.0, 0.4]);

        let h = parse_csv("a,b,label\n1,2,0\n", 2, true, Path::new("x.csv")).unwrap();
        assert_eq!(h.len(), 1);
    }

    #[test]
    fn csv_errors_name_the_line() {
        let err = parse_csv("1,2,0\n1,2,2\n", 2, false, Path::new("x.csv")).unwrap_err();
        assert!(matches!(err, DtsError::InvalidArgument(_)));
        assert!(err.to_string().contains(":2:"), "{err}");

        let err = parse_csv("1,2,0\n1,zz,1\n", 2, false, Path::new("x.csv")).unwrap_err();
        assert!(matches!(err, DtsError::Parse { line: 2, .. }), "{err}");

        let err = parse_csv("1,2,0\n1,1\n", 2, false, Path::new("x.csv")).unwrap_err();
        assert!(matches!(err, DtsError::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn split_examples() {
        let d = make_blobs(10, 100, 2, 0.3, 5).unwrap();
        let (tr, te) = split(&d, 0.8, 9).unwrap();
        assert_eq!((tr.len(), te.len()), (800, 200));
        assert_eq!(split(&d, 0.8, 9).unwrap(), (tr.clone(), te.clone()));
        assert!(split(&d, 0.0, 9).is_err());
        assert!(split(&d, 1.0, 9).is_err());
        let tiny = make_blobs(1, 2, 1, 0.3, 5).unwrap();
        assert!(split(&tiny, 0.1, 1).is_err());
    }

    #[test]
    fn split_is_a_partition() {
        // Tag each row with its index through the first feature.
        let n = 57;
        let x = Matrix::from_vec(n, 1, (0..n).map(|i| i as f64).collect()).unwrap();
        let y = LabelVector::new(vec![0; n], 1).unwrap();
        let d = Dataset::new(x, y).unwrap();
        let (tr, te) = split(&d, 0.3, 4).unwrap();
        let mut seen: Vec<usize> = tr
            .features()
            .as_slice()
            .iter()
            .chain(te.features().as_slice())
            .map(|&v| v as usize)
            .collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..n).collect::<Vec<_>>());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn csv_round_trip(c in 1usize..5, per in 1usize..6, dim in 1usize..5, spread in 0.0f64..3.0, seed in any::<u64>()) {
            let d = make_blobs(c, per, dim, spread, seed).unwrap();
            let mut buf = Vec::new();
            d.write_csv(&mut buf).unwrap();
            let back = parse_csv(std::str::from_utf8(&buf).unwrap(), c, false, Path::new("mem")).unwrap();
            prop_assert_eq!(back, d);
        }
    }
}
