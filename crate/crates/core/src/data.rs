//! Points, the Euclidean metric, and the distance counter every algorithm
//! reports its cost through.

use std::io::{Read, Write};

use crate::error::{Error, Result};

/// Immutable row-major table of `n` points in `dim` dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    values: Vec<f64>,
    n: usize,
    dim: usize,
}

impl Dataset {
    /// Builds a dataset from a flat row-major buffer.
    pub fn new(values: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 || values.is_empty() {
            return Err(Error::Empty);
        }
        if !values.len().is_multiple_of(dim) {
            return Err(Error::Ragged {
                row: values.len() / dim + 1,
                expected: dim,
                found: values.len() % dim,
            });
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: pos / dim + 1,
                column: pos % dim + 1,
                value: values[pos],
            });
        }
        let n = values.len() / dim;
        Ok(Self { values, n, dim })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let dim = rows.first().map(|r| r.as_ref().len()).ok_or(Error::Empty)?;
        let mut values = Vec::with_capacity(rows.len() * dim);
        for (row, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != dim {
                return Err(Error::Ragged {
                    row: row + 1,
                    expected: dim,
                    found: r.len(),
                });
            }
            values.extend_from_slice(r);
        }
        Self::new(values, dim)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn point(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.values.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.values
    }

    /// Coordinate-wise sum of all points.
    pub fn column_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.dim];
        for p in self.points() {
            add_assign(&mut sums, p);
        }
        sums
    }
}

/// Euclidean distance. Panics if the dimensions differ.
#[inline]
pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "dimension mismatch");
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// Tally of metric evaluations performed by one clustering run.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct DistanceCounter {
    count: u64,
}

impl DistanceCounter {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn count(&self) -> u64 {
        self.count
    }

    /// Evaluates the metric and records one evaluation.
    #[inline]
    pub fn measure(&mut self, a: &[f64], b: &[f64]) -> f64 {
        self.count += 1;
        distance(a, b)
    }
}

#[inline]
pub fn counted_distance(ctr: &mut DistanceCounter, a: &[f64], b: &[f64]) -> f64 {
    ctr.measure(a, b)
}

#[inline]
pub(crate) fn add_assign(acc: &mut [f64], p: &[f64]) {
    for (a, v) in acc.iter_mut().zip(p) {
        *a += v;
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CsvOptions {
    pub delimiter: u8,
    pub has_header: bool,
}

impl Default for CsvOptions {
    fn default() -> Self {
        Self {
            delimiter: b',',
            has_header: false,
        }
    }
}

/// Reads delimited numeric text, one point per record.
pub fn load_dataset<R: Read>(source: R, options: CsvOptions) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(options.delimiter)
        .has_headers(options.has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(source);
    let mut values = Vec::new();
    let mut dim = None;
    let mut record = csv::StringRecord::new();
    while reader.read_record(&mut record)? {
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        let row = record.position().map_or(0, |p| p.line() as usize);
        let expected = *dim.get_or_insert(record.len());
        if record.len() != expected {
            return Err(Error::Ragged {
                row,
                expected,
                found: record.len(),
            });
        }
        for (i, cell) in record.iter().enumerate() {
            let column = i + 1;
            let value: f64 = cell.parse().map_err(|_| Error::Parse {
                row,
                column,
                value: cell.to_string(),
            })?;
            if !value.is_finite() {
                return Err(Error::NonFinite { row, column, value });
            }
            values.push(value);
        }
    }
    match dim {
        Some(dim) => Dataset::new(values, dim),
        None => Err(Error::Empty),
    }
}

/// Writes the dataset as comma-separated text using shortest round-trip
/// float formatting.
pub fn write_dataset<W: Write>(data: &Dataset, sink: W) -> Result<()> {
    let mut writer = csv::WriterBuilder::new().from_writer(sink);
    for p in data.points() {
        writer.write_record(p.iter().map(|v| v.to_string()))?;
    }
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn three_four_five() {
        assert_eq!(distance(&[0.0, 0.0], &[3.0, 4.0]), 5.0);
        assert_eq!(distance(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]), 0.0);
    }

    #[test]
    fn matches_sum_of_squares_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let a: Vec<f64> = (0..10).map(|_| rng.gen_range(-50.0..50.0)).collect();
            let b: Vec<f64> = (0..10).map(|_| rng.gen_range(-50.0..50.0)).collect();
            let mut ss = 0.0;
            for i in 0..10 {
                ss += (a[i] - b[i]).powi(2);
            }
            let oracle = ss.sqrt();
            assert!((distance(&a, &b) - oracle).abs() <= 1e-12 * oracle);
        }
    }

    #[test]
    #[should_panic(expected = "dimension mismatch")]
    fn mismatched_dimensions_panic() {
        distance(&[1.0], &[1.0, 2.0]);
    }

    #[test]
    fn counter_increments_once_per_call() {
        let mut ctr = DistanceCounter::new();
        let d = counted_distance(&mut ctr, &[0.0, 0.0], &[3.0, 4.0]);
        assert_eq!((d, ctr.count()), (5.0, 1));
        for _ in 0..99 {
            ctr.measure(&[1.0], &[2.0]);
        }
        assert_eq!(ctr.count(), 100);
    }

    #[test]
    fn loads_simple_csv() {
        let data = load_dataset("1,2\n3,4\n".as_bytes(), CsvOptions::default()).unwrap();
        assert_eq!((data.len(), data.dim()), (2, 2));
        assert_eq!(data.point(1), &[3.0, 4.0]);
    }

    #[test]
    fn skips_declared_header() {
        let opts = CsvOptions {
            has_header: true,
            ..CsvOptions::default()
        };
        let data = load_dataset("x,y\n1,2\n".as_bytes(), opts).unwrap();
        assert_eq!(data.len(), 1);
    }

    #[test]
    fn custom_delimiter() {
        let opts = CsvOptions {
            delimiter: b';',
            ..CsvOptions::default()
        };
        let data = load_dataset("1;2;3\n4;5;6\n".as_bytes(), opts).unwrap();
        assert_eq!(data.dim(), 3);
    }

    #[test]
    fn reports_bad_cells_and_shapes() {
        let err = load_dataset("1,2\n3,x\n".as_bytes(), CsvOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Parse { row: 2, column: 2, .. }), "{err}");
        let err = load_dataset("1,2\n3\n".as_bytes(), CsvOptions::default()).unwrap_err();
        assert!(
            matches!(
                err,
                Error::Ragged {
                    row: 2,
                    expected: 2,
                    found: 1
                }
            ),
            "{err}"
        );
        let opts = CsvOptions {
            has_header: true,
            ..CsvOptions::default()
        };
        let err = load_dataset("a,b\n1,2\n3,x\n".as_bytes(), opts).unwrap_err();
        assert!(matches!(err, Error::Parse { row: 3, column: 2, .. }), "{err}");
        let err = load_dataset("".as_bytes(), CsvOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Empty));
        let err = load_dataset("1,NaN\n".as_bytes(), CsvOptions::default()).unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }));
    }

    #[test]
    fn write_then_read_is_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let values: Vec<f64> = (0..3000).map(|_| rng.gen_range(-1e3..1e3)).collect();
        let data = Dataset::new(values, 3).unwrap();
        let mut buf = Vec::new();
        write_dataset(&data, &mut buf).unwrap();
        let back = load_dataset(buf.as_slice(), CsvOptions::default()).unwrap();
        assert_eq!(back.len(), 1000);
        assert!(data
            .as_flat()
            .iter()
            .zip(back.as_flat())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }
}
