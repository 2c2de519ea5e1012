//! Datasets of observed input/output pairs and the draws the SAA makes from
//! them.

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::RandomStream;

/// One observed record: input features `x` paired with observed outputs `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct DataPoint {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl DataPoint {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if x.is_empty() || y.is_empty() {
            return Err(Error::InvalidArgument(
                "data point needs at least one input and one output".into(),
            ));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "data point entries must be finite".into(),
            ));
        }
        Ok(Self { x, y })
    }
}

/// An ordered, immutable collection of points sharing input/output dimensions.
#[derive(Debug, Clone)]
pub struct Dataset {
    points: Vec<DataPoint>,
    input_dim: usize,
    output_dim: usize,
}

impl Dataset {
    pub fn new(points: Vec<DataPoint>) -> Result<Self> {
        let first = points
            .first()
            .ok_or_else(|| Error::InvalidArgument("dataset must be non-empty".into()))?;
        let input_dim = first.x.len();
        let output_dim = first.y.len();
        for (i, p) in points.iter().enumerate() {
            if p.x.len() != input_dim || p.y.len() != output_dim {
                return Err(Error::InvalidArgument(format!(
                    "point {i} has mismatched dimensions"
                )));
            }
        }
        Ok(Self {
            points,
            input_dim,
            output_dim,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        false // construction requires at least one point
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn point(&self, index: usize) -> &DataPoint {
        &self.points[index]
    }

    pub fn points(&self) -> &[DataPoint] {
        &self.points
    }

    /// Index of a uniform i.i.d. draw (with replacement).
    pub fn draw_index(&self, stream: &mut RandomStream) -> usize {
        stream.random_range(0..self.points.len())
    }

    /// `count` uniform i.i.d. draws with replacement, repeatable given the
    /// stream state.
    pub fn draw_iid(&self, stream: &mut RandomStream, count: usize) -> Result<Vec<usize>> {
        if count == 0 {
            return Err(Error::InvalidArgument("draw count must be >= 1".into()));
        }
        Ok((0..count).map(|_| self.draw_index(stream)).collect())
    }

    /// Random disjoint, exhaustive partition into a modeling set of size
    /// `round(fraction * n)` and a validation set holding the rest.
    pub fn split(&self, stream: &mut RandomStream, fraction: f64) -> Result<(Dataset, Dataset)> {
        if !(fraction > 0.0 && fraction < 1.0) {
            return Err(Error::InvalidArgument(
                "split fraction must lie strictly between 0 and 1".into(),
            ));
        }
        let n = self.points.len();
        if n < 2 {
            return Err(Error::InvalidArgument(
                "cannot split a single-point dataset".into(),
            ));
        }
        let target = (fraction * n as f64).round() as usize;
        let modeling_size = target.clamp(1, n - 1);
        let mut indices: Vec<usize> = (0..n).collect();
        indices.shuffle(stream);
        let mut modeling = Vec::with_capacity(modeling_size);
        let mut validation = Vec::with_capacity(n - modeling_size);
        for (rank, &i) in indices.iter().enumerate() {
            if rank < modeling_size {
                modeling.push(self.points[i].clone());
            } else {
                validation.push(self.points[i].clone());
            }
        }
        Ok((Dataset::new(modeling)?, Dataset::new(validation)?))
    }

    /// Reads the CSV interchange format: a header `x1..xq,y1..yp` followed by
    /// decimal-point reals with no missing values.
    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers = rdr.headers()?.clone();
        let input_dim = headers.iter().take_while(|h| h.starts_with('x')).count();
        let output_dim = headers.len() - input_dim;
        if input_dim == 0 || output_dim == 0 {
            return Err(Error::InvalidArgument(
                "csv header must list x1..xq then y1..yp".into(),
            ));
        }
        for (i, h) in headers.iter().enumerate() {
            let expected = if i < input_dim {
                format!("x{}", i + 1)
            } else {
                format!("y{}", i - input_dim + 1)
            };
            if h != expected {
                return Err(Error::InvalidArgument(format!(
                    "unexpected csv column `{h}`, expected `{expected}`"
                )));
            }
        }
        let mut points = Vec::new();
        for record in rdr.records() {
            let record = record?;
            if record.len() != input_dim + output_dim {
                return Err(Error::InvalidArgument(format!(
                    "csv row {} has {} fields, expected {}",
                    points.len() + 2,
                    record.len(),
                    input_dim + output_dim
                )));
            }
            let mut values = Vec::with_capacity(record.len());
            for field in record.iter() {
                let v: f64 = field.trim().parse().map_err(|_| {
                    Error::InvalidArgument(format!("cannot parse `{field}` as a real number"))
                })?;
                values.push(v);
            }
            let y = values.split_off(input_dim);
            points.push(DataPoint::new(values, y)?);
        }
        Dataset::new(points)
    }

    pub fn from_csv_path<P: AsRef<Path>>(path: P) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::from_csv_reader(std::io::BufReader::new(file))
    }

    pub fn to_csv_writer<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header = Vec::new();
        for i in 0..self.input_dim {
            header.push(format!("x{}", i + 1));
        }
        for j in 0..self.output_dim {
            header.push(format!("y{}", j + 1));
        }
        wtr.write_record(&header)?;
        for p in &self.points {
            let row: Vec<String> = p
                .x
                .iter()
                .chain(p.y.iter())
                .map(|v| format!("{v:?}"))
                .collect();
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn to_csv_path<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.to_csv_writer(std::io::BufWriter::new(file))
    }
}
