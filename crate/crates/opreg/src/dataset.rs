//! Operator datasets and the ONDS binary container.
//!
//! Aligned data shares one grid for every sample (`grid [K, d]`); unaligned
//! data carries one grid per sample (`grid [N, K, d]`). The prod layout used
//! by the dot-product DeepONet is a per-row view of unaligned data
//! (`[N*K, ...]` matrices) and is materialized batch by batch rather than
//! stored.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const ONDS_MAGIC: [u8; 4] = *b"ONDS";
pub const ONDS_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataMode {
    Aligned,
    Unaligned,
}

impl DataMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            DataMode::Aligned => "aligned",
            DataMode::Unaligned => "unaligned",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "aligned" => Ok(DataMode::Aligned),
            "unaligned" => Ok(DataMode::Unaligned),
            other => Err(Error::InvalidArgument(format!(
                "unknown mode {other:?} (expected aligned|unaligned)"
            ))),
        }
    }
}

/// Function samples, observation grids, and observed outputs.
#[derive(Clone, Debug)]
pub struct OperatorDataset {
    pub mode: DataMode,
    /// `[N, k]`, one flattened input function per row.
    pub function_matrix: Tensor,
    /// Aligned `[K, d]`, unaligned `[N, K, d]`.
    pub grid_matrix: Tensor,
    /// `[N, K]`.
    pub output_matrix: Tensor,
    /// Optional `[K]` label average (train-split mean when written by the
    /// data factory).
    pub mean_field: Option<Tensor>,
}

impl OperatorDataset {
    pub fn new(
        mode: DataMode,
        function_matrix: Tensor,
        grid_matrix: Tensor,
        output_matrix: Tensor,
        mean_field: Option<Tensor>,
    ) -> Result<Self> {
        let ds = Self {
            mode,
            function_matrix,
            grid_matrix,
            output_matrix,
            mean_field,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn num_samples(&self) -> usize {
        self.function_matrix.shape()[0]
    }

    /// Sensor count k (columns of the function matrix).
    pub fn num_sensors(&self) -> usize {
        self.function_matrix.shape()[1]
    }

    /// Observation count K per sample.
    pub fn num_observations(&self) -> usize {
        self.output_matrix.shape()[1]
    }

    pub fn coord_dim(&self) -> usize {
        *self.grid_matrix.shape().last().unwrap()
    }

    pub fn validate(&self) -> Result<()> {
        let fshape = self.function_matrix.shape();
        if fshape.len() != 2 {
            return Err(Error::InvalidArgument(format!(
                "function matrix must be [N, k], got {fshape:?}"
            )));
        }
        let n = fshape[0];
        let oshape = self.output_matrix.shape();
        if oshape.len() != 2 || oshape[0] != n {
            return Err(Error::ShapeMismatch {
                op: "dataset output matrix",
                lhs: fshape.to_vec(),
                rhs: oshape.to_vec(),
            });
        }
        let k_obs = oshape[1];
        let gshape = self.grid_matrix.shape();
        let grid_ok = match self.mode {
            DataMode::Aligned => gshape.len() == 2 && gshape[0] == k_obs,
            DataMode::Unaligned => gshape.len() == 3 && gshape[0] == n && gshape[1] == k_obs,
        };
        if !grid_ok {
            return Err(Error::ShapeMismatch {
                op: "dataset grid matrix",
                lhs: oshape.to_vec(),
                rhs: gshape.to_vec(),
            });
        }
        if let Some(mf) = &self.mean_field {
            if mf.shape() != [k_obs] {
                return Err(Error::ShapeMismatch {
                    op: "dataset mean field",
                    lhs: vec![k_obs],
                    rhs: mf.shape().to_vec(),
                });
            }
        }
        Ok(())
    }

    /// Shapes of the prod-layout view: function `[N*K, k]`, grid `[N*K, d]`,
    /// output `[N*K, 1]`.
    pub fn prod_shapes(&self) -> ([usize; 2], [usize; 2], [usize; 2]) {
        let rows = self.num_samples() * self.num_observations();
        (
            [rows, self.num_sensors()],
            [rows, self.coord_dim()],
            [rows, 1],
        )
    }

    /// Grid point of observation `obs` of sample `sample`.
    pub fn grid_point(&self, sample: usize, obs: usize) -> &[f64] {
        let d = self.coord_dim();
        match self.mode {
            DataMode::Aligned => &self.grid_matrix.data()[obs * d..(obs + 1) * d],
            DataMode::Unaligned => {
                let k = self.num_observations();
                let base = (sample * k + obs) * d;
                &self.grid_matrix.data()[base..base + d]
            }
        }
    }

    /// Materialize prod-layout rows for the given (sample, observation)
    /// pairs.
    pub fn prod_batch(&self, pairs: &[(usize, usize)]) -> ProdBatch {
        let k = self.num_sensors();
        let d = self.coord_dim();
        let mut function = Tensor::zeros(&[pairs.len(), k]);
        let mut points = Tensor::zeros(&[pairs.len(), d]);
        let mut truth = Tensor::zeros(&[pairs.len(), 1]);
        {
            let f = function.data_mut();
            for (row, &(s, _)) in pairs.iter().enumerate() {
                f[row * k..(row + 1) * k]
                    .copy_from_slice(&self.function_matrix.data()[s * k..(s + 1) * k]);
            }
        }
        {
            let p = points.data_mut();
            for (row, &(s, o)) in pairs.iter().enumerate() {
                p[row * d..(row + 1) * d].copy_from_slice(self.grid_point(s, o));
            }
        }
        {
            let t = truth.data_mut();
            let ko = self.num_observations();
            for (row, &(s, o)) in pairs.iter().enumerate() {
                t[row] = self.output_matrix.data()[s * ko + o];
            }
        }
        ProdBatch {
            function,
            points,
            truth,
        }
    }

    /// Gather whole samples (function rows, per-sample grids, output rows).
    pub fn sample_batch(&self, samples: &[usize]) -> SampleBatch {
        let k = self.num_sensors();
        let ko = self.num_observations();
        let d = self.coord_dim();
        let b = samples.len();
        let mut function = Tensor::zeros(&[b, k]);
        let mut truth = Tensor::zeros(&[b, ko]);
        {
            let f = function.data_mut();
            for (row, &s) in samples.iter().enumerate() {
                f[row * k..(row + 1) * k]
                    .copy_from_slice(&self.function_matrix.data()[s * k..(s + 1) * k]);
            }
        }
        {
            let t = truth.data_mut();
            for (row, &s) in samples.iter().enumerate() {
                t[row * ko..(row + 1) * ko]
                    .copy_from_slice(&self.output_matrix.data()[s * ko..(s + 1) * ko]);
            }
        }
        let mut grids = Tensor::zeros(&[b, ko, d]);
        {
            let g = grids.data_mut();
            let block = ko * d;
            for (row, &s) in samples.iter().enumerate() {
                match self.mode {
                    DataMode::Aligned => {
                        g[row * block..(row + 1) * block].copy_from_slice(self.grid_matrix.data())
                    }
                    DataMode::Unaligned => g[row * block..(row + 1) * block]
                        .copy_from_slice(&self.grid_matrix.data()[s * block..(s + 1) * block]),
                }
            }
        }
        SampleBatch {
            function,
            grids,
            truth,
        }
    }

    /// Index-wise average of the selected output rows.
    pub fn mean_field_of(&self, samples: &[usize]) -> Result<Tensor> {
        if samples.is_empty() {
            return Err(Error::InvalidArgument(
                "mean field of an empty sample set".into(),
            ));
        }
        let ko = self.num_observations();
        let mut mean = vec![0.0; ko];
        for &s in samples {
            let row = &self.output_matrix.data()[s * ko..(s + 1) * ko];
            for (acc, &v) in mean.iter_mut().zip(row) {
                *acc += v;
            }
        }
        for v in &mut mean {
            *v /= samples.len() as f64;
        }
        Tensor::new(vec![ko], mean)
    }

    // ---- ONDS container -------------------------------------------------

    pub fn write(&self, path: &Path) -> Result<()> {
        self.validate()?;
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(&ONDS_MAGIC)?;
        w.write_all(&ONDS_VERSION.to_le_bytes())?;
        w.write_all(&[match self.mode {
            DataMode::Aligned => 0u8,
            DataMode::Unaligned => 1u8,
        }])?;
        w.write_all(&(self.coord_dim() as u32).to_le_bytes())?;
        w.write_all(&(self.num_samples() as u64).to_le_bytes())?;
        w.write_all(&(self.num_sensors() as u64).to_le_bytes())?;
        w.write_all(&(self.num_observations() as u64).to_le_bytes())?;
        write_f64s(&mut w, self.function_matrix.data())?;
        write_f64s(&mut w, self.grid_matrix.data())?;
        write_f64s(&mut w, self.output_matrix.data())?;
        match &self.mean_field {
            Some(mf) => {
                w.write_all(&[1u8])?;
                write_f64s(&mut w, mf.data())?;
            }
            None => w.write_all(&[0u8])?,
        }
        w.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let ctx = |what: &str| Error::Truncated {
            path: path.to_path_buf(),
            context: what.to_string(),
        };
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic).map_err(|_| ctx("magic"))?;
        if magic != ONDS_MAGIC {
            return Err(Error::BadMagic {
                path: path.to_path_buf(),
                found: magic,
                expected: ONDS_MAGIC,
            });
        }
        let version = read_u32(&mut r).map_err(|_| ctx("version"))?;
        if version != ONDS_VERSION {
            return Err(Error::BadVersion {
                path: path.to_path_buf(),
                found: version,
                expected: ONDS_VERSION,
            });
        }
        let mut mode_byte = [0u8; 1];
        read_exact(&mut r, &mut mode_byte).map_err(|_| ctx("mode"))?;
        let mode = match mode_byte[0] {
            0 => DataMode::Aligned,
            1 => DataMode::Unaligned,
            other => {
                return Err(Error::Integrity {
                    path: path.to_path_buf(),
                    reason: format!("invalid mode byte {other}"),
                })
            }
        };
        let d = read_u32(&mut r).map_err(|_| ctx("coordinate dimension"))? as usize;
        let n = read_u64(&mut r).map_err(|_| ctx("sample count"))? as usize;
        let k = read_u64(&mut r).map_err(|_| ctx("sensor count"))? as usize;
        let k_obs = read_u64(&mut r).map_err(|_| ctx("observation count"))? as usize;
        let function = read_f64s(&mut r, n * k).map_err(|_| ctx("function matrix"))?;
        let grid_len = match mode {
            DataMode::Aligned => k_obs * d,
            DataMode::Unaligned => n * k_obs * d,
        };
        let grid = read_f64s(&mut r, grid_len).map_err(|_| ctx("grid matrix"))?;
        let output = read_f64s(&mut r, n * k_obs).map_err(|_| ctx("output matrix"))?;
        let mut trailer = [0u8; 1];
        read_exact(&mut r, &mut trailer).map_err(|_| ctx("trailer"))?;
        let mean_field = match trailer[0] {
            0 => None,
            1 => Some(Tensor::new(
                vec![k_obs],
                read_f64s(&mut r, k_obs).map_err(|_| ctx("mean field"))?,
            )?),
            other => {
                return Err(Error::Integrity {
                    path: path.to_path_buf(),
                    reason: format!("invalid trailer byte {other}"),
                })
            }
        };
        let grid_shape = match mode {
            DataMode::Aligned => vec![k_obs, d],
            DataMode::Unaligned => vec![n, k_obs, d],
        };
        Self::new(
            mode,
            Tensor::new(vec![n, k], function)?,
            Tensor::new(grid_shape, grid)?,
            Tensor::new(vec![n, k_obs], output)?,
            mean_field,
        )
    }
}

/// One prod-layout mini-batch: rows of (function, point, value).
pub struct ProdBatch {
    pub function: Tensor,
    pub points: Tensor,
    pub truth: Tensor,
}

/// One sample-major mini-batch: whole observation fields.
pub struct SampleBatch {
    pub function: Tensor,
    pub grids: Tensor,
    pub truth: Tensor,
}

pub(crate) fn write_f64s(w: &mut impl Write, data: &[f64]) -> Result<()> {
    let mut buf = Vec::with_capacity(8 * 1024);
    for chunk in data.chunks(1024) {
        buf.clear();
        for &v in chunk {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

pub(crate) fn read_f64s(r: &mut impl Read, len: usize) -> std::io::Result<Vec<f64>> {
    let mut bytes = vec![0u8; len * 8];
    r.read_exact(&mut bytes)?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

pub(crate) fn read_exact(r: &mut impl Read, buf: &mut [u8]) -> std::io::Result<()> {
    r.read_exact(buf)
}

pub(crate) fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_u64(r: &mut impl Read) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub(crate) fn read_u16(r: &mut impl Read) -> std::io::Result<u16> {
    let mut b = [0u8; 2];
    r.read_exact(&mut b)?;
    Ok(u16::from_le_bytes(b))
}

/// Stable path type for dataset references in configs.
pub type DatasetPath = PathBuf;
