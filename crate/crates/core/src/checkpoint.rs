//! Flat binary checkpoint format: a versioned header listing named parameter
//! tensors (name, shape), followed by the raw payloads as 64-bit little-endian
//! floats in row-major order. Model parameters, both temperatures, the stage
//! index and optimizer state all travel in this framing; embedding dumps reuse
//! it as well.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::encoder::{DualEncoderModel, ToyImageEncoder, ToyTextEncoder};
use crate::error::{Error, Result};
use crate::loss::Temperature;
use crate::tensor::{Grid, Matrix};

const MAGIC: &[u8; 8] = b"DESKCKPT";
const VERSION: u32 = 1;

/// Stage tag stored in the header: 0 = initial (untrained), 1..3 = after that
/// pipeline stage, [`STAGE_UNIFIED`] = unified-batch run.
pub const STAGE_INITIAL: u32 = 0;
pub const STAGE_UNIFIED: u32 = 100;

pub fn stage_tag(stage: u32) -> String {
    match stage {
        STAGE_INITIAL => "initial".to_string(),
        STAGE_UNIFIED => "unified".to_string(),
        s => format!("stage{s}"),
    }
}

/// A named tensor with explicit shape; payload length equals the product of
/// the dims.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dims: Vec<u64>,
    pub data: Vec<f64>,
}

impl NamedTensor {
    pub fn new(name: &str, dims: Vec<u64>, data: Vec<f64>) -> Result<Self> {
        let expected: u64 = dims.iter().product();
        if expected != data.len() as u64 {
            return Err(Error::ShapeMismatch(format!(
                "tensor {name}: {} values for dims {dims:?}",
                data.len()
            )));
        }
        Ok(Self {
            name: name.to_string(),
            dims,
            data,
        })
    }

    pub fn scalar(name: &str, value: f64) -> Self {
        Self {
            name: name.to_string(),
            dims: vec![1],
            data: vec![value],
        }
    }

    pub fn from_matrix(name: &str, m: &Matrix) -> Self {
        Self {
            name: name.to_string(),
            dims: vec![m.rows() as u64, m.cols() as u64],
            data: m.data().to_vec(),
        }
    }

    pub fn from_grid(name: &str, g: &Grid) -> Self {
        Self {
            name: name.to_string(),
            dims: vec![g.side() as u64, g.side() as u64, g.channels() as u64],
            data: g.data().to_vec(),
        }
    }

    pub fn to_matrix(&self) -> Result<Matrix> {
        if self.dims.len() != 2 {
            return Err(Error::Checkpoint(format!(
                "tensor {} is not a matrix: dims {:?}",
                self.name, self.dims
            )));
        }
        Matrix::from_vec(self.data.clone(), self.dims[0] as usize, self.dims[1] as usize)
    }

    pub fn to_grid(&self) -> Result<Grid> {
        if self.dims.len() != 3 || self.dims[0] != self.dims[1] {
            return Err(Error::Checkpoint(format!(
                "tensor {} is not a square grid: dims {:?}",
                self.name, self.dims
            )));
        }
        Grid::from_vec(self.data.clone(), self.dims[0] as usize, self.dims[2] as usize)
    }

    pub fn to_scalar(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return Err(Error::Checkpoint(format!(
                "tensor {} is not a scalar",
                self.name
            )));
        }
        Ok(self.data[0])
    }
}

/// Serializes the header and payloads to a byte buffer.
pub fn encode_tensor_file(stage: u32, tensors: &[NamedTensor]) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&stage.to_le_bytes());
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        let name = t.name.as_bytes();
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name);
        buf.extend_from_slice(&(t.dims.len() as u32).to_le_bytes());
        for d in &t.dims {
            buf.extend_from_slice(&d.to_le_bytes());
        }
    }
    for t in tensors {
        for x in &t.data {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    buf
}

pub fn write_tensor_file(path: &Path, stage: u32, tensors: &[NamedTensor]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let mut file = fs::File::create(path)?;
    file.write_all(&encode_tensor_file(stage, tensors))?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint(format!(
                "truncated file: wanted {n} bytes at offset {}",
                self.pos
            )));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode_tensor_file(buf: &[u8]) -> Result<(u32, Vec<NamedTensor>)> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let stage = r.u32()?;
    let count = r.u32()? as usize;
    let mut headers = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| Error::Checkpoint("tensor name is not utf-8".into()))?;
        let rank = r.u32()? as usize;
        if rank > 4 {
            return Err(Error::Checkpoint(format!("tensor {name} has rank {rank}")));
        }
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u64()?);
        }
        headers.push((name, dims));
    }
    let mut tensors = Vec::with_capacity(count);
    for (name, dims) in headers {
        let len: u64 = dims.iter().product();
        let mut data = Vec::with_capacity(len as usize);
        for _ in 0..len {
            data.push(r.f64()?);
        }
        tensors.push(NamedTensor { name, dims, data });
    }
    if r.pos != buf.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes",
            buf.len() - r.pos
        )));
    }
    Ok((stage, tensors))
}

pub fn read_tensor_file(path: &Path) -> Result<(u32, Vec<NamedTensor>)> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let buf = fs::read(path)?;
    decode_tensor_file(&buf)
}

pub const MODEL_TENSOR_NAMES: [&str; 8] = [
    "text.token_table",
    "text.pos_table",
    "text.proj",
    "image.patch_proj",
    "image.pos_grid",
    "image.proj",
    "temp.text",
    "temp.mm",
];

/// Model parameters (and both temperatures) as named tensors.
pub fn model_to_tensors(model: &DualEncoderModel) -> Vec<NamedTensor> {
    vec![
        NamedTensor::from_matrix("text.token_table", &model.text.token_table),
        NamedTensor::from_matrix("text.pos_table", &model.text.pos_table),
        NamedTensor::from_matrix("text.proj", &model.text.proj),
        NamedTensor::from_matrix("image.patch_proj", &model.image.patch_proj),
        NamedTensor::from_grid("image.pos_grid", &model.image.pos_grid),
        NamedTensor::from_matrix("image.proj", &model.image.proj),
        NamedTensor::scalar("temp.text", model.temp_text.log_inv_tau()),
        NamedTensor::scalar("temp.mm", model.temp_mm.log_inv_tau()),
    ]
}

fn find<'a>(tensors: &'a [NamedTensor], name: &str) -> Result<&'a NamedTensor> {
    tensors
        .iter()
        .find(|t| t.name == name)
        .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))
}

/// Rebuilds a model from named tensors; shapes are taken from the tensors.
pub fn model_from_tensors(tensors: &[NamedTensor]) -> Result<DualEncoderModel> {
    let text = ToyTextEncoder {
        token_table: find(tensors, "text.token_table")?.to_matrix()?,
        pos_table: find(tensors, "text.pos_table")?.to_matrix()?,
        proj: find(tensors, "text.proj")?.to_matrix()?,
    };
    let image = ToyImageEncoder {
        patch_proj: find(tensors, "image.patch_proj")?.to_matrix()?,
        pos_grid: find(tensors, "image.pos_grid")?.to_grid()?,
        proj: find(tensors, "image.proj")?.to_matrix()?,
    };
    if text.token_table.cols() != text.pos_table.cols()
        || text.token_table.cols() != text.proj.rows()
        || image.patch_proj.cols() != image.pos_grid.channels()
        || image.patch_proj.cols() != image.proj.rows()
        || text.proj.cols() != image.proj.cols()
    {
        return Err(Error::Checkpoint("inconsistent tensor shapes".into()));
    }
    let temp_text = Temperature::from_log_inv_tau(find(tensors, "temp.text")?.to_scalar()?);
    let temp_mm = Temperature::from_log_inv_tau(find(tensors, "temp.mm")?.to_scalar()?);
    Ok(DualEncoderModel {
        text,
        image,
        temp_text,
        temp_mm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::ModelConfig;

    #[test]
    fn tensor_file_round_trip() {
        let tensors = vec![
            NamedTensor::new("a", vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap(),
            NamedTensor::scalar("b", -0.25),
        ];
        let buf = encode_tensor_file(2, &tensors);
        let (stage, back) = decode_tensor_file(&buf).unwrap();
        assert_eq!(stage, 2);
        assert_eq!(back, tensors);
    }

    #[test]
    fn model_round_trip_is_bit_exact() {
        let model = DualEncoderModel::new(&ModelConfig::default(), 42).unwrap();
        let tensors = model_to_tensors(&model);
        let buf = encode_tensor_file(STAGE_INITIAL, &tensors);
        let (_, back) = decode_tensor_file(&buf).unwrap();
        let restored = model_from_tensors(&back).unwrap();
        assert_eq!(restored, model);
    }

    #[test]
    fn decode_rejects_corruption() {
        let tensors = vec![NamedTensor::scalar("x", 1.0)];
        let mut buf = encode_tensor_file(0, &tensors);
        buf[0] = b'X';
        assert!(matches!(
            decode_tensor_file(&buf),
            Err(Error::Checkpoint(_))
        ));
        let ok = encode_tensor_file(0, &tensors);
        assert!(decode_tensor_file(&ok[..ok.len() - 4]).is_err());
    }

    #[test]
    fn missing_file_is_missing_artifact() {
        let err = read_tensor_file(Path::new("/nonexistent/ckpt.bin"));
        assert!(matches!(err, Err(Error::MissingArtifact(_))));
    }

    #[test]
    fn shape_validation_on_new() {
        assert!(NamedTensor::new("bad", vec![2, 2], vec![1.0]).is_err());
    }
}
