//! Binary weight files.
//!
//! Layout (little-endian): magic `MODW`, `u16` version, `u32` parameter
//! tensor count, `u32` buffer tensor count, then each tensor as `u32` name
//! length, UTF-8 name, `u8` dtype tag, `u32` rank, `u64` extents, raw values.
//! Parameters come first, then persistent buffers (batch-norm running
//! statistics).

use std::io::{Read, Write};

use modcnn_tensor::{DType, Element};

use crate::error::{Error, Result};
use crate::nn::{Module, Param, Visitor};

const MAGIC: &[u8; 4] = b"MODW";
const VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct StoredTensor {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<usize>,
    /// Values widened to f64.
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct WeightFile {
    pub params: Vec<StoredTensor>,
    pub buffers: Vec<StoredTensor>,
}

impl WeightFile {
    pub fn param_elements(&self) -> usize {
        self.params.iter().map(|t| t.values.len()).sum()
    }
}

struct Collect<'a, E> {
    file: &'a mut WeightFile,
    _e: std::marker::PhantomData<E>,
}

impl<E: Element> Visitor<E> for Collect<'_, E> {
    fn param(&mut self, p: &mut Param<E>) {
        self.file.params.push(StoredTensor {
            name: p.name().to_string(),
            dtype: E::DTYPE,
            shape: p.shape().to_vec(),
            values: p.data().iter().map(|v| v.as_f64()).collect(),
        });
    }

    fn buffer(&mut self, name: &str, data: &mut Vec<E>) {
        self.file.buffers.push(StoredTensor {
            name: name.to_string(),
            dtype: E::DTYPE,
            shape: vec![data.len()],
            values: data.iter().map(|v| v.as_f64()).collect(),
        });
    }
}

pub fn collect<E: Element>(m: &mut dyn Module<E>) -> WeightFile {
    let mut file = WeightFile::default();
    m.visit(&mut Collect {
        file: &mut file,
        _e: std::marker::PhantomData,
    });
    file
}

fn write_tensor(w: &mut impl Write, t: &StoredTensor) -> std::io::Result<()> {
    w.write_all(&(t.name.len() as u32).to_le_bytes())?;
    w.write_all(t.name.as_bytes())?;
    w.write_all(&[t.dtype.tag()])?;
    w.write_all(&(t.shape.len() as u32).to_le_bytes())?;
    for &d in &t.shape {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(t.values.len() * t.dtype.size_of());
    match t.dtype {
        DType::F32 => f32::write_le(&t.values.iter().map(|&v| v as f32).collect::<Vec<_>>(), &mut buf),
        DType::F64 => f64::write_le(&t.values, &mut buf),
    }
    w.write_all(&buf)
}

/// Serializes every parameter and buffer of `m` in its native dtype.
pub fn save<E: Element>(m: &mut dyn Module<E>, w: &mut impl Write) -> Result<WeightFile> {
    let file = collect(m);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(file.params.len() as u32).to_le_bytes())?;
    w.write_all(&(file.buffers.len() as u32).to_le_bytes())?;
    for t in file.params.iter().chain(&file.buffers) {
        write_tensor(w, t)?;
    }
    Ok(file)
}

struct Reader<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> Reader<R> {
    fn bytes(&mut self, n: usize, what: &str) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.inner.read_exact(&mut buf).map_err(|e| {
            Error::WeightFormat(format!("truncated while reading {what} at offset {}: {e}", self.offset))
        })?;
        self.offset += n as u64;
        Ok(buf)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes(8, what)?.try_into().expect("8 bytes")))
    }

    fn tensor(&mut self) -> Result<StoredTensor> {
        let len = self.u32("name length")? as usize;
        if len > 4096 {
            return Err(Error::WeightFormat(format!("implausible name length {len} at offset {}", self.offset)));
        }
        let name = String::from_utf8(self.bytes(len, "name")?)
            .map_err(|_| Error::WeightFormat(format!("tensor name is not UTF-8 near offset {}", self.offset)))?;
        let tag = self.bytes(1, "dtype")?[0];
        let dtype = DType::from_tag(tag)
            .ok_or_else(|| Error::WeightFormat(format!("{name}: unknown dtype tag {tag}")))?;
        let rank = self.u32("rank")? as usize;
        if rank > 8 {
            return Err(Error::WeightFormat(format!("{name}: implausible rank {rank}")));
        }
        let shape = (0..rank)
            .map(|_| self.u64("extent").map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let numel: usize = shape.iter().product();
        let raw = self.bytes(numel * dtype.size_of(), &format!("{name} values"))?;
        let values = match dtype {
            DType::F32 => f32::read_le(&raw).into_iter().map(f64::from).collect(),
            DType::F64 => f64::read_le(&raw),
        };
        Ok(StoredTensor {
            name,
            dtype,
            shape,
            values,
        })
    }
}

pub fn read(r: impl Read) -> Result<WeightFile> {
    let mut rd = Reader { inner: r, offset: 0 };
    if rd.bytes(4, "magic")? != MAGIC {
        return Err(Error::WeightFormat("bad magic bytes".into()));
    }
    let version = u16::from_le_bytes(rd.bytes(2, "version")?.try_into().expect("2 bytes"));
    if version != VERSION {
        return Err(Error::WeightFormat(format!("unsupported version {version}")));
    }
    let np = rd.u32("parameter count")?;
    let nb = rd.u32("buffer count")?;
    let params = (0..np).map(|_| rd.tensor()).collect::<Result<Vec<_>>>()?;
    let buffers = (0..nb).map(|_| rd.tensor()).collect::<Result<Vec<_>>>()?;
    Ok(WeightFile { params, buffers })
}

struct Apply<'a> {
    file: &'a WeightFile,
    err: Option<Error>,
    seen: usize,
}

impl<'a> Apply<'a> {
    fn find(&mut self, name: &str, shape: &[usize], buffers: bool) -> Option<&'a StoredTensor> {
        let list = if buffers { &self.file.buffers } else { &self.file.params };
        let found = list.iter().find(|t| t.name == name);
        match found {
            None => {
                self.err
                    .get_or_insert_with(|| Error::WeightFormat(format!("missing tensor {name}")));
                None
            }
            Some(t) if t.shape != shape => {
                self.err.get_or_insert_with(|| {
                    Error::WeightFormat(format!("{name}: stored shape {:?}, model expects {shape:?}", t.shape))
                });
                None
            }
            Some(t) => {
                self.seen += 1;
                Some(t)
            }
        }
    }
}

impl<E: Element> Visitor<E> for Apply<'_> {
    fn param(&mut self, p: &mut Param<E>) {
        if self.err.is_some() {
            return;
        }
        let shape = p.shape().to_vec();
        if let Some(t) = self.find(p.name(), &shape, false) {
            let data = t.values.iter().map(|&v| E::of(v)).collect();
            if let Err(e) = p.set_data(data) {
                self.err = Some(e);
            }
        }
    }

    fn buffer(&mut self, name: &str, data: &mut Vec<E>) {
        if self.err.is_some() {
            return;
        }
        if let Some(t) = self.find(name, &[data.len()], true) {
            *data = t.values.iter().map(|&v| E::of(v)).collect();
        }
    }
}

/// Copies stored values into `m`; every model tensor must be present with
/// a matching shape and the file must hold nothing extra.
pub fn load_into<E: Element>(m: &mut dyn Module<E>, file: &WeightFile) -> Result<()> {
    let mut a = Apply {
        file,
        err: None,
        seen: 0,
    };
    m.visit(&mut a);
    if let Some(e) = a.err {
        return Err(e);
    }
    let total = file.params.len() + file.buffers.len();
    if a.seen != total {
        return Err(Error::WeightFormat(format!(
            "file holds {total} tensors but the model uses {}",
            a.seen
        )));
    }
    Ok(())
}
