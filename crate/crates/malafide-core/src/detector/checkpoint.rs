//! Versioned binary detector checkpoint. Weights are stored as
//! little-endian f64 bit patterns, so a save/load round trip is bitwise
//! exact.

use std::fs;
use std::path::Path;

use super::layers::Layer;
use super::{ArchitectureId, Detector, DetectorError};
use crate::numcore::Tensor;

const MAGIC: &[u8; 4] = b"MFD1";
const VERSION: u32 = 1;

const TAG_CONV: u8 = 0;
const TAG_RELU: u8 = 1;
const TAG_AVGPOOL2: u8 = 2;
const TAG_GAP: u8 = 3;
const TAG_GMAX: u8 = 4;
const TAG_DENSE: u8 = 5;

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_tensor(out: &mut Vec<u8>, t: &Tensor) {
    for &v in t.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_checkpoint(detector: &Detector) -> Result<Vec<u8>, DetectorError> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    out.push(match detector.architecture_id {
        ArchitectureId::A => 0,
        ArchitectureId::B => 1,
    });
    out.push(detector.frozen() as u8);
    for d in detector.input_shape {
        put_u32(&mut out, d as u32);
    }
    put_u32(&mut out, detector.layers().len() as u32);
    for layer in detector.layers() {
        match layer {
            Layer::Conv { weights, bias } => {
                out.push(TAG_CONV);
                let s = weights.shape();
                put_u32(&mut out, s[0] as u32);
                put_u32(&mut out, s[1] as u32);
                put_u32(&mut out, s[2] as u32);
                put_tensor(&mut out, weights);
                put_tensor(&mut out, bias);
            }
            Layer::Relu => out.push(TAG_RELU),
            Layer::AvgPool2 => out.push(TAG_AVGPOOL2),
            Layer::GlobalAvgPool => out.push(TAG_GAP),
            Layer::GlobalMax => out.push(TAG_GMAX),
            Layer::Dense { weights, bias } => {
                out.push(TAG_DENSE);
                let s = weights.shape();
                put_u32(&mut out, s[0] as u32);
                put_u32(&mut out, s[1] as u32);
                put_tensor(&mut out, weights);
                put_tensor(&mut out, bias);
            }
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn fail(&self, what: &str) -> DetectorError {
        DetectorError::BadCheckpoint {
            offset: self.pos,
            what: what.to_string(),
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], DetectorError> {
        if self.pos + n > self.bytes.len() {
            return Err(self.fail(what));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8, DetectorError> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32, DetectorError> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn tensor(&mut self, shape: &[usize], what: &str) -> Result<Tensor, DetectorError> {
        let n: usize = shape.iter().product();
        let b = self.take(n * 8, what)?;
        let vals: Vec<f64> = b
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Tensor::new(shape, vals).map_err(DetectorError::Numeric)
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Detector, DetectorError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(DetectorError::BadCheckpoint {
            offset: 0,
            what: "bad magic".into(),
        });
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(r.fail(&format!("unsupported version {version}")));
    }
    let arch = match r.u8("architecture")? {
        0 => ArchitectureId::A,
        1 => ArchitectureId::B,
        other => return Err(r.fail(&format!("unknown architecture tag {other}"))),
    };
    let frozen = r.u8("frozen flag")? != 0;
    let input_shape = [
        r.u32("input height")? as usize,
        r.u32("input width")? as usize,
        r.u32("input channels")? as usize,
    ];
    let n_layers = r.u32("layer count")? as usize;
    if n_layers > 256 {
        return Err(r.fail("layer count too large"));
    }
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let layer = match r.u8("layer tag")? {
            TAG_CONV => {
                let cout = r.u32("cout")? as usize;
                let cin = r.u32("cin")? as usize;
                let k = r.u32("kernel size")? as usize;
                if cout * cin * k == 0 || cout > 4096 || cin > 4096 || k > 255 {
                    return Err(r.fail("implausible conv dims"));
                }
                let weights = r.tensor(&[cout, cin, k, k], "conv weights")?;
                let bias = r.tensor(&[cout], "conv bias")?;
                Layer::Conv { weights, bias }
            }
            TAG_RELU => Layer::Relu,
            TAG_AVGPOOL2 => Layer::AvgPool2,
            TAG_GAP => Layer::GlobalAvgPool,
            TAG_GMAX => Layer::GlobalMax,
            TAG_DENSE => {
                let nout = r.u32("dense out")? as usize;
                let nin = r.u32("dense in")? as usize;
                if nout * nin == 0 || nout > 65536 || nin > 65536 {
                    return Err(r.fail("implausible dense dims"));
                }
                let weights = r.tensor(&[nout, nin], "dense weights")?;
                let bias = r.tensor(&[nout], "dense bias")?;
                Layer::Dense { weights, bias }
            }
            other => return Err(r.fail(&format!("unknown layer tag {other}"))),
        };
        layers.push(layer);
    }
    if r.pos != bytes.len() {
        return Err(r.fail("trailing bytes"));
    }
    Ok(Detector::from_parts(arch, input_shape, layers, frozen))
}

pub fn save_detector(detector: &Detector, path: &Path) -> Result<(), DetectorError> {
    let bytes = encode_checkpoint(detector)?;
    fs::write(path, bytes).map_err(|e| DetectorError::Io(path.display().to_string(), e.to_string()))
}

pub fn load_detector(path: &Path) -> Result<Detector, DetectorError> {
    let bytes = fs::read(path)
        .map_err(|e| DetectorError::Io(path.display().to_string(), e.to_string()))?;
    decode_checkpoint(&bytes)
}
