//! Binary network files (`model.bin`) and their JSON manifest (`model.json`).
//!
//! The byte layout is described in `docs/model_format.md`. All integers are
//! little-endian `u32` unless noted, all parameters little-endian `f64`, so a
//! save/load round trip is bit-exact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::nn::{Activation, DiscreteOp, Layer, LayerSpec, Loss, Network};

pub const MAGIC: &[u8; 4] = b"LRAN";
pub const VERSION: u32 = 1;

fn activation_tag(a: Activation) -> u8 {
    Activation::ALL
        .iter()
        .position(|&x| x == a)
        .expect("listed") as u8
}

fn loss_tag(l: Loss) -> u8 {
    Loss::ALL.iter().position(|&x| x == l).expect("listed") as u8
}

fn discrete_tag(d: DiscreteOp) -> (u8, u32) {
    match d {
        DiscreteOp::None => (0, 0),
        DiscreteOp::Signum => (1, 0),
        DiscreteOp::Bernoulli => (2, 0),
        DiscreteOp::Lwta { block_size } => (3, block_size as u32),
        DiscreteOp::Slwta { block_size } => (4, block_size as u32),
    }
}

fn push_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn push_f64s(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_network(net: &Network) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    push_u32(&mut out, VERSION as usize);
    push_u32(&mut out, net.layers.len());
    push_u32(&mut out, net.input_dim());
    for l in &net.layers {
        push_u32(&mut out, l.out_dim());
        push_u32(&mut out, l.in_dim());
        let (dtag, block) = discrete_tag(l.discrete);
        out.push(activation_tag(l.activation));
        out.push(dtag);
        out.extend_from_slice(&block.to_le_bytes());
        out.push(loss_tag(l.loss));
        out.push(l.feedback.is_some() as u8);
        out.extend_from_slice(&l.slope.to_le_bytes());
        push_f64s(&mut out, l.weights.as_slice());
        push_f64s(&mut out, &l.bias);
        if let Some(e) = &l.feedback {
            push_f64s(&mut out, e.as_slice());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    what: &'a str,
}

impl Reader<'_> {
    fn fail(&self, offset: usize, detail: impl Into<String>) -> Error {
        Error::Format {
            what: self.what.to_string(),
            offset: offset as u64,
            detail: detail.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.fail(
                self.bytes.len(),
                format!("file ends early, needed {n} more bytes"),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let len = n
            .checked_mul(8)
            .ok_or_else(|| self.fail(self.pos, "parameter count overflows"))?;
        let b = self.take(len)?;
        Ok(b.chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

pub fn decode_network(bytes: &[u8], what: &str) -> Result<Network> {
    let mut r = Reader {
        bytes,
        pos: 0,
        what,
    };
    if r.take(4)? != MAGIC {
        return Err(r.fail(0, "not a network file (bad magic)"));
    }
    let version = r.u32()?;
    if version != VERSION as usize {
        return Err(r.fail(4, format!("unsupported version {version}")));
    }
    let n_layers = r.u32()?;
    let input_dim = r.u32()?;
    if n_layers == 0 {
        return Err(r.fail(8, "network has no layers"));
    }
    let mut layers = Vec::with_capacity(n_layers.min(1024));
    for _ in 0..n_layers {
        let at = r.pos;
        let out = r.u32()?;
        let inp = r.u32()?;
        let a = r.u8()? as usize;
        let activation = *Activation::ALL
            .get(a)
            .ok_or_else(|| r.fail(at + 8, format!("unknown activation tag {a}")))?;
        let d = r.u8()?;
        let block = r.u32()?;
        let discrete = match d {
            0 => DiscreteOp::None,
            1 => DiscreteOp::Signum,
            2 => DiscreteOp::Bernoulli,
            3 => DiscreteOp::Lwta { block_size: block },
            4 => DiscreteOp::Slwta { block_size: block },
            _ => return Err(r.fail(at + 9, format!("unknown discrete tag {d}"))),
        };
        let l = r.u8()? as usize;
        let loss = *Loss::ALL
            .get(l)
            .ok_or_else(|| r.fail(at + 14, format!("unknown loss tag {l}")))?;
        let has_feedback = match r.u8()? {
            0 => false,
            1 => true,
            f => return Err(r.fail(at + 15, format!("feedback flag {f}"))),
        };
        let slope = f64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
        let weights = Matrix::new(out, inp, r.f64s(out * inp)?)?;
        let bias = r.f64s(out)?;
        let feedback = if has_feedback {
            Some(Matrix::new(inp, out, r.f64s(inp * out)?)?)
        } else {
            None
        };
        layers.push(Layer {
            weights,
            bias,
            activation,
            discrete,
            loss,
            feedback,
            slope,
        });
    }
    if r.pos != bytes.len() {
        return Err(r.fail(r.pos, format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    let specs: Vec<LayerSpec> = layers.iter().map(Layer::spec).collect();
    let mut net = Network::new(input_dim, &specs).map_err(|e| Error::Format {
        what: what.to_string(),
        offset: 0,
        detail: format!("invalid architecture: {e}"),
    })?;
    net.layers = layers;
    net.validate().map_err(|e| Error::Format {
        what: what.to_string(),
        offset: 0,
        detail: format!("invalid architecture: {e}"),
    })?;
    Ok(net)
}

pub fn save_network(net: &Network, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_network(net)).map_err(|e| Error::io(path, e))
}

pub fn load_network(path: impl AsRef<Path>) -> Result<Network> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_network(&bytes, &path.display().to_string())
}

/// Human-readable summary written next to `model.bin`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub input_dim: usize,
    pub layers: Vec<ManifestLayer>,
    pub parameters: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestLayer {
    #[serde(flatten)]
    pub spec: LayerSpec,
    pub slope: f64,
    pub has_feedback: bool,
}

pub fn manifest(net: &Network) -> Manifest {
    Manifest {
        format: String::from_utf8_lossy(MAGIC).into_owned(),
        version: VERSION,
        input_dim: net.input_dim(),
        layers: net
            .layers
            .iter()
            .map(|l| ManifestLayer {
                spec: l.spec(),
                slope: l.slope,
                has_feedback: l.feedback.is_some(),
            })
            .collect(),
        parameters: net.parameters_flat().len(),
    }
}

pub fn write_manifest(net: &Network, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let json = serde_json::to_string_pretty(&manifest(net)).expect("manifest serializes");
    fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
}

/// Errors unless `net` has exactly the architecture `specs` over `input_dim` inputs.
pub fn check_architecture(net: &Network, input_dim: usize, specs: &[LayerSpec]) -> Result<()> {
    if net.input_dim() != input_dim || net.specs() != specs {
        return Err(Error::Config(format!(
            "stored network ({} inputs, {:?}) does not match the configured architecture ({} inputs, {:?})",
            net.input_dim(),
            net.specs().iter().map(|s| s.width).collect::<Vec<_>>(),
            input_dim,
            specs.iter().map(|s| s.width).collect::<Vec<_>>()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{sample_gaussian, Rng};

    fn sample_net() -> Network {
        let specs = [
            LayerSpec::new(8, Activation::Tanh, Loss::LogPenalty)
                .with_discrete(DiscreteOp::Lwta { block_size: 4 }),
            LayerSpec::new(6, Activation::Sigmoid, Loss::L1).with_discrete(DiscreteOp::Bernoulli),
            LayerSpec::new(3, Activation::Softmax, Loss::CrossEntropy),
        ];
        let mut net = Network::new(5, &specs).unwrap();
        let mut rng = Rng::new(1);
        for (i, l) in net.layers.iter_mut().enumerate() {
            l.weights = sample_gaussian(&mut rng, l.out_dim(), l.in_dim(), 0.0, 1.0).unwrap();
            l.bias = sample_gaussian(&mut rng, 1, l.out_dim(), 0.0, 1.0)
                .unwrap()
                .into_vec();
            if i > 0 {
                l.feedback =
                    Some(sample_gaussian(&mut rng, l.in_dim(), l.out_dim(), 0.0, 1.0).unwrap());
            }
        }
        net.layers[1].slope = 1.36;
        net
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let net = sample_net();
        let bytes = encode_network(&net);
        let back = decode_network(&bytes, "mem").unwrap();
        assert_eq!(back, net);
        assert_eq!(encode_network(&back), bytes);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("model.bin");
        let net = sample_net();
        save_network(&net, &p).unwrap();
        assert_eq!(load_network(&p).unwrap(), net);
        write_manifest(&net, dir.path().join("model.json")).unwrap();
        let m: Manifest =
            serde_json::from_str(&fs::read_to_string(dir.path().join("model.json")).unwrap())
                .unwrap();
        assert_eq!(m, manifest(&net));
        assert_eq!(m.layers[0].spec.width, 8);
    }

    #[test]
    fn corruption_is_format_error() {
        let bytes = encode_network(&sample_net());
        assert!(matches!(
            decode_network(&bytes[..bytes.len() - 3], "x"),
            Err(Error::Format { .. })
        ));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            decode_network(&bad, "x"),
            Err(Error::Format { offset: 0, .. })
        ));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode_network(&extra, "x").is_err());
        let mut tag = bytes;
        tag[24] = 200; // activation tag of the first layer
        assert!(matches!(
            decode_network(&tag, "x"),
            Err(Error::Format { offset: 24, .. })
        ));
    }

    #[test]
    fn architecture_check() {
        let net = sample_net();
        assert!(check_architecture(&net, 5, &net.specs()).is_ok());
        let mut other = net.specs();
        other[0].width = 4;
        assert!(check_architecture(&net, 5, &other).is_err());
        assert!(check_architecture(&net, 6, &net.specs()).is_err());
    }
}
