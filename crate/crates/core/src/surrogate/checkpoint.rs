//! Weight checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic "LTCK" | version u32 | real width u32 (4 or 8)
//! ModalityDims: 7 × u32
//! lambda_adv f64 | lambda_cyc f64 | frozen u8
//! network count u32, then per network:
//!   name length u32 | name bytes
//!   layer count u32 | widths (layers + 1) × u32
//!   per layer: activation code u8 | slope f64
//!   init seed u64 | parameter count u64 | parameters
//! ```

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{Activation, MlpSpec, Real};
use crate::surrogate::{CycleGanModel, ModalityDims, Network, SurrogateConfig};

const MAGIC: &[u8; 4] = b"LTCK";
const VERSION: u32 = 1;

pub fn encode_checkpoint<T: Real>(model: &CycleGanModel<T>) -> Vec<u8> {
    let cfg = model.config();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(T::BYTES as u32).to_le_bytes());
    for v in cfg.dims.to_u32s() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&cfg.lambda_adv.to_le_bytes());
    out.extend_from_slice(&cfg.lambda_cyc.to_le_bytes());
    out.push(model.is_autoencoder_frozen() as u8);
    out.extend_from_slice(&(Network::ALL.len() as u32).to_le_bytes());
    for n in Network::ALL {
        let net = model.network(n);
        let spec = net.spec();
        let name = n.name().as_bytes();
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name);
        out.extend_from_slice(&(spec.num_layers() as u32).to_le_bytes());
        for &w in &spec.layer_widths {
            out.extend_from_slice(&(w as u32).to_le_bytes());
        }
        for a in &spec.activations {
            let (code, slope) = a.code();
            out.push(code);
            out.extend_from_slice(&slope.to_le_bytes());
        }
        out.extend_from_slice(&spec.init_seed.to_le_bytes());
        let blob = net.params().as_slice();
        out.extend_from_slice(&(blob.len() as u64).to_le_bytes());
        for &v in blob {
            v.write_le(&mut out);
        }
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Contract(format!(
                "checkpoint truncated at byte {}",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
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

/// Decodes a checkpoint. Hidden widths and activations come from the file;
/// fields not stored (optimizer hyperparameters, eval weights) take the
/// values of `base`.
pub fn decode_checkpoint<T: Real>(
    bytes: &[u8],
    base: &SurrogateConfig,
) -> Result<CycleGanModel<T>> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    if c.take(4)? != MAGIC {
        return Err(Error::Contract("not a checkpoint (bad magic)".into()));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(Error::Contract(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let width = c.u32()? as usize;
    if width != T::BYTES {
        return Err(Error::Contract(format!(
            "checkpoint stores {width}-byte reals, reader expects {}",
            T::BYTES
        )));
    }
    let mut d = [0u32; 7];
    for v in d.iter_mut() {
        *v = c.u32()?;
    }
    let dims = ModalityDims::from_u32s(d);
    let lambda_adv = c.f64()?;
    let lambda_cyc = c.f64()?;
    let frozen = c.u8()? != 0;
    let count = c.u32()? as usize;
    let mut specs = Vec::with_capacity(count);
    let mut blobs = Vec::with_capacity(count);
    for _ in 0..count {
        let len = c.u32()? as usize;
        let name = std::str::from_utf8(c.take(len)?)
            .map_err(|_| Error::Contract("network name is not utf-8".into()))?;
        let net = Network::from_name(name)
            .ok_or_else(|| Error::Contract(format!("unknown network {name:?}")))?;
        let layers = c.u32()? as usize;
        let widths = (0..=layers)
            .map(|_| c.u32().map(|w| w as usize))
            .collect::<Result<Vec<_>>>()?;
        let mut acts = Vec::with_capacity(layers);
        for _ in 0..layers {
            let code = c.u8()?;
            let slope = c.f64()?;
            acts.push(
                Activation::from_code(code, slope)
                    .ok_or_else(|| Error::Contract(format!("bad activation code {code}")))?,
            );
        }
        let seed = c.u64()?;
        let n = c.u64()? as usize;
        let raw = c.take(n * T::BYTES)?;
        let blob: Vec<T> = raw.chunks_exact(T::BYTES).map(T::read_le).collect();
        specs.push((net, MlpSpec::new(widths, acts, seed)));
        blobs.push((net, blob));
    }
    if c.pos != bytes.len() {
        return Err(Error::Contract("trailing bytes after checkpoint".into()));
    }

    let hidden = |n: Network| -> Vec<usize> {
        specs
            .iter()
            .find(|(k, _)| *k == n)
            .map(|(_, s)| s.layer_widths[1..s.layer_widths.len() - 1].to_vec())
            .unwrap_or_default()
    };
    let mut config = SurrogateConfig {
        dims,
        encoder_hidden: hidden(Network::Encoder),
        forward_hidden: hidden(Network::Forward),
        inverse_hidden: hidden(Network::Inverse),
        discriminator_hidden: hidden(Network::Discriminator),
        lambda_adv,
        lambda_cyc,
        ..base.clone()
    };
    if let Some((_, s)) = specs.iter().find(|(k, _)| *k == Network::Forward) {
        if let Some(&a) = s.activations.first() {
            if s.activations.len() > 1 {
                config.hidden_activation = a;
            }
        }
    }
    let mut model = CycleGanModel::from_blobs(config, Vec::new(), frozen)?;
    for ((net, spec), (_, blob)) in specs.into_iter().zip(blobs) {
        let params = crate::nn::MlpParams::unflatten(&spec.layer_widths, blob)?;
        *model.network_mut(net) = crate::nn::Mlp::with_params(spec, params)?;
    }
    Ok(model)
}

pub fn save_checkpoint<T: Real>(model: &CycleGanModel<T>, path: &Path) -> Result<()> {
    let bytes = encode_checkpoint(model);
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Real>(path: &Path, base: &SurrogateConfig) -> Result<CycleGanModel<T>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, base)
}
