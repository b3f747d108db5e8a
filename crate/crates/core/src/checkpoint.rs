//! ACNN1 network checkpoints.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! "ACNN1" | u32 version | u32 len + genotype text | u32 len + JSON header
//! | u8 scalar width | u32 tensor count | per tensor: u32 rank, u32 dims, values
//! | u32 BN layer count | per layer: u32 channels, means, variances
//! ```
//!
//! Tensors follow parameter-store order, which is plan order with each head
//! appended as it was created.

use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::builder::{decode, ComponentConfig, HeadLayout, InputShape, Network};
use crate::error::{Error, Result};
use crate::genotype::Genotype;
use crate::harness::Scenario;
use crate::numerics::Tensor;
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 5] = b"ACNN1";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub scenario: Option<Scenario>,
    /// Incremental stage the network was captured after.
    pub stage: Option<usize>,
    pub component: ComponentConfig,
    pub input: InputShape,
    pub num_classes: usize,
    pub layout: HeadLayout,
    pub heads: Vec<Vec<usize>>,
}

pub struct Checkpoint<T> {
    pub header: CheckpointHeader,
    pub network: Network<T>,
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Checkpoint(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_str(out: &mut Vec<u8>, s: &str) -> Result<()> {
    put_u32(out, s.len())?;
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn string(&mut self) -> Result<&'a str> {
        let n = self.u32()?;
        std::str::from_utf8(self.take(n)?).map_err(|e| Error::Checkpoint(e.to_string()))
    }

    fn values<T: Scalar>(&mut self, n: usize, width: usize) -> Result<Vec<T>> {
        let raw = self.take(n.checked_mul(width).ok_or_else(|| Error::Checkpoint("tensor too large".into()))?)?;
        Ok(raw
            .chunks_exact(width)
            .map(|c| match width {
                4 => T::from_f64_lossy(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64),
                _ => T::from_f64_lossy(f64::from_le_bytes(c.try_into().expect("8 bytes"))),
            })
            .collect())
    }
}

fn put_values<T: Scalar>(out: &mut Vec<u8>, values: &[T]) {
    for &v in values {
        out.extend_from_slice(&v.to_le_bytes_vec());
    }
}

pub fn to_bytes<T: Scalar>(net: &Network<T>, scenario: Option<Scenario>, stage: Option<usize>) -> Result<Vec<u8>> {
    let plan = net.plan();
    let header = CheckpointHeader {
        scenario,
        stage,
        component: plan.config.clone(),
        input: plan.input,
        num_classes: plan.num_classes,
        layout: net.layout(),
        heads: net.heads().iter().map(|h| h.classes.clone()).collect(),
    };
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    put_str(&mut out, &plan.genotype.to_string())?;
    put_str(&mut out, &serde_json::to_string(&header)?)?;
    out.push(T::BYTES as u8);
    put_u32(&mut out, net.store().len())?;
    for p in net.store().iter() {
        put_u32(&mut out, p.value.shape().len())?;
        for &d in p.value.shape() {
            put_u32(&mut out, d)?;
        }
        put_values(&mut out, p.value.data());
    }
    put_u32(&mut out, net.bn_stats().len())?;
    for s in net.bn_stats() {
        put_u32(&mut out, s.mean.len())?;
        put_values(&mut out, &s.mean);
        put_values(&mut out, &s.var);
    }
    Ok(out)
}

/// Rebuilds a network from checkpoint bytes, converting the stored scalar
/// width to `T` when they differ.
pub fn from_bytes<T: Scalar>(bytes: &[u8]) -> Result<Checkpoint<T>> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(MAGIC.len())? != MAGIC {
        return Err(Error::Checkpoint("not an ACNN1 checkpoint".into()));
    }
    let version = c.u32()?;
    if version != VERSION as usize {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let genotype: Genotype = c.string()?.parse()?;
    let header: CheckpointHeader = serde_json::from_str(c.string()?)?;
    let width = c.take(1)?[0] as usize;
    if width != 4 && width != 8 {
        return Err(Error::Checkpoint(format!("unsupported scalar width {width}")));
    }
    let plan = decode(&genotype, &header.component, header.input, header.num_classes)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut net = Network::<T>::instantiate_incremental(&plan, header.layout, &mut rng);
    net.restore_heads(&header.heads, &mut rng)?;

    let count = c.u32()?;
    if count != net.store().len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {count} tensors, the architecture needs {}",
            net.store().len()
        )));
    }
    for p in net.store_mut().iter_mut() {
        let rank = c.u32()?;
        let shape = (0..rank).map(|_| c.u32()).collect::<Result<Vec<_>>>()?;
        if shape != p.value.shape() {
            return Err(Error::Checkpoint(format!(
                "{}: stored shape {:?}, expected {:?}",
                p.name,
                shape,
                p.value.shape()
            )));
        }
        p.value = Tensor::new(shape, c.values(p.value.numel(), width)?)?;
    }
    let layers = c.u32()?;
    if layers != net.bn_stats().len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {layers} BN layers, the architecture has {}",
            net.bn_stats().len()
        )));
    }
    for s in net.bn_stats_mut() {
        let ch = c.u32()?;
        if ch != s.mean.len() {
            return Err(Error::Checkpoint(format!("BN layer with {ch} channels, expected {}", s.mean.len())));
        }
        s.mean = c.values(ch, width)?;
        s.var = c.values(ch, width)?;
    }
    if c.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - c.pos)));
    }
    Ok(Checkpoint { header, network: net })
}

pub fn save<T: Scalar>(
    net: &Network<T>,
    scenario: Option<Scenario>,
    stage: Option<usize>,
    path: impl AsRef<Path>,
) -> Result<()> {
    let bytes = to_bytes(net, scenario, stage)?;
    std::fs::File::create(path.as_ref())?.write_all(&bytes)?;
    Ok(())
}

pub fn load<T: Scalar>(path: impl AsRef<Path>) -> Result<Checkpoint<T>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path.as_ref())?.read_to_end(&mut bytes)?;
    from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builder::HeadSelector;

    fn trained_like() -> Network<f32> {
        let g: Genotype = "3,8,0,1,7,7,7,1,7,7,7,7".parse().unwrap();
        let plan = decode(&g, &ComponentConfig::task_il(), InputShape::square(3, 16), 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut net = Network::<f32>::instantiate_incremental(&plan, HeadLayout::PerTask, &mut rng);
        net.attach_head(&[0, 1], &mut rng).unwrap();
        net.attach_head(&[2, 3], &mut rng).unwrap();
        for s in net.bn_stats_mut() {
            s.mean.iter_mut().for_each(|m| *m = 0.25);
            s.var.iter_mut().for_each(|v| *v = 2.0);
        }
        net
    }

    #[test]
    fn round_trip_preserves_outputs() {
        let net = trained_like();
        let bytes = to_bytes(&net, Some(Scenario::TaskIl), Some(1)).unwrap();
        assert_eq!(&bytes[..5], b"ACNN1");
        let back = from_bytes::<f32>(&bytes).unwrap();
        assert_eq!(back.header.stage, Some(1));
        assert_eq!(back.header.heads, vec![vec![0, 1], vec![2, 3]]);
        let x = Tensor::full(&[2, 3, 16, 16], 0.3f32);
        for t in 0..2 {
            assert_eq!(
                net.logits(&x, HeadSelector::Task(t)).unwrap(),
                back.network.logits(&x, HeadSelector::Task(t)).unwrap()
            );
        }
        assert_eq!(to_bytes(&back.network, Some(Scenario::TaskIl), Some(1)).unwrap(), bytes);
    }

    #[test]
    fn rejects_corruption() {
        let bytes = to_bytes(&trained_like(), None, None).unwrap();
        assert!(from_bytes::<f32>(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(from_bytes::<f32>(&bad).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(from_bytes::<f32>(&extra).is_err());
    }

    #[test]
    fn widens_to_f64() {
        let bytes = to_bytes(&trained_like(), None, None).unwrap();
        let wide = from_bytes::<f64>(&bytes).unwrap();
        assert_eq!(wide.network.bn_stats()[0].var[0], 2.0);
    }
}
