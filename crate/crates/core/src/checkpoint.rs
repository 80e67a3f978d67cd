//! Binary parameter checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "EBPN1"
//! u32 line count, then per line: u32 byte length + UTF-8 "key=value"
//! per tensor until EOF: u32 name length, name, u32 rank, u64 dims…, f64 data…
//! ```
//!
//! The key=value lines carry the network configuration plus free-form
//! metadata such as the point count the model was trained on.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::net::{EnergyNet, NetConfig};
use crate::tensor::{RunningStats, Tensor};

const MAGIC: &[u8; 5] = b"EBPN1";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub net: EnergyNet,
    pub metadata: Vec<(String, String)>,
}

impl Checkpoint {
    pub fn new(net: EnergyNet) -> Self {
        Checkpoint { net, metadata: Vec::new() }
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.metadata.push((key.to_string(), value.to_string()));
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.metadata.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}

fn join(widths: &[usize]) -> String {
    widths.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

fn parse_widths(key: &str, value: &str) -> Result<Vec<usize>> {
    value
        .split(',')
        .map(|s| s.trim().parse().map_err(|_| Error::parse(format!("bad width {s:?} in {key}"))))
        .collect()
}

pub fn write_checkpoint<W: Write>(out: &mut W, ckpt: &Checkpoint) -> Result<()> {
    let cfg = ckpt.net.config();
    let mut lines = vec![
        format!("encoder_widths={}", join(&cfg.encoder_widths)),
        format!("head_widths={}", join(&cfg.head_widths)),
        format!("use_batch_norm_encoder={}", cfg.use_batch_norm_encoder),
    ];
    lines.extend(ckpt.metadata.iter().map(|(k, v)| format!("{k}={v}")));

    out.write_all(MAGIC)?;
    out.write_all(&(lines.len() as u32).to_le_bytes())?;
    for line in &lines {
        out.write_all(&(line.len() as u32).to_le_bytes())?;
        out.write_all(line.as_bytes())?;
    }

    let mut tensors: Vec<(String, Tensor)> = ckpt
        .net
        .param_names()
        .into_iter()
        .zip(ckpt.net.params().into_iter().cloned())
        .collect();
    for (i, stats) in ckpt.net.running_stats().into_iter().enumerate() {
        if stats.is_populated() {
            let mean = Tensor::vector(stats.mean().to_vec())?;
            let var = Tensor::vector(stats.var().to_vec())?;
            tensors.push((format!("encoder.{i}.bn.running_mean"), mean));
            tensors.push((format!("encoder.{i}.bn.running_var"), var));
        }
    }
    for (name, t) in tensors {
        out.write_all(&(name.len() as u32).to_le_bytes())?;
        out.write_all(name.as_bytes())?;
        out.write_all(&(t.rank() as u32).to_le_bytes())?;
        for &d in t.shape() {
            out.write_all(&(d as u64).to_le_bytes())?;
        }
        for &v in t.data() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::parse("checkpoint truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::parse("invalid UTF-8"))
    }

    fn done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

pub fn read_checkpoint<R: Read>(input: &mut R) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    let mut cur = Cursor { bytes: &bytes, pos: 0 };
    if cur.take(MAGIC.len())? != MAGIC {
        return Err(Error::parse("not a checkpoint (bad magic)"));
    }
    let n_lines = cur.u32()?;
    let mut encoder = None;
    let mut head = None;
    let mut use_bn = None;
    let mut metadata = Vec::new();
    for _ in 0..n_lines {
        let line = cur.string()?;
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::parse(format!("config line without '=': {line:?}")))?;
        match k {
            "encoder_widths" => encoder = Some(parse_widths(k, v)?),
            "head_widths" => head = Some(parse_widths(k, v)?),
            "use_batch_norm_encoder" => {
                use_bn = Some(v.parse().map_err(|_| Error::parse(format!("bad bool {v:?}")))?)
            }
            _ => metadata.push((k.to_string(), v.to_string())),
        }
    }
    let config = NetConfig {
        encoder_widths: encoder.ok_or_else(|| Error::parse("missing encoder_widths"))?,
        head_widths: head.ok_or_else(|| Error::parse("missing head_widths"))?,
        use_batch_norm_encoder: use_bn.ok_or_else(|| Error::parse("missing use_batch_norm_encoder"))?,
    };
    let mut net = EnergyNet::new(config, 0)?;

    let mut loaded: Vec<(String, Tensor)> = Vec::new();
    while !cur.done() {
        let name = cur.string()?;
        let rank = cur.u32()? as usize;
        let dims = (0..rank).map(|_| cur.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let numel = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let numel = numel.ok_or_else(|| Error::parse("tensor too large"))?;
        let raw = cur.take(numel.checked_mul(8).ok_or_else(|| Error::parse("tensor too large"))?)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8"))).collect();
        loaded.push((name, Tensor::new(dims, data)?));
    }

    let names = net.param_names();
    for (name, slot) in names.iter().zip(net.params_mut()) {
        let pos = loaded
            .iter()
            .position(|(n, _)| n == name)
            .ok_or_else(|| Error::parse(format!("checkpoint is missing tensor {name}")))?;
        let (_, t) = loaded.swap_remove(pos);
        if t.shape() != slot.shape() {
            return Err(Error::shape(format!(
                "{name}: checkpoint shape {:?}, config expects {:?}",
                t.shape(),
                slot.shape()
            )));
        }
        *slot = t;
    }
    for i in 0..net.running_stats().len() {
        let mean = loaded.iter().position(|(n, _)| *n == format!("encoder.{i}.bn.running_mean"));
        let Some(mean) = mean else { continue };
        let (_, mean) = loaded.swap_remove(mean);
        let var = loaded
            .iter()
            .position(|(n, _)| *n == format!("encoder.{i}.bn.running_var"))
            .ok_or_else(|| Error::parse(format!("running_var missing for layer {i}")))?;
        let (_, var) = loaded.swap_remove(var);
        net.set_running_stats(i, RunningStats::from_parts(mean.into_data(), var.into_data())?)?;
    }
    if let Some((name, _)) = loaded.first() {
        return Err(Error::parse(format!("unexpected tensor {name} in checkpoint")));
    }
    Ok(Checkpoint { net, metadata })
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, ckpt)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    read_checkpoint(&mut fs::File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::PointCloud;

    fn sample_net() -> EnergyNet {
        let cfg = NetConfig { encoder_widths: vec![4, 6], head_widths: vec![3, 1], use_batch_norm_encoder: true };
        let mut net = EnergyNet::new(cfg, 17).unwrap();
        let cloud = PointCloud::from_flat(&[0.1, 0.2, 0.3, -1.0, 0.5, 2.0, 0.0, 0.0, 1.0]).unwrap();
        net.update_running_stats(&[cloud]).unwrap();
        net
    }

    #[test]
    fn round_trip_is_exact() {
        let ckpt = Checkpoint::new(sample_net()).with("num_points", 128);
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &ckpt).unwrap();
        assert_eq!(&buf[..5], b"EBPN1");
        let back = read_checkpoint(&mut buf.as_slice()).unwrap();
        assert_eq!(back, ckpt);
        assert_eq!(back.get("num_points"), Some("128"));
    }

    #[test]
    fn uncalibrated_round_trip() {
        let cfg = NetConfig { encoder_widths: vec![2], head_widths: vec![1], use_batch_norm_encoder: true };
        let ckpt = Checkpoint::new(EnergyNet::new(cfg, 1).unwrap());
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &ckpt).unwrap();
        let back = read_checkpoint(&mut buf.as_slice()).unwrap();
        assert!(!back.net.is_calibrated());
        assert_eq!(back, ckpt);
    }

    #[test]
    fn rejects_corruption() {
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &Checkpoint::new(sample_net())).unwrap();
        assert!(read_checkpoint(&mut &buf[..buf.len() - 3]).is_err());
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_checkpoint(&mut bad.as_slice()).is_err());
    }

    #[test]
    fn rejects_shape_mismatch() {
        // Claim wider encoder layers than the stored tensors have.
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &Checkpoint::new(sample_net())).unwrap();
        let text = String::from_utf8_lossy(&buf).into_owned();
        let at = text.find("encoder_widths=4,6").unwrap() + "encoder_widths=".len();
        buf[at] = b'5';
        assert!(matches!(read_checkpoint(&mut buf.as_slice()), Err(Error::Shape(_))));
    }
}
