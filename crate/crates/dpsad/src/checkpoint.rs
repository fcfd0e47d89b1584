//! Binary key/value container for model checkpoints and resume state.
//!
//! Layout: the 8-byte magic, a `u32` entry count, then per entry a `u16`
//! key length, the key bytes, a one-byte tag and the payload. Integers and
//! floats are little-endian, so files round-trip bit for bit.

use std::path::Path;

use dpsad_core::diffusion::{Conditioning, Denoiser, NoiseSchedule};
use dpsad_core::nn::{MlpArch, ParamSet};
use dpsad_core::optim::OptState;
use dpsad_core::rng::StreamState;
use dpsad_core::tensor::Tensor;
use dpsad_core::training::Discriminator;

use crate::{CliError, CliResult};

pub const MAGIC: &[u8; 8] = b"DPSADCK1";

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Str(String),
    U64(u64),
    F64(f64),
    Tensor(Tensor),
    Stream(StreamState),
}

impl Value {
    fn tag(&self) -> u8 {
        match self {
            Value::Str(_) => 1,
            Value::U64(_) => 2,
            Value::F64(_) => 3,
            Value::Tensor(_) => 4,
            Value::Stream(_) => 5,
        }
    }
}

/// Ordered entries; keys are unique.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Container {
    entries: Vec<(String, Value)>,
}

fn bad(msg: impl Into<String>) -> CliError {
    CliError::usage(format!("corrupt checkpoint: {}", msg.into()))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> CliResult<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| bad("truncated"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> CliResult<[u8; N]> {
        Ok(self.take(N)?.try_into().unwrap())
    }

    fn u16(&mut self) -> CliResult<u16> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    fn u32(&mut self) -> CliResult<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> CliResult<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn f64(&mut self) -> CliResult<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }
}

impl Container {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn put(&mut self, key: impl Into<String>, value: Value) {
        let key = key.into();
        assert!(key.len() <= u16::MAX as usize, "checkpoint key too long");
        match self.entries.iter_mut().find(|(k, _)| *k == key) {
            Some(slot) => slot.1 = value,
            None => self.entries.push((key, value)),
        }
    }

    pub fn put_str(&mut self, key: &str, v: &str) {
        self.put(key, Value::Str(v.to_string()));
    }

    pub fn put_u64(&mut self, key: &str, v: u64) {
        self.put(key, Value::U64(v));
    }

    pub fn put_f64(&mut self, key: &str, v: f64) {
        self.put(key, Value::F64(v));
    }

    pub fn get(&self, key: &str) -> CliResult<&Value> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v).ok_or_else(|| bad(format!("missing '{key}'")))
    }

    pub fn has(&self, key: &str) -> bool {
        self.entries.iter().any(|(k, _)| k == key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(k, _)| k.as_str())
    }

    pub fn str(&self, key: &str) -> CliResult<&str> {
        match self.get(key)? {
            Value::Str(s) => Ok(s),
            _ => Err(bad(format!("'{key}' is not a string"))),
        }
    }

    pub fn u64(&self, key: &str) -> CliResult<u64> {
        match self.get(key)? {
            Value::U64(v) => Ok(*v),
            _ => Err(bad(format!("'{key}' is not an integer"))),
        }
    }

    pub fn f64(&self, key: &str) -> CliResult<f64> {
        match self.get(key)? {
            Value::F64(v) => Ok(*v),
            _ => Err(bad(format!("'{key}' is not a float"))),
        }
    }

    pub fn tensor(&self, key: &str) -> CliResult<&Tensor> {
        match self.get(key)? {
            Value::Tensor(t) => Ok(t),
            _ => Err(bad(format!("'{key}' is not a tensor"))),
        }
    }

    pub fn stream(&self, key: &str) -> CliResult<StreamState> {
        match self.get(key)? {
            Value::Stream(s) => Ok(*s),
            _ => Err(bad(format!("'{key}' is not a stream state"))),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (k, v) in &self.entries {
            out.extend_from_slice(&(k.len() as u16).to_le_bytes());
            out.extend_from_slice(k.as_bytes());
            out.push(v.tag());
            match v {
                Value::Str(s) => {
                    out.extend_from_slice(&(s.len() as u64).to_le_bytes());
                    out.extend_from_slice(s.as_bytes());
                }
                Value::U64(x) => out.extend_from_slice(&x.to_le_bytes()),
                Value::F64(x) => out.extend_from_slice(&x.to_le_bytes()),
                Value::Tensor(t) => {
                    out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
                    for d in t.shape() {
                        out.extend_from_slice(&(*d as u64).to_le_bytes());
                    }
                    for x in t.data() {
                        out.extend_from_slice(&x.to_le_bytes());
                    }
                }
                Value::Stream(s) => {
                    out.extend_from_slice(&s.seed);
                    out.extend_from_slice(&s.stream.to_le_bytes());
                    out.extend_from_slice(&s.word_pos.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> CliResult<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(8).ok() != Some(MAGIC.as_slice()) {
            return Err(CliError::usage("not a checkpoint file (bad magic)"));
        }
        let n = r.u32()?;
        let mut c = Container::new();
        for _ in 0..n {
            let klen = r.u16()? as usize;
            let key = String::from_utf8(r.take(klen)?.to_vec()).map_err(|_| bad("key is not UTF-8"))?;
            let tag = r.take(1)?[0];
            let value = match tag {
                1 => {
                    let len = r.u64()? as usize;
                    Value::Str(String::from_utf8(r.take(len)?.to_vec()).map_err(|_| bad("string is not UTF-8"))?)
                }
                2 => Value::U64(r.u64()?),
                3 => Value::F64(r.f64()?),
                4 => {
                    let rank = r.u32()? as usize;
                    let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<CliResult<Vec<_>>>()?;
                    let len = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| bad("tensor too large"))?;
                    if len.checked_mul(8).is_none_or(|b| b > buf.len()) {
                        return Err(bad("tensor larger than file"));
                    }
                    let data = (0..len).map(|_| r.f64()).collect::<CliResult<Vec<_>>>()?;
                    Value::Tensor(Tensor::new(shape, data).map_err(|e| bad(e.to_string()))?)
                }
                5 => {
                    let seed = r.array::<32>()?;
                    let stream = r.u64()?;
                    let word_pos = u128::from_le_bytes(r.array()?);
                    Value::Stream(StreamState { seed, stream, word_pos })
                }
                t => return Err(bad(format!("unknown tag {t}"))),
            };
            if c.has(&key) {
                return Err(bad(format!("duplicate key '{key}'")));
            }
            c.entries.push((key, value));
        }
        if r.pos != buf.len() {
            return Err(bad("trailing bytes"));
        }
        Ok(c)
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        crate::write_file(path, &self.to_bytes())
    }

    pub fn put_params(&mut self, prefix: &str, params: &ParamSet) {
        self.put_u64(&format!("{prefix}.count"), params.entries().len() as u64);
        for (i, (name, t)) in params.entries().iter().enumerate() {
            self.put_str(&format!("{prefix}.{i}.name"), name);
            self.put(format!("{prefix}.{i}.value"), Value::Tensor(t.clone()));
        }
    }

    pub fn params(&self, prefix: &str) -> CliResult<ParamSet> {
        let n = self.u64(&format!("{prefix}.count"))?;
        let entries = (0..n)
            .map(|i| {
                Ok((
                    self.str(&format!("{prefix}.{i}.name"))?.to_string(),
                    self.tensor(&format!("{prefix}.{i}.value"))?.clone(),
                ))
            })
            .collect::<CliResult<Vec<_>>>()?;
        ParamSet::new(entries).map_err(|e| bad(e.to_string()))
    }

    pub fn put_denoiser(&mut self, prefix: &str, m: &Denoiser) {
        self.put_str(&format!("{prefix}.arch"), &m.arch.describe());
        self.put_u64(&format!("{prefix}.time_dim"), m.cond.time_dim as u64);
        self.put_u64(&format!("{prefix}.num_classes"), m.cond.num_classes as u64);
        self.put_params(&format!("{prefix}.params"), &m.params);
    }

    pub fn denoiser(&self, prefix: &str) -> CliResult<Denoiser> {
        let arch = MlpArch::parse(self.str(&format!("{prefix}.arch"))?).map_err(|e| bad(e.to_string()))?;
        let cond = Conditioning {
            time_dim: self.u64(&format!("{prefix}.time_dim"))? as usize,
            num_classes: self.u64(&format!("{prefix}.num_classes"))? as usize,
        };
        let params = self.params(&format!("{prefix}.params"))?;
        let expected = arch.layer_dims();
        let consistent = arch.input_dim == arch.output_dim + cond.width()
            && params.entries().len() == 2 * expected.len()
            && expected.iter().enumerate().all(|(i, &(fan_in, fan_out))| {
                params.get(&format!("layer{i}.weight")).is_some_and(|w| w.dims2() == (fan_out, fan_in))
                    && params.get(&format!("layer{i}.bias")).is_some_and(|b| b.dims2() == (1, fan_out))
            });
        if !consistent {
            return Err(bad(format!("'{prefix}' parameters do not match its architecture")));
        }
        Ok(Denoiser { arch, params, cond })
    }

    pub fn put_discriminator(&mut self, prefix: &str, d: &Discriminator) {
        self.put_str(&format!("{prefix}.arch"), &d.arch.describe());
        self.put_u64(&format!("{prefix}.data_dim"), d.data_dim as u64);
        self.put_u64(&format!("{prefix}.time_dim"), d.cond.time_dim as u64);
        self.put_u64(&format!("{prefix}.num_classes"), d.cond.num_classes as u64);
        self.put_params(&format!("{prefix}.params"), &d.params);
    }

    pub fn put_schedule(&mut self, s: &NoiseSchedule, beta_start: f64, beta_end: f64) {
        self.put_u64("schedule.steps", s.steps() as u64);
        self.put_f64("schedule.beta_start", beta_start);
        self.put_f64("schedule.beta_end", beta_end);
    }

    pub fn schedule(&self) -> CliResult<(NoiseSchedule, f64, f64)> {
        let steps = self.u64("schedule.steps")? as usize;
        let (b0, b1) = (self.f64("schedule.beta_start")?, self.f64("schedule.beta_end")?);
        Ok((NoiseSchedule::linear(steps, b0, b1).map_err(|e| bad(e.to_string()))?, b0, b1))
    }

    pub fn put_opt(&mut self, prefix: &str, o: &OptState) {
        self.put_u64(&format!("{prefix}.step"), o.step);
        self.put_f64(&format!("{prefix}.base_lr"), o.base_lr);
        self.put_u64(&format!("{prefix}.total_steps"), o.total_steps);
    }

    pub fn opt(&self, prefix: &str) -> CliResult<OptState> {
        Ok(OptState {
            step: self.u64(&format!("{prefix}.step"))?,
            base_lr: self.f64(&format!("{prefix}.base_lr"))?,
            total_steps: self.u64(&format!("{prefix}.total_steps"))?,
        })
    }
}
