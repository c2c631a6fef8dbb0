//! Versioned binary checkpoint: header, parameter tensors, schedule tables,
//! optional trainer state. All numbers little-endian.

use std::path::Path;

use super::network::{NetConfig, ScoreNetwork};
use super::schedule::{NoiseSchedule, ScheduleKind};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::nbody::Topology;

const MAGIC: &[u8; 8] = b"EQDIFFCK";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrainerState {
    pub iteration: u64,
    pub root_seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub net: ScoreNetwork,
    pub schedule: NoiseSchedule,
    pub trainer: Option<TrainerState>,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn len(&mut self, v: usize) {
        self.u32(u32::try_from(v).expect("length fits in u32"));
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Schema(format!("checkpoint truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn len(&mut self) -> Result<usize> {
        Ok(self.u32()? as usize)
    }
}

impl Checkpoint {
    pub fn new(net: ScoreNetwork, schedule: NoiseSchedule) -> Self {
        Self {
            net,
            schedule,
            trainer: None,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.u32(VERSION);
        let c = self.net.config();
        w.len(c.layers);
        w.len(c.hidden);
        w.len(c.d_h);
        w.u32(c.topology.code());
        w.f64(c.coord_range);
        let s = &self.schedule;
        w.len(s.steps());
        match s.kind() {
            ScheduleKind::Polynomial2 => {
                w.u32(0);
                w.f64(0.0);
            }
            ScheduleKind::Ou { t_max } => {
                w.u32(1);
                w.f64(t_max);
            }
        }
        w.f64(s.precision());
        w.len(self.net.params().len());
        for p in self.net.params() {
            w.len(p.shape().len());
            for &d in p.shape() {
                w.len(d);
            }
            for &v in p.data() {
                w.f64(v);
            }
        }
        for &a in s.alphas() {
            w.f64(a);
        }
        for &v in s.sigmas() {
            w.f64(v);
        }
        match self.trainer {
            None => w.0.push(0),
            Some(st) => {
                w.0.push(1);
                w.u64(st.iteration);
                w.u64(st.root_seed);
            }
        }
        w.0
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Schema("not a checkpoint file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Schema(format!("unsupported checkpoint version {version}")));
        }
        let layers = r.len()?;
        let hidden = r.len()?;
        let d_h = r.len()?;
        let topo = r.u32()?;
        let topology = Topology::from_code(topo).ok_or_else(|| Error::Schema(format!("unknown topology code {topo}")))?;
        let coord_range = r.f64()?;
        let steps = r.len()?;
        let kind = match (r.u32()?, r.f64()?) {
            (0, _) => ScheduleKind::Polynomial2,
            (1, t_max) => ScheduleKind::Ou { t_max },
            (k, _) => return Err(Error::Schema(format!("unknown schedule kind code {k}"))),
        };
        let precision = r.f64()?;
        let n = r.len()?;
        let mut params = Vec::with_capacity(n.min(1024));
        for _ in 0..n {
            let nd = r.len()?;
            let shape = (0..nd).map(|_| r.len()).collect::<Result<Vec<_>>>()?;
            let count: usize = shape.iter().product();
            let data = (0..count).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            params.push(Tensor::new(shape, data)?);
        }
        let alpha = (0..=steps).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let sigma = (0..=steps).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let trainer = match r.take(1)?[0] {
            0 => None,
            1 => Some(TrainerState {
                iteration: r.u64()?,
                root_seed: r.u64()?,
            }),
            b => return Err(Error::Schema(format!("bad trainer-state flag {b}"))),
        };
        if r.pos != buf.len() {
            return Err(Error::Schema(format!("{} trailing bytes", buf.len() - r.pos)));
        }
        let config = NetConfig {
            layers,
            hidden,
            d_h,
            topology,
            coord_range,
        };
        Ok(Self {
            net: ScoreNetwork::from_params(config, params)?,
            schedule: NoiseSchedule::from_tables(kind, precision, alpha, sigma)?,
            trainer,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
