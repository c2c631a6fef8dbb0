use std::rc::Rc;

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::nbody::{Configuration, Topology, Vec3};
use crate::rng;

/// Architecture of a [`ScoreNetwork`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetConfig {
    pub layers: usize,
    pub hidden: usize,
    pub d_h: usize,
    pub topology: Topology,
    /// Bound on each layer's coordinate displacement per incoming edge.
    pub coord_range: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            layers: 3,
            hidden: 64,
            d_h: 2,
            topology: Topology::Chain,
            coord_range: 15.0,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 {
            return Err(Error::config("network.layers", "must be at least 1"));
        }
        if self.hidden == 0 {
            return Err(Error::config("network.hidden", "must be at least 1"));
        }
        if !(self.coord_range > 0.0) {
            return Err(Error::config("network.coord_range", "must be positive"));
        }
        Ok(())
    }

    /// Parameter shapes in storage order.
    pub fn shapes(&self) -> Vec<Vec<usize>> {
        let h = self.hidden;
        let mut s = vec![vec![self.d_h + 1, h], vec![h]];
        for _ in 0..self.layers {
            s.extend([
                vec![h, h],
                vec![h, h],
                vec![3, h],
                vec![h],
                vec![h, h],
                vec![h],
                vec![2 * h, h],
                vec![h],
                vec![h, h],
                vec![h],
                vec![h, 1],
            ]);
        }
        s.extend([vec![h, self.d_h], vec![self.d_h]]);
        s
    }
}

const PER_LAYER: usize = 11;

/// E(3)-equivariant message-passing noise predictor.
///
/// Each layer mixes invariant node states over all ordered pairs using the
/// squared distance, the pair's bond flag and the normalized time, then
/// moves coordinates along the pair displacement vectors. The coordinate
/// output is the net displacement, projected to zero center of mass per graph;
/// the feature output is a linear readout of the final node states.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreNetwork {
    config: NetConfig,
    params: Vec<Tensor>,
}

/// Noise prediction for one configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct EpsPrediction {
    pub x: Vec<Vec3>,
    pub h: Vec<f64>,
}

/// Index tables for a batch of `b` fully connected `n`-body graphs.
pub(crate) struct Graph {
    pub b: usize,
    pub n: usize,
    pub src: Rc<Vec<usize>>,
    pub dst: Rc<Vec<usize>>,
    pub node_graph: Rc<Vec<usize>>,
    pub bonded: Vec<f64>,
}

impl Graph {
    pub fn new(b: usize, n: usize, topology: Topology) -> Self {
        let mut src = Vec::with_capacity(b * n * n.saturating_sub(1));
        let mut dst = Vec::with_capacity(src.capacity());
        let mut bonded = Vec::with_capacity(src.capacity());
        for g in 0..b {
            for i in 0..n {
                for j in 0..n {
                    if i != j {
                        dst.push(g * n + i);
                        src.push(g * n + j);
                        bonded.push(if topology.bonded(i, j) { 1.0 } else { 0.0 });
                    }
                }
            }
        }
        Self {
            b,
            n,
            src: Rc::new(src),
            dst: Rc::new(dst),
            node_graph: Rc::new((0..b * n).map(|i| i / n.max(1)).collect()),
            bonded,
        }
    }

    /// Per-graph mean removal of an `[B·N, 3]` block.
    pub fn project(&self, t: &Tape, x: Var) -> Result<Var> {
        let sums = t.scatter_add_rows(x, self.node_graph.clone(), self.b)?;
        let means = t.scale(sums, 1.0 / self.n as f64)?;
        t.sub(x, t.gather_rows(means, self.node_graph.clone())?)
    }
}

fn tag(layer: usize) -> impl Fn(Error) -> Error {
    move |e| Error::Layer {
        layer,
        source: Box::new(e),
    }
}

impl ScoreNetwork {
    /// Random initialization; coordinate and readout weights start small so the
    /// untrained prediction is close to zero.
    pub fn new(config: NetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut r = rng::stream(seed, "network.init");
        let shapes = config.shapes();
        let last = shapes.len() - 2;
        let params = shapes
            .iter()
            .enumerate()
            .map(|(k, shape)| {
                if shape.len() == 1 {
                    return Tensor::zeros(shape);
                }
                let (fan_in, fan_out) = (shape[0], shape[1]);
                let is_coord = k >= 2 && k < last && (k - 2) % PER_LAYER == PER_LAYER - 1;
                let gain = if is_coord || k == last { 1e-3 } else { 1.0 };
                let s = gain / (fan_in as f64).sqrt();
                Tensor::matrix(fan_in, fan_out, rng::normals(&mut r, fan_in * fan_out).iter().map(|v| v * s).collect())
                    .expect("parameter shape")
            })
            .collect();
        Ok(Self { config, params })
    }

    pub fn from_params(config: NetConfig, params: Vec<Tensor>) -> Result<Self> {
        config.validate()?;
        let shapes = config.shapes();
        if shapes.len() != params.len() || shapes.iter().zip(&params).any(|(s, p)| s.as_slice() != p.shape()) {
            return Err(Error::Schema("parameter tensors do not match the declared architecture".into()));
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: Vec<Tensor>) -> Result<()> {
        *self = Self::from_params(self.config, params)?;
        Ok(())
    }

    pub fn n_params(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn same_architecture(&self, other: &ScoreNetwork) -> bool {
        self.config == other.config
    }

    /// Registers the parameters on `t` (as trainable leaves or constants).
    pub fn bind(&self, t: &Tape, trainable: bool) -> Result<Vec<Var>> {
        self.params
            .iter()
            .map(|p| if trainable { t.param(p.clone()) } else { t.constant(p.clone()) })
            .collect()
    }

    /// Forward pass on a batch laid out as `x: [B·N, 3]`, `h: [B·N, d_h]` with
    /// per-graph normalized times. Returns `(ε_x, ε_h)` with `ε_x` CoM-projected.
    pub(crate) fn forward(
        &self,
        t: &Tape,
        w: &[Var],
        graph: &Graph,
        x_in: Var,
        h_in: Var,
        times: &[f64],
    ) -> Result<(Var, Var)> {
        let c = &self.config;
        let bn = graph.b * graph.n;
        let node_t: Vec<f64> = (0..bn).map(|i| times[graph.node_graph[i]]).collect();
        let edge_t: Vec<f64> = graph.dst.iter().map(|&i| times[graph.node_graph[i]]).collect();

        let mut h = {
            let tt = t.constant(Tensor::column(node_t))?;
            let inp = t.concat_cols(&[h_in, tt])?;
            t.add_row(t.matmul(inp, w[0])?, w[1])
        }
        .map_err(tag(0))?;
        let mut x = x_in;
        let edge_t = t.constant(Tensor::column(edge_t))?;
        let bonded = t.constant(Tensor::column(graph.bonded.clone()))?;
        let step = c.coord_range / c.layers as f64;

        for l in 0..c.layers {
            let p = &w[2 + l * PER_LAYER..2 + (l + 1) * PER_LAYER];
            let layer = || -> Result<(Var, Var)> {
                let diff = t.sub(t.gather_rows(x, graph.dst.clone())?, t.gather_rows(x, graph.src.clone())?)?;
                let r2 = t.row_sums(t.square(diff)?)?;
                let edge_in = t.concat_cols(&[r2, bonded, edge_t])?;
                let pre = t.add(
                    t.add(
                        t.gather_rows(t.matmul(h, p[0])?, graph.dst.clone())?,
                        t.gather_rows(t.matmul(h, p[1])?, graph.src.clone())?,
                    )?,
                    t.add_row(t.matmul(edge_in, p[2])?, p[3])?,
                )?;
                let m = t.silu(t.add_row(t.matmul(t.silu(pre)?, p[4])?, p[5])?)?;
                let agg = t.scatter_add_rows(m, graph.dst.clone(), bn)?;
                let node_in = t.concat_cols(&[h, agg])?;
                let upd = t.add_row(t.matmul(t.silu(t.add_row(t.matmul(node_in, p[6])?, p[7])?)?, p[8])?, p[9])?;
                let h_next = t.add(h, upd)?;
                let gate = t.tanh(t.matmul(m, p[10])?)?;
                let norm = t.shift(t.sqrt(t.shift(r2, 1e-8)?)?, 1.0)?;
                let coef = t.mul(gate, t.recip(norm)?)?;
                let shift = t.scatter_add_rows(t.mul_col(diff, coef)?, graph.dst.clone(), bn)?;
                let x_next = t.add(x, t.scale(shift, step)?)?;
                Ok((h_next, x_next))
            };
            let (hn, xn) = layer().map_err(tag(l + 1))?;
            h = hn;
            x = xn;
        }
        let k = w.len();
        let out = || -> Result<(Var, Var)> {
            let eps_x = graph.project(t, t.sub(x, x_in)?)?;
            let eps_h = t.add_row(t.matmul(h, w[k - 2])?, w[k - 1])?;
            Ok((eps_x, eps_h))
        };
        out().map_err(tag(c.layers + 1))
    }

    /// Lays out a batch of configurations as tape constants.
    pub(crate) fn inputs(&self, t: &Tape, zs: &[&Configuration]) -> Result<(Graph, Var, Var)> {
        let n = zs.first().map(|z| z.n_bodies()).unwrap_or(0);
        if zs.iter().any(|z| z.n_bodies() != n || z.d_h() != self.config.d_h) {
            return Err(Error::contract(format!(
                "batch must share body count and d_h = {}",
                self.config.d_h
            )));
        }
        let graph = Graph::new(zs.len(), n, self.config.topology);
        let xs: Vec<f64> = zs.iter().flat_map(|z| z.positions().iter().flatten().copied()).collect();
        let hs: Vec<f64> = zs.iter().flat_map(|z| z.features().iter().copied()).collect();
        let x = t.constant(Tensor::matrix(zs.len() * n, 3, xs)?)?;
        let h = t.constant(Tensor::matrix(zs.len() * n, self.config.d_h, hs)?)?;
        Ok((graph, x, h))
    }

    /// Noise prediction `ε̂(z_t, t)` for each configuration; `t_frac` is `t/T`.
    pub fn predict_eps(&self, zs: &[&Configuration], t_frac: &[f64]) -> Result<Vec<EpsPrediction>> {
        if zs.is_empty() {
            return Ok(Vec::new());
        }
        let t = Tape::new();
        let w = self.bind(&t, false)?;
        let (graph, x, h) = self.inputs(&t, zs)?;
        let (ex, eh) = self.forward(&t, &w, &graph, x, h, t_frac)?;
        Ok(split(&t.value(ex), &t.value(eh), zs.len(), graph.n, self.config.d_h))
    }
}

pub(crate) fn split(ex: &Tensor, eh: &Tensor, b: usize, n: usize, d_h: usize) -> Vec<EpsPrediction> {
    (0..b)
        .map(|g| EpsPrediction {
            x: ex.data()[g * n * 3..(g + 1) * n * 3]
                .chunks(3)
                .map(|c| [c[0], c[1], c[2]])
                .collect(),
            h: eh.data()[g * n * d_h..(g + 1) * n * d_h].to_vec(),
        })
        .collect()
}
