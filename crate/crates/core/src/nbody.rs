//! N-body configurations and the Euclidean group acting on them.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::rng::{self, StreamRng};

pub type Vec3 = [f64; 3];

/// State `z = [x, h]`: body positions plus invariant per-body feature channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Configuration {
    positions: Vec<Vec3>,
    features: Vec<f64>,
    d_h: usize,
}

/// Per-body force vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct ForceField(pub Vec<Vec3>);

/// Which body pairs are chemically bonded; used as an invariant edge attribute.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Topology {
    /// Consecutive bodies `(i, i + 1)` are bonded.
    Chain,
    /// No bonds; all pairs are equivalent.
    Unbonded,
}

impl Topology {
    pub fn bonded(self, i: usize, j: usize) -> bool {
        match self {
            Topology::Chain => i.abs_diff(j) == 1,
            Topology::Unbonded => false,
        }
    }

    pub fn code(self) -> u32 {
        match self {
            Topology::Chain => 0,
            Topology::Unbonded => 1,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(Topology::Chain),
            1 => Some(Topology::Unbonded),
            _ => None,
        }
    }
}

/// `x -> R x + t` with `R` orthogonal (reflections allowed).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidMotion {
    rotation: [[f64; 3]; 3],
    translation: Vec3,
}

impl Configuration {
    pub fn new(positions: Vec<Vec3>, features: Vec<f64>, d_h: usize) -> Result<Self> {
        if features.len() != positions.len() * d_h {
            return Err(Error::contract(format!(
                "{} feature values for {} bodies with d_h = {d_h}",
                features.len(),
                positions.len()
            )));
        }
        if positions.iter().flatten().chain(&features).any(|v| !v.is_finite()) {
            return Err(Error::contract("configuration has non-finite entries"));
        }
        Ok(Self {
            positions,
            features,
            d_h,
        })
    }

    pub fn from_positions(positions: Vec<Vec3>) -> Self {
        Self {
            positions,
            features: Vec::new(),
            d_h: 0,
        }
    }

    pub fn n_bodies(&self) -> usize {
        self.positions.len()
    }

    pub fn d_h(&self) -> usize {
        self.d_h
    }

    pub fn positions(&self) -> &[Vec3] {
        &self.positions
    }

    pub fn positions_mut(&mut self) -> &mut [Vec3] {
        &mut self.positions
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn features_mut(&mut self) -> &mut [f64] {
        &mut self.features
    }

    pub fn feature_row(&self, i: usize) -> &[f64] {
        &self.features[i * self.d_h..(i + 1) * self.d_h]
    }

    /// Dimension of the CoM-free state space, `3N - 3 + N·d_h`.
    pub fn subspace_dim(&self) -> usize {
        subspace_dim(self.n_bodies(), self.d_h)
    }

    pub fn com(&self) -> Vec3 {
        mean(&self.positions)
    }

    /// Copy with CoM-projected positions; features are untouched.
    pub fn projected(&self) -> Result<Self> {
        Ok(Self {
            positions: project_com(&self.positions)?,
            features: self.features.clone(),
            d_h: self.d_h,
        })
    }

    pub fn apply(&self, g: &RigidMotion) -> Self {
        Self {
            positions: self.positions.iter().map(|x| g.apply(x)).collect(),
            features: self.features.clone(),
            d_h: self.d_h,
        }
    }

    /// Pairwise distance between bodies `i` and `j`.
    pub fn distance(&self, i: usize, j: usize) -> f64 {
        norm(&sub(&self.positions[i], &self.positions[j]))
    }

    /// Text record: header `N d_h`, then one `idx x y z h_1 .. h_dh` line per body.
    pub fn to_text(&self) -> String {
        let mut s = format!("{} {}\n", self.n_bodies(), self.d_h);
        for (i, x) in self.positions.iter().enumerate() {
            let _ = write!(s, "{i} {} {} {}", x[0], x[1], x[2]);
            for h in self.feature_row(i) {
                let _ = write!(s, " {h}");
            }
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |line: usize, msg: &str| Error::config(format!("line {line}"), msg.to_string());
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'));
        let (hl, header) = lines.next().ok_or_else(|| bad(1, "missing `N d_h` header"))?;
        let head: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| bad(hl + 1, "header must be two integers")))
            .collect::<Result<_>>()?;
        let [n, d_h] = head[..] else {
            return Err(bad(hl + 1, "header must be `N d_h`"));
        };
        let mut positions = vec![[0.0; 3]; n];
        let mut features = vec![0.0; n * d_h];
        let mut seen = vec![false; n];
        for (ln, line) in lines {
            let vals: Vec<&str> = line.split_whitespace().collect();
            if vals.len() != 4 + d_h {
                return Err(bad(ln + 1, &format!("expected {} fields", 4 + d_h)));
            }
            let idx: usize = vals[0].parse().map_err(|_| bad(ln + 1, "bad body index"))?;
            if idx >= n || seen[idx] {
                return Err(bad(ln + 1, "body index out of range or repeated"));
            }
            seen[idx] = true;
            let nums: Vec<f64> = vals[1..]
                .iter()
                .map(|t| t.parse().map_err(|_| bad(ln + 1, "bad number")))
                .collect::<Result<_>>()?;
            positions[idx] = [nums[0], nums[1], nums[2]];
            features[idx * d_h..(idx + 1) * d_h].copy_from_slice(&nums[3..]);
        }
        if seen.iter().any(|s| !s) {
            return Err(bad(0, "missing body records"));
        }
        Self::new(positions, features, d_h)
    }
}

pub fn subspace_dim(n_bodies: usize, d_h: usize) -> usize {
    3 * n_bodies.saturating_sub(1) + n_bodies * d_h
}

fn mean(xs: &[Vec3]) -> Vec3 {
    let n = xs.len().max(1) as f64;
    let mut m = [0.0; 3];
    for x in xs {
        for a in 0..3 {
            m[a] += x[a];
        }
    }
    m.map(|v| v / n)
}

/// Subtracts the per-axis mean so that the positions lie in the zero-CoM subspace.
pub fn project_com(positions: &[Vec3]) -> Result<Vec<Vec3>> {
    if positions.is_empty() {
        return Err(Error::EmptySystem);
    }
    let m = mean(positions);
    Ok(positions.iter().map(|x| sub(x, &m)).collect())
}

pub fn sub(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn dot(a: &Vec3, b: &Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn norm(a: &Vec3) -> f64 {
    dot(a, a).sqrt()
}

impl ForceField {
    pub fn zeros(n: usize) -> Self {
        Self(vec![[0.0; 3]; n])
    }

    pub fn n_bodies(&self) -> usize {
        self.0.len()
    }

    pub fn rows(&self) -> &[Vec3] {
        &self.0
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.0.iter().map(|f| dot(f, f)).sum()
    }

    /// Per-body RMS magnitude `‖F‖_F / √N`.
    pub fn rms(&self) -> f64 {
        if self.0.is_empty() {
            return 0.0;
        }
        (self.frobenius_sq() / self.0.len() as f64).sqrt()
    }

    /// Rescales rows longer than `threshold` onto the threshold sphere.
    pub fn clipped(&self, threshold: f64) -> Result<Self> {
        if !(threshold > 0.0) {
            return Err(Error::config(
                "reward.force_clip_threshold",
                format!("must be positive, got {threshold}"),
            ));
        }
        Ok(Self(
            self.0
                .iter()
                .map(|f| {
                    let n = norm(f);
                    if n > threshold {
                        let s = threshold / n;
                        [f[0] * s, f[1] * s, f[2] * s]
                    } else {
                        *f
                    }
                })
                .collect(),
        ))
    }

    /// Rotates each row by `R` (forces are translation-free vectors).
    pub fn rotated(&self, g: &RigidMotion) -> Self {
        Self(self.0.iter().map(|f| g.rotate(f)).collect())
    }

    /// Flattened inner product.
    pub fn dot(&self, other: &ForceField) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| dot(a, b)).sum()
    }
}

pub fn rms_force(f: &ForceField) -> f64 {
    f.rms()
}

pub fn clip_force(f: &ForceField, threshold: f64) -> Result<ForceField> {
    f.clipped(threshold)
}

impl RigidMotion {
    pub fn new(rotation: [[f64; 3]; 3], translation: Vec3) -> Result<Self> {
        for i in 0..3 {
            for j in 0..3 {
                let rtr: f64 = (0..3).map(|k| rotation[k][i] * rotation[k][j]).sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                if (rtr - expect).abs() > 1e-12 {
                    return Err(Error::contract(format!(
                        "rotation is not orthogonal: (RᵀR)[{i}][{j}] = {rtr}"
                    )));
                }
            }
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.0; 3],
        }
    }

    /// Uniform random orthogonal matrix (Gram-Schmidt on Gaussian columns);
    /// with `allow_reflection` the determinant sign is a fair coin.
    pub fn random(rng: &mut StreamRng, allow_reflection: bool, translation_scale: f64) -> Self {
        let mut cols: [Vec3; 3] = [[0.0; 3]; 3];
        for c in 0..3 {
            let mut v = [rng::normal(rng), rng::normal(rng), rng::normal(rng)];
            for prev in cols.iter().take(c) {
                let p = dot(&v, prev);
                for a in 0..3 {
                    v[a] -= p * prev[a];
                }
            }
            let n = norm(&v);
            cols[c] = v.map(|x| x / n);
        }
        // second Gram-Schmidt pass keeps RᵀR = I at round-off level
        for c in 0..3 {
            let mut v = cols[c];
            for prev in cols.iter().take(c) {
                let p = dot(&v, prev);
                for a in 0..3 {
                    v[a] -= p * prev[a];
                }
            }
            let n = norm(&v);
            cols[c] = v.map(|x| x / n);
        }
        let mut rotation = [[0.0; 3]; 3];
        for r in 0..3 {
            for c in 0..3 {
                rotation[r][c] = cols[c][r];
            }
        }
        let det = determinant(&rotation);
        let want_reflection = allow_reflection && rng::normal(rng) < 0.0;
        if (det < 0.0) != want_reflection {
            for row in rotation.iter_mut() {
                row[2] = -row[2];
            }
        }
        let translation = [
            translation_scale * rng::normal(rng),
            translation_scale * rng::normal(rng),
            translation_scale * rng::normal(rng),
        ];
        Self {
            rotation,
            translation,
        }
    }

    pub fn rotation(&self) -> &[[f64; 3]; 3] {
        &self.rotation
    }

    pub fn translation(&self) -> &Vec3 {
        &self.translation
    }

    pub fn determinant(&self) -> f64 {
        determinant(&self.rotation)
    }

    pub fn rotate(&self, x: &Vec3) -> Vec3 {
        let r = &self.rotation;
        [
            r[0][0] * x[0] + r[0][1] * x[1] + r[0][2] * x[2],
            r[1][0] * x[0] + r[1][1] * x[1] + r[1][2] * x[2],
            r[2][0] * x[0] + r[2][1] * x[1] + r[2][2] * x[2],
        ]
    }

    pub fn apply(&self, x: &Vec3) -> Vec3 {
        let y = self.rotate(x);
        [
            y[0] + self.translation[0],
            y[1] + self.translation[1],
            y[2] + self.translation[2],
        ]
    }

    /// Rotation part only.
    pub fn linear(&self) -> Self {
        Self {
            rotation: self.rotation,
            translation: [0.0; 3],
        }
    }

    /// `self ∘ first`: apply `first`, then `self`.
    pub fn compose(&self, first: &RigidMotion) -> Self {
        let mut rotation = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                rotation[i][j] = (0..3).map(|k| self.rotation[i][k] * first.rotation[k][j]).sum();
            }
        }
        Self {
            rotation,
            translation: self.apply(&first.translation),
        }
    }
}

fn determinant(r: &[[f64; 3]; 3]) -> f64 {
    r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1]) - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
        + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0])
}

pub fn apply_rigid_motion(cfg: &Configuration, g: &RigidMotion) -> Configuration {
    cfg.apply(g)
}
