//! Sinusoidal MLP on a periodic 2-D coordinate lattice.
//!
//! Coordinates `(u, v) in [0, 1)^2` pass through a fixed integer-frequency
//! Fourier embedding, so the network is exactly periodic in both axes (a
//! torus). Hidden layers use `sin` activations; the output layer is affine.

use std::f64::consts::TAU;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::{DiffRep, View, ViewDistribution};
use crate::error::{check_dim, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SirenConfig {
    /// Number of embedding frequencies (features = 2 * n_freq).
    pub n_freq: usize,
    pub hidden: Vec<usize>,
    /// Values per lattice site.
    pub channels: usize,
    /// Frequency multiplier of the first hidden layer.
    pub omega: f64,
}

impl Default for SirenConfig {
    fn default() -> Self {
        Self {
            n_freq: 16,
            hidden: vec![32, 32],
            channels: 1,
            omega: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Geometry {
    /// One view covering the whole `rows x cols` lattice.
    Grid { rows: usize, cols: usize },
    /// Wrap-around windows `view_cols` wide over a `rows x cols` lattice.
    Panorama {
        rows: usize,
        cols: usize,
        view_cols: usize,
    },
}

impl Geometry {
    fn rows_cols(&self) -> (usize, usize) {
        match *self {
            Geometry::Grid { rows, cols } | Geometry::Panorama { rows, cols, .. } => (rows, cols),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SirenRep {
    config: SirenConfig,
    geometry: Geometry,
    freqs: Vec<(f64, f64)>,
    /// (fan_out, fan_in) per layer, output layer last.
    layers: Vec<(usize, usize)>,
    offsets: Vec<usize>,
    param_dim: usize,
}

/// Integer frequency pairs, lowest first, one per +/- pair.
fn embedding_frequencies(n: usize, one_dimensional: bool) -> Vec<(f64, f64)> {
    if one_dimensional {
        return (1..=n).map(|k| (k as f64, 0.0)).collect();
    }
    let mut out = Vec::with_capacity(n);
    let mut radius = 1i64;
    while out.len() < n {
        for a in -radius..=radius {
            for b in -radius..=radius {
                if a.abs().max(b.abs()) != radius {
                    continue;
                }
                if a > 0 || (a == 0 && b > 0) {
                    out.push((a as f64, b as f64));
                }
            }
        }
        radius += 1;
    }
    out.truncate(n);
    out
}

struct Cache {
    /// Activations h_0 (features) .. h_H (last hidden).
    acts: Vec<Vec<f64>>,
    /// Pre-activations of the hidden layers.
    pre: Vec<Vec<f64>>,
}

impl SirenRep {
    pub fn new(config: SirenConfig, geometry: Geometry) -> Result<Self> {
        let (rows, cols) = geometry.rows_cols();
        if rows == 0 || cols == 0 {
            return Err(Error::Parameter("SIREN lattice must be non-empty".into()));
        }
        if let Geometry::Panorama { view_cols, .. } = geometry {
            if view_cols == 0 || view_cols > cols || cols % view_cols != 0 {
                return Err(Error::Parameter(format!(
                    "panorama view width {view_cols} must divide lattice width {cols}"
                )));
            }
        }
        if config.n_freq == 0 || config.channels == 0 || config.hidden.contains(&0) {
            return Err(Error::Parameter("SIREN sizes must be positive".into()));
        }
        if !(config.omega > 0.0 && config.omega.is_finite()) {
            return Err(Error::Parameter("SIREN omega must be positive".into()));
        }
        let freqs = embedding_frequencies(config.n_freq, rows == 1);
        let mut layers = Vec::new();
        let mut fan_in = 2 * config.n_freq;
        for &h in &config.hidden {
            layers.push((h, fan_in));
            fan_in = h;
        }
        layers.push((config.channels, fan_in));
        let mut offsets = Vec::with_capacity(layers.len());
        let mut total = 0;
        for &(o, i) in &layers {
            offsets.push(total);
            total += o * i + o;
        }
        Ok(Self {
            config,
            geometry,
            freqs,
            layers,
            offsets,
            param_dim: total,
        })
    }

    pub fn config(&self) -> &SirenConfig {
        &self.config
    }

    pub fn geometry(&self) -> Geometry {
        self.geometry
    }

    fn weight<'a>(&self, theta: &'a [f64], l: usize) -> &'a [f64] {
        let (o, i) = self.layers[l];
        &theta[self.offsets[l]..self.offsets[l] + o * i]
    }

    fn bias<'a>(&self, theta: &'a [f64], l: usize) -> &'a [f64] {
        let (o, i) = self.layers[l];
        let s = self.offsets[l] + o * i;
        &theta[s..s + o]
    }

    fn features(&self, u: f64, v: f64) -> Vec<f64> {
        let n = self.freqs.len();
        let mut f = vec![0.0; 2 * n];
        for (k, &(a, b)) in self.freqs.iter().enumerate() {
            let phase = TAU * (a * u + b * v);
            f[k] = phase.sin();
            f[n + k] = phase.cos();
        }
        f
    }

    fn layer_scale(&self, l: usize) -> f64 {
        if l == 0 {
            self.config.omega
        } else {
            1.0
        }
    }

    fn forward(&self, theta: &[f64], u: f64, v: f64) -> (Vec<f64>, Cache) {
        let hidden = self.layers.len() - 1;
        let mut acts = Vec::with_capacity(hidden + 1);
        let mut pre = Vec::with_capacity(hidden);
        acts.push(self.features(u, v));
        for l in 0..hidden {
            let (o, i) = self.layers[l];
            let w = self.weight(theta, l);
            let b = self.bias(theta, l);
            let s = self.layer_scale(l);
            let input = &acts[l];
            let z: Vec<f64> = (0..o)
                .map(|r| s * (dot_row(&w[r * i..(r + 1) * i], input) + b[r]))
                .collect();
            acts.push(z.iter().map(|x| x.sin()).collect());
            pre.push(z);
        }
        let (o, i) = self.layers[hidden];
        let w = self.weight(theta, hidden);
        let b = self.bias(theta, hidden);
        let last = &acts[hidden];
        let out = (0..o).map(|r| dot_row(&w[r * i..(r + 1) * i], last) + b[r]).collect();
        (out, Cache { acts, pre })
    }

    fn tangent(&self, theta: &[f64], cache: &Cache, dtheta: &[f64]) -> Vec<f64> {
        let hidden = self.layers.len() - 1;
        // tangent of h_0 is zero: the embedding has no parameters
        let mut dh = vec![0.0; cache.acts[0].len()];
        for l in 0..=hidden {
            let (o, i) = self.layers[l];
            let w = self.weight(theta, l);
            let dw = self.weight(dtheta, l);
            let db = self.bias(dtheta, l);
            let h = &cache.acts[l];
            let mut dz: Vec<f64> = (0..o)
                .map(|r| {
                    dot_row(&w[r * i..(r + 1) * i], &dh) + dot_row(&dw[r * i..(r + 1) * i], h) + db[r]
                })
                .collect();
            if l == hidden {
                return dz;
            }
            let s = self.layer_scale(l);
            for (d, z) in dz.iter_mut().zip(&cache.pre[l]) {
                *d *= s * z.cos();
            }
            dh = dz;
        }
        unreachable!("output layer returns")
    }

    fn backprop(&self, theta: &[f64], cache: &Cache, gout: &[f64], grad: &mut [f64]) {
        let hidden = self.layers.len() - 1;
        let mut g = gout.to_vec();
        for l in (0..=hidden).rev() {
            let (o, i) = self.layers[l];
            if l < hidden {
                let s = self.layer_scale(l);
                for (gz, z) in g.iter_mut().zip(&cache.pre[l]) {
                    *gz *= s * z.cos();
                }
            }
            let h = &cache.acts[l];
            let off = self.offsets[l];
            for r in 0..o {
                let row = &mut grad[off + r * i..off + (r + 1) * i];
                for (gw, hv) in row.iter_mut().zip(h) {
                    *gw += g[r] * hv;
                }
                grad[off + o * i + r] += g[r];
            }
            if l > 0 {
                let w = self.weight(theta, l);
                let mut gh = vec![0.0; i];
                for r in 0..o {
                    for (c, ghv) in gh.iter_mut().enumerate() {
                        *ghv += w[r * i + c] * g[r];
                    }
                }
                g = gh;
            }
        }
    }

    /// Network output at an arbitrary coordinate.
    pub fn render_point(&self, theta: &[f64], u: f64, v: f64) -> Result<Vec<f64>> {
        check_dim("SIREN parameters", self.param_dim, theta.len())?;
        Ok(self.forward(theta, u.rem_euclid(1.0), v.rem_euclid(1.0)).0)
    }

    fn start_col(&self, origin: f64, cols: usize) -> usize {
        ((origin.rem_euclid(1.0) * cols as f64).round() as usize) % cols
    }

    /// Lattice cells `(row, col)` a view covers, in render order.
    fn cells(&self, view: &View) -> Result<Vec<(usize, usize)>> {
        match (self.geometry, view) {
            (Geometry::Grid { rows, cols }, View::Whole) => Ok((0..rows)
                .flat_map(|r| (0..cols).map(move |c| (r, c)))
                .collect()),
            (
                Geometry::Panorama {
                    rows,
                    cols,
                    view_cols,
                },
                View::Window { origin },
            ) => {
                let start = self.start_col(*origin, cols);
                Ok((0..rows)
                    .flat_map(|r| (0..view_cols).map(move |j| (r, (start + j) % cols)))
                    .collect())
            }
            _ => Err(Error::Parameter(format!(
                "view {view:?} does not match geometry {:?}",
                self.geometry
            ))),
        }
    }

    fn coords(&self, cell: (usize, usize)) -> (f64, f64) {
        let (rows, cols) = self.geometry.rows_cols();
        (cell.1 as f64 / cols as f64, cell.0 as f64 / rows as f64)
    }

    fn check_theta(&self, theta: &[f64]) -> Result<()> {
        check_dim("SIREN parameters", self.param_dim, theta.len())
    }
}

fn dot_row(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl DiffRep for SirenRep {
    fn name(&self) -> &'static str {
        "siren"
    }

    fn param_dim(&self) -> usize {
        self.param_dim
    }

    fn output_dim(&self) -> usize {
        let (rows, cols) = self.geometry.rows_cols();
        let width = match self.geometry {
            Geometry::Grid { .. } => cols,
            Geometry::Panorama { view_cols, .. } => view_cols,
        };
        rows * width * self.config.channels
    }

    fn lattice_size(&self) -> usize {
        let (rows, cols) = self.geometry.rows_cols();
        rows * cols * self.config.channels
    }

    fn view_distribution(&self) -> ViewDistribution {
        match self.geometry {
            Geometry::Grid { .. } => ViewDistribution::Singleton,
            Geometry::Panorama {
                cols, view_cols, ..
            } => ViewDistribution::Panorama {
                aspect_ratio: cols / view_cols,
            },
        }
    }

    fn sites(&self, view: &View) -> Result<Vec<usize>> {
        let (_, cols) = self.geometry.rows_cols();
        let c = self.config.channels;
        Ok(self
            .cells(view)?
            .into_iter()
            .flat_map(|(r, col)| (0..c).map(move |ch| (r * cols + col) * c + ch))
            .collect())
    }

    fn render(&self, theta: &[f64], view: &View) -> Result<Vec<f64>> {
        self.check_theta(theta)?;
        let mut out = Vec::with_capacity(self.output_dim());
        for cell in self.cells(view)? {
            let (u, v) = self.coords(cell);
            out.extend(self.forward(theta, u, v).0);
        }
        Ok(out)
    }

    fn jvp(&self, theta: &[f64], view: &View, dtheta: &[f64]) -> Result<Vec<f64>> {
        self.check_theta(theta)?;
        check_dim("SIREN tangent", self.param_dim, dtheta.len())?;
        let mut out = Vec::with_capacity(self.output_dim());
        for cell in self.cells(view)? {
            let (u, v) = self.coords(cell);
            let (_, cache) = self.forward(theta, u, v);
            out.extend(self.tangent(theta, &cache, dtheta));
        }
        Ok(out)
    }

    fn vjp(&self, theta: &[f64], view: &View, w: &[f64]) -> Result<Vec<f64>> {
        self.check_theta(theta)?;
        check_dim("SIREN cotangent", self.output_dim(), w.len())?;
        let c = self.config.channels;
        let mut grad = vec![0.0; self.param_dim];
        for (k, cell) in self.cells(view)?.into_iter().enumerate() {
            let (u, v) = self.coords(cell);
            let (_, cache) = self.forward(theta, u, v);
            self.backprop(theta, &cache, &w[k * c..(k + 1) * c], &mut grad);
        }
        Ok(grad)
    }

    fn render_lattice(&self, theta: &[f64]) -> Result<Vec<f64>> {
        self.check_theta(theta)?;
        let (rows, cols) = self.geometry.rows_cols();
        let mut out = Vec::with_capacity(self.lattice_size());
        for r in 0..rows {
            for col in 0..cols {
                let (u, v) = self.coords((r, col));
                out.extend(self.forward(theta, u, v).0);
            }
        }
        Ok(out)
    }

    fn lattice_shape(&self) -> (usize, usize, usize) {
        let (rows, cols) = self.geometry.rows_cols();
        (rows, cols, self.config.channels)
    }

    fn random_params(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        let mut theta = vec![0.0; self.param_dim];
        for (l, &(o, i)) in self.layers.iter().enumerate() {
            let bound = (6.0 / i as f64).sqrt() / self.layer_scale(l);
            let off = self.offsets[l];
            for w in &mut theta[off..off + o * i] {
                *w = rng.random_range(-bound..bound);
            }
            let bb = 1.0 / (i as f64).sqrt();
            for b in &mut theta[off + o * i..off + o * i + o] {
                *b = rng.random_range(-bb..bb);
            }
        }
        theta
    }
}
