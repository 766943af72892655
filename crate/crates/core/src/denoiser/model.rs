use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use super::DenoiserError;
use crate::diffusion::{DiffusionError, LatentImage, NoisePredictor};

/// Architecture hyper-parameters of the U-shaped noise predictor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub side: usize,
    pub init_features: usize,
    pub depth: usize,
    pub time_embed_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            side: 64,
            init_features: 32,
            depth: 2,
            time_embed_dim: 128,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), DenoiserError> {
        let bad = |msg: String| Err(DenoiserError::InvalidArchitecture(msg));
        if self.init_features == 0 {
            return bad("init_features must be positive".into());
        }
        if self.depth == 0 {
            return bad("depth must be at least 1".into());
        }
        if self.time_embed_dim < 2 || self.time_embed_dim % 2 != 0 {
            return bad(format!(
                "time_embed_dim {} must be even and >= 2",
                self.time_embed_dim
            ));
        }
        let unit = 1usize << self.depth;
        if self.side < unit || self.side % unit != 0 {
            return bad(format!(
                "side {} not divisible by 2^depth = {unit}",
                self.side
            ));
        }
        Ok(())
    }

    /// Output channels of encoder level `l`.
    pub fn channels(&self, level: usize) -> usize {
        self.init_features << level
    }

    /// `(name, in_channels, out_channels)` of every conv block in forward order.
    pub fn blocks(&self) -> Vec<(String, usize, usize)> {
        let mut out = Vec::new();
        for l in 0..self.depth {
            let cin = if l == 0 { 1 } else { self.channels(l - 1) };
            out.push((format!("enc{l}"), cin, self.channels(l)));
        }
        let c = self.channels(self.depth - 1);
        out.push(("mid".to_string(), c, c));
        for l in (0..self.depth).rev() {
            let cout = if l == 0 {
                self.channels(0)
            } else {
                self.channels(l - 1)
            };
            out.push((format!("dec{l}"), self.channels(l), cout));
        }
        out
    }
}

/// Noise predictor `ε_θ(x_t, t)` with its named parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserModel {
    config: ModelConfig,
    params: Vec<(String, Tensor)>,
}

fn param_layout(cfg: &ModelConfig) -> Vec<(String, Vec<usize>, Init)> {
    let e = cfg.time_embed_dim;
    let mut out = vec![
        ("time.w".to_string(), vec![e, e], Init::FanIn(e)),
        ("time.b".to_string(), vec![e], Init::Zero),
    ];
    for (name, cin, cout) in cfg.blocks() {
        let p = |s: &str| format!("{name}.{s}");
        out.push((p("conv1.w"), vec![cout, cin, 3, 3], Init::FanIn(cin * 9)));
        out.push((p("conv1.b"), vec![cout], Init::Zero));
        out.push((p("norm1.scale"), vec![cout], Init::One));
        out.push((p("norm1.shift"), vec![cout], Init::Zero));
        out.push((p("temb.w"), vec![cout, e], Init::FanIn(e)));
        out.push((p("temb.b"), vec![cout], Init::Zero));
        out.push((p("conv2.w"), vec![cout, cout, 3, 3], Init::FanIn(cout * 9)));
        out.push((p("conv2.b"), vec![cout], Init::Zero));
        out.push((p("norm2.scale"), vec![cout], Init::One));
        out.push((p("norm2.shift"), vec![cout], Init::Zero));
    }
    let c0 = cfg.channels(0);
    out.push(("out.w".to_string(), vec![1, c0, 3, 3], Init::FanIn(c0 * 9)));
    out.push(("out.b".to_string(), vec![1], Init::Zero));
    out.push(("skip.w".to_string(), vec![1, 1, 3, 3], Init::FanIn(9)));
    out.push(("skip.b".to_string(), vec![1], Init::Zero));
    out
}

#[derive(Clone, Copy)]
enum Init {
    Zero,
    One,
    /// Uniform in `±sqrt(3 / fan_in)`, i.e. unit-variance-preserving.
    FanIn(usize),
}

/// Sinusoidal embedding of step `t` with `dim` entries (sines then cosines).
pub fn timestep_embedding(t: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let freq = (-(10_000f64).ln() * i as f64 / half as f64).exp();
        let arg = t as f64 * freq;
        out[i] = arg.sin();
        out[half + i] = arg.cos();
    }
    out
}

struct Bound<'a> {
    graph: Graph,
    vars: Vec<Var>,
    names: &'a [(String, Tensor)],
}

impl Bound<'_> {
    fn p(&self, name: &str) -> Var {
        let idx = self
            .names
            .iter()
            .position(|(n, _)| n == name)
            .unwrap_or_else(|| panic!("missing parameter {name}"));
        self.vars[idx]
    }
}

impl DenoiserModel {
    /// Fresh model with fan-in scaled uniform weights drawn from `seed`.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self, DenoiserError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = param_layout(&config)
            .into_iter()
            .map(|(name, shape, init)| {
                let n: usize = shape.iter().product();
                let values = match init {
                    Init::Zero => vec![0.0; n],
                    Init::One => vec![1.0; n],
                    Init::FanIn(fan) => {
                        let bound = (3.0 / fan as f64).sqrt();
                        (0..n).map(|_| rng.random_range(-bound..bound)).collect()
                    }
                };
                (name, Tensor::new(shape, values))
            })
            .collect();
        Ok(Self { config, params })
    }

    /// Rebuilds a model from named parameters, checking them against the
    /// layout implied by `config`.
    pub fn from_parts(
        config: ModelConfig,
        params: Vec<(String, Tensor)>,
    ) -> Result<Self, DenoiserError> {
        config.validate()?;
        let layout = param_layout(&config);
        if layout.len() != params.len() {
            return Err(DenoiserError::InvalidArchitecture(format!(
                "expected {} parameters, got {}",
                layout.len(),
                params.len()
            )));
        }
        for ((name, shape, _), (pn, t)) in layout.iter().zip(&params) {
            if name != pn || shape.as_slice() != t.shape() {
                return Err(DenoiserError::InvalidArchitecture(format!(
                    "parameter {pn} {:?} does not match expected {name} {shape:?}",
                    t.shape()
                )));
            }
            if !t.is_finite() {
                return Err(DenoiserError::InvalidArchitecture(format!(
                    "parameter {pn} is not finite"
                )));
            }
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn side(&self) -> usize {
        self.config.side
    }

    pub fn params(&self) -> &[(String, Tensor)] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [(String, Tensor)] {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|(_, t)| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|(_, t)| t.is_finite())
    }

    /// Builds the forward graph for a batch of flattened `side×side` inputs.
    /// Returns the graph, the parameter leaves (in `params` order) and the
    /// output node of shape `[n, 1, side, side]`.
    pub(crate) fn build(
        &self,
        inputs: &[f64],
        t: &[usize],
    ) -> Result<(Graph, Vec<Var>, Var), DenoiserError> {
        let side = self.config.side;
        let n = t.len();
        if n == 0 || inputs.len() != n * side * side {
            return Err(DenoiserError::DimensionMismatch {
                expected: n * side * side,
                got: inputs.len(),
            });
        }
        let mut graph = Graph::new();
        let vars = self
            .params
            .iter()
            .map(|(_, p)| graph.leaf(p.clone()))
            .collect();
        let mut b = Bound {
            graph,
            vars,
            names: &self.params,
        };

        let e = self.config.time_embed_dim;
        let mut emb = Vec::with_capacity(n * e);
        for &step in t {
            emb.extend(timestep_embedding(step, e));
        }
        let emb = b.graph.leaf(Tensor::new(vec![n, e], emb));
        let (tw, tb) = (b.p("time.w"), b.p("time.b"));
        let hidden = b.graph.linear(emb, tw, tb);
        let hidden = b.graph.silu(hidden);

        let input = b
            .graph
            .leaf(Tensor::new(vec![n, 1, side, side], inputs.to_vec()));
        let mut x = input;
        let mut skips = Vec::with_capacity(self.config.depth);
        for l in 0..self.config.depth {
            x = self.block(&mut b, &format!("enc{l}"), x, hidden);
            skips.push(x);
            x = b.graph.avg_pool2(x);
        }
        x = self.block(&mut b, "mid", x, hidden);
        for l in (0..self.config.depth).rev() {
            x = b.graph.upsample2(x);
            x = b.graph.add(x, skips[l]);
            x = self.block(&mut b, &format!("dec{l}"), x, hidden);
        }
        let (ow, ob) = (b.p("out.w"), b.p("out.b"));
        let out = b.graph.conv3x3(x, ow, ob);
        // the normalized path loses each image's overall level; a direct
        // input-to-output convolution carries it
        let (sw, sb) = (b.p("skip.w"), b.p("skip.b"));
        let skip = b.graph.conv3x3(input, sw, sb);
        let out = b.graph.add(out, skip);
        Ok((b.graph, b.vars, out))
    }

    fn block(&self, b: &mut Bound<'_>, name: &str, x: Var, hidden: Var) -> Var {
        let p = |s: &str| format!("{name}.{s}");
        let (w1, b1) = (b.p(&p("conv1.w")), b.p(&p("conv1.b")));
        let (s1, h1) = (b.p(&p("norm1.scale")), b.p(&p("norm1.shift")));
        let (tw, tb) = (b.p(&p("temb.w")), b.p(&p("temb.b")));
        let (w2, b2) = (b.p(&p("conv2.w")), b.p(&p("conv2.b")));
        let (s2, h2) = (b.p(&p("norm2.scale")), b.p(&p("norm2.shift")));
        let g = &mut b.graph;
        let y = g.conv3x3(x, w1, b1);
        let y = g.group_norm(y, s1, h1);
        let y = g.silu(y);
        let temb = g.linear(hidden, tw, tb);
        let y = g.channel_bias(y, temb);
        let y = g.conv3x3(y, w2, b2);
        let y = g.group_norm(y, s2, h2);
        g.silu(y)
    }

    /// Noise prediction for a flattened batch; output has the input's length.
    pub fn forward(&self, inputs: &[f64], t: &[usize]) -> Result<Vec<f64>, DenoiserError> {
        let (graph, _, out) = self.build(inputs, t)?;
        Ok(graph.value(out).values().to_vec())
    }
}

impl NoisePredictor for DenoiserModel {
    fn predict_noise(
        &self,
        x: &[LatentImage],
        t: &[usize],
    ) -> Result<Vec<Vec<f64>>, DiffusionError> {
        let side = self.config.side;
        if x.len() != t.len() {
            return Err(DiffusionError::DimensionMismatch {
                expected: x.len(),
                got: t.len(),
            });
        }
        let mut flat = Vec::with_capacity(x.len() * side * side);
        for l in x {
            if l.side() != side {
                return Err(DiffusionError::DimensionMismatch {
                    expected: side,
                    got: l.side(),
                });
            }
            flat.extend_from_slice(l.data());
        }
        let out = self
            .forward(&flat, t)
            .map_err(|e| DiffusionError::Predictor(e.to_string()))?;
        Ok(out.chunks(side * side).map(|c| c.to_vec()).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_indivisible_side() {
        let cfg = ModelConfig {
            side: 30,
            init_features: 4,
            depth: 2,
            time_embed_dim: 8,
        };
        assert!(matches!(
            DenoiserModel::init(cfg, 0),
            Err(DenoiserError::InvalidArchitecture(_))
        ));
    }

    #[test]
    fn init_is_seeded_finite_and_bounded() {
        let cfg = ModelConfig {
            side: 16,
            init_features: 4,
            depth: 2,
            time_embed_dim: 8,
        };
        let a = DenoiserModel::init(cfg, 3).unwrap();
        let b = DenoiserModel::init(cfg, 3).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, DenoiserModel::init(cfg, 4).unwrap());
        for (_, t) in a.params() {
            assert!(t.values().iter().all(|v| v.is_finite() && v.abs() <= 1.0));
        }
    }

    #[test]
    fn embedding_layout() {
        let e = timestep_embedding(0, 6);
        assert_eq!(e, vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let e = timestep_embedding(7, 4);
        assert!((e[0] - 7f64.sin()).abs() < 1e-15);
        assert!((e[3] - (7.0 * 0.01f64).cos()).abs() < 1e-12);
    }

    #[test]
    fn from_parts_checks_layout() {
        let cfg = ModelConfig {
            side: 8,
            init_features: 2,
            depth: 1,
            time_embed_dim: 4,
        };
        let m = DenoiserModel::init(cfg, 1).unwrap();
        let mut params = m.params().to_vec();
        assert!(DenoiserModel::from_parts(cfg, params.clone()).is_ok());
        params.pop();
        assert!(DenoiserModel::from_parts(cfg, params).is_err());
    }
}
