//! Columnar policy networks with frozen prior columns and learned lateral
//! adapters.
//!
//! A network is an ordered list of columns sharing one layer spec. Column k
//! computes `h_i = relu(W_i·h_{i−1} + U_i·relu(V_i·(α⊙h_{i−1}^{<k}) + b_V))`:
//! the main path plus a gated, projected, non-linear read of every earlier
//! column's previous-layer activations. Earlier columns never see later
//! ones, and once a column is frozen its bytes never change.

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointError};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{Graph, NodeId, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum NetError {
    #[error("layer spec is empty")]
    EmptySpec,
    #[error("need at least 2 actions, got {n}")]
    TooFewActions { n: usize },
    #[error("layer {layer} has zero width")]
    ZeroWidth { layer: usize },
    #[error("layer {layer} is a conv after a dense layer")]
    ConvAfterDense { layer: usize },
    #[error("layer {layer}: kernel {kernel:?} with stride {stride:?} does not fit input {input:?}")]
    KernelDoesNotFit {
        layer: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        input: Vec<usize>,
    },
    #[error("column {column} does not exist (network has {count})")]
    UnknownColumn { column: usize, count: usize },
    #[error("observation shape {got:?} does not match spec input {expected:?}")]
    ObsShape { expected: Vec<usize>, got: Vec<usize> },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

// ── Specs ───────────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LayerSpec {
    Conv {
        width: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
    },
    Dense {
        width: usize,
    },
}

impl LayerSpec {
    pub fn conv(width: usize, kernel: (usize, usize), stride: (usize, usize)) -> Self {
        LayerSpec::Conv { width, kernel, stride }
    }

    pub fn dense(width: usize) -> Self {
        LayerSpec::Dense { width }
    }

    pub fn width(&self) -> usize {
        match self {
            LayerSpec::Conv { width, .. } | LayerSpec::Dense { width } => *width,
        }
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerSpec::Conv { width, kernel, stride } => write!(
                f,
                "conv {width} {}x{} stride {}x{}",
                kernel.0, kernel.1, stride.0, stride.1
            ),
            LayerSpec::Dense { width } => write!(f, "dense {width}"),
        }
    }
}

/// Architecture shared by every column: input shape `[c, h, w]`, hidden
/// layers, and the two head widths (`n_actions` policy logits, 1 value).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetSpec {
    pub input: Vec<usize>,
    pub layers: Vec<LayerSpec>,
    pub n_actions: usize,
}

impl NetSpec {
    pub fn new(input: Vec<usize>, layers: Vec<LayerSpec>, n_actions: usize) -> Result<Self, NetError> {
        let spec = NetSpec { input, layers, n_actions };
        spec.hidden_shapes()?;
        Ok(spec)
    }

    /// Activation shape (without batch axis) after each hidden layer; also
    /// the validator for the whole spec.
    pub fn hidden_shapes(&self) -> Result<Vec<Vec<usize>>, NetError> {
        if self.layers.is_empty() {
            return Err(NetError::EmptySpec);
        }
        if self.n_actions < 2 {
            return Err(NetError::TooFewActions { n: self.n_actions });
        }
        let mut shapes = Vec::with_capacity(self.layers.len());
        let mut cur = self.input.clone();
        for (li, layer) in self.layers.iter().enumerate() {
            if layer.width() == 0 {
                return Err(NetError::ZeroWidth { layer: li });
            }
            match layer {
                LayerSpec::Conv { width, kernel, stride } => {
                    if cur.len() != 3 {
                        return Err(NetError::ConvAfterDense { layer: li });
                    }
                    let (h, w) = (cur[1], cur[2]);
                    let (kh, kw) = *kernel;
                    let (sh, sw) = *stride;
                    if kh == 0 || kw == 0 || sh == 0 || sw == 0 || kh > h || kw > w {
                        return Err(NetError::KernelDoesNotFit {
                            layer: li,
                            kernel: *kernel,
                            stride: *stride,
                            input: cur,
                        });
                    }
                    cur = vec![*width, (h - kh) / sh + 1, (w - kw) / sw + 1];
                }
                LayerSpec::Dense { width } => {
                    cur = vec![*width];
                }
            }
            shapes.push(cur.clone());
        }
        Ok(shapes)
    }

    /// Flattened size of the activation feeding layer `li` (the previous
    /// hidden layer, or the observation for `li == 0`).
    fn fan_into(&self, shapes: &[Vec<usize>], li: usize) -> usize {
        let prev = if li == 0 { &self.input } else { &shapes[li - 1] };
        prev.iter().product()
    }
}

// ── Parameter identity ──────────────────────────────────────────────────

/// Where a parameter lives inside its column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Site {
    Hidden(u16),
    PolicyHead,
    ValueHead,
}

/// What role a parameter plays at its site. Adapter kinds only appear on
/// columns k ≥ 2 at sites with lateral inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ParamKind {
    Weight,
    Bias,
    /// Scalar gate on one source column's activations (1-based source id).
    AdapterScale(u16),
    AdapterProj,
    AdapterProjBias,
    AdapterLateral,
}

/// Stable, ordered, printable identity of one parameter tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId {
    /// 1-based column index.
    pub column: u16,
    pub site: Site,
    pub kind: ParamKind,
}

impl ParamId {
    pub fn new(column: u16, site: Site, kind: ParamKind) -> Self {
        ParamId { column, site, kind }
    }
}

impl fmt::Display for ParamId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "c{}.", self.column)?;
        match self.site {
            Site::Hidden(i) => write!(f, "h{i}.")?,
            Site::PolicyHead => write!(f, "policy.")?,
            Site::ValueHead => write!(f, "value.")?,
        }
        match self.kind {
            ParamKind::Weight => write!(f, "w"),
            ParamKind::Bias => write!(f, "b"),
            ParamKind::AdapterScale(j) => write!(f, "alpha{j}"),
            ParamKind::AdapterProj => write!(f, "vproj.w"),
            ParamKind::AdapterProjBias => write!(f, "vproj.b"),
            ParamKind::AdapterLateral => write!(f, "u"),
        }
    }
}

impl FromStr for ParamId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || format!("malformed parameter name: {s}");
        let mut parts = s.splitn(3, '.');
        let col = parts.next().ok_or_else(bad)?;
        let site = parts.next().ok_or_else(bad)?;
        let kind = parts.next().ok_or_else(bad)?;
        let column: u16 = col.strip_prefix('c').ok_or_else(bad)?.parse().map_err(|_| bad())?;
        let site = match site {
            "policy" => Site::PolicyHead,
            "value" => Site::ValueHead,
            h => Site::Hidden(h.strip_prefix('h').ok_or_else(bad)?.parse().map_err(|_| bad())?),
        };
        let kind = match kind {
            "w" => ParamKind::Weight,
            "b" => ParamKind::Bias,
            "vproj.w" => ParamKind::AdapterProj,
            "vproj.b" => ParamKind::AdapterProjBias,
            "u" => ParamKind::AdapterLateral,
            a => ParamKind::AdapterScale(
                a.strip_prefix("alpha").ok_or_else(bad)?.parse().map_err(|_| bad())?,
            ),
        };
        Ok(ParamId { column, site, kind })
    }
}

// ── Columns and the network ─────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct Column {
    seed: u64,
    frozen: bool,
    params: BTreeMap<ParamId, Tensor>,
}

impl Column {
    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn param_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.params.keys().copied()
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params.get(&id)
    }

    pub fn n_values(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }
}

/// Result of building one forward pass on a [`Graph`]: heads, per-column
/// post-ReLU hidden activations (`hidden[column][layer]`), and the graph
/// nodes of every trainable parameter that was bound.
pub struct ForwardPass {
    pub logits: NodeId,
    pub value: NodeId,
    pub hidden: Vec<Vec<NodeId>>,
    pub bindings: BTreeMap<ParamId, NodeId>,
}

/// Single-observation evaluation: action probabilities, value estimate,
/// and activation snapshots for every live (column, layer) pair.
pub struct PolicyOutput {
    pub policy: Vec<f64>,
    pub value: f64,
    pub activations: Vec<Vec<Tensor>>,
}

/// Additive Gaussian noise injected into the post-ReLU activations of one
/// (layer, column) site, resampled on every forward pass.
pub struct NoiseInjection<'a> {
    /// 0-based hidden layer index.
    pub layer: usize,
    /// 0-based column index.
    pub column: usize,
    /// Per-feature standard deviation (feature = channel for conv layers,
    /// unit for dense layers).
    pub std: &'a [f64],
    pub rng: &'a mut ChaCha8Rng,
}

#[derive(Default)]
pub struct ForwardOptions<'a> {
    /// Retain gradients on every post-ReLU hidden activation.
    pub watch_hidden: bool,
    pub noise: Option<NoiseInjection<'a>>,
}

#[derive(Debug, Clone)]
pub struct ProgressiveNetwork {
    spec: NetSpec,
    columns: Vec<Column>,
}

impl ProgressiveNetwork {
    /// Fresh single-column network. Weight draws are Glorot-uniform from a
    /// ChaCha stream seeded with `seed`; biases start at zero.
    pub fn new(spec: NetSpec, seed: u64) -> Result<Self, NetError> {
        spec.hidden_shapes()?;
        let mut net = ProgressiveNetwork { spec, columns: Vec::new() };
        net.push_column(seed, 1.0)?;
        Ok(net)
    }

    pub fn spec(&self) -> &NetSpec {
        &self.spec
    }

    pub fn n_columns(&self) -> usize {
        self.columns.len()
    }

    pub fn column(&self, idx: usize) -> &Column {
        &self.columns[idx]
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    /// Freezes every existing column and appends a freshly initialized one
    /// with adapters reading from all of them. Every adapter gate starts at
    /// `alpha_init`. Returns the new column's 1-based id.
    pub fn add_column(&mut self, seed: u64, alpha_init: f64) -> Result<usize, NetError> {
        for c in &mut self.columns {
            c.frozen = true;
        }
        self.push_column(seed, alpha_init)?;
        Ok(self.columns.len())
    }

    /// Exactly the unfrozen (last) column's parameters, adapters included,
    /// in sorted order.
    pub fn trainable_params(&self) -> Vec<ParamId> {
        match self.columns.last() {
            Some(c) if !c.frozen => c.params.keys().copied().collect(),
            _ => Vec::new(),
        }
    }

    /// Head parameter ids of the last column (the baseline-2 trainable set).
    pub fn head_params(&self) -> Vec<ParamId> {
        self.trainable_params()
            .into_iter()
            .filter(|id| matches!(id.site, Site::PolicyHead | Site::ValueHead))
            .collect()
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.columns.get(id.column as usize - 1).and_then(|c| c.params.get(&id))
    }

    /// Mutable access for the optimizer. Frozen columns are off limits.
    pub fn param_mut(&mut self, id: ParamId) -> Option<&mut Tensor> {
        let col = self.columns.get_mut(id.column as usize - 1)?;
        assert!(!col.frozen, "attempted to mutate frozen column {}", id.column);
        col.params.get_mut(&id)
    }

    /// Redraws the last column's policy/value head weights (fresh Glorot
    /// stream from `seed`), zeroing head biases. Used when a pretrained
    /// column is pointed at a new task.
    pub fn reinit_heads(&mut self, seed: u64) {
        let shapes = self.spec.hidden_shapes().expect("spec validated at construction");
        let n_last = shapes.last().unwrap().iter().product::<usize>();
        let n_actions = self.spec.n_actions;
        let column = self.columns.last_mut().expect("network has a column");
        assert!(!column.frozen, "cannot reinitialize heads of a frozen column");
        let k = self.columns.len() as u16;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (site, width) in [(Site::PolicyHead, n_actions), (Site::ValueHead, 1)] {
            let w = glorot(&mut rng, vec![width, n_last], n_last, width);
            let column = self.columns.last_mut().unwrap();
            column.params.insert(ParamId::new(k, site, ParamKind::Weight), w);
            column
                .params
                .insert(ParamId::new(k, site, ParamKind::Bias), Tensor::zeros(vec![width]));
        }
    }

    /// Shapes of every parameter a column at 1-based index `k` carries,
    /// sorted by id. Columns k ≥ 2 include adapter parameters.
    pub fn param_shapes_for_column(spec: &NetSpec, k: usize) -> Result<Vec<(ParamId, Vec<usize>)>, NetError> {
        let shapes = spec.hidden_shapes()?;
        let kc = k as u16;
        let mut out: Vec<(ParamId, Vec<usize>)> = Vec::new();
        for (li, layer) in spec.layers.iter().enumerate() {
            let site = Site::Hidden(li as u16);
            let fan_in = spec.fan_into(&shapes, li);
            match layer {
                LayerSpec::Conv { width, kernel, .. } => {
                    let c_in = if li == 0 { spec.input[0] } else { shapes[li - 1][0] };
                    out.push((
                        ParamId::new(kc, site, ParamKind::Weight),
                        vec![*width, c_in, kernel.0, kernel.1],
                    ));
                    out.push((ParamId::new(kc, site, ParamKind::Bias), vec![*width]));
                }
                LayerSpec::Dense { width } => {
                    out.push((ParamId::new(kc, site, ParamKind::Weight), vec![*width, fan_in]));
                    out.push((ParamId::new(kc, site, ParamKind::Bias), vec![*width]));
                }
            }
            // Lateral adapter: layers past the first, columns past the first.
            if k > 1 && li > 0 {
                for j in 1..k {
                    out.push((ParamId::new(kc, site, ParamKind::AdapterScale(j as u16)), vec![1]));
                }
                let prev = &shapes[li - 1];
                match layer {
                    LayerSpec::Conv { width, kernel, .. } => {
                        let c_prev = prev[0];
                        out.push((
                            ParamId::new(kc, site, ParamKind::AdapterProj),
                            vec![c_prev, (k - 1) * c_prev, 1, 1],
                        ));
                        out.push((ParamId::new(kc, site, ParamKind::AdapterProjBias), vec![c_prev]));
                        out.push((
                            ParamId::new(kc, site, ParamKind::AdapterLateral),
                            vec![*width, c_prev, kernel.0, kernel.1],
                        ));
                    }
                    LayerSpec::Dense { width } => {
                        let f_prev: usize = prev.iter().product();
                        out.push((
                            ParamId::new(kc, site, ParamKind::AdapterProj),
                            vec![f_prev, (k - 1) * f_prev],
                        ));
                        out.push((ParamId::new(kc, site, ParamKind::AdapterProjBias), vec![f_prev]));
                        out.push((
                            ParamId::new(kc, site, ParamKind::AdapterLateral),
                            vec![*width, f_prev],
                        ));
                    }
                }
            }
        }
        let n_last: usize = shapes.last().unwrap().iter().product();
        for (site, width) in [(Site::PolicyHead, spec.n_actions), (Site::ValueHead, 1)] {
            out.push((ParamId::new(kc, site, ParamKind::Weight), vec![width, n_last]));
            out.push((ParamId::new(kc, site, ParamKind::Bias), vec![width]));
            if k > 1 {
                for j in 1..k {
                    out.push((ParamId::new(kc, site, ParamKind::AdapterScale(j as u16)), vec![1]));
                }
                out.push((
                    ParamId::new(kc, site, ParamKind::AdapterProj),
                    vec![n_last, (k - 1) * n_last],
                ));
                out.push((ParamId::new(kc, site, ParamKind::AdapterProjBias), vec![n_last]));
                out.push((ParamId::new(kc, site, ParamKind::AdapterLateral), vec![width, n_last]));
            }
        }
        out.sort_by_key(|(id, _)| *id);
        Ok(out)
    }

    fn push_column(&mut self, seed: u64, alpha_init: f64) -> Result<(), NetError> {
        let k = self.columns.len() + 1;
        let shapes = Self::param_shapes_for_column(&self.spec, k)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = BTreeMap::new();
        for (id, shape) in shapes {
            let tensor = match id.kind {
                ParamKind::Bias | ParamKind::AdapterProjBias => Tensor::zeros(shape),
                ParamKind::AdapterScale(_) => Tensor::scalar(alpha_init),
                ParamKind::Weight | ParamKind::AdapterProj | ParamKind::AdapterLateral => {
                    let (fan_in, fan_out) = fans(&shape);
                    glorot(&mut rng, shape, fan_in, fan_out)
                }
            };
            params.insert(id, tensor);
        }
        self.columns.push(Column { seed, frozen: false, params });
        Ok(())
    }

    // ── Forward ─────────────────────────────────────────────────────────

    /// Builds the forward computation for column `k` (1-based) on `obs`
    /// (shape `[batch, c, h, w]`) into `g`.
    ///
    /// Parameters listed in `trainable` become graph parameters; everything
    /// else enters as constants, so frozen columns are invisible to the
    /// gradient map. Ids in `trainable` that belong to frozen columns are
    /// ignored.
    pub fn forward_graph(
        &self,
        g: &mut Graph,
        obs: NodeId,
        k: usize,
        trainable: &BTreeSet<ParamId>,
        mut opts: ForwardOptions<'_>,
    ) -> Result<ForwardPass, NetError> {
        if k == 0 || k > self.columns.len() {
            return Err(NetError::UnknownColumn { column: k, count: self.columns.len() });
        }
        let obs_shape = g.value(obs).shape().to_vec();
        if obs_shape.len() != 4 || obs_shape[1..] != self.spec.input[..] {
            return Err(NetError::ObsShape { expected: self.spec.input.clone(), got: obs_shape });
        }

        let mut bindings = BTreeMap::new();
        let bind = |g: &mut Graph, net: &Self, id: ParamId, bindings: &mut BTreeMap<ParamId, NodeId>| {
            let tensor = net.param(id).expect("parameter exists by construction").clone();
            let column_frozen = net.columns[id.column as usize - 1].frozen;
            if !column_frozen && trainable.contains(&id) {
                let node = g.parameter(tensor);
                bindings.insert(id, node);
                node
            } else {
                g.constant(tensor)
            }
        };

        let n_layers = self.spec.layers.len();
        // prev[j]: activation feeding the next layer of column j.
        let mut prev: Vec<NodeId> = vec![obs; k];
        let mut hidden: Vec<Vec<NodeId>> = vec![Vec::with_capacity(n_layers); k];

        for li in 0..n_layers {
            let layer = self.spec.layers[li].clone();
            let mut next: Vec<NodeId> = Vec::with_capacity(k);
            for j in 0..k {
                let col = (j + 1) as u16;
                let site = Site::Hidden(li as u16);
                let w = bind(g, self, ParamId::new(col, site, ParamKind::Weight), &mut bindings);
                let b = bind(g, self, ParamId::new(col, site, ParamKind::Bias), &mut bindings);
                let main = match layer {
                    LayerSpec::Conv { stride, .. } => g.conv2d(prev[j], w, Some(b), stride)?,
                    LayerSpec::Dense { .. } => {
                        let flat = g.flatten(prev[j])?;
                        g.dense(flat, w, b)?
                    }
                };
                let z = if j > 0 && li > 0 {
                    let lateral = self.adapter_read(
                        g,
                        col,
                        site,
                        &layer,
                        &prev[..j],
                        trainable,
                        &mut bindings,
                    )?;
                    g.add(main, lateral)?
                } else {
                    main
                };
                let mut h = g.relu(z)?;
                if opts.watch_hidden {
                    g.watch(h);
                }
                if let Some(noise) = opts.noise.as_mut() {
                    if noise.layer == li && noise.column == j {
                        let n = sample_noise(g.value(h).shape(), noise.std, noise.rng)?;
                        let nn = g.constant(n);
                        h = g.add(h, nn)?;
                    }
                }
                hidden[j].push(h);
                next.push(h);
            }
            prev = next;
        }

        let last = prev;
        let head = |g: &mut Graph, site: Site, bindings: &mut BTreeMap<ParamId, NodeId>| -> Result<NodeId, NetError> {
            let col = k as u16;
            let w = bind(g, self, ParamId::new(col, site, ParamKind::Weight), bindings);
            let b = bind(g, self, ParamId::new(col, site, ParamKind::Bias), bindings);
            let flat = g.flatten(last[k - 1])?;
            let main = g.dense(flat, w, b)?;
            if k > 1 {
                let lateral = self.adapter_read(
                    g,
                    col,
                    site,
                    &LayerSpec::Dense { width: 0 },
                    &last[..k - 1],
                    trainable,
                    bindings,
                )?;
                Ok(g.add(main, lateral)?)
            } else {
                Ok(main)
            }
        };
        let logits = head(g, Site::PolicyHead, &mut bindings)?;
        let value = head(g, Site::ValueHead, &mut bindings)?;

        Ok(ForwardPass { logits, value, hidden, bindings })
    }

    /// Gated–projected–rectified lateral read at one site: scale each
    /// source activation by its gate, concatenate, project (1×1 conv or
    /// dense) with bias, rectify, apply the lateral weight.
    #[allow(clippy::too_many_arguments)]
    fn adapter_read(
        &self,
        g: &mut Graph,
        col: u16,
        site: Site,
        layer: &LayerSpec,
        sources: &[NodeId],
        trainable: &BTreeSet<ParamId>,
        bindings: &mut BTreeMap<ParamId, NodeId>,
    ) -> Result<NodeId, NetError> {
        let bind = |g: &mut Graph, id: ParamId, bindings: &mut BTreeMap<ParamId, NodeId>| {
            let tensor = self.param(id).expect("adapter parameter exists").clone();
            let column_frozen = self.columns[id.column as usize - 1].frozen;
            if !column_frozen && trainable.contains(&id) {
                let node = g.parameter(tensor);
                bindings.insert(id, node);
                node
            } else {
                g.constant(tensor)
            }
        };
        let conv_site = matches!((layer, site), (LayerSpec::Conv { .. }, Site::Hidden(_)));

        let mut scaled = Vec::with_capacity(sources.len());
        for (src_idx, &src) in sources.iter().enumerate() {
            let alpha = bind(
                g,
                ParamId::new(col, site, ParamKind::AdapterScale(src_idx as u16 + 1)),
                bindings,
            );
            let s = if conv_site {
                src
            } else {
                g.flatten(src)?
            };
            scaled.push(g.scale_by_scalar(s, alpha)?);
        }
        let cat = g.concat(&scaled)?;

        let vw = bind(g, ParamId::new(col, site, ParamKind::AdapterProj), bindings);
        let vb = bind(g, ParamId::new(col, site, ParamKind::AdapterProjBias), bindings);
        let uw = bind(g, ParamId::new(col, site, ParamKind::AdapterLateral), bindings);
        if conv_site {
            let proj = g.conv2d(cat, vw, Some(vb), (1, 1))?;
            let act = g.relu(proj)?;
            let stride = match layer {
                LayerSpec::Conv { stride, .. } => *stride,
                LayerSpec::Dense { .. } => unreachable!("conv site implies conv layer"),
            };
            Ok(g.conv2d(act, uw, None, stride)?)
        } else {
            let proj = g.dense(cat, vw, vb)?;
            let act = g.relu(proj)?;
            let zero_bias = g.constant(Tensor::zeros(vec![g.value(uw).shape()[0]]));
            Ok(g.dense(act, uw, zero_bias)?)
        }
    }

    /// Convenience forward for a batch of observations with no gradient
    /// bookkeeping: softmaxed policies and value estimates per row.
    pub fn evaluate_batch(&self, k: usize, obs: &Tensor) -> Result<(Tensor, Vec<f64>), NetError> {
        let mut g = Graph::new();
        let obs_node = g.constant(obs.clone());
        let pass = self.forward_graph(&mut g, obs_node, k, &BTreeSet::new(), ForwardOptions::default())?;
        let probs = g.softmax(pass.logits)?;
        let values = g.value(pass.value).data().to_vec();
        Ok((g.value(probs).clone(), values))
    }

    /// Single-observation evaluation with activation snapshots.
    pub fn evaluate(&self, k: usize, obs: &Tensor) -> Result<PolicyOutput, NetError> {
        let mut shape = vec![1];
        shape.extend_from_slice(obs.shape());
        let batched = obs.reshaped(shape)?;
        let mut g = Graph::new();
        let obs_node = g.constant(batched);
        let pass = self.forward_graph(&mut g, obs_node, k, &BTreeSet::new(), ForwardOptions::default())?;
        let probs = g.softmax(pass.logits)?;
        let activations = pass
            .hidden
            .iter()
            .map(|col| col.iter().map(|&id| g.value(id).clone()).collect())
            .collect();
        Ok(PolicyOutput {
            policy: g.value(probs).data().to_vec(),
            value: g.value(pass.value).data()[0],
            activations,
        })
    }
}

// ── Initialization helpers ──────────────────────────────────────────────

fn fans(shape: &[usize]) -> (usize, usize) {
    match shape.len() {
        2 => (shape[1], shape[0]),
        4 => {
            let field = shape[2] * shape[3];
            (shape[1] * field, shape[0] * field)
        }
        _ => {
            let n: usize = shape.iter().product();
            (n, n)
        }
    }
}

fn glorot(rng: &mut ChaCha8Rng, shape: Vec<usize>, fan_in: usize, fan_out: usize) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::from_vec(shape, data).expect("length matches by construction")
}

/// Per-feature Gaussian noise over an activation tensor: feature = channel
/// for `[batch, c, h, w]`, unit for `[batch, n]`.
fn sample_noise(shape: &[usize], std: &[f64], rng: &mut ChaCha8Rng) -> Result<Tensor, TensorError> {
    let n_features = shape[1];
    assert_eq!(std.len(), n_features, "one std per feature");
    let inner: usize = shape[2..].iter().product();
    let batch = shape[0];
    let mut data = vec![0.0; batch * n_features * inner];
    for b in 0..batch {
        for f in 0..n_features {
            let base = (b * n_features + f) * inner;
            for i in 0..inner {
                data[base + i] = std[f] * gaussian(rng);
            }
        }
    }
    Tensor::from_vec(shape.to_vec(), data)
}

/// Standard normal draw via Box–Muller.
pub(crate) fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}
