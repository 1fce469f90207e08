//! Small differentiable classifiers.
//!
//! Parameters live in one flat vector split into named groups; gradients use
//! the same layout, so optimizers and probes work on plain slices.

mod layers;

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Error, Result};
use crate::rng::{tags, Stream};
pub use layers::{conv_apply, conv_apply_adjoint, ConvGeometry};
use layers::{Cache, Layer, Slots};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Linear,
    Mlp,
    Convnet,
    ResnetSmall,
}

impl Family {
    pub fn as_str(&self) -> &'static str {
        match self {
            Family::Linear => "linear",
            Family::Mlp => "mlp",
            Family::Convnet => "convnet",
            Family::ResnetSmall => "resnet_small",
        }
    }
}

/// Architecture description.
///
/// * `linear`: one dense layer.
/// * `mlp`: dense + ReLU per entry of `widths`, then a dense head.
/// * `convnet`: one 3x3 conv + ReLU per entry of `widths` (stride 2 on every
///   second block), flatten, optional dense hidden layer of `dense_width`, head.
/// * `resnet_small`: 3x3 stem of `widths[0]` channels, `blocks_per_stage`
///   basic residual blocks per entry of `widths` (stride 2 from the second
///   stage on), global average pooling, dense head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub family: Family,
    pub input_shape: Vec<usize>,
    pub class_count: usize,
    #[serde(default)]
    pub widths: Vec<usize>,
    #[serde(default)]
    pub dense_width: usize,
    #[serde(default = "one")]
    pub blocks_per_stage: usize,
    #[serde(default = "yes")]
    pub bias: bool,
    #[serde(default)]
    pub init_seed: u64,
}

fn one() -> usize {
    1
}

fn yes() -> bool {
    true
}

impl ArchSpec {
    pub fn linear(input_dim: usize, class_count: usize, init_seed: u64) -> Self {
        Self {
            family: Family::Linear,
            input_shape: vec![input_dim],
            class_count,
            widths: Vec::new(),
            dense_width: 0,
            blocks_per_stage: 1,
            bias: true,
            init_seed,
        }
    }

    pub fn mlp(input_dim: usize, widths: &[usize], class_count: usize, init_seed: u64) -> Self {
        Self {
            family: Family::Mlp,
            widths: widths.to_vec(),
            ..Self::linear(input_dim, class_count, init_seed)
        }
    }

    pub fn convnet(
        input_shape: [usize; 3],
        channels: &[usize],
        dense_width: usize,
        class_count: usize,
        init_seed: u64,
    ) -> Self {
        Self {
            family: Family::Convnet,
            input_shape: input_shape.to_vec(),
            class_count,
            widths: channels.to_vec(),
            dense_width,
            blocks_per_stage: 1,
            bias: true,
            init_seed,
        }
    }

    pub fn resnet_small(
        input_shape: [usize; 3],
        stage_channels: &[usize],
        blocks_per_stage: usize,
        class_count: usize,
        init_seed: u64,
    ) -> Self {
        Self {
            family: Family::ResnetSmall,
            input_shape: input_shape.to_vec(),
            class_count,
            widths: stage_channels.to_vec(),
            dense_width: 0,
            blocks_per_stage,
            bias: true,
            init_seed,
        }
    }

    pub fn without_bias(mut self) -> Self {
        self.bias = false;
        self
    }

    pub fn input_dim(&self) -> usize {
        self.input_shape.iter().product()
    }

    /// Stable identifier of the architecture (independent of the init seed).
    pub fn arch_tag(&self) -> String {
        let shape: Vec<String> = self.input_shape.iter().map(|v| format!("{v}")).collect();
        let widths: Vec<String> = self.widths.iter().map(|v| format!("{v}")).collect();
        let mut tag = format!(
            "{}-in{}-w{}-c{}",
            self.family.as_str(),
            shape.join("x"),
            widths.join("_"),
            self.class_count
        );
        if self.family == Family::Convnet && self.dense_width > 0 {
            tag.push_str(&format!("-d{}", self.dense_width));
        }
        if self.family == Family::ResnetSmall {
            tag.push_str(&format!("-b{}", self.blocks_per_stage));
        }
        if !self.bias {
            tag.push_str("-nobias");
        }
        tag
    }

    pub fn validate(&self) -> Result<()> {
        if self.class_count < 2 {
            return Err(invalid!("class_count must be at least 2"));
        }
        if self.input_shape.is_empty() || self.input_dim() == 0 {
            return Err(invalid!("input shape {:?} is empty", self.input_shape));
        }
        if self.widths.contains(&0) {
            return Err(invalid!("zero width in {:?}", self.widths));
        }
        match self.family {
            Family::Linear | Family::Mlp => Ok(()),
            Family::Convnet | Family::ResnetSmall => {
                if self.input_shape.len() != 3 {
                    return Err(Error::Unsupported(format!(
                        "{} needs a [c, h, w] input shape",
                        self.family.as_str()
                    )));
                }
                if self.widths.is_empty() {
                    return Err(invalid!("{} needs at least one width", self.family.as_str()));
                }
                if self.family == Family::ResnetSmall && self.blocks_per_stage == 0 {
                    return Err(invalid!("blocks_per_stage must be positive"));
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupRole {
    ConvFilter,
    Dense,
    Bias,
    NormScale,
    NormShift,
}

impl GroupRole {
    /// Weight matrices / filters, as opposed to biases and normalization
    /// parameters.
    pub fn is_weight(&self) -> bool {
        matches!(self, GroupRole::ConvFilter | GroupRole::Dense)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamGroup {
    pub name: String,
    pub shape: Vec<usize>,
    pub role: GroupRole,
    pub offset: usize,
    pub len: usize,
}

/// Linear operator of a weight group, used by the spectral-norm probe.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightOperator {
    Dense { rows: usize, cols: usize },
    Conv(ConvGeometry),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParameters {
    pub arch: ArchSpec,
    pub groups: Vec<ParamGroup>,
    pub values: Vec<f64>,
}

struct Network {
    layers: Vec<Layer>,
    groups: Vec<ParamGroup>,
    operators: Vec<Option<WeightOperator>>,
    /// Fan-in and init scale multiplier per group.
    init: Vec<(usize, f64)>,
}

struct Builder {
    groups: Vec<ParamGroup>,
    operators: Vec<Option<WeightOperator>>,
    init: Vec<(usize, f64)>,
    offset: usize,
    bias: bool,
}

impl Builder {
    fn group(&mut self, name: String, shape: Vec<usize>, role: GroupRole, fan_in: usize, scale: f64) -> usize {
        let len = shape.iter().product();
        self.groups.push(ParamGroup {
            name,
            shape,
            role,
            offset: self.offset,
            len,
        });
        self.operators.push(None);
        self.init.push((fan_in, scale));
        self.offset += len;
        self.groups.len() - 1
    }

    fn dense(&mut self, name: &str, inputs: usize, outputs: usize, scale: f64) -> Layer {
        let weight = self.group(format!("{name}.weight"), vec![outputs, inputs], GroupRole::Dense, inputs, scale);
        self.operators[weight] = Some(WeightOperator::Dense {
            rows: outputs,
            cols: inputs,
        });
        let bias = self
            .bias
            .then(|| self.group(format!("{name}.bias"), vec![outputs], GroupRole::Bias, inputs, 0.0));
        Layer::Dense {
            weight,
            bias,
            inputs,
            outputs,
        }
    }

    fn conv(&mut self, name: &str, geom: ConvGeometry, scale: f64) -> Layer {
        let fan_in = geom.patch_len();
        let weight = self.group(
            format!("{name}.weight"),
            vec![geom.cout, geom.cin, geom.kernel, geom.kernel],
            GroupRole::ConvFilter,
            fan_in,
            scale,
        );
        self.operators[weight] = Some(WeightOperator::Conv(geom));
        let bias = self
            .bias
            .then(|| self.group(format!("{name}.bias"), vec![geom.cout], GroupRole::Bias, fan_in, 0.0));
        Layer::Conv { weight, bias, geom }
    }
}

fn conv3(cin: usize, cout: usize, h: usize, w: usize, stride: usize) -> ConvGeometry {
    ConvGeometry {
        cin,
        cout,
        height: h,
        width: w,
        kernel: 3,
        stride,
        pad: 1,
    }
}

fn build(spec: &ArchSpec) -> Result<Network> {
    spec.validate()?;
    let mut b = Builder {
        groups: Vec::new(),
        operators: Vec::new(),
        init: Vec::new(),
        offset: 0,
        bias: spec.bias,
    };
    let c = spec.class_count;
    let mut layers = Vec::new();
    match spec.family {
        Family::Linear => layers.push(b.dense("dense0", spec.input_dim(), c, 1.0)),
        Family::Mlp => {
            let mut d = spec.input_dim();
            for (i, &w) in spec.widths.iter().enumerate() {
                layers.push(b.dense(&format!("dense{i}"), d, w, 1.0));
                layers.push(Layer::Relu);
                d = w;
            }
            layers.push(b.dense(&format!("dense{}", spec.widths.len()), d, c, 1.0));
        }
        Family::Convnet => {
            let (mut ch, mut h, mut w) = (spec.input_shape[0], spec.input_shape[1], spec.input_shape[2]);
            for (i, &out) in spec.widths.iter().enumerate() {
                let stride = if i % 2 == 1 { 2 } else { 1 };
                let g = conv3(ch, out, h, w, stride);
                layers.push(b.conv(&format!("conv{i}"), g, 1.0));
                layers.push(Layer::Relu);
                ch = out;
                h = g.out_height();
                w = g.out_width();
            }
            let mut d = ch * h * w;
            if spec.dense_width > 0 {
                layers.push(b.dense("dense0", d, spec.dense_width, 1.0));
                layers.push(Layer::Relu);
                d = spec.dense_width;
            }
            layers.push(b.dense("head", d, c, 1.0));
        }
        Family::ResnetSmall => {
            let (cin, mut h, mut w) = (spec.input_shape[0], spec.input_shape[1], spec.input_shape[2]);
            let mut ch = spec.widths[0];
            layers.push(b.conv("stem", conv3(cin, ch, h, w, 1), 1.0));
            layers.push(Layer::Relu);
            for (s, &out) in spec.widths.iter().enumerate() {
                for blk in 0..spec.blocks_per_stage {
                    let stride = if s > 0 && blk == 0 { 2 } else { 1 };
                    let name = format!("stage{s}.block{blk}");
                    let g1 = conv3(ch, out, h, w, stride);
                    let (oh, ow) = (g1.out_height(), g1.out_width());
                    let body = vec![
                        b.conv(&format!("{name}.conv1"), g1, 1.0),
                        Layer::Relu,
                        // Damped so that stacking blocks keeps activations bounded.
                        b.conv(&format!("{name}.conv2"), conv3(out, out, oh, ow, 1), 0.5),
                    ];
                    let shortcut = if stride != 1 || ch != out {
                        let g = ConvGeometry {
                            cin: ch,
                            cout: out,
                            height: h,
                            width: w,
                            kernel: 1,
                            stride,
                            pad: 0,
                        };
                        vec![b.conv(&format!("{name}.shortcut"), g, 1.0)]
                    } else {
                        Vec::new()
                    };
                    layers.push(Layer::Residual { body, shortcut });
                    layers.push(Layer::Relu);
                    ch = out;
                    h = oh;
                    w = ow;
                }
            }
            layers.push(Layer::GlobalAvgPool {
                channels: ch,
                spatial: h * w,
            });
            layers.push(b.dense("head", ch, c, 1.0));
        }
    }
    Ok(Network {
        layers,
        groups: b.groups,
        operators: b.operators,
        init: b.init,
    })
}

/// Deterministic fan-in-scaled uniform initialization; biases start at zero.
///
/// Hidden layers draw from `U(-sqrt(6/fan_in), sqrt(6/fan_in))`; the output
/// head uses `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
pub fn init_model(spec: &ArchSpec) -> Result<ModelParameters> {
    let net = build(spec)?;
    let total: usize = net.groups.iter().map(|g| g.len).sum();
    let mut values = vec![0.0; total];
    let head = net
        .groups
        .iter()
        .rposition(|g| g.role.is_weight())
        .expect("every family has a weight group");
    for (gi, g) in net.groups.iter().enumerate() {
        let (fan_in, scale) = net.init[gi];
        if !g.role.is_weight() {
            continue;
        }
        let bound = if gi == head {
            1.0 / libm::sqrt(fan_in as f64)
        } else {
            libm::sqrt(6.0 / fan_in as f64)
        } * scale;
        let mut rng = Stream::derived(spec.init_seed, &[tags::INIT, gi as u64]);
        for v in &mut values[g.offset..g.offset + g.len] {
            *v = rng.uniform_in(-bound, bound);
        }
    }
    Ok(ModelParameters {
        arch: spec.clone(),
        groups: net.groups,
        values,
    })
}

/// Per-group view with entrywise norms.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupView<'a> {
    pub name: &'a str,
    pub role: GroupRole,
    pub shape: &'a [usize],
    pub values: &'a [f64],
    pub l1: f64,
    pub l2: f64,
    /// Operator for weight groups, consumed by the spectral-norm probe.
    pub operator: Option<WeightOperator>,
}

impl ModelParameters {
    /// Re-attaches a flat vector to an architecture, checking the layout.
    pub fn from_values(arch: ArchSpec, values: Vec<f64>) -> Result<Self> {
        let net = build(&arch)?;
        let total: usize = net.groups.iter().map(|g| g.len).sum();
        if total != values.len() {
            return Err(shape_err!(
                "{} values given, architecture {} needs {total}",
                values.len(),
                arch.arch_tag()
            ));
        }
        let p = Self {
            arch,
            groups: net.groups,
            values,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn arch_tag(&self) -> String {
        self.arch.arch_tag()
    }

    pub fn class_count(&self) -> usize {
        self.arch.class_count
    }

    pub fn input_dim(&self) -> usize {
        self.arch.input_dim()
    }

    /// Number of weight groups (the `m` of norm products).
    pub fn layer_count(&self) -> usize {
        self.groups.iter().filter(|g| g.role.is_weight()).count()
    }

    pub fn group(&self, i: usize) -> &[f64] {
        let g = &self.groups[i];
        &self.values[g.offset..g.offset + g.len]
    }

    pub fn group_mut(&mut self, i: usize) -> &mut [f64] {
        let g = &self.groups[i];
        &mut self.values[g.offset..g.offset + g.len]
    }

    pub fn group_index(&self, name: &str) -> Option<usize> {
        self.groups.iter().position(|g| g.name == name)
    }

    pub fn with_values(&self, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), self.values.len());
        Self {
            arch: self.arch.clone(),
            groups: self.groups.clone(),
            values,
        }
    }

    /// `self + lambda * direction`.
    pub fn shifted(&self, lambda: f64, direction: &[f64]) -> Self {
        let values = self
            .values
            .iter()
            .zip(direction)
            .map(|(t, d)| t + lambda * d)
            .collect();
        self.with_values(values)
    }

    pub fn validate(&self) -> Result<()> {
        let mut names: Vec<&str> = self.groups.iter().map(|g| g.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(invalid!("duplicate group names"));
        }
        let total: usize = self.groups.iter().map(|g| g.len).sum();
        if total != self.values.len() {
            return Err(shape_err!("group sizes sum to {total}, have {}", self.values.len()));
        }
        if let Some(i) = self.values.iter().position(|v| !v.is_finite()) {
            return Err(invalid!("parameter {i} is not finite"));
        }
        Ok(())
    }

    pub fn group_views(&self) -> Vec<GroupView<'_>> {
        let net = build(&self.arch).expect("parameters carry a valid architecture");
        self.groups
            .iter()
            .enumerate()
            .map(|(i, g)| {
                let values = self.group(i);
                GroupView {
                    name: &g.name,
                    role: g.role,
                    shape: &g.shape,
                    values,
                    l1: crate::linalg::norm1(values),
                    l2: crate::linalg::norm2(values),
                    operator: net.operators[i],
                }
            })
            .collect()
    }

    fn check_inputs(&self, inputs: &[f64]) -> Result<usize> {
        let d = self.input_dim();
        if inputs.len() % d != 0 {
            return Err(shape_err!(
                "{} input values are not a multiple of the input dimension {d}",
                inputs.len()
            ));
        }
        Ok(inputs.len() / d)
    }
}

/// Named group list with per-group l1 and l2 norms.
pub fn param_group_views(params: &ModelParameters) -> Vec<GroupView<'_>> {
    params.group_views()
}

fn slots(groups: &[ParamGroup]) -> (Vec<usize>, Vec<usize>) {
    (
        groups.iter().map(|g| g.offset).collect(),
        groups.iter().map(|g| g.len).collect(),
    )
}

/// Logits, `batch x C`, row-major.
pub fn forward_logits(params: &ModelParameters, inputs: &[f64]) -> Result<Vec<f64>> {
    let n = params.check_inputs(inputs)?;
    let net = build(&params.arch)?;
    let (offsets, lens) = slots(&net.groups);
    let s = Slots {
        offsets: &offsets,
        lens: &lens,
    };
    Ok(layers::forward(&net.layers, &s, &params.values, inputs.to_vec(), n, None))
}

/// Softmax of the logits with max-subtraction.
pub fn forward_probs(params: &ModelParameters, inputs: &[f64]) -> Result<Vec<f64>> {
    let logits = forward_logits(params, inputs)?;
    Ok(softmax_rows(&logits, params.class_count()))
}

pub fn softmax_rows(logits: &[f64], c: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.chunks_exact(c) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let start = out.len();
        let mut s = 0.0;
        for &z in row {
            let e = libm::exp(z - m);
            s += e;
            out.push(e);
        }
        out[start..].iter_mut().for_each(|v| *v /= s);
    }
    out
}

pub fn log_softmax_rows(logits: &[f64], c: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.chunks_exact(c) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + libm::log(row.iter().map(|&z| libm::exp(z - m)).sum::<f64>());
        out.extend(row.iter().map(|&z| z - lse));
    }
    out
}

/// Index of the largest entry of each row (first on ties).
pub fn argmax_rows(rows: &[f64], c: usize) -> Vec<usize> {
    rows.chunks_exact(c)
        .map(|r| {
            let mut best = 0;
            for j in 1..c {
                if r[j] > r[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Forward activations retained for one backward pass.
pub struct Tape {
    net: Network,
    caches: Vec<Cache>,
    n: usize,
    offsets: Vec<usize>,
    lens: Vec<usize>,
}

impl Tape {
    pub fn batch_len(&self) -> usize {
        self.n
    }

    /// Parameter gradient of `sum(dlogits * logits)` and, optionally, the
    /// input gradient.
    pub fn backward(
        &self,
        params: &ModelParameters,
        dlogits: &[f64],
        need_input: bool,
    ) -> (Vec<f64>, Option<Vec<f64>>) {
        let mut grad = vec![0.0; params.len()];
        let dx = self.backward_into(params, dlogits, need_input, &mut grad);
        (grad, dx)
    }

    /// Accumulating variant of [`Tape::backward`].
    pub fn backward_into(
        &self,
        params: &ModelParameters,
        dlogits: &[f64],
        need_input: bool,
        grad: &mut [f64],
    ) -> Option<Vec<f64>> {
        assert_eq!(dlogits.len(), self.n * params.class_count());
        assert_eq!(grad.len(), params.len());
        let s = Slots {
            offsets: &self.offsets,
            lens: &self.lens,
        };
        layers::backward(
            &self.net.layers,
            &self.caches,
            &s,
            &params.values,
            dlogits.to_vec(),
            self.n,
            grad,
            need_input,
        )
    }
}

/// Forward pass that keeps what [`Tape::backward`] needs.
pub fn forward_tape(params: &ModelParameters, inputs: &[f64]) -> Result<(Vec<f64>, Tape)> {
    let n = params.check_inputs(inputs)?;
    let net = build(&params.arch)?;
    let (offsets, lens) = slots(&net.groups);
    let mut caches = Vec::new();
    let logits = {
        let s = Slots {
            offsets: &offsets,
            lens: &lens,
        };
        layers::forward(&net.layers, &s, &params.values, inputs.to_vec(), n, Some(&mut caches))
    };
    Ok((
        logits,
        Tape {
            net,
            caches,
            n,
            offsets,
            lens,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic_and_structured() {
        let spec = ArchSpec::linear(2, 2, 5);
        let a = init_model(&spec).unwrap();
        assert_eq!(a, init_model(&spec).unwrap());
        assert_eq!(a.groups.len(), 2);
        assert_eq!(a.groups[0].role, GroupRole::Dense);
        assert_eq!(a.groups[1].role, GroupRole::Bias);
        let (d, c) = (5, 3);
        let mlp = init_model(&ArchSpec::mlp(d, &[8], c, 0)).unwrap();
        assert_eq!(mlp.len(), d * 8 + 8 + 8 * c + c);
        assert_ne!(init_model(&ArchSpec::linear(2, 2, 6)).unwrap().values, a.values);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(init_model(&ArchSpec::linear(2, 1, 0)).is_err());
        let mut conv = ArchSpec::convnet([1, 4, 4], &[2], 0, 2, 0);
        conv.input_shape = vec![16];
        assert!(matches!(init_model(&conv), Err(Error::Unsupported(_))));
    }

    #[test]
    fn linear_forward_matches_hand_computation() {
        let mut p = init_model(&ArchSpec::linear(2, 2, 0)).unwrap();
        p.values.iter_mut().for_each(|v| *v = 0.0);
        assert_eq!(forward_logits(&p, &[0.3, 0.7]).unwrap(), vec![0.0, 0.0]);
        // W = [[1, 2], [3, 4]], b = [0.5, -0.5]
        p.values = vec![1.0, 2.0, 3.0, 4.0, 0.5, -0.5];
        let z = forward_logits(&p, &[0.1, 0.2, 1.0, 0.0]).unwrap();
        let want = [0.1 + 0.4 + 0.5, 0.3 + 0.8 - 0.5, 1.5, 2.5];
        for (a, b) in z.iter().zip(want) {
            assert!((a - b).abs() < 1e-14);
        }
        assert!(forward_logits(&p, &[0.1, 0.2, 0.3]).is_err());
    }

    #[test]
    fn softmax_is_stable() {
        assert_eq!(softmax_rows(&[0.0; 4], 4), vec![0.25; 4]);
        assert_eq!(softmax_rows(&[1000.0, 0.0], 2), vec![1.0, 0.0]);
        let ls = log_softmax_rows(&[1000.0, 0.0], 2);
        assert_eq!(ls[0], 0.0);
        assert_eq!(ls[1], -1000.0);
    }

    #[test]
    fn group_views_norms() {
        let mut p = init_model(&ArchSpec::linear(3, 3, 0).without_bias()).unwrap();
        p.values = vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        let v = param_group_views(&p);
        assert_eq!(v[0].l1, 3.0);
        assert!((v[0].l2 - 3f64.sqrt()).abs() < 1e-15);
        p.values.iter_mut().for_each(|x| *x = 0.0);
        let v = param_group_views(&p);
        assert_eq!((v[0].l1, v[0].l2), (0.0, 0.0));
    }

    #[test]
    fn arch_tags_distinguish_families() {
        let a = ArchSpec::mlp(4, &[8], 3, 0).arch_tag();
        let b = ArchSpec::mlp(4, &[9], 3, 0).arch_tag();
        assert_ne!(a, b);
        assert_eq!(a, ArchSpec::mlp(4, &[8], 3, 99).arch_tag());
    }

    #[test]
    fn resnet_builds_and_runs() {
        let spec = ArchSpec::resnet_small([3, 8, 8], &[4, 8], 1, 10, 1);
        let p = init_model(&spec).unwrap();
        assert!(p.group_index("stage1.block0.shortcut.weight").is_some());
        let x = vec![0.5; 2 * 3 * 64];
        let z = forward_logits(&p, &x).unwrap();
        assert_eq!(z.len(), 20);
        assert!(z.iter().all(|v| v.is_finite()));
    }
}
