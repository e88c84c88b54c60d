//! Parameterised layers built on the graph operations.

use ndarray::{ArrayD, IxDyn};
use rand::Rng;

use crate::conv;
use crate::graph::{concat, Var};
use crate::norm;
use crate::params::{fan_in_uniform, uniform, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::scan::selective_scan;

pub const LEAKY_SLOPE: f64 = 0.1;

/// Leaky ReLU with the shared negative slope.
pub fn lrelu<T: Scalar>(x: Var<'_, T>) -> Var<'_, T> {
    x.leaky_relu(T::c(LEAKY_SLOPE))
}

/// How a convolution pads its input along one spatial axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// No padding.
    Valid,
    /// Output length equals input length at stride 1; odd totals put the
    /// extra sample on the right.
    Same,
    /// All padding on the left, so outputs never see later inputs.
    Causal,
    Explicit(usize, usize),
}

impl Padding {
    pub fn amounts(self, kernel: usize, dilation: usize) -> (usize, usize) {
        let total = dilation * (kernel - 1);
        match self {
            Padding::Valid => (0, 0),
            Padding::Same => (total / 2, total - total / 2),
            Padding::Causal => (total, 0),
            Padding::Explicit(l, r) => (l, r),
        }
    }
}

/// Layer kinds whose shape arithmetic is described by a [`LayerSpec`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv1d,
    Conv2d,
    TransposedConv1d,
    DepthwiseConv1d,
    Pointwise,
    BatchNorm,
    LayerNorm,
    LeakyRelu,
    Gelu,
    MaxPool1d,
    MambaBlock,
}

/// Declarative description of one layer, used for shape checks.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub kernel: Vec<usize>,
    pub stride: usize,
    pub dilation: usize,
    pub channels_in: usize,
    pub channels_out: usize,
    pub padding: Padding,
}

impl LayerSpec {
    pub fn new(kind: LayerKind, channels_in: usize, channels_out: usize) -> Self {
        LayerSpec {
            kind,
            kernel: Vec::new(),
            stride: 1,
            dilation: 1,
            channels_in,
            channels_out,
            padding: Padding::Valid,
        }
    }

    pub fn kernel(mut self, k: &[usize]) -> Self {
        self.kernel = k.to_vec();
        self
    }

    pub fn stride(mut self, s: usize) -> Self {
        self.stride = s;
        self
    }

    pub fn dilation(mut self, d: usize) -> Self {
        self.dilation = d;
        self
    }

    pub fn padding(mut self, p: Padding) -> Self {
        self.padding = p;
        self
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.stride == 0 || self.dilation == 0 {
            return Err(format!("{:?}: stride and dilation must be >= 1", self.kind));
        }
        let need_kernel = matches!(
            self.kind,
            LayerKind::Conv1d | LayerKind::Conv2d | LayerKind::TransposedConv1d | LayerKind::DepthwiseConv1d | LayerKind::MaxPool1d
        );
        if need_kernel && (self.kernel.is_empty() || self.kernel.contains(&0)) {
            return Err(format!("{:?}: kernel size required", self.kind));
        }
        if self.kind == LayerKind::Conv2d && self.kernel.len() != 2 {
            return Err("conv2d needs a two-dimensional kernel".into());
        }
        if self.kind == LayerKind::TransposedConv1d && self.kernel[0] != 2 * self.stride {
            return Err(format!(
                "transposed conv kernel {} must be twice the stride {}",
                self.kernel[0], self.stride
            ));
        }
        if self.kind == LayerKind::DepthwiseConv1d && self.channels_in != self.channels_out {
            return Err("depthwise conv keeps the channel count".into());
        }
        Ok(())
    }

    /// Output length along the (last) spatial axis, `None` when the kernel
    /// does not fit.
    pub fn output_len(&self, n: usize) -> Option<usize> {
        let k = self.kernel.last().copied().unwrap_or(1);
        match self.kind {
            LayerKind::TransposedConv1d => Some(n * self.stride),
            LayerKind::MaxPool1d => Some(n / k),
            LayerKind::Conv1d | LayerKind::Conv2d | LayerKind::DepthwiseConv1d => {
                let (l, r) = self.padding.amounts(k, self.dilation);
                let span = self.dilation * (k - 1) + 1;
                (n + l + r >= span).then(|| (n + l + r - span) / self.stride + 1)
            }
            _ => Some(n),
        }
    }
}

fn zeros<T: Scalar>(shape: &[usize]) -> ArrayD<T> {
    ArrayD::zeros(IxDyn(shape))
}

fn ones<T: Scalar>(shape: &[usize]) -> ArrayD<T> {
    ArrayD::ones(IxDyn(shape))
}

#[derive(Debug, Clone)]
pub struct Conv1d {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub stride: usize,
    pub dilation: usize,
    pub pad: (usize, usize),
}

impl Conv1d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        dilation: usize,
        padding: Padding,
        rng: &mut impl Rng,
    ) -> Self {
        let fan = cin * k;
        Conv1d {
            w: store.add(format!("{name}.weight"), fan_in_uniform(&[cout, cin, k], fan, rng), true),
            b: Some(store.add(format!("{name}.bias"), fan_in_uniform(&[cout], fan, rng), true)),
            stride,
            dilation,
            pad: padding.amounts(k, dilation),
        }
    }

    pub fn forward<'g, T: Scalar>(&self, x: Var<'g, T>) -> Var<'g, T> {
        let g = x.graph();
        conv::conv1d(x, g.param(self.w), self.b.map(|b| g.param(b)), self.stride, self.dilation, self.pad)
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub stride: (usize, usize),
    pub dilation: (usize, usize),
    pub pad: (usize, usize, usize, usize),
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        k: (usize, usize),
        stride: (usize, usize),
        dilation: (usize, usize),
        padding: (Padding, Padding),
        rng: &mut impl Rng,
    ) -> Self {
        let fan = cin * k.0 * k.1;
        let (pt, pb) = padding.0.amounts(k.0, dilation.0);
        let (pl, pr) = padding.1.amounts(k.1, dilation.1);
        Conv2d {
            w: store.add(format!("{name}.weight"), fan_in_uniform(&[cout, cin, k.0, k.1], fan, rng), true),
            b: Some(store.add(format!("{name}.bias"), fan_in_uniform(&[cout], fan, rng), true)),
            stride,
            dilation,
            pad: (pt, pb, pl, pr),
        }
    }

    pub fn forward<'g, T: Scalar>(&self, x: Var<'g, T>) -> Var<'g, T> {
        let g = x.graph();
        conv::conv2d(x, g.param(self.w), self.b.map(|b| g.param(b)), self.stride, self.dilation, self.pad)
    }
}

/// Transposed 1-D convolution with kernel `2 * stride` and a symmetric crop,
/// so `L` input frames become exactly `L * stride` samples.
#[derive(Debug, Clone)]
pub struct ConvTranspose1d {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub stride: usize,
    pub kernel: usize,
}

impl ConvTranspose1d {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, cin: usize, cout: usize, stride: usize, rng: &mut impl Rng) -> Self {
        Self::with_kernel(store, name, cin, cout, stride, 2 * stride, rng).expect("kernel is twice the stride")
    }

    /// Any kernel at least as long as the stride; the upsampler only uses
    /// [`ConvTranspose1d::new`].
    pub fn with_kernel<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        stride: usize,
        kernel: usize,
        rng: &mut impl Rng,
    ) -> Result<Self, String> {
        if kernel < stride || (kernel - stride) % 2 != 0 {
            return Err(format!("kernel {kernel} incompatible with stride {stride}"));
        }
        let fan = cin * kernel / stride;
        Ok(ConvTranspose1d {
            w: store.add(format!("{name}.weight"), fan_in_uniform(&[cin, cout, kernel], fan, rng), true),
            b: Some(store.add(format!("{name}.bias"), fan_in_uniform(&[cout], fan, rng), true)),
            stride,
            kernel,
        })
    }

    pub fn forward<'g, T: Scalar>(&self, x: Var<'g, T>) -> Var<'g, T> {
        let g = x.graph();
        let len = x.shape()[2] * self.stride;
        let crop = (self.kernel - self.stride) / 2;
        conv::conv_transpose1d(x, g.param(self.w), self.b.map(|b| g.param(b)), self.stride, crop, len)
    }
}

/// Transposed 2-D convolution producing an explicitly sized output.
#[derive(Debug, Clone)]
pub struct ConvTranspose2d {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub stride: (usize, usize),
    pub crop: (usize, usize),
}

impl ConvTranspose2d {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        k: (usize, usize),
        stride: (usize, usize),
        crop: (usize, usize),
        rng: &mut impl Rng,
    ) -> Self {
        let fan = cin * k.0 * k.1 / (stride.0 * stride.1);
        ConvTranspose2d {
            w: store.add(format!("{name}.weight"), fan_in_uniform(&[cin, cout, k.0, k.1], fan.max(1), rng), true),
            b: Some(store.add(format!("{name}.bias"), fan_in_uniform(&[cout], fan.max(1), rng), true)),
            stride,
            crop,
        }
    }

    pub fn forward<'g, T: Scalar>(&self, x: Var<'g, T>, out_hw: (usize, usize)) -> Var<'g, T> {
        let g = x.graph();
        conv::conv_transpose2d(x, g.param(self.w), self.b.map(|b| g.param(b)), self.stride, self.crop, out_hw)
    }
}

#[derive(Debug, Clone)]
pub struct DepthwiseConv1d {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub pad: (usize, usize),
}

impl DepthwiseConv1d {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, c: usize, k: usize, padding: Padding, rng: &mut impl Rng) -> Self {
        DepthwiseConv1d {
            w: store.add(format!("{name}.weight"), fan_in_uniform(&[c, k], k, rng), true),
            b: Some(store.add(format!("{name}.bias"), fan_in_uniform(&[c], k, rng), true)),
            pad: padding.amounts(k, 1),
        }
    }

    pub fn forward<'g, T: Scalar>(&self, x: Var<'g, T>) -> Var<'g, T> {
        let g = x.graph();
        conv::depthwise_conv1d(x, g.param(self.w), self.b.map(|b| g.param(b)), self.pad)
    }
}

/// Dense map over the last axis (the pointwise layer).
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, din: usize, dout: usize, bias: bool, rng: &mut impl Rng) -> Self {
        Linear {
            w: store.add(format!("{name}.weight"), fan_in_uniform(&[din, dout], din, rng), true),
            b: bias.then(|| store.add(format!("{name}.bias"), fan_in_uniform(&[dout], din, rng), true)),
        }
    }

    /// Zero weights and bias, so the layer starts as the zero map.
    pub fn zeroed<T: Scalar>(store: &mut ParamStore<T>, name: &str, din: usize, dout: usize) -> Self {
        Linear {
            w: store.add(format!("{name}.weight"), zeros(&[din, dout]), true),
            b: Some(store.add(format!("{name}.bias"), zeros(&[dout]), true)),
        }
    }

    pub fn forward<'g, T: Scalar>(&self, x: Var<'g, T>) -> Var<'g, T> {
        let g = x.graph();
        conv::linear(x, g.param(self.w), self.b.map(|b| g.param(b)))
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub mean: ParamId,
    pub var: ParamId,
}

impl BatchNorm {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, c: usize) -> Self {
        BatchNorm {
            gamma: store.add(format!("{name}.gamma"), ones(&[c]), true),
            beta: store.add(format!("{name}.beta"), zeros(&[c]), true),
            mean: store.add(format!("{name}.running_mean"), zeros(&[c]), false),
            var: store.add(format!("{name}.running_var"), ones(&[c]), false),
        }
    }

    pub fn forward<'g, T: Scalar>(&self, x: Var<'g, T>) -> Var<'g, T> {
        let g = x.graph();
        norm::batch_norm(
            x,
            g.param(self.gamma),
            g.param(self.beta),
            (self.mean, self.var),
            norm::BATCH_NORM_EPS,
            norm::BATCH_NORM_MOMENTUM,
        )
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, d: usize) -> Self {
        LayerNorm {
            gamma: store.add(format!("{name}.gamma"), ones(&[d]), true),
            beta: store.add(format!("{name}.beta"), zeros(&[d]), true),
        }
    }

    pub fn forward<'g, T: Scalar>(&self, x: Var<'g, T>) -> Var<'g, T> {
        let g = x.graph();
        norm::layer_norm(x, g.param(self.gamma), g.param(self.beta), norm::LAYER_NORM_EPS)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MambaConfig {
    pub d_model: usize,
    pub d_state: usize,
    pub expand: usize,
    pub d_conv: usize,
}

impl MambaConfig {
    pub fn new(d_model: usize) -> Self {
        MambaConfig {
            d_model,
            d_state: 16,
            expand: 1,
            d_conv: 4,
        }
    }

    pub fn d_inner(&self) -> usize {
        self.expand * self.d_model
    }

    pub fn dt_rank(&self) -> usize {
        self.d_model.div_ceil(16)
    }
}

/// Pre-norm selective state-space block with a residual connection:
/// `x + out(scan(silu(conv(in_x))) * silu(in_z))`.
#[derive(Debug, Clone)]
pub struct MambaBlock {
    pub config: MambaConfig,
    pub norm: LayerNorm,
    pub in_proj: Linear,
    pub conv: DepthwiseConv1d,
    pub x_proj: Linear,
    pub dt_proj: Linear,
    pub a_log: ParamId,
    pub d: ParamId,
    pub out_proj: Linear,
}

pub const DT_MIN: f64 = 1e-3;
pub const DT_MAX: f64 = 0.1;

impl MambaBlock {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, config: MambaConfig, rng: &mut impl Rng) -> Self {
        let (dm, di, ns, r) = (config.d_model, config.d_inner(), config.d_state, config.dt_rank());
        let norm = LayerNorm::new(store, &format!("{name}.norm"), dm);
        let in_proj = Linear::new(store, &format!("{name}.in_proj"), dm, 2 * di, false, rng);
        let conv = DepthwiseConv1d {
            w: store.add(format!("{name}.conv.weight"), fan_in_uniform(&[di, config.d_conv], config.d_conv, rng), true),
            b: Some(store.add(format!("{name}.conv.bias"), zeros(&[di]), true)),
            pad: Padding::Causal.amounts(config.d_conv, 1),
        };
        let x_proj = Linear::new(store, &format!("{name}.x_proj"), di, r + 2 * ns, false, rng);
        let dt_w = uniform(&[r, di], 1.0 / (r as f64).sqrt(), rng);
        // Step sizes start log-uniform in [DT_MIN, DT_MAX]; the bias is the
        // inverse softplus of the drawn value.
        let dt_b = ArrayD::from_shape_fn(IxDyn(&[di]), |_| {
            let u: f64 = rng.gen();
            let dt = (DT_MIN.ln() + u * (DT_MAX.ln() - DT_MIN.ln())).exp();
            T::c(dt + (-(-dt).exp_m1()).ln())
        });
        let dt_proj = Linear {
            w: store.add(format!("{name}.dt_proj.weight"), dt_w, true),
            b: Some(store.add(format!("{name}.dt_proj.bias"), dt_b, true)),
        };
        let a_log = store.add(
            format!("{name}.a_log"),
            ArrayD::from_shape_fn(IxDyn(&[di, ns]), |i| T::c(((i[1] + 1) as f64).ln())),
            true,
        );
        let d = store.add(format!("{name}.d"), ones(&[di]), true);
        let out_proj = Linear::new(store, &format!("{name}.out_proj"), di, dm, false, rng);
        MambaBlock {
            config,
            norm,
            in_proj,
            conv,
            x_proj,
            dt_proj,
            a_log,
            d,
            out_proj,
        }
    }

    /// `x [B, L, d_model]` to the same shape.
    pub fn forward<'g, T: Scalar>(&self, x: Var<'g, T>) -> Var<'g, T> {
        let g = x.graph();
        let shape = x.shape();
        assert_eq!(shape.len(), 3, "mamba input must be [B, L, d]");
        assert_eq!(shape[2], self.config.d_model, "mamba width mismatch");
        let (di, ns, r) = (self.config.d_inner(), self.config.d_state, self.config.dt_rank());
        let l = shape[1];
        let h = self.norm.forward(x);
        let xz = self.in_proj.forward(h);
        let xi = xz.narrow(2, 0, di);
        let z = xz.narrow(2, di, di);
        let xc = self.conv.forward(xi.permute(&[0, 2, 1])).narrow(2, 0, l);
        let u = xc.permute(&[0, 2, 1]).silu();
        let dbl = self.x_proj.forward(u);
        let dt = self.dt_proj.forward(dbl.narrow(2, 0, r)).softplus();
        let bm = dbl.narrow(2, r, ns);
        let cm = dbl.narrow(2, r + ns, ns);
        let a = g.param(self.a_log).exp().neg();
        let y = selective_scan(u, dt, a, bm, cm, g.param(self.d));
        let y = y.mul(z.silu());
        x.add(self.out_proj.forward(y))
    }
}

/// Channel concatenation for `[B, C, ...]` tensors.
pub fn cat_channels<'g, T: Scalar>(xs: &[Var<'g, T>]) -> Var<'g, T> {
    concat(xs, 1)
}
