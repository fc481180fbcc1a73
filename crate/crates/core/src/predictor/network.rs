use crate::error::{Error, Result};

use super::{LayerSpec, PredictorConfig};

/// Location of one parameter tensor inside the flat weight vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamBlock {
    pub name: String,
    pub offset: usize,
    pub shape: Vec<usize>,
    /// Inputs feeding each output unit; used for weight initialisation.
    pub fan_in: usize,
    pub is_bias: bool,
}

impl ParamBlock {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Op {
    Conv {
        cin: usize,
        cout: usize,
        h: usize,
        w: usize,
        weight: usize,
        bias: usize,
    },
    Relu {
        len: usize,
    },
    MaxPool {
        c: usize,
        h: usize,
        w: usize,
    },
    AvgPool {
        c: usize,
        h: usize,
        w: usize,
    },
    Dense {
        input: usize,
        output: usize,
        weight: usize,
        bias: usize,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Conv { .. } => "conv3x3",
            Op::Relu { .. } => "relu",
            Op::MaxPool { .. } => "maxpool2",
            Op::AvgPool { .. } => "avgpool2",
            Op::Dense { .. } => "dense",
        }
    }

    fn output_len(&self) -> usize {
        match *self {
            Op::Conv { cout, h, w, .. } => cout * h * w,
            Op::Relu { len } => len,
            Op::MaxPool { c, h, w } | Op::AvgPool { c, h, w } => c * (h / 2) * (w / 2),
            Op::Dense { output, .. } => output,
        }
    }
}

/// Compiled feed-forward network over planar `c x d x d` inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    ops: Vec<Op>,
    params: Vec<ParamBlock>,
    param_count: usize,
    input_len: usize,
    output_len: usize,
}

/// Inputs of every op, kept for the backward pass.
pub struct ForwardCache {
    inputs: Vec<Vec<f64>>,
}

impl Network {
    pub fn new(config: &PredictorConfig) -> Result<Self> {
        let mut ops = Vec::new();
        let mut params = Vec::new();
        let mut offset = 0usize;
        let mut alloc = |name: String, shape: Vec<usize>, fan_in: usize, is_bias: bool, params: &mut Vec<ParamBlock>| {
            let block = ParamBlock {
                name,
                offset,
                shape,
                fan_in,
                is_bias,
            };
            offset += block.len();
            let at = block.offset;
            params.push(block);
            at
        };

        let (mut c, mut h, mut w) = (config.channels, config.input_size, config.input_size);
        // once flattened, spatial dims are gone
        let mut flat: Option<usize> = None;
        for (li, spec) in config.architecture.iter().enumerate() {
            match *spec {
                LayerSpec::Conv { out_channels } => {
                    if flat.is_some() {
                        return Err(Error::config(format!("layer {li}: convolution after a dense layer")));
                    }
                    let weight = alloc(
                        format!("l{li}.conv.weight"),
                        vec![out_channels, c, 3, 3],
                        c * 9,
                        false,
                        &mut params,
                    );
                    let bias = alloc(format!("l{li}.conv.bias"), vec![out_channels], c * 9, true, &mut params);
                    ops.push(Op::Conv {
                        cin: c,
                        cout: out_channels,
                        h,
                        w,
                        weight,
                        bias,
                    });
                    c = out_channels;
                    ops.push(Op::Relu { len: c * h * w });
                }
                LayerSpec::MaxPool | LayerSpec::AvgPool => {
                    if flat.is_some() {
                        return Err(Error::config(format!("layer {li}: pooling after a dense layer")));
                    }
                    if h % 2 != 0 || w % 2 != 0 || h < 2 {
                        return Err(Error::config(format!(
                            "layer {li}: cannot pool a {h}x{w} feature map"
                        )));
                    }
                    ops.push(if *spec == LayerSpec::MaxPool {
                        Op::MaxPool { c, h, w }
                    } else {
                        Op::AvgPool { c, h, w }
                    });
                    h /= 2;
                    w /= 2;
                }
                LayerSpec::Dense { units } => {
                    let input = flat.unwrap_or(c * h * w);
                    let weight = alloc(format!("l{li}.dense.weight"), vec![units, input], input, false, &mut params);
                    let bias = alloc(format!("l{li}.dense.bias"), vec![units], input, true, &mut params);
                    ops.push(Op::Dense {
                        input,
                        output: units,
                        weight,
                        bias,
                    });
                    ops.push(Op::Relu { len: units });
                    flat = Some(units);
                }
            }
        }
        let input = flat.unwrap_or(c * h * w);
        let output = config.head_width();
        let weight = alloc("head.weight".into(), vec![output, input], input, false, &mut params);
        let bias = alloc("head.bias".into(), vec![output], input, true, &mut params);
        ops.push(Op::Dense {
            input,
            output,
            weight,
            bias,
        });

        Ok(Network {
            ops,
            params,
            param_count: offset,
            input_len: config.channels * config.input_size * config.input_size,
            output_len: output,
        })
    }

    pub fn param_count(&self) -> usize {
        self.param_count
    }

    pub fn params(&self) -> &[ParamBlock] {
        &self.params
    }

    pub fn input_len(&self) -> usize {
        self.input_len
    }

    pub fn output_len(&self) -> usize {
        self.output_len
    }

    fn check_input(&self, weights: &[f64], input: &[f64]) -> Result<()> {
        if input.len() != self.input_len {
            return Err(Error::data(format!(
                "input has {} values, network expects {}",
                input.len(),
                self.input_len
            )));
        }
        if weights.len() != self.param_count {
            return Err(Error::data(format!(
                "weight vector has {} values, network expects {}",
                weights.len(),
                self.param_count
            )));
        }
        Ok(())
    }

    /// Output logits for one input.
    pub fn forward(&self, weights: &[f64], input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(weights, input)?;
        let mut x = input.to_vec();
        for (i, op) in self.ops.iter().enumerate() {
            x = self.apply(op, weights, &x);
            self.check_finite(i, op, &x)?;
        }
        Ok(x)
    }

    /// Logits plus the cache needed by [`Network::backward`].
    pub fn forward_cached(&self, weights: &[f64], input: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
        self.check_input(weights, input)?;
        let mut inputs = Vec::with_capacity(self.ops.len());
        let mut x = input.to_vec();
        for (i, op) in self.ops.iter().enumerate() {
            let y = self.apply(op, weights, &x);
            self.check_finite(i, op, &y)?;
            inputs.push(std::mem::replace(&mut x, y));
        }
        Ok((x, ForwardCache { inputs }))
    }

    /// Accumulates `d loss / d weights` into `grad` given `d loss / d logits`.
    pub fn backward(&self, weights: &[f64], cache: &ForwardCache, d_logits: &[f64], grad: &mut [f64]) {
        debug_assert_eq!(grad.len(), self.param_count);
        let mut g = d_logits.to_vec();
        for (i, op) in self.ops.iter().enumerate().rev() {
            let x = &cache.inputs[i];
            g = match *op {
                Op::Conv {
                    cin,
                    cout,
                    h,
                    w,
                    weight,
                    bias,
                } => {
                    let (gw, gb) = split_grad(grad, weight, cout * cin * 9, bias, cout);
                    conv_backward(x, cin, cout, h, w, &weights[weight..weight + cout * cin * 9], &g, gw, gb, i > 0)
                }
                Op::Relu { .. } => g.iter().zip(x).map(|(&gv, &xv)| if xv > 0.0 { gv } else { 0.0 }).collect(),
                Op::MaxPool { c, h, w } => maxpool_backward(x, c, h, w, &g),
                Op::AvgPool { c, h, w } => avgpool_backward(c, h, w, &g),
                Op::Dense {
                    input,
                    output,
                    weight,
                    bias,
                } => {
                    let (gw, gb) = split_grad(grad, weight, output * input, bias, output);
                    dense_backward(x, input, output, &weights[weight..weight + output * input], &g, gw, gb, i > 0)
                }
            };
        }
    }

    fn apply(&self, op: &Op, weights: &[f64], x: &[f64]) -> Vec<f64> {
        match *op {
            Op::Conv {
                cin,
                cout,
                h,
                w,
                weight,
                bias,
            } => conv_forward(
                x,
                cin,
                cout,
                h,
                w,
                &weights[weight..weight + cout * cin * 9],
                &weights[bias..bias + cout],
            ),
            Op::Relu { .. } => x.iter().map(|&v| v.max(0.0)).collect(),
            Op::MaxPool { c, h, w } => maxpool_forward(x, c, h, w),
            Op::AvgPool { c, h, w } => avgpool_forward(x, c, h, w),
            Op::Dense {
                input,
                output,
                weight,
                bias,
            } => dense_forward(
                x,
                input,
                output,
                &weights[weight..weight + output * input],
                &weights[bias..bias + output],
            ),
        }
    }

    fn check_finite(&self, index: usize, op: &Op, out: &[f64]) -> Result<()> {
        debug_assert_eq!(out.len(), op.output_len());
        if let Some(pos) = out.iter().position(|v| !v.is_finite()) {
            return Err(Error::numeric(
                format!("layer {index} ({})", op.name()),
                format!("non-finite activation {} at output {pos}", out[pos]),
            ));
        }
        Ok(())
    }
}

fn split_grad(grad: &mut [f64], weight: usize, wlen: usize, bias: usize, blen: usize) -> (&mut [f64], &mut [f64]) {
    // biases are allocated right after their weights
    debug_assert_eq!(weight + wlen, bias);
    let (wpart, rest) = grad[weight..bias + blen].split_at_mut(wlen);
    (wpart, rest)
}

fn pad(x: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let (ph, pw) = (h + 2, w + 2);
    let mut out = vec![0.0; c * ph * pw];
    for ch in 0..c {
        for y in 0..h {
            let dst = (ch * ph + y + 1) * pw + 1;
            out[dst..dst + w].copy_from_slice(&x[(ch * h + y) * w..(ch * h + y + 1) * w]);
        }
    }
    out
}

fn conv_forward(x: &[f64], cin: usize, cout: usize, h: usize, w: usize, wt: &[f64], bias: &[f64]) -> Vec<f64> {
    let (ph, pw) = (h + 2, w + 2);
    let padded = pad(x, cin, h, w);
    let mut out = vec![0.0; cout * h * w];
    for (o, plane) in out.chunks_exact_mut(h * w).enumerate() {
        plane.fill(bias[o]);
        for i in 0..cin {
            let src = &padded[i * ph * pw..(i + 1) * ph * pw];
            let k = &wt[(o * cin + i) * 9..(o * cin + i + 1) * 9];
            for y in 0..h {
                let dst = &mut plane[y * w..(y + 1) * w];
                for ky in 0..3 {
                    let row = &src[(y + ky) * pw..(y + ky) * pw + pw];
                    let (k0, k1, k2) = (k[ky * 3], k[ky * 3 + 1], k[ky * 3 + 2]);
                    for (xi, d) in dst.iter_mut().enumerate() {
                        *d += k0 * row[xi] + k1 * row[xi + 1] + k2 * row[xi + 2];
                    }
                }
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn conv_backward(
    x: &[f64],
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
    wt: &[f64],
    g: &[f64],
    gw: &mut [f64],
    gb: &mut [f64],
    need_input_grad: bool,
) -> Vec<f64> {
    let (ph, pw) = (h + 2, w + 2);
    let padded = pad(x, cin, h, w);
    let mut dpad = if need_input_grad { vec![0.0; cin * ph * pw] } else { Vec::new() };
    for o in 0..cout {
        let go = &g[o * h * w..(o + 1) * h * w];
        gb[o] += go.iter().sum::<f64>();
        for i in 0..cin {
            let src = &padded[i * ph * pw..(i + 1) * ph * pw];
            let base = (o * cin + i) * 9;
            let mut acc = [0.0f64; 9];
            for y in 0..h {
                let grow = &go[y * w..(y + 1) * w];
                for ky in 0..3 {
                    let row = &src[(y + ky) * pw..(y + ky) * pw + pw];
                    let (mut a0, mut a1, mut a2) = (0.0, 0.0, 0.0);
                    for (xi, &gv) in grow.iter().enumerate() {
                        a0 += gv * row[xi];
                        a1 += gv * row[xi + 1];
                        a2 += gv * row[xi + 2];
                    }
                    acc[ky * 3] += a0;
                    acc[ky * 3 + 1] += a1;
                    acc[ky * 3 + 2] += a2;
                }
            }
            for (t, a) in acc.iter().enumerate() {
                gw[base + t] += a;
            }
            if need_input_grad {
                let k = &wt[base..base + 9];
                let dsrc = &mut dpad[i * ph * pw..(i + 1) * ph * pw];
                for y in 0..h {
                    let grow = &go[y * w..(y + 1) * w];
                    for ky in 0..3 {
                        let row = &mut dsrc[(y + ky) * pw..(y + ky) * pw + pw];
                        let (k0, k1, k2) = (k[ky * 3], k[ky * 3 + 1], k[ky * 3 + 2]);
                        for (xi, &gv) in grow.iter().enumerate() {
                            row[xi] += k0 * gv;
                            row[xi + 1] += k1 * gv;
                            row[xi + 2] += k2 * gv;
                        }
                    }
                }
            }
        }
    }
    if !need_input_grad {
        return Vec::new();
    }
    let mut dx = vec![0.0; cin * h * w];
    for ch in 0..cin {
        for y in 0..h {
            let src = (ch * ph + y + 1) * pw + 1;
            dx[(ch * h + y) * w..(ch * h + y + 1) * w].copy_from_slice(&dpad[src..src + w]);
        }
    }
    dx
}

fn maxpool_forward(x: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let p = &x[ch * h * w..(ch + 1) * h * w];
        for y in 0..oh {
            for xo in 0..ow {
                let i = 2 * y * w + 2 * xo;
                out.push(p[i].max(p[i + 1]).max(p[i + w]).max(p[i + w + 1]));
            }
        }
    }
    out
}

fn maxpool_backward(x: &[f64], c: usize, h: usize, w: usize, g: &[f64]) -> Vec<f64> {
    let (oh, ow) = (h / 2, w / 2);
    let mut dx = vec![0.0; c * h * w];
    for ch in 0..c {
        let p = &x[ch * h * w..(ch + 1) * h * w];
        for y in 0..oh {
            for xo in 0..ow {
                let i = 2 * y * w + 2 * xo;
                // first maximum in scan order receives the gradient
                let mut best = i;
                for j in [i + 1, i + w, i + w + 1] {
                    if p[j] > p[best] {
                        best = j;
                    }
                }
                dx[ch * h * w + best] += g[(ch * oh + y) * ow + xo];
            }
        }
    }
    dx
}

fn avgpool_forward(x: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let p = &x[ch * h * w..(ch + 1) * h * w];
        for y in 0..oh {
            for xo in 0..ow {
                let i = 2 * y * w + 2 * xo;
                out.push(0.25 * (p[i] + p[i + 1] + p[i + w] + p[i + w + 1]));
            }
        }
    }
    out
}

fn avgpool_backward(c: usize, h: usize, w: usize, g: &[f64]) -> Vec<f64> {
    let (oh, ow) = (h / 2, w / 2);
    let mut dx = vec![0.0; c * h * w];
    for ch in 0..c {
        for y in 0..oh {
            for xo in 0..ow {
                let v = 0.25 * g[(ch * oh + y) * ow + xo];
                let i = ch * h * w + 2 * y * w + 2 * xo;
                dx[i] += v;
                dx[i + 1] += v;
                dx[i + w] += v;
                dx[i + w + 1] += v;
            }
        }
    }
    dx
}

fn dense_forward(x: &[f64], input: usize, output: usize, wt: &[f64], bias: &[f64]) -> Vec<f64> {
    (0..output)
        .map(|o| {
            let row = &wt[o * input..(o + 1) * input];
            bias[o] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn dense_backward(
    x: &[f64],
    input: usize,
    output: usize,
    wt: &[f64],
    g: &[f64],
    gw: &mut [f64],
    gb: &mut [f64],
    need_input_grad: bool,
) -> Vec<f64> {
    let mut dx = if need_input_grad { vec![0.0; input] } else { Vec::new() };
    for o in 0..output {
        let go = g[o];
        gb[o] += go;
        if go == 0.0 {
            continue;
        }
        for (a, &xv) in gw[o * input..(o + 1) * input].iter_mut().zip(x) {
            *a += go * xv;
        }
        if need_input_grad {
            for (d, &wv) in dx.iter_mut().zip(&wt[o * input..(o + 1) * input]) {
                *d += go * wv;
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictor::parse_architecture;

    fn tiny() -> PredictorConfig {
        let mut c = PredictorConfig::new(8, 1, 2);
        c.channels = 1;
        c.architecture = parse_architecture("c2,p,f3").unwrap();
        c
    }

    #[test]
    fn registry_is_contiguous() {
        let net = Network::new(&tiny()).unwrap();
        let mut at = 0;
        for p in net.params() {
            assert_eq!(p.offset, at);
            at += p.len();
        }
        assert_eq!(at, net.param_count());
        // conv 2*1*9+2, dense 3*32+3, head 32*3+32
        assert_eq!(net.param_count(), 20 + 99 + 128);
        assert_eq!(net.output_len(), 32);
    }

    #[test]
    fn conv_matches_direct_definition() {
        let (cin, cout, h, w) = (2, 3, 5, 4);
        let x: Vec<f64> = (0..cin * h * w).map(|i| ((i * 7) % 11) as f64 - 5.0).collect();
        let wt: Vec<f64> = (0..cout * cin * 9).map(|i| ((i * 5) % 13) as f64 * 0.1 - 0.6).collect();
        let b = [0.5, -0.25, 1.0];
        let out = conv_forward(&x, cin, cout, h, w, &wt, &b);
        for o in 0..cout {
            for y in 0..h {
                for xx in 0..w {
                    let mut s = b[o];
                    for i in 0..cin {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let (sy, sx) = (y as isize + ky as isize - 1, xx as isize + kx as isize - 1);
                                if sy >= 0 && sx >= 0 && (sy as usize) < h && (sx as usize) < w {
                                    s += wt[((o * cin + i) * 3 + ky) * 3 + kx]
                                        * x[(i * h + sy as usize) * w + sx as usize];
                                }
                            }
                        }
                    }
                    assert!((out[(o * h + y) * w + xx] - s).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn pooling_shapes_and_values() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0];
        assert_eq!(maxpool_forward(&x, 1, 2, 4), vec![6.0, 8.0]);
        assert_eq!(avgpool_forward(&x, 1, 2, 4), vec![3.5, 5.5]);
        let dx = maxpool_backward(&x, 1, 2, 4, &[1.0, 2.0]);
        assert_eq!(dx, vec![0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 2.0]);
    }

    #[test]
    fn non_finite_activation_names_the_layer() {
        let net = Network::new(&tiny()).unwrap();
        let mut w = vec![0.0; net.param_count()];
        w[0] = f64::INFINITY;
        let err = net.forward(&w, &[1.0; 64]).unwrap_err();
        match err {
            Error::Numeric { location, .. } => assert!(location.contains("layer 0"), "{location}"),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn wrong_input_length() {
        let net = Network::new(&tiny()).unwrap();
        let w = vec![0.0; net.param_count()];
        assert!(matches!(net.forward(&w, &[0.0; 10]), Err(Error::Data(_))));
    }
}
