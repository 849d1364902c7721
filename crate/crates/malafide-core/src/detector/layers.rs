//! Layer stack with hand-derived forward and backward passes.
//!
//! Activations are channel-last rank-3 tensors [H, W, C] until a global
//! pooling layer collapses them to rank-1 feature vectors.

use super::DetectorError;
use crate::numcore::Tensor;

#[derive(Debug, Clone)]
pub enum Layer {
    /// Cross-correlation, same padding. Weights are [cout, cin, k, k].
    Conv { weights: Tensor, bias: Tensor },
    Relu,
    /// 2x2 average pooling, stride 2, remainder rows/cols dropped.
    AvgPool2,
    /// [H, W, C] -> [C] spatial mean.
    GlobalAvgPool,
    /// [H, W, C] -> [C] spatial max; ties resolved to the first index in
    /// row-major order so backward is deterministic.
    GlobalMax,
    /// Weights are [out, in].
    Dense { weights: Tensor, bias: Tensor },
}

impl Layer {
    pub fn conv_dims(&self) -> Option<(usize, usize, usize)> {
        match self {
            Layer::Conv { weights, .. } => {
                let s = weights.shape();
                Some((s[0], s[1], s[2]))
            }
            _ => None,
        }
    }
}

#[derive(Debug)]
pub(crate) enum Aux {
    None,
    ArgMax(Vec<usize>),
}

/// Cached per-layer inputs from one forward pass.
pub(crate) struct Trace {
    pub inputs: Vec<Tensor>,
    pub aux: Vec<Aux>,
    pub output: Tensor,
}

fn dims3(t: &Tensor) -> Result<(usize, usize, usize), DetectorError> {
    match t.shape() {
        [h, w, c] => Ok((*h, *w, *c)),
        other => Err(DetectorError::BadActivation(other.to_vec())),
    }
}

fn conv_forward(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor, DetectorError> {
    let (h, w, cin) = dims3(input)?;
    let [cout, wcin, k, _] = *weights.shape() else {
        return Err(DetectorError::BadActivation(weights.shape().to_vec()));
    };
    if wcin != cin {
        return Err(DetectorError::BadActivation(input.shape().to_vec()));
    }
    let r = (k / 2) as isize;
    let mut out = Tensor::zeros(&[h, w, cout]);
    let iv = input.values();
    let wv = weights.values();
    let bv = bias.values();
    {
        let ov = out.values_mut();
        for y in 0..h {
            for x in 0..w {
                let obase = (y * w + x) * cout;
                for co in 0..cout {
                    let mut acc = bv[co];
                    let wbase = co * cin * k * k;
                    for ky in 0..k {
                        let sy = y as isize + ky as isize - r;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let sx = x as isize + kx as isize - r;
                            if sx < 0 || sx >= w as isize {
                                continue;
                            }
                            let ibase = ((sy as usize) * w + sx as usize) * cin;
                            let wk = wbase + (ky * k + kx);
                            for ci in 0..cin {
                                acc += wv[wk + ci * k * k] * iv[ibase + ci];
                            }
                        }
                    }
                    ov[obase + co] = acc;
                }
            }
        }
    }
    Ok(out)
}

struct ConvGrads {
    dinput: Tensor,
    dweights: Tensor,
    dbias: Tensor,
}

fn conv_backward(
    input: &Tensor,
    weights: &Tensor,
    dout: &Tensor,
    want_params: bool,
) -> Result<ConvGrads, DetectorError> {
    let (h, w, cin) = dims3(input)?;
    let [cout, _, k, _] = *weights.shape() else {
        return Err(DetectorError::BadActivation(weights.shape().to_vec()));
    };
    let r = (k / 2) as isize;
    let mut dinput = Tensor::zeros(&[h, w, cin]);
    let mut dweights = Tensor::zeros(weights.shape());
    let mut dbias = Tensor::zeros(&[cout]);
    let iv = input.values();
    let wv = weights.values();
    let gv = dout.values();
    {
        let div = dinput.values_mut();
        let dwv = dweights.values_mut();
        let dbv = dbias.values_mut();
        for y in 0..h {
            for x in 0..w {
                let obase = (y * w + x) * cout;
                for co in 0..cout {
                    let g = gv[obase + co];
                    if g == 0.0 {
                        continue;
                    }
                    dbv[co] += g;
                    let wbase = co * cin * k * k;
                    for ky in 0..k {
                        let sy = y as isize + ky as isize - r;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let sx = x as isize + kx as isize - r;
                            if sx < 0 || sx >= w as isize {
                                continue;
                            }
                            let ibase = ((sy as usize) * w + sx as usize) * cin;
                            let wk = wbase + (ky * k + kx);
                            for ci in 0..cin {
                                div[ibase + ci] += g * wv[wk + ci * k * k];
                                if want_params {
                                    dwv[wk + ci * k * k] += g * iv[ibase + ci];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(ConvGrads {
        dinput,
        dweights,
        dbias,
    })
}

pub(crate) fn forward(layers: &[Layer], input: &Tensor) -> Result<Trace, DetectorError> {
    let mut inputs = Vec::with_capacity(layers.len());
    let mut aux = Vec::with_capacity(layers.len());
    let mut act = input.clone();
    for layer in layers {
        inputs.push(act.clone());
        let mut this_aux = Aux::None;
        act = match layer {
            Layer::Conv { weights, bias } => conv_forward(&act, weights, bias)?,
            Layer::Relu => act.map(|v| if v > 0.0 { v } else { 0.0 }),
            Layer::AvgPool2 => {
                let (h, w, c) = dims3(&act)?;
                let (oh, ow) = (h / 2, w / 2);
                let mut out = Tensor::zeros(&[oh, ow, c]);
                {
                    let ov = out.values_mut();
                    for y in 0..oh {
                        for x in 0..ow {
                            for ch in 0..c {
                                let s = act.idx3(2 * y, 2 * x, ch)
                                    + act.idx3(2 * y, 2 * x + 1, ch)
                                    + act.idx3(2 * y + 1, 2 * x, ch)
                                    + act.idx3(2 * y + 1, 2 * x + 1, ch);
                                ov[(y * ow + x) * c + ch] = 0.25 * s;
                            }
                        }
                    }
                }
                out
            }
            Layer::GlobalAvgPool => {
                let (h, w, c) = dims3(&act)?;
                let mut out = vec![0.0; c];
                for (i, &v) in act.values().iter().enumerate() {
                    out[i % c] += v;
                }
                let scale = 1.0 / (h * w) as f64;
                Tensor::new(&[c], out.iter().map(|v| v * scale).collect())
                    .map_err(DetectorError::Numeric)?
            }
            Layer::GlobalMax => {
                let (h, w, c) = dims3(&act)?;
                let mut best = vec![f64::NEG_INFINITY; c];
                let mut arg = vec![0usize; c];
                for p in 0..h * w {
                    for ch in 0..c {
                        let v = act.values()[p * c + ch];
                        if v > best[ch] {
                            best[ch] = v;
                            arg[ch] = p;
                        }
                    }
                }
                this_aux = Aux::ArgMax(arg);
                Tensor::new(&[c], best).map_err(DetectorError::Numeric)?
            }
            Layer::Dense { weights, bias } => {
                let [nout, nin] = *weights.shape() else {
                    return Err(DetectorError::BadActivation(weights.shape().to_vec()));
                };
                if act.shape() != [nin] {
                    return Err(DetectorError::BadActivation(act.shape().to_vec()));
                }
                let mut out = vec![0.0; nout];
                for o in 0..nout {
                    let mut acc = bias.values()[o];
                    let row = &weights.values()[o * nin..(o + 1) * nin];
                    for i in 0..nin {
                        acc += row[i] * act.values()[i];
                    }
                    out[o] = acc;
                }
                Tensor::new(&[nout], out).map_err(DetectorError::Numeric)?
            }
        };
        aux.push(this_aux);
    }
    Ok(Trace {
        inputs,
        aux,
        output: act,
    })
}

pub(crate) struct BackwardResult {
    pub input_grad: Tensor,
    /// Per-layer (dweights, dbias), only for parameterized layers, only
    /// when requested.
    pub param_grads: Vec<Option<(Tensor, Tensor)>>,
    /// Gradient w.r.t. the output of the capture layer, when requested.
    pub captured: Option<Tensor>,
}

/// Backpropagate a scalar seed through the trace. `d_output` seeds the
/// (single-element) network output.
pub(crate) fn backward(
    layers: &[Layer],
    trace: &Trace,
    d_output: f64,
    want_params: bool,
    capture_layer: Option<usize>,
) -> Result<BackwardResult, DetectorError> {
    let mut grad = Tensor::filled(trace.output.shape(), d_output);
    let mut param_grads: Vec<Option<(Tensor, Tensor)>> = vec![None; layers.len()];
    let mut captured = None;

    for (i, layer) in layers.iter().enumerate().rev() {
        // at the top of iteration i, grad holds d(score)/d(output of layer i)
        if capture_layer == Some(i) {
            captured = Some(grad.clone());
        }
        let input = &trace.inputs[i];
        grad = match layer {
            Layer::Conv { weights, .. } => {
                let g = conv_backward(input, weights, &grad, want_params)?;
                if want_params {
                    param_grads[i] = Some((g.dweights, g.dbias));
                }
                g.dinput
            }
            Layer::Relu => {
                let mut out = grad.clone();
                for (g, &x) in out.values_mut().iter_mut().zip(input.values()) {
                    if x <= 0.0 {
                        *g = 0.0;
                    }
                }
                out
            }
            Layer::AvgPool2 => {
                let (h, w, c) = dims3(input)?;
                let (oh, ow) = (h / 2, w / 2);
                let mut out = Tensor::zeros(&[h, w, c]);
                {
                    let ov = out.values_mut();
                    for y in 0..oh {
                        for x in 0..ow {
                            for ch in 0..c {
                                let g = 0.25 * grad.idx3(y, x, ch);
                                ov[((2 * y) * w + 2 * x) * c + ch] = g;
                                ov[((2 * y) * w + 2 * x + 1) * c + ch] = g;
                                ov[((2 * y + 1) * w + 2 * x) * c + ch] = g;
                                ov[((2 * y + 1) * w + 2 * x + 1) * c + ch] = g;
                            }
                        }
                    }
                }
                out
            }
            Layer::GlobalAvgPool => {
                let (h, w, c) = dims3(input)?;
                let scale = 1.0 / (h * w) as f64;
                let mut out = Tensor::zeros(&[h, w, c]);
                {
                    let ov = out.values_mut();
                    for p in 0..h * w {
                        for ch in 0..c {
                            ov[p * c + ch] = grad.values()[ch] * scale;
                        }
                    }
                }
                out
            }
            Layer::GlobalMax => {
                let (h, w, c) = dims3(input)?;
                let Aux::ArgMax(arg) = &trace.aux[i] else {
                    return Err(DetectorError::Internal("missing argmax cache".into()));
                };
                let mut out = Tensor::zeros(&[h, w, c]);
                {
                    let ov = out.values_mut();
                    for ch in 0..c {
                        ov[arg[ch] * c + ch] = grad.values()[ch];
                    }
                }
                out
            }
            Layer::Dense { weights, .. } => {
                let [nout, nin] = *weights.shape() else {
                    return Err(DetectorError::BadActivation(weights.shape().to_vec()));
                };
                if want_params {
                    let mut dw = Tensor::zeros(&[nout, nin]);
                    let mut db = Tensor::zeros(&[nout]);
                    {
                        let dwv = dw.values_mut();
                        let dbv = db.values_mut();
                        for o in 0..nout {
                            let g = grad.values()[o];
                            dbv[o] = g;
                            for j in 0..nin {
                                dwv[o * nin + j] = g * input.values()[j];
                            }
                        }
                    }
                    param_grads[i] = Some((dw, db));
                }
                let mut din = vec![0.0; nin];
                for o in 0..nout {
                    let g = grad.values()[o];
                    let row = &weights.values()[o * nin..(o + 1) * nin];
                    for j in 0..nin {
                        din[j] += g * row[j];
                    }
                }
                Tensor::new(&[nin], din).map_err(DetectorError::Numeric)?
            }
        };
    }
    Ok(BackwardResult {
        input_grad: grad,
        param_grads,
        captured,
    })
}
