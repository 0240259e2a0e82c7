//! Small dense/convolutional layers with explicit reverse rules.

use rand::Rng;

use super::params::{ParamId, ParamStore};

/// Activation shape `(channels, height, width)`; dense activations are `(n, 1, 1)`.
pub type Shape = (usize, usize, usize);

fn numel(s: Shape) -> usize {
    s.0 * s.1 * s.2
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    cin: usize,
    cout: usize,
    k: usize,
    stride: usize,
    pad: usize,
    weight: ParamId,
    bias: ParamId,
}

impl Conv2d {
    fn out_dim(&self, n: usize) -> usize {
        (n + 2 * self.pad - self.k) / self.stride + 1
    }

    /// Calls `f(out_index, in_index, weight_index)` for every tap inside the input.
    #[inline(always)]
    fn for_each_tap(&self, input: Shape, mut f: impl FnMut(usize, usize, usize)) {
        let (_, h, w) = input;
        let (ho, wo) = (self.out_dim(h), self.out_dim(w));
        let k = self.k;
        for co in 0..self.cout {
            for ci in 0..self.cin {
                for ky in 0..k {
                    for kx in 0..k {
                        let wi = ((co * self.cin + ci) * k + ky) * k + kx;
                        for oy in 0..ho {
                            let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let in_row = (ci * h + iy as usize) * w;
                            let out_row = (co * ho + oy) * wo;
                            for ox in 0..wo {
                                let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                f(out_row + ox, in_row + ix as usize, wi);
                            }
                        }
                    }
                }
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct Dense {
    n_in: usize,
    n_out: usize,
    weight: ParamId,
    bias: ParamId,
}

impl Dense {
    pub fn weight(&self) -> ParamId {
        self.weight
    }

    pub fn bias(&self) -> ParamId {
        self.bias
    }
}

/// Averages each channel onto a `size` x `size` grid of possibly overlapping bins.
#[derive(Clone, Debug)]
pub struct AdaptivePool {
    size: usize,
}

impl AdaptivePool {
    fn bins(n: usize, p: usize) -> Vec<(usize, usize)> {
        (0..p)
            .map(|i| (i * n / p, ((i + 1) * n).div_ceil(p)))
            .collect()
    }
}

#[derive(Clone, Debug)]
pub enum Layer {
    Conv(Conv2d),
    Dense(Dense),
    Pool(AdaptivePool),
    Tanh,
}

/// A chain of layers with fixed input shape.
#[derive(Clone, Debug)]
pub struct Sequential {
    input: Shape,
    layers: Vec<Layer>,
    shapes: Vec<Shape>,
}

fn glorot(rng: &mut impl Rng, fan_in: usize, fan_out: usize) -> impl FnMut() -> f64 + '_ {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    move || rng.gen_range(-a..a)
}

impl Sequential {
    pub fn new(input: Shape) -> Self {
        Self {
            input,
            layers: Vec::new(),
            shapes: vec![input],
        }
    }

    pub fn output_shape(&self) -> Shape {
        *self.shapes.last().unwrap()
    }

    pub fn output_len(&self) -> usize {
        numel(self.output_shape())
    }

    pub fn input_len(&self) -> usize {
        numel(self.input)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn conv(
        mut self,
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        cout: usize,
    ) -> Self {
        let (cin, h, w) = self.output_shape();
        let (k, stride, pad) = (3, 2, 1);
        let weight = store.add(
            &format!("{name}.weight"),
            &[cout, cin, k, k],
            glorot(rng, cin * k * k, cout * k * k),
        );
        let bias = store.add(&format!("{name}.bias"), &[cout], || 0.0);
        let c = Conv2d {
            cin,
            cout,
            k,
            stride,
            pad,
            weight,
            bias,
        };
        let shape = (cout, c.out_dim(h), c.out_dim(w));
        self.layers.push(Layer::Conv(c));
        self.shapes.push(shape);
        self
    }

    pub fn dense(
        mut self,
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        n_out: usize,
        gain: f64,
    ) -> Self {
        let n_in = self.output_len();
        let mut init = glorot(rng, n_in, n_out);
        let weight = store.add(&format!("{name}.weight"), &[n_out, n_in], || gain * init());
        let bias = store.add(&format!("{name}.bias"), &[n_out], || 0.0);
        self.layers.push(Layer::Dense(Dense {
            n_in,
            n_out,
            weight,
            bias,
        }));
        self.shapes.push((n_out, 1, 1));
        self
    }

    pub fn pool(mut self, size: usize) -> Self {
        let (c, h, w) = self.output_shape();
        let size = size.min(h).min(w).max(1);
        self.layers.push(Layer::Pool(AdaptivePool { size }));
        self.shapes.push((c, size, size));
        self
    }

    pub fn tanh(mut self) -> Self {
        let s = self.output_shape();
        self.layers.push(Layer::Tanh);
        self.shapes.push(s);
        self
    }

    /// Forward pass keeping every intermediate activation (input first).
    pub fn forward(&self, store: &ParamStore, x: &[f64]) -> Vec<Vec<f64>> {
        assert_eq!(x.len(), self.input_len(), "input length");
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        for (l, layer) in self.layers.iter().enumerate() {
            let input = &acts[l];
            let (in_shape, out_shape) = (self.shapes[l], self.shapes[l + 1]);
            let out = match layer {
                Layer::Conv(c) => {
                    let w = store.get(c.weight);
                    let b = store.get(c.bias);
                    let plane = out_shape.1 * out_shape.2;
                    let mut out: Vec<f64> = (0..numel(out_shape)).map(|i| b[i / plane]).collect();
                    c.for_each_tap(in_shape, |o, i, wi| out[o] += w[wi] * input[i]);
                    out
                }
                Layer::Dense(d) => {
                    let w = store.get(d.weight);
                    let b = store.get(d.bias);
                    (0..d.n_out)
                        .map(|o| {
                            b[o] + w[o * d.n_in..(o + 1) * d.n_in]
                                .iter()
                                .zip(input)
                                .map(|(a, b)| a * b)
                                .sum::<f64>()
                        })
                        .collect()
                }
                Layer::Pool(p) => {
                    let (c, h, w) = in_shape;
                    let (rows, cols) =
                        (AdaptivePool::bins(h, p.size), AdaptivePool::bins(w, p.size));
                    let mut out = Vec::with_capacity(numel(out_shape));
                    for ch in 0..c {
                        for &(r0, r1) in &rows {
                            for &(c0, c1) in &cols {
                                let mut s = 0.0;
                                for y in r0..r1 {
                                    s += input[(ch * h + y) * w + c0..(ch * h + y) * w + c1]
                                        .iter()
                                        .sum::<f64>();
                                }
                                out.push(s / ((r1 - r0) * (c1 - c0)) as f64);
                            }
                        }
                    }
                    out
                }
                Layer::Tanh => input.iter().map(|v| v.tanh()).collect(),
            };
            acts.push(out);
        }
        acts
    }

    /// Reverse pass: accumulates parameter gradients into `grad` and returns the
    /// gradient with respect to the input.
    pub fn backward(
        &self,
        store: &ParamStore,
        acts: &[Vec<f64>],
        out_grad: &[f64],
        grad: &mut [f64],
    ) -> Vec<f64> {
        let mut g = out_grad.to_vec();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let input = &acts[l];
            let in_shape = self.shapes[l];
            let out_shape = self.shapes[l + 1];
            g = match layer {
                Layer::Conv(c) => {
                    let w = store.get(c.weight);
                    let mut gin = vec![0.0; numel(in_shape)];
                    {
                        let gw = store.slice_mut(grad, c.weight);
                        c.for_each_tap(in_shape, |o, i, wi| {
                            gw[wi] += g[o] * input[i];
                            gin[i] += g[o] * w[wi];
                        });
                    }
                    let plane = out_shape.1 * out_shape.2;
                    let gb = store.slice_mut(grad, c.bias);
                    for (i, v) in g.iter().enumerate() {
                        gb[i / plane] += v;
                    }
                    gin
                }
                Layer::Dense(d) => {
                    let w = store.get(d.weight);
                    let mut gin = vec![0.0; d.n_in];
                    {
                        let gw = store.slice_mut(grad, d.weight);
                        for o in 0..d.n_out {
                            let go = g[o];
                            let row = &w[o * d.n_in..(o + 1) * d.n_in];
                            let grow = &mut gw[o * d.n_in..(o + 1) * d.n_in];
                            for ((gi, (gwi, wi)), xi) in
                                gin.iter_mut().zip(grow.iter_mut().zip(row)).zip(input)
                            {
                                *gwi += go * xi;
                                *gi += go * wi;
                            }
                        }
                    }
                    let gb = store.slice_mut(grad, d.bias);
                    for (b, v) in gb.iter_mut().zip(&g) {
                        *b += v;
                    }
                    gin
                }
                Layer::Pool(p) => {
                    let (c, h, w) = in_shape;
                    let (rows, cols) =
                        (AdaptivePool::bins(h, p.size), AdaptivePool::bins(w, p.size));
                    let mut gin = vec![0.0; numel(in_shape)];
                    let mut k = 0;
                    for ch in 0..c {
                        for &(r0, r1) in &rows {
                            for &(c0, c1) in &cols {
                                let v = g[k] / ((r1 - r0) * (c1 - c0)) as f64;
                                k += 1;
                                for y in r0..r1 {
                                    gin[(ch * h + y) * w + c0..(ch * h + y) * w + c1]
                                        .iter_mut()
                                        .for_each(|x| *x += v);
                                }
                            }
                        }
                    }
                    gin
                }
                Layer::Tanh => {
                    let out = &acts[l + 1];
                    g.iter()
                        .zip(out)
                        .map(|(gi, y)| gi * (1.0 - y * y))
                        .collect()
                }
            };
        }
        g
    }
}
