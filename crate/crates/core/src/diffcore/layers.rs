//! Layers with analytic forward and backward passes.

use crate::error::{Error, Result};
use crate::normlayers::{NormCache, NormLayer, NormRoute};
use crate::tensor::Tensor;

/// Row-major single precision GEMM: `c = alpha * a·b + beta * c`.
///
/// `a` is `m × k`, `b` is `k × n`, `c` is `m × n`, each described by its
/// row and column strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    (rsa, csa): (usize, usize),
    b: &[f32],
    (rsb, csb): (usize, usize),
    beta: f32,
    c: &mut [f32],
) {
    assert!(a.len() > (m - 1) * rsa + (k - 1) * csa);
    assert!(b.len() > (k - 1) * rsb + (n - 1) * csb);
    assert!(c.len() >= m * n);
    // SAFETY: the asserts above bound every index the kernel touches.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Debug, Clone)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
    pub grad_weight: Tensor,
    pub grad_bias: Tensor,
}

impl Dense {
    pub fn new(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[outputs, inputs]),
            bias: Tensor::zeros(&[outputs]),
            grad_weight: Tensor::zeros(&[outputs, inputs]),
            grad_bias: Tensor::zeros(&[outputs]),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape()[0]
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (n, fin, fout) = (x.batch(), self.inputs(), self.outputs());
        if x.shape().len() != 2 || x.shape()[1] != fin {
            return Err(Error::Input(format!("dense expects [N, {fin}], got {:?}", x.shape())));
        }
        let mut y = Vec::with_capacity(n * fout);
        for _ in 0..n {
            y.extend_from_slice(self.bias.data());
        }
        gemm(n, fin, fout, x.data(), (fin, 1), self.weight.data(), (1, fin), 1.0, &mut y);
        Tensor::new(vec![n, fout], y)
    }

    fn backward(&mut self, x: &Tensor, dy: &Tensor, accumulate: bool) -> Tensor {
        let (n, fin, fout) = (x.batch(), self.inputs(), self.outputs());
        if accumulate {
            gemm(
                fout,
                n,
                fin,
                dy.data(),
                (1, fout),
                x.data(),
                (fin, 1),
                1.0,
                self.grad_weight.data_mut(),
            );
            let gb = self.grad_bias.data_mut();
            for s in 0..n {
                for (g, &d) in gb.iter_mut().zip(dy.row(s)) {
                    *g += d;
                }
            }
        }
        self.input_grad(dy)
    }

    fn input_grad(&self, dy: &Tensor) -> Tensor {
        let (n, fin, fout) = (dy.batch(), self.inputs(), self.outputs());
        let mut dx = vec![0.0; n * fin];
        gemm(n, fout, fin, dy.data(), (fout, 1), self.weight.data(), (fin, 1), 0.0, &mut dx);
        Tensor::new(vec![n, fin], dx).expect("dense input grad shape")
    }
}

/// Stride-1 convolution with "same" zero padding and no bias.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: Tensor,
    pub grad_weight: Tensor,
}

impl Conv2d {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize) -> Result<Self> {
        if kernel % 2 == 0 {
            return Err(Error::Config(format!("same padding needs an odd kernel, got {kernel}")));
        }
        let shape = [out_channels, in_channels, kernel, kernel];
        Ok(Self {
            weight: Tensor::zeros(&shape),
            grad_weight: Tensor::zeros(&shape),
        })
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape()[2]
    }

    fn check(&self, x: &Tensor) -> Result<(usize, usize, usize)> {
        match x.shape() {
            &[n, c, h, w] if c == self.in_channels() => Ok((n, h, w)),
            s => Err(Error::Input(format!(
                "conv expects [N, {}, H, W], got {s:?}",
                self.in_channels()
            ))),
        }
    }

    fn im2col(&self, img: &[f32], h: usize, w: usize, col: &mut [f32]) {
        let (cin, k) = (self.in_channels(), self.kernel());
        let pad = k / 2;
        let hw = h * w;
        for ci in 0..cin {
            let plane = &img[ci * hw..(ci + 1) * hw];
            for ky in 0..k {
                for kx in 0..k {
                    let row = &mut col[((ci * k + ky) * k + kx) * hw..][..hw];
                    for y in 0..h {
                        let sy = y as isize + ky as isize - pad as isize;
                        let out = &mut row[y * w..(y + 1) * w];
                        if sy < 0 || sy >= h as isize {
                            out.fill(0.0);
                            continue;
                        }
                        let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                        for (x, o) in out.iter_mut().enumerate() {
                            let sx = x as isize + kx as isize - pad as isize;
                            *o = if sx < 0 || sx >= w as isize { 0.0 } else { src[sx as usize] };
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, col: &[f32], h: usize, w: usize, img: &mut [f32]) {
        let (cin, k) = (self.in_channels(), self.kernel());
        let pad = k / 2;
        let hw = h * w;
        for ci in 0..cin {
            let plane = &mut img[ci * hw..(ci + 1) * hw];
            for ky in 0..k {
                for kx in 0..k {
                    let row = &col[((ci * k + ky) * k + kx) * hw..][..hw];
                    for y in 0..h {
                        let sy = y as isize + ky as isize - pad as isize;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let dst = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                        for x in 0..w {
                            let sx = x as isize + kx as isize - pad as isize;
                            if sx >= 0 && sx < w as isize {
                                dst[sx as usize] += row[y * w + x];
                            }
                        }
                    }
                }
            }
        }
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (n, h, w) = self.check(x)?;
        let (cout, hw) = (self.out_channels(), h * w);
        let ck = self.in_channels() * self.kernel() * self.kernel();
        let mut col = vec![0.0; ck * hw];
        let mut y = vec![0.0; n * cout * hw];
        for s in 0..n {
            self.im2col(x.row(s), h, w, &mut col);
            gemm(
                cout,
                ck,
                hw,
                self.weight.data(),
                (ck, 1),
                &col,
                (hw, 1),
                0.0,
                &mut y[s * cout * hw..(s + 1) * cout * hw],
            );
        }
        Tensor::new(vec![n, cout, h, w], y)
    }

    fn accumulate_grad(&mut self, x: &Tensor, dy: &Tensor) {
        let (n, h, w) = self.check(x).expect("cached input matches layer");
        let (cout, hw) = (self.out_channels(), h * w);
        let ck = self.in_channels() * self.kernel() * self.kernel();
        let mut col = vec![0.0; ck * hw];
        for s in 0..n {
            self.im2col(x.row(s), h, w, &mut col);
            gemm(cout, hw, ck, dy.row(s), (hw, 1), &col, (1, hw), 1.0, self.grad_weight.data_mut());
        }
    }

    fn input_grad(&self, dy: &Tensor) -> Tensor {
        let &[n, _, h, w] = dy.shape() else {
            panic!("conv gradient must be [N, C, H, W]");
        };
        let (cin, cout, hw) = (self.in_channels(), self.out_channels(), h * w);
        let ck = cin * self.kernel() * self.kernel();
        let mut col = vec![0.0; ck * hw];
        let mut dx = vec![0.0; n * cin * hw];
        for s in 0..n {
            gemm(ck, cout, hw, self.weight.data(), (1, ck), dy.row(s), (hw, 1), 0.0, &mut col);
            self.col2im(&col, h, w, &mut dx[s * cin * hw..(s + 1) * cin * hw]);
        }
        Tensor::new(vec![n, cin, h, w], dx).expect("conv input grad shape")
    }
}

/// Non-overlapping `size × size` average pooling; trailing rows/columns that do
/// not fill a window are dropped.
#[derive(Debug, Clone)]
pub struct AvgPool {
    pub size: usize,
}

impl AvgPool {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let &[n, c, h, w] = x.shape() else {
            return Err(Error::Input(format!("avgpool expects [N, C, H, W], got {:?}", x.shape())));
        };
        let k = self.size;
        let (oh, ow) = (h / k, w / k);
        if oh == 0 || ow == 0 {
            return Err(Error::Input(format!("avgpool window {k} larger than {h}x{w}")));
        }
        let scale = 1.0 / (k * k) as f32;
        let xd = x.data();
        let mut y = vec![0.0; n * c * oh * ow];
        for p in 0..n * c {
            let plane = &xd[p * h * w..(p + 1) * h * w];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for dy in 0..k {
                        for dx in 0..k {
                            acc += plane[(oy * k + dy) * w + ox * k + dx];
                        }
                    }
                    y[(p * oh + oy) * ow + ox] = acc * scale;
                }
            }
        }
        Tensor::new(vec![n, c, oh, ow], y)
    }

    fn backward(&self, in_shape: &[usize], dy: &Tensor) -> Tensor {
        let (h, w) = (in_shape[2], in_shape[3]);
        let k = self.size;
        let (oh, ow) = (h / k, w / k);
        let scale = 1.0 / (k * k) as f32;
        let planes = in_shape[0] * in_shape[1];
        let mut dx = vec![0.0; planes * h * w];
        let g = dy.data();
        for p in 0..planes {
            for oy in 0..oh {
                for ox in 0..ow {
                    let v = g[(p * oh + oy) * ow + ox] * scale;
                    for ddy in 0..k {
                        for ddx in 0..k {
                            dx[p * h * w + (oy * k + ddy) * w + ox * k + ddx] = v;
                        }
                    }
                }
            }
        }
        Tensor::new(in_shape.to_vec(), dx).expect("avgpool grad shape")
    }
}

fn global_avgpool(x: &Tensor) -> Result<Tensor> {
    let &[n, c, h, w] = x.shape() else {
        return Err(Error::Input(format!("global avgpool expects [N, C, H, W], got {:?}", x.shape())));
    };
    let hw = h * w;
    let y = x
        .data()
        .chunks(hw)
        .map(|p| (p.iter().map(|&v| v as f64).sum::<f64>() / hw as f64) as f32)
        .collect();
    Tensor::new(vec![n, c, 1, 1], y)
}

fn global_avgpool_backward(in_shape: &[usize], dy: &Tensor) -> Tensor {
    let hw = in_shape[2] * in_shape[3];
    let scale = 1.0 / hw as f32;
    let dx = dy.data().iter().flat_map(|&g| std::iter::repeat_n(g * scale, hw)).collect();
    Tensor::new(in_shape.to_vec(), dx).expect("global pool grad shape")
}

#[derive(Debug, Clone)]
pub enum Layer {
    Dense(Dense),
    Conv2d(Conv2d),
    Relu,
    Flatten,
    AvgPool(AvgPool),
    GlobalAvgPool,
    Norm(NormLayer),
}

/// What a layer keeps from its forward pass.
#[derive(Debug, Clone)]
pub enum Cache {
    Input(Tensor),
    Output(Tensor),
    Shape(Vec<usize>),
    Norm(NormCache),
}

impl Layer {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Dense(_) => "dense",
            Layer::Conv2d(_) => "conv2d",
            Layer::Relu => "relu",
            Layer::Flatten => "flatten",
            Layer::AvgPool(_) => "avgpool",
            Layer::GlobalAvgPool => "global_avgpool",
            Layer::Norm(_) => "norm",
        }
    }

    /// Forward pass; `training` selects batch statistics (and running-stat
    /// updates) in norm layers.
    pub fn forward(&mut self, x: &Tensor, route: NormRoute, training: bool) -> Result<(Tensor, Cache)> {
        match self {
            Layer::Norm(norm) if training => {
                let (y, c) = norm.forward(x, route, true)?;
                Ok((y, Cache::Norm(c)))
            }
            other => other.forward_eval(x, route),
        }
    }

    pub fn forward_eval(&self, x: &Tensor, route: NormRoute) -> Result<(Tensor, Cache)> {
        Ok(match self {
            Layer::Dense(d) => (d.forward(x)?, Cache::Input(x.clone())),
            Layer::Conv2d(c) => (c.forward(x)?, Cache::Input(x.clone())),
            Layer::Relu => {
                let y = x.map(|v| v.max(0.0));
                (y.clone(), Cache::Output(y))
            }
            Layer::Flatten => {
                let n = x.batch();
                let y = x.clone().reshape(&[n, x.row_len()])?;
                (y, Cache::Shape(x.shape().to_vec()))
            }
            Layer::AvgPool(p) => (p.forward(x)?, Cache::Shape(x.shape().to_vec())),
            Layer::GlobalAvgPool => (global_avgpool(x)?, Cache::Shape(x.shape().to_vec())),
            Layer::Norm(norm) => {
                let (y, c) = norm.forward_eval(x, route)?;
                (y, Cache::Norm(c))
            }
        })
    }

    /// Backward pass. Parameter gradients are accumulated when `accumulate`;
    /// the input gradient is computed when `need_input`.
    pub fn backward(&mut self, cache: &Cache, dy: &Tensor, accumulate: bool, need_input: bool) -> Option<Tensor> {
        match (self, cache) {
            (Layer::Dense(d), Cache::Input(x)) => {
                let dx = d.backward(x, dy, accumulate);
                need_input.then_some(dx)
            }
            (Layer::Conv2d(c), Cache::Input(x)) => {
                if accumulate {
                    c.accumulate_grad(x, dy);
                }
                need_input.then(|| c.input_grad(dy))
            }
            (Layer::Norm(n), Cache::Norm(c)) => {
                let dx = n.backward(c, dy, accumulate);
                need_input.then_some(dx)
            }
            (layer, cache) => need_input.then(|| layer.input_grad(cache, dy)),
        }
    }

    /// Input gradient only; never touches parameter gradients.
    pub fn input_grad(&self, cache: &Cache, dy: &Tensor) -> Tensor {
        match (self, cache) {
            (Layer::Dense(d), Cache::Input(_)) => d.input_grad(dy),
            (Layer::Conv2d(c), Cache::Input(_)) => c.input_grad(dy),
            (Layer::Relu, Cache::Output(y)) => {
                let data = y
                    .data()
                    .iter()
                    .zip(dy.data())
                    .map(|(&o, &g)| if o > 0.0 { g } else { 0.0 })
                    .collect();
                Tensor::new(dy.shape().to_vec(), data).expect("relu grad shape")
            }
            (Layer::Flatten, Cache::Shape(s)) => dy.clone().reshape(s).expect("flatten grad shape"),
            (Layer::AvgPool(p), Cache::Shape(s)) => p.backward(s, dy),
            (Layer::GlobalAvgPool, Cache::Shape(s)) => global_avgpool_backward(s, dy),
            (Layer::Norm(n), Cache::Norm(c)) => n.input_grad(c, dy),
            (layer, _) => panic!("cache does not belong to a {} layer", layer.kind()),
        }
    }

    /// Named parameters (suffix only, e.g. `weight`).
    pub fn params(&self) -> Vec<(&'static str, &Tensor)> {
        match self {
            Layer::Dense(d) => vec![("weight", &d.weight), ("bias", &d.bias)],
            Layer::Conv2d(c) => vec![("weight", &c.weight)],
            Layer::Norm(n) => vec![("gamma", &n.gamma), ("beta", &n.beta)],
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        match self {
            Layer::Dense(d) => vec![("weight", &mut d.weight), ("bias", &mut d.bias)],
            Layer::Conv2d(c) => vec![("weight", &mut c.weight)],
            Layer::Norm(n) => vec![("gamma", &mut n.gamma), ("beta", &mut n.beta)],
            _ => Vec::new(),
        }
    }

    /// `(parameter, gradient)` pairs in the same order as [`Layer::params`].
    pub fn params_and_grads(&mut self) -> Vec<(&mut Tensor, &mut Tensor)> {
        match self {
            Layer::Dense(d) => vec![
                (&mut d.weight, &mut d.grad_weight),
                (&mut d.bias, &mut d.grad_bias),
            ],
            Layer::Conv2d(c) => vec![(&mut c.weight, &mut c.grad_weight)],
            Layer::Norm(n) => vec![
                (&mut n.gamma, &mut n.grad_gamma),
                (&mut n.beta, &mut n.grad_beta),
            ],
            _ => Vec::new(),
        }
    }

    pub fn grads(&self) -> Vec<&Tensor> {
        match self {
            Layer::Dense(d) => vec![&d.grad_weight, &d.grad_bias],
            Layer::Conv2d(c) => vec![&c.grad_weight],
            Layer::Norm(n) => vec![&n.grad_gamma, &n.grad_beta],
            _ => Vec::new(),
        }
    }

    pub fn zero_grad(&mut self) {
        for (_, g) in self.params_and_grads() {
            g.data_mut().fill(0.0);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_clamps_negatives() {
        let mut relu = Layer::Relu;
        let x = Tensor::new(vec![1, 2], vec![-1.0, 2.0]).unwrap();
        let (y, cache) = relu.forward(&x, NormRoute::Clean, false).unwrap();
        assert_eq!(y.data(), &[0.0, 2.0]);
        let g = relu.input_grad(&cache, &Tensor::new(vec![1, 2], vec![5.0, 7.0]).unwrap());
        assert_eq!(g.data(), &[0.0, 7.0]);
    }

    #[test]
    fn dense_matches_manual_product() {
        let mut d = Dense::new(3, 2);
        d.weight = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, -1.0, 0.5, 0.0]).unwrap();
        d.bias = Tensor::new(vec![2], vec![0.1, -0.2]).unwrap();
        let x = Tensor::new(vec![2, 3], vec![1.0, 0.0, -1.0, 2.0, 1.0, 1.0]).unwrap();
        let y = d.forward(&x).unwrap();
        let want = [1.0 - 3.0 + 0.1, -1.0 - 0.2, 2.0 + 2.0 + 3.0 + 0.1, -2.0 + 0.5 - 0.2];
        for (a, b) in y.data().iter().zip(want) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn even_kernel_rejected() {
        assert!(Conv2d::new(1, 1, 2).is_err());
    }

    #[test]
    fn avgpool_averages_windows() {
        let p = AvgPool { size: 2 };
        let x = Tensor::new(vec![1, 1, 2, 4], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]).unwrap();
        let y = p.forward(&x).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 2]);
        assert_eq!(y.data(), &[3.5, 5.5]);
    }
}
