//! Sequential network with a recorded tape for backward passes.

use crate::diffcore::layers::{Cache, Layer};
use crate::error::{Error, Result};
use crate::normlayers::{NormLayer, NormRoute};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Norm layers use batch statistics and update running statistics.
    Train,
    /// Norm layers use running statistics; nothing is mutated.
    Eval,
}

/// Activations recorded by one forward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    caches: Vec<Cache>,
    input_shape: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Network {
    layers: Vec<(String, Layer)>,
    /// Per-sample input shape `[C, H, W]`.
    input_shape: Vec<usize>,
    tape: Option<Tape>,
}

impl Network {
    pub fn new(input_shape: Vec<usize>, layers: Vec<(String, Layer)>) -> Self {
        Self {
            layers,
            input_shape,
            tape: None,
        }
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn layers(&self) -> &[(String, Layer)] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [(String, Layer)] {
        &mut self.layers
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.shape().len() != self.input_shape.len() + 1 || x.shape()[1..] != self.input_shape[..] {
            return Err(Error::Shape {
                layer: 0,
                message: format!("expected [N, {:?}], got {:?}", self.input_shape, x.shape()),
            });
        }
        Ok(())
    }

    fn at_layer(i: usize, e: Error) -> Error {
        match e {
            Error::Input(message) => Error::Shape { layer: i, message },
            other => other,
        }
    }

    /// Forward pass that keeps its tape for a later [`Network::backward`].
    pub fn forward(&mut self, x: &Tensor, route: NormRoute, mode: Mode) -> Result<Tensor> {
        let (y, tape) = match mode {
            Mode::Train => self.forward_train(x, route)?,
            Mode::Eval => self.forward_eval(x, route)?,
        };
        self.tape = Some(tape);
        Ok(y)
    }

    /// Training-mode forward returning its tape.
    pub fn forward_train(&mut self, x: &Tensor, route: NormRoute) -> Result<(Tensor, Tape)> {
        self.check_input(x)?;
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for (i, (_, layer)) in self.layers.iter_mut().enumerate() {
            let (y, c) = layer.forward(&h, route, true).map_err(|e| Self::at_layer(i, e))?;
            caches.push(c);
            h = y;
        }
        Ok((h, Tape { caches, input_shape: x.shape().to_vec() }))
    }

    /// Eval-mode forward returning its tape; never mutates the network.
    pub fn forward_eval(&self, x: &Tensor, route: NormRoute) -> Result<(Tensor, Tape)> {
        self.check_input(x)?;
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for (i, (_, layer)) in self.layers.iter().enumerate() {
            let (y, c) = layer.forward_eval(&h, route).map_err(|e| Self::at_layer(i, e))?;
            caches.push(c);
            h = y;
        }
        Ok((h, Tape { caches, input_shape: x.shape().to_vec() }))
    }

    /// Eval-mode output of the first `depth` layers.
    pub fn infer_prefix(&self, x: &Tensor, route: NormRoute, depth: usize) -> Result<Tensor> {
        self.check_input(x)?;
        let mut h = x.clone();
        for (i, (_, layer)) in self.layers.iter().take(depth).enumerate() {
            h = layer.forward_eval(&h, route).map_err(|e| Self::at_layer(i, e))?.0;
        }
        Ok(h)
    }

    /// Eval-mode logits.
    pub fn infer(&self, x: &Tensor, route: NormRoute) -> Result<Tensor> {
        self.infer_prefix(x, route, self.layers.len())
    }

    /// Backward through the tape of the last [`Network::forward`]; fills
    /// parameter gradients and returns the input gradient.
    pub fn backward(&mut self, logits_grad: &Tensor) -> Result<Tensor> {
        let tape = self
            .tape
            .take()
            .ok_or_else(|| Error::State("backward called before forward".into()))?;
        self.backward_tape(&tape, logits_grad)
    }

    /// Backward through an explicit tape, accumulating parameter gradients.
    pub fn backward_tape(&mut self, tape: &Tape, logits_grad: &Tensor) -> Result<Tensor> {
        self.check_tape(tape)?;
        let mut g = logits_grad.clone();
        for (i, ((_, layer), cache)) in self.layers.iter_mut().zip(&tape.caches).enumerate().rev() {
            match layer.backward(cache, &g, true, true) {
                Some(dx) => g = dx,
                None => unreachable!("input gradient requested at layer {i}"),
            }
        }
        Ok(g)
    }

    /// Parameter gradients only (skips the input gradient of the first layer).
    pub fn accumulate_grads(&mut self, tape: &Tape, logits_grad: &Tensor) -> Result<()> {
        self.check_tape(tape)?;
        let mut g = logits_grad.clone();
        for (i, ((_, layer), cache)) in self.layers.iter_mut().zip(&tape.caches).enumerate().rev() {
            if let Some(dx) = layer.backward(cache, &g, true, i > 0) {
                g = dx;
            }
        }
        Ok(())
    }

    /// Gradient w.r.t. the input; parameter gradients are left untouched.
    pub fn input_grad(&self, tape: &Tape, logits_grad: &Tensor) -> Result<Tensor> {
        self.check_tape(tape)?;
        let mut g = logits_grad.clone();
        for ((_, layer), cache) in self.layers.iter().zip(&tape.caches).rev() {
            g = layer.input_grad(cache, &g);
        }
        Ok(g)
    }

    fn check_tape(&self, tape: &Tape) -> Result<()> {
        if tape.caches.len() != self.layers.len() {
            return Err(Error::State("tape was recorded by a different network".into()));
        }
        debug_assert_eq!(tape.input_shape[1..], self.input_shape[..]);
        Ok(())
    }

    /// Fully qualified parameter names (`layer.param`) with their tensors.
    pub fn params(&self) -> Vec<(String, &Tensor)> {
        self.layers
            .iter()
            .flat_map(|(name, l)| l.params().into_iter().map(move |(p, t)| (format!("{name}.{p}"), t)))
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        self.layers
            .iter_mut()
            .flat_map(|(name, l)| {
                let name = name.clone();
                l.params_mut().into_iter().map(move |(p, t)| (format!("{name}.{p}"), t))
            })
            .collect()
    }

    pub fn params_and_grads(&mut self) -> Vec<(&mut Tensor, &mut Tensor)> {
        self.layers.iter_mut().flat_map(|(_, l)| l.params_and_grads()).collect()
    }

    pub fn grads(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|(_, l)| l.grads()).collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for (_, l) in &mut self.layers {
            l.zero_grad();
        }
    }

    pub fn norm_layers(&self) -> impl Iterator<Item = (&str, &NormLayer)> {
        self.layers.iter().filter_map(|(name, l)| match l {
            Layer::Norm(n) => Some((name.as_str(), n)),
            _ => None,
        })
    }

    pub fn norm_layers_mut(&mut self) -> impl Iterator<Item = (&str, &mut NormLayer)> {
        self.layers.iter_mut().filter_map(|(name, l)| match l {
            Layer::Norm(n) => Some((name.as_str(), n)),
            _ => None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::layers::Dense;

    #[test]
    fn zero_dense_gives_zero_logits() {
        let net = Network::new(vec![4], vec![("fc".into(), Layer::Dense(Dense::new(4, 3)))]);
        let x = Tensor::new(vec![2, 4], vec![1.0, -2.0, 3.0, 0.5, 0.1, 0.2, 0.3, 0.4]).unwrap();
        let y = net.infer(&x, NormRoute::Clean).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_before_forward_is_state_error() {
        let mut net = Network::new(vec![2], vec![("relu".into(), Layer::Relu)]);
        let g = Tensor::zeros(&[1, 2]);
        assert!(matches!(net.backward(&g), Err(Error::State(_))));
    }

    #[test]
    fn flatten_passes_gradient_through() {
        let mut net = Network::new(vec![2, 2, 1], vec![("flat".into(), Layer::Flatten)]);
        let x = Tensor::new(vec![1, 2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = net.forward(&x, NormRoute::Clean, Mode::Eval).unwrap();
        assert_eq!(y.shape(), &[1, 4]);
        let g = Tensor::new(vec![1, 4], vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let dx = net.backward(&g).unwrap();
        assert_eq!(dx.shape(), &[1, 2, 2, 1]);
        assert_eq!(dx.data(), g.data());
    }

    #[test]
    fn wrong_input_shape_names_layer() {
        let net = Network::new(vec![3], vec![("fc".into(), Layer::Dense(Dense::new(4, 2)))]);
        let x = Tensor::zeros(&[1, 3]);
        match net.infer(&x, NormRoute::Clean) {
            Err(Error::Shape { layer, .. }) => assert_eq!(layer, 0),
            other => panic!("unexpected {other:?}"),
        }
        let bad = Tensor::zeros(&[1, 5]);
        assert!(matches!(net.infer(&bad, NormRoute::Clean), Err(Error::Shape { layer: 0, .. })));
    }
}
