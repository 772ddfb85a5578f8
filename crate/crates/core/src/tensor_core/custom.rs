use std::any::Any;
use std::rc::Rc;

use super::tensor::Tensor;
use crate::error::Result;

/// A differentiable operation with a hand-written backward rule.
///
/// `forward` returns the output together with whatever state the backward
/// rule needs; `backward` maps that state and the upstream gradient to one
/// gradient per input, each shaped like its input.
pub trait CustomOp {
    fn name(&self) -> &str;

    fn forward(&self, inputs: &[&Tensor]) -> Result<(Tensor, Box<dyn Any>)>;

    fn backward(
        &self,
        inputs: &[&Tensor],
        output: &Tensor,
        saved: &dyn Any,
        upstream: &Tensor,
    ) -> Result<Vec<Tensor>>;
}

type ForwardFn = dyn Fn(&[&Tensor]) -> Result<(Tensor, Box<dyn Any>)>;
type BackwardFn = dyn Fn(&dyn Any, &Tensor) -> Result<Vec<Tensor>>;

struct FnOp {
    name: String,
    forward: Box<ForwardFn>,
    backward: Box<BackwardFn>,
}

impl CustomOp for FnOp {
    fn name(&self) -> &str {
        &self.name
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<(Tensor, Box<dyn Any>)> {
        (self.forward)(inputs)
    }

    fn backward(
        &self,
        _inputs: &[&Tensor],
        _output: &Tensor,
        saved: &dyn Any,
        upstream: &Tensor,
    ) -> Result<Vec<Tensor>> {
        (self.backward)(saved, upstream)
    }
}

/// Builds an op handle from a pair of closures. The backward closure sees the
/// saved forward state and the upstream gradient.
pub fn register_custom<F, B>(name: &str, forward: F, backward: B) -> Rc<dyn CustomOp>
where
    F: Fn(&[&Tensor]) -> Result<(Tensor, Box<dyn Any>)> + 'static,
    B: Fn(&dyn Any, &Tensor) -> Result<Vec<Tensor>> + 'static,
{
    Rc::new(FnOp {
        name: name.to_string(),
        forward: Box::new(forward),
        backward: Box::new(backward),
    })
}
