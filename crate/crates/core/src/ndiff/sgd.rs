use super::{NdiffError, Tensor};

/// One plain SGD update: `param <- param - lr * grad`.
pub fn sgd_step(param: &mut Tensor, grad: &Tensor, lr: f64) -> Result<(), NdiffError> {
    if !param.same_shape(grad) {
        return Err(NdiffError::ShapeMismatch {
            op: "sgd_step",
            detail: format!("{:?} vs {:?}", param.shape(), grad.shape()),
        });
    }
    for (p, g) in param.data_mut().iter_mut().zip(grad.data()) {
        *p -= lr * g;
    }
    Ok(())
}

/// SGD with optional classical momentum (`momentum = 0` disables it).
///
/// Velocity buffers are keyed by position, so callers must pass parameters
/// in the same order on every step.
#[derive(Clone, Debug)]
pub struct Sgd {
    lr: f64,
    momentum: f64,
    velocity: Vec<Tensor>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64) -> Self {
        Sgd { lr, momentum, velocity: Vec::new() }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }

    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[&Tensor]) -> Result<(), NdiffError> {
        if params.len() != grads.len() {
            return Err(NdiffError::ShapeMismatch {
                op: "sgd",
                detail: format!("{} params vs {} grads", params.len(), grads.len()),
            });
        }
        if self.momentum == 0.0 {
            for (p, g) in params.iter_mut().zip(grads) {
                sgd_step(p, g, self.lr)?;
            }
            return Ok(());
        }
        if self.velocity.is_empty() {
            self.velocity = params.iter().map(|p| Tensor::zeros(p.rows(), p.cols())).collect();
        }
        for ((p, g), v) in params.iter_mut().zip(grads).zip(self.velocity.iter_mut()) {
            if !p.same_shape(g) {
                return Err(NdiffError::ShapeMismatch {
                    op: "sgd",
                    detail: format!("{:?} vs {:?}", p.shape(), g.shape()),
                });
            }
            for ((pv, gv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
                *vv = self.momentum * *vv + gv;
                *pv -= self.lr * *vv;
            }
        }
        Ok(())
    }
}
