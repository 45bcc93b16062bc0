use std::collections::HashMap;

use super::params::{ParamId, ParamStore};
use crate::autograd::{BatchMoments, Gradients, Tape, Var};
use crate::error::Result;
use crate::tensor::{Real, Tensor};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; running moments are updated on [`Session::commit`].
    Train,
    /// Running moments.
    Eval,
}

/// One forward pass: the tape plus the bookkeeping that ties tape leaves to
/// parameters. The session never borrows the store, so the store can be
/// updated once the pass is finished.
pub struct Session<T> {
    pub tape: Tape<T>,
    mode: Mode,
    leaves: HashMap<ParamId, Var>,
    moments: Vec<(ParamId, ParamId, BatchMoments<T>)>,
}

impl<T: Real> Session<T> {
    pub fn new(mode: Mode) -> Self {
        Session {
            tape: Tape::new(),
            mode,
            leaves: HashMap::new(),
            moments: Vec::new(),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn is_train(&self) -> bool {
        self.mode == Mode::Train
    }

    pub fn bn_eps(&self) -> T {
        T::from_f64_lossy(BN_EPS)
    }

    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.tape.leaf(value)
    }

    /// Tape leaf for a parameter, recorded once per session.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&v) = self.leaves.get(&id) {
            return v;
        }
        let v = self.tape.leaf(store.get(id).tensor.clone());
        self.leaves.insert(id, v);
        v
    }

    pub fn param_var(&self, id: ParamId) -> Option<Var> {
        self.leaves.get(&id).copied()
    }

    pub(crate) fn record_moments(&mut self, mean: ParamId, var: ParamId, m: BatchMoments<T>) {
        self.moments.push((mean, var, m));
    }

    /// Backpropagates `loss` and adds the gradients of every trainable
    /// parameter that was used into its `grad` buffer.
    pub fn backward(&self, loss: Var, store: &mut ParamStore<T>) -> Result<Gradients<T>> {
        let grads = self.tape.backward(loss)?;
        let mut ids: Vec<_> = self.leaves.iter().map(|(&id, &v)| (id, v)).collect();
        ids.sort_unstable();
        for (id, v) in ids {
            let param = store.get_mut(id);
            if !param.trainable {
                continue;
            }
            if let Some(g) = grads.get(v) {
                for (acc, &gv) in param.grad.data_mut().iter_mut().zip(g) {
                    *acc = *acc + gv;
                }
            }
        }
        Ok(grads)
    }

    /// Folds the batch moments observed in train mode into the running
    /// statistics with momentum 0.1.
    pub fn commit(self, store: &mut ParamStore<T>) {
        let m = T::from_f64_lossy(BN_MOMENTUM);
        let keep = T::one() - m;
        for (mean_id, var_id, moments) in self.moments {
            for (r, &b) in store.get_mut(mean_id).tensor.data_mut().iter_mut().zip(&moments.mean) {
                *r = keep * *r + m * b;
            }
            for (r, &b) in store.get_mut(var_id).tensor.data_mut().iter_mut().zip(&moments.var) {
                *r = keep * *r + m * b;
            }
        }
    }
}
