//! Uniform access to every trainable tensor.
//!
//! Tensors are visited in a fixed declared order shared by initialization,
//! the optimizer, gradient checking, and the checkpoint format. The mutable
//! and shared visitors must list fields identically; a test pins that.

use ndarray::{Array1, Array2};

use crate::classify::VibeState;

/// Which optimization phase may update a tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    Ntm,
    Provider,
    HeadStage1,
    HeadStage2,
}

/// Allowed parameter groups for one optimizer step.
#[derive(Debug, Clone, Copy)]
pub struct GroupMask {
    pub ntm: bool,
    pub provider: bool,
    pub head_stage1: bool,
    pub head_stage2: bool,
}

impl GroupMask {
    pub const ALL: GroupMask =
        GroupMask { ntm: true, provider: true, head_stage1: true, head_stage2: true };
    pub const NTM_ONLY: GroupMask =
        GroupMask { ntm: true, provider: false, head_stage1: false, head_stage2: false };
    pub const STAGE1: GroupMask =
        GroupMask { ntm: true, provider: true, head_stage1: true, head_stage2: false };
    pub const STAGE2_HEADS: GroupMask =
        GroupMask { ntm: false, provider: false, head_stage1: false, head_stage2: true };

    pub fn allows(&self, group: ParamGroup) -> bool {
        match group {
            ParamGroup::Ntm => self.ntm,
            ParamGroup::Provider => self.provider,
            ParamGroup::HeadStage1 => self.head_stage1,
            ParamGroup::HeadStage2 => self.head_stage2,
        }
    }

    pub fn without_provider(mut self) -> Self {
        self.provider = false;
        self
    }
}

pub enum TensorMut<'a> {
    W(&'a mut Array2<f64>),
    V(&'a mut Array1<f64>),
}

impl TensorMut<'_> {
    pub fn len(&self) -> usize {
        match self {
            TensorMut::W(a) => a.len(),
            TensorMut::V(a) => a.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn as_slice_mut(&mut self) -> &mut [f64] {
        match self {
            TensorMut::W(a) => a.as_slice_mut().expect("standard layout"),
            TensorMut::V(a) => a.as_slice_mut().expect("standard layout"),
        }
    }
}

pub enum TensorRef<'a> {
    W(&'a Array2<f64>),
    V(&'a Array1<f64>),
}

impl TensorRef<'_> {
    pub fn len(&self) -> usize {
        match self {
            TensorRef::W(a) => a.len(),
            TensorRef::V(a) => a.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn as_slice(&self) -> &[f64] {
        match self {
            TensorRef::W(a) => a.as_slice().expect("standard layout"),
            TensorRef::V(a) => a.as_slice().expect("standard layout"),
        }
    }
}

/// Mutable view of every tensor in declared order.
pub fn visit_mut(state: &mut VibeState) -> Vec<(&'static str, ParamGroup, TensorMut<'_>)> {
    use ParamGroup::*;
    use TensorMut::{V, W};
    let mut out = Vec::with_capacity(40);
    macro_rules! enc {
        ($name:literal, $field:expr) => {
            out.push((concat!($name, ".hidden.w"), Ntm, W(&mut $field.hidden.w_t)));
            out.push((concat!($name, ".hidden.b"), Ntm, V(&mut $field.hidden.b)));
            out.push((concat!($name, ".mean.w"), Ntm, W(&mut $field.mean.w)));
            out.push((concat!($name, ".mean.b"), Ntm, V(&mut $field.mean.b)));
            out.push((concat!($name, ".log_std.w"), Ntm, W(&mut $field.log_std.w)));
            out.push((concat!($name, ".log_std.b"), Ntm, V(&mut $field.log_std.b)));
        };
    }
    enc!("enc_past", state.model.enc_past);
    enc!("enc_future", state.model.enc_future);
    enc!("enc_shared", state.model.enc_shared);
    enc!("approx_past", state.model.approx_past);
    enc!("approx_future", state.model.approx_future);
    out.push(("dec_past.w", Ntm, W(&mut state.model.dec_past.linear.w)));
    out.push(("dec_past.b", Ntm, V(&mut state.model.dec_past.linear.b)));
    out.push(("dec_future.w", Ntm, W(&mut state.model.dec_future.linear.w)));
    out.push(("dec_future.b", Ntm, V(&mut state.model.dec_future.linear.b)));
    out.push(("provider.table", Provider, W(&mut state.provider.table)));
    macro_rules! head {
        ($name:literal, $field:expr, $group:expr) => {
            out.push((concat!($name, ".mlp.w"), $group, W(&mut $field.mlp.w)));
            out.push((concat!($name, ".mlp.b"), $group, V(&mut $field.mlp.b)));
            out.push((concat!($name, ".out.w"), $group, W(&mut $field.out.w)));
            out.push((concat!($name, ".out.b"), $group, V(&mut $field.out.b)));
        };
    }
    head!("head_stage1", state.head_stage1, HeadStage1);
    head!("head_stage2_task", state.head_stage2_task, HeadStage2);
    head!("head_stage2_time", state.head_stage2_time, HeadStage2);
    out
}

/// Shared view of every tensor; same order as [`visit_mut`].
pub fn visit_ref(state: &VibeState) -> Vec<(&'static str, ParamGroup, TensorRef<'_>)> {
    use ParamGroup::*;
    use TensorRef::{V, W};
    let mut out = Vec::with_capacity(40);
    macro_rules! enc {
        ($name:literal, $field:expr) => {
            out.push((concat!($name, ".hidden.w"), Ntm, W(&$field.hidden.w_t)));
            out.push((concat!($name, ".hidden.b"), Ntm, V(&$field.hidden.b)));
            out.push((concat!($name, ".mean.w"), Ntm, W(&$field.mean.w)));
            out.push((concat!($name, ".mean.b"), Ntm, V(&$field.mean.b)));
            out.push((concat!($name, ".log_std.w"), Ntm, W(&$field.log_std.w)));
            out.push((concat!($name, ".log_std.b"), Ntm, V(&$field.log_std.b)));
        };
    }
    enc!("enc_past", state.model.enc_past);
    enc!("enc_future", state.model.enc_future);
    enc!("enc_shared", state.model.enc_shared);
    enc!("approx_past", state.model.approx_past);
    enc!("approx_future", state.model.approx_future);
    out.push(("dec_past.w", Ntm, W(&state.model.dec_past.linear.w)));
    out.push(("dec_past.b", Ntm, V(&state.model.dec_past.linear.b)));
    out.push(("dec_future.w", Ntm, W(&state.model.dec_future.linear.w)));
    out.push(("dec_future.b", Ntm, V(&state.model.dec_future.linear.b)));
    out.push(("provider.table", Provider, W(&state.provider.table)));
    macro_rules! head {
        ($name:literal, $field:expr, $group:expr) => {
            out.push((concat!($name, ".mlp.w"), $group, W(&$field.mlp.w)));
            out.push((concat!($name, ".mlp.b"), $group, V(&$field.mlp.b)));
            out.push((concat!($name, ".out.w"), $group, W(&$field.out.w)));
            out.push((concat!($name, ".out.b"), $group, V(&$field.out.b)));
        };
    }
    head!("head_stage1", state.head_stage1, HeadStage1);
    head!("head_stage2_task", state.head_stage2_task, HeadStage2);
    head!("head_stage2_time", state.head_stage2_time, HeadStage2);
    out
}

pub fn total_params(state: &VibeState) -> usize {
    visit_ref(state).iter().map(|(_, _, t)| t.len()).sum()
}

/// Adam with per-tensor moment buffers aligned to the declared order.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(learning_rate: f64, state: &VibeState) -> Self {
        let shapes: Vec<usize> = visit_ref(state).iter().map(|(_, _, t)| t.len()).collect();
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    /// One update over the tensors allowed by `mask`; `grads` holds the
    /// accumulated gradient in a zeroed clone of the state.
    pub fn step(&mut self, state: &mut VibeState, grads: &VibeState, mask: GroupMask) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let grad_view = visit_ref(grads);
        for (idx, (param, grad)) in visit_mut(state).into_iter().zip(grad_view).enumerate() {
            let (_, group, mut tensor) = param;
            if !mask.allows(group) {
                continue;
            }
            let g = grad.2.as_slice();
            let p = tensor.as_slice_mut();
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

/// Zero a gradient holder in place.
pub fn zero_grads(grads: &mut VibeState) {
    for (_, _, mut t) in visit_mut(grads) {
        t.as_slice_mut().fill(0.0);
    }
}
