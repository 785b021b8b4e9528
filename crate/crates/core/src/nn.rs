//! Parameter storage and the layer primitives shared by every network.

use std::cell::RefCell;
use std::collections::BTreeMap;

use ctma_autograd::{BatchStats, ConvGeom, Float, Gradients, Graph, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Handle into a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(usize);

impl ParamId {
    /// Registration position in its store.
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Entry<T> {
    pub name: String,
    pub value: Tensor<T>,
    /// `false` for buffers such as normalisation running statistics.
    pub trainable: bool,
}

/// Named tensors in registration order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    entries: Vec<Entry<T>>,
    index: BTreeMap<String, usize>,
}

impl<T: Float> ParamStore<T> {
    pub fn new() -> Self {
        Self { entries: Vec::new(), index: BTreeMap::new() }
    }

    pub fn add(&mut self, name: &str, value: Tensor<T>, trainable: bool) -> ParamId {
        assert!(!self.index.contains_key(name), "duplicate parameter name {name}");
        self.index.insert(name.to_string(), self.entries.len());
        self.entries.push(Entry { name: name.to_string(), value, trainable });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn entry(&self, id: ParamId) -> &Entry<T> {
        &self.entries[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn entries(&self) -> &[Entry<T>] {
        &self.entries
    }

    pub fn trainable(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.ids().filter(|&id| self.entries[id.0].trainable)
    }

    /// Number of trainable scalars.
    pub fn num_params(&self) -> usize {
        self.entries.iter().filter(|e| e.trainable).map(|e| e.value.numel()).sum()
    }

    pub fn cast<U: Float>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|e| Entry { name: e.name.clone(), value: e.value.cast(), trainable: e.trainable })
                .collect(),
            index: self.index.clone(),
        }
    }

    /// Replace every tensor with the same-named one from `other`, which must
    /// hold exactly the same names and shapes.
    pub fn load_from(&mut self, other: &ParamStore<T>) -> Result<()> {
        if other.len() != self.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, checkpoint holds {}",
                self.len(),
                other.len()
            )));
        }
        for e in &mut self.entries {
            let src = other
                .id(&e.name)
                .map(|id| other.get(id))
                .ok_or_else(|| Error::Checkpoint(format!("tensor {} missing from checkpoint", e.name)))?;
            if src.shape() != e.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor {} has shape {:?}, model expects {:?}",
                    e.name,
                    src.shape(),
                    e.value.shape()
                )));
            }
            e.value = src.clone();
        }
        Ok(())
    }

    /// Fold recorded batch statistics into the running estimates.
    pub fn apply_bn_updates(&mut self, updates: &[BnUpdate<T>]) {
        let m = T::from_f64(BN_MOMENTUM);
        for u in updates {
            for (r, &s) in self.get_mut(u.running_mean).data_mut().iter_mut().zip(&u.stats.mean) {
                *r = (T::one() - m) * *r + m * s;
            }
            for (r, &s) in self.get_mut(u.running_var).data_mut().iter_mut().zip(&u.stats.var_unbiased) {
                *r = (T::one() - m) * *r + m * s;
            }
        }
    }
}

/// Registers parameters under a dotted path prefix and draws their initial
/// values from a seeded generator.
pub struct Builder<'a, T> {
    store: &'a mut ParamStore<T>,
    rng: &'a mut ChaCha8Rng,
    prefix: String,
}

impl<'a, T: Float> Builder<'a, T> {
    pub fn new(store: &'a mut ParamStore<T>, rng: &'a mut ChaCha8Rng) -> Self {
        Self { store, rng, prefix: String::new() }
    }

    pub fn sub(&mut self, name: &str) -> Builder<'_, T> {
        let prefix = self.path(name);
        Builder { store: &mut *self.store, rng: &mut *self.rng, prefix }
    }

    fn path(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{}", self.prefix, name)
        }
    }

    /// Uniform in `[-bound, bound]`.
    pub fn uniform(&mut self, name: &str, shape: &[usize], bound: f64) -> ParamId {
        let rng = &mut *self.rng;
        let t = Tensor::from_fn(shape, |_| T::from_f64(rng.random_range(-bound..=bound)));
        let path = self.path(name);
        self.store.add(&path, t, true)
    }

    pub fn constant(&mut self, name: &str, value: Tensor<T>, trainable: bool) -> ParamId {
        let path = self.path(name);
        self.store.add(&path, value, trainable)
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        self.rng
    }
}

/// Seeded generator for parameter initialisation.
pub fn init_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Trainable leaves, batch statistics.
    Train,
    /// Constant leaves, running statistics.
    Eval,
}

#[derive(Clone, Debug)]
pub struct BnUpdate<T> {
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub stats: BatchStats<T>,
}

/// One forward pass: binds store tensors to graph leaves (once per id, so
/// shared weights accumulate gradient) and collects normalisation statistics.
pub struct Ctx<'g, 's, T: Float> {
    pub graph: &'g Graph<T>,
    store: &'s ParamStore<T>,
    mode: Mode,
    leaves: RefCell<BTreeMap<ParamId, Var<'g, T>>>,
    bn_updates: RefCell<Vec<BnUpdate<T>>>,
}

impl<'g, 's, T: Float> Ctx<'g, 's, T> {
    pub fn new(graph: &'g Graph<T>, store: &'s ParamStore<T>, mode: Mode) -> Self {
        Self { graph, store, mode, leaves: RefCell::new(BTreeMap::new()), bn_updates: RefCell::new(Vec::new()) }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn store(&self) -> &'s ParamStore<T> {
        self.store
    }

    pub fn param(&self, id: ParamId) -> Var<'g, T> {
        if let Some(v) = self.leaves.borrow().get(&id) {
            return *v;
        }
        let value = self.store.get(id).clone();
        let v = if self.mode == Mode::Train && self.store.entry(id).trainable {
            self.graph.param(value)
        } else {
            self.graph.constant(value)
        };
        self.leaves.borrow_mut().insert(id, v);
        v
    }

    pub fn constant(&self, value: Tensor<T>) -> Var<'g, T> {
        self.graph.constant(value)
    }

    fn record(&self, u: BnUpdate<T>) {
        self.bn_updates.borrow_mut().push(u);
    }

    pub fn take_bn_updates(&self) -> Vec<BnUpdate<T>> {
        std::mem::take(&mut *self.bn_updates.borrow_mut())
    }

    /// Gradients of every trainable parameter touched by this pass.
    pub fn param_grads(&self, grads: &mut Gradients<T>) -> Vec<(ParamId, Tensor<T>)> {
        self.leaves.borrow().iter().filter_map(|(&id, &v)| grads.take(v).map(|g| (id, g))).collect()
    }
}

#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub geom: ConvGeom,
}

impl Conv {
    /// Planar `k`x`k` convolution.
    #[allow(clippy::too_many_arguments)]
    pub fn planar<T: Float>(
        b: &mut Builder<'_, T>,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        k: usize,
        stride: usize,
        padding: usize,
        bias: bool,
    ) -> Self {
        Self::build(b, name, &[out_ch, in_ch, k, k], ConvGeom::planar(k, stride, padding), bias)
    }

    pub fn volumetric<T: Float>(
        b: &mut Builder<'_, T>,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        geom: ConvGeom,
        bias: bool,
    ) -> Self {
        let [kd, kh, kw] = geom.kernel;
        Self::build(b, name, &[out_ch, in_ch, kd, kh, kw], geom, bias)
    }

    fn build<T: Float>(b: &mut Builder<'_, T>, name: &str, wshape: &[usize], geom: ConvGeom, bias: bool) -> Self {
        let fan_in: usize = wshape[1..].iter().product();
        let bound = 1.0 / (fan_in as f64).sqrt();
        let mut s = b.sub(name);
        let weight = s.uniform("weight", wshape, bound);
        let bias = bias.then(|| s.uniform("bias", &[wshape[0]], bound));
        Self { weight, bias, geom }
    }

    pub fn forward<'g, T: Float>(&self, ctx: &Ctx<'g, '_, T>, x: &Var<'g, T>) -> Result<Var<'g, T>> {
        let w = ctx.param(self.weight);
        let b = self.bias.map(|id| ctx.param(id));
        Ok(x.conv(&w, b.as_ref(), self.geom)?)
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BatchNorm {
    pub fn new<T: Float>(b: &mut Builder<'_, T>, name: &str, channels: usize) -> Self {
        let mut s = b.sub(name);
        Self {
            gamma: s.constant("weight", Tensor::ones(&[channels]), true),
            beta: s.constant("bias", Tensor::zeros(&[channels]), true),
            running_mean: s.constant("running_mean", Tensor::zeros(&[channels]), false),
            running_var: s.constant("running_var", Tensor::ones(&[channels]), false),
        }
    }

    pub fn forward<'g, T: Float>(&self, ctx: &Ctx<'g, '_, T>, x: &Var<'g, T>) -> Result<Var<'g, T>> {
        let g = ctx.param(self.gamma);
        let b = ctx.param(self.beta);
        let eps = T::from_f64(BN_EPS);
        match ctx.mode() {
            Mode::Train => {
                let (y, stats) = x.batch_norm(&g, &b, eps)?;
                ctx.record(BnUpdate { running_mean: self.running_mean, running_var: self.running_var, stats });
                Ok(y)
            }
            Mode::Eval => {
                let s = ctx.store();
                Ok(x.batch_norm_fixed(&g, &b, s.get(self.running_mean).data(), s.get(self.running_var).data(), eps)?)
            }
        }
    }
}

/// Convolution without bias followed by batch normalisation.
#[derive(Clone, Debug)]
pub struct ConvBn {
    pub conv: Conv,
    pub bn: BatchNorm,
}

impl ConvBn {
    #[allow(clippy::too_many_arguments)]
    pub fn planar<T: Float>(
        b: &mut Builder<'_, T>,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        k: usize,
        stride: usize,
        padding: usize,
    ) -> Self {
        let mut s = b.sub(name);
        Self { conv: Conv::planar(&mut s, "conv", in_ch, out_ch, k, stride, padding, false), bn: BatchNorm::new(&mut s, "bn", out_ch) }
    }

    pub fn volumetric<T: Float>(b: &mut Builder<'_, T>, name: &str, in_ch: usize, out_ch: usize, geom: ConvGeom) -> Self {
        let mut s = b.sub(name);
        Self { conv: Conv::volumetric(&mut s, "conv", in_ch, out_ch, geom, false), bn: BatchNorm::new(&mut s, "bn", out_ch) }
    }

    pub fn forward<'g, T: Float>(&self, ctx: &Ctx<'g, '_, T>, x: &Var<'g, T>) -> Result<Var<'g, T>> {
        let y = self.conv.forward(ctx, x)?;
        self.bn.forward(ctx, &y)
    }

    pub fn forward_relu<'g, T: Float>(&self, ctx: &Ctx<'g, '_, T>, x: &Var<'g, T>) -> Result<Var<'g, T>> {
        Ok(self.forward(ctx, x)?.relu())
    }
}
