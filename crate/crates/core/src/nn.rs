//! Named parameters and the layers built from them.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::ops::norm::BN_MOMENTUM;
use crate::rng::Rng;
use crate::tape::{NormStats, Tape, Var};
use crate::tensor::{Real, Shape, Tensor};

/// One named array: trainable weights or a running statistic.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub dims: Vec<usize>,
    pub data: Vec<T>,
    pub trainable: bool,
}

impl<T: Real> Param<T> {
    /// Rank-4 view: 4-D arrays map directly, vectors become `(1, c, 1, 1)`.
    pub fn shape(&self) -> Shape {
        match self.dims.as_slice() {
            [a, b, c, d] => Shape::new(*a, *b, *c, *d),
            [c] => Shape::new(1, *c, 1, 1),
            other => Shape::new(1, other.iter().product(), 1, 1),
        }
    }

    pub fn tensor(&self) -> Tensor<T> {
        Tensor::from_vec(self.shape(), self.data.clone()).expect("param dims match data")
    }
}

/// Every parameter and buffer of a model, ordered by name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T = f32> {
    entries: BTreeMap<String, Param<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { entries: BTreeMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, param: Param<T>) {
        self.entries.insert(name.into(), param);
    }

    pub fn get(&self, name: &str) -> Option<&Param<T>> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param<T>> {
        self.entries.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Param<T>)> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Param<T>)> {
        self.entries.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn trainable_count(&self) -> usize {
        self.entries.values().filter(|p| p.trainable).map(|p| p.data.len()).sum()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|(k, p)| {
                    let data = p.data.iter().map(|v| U::lit(v.as_f64())).collect();
                    (k.clone(), Param { dims: p.dims.clone(), data, trainable: p.trainable })
                })
                .collect(),
        }
    }

    pub fn require(&self, name: &str) -> Result<&Param<T>> {
        self.get(name).ok_or_else(|| Error::MissingParam(name.to_string()))
    }
}

/// Uniform Kaiming-style draw on `(-b, b)`, `b = sqrt(6 / fan_in)`.
/// Consumes exactly one draw per element.
pub fn init_uniform<T: Real>(rng: &mut Rng, count: usize, fan_in: usize) -> Vec<T> {
    let bound = (6.0 / fan_in as f64).sqrt();
    (0..count).map(|_| T::lit((2.0 * rng.next_f64() - 1.0) * bound)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// A forward pass in progress: a tape plus the parameters bound onto it.
pub struct Session<'a, T: Real> {
    pub tape: Tape<T>,
    store: &'a mut ParamStore<T>,
    bound: BTreeMap<String, Var>,
    mode: Mode,
}

impl<'a, T: Real> Session<'a, T> {
    pub fn new(store: &'a mut ParamStore<T>, mode: Mode) -> Self {
        Session { tape: Tape::new(), store, bound: BTreeMap::new(), mode }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn store(&self) -> &ParamStore<T> {
        self.store
    }

    pub fn input(&mut self, x: Tensor<T>) -> Var {
        self.tape.leaf(x)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        self.tape.value(v)
    }

    /// Tape handle of a parameter, binding it on first use.
    pub fn param(&mut self, name: &str) -> Result<Var> {
        if let Some(&v) = self.bound.get(name) {
            return Ok(v);
        }
        let t = self.store.require(name)?.tensor();
        let v = self.tape.leaf(t);
        self.bound.insert(name.to_string(), v);
        Ok(v)
    }

    /// Gradients of `loss` for every trainable parameter used in this pass.
    pub fn gradients(&self, loss: Var) -> Result<BTreeMap<String, Vec<T>>> {
        let g = self.tape.backward(loss)?;
        let mut out = BTreeMap::new();
        for (name, &v) in &self.bound {
            if self.store.get(name).is_some_and(|p| p.trainable) {
                out.insert(name.clone(), g.tensor(v).into_vec());
            }
        }
        Ok(out)
    }

    pub fn bound_names(&self) -> impl Iterator<Item = &String> {
        self.bound.keys()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Conv {
    pub name: String,
    pub in_c: usize,
    pub out_c: usize,
    pub k: usize,
    pub stride: usize,
    pub dilation: usize,
}

impl Conv {
    pub fn new(name: impl Into<String>, in_c: usize, out_c: usize, k: usize) -> Self {
        Conv { name: name.into(), in_c, out_c, k, stride: 1, dilation: 1 }
    }

    pub fn stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn dilation(mut self, dilation: usize) -> Self {
        self.dilation = dilation;
        self
    }

    pub fn weight_name(&self) -> String {
        format!("{}.weight", self.name)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.bias", self.name)
    }

    pub fn init<T: Real>(&self, store: &mut ParamStore<T>, rng: &mut Rng) {
        let fan_in = self.in_c * self.k * self.k;
        let count = self.out_c * fan_in;
        store.insert(
            self.weight_name(),
            Param { dims: vec![self.out_c, self.in_c, self.k, self.k], data: init_uniform(rng, count, fan_in), trainable: true },
        );
        store.insert(self.bias_name(), Param { dims: vec![self.out_c], data: vec![T::zero(); self.out_c], trainable: true });
    }

    pub fn forward<T: Real>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let w = s.param(&self.weight_name())?;
        let b = s.param(&self.bias_name())?;
        s.tape.conv2d(x, w, Some(b), self.stride, self.dilation)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BatchNorm {
    pub name: String,
    pub c: usize,
}

impl BatchNorm {
    pub fn new(name: impl Into<String>, c: usize) -> Self {
        BatchNorm { name: name.into(), c }
    }

    fn key(&self, field: &str) -> String {
        format!("{}.{field}", self.name)
    }

    pub fn init<T: Real>(&self, store: &mut ParamStore<T>) {
        let vec = |v: T, trainable| Param { dims: vec![self.c], data: vec![v; self.c], trainable };
        store.insert(self.key("gamma"), vec(T::one(), true));
        store.insert(self.key("beta"), vec(T::zero(), true));
        store.insert(self.key("running_mean"), vec(T::zero(), false));
        store.insert(self.key("running_var"), vec(T::one(), false));
    }

    /// Train mode normalizes with batch statistics and folds them into the
    /// running estimates; eval mode applies the running estimates.
    pub fn forward<T: Real>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let gamma = s.param(&self.key("gamma"))?;
        let beta = s.param(&self.key("beta"))?;
        let (rm_key, rv_key) = (self.key("running_mean"), self.key("running_var"));
        match s.mode {
            Mode::Train => {
                let (y, stats) = s.tape.batch_norm(x, gamma, beta, NormStats::Batch)?;
                let stats = stats.expect("batch mode returns statistics");
                let m = BN_MOMENTUM;
                for (key, fresh) in [(&rm_key, &stats.mean), (&rv_key, &stats.var_unbiased)] {
                    let p = s.store.get_mut(key).ok_or_else(|| Error::MissingParam(key.clone()))?;
                    for (r, &f) in p.data.iter_mut().zip(fresh) {
                        *r = T::lit((1.0 - m) * r.as_f64() + m * f);
                    }
                }
                Ok(y)
            }
            Mode::Eval => {
                let mean = s.store.require(&rm_key)?.data.clone();
                let var = s.store.require(&rv_key)?.data.clone();
                let (y, _) = s.tape.batch_norm(x, gamma, beta, NormStats::Running { mean: &mean, var: &var })?;
                Ok(y)
            }
        }
    }
}

/// Convolution, optional batch norm, optional ReLU.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConvBn {
    pub conv: Conv,
    pub bn: Option<BatchNorm>,
    pub relu: bool,
}

impl ConvBn {
    /// `{name}.conv` followed by `{name}.bn`.
    pub fn new(name: &str, conv: Conv, relu: bool) -> Self {
        let conv = Conv { name: format!("{name}.conv"), ..conv };
        let bn = Some(BatchNorm::new(format!("{name}.bn"), conv.out_c));
        ConvBn { conv, bn, relu }
    }

    pub fn plain(name: &str, conv: Conv) -> Self {
        ConvBn { conv: Conv { name: name.to_string(), ..conv }, bn: None, relu: false }
    }

    pub fn init<T: Real>(&self, store: &mut ParamStore<T>, rng: &mut Rng) {
        self.conv.init(store, rng);
        if let Some(bn) = &self.bn {
            bn.init(store);
        }
    }

    pub fn forward<T: Real>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let mut y = self.conv.forward(s, x)?;
        if let Some(bn) = &self.bn {
            y = bn.forward(s, y)?;
        }
        if self.relu {
            y = s.tape.relu(y);
        }
        Ok(y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_bound_and_determinism() {
        let a: Vec<f64> = init_uniform(&mut Rng::new(3), 1000, 6);
        let b: Vec<f64> = init_uniform(&mut Rng::new(3), 1000, 6);
        assert_eq!(a, b);
        assert!(a.iter().all(|v| v.abs() < 1.0));
    }

    #[test]
    fn init_mean_is_near_zero() {
        let v: Vec<f64> = init_uniform(&mut Rng::new(11), 100_000, 6);
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        assert!(mean.abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn init_draw_count_is_fixed() {
        let mut r = Rng::new(5);
        let _: Vec<f32> = init_uniform(&mut r, 17, 3);
        let mut r2 = Rng::new(5);
        for _ in 0..17 {
            r2.next_u64();
        }
        assert_eq!(r, r2);
    }

    #[test]
    fn eval_norm_with_fresh_stats_is_near_identity() {
        let mut store = ParamStore::<f64>::new();
        BatchNorm::new("bn", 2).init(&mut store);
        let x = Tensor::from_fn(Shape::new(1, 2, 3, 3), |_, c, y, x| (c * 9 + y * 3 + x) as f64 - 4.0);
        let mut s = Session::new(&mut store, Mode::Eval);
        let xv = s.input(x.clone());
        let y = BatchNorm::new("bn", 2).forward(&mut s, xv).unwrap();
        assert!(s.value(y).max_abs_diff(&x) < 1e-4);
    }

    #[test]
    fn train_norm_updates_running_stats() {
        let mut store = ParamStore::<f64>::new();
        let bn = BatchNorm::new("bn", 1);
        bn.init(&mut store);
        let x = Tensor::from_vec(Shape::new(1, 1, 1, 4), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let mut s = Session::new(&mut store, Mode::Train);
        let xv = s.input(x);
        bn.forward(&mut s, xv).unwrap();
        drop(s);
        let rm = store.get("bn.running_mean").unwrap().data[0];
        let rv = store.get("bn.running_var").unwrap().data[0];
        assert!((rm - 0.25).abs() < 1e-12);
        // unbiased variance of 1..4 is 5/3
        assert!((rv - (0.9 + 0.1 * 5.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn degenerate_train_statistics_rejected() {
        let mut store = ParamStore::<f32>::new();
        let bn = BatchNorm::new("bn", 1);
        bn.init(&mut store);
        let mut s = Session::new(&mut store, Mode::Train);
        let xv = s.input(Tensor::ones(Shape::new(1, 1, 1, 1)));
        assert!(matches!(bn.forward(&mut s, xv), Err(Error::DegenerateStats { count: 1 })));
    }
}
