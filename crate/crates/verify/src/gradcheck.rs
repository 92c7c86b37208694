//! Central finite differences against tape gradients, in f64.

use std::fmt;

use c2f_core::nn::{Mode, ParamStore, Session};
use c2f_core::{Result, Rng, Shape, Tensor, Var};
use c2f_oracle::{central_difference, relative_error};

#[derive(Clone, Copy, Debug)]
pub struct GradCheck {
    pub step: f64,
    pub tolerance: f64,
    /// Elements whose analytic gradient is at most this are not compared.
    pub floor: f64,
    /// Elements sampled per parameter or input tensor; smaller tensors are checked whole.
    pub per_tensor: usize,
    pub seed: u64,
}

impl Default for GradCheck {
    fn default() -> Self {
        GradCheck { step: 1e-4, tolerance: 1e-3, floor: 1e-6, per_tensor: 8, seed: 7 }
    }
}

#[derive(Clone, Debug)]
pub struct Mismatch {
    pub target: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug)]
pub struct GradReport {
    pub name: String,
    pub compared: usize,
    pub worst: f64,
    /// Elements whose difference window crosses a ReLU kink.
    pub skipped: usize,
    pub mismatches: Vec<Mismatch>,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.mismatches.is_empty() && self.compared > 0
    }
}

impl fmt::Display for GradReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {} elements, worst relative error {:.2e}", self.name, self.compared, self.worst)?;
        if self.skipped > 0 {
            write!(f, ", {} skipped at ReLU kinks", self.skipped)?;
        }
        if self.compared == 0 {
            write!(f, ", nothing above the floor")?;
        }
        for m in self.mismatches.iter().take(5) {
            write!(f, "\n  {}[{}]: analytic {:.6e} numeric {:.6e}", m.target, m.index, m.analytic, m.numeric)?;
        }
        Ok(())
    }
}

/// Fixed random weights that turn a tensor output into a scalar.
fn projection(shape: Shape, seed: u64) -> Tensor<f64> {
    let mut rng = Rng::new(seed ^ 0x5eed_f00d);
    Tensor::from_fn(shape, |_, _, _, _| rng.normal())
}

/// Builds the graph, reduces it to a scalar and returns the value.
fn scalar_loss<F>(s: &mut Session<'_, f64>, inputs: &[Tensor<f64>], seed: u64, build: &F) -> Result<(Var, Vec<Var>)>
where
    F: Fn(&mut Session<'_, f64>, &[Var]) -> Result<Var>,
{
    let vars: Vec<Var> = inputs.iter().map(|t| s.input(t.clone())).collect();
    let out = build(s, &vars)?;
    let shape = s.tape.shape(out);
    let loss = if shape.is_scalar() {
        out
    } else {
        let p = s.input(projection(shape, seed));
        let prod = s.tape.mul(out, p)?;
        s.tape.sum(prod)
    };
    Ok((loss, vars))
}

/// Loss value and ReLU sign pattern of one evaluation.
fn evaluate<F>(store: &ParamStore<f64>, mode: Mode, inputs: &[Tensor<f64>], seed: u64, build: &F) -> (f64, Vec<bool>)
where
    F: Fn(&mut Session<'_, f64>, &[Var]) -> Result<Var>,
{
    let mut store = store.clone();
    let mut s = Session::new(&mut store, mode);
    let (loss, _) = scalar_loss(&mut s, inputs, seed, build).expect("graph built once already");
    (s.value(loss).data()[0], s.tape.relu_pattern())
}

/// Indices to compare: the largest analytic entries plus a random spread.
fn pick(grad: &[f64], count: usize, rng: &mut Rng) -> Vec<usize> {
    if grad.len() <= count {
        return (0..grad.len()).collect();
    }
    let mut order: Vec<usize> = (0..grad.len()).collect();
    order.sort_by(|&a, &b| grad[b].abs().total_cmp(&grad[a].abs()).then(a.cmp(&b)));
    let mut chosen: Vec<usize> = order[..count / 2].to_vec();
    while chosen.len() < count {
        let i = rng.below(grad.len());
        if !chosen.contains(&i) {
            chosen.push(i);
        }
    }
    chosen
}

/// Compares every trainable parameter and every input used by `build`.
///
/// Non-scalar outputs are reduced with a fixed random projection. The store
/// is cloned for every evaluation, so train-mode running statistics never
/// leak between the two sides of a difference. A central difference whose
/// two ends see a different ReLU sign pattern than the base point straddles
/// a kink; such elements are counted in `skipped` instead of compared.
pub fn check<F>(
    name: &str,
    store: &ParamStore<f64>,
    mode: Mode,
    inputs: &[Tensor<f64>],
    opts: &GradCheck,
    build: F,
) -> Result<GradReport>
where
    F: Fn(&mut Session<'_, f64>, &[Var]) -> Result<Var>,
{
    let mut work = store.clone();
    let mut s = Session::new(&mut work, mode);
    let (loss, vars) = scalar_loss(&mut s, inputs, opts.seed, &build)?;
    let grads = s.tape.backward(loss)?;
    let pattern = s.tape.relu_pattern();
    let param_grads = s.gradients(loss)?;
    let input_grads: Vec<Vec<f64>> = vars.iter().map(|&v| grads.tensor(v).into_vec()).collect();
    drop(s);

    let mut rng = Rng::new(opts.seed);
    let mut report = GradReport { name: name.to_string(), compared: 0, worst: 0.0, skipped: 0, mismatches: Vec::new() };
    let mut record = |target: &str, index: usize, analytic: f64, numeric: f64, smooth: bool| {
        if analytic.abs() <= opts.floor {
            return;
        }
        if !smooth {
            report.skipped += 1;
            return;
        }
        let err = relative_error(analytic, numeric);
        report.compared += 1;
        report.worst = report.worst.max(err);
        if !(err < opts.tolerance) {
            report.mismatches.push(Mismatch { target: target.to_string(), index, analytic, numeric });
        }
    };

    for (pname, g) in &param_grads {
        let base = store.require(pname)?.data.clone();
        for i in pick(g, opts.per_tensor, &mut rng) {
            let mut smooth = true;
            let mut f = |x: &[f64]| {
                let mut st = store.clone();
                st.get_mut(pname).expect("parameter exists").data = x.to_vec();
                let (v, p) = evaluate(&st, mode, inputs, opts.seed, &build);
                smooth &= p == pattern;
                v
            };
            let numeric = central_difference(&mut f, &base, i, opts.step);
            record(pname, i, g[i], numeric, smooth);
        }
    }
    for (k, g) in input_grads.iter().enumerate() {
        let base = inputs[k].data().to_vec();
        let shape = inputs[k].shape();
        for i in pick(g, opts.per_tensor, &mut rng) {
            let mut smooth = true;
            let mut f = |x: &[f64]| {
                let mut ins = inputs.to_vec();
                ins[k] = Tensor::from_vec(shape, x.to_vec()).expect("same length");
                let (v, p) = evaluate(store, mode, &ins, opts.seed, &build);
                smooth &= p == pattern;
                v
            };
            let numeric = central_difference(&mut f, &base, i, opts.step);
            record(&format!("input{k}"), i, g[i], numeric, smooth);
        }
    }
    Ok(report)
}
