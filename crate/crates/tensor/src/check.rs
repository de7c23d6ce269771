//! Central-difference gradient checking.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::params::{ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Relative errors below this absolute scale count as agreement.
pub const ERROR_FLOOR: f64 = 1e-6;

/// `|a - n| / max(|a|, |n|, ERROR_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(ERROR_FLOOR)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    pub max_rel_err: f64,
    /// (input or parameter index, flat coordinate) of the worst entry.
    pub worst: (usize, usize),
    pub coords: usize,
}

impl CheckReport {
    fn new() -> Self {
        Self { max_rel_err: 0.0, worst: (0, 0), coords: 0 }
    }

    fn record(&mut self, which: usize, coord: usize, analytic: f64, numeric: f64) {
        let e = relative_error(analytic, numeric);
        self.coords += 1;
        if e > self.max_rel_err || e.is_nan() {
            self.max_rel_err = if e.is_nan() { f64::INFINITY } else { e };
            self.worst = (which, coord);
        }
    }
}

/// Fixed random projection turning a tensor output into a scalar loss, so
/// outputs whose plain sum is constant (softmax rows) are still checked.
fn projection(shape: (usize, usize), seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::new(shape.0, shape.1, (0..shape.0 * shape.1).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

fn projected(tape: &mut Tape, y: Var, w: &Tensor) -> Var {
    let wv = tape.constant(w.clone());
    let p = tape.mul(y, wv);
    tape.sum_all(p)
}

/// Checks the reverse-mode gradient of `f` with respect to every coordinate
/// of every input against central differences with step `h`.
pub fn grad_check<F>(f: F, inputs: &[Tensor], h: f64, seed: u64) -> CheckReport
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let eval = |xs: &[Tensor], w: Option<&Tensor>| -> (Tape, Vec<Var>, Var) {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.input(x.clone())).collect();
        let y = f(&mut tape, &vars);
        let out = match w {
            Some(w) => projected(&mut tape, y, w),
            None => y,
        };
        (tape, vars, out)
    };
    let (probe, _, y) = eval(inputs, None);
    let w = projection(probe.shape(y), seed);
    let (tape, vars, loss) = eval(inputs, Some(&w));
    let grads = tape.backward(loss);

    let mut report = CheckReport::new();
    let mut xs = inputs.to_vec();
    for (k, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var).cloned().unwrap_or_else(|| {
            let (r, c) = inputs[k].shape();
            Tensor::zeros(r, c)
        });
        for i in 0..inputs[k].len() {
            let orig = xs[k].data()[i];
            xs[k].data_mut()[i] = orig + h;
            let (t, _, l) = eval(&xs, Some(&w));
            let plus = t.value(l).item();
            xs[k].data_mut()[i] = orig - h;
            let (t, _, l) = eval(&xs, Some(&w));
            let minus = t.value(l).item();
            xs[k].data_mut()[i] = orig;
            report.record(k, i, analytic.data()[i], (plus - minus) / (2.0 * h));
        }
    }
    report
}

/// Checks a scalar loss built from `store` with respect to the listed
/// parameters. `coords_per_param` caps how many coordinates per tensor are
/// perturbed (chosen by `seed`); `None` checks all of them.
pub fn grad_check_params<F>(
    store: &mut ParamStore,
    params: &[ParamId],
    f: F,
    h: f64,
    coords_per_param: Option<usize>,
    seed: u64,
) -> CheckReport
where
    F: Fn(&mut Tape, &ParamStore) -> Var,
{
    let loss_of = |store: &ParamStore| -> f64 {
        let mut tape = Tape::new();
        let l = f(&mut tape, store);
        tape.value(l).item()
    };
    store.zero_grads();
    {
        let mut tape = Tape::new();
        let l = f(&mut tape, store);
        assert_eq!(tape.shape(l), (1, 1), "parameter check needs a scalar loss");
        let grads = tape.backward(l);
        tape.accumulate_param_grads(&grads, store);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = CheckReport::new();
    for &id in params {
        let analytic = store.grad(id).clone();
        let n = analytic.len();
        let coords: Vec<usize> = match coords_per_param {
            Some(k) if k < n => (0..k).map(|_| rng.gen_range(0..n)).collect(),
            _ => (0..n).collect(),
        };
        for i in coords {
            let orig = store.value(id).data()[i];
            store.value_mut(id).data_mut()[i] = orig + h;
            let plus = loss_of(store);
            store.value_mut(id).data_mut()[i] = orig - h;
            let minus = loss_of(store);
            store.value_mut(id).data_mut()[i] = orig;
            report.record(id.index(), i, analytic.data()[i], (plus - minus) / (2.0 * h));
        }
    }
    store.zero_grads();
    report
}
