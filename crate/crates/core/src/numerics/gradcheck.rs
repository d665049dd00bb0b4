//! Central finite-difference verification of autodiff gradients.

use crate::error::Result;

use super::{Graph, ParamGroup, ParamStore, Scalar, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckStatus {
    Passed,
    Failed,
    /// The parameter is not trainable, so there is no gradient to compare.
    Frozen,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub param: String,
    pub status: CheckStatus,
    pub max_rel_error: f64,
    pub coords_checked: usize,
    /// Coordinate with the largest error, with its analytic and numeric values.
    pub worst: Option<(usize, f64, f64)>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.status != CheckStatus::Failed
    }
}

/// Error between an analytic and a numeric derivative, relative to the larger
/// magnitude and floored at 1 so near-zero gradients are compared absolutely.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1.0)
}

/// Compares the autodiff gradient of `f` w.r.t. parameter `param` against
/// `(f(x+h) − f(x−h)) / 2h` on up to `max_coords` evenly spaced coordinates.
///
/// `f` must build its loss from the store it is handed. Gradients already
/// accumulated in the store are cleared.
pub fn finite_difference_check<F, L>(
    store: &mut ParamStore<F>,
    param: &str,
    mut f: L,
    tol: f64,
    max_coords: usize,
) -> Result<GradCheckReport>
where
    F: Scalar,
    L: FnMut(&mut Graph<F>, &ParamStore<F>) -> Result<Var>,
{
    let entry = store.tensor(param)?;
    let numel = entry.numel();
    if !store.get(param).map(|e| e.trainable).unwrap_or(false) {
        return Ok(GradCheckReport {
            param: param.to_string(),
            status: CheckStatus::Frozen,
            max_rel_error: 0.0,
            coords_checked: 0,
            worst: None,
        });
    }

    store.zero_grads();
    let mut g = Graph::new();
    let loss = f(&mut g, store)?;
    g.backward_into(loss, store)?;
    let analytic: Vec<f64> =
        store.tensor(param)?.grad().map(|gr| gr.iter().map(|v| v.to_f64().unwrap()).collect()).unwrap_or_else(|| vec![0.0; numel]);
    store.zero_grads();

    let stride = (numel / max_coords.max(1)).max(1);
    let mut max_err = 0.0f64;
    let mut worst = None;
    let mut checked = 0;
    let mut eval = |store: &ParamStore<F>| -> Result<f64> {
        let mut g = Graph::new();
        let l = f(&mut g, store)?;
        Ok(g.scalar(l).to_f64().unwrap())
    };
    for i in (0..numel).step_by(stride).take(max_coords) {
        let x0 = store.tensor(param)?.data()[i];
        let h = F::fd_step(x0);
        let set = |store: &mut ParamStore<F>, v: F| {
            store.get_mut(param).expect("param present").tensor.data_mut()[i] = v;
        };
        set(store, x0 + h);
        let up = eval(store)?;
        set(store, x0 - h);
        let down = eval(store)?;
        set(store, x0);
        // use the step actually realized in F, not the nominal one
        let span = ((x0 + h) - (x0 - h)).to_f64().unwrap();
        let numeric = (up - down) / span;
        let err = relative_error(analytic[i], numeric);
        if err > max_err || worst.is_none() {
            max_err = max_err.max(err);
            worst = Some((i, analytic[i], numeric));
        }
        checked += 1;
    }
    Ok(GradCheckReport {
        param: param.to_string(),
        status: if max_err <= tol { CheckStatus::Passed } else { CheckStatus::Failed },
        max_rel_error: max_err,
        coords_checked: checked,
        worst,
    })
}

/// Runs [`finite_difference_check`] for every trainable parameter of `store`.
pub fn check_all<F, L>(store: &mut ParamStore<F>, mut f: L, tol: f64, max_coords: usize) -> Result<Vec<GradCheckReport>>
where
    F: Scalar,
    L: FnMut(&mut Graph<F>, &ParamStore<F>) -> Result<Var>,
{
    let names: Vec<String> = store.names().map(str::to_string).collect();
    names.iter().map(|n| finite_difference_check(store, n, &mut f, tol, max_coords)).collect()
}

/// Like [`check_all`], but the numeric derivative comes from `reference`,
/// the same loss evaluated in double precision on the store cast to `f64`.
/// This separates the accuracy of the analytic gradient in `F` from the
/// rounding noise a finite difference in `F` would add.
pub fn reference_check<F, L, M>(
    store: &ParamStore<F>,
    mut f: L,
    mut reference: M,
    tol: f64,
    max_coords: usize,
) -> Result<Vec<GradCheckReport>>
where
    F: Scalar,
    L: FnMut(&mut Graph<F>, &ParamStore<F>) -> Result<Var>,
    M: FnMut(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var>,
{
    let mut analytic = store.clone();
    analytic.zero_grads();
    let mut g = Graph::new();
    let loss = f(&mut g, &analytic)?;
    g.backward_into(loss, &mut analytic)?;
    let mut wide = store.cast::<f64>();
    let mut eval = |s: &ParamStore<f64>| -> Result<f64> {
        let mut g = Graph::new();
        let l = reference(&mut g, s)?;
        Ok(g.scalar(l))
    };
    let mut out = Vec::new();
    for (name, entry) in analytic.iter() {
        if !entry.trainable {
            out.push(GradCheckReport {
                param: name.to_string(),
                status: CheckStatus::Frozen,
                max_rel_error: 0.0,
                coords_checked: 0,
                worst: None,
            });
            continue;
        }
        let numel = entry.tensor.numel();
        let grad: Vec<f64> =
            entry.tensor.grad().map(|gr| gr.iter().map(|v| v.to_f64().unwrap()).collect()).unwrap_or_else(|| vec![0.0; numel]);
        let stride = (numel / max_coords.max(1)).max(1);
        let mut max_err = 0.0f64;
        let mut worst = None;
        let mut checked = 0;
        for i in (0..numel).step_by(stride).take(max_coords) {
            let x0 = wide.tensor(name)?.data()[i];
            let h = f64::fd_step(x0);
            let mut set = |v: f64| wide.get_mut(name).expect("param present").tensor.data_mut()[i] = v;
            set(x0 + h);
            let up = eval(&wide)?;
            let mut set = |v: f64| wide.get_mut(name).expect("param present").tensor.data_mut()[i] = v;
            set(x0 - h);
            let down = eval(&wide)?;
            wide.get_mut(name).expect("param present").tensor.data_mut()[i] = x0;
            let numeric = (up - down) / ((x0 + h) - (x0 - h));
            let err = relative_error(grad[i], numeric);
            if err > max_err || worst.is_none() {
                max_err = max_err.max(err);
                worst = Some((i, grad[i], numeric));
            }
            checked += 1;
        }
        out.push(GradCheckReport {
            param: name.to_string(),
            status: if max_err <= tol { CheckStatus::Passed } else { CheckStatus::Failed },
            max_rel_error: max_err,
            coords_checked: checked,
            worst,
        });
    }
    Ok(out)
}

/// One differentiable graph operation wired into a scalar loss over named
/// parameters, for finite-difference checks.
pub struct OpCase<F: Scalar> {
    pub name: &'static str,
    pub params: Vec<(&'static str, Tensor<F>)>,
    pub loss: LossFn<F>,
}

impl<F: Scalar> OpCase<F> {
    pub fn store(&self) -> Result<ParamStore<F>> {
        let mut s = ParamStore::new();
        for (n, t) in &self.params {
            s.insert(*n, t.clone(), ParamGroup::Backbone)?;
        }
        Ok(s)
    }
}

/// Deterministic values in roughly [-1, 1] kept at least 0.1 away from zero,
/// so kinks of `relu` and `abs` sit far from every coordinate.
pub fn probe_tensor<F: Scalar>(shape: &[usize], salt: f64) -> Tensor<F> {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|i| {
            let v = (1.7 * i as f64 + salt).sin() * 0.9;
            F::lit(if v.abs() < 0.1 { v + 0.2f64.copysign(v) } else { v })
        })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches data")
}

/// Weighted sum of every element with fixed weights, so each output
/// coordinate receives a distinct upstream gradient.
pub fn readout<F: Scalar>(g: &mut Graph<F>, y: Var) -> Result<Var> {
    let w = probe_tensor(g.shape(y), 0.37);
    let w = g.input(w);
    let m = g.mul(y, w)?;
    g.sum(m)
}

type LossFn<F> = Box<dyn Fn(&mut Graph<F>, &ParamStore<F>) -> Result<Var>>;

fn case<F: Scalar>(name: &'static str, params: &[(&'static str, &[usize])], body: LossFn<F>) -> OpCase<F> {
    OpCase {
        name,
        params: params.iter().enumerate().map(|(k, (n, sh))| (*n, probe_tensor(sh, 0.61 * k as f64 + 0.2))).collect(),
        loss: Box::new(move |g, s| {
            let y = body(g, s)?;
            readout(g, y)
        }),
    }
}

macro_rules! p {
    ($g:ident, $s:ident, $($n:ident),+) => { $(let $n = $g.param($s, stringify!($n))?;)+ };
}

/// Every differentiable operation of [`Graph`]. Plumbing nodes (`input`,
/// `leaf`, `param`, `detach`) carry no local derivative and are not listed.
pub fn op_cases<F: Scalar>() -> Vec<OpCase<F>> {
    let causal: Vec<bool> = (0..9).map(|k| k % 3 <= k / 3).collect();
    vec![
        case(
            "matmul",
            &[("a", &[3, 4]), ("b", &[4, 2])],
            Box::new(|g, s| {
                p!(g, s, a, b);
                g.matmul(a, b)
            }),
        ),
        case(
            "matmul_bt",
            &[("a", &[3, 4]), ("b", &[2, 4])],
            Box::new(|g, s| {
                p!(g, s, a, b);
                g.matmul_bt(a, b)
            }),
        ),
        case(
            "add",
            &[("a", &[3, 4]), ("b", &[3, 4])],
            Box::new(|g, s| {
                p!(g, s, a, b);
                g.add(a, b)
            }),
        ),
        case(
            "sub",
            &[("a", &[3, 4]), ("b", &[3, 4])],
            Box::new(|g, s| {
                p!(g, s, a, b);
                g.sub(a, b)
            }),
        ),
        case(
            "mul",
            &[("a", &[3, 4]), ("b", &[3, 4])],
            Box::new(|g, s| {
                p!(g, s, a, b);
                g.mul(a, b)
            }),
        ),
        case(
            "add_row",
            &[("x", &[3, 4]), ("b", &[4])],
            Box::new(|g, s| {
                p!(g, s, x, b);
                g.add_row(x, b)
            }),
        ),
        case(
            "linear",
            &[("x", &[3, 4]), ("w", &[4, 2]), ("b", &[2])],
            Box::new(|g, s| {
                p!(g, s, x, w, b);
                g.linear(x, w, b)
            }),
        ),
        case(
            "scale",
            &[("x", &[3, 4])],
            Box::new(|g, s| {
                p!(g, s, x);
                g.scale(x, F::lit(-1.7))
            }),
        ),
        case(
            "relu",
            &[("x", &[3, 4])],
            Box::new(|g, s| {
                p!(g, s, x);
                g.relu(x)
            }),
        ),
        case(
            "abs",
            &[("x", &[3, 4])],
            Box::new(|g, s| {
                p!(g, s, x);
                g.abs(x)
            }),
        ),
        case(
            "sum",
            &[("x", &[3, 4])],
            Box::new(|g, s| {
                p!(g, s, x);
                g.sum(x)
            }),
        ),
        case(
            "mean",
            &[("x", &[3, 4])],
            Box::new(|g, s| {
                p!(g, s, x);
                g.mean(x)
            }),
        ),
        case(
            "stack",
            &[("x", &[3, 4]), ("y", &[2])],
            Box::new(|g, s| {
                p!(g, s, x, y);
                let (a, b) = (g.sum(x)?, g.mean(y)?);
                g.stack(&[a, b, a])
            }),
        ),
        case(
            "mean_of",
            &[("x", &[3, 4]), ("y", &[2])],
            Box::new(|g, s| {
                p!(g, s, x, y);
                let (a, b) = (g.sum(x)?, g.sum(y)?);
                g.mean_of(&[a, b])
            }),
        ),
        case(
            "layer_norm",
            &[("x", &[3, 5]), ("gain", &[5]), ("bias", &[5])],
            Box::new(|g, s| {
                p!(g, s, x, gain, bias);
                g.layer_norm(x, gain, bias, F::lit(1e-5))
            }),
        ),
        case(
            "masked_softmax",
            &[("x", &[2, 3, 3])],
            Box::new(move |g, s| {
                p!(g, s, x);
                g.masked_softmax(x, &causal)
            }),
        ),
        case(
            "softmax",
            &[("x", &[3, 4])],
            Box::new(|g, s| {
                p!(g, s, x);
                g.softmax(x)
            }),
        ),
        case(
            "log_softmax",
            &[("x", &[3, 4])],
            Box::new(|g, s| {
                p!(g, s, x);
                g.log_softmax(x)
            }),
        ),
        case(
            "conv1d",
            &[("x", &[7, 3]), ("kernel", &[3, 3, 2]), ("bias", &[2])],
            Box::new(|g, s| {
                p!(g, s, x, kernel, bias);
                g.conv1d(x, kernel, bias, 2)
            }),
        ),
        case(
            "cols",
            &[("x", &[3, 5])],
            Box::new(|g, s| {
                p!(g, s, x);
                g.cols(x, 1, 3)
            }),
        ),
        case(
            "concat_cols",
            &[("a", &[3, 2]), ("b", &[3, 3])],
            Box::new(|g, s| {
                p!(g, s, a, b);
                g.concat_cols(&[a, b, a])
            }),
        ),
        case(
            "rows",
            &[("x", &[4, 3])],
            Box::new(|g, s| {
                p!(g, s, x);
                g.rows(x, &[2, 0, 2])
            }),
        ),
        case(
            "replace_rows",
            &[("x", &[4, 3]), ("fill", &[3])],
            Box::new(|g, s| {
                p!(g, s, x, fill);
                g.replace_rows(x, fill, &[true, false, true, false])
            }),
        ),
        case(
            "pick",
            &[("x", &[3, 4])],
            Box::new(|g, s| {
                p!(g, s, x);
                g.pick(x, &[1, 3, 0])
            }),
        ),
        case(
            "gather",
            &[("x", &[3, 4])],
            Box::new(|g, s| {
                p!(g, s, x);
                g.gather(x, &[0, 3, 2, 2, 1, 0], 2)
            }),
        ),
        case(
            "normalize_rows",
            &[("x", &[3, 4])],
            Box::new(|g, s| {
                p!(g, s, x);
                g.normalize_rows(x, F::lit(1e-8))
            }),
        ),
        case(
            "fused_loss",
            &[("x", &[5, 3])],
            Box::new(|g, s| {
                p!(g, s, x);
                let lp = g.log_softmax(x)?;
                crate::asr::ctc_loss(g, lp, &[1, 2])
            }),
        ),
    ]
}

/// Checks every case of [`op_cases`] on all coordinates.
pub fn check_ops<F: Scalar>(tol: f64) -> Result<Vec<(&'static str, GradCheckReport)>> {
    let mut out = Vec::new();
    for c in op_cases::<F>() {
        let mut store = c.store()?;
        for r in check_all(&mut store, &c.loss, tol, usize::MAX)? {
            out.push((c.name, r));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_has_zero_error() {
        let mut s = ParamStore::<f64>::new();
        s.insert("p", Tensor::new(vec![3], vec![0.1, 2.0, -7.0]).unwrap(), ParamGroup::Backbone).unwrap();
        let r = finite_difference_check(
            &mut s,
            "p",
            |g, s| {
                let p = g.param(s, "p")?;
                g.sum(p)
            },
            1e-9,
            16,
        )
        .unwrap();
        assert_eq!(r.status, CheckStatus::Passed);
        assert!(r.max_rel_error < 1e-9);
        assert_eq!(r.coords_checked, 3);
    }

    #[test]
    fn frozen_param_is_skipped() {
        let mut s = ParamStore::<f32>::new();
        s.insert("p", Tensor::full(&[2], 1.0), ParamGroup::Backbone).unwrap();
        s.get_mut("p").unwrap().trainable = false;
        let r = finite_difference_check(
            &mut s,
            "p",
            |g, s| {
                let p = g.param(s, "p")?;
                g.sum(p)
            },
            1e-3,
            4,
        )
        .unwrap();
        assert_eq!(r.status, CheckStatus::Frozen);
        assert!(r.passed());
    }

    #[test]
    fn l1_linear_layer_passes_in_single_precision() {
        let mut s = ParamStore::<f32>::new();
        let w: Vec<f32> = (0..12).map(|i| (i as f32 * 1.7).sin() * 0.6).collect();
        s.insert("w", Tensor::new(vec![4, 3], w).unwrap(), ParamGroup::Backbone).unwrap();
        s.insert("b", Tensor::new(vec![3], vec![0.1, -0.2, 0.3]).unwrap(), ParamGroup::Backbone).unwrap();
        let x: Vec<f32> = (0..20).map(|i| (i as f32 * 0.9 + 0.3).cos()).collect();
        let target: Vec<f32> = (0..15).map(|i| (i as f32 * 2.3).sin() * 1.3).collect();
        let loss = |g: &mut Graph<f32>, s: &ParamStore<f32>| {
            let x = g.input(Tensor::new(vec![5, 4], x.clone())?);
            let y = g.input(Tensor::new(vec![5, 3], target.clone())?);
            let w = g.param(s, "w")?;
            let b = g.param(s, "b")?;
            let p = g.linear(x, w, b)?;
            let d = g.sub(p, y)?;
            let a = g.abs(d)?;
            g.mean(a)
        };
        for r in check_all(&mut s, loss, 1e-3, 64).unwrap() {
            assert_eq!(r.status, CheckStatus::Passed, "{r:?}");
        }
    }
}
