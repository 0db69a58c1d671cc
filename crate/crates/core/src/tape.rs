//! Scalar reverse-mode differentiation on a thread-local tape.
//!
//! Every quantity that may carry a gradient is a [`Var`]. A `Var` built from
//! an `f64` is a constant, and arithmetic between constants never touches the
//! tape, so the same simulation code serves plain evaluation and training.
//! While a [`Tape`] is alive on the current thread, operations that involve at
//! least one recorded operand append a node holding its parents and local
//! partial derivatives. [`Tape::backward`] then sweeps the nodes in reverse.
//!
//! Subgradient conventions at kinks: `max0`/`relu` have derivative 0 at 0,
//! and `min` sends the whole derivative to its first argument on ties.

use std::cell::{Cell, RefCell};
use std::iter::Sum;
use std::marker::PhantomData;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub, SubAssign};

use crate::error::{Error, Result};

const CONSTANT: u32 = u32::MAX;

/// Operation recorded by a tape node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Scale,
    Max0,
    Relu,
    Min2,
    Max2,
    Softplus,
    Tanh,
    Exp,
    Ln,
    Sqrt,
    Square,
    Dot,
    Sum,
}

struct Nodes {
    generation: u32,
    // parents of node i live in parents[starts[i]..starts[i + 1]]
    starts: Vec<u32>,
    parents: Vec<u32>,
    partials: Vec<f64>,
    ops: Vec<OpKind>,
}

impl Nodes {
    fn new(generation: u32) -> Self {
        Nodes {
            generation,
            starts: vec![0],
            parents: Vec::new(),
            partials: Vec::new(),
            ops: Vec::new(),
        }
    }

    fn len(&self) -> usize {
        self.ops.len()
    }

    fn push(&mut self, op: OpKind, inputs: impl Iterator<Item = (Var, f64)>) -> u32 {
        for (v, d) in inputs {
            if v.idx == CONSTANT {
                continue;
            }
            assert_eq!(
                v.gen, self.generation,
                "Var recorded on a different tape was used on the active tape"
            );
            self.parents.push(v.idx);
            self.partials.push(d);
        }
        let idx = self.ops.len() as u32;
        self.ops.push(op);
        self.starts.push(self.parents.len() as u32);
        idx
    }
}

thread_local! {
    static ACTIVE: RefCell<Option<Nodes>> = const { RefCell::new(None) };
    static NEXT_GENERATION: Cell<u32> = const { Cell::new(1) };
    static TRACING: Cell<bool> = const { Cell::new(false) };
    static TRACE: RefCell<Vec<bool>> = const { RefCell::new(Vec::new()) };
}

fn trace_branch(taken: bool) {
    if TRACING.with(Cell::get) {
        TRACE.with(|t| t.borrow_mut().push(taken));
    }
}

/// A real value that may be recorded on the active tape.
#[derive(Clone, Copy, Debug)]
pub struct Var {
    val: f64,
    idx: u32,
    gen: u32,
}

impl Default for Var {
    fn default() -> Self {
        Var::constant(0.0)
    }
}

impl PartialEq for Var {
    fn eq(&self, other: &Self) -> bool {
        self.val == other.val
    }
}

impl From<f64> for Var {
    fn from(v: f64) -> Self {
        Var::constant(v)
    }
}

fn record<const N: usize>(val: f64, op: OpKind, inputs: [(Var, f64); N]) -> Var {
    if inputs.iter().all(|(v, _)| v.idx == CONSTANT) {
        return Var::constant(val);
    }
    record_iter(val, op, inputs.into_iter())
}

fn record_iter(val: f64, op: OpKind, inputs: impl Iterator<Item = (Var, f64)>) -> Var {
    ACTIVE.with(|cell| {
        let mut guard = cell.borrow_mut();
        let nodes = guard
            .as_mut()
            .expect("a recorded Var was used after its tape was dropped");
        let idx = nodes.push(op, inputs);
        Var {
            val,
            idx,
            gen: nodes.generation,
        }
    })
}

impl Var {
    pub const fn constant(val: f64) -> Self {
        Var {
            val,
            idx: CONSTANT,
            gen: 0,
        }
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.val
    }

    #[inline]
    pub fn is_constant(self) -> bool {
        self.idx == CONSTANT
    }

    /// `max(x, 0)`.
    pub fn max0(self) -> Var {
        let taken = self.val > 0.0;
        trace_branch(taken);
        if taken {
            record(self.val, OpKind::Max0, [(self, 1.0)])
        } else {
            record(0.0, OpKind::Max0, [(self, 0.0)])
        }
    }

    /// Same function as [`Var::max0`], recorded as a network activation.
    pub fn relu(self) -> Var {
        let taken = self.val > 0.0;
        trace_branch(taken);
        let d = if taken { 1.0 } else { 0.0 };
        record(self.val.max(0.0), OpKind::Relu, [(self, d)])
    }

    pub fn min(self, other: Var) -> Var {
        let first = self.val <= other.val;
        trace_branch(first);
        if first {
            record(self.val, OpKind::Min2, [(self, 1.0), (other, 0.0)])
        } else {
            record(other.val, OpKind::Min2, [(self, 0.0), (other, 1.0)])
        }
    }

    pub fn max(self, other: Var) -> Var {
        let first = self.val >= other.val;
        trace_branch(first);
        if first {
            record(self.val, OpKind::Max2, [(self, 1.0), (other, 0.0)])
        } else {
            record(other.val, OpKind::Max2, [(self, 0.0), (other, 1.0)])
        }
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(self) -> Var {
        let x = self.val;
        let val = if x > 0.0 {
            x + (-x).exp().ln_1p()
        } else {
            x.exp().ln_1p()
        };
        let sig = if x >= 0.0 {
            1.0 / (1.0 + (-x).exp())
        } else {
            let e = x.exp();
            e / (1.0 + e)
        };
        record(val, OpKind::Softplus, [(self, sig)])
    }

    pub fn tanh(self) -> Var {
        let t = self.val.tanh();
        record(t, OpKind::Tanh, [(self, 1.0 - t * t)])
    }

    pub fn exp(self) -> Var {
        let e = self.val.exp();
        record(e, OpKind::Exp, [(self, e)])
    }

    pub fn ln(self) -> Var {
        record(self.val.ln(), OpKind::Ln, [(self, 1.0 / self.val)])
    }

    pub fn sqrt(self) -> Var {
        let s = self.val.sqrt();
        record(s, OpKind::Sqrt, [(self, 0.5 / s)])
    }

    pub fn square(self) -> Var {
        record(self.val * self.val, OpKind::Square, [(self, 2.0 * self.val)])
    }

    /// `Σ_k w_k · x_k` recorded as a single node.
    pub fn dot(weights: &[Var], inputs: &[Var]) -> Var {
        assert_eq!(weights.len(), inputs.len(), "dot operands differ in length");
        let val: f64 = weights.iter().zip(inputs).map(|(w, x)| w.val * x.val).sum();
        let any_recorded = weights.iter().chain(inputs).any(|v| !v.is_constant());
        if !any_recorded {
            return Var::constant(val);
        }
        let w_part = weights.iter().zip(inputs).map(|(w, x)| (*w, x.val));
        let x_part = inputs.iter().zip(weights).map(|(x, w)| (*x, w.val));
        record_iter(val, OpKind::Dot, w_part.chain(x_part))
    }

    /// Sum recorded as a single node.
    pub fn sum_slice(xs: &[Var]) -> Var {
        let val: f64 = xs.iter().map(|x| x.val).sum();
        if xs.iter().all(|x| x.is_constant()) {
            return Var::constant(val);
        }
        record_iter(val, OpKind::Sum, xs.iter().map(|x| (*x, 1.0)))
    }
}

impl Add for Var {
    type Output = Var;
    fn add(self, rhs: Var) -> Var {
        record(self.val + rhs.val, OpKind::Add, [(self, 1.0), (rhs, 1.0)])
    }
}

impl Sub for Var {
    type Output = Var;
    fn sub(self, rhs: Var) -> Var {
        record(self.val - rhs.val, OpKind::Sub, [(self, 1.0), (rhs, -1.0)])
    }
}

impl Mul for Var {
    type Output = Var;
    fn mul(self, rhs: Var) -> Var {
        record(
            self.val * rhs.val,
            OpKind::Mul,
            [(self, rhs.val), (rhs, self.val)],
        )
    }
}

impl Div for Var {
    type Output = Var;
    fn div(self, rhs: Var) -> Var {
        let q = self.val / rhs.val;
        record(
            q,
            OpKind::Div,
            [(self, 1.0 / rhs.val), (rhs, -q / rhs.val)],
        )
    }
}

impl Neg for Var {
    type Output = Var;
    fn neg(self) -> Var {
        record(-self.val, OpKind::Neg, [(self, -1.0)])
    }
}

impl Add<f64> for Var {
    type Output = Var;
    fn add(self, rhs: f64) -> Var {
        record(self.val + rhs, OpKind::Add, [(self, 1.0)])
    }
}

impl Sub<f64> for Var {
    type Output = Var;
    fn sub(self, rhs: f64) -> Var {
        record(self.val - rhs, OpKind::Sub, [(self, 1.0)])
    }
}

impl Mul<f64> for Var {
    type Output = Var;
    fn mul(self, rhs: f64) -> Var {
        record(self.val * rhs, OpKind::Scale, [(self, rhs)])
    }
}

impl Div<f64> for Var {
    type Output = Var;
    fn div(self, rhs: f64) -> Var {
        record(self.val / rhs, OpKind::Scale, [(self, 1.0 / rhs)])
    }
}

impl Add<Var> for f64 {
    type Output = Var;
    fn add(self, rhs: Var) -> Var {
        rhs + self
    }
}

impl Sub<Var> for f64 {
    type Output = Var;
    fn sub(self, rhs: Var) -> Var {
        record(self - rhs.val, OpKind::Sub, [(rhs, -1.0)])
    }
}

impl Mul<Var> for f64 {
    type Output = Var;
    fn mul(self, rhs: Var) -> Var {
        rhs * self
    }
}

impl AddAssign for Var {
    fn add_assign(&mut self, rhs: Var) {
        *self = *self + rhs;
    }
}

impl SubAssign for Var {
    fn sub_assign(&mut self, rhs: Var) {
        *self = *self - rhs;
    }
}

impl Sum for Var {
    fn sum<I: Iterator<Item = Var>>(iter: I) -> Var {
        let xs: Vec<Var> = iter.collect();
        Var::sum_slice(&xs)
    }
}

/// Recording session. Dropping it discards the recorded graph.
pub struct Tape {
    generation: u32,
    _single_thread: PhantomData<*const ()>,
}

impl Tape {
    /// Starts recording on the current thread.
    ///
    /// Panics when another tape is already active on this thread.
    pub fn start() -> Tape {
        let generation = NEXT_GENERATION.with(|g| {
            let v = g.get();
            g.set(v.wrapping_add(1).max(1));
            v
        });
        ACTIVE.with(|cell| {
            let mut slot = cell.borrow_mut();
            assert!(slot.is_none(), "a tape is already recording on this thread");
            *slot = Some(Nodes::new(generation));
        });
        Tape {
            generation,
            _single_thread: PhantomData,
        }
    }

    /// Registers an independent variable.
    pub fn leaf(&self, value: f64) -> Var {
        ACTIVE.with(|cell| {
            let mut guard = cell.borrow_mut();
            let nodes = guard.as_mut().expect("tape is active while its guard lives");
            let idx = nodes.push(OpKind::Leaf, std::iter::empty());
            Var {
                val: value,
                idx,
                gen: self.generation,
            }
        })
    }

    pub fn leaves(&self, values: &[f64]) -> Vec<Var> {
        values.iter().map(|&v| self.leaf(v)).collect()
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        ACTIVE.with(|cell| cell.borrow().as_ref().map_or(0, Nodes::len))
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Reverse sweep from a scalar output.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        ACTIVE.with(|cell| {
            let guard = cell.borrow();
            let nodes = guard.as_ref().expect("tape is active while its guard lives");
            let mut adjoint = vec![0.0; nodes.len()];
            if output.is_constant() {
                return Ok(Gradients {
                    adjoint,
                    generation: self.generation,
                });
            }
            assert_eq!(output.gen, self.generation, "output belongs to another tape");
            adjoint[output.idx as usize] = 1.0;
            for i in (0..=output.idx as usize).rev() {
                let a = adjoint[i];
                if a == 0.0 {
                    continue;
                }
                if !a.is_finite() {
                    return Err(Error::TapeFault {
                        node: i,
                        op: nodes.ops[i],
                    });
                }
                let (lo, hi) = (nodes.starts[i] as usize, nodes.starts[i + 1] as usize);
                for k in lo..hi {
                    let d = nodes.partials[k];
                    if !d.is_finite() {
                        return Err(Error::TapeFault {
                            node: i,
                            op: nodes.ops[i],
                        });
                    }
                    adjoint[nodes.parents[k] as usize] += a * d;
                }
            }
            Ok(Gradients {
                adjoint,
                generation: self.generation,
            })
        })
    }
}

impl Drop for Tape {
    fn drop(&mut self) {
        ACTIVE.with(|cell| {
            cell.borrow_mut().take();
        });
    }
}

/// Adjoints produced by one reverse sweep.
#[derive(Debug)]
pub struct Gradients {
    adjoint: Vec<f64>,
    generation: u32,
}

impl Gradients {
    /// `∂output/∂v`; zero for constants.
    pub fn wrt(&self, v: Var) -> f64 {
        if v.is_constant() {
            return 0.0;
        }
        assert_eq!(v.gen, self.generation, "Var belongs to another tape");
        self.adjoint.get(v.idx as usize).copied().unwrap_or(0.0)
    }
}

/// One named block of a [`ParamVector`], stored row-major.
#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Segment {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Flat parameter store with a paired gradient buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    grads: Vec<f64>,
    segments: Vec<Segment>,
}

impl ParamVector {
    /// Zero-initialized store tiled by `shapes` in order.
    pub fn zeros(shapes: &[(&str, usize, usize)]) -> Self {
        let mut segments = Vec::with_capacity(shapes.len());
        let mut offset = 0;
        for (name, rows, cols) in shapes {
            segments.push(Segment {
                name: (*name).to_string(),
                rows: *rows,
                cols: *cols,
                offset,
            });
            offset += rows * cols;
        }
        ParamVector {
            values: vec![0.0; offset],
            grads: vec![0.0; offset],
            segments,
        }
    }

    /// Rebuilds a store from serialized parts, checking that the segments tile the values.
    pub fn from_parts(values: Vec<f64>, segments: Vec<Segment>) -> Result<Self> {
        let mut offset = 0;
        for s in &segments {
            if s.offset != offset {
                return Err(Error::Data(format!(
                    "segment {} starts at {} but the previous segment ends at {}",
                    s.name, s.offset, offset
                )));
            }
            offset += s.len();
        }
        if offset != values.len() {
            return Err(Error::LengthMismatch {
                what: "parameter values",
                expected: offset,
                found: values.len(),
            });
        }
        let grads = vec![0.0; values.len()];
        Ok(ParamVector {
            values,
            grads,
            segments,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn grads(&self) -> &[f64] {
        &self.grads
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn segment(&self, name: &str) -> Option<&Segment> {
        self.segments.iter().find(|s| s.name == name)
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = 0.0);
    }

    /// Values as untaped constants.
    pub fn constants(&self) -> Vec<Var> {
        self.values.iter().map(|&v| Var::constant(v)).collect()
    }

    /// Registers every value as a leaf of `tape`.
    pub fn taped(&self, tape: &Tape) -> Vec<Var> {
        tape.leaves(&self.values)
    }

    /// Adds the adjoints of `leaves` (as returned by [`ParamVector::taped`]) into `grads`.
    pub fn accumulate(&mut self, leaves: &[Var], grads: &Gradients) {
        assert_eq!(leaves.len(), self.values.len());
        for (g, v) in self.grads.iter_mut().zip(leaves) {
            *g += grads.wrt(*v);
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.grads.iter().map(|g| g * g).sum::<f64>().sqrt()
    }
}

/// Outcome of comparing taped gradients against central differences.
#[derive(Clone, Debug)]
pub struct GradCheck {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    /// Coordinates whose perturbation changed a branch of max/min/relu.
    pub kink_crossed: Vec<bool>,
}

impl GradCheck {
    /// Relative error per coordinate: `|a − n| / max(|a|, |n|, floor)`, where the
    /// floor is `1e-7 · max_j |a_j|` so exactly-zero gradients compare cleanly.
    pub fn relative_errors(&self) -> Vec<f64> {
        let scale = self
            .analytic
            .iter()
            .fold(0.0f64, |m, a| m.max(a.abs()))
            .max(1e-12);
        let floor = 1e-7 * scale;
        self.analytic
            .iter()
            .zip(&self.numeric)
            .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
            .collect()
    }

    pub fn checked(&self) -> usize {
        self.kink_crossed.iter().filter(|k| !**k).count()
    }

    /// Fraction of unskipped coordinates within `tol`.
    pub fn pass_fraction(&self, tol: f64) -> f64 {
        let errs = self.relative_errors();
        let mut pass = 0usize;
        let mut total = 0usize;
        for (e, k) in errs.iter().zip(&self.kink_crossed) {
            if *k {
                continue;
            }
            total += 1;
            if *e <= tol {
                pass += 1;
            }
        }
        if total == 0 {
            1.0
        } else {
            pass as f64 / total as f64
        }
    }
}

fn traced<T>(f: impl FnOnce() -> T) -> (T, Vec<bool>) {
    TRACE.with(|t| t.borrow_mut().clear());
    TRACING.with(|c| c.set(true));
    let out = f();
    TRACING.with(|c| c.set(false));
    let trace = TRACE.with(|t| std::mem::take(&mut *t.borrow_mut()));
    (out, trace)
}

/// Central-difference gradient check of `f` at `x` with step `h`.
///
/// `f` is called once on taped leaves and twice per coordinate on constants.
/// Must not be called while another tape is active.
pub fn gradient_check<F>(f: F, x: &[f64], h: f64) -> Result<GradCheck>
where
    F: Fn(&[Var]) -> Result<Var>,
{
    let (analytic, base_trace) = {
        let tape = Tape::start();
        let leaves = tape.leaves(x);
        let (out, trace) = traced(|| f(&leaves));
        let out = out?;
        let grads = tape.backward(out)?;
        (leaves.iter().map(|v| grads.wrt(*v)).collect::<Vec<_>>(), trace)
    };
    let mut numeric = Vec::with_capacity(x.len());
    let mut kink_crossed = Vec::with_capacity(x.len());
    let mut point: Vec<Var> = x.iter().map(|&v| Var::constant(v)).collect();
    for j in 0..x.len() {
        point[j] = Var::constant(x[j] + h);
        let (plus, t_plus) = traced(|| f(&point));
        point[j] = Var::constant(x[j] - h);
        let (minus, t_minus) = traced(|| f(&point));
        point[j] = Var::constant(x[j]);
        numeric.push((plus?.value() - minus?.value()) / (2.0 * h));
        kink_crossed.push(t_plus != base_trace || t_minus != base_trace);
    }
    Ok(GradCheck {
        analytic,
        numeric,
        kink_crossed,
    })
}
