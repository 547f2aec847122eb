//! Reverse-mode differentiation over complex matrices.
//!
//! Every complex entry is treated as two independent real slots, so the
//! adjoint of a complex node is `∂L/∂re + i·∂L/∂im` for a real loss `L`. With
//! that convention the familiar rules hold verbatim: for `Y = A·B`,
//! `Ā += Ȳ·Bᴴ` and `B̄ += Aᴴ·Ȳ`; for `U = A⁻¹·B`, `B̄ += A⁻ᴴ·Ū` and
//! `Ā −= (A⁻ᴴ·Ū)·Uᴴ`.
//!
//! The operation set is exactly what the recurrent spectral map needs.

use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg::{cgemm, scale_rows, split_tanh_in_place, CMat, Lu};
use crate::scalar::Scalar;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct CVar {
    id: usize,
    rows: usize,
    cols: usize,
}

impl CVar {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(&self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    /// Two slots per entry: the re plane, then the im plane.
    Complex,
    /// One slot per entry; the imaginary part is pinned at zero.
    Real,
}

#[doc(hidden)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AdjointFault {
    /// Uses `1 + tanh²` in place of `1 − tanh²`.
    TanhDerivativeSign,
}

#[derive(Debug)]
enum Op<T> {
    Leaf { param: Option<ParamId> },
    MatMul { a: usize, b: usize },
    Solve { a: usize, b: usize, lu: Arc<Lu<T>> },
    DiagScale { d: usize, x: usize },
    SplitTanh { x: usize, n: usize },
    RealPart { x: usize, row: usize },
    ConcatCols { a: usize, b: usize },
    ConcatRows { a: usize, b: usize },
    SubConst { x: usize },
    SumSquares { x: usize },
    Scale { x: usize, alpha: T },
    Add { a: usize, b: usize },
}

#[derive(Debug)]
struct Node<T> {
    op: Op<T>,
    value: CMat<T>,
    needs_grad: bool,
}

#[derive(Debug)]
struct ParamInfo {
    node: usize,
    kind: ParamKind,
}

/// Append-only record of a forward computation.
#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    params: Vec<ParamInfo>,
    lu_cache: HashMap<usize, Arc<Lu<T>>>,
    fault: Option<AdjointFault>,
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            params: Vec::new(),
            lu_cache: HashMap::new(),
            fault: None,
        }
    }

    #[doc(hidden)]
    pub fn inject_fault(&mut self, fault: AdjointFault) {
        self.fault = Some(fault);
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: CVar) -> &CMat<T> {
        &self.nodes[v.id].value
    }

    pub fn param_kind(&self, p: ParamId) -> ParamKind {
        self.params[p.0].kind
    }

    fn push(&mut self, op: Op<T>, value: CMat<T>, needs_grad: bool) -> CVar {
        let id = self.nodes.len();
        let (rows, cols) = value.shape();
        self.nodes.push(Node { op, value, needs_grad });
        CVar { id, rows, cols }
    }

    fn needs(&self, ids: &[usize]) -> bool {
        ids.iter().any(|&i| self.nodes[i].needs_grad)
    }

    fn validate_leaf(values: &CMat<T>) -> Result<()> {
        if values.is_empty() {
            return Err(Error::EmptyShape { rows: values.rows(), cols: values.cols() });
        }
        if let Some(index) = values.first_non_finite() {
            return Err(Error::NonFinite { index });
        }
        Ok(())
    }

    /// Records a leaf. When `trainable`, a complex parameter is allocated
    /// with `2·rows·cols` gradient slots.
    pub fn cvar(&mut self, values: CMat<T>, trainable: bool) -> Result<(CVar, Option<ParamId>)> {
        Self::validate_leaf(&values)?;
        if trainable {
            let (v, p) = self.param_with_kind(values, ParamKind::Complex);
            Ok((v, Some(p)))
        } else {
            Ok((self.push(Op::Leaf { param: None }, values, false), None))
        }
    }

    pub fn constant(&mut self, values: CMat<T>) -> Result<CVar> {
        self.cvar(values, false).map(|(v, _)| v)
    }

    pub fn param(&mut self, values: CMat<T>) -> Result<(CVar, ParamId)> {
        Self::validate_leaf(&values)?;
        Ok(self.param_with_kind(values, ParamKind::Complex))
    }

    /// Real-valued parameter: the imaginary plane is zeroed and carries no slots.
    pub fn real_param(&mut self, values: CMat<T>) -> Result<(CVar, ParamId)> {
        Self::validate_leaf(&values)?;
        let (rows, cols) = values.shape();
        let (re, _) = values.into_parts();
        let values = CMat::from_real(rows, cols, re)?;
        Ok(self.param_with_kind(values, ParamKind::Real))
    }

    fn param_with_kind(&mut self, values: CMat<T>, kind: ParamKind) -> (CVar, ParamId) {
        let pid = ParamId(self.params.len());
        let v = self.push(Op::Leaf { param: Some(pid) }, values, true);
        self.params.push(ParamInfo { node: v.id, kind });
        (v, pid)
    }

    pub fn cmatmul(&mut self, a: CVar, b: CVar) -> Result<CVar> {
        let value = self.value(a).matmul(self.value(b))?;
        let needs = self.needs(&[a.id, b.id]);
        Ok(self.push(Op::MatMul { a: a.id, b: b.id }, value, needs))
    }

    /// Installs a precomputed factorization for `a`, reused by every
    /// subsequent [`Tape::csolve`] against the same node.
    pub fn prime_lu(&mut self, a: CVar, lu: Arc<Lu<T>>) -> Result<()> {
        if lu.dim() != a.rows || a.rows != a.cols {
            return Err(Error::ShapeMismatch { op: "prime_lu", left: a.shape(), right: (lu.dim(), lu.dim()) });
        }
        self.lu_cache.insert(a.id, lu);
        Ok(())
    }

    /// `u` with `a·u = b`; the factorization of `a` is computed once per node.
    pub fn csolve(&mut self, a: CVar, b: CVar) -> Result<CVar> {
        if a.rows != a.cols || b.rows != a.rows {
            return Err(Error::ShapeMismatch { op: "csolve", left: a.shape(), right: b.shape() });
        }
        let lu = match self.lu_cache.get(&a.id) {
            Some(lu) => Arc::clone(lu),
            None => {
                let lu = Arc::new(Lu::factor(self.value(a))?);
                self.lu_cache.insert(a.id, Arc::clone(&lu));
                lu
            }
        };
        let value = lu.solve(self.value(b))?;
        let needs = self.needs(&[a.id, b.id]);
        Ok(self.push(Op::Solve { a: a.id, b: b.id, lu }, value, needs))
    }

    /// Scales row `i` of `x` by `d[i]`; `d` is a column vector.
    pub fn diag_scale(&mut self, d: CVar, x: CVar) -> Result<CVar> {
        if d.cols != 1 || d.rows != x.rows {
            return Err(Error::ShapeMismatch { op: "diag_scale", left: d.shape(), right: x.shape() });
        }
        let value = scale_rows(self.value(d), self.value(x));
        let needs = self.needs(&[d.id, x.id]);
        Ok(self.push(Op::DiagScale { d: d.id, x: x.id }, value, needs))
    }

    /// Rows `0..n_nonlinear` map to `tanh(re) + i·tanh(im)`; later rows pass through.
    pub fn split_tanh(&mut self, x: CVar, n_nonlinear: usize) -> Result<CVar> {
        if n_nonlinear > x.rows {
            return Err(Error::IndexOutOfRange { index: n_nonlinear, len: x.rows });
        }
        let mut value = self.value(x).clone();
        split_tanh_in_place(&mut value, n_nonlinear);
        let needs = self.needs(&[x.id]);
        Ok(self.push(Op::SplitTanh { x: x.id, n: n_nonlinear }, value, needs))
    }

    /// `Re x[row, ·]` as a real `1 × cols` row.
    pub fn real_component(&mut self, x: CVar, row: usize) -> Result<CVar> {
        if row >= x.rows {
            return Err(Error::IndexOutOfRange { index: row, len: x.rows });
        }
        let xv = self.value(x);
        let re: Vec<T> = (0..x.cols).map(|j| xv.re()[row + j * x.rows]).collect();
        let value = CMat::from_real(1, x.cols, re)?;
        let needs = self.needs(&[x.id]);
        Ok(self.push(Op::RealPart { x: x.id, row }, value, needs))
    }

    pub fn concat_cols(&mut self, a: CVar, b: CVar) -> Result<CVar> {
        let value = self.value(a).hcat(self.value(b))?;
        let needs = self.needs(&[a.id, b.id]);
        Ok(self.push(Op::ConcatCols { a: a.id, b: b.id }, value, needs))
    }

    pub fn concat_rows(&mut self, a: CVar, b: CVar) -> Result<CVar> {
        let value = self.value(a).vcat(self.value(b))?;
        let needs = self.needs(&[a.id, b.id]);
        Ok(self.push(Op::ConcatRows { a: a.id, b: b.id }, value, needs))
    }

    /// `x − c` for a constant `c`.
    pub fn sub_const(&mut self, x: CVar, c: &CMat<T>) -> Result<CVar> {
        if c.shape() != x.shape() {
            return Err(Error::ShapeMismatch { op: "sub_const", left: x.shape(), right: c.shape() });
        }
        let mut value = self.value(x).clone();
        value.axpy(-T::one(), c);
        let needs = self.needs(&[x.id]);
        Ok(self.push(Op::SubConst { x: x.id }, value, needs))
    }

    /// `Σ |x_ij|²` as a real scalar.
    pub fn sum_squares(&mut self, x: CVar) -> Result<CVar> {
        let xv = self.value(x);
        let s = xv.re().iter().chain(xv.im()).fold(T::zero(), |acc, &v| acc + v * v);
        let value = CMat::from_real(1, 1, vec![s])?;
        let needs = self.needs(&[x.id]);
        Ok(self.push(Op::SumSquares { x: x.id }, value, needs))
    }

    pub fn scale(&mut self, x: CVar, alpha: T) -> Result<CVar> {
        let mut value = self.value(x).clone();
        value.scale(alpha);
        let needs = self.needs(&[x.id]);
        Ok(self.push(Op::Scale { x: x.id, alpha }, value, needs))
    }

    pub fn add(&mut self, a: CVar, b: CVar) -> Result<CVar> {
        if a.shape() != b.shape() {
            return Err(Error::ShapeMismatch { op: "add", left: a.shape(), right: b.shape() });
        }
        let mut value = self.value(a).clone();
        value.axpy(T::one(), self.value(b));
        let needs = self.needs(&[a.id, b.id]);
        Ok(self.push(Op::Add { a: a.id, b: b.id }, value, needs))
    }

    /// Propagates adjoints from a real scalar `loss` back to every parameter,
    /// visiting nodes in strictly decreasing id order. Consumes the tape.
    pub fn backward(self, loss: CVar) -> Result<Gradients<T>> {
        if loss.shape() != (1, 1) {
            return Err(Error::NonScalarLoss { rows: loss.rows, cols: loss.cols });
        }
        let Tape { nodes, params, fault, .. } = self;
        let mut grads = Gradients::zeros_for(&params, &nodes);
        let param_of: HashMap<usize, usize> = params.iter().enumerate().map(|(p, info)| (info.node, p)).collect();

        let mut adj: Vec<Option<CMat<T>>> = Vec::with_capacity(loss.id + 1);
        adj.resize_with(loss.id + 1, || None);
        adj[loss.id] = Some(CMat::from_real(1, 1, vec![T::one()])?);

        for id in (0..=loss.id).rev() {
            let Some(g) = adj[id].take() else { continue };
            let node = &nodes[id];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Leaf { param: Some(_) } => {
                    let p = param_of[&id];
                    grads.accumulate(p, &g);
                }
                Op::Leaf { param: None } => {}
                &Op::MatMul { a, b } => {
                    if nodes[a].needs_grad {
                        let bv = &nodes[b].value;
                        let mut ga = CMat::zeros(nodes[a].value.rows(), nodes[a].value.cols());
                        cgemm(T::one(), g.view(), bv.view().h(), T::zero(), &mut ga.view_mut());
                        add_adj(&mut adj, a, ga);
                    }
                    if nodes[b].needs_grad {
                        let av = &nodes[a].value;
                        let mut gb = CMat::zeros(av.cols(), g.cols());
                        cgemm(T::one(), av.view().h(), g.view(), T::zero(), &mut gb.view_mut());
                        add_adj(&mut adj, b, gb);
                    }
                }
                Op::Solve { a, b, lu } => {
                    let (a, b) = (*a, *b);
                    let gb = lu.solve_adjoint(&g)?;
                    if nodes[a].needs_grad {
                        let u = &node.value;
                        let mut ga = CMat::zeros(gb.rows(), u.rows());
                        cgemm(-T::one(), gb.view(), u.view().h(), T::zero(), &mut ga.view_mut());
                        add_adj(&mut adj, a, ga);
                    }
                    if nodes[b].needs_grad {
                        add_adj(&mut adj, b, gb);
                    }
                }
                &Op::DiagScale { d, x } => {
                    let dv = &nodes[d].value;
                    let xv = &nodes[x].value;
                    let (rows, cols) = xv.shape();
                    if nodes[x].needs_grad {
                        let mut gx = CMat::zeros(rows, cols);
                        let (ore, oim) = gx.planes_mut();
                        for j in 0..cols {
                            for i in 0..rows {
                                let k = i + j * rows;
                                let (dr, di) = (dv.re()[i], -dv.im()[i]);
                                let (gr, gi) = (g.re()[k], g.im()[k]);
                                ore[k] = dr * gr - di * gi;
                                oim[k] = dr * gi + di * gr;
                            }
                        }
                        add_adj(&mut adj, x, gx);
                    }
                    if nodes[d].needs_grad {
                        let mut gd = CMat::zeros(rows, 1);
                        let (ore, oim) = gd.planes_mut();
                        for j in 0..cols {
                            for i in 0..rows {
                                let k = i + j * rows;
                                let (xr, xi) = (xv.re()[k], -xv.im()[k]);
                                let (gr, gi) = (g.re()[k], g.im()[k]);
                                ore[i] += gr * xr - gi * xi;
                                oim[i] += gr * xi + gi * xr;
                            }
                        }
                        add_adj(&mut adj, d, gd);
                    }
                }
                &Op::SplitTanh { x, n } => {
                    let y = &node.value;
                    let rows = y.rows();
                    let mut gx = g;
                    let sign = match fault {
                        Some(AdjointFault::TanhDerivativeSign) => T::one(),
                        None => -T::one(),
                    };
                    {
                        let (gre, gim) = gx.planes_mut();
                        for j in 0..y.cols() {
                            for i in 0..n {
                                let k = i + j * rows;
                                let (yr, yi) = (y.re()[k], y.im()[k]);
                                gre[k] *= T::one() + sign * yr * yr;
                                gim[k] *= T::one() + sign * yi * yi;
                            }
                        }
                    }
                    add_adj(&mut adj, x, gx);
                }
                &Op::RealPart { x, row } => {
                    let (rows, cols) = nodes[x].value.shape();
                    let mut gx = CMat::zeros(rows, cols);
                    for j in 0..cols {
                        gx.re_mut()[row + j * rows] = g.re()[j];
                    }
                    add_adj(&mut adj, x, gx);
                }
                &Op::ConcatCols { a, b } => {
                    let split = nodes[a].value.cols();
                    if nodes[a].needs_grad {
                        add_adj(&mut adj, a, g.columns(0, split));
                    }
                    if nodes[b].needs_grad {
                        add_adj(&mut adj, b, g.columns(split, g.cols()));
                    }
                }
                &Op::ConcatRows { a, b } => {
                    let split = nodes[a].value.rows();
                    if nodes[a].needs_grad {
                        add_adj(&mut adj, a, g.row_range(0, split));
                    }
                    if nodes[b].needs_grad {
                        add_adj(&mut adj, b, g.row_range(split, g.rows()));
                    }
                }
                &Op::SubConst { x } => add_adj(&mut adj, x, g),
                &Op::SumSquares { x } => {
                    let mut gx = nodes[x].value.clone();
                    gx.scale(T::lit(2.0) * g.re()[0]);
                    add_adj(&mut adj, x, gx);
                }
                &Op::Scale { x, alpha } => {
                    let mut gx = g;
                    gx.scale(alpha);
                    add_adj(&mut adj, x, gx);
                }
                &Op::Add { a, b } => {
                    if nodes[a].needs_grad && nodes[b].needs_grad {
                        add_adj(&mut adj, a, g.clone());
                        add_adj(&mut adj, b, g);
                    } else if nodes[a].needs_grad {
                        add_adj(&mut adj, a, g);
                    } else {
                        add_adj(&mut adj, b, g);
                    }
                }
            }
        }
        Ok(grads)
    }
}

fn add_adj<T: Scalar>(adj: &mut [Option<CMat<T>>], id: usize, g: CMat<T>) {
    match &mut adj[id] {
        Some(acc) => acc.axpy(T::one(), &g),
        slot @ None => *slot = Some(g),
    }
}

/// Gradient slots per parameter: complex parameters hold the re plane
/// followed by the im plane; real parameters hold one slot per entry.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T> {
    slots: Vec<Vec<T>>,
    kinds: Vec<ParamKind>,
}

impl<T: Scalar> Gradients<T> {
    fn zeros_for(params: &[ParamInfo], nodes: &[Node<T>]) -> Self {
        let slots = params
            .iter()
            .map(|p| {
                let n = nodes[p.node].value.len();
                match p.kind {
                    ParamKind::Complex => vec![T::zero(); 2 * n],
                    ParamKind::Real => vec![T::zero(); n],
                }
            })
            .collect();
        Gradients { slots, kinds: params.iter().map(|p| p.kind).collect() }
    }

    fn accumulate(&mut self, p: usize, g: &CMat<T>) {
        let n = g.len();
        let slot = &mut self.slots[p];
        for (s, &v) in slot[..n].iter_mut().zip(g.re()) {
            *s += v;
        }
        if self.kinds[p] == ParamKind::Complex {
            for (s, &v) in slot[n..].iter_mut().zip(g.im()) {
                *s += v;
            }
        }
    }

    pub fn param_count(&self) -> usize {
        self.slots.len()
    }

    pub fn get(&self, p: ParamId) -> &[T] {
        &self.slots[p.0]
    }

    pub fn get_mut(&mut self, p: ParamId) -> &mut [T] {
        &mut self.slots[p.0]
    }

    pub fn kind(&self, p: ParamId) -> ParamKind {
        self.kinds[p.0]
    }

    pub fn slot_count(&self) -> usize {
        self.slots.iter().map(Vec::len).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &[T])> {
        self.slots.iter().enumerate().map(|(i, s)| (ParamId(i), s.as_slice()))
    }

    /// Elementwise sum; both sides must come from structurally identical tapes.
    pub fn merge(&mut self, other: &Self) {
        assert_eq!(self.kinds, other.kinds, "merging gradients of different parameter sets");
        for (a, b) in self.slots.iter_mut().zip(&other.slots) {
            for (x, &y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, alpha: T) {
        for v in self.slots.iter_mut().flatten() {
            *v *= alpha;
        }
    }

    pub fn norm(&self) -> T {
        self.slots.iter().flatten().fold(T::zero(), |acc, &v| acc + v * v).sqrt()
    }

    /// First `(param, slot)` holding a non-finite value.
    pub fn first_non_finite(&self) -> Option<(usize, usize)> {
        self.slots
            .iter()
            .enumerate()
            .find_map(|(p, s)| s.iter().position(|v| !v.is_finite()).map(|k| (p, k)))
    }
}
