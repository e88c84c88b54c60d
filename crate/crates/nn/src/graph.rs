//! Reverse-mode automatic differentiation over `ndarray` tensors.
//!
//! A [`Graph`] is built per forward pass. Every operation appends a node that
//! owns its value and, when recording, a closure mapping the upstream
//! gradient to gradients for its inputs. Parameters enter through
//! [`Graph::param`]; running statistics produced in training mode are
//! collected as updates for the caller to apply.

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use ndarray::{ArrayD, Axis, IxDyn};

use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;

pub(crate) type BackFn<T> = Box<dyn FnOnce(&ArrayD<T>, &[bool]) -> Vec<Option<ArrayD<T>>>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Op,
    Constant,
    Param(usize),
    Input,
}

struct Node<T> {
    value: Rc<ArrayD<T>>,
    needs_grad: bool,
    parents: Vec<usize>,
    back: Option<BackFn<T>>,
    kind: Kind,
}

pub struct Graph<T: Scalar> {
    nodes: RefCell<Vec<Node<T>>>,
    params: Vec<Rc<ArrayD<T>>>,
    trainable: Vec<bool>,
    param_nodes: RefCell<Vec<Option<usize>>>,
    record: bool,
    train: bool,
    updates: RefCell<Vec<(ParamId, ArrayD<T>)>>,
}

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g, T: Scalar> {
    pub(crate) g: &'g Graph<T>,
    pub(crate) id: usize,
}

impl<T: Scalar> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

pub struct Gradients<T> {
    params: Vec<Option<ArrayD<T>>>,
    inputs: HashMap<usize, ArrayD<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn param(&self, id: ParamId) -> Option<&ArrayD<T>> {
        self.params.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn input(&self, v: Var<'_, T>) -> Option<&ArrayD<T>> {
        self.inputs.get(&v.id)
    }

    pub fn into_params(self) -> Vec<Option<ArrayD<T>>> {
        self.params
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new(store: &ParamStore<T>, record: bool, train: bool) -> Self {
        Graph {
            nodes: RefCell::new(Vec::new()),
            params: store.values(),
            trainable: store.iter().map(|(_, p)| p.trainable).collect(),
            param_nodes: RefCell::new(vec![None; store.len()]),
            record,
            train,
            updates: RefCell::new(Vec::new()),
        }
    }

    /// No tape, normalisation layers use running statistics.
    pub fn inference(store: &ParamStore<T>) -> Self {
        Self::new(store, false, false)
    }

    /// Tape recorded, normalisation layers use batch statistics.
    pub fn training(store: &ParamStore<T>) -> Self {
        Self::new(store, true, true)
    }

    pub fn is_recording(&self) -> bool {
        self.record
    }

    pub fn is_training(&self) -> bool {
        self.train
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn leaf(&self, value: Rc<ArrayD<T>>, needs_grad: bool, kind: Kind) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            needs_grad,
            parents: Vec::new(),
            back: None,
            kind,
        });
        Var {
            g: self,
            id: nodes.len() - 1,
        }
    }

    pub fn constant(&self, value: ArrayD<T>) -> Var<'_, T> {
        self.leaf(Rc::new(value), false, Kind::Constant)
    }

    pub fn scalar(&self, v: T) -> Var<'_, T> {
        self.constant(ArrayD::from_elem(IxDyn(&[]), v))
    }

    /// A leaf whose gradient is reported by [`Graph::backward`].
    pub fn input(&self, value: ArrayD<T>) -> Var<'_, T> {
        self.leaf(Rc::new(value), self.record, Kind::Input)
    }

    pub fn param(&self, id: ParamId) -> Var<'_, T> {
        if let Some(n) = self.param_nodes.borrow()[id.0] {
            return Var { g: self, id: n };
        }
        let v = self.leaf(
            self.params[id.0].clone(),
            self.record && self.trainable[id.0],
            Kind::Param(id.0),
        );
        self.param_nodes.borrow_mut()[id.0] = Some(v.id);
        v
    }

    pub(crate) fn push<F>(&self, value: ArrayD<T>, parents: &[Var<'_, T>], back: F) -> Var<'_, T>
    where
        F: FnOnce(&ArrayD<T>, &[bool]) -> Vec<Option<ArrayD<T>>> + 'static,
    {
        let mut nodes = self.nodes.borrow_mut();
        let needs_grad = self.record && parents.iter().any(|p| nodes[p.id].needs_grad);
        nodes.push(Node {
            value: Rc::new(value),
            needs_grad,
            parents: if needs_grad {
                parents.iter().map(|p| p.id).collect()
            } else {
                Vec::new()
            },
            back: if needs_grad {
                Some(Box::new(back))
            } else {
                None
            },
            kind: Kind::Op,
        });
        Var {
            g: self,
            id: nodes.len() - 1,
        }
    }

    pub(crate) fn value_of(&self, id: usize) -> Rc<ArrayD<T>> {
        self.nodes.borrow()[id].value.clone()
    }

    pub(crate) fn needs_grad(&self, id: usize) -> bool {
        self.nodes.borrow()[id].needs_grad
    }

    pub(crate) fn record_update(&self, id: ParamId, value: ArrayD<T>) {
        self.updates.borrow_mut().push((id, value));
    }

    /// Running-statistic updates produced by training-mode normalisation.
    pub fn take_updates(&self) -> Vec<(ParamId, ArrayD<T>)> {
        std::mem::take(&mut *self.updates.borrow_mut())
    }

    /// Back-propagates from a scalar. Intermediate values are released as the
    /// sweep passes them, so the graph should not be read afterwards.
    pub fn backward(&self, loss: Var<'_, T>) -> Gradients<T> {
        let mut nodes = self.nodes.borrow_mut();
        assert_eq!(nodes[loss.id].value.len(), 1, "backward needs a scalar");
        let mut grads: Vec<Option<ArrayD<T>>> = (0..=loss.id).map(|_| None).collect();
        grads[loss.id] = Some(ArrayD::from_elem(nodes[loss.id].value.raw_dim(), T::one()));
        let mut out = Gradients {
            params: vec![None; self.params.len()],
            inputs: HashMap::new(),
        };
        let empty = Rc::new(ArrayD::zeros(IxDyn(&[0])));
        for i in (0..=loss.id).rev() {
            let Some(g) = grads[i].take() else {
                continue;
            };
            let kind = nodes[i].kind;
            match kind {
                Kind::Param(p) => out.params[p] = Some(g),
                Kind::Input => {
                    out.inputs.insert(i, g);
                }
                Kind::Constant => {}
                Kind::Op => {
                    let back = nodes[i].back.take();
                    let parents = std::mem::take(&mut nodes[i].parents);
                    nodes[i].value = empty.clone();
                    let Some(back) = back else { continue };
                    let needs: Vec<bool> = parents.iter().map(|&p| nodes[p].needs_grad).collect();
                    let pgs = back(&g, &needs);
                    debug_assert_eq!(pgs.len(), parents.len());
                    for ((p, pg), need) in parents.into_iter().zip(pgs).zip(needs) {
                        let Some(pg) = pg else { continue };
                        if !need {
                            continue;
                        }
                        debug_assert_eq!(
                            pg.shape(),
                            nodes[p].value.shape(),
                            "gradient shape for node {p}"
                        );
                        match &mut grads[p] {
                            Some(acc) => *acc += &pg,
                            slot => *slot = Some(pg),
                        }
                    }
                }
            }
        }
        out
    }
}

/// Sums a broadcast gradient back down to `shape`.
pub(crate) fn sum_to<T: Scalar>(g: ArrayD<T>, shape: &[usize]) -> ArrayD<T> {
    if g.shape() == shape {
        return g;
    }
    let mut g = g;
    while g.ndim() > shape.len() {
        g = g.sum_axis(Axis(0));
    }
    for (ax, &n) in shape.iter().enumerate() {
        if n == 1 && g.shape()[ax] != 1 {
            g = g.sum_axis(Axis(ax)).insert_axis(Axis(ax));
        }
    }
    g
}

impl<'g, T: Scalar> Var<'g, T> {
    pub fn graph(&self) -> &'g Graph<T> {
        self.g
    }

    pub fn value(&self) -> Rc<ArrayD<T>> {
        self.g.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.g.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn ndim(&self) -> usize {
        self.g.nodes.borrow()[self.id].value.ndim()
    }

    pub fn item(&self) -> T {
        let v = self.value();
        assert_eq!(v.len(), 1, "item() on a non-scalar");
        *v.iter().next().unwrap()
    }

    pub fn requires_grad(&self) -> bool {
        self.g.needs_grad(self.id)
    }

    fn unary<F>(self, value: ArrayD<T>, back: F) -> Var<'g, T>
    where
        F: FnOnce(&ArrayD<T>) -> ArrayD<T> + 'static,
    {
        self.g.push(value, &[self], move |g, _| vec![Some(back(g))])
    }

    // -- elementwise binary -------------------------------------------------

    pub fn add(self, o: Var<'g, T>) -> Var<'g, T> {
        let (a, b) = (self.value(), o.value());
        let (sa, sb) = (a.shape().to_vec(), b.shape().to_vec());
        let v = &*a + &*b;
        self.g.push(v, &[self, o], move |g, need| {
            vec![
                need[0].then(|| sum_to(g.clone(), &sa)),
                need[1].then(|| sum_to(g.clone(), &sb)),
            ]
        })
    }

    pub fn sub(self, o: Var<'g, T>) -> Var<'g, T> {
        let (a, b) = (self.value(), o.value());
        let (sa, sb) = (a.shape().to_vec(), b.shape().to_vec());
        let v = &*a - &*b;
        self.g.push(v, &[self, o], move |g, need| {
            vec![
                need[0].then(|| sum_to(g.clone(), &sa)),
                need[1].then(|| sum_to(g.mapv(|x| -x), &sb)),
            ]
        })
    }

    pub fn mul(self, o: Var<'g, T>) -> Var<'g, T> {
        let (a, b) = (self.value(), o.value());
        let v = &*a * &*b;
        self.g.push(v, &[self, o], move |g, need| {
            vec![
                need[0].then(|| sum_to(g * &*b, a.shape())),
                need[1].then(|| sum_to(g * &*a, b.shape())),
            ]
        })
    }

    pub fn div(self, o: Var<'g, T>) -> Var<'g, T> {
        let (a, b) = (self.value(), o.value());
        let v = &*a / &*b;
        self.g.push(v, &[self, o], move |g, need| {
            vec![
                need[0].then(|| sum_to(g / &*b, a.shape())),
                need[1].then(|| {
                    let t = &(g * &*a) / &(&*b * &*b);
                    sum_to(t.mapv(|x| -x), b.shape())
                }),
            ]
        })
    }

    /// Four-quadrant arctangent of `self / x`.
    pub fn atan2(self, x: Var<'g, T>) -> Var<'g, T> {
        let (a, b) = (self.value(), x.value());
        assert_eq!(a.shape(), b.shape(), "atan2 operands must match");
        let v = ndarray::Zip::from(&*a).and(&*b).map_collect(|&y, &x| y.atan2(x));
        self.g.push(v, &[self, x], move |g, need| {
            let r2 = ndarray::Zip::from(&*a).and(&*b).map_collect(|&y, &x| {
                let r = x * x + y * y;
                if r > T::zero() {
                    T::one() / r
                } else {
                    T::zero()
                }
            });
            vec![
                need[0].then(|| ndarray::Zip::from(g).and(&*b).and(&r2).map_collect(|&g, &x, &r| g * x * r)),
                need[1].then(|| ndarray::Zip::from(g).and(&*a).and(&r2).map_collect(|&g, &y, &r| -g * y * r)),
            ]
        })
    }

    /// sqrt(self^2 + o^2) with a zero gradient at the origin.
    pub fn hypot(self, o: Var<'g, T>) -> Var<'g, T> {
        let (a, b) = (self.value(), o.value());
        assert_eq!(a.shape(), b.shape(), "hypot operands must match");
        let v = Rc::new(ndarray::Zip::from(&*a).and(&*b).map_collect(|&x, &y| (x * x + y * y).sqrt()));
        let vv = v.clone();
        self.g.push((*v).clone(), &[self, o], move |g, need| {
            let part = |c: &ArrayD<T>| {
                ndarray::Zip::from(g).and(c).and(&*vv).map_collect(|&g, &c, &m| {
                    if m > T::zero() {
                        g * c / m
                    } else {
                        T::zero()
                    }
                })
            };
            vec![need[0].then(|| part(&a)), need[1].then(|| part(&b))]
        })
    }

    // -- elementwise unary --------------------------------------------------

    pub fn neg(self) -> Var<'g, T> {
        let v = self.value().mapv(|x| -x);
        self.unary(v, |g| g.mapv(|x| -x))
    }

    pub fn scale(self, c: T) -> Var<'g, T> {
        let v = self.value().mapv(|x| x * c);
        self.unary(v, move |g| g.mapv(|x| x * c))
    }

    pub fn shift(self, c: T) -> Var<'g, T> {
        let v = self.value().mapv(|x| x + c);
        self.unary(v, |g| g.clone())
    }

    pub fn exp(self) -> Var<'g, T> {
        let y = Rc::new(self.value().mapv(|x| x.exp()));
        let yy = y.clone();
        self.unary((*y).clone(), move |g| g * &*yy)
    }

    pub fn ln(self) -> Var<'g, T> {
        let x = self.value();
        let v = x.mapv(|x| x.ln());
        self.unary(v, move |g| g / &*x)
    }

    pub fn sqrt(self) -> Var<'g, T> {
        let y = Rc::new(self.value().mapv(|x| x.sqrt()));
        let yy = y.clone();
        self.unary((*y).clone(), move |g| {
            let half = T::c(0.5);
            ndarray::Zip::from(g).and(&*yy).map_collect(|&g, &y| {
                if y > T::zero() {
                    g * half / y
                } else {
                    T::zero()
                }
            })
        })
    }

    pub fn abs(self) -> Var<'g, T> {
        let x = self.value();
        let v = x.mapv(|x| x.abs());
        self.unary(v, move |g| ndarray::Zip::from(g).and(&*x).map_collect(|&g, &x| g * sign(x)))
    }

    pub fn square(self) -> Var<'g, T> {
        let x = self.value();
        let v = x.mapv(|x| x * x);
        self.unary(v, move |g| {
            let two = T::c(2.0);
            ndarray::Zip::from(g).and(&*x).map_collect(|&g, &x| g * two * x)
        })
    }

    pub fn tanh(self) -> Var<'g, T> {
        let y = Rc::new(self.value().mapv(|x| x.tanh()));
        let yy = y.clone();
        self.unary((*y).clone(), move |g| {
            ndarray::Zip::from(g).and(&*yy).map_collect(|&g, &y| g * (T::one() - y * y))
        })
    }

    pub fn sigmoid(self) -> Var<'g, T> {
        let y = Rc::new(self.value().mapv(sigmoid));
        let yy = y.clone();
        self.unary((*y).clone(), move |g| {
            ndarray::Zip::from(g).and(&*yy).map_collect(|&g, &y| g * y * (T::one() - y))
        })
    }

    pub fn silu(self) -> Var<'g, T> {
        let x = self.value();
        let v = x.mapv(|x| x * sigmoid(x));
        self.unary(v, move |g| {
            ndarray::Zip::from(g).and(&*x).map_collect(|&g, &x| {
                let s = sigmoid(x);
                g * s * (T::one() + x * (T::one() - s))
            })
        })
    }

    pub fn softplus(self) -> Var<'g, T> {
        let x = self.value();
        let v = x.mapv(softplus);
        self.unary(v, move |g| ndarray::Zip::from(g).and(&*x).map_collect(|&g, &x| g * sigmoid(x)))
    }

    /// Exact (erf-based) GELU.
    pub fn gelu(self) -> Var<'g, T> {
        let x = self.value();
        let r2 = T::c(std::f64::consts::FRAC_1_SQRT_2);
        let half = T::c(0.5);
        let v = x.mapv(|x| half * x * (T::one() + (x * r2).erf()));
        self.unary(v, move |g| {
            let c = T::c(1.0 / (2.0 * std::f64::consts::PI).sqrt());
            ndarray::Zip::from(g).and(&*x).map_collect(|&g, &x| {
                let cdf = half * (T::one() + (x * r2).erf());
                let pdf = c * (-half * x * x).exp();
                g * (cdf + x * pdf)
            })
        })
    }

    pub fn leaky_relu(self, slope: T) -> Var<'g, T> {
        let x = self.value();
        let v = x.mapv(|x| if x >= T::zero() { x } else { slope * x });
        self.unary(v, move |g| {
            ndarray::Zip::from(g)
                .and(&*x)
                .map_collect(|&g, &x| if x >= T::zero() { g } else { slope * g })
        })
    }

    pub fn sin(self) -> Var<'g, T> {
        let x = self.value();
        let v = x.mapv(|x| x.sin());
        self.unary(v, move |g| ndarray::Zip::from(g).and(&*x).map_collect(|&g, &x| g * x.cos()))
    }

    pub fn cos(self) -> Var<'g, T> {
        let x = self.value();
        let v = x.mapv(|x| x.cos());
        self.unary(v, move |g| ndarray::Zip::from(g).and(&*x).map_collect(|&g, &x| -g * x.sin()))
    }

    /// Principal value in (-pi, pi]; unit derivative between wrap points.
    pub fn wrap(self) -> Var<'g, T> {
        let v = self.value().mapv(wrap);
        self.unary(v, |g| g.clone())
    }

    /// |x - 2*pi*round(x / 2*pi)|.
    pub fn anti_wrap(self) -> Var<'g, T> {
        let x = self.value();
        let v = x.mapv(|x| centered(x).abs());
        self.unary(v, move |g| {
            ndarray::Zip::from(g).and(&*x).map_collect(|&g, &x| g * sign(centered(x)))
        })
    }

    // -- reductions ---------------------------------------------------------

    pub fn sum(self) -> Var<'g, T> {
        let x = self.value();
        let shape = x.raw_dim();
        let v = ArrayD::from_elem(IxDyn(&[]), x.sum());
        self.unary(v, move |g| {
            let s = *g.iter().next().unwrap();
            ArrayD::from_elem(shape, s)
        })
    }

    pub fn mean(self) -> Var<'g, T> {
        let n = T::c(self.value().len() as f64);
        self.sum().scale(T::one() / n)
    }

    pub fn sum_axis(self, axis: usize, keep: bool) -> Var<'g, T> {
        let x = self.value();
        let shape = x.raw_dim();
        let mut v = x.sum_axis(Axis(axis));
        if keep {
            v = v.insert_axis(Axis(axis));
        }
        self.unary(v, move |g| {
            let g = if keep { g.clone() } else { g.clone().insert_axis(Axis(axis)) };
            g.broadcast(shape).unwrap().to_owned()
        })
    }

    pub fn mean_axis(self, axis: usize, keep: bool) -> Var<'g, T> {
        let n = T::c(self.shape()[axis] as f64);
        self.sum_axis(axis, keep).scale(T::one() / n)
    }

    // -- shape --------------------------------------------------------------

    pub fn reshape(self, shape: &[usize]) -> Var<'g, T> {
        let x = self.value();
        let old = x.shape().to_vec();
        let v = x
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order(IxDyn(shape))
            .expect("reshape: element count mismatch");
        self.unary(v, move |g| {
            g.as_standard_layout()
                .into_owned()
                .into_shape_with_order(IxDyn(&old))
                .unwrap()
        })
    }

    pub fn permute(self, axes: &[usize]) -> Var<'g, T> {
        let x = self.value();
        let v = x.view().permuted_axes(IxDyn(axes)).as_standard_layout().into_owned();
        let mut inv = vec![0; axes.len()];
        for (i, &a) in axes.iter().enumerate() {
            inv[a] = i;
        }
        self.unary(v, move |g| g.view().permuted_axes(IxDyn(&inv)).as_standard_layout().into_owned())
    }

    pub fn narrow(self, axis: usize, start: usize, len: usize) -> Var<'g, T> {
        let x = self.value();
        let shape = x.raw_dim();
        let v = x
            .slice_axis(Axis(axis), ndarray::Slice::from(start..start + len))
            .to_owned();
        self.unary(v, move |g| {
            let mut out = ArrayD::zeros(shape);
            out.slice_axis_mut(Axis(axis), ndarray::Slice::from(start..start + len))
                .assign(g);
            out
        })
    }

    /// Pads the last axis by reflection (edge sample not repeated).
    pub fn pad_reflect(self, left: usize, right: usize) -> Var<'g, T> {
        let x = self.value();
        let n = *x.shape().last().unwrap();
        assert!(left < n && right < n, "reflect padding must be shorter than the signal");
        let src: Vec<usize> = (0..left)
            .map(|i| left - i)
            .chain(0..n)
            .chain((0..right).map(|i| n - 2 - i))
            .collect();
        let ax = Axis(x.ndim() - 1);
        let v = x.select(ax, &src);
        let shape = x.raw_dim();
        self.unary(v, move |g| {
            let mut out = ArrayD::zeros(shape);
            for (j, &s) in src.iter().enumerate() {
                let mut dst = out.index_axis_mut(ax, s);
                dst += &g.index_axis(ax, j);
            }
            out
        })
    }

    /// Zero padding of the last axis.
    pub fn pad_zero(self, left: usize, right: usize) -> Var<'g, T> {
        let x = self.value();
        let ax = Axis(x.ndim() - 1);
        let n = x.shape()[ax.0];
        let mut shape = x.shape().to_vec();
        shape[ax.0] += left + right;
        let mut v = ArrayD::zeros(IxDyn(&shape));
        v.slice_axis_mut(ax, ndarray::Slice::from(left..left + n)).assign(&*x);
        self.unary(v, move |g| {
            g.slice_axis(ax, ndarray::Slice::from(left..left + n)).to_owned()
        })
    }

    /// Non-overlapping max pooling along the last axis (tail dropped).
    pub fn max_pool_last(self, k: usize) -> Var<'g, T> {
        let x = self.value();
        let n = *x.shape().last().unwrap();
        let out_n = n / k;
        let rows = x.len() / n;
        let xs = x.as_standard_layout().into_owned().into_shape_with_order((rows, n)).unwrap();
        let mut v = ndarray::Array2::zeros((rows, out_n));
        let mut arg = vec![0usize; rows * out_n];
        for r in 0..rows {
            for j in 0..out_n {
                let mut best = j * k;
                for i in j * k + 1..(j + 1) * k {
                    if xs[[r, i]] > xs[[r, best]] {
                        best = i;
                    }
                }
                v[[r, j]] = xs[[r, best]];
                arg[r * out_n + j] = best;
            }
        }
        let mut shape = x.shape().to_vec();
        *shape.last_mut().unwrap() = out_n;
        let in_shape = x.shape().to_vec();
        let v = v.into_shape_with_order(IxDyn(&shape)).unwrap();
        self.unary(v, move |g| {
            let gs = g.as_standard_layout();
            let gs = gs.as_slice().unwrap();
            let mut out = ndarray::Array2::<T>::zeros((rows, n));
            for r in 0..rows {
                for j in 0..out_n {
                    out[[r, arg[r * out_n + j]]] += gs[r * out_n + j];
                }
            }
            out.into_shape_with_order(IxDyn(&in_shape)).unwrap()
        })
    }
}

/// Concatenation along `axis`.
pub fn concat<'g, T: Scalar>(vars: &[Var<'g, T>], axis: usize) -> Var<'g, T> {
    assert!(!vars.is_empty(), "concat of nothing");
    let g = vars[0].g;
    let values: Vec<Rc<ArrayD<T>>> = vars.iter().map(|v| v.value()).collect();
    let views: Vec<_> = values.iter().map(|v| v.view()).collect();
    let out = ndarray::concatenate(Axis(axis), &views).expect("concat: shapes differ off-axis");
    let sizes: Vec<usize> = values.iter().map(|v| v.shape()[axis]).collect();
    g.push(out, vars, move |grad, need| {
        let mut off = 0;
        sizes
            .iter()
            .zip(need)
            .map(|(&n, &nd)| {
                let r = nd.then(|| {
                    grad.slice_axis(Axis(axis), ndarray::Slice::from(off..off + n))
                        .to_owned()
                });
                off += n;
                r
            })
            .collect()
    })
}

pub fn sign<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        T::one()
    } else if x < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn softplus<T: Scalar>(x: T) -> T {
    if x > T::c(20.0) {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn two_pi<T: Scalar>() -> T {
    T::c(2.0 * std::f64::consts::PI)
}

fn centered<T: Scalar>(x: T) -> T {
    x - two_pi::<T>() * (x / two_pi::<T>()).round()
}

pub fn wrap<T: Scalar>(x: T) -> T {
    let pi = T::c(std::f64::consts::PI);
    x - two_pi::<T>() * ((x - pi) / two_pi::<T>()).ceil()
}

impl<'g, T: Scalar> std::ops::Add for Var<'g, T> {
    type Output = Var<'g, T>;
    fn add(self, o: Self) -> Self {
        Var::add(self, o)
    }
}

impl<'g, T: Scalar> std::ops::Sub for Var<'g, T> {
    type Output = Var<'g, T>;
    fn sub(self, o: Self) -> Self {
        Var::sub(self, o)
    }
}

impl<'g, T: Scalar> std::ops::Mul for Var<'g, T> {
    type Output = Var<'g, T>;
    fn mul(self, o: Self) -> Self {
        Var::mul(self, o)
    }
}

impl<'g, T: Scalar> std::ops::Div for Var<'g, T> {
    type Output = Var<'g, T>;
    fn div(self, o: Self) -> Self {
        Var::div(self, o)
    }
}

impl<'g, T: Scalar> std::ops::Neg for Var<'g, T> {
    type Output = Var<'g, T>;
    fn neg(self) -> Self {
        Var::neg(self)
    }
}
