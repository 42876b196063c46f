//! Differentiable operations recorded on the tape.
//!
//! Each op computes its forward value through the raw kernels in
//! [`crate::tensor`] and records a local-gradient closure. Closures only
//! compute contributions for inputs that are tracked, so frozen branches cost
//! nothing on the way back.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tape::{NodeId, Tape};
use crate::tensor::{self, Tensor};

/// Loss reduction over rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    Mean,
    Sum,
}

impl<T: Scalar> Tape<T> {
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let av = self.rc(a);
        let bv = self.rc(b);
        let out = tensor::matmul(&av, &bv)?;
        let (a_req, b_req) = (self.req(a), self.req(b));
        let back = (a_req || b_req).then(|| -> crate::tape::BackFn<T> {
            Box::new(move |g| {
                let mut contribs = Vec::with_capacity(2);
                if a_req {
                    contribs.push((a, tensor::matmul(g, &tensor::transpose(&bv))?));
                }
                if b_req {
                    contribs.push((b, tensor::matmul(&tensor::transpose(&av), g)?));
                }
                Ok(contribs)
            })
        });
        Ok(self.push(out, a_req || b_req, None, back))
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let out = tensor::transpose(&self.rc(a));
        let a_req = self.req(a);
        let back = a_req.then(|| -> crate::tape::BackFn<T> {
            Box::new(move |g| Ok(vec![(a, tensor::transpose(g))]))
        });
        self.push(out, a_req, None, back)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let out = tensor::add(&self.rc(a), &self.rc(b))?;
        let (a_req, b_req) = (self.req(a), self.req(b));
        let back = (a_req || b_req).then(|| -> crate::tape::BackFn<T> {
            Box::new(move |g| {
                let mut contribs = Vec::with_capacity(2);
                if a_req {
                    contribs.push((a, g.clone()));
                }
                if b_req {
                    contribs.push((b, g.clone()));
                }
                Ok(contribs)
            })
        });
        Ok(self.push(out, a_req || b_req, None, back))
    }

    /// Broadcast-adds a `[1 x n]` bias to every row.
    pub fn add_row(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId> {
        let out = tensor::add_row(&self.rc(a), &self.rc(bias))?;
        let (a_req, b_req) = (self.req(a), self.req(bias));
        let back = (a_req || b_req).then(|| -> crate::tape::BackFn<T> {
            Box::new(move |g| {
                let mut contribs = Vec::with_capacity(2);
                if a_req {
                    contribs.push((a, g.clone()));
                }
                if b_req {
                    let n = g.cols();
                    let mut col_sum = vec![T::zero(); n];
                    for i in 0..g.rows() {
                        for (j, &v) in g.row(i).iter().enumerate() {
                            col_sum[j] += v;
                        }
                    }
                    contribs.push((bias, Tensor::matrix(1, n, col_sum)?));
                }
                Ok(contribs)
            })
        });
        Ok(self.push(out, a_req || b_req, None, back))
    }

    pub fn hadamard(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let av = self.rc(a);
        let bv = self.rc(b);
        let out = tensor::hadamard(&av, &bv)?;
        let (a_req, b_req) = (self.req(a), self.req(b));
        let back = (a_req || b_req).then(|| -> crate::tape::BackFn<T> {
            Box::new(move |g| {
                let mut contribs = Vec::with_capacity(2);
                if a_req {
                    contribs.push((a, tensor::hadamard(g, &bv)?));
                }
                if b_req {
                    contribs.push((b, tensor::hadamard(g, &av)?));
                }
                Ok(contribs)
            })
        });
        Ok(self.push(out, a_req || b_req, None, back))
    }

    pub fn scale(&mut self, a: NodeId, c: T) -> Result<NodeId> {
        let out = tensor::scale(&self.rc(a), c)?;
        let a_req = self.req(a);
        let back = a_req.then(|| -> crate::tape::BackFn<T> {
            Box::new(move |g| Ok(vec![(a, tensor::scale(g, c)?)]))
        });
        Ok(self.push(out, a_req, None, back))
    }

    pub fn gelu(&mut self, a: NodeId) -> Result<NodeId> {
        let av = self.rc(a);
        let out = tensor::gelu(&av)?;
        let a_req = self.req(a);
        let back = a_req.then(|| -> crate::tape::BackFn<T> {
            Box::new(move |g| {
                let data = g
                    .data()
                    .iter()
                    .zip(av.data())
                    .map(|(&gv, &xv)| gv * tensor::gelu_grad(xv))
                    .collect();
                Ok(vec![(a, Tensor::from_vec(av.shape().to_vec(), data)?)])
            })
        });
        Ok(self.push(out, a_req, None, back))
    }

    /// Row-wise softmax; `causal` masks entries above the diagonal.
    pub fn softmax_rows(&mut self, a: NodeId, causal: bool) -> Result<NodeId> {
        let out = tensor::softmax_rows(&self.rc(a), causal)?;
        let a_req = self.req(a);
        let y = std::rc::Rc::new(out.clone());
        let back = a_req.then(|| -> crate::tape::BackFn<T> {
            Box::new(move |g| {
                let (m, n) = (y.rows(), y.cols());
                let mut dx = vec![T::zero(); m * n];
                for i in 0..m {
                    let yr = y.row(i);
                    let gr = g.row(i);
                    let dot: T = yr.iter().zip(gr).map(|(&yv, &gv)| yv * gv).sum();
                    for j in 0..n {
                        dx[i * n + j] = yr[j] * (gr[j] - dot);
                    }
                }
                Ok(vec![(a, Tensor::matrix(m, n, dx)?)])
            })
        });
        Ok(self.push(out, a_req, None, back))
    }

    /// Row-wise layer normalization with learned scale and shift.
    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId) -> Result<NodeId> {
        let xv = self.rc(x);
        let gv = self.rc(gamma);
        let bv = self.rc(beta);
        let (m, n) = (xv.rows(), xv.cols());
        if gv.shape() != [1, n] || bv.shape() != [1, n] {
            return Err(Error::ShapeMismatch {
                op: "layer_norm",
                lhs: xv.shape().to_vec(),
                rhs: gv.shape().to_vec(),
            });
        }
        let eps = T::from_f64(1e-5);
        let inv_n = T::one() / T::from_f64(n as f64);

        let mut normed = vec![T::zero(); m * n];
        let mut inv_std = vec![T::zero(); m];
        for i in 0..m {
            let row = xv.row(i);
            let mean = row.iter().copied().sum::<T>() * inv_n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_n;
            let istd = T::one() / (var + eps).sqrt();
            inv_std[i] = istd;
            for j in 0..n {
                normed[i * n + j] = (row[j] - mean) * istd;
            }
        }
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                out[i * n + j] = normed[i * n + j] * gv.data()[j] + bv.data()[j];
            }
        }
        let out = Tensor::matrix(m, n, out)?;

        let (x_req, g_req, b_req) = (self.req(x), self.req(gamma), self.req(beta));
        let any = x_req || g_req || b_req;
        let normed = std::rc::Rc::new(normed);
        let back = any.then(|| -> crate::tape::BackFn<T> {
            Box::new(move |g| {
                let mut contribs = Vec::with_capacity(3);
                if b_req {
                    let mut db = vec![T::zero(); n];
                    for i in 0..m {
                        for (j, &v) in g.row(i).iter().enumerate() {
                            db[j] += v;
                        }
                    }
                    contribs.push((beta, Tensor::matrix(1, n, db)?));
                }
                if g_req {
                    let mut dg = vec![T::zero(); n];
                    for i in 0..m {
                        for (j, &v) in g.row(i).iter().enumerate() {
                            dg[j] += v * normed[i * n + j];
                        }
                    }
                    contribs.push((gamma, Tensor::matrix(1, n, dg)?));
                }
                if x_req {
                    let mut dx = vec![T::zero(); m * n];
                    for i in 0..m {
                        let gr = g.row(i);
                        // d normed
                        let dn: Vec<T> =
                            (0..n).map(|j| gr[j] * gv.data()[j]).collect();
                        let mean_dn = dn.iter().copied().sum::<T>() * inv_n;
                        let mean_dn_nrm = dn
                            .iter()
                            .enumerate()
                            .map(|(j, &v)| v * normed[i * n + j])
                            .sum::<T>()
                            * inv_n;
                        for j in 0..n {
                            dx[i * n + j] = inv_std[i]
                                * (dn[j] - mean_dn - normed[i * n + j] * mean_dn_nrm);
                        }
                    }
                    contribs.push((x, Tensor::matrix(m, n, dx)?));
                }
                Ok(contribs)
            })
        });
        Ok(self.push(out, any, None, back))
    }

    /// Gathers rows of an embedding table by index; backward scatter-adds.
    pub fn embed_rows(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId> {
        let tv = self.rc(table);
        let (rows, n) = (tv.rows(), tv.cols());
        for &id in ids {
            if id >= rows {
                return Err(Error::IndexOutOfRange {
                    op: "embed_rows",
                    index: id,
                    bound: rows,
                });
            }
        }
        let mut out = Vec::with_capacity(ids.len() * n);
        for &id in ids {
            out.extend_from_slice(tv.row(id));
        }
        let out = Tensor::matrix(ids.len(), n, out)?;
        let t_req = self.req(table);
        let ids_owned: Vec<usize> = ids.to_vec();
        let back = t_req.then(|| -> crate::tape::BackFn<T> {
            Box::new(move |g| {
                let mut dt = vec![T::zero(); rows * n];
                for (r, &id) in ids_owned.iter().enumerate() {
                    for (j, &v) in g.row(r).iter().enumerate() {
                        dt[id * n + j] += v;
                    }
                }
                Ok(vec![(table, Tensor::matrix(rows, n, dt)?)])
            })
        });
        Ok(self.push(out, t_req, None, back))
    }

    /// Vertically concatenates matrices with equal column counts.
    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::contract("concat_rows requires at least one input"));
        }
        let n = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut spans = Vec::with_capacity(parts.len());
        let mut row = 0usize;
        for &p in parts {
            let v = self.rc(p);
            if v.cols() != n {
                return Err(Error::ShapeMismatch {
                    op: "concat_rows",
                    lhs: vec![row, n],
                    rhs: v.shape().to_vec(),
                });
            }
            spans.push((p, row, v.rows()));
            row += v.rows();
            data.extend_from_slice(v.data());
        }
        let out = Tensor::matrix(row, n, data)?;
        let any = parts.iter().any(|&p| self.req(p));
        let reqs: Vec<bool> = parts.iter().map(|&p| self.req(p)).collect();
        let back = any.then(|| -> crate::tape::BackFn<T> {
            Box::new(move |g| {
                let mut contribs = Vec::new();
                for ((p, start, len), req) in spans.iter().zip(&reqs) {
                    if !req {
                        continue;
                    }
                    let mut part = Vec::with_capacity(len * n);
                    for r in *start..start + len {
                        part.extend_from_slice(g.row(r));
                    }
                    contribs.push((*p, Tensor::matrix(*len, n, part)?));
                }
                Ok(contribs)
            })
        });
        Ok(self.push(out, any, None, back))
    }

    pub fn slice_rows(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let av = self.rc(a);
        let (m, n) = (av.rows(), av.cols());
        if start + len > m {
            return Err(Error::IndexOutOfRange {
                op: "slice_rows",
                index: start + len,
                bound: m,
            });
        }
        let mut data = Vec::with_capacity(len * n);
        for r in start..start + len {
            data.extend_from_slice(av.row(r));
        }
        let out = Tensor::matrix(len, n, data)?;
        let a_req = self.req(a);
        let back = a_req.then(|| -> crate::tape::BackFn<T> {
            Box::new(move |g| {
                let mut da = vec![T::zero(); m * n];
                for r in 0..len {
                    da[(start + r) * n..(start + r + 1) * n].copy_from_slice(g.row(r));
                }
                Ok(vec![(a, Tensor::matrix(m, n, da)?)])
            })
        });
        Ok(self.push(out, a_req, None, back))
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let av = self.rc(a);
        let (m, n) = (av.rows(), av.cols());
        if start + len > n {
            return Err(Error::IndexOutOfRange {
                op: "slice_cols",
                index: start + len,
                bound: n,
            });
        }
        let mut data = Vec::with_capacity(m * len);
        for r in 0..m {
            data.extend_from_slice(&av.row(r)[start..start + len]);
        }
        let out = Tensor::matrix(m, len, data)?;
        let a_req = self.req(a);
        let back = a_req.then(|| -> crate::tape::BackFn<T> {
            Box::new(move |g| {
                let mut da = vec![T::zero(); m * n];
                for r in 0..m {
                    da[r * n + start..r * n + start + len].copy_from_slice(g.row(r));
                }
                Ok(vec![(a, Tensor::matrix(m, n, da)?)])
            })
        });
        Ok(self.push(out, a_req, None, back))
    }

    /// Horizontally concatenates matrices with equal row counts.
    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::contract("concat_cols requires at least one input"));
        }
        let m = self.value(parts[0]).rows();
        let mut widths = Vec::with_capacity(parts.len());
        let mut total = 0usize;
        for &p in parts {
            let v = self.value(p);
            if v.rows() != m {
                return Err(Error::ShapeMismatch {
                    op: "concat_cols",
                    lhs: vec![m, total],
                    rhs: v.shape().to_vec(),
                });
            }
            widths.push(v.cols());
            total += v.cols();
        }
        let mut data = Vec::with_capacity(m * total);
        for r in 0..m {
            for &p in parts {
                let v = self.rc(p);
                data.extend_from_slice(v.row(r));
            }
        }
        let out = Tensor::matrix(m, total, data)?;
        let any = parts.iter().any(|&p| self.req(p));
        let plan: Vec<(NodeId, usize, bool)> = {
            let mut offset = 0usize;
            parts
                .iter()
                .zip(&widths)
                .map(|(&p, &w)| {
                    let entry = (p, offset, self.req(p));
                    offset += w;
                    entry
                })
                .collect()
        };
        let widths2 = widths.clone();
        let back = any.then(|| -> crate::tape::BackFn<T> {
            Box::new(move |g| {
                let mut contribs = Vec::new();
                for ((p, offset, req), &w) in plan.iter().zip(&widths2) {
                    if !req {
                        continue;
                    }
                    let mut part = Vec::with_capacity(m * w);
                    for r in 0..m {
                        part.extend_from_slice(&g.row(r)[*offset..offset + w]);
                    }
                    contribs.push((*p, Tensor::matrix(m, w, part)?));
                }
                Ok(contribs)
            })
        });
        Ok(self.push(out, any, None, back))
    }

    /// Sum of all elements, as a scalar node.
    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let av = self.rc(a);
        let total: T = av.data().iter().copied().sum();
        let a_req = self.req(a);
        let shape = av.shape().to_vec();
        let back = a_req.then(|| -> crate::tape::BackFn<T> {
            Box::new(move |g| {
                let gv = g.item()?;
                Ok(vec![(a, Tensor::full(shape.clone(), gv))])
            })
        });
        self.push(Tensor::scalar(total), a_req, None, back)
    }

    /// Sum of scalar nodes (batch-loss assembly).
    pub fn sum_scalars(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::contract("sum_scalars requires at least one input"));
        }
        let mut total = T::zero();
        for &p in parts {
            total += self.value(p).item()?;
        }
        let any = parts.iter().any(|&p| self.req(p));
        let tracked: Vec<NodeId> = parts.iter().copied().filter(|&p| self.req(p)).collect();
        let back = any.then(|| -> crate::tape::BackFn<T> {
            Box::new(move |g| Ok(tracked.iter().map(|&p| (p, g.clone())).collect()))
        });
        Ok(self.push(Tensor::scalar(total), any, None, back))
    }

    /// Mean negative log-softmax of the target entry per row (`Mean`), or the
    /// row sum (`Sum`). Gradient is `softmax - onehot`, scaled by the
    /// reduction.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: NodeId,
        targets: &[usize],
        reduction: Reduction,
    ) -> Result<NodeId> {
        let lv = self.rc(logits);
        let (m, v) = (lv.rows(), lv.cols());
        if targets.len() != m {
            return Err(Error::Contract(format!(
                "cross entropy got {} logit rows but {} targets",
                m,
                targets.len()
            )));
        }
        if m == 0 {
            return Err(Error::contract("cross entropy over an empty batch"));
        }
        for &t in targets {
            if t >= v {
                return Err(Error::IndexOutOfRange {
                    op: "softmax_cross_entropy",
                    index: t,
                    bound: v,
                });
            }
        }

        let mut probs = vec![T::zero(); m * v];
        let mut total = T::zero();
        for i in 0..m {
            let row = lv.row(i);
            let mut max = row[0];
            for &x in row {
                if x > max {
                    max = x;
                }
            }
            let mut sum = T::zero();
            for j in 0..v {
                let e = (row[j] - max).exp();
                probs[i * v + j] = e;
                sum += e;
            }
            for p in &mut probs[i * v..(i + 1) * v] {
                *p = *p / sum;
            }
            total += sum.ln() + max - row[targets[i]];
        }
        let denom = match reduction {
            Reduction::Mean => T::from_f64(m as f64),
            Reduction::Sum => T::one(),
        };
        let loss = total / denom;
        if !loss.is_finite() {
            return Err(Error::NonFinite {
                op: "softmax_cross_entropy",
            });
        }

        let l_req = self.req(logits);
        let targets_owned: Vec<usize> = targets.to_vec();
        let probs = std::rc::Rc::new(probs);
        let back = l_req.then(|| -> crate::tape::BackFn<T> {
            Box::new(move |g| {
                let gv = g.item()? / denom;
                let mut dl = Vec::with_capacity(m * v);
                for i in 0..m {
                    for j in 0..v {
                        let onehot = if j == targets_owned[i] { T::one() } else { T::zero() };
                        dl.push((probs[i * v + j] - onehot) * gv);
                    }
                }
                Ok(vec![(logits, Tensor::matrix(m, v, dl)?)])
            })
        });
        Ok(self.push(Tensor::scalar(loss), l_req, None, back))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::Params;

    #[test]
    fn cross_entropy_uniform_logits_is_ln_v() {
        for v in [2usize, 7, 19] {
            let mut tape = Tape::<f64>::new();
            let logits = tape.constant(Tensor::zeros(vec![1, v]));
            let loss = tape
                .softmax_cross_entropy(logits, &[0], Reduction::Mean)
                .unwrap();
            let got = tape.value(loss).item().unwrap();
            assert!((got - (v as f64).ln()).abs() < 1e-12, "v={v}");
        }
    }

    #[test]
    fn cross_entropy_closed_form_margin() {
        // logits [10, -10], target 0: loss = ln(1 + e^-20).
        let mut tape = Tape::<f64>::new();
        let logits = tape.constant(Tensor::matrix(1, 2, vec![10.0, -10.0]).unwrap());
        let loss = tape
            .softmax_cross_entropy(logits, &[0], Reduction::Mean)
            .unwrap();
        let expected = (-20.0f64).exp().ln_1p();
        let got = tape.value(loss).item().unwrap();
        // The engine computes ln(1 + e^-20) through a plain ln, so allow the
        // rounding of the 1 + e^-20 sum (absolute error up to ~1e-16).
        assert!((got - expected).abs() < 1e-14, "got {got}, expected {expected}");
        assert!((got - 2.061_153_6e-9).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_huge_margin_tends_to_zero() {
        let mut tape = Tape::<f64>::new();
        let logits = tape.constant(Tensor::matrix(1, 3, vec![500.0, 0.0, 0.0]).unwrap());
        let loss = tape
            .softmax_cross_entropy(logits, &[0], Reduction::Mean)
            .unwrap();
        assert!(tape.value(loss).item().unwrap() < 1e-100);
    }

    #[test]
    fn cross_entropy_rejects_out_of_range_target() {
        let mut tape = Tape::<f64>::new();
        let logits = tape.constant(Tensor::zeros(vec![1, 3]));
        let err = tape
            .softmax_cross_entropy(logits, &[3], Reduction::Mean)
            .unwrap_err();
        assert!(matches!(err, Error::IndexOutOfRange { .. }));
    }

    #[test]
    fn cross_entropy_grad_is_softmax_minus_onehot_over_batch() {
        let mut tape = Tape::<f64>::new();
        let x = tape.var(Tensor::matrix(2, 2, vec![0.0, 0.0, 1.0, -1.0]).unwrap());
        let loss = tape
            .softmax_cross_entropy(x, &[0, 1], Reduction::Mean)
            .unwrap();
        let mut ps = Params::new();
        tape.backward(loss, &mut ps).unwrap();
        let g = tape.grad(x).unwrap();
        assert!((g.get(0, 0) - (0.5 - 1.0) / 2.0).abs() < 1e-12);
        assert!((g.get(0, 1) - 0.5 / 2.0).abs() < 1e-12);
        let p = 1.0 / (1.0 + (-2.0f64).exp());
        assert!((g.get(1, 0) - p / 2.0).abs() < 1e-12);
        assert!((g.get(1, 1) - (1.0 - p - 1.0) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn slice_and_concat_round_trip_gradients() {
        let mut tape = Tape::<f64>::new();
        let x = tape.var(Tensor::matrix(2, 4, vec![1., 2., 3., 4., 5., 6., 7., 8.]).unwrap());
        let left = tape.slice_cols(x, 0, 2).unwrap();
        let right = tape.slice_cols(x, 2, 2).unwrap();
        let back_together = tape.concat_cols(&[left, right]).unwrap();
        assert_eq!(tape.value(back_together).data(), tape.value(x).data());
        let s = tape.sum(back_together);
        let mut ps = Params::new();
        tape.backward(s, &mut ps).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[1.0; 8]);
    }

    #[test]
    fn masked_positions_get_no_gradient_through_slice() {
        // Loss reads only rows 1..3; perturbing row 0 must not matter.
        let mut tape = Tape::<f64>::new();
        let x = tape.var(Tensor::matrix(3, 2, vec![9.0, 9.0, 1.0, 2.0, 3.0, 4.0]).unwrap());
        let tail = tape.slice_rows(x, 1, 2).unwrap();
        let loss = tape
            .softmax_cross_entropy(tail, &[0, 1], Reduction::Mean)
            .unwrap();
        let mut ps = Params::new();
        tape.backward(loss, &mut ps).unwrap();
        let g = tape.grad(x).unwrap();
        assert_eq!(g.row(0), &[0.0, 0.0]);
        assert!(g.row(1).iter().any(|&v| v != 0.0));
    }
}
