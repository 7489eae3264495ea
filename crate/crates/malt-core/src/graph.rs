//! Reverse-mode automatic differentiation over a build-order tape.
//!
//! A `Graph` records one forward pass: every operation pushes a node holding
//! its output tensor, its parent ids, and a closure computing the
//! vector-Jacobian product. Nodes are appended in topological order, so
//! `backward` is a single reverse sweep that visits each node exactly once
//! and accumulates gradients into parents. Leaves created with [`Graph::param`]
//! remember their `ParamStore` name; `backward` adds their gradients into the
//! store, leaving parameters the loss never touched at zero gradient.

use crate::error::{shape_str, MaltError, Result};
use crate::params::ParamStore;
use crate::tensor::{self, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub(crate) usize);

type BackwardFn = Box<dyn Fn(&Tensor, &[&Tensor], &Tensor) -> Vec<Tensor>>;

struct Node {
    value: Tensor,
    parents: Vec<NodeId>,
    backward: Option<BackwardFn>,
    param: Option<String>,
    #[allow(dead_code)]
    op: &'static str,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(
        &mut self,
        value: Tensor,
        parents: Vec<NodeId>,
        backward: Option<BackwardFn>,
        param: Option<String>,
        op: &'static str,
    ) -> NodeId {
        let id = self.nodes.len();
        debug_assert!(parents.iter().all(|p| p.0 < id), "parent created after child");
        self.nodes.push(Node {
            value,
            parents,
            backward,
            param,
            op,
        });
        NodeId(id)
    }

    /// Raw node insertion; only tests use this to plant a corrupted
    /// backward rule and prove the finite-difference checker catches it.
    #[cfg(test)]
    pub(crate) fn push_raw(
        &mut self,
        value: Tensor,
        parents: Vec<NodeId>,
        backward: BackwardFn,
        op: &'static str,
    ) -> NodeId {
        self.push(value, parents, Some(backward), None, op)
    }

    /// Leaf holding a constant or input tensor.
    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.push(value, vec![], None, None, "input")
    }

    /// Leaf bound to a named parameter; its gradient flows back to the store.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<NodeId> {
        let value = store.value(name)?.clone();
        Ok(self.push(value, vec![], None, Some(name.to_string()), "param"))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = tensor::matmul(self.value(a), self.value(b))?;
        let backward: BackwardFn = Box::new(|grad, inputs, _out| {
            let (a, b) = (inputs[0], inputs[1]);
            let da = tensor::matmul_nt(grad, b).expect("matmul vjp");
            let db = matmul_tn(a, grad);
            vec![da, db]
        });
        Ok(self.push(value, vec![a, b], Some(backward), None, "matmul"))
    }

    /// C = A @ B^T.
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = tensor::matmul_nt(self.value(a), self.value(b))?;
        let backward: BackwardFn = Box::new(|grad, inputs, _out| {
            let (a, b) = (inputs[0], inputs[1]);
            let da = tensor::matmul(grad, b).expect("matmul_nt vjp");
            let db = matmul_tn(grad, a);
            vec![da, db]
        });
        Ok(self.push(value, vec![a, b], Some(backward), None, "matmul_nt"))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = tensor::add(self.value(a), self.value(b))?;
        let backward: BackwardFn =
            Box::new(|grad, _inputs, _out| vec![grad.clone(), grad.clone()]);
        Ok(self.push(value, vec![a, b], Some(backward), None, "add"))
    }

    /// Matrix plus broadcast row vector.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        let value = tensor::add_row(self.value(a), self.value(row))?;
        let backward: BackwardFn = Box::new(|grad, inputs, _out| {
            let d = inputs[1].numel();
            let mut drow = vec![0.0; d];
            for chunk in grad.data().chunks(d) {
                for (acc, g) in drow.iter_mut().zip(chunk) {
                    *acc += g;
                }
            }
            let drow = Tensor::new(inputs[1].shape().to_vec(), drow).expect("add_row vjp");
            vec![grad.clone(), drow]
        });
        Ok(self.push(value, vec![a, row], Some(backward), None, "add_row"))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let value = tensor::scale(self.value(a), c);
        let backward: BackwardFn =
            Box::new(move |grad, _inputs, _out| vec![tensor::scale(grad, c)]);
        self.push(value, vec![a], Some(backward), None, "scale")
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = tensor::hadamard(self.value(a), self.value(b))?;
        let backward: BackwardFn = Box::new(|grad, inputs, _out| {
            let da = tensor::hadamard(grad, inputs[1]).expect("mul vjp");
            let db = tensor::hadamard(grad, inputs[0]).expect("mul vjp");
            vec![da, db]
        });
        Ok(self.push(value, vec![a, b], Some(backward), None, "mul"))
    }

    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let value = Tensor::new(
            self.value(a).shape().to_vec(),
            self.value(a).data().iter().map(|&x| tensor::gelu_scalar(x)).collect(),
        )
        .expect("gelu");
        let backward: BackwardFn = Box::new(|grad, inputs, _out| {
            let data = grad
                .data()
                .iter()
                .zip(inputs[0].data())
                .map(|(g, &x)| g * tensor::gelu_grad_scalar(x))
                .collect();
            vec![Tensor::new(inputs[0].shape().to_vec(), data).expect("gelu vjp")]
        });
        self.push(value, vec![a], Some(backward), None, "gelu")
    }

    pub fn layer_norm(
        &mut self,
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
        eps: f64,
    ) -> Result<NodeId> {
        let value = tensor::layer_norm(self.value(x), self.value(gain), self.value(bias), eps)?;
        let backward: BackwardFn = Box::new(move |grad, inputs, _out| {
            let (x, gain) = (inputs[0], inputs[1]);
            let (m, d) = (x.rows(), x.cols());
            let mut dx = vec![0.0; m * d];
            let mut dgain = vec![0.0; d];
            let mut dbias = vec![0.0; d];
            for i in 0..m {
                let row = x.row(i);
                let grow = grad.row(i);
                let mean = row.iter().sum::<f64>() / d as f64;
                let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
                let inv_std = 1.0 / (var + eps).sqrt();
                // xhat and dxhat for this row
                let mut mean_dxhat = 0.0;
                let mut mean_dxhat_xhat = 0.0;
                let mut xhat = vec![0.0; d];
                let mut dxhat = vec![0.0; d];
                for j in 0..d {
                    xhat[j] = (row[j] - mean) * inv_std;
                    dxhat[j] = grow[j] * gain.data()[j];
                    dgain[j] += grow[j] * xhat[j];
                    dbias[j] += grow[j];
                    mean_dxhat += dxhat[j];
                    mean_dxhat_xhat += dxhat[j] * xhat[j];
                }
                mean_dxhat /= d as f64;
                mean_dxhat_xhat /= d as f64;
                let drow = &mut dx[i * d..(i + 1) * d];
                for j in 0..d {
                    drow[j] = inv_std * (dxhat[j] - mean_dxhat - xhat[j] * mean_dxhat_xhat);
                }
            }
            vec![
                Tensor::new(x.shape().to_vec(), dx).expect("ln vjp"),
                Tensor::new(inputs[1].shape().to_vec(), dgain).expect("ln vjp"),
                Tensor::new(inputs[2].shape().to_vec(), dbias).expect("ln vjp"),
            ]
        });
        Ok(self.push(value, vec![x, gain, bias], Some(backward), None, "layer_norm"))
    }

    /// Row-wise softmax. Errors if any row has no finite entry.
    pub fn softmax_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let value = tensor::softmax_rows(self.value(a))?;
        let backward: BackwardFn = Box::new(|grad, _inputs, out| {
            let (m, n) = (out.rows(), out.cols());
            let mut dx = vec![0.0; m * n];
            for i in 0..m {
                let p = out.row(i);
                let g = grad.row(i);
                let dot: f64 = p.iter().zip(g).map(|(pi, gi)| pi * gi).sum();
                let drow = &mut dx[i * n..(i + 1) * n];
                for j in 0..n {
                    drow[j] = p[j] * (g[j] - dot);
                }
            }
            vec![Tensor::new(out.shape().to_vec(), dx).expect("softmax vjp")]
        });
        Ok(self.push(value, vec![a], Some(backward), None, "softmax_rows"))
    }

    /// Keep entries where `keep` is true, set the rest to -inf. The selection
    /// itself is treated as constant: masked entries get zero gradient.
    pub fn mask_keep(&mut self, a: NodeId, keep: Vec<bool>) -> Result<NodeId> {
        let src = self.value(a);
        if keep.len() != src.numel() {
            return Err(MaltError::ShapeMismatch {
                op: "mask_keep",
                lhs: shape_str(src.shape()),
                rhs: format!("{} mask entries", keep.len()),
            });
        }
        let data = src
            .data()
            .iter()
            .zip(&keep)
            .map(|(&x, &k)| if k { x } else { f64::NEG_INFINITY })
            .collect();
        let value = Tensor::new(src.shape().to_vec(), data)?;
        let backward: BackwardFn = Box::new(move |grad, inputs, _out| {
            let data = grad
                .data()
                .iter()
                .zip(&keep)
                .map(|(&g, &k)| if k { g } else { 0.0 })
                .collect();
            vec![Tensor::new(inputs[0].shape().to_vec(), data).expect("mask vjp")]
        });
        Ok(self.push(value, vec![a], Some(backward), None, "mask_keep"))
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, width: usize) -> Result<NodeId> {
        let src = self.value(a);
        let (m, n) = (src.rows(), src.cols());
        if start + width > n {
            return Err(MaltError::Contract(format!(
                "slice_cols: columns {start}..{} out of range for width {n}",
                start + width
            )));
        }
        let mut data = Vec::with_capacity(m * width);
        for i in 0..m {
            data.extend_from_slice(&src.row(i)[start..start + width]);
        }
        let value = Tensor::new(vec![m, width], data)?;
        let backward: BackwardFn = Box::new(move |grad, inputs, _out| {
            let (m, n) = (inputs[0].rows(), inputs[0].cols());
            let mut dx = vec![0.0; m * n];
            for i in 0..m {
                dx[i * n + start..i * n + start + width].copy_from_slice(grad.row(i));
            }
            vec![Tensor::new(vec![m, n], dx).expect("slice vjp")]
        });
        Ok(self.push(value, vec![a], Some(backward), None, "slice_cols"))
    }

    /// Concatenate matrices with equal row counts along the column axis.
    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(MaltError::Contract("concat_cols: empty part list".into()));
        }
        let m = self.value(parts[0]).rows();
        let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).cols()).collect();
        for &p in parts {
            if self.value(p).rows() != m {
                return Err(MaltError::ShapeMismatch {
                    op: "concat_cols",
                    lhs: shape_str(self.value(parts[0]).shape()),
                    rhs: shape_str(self.value(p).shape()),
                });
            }
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * total);
        for i in 0..m {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        let value = Tensor::new(vec![m, total], data)?;
        let widths_bk = widths.clone();
        let backward: BackwardFn = Box::new(move |grad, inputs, _out| {
            let m = inputs[0].rows();
            let mut grads: Vec<Tensor> = widths_bk
                .iter()
                .map(|&w| Tensor::zeros(vec![m, w]))
                .collect();
            for i in 0..m {
                let grow = grad.row(i);
                let mut offset = 0;
                for (gi, &w) in grads.iter_mut().zip(&widths_bk) {
                    gi.row_mut(i).copy_from_slice(&grow[offset..offset + w]);
                    offset += w;
                }
            }
            grads
        });
        Ok(self.push(value, parts.to_vec(), Some(backward), None, "concat_cols"))
    }

    /// Select rows by index (repeats allowed); backward scatter-adds.
    pub fn gather_rows(&mut self, a: NodeId, indices: Vec<usize>) -> Result<NodeId> {
        let src = self.value(a);
        let (m, n) = (src.rows(), src.cols());
        if let Some(&bad) = indices.iter().find(|&&i| i >= m) {
            return Err(MaltError::Contract(format!(
                "gather_rows: index {bad} out of range for {m} rows"
            )));
        }
        let mut data = Vec::with_capacity(indices.len() * n);
        for &i in &indices {
            data.extend_from_slice(src.row(i));
        }
        let value = Tensor::new(vec![indices.len(), n], data)?;
        let backward: BackwardFn = Box::new(move |grad, inputs, _out| {
            let mut dx = Tensor::zeros(inputs[0].shape().to_vec());
            for (r, &i) in indices.iter().enumerate() {
                let grow = grad.row(r);
                for (acc, g) in dx.row_mut(i).iter_mut().zip(grow) {
                    *acc += g;
                }
            }
            vec![dx]
        });
        Ok(self.push(value, vec![a], Some(backward), None, "gather_rows"))
    }

    /// Mean over rows: [m x d] -> [1 x d].
    pub fn mean_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let src = self.value(a);
        let (m, d) = (src.rows(), src.cols());
        if m == 0 {
            return Err(MaltError::Contract("mean_rows: empty matrix".into()));
        }
        let mut data = vec![0.0; d];
        for i in 0..m {
            for (acc, v) in data.iter_mut().zip(src.row(i)) {
                *acc += v;
            }
        }
        for v in &mut data {
            *v /= m as f64;
        }
        let value = Tensor::new(vec![1, d], data)?;
        let backward: BackwardFn = Box::new(move |grad, inputs, _out| {
            let (m, d) = (inputs[0].rows(), inputs[0].cols());
            let mut dx = vec![0.0; m * d];
            for i in 0..m {
                for j in 0..d {
                    dx[i * d + j] = grad.data()[j] / m as f64;
                }
            }
            vec![Tensor::new(vec![m, d], dx).expect("mean_rows vjp")]
        });
        Ok(self.push(value, vec![a], Some(backward), None, "mean_rows"))
    }

    /// Sum of all entries as a 1x1 tensor.
    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let total: f64 = self.value(a).data().iter().sum();
        let value = Tensor::scalar(total);
        let backward: BackwardFn = Box::new(|grad, inputs, _out| {
            vec![Tensor::full(inputs[0].shape().to_vec(), grad.item())]
        });
        self.push(value, vec![a], Some(backward), None, "sum_all")
    }

    /// Mean cross-entropy of `logits` rows against integer labels, restricted
    /// to rows where `valid` is true. Fused log-softmax keeps it stable.
    pub fn cross_entropy_rows(
        &mut self,
        logits: NodeId,
        labels: &[usize],
        valid: &[bool],
    ) -> Result<NodeId> {
        let src = self.value(logits);
        let (m, c) = (src.rows(), src.cols());
        if labels.len() != m || valid.len() != m {
            return Err(MaltError::Contract(format!(
                "cross_entropy: {m} logit rows but {} labels / {} valid flags",
                labels.len(),
                valid.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(MaltError::Data(format!(
                "cross_entropy: label {bad} out of range for {c} classes"
            )));
        }
        let n_valid = valid.iter().filter(|&&v| v).count();
        if n_valid == 0 {
            return Err(MaltError::Contract(
                "cross_entropy: no valid rows to average over".into(),
            ));
        }
        let mut loss = 0.0;
        for i in 0..m {
            if !valid[i] {
                continue;
            }
            let row = src.row(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
            loss += lse - row[labels[i]];
        }
        loss /= n_valid as f64;
        let value = Tensor::scalar(loss);
        let labels_bk = labels.to_vec();
        let valid_bk = valid.to_vec();
        let backward: BackwardFn = Box::new(move |grad, inputs, _out| {
            let src = inputs[0];
            let (m, c) = (src.rows(), src.cols());
            let scale = grad.item() / n_valid as f64;
            let mut dx = vec![0.0; m * c];
            for i in 0..m {
                if !valid_bk[i] {
                    continue;
                }
                let row = src.row(i);
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                let drow = &mut dx[i * c..(i + 1) * c];
                for (d, &x) in drow.iter_mut().zip(row) {
                    *d = (x - max).exp();
                    sum += *d;
                }
                for d in drow.iter_mut() {
                    *d /= sum;
                }
                drow[labels_bk[i]] -= 1.0;
                for d in drow.iter_mut() {
                    *d *= scale;
                }
            }
            vec![Tensor::new(vec![m, c], dx).expect("ce vjp")]
        });
        Ok(self.push(value, vec![logits], Some(backward), None, "cross_entropy"))
    }

    /// Reverse sweep from `loss`, returning the gradient of every node that
    /// the loss reaches (index-aligned with node ids).
    pub fn backward_nodes(&self, loss: NodeId) -> Result<Vec<Option<Tensor>>> {
        let loss_value = self.value(loss);
        if !loss_value.is_scalar() {
            return Err(MaltError::Contract(format!(
                "backward: loss must be scalar-shaped (1x1), got {}",
                shape_str(loss_value.shape())
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for id in (0..=loss.0).rev() {
            let Some(grad) = grads[id].take() else {
                continue;
            };
            let node = &self.nodes[id];
            if let Some(backward) = &node.backward {
                let inputs: Vec<&Tensor> =
                    node.parents.iter().map(|&p| &self.nodes[p.0].value).collect();
                let parent_grads = backward(&grad, &inputs, &node.value);
                debug_assert_eq!(parent_grads.len(), node.parents.len());
                for (parent, pgrad) in node.parents.iter().zip(parent_grads) {
                    debug_assert_eq!(
                        pgrad.shape(),
                        self.nodes[parent.0].value.shape(),
                        "vjp shape mismatch at node {} ({})",
                        parent.0,
                        self.nodes[parent.0].op
                    );
                    match &mut grads[parent.0] {
                        Some(acc) => {
                            for (a, g) in acc.data_mut().iter_mut().zip(pgrad.data()) {
                                *a += g;
                            }
                        }
                        slot => *slot = Some(pgrad),
                    }
                }
            }
            grads[id] = Some(grad);
        }
        Ok(grads)
    }

    /// Backward pass that accumulates parameter gradients into the store.
    pub fn backward(&self, loss: NodeId, store: &mut ParamStore) -> Result<()> {
        let grads = self.backward_nodes(loss)?;
        for (node, grad) in self.nodes.iter().zip(&grads) {
            if let (Some(name), Some(grad)) = (&node.param, grad) {
                store.accumulate_grad(name, grad)?;
            }
        }
        Ok(())
    }

    /// Gradient of a single node from a previous [`Graph::backward_nodes`] table.
    pub fn grad_of<'a>(table: &'a [Option<Tensor>], id: NodeId) -> Option<&'a Tensor> {
        table.get(id.0).and_then(|g| g.as_ref())
    }
}

/// out = A^T @ B for A [m x p], B [m x q] -> [p x q].
fn matmul_tn(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, p) = (a.rows(), a.cols());
    let q = b.cols();
    debug_assert_eq!(b.rows(), m);
    let mut out = vec![0.0; p * q];
    for i in 0..m {
        let arow = a.row(i);
        let brow = b.row(i);
        for (k, &aik) in arow.iter().enumerate() {
            let orow = &mut out[k * q..(k + 1) * q];
            for (o, &bij) in orow.iter_mut().zip(brow) {
                *o += aik * bij;
            }
        }
    }
    Tensor::new(vec![p, q], out).expect("matmul_tn")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_ones() {
        let mut store = ParamStore::new();
        store
            .insert("w", Tensor::matrix(vec![vec![1.0, -2.0], vec![0.5, 3.0]]))
            .unwrap();
        let mut g = Graph::new();
        let w = g.param(&store, "w").unwrap();
        let loss = g.sum_all(w);
        g.backward(loss, &mut store).unwrap();
        assert_eq!(store.grad("w").unwrap().data(), &[1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn square_gradient() {
        // loss = sum(w * w) at w = [3] -> grad = [6]
        let mut store = ParamStore::new();
        store.insert("w", Tensor::vector(vec![3.0])).unwrap();
        let mut g = Graph::new();
        let w = g.param(&store, "w").unwrap();
        let sq = g.mul(w, w).unwrap();
        let loss = g.sum_all(sq);
        g.backward(loss, &mut store).unwrap();
        assert_eq!(store.grad("w").unwrap().data(), &[6.0]);
    }

    #[test]
    fn reused_node_accumulates() {
        // loss = sum(x + x) -> grad(x) = 2
        let mut store = ParamStore::new();
        store.insert("x", Tensor::scalar(5.0)).unwrap();
        let mut g = Graph::new();
        let x = g.param(&store, "x").unwrap();
        let doubled = g.add(x, x).unwrap();
        let loss = g.sum_all(doubled);
        g.backward(loss, &mut store).unwrap();
        assert_eq!(store.grad("x").unwrap().data(), &[2.0]);
    }

    #[test]
    fn unreachable_param_keeps_zero_gradient() {
        let mut store = ParamStore::new();
        store.insert("used", Tensor::scalar(1.0)).unwrap();
        store.insert("unused", Tensor::scalar(1.0)).unwrap();
        let mut g = Graph::new();
        let u = g.param(&store, "used").unwrap();
        let _dead = g.param(&store, "unused").unwrap();
        let loss = g.sum_all(u);
        g.backward(loss, &mut store).unwrap();
        assert_eq!(store.grad("unused").unwrap().data(), &[0.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::vector(vec![1.0, 2.0])).unwrap();
        let mut g = Graph::new();
        let w = g.param(&store, "w").unwrap();
        let err = g.backward(w, &mut store).unwrap_err();
        assert!(matches!(err, MaltError::Contract(_)));
    }

    #[test]
    fn shared_param_name_across_leaves_accumulates_in_store() {
        // Two separate leaves bound to the same name model weight sharing:
        // the store receives the sum of both leaf gradients.
        let mut store = ParamStore::new();
        store.insert("w", Tensor::scalar(2.0)).unwrap();
        let mut g = Graph::new();
        let w1 = g.param(&store, "w").unwrap();
        let w2 = g.param(&store, "w").unwrap();
        let prod = g.mul(w1, w2).unwrap(); // w^2
        let loss = g.sum_all(prod);
        g.backward(loss, &mut store).unwrap();
        assert_eq!(store.grad("w").unwrap().data(), &[4.0]); // d(w^2)/dw = 2w
    }

    #[test]
    fn mask_keep_blocks_gradient() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::matrix(vec![vec![1.0, 2.0]])).unwrap();
        let mut g = Graph::new();
        let w = g.param(&store, "w").unwrap();
        let masked = g.mask_keep(w, vec![true, false]).unwrap();
        assert_eq!(g.value(masked).data()[1], f64::NEG_INFINITY);
        let sm = g.softmax_rows(masked).unwrap();
        let loss = g.cross_entropy_rows(sm, &[0], &[true]).unwrap();
        g.backward(loss, &mut store).unwrap();
        assert_eq!(store.grad("w").unwrap().data()[1], 0.0);
    }

    #[test]
    fn gather_rows_scatter_adds() {
        let mut store = ParamStore::new();
        store
            .insert("w", Tensor::matrix(vec![vec![1.0], vec![2.0]]))
            .unwrap();
        let mut g = Graph::new();
        let w = g.param(&store, "w").unwrap();
        let picked = g.gather_rows(w, vec![0, 0, 1]).unwrap();
        let loss = g.sum_all(picked);
        g.backward(loss, &mut store).unwrap();
        assert_eq!(store.grad("w").unwrap().data(), &[2.0, 1.0]);
    }
}
