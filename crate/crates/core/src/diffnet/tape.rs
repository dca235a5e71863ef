//! Reverse-mode differentiation over a recorded op tape.
//!
//! Every forward evaluation appends nodes to a [`Tape`]; `backward` walks the
//! tape in reverse and fills per-node gradients. Parameter blocks enter as
//! leaves tagged with their store id, so the same tape can carry gradients
//! for several stores and [`Tape::accumulate_into`] routes each leaf into the
//! right accumulator. The backward pass is checked end to end against central
//! finite differences (see `gradcheck`).

use std::collections::HashMap;

use crate::diffnet::param::ParamStore;
use crate::error::Result;

/// Handle to a value recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Node(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatVec { w: Node, x: Node },
    Add { a: Node, b: Node },
    Sub { a: Node, b: Node },
    Mul { a: Node, b: Node },
    Scale { x: Node, c: f64 },
    ScaleBy { x: Node, s: Node },
    Relu { x: Node },
    Tanh { x: Node },
    Sigmoid { x: Node },
    Concat { parts: Vec<Node> },
    Dot { a: Node, b: Node },
    Sum { x: Node },
    Index { x: Node, i: usize },
    Row { m: Node, r: usize },
    MaskedSoftmax { x: Node, mask: Vec<bool> },
}

/// Forward values plus the recorded ops needed to backpropagate.
pub struct Tape {
    vals: Vec<Vec<f64>>,
    dims: Vec<(usize, usize)>,
    ops: Vec<Op>,
    grads: Option<Vec<Vec<f64>>>,
    /// (node index, store id, block name)
    leaves: Vec<(usize, String, String)>,
    leaf_cache: HashMap<String, Node>,
}

/// Four-accumulator dot product: fixed summation order (deterministic on a
/// platform) while still letting the optimizer keep lanes busy.
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len();
    let mut acc = [0.0f64; 4];
    let chunks = n / 4;
    for i in 0..chunks {
        let j = 4 * i;
        acc[0] += a[j] * b[j];
        acc[1] += a[j + 1] * b[j + 1];
        acc[2] += a[j + 2] * b[j + 2];
        acc[3] += a[j + 3] * b[j + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for j in 4 * chunks..n {
        s += a[j] * b[j];
    }
    s
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            vals: Vec::new(),
            dims: Vec::new(),
            ops: Vec::new(),
            grads: None,
            leaves: Vec::new(),
            leaf_cache: HashMap::new(),
        }
    }

    fn push(&mut self, value: Vec<f64>, dims: (usize, usize), op: Op) -> Node {
        debug_assert_eq!(value.len(), dims.0 * dims.1);
        let id = self.vals.len();
        self.vals.push(value);
        self.dims.push(dims);
        self.ops.push(op);
        Node(id)
    }

    pub fn value(&self, n: Node) -> &[f64] {
        &self.vals[n.0]
    }

    pub fn len(&self, n: Node) -> usize {
        self.vals[n.0].len()
    }

    pub fn scalar(&self, n: Node) -> f64 {
        debug_assert_eq!(self.vals[n.0].len(), 1);
        self.vals[n.0][0]
    }

    pub fn num_nodes(&self) -> usize {
        self.vals.len()
    }

    /// A constant vector; receives no parameter gradient.
    pub fn constant(&mut self, value: Vec<f64>) -> Node {
        let d = (value.len(), 1);
        self.push(value, d, Op::Leaf)
    }

    pub fn zeros(&mut self, len: usize) -> Node {
        self.constant(vec![0.0; len])
    }

    /// A parameter block as a leaf node. Repeated requests for the same block
    /// return the same node, so gradients from every use accumulate once.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Node> {
        let key = format!("{}/{}", store.id(), name);
        if let Some(&n) = self.leaf_cache.get(&key) {
            return Ok(n);
        }
        let b = store.block(name)?;
        let n = self.push(b.value.clone(), (b.rows, b.cols), Op::Leaf);
        self.leaves
            .push((n.0, store.id().to_string(), name.to_string()));
        self.leaf_cache.insert(key, n);
        Ok(n)
    }

    pub fn matvec(&mut self, w: Node, x: Node) -> Node {
        let (rows, cols) = self.dims[w.0];
        assert_eq!(
            (cols, 1),
            (self.dims[x.0].0, self.dims[x.0].1),
            "matvec shape mismatch"
        );
        let wv = &self.vals[w.0];
        let xv = &self.vals[x.0];
        let mut out = vec![0.0; rows];
        for (r, wrow) in wv.chunks_exact(cols).enumerate() {
            out[r] = dot(wrow, xv);
        }
        self.push(out, (rows, 1), Op::MatVec { w, x })
    }

    fn zip_elementwise(&mut self, a: Node, b: Node, f: impl Fn(f64, f64) -> f64, op: Op) -> Node {
        assert_eq!(self.dims[a.0], self.dims[b.0], "elementwise shape mismatch");
        let out: Vec<f64> = self.vals[a.0]
            .iter()
            .zip(&self.vals[b.0])
            .map(|(&x, &y)| f(x, y))
            .collect();
        let d = self.dims[a.0];
        self.push(out, d, op)
    }

    pub fn add(&mut self, a: Node, b: Node) -> Node {
        self.zip_elementwise(a, b, |x, y| x + y, Op::Add { a, b })
    }

    pub fn sub(&mut self, a: Node, b: Node) -> Node {
        self.zip_elementwise(a, b, |x, y| x - y, Op::Sub { a, b })
    }

    pub fn mul(&mut self, a: Node, b: Node) -> Node {
        self.zip_elementwise(a, b, |x, y| x * y, Op::Mul { a, b })
    }

    pub fn scale(&mut self, x: Node, c: f64) -> Node {
        let out: Vec<f64> = self.vals[x.0].iter().map(|&v| c * v).collect();
        let d = self.dims[x.0];
        self.push(out, d, Op::Scale { x, c })
    }

    /// Multiply a vector by a scalar node (length-1).
    pub fn scale_by(&mut self, x: Node, s: Node) -> Node {
        assert_eq!(self.vals[s.0].len(), 1, "scale_by needs a scalar node");
        let c = self.vals[s.0][0];
        let out: Vec<f64> = self.vals[x.0].iter().map(|&v| c * v).collect();
        let d = self.dims[x.0];
        self.push(out, d, Op::ScaleBy { x, s })
    }

    pub fn relu(&mut self, x: Node) -> Node {
        let out: Vec<f64> = self.vals[x.0].iter().map(|&v| v.max(0.0)).collect();
        let d = self.dims[x.0];
        self.push(out, d, Op::Relu { x })
    }

    pub fn tanh(&mut self, x: Node) -> Node {
        let out: Vec<f64> = self.vals[x.0].iter().map(|&v| v.tanh()).collect();
        let d = self.dims[x.0];
        self.push(out, d, Op::Tanh { x })
    }

    pub fn sigmoid(&mut self, x: Node) -> Node {
        let out: Vec<f64> = self.vals[x.0]
            .iter()
            .map(|&v| 1.0 / (1.0 + (-v).exp()))
            .collect();
        let d = self.dims[x.0];
        self.push(out, d, Op::Sigmoid { x })
    }

    pub fn concat(&mut self, parts: &[Node]) -> Node {
        let mut out = Vec::new();
        for &p in parts {
            out.extend_from_slice(&self.vals[p.0]);
        }
        let d = (out.len(), 1);
        self.push(
            out,
            d,
            Op::Concat {
                parts: parts.to_vec(),
            },
        )
    }

    pub fn dot_nodes(&mut self, a: Node, b: Node) -> Node {
        assert_eq!(self.dims[a.0], self.dims[b.0], "dot shape mismatch");
        let s = dot(&self.vals[a.0], &self.vals[b.0]);
        self.push(vec![s], (1, 1), Op::Dot { a, b })
    }

    pub fn sum(&mut self, x: Node) -> Node {
        let s: f64 = self.vals[x.0].iter().sum();
        self.push(vec![s], (1, 1), Op::Sum { x })
    }

    pub fn index(&mut self, x: Node, i: usize) -> Node {
        let v = self.vals[x.0][i];
        self.push(vec![v], (1, 1), Op::Index { x, i })
    }

    /// Row `r` of a matrix node, as a column vector.
    pub fn row(&mut self, m: Node, r: usize) -> Node {
        let (rows, cols) = self.dims[m.0];
        assert!(r < rows, "row out of range");
        let v = self.vals[m.0][r * cols..(r + 1) * cols].to_vec();
        self.push(v, (cols, 1), Op::Row { m, r })
    }

    /// Numerically stabilized softmax over the unmasked entries; masked
    /// entries (where `mask[i]` is true) are exactly zero in the output.
    pub fn masked_softmax(&mut self, x: Node, mask: &[bool]) -> Result<Node> {
        assert_eq!(self.vals[x.0].len(), mask.len(), "mask length mismatch");
        let out = super::layers::masked_softmax(&self.vals[x.0], mask)?;
        let d = self.dims[x.0];
        Ok(self.push(
            out,
            d,
            Op::MaskedSoftmax {
                x,
                mask: mask.to_vec(),
            },
        ))
    }

    /// Backpropagate from a scalar node. Fills per-node gradients; leaf
    /// gradients can then be folded into stores with `accumulate_into`.
    pub fn backward(&mut self, root: Node) {
        assert_eq!(self.vals[root.0].len(), 1, "backward root must be scalar");
        let mut grads: Vec<Vec<f64>> = self.vals.iter().map(|v| vec![0.0; v.len()]).collect();
        grads[root.0][0] = 1.0;

        for idx in (0..=root.0).rev() {
            let g = std::mem::take(&mut grads[idx]);
            if g.iter().all(|&v| v == 0.0) {
                grads[idx] = g;
                continue;
            }
            match &self.ops[idx] {
                Op::Leaf => {}
                Op::MatVec { w, x } => {
                    let (rows, cols) = self.dims[w.0];
                    let (wi, xi) = (w.0, x.0);
                    // dW[r, c] += g[r] * x[c]
                    {
                        let xv = &self.vals[xi];
                        let gw = &mut grads[wi];
                        for r in 0..rows {
                            let gr = g[r];
                            if gr == 0.0 {
                                continue;
                            }
                            let grow = &mut gw[r * cols..(r + 1) * cols];
                            for c in 0..cols {
                                grow[c] += gr * xv[c];
                            }
                        }
                    }
                    // dx[c] += W[r, c] * g[r]
                    {
                        let wv = &self.vals[wi];
                        let gx = &mut grads[xi];
                        for r in 0..rows {
                            let gr = g[r];
                            if gr == 0.0 {
                                continue;
                            }
                            let wrow = &wv[r * cols..(r + 1) * cols];
                            for c in 0..cols {
                                gx[c] += wrow[c] * gr;
                            }
                        }
                    }
                }
                Op::Add { a, b } => {
                    let (a, b) = (a.0, b.0);
                    for (ga, &gi) in grads[a].iter_mut().zip(&g) {
                        *ga += gi;
                    }
                    for (gb, &gi) in grads[b].iter_mut().zip(&g) {
                        *gb += gi;
                    }
                }
                Op::Sub { a, b } => {
                    let (a, b) = (a.0, b.0);
                    for (ga, &gi) in grads[a].iter_mut().zip(&g) {
                        *ga += gi;
                    }
                    for (gb, &gi) in grads[b].iter_mut().zip(&g) {
                        *gb -= gi;
                    }
                }
                Op::Mul { a, b } => {
                    let (ai, bi) = (a.0, b.0);
                    let av = self.vals[ai].clone();
                    let bv = self.vals[bi].clone();
                    for ((ga, &bvv), &gi) in grads[ai].iter_mut().zip(&bv).zip(&g) {
                        *ga += bvv * gi;
                    }
                    for ((gb, &avv), &gi) in grads[bi].iter_mut().zip(&av).zip(&g) {
                        *gb += avv * gi;
                    }
                }
                Op::Scale { x, c } => {
                    let (x, c) = (x.0, *c);
                    for (gx, &gi) in grads[x].iter_mut().zip(&g) {
                        *gx += c * gi;
                    }
                }
                Op::ScaleBy { x, s } => {
                    let (xi, si) = (x.0, s.0);
                    let c = self.vals[si][0];
                    let xv = self.vals[xi].clone();
                    for (gx, &gi) in grads[xi].iter_mut().zip(&g) {
                        *gx += c * gi;
                    }
                    grads[si][0] += dot(&xv, &g);
                }
                Op::Relu { x } => {
                    let xi = x.0;
                    let yv = &self.vals[idx];
                    for ((gx, &y), &gi) in grads[xi].iter_mut().zip(yv).zip(&g) {
                        if y > 0.0 {
                            *gx += gi;
                        }
                    }
                }
                Op::Tanh { x } => {
                    let xi = x.0;
                    let yv = &self.vals[idx];
                    for ((gx, &y), &gi) in grads[xi].iter_mut().zip(yv).zip(&g) {
                        *gx += (1.0 - y * y) * gi;
                    }
                }
                Op::Sigmoid { x } => {
                    let xi = x.0;
                    let yv = &self.vals[idx];
                    for ((gx, &y), &gi) in grads[xi].iter_mut().zip(yv).zip(&g) {
                        *gx += y * (1.0 - y) * gi;
                    }
                }
                Op::Concat { parts } => {
                    let mut off = 0;
                    let parts = parts.clone();
                    for p in parts {
                        let len = self.vals[p.0].len();
                        for (gp, &gi) in grads[p.0].iter_mut().zip(&g[off..off + len]) {
                            *gp += gi;
                        }
                        off += len;
                    }
                }
                Op::Dot { a, b } => {
                    let (ai, bi) = (a.0, b.0);
                    let g0 = g[0];
                    let av = self.vals[ai].clone();
                    let bv = self.vals[bi].clone();
                    for (ga, &bvv) in grads[ai].iter_mut().zip(&bv) {
                        *ga += g0 * bvv;
                    }
                    for (gb, &avv) in grads[bi].iter_mut().zip(&av) {
                        *gb += g0 * avv;
                    }
                }
                Op::Sum { x } => {
                    let g0 = g[0];
                    for gx in grads[x.0].iter_mut() {
                        *gx += g0;
                    }
                }
                Op::Index { x, i } => {
                    grads[x.0][*i] += g[0];
                }
                Op::Row { m, r } => {
                    let (mi, r) = (m.0, *r);
                    let cols = self.dims[mi].1;
                    for (gm, &gi) in grads[mi][r * cols..(r + 1) * cols].iter_mut().zip(&g) {
                        *gm += gi;
                    }
                }
                Op::MaskedSoftmax { x, mask } => {
                    let xi = x.0;
                    let yv = self.vals[idx].clone();
                    let mask = mask.clone();
                    let mut gd = 0.0;
                    for k in 0..yv.len() {
                        if !mask[k] {
                            gd += g[k] * yv[k];
                        }
                    }
                    for j in 0..yv.len() {
                        if !mask[j] {
                            grads[xi][j] += yv[j] * (g[j] - gd);
                        }
                    }
                }
            }
            grads[idx] = g;
        }
        self.grads = Some(grads);
    }

    /// Gradient of the last `backward` root with respect to node `n`.
    pub fn grad(&self, n: Node) -> &[f64] {
        &self.grads.as_ref().expect("backward not run")[n.0]
    }

    /// Add this tape's leaf gradients into the matching store's accumulators.
    /// Leaves tagged with other store ids are left alone, which is how a pass
    /// that flows through a frozen network avoids updating it.
    pub fn accumulate_into(&self, store: &mut ParamStore) -> Result<()> {
        let grads = self.grads.as_ref().expect("backward not run");
        for (idx, store_id, name) in &self.leaves {
            if store_id != store.id() {
                continue;
            }
            let block = store.block_mut(name)?;
            debug_assert_eq!(block.grad.len(), grads[*idx].len());
            for (bg, &g) in block.grad.iter_mut().zip(&grads[*idx]) {
                *bg += g;
            }
        }
        Ok(())
    }
}
