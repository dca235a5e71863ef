//! Network building blocks: dense layers, a gated recurrent cell, masked
//! softmax.
//!
//! The recurrent cell is the standard three-gate GRU with the update gate
//! steering toward the candidate state:
//!
//! ```text
//! z = sigmoid(Wz x + Uz h + bz)
//! r = sigmoid(Wr x + Ur h + br)
//! n = tanh(Wh x + Uh (r .* h) + bh)
//! h' = (1 - z) .* h + z .* n
//! ```
//!
//! With all parameters, `x`, and `h` at zero, `h'` is zero (the all-zero
//! fixed point); with `z` saturated to one, `h'` equals the candidate `n`.

use crate::diffnet::param::ParamStore;
use crate::diffnet::tape::{Node, Tape};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
}

/// Numerically stabilized softmax over unmasked entries. Entries where
/// `mask[i]` is true are excluded and come out exactly zero.
pub fn masked_softmax(logits: &[f64], mask: &[bool]) -> Result<Vec<f64>> {
    assert_eq!(logits.len(), mask.len());
    let mut max = f64::NEG_INFINITY;
    for (i, &v) in logits.iter().enumerate() {
        if !mask[i] && v > max {
            max = v;
        }
    }
    if max == f64::NEG_INFINITY {
        return Err(Error::AllMasked);
    }
    let mut out = vec![0.0; logits.len()];
    let mut total = 0.0;
    for i in 0..logits.len() {
        if !mask[i] {
            out[i] = (logits[i] - max).exp();
            total += out[i];
        }
    }
    for v in &mut out {
        *v /= total;
    }
    Ok(out)
}

/// A dense layer `activation(W x + b)` referencing named blocks in a store.
#[derive(Debug, Clone)]
pub struct Dense {
    pub w: String,
    pub b: String,
    pub activation: Activation,
}

impl Dense {
    pub fn new(w: impl Into<String>, b: impl Into<String>, activation: Activation) -> Self {
        Dense {
            w: w.into(),
            b: b.into(),
            activation,
        }
    }

    /// Add `w` (out x in) and `b` (out) blocks with uniform init scaled by
    /// `1/sqrt(in_dim)`.
    pub fn init<R: rand::Rng>(
        &self,
        store: &mut ParamStore,
        in_dim: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Result<()> {
        let limit = 1.0 / (in_dim as f64).sqrt();
        store.add_uniform(&self.w, out_dim, in_dim, limit, rng)?;
        store.add_uniform(&self.b, out_dim, 1, limit, rng)
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Node) -> Result<Node> {
        let w = store.block(&self.w)?;
        if tape.len(x) != w.cols {
            return Err(Error::DimMismatch {
                block: format!("{}/{}", store.id(), self.w),
                expected: format!("input of length {}", w.cols),
                got: format!("length {}", tape.len(x)),
            });
        }
        let wn = tape.param(store, &self.w)?;
        let bn = tape.param(store, &self.b)?;
        let z = tape.matvec(wn, x);
        let z = tape.add(z, bn);
        Ok(match self.activation {
            Activation::Identity => z,
            Activation::Relu => tape.relu(z),
        })
    }
}

/// GRU cell over named blocks; see the module docs for the exact equations.
#[derive(Debug, Clone)]
pub struct GruCell {
    pub prefix: String,
    pub in_dim: usize,
    pub hidden: usize,
}

impl GruCell {
    pub fn new(prefix: impl Into<String>, in_dim: usize, hidden: usize) -> Self {
        GruCell {
            prefix: prefix.into(),
            in_dim,
            hidden,
        }
    }

    fn name(&self, suffix: &str) -> String {
        format!("{}.{}", self.prefix, suffix)
    }

    pub fn init<R: rand::Rng>(&self, store: &mut ParamStore, rng: &mut R) -> Result<()> {
        let lim_in = 1.0 / (self.in_dim as f64).sqrt();
        let lim_h = 1.0 / (self.hidden as f64).sqrt();
        for gate in ["z", "r", "h"] {
            store.add_uniform(&self.name(&format!("w{gate}")), self.hidden, self.in_dim, lim_in, rng)?;
            store.add_uniform(&self.name(&format!("u{gate}")), self.hidden, self.hidden, lim_h, rng)?;
            store.add_uniform(&self.name(&format!("b{gate}")), self.hidden, 1, lim_h, rng)?;
        }
        Ok(())
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Node, h: Node) -> Result<Node> {
        if tape.len(x) != self.in_dim {
            return Err(Error::DimMismatch {
                block: format!("{}/{}", store.id(), self.prefix),
                expected: format!("input of length {}", self.in_dim),
                got: format!("length {}", tape.len(x)),
            });
        }
        if tape.len(h) != self.hidden {
            return Err(Error::DimMismatch {
                block: format!("{}/{}", store.id(), self.prefix),
                expected: format!("hidden of length {}", self.hidden),
                got: format!("length {}", tape.len(h)),
            });
        }
        let gate = |tape: &mut Tape, wn: Node, un: Node, bn: Node, hin: Node| -> Node {
            let a = tape.matvec(wn, x);
            let b = tape.matvec(un, hin);
            let s = tape.add(a, b);
            tape.add(s, bn)
        };
        let wz = tape.param(store, &self.name("wz"))?;
        let uz = tape.param(store, &self.name("uz"))?;
        let bz = tape.param(store, &self.name("bz"))?;
        let wr = tape.param(store, &self.name("wr"))?;
        let ur = tape.param(store, &self.name("ur"))?;
        let br = tape.param(store, &self.name("br"))?;
        let wh = tape.param(store, &self.name("wh"))?;
        let uh = tape.param(store, &self.name("uh"))?;
        let bh = tape.param(store, &self.name("bh"))?;

        let zpre = gate(tape, wz, uz, bz, h);
        let z = tape.sigmoid(zpre);
        let rpre = gate(tape, wr, ur, br, h);
        let r = tape.sigmoid(rpre);
        let rh = tape.mul(r, h);
        let npre = gate(tape, wh, uh, bh, rh);
        let n = tape.tanh(npre);

        let ones = tape.constant(vec![1.0; self.hidden]);
        let one_minus_z = tape.sub(ones, z);
        let keep = tape.mul(one_minus_z, h);
        let write = tape.mul(z, n);
        Ok(tape.add(keep, write))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn softmax_uniform_on_equal_logits() {
        let p = masked_softmax(&[0.0, 0.0, 0.0], &[false, false, false]).unwrap();
        for v in &p {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_single_unmasked_entry_is_one() {
        let p = masked_softmax(&[5.0, 5.0], &[false, true]).unwrap();
        assert_eq!(p, vec![1.0, 0.0]);
    }

    #[test]
    fn softmax_matches_direct_evaluation() {
        let p = masked_softmax(&[1.0, 2.0, 3.0], &[false, false, false]).unwrap();
        let e: Vec<f64> = [1.0f64, 2.0, 3.0].iter().map(|v| v.exp()).collect();
        let z: f64 = e.iter().sum();
        for (a, b) in p.iter().zip(e.iter().map(|v| v / z)) {
            assert!((a - b).abs() < 1e-12);
        }
        let s: f64 = p.iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_all_masked_is_an_error() {
        assert!(matches!(
            masked_softmax(&[1.0, 2.0], &[true, true]),
            Err(Error::AllMasked)
        ));
    }

    #[test]
    fn softmax_extreme_logits_stay_finite() {
        let p = masked_softmax(&[1e4, -1e4, 0.0], &[false, false, false]).unwrap();
        assert!(p.iter().all(|v| v.is_finite()));
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dense_identity_case() {
        let mut store = ParamStore::new("t");
        let d = Dense::new("w", "b", Activation::Identity);
        store.add("w", 2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        store.add_zeros("b", 2, 1).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(vec![1.0, 2.0]);
        let y = d.forward(&mut tape, &store, x).unwrap();
        assert_eq!(tape.value(y), &[1.0, 2.0]);
    }

    #[test]
    fn dense_constant_case() {
        let mut store = ParamStore::new("t");
        let d = Dense::new("w", "b", Activation::Relu);
        store.add_zeros("w", 1, 2).unwrap();
        store.add("b", 1, 1, vec![3.0]).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(vec![-7.0, 4.0]);
        let y = d.forward(&mut tape, &store, x).unwrap();
        assert_eq!(tape.value(y), &[3.0]);
    }

    #[test]
    fn dense_relu_clamps_negative_preactivation() {
        let mut store = ParamStore::new("t");
        let d = Dense::new("w", "b", Activation::Relu);
        store.add("w", 1, 2, vec![1.0, -1.0]).unwrap();
        store.add_zeros("b", 1, 1).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(vec![2.0, 5.0]);
        let y = d.forward(&mut tape, &store, x).unwrap();
        assert_eq!(tape.value(y), &[0.0]);
    }

    #[test]
    fn dense_dimension_mismatch_names_block() {
        let mut store = ParamStore::new("net");
        let d = Dense::new("enc.w", "enc.b", Activation::Identity);
        store.add_zeros("enc.w", 2, 3).unwrap();
        store.add_zeros("enc.b", 2, 1).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(vec![1.0, 2.0]);
        match d.forward(&mut tape, &store, x) {
            Err(Error::DimMismatch { block, .. }) => assert_eq!(block, "net/enc.w"),
            other => panic!("expected DimMismatch, got {other:?}"),
        }
    }

    #[test]
    fn gru_zero_everything_is_fixed_point() {
        let mut store = ParamStore::new("t");
        let cell = GruCell::new("g", 3, 4);
        for gate in ["z", "r", "h"] {
            store.add_zeros(&format!("g.w{gate}"), 4, 3).unwrap();
            store.add_zeros(&format!("g.u{gate}"), 4, 4).unwrap();
            store.add_zeros(&format!("g.b{gate}"), 4, 1).unwrap();
        }
        let mut tape = Tape::new();
        let x = tape.zeros(3);
        let h = tape.zeros(4);
        let h2 = cell.forward(&mut tape, &store, x, h).unwrap();
        assert_eq!(tape.value(h2), &[0.0; 4]);
    }

    #[test]
    fn gru_saturated_update_gate_returns_candidate() {
        let mut store = ParamStore::new("t");
        let cell = GruCell::new("g", 2, 2);
        for gate in ["z", "r", "h"] {
            store.add_zeros(&format!("g.w{gate}"), 2, 2).unwrap();
            store.add_zeros(&format!("g.u{gate}"), 2, 2).unwrap();
            store.add_zeros(&format!("g.b{gate}"), 2, 1).unwrap();
        }
        // Huge update-gate bias saturates z to 1; candidate determined by Wh x.
        store.block_mut("g.bz").unwrap().value.fill(1e3);
        store
            .block_mut("g.wh")
            .unwrap()
            .value
            .copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
        let mut tape = Tape::new();
        let x = tape.constant(vec![0.3, -0.8]);
        let h = tape.constant(vec![5.0, -5.0]);
        let h2 = cell.forward(&mut tape, &store, x, h).unwrap();
        let expected = [0.3f64.tanh(), (-0.8f64).tanh()];
        for (a, b) in tape.value(h2).iter().zip(expected) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    /// Random parameters and input: the tape result must match a step-by-step
    /// scalar recomputation of the documented equations.
    #[test]
    fn gru_matches_scalar_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let (in_dim, hidden) = (3, 5);
        let mut store = ParamStore::new("t");
        let cell = GruCell::new("g", in_dim, hidden);
        cell.init(&mut store, &mut rng).unwrap();

        let x: Vec<f64> = (0..in_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let h: Vec<f64> = (0..hidden).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let mut tape = Tape::new();
        let xn = tape.constant(x.clone());
        let hn = tape.constant(h.clone());
        let out = cell.forward(&mut tape, &store, xn, hn).unwrap();

        // Independent scalar recomputation.
        let get = |n: &str| store.block(n).unwrap().value.clone();
        let mv = |m: &[f64], v: &[f64], rows: usize, cols: usize| -> Vec<f64> {
            (0..rows)
                .map(|r| (0..cols).map(|c| m[r * cols + c] * v[c]).sum())
                .collect()
        };
        let sigmoid = |v: f64| 1.0 / (1.0 + (-v).exp());
        let wz = mv(&get("g.wz"), &x, hidden, in_dim);
        let uz = mv(&get("g.uz"), &h, hidden, hidden);
        let bz = get("g.bz");
        let z: Vec<f64> = (0..hidden).map(|i| sigmoid(wz[i] + uz[i] + bz[i])).collect();
        let wr = mv(&get("g.wr"), &x, hidden, in_dim);
        let ur = mv(&get("g.ur"), &h, hidden, hidden);
        let br = get("g.br");
        let r: Vec<f64> = (0..hidden).map(|i| sigmoid(wr[i] + ur[i] + br[i])).collect();
        let rh: Vec<f64> = (0..hidden).map(|i| r[i] * h[i]).collect();
        let wh = mv(&get("g.wh"), &x, hidden, in_dim);
        let uh = mv(&get("g.uh"), &rh, hidden, hidden);
        let bh = get("g.bh");
        let n: Vec<f64> = (0..hidden).map(|i| (wh[i] + uh[i] + bh[i]).tanh()).collect();
        let expected: Vec<f64> = (0..hidden).map(|i| (1.0 - z[i]) * h[i] + z[i] * n[i]).collect();

        for (a, b) in tape.value(out).iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            assert!(a.is_finite());
        }
    }

    use rand::Rng;
}
