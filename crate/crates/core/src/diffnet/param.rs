//! Named parameter blocks with paired gradient and RMSProp accumulators.

use std::collections::HashMap;

use rand::Rng;

use crate::error::{Error, Result};

/// One named matrix (or vector, `cols == 1`) of 64-bit floats together with
/// its gradient accumulator and RMSProp second-moment accumulator.
#[derive(Debug, Clone)]
pub struct Block {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
    pub moment: Vec<f64>,
}

impl Block {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Insertion-ordered collection of uniquely named blocks. Each store owns one
/// network's parameters (agent, bias, dependency policy, critic) or its
/// target copy; the store id tags tape leaves so gradients land in the right
/// place.
#[derive(Debug, Clone)]
pub struct ParamStore {
    id: String,
    blocks: Vec<Block>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new(id: impl Into<String>) -> Self {
        ParamStore {
            id: id.into(),
            blocks: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn add(&mut self, name: &str, rows: usize, cols: usize, value: Vec<f64>) -> Result<()> {
        if self.index.contains_key(name) {
            return Err(Error::DuplicateBlock(name.to_string()));
        }
        assert_eq!(value.len(), rows * cols, "block `{name}` value length");
        let n = value.len();
        self.index.insert(name.to_string(), self.blocks.len());
        self.blocks.push(Block {
            name: name.to_string(),
            rows,
            cols,
            value,
            grad: vec![0.0; n],
            moment: vec![0.0; n],
        });
        Ok(())
    }

    pub fn add_zeros(&mut self, name: &str, rows: usize, cols: usize) -> Result<()> {
        self.add(name, rows, cols, vec![0.0; rows * cols])
    }

    /// Uniform init in `[-limit, limit]`.
    pub fn add_uniform<R: Rng>(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        limit: f64,
        rng: &mut R,
    ) -> Result<()> {
        let value = (0..rows * cols)
            .map(|_| rng.gen_range(-limit..=limit))
            .collect();
        self.add(name, rows, cols, value)
    }

    pub fn block(&self, name: &str) -> Result<&Block> {
        self.index
            .get(name)
            .map(|&i| &self.blocks[i])
            .ok_or_else(|| Error::UnknownBlock(format!("{}/{}", self.id, name)))
    }

    pub fn block_mut(&mut self, name: &str) -> Result<&mut Block> {
        match self.index.get(name) {
            Some(&i) => Ok(&mut self.blocks[i]),
            None => Err(Error::UnknownBlock(format!("{}/{}", self.id, name))),
        }
    }

    pub fn blocks(&self) -> impl Iterator<Item = &Block> {
        self.blocks.iter()
    }

    pub fn num_params(&self) -> usize {
        self.blocks.iter().map(|b| b.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for b in &mut self.blocks {
            b.grad.fill(0.0);
        }
    }

    /// RMSProp update over every block, followed by gradient reset:
    /// `m <- decay*m + (1-decay)*g^2`, `p <- p - lr*g/(sqrt(m) + eps)`.
    pub fn rmsprop_step(&mut self, lr: f64, decay: f64, eps: f64) -> Result<()> {
        for b in &self.blocks {
            if b.grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteGrad(format!("{}/{}", self.id, b.name)));
            }
        }
        for b in &mut self.blocks {
            for i in 0..b.value.len() {
                let g = b.grad[i];
                b.moment[i] = decay * b.moment[i] + (1.0 - decay) * g * g;
                b.value[i] -= lr * g / (b.moment[i].sqrt() + eps);
            }
            b.grad.fill(0.0);
        }
        Ok(())
    }

    /// Bitwise copy of values (and moments) into `target`, which must have
    /// the identical block layout.
    pub fn copy_to_target(&self, target: &mut ParamStore) -> Result<()> {
        if self.blocks.len() != target.blocks.len() {
            return Err(Error::LayoutMismatch(format!(
                "{} has {} blocks, {} has {}",
                self.id,
                self.blocks.len(),
                target.id,
                target.blocks.len()
            )));
        }
        for (src, dst) in self.blocks.iter().zip(target.blocks.iter_mut()) {
            if src.name != dst.name || src.rows != dst.rows || src.cols != dst.cols {
                return Err(Error::LayoutMismatch(format!(
                    "block `{}` ({}x{}) vs `{}` ({}x{})",
                    src.name, src.rows, src.cols, dst.name, dst.rows, dst.cols
                )));
            }
            dst.value.copy_from_slice(&src.value);
        }
        Ok(())
    }

    /// A fresh store with the same layout and values, under a new id.
    pub fn clone_as(&self, id: impl Into<String>) -> ParamStore {
        let mut c = self.clone();
        c.id = id.into();
        c
    }
}
