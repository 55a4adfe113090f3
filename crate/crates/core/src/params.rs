//! Named, ordered parameter collections.

use std::collections::HashMap;

use cdgan_tensor::{Gradients, Tape, Tensor, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    /// Accumulated gradient; `None` until the first backward pass.
    pub grad: Option<Tensor>,
}

/// Parameters in declaration order, addressable by name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    params: Vec<Parameter>,
    index: HashMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub(crate) fn push(&mut self, name: impl Into<String>, value: Tensor) {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        self.index.insert(name.clone(), self.params.len());
        self.params.push(Parameter {
            name,
            value,
            grad: None,
        });
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar weights.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn get(&self, name: &str) -> Option<&Parameter> {
        self.index.get(name).map(|&i| &self.params[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Parameter> {
        self.index.get(name).map(|&i| &mut self.params[i])
    }

    /// Places every parameter on `tape`, as a leaf when `trainable` and as a
    /// constant otherwise (gradients still flow *through* constants to
    /// upstream leaves, they are just not reported for the constants).
    pub fn bind(&self, tape: &Tape, trainable: bool) -> Bound<'_> {
        let vars = self
            .params
            .iter()
            .map(|p| {
                if trainable {
                    tape.leaf(p.value.clone())
                } else {
                    Var::constant(p.value.clone())
                }
            })
            .collect();
        Bound { set: self, vars }
    }

    /// Adds freshly computed gradients onto the accumulated ones.
    pub fn accumulate(&mut self, grads: Vec<Option<Tensor>>) {
        for (p, g) in self.params.iter_mut().zip(grads) {
            let Some(g) = g else { continue };
            match &mut p.grad {
                Some(acc) => acc.data_mut().iter_mut().zip(g.data()).for_each(|(a, v)| *a += v),
                none => *none = Some(g),
            }
        }
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    /// Order-sensitive hash of every weight's bit pattern.
    pub fn checksum(&self) -> u64 {
        self.params.iter().fold(0u64, |h, p| {
            h.rotate_left(7) ^ p.value.bit_checksum()
        })
    }
}

/// A parameter set placed on one tape.
pub struct Bound<'a> {
    set: &'a ParamSet,
    vars: Vec<Var>,
}

impl Bound<'_> {
    /// The variable for `name`.
    ///
    /// # Panics
    /// If the network code asks for a parameter it never declared.
    pub fn var(&self, name: &str) -> &Var {
        let i = *self
            .set
            .index
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"));
        &self.vars[i]
    }

    /// Substitutes `var` for the parameter `name`, e.g. to differentiate with
    /// respect to a single tensor of an otherwise frozen network.
    pub fn replace(&mut self, name: &str, var: Var) {
        let i = *self.set.index.get(name).unwrap_or_else(|| panic!("unknown parameter {name}"));
        self.vars[i] = var;
    }

    /// Pulls this binding's gradients out of a backward result, in
    /// parameter order.
    pub fn gradients(&self, grads: &mut Gradients) -> Vec<Option<Tensor>> {
        self.vars.iter().map(|v| grads.take(v)).collect()
    }
}
