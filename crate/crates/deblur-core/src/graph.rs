//! Static composition graph.
//!
//! The network builder declares leaves (runtime inputs, learnable
//! parameters, constants) and wires [`DiffOp`] nodes over them; nothing is
//! recorded at run time. Forward evaluates nodes in declaration order,
//! backward walks them in reverse accumulating vector-Jacobian products.
//! Value ids are laid out as `[inputs | constants | params | node outputs]`.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::ops::DiffOp;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub type ValueId = usize;

/// How a parameter tensor is filled at build time.
#[derive(Debug, Clone)]
pub enum Init {
    /// Uniform in `[-sqrt(6/fan_in), sqrt(6/fan_in)]`.
    HeUniform { fan_in: usize },
    Zero,
    Const(f64),
}

#[derive(Debug, Clone)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

struct Node<T: Scalar> {
    op: Box<dyn DiffOp<T>>,
    args: Vec<ValueId>,
}

pub struct Graph<T: Scalar> {
    n_inputs: usize,
    constants: Vec<Tensor<T>>,
    params: Vec<ParamSpec>,
    nodes: Vec<Node<T>>,
    named: HashMap<String, ValueId>,
}

impl<T: Scalar> Graph<T> {
    pub fn new(n_inputs: usize) -> Self {
        Graph {
            n_inputs,
            constants: Vec::new(),
            params: Vec::new(),
            nodes: Vec::new(),
            named: HashMap::new(),
        }
    }

    pub fn n_inputs(&self) -> usize {
        self.n_inputs
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn n_values(&self) -> usize {
        self.n_inputs + self.constants.len() + self.params.len() + self.nodes.len()
    }

    pub fn param_specs(&self) -> &[ParamSpec] {
        &self.params
    }

    pub fn input_id(&self, i: usize) -> ValueId {
        debug_assert!(i < self.n_inputs);
        i
    }

    fn const_base(&self) -> usize {
        self.n_inputs
    }

    fn param_base(&self) -> usize {
        self.n_inputs + self.constants.len()
    }

    fn node_base(&self) -> usize {
        self.param_base() + self.params.len()
    }

    pub fn param_id(&self, i: usize) -> ValueId {
        self.param_base() + i
    }

    pub fn add_constant(&mut self, t: Tensor<T>) -> ValueId {
        // Constants must be declared before any parameter so the id layout
        // stays contiguous.
        assert!(
            self.params.is_empty() && self.nodes.is_empty(),
            "constants must be added before params and nodes"
        );
        self.constants.push(t);
        self.const_base() + self.constants.len() - 1
    }

    pub fn add_param(&mut self, name: impl Into<String>, shape: Vec<usize>, init: Init) -> ValueId {
        assert!(self.nodes.is_empty(), "params must be added before nodes");
        let name = name.into();
        assert!(
            self.params.iter().all(|p| p.name != name),
            "duplicate parameter name {name}"
        );
        self.params.push(ParamSpec { name, shape, init });
        self.param_base() + self.params.len() - 1
    }

    pub fn add_node(&mut self, op: Box<dyn DiffOp<T>>, args: Vec<ValueId>) -> ValueId {
        let id = self.node_base() + self.nodes.len();
        for &a in &args {
            assert!(a < id, "node argument {a} not yet defined");
        }
        self.nodes.push(Node { op, args });
        id
    }

    /// Give a value a stable name ("flow", "mask", "aligned_image", ...).
    pub fn mark(&mut self, name: impl Into<String>, id: ValueId) {
        self.named.insert(name.into(), id);
    }

    pub fn named_id(&self, name: &str) -> Option<ValueId> {
        self.named.get(name).copied()
    }

    pub fn named_ids(&self) -> impl Iterator<Item = (&str, ValueId)> {
        self.named.iter().map(|(k, &v)| (k.as_str(), v))
    }

    /// Evaluate all nodes; returns the full value table.
    pub fn forward(&self, inputs: &[Tensor<T>], params: &[Tensor<T>]) -> Result<Vec<Tensor<T>>> {
        if inputs.len() != self.n_inputs {
            return Err(Error::config(format!(
                "graph wants {} inputs, got {}",
                self.n_inputs,
                inputs.len()
            )));
        }
        if params.len() != self.params.len() {
            return Err(Error::config(format!(
                "graph wants {} params, got {}",
                self.params.len(),
                params.len()
            )));
        }
        let mut values: Vec<Tensor<T>> = Vec::with_capacity(self.n_values());
        values.extend(inputs.iter().cloned());
        values.extend(self.constants.iter().cloned());
        values.extend(params.iter().cloned());
        for node in &self.nodes {
            let args: Vec<&Tensor<T>> = node.args.iter().map(|&a| &values[a]).collect();
            let out = node.op.forward(&args)?;
            values.push(out);
        }
        Ok(values)
    }

    /// Reverse pass from the given `(value, gradient)` seeds; returns one
    /// optional gradient per value id (None where nothing flows).
    pub fn backward(
        &self,
        values: &[Tensor<T>],
        seeds: Vec<(ValueId, Tensor<T>)>,
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.n_values()];
        for (id, g) in seeds {
            match &mut grads[id] {
                Some(acc) => acc.add_assign(&g)?,
                slot => *slot = Some(g),
            }
        }
        let node_base = self.node_base();
        for (i, node) in self.nodes.iter().enumerate().rev() {
            let out_id = node_base + i;
            let Some(up) = grads[out_id].take() else {
                continue;
            };
            let args: Vec<&Tensor<T>> = node.args.iter().map(|&a| &values[a]).collect();
            let input_grads = node.op.backward(&args, &up)?;
            debug_assert_eq!(input_grads.len(), node.args.len());
            for (&arg, g) in node.args.iter().zip(input_grads) {
                match &mut grads[arg] {
                    Some(acc) => acc.add_assign(&g)?,
                    slot => *slot = Some(g),
                }
            }
            grads[out_id] = Some(up);
        }
        Ok(grads)
    }

    /// Extract parameter gradients (zeros where no gradient flowed).
    pub fn param_grads(
        &self,
        grads: &mut [Option<Tensor<T>>],
        params: &[Tensor<T>],
    ) -> Vec<Tensor<T>> {
        (0..self.params.len())
            .map(|i| {
                grads[self.param_id(i)]
                    .take()
                    .unwrap_or_else(|| Tensor::zeros(params[i].shape().to_vec()))
            })
            .collect()
    }

    /// Materialize parameter tensors from their init specs, deterministically
    /// from `seed`.
    pub fn init_params(&self, seed: u64) -> Vec<Tensor<T>> {
        use rand::Rng;
        let mut rng = crate::rng::rng_from(seed);
        self.params
            .iter()
            .map(|spec| match spec.init {
                Init::Zero => Tensor::zeros(spec.shape.clone()),
                Init::Const(v) => Tensor::full(spec.shape.clone(), T::from_f64_c(v)),
                Init::HeUniform { fan_in } => {
                    let bound = (6.0 / fan_in.max(1) as f64).sqrt();
                    Tensor::from_fn(spec.shape.clone(), |_| {
                        T::from_f64_c(rng.random_range(-bound..bound))
                    })
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::{Add, Sigmoid};

    #[test]
    fn forward_and_backward_through_small_graph() {
        // y = sigmoid(x) + p
        let mut g: Graph<f64> = Graph::new(1);
        let p = g.add_param("p", vec![2], Init::Zero);
        let x = g.input_id(0);
        let s = g.add_node(Box::new(Sigmoid), vec![x]);
        let y = g.add_node(Box::new(Add), vec![s, p]);
        g.mark("out", y);

        let inputs = vec![Tensor::from_fn(vec![2], |i| i as f64)];
        let params = g.init_params(1);
        let values = g.forward(&inputs, &params).unwrap();
        assert!((values[y].data()[0] - 0.5).abs() < 1e-12);

        let seed = Tensor::full(vec![2], 1.0);
        let grads = g.backward(&values, vec![(y, seed)]).unwrap();
        // d(out)/dp = 1
        assert_eq!(grads[p].as_ref().unwrap().data(), &[1.0, 1.0]);
        // d(out)/dx = sigmoid'(x)
        let gx = grads[x].as_ref().unwrap();
        assert!((gx.data()[0] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn init_is_deterministic() {
        let mut g: Graph<f32> = Graph::new(0);
        g.add_param("w", vec![4, 4], Init::HeUniform { fan_in: 16 });
        let a = g.init_params(33);
        let b = g.init_params(33);
        assert_eq!(a, b);
        let c = g.init_params(34);
        assert_ne!(a, c);
    }

    #[test]
    fn unused_branches_get_no_gradient() {
        let mut g: Graph<f64> = Graph::new(2);
        let s = g.add_node(Box::new(Sigmoid), vec![0]);
        let _dead = g.add_node(Box::new(Sigmoid), vec![1]);
        let inputs = vec![Tensor::zeros(vec![1]), Tensor::zeros(vec![1])];
        let values = g.forward(&inputs, &[]).unwrap();
        let grads = g
            .backward(&values, vec![(s, Tensor::full(vec![1], 1.0))])
            .unwrap();
        assert!(grads[1].is_none());
    }
}
