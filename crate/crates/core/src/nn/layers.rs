use rand::Rng;

use super::params::{glorot_uniform, Matrix, ParamId, ParamStore};
use super::tape::{Activation, Tape, Var};
use crate::error::{Error, Result};

/// Fully connected layer whose weight (`out × in`) and bias (`1 × out`) live in
/// a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DenseLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl DenseLayer {
    /// Glorot-uniform weights, zero bias.
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        in_dim: usize,
        out_dim: usize,
    ) -> Self {
        let weight = store.push(format!("{name}.weight"), glorot_uniform(rng, out_dim, in_dim));
        let bias = store.push(format!("{name}.bias"), Matrix::zeros((1, out_dim)));
        Self {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    /// Rebind a layer to tensors already present in `store` (checkpoint loading).
    pub fn bind(store: &ParamStore, name: &str) -> Result<Self> {
        let lookup = |suffix: &str| {
            store
                .find(&format!("{name}.{suffix}"))
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}.{suffix}")))
        };
        let weight = lookup("weight")?;
        let bias = lookup("bias")?;
        let (out_dim, in_dim) = store.get(weight).dim();
        if store.get(bias).dim() != (1, out_dim) {
            return Err(Error::Checkpoint(format!("bias shape of {name} disagrees with weight")));
        }
        Ok(Self {
            weight,
            bias,
            in_dim,
            out_dim,
        })
    }

    pub fn forward(&self, store: &ParamStore, tape: &mut Tape, input: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        tape.dense(input, w, b)
    }
}

/// Tape-free affine map `input · weightᵀ + bias`.
pub fn dense_forward(weight: &Matrix, bias: &Matrix, input: &Matrix) -> Result<Matrix> {
    if input.ncols() != weight.ncols() {
        return Err(Error::Shape {
            context: "dense input vs weight",
            left: input.dim(),
            right: weight.dim(),
        });
    }
    if bias.dim() != (1, weight.nrows()) {
        return Err(Error::Shape {
            context: "dense bias vs weight",
            left: bias.dim(),
            right: weight.dim(),
        });
    }
    Ok(input.dot(&weight.t()) + bias)
}

/// Stack of dense layers: `hidden` activation after every layer but the last,
/// `output` activation after the last.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<DenseLayer>,
    pub hidden: Activation,
    pub output: Activation,
}

impl Mlp {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        dims: &[usize],
        hidden: Activation,
        output: Activation,
    ) -> Self {
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| DenseLayer::init(store, rng, &format!("{name}.{i}"), w[0], w[1]))
            .collect();
        Self { layers, hidden, output }
    }

    pub fn bind(store: &ParamStore, name: &str, depth: usize, hidden: Activation, output: Activation) -> Result<Self> {
        let layers = (0..depth)
            .map(|i| DenseLayer::bind(store, &format!("{name}.{i}")))
            .collect::<Result<Vec<_>>>()?;
        for pair in layers.windows(2) {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(Error::Checkpoint(format!("layer widths of {name} do not chain")));
            }
        }
        Ok(Self { layers, hidden, output })
    }

    pub fn in_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.in_dim)
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim)
    }

    /// Widths `[in, hidden.., out]`.
    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.in_dim()];
        dims.extend(self.layers.iter().map(|l| l.out_dim));
        dims
    }

    pub fn params(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.layers.iter().flat_map(|l| [l.weight, l.bias])
    }

    pub fn forward(&self, store: &ParamStore, tape: &mut Tape, input: Var) -> Result<Var> {
        let last = self.layers.len().saturating_sub(1);
        let mut h = input;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(store, tape, h)?;
            let act = if i == last { self.output } else { self.hidden };
            h = tape.activation(act, h);
        }
        Ok(h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_layer() {
        let w = array![[1.0, 0.0], [0.0, 1.0]];
        let b = array![[0.0, 0.0]];
        let out = dense_forward(&w, &b, &array![[3.0, 4.0]]).unwrap();
        assert_eq!(out, array![[3.0, 4.0]]);
    }

    #[test]
    fn scalar_affine() {
        let out = dense_forward(&array![[2.0]], &array![[1.0]], &array![[3.0]]).unwrap();
        assert_eq!(out, array![[7.0]]);
    }

    #[test]
    fn shape_error_names_both_shapes() {
        let err = dense_forward(&Matrix::zeros((5, 8)), &Matrix::zeros((1, 5)), &Matrix::zeros((4, 7))).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("(4, 7)") && msg.contains("(5, 8)"), "{msg}");
    }

    #[test]
    fn matches_triple_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let w = Matrix::from_shape_simple_fn((5, 8), || rng.random_range(-1.0..1.0));
        let b = Matrix::from_shape_simple_fn((1, 5), || rng.random_range(-1.0..1.0));
        let x = Matrix::from_shape_simple_fn((4, 8), || rng.random_range(-1.0..1.0));
        let out = dense_forward(&w, &b, &x).unwrap();
        for r in 0..4 {
            for o in 0..5 {
                let mut acc = b[[0, o]];
                for i in 0..8 {
                    acc += x[[r, i]] * w[[o, i]];
                }
                assert!((out[[r, o]] - acc).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let build = || {
            let mut store = ParamStore::new();
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let layer = DenseLayer::init(&mut store, &mut rng, "l", 10, 6);
            (store, layer)
        };
        let (a, la) = build();
        let (b, _) = build();
        assert_eq!(a, b);
        let limit = (6.0f64 / 16.0).sqrt();
        assert!(a.get(la.weight).iter().all(|v| v.abs() <= limit));
        assert!(a.get(la.bias).iter().all(|&v| v == 0.0));
    }
}
