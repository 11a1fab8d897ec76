//! Multilayer feature extractor with an ID head and an adversarial scene head.
//!
//! ```text
//! input (B×D) -> [dense -> relu]* -> dense -> x (B×L)
//!                                             ├─ x·Wᵀ          -> id logits (B×C)
//!                                             └─ x·Sᵀ + s_bias -> scene logits (B×T)
//! ```
//!
//! The ID head has no bias, so row `c` of `W` acts as the center of class `c`.
//! The scene head sits behind a gradient-reversal boundary: during backward
//! its gradient reaches the extractor multiplied by `-lambda`, while the scene
//! head itself is updated with the plain (minimizing) gradient.

use serde::{Deserialize, Serialize};

use crate::common::{Matrix, RngState};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub embedding_dim: usize,
    pub num_classes: usize,
    pub num_scenes: usize,
}

impl ModelDims {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.embedding_dim == 0 || self.hidden.contains(&0) {
            return Err(Error::invalid("model dimensions must be >= 1"));
        }
        if self.num_classes < 2 || self.num_scenes < 2 {
            return Err(Error::invalid(format!(
                "need at least 2 classes and 2 scenes, got C={} T={}",
                self.num_classes, self.num_scenes
            )));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of each extractor layer.
    fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut sizes = vec![self.input_dim];
        sizes.extend(&self.hidden);
        sizes.push(self.embedding_dim);
        sizes.windows(2).map(|w| (w[0], w[1])).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `out × in`
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub layers: Vec<Dense>,
    /// `C × L`, one row per class.
    pub class_weights: Matrix,
    /// `T × L`
    pub scene_weights: Matrix,
    pub scene_bias: Vec<f64>,
}

/// Gradients share the parameter layout.
pub type ParamGrads = ModelParams;

/// Momentum buffers share the parameter layout.
pub type Velocity = ModelParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorKind {
    Weight,
    Bias,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradReversalCoeff(f64);

impl GradReversalCoeff {
    pub fn new(lambda: f64) -> Result<Self> {
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(Error::invalid(format!(
                "gradient reversal coefficient must be finite and >= 0, got {lambda}"
            )));
        }
        Ok(Self(lambda))
    }

    pub fn lambda(self) -> f64 {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    /// Input to each layer; `activations[0]` is the batch itself.
    pub activations: Vec<Matrix>,
    /// Pre-activation output of each layer.
    pub pre_activations: Vec<Matrix>,
    pub embeddings: Matrix,
    pub id_logits: Matrix,
    pub scene_logits: Matrix,
}

fn glorot(rng: &mut RngState, rows: usize, cols: usize) -> Matrix {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.uniform_in(-bound, bound))
        .collect();
    Matrix::new(rows, cols, data).expect("sized by construction")
}

/// Glorot-uniform weights, zero biases. Draw order: extractor layers
/// front to back, then the class weights, then the scene weights.
pub fn init_params(rng: &mut RngState, dims: &ModelDims) -> Result<ModelParams> {
    dims.validate()?;
    let layers = dims
        .layer_shapes()
        .into_iter()
        .map(|(fan_in, fan_out)| Dense {
            weight: glorot(rng, fan_out, fan_in),
            bias: vec![0.0; fan_out],
        })
        .collect();
    let class_weights = glorot(rng, dims.num_classes, dims.embedding_dim);
    let scene_weights = glorot(rng, dims.num_scenes, dims.embedding_dim);
    Ok(ModelParams {
        layers,
        class_weights,
        scene_weights,
        scene_bias: vec![0.0; dims.num_scenes],
    })
}

impl ModelParams {
    /// All-zero parameters with the given layout.
    pub fn zeros(dims: &ModelDims) -> Result<ModelParams> {
        dims.validate()?;
        Ok(ModelParams {
            layers: dims
                .layer_shapes()
                .into_iter()
                .map(|(fan_in, fan_out)| Dense {
                    weight: Matrix::zeros(fan_out, fan_in),
                    bias: vec![0.0; fan_out],
                })
                .collect(),
            class_weights: Matrix::zeros(dims.num_classes, dims.embedding_dim),
            scene_weights: Matrix::zeros(dims.num_scenes, dims.embedding_dim),
            scene_bias: vec![0.0; dims.num_scenes],
        })
    }

    pub fn dims(&self) -> ModelDims {
        let input_dim = self.layers.first().map_or(0, |l| l.weight.cols());
        let hidden = self.layers[..self.layers.len().saturating_sub(1)]
            .iter()
            .map(|l| l.weight.rows())
            .collect();
        ModelDims {
            input_dim,
            hidden,
            embedding_dim: self.class_weights.cols(),
            num_classes: self.class_weights.rows(),
            num_scenes: self.scene_weights.rows(),
        }
    }

    pub fn zeros_like(&self) -> ModelParams {
        ModelParams {
            layers: self
                .layers
                .iter()
                .map(|l| Dense {
                    weight: Matrix::zeros(l.weight.rows(), l.weight.cols()),
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
            class_weights: Matrix::zeros(self.class_weights.rows(), self.class_weights.cols()),
            scene_weights: Matrix::zeros(self.scene_weights.rows(), self.scene_weights.cols()),
            scene_bias: vec![0.0; self.scene_bias.len()],
        }
    }

    /// Every parameter array in canonical order (also the checkpoint order).
    pub fn tensors(&self) -> Vec<(TensorKind, &[f64])> {
        let mut out = Vec::with_capacity(2 * self.layers.len() + 3);
        for l in &self.layers {
            out.push((TensorKind::Weight, l.weight.data()));
            out.push((TensorKind::Bias, l.bias.as_slice()));
        }
        out.push((TensorKind::Weight, self.class_weights.data()));
        out.push((TensorKind::Weight, self.scene_weights.data()));
        out.push((TensorKind::Bias, self.scene_bias.as_slice()));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(TensorKind, &mut [f64])> {
        let mut out = Vec::with_capacity(2 * self.layers.len() + 3);
        for l in &mut self.layers {
            out.push((TensorKind::Weight, l.weight.data_mut()));
            out.push((TensorKind::Bias, l.bias.as_mut_slice()));
        }
        out.push((TensorKind::Weight, self.class_weights.data_mut()));
        out.push((TensorKind::Weight, self.scene_weights.data_mut()));
        out.push((TensorKind::Bias, self.scene_bias.as_mut_slice()));
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// Number of leading tensors in [`tensors`](Self::tensors) that belong to
    /// the shared extractor.
    pub fn extractor_tensor_count(&self) -> usize {
        2 * self.layers.len()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }

    fn check_same_shape(&self, other: &ModelParams, op: &'static str) -> Result<()> {
        let a = self.tensors();
        let b = other.tensors();
        if a.len() != b.len() || a.iter().zip(&b).any(|((_, x), (_, y))| x.len() != y.len()) {
            return Err(Error::shape(op, format!("{:?}", self.dims()), format!("{:?}", other.dims())));
        }
        Ok(())
    }
}

fn affine(input: &Matrix, weight: &Matrix, bias: &[f64]) -> Result<Matrix> {
    let mut z = input.matmul_t(weight)?;
    for i in 0..z.rows() {
        for (v, b) in z.row_mut(i).iter_mut().zip(bias) {
            *v += b;
        }
    }
    Ok(z)
}

pub fn forward(params: &ModelParams, inputs: &Matrix) -> Result<ForwardTrace> {
    let dims = params.dims();
    if inputs.cols() != dims.input_dim {
        return Err(Error::shape("forward", dims.input_dim, inputs.cols()));
    }
    if !inputs.all_finite() {
        return Err(Error::NonFinite("forward input"));
    }
    let last = params.layers.len() - 1;
    let mut activations = vec![inputs.clone()];
    let mut pre_activations = Vec::with_capacity(params.layers.len());
    let mut embeddings = Matrix::zeros(0, 0);
    for (l, layer) in params.layers.iter().enumerate() {
        let z = affine(&activations[l], &layer.weight, &layer.bias)?;
        if l == last {
            embeddings = z.clone();
        } else {
            let mut h = z.clone();
            h.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
            activations.push(h);
        }
        pre_activations.push(z);
    }
    let id_logits = embeddings.matmul_t(&params.class_weights)?;
    let scene_logits = affine(&embeddings, &params.scene_weights, &params.scene_bias)?;
    Ok(ForwardTrace {
        activations,
        pre_activations,
        embeddings,
        id_logits,
        scene_logits,
    })
}

/// Embeddings only.
pub fn embed(params: &ModelParams, inputs: &Matrix) -> Result<Matrix> {
    Ok(forward(params, inputs)?.embeddings)
}

fn column_sums(m: &Matrix) -> Vec<f64> {
    let mut out = vec![0.0; m.cols()];
    for r in m.iter_rows() {
        for (o, v) in out.iter_mut().zip(r) {
            *o += v;
        }
    }
    out
}

/// Backpropagates upstream gradients through both heads and the extractor.
///
/// `grad_embeddings` and `grad_id_logits` are gradients of the ReID loss,
/// `grad_scene_logits` is the gradient of the adversarial loss. The scene
/// head receives that gradient unchanged; the extractor receives it scaled
/// by `-lambda`.
pub fn backward(
    params: &ModelParams,
    trace: &ForwardTrace,
    grad_embeddings: &Matrix,
    grad_id_logits: &Matrix,
    grad_scene_logits: &Matrix,
    grl: GradReversalCoeff,
) -> Result<ParamGrads> {
    backward_scaled(
        params,
        trace,
        grad_embeddings,
        grad_id_logits,
        grad_scene_logits,
        -grl.lambda(),
    )
}

pub(crate) fn backward_scaled(
    params: &ModelParams,
    trace: &ForwardTrace,
    grad_embeddings: &Matrix,
    grad_id_logits: &Matrix,
    grad_scene_logits: &Matrix,
    scene_scale: f64,
) -> Result<ParamGrads> {
    let emb = &trace.embeddings;
    let batch = emb.rows();
    let expect = |m: &Matrix, cols: usize, op: &'static str| -> Result<()> {
        if m.shape() != (batch, cols) {
            return Err(Error::shape(op, format!("{batch}x{cols}"), format!("{:?}", m.shape())));
        }
        Ok(())
    };
    expect(grad_embeddings, params.class_weights.cols(), "backward: grad_embeddings")?;
    expect(grad_id_logits, params.class_weights.rows(), "backward: grad_id_logits")?;
    expect(grad_scene_logits, params.scene_weights.rows(), "backward: grad_scene_logits")?;
    if trace.pre_activations.len() != params.layers.len() || emb.cols() != params.class_weights.cols() {
        return Err(Error::shape(
            "backward: trace",
            format!("{} layers", params.layers.len()),
            format!("{} layers", trace.pre_activations.len()),
        ));
    }

    let mut grads = params.zeros_like();
    grads.class_weights = grad_id_logits.t_matmul(emb)?;
    grads.scene_weights = grad_scene_logits.t_matmul(emb)?;
    grads.scene_bias = column_sums(grad_scene_logits);

    let mut upstream = grad_embeddings.clone();
    let from_id = grad_id_logits.matmul(&params.class_weights)?;
    let from_scene = grad_scene_logits.matmul(&params.scene_weights)?;
    for ((g, a), s) in upstream
        .data_mut()
        .iter_mut()
        .zip(from_id.data())
        .zip(from_scene.data())
    {
        *g += a + scene_scale * s;
    }

    let last = params.layers.len() - 1;
    for l in (0..=last).rev() {
        if l != last {
            for (g, z) in upstream
                .data_mut()
                .iter_mut()
                .zip(trace.pre_activations[l].data())
            {
                if *z <= 0.0 {
                    *g = 0.0;
                }
            }
        }
        let input = &trace.activations[l];
        grads.layers[l].weight = upstream.t_matmul(input)?;
        grads.layers[l].bias = column_sums(&upstream);
        if l > 0 {
            upstream = upstream.matmul(&params.layers[l].weight)?;
        }
    }
    Ok(grads)
}

/// Classic momentum SGD with L2 weight decay on weights (not biases):
/// `v <- momentum*v + grad + weight_decay*param`, `param <- param - lr*v`.
pub fn sgd_step(
    params: &mut ModelParams,
    grads: &ParamGrads,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
    velocity: &mut Velocity,
) -> Result<()> {
    if !(lr >= 0.0) {
        return Err(Error::invalid(format!("learning rate must be >= 0, got {lr}")));
    }
    params.check_same_shape(grads, "sgd_step: grads")?;
    params.check_same_shape(velocity, "sgd_step: velocity")?;
    let grads = grads.tensors();
    for (((kind, p), (_, v)), (_, g)) in params
        .tensors_mut()
        .into_iter()
        .zip(velocity.tensors_mut())
        .zip(grads)
    {
        let decay = if kind == TensorKind::Weight { weight_decay } else { 0.0 };
        for ((pi, vi), gi) in p.iter_mut().zip(v.iter_mut()).zip(g) {
            *vi = momentum * *vi + gi + decay * *pi;
            *pi -= lr * *vi;
        }
    }
    Ok(())
}

/// Half-cosine decay from `base_lr` at step 0 to 0 at `total_steps`.
pub fn cosine_lr(step: usize, total_steps: usize, base_lr: f64) -> Result<f64> {
    if total_steps == 0 {
        return Err(Error::invalid("cosine_lr: total_steps must be >= 1"));
    }
    if step > total_steps {
        return Err(Error::invalid(format!(
            "cosine_lr: step {step} beyond total {total_steps}"
        )));
    }
    let t = step as f64 / total_steps as f64;
    Ok(base_lr * (1.0 + (std::f64::consts::PI * t).cos()) / 2.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims(d: usize, hidden: &[usize], l: usize, c: usize, t: usize) -> ModelDims {
        ModelDims {
            input_dim: d,
            hidden: hidden.to_vec(),
            embedding_dim: l,
            num_classes: c,
            num_scenes: t,
        }
    }

    fn random_inputs(rng: &mut RngState, rows: usize, cols: usize) -> Matrix {
        Matrix::new(rows, cols, (0..rows * cols).map(|_| rng.next_normal()).collect()).unwrap()
    }

    #[test]
    fn init_shapes_and_determinism() {
        let d = dims(4, &[16], 8, 10, 2);
        let a = init_params(&mut RngState::new(5), &d).unwrap();
        let b = init_params(&mut RngState::new(5), &d).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.class_weights.shape(), (10, 8));
        assert_eq!(a.layers.len(), 2);
        assert_eq!(a.dims(), d);
        assert!(a.layers.iter().all(|l| l.bias.iter().all(|&b| b == 0.0)));
        assert!(init_params(&mut RngState::new(5), &dims(0, &[], 8, 10, 2)).is_err());
        assert!(init_params(&mut RngState::new(5), &dims(4, &[0], 8, 10, 2)).is_err());
    }

    #[test]
    fn id_logit_of_class_row_is_squared_norm() {
        let d = dims(3, &[], 3, 4, 2);
        let mut p = init_params(&mut RngState::new(1), &d).unwrap();
        p.layers[0].weight = Matrix::identity(3);
        let x = Matrix::from_rows(&[p.class_weights.row(2).to_vec()]).unwrap();
        let trace = forward(&p, &x).unwrap();
        let w = p.class_weights.row(2);
        let sq: f64 = w.iter().map(|v| v * v).sum();
        assert!((trace.id_logits.get(0, 2) - sq).abs() < 1e-15);
        assert_eq!(trace.embeddings, x);
    }

    #[test]
    fn forward_matches_naive_loops() {
        let d = dims(5, &[7, 6], 4, 3, 2);
        let mut rng = RngState::new(21);
        let p = init_params(&mut rng, &d).unwrap();
        let x = random_inputs(&mut rng, 6, 5);
        let trace = forward(&p, &x).unwrap();
        for i in 0..6 {
            let mut h = x.row(i).to_vec();
            for (l, layer) in p.layers.iter().enumerate() {
                let mut next = vec![0.0; layer.weight.rows()];
                for (o, nv) in next.iter_mut().enumerate() {
                    let mut s = layer.bias[o];
                    for (k, hk) in h.iter().enumerate() {
                        s += layer.weight.get(o, k) * hk;
                    }
                    *nv = if l + 1 < p.layers.len() { s.max(0.0) } else { s };
                }
                h = next;
            }
            for c in 0..3 {
                let mut s = 0.0;
                for k in 0..4 {
                    s += h[k] * p.class_weights.get(c, k);
                }
                assert!((trace.id_logits.get(i, c) - s).abs() < 1e-12);
            }
            for t in 0..2 {
                let mut s = p.scene_bias[t];
                for k in 0..4 {
                    s += h[k] * p.scene_weights.get(t, k);
                }
                assert!((trace.scene_logits.get(i, t) - s).abs() < 1e-12);
            }
        }
        assert_eq!(forward(&p, &x).unwrap(), trace);
    }

    #[test]
    fn forward_rejects_bad_input() {
        let d = dims(3, &[], 3, 2, 2);
        let p = init_params(&mut RngState::new(1), &d).unwrap();
        assert!(forward(&p, &Matrix::zeros(1, 4)).is_err());
        let nan = Matrix::new(1, 3, vec![0.0, f64::NAN, 1.0]).unwrap();
        assert!(matches!(forward(&p, &nan), Err(Error::NonFinite(_))));
    }

    #[test]
    fn id_logits_are_linear_in_embeddings() {
        let d = dims(3, &[], 3, 4, 2);
        let mut p = init_params(&mut RngState::new(3), &d).unwrap();
        p.layers[0].weight = Matrix::identity(3);
        let x = Matrix::from_rows(&[[0.3, -1.2, 0.7]]).unwrap();
        let x2 = Matrix::from_rows(&[[0.6, -2.4, 1.4]]).unwrap();
        let a = forward(&p, &x).unwrap().id_logits;
        let b = forward(&p, &x2).unwrap().id_logits;
        for (u, v) in a.data().iter().zip(b.data()) {
            assert_eq!(2.0 * u, *v);
        }
    }

    fn random_upstream(rng: &mut RngState, trace: &ForwardTrace) -> (Matrix, Matrix, Matrix) {
        let b = trace.embeddings.rows();
        (
            random_inputs(rng, b, trace.embeddings.cols()),
            random_inputs(rng, b, trace.id_logits.cols()),
            random_inputs(rng, b, trace.scene_logits.cols()),
        )
    }

    #[test]
    fn zero_lambda_matches_scene_free_model() {
        let d = dims(4, &[6], 5, 3, 3);
        let mut rng = RngState::new(8);
        let p = init_params(&mut rng, &d).unwrap();
        let x = random_inputs(&mut rng, 5, 4);
        let trace = forward(&p, &x).unwrap();
        let (ge, gi, gs) = random_upstream(&mut rng, &trace);
        let zero = GradReversalCoeff::new(0.0).unwrap();
        let with = backward(&p, &trace, &ge, &gi, &gs, zero).unwrap();
        let without = backward(&p, &trace, &ge, &gi, &Matrix::zeros(5, 3), zero).unwrap();
        let n = p.extractor_tensor_count() + 1;
        for ((_, a), (_, b)) in with.tensors().iter().zip(without.tensors()).take(n) {
            for (u, v) in a.iter().zip(b) {
                assert!((u - v).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let d = dims(4, &[6], 5, 3, 2);
        let mut rng = RngState::new(9);
        let p = init_params(&mut rng, &d).unwrap();
        let trace = forward(&p, &random_inputs(&mut rng, 4, 4)).unwrap();
        let g = backward(
            &p,
            &trace,
            &Matrix::zeros(4, 5),
            &Matrix::zeros(4, 3),
            &Matrix::zeros(4, 2),
            GradReversalCoeff::new(0.5).unwrap(),
        )
        .unwrap();
        assert!(g.tensors().iter().all(|(_, t)| t.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn backward_rejects_shape_mismatch() {
        let d = dims(4, &[], 5, 3, 2);
        let mut rng = RngState::new(9);
        let p = init_params(&mut rng, &d).unwrap();
        let trace = forward(&p, &random_inputs(&mut rng, 4, 4)).unwrap();
        let r = backward(
            &p,
            &trace,
            &Matrix::zeros(3, 5),
            &Matrix::zeros(4, 3),
            &Matrix::zeros(4, 2),
            GradReversalCoeff::new(0.5).unwrap(),
        );
        assert!(r.is_err());
    }

    #[test]
    fn reversal_sign_flips_only_scene_contribution() {
        let d = dims(4, &[6], 5, 3, 2);
        let mut rng = RngState::new(10);
        let p = init_params(&mut rng, &d).unwrap();
        let trace = forward(&p, &random_inputs(&mut rng, 6, 4)).unwrap();
        let (ge, gi, gs) = random_upstream(&mut rng, &trace);
        let lambda = 0.37;
        let pos = backward_scaled(&p, &trace, &ge, &gi, &gs, -lambda).unwrap();
        let neg = backward_scaled(&p, &trace, &ge, &gi, &gs, lambda).unwrap();
        // scene-only contribution at unit scale
        let scene_only = backward_scaled(
            &p,
            &trace,
            &Matrix::zeros(6, 5),
            &Matrix::zeros(6, 3),
            &gs,
            1.0,
        )
        .unwrap();
        let n = p.extractor_tensor_count();
        let tp = pos.tensors();
        let tn = neg.tensors();
        let ts = scene_only.tensors();
        for k in 0..n {
            for ((a, b), s) in tp[k].1.iter().zip(tn[k].1).zip(ts[k].1) {
                assert!(((b - a) - 2.0 * lambda * s).abs() < 1e-10);
            }
        }
        // heads are unaffected by the sign
        for k in n..tp.len() {
            assert_eq!(tp[k].1, tn[k].1);
        }
    }

    #[test]
    fn grad_reversal_rejects_negative() {
        assert!(GradReversalCoeff::new(-0.1).is_err());
        assert!(GradReversalCoeff::new(f64::NAN).is_err());
    }

    fn scalar_model(value: f64) -> ModelParams {
        ModelParams {
            layers: vec![Dense {
                weight: Matrix::new(1, 1, vec![value]).unwrap(),
                bias: vec![value],
            }],
            class_weights: Matrix::zeros(2, 1),
            scene_weights: Matrix::zeros(2, 1),
            scene_bias: vec![0.0; 2],
        }
    }

    #[test]
    fn sgd_plain_step() {
        let mut p = scalar_model(2.0);
        let mut g = p.zeros_like();
        g.layers[0].weight.set(0, 0, 0.5);
        g.layers[0].bias[0] = -1.0;
        let mut v = p.zeros_like();
        sgd_step(&mut p, &g, 0.1, 0.0, 0.0, &mut v).unwrap();
        assert_eq!(p.layers[0].weight.get(0, 0), 2.0 - 0.1 * 0.5);
        assert_eq!(p.layers[0].bias[0], 2.0 + 0.1);
    }

    #[test]
    fn sgd_zero_grad_is_noop() {
        let mut p = scalar_model(2.0);
        let before = p.clone();
        let g = p.zeros_like();
        let mut v = p.zeros_like();
        sgd_step(&mut p, &g, 0.1, 0.9, 0.0, &mut v).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn sgd_momentum_recurrence() {
        let mut p = scalar_model(0.0);
        let mut g = p.zeros_like();
        g.layers[0].weight.set(0, 0, 1.0);
        let mut v = p.zeros_like();
        let lr = 0.01;
        sgd_step(&mut p, &g, lr, 0.9, 0.0, &mut v).unwrap();
        sgd_step(&mut p, &g, lr, 0.9, 0.0, &mut v).unwrap();
        assert!((p.layers[0].weight.get(0, 0) + lr * (1.0 + 1.9)).abs() < 1e-15);
    }

    #[test]
    fn sgd_decays_weights_not_biases() {
        let mut p = scalar_model(1.0);
        let g = p.zeros_like();
        let mut v = p.zeros_like();
        sgd_step(&mut p, &g, 0.5, 0.0, 0.1, &mut v).unwrap();
        assert_eq!(p.layers[0].weight.get(0, 0), 1.0 - 0.5 * 0.1);
        assert_eq!(p.layers[0].bias[0], 1.0);
        assert!(sgd_step(&mut p, &g, -0.1, 0.0, 0.0, &mut v).is_err());
    }

    #[test]
    fn cosine_lr_examples() {
        assert_eq!(cosine_lr(0, 100, 0.008).unwrap(), 0.008);
        assert!(cosine_lr(100, 100, 0.008).unwrap().abs() < 1e-18);
        assert!((cosine_lr(50, 100, 0.008).unwrap() - 0.004).abs() < 1e-15);
        assert!(cosine_lr(0, 0, 0.008).is_err());
        assert!(cosine_lr(101, 100, 0.008).is_err());
    }
}
