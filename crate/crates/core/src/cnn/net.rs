use std::sync::atomic::{AtomicU64, Ordering};

use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::conv::{conv_backward, conv_forward, Elem, Geom};
use super::spec::{Activation, LayerSpec, NetworkSpec};
use super::tensor::Tensor4;
use crate::error::{Error, Result};

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

/// Weights of a [`NetworkSpec`] as one flat vector, layer by layer:
/// weights `[out][in][3][3]` then biases `[out]`.
#[derive(Debug)]
pub struct Network {
    spec: NetworkSpec,
    params: Vec<f64>,
    offsets: Vec<usize>,
    /// Changes whenever the parameters may have changed; caches record it.
    stamp: u64,
}

impl Clone for Network {
    fn clone(&self) -> Self {
        Self {
            spec: self.spec.clone(),
            params: self.params.clone(),
            offsets: self.offsets.clone(),
            stamp: fresh_id(),
        }
    }
}

impl PartialEq for Network {
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec && self.params == other.params
    }
}

/// Activations kept by [`Network::forward`] for [`Network::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    stamp: u64,
    input: Tensor4,
    pre: Vec<Tensor4>,
    post: Vec<Tensor4>,
}

impl ForwardCache {
    /// Largest absolute pre-activation over all layers.
    pub fn max_activation(&self) -> f64 {
        self.pre.iter().map(Tensor4::max_abs).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub params: Vec<f64>,
    pub input: Tensor4,
}

struct LayerView<'a> {
    spec: &'a LayerSpec,
    weights: &'a [f64],
    bias: &'a [f64],
}

fn relu<T: Elem>(v: T) -> T {
    if v > T::default() {
        v
    } else {
        T::default()
    }
}

impl Network {
    /// Zero-initialised network.
    pub fn zeros(spec: NetworkSpec) -> Result<Self> {
        spec.validate()?;
        let mut offsets = Vec::with_capacity(spec.layers.len() + 1);
        let mut acc = 0;
        for l in &spec.layers {
            offsets.push(acc);
            acc += l.param_len();
        }
        offsets.push(acc);
        Ok(Self {
            params: vec![0.0; acc],
            spec,
            offsets,
            stamp: fresh_id(),
        })
    }

    /// He-uniform weights (`±sqrt(6 / fan_in)`), zero biases.
    pub fn init(spec: NetworkSpec, seed: u64) -> Result<Self> {
        let mut net = Self::zeros(spec)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (i, l) in net.spec.layers.clone().iter().enumerate() {
            let limit = (6.0 / (l.in_channels * 9) as f64).sqrt();
            let dist = Uniform::new_inclusive(-limit, limit).expect("finite bounds");
            let off = net.offsets[i];
            for v in &mut net.params[off..off + l.weight_len()] {
                *v = dist.sample(&mut rng);
            }
        }
        Ok(net)
    }

    pub fn from_params(spec: NetworkSpec, params: Vec<f64>) -> Result<Self> {
        let mut net = Self::zeros(spec)?;
        if params.len() != net.params.len() {
            return Err(Error::Shape(format!(
                "network needs {} parameters, got {}",
                net.params.len(),
                params.len()
            )));
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite parameter".into()));
        }
        net.params = params;
        Ok(net)
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Mutable access invalidates outstanding forward caches.
    pub fn params_mut(&mut self) -> &mut [f64] {
        self.stamp = fresh_id();
        &mut self.params
    }

    /// `(offset, weight_len, bias_len)` of layer `i` in the flat vector.
    pub fn layer_range(&self, i: usize) -> (usize, usize, usize) {
        let l = &self.spec.layers[i];
        (self.offsets[i], l.weight_len(), l.out_channels)
    }

    fn view(&self, i: usize) -> LayerView<'_> {
        let (off, wl, bl) = self.layer_range(i);
        LayerView {
            spec: &self.spec.layers[i],
            weights: &self.params[off..off + wl],
            bias: &self.params[off + wl..off + wl + bl],
        }
    }

    fn check_input(&self, x: &Tensor4) -> Result<()> {
        let m = self.spec.size_multiple();
        if x.c() != self.spec.in_channels() {
            return Err(Error::Shape(format!(
                "network expects {} input channels, got {}",
                self.spec.in_channels(),
                x.c()
            )));
        }
        if x.h() == 0 || x.w() == 0 || x.h() % m != 0 || x.w() % m != 0 {
            return Err(Error::Shape(format!(
                "spatial dims {}x{} must be positive multiples of {m}",
                x.h(),
                x.w()
            )));
        }
        Ok(())
    }

    fn layer_forward(&self, i: usize, input: &Tensor4) -> Tensor4 {
        let v = self.view(i);
        let g = Geom::new(v.spec, input.h(), input.w());
        let per = g.cout * g.ho * g.wo;
        let mut out = vec![0.0; input.n() * per];
        out.par_chunks_mut(per).enumerate().for_each(|(s, dst)| {
            dst.copy_from_slice(&conv_forward(input.sample(s), &g, v.weights, v.bias));
        });
        Tensor4::raw(input.n(), g.cout, g.ho, g.wo, out)
    }

    fn activate(spec: &LayerSpec, z: &Tensor4) -> Tensor4 {
        match spec.activation {
            Activation::Linear => z.clone(),
            Activation::Relu => {
                let (n, c, h, w) = z.dims();
                Tensor4::raw(n, c, h, w, z.values().iter().map(|v| v.max(0.0)).collect())
            }
        }
    }

    fn add_skips(&self, j: usize, z: &mut Tensor4, pre: &[Tensor4]) {
        for &(i, _) in self.spec.skip_pairs.iter().filter(|p| p.1 == j) {
            z.values_mut().iter_mut().zip(pre[i].values()).for_each(|(a, b)| *a += b);
        }
    }

    pub fn forward(&self, x: &Tensor4) -> Result<(Tensor4, ForwardCache)> {
        self.check_input(x)?;
        let mut pre: Vec<Tensor4> = Vec::with_capacity(self.spec.layers.len());
        let mut post: Vec<Tensor4> = Vec::with_capacity(self.spec.layers.len());
        for (j, spec) in self.spec.layers.iter().enumerate() {
            let input = if j == 0 { x } else { &post[j - 1] };
            let mut z = self.layer_forward(j, input);
            self.add_skips(j, &mut z, &pre);
            post.push(Self::activate(spec, &z));
            pre.push(z);
        }
        let y = post.last().expect("validated non-empty").clone();
        Ok((
            y,
            ForwardCache {
                stamp: self.stamp,
                input: x.clone(),
                pre,
                post,
            },
        ))
    }

    /// Forward pass without a cache; bit-identical to [`Network::forward`].
    pub fn predict(&self, x: &Tensor4) -> Result<Tensor4> {
        self.infer::<f64>(x)
    }

    /// Single-precision inference, the precision checkpoints are stored in.
    /// Agrees with [`Network::predict`] to roughly `1e-6` relative.
    pub fn predict_f32(&self, x: &Tensor4) -> Result<Tensor4> {
        self.infer::<f32>(x)
    }

    fn infer<T: Elem>(&self, x: &Tensor4) -> Result<Tensor4> {
        self.check_input(x)?;
        let params: Vec<T> = self.params.iter().map(|&v| T::from_f64(v)).collect();
        let layers = &self.spec.layers;
        let (n, _, h, w) = x.dims();
        let samples: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|s| {
                let mut a: Vec<T> = x.sample(s).iter().map(|&v| T::from_f64(v)).collect();
                let (mut hh, mut ww) = (h, w);
                let mut kept: Vec<Option<Vec<T>>> = vec![None; layers.len()];
                for (j, spec) in layers.iter().enumerate() {
                    let g = Geom::new(spec, hh, ww);
                    let (off, wl, bl) = self.layer_range(j);
                    let mut z = conv_forward(&a, &g, &params[off..off + wl], &params[off + wl..off + wl + bl]);
                    for &(i, _) in self.spec.skip_pairs.iter().filter(|p| p.1 == j) {
                        let src = kept[i].take().expect("skip source computed earlier");
                        z.iter_mut().zip(&src).for_each(|(a, &b)| *a += b);
                    }
                    if self.spec.skip_pairs.iter().any(|p| p.0 == j) {
                        kept[j] = Some(z.clone());
                    }
                    if spec.activation == Activation::Relu {
                        z.iter_mut().for_each(|v| *v = relu(*v));
                    }
                    a = z;
                    (hh, ww) = (g.ho, g.wo);
                }
                a.into_iter().map(T::to_f64).collect()
            })
            .collect();
        let c = self.spec.out_channels();
        Ok(Tensor4::raw(n, c, h, w, samples.concat()))
    }

    pub fn backward(&self, cache: &ForwardCache, grad_y: &Tensor4) -> Result<Gradients> {
        if cache.stamp != self.stamp {
            return Err(Error::State("forward cache predates a parameter update".into()));
        }
        let layers = &self.spec.layers;
        let last = layers.len() - 1;
        cache.post[last].ensure_same_shape(grad_y)?;
        let mut grads = vec![0.0; self.params.len()];
        // Gradient w.r.t. each layer's pre-activation, filled back to front.
        let mut dpre: Vec<Option<Vec<f64>>> = vec![None; layers.len()];
        let mut da = grad_y.values().to_vec();
        let mut dx_out = Vec::new();
        for j in (0..=last).rev() {
            let z = &cache.pre[j];
            let mut dz = da;
            if layers[j].activation == Activation::Relu {
                dz.iter_mut().zip(z.values()).for_each(|(g, &zv)| {
                    if zv <= 0.0 {
                        *g = 0.0;
                    }
                });
            }
            // Skip targets feed their gradient straight to the source pre-activation.
            if let Some(extra) = dpre[j].take() {
                dz.iter_mut().zip(&extra).for_each(|(a, b)| *a += b);
            }
            for &(i, _) in self.spec.skip_pairs.iter().filter(|p| p.1 == j) {
                match &mut dpre[i] {
                    Some(acc) => acc.iter_mut().zip(&dz).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(dz.clone()),
                }
            }
            let input = if j == 0 { &cache.input } else { &cache.post[j - 1] };
            let v = self.view(j);
            let g = Geom::new(v.spec, input.h(), input.w());
            let per_out = z.sample_len();
            let per_sample: Vec<_> = (0..input.n())
                .into_par_iter()
                .map(|s| conv_backward(input.sample(s), &g, v.weights, &dz[s * per_out..(s + 1) * per_out]))
                .collect();
            let (off, wl, bl) = self.layer_range(j);
            let mut dinput = Vec::with_capacity(input.len());
            for (dw, db, dx) in per_sample {
                grads[off..off + wl].iter_mut().zip(&dw).for_each(|(a, b)| *a += b);
                grads[off + wl..off + wl + bl].iter_mut().zip(&db).for_each(|(a, b)| *a += b);
                dinput.extend(dx);
            }
            if j == 0 {
                dx_out = dinput;
                da = Vec::new();
            } else {
                da = dinput;
            }
        }
        let (n, c, h, w) = cache.input.dims();
        Ok(Gradients {
            params: grads,
            input: Tensor4::raw(n, c, h, w, dx_out),
        })
    }
}
