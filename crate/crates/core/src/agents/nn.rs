//! Small dense networks with manual backprop, an Adam optimizer and the
//! flat-binary checkpoint format.
//!
//! Checkpoint layout (all little-endian): magic `b"APRN"`, `u32` network
//! count, then per network a `u32` layer-size count, the `u32` sizes, and for
//! each layer its weights as row-major `f32` (`out × in`) followed by its
//! `f32` biases.

use std::io::{self, Read, Write};

use rand::Rng;
use thiserror::Error;

use crate::rng::StreamRng;

const MAGIC: &[u8; 4] = b"APRN";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("checkpoint holds {found} networks, expected {expected}")]
    NetworkCount { expected: usize, found: usize },
    #[error("implausible layer sizes {0:?}")]
    BadShape(Vec<usize>),
}

/// Fully connected network with ReLU hidden layers and a linear output.
/// Parameters live in one flat vector: per layer, weights then biases.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    pub params: Vec<f64>,
}

/// Per-layer activations from a forward pass; `acts[0]` is the input.
#[derive(Debug, Clone)]
pub struct Trace {
    acts: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("at least the input")
    }
}

fn n_params(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

/// Standard normal draw by Box–Muller.
fn normal(rng: &mut StreamRng) -> f64 {
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

impl Mlp {
    pub fn zeros(sizes: &[usize]) -> Self {
        assert!(sizes.len() >= 2, "need input and output sizes");
        Mlp { sizes: sizes.to_vec(), params: vec![0.0; n_params(sizes)] }
    }

    /// Scaled-normal init: hidden layers use std `gain_hidden / sqrt(fan_in)`,
    /// the output layer `gain_out / sqrt(fan_in)`; biases start at zero.
    pub fn new(sizes: &[usize], gain_hidden: f64, gain_out: f64, rng: &mut StreamRng) -> Self {
        let mut net = Self::zeros(sizes);
        let n_layers = sizes.len() - 1;
        let mut off = 0;
        for l in 0..n_layers {
            let (n_in, n_out) = (sizes[l], sizes[l + 1]);
            let gain = if l + 1 == n_layers { gain_out } else { gain_hidden };
            let std = gain / (n_in as f64).sqrt();
            for w in &mut net.params[off..off + n_in * n_out] {
                *w = std * normal(rng);
            }
            off += n_in * n_out + n_out;
        }
        net
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut trace = self.trace(x);
        trace.acts.pop().expect("output layer")
    }

    pub fn trace(&self, x: &[f64]) -> Trace {
        debug_assert_eq!(x.len(), self.sizes[0]);
        let n_layers = self.sizes.len() - 1;
        let mut acts = Vec::with_capacity(n_layers + 1);
        acts.push(x.to_vec());
        let mut off = 0;
        for l in 0..n_layers {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.params[off..off + n_in * n_out];
            let b = &self.params[off + n_in * n_out..off + n_in * n_out + n_out];
            let input = &acts[l];
            let mut out = b.to_vec();
            for (o, row) in out.iter_mut().zip(w.chunks_exact(n_in)) {
                *o += row.iter().zip(input).map(|(a, b)| a * b).sum::<f64>();
            }
            if l + 1 < n_layers {
                for o in &mut out {
                    *o = o.max(0.0);
                }
            }
            acts.push(out);
            off += n_in * n_out + n_out;
        }
        Trace { acts }
    }

    /// Accumulates `∂(dout · output)/∂params` into `grad`.
    pub fn backward(&self, trace: &Trace, dout: &[f64], grad: &mut [f64]) {
        let n_layers = self.sizes.len() - 1;
        let mut offsets = Vec::with_capacity(n_layers);
        let mut off = 0;
        for l in 0..n_layers {
            offsets.push(off);
            off += self.sizes[l] * self.sizes[l + 1] + self.sizes[l + 1];
        }
        let mut delta = dout.to_vec();
        for l in (0..n_layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let off = offsets[l];
            if l + 1 < n_layers {
                for (d, a) in delta.iter_mut().zip(&trace.acts[l + 1]) {
                    if *a <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            let input = &trace.acts[l];
            let (gw, gb) = grad[off..off + n_in * n_out + n_out].split_at_mut(n_in * n_out);
            for (o, d) in delta.iter().enumerate() {
                if *d == 0.0 {
                    continue;
                }
                gb[o] += d;
                for (g, x) in gw[o * n_in..(o + 1) * n_in].iter_mut().zip(input) {
                    *g += d * x;
                }
            }
            if l > 0 {
                let w = &self.params[off..off + n_in * n_out];
                let mut next = vec![0.0; n_in];
                for (o, d) in delta.iter().enumerate() {
                    if *d == 0.0 {
                        continue;
                    }
                    for (nx, wv) in next.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                        *nx += d * wv;
                    }
                }
                delta = next;
            }
        }
    }

    fn write_to<W: Write>(&self, w: &mut W) -> io::Result<()> {
        w.write_all(&(self.sizes.len() as u32).to_le_bytes())?;
        for s in &self.sizes {
            w.write_all(&(*s as u32).to_le_bytes())?;
        }
        for p in &self.params {
            w.write_all(&(*p as f32).to_le_bytes())?;
        }
        Ok(())
    }

    fn read_from<R: Read>(r: &mut R) -> Result<Self, CheckpointError> {
        let n = read_u32(r)? as usize;
        if !(2..=16).contains(&n) {
            return Err(CheckpointError::BadShape(vec![n]));
        }
        let sizes = (0..n).map(|_| read_u32(r).map(|v| v as usize)).collect::<io::Result<Vec<_>>>()?;
        if sizes.iter().any(|s| *s == 0 || *s > 1 << 16) {
            return Err(CheckpointError::BadShape(sizes));
        }
        let mut net = Mlp::zeros(&sizes);
        let mut buf = [0u8; 4];
        for p in &mut net.params {
            r.read_exact(&mut buf)?;
            *p = f32::from_le_bytes(buf) as f64;
        }
        Ok(net)
    }
}

fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

pub fn write_checkpoint<W: Write>(w: &mut W, nets: &[&Mlp]) -> io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&(nets.len() as u32).to_le_bytes())?;
    for n in nets {
        n.write_to(w)?;
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(r: &mut R, expected: usize) -> Result<Vec<Mlp>, CheckpointError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let found = read_u32(r)? as usize;
    if found != expected {
        return Err(CheckpointError::NetworkCount { expected, found });
    }
    (0..found).map(|_| Mlp::read_from(r)).collect()
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-5, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

/// Scales all gradient slices jointly so their global L2 norm is at most
/// `max_norm`. Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut [&mut [f64]], max_norm: f64) -> f64 {
    let norm = grads.iter().flat_map(|g| g.iter()).map(|x| x * x).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / (norm + 1e-6);
        for g in grads.iter_mut() {
            for x in g.iter_mut() {
                *x *= s;
            }
        }
    }
    norm
}

/// Draws from a categorical given logits.
pub fn sample_logits(logits: &[f64], rng: &mut StreamRng) -> usize {
    crate::util::sample_categorical(&crate::bayes::softmax(logits), rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    #[test]
    fn forward_matches_hand_computation() {
        let mut net = Mlp::zeros(&[2, 2, 1]);
        // layer 0: w = [[1, -1], [0.5, 0.5]], b = [0, -1]; layer 1: w = [[2, 3]], b = [0.25]
        net.params = vec![1.0, -1.0, 0.5, 0.5, 0.0, -1.0, 2.0, 3.0, 0.25];
        // x = [3, 1]: hidden = relu([2, 1]) = [2, 1]; out = 4 + 3 + 0.25
        assert_eq!(net.forward(&[3.0, 1.0]), vec![7.25]);
        // x = [1, 3]: hidden = relu([-2, 1]) = [0, 1]
        assert_eq!(net.forward(&[1.0, 3.0]), vec![3.25]);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = stream(3, Stream::Auxiliary);
        let net = Mlp::new(&[5, 7, 6, 3], 1.4, 1.0, &mut rng);
        let x: Vec<f64> = (0..5).map(|i| (i as f64 * 0.7).sin()).collect();
        let dout = [0.3, -1.2, 0.8];
        let mut grad = vec![0.0; net.n_params()];
        net.backward(&net.trace(&x), &dout, &mut grad);
        let f = |n: &Mlp| n.forward(&x).iter().zip(&dout).map(|(a, b)| a * b).sum::<f64>();
        let h = 1e-6;
        for i in 0..net.n_params() {
            let mut plus = net.clone();
            plus.params[i] += h;
            let mut minus = net.clone();
            minus.params[i] -= h;
            let fd = (f(&plus) - f(&minus)) / (2.0 * h);
            assert!((fd - grad[i]).abs() <= 1e-6 * (1.0 + fd.abs()), "param {i}: fd {fd} vs {}", grad[i]);
        }
    }

    #[test]
    fn checkpoint_roundtrip_is_f32_exact() {
        let mut rng = stream(1, Stream::Auxiliary);
        let a = Mlp::new(&[12, 64, 64, 4], 1.4, 0.01, &mut rng);
        let c = Mlp::new(&[12, 64, 64, 1], 1.4, 1.0, &mut rng);
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &[&a, &c]).unwrap();
        let header = 4 + 4 + 4 * (1 + 4) * 2;
        assert_eq!(buf.len(), header + 4 * (a.n_params() + c.n_params()));
        let back = read_checkpoint(&mut buf.as_slice(), 2).unwrap();
        for (orig, loaded) in [a, c].iter().zip(&back) {
            assert_eq!(orig.sizes(), loaded.sizes());
            for (x, y) in orig.params.iter().zip(&loaded.params) {
                assert_eq!(*x as f32, *y as f32);
            }
        }
        assert!(matches!(read_checkpoint(&mut &b"XXXX"[..], 2), Err(CheckpointError::BadMagic)));
        assert!(matches!(
            read_checkpoint(&mut buf.as_slice(), 1),
            Err(CheckpointError::NetworkCount { .. })
        ));
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut x = vec![3.0, -2.0];
        let mut opt = Adam::new(2, 0.1);
        for _ in 0..500 {
            let g: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
            opt.step(&mut x, &g);
        }
        assert!(x.iter().all(|v| v.abs() < 1e-2), "{x:?}");
    }

    #[test]
    fn grad_clipping_is_joint() {
        let mut a = vec![3.0];
        let mut b = vec![4.0];
        let n = clip_grad_norm(&mut [&mut a, &mut b], 0.5);
        assert_eq!(n, 5.0);
        let after = (a[0] * a[0] + b[0] * b[0]).sqrt();
        assert!((after - 0.5).abs() < 1e-6);
    }
}
