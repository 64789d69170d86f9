use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{conv_output_size, relu_backward, relu_in_place, Conv2d, Linear};
use super::NeuralError;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
}

/// Layer layout of a dueling Q-network. Stored verbatim in checkpoint headers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_channels: usize,
    pub input_height: usize,
    pub input_width: usize,
    pub convs: Vec<ConvSpec>,
    pub hidden: usize,
    pub actions: usize,
}

impl Architecture {
    /// Three stacked 3-channel 48×48 frames through conv(32,8,4) → conv(64,4,2)
    /// → conv(64,3,1) → fc(512) → V/A heads over two actions.
    pub fn parity() -> Self {
        Self {
            input_channels: 9,
            input_height: 48,
            input_width: 48,
            convs: vec![
                ConvSpec { filters: 32, kernel: 8, stride: 4 },
                ConvSpec { filters: 64, kernel: 4, stride: 2 },
                ConvSpec { filters: 64, kernel: 3, stride: 1 },
            ],
            hidden: 512,
            actions: 2,
        }
    }

    /// Same three-conv pattern with smaller kernels and strides so that 16..48
    /// pixel frames still leave a spatial map after the last conv.
    pub fn compact(input_channels: usize, resolution: usize, filters: [usize; 3], hidden: usize, actions: usize) -> Self {
        Self {
            input_channels,
            input_height: resolution,
            input_width: resolution,
            convs: vec![
                ConvSpec { filters: filters[0], kernel: 4, stride: 2 },
                ConvSpec { filters: filters[1], kernel: 3, stride: 2 },
                ConvSpec { filters: filters[2], kernel: 3, stride: 1 },
            ],
            hidden,
            actions,
        }
    }

    /// Spatial size after every conv, validating the whole chain.
    pub fn conv_output_sizes(&self) -> Result<Vec<(usize, usize)>, NeuralError> {
        let (mut h, mut w) = (self.input_height, self.input_width);
        let mut out = Vec::with_capacity(self.convs.len());
        for c in &self.convs {
            match (conv_output_size(h, c.kernel, c.stride), conv_output_size(w, c.kernel, c.stride)) {
                (Some(oh), Some(ow)) => {
                    h = oh;
                    w = ow;
                    out.push((h, w));
                }
                _ => return Err(NeuralError::IncompatibleConv { height: h, width: w, kernel: c.kernel, stride: c.stride }),
            }
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<(), NeuralError> {
        if self.input_channels == 0 || self.hidden == 0 || self.actions == 0 {
            return Err(NeuralError::InvalidArchitecture("channels, hidden and actions must be positive".into()));
        }
        if self.convs.iter().any(|c| c.filters == 0) {
            return Err(NeuralError::InvalidArchitecture("conv with zero filters".into()));
        }
        self.conv_output_sizes().map(|_| ())
    }

    pub fn input_len(&self) -> usize {
        self.input_channels * self.input_height * self.input_width
    }

    pub fn flat_features(&self) -> Result<usize, NeuralError> {
        let sizes = self.conv_output_sizes()?;
        Ok(match (self.convs.last(), sizes.last()) {
            (Some(c), Some(&(h, w))) => c.filters * h * w,
            _ => self.input_len(),
        })
    }

    pub fn parameter_count(&self) -> Result<usize, NeuralError> {
        let mut count = 0;
        let mut channels = self.input_channels;
        for c in &self.convs {
            count += c.filters * (channels * c.kernel * c.kernel + 1);
            channels = c.filters;
        }
        let flat = self.flat_features()?;
        count += self.hidden * (flat + 1) + (self.hidden + 1) + self.actions * (self.hidden + 1);
        Ok(count)
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "in{}x{}x{}", self.input_channels, self.input_height, self.input_width)?;
        for c in &self.convs {
            write!(f, "-conv{}k{}s{}", c.filters, c.kernel, c.stride)?;
        }
        write!(f, "-fc{}-dueling{}", self.hidden, self.actions)
    }
}

/// Per-sample Q, V and A, row-major `[batch, actions]` for `q` and `a`.
#[derive(Debug, Clone, PartialEq)]
pub struct QOutput<T> {
    pub batch: usize,
    pub actions: usize,
    pub q: Vec<T>,
    pub v: Vec<T>,
    pub a: Vec<T>,
}

impl<T: Scalar> QOutput<T> {
    pub fn q_row(&self, i: usize) -> &[T] {
        &self.q[i * self.actions..(i + 1) * self.actions]
    }

    pub fn a_row(&self, i: usize) -> &[T] {
        &self.a[i * self.actions..(i + 1) * self.actions]
    }
}

/// Gradient buffers in the same order as [`DuelingQNetwork::tensors`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub tensors: Vec<Vec<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn global_norm(&self) -> T {
        self.tensors.iter().flatten().map(|&g| g * g).sum::<T>().sqrt()
    }

    pub fn scale(&mut self, factor: T) {
        for g in self.tensors.iter_mut().flatten() {
            *g *= factor;
        }
    }

    pub fn is_zero(&self) -> bool {
        self.tensors.iter().flatten().all(|g| *g == T::zero())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DuelingQNetwork<T> {
    arch: Architecture,
    pub convs: Vec<Conv2d<T>>,
    pub fc: Linear<T>,
    pub head_v: Linear<T>,
    pub head_a: Linear<T>,
}

struct ForwardCache<T> {
    /// Input and spatial size of every conv.
    conv_in_hw: Vec<(usize, usize)>,
    conv_out_hw: Vec<(usize, usize)>,
    cols: Vec<Vec<T>>,
    /// Post-ReLU conv outputs, channel-major.
    conv_act: Vec<Vec<T>>,
    flat: Vec<T>,
    hidden: Vec<T>,
}

/// `[d0, d1, inner]` → `[d1, d0, inner]`.
fn swap_outer<T: Copy>(x: &[T], d0: usize, d1: usize, inner: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(x.len());
    for j in 0..d1 {
        for i in 0..d0 {
            let start = (i * d1 + j) * inner;
            out.extend_from_slice(&x[start..start + inner]);
        }
    }
    out
}

impl<T: Scalar> DuelingQNetwork<T> {
    pub fn new<R: Rng + ?Sized>(arch: Architecture, rng: &mut R) -> Result<Self, NeuralError> {
        arch.validate()?;
        let mut convs = Vec::with_capacity(arch.convs.len());
        let mut channels = arch.input_channels;
        for c in &arch.convs {
            convs.push(Conv2d::he_uniform(channels, c.filters, c.kernel, c.stride, rng));
            channels = c.filters;
        }
        let flat = arch.flat_features()?;
        let fc = Linear::he_uniform(flat, arch.hidden, rng);
        let head_v = Linear::lecun_uniform(arch.hidden, 1, rng);
        let head_a = Linear::lecun_uniform(arch.hidden, arch.actions, rng);
        Ok(Self { arch, convs, fc, head_v, head_a })
    }

    pub fn zeros(arch: Architecture) -> Result<Self, NeuralError> {
        arch.validate()?;
        let mut convs = Vec::new();
        let mut channels = arch.input_channels;
        for c in &arch.convs {
            convs.push(Conv2d::zeros(channels, c.filters, c.kernel, c.stride));
            channels = c.filters;
        }
        let flat = arch.flat_features()?;
        Ok(Self {
            fc: Linear::zeros(flat, arch.hidden),
            head_v: Linear::zeros(arch.hidden, 1),
            head_a: Linear::zeros(arch.hidden, arch.actions),
            arch,
            convs,
        })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn actions(&self) -> usize {
        self.arch.actions
    }

    pub fn tensor_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for i in 0..self.convs.len() {
            names.push(format!("conv{}.weight", i + 1));
            names.push(format!("conv{}.bias", i + 1));
        }
        for layer in ["fc", "head_v", "head_a"] {
            names.push(format!("{layer}.weight"));
            names.push(format!("{layer}.bias"));
        }
        names
    }

    pub fn tensors(&self) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = Vec::new();
        for c in &self.convs {
            out.push(&c.weight);
            out.push(&c.bias);
        }
        for l in [&self.fc, &self.head_v, &self.head_a] {
            out.push(&l.weight);
            out.push(&l.bias);
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Vec<T>> {
        let mut out: Vec<&mut Vec<T>> = Vec::new();
        for c in &mut self.convs {
            out.push(&mut c.weight);
            out.push(&mut c.bias);
        }
        for l in [&mut self.fc, &mut self.head_v, &mut self.head_a] {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// Copies every parameter from `other` (same architecture).
    pub fn copy_from(&mut self, other: &Self) {
        debug_assert_eq!(self.arch, other.arch);
        self.clone_from(other);
    }

    /// `inputs`: sample-major `[batch, C, H, W]`.
    pub fn forward(&self, inputs: &[T], batch: usize) -> Result<QOutput<T>, NeuralError> {
        self.forward_cached(inputs, batch).map(|(out, _)| out)
    }

    fn check_input(&self, inputs: &[T], batch: usize) -> Result<(), NeuralError> {
        if batch == 0 {
            return Err(NeuralError::EmptyBatch);
        }
        if inputs.len() != batch * self.arch.input_len() {
            return Err(NeuralError::ShapeMismatch {
                expected: vec![batch, self.arch.input_channels, self.arch.input_height, self.arch.input_width],
                found: vec![inputs.len()],
            });
        }
        Ok(())
    }

    fn forward_cached(&self, inputs: &[T], batch: usize) -> Result<(QOutput<T>, ForwardCache<T>), NeuralError> {
        self.check_input(inputs, batch)?;
        let (mut h, mut w) = (self.arch.input_height, self.arch.input_width);
        let mut x = swap_outer(inputs, batch, self.arch.input_channels, h * w);
        let mut cache = ForwardCache {
            conv_in_hw: Vec::new(),
            conv_out_hw: Vec::new(),
            cols: Vec::new(),
            conv_act: Vec::new(),
            flat: Vec::new(),
            hidden: Vec::new(),
        };
        let mut channels = self.arch.input_channels;
        for conv in &self.convs {
            let (mut y, cols, oh, ow) = conv.forward(&x, batch, h, w)?;
            relu_in_place(&mut y);
            cache.conv_in_hw.push((h, w));
            cache.conv_out_hw.push((oh, ow));
            cache.cols.push(cols);
            cache.conv_act.push(y.clone());
            x = y;
            h = oh;
            w = ow;
            channels = conv.out_channels;
        }
        let flat = if self.convs.is_empty() { inputs.to_vec() } else { swap_outer(&x, channels, batch, h * w) };
        let mut hidden = self.fc.forward(&flat, batch);
        relu_in_place(&mut hidden);
        let v = self.head_v.forward(&hidden, batch);
        let a = self.head_a.forward(&hidden, batch);
        let m = self.arch.actions;
        let mut q = Vec::with_capacity(batch * m);
        for i in 0..batch {
            let row = &a[i * m..(i + 1) * m];
            let mean = row.iter().copied().sum::<T>() / T::from_usize(m).unwrap();
            q.extend(row.iter().map(|&ai| v[i] + (ai - mean)));
        }
        cache.flat = flat;
        cache.hidden = hidden;
        Ok((QOutput { batch, actions: m, q, v, a }, cache))
    }

    /// Backpropagates `dq` (`[batch, actions]`) through the network.
    fn backward(&self, cache: &ForwardCache<T>, dq: &[T], batch: usize) -> Gradients<T> {
        let m = self.arch.actions;
        let inv_m = T::one() / T::from_usize(m).unwrap();
        let mut dv = vec![T::zero(); batch];
        let mut da = vec![T::zero(); batch * m];
        for i in 0..batch {
            let row = &dq[i * m..(i + 1) * m];
            let total: T = row.iter().copied().sum();
            dv[i] = total;
            for j in 0..m {
                da[i * m + j] = row[j] - total * inv_m;
            }
        }
        let (dwv, dbv, dh_v) = self.head_v.backward(&cache.hidden, &dv, batch, true);
        let (dwa, dba, dh_a) = self.head_a.backward(&cache.hidden, &da, batch, true);
        let mut dhidden = dh_v.unwrap_or_default();
        for (d, g) in dhidden.iter_mut().zip(dh_a.unwrap_or_default()) {
            *d += g;
        }
        relu_backward(&cache.hidden, &mut dhidden);
        let (dwf, dbf, dflat) = self.fc.backward(&cache.flat, &dhidden, batch, !self.convs.is_empty());

        let mut conv_grads: Vec<(Vec<T>, Vec<T>)> = Vec::with_capacity(self.convs.len());
        if let Some(dflat) = dflat {
            let last = self.convs.len() - 1;
            let (oh, ow) = cache.conv_out_hw[last];
            let mut dy = swap_outer(&dflat, batch, self.convs[last].out_channels, oh * ow);
            for li in (0..self.convs.len()).rev() {
                relu_backward(&cache.conv_act[li], &mut dy);
                let (h, w) = cache.conv_in_hw[li];
                let (oh, ow) = cache.conv_out_hw[li];
                let (dw, db, dx) = self.convs[li].backward(&cache.cols[li], &dy, batch, h, w, oh, ow, li > 0);
                conv_grads.push((dw, db));
                if let Some(dx) = dx {
                    dy = dx;
                }
            }
            conv_grads.reverse();
        }
        let mut tensors = Vec::with_capacity(2 * self.convs.len() + 6);
        for (dw, db) in conv_grads {
            tensors.push(dw);
            tensors.push(db);
        }
        tensors.extend([dwf, dbf, dwv, dbv, dwa, dba]);
        Gradients { tensors }
    }

    pub fn zero_gradients(&self) -> Gradients<T> {
        Gradients { tensors: self.tensors().iter().map(|t| vec![T::zero(); t.len()]).collect() }
    }
}

/// Mean squared TD error over the batch and its gradient w.r.t. every parameter.
pub fn backprop_loss<T: Scalar>(
    net: &DuelingQNetwork<T>,
    inputs: &[T],
    batch: usize,
    actions: &[usize],
    targets: &[T],
) -> Result<(T, Gradients<T>), NeuralError> {
    if batch == 0 {
        return Err(NeuralError::EmptyBatch);
    }
    if actions.len() != batch || targets.len() != batch {
        return Err(NeuralError::ShapeMismatch { expected: vec![batch], found: vec![actions.len(), targets.len()] });
    }
    if let Some(i) = targets.iter().position(|t| !t.is_finite()) {
        return Err(NeuralError::NonFiniteTarget(i));
    }
    let m = net.actions();
    if let Some(&action) = actions.iter().find(|&&a| a >= m) {
        return Err(NeuralError::ActionOutOfRange { action, actions: m });
    }
    let (out, cache) = net.forward_cached(inputs, batch)?;
    let n = T::from_usize(batch).unwrap();
    let two = T::one() + T::one();
    let mut loss = T::zero();
    let mut dq = vec![T::zero(); batch * m];
    for i in 0..batch {
        let diff = out.q[i * m + actions[i]] - targets[i];
        loss += diff * diff;
        dq[i * m + actions[i]] = two * diff / n;
    }
    Ok((loss / n, net.backward(&cache, &dq, batch)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_arch() -> Architecture {
        Architecture {
            input_channels: 2,
            input_height: 6,
            input_width: 6,
            convs: vec![ConvSpec { filters: 3, kernel: 3, stride: 1 }, ConvSpec { filters: 2, kernel: 2, stride: 2 }],
            hidden: 5,
            actions: 2,
        }
    }

    #[test]
    fn parity_shapes_and_count() {
        let arch = Architecture::parity();
        assert_eq!(arch.conv_output_sizes().unwrap(), vec![(11, 11), (4, 4), (2, 2)]);
        assert_eq!(arch.flat_features().unwrap(), 256);
        let net: DuelingQNetwork<f32> = DuelingQNetwork::zeros(arch.clone()).unwrap();
        assert_eq!(net.parameter_count(), arch.parameter_count().unwrap());
        assert_eq!(net.tensor_names().len(), net.tensors().len());
    }

    #[test]
    fn compact_fits_all_supported_resolutions() {
        for res in [16, 24, 32, 48] {
            Architecture::compact(9, res, [16, 32, 32], 128, 2).validate().unwrap();
        }
    }

    #[test]
    fn dueling_combination_examples() {
        let mut net: DuelingQNetwork<f64> = DuelingQNetwork::zeros(tiny_arch()).unwrap();
        let x = vec![0.0; tiny_arch().input_len()];
        net.head_v.bias[0] = 2.0;
        net.head_a.bias.copy_from_slice(&[1.0, 3.0]);
        assert_eq!(net.forward(&x, 1).unwrap().q, vec![1.0, 3.0]);
        net.head_v.bias[0] = 5.0;
        net.head_a.bias.copy_from_slice(&[-0.7, -0.7]);
        assert_eq!(net.forward(&x, 1).unwrap().q, vec![5.0, 5.0]);
    }

    #[test]
    fn zero_error_gives_zero_loss_and_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net: DuelingQNetwork<f64> = DuelingQNetwork::new(tiny_arch(), &mut rng).unwrap();
        let x: Vec<f64> = (0..2 * tiny_arch().input_len()).map(|_| rng.gen_range(0.0..1.0)).collect();
        let out = net.forward(&x, 2).unwrap();
        let actions = [1, 0];
        let targets = [out.q[1], out.q[2]];
        let (loss, grads) = backprop_loss(&net, &x, 2, &actions, &targets).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grads.is_zero());
    }

    #[test]
    fn duplicated_batch_keeps_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net: DuelingQNetwork<f64> = DuelingQNetwork::new(tiny_arch(), &mut rng).unwrap();
        let x: Vec<f64> = (0..2 * tiny_arch().input_len()).map(|_| rng.gen_range(0.0..1.0)).collect();
        let (l1, _) = backprop_loss(&net, &x, 2, &[0, 1], &[0.5, -1.0]).unwrap();
        let x2 = [x.clone(), x].concat();
        let (l2, _) = backprop_loss(&net, &x2, 4, &[0, 1, 0, 1], &[0.5, -1.0, 0.5, -1.0]).unwrap();
        assert!((l1 - l2).abs() < 1e-12);
    }

    #[test]
    fn non_finite_target_rejected() {
        let net: DuelingQNetwork<f32> = DuelingQNetwork::zeros(tiny_arch()).unwrap();
        let x = vec![0.0; tiny_arch().input_len()];
        assert!(matches!(backprop_loss(&net, &x, 1, &[0], &[f32::NAN]), Err(NeuralError::NonFiniteTarget(0))));
    }

    #[test]
    fn wrong_input_shape_rejected() {
        let net: DuelingQNetwork<f32> = DuelingQNetwork::zeros(tiny_arch()).unwrap();
        assert!(matches!(net.forward(&[0.0; 5], 1), Err(NeuralError::ShapeMismatch { .. })));
    }
}
