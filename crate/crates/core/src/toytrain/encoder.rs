//! Two-layer feed-forward encoder with hand-written backpropagation.

use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{rng_from, stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative expressed through the pre-activation and the activation.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => (z > 0.0) as u8 as f64,
        }
    }
}

/// Shape and initialization of an encoder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderArch {
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
    pub activation: Activation,
    /// Project outputs onto the unit sphere.
    pub normalize: bool,
    /// Standard deviation of first-layer weights.
    pub input_scale: f64,
    /// First-layer biases are uniform in `[-bias_range, bias_range]`.
    pub bias_range: f64,
}

impl Default for EncoderArch {
    fn default() -> Self {
        Self {
            input: 2,
            hidden: 64,
            output: 2,
            activation: Activation::Tanh,
            normalize: true,
            input_scale: 4.0,
            bias_range: 24.0,
        }
    }
}

impl EncoderArch {
    /// Unit normalization of a 1-D output collapses it to a sign, so it is
    /// off by default there.
    pub fn with_output(mut self, output: usize) -> Self {
        self.output = output;
        if output == 1 {
            self.normalize = false;
        }
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyEncoder {
    pub arch: EncoderArch,
    /// `hidden x input`, row-major.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// `output x hidden`, row-major.
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub x: Vec<f64>,
    pub z1: Vec<f64>,
    pub a1: Vec<f64>,
    pub z2: Vec<f64>,
    pub norm: f64,
    pub y: Vec<f64>,
}

impl ToyEncoder {
    pub fn zeros(arch: EncoderArch) -> Self {
        Self {
            w1: vec![0.0; arch.hidden * arch.input],
            b1: vec![0.0; arch.hidden],
            w2: vec![0.0; arch.output * arch.hidden],
            b2: vec![0.0; arch.output],
            arch,
        }
    }

    pub fn init(arch: EncoderArch, seed: u64) -> Self {
        let mut rng = rng_from(seed, &[stream::INIT]);
        let mut enc = Self::zeros(arch);
        let normal = StandardNormal;
        for w in &mut enc.w1 {
            let g: f64 = normal.sample(&mut rng);
            *w = arch.input_scale * g;
        }
        if arch.bias_range > 0.0 {
            let bias = Uniform::new_inclusive(-arch.bias_range, arch.bias_range).unwrap();
            for b in &mut enc.b1 {
                *b = bias.sample(&mut rng);
            }
        }
        let scale = 1.0 / (arch.hidden as f64).sqrt();
        for w in &mut enc.w2 {
            let g: f64 = normal.sample(&mut rng);
            *w = scale * g;
        }
        enc
    }

    pub fn n_params(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    /// Flat parameter vector `[w1, b1, w2, b2]`.
    pub fn params(&self) -> Vec<f64> {
        [&self.w1[..], &self.b1, &self.w2, &self.b2].concat()
    }

    pub fn set_params(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.n_params());
        let mut rest = p;
        for dst in [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2] {
            let (head, tail) = rest.split_at(dst.len());
            dst.copy_from_slice(head);
            rest = tail;
        }
    }

    pub fn forward_cached(&self, x: &[f64]) -> Result<ForwardCache> {
        let a = &self.arch;
        debug_assert_eq!(x.len(), a.input);
        let mut z1 = self.b1.clone();
        for (h, z) in z1.iter_mut().enumerate() {
            let row = &self.w1[h * a.input..(h + 1) * a.input];
            *z += row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
        let a1: Vec<f64> = z1.iter().map(|&z| a.activation.apply(z)).collect();
        if a1.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteForward { layer: 1 });
        }
        let mut z2 = self.b2.clone();
        for (o, z) in z2.iter_mut().enumerate() {
            let row = &self.w2[o * a.hidden..(o + 1) * a.hidden];
            *z += row.iter().zip(&a1).map(|(w, v)| w * v).sum::<f64>();
        }
        if z2.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteForward { layer: 2 });
        }
        let (norm, y) = if a.normalize {
            let n = z2.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n == 0.0 {
                return Err(Error::NonFiniteForward { layer: 3 });
            }
            (n, z2.iter().map(|v| v / n).collect())
        } else {
            (1.0, z2.clone())
        };
        Ok(ForwardCache {
            x: x.to_vec(),
            z1,
            a1,
            z2,
            norm,
            y,
        })
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_cached(x)?.y)
    }

    /// Accumulate `d loss / d params` into `grad` given `d loss / d output`.
    pub fn backward(&self, cache: &ForwardCache, dy: &[f64], grad: &mut [f64]) {
        let a = &self.arch;
        let (n_w1, n_b1, n_w2) = (self.w1.len(), self.b1.len(), self.w2.len());
        let dz2: Vec<f64> = if a.normalize {
            // y = z / |z|  =>  dz = (I - y y^T) dy / |z|
            let proj: f64 = cache.y.iter().zip(dy).map(|(y, g)| y * g).sum();
            cache
                .y
                .iter()
                .zip(dy)
                .map(|(y, g)| (g - proj * y) / cache.norm)
                .collect()
        } else {
            dy.to_vec()
        };
        let (g_w1, rest) = grad.split_at_mut(n_w1);
        let (g_b1, rest) = rest.split_at_mut(n_b1);
        let (g_w2, g_b2) = rest.split_at_mut(n_w2);
        let mut da1 = vec![0.0; a.hidden];
        for o in 0..a.output {
            g_b2[o] += dz2[o];
            for h in 0..a.hidden {
                g_w2[o * a.hidden + h] += dz2[o] * cache.a1[h];
                da1[h] += dz2[o] * self.w2[o * a.hidden + h];
            }
        }
        for h in 0..a.hidden {
            let dz1 = da1[h] * a.activation.derivative(cache.z1[h], cache.a1[h]);
            g_b1[h] += dz1;
            for i in 0..a.input {
                g_w1[h * a.input + i] += dz1 * cache.x[i];
            }
        }
    }

    /// Text header (layer widths and flags) followed by the little-endian
    /// f64 parameter payload `[w1, b1, w2, b2]`.
    pub fn to_checkpoint(&self) -> Vec<u8> {
        let header = toml::to_string(&self.arch).expect("arch serializes");
        let mut out = Vec::new();
        out.extend_from_slice(b"SSLMENC1\n");
        out.extend_from_slice(header.as_bytes());
        out.extend_from_slice(b"---\n");
        for p in self.params() {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn from_checkpoint(bytes: &[u8]) -> Result<Self> {
        let body = bytes
            .strip_prefix(b"SSLMENC1\n")
            .ok_or(Error::MalformedHeader {
                field: "checkpoint magic",
                detail: "expected SSLMENC1".into(),
            })?;
        let sep = body
            .windows(4)
            .position(|w| w == b"---\n")
            .ok_or(Error::MalformedHeader {
                field: "checkpoint header",
                detail: "missing --- separator".into(),
            })?;
        let header = std::str::from_utf8(&body[..sep]).map_err(|e| Error::parse("checkpoint header", e))?;
        let arch: EncoderArch = toml::from_str(header).map_err(|e| Error::parse("checkpoint header", e))?;
        let payload = &body[sep + 4..];
        let mut enc = ToyEncoder::zeros(arch);
        let expected = enc.n_params() * 8;
        if payload.len() != expected {
            return Err(Error::Truncated {
                expected,
                found: payload.len(),
            });
        }
        let params: Vec<f64> = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::invalid("checkpoint holds non-finite parameters"));
        }
        enc.set_params(&params);
        Ok(enc)
    }
}
