//! Parameterized building blocks shared by the encoder and the transfer
//! blocks, and the initialization policy that fills them.

use hidflow_tensor::{Real, Tensor, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::params::{Bound, ParamId, ParameterStore};
use crate::rng::{self, Stream};

/// How freshly built parameters are filled.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    /// Training start: random hidden weights, zeroed transfer outputs and
    /// low-frequency projection, residual-conv matrices within ±1e-3.
    Standard,
    /// As `Standard`, but every output projection and every residual-conv
    /// matrix is zero, so the whole model reduces to `z + lowfreq`.
    Identity,
    /// Every parameter random and non-trivial; used by the oracle suites.
    Randomized,
}

/// What a weight feeds, which decides how each [`Init`] fills it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Hidden,
    /// Output of a residual branch (attention / feed-forward projections).
    Residual,
    /// Projection whose zeroing makes the flow an identity map.
    Output,
}

pub struct Initializer<'a, T> {
    pub store: &'a mut ParameterStore<T>,
    pub mode: Init,
    rng: ChaCha8Rng,
}

/// Largest allowed |W| entry for the residual conv under `Standard`.
pub const RESIDUAL_INIT_BOUND: f64 = 1e-3;

impl<'a, T: Real> Initializer<'a, T> {
    pub fn new(store: &'a mut ParameterStore<T>, mode: Init, seed: u64) -> Self {
        Initializer {
            store,
            mode,
            rng: rng::stream(seed, Stream::Init, &[]),
        }
    }

    fn uniform(&mut self, shape: &[usize], bound: f64) -> Tensor<T> {
        let rng = &mut self.rng;
        Tensor::from_fn(shape, |_| {
            T::from_f64_lossy(rng.random_range(-bound..=bound))
        })
    }

    fn zeroed(&self, role: Role) -> bool {
        match (self.mode, role) {
            (_, Role::Hidden) | (Init::Randomized, _) => false,
            (Init::Standard, Role::Residual) => false,
            _ => true,
        }
    }

    /// Weight with fan-in scaled uniform entries, or zeros per role.
    pub fn weight(
        &mut self,
        name: &str,
        shape: &[usize],
        fan_in: usize,
        role: Role,
    ) -> Result<ParamId> {
        let value = if self.zeroed(role) {
            Tensor::zeros(shape)
        } else {
            self.uniform(shape, 1.0 / (fan_in.max(1) as f64).sqrt())
        };
        self.store.register(name, value)
    }

    pub fn bias(&mut self, name: &str, len: usize) -> Result<ParamId> {
        let value = match self.mode {
            Init::Randomized => self.uniform(&[len], 0.1),
            _ => Tensor::zeros(&[len]),
        };
        self.store.register(name, value)
    }

    /// Affine scale of a normalization layer (around 1).
    pub fn gain(&mut self, name: &str, len: usize) -> Result<ParamId> {
        let value = match self.mode {
            Init::Randomized => self.uniform(&[len], 0.1).map(|v| v + T::one()),
            _ => Tensor::ones(&[len]),
        };
        self.store.register(name, value)
    }

    /// Residual 1×1 conv matrix `W` (the layer applies `W + I`).
    pub fn residual_matrix(&mut self, name: &str, channels: usize) -> Result<ParamId> {
        let shape = [channels, channels];
        let value = match self.mode {
            Init::Standard => self.uniform(&shape, RESIDUAL_INIT_BOUND),
            Init::Identity => Tensor::zeros(&shape),
            Init::Randomized => self.uniform(&shape, 0.3 / (channels as f64).sqrt()),
        };
        self.store.register(name, value)
    }
}

#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real>(
        init: &mut Initializer<'_, T>,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        role: Role,
    ) -> Result<Self> {
        let weight = init.weight(
            &format!("{name}.weight"),
            &[cout, cin, kernel, kernel],
            cin * kernel * kernel,
            role,
        )?;
        let bias = init.bias(&format!("{name}.bias"), cout)?;
        Ok(Conv {
            weight,
            bias,
            stride,
            pad: kernel / 2,
        })
    }

    pub fn forward<'t, T: Real>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        Ok(x.conv2d(
            p.get(self.weight),
            Some(p.get(self.bias)),
            self.stride,
            self.pad,
        )?)
    }
}

/// Dense layer on `N×in` rows: `x·W + b`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new<T: Real>(
        init: &mut Initializer<'_, T>,
        name: &str,
        din: usize,
        dout: usize,
        role: Role,
    ) -> Result<Self> {
        let weight = init.weight(&format!("{name}.weight"), &[din, dout], din, role)?;
        let bias = init.bias(&format!("{name}.bias"), dout)?;
        Ok(Linear { weight, bias })
    }

    pub fn forward<'t, T: Real>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        Ok(x.matmul(p.get(self.weight))?
            .add_bias_last(p.get(self.bias))?)
    }
}

/// Learned per-feature affine applied after a normalization.
#[derive(Clone, Debug)]
pub struct Affine {
    pub gain: ParamId,
    pub shift: ParamId,
}

impl Affine {
    pub fn new<T: Real>(init: &mut Initializer<'_, T>, name: &str, len: usize) -> Result<Self> {
        Ok(Affine {
            gain: init.gain(&format!("{name}.gain"), len)?,
            shift: init.bias(&format!("{name}.shift"), len)?,
        })
    }

    /// Applies along the leading (channel) axis of a `C×…` tensor.
    pub fn forward_channels<'t, T: Real>(
        &self,
        p: &Bound<'t, T>,
        x: Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        Ok(x.scale_channels(p.get(self.gain))?
            .add_channel_bias(p.get(self.shift))?)
    }

    /// Applies along the trailing axis of an `N×C` tensor.
    pub fn forward_last<'t, T: Real>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        Ok(x.scale_last(p.get(self.gain))?
            .add_bias_last(p.get(self.shift))?)
    }
}
