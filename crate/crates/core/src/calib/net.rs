use serde::{Deserialize, Serialize};

use super::NUM_BINS;
use crate::error::{Error, Result};
use crate::optics::SrFactor;
use crate::seeds;
use crate::tensornet::{
    channel_div, channel_div_backward, concat_channels, pixel_shuffle, pixel_unshuffle, split_channels, Conv2d,
    ConvBnLrelu, Layer, LeakyRelu, Linear, Mode, Param, Softplus, Tensor4,
};

/// Lower bound added to the softplus radius latents.
pub const LATENT_FLOOR: f64 = 1e-3;

/// How the HR mask features are brought down to the LR grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Pixel unshuffle followed by a 3x3 channel-reduce block.
    #[default]
    Unshuffle,
    /// One s×s convolution with stride s.
    Strided,
    /// No mask branch at all.
    WithoutCoding,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibNetConfig {
    pub fpa_layers: usize,
    pub slm_layers: usize,
    pub fusion_layers: usize,
    pub channels: usize,
    pub slm_channels: usize,
    pub radius_hidden: usize,
    pub variant: Variant,
}

impl Default for CalibNetConfig {
    fn default() -> Self {
        Self {
            fpa_layers: 2,
            slm_layers: 1,
            fusion_layers: 6,
            channels: 32,
            slm_channels: 4,
            radius_hidden: 32,
            variant: Variant::Unshuffle,
        }
    }
}

impl CalibNetConfig {
    pub fn validate(&self, sr: SrFactor) -> Result<()> {
        if self.fpa_layers == 0 || self.fusion_layers == 0 || self.channels == 0 || self.radius_hidden == 0 {
            return Err(Error::invalid("calibration network layer and channel counts must be >= 1"));
        }
        if self.variant != Variant::WithoutCoding && (self.slm_layers == 0 || self.slm_channels == 0) {
            return Err(Error::invalid("mask branch needs at least one layer and channel"));
        }
        if self.variant == Variant::Strided && sr.s1 != sr.s2 {
            return Err(Error::invalid("strided variant needs a square SR factor"));
        }
        Ok(())
    }

    /// Channels entering the fusion stack (and length of the radius latent).
    pub fn fused_channels(&self) -> usize {
        match self.variant {
            Variant::WithoutCoding => self.channels,
            _ => 2 * self.channels,
        }
    }
}

/// One batch of network inputs.
#[derive(Debug, Clone)]
pub struct CalibInputs {
    /// B×1×N1×N2 shifted aperture masks.
    pub masks: Tensor4,
    /// B×1×M1×M2 blurred measurements.
    pub measurements: Tensor4,
    /// B×9×1×1 one-hot radius bins.
    pub bins: Tensor4,
}

#[derive(Debug, Clone)]
struct Cache {
    concat: Tensor4,
    latent: Tensor4,
}

/// Measurement-correction network: radius MLP, mask and measurement
/// encoders, latent scaling, fusion stack and residual output.
#[derive(Debug, Clone)]
pub struct CalibNet {
    config: CalibNetConfig,
    sr: SrFactor,
    radius_in: Linear,
    radius_act: LeakyRelu,
    radius_out: Linear,
    radius_softplus: Softplus,
    slm: Vec<ConvBnLrelu>,
    reduce: Option<ConvBnLrelu>,
    fpa: Vec<ConvBnLrelu>,
    fusion: Vec<ConvBnLrelu>,
    final_conv: Conv2d,
    cache: Option<Cache>,
}

impl CalibNet {
    pub fn new(config: CalibNetConfig, sr: SrFactor, seed: u64) -> Result<Self> {
        config.validate(sr)?;
        let mut stream = 0u64;
        let mut next = || {
            stream += 1;
            seeds::derive(seed, stream)
        };
        let (nc, nsc) = (config.channels, config.slm_channels);
        let fused = config.fused_channels();

        let radius_in = Linear::new(NUM_BINS, config.radius_hidden, next());
        let mut radius_out = Linear::new(config.radius_hidden, fused, next());
        // softplus(b) + floor = 1, so untrained latents barely rescale
        let b0 = (1.0 - LATENT_FLOOR).exp_m1().ln();
        radius_out.bias.value.iter_mut().for_each(|b| *b = b0);

        let (slm, reduce) = match config.variant {
            Variant::WithoutCoding => (Vec::new(), None),
            variant => {
                let slm: Vec<_> = (0..config.slm_layers)
                    .map(|l| ConvBnLrelu::same3x3(if l == 0 { 1 } else { nsc }, nsc, next()))
                    .collect();
                let reduce = if variant == Variant::Unshuffle {
                    ConvBnLrelu::same3x3(nsc * sr.total(), nc, next())
                } else {
                    ConvBnLrelu::new(Conv2d::new(nsc, nc, (sr.s1, sr.s2), sr.s1, 0, next()))
                };
                (slm, Some(reduce))
            }
        };
        let fpa = (0..config.fpa_layers)
            .map(|l| ConvBnLrelu::same3x3(if l == 0 { 1 } else { nc }, nc, next()))
            .collect();
        let fusion = (0..config.fusion_layers)
            .map(|l| ConvBnLrelu::same3x3(if l == 0 { fused } else { nc }, nc, next()))
            .collect();
        let mut final_conv = Conv2d::same3x3(nc, 1, next());
        final_conv.weight.value.iter_mut().for_each(|w| *w = 0.0);
        final_conv.bias.value.iter_mut().for_each(|b| *b = 0.0);

        Ok(Self {
            config,
            sr,
            radius_in,
            radius_act: LeakyRelu::default(),
            radius_out,
            radius_softplus: Softplus::default(),
            slm,
            reduce,
            fpa,
            fusion,
            final_conv,
            cache: None,
        })
    }

    pub fn config(&self) -> &CalibNetConfig {
        &self.config
    }

    pub fn sr(&self) -> SrFactor {
        self.sr
    }

    /// The last convolution; zeroing it makes the network the identity.
    pub fn final_conv_mut(&mut self) -> &mut Conv2d {
        &mut self.final_conv
    }

    fn check(&self, inp: &CalibInputs) -> Result<()> {
        let [b, c, h, w] = inp.measurements.dims();
        if c != 1 {
            return Err(Error::shape(format!("measurements need 1 channel, got {c}")));
        }
        if inp.bins.dims() != [b, NUM_BINS, 1, 1] {
            return Err(Error::shape(format!("bins must be {b}x{NUM_BINS}x1x1, got {:?}", inp.bins.dims())));
        }
        let want = [b, 1, h * self.sr.s1, w * self.sr.s2];
        if inp.masks.dims() != want {
            return Err(Error::shape(format!("masks must be {want:?}, got {:?}", inp.masks.dims())));
        }
        Ok(())
    }

    fn run(&mut self, inp: &CalibInputs, mode: Option<Mode>) -> Result<Tensor4> {
        self.check(inp)?;
        let sr = self.sr;
        let (s1, s2) = (sr.s1, sr.s2);
        macro_rules! step {
            ($layer:expr, $x:expr) => {
                match mode {
                    Some(m) => $layer.forward($x, m)?,
                    None => $layer.infer($x)?,
                }
            };
        }

        let h = step!(self.radius_in, &inp.bins);
        let h = step!(self.radius_act, &h);
        let h = step!(self.radius_out, &h);
        let latent = step!(self.radius_softplus, &h).map(|v| v + LATENT_FLOOR);

        let mut y = inp.measurements.clone();
        for layer in &mut self.fpa {
            y = step!(layer, &y);
        }
        let concat = match self.reduce.as_mut() {
            None => y,
            Some(reduce) => {
                let mut a = inp.masks.clone();
                for layer in &mut self.slm {
                    a = step!(layer, &a);
                }
                let a = match self.config.variant {
                    Variant::Unshuffle => pixel_unshuffle(&a, s1, s2)?,
                    _ => a,
                };
                let lam = step!(reduce, &a);
                concat_channels(&y, &lam)?
            }
        };
        let mut f = channel_div(&concat, &latent)?;
        for layer in &mut self.fusion {
            f = step!(layer, &f);
        }
        let out = step!(self.final_conv, &f).add(&inp.measurements)?;
        if mode.is_some() {
            self.cache = Some(Cache { concat, latent });
        }
        Ok(out)
    }

    /// Recording forward pass.
    pub fn forward(&mut self, inp: &CalibInputs, mode: Mode) -> Result<Tensor4> {
        self.run(inp, Some(mode))
    }

    /// Evaluation-mode forward pass.
    pub fn infer(&self, inp: &CalibInputs) -> Result<Tensor4> {
        let mut scratch = self.clone();
        scratch.cache = None;
        scratch.run(inp, None)
    }

    /// Accumulates gradients of all parameters for upstream `grad_out`.
    pub fn backward(&mut self, grad_out: &Tensor4) -> Result<()> {
        let cache =
            self.cache.take().ok_or_else(|| Error::invalid("backward called without a recorded forward pass"))?;
        let mut g = self.final_conv.backward(grad_out)?;
        for layer in self.fusion.iter_mut().rev() {
            g = layer.backward(&g)?;
        }
        let (g_concat, g_latent) = channel_div_backward(&cache.concat, &cache.latent, &g)?;

        let g_y = match self.reduce.as_mut() {
            None => g_concat,
            Some(reduce) => {
                let (g_y, g_lam) = split_channels(&g_concat, self.config.channels)?;
                let mut g_a = reduce.backward(&g_lam)?;
                if self.config.variant == Variant::Unshuffle {
                    g_a = pixel_shuffle(&g_a, self.sr.s1, self.sr.s2)?;
                }
                for layer in self.slm.iter_mut().rev() {
                    g_a = layer.backward(&g_a)?;
                }
                g_y
            }
        };
        let mut g_y = g_y;
        for layer in self.fpa.iter_mut().rev() {
            g_y = layer.backward(&g_y)?;
        }

        let g = self.radius_softplus.backward(&g_latent)?;
        let g = self.radius_out.backward(&g)?;
        let g = self.radius_act.backward(&g)?;
        self.radius_in.backward(&g)?;
        Ok(())
    }

    fn layers_mut(&mut self) -> Vec<(String, &mut dyn Layer)> {
        let mut out: Vec<(String, &mut dyn Layer)> = vec![
            ("radius.0".into(), &mut self.radius_in),
            ("radius.1".into(), &mut self.radius_out),
        ];
        out.extend(self.slm.iter_mut().enumerate().map(|(i, l)| (format!("slm.{i}"), l as &mut dyn Layer)));
        if let Some(r) = self.reduce.as_mut() {
            out.push(("reduce".into(), r));
        }
        out.extend(self.fpa.iter_mut().enumerate().map(|(i, l)| (format!("fpa.{i}"), l as &mut dyn Layer)));
        out.extend(self.fusion.iter_mut().enumerate().map(|(i, l)| (format!("fusion.{i}"), l as &mut dyn Layer)));
        out.push(("final".into(), &mut self.final_conv));
        out
    }

    /// Trainable parameters in a fixed order.
    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers_mut().into_iter().flat_map(|(_, l)| l.params_mut()).collect()
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Param::zero_grad);
    }

    /// Named checkpoint tensors, parameters and running statistics.
    pub fn state_mut(&mut self) -> Vec<(String, &mut Param)> {
        self.layers_mut()
            .into_iter()
            .flat_map(|(prefix, l)| l.state_mut().into_iter().map(move |(n, p)| (format!("{prefix}.{n}"), p)))
            .collect()
    }

    pub fn num_params(&mut self) -> usize {
        self.params_mut().iter().map(|p| p.len()).sum()
    }
}
