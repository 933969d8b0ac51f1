use candle_core::{Module, ModuleT, Tensor, D};
use candle_nn::{batch_norm, conv2d, conv2d_no_bias, linear, BatchNorm, Conv2d, Conv2dConfig, Linear, VarBuilder};
use serde::{Deserialize, Serialize};

use super::IMAGE_FEATURES;
use crate::error::{Error, Result};

/// Which visual encoder to build, as written in model settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ImageBackbone {
    /// Pretrained 50-layer residual network read from `<weights_dir>/<checkpoint>/`.
    Pretrained { checkpoint: String },
    /// The same 50-layer network, randomly initialised.
    ResNet50,
    /// Three strided convolutions and a projection to 2048 features.
    Compact { channels: [usize; 3], downsample: usize },
}

impl Default for ImageBackbone {
    fn default() -> Self {
        Self::Pretrained {
            checkpoint: "microsoft/resnet-50".into(),
        }
    }
}

/// Fully resolved visual architecture; stored in checkpoint sidecars.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ImageArchitecture {
    ResNet50,
    Compact { channels: [usize; 3], downsample: usize },
}

impl ImageBackbone {
    pub fn architecture(&self) -> ImageArchitecture {
        match self {
            Self::Pretrained { .. } | Self::ResNet50 => ImageArchitecture::ResNet50,
            Self::Compact { channels, downsample } => ImageArchitecture::Compact {
                channels: *channels,
                downsample: *downsample,
            },
        }
    }
}

const BN_EPS: f64 = 1e-5;
const DEPTHS: [usize; 4] = [3, 4, 6, 3];
const WIDTHS: [usize; 4] = [256, 512, 1024, 2048];
const EXPANSION: usize = 4;

#[derive(Debug, Clone)]
struct ConvBn {
    conv: Conv2d,
    bn: BatchNorm,
}

impl ConvBn {
    fn new(cin: usize, cout: usize, k: usize, stride: usize, vb: VarBuilder) -> Result<Self> {
        let cfg = Conv2dConfig {
            padding: k / 2,
            stride,
            ..Default::default()
        };
        Ok(Self {
            conv: conv2d_no_bias(cin, cout, k, cfg, vb.pp("convolution"))?,
            bn: batch_norm(cout, BN_EPS, vb.pp("normalization"))?,
        })
    }

    // Normalisation statistics stay frozen at their stored values.
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.bn.forward_t(&self.conv.forward(x)?, false)?)
    }
}

#[derive(Debug, Clone)]
struct Bottleneck {
    shortcut: Option<ConvBn>,
    reduce: ConvBn,
    spatial: ConvBn,
    expand: ConvBn,
}

impl Bottleneck {
    fn new(cin: usize, cout: usize, stride: usize, vb: VarBuilder) -> Result<Self> {
        let mid = cout / EXPANSION;
        let shortcut = if cin != cout || stride != 1 {
            Some(ConvBn::new(cin, cout, 1, stride, vb.pp("shortcut"))?)
        } else {
            None
        };
        let layer = vb.pp("layer");
        Ok(Self {
            shortcut,
            reduce: ConvBn::new(cin, mid, 1, 1, layer.pp("0"))?,
            spatial: ConvBn::new(mid, mid, 3, stride, layer.pp("1"))?,
            expand: ConvBn::new(mid, cout, 1, 1, layer.pp("2"))?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let residual = match &self.shortcut {
            Some(s) => s.forward(x)?,
            None => x.clone(),
        };
        let h = self.reduce.forward(x)?.relu()?;
        let h = self.spatial.forward(&h)?.relu()?;
        let h = self.expand.forward(&h)?;
        Ok((h + residual)?.relu()?)
    }
}

#[derive(Debug, Clone)]
struct ResNet50 {
    stem: ConvBn,
    blocks: Vec<Bottleneck>,
}

impl ResNet50 {
    fn new(vb: VarBuilder) -> Result<Self> {
        let stem_cfg = Conv2dConfig {
            padding: 3,
            stride: 2,
            ..Default::default()
        };
        let emb = vb.pp("embedder.embedder");
        let stem = ConvBn {
            conv: conv2d_no_bias(3, 64, 7, stem_cfg, emb.pp("convolution"))?,
            bn: batch_norm(64, BN_EPS, emb.pp("normalization"))?,
        };
        let mut blocks = Vec::new();
        let mut cin = 64;
        for (s, (&depth, &width)) in DEPTHS.iter().zip(WIDTHS.iter()).enumerate() {
            let stage = vb.pp(format!("encoder.stages.{s}.layers"));
            for i in 0..depth {
                let stride = if s > 0 && i == 0 { 2 } else { 1 };
                blocks.push(Bottleneck::new(cin, width, stride, stage.pp(i.to_string()))?);
                cin = width;
            }
        }
        Ok(Self { stem, blocks })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h = self.stem.forward(x)?.relu()?;
        // 3x3 max pool, stride 2, padding 1; zero padding is safe after ReLU.
        let h = h.pad_with_zeros(2, 1, 1)?.pad_with_zeros(3, 1, 1)?;
        let mut h = h.max_pool2d_with_stride(3, 2)?;
        for block in &self.blocks {
            h = block.forward(&h)?;
        }
        Ok(h.mean((2, 3))?)
    }
}

#[derive(Debug, Clone)]
struct Compact {
    downsample: usize,
    convs: Vec<Conv2d>,
    projection: Linear,
}

impl Compact {
    fn new(channels: [usize; 3], downsample: usize, vb: VarBuilder) -> Result<Self> {
        let cfg = Conv2dConfig {
            padding: 1,
            stride: 2,
            ..Default::default()
        };
        let mut convs = Vec::new();
        let mut cin = 3;
        for (i, &c) in channels.iter().enumerate() {
            convs.push(conv2d(cin, c, 3, cfg, vb.pp(format!("conv{i}")))?);
            cin = c;
        }
        Ok(Self {
            downsample: downsample.max(1),
            convs,
            projection: linear(cin, IMAGE_FEATURES, vb.pp("projection"))?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = if self.downsample > 1 {
            x.avg_pool2d(self.downsample)?
        } else {
            x.clone()
        };
        for conv in &self.convs {
            h = conv.forward(&h)?.relu()?;
        }
        let pooled = h.mean((2, 3))?;
        Ok(self.projection.forward(&pooled)?.relu()?)
    }
}

/// Maps `(batch, 3, side, side)` images to one 2048-wide vector each.
#[derive(Debug, Clone)]
pub struct ImageEncoder {
    inner: ImageInner,
}

#[derive(Debug, Clone)]
enum ImageInner {
    ResNet(Box<ResNet50>),
    Compact(Compact),
}

impl ImageEncoder {
    pub fn new(arch: &ImageArchitecture, vb: VarBuilder) -> Result<Self> {
        let inner = match arch {
            ImageArchitecture::ResNet50 => ImageInner::ResNet(Box::new(ResNet50::new(vb)?)),
            ImageArchitecture::Compact { channels, downsample } => {
                if channels.contains(&0) {
                    return Err(Error::Config("compact image encoder channels must be positive".into()));
                }
                ImageInner::Compact(Compact::new(*channels, *downsample, vb)?)
            }
        };
        Ok(Self { inner })
    }

    pub fn forward(&self, images: &Tensor) -> Result<Tensor> {
        let (_, c, _, _) = images.dims4()?;
        if c != 3 {
            return Err(Error::Dimension {
                context: "image channels",
                expected: 3,
                actual: c,
            });
        }
        let out = match &self.inner {
            ImageInner::ResNet(r) => r.forward(images)?,
            ImageInner::Compact(c) => c.forward(images)?,
        };
        debug_assert_eq!(out.dim(D::Minus1).ok(), Some(IMAGE_FEATURES));
        Ok(out)
    }
}
