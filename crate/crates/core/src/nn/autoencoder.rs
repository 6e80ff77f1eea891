//! Convolutional autoencoder with a 34-layer residual feature extractor.
//!
//! The encoder follows the residual classifier topology (7x7 stem, max pool,
//! stages of 3, 4, 6 and 3 basic blocks) but keeps every stage at stride 1, so
//! the bottleneck sits at a quarter of the input side: 64 for 256x256 inputs.
//! Two transposed convolutions bring it back to full resolution.
//!
//! Every operation is enumerated as one layer so activations and the governing
//! convolution kernel can be captured by id.

use candle_core::Tensor;

use super::layers::{max_pool_3x3_s2, BatchNorm2d, Conv2d, ConvTranspose2d};
use super::params::ParamPath;
use super::Translator;
use crate::error::{Error, Result};

const STAGE_BLOCKS: [usize; 4] = [3, 4, 6, 3];

#[derive(Debug, Clone)]
enum Op {
    /// `opens_block` saves the incoming activation as the residual.
    Conv { conv: Conv2d, opens_block: bool },
    ConvT(ConvTranspose2d),
    Bn(BatchNorm2d),
    Relu,
    MaxPool,
    ShortcutConv(Conv2d),
    ShortcutBn(BatchNorm2d),
    AddResidual,
    Tanh,
}

#[derive(Debug, Clone)]
struct Layer {
    name: String,
    op: Op,
}

/// Activation and kernel captured at one enumerated layer.
#[derive(Debug, Clone)]
pub struct CapturedLayer {
    pub id: usize,
    pub name: String,
    /// `(C, H, W)` activation of the first batch element.
    pub activation: Tensor,
    /// Kernel of the most recent convolution at or before this layer.
    pub weights: Tensor,
}

#[derive(Debug, Clone)]
pub struct Autoencoder {
    input_size: usize,
    layers: Vec<Layer>,
    bottleneck_layer: usize,
}

struct Builder<'p, 'a> {
    p: &'p mut ParamPath<'a>,
    layers: Vec<Layer>,
}

impl Builder<'_, '_> {
    fn push(&mut self, name: impl Into<String>, op: Op) {
        self.layers.push(Layer {
            name: name.into(),
            op,
        });
    }

    fn conv(&mut self, name: &str, in_c: usize, out_c: usize, k: usize, stride: usize, pad: usize, opens_block: bool) -> Result<()> {
        let conv = Conv2d::new(&mut self.p.pp(name), in_c, out_c, k, stride, pad)?;
        self.push(name, Op::Conv { conv, opens_block });
        Ok(())
    }

    fn bn(&mut self, name: &str, c: usize) -> Result<()> {
        let bn = BatchNorm2d::new(&mut self.p.pp(name), c)?;
        self.push(name, Op::Bn(bn));
        Ok(())
    }
}

impl Autoencoder {
    pub fn new(p: &mut ParamPath<'_>, width: usize, input_size: usize) -> Result<Self> {
        if input_size % 4 != 0 {
            return Err(Error::InvalidInput(format!(
                "autoencoder input size {input_size} is not divisible by 4"
            )));
        }
        let mut b = Builder {
            p,
            layers: Vec::new(),
        };
        b.conv("stem.conv", 3, width, 7, 2, 3, false)?;
        b.bn("stem.bn", width)?;
        b.push("stem.relu", Op::Relu);
        b.push("stem.maxpool", Op::MaxPool);

        let mut in_c = width;
        for (stage, &blocks) in STAGE_BLOCKS.iter().enumerate() {
            let out_c = width << stage;
            for block in 0..blocks {
                let n = format!("stage{}.block{block}", stage + 1);
                b.conv(&format!("{n}.conv1"), in_c, out_c, 3, 1, 1, true)?;
                b.bn(&format!("{n}.bn1"), out_c)?;
                b.push(format!("{n}.relu1"), Op::Relu);
                b.conv(&format!("{n}.conv2"), out_c, out_c, 3, 1, 1, false)?;
                b.bn(&format!("{n}.bn2"), out_c)?;
                if in_c != out_c {
                    let sc = Conv2d::new(&mut b.p.pp(format!("{n}.shortcut.conv")), in_c, out_c, 1, 1, 0)?;
                    b.push(format!("{n}.shortcut.conv"), Op::ShortcutConv(sc));
                    let sbn = BatchNorm2d::new(&mut b.p.pp(format!("{n}.shortcut.bn")), out_c)?;
                    b.push(format!("{n}.shortcut.bn"), Op::ShortcutBn(sbn));
                }
                b.push(format!("{n}.add"), Op::AddResidual);
                b.push(format!("{n}.relu2"), Op::Relu);
                in_c = out_c;
            }
        }
        let bottleneck_layer = b.layers.len() - 1;

        let up1 = ConvTranspose2d::new(&mut b.p.pp("decoder.up1"), in_c, 2 * width, 4, 2, 1, 0)?;
        b.push("decoder.up1", Op::ConvT(up1));
        b.bn("decoder.bn1", 2 * width)?;
        b.push("decoder.relu1", Op::Relu);
        let up2 = ConvTranspose2d::new(&mut b.p.pp("decoder.up2"), 2 * width, width, 4, 2, 1, 0)?;
        b.push("decoder.up2", Op::ConvT(up2));
        b.bn("decoder.bn2", width)?;
        b.push("decoder.relu2", Op::Relu);
        b.conv("decoder.out", width, 3, 3, 1, 1, false)?;
        b.push("decoder.tanh", Op::Tanh);

        Ok(Self {
            input_size,
            layers: b.layers,
            bottleneck_layer,
        })
    }

    pub fn layer_names(&self) -> Vec<&str> {
        self.layers.iter().map(|l| l.name.as_str()).collect()
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    /// Id of the last encoder layer.
    pub fn bottleneck_layer(&self) -> usize {
        self.bottleneck_layer
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let (_, c, h, w) = x.dims4()?;
        if c != 3 || h != self.input_size || w != self.input_size {
            return Err(Error::Shape(format!(
                "autoencoder expects (3, {s}, {s}) inputs, got ({c}, {h}, {w})",
                s = self.input_size
            )));
        }
        Ok(())
    }

    /// Runs the layers, handing each `(id, activation, governing kernel)` to `visit`.
    fn run(&self, x: &Tensor, train: bool, mut visit: impl FnMut(usize, &Tensor, &Tensor)) -> Result<Tensor> {
        self.check_input(x)?;
        let mut h = x.clone();
        let mut residual: Option<Tensor> = None;
        let mut kernel: Option<Tensor> = None;
        for (id, layer) in self.layers.iter().enumerate() {
            match &layer.op {
                Op::Conv { conv, opens_block } => {
                    if *opens_block {
                        residual = Some(h.clone());
                    }
                    kernel = Some(conv.weight().clone());
                    h = conv.forward(&h)?;
                }
                Op::ConvT(c) => {
                    kernel = Some(c.weight().clone());
                    h = c.forward(&h)?;
                }
                Op::Bn(bn) => h = bn.forward(&h, train)?,
                Op::Relu => h = h.relu()?,
                Op::MaxPool => h = max_pool_3x3_s2(&h)?,
                Op::ShortcutConv(c) => {
                    kernel = Some(c.weight().clone());
                    let r = residual.take().expect("shortcut inside a block");
                    residual = Some(c.forward(&r)?);
                }
                Op::ShortcutBn(bn) => {
                    let r = residual.take().expect("shortcut inside a block");
                    residual = Some(bn.forward(&r, train)?);
                }
                Op::AddResidual => {
                    let r = residual.take().expect("residual saved at block start");
                    h = (h + r)?;
                }
                Op::Tanh => h = h.tanh()?,
            }
            let activation = match &layer.op {
                Op::ShortcutConv(_) | Op::ShortcutBn(_) => residual.as_ref().expect("shortcut output"),
                _ => &h,
            };
            visit(id, activation, kernel.as_ref().expect("first layer is a convolution"));
        }
        Ok(h)
    }

    /// Reconstruction; `train` selects batch statistics over running statistics.
    pub fn forward_t(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        self.run(x, train, |_, _, _| {})
    }

    /// Reconstruction plus the bottleneck activation.
    pub fn forward_with_bottleneck(&self, x: &Tensor, train: bool) -> Result<(Tensor, Tensor)> {
        let mut bottleneck = None;
        let target = self.bottleneck_layer;
        let y = self.run(x, train, |id, act, _| {
            if id == target {
                bottleneck = Some(act.clone());
            }
        })?;
        Ok((y, bottleneck.expect("bottleneck visited")))
    }

    /// Activations and kernels at the requested layer ids (inference mode).
    pub fn capture_layer_activations(&self, x: &Tensor, layer_ids: &[usize]) -> Result<Vec<CapturedLayer>> {
        if let Some(&bad) = layer_ids.iter().find(|&&id| id >= self.layers.len()) {
            return Err(Error::InvalidInput(format!(
                "layer {bad} does not exist; valid ids are 0..={}",
                self.layers.len() - 1
            )));
        }
        let mut captured: Vec<Option<CapturedLayer>> = vec![None; layer_ids.len()];
        let mut failure = None;
        self.run(x, false, |id, act, kernel| {
            for (slot, &want) in captured.iter_mut().zip(layer_ids) {
                if want == id {
                    match act.get(0) {
                        Ok(a) => {
                            *slot = Some(CapturedLayer {
                                id,
                                name: self.layers[id].name.clone(),
                                activation: a,
                                weights: kernel.clone(),
                            })
                        }
                        Err(e) => failure = Some(e),
                    }
                }
            }
        })?;
        if let Some(e) = failure {
            return Err(e.into());
        }
        Ok(captured.into_iter().map(|c| c.expect("requested layer visited")).collect())
    }
}

impl Translator for Autoencoder {
    fn in_channels(&self) -> usize {
        3
    }

    fn translate(&self, x: &Tensor) -> Result<Tensor> {
        self.forward_t(x, false)
    }
}
