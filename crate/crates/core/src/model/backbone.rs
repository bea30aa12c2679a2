//! Residual backbone producing the conv2..conv5 stage maps.

use rand::Rng;

use super::config::{BackboneVariant, ModelConfig};
use crate::params::{Grads, ParamStore};
use crate::tensor::{conv_out_len, max_pool, max_pool_backward, relu, relu_backward, Conv2d, Tensor};

#[derive(Clone, Debug)]
pub(crate) enum Block {
    ConvRelu(Conv2d),
    MaxPool {
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    Basic {
        conv1: Conv2d,
        conv2: Conv2d,
        shortcut: Option<Conv2d>,
    },
    Bottleneck {
        conv1: Conv2d,
        conv2: Conv2d,
        conv3: Conv2d,
        shortcut: Option<Conv2d>,
    },
}

#[derive(Clone, Debug)]
pub(crate) enum BlockCache {
    ConvRelu {
        input: Tensor,
        output: Tensor,
    },
    MaxPool {
        input_shape: (usize, usize, usize),
        argmax: Vec<usize>,
    },
    Basic {
        input: Tensor,
        h1: Tensor,
        output: Tensor,
    },
    Bottleneck {
        input: Tensor,
        h1: Tensor,
        h2: Tensor,
        output: Tensor,
    },
}

fn shortcut<R: Rng>(
    store: &mut ParamStore,
    name: &str,
    cin: usize,
    cout: usize,
    stride: usize,
    rng: &mut R,
) -> Option<Conv2d> {
    (cin != cout || stride != 1).then(|| Conv2d::new(store, &format!("{name}.shortcut"), cin, cout, 1, stride, 0, rng))
}

impl Block {
    fn basic<R: Rng>(store: &mut ParamStore, name: &str, cin: usize, cout: usize, stride: usize, rng: &mut R) -> Self {
        Block::Basic {
            conv1: Conv2d::new(store, &format!("{name}.conv1"), cin, cout, 3, stride, 1, rng),
            conv2: Conv2d::new(store, &format!("{name}.conv2"), cout, cout, 3, 1, 1, rng),
            shortcut: shortcut(store, name, cin, cout, stride, rng),
        }
    }

    fn bottleneck<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        mid: usize,
        cout: usize,
        stride: usize,
        rng: &mut R,
    ) -> Self {
        Block::Bottleneck {
            conv1: Conv2d::new(store, &format!("{name}.conv1"), cin, mid, 1, 1, 0, rng),
            conv2: Conv2d::new(store, &format!("{name}.conv2"), mid, mid, 3, stride, 1, rng),
            conv3: Conv2d::new(store, &format!("{name}.conv3"), mid, cout, 1, 1, 0, rng),
            shortcut: shortcut(store, name, cin, cout, stride, rng),
        }
    }

    fn forward(&self, store: &ParamStore, x: Tensor) -> (Tensor, BlockCache) {
        match self {
            Block::ConvRelu(conv) => {
                let out = relu(&conv.forward(store, &x));
                (out.clone(), BlockCache::ConvRelu { input: x, output: out })
            }
            Block::MaxPool { kernel, stride, pad } => {
                let (out, argmax) = max_pool(&x, *kernel, *stride, *pad);
                (
                    out,
                    BlockCache::MaxPool {
                        input_shape: x.shape(),
                        argmax,
                    },
                )
            }
            Block::Basic { conv1, conv2, shortcut } => {
                let h1 = relu(&conv1.forward(store, &x));
                let mut z = conv2.forward(store, &h1);
                match shortcut {
                    Some(sc) => z.add_assign(&sc.forward(store, &x)),
                    None => z.add_assign(&x),
                }
                let out = relu(&z);
                (
                    out.clone(),
                    BlockCache::Basic {
                        input: x,
                        h1,
                        output: out,
                    },
                )
            }
            Block::Bottleneck {
                conv1,
                conv2,
                conv3,
                shortcut,
            } => {
                let h1 = relu(&conv1.forward(store, &x));
                let h2 = relu(&conv2.forward(store, &h1));
                let mut z = conv3.forward(store, &h2);
                match shortcut {
                    Some(sc) => z.add_assign(&sc.forward(store, &x)),
                    None => z.add_assign(&x),
                }
                let out = relu(&z);
                (
                    out.clone(),
                    BlockCache::Bottleneck {
                        input: x,
                        h1,
                        h2,
                        output: out,
                    },
                )
            }
        }
    }

    /// Returns the input gradient, or `None` when `want_input` is false.
    fn backward(
        &self,
        store: &ParamStore,
        cache: &BlockCache,
        grad: &Tensor,
        grads: &mut Grads,
        want_input: bool,
    ) -> Option<Tensor> {
        match (self, cache) {
            (Block::ConvRelu(conv), BlockCache::ConvRelu { input, output }) => {
                let gz = relu_backward(output, grad);
                if want_input {
                    Some(conv.backward(store, input, &gz, grads))
                } else {
                    conv.backward_params(store, input, &gz, grads);
                    None
                }
            }
            (Block::MaxPool { .. }, BlockCache::MaxPool { input_shape, argmax }) => {
                Some(max_pool_backward(*input_shape, argmax, grad))
            }
            (Block::Basic { conv1, conv2, shortcut }, BlockCache::Basic { input, h1, output }) => {
                let gz = relu_backward(output, grad);
                let gh1 = relu_backward(h1, &conv2.backward(store, h1, &gz, grads));
                let mut gx = conv1.backward(store, input, &gh1, grads);
                match shortcut {
                    Some(sc) => gx.add_assign(&sc.backward(store, input, &gz, grads)),
                    None => gx.add_assign(&gz),
                }
                Some(gx)
            }
            (
                Block::Bottleneck {
                    conv1,
                    conv2,
                    conv3,
                    shortcut,
                },
                BlockCache::Bottleneck { input, h1, h2, output },
            ) => {
                let gz = relu_backward(output, grad);
                let gh2 = relu_backward(h2, &conv3.backward(store, h2, &gz, grads));
                let gh1 = relu_backward(h1, &conv2.backward(store, h1, &gh2, grads));
                let mut gx = conv1.backward(store, input, &gh1, grads);
                match shortcut {
                    Some(sc) => gx.add_assign(&sc.backward(store, input, &gz, grads)),
                    None => gx.add_assign(&gz),
                }
                Some(gx)
            }
            _ => unreachable!("block/cache variant mismatch"),
        }
    }

    fn out_shape(&self, (c, h, w): (usize, usize, usize)) -> (usize, usize, usize) {
        match self {
            Block::ConvRelu(conv) => {
                let (oh, ow) = conv.out_size(h, w);
                (conv.out_channels, oh, ow)
            }
            Block::MaxPool { kernel, stride, pad } => (
                c,
                conv_out_len(h, *kernel, *stride, *pad),
                conv_out_len(w, *kernel, *stride, *pad),
            ),
            Block::Basic { conv1, .. } => {
                let (oh, ow) = conv1.out_size(h, w);
                (conv1.out_channels, oh, ow)
            }
            Block::Bottleneck { conv2, conv3, .. } => {
                let (oh, ow) = conv2.out_size(h, w);
                (conv3.out_channels, oh, ow)
            }
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) struct BackboneCache {
    stem: Vec<BlockCache>,
    stages: [Vec<BlockCache>; 4],
}

impl BackboneCache {
    /// On/off state of every ReLU and the winner of every max-pool window.
    /// Two forward passes with equal patterns lie on the same linear piece.
    pub(crate) fn activation_pattern(&self) -> Vec<u64> {
        let mut out = Vec::new();
        let mut push = |t: &Tensor| out.extend(t.data.iter().map(|&v| (v > 0.0) as u64));
        let mut argmaxes = Vec::new();
        for c in self.stem.iter().chain(self.stages.iter().flatten()) {
            match c {
                BlockCache::ConvRelu { output, .. } => push(output),
                BlockCache::MaxPool { argmax, .. } => argmaxes.extend(argmax.iter().map(|&i| i as u64)),
                BlockCache::Basic { h1, output, .. } => {
                    push(h1);
                    push(output);
                }
                BlockCache::Bottleneck { h1, h2, output, .. } => {
                    push(h1);
                    push(h2);
                    push(output);
                }
            }
        }
        out.extend(argmaxes);
        out
    }
}

#[derive(Clone, Debug)]
pub struct Backbone {
    variant: BackboneVariant,
    stem: Vec<Block>,
    stages: [Vec<Block>; 4],
}

impl Backbone {
    pub(crate) fn new<R: Rng>(store: &mut ParamStore, config: &ModelConfig, rng: &mut R) -> Self {
        let ch = config.backbone_variant.stage_channels();
        match config.backbone_variant {
            BackboneVariant::Tiny => {
                let stem = vec![Block::ConvRelu(Conv2d::new(store, "backbone.stem", 3, 8, 3, 2, 1, rng))];
                let mut cin = 8;
                let stages = std::array::from_fn(|i| {
                    let conv = Conv2d::new(store, &format!("backbone.stage{}.conv", i + 2), cin, ch[i], 3, 2, 1, rng);
                    cin = ch[i];
                    vec![Block::ConvRelu(conv)]
                });
                Self {
                    variant: BackboneVariant::Tiny,
                    stem,
                    stages,
                }
            }
            BackboneVariant::Resnet18Like | BackboneVariant::Resnet50Like => {
                let stem = vec![
                    Block::ConvRelu(Conv2d::new(store, "backbone.stem", 3, 64, 7, 2, 3, rng)),
                    Block::MaxPool {
                        kernel: 3,
                        stride: 2,
                        pad: 1,
                    },
                ];
                let bottleneck = config.backbone_variant == BackboneVariant::Resnet50Like;
                let depths = if bottleneck { [3, 4, 6, 3] } else { [2, 2, 2, 2] };
                let mut cin = 64;
                let stages = std::array::from_fn(|i| {
                    (0..depths[i])
                        .map(|b| {
                            let stride = if i > 0 && b == 0 { 2 } else { 1 };
                            let name = format!("backbone.stage{}.block{b}", i + 2);
                            let block = if bottleneck {
                                Block::bottleneck(store, &name, cin, ch[i] / 4, ch[i], stride, rng)
                            } else {
                                Block::basic(store, &name, cin, ch[i], stride, rng)
                            };
                            cin = ch[i];
                            block
                        })
                        .collect()
                });
                Self {
                    variant: config.backbone_variant,
                    stem,
                    stages,
                }
            }
        }
    }

    pub fn variant(&self) -> BackboneVariant {
        self.variant
    }

    /// Shape trace of the four stage outputs without running any arithmetic.
    pub fn stage_shapes(&self, height: usize, width: usize) -> [(usize, usize, usize); 4] {
        let mut shape = self.stem.iter().fold((3, height, width), |s, b| b.out_shape(s));
        std::array::from_fn(|i| {
            shape = self.stages[i].iter().fold(shape, |s, b| b.out_shape(s));
            shape
        })
    }

    pub(crate) fn forward(&self, store: &ParamStore, image: &Tensor) -> ([Tensor; 4], BackboneCache) {
        let mut x = image.clone();
        let mut stem_cache = Vec::with_capacity(self.stem.len());
        for block in &self.stem {
            let (y, c) = block.forward(store, x);
            stem_cache.push(c);
            x = y;
        }
        let mut stage_caches: [Vec<BlockCache>; 4] = Default::default();
        let mut outs: Vec<Tensor> = Vec::with_capacity(4);
        for (i, stage) in self.stages.iter().enumerate() {
            for block in stage {
                let (y, c) = block.forward(store, x);
                stage_caches[i].push(c);
                x = y;
            }
            outs.push(x.clone());
        }
        let outs: [Tensor; 4] = outs.try_into().expect("four stages");
        (
            outs,
            BackboneCache {
                stem: stem_cache,
                stages: stage_caches,
            },
        )
    }

    /// Backpropagates gradients arriving at each stage output.
    pub(crate) fn backward(&self, store: &ParamStore, cache: &BackboneCache, stage_grads: [Tensor; 4], grads: &mut Grads) {
        let mut carry: Option<Tensor> = None;
        for (i, g_stage) in stage_grads.into_iter().enumerate().rev() {
            let mut g = g_stage;
            if let Some(c) = carry.take() {
                g.add_assign(&c);
            }
            for (block, bc) in self.stages[i].iter().zip(&cache.stages[i]).rev() {
                g = block.backward(store, bc, &g, grads, true).expect("input gradient requested");
            }
            carry = Some(g);
        }
        let mut g = carry.expect("at least one stage");
        for (j, (block, bc)) in self.stem.iter().zip(&cache.stem).enumerate().rev() {
            match block.backward(store, bc, &g, grads, j != 0) {
                Some(next) => g = next,
                None => break,
            }
        }
    }
}
