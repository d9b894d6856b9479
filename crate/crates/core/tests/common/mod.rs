//! Helpers shared by the mechanism property tests and the acceptance run.
#![allow(dead_code)]

use modcnn::arch::{standalone_block, ArchSpec, BlockKind, BlockRecord};
use modcnn::nn::{ForwardCtx, ForwardObserver, Module, Param, Visitor};
use modcnn_tensor::ops::BN_EPS;
use modcnn_tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn block(kind: BlockKind, channels: usize, c: usize, fusion: &str, seed: u64) -> Box<dyn Module<f64>> {
    let rec = BlockRecord::standalone("blk", kind, channels, Some(c), 1);
    let mut spec = ArchSpec::resnet("blk", kind, &[1]);
    spec.c = c;
    spec.fusion = fusion.into();
    standalone_block(&rec, &spec, seed).unwrap()
}

pub fn normal(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::from_vec((0..n).map(|_| StandardNormal.sample(&mut rng)).collect(), shape).unwrap()
}

/// Overwrites every parameter, keeping the named ones in `out`.
struct Fill<F: FnMut(usize) -> f64> {
    f: F,
    out: Vec<(String, Vec<f64>)>,
}

impl<F: FnMut(usize) -> f64> Visitor<f64> for Fill<F> {
    fn param(&mut self, p: &mut Param<f64>) {
        let data: Vec<f64> = (0..p.numel()).map(&mut self.f).collect();
        p.set_data(data.clone()).unwrap();
        self.out.push((p.name().to_string(), data));
    }
}

pub fn randomize(m: &mut dyn Module<f64>, seed: u64) -> Vec<(String, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fill = Fill {
        f: move |_| { let z: f64 = StandardNormal.sample(&mut rng); 0.5 * z },
        out: vec![],
    };
    m.visit(&mut fill);
    fill.out
}

pub fn zero_inner(m: &mut dyn Module<f64>) {
    struct Z;
    impl Visitor<f64> for Z {
        fn param(&mut self, p: &mut Param<f64>) {
            if p.name().contains(".inner.") {
                p.set_data(vec![0.0; p.numel()]).unwrap();
            }
        }
    }
    m.visit(&mut Z);
}

#[derive(Default)]
pub struct Trace(pub Vec<(String, &'static str, Vec<usize>)>);

impl ForwardObserver for Trace {
    fn shape(&mut self, block: &str, stage: &'static str, shape: &[usize]) {
        self.0.push((block.to_string(), stage, shape.to_vec()));
    }
}

pub fn run(m: &mut dyn Module<f64>, x: &Tensor<f64>, train: bool) -> (Tensor<f64>, Trace) {
    let mut t = Trace::default();
    let y = {
        let mut ctx = ForwardCtx::new(train, ChaCha8Rng::seed_from_u64(0)).with_observer(&mut t);
        m.forward(x, &mut ctx).unwrap()
    };
    (y, t)
}

fn get<'a>(params: &'a [(String, Vec<f64>)], name: &str) -> &'a [f64] {
    &params.iter().find(|p| p.0 == name).unwrap_or_else(|| panic!("no {name}")).1
}

/// Same-padded 3x3 convolution without bias, one sample at a time.
fn conv3(x: &[f64], n: usize, cin: usize, cout: usize, hw: usize, w: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; n * cout * hw * hw];
    for s in 0..n {
        for o in 0..cout {
            for i in 0..hw {
                for j in 0..hw {
                    let mut acc = 0.0;
                    for ci in 0..cin {
                        for di in 0..3 {
                            for dj in 0..3 {
                                let (si, sj) = (i as isize + di as isize - 1, j as isize + dj as isize - 1);
                                if si < 0 || sj < 0 || si >= hw as isize || sj >= hw as isize {
                                    continue;
                                }
                                let xv = x[((s * cin + ci) * hw + si as usize) * hw + sj as usize];
                                acc += xv * w[((o * cin + ci) * 3 + di) * 3 + dj];
                            }
                        }
                    }
                    y[((s * cout + o) * hw + i) * hw + j] = acc;
                }
            }
        }
    }
    y
}

/// Batch-statistics normalization with biased variance.
fn bn_train(x: &mut [f64], n: usize, c: usize, plane: usize, g: &[f64], b: &[f64]) {
    for ch in 0..c {
        let vals: Vec<f64> = (0..n).flat_map(|s| x[(s * c + ch) * plane..(s * c + ch + 1) * plane].to_vec()).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64;
        for s in 0..n {
            for v in &mut x[(s * c + ch) * plane..(s * c + ch + 1) * plane] {
                *v = g[ch] * (*v - mean) / (var + BN_EPS).sqrt() + b[ch];
            }
        }
    }
}

pub fn oracle(x: &Tensor<f64>, p: &[(String, Vec<f64>)], ch: usize, k: usize, hw: usize) -> Vec<f64> {
    let n = x.shape()[0];
    let plane = hw * hw;
    let xd = x.data();
    let (w1, b1) = (get(p, "blk.selector.fc1.weight"), get(p, "blk.selector.fc1.bias"));
    let (w2, b2) = (get(p, "blk.selector.fc2.weight"), get(p, "blk.selector.fc2.bias"));
    let hid = b1.len();
    let mut out = xd.to_vec();
    let mut gathered = vec![0.0; n * k * plane];
    let mut chosen = vec![vec![]; n];
    for s in 0..n {
        let pooled: Vec<f64> = (0..ch)
            .map(|c| xd[(s * ch + c) * plane..(s * ch + c + 1) * plane].iter().sum::<f64>() / plane as f64)
            .collect();
        let h: Vec<f64> = (0..hid)
            .map(|j| (b1[j] + (0..ch).map(|c| w1[j * ch + c] * pooled[c]).sum::<f64>()).max(0.0))
            .collect();
        let score: Vec<f64> = (0..ch)
            .map(|c| 1.0 / (1.0 + (-(b2[c] + (0..hid).map(|j| w2[c * hid + j] * h[j]).sum::<f64>())).exp()))
            .collect();
        let mut order: Vec<usize> = (0..ch).collect();
        order.sort_by(|&a, &b| score[b].total_cmp(&score[a]).then(a.cmp(&b)));
        let mut idx = order[..k].to_vec();
        idx.sort_unstable();
        for (j, &c) in idx.iter().enumerate() {
            gathered[(s * k + j) * plane..(s * k + j + 1) * plane]
                .copy_from_slice(&xd[(s * ch + c) * plane..(s * ch + c + 1) * plane]);
        }
        chosen[s] = idx.iter().map(|&c| score[c]).collect::<Vec<_>>();
    }
    let mut y = conv3(&gathered, n, k, k, hw, get(p, "blk.inner.conv1.weight"));
    bn_train(&mut y, n, k, plane, get(p, "blk.inner.conv1.bn.weight"), get(p, "blk.inner.conv1.bn.bias"));
    y.iter_mut().for_each(|v| *v = v.max(0.0));
    let mut y = conv3(&y, n, k, k, hw, get(p, "blk.inner.conv2.weight"));
    bn_train(&mut y, n, k, plane, get(p, "blk.inner.conv2.bn.weight"), get(p, "blk.inner.conv2.bn.bias"));
    for s in 0..n {
        for j in 0..k {
            for q in 0..plane {
                out[(s * ch + j) * plane + q] += chosen[s][j] * y[(s * k + j) * plane + q];
            }
        }
    }
    out
}
