//! Finite-difference verification of every hand-written backward pass.
//!
//! Each check draws random instances in `f64`, takes a random linear
//! functional (or the real training objective) of the output, and compares
//! the analytic gradient of every parameter and input coordinate against a
//! central difference with step `h`:
//!
//! ```text
//! numeric = (f(θ + h·e_k) − f(θ − h·e_k)) / 2h
//! rel     = |analytic − numeric| / max(|analytic|, |numeric|, 1e-6)
//! ```
//!
//! Dropout masks are held fixed across the perturbed evaluations by
//! re-seeding the mask generator for every forward pass. Max pooling is not
//! differentiable where two window entries tie, and ELU has a jump in its
//! second derivative at zero, which degrades the central difference from
//! second to first order. In the network composites a coordinate whose
//! `±h` evaluations select different pooling winners, or flip the sign of
//! any ELU input, relative to the unperturbed pass is not a valid probe, so
//! it is excluded and counted in [`CheckResult::kink_exclusions`].

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;

use super::layers::{dropout, elu, elu_backward, Conv2d, Dense, MaxPool2};
use super::losses::{policy_objective, value_loss};
use super::{Architecture, Batch, ConvSharing, Head, Mode, Network, NetworkSpec, Parameters, Tensor};

/// Denominator floor of the relative error.
pub const RELATIVE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy)]
pub struct GradcheckOptions {
    /// Random instances per check.
    pub instances: usize,
    pub seed: u64,
    pub step: f64,
    pub tolerance: f64,
    /// Instances of the full-size (64×64 MAIM, 32 filters, 256-wide) composites.
    pub full_size_instances: usize,
    /// Coordinates sampled per full-size instance.
    pub full_size_coordinates: usize,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            instances: 100,
            seed: 0,
            step: 1e-5,
            tolerance: 1e-4,
            full_size_instances: 100,
            full_size_coordinates: 4,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub instances: usize,
    pub coordinates: usize,
    pub max_relative_error: f64,
    pub tolerance: f64,
    /// Coordinates skipped because a perturbation switched a pooling argmax
    /// or the sign of an ELU input.
    pub kink_exclusions: usize,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_relative_error < self.tolerance
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

/// Running tally for one check.
struct Tally {
    coordinates: usize,
    max_error: f64,
    kink_exclusions: usize,
}

impl Tally {
    fn new() -> Self {
        Self {
            coordinates: 0,
            max_error: 0.0,
            kink_exclusions: 0,
        }
    }

    /// Compares `analytic[k]` with a central difference of `f` in `vars[k]`
    /// for each `k` in `coords`.
    fn compare(
        &mut self,
        vars: &mut [f64],
        analytic: &[f64],
        coords: impl IntoIterator<Item = usize>,
        step: f64,
        mut f: impl FnMut(&[f64]) -> Result<f64>,
    ) -> Result<()> {
        self.compare_routed(vars, analytic, coords, step, 0, |v| Ok((f(v)?, 0)))
    }

    /// Like [`Tally::compare`] for functions that also report a kink
    /// signature; probes that change it relative to `base` are excluded.
    fn compare_routed(
        &mut self,
        vars: &mut [f64],
        analytic: &[f64],
        coords: impl IntoIterator<Item = usize>,
        step: f64,
        base: u64,
        mut f: impl FnMut(&[f64]) -> Result<(f64, u64)>,
    ) -> Result<()> {
        for k in coords {
            let orig = vars[k];
            vars[k] = orig + step;
            let (plus, sig_plus) = f(vars)?;
            vars[k] = orig - step;
            let (minus, sig_minus) = f(vars)?;
            vars[k] = orig;
            if sig_plus != base || sig_minus != base {
                self.kink_exclusions += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * step);
            self.max_error = self.max_error.max(relative_error(analytic[k], numeric));
            self.coordinates += 1;
        }
        Ok(())
    }

    fn finish(self, name: &str, instances: usize, tolerance: f64) -> CheckResult {
        CheckResult {
            name: name.to_string(),
            instances,
            coordinates: self.coordinates,
            max_relative_error: self.max_error,
            tolerance,
            kink_exclusions: self.kink_exclusions,
        }
    }
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Splits a concatenated variable vector back into its pieces.
fn split<'a>(vars: &'a [f64], lens: &[usize]) -> Vec<&'a [f64]> {
    let mut out = Vec::with_capacity(lens.len());
    let mut at = 0;
    for &l in lens {
        out.push(&vars[at..at + l]);
        at += l;
    }
    out
}

pub fn check_dense(opts: &GradcheckOptions) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0xd1);
    let mut tally = Tally::new();
    for _ in 0..opts.instances {
        let layer = Dense::new(rng.gen_range(1..7), rng.gen_range(1..7));
        let batch = rng.gen_range(1..4);
        let lens = [layer.weight_len(), layer.out_dim, batch * layer.in_dim];
        let mut vars = uniform(&mut rng, lens.iter().sum(), 1.0);
        let c = uniform(&mut rng, batch * layer.out_dim, 1.0);
        let f = |v: &[f64]| -> Result<f64> {
            let p = split(v, &lens);
            Ok(dot(&layer.forward(p[0], p[1], p[2], batch)?, &c))
        };
        let mut analytic = vec![0.0; vars.len()];
        {
            let p = split(&vars, &lens);
            let (gw, rest) = analytic.split_at_mut(lens[0]);
            let (gb, dx) = rest.split_at_mut(lens[1]);
            layer.backward(p[0], p[2], &c, batch, gw, gb, Some(dx))?;
        }
        tally.compare(&mut vars, &analytic, 0..lens.iter().sum(), opts.step, f)?;
    }
    Ok(tally.finish("dense", opts.instances, opts.tolerance))
}

pub fn check_conv2d(opts: &GradcheckOptions) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0xc2);
    let mut tally = Tally::new();
    for _ in 0..opts.instances {
        let conv = Conv2d {
            in_channels: rng.gen_range(1..4),
            filters: rng.gen_range(1..5),
            height: rng.gen_range(1..7),
            width: rng.gen_range(1..7),
        };
        let lens = [conv.kernel_len(), conv.filters, conv.input_len()];
        let mut vars = uniform(&mut rng, lens.iter().sum(), 1.0);
        let c = uniform(&mut rng, conv.output_len(), 1.0);
        let f = |v: &[f64]| -> Result<f64> {
            let p = split(v, &lens);
            Ok(dot(&conv.forward(p[0], p[1], p[2])?, &c))
        };
        let mut analytic = vec![0.0; vars.len()];
        {
            let p = split(&vars, &lens);
            let (gk, rest) = analytic.split_at_mut(lens[0]);
            let (gb, dx) = rest.split_at_mut(lens[1]);
            conv.backward(p[0], p[2], &c, gk, gb, Some(dx))?;
        }
        tally.compare(&mut vars, &analytic, 0..lens.iter().sum(), opts.step, f)?;
    }
    Ok(tally.finish("conv2d", opts.instances, opts.tolerance))
}

pub fn check_maxpool2(opts: &GradcheckOptions) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x93);
    let mut tally = Tally::new();
    for _ in 0..opts.instances {
        let pool = MaxPool2 {
            channels: rng.gen_range(1..4),
            height: rng.gen_range(2..8),
            width: rng.gen_range(2..8),
        };
        let mut vars = uniform(&mut rng, pool.channels * pool.height * pool.width, 1.0);
        let c = uniform(&mut rng, pool.output_len(), 1.0);
        let signature = |argmax: &[usize]| argmax.iter().fold(0u64, |h, &i| h.wrapping_mul(31).wrapping_add(i as u64));
        let f = |v: &[f64]| -> Result<(f64, u64)> {
            let (out, argmax) = pool.forward(v)?;
            Ok((dot(&out, &c), signature(&argmax)))
        };
        let (_, argmax) = pool.forward(&vars)?;
        let mut analytic = vec![0.0; vars.len()];
        pool.backward(&argmax, &c, &mut analytic)?;
        let n = vars.len();
        tally.compare_routed(&mut vars, &analytic, 0..n, opts.step, signature(&argmax), f)?;
    }
    Ok(tally.finish("maxpool2", opts.instances, opts.tolerance))
}

pub fn check_elu(opts: &GradcheckOptions) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0xe4);
    let mut tally = Tally::new();
    for _ in 0..opts.instances {
        let n = rng.gen_range(1..16);
        let mut vars = uniform(&mut rng, n, 3.0);
        let c = uniform(&mut rng, n, 1.0);
        let f = |v: &[f64]| -> Result<f64> { Ok(v.iter().zip(&c).map(|(&x, w)| elu(x) * w).sum()) };
        let outputs: Vec<f64> = vars.iter().map(|&x| elu(x)).collect();
        let mut analytic = c.clone();
        elu_backward(&outputs, &mut analytic);
        tally.compare(&mut vars, &analytic, 0..n, opts.step, f)?;
    }
    Ok(tally.finish("elu", opts.instances, opts.tolerance))
}

pub fn check_dropout(opts: &GradcheckOptions) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0xd5);
    let mut tally = Tally::new();
    for _ in 0..opts.instances {
        let n = rng.gen_range(1..16);
        let rate = rng.gen_range(0.1..0.5);
        let mask_seed = rng.gen::<u64>();
        let mut vars = uniform(&mut rng, n, 1.0);
        let c = uniform(&mut rng, n, 1.0);
        let f = |v: &[f64]| -> Result<f64> {
            let mut y = v.to_vec();
            dropout(&mut y, rate, &mut ChaCha8Rng::seed_from_u64(mask_seed), true);
            Ok(dot(&y, &c))
        };
        let mut probe = vars.clone();
        let mask = dropout(&mut probe, rate, &mut ChaCha8Rng::seed_from_u64(mask_seed), true)
            .expect("train mode records a mask");
        let analytic: Vec<f64> = c.iter().zip(&mask).map(|(a, m)| a * m).collect();
        tally.compare(&mut vars, &analytic, 0..n, opts.step, f)?;
    }
    Ok(tally.finish("dropout", opts.instances, opts.tolerance))
}

/// Masked log-softmax under the policy-gradient objective.
pub fn check_policy_head(opts: &GradcheckOptions) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x50);
    let mut tally = Tally::new();
    for _ in 0..opts.instances {
        let (rows, width) = (rng.gen_range(1..5), rng.gen_range(1..8));
        let (masks, actions) = random_masks(&mut rng, rows, width);
        let adv = uniform(&mut rng, rows, 2.0);
        let mut vars = uniform(&mut rng, rows * width, 3.0);
        let (_, analytic) = policy_objective(&vars, &masks, &actions, &adv)?;
        let f = |v: &[f64]| -> Result<f64> { Ok(policy_objective(v, &masks, &actions, &adv)?.0) };
        let n = vars.len();
        tally.compare(&mut vars, &analytic, 0..n, opts.step, f)?;
    }
    Ok(tally.finish("softmax_policy_head", opts.instances, opts.tolerance))
}

pub fn check_value_head(opts: &GradcheckOptions) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x71);
    let mut tally = Tally::new();
    for _ in 0..opts.instances {
        let rows = rng.gen_range(1..6);
        let returns = uniform(&mut rng, rows, 20.0);
        let mut vars = uniform(&mut rng, rows, 20.0);
        let (_, analytic) = value_loss(&vars, &returns)?;
        let f = |v: &[f64]| -> Result<f64> { Ok(value_loss(v, &returns)?.0) };
        tally.compare(&mut vars, &analytic, 0..rows, opts.step, f)?;
    }
    Ok(tally.finish("value_head", opts.instances, opts.tolerance))
}

/// Random legal-action masks (at least one legal entry per row) and a legal choice per row.
fn random_masks(rng: &mut ChaCha8Rng, rows: usize, width: usize) -> (Vec<bool>, Vec<usize>) {
    let mut masks = Vec::with_capacity(rows * width);
    let mut actions = Vec::with_capacity(rows);
    for _ in 0..rows {
        let mut row: Vec<bool> = (0..width).map(|_| rng.gen_bool(0.7)).collect();
        let forced = rng.gen_range(0..width);
        row[forced] = true;
        let legal: Vec<usize> = (0..width).filter(|&j| row[j]).collect();
        actions.push(legal[rng.gen_range(0..legal.len())]);
        masks.extend(row);
    }
    (masks, actions)
}

/// Reduced dimensions for exhaustive checks of every parameter.
pub fn reduced_spec(architecture: Architecture, sharing: ConvSharing, head: Head) -> NetworkSpec {
    NetworkSpec {
        observation_dim: 5,
        maim_height: 8,
        maim_width: 8,
        architecture,
        conv_sharing: sharing,
        conv_layers: 2,
        conv_filters: 3,
        maim_feature_dim: 4,
        dense_layers: 3,
        dense_width: 6,
        head,
        dropout_rate: 0.1,
    }
}

/// Runs a train-mode composite check on `spec`, differentiating the actual
/// actor or critic training objective. `coords` picks which parameter
/// indices are perturbed (`None` = all).
fn composite_instance(
    net: &Network,
    rng: &mut ChaCha8Rng,
    coords: Option<usize>,
    step: f64,
    tally: &mut Tally,
) -> Result<()> {
    let spec = *net.spec();
    let rows = 3;
    let mut params: Parameters<f64> = net.init_params(rng);
    // Non-zero biases so every bias path is exercised.
    for block in net.layout().blocks.iter().filter(|b| b.fan_in == 0) {
        for v in &mut params.values[block.range()] {
            *v = rng.gen_range(-0.1..0.1);
        }
    }
    let maims: Vec<Tensor<f64>> = (0..2)
        .map(|_| {
            Tensor::from_vec(
                vec![1, spec.maim_height, spec.maim_width],
                uniform(rng, spec.maim_height * spec.maim_width, 1.0),
            )
        })
        .collect::<Result<_>>()?;
    let observations = uniform(rng, rows * spec.observation_dim, 1.0);
    let row_maim: Vec<usize> = (0..rows).map(|r| r % maims.len()).collect();
    let mask_seed = rng.gen::<u64>();
    let width = spec.head.width();
    let (masks, actions) = random_masks(rng, rows, width);
    let advantages = uniform(rng, rows, 2.0);
    let returns = uniform(rng, rows, 1.0);
    let objective = |out: &[f64]| -> Result<(f64, Vec<f64>)> {
        match spec.head {
            Head::Policy { .. } => policy_objective(out, &masks, &actions, &advantages),
            Head::Value => value_loss(out, &returns),
        }
    };
    let batch = Batch {
        observations: &observations,
        maims: &maims,
        row_maim: &row_maim,
    };
    let layout = Arc::clone(net.layout());
    let eval = |v: &[f64]| -> Result<(f64, u64)> {
        let p = Parameters::from_values(Arc::clone(&layout), v.to_vec())?;
        let (out, cache) = net.forward(&p, &batch, Mode::Train, &mut ChaCha8Rng::seed_from_u64(mask_seed))?;
        Ok((objective(&out)?.0, cache.kink_signature()))
    };
    let (out, cache) = net.forward(&params, &batch, Mode::Train, &mut ChaCha8Rng::seed_from_u64(mask_seed))?;
    let (_, d_out) = objective(&out)?;
    let grads = net.backward(&params, &cache, &d_out)?;
    let n = params.len();
    let chosen: Vec<usize> = match coords {
        None => (0..n).collect(),
        Some(k) => sample_coordinates(net, rng, k),
    };
    let base = cache.kink_signature();
    tally.compare_routed(&mut params.values, &grads.values, chosen, step, base, eval)
}

/// Picks `k` coordinates, each from a uniformly chosen parameter block so
/// that small blocks (biases, the first conv layer) are not drowned out.
fn sample_coordinates(net: &Network, rng: &mut ChaCha8Rng, k: usize) -> Vec<usize> {
    let blocks = &net.layout().blocks;
    (0..k)
        .map(|_| {
            let b = &blocks[rng.gen_range(0..blocks.len())];
            b.offset + rng.gen_range(0..b.len)
        })
        .collect()
}

pub fn check_composite(
    name: &str,
    spec: NetworkSpec,
    instances: usize,
    coords: Option<usize>,
    opts: &GradcheckOptions,
) -> Result<CheckResult> {
    let net = Network::new(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ fxhash(name));
    let mut tally = Tally::new();
    for _ in 0..instances {
        composite_instance(&net, &mut rng, coords, opts.step, &mut tally)?;
    }
    Ok(tally.finish(name, instances, opts.tolerance))
}

fn fxhash(name: &str) -> u64 {
    name.bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Every layer check plus the actor and critic composites in each
/// architecture variant, and sampled-coordinate checks at full size.
pub fn run_suite(opts: &GradcheckOptions) -> Result<Vec<CheckResult>> {
    let mut results = vec![
        check_dense(opts)?,
        check_conv2d(opts)?,
        check_maxpool2(opts)?,
        check_elu(opts)?,
        check_dropout(opts)?,
        check_policy_head(opts)?,
        check_value_head(opts)?,
    ];
    let policy = Head::Policy { actions: 4 };
    let variants = [
        ("dense_cnn", Architecture::DenseCnn, ConvSharing::Shared),
        ("dense_cnn_per_layer", Architecture::DenseCnn, ConvSharing::PerLayer),
        ("dense_only", Architecture::DenseOnly, ConvSharing::Shared),
    ];
    for (tag, arch, sharing) in variants {
        for (role, head) in [("actor", policy), ("critic", Head::Value)] {
            let spec = reduced_spec(arch, sharing, head);
            results.push(check_composite(&format!("{role}_{tag}"), spec, opts.instances, None, opts)?);
        }
    }
    if opts.full_size_instances > 0 {
        for (role, head) in [("actor", Head::Policy { actions: 9 }), ("critic", Head::Value)] {
            let spec = NetworkSpec::new(28, 64, 64, head);
            results.push(check_composite(
                &format!("{role}_dense_cnn_full_size"),
                spec,
                opts.full_size_instances,
                Some(opts.full_size_coordinates),
                opts,
            )?);
        }
    }
    Ok(results)
}
