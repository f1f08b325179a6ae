//! Monte-Carlo estimates of the infinite-width kernels from random wide networks.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::analytic::NetworkShape;
use crate::error::{Result, WntkError};
use crate::linalg::KernelMatrix;
use crate::network::{MlpSpec, Parameterization};

pub const MIN_MC_WIDTH: usize = 64;

/// Mean and standard error over independent random networks.
#[derive(Debug, Clone, PartialEq)]
pub struct McKernelEstimate {
    pub ntk_mean: KernelMatrix,
    pub ntk_stderr: KernelMatrix,
    /// `Σ^(l)` means for `l = 1..L`.
    pub sigma_mean: Vec<KernelMatrix>,
    /// `Σ̇^(l)` means for `l = 2..L`.
    pub sigma_dot_mean: Vec<KernelMatrix>,
    pub trials: usize,
}

impl McKernelEstimate {
    pub fn sigma(&self, l: usize) -> &KernelMatrix {
        &self.sigma_mean[l - 1]
    }

    pub fn sigma_dot(&self, l: usize) -> &KernelMatrix {
        &self.sigma_dot_mean[l - 2]
    }
}

struct Welford {
    mean: DMatrix<f64>,
    m2: DMatrix<f64>,
    count: usize,
}

impl Welford {
    fn new(n: usize) -> Self {
        Self {
            mean: DMatrix::zeros(n, n),
            m2: DMatrix::zeros(n, n),
            count: 0,
        }
    }

    fn push(&mut self, sample: &DMatrix<f64>) {
        self.count += 1;
        let k = self.count as f64;
        for ((m, s2), v) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(sample.iter()) {
            let d = v - *m;
            *m += d / k;
            *s2 += d * (v - *m);
        }
    }

    fn stderr(&self) -> DMatrix<f64> {
        if self.count < 2 {
            return DMatrix::zeros(self.mean.nrows(), self.mean.ncols());
        }
        let k = self.count as f64;
        self.m2.map(|s2| (s2 / (k - 1.0) / k).sqrt())
    }
}

/// Averages empirical NTK and hidden covariances over `trials` NTK-parameterized
/// networks of the given hidden `width`. Deterministic in `seed`.
pub fn mc_kernel_oracle(
    x: &DMatrix<f64>,
    shape: &NetworkShape,
    width: usize,
    trials: usize,
    seed: u64,
) -> Result<McKernelEstimate> {
    if width < MIN_MC_WIDTH {
        return Err(WntkError::InvalidArgument(format!("width must be at least {MIN_MC_WIDTH}, got {width}")));
    }
    if trials == 0 {
        return Err(WntkError::InvalidArgument("at least one trial is required".into()));
    }
    if shape.variance != 1.0 {
        return Err(WntkError::InvalidArgument("the Monte-Carlo oracle assumes unit parameter variance".into()));
    }
    if x.ncols() != shape.input_dim {
        return Err(WntkError::ShapeMismatch(format!(
            "inputs have {} columns, shape expects {}",
            x.ncols(),
            shape.input_dim
        )));
    }
    let n = x.nrows();
    let spec = MlpSpec::uniform(shape.input_dim, width, shape.depth, Parameterization::Ntk, shape.activation, 1.0);
    let mut seeds = ChaCha8Rng::seed_from_u64(seed);
    let mut ntk = Welford::new(n);
    let mut sigma = vec![DMatrix::zeros(n, n); shape.depth];
    let mut sigma_dot = vec![DMatrix::zeros(n, n); shape.depth.saturating_sub(1)];
    sigma[0] = (x * x.transpose()) / shape.input_dim as f64;
    for _ in 0..trials {
        let net = spec.init(seeds.random())?;
        ntk.push(&net.layer_kernels(x, x)?.sum());
        let (s, sd) = net.hidden_covariances(x)?;
        for (acc, v) in sigma[1..].iter_mut().zip(&s) {
            *acc += v / trials as f64;
        }
        for (acc, v) in sigma_dot.iter_mut().zip(&sd) {
            *acc += v / trials as f64;
        }
    }
    Ok(McKernelEstimate {
        ntk_stderr: ntk.stderr(),
        ntk_mean: ntk.mean,
        sigma_mean: sigma,
        sigma_dot_mean: sigma_dot,
        trials,
    })
}
