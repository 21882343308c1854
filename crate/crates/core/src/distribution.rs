//! Poisson-Tweedie (PT) distribution with mean `mu`, dispersion `D` (the
//! variance-to-mean ratio) and power `a`.
//!
//! The PT is the compound Poisson law with probability generating function
//!
//! ```text
//! G(s) = exp{ (b / a) [ (1 - c)^a - (1 - c s)^a ] },   c = (D - 1) / (D - a),
//!                                                       b = mu (1 - c)^(1 - a) / c,
//! ```
//!
//! with the `a -> 0` limit giving the negative binomial `((1 - c) / (1 - c s))^b`.
//! Mean is `mu` and variance is `D mu`. Special cases: Poisson (`D = 1`),
//! negative binomial (`a = 0`), Poisson-inverse Gaussian (`a = 1/2`),
//! Polya-Aeppli (`a = -1`) and Neyman type A (`a -> -inf`).
//!
//! Probabilities follow from `k p_k = sum_{j=1..k} r_j p_{k-j}` where
//! `r_j = mu rho_j` are the coefficients of `d log G / ds`. All coefficients
//! are positive, so the recursion has no cancellation. The sequence is
//! carried exponentially tilted by `c^-k` (which flattens the geometric
//! tail) and renormalized whenever it leaves `[1e-200, 1e200]`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::{ln_factorial, ln_gamma};

/// Floor above 1 for estimated dispersions.
pub const DISPERSION_FLOOR: f64 = 1e-6;
/// Lower clamp for the power parameter.
pub const POWER_MIN: f64 = -50.0;
/// Grid over which the power parameter is profiled for starting values.
pub const POWER_GRID: [f64; 9] = [-10.0, -5.0, -2.0, -1.0, -0.5, 0.0, 0.25, 0.5, 0.75];
/// Largest support point the sampler will tabulate.
pub const DEFAULT_MAX_SUPPORT: u64 = 200_000;

const SCALE_BIG: f64 = 1e200;
const SCALE_SMALL: f64 = 1e-200;
const LN_SCALE_BIG: f64 = 460.517_018_598_809_1; // ln(1e200)
// Below this count the negative-binomial gamma ratio is summed term by term.
const NB_DIRECT_SUM_LIMIT: u64 = 2048;

/// Parameters of a single PT distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PtParams {
    pub mu: f64,
    pub dispersion: f64,
    pub power: f64,
}

impl PtParams {
    pub fn new(mu: f64, dispersion: f64, power: f64) -> Result<Self> {
        if !(mu.is_finite() && mu > 0.0) {
            return Err(Error::Domain(format!("mean must be positive and finite, got {mu}")));
        }
        check_shape(dispersion, power)?;
        Ok(Self { mu, dispersion, power })
    }

    pub fn poisson(mu: f64) -> Result<Self> {
        Self::new(mu, 1.0, 1.0)
    }

    pub fn negative_binomial(mu: f64, dispersion: f64) -> Result<Self> {
        Self::new(mu, dispersion, 0.0)
    }
}

fn check_shape(dispersion: f64, power: f64) -> Result<()> {
    if !(dispersion.is_finite() && dispersion >= 1.0) {
        return Err(Error::Domain(format!("dispersion must be >= 1, got {dispersion}")));
    }
    if !(power.is_finite() && power <= 1.0) {
        return Err(Error::Domain(format!("power must be finite and <= 1, got {power}")));
    }
    if power == 1.0 && dispersion != 1.0 {
        return Err(Error::Domain(format!(
            "power 1 is only admissible with dispersion 1, got dispersion {dispersion}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Family {
    Poisson,
    NegativeBinomial,
    General,
}

/// Log-pmf together with its first two derivatives with respect to `log mu`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogPmfDerivs {
    pub value: f64,
    pub d1: f64,
    pub d2: f64,
}

/// Shape-dependent part of the PT pmf (everything except `mu`).
///
/// Building a kernel costs `O(K)` for support up to `K`; derivative tables
/// cost `O(K^2)` once. Each pmf evaluation at count `y` costs `O(y^2)` in
/// the general case and `O(y)` for the Poisson and negative-binomial corners.
#[derive(Debug, Clone)]
pub struct PtKernel {
    dispersion: f64,
    power: f64,
    family: Family,
    c: f64,
    ln_c: f64,
    // lambda / mu: Poisson rate of the cluster count per unit mean.
    lambda_per_mu: f64,
    // Tilted coefficients rho_j / c^j, index 0 unused.
    rho: Vec<f64>,
    // rho reversed, so the convolution is a forward dot product.
    rho_rev: Vec<f64>,
    // Tilted kappa_j = rho_j / j and its self-convolution (j >= 2).
    kappa: Vec<f64>,
    kappa2: Vec<f64>,
}

impl PtKernel {
    pub fn new(dispersion: f64, power: f64) -> Result<Self> {
        check_shape(dispersion, power)?;
        let family = if dispersion == 1.0 {
            Family::Poisson
        } else if power == 0.0 {
            Family::NegativeBinomial
        } else {
            Family::General
        };
        let delta = dispersion - 1.0;
        let c = delta / (delta + 1.0 - power);
        let ln_c = c.ln();
        let l = (-c).ln_1p();
        let rho1 = ((1.0 - power) * l).exp();
        let phi = if power == 0.0 {
            -l / c
        } else {
            -(power * l).exp_m1() / (power * c)
        };
        let lambda_per_mu = if family == Family::Poisson { 1.0 } else { rho1 * phi };
        Ok(Self {
            dispersion,
            power,
            family,
            c,
            ln_c,
            lambda_per_mu,
            rho: vec![0.0],
            rho_rev: Vec::new(),
            kappa: vec![0.0],
            kappa2: vec![0.0, 0.0],
        })
    }

    pub fn dispersion(&self) -> f64 {
        self.dispersion
    }

    pub fn power(&self) -> f64 {
        self.power
    }

    /// Expected number of clusters per unit mean.
    pub fn lambda_per_mu(&self) -> f64 {
        self.lambda_per_mu
    }

    /// Extend the coefficient tables so counts up to `max_k` can be evaluated.
    pub fn reserve(&mut self, max_k: usize) {
        if self.family != Family::General || self.rho.len() > max_k {
            return;
        }
        let a = self.power;
        if self.rho.len() == 1 {
            // (1 - c)^(1 - a) / c
            self.rho.push(((1.0 - a) * (-self.c).ln_1p() - self.ln_c).exp());
        }
        while self.rho.len() <= max_k {
            let j = (self.rho.len() - 1) as f64;
            let next = self.rho[self.rho.len() - 1] * (j - a) / j;
            self.rho.push(next);
        }
        self.rho_rev = self.rho.iter().rev().copied().collect();
    }

    /// Extend the derivative tables (`O(max_k^2)` the first time).
    pub fn reserve_derivatives(&mut self, max_k: usize) {
        self.reserve(max_k);
        if self.family != Family::General {
            return;
        }
        while self.kappa.len() <= max_k {
            let j = self.kappa.len();
            self.kappa.push(self.rho[j] / j as f64);
        }
        while self.kappa2.len() <= max_k {
            let j = self.kappa2.len();
            let mut s = 0.0;
            for i in 1..j {
                s += self.kappa[i] * self.kappa[j - i];
            }
            self.kappa2.push(s);
        }
    }

    /// Tilted, rescaled probabilities `u_0..=u_y` such that
    /// `p_k = u_k exp(log_scale + k ln c)` holds for the last entry.
    fn tilted_table(&self, y: usize, mu: f64, u: &mut Vec<f64>) -> Result<f64> {
        debug_assert!(self.rho.len() > y);
        u.clear();
        u.reserve(y + 1);
        u.push(1.0);
        let mut log_scale = -self.lambda_per_mu * mu;
        let mut max_u = 1.0f64;
        let n = self.rho_rev.len();
        for k in 1..=y {
            // sum_{j=1..k} rho_j u_{k-j}
            let acc = dot(&u[..k], &self.rho_rev[n - 1 - k..n - 1]);
            let val = acc * mu / k as f64;
            if !val.is_finite() {
                return Err(Error::Evaluation { k: k as u64, reason: "non-finite recursion term".into() });
            }
            u.push(val);
            max_u = max_u.max(val);
            if max_u > SCALE_BIG {
                for x in u.iter_mut() {
                    *x *= SCALE_SMALL;
                }
                max_u *= SCALE_SMALL;
                log_scale += LN_SCALE_BIG;
            } else if val < SCALE_SMALL && max_u < SCALE_SMALL * 1e100 {
                for x in u.iter_mut() {
                    *x *= SCALE_BIG;
                }
                max_u *= SCALE_BIG;
                log_scale -= LN_SCALE_BIG;
            }
        }
        if u[y] <= 0.0 {
            return Err(Error::Evaluation { k: y as u64, reason: "probability underflow despite rescaling".into() });
        }
        Ok(log_scale)
    }

    /// `log P(Y = y)` for mean `mu`.
    pub fn log_pmf(&mut self, y: u64, mu: f64) -> Result<f64> {
        check_mu(mu)?;
        match self.family {
            Family::Poisson => Ok(poisson_log_pmf(y, mu)),
            Family::NegativeBinomial => Ok(nb_log_pmf(y, mu, self.dispersion)),
            Family::General => self.log_pmf_recursive(y, mu),
        }
    }

    /// Same as [`log_pmf`](Self::log_pmf) but without mutating the kernel;
    /// the tables must already cover `y`.
    pub fn log_pmf_prepared(&self, y: u64, mu: f64, scratch: &mut Vec<f64>) -> Result<f64> {
        match self.family {
            Family::Poisson => Ok(poisson_log_pmf(y, mu)),
            Family::NegativeBinomial => Ok(nb_log_pmf(y, mu, self.dispersion)),
            Family::General => {
                let y_us = y as usize;
                let log_scale = self.tilted_table(y_us, mu, scratch)?;
                Ok(scratch[y_us].ln() + log_scale + y as f64 * self.ln_c)
            }
        }
    }

    /// The general recursion, used for every shape with `D > 1` (including
    /// `a = 0`, where closed forms are otherwise preferred).
    pub fn log_pmf_recursive(&mut self, y: u64, mu: f64) -> Result<f64> {
        check_mu(mu)?;
        if self.family == Family::Poisson {
            return Ok(poisson_log_pmf(y, mu));
        }
        let y_us = y as usize;
        self.reserve_general(y_us);
        let mut u = Vec::new();
        let log_scale = self.tilted_table(y_us, mu, &mut u)?;
        Ok(u[y_us].ln() + log_scale + y as f64 * self.ln_c)
    }

    fn reserve_general(&mut self, max_k: usize) {
        // Negative-binomial kernels normally skip the tables; the recursive
        // path builds them on request.
        let fam = self.family;
        self.family = Family::General;
        self.reserve(max_k);
        self.family = fam;
    }

    /// Log-pmf and its derivatives in `t = log mu`. Tables must cover `y`
    /// (see [`reserve_derivatives`](Self::reserve_derivatives)).
    pub fn log_pmf_derivs(&self, y: u64, mu: f64, scratch: &mut Vec<f64>) -> Result<LogPmfDerivs> {
        match self.family {
            Family::Poisson => Ok(LogPmfDerivs {
                value: poisson_log_pmf(y, mu),
                d1: y as f64 - mu,
                d2: -mu,
            }),
            Family::NegativeBinomial => Ok(nb_log_pmf_derivs(y, mu, self.dispersion)),
            Family::General => {
                let y_us = y as usize;
                debug_assert!(self.kappa2.len() > y_us);
                let log_scale = self.tilted_table(y_us, mu, scratch)?;
                let u = &scratch[..];
                let uy = u[y_us];
                let lambda = self.lambda_per_mu * mu;
                let mut e1 = 0.0;
                let mut e2 = 0.0;
                for j in 1..=y_us {
                    let w = u[y_us - j];
                    e1 += self.kappa[j] * w;
                    e2 += self.kappa2[j] * w;
                }
                let e1 = mu * e1 / uy;
                let e2 = mu * mu * e2 / uy;
                Ok(LogPmfDerivs {
                    value: uy.ln() + log_scale + y as f64 * self.ln_c,
                    d1: e1 - lambda,
                    d2: e1 + e2 - e1 * e1 - lambda,
                })
            }
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut s = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        s[0] += x[0] * y[0];
        s[1] += x[1] * y[1];
        s[2] += x[2] * y[2];
        s[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (s[0] + s[1]) + (s[2] + s[3]) + tail
}

fn check_mu(mu: f64) -> Result<()> {
    if mu.is_finite() && mu > 0.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("mean must be positive and finite, got {mu}")))
    }
}

fn poisson_log_pmf(y: u64, mu: f64) -> f64 {
    y as f64 * mu.ln() - mu - ln_factorial(y)
}

// NB with size r = mu / (D - 1) and success probability 1 / D, written so it
// degrades gracefully to the Poisson as D -> 1.
fn nb_log_pmf(y: u64, mu: f64, dispersion: f64) -> f64 {
    let delta = dispersion - 1.0;
    let r = mu / delta;
    let yf = y as f64;
    let ln1p_delta = delta.ln_1p();
    if y <= NB_DIRECT_SUM_LIMIT {
        let mut s = 0.0;
        for i in 0..y {
            s += (i as f64 / r).ln_1p();
        }
        yf * mu.ln() + s - ln_factorial(y) - mu * ln1p_delta / delta - yf * ln1p_delta
    } else {
        ln_gamma(yf + r) - ln_gamma(r) - ln_factorial(y) - r * ln1p_delta + yf * (delta.ln() - ln1p_delta)
    }
}

fn nb_log_pmf_derivs(y: u64, mu: f64, dispersion: f64) -> LogPmfDerivs {
    let delta = dispersion - 1.0;
    let r = mu / delta;
    // r (psi(y + r) - psi(r)) and r^2 (psi'(r) - psi'(y + r)) as finite sums.
    let mut s1 = 0.0;
    let mut s2 = 0.0;
    for i in 0..y {
        let t = 1.0 / (1.0 + i as f64 / r);
        s1 += t;
        s2 += t * t;
    }
    let r_ln_d = mu * delta.ln_1p() / delta;
    let d1 = s1 - r_ln_d;
    LogPmfDerivs { value: nb_log_pmf(y, mu, dispersion), d1, d2: d1 - s2 }
}

/// `log P(Y = k)`.
pub fn pt_log_pmf(k: u64, params: &PtParams) -> Result<f64> {
    let mut kernel = PtKernel::new(params.dispersion, params.power)?;
    kernel.reserve(k as usize);
    kernel.log_pmf(k, params.mu)
}

/// `P(Y = k)`.
pub fn pt_pmf(k: u64, params: &PtParams) -> Result<f64> {
    pt_log_pmf(k, params).map(f64::exp)
}

/// Mean and variance.
pub fn pt_moments(params: &PtParams) -> (f64, f64) {
    (params.mu, params.dispersion * params.mu)
}

/// Method-of-moments style starting values for `(mu, D, a)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomEstimate {
    pub mu: f64,
    pub dispersion: f64,
    pub power: f64,
    /// Set when the sample has zero variance.
    pub degenerate: bool,
}

/// Sample mean, variance-to-mean ratio, and the power chosen by profiling the
/// sample log-likelihood over [`POWER_GRID`].
pub fn pt_mom_estimates(sample: &[u64]) -> Result<MomEstimate> {
    if sample.len() < 3 {
        return Err(Error::Domain(format!("need at least 3 observations, got {}", sample.len())));
    }
    let n = sample.len() as f64;
    let mean = sample.iter().map(|&y| y as f64).sum::<f64>() / n;
    let var = sample.iter().map(|&y| (y as f64 - mean).powi(2)).sum::<f64>() / (n - 1.0);
    if var <= 0.0 || mean <= 0.0 {
        return Ok(MomEstimate { mu: mean, dispersion: 1.0 + DISPERSION_FLOOR, power: 0.0, degenerate: true });
    }
    let dispersion = (var / mean).max(1.0 + DISPERSION_FLOOR);
    let power = profile_power(sample, mean, dispersion)?;
    Ok(MomEstimate { mu: mean, dispersion, power, degenerate: false })
}

fn profile_power(sample: &[u64], mu: f64, dispersion: f64) -> Result<f64> {
    let max_y = sample.iter().copied().max().unwrap_or(0) as usize;
    let mut best = (f64::NEG_INFINITY, 0.0);
    for &a in POWER_GRID.iter() {
        let mut kernel = PtKernel::new(dispersion, a)?;
        kernel.reserve(max_y);
        let mut scratch = Vec::new();
        let mut ll = 0.0;
        for &y in sample {
            ll += kernel.log_pmf_prepared(y, mu, &mut scratch).unwrap_or(f64::NEG_INFINITY);
        }
        if ll > best.0 {
            best = (ll, a);
        }
    }
    Ok(best.1.clamp(POWER_MIN, 1.0 - 1e-8))
}

/// Cumulative pmf for one parameter set, extended on demand.
#[derive(Debug, Clone)]
pub struct PmfTable {
    kernel: PtKernel,
    mu: f64,
    max_support: u64,
    pmf: Vec<f64>,
    cdf: Vec<f64>,
    // recursion state (general family)
    u: Vec<f64>,
    log_scale: f64,
    max_u: f64,
}

impl PmfTable {
    pub fn new(params: &PtParams) -> Result<Self> {
        Self::with_max_support(params, DEFAULT_MAX_SUPPORT)
    }

    pub fn with_max_support(params: &PtParams, max_support: u64) -> Result<Self> {
        let kernel = PtKernel::new(params.dispersion, params.power)?;
        check_mu(params.mu)?;
        Ok(Self {
            kernel,
            mu: params.mu,
            max_support,
            pmf: Vec::new(),
            cdf: Vec::new(),
            u: Vec::new(),
            log_scale: 0.0,
            max_u: 1.0,
        })
    }

    pub fn len(&self) -> usize {
        self.pmf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pmf.is_empty()
    }

    pub fn pmf(&self) -> &[f64] {
        &self.pmf
    }

    pub fn cdf(&self) -> &[f64] {
        &self.cdf
    }

    /// Tabulate probabilities for `0..=k`.
    pub fn extend_to(&mut self, k: u64) -> Result<()> {
        if k > self.max_support {
            return Err(Error::Sampling(format!("support {k} exceeds configured maximum {}", self.max_support)));
        }
        while (self.pmf.len() as u64) <= k {
            let next = self.pmf.len() as u64;
            let p = self.next_probability(next)?;
            let cum = self.cdf.last().copied().unwrap_or(0.0) + p;
            self.pmf.push(p);
            self.cdf.push(cum);
        }
        Ok(())
    }

    fn next_probability(&mut self, k: u64) -> Result<f64> {
        match self.kernel.family {
            Family::Poisson | Family::NegativeBinomial => Ok(self.kernel.log_pmf(k, self.mu)?.exp()),
            Family::General => {
                let ku = k as usize;
                if ku == 0 {
                    self.kernel.reserve(64);
                    self.u.clear();
                    self.u.push(1.0);
                    self.log_scale = -self.kernel.lambda_per_mu * self.mu;
                    self.max_u = 1.0;
                    return Ok(self.log_scale.exp());
                }
                if self.kernel.rho.len() <= ku {
                    self.kernel.reserve((2 * ku).max(64));
                }
                let n = self.kernel.rho_rev.len();
                let acc = dot(&self.u[..ku], &self.kernel.rho_rev[n - 1 - ku..n - 1]);
                let val = acc * self.mu / ku as f64;
                if !val.is_finite() {
                    return Err(Error::Evaluation { k, reason: "non-finite recursion term".into() });
                }
                self.u.push(val);
                self.max_u = self.max_u.max(val);
                let p = if val > 0.0 { (val.ln() + self.log_scale + k as f64 * self.kernel.ln_c).exp() } else { 0.0 };
                if self.max_u > SCALE_BIG {
                    for x in self.u.iter_mut() {
                        *x *= SCALE_SMALL;
                    }
                    self.max_u *= SCALE_SMALL;
                    self.log_scale += LN_SCALE_BIG;
                }
                Ok(p)
            }
        }
    }

    /// Smallest `k` with `F(k) >= u`.
    pub fn quantile(&mut self, u: f64) -> Result<u64> {
        if let Some(pos) = self.cdf.iter().position(|&f| f >= u) {
            return Ok(pos as u64);
        }
        loop {
            let k = self.pmf.len() as u64;
            if k > self.max_support {
                let total = self.cdf.last().copied().unwrap_or(0.0);
                if total < 1.0 - 1e-12 {
                    return Err(Error::Sampling(format!(
                        "cumulative mass {total} below 1 - 1e-12 at maximum support {}",
                        self.max_support
                    )));
                }
                return Ok(k - 1);
            }
            self.extend_to(k)?;
            let f = self.cdf[k as usize];
            if f >= u {
                return Ok(k);
            }
            // Mass is exhausted to rounding: accept the last point.
            if self.pmf[k as usize] == 0.0 && f >= 1.0 - 1e-12 && k as f64 > self.mu {
                return Ok(k);
            }
        }
    }
}

/// Draw a single variate by inversion.
pub fn sample_one<R: Rng + ?Sized>(params: &PtParams, rng: &mut R) -> Result<u64> {
    let mut table = PmfTable::new(params)?;
    table.quantile(rng.random::<f64>())
}

/// `n` deterministic draws given `seed`.
pub fn pt_sample(params: &PtParams, n: usize, seed: u64) -> Result<Vec<u64>> {
    if n == 0 {
        return Err(Error::Domain("sample size must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut table = PmfTable::new(params)?;
    (0..n).map(|_| table.quantile(rng.random::<f64>())).collect()
}
