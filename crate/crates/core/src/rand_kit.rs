//! Seeded random streams, samplers and the special functions the rest of the
//! crate needs. All densities are evaluated in log space.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::function::erf::erfc_inv;

use crate::error::{Error, Result};

const FRAC_1_SQRT_2PI_LN: f64 = -0.918_938_533_204_672_8; // -ln(sqrt(2 pi))

/// Mean of the binomial below which inversion is used.
pub const BINOMIAL_INVERSION_MAX_MEAN: f64 = 30.0;

/// ChaCha12 stream keyed by a 64-bit seed. Child streams are keyed by a
/// SplitMix64 mix of the parent seed and the child index, so the tree of
/// streams is fully determined by the root seed.
#[derive(Clone, Debug)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha12Rng,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha12Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent stream for replicate / particle `index`.
    pub fn child(&self, index: u64) -> Self {
        let key = splitmix64(splitmix64(self.seed) ^ splitmix64(index.wrapping_add(0x5851_f42d)));
        Self::new(key)
    }

    /// Uniform on the open interval (0, 1).
    #[inline]
    pub fn uniform_open(&mut self) -> f64 {
        ((self.inner.next_u64() >> 12) as f64 + 0.5) * (1.0 / (1u64 << 52) as f64)
    }

    /// Uniform on [0, 1).
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    #[inline]
    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }
}

impl RngCore for SeededRng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

/// Standard normal CDF.
pub fn norm_cdf(x: f64) -> f64 {
    if x == f64::INFINITY {
        return 1.0;
    }
    if x == f64::NEG_INFINITY {
        return 0.0;
    }
    0.5 * libm::erfc(-x * std::f64::consts::FRAC_1_SQRT_2)
}

/// Standard normal quantile for `p` in (0, 1).
pub fn norm_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("normal quantile needs p in (0, 1), got {p}")));
    }
    Ok(-std::f64::consts::SQRT_2 * erfc_inv(2.0 * p))
}

/// Standard normal log density.
#[inline]
pub fn norm_logpdf(z: f64) -> f64 {
    FRAC_1_SQRT_2PI_LN - 0.5 * z * z
}

pub fn log_gamma(x: f64) -> f64 {
    libm::lgamma(x)
}

#[inline]
fn ln_factorial(k: f64) -> f64 {
    libm::lgamma(k + 1.0)
}

/// `log Binom(y; n, p)`, `-inf` when `y > n`, using `0 log 0 = 0`.
pub fn log_binom_pmf(y: u64, n: u64, p: f64) -> f64 {
    if y > n || !(0.0..=1.0).contains(&p) {
        return f64::NEG_INFINITY;
    }
    let (yf, nf) = (y as f64, n as f64);
    let succ = if y == 0 {
        0.0
    } else if p == 0.0 {
        return f64::NEG_INFINITY;
    } else {
        yf * p.ln()
    };
    let fail = if y == n {
        0.0
    } else if p == 1.0 {
        return f64::NEG_INFINITY;
    } else {
        (nf - yf) * (-p).ln_1p()
    };
    let log_choose = if y == 0 || y == n {
        0.0
    } else {
        ln_factorial(nf) - ln_factorial(yf) - ln_factorial(nf - yf)
    };
    log_choose + succ + fail
}

/// `log Pois(y; lambda)` with `log Pois(0; 0) = 0`.
pub fn log_poisson_pmf(y: u64, lambda: f64) -> f64 {
    if lambda == 0.0 {
        return if y == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    if !(lambda > 0.0) {
        return f64::NEG_INFINITY;
    }
    let yf = y as f64;
    let data = if y == 0 { 0.0 } else { yf * lambda.ln() };
    data - lambda - ln_factorial(yf)
}

/// Normal distribution with mean `mu` and variance `sigma2` restricted to `[lo, hi]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TruncNormal {
    mu: f64,
    sigma: f64,
    lo: f64,
    hi: f64,
    log_z: f64,
}

impl TruncNormal {
    /// Support `[0, 1]`.
    pub fn unit(mu: f64, sigma2: f64) -> Result<Self> {
        Self::new(mu, sigma2, 0.0, 1.0)
    }

    pub fn new(mu: f64, sigma2: f64, lo: f64, hi: f64) -> Result<Self> {
        if !mu.is_finite() {
            return Err(Error::Domain(format!("truncated normal mean {mu} is not finite")));
        }
        if !(sigma2 > 0.0 && sigma2.is_finite()) {
            return Err(Error::Domain(format!(
                "truncated normal variance {sigma2} must be positive"
            )));
        }
        if !(lo < hi) || lo.is_nan() || hi.is_nan() {
            return Err(Error::Domain(format!("empty truncation interval [{lo}, {hi}]")));
        }
        let sigma = sigma2.sqrt();
        let (a, b) = ((lo - mu) / sigma, (hi - mu) / sigma);
        // Work in whichever tail keeps both CDF values small.
        let z = if a > 0.0 {
            norm_cdf(-a) - norm_cdf(-b)
        } else {
            norm_cdf(b) - norm_cdf(a)
        };
        if !(z > 0.0) {
            return Err(Error::Domain(format!(
                "truncation normalizer underflows for mean {mu}, variance {sigma2} on [{lo}, {hi}]"
            )));
        }
        Ok(Self {
            mu,
            sigma,
            lo,
            hi,
            log_z: z.ln(),
        })
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma * self.sigma
    }

    /// Log of the truncation normalizer `Phi(b') - Phi(a')`.
    pub fn log_normalizer(&self) -> f64 {
        self.log_z
    }

    /// Log density; `-inf` outside the support.
    pub fn logpdf(&self, x: f64) -> f64 {
        if !(x >= self.lo && x <= self.hi) {
            return f64::NEG_INFINITY;
        }
        norm_logpdf((x - self.mu) / self.sigma) - self.sigma.ln() - self.log_z
    }

    /// Inverse-CDF draw; consumes exactly one uniform.
    pub fn sample(&self, rng: &mut SeededRng) -> f64 {
        let u = rng.uniform_open();
        self.quantile(u)
    }

    /// Quantile of the truncated law at level `u` in (0, 1).
    pub fn quantile(&self, u: f64) -> f64 {
        let (mut a, mut b) = ((self.lo - self.mu) / self.sigma, (self.hi - self.mu) / self.sigma);
        let flip = a > 0.0;
        let mut u = u;
        if flip {
            // sample -Z on [-b, -a], which lies in the lower tail
            (a, b) = (-b, -a);
            u = 1.0 - u;
        }
        let (pa, pb) = (norm_cdf(a), norm_cdf(b));
        let p = (pa + u * (pb - pa)).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0);
        let mut z = norm_quantile(p).unwrap_or(0.0);
        if flip {
            z = -z;
        }
        (self.mu + self.sigma * z).clamp(self.lo, self.hi)
    }

    /// Closed-form mean of the truncated law.
    pub fn mean(&self) -> f64 {
        let (a, b) = ((self.lo - self.mu) / self.sigma, (self.hi - self.mu) / self.sigma);
        let pdf = |x: f64| if x.is_finite() { norm_logpdf(x).exp() } else { 0.0 };
        self.mu + self.sigma * (pdf(a) - pdf(b)) / self.log_z.exp()
    }
}

pub fn sample_trunc_normal(rng: &mut SeededRng, params: &TruncNormal) -> f64 {
    params.sample(rng)
}

pub fn trunc_normal_logpdf(q: f64, params: &TruncNormal) -> f64 {
    params.logpdf(q)
}

/// Exact binomial draw: inversion for small means, transformed rejection
/// (Hormann's BTRD hat, exact log-pmf acceptance) otherwise.
pub fn sample_binomial(rng: &mut SeededRng, n: u64, p: f64) -> Result<u64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Domain(format!("binomial probability {p} outside [0, 1]")));
    }
    Ok(binomial_unchecked(rng, n, p))
}

pub(crate) fn binomial_unchecked(rng: &mut SeededRng, n: u64, p: f64) -> u64 {
    if n == 0 || p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return n;
    }
    if p > 0.5 {
        return n - binomial_unchecked(rng, n, 1.0 - p);
    }
    if n as f64 * p <= BINOMIAL_INVERSION_MAX_MEAN {
        binomial_inversion(rng, n, p)
    } else {
        binomial_btrd(rng, n, p)
    }
}

fn binomial_inversion(rng: &mut SeededRng, n: u64, p: f64) -> u64 {
    let q = 1.0 - p;
    let s = p / q;
    let a = (n as f64 + 1.0) * s;
    let r0 = (n as f64 * (-p).ln_1p()).exp();
    'draw: loop {
        let mut u = rng.uniform_open();
        let mut r = r0;
        let mut k = 0u64;
        loop {
            if u < r {
                return k;
            }
            u -= r;
            k += 1;
            if k > n {
                continue 'draw;
            }
            r *= a / k as f64 - s;
            if r <= 0.0 {
                // ran off the representable tail; redraw
                continue 'draw;
            }
        }
    }
}

fn binomial_btrd(rng: &mut SeededRng, n: u64, p: f64) -> u64 {
    let nf = n as f64;
    let spq = (nf * p * (1.0 - p)).sqrt();
    let b = 1.15 + 2.53 * spq;
    let a = -0.0873 + 0.0248 * b + 0.01 * p;
    let c = nf * p + 0.5;
    let v_r = 0.92 - 4.2 / b;
    let alpha = (2.83 + 5.1 / b) * spq;
    let mode = ((nf + 1.0) * p).floor();
    let log_pmf = |k: f64| {
        -ln_factorial(k) - ln_factorial(nf - k) + k * p.ln() + (nf - k) * (-p).ln_1p()
    };
    let log_pmf_mode = log_pmf(mode);
    loop {
        let u = rng.uniform() - 0.5;
        let v = rng.uniform_open();
        let us = 0.5 - u.abs();
        let k = ((2.0 * a / us + b) * u + c).floor();
        if us >= 0.07 && v <= v_r {
            return k as u64;
        }
        if k < 0.0 || k > nf {
            continue;
        }
        let v = (v * alpha / (a / (us * us) + b)).ln();
        if v <= log_pmf(k) - log_pmf_mode {
            return k as u64;
        }
    }
}

/// Multinomial draw by conditional binomials in index order.
pub fn sample_multinomial(rng: &mut SeededRng, n: u64, p: &[f64]) -> Result<Vec<u64>> {
    let total: f64 = p.iter().sum();
    if p.is_empty() || p.iter().any(|v| !(0.0..=1.0).contains(v)) || (total - 1.0).abs() > 1e-9 {
        return Err(Error::Domain("multinomial probabilities must form a probability vector".into()));
    }
    let mut out = vec![0; p.len()];
    multinomial_into(rng, n, p, &mut out);
    Ok(out)
}

/// Unchecked multinomial into `out`. Zero-probability cells are skipped and
/// the last positive cell receives the remainder, so the counts always sum to `n`.
pub(crate) fn multinomial_into(rng: &mut SeededRng, n: u64, p: &[f64], out: &mut [u64]) {
    out.iter_mut().for_each(|o| *o = 0);
    let Some(last) = p.iter().rposition(|v| *v > 0.0) else {
        return;
    };
    let mut remaining = n;
    let mut mass: f64 = p[..=last].iter().sum();
    for k in 0..last {
        if remaining == 0 {
            return;
        }
        if p[k] <= 0.0 {
            continue;
        }
        let cond = if mass > 0.0 { (p[k] / mass).min(1.0) } else { 1.0 };
        let draw = binomial_unchecked(rng, remaining, cond);
        out[k] = draw;
        remaining -= draw;
        mass -= p[k];
    }
    out[last] = remaining;
}
