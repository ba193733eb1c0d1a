//! Phi-divergence balls around a Gaussian nominal distribution.
//!
//! The worst-case chance constraint over the ball is equivalent to a nominal
//! chance constraint at the tightened level `f(theta, eps)`, which for a
//! Gaussian nominal becomes a second-order cone constraint with multiplier
//! `Phi^{-1}(f)`.

use std::f64::consts::SQRT_2;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::ambiguity::RiskLevel;
use crate::linalg::cholesky_lower;
use crate::mdp::OccupationPolytope;
use crate::moments::{kappa_socp, PolicyProgram};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Divergence {
    #[serde(alias = "kl")]
    KullbackLeibler,
    #[serde(alias = "var")]
    Variation,
    #[serde(alias = "mchi2")]
    ModifiedChi2,
    Hellinger,
}

impl Divergence {
    pub fn short_name(self) -> &'static str {
        match self {
            Divergence::KullbackLeibler => "kl",
            Divergence::Variation => "variation",
            Divergence::ModifiedChi2 => "mchi2",
            Divergence::Hellinger => "hellinger",
        }
    }
}

impl std::str::FromStr for Divergence {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "kl" | "kullback_leibler" => Divergence::KullbackLeibler,
            "var" | "variation" => Divergence::Variation,
            "mchi2" | "modified_chi2" => Divergence::ModifiedChi2,
            "hellinger" => Divergence::Hellinger,
            other => return Err(Error::Domain(format!("unknown divergence '{other}'"))),
        })
    }
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

/// Standard normal quantile: Wichura's AS241 rational approximation followed
/// by one Newton step against the complementary error function.
pub fn normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("quantile level {p} outside (0, 1)")));
    }
    let x = as241(p);
    let density = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    if density <= 0.0 {
        return Ok(x);
    }
    Ok(x - (normal_cdf(x) - p) / density)
}

fn poly(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &k| acc * x + k)
}

fn as241(p: f64) -> f64 {
    const A: [f64; 8] = [
        3.387_132_872_796_366_5,
        133.141_667_891_784_38,
        1_971.590_950_306_551_3,
        13_731.693_765_509_46,
        45_921.953_931_549_87,
        67_265.770_927_008_7,
        33_430.575_583_588_13,
        2_509.080_928_730_122_7,
    ];
    const B: [f64; 8] = [
        1.0,
        42.313_330_701_600_91,
        687.187_007_492_057_9,
        5_394.196_021_424_751,
        21_213.794_301_586_597,
        39_307.895_800_092_71,
        28_729.085_735_721_943,
        5_226.495_278_852_545,
    ];
    const C: [f64; 8] = [
        1.423_437_110_749_683_5,
        4.630_337_846_156_546,
        5.769_497_221_460_691,
        3.647_848_324_763_204_5,
        1.270_458_252_452_368_4,
        0.241_780_725_177_450_6,
        0.022_723_844_989_269_184,
        7.745_450_142_783_414e-4,
    ];
    const D: [f64; 8] = [
        1.0,
        2.053_191_626_637_759,
        1.676_384_830_183_803_8,
        0.689_767_334_985_1,
        0.148_103_976_427_480_08,
        0.015_198_666_563_616_457,
        5.475_938_084_995_345e-4,
        1.050_750_071_644_416_9e-9,
    ];
    const E: [f64; 8] = [
        6.657_904_643_501_103,
        5.463_784_911_164_114,
        1.784_826_539_917_291_3,
        0.296_560_571_828_504_9,
        0.026_532_189_526_576_124,
        0.001_242_660_947_388_078_4,
        2.711_555_568_743_487_6e-5,
        2.010_334_399_292_288_1e-7,
    ];
    const F: [f64; 8] = [
        1.0,
        0.599_832_206_555_888,
        0.136_929_880_922_735_8,
        0.014_875_361_290_850_615,
        7.868_691_311_456_133e-4,
        1.846_318_317_510_054_8e-5,
        1.421_511_758_316_446e-7,
        2.043_131_560_302_54e-15,
    ];
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180_625 - q * q;
        return q * poly(&A, r) / poly(&B, r);
    }
    let r = if q < 0.0 { p } else { 1.0 - p };
    let r = (-r.ln()).sqrt();
    let x = if r <= 5.0 {
        let r = r - 1.6;
        poly(&C, r) / poly(&D, r)
    } else {
        let r = r - 5.0;
        poly(&E, r) / poly(&F, r)
    };
    if q < 0.0 {
        -x
    } else {
        x
    }
}

fn check_theta(theta: f64) -> Result<()> {
    if theta > 0.0 && theta.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "radius theta = {theta} must be positive"
        )))
    }
}

pub fn f_variation(theta: f64, eps: RiskLevel) -> Result<f64> {
    check_theta(theta)?;
    Ok(1.0 - eps.get() + theta / 2.0)
}

pub fn f_modified_chi2(theta: f64, eps: RiskLevel) -> Result<f64> {
    check_theta(theta)?;
    let e = eps.get();
    if e >= 0.5 {
        return Err(Error::Domain(format!(
            "modified chi2 needs epsilon < 1/2, got {e}"
        )));
    }
    let root = (theta * theta + 4.0 * theta * (e - e * e)).sqrt();
    Ok(1.0 - e + (root - (1.0 - 2.0 * e) * theta) / (2.0 * theta + 2.0))
}

/// `(e^{-theta} x^{1-eps} - 1) / (x - 1)`, evaluated without cancellation
/// near `x = 1`.
pub fn kl_objective(x: f64, theta: f64, eps: f64) -> f64 {
    let num = ((1.0 - eps) * x.ln() - theta).exp_m1();
    num / (x - 1.0)
}

pub fn f_kullback_leibler(theta: f64, eps: RiskLevel) -> Result<f64> {
    check_theta(theta)?;
    let e = eps.get();
    let (mut lo, mut hi) = (1e-12, 1.0 - 1e-12);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - g * (hi - lo);
    let mut d = lo + g * (hi - lo);
    let mut fc = kl_objective(c, theta, e);
    let mut fd = kl_objective(d, theta, e);
    while hi - lo > 1e-10 {
        if fc <= fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - g * (hi - lo);
            fc = kl_objective(c, theta, e);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + g * (hi - lo);
            fd = kl_objective(d, theta, e);
        }
    }
    Ok(fc.min(fd))
}

pub fn f_hellinger(theta: f64, eps: RiskLevel) -> Result<f64> {
    check_theta(theta)?;
    if theta >= 2.0 - SQRT_2 {
        return Err(Error::Domain(format!(
            "Hellinger radius must be below 2 - sqrt(2), got {theta}"
        )));
    }
    let e = eps.get();
    // With sqrt(q) = cos(b) and 1 - theta/2 = cos(g) the closed form is
    // cos^2(b - g). Once g > b no nominal level keeps every distribution in
    // the ball above 1 - eps, and the formula would pick the wrong root.
    if 1.0 - theta / 2.0 < (1.0 - e).sqrt() {
        return Ok(1.0);
    }
    let s = (2.0 - theta) * (2.0 - theta);
    let b = -(2.0 - s) * e - s / 2.0;
    let delta = s * (4.0 - s) * e * (1.0 - e);
    Ok((-b + delta.sqrt()) / 2.0)
}

pub fn risk_transform(div: Divergence, theta: f64, eps: RiskLevel) -> Result<f64> {
    match div {
        Divergence::KullbackLeibler => f_kullback_leibler(theta, eps),
        Divergence::Variation => f_variation(theta, eps),
        Divergence::ModifiedChi2 => f_modified_chi2(theta, eps),
        Divergence::Hellinger => f_hellinger(theta, eps),
    }
}

#[derive(Clone, Debug)]
pub struct PhiAmbiguity {
    pub divergence: Divergence,
    pub theta: f64,
    pub epsilon: RiskLevel,
    pub mu: Vec<f64>,
    pub sigma: DMatrix<f64>,
    chol: DMatrix<f64>,
}

impl PhiAmbiguity {
    pub fn new(
        divergence: Divergence,
        theta: f64,
        epsilon: RiskLevel,
        mu: Vec<f64>,
        sigma: DMatrix<f64>,
    ) -> Result<Self> {
        if sigma.nrows() != mu.len() {
            return Err(Error::dim(
                "nominal covariance rows",
                mu.len(),
                sigma.nrows(),
            ));
        }
        // domain checks happen here so bad input is caught at parse time
        risk_transform(divergence, theta, epsilon)
            .map(|_| ())
            .or_else(|e| match e {
                Error::InfeasibleTransform(_) => Ok(()),
                e => Err(e),
            })?;
        let chol = cholesky_lower(&sigma)?;
        Ok(Self {
            divergence,
            theta,
            epsilon,
            mu,
            sigma,
            chol,
        })
    }

    pub fn cholesky(&self) -> &DMatrix<f64> {
        &self.chol
    }

    /// `Phi^{-1}(f(theta, eps))`; an `f` at or above one has no finite
    /// quantile and is reported as infeasible.
    pub fn kappa(&self) -> Result<f64> {
        let f = risk_transform(self.divergence, self.theta, self.epsilon)?;
        if f >= 1.0 {
            return Err(Error::InfeasibleTransform(f));
        }
        normal_quantile(f)
    }
}

pub fn build_phi_socp(poly: &OccupationPolytope, a: &PhiAmbiguity) -> Result<PolicyProgram> {
    kappa_socp(poly, &a.mu, &a.chol, a.kappa()?)
}
