//! Helpers shared by the integration-test binaries.
#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use sensa::sim::{Config, Preset};

/// Relative error against the larger magnitude, safe at zero.
pub fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Draws a coefficient with random sign and magnitude bounded away from 0.
fn coef(rng: &mut ChaCha8Rng) -> f64 {
    let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    sign * rng.gen_range(0.2..0.8)
}

/// A random structural configuration with every loading active, suitable for
/// exercising the bias formulas away from degenerate corners.
pub fn random_config(rng: &mut ChaCha8Rng, zero_gamma_wy: bool) -> Config {
    Config {
        tau: rng.gen_range(-1.0..1.0),
        beta_u: coef(rng),
        beta_wy: coef(rng),
        beta_wz: coef(rng),
        gamma_u: coef(rng),
        gamma_wy: if zero_gamma_wy { 0.0 } else { coef(rng) },
        gamma_wz: coef(rng),
        alpha_u: coef(rng),
        alpha_wz: coef(rng),
        phi_u: coef(rng),
        sd_u: 1.0,
        sd_wz: rng.gen_range(0.7..1.3),
        sd_wy: rng.gen_range(0.7..1.3),
        sd_z: rng.gen_range(0.7..1.3),
        sd_y: rng.gen_range(0.7..1.3),
        ..Config::preset(Preset::Confounded)
    }
}

/// Draws random configurations until `accept` passes, guarding against an
/// unlucky stretch with a hard cap.
pub fn random_config_where(
    rng: &mut ChaCha8Rng,
    zero_gamma_wy: bool,
    accept: impl Fn(&Config) -> bool,
) -> Config {
    for _ in 0..1000 {
        let c = random_config(rng, zero_gamma_wy);
        if accept(&c) {
            return c;
        }
    }
    panic!("no acceptable configuration in 1000 draws");
}
