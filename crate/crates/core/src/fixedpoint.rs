//! Single-hop WLAN model: n homogeneous stations, each offered λ packets
//! per µs, and the map Ψ from offered load to mean service rate.
//!
//! Rates are per microsecond throughout; multiply by 1e6 for packets/s.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::macsim::MacConfig;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WlanModel {
    /// Stations, at least two.
    pub n: u32,
    /// Slot length, µs.
    pub sigma: f64,
    /// Mean packet transmission time, µs.
    pub t_s: f64,
    /// Mean backoff window per retry stage, slots; `b.len() - 1` is the retry limit.
    pub b: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FixedPointResult {
    /// Packets per µs.
    pub lambda_star: f64,
    pub beta_star: f64,
    pub gamma_star: f64,
    pub iterations: usize,
    pub converged: bool,
    /// λ_k per step, starting with λ_0.
    pub trace: Vec<f64>,
    /// Whether Ψ(λ_0) > λ_0 held at the start.
    pub precondition_held: bool,
}

impl FixedPointResult {
    pub fn is_monotone_nondecreasing(&self) -> bool {
        self.trace.windows(2).all(|w| w[1] >= w[0])
    }
}

impl WlanModel {
    /// `b_i = 2^i · b_0` for i = 0..=k.
    pub fn canonical(n: u32, sigma: f64, t_s: f64, b0: f64, k: u32) -> Result<Self> {
        let b = (0..=k).map(|i| b0 * 2f64.powi(i as i32)).collect();
        Self { n, sigma, t_s, b }.validated()
    }

    /// Windows from a MAC configuration: `b_i = min(2^i·(cw_min+1), cw_max+1)/2`.
    pub fn from_mac(n: u32, mac: &MacConfig, t_s: f64, k: u32) -> Result<Self> {
        let b = (0..=k)
            .map(|i| {
                let grown = f64::from(mac.cw_min + 1) * 2f64.powi(i as i32);
                grown.min(f64::from(mac.cw_max + 1)) / 2.0
            })
            .collect();
        Self {
            n,
            sigma: mac.slot_us as f64,
            t_s,
            b,
        }
        .validated()
    }

    pub fn validated(self) -> Result<Self> {
        if self.n < 2 {
            return Err(Error::ModelDomain(format!(
                "need at least two stations, got n = {}",
                self.n
            )));
        }
        if !(self.sigma > 0.0) || !(self.t_s > 0.0) {
            return Err(Error::ModelDomain(format!(
                "slot and transmission time must be positive (sigma = {}, t_s = {})",
                self.sigma, self.t_s
            )));
        }
        if self.b.is_empty() || self.b.iter().any(|&x| !(x > 0.0)) {
            return Err(Error::ModelDomain("backoff means must be positive".into()));
        }
        Ok(self)
    }

    pub fn b0(&self) -> f64 {
        self.b[0]
    }

    fn c(&self) -> f64 {
        f64::from(self.n) / f64::from(self.n - 1)
    }

    pub fn gamma_of(&self, beta: f64) -> f64 {
        1.0 - (1.0 - beta).powi(self.n as i32 - 1)
    }

    /// Mean service time for collision probability γ, µs.
    pub fn service_time(&self, gamma: f64) -> f64 {
        let backoff: f64 = self.b.iter().rev().fold(0.0, |acc, &bi| acc * gamma + bi);
        backoff * (self.sigma + self.c() * gamma * self.t_s)
    }

    /// Largest admissible offered load: beyond it the attempt rate reaches one.
    pub fn overload_lambda(&self) -> f64 {
        1.0 / (2.0 * self.sigma + self.c() * self.t_s)
    }

    /// Ψ(0) = 1/(b_0·σ), the upper end of the search bracket.
    pub fn psi_zero(&self) -> f64 {
        1.0 / (self.b0() * self.sigma)
    }

    /// Ψ on the overload boundary, 1/((Σb_i)(σ + n/(n−1)·T_s)).
    pub fn psi_floor(&self) -> f64 {
        1.0 / self.service_time(1.0)
    }
}

/// Solves β = λσ + λγ(σ + n/(n−1)·T_s), γ = 1 − (1−β)^(n−1).
pub fn solve_attempt_rate(model: &WlanModel, lambda: f64) -> Result<(f64, f64)> {
    if !(lambda >= 0.0) {
        return Err(Error::ModelDomain(format!(
            "offered load must be nonnegative, got {lambda}"
        )));
    }
    if lambda == 0.0 {
        return Ok((0.0, 0.0));
    }
    if lambda >= model.overload_lambda() {
        return Err(Error::Overload { lambda });
    }
    let a = lambda * model.sigma;
    let m = lambda * (model.sigma + model.c() * model.t_s);
    // h is concave with h(0) > 0 > h(1), so its root in (0, 1) is unique.
    let h = |beta: f64| a + m * model.gamma_of(beta) - beta;

    let mut beta = a;
    for _ in 0..500 {
        let next = 0.5 * beta + 0.5 * (a + m * model.gamma_of(beta));
        if (next - beta).abs() <= 1e-16 {
            beta = next;
            break;
        }
        beta = next;
    }
    if !(beta < 1.0) || h(beta).abs() > 1e-13 {
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if h(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        beta = 0.5 * (lo + hi);
    }
    Ok((beta, model.gamma_of(beta)))
}

/// Ψ(λ) = 1/S, packets per µs.
pub fn psi(model: &WlanModel, lambda: f64) -> Result<f64> {
    let (_, gamma) = solve_attempt_rate(model, lambda)?;
    Ok(1.0 / model.service_time(gamma))
}

/// Ψ continued past the overload boundary at its boundary value.
pub fn psi_saturated(model: &WlanModel, lambda: f64) -> f64 {
    match psi(model, lambda) {
        Ok(v) => v,
        Err(_) => model.psi_floor(),
    }
}

fn result_at(
    model: &WlanModel,
    lambda: f64,
    iterations: usize,
    converged: bool,
    trace: Vec<f64>,
    pre: bool,
) -> FixedPointResult {
    let (beta, gamma) = solve_attempt_rate(model, lambda).unwrap_or((1.0, 1.0));
    FixedPointResult {
        lambda_star: lambda,
        beta_star: beta,
        gamma_star: gamma,
        iterations,
        converged,
        trace,
        precondition_held: pre,
    }
}

/// Bisection on g(λ) = Ψ(λ) − λ over [0, 1/(b_0σ)].
///
/// Loads past the overload boundary count as g < 0: there the station is
/// saturated and Ψ has reached its floor, which lies below every such λ.
pub fn find_fixed_point(model: &WlanModel, tol: f64) -> Result<FixedPointResult> {
    let g = |l: f64| match psi(model, l) {
        Ok(p) => p - l,
        Err(Error::Overload { .. }) => -1.0,
        Err(e) => panic!("unexpected model error: {e}"),
    };
    let (mut lo, mut hi) = (0.0, model.psi_zero());
    if !(g(lo) > 0.0) || !(g(hi) < 0.0) {
        return Err(Error::ModelDomain(format!(
            "fixed point not bracketed on [0, {hi}] for {model:?}"
        )));
    }
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut lambda = 0.5 * (lo + hi);
    while iterations < 200 {
        lambda = 0.5 * (lo + hi);
        trace.push(lambda);
        iterations += 1;
        let v = g(lambda);
        if v.abs() <= 0.5 * tol * lambda || hi - lo <= f64::EPSILON * hi {
            break;
        }
        if v > 0.0 {
            lo = lambda;
        } else {
            hi = lambda;
        }
    }
    let converged = (psi(model, lambda)? - lambda).abs() <= tol * lambda;
    Ok(result_at(model, lambda, iterations, converged, trace, true))
}

/// λ_{k+1} = (1−α)·Ψ(λ_k) + α·λ_k until both the step and |Ψ(λ)−λ| fall below `tol` relative.
///
/// A step that lands past the overload boundary uses Ψ's boundary value.
pub fn capest_iterate(
    model: &WlanModel,
    lambda_0: f64,
    alpha: f64,
    tol: f64,
    max_iter: usize,
) -> Result<FixedPointResult> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::ModelDomain(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    if !(lambda_0 >= 0.0) {
        return Err(Error::ModelDomain(format!(
            "initial load must be nonnegative, got {lambda_0}"
        )));
    }
    let pre = psi_saturated(model, lambda_0) > lambda_0;
    let mut trace = vec![lambda_0];
    let mut lambda = lambda_0;
    for k in 1..=max_iter {
        let next = (1.0 - alpha) * psi_saturated(model, lambda) + alpha * lambda;
        trace.push(next);
        let step = (next - lambda).abs() / next.max(f64::MIN_POSITIVE);
        lambda = next;
        if step <= tol && (psi_saturated(model, lambda) - lambda).abs() <= tol * lambda {
            return Ok(result_at(model, lambda, k, true, trace, pre));
        }
    }
    Ok(result_at(model, lambda, max_iter, false, trace, pre))
}

/// The attempt-rate equation with λ = Ψ substituted; its fixed point is β*.
/// f(β) = (σ + γ(σ + n/(n−1)·T_s)) / S(γ), γ = γ(β).
pub fn beta_map(model: &WlanModel, beta: f64) -> f64 {
    let gamma = model.gamma_of(beta);
    (model.sigma + gamma * (model.sigma + model.c() * model.t_s)) / model.service_time(gamma)
}

/// Analytic f′(β) by the chain rule through γ.
pub fn beta_map_derivative(model: &WlanModel, beta: f64) -> f64 {
    let n = model.n as i32;
    let gamma = model.gamma_of(beta);
    let dgamma = f64::from(model.n - 1) * (1.0 - beta).powi(n - 2);
    let ct = model.c() * model.t_s;
    let num = model.sigma + gamma * (model.sigma + ct);
    let dnum = model.sigma + ct;
    let backoff: f64 = model.b.iter().rev().fold(0.0, |acc, &bi| acc * gamma + bi);
    let dbackoff: f64 = model
        .b
        .iter()
        .enumerate()
        .skip(1)
        .map(|(i, &bi)| i as f64 * bi * gamma.powi(i as i32 - 1))
        .sum();
    let e = model.sigma + ct * gamma;
    let den = backoff * e;
    let dden = dbackoff * e + backoff * ct;
    dgamma * (dnum * den - num * dden) / (den * den)
}

/// Richardson-extrapolated central difference of f at β with step h.
pub fn beta_map_derivative_fd(model: &WlanModel, beta: f64, h: f64) -> f64 {
    let d = |h: f64| (beta_map(model, beta + h) - beta_map(model, beta - h)) / (2.0 * h);
    (4.0 * d(h / 2.0) - d(h)) / 3.0
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ShapeReport {
    pub grid_size: usize,
    /// Upper end of the β grid; the grid spans (0, beta_max].
    pub beta_max: f64,
    /// Grid points where the first difference was not negative.
    pub nonnegative_slope: Vec<f64>,
    /// Grid points where the second difference was not negative.
    pub nonnegative_curvature: Vec<f64>,
    pub interior_points: usize,
}

impl ShapeReport {
    pub fn decreasing(&self) -> bool {
        self.nonnegative_slope.is_empty()
    }

    pub fn concave(&self) -> bool {
        self.nonnegative_curvature.is_empty()
    }
}

/// Central-difference scan of f′ and f″ over a uniform grid on (0, 1/b_0],
/// the interval that contains f's image and hence β*.
pub fn verify_shape(model: &WlanModel, grid_size: usize) -> Result<ShapeReport> {
    if grid_size < 100 {
        return Err(Error::ModelDomain(format!(
            "grid needs at least 100 points, got {grid_size}"
        )));
    }
    let beta_max = 1.0 / model.b0();
    let h = beta_max / grid_size as f64;
    let xs: Vec<f64> = (1..=grid_size).map(|i| i as f64 * h).collect();
    let fs: Vec<f64> = xs.iter().map(|&x| beta_map(model, x)).collect();
    let mut report = ShapeReport {
        grid_size,
        beta_max,
        nonnegative_slope: Vec::new(),
        nonnegative_curvature: Vec::new(),
        interior_points: grid_size.saturating_sub(2),
    };
    for i in 1..grid_size - 1 {
        let d1 = (fs[i + 1] - fs[i - 1]) / (2.0 * h);
        let d2 = (fs[i + 1] - 2.0 * fs[i] + fs[i - 1]) / (h * h);
        if d1 >= 0.0 {
            report.nonnegative_slope.push(xs[i]);
        }
        if d2 >= 0.0 {
            report.nonnegative_curvature.push(xs[i]);
        }
    }
    Ok(report)
}
