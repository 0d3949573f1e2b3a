//! Per-link service-time estimator and residual capacity.

use crate::error::{Error, Result};
use crate::macsim::{LinkMeasurements, PacketOutcome};
use crate::topo::LinkId;

/// Loss probability is clamped this far below one.
pub const LOSS_CLAMP_EPS: f64 = 1e-3;

/// How MAC drops enter the mean service time.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum LossAccounting {
    /// A drop contributes its time in the MAC plus the expected remaining
    /// service had it not been dropped.
    #[default]
    Expected,
    /// Drops are ignored.
    Ignore,
}

/// Parameters for converting a drop into a synthetic service sample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossModel {
    /// Largest backoff window, slots.
    pub w_m: u32,
    pub slot_us: f64,
    /// Attempts a dropped packet went through.
    pub retransmit_limit: u32,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ServiceEstimator {
    sum: f64,
    k: u64,
    airtime_sum: f64,
    k_t: u64,
    sent: u64,
    lost: u64,
    saturated_lossy: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ResidualEstimate {
    pub link: LinkId,
    /// 1/S̄, packets/s.
    pub service_rate: f64,
    /// service_rate − λ, packets/s; may be negative.
    pub residual: f64,
    /// Mean payload airtime, µs.
    pub t_bar: f64,
}

impl ServiceEstimator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Mean service time S̄ in µs, 0 before any sample.
    pub fn s_bar(&self) -> f64 {
        if self.k == 0 {
            0.0
        } else {
            self.sum / self.k as f64
        }
    }

    pub fn k(&self) -> u64 {
        self.k
    }

    /// Mean payload airtime T̄ in µs, 0 before any success.
    pub fn t_bar(&self) -> f64 {
        if self.k_t == 0 {
            0.0
        } else {
            self.airtime_sum / self.k_t as f64
        }
    }

    pub fn k_t(&self) -> u64 {
        self.k_t
    }

    /// Packets lost over packets handed to the MAC.
    pub fn loss_ratio(&self) -> f64 {
        if self.sent == 0 {
            0.0
        } else {
            self.lost as f64 / self.sent as f64
        }
    }

    /// Set once a drop had to use the clamped loss probability.
    pub fn saturated_lossy(&self) -> bool {
        self.saturated_lossy
    }

    /// Folds one service time (µs) into the running mean.
    ///
    /// The mean is kept as a sum over a count, which equals the incremental
    /// form `(S̄·K + s)/(K+1)` without its accumulated rounding.
    pub fn update_service(&mut self, s_last: f64) {
        debug_assert!(s_last > 0.0, "service time must be positive");
        self.sum += s_last;
        self.k += 1;
    }

    /// A packet handed to the MAC completed successfully.
    pub fn record_success(&mut self, service_us: f64) {
        self.sent += 1;
        self.update_service(service_us);
    }

    /// Per-attempt loss probability implied by the drop ratio when every
    /// dropped packet used `retransmit_limit` independent attempts.
    pub fn attempt_loss_probability(&self, retransmit_limit: u32) -> f64 {
        self.loss_ratio()
            .powf(1.0 / f64::from(retransmit_limit.max(1)))
    }

    /// Records a MAC drop and feeds its synthetic service time
    /// `time_in_mac + (W_m·slot/2 + T_s)/(1 − p_loss)`. Returns the sample.
    pub fn account_lost_packet(
        &mut self,
        time_in_mac_us: f64,
        model: &LossModel,
        t_s_us: f64,
    ) -> f64 {
        self.sent += 1;
        self.lost += 1;
        self.add_lost_sample(time_in_mac_us, model, t_s_us)
    }

    fn add_lost_sample(&mut self, time_in_mac_us: f64, model: &LossModel, t_s_us: f64) -> f64 {
        let mut p_loss = self.attempt_loss_probability(model.retransmit_limit);
        if p_loss > 1.0 - LOSS_CLAMP_EPS {
            p_loss = 1.0 - LOSS_CLAMP_EPS;
            self.saturated_lossy = true;
        }
        let sample = lost_packet_sample(time_in_mac_us, model.w_m, model.slot_us, t_s_us, p_loss);
        self.update_service(sample);
        sample
    }

    /// Folds one successful packet's airtime, `bytes·8/rate`, into T̄.
    pub fn update_airtime(&mut self, bytes: u32, rate_bps: f64) {
        debug_assert!(bytes > 0 && rate_bps > 0.0);
        self.airtime_sum += f64::from(bytes) * 8.0 / rate_bps * 1e6;
        self.k_t += 1;
    }

    pub fn residual(&self, link: LinkId, lambda: f64) -> Result<ResidualEstimate> {
        if self.k == 0 {
            return Err(Error::NoMeasurement(link));
        }
        let service_rate = 1e6 / self.s_bar();
        Ok(ResidualEstimate {
            link,
            service_rate,
            residual: service_rate - lambda,
            t_bar: self.t_bar(),
        })
    }

    pub fn reset(&mut self) {
        *self = Self::default();
    }

    /// Feeds one iteration's outcomes.
    ///
    /// Drops are tallied before any sample is added, so every synthetic
    /// sample uses the batch loss ratio and the result does not depend on
    /// outcome order. `t_s_us` is the transmission time used for dropped
    /// packets; by default callers pass the link's data-frame airtime.
    pub fn ingest(
        &mut self,
        meas: &LinkMeasurements,
        accounting: LossAccounting,
        model: &LossModel,
        t_s_us: f64,
    ) {
        let drops = meas
            .outcomes
            .iter()
            .filter(|o| matches!(o, PacketOutcome::Drop { .. }))
            .count() as u64;
        self.sent += meas.outcomes.len() as u64;
        self.lost += drops;
        for outcome in &meas.outcomes {
            match *outcome {
                PacketOutcome::Success {
                    service_us,
                    bytes,
                    rate_bps,
                    ..
                } => {
                    self.update_service(service_us as f64);
                    self.update_airtime(bytes, rate_bps);
                }
                PacketOutcome::Drop { time_in_mac_us, .. } => {
                    if accounting == LossAccounting::Expected {
                        self.add_lost_sample(time_in_mac_us as f64, model, t_s_us);
                    }
                }
            }
        }
    }
}

/// `time_in_mac + (W_m·slot/2 + T_s)/(1 − p_loss)`, µs.
pub fn lost_packet_sample(
    time_in_mac_us: f64,
    w_m: u32,
    slot_us: f64,
    t_s_us: f64,
    p_loss: f64,
) -> f64 {
    time_in_mac_us + (f64::from(w_m) * slot_us / 2.0 + t_s_us) / (1.0 - p_loss)
}
