//! Minimal-model virtual patient: plasma glucose with remote insulin action, a two-depot
//! subcutaneous insulin route and a two-compartment gut.

use bolus_core::{Error, Result};
use serde::{Deserialize, Serialize};

/// Glucose level at which the nominal basal rate holds the patient in steady state.
pub const BASAL_TARGET_MG_DL: f64 = 120.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatientParams {
    /// Glucose effectiveness, 1/min.
    pub s_g: f64,
    /// Remote insulin action at the basal steady state, 1/min.
    pub x_b: f64,
    /// Insulin sensitivity, (1/min) per (mU/L).
    pub s_i: f64,
    /// Remote insulin action rate, 1/min.
    pub p2: f64,
    /// Plasma insulin clearance, 1/min.
    pub k_e: f64,
    /// Insulin distribution volume, L/kg.
    pub v_i: f64,
    /// Glucose distribution volume, dL/kg.
    pub v_g: f64,
    /// Body mass, kg.
    pub bw: f64,
    /// Subcutaneous insulin absorption time constant, min.
    pub tau_i: f64,
    /// Meal absorption time constant, min.
    pub tau_m: f64,
    /// Carbohydrate bioavailability.
    pub f: f64,
}

impl Default for PatientParams {
    fn default() -> Self {
        PatientParams {
            s_g: 0.005,
            x_b: 0.01,
            s_i: 8e-4,
            p2: 0.03,
            k_e: 0.14,
            v_i: 0.12,
            v_g: 1.6,
            bw: 70.0,
            tau_i: 55.0,
            tau_m: 40.0,
            f: 0.9,
        }
    }
}

impl PatientParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("s_g", self.s_g),
            ("x_b", self.x_b),
            ("s_i", self.s_i),
            ("p2", self.p2),
            ("k_e", self.k_e),
            ("v_i", self.v_i),
            ("v_g", self.v_g),
            ("bw", self.bw),
            ("tau_i", self.tau_i),
            ("tau_m", self.tau_m),
            ("f", self.f),
        ];
        for (name, v) in fields {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidParameter {
                    name,
                    reason: format!("must be finite and > 0, got {v}"),
                });
            }
        }
        if self.f > 1.0 {
            return Err(Error::InvalidParameter {
                name: "f",
                reason: format!("bioavailability must be <= 1, got {}", self.f),
            });
        }
        Ok(())
    }

    /// Endogenous glucose production, mg/dL/min, balancing clearance at the basal target.
    pub fn egp(&self) -> f64 {
        (self.s_g + self.x_b) * BASAL_TARGET_MG_DL
    }

    /// Plasma insulin (mU/L) sustained by a constant basal rate.
    pub fn steady_insulin(&self, basal_u_per_h: f64) -> f64 {
        basal_u_per_h / 60.0 * 1000.0 / (self.v_i * self.bw * self.k_e)
    }

    /// Basal rate (U/h) whose fasting fixed point is [`BASAL_TARGET_MG_DL`].
    pub fn nominal_basal(&self) -> f64 {
        let insulin = self.x_b / self.s_i;
        insulin * self.v_i * self.bw * self.k_e / 1000.0 * 60.0
    }

    /// Fasting steady state under a constant basal rate.
    pub fn steady_state(&self, basal_u_per_h: f64) -> PatientState {
        let r = basal_u_per_h / 60.0;
        let i = self.steady_insulin(basal_u_per_h);
        let x = self.s_i * i;
        PatientState {
            g: self.egp() / (self.s_g + x),
            x,
            i,
            s1: r * self.tau_i,
            s2: r * self.tau_i,
            q1: 0.0,
            q2: 0.0,
        }
    }

    /// Model-implied carbohydrate ratio (g/U) at glucose level `g`: grams whose absorbed
    /// glucose equals the disposal driven by one unit over its full action.
    pub fn model_carb_ratio(&self, g: f64) -> f64 {
        g * self.s_i * self.v_g / (self.v_i * self.k_e * self.f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatientState {
    /// Plasma glucose, mg/dL.
    pub g: f64,
    /// Remote insulin action, 1/min.
    pub x: f64,
    /// Plasma insulin, mU/L.
    pub i: f64,
    /// Subcutaneous depots, U.
    pub s1: f64,
    pub s2: f64,
    /// Gut compartments, g.
    pub q1: f64,
    pub q2: f64,
}

impl PatientState {
    fn to_array(self) -> [f64; 7] {
        [self.g, self.x, self.i, self.s1, self.s2, self.q1, self.q2]
    }

    fn from_array(a: [f64; 7]) -> Self {
        PatientState {
            g: a[0],
            x: a[1],
            i: a[2],
            s1: a[3],
            s2: a[4],
            q1: a[5],
            q2: a[6],
        }
    }
}

/// Inputs over one integration step. Bolus and meal are impulses applied at the start.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepInputs {
    pub basal_u_per_h: f64,
    pub bolus_u: f64,
    pub meal_g: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VirtualPatient {
    pub params: PatientParams,
    pub state: PatientState,
}

impl VirtualPatient {
    /// Patient at the fasting steady state of `basal_u_per_h`.
    pub fn at_steady_state(params: PatientParams, basal_u_per_h: f64) -> Result<Self> {
        params.validate()?;
        Ok(VirtualPatient {
            state: params.steady_state(basal_u_per_h),
            params,
        })
    }

    fn derivative(&self, s: &[f64; 7], basal_per_min: f64) -> [f64; 7] {
        let p = &self.params;
        let [g, x, i, s1, s2, q1, q2] = *s;
        let ra = p.f * q2 / p.tau_m * 1000.0;
        [
            -(p.s_g + x) * g + p.egp() + ra / (p.v_g * p.bw),
            -p.p2 * x + p.p2 * p.s_i * i,
            s2 / p.tau_i * 1000.0 / (p.v_i * p.bw) - p.k_e * i,
            basal_per_min - s1 / p.tau_i,
            (s1 - s2) / p.tau_i,
            -q1 / p.tau_m,
            (q1 - q2) / p.tau_m,
        ]
    }

    /// Advances the state by `dt` minutes with one classical Runge–Kutta step.
    pub fn step(&mut self, inputs: StepInputs, dt: f64) -> Result<()> {
        if !(dt > 0.0 && dt <= 5.0) {
            return Err(Error::InvalidParameter {
                name: "dt",
                reason: format!("must lie in (0, 5] minutes, got {dt}"),
            });
        }
        if !(inputs.bolus_u >= 0.0 && inputs.meal_g >= 0.0 && inputs.basal_u_per_h >= 0.0) {
            return Err(Error::InvalidParameter {
                name: "inputs",
                reason: "basal, bolus and meal must be >= 0".into(),
            });
        }
        self.state.s1 += inputs.bolus_u;
        self.state.q1 += inputs.meal_g;
        let r = inputs.basal_u_per_h / 60.0;
        let y = self.state.to_array();
        let add = |a: &[f64; 7], b: &[f64; 7], h: f64| -> [f64; 7] {
            let mut out = *a;
            for (o, v) in out.iter_mut().zip(b) {
                *o += h * v;
            }
            out
        };
        let k1 = self.derivative(&y, r);
        let k2 = self.derivative(&add(&y, &k1, dt / 2.0), r);
        let k3 = self.derivative(&add(&y, &k2, dt / 2.0), r);
        let k4 = self.derivative(&add(&y, &k3, dt), r);
        let mut next = y;
        for j in 0..7 {
            next[j] += dt / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
            // compartments decay linearly with time constants far above dt; this only
            // absorbs round-off
            next[j] = next[j].max(0.0);
        }
        if next.iter().any(|v| !v.is_finite()) || !(next[0] > 0.0) {
            return Err(Error::NonFinite("patient state"));
        }
        self.state = PatientState::from_array(next);
        Ok(())
    }

    pub fn glucose(&self) -> f64 {
        self.state.g
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nominal() -> VirtualPatient {
        let p = PatientParams::default();
        VirtualPatient::at_steady_state(p, p.nominal_basal()).unwrap()
    }

    #[test]
    fn nominal_basal_holds_target() {
        let mut v = nominal();
        assert!((v.glucose() - BASAL_TARGET_MG_DL).abs() < 1e-9);
        let basal = v.params.nominal_basal();
        for _ in 0..1440 {
            v.step(StepInputs { basal_u_per_h: basal, ..Default::default() }, 1.0).unwrap();
            assert!((v.glucose() - 120.0).abs() < 2.0);
        }
    }

    #[test]
    fn derivative_vanishes_at_steady_state() {
        let v = nominal();
        let d = v.derivative(&v.state.to_array(), v.params.nominal_basal() / 60.0);
        for x in d {
            assert!(x.abs() < 1e-12, "{d:?}");
        }
    }

    #[test]
    fn unbolused_meal_raises_glucose_for_an_hour() {
        let mut v = nominal();
        let basal = v.params.nominal_basal();
        let mut prev = v.glucose();
        for m in 0..60 {
            let meal_g = if m == 0 { 50.0 } else { 0.0 };
            v.step(StepInputs { basal_u_per_h: basal, meal_g, ..Default::default() }, 1.0).unwrap();
            assert!(v.glucose() > prev, "minute {m}");
            prev = v.glucose();
        }
    }

    #[test]
    fn bolus_alone_lowers_glucose() {
        let mut v = nominal();
        let basal = v.params.nominal_basal();
        v.step(StepInputs { basal_u_per_h: basal, bolus_u: 2.0, ..Default::default() }, 1.0).unwrap();
        // absorption delay
        for _ in 0..10 {
            v.step(StepInputs { basal_u_per_h: basal, ..Default::default() }, 1.0).unwrap();
        }
        let mut prev = v.glucose();
        for _ in 0..100 {
            v.step(StepInputs { basal_u_per_h: basal, ..Default::default() }, 1.0).unwrap();
            assert!(v.glucose() < prev);
            prev = v.glucose();
        }
    }

    #[test]
    fn rejects_bad_step() {
        let mut v = nominal();
        assert!(v.step(StepInputs::default(), 0.0).is_err());
        assert!(v.step(StepInputs::default(), 6.0).is_err());
        assert!(v
            .step(StepInputs { bolus_u: -1.0, ..Default::default() }, 1.0)
            .is_err());
    }

    #[test]
    fn no_insulin_rises_toward_hepatic_ceiling() {
        let p = PatientParams::default();
        let mut v = VirtualPatient::at_steady_state(p, p.nominal_basal()).unwrap();
        let ceiling = p.egp() / p.s_g;
        let mut prev = v.glucose();
        for _ in 0..(3 * 1440) {
            v.step(StepInputs::default(), 5.0).unwrap();
            assert!(v.glucose() >= prev - 1e-12);
            assert!(v.glucose() <= ceiling);
            prev = v.glucose();
        }
    }
}
