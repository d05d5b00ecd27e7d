use bolus_insilico::cohort::Cohort;
use bolus_insilico::patient::{PatientParams, StepInputs, VirtualPatient};

fn day_with_meals(params: PatientParams, dt: f64) -> f64 {
    let basal = params.nominal_basal();
    let mut v = VirtualPatient::at_steady_state(params, basal).unwrap();
    let steps = (1440.0 / dt).round() as usize;
    let per_minute = (1.0 / dt).round() as usize;
    for k in 0..steps {
        let minute = k / per_minute;
        let at_minute_start = k % per_minute == 0;
        let (meal_g, bolus_u) = match minute {
            180 if at_minute_start => (60.0, 4.0),
            420 if at_minute_start => (80.0, 6.0),
            780 if at_minute_start => (70.0, 5.0),
            _ => (0.0, 0.0),
        };
        v.step(
            StepInputs {
                basal_u_per_h: basal,
                bolus_u,
                meal_g,
            },
            dt,
        )
        .unwrap();
    }
    v.glucose()
}

#[test]
fn halving_dt_barely_moves_the_endpoint() {
    for p in Cohort::shipped().patients {
        let coarse = day_with_meals(p.params, 1.0);
        let fine = day_with_meals(p.params, 0.5);
        assert!((coarse - fine).abs() < 0.5, "{}: {coarse} vs {fine}", p.id);
    }
}

#[test]
fn every_cohort_patient_is_steady_at_nominal_basal() {
    for p in Cohort::shipped().patients {
        let mut v = VirtualPatient::at_steady_state(p.params, p.basal_u_per_h).unwrap();
        for _ in 0..1440 {
            v.step(
                StepInputs {
                    basal_u_per_h: p.basal_u_per_h,
                    ..Default::default()
                },
                1.0,
            )
            .unwrap();
            assert!((v.glucose() - 120.0).abs() < 2.0, "{}", p.id);
        }
    }
}

#[test]
fn excess_insulin_falls_monotonically_to_its_floor() {
    let params = PatientParams::default();
    let basal = 3.0 * params.nominal_basal();
    let floor = params.steady_state(basal).g;
    let mut v = VirtualPatient::at_steady_state(params, params.nominal_basal()).unwrap();
    let mut prev = v.glucose();
    for _ in 0..(3 * 1440) {
        v.step(
            StepInputs {
                basal_u_per_h: basal,
                ..Default::default()
            },
            1.0,
        )
        .unwrap();
        assert!(v.glucose() <= prev + 1e-12);
        assert!(v.glucose() >= floor - 1e-9);
        prev = v.glucose();
    }
    assert!((v.glucose() - floor).abs() < 0.5);
}

#[test]
fn compartments_stay_nonnegative_under_heavy_dosing() {
    let params = PatientParams::default();
    let mut v = VirtualPatient::at_steady_state(params, 0.0).unwrap();
    for m in 0..600 {
        let bolus_u = if m == 0 { 15.0 } else { 0.0 };
        v.step(
            StepInputs {
                basal_u_per_h: 0.0,
                bolus_u,
                meal_g: 0.0,
            },
            5.0,
        )
        .unwrap();
        let s = v.state;
        for x in [s.g, s.x, s.i, s.s1, s.s2, s.q1, s.q2] {
            assert!(x >= 0.0);
        }
        assert!(s.g > 0.0);
    }
}
