use modev::formats::{
    read_control, read_measure, read_path, read_realization, write_control, write_measure, write_path,
    write_realization, write_summary, EstimateRow, Estimator,
};
use modev_core::prm::{sample_prm, ControlField};
use modev_core::{MarkMeasure, PathGrid};
use proptest::prelude::*;

proptest! {
    #[test]
    fn measure_round_trips(atoms in proptest::collection::vec((proptest::collection::vec(-1e3f64..1e3, 2), 0.0f64..10.0), 1..8)) {
        let nu = MarkMeasure::new(atoms.clone()).unwrap();
        let mut buf = Vec::new();
        write_measure(&nu, &mut buf).unwrap();
        let back = read_measure(buf.as_slice()).unwrap();
        prop_assert_eq!(back.len(), nu.len());
        for k in 0..nu.len() {
            prop_assert_eq!(back.mark(k), nu.mark(k));
            prop_assert_eq!(back.weight(k), nu.weight(k));
        }
    }

    #[test]
    fn realization_round_trips(seed in any::<u64>()) {
        let nu = MarkMeasure::scalar(&[(1.0, 0.5), (2.0, 1.5)]).unwrap();
        let real = sample_prm(&nu, 30.0, 2.0, seed).unwrap();
        let mut buf = Vec::new();
        write_realization(&real, &mut buf).unwrap();
        let back = read_realization(buf.as_slice(), 2.0, 30.0, 2).unwrap();
        prop_assert_eq!(back.events, real.events);
    }

    #[test]
    fn control_round_trips(psi in proptest::collection::vec(-5.0f64..5.0, 12), a in 1e-4f64..0.1) {
        let ctrl = ControlField::new(psi, 3, 4, 1.25, a).unwrap();
        let mut buf = Vec::new();
        write_control(&ctrl, &mut buf).unwrap();
        prop_assert_eq!(read_control(buf.as_slice()).unwrap(), ctrl);
    }

    #[test]
    fn path_round_trips(values in proptest::collection::vec(-1e6f64..1e6, 22), horizon in 0.1f64..10.0) {
        let path = PathGrid::new(horizon, 10, 2, values).unwrap();
        let mut buf = Vec::new();
        write_path(&path, &mut buf).unwrap();
        let back = read_path(buf.as_slice()).unwrap();
        for i in 0..=10 {
            prop_assert_eq!(back.value(i), path.value(i));
        }
    }
}

#[test]
fn control_rejects_a_wrong_header() {
    assert!(read_control("a,b,c,d\n1,1,1.0,0.1\n0.0\n".as_bytes()).is_err());
}

#[test]
fn measure_rejects_negative_weights() {
    assert!(read_measure("1.0 -2.0\n".as_bytes()).is_err());
    assert!(read_measure("# comment\n\n1.0, 2.0\n".as_bytes()).is_ok());
}

#[test]
fn zero_estimate_is_flagged_not_logged() {
    let row = EstimateRow {
        eps: 0.01,
        a_eps: 0.3,
        b_eps: 0.1,
        p_hat: 0.0,
        se: 0.0,
        neg_b_log_p: None,
        predicted_rate: 1.2,
        estimator: Estimator::PlainMc,
    };
    let mut buf = Vec::new();
    write_summary(&[row], &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let line = text.lines().nth(1).unwrap();
    assert!(line.ends_with(",,1.2,plain_mc,degenerate"), "{line}");
}
