use pyo3::prelude::*;
use pyo3::types::PyDict;

fn with_module<F: FnOnce(Python<'_>, &Bound<'_, PyModule>)>(f: F) {
    Python::initialize();
    Python::attach(|py| {
        let m = PyModule::new(py, "coopstream").unwrap();
        coopstream_py::coopstream_py(&m).unwrap();
        f(py, &m);
    });
}

#[test]
fn building_blocks_round_trip() {
    with_module(|_, m| {
        let r: f64 = m
            .getattr("coop_rate")
            .unwrap()
            .call1((2.0, 4.0, 1.0))
            .unwrap()
            .extract()
            .unwrap();
        assert!((r - 4.0 / 3.0).abs() < 1e-12);
        let acts: Vec<Vec<u32>> = m
            .getattr("feasible_actions")
            .unwrap()
            .call1((vec![1u32, 1], vec![(0usize, 1usize)], 2u32))
            .unwrap()
            .extract()
            .unwrap();
        assert_eq!(acts.len(), 3);
        let err = m
            .getattr("snr_coefficient")
            .unwrap()
            .call1((1.0, 5.0))
            .unwrap_err();
        assert!(err.to_string().contains("bep"));
    });
}

#[test]
fn config_rejects_invalid_values() {
    with_module(|py, m| {
        let cfg = m.getattr("Config").unwrap().call0().unwrap();
        assert!(cfg.setattr("alpha", 1.5).is_err());
        cfg.setattr("n_slots", 10usize).unwrap();
        cfg.setattr("n_relays", 3usize).unwrap();
        cfg.setattr("pmf_samples", 50usize).unwrap();
        let summary = m.getattr("run").unwrap().call1((cfg,)).unwrap();
        let summary = summary.cast::<PyDict>().unwrap();
        let slots: u64 = summary
            .get_item("slots")
            .unwrap()
            .unwrap()
            .extract()
            .unwrap();
        assert_eq!(slots, 10);
        let _ = py;
    });
}
