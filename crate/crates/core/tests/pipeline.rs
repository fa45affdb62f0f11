use dispatchd_core::baselines::{self, Packing};
use dispatchd_core::config::RunConfig;
use dispatchd_core::dispatch::CostRates;
use dispatchd_core::energy::{BsConfig, BsConfigSet};
use dispatchd_core::mamrl::{Mamrl, TrainHooks};
use dispatchd_core::metrics::{energy_ledger, method_metrics};
use dispatchd_core::trace::{
    build_state_space, load_solar_trace, load_task_trace, synth_trace, write_solar_trace, write_task_trace, StateTable, SynthProfile,
};

fn rates() -> CostRates<f64> {
    CostRates::per_mwh(50.0, 102.0, 55.0).unwrap()
}

#[test]
fn traces_roundtrip_through_csv_into_the_same_state_table() {
    let dir = tempfile::tempdir().unwrap();
    let tr = synth_trace(2, 1, 7, &SynthProfile::default(), &BsConfig::default()).unwrap();
    let day = &tr.days[0];
    let (tp, sp, cp) = (dir.path().join("tasks.csv"), dir.path().join("solar.csv"), dir.path().join("bs.toml"));
    write_task_trace(&tp, &day.tasks).unwrap();
    write_solar_trace(&sp, &day.solar).unwrap();
    std::fs::write(&cp, tr.configs.to_toml_string()).unwrap();
    let direct = build_state_space(&day.tasks, &day.solar, &tr.configs, &rates(), tr.shape, 0.25).unwrap();
    let tasks = load_task_trace(&tp, tr.shape).unwrap();
    let solar = load_solar_trace(&sp, tr.shape).unwrap();
    let configs = BsConfigSet::load(&cp).unwrap();
    let loaded = build_state_space(&tasks, &solar, &configs, &rates(), tr.shape, 0.25).unwrap();
    assert_eq!(direct.records().len(), 2 * 96);
    for (a, b) in direct.records().iter().zip(loaded.records()) {
        assert!((a.demand_kwh - b.demand_kwh).abs() <= 1e-9 * a.demand_kwh.max(1.0));
        assert!((a.renewable_kwh - b.renewable_kwh).abs() <= 1e-9 * a.renewable_kwh.max(1.0));
    }
    let sp = dir.path().join("state.csv");
    direct.write_csv(&sp).unwrap();
    assert_eq!(StateTable::read_csv(&sp).unwrap().shape, direct.shape);
}

#[test]
fn trained_system_reports_consistent_books() {
    let r = rates();
    let tr = synth_trace(2, 1, 11, &SynthProfile::default(), &BsConfig::default()).unwrap();
    let table = build_state_space(&tr.days[0].tasks, &tr.days[0].solar, &tr.configs, &r, tr.shape, 0.25).unwrap();
    let cfg = RunConfig { lstm_units: 8, step_cap: 2, ..RunConfig::default() };
    let mut sys = Mamrl::new(2, &cfg);
    let log = sys.train(&table, None, 3, 1, &TrainHooks::default()).unwrap();
    assert_eq!(log.summaries.len(), 3);
    assert!(log.mean_rewards().iter().all(|&m| (0.0..=96.0).contains(&m)));

    let dir = tempfile::tempdir().unwrap();
    let ck = dir.path().join("m.ckpt");
    sys.save(&ck).unwrap();
    let back = Mamrl::load(&ck, &cfg).unwrap();
    let ev = sys.evaluate(&table).unwrap();
    assert_eq!(back.evaluate(&table).unwrap().actions, ev.actions);

    let items = baselines::slot_items(&table, &tr.days[0].tasks);
    let hs = baselines::hindsight(&table);
    let labels = baselines::oracle_labels(&table);
    let hs_cost = hs.cost(&r);
    let mut runs = vec![
        baselines::PolicyRun { method: "mamrl".into(), slots: 96, actions: Some(ev.actions.clone()), dispatch: ev.dispatch.clone() },
        baselines::ucb_greedy(&table, std::f64::consts::SQRT_2),
        baselines::no_renewable(&table),
        labels.clone(),
        hs.clone(),
    ];
    runs.extend(Packing::ALL.iter().map(|&h| baselines::packing_run(&table, &items, h)));
    for run in &runs {
        let m = method_metrics(run, &labels, hs_cost, &r).unwrap();
        assert!(m.total_cost >= hs_cost, "{} undercuts hindsight", run.method);
        assert!(m.competitive_ratio.unwrap() >= 1.0);
        for (d, rec) in run.dispatch.iter().zip(table.records()) {
            assert!((d.served_kwh() - rec.demand_kwh).abs() < 1e-9, "{} leaves demand unserved", run.method);
        }
    }
    let ledger = energy_ledger(&runs, &r, hs_cost);
    for row in &ledger {
        assert!((row.non_cost + row.sto_cost + row.ren_cost - row.total_cost).abs() < 1e-9);
        assert!(row.pct_vs_truth >= 0.0);
    }
    let truth = ledger.iter().find(|row| row.method == "hindsight").unwrap();
    assert!(truth.pct_vs_truth.abs() < 1e-9);
}
