// Copyright 2026 The snapsafe Authors
// SPDX-License-Identifier: Apache-2.0

use serde_json::Value;
use snapsafe_web::{fanout, matrix, packaged_scenarios, run_scenario_text, Fanout};

fn parse(s: String) -> Value {
    serde_json::from_str(&s).expect("valid JSON")
}

#[test]
fn fenced_fanout_is_unique() {
    let v = parse(fanout(4, 2, 50, 1, true, true));
    assert_eq!(v["guests_per_depth"], serde_json::json!([1, 4, 16]));
    assert_eq!(v["report"]["emissions"], 16 * 50);
    assert_eq!(v["report"]["duplicates"], 0);
    assert_eq!(v["errors"], 0);
}

#[test]
fn fanout_rejects_oversized_runs() {
    assert!(parse(fanout(100, 3, 1, 1, true, true))["error"].is_string());
    assert!(parse(fanout(10, 3, 5000, 1, true, true))["error"].is_string());
    assert!(parse(fanout(0, 3, 5, 1, true, true))["error"].is_string());
}

#[test]
fn fanout_scenario_text_round_trips() {
    let s = Fanout {
        fanout: 3,
        depth: 2,
        nonces: 7,
        seed: 5,
        fence: false,
        bump: false,
    }
    .scenario()
    .unwrap();
    assert_eq!(snapsafe::harness::Scenario::parse(&s.to_string()).unwrap(), s);
}

#[test]
fn scenario_text_runs_and_reports_collisions() {
    let toctou = snapsafe::harness::packaged("toctou").unwrap();
    let v = parse(run_scenario_text(toctou, ""));
    assert_eq!(v["as_expected"], true);
    assert!(v["report"]["first_collision"]["value"].is_string());
    assert_eq!(v["seed"], 3);
    assert_eq!(parse(run_scenario_text(toctou, " 11 "))["seed"], 11);
    assert!(parse(run_scenario_text(toctou, "x"))["error"].is_string());
    assert!(parse(run_scenario_text("not a scenario", ""))["error"].is_string());
}

#[test]
fn matrix_has_three_columns() {
    let v = parse(matrix());
    assert_eq!(v["mechanisms"].as_array().unwrap().len(), 3);
    for row in v["rows"].as_array().unwrap() {
        assert_eq!(row["cells"].as_array().unwrap().len(), 3);
    }
}

#[test]
fn packaged_list_has_text() {
    let v = parse(packaged_scenarios());
    let list = v.as_array().unwrap();
    assert!(list.iter().any(|s| s["name"] == "toctou"));
    assert!(list.iter().all(|s| s["text"].as_str().unwrap().starts_with("snapsafe-scenario v1")));
}
