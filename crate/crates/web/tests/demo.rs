use adn_web::Demo;
use serde_json::Value;

fn parse(s: &str) -> Value {
    let v: Value = serde_json::from_str(s).unwrap();
    assert!(v.get("error").is_none(), "{s}");
    v
}

#[test]
fn subnet_table_has_every_config_sorted_by_flops() {
    let mut demo = Demo::new(1);
    assert_eq!(demo.stages(), 4);
    let rows = parse(&demo.subnets());
    let rows = rows.as_array().unwrap();
    assert_eq!(rows.len(), 16);
    let flops: Vec<u64> = rows.iter().map(|r| r["flops"].as_u64().unwrap()).collect();
    assert!(flops.windows(2).all(|w| w[0] <= w[1]));
    assert_eq!(rows[0]["skip"], "TTTT");
    assert_eq!(rows[15]["skip"], "FFFF");
    assert!(rows.iter().any(|r| r["pareto"] == true));
}

#[test]
fn training_steps_reduce_loss_and_are_reproducible() {
    let run = || {
        let mut demo = Demo::new(2);
        let first = parse(&demo.train_steps(2));
        let later = parse(&demo.train_steps(30));
        (first, later, demo.steps())
    };
    let (first, later, steps) = run();
    assert_eq!(steps, 32);
    let loss = |v: &Value, i: usize| v["steps"][i]["loss_super"].as_f64().unwrap();
    assert!(loss(&later, 29) < loss(&first, 0));
    assert_eq!(run().1, later);
}

#[test]
fn inspect_reports_profile_and_rejects_bad_strings() {
    let mut demo = Demo::new(3);
    let full = parse(&demo.inspect("FFFF"));
    assert_eq!(full["blocks"].as_array().unwrap().len(), 8);
    let base = parse(&demo.inspect("TTTT"));
    assert_eq!(base["blocks"].as_array().unwrap().len(), 4);
    assert!(base["skippable_mean"].is_null());
    assert!(base["flops"].as_u64() < full["flops"].as_u64());
    for bad in ["TTF", "TXFF"] {
        let v: Value = serde_json::from_str(&demo.inspect(bad)).unwrap();
        assert!(v["error"].is_string());
    }
}
