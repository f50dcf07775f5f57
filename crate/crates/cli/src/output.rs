use nutrigraph::data::AnthroTarget;
use nutrigraph::metrics::DecisionPoint;
use nutrigraph::train::{render_table, AlphaDensity, EvalReport, TrainSummary};

fn num(v: f64) -> String {
    format!("{v:.4}")
}

pub fn summary_table(s: &TrainSummary) -> String {
    let header: Vec<String> = ["Metric", "Mean", "Std", "95% CI ±"]
        .iter()
        .map(|h| h.to_string())
        .collect();
    let rows: Vec<Vec<String>> = s
        .metrics
        .iter()
        .map(|(name, m)| vec![name.clone(), num(m.mean), num(m.std), num(m.ci_half_width)])
        .collect();
    format!(
        "{} folds, retrieval {}\n{}",
        s.folds,
        if s.retrieval_enabled { "on" } else { "off" },
        render_table(&header, &rows)
    )
}

pub fn alpha_density_line(d: &AlphaDensity) -> String {
    let r = d.pearson_r.map(num).unwrap_or_else(|| "undefined".into());
    format!(
        "alpha vs mean distance: pearson_r {r} over {} subjects",
        d.pairs
    )
}

pub fn evaluation_table(r: &EvalReport, threshold: f64) -> String {
    let mut rows = vec![
        vec!["subjects".to_string(), r.count.to_string()],
        vec!["threshold".to_string(), num(threshold)],
    ];
    if let Some(c) = &r.classification {
        rows.push(vec!["accuracy".into(), num(c.accuracy)]);
        rows.push(vec!["precision".into(), num(c.precision)]);
        rows.push(vec!["recall".into(), num(c.recall)]);
        rows.push(vec!["f1".into(), num(c.f1)]);
        rows.push(vec![
            "roc_auc".into(),
            c.roc_auc.map(num).unwrap_or_else(|| "---".into()),
        ]);
        rows.push(vec![
            "map".into(),
            c.map.map(num).unwrap_or_else(|| "---".into()),
        ]);
    }
    if let Some(c) = &r.calibration {
        rows.push(vec!["ece".into(), num(c.ece)]);
        rows.push(vec!["mce".into(), num(c.mce)]);
        rows.push(vec!["brier".into(), num(c.brier)]);
    }
    for t in AnthroTarget::ALL {
        if let Some(e) = r.regression.get(t) {
            rows.push(vec![format!("rmse_{}", t.name()), num(e.rmse)]);
            rows.push(vec![format!("mae_{}", t.name()), num(e.mae)]);
        }
    }
    render_table(&["Metric".to_string(), "Value".to_string()], &rows)
}

pub fn decision_curve_csv(points: &[DecisionPoint]) -> String {
    let mut out = String::from("threshold,net_benefit,treat_all,treat_none\n");
    for p in points {
        out.push_str(&format!(
            "{},{},{},{}\n",
            p.threshold, p.net_benefit, p.treat_all, p.treat_none
        ));
    }
    out
}
