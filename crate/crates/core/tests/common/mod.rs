//! Synthetic fixtures shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{Duration, NaiveDate};
use hybrid_ebm::format::{write_lut, write_series, ModelDoc, RuleSpec, ScenarioSpec, SeriesSpec};
use hybrid_ebm::ingest::{aggregate_temporal, AggOp, Window};
use hybrid_ebm::{
    build_lookup_table, build_model, integrate_component_model, make_uniform_thresholds, quantize_series,
    quantize_value, Element, IncrementMode, IncrementalRule, Influence, MapTarget, Model, Quantizer, Scenario,
    UpdateRule,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const YEARS: usize = 129;
pub const INPUTS: [&str; 7] = ["T1", "T2", "T3", "P1", "P2", "P3", "CO2"];

/// Synthetic climate for 129 "years": three summer-month temperatures,
/// three monthly precipitations and an annual CO2 concentration, with
/// warming and CO2 trends plus weather noise.
pub fn synthetic_climate(seed: u64) -> Vec<[f64; 7]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..YEARS)
        .map(|k| {
            let frac = k as f64 / (YEARS - 1) as f64;
            let mut row = [0.0; 7];
            for m in 0..3 {
                row[m] = 22.0 + 5.5 * frac + 0.4 * m as f64 + rng.gen_range(-1.2..1.2);
                row[3 + m] = (5.5 - 1.5 * frac + rng.gen_range(-2.5..2.5)).max(1.3);
            }
            row[6] = 326.0 + 600.0 * frac * frac;
            row
        })
        .collect()
}

/// Fixed synthetic crop-yield function, monotone in every input: increasing
/// in precipitation and CO2, decreasing in temperature.
pub fn synthetic_yield(x: &[f64; 7]) -> f64 {
    let heat: f64 = x[0..3].iter().map(|t| t - 21.0).sum();
    let rain: f64 = x[3..6].iter().sum();
    1.2 + 0.05 * rain + 0.0008 * rain * rain - 0.06 * heat + 0.0012 * (x[6] - 326.0)
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

pub struct EmulatorCase {
    pub model: Model,
    pub scenario: Scenario,
    /// Quantized synthetic yield per year (step).
    pub truth: Vec<u32>,
    pub output_quantizer: Quantizer,
    pub filled: u64,
    pub total: u64,
}

/// Hybrid model with a quantized synthetic emulator as the yield rule: seven
/// forced climate inputs (three levels) and `Yield` driven by the lookup
/// table. With `downstream`, a `Food` element with an incremental rule also
/// competes for updates, which makes runs stochastic. Yield starts at level
/// 0; series step `k` carries year `k`.
pub fn emulator_case(output_levels: u32, runs: usize, seed: u64, downstream: bool) -> EmulatorCase {
    let climate = synthetic_climate(11);
    let yields: Vec<f64> = climate.iter().map(synthetic_yield).collect();

    // temperature and precipitation ranges span all three months
    let (tmin, tmax) = range(climate.iter().flat_map(|r| r[0..3].to_vec()));
    let (pmin, pmax) = range(climate.iter().flat_map(|r| r[3..6].to_vec()));
    let (cmin, cmax) = range(climate.iter().map(|r| r[6]));
    let (ymin, ymax) = range(yields.iter().copied());
    let tq = make_uniform_thresholds(tmin, tmax, 3).unwrap();
    let pq = make_uniform_thresholds(pmin, pmax, 3).unwrap();
    let cq = make_uniform_thresholds(cmin, cmax, 3).unwrap();
    let yq = make_uniform_thresholds(ymin, ymax, output_levels).unwrap();
    let quantizers = vec![tq.clone(), tq.clone(), tq, pq.clone(), pq.clone(), pq, cq];

    let rows: Vec<Vec<f64>> =
        climate.iter().zip(&yields).map(|(x, y)| x.iter().copied().chain(std::iter::once(*y)).collect()).collect();
    let (table, report) = build_lookup_table(&rows, &quantizers, &yq, &INPUTS, "maize").unwrap();

    let host = if downstream {
        build_model(
            vec![Element::new("Yield", output_levels, 0), Element::new("Food", 3, 1)],
            vec![Influence::positive("Yield", "Food")],
            [(
                "Food".to_string(),
                UpdateRule::Incremental(
                    IncrementalRule::parse(Some("Yield"), None, IncrementMode::Proportional).unwrap(),
                ),
            )],
        )
    } else {
        build_model(vec![Element::new("Yield", output_levels, 0)], vec![], Vec::<(String, UpdateRule)>::new())
    }
    .unwrap();
    let mut mapping: BTreeMap<String, MapTarget> = INPUTS.iter().map(|n| (n.to_string(), MapTarget::New)).collect();
    mapping.insert("maize".into(), MapTarget::Existing("Yield".into()));
    let model = integrate_component_model(&host, Arc::new(table), &mapping).unwrap();

    let mut scenario = Scenario::new(YEARS - 1, runs, seed);
    for (i, name) in INPUTS.iter().enumerate() {
        let series: Vec<(usize, f64)> = climate.iter().enumerate().map(|(k, r)| (k, r[i])).collect();
        scenario.series.insert(name.to_string(), quantize_series(&quantizers[i], &series).unwrap());
    }
    let truth = yields.iter().map(|&y| quantize_value(&yq, y)).collect();
    EmulatorCase { model, scenario, truth, output_quantizer: yq, filled: report.filled, total: report.total }
}

/// Daily synthetic rainfall for 2014-01-01..=2018-04-30 with a long season
/// of light rain, a short rainless spell and a wet season.
pub fn synthetic_daily_rain(seed: u64) -> Vec<(String, Option<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = NaiveDate::from_ymd_opt(2014, 1, 1).unwrap();
    let end = NaiveDate::from_ymd_opt(2018, 4, 30).unwrap();
    let days = (end - start).num_days() + 1;
    (0..days)
        .map(|d| {
            let week_of_year = (d / 7) % 52;
            let mm = match week_of_year {
                0..=23 => rng.gen_range(1.2..3.6),
                24..=26 => 0.0,
                _ => rng.gen_range(4.0..10.0),
            };
            ((start + Duration::days(d)).to_string(), Some(mm))
        })
        .collect()
}

/// Weekly cumulative rainfall from the daily series.
pub fn weekly_rain(seed: u64) -> Vec<f64> {
    aggregate_temporal(&synthetic_daily_rain(seed), Window::Weekly, AggOp::Sum)
        .unwrap()
        .into_iter()
        .filter(|w| !w.partial)
        .map(|w| w.value.unwrap())
        .collect()
}

/// Precipitation drives yield through a positive-only proportional rule.
/// Yield starts at 50%.
pub fn rain_case(rain: &[f64], precip_levels: u32, yield_levels: u32, runs: usize, seed: u64) -> (Model, Scenario) {
    let (lo, hi) = range(rain.iter().copied());
    let q = make_uniform_thresholds(lo, hi, precip_levels).unwrap();
    let series: Vec<(usize, f64)> = rain.iter().copied().enumerate().collect();
    let model = build_model(
        vec![Element::new("P", precip_levels, 0), Element::new("Y", yield_levels, (yield_levels - 1) / 2)],
        vec![Influence::positive("P", "Y")],
        [(
            "Y".to_string(),
            UpdateRule::Incremental(IncrementalRule::parse(Some("P"), None, IncrementMode::Proportional).unwrap()),
        )],
    )
    .unwrap();
    let scenario = Scenario::new(rain.len() - 1, runs, seed).with_series("P", quantize_series(&q, &series).unwrap());
    (model, scenario)
}

/// Two elements with rules, both fed by a single input.
pub fn two_rule_model() -> Model {
    let rule = || UpdateRule::Incremental(IncrementalRule::parse(Some("S"), None, IncrementMode::Step).unwrap());
    build_model(
        vec![Element::new("S", 3, 2), Element::new("A", 3, 1), Element::new("B", 3, 1)],
        vec![Influence::positive("S", "A"), Influence::positive("S", "B")],
        [("A".to_string(), rule()), ("B".to_string(), rule())],
    )
    .unwrap()
}

/// Writes `model` and `scenario` as a model file in `dir`, with each lookup
/// table and forcing series in its own file. Returns the model file path.
pub fn write_model_files(dir: &Path, model: &Model, scenario: &Scenario) -> PathBuf {
    let (elements, influences, rules) = model.to_parts();
    let mut doc = ModelDoc {
        elements,
        influences,
        scenario: ScenarioSpec {
            steps: Some(scenario.steps),
            runs: Some(scenario.runs),
            seed: Some(scenario.master_seed),
            initial: scenario.initial.clone(),
        },
        ..Default::default()
    };
    for (name, rule) in rules {
        let spec = match rule {
            UpdateRule::Incremental(r) => RuleSpec::Incremental(r),
            UpdateRule::Lookup(r) => {
                let file = format!("{name}.lut");
                std::fs::write(dir.join(&file), write_lut(&r.table)).unwrap();
                RuleSpec::Lookup { table: file, policy: None, inputs: Some(r.inputs) }
            }
        };
        doc.rules.push((name, spec));
    }
    for (name, series) in &scenario.series {
        let file = format!("{name}.csv");
        write_series(series, std::fs::File::create(dir.join(&file)).unwrap()).unwrap();
        doc.series.push((name.clone(), SeriesSpec::File(file)));
    }
    let path = dir.join("model.ebm");
    std::fs::write(&path, doc.to_string()).unwrap();
    path
}
