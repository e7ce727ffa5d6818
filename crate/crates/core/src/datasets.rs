//! Seeded synthetic stand-in for the Adult census table, with the same 15
//! column names. `education` and `educational-num` are in bijection, and
//! every education level gets at least [`MIN_LEVEL_ROWS`] rows once
//! `n >= 16 * MIN_LEVEL_ROWS`.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::rng;
use crate::table::{Feature, FeatureKind, Schema, Table, Value};

pub const MIN_LEVEL_ROWS: usize = 25;

/// `(education, educational-num, weight)`
const EDUCATION: [(&str, u32, f64); 16] = [
    ("Preschool", 1, 0.5),
    ("1st-4th", 2, 0.6),
    ("5th-6th", 3, 1.0),
    ("7th-8th", 4, 2.0),
    ("9th", 5, 1.6),
    ("10th", 6, 2.8),
    ("11th", 7, 3.6),
    ("12th", 8, 1.3),
    ("HS-grad", 9, 32.0),
    ("Some-college", 10, 22.0),
    ("Assoc-voc", 11, 4.2),
    ("Assoc-acdm", 12, 3.3),
    ("Bachelors", 13, 16.4),
    ("Masters", 14, 5.4),
    ("Prof-school", 15, 1.7),
    ("Doctorate", 16, 1.3),
];

const OCCUPATIONS: [&str; 8] = [
    "Handlers-cleaners",
    "Craft-repair",
    "Sales",
    "Adm-clerical",
    "Tech-support",
    "Exec-managerial",
    "Prof-specialty",
    "Other-service",
];

const COUNTRIES: [(&str, f64); 5] = [
    ("United-States", 90.0),
    ("Mexico", 3.0),
    ("Philippines", 2.0),
    ("Germany", 2.5),
    ("India", 2.5),
];

fn weighted<'a, R: Rng + ?Sized>(rng: &mut R, items: &[(&'a str, f64)]) -> &'a str {
    let total: f64 = items.iter().map(|i| i.1).sum();
    let mut u = rng.random::<f64>() * total;
    for (s, w) in items {
        if u < *w {
            return s;
        }
        u -= w;
    }
    items[items.len() - 1].0
}

pub fn census_schema() -> Schema {
    use FeatureKind::*;
    let cols = [
        ("age", Numerical),
        ("workclass", Categorical),
        ("fnlwgt", Numerical),
        ("education", Categorical),
        ("educational-num", Categorical),
        ("marital-status", Categorical),
        ("occupation", Categorical),
        ("relationship", Categorical),
        ("race", Categorical),
        ("gender", Categorical),
        ("capital-gain", Numerical),
        ("capital-loss", Numerical),
        ("hours-per-week", Numerical),
        ("native-country", Categorical),
        ("income", Categorical),
    ];
    Schema::new(
        cols.iter()
            .map(|(n, k)| Feature {
                name: n.to_string(),
                kind: *k,
            })
            .collect(),
    )
    .expect("static schema")
}

pub fn synthetic_census(n: usize, seed: u64) -> Table {
    let mut rng = rng::stream(seed, 0);
    let mut levels: Vec<usize> = (0..n)
        .map(|i| {
            if i < 16 * MIN_LEVEL_ROWS {
                i % 16
            } else {
                let total: f64 = EDUCATION.iter().map(|e| e.2).sum();
                let mut u = rng.random::<f64>() * total;
                EDUCATION.iter().position(|e| {
                    u -= e.2;
                    u < 0.0
                })
                .unwrap_or(15)
            }
        })
        .collect();
    levels.shuffle(&mut rng);

    let age_noise: Normal<f64> = Normal::new(0.0, 12.0).unwrap();
    let hours_noise: Normal<f64> = Normal::new(0.0, 8.0).unwrap();
    let rows = levels
        .into_iter()
        .map(|level| {
            let (edu, edu_num, _) = EDUCATION[level];
            let age = (38.0 + age_noise.sample(&mut rng)).round().clamp(17.0, 90.0);
            let skill = level as f64 / 15.0;
            let occ_idx = ((skill * 5.0 + rng.random_range(-1.5..2.5)).round() as i64).clamp(0, 7) as usize;
            let occupation = if rng.random_bool(0.1) { OCCUPATIONS[7] } else { OCCUPATIONS[occ_idx] };
            let workclass = match occupation {
                "Exec-managerial" | "Prof-specialty" if rng.random_bool(0.3) => {
                    if skill > 0.7 { "State-gov" } else { "Self-emp-inc" }
                }
                "Craft-repair" if rng.random_bool(0.25) => "Self-emp-not-inc",
                _ if rng.random_bool(0.08) => "Local-gov",
                _ => "Private",
            };
            let marital = if age < 25.0 {
                weighted(&mut rng, &[("Never-married", 85.0), ("Married-civ-spouse", 15.0)])
            } else if age < 60.0 {
                weighted(&mut rng, &[("Married-civ-spouse", 55.0), ("Never-married", 25.0), ("Divorced", 20.0)])
            } else {
                weighted(&mut rng, &[("Married-civ-spouse", 55.0), ("Widowed", 25.0), ("Divorced", 20.0)])
            };
            let gender = if rng.random_bool(0.67) { "Male" } else { "Female" };
            let relationship = match (marital, gender) {
                ("Married-civ-spouse", "Male") => "Husband",
                ("Married-civ-spouse", _) => "Wife",
                ("Never-married", _) if age < 30.0 => "Own-child",
                _ => {
                    if rng.random_bool(0.5) { "Not-in-family" } else { "Unmarried" }
                }
            };
            let race = weighted(&mut rng, &[("White", 85.0), ("Black", 10.0), ("Asian-Pac-Islander", 3.0), ("Other", 2.0)]);
            let country = weighted(&mut rng, &COUNTRIES);
            let high_pay = matches!(occupation, "Exec-managerial" | "Prof-specialty" | "Tech-support");
            let capital_gain = if rng.random_bool(if high_pay { 0.15 } else { 0.05 }) {
                (rng.random_range(2.0..10.0f64).exp() * 10.0).round()
            } else {
                0.0
            };
            let capital_loss = if capital_gain == 0.0 && rng.random_bool(0.04) {
                rng.random_range(1000.0..2500.0f64).round()
            } else {
                0.0
            };
            let hours = (if high_pay { 45.0 } else { 39.0 } + hours_noise.sample(&mut rng)).round().clamp(1.0, 99.0);
            let score = -4.0
                + 3.0 * skill
                + if high_pay { 1.2 } else { 0.0 }
                + if workclass == "Self-emp-inc" { 0.8 } else { 0.0 }
                + 0.04 * (hours - 40.0)
                + if capital_gain > 5000.0 { 2.5 } else { 0.0 }
                + if capital_loss > 0.0 { 0.6 } else { 0.0 };
            let income = if rng.random::<f64>() < 1.0 / (1.0 + (-score).exp()) { ">50K" } else { "<=50K" };
            let fnlwgt = (rng.random_range(10.0..14.0f64).exp()).round();
            vec![
                Value::Number(age),
                Value::Category(workclass.into()),
                Value::Number(fnlwgt),
                Value::Category(edu.into()),
                Value::Category(edu_num.to_string()),
                Value::Category(marital.into()),
                Value::Category(occupation.into()),
                Value::Category(relationship.into()),
                Value::Category(race.into()),
                Value::Category(gender.into()),
                Value::Number(capital_gain),
                Value::Number(capital_loss),
                Value::Number(hours),
                Value::Category(country.into()),
                Value::Category(income.into()),
            ]
        })
        .collect();
    Table::new(census_schema(), rows).expect("generated rows match schema")
}
