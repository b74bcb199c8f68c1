//! Acceptance criteria, one test each. Every test prints a single
//! `criterion N: PASS|FAIL` line with the measured numbers and runtime.

use std::path::PathBuf;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reram_puf::experiment::{
    cmd_distribution, cmd_drift_analysis, cmd_sigma_ratio, distribution_summary, drift_table, run, sigma_ratio_table,
    ternary_study, Command, ExperimentConfig,
};
use reram_puf::mle::calibration::{sample_distances, CalibrationSetup};
use reram_puf::mle::{calibrate_threshold, ModelConfig, ObservationRecord, PredictorModel};
use reram_puf::multistate::{error_vector, ErrorVector, StateWord};
use reram_puf::netsim::run_scenario;
use reram_puf::reram_model::{mean_sd, SigmaLaw};

fn report(n: u32, pass: bool, detail: String, elapsed: Duration) {
    println!(
        "criterion {n}: {} {detail} ({:.2} s)",
        if pass { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64()
    );
    assert!(pass, "criterion {n} failed: {detail}");
}

fn scenario(name: &str) -> ExperimentConfig {
    let path: PathBuf = [env!("CARGO_MANIFEST_DIR"), "..", "cli", "scenarios", name].iter().collect();
    ExperimentConfig::parse(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// Per-state mean |R - C| by two nested loops over states and cells.
fn oracle(c: &StateWord, r: &StateWord) -> Vec<f64> {
    (0..c.n_states())
        .map(|s| {
            let mut sum = 0.0;
            let mut count = 0usize;
            for i in 0..c.len() {
                if c.states()[i] as usize == s {
                    sum += (f64::from(r.states()[i]) - f64::from(c.states()[i])).abs();
                    count += 1;
                }
            }
            if count == 0 {
                0.0
            } else {
                sum / count as f64
            }
        })
        .collect()
}

#[test]
fn criterion_1_error_vector_matches_oracle() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut mismatches = 0;
    for _ in 0..100_000 {
        let n = [2usize, 4, 8][rng.random_range(0..3)];
        let len = rng.random_range(1..=512);
        let mut word = || StateWord::new(n, (0..len).map(|_| rng.random_range(0..n as u8)).collect()).unwrap();
        let (c, r) = (word(), word());
        if error_vector(&c, &r).unwrap().errors() != oracle(&c, &r).as_slice() {
            mismatches += 1;
        }
    }
    let elapsed = start.elapsed();
    report(
        1,
        mismatches == 0 && elapsed < Duration::from_secs(10),
        format!("{mismatches} mismatches in 100000 pairs"),
        elapsed,
    );
}

#[test]
fn criterion_2_distribution_reproduces_population() {
    let start = Instant::now();
    let config = ExperimentConfig { seed: 2024, ..Default::default() };
    assert_eq!(config.population.cell_count, 10_000);
    let csv = cmd_distribution(&config).unwrap();
    let elapsed = start.elapsed();
    let (mean, sd) = distribution_summary(&csv).unwrap();
    let points: Vec<f64> =
        csv.lines().filter(|l| l.starts_with("point,")).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    let (m2, s2) = mean_sd(&points);
    let pass = (mean - 2.1).abs() <= 0.02
        && (sd - 0.54).abs() <= 0.02
        && (m2 - mean).abs() < 1e-5
        && (s2 - sd).abs() < 1e-5
        && points.len() == 10_000
        && elapsed < Duration::from_secs(5);
    report(2, pass, format!("mean {mean:.4} V, sd {sd:.4} V"), elapsed);
}

#[test]
fn criterion_3_drift_asymmetry() {
    let start = Instant::now();
    let mut config = ExperimentConfig { seed: 3, ..Default::default() };
    config.population.sigma_law = SigmaLaw::Constant(0.0);
    let table = drift_table(&cmd_drift_analysis(&config).unwrap()).unwrap();
    let elapsed = start.elapsed();
    let level = |v: f64| &table.iter().find(|(l, _)| (l - v).abs() < 1e-9).unwrap().1;
    let base = level(2.1);
    let mut violations = Vec::new();
    for up in [2.25, 2.4] {
        let e = level(up);
        for i in 0..8 {
            let ok = if i < 4 { e[i] <= base[i] } else { e[i] >= base[i] };
            if !ok {
                violations.push(format!("{up} V E{i}={:.3} base {:.3}", e[i], base[i]));
            }
        }
    }
    for down in [1.95, 1.8] {
        let e = level(down);
        for i in 0..8 {
            let ok = if i < 4 { e[i] >= base[i] } else { e[i] <= base[i] };
            if !ok {
                violations.push(format!("{down} V E{i}={:.3} base {:.3}", e[i], base[i]));
            }
        }
    }
    let pass = violations.is_empty() && elapsed < Duration::from_secs(10);
    report(3, pass, format!("{} violations: {}", violations.len(), violations.join("; ")), elapsed);
}

#[test]
fn criterion_4_sigma_ratio_trend() {
    let start = Instant::now();
    let config = ExperimentConfig { seed: 4, ..Default::default() };
    assert_eq!(config.sigma_grid.len(), 6);
    let table = sigma_ratio_table(&cmd_sigma_ratio(&config).unwrap()).unwrap();
    let elapsed = start.elapsed();
    let ordered = table.windows(2).all(|w| w[0].0 <= w[1].0);
    let monotone = table.windows(2).all(|w| w[1].1 <= w[0].1);
    let detail = table.iter().map(|(r, e)| format!("{r:.1}:{e:.3}")).collect::<Vec<_>>().join(" ");
    report(4, ordered && monotone && table.len() == 6 && elapsed < Duration::from_secs(30), detail, elapsed);
}

#[test]
fn criterion_5_ternary_margin() {
    let start = Instant::now();
    let config = ExperimentConfig { seed: 5, ..Default::default() };
    assert_eq!(config.ternary.margins, vec![0.0, 0.1, 0.2, 0.3]);
    assert_eq!(config.ternary.trials, 1000);
    let rows = ternary_study(&config).unwrap();
    let elapsed = start.elapsed();
    let monotone = rows.windows(2).all(|w| w[1].1 <= w[0].1);
    let detail = rows.iter().map(|(m, e, _)| format!("{m}:{e:.5}")).collect::<Vec<_>>().join(" ");
    report(5, monotone, detail, elapsed);
}

fn affine_recovery_error(rng: &mut ChaCha8Rng) -> f64 {
    let n = 8;
    let truth: Vec<(f64, f64, f64)> =
        (0..n).map(|_| (rng.random_range(0.0..2.0), rng.random_range(-0.02..0.02), rng.random_range(-1.0..1.0))).collect();
    let history: Vec<ObservationRecord> = (0..20)
        .map(|k| {
            let (t, v) = (rng.random_range(-25.0..85.0), rng.random_range(-0.2..0.2));
            let errors = truth.iter().map(|(a, bt, bv)| a + bt * t + bv * v + 5.0).collect();
            ObservationRecord { inputs: vec![t, v], ve: ErrorVector::new(errors, vec![16; n]).unwrap(), timestamp: k }
        })
        .collect();
    let model = PredictorModel::fit(ModelConfig::new(n, 2), history).unwrap();
    model
        .coefficients()
        .iter()
        .zip(&truth)
        .map(|(fit, (_, bt, bv))| (fit.slopes[0] - bt).abs().max((fit.slopes[1] - bv).abs()))
        .fold(0.0, f64::max)
}

#[test]
fn criterion_6_mle_exactness_and_error_rates() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let slope_error = (0..50).map(|_| affine_recovery_error(&mut rng)).fold(0.0, f64::max);

    let setup = CalibrationSetup { trials: 1000, cells: 128, n_states: 8, seed: 60, ..Default::default() };
    let calibration = sample_distances(&setup).unwrap();
    let threshold = calibrate_threshold(&calibration.genuine, &calibration.impostor);
    let fresh = sample_distances(&CalibrationSetup { seed: 61, ..setup }).unwrap();
    let (frr, far) = (fresh.false_reject_rate(threshold), fresh.false_accept_rate(threshold));
    let elapsed = start.elapsed();
    report(
        6,
        slope_error <= 1e-6 && frr <= 0.01 && far <= 0.01,
        format!("max slope error {slope_error:.2e}, threshold {threshold:.4}, FRR {frr:.4}, FAR {far:.4} on fresh trials"),
        elapsed,
    );
}

#[test]
fn criterion_7_protocol_completeness_and_containment() {
    let start = Instant::now();
    let benign = run_scenario(&scenario("benign.conf").scenario_config()).unwrap();
    let benign_ok = benign.rounds.iter().filter(|r| r.accepted).count();
    let (t_lo, t_hi) = scenario("benign.conf").scenario.temperature_range;

    let stolen = run_scenario(&scenario("stolen-server-keys.conf").scenario_config()).unwrap();
    let stolen_hits = stolen.attempts.iter().filter(|a| a.accepted).count();

    let plus = scenario("stolen-keys-plus-c1.conf");
    let plus_config = plus.scenario_config();
    let target = reram_puf::netsim::device_name(plus_config.adversary.as_ref().unwrap().target);
    let plus_report = run_scenario(&plus_config).unwrap();
    let tallies = plus_report.tallies();
    let target_hits = tallies[&target].attacks_accepted;
    let other_hits: usize = tallies.iter().filter(|(id, _)| **id != target).map(|(_, t)| t.attacks_accepted).sum();
    let others_attacked = tallies.iter().filter(|(id, t)| **id != target && t.attacks > 0).count();
    let clean = run_scenario(&reram_puf::netsim::ScenarioConfig { adversary: None, ..plus_config }).unwrap();
    let diff = clean.rounds.iter().zip(&plus_report.rounds).filter(|(a, b)| a != b).count();
    let elapsed = start.elapsed();

    let pass = benign_ok == benign.rounds.len()
        && benign.rounds.len() >= 100
        && stolen.attempts.len() == 1000
        && stolen_hits as f64 <= 0.01 * 1000.0
        && target_hits > 0
        && other_hits == 0
        && others_attacked == tallies.len() - 1
        && diff == 0
        && elapsed < Duration::from_secs(60);
    report(
        7,
        pass,
        format!(
            "benign {benign_ok}/{} over {t_lo}..{t_hi} C; stolen server keys {stolen_hits}/{}; \
             keys+C1 target {target_hits}/{}, others {other_hits}; containment diff {diff} rows",
            benign.rounds.len(),
            stolen.attempts.len(),
            tallies[&target].attacks,
        ),
        elapsed,
    );
}

#[test]
fn criterion_8_determinism() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let mut small = ExperimentConfig { seed: 8, ..Default::default() };
    small.ternary.trials = 200;
    let protocol = scenario("stolen-server-keys.conf");
    let jobs = [
        (Command::Distribution, &small),
        (Command::Drift, &small),
        (Command::SigmaRatio, &small),
        (Command::Ternary, &small),
        (Command::Protocol, &protocol),
    ];
    let mut differing = Vec::new();
    let mut files = 0;
    for (cmd, config) in jobs {
        let a = run(cmd, config).unwrap().write(&dir.path().join(format!("{}-a.csv", cmd.name()))).unwrap();
        let b = run(cmd, config).unwrap().write(&dir.path().join(format!("{}-b.csv", cmd.name()))).unwrap();
        for (pa, pb) in a.iter().zip(&b) {
            files += 1;
            if std::fs::read(pa).unwrap() != std::fs::read(pb).unwrap() {
                differing.push(pa.file_name().unwrap().to_string_lossy().into_owned());
            }
        }
    }
    let elapsed = start.elapsed();
    report(8, differing.is_empty(), format!("{files} file pairs compared, differing: {differing:?}"), elapsed);
}
