//! End-to-end acceptance criteria on the default scenario.
//!
//! Each test prints one `PASS`/`FAIL` line. The default campaign (200 drops)
//! is shared between criteria 1-5 and computed once.

use std::collections::HashMap;
use std::io::Write;
use std::sync::OnceLock;

use cellfree::evaluation::verify;
use cellfree::evaluation::{exceedance, mean_ci95, run_campaign, RateReport};
use cellfree::orchestrator::RunOptions;
use cellfree::{AlgorithmId, PilotMode, Scenario, ScenarioConfig};

const DROPS: usize = 200;
const SEED: u64 = 2024;
const TAU_GRID: [usize; 4] = [4, 8, 16, 32];

use AlgorithmId::{Centralized, CentralizedIterative, DistributedBackhaul, DistributedOta, LocalMmse};

const SCHEMES: [AlgorithmId; 5] = [LocalMmse, Centralized, CentralizedIterative, DistributedBackhaul, DistributedOta];

struct Campaign {
    scenario: Scenario,
    report: RateReport,
}

fn default_config() -> ScenarioConfig {
    ScenarioConfig {
        drops: DROPS,
        master_seed: SEED,
        ..ScenarioConfig::default()
    }
}

fn campaign() -> &'static Campaign {
    static CELL: OnceLock<Campaign> = OnceLock::new();
    CELL.get_or_init(|| {
        let cfg = default_config();
        let scenario = cfg.build().expect("default scenario");
        let report = run_campaign(&scenario, &SCHEMES, &RunOptions::default()).expect("campaign");
        eprintln!("default campaign: α = {}, {} drops, {} failed", cfg.step_size, report.total_drops, report.failed.len());
        Campaign { scenario, report }
    })
}

// Written to the raw handle so the line shows for passing tests too.
fn report(name: &str, passed: bool, detail: String) {
    let line = format!("[{}] {name}: {detail}\n", if passed { "PASS" } else { "FAIL" });
    let _ = std::io::stdout().lock().write_all(line.as_bytes());
    assert!(passed, "{name}: {detail}");
}

fn mean_at(r: &RateReport, a: AlgorithmId, i: usize) -> f64 {
    mean_ci95(&r.rates_at(a, i)).0
}

/// Final-rate differences `a − b` over drops where both schemes succeeded.
fn paired_final_diff(r: &RateReport, a: AlgorithmId, b: AlgorithmId) -> Vec<f64> {
    let final_of = |alg| -> HashMap<usize, f64> {
        r.curves(alg)
            .map(|c| c.drops.iter().map(|d| (d.drop, d.rate_at(r.iterations))).collect())
            .unwrap_or_default()
    };
    let (fa, fb) = (final_of(a), final_of(b));
    let mut keys: Vec<_> = fa.keys().filter(|k| fb.contains_key(k)).copied().collect();
    keys.sort_unstable();
    keys.iter().map(|k| fa[k] - fb[k]).collect()
}

#[test]
fn criterion_01_ota_gain_over_local() {
    let r = &campaign().report;
    let gain = |i| mean_at(r, DistributedOta, i) / mean_at(r, LocalMmse, i) - 1.0;
    let (g5, gf) = (gain(5), gain(r.iterations));
    let passed = (0.40..=0.70).contains(&g5) && (0.75..=1.05).contains(&gf);
    report(
        "1 OTA gain over local MMSE",
        passed,
        format!("+{:.1}% at i=5 (target 55±15), +{:.1}% at i={} (target 90±15)", 100.0 * g5, 100.0 * gf, r.iterations),
    );
}

#[test]
fn criterion_02_centralized_crossover() {
    let r = &campaign().report;
    let level = mean_at(r, Centralized, r.iterations);
    let cross = (1..=r.iterations).find(|&i| mean_at(r, DistributedOta, i) >= level);
    let passed = matches!(cross, Some(i) if (9..=19).contains(&i));
    report(
        "2 OTA crosses centralized level",
        passed,
        format!(
            "centralized {level:.2}, OTA best {:.2}, first crossing {cross:?} (target 14±5)",
            (1..=r.iterations).map(|i| mean_at(r, DistributedOta, i)).fold(f64::MIN, f64::max)
        ),
    );
}

#[test]
fn criterion_03_scheme_ordering() {
    let r = &campaign().report;
    let chain = [CentralizedIterative, DistributedBackhaul, DistributedOta, Centralized, LocalMmse];
    let mut passed = r.total_drops >= 200;
    let mut parts = Vec::new();
    for pair in chain.windows(2) {
        let d = paired_final_diff(r, pair[0], pair[1]);
        let (mean, ci) = mean_ci95(&d);
        passed &= mean - ci > 0.0;
        parts.push(format!("{}−{} = {mean:.2}±{ci:.2}", pair[0].name(), pair[1].name()));
    }
    report("3 scheme ordering", passed, format!("{} drops; {}", r.total_drops, parts.join(", ")));
}

#[test]
fn criterion_04_fairness() {
    let r = &campaign().report;
    let ota = exceedance(&r.final_per_ue(DistributedOta), 10.0);
    let cen = exceedance(&r.final_per_ue(Centralized), 10.0);
    let passed = (0.90..=1.0).contains(&ota) && (0.50..=0.70).contains(&cen);
    report(
        "4 per-UE rate above 10 bps/Hz",
        passed,
        format!("OTA {ota:.3} (target 0.98±0.08), centralized {cen:.3} (target 0.60±0.10)"),
    );
}

#[test]
fn criterion_05_overhead_optimum() {
    let c = campaign();
    let r = &c.report;
    let t1 = r.effective_curve(DistributedOta, 1.0, &c.scenario);
    let argmax = t1
        .iter()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .map(|&(i, _)| i);

    let curve: Vec<f64> = r.mean_curve(DistributedOta).iter().map(|m| m.0).collect();
    let best = curve.iter().copied().fold(f64::MIN, f64::max);
    let conv = curve.iter().position(|&m| m >= 0.99 * best).map_or(r.iterations, |p| p + 1);
    let t5 = r.effective_curve(DistributedOta, 5.0, &c.scenario);
    let penalty = t5
        .iter()
        .find(|&&(i, _)| i == conv)
        .map_or(1.0, |&(_, eff)| 1.0 - eff / curve[conv - 1]);

    let passed = matches!(argmax, Some(i) if (15..=23).contains(&i)) && penalty < 0.05;
    report(
        "5 training overhead",
        passed,
        format!(
            "T=1 argmax {argmax:?} (target 19±4); T=5 penalty {:.2}% at convergence point i={conv} (target < 5%)",
            100.0 * penalty
        ),
    );
}

#[test]
fn criterion_06_pilot_contamination() {
    let mut ota = Vec::new();
    let mut smallest = None;
    for (n, &tau) in TAU_GRID.iter().enumerate() {
        let cfg = ScenarioConfig {
            pilot_mode: PilotMode::Random,
            pilot_length: Some(tau),
            ..default_config()
        };
        let scenario = cfg.build().expect("random-pilot scenario");
        let schemes: &[AlgorithmId] = if n == 0 { &[LocalMmse, Centralized, DistributedOta] } else { &[DistributedOta] };
        let r = run_campaign(&scenario, schemes, &RunOptions::default()).expect("campaign");
        if n == 0 {
            smallest = Some((mean_at(&r, Centralized, r.iterations), mean_at(&r, LocalMmse, r.iterations)));
        }
        ota.push(mean_at(&r, DistributedOta, r.iterations));
    }
    let (cen, local) = smallest.unwrap();
    let drops = ota.windows(2).filter(|w| w[1] <= w[0]).count();
    let passed = cen < local && drops <= 1;
    let grid: Vec<String> = TAU_GRID.iter().zip(&ota).map(|(t, m)| format!("τ={t}: {m:.2}")).collect();
    report(
        "6 pilot contamination",
        passed,
        format!(
            "τ={}: centralized {cen:.2} vs local {local:.2}; OTA {} ({drops} non-increasing steps)",
            TAU_GRID[0],
            grid.join(", ")
        ),
    );
}

#[test]
fn criterion_07_noiseless_equivalence() {
    let c = verify::noiseless_equivalence(verify::NOISELESS_ITERATIONS, SEED).expect("noiseless run");
    report("7 noiseless equivalence", c.passed, c.detail);
}

#[test]
fn criterion_08_schur_identity() {
    let c = verify::schur_identity(100, SEED);
    report("8 two-BS Schur identity", c.passed, c.detail);
}

#[test]
fn criterion_09_kkt_and_power() {
    let c = verify::kkt_suite(5, SEED).expect("kkt suite");
    let (bs, ue) = campaign().report.max_power_ratios();
    let passed = c.passed && bs <= 1.0 + 1e-9 && ue <= 1.0 + 1e-9;
    report(
        "9 KKT, gradient and power compliance",
        passed,
        format!("{}; default campaign max BS/UE power ratio {bs:.12}/{ue:.12}", c.detail),
    );
}

#[test]
fn criterion_10_ota_identity() {
    let c = verify::ota_identity(100, SEED).expect("ota identity");
    report("10 OTA closed-form identity", c.passed, c.detail);
}
