//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.
//!
//! Criterion 9 needs the real benchmark files. Point `LDPFAIR_COMPAS_CSV`
//! and/or `LDPFAIR_ADULT_CSV` at them to enable it.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use ldpfair::fairness::{disparity, group_rates, Metric};
use ldpfair::harness::{
    self, summary_mean, DatasetConfig, ExperimentConfig, Group, Measure, PreparedData, SummaryRow,
};
use ldpfair::ingest::IngestConfig;
use ldpfair::mechanism::{
    krr_params, krr_randomize, split_budget, transition_matrix, MechanismConfig, Setting,
    SplitPolicy,
};
use ldpfair::synth::Regime;
use ldpfair::{seed, AttributeSpec, Role, Schema};
use num_rational::Ratio;
use rand::Rng;

/// Master seed of the shared synthetic experiment. Fixed before the first
/// run and never tuned.
const SYNTH_SEED: u64 = 2024;

struct Outcome {
    id: u32,
    pass: bool,
    detail: String,
}

fn report(id: u32, title: &str, pass: bool, detail: impl Into<String>) -> Outcome {
    let detail = detail.into();
    println!(
        "{} [{id}] {title}: {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    Outcome { id, pass, detail }
}

fn schema_for(domains: &[usize]) -> Schema {
    let mut attrs = Vec::new();
    let mut order = Vec::new();
    for (i, &k) in domains.iter().enumerate() {
        let name = format!("s{i}");
        let role = if i == 0 {
            Role::Protected
        } else {
            Role::Sensitive
        };
        attrs.push(AttributeSpec::new(
            name.clone(),
            role,
            (0..k).map(|v| v.to_string()),
        ));
        order.push(name);
    }
    attrs.push(AttributeSpec::new("y", Role::Outcome, ["0", "1"]));
    Schema::new(attrs, order)
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut failures = Vec::new();
    for domains in [&[2][..], &[2, 3], &[2, 3, 5]] {
        let schema = schema_for(domains);
        for setting in [Setting::Sldp, Setting::CombLdp, Setting::IndLdp] {
            for eps in [0.1, 1.0, 5.0, 16.0] {
                let m =
                    transition_matrix(&MechanismConfig::new(setting, eps), &schema, 64).unwrap();
                let rel = (m.max_ratio() / eps.exp() - 1.0).abs();
                worst = worst.max(rel);
                if rel > 1e-9 {
                    failures.push(format!("{setting} {domains:?} eps={eps}: rel {rel:e}"));
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    report(
        1,
        "max column ratio equals e^eps",
        failures.is_empty() && secs < 1.0,
        format!(
            "worst relative error {worst:.2e}, {secs:.3} s {}",
            failures.join("; ")
        ),
    )
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    const DRAWS: u32 = 1_000_000;
    let mut worst_z: f64 = 0.0;
    for k in [2usize, 4, 16] {
        for (ei, eps) in [0.1, 1.0, 5.0].into_iter().enumerate() {
            let params = krr_params(k, eps).unwrap();
            let mut rng = seed::rng(7, &[k as u64, ei as u64]);
            let mut kept = 0u32;
            for i in 0..DRAWS {
                let v = i % k as u32;
                kept += u32::from(krr_randomize(v, &params, &mut rng).unwrap() == v);
            }
            let p = params.p();
            let sigma = (p * (1.0 - p) / f64::from(DRAWS)).sqrt();
            let z = (f64::from(kept) / f64::from(DRAWS) - p).abs() / sigma;
            worst_z = worst_z.max(z);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    report(
        2,
        "empirical keep frequency within 4 sigma",
        worst_z <= 4.0 && secs < 10.0,
        format!("worst |z| {worst_z:.2}, {secs:.2} s"),
    )
}

fn criterion_3() -> Outcome {
    let split = split_budget(&[2, 3, 5], 1.0, SplitPolicy::KBased).unwrap();
    let exact = split
        .budgets()
        .iter()
        .zip([0.2, 0.3, 0.5])
        .all(|(a, b)| (a - b).abs() <= 1e-12);
    let mut rng = seed::rng(3, &[]);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let d = rng.random_range(1..=8);
        let domains: Vec<usize> = (0..d).map(|_| rng.random_range(2..=40)).collect();
        let eps = rng.random_range(0.01..20.0);
        for policy in [SplitPolicy::KBased, SplitPolicy::Uniform] {
            let s = split_budget(&domains, eps, policy).unwrap();
            worst = worst.max((s.total() - eps).abs() / eps);
        }
    }
    report(
        3,
        "k-based split and budget conservation",
        exact && worst <= 1e-12,
        format!(
            "(2,3,5) -> {:?}, worst relative sum error {worst:.1e}",
            split.budgets()
        ),
    )
}

/// Brute-force rate: count matching records for the numerator and the
/// denominator separately.
fn oracle_rate(
    t: &[u32],
    p: &[u32],
    g: &[u8],
    group: u8,
    num: impl Fn(u32, u32) -> bool,
    den: impl Fn(u32, u32) -> bool,
) -> Option<Ratio<i64>> {
    let mut n = 0i64;
    let mut d = 0i64;
    for i in 0..t.len() {
        if g[i] != group || !den(t[i], p[i]) {
            continue;
        }
        d += 1;
        if num(t[i], p[i]) {
            n += 1;
        }
    }
    (d > 0).then(|| Ratio::new(n, d))
}

fn oracle(t: &[u32], p: &[u32], g: &[u8], metric: Metric) -> Option<f64> {
    let any = |_: u32, _: u32| true;
    let rate = |group| match metric {
        Metric::SD => oracle_rate(t, p, g, group, |_, p| p == 1, any),
        Metric::EOD => oracle_rate(t, p, g, group, |_, p| p == 1, |t, _| t == 1),
        Metric::PED => oracle_rate(t, p, g, group, |_, p| p == 1, |t, _| t == 0),
        Metric::OAD => oracle_rate(t, p, g, group, |t, p| t == p, any),
        Metric::PRD => oracle_rate(t, p, g, group, |t, _| t == 1, |_, p| p == 1),
    };
    let diff = rate(1)? - rate(0)?;
    Some(*diff.numer() as f64 / *diff.denom() as f64)
}

fn criterion_4() -> Outcome {
    let mut rng = seed::rng(4, &[]);
    let mut mismatches = 0;
    let mut undefined = 0;
    let mut checked = 0;
    for _ in 0..1000 {
        let n = rng.random_range(1..=50);
        // Vary class balance so undefined denominators show up too.
        let (pt, pp, pg) = (
            rng.random::<f64>(),
            rng.random::<f64>(),
            rng.random::<f64>(),
        );
        let t: Vec<u32> = (0..n).map(|_| u32::from(rng.random_bool(pt))).collect();
        let p: Vec<u32> = (0..n).map(|_| u32::from(rng.random_bool(pp))).collect();
        let g: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(pg))).collect();
        let pair = group_rates(&t, &p, &g).unwrap();
        let report = disparity(&pair.privileged, &pair.unprivileged).ok();
        for m in Metric::ALL {
            let got = report.and_then(|r| r.get(m));
            let want = oracle(&t, &p, &g, m);
            checked += 1;
            undefined += usize::from(want.is_none());
            if got != want {
                mismatches += 1;
            }
        }
    }
    report(
        4,
        "disparities equal counting oracle exactly",
        mismatches == 0,
        format!("{checked} values ({undefined} undefined), {mismatches} mismatches"),
    )
}

fn sd(summary: &[SummaryRow], setting: Setting, eps: f64) -> f64 {
    summary_mean(
        summary,
        setting,
        eps,
        Group::Overall,
        Measure::Disparity(Metric::SD),
    )
    .unwrap_or(f64::NAN)
}

fn synthetic_summary() -> (Vec<SummaryRow>, f64) {
    let cfg = ExperimentConfig {
        dataset: DatasetConfig {
            n: 20_000,
            regime: Some(Regime::Q2),
            ..DatasetConfig::preset("synthetic1")
        },
        settings: Setting::ALL.to_vec(),
        epsilons: vec![16.0, 2.0, 0.1],
        runs: 5,
        folds: 10,
        seed: SYNTH_SEED,
        ..ExperimentConfig::default()
    };
    let start = Instant::now();
    let rows = harness::run_experiment(&cfg).expect("synthetic experiment");
    (
        harness::aggregate(&rows).unwrap(),
        start.elapsed().as_secs_f64(),
    )
}

fn criteria_5_to_7(summary: &[SummaryRow], secs: f64) -> Vec<Outcome> {
    let base = sd(summary, Setting::NoLdp, 0.1).abs();
    let comb01 = sd(summary, Setting::CombLdp, 0.1);
    let ind01 = sd(summary, Setting::IndLdp, 0.1);
    let comb2 = sd(summary, Setting::CombLdp, 2.0).abs();
    let sldp2 = sd(summary, Setting::Sldp, 2.0).abs();
    println!(
        "     synthetic1/Q2 n=20000 R=5 folds=10 seed={SYNTH_SEED} ({secs:.0} s): \
         |SD| noLDP {base:.4}; eps=2 sLDP {sldp2:.4} combLDP {comb2:.4}; \
         eps=0.1 combLDP {comb01:.4} indLDP {ind01:.4}"
    );
    vec![
        report(
            5,
            "combLDP at eps=0.1 removes disparity",
            comb01.abs() <= 0.05 && comb01.abs() <= 0.25 * base && base >= 0.1,
            format!(
                "|SD| {:.4} vs noLDP {base:.4} (limits 0.05 and {:.4})",
                comb01.abs(),
                0.25 * base
            ),
        ),
        report(
            6,
            "combLDP removes disparity earlier than sLDP",
            comb2 <= sldp2 - 0.02,
            format!("eps=2: combLDP {comb2:.4}, sLDP {sldp2:.4}"),
        ),
        report(
            7,
            "indLDP and combLDP converge at eps=0.1",
            (ind01 - comb01).abs() <= 0.03,
            format!("|SD(ind) - SD(comb)| = {:.4}", (ind01 - comb01).abs()),
        ),
    ]
}

fn criterion_8(bin: &Path) -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let invoke = |out: &Path, format: &str| {
        let status = Command::new(bin)
            .args([
                "run",
                "--dataset",
                "synthetic2",
                "--regime",
                "Q3",
                "--n",
                "3000",
            ])
            .args([
                "--runs",
                "2",
                "--folds",
                "4",
                "--seed",
                "77",
                "--epsilons",
                "8,1,0.1",
            ])
            .args(["--trees", "30", "--format", format, "--out"])
            .arg(out)
            .output()
            .expect("spawn ldpfair");
        assert!(
            status.status.success(),
            "{}",
            String::from_utf8_lossy(&status.stderr)
        );
    };
    let mut identical = true;
    let mut compared = Vec::new();
    for format in ["csv", "json"] {
        let (a, b) = (
            dir.path().join(format!("{format}-a")),
            dir.path().join(format!("{format}-b")),
        );
        invoke(&a, format);
        invoke(&b, format);
        for file in [format!("summary.{format}"), "rows.csv".to_owned()] {
            let (x, y) = (
                std::fs::read(a.join(&file)).unwrap(),
                std::fs::read(b.join(&file)).unwrap(),
            );
            identical &= x == y && !x.is_empty();
            compared.push(format!("{file} {} B", x.len()));
        }
    }
    report(
        8,
        "repeated runs are byte-identical",
        identical,
        compared.join(", "),
    )
}

fn benchmark(name: &str, env: &str) -> Option<Result<(PreparedData, PathBuf), String>> {
    let csv = std::env::var_os(env)?;
    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join(format!("../../configs/{name}.toml"));
    Some((|| {
        let mut ingest = IngestConfig::from_toml_file(&config).map_err(|e| e.to_string())?;
        ingest.path = PathBuf::from(&csv);
        let (dataset, report) = ldpfair::ingest::load(&ingest).map_err(|e| e.to_string())?;
        Ok((
            PreparedData {
                name: name.to_owned(),
                regime: "config".to_owned(),
                dataset,
                load_report: Some(report),
            },
            config,
        ))
    })())
}

fn criterion_9() -> Outcome {
    let mut lines = Vec::new();
    let mut pass = true;
    for (name, env) in [
        ("compas", "LDPFAIR_COMPAS_CSV"),
        ("adult", "LDPFAIR_ADULT_CSV"),
    ] {
        match benchmark(name, env) {
            None => lines.push(format!("{name}: not supplied ({env} unset)")),
            Some(Err(e)) => {
                pass = false;
                lines.push(format!("{name}: {e}"));
            }
            Some(Ok((data, _))) => {
                let cfg = ExperimentConfig {
                    settings: vec![Setting::NoLdp, Setting::CombLdp],
                    epsilons: vec![0.1],
                    runs: 5,
                    folds: 10,
                    seed: SYNTH_SEED,
                    ..ExperimentConfig::default()
                };
                let rows = harness::run_on(&cfg, &data, &cfg.forest).expect("benchmark experiment");
                let summary = harness::aggregate(&rows).unwrap();
                let base = sd(&summary, Setting::NoLdp, 0.1).abs();
                let comb = sd(&summary, Setting::CombLdp, 0.1).abs();
                let ok = base < 0.05 || comb < base;
                pass &= ok;
                lines.push(format!(
                    "{name}: n={} |SD| noLDP {base:.4}, combLDP {comb:.4}",
                    data.dataset.n()
                ));
            }
        }
    }
    report(
        9,
        "benchmark combLDP |SD| below baseline at eps=0.1",
        pass,
        lines.join("; "),
    )
}

fn main() {
    let bin = PathBuf::from(env!("CARGO_BIN_EXE_ldpfair"));
    let mut outcomes = vec![criterion_1(), criterion_2(), criterion_3(), criterion_4()];
    let (summary, secs) = synthetic_summary();
    outcomes.extend(criteria_5_to_7(&summary, secs));
    outcomes.push(criterion_8(&bin));
    outcomes.push(criterion_9());
    let failed: Vec<_> = outcomes.iter().filter(|o| !o.pass).collect();
    println!(
        "acceptance: {}/{} passed",
        outcomes.len() - failed.len(),
        outcomes.len()
    );
    if !failed.is_empty() {
        for o in &failed {
            eprintln!("failed criterion {}: {}", o.id, o.detail);
        }
        std::process::exit(1);
    }
}
