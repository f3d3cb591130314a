//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any criterion fails. A substring argument restricts the
//! run to matching criterion names.

mod common;

use std::process::ExitCode;
use std::time::Instant;

use common::{max_oracle_gap, random_instance};
use gocleak_core::{
    evaluate_policy, extract_sigma, min_leakage, pack_policy, pareto_sweep, policy_entropy,
    run_batch, run_strategy, run_strategy_batch, EpisodeConfig, ParetoRow,
    ParetoTable, PdeConfig, PolicyKind, Scenario, SolvedPolicies, Strategy,
};

type Outcome = Result<String, String>;

const THETAS: [f64; 8] = [1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0, 128.0];

fn betas() -> Vec<f64> {
    (1..=10).map(|k| 0.2 * k as f64).collect()
}

fn base(scenario: Scenario) -> EpisodeConfig {
    EpisodeConfig { scenario, theta: 32.0, beta: 1.0, d_gap: 5, n_steps: 200, ..EpisodeConfig::default() }
}

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn oracle_equivalence() -> Outcome {
    let cases = 500u64;
    let mut worst = 0.0f64;
    for seed in 0..cases {
        let inst = random_instance(seed.wrapping_mul(0x2545_F491_4F6C_DD1D), 8);
        assert!(inst.n() <= 5 && inst.t_max <= 4);
        worst = worst.max(max_oracle_gap(&inst, 2));
    }
    verdict(worst < 1e-9, format!("{cases} instances, max L1 gap {worst:.2e} (tol 1e-9)"))
}

fn periodic_privacy() -> Outcome {
    let cfg = EpisodeConfig { policy_kind: PolicyKind::Pp, ..base(Scenario::Estimation) };
    let strategy = Strategy::for_config(&cfg).map_err(|e| e.to_string())?;
    let episode = run_strategy(&strategy, &cfg, cfg.seed, 0).map_err(|e| e.to_string())?;
    let tail: Vec<f64> = episode.records.iter().skip(50).map(|r| r.leakage).collect();
    let mean = tail.iter().sum::<f64>() / tail.len() as f64;
    let floor = min_leakage(&strategy.model, &strategy.plans[0]).map_err(|e| e.to_string())?;
    verdict(
        (mean - floor).abs() <= 0.05,
        format!("PP leakage {mean:.4} vs floor {floor:.4} (tol 0.05)"),
    )
}

fn headline_attack() -> Outcome {
    let cfg = base(Scenario::Estimation);
    let m = run_batch(&cfg, 10).map_err(|e| e.to_string())?.mean;
    let ok = (0.45..=0.75).contains(&m.eve_accuracy) && m.mean_leakage >= 0.7;
    verdict(
        ok,
        format!(
            "MPI Eve accuracy {:.3} (want [0.45, 0.75]), leakage {:.3} (want >= 0.7)",
            m.eve_accuracy, m.mean_leakage
        ),
    )
}

fn ade_band() -> Outcome {
    let ade_cfg = EpisodeConfig { policy_kind: PolicyKind::Ade, ..base(Scenario::Estimation) };
    let pp_cfg = EpisodeConfig { policy_kind: PolicyKind::Pp, ..ade_cfg.clone() };
    let ade = run_batch(&ade_cfg, 10).map_err(|e| e.to_string())?.mean;
    let pp = run_batch(&pp_cfg, 10).map_err(|e| e.to_string())?.mean;
    let gain = 100.0 * (ade.mean_reward - pp.mean_reward) / pp.mean_reward.abs();
    let in_band = (0.35..=0.55).contains(&ade.mean_leakage);
    let ordered = ade.mean_reward >= pp.mean_reward;
    let magnitude = (gain - 10.0).abs() <= 8.0;
    verdict(
        in_band && ordered && magnitude,
        format!(
            "ADE leakage {:.3} (want [0.35, 0.55]), reward {:.4} vs PP {:.4}, gain {gain:.1}% (want 10 +/- 8)",
            ade.mean_leakage, ade.mean_reward, pp.mean_reward
        ),
    )
}

fn defense_headline() -> Outcome {
    let cfg = base(Scenario::Estimation);
    let solved = SolvedPolicies::solve(cfg.model().unwrap(), cfg.planner().unwrap())
        .map_err(|e| e.to_string())?;
    let run = |kind| {
        let strategy = Strategy::build(&solved, kind, &cfg.defense)?;
        run_strategy_batch(&strategy, &EpisodeConfig { policy_kind: kind, ..cfg.clone() }, 10)
    };
    let mpi = run(PolicyKind::Mpi).map_err(|e| e.to_string())?.mean;
    let pp = run(PolicyKind::Pp).map_err(|e| e.to_string())?.mean;
    let advantage = mpi.mean_task_reward - pp.mean_task_reward;
    let mut ok = advantage > 0.0;
    let mut parts = vec![format!("MPI leakage {:.3}, task advantage over PP {advantage:.4}", mpi.mean_leakage)];
    for kind in [PolicyKind::Ade, PolicyKind::Pde] {
        let m = run(kind).map_err(|e| e.to_string())?.mean;
        let reduction = 1.0 - m.mean_leakage / mpi.mean_leakage;
        let retained = (m.mean_task_reward - pp.mean_task_reward) / advantage;
        ok &= reduction >= 0.4 && retained > 0.8;
        parts.push(format!(
            "{kind}: leakage -{:.0}% (want >= 40%), advantage kept {:.0}% (want > 80%)",
            100.0 * reduction,
            100.0 * retained
        ));
    }
    verdict(ok, parts.join("; "))
}

fn pde_construction() -> Outcome {
    let mut cells = 0;
    let mut failures = Vec::new();
    let mut worst_excess = f64::NEG_INFINITY;
    for scenario in [Scenario::Estimation, Scenario::Control] {
        for &theta in &THETAS {
            for beta in betas() {
                let cfg = EpisodeConfig { theta, beta, ..base(scenario) };
                let solved = SolvedPolicies::solve(cfg.model().unwrap(), cfg.planner().unwrap())
                    .map_err(|e| e.to_string())?;
                let sigma0 = extract_sigma(&solved.goc);
                let h0 = policy_entropy(&sigma0);
                let pde = PdeConfig::new(0.5 * h0, cfg.t_max).map_err(|e| e.to_string())?;
                let packed = pack_policy(&sigma0, Some(&solved.goc), &pde, &solved.model, &solved.planner)
                    .map_err(|e| e.to_string())?;
                let mut prev = h0;
                let mut granularity = 0.0f64;
                for step in &packed.steps {
                    granularity = granularity.max(prev - step.entropy);
                    prev = step.entropy;
                }
                let h = policy_entropy(&packed.sigma);
                worst_excess = worst_excess.max(h - 0.5 * h0);
                if h > 0.5 * h0 + granularity {
                    failures.push(format!("{scenario:?} theta={theta} beta={beta:.1}: {h:.4} > {:.4}", 0.5 * h0));
                }
                cells += 1;
            }
        }
    }
    verdict(
        failures.is_empty(),
        format!(
            "{cells} cells, max H(PDE) - H(MPI)/2 = {worst_excess:.2e}{}",
            if failures.is_empty() { String::new() } else { format!("; {}", failures.join(", ")) }
        ),
    )
}

fn reward_dominance() -> Outcome {
    let mut cells = 0;
    let mut worst = f64::INFINITY;
    let mut failures = Vec::new();
    for scenario in [Scenario::Estimation, Scenario::Control] {
        for &theta in &THETAS {
            for beta in betas() {
                let cfg = EpisodeConfig { theta, beta, ..base(scenario) };
                let planner = cfg.planner().unwrap();
                let solved =
                    SolvedPolicies::solve(cfg.model().unwrap(), planner).map_err(|e| e.to_string())?;
                let goc = evaluate_policy(&solved.model, &extract_sigma(&solved.goc), &solved.goc, &planner)
                    .map_err(|e| e.to_string())?;
                let margin = goc - solved.periodic.value;
                worst = worst.min(margin);
                if margin < -2.0 * planner.value_tolerance {
                    failures.push(format!("{scenario:?} theta={theta} beta={beta:.1}: {margin:.3e}"));
                }
                cells += 1;
            }
        }
    }
    verdict(
        failures.is_empty(),
        format!("{cells} cells, min value(GOC) - value(PP) = {worst:.3e}{}", failures.join(", ")),
    )
}

fn gap_monotonicity() -> Outcome {
    let gaps = [1usize, 5, 10, 15];
    let mut ok = true;
    let mut parts = Vec::new();
    for scenario in [Scenario::Estimation, Scenario::Control] {
        let cfg = base(scenario);
        let solved = SolvedPolicies::solve(cfg.model().unwrap(), cfg.planner().unwrap())
            .map_err(|e| e.to_string())?;
        let mpi = Strategy::build(&solved, PolicyKind::Mpi, &cfg.defense).map_err(|e| e.to_string())?;
        let ade = Strategy::build(&solved, PolicyKind::Ade, &cfg.defense).map_err(|e| e.to_string())?;
        let mut mpi_curve = Vec::new();
        let mut ade_curve = Vec::new();
        for &d_gap in &gaps {
            let run = |st: &Strategy| {
                run_strategy_batch(st, &EpisodeConfig { d_gap, policy_kind: st.kind, ..cfg.clone() }, 10)
                    .map(|b| b.mean.mean_leakage)
                    .map_err(|e| e.to_string())
            };
            mpi_curve.push(run(&mpi)?);
            ade_curve.push(run(&ade)?);
        }
        if scenario == Scenario::Estimation {
            ok &= mpi_curve.windows(2).all(|w| w[1] >= w[0]);
        }
        ok &= ade_curve.iter().all(|&l| l <= cfg.defense.l_high);
        let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(" ");
        parts.push(format!("{scenario:?} MPI [{}] ADE [{}]", fmt(&mpi_curve), fmt(&ade_curve)));
    }
    verdict(ok, format!("D = 1,5,10,15: {}", parts.join("; ")))
}

fn pooled(a: f64, b: f64) -> f64 {
    (a * a + b * b).sqrt()
}

/// Every PDE frontier point below `cap` leakage is matched by some ADE point
/// with no more leakage and no less reward, up to two pooled standard errors.
fn ade_dominates(table: &ParetoTable, cap: f64) -> (bool, Vec<String>) {
    let front = |kind| -> Vec<ParetoRow> {
        let rows: Vec<ParetoRow> = table.of(kind).cloned().collect();
        gocleak_core::non_dominated(&rows)
    };
    let ade = front(PolicyKind::Ade);
    let mut misses = Vec::new();
    for p in front(PolicyKind::Pde).iter().filter(|p| p.mean_leakage < cap) {
        let covered = ade.iter().any(|a| {
            a.mean_leakage <= p.mean_leakage + 2.0 * pooled(a.se_leakage, p.se_leakage)
                && a.mean_reward >= p.mean_reward - 2.0 * pooled(a.se_reward, p.se_reward)
        });
        if !covered {
            misses.push(format!("PDE({:.2}) L={:.3} R={:.4}", p.parameter.unwrap_or(f64::NAN), p.mean_leakage, p.mean_reward));
        }
    }
    (misses.is_empty(), misses)
}

fn pareto_shape() -> Outcome {
    let ade_grid: Vec<f64> = (0..=10).map(|k| 0.05 * k as f64).collect();
    let pde_grid: Vec<f64> = (0..10).map(|k| 0.1 * k as f64).collect();

    let est = pareto_sweep(&base(Scenario::Estimation), &ade_grid, &pde_grid, 50).map_err(|e| e.to_string())?;
    let (dominates, misses) = ade_dominates(&est, 0.7);

    let ctl = pareto_sweep(&base(Scenario::Control), &ade_grid, &pde_grid, 50).map_err(|e| e.to_string())?;
    let mpi_reward = ctl.of(PolicyKind::Mpi).next().unwrap().mean_reward;
    let best = ctl
        .of(PolicyKind::Pde)
        .filter(|r| r.mean_leakage < 0.2 && r.mean_reward >= 0.9 * mpi_reward)
        .max_by(|a, b| a.mean_reward.total_cmp(&b.mean_reward));
    let control = match best {
        Some(r) => format!(
            "control PDE({:.1}) L={:.3} R={:.4} ({:.0}% of MPI)",
            r.parameter.unwrap(),
            r.mean_leakage,
            r.mean_reward,
            100.0 * r.mean_reward / mpi_reward
        ),
        None => "control: no PDE point with L < 0.2 and >= 90% of MPI reward".to_string(),
    };
    let estimation = if dominates {
        "estimation: ADE frontier covers PDE frontier below L=0.7".to_string()
    } else {
        format!("estimation: uncovered {}", misses.join(", "))
    };
    verdict(dominates && best.is_some(), format!("{estimation}; {control}"))
}

fn main() -> ExitCode {
    let filter: Option<String> = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("oracle_equivalence", oracle_equivalence),
        ("periodic_privacy", periodic_privacy),
        ("headline_attack", headline_attack),
        ("ade_band", ade_band),
        ("defense_headline", defense_headline),
        ("pde_construction", pde_construction),
        ("reward_dominance", reward_dominance),
        ("gap_monotonicity", gap_monotonicity),
        ("pareto_shape", pareto_shape),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        if filter.as_deref().is_some_and(|f| !name.contains(f)) {
            continue;
        }
        let start = Instant::now();
        let outcome = check();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS criterion {} {name} ({secs:.1}s): {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {} {name} ({secs:.1}s): {detail}", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
