//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Exits 0 after printing every line so the workspace test run stays usable;
//! set `PARAPACK_ACCEPTANCE_STRICT=1` to turn any FAIL into a non-zero exit.

use std::collections::BTreeSet;
use std::path::Path;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use parapack::aging::{side_current_density, SeiState};
use parapack::arrange::{evaluate_order, strategies};
use parapack::espm::{CellModel, Discretization};
use parapack::module_solver::{run_protocol, Control, ModuleSimulator};
use parapack::montecarlo::{run_campaign, CampaignSpec, ResultsTable, RunOptions, RESULTS_FILE};
use parapack::params::{
    eps_from_capacity, CellParameters, Electrode, ModuleConfig, SolverSettings, FARADAY, T_REF,
};
use parapack::stats::analysis::{analyze_response, Analysis};
use parapack::stats::{
    design_matrix, fit_ols, relative_importance, stepwise_fit, StepwiseOptions, Table, Term,
};
use parapack::thermal::{step_temperatures, ThermalNetwork};
use parapack::trace::SimTrace;

struct Outcome {
    pass: bool,
    detail: String,
}

fn report(n: usize, title: &str, secs: f64, o: &Outcome) {
    println!(
        "{} criterion {n:>2}: {title}: {} [{:.1} s]",
        if o.pass { "PASS" } else { "FAIL" },
        o.detail,
        secs
    );
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn cells_with_capacity(caps: &[f64]) -> Vec<CellParameters> {
    caps.iter()
        .map(|&q| {
            let mut c = CellParameters::lg_m50_like();
            c.eps_s_n = eps_from_capacity(q, Electrode::Negative).unwrap();
            c.eps_s_p = eps_from_capacity(q, Electrode::Positive).unwrap();
            c
        })
        .collect()
}

fn module(caps: &[f64], r_int: f64, solver: SolverSettings) -> ModuleConfig {
    let mut cfg = ModuleConfig::homogeneous(CellParameters::lg_m50_like(), caps.len(), r_int, 5e-3);
    cfg.cells = cells_with_capacity(caps);
    cfg.solver = solver;
    cfg
}

// 1 ---------------------------------------------------------------------

fn kirchhoff(tables: &[&ResultsTable]) -> Outcome {
    let (mut sum, mut ladder, mut rows, mut failed) = (0.0f64, 0.0f64, 0, 0);
    for t in tables {
        for r in &t.rows {
            rows += 1;
            if !r.is_ok() {
                failed += 1;
                continue;
            }
            sum = sum.max(r.max_sum_residual);
            ladder = ladder.max(r.max_ladder_residual);
        }
    }
    Outcome {
        pass: failed == 0 && sum <= 1e-9 && ladder <= 1e-9,
        detail: format!("{rows} modules, {failed} failed; max |sum - i_mod|/max(1,|i_mod|) = {sum:.2e}, max ladder residual = {ladder:.2e} V"),
    }
}

// 2 ---------------------------------------------------------------------

fn symmetry() -> Outcome {
    let cfg = module(&[4.85; 4], 0.0, SolverSettings::default());
    let tr = run_protocol(&cfg).unwrap();
    let c = &tr.cycles[0];
    let mut worst_i: f64 = 0.0;
    let mut worst_t: f64 = 0.0;
    for s in &tr.samples {
        for k in 1..4 {
            worst_i = worst_i.max((s.i_branch[k] - s.i_branch[0]).abs());
            worst_t = worst_t.max((s.temperature[k] - s.temperature[0]).abs());
        }
    }
    Outcome {
        pass: c.sigma_i <= 1e-9 && c.sigma_t <= 1e-9 && c.delta_t_max_cycle <= 1e-9 && worst_i <= 1e-9,
        detail: format!(
            "R_int = 0: sigma_I = {:.2e} A, sigma_T = {:.2e} K, dT_max = {:.2e} K, max pointwise |i_k - i_1| = {worst_i:.2e} A, |T_k - T_1| = {worst_t:.2e} K",
            c.sigma_i, c.sigma_t, c.delta_t_max_cycle
        ),
    }
}

// 3 ---------------------------------------------------------------------

/// Gaussian elimination with partial pivoting on X'X b = X'y.
fn normal_equations(x: &DMatrix<f64>, y: &[f64]) -> Vec<f64> {
    let (n, q) = x.shape();
    let mut a = vec![vec![0.0; q + 1]; q];
    for i in 0..q {
        for j in 0..q {
            a[i][j] = (0..n).map(|r| x[(r, i)] * x[(r, j)]).sum();
        }
        a[i][q] = (0..n).map(|r| x[(r, i)] * y[r]).sum();
    }
    for c in 0..q {
        let p = (c..q)
            .max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))
            .unwrap();
        a.swap(c, p);
        for r in c + 1..q {
            let f = a[r][c] / a[c][c];
            for k in c..=q {
                a[r][k] -= f * a[c][k];
            }
        }
    }
    let mut b = vec![0.0; q];
    for c in (0..q).rev() {
        b[c] = (a[c][q] - (c + 1..q).map(|k| a[c][k] * b[k]).sum::<f64>()) / a[c][c];
    }
    b
}

fn ols_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let q = rng.gen_range(1..=20);
        let n = rng.gen_range(q + 5..=1000);
        let x = DMatrix::from_fn(n, q, |_, c| {
            if c == 0 {
                1.0
            } else {
                gauss(&mut rng) * (1.0 + c as f64)
            }
        });
        let beta: Vec<f64> = (0..q).map(|_| gauss(&mut rng)).collect();
        let y: Vec<f64> = (0..n)
            .map(|r| (0..q).map(|c| x[(r, c)] * beta[c]).sum::<f64>() + gauss(&mut rng))
            .collect();
        let names: Vec<String> = (0..q).map(|c| format!("x{c}")).collect();
        let fit = fit_ols(&x, &y, &names).unwrap();
        let oracle = normal_equations(&x, &y);
        let diff: f64 = fit
            .coefficients
            .iter()
            .zip(&oracle)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        let norm: f64 = oracle.iter().map(|b| b * b).sum::<f64>().sqrt();
        worst = worst.max(diff / norm);
    }
    Outcome {
        pass: worst <= 1e-8,
        detail: format!(
            "100 problems (n <= 1000, q <= 20), worst relative coefficient difference {worst:.2e}"
        ),
    }
}

// 4 ---------------------------------------------------------------------

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for i in 0..=p.len() {
            let mut q = p.clone();
            q.insert(i, n - 1);
            out.push(q);
        }
    }
    out
}

/// Average incremental R² over every entry order of the model's predictors.
fn shapley_oracle(terms: &[Term], used: &[usize], z: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let r2 = |set: &[usize]| -> f64 {
        let mut ts = vec![Term::Intercept];
        ts.extend(
            terms
                .iter()
                .copied()
                .filter(|t| t.predictors().iter().all(|p| set.contains(p))),
        );
        if ts.len() == 1 {
            return 0.0;
        }
        let names: Vec<String> = (0..ts.len()).map(|i| i.to_string()).collect();
        fit_ols(&design_matrix(&ts, z), y, &names)
            .unwrap()
            .r_squared
    };
    let perms = permutations(used.len());
    let mut shares = vec![0.0; used.len()];
    for p in &perms {
        let mut set = Vec::new();
        let mut prev = 0.0;
        for &g in p {
            set.push(used[g]);
            let now = r2(&set);
            shares[g] += now - prev;
            prev = now;
        }
    }
    shares.iter().map(|s| s / perms.len() as f64).collect()
}

fn dominance(analyses: &[Analysis]) -> Outcome {
    let mut identity: f64 = 0.0;
    for a in analyses {
        identity = identity.max((a.report.total_share() - a.model.r_squared).abs());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut oracle_gap: f64 = 0.0;
    let mut checked = 0;
    for rep in 0..40 {
        let p = 2 + rep % 3;
        let n = 150;
        let cols: Vec<Vec<f64>> = (0..p)
            .map(|_| (0..n).map(|_| gauss(&mut rng)).collect())
            .collect();
        // correlated predictors and an interaction
        let mut cols = cols;
        for i in 0..n {
            cols[1][i] += 0.6 * cols[0][i];
        }
        let y: Vec<f64> = (0..n)
            .map(|i| {
                cols.iter()
                    .enumerate()
                    .map(|(j, c)| (j + 1) as f64 * c[i])
                    .sum::<f64>()
                    + 0.8 * cols[0][i] * cols[1][i]
                    + 0.5 * cols[0][i].powi(2)
                    + gauss(&mut rng)
            })
            .collect();
        let table = Table::new((0..p).map(|j| format!("x{j}")).collect(), cols).unwrap();
        let cand = parapack::stats::full_quadratic_terms(p);
        let model = stepwise_fit(&table, &y, "y", &cand, &StepwiseOptions::default()).unwrap();
        let shares = relative_importance(&model, &table, &y, "dominance").unwrap();
        let sum: f64 = shares.iter().map(|s| s.share).sum();
        identity = identity.max((sum - model.r_squared).abs());
        let used = model.used_predictors();
        if used.len() > 4 {
            continue;
        }
        let z = model.standardizer.apply(&table.columns);
        let oracle = shapley_oracle(model.model_terms(), &used, &z, &y);
        for (g, &j) in used.iter().enumerate() {
            let mine = shares
                .iter()
                .find(|s| s.predictor == table.names[j])
                .unwrap()
                .share;
            oracle_gap = oracle_gap.max((mine - oracle[g]).abs());
        }
        checked += 1;
    }
    Outcome {
        pass: identity <= 1e-10 && oracle_gap <= 1e-10 && checked > 0,
        detail: format!(
            "{} models, max |sum of shares - R^2| = {identity:.2e}; permutation oracle on {checked} problems (<= 4 predictors), max gap {oracle_gap:.2e}",
            analyses.len() + 40
        ),
    }
}

// 5, 6, 8 ---------------------------------------------------------------

fn is_sigma_eps(name: &str) -> bool {
    name == "sigma_eps_n" || name == "sigma_eps_p"
}

fn short_term(per_seed: &[(u64, Analysis)]) -> Outcome {
    let mut hits = 0;
    let mut lines = Vec::new();
    for (seed, a) in per_seed {
        let top = a.report.top(2);
        let set: BTreeSet<&str> = top.iter().copied().collect();
        let ok = set.contains("r_int") && top.iter().any(|t| is_sigma_eps(t));
        hits += ok as usize;
        lines.push(format!(
            "seed {seed}: {} (R^2 {:.3})",
            top.join("+"),
            a.model.r_squared
        ));
    }
    let frac = hits as f64 / per_seed.len() as f64;
    Outcome {
        pass: frac >= 0.8,
        detail: format!(
            "{hits}/{} seeds with top-2 = {{r_int, sigma_eps}}; {}",
            per_seed.len(),
            lines.join("; ")
        ),
    }
}

fn capacity_mean(per_seed: &[(u64, Analysis)]) -> Outcome {
    let mut hits = 0;
    let mut lines = Vec::new();
    for (seed, a) in per_seed {
        let top = a.report.top(1);
        hits += (top.first() == Some(&"mu_comb")) as usize;
        lines.push(format!(
            "seed {seed}: {} {:.3} of R^2 {:.3}",
            top.first().unwrap_or(&"-"),
            a.report.rows.first().map_or(0.0, |r| r.share),
            a.model.r_squared
        ));
    }
    let frac = hits as f64 / per_seed.len() as f64;
    Outcome {
        pass: frac >= 0.8,
        detail: format!(
            "{hits}/{} seeds with mu_comb first for dq (extended); {}",
            per_seed.len(),
            lines.join("; ")
        ),
    }
}

fn ranks(v: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0; v.len()];
    for (rank, &i) in idx.iter().enumerate() {
        r[i] = rank;
    }
    r
}

fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let d2: f64 = ra
        .iter()
        .zip(&rb)
        .map(|(x, y)| (*x as f64 - *y as f64).powi(2))
        .sum();
    1.0 - 6.0 * d2 / (n * (n * n - 1.0))
}

fn aging(tables: &[&ResultsTable]) -> Outcome {
    let (mut modules, mut monotone, mut eligible, mut matched, mut rho_sum) = (0, 0, 0, 0, 0.0);
    for t in tables {
        for r in t.ok_rows() {
            modules += 1;
            monotone += r.r_sei_monotone as usize;
            if r.dtmax_run > 0.2 {
                eligible += 1;
                matched += (ranks(&r.final_r_sei) == ranks(&r.t_avg)) as usize;
                rho_sum += spearman(&r.final_r_sei, &r.t_avg);
            }
        }
    }
    let frac = if eligible > 0 {
        matched as f64 / eligible as f64
    } else {
        0.0
    };
    Outcome {
        pass: monotone == modules && eligible > 0 && frac >= 0.9,
        detail: format!(
            "R_sei monotone in {monotone}/{modules} modules; ordering matches T_avg in {matched}/{eligible} modules with dT_max > 0.2 K ({:.0}%, mean Spearman {:.2})",
            100.0 * frac,
            if eligible > 0 { rho_sum / eligible as f64 } else { f64::NAN }
        ),
    }
}

// 7 ---------------------------------------------------------------------

fn arrangement() -> Outcome {
    let spec = CampaignSpec::fast(7);
    let reg = strategies();
    let reductions: Vec<f64> = (0..100)
        .into_par_iter()
        .map(|i| {
            let cfg = spec.module_config(i).unwrap();
            let desc = reg.get("descending").unwrap().order(&cfg.cells).unwrap();
            let asc = reg.get("ascending").unwrap().order(&cfg.cells).unwrap();
            let d = evaluate_order(&cfg, &desc, 1).unwrap().delta_t_max;
            let a = evaluate_order(&cfg, &asc, 1).unwrap().delta_t_max;
            (a - d) / a
        })
        .collect();
    let better = reductions.iter().filter(|&&r| r > 0.0).count();
    let mut sorted = reductions.clone();
    sorted.sort_by(f64::total_cmp);
    let median = 0.5 * (sorted[49] + sorted[50]);
    Outcome {
        pass: better >= 90 && median >= 0.25,
        detail: format!(
            "descending beats ascending on dT_max in {better}/100 modules, median reduction {:.1}%",
            100.0 * median
        ),
    }
}

// 9 ---------------------------------------------------------------------

fn conservation() -> Outcome {
    // lithium, SEI off
    let mut cfg = module(&[4.8, 4.9, 4.75, 4.85], 3e-4, SolverSettings::fast());
    cfg.solver.aging = false;
    let sim = ModuleSimulator::new(&cfg).unwrap();
    let total = |st: &parapack::module_solver::ModuleState| -> f64 {
        sim.models
            .iter()
            .zip(&st.cells)
            .map(|(m, c)| {
                let (a, b) = m.solid_lithium(c);
                a + b
            })
            .sum()
    };
    let mut st = sim.initial_state().unwrap();
    let before = total(&st);
    for k in 0..200 {
        let control = if k < 150 {
            Control::Current(10.0)
        } else {
            Control::Current(0.0)
        };
        st = sim.step(&st, control, 10.0).unwrap();
    }
    let li = ((total(&st) - before) / before).abs();

    // side-reaction charge
    let m = CellModel::new(CellParameters::lg_m50_like(), Discretization::default()).unwrap();
    let mut cell = m.initial_state(0.3, T_REF);
    let mut sei = SeiState::fresh(&m);
    let area = m.a_s_n() * m.params.l_n * m.params.a_cell;
    let mut charge = 0.0;
    for _ in 0..500 {
        cell = m.step(&cell, -1.6, 7.0).unwrap();
        let bd = m.voltage(&cell, -1.6);
        charge +=
            side_current_density(&m, &bd, cell.temperature, -1.6, sei.r_sei).abs() * area * 7.0;
        sei = sei.advance(&m, &bd, cell.temperature, -1.6, 7.0);
    }
    let side = (sei.n_li_lost * FARADAY - charge).abs() / charge;

    // thermal energy per step
    let net = ThermalNetwork::uniform(4, 15.0, 20.0, 70.0, T_REF);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut t = vec![T_REF; 4];
    let mut thermal: f64 = 0.0;
    for _ in 0..500 {
        let heats: Vec<f64> = (0..4).map(|_| rng.gen_range(-0.2..1.5)).collect();
        let next = step_temperatures(&t, &heats, &net, 5.0);
        thermal = thermal.max(net.energy_residual(&t, &next, &heats, 5.0).abs());
        t = next;
    }

    // discharge energy and the ladder
    let cfg = module(&[4.8, 4.9, 4.75, 4.85], 4e-4, SolverSettings::fast());
    let mut stream = Vec::new();
    let tr = ModuleSimulator::new(&cfg)
        .unwrap()
        .run_observed(&mut |s| stream.push(s.clone()))
        .unwrap();
    let c = &tr.cycles[0];
    let ladder = ((c.e_mod - (c.e_cells - c.e_ladder)) / c.e_mod).abs();
    let rebuilt = SimTrace::from_samples(stream, cfg.r_int).unwrap();
    let replay = ((rebuilt.cycles[0].e_mod - c.e_mod) / c.e_mod).abs();

    Outcome {
        pass: li <= 1e-9 && side <= 1e-8 && thermal <= 1e-9 && ladder <= 1e-6 && replay <= 1e-12,
        detail: format!(
            "lithium {li:.1e}, side-reaction charge {side:.1e}, thermal step residual {thermal:.1e} J, E_mod = E_cells - E_ladder {ladder:.1e} (replayed {replay:.1e})"
        ),
    }
}

// 10 --------------------------------------------------------------------

fn determinism(root: &Path) -> Outcome {
    let mut spec = CampaignSpec::fast(12345);
    spec.n_modules = 12;
    spec.n_cycles = 2;
    let run = |name: &str, workers: usize| {
        let out = root.join(name);
        run_campaign(
            &spec,
            &out,
            &RunOptions {
                workers,
                keep_traces: false,
            },
        )
        .unwrap();
        std::fs::read(out.join(RESULTS_FILE)).unwrap()
    };
    let a = run("det1", 1);
    let b = run("det4", 4);
    let c = run("det1b", 1);
    Outcome {
        pass: a == b && a == c,
        detail: format!(
            "12 modules x 2 cycles, workers 1 / 4 / 1: {} bytes, identical = {}",
            a.len(),
            a == b && a == c
        ),
    }
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let t = Instant::now();
    let v = f();
    (v, t.elapsed().as_secs_f64())
}

fn main() {
    let root = tempfile::tempdir().unwrap();
    let mut results = Vec::new();
    let mut record = |n: usize, title: &str, secs: f64, o: Outcome| {
        report(n, title, secs, &o);
        results.push((n, o.pass));
    };

    let (o, secs) = timed(|| symmetry());
    record(2, "symmetry null", secs, o);
    let (o, secs) = timed(|| ols_oracle());
    record(3, "OLS oracle equivalence", secs, o);
    let (o, secs) = timed(|| conservation());
    record(9, "conservation suite", secs, o);
    let (o, secs) = timed(|| determinism(root.path()));
    record(10, "determinism", secs, o);
    let (o, secs) = timed(|| arrangement());
    record(7, "arrangement direction", secs, o);

    // full fast sweep
    let (fast, sweep_secs) = timed(|| {
        run_campaign(
            &CampaignSpec::fast(1),
            &root.path().join("fast"),
            &RunOptions::default(),
        )
        .unwrap()
    });

    // five 100-module, 20-cycle campaigns
    let seeds = [1u64, 2, 3, 4, 5];
    let (campaigns, campaign_secs) = timed(|| {
        seeds
            .iter()
            .map(|&s| {
                let mut spec = CampaignSpec::fast(s);
                spec.n_modules = 100;
                spec.n_cycles = 20;
                run_campaign(
                    &spec,
                    &root.path().join(format!("seed{s}")),
                    &RunOptions::default(),
                )
                .unwrap()
            })
            .collect::<Vec<ResultsTable>>()
    });

    let opts = StepwiseOptions::default();
    let mut all = Vec::new();
    let mut sigma_i = Vec::new();
    let mut dq = Vec::new();
    for (seed, table) in seeds.iter().zip(&campaigns) {
        let tbl = table.to_table();
        for resp in [
            "sigma_i",
            "sigma_t",
            "dtmax",
            "dq",
            "de",
            "elost",
            "sigma_rsei",
        ] {
            for ext in [false, true] {
                let a = analyze_response(&tbl, resp, ext, "dominance", &opts).unwrap();
                if resp == "sigma_i" && !ext {
                    sigma_i.push((*seed, a.clone()));
                }
                if resp == "dq" && ext {
                    dq.push((*seed, a.clone()));
                }
                all.push(a);
            }
        }
    }

    let mut tables: Vec<&ResultsTable> = vec![&fast];
    tables.extend(campaigns.iter());
    record(1, "Kirchhoff exactness", sweep_secs, kirchhoff(&tables));
    let (o, secs) = timed(|| dominance(&all));
    record(4, "dominance identity", secs, o);
    record(
        5,
        "short-term ranking (sigma_I)",
        campaign_secs,
        short_term(&sigma_i),
    );
    record(6, "capacity-mean effect (dq)", 0.0, capacity_mean(&dq));
    record(
        8,
        "aging monotonicity and ordering",
        0.0,
        aging(&campaigns.iter().collect::<Vec<_>>()),
    );

    results.sort();
    let failed: Vec<String> = results
        .iter()
        .filter(|r| !r.1)
        .map(|r| r.0.to_string())
        .collect();
    println!(
        "acceptance: {}/{} criteria pass{}",
        results.len() - failed.len(),
        results.len(),
        if failed.is_empty() {
            String::new()
        } else {
            format!("; failing: {}", failed.join(", "))
        }
    );
    if !failed.is_empty() && std::env::var("PARAPACK_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
