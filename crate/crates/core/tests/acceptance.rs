//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.
//! Run with `cargo test --test acceptance` (add `--release` for speed).

mod common;

use std::time::Instant;

use common::*;
use rand::Rng;
use splitkit::cli::{compare_link, LINK_TOL};
use splitkit::diagnostics::{
    bregman_bounds, dual_value_rate, gap_series, pi_difference, primal_value_rate,
    rate_certificate, GapBoxes, RateCertificate,
};
use splitkit::linops::{BlockName, StackedPoint};
use splitkit::ppa::inclusion_residual_with;
use splitkit::problems::{
    factory_rng, linear_kkt_oracle, make_bounded_domain, make_compact, make_lasso, make_mix,
    make_mix_l1, make_quadratic_saddle, suggest_metrics, SaddleCertificate,
};
use splitkit::proxlib::{moreau_extended_residual, ExtReal, ProxFunction};
use splitkit::schemes::{
    build_ppa, check_conditions, run, Family, Metrics, RecordFlags, SchemeId, SchemeSpec,
    SplitProblem,
};

type Outcome = (bool, String);

struct Instance {
    name: &'static str,
    problem: SplitProblem,
    cert: SaddleCertificate,
}

fn two_function_problems() -> Vec<Instance> {
    let (q, qc) = make_quadratic_saddle(8, 5, 11).unwrap();
    let (l, lc) = make_lasso(8, 5, 0.5, 12).unwrap();
    vec![
        Instance {
            name: "quadratic",
            problem: q,
            cert: qc,
        },
        Instance {
            name: "lasso",
            problem: l,
            cert: lc,
        },
    ]
}

// three-function analogues of the quadratic saddle and the LASSO problem
fn three_function_problems() -> Vec<Instance> {
    let (q, qc) = make_mix(8, 5, 3, 13).unwrap();
    let (l, lc) = make_mix_l1(8, 5, 3, 14).unwrap();
    vec![
        Instance {
            name: "mix-quadratic",
            problem: q,
            cert: qc,
        },
        Instance {
            name: "mix-l1",
            problem: l,
            cert: lc,
        },
    ]
}

fn problems_for(family: Family) -> Vec<Instance> {
    match family {
        Family::Mix => three_function_problems(),
        _ => two_function_problems(),
    }
}

fn random_start(problem: &SplitProblem, family: Family, seed: u64) -> StackedPoint {
    let layout = problem.layout(family).unwrap();
    let mut r = rng(seed);
    let v = gaussian_vec(&mut r, layout.total());
    StackedPoint::new(layout, v).unwrap()
}

fn criterion_1() -> Outcome {
    let mut r = rng(101);
    let mut worst: f64 = 0.0;
    let mut worst_at = String::new();
    let mut draws = 0;
    for id in SchemeId::ALL {
        for d in 0..10u64 {
            let problem = match id.family() {
                Family::Mix => make_mix(6, 4, 3, 1000 + d).unwrap().0,
                _ => make_quadratic_saddle(6, 4, 1000 + d).unwrap().0,
            };
            let spec = valid_metrics(&mut r, &problem, id);
            let ppa = build_ppa(&problem, &spec).unwrap();
            let (s, g) = table_s_g(id, &MetricParts::of(&problem, &spec));
            let e = rel_err(ppa.s.dense(), &s).max(rel_err(ppa.g.dense(), &g));
            if !(e <= worst) {
                worst = e;
                worst_at = format!("{id} draw {d}");
            }
            draws += 1;
        }
    }
    (
        worst <= 1e-10,
        format!("{draws} draws, worst relative error {worst:.2e} ({worst_at})"),
    )
}

fn criterion_2() -> Outcome {
    let k = 500;
    let mut worst: f64 = 0.0;
    let mut worst_at = String::new();
    let mut pairs = 0usize;
    let mut r = rng(202);
    for id in SchemeId::ALL {
        for inst in problems_for(id.family()) {
            for spec in [
                suggest_metrics(&inst.problem, id).unwrap(),
                valid_metrics(&mut r, &inst.problem, id),
            ] {
                let ppa = build_ppa(&inst.problem, &spec).unwrap();
                let c0 = random_start(&inst.problem, id.family(), 7);
                let trace = run(&inst.problem, &spec, &c0, k, RecordFlags::default()).unwrap();
                for (c, t) in trace.states.iter().zip(&trace.tildes) {
                    let res = inclusion_residual_with(&inst.problem, &ppa, c, t)
                        .unwrap()
                        .total;
                    pairs += 1;
                    if !(res <= worst) {
                        worst = res;
                        worst_at = format!("{id} on {}", inst.name);
                    }
                }
            }
        }
    }
    (
        worst <= 1e-8,
        format!("{pairs} iterate pairs, worst residual {worst:.2e} ({worst_at})"),
    )
}

fn count_below(margins: &[f64], tol: f64) -> usize {
    margins.iter().filter(|m| !(**m >= -tol)).count()
}

fn certificate(
    inst: &Instance,
    spec: &SchemeSpec,
    k: usize,
    seed: u64,
) -> (RateCertificate, StackedPoint, splitkit::schemes::Trace) {
    let fam = spec.id.family();
    let c_star = inst.cert.point_for(&inst.problem, fam).unwrap();
    let c0 = random_start(&inst.problem, fam, seed);
    let trace = run(&inst.problem, spec, &c0, k, RecordFlags::default()).unwrap();
    let ppa = build_ppa(&inst.problem, spec).unwrap();
    let cert = rate_certificate(&inst.problem, &trace, &ppa, Some(&c_star)).unwrap();
    (cert, c_star, trace)
}

fn criterion_3() -> Outcome {
    let k = 2000;
    let mut fejer = 0;
    let mut mono = 0;
    let mut runs = 0;
    let mut r = rng(303);
    for id in SchemeId::ALL {
        for inst in problems_for(id.family()) {
            for spec in [
                suggest_metrics(&inst.problem, id).unwrap(),
                valid_metrics(&mut r, &inst.problem, id),
            ] {
                let (cert, _, _) = certificate(&inst, &spec, k, 21);
                fejer += count_below(&cert.check("fejer").unwrap().margins, 1e-10);
                mono += count_below(&cert.check("step_nonincrease").unwrap().margins, 1e-10);
                runs += 1;
            }
        }
    }
    // negative control: PDS-I with M well below the coupling AᵀΓ⁻¹A on a bilinear saddle,
    // where no strong convexity rescues the iteration
    let mut r = rng(23);
    let a = gaussian_mat(&mut r, 5, 8);
    let problem = SplitProblem::new(
        ProxFunction::zero(8),
        ProxFunction::l2_squared(5, 1.0).unwrap(),
        a,
    )
    .unwrap();
    let inst = &Instance {
        name: "bilinear",
        cert: linear_kkt_oracle(&problem).unwrap(),
        problem,
    };
    let alpha = jacobi_max(&(inst.problem.a.transpose() * &inst.problem.a));
    let metrics =
        Metrics::scalar(&inst.problem, SchemeId::Pds1, 0.05 * alpha, 0.0, 1.0, 0.0).unwrap();
    let bad = SchemeSpec::new(SchemeId::Pds1, metrics);
    let verdict = check_conditions(&inst.problem, &bad)
        .unwrap()
        .verdict
        .exit_code();
    let (cert, _, _) = certificate(inst, &bad, 100, 22);
    let control = count_below(&cert.check("fejer").unwrap().margins, 1e-10)
        + count_below(&cert.check("step_nonincrease").unwrap().margins, 1e-10);
    (
        fejer == 0 && mono == 0 && control > 0 && verdict == 1,
        format!(
            "{runs} runs of {k} steps: Fejér violations {fejer}, nonincrease violations {mono}; negative control verdict {verdict}, violations {control}"
        ),
    )
}

fn criterion_4() -> Outcome {
    let k = 10_000;
    let mut pointwise = 0;
    let mut ergodic = 0;
    let mut gap = 0;
    let mut inexact = 0;
    let mut runs = 0;
    for id in SchemeId::ALL {
        for inst in problems_for(id.family()) {
            let spec = suggest_metrics(&inst.problem, id).unwrap();
            let (cert, c_star, trace) = certificate(&inst, &spec, k, 31);
            let pw = cert.check("pointwise_rate").unwrap();
            if pw.skipped.is_some() {
                return (
                    false,
                    format!("pointwise bound unavailable for {id} on {}", inst.name),
                );
            }
            pointwise += count_below(&pw.margins, 1e-10);
            ergodic += count_below(&cert.check("ergodic_rate").unwrap().margins, 1e-8);
            let ppa = build_ppa(&inst.problem, &spec).unwrap();
            let boxes = GapBoxes::around(&c_star, 2.0).unwrap();
            let series = gap_series(&inst.problem, &trace, &ppa, &boxes).unwrap();
            if !series.sup.exact {
                inexact += 1;
            }
            gap += count_below(&series.slack(), 1e-8);
            runs += 1;
        }
    }
    (
        pointwise == 0 && ergodic == 0 && gap == 0,
        format!(
            "{runs} runs of {k} steps: pointwise violations {pointwise}, ergodic violations {ergodic}, box-gap violations {gap} ({inexact} runs with a relaxed corner bound)"
        ),
    )
}

fn criterion_5() -> Outcome {
    let mut violations = 0;
    let mut evaluated = 0;
    let mut skipped = 0;
    for fam in [Family::Lag, Family::Pds, Family::Mix] {
        for (pi_idx, inst) in problems_for(fam).into_iter().enumerate() {
            let c_star = inst.cert.point_for(&inst.problem, fam).unwrap();
            let layout = c_star.layout().clone();
            let mut r = rng(500 + 10 * fam as u64 + pi_idx as u64);
            for _ in 0..1000 {
                let scale = [0.1, 1.0, 3.0][r.gen_range(0..3)];
                let v = c_star.values() + gaussian_vec(&mut r, layout.total()) * scale;
                let mut c = StackedPoint::new(layout.clone(), v).unwrap();
                // keep dual blocks inside the conjugate domains half the time
                if r.gen_bool(0.5) {
                    clamp_dual(&inst.problem, fam, &mut c);
                }
                let (flat, sharp) = bregman_bounds(&inst.problem, fam, &c, &c_star).unwrap();
                let pi = pi_difference(&inst.problem, fam, &c, &c_star).unwrap();
                if sharp == ExtReal::PosInf {
                    skipped += 1;
                    continue;
                }
                evaluated += 1;
                let tol = 1e-10 * (1.0 + pi.to_f64_lossy().abs());
                if !flat.le(pi.add_f(tol)) || !pi.le(sharp.add_f(tol)) {
                    violations += 1;
                }
            }
        }
    }
    (
        violations == 0 && evaluated > 0,
        format!("{evaluated} points checked, {skipped} skipped with infinite upper bound, {violations} violations"),
    )
}

fn clamp_dual(problem: &SplitProblem, fam: Family, c: &mut StackedPoint) {
    let mut clamp = |name: BlockName, f: &ProxFunction| {
        let (lo, hi) = f.conj_domain_bounds();
        let v = c.block(name).unwrap();
        let w = v.zip_zip_map(&lo, &hi, |x, l, h| x.clamp(l, h));
        c.set_block(name, &w).unwrap();
    };
    match fam {
        Family::Pds => clamp(BlockName::P, &problem.g),
        Family::Mix => clamp(BlockName::B, problem.h.as_ref().unwrap()),
        Family::Lag => {}
    }
}

fn criterion_6() -> Outcome {
    let k = 1000;
    let start = |n: usize, stream: u64| -> Vector {
        let mut r = factory_rng(77, stream);
        gaussian_vec(&mut r, n)
    };
    let (quad, _) = make_quadratic_saddle(8, 5, 41).unwrap();
    let (lasso, _) = make_lasso(8, 5, 0.5, 42).unwrap();
    let n = lasso.n();
    let m1 = lasso.m1();
    let scalar = |p: &SplitProblem, id, mu, om, ga| {
        SchemeSpec::new(id, Metrics::scalar(p, id, mu, om, ga, 0.0).unwrap())
    };

    let at_a = lasso.a.transpose() * &lasso.a;
    let tau = 0.5 / jacobi_max(&at_a);
    let pdhg = SchemeSpec::new(
        SchemeId::Lag6,
        Metrics {
            m: eye(n) / tau - &at_a,
            omega: Some(zeros(m1, m1)),
            gamma: eye(m1),
            theta: None,
        },
    );
    let unit = {
        let mut r = factory_rng(43, 0);
        let p = Mat::from_diagonal(&Vector::from_fn(5, |_, _| r.gen_range(1.0..3.0)));
        let f = ProxFunction::quadratic(p, gaussian_vec(&mut r, 5)).unwrap();
        let g = ProxFunction::l1(5, 0.5).unwrap();
        SplitProblem::new(f, g, eye(5)).unwrap()
    };
    let cases: Vec<(&str, SplitProblem, SchemeSpec)> = vec![
        (
            "prop1",
            quad.clone(),
            suggest_metrics(&quad, SchemeId::Lag1).unwrap(),
        ),
        (
            "prop2",
            lasso.clone(),
            scalar(&lasso, SchemeId::Lag6, 1.0, 0.0, 1.0),
        ),
        ("pdhg", lasso.clone(), pdhg),
        (
            "arrow-hurwicz",
            quad.clone(),
            suggest_metrics(&quad, SchemeId::Lag5).unwrap(),
        ),
        (
            "admm-drs",
            lasso.clone(),
            scalar(&lasso, SchemeId::Lag6, 0.0, 0.0, 1.5),
        ),
        (
            "admm-reduced",
            lasso.clone(),
            scalar(&lasso, SchemeId::Lag6, 0.0, 0.0, 1.5),
        ),
        (
            "lag2-reduced",
            lasso.clone(),
            scalar(&lasso, SchemeId::Lag2, 0.0, 1.0, 1.0),
        ),
        (
            "pds1-drs",
            unit.clone(),
            scalar(&unit, SchemeId::Pds1, 1.0, 0.0, 1.0),
        ),
    ];
    let mut ok = true;
    let mut parts = Vec::new();
    for (link, problem, spec) in &cases {
        match compare_link(problem, spec, link, k, &start) {
            Ok(rep) => {
                ok &= rep.deviation <= LINK_TOL;
                parts.push(format!("{link} {:.1e}", rep.deviation));
            }
            Err(e) => {
                ok = false;
                parts.push(format!("{link} error: {e}"));
            }
        }
    }
    (ok, format!("{k} steps; {}", parts.join(", ")))
}

fn criterion_7() -> Outcome {
    let mut r = rng(700);
    let mut worst: f64 = 0.0;
    let mut errors = 0;
    for i in 0..100 {
        let f = if i % 2 == 0 {
            let p = spd(&mut r, 3, 0.5, 3.0);
            ProxFunction::quadratic(p, gaussian_vec(&mut r, 3)).unwrap()
        } else {
            ProxFunction::l1(3, r.gen_range(0.2..2.0)).unwrap()
        };
        let a = gaussian_mat(&mut r, 5, 3);
        let u = gaussian_vec(&mut r, 5) * 2.0;
        match moreau_extended_residual(&f, &a, &u) {
            Ok(res) => {
                worst = if res.is_nan() {
                    f64::INFINITY
                } else {
                    worst.max(res)
                }
            }
            Err(_) => errors += 1,
        }
    }
    (
        worst <= 1e-8 && errors == 0,
        format!("100 instances (A 5×3), worst residual {worst:.2e}, solver errors {errors}"),
    )
}

fn criterion_8() -> Outcome {
    let k = 10_000;
    let mut ok = true;
    let mut parts = Vec::new();
    let lag = make_compact(6, 4, 81).unwrap();
    let pds = make_bounded_domain(6, 4, 82).unwrap();
    for id in SchemeId::ALL
        .into_iter()
        .filter(|id| id.family() != Family::Mix)
    {
        let (problem, cert) = if id.family() == Family::Lag {
            &lag
        } else {
            &pds
        };
        let spec = suggest_metrics(problem, id).unwrap();
        let fam = id.family();
        let c_star = cert.point_for(problem, fam).unwrap();
        let c0 = random_start(problem, fam, 83);
        let trace = run(problem, &spec, &c0, k, RecordFlags::default()).unwrap();
        let ppa = build_ppa(problem, &spec).unwrap();
        let rate = if fam == Family::Lag {
            dual_value_rate(problem, &trace, &ppa, &c_star)
        } else {
            primal_value_rate(problem, &trace, &ppa, &c_star)
        }
        .unwrap();
        let Some(constant) = rate.constant.filter(|_| rate.hypotheses_hold) else {
            ok = false;
            parts.push(format!("{id}: no finite constant"));
            continue;
        };
        let tol = 1e-8 * (1.0 + constant);
        let worst = rate
            .k_gap
            .iter()
            .map(|g| g.to_f64_lossy())
            .fold(f64::NEG_INFINITY, |a, b| {
                if b.is_nan() {
                    f64::INFINITY
                } else {
                    a.max(b)
                }
            });
        ok &= worst <= constant + tol;
        parts.push(format!("{id} max {worst:.3e} / {constant:.3e}"));
    }
    (ok, format!("k ≤ {k}; {}", parts.join(", ")))
}

/// Metrics whose binding condition sits at eigenvalue margin `delta`.
fn boundary_metrics(
    r: &mut rand_chacha::ChaCha20Rng,
    problem: &SplitProblem,
    id: SchemeId,
    delta: f64,
) -> SchemeSpec {
    let base = valid_metrics(r, problem, id);
    let mut mt = base.metrics.clone();
    let edge = |r: &mut rand_chacha::ChaCha20Rng, k: usize| -> Mat {
        let q = gaussian_mat(r, k, k).qr().q();
        let d = Vector::from_fn(k, |i, _| if i == 0 { delta } else { r.gen_range(0.5..1.5) });
        let m = &q * Mat::from_diagonal(&d) * q.transpose();
        (&m + m.transpose()) * 0.5
    };
    let inv = |m: &Mat| gj_inverse(m).unwrap();
    let a = &problem.a;
    let at = a.transpose();
    let n = problem.n();
    let m1 = problem.m1();
    use SchemeId::*;
    match id {
        Lag1 | Lag7 => {
            let om = mt.omega.clone().unwrap();
            let target = a * inv(&mt.m) * &at + inv(&om) + edge(r, m1);
            if let Some(g) = gj_inverse(&target) {
                mt.gamma = (&g + g.transpose()) * 0.5;
            }
        }
        Lag2 | Lag3 => mt.omega = Some(&mt.gamma + edge(r, m1)),
        Lag4 => mt.m = &at * &mt.gamma * a + edge(r, n),
        Lag5 => {
            let om = mt.omega.clone().unwrap();
            mt.m = &at * &mt.gamma * inv(&om) * &mt.gamma * a + edge(r, n);
        }
        Lag6 => mt.gamma = edge(r, m1),
        Pds6 => mt.gamma = a * inv(&mt.m) * &at + edge(r, m1),
        Pds1 | Pds2 | Pds3 | Pds4 | Pds5 | Pds7 => mt.m = &at * inv(&mt.gamma) * a + edge(r, n),
        Mix1 | Mix2 | Mix3 | Mix4 | Mix5 | Mix6 => {
            let b = problem.b.as_ref().unwrap();
            let th = mt.theta.clone().unwrap();
            if r.gen_bool(0.5) && id != Mix4 {
                mt.omega = Some(&th + edge(r, m1));
            } else {
                let base = match id {
                    Mix3 | Mix6 => b.transpose() * &mt.gamma * b,
                    _ => &at * &th * a + b.transpose() * &mt.gamma * b,
                };
                mt.m = base + edge(r, n);
            }
        }
    }
    let sym = |m: &Mat| (m + m.transpose()) * 0.5;
    mt.m = sym(&mt.m);
    mt.gamma = sym(&mt.gamma);
    mt.omega = mt.omega.as_ref().map(sym);
    SchemeSpec::new(id, mt)
}

fn criterion_9() -> Outcome {
    let mut disagreements = Vec::new();
    let mut tally = [0usize; 3];
    let mut total = 0;
    for id in SchemeId::ALL {
        let mut r = rng(900 + id as u64);
        let problem = match id.family() {
            Family::Mix => make_mix(5, 4, 3, 901).unwrap().0,
            _ => make_quadratic_saddle(5, 4, 902).unwrap().0,
        };
        for d in 0..1100 {
            let spec = match d {
                0..=499 => valid_metrics(&mut r, &problem, id),
                500..=999 => arbitrary_metrics(&mut r, &problem, id, -0.5, 3.0),
                1000..=1049 => boundary_metrics(&mut r, &problem, id, 1e-6),
                _ => boundary_metrics(&mut r, &problem, id, -1e-6),
            };
            let oracle = oracle_verdict(id, &MetricParts::of(&problem, &spec));
            let verdict = match check_conditions(&problem, &spec) {
                Ok(rep) => rep.verdict.exit_code(),
                // the checker refuses metrics it cannot invert; the oracle must call them failing
                Err(_) => 1,
            };
            tally[verdict as usize] += 1;
            total += 1;
            if verdict != oracle {
                disagreements.push(format!("{id} draw {d}: checker {verdict}, oracle {oracle}"));
            }
        }
    }
    let head = disagreements
        .iter()
        .take(3)
        .cloned()
        .collect::<Vec<_>>()
        .join("; ");
    (
        disagreements.is_empty(),
        format!(
            "{total} draws (strict {}, degenerate {}, fail {}), {} disagreements{}",
            tally[0],
            tally[2],
            tally[1],
            disagreements.len(),
            if head.is_empty() {
                String::new()
            } else {
                format!(": {head}")
            }
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("metric identities", criterion_1),
        ("inclusion consistency", criterion_2),
        ("Fejér monotonicity", criterion_3),
        ("rates", criterion_4),
        ("Bregman sandwich", criterion_5),
        ("equivalence links", criterion_6),
        ("extended Moreau identity", criterion_7),
        ("value-gap rates", criterion_8),
        ("condition checker", criterion_9),
    ];
    let only: Option<usize> = std::env::args().skip(1).find_map(|a| a.parse().ok());
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        if only.is_some_and(|o| o != i + 1) {
            continue;
        }
        let t = Instant::now();
        let (ok, detail) = match std::panic::catch_unwind(f) {
            Ok(out) => out,
            Err(_) => (false, "panicked".to_string()),
        };
        if !ok {
            failed += 1;
        }
        println!(
            "criterion {} ({name}): {} [{:.1}s] {detail}",
            i + 1,
            if ok { "PASS" } else { "FAIL" },
            t.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
