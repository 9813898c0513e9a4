//! The ten primary acceptance criteria. Run with
//! `cargo test -p isaacs-lab --test acceptance -- --nocapture` to see one
//! PASS/FAIL line per criterion.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use isaacs_lab::dynamics::Stencil;
use isaacs_lab::dynkin::{brute_force_game_value, dynkin_value, Player};
use isaacs_lab::hamiltonian::{eval_h_minus, eval_h_plus, isaacs_gap, HamiltonianQuery};
use isaacs_lab::model::{builtin_models, risk_sensitive, risk_sensitive_1d, RiskSensitiveParams};
use isaacs_lab::pde::{cfl_grid, transform_cfl_grid};
use isaacs_lab::rbsde::{comparison_test, ChainGenerator, ModelGenerator};
use isaacs_lab::transforms::{transform_data, ApproximationChain, CutoffGenerator, Direction};
use isaacs_lab::{
    build_markov_chain, solve_double_obstacle, solve_penalized, solve_rbsde_chain, verify_exponential_identity,
    BarrierData, ControlPolicy, Exact, Field, GameModel, MarkovChain, Model, Side, SpaceTimeGrid, StoppingRule,
};
use isaacs_lab_cli::{run, run_with_threads, sandwich_violation, ExperimentConfig, Method, RunManifest};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

fn criterion(number: usize, name: &str, body: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(body))
        .unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Outcome::new(false, format!("panicked: {msg}"))
        });
    println!(
        "criterion {number:>2} {}: {name}: {} [{:.1}s]",
        if outcome.pass { "PASS" } else { "FAIL" },
        outcome.detail,
        start.elapsed().as_secs_f64()
    );
    outcome.pass
}

fn builtins() -> Vec<Model> {
    let reg = builtin_models::<f64>();
    reg.names().map(|n| reg.get(n).unwrap().clone()).collect()
}

fn clipping_model() -> Model {
    GameModel::builder("clipping")
        .domain_1d(-1.0, 1.0)
        .drift_1d(|_, _, _, _| 0.0)
        .diffusion_1d(|_, _, _, _| 0.0)
        .generator_1d(|_, _, _, _, _, _| 1.0)
        .terminal_1d(|_| 0.0)
        .obstacles_1d(|_, _| -1.0, |_, _| 0.5)
        .build()
        .unwrap()
}

fn check(name: &str, m: &RunManifest) -> f64 {
    m.checks
        .iter()
        .find(|c| c.name == name)
        .unwrap_or_else(|| panic!("check {name} missing"))
        .value
}

fn sandwich_and_terminal() -> Outcome {
    let mut worst = 0f64;
    let mut solves = 0;
    for model in builtins() {
        for nx in [50, 100] {
            let grid = cfl_grid(&model, nx).unwrap();
            let data = BarrierData::from_model(&model, &grid);
            for side in [Side::Lower, Side::Upper] {
                let f = solve_double_obstacle(&model, &grid, side).unwrap();
                worst = worst.max(sandwich_violation(&grid, &f.values, &data.lower, &data.upper, &data.terminal));
                let chain = build_markov_chain(&model, &grid).unwrap();
                let y = solve_rbsde_chain(&chain, &f.saddle_policy(), &ModelGenerator(&model), &data).unwrap();
                worst = worst.max(sandwich_violation(&grid, &y.y, &data.lower, &data.upper, &data.terminal));
                solves += 2;
            }
        }
    }
    Outcome::new(worst == 0.0, format!("max violation {worst:e} over {solves} solves"))
}

fn heat_kernel() -> Outcome {
    let reg = builtin_models::<f64>();
    let model = reg.get("heat_no_control").unwrap();
    let exact = (-0.5f64).exp();
    let domain_ok = model.domain[0] == (-2.0 * std::f64::consts::PI, 2.0 * std::f64::consts::PI);
    let error = |nx: usize| {
        let grid = cfl_grid(model, nx).unwrap();
        let f = solve_double_obstacle(model, &grid, Side::Lower).unwrap();
        (f.value(0, grid.nearest_node(0.0)) - exact).abs()
    };
    let (e100, e200) = (error(100), error(200));
    let ratio = e200 / e100;
    Outcome::new(
        domain_ok && e200 <= 2e-2 && ratio <= 0.75,
        format!("|u - e^-1/2| = {e200:.3e} at nx=200, refinement ratio {ratio:.3}"),
    )
}

fn hamiltonian_order() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let models = builtins();
    let mut order_violations = 0;
    let mut separable_gap = 0f64;
    let mut nonseparable_gap = 0f64;
    for k in 0..10_000 {
        let m = &models[k % models.len()];
        let (lo, hi) = m.domain[0];
        let x = [rng.random_range(lo..hi)];
        let q = [rng.random_range(-3.0..3.0)];
        let hess = [rng.random_range(-3.0..3.0)];
        let back = [q[0] + rng.random_range(-0.5..0.5)];
        let fwd = [q[0] + rng.random_range(-0.5..0.5)];
        let t = rng.random_range(0.0..m.horizon);
        let u = rng.random_range(-1.0..1.0);
        let central = HamiltonianQuery::new(t, &x, u, &q, &hess);
        let upwind = central.with_upwind(&back, &fwd);
        for query in [&central, &upwind] {
            if eval_h_minus(m, query).value > eval_h_plus(m, query).value {
                order_violations += 1;
            }
        }
        match m.name.as_str() {
            "separable_isaacs" => separable_gap = separable_gap.max(isaacs_gap(m, &central)),
            "nonseparable" => nonseparable_gap = nonseparable_gap.max(isaacs_gap(m, &central)),
            _ => {}
        }
    }
    Outcome::new(
        order_violations == 0 && separable_gap == 0.0 && nonseparable_gap > 0.0,
        format!(
            "{order_violations} order violations in 20000 evaluations; separable gap {separable_gap:e}, nonseparable max gap {nonseparable_gap:.3e}"
        ),
    )
}

fn cross_method() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut config = ExperimentConfig::new("risk_sensitive_1d", Method::Crosscheck);
    config.grid.nx = 100;
    config.n_paths = 100_000;
    let m = run(&config, dir.path()).unwrap();
    let names = ["pde_vs_pde-transform", "pde_vs_rbsde-chain", "pde-transform_vs_rbsde-chain", "dynkin_vs_pde"];
    let gaps: Vec<f64> = names.iter().map(|n| check(n, &m)).collect();
    let worst = gaps.iter().copied().fold(0f64, f64::max);
    Outcome::new(
        worst <= 5e-2,
        format!(
            "gaps pde/transform {:.2e}, pde/chain {:.2e}, transform/chain {:.2e}, dynkin/pde {:.2e}",
            gaps[0], gaps[1], gaps[2], gaps[3]
        ),
    )
}

fn exponential_identity() -> Outcome {
    let flat: Model = risk_sensitive(RiskSensitiveParams::constant("flat", 0.0, 0.7, -4.3, 5.7));
    let drift: Model = risk_sensitive(RiskSensitiveParams::constant("running", 0.3, 0.0, -5.0, 5.0));
    let game: Model = risk_sensitive_1d();
    let mut details = Vec::new();
    let mut pass = true;
    for (name, model, binding) in [("constant payout", &flat, false), ("constant reward", &drift, false), ("binding stops", &game, true)] {
        let grid = cfl_grid(model, 100).unwrap();
        let chain = build_markov_chain(model, &grid).unwrap();
        let policy = if binding {
            solve_double_obstacle(model, &grid, Side::Lower).unwrap().saddle_policy()
        } else {
            ControlPolicy::Constant(0)
        };
        let (max_rule, min_rule) = if binding {
            (
                StoppingRule::from_region(grid, Player::Max, |_, x| x < -1.0),
                StoppingRule::from_region(grid, Player::Min, |_, x| x > 0.5),
            )
        } else {
            (StoppingRule::never(grid, Player::Max), StoppingRule::never(grid, Player::Min))
        };
        let r = verify_exponential_identity(model, &policy, &max_rule, &min_rule, &chain, 100_000, 5).unwrap();
        pass &= r.pass;
        details.push(format!("{name}: gap {:.2e} / tol {:.2e}", r.gap.abs(), r.tolerance));
    }
    Outcome::new(pass, details.join("; "))
}

fn comparison() -> Outcome {
    let model: Model = risk_sensitive_1d();
    let grid = cfl_grid(&model, 100).unwrap();
    let chain = build_markov_chain(&model, &grid).unwrap();
    let policy = solve_double_obstacle(&model, &grid, Side::Lower).unwrap().saddle_policy();
    let data = BarrierData::from_model(&model, &grid);
    let m = &model;
    let f = move |t: f64, x: f64, y: f64, z: f64, pair: usize| ModelGenerator(m).eval(t, x, y, z, pair);
    let zero = |_: f64, _: f64, _: f64, _: f64, _: usize| 0.0;
    let one = |_: f64, _: f64, _: f64, _: f64, _: usize| 1.0;
    let shifted = move |t, x, y, z, p| f(t, x, y, z, p) + 0.1;
    let abs_z = move |t, x, y, z: f64, p| f(t, x, y, z, p) + 0.05 * z.abs();
    let damped = move |t, x, y: f64, z, p| f(t, x, y, z, p) - 0.1 * (1.0 + y * y);
    let reports = [
        ("0 <= 1", comparison_test(&chain, &policy, &zero, &one, &data, 1.0)),
        ("F = F", comparison_test(&chain, &policy, &f, &f, &data, 1.0)),
        ("phi <= phi + 0.1", comparison_test(&chain, &policy, &f, &shifted, &data, 1.0)),
        ("F <= F + |z|/20", comparison_test(&chain, &policy, &f, &abs_z, &data, 1.0)),
        ("F - (1+y^2)/10 <= F", comparison_test(&chain, &policy, &damped, &f, &data, 1.0)),
    ];
    let mut worst = 0f64;
    let mut details = Vec::new();
    for (name, r) in reports {
        let r = r.unwrap();
        worst = worst.max(r.max_violation);
        details.push(format!("{name}: {:.1e}", r.max_violation));
    }
    Outcome::new(worst <= 1e-8, format!("max (Y - Y')+ per pair: {}", details.join(", ")))
}

fn approximation_chain() -> Outcome {
    let model: Model = risk_sensitive_1d();
    let grid = transform_cfl_grid(&model, 100).unwrap();
    let tm = transform_data(&model, &grid);
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut pointwise = 0f64;
    for (direction, sign) in [(Direction::Upper, 1.0), (Direction::Lower, -1.0)] {
        let source = CutoffGenerator::from_transformed(&tm, &grid).unwrap();
        let (y_lo, y_hi) = source.y_band;
        let chain = ApproximationChain::build(source, 13, direction, 0).unwrap();
        let members: Vec<_> = (1..=13).map(|p| chain.generator(p)).collect();
        for _ in 0..1000 {
            let (t, x, z) = (rng.random_range(0.0..1.0), rng.random_range(-14.0..14.0), rng.random_range(-14.0..14.0));
            let y = rng.random_range(y_lo..y_hi);
            let (a, b) = tm.model.pair_controls(rng.random_range(0..tm.model.control_pairs()));
            for w in members.windows(2) {
                pointwise = pointwise.max(sign * (w[1].eval(t, x, y, z, a, b) - w[0].eval(t, x, y, z, a, b)));
            }
        }
    }
    let dir = tempfile::tempdir().unwrap();
    let mut config = ExperimentConfig::new("risk_sensitive_1d", Method::ApproxChain);
    config.p_max = 13;
    let m = run(&config, dir.path()).unwrap();
    let (up_mono, up_step) = (check("upper.monotone", &m), check("upper.last_step", &m));
    let (lo_mono, lo_step) = (check("lower.monotone", &m), check("lower.last_step", &m));
    let order = check("lower_below_upper", &m);
    Outcome::new(
        pointwise <= 1e-12 && up_mono <= 1e-12 && lo_mono <= 1e-12 && up_step <= 1e-3 && lo_step <= 1e-3 && order <= 1e-12,
        format!(
            "sampled order violation {pointwise:.1e}; Y^p order {up_mono:.1e}/{lo_mono:.1e}; step at p=12 {up_step:.2e}/{lo_step:.2e}"
        ),
    )
}

fn random_dynkin_instance(rng: &mut ChaCha8Rng) -> (MarkovChain<Exact>, Vec<Exact>, BarrierData<Exact>) {
    let nt = rng.random_range(1..=3);
    let nx = 6;
    let q = |k: i64, d: i64| Exact::ratio(k, d);
    let grid = SpaceTimeGrid::new(q(0, 1), q(6, 1), nx, nt, q(1, 1)).unwrap();
    let nodes = grid.nodes();
    let cells = nt * nodes;
    let stencils: Vec<Stencil<Exact>> = (0..cells)
        .map(|_| {
            let down = rng.random_range(0..=8);
            let up = rng.random_range(0..=8 - down);
            Stencil {
                down: q(down, 8),
                stay: q(8 - down - up, 8),
                up: q(up, 8),
            }
        })
        .collect();
    let chain = MarkovChain::from_stencils(grid, 1, stencils, vec![q(0, 1); cells], vec![q(0, 1); cells]).unwrap();
    let all = grid.levels() * nodes;
    let lower: Vec<Exact> = (0..all).map(|_| q(rng.random_range(-6..=0), 4)).collect();
    let upper: Vec<Exact> = lower.iter().map(|&l| l + q(rng.random_range(1..=6), 4)).collect();
    let last = nt * nodes;
    let terminal = (0..nodes)
        .map(|j| {
            let (l, u) = (lower[last + j], upper[last + j]);
            let steps = ((u - l) * q(4, 1)).to_integer() as i64;
            l + q(rng.random_range(0..=steps), 4)
        })
        .collect();
    let running = (0..all).map(|_| q(rng.random_range(-4..=4), 4)).collect();
    (chain, running, BarrierData { terminal, lower, upper })
}

fn dynkin_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut agree = 0;
    let mut saddles = 0;
    let mut binding = 0;
    for _ in 0..20 {
        let (chain, running, data) = random_dynkin_instance(&mut rng);
        let policy = ControlPolicy::Constant(0);
        let v = dynkin_value(&chain, &policy, &running, &data).unwrap();
        let c = brute_force_game_value(&chain, &policy, &running, &data, 3).unwrap();
        agree += usize::from(c.infsup == v.value(0, 3));
        saddles += usize::from(c.infsup == c.supinf);
        binding += usize::from(v.max_rule.early_stops() + v.min_rule.early_stops() > 0);
    }
    Outcome::new(
        agree == 20 && saddles == 20,
        format!("{agree}/20 exact matches, {saddles}/20 saddles, {binding} instances with binding stops"),
    )
}

fn skorokhod() -> Outcome {
    let mut projection = 0f64;
    let mut models = builtins();
    models.push(clipping_model());
    for model in &models {
        let grid = match cfl_grid(model, 100) {
            Ok(g) => g,
            Err(_) => SpaceTimeGrid::for_model(model, 4, 1000).unwrap(),
        };
        let chain = build_markov_chain(model, &grid).unwrap();
        let policy = solve_double_obstacle(model, &grid, Side::Lower).unwrap().saddle_policy();
        let data = BarrierData::from_model(model, &grid);
        let sol = solve_rbsde_chain(&chain, &policy, &ModelGenerator(model), &data).unwrap();
        projection = projection.max(sol.skorokhod_residuals().max());
    }
    let mut penalized = 0f64;
    for model in [clipping_model(), risk_sensitive_1d()] {
        let base = cfl_grid(&model, 100).unwrap_or_else(|_| SpaceTimeGrid::for_model(&model, 4, 1000).unwrap());
        let grid = base.with_nt(base.nt.max(1000));
        let chain = build_markov_chain(&model, &grid).unwrap();
        let data = BarrierData::from_model(&model, &grid);
        let pen = solve_penalized(&chain, &ControlPolicy::Constant(0), &ModelGenerator(&model), &data, 1000.0).unwrap();
        penalized = penalized.max(pen.skorokhod_residuals().max());
    }
    Outcome::new(
        projection <= 1e-12 && penalized <= 1e-2,
        format!("projection {projection:.1e}, penalized (lambda = 1000) {penalized:.2e}"),
    )
}

fn csv_files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect()
}

fn determinism() -> Outcome {
    let mut config = ExperimentConfig::new("risk_sensitive_1d", Method::Crosscheck);
    config.seed = 7;
    config.n_paths = 20_000;
    let mut outputs = Vec::new();
    for threads in [1, 8, 1, 8] {
        let dir = tempfile::tempdir().unwrap();
        run_with_threads(&config, dir.path(), threads).unwrap();
        outputs.push(csv_files(dir.path()));
    }
    let identical = outputs.windows(2).all(|w| w[0] == w[1]);
    Outcome::new(
        identical && !outputs[0].is_empty(),
        format!("{} CSV files compared across 4 runs (threads 1, 8, 1, 8)", outputs[0].len()),
    )
}

#[test]
fn primary_criteria() {
    let results = [
        criterion(1, "obstacle sandwich and terminal condition", sandwich_and_terminal),
        criterion(2, "heat kernel oracle", heat_kernel),
        criterion(3, "lower/upper Hamiltonian order and Isaacs gap", hamiltonian_order),
        criterion(4, "cross-method agreement", cross_method),
        criterion(5, "exponential identity", exponential_identity),
        criterion(6, "comparison principle", comparison),
        criterion(7, "monotone approximation chain", approximation_chain),
        criterion(8, "Dynkin oracle equivalence", dynkin_oracle),
        criterion(9, "Skorokhod residuals", skorokhod),
        criterion(10, "determinism", determinism),
    ];
    let failed: Vec<usize> = results
        .iter()
        .enumerate()
        .filter(|(_, &ok)| !ok)
        .map(|(i, _)| i + 1)
        .collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
