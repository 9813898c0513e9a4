use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::ControlPolicy;
use crate::error::SolverError;
use crate::model::GameModel;
use crate::scalar::{fmt17, Real};

/// Euler–Maruyama sample paths.
#[derive(Debug, Clone)]
pub struct PathEnsemble<S> {
    pub times: Vec<S>,
    pub state_dim: usize,
    pub n_paths: usize,
    pub seed: u64,
    /// `n_paths × (nt+1) × n`, path-major.
    states: Vec<S>,
    /// `n_paths × nt` control pairs applied on each step.
    pairs: Vec<usize>,
    alphas: Vec<S>,
    betas: Vec<S>,
}

impl<S: Real> PathEnsemble<S> {
    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn state(&self, path: usize, step: usize) -> &[S] {
        let n = self.state_dim;
        let at = (path * self.times.len() + step) * n;
        &self.states[at..at + n]
    }

    pub fn terminal_state(&self, path: usize) -> &[S] {
        self.state(path, self.steps())
    }

    /// Pair index applied on `[t_step, t_{step+1})`.
    pub fn pair(&self, path: usize, step: usize) -> usize {
        self.pairs[path * self.steps() + step]
    }

    /// Writes `path,step,t,x,alpha,beta`; multidimensional states get one
    /// `x_k` column per coordinate. The last step has no applied control and
    /// repeats the previous one.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        let n = self.state_dim;
        if n == 1 {
            writeln!(out, "path,step,t,x,alpha,beta")?;
        } else {
            let xs: Vec<String> = (0..n).map(|k| format!("x_{k}")).collect();
            writeln!(out, "path,step,t,{},alpha,beta", xs.join(","))?;
        }
        let steps = self.steps();
        for p in 0..self.n_paths {
            for s in 0..=steps {
                let c = p * steps + s.min(steps - 1);
                let x: Vec<String> = self.state(p, s).iter().map(|&v| fmt17(v)).collect();
                writeln!(
                    out,
                    "{p},{s},{},{},{},{}",
                    fmt17(self.times[s]),
                    x.join(","),
                    fmt17(self.alphas[c]),
                    fmt17(self.betas[c])
                )?;
            }
        }
        Ok(())
    }
}

struct SinglePath<S> {
    states: Vec<S>,
    pairs: Vec<usize>,
}

/// Simulates `n_paths` Euler–Maruyama paths from `(t0, x0)` to the horizon.
///
/// Path `i` draws its Gaussian increments from the ChaCha8 stream `i` of
/// `seed`, so the ensemble does not depend on how paths are scheduled.
pub fn simulate_paths<S: Real>(
    model: &GameModel<S>,
    t0: S,
    x0: &[S],
    policy: &ControlPolicy<S>,
    nt: usize,
    n_paths: usize,
    seed: u64,
) -> Result<PathEnsemble<S>, SolverError> {
    if nt == 0 || n_paths == 0 {
        return Err(SolverError::InvalidInput("nt and n_paths must be positive".into()));
    }
    if x0.len() != model.state_dim {
        return Err(SolverError::InvalidInput(format!(
            "start state has {} coordinates, model has {}",
            x0.len(),
            model.state_dim
        )));
    }
    if !(t0 < model.horizon) {
        return Err(SolverError::InvalidInput(format!("start time {t0} is not before the horizon")));
    }
    let span = model.horizon - t0;
    let times: Vec<S> = (0..=nt)
        .map(|k| t0 + span * S::from_count(k) / S::from_count(nt))
        .collect();
    let dt = span / S::from_count(nt);
    let sqrt_dt = dt.sqrt();

    let results: Vec<Result<SinglePath<S>, SolverError>> = (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(p as u64);
            simulate_one(model, &times, x0, policy, dt, sqrt_dt, &mut rng, p)
        })
        .collect();

    let mut states = Vec::with_capacity(n_paths * (nt + 1) * x0.len());
    let mut pairs = Vec::with_capacity(n_paths * nt);
    for r in results {
        let path = r?;
        states.extend(path.states);
        pairs.extend(path.pairs);
    }
    let (alphas, betas) = pairs.iter().map(|&p| model.pair_controls(p)).unzip();
    Ok(PathEnsemble {
        times,
        state_dim: model.state_dim,
        n_paths,
        seed,
        states,
        pairs,
        alphas,
        betas,
    })
}

#[allow(clippy::too_many_arguments)]
fn simulate_one<S: Real>(
    model: &GameModel<S>,
    times: &[S],
    x0: &[S],
    policy: &ControlPolicy<S>,
    dt: S,
    sqrt_dt: S,
    rng: &mut ChaCha8Rng,
    path: usize,
) -> Result<SinglePath<S>, SolverError> {
    let n = model.state_dim;
    let d = model.noise_dim;
    let nt = times.len() - 1;
    let mut states = Vec::with_capacity((nt + 1) * n);
    let mut pairs = Vec::with_capacity(nt);
    states.extend_from_slice(x0);
    let mut x = x0.to_vec();
    let mut b = vec![S::zero(); n];
    let mut sigma = vec![S::zero(); n * d];
    let mut dw = vec![S::zero(); d];
    for step in 0..nt {
        let t = times[step];
        let pair = policy.pair(t, &x);
        let (alpha, beta) = model.pair_controls(pair);
        model.drift(t, &x, alpha, beta, &mut b);
        model.diffusion(t, &x, alpha, beta, &mut sigma);
        for w in dw.iter_mut() {
            let g: f64 = rng.sample(StandardNormal);
            *w = S::lit(g) * sqrt_dt;
        }
        for i in 0..n {
            let mut noise = S::zero();
            for k in 0..d {
                noise = noise + sigma[i * d + k] * dw[k];
            }
            x[i] = x[i] + b[i] * dt + noise;
            if !x[i].is_finite() {
                return Err(SolverError::NonFiniteState {
                    path,
                    step: step + 1,
                });
            }
        }
        states.extend_from_slice(&x);
        pairs.push(pair);
    }
    Ok(SinglePath { states, pairs })
}

/// Empirical `E[sup_s |X_s|^p] / (1 + |x₀|^p)` for `p ∈ {2, 4}`.
///
/// # Panics
///
/// If `p` is not 2 or 4.
pub fn estimate_moment_bound<S: Real>(ensemble: &PathEnsemble<S>, p: u32) -> S {
    assert!(p == 2 || p == 4, "moment order must be 2 or 4, got {p}");
    let norm_p = |x: &[S]| {
        let sq = x.iter().fold(S::zero(), |acc, &v| acc + v * v);
        sq.powi(p as i32 / 2)
    };
    let mut total = S::zero();
    for path in 0..ensemble.n_paths {
        let mut sup = S::zero();
        for step in 0..=ensemble.steps() {
            sup = sup.larger(norm_p(ensemble.state(path, step)));
        }
        total = total + sup;
    }
    let mean = total / S::from_count(ensemble.n_paths);
    mean / (S::one() + norm_p(ensemble.state(0, 0)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model_1d(
        drift: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        sigma: f64,
    ) -> GameModel<f64> {
        GameModel::builder("sde")
            .domain_1d(-20.0, 20.0)
            .drift_1d(move |t, x, _, _| drift(t, x))
            .diffusion_1d(move |_, _, _, _| sigma)
            .terminal_1d(|_| 0.0)
            .obstacles_1d(|_, _| -1.0, |_, _| 1.0)
            .build()
            .unwrap()
    }

    #[test]
    fn deterministic_drift_is_exact() {
        let m = model_1d(|_, _| 1.0, 0.0);
        let e = simulate_paths(&m, 0.0, &[0.0], &ControlPolicy::Constant(0), 64, 5, 1).unwrap();
        for p in 0..5 {
            assert_eq!(e.terminal_state(p)[0], 1.0);
            assert_eq!(e.state(p, 0)[0], 0.0);
        }
        assert_eq!(*e.times.last().unwrap(), 1.0);
    }

    #[test]
    fn driftless_mean_near_zero() {
        let m = model_1d(|_, _| 0.0, 1.0);
        let n = 4000;
        let e = simulate_paths(&m, 0.0, &[0.0], &ControlPolicy::Constant(0), 20, n, 7).unwrap();
        let mean: f64 = (0..n).map(|p| e.terminal_state(p)[0]).sum::<f64>() / n as f64;
        assert!(mean.abs() <= 3.0 / (n as f64).sqrt(), "mean {mean}");
    }

    #[test]
    fn linear_decay_matches_exponential() {
        let m = model_1d(|_, x| -x, 0.0);
        let e = simulate_paths(&m, 0.0, &[1.0], &ControlPolicy::Constant(0), 1000, 1, 0).unwrap();
        let oracle = (-1.0f64).exp();
        assert!((e.terminal_state(0)[0] - oracle).abs() < 2e-3);
    }

    #[test]
    fn ensemble_independent_of_thread_count() {
        let m = model_1d(|_, x| -0.5 * x, 0.8);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| {
                    simulate_paths(&m, 0.0, &[0.3], &ControlPolicy::Constant(0), 50, 64, 11).unwrap()
                })
        };
        let (a, b) = (run(1), run(4));
        let mut ca = Vec::new();
        let mut cb = Vec::new();
        a.write_csv(&mut ca).unwrap();
        b.write_csv(&mut cb).unwrap();
        assert_eq!(ca, cb);
    }

    #[test]
    fn moment_bound_examples() {
        let still = model_1d(|_, _| 0.0, 0.0);
        let e = simulate_paths(&still, 0.0, &[2.0], &ControlPolicy::Constant(0), 4, 3, 0).unwrap();
        assert_eq!(estimate_moment_bound(&e, 2), 4.0 / 5.0);

        let bm = model_1d(|_, _| 0.0, 1.0);
        let e = simulate_paths(&bm, 0.0, &[0.0], &ControlPolicy::Constant(0), 200, 4000, 3).unwrap();
        let c2 = estimate_moment_bound(&e, 2);
        assert!((1.0..=4.0).contains(&c2), "c2 = {c2}");

        let ratios: Vec<f64> = [0.0, 1.0, 10.0]
            .iter()
            .map(|&x0| {
                let e = simulate_paths(&bm, 0.0, &[x0], &ControlPolicy::Constant(0), 100, 2000, 5)
                    .unwrap();
                estimate_moment_bound(&e, 2)
            })
            .collect();
        let (lo, hi) = ratios
            .iter()
            .fold((f64::MAX, 0.0f64), |(l, h), &r| (l.min(r), h.max(r)));
        assert!(hi / lo <= 5.0, "{ratios:?}");
    }

    #[test]
    fn csv_header_and_rows() {
        let m = model_1d(|_, _| 1.0, 0.0);
        let e = simulate_paths(&m, 0.0, &[0.0], &ControlPolicy::Constant(0), 2, 1, 0).unwrap();
        let mut buf = Vec::new();
        e.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "path,step,t,x,alpha,beta");
        assert_eq!(lines.len(), 4);
        assert!(lines[3].starts_with("0,2,1.0000000000000000e0,1.0000000000000000e0"));
    }
}
