"""Dataset generators and estimation studies.

Generators simulate the benchmark systems (logistic map, pendulum,
second-order linear system, bilinear polynomial system) and record the
exact noise realization and true state trajectory in the dataset
metadata, so later analyses can recover true initial conditions.
Studies wrap the solver into multi-start, Monte Carlo, grid-scan and
timing drivers, all reproducible from (config, seed).
"""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, asdict

import numpy as np

from .dataset import Dataset
from .models import (LogisticMap, Pendulum, farina_polynomial, linear_arx,
                     linear_oe_2nd, lower_to_state_space)
from .objective import (EstimationProblem, MsaPem, MultipleShooting,
                        ShootingPlan, SingleShooting, as_nlp, cost_sequential)
from .solver import SolverOptions, solve

PENDULUM_TRUE = (9.8 / 0.3, 2.0)


def study_options(**overrides) -> SolverOptions:
    """Solver settings shared by the estimation studies.

    A smaller initial radius explores intricate landscapes carefully, and
    a penalty floor near the multiplier scale keeps the merit function
    from drowning the tiny costs of near-interpolating residual problems.
    """
    base = dict(delta0=0.1, max_iter=1000, mu0=1e-3, penalty_margin=1e-4)
    base.update(overrides)
    return SolverOptions(**base)

LINEAR2ND_SETTINGS = {
    "a": (0.5, -0.2, 2.0),
    "b": (1.5, -0.7, 0.5),
    "c": (1.8, -0.95, 0.1),
}
FARINA_TRUE = (0.6, -0.5)


def held_gaussian(rng, n: int, std: float, hold: int) -> np.ndarray:
    """Zero-mean Gaussian sequence where each draw is held ``hold`` samples."""
    draws = rng.normal(0.0, std, size=-(-n // hold))
    return np.repeat(draws, hold)[:n]


# ---------------------------------------------------------------------------
# Generators
# ---------------------------------------------------------------------------

def gen_logistic(theta: float = 3.78, x0: float = 0.5, n: int = 200,
                 seed: int = 0, noise_std: float = 0.0) -> Dataset:
    """Logistic-map record y[k] = theta*y[k-1]*(1 - y[k-1]), noiseless by default."""
    rng = np.random.default_rng(seed)
    states = np.zeros(n)
    x = float(x0)
    for k in range(n):
        x = theta * x * (1.0 - x)
        states[k] = x
    noise = rng.normal(0.0, noise_std, size=n) if noise_std else np.zeros(n)
    meta = {"generator": "logistic", "seed": seed, "theta": theta, "x0": x0,
            "noise_std": noise_std, "true_states": states.tolist(),
            "noise": noise.tolist()}
    return Dataset(np.zeros(n), states + noise, meta)


def _pendulum_control(e1, e2, e3, u1, u2, delta):
    # Gains carry a 1/delta factor: with delta-scaled gains the linearized
    # loop around the upright position has spectral radius 1.054 and the
    # pendulum falls over; with 1/delta it is 0.998 and regulation holds.
    return ((40.0 * e1 - 78.8 * e2 + 38.808 * e3) / delta
            + 1.02 * u1 - 0.02 * u2)


def gen_pendulum(scenario: str = "a", seed: int = 0, n: int = 1024,
                 noise_std: float | None = None) -> Dataset:
    """Pendulum record under one of three excitation scenarios.

    (a) open loop, held Gaussian input of standard deviation 10, output
    noise 0.03; (b) closed loop around a randomly stepped reference near
    the upright position, noiseless; (c) as (a) with input deviation 50,
    which drives full rotations.
    """
    if scenario not in ("a", "b", "c"):
        raise ValueError("scenario must be one of 'a', 'b', 'c'")
    rng = np.random.default_rng(seed)
    a_true, ka = PENDULUM_TRUE
    mass, delta = 3.0, 0.01
    if noise_std is None:
        noise_std = 0.0 if scenario == "b" else 0.03

    u = np.zeros(n)
    ybar = np.zeros(n)
    states = np.zeros((n, 2))
    if scenario == "b":
        ref = np.pi + held_gaussian(rng, n, 0.2, 20)
        x1, x2 = np.pi, 0.0
        e_hist = [0.0, 0.0, 0.0]      # e[k-1], e[k-2], e[k-3]
        u1 = u2 = 0.0
        for k in range(n):
            uk = _pendulum_control(e_hist[0], e_hist[1], e_hist[2], u1, u2, delta)
            u[k] = uk
            # the state update reads the previous input sample
            u_prev = u[k - 1] if k else 0.0
            x1, x2 = (x1 + delta * x2,
                      -delta * a_true * np.sin(x1) + (1 - delta * ka / mass) * x2
                      + (delta / mass) * u_prev)
            states[k] = (x1, x2)
            ybar[k] = x1
            e_hist = [ref[k] - x1, e_hist[0], e_hist[1]]
            u2, u1 = u1, uk
    else:
        std_u = 10.0 if scenario == "a" else 50.0
        u[:] = held_gaussian(rng, n, std_u, 20)
        x1 = x2 = 0.0
        for k in range(n):
            u_prev = u[k - 1] if k else 0.0
            x1, x2 = (x1 + delta * x2,
                      -delta * a_true * np.sin(x1) + (1 - delta * ka / mass) * x2
                      + (delta / mass) * u_prev)
            states[k] = (x1, x2)
            ybar[k] = x1
    noise = rng.normal(0.0, noise_std, size=n) if noise_std else np.zeros(n)
    meta = {"generator": "pendulum", "scenario": scenario, "seed": seed,
            "noise_std": noise_std, "theta": list(PENDULUM_TRUE),
            "true_states": states.tolist(), "noise": noise.tolist()}
    return Dataset(u, ybar + noise, meta)


def gen_linear2nd(setting: str = "a", seed: int = 0, n: int = 300,
                  noise_std: float = 0.05, input_std: float = 1.0,
                  input_hold: int = 5) -> Dataset:
    """Second-order linear output-error record y[k] = ybar[k] + v[k]."""
    if setting not in LINEAR2ND_SETTINGS:
        raise ValueError("setting must be one of 'a', 'b', 'c'")
    th1, th2, th3 = LINEAR2ND_SETTINGS[setting]
    rng = np.random.default_rng(seed)
    u = held_gaussian(rng, n, input_std, input_hold)
    ybar = np.zeros(n)
    y1 = y2 = 0.0
    for k in range(n):
        u_prev = u[k - 1] if k else 0.0
        yk = th1 * y1 + th2 * y2 + th3 * u_prev
        ybar[k] = yk
        y2, y1 = y1, yk
    noise = rng.normal(0.0, noise_std, size=n) if noise_std else np.zeros(n)
    meta = {"generator": "linear2nd", "setting": setting, "seed": seed,
            "noise_std": noise_std, "theta": [th1, th2, th3],
            "input_std": input_std, "input_hold": input_hold,
            "true_output": ybar.tolist(), "noise": noise.tolist()}
    return Dataset(u, ybar + noise, meta)


def gen_farina(seed: int = 0, n: int = 500, noise_std: float = 0.5 * 0.18) -> Dataset:
    """Bilinear polynomial record driven by a slow first-order AR input."""
    rng = np.random.default_rng(seed)
    u = np.zeros(n)
    uk = 0.0
    for k in range(n):
        uk = 0.99 * uk + 0.1 * rng.normal()
        u[k] = uk
    th1, th2 = FARINA_TRUE
    ybar = np.zeros(n)
    y1 = 0.0
    for k in range(n):
        u1 = u[k - 1] if k else 0.0
        u2 = u[k - 2] if k >= 2 else 0.0
        yk = th1 * u1 * u2 + th2 * u1 * y1
        ybar[k] = yk
        y1 = yk
    noise = rng.normal(0.0, noise_std, size=n) if noise_std else np.zeros(n)
    meta = {"generator": "farina", "seed": seed, "noise_std": noise_std,
            "theta": list(FARINA_TRUE), "true_output": ybar.tolist(),
            "noise": noise.tolist()}
    return Dataset(u, ybar + noise, meta)


GENERATORS = {
    "logistic": gen_logistic,
    "pendulum": gen_pendulum,
    "linear2nd": gen_linear2nd,
    "farina": gen_farina,
}


# ---------------------------------------------------------------------------
# Results
# ---------------------------------------------------------------------------

@dataclass
class ExperimentResult:
    config: dict
    records: list = field(default_factory=list)
    summaries: dict = field(default_factory=dict)

    def to_json(self, path=None) -> str:
        text = json.dumps(asdict(self), indent=2, default=_jsonify)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_json(cls, text: str) -> "ExperimentResult":
        raw = json.loads(text)
        return cls(raw["config"], raw["records"], raw["summaries"])


def _jsonify(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    raise TypeError(f"not JSON-serializable: {type(obj)}")


def audited_median(values) -> float:
    """Median via partial selection; cross-checked against a sort oracle
    in the test suite so summary statistics cannot silently drift."""
    arr = np.asarray(values, dtype=float).ravel()
    if arr.size == 0:
        raise ValueError("median of empty sequence")
    lo = (arr.size - 1) // 2
    hi = arr.size // 2
    part = np.partition(arr, (lo, hi))
    return float(0.5 * (part[lo] + part[hi]))


def linear_fit_r2(x, y):
    """Least-squares line through (x, y); returns (slope, intercept, r2)."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    design = np.stack([x, np.ones_like(x)], axis=1)
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    pred = design @ coef
    ss_res = float(np.sum((y - pred) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0 else 1.0 - ss_res / ss_tot
    return float(coef[0]), float(coef[1]), r2


# ---------------------------------------------------------------------------
# Estimation helpers
# ---------------------------------------------------------------------------

def arx_fit(dataset: Dataset, n_a: int, n_b: int) -> np.ndarray:
    """Closed-form least-squares ARX estimate (a_1..a_na, b_1..b_nb).

    The first max(n_a, n_b) samples are excluded from the regression.
    """
    y, u = dataset.y, dataset.u
    n = dataset.n
    start = max(n_a, n_b)
    rows = np.arange(start, n)
    cols = [y[rows - i] for i in range(1, n_a + 1)]
    cols += [u[rows - j] for j in range(1, n_b + 1)]
    design = np.stack(cols, axis=1)
    theta, *_ = np.linalg.lstsq(design, y[rows], rcond=None)
    return theta


def _build_formulation(method: str, n: int):
    """Parse a method tag into (label, formulation or None for ARX)."""
    if method == "arx":
        return None
    if method == "oe-ss":
        return SingleShooting(optimize_x0=True)
    if method.startswith("oe-ms:"):
        return MultipleShooting(ShootingPlan.from_max_len(n, int(method.split(":")[1])))
    if method.startswith("msa:"):
        return MsaPem(int(method.split(":")[1]))
    raise ValueError(f"unknown estimation method {method!r}")


def estimate(model_family, dataset: Dataset, method: str, theta_init=None,
             solver_options: SolverOptions | None = None):
    """Run one estimation method on one dataset; returns (theta, info)."""
    if method == "arx":
        t0 = time.perf_counter()
        theta = arx_fit(dataset, 2, 1)
        return theta, {"status": "closed-form", "n_eval": 1,
                       "wall_time": time.perf_counter() - t0}
    model = lower_to_state_space(model_family)
    form = _build_formulation(method, dataset.n)
    problem = EstimationProblem(model, dataset, form)
    phi0 = problem.default_point(theta_init)
    res = solve(as_nlp(problem), phi0, solver_options or SolverOptions())
    theta = res.point[: model.theta_dim]
    return theta, {"status": res.status, "n_eval": res.n_eval,
                   "wall_time": res.wall_time, "cost": res.cost,
                   "kkt_residual": res.kkt_residual}


# ---------------------------------------------------------------------------
# Studies
# ---------------------------------------------------------------------------

def multi_start_study(problem: EstimationProblem, guesses,
                      solver_options: SolverOptions | None = None,
                      target=None, tol: float = 1e-3) -> ExperimentResult:
    """Solve the same problem from many initial parameter guesses."""
    opts = solver_options or SolverOptions()
    result = ExperimentResult(config={
        "study": "multi-start", "model": problem.model.name,
        "formulation": type(problem.formulation).__name__,
        "n_guesses": len(guesses),
        "target": None if target is None else np.asarray(target, float).tolist(),
        "tol": tol})
    successes = 0
    for guess in guesses:
        guess = np.atleast_1d(np.asarray(guess, float))
        phi0 = problem.default_point(guess)
        res = solve(as_nlp(problem), phi0, opts)
        theta = res.point[: problem.model.theta_dim]
        rec = {"guess": guess.tolist(), "theta": theta.tolist(),
               "cost": res.cost, "status": res.status,
               "n_eval": res.n_eval, "wall_time": res.wall_time}
        if target is not None:
            tgt = np.asarray(target, float)
            rec["success"] = bool(np.all(np.abs(theta - tgt)
                                         <= tol * np.maximum(1.0, np.abs(tgt))))
            successes += rec["success"]
        result.records.append(rec)
    result.summaries = {"median_evals": audited_median([r["n_eval"] for r in result.records])}
    if target is not None:
        result.summaries["successes"] = successes
    return result


@dataclass
class MonteCarloConfig:
    generator: str = "linear2nd"
    setting: str = "c"
    n_realizations: int = 20
    methods: tuple = ("arx", "oe-ss")
    seed: int = 0
    noise_std: float | None = None
    solver: SolverOptions | None = None


def monte_carlo_study(config: MonteCarloConfig) -> ExperimentResult:
    """Repeated data regeneration and estimation for each method.

    Iterative methods start from the ARX estimate of the same
    realization.  Per-realization seeds are spawned deterministically
    from the study seed.
    """
    if config.generator == "linear2nd":
        theta_true = np.asarray(LINEAR2ND_SETTINGS[config.setting])
        family = linear_oe_2nd(tuple(theta_true))

        def gen(seed):
            kw = {} if config.noise_std is None else {"noise_std": config.noise_std}
            return gen_linear2nd(config.setting, seed=seed, **kw)
    elif config.generator == "farina":
        theta_true = np.asarray(FARINA_TRUE)
        family = farina_polynomial()

        def gen(seed):
            kw = {} if config.noise_std is None else {"noise_std": config.noise_std}
            return gen_farina(seed=seed, **kw)
    else:
        raise ValueError(f"unsupported Monte Carlo generator {config.generator!r}")

    opts = config.solver or SolverOptions()
    seeds = np.random.SeedSequence(config.seed).spawn(config.n_realizations)
    result = ExperimentResult(config={
        "study": "monte-carlo", "generator": config.generator,
        "setting": config.setting, "n_realizations": config.n_realizations,
        "methods": list(config.methods), "seed": config.seed,
        "theta_true": theta_true.tolist()})
    for i, ss in enumerate(seeds):
        run_seed = int(ss.generate_state(1)[0]) % (2 ** 32)
        dataset = gen(run_seed)
        theta_arx = arx_fit(dataset, 2, 1)
        init = theta_arx[: len(theta_true)] if config.generator == "linear2nd" \
            else theta_true * 0.0
        for method in config.methods:
            if method == "arx":
                theta, info = theta_arx, {"status": "closed-form", "n_eval": 1,
                                          "wall_time": 0.0}
            else:
                theta, info = estimate(family, dataset, method,
                                       theta_init=init, solver_options=opts)
            err = np.asarray(theta[: len(theta_true)]) - theta_true
            result.records.append({
                "realization": i, "seed": run_seed, "method": method,
                "theta": np.asarray(theta).tolist(), "error": err.tolist(),
                **info})
    by_method = {}
    for method in config.methods:
        errs = np.array([r["error"] for r in result.records if r["method"] == method])
        by_method[method] = {
            "median_error": [audited_median(errs[:, j]) for j in range(errs.shape[1])],
            "median_abs_error": [audited_median(np.abs(errs[:, j]))
                                 for j in range(errs.shape[1])]}
    result.summaries = {"by_method": by_method}
    return result


def _grid_costs_batched(problem: EstimationProblem, thetas: np.ndarray,
                        fixed_seeds: np.ndarray) -> np.ndarray:
    """All grid cells rolled forward in lockstep (one batch row per cell).

    Exploits the fixed seeds: every cell resets to the same state at the
    same boundaries, so a single pass over time covers the whole grid.
    Model callables receive theta as a (theta_dim, G) array.
    """
    from .models import RegressorWindow

    model = problem.model
    form = problem.formulation
    if isinstance(form, MultipleShooting):
        starts = form.plan.starts
    elif isinstance(form, SingleShooting) and form.optimize_x0:
        starts = np.array([0])
    else:
        raise NotImplementedError("batched grid needs shooting seeds")
    seeds = np.asarray(fixed_seeds, float).reshape(len(starts), model.state_dim)
    reset = {int(s): seeds[i] for i, s in enumerate(starts)}
    zy, zu, y = problem._zy, problem._zu, problem.dataset.y
    n = problem.dataset.n
    g = thetas.shape[0]
    th_t = np.ascontiguousarray(thetas.T)
    acc = np.zeros(g)
    x = np.zeros((g, model.state_dim))
    with np.errstate(invalid="ignore", over="ignore"):
        for k in range(n):
            if k in reset:
                x = np.repeat(reset[k][None, :], g, axis=0)
            z = RegressorWindow(zy[k: k + 1], zu[k: k + 1])
            x = model.transition(x, z, th_t)
            acc += (y[k] - model.output(x, z, th_t)[:, 0]) ** 2
    costs = acc / n
    costs[~np.isfinite(costs)] = np.inf
    return costs


def grid_scan(problem: EstimationProblem, theta_grid, fixed_seeds=None) -> np.ndarray:
    """Cost surface over a Cartesian parameter grid with seeds held fixed.

    ``theta_grid`` is one 1-D axis per parameter; returns the cost array
    with one axis per parameter (a 1x..x1 grid yields a single cell).
    Uses the lockstep batched evaluation when it agrees with the scalar
    cost on spot-checked cells, otherwise cell-by-cell evaluation.
    """
    axes = [np.atleast_1d(np.asarray(a, float)) for a in theta_grid]
    if len(axes) != problem.model.theta_dim:
        raise ValueError("need one grid axis per model parameter")
    if fixed_seeds is None:
        fixed_seeds = problem.default_point()[problem.model.theta_dim:]
    fixed_seeds = np.asarray(fixed_seeds, float)
    shape = tuple(len(a) for a in axes)
    mesh = np.meshgrid(*axes, indexing="ij")
    thetas = np.stack([m.ravel() for m in mesh], axis=1)

    def scalar_cost(theta):
        return problem.cost(np.concatenate([theta, fixed_seeds]))

    try:
        costs = _grid_costs_batched(problem, thetas, fixed_seeds)
        check = np.linspace(0, thetas.shape[0] - 1, min(5, thetas.shape[0])).astype(int)
        for i in check:
            ref = scalar_cost(thetas[i])
            agree = (costs[i] == ref) or (
                np.isfinite(ref) and abs(costs[i] - ref) <= 1e-9 * (1 + abs(ref)))
            if not agree:
                raise NotImplementedError("batched grid disagrees with scalar cost")
    except NotImplementedError:
        costs = np.array([scalar_cost(t) for t in thetas])
    return costs.reshape(shape)


def total_variation(grid: np.ndarray) -> float:
    """Mean absolute difference between adjacent cells of log(1 + V).

    A scalar intricacy proxy for cost-surface plots; rough surfaces score
    higher.  Non-finite cells are ignored.
    """
    g = np.log1p(np.asarray(grid, float))
    diffs = []
    for axis in range(g.ndim):
        d = np.abs(np.diff(g, axis=axis)).ravel()
        diffs.append(d[np.isfinite(d)])
    alld = np.concatenate(diffs) if diffs else np.zeros(0)
    return float(alld.mean()) if alld.size else 0.0


def timing_study(model_family, dataset: Dataset, k_list=(), dm_list=(),
                 reps: int = 5, theta=None) -> ExperimentResult:
    """Wall time per cost evaluation versus the horizon K and versus the
    interval cap of multiple shooting.

    Multiple-shooting timing uses the single-pass evaluation, whose work
    is proportional to the record length alone.
    """
    model = lower_to_state_space(model_family)
    if theta is None:
        theta = model.default_theta
    theta = np.asarray(theta, float)
    result = ExperimentResult(config={
        "study": "timing", "model": model.name, "n": dataset.n,
        "k_list": list(k_list), "dm_list": list(dm_list), "reps": reps})
    for k in k_list:
        problem = EstimationProblem(model, dataset, MsaPem(int(k)))
        phi = problem.default_point(theta)
        problem.cost(phi)                       # warm-up
        times = []
        for r in range(reps):
            problem._cache.clear()
            t0 = time.perf_counter()
            problem.cost(phi)
            times.append(time.perf_counter() - t0)
        result.records.append({"kind": "msa", "K": int(k),
                               "time_per_eval": audited_median(times)})
    for dm in dm_list:
        plan = ShootingPlan.from_max_len(dataset.n, int(dm))
        problem = EstimationProblem(model, dataset, MultipleShooting(plan))
        phi = problem.default_point(theta)
        cost_sequential(problem, phi)           # warm-up
        times = []
        for r in range(reps):
            t0 = time.perf_counter()
            cost_sequential(problem, phi)
            times.append(time.perf_counter() - t0)
        result.records.append({"kind": "multiple-shooting", "max_len": int(dm),
                               "time_per_eval": audited_median(times)})
    msa = [(r["K"], r["time_per_eval"]) for r in result.records if r["kind"] == "msa"]
    if len(msa) >= 3:
        slope, _, r2 = linear_fit_r2([k for k, _ in msa], [t for _, t in msa])
        result.summaries["msa_slope"] = slope
        result.summaries["msa_r2"] = r2
    ms = [r["time_per_eval"] for r in result.records
          if r["kind"] == "multiple-shooting"]
    if ms:
        result.summaries["ms_spread"] = (max(ms) - min(ms)) / max(min(ms), 1e-12)
    return result
