"""Discrete-time prediction models in a shared state-space form.

Every model is reduced to the pair of maps

    x[k]    = h(x[k-1], z[k]; theta)
    yhat[k] = g(x[k],   z[k]; theta)

where ``z[k]`` collects lagged measured outputs y[k-1..k-n_y] and inputs
u[k..k-n_u].  The internal recursion flows only through the state ``x``;
the autoregressive part of ``z`` always uses *measured* outputs, which is
what lets one form cover ARX (empty state), output-error (state = past
noiseless outputs) and ARMAX (state = past noise estimates).

All model callables are batched: ``x`` has shape (B, N_x), the regressor
fields have shape (B, n_y) and (B, n_u + 1), and Jacobians come back with
a leading batch axis.  ``theta`` is shared across the batch.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple, Union

import numpy as np


class ModelStructureError(ValueError):
    """Raised when a model family is configured with an invalid structure."""


class RegressorWindow(NamedTuple):
    """Lagged data entering the model at one step.

    ``past_outputs[:, j]`` holds y[k-1-j] and ``current_inputs[:, j]``
    holds u[k-j]; both padded hold-first near the start of the record.
    """

    past_outputs: np.ndarray
    current_inputs: np.ndarray


@dataclass(frozen=True)
class StateSpaceModel:
    """The (h, g) pair with lag orders and analytic Jacobian evaluators.

    ``transition_jacobians`` returns (A, B) = (dh/dx, dh/dtheta) at the
    *input* state; ``output_jacobians`` returns (C, F) = (dg/dx,
    dg/dtheta) at the state passed in.  The sensitivity recursion needs
    the h-Jacobians at x[k-1] and the g-Jacobians at x[k], hence the
    split.  ``init_state(y, u, m)`` builds a heuristic state at boundary
    time m from measured data (hold-first padded near the edges).
    """

    name: str
    state_dim: int
    theta_dim: int
    output_dim: int
    n_y: int
    n_u: int
    n_v: int
    transition: Callable
    output: Callable
    transition_jacobians: Callable
    output_jacobians: Callable
    init_state: Callable
    default_theta: np.ndarray

    def jacobians(self, x, z, theta):
        """All four Jacobians (A, B, C, F) evaluated at the same (x, z, theta)."""
        A, B = self.transition_jacobians(x, z, theta)
        C, F = self.output_jacobians(x, z, theta)
        return A, B, C, F

    @property
    def n_transient(self) -> int:
        return max(self.n_y, self.n_u)


# ---------------------------------------------------------------------------
# Model families
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LogisticMap:
    """Scalar quadratic map y[k] = theta * y[k-1] * (1 - y[k-1]), as an OE model."""

    theta: float = 3.78


@dataclass(frozen=True)
class Pendulum:
    """Euler-discretized pendulum with state (angle, angular velocity).

    Free parameters are (g_over_l, k_a); mass and the discretization step
    are held fixed.
    """

    g_over_l: float = 9.8 / 0.3
    k_a: float = 2.0
    mass: float = 3.0
    delta: float = 0.01


@dataclass(frozen=True)
class Polynomial:
    """Polynomial model; each term is a product of lagged factors.

    ``terms`` is a tuple of terms, each term a tuple of ('y', lag) /
    ('u', lag) factors; one coefficient per term.  ``noise='oe'`` makes
    the y-lags recurse through the noiseless internal output,
    ``noise='arx'`` reads them from measured data (empty state).
    """

    terms: tuple
    theta: tuple
    noise: str = "oe"


@dataclass(frozen=True)
class NeuralNetOE:
    """Output-error model with a one-hidden-layer tanh network.

    Weights are initialized N(0, fan_in**-0.5) per layer, biases zero.
    """

    n_y: int = 1
    n_u: int = 1
    hidden: int = 10
    seed: int = 0


@dataclass(frozen=True)
class LinearARMAX:
    """Linear ARMAX; the state carries the last n_c noise estimates."""

    n_a: int
    n_b: int
    n_c: int
    theta: tuple | None = None


ModelFamily = Union[LogisticMap, Pendulum, Polynomial, NeuralNetOE, LinearARMAX]


def linear_oe_2nd(theta=(0.5, -0.2, 2.0)) -> Polynomial:
    """y[k] = th1*y[k-1] + th2*y[k-2] + th3*u[k-1] as an output-error model."""
    return Polynomial(
        terms=((("y", 1),), (("y", 2),), (("u", 1),)),
        theta=tuple(theta),
        noise="oe",
    )


def linear_arx(n_a: int, n_b: int, theta=None) -> Polynomial:
    """Linear ARX with y-lags 1..n_a and u-lags 1..n_b."""
    terms = tuple((("y", i),) for i in range(1, n_a + 1))
    terms += tuple((("u", j),) for j in range(1, n_b + 1))
    if theta is None:
        theta = (0.0,) * len(terms)
    return Polynomial(terms=terms, theta=tuple(theta), noise="arx")


def farina_polynomial(theta=(0.6, -0.5)) -> Polynomial:
    """y[k] = th1*u[k-1]*u[k-2] + th2*u[k-1]*y[k-1], output-error form."""
    return Polynomial(
        terms=((("u", 1), ("u", 2)), (("u", 1), ("y", 1))),
        theta=tuple(theta),
        noise="oe",
    )


# ---------------------------------------------------------------------------
# Lowering
# ---------------------------------------------------------------------------

def lower_to_state_space(family: ModelFamily) -> StateSpaceModel:
    """Build the state-space form of a model family.

    Raises ModelStructureError for invalid lag orders or parameters.
    """
    if isinstance(family, LogisticMap):
        return _lower_logistic(family)
    if isinstance(family, Pendulum):
        return _lower_pendulum(family)
    if isinstance(family, Polynomial):
        return _lower_polynomial(family)
    if isinstance(family, NeuralNetOE):
        return _lower_neural_net(family)
    if isinstance(family, LinearARMAX):
        return _lower_armax(family)
    raise ModelStructureError(f"unknown model family {family!r}")


def _lower_logistic(fam: LogisticMap) -> StateSpaceModel:
    def transition(x, z, th):
        x1 = x[:, 0]
        return (th[0] * x1 * (1.0 - x1))[:, None]

    def output(x, z, th):
        return x.copy()

    def tjac(x, z, th):
        A = (th[0] * (1.0 - 2.0 * x))[:, :, None]
        B = (x * (1.0 - x))[:, :, None]
        return A, B

    def ojac(x, z, th):
        b = x.shape[0]
        return np.ones((b, 1, 1)), np.zeros((b, 1, 1))

    def init_state(y, u, m):
        return np.array([y[max(m - 1, 0)]])

    return StateSpaceModel(
        name="logistic",
        state_dim=1, theta_dim=1, output_dim=1,
        n_y=1, n_u=0, n_v=0,
        transition=transition, output=output,
        transition_jacobians=tjac, output_jacobians=ojac,
        init_state=init_state,
        default_theta=np.array([float(fam.theta)]),
    )


def _lower_pendulum(fam: Pendulum) -> StateSpaceModel:
    if fam.delta <= 0:
        raise ModelStructureError("pendulum discretization step must be positive")
    d = float(fam.delta)
    mm = float(fam.mass)

    def transition(x, z, th):
        a, ka = th[0], th[1]
        x1, x2 = x[:, 0], x[:, 1]
        u1 = z.current_inputs[:, 1]
        nx1 = x1 + d * x2
        nx2 = -d * a * np.sin(x1) + (1.0 - d * ka / mm) * x2 + (d / mm) * u1
        return np.stack([nx1, nx2], axis=1)

    def output(x, z, th):
        return x[:, :1].copy()

    def tjac(x, z, th):
        a, ka = th[0], th[1]
        b = x.shape[0]
        x1, x2 = x[:, 0], x[:, 1]
        A = np.empty((b, 2, 2))
        A[:, 0, 0] = 1.0
        A[:, 0, 1] = d
        A[:, 1, 0] = -d * a * np.cos(x1)
        A[:, 1, 1] = 1.0 - d * ka / mm
        B = np.zeros((b, 2, 2))
        B[:, 1, 0] = -d * np.sin(x1)
        B[:, 1, 1] = -d * x2 / mm
        return A, B

    def ojac(x, z, th):
        b = x.shape[0]
        C = np.zeros((b, 1, 2))
        C[:, 0, 0] = 1.0
        return C, np.zeros((b, 1, 2))

    def init_state(y, u, m):
        n = len(y)
        i = min(max(m - 1, 0), n - 1)
        ip, im = min(i + 1, n - 1), max(i - 1, 0)
        # angle from the measurement, velocity by central finite difference
        vel = (y[ip] - y[im]) / ((ip - im) * d) if ip > im else 0.0
        return np.array([y[i], vel])

    return StateSpaceModel(
        name="pendulum",
        state_dim=2, theta_dim=2, output_dim=1,
        n_y=0, n_u=1, n_v=0,
        transition=transition, output=output,
        transition_jacobians=tjac, output_jacobians=ojac,
        init_state=init_state,
        default_theta=np.array([fam.g_over_l, fam.k_a], dtype=float),
    )


def _apply_coeffs(vals, th):
    """Term values (B, T) times coefficients; th may carry one coefficient
    vector per batch row as a (T, B) array."""
    th = np.asarray(th)
    if th.ndim == 1:
        return vals @ th
    return np.einsum("bt,tb->b", vals, th)


def _check_terms(terms):
    if not terms:
        raise ModelStructureError("polynomial model needs at least one term")
    for t, term in enumerate(terms):
        for kind, lag in term:
            if kind not in ("y", "u"):
                raise ModelStructureError(f"term {t}: unknown factor kind {kind!r}")
            if kind == "y" and lag < 1:
                raise ModelStructureError(f"term {t}: y-lag must be >= 1, got {lag}")
            if kind == "u" and lag < 0:
                raise ModelStructureError(f"term {t}: u-lag must be >= 0, got {lag}")


def _poly_monomials(terms, yv, uv, want_dy):
    """Evaluate the monomials of a term list.

    yv[:, j] is the value of the y-factor at lag j+1, uv[:, j] the input
    at lag j.  Returns (vals (B, T), dy (B, T, p) or None), with dy the
    derivatives w.r.t. the y-lag values (product rule, handles repeats).
    """
    b = yv.shape[0] if yv.size else uv.shape[0]
    p = yv.shape[1]
    nt = len(terms)
    vals = np.ones((b, nt))
    dy = np.zeros((b, nt, p)) if want_dy else None
    for t, term in enumerate(terms):
        facs = [yv[:, lag - 1] if kind == "y" else uv[:, lag] for kind, lag in term]
        prod = np.ones(b)
        for f in facs:
            prod = prod * f
        vals[:, t] = prod
        if want_dy:
            for idx, (kind, lag) in enumerate(term):
                if kind != "y":
                    continue
                others = np.ones(b)
                for jdx, f in enumerate(facs):
                    if jdx != idx:
                        others = others * f
                dy[:, t, lag - 1] += others
    return vals, dy


def _lower_polynomial(fam: Polynomial) -> StateSpaceModel:
    _check_terms(fam.terms)
    if fam.noise not in ("oe", "arx"):
        raise ModelStructureError(f"unknown noise assumption {fam.noise!r}")
    terms = tuple(tuple(term) for term in fam.terms)
    nt = len(terms)
    if len(fam.theta) != nt:
        raise ModelStructureError("theta length must match the number of terms")
    ny = max([lag for term in terms for kind, lag in term if kind == "y"], default=0)
    nu = max([lag for term in terms for kind, lag in term if kind == "u"], default=0)
    default_theta = np.asarray(fam.theta, dtype=float)

    if fam.noise == "arx" or ny == 0:
        # empty state: the prediction depends on z[k] and theta only
        def transition(x, z, th):
            return x[:, :0]

        def output(x, z, th):
            vals, _ = _poly_monomials(terms, z.past_outputs[:, :ny], z.current_inputs, False)
            return _apply_coeffs(vals, th)[:, None]

        def tjac(x, z, th):
            b = x.shape[0]
            return np.zeros((b, 0, 0)), np.zeros((b, 0, nt))

        def ojac(x, z, th):
            vals, _ = _poly_monomials(terms, z.past_outputs[:, :ny], z.current_inputs, False)
            b = vals.shape[0]
            return np.zeros((b, 1, 0)), vals[:, None, :]

        def init_state(y, u, m):
            return np.zeros(0)

        name = "poly-arx"
        nx = 0
    else:
        p = ny

        def transition(x, z, th):
            vals, _ = _poly_monomials(terms, x, z.current_inputs, False)
            f = _apply_coeffs(vals, th)
            return np.concatenate([f[:, None], x[:, : p - 1]], axis=1)

        def output(x, z, th):
            return x[:, :1].copy()

        def tjac(x, z, th):
            vals, dy = _poly_monomials(terms, x, z.current_inputs, True)
            b = x.shape[0]
            A = np.zeros((b, p, p))
            A[:, 0, :] = np.einsum("btj,t->bj", dy, th)
            for i in range(1, p):
                A[:, i, i - 1] = 1.0
            B = np.zeros((b, p, nt))
            B[:, 0, :] = vals
            return A, B

        def ojac(x, z, th):
            b = x.shape[0]
            C = np.zeros((b, 1, p))
            C[:, 0, 0] = 1.0
            return C, np.zeros((b, 1, nt))

        def init_state(y, u, m):
            return np.array([y[max(m - 1 - j, 0)] for j in range(p)])

        name = "poly-oe"
        nx = p

    return StateSpaceModel(
        name=name,
        state_dim=nx, theta_dim=nt, output_dim=1,
        n_y=ny, n_u=nu, n_v=0,
        transition=transition, output=output,
        transition_jacobians=tjac, output_jacobians=ojac,
        init_state=init_state,
        default_theta=default_theta,
    )


def neural_net_theta_size(n_y: int, n_u: int, hidden: int) -> int:
    n_in = n_y + n_u + 1
    return hidden * n_in + hidden + hidden + 1


def _lower_neural_net(fam: NeuralNetOE) -> StateSpaceModel:
    if fam.n_y < 1 or fam.n_u < 0 or fam.hidden < 1:
        raise ModelStructureError("neural net needs n_y >= 1, n_u >= 0, hidden >= 1")
    p = fam.n_y
    h = fam.hidden
    n_in = p + fam.n_u + 1
    ntheta = neural_net_theta_size(fam.n_y, fam.n_u, fam.hidden)

    def unpack(th):
        w1 = th[: h * n_in].reshape(h, n_in)
        b1 = th[h * n_in : h * n_in + h]
        w2 = th[h * n_in + h : h * n_in + 2 * h]
        b2 = th[-1]
        return w1, b1, w2, b2

    def _forward(x, z, th):
        w1, b1, w2, b2 = unpack(th)
        r = np.concatenate([x, z.current_inputs], axis=1)
        t = np.tanh(r @ w1.T + b1)
        return r, t, t @ w2 + b2

    def transition(x, z, th):
        _, _, f = _forward(x, z, th)
        return np.concatenate([f[:, None], x[:, : p - 1]], axis=1)

    def output(x, z, th):
        return x[:, :1].copy()

    def tjac(x, z, th):
        w1, b1, w2, b2 = unpack(th)
        r, t, _ = _forward(x, z, th)
        b = x.shape[0]
        sech2 = 1.0 - t * t                       # (b, h)
        wrow = w2 * sech2                         # (b, h)
        dfdr = wrow @ w1                          # (b, n_in)
        A = np.zeros((b, p, p))
        A[:, 0, :] = dfdr[:, :p]
        for i in range(1, p):
            A[:, i, i - 1] = 1.0
        B = np.zeros((b, p, ntheta))
        dW1 = wrow[:, :, None] * r[:, None, :]    # (b, h, n_in)
        B[:, 0, : h * n_in] = dW1.reshape(b, h * n_in)
        B[:, 0, h * n_in : h * n_in + h] = wrow
        B[:, 0, h * n_in + h : h * n_in + 2 * h] = t
        B[:, 0, -1] = 1.0
        return A, B

    def ojac(x, z, th):
        b = x.shape[0]
        C = np.zeros((b, 1, p))
        C[:, 0, 0] = 1.0
        return C, np.zeros((b, 1, ntheta))

    def init_state(y, u, m):
        return np.array([y[max(m - 1 - j, 0)] for j in range(p)])

    rng = np.random.default_rng(fam.seed)
    th0 = np.zeros(ntheta)
    th0[: h * n_in] = rng.normal(0.0, n_in ** -0.5, size=h * n_in)
    th0[h * n_in + h : h * n_in + 2 * h] = rng.normal(0.0, h ** -0.5, size=h)

    return StateSpaceModel(
        name="nn-oe",
        state_dim=p, theta_dim=ntheta, output_dim=1,
        n_y=p, n_u=fam.n_u, n_v=0,
        transition=transition, output=output,
        transition_jacobians=tjac, output_jacobians=ojac,
        init_state=init_state,
        default_theta=th0,
    )


def _lower_armax(fam: LinearARMAX) -> StateSpaceModel:
    na, nb, nc = fam.n_a, fam.n_b, fam.n_c
    if na < 0 or nb < 0:
        raise ModelStructureError("ARMAX lags must be non-negative")
    if nc < 1:
        raise ModelStructureError("ARMAX needs n_v >= 1 (use an ARX model otherwise)")
    ntheta = na + nb + nc
    theta0 = np.zeros(ntheta) if fam.theta is None else np.asarray(fam.theta, float)
    if theta0.shape != (ntheta,):
        raise ModelStructureError("ARMAX theta length must be n_a + n_b + n_c")

    # z lag orders: the transition rebuilds the one-step-back prediction,
    # which needs y and u shifted one extra step into the past.
    n_y = na + 1
    n_u = nb + 1

    def split(th):
        return th[:na], th[na : na + nb], th[na + nb :]

    def transition(x, z, th):
        a, bb, c = split(th)
        ylag = z.past_outputs[:, 1 : 1 + na]
        ulag = z.current_inputs[:, 2 : 2 + nb]
        f = ylag @ a + ulag @ bb + x @ c
        v_new = z.past_outputs[:, 0] - f
        return np.concatenate([v_new[:, None], x[:, : nc - 1]], axis=1)

    def output(x, z, th):
        a, bb, c = split(th)
        ylag = z.past_outputs[:, 0:na]
        ulag = z.current_inputs[:, 1 : 1 + nb]
        return (ylag @ a + ulag @ bb + x @ c)[:, None]

    def tjac(x, z, th):
        a, bb, c = split(th)
        b = x.shape[0]
        A = np.zeros((b, nc, nc))
        A[:, 0, :] = -c
        for i in range(1, nc):
            A[:, i, i - 1] = 1.0
        B = np.zeros((b, nc, ntheta))
        B[:, 0, :na] = -z.past_outputs[:, 1 : 1 + na]
        B[:, 0, na : na + nb] = -z.current_inputs[:, 2 : 2 + nb]
        B[:, 0, na + nb :] = -x
        return A, B

    def ojac(x, z, th):
        a, bb, c = split(th)
        b = x.shape[0]
        C = np.tile(c[None, None, :], (b, 1, 1))
        F = np.zeros((b, 1, ntheta))
        F[:, 0, :na] = z.past_outputs[:, 0:na]
        F[:, 0, na : na + nb] = z.current_inputs[:, 1 : 1 + nb]
        F[:, 0, na + nb :] = x
        return C, F

    def init_state(y, u, m):
        return np.zeros(nc)

    return StateSpaceModel(
        name="linear-armax",
        state_dim=nc, theta_dim=ntheta, output_dim=1,
        n_y=n_y, n_u=n_u, n_v=nc,
        transition=transition, output=output,
        transition_jacobians=tjac, output_jacobians=ojac,
        init_state=init_state,
        default_theta=theta0,
    )


# ---------------------------------------------------------------------------
# Regressor construction
# ---------------------------------------------------------------------------

def regressor_matrices(model: StateSpaceModel, dataset) -> tuple[np.ndarray, np.ndarray]:
    """Precompute the lagged-data rows for every step of a dataset.

    Row r (paper time k = r + 1) holds y[k-1-j] in ZY[r, j] and u[k-j] in
    ZU[r, j]; indices before the start of the record are held at the
    first sample.
    """
    y, u = dataset.y, dataset.u
    n = len(y)
    rows = np.arange(n)
    jy = np.arange(model.n_y)
    zy = y[np.clip(rows[:, None] - 1 - jy[None, :], 0, None)] if model.n_y else np.zeros((n, 0))
    ju = np.arange(model.n_u + 1)
    zu = u[np.clip(rows[:, None] - ju[None, :], 0, None)]
    return zy, zu
