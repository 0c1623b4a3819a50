"""Constrained spatiotemporal fusion solved by preconditioned primal-dual splitting.

Given a noisy HR reference ``h_r``, its LR counterpart ``l_r`` and an LR image
``l_t`` at the target date, :func:`solve` estimates the clean HR target and a
denoised reference by minimising the weighted TV of both HR estimates subject
to an edge-consistency ball, per-band brightness hyperslabs, three data
fidelity balls and three l1 budgets for sparse noise.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from . import prox
from .guide import DirectionalWeights, apply_weights, weights_from_reference
from .operators import (
    SensorModel,
    blur_downsample,
    blur_downsample_adjoint,
    check_image,
    diff_adjoint,
    diff_forward,
    upsample_replicate,
)

log = logging.getLogger(__name__)

# Gradient-field groups for the mixed norm: all directions and bands of a pixel.
PIXEL_GROUP = (0, 1)

TRACE_COLUMNS = ("iter", "err_hr", "err_ht", "gap_lr_ref", "gap_lr_tgt", "alpha")

_CAMEL = {
    "kZero": "k_zero",
    "cAlpha": "c_alpha",
    "lambda": "lam",
    "qNorm": "q_norm",
    "sigmaH": "sigma_h",
    "rH": "r_h",
    "rL": "r_l",
    "betaPerBand": "beta",
    "epsH": "eps_h",
    "epsL": "eps_l",
    "etaH": "eta_h",
    "etaL": "eta_l",
    "maxIter": "max_iter",
    "tolRel": "tol_rel",
    "feasTol": "feas_tol",
}


class SolverDivergence(RuntimeError):
    """A solver variable became NaN or infinite."""

    def __init__(self, iteration: int, variable: str):
        super().__init__(f"non-finite value in {variable} at iteration {iteration}")
        self.iteration = iteration
        self.variable = variable


@dataclass(frozen=True)
class FusionParams:
    """Model and solver parameters.

    Radii left as ``None`` are filled from the observations by
    :func:`derive_parameters`; explicit values always win.
    """

    delta: float = 0.1
    k_zero: int = 2
    c_alpha: float = 5.0
    lam: float = 1.0
    q_norm: str = "l12"
    sigma_h: float = 0.0
    r_h: float = 0.0
    r_l: float = 0.0
    beta: tuple | None = None
    eps_h: float | None = None
    eps_l: float | None = None
    eta_h: float | None = None
    eta_l: float | None = None
    max_iter: int = 10000
    tol_rel: float = 1e-5
    # Absolute slack on the LR fidelity test of the stopping rule; an exact
    # "<= eps_l" is unreachable in floating point when eps_l is 0.
    feas_tol: float = 1e-6

    def __post_init__(self):
        if self.q_norm not in ("l1", "l2", "l12"):
            raise ValueError(f"q_norm must be l1, l2 or l12, got {self.q_norm!r}")
        if self.sigma_h < 0:
            raise ValueError(f"sigma_h must be >= 0, got {self.sigma_h}")
        for name in ("r_h", "r_l"):
            v = getattr(self, name)
            if not 0 <= v < 1:
                raise ValueError(f"{name} must lie in [0, 1), got {v}")
        if self.k_zero not in (1, 2, 3, 4):
            raise ValueError(f"k_zero must be in 1..4, got {self.k_zero}")
        if not self.delta > 0:
            raise ValueError(f"delta must be positive, got {self.delta}")
        if self.max_iter < 1:
            raise ValueError(f"max_iter must be >= 1, got {self.max_iter}")
        for name in ("eps_h", "eps_l", "eta_h", "eta_l"):
            v = getattr(self, name)
            if v is not None and v < 0:
                raise ValueError(f"{name} must be nonnegative, got {v}")
        if self.beta is not None:
            object.__setattr__(self, "beta", tuple(float(b) for b in self.beta))
            if any(b < 0 for b in self.beta):
                raise ValueError("beta entries must be nonnegative")

    @classmethod
    def from_dict(cls, d: dict) -> "FusionParams":
        """Build from a mapping using snake_case or camelCase field names."""
        known = {f.name for f in fields(cls)}
        kw = {}
        for key, value in d.items():
            name = _CAMEL.get(key, key)
            if name not in known:
                raise ValueError(f"unknown parameter {key!r}")
            kw[name] = value
        if isinstance(kw.get("q_norm"), str):
            kw["q_norm"] = kw["q_norm"].lower()
        return cls(**kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["beta"] is not None:
            d["beta"] = list(d["beta"])
        return d

    @property
    def resolved(self) -> bool:
        return None not in (self.beta, self.eps_h, self.eps_l, self.eta_h, self.eta_l)


@dataclass(frozen=True)
class StepSizes:
    gamma1: tuple
    gamma2: tuple


@dataclass
class FusionProblem:
    """Observed images, sensor geometry, parameters and directional weights.

    Weights default to those built from ``hr_ref`` with ``params.delta`` and
    ``params.k_zero``; pass :meth:`DirectionalWeights.ones` for a plain-TV
    ablation.
    """

    hr_ref: np.ndarray
    lr_ref: np.ndarray
    lr_target: np.ndarray
    sensor: SensorModel
    params: FusionParams = field(default_factory=FusionParams)
    weights: DirectionalWeights | None = None

    def __post_init__(self):
        self.hr_ref = check_image(self.hr_ref, "hr_ref")
        self.lr_ref = check_image(self.lr_ref, "lr_ref")
        self.lr_target = check_image(self.lr_target, "lr_target")
        s = self.sensor
        bands = self.hr_ref.shape[0]
        if self.hr_ref.shape[1:] != (s.hr_height, s.hr_width):
            raise ValueError(f"hr_ref shape {self.hr_ref.shape} does not match sensor {s}")
        for name in ("lr_ref", "lr_target"):
            arr = getattr(self, name)
            if arr.shape != (bands, s.lr_height, s.lr_width):
                raise ValueError(
                    f"{name} shape {arr.shape} != expected {(bands, s.lr_height, s.lr_width)}"
                )
        if self.weights is None:
            self.weights = weights_from_reference(self.hr_ref, self.params.delta, self.params.k_zero)
        elif self.weights.shape != self.hr_ref.shape[1:]:
            raise ValueError("weights do not match the HR grid")

    @property
    def n_hr(self) -> int:
        return self.sensor.hr_width * self.sensor.hr_height

    @property
    def n_lr(self) -> int:
        return self.sensor.lr_width * self.sensor.lr_height

    @property
    def bands(self) -> int:
        return self.hr_ref.shape[0]


@dataclass
class SolverState:
    """Primal and dual iterates of the splitting scheme."""

    h_r: np.ndarray
    h_t: np.ndarray
    s_hr: np.ndarray
    s_lr: np.ndarray
    s_lt: np.ndarray
    z1: np.ndarray
    z2: np.ndarray
    z3: np.ndarray
    z4: np.ndarray
    z5: np.ndarray
    z6: np.ndarray
    alpha: float = 0.0
    iteration: int = 0

    def primal(self):
        return dict(h_r=self.h_r, h_t=self.h_t, s_hr=self.s_hr, s_lr=self.s_lr, s_lt=self.s_lt)

    def variables(self):
        return {k: v for k, v in vars(self).items() if isinstance(v, np.ndarray)}


@dataclass
class FusionResult:
    target_hr: np.ndarray
    ref_hr_denoised: np.ndarray
    sparse_hr: np.ndarray
    sparse_lr_ref: np.ndarray
    sparse_lr_target: np.ndarray
    iterations: int
    converged: bool
    final_alpha: float
    params: FusionParams
    trace: dict
    state: SolverState = field(repr=False)

    @property
    def sparse_estimates(self):
        return self.sparse_hr, self.sparse_lr_ref, self.sparse_lr_target

    def write_trace_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(TRACE_COLUMNS)
            for row in zip(*(self.trace[c] for c in TRACE_COLUMNS)):
                writer.writerow([row[0]] + [repr(float(v)) for v in row[1:]])


def derive_parameters(hr_ref, lr_ref, sensor: SensorModel, params: FusionParams) -> FusionParams:
    """Fill unset radii from the observations; explicit values are kept.

    beta_b = |mean(l_r[b]) - mean(h_r[b])|,
    eps_h  = 0.98 sigma_h sqrt(N_h B (1 - r_h)),
    eps_l  = ||l_r - SB h_r||_2,
    eta_h  = 0.49 N_h r_h,  eta_l = 0.49 N_l r_l.
    """
    hr_ref = np.asarray(hr_ref, dtype=np.float64)
    lr_ref = np.asarray(lr_ref, dtype=np.float64)
    n_hr = sensor.hr_width * sensor.hr_height
    n_lr = sensor.lr_width * sensor.lr_height
    bands = hr_ref.shape[0]
    updates = {}
    if params.beta is None:
        beta = np.abs(lr_ref.sum(axis=(1, 2)) / n_lr - hr_ref.sum(axis=(1, 2)) / n_hr)
        updates["beta"] = tuple(float(b) for b in beta)
    elif len(params.beta) != bands:
        raise ValueError(f"beta has {len(params.beta)} entries for {bands} bands")
    if params.eps_h is None:
        updates["eps_h"] = 0.98 * params.sigma_h * math.sqrt(n_hr * bands * (1.0 - params.r_h))
    if params.eps_l is None:
        updates["eps_l"] = float(np.linalg.norm(lr_ref - blur_downsample(hr_ref, sensor)))
    if params.eta_h is None:
        updates["eta_h"] = 0.49 * n_hr * params.r_h
    if params.eta_l is None:
        updates["eta_l"] = 0.49 * n_lr * params.r_l
    for name, v in updates.items():
        if name != "beta" and not v >= 0:
            raise ValueError(f"derived {name} = {v} is not a valid radius")
    return replace(params, **updates)


def compute_stepsizes(w: DirectionalWeights) -> StepSizes:
    """Diagonal preconditioners from operator-norm bounds.

    Uses ||WD||^2 <= 16 w_max^2, ||SB||^2 <= 1 and ||I||^2 = 1.
    """
    wm2 = w.w_max**2
    g11 = 1.0 / (32.0 * wm2 + 2.0)
    g12 = 1.0 / (32.0 * wm2 + 1.0)
    return StepSizes(gamma1=(g11, g12, 1.0, 1.0, 1.0), gamma2=(1.0 / 5,) * 6)


def update_alpha(h_r, w: DirectionalWeights, lr_ref, lr_target, c_alpha: float, q: str) -> float:
    """Edge-constraint radius: c_alpha * ||W D h_r||_q * ||l_r - l_t||_1 / N_l."""
    n_lr = lr_ref.shape[-1] * lr_ref.shape[-2]
    edge = prox.q_norm(apply_weights(w, diff_forward(h_r)), q, axis=PIXEL_GROUP)
    change = float(np.abs(np.asarray(lr_ref) - np.asarray(lr_target)).sum()) / n_lr
    return c_alpha * edge * change


def init_state(problem: FusionProblem) -> SolverState:
    """Warm start: reference from h_r, target from the replicated l_t, zeros elsewhere."""
    hr = problem.hr_ref
    lr = problem.lr_ref
    p = problem.params
    grad_shape = (4,) + hr.shape
    state = SolverState(
        h_r=hr.copy(),
        h_t=upsample_replicate(problem.lr_target, problem.sensor),
        s_hr=np.zeros_like(hr),
        s_lr=np.zeros_like(lr),
        s_lt=np.zeros_like(lr),
        z1=np.zeros(grad_shape),
        z2=np.zeros(grad_shape),
        z3=np.zeros(grad_shape),
        z4=np.zeros_like(hr),
        z5=np.zeros_like(lr),
        z6=np.zeros_like(lr),
    )
    state.alpha = update_alpha(hr, problem.weights, lr, problem.lr_target, p.c_alpha, p.q_norm)
    return state


def _require_resolved(problem: FusionProblem) -> FusionParams:
    p = problem.params
    if not p.resolved:
        raise ValueError("problem parameters are incomplete; run derive_parameters first")
    return p


def iterate(state: SolverState, problem: FusionProblem, steps: StepSizes) -> SolverState:
    """One primal-dual sweep; returns a new state and leaves ``state`` untouched."""
    p = _require_resolved(problem)
    m = problem.sensor
    w = problem.weights
    g11, g12, g13, g14, g15 = steps.gamma1
    g21, g22, g23, g24, g25, g26 = steps.gamma2
    n_hr, n_lr = problem.n_hr, problem.n_lr

    def wd(x):
        return apply_weights(w, diff_forward(x))

    def dtwt(z):
        return diff_adjoint(apply_weights(w, z))

    def sb(x):
        return blur_downsample(x, m)

    def sbt(z):
        return blur_downsample_adjoint(z, m)

    # primal steps
    u_r = dtwt(state.z1 + state.z3) + state.z4 + sbt(state.z5)
    u_t = dtwt(state.z2 - state.z3) + sbt(state.z6)
    h_r = state.h_r - g11 * u_r
    h_t = state.h_t - g12 * u_t
    it = state.iteration + 1
    # before the projections, which cannot handle non-finite input
    _check_finite(it, h_r=h_r, h_t=h_t, z4=state.z4, z5=state.z5, z6=state.z6,
                  s_hr=state.s_hr, s_lr=state.s_lr, s_lt=state.s_lt)
    lt_sums = problem.lr_target.sum(axis=(1, 2))
    for b in range(problem.bands):
        h_t[b] = prox.project_hyperslab(h_t[b], n_hr * lt_sums[b] / n_lr, n_hr * p.beta[b])
    s_hr = prox.project_l1_ball(state.s_hr - g13 * state.z4, p.eta_h)
    s_lr = prox.project_l1_ball(state.s_lr - g14 * state.z5, p.eta_l)
    s_lt = prox.project_l1_ball(state.s_lt - g15 * state.z6, p.eta_l)

    # extrapolation
    v_r = 2.0 * h_r - state.h_r
    v_t = 2.0 * h_t - state.h_t
    w_hr = 2.0 * s_hr - state.s_hr
    w_lr = 2.0 * s_lr - state.s_lr
    w_lt = 2.0 * s_lt - state.s_lt

    wd_hr = wd(h_r)
    alpha = (
        p.c_alpha
        * prox.q_norm(wd_hr, p.q_norm, axis=PIXEL_GROUP)
        * float(np.abs(problem.lr_ref - problem.lr_target).sum())
        / n_lr
    )

    # dual steps
    wd_vr = wd(v_r)
    wd_vt = wd(v_t)
    z1 = state.z1 + g21 * wd_vr
    z2 = state.z2 + g22 * wd_vt
    z3 = state.z3 + g23 * (wd_vr - wd_vt)
    z4 = state.z4 + g24 * (v_r + w_hr)
    z5 = state.z5 + g25 * (sb(v_r) + w_lr)
    z6 = state.z6 + g26 * (sb(v_t) + w_lt)

    z1 = prox.prox_conjugate(z1, g21, lambda x, t: prox.prox_l12(x, t, axis=PIXEL_GROUP))
    z2 = prox.prox_conjugate(z2, g22, lambda x, t: prox.prox_l12(x, p.lam * t, axis=PIXEL_GROUP))
    z3 = prox.prox_conjugate(
        z3, g23, lambda x, t: prox.project_q_ball(x, p.q_norm, alpha, axis=PIXEL_GROUP)
    )
    z4 = prox.prox_conjugate(z4, g24, lambda x, t: prox.project_l2_ball(x, p.eps_h, problem.hr_ref))
    z5 = prox.prox_conjugate(z5, g25, lambda x, t: prox.project_l2_ball(x, p.eps_l, problem.lr_ref))
    z6 = prox.prox_conjugate(
        z6, g26, lambda x, t: prox.project_l2_ball(x, p.eps_l, problem.lr_target)
    )

    new = SolverState(
        h_r=h_r, h_t=h_t, s_hr=s_hr, s_lr=s_lr, s_lt=s_lt,
        z1=z1, z2=z2, z3=z3, z4=z4, z5=z5, z6=z6,
        alpha=alpha, iteration=it,
    )
    if not math.isfinite(alpha):
        raise SolverDivergence(it, "alpha")
    _check_finite(it, **new.variables())
    return new


def _check_finite(iteration, **arrays):
    for name, arr in arrays.items():
        if not math.isfinite(float(arr.sum())):
            raise SolverDivergence(iteration, name)


def _rel_change(new, old) -> float:
    den = float(np.linalg.norm(old))
    num = float(np.linalg.norm(new - old))
    if den == 0.0:
        return 0.0 if num == 0.0 else math.inf
    return num / den


def residuals(state: SolverState, problem: FusionProblem, previous: SolverState | None = None) -> dict:
    """Constraint gaps of ``state``; a gap <= 0 means the constraint holds.

    Keys: ``err_hr``/``err_ht`` (relative change from ``previous``, NaN when
    not given), ``gap_tgec``, ``gap_slab`` (per band), ``gap_hr``,
    ``gap_lr_ref``, ``gap_lr_tgt``, ``gap_s_hr``, ``gap_s_lr``, ``gap_s_lt``,
    the l1 masses ``l1_s_hr``/``l1_s_lr``/``l1_s_lt`` and ``alpha``.
    """
    p = _require_resolved(problem)
    m = problem.sensor
    n_hr, n_lr = problem.n_hr, problem.n_lr
    w = problem.weights
    tgec = prox.q_norm(
        apply_weights(w, diff_forward(state.h_r) - diff_forward(state.h_t)), p.q_norm, axis=PIXEL_GROUP
    )
    slab = np.abs(
        problem.lr_target.sum(axis=(1, 2)) / n_lr - state.h_t.sum(axis=(1, 2)) / n_hr
    ) - np.asarray(p.beta)
    l1 = {k: float(np.abs(getattr(state, k)).sum()) for k in ("s_hr", "s_lr", "s_lt")}
    out = {
        "err_hr": math.nan,
        "err_ht": math.nan,
        "gap_tgec": tgec - state.alpha,
        "gap_slab": slab,
        "gap_hr": float(np.linalg.norm(problem.hr_ref - state.h_r - state.s_hr)) - p.eps_h,
        "gap_lr_ref": float(np.linalg.norm(problem.lr_ref - blur_downsample(state.h_r, m) - state.s_lr))
        - p.eps_l,
        "gap_lr_tgt": float(
            np.linalg.norm(problem.lr_target - blur_downsample(state.h_t, m) - state.s_lt)
        )
        - p.eps_l,
        "gap_s_hr": l1["s_hr"] - p.eta_h,
        "gap_s_lr": l1["s_lr"] - p.eta_l,
        "gap_s_lt": l1["s_lt"] - p.eta_l,
        "l1_s_hr": l1["s_hr"],
        "l1_s_lr": l1["s_lr"],
        "l1_s_lt": l1["s_lt"],
        "alpha": state.alpha,
    }
    if previous is not None:
        out["err_hr"] = _rel_change(state.h_r, previous.h_r)
        out["err_ht"] = _rel_change(state.h_t, previous.h_t)
    return out


def max_constraint_violation(state: SolverState, problem: FusionProblem) -> float:
    """Largest positive gap over every constraint of the problem (0 if feasible)."""
    r = residuals(state, problem)
    gaps = [r[k] for k in ("gap_tgec", "gap_hr", "gap_lr_ref", "gap_lr_tgt", "gap_s_hr", "gap_s_lr", "gap_s_lt")]
    gaps.extend(np.ravel(r["gap_slab"]))
    return max(0.0, max(float(g) for g in gaps))


def _progress(state, prev, problem) -> dict:
    # Per-iteration subset of residuals(): the quantities the stopping rule needs.
    p = problem.params
    m = problem.sensor
    return {
        "iter": state.iteration,
        "err_hr": _rel_change(state.h_r, prev.h_r),
        "err_ht": _rel_change(state.h_t, prev.h_t),
        "gap_lr_ref": float(np.linalg.norm(problem.lr_ref - blur_downsample(state.h_r, m) - state.s_lr))
        - p.eps_l,
        "gap_lr_tgt": float(
            np.linalg.norm(problem.lr_target - blur_downsample(state.h_t, m) - state.s_lt)
        )
        - p.eps_l,
        "alpha": state.alpha,
    }


def solve(problem: FusionProblem, callback=None) -> FusionResult:
    """Run the splitting scheme until the stopping rule or ``max_iter``.

    The run stops once the relative changes of both HR estimates fall below
    ``tol_rel`` and both LR fidelity terms are within ``eps_l + feas_tol``.
    ``callback(state, record)`` is invoked after every iteration with the
    trace record of that iteration.
    """
    params = derive_parameters(problem.hr_ref, problem.lr_ref, problem.sensor, problem.params)
    problem = replace(problem, params=params)
    steps = compute_stepsizes(problem.weights)
    state = init_state(problem)
    trace = {c: [] for c in TRACE_COLUMNS}
    converged = False
    for _ in range(params.max_iter):
        prev = state
        state = iterate(prev, problem, steps)
        rec = _progress(state, prev, problem)
        for c in TRACE_COLUMNS:
            trace[c].append(rec[c])
        if callback is not None:
            callback(state, rec)
        # The first sweep starts from zero duals and never moves the primal
        # iterates, so the rule is only meaningful from the second one on.
        if (
            state.iteration >= 2
            and rec["err_hr"] < params.tol_rel
            and rec["err_ht"] < params.tol_rel
            and rec["gap_lr_ref"] <= params.feas_tol
            and rec["gap_lr_tgt"] <= params.feas_tol
        ):
            converged = True
            break
    log.info("stopped after %d iterations (converged=%s)", state.iteration, converged)
    return FusionResult(
        target_hr=state.h_t,
        ref_hr_denoised=state.h_r,
        sparse_hr=state.s_hr,
        sparse_lr_ref=state.s_lr,
        sparse_lr_target=state.s_lt,
        iterations=state.iteration,
        converged=converged,
        final_alpha=state.alpha,
        params=params,
        trace={k: np.asarray(v) for k, v in trace.items()},
        state=state,
    )


def fuse(hr_ref, lr_ref, lr_target, window: int, params: FusionParams | None = None, **kw) -> FusionResult:
    """Convenience wrapper: build the problem from arrays and solve it."""
    sensor = SensorModel.for_image(np.asarray(hr_ref), window)
    problem = FusionProblem(hr_ref, lr_ref, lr_target, sensor, params or FusionParams(), **kw)
    return solve(problem)
