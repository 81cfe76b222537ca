"""Dense Levenberg-Marquardt with a deterministic random-restart driver.

Parameter dimensions in this package are small (6 for the pose stage,
5 + 2m for the axis stage), so the solver is deliberately dense: normal
equations with additive damping, classical multiplicative damping schedule.
"""

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "LMOptions",
    "LMReport",
    "RestartResult",
    "ConvergenceError",
    "AllRestartsFailedError",
    "levenberg_marquardt",
    "with_restarts",
]

_DAMPING_CEILING = 1e12


class ConvergenceError(RuntimeError):
    """Optimization failed to converge; ``best`` carries the best attempt."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class AllRestartsFailedError(RuntimeError):
    """Every restart raised before producing a report."""


@dataclass(frozen=True)
class LMOptions:
    """Solver knobs.

    ``damping_up`` multiplies the damping on a rejected step and
    ``damping_down`` divides it on an accepted one (both > 1, so the
    classical x10 / x0.1 schedule is the default). ``seed`` is not used by
    the core solver; restart drivers fall back to it when no explicit seed
    is given.
    """

    max_iterations: int = 200
    damping_init: float = 1e-3
    damping_up: float = 10.0
    damping_down: float = 10.0
    gradient_tol: float = 1e-10
    step_tol: float = 1e-12
    residual_tol: float = 1e-14
    ftol: float = 1e-10  # relative cost decrease of an accepted step
    seed: int = 0

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.damping_init <= 0:
            raise ValueError("damping_init must be > 0")
        if self.damping_up <= 1 or self.damping_down <= 1:
            raise ValueError("damping factors must be > 1")
        for name in ("gradient_tol", "step_tol", "residual_tol", "ftol"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")


@dataclass(frozen=True)
class LMReport:
    """Outcome of one solve."""

    x: np.ndarray
    residual_norm: float
    iterations: int
    termination: str  # "residual" | "gradient" | "ftol" | "step" | "max_iterations" | "stalled"
    converged: bool
    n_residual_evaluations: int = 0


@dataclass(frozen=True)
class RestartResult:
    """Best-of-restarts outcome plus bookkeeping for reports."""

    best: LMReport
    best_index: int
    n_restarts: int
    n_converged: int
    n_failed: int
    residual_norms: tuple = field(default_factory=tuple)


def levenberg_marquardt(residual, jacobian, x0, options=None, reject_errors=()):
    """Minimize ||residual(x)||^2 from ``x0``.

    ``jacobian(x)`` must return the (n_res, n_params) Jacobian at x.
    Exceptions of the types in ``reject_errors`` raised while evaluating a
    trial step are treated as a rejected step (damping increases); the same
    exception at ``x0`` propagates. Accepted residual norms are monotone
    non-increasing.
    """
    opts = options or LMOptions()
    x = np.asarray(x0, dtype=float).copy()
    if not np.all(np.isfinite(x)):
        raise ValueError("initial parameters contain non-finite values")

    r = np.asarray(residual(x), dtype=float)
    if not np.all(np.isfinite(r)):
        raise ValueError("residual is non-finite at the initial parameters")
    cost = float(r @ r)
    n_eval = 1

    def report(termination, converged, iterations):
        return LMReport(
            x=x.copy(),
            residual_norm=float(np.sqrt(cost)),
            iterations=iterations,
            termination=termination,
            converged=converged,
            n_residual_evaluations=n_eval,
        )

    if np.sqrt(cost) <= opts.residual_tol:
        return report("residual", True, 0)

    lam = opts.damping_init
    accepted = 0
    eye = None
    for _ in range(opts.max_iterations):
        J = np.asarray(jacobian(x), dtype=float)
        if J.shape != (r.size, x.size):
            raise ValueError(f"jacobian shape {J.shape} does not match ({r.size}, {x.size})")
        g = J.T @ r
        if np.abs(g).max() <= opts.gradient_tol:
            return report("gradient", True, accepted)
        jtj = J.T @ J
        if eye is None:
            eye = np.eye(x.size)

        while True:
            try:
                step = np.linalg.solve(jtj + lam * eye, -g)
            except np.linalg.LinAlgError:
                step = None
            trial_cost = np.inf
            if step is not None:
                x_trial = x + step
                try:
                    r_trial = np.asarray(residual(x_trial), dtype=float)
                    n_eval += 1
                    if np.all(np.isfinite(r_trial)):
                        trial_cost = float(r_trial @ r_trial)
                except reject_errors:
                    n_eval += 1

            if trial_cost < cost:
                improvement = cost - trial_cost
                x, r, cost = x_trial, r_trial, trial_cost
                lam = max(lam / opts.damping_down, 1e-15)
                accepted += 1
                break
            # a rejected step already below the step tolerance cannot be
            # shrunk into an improvement; the iterate is converged to
            # working precision even though the gradient check missed
            if step is not None and np.linalg.norm(step) <= opts.step_tol * (
                1.0 + np.linalg.norm(x)
            ):
                return report("step", True, accepted)
            lam *= opts.damping_up
            if lam > _DAMPING_CEILING:
                return report("stalled", False, accepted)

        if np.sqrt(cost) <= opts.residual_tol:
            return report("residual", True, accepted)
        if improvement <= opts.ftol * (cost + improvement):
            return report("ftol", True, accepted)
        if np.linalg.norm(step) <= opts.step_tol:
            return report("step", True, accepted)

    return report("max_iterations", False, accepted)


def with_restarts(solver, sampler, count, seed):
    """Run ``solver`` from ``count`` sampled starts; keep the lowest residual.

    ``sampler(index, rng)`` produces the start for each restart in order, so
    a fixed seed gives bitwise-identical results. Ties in the final residual
    norm are broken by restart index. Restarts that raise are recorded as
    failures; if every restart fails an :class:`AllRestartsFailedError` is
    raised carrying the first failure message.
    """
    if count < 1:
        raise ValueError("restart count must be >= 1")
    rng = np.random.default_rng(seed)
    starts = [np.asarray(sampler(i, rng), dtype=float) for i in range(count)]

    best = None
    best_index = -1
    n_failed = 0
    n_converged = 0
    norms = []
    first_error = None
    for i, x0 in enumerate(starts):
        try:
            rep = solver(x0)
        except Exception as e:  # noqa: BLE001 - restart isolation is the point
            n_failed += 1
            norms.append(float("nan"))
            if first_error is None:
                first_error = e
            continue
        norms.append(rep.residual_norm)
        if rep.converged:
            n_converged += 1
        if best is None or rep.residual_norm < best.residual_norm:
            best = rep
            best_index = i
    if best is None:
        raise AllRestartsFailedError(
            f"all {count} restarts failed; first failure: {first_error}"
        ) from first_error
    return RestartResult(
        best=best,
        best_index=best_index,
        n_restarts=count,
        n_converged=n_converged,
        n_failed=n_failed,
        residual_norms=tuple(norms),
    )
