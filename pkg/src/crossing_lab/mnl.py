"""Multinomial logit estimation and the safe/unsafe crossing application.

General J-alternative MNL with linear-in-parameters utilities, estimated by
Newton-Raphson with step halving on the analytic gradient and Hessian. The
crossing model uses it at J = 2: trial covariates enter the safe
alternative's utility and the unsafe alternative is normalized to zero.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .analytics import TrialMetrics
from .trial import Condition

DEFAULT_PET_THRESHOLD = 1.5


class EstimationError(RuntimeError):
    """Estimation cannot proceed (rank deficiency or separation)."""

    def __init__(self, message: str, columns: Sequence[str] = ()):
        super().__init__(message)
        self.columns = tuple(columns)


class InvalidDesignError(ValueError):
    """The design spec requests covariates the condition cannot supply."""


@dataclass(frozen=True)
class ChoiceObservation:
    """One decision: covariate vectors per alternative and the chosen index."""

    k: int
    x: np.ndarray  # (J, K)
    chosen: int

    def __post_init__(self):
        if self.chosen < 0 or self.chosen >= self.x.shape[0]:
            raise ValueError("chosen alternative out of range")
        if not np.all(np.isfinite(self.x)):
            raise ValueError("non-finite covariate values")


class Observations:
    """Stacked choice data: X is (N, J, K), chosen is (N,)."""

    def __init__(
        self,
        X: np.ndarray,
        chosen: np.ndarray,
        names: Sequence[str],
        participant_ids: Optional[Sequence] = None,
        dropped_undefined: int = 0,
    ):
        X = np.asarray(X, dtype=float)
        if X.ndim != 3:
            raise ValueError("X must have shape (N, J, K)")
        if not np.all(np.isfinite(X)):
            raise ValueError("non-finite covariate values")
        self.X = X
        self.chosen = np.asarray(chosen, dtype=int)
        if self.chosen.shape != (X.shape[0],):
            raise ValueError("chosen must have one entry per observation")
        if self.chosen.size and (self.chosen.min() < 0 or self.chosen.max() >= X.shape[1]):
            raise ValueError("chosen alternative out of range")
        self.names = tuple(names)
        if len(self.names) != X.shape[2]:
            raise ValueError("one name per covariate column required")
        self.participant_ids = list(participant_ids) if participant_ids is not None else None
        self.dropped_undefined = dropped_undefined

    def __len__(self) -> int:
        return self.X.shape[0]

    @property
    def n_alternatives(self) -> int:
        return self.X.shape[1]

    @property
    def n_covariates(self) -> int:
        return self.X.shape[2]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["participant", "chosen", *self.names])
        for i in range(len(self)):
            pid = self.participant_ids[i] if self.participant_ids else i
            # binary-logit layout: the non-normalized alternative's covariates
            writer.writerow([pid, int(self.chosen[i]), *[repr(float(v)) for v in self.X[i, -1]]])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "Observations":
        reader = csv.reader(io.StringIO(text))
        header = next(reader)
        names = header[2:]
        rows = []
        chosen = []
        pids = []
        for row in reader:
            if not row:
                continue
            pids.append(row[0])
            chosen.append(int(row[1]))
            rows.append([float(v) for v in row[2:]])
        x_safe = np.array(rows, dtype=float)
        X = np.zeros((len(rows), 2, len(names)))
        X[:, 1, :] = x_safe
        return cls(X, np.array(chosen), names, participant_ids=pids)


def probability(beta: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Choice probabilities for one decision: softmax of utilities x @ beta."""
    beta = np.asarray(beta, dtype=float)
    x = np.asarray(x, dtype=float)
    utilities = x @ beta
    if not np.all(np.isfinite(utilities)):
        raise ValueError("non-finite utilities")
    shifted = utilities - utilities.max()
    expu = np.exp(shifted)
    return expu / expu.sum()


def _probabilities(beta: np.ndarray, obs: Observations) -> np.ndarray:
    U = obs.X @ beta  # (N, J)
    U = U - U.max(axis=1, keepdims=True)
    expu = np.exp(U)
    return expu / expu.sum(axis=1, keepdims=True)


def log_likelihood(beta: np.ndarray, obs: Observations) -> float:
    P = _probabilities(np.asarray(beta, dtype=float), obs)
    idx = np.arange(len(obs))
    with np.errstate(divide="ignore"):  # P may underflow at extreme betas
        return float(np.log(P[idx, obs.chosen]).sum())


def gradient(beta: np.ndarray, obs: Observations) -> np.ndarray:
    P = _probabilities(np.asarray(beta, dtype=float), obs)
    idx = np.arange(len(obs))
    x_chosen = obs.X[idx, obs.chosen]            # (N, K)
    x_bar = np.einsum("nj,njk->nk", P, obs.X)    # (N, K)
    return (x_chosen - x_bar).sum(axis=0)


def hessian(beta: np.ndarray, obs: Observations) -> np.ndarray:
    P = _probabilities(np.asarray(beta, dtype=float), obs)
    x_bar = np.einsum("nj,njk->nk", P, obs.X)
    dev = obs.X - x_bar[:, None, :]              # (N, J, K)
    return -np.einsum("nj,njk,njl->kl", P, dev, dev)


@dataclass
class MNLFit:
    beta: np.ndarray
    covariance: np.ndarray
    log_likelihood: float
    null_log_likelihood: float
    rho_sq: float
    t_stats: np.ndarray
    converged: bool
    iterations: int
    names: tuple
    n_observations: int
    trace: list = field(default_factory=list)  # (iteration, LL, grad_inf_norm)

    @property
    def std_errors(self) -> np.ndarray:
        return np.sqrt(np.diag(self.covariance))

    def to_dict(self) -> dict:
        return {
            "names": list(self.names),
            "beta": [float(b) for b in self.beta],
            "std_errors": [float(s) for s in self.std_errors],
            "t_stats": [float(t) for t in self.t_stats],
            "log_likelihood": self.log_likelihood,
            "null_log_likelihood": self.null_log_likelihood,
            "rho_sq": self.rho_sq,
            "converged": self.converged,
            "iterations": self.iterations,
            "n_observations": self.n_observations,
            "trace": [[int(i), float(ll), float(g)] for i, ll, g in self.trace],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def _check_rank(obs: Observations) -> None:
    # identified directions are covariate differences against the first
    # alternative; for the binary safe/unsafe design this is the safe row
    diffs = (obs.X[:, 1:, :] - obs.X[:, :1, :]).reshape(-1, obs.n_covariates)
    rank = np.linalg.matrix_rank(diffs)
    if rank < obs.n_covariates:
        _, s, vt = np.linalg.svd(diffs, full_matrices=False)
        null_dir = vt[-1]
        cols = [obs.names[i] for i in np.flatnonzero(np.abs(null_dir) > 0.3)]
        raise EstimationError(
            f"design matrix rank {rank} < {obs.n_covariates} columns", columns=cols or obs.names
        )


def estimate(
    obs: Observations,
    init: Optional[np.ndarray] = None,
    tol: float = 1e-8,
    max_iter: int = 100,
    null: str = "equal-share",
) -> MNLFit:
    """Newton-Raphson MLE with step halving.

    Convergence is gradient infinity-norm below tol; hitting max_iter reports
    converged=False rather than raising. Separation (unbounded likelihood) and
    rank-deficient designs raise EstimationError naming the columns involved.
    """
    if len(obs) == 0:
        raise ValueError("no observations")
    if np.unique(obs.chosen).size < 2:
        raise EstimationError(
            "every observation chose the same alternative; the likelihood is unbounded",
            columns=obs.names,
        )
    _check_rank(obs)
    K = obs.n_covariates
    beta = np.zeros(K) if init is None else np.asarray(init, dtype=float).copy()
    ll = log_likelihood(beta, obs)
    trace: list[tuple[int, float, float]] = []
    converged = False
    iterations = 0
    for it in range(1, max_iter + 1):
        iterations = it
        g = gradient(beta, obs)
        gnorm = float(np.abs(g).max())
        trace.append((it - 1, ll, gnorm))
        if gnorm < tol:
            converged = True
            iterations = it - 1
            break
        H = hessian(beta, obs)
        try:
            delta = np.linalg.solve(-H, g)
        except np.linalg.LinAlgError as exc:
            raise EstimationError(
                "singular Hessian (separation or collinearity)",
                columns=_largest_columns(obs.names, g),
            ) from exc
        lam = 1.0
        new_ll = log_likelihood(beta + lam * delta, obs)
        while new_ll < ll - 1e-12 and lam > 1e-10:
            lam *= 0.5
            new_ll = log_likelihood(beta + lam * delta, obs)
        beta = beta + lam * delta
        ll = new_ll
        if float(np.abs(beta).max()) > 1e4:
            raise EstimationError(
                "coefficients diverging; the data are likely separated",
                columns=_largest_columns(obs.names, beta),
            )
    else:
        trace.append((max_iter, ll, float(np.abs(gradient(beta, obs)).max())))

    P = _probabilities(beta, obs)
    if float(P[np.arange(len(obs)), obs.chosen].min()) > 1.0 - 1e-8:
        raise EstimationError(
            "perfect separation: fitted choice probabilities all reach 1",
            columns=_largest_columns(obs.names, beta),
        )

    H = hessian(beta, obs)
    try:
        covariance = np.linalg.inv(-H)
    except np.linalg.LinAlgError as exc:
        raise EstimationError(
            "information matrix singular at the optimum",
            columns=_largest_columns(obs.names, beta),
        ) from exc

    if null == "equal-share":
        ll0 = -len(obs) * math.log(obs.n_alternatives)
    elif null == "constant-only":
        shares = np.bincount(obs.chosen, minlength=obs.n_alternatives) / len(obs)
        nz = shares[shares > 0]
        ll0 = float(len(obs) * np.sum(shares[shares > 0] * np.log(nz)))
    else:
        raise ValueError(f"unknown null model {null!r}")

    with np.errstate(divide="ignore", invalid="ignore"):
        se = np.sqrt(np.diag(covariance))
        t_stats = np.where(se > 0, beta / se, np.inf)
    return MNLFit(
        beta=beta,
        covariance=covariance,
        log_likelihood=ll,
        null_log_likelihood=ll0,
        rho_sq=1.0 - ll / ll0,
        t_stats=t_stats,
        converged=converged,
        iterations=iterations,
        names=obs.names,
        n_observations=len(obs),
        trace=trace,
    )


def _largest_columns(names: Sequence[str], vec: np.ndarray, top: int = 3) -> list[str]:
    order = np.argsort(-np.abs(vec))
    return [names[i] for i in order[:top]]


# ---------------------------------------------------------------------------
# Design matrix construction
# ---------------------------------------------------------------------------

# covariates only defined when a phone task exists
DISTRACTION_COLUMNS = frozenset(
    {"head_turned_any", "head_orientations_per_s", "pct_phone_wait", "pct_phone_cross"}
)

BASE_COLUMNS = (
    "female",
    "wait_time",
    "initial_walking_speed",
    "avg_accel",
    "avg_decel",
    "max_accel",
    "max_decel",
    "crossing_speed",
    "head_turned_any",
    "head_orientations_per_s",
    "pct_phone_wait",
    "pct_phone_cross",
)


def _column_value(m: TrialMetrics, name: str) -> Optional[float]:
    if name == "female":
        return None if m.female is None else float(m.female)
    if name == "head_turned_any":
        return float(m.head_turned_any)
    value = getattr(m, name)
    return None if value is None else float(value)


@dataclass(frozen=True)
class DesignSpec:
    """Covariate list and the dependent-variable rule for one condition.

    Entries may be base column names or interactions written "a*b". The
    dependent variable is safe when min_pet exceeds the threshold.
    """

    condition: Condition
    covariates: tuple[str, ...]
    threshold: float = DEFAULT_PET_THRESHOLD
    standardize: bool = False

    def validate(self) -> None:
        for name in self.covariates:
            for part in name.split("*"):
                if part not in BASE_COLUMNS:
                    raise InvalidDesignError(f"unknown covariate {part!r}")
                if self.condition is Condition.CONTROL and part in DISTRACTION_COLUMNS:
                    raise InvalidDesignError(
                        f"covariate {part!r} is distraction-only and undefined under control"
                    )


DEFAULT_DESIGNS = {
    Condition.CONTROL: DesignSpec(
        condition=Condition.CONTROL,
        covariates=("female", "wait_time", "initial_walking_speed", "avg_accel", "avg_decel"),
    ),
    Condition.DISTRACTED: DesignSpec(
        condition=Condition.DISTRACTED,
        covariates=(
            "female",
            "wait_time",
            "initial_walking_speed",
            "avg_accel",
            "avg_decel",
            "head_turned_any",
            "head_orientations_per_s",
            "pct_phone_wait",
        ),
    ),
    Condition.DISTRACTED_LED: DesignSpec(
        condition=Condition.DISTRACTED_LED,
        covariates=(
            "female",
            "wait_time",
            "initial_walking_speed",
            "avg_accel",
            "avg_decel",
            "head_turned_any",
            "head_orientations_per_s",
            "pct_phone_wait",
        ),
    ),
}


def build_design(metrics: Sequence[TrialMetrics], spec: DesignSpec) -> Observations:
    """Binary safe/unsafe observations for one condition.

    Covariates enter the safe alternative's utility; the unsafe alternative
    is normalized to zero. Trials with undefined minimum PET are excluded and
    counted on the result.
    """
    spec.validate()
    rows = []
    chosen = []
    pids = []
    dropped = 0
    for m in metrics:
        if m.condition is not spec.condition:
            continue
        if m.female is None:
            raise ValueError(f"trial {m.trial_id} lacks demographic tags")
        if m.min_pet is None:
            dropped += 1
            continue
        vec = []
        for name in spec.covariates:
            value = 1.0
            for part in name.split("*"):
                part_value = _column_value(m, part)
                if part_value is None:
                    raise ValueError(
                        f"covariate {part!r} undefined for trial {m.trial_id}"
                    )
                value *= part_value
            vec.append(value)
        rows.append(vec)
        chosen.append(1 if m.min_pet > spec.threshold else 0)
        pids.append(m.participant_id if m.participant_id is not None else m.trial_id)
    if not rows:
        raise EstimationError(f"no usable trials for condition {spec.condition.value}")
    x_safe = np.array(rows, dtype=float)
    if spec.standardize:
        mean = x_safe.mean(axis=0)
        sd = x_safe.std(axis=0)
        if np.any(sd == 0):
            cols = [spec.covariates[i] for i in np.flatnonzero(sd == 0)]
            raise EstimationError("zero-variance columns cannot be standardized", columns=cols)
        x_safe = (x_safe - mean) / sd
    X = np.zeros((len(rows), 2, x_safe.shape[1]))
    X[:, 1, :] = x_safe
    return Observations(
        X,
        np.array(chosen),
        spec.covariates,
        participant_ids=pids,
        dropped_undefined=dropped,
    )


# ---------------------------------------------------------------------------
# Reporting
# ---------------------------------------------------------------------------

@dataclass
class ModelReport:
    """Per-condition fits rendered as covariate rows of "coef (t-stat)"."""

    fits: dict  # Condition -> MNLFit
    errors: dict  # Condition -> str

    def _row_names(self) -> list[str]:
        names: list[str] = []
        for cond in Condition:
            fit = self.fits.get(cond)
            if fit is None:
                continue
            for name in fit.names:
                if name not in names:
                    names.append(name)
        return names

    def cell(self, name: str, cond: Condition) -> str:
        fit = self.fits.get(cond)
        if fit is None or name not in fit.names:
            return "-"
        i = fit.names.index(name)
        return f"{fit.beta[i]:.2f} ({fit.t_stats[i]:.2f})"

    def to_rows(self) -> list[list[str]]:
        conditions = [c for c in Condition if c in self.fits or c in self.errors]
        header = ["covariate"] + [c.value for c in conditions]
        rows = [header]
        for name in self._row_names():
            rows.append([name] + [self.cell(name, c) for c in conditions])
        footer = ["rho_sq"]
        for cond in conditions:
            fit = self.fits.get(cond)
            footer.append("-" if fit is None else f"{fit.rho_sq:.2f}")
        rows.append(footer)
        return rows

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        for row in self.to_rows():
            writer.writerow(row)
        return buf.getvalue()

    def to_text(self) -> str:
        rows = self.to_rows()
        widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
        lines = []
        for idx, row in enumerate(rows):
            lines.append("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)))
            if idx == 0:
                lines.append("-" * (sum(widths) + 2 * (len(widths) - 1)))
        for cond, msg in self.errors.items():
            lines.append(f"[{cond.value}] estimation failed: {msg}")
        return "\n".join(lines)

    def to_json(self) -> str:
        payload = {
            "fits": {c.value: f.to_dict() for c, f in self.fits.items()},
            "errors": {c.value: msg for c, msg in self.errors.items()},
        }
        return json.dumps(payload, sort_keys=True, indent=2)


def report(fits: dict) -> ModelReport:
    """Assemble the per-condition report from fits (or error strings)."""
    ok = {c: f for c, f in fits.items() if isinstance(f, MNLFit)}
    errors = {c: str(f) for c, f in fits.items() if not isinstance(f, MNLFit)}
    if not ok and not errors:
        raise ValueError("at least one fit required")
    return ModelReport(fits=ok, errors=errors)
