"""Domain types shared by every module: datasets, parameters, fit results,
feature maps, and the dataset diagnostics used before fitting.
"""

from __future__ import annotations

import ast
import enum
import math
import re
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Optional, Sequence

import numpy as np
import scipy.linalg

from .errors import ConfigError, DataError

RANK_RTOL = 1e-10


def _frozen_array(a, ndim):
    arr = np.array(a, dtype=np.float64, copy=True)
    if arr.ndim == 1 and ndim == 2:
        arr = arr.reshape(-1, 1)
    if arr.ndim != ndim:
        raise DataError(f"expected a {ndim}-d array, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Dataset:
    """Labeled-positive source sample plus unlabeled target sample.

    Rows ``0..n-1`` of :attr:`pooled` are the source rows and rows
    ``n..N-1`` the target rows.
    """

    source_x: np.ndarray
    target_x: np.ndarray
    feature_names: Optional[tuple] = None

    def __post_init__(self):
        src = _frozen_array(self.source_x, 2)
        tgt = _frozen_array(self.target_x, 2)
        if src.shape[0] < 1 or tgt.shape[0] < 1:
            raise DataError(
                f"both samples need at least one row (n={src.shape[0]}, m={tgt.shape[0]})")
        if src.shape[1] < 1:
            raise DataError("at least one feature column is required")
        if src.shape[1] != tgt.shape[1]:
            raise DataError(
                f"source has {src.shape[1]} columns but target has {tgt.shape[1]}")
        for name, arr in (("source", src), ("target", tgt)):
            bad = ~np.isfinite(arr)
            if bad.any():
                row, col = np.argwhere(bad)[0]
                raise DataError(f"non-finite {name} entry at row {row}, column {col}")
        object.__setattr__(self, "source_x", src)
        object.__setattr__(self, "target_x", tgt)
        if self.feature_names is not None:
            names = tuple(str(s) for s in self.feature_names)
            if len(names) != src.shape[1]:
                raise DataError("feature_names length does not match column count")
            object.__setattr__(self, "feature_names", names)

    @property
    def n(self) -> int:
        return self.source_x.shape[0]

    @property
    def m(self) -> int:
        return self.target_x.shape[0]

    @property
    def p(self) -> int:
        return self.source_x.shape[1]

    @property
    def N(self) -> int:
        return self.n + self.m

    @property
    def c(self) -> float:
        """Target share ``m / N``."""
        return self.m / self.N

    @cached_property
    def pooled(self) -> np.ndarray:
        out = np.ascontiguousarray(np.vstack([self.source_x, self.target_x]))
        out.setflags(write=False)
        return out

    @cached_property
    def design(self) -> np.ndarray:
        """Pooled design matrix with rows ``(1, x_i)``."""
        out = np.empty((self.N, self.p + 1))
        out[:, 0] = 1.0
        out[:, 1:] = self.pooled
        out.setflags(write=False)
        return out

    @cached_property
    def is_target(self) -> np.ndarray:
        flags = np.zeros(self.N, dtype=bool)
        flags[self.n:] = True
        flags.setflags(write=False)
        return flags

    def equals(self, other: "Dataset") -> bool:
        return (np.array_equal(self.source_x, other.source_x)
                and np.array_equal(self.target_x, other.target_x))


@dataclass(frozen=True, eq=False)
class Theta:
    """Structural parameters of the double exponential tilting model.

    Component ``t`` has log density ratio ``alpha_t + x @ beta_t`` against
    the source density; ``pi`` is the target share of component 1.
    """

    alpha1: float
    alpha2: float
    beta1: np.ndarray
    beta2: np.ndarray
    pi: float

    def __post_init__(self):
        b1 = _frozen_array(np.atleast_1d(self.beta1), 1)
        b2 = _frozen_array(np.atleast_1d(self.beta2), 1)
        if b1.shape != b2.shape:
            raise DataError(f"beta1 {b1.shape} and beta2 {b2.shape} differ in length")
        object.__setattr__(self, "beta1", b1)
        object.__setattr__(self, "beta2", b2)
        object.__setattr__(self, "alpha1", float(self.alpha1))
        object.__setattr__(self, "alpha2", float(self.alpha2))
        object.__setattr__(self, "pi", float(self.pi))
        if not (0.0 < self.pi < 1.0):
            raise DataError(f"pi must lie in (0, 1), got {self.pi!r}")
        vals = np.concatenate([[self.alpha1, self.alpha2], b1, b2])
        if not np.all(np.isfinite(vals)):
            raise DataError("theta has non-finite entries")

    @property
    def p(self) -> int:
        return self.beta1.shape[0]

    def switched(self) -> "Theta":
        """The label-switched parameter describing the same target mixture."""
        return Theta(self.alpha2, self.alpha1, self.beta2, self.beta1, 1.0 - self.pi)

    def with_pi(self, pi: float) -> "Theta":
        return replace(self, pi=pi)

    def to_vector(self) -> np.ndarray:
        """Flatten as ``(alpha1, alpha2, beta1, beta2, pi)``."""
        return np.concatenate([[self.alpha1, self.alpha2], self.beta1, self.beta2, [self.pi]])

    @classmethod
    def from_vector(cls, v, p: int) -> "Theta":
        v = np.asarray(v, dtype=float)
        if v.shape != (2 * p + 3,):
            raise DataError(f"expected a vector of length {2 * p + 3}, got {v.shape}")
        return cls(v[0], v[1], v[2:2 + p], v[2 + p:2 + 2 * p], v[-1])

    @classmethod
    def null(cls, p: int, pi: float = 0.5) -> "Theta":
        z = np.zeros(p)
        return cls(0.0, 0.0, z, z, pi)

    def allclose(self, other: "Theta", atol=1e-12) -> bool:
        return np.allclose(self.to_vector(), other.to_vector(), rtol=0.0, atol=atol)


class Model(str, enum.Enum):
    DETM = "DETM"
    SETM = "SETM"
    DETM_FIXED_PI = "DETM_FIXED_PI"
    SETM_FIXED_PI = "SETM_FIXED_PI"


class LabelRule(str, enum.Enum):
    PI_LESS_HALF = "pi_less_half"
    KL_RULE = "kl_rule"
    NONE = "none"


@dataclass(frozen=True, eq=False)
class FitResult:
    """Outcome of a maximum empirical likelihood fit.

    ``log_el`` is the log-EL at the returned EM weights and
    ``profile_log_el`` the profile value ``l_N(theta)`` at the solved
    Lagrange multipliers; they differ by ``N log N`` at a fixed point.
    """

    theta: Theta
    lambda1: float
    lambda2: float
    el_weights: np.ndarray
    profile_log_el: float
    log_el: float
    model: Model
    trace: np.ndarray
    converged: bool
    n_iterations: int
    label_rule: LabelRule = LabelRule.NONE
    label_switched: bool = False
    boundary: bool = False
    start_index: int = 0
    n_failed_starts: int = 0
    lagrange_degenerate: bool = False
    start_log_els: tuple = field(default=())

    @property
    def pi(self) -> float:
        return self.theta.pi


# ---------------------------------------------------------------------------
# diagnostics


@dataclass(frozen=True)
class DatasetDiagnostics:
    n: int
    m: int
    p: int
    rank: int
    column_variance: np.ndarray

    @property
    def expected_rank(self) -> int:
        return self.p + 1

    @property
    def full_rank(self) -> bool:
        return self.rank == self.p + 1

    @property
    def ok(self) -> bool:
        return self.full_rank

    def require_full_rank(self):
        if not self.full_rank:
            raise DataError(
                f"pooled design (1, x) has rank {self.rank} < {self.p + 1}; "
                "drop constant or collinear feature columns")


def design_rank(design: np.ndarray, rtol: float = RANK_RTOL) -> int:
    """Numerical rank from the diagonal of a column-pivoted QR factor."""
    r = scipy.linalg.qr(design, mode="r", pivoting=True)[0]
    d = np.abs(np.diag(r))
    if d.size == 0 or d[0] == 0.0:
        return 0
    return int(np.sum(d > rtol * d[0]))


def validate_dataset(ds: Dataset) -> DatasetDiagnostics:
    """Counts, per-column variances and the rank of the pooled ``(1, x)`` design.

    Non-finite entries and empty samples are rejected when the
    :class:`Dataset` is built, so reaching this function implies both hold.
    """
    x = ds.pooled
    if not np.all(np.isfinite(x)):
        raise DataError("dataset contains non-finite entries")
    return DatasetDiagnostics(
        n=ds.n, m=ds.m, p=ds.p,
        rank=design_rank(ds.design),
        column_variance=np.var(x, axis=0),
    )


# ---------------------------------------------------------------------------
# feature maps

_SAFE_FUNCS = {
    "log": np.log, "exp": np.exp, "sqrt": np.sqrt, "abs": np.abs,
    "sin": np.sin, "cos": np.cos, "tanh": np.tanh, "log1p": np.log1p,
}
_BINOPS = {
    ast.Add: np.add, ast.Sub: np.subtract, ast.Mult: np.multiply,
    ast.Div: np.divide, ast.Pow: np.power,
}


def _eval_expr(node, env):
    if isinstance(node, ast.Expression):
        return _eval_expr(node.body, env)
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
        return float(node.value)
    if isinstance(node, ast.Name):
        if node.id not in env:
            raise ConfigError(f"unknown column {node.id!r} in feature expression")
        return env[node.id]
    if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
        return _BINOPS[type(node.op)](_eval_expr(node.left, env), _eval_expr(node.right, env))
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
        v = _eval_expr(node.operand, env)
        return -v if isinstance(node.op, ast.USub) else v
    if (isinstance(node, ast.Call) and isinstance(node.func, ast.Name)
            and node.func.id in _SAFE_FUNCS and len(node.args) == 1 and not node.keywords):
        return _SAFE_FUNCS[node.func.id](_eval_expr(node.args[0], env))
    raise ConfigError(f"unsupported syntax in feature expression: {ast.dump(node)[:60]}")


@dataclass(frozen=True)
class FeatureMap:
    """Known transform ``T(x)`` applied to every row before fitting.

    ``kind`` is ``"identity"``, ``"polynomial"`` (every column expanded to
    its powers ``1..degree``) or ``"user_columns"`` (arithmetic expressions
    over ``x0, x1, ...`` or the dataset's feature names).
    """

    kind: str = "identity"
    degree: Optional[int] = None
    columns: tuple = ()

    def __post_init__(self):
        if self.kind == "identity":
            return
        if self.kind == "polynomial":
            if self.degree is None or int(self.degree) != self.degree or self.degree < 1:
                raise ConfigError(f"polynomial degree must be an integer >= 1, got {self.degree!r}")
            return
        if self.kind == "user_columns":
            if not self.columns:
                raise ConfigError("user_columns feature map needs at least one expression")
            for expr in self.columns:
                try:
                    ast.parse(expr, mode="eval")
                except SyntaxError as exc:
                    raise ConfigError(f"cannot parse feature expression {expr!r}: {exc.msg}") from None
            return
        raise ConfigError(f"unknown feature map kind {self.kind!r}")

    @classmethod
    def identity(cls) -> "FeatureMap":
        return cls("identity")

    @classmethod
    def polynomial(cls, degree: int) -> "FeatureMap":
        return cls("polynomial", degree=degree)

    @classmethod
    def user_columns(cls, exprs: Sequence[str]) -> "FeatureMap":
        return cls("user_columns", columns=tuple(exprs))

    @classmethod
    def parse(cls, text: str) -> "FeatureMap":
        """Parse ``identity``, ``poly:<d>`` or ``cols:<expr>;<expr>;...``."""
        text = text.strip()
        if text in ("", "identity"):
            return cls.identity()
        m = re.fullmatch(r"poly(?:nomial)?:\s*(-?\d+)", text)
        if m:
            return cls.polynomial(int(m.group(1)))
        if text.startswith("cols:"):
            return cls.user_columns([e.strip() for e in text[5:].split(";") if e.strip()])
        raise ConfigError(f"cannot parse feature map {text!r}")

    def to_string(self) -> str:
        if self.kind == "identity":
            return "identity"
        if self.kind == "polynomial":
            return f"poly:{self.degree}"
        return "cols:" + ";".join(self.columns)

    def transform(self, x: np.ndarray, names: Optional[Sequence[str]] = None) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.kind == "identity":
            return x
        if self.kind == "polynomial":
            return np.column_stack([x[:, [j]] ** k for j in range(x.shape[1])
                                    for k in range(1, self.degree + 1)]).reshape(x.shape[0], -1)
        env = {f"x{j}": x[:, j] for j in range(x.shape[1])}
        if names is not None:
            env.update({nm: x[:, j] for j, nm in enumerate(names) if nm.isidentifier()})
        with np.errstate(all="ignore"):
            cols = [np.broadcast_to(_eval_expr(ast.parse(e, mode="eval"), env), (x.shape[0],))
                    for e in self.columns]
        out = np.column_stack(cols).astype(float)
        if not np.all(np.isfinite(out)):
            raise DataError("feature map produced non-finite values")
        return out

    def output_names(self, names: Sequence[str]) -> tuple:
        if self.kind == "identity":
            return tuple(names)
        if self.kind == "polynomial":
            return tuple(nm if k == 1 else f"{nm}^{k}" for nm in names
                         for k in range(1, self.degree + 1))
        return tuple(self.columns)


def apply_feature_map(ds: Dataset, fm: FeatureMap) -> Dataset:
    """Transform both samples with ``fm``; the identity returns ``ds`` itself."""
    if fm.kind == "identity":
        return ds
    names = ds.feature_names or tuple(f"x{j}" for j in range(ds.p))
    src = fm.transform(ds.source_x, names)
    tgt = fm.transform(ds.target_x, names)
    if not (np.all(np.isfinite(src)) and np.all(np.isfinite(tgt))):
        raise DataError("feature map produced non-finite values")
    return Dataset(src, tgt, fm.output_names(names))


@dataclass(frozen=True)
class Standardizer:
    """Column centering and scaling learned on the pooled sample."""

    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, ds: Dataset) -> "Standardizer":
        x = ds.pooled
        sd = x.std(axis=0)
        sd = np.where(sd > 0, sd, 1.0)
        return cls(x.mean(axis=0), sd)

    def transform(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.mean) / self.scale

    def apply(self, ds: Dataset) -> Dataset:
        return Dataset(self.transform(ds.source_x), self.transform(ds.target_x), ds.feature_names)


def logit(p: float) -> float:
    return math.log(p) - math.log1p(-p)
